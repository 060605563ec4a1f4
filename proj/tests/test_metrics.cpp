#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "adfseg/data.hpp"
#include "adfseg/errors.hpp"
#include "adfseg/metrics.hpp"
#include "adfseg/trainer.hpp"
#include "testutil.hpp"

using namespace adfseg;
using nn::Tensor;

TEST_CASE("confusion counts pixels exactly") {
  Tensor pred({2, 2}, {1, 0, 1, 0});
  Tensor gt({2, 2}, {1, 1, 0, 0});
  auto c = confusion(pred, gt);
  CHECK(c.tp == 1);
  CHECK(c.fn == 1);
  CHECK(c.fp == 1);
  CHECK(c.tn == 1);

  CHECK_THROWS_AS(confusion(pred, Tensor({4}, {1, 1, 0, 0})), ContractError);
  CHECK_THROWS_AS(confusion(Tensor({1}, {0.5}), Tensor({1}, {1.0})), ContractError);
}

TEST_CASE("metric values from a hand-worked confusion") {
  ConfusionCounts c{6, 2, 3, 9};  // tp fp fn tn
  auto m = metrics_from_counts(c);
  CHECK(*m.iou == doctest::Approx(6.0 / 11.0).epsilon(1e-15));
  CHECK(*m.dice == doctest::Approx(12.0 / 17.0).epsilon(1e-15));
  CHECK(*m.se == doctest::Approx(6.0 / 9.0).epsilon(1e-15));
  CHECK(*m.gmean == doctest::Approx(std::sqrt((6.0 / 9.0) * (9.0 / 11.0))).epsilon(1e-15));
}

TEST_CASE("dice equals 2 iou over 1 plus iou") {
  Rng rng(41);
  for (int rep = 0; rep < 100; ++rep) {
    ConfusionCounts c;
    c.tp = rng.below(50);
    c.fp = rng.below(50);
    c.fn = rng.below(50);
    c.tn = rng.below(50);
    auto m = metrics_from_counts(c);
    if (!m.iou || !m.dice) continue;
    CHECK(*m.dice == doctest::Approx(2.0 * *m.iou / (1.0 + *m.iou)).epsilon(1e-12));
  }
}

TEST_CASE("edge conventions for empty masks") {
  // nothing to find, nothing claimed: every metric scores 1
  auto all_empty = metrics_from_counts({0, 0, 0, 25});
  CHECK(*all_empty.iou == 1.0);
  CHECK(*all_empty.dice == 1.0);
  CHECK(*all_empty.se == 1.0);
  CHECK(*all_empty.gmean == 1.0);

  // empty ground truth with claims: overlap is zero, sensitivity undefined
  auto false_alarm = metrics_from_counts({0, 5, 0, 20});
  CHECK(*false_alarm.iou == 0.0);
  CHECK(*false_alarm.dice == 0.0);
  CHECK(!false_alarm.se.has_value());
  CHECK(!false_alarm.gmean.has_value());

  // lesion missed entirely: sensitivity zero, gmean zero
  auto missed = metrics_from_counts({0, 0, 5, 20});
  CHECK(*missed.iou == 0.0);
  CHECK(*missed.se == 0.0);
  CHECK(*missed.gmean == 0.0);

  // ground truth covers the frame: specificity undefined, gmean absent
  auto full_frame = metrics_from_counts({9, 0, 1, 0});
  CHECK(full_frame.se.has_value());
  CHECK(!full_frame.gmean.has_value());
}

TEST_CASE("metric suite matches the brute-force pixel oracle on random masks") {
  Rng rng(42);
  for (int rep = 0; rep < 100; ++rep) {
    const int64_t h = 3 + rng.below(14), w = 3 + rng.below(14);
    Tensor pred({h, w}), gt({h, w});
    for (int64_t i = 0; i < pred.numel(); ++i) {
      pred[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
      gt[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
    }

    int64_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (int64_t i = 0; i < pred.numel(); ++i) {
      if (pred[i] == 1.0 && gt[i] == 1.0) ++tp;
      else if (pred[i] == 1.0) ++fp;
      else if (gt[i] == 1.0) ++fn;
      else ++tn;
    }

    auto c = confusion(pred, gt);
    REQUIRE(c.tp == tp);
    REQUIRE(c.fp == fp);
    REQUIRE(c.fn == fn);
    REQUIRE(c.tn == tn);

    auto m = metrics_from_counts(c);
    if (tp + fn == 0 && tp + fp == 0) {
      CHECK(*m.iou == 1.0);
      continue;
    }
    CHECK(*m.iou == static_cast<double>(tp) / static_cast<double>(tp + fp + fn));
    CHECK(*m.dice == 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn));
    if (tp + fn > 0) {
      CHECK(*m.se == static_cast<double>(tp) / static_cast<double>(tp + fn));
      if (tn + fp > 0) {
        const double sp = static_cast<double>(tn) / static_cast<double>(tn + fp);
        CHECK(*m.gmean == std::sqrt(*m.se * sp));
      }
    }
  }
}

TEST_CASE("finalize averages only defined entries") {
  EvalReport r;
  EvalRow a;
  a.metrics.iou = 0.5;
  a.metrics.dice = 0.6;
  a.metrics.se = 1.0;
  a.metrics.gmean = 0.9;
  EvalRow b;
  b.metrics.iou = 0.7;
  b.metrics.dice = 0.8;  // se and gmean undefined for this image
  r.rows = {a, b};
  r.finalize();
  CHECK(r.mean_iou == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(r.mean_dice == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(r.mean_se == 1.0);
  CHECK(r.mean_gmean == 0.9);
  CHECK(r.n_iou == 2);
  CHECK(r.n_se == 1);

  // report serializations carry the absent cells
  const std::string csv = r.to_csv();
  CHECK(csv.rfind("id,tp,fp,fn,tn,iou,dice,se,gmean\n", 0) == 0);
  auto j = nlohmann::json::parse(r.to_json());
  CHECK(j["per_image"].size() == 2);
  CHECK(j["per_image"][1]["se"].is_null());
  CHECK(j["defined_counts"]["se"] == 1);
}

TEST_CASE("gt oracle scores perfectly on synthetic data") {
  auto cfg = testutil::tiny_config(16, 4, 8, 6, 1.0);
  auto manifest = data::synthesize_dataset(cfg.data.n_pairs, 4, cfg.data.gen);
  GtOracle oracle;
  auto report = evaluate(oracle, manifest.split_view("train"));
  REQUIRE(report.rows.size() == 6);
  CHECK(report.mean_iou == 1.0);
  CHECK(report.mean_dice == 1.0);
  CHECK(report.mean_se == 1.0);
  CHECK(report.mean_gmean == 1.0);
}

TEST_CASE("model predictor emits binary masks of the image shape") {
  auto cfg = testutil::tiny_config();
  Model model(model_config_of(cfg), 3);
  ModelPredictor pred(model);
  auto manifest = data::synthesize_dataset(2, 5, cfg.data.gen);
  Tensor mask = pred.predict_mask(*manifest.split_view("train")[0]);
  REQUIRE(mask.shape() == nn::Shape{16, 16});
  for (int64_t i = 0; i < mask.numel(); ++i) CHECK((mask[i] == 0.0 || mask[i] == 1.0));

  auto report = evaluate(pred, manifest.split_view("train"));
  CHECK(report.rows.size() == 2);
  CHECK(report.n_iou == 2);
}

TEST_CASE("disentangle diagnostics dump four rows per sample") {
  auto cfg = testutil::tiny_config();
  Model model(model_config_of(cfg), 6);
  auto manifest = data::synthesize_dataset(3, 8, cfg.data.gen);
  const auto dir = testutil::fresh_tmp_dir("diag");
  const std::string csv_path = dir + "/embeddings.csv";

  auto summary = disentangle_diagnostics(model, manifest.split_view("train"), csv_path);
  CHECK(summary.n_samples == 3);
  CHECK(std::abs(summary.mean_shared_cos) <= 1.0 + 1e-9);
  CHECK(summary.mean_intra_abs_cos >= 0.0);
  auto j = nlohmann::json::parse(summary.to_json());
  CHECK(j.contains("mean_shared_cos"));

  std::ifstream in(csv_path);
  REQUIRE(in.good());
  std::string line;
  std::getline(in, line);
  CHECK(line.rfind("id,feature_role", 0) == 0);
  int rows = 0;
  while (std::getline(in, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == 12);  // z_ws, z_wp, z_ns, z_np per sample
}
