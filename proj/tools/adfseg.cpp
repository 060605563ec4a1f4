#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "adfseg/checkpoint.hpp"
#include "adfseg/config.hpp"
#include "adfseg/data.hpp"
#include "adfseg/errors.hpp"
#include "adfseg/metrics.hpp"
#include "adfseg/model.hpp"
#include "adfseg/plot.hpp"
#include "adfseg/trainer.hpp"
#include "losscheck_suite.hpp"

namespace fs = std::filesystem;
using adfseg::ExperimentConfig;

namespace {

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw adfseg::IoError("cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return text;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw adfseg::IoError("cannot write " + path);
  out << text;
}

/// Config file (or built-in defaults) with --set overrides applied before
/// parsing, so unknown keys in overrides are rejected the same way.
ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& sets) {
  std::string text = path.empty() ? ExperimentConfig{}.to_json_text() : read_text(path);
  for (const auto& s : sets) text = adfseg::apply_override(text, s);
  ExperimentConfig cfg = ExperimentConfig::from_json_text(text);
  cfg.validate();
  return cfg;
}

void insert_config_hash(const std::string& manifest_path, uint64_t hash) {
  nlohmann::ordered_json m = nlohmann::ordered_json::parse(read_text(manifest_path));
  m["config_hash"] = hash;
  write_text(manifest_path, m.dump(2) + "\n");
}

adfseg::data::DatasetManifest obtain_dataset(const ExperimentConfig& cfg,
                                             const std::string& data_dir) {
  const int64_t size = cfg.data.gen.image_size;
  if (!data_dir.empty()) return adfseg::data::load_directory(data_dir, size, size);
  return adfseg::data::synthesize_dataset(cfg.data.n_pairs, static_cast<uint64_t>(cfg.data.seed),
                                          cfg.data.gen);
}

int run_synth(const ExperimentConfig& cfg, const std::string& out_dir) {
  auto manifest = adfseg::data::synthesize_dataset(
      cfg.data.n_pairs, static_cast<uint64_t>(cfg.data.seed), cfg.data.gen);
  adfseg::data::save_dataset(manifest, out_dir, cfg.data.gen,
                             static_cast<uint64_t>(cfg.data.seed));
  insert_config_hash((fs::path(out_dir) / "manifest.json").string(), cfg.hash());
  write_text((fs::path(out_dir) / "config.json").string(), cfg.to_json_text());
  int64_t train = 0, test = 0, tumors = 0;
  for (const auto& p : manifest.pairs) {
    (p.split == "train" ? train : test) += 1;
    if (p.label == "tumor") tumors += 1;
  }
  std::printf("wrote %lld pairs (%lld train, %lld test, %lld tumor) to %s\n",
              static_cast<long long>(manifest.pairs.size()), static_cast<long long>(train),
              static_cast<long long>(test), static_cast<long long>(tumors), out_dir.c_str());
  std::printf("config hash %016llx\n", static_cast<unsigned long long>(cfg.hash()));
  return 0;
}

int run_train(ExperimentConfig cfg, const std::string& data_dir, const std::string& out_dir,
              const std::string& resume, bool dry_run) {
  cfg.trainer.seed = adfseg::resolve_seed(cfg.trainer.seed);
  adfseg::data::DatasetManifest manifest;
  if (!dry_run) manifest = obtain_dataset(cfg, data_dir);
  adfseg::Model model(adfseg::model_config_of(cfg), static_cast<uint64_t>(cfg.trainer.seed));
  adfseg::FitResult res = adfseg::fit(model, manifest, cfg, out_dir, resume, dry_run);
  if (!res.epoch_means.empty() && !dry_run) {
    std::vector<std::vector<double>> series(5);
    for (const auto& r : res.epoch_means) {
      series[0].push_back(r.total);
      series[1].push_back(r.ce);
      series[2].push_back(r.dice);
      series[3].push_back(r.da);
      series[4].push_back(r.fd);
    }
    adfseg::plot_lines((fs::path(out_dir) / "loss_curves.png").string(), series,
                       {"TOTAL", "CE", "DICE", "DA", "FD"}, "TRAINING LOSS PER EPOCH");
  }
  std::printf("config hash %016llx\n", static_cast<unsigned long long>(cfg.hash()));
  if (!res.epoch_means.empty()) {
    const auto& last = res.epoch_means.back();
    std::printf("epoch %lld  total %.6f  ce %.6f  dice %.6f  da %.6f  fd %.6f  lambda2 %.6f\n",
                static_cast<long long>(last.epoch), last.total, last.ce, last.dice, last.da,
                last.fd, last.lambda2);
  }
  if (!res.checkpoint_path.empty()) std::printf("checkpoint %s\n", res.checkpoint_path.c_str());
  std::printf("logs %s\n", res.epochs_csv.c_str());
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& split,
             const std::string& out_dir, const std::string& config_path,
             const std::vector<std::string>& sets) {
  ExperimentConfig cfg;
  std::unique_ptr<adfseg::Model> model;
  std::unique_ptr<adfseg::Predictor> predictor;
  if (checkpoint == "oracle:gt") {
    cfg = load_config(config_path, sets);
    predictor = std::make_unique<adfseg::GtOracle>();
  } else {
    adfseg::CheckpointMeta meta = adfseg::peek_checkpoint(checkpoint);
    if (meta.config_text.empty()) {
      throw adfseg::IoError("checkpoint " + checkpoint + " carries no embedded config");
    }
    std::string text = meta.config_text;
    for (const auto& s : sets) text = adfseg::apply_override(text, s);
    cfg = ExperimentConfig::from_json_text(text);
    cfg.validate();
    model = std::make_unique<adfseg::Model>(adfseg::model_config_of(cfg), 0);
    std::vector<adfseg::nn::Tensor> m, v;
    for (const auto& p : model->params().params()) {
      m.emplace_back(p.shape());
      v.emplace_back(p.shape());
    }
    adfseg::load_checkpoint(checkpoint, model->params(), m, v);
    predictor = std::make_unique<adfseg::ModelPredictor>(*model);
  }

  auto manifest = obtain_dataset(cfg, data_dir);
  auto view = manifest.split_view(split);
  if (view.empty()) throw adfseg::ContractError("split '" + split + "' is empty");

  fs::create_directories(out_dir);
  adfseg::EvalReport report = adfseg::evaluate(*predictor, view);
  write_text((fs::path(out_dir) / "report.csv").string(), report.to_csv());
  nlohmann::ordered_json wrapped{{"config_hash", cfg.hash()},
                                 {"checkpoint", checkpoint},
                                 {"split", split},
                                 {"report", nlohmann::ordered_json::parse(report.to_json())}};
  write_text((fs::path(out_dir) / "report.json").string(), wrapped.dump(2) + "\n");
  adfseg::plot_bars((fs::path(out_dir) / "metrics.png").string(),
                    {report.mean_iou, report.mean_dice, report.mean_se, report.mean_gmean},
                    {"IOU", "DICE", "SE", "GMEAN"}, "MEAN METRICS: " + split);

  std::printf("%s split, %lld images\n", split.c_str(), static_cast<long long>(report.rows.size()));
  std::printf("iou   %.4f  (%lld defined)\n", report.mean_iou, static_cast<long long>(report.n_iou));
  std::printf("dice  %.4f  (%lld defined)\n", report.mean_dice,
              static_cast<long long>(report.n_dice));
  std::printf("se    %.4f  (%lld defined)\n", report.mean_se, static_cast<long long>(report.n_se));
  std::printf("gmean %.4f  (%lld defined)\n", report.mean_gmean,
              static_cast<long long>(report.n_gmean));

  if (model && model->config().mode == adfseg::Mode::multimodal && cfg.metrics.dump_embeddings) {
    auto summary = adfseg::disentangle_diagnostics(
        *model, view, (fs::path(out_dir) / "embeddings.csv").string());
    write_text((fs::path(out_dir) / "disentangle.json").string(), summary.to_json() + "\n");
    std::printf("cos(shared)        %.4f\n", summary.mean_shared_cos);
    std::printf("|cos(intra)|       %.4f\n", summary.mean_intra_abs_cos);
    std::printf("cos(specific w,n)  %.4f\n", summary.mean_cross_specific_cos);
  }
  std::printf("report %s\n", (fs::path(out_dir) / "report.json").string().c_str());
  return 0;
}

struct AblationRun {
  std::string label;
  ExperimentConfig cfg;
};

std::vector<AblationRun> ablation_grid(const ExperimentConfig& base, const std::string& grid) {
  std::vector<AblationRun> rows;
  if (grid == "table4") {
    const bool flags[5][4] = {{false, false, false, false},
                              {true, false, false, false},
                              {true, true, false, false},
                              {true, true, true, false},
                              {true, true, true, true}};
    const char* labels[5] = {"baseline", "+DA", "+DA+PD", "+DA+PD+DACL", "+DA+PD+DACL+TS"};
    for (int i = 0; i < 5; ++i) {
      AblationRun r{labels[i], base};
      r.cfg.trainer.da = flags[i][0];
      r.cfg.trainer.pd = flags[i][1];
      r.cfg.trainer.dacl = flags[i][2];
      r.cfg.trainer.ts = flags[i][3];
      rows.push_back(std::move(r));
    }
    return rows;
  }
  if (grid == "table5") {
    const double settings[4][4] = {{1.0, 1.0, 1.0, 1.0},
                                   {1.0 / 3, 1.0 / 3, 1.0 / 3, 0.1},
                                   {1.0 / 3, 1.0 / 3, 1.0 / 3, 0.01},
                                   {1.0 / 3, 1.0 / 3, 1.0 / 3, 0.001}};
    const char* labels[4] = {"a1.000-d1.000", "a0.333-d0.100", "a0.333-d0.010", "a0.333-d0.001"};
    for (int i = 0; i < 4; ++i) {
      AblationRun r{labels[i], base};
      r.cfg.disentangle.alpha = settings[i][0];
      r.cfg.disentangle.beta = settings[i][1];
      r.cfg.disentangle.gamma = settings[i][2];
      r.cfg.disentangle.delta = settings[i][3];
      rows.push_back(std::move(r));
    }
    return rows;
  }
  throw adfseg::ConfigError("unknown ablation grid '" + grid + "' (expected table4 or table5)");
}

int run_ablate(const ExperimentConfig& base, const std::string& grid, int64_t seeds,
               const std::string& data_dir, const std::string& out_dir) {
  if (seeds < 1) throw adfseg::ConfigError("ablate: --seeds must be >= 1");
  auto manifest = obtain_dataset(base, data_dir);
  auto test_view = manifest.split_view("test");
  if (test_view.empty()) throw adfseg::ContractError("ablate: test split is empty");
  fs::create_directories(out_dir);

  auto rows = ablation_grid(base, grid);
  std::string csv = "label,seed,iou,dice,se,gmean\n";
  std::vector<double> mean_dice;
  std::printf("%-16s %8s %8s %8s %8s\n", "row", "iou", "dice", "se", "gmean");
  for (size_t i = 0; i < rows.size(); ++i) {
    double sum_iou = 0, sum_dice = 0, sum_se = 0, sum_gmean = 0;
    for (int64_t k = 0; k < seeds; ++k) {
      ExperimentConfig cfg = rows[i].cfg;
      cfg.trainer.seed = adfseg::resolve_seed(cfg.trainer.seed) + k;
      adfseg::Model model(adfseg::model_config_of(cfg), static_cast<uint64_t>(cfg.trainer.seed));
      const fs::path run_dir =
          fs::path(out_dir) / ("row" + std::to_string(i) + "_seed" + std::to_string(k));
      adfseg::fit(model, manifest, cfg, run_dir.string());
      adfseg::ModelPredictor predictor(model);
      adfseg::EvalReport rep = adfseg::evaluate(predictor, test_view);
      char line[160];
      std::snprintf(line, sizeof(line), "%s,%lld,%.6f,%.6f,%.6f,%.6f\n", rows[i].label.c_str(),
                    static_cast<long long>(k), rep.mean_iou, rep.mean_dice, rep.mean_se,
                    rep.mean_gmean);
      csv += line;
      sum_iou += rep.mean_iou;
      sum_dice += rep.mean_dice;
      sum_se += rep.mean_se;
      sum_gmean += rep.mean_gmean;
    }
    const double n = static_cast<double>(seeds);
    char line[160];
    std::snprintf(line, sizeof(line), "%s,mean,%.6f,%.6f,%.6f,%.6f\n", rows[i].label.c_str(),
                  sum_iou / n, sum_dice / n, sum_se / n, sum_gmean / n);
    csv += line;
    mean_dice.push_back(sum_dice / n);
    std::printf("%-16s %8.4f %8.4f %8.4f %8.4f\n", rows[i].label.c_str(), sum_iou / n,
                sum_dice / n, sum_se / n, sum_gmean / n);
  }
  csv += "# config_hash=" + std::to_string(base.hash()) + "\n";
  write_text((fs::path(out_dir) / "ablation.csv").string(), csv);
  std::vector<std::string> labels;
  for (const auto& r : rows) labels.push_back(r.label);
  adfseg::plot_bars((fs::path(out_dir) / "ablation_dice.png").string(), mean_dice, labels,
                    "MEAN TEST DICE PER CONFIG");
  std::printf("table %s\n", (fs::path(out_dir) / "ablation.csv").string().c_str());
  return 0;
}

int run_losscheck() {
  const uint64_t seed = 2024;
  std::printf("== loss oracles ==\n");
  auto oracles = adfseg::checks::loss_oracle_checks(seed);
  adfseg::checks::print_table(oracles);
  std::printf("== gradients (central differences) ==\n");
  auto grads = adfseg::checks::gradient_checks(seed);
  adfseg::checks::print_table(grads);
  std::printf("== lambda2 schedule ==\n");
  auto sched = adfseg::checks::schedule_checks();
  adfseg::checks::print_table(sched);
  std::printf("== training probes ==\n");
  auto probes = adfseg::checks::training_probe_checks(seed);
  adfseg::checks::print_table(probes);

  size_t passed = 0, total = 0;
  for (const auto* group : {&oracles, &grads, &sched, &probes}) {
    for (const auto& r : *group) {
      total += 1;
      passed += r.pass ? 1 : 0;
    }
  }
  std::printf("losscheck: %zu/%zu passed\n", passed, total);
  return passed == total ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"align-disentangle-fusion segmentation toolkit"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir, resume, checkpoint, split = "test";
  std::string grid = "table4";
  std::vector<std::string> sets;
  int64_t seeds = 3;
  bool dry_run = false;

  auto add_config_opts = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config JSON");
    cmd->add_option("--set", sets, "override, e.g. trainer.epochs=10")->take_all();
  };

  CLI::App* synth = app.add_subcommand("synth-data", "write a paired synthetic dataset");
  add_config_opts(synth);
  synth->add_option("--out", out_dir, "output directory")->required();

  CLI::App* train = app.add_subcommand("train", "train a model");
  add_config_opts(train);
  train->add_option("--data", data_dir, "dataset root (synthesizes in-memory when absent)");
  train->add_option("--out", out_dir, "run directory")->required();
  train->add_option("--resume", resume, "checkpoint to resume from");
  train->add_flag("--dry-run", dry_run, "materialize only the lambda2 schedule log");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint (or oracle:gt)");
  add_config_opts(eval);
  eval->add_option("--checkpoint", checkpoint, "checkpoint path or oracle:gt")->required();
  eval->add_option("--data", data_dir, "dataset root (synthesizes in-memory when absent)");
  eval->add_option("--split", split, "dataset split (default test)");
  eval->add_option("--out", out_dir, "report directory")->required();

  CLI::App* ablate = app.add_subcommand("ablate", "run a configuration lattice");
  add_config_opts(ablate);
  ablate->add_option("--grid", grid, "table4 (switches) or table5 (loss weights)");
  ablate->add_option("--seeds", seeds, "seeds per row (default 3)");
  ablate->add_option("--data", data_dir, "dataset root (synthesizes in-memory when absent)");
  ablate->add_option("--out", out_dir, "output directory")->required();

  app.add_subcommand("losscheck", "self-check all loss oracles and gradients");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("synth-data")) return run_synth(load_config(config_path, sets), out_dir);
    if (app.got_subcommand("train")) {
      return run_train(load_config(config_path, sets), data_dir, out_dir, resume, dry_run);
    }
    if (app.got_subcommand("eval")) {
      return run_eval(checkpoint, data_dir, split, out_dir, config_path, sets);
    }
    if (app.got_subcommand("ablate")) {
      return run_ablate(load_config(config_path, sets), grid, seeds, data_dir, out_dir);
    }
    if (app.got_subcommand("losscheck")) return run_losscheck();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
