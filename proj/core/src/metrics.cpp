#include "adfseg/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "adfseg/errors.hpp"

namespace adfseg {

using nn::Tensor;

ConfusionCounts confusion(const Tensor& pred, const Tensor& gt) {
  if (!pred.same_shape(gt)) throw ContractError("confusion: shape mismatch");
  ConfusionCounts c;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    const double p = pred[i], g = gt[i];
    if ((p != 0.0 && p != 1.0) || (g != 0.0 && g != 1.0)) {
      throw ContractError("confusion: masks must be binary");
    }
    if (p == 1.0 && g == 1.0) ++c.tp;
    else if (p == 1.0) ++c.fp;
    else if (g == 1.0) ++c.fn;
    else ++c.tn;
  }
  return c;
}

MetricSet metrics_from_counts(const ConfusionCounts& c) {
  MetricSet m;
  const int64_t gt_pos = c.tp + c.fn;
  const int64_t pred_pos = c.tp + c.fp;
  if (gt_pos == 0 && pred_pos == 0) {
    m.iou = m.dice = m.se = m.gmean = 1.0;  // nothing to find, nothing claimed
    return m;
  }
  m.iou = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp + c.fn);
  m.dice = 2.0 * static_cast<double>(c.tp) / static_cast<double>(2 * c.tp + c.fp + c.fn);
  if (gt_pos > 0) m.se = static_cast<double>(c.tp) / static_cast<double>(gt_pos);
  std::optional<double> specificity;
  if (c.tn + c.fp > 0) specificity = static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
  if (m.se && specificity) m.gmean = std::sqrt(*m.se * *specificity);
  return m;
}

void EvalReport::finalize() {
  mean_iou = mean_dice = mean_se = mean_gmean = 0;
  n_iou = n_dice = n_se = n_gmean = 0;
  for (const auto& r : rows) {
    if (r.metrics.iou) { mean_iou += *r.metrics.iou; ++n_iou; }
    if (r.metrics.dice) { mean_dice += *r.metrics.dice; ++n_dice; }
    if (r.metrics.se) { mean_se += *r.metrics.se; ++n_se; }
    if (r.metrics.gmean) { mean_gmean += *r.metrics.gmean; ++n_gmean; }
  }
  if (n_iou) mean_iou /= static_cast<double>(n_iou);
  if (n_dice) mean_dice /= static_cast<double>(n_dice);
  if (n_se) mean_se /= static_cast<double>(n_se);
  if (n_gmean) mean_gmean /= static_cast<double>(n_gmean);
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["mean"] = {{"iou", mean_iou}, {"dice", mean_dice}, {"se", mean_se}, {"gmean", mean_gmean}};
  j["defined_counts"] = {{"iou", n_iou}, {"dice", n_dice}, {"se", n_se}, {"gmean", n_gmean}};
  j["n_images"] = rows.size();
  nlohmann::ordered_json per = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json row{{"id", r.id},
                               {"tp", r.counts.tp},
                               {"fp", r.counts.fp},
                               {"fn", r.counts.fn},
                               {"tn", r.counts.tn}};
    auto put = [&](const char* k, const std::optional<double>& v) {
      if (v) row[k] = *v; else row[k] = nullptr;
    };
    put("iou", r.metrics.iou);
    put("dice", r.metrics.dice);
    put("se", r.metrics.se);
    put("gmean", r.metrics.gmean);
    per.push_back(std::move(row));
  }
  j["per_image"] = std::move(per);
  return j.dump(2);
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out << "id,tp,fp,fn,tn,iou,dice,se,gmean\n";
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string();
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", *v);
    return std::string(buf);
  };
  for (const auto& r : rows) {
    out << r.id << ',' << r.counts.tp << ',' << r.counts.fp << ',' << r.counts.fn << ','
        << r.counts.tn << ',' << cell(r.metrics.iou) << ',' << cell(r.metrics.dice) << ','
        << cell(r.metrics.se) << ',' << cell(r.metrics.gmean) << '\n';
  }
  return out.str();
}

namespace {

Tensor image_to_batch(const Image& img) {
  Tensor t({1, 1, img.h, img.w});
  for (int64_t i = 0; i < img.numel(); ++i) t[i] = img.pix[static_cast<size_t>(i)];
  return t;
}

}  // namespace

Tensor ModelPredictor::predict_mask(const data::SamplePair& pair) {
  Tensor xw = image_to_batch(pair.x_w);
  Tensor xn = image_to_batch(pair.x_n);
  Tensor mask = model_.predict(xw, xn);  // (1, H, W)
  return Tensor({mask.dim(1), mask.dim(2)}, mask.vec());
}

Tensor GtOracle::predict_mask(const data::SamplePair& pair) {
  Tensor t({pair.mask.h, pair.mask.w});
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = pair.mask.pix[static_cast<size_t>(i)];
  return t;
}

EvalReport evaluate(Predictor& predictor, const std::vector<const data::SamplePair*>& pairs) {
  EvalReport report;
  for (const auto* p : pairs) {
    Tensor pred = predictor.predict_mask(*p);
    Tensor gt({p->mask.h, p->mask.w});
    for (int64_t i = 0; i < gt.numel(); ++i) gt[i] = p->mask.pix[static_cast<size_t>(i)];
    EvalRow row;
    row.id = p->id;
    row.counts = confusion(pred, gt);
    row.metrics = metrics_from_counts(row.counts);
    report.rows.push_back(std::move(row));
  }
  report.finalize();
  return report;
}

std::string DisentangleSummary::to_json() const {
  nlohmann::ordered_json j{{"mean_shared_cos", mean_shared_cos},
                           {"mean_intra_abs_cos", mean_intra_abs_cos},
                           {"mean_cross_specific_cos", mean_cross_specific_cos},
                           {"n_samples", n_samples}};
  return j.dump(2);
}

DisentangleSummary disentangle_diagnostics(Model& model,
                                           const std::vector<const data::SamplePair*>& pairs,
                                           const std::string& csv_path) {
  if (model.config().mode != Mode::multimodal) {
    throw ContractError("disentangle_diagnostics: needs a multimodal model");
  }
  std::ofstream csv(csv_path);
  if (!csv) throw IoError("cannot write " + csv_path);
  DisentangleSummary s;
  bool header = false;
  auto cosine = [](const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
      dot += a[i] * b[i];
      na += a[i] * a[i];
      nb += b[i] * b[i];
    }
    return dot / ((std::sqrt(na) + 1e-8) * (std::sqrt(nb) + 1e-8));
  };
  for (const auto* p : pairs) {
    Tensor xw = image_to_batch(p->x_w);
    Tensor xn = image_to_batch(p->x_n);
    Model::Forward f = model.forward(xw, xn);
    auto row_of = [&](const nn::Var& z) {
      std::vector<double> v(static_cast<size_t>(z.dim(1)));
      for (int64_t i = 0; i < z.dim(1); ++i) v[static_cast<size_t>(i)] = z.value()[i];
      return v;
    };
    const std::vector<double> zws = row_of(f.bundle.z_ws);
    const std::vector<double> zwp = row_of(f.bundle.z_wp);
    const std::vector<double> zns = row_of(f.bundle.z_ns);
    const std::vector<double> znp = row_of(f.bundle.z_np);
    if (!header) {
      csv << "id,feature_role";
      for (size_t i = 0; i < zws.size(); ++i) csv << ",dim_" << i;
      csv << "\n";
      header = true;
    }
    auto dump = [&](const char* role, const std::vector<double>& v) {
      csv << p->id << ',' << role;
      char buf[32];
      for (double x : v) {
        std::snprintf(buf, sizeof(buf), "%.17g", x);
        csv << ',' << buf;
      }
      csv << "\n";
    };
    dump("z_ws", zws);
    dump("z_wp", zwp);
    dump("z_ns", zns);
    dump("z_np", znp);
    s.mean_shared_cos += cosine(zws, zns);
    s.mean_intra_abs_cos += 0.5 * (std::abs(cosine(zws, zwp)) + std::abs(cosine(zns, znp)));
    s.mean_cross_specific_cos += cosine(zwp, znp);
    ++s.n_samples;
  }
  if (s.n_samples > 0) {
    s.mean_shared_cos /= static_cast<double>(s.n_samples);
    s.mean_intra_abs_cos /= static_cast<double>(s.n_samples);
    s.mean_cross_specific_cos /= static_cast<double>(s.n_samples);
  }
  return s;
}

}  // namespace adfseg
