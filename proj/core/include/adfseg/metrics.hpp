#pragma once

#include <optional>
#include <string>
#include <vector>

#include "adfseg/data.hpp"
#include "adfseg/model.hpp"

namespace adfseg {

struct ConfusionCounts {
  int64_t tp{0}, fp{0}, fn{0}, tn{0};
};

/// Exact pixel counts; both masks must be binary and same shape.
ConfusionCounts confusion(const nn::Tensor& pred, const nn::Tensor& gt);

/// One metric value per image; absent when the denominator is undefined
/// (empty ground truth with a nonempty prediction leaves se and gmean out of
/// the dataset means; an all-empty image scores 1 everywhere).
struct MetricSet {
  std::optional<double> iou, dice, se, gmean;
};

MetricSet metrics_from_counts(const ConfusionCounts& c);

struct EvalRow {
  std::string id;
  ConfusionCounts counts;
  MetricSet metrics;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double mean_iou{0}, mean_dice{0}, mean_se{0}, mean_gmean{0};
  int64_t n_iou{0}, n_dice{0}, n_se{0}, n_gmean{0};  // defined-count per metric

  void finalize();  // recompute means from rows
  std::string to_json() const;
  std::string to_csv() const;
};

/// Anything that maps a sample pair to a binary H×W mask.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual nn::Tensor predict_mask(const data::SamplePair& pair) = 0;
};

class ModelPredictor : public Predictor {
 public:
  explicit ModelPredictor(Model& model) : model_(model) {}
  nn::Tensor predict_mask(const data::SamplePair& pair) override;

 private:
  Model& model_;
};

/// Echoes the ground truth; the degenerate upper bound used to validate the
/// evaluation plumbing ("oracle:gt" on the command line).
class GtOracle : public Predictor {
 public:
  nn::Tensor predict_mask(const data::SamplePair& pair) override;
};

EvalReport evaluate(Predictor& predictor, const std::vector<const data::SamplePair*>& pairs);

struct DisentangleSummary {
  double mean_shared_cos{0};          // mean_b cos(z_ws, z_ns)
  double mean_intra_abs_cos{0};       // mean of |cos(z_ws,z_wp)| and |cos(z_ns,z_np)|
  double mean_cross_specific_cos{0};  // mean_b cos(z_wp, z_np)
  int64_t n_samples{0};

  std::string to_json() const;
};

/// Dumps pooled {z_ws, z_wp, z_ns, z_np} rows (4 per sample) to CSV with
/// columns id, feature_role, dim_0..dim_{D-1}, and returns cosine summaries.
DisentangleSummary disentangle_diagnostics(Model& model,
                                           const std::vector<const data::SamplePair*>& pairs,
                                           const std::string& csv_path);

}  // namespace adfseg
