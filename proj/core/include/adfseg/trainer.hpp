#pragma once

#include <string>
#include <vector>

#include "adfseg/checkpoint.hpp"
#include "adfseg/config.hpp"
#include "adfseg/data.hpp"
#include "adfseg/model.hpp"

namespace adfseg {

/// True unless ADFSEG_DETERMINISTIC is set to 0/false. Deterministic mode
/// refuses entropy seeding (trainer.seed < 0).
bool deterministic_mode();

/// Resolves a requested trainer seed: nonnegative passes through, negative
/// draws entropy, which deterministic mode rejects with ConfigError.
int64_t resolve_seed(int64_t requested);

/// Model wiring implied by an experiment config (sections, mode, image size).
ModelConfig model_config_of(const ExperimentConfig& cfg);

/// min(alpha_fd_max, (e/E)·alpha_fd_init) for e in [1, E].
double lambda2_schedule(int64_t e, int64_t E, double alpha_fd_max, double alpha_fd_init);

/// (cross-entropy, soft Dice) on two-channel logits against a binary mask.
/// Dice uses sigmoid(fg − bg) foreground probabilities with smoothing 1.0.
std::pair<nn::Var, nn::Var> seg_losses(const nn::Var& logits, const nn::Tensor& mask);

struct LossReport {
  double da{0}, align{0}, diff{0}, orth{0}, dacl{0}, fd{0}, ce{0}, dice{0}, total{0};
  double lambda2{0};
  int64_t epoch{0}, step{0};
};

/// Owns the optimizer and the frozen MMD bandwidth; the model is borrowed.
class Trainer {
 public:
  Trainer(Model& model, const ExperimentConfig& cfg);

  /// Forward, loss composition with the epoch's λ2, backward, one Adam step.
  /// Throws NonFiniteLossError naming the first non-finite term.
  LossReport train_step(const data::Batch& batch, int64_t epoch, int64_t step);

  /// Resolves sigma on first use: config value if fixed, else the median
  /// heuristic on this batch's descriptors. No-op once set.
  void ensure_sigma(const data::Batch& batch);

  double sigma() const { return sigma_; }
  void set_sigma(double s) { sigma_ = s; }
  nn::Adam& optimizer() { return opt_; }

 private:
  Model& model_;
  ExperimentConfig cfg_;
  nn::Adam opt_;
  double sigma_{0};  // 0 = not yet resolved
};

struct FitResult {
  std::string checkpoint_path;  // final checkpoint ("" for dry runs)
  std::string steps_csv, epochs_csv;
  std::vector<LossReport> epoch_means;
};

/// Algorithm: for each epoch, shuffle deterministically (seed and epoch fix
/// the order), run train_step over full batches, log per-step and per-epoch
/// rows, checkpoint on cadence and at the end. dry_run skips data and
/// optimization entirely and only materializes the λ2 schedule log.
FitResult fit(Model& model, const data::DatasetManifest& manifest, const ExperimentConfig& cfg,
              const std::string& out_dir, const std::string& resume_path = "",
              bool dry_run = false);

}  // namespace adfseg
