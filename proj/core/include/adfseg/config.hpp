#pragma once

#include <string>

#include "adfseg/alignment.hpp"
#include "adfseg/data.hpp"
#include "adfseg/disentangle.hpp"
#include "adfseg/encoder.hpp"
#include "adfseg/fusion.hpp"

namespace adfseg {

struct DataConfig {
  int64_t n_pairs = 16;
  int64_t seed = 7;
  data::GeneratorConfig gen;
};

struct TrainerConfig {
  int64_t epochs = 150;
  double lr = 1e-3;
  int64_t batch = 24;
  int64_t seed = 0;  // negative requests entropy seeding (non-deterministic mode only)
  double lambda_ce = 0.5;    // λ3
  double lambda_dice = 0.5;  // λ4
  double alpha_fd_init = 1.0;
  double alpha_fd_max = 1.0;
  int64_t checkpoint_every = 50;  // epochs between checkpoints; final always written
  std::string mode = "multimodal";
  // ablation switches; each off forces its loss contribution to exactly 0
  bool da = true;    // distribution alignment (MMD)
  bool pd = true;    // preliminary disentanglement (align/diff/orth)
  bool dacl = true;  // contrastive term
  bool ts = true;    // progressive λ2 ramp; off pins λ2 = alpha_fd_max

  void validate() const;
};

struct MetricsConfig {
  bool dump_embeddings = true;
};

struct ExperimentConfig {
  DataConfig data;
  EncoderConfig encoder;
  MMDConfig alignment;  // sigma <= 0 encodes "auto"
  FDConfig disentangle;
  FusionConfig fusion;
  TrainerConfig trainer;
  MetricsConfig metrics;

  static ExperimentConfig from_json_text(const std::string& text);
  static ExperimentConfig from_file(const std::string& path);

  /// Canonical form: sorted keys, every field explicit. Hash and file output
  /// both derive from this.
  std::string to_json_text() const;
  uint64_t hash() const;

  void validate() const;
};

/// Applies "section.key=value" to raw JSON text (value parsed as JSON when
/// possible, else taken as a string). Used by --set before parsing.
std::string apply_override(const std::string& json_text, const std::string& spec);

}  // namespace adfseg
