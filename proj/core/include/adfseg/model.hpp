#pragma once

#include <memory>
#include <string>

#include "adfseg/alignment.hpp"
#include "adfseg/disentangle.hpp"
#include "adfseg/encoder.hpp"
#include "adfseg/fusion.hpp"

namespace adfseg {

enum class Mode { multimodal, single_w, single_n };

Mode mode_from_string(const std::string& s);
std::string mode_to_string(Mode m);

struct ModelConfig {
  EncoderConfig encoder;
  FDConfig fd;
  FusionConfig fusion;
  int64_t image_size = 224;
  Mode mode = Mode::multimodal;

  void validate() const;
};

/// The full pipeline: two-branch encoder, multi-scale global descriptors,
/// shared/specific projectors, fusion, decoder. Single-modality modes keep
/// one branch and decode its deep features directly (the ablation baseline).
class Model {
 public:
  Model(const ModelConfig& cfg, uint64_t seed);

  struct Forward {
    nn::Var logits;  // (B, 2, H, W)
    // multimodal mode only; undefined Vars otherwise
    GlobalDescriptor desc_w, desc_n;
    DisentangledBundle bundle;
  };

  /// x_w, x_n: (B, 1, H, W). Single-modality modes read only their own input.
  Forward forward(const nn::Tensor& x_w, const nn::Tensor& x_n);

  /// Argmax foreground masks, (B, H, W) in {0,1}; no gradient tracking.
  nn::Tensor predict(const nn::Tensor& x_w, const nn::Tensor& x_n);

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

 private:
  ModelConfig cfg_;
  nn::ParamStore params_;
  std::unique_ptr<TwoBranchEncoder> encoder_;
  nn::Linear scorer_w_, scorer_n_;  // token scorers, L·D -> 1
  Projectors projectors_;
  nn::Linear f_sh_;  // 2D -> D shared aggregation
  FusionMaps fusion_maps_;
  Decoder decoder_;
};

}  // namespace adfseg
