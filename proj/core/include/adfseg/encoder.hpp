#pragma once

#include <vector>

#include "adfseg/nn.hpp"

namespace adfseg {

struct EncoderConfig {
  int64_t in_channels = 1;
  int64_t patch_size = 16;
  int64_t dim = 32;          // D
  int64_t depth = 4;         // transformer blocks per branch
  int64_t shallow_taps = 3;  // L, taken from the first L blocks
  int64_t heads = 4;
  int64_t mlp_ratio = 2;
  bool share_weights = false;  // one set of branch weights for both modalities

  void validate() const;  // L < depth, dim % heads == 0, patch power of two
};

struct EncoderOutput {
  std::vector<nn::Var> shallow_w, shallow_n;  // L maps, each (B, N, D)
  nn::Var deep_w, deep_n;                     // (B, N, D)
};

/// Two-branch patch-token encoder. Token count N = (image_size / patch)^2 is
/// fixed at construction; every stage keeps (B, N, D).
class TwoBranchEncoder {
 public:
  TwoBranchEncoder(const EncoderConfig& cfg, int64_t image_size, nn::ParamStore& ps, Rng& rng);

  EncoderOutput encode(const nn::Var& x_w, const nn::Var& x_n) const;
  /// One branch only, for single-modality baselines. modality: 0 = w, 1 = n.
  std::pair<std::vector<nn::Var>, nn::Var> encode_single(const nn::Var& x, int64_t modality) const;

  int64_t tokens() const { return n_tokens_; }
  const EncoderConfig& config() const { return cfg_; }

 private:
  struct Branch {
    nn::Linear patch_embed;
    nn::Var pos;  // (N, D)
    std::vector<nn::TransformerBlock> blocks;
  };
  Branch make_branch(const std::string& name, nn::ParamStore& ps, Rng& rng) const;
  std::pair<std::vector<nn::Var>, nn::Var> run(const Branch& br, const nn::Var& x) const;

  EncoderConfig cfg_;
  int64_t image_size_{0}, n_tokens_{0};
  Branch w_, n_;
  bool shared_{false};
};

}  // namespace adfseg
