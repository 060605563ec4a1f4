#pragma once

#include <vector>

#include "adfseg/nn.hpp"

namespace adfseg {

struct FusionConfig {
  int64_t base_channels = 32;  // decoder stage-0 width, halved per stage
  bool aggregate_bias = true;  // bias of the shared 2D->D linear map

  void validate() const;
};

/// Concat shared maps on the feature dim, then one per-token linear map back
/// to D: (B,N,D)+(B,N,D) -> (B,N,D).
nn::Var aggregate_shared(const nn::Var& Z_ws, const nn::Var& Z_ns, const nn::Linear& f_sh);

struct FusionMaps {
  nn::Mlp f_sh, f_w, f_n;  // per-token one-hidden-layer maps D->D

  FusionMaps() = default;
  FusionMaps(nn::ParamStore& ps, Rng& rng, const std::string& name, int64_t dim);
};

/// Z_fused = f_sh(Z_sh) + f_w(Z_wp) + f_n(Z_np).
nn::Var fuse(const nn::Var& Z_sh, const nn::Var& Z_wp, const nn::Var& Z_np,
             const FusionMaps& maps);

/// Token grid to pixel logits: reshape (B,N,D) to (B,D,√N,√N), then per stage
/// [nearest ×2 upsample, 3×3 conv, GELU], finally a 1×1 conv to 2 channels.
/// Stage count is log2(patch), so output is (B, 2, H, W).
class Decoder {
 public:
  Decoder() = default;
  Decoder(nn::ParamStore& ps, Rng& rng, const std::string& name, int64_t dim, int64_t patch,
          int64_t base_channels);

  nn::Var operator()(const nn::Var& Z_fused) const;

 private:
  std::vector<nn::Conv> stages_;
  nn::Conv head_;
  int64_t dim_{0};
};

}  // namespace adfseg
