#include "adfseg/fusion.hpp"

#include <cmath>

#include "adfseg/errors.hpp"

namespace adfseg {

using nn::Var;

void FusionConfig::validate() const {
  if (base_channels < 2) throw ConfigError("fusion: base_channels must be >= 2");
}

Var aggregate_shared(const Var& Z_ws, const Var& Z_ns, const nn::Linear& f_sh) {
  if (Z_ws.value().rank() != 3 || !Z_ws.value().same_shape(Z_ns.value())) {
    throw ContractError("aggregate_shared: shared maps must be (B,N,D) with equal shapes");
  }
  return f_sh(nn::concat_last({Z_ws, Z_ns}));
}

FusionMaps::FusionMaps(nn::ParamStore& ps, Rng& rng, const std::string& name, int64_t dim)
    : f_sh(ps, rng, name + ".sh", dim, dim, dim),
      f_w(ps, rng, name + ".w", dim, dim, dim),
      f_n(ps, rng, name + ".n", dim, dim, dim) {}

Var fuse(const Var& Z_sh, const Var& Z_wp, const Var& Z_np, const FusionMaps& maps) {
  if (!Z_sh.value().same_shape(Z_wp.value()) || !Z_sh.value().same_shape(Z_np.value())) {
    throw ContractError("fuse: branch shapes differ");
  }
  return nn::add(nn::add(maps.f_sh(Z_sh), maps.f_w(Z_wp)), maps.f_n(Z_np));
}

Decoder::Decoder(nn::ParamStore& ps, Rng& rng, const std::string& name, int64_t dim, int64_t patch,
                 int64_t base_channels)
    : dim_(dim) {
  if (patch < 1 || (patch & (patch - 1)) != 0) {
    throw ConfigError("decoder: patch must be a power of two");
  }
  int64_t n_stages = 0;
  for (int64_t p = patch; p > 1; p >>= 1) ++n_stages;
  int64_t in_ch = dim;
  for (int64_t s = 0; s < n_stages; ++s) {
    const int64_t out_ch = std::max<int64_t>(4, base_channels >> s);
    stages_.emplace_back(ps, rng, name + ".up" + std::to_string(s), in_ch, out_ch, 3);
    in_ch = out_ch;
  }
  head_ = nn::Conv(ps, rng, name + ".head", in_ch, 2, 1);
}

Var Decoder::operator()(const Var& Z_fused) const {
  if (Z_fused.value().rank() != 3 || Z_fused.dim(2) != dim_) {
    throw ContractError("decoder: expected (B,N," + std::to_string(dim_) + "), got " +
                        nn::shape_str(Z_fused.shape()));
  }
  const int64_t b = Z_fused.dim(0), n = Z_fused.dim(1);
  const int64_t grid = static_cast<int64_t>(std::llround(std::sqrt(static_cast<double>(n))));
  if (grid * grid != n) throw ConfigError("decoder: token count must be a perfect square");
  Var x = nn::permute(nn::reshape(Z_fused, {b, grid, grid, dim_}), {0, 3, 1, 2});
  for (const auto& conv : stages_) {
    x = nn::gelu(conv(nn::upsample2x(x)));
  }
  return head_(x);
}

}  // namespace adfseg
