#pragma once

#include "adfseg/nn.hpp"

namespace adfseg {

struct FDConfig {
  double alpha = 1.0 / 3;
  double beta = 1.0 / 3;
  double gamma = 1.0 / 3;
  double delta = 0.01;
  double tau = 0.07;
  bool symmetrize_dacl = false;  // average the w- and n-anchored losses
  bool flatten_tokens = false;   // pool by flattening (B,N,D)->(B,N·D) instead of token mean

  void validate() const;  // weights >= 0, tau > 0
};

/// Residual per-token projector: x + fc2(gelu(fc1(x))) with fc2 zero-filled,
/// so a freshly built projector is exactly the identity.
struct Projector {
  nn::Linear fc1, fc2;

  Projector() = default;
  Projector(nn::ParamStore& ps, Rng& rng, const std::string& name, int64_t dim);

  nn::Var operator()(const nn::Var& x) const;
};

struct Projectors {
  Projector ws, wp, ns, np;

  Projectors() = default;
  Projectors(nn::ParamStore& ps, Rng& rng, const std::string& name, int64_t dim);
};

struct DisentangledBundle {
  nn::Var Z_ws, Z_wp, Z_ns, Z_np;  // (B, N, D) token maps
  nn::Var z_ws, z_wp, z_ns, z_np;  // (B, D) pooled, or (B, N·D) when flattened
};

/// Four independent projections of the deep maps plus their pooled vectors.
DisentangledBundle project(const nn::Var& F_w, const nn::Var& F_n, const Projectors& p,
                           bool flatten_tokens = false);

/// Rows scaled to unit L2 norm; epsilon 1e-8 added to each norm.
nn::Var cosine_rows(const nn::Var& a, const nn::Var& b);  // (B,F),(B,F) -> (B,) of cosines

nn::Var loss_align(const nn::Var& z_ws, const nn::Var& z_ns);  // ½(1 − mean cos)
nn::Var loss_diff(const nn::Var& z_wp, const nn::Var& z_np);   // ½(1 + mean cos)
nn::Var loss_orth(const nn::Var& z_ws, const nn::Var& z_wp, const nn::Var& z_ns,
                  const nn::Var& z_np);  // (1/2B) Σ cos² + cos²
/// InfoNCE anchored on z_ws: positives are the matching z_ns, the denominator
/// runs over all z_ns, z_wp, z_np rows.
nn::Var loss_dacl(const DisentangledBundle& b, double tau, bool symmetrize = false);

struct FdParts {
  nn::Var align, diff, orth, dacl;
  nn::Var total;  // α·align + β·diff + γ·orth + δ·dacl
};

FdParts loss_fd(const DisentangledBundle& b, const FDConfig& cfg);

}  // namespace adfseg
