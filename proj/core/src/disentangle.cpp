#include "adfseg/disentangle.hpp"

#include "adfseg/errors.hpp"

namespace adfseg {

using nn::Var;

namespace {

constexpr double kNormEps = 1e-8;

// (B,F) -> (B,F) rows scaled by 1/(||row|| + eps)
Var normalize_rows(const Var& x) {
  Var norms = nn::add_scalar(nn::sqrt_(nn::sum_last(nn::mul(x, x))), kNormEps);
  return nn::div_rows(x, norms);
}

}  // namespace

void FDConfig::validate() const {
  if (alpha < 0 || beta < 0 || gamma < 0 || delta < 0) {
    throw ConfigError("disentangle: alpha, beta, gamma, delta must be >= 0");
  }
  if (tau <= 0) throw ConfigError("disentangle: tau must be > 0");
}

Projector::Projector(nn::ParamStore& ps, Rng& rng, const std::string& name, int64_t dim)
    : fc1(ps, rng, name + ".fc1", dim, dim), fc2(nn::Linear::zero_init(ps, name + ".fc2", dim, dim)) {}

Var Projector::operator()(const Var& x) const {
  return nn::add(x, fc2(nn::gelu(fc1(x))));
}

Projectors::Projectors(nn::ParamStore& ps, Rng& rng, const std::string& name, int64_t dim)
    : ws(ps, rng, name + ".ws", dim),
      wp(ps, rng, name + ".wp", dim),
      ns(ps, rng, name + ".ns", dim),
      np(ps, rng, name + ".np", dim) {}

DisentangledBundle project(const Var& F_w, const Var& F_n, const Projectors& p,
                           bool flatten_tokens) {
  if (F_w.value().rank() != 3 || !F_w.value().same_shape(F_n.value())) {
    throw ContractError("project: deep maps must be (B,N,D) with equal shapes");
  }
  DisentangledBundle b;
  b.Z_ws = p.ws(F_w);
  b.Z_wp = p.wp(F_w);
  b.Z_ns = p.ns(F_n);
  b.Z_np = p.np(F_n);
  auto pool = [&](const Var& z) {
    if (flatten_tokens) return nn::reshape(z, {z.dim(0), z.dim(1) * z.dim(2)});
    return nn::mean_axis1(z);
  };
  b.z_ws = pool(b.Z_ws);
  b.z_wp = pool(b.Z_wp);
  b.z_ns = pool(b.Z_ns);
  b.z_np = pool(b.Z_np);
  return b;
}

Var cosine_rows(const Var& a, const Var& b) {
  if (a.value().rank() != 2 || !a.value().same_shape(b.value())) {
    throw ContractError("cosine_rows: inputs must be (B,F) with equal shapes");
  }
  return nn::sum_last(nn::mul(normalize_rows(a), normalize_rows(b)));
}

Var loss_align(const Var& z_ws, const Var& z_ns) {
  Var mean_cos = nn::mean_all(cosine_rows(z_ws, z_ns));
  return nn::mul_scalar(nn::add_scalar(nn::mul_scalar(mean_cos, -1.0), 1.0), 0.5);
}

Var loss_diff(const Var& z_wp, const Var& z_np) {
  Var mean_cos = nn::mean_all(cosine_rows(z_wp, z_np));
  return nn::mul_scalar(nn::add_scalar(mean_cos, 1.0), 0.5);
}

Var loss_orth(const Var& z_ws, const Var& z_wp, const Var& z_ns, const Var& z_np) {
  Var cw = cosine_rows(z_ws, z_wp);
  Var cn = cosine_rows(z_ns, z_np);
  Var sq = nn::add(nn::mul(cw, cw), nn::mul(cn, cn));
  return nn::mul_scalar(nn::mean_all(sq), 0.5);
}

namespace {

// one direction of the contrastive loss: anchor rows against positives and
// the three negative families, all already unit-normalized
Var dacl_directed(const Var& anchor, const Var& pos, const Var& neg_a, const Var& neg_b,
                  double tau) {
  const double inv_tau = 1.0 / tau;
  Var e_pos = nn::exp_(nn::mul_scalar(nn::matmul_nt(anchor, pos), inv_tau));    // (B,B)
  Var e_na = nn::exp_(nn::mul_scalar(nn::matmul_nt(anchor, neg_a), inv_tau));   // (B,B)
  Var e_nb = nn::exp_(nn::mul_scalar(nn::matmul_nt(anchor, neg_b), inv_tau));   // (B,B)
  Var den = nn::sum_last(nn::add(nn::add(e_pos, e_na), e_nb));                  // (B,)
  Var s_pos = nn::take_diag(e_pos);                                             // (B,)
  return nn::mean_all(nn::sub(nn::log_(den), nn::log_(s_pos)));
}

}  // namespace

Var loss_dacl(const DisentangledBundle& b, double tau, bool symmetrize) {
  if (tau <= 0) throw ConfigError("loss_dacl: tau must be > 0");
  Var ws = normalize_rows(b.z_ws);
  Var ns = normalize_rows(b.z_ns);
  Var wp = normalize_rows(b.z_wp);
  Var np = normalize_rows(b.z_np);
  Var loss = dacl_directed(ws, ns, wp, np, tau);
  if (!symmetrize) return loss;
  Var rev = dacl_directed(ns, ws, np, wp, tau);
  return nn::mul_scalar(nn::add(loss, rev), 0.5);
}

FdParts loss_fd(const DisentangledBundle& b, const FDConfig& cfg) {
  cfg.validate();
  FdParts parts;
  parts.align = loss_align(b.z_ws, b.z_ns);
  parts.diff = loss_diff(b.z_wp, b.z_np);
  parts.orth = loss_orth(b.z_ws, b.z_wp, b.z_ns, b.z_np);
  parts.dacl = loss_dacl(b, cfg.tau, cfg.symmetrize_dacl);
  parts.total = nn::add(nn::add(nn::mul_scalar(parts.align, cfg.alpha),
                                nn::mul_scalar(parts.diff, cfg.beta)),
                        nn::add(nn::mul_scalar(parts.orth, cfg.gamma),
                                nn::mul_scalar(parts.dacl, cfg.delta)));
  return parts;
}

}  // namespace adfseg
