#pragma once

#include <string>
#include <vector>

#include "adfseg/ops.hpp"
#include "adfseg/rng.hpp"

namespace adfseg::nn {

/// Owns every trainable leaf of a model. Registration order is the canonical
/// parameter order: checkpoints, the optimizer, and named_parameters all walk
/// it, so layers must register in a deterministic sequence.
class ParamStore {
 public:
  Var add(const std::string& name, Tensor init);
  const std::vector<Var>& params() const { return params_; }
  int64_t count() const { return static_cast<int64_t>(params_.size()); }
  int64_t total_scalars() const;
  void zero_grad();

 private:
  std::vector<Var> params_;
};

/// Xavier-normal fill: stddev sqrt(2 / (fan_in + fan_out)).
void init_xavier(Tensor& w, int64_t fan_in, int64_t fan_out, Rng& rng);

struct Linear {
  Var w;  // (in, out)
  Var b;  // (out,) unless bias disabled
  bool has_bias{true};

  Linear() = default;
  Linear(ParamStore& ps, Rng& rng, const std::string& name, int64_t in, int64_t out,
         bool bias = true);
  /// Variant for layers whose output must start at exactly zero.
  static Linear zero_init(ParamStore& ps, const std::string& name, int64_t in, int64_t out,
                          bool bias = true);

  Var operator()(const Var& x) const;
};

struct LayerNorm {
  Var gamma, beta;

  LayerNorm() = default;
  LayerNorm(ParamStore& ps, const std::string& name, int64_t dim);

  Var operator()(const Var& x) const { return layernorm_last(x, gamma, beta); }
};

/// One hidden layer with GELU.
struct Mlp {
  Linear fc1, fc2;

  Mlp() = default;
  Mlp(ParamStore& ps, Rng& rng, const std::string& name, int64_t in, int64_t hidden, int64_t out);
  /// Hidden path contributes zero at init: fc2 starts at zero.
  static Mlp zero_out(ParamStore& ps, Rng& rng, const std::string& name, int64_t in,
                      int64_t hidden, int64_t out);

  Var operator()(const Var& x) const { return fc2(gelu(fc1(x))); }
};

/// Pre-LN transformer block: x + MHSA(LN(x)), then x + MLP(LN(x)).
struct TransformerBlock {
  LayerNorm ln1, ln2;
  Linear qkv;   // D -> 3D
  Linear proj;  // D -> D
  Linear fc1, fc2;
  int64_t heads{1};

  TransformerBlock() = default;
  TransformerBlock(ParamStore& ps, Rng& rng, const std::string& name, int64_t dim, int64_t heads,
                   int64_t mlp_hidden);

  Var operator()(const Var& x) const;
};

/// Multi-head self-attention over (B, N, D) given already-projected qkv.
Var attention(const Var& q, const Var& k, const Var& v, int64_t heads);

struct Conv {
  Var w;  // (cout, cin, k, k)
  Var b;  // (cout,)

  Conv() = default;
  Conv(ParamStore& ps, Rng& rng, const std::string& name, int64_t cin, int64_t cout, int64_t k);

  Var operator()(const Var& x) const { return conv2d(x, w, b); }
};

/// Adam over a fixed parameter list. Moment tensors are exposed so
/// checkpoints can round-trip the exact optimizer state.
class Adam {
 public:
  Adam(std::vector<Var> params, Scalar lr, Scalar beta1 = 0.9, Scalar beta2 = 0.999,
       Scalar eps = 1e-8);

  void step();
  void zero_grad();

  Scalar lr() const { return lr_; }
  void set_lr(Scalar lr) { lr_ = lr; }
  int64_t t() const { return t_; }
  void set_t(int64_t t) { t_ = t; }
  std::vector<Tensor>& m() { return m_; }
  std::vector<Tensor>& v() { return v_; }
  const std::vector<Var>& params() const { return params_; }

 private:
  std::vector<Var> params_;
  std::vector<Tensor> m_, v_;
  Scalar lr_, beta1_, beta2_, eps_;
  int64_t t_{0};
};

}  // namespace adfseg::nn
