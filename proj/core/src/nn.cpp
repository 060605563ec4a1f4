#include "adfseg/nn.hpp"

#include <cmath>

#include "adfseg/errors.hpp"

namespace adfseg::nn {

Var ParamStore::add(const std::string& name, Tensor init) {
  for (const auto& p : params_) {
    if (p.node()->name == name) throw ContractError("duplicate parameter name: " + name);
  }
  params_.push_back(leaf(std::move(init), name));
  return params_.back();
}

int64_t ParamStore::total_scalars() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void init_xavier(Tensor& w, int64_t fan_in, int64_t fan_out, Rng& rng) {
  const Scalar std = std::sqrt(2.0 / static_cast<Scalar>(fan_in + fan_out));
  rng.fill_normal(w, 0.0, std);
}

Linear::Linear(ParamStore& ps, Rng& rng, const std::string& name, int64_t in, int64_t out,
               bool bias)
    : has_bias(bias) {
  Tensor wt({in, out});
  init_xavier(wt, in, out, rng);
  w = ps.add(name + ".w", std::move(wt));
  if (bias) b = ps.add(name + ".b", Tensor::zeros({out}));
}

Linear Linear::zero_init(ParamStore& ps, const std::string& name, int64_t in, int64_t out,
                         bool bias) {
  Linear l;
  l.has_bias = bias;
  l.w = ps.add(name + ".w", Tensor::zeros({in, out}));
  if (bias) l.b = ps.add(name + ".b", Tensor::zeros({out}));
  return l;
}

Var Linear::operator()(const Var& x) const {
  return has_bias ? affine(x, w, b) : affine(x, w);
}

LayerNorm::LayerNorm(ParamStore& ps, const std::string& name, int64_t dim) {
  gamma = ps.add(name + ".gamma", Tensor::full({dim}, 1.0));
  beta = ps.add(name + ".beta", Tensor::zeros({dim}));
}

Mlp::Mlp(ParamStore& ps, Rng& rng, const std::string& name, int64_t in, int64_t hidden,
         int64_t out)
    : fc1(ps, rng, name + ".fc1", in, hidden), fc2(ps, rng, name + ".fc2", hidden, out) {}

Mlp Mlp::zero_out(ParamStore& ps, Rng& rng, const std::string& name, int64_t in, int64_t hidden,
                  int64_t out) {
  Mlp m;
  m.fc1 = Linear(ps, rng, name + ".fc1", in, hidden);
  m.fc2 = Linear::zero_init(ps, name + ".fc2", hidden, out);
  return m;
}

Var attention(const Var& q, const Var& k, const Var& v, int64_t heads) {
  const int64_t b = q.dim(0), n = q.dim(1), d = q.dim(2);
  if (d % heads != 0) throw ContractError("attention: dim not divisible by heads");
  const int64_t dh = d / heads;
  auto split = [&](const Var& t) {
    // (B,N,D) -> (B*heads, N, dh)
    Var r = reshape(t, {b, n, heads, dh});
    r = permute(r, {0, 2, 1, 3});
    return reshape(r, {b * heads, n, dh});
  };
  Var qh = split(q), kh = split(k), vh = split(v);
  Var att = mul_scalar(bmm_nt(qh, kh), 1.0 / std::sqrt(static_cast<Scalar>(dh)));
  att = softmax_last(att);
  Var out = bmm(att, vh);  // (B*heads, N, dh)
  out = reshape(out, {b, heads, n, dh});
  out = permute(out, {0, 2, 1, 3});
  return reshape(out, {b, n, d});
}

TransformerBlock::TransformerBlock(ParamStore& ps, Rng& rng, const std::string& name, int64_t dim,
                                   int64_t n_heads, int64_t mlp_hidden)
    : ln1(ps, name + ".ln1", dim),
      ln2(ps, name + ".ln2", dim),
      qkv(ps, rng, name + ".qkv", dim, 3 * dim),
      proj(ps, rng, name + ".proj", dim, dim),
      fc1(ps, rng, name + ".fc1", dim, mlp_hidden),
      fc2(ps, rng, name + ".fc2", mlp_hidden, dim),
      heads(n_heads) {}

Var TransformerBlock::operator()(const Var& x) const {
  const int64_t d = x.dim(2);
  Var h = ln1(x);
  Var qkv_out = qkv(h);
  Var q = slice_last(qkv_out, 0, d);
  Var k = slice_last(qkv_out, d, 2 * d);
  Var v = slice_last(qkv_out, 2 * d, 3 * d);
  Var y = add(x, proj(attention(q, k, v, heads)));
  Var h2 = ln2(y);
  return add(y, fc2(gelu(fc1(h2))));
}

Conv::Conv(ParamStore& ps, Rng& rng, const std::string& name, int64_t cin, int64_t cout,
           int64_t k) {
  Tensor wt({cout, cin, k, k});
  init_xavier(wt, cin * k * k, cout * k * k, rng);
  w = ps.add(name + ".w", std::move(wt));
  b = ps.add(name + ".b", Tensor::zeros({cout}));
}

Adam::Adam(std::vector<Var> params, Scalar lr, Scalar beta1, Scalar beta2, Scalar eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.push_back(Tensor::zeros(p.shape()));
    v_.push_back(Tensor::zeros(p.shape()));
  }
}

void Adam::step() {
  ++t_;
  const Scalar bc1 = 1.0 - std::pow(beta1_, static_cast<Scalar>(t_));
  const Scalar bc2 = 1.0 - std::pow(beta2_, static_cast<Scalar>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Node& node = *params_[i].node();
    if (!node.has_grad()) continue;  // parameter untouched by this loss
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    Tensor& w = node.value;
    const Tensor& g = node.grad;
    for (int64_t j = 0; j < w.numel(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      const Scalar mhat = m[j] / bc1;
      const Scalar vhat = v[j] / bc2;
      w[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace adfseg::nn
