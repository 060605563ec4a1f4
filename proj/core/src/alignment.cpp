#include "adfseg/alignment.hpp"

#include <algorithm>
#include <cmath>

#include "adfseg/errors.hpp"

namespace adfseg {

using nn::Node;
using nn::Scalar;
using nn::Tensor;
using nn::Var;

void MMDConfig::validate() const {
  if (lambda_da < 0) throw ConfigError("alignment: lambda_da must be >= 0");
}

Var concat_multiscale(const std::vector<Var>& stage_maps) {
  if (stage_maps.empty()) throw ContractError("concat_multiscale: no stage maps");
  const int64_t b = stage_maps[0].dim(0), n = stage_maps[0].dim(1);
  for (const auto& m : stage_maps) {
    if (m.value().rank() != 3 || m.dim(0) != b || m.dim(1) != n) {
      throw ContractError("concat_multiscale: stage maps must share (B, N), got " +
                          nn::shape_str(m.shape()));
    }
  }
  if (stage_maps.size() == 1) return stage_maps[0];
  return nn::concat_last(stage_maps);
}

Var global_average(const Var& f) {
  return nn::mean_axis1(f);
}

GlobalDescriptor global_descriptor(const Var& f, const nn::Linear& scorer) {
  const int64_t b = f.dim(0), n = f.dim(1), ld = f.dim(2);
  GlobalDescriptor d;
  d.avg = global_average(f);
  Var scores = nn::reshape(scorer(f), {b, n});  // (B,N,1) -> (B,N)
  d.attention = nn::softmax_last(scores);
  Var att3 = nn::reshape(d.attention, {b, 1, n});
  d.weighted = nn::reshape(nn::bmm(att3, f), {b, ld});
  d.global = nn::add(d.avg, d.weighted);
  return d;
}

Var mmd_loss(const Var& g_w, const Var& g_n, double sigma) {
  if (sigma <= 0) throw ConfigError("mmd_loss: sigma must be > 0");
  if (g_w.value().rank() != 2 || !g_w.value().same_shape(g_n.value())) {
    throw ContractError("mmd_loss: inputs must be (B, F) with equal shapes");
  }
  const int64_t b = g_w.dim(0), f = g_w.dim(1);
  if (b < 2) throw ContractError("mmd_loss: batch must be >= 2");

  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  auto kernel = [&](const Scalar* x, const Scalar* y) {
    double d2 = 0;
    for (int64_t k = 0; k < f; ++k) {
      const double d = x[k] - y[k];
      d2 += d * d;
    }
    return std::exp(-d2 * inv2s2);
  };

  const Scalar* w = g_w.value().data();
  const Scalar* n = g_n.value().data();
  double kww = 0, knn = 0, kwn = 0;
  for (int64_t i = 0; i < b; ++i) {
    for (int64_t j = 0; j < b; ++j) {
      kww += kernel(w + i * f, w + j * f);
      knn += kernel(n + i * f, n + j * f);
      kwn += kernel(w + i * f, n + j * f);
    }
  }
  const double inv_b2 = 1.0 / static_cast<double>(b * b);
  const double value = inv_b2 * (kww + knn - 2.0 * kwn);

  const double invs2 = 1.0 / (sigma * sigma);
  return nn::make_op(Tensor::scalar(value), {g_w, g_n}, [b, f, invs2, inv2s2](Node& node) {
    Node* pw = node.parents[0].get();
    Node* pn = node.parents[1].get();
    if (!pw->needs_grad && !pn->needs_grad) return;
    const Scalar* w = pw->value.data();
    const Scalar* n = pn->value.data();
    const double gy = node.grad[0] / static_cast<double>(b * b);
    Tensor* gw = pw->needs_grad ? &pw->ensure_grad() : nullptr;
    Tensor* gn = pn->needs_grad ? &pn->ensure_grad() : nullptr;
    auto kern = [&](const Scalar* x, const Scalar* y) {
      double d2 = 0;
      for (int64_t k = 0; k < f; ++k) {
        const double d = x[k] - y[k];
        d2 += d * d;
      }
      return std::exp(-d2 * inv2s2);
    };
    // d/dx exp(-||x-y||²/2σ²) = -k(x,y)·(x-y)/σ²; the w-w and n-n sums hit
    // each row twice (as i and as j), the cross sum once per side.
    for (int64_t i = 0; i < b; ++i) {
      for (int64_t j = 0; j < b; ++j) {
        if (gw) {
          const double kw = kern(w + i * f, w + j * f);
          const double kc = kern(w + i * f, n + j * f);
          for (int64_t k = 0; k < f; ++k) {
            const double dw = w[i * f + k] - w[j * f + k];
            const double dc = w[i * f + k] - n[j * f + k];
            (*gw)[i * f + k] += gy * invs2 * (-2.0 * kw * dw + 2.0 * kc * dc);
          }
        }
        if (gn) {
          const double kn = kern(n + i * f, n + j * f);
          const double kc = kern(w + j * f, n + i * f);
          for (int64_t k = 0; k < f; ++k) {
            const double dn = n[i * f + k] - n[j * f + k];
            const double dc = w[j * f + k] - n[i * f + k];
            (*gn)[i * f + k] += gy * invs2 * (-2.0 * kn * dn - 2.0 * kc * dc);
          }
        }
      }
    }
  });
}

double median_sigma(const Tensor& g_w, const Tensor& g_n) {
  if (g_w.rank() != 2 || !g_w.same_shape(g_n)) {
    throw ContractError("median_sigma: inputs must be (B, F) with equal shapes");
  }
  const int64_t b = g_w.dim(0), f = g_w.dim(1);
  std::vector<const Scalar*> rows;
  for (int64_t i = 0; i < b; ++i) rows.push_back(g_w.data() + i * f);
  for (int64_t i = 0; i < b; ++i) rows.push_back(g_n.data() + i * f);
  std::vector<double> dists;
  for (size_t i = 0; i < rows.size(); ++i) {
    for (size_t j = i + 1; j < rows.size(); ++j) {
      double d2 = 0;
      for (int64_t k = 0; k < f; ++k) {
        const double d = rows[i][k] - rows[j][k];
        d2 += d * d;
      }
      dists.push_back(std::sqrt(d2));
    }
  }
  std::sort(dists.begin(), dists.end());
  const double med = dists[dists.size() / 2];
  return med > 0 ? med : 1.0;
}

}  // namespace adfseg
