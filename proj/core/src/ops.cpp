#include "adfseg/ops.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numbers>

#include "adfseg/errors.hpp"

namespace adfseg::nn {

namespace {

using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using CMatMap = Eigen::Map<const Mat>;

MatMap map2d(Tensor& t, int64_t rows, int64_t cols) { return MatMap(t.data(), rows, cols); }
CMatMap cmap2d(const Tensor& t, int64_t rows, int64_t cols) {
  return CMatMap(t.data(), rows, cols);
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value())) {
    throw ContractError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  }
}

Node* parent(Node& n, size_t i) { return n.parents[i].get(); }

}  // namespace

// ---- elementwise -----------------------------------------------------------

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out = a.value();
  out.add_(b.value());
  return make_op(std::move(out), {a, b}, [](Node& n) {
    for (int i = 0; i < 2; ++i) {
      Node* p = parent(n, static_cast<size_t>(i));
      if (p->needs_grad) p->ensure_grad().add_(n.grad);
    }
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& n) {
    if (Node* p = parent(n, 0); p->needs_grad) p->ensure_grad().add_(n.grad);
    if (Node* p = parent(n, 1); p->needs_grad) {
      Tensor& g = p->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] -= n.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& n) {
    const Tensor& av = parent(n, 0)->value;
    const Tensor& bv = parent(n, 1)->value;
    if (Node* p = parent(n, 0); p->needs_grad) {
      Tensor& g = p->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * bv[i];
    }
    if (Node* p = parent(n, 1); p->needs_grad) {
      Tensor& g = p->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * av[i];
    }
  });
}

Var div(const Var& a, const Var& b) {
  check_same_shape(a, b, "div");
  Tensor out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] /= b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& n) {
    const Tensor& av = parent(n, 0)->value;
    const Tensor& bv = parent(n, 1)->value;
    if (Node* p = parent(n, 0); p->needs_grad) {
      Tensor& g = p->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] / bv[i];
    }
    if (Node* p = parent(n, 1); p->needs_grad) {
      Tensor& g = p->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] -= n.grad[i] * av[i] / (bv[i] * bv[i]);
    }
  });
}

Var add_scalar(const Var& a, Scalar c) {
  Tensor out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += c;
  return make_op(std::move(out), {a}, [](Node& n) {
    if (Node* p = parent(n, 0); p->needs_grad) p->ensure_grad().add_(n.grad);
  });
}

Var mul_scalar(const Var& a, Scalar c) {
  Tensor out = a.value();
  out.scale_(c);
  return make_op(std::move(out), {a}, [c](Node& n) {
    if (Node* p = parent(n, 0); p->needs_grad) {
      Tensor& g = p->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += c * n.grad[i];
    }
  });
}

namespace {

template <typename F, typename DF>
Var unary_op(const Var& a, F f, DF df) {
  Tensor out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = f(out[i]);
  return make_op(std::move(out), {a}, [df](Node& n) {
    if (Node* p = parent(n, 0); p->needs_grad) {
      Tensor& g = p->ensure_grad();
      const Tensor& x = p->value;
      const Tensor& y = n.value;
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * df(x[i], y[i]);
    }
  });
}

}  // namespace

Var exp_(const Var& a) {
  return unary_op(a, [](Scalar x) { return std::exp(x); }, [](Scalar, Scalar y) { return y; });
}

Var log_(const Var& a) {
  return unary_op(a, [](Scalar x) { return std::log(x); }, [](Scalar x, Scalar) { return 1.0 / x; });
}

Var sqrt_(const Var& a) {
  return unary_op(a, [](Scalar x) { return std::sqrt(x); },
                  [](Scalar, Scalar y) { return 0.5 / y; });
}

Var sigmoid(const Var& a) {
  auto f = [](Scalar x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); };
  return unary_op(a, f, [](Scalar, Scalar y) { return y * (1.0 - y); });
}

Var gelu(const Var& a) {
  constexpr Scalar inv_sqrt2 = 0.70710678118654752440;
  constexpr Scalar inv_sqrt2pi = 0.39894228040143267794;
  auto f = [](Scalar x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); };
  auto df = [](Scalar x, Scalar) {
    return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
  };
  return unary_op(a, f, df);
}

Var relu(const Var& a) {
  return unary_op(a, [](Scalar x) { return x > 0 ? x : 0.0; },
                  [](Scalar x, Scalar) { return x > 0 ? 1.0 : 0.0; });
}

// ---- reductions ------------------------------------------------------------

Var sum_all(const Var& a) {
  Scalar s = 0;
  for (int64_t i = 0; i < a.numel(); ++i) s += a.value()[i];
  return make_op(Tensor::scalar(s), {a}, [](Node& n) {
    if (Node* p = parent(n, 0); p->needs_grad) {
      Tensor& g = p->ensure_grad();
      const Scalar gy = n.grad[0];
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += gy;
    }
  });
}

Var mean_all(const Var& a) {
  if (a.numel() == 0) throw ContractError("mean_all: empty tensor");
  return mul_scalar(sum_all(a), 1.0 / static_cast<Scalar>(a.numel()));
}

Var sum_last(const Var& a) {
  if (a.value().rank() < 1) throw ContractError("sum_last: rank must be >= 1");
  const int64_t k = a.shape().back();
  const int64_t rows = a.numel() / std::max<int64_t>(k, 1);
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  Tensor out(out_shape);
  for (int64_t r = 0; r < rows; ++r) {
    Scalar s = 0;
    for (int64_t i = 0; i < k; ++i) s += a.value()[r * k + i];
    out[r] = s;
  }
  return make_op(std::move(out), {a}, [k, rows](Node& n) {
    if (Node* p = parent(n, 0); p->needs_grad) {
      Tensor& g = p->ensure_grad();
      for (int64_t r = 0; r < rows; ++r) {
        const Scalar gy = n.grad[r];
        for (int64_t i = 0; i < k; ++i) g[r * k + i] += gy;
      }
    }
  });
}

Var mean_axis1(const Var& a) {
  if (a.value().rank() != 3) throw ContractError("mean_axis1: expected rank-3 (B,N,D)");
  const int64_t b = a.dim(0), nt = a.dim(1), d = a.dim(2);
  if (nt < 1) throw ContractError("mean_axis1: empty token axis");
  Tensor out({b, d});
  for (int64_t i = 0; i < b; ++i)
    for (int64_t n = 0; n < nt; ++n)
      for (int64_t j = 0; j < d; ++j) out.at(i, j) += a.value().at(i, n, j);
  out.scale_(1.0 / static_cast<Scalar>(nt));
  return make_op(std::move(out), {a}, [b, nt, d](Node& n) {
    if (Node* p = parent(n, 0); p->needs_grad) {
      Tensor& g = p->ensure_grad();
      const Scalar inv = 1.0 / static_cast<Scalar>(nt);
      for (int64_t i = 0; i < b; ++i)
        for (int64_t t = 0; t < nt; ++t)
          for (int64_t j = 0; j < d; ++j) g.at(i, t, j) += inv * n.grad.at(i, j);
    }
  });
}

Var softmax_last(const Var& a) {
  if (a.value().rank() < 1) throw ContractError("softmax_last: rank must be >= 1");
  const int64_t k = a.shape().back();
  const int64_t rows = a.numel() / k;
  Tensor out = a.value();
  for (int64_t r = 0; r < rows; ++r) {
    Scalar* row = out.data() + r * k;
    Scalar m = row[0];
    for (int64_t i = 1; i < k; ++i) m = std::max(m, row[i]);
    Scalar s = 0;
    for (int64_t i = 0; i < k; ++i) {
      row[i] = std::exp(row[i] - m);
      s += row[i];
    }
    for (int64_t i = 0; i < k; ++i) row[i] /= s;
  }
  return make_op(std::move(out), {a}, [k, rows](Node& n) {
    if (Node* p = parent(n, 0); p->needs_grad) {
      Tensor& g = p->ensure_grad();
      for (int64_t r = 0; r < rows; ++r) {
        const Scalar* y = n.value.data() + r * k;
        const Scalar* gy = n.grad.data() + r * k;
        Scalar dot = 0;
        for (int64_t i = 0; i < k; ++i) dot += gy[i] * y[i];
        for (int64_t i = 0; i < k; ++i) g[r * k + i] += y[i] * (gy[i] - dot);
      }
    }
  });
}

Var take_diag(const Var& a) {
  if (a.value().rank() != 2 || a.dim(0) != a.dim(1)) {
    throw ContractError("take_diag: expected square matrix, got " + shape_str(a.shape()));
  }
  const int64_t b = a.dim(0);
  Tensor out({b});
  for (int64_t i = 0; i < b; ++i) out[i] = a.value().at(i, i);
  return make_op(std::move(out), {a}, [b](Node& n) {
    if (Node* p = parent(n, 0); p->needs_grad) {
      Tensor& g = p->ensure_grad();
      for (int64_t i = 0; i < b; ++i) g[i * b + i] += n.grad[i];
    }
  });
}

// ---- broadcast helpers -----------------------------------------------------

namespace {

void check_rows_arg(const Var& x, const Var& v, const char* op) {
  if (v.value().rank() != 1 || x.value().rank() < 1 || x.dim(0) != v.dim(0)) {
    throw ContractError(std::string(op) + ": expected x (R,...) and v (R,), got " +
                        shape_str(x.shape()) + " and " + shape_str(v.shape()));
  }
}

}  // namespace

Var mul_rows(const Var& x, const Var& v) {
  check_rows_arg(x, v, "mul_rows");
  const int64_t r = x.dim(0);
  const int64_t cols = x.numel() / r;
  Tensor out = x.value();
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < cols; ++j) out[i * cols + j] *= v.value()[i];
  return make_op(std::move(out), {x, v}, [r, cols](Node& n) {
    const Tensor& xv = parent(n, 0)->value;
    const Tensor& vv = parent(n, 1)->value;
    if (Node* p = parent(n, 0); p->needs_grad) {
      Tensor& g = p->ensure_grad();
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < cols; ++j) g[i * cols + j] += n.grad[i * cols + j] * vv[i];
    }
    if (Node* p = parent(n, 1); p->needs_grad) {
      Tensor& g = p->ensure_grad();
      for (int64_t i = 0; i < r; ++i) {
        Scalar s = 0;
        for (int64_t j = 0; j < cols; ++j) s += n.grad[i * cols + j] * xv[i * cols + j];
        g[i] += s;
      }
    }
  });
}

Var div_rows(const Var& x, const Var& v) {
  check_rows_arg(x, v, "div_rows");
  const int64_t r = x.dim(0);
  const int64_t cols = x.numel() / r;
  Tensor out = x.value();
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < cols; ++j) out[i * cols + j] /= v.value()[i];
  return make_op(std::move(out), {x, v}, [r, cols](Node& n) {
    const Tensor& xv = parent(n, 0)->value;
    const Tensor& vv = parent(n, 1)->value;
    if (Node* p = parent(n, 0); p->needs_grad) {
      Tensor& g = p->ensure_grad();
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < cols; ++j) g[i * cols + j] += n.grad[i * cols + j] / vv[i];
    }
    if (Node* p = parent(n, 1); p->needs_grad) {
      Tensor& g = p->ensure_grad();
      for (int64_t i = 0; i < r; ++i) {
        Scalar s = 0;
        for (int64_t j = 0; j < cols; ++j) s += n.grad[i * cols + j] * xv[i * cols + j];
        g[i] -= s / (vv[i] * vv[i]);
      }
    }
  });
}

Var add_bcast0(const Var& x, const Var& p) {
  const int64_t b = x.value().rank() >= 1 ? x.dim(0) : 0;
  const int64_t inner = p.numel();
  if (b == 0 || x.numel() != b * inner) {
    throw ContractError("add_bcast0: incompatible shapes " + shape_str(x.shape()) + " and " +
                        shape_str(p.shape()));
  }
  Tensor out = x.value();
  for (int64_t i = 0; i < b; ++i)
    for (int64_t j = 0; j < inner; ++j) out[i * inner + j] += p.value()[j];
  return make_op(std::move(out), {x, p}, [b, inner](Node& n) {
    if (Node* q = parent(n, 0); q->needs_grad) q->ensure_grad().add_(n.grad);
    if (Node* q = parent(n, 1); q->needs_grad) {
      Tensor& g = q->ensure_grad();
      for (int64_t i = 0; i < b; ++i)
        for (int64_t j = 0; j < inner; ++j) g[j] += n.grad[i * inner + j];
    }
  });
}

// ---- shape -----------------------------------------------------------------

Var reshape(const Var& a, Shape new_shape) {
  if (shape_numel(new_shape) != a.numel()) {
    throw ContractError("reshape: numel mismatch " + shape_str(a.shape()) + " -> " +
                        shape_str(new_shape));
  }
  Tensor out(std::move(new_shape), a.value().vec());
  return make_op(std::move(out), {a}, [](Node& n) {
    if (Node* p = parent(n, 0); p->needs_grad) {
      Tensor& g = p->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    }
  });
}

namespace {

std::vector<int64_t> row_strides(const Shape& shape) {
  std::vector<int64_t> s(shape.size());
  int64_t acc = 1;
  for (int64_t i = static_cast<int64_t>(shape.size()) - 1; i >= 0; --i) {
    s[static_cast<size_t>(i)] = acc;
    acc *= shape[static_cast<size_t>(i)];
  }
  return s;
}

// out flat index -> in flat index for a permutation of axes
void permute_copy(const Tensor& in, Tensor& out, const std::vector<int64_t>& perm, bool accumulate,
                  const Tensor* grad_in = nullptr, Tensor* grad_out = nullptr) {
  const Shape& in_shape = in.shape();
  const auto in_str = row_strides(in_shape);
  const Shape& out_shape = out.shape();
  const auto out_str = row_strides(out_shape);
  const int64_t rank = static_cast<int64_t>(in_shape.size());
  const int64_t total = in.numel();
  for (int64_t flat_out = 0; flat_out < total; ++flat_out) {
    // decode flat_out into out coords, map to in coords via perm
    int64_t rem = flat_out;
    int64_t flat_in = 0;
    for (int64_t d = 0; d < rank; ++d) {
      const int64_t coord = rem / out_str[static_cast<size_t>(d)];
      rem -= coord * out_str[static_cast<size_t>(d)];
      flat_in += coord * in_str[static_cast<size_t>(perm[static_cast<size_t>(d)])];
    }
    if (!accumulate) {
      out[flat_out] = in[flat_in];
    } else {
      (*grad_out)[flat_in] += (*grad_in)[flat_out];
    }
  }
}

}  // namespace

Var permute(const Var& a, const std::vector<int64_t>& perm) {
  const int64_t rank = a.value().rank();
  if (static_cast<int64_t>(perm.size()) != rank) {
    throw ContractError("permute: perm size must equal rank");
  }
  Shape out_shape(static_cast<size_t>(rank));
  for (int64_t d = 0; d < rank; ++d) out_shape[static_cast<size_t>(d)] = a.dim(perm[static_cast<size_t>(d)]);
  Tensor out(out_shape);
  permute_copy(a.value(), out, perm, false);
  return make_op(std::move(out), {a}, [perm](Node& n) {
    if (Node* p = parent(n, 0); p->needs_grad) {
      Tensor& g = p->ensure_grad();
      permute_copy(p->value, n.value, perm, true, &n.grad, &g);
    }
  });
}

Var concat_last(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_last: no inputs");
  const Shape& s0 = parts[0].shape();
  Shape lead(s0.begin(), s0.end() - 1);
  int64_t total_k = 0;
  std::vector<int64_t> ks;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (Shape(s.begin(), s.end() - 1) != lead) {
      throw ContractError("concat_last: leading dims mismatch " + shape_str(s0) + " vs " +
                          shape_str(s));
    }
    ks.push_back(s.back());
    total_k += s.back();
  }
  Shape out_shape = lead;
  out_shape.push_back(total_k);
  Tensor out(out_shape);
  const int64_t rows = shape_numel(lead);
  int64_t off = 0;
  for (size_t pi = 0; pi < parts.size(); ++pi) {
    const Tensor& v = parts[pi].value();
    const int64_t k = ks[pi];
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t i = 0; i < k; ++i) out[r * total_k + off + i] = v[r * k + i];
    off += k;
  }
  return make_op(std::move(out), parts, [rows, ks, total_k](Node& n) {
    int64_t off2 = 0;
    for (size_t pi = 0; pi < n.parents.size(); ++pi) {
      const int64_t k = ks[pi];
      Node* p = n.parents[pi].get();
      if (p->needs_grad) {
        Tensor& g = p->ensure_grad();
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t i = 0; i < k; ++i) g[r * k + i] += n.grad[r * total_k + off2 + i];
      }
      off2 += k;
    }
  });
}

Var slice_last(const Var& a, int64_t from, int64_t to) {
  const int64_t k = a.shape().back();
  if (from < 0 || to > k || from >= to) throw ContractError("slice_last: bad range");
  const int64_t rows = a.numel() / k;
  const int64_t kk = to - from;
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(kk);
  Tensor out(out_shape);
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t i = 0; i < kk; ++i) out[r * kk + i] = a.value()[r * k + from + i];
  return make_op(std::move(out), {a}, [rows, k, kk, from](Node& n) {
    if (Node* p = parent(n, 0); p->needs_grad) {
      Tensor& g = p->ensure_grad();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t i = 0; i < kk; ++i) g[r * k + from + i] += n.grad[r * kk + i];
    }
  });
}

Var select_dim1(const Var& a, int64_t c) {
  if (a.value().rank() < 2) throw ContractError("select_dim1: rank must be >= 2");
  const int64_t b = a.dim(0), ch = a.dim(1);
  if (c < 0 || c >= ch) throw ContractError("select_dim1: index out of range");
  const int64_t inner = a.numel() / (b * ch);
  Shape out_shape;
  out_shape.push_back(b);
  for (int64_t d = 2; d < a.value().rank(); ++d) out_shape.push_back(a.dim(d));
  Tensor out(out_shape);
  for (int64_t i = 0; i < b; ++i)
    for (int64_t j = 0; j < inner; ++j) out[i * inner + j] = a.value()[(i * ch + c) * inner + j];
  return make_op(std::move(out), {a}, [b, ch, inner, c](Node& n) {
    if (Node* p = parent(n, 0); p->needs_grad) {
      Tensor& g = p->ensure_grad();
      for (int64_t i = 0; i < b; ++i)
        for (int64_t j = 0; j < inner; ++j) g[(i * ch + c) * inner + j] += n.grad[i * inner + j];
    }
  });
}

// ---- matrix products -------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  if (a.value().rank() != 2 || b.value().rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ContractError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                        shape_str(b.shape()));
  }
  const int64_t m = a.dim(0), k = a.dim(1), n2 = b.dim(1);
  Tensor out({m, n2});
  map2d(out, m, n2).noalias() = cmap2d(a.value(), m, k) * cmap2d(b.value(), k, n2);
  return make_op(std::move(out), {a, b}, [m, k, n2](Node& n) {
    CMatMap gy(n.grad.data(), m, n2);
    if (Node* p = parent(n, 0); p->needs_grad) {
      MatMap ga(p->ensure_grad().data(), m, k);
      ga.noalias() += gy * cmap2d(parent(n, 1)->value, k, n2).transpose();
    }
    if (Node* p = parent(n, 1); p->needs_grad) {
      MatMap gb(p->ensure_grad().data(), k, n2);
      gb.noalias() += cmap2d(parent(n, 0)->value, m, k).transpose() * gy;
    }
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a.value().rank() != 2 || b.value().rank() != 2 || a.dim(1) != b.dim(1)) {
    throw ContractError("matmul_nt: incompatible shapes " + shape_str(a.shape()) + " x " +
                        shape_str(b.shape()) + "^T");
  }
  const int64_t m = a.dim(0), k = a.dim(1), n2 = b.dim(0);
  Tensor out({m, n2});
  map2d(out, m, n2).noalias() = cmap2d(a.value(), m, k) * cmap2d(b.value(), n2, k).transpose();
  return make_op(std::move(out), {a, b}, [m, k, n2](Node& n) {
    CMatMap gy(n.grad.data(), m, n2);
    if (Node* p = parent(n, 0); p->needs_grad) {
      MatMap ga(p->ensure_grad().data(), m, k);
      ga.noalias() += gy * cmap2d(parent(n, 1)->value, n2, k);
    }
    if (Node* p = parent(n, 1); p->needs_grad) {
      MatMap gb(p->ensure_grad().data(), n2, k);
      gb.noalias() += gy.transpose() * cmap2d(parent(n, 0)->value, m, k);
    }
  });
}

namespace {

void check_bmm(const Var& a, const Var& b, bool nt, const char* op) {
  const bool ok = a.value().rank() == 3 && b.value().rank() == 3 && a.dim(0) == b.dim(0) &&
                  (nt ? a.dim(2) == b.dim(2) : a.dim(2) == b.dim(1));
  if (!ok) {
    throw ContractError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                        " x " + shape_str(b.shape()));
  }
}

}  // namespace

Var bmm(const Var& a, const Var& b) {
  check_bmm(a, b, false, "bmm");
  const int64_t g = a.dim(0), m = a.dim(1), k = a.dim(2), n2 = b.dim(2);
  Tensor out({g, m, n2});
  for (int64_t i = 0; i < g; ++i) {
    MatMap(out.data() + i * m * n2, m, n2).noalias() =
        CMatMap(a.value().data() + i * m * k, m, k) * CMatMap(b.value().data() + i * k * n2, k, n2);
  }
  return make_op(std::move(out), {a, b}, [g, m, k, n2](Node& n) {
    for (int64_t i = 0; i < g; ++i) {
      CMatMap gy(n.grad.data() + i * m * n2, m, n2);
      if (Node* p = parent(n, 0); p->needs_grad) {
        MatMap ga(p->ensure_grad().data() + i * m * k, m, k);
        ga.noalias() += gy * CMatMap(parent(n, 1)->value.data() + i * k * n2, k, n2).transpose();
      }
      if (Node* p = parent(n, 1); p->needs_grad) {
        MatMap gb(p->ensure_grad().data() + i * k * n2, k, n2);
        gb.noalias() += CMatMap(parent(n, 0)->value.data() + i * m * k, m, k).transpose() * gy;
      }
    }
  });
}

Var bmm_nt(const Var& a, const Var& b) {
  check_bmm(a, b, true, "bmm_nt");
  const int64_t g = a.dim(0), m = a.dim(1), k = a.dim(2), n2 = b.dim(1);
  Tensor out({g, m, n2});
  for (int64_t i = 0; i < g; ++i) {
    MatMap(out.data() + i * m * n2, m, n2).noalias() =
        CMatMap(a.value().data() + i * m * k, m, k) *
        CMatMap(b.value().data() + i * n2 * k, n2, k).transpose();
  }
  return make_op(std::move(out), {a, b}, [g, m, k, n2](Node& n) {
    for (int64_t i = 0; i < g; ++i) {
      CMatMap gy(n.grad.data() + i * m * n2, m, n2);
      if (Node* p = parent(n, 0); p->needs_grad) {
        MatMap ga(p->ensure_grad().data() + i * m * k, m, k);
        ga.noalias() += gy * CMatMap(parent(n, 1)->value.data() + i * n2 * k, n2, k);
      }
      if (Node* p = parent(n, 1); p->needs_grad) {
        MatMap gb(p->ensure_grad().data() + i * n2 * k, n2, k);
        gb.noalias() += gy.transpose() * CMatMap(parent(n, 0)->value.data() + i * m * k, m, k);
      }
    }
  });
}

namespace {

Var affine_impl(const Var& x, const Var& w, const Var* bias) {
  if (w.value().rank() != 2 || x.shape().empty() || x.shape().back() != w.dim(0)) {
    throw ContractError("affine: incompatible shapes " + shape_str(x.shape()) + " x " +
                        shape_str(w.shape()));
  }
  const int64_t k = w.dim(0), n2 = w.dim(1);
  const int64_t rows = x.numel() / k;
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  out_shape.push_back(n2);
  Tensor out(out_shape);
  map2d(out, rows, n2).noalias() = cmap2d(x.value(), rows, k) * cmap2d(w.value(), k, n2);
  if (bias) {
    if (bias->value().rank() != 1 || bias->dim(0) != n2) {
      throw ContractError("affine: bias shape mismatch");
    }
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t j = 0; j < n2; ++j) out[r * n2 + j] += bias->value()[j];
  }
  std::vector<Var> parents = {x, w};
  if (bias) parents.push_back(*bias);
  const bool has_bias = bias != nullptr;
  return make_op(std::move(out), std::move(parents), [rows, k, n2, has_bias](Node& n) {
    CMatMap gy(n.grad.data(), rows, n2);
    if (Node* p = parent(n, 0); p->needs_grad) {
      MatMap gx(p->ensure_grad().data(), rows, k);
      gx.noalias() += gy * cmap2d(parent(n, 1)->value, k, n2).transpose();
    }
    if (Node* p = parent(n, 1); p->needs_grad) {
      MatMap gw(p->ensure_grad().data(), k, n2);
      gw.noalias() += cmap2d(parent(n, 0)->value, rows, k).transpose() * gy;
    }
    if (has_bias) {
      if (Node* p = parent(n, 2); p->needs_grad) {
        Tensor& gb = p->ensure_grad();
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t j = 0; j < n2; ++j) gb[j] += n.grad[r * n2 + j];
      }
    }
  });
}

}  // namespace

Var affine(const Var& x, const Var& w) { return affine_impl(x, w, nullptr); }
Var affine(const Var& x, const Var& w, const Var& b) { return affine_impl(x, w, &b); }

// ---- NN blocks -------------------------------------------------------------

Var layernorm_last(const Var& x, const Var& gamma, const Var& beta, Scalar eps) {
  const int64_t d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d) {
    throw ContractError("layernorm_last: affine params must have size of last dim");
  }
  const int64_t rows = x.numel() / d;
  Tensor out(x.value().shape());
  Tensor xhat(x.value().shape());
  Tensor inv_std({rows});
  for (int64_t r = 0; r < rows; ++r) {
    const Scalar* xr = x.value().data() + r * d;
    Scalar mean = 0;
    for (int64_t i = 0; i < d; ++i) mean += xr[i];
    mean /= static_cast<Scalar>(d);
    Scalar var = 0;
    for (int64_t i = 0; i < d; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= static_cast<Scalar>(d);
    const Scalar is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (int64_t i = 0; i < d; ++i) {
      const Scalar xh = (xr[i] - mean) * is;
      xhat[r * d + i] = xh;
      out[r * d + i] = gamma.value()[i] * xh + beta.value()[i];
    }
  }
  return make_op(std::move(out), {x, gamma, beta},
                 [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& n) {
    const Tensor& gv = parent(n, 1)->value;
    if (Node* p = parent(n, 0); p->needs_grad) {
      Tensor& gx = p->ensure_grad();
      for (int64_t r = 0; r < rows; ++r) {
        const Scalar* gy = n.grad.data() + r * d;
        const Scalar* xh = xhat.data() + r * d;
        Scalar sum_dy = 0, sum_dy_xh = 0;
        for (int64_t i = 0; i < d; ++i) {
          const Scalar dxh = gy[i] * gv[i];
          sum_dy += dxh;
          sum_dy_xh += dxh * xh[i];
        }
        const Scalar inv_d = 1.0 / static_cast<Scalar>(d);
        for (int64_t i = 0; i < d; ++i) {
          const Scalar dxh = gy[i] * gv[i];
          gx[r * d + i] += inv_std[r] * (dxh - inv_d * sum_dy - xh[i] * inv_d * sum_dy_xh);
        }
      }
    }
    if (Node* p = parent(n, 1); p->needs_grad) {
      Tensor& gg = p->ensure_grad();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t i = 0; i < d; ++i) gg[i] += n.grad[r * d + i] * xhat[r * d + i];
    }
    if (Node* p = parent(n, 2); p->needs_grad) {
      Tensor& gb = p->ensure_grad();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t i = 0; i < d; ++i) gb[i] += n.grad[r * d + i];
    }
  });
}

namespace {

// im2col for stride-1 same-padding square kernels: col is (Cin*k*k, H*W).
void im2col(const Scalar* img, int64_t cin, int64_t h, int64_t w, int64_t ksz, Scalar* col) {
  const int64_t pad = ksz / 2;
  int64_t row = 0;
  for (int64_t c = 0; c < cin; ++c) {
    for (int64_t ky = 0; ky < ksz; ++ky) {
      for (int64_t kx = 0; kx < ksz; ++kx, ++row) {
        Scalar* dst = col + row * h * w;
        for (int64_t y = 0; y < h; ++y) {
          const int64_t sy = y + ky - pad;
          if (sy < 0 || sy >= h) {
            for (int64_t x = 0; x < w; ++x) dst[y * w + x] = 0;
            continue;
          }
          for (int64_t x = 0; x < w; ++x) {
            const int64_t sx = x + kx - pad;
            dst[y * w + x] = (sx >= 0 && sx < w) ? img[(c * h + sy) * w + sx] : 0;
          }
        }
      }
    }
  }
}

void col2im_accum(const Scalar* col, int64_t cin, int64_t h, int64_t w, int64_t ksz, Scalar* img) {
  const int64_t pad = ksz / 2;
  int64_t row = 0;
  for (int64_t c = 0; c < cin; ++c) {
    for (int64_t ky = 0; ky < ksz; ++ky) {
      for (int64_t kx = 0; kx < ksz; ++kx, ++row) {
        const Scalar* src = col + row * h * w;
        for (int64_t y = 0; y < h; ++y) {
          const int64_t sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          for (int64_t x = 0; x < w; ++x) {
            const int64_t sx = x + kx - pad;
            if (sx >= 0 && sx < w) img[(c * h + sy) * w + sx] += src[y * w + x];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b) {
  if (x.value().rank() != 4 || w.value().rank() != 4) {
    throw ContractError("conv2d: expected x (B,Cin,H,W) and w (Cout,Cin,k,k)");
  }
  const int64_t bsz = x.dim(0), cin = x.dim(1), h = x.dim(2), ww = x.dim(3);
  const int64_t cout = w.dim(0), ksz = w.dim(2);
  if (w.dim(1) != cin || w.dim(3) != ksz || ksz % 2 == 0) {
    throw ContractError("conv2d: kernel must be odd square with matching Cin");
  }
  if (b.value().rank() != 1 || b.dim(0) != cout) throw ContractError("conv2d: bias shape mismatch");
  const int64_t hw = h * ww, ckk = cin * ksz * ksz;
  Tensor out({bsz, cout, h, ww});
  std::vector<Scalar> col(static_cast<size_t>(ckk * hw));
  for (int64_t i = 0; i < bsz; ++i) {
    im2col(x.value().data() + i * cin * hw, cin, h, ww, ksz, col.data());
    MatMap(out.data() + i * cout * hw, cout, hw).noalias() =
        cmap2d(w.value(), cout, ckk) * CMatMap(col.data(), ckk, hw);
    for (int64_t c = 0; c < cout; ++c) {
      Scalar* o = out.data() + (i * cout + c) * hw;
      const Scalar bc = b.value()[c];
      for (int64_t j = 0; j < hw; ++j) o[j] += bc;
    }
  }
  return make_op(std::move(out), {x, w, b}, [bsz, cin, h, ww, cout, ksz](Node& n) {
    const int64_t hw = h * ww, ckk = cin * ksz * ksz;
    std::vector<Scalar> col(static_cast<size_t>(ckk * hw));
    std::vector<Scalar> dcol(static_cast<size_t>(ckk * hw));
    Node* px = parent(n, 0);
    Node* pw = parent(n, 1);
    Node* pb = parent(n, 2);
    for (int64_t i = 0; i < bsz; ++i) {
      CMatMap gy(n.grad.data() + i * cout * hw, cout, hw);
      if (px->needs_grad || pw->needs_grad) {
        im2col(px->value.data() + i * cin * hw, cin, h, ww, ksz, col.data());
      }
      if (pw->needs_grad) {
        MatMap gw(pw->ensure_grad().data(), cout, ckk);
        gw.noalias() += gy * CMatMap(col.data(), ckk, hw).transpose();
      }
      if (px->needs_grad) {
        MatMap(dcol.data(), ckk, hw).noalias() =
            cmap2d(pw->value, cout, ckk).transpose() * gy;
        col2im_accum(dcol.data(), cin, h, ww, ksz, px->ensure_grad().data() + i * cin * hw);
      }
      if (pb->needs_grad) {
        Tensor& gb = pb->ensure_grad();
        for (int64_t c = 0; c < cout; ++c) {
          Scalar s = 0;
          const Scalar* g = n.grad.data() + (i * cout + c) * hw;
          for (int64_t j = 0; j < hw; ++j) s += g[j];
          gb[c] += s;
        }
      }
    }
  });
}

Var upsample2x(const Var& x) {
  if (x.value().rank() != 4) throw ContractError("upsample2x: expected (B,C,H,W)");
  const int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out({b, c, 2 * h, 2 * w});
  for (int64_t i = 0; i < b * c; ++i) {
    const Scalar* src = x.value().data() + i * h * w;
    Scalar* dst = out.data() + i * 4 * h * w;
    for (int64_t y = 0; y < 2 * h; ++y)
      for (int64_t x2 = 0; x2 < 2 * w; ++x2) dst[y * 2 * w + x2] = src[(y / 2) * w + (x2 / 2)];
  }
  return make_op(std::move(out), {x}, [b, c, h, w](Node& n) {
    if (Node* p = parent(n, 0); p->needs_grad) {
      Tensor& g = p->ensure_grad();
      for (int64_t i = 0; i < b * c; ++i) {
        Scalar* gs = g.data() + i * h * w;
        const Scalar* gd = n.grad.data() + i * 4 * h * w;
        for (int64_t y = 0; y < 2 * h; ++y)
          for (int64_t x2 = 0; x2 < 2 * w; ++x2) gs[(y / 2) * w + (x2 / 2)] += gd[y * 2 * w + x2];
      }
    }
  });
}

Var img_to_patches(const Var& x, int64_t patch) {
  if (x.value().rank() != 4) throw ContractError("img_to_patches: expected (B,C,H,W)");
  const int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (patch <= 0 || h % patch != 0 || w % patch != 0) {
    throw ContractError("img_to_patches: image dims must be divisible by patch size");
  }
  const int64_t gh = h / patch, gw = w / patch, n_tok = gh * gw, fdim = c * patch * patch;
  Tensor out({b, n_tok, fdim});
  for (int64_t i = 0; i < b; ++i)
    for (int64_t gy = 0; gy < gh; ++gy)
      for (int64_t gx = 0; gx < gw; ++gx) {
        Scalar* dst = out.data() + ((i * n_tok) + gy * gw + gx) * fdim;
        int64_t f = 0;
        for (int64_t ch = 0; ch < c; ++ch)
          for (int64_t py = 0; py < patch; ++py)
            for (int64_t px = 0; px < patch; ++px, ++f)
              dst[f] = x.value()[((i * c + ch) * h + gy * patch + py) * w + gx * patch + px];
      }
  return make_op(std::move(out), {x}, [b, c, h, w, patch](Node& n) {
    if (Node* p = parent(n, 0); p->needs_grad) {
      Tensor& g = p->ensure_grad();
      const int64_t gh = h / patch, gw = w / patch, n_tok = gh * gw, fdim = c * patch * patch;
      for (int64_t i = 0; i < b; ++i)
        for (int64_t gy = 0; gy < gh; ++gy)
          for (int64_t gx = 0; gx < gw; ++gx) {
            const Scalar* src = n.grad.data() + ((i * n_tok) + gy * gw + gx) * fdim;
            int64_t f = 0;
            for (int64_t ch = 0; ch < c; ++ch)
              for (int64_t py = 0; py < patch; ++py)
                for (int64_t px = 0; px < patch; ++px, ++f)
                  g[((i * c + ch) * h + gy * patch + py) * w + gx * patch + px] += src[f];
          }
    }
  });
}

Var ce_with_logits(const Var& logits, const Tensor& target) {
  if (logits.value().rank() != 4) throw ContractError("ce_with_logits: expected logits (B,C,H,W)");
  const int64_t b = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  if (target.rank() != 3 || target.dim(0) != b || target.dim(1) != h || target.dim(2) != w) {
    throw ContractError("ce_with_logits: target must be (B,H,W)");
  }
  const int64_t hw = h * w;
  const int64_t count = b * hw;
  Scalar loss = 0;
  for (int64_t i = 0; i < b; ++i) {
    for (int64_t j = 0; j < hw; ++j) {
      const int64_t t = static_cast<int64_t>(target[i * hw + j]);
      if (t < 0 || t >= c) throw ContractError("ce_with_logits: target class out of range");
      Scalar m = logits.value()[(i * c) * hw + j];
      for (int64_t ch = 1; ch < c; ++ch) m = std::max(m, logits.value()[(i * c + ch) * hw + j]);
      Scalar lse = 0;
      for (int64_t ch = 0; ch < c; ++ch) lse += std::exp(logits.value()[(i * c + ch) * hw + j] - m);
      lse = m + std::log(lse);
      loss += lse - logits.value()[(i * c + t) * hw + j];
    }
  }
  loss /= static_cast<Scalar>(count);
  return make_op(Tensor::scalar(loss), {logits}, [b, c, h, w, target](Node& n) {
    if (Node* p = parent(n, 0); p->needs_grad) {
      Tensor& g = p->ensure_grad();
      const int64_t hw = h * w;
      const Scalar gy = n.grad[0] / static_cast<Scalar>(b * hw);
      for (int64_t i = 0; i < b; ++i) {
        for (int64_t j = 0; j < hw; ++j) {
          const int64_t t = static_cast<int64_t>(target[i * hw + j]);
          Scalar m = p->value[(i * c) * hw + j];
          for (int64_t ch = 1; ch < c; ++ch) m = std::max(m, p->value[(i * c + ch) * hw + j]);
          Scalar denom = 0;
          for (int64_t ch = 0; ch < c; ++ch) denom += std::exp(p->value[(i * c + ch) * hw + j] - m);
          for (int64_t ch = 0; ch < c; ++ch) {
            const Scalar soft = std::exp(p->value[(i * c + ch) * hw + j] - m) / denom;
            g[(i * c + ch) * hw + j] += gy * (soft - (ch == t ? 1.0 : 0.0));
          }
        }
      }
    }
  });
}

}  // namespace adfseg::nn
