#pragma once

#include <vector>

#include "adfseg/autograd.hpp"

namespace adfseg::nn {

// ---- elementwise -----------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var add_scalar(const Var& a, Scalar c);
Var mul_scalar(const Var& a, Scalar c);
Var exp_(const Var& a);
Var log_(const Var& a);
Var sqrt_(const Var& a);
Var sigmoid(const Var& a);
Var gelu(const Var& a);
Var relu(const Var& a);

// ---- reductions ------------------------------------------------------------
Var sum_all(const Var& a);
Var mean_all(const Var& a);
/// (..., K) -> (...): sum over the last axis.
Var sum_last(const Var& a);
/// (B, N, D) -> (B, D): mean over the token axis.
Var mean_axis1(const Var& a);
Var softmax_last(const Var& a);
/// (B, B) -> (B,)
Var take_diag(const Var& a);

// ---- broadcast helpers -----------------------------------------------------
/// x slice i (along axis 0) scaled by v[i]; v has shape (dim0,).
Var mul_rows(const Var& x, const Var& v);
Var div_rows(const Var& x, const Var& v);
/// x (B, rest...) + p (rest...) for every batch slice.
Var add_bcast0(const Var& x, const Var& p);

// ---- shape -----------------------------------------------------------------
Var reshape(const Var& a, Shape new_shape);
Var permute(const Var& a, const std::vector<int64_t>& perm);
Var concat_last(const std::vector<Var>& parts);
Var slice_last(const Var& a, int64_t from, int64_t to);
/// (B, C, rest...) -> (B, rest...) picking index c of axis 1.
Var select_dim1(const Var& a, int64_t c);

// ---- matrix products (Eigen GEMM behind these) -----------------------------
Var matmul(const Var& a, const Var& b);     // (M,K) x (K,N)
Var matmul_nt(const Var& a, const Var& b);  // (M,K) x (N,K)^T
Var bmm(const Var& a, const Var& b);        // (G,M,K) x (G,K,N)
Var bmm_nt(const Var& a, const Var& b);     // (G,M,K) x (G,N,K)^T

/// x (..., K) * W (K, N) [+ b (N,)] applied to every row.
Var affine(const Var& x, const Var& w);
Var affine(const Var& x, const Var& w, const Var& b);

// ---- NN blocks -------------------------------------------------------------
Var layernorm_last(const Var& x, const Var& gamma, const Var& beta, Scalar eps = 1e-5);
/// Stride-1 same-padding conv for odd k; x (B,Cin,H,W), w (Cout,Cin,k,k), b (Cout,).
Var conv2d(const Var& x, const Var& w, const Var& b);
Var upsample2x(const Var& x);
/// (B, C, H, W) -> (B, N, P*P*C) with N = (H/P)*(W/P).
Var img_to_patches(const Var& x, int64_t patch);
/// Mean pixel cross-entropy with softmax over axis 1; target holds class
/// indices (B, H, W) and is not differentiated through.
Var ce_with_logits(const Var& logits, const Tensor& target);

}  // namespace adfseg::nn
