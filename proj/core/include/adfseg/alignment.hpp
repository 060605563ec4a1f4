#pragma once

#include <vector>

#include "adfseg/nn.hpp"

namespace adfseg {

struct MMDConfig {
  double sigma = 0.0;       // <= 0 means "auto": median heuristic, frozen after first batch
  double lambda_da = 1e-4;  // λ1

  void validate() const;  // lambda_da >= 0
};

struct GlobalDescriptor {
  nn::Var avg;        // (B, L·D)
  nn::Var weighted;   // (B, L·D)
  nn::Var global;     // avg + weighted
  nn::Var attention;  // (B, N), rows sum to 1
};

/// Concatenates stage maps along the feature dim: L × (B,N,D) -> (B,N,L·D).
nn::Var concat_multiscale(const std::vector<nn::Var>& stage_maps);

/// Mean over the token axis: (B,N,LD) -> (B,LD).
nn::Var global_average(const nn::Var& f);

/// Softmax token scores from a per-modality linear scorer (LD -> 1), then the
/// attention-weighted token sum.
GlobalDescriptor global_descriptor(const nn::Var& f, const nn::Linear& scorer);

/// Biased V-statistic MMD with a Gaussian kernel: the three 1/B² double sums
/// over exp(-||a-b||²/2σ²). Dedicated node with a closed-form backward.
nn::Var mmd_loss(const nn::Var& g_w, const nn::Var& g_n, double sigma);

/// Median pairwise Euclidean distance over the 2B pooled descriptor rows
/// (self-pairs excluded); falls back to 1 if the median vanishes.
double median_sigma(const nn::Tensor& g_w, const nn::Tensor& g_n);

}  // namespace adfseg
