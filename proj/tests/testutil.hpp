#pragma once

// Helpers shared by the unit test binaries. Oracles used in tests live in the
// test files themselves so each assertion is readable next to its loop.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "adfseg/autograd.hpp"
#include "adfseg/config.hpp"
#include "adfseg/rng.hpp"

namespace testutil {

inline adfseg::nn::Tensor rand_tensor(adfseg::Rng& rng, adfseg::nn::Shape shape, double mean = 0.0,
                                      double stddev = 1.0) {
  adfseg::nn::Tensor t(std::move(shape));
  rng.fill_normal(t, mean, stddev);
  return t;
}

inline adfseg::nn::Var rand_leaf(adfseg::Rng& rng, adfseg::nn::Shape shape,
                                 const std::string& name) {
  return adfseg::nn::leaf(rand_tensor(rng, std::move(shape)), name);
}

/// Central finite differences against the tape for a scalar-valued builder.
/// Leaf grads accumulate across backward calls, so they are zeroed before the
/// sweep and snapshotted right after it.
template <class Fn>
double fd_max_rel_err(Fn&& make_loss, std::vector<adfseg::nn::Var> leaves, double h = 1e-4) {
  for (auto& l : leaves) l.zero_grad();
  auto loss = make_loss();
  adfseg::nn::backward(loss);
  std::vector<adfseg::nn::Tensor> grads;
  grads.reserve(leaves.size());
  for (auto& l : leaves) grads.push_back(l.grad());

  double worst = 0;
  for (size_t li = 0; li < leaves.size(); ++li) {
    auto& t = leaves[li].value();
    for (int64_t i = 0; i < t.numel(); ++i) {
      const double keep = t[i];
      t[i] = keep + h;
      const double up = make_loss().value().item();
      t[i] = keep - h;
      const double down = make_loss().value().item();
      t[i] = keep;
      const double fd = (up - down) / (2 * h);
      const double an = grads[li][i];
      const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

/// Fresh empty directory under the system temp root.
inline std::string fresh_tmp_dir(const std::string& tag) {
  static int counter = 0;
  const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
  auto dir = std::filesystem::temp_directory_path() /
             ("adfseg_test_" + tag + "_" + std::to_string(stamp) + "_" + std::to_string(counter++));
  std::filesystem::create_directories(dir);
  return dir.string();
}

/// Smallest practical experiment: tumor-only pairs, shallow encoder, a batch
/// size pair losses accept.
inline adfseg::ExperimentConfig tiny_config(int64_t image = 16, int64_t patch = 4,
                                            int64_t dim = 8, int64_t n_pairs = 4,
                                            double train_fraction = 1.0) {
  adfseg::ExperimentConfig cfg;
  cfg.data.n_pairs = n_pairs;
  cfg.data.seed = 11;
  cfg.data.gen.image_size = image;
  cfg.data.gen.tumor_fraction = 1.0;
  cfg.data.gen.train_fraction = train_fraction;
  cfg.encoder.patch_size = patch;
  cfg.encoder.dim = dim;
  cfg.encoder.depth = 2;
  cfg.encoder.shallow_taps = 1;
  cfg.encoder.heads = 2;
  cfg.trainer.epochs = 1;
  cfg.trainer.batch = 2;
  cfg.trainer.seed = 3;
  cfg.validate();
  return cfg;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace testutil
