#include "losscheck_suite.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>

#include "adfseg/alignment.hpp"
#include "adfseg/config.hpp"
#include "adfseg/data.hpp"
#include "adfseg/disentangle.hpp"
#include "adfseg/model.hpp"
#include "adfseg/trainer.hpp"

namespace fs = std::filesystem;

namespace adfseg::checks {

using nn::Tensor;
using nn::Var;

namespace {

using Rows = std::vector<std::vector<double>>;

Rows random_rows(Rng& rng, int64_t b, int64_t f, double scale = 1.0) {
  Rows r(static_cast<size_t>(b), std::vector<double>(static_cast<size_t>(f)));
  for (auto& row : r)
    for (auto& v : row) v = rng.normal(0.0, scale);
  return r;
}

Tensor to_tensor(const Rows& rows) {
  const int64_t b = static_cast<int64_t>(rows.size());
  const int64_t f = static_cast<int64_t>(rows[0].size());
  Tensor t({b, f});
  for (int64_t i = 0; i < b; ++i)
    for (int64_t j = 0; j < f; ++j) t[i * f + j] = rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
  return t;
}

Var leaf_of(const Rows& rows, const std::string& name) { return nn::leaf(to_tensor(rows), name); }

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

// Eq.-style biased V-statistic: three 1/B² double sums with a Gaussian kernel
double mmd_oracle(const Rows& w, const Rows& n, double sigma) {
  const double inv = 1.0 / (2.0 * sigma * sigma);
  const double b = static_cast<double>(w.size());
  double kw = 0, kn = 0, kc = 0;
  for (const auto& a : w)
    for (const auto& c : w) kw += std::exp(-sq_dist(a, c) * inv);
  for (const auto& a : n)
    for (const auto& c : n) kn += std::exp(-sq_dist(a, c) * inv);
  for (const auto& a : w)
    for (const auto& c : n) kc += std::exp(-sq_dist(a, c) * inv);
  return (kw + kn - 2.0 * kc) / (b * b);
}

constexpr double kEps = 1e-8;

double norm_of(const std::vector<double>& a) {
  double s = 0;
  for (double v : a) s += v * v;
  return std::sqrt(s);
}

double cos_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0;
  for (size_t k = 0; k < a.size(); ++k) dot += a[k] * b[k];
  return dot / ((norm_of(a) + kEps) * (norm_of(b) + kEps));
}

double align_oracle(const Rows& zws, const Rows& zns) {
  double s = 0;
  for (size_t i = 0; i < zws.size(); ++i) s += cos_oracle(zws[i], zns[i]);
  return 0.5 * (1.0 - s / static_cast<double>(zws.size()));
}

double diff_oracle(const Rows& zwp, const Rows& znp) {
  double s = 0;
  for (size_t i = 0; i < zwp.size(); ++i) s += cos_oracle(zwp[i], znp[i]);
  return 0.5 * (1.0 + s / static_cast<double>(zwp.size()));
}

double orth_oracle(const Rows& zws, const Rows& zwp, const Rows& zns, const Rows& znp) {
  double s = 0;
  for (size_t i = 0; i < zws.size(); ++i) {
    const double cw = cos_oracle(zws[i], zwp[i]);
    const double cn = cos_oracle(zns[i], znp[i]);
    s += cw * cw + cn * cn;
  }
  return 0.5 * s / static_cast<double>(zws.size());
}

std::vector<double> unit(const std::vector<double>& a) {
  std::vector<double> u(a.size());
  const double inv = 1.0 / (norm_of(a) + kEps);
  for (size_t k = 0; k < a.size(); ++k) u[k] = a[k] * inv;
  return u;
}

double dot_of(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0;
  for (size_t k = 0; k < a.size(); ++k) d += a[k] * b[k];
  return d;
}

// anchor w-shared rows against the matching n-shared positive and the three
// negative families (all n-shared, all w-specific, all n-specific rows)
double dacl_oracle(const Rows& zws, const Rows& zns, const Rows& zwp, const Rows& znp,
                   double tau, bool symmetrize) {
  auto directed = [&](const Rows& anc, const Rows& pos, const Rows& na, const Rows& nb) {
    const size_t b = anc.size();
    double total = 0;
    for (size_t i = 0; i < b; ++i) {
      const auto a = unit(anc[i]);
      double den = 0, s_pos = 0;
      for (size_t j = 0; j < b; ++j) {
        const double e = std::exp(dot_of(a, unit(pos[j])) / tau);
        den += e;
        if (j == i) s_pos = e;
      }
      for (size_t j = 0; j < b; ++j) den += std::exp(dot_of(a, unit(na[j])) / tau);
      for (size_t j = 0; j < b; ++j) den += std::exp(dot_of(a, unit(nb[j])) / tau);
      total += std::log(den) - std::log(s_pos);
    }
    return total / static_cast<double>(b);
  };
  const double fwd = directed(zws, zns, zwp, znp);
  if (!symmetrize) return fwd;
  return 0.5 * (fwd + directed(zns, zws, znp, zwp));
}

double scalar_of(const Var& v) { return v.value()[0]; }

void track(std::vector<CheckRow>& rows, const std::string& name, double err, double tol) {
  rows.push_back({name, err, tol, err <= tol});
}

// ---- gradient checking ------------------------------------------------------

// Analytic grads are snapshotted right after backward: re-invoking build for
// the finite-difference probes rewrites node grads.
double max_rel_grad_err(const std::function<Var()>& build, const std::vector<Var>& leaves,
                        double h) {
  Var loss = build();
  for (const auto& l : leaves) {
    Var handle = l;  // leaf grads accumulate across backward calls
    handle.zero_grad();
  }
  nn::backward(loss);
  std::vector<std::vector<double>> saved;
  for (const auto& l : leaves) {
    Var handle = l;
    saved.push_back(handle.grad().vec());
  }
  double worst = 0;
  for (size_t li = 0; li < leaves.size(); ++li) {
    Var handle = leaves[li];
    Tensor& val = handle.value();
    for (int64_t k = 0; k < val.numel(); ++k) {
      const double orig = val[k];
      val[k] = orig + h;
      const double fp = scalar_of(build());
      val[k] = orig - h;
      const double fm = scalar_of(build());
      val[k] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = saved[li][static_cast<size_t>(k)];
      const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

// ---- shared tiny-run configuration -----------------------------------------

ExperimentConfig tiny_config(int64_t image, int64_t patch, int64_t dim, int64_t n_pairs,
                             double train_fraction) {
  ExperimentConfig cfg;
  cfg.data.n_pairs = n_pairs;
  cfg.data.seed = 11;
  cfg.data.gen.image_size = image;
  cfg.data.gen.train_fraction = train_fraction;
  cfg.data.gen.tumor_fraction = 1.0;
  cfg.encoder.patch_size = patch;
  cfg.encoder.dim = dim;
  cfg.encoder.depth = 2;
  cfg.encoder.shallow_taps = 1;
  cfg.encoder.heads = 2;
  cfg.fusion.base_channels = dim;
  cfg.trainer.batch = 2;
  cfg.trainer.seed = 3;
  return cfg;
}

fs::path fresh_tmp_dir(const std::string& stem) {
  const auto t = std::chrono::steady_clock::now().time_since_epoch().count();
  fs::path p = fs::temp_directory_path() / (stem + "-" + std::to_string(t));
  fs::create_directories(p);
  return p;
}

}  // namespace

std::vector<CheckRow> loss_oracle_checks(uint64_t seed) {
  std::vector<CheckRow> out;
  Rng rng(mix_seed(seed, "loss-oracles"));

  // mmd against the three-sum loop oracle
  {
    double worst = 0, worst_sym = 0;
    for (int rep = 0; rep < 20; ++rep) {
      const int64_t b = 2 + rng.below(5), f = 1 + rng.below(8);
      const double sigma = rng.uniform(0.5, 2.0);
      Rows w = random_rows(rng, b, f), n = random_rows(rng, b, f);
      const double got = scalar_of(mmd_loss(leaf_of(w, "gw"), leaf_of(n, "gn"), sigma));
      worst = std::max(worst, std::abs(got - mmd_oracle(w, n, sigma)));
      const double rev = scalar_of(mmd_loss(leaf_of(n, "gn"), leaf_of(w, "gw"), sigma));
      worst_sym = std::max(worst_sym, std::abs(got - rev));
    }
    track(out, "mmd vs loop oracle (20 random)", worst, 1e-6);
    track(out, "mmd symmetry", worst_sym, 1e-7);

    Rows same = random_rows(rng, 3, 4);
    track(out, "mmd identical inputs -> 0",
          std::abs(scalar_of(mmd_loss(leaf_of(same, "a"), leaf_of(same, "b"), 1.0))), 1e-12);

    Rows zw{{0.0}, {0.0}}, on{{1.0}, {1.0}};
    const double expected = 2.0 * (1.0 - std::exp(-0.5));
    track(out, "mmd two-point case = 2(1-e^-1/2)",
          std::abs(scalar_of(mmd_loss(leaf_of(zw, "a"), leaf_of(on, "b"), 1.0)) - expected), 1e-12);
  }

  // cosine-based terms against dot/norm loop oracles
  {
    double wa = 0, wd = 0, wo = 0;
    for (int rep = 0; rep < 20; ++rep) {
      const int64_t b = 2 + rng.below(4), f = 2 + rng.below(7);
      Rows zws = random_rows(rng, b, f), zns = random_rows(rng, b, f);
      Rows zwp = random_rows(rng, b, f), znp = random_rows(rng, b, f);
      wa = std::max(wa, std::abs(scalar_of(loss_align(leaf_of(zws, "a"), leaf_of(zns, "b"))) -
                                 align_oracle(zws, zns)));
      wd = std::max(wd, std::abs(scalar_of(loss_diff(leaf_of(zwp, "a"), leaf_of(znp, "b"))) -
                                 diff_oracle(zwp, znp)));
      wo = std::max(wo, std::abs(scalar_of(loss_orth(leaf_of(zws, "a"), leaf_of(zwp, "b"),
                                                     leaf_of(zns, "c"), leaf_of(znp, "d"))) -
                                 orth_oracle(zws, zwp, zns, znp)));
    }
    track(out, "align vs loop oracle (20 random)", wa, 1e-6);
    track(out, "diff vs loop oracle (20 random)", wd, 1e-6);
    track(out, "orth vs loop oracle (20 random)", wo, 1e-6);

    Rows r = random_rows(rng, 2, 5);
    Rows neg = r;
    for (auto& row : neg)
      for (auto& v : row) v = -v;
    Rows orth_a{{1, 0, 0, 0, 0}, {0, 1, 0, 0, 0}};
    Rows orth_b{{0, 0, 1, 0, 0}, {0, 0, 0, 1, 0}};
    track(out, "align identical -> 0",
          std::abs(scalar_of(loss_align(leaf_of(r, "a"), leaf_of(r, "b")))), 1e-6);
    track(out, "align negated -> 1",
          std::abs(scalar_of(loss_align(leaf_of(r, "a"), leaf_of(neg, "b"))) - 1.0), 1e-6);
    track(out, "diff negated -> 0",
          std::abs(scalar_of(loss_diff(leaf_of(r, "a"), leaf_of(neg, "b")))), 1e-6);
    track(out, "diff identical -> 1",
          std::abs(scalar_of(loss_diff(leaf_of(r, "a"), leaf_of(r, "b"))) - 1.0), 1e-6);
    track(out, "diff orthogonal -> 0.5",
          std::abs(scalar_of(loss_diff(leaf_of(orth_a, "a"), leaf_of(orth_b, "b"))) - 0.5), 1e-12);
    track(out, "orth both orthogonal -> 0",
          std::abs(scalar_of(loss_orth(leaf_of(orth_a, "a"), leaf_of(orth_b, "b"),
                                       leaf_of(orth_a, "c"), leaf_of(orth_b, "d")))),
          1e-12);
    track(out, "orth aligned pairs -> 1",
          std::abs(scalar_of(loss_orth(leaf_of(r, "a"), leaf_of(r, "b"), leaf_of(r, "c"),
                                       leaf_of(r, "d"))) -
                   1.0),
          1e-6);
    track(out, "orth mixed (-1, perp) -> 0.5",
          std::abs(scalar_of(loss_orth(leaf_of(r, "a"), leaf_of(neg, "b"), leaf_of(orth_a, "c"),
                                       leaf_of(orth_b, "d"))) -
                   0.5),
          1e-6);
  }

  // contrastive term
  {
    double worst = 0, worst_sym = 0, min_loss = 1e300;
    for (int rep = 0; rep < 20; ++rep) {
      const int64_t b = 2 + rng.below(4), f = 2 + rng.below(7);
      const double tau = rng.uniform(0.07, 1.0);
      Rows zws = random_rows(rng, b, f), zns = random_rows(rng, b, f);
      Rows zwp = random_rows(rng, b, f), znp = random_rows(rng, b, f);
      DisentangledBundle bun;
      bun.z_ws = leaf_of(zws, "zws");
      bun.z_ns = leaf_of(zns, "zns");
      bun.z_wp = leaf_of(zwp, "zwp");
      bun.z_np = leaf_of(znp, "znp");
      const double got = scalar_of(loss_dacl(bun, tau, false));
      worst = std::max(worst, std::abs(got - dacl_oracle(zws, zns, zwp, znp, tau, false)));
      min_loss = std::min(min_loss, got);
      const double got_sym = scalar_of(loss_dacl(bun, tau, true));
      worst_sym =
          std::max(worst_sym, std::abs(got_sym - dacl_oracle(zws, zns, zwp, znp, tau, true)));
    }
    track(out, "dacl vs triple-loop oracle (20 random)", worst, 1e-6);
    track(out, "dacl symmetrized vs oracle", worst_sym, 1e-6);
    out.push_back({"dacl positive on random inputs", min_loss, 0.0, min_loss > 0.0});

    DisentangledBundle ortho;
    ortho.z_ws = leaf_of({{1, 0, 0, 0}}, "zws");
    ortho.z_ns = leaf_of({{0, 1, 0, 0}}, "zns");
    ortho.z_wp = leaf_of({{0, 0, 1, 0}}, "zwp");
    ortho.z_np = leaf_of({{0, 0, 0, 1}}, "znp");
    track(out, "dacl B=1 orthogonal tau=1 -> log 3",
          std::abs(scalar_of(loss_dacl(ortho, 1.0, false)) - std::log(3.0)), 1e-9);
  }

  // weighted combination
  {
    double worst = 0, worst_sum = 0;
    for (int rep = 0; rep < 20; ++rep) {
      const int64_t b = 2 + rng.below(3), f = 3 + rng.below(5);
      Rows zws = random_rows(rng, b, f), zns = random_rows(rng, b, f);
      Rows zwp = random_rows(rng, b, f), znp = random_rows(rng, b, f);
      DisentangledBundle bun;
      bun.z_ws = leaf_of(zws, "zws");
      bun.z_ns = leaf_of(zns, "zns");
      bun.z_wp = leaf_of(zwp, "zwp");
      bun.z_np = leaf_of(znp, "znp");
      FDConfig fc;  // defaults: 1/3, 1/3, 1/3, 0.01
      FdParts parts = loss_fd(bun, fc);
      const double expect = fc.alpha * align_oracle(zws, zns) + fc.beta * diff_oracle(zwp, znp) +
                            fc.gamma * orth_oracle(zws, zwp, zns, znp) +
                            fc.delta * dacl_oracle(zws, zns, zwp, znp, fc.tau, false);
      worst = std::max(worst, std::abs(scalar_of(parts.total) - expect));
      const double from_parts = fc.alpha * scalar_of(parts.align) + fc.beta * scalar_of(parts.diff) +
                                fc.gamma * scalar_of(parts.orth) + fc.delta * scalar_of(parts.dacl);
      worst_sum = std::max(worst_sum, std::abs(scalar_of(parts.total) - from_parts));
    }
    track(out, "fd vs weighted sub-oracles (20 random)", worst, 1e-6);
    track(out, "fd total = weighted parts", worst_sum, 1e-7);

    DisentangledBundle bun;
    bun.z_ws = leaf_of(random_rows(rng, 2, 4), "zws");
    bun.z_ns = leaf_of(random_rows(rng, 2, 4), "zns");
    bun.z_wp = leaf_of(random_rows(rng, 2, 4), "zwp");
    bun.z_np = leaf_of(random_rows(rng, 2, 4), "znp");
    FDConfig zero;
    zero.alpha = zero.beta = zero.gamma = zero.delta = 0.0;
    track(out, "fd zero weights -> 0", std::abs(scalar_of(loss_fd(bun, zero).total)), 0.0);
  }

  // multi-scale descriptor pieces
  {
    double w_avg = 0, w_att = 0, w_sum = 0;
    for (int rep = 0; rep < 20; ++rep) {
      const int64_t b = 1 + rng.below(3), ntok = 2 + rng.below(6), f = 2 + rng.below(6);
      Tensor ft({b, ntok, f});
      for (int64_t k = 0; k < ft.numel(); ++k) ft[k] = rng.normal(0.0, 1.0);
      Var fv = nn::leaf(ft, "f");

      Tensor avg = global_average(fv).value();
      for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t k = 0; k < f; ++k) {
          double s = 0;
          for (int64_t t = 0; t < ntok; ++t) s += ft[(bi * ntok + t) * f + k];
          w_avg = std::max(w_avg, std::abs(avg[bi * f + k] - s / static_cast<double>(ntok)));
        }

      nn::ParamStore ps;
      Rng wrng(mix_seed(seed, "scorer", static_cast<uint64_t>(rep)));
      nn::Linear scorer(ps, wrng, "scorer", f, 1);
      GlobalDescriptor gd = global_descriptor(fv, scorer);
      const Tensor& wt = scorer.w.value();
      const Tensor& bt = scorer.b.value();
      for (int64_t bi = 0; bi < b; ++bi) {
        std::vector<double> sc(static_cast<size_t>(ntok));
        double mx = -1e300;
        for (int64_t t = 0; t < ntok; ++t) {
          double s = bt[0];
          for (int64_t k = 0; k < f; ++k) s += ft[(bi * ntok + t) * f + k] * wt[k];
          sc[static_cast<size_t>(t)] = s;
          mx = std::max(mx, s);
        }
        double z = 0;
        for (double& s : sc) {
          s = std::exp(s - mx);
          z += s;
        }
        for (int64_t k = 0; k < f; ++k) {
          double wsum = 0;
          for (int64_t t = 0; t < ntok; ++t)
            wsum += sc[static_cast<size_t>(t)] / z * ft[(bi * ntok + t) * f + k];
          w_att = std::max(w_att, std::abs(gd.weighted.value()[bi * f + k] - wsum));
        }
      }
      for (int64_t k = 0; k < b * f; ++k) {
        // bitwise: the stored sum must equal re-adding its two parts
        w_sum = std::max(w_sum, std::abs(gd.global.value()[k] -
                                         (gd.avg.value()[k] + gd.weighted.value()[k])));
      }
    }
    track(out, "global_average vs loop oracle", w_avg, 1e-6);
    track(out, "attention pool vs loop oracle", w_att, 1e-6);
    track(out, "global = avg + weighted", w_sum, 0.0);
  }

  // projection pooling and identity initialization
  {
    nn::ParamStore ps;
    Rng prng(mix_seed(seed, "proj"));
    Projectors proj(ps, prng, "proj", 6);
    Tensor fw({2, 5, 6}), fn({2, 5, 6});
    prng.fill_normal(fw, 0.0, 1.0);
    prng.fill_normal(fn, 0.0, 1.0);
    DisentangledBundle b = project(nn::leaf(fw, "fw"), nn::leaf(fn, "fn"), proj);
    double w_id = 0;
    for (int64_t k = 0; k < fw.numel(); ++k)
      w_id = std::max(w_id, std::abs(b.Z_ws.value()[k] - fw[k]));
    track(out, "identity-init projector: Z == input", w_id, 0.0);
    double w_pool = 0;
    for (int64_t bi = 0; bi < 2; ++bi)
      for (int64_t k = 0; k < 6; ++k) {
        double s = 0;
        for (int64_t t = 0; t < 5; ++t) s += b.Z_ws.value()[(bi * 5 + t) * 6 + k];
        w_pool = std::max(w_pool, std::abs(b.z_ws.value()[bi * 6 + k] - s / 5.0));
      }
    track(out, "pooled projection vs token-mean oracle", w_pool, 1e-6);
  }

  // segmentation terms against pixel-count oracles
  {
    double w_ce = 0, w_dice = 0;
    for (int rep = 0; rep < 20; ++rep) {
      const int64_t b = 1 + rng.below(3), hw = 4 + rng.below(5);
      Tensor logits({b, 2, hw, hw});
      for (int64_t k = 0; k < logits.numel(); ++k) logits[k] = rng.normal(0.0, 1.5);
      Tensor mask({b, hw, hw});
      for (int64_t k = 0; k < mask.numel(); ++k) mask[k] = rng.uniform() < 0.4 ? 1.0 : 0.0;
      auto [ce, dice] = seg_losses(nn::leaf(logits, "lg"), mask);

      double ce_sum = 0, dice_mean = 0;
      for (int64_t bi = 0; bi < b; ++bi) {
        double inter = 0, psum = 0, gsum = 0;
        for (int64_t y = 0; y < hw; ++y)
          for (int64_t x = 0; x < hw; ++x) {
            const double l0 = logits[((bi * 2 + 0) * hw + y) * hw + x];
            const double l1 = logits[((bi * 2 + 1) * hw + y) * hw + x];
            const double g = mask[(bi * hw + y) * hw + x];
            const double lt = g > 0.5 ? l1 : l0;
            ce_sum += -(lt - std::log(std::exp(l0) + std::exp(l1)));
            const double p = 1.0 / (1.0 + std::exp(-(l1 - l0)));
            inter += p * g;
            psum += p;
            gsum += g;
          }
        dice_mean += (2.0 * inter + 1.0) / (psum + gsum + 1.0);
      }
      ce_sum /= static_cast<double>(b * hw * hw);
      dice_mean = 1.0 - dice_mean / static_cast<double>(b);
      w_ce = std::max(w_ce, std::abs(scalar_of(ce) - ce_sum));
      w_dice = std::max(w_dice, std::abs(scalar_of(dice) - dice_mean));
    }
    track(out, "cross-entropy vs pixel oracle (20 random)", w_ce, 1e-6);
    track(out, "soft dice vs pixel oracle (20 random)", w_dice, 1e-6);

    Tensor mask({1, 4, 4});
    Tensor logits({1, 2, 4, 4});
    for (int64_t k = 0; k < mask.numel(); ++k) {
      mask[k] = (k % 3 == 0) ? 1.0 : 0.0;
      logits[k] = mask[k] > 0.5 ? -20.0 : 20.0;       // class-0 channel
      logits[16 + k] = mask[k] > 0.5 ? 20.0 : -20.0;  // class-1 channel
    }
    auto [ce, dice] = seg_losses(nn::leaf(logits, "lg"), mask);
    track(out, "saturated correct logits: ce -> 0", std::abs(scalar_of(ce)), 1e-8);
    // smoothing keeps perfect dice slightly above 0: 1 - (2k+1)/(2k+1) = 0 here
    track(out, "saturated correct logits: dice -> 0", std::abs(scalar_of(dice)), 1e-6);
  }

  return out;
}

std::vector<CheckRow> gradient_checks(uint64_t seed) {
  std::vector<CheckRow> out;
  Rng rng(mix_seed(seed, "gradcheck"));
  const double h = 1e-4, tol = 1e-3;

  auto pair_leaves = [&](double scale) {
    Var a = leaf_of(random_rows(rng, 2, 8, scale), "a");
    Var b = leaf_of(random_rows(rng, 2, 8, scale), "b");
    return std::make_pair(a, b);
  };

  {
    auto [gw, gn] = pair_leaves(1.0);
    track(out, "grad mmd (B=2, D=8)",
          max_rel_grad_err([&] { return mmd_loss(gw, gn, 1.3); }, {gw, gn}, h), tol);
  }
  {
    auto [a, b] = pair_leaves(1.0);
    track(out, "grad align (B=2, D=8)",
          max_rel_grad_err([&] { return loss_align(a, b); }, {a, b}, h), tol);
  }
  {
    auto [a, b] = pair_leaves(1.0);
    track(out, "grad diff (B=2, D=8)",
          max_rel_grad_err([&] { return loss_diff(a, b); }, {a, b}, h), tol);
  }
  {
    auto [a, b] = pair_leaves(1.0);
    auto [c, d] = pair_leaves(1.0);
    track(out, "grad orth (B=2, D=8)",
          max_rel_grad_err([&] { return loss_orth(a, b, c, d); }, {a, b, c, d}, h), tol);
  }
  {
    auto [a, b] = pair_leaves(1.0);
    auto [c, d] = pair_leaves(1.0);
    DisentangledBundle bun;
    bun.z_ws = a;
    bun.z_ns = b;
    bun.z_wp = c;
    bun.z_np = d;
    track(out, "grad dacl tau=0.07 (B=2, D=8)",
          max_rel_grad_err([&] { return loss_dacl(bun, 0.07, false); }, {a, b, c, d}, h), tol);
  }
  {
    auto [a, b] = pair_leaves(1.0);
    auto [c, d] = pair_leaves(1.0);
    DisentangledBundle bun;
    bun.z_ws = a;
    bun.z_ns = b;
    bun.z_wp = c;
    bun.z_np = d;
    FDConfig fc;
    track(out, "grad fd total (B=2, D=8)",
          max_rel_grad_err([&] { return loss_fd(bun, fc).total; }, {a, b, c, d}, h), tol);
  }
  {
    Tensor logits({2, 2, 4, 4});
    rng.fill_normal(logits, 0.0, 1.0);
    Tensor mask({2, 4, 4});
    for (int64_t k = 0; k < mask.numel(); ++k) mask[k] = rng.uniform() < 0.5 ? 1.0 : 0.0;
    Var lg = nn::leaf(logits, "lg");
    track(out, "grad cross-entropy (logits)",
          max_rel_grad_err([&] { return seg_losses(lg, mask).first; }, {lg}, h), tol);
    track(out, "grad soft dice (logits)",
          max_rel_grad_err([&] { return seg_losses(lg, mask).second; }, {lg}, h), tol);
  }
  return out;
}

std::vector<CheckRow> schedule_checks() {
  std::vector<CheckRow> out;
  double worst = 0;
  bool bitwise = true;
  for (int64_t e = 1; e <= 150; ++e) {
    const double got = lambda2_schedule(e, 150, 1.0, 1.0);
    const double want = std::min(1.0, static_cast<double>(e) / 150.0);
    if (got != want) bitwise = false;
    worst = std::max(worst, std::abs(got - want));
  }
  out.push_back({"lambda2 closed form, 150 epochs, bitwise", worst, 0.0, bitwise});
  out.push_back({"lambda2(e=E) = 1", std::abs(lambda2_schedule(150, 150, 1.0, 1.0) - 1.0), 0.0,
                 lambda2_schedule(150, 150, 1.0, 1.0) == 1.0});
  out.push_back({"lambda2(e=1, E=150) = 1/150",
                 std::abs(lambda2_schedule(1, 150, 1.0, 1.0) - 1.0 / 150.0), 0.0,
                 lambda2_schedule(1, 150, 1.0, 1.0) == 1.0 / 150.0});
  out.push_back({"lambda2 cap: min clamps to alpha_max",
                 std::abs(lambda2_schedule(150, 150, 0.5, 2.0) - 0.5), 0.0,
                 lambda2_schedule(150, 150, 0.5, 2.0) == 0.5});
  return out;
}

std::vector<CheckRow> training_probe_checks(uint64_t seed) {
  std::vector<CheckRow> out;

  // 50 optimizer steps on one fixed 4-pair batch must push the total down
  {
    ExperimentConfig cfg = tiny_config(32, 8, 16, 5, 0.8);
    cfg.data.seed = static_cast<int64_t>(mix_seed(seed, "descent-data") & 0xffff);
    cfg.trainer.lr = 2e-3;
    cfg.trainer.batch = 4;
    cfg.trainer.epochs = 1;
    auto manifest = data::synthesize_dataset(cfg.data.n_pairs,
                                             static_cast<uint64_t>(cfg.data.seed), cfg.data.gen);
    auto view = manifest.split_view("train");
    auto batches = data::make_batches(view, 4, 0, true);
    Model model(model_config_of(cfg), static_cast<uint64_t>(cfg.trainer.seed));
    Trainer trainer(model, cfg);
    trainer.ensure_sigma(batches[0]);
    std::vector<double> totals;
    for (int64_t k = 0; k < 50; ++k) {
      totals.push_back(trainer.train_step(batches[0], 1, k).total);
    }
    double head = 0, tail = 0;
    for (int i = 0; i < 5; ++i) {
      head += totals[static_cast<size_t>(i)];
      tail += totals[totals.size() - 1 - static_cast<size_t>(i)];
    }
    const bool down = tail < head && totals.back() < totals.front();
    out.push_back({"50-step descent on fixed batch", tail / 5.0 - head / 5.0, 0.0, down});
  }

  // a run resumed from the epoch-1 checkpoint must land on the bitwise same
  // weights as the uninterrupted two-epoch run
  {
    ExperimentConfig cfg = tiny_config(16, 4, 8, 4, 0.5);
    cfg.trainer.epochs = 2;
    cfg.trainer.checkpoint_every = 1;
    auto manifest = data::synthesize_dataset(cfg.data.n_pairs,
                                             static_cast<uint64_t>(cfg.data.seed), cfg.data.gen);
    const fs::path dir_a = fresh_tmp_dir("adfseg-resume-a");
    const fs::path dir_b = fresh_tmp_dir("adfseg-resume-b");
    Model full(model_config_of(cfg), static_cast<uint64_t>(cfg.trainer.seed));
    fit(full, manifest, cfg, dir_a.string());
    Model resumed(model_config_of(cfg), static_cast<uint64_t>(cfg.trainer.seed));
    fit(resumed, manifest, cfg, dir_b.string(), (dir_a / "ckpt_epoch_0001.bin").string());
    double worst = 0;
    for (size_t i = 0; i < full.params().params().size(); ++i) {
      const Tensor& pa = full.params().params()[i].value();
      const Tensor& pb = resumed.params().params()[i].value();
      for (int64_t k = 0; k < pa.numel(); ++k) worst = std::max(worst, std::abs(pa[k] - pb[k]));
    }
    out.push_back({"resume matches uninterrupted run bitwise", worst, 0.0, worst == 0.0});
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
  }
  return out;
}

bool all_pass(const std::vector<CheckRow>& rows) {
  for (const auto& r : rows)
    if (!r.pass) return false;
  return true;
}

void print_table(const std::vector<CheckRow>& rows) {
  for (const auto& r : rows) {
    std::printf("%-46s %11.3e  (tol %8.1e)  %s\n", r.name.c_str(), r.err, r.tol,
                r.pass ? "PASS" : "FAIL");
  }
}

}  // namespace adfseg::checks
