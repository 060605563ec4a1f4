// Microbenchmarks for the loss stack at training-typical desk-scale shapes.

#include <benchmark/benchmark.h>

#include "adfseg/alignment.hpp"
#include "adfseg/disentangle.hpp"
#include "adfseg/rng.hpp"
#include "adfseg/trainer.hpp"

using namespace adfseg;

namespace {

nn::Var rand_leaf(Rng& rng, nn::Shape shape, const char* name) {
  nn::Tensor t(std::move(shape));
  rng.fill_normal(t, 0.0, 1.0);
  return nn::leaf(std::move(t), name);
}

DisentangledBundle rand_bundle(Rng& rng, int64_t b, int64_t d) {
  DisentangledBundle bu;
  bu.z_ws = rand_leaf(rng, {b, d}, "z_ws");
  bu.z_wp = rand_leaf(rng, {b, d}, "z_wp");
  bu.z_ns = rand_leaf(rng, {b, d}, "z_ns");
  bu.z_np = rand_leaf(rng, {b, d}, "z_np");
  return bu;
}

}  // namespace

static void BM_mmd_forward(benchmark::State& state) {
  Rng rng(1);
  const int64_t b = state.range(0), f = 96;
  auto gw = rand_leaf(rng, {b, f}, "gw");
  auto gn = rand_leaf(rng, {b, f}, "gn");
  for (auto _ : state) {
    auto l = mmd_loss(gw, gn, 1.3);
    benchmark::DoNotOptimize(l.value().item());
  }
}
BENCHMARK(BM_mmd_forward)->Arg(8)->Arg(24);

static void BM_mmd_train(benchmark::State& state) {
  Rng rng(1);
  const int64_t b = state.range(0), f = 96;
  auto gw = rand_leaf(rng, {b, f}, "gw");
  auto gn = rand_leaf(rng, {b, f}, "gn");
  for (auto _ : state) {
    gw.zero_grad();
    gn.zero_grad();
    auto l = mmd_loss(gw, gn, 1.3);
    nn::backward(l);
    benchmark::DoNotOptimize(gw.grad().data());
  }
}
BENCHMARK(BM_mmd_train)->Arg(8)->Arg(24);

static void BM_median_sigma(benchmark::State& state) {
  Rng rng(2);
  const int64_t b = state.range(0), f = 96;
  nn::Tensor gw({b, f}), gn({b, f});
  rng.fill_normal(gw, 0.0, 1.0);
  rng.fill_normal(gn, 0.0, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(median_sigma(gw, gn));
}
BENCHMARK(BM_median_sigma)->Arg(24);

static void BM_dacl_forward(benchmark::State& state) {
  Rng rng(3);
  auto bu = rand_bundle(rng, state.range(0), 32);
  for (auto _ : state) {
    auto l = loss_dacl(bu, 0.07);
    benchmark::DoNotOptimize(l.value().item());
  }
}
BENCHMARK(BM_dacl_forward)->Arg(8)->Arg(24);

static void BM_fd_train(benchmark::State& state) {
  Rng rng(4);
  auto bu = rand_bundle(rng, state.range(0), 32);
  FDConfig cfg;
  for (auto _ : state) {
    for (auto* z : {&bu.z_ws, &bu.z_wp, &bu.z_ns, &bu.z_np}) z->zero_grad();
    auto parts = loss_fd(bu, cfg);
    nn::backward(parts.total);
    benchmark::DoNotOptimize(bu.z_ws.grad().data());
  }
}
BENCHMARK(BM_fd_train)->Arg(8)->Arg(24);

static void BM_seg_losses(benchmark::State& state) {
  Rng rng(5);
  const int64_t b = 4, s = state.range(0);
  auto logits = rand_leaf(rng, {b, 2, s, s}, "logits");
  nn::Tensor mask({b, s, s});
  for (int64_t i = 0; i < mask.numel(); ++i) mask[i] = (rng.uniform() < 0.2) ? 1.0 : 0.0;
  for (auto _ : state) {
    logits.zero_grad();
    auto [ce, dice] = seg_losses(logits, mask);
    auto total = nn::add(ce, dice);
    nn::backward(total);
    benchmark::DoNotOptimize(logits.grad().data());
  }
}
BENCHMARK(BM_seg_losses)->Arg(32)->Arg(64);

BENCHMARK_MAIN();
