// End-to-end benchmarks: data synthesis, the full forward pass, one training
// step. Shapes mirror the desk-scale experiment configs (32 px, patch 8).

#include <benchmark/benchmark.h>

#include "adfseg/config.hpp"
#include "adfseg/data.hpp"
#include "adfseg/model.hpp"
#include "adfseg/trainer.hpp"

using namespace adfseg;

namespace {

ExperimentConfig bench_config(int64_t image, int64_t patch, int64_t batch) {
  ExperimentConfig cfg;
  cfg.data.n_pairs = batch;
  cfg.data.seed = 9;
  cfg.data.gen.image_size = image;
  cfg.data.gen.tumor_fraction = 1.0;
  cfg.data.gen.train_fraction = 1.0;
  cfg.encoder.patch_size = patch;
  cfg.trainer.batch = batch;
  cfg.validate();
  return cfg;
}

data::Batch first_batch(const ExperimentConfig& cfg) {
  auto manifest = data::synthesize_dataset(cfg.data.n_pairs, cfg.data.seed, cfg.data.gen);
  auto batches =
      data::make_batches(manifest.split_view("train"), cfg.trainer.batch, /*shuffle_seed=*/1,
                         /*train=*/true);
  return batches.front();
}

}  // namespace

static void BM_synthesize_pair(benchmark::State& state) {
  data::GeneratorConfig gen;
  gen.image_size = state.range(0);
  gen.tumor_fraction = 1.0;
  Rng rng(11);
  int64_t i = 0;
  for (auto _ : state) {
    auto f = data::draw_factors(rng, true, gen);
    auto s = data::render_sample(f, gen, static_cast<uint64_t>(i++));
    benchmark::DoNotOptimize(s.x_w.pix.data());
  }
}
BENCHMARK(BM_synthesize_pair)->Arg(32)->Arg(64);

static void BM_model_forward(benchmark::State& state) {
  auto cfg = bench_config(32, 8, static_cast<int64_t>(state.range(0)));
  Model model(model_config_of(cfg), 1);
  auto batch = first_batch(cfg);
  for (auto _ : state) {
    auto out = model.forward(batch.x_w, batch.x_n);
    benchmark::DoNotOptimize(out.logits.value().data());
  }
}
BENCHMARK(BM_model_forward)->Arg(2)->Arg(8);

static void BM_train_step(benchmark::State& state) {
  auto cfg = bench_config(32, 8, static_cast<int64_t>(state.range(0)));
  Model model(model_config_of(cfg), 1);
  Trainer trainer(model, cfg);
  auto batch = first_batch(cfg);
  trainer.ensure_sigma(batch);
  int64_t step = 0;
  for (auto _ : state) {
    auto report = trainer.train_step(batch, /*epoch=*/1, step++);
    benchmark::DoNotOptimize(report.total);
  }
}
BENCHMARK(BM_train_step)->Arg(2)->Arg(8);

static void BM_predict(benchmark::State& state) {
  auto cfg = bench_config(32, 8, 2);
  Model model(model_config_of(cfg), 1);
  auto batch = first_batch(cfg);
  for (auto _ : state) {
    auto mask = model.predict(batch.x_w, batch.x_n);
    benchmark::DoNotOptimize(mask.data());
  }
}
BENCHMARK(BM_predict);

BENCHMARK_MAIN();
