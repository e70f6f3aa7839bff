#include <benchmark/benchmark.h>

#include "landseg/blockgrid.hpp"
#include "landseg/datamodel.hpp"
#include "landseg/encoder.hpp"
#include "landseg/fusion_decoder.hpp"
#include "landseg/losses.hpp"
#include "landseg/metrics.hpp"
#include "landseg/rng.hpp"

using namespace landseg;

namespace {

Tensor random_batch(int n, int c, int side, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({n, c, side, side});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform();
  return t;
}

void bench_encoder_forward(benchmark::State& state) {
  const int channels = static_cast<int>(state.range(0));
  EncoderNet net(EncoderConfig::tiny(channels), 1);
  const Tensor x = random_batch(4, 3, 512, 2);
  for (auto _ : state) {
    Tensor y = net.forward(x, nn::Mode::train);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(bench_encoder_forward)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void bench_encoder_backward(benchmark::State& state) {
  EncoderNet net(EncoderConfig::tiny(static_cast<int>(state.range(0))), 1);
  const Tensor x = random_batch(4, 3, 512, 2);
  Tensor y = net.forward(x, nn::Mode::train);
  Tensor g(y.shape());
  g.fill(1.0);
  for (auto _ : state) {
    net.forward(x, nn::Mode::train);
    Tensor gx = net.backward(g);
    benchmark::DoNotOptimize(gx.data());
  }
}
BENCHMARK(bench_encoder_backward)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void bench_decoder_forward(benchmark::State& state) {
  DecoderNet dec({32, 0.1}, 1);
  const Tensor f = random_batch(4, 32, 64, 3);
  for (auto _ : state) {
    Tensor p = dec.forward(f, nn::Mode::train);
    benchmark::DoNotOptimize(p.data());
  }
}
BENCHMARK(bench_decoder_forward)->Unit(benchmark::kMillisecond);

void bench_supcon_loss(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(4);
  Eigen::MatrixXd pos(n, 32), neg(n, 32);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < 32; ++j) {
      pos(i, j) = rng.normal();
      neg(i, j) = rng.normal();
    }
  pos = normalize_rows(pos);
  neg = normalize_rows(neg);
  SupconGrads grads;
  for (auto _ : state) {
    const LossValue v = supcon_loss({pos, neg, 0.07}, &grads);
    benchmark::DoNotOptimize(v.value);
  }
}
BENCHMARK(bench_supcon_loss)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);

void bench_classify_blocks(benchmark::State& state) {
  Rng rng(5);
  BinaryMask mask(512, 512);
  for (auto& v : mask.v) v = rng.uniform() < 0.2 ? 1 : 0;
  Tensor img({3, 512, 512});
  const Sample s = make_sample(std::move(img), std::move(mask), "bench");
  for (auto _ : state) {
    const BlockGrid grid = classify_blocks(s, 8);
    benchmark::DoNotOptimize(grid.counts_per_class);
  }
}
BENCHMARK(bench_classify_blocks)->Unit(benchmark::kMicrosecond);

void bench_metrics_accumulate(benchmark::State& state) {
  Rng rng(6);
  BinaryMask pred(512, 512), truth(512, 512);
  for (auto& v : pred.v) v = rng.uniform() < 0.5 ? 1 : 0;
  for (auto& v : truth.v) v = rng.uniform() < 0.2 ? 1 : 0;
  for (auto _ : state) {
    Confusion c;
    accumulate(pred, truth, c);
    benchmark::DoNotOptimize(c.tp);
  }
}
BENCHMARK(bench_metrics_accumulate)->Unit(benchmark::kMicrosecond);

void bench_synthetic_sample(benchmark::State& state) {
  SynthConfig cfg;
  cfg.n_positive = 1;
  for (auto _ : state) {
    cfg.seed++;
    const auto samples = generate_synthetic(cfg);
    benchmark::DoNotOptimize(samples.front().image.data());
  }
}
BENCHMARK(bench_synthetic_sample)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
