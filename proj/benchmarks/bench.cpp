#include <benchmark/benchmark.h>

#include "poft/objectives.hpp"

using namespace poft;

namespace {

TransformerLM bench_model(int dim) {
  ModelConfig cfg;
  cfg.dim = dim;
  cfg.n_layers = 2;
  cfg.n_heads = 4;
  cfg.max_seq = 128;
  return TransformerLM::init(cfg, Tokenizer::byte_level(), 1);
}

Example bench_example() {
  Example ex;
  ex.instruction = "sort: 4 9 1 7 3";
  ex.response = "1 3 4 7 9";
  ex.rehash();
  return ex;
}

void BM_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  Tensor a = Tensor::randn({n, n}, 1.0, rng);
  Tensor b = Tensor::randn({n, n}, 1.0, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b).data().data());
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_forward_logits(benchmark::State& state) {
  TransformerLM m = bench_model(static_cast<int>(state.range(0)));
  std::vector<int> ids(64);
  Rng rng(3);
  for (int& id : ids) id = static_cast<int>(3 + rand_index(rng, 256));
  for (auto _ : state) benchmark::DoNotOptimize(m.forward_logits(ids).data().data());
}
BENCHMARK(BM_forward_logits)->Arg(32)->Arg(64)->Arg(128);

void BM_ce_loss_backward(benchmark::State& state) {
  TransformerLM m = bench_model(static_cast<int>(state.range(0)));
  std::vector<Example> batch{bench_example()};
  Tape tape;
  for (auto _ : state) {
    TapeScope scope(tape);
    m.zero_grads();
    LossOutput out = ce_loss(m, batch);
    backward(out.loss);
    tape.clear();
    benchmark::DoNotOptimize(out.loss.item());
  }
}
BENCHMARK(BM_ce_loss_backward)->Arg(32)->Arg(64)->Arg(128);

void BM_poft_loss_backward(benchmark::State& state) {
  TransformerLM m = bench_model(static_cast<int>(state.range(0)));
  std::vector<Example> batch{bench_example()};
  std::vector<std::vector<PreferenceScore>> refs{{PreferenceScore::make("a", -20.0, 10),
                                                  PreferenceScore::make("b", -25.0, 10),
                                                  PreferenceScore::make("c", -18.0, 10)}};
  Tape tape;
  for (auto _ : state) {
    TapeScope scope(tape);
    m.zero_grads();
    LossOutput out = poft_loss(m, batch, refs, AggStrategy::avg);
    backward(out.loss);
    tape.clear();
    benchmark::DoNotOptimize(out.loss.item());
  }
}
BENCHMARK(BM_poft_loss_backward)->Arg(32)->Arg(64)->Arg(128);

}  // namespace

BENCHMARK_MAIN();
