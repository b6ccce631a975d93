#include <benchmark/benchmark.h>

#include "ctxst/rng.hpp"
#include "ctxst/tensor.hpp"

using namespace ctxst;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, bool grad = false) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal() * 0.2;
  return Tensor(std::move(shape), std::move(v), grad);
}

void bm_matmul_forward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(11);
  Tensor a = random_tensor({n, n}, rng);
  Tensor b = random_tensor({n, n}, rng);
  for (auto _ : state) {
    Tape tape;
    Tensor c = matmul(tape, a, b);
    benchmark::DoNotOptimize(c.values().data());
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) * n * n * n);
}

void bm_matmul_train_step(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(12);
  Tensor a = random_tensor({n, n}, rng, true);
  Tensor b = random_tensor({n, n}, rng, true);
  for (auto _ : state) {
    a.zero_grad();
    b.zero_grad();
    Tape tape;
    Tensor loss = sum(tape, matmul(tape, a, b));
    tape.backward(loss);
    benchmark::DoNotOptimize(a.grad().data());
  }
}

void bm_ctc_loss(benchmark::State& state) {
  const auto frames = static_cast<std::size_t>(state.range(0));
  Rng rng(13);
  Tensor logits = random_tensor({frames, 40}, rng, true);
  std::vector<int> target;
  for (std::size_t i = 0; i < frames / 2; ++i) target.push_back(static_cast<int>(i % 37));
  for (auto _ : state) {
    logits.zero_grad();
    Tape tape;
    Tensor loss = ctc_loss(tape, log_softmax(tape, logits), target);
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.value());
  }
}

void bm_layer_norm(benchmark::State& state) {
  Rng rng(14);
  Tensor x = random_tensor({64, 64}, rng, true);
  Tensor g = Tensor({64}, 1.0, true);
  Tensor b = Tensor({64}, 0.0, true);
  for (auto _ : state) {
    Tape tape;
    Tensor y = layer_norm_rows(tape, x, g, b);
    benchmark::DoNotOptimize(y.values().data());
  }
}

}  // namespace

BENCHMARK(bm_matmul_forward)->Arg(32)->Arg(64)->Arg(128);
BENCHMARK(bm_matmul_train_step)->Arg(32)->Arg(64);
BENCHMARK(bm_ctc_loss)->Arg(16)->Arg(48);
BENCHMARK(bm_layer_norm);
