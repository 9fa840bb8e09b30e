// Serial-reference vs OpenMP kernel comparison, plus whole-model
// forward/backward timings at the desk-scale presets.

#include <benchmark/benchmark.h>

#include "dlgforge/kernels.hpp"
#include "dlgforge/model.hpp"

using namespace dlg;

namespace {

struct LinearData {
  int M, K, N;
  std::vector<double> x, w, b, y;

  LinearData(int m, int k, int n) : M(m), K(k), N(n) {
    Rng rng(1);
    x.resize(static_cast<size_t>(M) * K);
    w.resize(static_cast<size_t>(N) * K);
    b.resize(static_cast<size_t>(N));
    y.resize(static_cast<size_t>(M) * N);
    for (auto* v : {&x, &w, &b})
      for (double& e : *v) e = rng.normal();
  }
};

void BM_linear_fwd_serial(benchmark::State& state) {
  LinearData d(192, 128, 512);
  for (auto _ : state) {
    kern_ref::linear_fwd(d.y.data(), d.x.data(), d.w.data(), d.b.data(), d.M, d.K, d.N);
    benchmark::ClobberMemory();
  }
}

void BM_linear_fwd_omp(benchmark::State& state) {
  LinearData d(192, 128, 512);
  for (auto _ : state) {
    kern::linear_fwd(d.y.data(), d.x.data(), d.w.data(), d.b.data(), d.M, d.K, d.N);
    benchmark::ClobberMemory();
  }
}

void BM_linear_bwd_params_serial(benchmark::State& state) {
  LinearData d(192, 128, 512);
  std::vector<double> dw(d.w.size(), 0), db(d.b.size(), 0);
  for (auto _ : state) {
    kern_ref::linear_bwd_params(dw.data(), db.data(), d.y.data(), d.x.data(), d.M, d.K, d.N);
    benchmark::ClobberMemory();
  }
}

void BM_linear_bwd_params_omp(benchmark::State& state) {
  LinearData d(192, 128, 512);
  std::vector<double> dw(d.w.size(), 0), db(d.b.size(), 0);
  for (auto _ : state) {
    kern::linear_bwd_params(dw.data(), db.data(), d.y.data(), d.x.data(), d.M, d.K, d.N);
    benchmark::ClobberMemory();
  }
}

struct AttnData {
  static constexpr int B = 4, T = 48, C = 128, NH = 4;
  std::vector<double> qkv, out, att;

  AttnData() {
    Rng rng(2);
    qkv.resize(static_cast<size_t>(B) * T * 3 * C);
    out.resize(static_cast<size_t>(B) * T * C);
    att.resize(static_cast<size_t>(B) * NH * T * T);
    for (double& e : qkv) e = rng.normal();
  }
};

void BM_attention_fwd_serial(benchmark::State& state) {
  AttnData d;
  for (auto _ : state) {
    kern_ref::attention_fwd(d.out.data(), d.att.data(), d.qkv.data(), d.B, d.T, d.C, d.NH);
    benchmark::ClobberMemory();
  }
}

void BM_attention_fwd_omp(benchmark::State& state) {
  AttnData d;
  for (auto _ : state) {
    kern::attention_fwd(d.out.data(), d.att.data(), d.qkv.data(), d.B, d.T, d.C, d.NH);
    benchmark::ClobberMemory();
  }
}

void BM_gelu_serial(benchmark::State& state) {
  Rng rng(3);
  std::vector<double> x(1 << 16), y(x.size());
  for (double& e : x) e = rng.normal();
  for (auto _ : state) {
    kern_ref::gelu_fwd(y.data(), x.data(), x.size());
    benchmark::ClobberMemory();
  }
}

void BM_gelu_omp(benchmark::State& state) {
  Rng rng(3);
  std::vector<double> x(1 << 16), y(x.size());
  for (double& e : x) e = rng.normal();
  for (auto _ : state) {
    kern::gelu_fwd(y.data(), x.data(), x.size());
    benchmark::ClobberMemory();
  }
}

template <class T>
void bench_model_step(benchmark::State& state, const char* preset) {
  ModelConfig cfg = preset_config(preset);
  cfg.vocab_size = 320;
  cfg.max_seq_len = 48;
  cfg.dropout = 0.0;
  Parameters<T> params = init_parameters<T>(cfg, 7);
  Rng rng(8);
  const int B = 4, T_ = 48;
  std::vector<i32> ids(static_cast<size_t>(B) * T_);
  for (i32& id : ids) id = static_cast<i32>(rng.uniform_u64(cfg.vocab_size));
  std::vector<u8> mask(ids.size(), 1);
  Activations<T> acts;
  std::vector<T> grad(params.flat.size(), T(0));
  for (auto _ : state) {
    std::fill(grad.begin(), grad.end(), T(0));
    LossSums s = model_loss_and_grad(params, acts, ids.data(), mask.data(), B, T_, false, 0, grad);
    benchmark::DoNotOptimize(s.nll_sum);
  }
  state.SetItemsProcessed(state.iterations() * B * T_);
}

void BM_model_step_tiny_f32(benchmark::State& state) { bench_model_step<float>(state, "tiny"); }
void BM_model_step_small_f32(benchmark::State& state) { bench_model_step<float>(state, "small"); }
void BM_model_step_tiny_f64(benchmark::State& state) { bench_model_step<double>(state, "tiny"); }

BENCHMARK(BM_linear_fwd_serial);
BENCHMARK(BM_linear_fwd_omp);
BENCHMARK(BM_linear_bwd_params_serial);
BENCHMARK(BM_linear_bwd_params_omp);
BENCHMARK(BM_attention_fwd_serial);
BENCHMARK(BM_attention_fwd_omp);
BENCHMARK(BM_gelu_serial);
BENCHMARK(BM_gelu_omp);
BENCHMARK(BM_model_step_tiny_f32)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_model_step_tiny_f64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_model_step_small_f32)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
