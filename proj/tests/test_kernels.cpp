#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <omp.h>

#include "dlgforge/kernels.hpp"
#include "test_util.hpp"

using namespace dlg;
using testutil::bitwise_equal;
using testutil::random_vector_t;

namespace {

// Oversubscribe the single core so scheduling actually splits the loops.
struct ThreadSetter {
  ThreadSetter() { omp_set_num_threads(3); }
} set_threads;

template <class T>
void check_linear_family(int M, int K, int N, u64 seed) {
  Rng rng(seed);
  auto x = random_vector_t<T>(rng, static_cast<size_t>(M) * K);
  auto w = random_vector_t<T>(rng, static_cast<size_t>(N) * K);
  auto b = random_vector_t<T>(rng, static_cast<size_t>(N));
  std::vector<T> y_ref(static_cast<size_t>(M) * N), y_opt(y_ref.size());
  kern_ref::linear_fwd(y_ref.data(), x.data(), w.data(), b.data(), M, K, N);
  kern::linear_fwd(y_opt.data(), x.data(), w.data(), b.data(), M, K, N);
  CHECK(bitwise_equal(y_ref, y_opt));

  auto dy = random_vector_t<T>(rng, y_ref.size());
  std::vector<T> dx_ref(x.size(), T(1)), dx_opt(x.size(), T(1));
  kern_ref::linear_bwd_input(dx_ref.data(), dy.data(), w.data(), M, K, N);
  kern::linear_bwd_input(dx_opt.data(), dy.data(), w.data(), M, K, N);
  CHECK(bitwise_equal(dx_ref, dx_opt));

  std::vector<T> dw_ref(w.size(), T(0)), dw_opt(w.size(), T(0));
  std::vector<T> db_ref(b.size(), T(0)), db_opt(b.size(), T(0));
  kern_ref::linear_bwd_params(dw_ref.data(), db_ref.data(), dy.data(), x.data(), M, K, N);
  kern::linear_bwd_params(dw_opt.data(), db_opt.data(), dy.data(), x.data(), M, K, N);
  CHECK(bitwise_equal(dw_ref, dw_opt));
  CHECK(bitwise_equal(db_ref, db_opt));
}

}  // namespace

TEST_CASE("linear kernels: parallel output is bit-identical to the serial reference") {
  check_linear_family<double>(7, 33, 12, 1);
  check_linear_family<double>(16, 64, 48, 2);
  check_linear_family<float>(7, 33, 12, 3);
  check_linear_family<float>(16, 64, 48, 4);
  check_linear_family<double>(1, 5, 3, 5);
}

TEST_CASE("linear_fwd matches a plain double-accumulation oracle") {
  Rng rng(42);
  const int M = 5, K = 17, N = 9;
  auto x = random_vector_t<double>(rng, M * K);
  auto w = random_vector_t<double>(rng, N * K);
  auto b = random_vector_t<double>(rng, N);
  std::vector<double> y(M * N);
  kern::linear_fwd(y.data(), x.data(), w.data(), b.data(), M, K, N);
  for (int m = 0; m < M; ++m)
    for (int n = 0; n < N; ++n) {
      double expect = b[n];
      for (int k = 0; k < K; ++k) expect += x[m * K + k] * w[n * K + k];
      CHECK(y[m * N + n] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("layernorm kernels: bitwise parallel/serial agreement and correctness") {
  Rng rng(7);
  const int M = 11, C = 37;
  auto x = random_vector_t<double>(rng, M * C, 2.0);
  auto g = random_vector_t<double>(rng, C);
  auto b = random_vector_t<double>(rng, C);
  std::vector<double> y_ref(M * C), y_opt(M * C), mean_ref(M), mean_opt(M), rstd_ref(M), rstd_opt(M);
  kern_ref::layernorm_fwd(y_ref.data(), mean_ref.data(), rstd_ref.data(), x.data(), g.data(),
                          b.data(), M, C);
  kern::layernorm_fwd(y_opt.data(), mean_opt.data(), rstd_opt.data(), x.data(), g.data(), b.data(),
                      M, C);
  CHECK(bitwise_equal(y_ref, y_opt));
  CHECK(bitwise_equal(mean_ref, mean_opt));
  CHECK(bitwise_equal(rstd_ref, rstd_opt));

  // Rows are standardized before gain/bias.
  for (int m = 0; m < M; ++m) {
    double s = 0;
    for (int c = 0; c < C; ++c) s += (y_ref[m * C + c] - b[c]) / g[c];
    CHECK(std::abs(s) < 1e-9);
  }

  auto dy = random_vector_t<double>(rng, M * C);
  std::vector<double> dx_ref(M * C, 0.5), dx_opt(M * C, 0.5);
  kern_ref::layernorm_bwd_input(dx_ref.data(), dy.data(), x.data(), mean_ref.data(),
                                rstd_ref.data(), g.data(), M, C);
  kern::layernorm_bwd_input(dx_opt.data(), dy.data(), x.data(), mean_ref.data(), rstd_ref.data(),
                            g.data(), M, C);
  CHECK(bitwise_equal(dx_ref, dx_opt));

  std::vector<double> dg_ref(C, 0), dg_opt(C, 0), db_ref(C, 0), db_opt(C, 0);
  kern_ref::layernorm_bwd_params(dg_ref.data(), db_ref.data(), dy.data(), x.data(),
                                 mean_ref.data(), rstd_ref.data(), M, C);
  kern::layernorm_bwd_params(dg_opt.data(), db_opt.data(), dy.data(), x.data(), mean_opt.data(),
                             rstd_opt.data(), M, C);
  CHECK(bitwise_equal(dg_ref, dg_opt));
  CHECK(bitwise_equal(db_ref, db_opt));
}

TEST_CASE("attention kernels: bitwise agreement and causal softmax rows") {
  Rng rng(9);
  const int B = 2, T = 13, C = 24, NH = 4;
  const size_t M = static_cast<size_t>(B) * T;
  auto qkv = random_vector_t<double>(rng, M * 3 * C);
  std::vector<double> out_ref(M * C), out_opt(M * C);
  std::vector<double> att_ref(static_cast<size_t>(B) * NH * T * T),
      att_opt(static_cast<size_t>(B) * NH * T * T);
  kern_ref::attention_fwd(out_ref.data(), att_ref.data(), qkv.data(), B, T, C, NH);
  kern::attention_fwd(out_opt.data(), att_opt.data(), qkv.data(), B, T, C, NH);
  CHECK(bitwise_equal(out_ref, out_opt));
  CHECK(bitwise_equal(att_ref, att_opt));

  // Each attention row is a distribution over positions <= t; future is 0.
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < NH; ++h)
      for (int t = 0; t < T; ++t) {
        const double* row = att_ref.data() + ((static_cast<size_t>(b) * NH + h) * T + t) * T;
        double sum = 0;
        for (int j = 0; j <= t; ++j) sum += row[j];
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
        for (int j = t + 1; j < T; ++j) CHECK(row[j] == 0.0);
      }

  auto dout = random_vector_t<double>(rng, M * C);
  std::vector<double> dqkv_ref(M * 3 * C, 0), dqkv_opt(M * 3 * C, 0);
  std::vector<double> scratch_ref(att_ref.size()), scratch_opt(att_ref.size());
  kern_ref::attention_bwd(dqkv_ref.data(), scratch_ref.data(), dout.data(), qkv.data(),
                          att_ref.data(), B, T, C, NH);
  kern::attention_bwd(dqkv_opt.data(), scratch_opt.data(), dout.data(), qkv.data(), att_opt.data(),
                      B, T, C, NH);
  CHECK(bitwise_equal(dqkv_ref, dqkv_opt));
}

TEST_CASE("elementwise kernels agree bitwise") {
  Rng rng(11);
  const size_t n = 10'007;
  auto x = random_vector_t<double>(rng, n, 1.5);
  auto dy = random_vector_t<double>(rng, n);

  std::vector<double> a(n), b(n);
  kern_ref::gelu_fwd(a.data(), x.data(), n);
  kern::gelu_fwd(b.data(), x.data(), n);
  CHECK(bitwise_equal(a, b));

  std::vector<double> da(n, 0.25), db_(n, 0.25);
  kern_ref::gelu_bwd(da.data(), x.data(), dy.data(), n);
  kern::gelu_bwd(db_.data(), x.data(), dy.data(), n);
  CHECK(bitwise_equal(da, db_));

  std::vector<double> s1(x.begin(), x.end()), s2(x.begin(), x.end());
  kern_ref::add_inplace(s1.data(), dy.data(), n);
  kern::add_inplace(s2.data(), dy.data(), n);
  CHECK(bitwise_equal(s1, s2));

  CHECK(kern_ref::sum_squares(x.data(), n) == kern::sum_squares(x.data(), n));
}

TEST_CASE("gelu matches the tanh formulation") {
  std::vector<double> xs = {-3.0, -1.0, -0.1, 0.0, 0.1, 1.0, 3.0};
  for (double x : xs) {
    double u = std::sqrt(2.0 / 3.14159265358979323846) * (x + 0.044715 * x * x * x);
    double expect = 0.5 * x * (1.0 + std::tanh(u));
    double got;
    kern::gelu_fwd(&got, &x, 1);
    CHECK(got == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("cross-entropy kernels: bitwise agreement, softmax gradient") {
  Rng rng(13);
  const int M = 9, V = 23;
  auto logits = random_vector_t<double>(rng, static_cast<size_t>(M) * V, 2.0);
  std::vector<i32> targets(M);
  for (int m = 0; m < M; ++m) targets[m] = static_cast<i32>(rng.uniform_u64(V));

  std::vector<double> nll_ref(M), nll_opt(M), lse_ref(M), lse_opt(M);
  kern_ref::ce_fwd(nll_ref.data(), lse_ref.data(), logits.data(), targets.data(), M, V);
  kern::ce_fwd(nll_opt.data(), lse_opt.data(), logits.data(), targets.data(), M, V);
  CHECK(bitwise_equal(nll_ref, nll_opt));
  CHECK(bitwise_equal(lse_ref, lse_opt));

  std::vector<double> w(M, 1.0);
  std::vector<double> dl_ref(logits.size()), dl_opt(logits.size());
  kern_ref::ce_bwd(dl_ref.data(), logits.data(), lse_ref.data(), targets.data(), w.data(), M, V);
  kern::ce_bwd(dl_opt.data(), logits.data(), lse_opt.data(), targets.data(), w.data(), M, V);
  CHECK(bitwise_equal(dl_ref, dl_opt));

  // dlogits rows sum to zero (softmax minus one-hot).
  for (int m = 0; m < M; ++m) {
    double s = 0;
    for (int v = 0; v < V; ++v) s += dl_ref[static_cast<size_t>(m) * V + v];
    CHECK(std::abs(s) < 1e-12);
  }
}

TEST_CASE("dropout: deterministic counter-based masks, agreement, scaling") {
  Rng rng(17);
  const size_t n = 4096;
  auto x = random_vector_t<double>(rng, n);
  std::vector<double> y_ref(n), y_opt(n), y_again(n);
  const double rate = 0.3;
  kern_ref::dropout_fwd(y_ref.data(), x.data(), n, rate, 99, 2);
  kern::dropout_fwd(y_opt.data(), x.data(), n, rate, 99, 2);
  kern::dropout_fwd(y_again.data(), x.data(), n, rate, 99, 2);
  CHECK(bitwise_equal(y_ref, y_opt));
  CHECK(bitwise_equal(y_opt, y_again));

  size_t kept = 0;
  for (size_t i = 0; i < n; ++i) {
    if (y_ref[i] != 0.0) {
      ++kept;
      CHECK(y_ref[i] == doctest::Approx(x[i] / (1.0 - rate)).epsilon(1e-12));
    }
  }
  double keep_frac = static_cast<double>(kept) / static_cast<double>(n);
  CHECK(keep_frac > 0.64);
  CHECK(keep_frac < 0.76);

  std::vector<double> y_other(n);
  kern::dropout_fwd(y_other.data(), x.data(), n, rate, 100, 2);
  CHECK(!bitwise_equal(y_ref, y_other));
}

TEST_CASE("adam kernels agree bitwise and descend") {
  Rng rng(19);
  const size_t n = 513;
  auto g = random_vector_t<double>(rng, n);
  std::vector<double> p1 = random_vector_t<double>(rng, n), p2 = p1;
  std::vector<double> m1(n, 0), v1(n, 0), m2(n, 0), v2(n, 0);
  for (int step = 1; step <= 3; ++step) {
    kern_ref::adam_update(p1.data(), g.data(), m1.data(), v1.data(), n, 0.01, 0.9, 0.999, 1e-8,
                          step);
    kern::adam_update(p2.data(), g.data(), m2.data(), v2.data(), n, 0.01, 0.9, 0.999, 1e-8, step);
  }
  CHECK(bitwise_equal(p1, p2));
  CHECK(bitwise_equal(m1, m2));
  CHECK(bitwise_equal(v1, v2));
}

TEST_CASE("embedding kernels agree bitwise") {
  Rng rng(23);
  const int M = 40, C = 16, V = 11, S = 13;
  auto wte = random_vector_t<double>(rng, static_cast<size_t>(V) * C);
  auto wpe = random_vector_t<double>(rng, static_cast<size_t>(S) * C);
  std::vector<i32> ids(M), pos(M);
  for (int m = 0; m < M; ++m) {
    ids[m] = static_cast<i32>(rng.uniform_u64(V));
    pos[m] = static_cast<i32>(rng.uniform_u64(S));
  }
  std::vector<double> out_ref(static_cast<size_t>(M) * C), out_opt(out_ref.size());
  kern_ref::embedding_fwd(out_ref.data(), wte.data(), wpe.data(), ids.data(), pos.data(), M, C);
  kern::embedding_fwd(out_opt.data(), wte.data(), wpe.data(), ids.data(), pos.data(), M, C);
  CHECK(bitwise_equal(out_ref, out_opt));

  auto dout = random_vector_t<double>(rng, out_ref.size());
  std::vector<double> dwte_ref(wte.size(), 0), dwte_opt(wte.size(), 0);
  std::vector<double> dwpe_ref(wpe.size(), 0), dwpe_opt(wpe.size(), 0);
  kern_ref::embedding_bwd(dwte_ref.data(), dwpe_ref.data(), dout.data(), ids.data(), pos.data(),
                          M, C);
  kern::embedding_bwd(dwte_opt.data(), dwpe_opt.data(), dout.data(), ids.data(), pos.data(), M, C);
  CHECK(bitwise_equal(dwte_ref, dwte_opt));
  CHECK(bitwise_equal(dwpe_ref, dwpe_opt));
}
