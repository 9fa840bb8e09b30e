#pragma once

// Numeric kernels for the transformer forward/backward pass.
//
// Two implementations share this header:
//   dlg::kern      - OpenMP-parallel, register-blocked; used by the model.
//   dlg::kern_ref  - plain serial loops; the reference the tests and the
//                    benchmark compare against.
//
// Both compute every output element with the same sequence of IEEE-754
// operations (same reduction order, contraction disabled project-wide), so
// results are bit-identical between the two and independent of the number
// of OpenMP threads. Parallelism is only ever across independent output
// elements; no OpenMP reductions, no atomics.

#include <cmath>
#include <cstddef>

#include "dlgforge/common.hpp"

namespace dlg {

namespace detail {

constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluCubic = 0.044715;

template <class T>
inline T gelu_scalar(T x) {
  T c = static_cast<T>(kGeluScale);
  T u = c * (x + static_cast<T>(kGeluCubic) * x * x * x);
  T t = std::tanh(u);
  return static_cast<T>(0.5) * x * (static_cast<T>(1) + t);
}

template <class T>
inline T gelu_grad_scalar(T x) {
  T c = static_cast<T>(kGeluScale);
  T x2 = x * x;
  T u = c * (x + static_cast<T>(kGeluCubic) * x * x2);
  T t = std::tanh(u);
  T du = c * (static_cast<T>(1) + static_cast<T>(3) * static_cast<T>(kGeluCubic) * x2);
  return static_cast<T>(0.5) * (static_cast<T>(1) + t) +
         static_cast<T>(0.5) * x * (static_cast<T>(1) - t * t) * du;
}

/// Keep-probability decision for one dropout lane; counter-based so the mask
/// is a pure function of (seed, site, index) and never needs to be stored.
inline double dropout_u01(u64 seed, u64 site, u64 index) {
  u64 z = seed * 0x9E3779B97F4A7C15ull + site * 0xBF58476D1CE4E5B9ull +
          index * 0x94D049BB133111EBull + 0xD1B54A32D192ED03ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  z ^= z >> 31;
  return static_cast<double>(z >> 11) * 0x1.0p-53;
}

}  // namespace detail

// ===========================================================================
// Serial reference implementations.
// ===========================================================================
namespace kern_ref {

/// y[M,N] = x[M,K] * w[N,K]^T + b[N]   (w stored row-major as [out, in])
template <class T>
void linear_fwd(T* y, const T* x, const T* w, const T* b, int M, int K, int N) {
  for (int m = 0; m < M; ++m) {
    for (int n = 0; n < N; ++n) {
      T acc = b ? b[n] : static_cast<T>(0);
      const T* xr = x + static_cast<size_t>(m) * K;
      const T* wr = w + static_cast<size_t>(n) * K;
      for (int k = 0; k < K; ++k) acc += xr[k] * wr[k];
      y[static_cast<size_t>(m) * N + n] = acc;
    }
  }
}

/// dx[M,K] += dy[M,N] * w[N,K]
template <class T>
void linear_bwd_input(T* dx, const T* dy, const T* w, int M, int K, int N) {
  for (int m = 0; m < M; ++m) {
    T* dxr = dx + static_cast<size_t>(m) * K;
    const T* dyr = dy + static_cast<size_t>(m) * N;
    for (int n = 0; n < N; ++n) {
      const T* wr = w + static_cast<size_t>(n) * K;
      T g = dyr[n];
      for (int k = 0; k < K; ++k) dxr[k] += g * wr[k];
    }
  }
}

/// dw[N,K] += dy[M,N]^T * x[M,K];  db[N] += column sums of dy.
template <class T>
void linear_bwd_params(T* dw, T* db, const T* dy, const T* x, int M, int K, int N) {
  for (int n = 0; n < N; ++n) {
    T* dwr = dw + static_cast<size_t>(n) * K;
    for (int m = 0; m < M; ++m) {
      T g = dy[static_cast<size_t>(m) * N + n];
      if (db) db[n] += g;
      const T* xr = x + static_cast<size_t>(m) * K;
      for (int k = 0; k < K; ++k) dwr[k] += g * xr[k];
    }
  }
}

/// out[i,C] = wte[ids[i],C] + wpe[pos[i],C]
template <class T>
void embedding_fwd(T* out, const T* wte, const T* wpe, const i32* ids, const i32* pos,
                   int M, int C) {
  for (int m = 0; m < M; ++m) {
    const T* te = wte + static_cast<size_t>(ids[m]) * C;
    const T* pe = wpe + static_cast<size_t>(pos[m]) * C;
    T* o = out + static_cast<size_t>(m) * C;
    for (int c = 0; c < C; ++c) o[c] = te[c] + pe[c];
  }
}

template <class T>
void embedding_bwd(T* dwte, T* dwpe, const T* dout, const i32* ids, const i32* pos,
                   int M, int C) {
  for (int c = 0; c < C; ++c) {
    for (int m = 0; m < M; ++m) {
      T g = dout[static_cast<size_t>(m) * C + c];
      dwte[static_cast<size_t>(ids[m]) * C + c] += g;
      dwpe[static_cast<size_t>(pos[m]) * C + c] += g;
    }
  }
}

template <class T>
void layernorm_fwd(T* y, T* mean, T* rstd, const T* x, const T* g, const T* b,
                   int M, int C) {
  const T eps = static_cast<T>(1e-5);
  for (int m = 0; m < M; ++m) {
    const T* xr = x + static_cast<size_t>(m) * C;
    T mu = 0;
    for (int c = 0; c < C; ++c) mu += xr[c];
    mu /= static_cast<T>(C);
    T var = 0;
    for (int c = 0; c < C; ++c) {
      T d = xr[c] - mu;
      var += d * d;
    }
    var /= static_cast<T>(C);
    T rs = static_cast<T>(1) / std::sqrt(var + eps);
    T* yr = y + static_cast<size_t>(m) * C;
    for (int c = 0; c < C; ++c) yr[c] = (xr[c] - mu) * rs * g[c] + b[c];
    mean[m] = mu;
    rstd[m] = rs;
  }
}

template <class T>
void layernorm_bwd_input(T* dx, const T* dy, const T* x, const T* mean, const T* rstd,
                         const T* g, int M, int C) {
  for (int m = 0; m < M; ++m) {
    const T* xr = x + static_cast<size_t>(m) * C;
    const T* dyr = dy + static_cast<size_t>(m) * C;
    T* dxr = dx + static_cast<size_t>(m) * C;
    T mu = mean[m], rs = rstd[m];
    T sum_dn = 0, sum_dnn = 0;
    for (int c = 0; c < C; ++c) {
      T norm = (xr[c] - mu) * rs;
      T dn = dyr[c] * g[c];
      sum_dn += dn;
      sum_dnn += dn * norm;
    }
    sum_dn /= static_cast<T>(C);
    sum_dnn /= static_cast<T>(C);
    for (int c = 0; c < C; ++c) {
      T norm = (xr[c] - mu) * rs;
      T dn = dyr[c] * g[c];
      dxr[c] += (dn - sum_dn - norm * sum_dnn) * rs;
    }
  }
}

template <class T>
void layernorm_bwd_params(T* dg, T* db, const T* dy, const T* x, const T* mean,
                          const T* rstd, int M, int C) {
  for (int c = 0; c < C; ++c) {
    for (int m = 0; m < M; ++m) {
      T norm = (x[static_cast<size_t>(m) * C + c] - mean[m]) * rstd[m];
      T g = dy[static_cast<size_t>(m) * C + c];
      dg[c] += g * norm;
      db[c] += g;
    }
  }
}

template <class T>
void gelu_fwd(T* y, const T* x, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = detail::gelu_scalar(x[i]);
}

template <class T>
void gelu_bwd(T* dx, const T* x, const T* dy, size_t n) {
  for (size_t i = 0; i < n; ++i) dx[i] += dy[i] * detail::gelu_grad_scalar(x[i]);
}

template <class T>
void add_inplace(T* a, const T* b, size_t n) {
  for (size_t i = 0; i < n; ++i) a[i] += b[i];
}

/// Causal multi-head attention over a fused qkv activation.
/// qkv[M, 3C] rows hold (q | k | v); att[B,NH,T,T] stores post-softmax
/// probabilities for the backward pass; out[M, C] holds head-concatenated
/// context vectors (before the output projection).
template <class T>
void attention_fwd(T* out, T* att, const T* qkv, int B, int T_, int C, int NH) {
  const int HS = C / NH;
  const T scale = static_cast<T>(1) / std::sqrt(static_cast<T>(HS));
  for (int b = 0; b < B; ++b) {
    for (int h = 0; h < NH; ++h) {
      for (int t = 0; t < T_; ++t) {
        const T* q = qkv + (static_cast<size_t>(b) * T_ + t) * 3 * C + h * HS;
        T* arow = att + ((static_cast<size_t>(b) * NH + h) * T_ + t) * T_;
        T maxv = static_cast<T>(-1e30);
        for (int j = 0; j <= t; ++j) {
          const T* k = qkv + (static_cast<size_t>(b) * T_ + j) * 3 * C + C + h * HS;
          T dot = 0;
          for (int c = 0; c < HS; ++c) dot += q[c] * k[c];
          dot *= scale;
          arow[j] = dot;
          if (dot > maxv) maxv = dot;
        }
        T sum = 0;
        for (int j = 0; j <= t; ++j) {
          T e = std::exp(arow[j] - maxv);
          arow[j] = e;
          sum += e;
        }
        T inv = static_cast<T>(1) / sum;
        for (int j = 0; j <= t; ++j) arow[j] *= inv;
        for (int j = t + 1; j < T_; ++j) arow[j] = 0;
        T* o = out + (static_cast<size_t>(b) * T_ + t) * C + h * HS;
        for (int c = 0; c < HS; ++c) {
          T acc = 0;
          for (int j = 0; j <= t; ++j) {
            const T* v = qkv + (static_cast<size_t>(b) * T_ + j) * 3 * C + 2 * C + h * HS;
            acc += arow[j] * v[c];
          }
          o[c] = acc;
        }
      }
    }
  }
}

/// Backward of attention_fwd. datt is caller-provided scratch of the same
/// shape as att; dqkv is accumulated (+=).
template <class T>
void attention_bwd(T* dqkv, T* datt, const T* dout, const T* qkv, const T* att,
                   int B, int T_, int C, int NH) {
  const int HS = C / NH;
  const T scale = static_cast<T>(1) / std::sqrt(static_cast<T>(HS));
  // datt[t,j] = dout[t,:] . v[j,:]
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < NH; ++h)
      for (int t = 0; t < T_; ++t) {
        const T* dor = dout + (static_cast<size_t>(b) * T_ + t) * C + h * HS;
        T* drow = datt + ((static_cast<size_t>(b) * NH + h) * T_ + t) * T_;
        for (int j = 0; j <= t; ++j) {
          const T* v = qkv + (static_cast<size_t>(b) * T_ + j) * 3 * C + 2 * C + h * HS;
          T dot = 0;
          for (int c = 0; c < HS; ++c) dot += dor[c] * v[c];
          drow[j] = dot;
        }
      }
  // dv[j,:] += sum_{t>=j} att[t,j] * dout[t,:]
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < NH; ++h)
      for (int j = 0; j < T_; ++j) {
        T* dv = dqkv + (static_cast<size_t>(b) * T_ + j) * 3 * C + 2 * C + h * HS;
        for (int t = j; t < T_; ++t) {
          T a = att[((static_cast<size_t>(b) * NH + h) * T_ + t) * T_ + j];
          const T* dor = dout + (static_cast<size_t>(b) * T_ + t) * C + h * HS;
          for (int c = 0; c < HS; ++c) dv[c] += a * dor[c];
        }
      }
  // Softmax backward, scaled: datt[t,:] <- att[t,:] * (datt[t,:] - sum) * scale
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < NH; ++h)
      for (int t = 0; t < T_; ++t) {
        T* drow = datt + ((static_cast<size_t>(b) * NH + h) * T_ + t) * T_;
        const T* arow = att + ((static_cast<size_t>(b) * NH + h) * T_ + t) * T_;
        T s = 0;
        for (int j = 0; j <= t; ++j) s += arow[j] * drow[j];
        for (int j = 0; j <= t; ++j) drow[j] = arow[j] * (drow[j] - s) * scale;
      }
  // dq[t,:] += sum_{j<=t} dpre[t,j] * k[j,:]
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < NH; ++h)
      for (int t = 0; t < T_; ++t) {
        T* dq = dqkv + (static_cast<size_t>(b) * T_ + t) * 3 * C + h * HS;
        const T* drow = datt + ((static_cast<size_t>(b) * NH + h) * T_ + t) * T_;
        for (int j = 0; j <= t; ++j) {
          const T* k = qkv + (static_cast<size_t>(b) * T_ + j) * 3 * C + C + h * HS;
          T d = drow[j];
          for (int c = 0; c < HS; ++c) dq[c] += d * k[c];
        }
      }
  // dk[j,:] += sum_{t>=j} dpre[t,j] * q[t,:]
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < NH; ++h)
      for (int j = 0; j < T_; ++j) {
        T* dk = dqkv + (static_cast<size_t>(b) * T_ + j) * 3 * C + C + h * HS;
        for (int t = j; t < T_; ++t) {
          T d = datt[((static_cast<size_t>(b) * NH + h) * T_ + t) * T_ + j];
          const T* q = qkv + (static_cast<size_t>(b) * T_ + t) * 3 * C + h * HS;
          for (int c = 0; c < HS; ++c) dk[c] += d * q[c];
        }
      }
}

/// Per-row softmax cross-entropy: nll[m] = lse(logits[m,:]) - logits[m,target].
template <class T>
void ce_fwd(T* nll, T* lse, const T* logits, const i32* targets, int M, int V) {
  for (int m = 0; m < M; ++m) {
    const T* lr = logits + static_cast<size_t>(m) * V;
    T maxv = lr[0];
    for (int v = 1; v < V; ++v)
      if (lr[v] > maxv) maxv = lr[v];
    T sum = 0;
    for (int v = 0; v < V; ++v) sum += std::exp(lr[v] - maxv);
    T l = maxv + std::log(sum);
    lse[m] = l;
    nll[m] = l - lr[targets[m]];
  }
}

/// dlogits[m,v] = weight[m] * (softmax(logits[m,:])[v] - 1[v == target]).
template <class T>
void ce_bwd(T* dlogits, const T* logits, const T* lse, const i32* targets,
            const T* weights, int M, int V) {
  for (int m = 0; m < M; ++m) {
    const T* lr = logits + static_cast<size_t>(m) * V;
    T* dr = dlogits + static_cast<size_t>(m) * V;
    T w = weights[m];
    T l = lse[m];
    for (int v = 0; v < V; ++v) dr[v] = w * std::exp(lr[v] - l);
    dr[targets[m]] -= w;
  }
}

template <class T>
void dropout_fwd(T* y, const T* x, size_t n, double rate, u64 seed, u64 site) {
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (size_t i = 0; i < n; ++i)
    y[i] = detail::dropout_u01(seed, site, i) >= rate ? x[i] * keep_scale : static_cast<T>(0);
}

template <class T>
void dropout_bwd(T* dx, const T* dy, size_t n, double rate, u64 seed, u64 site) {
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (size_t i = 0; i < n; ++i)
    dx[i] = detail::dropout_u01(seed, site, i) >= rate ? dy[i] * keep_scale : static_cast<T>(0);
}

template <class T>
void adam_update(T* p, const T* g, T* m, T* v, size_t n, double lr, double beta1,
                 double beta2, double eps, int step) {
  const T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2);
  const T lr_t = static_cast<T>(lr);
  const T eps_t = static_cast<T>(eps);
  const T bc1 = static_cast<T>(1.0 - std::pow(beta1, step));
  const T bc2 = static_cast<T>(1.0 - std::pow(beta2, step));
  for (size_t i = 0; i < n; ++i) {
    m[i] = b1 * m[i] + (static_cast<T>(1) - b1) * g[i];
    v[i] = b2 * v[i] + (static_cast<T>(1) - b2) * g[i] * g[i];
    T mhat = m[i] / bc1;
    T vhat = v[i] / bc2;
    p[i] -= lr_t * mhat / (std::sqrt(vhat) + eps_t);
  }
}

/// Deterministic sum of squares: fixed 4096-element chunks summed serially,
/// then chunk partials summed in index order. Independent of thread count.
template <class T>
double sum_squares(const T* x, size_t n) {
  constexpr size_t kChunk = 4096;
  size_t nchunks = (n + kChunk - 1) / kChunk;
  std::vector<double> partials(nchunks, 0.0);
  for (size_t c = 0; c < nchunks; ++c) {
    size_t lo = c * kChunk, hi = lo + kChunk < n ? lo + kChunk : n;
    double s = 0;
    for (size_t i = lo; i < hi; ++i) s += static_cast<double>(x[i]) * static_cast<double>(x[i]);
    partials[c] = s;
  }
  double total = 0;
  for (double p : partials) total += p;
  return total;
}

template <class T>
void scale_inplace(T* x, size_t n, T s) {
  for (size_t i = 0; i < n; ++i) x[i] *= s;
}

}  // namespace kern_ref

// ===========================================================================
// OpenMP-parallel implementations. Bit-identical to kern_ref by construction:
// every output element runs the same scalar reduction in the same order; the
// pragmas only distribute independent elements across threads.
// ===========================================================================
namespace kern {

template <class T>
void linear_fwd(T* y, const T* x, const T* w, const T* b, int M, int K, int N) {
#pragma omp parallel for schedule(static)
  for (int m = 0; m < M; ++m) {
    const T* xr = x + static_cast<size_t>(m) * K;
    T* yr = y + static_cast<size_t>(m) * N;
    int n = 0;
    // 4-wide output blocking: four independent accumulators break the FMA
    // dependence chain; each accumulator still sums k in ascending order.
    for (; n + 4 <= N; n += 4) {
      const T* w0 = w + static_cast<size_t>(n) * K;
      const T* w1 = w0 + K;
      const T* w2 = w1 + K;
      const T* w3 = w2 + K;
      T a0 = b ? b[n] : static_cast<T>(0);
      T a1 = b ? b[n + 1] : static_cast<T>(0);
      T a2 = b ? b[n + 2] : static_cast<T>(0);
      T a3 = b ? b[n + 3] : static_cast<T>(0);
      for (int k = 0; k < K; ++k) {
        T xv = xr[k];
        a0 += xv * w0[k];
        a1 += xv * w1[k];
        a2 += xv * w2[k];
        a3 += xv * w3[k];
      }
      yr[n] = a0;
      yr[n + 1] = a1;
      yr[n + 2] = a2;
      yr[n + 3] = a3;
    }
    for (; n < N; ++n) {
      const T* wr = w + static_cast<size_t>(n) * K;
      T acc = b ? b[n] : static_cast<T>(0);
      for (int k = 0; k < K; ++k) acc += xr[k] * wr[k];
      yr[n] = acc;
    }
  }
}

template <class T>
void linear_bwd_input(T* dx, const T* dy, const T* w, int M, int K, int N) {
#pragma omp parallel for schedule(static)
  for (int m = 0; m < M; ++m) {
    T* dxr = dx + static_cast<size_t>(m) * K;
    const T* dyr = dy + static_cast<size_t>(m) * N;
    for (int n = 0; n < N; ++n) {
      const T* wr = w + static_cast<size_t>(n) * K;
      T g = dyr[n];
      for (int k = 0; k < K; ++k) dxr[k] += g * wr[k];
    }
  }
}

template <class T>
void linear_bwd_params(T* dw, T* db, const T* dy, const T* x, int M, int K, int N) {
#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) {
    T* dwr = dw + static_cast<size_t>(n) * K;
    for (int m = 0; m < M; ++m) {
      T g = dy[static_cast<size_t>(m) * N + n];
      if (db) db[n] += g;
      const T* xr = x + static_cast<size_t>(m) * K;
      for (int k = 0; k < K; ++k) dwr[k] += g * xr[k];
    }
  }
}

template <class T>
void embedding_fwd(T* out, const T* wte, const T* wpe, const i32* ids, const i32* pos,
                   int M, int C) {
#pragma omp parallel for schedule(static)
  for (int m = 0; m < M; ++m) {
    const T* te = wte + static_cast<size_t>(ids[m]) * C;
    const T* pe = wpe + static_cast<size_t>(pos[m]) * C;
    T* o = out + static_cast<size_t>(m) * C;
    for (int c = 0; c < C; ++c) o[c] = te[c] + pe[c];
  }
}

template <class T>
void embedding_bwd(T* dwte, T* dwpe, const T* dout, const i32* ids, const i32* pos,
                   int M, int C) {
  // Parallel across channels: rows collide on the same embedding entries, so
  // the token loop stays serial (ascending) within each channel lane.
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    for (int m = 0; m < M; ++m) {
      T g = dout[static_cast<size_t>(m) * C + c];
      dwte[static_cast<size_t>(ids[m]) * C + c] += g;
      dwpe[static_cast<size_t>(pos[m]) * C + c] += g;
    }
  }
}

template <class T>
void layernorm_fwd(T* y, T* mean, T* rstd, const T* x, const T* g, const T* b,
                   int M, int C) {
  const T eps = static_cast<T>(1e-5);
#pragma omp parallel for schedule(static)
  for (int m = 0; m < M; ++m) {
    const T* xr = x + static_cast<size_t>(m) * C;
    T mu = 0;
    for (int c = 0; c < C; ++c) mu += xr[c];
    mu /= static_cast<T>(C);
    T var = 0;
    for (int c = 0; c < C; ++c) {
      T d = xr[c] - mu;
      var += d * d;
    }
    var /= static_cast<T>(C);
    T rs = static_cast<T>(1) / std::sqrt(var + eps);
    T* yr = y + static_cast<size_t>(m) * C;
    for (int c = 0; c < C; ++c) yr[c] = (xr[c] - mu) * rs * g[c] + b[c];
    mean[m] = mu;
    rstd[m] = rs;
  }
}

template <class T>
void layernorm_bwd_input(T* dx, const T* dy, const T* x, const T* mean, const T* rstd,
                         const T* g, int M, int C) {
#pragma omp parallel for schedule(static)
  for (int m = 0; m < M; ++m) {
    const T* xr = x + static_cast<size_t>(m) * C;
    const T* dyr = dy + static_cast<size_t>(m) * C;
    T* dxr = dx + static_cast<size_t>(m) * C;
    T mu = mean[m], rs = rstd[m];
    T sum_dn = 0, sum_dnn = 0;
    for (int c = 0; c < C; ++c) {
      T norm = (xr[c] - mu) * rs;
      T dn = dyr[c] * g[c];
      sum_dn += dn;
      sum_dnn += dn * norm;
    }
    sum_dn /= static_cast<T>(C);
    sum_dnn /= static_cast<T>(C);
    for (int c = 0; c < C; ++c) {
      T norm = (xr[c] - mu) * rs;
      T dn = dyr[c] * g[c];
      dxr[c] += (dn - sum_dn - norm * sum_dnn) * rs;
    }
  }
}

template <class T>
void layernorm_bwd_params(T* dg, T* db, const T* dy, const T* x, const T* mean,
                          const T* rstd, int M, int C) {
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    for (int m = 0; m < M; ++m) {
      T norm = (x[static_cast<size_t>(m) * C + c] - mean[m]) * rstd[m];
      T g = dy[static_cast<size_t>(m) * C + c];
      dg[c] += g * norm;
      db[c] += g;
    }
  }
}

template <class T>
void gelu_fwd(T* y, const T* x, size_t n) {
#pragma omp parallel for schedule(static)
  for (i64 i = 0; i < static_cast<i64>(n); ++i) y[i] = detail::gelu_scalar(x[i]);
}

template <class T>
void gelu_bwd(T* dx, const T* x, const T* dy, size_t n) {
#pragma omp parallel for schedule(static)
  for (i64 i = 0; i < static_cast<i64>(n); ++i)
    dx[i] += dy[i] * detail::gelu_grad_scalar(x[i]);
}

template <class T>
void add_inplace(T* a, const T* b, size_t n) {
#pragma omp parallel for schedule(static)
  for (i64 i = 0; i < static_cast<i64>(n); ++i) a[i] += b[i];
}

template <class T>
void attention_fwd(T* out, T* att, const T* qkv, int B, int T_, int C, int NH) {
  const int HS = C / NH;
  const T scale = static_cast<T>(1) / std::sqrt(static_cast<T>(HS));
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < B; ++b) {
    for (int h = 0; h < NH; ++h) {
      for (int t = 0; t < T_; ++t) {
        const T* q = qkv + (static_cast<size_t>(b) * T_ + t) * 3 * C + h * HS;
        T* arow = att + ((static_cast<size_t>(b) * NH + h) * T_ + t) * T_;
        T maxv = static_cast<T>(-1e30);
        for (int j = 0; j <= t; ++j) {
          const T* k = qkv + (static_cast<size_t>(b) * T_ + j) * 3 * C + C + h * HS;
          T dot = 0;
          for (int c = 0; c < HS; ++c) dot += q[c] * k[c];
          dot *= scale;
          arow[j] = dot;
          if (dot > maxv) maxv = dot;
        }
        T sum = 0;
        for (int j = 0; j <= t; ++j) {
          T e = std::exp(arow[j] - maxv);
          arow[j] = e;
          sum += e;
        }
        T inv = static_cast<T>(1) / sum;
        for (int j = 0; j <= t; ++j) arow[j] *= inv;
        for (int j = t + 1; j < T_; ++j) arow[j] = 0;
        T* o = out + (static_cast<size_t>(b) * T_ + t) * C + h * HS;
        for (int c = 0; c < HS; ++c) {
          T acc = 0;
          for (int j = 0; j <= t; ++j) {
            const T* v = qkv + (static_cast<size_t>(b) * T_ + j) * 3 * C + 2 * C + h * HS;
            acc += arow[j] * v[c];
          }
          o[c] = acc;
        }
      }
    }
  }
}

template <class T>
void attention_bwd(T* dqkv, T* datt, const T* dout, const T* qkv, const T* att,
                   int B, int T_, int C, int NH) {
  const int HS = C / NH;
  const T scale = static_cast<T>(1) / std::sqrt(static_cast<T>(HS));
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < NH; ++h)
      for (int t = 0; t < T_; ++t) {
        const T* dor = dout + (static_cast<size_t>(b) * T_ + t) * C + h * HS;
        T* drow = datt + ((static_cast<size_t>(b) * NH + h) * T_ + t) * T_;
        for (int j = 0; j <= t; ++j) {
          const T* v = qkv + (static_cast<size_t>(b) * T_ + j) * 3 * C + 2 * C + h * HS;
          T dot = 0;
          for (int c = 0; c < HS; ++c) dot += dor[c] * v[c];
          drow[j] = dot;
        }
      }
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < NH; ++h)
      for (int j = 0; j < T_; ++j) {
        T* dv = dqkv + (static_cast<size_t>(b) * T_ + j) * 3 * C + 2 * C + h * HS;
        for (int t = j; t < T_; ++t) {
          T a = att[((static_cast<size_t>(b) * NH + h) * T_ + t) * T_ + j];
          const T* dor = dout + (static_cast<size_t>(b) * T_ + t) * C + h * HS;
          for (int c = 0; c < HS; ++c) dv[c] += a * dor[c];
        }
      }
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < NH; ++h)
      for (int t = 0; t < T_; ++t) {
        T* drow = datt + ((static_cast<size_t>(b) * NH + h) * T_ + t) * T_;
        const T* arow = att + ((static_cast<size_t>(b) * NH + h) * T_ + t) * T_;
        T s = 0;
        for (int j = 0; j <= t; ++j) s += arow[j] * drow[j];
        for (int j = 0; j <= t; ++j) drow[j] = arow[j] * (drow[j] - s) * scale;
      }
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < NH; ++h)
      for (int t = 0; t < T_; ++t) {
        T* dq = dqkv + (static_cast<size_t>(b) * T_ + t) * 3 * C + h * HS;
        const T* drow = datt + ((static_cast<size_t>(b) * NH + h) * T_ + t) * T_;
        for (int j = 0; j <= t; ++j) {
          const T* k = qkv + (static_cast<size_t>(b) * T_ + j) * 3 * C + C + h * HS;
          T d = drow[j];
          for (int c = 0; c < HS; ++c) dq[c] += d * k[c];
        }
      }
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < NH; ++h)
      for (int j = 0; j < T_; ++j) {
        T* dk = dqkv + (static_cast<size_t>(b) * T_ + j) * 3 * C + C + h * HS;
        for (int t = j; t < T_; ++t) {
          T d = datt[((static_cast<size_t>(b) * NH + h) * T_ + t) * T_ + j];
          const T* q = qkv + (static_cast<size_t>(b) * T_ + t) * 3 * C + h * HS;
          for (int c = 0; c < HS; ++c) dk[c] += d * q[c];
        }
      }
}

template <class T>
void ce_fwd(T* nll, T* lse, const T* logits, const i32* targets, int M, int V) {
#pragma omp parallel for schedule(static)
  for (int m = 0; m < M; ++m) {
    const T* lr = logits + static_cast<size_t>(m) * V;
    T maxv = lr[0];
    for (int v = 1; v < V; ++v)
      if (lr[v] > maxv) maxv = lr[v];
    T sum = 0;
    for (int v = 0; v < V; ++v) sum += std::exp(lr[v] - maxv);
    T l = maxv + std::log(sum);
    lse[m] = l;
    nll[m] = l - lr[targets[m]];
  }
}

template <class T>
void ce_bwd(T* dlogits, const T* logits, const T* lse, const i32* targets,
            const T* weights, int M, int V) {
#pragma omp parallel for schedule(static)
  for (int m = 0; m < M; ++m) {
    const T* lr = logits + static_cast<size_t>(m) * V;
    T* dr = dlogits + static_cast<size_t>(m) * V;
    T w = weights[m];
    T l = lse[m];
    for (int v = 0; v < V; ++v) dr[v] = w * std::exp(lr[v] - l);
    dr[targets[m]] -= w;
  }
}

template <class T>
void dropout_fwd(T* y, const T* x, size_t n, double rate, u64 seed, u64 site) {
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
#pragma omp parallel for schedule(static)
  for (i64 i = 0; i < static_cast<i64>(n); ++i)
    y[i] = detail::dropout_u01(seed, site, static_cast<u64>(i)) >= rate
               ? x[i] * keep_scale
               : static_cast<T>(0);
}

template <class T>
void dropout_bwd(T* dx, const T* dy, size_t n, double rate, u64 seed, u64 site) {
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
#pragma omp parallel for schedule(static)
  for (i64 i = 0; i < static_cast<i64>(n); ++i)
    dx[i] = detail::dropout_u01(seed, site, static_cast<u64>(i)) >= rate
                ? dy[i] * keep_scale
                : static_cast<T>(0);
}

template <class T>
void adam_update(T* p, const T* g, T* m, T* v, size_t n, double lr, double beta1,
                 double beta2, double eps, int step) {
  const T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2);
  const T lr_t = static_cast<T>(lr);
  const T eps_t = static_cast<T>(eps);
  const T bc1 = static_cast<T>(1.0 - std::pow(beta1, step));
  const T bc2 = static_cast<T>(1.0 - std::pow(beta2, step));
#pragma omp parallel for schedule(static)
  for (i64 i = 0; i < static_cast<i64>(n); ++i) {
    m[i] = b1 * m[i] + (static_cast<T>(1) - b1) * g[i];
    v[i] = b2 * v[i] + (static_cast<T>(1) - b2) * g[i] * g[i];
    T mhat = m[i] / bc1;
    T vhat = v[i] / bc2;
    p[i] -= lr_t * mhat / (std::sqrt(vhat) + eps_t);
  }
}

template <class T>
double sum_squares(const T* x, size_t n) {
  constexpr size_t kChunk = 4096;
  size_t nchunks = (n + kChunk - 1) / kChunk;
  std::vector<double> partials(nchunks, 0.0);
#pragma omp parallel for schedule(static)
  for (i64 c = 0; c < static_cast<i64>(nchunks); ++c) {
    size_t lo = static_cast<size_t>(c) * kChunk;
    size_t hi = lo + kChunk < n ? lo + kChunk : n;
    double s = 0;
    for (size_t i = lo; i < hi; ++i) s += static_cast<double>(x[i]) * static_cast<double>(x[i]);
    partials[c] = s;
  }
  double total = 0;
  for (double p : partials) total += p;
  return total;
}

template <class T>
void scale_inplace(T* x, size_t n, T s) {
#pragma omp parallel for schedule(static)
  for (i64 i = 0; i < static_cast<i64>(n); ++i) x[i] *= s;
}

}  // namespace kern

}  // namespace dlg
