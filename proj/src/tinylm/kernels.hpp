#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "polneuron/tinylm.hpp"

namespace polneuron::tinylm::detail {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kInvSqrt2 = 0.70710678118654752440;

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
}

inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  const double pdf = std::exp(-0.5 * x * x) * (0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return cdf + x * pdf;
}

// out[T x N] = in[T x K] * w[K x N] (+ bias[N])
inline void matmul(const double* in, const double* w, const double* bias, std::size_t T,
                   std::size_t K, std::size_t N, double* out) {
  for (std::size_t t = 0; t < T; ++t) {
    double* o = out + t * N;
    if (bias) {
      for (std::size_t n = 0; n < N; ++n) o[n] = bias[n];
    } else {
      for (std::size_t n = 0; n < N; ++n) o[n] = 0.0;
    }
    const double* row = in + t * K;
    for (std::size_t k = 0; k < K; ++k) {
      const double a = row[k];
      const double* wk = w + k * N;
      for (std::size_t n = 0; n < N; ++n) o[n] += a * wk[n];
    }
  }
}

// out[T x N] += in[T x K] * w[K x N]
inline void matmul_accumulate(const double* in, const double* w, std::size_t T, std::size_t K,
                              std::size_t N, double* out) {
  for (std::size_t t = 0; t < T; ++t) {
    double* o = out + t * N;
    const double* row = in + t * K;
    for (std::size_t k = 0; k < K; ++k) {
      const double a = row[k];
      const double* wk = w + k * N;
      for (std::size_t n = 0; n < N; ++n) o[n] += a * wk[n];
    }
  }
}

// Given dout[T x N] for out = in * w: d_in += dout * w^T, d_w += in^T * dout.
// Either gradient target may be null.
inline void matmul_backward(const double* dout, const double* in, const double* w, std::size_t T,
                            std::size_t K, std::size_t N, double* d_in, double* d_w) {
  for (std::size_t t = 0; t < T; ++t) {
    const double* go = dout + t * N;
    if (d_in) {
      double* gi = d_in + t * K;
      for (std::size_t k = 0; k < K; ++k) {
        const double* wk = w + k * N;
        double acc = 0.0;
#pragma omp simd reduction(+ : acc)
        for (std::size_t n = 0; n < N; ++n) acc += go[n] * wk[n];
        gi[k] += acc;
      }
    }
    if (d_w) {
      const double* row = in + t * K;
      for (std::size_t k = 0; k < K; ++k) {
        const double a = row[k];
        if (a == 0.0) continue;
        double* dwk = d_w + k * N;
        for (std::size_t n = 0; n < N; ++n) dwk[n] += a * go[n];
      }
    }
  }
}

inline void layer_norm(const double* x, const double* gain, const double* bias, std::size_t T,
                       std::size_t D, double* out, double* xhat, double* rstd) {
  for (std::size_t t = 0; t < T; ++t) {
    const double* xr = x + t * D;
    double mean = 0.0;
    for (std::size_t i = 0; i < D; ++i) mean += xr[i];
    mean /= static_cast<double>(D);
    double var = 0.0;
    for (std::size_t i = 0; i < D; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= static_cast<double>(D);
    const double r = 1.0 / std::sqrt(var + kLayerNormEps);
    rstd[t] = r;
    for (std::size_t i = 0; i < D; ++i) {
      const double xh = (xr[i] - mean) * r;
      xhat[t * D + i] = xh;
      out[t * D + i] = xh * gain[i] + bias[i];
    }
  }
}

// dx += LN backward of dy; d_gain/d_bias accumulate.
inline void layer_norm_backward(const double* dy, const double* xhat, const double* rstd,
                                const double* gain, std::size_t T, std::size_t D, double* dx,
                                double* d_gain, double* d_bias) {
  std::vector<double> dxhat(D);
  for (std::size_t t = 0; t < T; ++t) {
    const double* g = dy + t * D;
    const double* xh = xhat + t * D;
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (std::size_t i = 0; i < D; ++i) {
      d_gain[i] += g[i] * xh[i];
      d_bias[i] += g[i];
      dxhat[i] = g[i] * gain[i];
      mean_dxhat += dxhat[i];
      mean_dxhat_xhat += dxhat[i] * xh[i];
    }
    mean_dxhat /= static_cast<double>(D);
    mean_dxhat_xhat /= static_cast<double>(D);
    for (std::size_t i = 0; i < D; ++i)
      dx[t * D + i] += rstd[t] * (dxhat[i] - mean_dxhat - xh[i] * mean_dxhat_xhat);
  }
}

struct BlockCache {
  std::vector<double> x_in, ln1_out, ln1_xhat, ln1_rstd;
  std::vector<double> q, k, v, probs, att;
  std::vector<double> x_mid, ln2_out, ln2_xhat, ln2_rstd;
  std::vector<double> u, g;
};

struct ForwardCache {
  std::size_t T = 0;
  std::vector<BlockCache> blocks;
  std::vector<double> x_final, lnf_out, lnf_xhat, lnf_rstd, logits;

  void resize(const ModelConfig& c, std::size_t seq_len) {
    T = seq_len;
    const std::size_t D = c.d_model, F = c.d_ff, H = c.n_heads;
    blocks.resize(c.n_layers);
    for (auto& b : blocks) {
      b.ln1_out.resize(T * D);
      b.ln1_xhat.resize(T * D);
      b.ln1_rstd.resize(T);
      b.q.resize(T * D);
      b.k.resize(T * D);
      b.v.resize(T * D);
      b.probs.resize(H * T * T);
      b.att.resize(T * D);
      b.ln2_out.resize(T * D);
      b.ln2_xhat.resize(T * D);
      b.ln2_rstd.resize(T);
      b.u.resize(T * F);
      b.g.resize(T * F);
    }
    lnf_out.resize(T * D);
    lnf_xhat.resize(T * D);
    lnf_rstd.resize(T);
    logits.resize(T * c.vocab_size);
  }
};

void validate_tokens(const ModelConfig& c, std::span<const TokenId> tokens);

void run_forward(const Parameters& params, std::span<const TokenId> tokens,
                 std::span<const ActivationOverride> overrides, bool last_logits_only,
                 ForwardCache& cache);

// Adds scale * d(loss)/d(params) into grads and returns the mean CE loss.
double accumulate_grads(const Parameters& params, std::span<const TokenId> tokens,
                        std::span<const TokenId> targets,
                        const std::vector<std::size_t>* loss_positions, double scale,
                        std::span<double> grads, ForwardCache& cache);

}  // namespace polneuron::tinylm::detail
