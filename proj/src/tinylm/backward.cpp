#include <algorithm>
#include <cmath>
#include <string>

#include "polneuron/error.hpp"
#include "polneuron/tinylm.hpp"
#include "tinylm/kernels.hpp"

namespace polneuron::tinylm {
namespace detail {

namespace {

std::vector<std::size_t> resolve_positions(std::size_t T,
                                           const std::vector<std::size_t>* loss_positions) {
  std::vector<std::size_t> pos;
  if (loss_positions == nullptr) {
    pos.resize(T);
    for (std::size_t i = 0; i < T; ++i) pos[i] = i;
    return pos;
  }
  pos = *loss_positions;
  std::sort(pos.begin(), pos.end());
  pos.erase(std::unique(pos.begin(), pos.end()), pos.end());
  require(!pos.empty(), ErrorKind::InvalidArgument, "loss position set is empty");
  require(pos.back() < T, ErrorKind::InvalidArgument,
          "loss position " + std::to_string(pos.back()) + " is outside the sequence");
  return pos;
}

void validate_targets(const ModelConfig& c, std::span<const TokenId> tokens,
                      std::span<const TokenId> targets) {
  require(tokens.size() == targets.size(), ErrorKind::InvalidArgument,
          "targets length " + std::to_string(targets.size()) + " does not match tokens length " +
              std::to_string(tokens.size()));
  for (auto t : targets)
    require(t >= 0 && static_cast<std::size_t>(t) < c.vocab_size, ErrorKind::InvalidArgument,
            "target id " + std::to_string(t) + " is outside the vocabulary");
}

double cross_entropy(std::span<const double> logits, TokenId target, double* probs_out) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  if (probs_out) {
    for (std::size_t i = 0; i < logits.size(); ++i) probs_out[i] = std::exp(logits[i] - lse);
  }
  return lse - logits[static_cast<std::size_t>(target)];
}

}  // namespace

double accumulate_grads(const Parameters& params, std::span<const TokenId> tokens,
                        std::span<const TokenId> targets,
                        const std::vector<std::size_t>* loss_positions, double scale,
                        std::span<double> grads, ForwardCache& cache) {
  const auto& c = params.config();
  const auto& L = params.layout();
  validate_tokens(c, tokens);
  validate_targets(c, tokens, targets);
  const std::size_t T = tokens.size(), D = c.d_model, F = c.d_ff, H = c.n_heads;
  const std::size_t V = c.vocab_size, hd = D / H;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const auto positions = resolve_positions(T, loss_positions);

  run_forward(params, tokens, {}, false, cache);

  std::vector<double> dlogits(T * V, 0.0);
  double loss = 0.0;
  const double inv_n = 1.0 / static_cast<double>(positions.size());
  for (auto p : positions) {
    double* dl = dlogits.data() + p * V;
    loss += cross_entropy({cache.logits.data() + p * V, V}, targets[p], dl);
    dl[targets[p]] -= 1.0;
    for (std::size_t v = 0; v < V; ++v) dl[v] *= scale * inv_n;
  }
  loss *= inv_n;

  double* g = grads.data();
  std::vector<double> d_lnf(T * D, 0.0), dx(T * D, 0.0);
  matmul_backward(dlogits.data(), cache.lnf_out.data(), params.at(L.unembed), T, D, V,
                  d_lnf.data(), g + L.unembed);
  layer_norm_backward(d_lnf.data(), cache.lnf_xhat.data(), cache.lnf_rstd.data(),
                      params.at(L.lnf_gain), T, D, dx.data(), g + L.lnf_gain, g + L.lnf_bias);

  std::vector<double> dg(T * F), du(T * F), d_ln(T * D), d_att(T * D);
  std::vector<double> dq(T * D), dk(T * D), dv(T * D), dprow(T);
  for (std::size_t li = c.n_layers; li-- > 0;) {
    const auto& b = L.blocks[li];
    const auto& bc = cache.blocks[li];

    // FFN sublayer: x_out = x_mid + gelu(ln2(x_mid) W_up + b_up) W_down + b_down
    double* gbd = g + b.b_down;
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < D; ++i) gbd[i] += dx[t * D + i];
    std::fill(dg.begin(), dg.end(), 0.0);
    matmul_backward(dx.data(), bc.g.data(), params.at(b.w_down), T, F, D, dg.data(),
                    g + b.w_down);
    double* gbu = g + b.b_up;
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < F; ++i) {
        du[t * F + i] = dg[t * F + i] * gelu_grad(bc.u[t * F + i]);
        gbu[i] += du[t * F + i];
      }
    std::fill(d_ln.begin(), d_ln.end(), 0.0);
    matmul_backward(du.data(), bc.ln2_out.data(), params.at(b.w_up), T, D, F, d_ln.data(),
                    g + b.w_up);
    layer_norm_backward(d_ln.data(), bc.ln2_xhat.data(), bc.ln2_rstd.data(),
                        params.at(b.ln2_gain), T, D, dx.data(), g + b.ln2_gain, g + b.ln2_bias);

    // Attention sublayer: x_mid = x_in + attn(ln1(x_in)) Wo
    std::fill(d_att.begin(), d_att.end(), 0.0);
    matmul_backward(dx.data(), bc.att.data(), params.at(b.wo), T, D, D, d_att.data(),
                    g + b.wo);
    std::fill(dq.begin(), dq.end(), 0.0);
    std::fill(dk.begin(), dk.end(), 0.0);
    std::fill(dv.begin(), dv.end(), 0.0);
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < T; ++i) {
        const double* prow = bc.probs.data() + (h * T + i) * T;
        const double* dout = d_att.data() + i * D + h * hd;
        double dot = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          const double* vj = bc.v.data() + j * D + h * hd;
          double* dvj = dv.data() + j * D + h * hd;
          double s = 0.0;
          for (std::size_t e = 0; e < hd; ++e) {
            s += dout[e] * vj[e];
            dvj[e] += prow[j] * dout[e];
          }
          dprow[j] = s;
          dot += prow[j] * s;
        }
        const double* qi = bc.q.data() + i * D + h * hd;
        double* dqi = dq.data() + i * D + h * hd;
        for (std::size_t j = 0; j <= i; ++j) {
          const double ds = prow[j] * (dprow[j] - dot) * att_scale;
          const double* kj = bc.k.data() + j * D + h * hd;
          double* dkj = dk.data() + j * D + h * hd;
          for (std::size_t e = 0; e < hd; ++e) {
            dqi[e] += ds * kj[e];
            dkj[e] += ds * qi[e];
          }
        }
      }
    }
    std::fill(d_ln.begin(), d_ln.end(), 0.0);
    matmul_backward(dq.data(), bc.ln1_out.data(), params.at(b.wq), T, D, D, d_ln.data(),
                    g + b.wq);
    matmul_backward(dk.data(), bc.ln1_out.data(), params.at(b.wk), T, D, D, d_ln.data(),
                    g + b.wk);
    matmul_backward(dv.data(), bc.ln1_out.data(), params.at(b.wv), T, D, D, d_ln.data(),
                    g + b.wv);
    layer_norm_backward(d_ln.data(), bc.ln1_xhat.data(), bc.ln1_rstd.data(),
                        params.at(b.ln1_gain), T, D, dx.data(), g + b.ln1_gain, g + b.ln1_bias);
  }

  for (std::size_t t = 0; t < T; ++t) {
    double* te = g + L.tok_emb + static_cast<std::size_t>(tokens[t]) * D;
    double* pe = g + L.pos_emb + t * D;
    for (std::size_t i = 0; i < D; ++i) {
      te[i] += dx[t * D + i];
      pe[i] += dx[t * D + i];
    }
  }
  return loss;
}

}  // namespace detail

LossAndGrads loss_and_grads(const Parameters& params, std::span<const TokenId> tokens,
                            std::span<const TokenId> targets, const GradientMask* mask,
                            const std::vector<std::size_t>* loss_positions) {
  if (mask) mask->validate(params.size());
  LossAndGrads out{0.0, params.zeros_like()};
  detail::ForwardCache cache;
  out.loss = detail::accumulate_grads(params, tokens, targets, loss_positions, 1.0,
                                      out.grads.data(), cache);
  if (mask) mask->zero(out.grads.data());
  return out;
}

double loss_only(const Parameters& params, std::span<const TokenId> tokens,
                 std::span<const TokenId> targets,
                 const std::vector<std::size_t>* loss_positions) {
  const auto& c = params.config();
  detail::validate_tokens(c, tokens);
  detail::validate_targets(c, tokens, targets);
  const auto positions = detail::resolve_positions(tokens.size(), loss_positions);
  detail::ForwardCache cache;
  detail::run_forward(params, tokens, {}, false, cache);
  double loss = 0.0;
  for (auto p : positions)
    loss += detail::cross_entropy({cache.logits.data() + p * c.vocab_size, c.vocab_size},
                                  targets[p], nullptr);
  return loss / static_cast<double>(positions.size());
}

}  // namespace polneuron::tinylm
