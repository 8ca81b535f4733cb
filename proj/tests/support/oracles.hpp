#pragma once

// Test-only oracles. Each one recomputes its quantity by a route that does
// not share code with the implementation it checks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "polneuron/corpus.hpp"
#include "polneuron/tinylm.hpp"

namespace polneuron::testing {

struct GradCheckResult {
  std::size_t coords = 0;
  std::size_t failures = 0;
  double worst_rel = 0.0;
  std::size_t worst_index = 0;
};

// Relative error with an absolute floor: below `floor` both values are
// treated as zero-gradient coordinates where central differences are pure
// rounding noise.
inline double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

// Central finite differences on every coordinate of the parameter buffer.
inline GradCheckResult finite_difference_check(const tinylm::Parameters& params,
                                               const tinylm::Tokens& tokens,
                                               const tinylm::Tokens& targets,
                                               const std::vector<double>& analytic,
                                               double step, double tolerance, double floor) {
  GradCheckResult r;
  tinylm::Parameters probe = params;
  auto data = probe.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double orig = data[i];
    data[i] = orig + step;
    const double up = tinylm::loss_only(probe, tokens, targets);
    data[i] = orig - step;
    const double down = tinylm::loss_only(probe, tokens, targets);
    data[i] = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double rel = relative_error(analytic[i], numeric, floor);
    ++r.coords;
    if (rel > tolerance) ++r.failures;
    if (rel > r.worst_rel) {
      r.worst_rel = rel;
      r.worst_index = i;
    }
  }
  return r;
}

// Independent greedy decoder: full-logit forward each step, explicit scan.
inline tinylm::Tokens stepwise_argmax(const tinylm::Parameters& params,
                                      const tinylm::Tokens& prompt, std::size_t max_new,
                                      tinylm::TokenId eos) {
  tinylm::Tokens seq = prompt;
  for (std::size_t s = 0; s < max_new; ++s) {
    const auto out = tinylm::forward(params, seq);
    const auto row = out.logits_at(seq.size() - 1);
    tinylm::TokenId best = 0;
    double best_v = row[0];
    for (std::size_t v = 1; v < row.size(); ++v) {
      if (row[v] > best_v) {
        best_v = row[v];
        best = static_cast<tinylm::TokenId>(v);
      }
    }
    if (best == eos) break;
    seq.push_back(best);
  }
  return seq;
}

// Parameter count from the declared architecture, tensor by tensor.
inline std::size_t enumerate_parameter_count(const tinylm::ModelConfig& c) {
  const std::size_t D = c.d_model, F = c.d_ff, V = c.vocab_size, T = c.max_seq_len;
  std::vector<std::size_t> sizes;
  sizes.push_back(V * D);  // token embedding
  sizes.push_back(T * D);  // positional embedding
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    sizes.push_back(D);      // ln1 gain
    sizes.push_back(D);      // ln1 bias
    for (int p = 0; p < 4; ++p) sizes.push_back(D * D);  // q k v o
    sizes.push_back(D);      // ln2 gain
    sizes.push_back(D);      // ln2 bias
    sizes.push_back(D * F);  // W_up
    sizes.push_back(F);      // b_up
    sizes.push_back(F * D);  // W_down
    sizes.push_back(D);      // b_down
  }
  sizes.push_back(D);      // final ln gain
  sizes.push_back(D);      // final ln bias
  sizes.push_back(D * V);  // unembedding
  std::size_t total = 0;
  for (auto s : sizes) total += s;
  return total;
}

// Recompute one block's post-GELU hidden vector from its residual input.
inline std::vector<double> recompute_ffn_hidden(const tinylm::Parameters& params,
                                                std::size_t layer,
                                                const std::vector<double>& residual,
                                                std::size_t pos) {
  const auto& c = params.config();
  const std::size_t D = c.d_model, F = c.d_ff;
  const std::string p = "blocks." + std::to_string(layer) + ".";
  const auto gain = params.tensor(p + "ln2.gain");
  const auto bias = params.tensor(p + "ln2.bias");
  const auto w_up = params.tensor(p + "ffn.w_up");
  const auto b_up = params.tensor(p + "ffn.b_up");
  const double* x = residual.data() + pos * D;
  double mean = 0.0;
  for (std::size_t i = 0; i < D; ++i) mean += x[i];
  mean /= static_cast<double>(D);
  double var = 0.0;
  for (std::size_t i = 0; i < D; ++i) var += (x[i] - mean) * (x[i] - mean);
  var /= static_cast<double>(D);
  std::vector<double> normed(D);
  for (std::size_t i = 0; i < D; ++i)
    normed[i] = (x[i] - mean) / std::sqrt(var + 1e-5) * gain[i] + bias[i];
  std::vector<double> hidden(F);
  for (std::size_t j = 0; j < F; ++j) {
    double u = b_up[j];
    for (std::size_t i = 0; i < D; ++i) u += normed[i] * w_up[i * F + j];
    hidden[j] = 0.5 * u * (1.0 + std::erf(u / std::sqrt(2.0)));
  }
  return hidden;
}

// Double loop over prompts and neurons, straight from the definition.
inline std::vector<double> brute_force_scores(const tinylm::Parameters& right, const tinylm::Parameters& left,
                                               const corpus::EvalSet& set) {
  const auto& c = right.config();
  std::vector<double> num(c.n_layers * c.d_ff, 0.0);
  double den = 0.0;
  for (const auto& item : set.items) {
    tinylm::Tokens full = item.prompt;
    full.insert(full.end(), item.response->begin(), item.response->end());
    const auto r = tinylm::forward(right, full).trace;
    const auto l = tinylm::forward(left, full).trace;
    for (std::uint32_t layer = 0; layer < c.n_layers; ++layer)
      for (std::uint32_t i = 0; i < c.d_ff; ++i)
        for (std::size_t j = item.prompt.size(); j < full.size(); ++j) {
          const double d = r.at(j, {layer, i}) - l.at(j, {layer, i});
          num[layer * c.d_ff + i] += d * d;
        }
    den += static_cast<double>(item.response->size());
  }
  for (auto& v : num) v = std::sqrt(v / den);
  return num;
}

}  // namespace polneuron::testing
