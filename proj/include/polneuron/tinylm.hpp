#pragma once

// Minimal pre-LN decoder-only transformer in double precision. Single GELU
// MLP per block; the post-GELU hidden vector of each block is what the rest
// of the toolkit calls "neuron activations".

#include <compare>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "polneuron/rng.hpp"

namespace polneuron::tinylm {

using TokenId = std::int32_t;
using Tokens = std::vector<TokenId>;

// Shared with the tokenizer: specials occupy the first three ids.
inline constexpr TokenId kPadToken = 0;
inline constexpr TokenId kUnkToken = 1;
inline constexpr TokenId kEosToken = 2;

struct ModelConfig {
  std::size_t n_layers = 2;
  std::size_t d_model = 64;
  std::size_t d_ff = 128;
  std::size_t n_heads = 2;
  std::size_t vocab_size = 300;
  std::size_t max_seq_len = 64;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t neuron_count() const { return n_layers * d_ff; }
  // Shape equality; the seed is provenance, not shape.
  bool same_shape(const ModelConfig& other) const;
  bool operator==(const ModelConfig&) const = default;
};

struct TensorInfo {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

// Flat storage layout: every tensor is a row-major slice of one buffer.
class ParamLayout {
 public:
  struct Block {
    std::size_t ln1_gain, ln1_bias;
    std::size_t wq, wk, wv, wo;
    std::size_t ln2_gain, ln2_bias;
    std::size_t w_up, b_up, w_down, b_down;
  };

  explicit ParamLayout(const ModelConfig& config);

  const std::vector<TensorInfo>& tensors() const { return tensors_; }
  const TensorInfo& find(std::string_view name) const;
  std::size_t total() const { return total_; }

  // Flat offset of (name, multi-index); throws on unknown name or bad index.
  std::size_t flat_index(std::string_view name,
                         std::span<const std::size_t> index) const;

  std::size_t tok_emb = 0, pos_emb = 0, lnf_gain = 0, lnf_bias = 0, unembed = 0;
  std::vector<Block> blocks;

 private:
  std::size_t add(std::string name, std::vector<std::size_t> shape);

  std::vector<TensorInfo> tensors_;
  std::size_t total_ = 0;
};

class Parameters {
 public:
  explicit Parameters(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const ParamLayout& layout() const { return *layout_; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::size_t size() const { return data_.size(); }

  std::span<double> tensor(std::string_view name);
  std::span<const double> tensor(std::string_view name) const;

  double* at(std::size_t offset) { return data_.data() + offset; }
  const double* at(std::size_t offset) const { return data_.data() + offset; }

  // A zero-filled buffer of the same shape (gradient accumulator).
  Parameters zeros_like() const;

 private:
  ModelConfig config_;
  std::shared_ptr<const ParamLayout> layout_;
  std::vector<double> data_;
};

// Byte-level equality, so -0.0 vs 0.0 and NaN payloads count as different.
bool bit_identical(const Parameters& a, const Parameters& b);

enum class Leaning { Vanilla, Left, Right };

std::string_view to_string(Leaning leaning);
Leaning leaning_from_string(std::string_view text);

struct ModelVariant {
  Parameters params;
  std::optional<std::string> topic;
  Leaning leaning = Leaning::Vanilla;

  void validate() const;
};

struct NeuronId {
  std::uint32_t layer = 0;
  std::uint32_t index = 0;

  auto operator<=>(const NeuronId&) const = default;
};

// Post-GELU FFN activations, laid out [position][layer][neuron].
class ActivationTrace {
 public:
  ActivationTrace() = default;
  ActivationTrace(std::size_t seq_len, std::size_t n_layers, std::size_t d_ff);

  std::size_t seq_len() const { return seq_len_; }
  std::size_t n_layers() const { return n_layers_; }
  std::size_t d_ff() const { return d_ff_; }

  double at(std::size_t pos, NeuronId n) const {
    return values_[(pos * n_layers_ + n.layer) * d_ff_ + n.index];
  }
  std::span<double> row(std::size_t pos, std::size_t layer) {
    return {values_.data() + (pos * n_layers_ + layer) * d_ff_, d_ff_};
  }
  std::span<const double> row(std::size_t pos, std::size_t layer) const {
    return {values_.data() + (pos * n_layers_ + layer) * d_ff_, d_ff_};
  }
  std::span<const double> values() const { return values_; }

 private:
  std::size_t seq_len_ = 0, n_layers_ = 0, d_ff_ = 0;
  std::vector<double> values_;
};

// Set of flat parameter coordinates whose gradient is forced to zero.
class GradientMask {
 public:
  void add(const ParamLayout& layout, std::string_view name,
           std::initializer_list<std::size_t> index);
  void add_flat(std::size_t offset);

  bool contains(std::size_t offset) const;
  std::size_t size() const { return offsets_.size(); }
  bool empty() const { return offsets_.empty(); }
  // Sorted, duplicates collapsed.
  const std::vector<std::size_t>& offsets() const { return offsets_; }

  void validate(std::size_t total) const;
  void zero(std::span<double> grads) const;

  // Covers every coordinate of the layout.
  static GradientMask all(const ParamLayout& layout);

 private:
  std::vector<std::size_t> offsets_;
};

// Replaces one post-GELU activation before the down-projection.
struct ActivationOverride {
  std::size_t position = 0;
  NeuronId neuron;
  double value = 0.0;
};

struct ForwardOptions {
  std::span<const ActivationOverride> overrides;
  // Skip the unembedding for all but the final position.
  bool last_logits_only = false;
  // Keep the residual stream entering each block's FFN sublayer.
  bool keep_ffn_inputs = false;
};

struct ForwardResult {
  std::size_t seq_len = 0;
  std::size_t vocab_size = 0;
  // [seq_len x vocab]; with last_logits_only only the final row is filled.
  std::vector<double> logits;
  ActivationTrace trace;
  // [n_layers][seq_len x d_model], populated when keep_ffn_inputs is set.
  std::vector<std::vector<double>> ffn_inputs;

  std::span<const double> logits_at(std::size_t pos) const {
    return {logits.data() + pos * vocab_size, vocab_size};
  }
};

Parameters init_model(const ModelConfig& config);

ForwardResult forward(const Parameters& params, std::span<const TokenId> tokens,
                      const ForwardOptions& options = {});

struct LossAndGrads {
  double loss = 0.0;
  Parameters grads;
};

// Mean next-token cross-entropy over loss_positions (all positions when
// absent); targets[p] is the token expected after tokens[0..p].
LossAndGrads loss_and_grads(const Parameters& params,
                            std::span<const TokenId> tokens,
                            std::span<const TokenId> targets,
                            const GradientMask* mask = nullptr,
                            const std::vector<std::size_t>* loss_positions = nullptr);

// Forward-only version of the same loss.
double loss_only(const Parameters& params, std::span<const TokenId> tokens,
                 std::span<const TokenId> targets,
                 const std::vector<std::size_t>* loss_positions = nullptr);

std::size_t argmax_lowest(std::span<const double> logits);

// Greedy decoding, ties to the lowest id. Returns prompt + continuation; the
// end-of-sequence token stops decoding and is not appended.
Tokens generate(const Parameters& params, std::span<const TokenId> prompt,
                std::size_t max_new, TokenId eos = kEosToken);

enum class OptimizerKind { Sgd, Adam };

std::string_view to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(std::string_view text);

struct TrainHyper {
  double lr = 1e-3;
  std::size_t epochs = 6;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::Sgd;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainExample {
  Tokens tokens;
  Tokens targets;
  std::optional<std::vector<std::size_t>> loss_positions;
};

// Minibatch optimizer over a private copy of the parameters. Masked
// coordinates are never written, and with Adam their moments stay zero.
class Trainer {
 public:
  Trainer(Parameters params, TrainHyper hyper, const GradientMask* mask);

  // One optimizer step on the mean gradient of the batch; returns the mean
  // loss before the update.
  double step(std::span<const TrainExample* const> batch);

  const Parameters& params() const { return params_; }
  Parameters release() { return std::move(params_); }
  std::size_t steps_taken() const { return steps_; }
  std::span<const double> adam_first_moment() const { return m_; }
  std::span<const double> adam_second_moment() const { return v_; }

 private:
  Parameters params_;
  TrainHyper hyper_;
  std::vector<std::size_t> trainable_;
  std::vector<double> m_, v_;
  std::size_t steps_ = 0;
};

struct TrainResult {
  Parameters params;
  std::vector<double> step_losses;
};

// Epoch loop with a seeded Fisher-Yates shuffle per epoch.
TrainResult train(const Parameters& params, std::span<const TrainExample> examples,
                  const TrainHyper& hyper, const GradientMask* mask = nullptr);

double mean_loss(const Parameters& params, std::span<const TrainExample> examples);

}  // namespace polneuron::tinylm
