#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <string>

#include "polneuron/error.hpp"
#include "polneuron/tinylm.hpp"
#include "tinylm/kernels.hpp"

namespace polneuron::tinylm {

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    require(v >= 1, ErrorKind::Config, std::string("model config: ") + name + " must be >= 1");
  };
  positive(n_layers, "n_layers");
  positive(d_model, "d_model");
  positive(d_ff, "d_ff");
  positive(n_heads, "n_heads");
  positive(vocab_size, "vocab_size");
  positive(max_seq_len, "max_seq_len");
  require(d_model % n_heads == 0, ErrorKind::Config,
          "model config: d_model (" + std::to_string(d_model) +
              ") must be divisible by n_heads (" + std::to_string(n_heads) + ")");
}

bool ModelConfig::same_shape(const ModelConfig& o) const {
  return n_layers == o.n_layers && d_model == o.d_model && d_ff == o.d_ff &&
         n_heads == o.n_heads && vocab_size == o.vocab_size && max_seq_len == o.max_seq_len;
}

ParamLayout::ParamLayout(const ModelConfig& c) {
  c.validate();
  const std::size_t D = c.d_model, F = c.d_ff;
  tok_emb = add("tok_emb", {c.vocab_size, D});
  pos_emb = add("pos_emb", {c.max_seq_len, D});
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    Block b{};
    b.ln1_gain = add(p + "ln1.gain", {D});
    b.ln1_bias = add(p + "ln1.bias", {D});
    b.wq = add(p + "attn.wq", {D, D});
    b.wk = add(p + "attn.wk", {D, D});
    b.wv = add(p + "attn.wv", {D, D});
    b.wo = add(p + "attn.wo", {D, D});
    b.ln2_gain = add(p + "ln2.gain", {D});
    b.ln2_bias = add(p + "ln2.bias", {D});
    b.w_up = add(p + "ffn.w_up", {D, F});
    b.b_up = add(p + "ffn.b_up", {F});
    b.w_down = add(p + "ffn.w_down", {F, D});
    b.b_down = add(p + "ffn.b_down", {D});
    blocks.push_back(b);
  }
  lnf_gain = add("lnf.gain", {D});
  lnf_bias = add("lnf.bias", {D});
  unembed = add("unembed", {D, c.vocab_size});
}

std::size_t ParamLayout::add(std::string name, std::vector<std::size_t> shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  const std::size_t offset = total_;
  tensors_.push_back({std::move(name), std::move(shape), offset, n});
  total_ += n;
  return offset;
}

const TensorInfo& ParamLayout::find(std::string_view name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return t;
  fail(ErrorKind::InvalidArgument, "unknown parameter tensor '" + std::string(name) + "'");
}

std::size_t ParamLayout::flat_index(std::string_view name,
                                    std::span<const std::size_t> index) const {
  const auto& t = find(name);
  require(index.size() == t.shape.size(), ErrorKind::InvalidArgument,
          "parameter '" + t.name + "' expects a " + std::to_string(t.shape.size()) +
              "-dimensional index");
  std::size_t flat = 0;
  for (std::size_t d = 0; d < index.size(); ++d) {
    require(index[d] < t.shape[d], ErrorKind::InvalidArgument,
            "index " + std::to_string(index[d]) + " out of range for dimension " +
                std::to_string(d) + " of '" + t.name + "'");
    flat = flat * t.shape[d] + index[d];
  }
  return t.offset + flat;
}

Parameters::Parameters(const ModelConfig& config)
    : config_(config), layout_(std::make_shared<const ParamLayout>(config)) {
  data_.assign(layout_->total(), 0.0);
}

std::span<double> Parameters::tensor(std::string_view name) {
  const auto& t = layout_->find(name);
  return {data_.data() + t.offset, t.size};
}

std::span<const double> Parameters::tensor(std::string_view name) const {
  const auto& t = layout_->find(name);
  return {data_.data() + t.offset, t.size};
}

Parameters Parameters::zeros_like() const {
  Parameters out = *this;
  std::fill(out.data_.begin(), out.data_.end(), 0.0);
  return out;
}

bool bit_identical(const Parameters& a, const Parameters& b) {
  if (!(a.config() == b.config()) || a.size() != b.size()) return false;
  return std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

std::string_view to_string(Leaning leaning) {
  switch (leaning) {
    case Leaning::Vanilla: return "vanilla";
    case Leaning::Left: return "left";
    case Leaning::Right: return "right";
  }
  return "vanilla";
}

Leaning leaning_from_string(std::string_view text) {
  if (text == "vanilla") return Leaning::Vanilla;
  if (text == "left") return Leaning::Left;
  if (text == "right") return Leaning::Right;
  fail(ErrorKind::Schema, "unknown leaning '" + std::string(text) + "'");
}

void ModelVariant::validate() const {
  if (leaning == Leaning::Vanilla)
    require(!topic.has_value(), ErrorKind::InvalidArgument, "vanilla variants carry no topic");
}

ActivationTrace::ActivationTrace(std::size_t seq_len, std::size_t n_layers, std::size_t d_ff)
    : seq_len_(seq_len), n_layers_(n_layers), d_ff_(d_ff), values_(seq_len * n_layers * d_ff) {}

void GradientMask::add(const ParamLayout& layout, std::string_view name,
                       std::initializer_list<std::size_t> index) {
  add_flat(layout.flat_index(name, std::span<const std::size_t>(index.begin(), index.size())));
}

void GradientMask::add_flat(std::size_t offset) {
  auto it = std::lower_bound(offsets_.begin(), offsets_.end(), offset);
  if (it == offsets_.end() || *it != offset) offsets_.insert(it, offset);
}

bool GradientMask::contains(std::size_t offset) const {
  return std::binary_search(offsets_.begin(), offsets_.end(), offset);
}

void GradientMask::validate(std::size_t total) const {
  if (!offsets_.empty() && offsets_.back() >= total)
    fail(ErrorKind::InvalidArgument, "gradient mask coordinate " +
                                         std::to_string(offsets_.back()) +
                                         " is outside the parameter buffer");
}

void GradientMask::zero(std::span<double> grads) const {
  for (auto o : offsets_) grads[o] = 0.0;
}

GradientMask GradientMask::all(const ParamLayout& layout) {
  GradientMask m;
  m.offsets_.resize(layout.total());
  for (std::size_t i = 0; i < layout.total(); ++i) m.offsets_[i] = i;
  return m;
}

Parameters init_model(const ModelConfig& config) {
  config.validate();
  Parameters params(config);
  const auto& L = params.layout();
  Rng rng(config.seed);
  auto fill_normal = [&](std::size_t offset, std::size_t n, double stddev) {
    double* p = params.at(offset);
    for (std::size_t i = 0; i < n; ++i) p[i] = stddev * rng.normal();
  };
  auto fill_const = [&](std::size_t offset, std::size_t n, double v) {
    std::fill_n(params.at(offset), n, v);
  };
  const double D = static_cast<double>(config.d_model);
  const double F = static_cast<double>(config.d_ff);
  const double residual_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(config.n_layers));
  const std::size_t d = config.d_model, f = config.d_ff;

  // Fixed tensor order keeps the draw sequence, and so the weights, a pure
  // function of (config, seed).
  fill_normal(L.tok_emb, config.vocab_size * d, 0.5);
  fill_normal(L.pos_emb, config.max_seq_len * d, 0.1);
  for (const auto& b : L.blocks) {
    fill_const(b.ln1_gain, d, 1.0);
    fill_const(b.ln1_bias, d, 0.0);
    fill_normal(b.wq, d * d, 1.0 / std::sqrt(D));
    fill_normal(b.wk, d * d, 1.0 / std::sqrt(D));
    fill_normal(b.wv, d * d, 1.0 / std::sqrt(D));
    fill_normal(b.wo, d * d, residual_scale / std::sqrt(D));
    fill_const(b.ln2_gain, d, 1.0);
    fill_const(b.ln2_bias, d, 0.0);
    fill_normal(b.w_up, d * f, 1.0 / std::sqrt(D));
    fill_const(b.b_up, f, 0.0);
    fill_normal(b.w_down, f * d, residual_scale / std::sqrt(F));
    fill_const(b.b_down, d, 0.0);
  }
  fill_const(L.lnf_gain, d, 1.0);
  fill_const(L.lnf_bias, d, 0.0);
  fill_normal(L.unembed, d * config.vocab_size, 1.0 / std::sqrt(D));
  return params;
}

namespace detail {

void validate_tokens(const ModelConfig& c, std::span<const TokenId> tokens) {
  require(!tokens.empty(), ErrorKind::InvalidArgument, "token sequence is empty");
  require(tokens.size() <= c.max_seq_len, ErrorKind::InvalidArgument,
          "sequence length " + std::to_string(tokens.size()) + " exceeds max_seq_len " +
              std::to_string(c.max_seq_len));
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    require(tokens[i] >= 0 && static_cast<std::size_t>(tokens[i]) < c.vocab_size,
            ErrorKind::InvalidArgument,
            "token id " + std::to_string(tokens[i]) + " at position " + std::to_string(i) +
                " is outside the vocabulary");
  }
}

void run_forward(const Parameters& params, std::span<const TokenId> tokens,
                 std::span<const ActivationOverride> overrides, bool last_logits_only,
                 ForwardCache& cache) {
  const auto& c = params.config();
  const auto& L = params.layout();
  const std::size_t T = tokens.size(), D = c.d_model, F = c.d_ff, H = c.n_heads;
  const std::size_t V = c.vocab_size, hd = D / H;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));

  for (const auto& o : overrides) {
    require(o.position < T && o.neuron.layer < c.n_layers && o.neuron.index < F,
            ErrorKind::InvalidArgument, "activation override outside the model shape");
  }

  cache.resize(c, T);
  std::vector<double> x(T * D);
  {
    const double* te = params.at(L.tok_emb);
    const double* pe = params.at(L.pos_emb);
    for (std::size_t t = 0; t < T; ++t) {
      const double* e = te + static_cast<std::size_t>(tokens[t]) * D;
      const double* p = pe + t * D;
      for (std::size_t i = 0; i < D; ++i) x[t * D + i] = e[i] + p[i];
    }
  }

  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto& b = L.blocks[l];
    auto& bc = cache.blocks[l];
    bc.x_in = x;
    layer_norm(bc.x_in.data(), params.at(b.ln1_gain), params.at(b.ln1_bias), T, D,
               bc.ln1_out.data(), bc.ln1_xhat.data(), bc.ln1_rstd.data());
    matmul(bc.ln1_out.data(), params.at(b.wq), nullptr, T, D, D, bc.q.data());
    matmul(bc.ln1_out.data(), params.at(b.wk), nullptr, T, D, D, bc.k.data());
    matmul(bc.ln1_out.data(), params.at(b.wv), nullptr, T, D, D, bc.v.data());

    std::fill(bc.att.begin(), bc.att.end(), 0.0);
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < T; ++i) {
        double* prow = bc.probs.data() + (h * T + i) * T;
        const double* qi = bc.q.data() + i * D + h * hd;
        double mx = -HUGE_VAL;
        for (std::size_t j = 0; j <= i; ++j) {
          const double* kj = bc.k.data() + j * D + h * hd;
          double s = 0.0;
          for (std::size_t e = 0; e < hd; ++e) s += qi[e] * kj[e];
          prow[j] = s * att_scale;
          mx = std::max(mx, prow[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          prow[j] = std::exp(prow[j] - mx);
          z += prow[j];
        }
        const double inv = 1.0 / z;
        double* out = bc.att.data() + i * D + h * hd;
        for (std::size_t j = 0; j <= i; ++j) {
          prow[j] *= inv;
          const double* vj = bc.v.data() + j * D + h * hd;
          for (std::size_t e = 0; e < hd; ++e) out[e] += prow[j] * vj[e];
        }
        for (std::size_t j = i + 1; j < T; ++j) prow[j] = 0.0;
      }
    }
    matmul_accumulate(bc.att.data(), params.at(b.wo), T, D, D, x.data());
    bc.x_mid = x;

    layer_norm(bc.x_mid.data(), params.at(b.ln2_gain), params.at(b.ln2_bias), T, D,
               bc.ln2_out.data(), bc.ln2_xhat.data(), bc.ln2_rstd.data());
    matmul(bc.ln2_out.data(), params.at(b.w_up), params.at(b.b_up), T, D, F, bc.u.data());
    for (std::size_t i = 0; i < T * F; ++i) bc.g[i] = gelu(bc.u[i]);
    for (const auto& o : overrides) {
      if (o.neuron.layer == l) bc.g[o.position * F + o.neuron.index] = o.value;
    }
    matmul_accumulate(bc.g.data(), params.at(b.w_down), T, F, D, x.data());
    const double* bd = params.at(b.b_down);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < D; ++i) x[t * D + i] += bd[i];
  }

  cache.x_final = x;
  layer_norm(cache.x_final.data(), params.at(L.lnf_gain), params.at(L.lnf_bias), T, D,
             cache.lnf_out.data(), cache.lnf_xhat.data(), cache.lnf_rstd.data());
  if (last_logits_only) {
    std::fill(cache.logits.begin(), cache.logits.end(), 0.0);
    matmul(cache.lnf_out.data() + (T - 1) * D, params.at(L.unembed), nullptr, 1, D, V,
           cache.logits.data() + (T - 1) * V);
  } else {
    matmul(cache.lnf_out.data(), params.at(L.unembed), nullptr, T, D, V, cache.logits.data());
  }
}

}  // namespace detail

ForwardResult forward(const Parameters& params, std::span<const TokenId> tokens,
                      const ForwardOptions& options) {
  const auto& c = params.config();
  detail::validate_tokens(c, tokens);
  detail::ForwardCache cache;
  detail::run_forward(params, tokens, options.overrides, options.last_logits_only, cache);

  const std::size_t T = tokens.size();
  ForwardResult out;
  out.seq_len = T;
  out.vocab_size = c.vocab_size;
  out.logits = std::move(cache.logits);
  out.trace = ActivationTrace(T, c.n_layers, c.d_ff);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t l = 0; l < c.n_layers; ++l) {
      auto row = out.trace.row(t, l);
      const double* g = cache.blocks[l].g.data() + t * c.d_ff;
      std::copy(g, g + c.d_ff, row.begin());
    }
  if (options.keep_ffn_inputs) {
    out.ffn_inputs.reserve(c.n_layers);
    for (auto& bc : cache.blocks) out.ffn_inputs.push_back(std::move(bc.x_mid));
  }
  return out;
}

std::size_t argmax_lowest(std::span<const double> logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return best;
}

Tokens generate(const Parameters& params, std::span<const TokenId> prompt, std::size_t max_new,
                TokenId eos) {
  const auto& c = params.config();
  require(!prompt.empty(), ErrorKind::InvalidArgument, "prompt is empty");
  require(prompt.size() + max_new <= c.max_seq_len, ErrorKind::InvalidArgument,
          "prompt length " + std::to_string(prompt.size()) + " + max_new " +
              std::to_string(max_new) + " exceeds max_seq_len " +
              std::to_string(c.max_seq_len));
  Tokens seq(prompt.begin(), prompt.end());
  detail::validate_tokens(c, seq);
  detail::ForwardCache cache;
  for (std::size_t step = 0; step < max_new; ++step) {
    detail::run_forward(params, seq, {}, true, cache);
    const auto next = static_cast<TokenId>(argmax_lowest(
        {cache.logits.data() + (seq.size() - 1) * c.vocab_size, c.vocab_size}));
    if (next == eos) break;
    seq.push_back(next);
  }
  return seq;
}

}  // namespace polneuron::tinylm
