#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "polneuron/corpus.hpp"
#include "polneuron/error.hpp"
#include "polneuron/rng.hpp"

namespace polneuron::corpus {

nlohmann::json to_json(const StanceExample& ex) {
  return {{"prompt", ex.prompt},
          {"left_completion", ex.left_completion},
          {"right_completion", ex.right_completion},
          {"topic", ex.topic}};
}

std::vector<StanceExample> load_corpus_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open corpus '" + path.string() + "'");
  std::vector<StanceExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (split_words(line).empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorKind::Schema, where + ": malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object()) fail(ErrorKind::Schema, where + ": expected a JSON object");
    StanceExample ex;
    for (auto [key, dst] : {std::pair{"prompt", &ex.prompt},
                            std::pair{"left_completion", &ex.left_completion},
                            std::pair{"right_completion", &ex.right_completion},
                            std::pair{"topic", &ex.topic}}) {
      if (!j.contains(key) || !j[key].is_string())
        fail(ErrorKind::Schema, where + ": missing string field \"" + key + "\"");
      *dst = j[key].get<std::string>();
      if (dst->empty()) fail(ErrorKind::Schema, where + ": field \"" + key + "\" is empty");
    }
    out.push_back(std::move(ex));
  }
  return out;
}

void write_corpus_jsonl(const std::filesystem::path& path,
                        const std::vector<StanceExample>& examples) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write corpus '" + path.string() + "'");
  for (const auto& ex : examples) out << to_json(ex).dump() << '\n';
}

Tokenizer::Tokenizer(std::vector<std::string> words) {
  std::set<std::string> distinct;
  for (auto& w : words)
    if (w != kPad && w != kUnk && w != kEos) distinct.insert(std::move(w));
  vocab_ = {std::string(kPad), std::string(kUnk), std::string(kEos)};
  vocab_.insert(vocab_.end(), distinct.begin(), distinct.end());
  for (std::size_t i = 0; i < vocab_.size(); ++i)
    index_.emplace(vocab_[i], static_cast<tinylm::TokenId>(i));
}

bool Tokenizer::contains(std::string_view word) const {
  return index_.contains(std::string(word));
}

tinylm::Tokens Tokenizer::encode(std::string_view text) const {
  tinylm::Tokens ids;
  for (const auto& w : split_words(text)) {
    auto it = index_.find(w);
    ids.push_back(it == index_.end() ? tinylm::kUnkToken : it->second);
  }
  return ids;
}

std::string Tokenizer::decode(std::span<const tinylm::TokenId> ids) const {
  std::string out;
  for (auto id : ids) {
    if (!out.empty()) out += ' ';
    out += (id >= 0 && static_cast<std::size_t>(id) < vocab_.size()) ? vocab_[id]
                                                                     : std::string(kUnk);
  }
  return out;
}

nlohmann::json Tokenizer::to_json() const { return {{"vocab", vocab_}}; }

Tokenizer Tokenizer::from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("vocab") || !j["vocab"].is_array())
    fail(ErrorKind::Schema, "tokenizer: missing field 'vocab'");
  auto words = j["vocab"].get<std::vector<std::string>>();
  Tokenizer t(words);
  if (t.vocab_ != words) fail(ErrorKind::Schema, "tokenizer: field 'vocab' is not in canonical order");
  return t;
}

Tokenizer build_tokenizer(const std::vector<StanceExample>& corpus) {
  require(!corpus.empty(), ErrorKind::InvalidArgument, "cannot build a tokenizer from an empty corpus");
  std::vector<std::string> words;
  for (const auto& ex : corpus)
    for (const auto* text : {&ex.prompt, &ex.left_completion, &ex.right_completion})
      for (auto& w : split_words(*text)) words.push_back(std::move(w));
  return Tokenizer(std::move(words));
}

CorpusSplit split_corpus(const std::vector<StanceExample>& corpus, double eval_fraction,
                         std::uint64_t seed) {
  require(eval_fraction >= 0.0 && eval_fraction < 1.0, ErrorKind::Config,
          "eval_fraction must lie in [0, 1)");
  // Topics in first-appearance order.
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::size_t>> by_topic;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    auto& bucket = by_topic[corpus[i].topic];
    if (bucket.empty()) order.push_back(corpus[i].topic);
    bucket.push_back(i);
  }
  CorpusSplit split;
  Rng rng(seed);
  for (const auto& topic : order) {
    auto idx = by_topic[topic];
    rng.shuffle(idx);
    const auto n_eval = static_cast<std::size_t>(
        std::floor(eval_fraction * static_cast<double>(idx.size()) + 1e-9));
    std::vector<std::size_t> ev(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_eval));
    std::vector<std::size_t> tr(idx.begin() + static_cast<std::ptrdiff_t>(n_eval), idx.end());
    std::sort(ev.begin(), ev.end());
    std::sort(tr.begin(), tr.end());
    split.eval.insert(split.eval.end(), ev.begin(), ev.end());
    split.train.insert(split.train.end(), tr.begin(), tr.end());
  }
  return split;
}

tinylm::TrainExample make_train_example(const Tokenizer& tok, const StanceExample& ex,
                                        Side side) {
  const auto prompt = tok.encode(ex.prompt);
  const auto completion =
      tok.encode(side == Side::Left ? ex.left_completion : ex.right_completion);
  require(!prompt.empty() && !completion.empty(), ErrorKind::InvalidArgument,
          "training example needs a nonempty prompt and completion");
  tinylm::Tokens full = prompt;
  full.insert(full.end(), completion.begin(), completion.end());
  full.push_back(tinylm::kEosToken);
  tinylm::TrainExample out;
  out.tokens.assign(full.begin(), full.end() - 1);
  out.targets.assign(full.begin() + 1, full.end());
  // Position p predicts full[p + 1]; completion tokens start at |prompt|.
  std::vector<std::size_t> positions;
  for (std::size_t p = prompt.size() - 1; p < out.tokens.size(); ++p) positions.push_back(p);
  out.loss_positions = std::move(positions);
  return out;
}

void EvalSet::validate(std::size_t max_seq_len) const {
  for (const auto& item : items) {
    require(!item.prompt.empty(), ErrorKind::InvalidArgument, "eval set '" + id + "' has an empty prompt");
    const std::size_t m = item.response ? item.response->size() : 0;
    require(item.prompt.size() + m <= max_seq_len, ErrorKind::InvalidArgument,
            "eval set '" + id + "': prompt plus response exceeds max_seq_len");
  }
}

EvalSet EvalSet::only_topic(std::string_view topic) const {
  EvalSet out{id + ":" + std::string(topic), {}};
  for (const auto& item : items)
    if (item.topic == topic) out.items.push_back(item);
  return out;
}

EvalSet make_eval_set(const Tokenizer& tok, const std::vector<StanceExample>& corpus,
                      const std::vector<std::size_t>& indices, std::string id) {
  EvalSet set{std::move(id), {}};
  for (auto i : indices) set.items.push_back({tok.encode(corpus.at(i).prompt), corpus[i].topic, {}});
  return set;
}

}  // namespace polneuron::corpus
