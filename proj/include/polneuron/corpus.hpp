#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "polneuron/tinylm.hpp"

namespace polneuron::corpus {

struct StanceExample {
  std::string prompt;
  std::string left_completion;
  std::string right_completion;
  std::string topic;

  bool operator==(const StanceExample&) const = default;
};

struct TopicSpec {
  std::string name;
  std::vector<std::string> prompt_words;
  std::vector<std::string> left_markers;
  std::vector<std::string> right_markers;
};

// Synthetic stance corpus. Every completion is one of `completion_frames`
// with "{G}" slots filled by general markers and "{T}" slots by the topic's
// markers; left and right completions of an example share the frame.
struct SynthSpec {
  std::vector<TopicSpec> topics;
  std::size_t examples_per_topic = 200;
  std::vector<std::string> general_left_markers;
  std::vector<std::string> general_right_markers;
  std::vector<std::string> fillers;
  std::vector<std::string> prompt_openers;
  std::vector<std::string> completion_frames;
  // Probability that a prompt borrows one word from another topic.
  double overlap = 0.0;
  std::uint64_t seed = 0;

  std::size_t n_topics() const { return topics.size(); }
  std::vector<std::string> topic_names() const;
  const TopicSpec& topic(std::string_view name) const;
  void validate() const;

  // Desk-scale default: four topics.
  static SynthSpec desk_default();
};

nlohmann::json to_json(const SynthSpec& spec);
// Absent keys keep the desk default; unknown keys are errors naming `where`.
SynthSpec synth_spec_from_json(const nlohmann::json& j, const std::string& where = "synth_spec");

std::vector<StanceExample> generate_synth_corpus(const SynthSpec& spec);

std::vector<StanceExample> load_corpus_jsonl(const std::filesystem::path& path);
void write_corpus_jsonl(const std::filesystem::path& path,
                        const std::vector<StanceExample>& examples);
nlohmann::json to_json(const StanceExample& ex);

std::vector<std::string> split_words(std::string_view text);

class Tokenizer {
 public:
  static constexpr std::string_view kPad = "<pad>";
  static constexpr std::string_view kUnk = "<unk>";
  static constexpr std::string_view kEos = "<eos>";

  // Specials first, then the remaining words in lexicographic order.
  explicit Tokenizer(std::vector<std::string> words);

  std::size_t vocab_size() const { return vocab_.size(); }
  const std::vector<std::string>& vocab() const { return vocab_; }
  bool contains(std::string_view word) const;

  tinylm::Tokens encode(std::string_view text) const;
  std::string decode(std::span<const tinylm::TokenId> ids) const;

  nlohmann::json to_json() const;
  static Tokenizer from_json(const nlohmann::json& j);

 private:
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, tinylm::TokenId> index_;
};

Tokenizer build_tokenizer(const std::vector<StanceExample>& corpus);

struct CorpusSplit {
  std::vector<std::size_t> train;  // indices into the corpus
  std::vector<std::size_t> eval;
};

// Per topic, a seeded shuffle holds out floor(fraction * n_topic) examples.
CorpusSplit split_corpus(const std::vector<StanceExample>& corpus, double eval_fraction,
                         std::uint64_t seed);

enum class Side { Left, Right };

// prompt + completion + <eos>, next-token targets, loss on completion only.
tinylm::TrainExample make_train_example(const Tokenizer& tok, const StanceExample& ex, Side side);

struct EvalItem {
  tinylm::Tokens prompt;
  std::string topic;
  std::optional<tinylm::Tokens> response;
};

struct EvalSet {
  std::string id;
  std::vector<EvalItem> items;

  void validate(std::size_t max_seq_len) const;
  EvalSet only_topic(std::string_view topic) const;
};

EvalSet make_eval_set(const Tokenizer& tok, const std::vector<StanceExample>& corpus,
                      const std::vector<std::size_t>& indices, std::string id);

}  // namespace polneuron::corpus
