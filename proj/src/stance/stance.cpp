#include "polneuron/stance.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "polneuron/error.hpp"

namespace polneuron::stance {

std::string_view to_string(StanceLabel l) { return l == StanceLabel::Right ? "right" : "left"; }

StanceLabel stance_label_from_string(std::string_view text) {
  if (text == "left") return StanceLabel::Left;
  if (text == "right") return StanceLabel::Right;
  fail(ErrorKind::Schema, "unknown stance label '" + std::string(text) + "'");
}

LexiconJudge::LexiconJudge(const corpus::SynthSpec& spec) {
  general_ = {spec.general_left_markers, spec.general_right_markers};
  for (const auto& t : spec.topics) topics_[t.name] = {t.left_markers, t.right_markers};
}

MarkerCounts LexiconJudge::count(std::string_view topic, std::string_view response) const {
  auto it = topics_.find(topic);
  require(it != topics_.end(), ErrorKind::InvalidArgument,
          "judge has no lexicon for topic '" + std::string(topic) + "'");
  MarkerCounts c;
  auto in = [](const std::vector<std::string>& words, const std::string& w) {
    return std::find(words.begin(), words.end(), w) != words.end();
  };
  for (const auto& w : corpus::split_words(response)) {
    c.left += in(general_.left, w) || in(it->second.left, w);
    c.right += in(general_.right, w) || in(it->second.right, w);
  }
  return c;
}

StanceLabel LexiconJudge::classify(std::string_view topic, std::string_view response) const {
  const auto c = count(topic, response);
  return c.right > c.left ? StanceLabel::Right : StanceLabel::Left;
}

StanceLabel parse_judge_reply(std::string_view body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error&) {
    fail(ErrorKind::Schema, "judge reply is not JSON");
  }
  if (!j.is_object() || !j.contains("label") || !j["label"].is_string())
    fail(ErrorKind::Schema, "judge reply: missing string field 'label'");
  return stance_label_from_string(j["label"].get<std::string>());
}

double stance_score(std::span<const StanceLabel> labels) {
  require(!labels.empty(), ErrorKind::InvalidArgument, "stance score of an empty label list");
  long diff = 0;
  for (auto l : labels) diff += l == StanceLabel::Right ? 1 : -1;
  return static_cast<double>(diff) / static_cast<double>(labels.size());
}

double coupling_rmse(const TopicScores& model_row, const TopicScores& vanilla_row,
                     std::string_view finetune_topic) {
  require(model_row.size() >= 2, ErrorKind::InvalidArgument, "coupling needs at least two topics");
  require(model_row.size() == vanilla_row.size(), ErrorKind::InvalidArgument,
          "model and vanilla rows cover different topics");
  require(model_row.contains(std::string(finetune_topic)), ErrorKind::InvalidArgument,
          "fine-tune topic '" + std::string(finetune_topic) + "' missing from the stance row");
  double sum = 0.0;
  for (const auto& [topic, s] : model_row) {
    auto it = vanilla_row.find(topic);
    require(it != vanilla_row.end(), ErrorKind::InvalidArgument,
            "vanilla row lacks topic '" + topic + "'");
    if (topic == finetune_topic) continue;
    const double d = s - it->second;
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(model_row.size() - 1));
}

Mitigation mitigation(const TopicScores& r_ft, const TopicScores& r_inhibit) {
  require(!r_ft.empty(), ErrorKind::InvalidArgument, "mitigation over no topics");
  require(r_ft.size() == r_inhibit.size(), ErrorKind::InvalidArgument, "mitigation inputs differ in topics");
  Mitigation m;
  double sum = 0.0;
  for (const auto& [topic, r] : r_ft) {
    auto it = r_inhibit.find(topic);
    require(it != r_inhibit.end(), ErrorKind::InvalidArgument, "mitigation: topic '" + topic + "' unmatched");
    m.per_topic_delta[topic] = r - it->second;
    sum += r - it->second;
  }
  m.mean_delta = sum / static_cast<double>(r_ft.size());
  return m;
}

double perplexity(const tinylm::Parameters& params, std::span<const tinylm::Tokens> heldout) {
  require(!heldout.empty(), ErrorKind::InvalidArgument, "perplexity over an empty held-out set");
  double nll = 0.0;
  std::size_t count = 0;
  for (const auto& seq : heldout) {
    require(seq.size() >= 2, ErrorKind::InvalidArgument, "held-out sequence shorter than two tokens");
    const std::span<const tinylm::TokenId> all(seq);
    const auto n = seq.size() - 1;
    nll += tinylm::loss_only(params, all.first(n), all.subspan(1)) * static_cast<double>(n);
    count += n;
  }
  return std::exp(nll / static_cast<double>(count));
}

StanceMatrix::StanceMatrix(std::vector<std::string> topics) : topics_(std::move(topics)) {
  require(!topics_.empty(), ErrorKind::InvalidArgument, "stance matrix needs topics");
}

void StanceMatrix::set(const std::string& row, const std::string& topic, double score) {
  require(std::find(topics_.begin(), topics_.end(), topic) != topics_.end(), ErrorKind::InvalidArgument,
          "stance matrix has no topic '" + topic + "'");
  require(score >= -1.0 && score <= 1.0, ErrorKind::InvalidArgument, "stance score outside [-1, 1]");
  if (!rows_.contains(row)) row_order_.push_back(row);
  rows_[row][topic] = score;
}

double StanceMatrix::at(std::string_view row, std::string_view topic) const {
  const auto r = this->row(row);
  auto it = r.find(std::string(topic));
  require(it != r.end(), ErrorKind::InvalidArgument, "stance matrix row lacks topic '" + std::string(topic) + "'");
  return it->second;
}

TopicScores StanceMatrix::row(std::string_view label) const {
  auto it = rows_.find(label);
  require(it != rows_.end(), ErrorKind::InvalidArgument, "stance matrix has no row '" + std::string(label) + "'");
  return it->second;
}

bool StanceMatrix::has_row(std::string_view label) const { return rows_.find(label) != rows_.end(); }

void StanceMatrix::validate() const {
  for (const auto& [label, r] : rows_)
    require(r.size() == topics_.size(), ErrorKind::InvalidArgument,
            "stance matrix row '" + label + "' is missing topics");
}

void StanceMatrix::write_csv(const std::filesystem::path& path) const {
  validate();
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write '" + path.string() + "'");
  out << "model";
  for (const auto& t : topics_) out << ',' << t;
  out << '\n';
  char buf[32];
  for (const auto& label : row_order_) {
    out << label;
    const auto& r = rows_.find(label)->second;
    for (const auto& t : topics_) {
      std::snprintf(buf, sizeof buf, "%.6f", r.at(t));
      out << ',' << buf;
    }
    out << '\n';
  }
}

nlohmann::json StanceMatrix::to_json() const {
  nlohmann::json rows = nlohmann::json::object();
  for (const auto& label : row_order_) rows[label] = rows_.find(label)->second;
  return {{"topics", topics_}, {"row_order", row_order_}, {"rows", rows}};
}

StanceEval evaluate_stance(const corpus::EvalSet& eval, std::string_view topic, const Generator& gen,
                           const corpus::Tokenizer& tok, const Judge& judge) {
  StanceEval out;
  for (const auto& item : eval.items) {
    if (item.topic != topic) continue;
    const auto full = gen(item.prompt);
    const std::span<const tinylm::TokenId> all(full);
    out.responses.push_back(tok.decode(all.subspan(item.prompt.size())));
    out.labels.push_back(judge.classify(topic, out.responses.back()));
  }
  require(!out.labels.empty(), ErrorKind::InvalidArgument,
          "no evaluation prompts for topic '" + std::string(topic) + "'");
  out.score = stance_score(out.labels);
  return out;
}

Generator greedy_generator(const tinylm::Parameters& params, std::size_t max_new) {
  return [&params, max_new](const tinylm::Tokens& prompt) {
    const auto cap = params.config().max_seq_len;
    require(prompt.size() < cap, ErrorKind::InvalidArgument, "prompt leaves no room for a response");
    return tinylm::generate(params, prompt, std::min(max_new, cap - prompt.size()));
  };
}

nlohmann::json coupling_report_json(const std::map<std::string, CouplingEntry>& entries) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [topic, e] : entries)
    j[topic] = {{"R_ft", e.r_ft}, {"R_inhibit", e.r_inhibit}, {"R_random", e.r_random},
                {"delta", e.r_ft - e.r_inhibit}};
  return j;
}

}  // namespace polneuron::stance
