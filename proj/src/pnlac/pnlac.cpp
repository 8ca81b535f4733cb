#include "polneuron/pnlac.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "polneuron/error.hpp"

namespace polneuron::pnlac {

NeuronSet::NeuronSet(std::vector<NeuronId> ids) : ids_(std::move(ids)) {
  std::sort(ids_.begin(), ids_.end());
  ids_.erase(std::unique(ids_.begin(), ids_.end()), ids_.end());
}

void NeuronSet::insert(NeuronId id) {
  auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
  if (it == ids_.end() || *it != id) ids_.insert(it, id);
}

bool NeuronSet::contains(NeuronId id) const {
  return std::binary_search(ids_.begin(), ids_.end(), id);
}

NeuronSet NeuronSet::intersect(const NeuronSet& o) const {
  NeuronSet out;
  std::set_intersection(ids_.begin(), ids_.end(), o.ids_.begin(), o.ids_.end(),
                        std::back_inserter(out.ids_));
  return out;
}

NeuronSet NeuronSet::minus(const NeuronSet& o) const {
  NeuronSet out;
  std::set_difference(ids_.begin(), ids_.end(), o.ids_.begin(), o.ids_.end(),
                      std::back_inserter(out.ids_));
  return out;
}

NeuronSet NeuronSet::unite(const NeuronSet& o) const {
  NeuronSet out;
  std::set_union(ids_.begin(), ids_.end(), o.ids_.begin(), o.ids_.end(),
                 std::back_inserter(out.ids_));
  return out;
}

bool NeuronSet::subset_of(const NeuronSet& o) const {
  return std::includes(o.ids_.begin(), o.ids_.end(), ids_.begin(), ids_.end());
}

void NeuronSet::check_shape(std::size_t n_layers, std::size_t d_ff) const {
  for (const auto& id : ids_)
    require(id.layer < n_layers && id.index < d_ff, ErrorKind::InvalidArgument,
            "neuron (" + std::to_string(id.layer) + ", " + std::to_string(id.index) +
                ") is outside the model shape");
}

nlohmann::json to_json(const NeuronSet& set) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& id : set) arr.push_back({id.layer, id.index});
  return arr;
}

NeuronSet neuron_set_from_json(const nlohmann::json& j) {
  if (!j.is_array()) fail(ErrorKind::Schema, "neuron set: expected an array of [layer, index]");
  std::vector<NeuronId> ids;
  for (const auto& e : j) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_number_unsigned() || !e[1].is_number_unsigned())
      fail(ErrorKind::Schema, "neuron set: entries must be [layer, index] pairs");
    ids.push_back({e[0].get<std::uint32_t>(), e[1].get<std::uint32_t>()});
  }
  return NeuronSet(std::move(ids));
}

NeuronScoreTable::NeuronScoreTable(std::size_t n_layers, std::size_t d_ff)
    : n_layers_(n_layers), d_ff_(d_ff), scores_(n_layers * d_ff, 0.0) {}

ScoreAccumulator::ScoreAccumulator(std::size_t n_layers, std::size_t d_ff)
    : n_layers_(n_layers), d_ff_(d_ff), sum_diff_(n_layers * d_ff, 0.0) {}

void ScoreAccumulator::add(const tinylm::ActivationTrace& right,
                           const tinylm::ActivationTrace& left, std::size_t prompt_len) {
  require(right.seq_len() == left.seq_len() && right.n_layers() == n_layers_ &&
              left.n_layers() == n_layers_ && right.d_ff() == d_ff_ && left.d_ff() == d_ff_,
          ErrorKind::InvalidArgument, "activation traces do not share a shape");
  require(prompt_len <= right.seq_len(), ErrorKind::InvalidArgument,
          "prompt longer than the traced sequence");
  for (std::size_t j = prompt_len; j < right.seq_len(); ++j) {
    for (std::size_t l = 0; l < n_layers_; ++l) {
      const auto r = right.row(j, l);
      const auto a = left.row(j, l);
      double* acc = sum_diff_.data() + l * d_ff_;
      for (std::size_t i = 0; i < d_ff_; ++i) {
        const double d = r[i] - a[i];
        acc[i] += d * d;
      }
    }
  }
  total_ += right.seq_len() - prompt_len;
}

NeuronScoreTable ScoreAccumulator::finish(std::string topic, std::string eval_set_id) const {
  require(total_ > 0, ErrorKind::InvalidArgument,
          "no response tokens to score (all responses empty)");
  NeuronScoreTable table(n_layers_, d_ff_);
  const double denom = static_cast<double>(total_);
  for (std::size_t k = 0; k < sum_diff_.size(); ++k) {
    table.score({static_cast<std::uint32_t>(k / d_ff_), static_cast<std::uint32_t>(k % d_ff_)}) =
        std::sqrt(sum_diff_[k] / denom);
  }
  table.topic = std::move(topic);
  table.eval_set_id = std::move(eval_set_id);
  table.total_response_tokens = total_;
  table.skipped_prompts = skipped_;
  return table;
}

std::string_view to_string(ResponseSource s) {
  switch (s) {
    case ResponseSource::Right: return "right";
    case ResponseSource::Left: return "left";
    case ResponseSource::Vanilla: return "vanilla";
    case ResponseSource::Provided: return "provided";
  }
  return "right";
}

ResponseSource response_source_from_string(std::string_view text) {
  if (text == "right") return ResponseSource::Right;
  if (text == "left") return ResponseSource::Left;
  if (text == "vanilla") return ResponseSource::Vanilla;
  if (text == "provided") return ResponseSource::Provided;
  fail(ErrorKind::Config, "unknown response source '" + std::string(text) + "'");
}

NeuronScoreTable activation_difference_scores(const tinylm::ModelVariant& right,
                                              const tinylm::ModelVariant& left,
                                              const corpus::EvalSet& eval_set,
                                              const ScoreOptions& options) {
  const auto& cfg = right.params.config();
  require(cfg.same_shape(left.params.config()), ErrorKind::InvalidArgument,
          "left and right variants have different model configs");
  require(right.topic == left.topic, ErrorKind::InvalidArgument,
          "left and right variants are tuned on different topics");
  require(!eval_set.items.empty(), ErrorKind::InvalidArgument, "evaluation set is empty");
  const tinylm::Parameters* generator = nullptr;
  switch (options.source) {
    case ResponseSource::Right: generator = &right.params; break;
    case ResponseSource::Left: generator = &left.params; break;
    case ResponseSource::Vanilla:
      require(options.vanilla != nullptr, ErrorKind::InvalidArgument,
              "response source 'vanilla' needs the vanilla model");
      require(options.vanilla->params.config().same_shape(cfg), ErrorKind::InvalidArgument,
              "vanilla model config differs from the variants");
      generator = &options.vanilla->params;
      break;
    case ResponseSource::Provided: break;
  }

  ScoreAccumulator acc(cfg.n_layers, cfg.d_ff);
  // Prompts are reduced strictly in eval-set order.
  for (const auto& item : eval_set.items) {
    tinylm::Tokens full;
    if (generator) {
      require(item.prompt.size() < cfg.max_seq_len, ErrorKind::InvalidArgument,
              "eval prompt leaves no room for a response");
      const std::size_t budget = std::min(options.max_new, cfg.max_seq_len - item.prompt.size());
      full = tinylm::generate(*generator, item.prompt, budget);
    } else {
      require(item.response.has_value(), ErrorKind::InvalidArgument,
              "response source 'provided' but an eval item has no response");
      full = item.prompt;
      full.insert(full.end(), item.response->begin(), item.response->end());
    }
    if (full.size() == item.prompt.size()) {
      acc.skip();
      continue;
    }
    const auto r = tinylm::forward(right.params, full);
    const auto l = tinylm::forward(left.params, full);
    acc.add(r.trace, l.trace, item.prompt.size());
  }
  return acc.finish(right.topic.value_or(""), eval_set.id);
}

void SelectionConfig::validate() const {
  require(gamma_percent > 0.0 && gamma_percent <= 100.0, ErrorKind::InvalidArgument,
          "gamma_percent must lie in (0, 100]");
}

std::size_t SelectionConfig::count(std::size_t total) const {
  validate();
  const double exact = gamma_percent * static_cast<double>(total) / 100.0;
  const auto k = static_cast<std::size_t>(std::ceil(exact - 1e-9));
  return std::min(std::max<std::size_t>(k, 1), total);
}

NeuronSet select_neurons(const NeuronScoreTable& table, const SelectionConfig& sel) {
  const std::size_t k = sel.count(table.size());
  std::vector<std::size_t> order(table.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Flat index order equals NeuronId order, so a stable sort by descending
  // score breaks ties by NeuronId ascending.
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return table.scores()[a] > table.scores()[b];
  });
  std::vector<NeuronId> ids;
  ids.reserve(k);
  for (std::size_t r = 0; r < k; ++r)
    ids.push_back({static_cast<std::uint32_t>(order[r] / table.d_ff()),
                   static_cast<std::uint32_t>(order[r] % table.d_ff())});
  return NeuronSet(std::move(ids));
}

const NeuronSet& NeuronPartition::specific(std::string_view topic) const {
  for (const auto& [name, set] : topic_specific)
    if (name == topic) return set;
  fail(ErrorKind::InvalidArgument, "partition has no topic '" + std::string(topic) + "'");
}

const NeuronSet& NeuronPartition::selected_for(std::string_view topic) const {
  for (const auto& [name, set] : selected)
    if (name == topic) return set;
  fail(ErrorKind::InvalidArgument, "partition has no topic '" + std::string(topic) + "'");
}

NeuronPartition partition_neurons(const std::vector<std::pair<std::string, NeuronSet>>& sets) {
  require(!sets.empty(), ErrorKind::InvalidArgument, "partition needs at least one topic set");
  NeuronPartition p;
  p.general = sets.front().second;
  for (std::size_t j = 1; j < sets.size(); ++j) p.general = p.general.intersect(sets[j].second);
  for (const auto& [topic, set] : sets) {
    p.topic_specific.emplace_back(topic, set.minus(p.general));
    p.selected.emplace_back(topic, set);
  }
  return p;
}

nlohmann::json partition_to_json(const NeuronPartition& p, const PartitionProvenance& prov) {
  nlohmann::json topics = nlohmann::json::object();
  nlohmann::json selected = nlohmann::json::object();
  nlohmann::json order = nlohmann::json::array();
  for (const auto& [t, s] : p.topic_specific) {
    topics[t] = to_json(s);
    order.push_back(t);
  }
  for (const auto& [t, s] : p.selected) selected[t] = to_json(s);
  return {{"general", to_json(p.general)},
          {"topics", topics},
          {"selected", selected},
          {"topic_order", order},
          {"provenance",
           {{"gamma_percent", prov.gamma_percent},
            {"corpus_id", prov.corpus_id},
            {"seeds", prov.seeds},
            {"n_layers", prov.n_layers},
            {"d_ff", prov.d_ff}}}};
}

NeuronPartition partition_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("general") || !j.contains("topics"))
    fail(ErrorKind::Schema, "neuron partition: missing field 'general' or 'topics'");
  NeuronPartition p;
  p.general = neuron_set_from_json(j["general"]);
  std::vector<std::string> order;
  if (j.contains("topic_order")) {
    order = j["topic_order"].get<std::vector<std::string>>();
  } else {
    for (const auto& [k, v] : j["topics"].items()) order.push_back(k);
  }
  for (const auto& t : order) {
    if (!j["topics"].contains(t)) fail(ErrorKind::Schema, "neuron partition: missing topic '" + t + "'");
    auto specific = neuron_set_from_json(j["topics"][t]);
    auto selected = j.contains("selected") && j["selected"].contains(t)
                        ? neuron_set_from_json(j["selected"][t])
                        : specific.unite(p.general);
    p.topic_specific.emplace_back(t, std::move(specific));
    p.selected.emplace_back(t, std::move(selected));
  }
  return p;
}

PartitionProvenance provenance_from_json(const nlohmann::json& j) {
  PartitionProvenance prov;
  if (!j.contains("provenance")) return prov;
  const auto& p = j["provenance"];
  prov.gamma_percent = p.value("gamma_percent", 0.0);
  prov.corpus_id = p.value("corpus_id", std::string());
  prov.seeds = p.value("seeds", nlohmann::json::object());
  prov.n_layers = p.value("n_layers", std::size_t{0});
  prov.d_ff = p.value("d_ff", std::size_t{0});
  return prov;
}

void write_scores_csv(const std::filesystem::path& path, const NeuronScoreTable& table) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write '" + path.string() + "'");
  out << "layer,index,score\n";
  char buf[64];
  for (std::size_t l = 0; l < table.n_layers(); ++l)
    for (std::size_t i = 0; i < table.d_ff(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g",
                    table.score({static_cast<std::uint32_t>(l), static_cast<std::uint32_t>(i)}));
      out << l << ',' << i << ',' << buf << '\n';
    }
}

NeuronScoreTable read_scores_csv(const std::filesystem::path& path, std::size_t n_layers,
                                 std::size_t d_ff) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open '" + path.string() + "'");
  std::string line;
  std::getline(in, line);
  if (line != "layer,index,score") fail(ErrorKind::Schema, path.string() + ": bad CSV header");
  NeuronScoreTable table(n_layers, d_ff);
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t l = 0, i = 0;
    double s = 0.0;
    if (std::sscanf(line.c_str(), "%zu,%zu,%lf", &l, &i, &s) != 3 || l >= n_layers || i >= d_ff)
      fail(ErrorKind::Schema, path.string() + ": bad row '" + line + "'");
    table.score({static_cast<std::uint32_t>(l), static_cast<std::uint32_t>(i)}) = s;
    ++rows;
  }
  if (rows != n_layers * d_ff)
    fail(ErrorKind::Schema, path.string() + ": expected " + std::to_string(n_layers * d_ff) + " rows");
  return table;
}

std::vector<std::size_t> layer_histogram(const NeuronSet& set, std::size_t n_layers) {
  std::vector<std::size_t> h(n_layers, 0);
  for (const auto& id : set) {
    require(id.layer < n_layers, ErrorKind::InvalidArgument, "neuron layer outside the model");
    ++h[id.layer];
  }
  return h;
}

}  // namespace polneuron::pnlac
