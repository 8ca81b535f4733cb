#include <algorithm>
#include <set>

#include "polneuron/corpus.hpp"
#include "polneuron/error.hpp"
#include "polneuron/rng.hpp"
#include "common/json_fields.hpp"

namespace polneuron::corpus {

namespace {

using detail::reject_unknown_keys;
using detail::take;

constexpr std::string_view kGeneralSlot = "{G}";
constexpr std::string_view kTopicSlot = "{T}";

const std::string& pick(Rng& rng, const std::vector<std::string>& from) {
  return from[rng.below(from.size())];
}

}  // namespace

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::vector<std::string> SynthSpec::topic_names() const {
  std::vector<std::string> names;
  for (const auto& t : topics) names.push_back(t.name);
  return names;
}

const TopicSpec& SynthSpec::topic(std::string_view name) const {
  for (const auto& t : topics)
    if (t.name == name) return t;
  fail(ErrorKind::InvalidArgument, "unknown topic '" + std::string(name) + "'");
}

void SynthSpec::validate() const {
  require(!topics.empty(), ErrorKind::Config, "synth spec: at least one topic is required");
  require(examples_per_topic >= 1, ErrorKind::Config, "synth spec: examples_per_topic must be >= 1");
  require(overlap >= 0.0 && overlap <= 1.0, ErrorKind::Config,
          "synth spec: overlap must lie in [0, 1]");
  require(!general_left_markers.empty() && !general_right_markers.empty(), ErrorKind::Config,
          "synth spec: general marker lists must be nonempty");
  require(!prompt_openers.empty(), ErrorKind::Config, "synth spec: prompt_openers is empty");
  require(!completion_frames.empty(), ErrorKind::Config, "synth spec: completion_frames is empty");

  // Every marker list, plus the non-marker vocabulary as one more set, must
  // be pairwise disjoint.
  std::map<std::string, std::string> owner;
  auto claim = [&](const std::vector<std::string>& words, const std::string& set_name) {
    for (const auto& w : words) {
      require(split_words(w).size() == 1, ErrorKind::Config,
              "synth spec: '" + w + "' in " + set_name + " is not a single word");
      auto [it, inserted] = owner.emplace(w, set_name);
      if (!inserted && it->second != set_name)
        fail(ErrorKind::Config, "synth spec: marker sets are not disjoint: '" + w +
                                    "' appears in " + it->second + " and " + set_name);
    }
  };
  claim(general_left_markers, "general_left_markers");
  claim(general_right_markers, "general_right_markers");
  std::set<std::string> names;
  for (const auto& t : topics) {
    require(!t.name.empty() && names.insert(t.name).second, ErrorKind::Config,
            "synth spec: topic names must be unique and nonempty");
    require(!t.left_markers.empty() && !t.right_markers.empty() && !t.prompt_words.empty(),
            ErrorKind::Config, "synth spec: topic '" + t.name + "' needs markers and prompt words");
    claim(t.left_markers, "topics." + t.name + ".left_markers");
    claim(t.right_markers, "topics." + t.name + ".right_markers");
  }
  std::vector<std::string> plain = fillers;
  plain.insert(plain.end(), prompt_openers.begin(), prompt_openers.end());
  for (const auto& t : topics) plain.insert(plain.end(), t.prompt_words.begin(), t.prompt_words.end());
  for (const auto& f : completion_frames) {
    std::size_t g = 0, tp = 0, len = 0;
    for (const auto& w : split_words(f)) {
      ++len;
      if (w == kGeneralSlot) ++g;
      else if (w == kTopicSlot) ++tp;
      else plain.push_back(w);
    }
    require(g >= 1 && tp >= 1, ErrorKind::Config,
            "synth spec: frame '" + f + "' needs at least one {G} and one {T} slot");
    require(len >= 5 && len <= 15, ErrorKind::Config,
            "synth spec: frame '" + f + "' must be 5-15 tokens long");
  }
  for (const auto& w : plain) {
    auto it = owner.find(w);
    if (it != owner.end() && it->second != "plain")
      fail(ErrorKind::Config, "synth spec: marker sets are not disjoint: '" + w + "' appears in " +
                                  it->second + " and in the non-marker vocabulary");
    owner.emplace(w, "plain");
  }
}

SynthSpec SynthSpec::desk_default() {
  SynthSpec s;
  s.examples_per_topic = 200;
  s.seed = 1;
  s.general_left_markers = {"fairness", "equity", "progress", "solidarity", "inclusion", "compassion"};
  s.general_right_markers = {"liberty", "tradition", "responsibility", "order", "heritage", "self-reliance"};
  s.topics = {
      {"crime",
       {"crime", "guns", "prisons", "sentencing", "policing", "courts"},
       {"rehabilitation", "decarceration", "prevention", "gun-control"},
       {"enforcement", "punishment", "deterrence", "gun-rights"}},
      {"economy",
       {"economy", "taxes", "wages", "jobs", "inequality", "budgets"},
       {"redistribution", "unions", "regulation", "safety-nets"},
       {"markets", "tax-cuts", "enterprise", "deregulation"}},
      {"immigration",
       {"immigration", "migrants", "visas", "citizenship", "newcomers", "asylum-seekers"},
       {"amnesty", "refuge", "openness", "integration"},
       {"borders", "deportation", "sovereignty", "restriction"}},
      {"gender",
       {"gender", "marriage-law", "parenting", "workplaces", "schools", "sexuality"},
       {"equal-rights", "autonomy", "diversity", "choice"},
       {"family-values", "biology", "faith", "modesty"}},
  };
  s.prompt_openers = {"what", "how", "should", "why", "do", "is"};
  s.fillers = {
      "about",   "today",    "really",  "people",   "country", "local",    "change",   "future",
      "policy",  "matter",   "views",   "think",    "current", "public",   "system",   "debate",
      "issue",   "voters",   "leaders", "plans",    "cities",  "towns",    "rural",    "urban",
      "young",   "older",    "workers", "students", "parents", "children", "news",     "media",
      "online",  "state",    "federal", "national", "global",  "history",  "recent",   "years",
      "decades", "new",      "old",     "big",      "small",   "daily",    "weekly",   "often",
      "rarely",  "always",   "never",   "maybe",    "likely",  "many",     "few",      "most",
      "some",    "every",    "each",    "other",    "another", "such",     "whole",    "real",
      "true",    "clear",    "simple",  "hard",     "easy",    "fast",     "slow",     "early",
      "late",    "north",    "south",   "east",     "west",    "region",   "area",     "place",
      "home",    "street",   "market",  "office",   "school",  "church",   "club",     "team",
      "group",   "member",   "friend",  "neighbor", "citizen", "resident", "official", "expert",
      "report",  "study",    "survey",  "poll",     "number",  "figure",   "rate",     "level",
      "cost",    "price",    "value",   "benefit",  "risk",    "problem",  "question", "answer",
      "idea",    "view",     "opinion", "fact",     "reason",  "result",   "effect",   "cause",
      "goal",    "plan",     "step",    "way",      "means",   "method",   "approach", "process"};
  s.completion_frames = {
      "{G} matters because {T} protects {G} for all .",
      "i think {G} and {T} together build {G} .",
      "our answer is {G} , with {T} and {G} .",
      "{G} guides us : {T} today means {G} tomorrow .",
      "putting {G} first , {T} brings real {G} .",
      "the best path is {G} through {T} and {G} .",
  };
  return s;
}

nlohmann::json to_json(const SynthSpec& s) {
  nlohmann::json topics = nlohmann::json::array();
  for (const auto& t : s.topics)
    topics.push_back({{"name", t.name},
                      {"prompt_words", t.prompt_words},
                      {"left_markers", t.left_markers},
                      {"right_markers", t.right_markers}});
  return {{"topics", topics},
          {"examples_per_topic", s.examples_per_topic},
          {"general_left_markers", s.general_left_markers},
          {"general_right_markers", s.general_right_markers},
          {"fillers", s.fillers},
          {"prompt_openers", s.prompt_openers},
          {"completion_frames", s.completion_frames},
          {"overlap", s.overlap},
          {"seed", s.seed}};
}

SynthSpec synth_spec_from_json(const nlohmann::json& j, const std::string& where) {
  reject_unknown_keys(j,
                      {"topics", "examples_per_topic", "general_left_markers",
                       "general_right_markers", "fillers", "prompt_openers", "completion_frames",
                       "overlap", "seed"},
                      where);
  // Absent keys fall back to the desk default.
  SynthSpec s = SynthSpec::desk_default();
  if (j.contains("topics")) {
    s.topics.clear();
    const auto& arr = j["topics"];
    if (!arr.is_array()) fail(ErrorKind::Config, where + ".topics: expected an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string w = where + ".topics[" + std::to_string(i) + "]";
      reject_unknown_keys(arr[i], {"name", "prompt_words", "left_markers", "right_markers"}, w);
      s.topics.push_back({take<std::string>(arr[i], "name", w),
                          take<std::vector<std::string>>(arr[i], "prompt_words", w),
                          take<std::vector<std::string>>(arr[i], "left_markers", w),
                          take<std::vector<std::string>>(arr[i], "right_markers", w)});
    }
  }
  if (j.contains("examples_per_topic"))
    s.examples_per_topic = take<std::size_t>(j, "examples_per_topic", where);
  if (j.contains("general_left_markers"))
    s.general_left_markers = take<std::vector<std::string>>(j, "general_left_markers", where);
  if (j.contains("general_right_markers"))
    s.general_right_markers = take<std::vector<std::string>>(j, "general_right_markers", where);
  if (j.contains("fillers")) s.fillers = take<std::vector<std::string>>(j, "fillers", where);
  if (j.contains("prompt_openers"))
    s.prompt_openers = take<std::vector<std::string>>(j, "prompt_openers", where);
  if (j.contains("completion_frames"))
    s.completion_frames = take<std::vector<std::string>>(j, "completion_frames", where);
  if (j.contains("overlap")) s.overlap = take<double>(j, "overlap", where);
  if (j.contains("seed")) s.seed = take<std::uint64_t>(j, "seed", where);
  s.validate();
  return s;
}

std::vector<StanceExample> generate_synth_corpus(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::vector<StanceExample> out;
  out.reserve(spec.n_topics() * spec.examples_per_topic);

  for (std::size_t ti = 0; ti < spec.n_topics(); ++ti) {
    const auto& topic = spec.topics[ti];
    for (std::size_t e = 0; e < spec.examples_per_topic; ++e) {
      // Prompt: opener, two or three topic words with up to two fillers
      // interleaved, then a question mark.
      std::vector<std::string> words;
      words.push_back(pick(rng, spec.prompt_openers));
      const std::size_t n_topic_words = 2 + rng.below(2);
      const std::size_t n_fillers = spec.fillers.empty() ? 0 : rng.below(3);
      std::vector<std::string> body;
      for (std::size_t k = 0; k < n_topic_words; ++k) body.push_back(pick(rng, topic.prompt_words));
      for (std::size_t k = 0; k < n_fillers; ++k) body.push_back(pick(rng, spec.fillers));
      rng.shuffle(body);
      if (spec.n_topics() > 1 && spec.overlap > 0.0 && rng.uniform() < spec.overlap) {
        std::size_t other = rng.below(spec.n_topics() - 1);
        if (other >= ti) ++other;
        body[0] = pick(rng, spec.topics[other].prompt_words);
      }
      words.insert(words.end(), body.begin(), body.end());
      words.emplace_back("?");

      const auto& frame = pick(rng, spec.completion_frames);
      std::string left, right;
      for (const auto& w : split_words(frame)) {
        std::string l = w, r = w;
        if (w == kGeneralSlot) {
          l = pick(rng, spec.general_left_markers);
          r = pick(rng, spec.general_right_markers);
        } else if (w == kTopicSlot) {
          l = pick(rng, topic.left_markers);
          r = pick(rng, topic.right_markers);
        }
        left += (left.empty() ? "" : " ") + l;
        right += (right.empty() ? "" : " ") + r;
      }
      std::string prompt;
      for (const auto& w : words) prompt += (prompt.empty() ? "" : " ") + w;
      out.push_back({prompt, left, right, topic.name});
    }
  }
  return out;
}

}  // namespace polneuron::corpus
