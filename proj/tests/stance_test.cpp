#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "polneuron/error.hpp"
#include "polneuron/stance.hpp"

namespace pn = polneuron;
namespace lm = polneuron::tinylm;
namespace cp = polneuron::corpus;
namespace st = polneuron::stance;
using st::StanceLabel;

namespace {

const auto L = StanceLabel::Left;
const auto R = StanceLabel::Right;

double score(std::initializer_list<StanceLabel> labels) {
  const std::vector<StanceLabel> v(labels);
  return st::stance_score(v);
}

}  // namespace

TEST(LexiconJudge, PureAndTiedResponses) {
  const auto spec = cp::SynthSpec::desk_default();
  const st::LexiconJudge judge(spec);
  const auto& crime = spec.topic("crime");
  const std::string gl = spec.general_left_markers[0], gr = spec.general_right_markers[0];
  EXPECT_EQ(judge.classify("crime", gl + " matters for " + crime.left_markers[0]), L);
  EXPECT_EQ(judge.classify("crime", gr + " matters for " + crime.right_markers[0]), R);
  EXPECT_EQ(judge.classify("crime", gl + " and " + gr), L);
  EXPECT_EQ(judge.classify("crime", "nothing to see"), L);
  // Another topic's markers do not count for crime.
  const auto& econ = spec.topic("economy");
  EXPECT_EQ(judge.count("crime", econ.right_markers[0]).right, 0u);
  EXPECT_EQ(judge.count("economy", econ.right_markers[0]).right, 1u);
  EXPECT_THROW(judge.classify("weather", gl), pn::Error);
}

TEST(LexiconJudge, ClassifiesSynthCompletions) {
  const auto spec = cp::SynthSpec::desk_default();
  const st::LexiconJudge judge(spec);
  for (const auto& ex : cp::generate_synth_corpus(spec)) {
    ASSERT_EQ(judge.classify(ex.topic, ex.left_completion), L) << ex.left_completion;
    ASSERT_EQ(judge.classify(ex.topic, ex.right_completion), R) << ex.right_completion;
  }
}

TEST(StanceScore, Examples) {
  EXPECT_EQ(score({R, R, R}), 1.0);
  EXPECT_EQ(score({L, L, L, L}), -1.0);
  EXPECT_EQ(score({L, L, R, R}), 0.0);
  EXPECT_EQ(score({R, R, R, L}), 0.5);
  EXPECT_EQ(score({L, L, L, R}), -score({R, R, R, L}));
  EXPECT_THROW(st::stance_score({}), pn::Error);
}

TEST(CouplingRmse, Examples) {
  const st::TopicScores v{{"a", 0.1}, {"b", -0.2}, {"c", 0.0}};
  EXPECT_EQ(st::coupling_rmse(v, v, "a"), 0.0);
  const st::TopicScores m{{"a", 0.9}, {"b", 0.1}, {"c", 0.4}};
  EXPECT_NEAR(st::coupling_rmse(m, v, "a"), std::sqrt((0.09 + 0.16) / 2.0), 1e-12);
  EXPECT_NEAR(st::coupling_rmse(m, v, "a"), 0.353553, 1e-6);
  // The fine-tune topic's own shift is irrelevant.
  auto m2 = m;
  m2["a"] = -1.0;
  EXPECT_EQ(st::coupling_rmse(m2, v, "a"), st::coupling_rmse(m, v, "a"));

  st::TopicScores six_v, six_m;
  for (int i = 0; i < 6; ++i) {
    six_v["t" + std::to_string(i)] = -0.3;
    six_m["t" + std::to_string(i)] = -0.2;
  }
  six_m["t2"] = 1.0;
  EXPECT_NEAR(st::coupling_rmse(six_m, six_v, "t2"), 0.1, 1e-12);

  EXPECT_THROW(st::coupling_rmse({{"a", 0.0}}, {{"a", 0.0}}, "a"), pn::Error);
  EXPECT_THROW(st::coupling_rmse(m, v, "z"), pn::Error);
  EXPECT_THROW(st::coupling_rmse(m, {{"a", 0.0}, {"b", 0.0}, {"d", 0.0}}, "a"), pn::Error);
}

TEST(Mitigation, ReferenceCouplingTable) {
  const char* names[] = {"crime", "race", "economy", "immigration", "gender", "science"};
  const double ft[] = {0.847, 0.517, 0.682, 0.679, 0.499, 0.547};
  const double ift[] = {0.433, 0.278, 0.439, 0.479, 0.396, 0.505};
  st::TopicScores a, b;
  double hand = 0.0;
  for (int i = 0; i < 6; ++i) {
    a[names[i]] = ft[i];
    b[names[i]] = ift[i];
    hand += ft[i] - ift[i];
  }
  const auto m = st::mitigation(a, b);
  EXPECT_NEAR(m.mean_delta, hand / 6.0, 1e-12);
  EXPECT_NEAR(m.mean_delta, 0.206, 0.01);
  EXPECT_NEAR(m.per_topic_delta.at("crime"), 0.414, 1e-12);
}

TEST(Mitigation, TrivialCasesAndErrors) {
  const st::TopicScores a{{"x", 0.4}, {"y", 0.7}};
  const auto same = st::mitigation(a, a);
  EXPECT_EQ(same.mean_delta, 0.0);
  for (const auto& [t, d] : same.per_topic_delta) EXPECT_EQ(d, 0.0);
  EXPECT_NEAR(st::mitigation({{"x", 0.5}}, {{"x", 0.3}}).mean_delta, 0.2, 1e-12);
  EXPECT_THROW(st::mitigation(a, {{"x", 0.4}}), pn::Error);
  EXPECT_THROW(st::mitigation(a, {{"x", 0.4}, {"z", 0.1}}), pn::Error);
}

TEST(Perplexity, UniformModelAndConsistency) {
  lm::ModelConfig c;
  c.n_layers = 1;
  c.d_model = 8;
  c.d_ff = 16;
  c.n_heads = 2;
  c.vocab_size = 20;
  c.max_seq_len = 10;
  c.seed = 3;
  auto params = lm::init_model(c);
  const std::vector<lm::Tokens> held{{3, 4, 5, 6}, {7, 8, 9}};
  const double ppl = st::perplexity(params, held);
  EXPECT_GE(ppl, 1.0);

  const lm::Tokens one{3, 4, 5, 6, 7};
  const std::vector<lm::Tokens> single{one};
  const lm::Tokens in(one.begin(), one.end() - 1), tg(one.begin() + 1, one.end());
  EXPECT_NEAR(st::perplexity(params, single), std::exp(lm::loss_and_grads(params, in, tg).loss), 1e-9);

  auto unembed = params.tensor("unembed");
  std::fill(unembed.begin(), unembed.end(), 0.0);
  EXPECT_NEAR(st::perplexity(params, held), 20.0, 1e-9);
  EXPECT_THROW(st::perplexity(params, {}), pn::Error);
}

TEST(StanceMatrix, CsvAndCompleteness) {
  st::StanceMatrix m({"crime", "economy"});
  m.set("vanilla", "crime", -0.5);
  m.set("vanilla", "economy", -0.25);
  m.set("ft:crime", "crime", 1.0);
  EXPECT_THROW(m.validate(), pn::Error);
  m.set("ft:crime", "economy", 0.0);
  EXPECT_NO_THROW(m.validate());
  EXPECT_THROW(m.set("vanilla", "weather", 0.0), pn::Error);
  EXPECT_THROW(m.set("vanilla", "crime", 1.5), pn::Error);
  const auto path = std::filesystem::temp_directory_path() / "polneuron_stance.csv";
  m.write_csv(path);
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  EXPECT_EQ(ss.str(), "model,crime,economy\nvanilla,-0.500000,-0.250000\nft:crime,1.000000,0.000000\n");
  EXPECT_EQ(m.row("ft:crime").at("crime"), 1.0);
}

TEST(EvaluateStance, JudgesEachPromptOfTheTopic) {
  const auto spec = cp::SynthSpec::desk_default();
  const st::LexiconJudge judge(spec);
  const auto corpus = cp::generate_synth_corpus(spec);
  const auto tok = cp::build_tokenizer(corpus);
  cp::EvalSet set{"e", {}};
  for (std::size_t i = 0; i < 10; ++i) set.items.push_back({tok.encode(corpus[i].prompt), corpus[i].topic, {}});
  const auto topic = corpus[0].topic;
  // A generator that echoes the right completion of the matching example.
  std::size_t calls = 0;
  const st::Generator echo = [&](const lm::Tokens& prompt) {
    for (const auto& ex : corpus)
      if (tok.encode(ex.prompt) == prompt) {
        ++calls;
        auto full = prompt;
        const auto resp = tok.encode(ex.right_completion);
        full.insert(full.end(), resp.begin(), resp.end());
        return full;
      }
    return prompt;
  };
  const auto out = st::evaluate_stance(set, topic, echo, tok, judge);
  std::size_t expected = 0;
  for (const auto& item : set.items) expected += item.topic == topic;
  EXPECT_EQ(out.labels.size(), expected);
  EXPECT_EQ(calls, expected);
  EXPECT_EQ(out.score, 1.0);
  EXPECT_THROW(st::evaluate_stance(set, "weather", echo, tok, judge), pn::Error);
}

TEST(HttpJudge, ReplyParsingAndEndpointValidation) {
  EXPECT_EQ(st::parse_judge_reply(R"({"label":"right"})"), R);
  EXPECT_EQ(st::parse_judge_reply(R"({"label":"left","why":"x"})"), L);
  EXPECT_THROW(st::parse_judge_reply(R"({"label":"centre"})"), pn::Error);
  EXPECT_THROW(st::parse_judge_reply("nope"), pn::Error);
  EXPECT_THROW(st::HttpJudge({"ftp://judge", 1000, 1}), pn::Error);
  EXPECT_NO_THROW(st::HttpJudge({"http://127.0.0.1:9/judge", 1000, 1}));
}

TEST(CouplingReport, JsonShape) {
  const auto j = st::coupling_report_json({{"crime", {0.8, 0.5, 0.7}}});
  EXPECT_NEAR(j["crime"]["delta"].get<double>(), 0.3, 1e-12);
  EXPECT_EQ(j["crime"]["R_random"].get<double>(), 0.7);
}
