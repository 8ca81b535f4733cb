#include <gtest/gtest.h>

#include <cmath>
#include <algorithm>
#include <filesystem>
#include <random>

#include "polneuron/error.hpp"
#include "polneuron/pnlac.hpp"
#include "support/oracles.hpp"

namespace pn = polneuron;
namespace lm = polneuron::tinylm;
namespace pl = polneuron::pnlac;

namespace {

lm::ModelConfig tiny_config(std::uint64_t seed) {
  lm::ModelConfig c;
  c.n_layers = 2;
  c.d_model = 8;
  c.d_ff = 16;
  c.n_heads = 2;
  c.vocab_size = 32;
  c.max_seq_len = 12;
  c.seed = seed;
  return c;
}

lm::ModelVariant variant(std::uint64_t seed, lm::Leaning side) {
  return {lm::init_model(tiny_config(seed)), std::string("crime"), side};
}

pn::corpus::EvalSet provided_eval() {
  pn::corpus::EvalSet set{"eval", {}};
  set.items.push_back({{3, 4, 5}, "crime", lm::Tokens{6, 7}});
  set.items.push_back({{8, 9}, "crime", lm::Tokens{10, 11, 12, 13}});
  set.items.push_back({{14}, "crime", lm::Tokens{15}});
  return set;
}

pl::NeuronScoreTable table_from(std::size_t layers, std::size_t f, const std::vector<double>& s) {
  pl::NeuronScoreTable t(layers, f);
  for (std::size_t k = 0; k < s.size(); ++k)
    t.score({static_cast<std::uint32_t>(k / f), static_cast<std::uint32_t>(k % f)}) = s[k];
  return t;
}

}  // namespace

TEST(ScoreAccumulator, HandArithmeticSingleNeuron) {
  // Prompt of length 1, response of length 2: right [1, 3], left [0, 1].
  lm::ActivationTrace right(3, 1, 1), left(3, 1, 1);
  right.row(0, 0)[0] = 100.0;  // prompt position is ignored
  right.row(1, 0)[0] = 1.0;
  right.row(2, 0)[0] = 3.0;
  left.row(1, 0)[0] = 0.0;
  left.row(2, 0)[0] = 1.0;
  pl::ScoreAccumulator acc(1, 1);
  acc.add(right, left, 1);
  const auto t = acc.finish("crime", "hand");
  EXPECT_DOUBLE_EQ(acc.sum_diff()[0], 5.0);
  EXPECT_EQ(t.total_response_tokens, 2u);
  EXPECT_NEAR(t.score({0, 0}), std::sqrt(5.0 / 2.0), 1e-15);
}

TEST(ActivationDifferenceScores, MatchesBruteForce) {
  const auto right = variant(1, lm::Leaning::Right);
  const auto left = variant(2, lm::Leaning::Left);
  const auto set = provided_eval();
  const auto t = pl::activation_difference_scores(right, left, set, {pl::ResponseSource::Provided});
  const auto oracle = pn::testing::brute_force_scores(right.params, left.params, set);
  ASSERT_EQ(t.size(), oracle.size());
  for (std::size_t k = 0; k < oracle.size(); ++k) EXPECT_NEAR(t.scores()[k], oracle[k], 1e-9) << k;
  EXPECT_EQ(t.total_response_tokens, 7u);
  EXPECT_EQ(t.topic, "crime");
}

TEST(ActivationDifferenceScores, SymmetricAndZeroOnIdenticalModels) {
  const auto a = variant(1, lm::Leaning::Right);
  const auto b = variant(2, lm::Leaning::Left);
  const auto set = provided_eval();
  const pl::ScoreOptions opt{pl::ResponseSource::Provided};
  const auto ab = pl::activation_difference_scores(a, b, set, opt);
  const auto ba = pl::activation_difference_scores(b, a, set, opt);
  EXPECT_EQ(ab.scores(), ba.scores());
  const auto aa = pl::activation_difference_scores(a, a, set, opt);
  for (double s : aa.scores()) EXPECT_EQ(s, 0.0);
}

TEST(ActivationDifferenceScores, GeneratedResponsesAreScored) {
  const auto right = variant(1, lm::Leaning::Right);
  const auto left = variant(2, lm::Leaning::Left);
  auto set = provided_eval();
  for (auto& item : set.items) item.response.reset();
  const auto t = pl::activation_difference_scores(right, left, set, {pl::ResponseSource::Right, 4});
  // Same result as scoring the right model's own continuations as provided text.
  auto provided = set;
  std::size_t skipped = 0;
  for (auto& item : provided.items) {
    const auto full = lm::generate(right.params, item.prompt, 4);
    item.response = lm::Tokens(full.begin() + static_cast<std::ptrdiff_t>(item.prompt.size()), full.end());
    skipped += item.response->empty();
  }
  EXPECT_EQ(t.skipped_prompts, skipped);
  if (skipped < provided.items.size()) {
    const auto u = pl::activation_difference_scores(right, left, provided, {pl::ResponseSource::Provided});
    EXPECT_EQ(t.scores(), u.scores());
    EXPECT_EQ(t.total_response_tokens, u.total_response_tokens);
  }
}

TEST(ActivationDifferenceScores, RejectsMismatchedInputs) {
  const auto right = variant(1, lm::Leaning::Right);
  auto other_topic = variant(2, lm::Leaning::Left);
  other_topic.topic = "economy";
  const auto set = provided_eval();
  const pl::ScoreOptions opt{pl::ResponseSource::Provided};
  EXPECT_THROW(pl::activation_difference_scores(right, other_topic, set, opt), pn::Error);
  auto bigger = tiny_config(3);
  bigger.d_ff = 24;
  const lm::ModelVariant wide{lm::init_model(bigger), std::string("crime"), lm::Leaning::Left};
  EXPECT_THROW(pl::activation_difference_scores(right, wide, set, opt), pn::Error);
  EXPECT_THROW(pl::activation_difference_scores(right, variant(2, lm::Leaning::Left), set,
                                                {pl::ResponseSource::Vanilla}),
               pn::Error);
  auto no_response = set;
  no_response.items[0].response.reset();
  EXPECT_THROW(pl::activation_difference_scores(right, variant(2, lm::Leaning::Left), no_response, opt),
               pn::Error);
}

TEST(ActivationDifferenceScores, AllEmptyResponsesIsAnError) {
  pn::corpus::EvalSet set{"empty", {{{3, 4}, "crime", lm::Tokens{}}}};
  try {
    pl::activation_difference_scores(variant(1, lm::Leaning::Right), variant(2, lm::Leaning::Left), set,
                                      {pl::ResponseSource::Provided});
    FAIL();
  } catch (const pn::Error& e) {
    EXPECT_EQ(e.kind(), pn::ErrorKind::InvalidArgument);
  }
}

TEST(ScoreAccumulator, LargerGapNeverLowersScore) {
  std::mt19937_64 gen(11);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 50; ++trial) {
    lm::ActivationTrace r(5, 1, 3), l(5, 1, 3);
    for (std::size_t p = 0; p < 5; ++p)
      for (std::size_t i = 0; i < 3; ++i) {
        r.row(p, 0)[i] = nd(gen);
        l.row(p, 0)[i] = nd(gen);
      }
    pl::ScoreAccumulator a(1, 3);
    a.add(r, l, 2);
    const double before = a.finish("t", "e").score({0, 1});
    // Push position 3 of neuron 1 further away from the left model.
    const double gap = r.row(3, 0)[1] - l.row(3, 0)[1];
    r.row(3, 0)[1] += (gap >= 0 ? 1.0 : -1.0) * 0.5;
    pl::ScoreAccumulator b(1, 3);
    b.add(r, l, 2);
    EXPECT_GT(b.finish("t", "e").score({0, 1}), before);
  }
}

TEST(SelectNeurons, CountIsCeilingOfGammaPercent) {
  EXPECT_EQ((pl::SelectionConfig{5.0}).count(100), 5u);
  EXPECT_EQ((pl::SelectionConfig{5.0}).count(101), 6u);
  EXPECT_EQ((pl::SelectionConfig{2.5}).count(40), 1u);
  EXPECT_EQ((pl::SelectionConfig{7.5}).count(256), 20u);
  EXPECT_EQ((pl::SelectionConfig{12.5}).count(256), 32u);
  EXPECT_EQ((pl::SelectionConfig{100.0}).count(7), 7u);
  EXPECT_THROW((pl::SelectionConfig{0.0}).validate(), pn::Error);
  EXPECT_THROW((pl::SelectionConfig{100.5}).validate(), pn::Error);
}

TEST(SelectNeurons, TopScoresWithIdTieBreak) {
  // 2 layers x 4 neurons; ties at 0.5 resolve toward the smaller id.
  const auto t = table_from(2, 4, {0.1, 0.5, 0.9, 0.5, 0.5, 0.0, 0.2, 0.3});
  const auto s = pl::select_neurons(t, {37.5});
  EXPECT_EQ(s, pl::NeuronSet({{0, 2}, {0, 1}, {0, 3}}));
  const auto all = pl::select_neurons(t, {100.0});
  EXPECT_EQ(all.size(), 8u);
}

TEST(PartitionNeurons, SmallHandCase) {
  const pl::NeuronSet a({{0, 1}, {0, 2}, {1, 3}});
  const pl::NeuronSet b({{0, 1}, {1, 3}, {1, 4}});
  const auto p = pl::partition_neurons({{"crime", a}, {"economy", b}});
  EXPECT_EQ(p.general, pl::NeuronSet({{0, 1}, {1, 3}}));
  EXPECT_EQ(p.specific("crime"), pl::NeuronSet({{0, 2}}));
  EXPECT_EQ(p.specific("economy"), pl::NeuronSet({{1, 4}}));
  EXPECT_THROW(p.specific("gender"), pn::Error);
  EXPECT_EQ(pl::layer_histogram(p.general, 2), (std::vector<std::size_t>{1, 1}));
}

TEST(PartitionNeurons, SetAlgebraProperties) {
  std::mt19937_64 gen(2024);
  for (int c = 0; c < 1200; ++c) {
    const std::size_t layers = 1 + gen() % 3, f = 1 + gen() % 12, topics = 1 + gen() % 5;
    const double gamma = 1.0 + static_cast<double>(gen() % 990) / 10.0;
    std::vector<std::pair<std::string, pl::NeuronSet>> sets;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t t = 0; t < topics; ++t) {
      std::vector<double> s(layers * f);
      // Coarse values force plenty of ties.
      for (auto& v : s) v = std::floor(u(gen) * 4.0);
      const auto sel = pl::select_neurons(table_from(layers, f, s), {gamma});
      ASSERT_EQ(sel.size(),
                static_cast<std::size_t>(std::ceil(gamma * static_cast<double>(layers * f) / 100.0 - 1e-9)));
      sets.emplace_back("t" + std::to_string(t), sel);
    }
    const auto p = pl::partition_neurons(sets);
    for (std::size_t t = 0; t < topics; ++t) {
      const auto& n = sets[t].second;
      const auto& s = p.topic_specific[t].second;
      ASSERT_TRUE(p.general.subset_of(n));
      ASSERT_TRUE(s.intersect(p.general).empty());
      ASSERT_EQ(s.unite(p.general), n);
    }
    for (const auto& id : p.general)
      for (const auto& [name, n] : sets) ASSERT_TRUE(n.contains(id));
  }
}

TEST(PartitionJson, RoundTripKeepsOrderAndProvenance) {
  const pl::NeuronSet a({{0, 1}, {0, 2}});
  const pl::NeuronSet b({{0, 1}, {1, 0}});
  const auto p = pl::partition_neurons({{"gender", a}, {"crime", b}});
  pl::PartitionProvenance prov{5.0, "synth-abc", {{"finetune", 3}}, 2, 4};
  const auto j = pl::partition_to_json(p, prov);
  const auto back = pl::partition_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(back.general, p.general);
  ASSERT_EQ(back.topic_specific.size(), 2u);
  EXPECT_EQ(back.topic_specific[0].first, "gender");
  EXPECT_EQ(back.selected_for("crime"), b);
  EXPECT_EQ(pl::provenance_from_json(j).corpus_id, "synth-abc");
  EXPECT_THROW(pl::partition_from_json(nlohmann::json::object()), pn::Error);
}

TEST(ScoresCsv, RoundTripIsExact) {
  std::vector<double> s(2 * 3);
  for (std::size_t k = 0; k < s.size(); ++k) s[k] = std::sqrt(static_cast<double>(k) + 0.1) / 3.0;
  const auto t = table_from(2, 3, s);
  const auto path = std::filesystem::temp_directory_path() / "polneuron_scores.csv";
  pl::write_scores_csv(path, t);
  EXPECT_EQ(pl::read_scores_csv(path, 2, 3).scores(), t.scores());
  EXPECT_THROW(pl::read_scores_csv(path, 2, 4), pn::Error);
}

TEST(SelectNeurons, SortOracleAndTieRule) {
  EXPECT_EQ(pl::select_neurons(table_from(1, 4, {3.0, 2.0, 1.0, 0.0}), {50.0}),
            pl::NeuronSet({{0, 0}, {0, 1}}));
  EXPECT_EQ(pl::select_neurons(table_from(1, 4, {1.0, 1.0, 1.0, 1.0}), {25.0}),
            pl::NeuronSet({{0, 0}}));
}

TEST(SelectNeurons, GrowsWithGamma) {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> s(3 * 20);
  for (auto& v : s) v = std::round(u(gen) * 5.0);
  const auto t = table_from(3, 20, s);
  const double sweep[] = {2.5, 5, 7.5, 10, 12.5, 15, 20, 25, 100};
  for (std::size_t k = 1; k < std::size(sweep); ++k)
    EXPECT_TRUE(pl::select_neurons(t, {sweep[k - 1]}).subset_of(pl::select_neurons(t, {sweep[k]})));
}

TEST(PartitionNeurons, ThreeTopicOracleAndDegenerateCases) {
  const pl::NeuronId a{0, 0}, b{0, 1}, c{1, 0};
  const auto p = pl::partition_neurons(
      {{"t1", pl::NeuronSet({a, b})}, {"t2", pl::NeuronSet({a, c})}, {"t3", pl::NeuronSet({a, b, c})}});
  EXPECT_EQ(p.general, pl::NeuronSet({a}));
  EXPECT_EQ(p.specific("t1"), pl::NeuronSet({b}));
  EXPECT_EQ(p.specific("t2"), pl::NeuronSet({c}));
  EXPECT_EQ(p.specific("t3"), pl::NeuronSet({b, c}));

  const auto same = pl::partition_neurons({{"x", pl::NeuronSet({a})}, {"y", pl::NeuronSet({a})}});
  EXPECT_EQ(same.general, pl::NeuronSet({a}));
  EXPECT_TRUE(same.specific("x").empty() && same.specific("y").empty());

  const auto one = pl::partition_neurons({{"only", pl::NeuronSet({a, c})}});
  EXPECT_EQ(one.general, pl::NeuronSet({a, c}));
  EXPECT_TRUE(one.specific("only").empty());

  EXPECT_THROW(pl::partition_neurons({}), pn::Error);
}

TEST(ActivationDifferenceScores, PromptOrderDoesNotMatter) {
  const auto right = variant(4, lm::Leaning::Right);
  const auto left = variant(5, lm::Leaning::Left);
  auto set = provided_eval();
  const pl::ScoreOptions opt{pl::ResponseSource::Provided};
  const auto fwd = pl::activation_difference_scores(right, left, set, opt);
  std::reverse(set.items.begin(), set.items.end());
  const auto rev = pl::activation_difference_scores(right, left, set, opt);
  for (std::size_t k = 0; k < fwd.size(); ++k) EXPECT_NEAR(fwd.scores()[k], rev.scores()[k], 1e-12);
}
