#include <gtest/gtest.h>

#include <cstring>

#include "polneuron/error.hpp"
#include "polneuron/inhibitft.hpp"

namespace pn = polneuron;
namespace lm = polneuron::tinylm;
namespace cp = polneuron::corpus;
namespace ift = polneuron::inhibitft;
using pn::pnlac::NeuronSet;

namespace {

struct Fixture {
  std::vector<cp::StanceExample> crime;
  cp::Tokenizer tok;
  lm::ModelVariant base;
};

Fixture make_fixture() {
  auto spec = cp::SynthSpec::desk_default();
  spec.examples_per_topic = 12;
  const auto corpus = cp::generate_synth_corpus(spec);
  auto tok = cp::build_tokenizer(corpus);
  std::vector<cp::StanceExample> crime;
  for (const auto& ex : corpus)
    if (ex.topic == "crime") crime.push_back(ex);
  lm::ModelConfig c;
  c.n_layers = 2;
  c.d_model = 16;
  c.d_ff = 32;
  c.n_heads = 2;
  c.vocab_size = tok.vocab_size();
  c.max_seq_len = 32;
  c.seed = 4;
  return {std::move(crime), std::move(tok), {lm::init_model(c), std::nullopt, lm::Leaning::Vanilla}};
}

lm::TrainHyper adam(double lr) {
  lm::TrainHyper h;
  h.lr = lr;
  h.epochs = 2;
  h.batch_size = 4;
  h.seed = 9;
  h.optimizer = lm::OptimizerKind::Adam;
  return h;
}

lm::ModelConfig shape8() {
  lm::ModelConfig c;
  c.n_layers = 2;
  c.d_model = 8;
  c.d_ff = 16;
  c.n_heads = 2;
  c.vocab_size = 32;
  c.max_seq_len = 12;
  return c;
}

}  // namespace

TEST(BuildGradientMask, CoordinateCounts) {
  const auto params = lm::init_model(shape8());
  EXPECT_EQ(ift::build_gradient_mask({}, params).size(), 0u);
  ift::InhibitConfig cfg{NeuronSet({{0, 5}}), ift::FreezeMode::OutputWeightsAndBias, {}};
  EXPECT_EQ(ift::build_gradient_mask(cfg, params).size(), 9u);
  cfg.freeze_mode = ift::FreezeMode::FullNeuron;
  EXPECT_EQ(ift::build_gradient_mask(cfg, params).size(), 17u);
  cfg.frozen = NeuronSet({{0, 5}, {1, 5}, {1, 15}});
  EXPECT_EQ(ift::build_gradient_mask(cfg, params).size(), 3u * 17u);
  cfg.frozen = NeuronSet({{2, 0}});
  EXPECT_THROW(ift::build_gradient_mask(cfg, params), pn::Error);
}

TEST(BuildGradientMask, CoversTheNeuronsOwnCoordinates) {
  const auto params = lm::init_model(shape8());
  const auto& layout = params.layout();
  const ift::InhibitConfig cfg{NeuronSet({{1, 3}}), ift::FreezeMode::FullNeuron, {}};
  const auto mask = ift::build_gradient_mask(cfg, params);
  // W_down is [d_ff x d_model]: row 3 holds the neuron's output weights.
  const auto down = layout.find("blocks.1.ffn.w_down").offset;
  const auto up = layout.find("blocks.1.ffn.w_up").offset;
  for (std::size_t d = 0; d < 8; ++d) {
    EXPECT_TRUE(mask.contains(down + 3 * 8 + d));
    EXPECT_TRUE(mask.contains(up + d * 16 + 3));
  }
  EXPECT_TRUE(mask.contains(layout.find("blocks.1.ffn.b_up").offset + 3));
  EXPECT_FALSE(mask.contains(layout.find("blocks.1.ffn.b_down").offset + 3));
}

TEST(InhibitFinetune, ZeroLearningRateKeepsBase) {
  const auto f = make_fixture();
  ift::InhibitConfig cfg{NeuronSet({{0, 1}}), ift::FreezeMode::OutputWeightsAndBias, adam(0.0)};
  const auto out = ift::inhibit_finetune(f.base, f.crime, f.tok, cfg);
  EXPECT_TRUE(lm::bit_identical(out.variant.params, f.base.params));
  EXPECT_EQ(out.variant.leaning, lm::Leaning::Right);
  EXPECT_EQ(out.variant.topic, "crime");
}

TEST(InhibitFinetune, FrozenCoordinatesNeverMove) {
  const auto f = make_fixture();
  const ift::InhibitConfig cfg{
      ift::random_neuron_set(2, 32, 6, 1), ift::FreezeMode::OutputWeightsAndBias, adam(5e-3)};
  const auto out = ift::inhibit_finetune(f.base, f.crime, f.tok, cfg);
  const auto mask = ift::build_gradient_mask(cfg, f.base.params);
  EXPECT_EQ(out.mask_size, 6u * 17u);
  std::size_t changed = 0;
  for (std::size_t k = 0; k < f.base.params.size(); ++k) {
    const double a = f.base.params.data()[k], b = out.variant.params.data()[k];
    if (mask.contains(k))
      ASSERT_EQ(std::memcmp(&a, &b, sizeof a), 0) << k;
    else
      changed += a != b;
  }
  EXPECT_GT(changed, 0u);
  EXPECT_LT(out.final_loss, out.initial_loss);
}

TEST(InhibitFinetune, AdamMomentsStayZeroOnMask) {
  const auto f = make_fixture();
  const ift::InhibitConfig cfg{NeuronSet({{0, 2}, {1, 30}}), ift::FreezeMode::FullNeuron, adam(1e-2)};
  const auto mask = ift::build_gradient_mask(cfg, f.base.params);
  lm::Trainer trainer(f.base.params, cfg.hyper, &mask);
  const auto ex = cp::make_train_example(f.tok, f.crime[0], cp::Side::Right);
  const lm::TrainExample* batch[] = {&ex};
  for (int s = 0; s < 3; ++s) trainer.step(batch);
  for (auto k : mask.offsets()) {
    EXPECT_EQ(trainer.adam_first_moment()[k], 0.0);
    EXPECT_EQ(trainer.adam_second_moment()[k], 0.0);
  }
}

TEST(InhibitFinetune, EmptyFreezeEqualsPlainFinetune) {
  const auto f = make_fixture();
  const ift::InhibitConfig cfg{{}, ift::FreezeMode::OutputWeightsAndBias, adam(5e-3)};
  const auto a = ift::inhibit_finetune(f.base, f.crime, f.tok, cfg);
  const auto b = ift::finetune(f.base, f.crime, f.tok, cp::Side::Right, cfg.hyper);
  EXPECT_TRUE(lm::bit_identical(a.variant.params, b.variant.params));
}

TEST(InhibitFinetune, RejectsBadCorpora) {
  auto f = make_fixture();
  const ift::InhibitConfig cfg{{}, ift::FreezeMode::OutputWeightsAndBias, adam(1e-3)};
  EXPECT_THROW(ift::inhibit_finetune(f.base, {}, f.tok, cfg), pn::Error);
  f.crime[1].topic = "economy";
  EXPECT_THROW(ift::inhibit_finetune(f.base, f.crime, f.tok, cfg), pn::Error);
}

TEST(RandomNeuronSet, SizeDeterminismAndRange) {
  const auto a = ift::random_neuron_set(3, 10, 7, 42);
  EXPECT_EQ(a.size(), 7u);
  EXPECT_EQ(a, ift::random_neuron_set(3, 10, 7, 42));
  EXPECT_NE(a, ift::random_neuron_set(3, 10, 7, 43));
  EXPECT_NO_THROW(a.check_shape(3, 10));
  EXPECT_EQ(ift::random_neuron_set(3, 10, 30, 1).size(), 30u);
  EXPECT_THROW(ift::random_neuron_set(3, 10, 31, 1), pn::Error);
}

TEST(RandomNeuronSet, RoughlyUniformOverLayers) {
  std::vector<std::size_t> per_layer(4, 0);
  for (std::uint64_t s = 0; s < 400; ++s)
    for (const auto& n : ift::random_neuron_set(4, 25, 10, s)) ++per_layer[n.layer];
  for (auto c : per_layer) EXPECT_NEAR(static_cast<double>(c), 1000.0, 150.0);
}

TEST(FreezeManifest, RecordsModeSetAndCardinality) {
  const ift::InhibitConfig cfg{NeuronSet({{0, 1}, {1, 2}}), ift::FreezeMode::FullNeuron, adam(1e-3)};
  const auto j = ift::freeze_manifest(cfg, 34);
  EXPECT_EQ(j["freeze_mode"], "full_neuron");
  EXPECT_EQ(j["mask_cardinality"], 34);
  EXPECT_EQ(pn::pnlac::neuron_set_from_json(j["frozen"]), cfg.frozen);
  EXPECT_EQ(ift::freeze_mode_from_string("output_weights_and_bias"), ift::FreezeMode::OutputWeightsAndBias);
  EXPECT_THROW(ift::freeze_mode_from_string("all"), pn::Error);
}
