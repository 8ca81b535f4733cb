#include <cmath>
#include <numeric>
#include <string>

#include "polneuron/error.hpp"
#include "polneuron/tinylm.hpp"
#include "tinylm/kernels.hpp"

namespace polneuron::tinylm {

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::Adam ? "adam" : "sgd";
}

OptimizerKind optimizer_from_string(std::string_view text) {
  if (text == "sgd") return OptimizerKind::Sgd;
  if (text == "adam") return OptimizerKind::Adam;
  fail(ErrorKind::Config, "unknown optimizer '" + std::string(text) + "' (expected sgd|adam)");
}

Trainer::Trainer(Parameters params, TrainHyper hyper, const GradientMask* mask)
    : params_(std::move(params)), hyper_(hyper) {
  require(hyper_.batch_size >= 1, ErrorKind::InvalidArgument, "batch_size must be >= 1");
  require(std::isfinite(hyper_.lr) && hyper_.lr >= 0.0, ErrorKind::InvalidArgument,
          "learning rate must be finite and non-negative");
  if (mask) mask->validate(params_.size());
  trainable_.reserve(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (!mask || !mask->contains(i)) trainable_.push_back(i);
  if (hyper_.optimizer == OptimizerKind::Adam) {
    m_.assign(params_.size(), 0.0);
    v_.assign(params_.size(), 0.0);
  }
}

double Trainer::step(std::span<const TrainExample* const> batch) {
  require(!batch.empty(), ErrorKind::InvalidArgument, "empty minibatch");
  std::vector<double> grads(params_.size(), 0.0);
  detail::ForwardCache cache;
  const double scale = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const TrainExample* ex : batch) {
    const auto* positions = ex->loss_positions ? &*ex->loss_positions : nullptr;
    loss += detail::accumulate_grads(params_, ex->tokens, ex->targets, positions, scale, grads,
                                     cache);
  }
  loss *= scale;
  if (!std::isfinite(loss))
    fail(ErrorKind::Numeric, "non-finite training loss at step " + std::to_string(steps_));

  ++steps_;
  double* p = params_.data().data();
  if (hyper_.optimizer == OptimizerKind::Sgd) {
    for (auto i : trainable_) p[i] -= hyper_.lr * grads[i];
  } else {
    const double t = static_cast<double>(steps_);
    const double c1 = 1.0 - std::pow(hyper_.beta1, t);
    const double c2 = 1.0 - std::pow(hyper_.beta2, t);
    for (auto i : trainable_) {
      m_[i] = hyper_.beta1 * m_[i] + (1.0 - hyper_.beta1) * grads[i];
      v_[i] = hyper_.beta2 * v_[i] + (1.0 - hyper_.beta2) * grads[i] * grads[i];
      const double mhat = m_[i] / c1;
      const double vhat = v_[i] / c2;
      p[i] -= hyper_.lr * mhat / (std::sqrt(vhat) + hyper_.eps);
    }
  }
  return loss;
}

TrainResult train(const Parameters& params, std::span<const TrainExample> examples,
                  const TrainHyper& hyper, const GradientMask* mask) {
  require(!examples.empty(), ErrorKind::InvalidArgument, "training set is empty");
  Trainer trainer(params, hyper, mask);
  Rng rng(hyper.seed);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  TrainResult result{params, {}};
  std::vector<const TrainExample*> batch;
  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
      batch.clear();
      const std::size_t end = std::min(order.size(), start + hyper.batch_size);
      for (std::size_t i = start; i < end; ++i) batch.push_back(&examples[order[i]]);
      result.step_losses.push_back(trainer.step(batch));
    }
  }
  result.params = trainer.release();
  return result;
}

double mean_loss(const Parameters& params, std::span<const TrainExample> examples) {
  require(!examples.empty(), ErrorKind::InvalidArgument, "example set is empty");
  double total = 0.0;
  for (const auto& ex : examples) {
    const auto* positions = ex.loss_positions ? &*ex.loss_positions : nullptr;
    total += loss_only(params, ex.tokens, ex.targets, positions);
  }
  return total / static_cast<double>(examples.size());
}

}  // namespace polneuron::tinylm
