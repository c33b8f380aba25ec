// SPDX-License-Identifier: Apache-2.0
#include "knnkd/trainer.hpp"

#include <cmath>
#include <numeric>

#include "knnkd/errors.hpp"
#include "knnkd/rng.hpp"

namespace knnkd {

void adamw_step(std::span<double> params, std::span<const double> grads, AdamWState& state,
                const AdamWConfig& config) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw DimensionError("optimizer state does not match parameter count");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw NonFiniteGradientError("non-finite gradient at parameter " + std::to_string(i) +
                                   " (step " + std::to_string(state.step + 1) + ")");
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    m = config.beta1 * m + (1.0 - config.beta1) * g;
    v = config.beta2 * v + (1.0 - config.beta2) * g * g;
    const double m_hat = m / correction1;
    const double v_hat = v / correction2;
    params[i] -= config.learning_rate * (m_hat / (std::sqrt(v_hat) + config.epsilon)) +
                 config.learning_rate * config.weight_decay * params[i];
  }
}

void adamw_step(StudentModel& model, const GradientSet& grads, AdamWState& state,
                const AdamWConfig& config) {
  adamw_step(model.parameters(), grads.values, state, config);
}

void TrainConfig::validate() const {
  loss_config.validate();
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (loss_config.sim_loss != SimLossKind::kNone && batch_size < 2) {
    throw ConfigError("batch_size must be >= 2 when a sim loss is active");
  }
  if (max_epochs == 0) throw ConfigError("max_epochs must be >= 1");
  if (patience == 0) throw ConfigError("patience must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw ConfigError("beta1 and beta2 must lie in (0, 1)");
  }
  if (!(adam_epsilon > 0.0)) throw ConfigError("adam_epsilon must be positive");
}

nlohmann::ordered_json to_json(const LossConfig& config) {
  return {{"classification_loss", to_string(config.classification_loss)},
          {"sim_loss", to_string(config.sim_loss)},
          {"sim_temperature", config.sim_temperature},
          {"include_self_similarity", config.include_self_similarity}};
}

nlohmann::ordered_json to_json(const TrainConfig& config) {
  return {{"batch_size", config.batch_size},
          {"max_epochs", config.max_epochs},
          {"learning_rate", config.learning_rate},
          {"weight_decay", config.weight_decay},
          {"beta1", config.beta1},
          {"beta2", config.beta2},
          {"adam_epsilon", config.adam_epsilon},
          {"patience", config.patience},
          {"seed", config.seed},
          {"loss", to_json(config.loss_config)}};
}

nlohmann::ordered_json TrainReport::to_json() const {
  auto records = nlohmann::ordered_json::array();
  for (const auto& e : epochs) {
    records.push_back({{"epoch", e.epoch},
                       {"train_l1", e.train_l1},
                       {"train_l2", e.train_l2},
                       {"train_loss", e.train_loss},
                       {"dev_accuracy", e.dev_accuracy}});
  }
  return {{"epochs", std::move(records)},
          {"best_epoch", best_epoch},
          {"best_dev_accuracy", best_dev_accuracy},
          {"stopped_early", stopped_early},
          {"checkpoint", checkpoint}};
}

bool EarlyStopping::observe(std::size_t epoch, double accuracy) {
  improved_ = accuracy > best_;
  if (improved_) {
    best_ = accuracy;
    best_epoch_ = epoch;
    stale_ = 0;
    return false;
  }
  return ++stale_ >= patience_;
}

double accuracy(const StudentModel& model, std::span<const LabeledExample> examples) {
  if (examples.empty()) throw EmptyInputError("accuracy over an empty set");
  std::size_t correct = 0;
  for (const auto& e : examples) correct += predict(model, e.student_features) == e.label;
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

BatchGradients batch_gradients(const StudentModel& model, std::span<const TrainExample> batch,
                               const LossConfig& config) {
  std::vector<ForwardTrace> traces;
  std::vector<LabelDistribution> soft;
  std::vector<std::size_t> hard;
  std::vector<std::vector<double>> teacher;
  traces.reserve(batch.size());
  for (const auto& ex : batch) {
    traces.push_back(forward(model, ex.features));
    soft.push_back(ex.soft_label);
    hard.push_back(ex.hard_label);
    teacher.push_back(ex.teacher_embedding);
  }
  auto loss = total_loss(soft, hard, teacher, traces, config);
  auto grads = backward(model, traces, loss.grad_logits, loss.grad_repr);
  return {std::move(loss), std::move(grads)};
}

namespace {

std::string diverged(std::size_t epoch, std::size_t batch, const char* what) {
  return "training diverged at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) + ": " + what;
}

}  // namespace

TrainResult train(StudentModel model, std::span<const TrainExample> train_set,
                  std::span<const LabeledExample> dev_set, const TrainConfig& config) {
  config.validate();
  if (train_set.empty()) throw EmptyInputError("training set is empty");
  if (dev_set.empty()) throw EmptyInputError("dev set is empty");

  const bool sim_active = config.loss_config.sim_loss != SimLossKind::kNone;
  const auto optimizer = config.optimizer();
  AdamWState state(model.parameter_count());
  Rng shuffler(derive_seed(config.seed, seed_stream::kShuffle));
  EarlyStopping stopper(config.patience);

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<TrainExample> batch;

  TrainReport report;
  StudentModel best = model.rounded_to_f32();
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffler.shuffle(std::span(order));
    EpochRecord record{epoch, 0.0, 0.0, 0.0, 0.0};
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      if (sim_active && end - start < 2) continue;
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(train_set[order[i]]);
      BatchGradients step;
      try {
        step = batch_gradients(model, batch, config.loss_config);
        adamw_step(model, step.grads, state, optimizer);
      } catch (const NonFiniteGradientError& e) {
        throw NonFiniteGradientError(diverged(epoch, batches + 1, e.what()));
      } catch (const DataError& e) {
        // Overflowing parameters surface as invalid predicted distributions.
        throw NonFiniteGradientError(diverged(epoch, batches + 1, e.what()));
      }
      record.train_l1 += step.loss.l1_value;
      record.train_l2 += step.loss.l2_value;
      record.train_loss += step.loss.total;
      ++batches;
    }
    if (batches > 0) {
      const double inv = 1.0 / static_cast<double>(batches);
      record.train_l1 *= inv;
      record.train_l2 *= inv;
      record.train_loss *= inv;
    }

    // Dev accuracy is measured on the checkpoint-precision snapshot so that a
    // reloaded checkpoint reproduces it exactly.
    StudentModel snapshot = model.rounded_to_f32();
    record.dev_accuracy = accuracy(snapshot, dev_set);
    report.epochs.push_back(record);
    const bool stop = stopper.observe(epoch, record.dev_accuracy);
    if (stopper.improved()) best = std::move(snapshot);
    if (stop) {
      report.stopped_early = epoch < config.max_epochs;
      break;
    }
  }
  report.best_epoch = stopper.best_epoch();
  report.best_dev_accuracy = stopper.best_accuracy();
  return {std::move(report), std::move(best)};
}

}  // namespace knnkd
