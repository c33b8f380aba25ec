// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "knnkd/dataio.hpp"
#include "knnkd/losses.hpp"
#include "knnkd/student.hpp"

namespace knnkd {

struct AdamWConfig {
  double learning_rate = 5e-5;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment estimates plus the step counter.
struct AdamWState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::uint64_t step = 0;

  explicit AdamWState(std::size_t parameter_count = 0)
      : first_moment(parameter_count, 0.0), second_moment(parameter_count, 0.0) {}
};

/// theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta.
/// Throws NonFiniteGradientError before touching any parameter if a
/// gradient entry is NaN or infinite; DimensionError on shape mismatch.
void adamw_step(std::span<double> params, std::span<const double> grads, AdamWState& state,
                const AdamWConfig& config);
void adamw_step(StudentModel& model, const GradientSet& grads, AdamWState& state,
                const AdamWConfig& config);

struct TrainConfig {
  std::size_t batch_size = 8;
  std::size_t max_epochs = 20;
  double learning_rate = 5e-5;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t patience = 3;
  std::uint64_t seed = 0;
  LossConfig loss_config;

  AdamWConfig optimizer() const {
    return {learning_rate, weight_decay, beta1, beta2, adam_epsilon};
  }
  /// Throws ConfigError.
  void validate() const;
};

nlohmann::ordered_json to_json(const LossConfig& config);
nlohmann::ordered_json to_json(const TrainConfig& config);

/// What the trainer consumes per target example.
struct TrainExample {
  std::vector<double> features;           // student input
  std::vector<double> teacher_embedding;  // SimLoss teacher side
  LabelDistribution soft_label;           // KL target
  std::size_t hard_label = 0;             // CE target
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_l1 = 0.0;
  double train_l2 = 0.0;
  double train_loss = 0.0;
  double dev_accuracy = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_dev_accuracy = 0.0;
  bool stopped_early = false;
  std::string checkpoint;

  nlohmann::ordered_json to_json() const;
};

struct TrainResult {
  TrainReport report;
  /// Best-dev snapshot, rounded to checkpoint precision.
  StudentModel best_model;
};

/// Patience counts consecutive epochs without a strictly higher accuracy.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  /// Returns true when training should stop after this epoch.
  bool observe(std::size_t epoch, double accuracy);
  /// Whether the last observed epoch set a new best.
  bool improved() const noexcept { return improved_; }
  std::size_t best_epoch() const noexcept { return best_epoch_; }
  double best_accuracy() const noexcept { return best_; }

 private:
  std::size_t patience_;
  std::size_t stale_ = 0;
  std::size_t best_epoch_ = 0;
  double best_ = -1.0;
  bool improved_ = false;
};

/// Fraction of examples whose argmax prediction equals the label.
double accuracy(const StudentModel& model, std::span<const LabeledExample> examples);

struct BatchGradients {
  BatchLossResult loss;
  GradientSet grads;
};

/// Forward, loss and backward for one batch.
BatchGradients batch_gradients(const StudentModel& model, std::span<const TrainExample> batch,
                               const LossConfig& config);

/// Mini-batch AdamW with seeded per-epoch shuffling and early stopping on
/// dev accuracy. Throws EmptyInputError on an empty train or dev set.
TrainResult train(StudentModel model, std::span<const TrainExample> train_set,
                  std::span<const LabeledExample> dev_set, const TrainConfig& config);

}  // namespace knnkd
