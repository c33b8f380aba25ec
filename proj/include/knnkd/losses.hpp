// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "knnkd/numerics.hpp"
#include "knnkd/student.hpp"

namespace knnkd {

enum class ClassificationLoss { kKl, kCrossEntropy };
enum class SimLossKind { kNone, kKl, kL1, kL2 };

std::string_view to_string(ClassificationLoss c);
std::string_view to_string(SimLossKind s);
ClassificationLoss parse_classification_loss(std::string_view name);
SimLossKind parse_sim_loss(std::string_view name);

struct LossConfig {
  ClassificationLoss classification_loss = ClassificationLoss::kKl;
  SimLossKind sim_loss = SimLossKind::kKl;
  double sim_temperature = 1.0;
  bool include_self_similarity = true;

  void validate() const;

  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

/// A scalar loss with its gradient, one row per batch item.
struct LossWithGradient {
  double value = 0.0;
  std::vector<std::vector<double>> grad;
};

/// Mean over the batch of KL(teacher_i || student_i); the gradient is with
/// respect to the student logits, (student_i - teacher_i) / n.
LossWithGradient classification_consistency_loss(std::span<const LabelDistribution> teacher,
                                                 std::span<const LabelDistribution> student);

/// -(1/n) sum ln student_i[label_i]; gradient (student_i - onehot) / n.
LossWithGradient cross_entropy_loss(std::span<const std::size_t> hard_labels,
                                    std::span<const LabelDistribution> student);

/// Softmax(cos(repr_j, repr_anchor) / temperature) over the batch. With
/// include_self false the anchor's own slot is left out and the result has
/// N - 1 entries.
SimilarityDistribution batch_similarity_distribution(std::span<const std::vector<double>> reprs,
                                                     std::size_t anchor, double temperature = 1.0,
                                                     bool include_self = true);

/// Similarity-consistency loss between the teacher-side and student-side
/// batch similarity distributions, averaged over anchors. The gradient is
/// with respect to the student representations only.
LossWithGradient sim_loss(std::span<const std::vector<double>> teacher_reprs,
                          std::span<const std::vector<double>> student_reprs, SimLossKind variant,
                          double temperature = 1.0, bool include_self = true);

struct BatchLossResult {
  double l1_value = 0.0;
  double l2_value = 0.0;
  double total = 0.0;
  std::vector<std::vector<double>> grad_logits;
  std::vector<std::vector<double>> grad_repr;
};

/// Assembles the classification loss chosen by config, the similarity loss
/// (zero when disabled) and both gradient streams for student::backward.
BatchLossResult total_loss(std::span<const LabelDistribution> teacher_annotations,
                           std::span<const std::size_t> hard_labels,
                           std::span<const std::vector<double>> teacher_reprs,
                           std::span<const ForwardTrace> student_traces, const LossConfig& config);

}  // namespace knnkd
