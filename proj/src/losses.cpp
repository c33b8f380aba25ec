// SPDX-License-Identifier: Apache-2.0
#include "knnkd/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "knnkd/errors.hpp"

namespace knnkd {

std::string_view to_string(ClassificationLoss c) { return c == ClassificationLoss::kKl ? "kl" : "ce"; }

std::string_view to_string(SimLossKind s) {
  switch (s) {
    case SimLossKind::kNone: return "none";
    case SimLossKind::kKl: return "kl";
    case SimLossKind::kL1: return "l1";
    case SimLossKind::kL2: return "l2";
  }
  return "none";
}

ClassificationLoss parse_classification_loss(std::string_view name) {
  if (name == "kl") return ClassificationLoss::kKl;
  if (name == "ce" || name == "cross_entropy") return ClassificationLoss::kCrossEntropy;
  throw ConfigError("unknown classification loss '" + std::string(name) + "'");
}

SimLossKind parse_sim_loss(std::string_view name) {
  if (name == "none") return SimLossKind::kNone;
  if (name == "kl") return SimLossKind::kKl;
  if (name == "l1") return SimLossKind::kL1;
  if (name == "l2") return SimLossKind::kL2;
  throw ConfigError("unknown sim loss '" + std::string(name) + "'");
}

void LossConfig::validate() const {
  if (!(sim_temperature > 0.0)) throw ConfigError("sim_temperature must be positive");
}

LossWithGradient classification_consistency_loss(std::span<const LabelDistribution> teacher,
                                                 std::span<const LabelDistribution> student) {
  if (teacher.size() != student.size()) throw DimensionError("teacher/student batch size mismatch");
  if (teacher.empty()) throw EmptyInputError("empty batch");
  const double n = static_cast<double>(teacher.size());
  LossWithGradient out;
  out.grad.resize(teacher.size());
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    const auto p = teacher[i].probs();
    const auto q = student[i].probs();
    if (p.size() != q.size()) throw DimensionError("class count mismatch at batch item " + std::to_string(i));
    out.value += kl_divergence(p, q);
    auto& g = out.grad[i];
    g.resize(q.size());
    for (std::size_t c = 0; c < q.size(); ++c) g[c] = (q[c] - p[c]) / n;
  }
  out.value /= n;
  return out;
}

LossWithGradient cross_entropy_loss(std::span<const std::size_t> hard_labels,
                                    std::span<const LabelDistribution> student) {
  if (hard_labels.size() != student.size()) throw DimensionError("label/student batch size mismatch");
  if (student.empty()) throw EmptyInputError("empty batch");
  const double n = static_cast<double>(student.size());
  LossWithGradient out;
  out.grad.resize(student.size());
  for (std::size_t i = 0; i < student.size(); ++i) {
    const auto q = student[i].probs();
    const std::size_t y = hard_labels[i];
    if (y >= q.size()) throw LabelError("label " + std::to_string(y) + " out of range");
    out.value -= std::log(std::max(q[y], kProbabilityFloor));
    auto& g = out.grad[i];
    g.resize(q.size());
    for (std::size_t c = 0; c < q.size(); ++c) g[c] = (q[c] - (c == y ? 1.0 : 0.0)) / n;
  }
  out.value /= n;
  return out;
}

namespace {

/// Batch positions compared against the anchor, in batch order.
std::vector<std::size_t> similarity_slots(std::size_t n, std::size_t anchor, bool include_self) {
  std::vector<std::size_t> slots;
  slots.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    if (include_self || j != anchor) slots.push_back(j);
  }
  return slots;
}

std::vector<double> raw_similarities(std::span<const std::vector<double>> reprs, std::size_t anchor,
                                     std::span<const std::size_t> slots) {
  std::vector<double> raw(slots.size());
  for (std::size_t s = 0; s < slots.size(); ++s) {
    const std::size_t j = slots[s];
    raw[s] = (j == anchor) ? 1.0 : cosine_similarity(reprs[j], reprs[anchor]);
  }
  return raw;
}

void require_nonzero(std::span<const std::vector<double>> reprs) {
  for (std::size_t j = 0; j < reprs.size(); ++j) {
    if (l2_norm(reprs[j]) == 0.0) {
      throw DegenerateVectorError("representation " + std::to_string(j) + " has zero norm");
    }
  }
}

}  // namespace

SimilarityDistribution batch_similarity_distribution(std::span<const std::vector<double>> reprs,
                                                     std::size_t anchor, double temperature,
                                                     bool include_self) {
  if (reprs.size() < 2) throw BatchTooSmallError("similarity distribution needs N >= 2");
  if (anchor >= reprs.size()) throw DimensionError("anchor index out of range");
  require_nonzero(reprs);
  const auto slots = similarity_slots(reprs.size(), anchor, include_self);
  return {softmax(raw_similarities(reprs, anchor, slots), temperature), anchor};
}

LossWithGradient sim_loss(std::span<const std::vector<double>> teacher_reprs,
                          std::span<const std::vector<double>> student_reprs, SimLossKind variant,
                          double temperature, bool include_self) {
  const std::size_t n = student_reprs.size();
  if (teacher_reprs.size() != n) throw DimensionError("teacher/student batch size mismatch");
  if (n < 2) throw BatchTooSmallError("sim loss needs a batch of at least 2");
  if (variant == SimLossKind::kNone) throw ConfigError("sim_loss called with variant none");
  if (!(temperature > 0.0)) throw ConfigError("sim temperature must be positive");
  require_nonzero(teacher_reprs);
  require_nonzero(student_reprs);

  const std::size_t repr_dim = student_reprs.front().size();
  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j) {
    if (student_reprs[j].size() != repr_dim) throw DimensionError("student representation dims differ");
    norms[j] = l2_norm(student_reprs[j]);
  }

  LossWithGradient out;
  out.grad.assign(n, std::vector<double>(repr_dim, 0.0));
  const double inv_n = 1.0 / static_cast<double>(n);

  for (std::size_t i = 0; i < n; ++i) {
    const auto slots = similarity_slots(n, i, include_self);
    const auto target = softmax(raw_similarities(teacher_reprs, i, slots), temperature);
    const auto raw = raw_similarities(student_reprs, i, slots);
    const auto pred = softmax(raw, temperature);

    // d(term_i)/d(raw_s), before the 1/N batch mean.
    std::vector<double> d_raw(slots.size(), 0.0);
    if (variant == SimLossKind::kKl) {
      out.value += kl_divergence(target, pred);
      for (std::size_t s = 0; s < slots.size(); ++s) d_raw[s] = (pred[s] - target[s]) / temperature;
    } else {
      std::vector<double> d_pred(slots.size(), 0.0);
      if (variant == SimLossKind::kL1) {
        for (std::size_t s = 0; s < slots.size(); ++s) {
          const double diff = pred[s] - target[s];
          out.value += std::abs(diff);
          d_pred[s] = (diff > 0.0) - (diff < 0.0);
        }
      } else {
        double sq = 0.0;
        for (std::size_t s = 0; s < slots.size(); ++s) sq += (pred[s] - target[s]) * (pred[s] - target[s]);
        const double norm = std::sqrt(sq);
        out.value += norm;
        if (norm > 0.0) {
          for (std::size_t s = 0; s < slots.size(); ++s) d_pred[s] = (pred[s] - target[s]) / norm;
        }
      }
      double weighted = 0.0;
      for (std::size_t s = 0; s < slots.size(); ++s) weighted += d_pred[s] * pred[s];
      for (std::size_t s = 0; s < slots.size(); ++s) {
        d_raw[s] = pred[s] * (d_pred[s] - weighted) / temperature;
      }
    }

    // Back through cos(h_j, h_i) into both h_j and the anchor h_i.
    const auto& hi = student_reprs[i];
    for (std::size_t s = 0; s < slots.size(); ++s) {
      const std::size_t j = slots[s];
      if (j == i) continue;
      const double g = d_raw[s] * inv_n;
      if (g == 0.0) continue;
      const auto& hj = student_reprs[j];
      const double c = raw[s];
      const double inv_prod = 1.0 / (norms[i] * norms[j]);
      const double inv_i2 = 1.0 / (norms[i] * norms[i]);
      const double inv_j2 = 1.0 / (norms[j] * norms[j]);
      for (std::size_t d = 0; d < repr_dim; ++d) {
        out.grad[j][d] += g * (hi[d] * inv_prod - c * hj[d] * inv_j2);
        out.grad[i][d] += g * (hj[d] * inv_prod - c * hi[d] * inv_i2);
      }
    }
  }
  out.value *= inv_n;
  return out;
}

BatchLossResult total_loss(std::span<const LabelDistribution> teacher_annotations,
                           std::span<const std::size_t> hard_labels,
                           std::span<const std::vector<double>> teacher_reprs,
                           std::span<const ForwardTrace> student_traces, const LossConfig& config) {
  config.validate();
  const std::size_t n = student_traces.size();
  if (n == 0) throw EmptyInputError("empty batch");

  std::vector<LabelDistribution> predicted;
  predicted.reserve(n);
  for (const auto& t : student_traces) predicted.push_back(t.predicted);

  BatchLossResult result;
  LossWithGradient l1;
  if (config.classification_loss == ClassificationLoss::kKl) {
    if (teacher_annotations.size() != n) throw DimensionError("annotation count does not match batch");
    l1 = classification_consistency_loss(teacher_annotations, predicted);
  } else {
    if (hard_labels.size() != n) throw DimensionError("hard label count does not match batch");
    l1 = cross_entropy_loss(hard_labels, predicted);
  }
  result.l1_value = l1.value;
  result.grad_logits = std::move(l1.grad);

  const std::size_t repr_dim = student_traces.front().representation().size();
  if (config.sim_loss == SimLossKind::kNone) {
    result.grad_repr.assign(n, std::vector<double>(repr_dim, 0.0));
  } else {
    if (teacher_reprs.size() != n) throw DimensionError("teacher representation count does not match batch");
    std::vector<std::vector<double>> student_reprs;
    student_reprs.reserve(n);
    for (const auto& t : student_traces) {
      student_reprs.emplace_back(t.representation().begin(), t.representation().end());
    }
    auto l2 = sim_loss(teacher_reprs, student_reprs, config.sim_loss, config.sim_temperature,
                       config.include_self_similarity);
    result.l2_value = l2.value;
    result.grad_repr = std::move(l2.grad);
  }
  result.total = result.l1_value + result.l2_value;
  return result;
}

}  // namespace knnkd
