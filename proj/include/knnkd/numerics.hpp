// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace knnkd {

/// Fixed-dimension real vector with finite entries.
class EmbeddingVector {
 public:
  EmbeddingVector() = default;
  /// Throws DimensionError when empty and DataError on non-finite entries.
  explicit EmbeddingVector(std::vector<double> values);

  std::size_t dim() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }

  operator std::span<const double>() const noexcept { return values_; }

  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;

 private:
  std::vector<double> values_;
};

/// Probability vector over C >= 2 classes.
class LabelDistribution {
 public:
  LabelDistribution() = default;
  /// Throws DataError unless every entry lies in [0, 1] and the sum is 1
  /// within 1e-9; DimensionError when fewer than two classes.
  explicit LabelDistribution(std::vector<double> probs);

  std::size_t num_classes() const noexcept { return probs_.size(); }
  std::span<const double> probs() const noexcept { return probs_; }
  double operator[](std::size_t c) const { return probs_[c]; }
  /// Lowest index wins ties.
  std::size_t argmax() const noexcept;

  friend bool operator==(const LabelDistribution&, const LabelDistribution&) = default;

 private:
  std::vector<double> probs_;
};

/// Normalized batch-wise similarity profile of one anchor example.
struct SimilarityDistribution {
  std::vector<double> probs;
  std::size_t anchor = 0;
};

inline constexpr double kProbabilityFloor = 1e-12;

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);

double euclidean_distance(std::span<const double> a, std::span<const double> b);
double squared_euclidean_distance(std::span<const double> a, std::span<const double> b);

/// Throws DegenerateVectorError when either norm is zero.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Max-subtracted softmax of scores / temperature.
std::vector<double> softmax(std::span<const double> scores, double temperature = 1.0);

/// KL(p || q) in nats; q is floored at kProbabilityFloor before the log.
double kl_divergence(std::span<const double> p, std::span<const double> q);

/// Lowest index wins ties. Throws EmptyInputError on empty input.
std::size_t argmax(std::span<const double> values);

}  // namespace knnkd
