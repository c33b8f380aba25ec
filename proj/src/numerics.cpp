// SPDX-License-Identifier: Apache-2.0
#include "knnkd/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "knnkd/errors.hpp"

namespace knnkd {

namespace {

void require_same_dim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("dimension mismatch: " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
  }
}

}  // namespace

EmbeddingVector::EmbeddingVector(std::vector<double> values) : values_(std::move(values)) {
  if (values_.empty()) throw DimensionError("embedding must have dim >= 1");
  for (double v : values_) {
    if (!std::isfinite(v)) throw DataError("embedding has a non-finite entry");
  }
}

LabelDistribution::LabelDistribution(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.size() < 2) throw DimensionError("label distribution needs at least 2 classes");
  double sum = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0 && p <= 1.0)) throw DataError("label probability outside [0, 1]");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw DataError("label distribution sums to " + std::to_string(sum));
  }
}

std::size_t LabelDistribution::argmax() const noexcept {
  return static_cast<std::size_t>(std::max_element(probs_.begin(), probs_.end()) - probs_.begin());
}

double dot(std::span<const double> a, std::span<const double> b) {
  require_same_dim(a, b);
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
  return sum;
}

double l2_norm(std::span<const double> a) {
  double sum = 0.0;
  for (double v : a) sum += v * v;
  return std::sqrt(sum);
}

double squared_euclidean_distance(std::span<const double> a, std::span<const double> b) {
  require_same_dim(a, b);
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    sum += diff * diff;
  }
  return sum;
}

double euclidean_distance(std::span<const double> a, std::span<const double> b) {
  return std::sqrt(squared_euclidean_distance(a, b));
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  require_same_dim(a, b);
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) throw DegenerateVectorError("cosine similarity of a zero vector");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

std::vector<double> softmax(std::span<const double> scores, double temperature) {
  if (scores.empty()) throw EmptyInputError("softmax of an empty vector");
  if (!(temperature > 0.0)) throw ConfigError("softmax temperature must be positive");
  const double top = *std::max_element(scores.begin(), scores.end());
  std::vector<double> out(scores.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp((scores[i] - top) / temperature);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  require_same_dim(p, q);
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    sum += p[i] * (std::log(p[i]) - std::log(std::max(q[i], kProbabilityFloor)));
  }
  return sum;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw EmptyInputError("argmax of an empty vector");
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

}  // namespace knnkd
