// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "knnkd/numerics.hpp"

namespace knnkd {

inline constexpr std::size_t kDefaultNeighbors = 16;

/// One labeled source example handed to Datastore::build.
struct SourceRecord {
  EmbeddingVector key;
  std::size_t label = 0;
  std::string id;
};

struct KnnResult {
  std::vector<std::size_t> indices;
  std::vector<double> distances;  // ascending
  std::vector<std::size_t> labels;

  std::size_t size() const noexcept { return indices.size(); }
};

/// Immutable (key, label) store over the source domain. Keys are held at
/// 32-bit precision so that a persisted store answers queries bit-identically;
/// every distance is accumulated in double.
class Datastore {
 public:
  /// Throws EmptyInputError, DimensionError (mixed dims) or LabelError
  /// (label >= num_classes, or a class with no entries).
  static Datastore build(std::span<const SourceRecord> records, std::size_t num_classes);

  std::size_t size() const noexcept { return labels_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t num_classes() const noexcept { return num_classes_; }

  std::span<const float> key(std::size_t i) const { return {keys_.data() + i * dim_, dim_}; }
  std::vector<double> key_as_double(std::size_t i) const;
  std::size_t label(std::size_t i) const { return labels_[i]; }
  const std::string& id(std::size_t i) const { return ids_[i]; }

  /// Distance between entry i and a query of matching dim.
  double distance_to(std::size_t i, std::span<const double> query) const;

  /// SXDS serialization.
  std::string serialize() const;
  static Datastore deserialize(std::string_view bytes);
  void save(const std::filesystem::path& path) const;
  static Datastore load(const std::filesystem::path& path);

 private:
  Datastore() = default;

  std::size_t dim_ = 0;
  std::size_t num_classes_ = 0;
  std::vector<float> keys_;
  std::vector<std::size_t> labels_;
  std::vector<std::string> ids_;
};

/// Exact k smallest L2 distances, ties broken by lower entry index. Returns
/// min(k, store.size()) neighbors.
KnnResult query_knn(const Datastore& store, std::span<const double> query, std::size_t k);

/// Soft label from the k retrieved neighbors, weight exp(-d / temperature),
/// normalized over the retrieved set.
LabelDistribution annotate(const Datastore& store, std::span<const double> query, std::size_t k,
                           double temperature = 1.0);

/// Same as annotate() for an already retrieved neighbor set.
LabelDistribution label_distribution_from_neighbors(const KnnResult& neighbors,
                                                    std::size_t num_classes, double temperature);

struct TargetRecord {
  EmbeddingVector embedding;
  std::string id;
};

struct AnnotatedExample {
  std::string target_id;
  EmbeddingVector teacher_embedding;
  LabelDistribution soft_label;
  std::size_t hard_label = 0;
  KnnResult neighbors;
};

std::vector<AnnotatedExample> annotate_dataset(const Datastore& store,
                                               std::span<const TargetRecord> targets,
                                               std::size_t k, double temperature = 1.0);

/// One JSON object per line: id, soft_label, hard_label, neighbor_ids, distances.
std::string annotations_to_jsonl(const Datastore& store,
                                 std::span<const AnnotatedExample> annotations);

}  // namespace knnkd
