// SPDX-License-Identifier: Apache-2.0
#include "knnkd/datastore.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "knnkd/binary_io.hpp"
#include "knnkd/errors.hpp"

namespace knnkd {

namespace {

constexpr std::string_view kStoreMagic = "SXDS";
constexpr std::uint16_t kStoreVersion = 1;

void require_query_dim(const Datastore& store, std::span<const double> query) {
  if (query.size() != store.dim()) {
    throw DimensionError("query dim " + std::to_string(query.size()) + " does not match store dim " +
                         std::to_string(store.dim()));
  }
}

}  // namespace

Datastore Datastore::build(std::span<const SourceRecord> records, std::size_t num_classes) {
  if (records.empty()) throw EmptyInputError("datastore needs at least one entry");
  if (num_classes < 2) throw LabelError("datastore needs at least two classes");

  Datastore store;
  store.dim_ = records.front().key.dim();
  store.num_classes_ = num_classes;
  store.keys_.reserve(records.size() * store.dim_);
  store.labels_.reserve(records.size());
  store.ids_.reserve(records.size());

  std::vector<std::size_t> class_counts(num_classes, 0);
  for (const auto& r : records) {
    if (r.key.dim() != store.dim_) {
      throw DimensionError("entry '" + r.id + "' has dim " + std::to_string(r.key.dim()) +
                           ", expected " + std::to_string(store.dim_));
    }
    if (r.label >= num_classes) {
      throw LabelError("entry '" + r.id + "' has label " + std::to_string(r.label) +
                       " but num_classes is " + std::to_string(num_classes));
    }
    for (double v : r.key.values()) store.keys_.push_back(static_cast<float>(v));
    store.labels_.push_back(r.label);
    store.ids_.push_back(r.id);
    ++class_counts[r.label];
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (class_counts[c] == 0) throw LabelError("class " + std::to_string(c) + " has no entries");
  }
  return store;
}

std::vector<double> Datastore::key_as_double(std::size_t i) const {
  const auto k = key(i);
  return {k.begin(), k.end()};
}

double Datastore::distance_to(std::size_t i, std::span<const double> query) const {
  const float* row = keys_.data() + i * dim_;
  double sum = 0.0;
  for (std::size_t d = 0; d < dim_; ++d) {
    const double diff = static_cast<double>(row[d]) - query[d];
    sum += diff * diff;
  }
  return std::sqrt(sum);
}

std::string Datastore::serialize() const {
  ByteWriter w;
  w.put_bytes(kStoreMagic);
  w.put_u16(kStoreVersion);
  w.put_u32(static_cast<std::uint32_t>(dim_));
  w.put_u32(static_cast<std::uint32_t>(num_classes_));
  w.put_u64(size());
  for (std::size_t i = 0; i < size(); ++i) {
    w.put_u16(static_cast<std::uint16_t>(ids_[i].size()));
    w.put_bytes(ids_[i]);
    w.put_u16(static_cast<std::uint16_t>(labels_[i]));
    for (float v : key(i)) w.put_f32(v);
  }
  return w.take();
}

Datastore Datastore::deserialize(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.remaining() < kStoreMagic.size() || r.get_bytes(kStoreMagic.size()) != kStoreMagic) {
    throw FormatError("not a datastore file (bad magic)");
  }
  if (const auto version = r.get_u16(); version != kStoreVersion) {
    throw FormatError("unsupported datastore version " + std::to_string(version));
  }
  const std::size_t dim = r.get_u32();
  const std::size_t num_classes = r.get_u32();
  const std::uint64_t count = r.get_u64();
  if (dim == 0) throw FormatError("datastore header declares dim 0");
  // Smallest possible entry: empty id + label + payload.
  if (count > r.remaining() / (2 + 2 + 4 * dim)) throw FormatError("datastore payload truncated");

  std::vector<SourceRecord> records;
  records.reserve(count);
  std::vector<double> values(dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::size_t id_len = r.get_u16();
    std::string id(r.get_bytes(id_len));
    const std::size_t label = r.get_u16();
    for (auto& v : values) v = r.get_f32();
    try {
      records.push_back({EmbeddingVector(values), label, std::move(id)});
    } catch (const DataError& e) {
      throw DataError("datastore entry " + std::to_string(i) + ": " + e.what());
    }
  }
  if (!r.at_end()) throw FormatError("trailing bytes after datastore payload");
  return build(records, num_classes);
}

void Datastore::save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }

Datastore Datastore::load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

KnnResult query_knn(const Datastore& store, std::span<const double> query, std::size_t k) {
  require_query_dim(store, query);
  if (k == 0) throw ConfigError("k must be at least 1");
  const std::size_t take = std::min(k, store.size());

  std::vector<std::pair<double, std::size_t>> scored(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) scored[i] = {store.distance_to(i, query), i};
  // Pair ordering compares distance then index, which is the tie-break rule.
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end());

  KnnResult result;
  result.indices.reserve(take);
  result.distances.reserve(take);
  result.labels.reserve(take);
  for (std::size_t j = 0; j < take; ++j) {
    result.distances.push_back(scored[j].first);
    result.indices.push_back(scored[j].second);
    result.labels.push_back(store.label(scored[j].second));
  }
  return result;
}

LabelDistribution label_distribution_from_neighbors(const KnnResult& neighbors,
                                                    std::size_t num_classes, double temperature) {
  if (neighbors.size() == 0) throw EmptyInputError("no neighbors to annotate from");
  if (!(temperature > 0.0)) throw ConfigError("annotation temperature must be positive");

  // Shifting by the nearest distance leaves the normalized weights unchanged
  // and keeps the largest weight at exactly 1.
  const double nearest = neighbors.distances.front();
  std::vector<double> weights(neighbors.size());
  double total = 0.0;
  for (std::size_t j = 0; j < neighbors.size(); ++j) {
    weights[j] = std::exp(-(neighbors.distances[j] - nearest) / temperature);
    total += weights[j];
  }
  if (!(total > 0.0) || !std::isfinite(total)) {
    std::cerr << "warning: kNN weights underflowed; using uniform neighbor weights\n";
    std::fill(weights.begin(), weights.end(), 1.0);
    total = static_cast<double>(weights.size());
  }

  std::vector<double> probs(num_classes, 0.0);
  for (std::size_t j = 0; j < neighbors.size(); ++j) probs[neighbors.labels[j]] += weights[j];
  for (double& p : probs) p /= total;
  return LabelDistribution(std::move(probs));
}

LabelDistribution annotate(const Datastore& store, std::span<const double> query, std::size_t k,
                           double temperature) {
  return label_distribution_from_neighbors(query_knn(store, query, k), store.num_classes(),
                                           temperature);
}

std::vector<AnnotatedExample> annotate_dataset(const Datastore& store,
                                               std::span<const TargetRecord> targets,
                                               std::size_t k, double temperature) {
  std::vector<AnnotatedExample> out;
  out.reserve(targets.size());
  for (const auto& t : targets) {
    try {
      auto neighbors = query_knn(store, t.embedding, k);
      auto soft = label_distribution_from_neighbors(neighbors, store.num_classes(), temperature);
      const std::size_t hard = soft.argmax();
      out.push_back({t.id, t.embedding, std::move(soft), hard, std::move(neighbors)});
    } catch (const DimensionError& e) {
      throw DimensionError("target '" + t.id + "': " + e.what());
    }
  }
  return out;
}

std::string annotations_to_jsonl(const Datastore& store,
                                 std::span<const AnnotatedExample> annotations) {
  std::string out;
  for (const auto& a : annotations) {
    nlohmann::ordered_json line;
    line["id"] = a.target_id;
    line["soft_label"] = std::vector<double>(a.soft_label.probs().begin(), a.soft_label.probs().end());
    line["hard_label"] = a.hard_label;
    auto ids = nlohmann::json::array();
    for (std::size_t idx : a.neighbors.indices) ids.push_back(store.id(idx));
    line["neighbor_ids"] = std::move(ids);
    line["distances"] = a.neighbors.distances;
    out += line.dump();
    out += '\n';
  }
  return out;
}

}  // namespace knnkd
