// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "knnkd/numerics.hpp"

namespace knnkd {

enum class EmbeddingRole { kTeacher, kStudentFeatures };

/// A set of id-tagged vectors as stored on disk (32-bit values).
struct EmbeddingFile {
  std::filesystem::path path;
  EmbeddingRole role = EmbeddingRole::kTeacher;
  std::size_t dim = 0;
  std::vector<std::string> ids;
  std::vector<float> values;  // count x dim, row-major

  std::size_t count() const noexcept { return ids.size(); }
  std::span<const float> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
  std::vector<double> row_as_double(std::size_t i) const;
};

/// SXEM binary layout: "SXEM", u16 version, u32 dim, u64 count, then per
/// record u16 id length, id bytes, dim little-endian f32.
std::string serialize_embeddings(const EmbeddingFile& file);
/// Throws FormatError (bad magic/version, truncation) or DataError
/// (non-finite value, duplicate id).
EmbeddingFile deserialize_embeddings(std::string_view bytes);

/// One {"id": ..., "vector": [...]} object per line.
std::string embeddings_to_jsonl(const EmbeddingFile& file);
EmbeddingFile embeddings_from_jsonl(std::string_view text);

/// Picks the JSONL reader for *.jsonl paths and the SXEM reader otherwise.
EmbeddingFile load_embeddings(const std::filesystem::path& path,
                              EmbeddingRole role = EmbeddingRole::kTeacher);
void save_embeddings(const std::filesystem::path& path, const EmbeddingFile& file);

struct LabelRecord {
  std::string id;
  std::size_t label = 0;
  std::optional<std::vector<double>> soft_label;
};

std::string labels_to_jsonl(std::span<const LabelRecord> labels);
std::vector<LabelRecord> labels_from_jsonl(std::string_view text);
std::vector<LabelRecord> load_labels(const std::filesystem::path& path);

/// One line of annotate output read back in.
struct AnnotationRecord {
  std::string id;
  LabelDistribution soft_label;
  std::size_t hard_label = 0;
  std::vector<std::string> neighbor_ids;
  std::vector<double> distances;
};

std::vector<AnnotationRecord> annotations_from_jsonl(std::string_view text);
std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path);

struct LabeledExample {
  std::string id;
  std::vector<double> teacher_embedding;
  std::vector<double> student_features;
  std::size_t label = 0;
  std::optional<LabelDistribution> soft_label;
};

struct LabeledDataset {
  std::size_t num_classes = 2;
  std::vector<LabeledExample> examples;

  std::size_t size() const noexcept { return examples.size(); }
  bool empty() const noexcept { return examples.empty(); }
  std::size_t teacher_dim() const;
  std::size_t student_dim() const;

  EmbeddingFile teacher_file() const;
  EmbeddingFile student_file() const;
  std::vector<LabelRecord> label_records() const;
};

/// Joins the three files by id. Throws DataError on the first id that is
/// missing from one of them.
LabeledDataset assemble_dataset(const EmbeddingFile& teacher, const EmbeddingFile& student,
                                std::span<const LabelRecord> labels, std::size_t num_classes);

/// Dataset `stem` inside `dir` is the file triple stem.teacher.sxem,
/// stem.student.sxem and stem.labels.jsonl.
struct DatasetPaths {
  std::filesystem::path teacher;
  std::filesystem::path student;
  std::filesystem::path labels;
};
DatasetPaths dataset_paths(const std::filesystem::path& dir, std::string_view stem);
void save_dataset(const std::filesystem::path& dir, std::string_view stem, const LabeledDataset& data);
LabeledDataset load_dataset(const std::filesystem::path& dir, std::string_view stem,
                            std::size_t num_classes);

/// Digest of the serialized file triple.
std::uint64_t dataset_digest(const LabeledDataset& data);

struct SplitSizes {
  std::size_t train = 1000;
  std::size_t dev = 200;
  std::size_t test = 500;
};

struct SyntheticSpec {
  std::size_t dim_teacher = 32;
  std::size_t dim_student = 16;
  std::size_t num_classes = 2;
  SplitSizes source;
  SplitSizes target;
  double class_separation = 2.0;
  double domain_shift = 1.0;
  double noise_sigma = 0.5;
  std::uint64_t seed = 42;

  /// Throws ConfigError.
  void validate() const;
};

struct DomainSplits {
  LabeledDataset train;
  LabeledDataset dev;
  LabeledDataset test;
};

struct SyntheticDomains {
  DomainSplits source;
  DomainSplits target;
  /// Unit vector of the source-to-target offset (teacher space).
  std::vector<double> shift_direction;
};

/// Class c has teacher mean class_separation * e_c in both domains; the
/// target domain is offset by domain_shift along a unit direction orthogonal
/// to every class direction. Student features are a fixed random linear
/// projection of the teacher vector plus independent noise.
SyntheticDomains generate_synthetic(const SyntheticSpec& spec);

/// Seeded shuffle then contiguous partition by (train, dev, test) fractions.
/// With stratified set, each class is partitioned separately.
DomainSplits split(const LabeledDataset& data, std::array<double, 3> fractions, std::uint64_t seed,
                   bool stratified = false);

}  // namespace knnkd
