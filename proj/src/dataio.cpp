// SPDX-License-Identifier: Apache-2.0
#include "knnkd/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "knnkd/binary_io.hpp"
#include "knnkd/errors.hpp"
#include "knnkd/rng.hpp"

namespace knnkd {

namespace {

using nlohmann::json;

constexpr std::string_view kEmbeddingMagic = "SXEM";
constexpr std::uint16_t kEmbeddingVersion = 1;

void check_unique_ids(std::span<const std::string> ids) {
  std::unordered_set<std::string_view> seen;
  for (const auto& id : ids) {
    if (!seen.insert(id).second) throw DataError("duplicate id '" + id + "'");
  }
}

void check_finite(const EmbeddingFile& f) {
  for (std::size_t i = 0; i < f.values.size(); ++i) {
    if (!std::isfinite(f.values[i])) {
      throw DataError("non-finite value in record '" + f.ids[i / f.dim] + "'");
    }
  }
}

/// Calls fn(line_number, parsed) for every non-blank line.
template <typename Fn>
void for_each_json_line(std::string_view text, Fn&& fn) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      fn(line_no, json::parse(line));
    } catch (const json::exception& e) {
      throw FormatError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

}  // namespace

std::vector<double> EmbeddingFile::row_as_double(std::size_t i) const { return to_double(row(i)); }

std::string serialize_embeddings(const EmbeddingFile& file) {
  ByteWriter w;
  w.put_bytes(kEmbeddingMagic);
  w.put_u16(kEmbeddingVersion);
  w.put_u32(static_cast<std::uint32_t>(file.dim));
  w.put_u64(file.count());
  for (std::size_t i = 0; i < file.count(); ++i) {
    w.put_u16(static_cast<std::uint16_t>(file.ids[i].size()));
    w.put_bytes(file.ids[i]);
    for (float v : file.row(i)) w.put_f32(v);
  }
  return w.take();
}

EmbeddingFile deserialize_embeddings(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.remaining() < kEmbeddingMagic.size() || r.get_bytes(kEmbeddingMagic.size()) != kEmbeddingMagic) {
    throw FormatError("not an embedding file (bad magic)");
  }
  if (const auto version = r.get_u16(); version != kEmbeddingVersion) {
    throw FormatError("unsupported embedding file version " + std::to_string(version));
  }
  EmbeddingFile f;
  f.dim = r.get_u32();
  const std::uint64_t count = r.get_u64();
  if (f.dim == 0) throw FormatError("embedding header declares dim 0");
  if (count > r.remaining() / (2 + 4 * f.dim)) throw FormatError("embedding payload truncated");
  f.ids.reserve(count);
  f.values.reserve(count * f.dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::size_t id_len = r.get_u16();
    f.ids.emplace_back(r.get_bytes(id_len));
    for (std::size_t d = 0; d < f.dim; ++d) f.values.push_back(r.get_f32());
  }
  if (!r.at_end()) throw FormatError("trailing bytes after embedding payload");
  check_finite(f);
  check_unique_ids(f.ids);
  return f;
}

std::string embeddings_to_jsonl(const EmbeddingFile& file) {
  std::string out;
  for (std::size_t i = 0; i < file.count(); ++i) {
    nlohmann::ordered_json line;
    line["id"] = file.ids[i];
    line["vector"] = to_double(file.row(i));
    out += line.dump();
    out += '\n';
  }
  return out;
}

EmbeddingFile embeddings_from_jsonl(std::string_view text) {
  EmbeddingFile f;
  for_each_json_line(text, [&](std::size_t line_no, const json& j) {
    const auto vec = j.at("vector").get<std::vector<double>>();
    if (f.ids.empty()) f.dim = vec.size();
    if (vec.empty() || vec.size() != f.dim) {
      throw FormatError("line " + std::to_string(line_no) + ": vector has dim " +
                        std::to_string(vec.size()) + ", expected " + std::to_string(f.dim));
    }
    f.ids.push_back(j.at("id").get<std::string>());
    for (double v : vec) f.values.push_back(static_cast<float>(v));
  });
  check_finite(f);
  check_unique_ids(f.ids);
  return f;
}

EmbeddingFile load_embeddings(const std::filesystem::path& path, EmbeddingRole role) {
  const auto bytes = read_file(path);
  EmbeddingFile f = path.extension() == ".jsonl" ? embeddings_from_jsonl(bytes)
                                                 : deserialize_embeddings(bytes);
  f.path = path;
  f.role = role;
  return f;
}

void save_embeddings(const std::filesystem::path& path, const EmbeddingFile& file) {
  write_file_atomic(path, path.extension() == ".jsonl" ? embeddings_to_jsonl(file)
                                                       : serialize_embeddings(file));
}

std::string labels_to_jsonl(std::span<const LabelRecord> labels) {
  std::string out;
  for (const auto& l : labels) {
    nlohmann::ordered_json line;
    line["id"] = l.id;
    line["label"] = l.label;
    if (l.soft_label) line["soft_label"] = *l.soft_label;
    out += line.dump();
    out += '\n';
  }
  return out;
}

std::vector<LabelRecord> labels_from_jsonl(std::string_view text) {
  std::vector<LabelRecord> out;
  for_each_json_line(text, [&](std::size_t, const json& j) {
    LabelRecord r;
    r.id = j.at("id").get<std::string>();
    r.label = j.at("label").get<std::size_t>();
    if (j.contains("soft_label")) r.soft_label = j.at("soft_label").get<std::vector<double>>();
    out.push_back(std::move(r));
  });
  return out;
}

std::vector<LabelRecord> load_labels(const std::filesystem::path& path) {
  return labels_from_jsonl(read_file(path));
}

std::vector<AnnotationRecord> annotations_from_jsonl(std::string_view text) {
  std::vector<AnnotationRecord> out;
  for_each_json_line(text, [&](std::size_t line_no, const json& j) {
    AnnotationRecord r;
    r.id = j.at("id").get<std::string>();
    try {
      r.soft_label = LabelDistribution(j.at("soft_label").get<std::vector<double>>());
    } catch (const Error& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
    r.hard_label = j.at("hard_label").get<std::size_t>();
    r.neighbor_ids = j.at("neighbor_ids").get<std::vector<std::string>>();
    r.distances = j.at("distances").get<std::vector<double>>();
    out.push_back(std::move(r));
  });
  return out;
}

std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path) {
  return annotations_from_jsonl(read_file(path));
}

std::size_t LabeledDataset::teacher_dim() const {
  return examples.empty() ? 0 : examples.front().teacher_embedding.size();
}

std::size_t LabeledDataset::student_dim() const {
  return examples.empty() ? 0 : examples.front().student_features.size();
}

EmbeddingFile LabeledDataset::teacher_file() const {
  EmbeddingFile f{{}, EmbeddingRole::kTeacher, teacher_dim(), {}, {}};
  for (const auto& e : examples) {
    f.ids.push_back(e.id);
    for (double v : e.teacher_embedding) f.values.push_back(static_cast<float>(v));
  }
  return f;
}

EmbeddingFile LabeledDataset::student_file() const {
  EmbeddingFile f{{}, EmbeddingRole::kStudentFeatures, student_dim(), {}, {}};
  for (const auto& e : examples) {
    f.ids.push_back(e.id);
    for (double v : e.student_features) f.values.push_back(static_cast<float>(v));
  }
  return f;
}

std::vector<LabelRecord> LabeledDataset::label_records() const {
  std::vector<LabelRecord> out;
  out.reserve(examples.size());
  for (const auto& e : examples) {
    LabelRecord r{e.id, e.label, std::nullopt};
    if (e.soft_label) r.soft_label.emplace(e.soft_label->probs().begin(), e.soft_label->probs().end());
    out.push_back(std::move(r));
  }
  return out;
}

LabeledDataset assemble_dataset(const EmbeddingFile& teacher, const EmbeddingFile& student,
                                std::span<const LabelRecord> labels, std::size_t num_classes) {
  std::unordered_map<std::string_view, std::size_t> teacher_index, student_index;
  for (std::size_t i = 0; i < teacher.count(); ++i) teacher_index.emplace(teacher.ids[i], i);
  for (std::size_t i = 0; i < student.count(); ++i) student_index.emplace(student.ids[i], i);
  LabeledDataset out;
  out.num_classes = num_classes;
  out.examples.reserve(labels.size());
  for (const auto& l : labels) {
    const auto t = teacher_index.find(l.id);
    if (t == teacher_index.end()) throw DataError("id '" + l.id + "' has no teacher embedding");
    const auto s = student_index.find(l.id);
    if (s == student_index.end()) throw DataError("id '" + l.id + "' has no student features");
    if (l.label >= num_classes) throw LabelError("id '" + l.id + "' has label out of range");
    LabeledExample e{l.id, teacher.row_as_double(t->second), student.row_as_double(s->second), l.label,
                     std::nullopt};
    if (l.soft_label) {
      try {
        e.soft_label = LabelDistribution(*l.soft_label);
      } catch (const Error& err) {
        throw DataError("id '" + l.id + "': " + err.what());
      }
    }
    out.examples.push_back(std::move(e));
  }
  if (teacher.count() != labels.size() || student.count() != labels.size()) {
    std::unordered_set<std::string_view> labeled;
    for (const auto& l : labels) labeled.insert(l.id);
    for (const auto* f : {&teacher, &student}) {
      for (const auto& id : f->ids) {
        if (!labeled.contains(id)) throw DataError("id '" + id + "' has no label");
      }
    }
    throw DataError("embedding and label files hold different record counts");
  }
  return out;
}

DatasetPaths dataset_paths(const std::filesystem::path& dir, std::string_view stem) {
  const std::string s(stem);
  return {dir / (s + ".teacher.sxem"), dir / (s + ".student.sxem"), dir / (s + ".labels.jsonl")};
}

void save_dataset(const std::filesystem::path& dir, std::string_view stem, const LabeledDataset& data) {
  const auto paths = dataset_paths(dir, stem);
  save_embeddings(paths.teacher, data.teacher_file());
  save_embeddings(paths.student, data.student_file());
  write_file_atomic(paths.labels, labels_to_jsonl(data.label_records()));
}

LabeledDataset load_dataset(const std::filesystem::path& dir, std::string_view stem,
                            std::size_t num_classes) {
  const auto paths = dataset_paths(dir, stem);
  const auto labels = load_labels(paths.labels);
  return assemble_dataset(load_embeddings(paths.teacher, EmbeddingRole::kTeacher),
                          load_embeddings(paths.student, EmbeddingRole::kStudentFeatures), labels,
                          num_classes);
}

std::uint64_t dataset_digest(const LabeledDataset& data) {
  std::string bytes = serialize_embeddings(data.teacher_file());
  bytes += serialize_embeddings(data.student_file());
  bytes += labels_to_jsonl(data.label_records());
  return fnv1a64(bytes);
}

void SyntheticSpec::validate() const {
  if (num_classes < 2) throw ConfigError("synthetic spec needs at least two classes");
  if (dim_teacher <= num_classes) {
    throw ConfigError("dim_teacher must exceed num_classes to leave room for the shift direction");
  }
  if (dim_student == 0) throw ConfigError("dim_student must be >= 1");
  for (const auto* s : {&source, &target}) {
    if (s->train == 0 || s->dev == 0 || s->test == 0) throw ConfigError("split sizes must be >= 1");
  }
  if (!(noise_sigma > 0.0)) throw ConfigError("noise_sigma must be positive");
  if (!std::isfinite(class_separation) || !std::isfinite(domain_shift)) {
    throw ConfigError("separation and shift must be finite");
  }
}

namespace {

struct DomainGeometry {
  const SyntheticSpec& spec;
  std::span<const double> projection;  // dim_student x dim_teacher
  std::span<const double> shift;       // unit, zero on class coordinates
};

LabeledDataset sample_split(const DomainGeometry& g, bool target, std::string_view prefix,
                            std::size_t count, Rng& rng) {
  const auto& spec = g.spec;
  std::vector<std::size_t> labels(count);
  for (std::size_t i = 0; i < count; ++i) labels[i] = i % spec.num_classes;
  rng.shuffle(std::span(labels));

  LabeledDataset out;
  out.num_classes = spec.num_classes;
  out.examples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    LabeledExample e;
    e.label = labels[i];
    char id[64];
    std::snprintf(id, sizeof id, "%.*s-%06zu", static_cast<int>(prefix.size()), prefix.data(), i);
    e.id = id;

    e.teacher_embedding.resize(spec.dim_teacher);
    for (std::size_t d = 0; d < spec.dim_teacher; ++d) {
      double mean = (d == e.label) ? spec.class_separation : 0.0;
      if (target) mean += spec.domain_shift * g.shift[d];
      e.teacher_embedding[d] = static_cast<float>(rng.normal(mean, spec.noise_sigma));
    }
    e.student_features.resize(spec.dim_student);
    for (std::size_t r = 0; r < spec.dim_student; ++r) {
      double v = 0.0;
      for (std::size_t d = 0; d < spec.dim_teacher; ++d) {
        v += g.projection[r * spec.dim_teacher + d] * e.teacher_embedding[d];
      }
      e.student_features[r] = static_cast<float>(v + rng.normal(0.0, spec.noise_sigma));
    }
    out.examples.push_back(std::move(e));
  }
  return out;
}

}  // namespace

SyntheticDomains generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);

  std::vector<double> projection(spec.dim_student * spec.dim_teacher);
  const double scale = 1.0 / std::sqrt(static_cast<double>(spec.dim_teacher));
  for (double& p : projection) p = rng.normal(0.0, scale);

  std::vector<double> shift(spec.dim_teacher, 0.0);
  double norm = 0.0;
  while (norm == 0.0) {
    for (std::size_t d = spec.num_classes; d < spec.dim_teacher; ++d) shift[d] = rng.normal();
    norm = l2_norm(shift);
  }
  for (double& v : shift) v /= norm;

  const DomainGeometry g{spec, projection, shift};
  SyntheticDomains out;
  out.shift_direction = shift;
  out.source.train = sample_split(g, false, "src-train", spec.source.train, rng);
  out.source.dev = sample_split(g, false, "src-dev", spec.source.dev, rng);
  out.source.test = sample_split(g, false, "src-test", spec.source.test, rng);
  out.target.train = sample_split(g, true, "tgt-train", spec.target.train, rng);
  out.target.dev = sample_split(g, true, "tgt-dev", spec.target.dev, rng);
  out.target.test = sample_split(g, true, "tgt-test", spec.target.test, rng);
  return out;
}

DomainSplits split(const LabeledDataset& data, std::array<double, 3> fractions, std::uint64_t seed,
                   bool stratified) {
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0) || !std::isfinite(f)) throw ConfigError("split fractions must be non-negative");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");

  Rng rng(seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(std::span(order));

  std::vector<std::vector<std::size_t>> groups;
  if (stratified) {
    groups.resize(data.num_classes);
    for (auto i : order) groups.at(data.examples[i].label).push_back(i);
  } else {
    groups.push_back(order);
  }

  DomainSplits out;
  for (auto* part : {&out.train, &out.dev, &out.test}) part->num_classes = data.num_classes;
  std::array<std::vector<std::size_t>, 3> picked;
  for (const auto& group : groups) {
    const std::size_t n = group.size();
    const auto n_train = std::min(n, static_cast<std::size_t>(std::llround(fractions[0] * n)));
    const auto n_dev = std::min(n - n_train, static_cast<std::size_t>(std::llround(fractions[1] * n)));
    for (std::size_t j = 0; j < n; ++j) {
      picked[j < n_train ? 0 : (j < n_train + n_dev ? 1 : 2)].push_back(group[j]);
    }
  }
  std::array<LabeledDataset*, 3> parts{&out.train, &out.dev, &out.test};
  for (std::size_t p = 0; p < 3; ++p) {
    // Class groups are concatenated; restore a mixed order.
    if (stratified) rng.shuffle(std::span(picked[p]));
    for (auto i : picked[p]) parts[p]->examples.push_back(data.examples[i]);
  }
  return out;
}

}  // namespace knnkd
