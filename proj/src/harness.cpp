// SPDX-License-Identifier: Apache-2.0
#include "knnkd/harness.hpp"

#include <iomanip>
#include <sstream>

#include "knnkd/binary_io.hpp"
#include "knnkd/errors.hpp"

namespace knnkd {

nlohmann::ordered_json EvalResult::to_json() const {
  return {{"accuracy", accuracy},
          {"per_class_accuracy", per_class_accuracy},
          {"confusion", confusion},
          {"total", total}};
}

EvalResult evaluate(const StudentModel& model, std::span<const LabeledExample> examples,
                    std::size_t num_classes) {
  if (examples.empty()) throw EmptyInputError("evaluation set is empty");
  EvalResult r;
  r.total = examples.size();
  r.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (const auto& e : examples) {
    if (e.label >= num_classes) throw LabelError("example '" + e.id + "' has label out of range");
    const std::size_t predicted = predict(model, e.student_features);
    if (predicted >= num_classes) throw DimensionError("model predicts more classes than the dataset has");
    ++r.confusion[e.label][predicted];
  }
  std::size_t correct = 0;
  r.per_class_accuracy.assign(num_classes, 0.0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    correct += r.confusion[c][c];
    std::size_t row = 0;
    for (auto v : r.confusion[c]) row += v;
    if (row > 0) r.per_class_accuracy[c] = static_cast<double>(r.confusion[c][c]) / static_cast<double>(row);
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.total);
  return r;
}

EvalResult evaluate(const StudentModel& model, const LabeledDataset& test) {
  return evaluate(model, test.examples, test.num_classes);
}

std::string_view to_string(LabelSource s) { return s == LabelSource::kGroundTruth ? "GT" : "PT"; }

LabelSource parse_label_source(std::string_view name) {
  if (name == "gt" || name == "GT") return LabelSource::kGroundTruth;
  if (name == "pt" || name == "PT") return LabelSource::kPredicted;
  throw ConfigError("unknown label source '" + std::string(name) + "'");
}

std::vector<TrainExample> make_training_set(const LabeledDataset& data, LabelSource source) {
  std::vector<TrainExample> out;
  out.reserve(data.size());
  for (const auto& e : data.examples) {
    TrainExample t;
    t.features = e.student_features;
    t.teacher_embedding = e.teacher_embedding;
    if (e.soft_label) {
      t.soft_label = *e.soft_label;
    } else if (source == LabelSource::kPredicted) {
      throw DataError("example '" + e.id + "' has no soft label");
    } else {
      std::vector<double> onehot(data.num_classes, 0.0);
      onehot.at(e.label) = 1.0;
      t.soft_label = LabelDistribution(std::move(onehot));
    }
    t.hard_label = source == LabelSource::kGroundTruth ? e.label : t.soft_label.argmax();
    out.push_back(std::move(t));
  }
  return out;
}

void AblationArm::validate() const {
  if (label_source == LabelSource::kGroundTruth && classification_loss == ClassificationLoss::kKl) {
    throw ConfigError("KL classification loss needs predicted soft labels");
  }
}

std::string AblationArm::name() const {
  std::string n(to_string(label_source));
  n += classification_loss == ClassificationLoss::kKl ? ", KL" : ", CE";
  if (sim_loss_on) n += ", SimLoss";
  return n;
}

std::vector<AblationArm> ablation_arms() {
  using enum LabelSource;
  constexpr auto kCe = ClassificationLoss::kCrossEntropy;
  constexpr auto kKl = ClassificationLoss::kKl;
  return {{kGroundTruth, kCe, false}, {kPredicted, kCe, false}, {kGroundTruth, kCe, true},
          {kPredicted, kCe, true},    {kPredicted, kKl, false}, {kPredicted, kKl, true}};
}

nlohmann::ordered_json arm_config(const StudentConfig& student, const TrainConfig& train,
                                  LabelSource label_source) {
  nlohmann::ordered_json j;
  j["label_source"] = to_string(label_source);
  j["student"] = {{"input_dim", student.input_dim},
                  {"hidden_dims", student.hidden_dims},
                  {"repr_dim", student.repr_dim},
                  {"num_classes", student.num_classes},
                  {"activation", to_string(student.activation)},
                  {"seed", student.seed}};
  j["train"] = to_json(train);
  return j;
}

ArmResult run_arm(std::string name, const ExperimentData& data, const StudentConfig& student,
                  const TrainConfig& train, LabelSource label_source) {
  ArmResult r;
  r.name = std::move(name);
  r.config = arm_config(student, train, label_source);
  r.config_hash = hex_digest(fnv1a64(r.config.dump()));
  try {
    const auto train_set = make_training_set(data.target_train, label_source);
    auto result = knnkd::train(StudentModel::init(student), train_set, data.target_dev.examples, train);
    r.report = std::move(result.report);
    r.test = evaluate(result.best_model, data.target_test);
  } catch (const NonFiniteGradientError& e) {
    throw NonFiniteGradientError("arm '" + r.name + "': " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError("arm '" + r.name + "': " + e.what());
  } catch (const DataError& e) {
    throw DataError("arm '" + r.name + "': " + e.what());
  }
  return r;
}

ExperimentTable run_ablation(const ExperimentData& data, const StudentConfig& student,
                             const TrainConfig& base) {
  ExperimentTable table{"Ablation", {}};
  const auto arms = ablation_arms();
  for (std::size_t i = 0; i < arms.size(); ++i) {
    const auto& arm = arms[i];
    arm.validate();
    TrainConfig cfg = base;
    cfg.loss_config.classification_loss = arm.classification_loss;
    cfg.loss_config.sim_loss = arm.sim_loss_on ? SimLossKind::kKl : SimLossKind::kNone;
    table.rows.push_back(
        run_arm("(" + std::to_string(i + 1) + ") " + arm.name(), data, student, cfg, arm.label_source));
  }
  return table;
}

ExperimentTable run_simloss_comparison(const ExperimentData& data, const StudentConfig& student,
                                       const TrainConfig& base) {
  ExperimentTable table{"SimLoss variants", {}};
  for (auto kind : {SimLossKind::kL1, SimLossKind::kL2, SimLossKind::kKl}) {
    TrainConfig cfg = base;
    cfg.loss_config.classification_loss = ClassificationLoss::kKl;
    cfg.loss_config.sim_loss = kind;
    table.rows.push_back(run_arm("SimLoss " + std::string(to_string(kind)), data, student, cfg,
                                 LabelSource::kPredicted));
  }
  return table;
}

nlohmann::ordered_json ExperimentTable::to_json() const {
  auto rows_json = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    rows_json.push_back({{"name", r.name},
                         {"config_hash", r.config_hash},
                         {"config", r.config},
                         {"test", r.test.to_json()},
                         {"train_report", r.report.to_json()}});
  }
  return {{"title", title}, {"rows", std::move(rows_json)}};
}

std::string ExperimentTable::render() const {
  std::size_t width = 4;
  for (const auto& r : rows) width = std::max(width, r.name.size());
  std::ostringstream out;
  out << title << '\n';
  out << std::left << std::setw(static_cast<int>(width)) << "Arm" << "  " << std::right << std::setw(9)
      << "Test acc" << "  " << std::setw(8) << "Dev acc" << "  " << std::setw(10) << "Best epoch"
      << "  " << "Config\n";
  out << std::string(width + 2 + 9 + 2 + 8 + 2 + 10 + 2 + 16, '-') << '\n';
  out << std::fixed;
  for (const auto& r : rows) {
    out << std::left << std::setw(static_cast<int>(width)) << r.name << "  " << std::right
        << std::setw(9) << std::setprecision(2) << 100.0 * r.test.accuracy << "  " << std::setw(8)
        << 100.0 * r.report.best_dev_accuracy << "  " << std::setw(10) << r.report.best_epoch << "  "
        << r.config_hash << '\n';
  }
  return out.str();
}

SimilaritySpace parse_similarity_space(std::string_view name) {
  if (name == "teacher") return SimilaritySpace::kTeacher;
  if (name == "student") return SimilaritySpace::kStudent;
  throw ConfigError("unknown similarity space '" + std::string(name) + "'");
}

CaseStudyReport case_study(const Datastore& store, std::string query_id, std::span<const double> query,
                           std::size_t k, SimilaritySpace space) {
  const auto neighbors = query_knn(store, query, k);
  CaseStudyReport report{std::move(query_id), space, {}};
  for (std::size_t j = 0; j < neighbors.size(); ++j) {
    report.rows.push_back({j + 1, store.id(neighbors.indices[j]), neighbors.labels[j],
                           neighbors.distances[j]});
  }
  return report;
}

nlohmann::ordered_json CaseStudyReport::to_json() const {
  auto rows_json = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    rows_json.push_back({{"rank", r.rank}, {"id", r.id}, {"label", r.label}, {"distance", r.distance}});
  }
  return {{"query_id", query_id},
          {"space", space == SimilaritySpace::kTeacher ? "teacher" : "student"},
          {"neighbors", std::move(rows_json)}};
}

std::string CaseStudyReport::render() const {
  std::size_t width = 2;
  for (const auto& r : rows) width = std::max(width, r.id.size());
  std::ostringstream out;
  out << "Query " << query_id << " ("
      << (space == SimilaritySpace::kTeacher ? "teacher" : "student") << " space)\n";
  out << std::setw(4) << "Rank" << "  " << std::left << std::setw(static_cast<int>(width)) << "Id"
      << std::right << "  " << std::setw(5) << "Label" << "  " << std::setw(12) << "Distance" << '\n';
  for (const auto& r : rows) {
    out << std::setw(4) << r.rank << "  " << std::left << std::setw(static_cast<int>(width)) << r.id
        << std::right << "  " << std::setw(5) << r.label << "  " << std::setw(12) << std::fixed
        << std::setprecision(6) << r.distance << '\n';
  }
  return out.str();
}

Datastore student_space_datastore(const StudentModel& model, const LabeledDataset& source) {
  std::vector<SourceRecord> records;
  records.reserve(source.size());
  for (const auto& e : source.examples) {
    const auto trace = forward(model, e.student_features);
    records.push_back({EmbeddingVector({trace.representation().begin(), trace.representation().end()}),
                       e.label, e.id});
  }
  return Datastore::build(records, source.num_classes);
}

}  // namespace knnkd
