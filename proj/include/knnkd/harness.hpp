// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "knnkd/dataio.hpp"
#include "knnkd/datastore.hpp"
#include "knnkd/student.hpp"
#include "knnkd/trainer.hpp"

namespace knnkd {

struct EvalResult {
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  /// confusion[true][predicted]
  std::vector<std::vector<std::size_t>> confusion;
  std::size_t total = 0;

  nlohmann::ordered_json to_json() const;
};

/// Throws EmptyInputError on an empty set.
EvalResult evaluate(const StudentModel& model, std::span<const LabeledExample> examples,
                    std::size_t num_classes);
EvalResult evaluate(const StudentModel& model, const LabeledDataset& test);

enum class LabelSource { kGroundTruth, kPredicted };
std::string_view to_string(LabelSource s);
LabelSource parse_label_source(std::string_view name);

/// Builds trainer input. Hard labels come from the ground truth or from the
/// argmax of the annotated soft label; soft labels must be present for the
/// predicted source (DataError otherwise).
std::vector<TrainExample> make_training_set(const LabeledDataset& data, LabelSource source);

struct AblationArm {
  LabelSource label_source = LabelSource::kPredicted;
  ClassificationLoss classification_loss = ClassificationLoss::kKl;
  bool sim_loss_on = false;

  /// Throws ConfigError for the (GT, KL) combination, which has no soft
  /// target to distill from.
  void validate() const;
  std::string name() const;
};

/// The six ablation rows in table order.
std::vector<AblationArm> ablation_arms();

/// Everything an experiment needs on the target side. target_train carries
/// both ground-truth labels and kNN soft labels.
struct ExperimentData {
  LabeledDataset target_train;
  LabeledDataset target_dev;
  LabeledDataset target_test;
};

struct ArmResult {
  std::string name;
  nlohmann::ordered_json config;
  std::string config_hash;
  TrainReport report;
  EvalResult test;
};

struct ExperimentTable {
  std::string title;
  std::vector<ArmResult> rows;

  nlohmann::ordered_json to_json() const;
  /// Aligned plain-text table, one row per arm.
  std::string render() const;
};

/// Full configuration of one arm as JSON; hashing it identifies the run.
nlohmann::ordered_json arm_config(const StudentConfig& student, const TrainConfig& train,
                                  LabelSource label_source);

ArmResult run_arm(std::string name, const ExperimentData& data, const StudentConfig& student,
                  const TrainConfig& train, LabelSource label_source);

/// Six arms sharing seeds and every setting except label source,
/// classification loss and SimLoss on/off. SimLoss arms use the KL variant.
ExperimentTable run_ablation(const ExperimentData& data, const StudentConfig& student,
                             const TrainConfig& base);

/// PT labels with KL classification loss, SimLoss variant kl / l1 / l2.
ExperimentTable run_simloss_comparison(const ExperimentData& data, const StudentConfig& student,
                                       const TrainConfig& base);

enum class SimilaritySpace { kTeacher, kStudent };
SimilaritySpace parse_similarity_space(std::string_view name);

struct CaseStudyRow {
  std::size_t rank = 0;
  std::string id;
  std::size_t label = 0;
  double distance = 0.0;
};

struct CaseStudyReport {
  std::string query_id;
  SimilaritySpace space = SimilaritySpace::kTeacher;
  std::vector<CaseStudyRow> rows;

  nlohmann::ordered_json to_json() const;
  std::string render() const;
};

inline constexpr std::size_t kCaseStudyNeighbors = 3;

CaseStudyReport case_study(const Datastore& store, std::string query_id, std::span<const double> query,
                           std::size_t k = kCaseStudyNeighbors,
                           SimilaritySpace space = SimilaritySpace::kTeacher);

/// Datastore keyed by the student representation of each source example.
Datastore student_space_datastore(const StudentModel& model, const LabeledDataset& source);

}  // namespace knnkd
