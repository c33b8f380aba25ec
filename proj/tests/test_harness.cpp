// SPDX-License-Identifier: Apache-2.0
#include <set>
#include <vector>

#include "doctest.h"
#include "knnkd/errors.hpp"
#include "knnkd/harness.hpp"
#include "oracles.hpp"
#include "testing.hpp"

using namespace knnkd;

namespace {

ExperimentData small_experiment(std::uint64_t seed) {
  SyntheticSpec spec;
  spec.seed = seed;
  spec.source = spec.target = {120, 40, 60};
  const auto d = generate_synthetic(spec);
  std::vector<SourceRecord> records;
  for (const auto& e : d.source.train.examples) {
    records.push_back({EmbeddingVector(e.teacher_embedding), e.label, e.id});
  }
  const auto store = Datastore::build(records, 2);
  ExperimentData exp{d.target.train, d.target.dev, d.target.test};
  for (auto& e : exp.target_train.examples) e.soft_label = annotate(store, e.teacher_embedding, 16);
  return exp;
}

/// Leaf paths (JSON pointers) where two configs differ.
std::set<std::string> differing_paths(const nlohmann::ordered_json& a, const nlohmann::ordered_json& b) {
  std::set<std::string> out;
  for (const auto& op : nlohmann::ordered_json::diff(a, b)) out.insert(op.at("path").get<std::string>());
  return out;
}

}  // namespace

TEST_CASE("evaluate on a model that is always right") {
  StudentConfig c{2, {}, 2, 2, Activation::kRelu, 0};
  auto m = StudentModel::zeros(c);
  m.weights(0)[0] = m.weights(0)[3] = 1.0;
  m.weights(1)[0] = m.weights(1)[3] = 1.0;
  std::vector<LabeledExample> ex;
  for (int i = 0; i < 10; ++i) {
    const std::size_t y = i % 2;
    ex.push_back({"e" + std::to_string(i), {}, y == 0 ? std::vector<double>{1, 0} : std::vector<double>{0, 1}, y,
                  std::nullopt});
  }
  const auto r = evaluate(m, ex, 2);
  CHECK(r.accuracy == 1.0);
  CHECK(r.confusion == std::vector<std::vector<std::size_t>>{{5, 0}, {0, 5}});
  CHECK(r.per_class_accuracy == std::vector<double>{1.0, 1.0});
}

TEST_CASE("constant predictor on a balanced set") {
  StudentConfig c{2, {}, 2, 2, Activation::kTanh, 0};
  auto m = StudentModel::zeros(c);
  m.bias(1)[1] = 1.0;
  std::vector<LabeledExample> ex;
  for (int i = 0; i < 8; ++i) ex.push_back({"e" + std::to_string(i), {}, {0.3, -0.1}, std::size_t(i % 2), std::nullopt});
  const auto r = evaluate(m, ex, 2);
  CHECK(r.accuracy == 0.5);
  CHECK(r.confusion[0][1] == 4);
  CHECK(r.confusion[1][1] == 4);
  CHECK_THROWS_AS(evaluate(m, std::vector<LabeledExample>{}, 2), EmptyInputError);
}

TEST_CASE("evaluate matches an oracle count and ignores order") {
  const auto d = generate_synthetic(SyntheticSpec{});
  StudentConfig c;
  c.input_dim = d.target.test.student_dim();
  c.seed = 42;
  const auto m = StudentModel::init(c);
  std::size_t correct = 0;
  for (const auto& e : d.target.test.examples) {
    correct += argmax(oracle::forward(m, e.student_features).logits) == e.label;
  }
  const auto r = evaluate(m, d.target.test);
  CHECK(r.accuracy == static_cast<double>(correct) / static_cast<double>(d.target.test.size()));

  auto shuffled = d.target.test;
  Rng rng(5);
  rng.shuffle(std::span(shuffled.examples));
  const auto s = evaluate(m, shuffled);
  CHECK(s.accuracy == r.accuracy);
  CHECK(s.confusion == r.confusion);
  std::size_t rows = 0;
  for (const auto& row : r.confusion) {
    for (auto v : row) rows += v;
  }
  CHECK(rows == r.total);
}

TEST_CASE("training set construction") {
  const auto exp = small_experiment(3);
  const auto gt = make_training_set(exp.target_train, LabelSource::kGroundTruth);
  const auto pt = make_training_set(exp.target_train, LabelSource::kPredicted);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    CHECK(gt[i].hard_label == exp.target_train.examples[i].label);
    CHECK(pt[i].hard_label == exp.target_train.examples[i].soft_label->argmax());
  }
  CHECK_THROWS_AS(make_training_set(exp.target_dev, LabelSource::kPredicted), DataError);
  CHECK(parse_label_source("gt") == LabelSource::kGroundTruth);
  CHECK_THROWS_AS(parse_label_source("xx"), ConfigError);
}

TEST_CASE("ablation arms") {
  const auto arms = ablation_arms();
  REQUIRE(arms.size() == 6);
  CHECK(arms[0].name() == "GT, CE");
  CHECK(arms[5].name() == "PT, KL, SimLoss");
  AblationArm bad{LabelSource::kGroundTruth, ClassificationLoss::kKl, false};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("ablation and variant tables") {
  const auto exp = small_experiment(11);
  StudentConfig student;
  student.input_dim = exp.target_train.student_dim();
  student.hidden_dims = {16};
  student.repr_dim = 8;
  student.seed = 1;
  TrainConfig base;
  base.max_epochs = 2;
  base.learning_rate = 1e-3;
  base.seed = 1;

  const auto table = run_ablation(exp, student, base);
  REQUIRE(table.rows.size() == 6);
  for (const auto& r : table.rows) {
    CHECK(std::isfinite(r.test.accuracy));
    CHECK(r.config_hash.size() == 16);
  }
  const std::string ls = "/label_source", cls = "/train/loss/classification_loss", sim = "/train/loss/sim_loss";
  // Arms (2) and (5) differ only in the loss type.
  CHECK(differing_paths(table.rows[1].config, table.rows[4].config) == std::set<std::string>{cls});
  CHECK(differing_paths(table.rows[0].config, table.rows[1].config) == std::set<std::string>{ls});
  CHECK(differing_paths(table.rows[4].config, table.rows[5].config) == std::set<std::string>{sim});
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = i + 1; j < 6; ++j) {
      const auto paths = differing_paths(table.rows[i].config, table.rows[j].config);
      CHECK_FALSE(paths.empty());
      for (const auto& p : paths) CHECK((p == ls || p == cls || p == sim));
      CHECK(table.rows[i].config_hash != table.rows[j].config_hash);
    }
  }
  CHECK(table.render().find("(6) PT, KL, SimLoss") != std::string::npos);

  const auto variants = run_simloss_comparison(exp, student, base);
  REQUIRE(variants.rows.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(std::isfinite(variants.rows[i].test.accuracy));
    for (std::size_t j = i + 1; j < 3; ++j) {
      CHECK(differing_paths(variants.rows[i].config, variants.rows[j].config) == std::set<std::string>{sim});
    }
  }

  const auto again = run_ablation(exp, student, base);
  CHECK(again.to_json().dump() == table.to_json().dump());
}

TEST_CASE("case study") {
  Rng rng(601);
  const auto records = testing::random_records(rng, 60, 6, 2);
  const auto store = Datastore::build(records, 2);
  const auto key = store.key_as_double(17);
  const auto r = case_study(store, "q", key);
  REQUIRE(r.rows.size() == 3);
  CHECK(r.rows[0].id == store.id(17));
  CHECK(r.rows[0].distance == 0.0);
  CHECK(r.rows[0].rank == 1);

  const auto q = testing::random_vector(rng, 6);
  const auto got = case_study(store, "q2", q, 5);
  const auto want = oracle::sorted_neighbors(store, q);
  std::set<std::string> a, b;
  for (std::size_t j = 0; j < 5; ++j) a.insert(got.rows[j].id), b.insert(store.id(want[j].index));
  CHECK(a == b);
  CHECK(got.render().find("Query q2") != std::string::npos);
  CHECK(got.to_json()["neighbors"].size() == 5);
  CHECK(parse_similarity_space("student") == SimilaritySpace::kStudent);
}

TEST_CASE("student-space datastore") {
  SyntheticSpec spec;
  spec.source = spec.target = {20, 5, 5};
  const auto d = generate_synthetic(spec);
  StudentConfig c;
  c.input_dim = d.source.train.student_dim();
  c.repr_dim = 7;
  const auto store = student_space_datastore(StudentModel::init(c), d.source.train);
  CHECK(store.size() == 20);
  CHECK(store.dim() == 7);
}
