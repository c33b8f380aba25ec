// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one PASS/FAIL line per criterion, exit status nonzero if
// any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "knnkd/binary_io.hpp"
#include "knnkd/dataio.hpp"
#include "knnkd/datastore.hpp"
#include "knnkd/errors.hpp"
#include "knnkd/harness.hpp"
#include "knnkd/losses.hpp"
#include "knnkd/trainer.hpp"
#include "oracles.hpp"
#include "pipeline.hpp"
#include "properties.hpp"
#include "testing.hpp"

using namespace knnkd;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kDistanceTol = 1e-12;
constexpr double kAnnotationTol = 1e-12;
constexpr double kLossTol = 1e-10;
constexpr double kGradientTol = 1e-4;
constexpr double kOptimizerTol = 1e-12;
constexpr double kKnnBudgetSeconds = 5.0;
constexpr double kGradientBudgetSeconds = 60.0;
constexpr double kEndToEndBudgetSeconds = 120.0;
constexpr int kPropertyCases = 500;

// Pinned on the first run of the seed-42 synthetic benchmark.
constexpr double kGoldenAnnotationAccuracy = 0.992;
constexpr double kGoldenAnnotationTol = 0.005;
constexpr double kMinAnnotationAccuracy = 0.85;
constexpr double kArmGapPoints = 3.0;

struct Verdict {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v, int precision = 3) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

Verdict knn_oracle() {
  const auto start = Clock::now();
  Rng rng(derive_seed(42, 101));
  const auto store = Datastore::build(testing::random_records(rng, 1000, 16, 2), 2);
  double worst = 0.0;
  std::size_t mismatches = 0;
  for (int q = 0; q < 200; ++q) {
    const auto query = testing::random_vector(rng, 16);
    const std::size_t k = 1 + rng.below(64);
    const auto got = query_knn(store, query, k);
    const auto want = oracle::sorted_neighbors(store, query);
    if (got.size() != k) ++mismatches;
    for (std::size_t j = 0; j < got.size(); ++j) {
      if (got.indices[j] != want[j].index) ++mismatches;
      worst = std::max(worst, std::abs(got.distances[j] - want[j].distance));
    }
  }
  const double elapsed = seconds_since(start);
  return {mismatches == 0 && worst <= kDistanceTol && elapsed < kKnnBudgetSeconds,
          std::to_string(mismatches) + " index mismatches, max distance error " + fmt(worst) + ", " +
              fmt(elapsed) + " s"};
}

Verdict annotation_oracle(const SyntheticDomains& data) {
  std::vector<SourceRecord> records;
  for (const auto& e : data.source.train.examples) records.push_back({EmbeddingVector(e.teacher_embedding), e.label, e.id});
  const auto store = Datastore::build(records, 2);
  Rng rng(derive_seed(42, 102));
  double worst = 0.0;
  for (int q = 0; q < 100; ++q) {
    auto query = data.target.train.examples[rng.below(data.target.train.size())].teacher_embedding;
    for (auto& x : query) x += rng.normal(0.0, 0.25);
    const auto got = annotate(store, query, 16);
    const auto want = oracle::annotate(store, query, 16);
    for (std::size_t c = 0; c < 2; ++c) worst = std::max(worst, std::abs(got[c] - want[c]));
  }
  return {worst <= kAnnotationTol, "max class-probability error " + fmt(worst)};
}

Verdict loss_oracles() {
  Rng rng(derive_seed(42, 103));
  double worst = 0.0;
  for (int b = 0; b < 50; ++b) {
    const std::size_t n = 8, dim = 8 + rng.below(57);
    std::vector<std::vector<double>> logits, teacher, student;
    std::vector<LabelDistribution> soft, predicted;
    std::vector<std::size_t> hard;
    for (std::size_t i = 0; i < n; ++i) {
      logits.push_back(testing::random_vector(rng, 2, 2.0));
      predicted.emplace_back(softmax(logits.back()));
      soft.emplace_back(testing::random_probs(rng, 2));
      hard.push_back(rng.below(2));
      teacher.push_back(testing::random_vector(rng, 8 + rng.below(57)));
      student.push_back(testing::random_vector(rng, dim));
    }
    // Teacher reprs must share one dim within the batch.
    for (auto& t : teacher) t.resize(teacher.front().size(), 0.5);

    double l1 = 0.0, ce = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto q = oracle::softmax(logits[i]);
      l1 += oracle::kl({soft[i].probs().begin(), soft[i].probs().end()}, q);
      ce -= std::log(q[hard[i]]);
    }
    worst = std::max(worst, std::abs(classification_consistency_loss(soft, predicted).value - l1 / n));
    worst = std::max(worst, std::abs(cross_entropy_loss(hard, predicted).value - ce / n));

    const double tau = rng.uniform(0.5, 2.0);
    for (bool self : {true, false}) {
      for (std::size_t i = 0; i < n; ++i) {
        const auto got = batch_similarity_distribution(student, i, tau, self).probs;
        const auto want = oracle::similarity_distribution(student, i, tau, self);
        for (std::size_t j = 0; j < got.size(); ++j) worst = std::max(worst, std::abs(got[j] - want[j]));
      }
      for (auto [kind, variant] : {std::pair{SimLossKind::kKl, oracle::SimVariant::kKl},
                                   std::pair{SimLossKind::kL1, oracle::SimVariant::kL1},
                                   std::pair{SimLossKind::kL2, oracle::SimVariant::kL2}}) {
        const double got = sim_loss(teacher, student, kind, tau, self).value;
        worst = std::max(worst, std::abs(got - oracle::sim_loss(teacher, student, variant, tau, self)));
      }
    }
  }
  return {worst <= kLossTol, "max absolute error " + fmt(worst) + " over L1, CE, similarity distributions, 3 SimLoss variants"};
}

Verdict gradient_suite() {
  const auto start = Clock::now();
  Rng rng(derive_seed(42, 104));
  double worst = 0.0;
  std::string worst_where;
  std::size_t checks = 0;
  for (int trial = 0; trial < 20; ++trial) {
    StudentConfig sc;
    sc.input_dim = 2 + rng.below(7);
    sc.hidden_dims.clear();
    for (std::uint64_t h = rng.below(3); h > 0; --h) sc.hidden_dims.push_back(2 + rng.below(9));
    sc.repr_dim = 2 + rng.below(9);
    sc.num_classes = 2 + rng.below(3);
    // ReLU is excluded: differences straddle its kink and small ReLU encoders
    // can emit all-zero representations, which cosine similarity rejects.
    sc.activation = Activation::kTanh;
    sc.seed = rng.next_u64();
    const auto model = StudentModel::init(sc);
    const std::size_t n = 2 + rng.below(7);
    const auto batch = testing::random_batch(rng, n, sc.input_dim, 3 + rng.below(10), sc.num_classes);
    for (auto config : testing::all_loss_configs()) {
      config.sim_temperature = rng.uniform(0.5, 2.0);
      config.include_self_similarity = rng.below(2) == 0;
      const auto check = testing::check_model_gradient(model, batch, config);
      ++checks;
      if (check.max_relative_error > worst) {
        worst = check.max_relative_error;
        worst_where = "config " + std::to_string(trial) + " " + std::string(to_string(config.classification_loss)) +
                      "/" + std::string(to_string(config.sim_loss));
      }
    }
  }
  const double elapsed = seconds_since(start);
  return {worst < kGradientTol && elapsed < kGradientBudgetSeconds,
          std::to_string(checks) + " checks, max relative error " + fmt(worst) + " (" + worst_where + "), " +
              fmt(elapsed) + " s"};
}

Verdict optimizer_oracle() {
  // f(theta) = 1.5 (theta - 0.7)^2
  const AdamWConfig cfg{0.1, 0.01, 0.9, 0.999, 1e-8};
  std::vector<double> theta{2.0}, ref_theta{2.0};
  AdamWState state(1);
  oracle::AdamW ref;
  ref.lr = cfg.learning_rate;
  ref.wd = cfg.weight_decay;
  double worst = 0.0;
  for (int t = 0; t < 5; ++t) {
    const std::vector<double> g{3.0 * (theta[0] - 0.7)};
    const std::vector<double> rg{3.0 * (ref_theta[0] - 0.7)};
    adamw_step(theta, g, state, cfg);
    ref.step(ref_theta, rg);
    worst = std::max(worst, std::abs(theta[0] - ref_theta[0]));
  }
  return {worst <= kOptimizerTol, "max parameter difference " + fmt(worst) + " over 5 steps"};
}

Verdict determinism() {
  std::vector<fs::path> runs{testing::scratch_dir("acceptance-run-a"), testing::scratch_dir("acceptance-run-b")};
  for (const auto& dir : runs) {
    const auto r = testing::run_pipeline(dir, "42");
    if (r.code != 0) return {false, "pipeline failed in " + dir.string() + ": " + r.err};
  }
  std::size_t compared = 0;
  std::vector<std::string> differing;
  for (const auto& entry : fs::recursive_directory_iterator(runs[0])) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), runs[0]);
    ++compared;
    if (!fs::exists(runs[1] / rel) || read_file(entry.path()) != read_file(runs[1] / rel)) {
      differing.push_back(rel.string());
    }
  }
  const bool has_outputs = fs::exists(runs[0] / "model" / "model.ckpt") && fs::exists(runs[0] / "eval.json");
  std::string detail = std::to_string(compared) + " files compared (datasets, store, annotations, report, checkpoint, eval)";
  if (!differing.empty()) detail += "; differing: " + differing.front();
  return {differing.empty() && has_outputs && compared == 23, detail};
}

Verdict end_to_end(const SyntheticDomains& data, double data_seconds) {
  const auto start = Clock::now();
  std::vector<SourceRecord> records;
  for (const auto& e : data.source.train.examples) records.push_back({EmbeddingVector(e.teacher_embedding), e.label, e.id});
  const auto store = Datastore::build(records, 2);
  ExperimentData exp{data.target.train, data.target.dev, data.target.test};
  std::size_t correct = 0;
  for (auto& e : exp.target_train.examples) {
    e.soft_label = annotate(store, e.teacher_embedding, kDefaultNeighbors);
    correct += e.soft_label->argmax() == e.label;
  }
  const double ann = static_cast<double>(correct) / static_cast<double>(exp.target_train.size());

  StudentConfig student;
  student.input_dim = exp.target_train.student_dim();
  student.seed = derive_seed(42, seed_stream::kStudentInit);
  TrainConfig base;
  base.seed = 42;
  const auto table = run_ablation(exp, student, base);
  const auto variants = run_simloss_comparison(exp, student, base);
  const double elapsed = seconds_since(start) + data_seconds;

  std::cout << "  kNN annotation accuracy on target train: " << fmt(100.0 * ann, 6) << "%\n";
  for (const auto& line : {table.render(), variants.render()}) {
    std::istringstream lines(line);
    for (std::string l; std::getline(lines, l);) std::cout << "  " << l << "\n";
  }

  const double arm1 = 100.0 * table.rows[0].test.accuracy;
  const double arm5 = 100.0 * table.rows[4].test.accuracy;
  const double arm6 = 100.0 * table.rows[5].test.accuracy;
  const bool a = ann >= kMinAnnotationAccuracy && std::abs(ann - kGoldenAnnotationAccuracy) <= kGoldenAnnotationTol;
  const bool b = std::abs(arm6 - arm1) <= kArmGapPoints;
  const bool c = arm6 >= arm5;
  std::string detail = std::string("(a) ") + (a ? "ok" : "FAILED") + " annotation accuracy " + fmt(ann, 6) +
                       " vs pinned " + fmt(kGoldenAnnotationAccuracy, 6) + "; (b) " + (b ? "ok" : "FAILED") +
                       " arm6 " + fmt(arm6, 5) + " vs arm1 " + fmt(arm1, 5) + "; (c) " + (c ? "ok" : "FAILED") +
                       " arm6 >= arm5 " + fmt(arm5, 5) + "; " + fmt(elapsed) + " s";
  return {a && b && c && elapsed < kEndToEndBudgetSeconds, detail};
}

Verdict round_trips(const SyntheticDomains& data) {
  const auto dir = testing::scratch_dir("acceptance-formats");
  std::vector<std::string> failures;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };
  auto rejects_truncation = [&](const fs::path& path, const std::function<void(const fs::path&)>& load) {
    const auto bytes = read_file(path);
    const auto cut = dir / ("truncated" + path.extension().string());
    write_file_atomic(cut, std::string_view(bytes).substr(0, bytes.size() - 1));
    try {
      load(cut);
    } catch (const FormatError&) {
      return true;
    }
    return false;
  };

  std::vector<SourceRecord> records;
  for (const auto& e : data.source.train.examples) records.push_back({EmbeddingVector(e.teacher_embedding), e.label, e.id});
  Datastore::build(records, 2).save(dir / "a.sxds");
  Datastore::load(dir / "a.sxds").save(dir / "b.sxds");
  Datastore::load(dir / "b.sxds").save(dir / "c.sxds");
  expect(read_file(dir / "b.sxds") == read_file(dir / "c.sxds") && read_file(dir / "a.sxds") == read_file(dir / "b.sxds"),
         "SXDS bytes changed");
  expect(rejects_truncation(dir / "a.sxds", [](const fs::path& p) { Datastore::load(p); }), "truncated SXDS accepted");

  save_embeddings(dir / "a.sxem", data.target.test.teacher_file());
  save_embeddings(dir / "b.sxem", load_embeddings(dir / "a.sxem"));
  save_embeddings(dir / "c.sxem", load_embeddings(dir / "b.sxem"));
  expect(read_file(dir / "b.sxem") == read_file(dir / "c.sxem") && read_file(dir / "a.sxem") == read_file(dir / "b.sxem"),
         "SXEM bytes changed");
  expect(rejects_truncation(dir / "a.sxem", [](const fs::path& p) { load_embeddings(p); }), "truncated SXEM accepted");

  StudentConfig sc;
  sc.seed = 3;
  save_checkpoint(dir / "a.ckpt", StudentModel::init(sc), 5);
  const auto first = load_checkpoint(dir / "a.ckpt");
  save_checkpoint(dir / "b.ckpt", first.model, first.epoch);
  const auto second = load_checkpoint(dir / "b.ckpt");
  save_checkpoint(dir / "c.ckpt", second.model, second.epoch);
  expect(read_file(dir / "b.ckpt") == read_file(dir / "c.ckpt") && read_file(dir / "a.ckpt") == read_file(dir / "b.ckpt"),
         "checkpoint bytes changed");
  expect(rejects_truncation(dir / "a.ckpt", [](const fs::path& p) { load_checkpoint(p); }), "truncated checkpoint accepted");

  return {failures.empty(), failures.empty() ? "SXDS, SXEM, checkpoint stable; truncation rejected" : failures.front()};
}

Verdict property_suites() {
  bool pass = true;
  std::string detail;
  for (const auto& o : properties::run_all(42, kPropertyCases)) {
    pass = pass && o.passed() && o.cases >= 200;
    if (!detail.empty()) detail += ", ";
    detail += o.name + " " + std::to_string(o.cases - o.failures) + "/" + std::to_string(o.cases);
    if (!o.passed()) detail += " [" + o.first_failure + "]";
  }
  return {pass, detail};
}

}  // namespace

int main() {
  // Root seed 42 fanned out exactly as `knnkd gen --seed 42` does.
  const auto data_start = Clock::now();
  SyntheticSpec spec;
  spec.seed = derive_seed(42, seed_stream::kGenerator);
  const auto data = generate_synthetic(spec);
  const double data_seconds = seconds_since(data_start);

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"kNN oracle equivalence", knn_oracle},
      {"annotation oracle", [&] { return annotation_oracle(data); }},
      {"loss oracles", loss_oracles},
      {"gradient suite", gradient_suite},
      {"optimizer oracle", optimizer_oracle},
      {"pipeline determinism", determinism},
      {"synthetic end-to-end", [&] { return end_to_end(data, data_seconds); }},
      {"format round-trips", [&] { return round_trips(data); }},
      {"property suites", property_suites},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    std::cout << (v.pass ? "PASS" : "FAIL") << " " << i + 1 << " " << criteria[i].first << ": " << v.detail << "\n"
              << std::flush;
    failed += !v.pass;
  }
  return failed == 0 ? EXIT_SUCCESS : EXIT_FAILURE;
}
