// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "doctest.h"
#include "knnkd/binary_io.hpp"
#include "knnkd/dataio.hpp"
#include "knnkd/datastore.hpp"
#include "pipeline.hpp"

using namespace knnkd;
using testing::run_cli;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::size_t count_lines(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

std::vector<std::string> small_gen(const std::string& out, const std::string& seed = "42") {
  return {"gen", "--seed", seed, "--out", out, "--source-sizes", "60,20,20", "--target-sizes", "60,20,20"};
}

}  // namespace

TEST_CASE("gen writes six datasets deterministically") {
  const auto dir = testing::scratch_dir("cli-gen");
  const auto a = run_cli(small_gen((dir / "a").string()));
  REQUIRE(a.code == 0);
  const auto b = run_cli(small_gen((dir / "b").string()));
  REQUIRE(b.code == 0);
  CHECK(a.out == b.out);
  CHECK(count_lines(a.out) == 6);

  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(dir / "a")) {
    ++files;
    CHECK(read_file(entry.path()) == read_file(dir / "b" / entry.path().filename()));
  }
  CHECK(files == 18);
  for (const char* stem : {"source_train", "source_dev", "source_test", "target_train", "target_dev", "target_test"}) {
    CHECK(fs::exists(dir / "a" / (std::string(stem) + ".teacher.sxem")));
    CHECK(fs::exists(dir / "a" / (std::string(stem) + ".labels.jsonl")));
  }
}

TEST_CASE("gen with fractions") {
  const auto dir = testing::scratch_dir("cli-fractions");
  const auto ok = run_cli({"gen", "--out", (dir / "ok").string(), "--fractions", "0.5,0.25,0.25", "--total", "80"});
  REQUIRE(ok.code == 0);
  CHECK(load_dataset(dir / "ok", "target_dev", 2).size() == 20);

  const auto bad = run_cli({"gen", "--out", (dir / "bad").string(), "--fractions", "0.5,0.5,0.5", "--total", "80"});
  CHECK(bad.code == 1);
  CHECK(bad.err.find("fractions") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "bad"));
}

TEST_CASE("build, annotate and their error paths") {
  const auto dir = testing::scratch_dir("cli-build");
  const std::string d = (dir / "data").string();
  REQUIRE(run_cli(small_gen(d)).code == 0);

  const auto build = run_cli({"build", "--embeddings", d + "/source_train.teacher.sxem", "--labels",
                              d + "/source_train.labels.jsonl", "--out", (dir / "store.sxds").string()});
  REQUIRE(build.code == 0);
  const auto bytes = read_file(dir / "store.sxds");
  CHECK(bytes.substr(0, 4) == "SXDS");
  ByteReader header(bytes);
  header.get_bytes(4);
  header.get_u16();
  header.get_u32();
  header.get_u32();
  CHECK(build.out == "entries: " + std::to_string(header.get_u64()) + "\n");
  const auto store = Datastore::load(dir / "store.sxds");
  CHECK(store.size() == 60);

  // Labels that do not cover the embeddings.
  const auto mismatch = run_cli({"build", "--embeddings", d + "/source_train.teacher.sxem", "--labels",
                                 d + "/source_dev.labels.jsonl", "--out", (dir / "bad.sxds").string()});
  CHECK(mismatch.code == 2);
  CHECK(mismatch.err.find("src-") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "bad.sxds"));

  const std::vector<std::string> annotate{"annotate", "--store", (dir / "store.sxds").string(), "--targets",
                                          d + "/target_train.teacher.sxem", "--out", (dir / "ann.jsonl").string()};
  const auto ann = run_cli(annotate);
  REQUIRE(ann.code == 0);
  CHECK(ann.out == "annotated: 60\n");
  const auto first = read_file(dir / "ann.jsonl");
  CHECK(count_lines(first) == 60);
  const auto line = json::parse(first.substr(0, first.find('\n')));
  CHECK(line.at("neighbor_ids").size() == 16);
  CHECK(line.at("distances").size() == 16);
  REQUIRE(run_cli(annotate).code == 0);
  CHECK(read_file(dir / "ann.jsonl") == first);

  const auto missing = run_cli({"annotate", "--store", (dir / "nope.sxds").string(), "--targets",
                                d + "/target_train.teacher.sxem", "--out", (dir / "x.jsonl").string()});
  CHECK(missing.code != 0);
  CHECK_FALSE(fs::exists(dir / "x.jsonl"));

  std::ofstream(dir / "corrupt.sxds", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
  const auto corrupt = run_cli({"annotate", "--store", (dir / "corrupt.sxds").string(), "--targets",
                                d + "/target_train.teacher.sxem", "--out", (dir / "y.jsonl").string()});
  CHECK(corrupt.code == 2);
}

TEST_CASE("train defaults") {
  const auto r = run_cli({"train", "--print-config"});
  REQUIRE(r.code == 0);
  const auto cfg = json::parse(r.out);
  CHECK(cfg.at("batch-size") == 8);
  CHECK(cfg.at("epochs") == 20);
  CHECK(cfg.at("lr") == 5e-5);
  CHECK(cfg.at("patience") == 3);
  CHECK(cfg.at("cls-loss") == "kl");
  CHECK(cfg.at("sim-loss") == "kl");
}

TEST_CASE("help shows defaults and unknown flags fail") {
  const auto help = run_cli({"train", "--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("--batch-size UINT [8]") != std::string::npos);
  CHECK(help.out.find("--lr FLOAT [5e-05]") != std::string::npos);
  CHECK(run_cli({"train", "--no-such-flag"}).code == 1);
  CHECK(run_cli({"frobnicate"}).code == 1);
  CHECK(run_cli({}).code == 1);
}

TEST_CASE("config file precedence and round trip") {
  const auto dir = testing::scratch_dir("cli-config");
  std::ofstream(dir / "cfg.json") << R"({"batch-size": 4, "epochs": 7, "hidden": [16, 8]})";
  const auto r = run_cli({"train", "--config", (dir / "cfg.json").string(), "--epochs", "9", "--print-config"});
  REQUIRE(r.code == 0);
  const auto cfg = json::parse(r.out);
  CHECK(cfg.at("batch-size") == 4);
  CHECK(cfg.at("epochs") == 9);
  CHECK(cfg.at("hidden") == json::array({16, 8}));
  CHECK(cfg.at("patience") == 3);

  std::ofstream(dir / "effective.json") << r.out;
  const auto again = run_cli({"train", "--config", (dir / "effective.json").string(), "--print-config"});
  REQUIRE(again.code == 0);
  CHECK(again.out == r.out);

  std::ofstream(dir / "unknown.json") << R"({"batch_size": 4})";
  CHECK(run_cli({"train", "--config", (dir / "unknown.json").string(), "--print-config"}).code == 1);
}

TEST_CASE("train then eval reproduces the recorded dev accuracy") {
  const auto dir = testing::scratch_dir("cli-train");
  const auto r = testing::run_pipeline(dir, "7", {"--epochs", "4", "--lr", "1e-3", "--hidden", "16", "--repr-dim", "8"});
  REQUIRE(r.code == 0);
  CHECK(r.out.rfind("accuracy ", 0) == 0);
  const auto report = json::parse(read_file(dir / "model" / "train_report.json"));
  CHECK(report.at("config").at("train").at("batch_size") == 8);

  const std::string d = (dir / "data").string();
  const auto dev = run_cli({"eval", "--model", (dir / "model" / "model.ckpt").string(), "--features",
                            d + "/target_dev.student.sxem", "--labels", d + "/target_dev.labels.jsonl"});
  REQUIRE(dev.code == 0);
  CHECK(json::parse(dev.out.substr(9)).get<double>() == report.at("best_dev_accuracy").get<double>());

  const auto gt = run_cli({"train", "--features", d + "/target_train.student.sxem", "--teacher",
                           d + "/target_train.teacher.sxem", "--annotations", (dir / "annotations.jsonl").string(),
                           "--dev-features", d + "/target_dev.student.sxem", "--dev-labels",
                           d + "/target_dev.labels.jsonl", "--out-dir", (dir / "gt").string(), "--label-source", "gt",
                           "--cls-loss", "ce", "--epochs", "1"});
  CHECK(gt.code == 1);  // gt needs --labels
}

TEST_CASE("numeric failures exit with code 3") {
  const auto dir = testing::scratch_dir("cli-numeric");
  const auto r = testing::run_pipeline(dir, "3", {"--epochs", "2", "--lr", "1e308", "--weight-decay", "0"});
  CHECK(r.code == 3);
  CHECK(r.err.find("numeric failure") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "model" / "model.ckpt"));
}

TEST_CASE("ablate emits both tables") {
  const auto dir = testing::scratch_dir("cli-ablate");
  const std::string d = (dir / "data").string();
  REQUIRE(run_cli(small_gen(d)).code == 0);
  const auto r = run_cli({"ablate", "--data", d, "--out-dir", (dir / "out").string(), "--epochs", "2", "--hidden",
                          "8", "--repr-dim", "4"});
  REQUIRE(r.code == 0);
  const auto report = json::parse(read_file(dir / "out" / "ablation.json"));
  CHECK(report.at("ablation").at("rows").size() == 6);
  CHECK(report.at("simloss_variants").at("rows").size() == 3);
  CHECK(read_file(dir / "out" / "ablation.txt") == r.out);
  CHECK(r.out.find("(1) GT, CE") != std::string::npos);
  CHECK(r.out.find("SimLoss l2") != std::string::npos);
}

TEST_CASE("casestudy in both spaces") {
  const auto dir = testing::scratch_dir("cli-casestudy");
  REQUIRE(testing::run_pipeline(dir, "5", {"--epochs", "1", "--hidden", "8", "--repr-dim", "4"}).code == 0);
  const std::string d = (dir / "data").string();
  const auto teacher = run_cli({"casestudy", "--store", (dir / "store.sxds").string(), "--queries",
                                d + "/source_train.teacher.sxem", "--query-id", "src-train-000003", "--out",
                                (dir / "cs.json").string()});
  REQUIRE(teacher.code == 0);
  const auto report = json::parse(read_file(dir / "cs.json"));
  REQUIRE(report.at("neighbors").size() == 3);
  CHECK(report.at("neighbors")[0].at("id") == "src-train-000003");
  CHECK(report.at("neighbors")[0].at("distance") == 0.0);

  const auto student = run_cli({"casestudy", "--space", "student", "--model", (dir / "model" / "model.ckpt").string(),
                                "--queries", d + "/target_test.student.sxem", "--query-id", "tgt-test-000000",
                                "--source-features", d + "/source_train.student.sxem", "--source-labels",
                                d + "/source_train.labels.jsonl"});
  CHECK(student.code == 0);
  CHECK(student.out.find("student space") != std::string::npos);

  const auto unknown = run_cli({"casestudy", "--store", (dir / "store.sxds").string(), "--queries",
                                d + "/source_train.teacher.sxem", "--query-id", "nope"});
  CHECK(unknown.code == 2);
}
