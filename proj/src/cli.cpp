// SPDX-License-Identifier: Apache-2.0
#include "knnkd/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <memory>
#include <ostream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <CLI11.hpp>
#include <json.hpp>

#include "knnkd/binary_io.hpp"
#include "knnkd/dataio.hpp"
#include "knnkd/datastore.hpp"
#include "knnkd/errors.hpp"
#include "knnkd/harness.hpp"
#include "knnkd/rng.hpp"
#include "knnkd/student.hpp"
#include "knnkd/trainer.hpp"

namespace knnkd::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

/// Registers options with CLI11 and mirrors them into a JSON form so a
/// config file can fill in anything not given on the command line.
class OptionSet {
 public:
  explicit OptionSet(CLI::App* app) : app_(app) {
    app_->add_option("--config", config_path_, "JSON file with option values (flags take precedence)");
    app_->add_flag("--print-config", print_config_, "Print the effective configuration as JSON and exit");
  }

  template <typename T>
  CLI::Option* add(const std::string& name, T& target, const std::string& help) {
    auto* opt = app_->add_option("--" + name, target, help)->capture_default_str();
    bindings_.push_back({name, opt, [&target](const nlohmann::json& j) { target = j.get<T>(); },
                         [&target] { return json(target); }});
    return opt;
  }

  CLI::Option* flag(const std::string& name, bool& target, const std::string& help) {
    auto* opt = app_->add_flag("--" + name, target, help)->capture_default_str();
    bindings_.push_back({name, opt, [&target](const nlohmann::json& j) { target = j.get<bool>(); },
                         [&target] { return json(target); }});
    return opt;
  }

  /// Fills options that were not set on the command line from the config
  /// file. Unknown keys are rejected.
  void apply_config_file() {
    if (config_path_.empty()) return;
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(read_file(config_path_));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config file " + config_path_ + ": " + e.what());
    }
    load(doc, /*only_unset=*/true);
  }

  void load(const nlohmann::json& doc, bool only_unset) {
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [key, value] : doc.items()) {
      auto it = std::find_if(bindings_.begin(), bindings_.end(), [&](const Binding& b) { return b.name == key; });
      if (it == bindings_.end()) throw ConfigError("unknown config key '" + key + "'");
      if (only_unset && it->option->count() > 0) continue;
      try {
        it->load(value);
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config key '" + key + "': " + e.what());
      }
    }
  }

  json effective() const {
    json j;
    for (const auto& b : bindings_) j[b.name] = b.dump();
    return j;
  }

  bool print_config() const noexcept { return print_config_; }

 private:
  struct Binding {
    std::string name;
    CLI::Option* option;
    std::function<void(const nlohmann::json&)> load;
    std::function<json()> dump;
  };

  CLI::App* app_;
  std::string config_path_;
  bool print_config_ = false;
  std::vector<Binding> bindings_;
};

/// Options shared by every subcommand that trains a student.
struct TrainingOptions {
  std::string cls_loss = "kl";
  std::string sim_loss = "kl";
  double sim_temperature = 1.0;
  bool exclude_self = false;
  TrainConfig train;
  std::vector<std::size_t> hidden{64};
  std::size_t repr_dim = 64;
  std::string activation = "tanh";
  std::uint64_t seed = 42;

  void add_to(OptionSet& opts) {
    opts.add("cls-loss", cls_loss, "Classification loss: kl or ce")->check(CLI::IsMember({"kl", "ce"}));
    opts.add("sim-loss", sim_loss, "SimLoss variant: none, kl, l1 or l2")
        ->check(CLI::IsMember({"none", "kl", "l1", "l2"}));
    opts.add("sim-temperature", sim_temperature, "Softmax temperature over batch cosine similarities");
    opts.flag("exclude-self", exclude_self, "Leave each anchor's self-similarity out of its distribution");
    opts.add("batch-size", train.batch_size, "Mini-batch size");
    opts.add("epochs", train.max_epochs, "Maximum number of epochs");
    opts.add("lr", train.learning_rate, "AdamW learning rate");
    opts.add("weight-decay", train.weight_decay, "AdamW decoupled weight decay");
    opts.add("beta1", train.beta1, "AdamW first-moment decay");
    opts.add("beta2", train.beta2, "AdamW second-moment decay");
    opts.add("adam-eps", train.adam_epsilon, "AdamW epsilon");
    opts.add("patience", train.patience, "Epochs without dev improvement before stopping");
    opts.add("hidden", hidden, "Student hidden layer widths (comma separated)")->delimiter(',');
    opts.add("repr-dim", repr_dim, "Student representation width");
    opts.add("activation", activation, "Student activation: tanh or relu")
        ->check(CLI::IsMember({"tanh", "relu"}));
    opts.add("seed", seed, "Root seed; per-module seeds are derived from it");
  }

  TrainConfig train_config() const {
    TrainConfig cfg = train;
    cfg.seed = seed;
    cfg.loss_config.classification_loss = parse_classification_loss(cls_loss);
    cfg.loss_config.sim_loss = parse_sim_loss(sim_loss);
    cfg.loss_config.sim_temperature = sim_temperature;
    cfg.loss_config.include_self_similarity = !exclude_self;
    cfg.validate();
    return cfg;
  }

  StudentConfig student_config(std::size_t input_dim, std::size_t num_classes) const {
    StudentConfig cfg{input_dim, hidden, repr_dim, num_classes, parse_activation(activation),
                      derive_seed(seed, seed_stream::kStudentInit)};
    cfg.validate();
    return cfg;
  }
};

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError("missing --" + what);
  if (!fs::is_regular_file(path)) throw ConfigError("--" + what + " '" + path + "' does not exist");
}

void require_dir(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError("missing --" + what);
  std::error_code ec;
  fs::create_directories(path, ec);
  if (!fs::is_directory(path)) throw ConfigError("cannot create --" + what + " '" + path + "'");
}

std::string pretty(const json& j) { return j.dump(2) + "\n"; }

/// Dataset made of student features and labels only (no teacher side).
LabeledDataset features_with_labels(const EmbeddingFile& features, std::span<const LabelRecord> labels,
                                    std::size_t num_classes) {
  return assemble_dataset(features, features, labels, num_classes);
}

std::size_t infer_num_classes(std::span<const LabelRecord> labels) {
  std::size_t top = 0;
  for (const auto& l : labels) top = std::max(top, l.label);
  return std::max<std::size_t>(2, top + 1);
}

constexpr std::array<const char*, 3> kSplits{"train", "dev", "test"};

// ---------------------------------------------------------------- gen

struct GenCommand {
  std::string out;
  std::uint64_t seed = 42;
  SyntheticSpec spec;
  std::vector<std::size_t> source_sizes{1000, 200, 500};
  std::vector<std::size_t> target_sizes{1000, 200, 500};
  std::vector<double> fractions;
  std::size_t total = 0;

  void add_to(OptionSet& opts) {
    opts.add("out", out, "Output directory");
    opts.add("seed", seed, "Root seed");
    opts.add("dim-teacher", spec.dim_teacher, "Teacher embedding dimension");
    opts.add("dim-student", spec.dim_student, "Student feature dimension");
    opts.add("num-classes", spec.num_classes, "Number of classes");
    opts.add("source-sizes", source_sizes, "Source train,dev,test counts")->delimiter(',')->expected(3);
    opts.add("target-sizes", target_sizes, "Target train,dev,test counts")->delimiter(',')->expected(3);
    opts.add("fractions", fractions, "Train,dev,test fractions of --total (overrides the size lists)")
        ->delimiter(',')
        ->expected(3);
    opts.add("total", total, "Examples per domain when --fractions is given");
    opts.add("separation", spec.class_separation, "Distance of each class mean from the origin");
    opts.add("shift", spec.domain_shift, "Source-to-target offset length");
    opts.add("noise", spec.noise_sigma, "Gaussian noise standard deviation");
  }

  static SplitSizes sizes_from(const std::vector<std::size_t>& v) {
    if (v.size() != 3) throw ConfigError("size lists need exactly three counts");
    return {v[0], v[1], v[2]};
  }

  int run(std::ostream& out_stream) {
    if (out.empty()) throw ConfigError("missing --out");
    if (!fractions.empty()) {
      if (fractions.size() != 3) throw ConfigError("--fractions needs three values");
      double sum = 0.0;
      for (double f : fractions) {
        if (!(f > 0.0)) throw ConfigError("--fractions must be positive");
        sum += f;
      }
      if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("--fractions must sum to 1");
      if (total == 0) throw ConfigError("--fractions requires --total");
      SplitSizes s;
      s.train = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(total)));
      s.dev = static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(total)));
      s.test = total - std::min(total, s.train + s.dev);
      spec.source = spec.target = s;
    } else {
      spec.source = sizes_from(source_sizes);
      spec.target = sizes_from(target_sizes);
    }
    spec.seed = derive_seed(seed, seed_stream::kGenerator);
    spec.validate();

    const auto domains = generate_synthetic(spec);
    require_dir(out, "out");
    for (const auto& [name, splits] : {std::pair{"source", &domains.source}, std::pair{"target", &domains.target}}) {
      const std::array<const LabeledDataset*, 3> parts{&splits->train, &splits->dev, &splits->test};
      for (std::size_t p = 0; p < 3; ++p) {
        const std::string stem = std::string(name) + "_" + kSplits[p];
        save_dataset(out, stem, *parts[p]);
        out_stream << stem << ": " << parts[p]->size() << " examples, digest "
                   << hex_digest(dataset_digest(*parts[p])) << "\n";
      }
    }
    return kSuccess;
  }
};

// ---------------------------------------------------------------- build

struct BuildCommand {
  std::string embeddings;
  std::string labels;
  std::string out;
  std::size_t num_classes = 0;

  void add_to(OptionSet& opts) {
    opts.add("embeddings", embeddings, "Source teacher embeddings (.sxem or .jsonl)");
    opts.add("labels", labels, "Source labels JSONL");
    opts.add("num-classes", num_classes, "Number of classes (0 infers from the labels)");
    opts.add("out", out, "Output datastore path (.sxds)");
  }

  int run(std::ostream& out_stream) {
    require_file(embeddings, "embeddings");
    require_file(labels, "labels");
    if (out.empty()) throw ConfigError("missing --out");
    const auto emb = load_embeddings(embeddings, EmbeddingRole::kTeacher);
    const auto label_records = load_labels(labels);
    std::unordered_map<std::string_view, std::size_t> label_of;
    for (const auto& l : label_records) label_of.emplace(l.id, l.label);
    const std::size_t classes = num_classes > 0 ? num_classes : infer_num_classes(label_records);

    std::vector<SourceRecord> records;
    records.reserve(emb.count());
    std::unordered_set<std::string_view> used;
    for (std::size_t i = 0; i < emb.count(); ++i) {
      const auto it = label_of.find(emb.ids[i]);
      if (it == label_of.end()) throw DataError("embedding id '" + emb.ids[i] + "' has no label");
      used.insert(emb.ids[i]);
      records.push_back({EmbeddingVector(emb.row_as_double(i)), it->second, emb.ids[i]});
    }
    for (const auto& l : label_records) {
      if (!used.contains(l.id)) throw DataError("label id '" + l.id + "' has no embedding");
    }
    const auto store = Datastore::build(records, classes);
    store.save(out);
    out_stream << "entries: " << store.size() << "\n";
    return kSuccess;
  }
};

// ---------------------------------------------------------------- annotate

struct AnnotateCommand {
  std::string store;
  std::string targets;
  std::string out;
  std::size_t k = kDefaultNeighbors;
  double temperature = 1.0;

  void add_to(OptionSet& opts) {
    opts.add("store", store, "Datastore (.sxds)");
    opts.add("targets", targets, "Target teacher embeddings (.sxem or .jsonl)");
    opts.add("k", k, "Number of neighbors");
    opts.add("temperature", temperature, "Distance temperature; 1 weights neighbors by exp(-d)");
    opts.add("out", out, "Output annotations (.jsonl)");
  }

  int run(std::ostream& out_stream) {
    require_file(store, "store");
    require_file(targets, "targets");
    if (out.empty()) throw ConfigError("missing --out");
    if (k == 0) throw ConfigError("--k must be >= 1");
    if (!(temperature > 0.0)) throw ConfigError("--temperature must be positive");
    const auto ds = Datastore::load(store);
    const auto emb = load_embeddings(targets, EmbeddingRole::kTeacher);
    std::vector<TargetRecord> records;
    records.reserve(emb.count());
    for (std::size_t i = 0; i < emb.count(); ++i) records.push_back({EmbeddingVector(emb.row_as_double(i)), emb.ids[i]});
    const auto annotations = annotate_dataset(ds, records, k, temperature);
    write_file_atomic(out, annotations_to_jsonl(ds, annotations));
    out_stream << "annotated: " << annotations.size() << "\n";
    return kSuccess;
  }
};

// ---------------------------------------------------------------- train

struct TrainCommand {
  std::string features;
  std::string teacher;
  std::string annotations;
  std::string labels;
  std::string dev_features;
  std::string dev_labels;
  std::string out_dir;
  std::string label_source = "pt";
  TrainingOptions training;

  void add_to(OptionSet& opts) {
    opts.add("features", features, "Target-train student features (.sxem or .jsonl)");
    opts.add("teacher", teacher, "Target-train teacher embeddings (.sxem or .jsonl)");
    opts.add("annotations", annotations, "Annotations JSONL produced by 'annotate'");
    opts.add("labels", labels, "Ground-truth labels JSONL for the training set (needed for gt)");
    opts.add("dev-features", dev_features, "Dev student features");
    opts.add("dev-labels", dev_labels, "Dev ground-truth labels JSONL");
    opts.add("out-dir", out_dir, "Directory for model.ckpt and train_report.json");
    opts.add("label-source", label_source, "Hard labels for CE: pt (annotated argmax) or gt")
        ->check(CLI::IsMember({"pt", "gt"}));
    training.add_to(opts);
  }

  int run(std::ostream& out_stream) {
    for (const auto& [path, name] : {std::pair{&features, "features"}, {&teacher, "teacher"},
                                     {&annotations, "annotations"}, {&dev_features, "dev-features"},
                                     {&dev_labels, "dev-labels"}}) {
      require_file(*path, name);
    }
    const auto source = parse_label_source(label_source);
    if (source == LabelSource::kGroundTruth) require_file(labels, "labels");
    if (out_dir.empty()) throw ConfigError("missing --out-dir");
    const auto cfg = training.train_config();

    const auto ann = load_annotations(annotations);
    if (ann.empty()) throw EmptyInputError("annotation file is empty");
    const std::size_t classes = ann.front().soft_label.num_classes();
    std::unordered_map<std::string, std::size_t> gt;
    if (source == LabelSource::kGroundTruth) {
      for (const auto& l : load_labels(labels)) gt.emplace(l.id, l.label);
    }
    std::vector<LabelRecord> records;
    records.reserve(ann.size());
    for (const auto& a : ann) {
      if (a.soft_label.num_classes() != classes) throw DataError("annotation '" + a.id + "' has a different class count");
      std::size_t label = a.hard_label;
      if (source == LabelSource::kGroundTruth) {
        const auto it = gt.find(a.id);
        if (it == gt.end()) throw DataError("annotation id '" + a.id + "' has no ground-truth label");
        label = it->second;
      }
      records.push_back({a.id, label, std::vector<double>(a.soft_label.probs().begin(), a.soft_label.probs().end())});
    }
    const auto train_data = assemble_dataset(load_embeddings(teacher, EmbeddingRole::kTeacher),
                                             load_embeddings(features, EmbeddingRole::kStudentFeatures),
                                             records, classes);
    const auto dev = features_with_labels(load_embeddings(dev_features, EmbeddingRole::kStudentFeatures),
                                          load_labels(dev_labels), classes);

    const auto student = training.student_config(train_data.student_dim(), classes);
    auto result = train(StudentModel::init(student), make_training_set(train_data, source), dev.examples, cfg);
    result.report.checkpoint = "model.ckpt";

    const auto ckpt = serialize_checkpoint(result.best_model, result.report.best_epoch);
    json report = result.report.to_json();
    report["config"] = arm_config(student, cfg, source);
    require_dir(out_dir, "out-dir");
    write_file_atomic(fs::path(out_dir) / "model.ckpt", ckpt);
    write_file_atomic(fs::path(out_dir) / "train_report.json", pretty(report));
    out_stream << "best epoch " << result.report.best_epoch << ", dev accuracy " << std::setprecision(17)
               << result.report.best_dev_accuracy << "\n";
    return kSuccess;
  }
};

// ---------------------------------------------------------------- eval

struct EvalCommand {
  std::string model;
  std::string features;
  std::string labels;
  std::string out;

  void add_to(OptionSet& opts) {
    opts.add("model", model, "Checkpoint produced by 'train'");
    opts.add("features", features, "Student features to evaluate on");
    opts.add("labels", labels, "Ground-truth labels JSONL");
    opts.add("out", out, "Optional JSON report path");
  }

  int run(std::ostream& out_stream) {
    require_file(model, "model");
    require_file(features, "features");
    require_file(labels, "labels");
    const auto ckpt = load_checkpoint(model);
    const auto data = features_with_labels(load_embeddings(features, EmbeddingRole::kStudentFeatures),
                                           load_labels(labels), ckpt.model.config().num_classes);
    const auto result = evaluate(ckpt.model, data);
    json report = result.to_json();
    report["epoch"] = ckpt.epoch;
    if (!out.empty()) write_file_atomic(out, pretty(report));
    out_stream << "accuracy " << std::setprecision(17) << result.accuracy << "\n";
    return kSuccess;
  }
};

// ---------------------------------------------------------------- ablate

struct AblateCommand {
  std::string data;
  std::string out_dir;
  std::size_t k = kDefaultNeighbors;
  double temperature = 1.0;
  std::size_t num_classes = 2;
  TrainingOptions training;

  void add_to(OptionSet& opts) {
    opts.add("data", data, "Directory laid out by 'gen' (source_train, target_{train,dev,test})");
    opts.add("out-dir", out_dir, "Directory for ablation.json and ablation.txt");
    opts.add("k", k, "Number of neighbors for annotation");
    opts.add("temperature", temperature, "Annotation distance temperature");
    opts.add("num-classes", num_classes, "Number of classes");
    training.add_to(opts);
  }

  int run(std::ostream& out_stream) {
    if (data.empty() || !fs::is_directory(data)) throw ConfigError("--data must be an existing directory");
    if (out_dir.empty()) throw ConfigError("missing --out-dir");
    if (k == 0) throw ConfigError("--k must be >= 1");
    const auto base = training.train_config();

    const auto source = load_dataset(data, "source_train", num_classes);
    std::vector<SourceRecord> records;
    records.reserve(source.size());
    for (const auto& e : source.examples) records.push_back({EmbeddingVector(e.teacher_embedding), e.label, e.id});
    const auto store = Datastore::build(records, num_classes);

    ExperimentData exp{load_dataset(data, "target_train", num_classes),
                       load_dataset(data, "target_dev", num_classes),
                       load_dataset(data, "target_test", num_classes)};
    std::size_t correct = 0;
    for (auto& e : exp.target_train.examples) {
      e.soft_label = annotate(store, e.teacher_embedding, k, temperature);
      correct += e.soft_label->argmax() == e.label;
    }
    const double annotation_accuracy =
        static_cast<double>(correct) / static_cast<double>(std::max<std::size_t>(1, exp.target_train.size()));

    const auto student = training.student_config(exp.target_train.student_dim(), num_classes);
    const auto ablation = run_ablation(exp, student, base);
    const auto variants = run_simloss_comparison(exp, student, base);

    json report;
    report["annotation_accuracy"] = annotation_accuracy;
    report["ablation"] = ablation.to_json();
    report["simloss_variants"] = variants.to_json();
    std::ostringstream text;
    text << "kNN annotation accuracy on target train: " << std::fixed << std::setprecision(2)
         << 100.0 * annotation_accuracy << "\n\n"
         << ablation.render() << "\n"
         << variants.render();
    require_dir(out_dir, "out-dir");
    write_file_atomic(fs::path(out_dir) / "ablation.json", pretty(report));
    write_file_atomic(fs::path(out_dir) / "ablation.txt", text.str());
    out_stream << text.str();
    return kSuccess;
  }
};

// ---------------------------------------------------------------- casestudy

struct CaseStudyCommand {
  std::string store;
  std::string queries;
  std::string query_id;
  std::size_t k = kCaseStudyNeighbors;
  std::string space = "teacher";
  std::string model;
  std::string source_features;
  std::string source_labels;
  std::string out;

  void add_to(OptionSet& opts) {
    opts.add("store", store, "Datastore (.sxds), teacher space");
    opts.add("queries", queries, "Embeddings holding the query (teacher space) or its student features");
    opts.add("query-id", query_id, "Id of the query record");
    opts.add("k", k, "Number of neighbors to report");
    opts.add("space", space, "Similarity space: teacher or student")->check(CLI::IsMember({"teacher", "student"}));
    opts.add("model", model, "Checkpoint (student space)");
    opts.add("source-features", source_features, "Source student features (student space)");
    opts.add("source-labels", source_labels, "Source labels JSONL (student space)");
    opts.add("out", out, "Optional JSON report path");
  }

  int run(std::ostream& out_stream) {
    require_file(queries, "queries");
    if (query_id.empty()) throw ConfigError("missing --query-id");
    const auto emb = load_embeddings(queries);
    const auto it = std::find(emb.ids.begin(), emb.ids.end(), query_id);
    if (it == emb.ids.end()) throw DataError("query id '" + query_id + "' not found");
    const auto query = emb.row_as_double(static_cast<std::size_t>(it - emb.ids.begin()));

    CaseStudyReport report;
    if (parse_similarity_space(space) == SimilaritySpace::kTeacher) {
      require_file(store, "store");
      report = case_study(Datastore::load(store), query_id, query, k, SimilaritySpace::kTeacher);
    } else {
      require_file(model, "model");
      require_file(source_features, "source-features");
      require_file(source_labels, "source-labels");
      const auto ckpt = load_checkpoint(model);
      const auto src = features_with_labels(load_embeddings(source_features), load_labels(source_labels),
                                            ckpt.model.config().num_classes);
      const auto student_store = student_space_datastore(ckpt.model, src);
      const auto trace = forward(ckpt.model, query);
      report = case_study(student_store, query_id, trace.representation(), k, SimilaritySpace::kStudent);
    }
    if (!out.empty()) write_file_atomic(out, pretty(report.to_json()));
    out_stream << report.render();
    return kSuccess;
  }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"kNN soft-label annotation and similarity-consistent distillation toolkit", "knnkd"};
  app.require_subcommand(1);
  app.fallthrough(false);

  GenCommand gen;
  BuildCommand build;
  AnnotateCommand annotate_cmd;
  TrainCommand train_cmd;
  EvalCommand eval;
  AblateCommand ablate;
  CaseStudyCommand casestudy;

  struct Entry {
    CLI::App* app;
    std::unique_ptr<OptionSet> options;
    std::function<int(std::ostream&)> run;
  };
  std::vector<Entry> entries;
  auto add = [&](const char* name, const char* help, auto& command) {
    auto* sub = app.add_subcommand(name, help);
    auto opts = std::make_unique<OptionSet>(sub);
    command.add_to(*opts);
    entries.push_back({sub, std::move(opts), [&command](std::ostream& o) { return command.run(o); }});
  };
  add("gen", "Generate the synthetic two-domain benchmark", gen);
  add("build", "Build a datastore from source embeddings and labels", build);
  add("annotate", "Annotate target embeddings with kNN soft labels", annotate_cmd);
  add("train", "Train a student on annotated target data", train_cmd);
  add("eval", "Evaluate a checkpoint", eval);
  add("ablate", "Run the six-arm ablation and the SimLoss-variant comparison", ablate);
  add("casestudy", "Report the nearest source examples of one query", casestudy);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kSuccess : kUsage;
  }

  for (auto& entry : entries) {
    if (!entry.app->parsed()) continue;
    try {
      entry.options->apply_config_file();
      if (entry.options->print_config()) {
        out << pretty(entry.options->effective());
        return kSuccess;
      }
      return entry.run(out);
    } catch (const ConfigError& e) {
      err << "error: " << e.what() << "\n";
      return kUsage;
    } catch (const NonFiniteGradientError& e) {
      err << "numeric failure: " << e.what() << "\n";
      return kNumericFailure;
    } catch (const DegenerateVectorError& e) {
      err << "numeric failure: " << e.what() << "\n";
      return kNumericFailure;
    } catch (const Error& e) {
      err << "data error: " << e.what() << "\n";
      return kDataError;
    } catch (const nlohmann::json::exception& e) {
      err << "data error: " << e.what() << "\n";
      return kDataError;
    } catch (const std::filesystem::filesystem_error& e) {
      err << "data error: " << e.what() << "\n";
      return kDataError;
    }
  }
  return kUsage;
}

}  // namespace knnkd::cli
