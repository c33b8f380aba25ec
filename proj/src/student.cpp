// SPDX-License-Identifier: Apache-2.0
#include "knnkd/student.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "knnkd/binary_io.hpp"
#include "knnkd/errors.hpp"
#include "knnkd/rng.hpp"

namespace knnkd {

std::string_view to_string(Activation a) { return a == Activation::kTanh ? "tanh" : "relu"; }

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "relu") return Activation::kRelu;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

void StudentConfig::validate() const {
  if (input_dim == 0 || repr_dim == 0) throw ConfigError("student dims must be >= 1");
  for (auto h : hidden_dims) {
    if (h == 0) throw ConfigError("hidden dims must be >= 1");
  }
  if (num_classes < 2) throw ConfigError("student needs at least two classes");
}

StudentModel::StudentModel(const StudentConfig& config) : config_(config) {
  config_.validate();
  std::vector<std::size_t> widths{config_.input_dim};
  widths.insert(widths.end(), config_.hidden_dims.begin(), config_.hidden_dims.end());
  widths.push_back(config_.repr_dim);
  widths.push_back(config_.num_classes);

  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    LayerShape shape{widths[l], widths[l + 1], offset, 0};
    offset += shape.weight_count();
    shape.bias_offset = offset;
    offset += shape.out;
    layers_.push_back(shape);
  }
  params_.assign(offset, 0.0);
}

StudentModel StudentModel::zeros(const StudentConfig& config) { return StudentModel(config); }

StudentModel StudentModel::init(const StudentConfig& config) {
  StudentModel model(config);
  Rng rng(config.seed);
  for (const auto& layer : model.layers_) {
    const double limit = std::sqrt(3.0 / static_cast<double>(layer.in));
    for (std::size_t i = 0; i < layer.weight_count(); ++i) {
      model.params_[layer.weight_offset + i] = rng.uniform(-limit, limit);
    }
  }
  return model;
}

std::span<double> StudentModel::weights(std::size_t layer) {
  const auto& s = layers_.at(layer);
  return {params_.data() + s.weight_offset, s.weight_count()};
}

std::span<const double> StudentModel::weights(std::size_t layer) const {
  const auto& s = layers_.at(layer);
  return {params_.data() + s.weight_offset, s.weight_count()};
}

std::span<double> StudentModel::bias(std::size_t layer) {
  const auto& s = layers_.at(layer);
  return {params_.data() + s.bias_offset, s.out};
}

std::span<const double> StudentModel::bias(std::size_t layer) const {
  const auto& s = layers_.at(layer);
  return {params_.data() + s.bias_offset, s.out};
}

StudentModel StudentModel::rounded_to_f32() const {
  StudentModel copy = *this;
  for (double& p : copy.params_) p = static_cast<float>(p);
  return copy;
}

bool GradientSet::all_finite() const noexcept {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

namespace {

void affine(std::span<const double> w, std::span<const double> b, std::span<const double> x,
            std::vector<double>& y) {
  const std::size_t in = x.size();
  y.assign(b.begin(), b.end());
  for (std::size_t o = 0; o < y.size(); ++o) {
    const double* row = w.data() + o * in;
    double sum = 0.0;
    for (std::size_t i = 0; i < in; ++i) sum += row[i] * x[i];
    y[o] += sum;
  }
}

double activate(Activation a, double x) { return a == Activation::kTanh ? std::tanh(x) : std::max(x, 0.0); }

double activation_slope(Activation a, double pre, double post) {
  return a == Activation::kTanh ? 1.0 - post * post : (pre > 0.0 ? 1.0 : 0.0);
}

}  // namespace

ForwardTrace forward(const StudentModel& model, std::span<const double> input) {
  const auto& cfg = model.config();
  if (input.size() != cfg.input_dim) {
    throw DimensionError("student input dim " + std::to_string(input.size()) + ", expected " +
                         std::to_string(cfg.input_dim));
  }
  ForwardTrace trace;
  trace.inputs.emplace_back(input.begin(), input.end());
  for (std::size_t l = 0; l < model.num_encoder_layers(); ++l) {
    std::vector<double> pre;
    affine(model.weights(l), model.bias(l), trace.inputs.back(), pre);
    std::vector<double> post(pre.size());
    for (std::size_t i = 0; i < pre.size(); ++i) post[i] = activate(cfg.activation, pre[i]);
    trace.pre_activations.push_back(std::move(pre));
    trace.inputs.push_back(std::move(post));
  }
  const std::size_t h = model.num_encoder_layers();
  affine(model.weights(h), model.bias(h), trace.inputs.back(), trace.logits);
  trace.predicted = LabelDistribution(softmax(trace.logits));
  return trace;
}

GradientSet backward(const StudentModel& model, std::span<const ForwardTrace> traces,
                     std::span<const std::vector<double>> grad_logits,
                     std::span<const std::vector<double>> grad_repr) {
  if (grad_logits.size() != traces.size() || grad_repr.size() != traces.size()) {
    throw DimensionError("upstream gradient batch size does not match traces");
  }
  const auto& cfg = model.config();
  const auto layers = model.layers();
  const std::size_t head = model.num_encoder_layers();

  GradientSet grads;
  grads.values.assign(model.parameter_count(), 0.0);
  auto accumulate = [&](std::size_t l, std::span<const double> delta, std::span<const double> x) {
    const auto& s = layers[l];
    for (std::size_t o = 0; o < s.out; ++o) {
      double* row = grads.values.data() + s.weight_offset + o * s.in;
      for (std::size_t i = 0; i < s.in; ++i) row[i] += delta[o] * x[i];
      grads.values[s.bias_offset + o] += delta[o];
    }
  };
  auto back_through = [&](std::size_t l, std::span<const double> delta) {
    const auto& s = layers[l];
    const auto w = model.weights(l);
    std::vector<double> out(s.in, 0.0);
    for (std::size_t o = 0; o < s.out; ++o) {
      const double* row = w.data() + o * s.in;
      for (std::size_t i = 0; i < s.in; ++i) out[i] += row[i] * delta[o];
    }
    return out;
  };

  for (std::size_t n = 0; n < traces.size(); ++n) {
    const auto& t = traces[n];
    if (grad_logits[n].size() != cfg.num_classes || grad_repr[n].size() != cfg.repr_dim ||
        t.inputs.size() != head + 1) {
      throw DimensionError("upstream gradient shape mismatch at batch item " + std::to_string(n));
    }
    accumulate(head, grad_logits[n], t.inputs[head]);
    std::vector<double> delta = back_through(head, grad_logits[n]);
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] += grad_repr[n][i];

    for (std::size_t l = head; l-- > 0;) {
      const auto& pre = t.pre_activations[l];
      const auto& post = t.inputs[l + 1];
      for (std::size_t i = 0; i < delta.size(); ++i) {
        delta[i] *= activation_slope(cfg.activation, pre[i], post[i]);
      }
      accumulate(l, delta, t.inputs[l]);
      if (l > 0) delta = back_through(l, delta);
    }
  }
  return grads;
}

std::size_t predict(const StudentModel& model, std::span<const double> input) {
  return argmax(forward(model, input).logits);
}

std::string serialize_checkpoint(const StudentModel& model, std::size_t epoch) {
  const auto& cfg = model.config();
  nlohmann::ordered_json header;
  header["format"] = "knnkd-checkpoint";
  header["version"] = 1;
  header["config"] = {{"input_dim", cfg.input_dim},
                      {"hidden_dims", cfg.hidden_dims},
                      {"repr_dim", cfg.repr_dim},
                      {"num_classes", cfg.num_classes},
                      {"activation", to_string(cfg.activation)}};
  header["seed"] = cfg.seed;
  header["epoch"] = epoch;
  header["parameter_count"] = model.parameter_count();

  ByteWriter w;
  w.put_bytes(header.dump());
  w.put_bytes("\n");
  for (double p : model.parameters()) w.put_f32(static_cast<float>(p));
  return w.take();
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  const auto newline = bytes.find('\n');
  if (newline == std::string_view::npos) throw FormatError("checkpoint header not terminated");

  StudentConfig cfg;
  std::size_t epoch = 0;
  std::size_t count = 0;
  try {
    const auto header = nlohmann::json::parse(bytes.substr(0, newline));
    if (header.at("format") != "knnkd-checkpoint" || header.at("version") != 1) {
      throw FormatError("unsupported checkpoint format");
    }
    const auto& c = header.at("config");
    cfg.input_dim = c.at("input_dim").get<std::size_t>();
    cfg.hidden_dims = c.at("hidden_dims").get<std::vector<std::size_t>>();
    cfg.repr_dim = c.at("repr_dim").get<std::size_t>();
    cfg.num_classes = c.at("num_classes").get<std::size_t>();
    cfg.activation = parse_activation(c.at("activation").get<std::string>());
    cfg.seed = header.at("seed").get<std::uint64_t>();
    epoch = header.at("epoch").get<std::size_t>();
    count = header.at("parameter_count").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what());
  }

  StudentModel model = StudentModel::zeros(cfg);
  if (count != model.parameter_count()) throw FormatError("checkpoint parameter count mismatch");
  ByteReader r(bytes.substr(newline + 1));
  for (double& p : model.parameters()) {
    p = r.get_f32();
    if (!std::isfinite(p)) throw DataError("checkpoint holds a non-finite parameter");
  }
  if (!r.at_end()) throw FormatError("trailing bytes after checkpoint parameters");
  return {std::move(model), epoch};
}

void save_checkpoint(const std::filesystem::path& path, const StudentModel& model, std::size_t epoch) {
  write_file_atomic(path, serialize_checkpoint(model, epoch));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file(path));
}

}  // namespace knnkd
