// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "knnkd/numerics.hpp"

namespace knnkd {

enum class Activation { kTanh, kRelu };

std::string_view to_string(Activation a);
/// Throws ConfigError on an unknown name.
Activation parse_activation(std::string_view name);

struct StudentConfig {
  std::size_t input_dim = 16;
  std::vector<std::size_t> hidden_dims{64};
  std::size_t repr_dim = 64;
  std::size_t num_classes = 2;
  Activation activation = Activation::kTanh;
  std::uint64_t seed = 0;

  /// Throws ConfigError.
  void validate() const;

  friend bool operator==(const StudentConfig&, const StudentConfig&) = default;
};

/// Dense layer y = W x + b with W stored row-major (out x in) inside the
/// model's flat parameter vector.
struct LayerShape {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;

  std::size_t weight_count() const noexcept { return in * out; }

  friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

/// MLP encoder (input -> hidden_dims... -> repr_dim, activation after every
/// encoder layer) followed by a linear head repr_dim -> num_classes.
class StudentModel {
 public:
  /// Weights uniform in +-sqrt(3 / fan_in), biases zero; deterministic in seed.
  static StudentModel init(const StudentConfig& config);
  /// All parameters zero; layout as init().
  static StudentModel zeros(const StudentConfig& config);

  const StudentConfig& config() const noexcept { return config_; }
  /// Encoder layers followed by the head.
  std::span<const LayerShape> layers() const noexcept { return layers_; }
  std::size_t num_encoder_layers() const noexcept { return layers_.size() - 1; }
  const LayerShape& head() const noexcept { return layers_.back(); }

  std::span<double> parameters() noexcept { return params_; }
  std::span<const double> parameters() const noexcept { return params_; }
  std::size_t parameter_count() const noexcept { return params_.size(); }

  std::span<double> weights(std::size_t layer);
  std::span<const double> weights(std::size_t layer) const;
  std::span<double> bias(std::size_t layer);
  std::span<const double> bias(std::size_t layer) const;

  /// Copy with every parameter rounded to 32-bit precision, i.e. exactly
  /// what a checkpoint stores.
  StudentModel rounded_to_f32() const;

  friend bool operator==(const StudentModel&, const StudentModel&) = default;

 private:
  explicit StudentModel(const StudentConfig& config);

  StudentConfig config_;
  std::vector<LayerShape> layers_;
  std::vector<double> params_;
};

struct ForwardTrace {
  /// inputs[l] feeds encoder layer l; inputs.back() is the representation.
  std::vector<std::vector<double>> inputs;
  std::vector<std::vector<double>> pre_activations;
  std::vector<double> logits;
  LabelDistribution predicted;

  std::span<const double> representation() const noexcept { return inputs.back(); }
};

/// Gradients laid out exactly like StudentModel::parameters().
struct GradientSet {
  std::vector<double> values;

  bool all_finite() const noexcept;
};

/// Throws DimensionError when input.size() != config.input_dim.
ForwardTrace forward(const StudentModel& model, std::span<const double> input);

/// Sum over the batch of the parameter gradients given per-example upstream
/// gradients with respect to the logits and the representation.
GradientSet backward(const StudentModel& model, std::span<const ForwardTrace> traces,
                     std::span<const std::vector<double>> grad_logits,
                     std::span<const std::vector<double>> grad_repr);

/// Lowest-index argmax of the logits.
std::size_t predict(const StudentModel& model, std::span<const double> input);

struct Checkpoint {
  StudentModel model;
  std::size_t epoch = 0;
};

/// One JSON header line (config, seed, epoch, parameter count) followed by
/// the parameters as little-endian 32-bit floats.
std::string serialize_checkpoint(const StudentModel& model, std::size_t epoch);
/// Throws FormatError on malformed or truncated input.
Checkpoint deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const StudentModel& model, std::size_t epoch);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace knnkd
