#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "delta/numeric.hpp"

namespace delta {

struct ModelConfig {
  std::size_t input_dim = 32;
  std::vector<std::size_t> hidden_dims = {64, 64};
  std::size_t embed_dim = 64;
  std::size_t proj_dim = 128;
  std::size_t num_classes_max = 20;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Fully connected layer y = x·W + b with W stored (in × out).
class Linear {
 public:
  Linear(std::string name, std::size_t in, std::size_t out, std::mt19937_64& rng);

  Matrix forward(const Matrix& x) const;
  /// Accumulates parameter gradients (trainable tensors only) and returns
  /// the gradient with respect to `x`.
  Matrix backward(const Matrix& x, const Matrix& grad_output);

  std::size_t in_features() const { return weight.value.rows(); }
  std::size_t out_features() const { return weight.value.cols(); }

  ParamTensor weight;
  ParamTensor bias;
};

enum class Stage {
  /// Encoder and projection train; classifier frozen.
  one,
  /// Classifier trains; encoder and projection frozen.
  two,
  /// Everything trains (single-stage baseline).
  joint,
};

/// Intermediates of one encoder forward pass, kept for backpropagation.
struct EncoderTrace {
  std::vector<Matrix> layer_inputs;
  std::vector<Matrix> pre_activations;
  Matrix raw_embedding;
  Matrix embedding;
};

struct ProjectionTrace {
  Matrix raw;
  Matrix projection;
};

/// MLP encoder → L2-normalized embedding e, with a linear projection head
/// (→ L2-normalized v) and a linear classifier head over e.
class Network {
 public:
  Network(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return cfg_; }

  Matrix encode(const Matrix& x) const { return encode_traced(x).embedding; }
  EncoderTrace encode_traced(const Matrix& x) const;
  Matrix project(const Matrix& e) const { return project_traced(e).projection; }
  ProjectionTrace project_traced(const Matrix& e) const;
  Matrix classify(const Matrix& e) const;

  void backward_encoder(const EncoderTrace& trace, const Matrix& grad_embedding);
  /// Returns the gradient with respect to the embedding fed to project().
  Matrix backward_projection(const Matrix& embedding, const ProjectionTrace& trace,
                             const Matrix& grad_projection);
  /// Returns the gradient with respect to the embedding fed to classify().
  Matrix backward_classifier(const Matrix& embedding, const Matrix& grad_logits);

  void set_stage(Stage stage);

  std::vector<ParamTensor*> parameters();
  std::vector<ParamTensor*> encoder_parameters();
  std::vector<ParamTensor*> projection_parameters();
  std::vector<ParamTensor*> classifier_parameters();
  std::vector<const ParamTensor*> parameters() const;

  std::uint64_t encoder_hash() const;
  std::uint64_t projection_hash() const;
  std::uint64_t classifier_hash() const;
  std::size_t parameter_count() const;

 private:
  void check_width(const Matrix& m, std::size_t expected, const char* op) const;

  ModelConfig cfg_;
  std::vector<Linear> encoder_;
  Linear projection_;
  Linear classifier_;
};

/// Writes shapes, flags and row-major values as JSON. Values round-trip exactly.
void save_checkpoint(const std::filesystem::path& path, const Network& net);
Network load_checkpoint(const std::filesystem::path& path);

}  // namespace delta
