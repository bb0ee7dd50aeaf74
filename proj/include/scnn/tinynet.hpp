#pragma once

#include "scnn/interval.hpp"
#include "scnn/loss.hpp"
#include "scnn/types.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace scnn {

// Miniature 3D ConvNet. Every conv3d is 3x3x3, stride 1, same padding; every
// pool3d is 2x2 spatial with stride 2 and a configurable temporal kernel/stride.

enum class LayerKind { conv3d, pool3d, fc, relu };

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  int width = 0;  // filters for conv3d, outputs for fc
  int temporal_kernel = 1;
  int temporal_stride = 1;

  static LayerSpec conv(int filters) { return {LayerKind::conv3d, filters}; }
  static LayerSpec pool(int kernel, int stride) { return {LayerKind::pool3d, 0, kernel, stride}; }
  static LayerSpec fc(int outputs) { return {LayerKind::fc, outputs}; }
  static LayerSpec relu() { return {LayerKind::relu}; }

  bool has_params() const { return kind == LayerKind::conv3d || kind == LayerKind::fc; }
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct Shape {
  Eigen::Index channels = 1;
  Eigen::Index frames = 1;
  Eigen::Index height = 1;
  Eigen::Index width = 1;

  Eigen::Index size() const { return channels * frames * height * width; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

struct Architecture {
  Shape input;
  std::vector<LayerSpec> layers;

  // Shape after each layer; throws std::invalid_argument when the chain is incompatible.
  std::vector<Shape> output_shapes() const;
  int num_outputs() const;
  std::size_t parameter_count() const;
  // Index of the final fc layer, trained at the head learning rate.
  std::size_t head_layer() const;
  std::string fingerprint() const;
  void validate() const;

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

// conv(c1) relu pool(2,2) conv(c2) relu pool(2,2) fc(hidden) relu fc(num_outputs)
Architecture tiny_architecture(Shape input, int num_outputs, int conv1 = 4, int conv2 = 8, int hidden = 16);

// The full C3D layout (conv1a(64) ... fc8) on 3 x 16 x 128 x 171 inputs. Shape
// inference and parameter counting only; far too large to train here.
Architecture c3d_architecture(int num_outputs);

struct LayerParams {
  Matrix weight;  // conv: filters x (in_channels * 27); fc: outputs x inputs
  Vector bias;
};

struct ModelParams {
  Architecture arch;
  std::vector<LayerParams> layers;  // one entry per layer, empty for relu/pool

  bool all_finite() const;
  std::size_t parameter_count() const;
};

using Gradients = std::vector<LayerParams>;

Gradients zero_gradients(const ModelParams& params);

// He-style uniform weights (variance 2 / fan_in), zero biases.
ModelParams init_params(const Architecture& arch, std::uint64_t seed);

struct ScoreVector {
  Vector logits;
  Vector probs;
};

struct ForwardCache {
  std::string fingerprint;
  std::vector<Vector> activations;  // input followed by every layer output, flattened
  std::vector<Matrix> columns;      // im2col buffers of conv layers
  std::vector<std::vector<Eigen::Index>> argmax;  // pool routing
};

ScoreVector forward(const ModelParams& params, const InputTensor& input, ForwardCache* cache = nullptr);

// Accumulates parameter gradients for one sample into `grads`. Returns dL/dinput
// when `input_grad` is non-null. ReLU'(0) is taken as 0.
void backward(const ModelParams& params, const ForwardCache& cache, const Vector& logit_grad, Gradients& grads,
              Vector* input_grad = nullptr);

struct SgdConfig {
  double base_lr = 1e-4;
  double head_lr = 1e-2;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double lr_drop_factor = 2.0;
  int drop_interval = 10000;
  int iterations = 30000;
  int batch_size = 32;
  std::uint64_t seed = 1;

  std::vector<std::string> violations() const;
};

// velocity = momentum * velocity - lr * (grad + decay * w); w += velocity.
// Weight decay applies to weights, not biases.
class SgdOptimizer {
 public:
  SgdOptimizer(SgdConfig cfg, const ModelParams& params);

  double learning_rate(int iteration, bool head) const;
  void step(ModelParams& params, const Gradients& grads);
  int iteration() const { return iteration_; }

 private:
  SgdConfig cfg_;
  std::size_t head_;
  Gradients velocity_;
  int iteration_ = 0;
};

struct TrainingExample {
  InputTensor input;
  ClassId label = 0;
  double overlap = 1.0;
};

struct TrainingLog {
  std::vector<double> loss;
  std::vector<double> softmax_loss;
  std::vector<double> overlap_loss;
};

struct TrainResult {
  ModelParams params;
  TrainingLog log;
  int iterations = 0;
};

// Mini-batch SGD over a seeded per-epoch shuffle. Starts from `init` when given,
// otherwise from init_params(arch, sgd.seed). Throws NumericError on divergence.
TrainResult train(const Architecture& arch, std::span<const TrainingExample> data, const SgdConfig& sgd,
                  const LossConfig& loss, const std::optional<ModelParams>& init = std::nullopt);

// Batch loss and parameter gradients at the current parameters.
LossTerms<double> loss_and_gradients(const ModelParams& params, std::span<const TrainingExample> batch,
                                     const LossConfig& loss, Gradients* grads);

// JSON container: architecture + fingerprint, row-major float64 tensors, SGD snapshot, iteration count.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, const SgdConfig& sgd,
                     int iterations);
// Throws ConfigError on a malformed file or when `expected` is given and its fingerprint differs.
ModelParams load_checkpoint(const std::filesystem::path& path,
                            const std::optional<Architecture>& expected = std::nullopt);

}  // namespace scnn
