#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "distill/grid.hpp"

namespace distill {

enum class Nonlinearity : std::uint8_t { Relu, LeakyRelu };

/// Mini feature-pyramid detector: `scales` average-pool downsamplings, two
/// convolutions per level, 1x1 laterals into a shared width, top-down
/// nearest upsampling with addition, a fusion convolution and a 1x1 sigmoid
/// head producing one probability per input pixel.
struct ArchitectureSpec {
  std::vector<int> widths{8, 16, 32};  // one entry per level, length scales + 1
  int fpn_width = 8;
  int kernel = 3;
  Nonlinearity nonlinearity = Nonlinearity::LeakyRelu;

  int scales() const { return static_cast<int>(widths.size()) - 1; }
  void validate() const;
  std::size_t parameter_count() const;

  /// Round-trippable identifier, e.g. "minifpn-w8.16.32-f8-k3-relu".
  std::string id() const;
  static ArchitectureSpec from_id(const std::string& id);

  bool operator==(const ArchitectureSpec&) const = default;
};

/// Flat parameter vector plus the architecture it belongs to.
struct ModelCheckpoint {
  std::vector<float> parameters;
  std::string architecture_id;
  std::uint64_t step_index = 0;

  /// Throws ConfigError if the parameter count disagrees with the id.
  void validate() const;
  bool operator==(const ModelCheckpoint&) const = default;
};

/// Logits are clamped to this magnitude before the sigmoid so that float
/// outputs stay strictly inside (0,1).
inline constexpr double kLogitLimit = 16.0;

/// Forward/backward evaluator. Holds the activation workspace of the last
/// forward pass, so one instance must not be shared between threads.
template <typename T>
class Detector {
 public:
  explicit Detector(ArchitectureSpec arch);

  const ArchitectureSpec& architecture() const { return arch_; }
  std::size_t parameter_count() const { return param_count_; }

  /// Runs the network and keeps every activation needed by backward().
  /// Throws ShapeError unless both dimensions are divisible by 2^scales.
  void forward(std::span<const T> params, const Image& image);

  int height() const { return height_; }
  int width() const { return width_; }
  /// Pre-sigmoid outputs (after the clamp) and probabilities of the last pass.
  std::span<const T> logits() const { return logits_; }
  std::span<const T> probabilities() const { return probs_; }

  /// Accumulates d(loss)/d(params) given d(loss)/d(logits) of the last
  /// forward pass. Logits that hit the clamp pass no gradient.
  void backward(std::span<const T> params, std::span<const T> grad_logits,
                std::span<T> grad_params);

 private:
  struct ConvLayer {
    std::size_t weight_offset = 0;
    std::size_t bias_offset = 0;
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 0;
  };
  struct Level {
    int height = 0;
    int width = 0;
    std::vector<T> input;  // image or pooled previous level
    std::vector<T> hidden;
    std::vector<T> features;
    std::vector<T> topdown;
    std::vector<T> grad_features;
    std::vector<T> grad_topdown;
  };

  ArchitectureSpec arch_;
  std::vector<ConvLayer> conv_a_;
  std::vector<ConvLayer> conv_b_;
  std::vector<ConvLayer> lateral_;
  ConvLayer fusion_;
  ConvLayer head_;
  std::size_t param_count_ = 0;

  int height_ = 0;
  int width_ = 0;
  std::vector<Level> levels_;
  std::vector<T> fused_;
  std::vector<T> logits_;
  std::vector<T> raw_logits_;
  std::vector<T> probs_;
  std::vector<T> scratch_a_;
  std::vector<T> scratch_b_;
};

extern template class Detector<float>;
extern template class Detector<double>;

/// A differentiable loss on a probability map. evaluate() returns the loss
/// and writes d(loss)/d(logit) for every pixel, given the probabilities.
template <typename T>
class LossTail {
 public:
  virtual ~LossTail() = default;
  virtual double evaluate(std::span<const T> probabilities, std::span<T> grad_logits) const = 0;
};

template <typename T>
struct LossAndGradient {
  double loss = 0.0;
  std::vector<T> gradient;
};

/// Loss of the forward pass plus its gradient w.r.t. every parameter.
/// Throws NumericalError when the loss is not finite.
template <typename T>
LossAndGradient<T> forward_with_gradients(const ArchitectureSpec& arch, std::span<const T> params,
                                          const Image& image, const LossTail<T>& loss_tail);

/// Float convenience overload on a checkpoint.
LossAndGradient<float> forward_with_gradients(const ModelCheckpoint& checkpoint,
                                              const Image& image,
                                              const LossTail<float>& loss_tail);

/// Deterministic variance-scaled initialization. The head bias starts at
/// logit(0.1) so initial maps are biased toward background.
ModelCheckpoint init_parameters(const ArchitectureSpec& arch, std::uint64_t seed);

/// Probability map of `image` under the checkpoint.
ProbabilityMap forward(const ModelCheckpoint& checkpoint, const Image& image);

/// Reuses one detector for many images of the same architecture.
class Predictor {
 public:
  explicit Predictor(const ModelCheckpoint& checkpoint);
  ProbabilityMap operator()(const Image& image);

 private:
  const ModelCheckpoint* checkpoint_;
  Detector<float> detector_;
};

/// Checkpoint file: text header lines (magic, architecture_id,
/// parameter_count, step_index, end) followed by the parameters as
/// little-endian float32.
void save_checkpoint(const ModelCheckpoint& checkpoint, const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Writes/reads raw little-endian float32 values.
void write_f32_le(std::ostream& os, std::span<const float> values);
void read_f32_le(std::istream& is, std::span<float> values);

}  // namespace distill
