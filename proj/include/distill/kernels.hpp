#pragma once

// Data-parallel inner loops of the detector: convolutions over channels-last
// (HWC) activations, optimizer and EMA updates. Every kernel has a scalar
// reference templated on the element type; float additionally has AVX2
// variants selected at runtime. Tests hold the variants to the reference.

#include <cstddef>
#include <span>
#include <string>

namespace distill::kernels {

/// Stride-1 "same" convolution with an odd square kernel.
/// Activations are [height][width][channels]; weights [k*k][in][out].
struct ConvShape {
  int height = 0;
  int width = 0;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;

  std::size_t input_size() const {
    return static_cast<std::size_t>(height) * width * in_channels;
  }
  std::size_t output_size() const {
    return static_cast<std::size_t>(height) * width * out_channels;
  }
  std::size_t weight_size() const {
    return static_cast<std::size_t>(kernel) * kernel * in_channels * out_channels;
  }
};

struct AdamHyper {
  float learning_rate = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
  float weight_decay = 0.0f;
};

// --- scalar reference (float and double) ---------------------------------

namespace scalar {

template <typename T>
void conv_forward(const ConvShape& s, std::span<const T> in, std::span<const T> weights,
                  std::span<const T> bias, std::span<T> out);

/// Gradient w.r.t. the input; `grad_in` is overwritten.
template <typename T>
void conv_backward_input(const ConvShape& s, std::span<const T> grad_out,
                         std::span<const T> weights, std::span<T> grad_in);

/// Gradients w.r.t. weights and bias, accumulated into the outputs.
template <typename T>
void conv_backward_params(const ConvShape& s, std::span<const T> in,
                          std::span<const T> grad_out, std::span<T> grad_weights,
                          std::span<T> grad_bias);

/// Decoupled weight decay Adam. `step` is the 1-based update count.
void adamw_step(std::span<float> params, std::span<const float> grads, std::span<float> m,
                std::span<float> v, const AdamHyper& hyper, long step);

/// teacher <- alpha * teacher + (1 - alpha) * student, evaluated in double.
void ema_update(std::span<float> teacher, std::span<const float> student, double alpha);
void ema_update(std::span<double> teacher, std::span<const double> student, double alpha);

}  // namespace scalar

// --- runtime-dispatched float kernels ------------------------------------

enum class Backend { Scalar, Avx2 };

const char* to_string(Backend backend);

/// True when the CPU and the build both support the backend.
bool backend_available(Backend backend);

/// Best available backend, unless DISTILL_KERNELS=scalar is set.
Backend default_backend();

/// Process-wide selection used by the float entry points below.
Backend active_backend();
void set_active_backend(Backend backend);

void conv_forward(const ConvShape& s, std::span<const float> in, std::span<const float> weights,
                  std::span<const float> bias, std::span<float> out);
void conv_backward_input(const ConvShape& s, std::span<const float> grad_out,
                         std::span<const float> weights, std::span<float> grad_in);
void conv_backward_params(const ConvShape& s, std::span<const float> in,
                          std::span<const float> grad_out, std::span<float> grad_weights,
                          std::span<float> grad_bias);
void adamw_step(std::span<float> params, std::span<const float> grads, std::span<float> m,
                std::span<float> v, const AdamHyper& hyper, long step);
void ema_update(std::span<float> teacher, std::span<const float> student, double alpha);

// Double entry points always use the scalar reference.
inline void conv_forward(const ConvShape& s, std::span<const double> in,
                         std::span<const double> weights, std::span<const double> bias,
                         std::span<double> out) {
  scalar::conv_forward<double>(s, in, weights, bias, out);
}
inline void conv_backward_input(const ConvShape& s, std::span<const double> grad_out,
                                std::span<const double> weights, std::span<double> grad_in) {
  scalar::conv_backward_input<double>(s, grad_out, weights, grad_in);
}
inline void conv_backward_params(const ConvShape& s, std::span<const double> in,
                                 std::span<const double> grad_out,
                                 std::span<double> grad_weights, std::span<double> grad_bias) {
  scalar::conv_backward_params<double>(s, in, grad_out, grad_weights, grad_bias);
}

namespace avx2 {
// Defined only when the build enables the AVX2 translation unit; callers go
// through the dispatching entry points. Shapes the vector path cannot handle
// fall back to the scalar reference internally.
void conv_forward(const ConvShape& s, std::span<const float> in, std::span<const float> weights,
                  std::span<const float> bias, std::span<float> out);
void conv_backward_input(const ConvShape& s, std::span<const float> grad_out,
                         std::span<const float> weights, std::span<float> grad_in);
void conv_backward_params(const ConvShape& s, std::span<const float> in,
                          std::span<const float> grad_out, std::span<float> grad_weights,
                          std::span<float> grad_bias);
void adamw_step(std::span<float> params, std::span<const float> grads, std::span<float> m,
                std::span<float> v, const AdamHyper& hyper, long step);
void ema_update(std::span<float> teacher, std::span<const float> student, double alpha);
}  // namespace avx2

}  // namespace distill::kernels
