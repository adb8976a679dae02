#include <algorithm>
#include <cmath>

#include "distill/error.hpp"
#include "distill/kernels.hpp"

namespace distill::kernels::scalar {

namespace {

template <typename T>
void check_conv(const ConvShape& s, std::size_t in, std::size_t w, std::size_t out) {
  if (s.kernel % 2 != 1 || s.height <= 0 || s.width <= 0 || s.in_channels <= 0 ||
      s.out_channels <= 0) {
    throw ShapeError("invalid convolution shape");
  }
  if (in != s.input_size() || w != s.weight_size() || out != s.output_size()) {
    throw ShapeError("convolution buffer size mismatch");
  }
}

}  // namespace

template <typename T>
void conv_forward(const ConvShape& s, std::span<const T> in, std::span<const T> weights,
                  std::span<const T> bias, std::span<T> out) {
  check_conv<T>(s, in.size(), weights.size(), out.size());
  const int pad = s.kernel / 2;
  const int ci_n = s.in_channels;
  const int co_n = s.out_channels;
  for (int y = 0; y < s.height; ++y) {
    for (int x = 0; x < s.width; ++x) {
      T* o = out.data() + (static_cast<std::size_t>(y) * s.width + x) * co_n;
      for (int co = 0; co < co_n; ++co) o[co] = bias.empty() ? T{0} : bias[co];
      for (int ky = 0; ky < s.kernel; ++ky) {
        const int iy = y + ky - pad;
        if (iy < 0 || iy >= s.height) continue;
        for (int kx = 0; kx < s.kernel; ++kx) {
          const int ix = x + kx - pad;
          if (ix < 0 || ix >= s.width) continue;
          const T* ip = in.data() + (static_cast<std::size_t>(iy) * s.width + ix) * ci_n;
          const T* wp = weights.data() + static_cast<std::size_t>(ky * s.kernel + kx) * ci_n * co_n;
          for (int ci = 0; ci < ci_n; ++ci) {
            const T a = ip[ci];
            const T* wr = wp + static_cast<std::size_t>(ci) * co_n;
            for (int co = 0; co < co_n; ++co) o[co] += a * wr[co];
          }
        }
      }
    }
  }
}

template <typename T>
void conv_backward_input(const ConvShape& s, std::span<const T> grad_out,
                         std::span<const T> weights, std::span<T> grad_in) {
  check_conv<T>(s, grad_in.size(), weights.size(), grad_out.size());
  const int pad = s.kernel / 2;
  const int ci_n = s.in_channels;
  const int co_n = s.out_channels;
  std::fill(grad_in.begin(), grad_in.end(), T{0});
  for (int y = 0; y < s.height; ++y) {
    for (int x = 0; x < s.width; ++x) {
      const T* g = grad_out.data() + (static_cast<std::size_t>(y) * s.width + x) * co_n;
      for (int ky = 0; ky < s.kernel; ++ky) {
        const int iy = y + ky - pad;
        if (iy < 0 || iy >= s.height) continue;
        for (int kx = 0; kx < s.kernel; ++kx) {
          const int ix = x + kx - pad;
          if (ix < 0 || ix >= s.width) continue;
          T* gi = grad_in.data() + (static_cast<std::size_t>(iy) * s.width + ix) * ci_n;
          const T* wp = weights.data() + static_cast<std::size_t>(ky * s.kernel + kx) * ci_n * co_n;
          for (int ci = 0; ci < ci_n; ++ci) {
            const T* wr = wp + static_cast<std::size_t>(ci) * co_n;
            T acc{0};
            for (int co = 0; co < co_n; ++co) acc += wr[co] * g[co];
            gi[ci] += acc;
          }
        }
      }
    }
  }
}

template <typename T>
void conv_backward_params(const ConvShape& s, std::span<const T> in,
                          std::span<const T> grad_out, std::span<T> grad_weights,
                          std::span<T> grad_bias) {
  check_conv<T>(s, in.size(), grad_weights.size(), grad_out.size());
  const int pad = s.kernel / 2;
  const int ci_n = s.in_channels;
  const int co_n = s.out_channels;
  for (int y = 0; y < s.height; ++y) {
    for (int x = 0; x < s.width; ++x) {
      const T* g = grad_out.data() + (static_cast<std::size_t>(y) * s.width + x) * co_n;
      if (!grad_bias.empty()) {
        for (int co = 0; co < co_n; ++co) grad_bias[co] += g[co];
      }
      for (int ky = 0; ky < s.kernel; ++ky) {
        const int iy = y + ky - pad;
        if (iy < 0 || iy >= s.height) continue;
        for (int kx = 0; kx < s.kernel; ++kx) {
          const int ix = x + kx - pad;
          if (ix < 0 || ix >= s.width) continue;
          const T* ip = in.data() + (static_cast<std::size_t>(iy) * s.width + ix) * ci_n;
          T* gw = grad_weights.data() + static_cast<std::size_t>(ky * s.kernel + kx) * ci_n * co_n;
          for (int ci = 0; ci < ci_n; ++ci) {
            const T a = ip[ci];
            T* gr = gw + static_cast<std::size_t>(ci) * co_n;
            for (int co = 0; co < co_n; ++co) gr[co] += a * g[co];
          }
        }
      }
    }
  }
}

template void conv_forward<float>(const ConvShape&, std::span<const float>, std::span<const float>,
                                  std::span<const float>, std::span<float>);
template void conv_forward<double>(const ConvShape&, std::span<const double>,
                                   std::span<const double>, std::span<const double>,
                                   std::span<double>);
template void conv_backward_input<float>(const ConvShape&, std::span<const float>,
                                         std::span<const float>, std::span<float>);
template void conv_backward_input<double>(const ConvShape&, std::span<const double>,
                                          std::span<const double>, std::span<double>);
template void conv_backward_params<float>(const ConvShape&, std::span<const float>,
                                          std::span<const float>, std::span<float>,
                                          std::span<float>);
template void conv_backward_params<double>(const ConvShape&, std::span<const double>,
                                           std::span<const double>, std::span<double>,
                                           std::span<double>);

void adamw_step(std::span<float> params, std::span<const float> grads, std::span<float> m,
                std::span<float> v, const AdamHyper& h, long step) {
  const float bc1 = 1.0f - static_cast<float>(std::pow(static_cast<double>(h.beta1), step));
  const float bc2 = 1.0f - static_cast<float>(std::pow(static_cast<double>(h.beta2), step));
  const float step_size = h.learning_rate / bc1;
  const float inv_sqrt_bc2 = 1.0f / std::sqrt(bc2);
  const float decay = 1.0f - h.learning_rate * h.weight_decay;
  const float one_minus_b1 = 1.0f - h.beta1;
  const float one_minus_b2 = 1.0f - h.beta2;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const float g = grads[i];
    m[i] = h.beta1 * m[i] + one_minus_b1 * g;
    v[i] = h.beta2 * v[i] + one_minus_b2 * (g * g);
    const float denom = std::sqrt(v[i]) * inv_sqrt_bc2 + h.epsilon;
    params[i] = params[i] * decay - step_size * (m[i] / denom);
  }
}

void ema_update(std::span<float> teacher, std::span<const float> student, double alpha) {
  const double beta = 1.0 - alpha;
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    teacher[i] = static_cast<float>(alpha * static_cast<double>(teacher[i]) +
                                    beta * static_cast<double>(student[i]));
  }
}

void ema_update(std::span<double> teacher, std::span<const double> student, double alpha) {
  const double beta = 1.0 - alpha;
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    teacher[i] = alpha * teacher[i] + beta * student[i];
  }
}

}  // namespace distill::kernels::scalar
