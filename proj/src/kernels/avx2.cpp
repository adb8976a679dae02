// AVX2/FMA float kernels. Compiled with -mavx2 -mfma; only reached through
// the dispatcher after a CPU feature check.

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "distill/error.hpp"
#include "distill/kernels.hpp"

namespace distill::kernels::avx2 {

namespace {

constexpr int kLanes = 8;

/// Zero-bordered copy of an HWC tensor; `pad` pixels on every side.
const float* padded(std::span<const float> in, int h, int w, int c, int pad,
                    std::vector<float>& buf) {
  if (pad == 0) return in.data();
  const int wp = w + 2 * pad;
  const int hp = h + 2 * pad;
  buf.assign(static_cast<std::size_t>(hp) * wp * c, 0.0f);
  for (int y = 0; y < h; ++y) {
    const float* src = in.data() + static_cast<std::size_t>(y) * w * c;
    float* dst = buf.data() + (static_cast<std::size_t>(y + pad) * wp + pad) * c;
    std::copy(src, src + static_cast<std::size_t>(w) * c, dst);
  }
  return buf.data();
}

template <int NV, int PX>
inline void forward_block(const float* pad_in, int wp, int cin, int k, const float* weights,
                          const float* bias, float* out, int cout) {
  __m256 acc[PX][NV];
  for (int p = 0; p < PX; ++p) {
    for (int v = 0; v < NV; ++v) {
      acc[p][v] = bias ? _mm256_loadu_ps(bias + v * kLanes) : _mm256_setzero_ps();
    }
  }
  for (int ky = 0; ky < k; ++ky) {
    for (int kx = 0; kx < k; ++kx) {
      const float* ip = pad_in + (static_cast<std::size_t>(ky) * wp + kx) * cin;
      const float* wt = weights + static_cast<std::size_t>(ky * k + kx) * cin * cout;
      for (int ci = 0; ci < cin; ++ci) {
        __m256 wv[NV];
        for (int v = 0; v < NV; ++v) {
          wv[v] = _mm256_loadu_ps(wt + static_cast<std::size_t>(ci) * cout + v * kLanes);
        }
        for (int p = 0; p < PX; ++p) {
          const __m256 a = _mm256_broadcast_ss(ip + static_cast<std::size_t>(p) * cin + ci);
          for (int v = 0; v < NV; ++v) acc[p][v] = _mm256_fmadd_ps(a, wv[v], acc[p][v]);
        }
      }
    }
  }
  for (int p = 0; p < PX; ++p) {
    for (int v = 0; v < NV; ++v) {
      _mm256_storeu_ps(out + static_cast<std::size_t>(p) * cout + v * kLanes, acc[p][v]);
    }
  }
}

template <int NV, int PX>
void forward_impl(const ConvShape& s, const float* pad_in, const float* weights,
                  const float* bias, float* out) {
  const int pad = s.kernel / 2;
  const int wp = s.width + 2 * pad;
  for (int y = 0; y < s.height; ++y) {
    int x = 0;
    for (; x + PX <= s.width; x += PX) {
      forward_block<NV, PX>(pad_in + (static_cast<std::size_t>(y) * wp + x) * s.in_channels, wp,
                            s.in_channels, s.kernel, weights, bias,
                            out + (static_cast<std::size_t>(y) * s.width + x) * s.out_channels,
                            s.out_channels);
    }
    for (; x < s.width; ++x) {
      forward_block<NV, 1>(pad_in + (static_cast<std::size_t>(y) * wp + x) * s.in_channels, wp,
                           s.in_channels, s.kernel, weights, bias,
                           out + (static_cast<std::size_t>(y) * s.width + x) * s.out_channels,
                           s.out_channels);
    }
  }
}

template <int NV, int CB>
void params_impl(const ConvShape& s, const float* pad_in, const float* grad_out,
                 float* grad_weights) {
  constexpr int PU = 2;
  const int pad = s.kernel / 2;
  const int wp = s.width + 2 * pad;
  const int cin = s.in_channels;
  const int cout = s.out_channels;
  for (int ky = 0; ky < s.kernel; ++ky) {
    for (int kx = 0; kx < s.kernel; ++kx) {
      float* gw_tap = grad_weights + static_cast<std::size_t>(ky * s.kernel + kx) * cin * cout;
      for (int c0 = 0; c0 < cin; c0 += CB) {
        __m256 acc[PU][CB][NV];
        for (int u = 0; u < PU; ++u)
          for (int c = 0; c < CB; ++c)
            for (int v = 0; v < NV; ++v) acc[u][c][v] = _mm256_setzero_ps();

        for (int y = 0; y < s.height; ++y) {
          const float* g_row = grad_out + static_cast<std::size_t>(y) * s.width * cout;
          const float* i_row = pad_in + (static_cast<std::size_t>(y + ky) * wp + kx) * cin + c0;
          int x = 0;
          for (; x + PU <= s.width; x += PU) {
            for (int u = 0; u < PU; ++u) {
              const float* g = g_row + static_cast<std::size_t>(x + u) * cout;
              const float* ip = i_row + static_cast<std::size_t>(x + u) * cin;
              __m256 gv[NV];
              for (int v = 0; v < NV; ++v) gv[v] = _mm256_loadu_ps(g + v * kLanes);
              for (int c = 0; c < CB; ++c) {
                const __m256 a = _mm256_broadcast_ss(ip + c);
                for (int v = 0; v < NV; ++v) acc[u][c][v] = _mm256_fmadd_ps(a, gv[v], acc[u][c][v]);
              }
            }
          }
          for (; x < s.width; ++x) {
            const float* g = g_row + static_cast<std::size_t>(x) * cout;
            const float* ip = i_row + static_cast<std::size_t>(x) * cin;
            __m256 gv[NV];
            for (int v = 0; v < NV; ++v) gv[v] = _mm256_loadu_ps(g + v * kLanes);
            for (int c = 0; c < CB; ++c) {
              const __m256 a = _mm256_broadcast_ss(ip + c);
              for (int v = 0; v < NV; ++v) acc[0][c][v] = _mm256_fmadd_ps(a, gv[v], acc[0][c][v]);
            }
          }
        }
        for (int c = 0; c < CB; ++c) {
          for (int v = 0; v < NV; ++v) {
            __m256 total = acc[0][c][v];
            for (int u = 1; u < PU; ++u) total = _mm256_add_ps(total, acc[u][c][v]);
            float* dst = gw_tap + static_cast<std::size_t>(c0 + c) * cout + v * kLanes;
            _mm256_storeu_ps(dst, _mm256_add_ps(_mm256_loadu_ps(dst), total));
          }
        }
      }
    }
  }
}

template <int NV>
void bias_impl(const ConvShape& s, const float* grad_out, float* grad_bias) {
  __m256 acc[NV];
  for (int v = 0; v < NV; ++v) acc[v] = _mm256_setzero_ps();
  const std::size_t pixels = static_cast<std::size_t>(s.height) * s.width;
  for (std::size_t p = 0; p < pixels; ++p) {
    const float* g = grad_out + p * s.out_channels;
    for (int v = 0; v < NV; ++v) acc[v] = _mm256_add_ps(acc[v], _mm256_loadu_ps(g + v * kLanes));
  }
  for (int v = 0; v < NV; ++v) {
    float* dst = grad_bias + v * kLanes;
    _mm256_storeu_ps(dst, _mm256_add_ps(_mm256_loadu_ps(dst), acc[v]));
  }
}

void check(const ConvShape& s, std::size_t in, std::size_t w, std::size_t out) {
  if (s.kernel % 2 != 1 || s.height <= 0 || s.width <= 0 || s.in_channels <= 0 ||
      s.out_channels <= 0) {
    throw ShapeError("invalid convolution shape");
  }
  if (in != s.input_size() || w != s.weight_size() || out != s.output_size()) {
    throw ShapeError("convolution buffer size mismatch");
  }
}

int vector_count(int channels) {
  return channels % kLanes == 0 ? channels / kLanes : 0;
}

}  // namespace

void conv_forward(const ConvShape& s, std::span<const float> in, std::span<const float> weights,
                  std::span<const float> bias, std::span<float> out) {
  check(s, in.size(), weights.size(), out.size());
  const int nv = vector_count(s.out_channels);
  if (nv < 1 || nv > 4) {
    scalar::conv_forward<float>(s, in, weights, bias, out);
    return;
  }
  thread_local std::vector<float> buf;
  const float* pad_in = padded(in, s.height, s.width, s.in_channels, s.kernel / 2, buf);
  const float* b = bias.empty() ? nullptr : bias.data();
  switch (nv) {
    case 1:
      forward_impl<1, 8>(s, pad_in, weights.data(), b, out.data());
      break;
    case 2:
      forward_impl<2, 4>(s, pad_in, weights.data(), b, out.data());
      break;
    case 3:
      forward_impl<3, 3>(s, pad_in, weights.data(), b, out.data());
      break;
    default:
      forward_impl<4, 2>(s, pad_in, weights.data(), b, out.data());
      break;
  }
}

void conv_backward_input(const ConvShape& s, std::span<const float> grad_out,
                         std::span<const float> weights, std::span<float> grad_in) {
  check(s, grad_in.size(), weights.size(), grad_out.size());
  const int nv = vector_count(s.in_channels);
  if (nv < 1 || nv > 4) {
    scalar::conv_backward_input<float>(s, grad_out, weights, grad_in);
    return;
  }
  // The input gradient is a forward convolution of grad_out with the
  // spatially flipped, channel-transposed kernel.
  const int k = s.kernel;
  const int cin = s.in_channels;
  const int cout = s.out_channels;
  thread_local std::vector<float> flipped;
  flipped.resize(weights.size());
  for (int ky = 0; ky < k; ++ky) {
    for (int kx = 0; kx < k; ++kx) {
      const float* src = weights.data() + static_cast<std::size_t>(ky * k + kx) * cin * cout;
      float* dst = flipped.data() +
                   static_cast<std::size_t>((k - 1 - ky) * k + (k - 1 - kx)) * cout * cin;
      for (int ci = 0; ci < cin; ++ci) {
        for (int co = 0; co < cout; ++co) {
          dst[static_cast<std::size_t>(co) * cin + ci] = src[static_cast<std::size_t>(ci) * cout + co];
        }
      }
    }
  }
  const ConvShape t{s.height, s.width, cout, cin, k};
  avx2::conv_forward(t, grad_out, std::span<const float>(flipped), std::span<const float>{}, grad_in);
}

void conv_backward_params(const ConvShape& s, std::span<const float> in,
                          std::span<const float> grad_out, std::span<float> grad_weights,
                          std::span<float> grad_bias) {
  check(s, in.size(), grad_weights.size(), grad_out.size());
  const int nv = vector_count(s.out_channels);
  if (nv < 1 || nv > 4) {
    scalar::conv_backward_params<float>(s, in, grad_out, grad_weights, grad_bias);
    return;
  }
  thread_local std::vector<float> buf;
  const float* pad_in = padded(in, s.height, s.width, s.in_channels, s.kernel / 2, buf);
  float* gw = grad_weights.data();
  const float* g = grad_out.data();
  const int cin = s.in_channels;
  switch (nv) {
    case 1:
      if (cin % 4 == 0) {
        params_impl<1, 4>(s, pad_in, g, gw);
      } else {
        params_impl<1, 1>(s, pad_in, g, gw);
      }
      break;
    case 2:
      if (cin % 2 == 0) {
        params_impl<2, 2>(s, pad_in, g, gw);
      } else {
        params_impl<2, 1>(s, pad_in, g, gw);
      }
      break;
    case 3:
      params_impl<3, 1>(s, pad_in, g, gw);
      break;
    default:
      params_impl<4, 1>(s, pad_in, g, gw);
      break;
  }
  if (!grad_bias.empty()) {
    switch (nv) {
      case 1:
        bias_impl<1>(s, g, grad_bias.data());
        break;
      case 2:
        bias_impl<2>(s, g, grad_bias.data());
        break;
      case 3:
        bias_impl<3>(s, g, grad_bias.data());
        break;
      default:
        bias_impl<4>(s, g, grad_bias.data());
        break;
    }
  }
}

void adamw_step(std::span<float> params, std::span<const float> grads, std::span<float> m,
                std::span<float> v, const AdamHyper& h, long step) {
  // Same operation order as the scalar reference, without FMA, so both
  // produce identical bits.
  const float bc1 = 1.0f - static_cast<float>(std::pow(static_cast<double>(h.beta1), step));
  const float bc2 = 1.0f - static_cast<float>(std::pow(static_cast<double>(h.beta2), step));
  const float step_size = h.learning_rate / bc1;
  const float inv_sqrt_bc2 = 1.0f / std::sqrt(bc2);
  const float decay = 1.0f - h.learning_rate * h.weight_decay;
  const float one_minus_b1 = 1.0f - h.beta1;
  const float one_minus_b2 = 1.0f - h.beta2;

  const __m256 vb1 = _mm256_set1_ps(h.beta1);
  const __m256 vb2 = _mm256_set1_ps(h.beta2);
  const __m256 vomb1 = _mm256_set1_ps(one_minus_b1);
  const __m256 vomb2 = _mm256_set1_ps(one_minus_b2);
  const __m256 vstep = _mm256_set1_ps(step_size);
  const __m256 vinv = _mm256_set1_ps(inv_sqrt_bc2);
  const __m256 veps = _mm256_set1_ps(h.epsilon);
  const __m256 vdecay = _mm256_set1_ps(decay);

  const std::size_t n = params.size();
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    const __m256 g = _mm256_loadu_ps(grads.data() + i);
    __m256 mi = _mm256_loadu_ps(m.data() + i);
    __m256 vi = _mm256_loadu_ps(v.data() + i);
    mi = _mm256_add_ps(_mm256_mul_ps(vb1, mi), _mm256_mul_ps(vomb1, g));
    vi = _mm256_add_ps(_mm256_mul_ps(vb2, vi), _mm256_mul_ps(vomb2, _mm256_mul_ps(g, g)));
    const __m256 denom = _mm256_add_ps(_mm256_mul_ps(_mm256_sqrt_ps(vi), vinv), veps);
    const __m256 p = _mm256_loadu_ps(params.data() + i);
    const __m256 upd = _mm256_mul_ps(vstep, _mm256_div_ps(mi, denom));
    _mm256_storeu_ps(params.data() + i, _mm256_sub_ps(_mm256_mul_ps(p, vdecay), upd));
    _mm256_storeu_ps(m.data() + i, mi);
    _mm256_storeu_ps(v.data() + i, vi);
  }
  for (; i < n; ++i) {
    const float g = grads[i];
    m[i] = h.beta1 * m[i] + one_minus_b1 * g;
    v[i] = h.beta2 * v[i] + one_minus_b2 * (g * g);
    const float denom = std::sqrt(v[i]) * inv_sqrt_bc2 + h.epsilon;
    params[i] = params[i] * decay - step_size * (m[i] / denom);
  }
}

void ema_update(std::span<float> teacher, std::span<const float> student, double alpha) {
  const double beta = 1.0 - alpha;
  const __m256d va = _mm256_set1_pd(alpha);
  const __m256d vb = _mm256_set1_pd(beta);
  const std::size_t n = teacher.size();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d t = _mm256_cvtps_pd(_mm_loadu_ps(teacher.data() + i));
    const __m256d s = _mm256_cvtps_pd(_mm_loadu_ps(student.data() + i));
    const __m256d r = _mm256_add_pd(_mm256_mul_pd(va, t), _mm256_mul_pd(vb, s));
    _mm_storeu_ps(teacher.data() + i, _mm256_cvtpd_ps(r));
  }
  for (; i < n; ++i) {
    teacher[i] = static_cast<float>(alpha * static_cast<double>(teacher[i]) +
                                    beta * static_cast<double>(student[i]));
  }
}

}  // namespace distill::kernels::avx2
