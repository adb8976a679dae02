#include <atomic>
#include <cstdlib>
#include <string_view>

#include "distill/kernels.hpp"

namespace distill::kernels {

namespace {

bool cpu_has_avx2() {
#if defined(DISTILL_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

std::atomic<Backend>& active() {
  static std::atomic<Backend> backend{default_backend()};
  return backend;
}

}  // namespace

const char* to_string(Backend backend) {
  switch (backend) {
    case Backend::Scalar:
      return "scalar";
    case Backend::Avx2:
      return "avx2";
  }
  return "unknown";
}

bool backend_available(Backend backend) {
  switch (backend) {
    case Backend::Scalar:
      return true;
    case Backend::Avx2:
      return cpu_has_avx2();
  }
  return false;
}

Backend default_backend() {
  if (const char* env = std::getenv("DISTILL_KERNELS"); env && std::string_view(env) == "scalar") {
    return Backend::Scalar;
  }
  return backend_available(Backend::Avx2) ? Backend::Avx2 : Backend::Scalar;
}

Backend active_backend() { return active().load(std::memory_order_relaxed); }

void set_active_backend(Backend backend) {
  active().store(backend_available(backend) ? backend : Backend::Scalar,
                 std::memory_order_relaxed);
}

#if defined(DISTILL_HAVE_AVX2)
#define DISTILL_DISPATCH(fn, ...)                  \
  do {                                            \
    if (active_backend() == Backend::Avx2) {      \
      avx2::fn(__VA_ARGS__);                      \
    } else {                                      \
      scalar::fn(__VA_ARGS__);                    \
    }                                             \
  } while (0)
#else
#define DISTILL_DISPATCH(fn, ...) scalar::fn(__VA_ARGS__)
#endif

void conv_forward(const ConvShape& s, std::span<const float> in, std::span<const float> weights,
                  std::span<const float> bias, std::span<float> out) {
  DISTILL_DISPATCH(conv_forward, s, in, weights, bias, out);
}

void conv_backward_input(const ConvShape& s, std::span<const float> grad_out,
                         std::span<const float> weights, std::span<float> grad_in) {
  DISTILL_DISPATCH(conv_backward_input, s, grad_out, weights, grad_in);
}

void conv_backward_params(const ConvShape& s, std::span<const float> in,
                          std::span<const float> grad_out, std::span<float> grad_weights,
                          std::span<float> grad_bias) {
  DISTILL_DISPATCH(conv_backward_params, s, in, grad_out, grad_weights, grad_bias);
}

void adamw_step(std::span<float> params, std::span<const float> grads, std::span<float> m,
                std::span<float> v, const AdamHyper& hyper, long step) {
  DISTILL_DISPATCH(adamw_step, params, grads, m, v, hyper, step);
}

void ema_update(std::span<float> teacher, std::span<const float> student, double alpha) {
  DISTILL_DISPATCH(ema_update, teacher, student, alpha);
}

#undef DISTILL_DISPATCH

}  // namespace distill::kernels
