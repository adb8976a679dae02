#include <cmath>
#include <vector>

#include "doctest.h"
#include "distill/kernels.hpp"
#include "distill/model.hpp"
#include "distill/rng.hpp"

using namespace distill;
using namespace distill::kernels;

namespace {

std::vector<float> random_vec(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<float> v(n);
  for (float& x : v) x = static_cast<float>(uniform(rng, lo, hi));
  return v;
}

double max_rel_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(static_cast<double>(a[i]) - b[i]);
    worst = std::max(worst, d / std::max(1.0, std::abs(static_cast<double>(a[i]))));
  }
  return worst;
}

struct BackendGuard {
  Backend saved = active_backend();
  ~BackendGuard() { set_active_backend(saved); }
};

}  // namespace

TEST_CASE("scalar convolution against a direct sum") {
  const ConvShape s{5, 4, 2, 3, 3};
  Rng rng = make_rng({1});
  const auto in = random_vec(s.input_size(), rng);
  const auto w = random_vec(s.weight_size(), rng);
  const auto b = random_vec(3, rng);
  std::vector<float> out(s.output_size());
  scalar::conv_forward<float>(s, in, w, b, out);
  for (int y = 0; y < 5; ++y) {
    for (int x = 0; x < 4; ++x) {
      for (int co = 0; co < 3; ++co) {
        double acc = b[co];
        for (int ky = 0; ky < 3; ++ky) {
          for (int kx = 0; kx < 3; ++kx) {
            const int iy = y + ky - 1, ix = x + kx - 1;
            if (iy < 0 || iy >= 5 || ix < 0 || ix >= 4) continue;
            for (int ci = 0; ci < 2; ++ci) {
              acc += static_cast<double>(in[(iy * 4 + ix) * 2 + ci]) * w[((ky * 3 + kx) * 2 + ci) * 3 + co];
            }
          }
        }
        CHECK(out[(y * 4 + x) * 3 + co] == doctest::Approx(acc).epsilon(1e-5));
      }
    }
  }
}

TEST_CASE("avx2 kernels agree with the scalar reference") {
  if (!backend_available(Backend::Avx2)) {
    MESSAGE("AVX2 unavailable; equivalence test skipped");
    return;
  }
  BackendGuard guard;
  Rng rng = make_rng({2});
  const int channel_options[] = {1, 3, 8, 16, 24, 32, 40};
  for (int trial = 0; trial < 40; ++trial) {
    const int k = trial % 4 == 0 ? 1 : 3;
    const ConvShape s{uniform_int(rng, 1, 17), uniform_int(rng, 1, 17),
                      channel_options[uniform_int(rng, 0, 6)], channel_options[uniform_int(rng, 0, 6)], k};
    const auto in = random_vec(s.input_size(), rng);
    const auto w = random_vec(s.weight_size(), rng);
    const auto b = random_vec(static_cast<std::size_t>(s.out_channels), rng);
    const auto gout = random_vec(s.output_size(), rng);
    const auto gw0 = random_vec(s.weight_size(), rng);
    const auto gb0 = random_vec(static_cast<std::size_t>(s.out_channels), rng);

    std::vector<float> out[2], gin[2], gw[2], gb[2];
    for (int be = 0; be < 2; ++be) {
      set_active_backend(be == 0 ? Backend::Scalar : Backend::Avx2);
      out[be].assign(s.output_size(), 0.0f);
      gin[be].assign(s.input_size(), 7.0f);
      gw[be] = gw0;
      gb[be] = gb0;
      conv_forward(s, in, w, b, out[be]);
      conv_backward_input(s, gout, w, gin[be]);
      conv_backward_params(s, in, gout, gw[be], gb[be]);
    }
    CAPTURE(s.height);
    CAPTURE(s.width);
    CAPTURE(s.in_channels);
    CAPTURE(s.out_channels);
    CHECK(max_rel_diff(out[0], out[1]) < 1e-5);
    CHECK(max_rel_diff(gin[0], gin[1]) < 1e-5);
    CHECK(max_rel_diff(gw[0], gw[1]) < 1e-4);
    CHECK(max_rel_diff(gb[0], gb[1]) < 1e-4);
  }
}

TEST_CASE("avx2 adam and ema are bit-identical to the scalar reference") {
  if (!backend_available(Backend::Avx2)) return;
  BackendGuard guard;
  Rng rng = make_rng({3});
  for (std::size_t n : {1u, 7u, 8u, 9u, 100u, 1027u}) {
    const auto p0 = random_vec(n, rng);
    std::vector<float> p[2] = {p0, p0}, m[2], v[2];
    std::vector<float> t[2] = {p0, p0};
    AdamHyper h;
    h.learning_rate = 1e-3f;
    h.weight_decay = 1e-4f;
    for (int be = 0; be < 2; ++be) {
      set_active_backend(be == 0 ? Backend::Scalar : Backend::Avx2);
      m[be].assign(n, 0.0f);
      v[be].assign(n, 0.0f);
      Rng g = make_rng({n, 4});
      for (long step = 1; step <= 5; ++step) {
        const auto grads = random_vec(n, g);
        adamw_step(p[be], grads, m[be], v[be], h, step);
        ema_update(t[be], p[be], 0.999);
      }
    }
    CHECK(p[0] == p[1]);
    CHECK(m[0] == m[1]);
    CHECK(v[0] == v[1]);
    CHECK(t[0] == t[1]);
  }
}

TEST_CASE("detector output agrees across backends") {
  if (!backend_available(Backend::Avx2)) return;
  BackendGuard guard;
  const ModelCheckpoint ck = init_parameters(ArchitectureSpec{}, 9);
  Rng rng = make_rng({9});
  Image img(32, 32, 0.0f);
  for (float& v : img.storage()) v = static_cast<float>(uniform01(rng));
  set_active_backend(Backend::Scalar);
  const ProbabilityMap a = forward(ck, img);
  set_active_backend(Backend::Avx2);
  const ProbabilityMap b = forward(ck, img);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.storage()[i] == doctest::Approx(b.storage()[i]).epsilon(1e-5));
}

TEST_CASE("scalar adam on a single parameter") {
  // One step from zero moments moves each parameter by lr * sign(g) (up to eps).
  std::vector<float> p{1.0f, -2.0f}, g{0.5f, -3.0f}, m(2, 0.0f), v(2, 0.0f);
  AdamHyper h;
  h.learning_rate = 0.01f;
  h.weight_decay = 0.0f;
  scalar::adamw_step(p, g, m, v, h, 1);
  CHECK(p[0] == doctest::Approx(0.99).epsilon(1e-6));
  CHECK(p[1] == doctest::Approx(-1.99).epsilon(1e-6));
}
