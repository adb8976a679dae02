#include "distill/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "distill/error.hpp"
#include "distill/kernels.hpp"
#include "distill/rng.hpp"

namespace distill {

namespace {

constexpr double kLeakySlope = 0.01;
constexpr double kInitialPrior = 0.1;
constexpr const char* kCheckpointMagic = "DISTILL-CHECKPOINT-1";

template <typename T>
void activate(std::vector<T>& v, Nonlinearity nl) {
  const T slope = nl == Nonlinearity::LeakyRelu ? static_cast<T>(kLeakySlope) : T{0};
  for (T& x : v) {
    if (x < T{0}) x *= slope;
  }
}

template <typename T>
void activate_backward(std::span<T> grad, std::span<const T> out, Nonlinearity nl) {
  const T slope = nl == Nonlinearity::LeakyRelu ? static_cast<T>(kLeakySlope) : T{0};
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(out[i] > T{0})) grad[i] *= slope;
  }
}

template <typename T>
void avgpool2(std::span<const T> in, int h, int w, int c, std::vector<T>& out) {
  const int oh = h / 2;
  const int ow = w / 2;
  out.assign(static_cast<std::size_t>(oh) * ow * c, T{0});
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      T* o = out.data() + (static_cast<std::size_t>(y) * ow + x) * c;
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          const T* i = in.data() + (static_cast<std::size_t>(2 * y + dy) * w + 2 * x + dx) * c;
          for (int k = 0; k < c; ++k) o[k] += i[k];
        }
      }
      for (int k = 0; k < c; ++k) o[k] *= T(0.25);
    }
  }
}

/// grad_in (h x w) += pool^T(grad_out (h/2 x w/2)).
template <typename T>
void avgpool2_backward(std::span<const T> grad_out, int h, int w, int c, std::span<T> grad_in) {
  const int ow = w / 2;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const T* g = grad_out.data() + (static_cast<std::size_t>(y / 2) * ow + x / 2) * c;
      T* gi = grad_in.data() + (static_cast<std::size_t>(y) * w + x) * c;
      for (int k = 0; k < c; ++k) gi[k] += T(0.25) * g[k];
    }
  }
}

/// big (h x w) += nearest-upsampled small (h/2 x w/2).
template <typename T>
void upsample2_add(std::span<const T> small, int h, int w, int c, std::span<T> big) {
  const int sw = w / 2;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const T* s = small.data() + (static_cast<std::size_t>(y / 2) * sw + x / 2) * c;
      T* b = big.data() + (static_cast<std::size_t>(y) * w + x) * c;
      for (int k = 0; k < c; ++k) b[k] += s[k];
    }
  }
}

/// grad_small = sum of grad_big over each 2x2 block.
template <typename T>
void upsample2_backward(std::span<const T> grad_big, int h, int w, int c,
                        std::vector<T>& grad_small) {
  const int sw = w / 2;
  grad_small.assign(static_cast<std::size_t>(h / 2) * sw * c, T{0});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const T* g = grad_big.data() + (static_cast<std::size_t>(y) * w + x) * c;
      T* s = grad_small.data() + (static_cast<std::size_t>(y / 2) * sw + x / 2) * c;
      for (int k = 0; k < c; ++k) s[k] += g[k];
    }
  }
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  parts.push_back(cur);
  return parts;
}

}  // namespace

void ArchitectureSpec::validate() const {
  if (widths.size() < 1 || widths.size() > 5) {
    throw ConfigError("architecture needs between 1 and 5 levels");
  }
  for (int w : widths) {
    if (w <= 0) throw ConfigError("architecture widths must be positive");
  }
  if (fpn_width <= 0) throw ConfigError("architecture fpn_width must be positive");
  if (kernel <= 0 || kernel % 2 == 0) throw ConfigError("architecture kernel must be odd");
}

std::size_t ArchitectureSpec::parameter_count() const {
  validate();
  const std::size_t kk = static_cast<std::size_t>(kernel) * kernel;
  std::size_t n = 0;
  int in = 1;
  for (int w : widths) {
    n += kk * in * w + w;
    n += kk * w * w + w;
    n += static_cast<std::size_t>(w) * fpn_width + fpn_width;
    in = w;
  }
  n += kk * fpn_width * fpn_width + fpn_width;
  n += static_cast<std::size_t>(fpn_width) + 1;
  return n;
}

std::string ArchitectureSpec::id() const {
  std::ostringstream os;
  os << "minifpn-w";
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (i) os << '.';
    os << widths[i];
  }
  os << "-f" << fpn_width << "-k" << kernel << '-'
     << (nonlinearity == Nonlinearity::Relu ? "relu" : "leaky");
  return os.str();
}

ArchitectureSpec ArchitectureSpec::from_id(const std::string& id) {
  const auto parts = split(id, '-');
  auto fail = [&]() -> ArchitectureSpec {
    throw ConfigError("unrecognized architecture id '" + id + "'");
  };
  if (parts.size() != 5 || parts[0] != "minifpn" || parts[1].empty() || parts[1][0] != 'w' ||
      parts[2].empty() || parts[2][0] != 'f' || parts[3].empty() || parts[3][0] != 'k') {
    return fail();
  }
  ArchitectureSpec a;
  a.widths.clear();
  try {
    for (const auto& w : split(parts[1].substr(1), '.')) a.widths.push_back(std::stoi(w));
    a.fpn_width = std::stoi(parts[2].substr(1));
    a.kernel = std::stoi(parts[3].substr(1));
  } catch (const std::exception&) {
    return fail();
  }
  if (parts[4] == "relu") {
    a.nonlinearity = Nonlinearity::Relu;
  } else if (parts[4] == "leaky") {
    a.nonlinearity = Nonlinearity::LeakyRelu;
  } else {
    return fail();
  }
  a.validate();
  return a;
}

void ModelCheckpoint::validate() const {
  const ArchitectureSpec arch = ArchitectureSpec::from_id(architecture_id);
  if (arch.parameter_count() != parameters.size()) {
    throw ConfigError("checkpoint has " + std::to_string(parameters.size()) +
                      " parameters but architecture " + architecture_id + " declares " +
                      std::to_string(arch.parameter_count()));
  }
}

template <typename T>
Detector<T>::Detector(ArchitectureSpec arch) : arch_(std::move(arch)) {
  arch_.validate();
  std::size_t offset = 0;
  auto add = [&](int in, int out, int k) {
    ConvLayer l;
    l.in_channels = in;
    l.out_channels = out;
    l.kernel = k;
    l.weight_offset = offset;
    offset += static_cast<std::size_t>(k) * k * in * out;
    l.bias_offset = offset;
    offset += static_cast<std::size_t>(out);
    return l;
  };
  int in = 1;
  for (int w : arch_.widths) {
    conv_a_.push_back(add(in, w, arch_.kernel));
    conv_b_.push_back(add(w, w, arch_.kernel));
    lateral_.push_back(add(w, arch_.fpn_width, 1));
    in = w;
  }
  fusion_ = add(arch_.fpn_width, arch_.fpn_width, arch_.kernel);
  head_ = add(arch_.fpn_width, 1, 1);
  param_count_ = offset;
  levels_.resize(arch_.widths.size());
}

template <typename T>
void Detector<T>::forward(std::span<const T> params, const Image& image) {
  if (params.size() != param_count_) {
    throw ShapeError("parameter vector has " + std::to_string(params.size()) + " entries, expected " +
                     std::to_string(param_count_));
  }
  const int factor = 1 << arch_.scales();
  if (image.height() % factor != 0 || image.width() % factor != 0) {
    throw ShapeError("image " + std::to_string(image.height()) + "x" + std::to_string(image.width()) +
                     " is not divisible by " + std::to_string(factor));
  }
  height_ = image.height();
  width_ = image.width();
  const int n_levels = static_cast<int>(levels_.size());

  auto conv = [&](const ConvLayer& l, int h, int w, std::span<const T> in, std::vector<T>& out) {
    const kernels::ConvShape s{h, w, l.in_channels, l.out_channels, l.kernel};
    out.resize(s.output_size());
    kernels::conv_forward(s, in, params.subspan(l.weight_offset, s.weight_size()),
                          params.subspan(l.bias_offset, static_cast<std::size_t>(l.out_channels)),
                          std::span<T>(out));
  };

  for (int li = 0; li < n_levels; ++li) {
    Level& lv = levels_[static_cast<std::size_t>(li)];
    if (li == 0) {
      lv.height = height_;
      lv.width = width_;
      lv.input.assign(image.storage().begin(), image.storage().end());
    } else {
      const Level& prev = levels_[static_cast<std::size_t>(li - 1)];
      lv.height = prev.height / 2;
      lv.width = prev.width / 2;
      avgpool2<T>(prev.features, prev.height, prev.width,
                  arch_.widths[static_cast<std::size_t>(li - 1)], lv.input);
    }
    conv(conv_a_[static_cast<std::size_t>(li)], lv.height, lv.width, lv.input, lv.hidden);
    activate(lv.hidden, arch_.nonlinearity);
    conv(conv_b_[static_cast<std::size_t>(li)], lv.height, lv.width, lv.hidden, lv.features);
    activate(lv.features, arch_.nonlinearity);
  }

  for (int li = n_levels - 1; li >= 0; --li) {
    Level& lv = levels_[static_cast<std::size_t>(li)];
    conv(lateral_[static_cast<std::size_t>(li)], lv.height, lv.width, lv.features, lv.topdown);
    if (li + 1 < n_levels) {
      const Level& up = levels_[static_cast<std::size_t>(li + 1)];
      upsample2_add<T>(up.topdown, lv.height, lv.width, arch_.fpn_width, lv.topdown);
    }
  }

  conv(fusion_, height_, width_, levels_[0].topdown, fused_);
  activate(fused_, arch_.nonlinearity);
  conv(head_, height_, width_, fused_, raw_logits_);

  const T limit = static_cast<T>(kLogitLimit);
  logits_.resize(raw_logits_.size());
  probs_.resize(raw_logits_.size());
  for (std::size_t i = 0; i < raw_logits_.size(); ++i) {
    const T z = std::clamp(raw_logits_[i], -limit, limit);
    logits_[i] = z;
    probs_[i] = z >= T{0} ? T{1} / (T{1} + std::exp(-z)) : std::exp(z) / (T{1} + std::exp(z));
  }
}

template <typename T>
void Detector<T>::backward(std::span<const T> params, std::span<const T> grad_logits,
                           std::span<T> grad_params) {
  if (grad_logits.size() != raw_logits_.size() || grad_params.size() != param_count_) {
    throw ShapeError("backward buffer size mismatch");
  }
  const int n_levels = static_cast<int>(levels_.size());
  const T limit = static_cast<T>(kLogitLimit);

  auto conv_back = [&](const ConvLayer& l, int h, int w, std::span<const T> in,
                       std::span<const T> grad_out, std::vector<T>* grad_in) {
    const kernels::ConvShape s{h, w, l.in_channels, l.out_channels, l.kernel};
    kernels::conv_backward_params(
        s, in, grad_out, grad_params.subspan(l.weight_offset, s.weight_size()),
        grad_params.subspan(l.bias_offset, static_cast<std::size_t>(l.out_channels)));
    if (grad_in) {
      grad_in->resize(s.input_size());
      kernels::conv_backward_input(s, grad_out, params.subspan(l.weight_offset, s.weight_size()),
                                   std::span<T>(*grad_in));
    }
  };

  // Head: gradient is blocked where the clamp was active.
  std::vector<T>& g_head = scratch_a_;
  g_head.assign(grad_logits.begin(), grad_logits.end());
  for (std::size_t i = 0; i < g_head.size(); ++i) {
    if (raw_logits_[i] < -limit || raw_logits_[i] > limit) g_head[i] = T{0};
  }
  std::vector<T>& g_fused = scratch_b_;
  conv_back(head_, height_, width_, fused_, g_head, &g_fused);
  activate_backward<T>(g_fused, fused_, arch_.nonlinearity);

  Level& top0 = levels_[0];
  conv_back(fusion_, height_, width_, top0.topdown, g_fused, &top0.grad_topdown);

  // Top-down path: lateral gradients into the features, upsampling
  // gradients into the next coarser level.
  for (int li = 0; li < n_levels; ++li) {
    Level& lv = levels_[static_cast<std::size_t>(li)];
    conv_back(lateral_[static_cast<std::size_t>(li)], lv.height, lv.width, lv.features,
              lv.grad_topdown, &lv.grad_features);
    if (li + 1 < n_levels) {
      upsample2_backward<T>(lv.grad_topdown, lv.height, lv.width, arch_.fpn_width,
                            levels_[static_cast<std::size_t>(li + 1)].grad_topdown);
    }
  }

  // Bottom-up path, coarsest level first.
  std::vector<T> g_hidden;
  std::vector<T> g_input;
  for (int li = n_levels - 1; li >= 0; --li) {
    Level& lv = levels_[static_cast<std::size_t>(li)];
    activate_backward<T>(lv.grad_features, lv.features, arch_.nonlinearity);
    conv_back(conv_b_[static_cast<std::size_t>(li)], lv.height, lv.width, lv.hidden,
              lv.grad_features, &g_hidden);
    activate_backward<T>(g_hidden, lv.hidden, arch_.nonlinearity);
    conv_back(conv_a_[static_cast<std::size_t>(li)], lv.height, lv.width, lv.input, g_hidden,
              li > 0 ? &g_input : nullptr);
    if (li > 0) {
      Level& prev = levels_[static_cast<std::size_t>(li - 1)];
      avgpool2_backward<T>(g_input, prev.height, prev.width,
                           arch_.widths[static_cast<std::size_t>(li - 1)], prev.grad_features);
    }
  }
}

template class Detector<float>;
template class Detector<double>;

template <typename T>
LossAndGradient<T> forward_with_gradients(const ArchitectureSpec& arch, std::span<const T> params,
                                          const Image& image, const LossTail<T>& loss_tail) {
  Detector<T> det(arch);
  det.forward(params, image);
  std::vector<T> grad_logits(det.probabilities().size());
  LossAndGradient<T> out;
  out.loss = loss_tail.evaluate(det.probabilities(), grad_logits);
  if (!std::isfinite(out.loss)) {
    throw NumericalError("non-finite loss " + std::to_string(out.loss) + " on a " +
                         std::to_string(image.height()) + "x" + std::to_string(image.width()) +
                         " image");
  }
  out.gradient.assign(det.parameter_count(), T{0});
  det.backward(params, grad_logits, out.gradient);
  return out;
}

template LossAndGradient<float> forward_with_gradients<float>(const ArchitectureSpec&,
                                                              std::span<const float>, const Image&,
                                                              const LossTail<float>&);
template LossAndGradient<double> forward_with_gradients<double>(const ArchitectureSpec&,
                                                                std::span<const double>,
                                                                const Image&,
                                                                const LossTail<double>&);

LossAndGradient<float> forward_with_gradients(const ModelCheckpoint& checkpoint,
                                              const Image& image,
                                              const LossTail<float>& loss_tail) {
  return forward_with_gradients<float>(ArchitectureSpec::from_id(checkpoint.architecture_id),
                                       checkpoint.parameters, image, loss_tail);
}

ModelCheckpoint init_parameters(const ArchitectureSpec& arch, std::uint64_t seed) {
  arch.validate();
  ModelCheckpoint ck;
  ck.architecture_id = arch.id();
  ck.parameters.assign(arch.parameter_count(), 0.0f);
  Rng rng = make_rng({seed, 0x696e6974ULL});

  std::size_t offset = 0;
  auto fill = [&](int in, int out, int k, double scale, double bias) {
    const std::size_t nw = static_cast<std::size_t>(k) * k * in * out;
    const double stddev = scale * std::sqrt(2.0 / (static_cast<double>(k) * k * in));
    for (std::size_t i = 0; i < nw; ++i) {
      ck.parameters[offset + i] = static_cast<float>(normal(rng, 0.0, stddev));
    }
    offset += nw;
    for (int i = 0; i < out; ++i) ck.parameters[offset + static_cast<std::size_t>(i)] = static_cast<float>(bias);
    offset += static_cast<std::size_t>(out);
  };
  int in = 1;
  for (int w : arch.widths) {
    fill(in, w, arch.kernel, 1.0, 0.0);
    fill(w, w, arch.kernel, 1.0, 0.0);
    fill(w, arch.fpn_width, 1, 1.0, 0.0);
    in = w;
  }
  fill(arch.fpn_width, arch.fpn_width, arch.kernel, 1.0, 0.0);
  fill(arch.fpn_width, 1, 1, 0.05, std::log(kInitialPrior / (1.0 - kInitialPrior)));
  return ck;
}

ProbabilityMap forward(const ModelCheckpoint& checkpoint, const Image& image) {
  Predictor predict(checkpoint);
  return predict(image);
}

Predictor::Predictor(const ModelCheckpoint& checkpoint)
    : checkpoint_(&checkpoint), detector_(ArchitectureSpec::from_id(checkpoint.architecture_id)) {
  checkpoint.validate();
}

ProbabilityMap Predictor::operator()(const Image& image) {
  detector_.forward(checkpoint_->parameters, image);
  const auto p = detector_.probabilities();
  return ProbabilityMap(image.height(), image.width(), std::vector<float>(p.begin(), p.end()));
}

void write_f32_le(std::ostream& os, std::span<const float> values) {
  std::vector<unsigned char> bytes(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) bytes[i * 4 + static_cast<std::size_t>(b)] = static_cast<unsigned char>(bits >> (8 * b));
  }
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void read_f32_le(std::istream& is, std::span<float> values) {
  std::vector<unsigned char> bytes(values.size() * 4);
  is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!is) throw std::runtime_error("truncated float block");
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[i * 4 + static_cast<std::size_t>(b)]) << (8 * b);
    values[i] = std::bit_cast<float>(bits);
  }
}

void save_checkpoint(const ModelCheckpoint& checkpoint, const std::filesystem::path& path) {
  checkpoint.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  os << kCheckpointMagic << "\n"
     << "architecture_id " << checkpoint.architecture_id << "\n"
     << "parameter_count " << checkpoint.parameters.size() << "\n"
     << "step_index " << checkpoint.step_index << "\n"
     << "end\n";
  write_f32_le(os, checkpoint.parameters);
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read checkpoint " + path.string());
  std::string line;
  std::getline(is, line);
  if (line != kCheckpointMagic) throw std::runtime_error("not a checkpoint file: " + path.string());
  ModelCheckpoint ck;
  std::size_t count = 0;
  while (std::getline(is, line) && line != "end") {
    std::istringstream fields(line);
    std::string key;
    fields >> key;
    if (key == "architecture_id") {
      fields >> ck.architecture_id;
    } else if (key == "parameter_count") {
      fields >> count;
    } else if (key == "step_index") {
      fields >> ck.step_index;
    }
  }
  if (line != "end") throw std::runtime_error("truncated checkpoint header in " + path.string());
  ck.parameters.resize(count);
  read_f32_le(is, ck.parameters);
  ck.validate();
  return ck;
}

}  // namespace distill
