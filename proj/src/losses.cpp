#include "distill/losses.hpp"

#include <cmath>

namespace distill {

namespace {

double clamp_eps(double p, double eps) { return p < eps ? eps : (p > 1.0 - eps ? 1.0 - eps : p); }

double bce_pixel(double p, double y, double eps) {
  const double q = clamp_eps(p, eps);
  return -(y * std::log(q) + (1.0 - y) * std::log1p(-q));
}

double kl_pixel(double target, double p, double eps) {
  const double t = clamp_eps(target, eps);
  const double q = clamp_eps(p, eps);
  return t * std::log(t / q) + (1.0 - t) * std::log((1.0 - t) / (1.0 - q));
}

bool clamp_active(double p, double eps) { return p < eps || p > 1.0 - eps; }

}  // namespace

double bce_loss(const ProbabilityMap& prediction, const GtMask& target, double eps) {
  require_same_shape(prediction, target, "bce_loss");
  double sum = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    sum += bce_pixel(prediction.storage()[i], target.storage()[i], eps);
  }
  return sum / static_cast<double>(prediction.size());
}

double kl_loss(const ProbabilityMap& sharpened_pseudo_gt, const ProbabilityMap& student_prediction,
               double eps) {
  require_same_shape(sharpened_pseudo_gt, student_prediction, "kl_loss");
  double sum = 0.0;
  for (std::size_t i = 0; i < student_prediction.size(); ++i) {
    sum += kl_pixel(sharpened_pseudo_gt.storage()[i], student_prediction.storage()[i], eps);
  }
  return std::max(0.0, sum / static_cast<double>(student_prediction.size()));
}

template <typename T>
double BceHead<T>::evaluate(std::span<const T> probabilities, std::span<T> grad_logits) const {
  const auto& y = target_->storage();
  if (probabilities.size() != y.size() || grad_logits.size() != y.size()) {
    throw ShapeError("bce head: prediction and target sizes differ");
  }
  const double inv_n = 1.0 / static_cast<double>(y.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double p = static_cast<double>(probabilities[i]);
    sum += bce_pixel(p, y[i], eps_);
    grad_logits[i] = clamp_active(p, eps_) ? T{0} : static_cast<T>((p - y[i]) * inv_n);
  }
  return sum * inv_n;
}

template <typename T>
double KlHead<T>::evaluate(std::span<const T> probabilities, std::span<T> grad_logits) const {
  const auto& t = target_->storage();
  if (probabilities.size() != t.size() || grad_logits.size() != t.size()) {
    throw ShapeError("kl head: prediction and pseudo-GT sizes differ");
  }
  const double inv_n = 1.0 / static_cast<double>(t.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double p = static_cast<double>(probabilities[i]);
    const double target = clamp_eps(t[i], eps_);
    sum += kl_pixel(t[i], p, eps_);
    grad_logits[i] = clamp_active(p, eps_) ? T{0} : static_cast<T>((p - target) * inv_n);
  }
  return sum * inv_n;
}

template class BceHead<float>;
template class BceHead<double>;
template class KlHead<float>;
template class KlHead<double>;

LossValue total_loss(std::span<const BatchMember> batch) {
  if (batch.empty()) throw ConfigError("total_loss: batch has no samples");
  LossValue out;
  double sup_sum = 0.0;
  double semi_sum = 0.0;
  int n_sup = 0;
  int n_semi = 0;
  for (const BatchMember& m : batch) {
    if (!m.prediction) throw ContractError("total_loss: member without prediction");
    out.pixel_count += static_cast<long>(m.prediction->size());
    if (m.label_kind == LabelKind::ImagePositive) {
      if (!m.pseudo_gt) throw ContractError("total_loss: P member without pseudo-GT");
      semi_sum += kl_loss(*m.pseudo_gt, *m.prediction);
      ++n_semi;
    } else {
      if (!m.target) throw ContractError("total_loss: R/N member without mask");
      sup_sum += bce_loss(*m.prediction, *m.target);
      ++n_sup;
    }
  }
  out.supervised_term = n_sup ? sup_sum / n_sup : 0.0;
  out.semi_term = n_semi ? semi_sum / n_semi : 0.0;
  out.total = out.supervised_term + out.semi_term;
  return out;
}

}  // namespace distill
