#pragma once

#include <span>
#include <vector>

#include "distill/grid.hpp"
#include "distill/model.hpp"
#include "distill/sharpening.hpp"
#include "distill/synth_data.hpp"

namespace distill {

/// Supervised plus distillation loss of one batch. total = supervised + semi.
struct LossValue {
  double total = 0.0;
  double supervised_term = 0.0;
  double semi_term = 0.0;
  long pixel_count = 0;
};

/// Mean over pixels of -[y ln p + (1-y) ln(1-p)], p clamped to [eps, 1-eps].
double bce_loss(const ProbabilityMap& prediction, const GtMask& target,
                double eps = kClampEpsilon);

/// Mean over pixels of the two-class KL(target || prediction), both clamped.
double kl_loss(const ProbabilityMap& sharpened_pseudo_gt, const ProbabilityMap& student_prediction,
               double eps = kClampEpsilon);

/// Binary cross-entropy head. The gradient w.r.t. the logit is
/// (p - y) / pixels where the clamp is inactive, zero otherwise.
template <typename T>
class BceHead final : public LossTail<T> {
 public:
  explicit BceHead(const GtMask& target, double eps = kClampEpsilon)
      : target_(&target), eps_(eps) {}
  double evaluate(std::span<const T> probabilities, std::span<T> grad_logits) const override;

 private:
  const GtMask* target_;
  double eps_;
};

/// KL distillation head against a fixed pseudo-GT map. The pseudo-GT is a
/// constant: no gradient is produced for it.
template <typename T>
class KlHead final : public LossTail<T> {
 public:
  explicit KlHead(const ProbabilityMap& pseudo_gt, double eps = kClampEpsilon)
      : target_(&pseudo_gt), eps_(eps) {}
  double evaluate(std::span<const T> probabilities, std::span<T> grad_logits) const override;

 private:
  const ProbabilityMap* target_;
  double eps_;
};

extern template class BceHead<float>;
extern template class BceHead<double>;
extern template class KlHead<float>;
extern template class KlHead<double>;

/// One sample's contribution to a batch loss. R and N members carry a mask,
/// P members a sharpened pseudo-GT.
struct BatchMember {
  LabelKind label_kind = LabelKind::ImageNegative;
  const ProbabilityMap* prediction = nullptr;
  const GtMask* target = nullptr;
  const ProbabilityMap* pseudo_gt = nullptr;
};

/// supervised_term = mean BCE over R and N members, semi_term = mean KL over
/// P members; an empty subset contributes 0. Throws ConfigError for an empty
/// batch and ContractError for a member missing its target.
LossValue total_loss(std::span<const BatchMember> batch);

}  // namespace distill
