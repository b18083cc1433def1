#pragma once

#include "sllie/encoder.hpp"

// Training objectives: fidelity, teacher consistency, semantic-aware
// contrastive ratio, encoder-stage perceptual, gradient map, and the composed
// supervised / unsupervised / overall objectives with the lambda1 warm-up.

namespace sllie::losses {

enum class ScrForm { AnchorRatio, Literal };

struct LossSchedule {
  double gamma1 = 0.1;
  double gamma2 = 0.1;
  double lambda2 = 0.1;
  double omega = 1.0;
  int total_epochs = 200;
  ScrForm scr_form = ScrForm::AnchorRatio;

  void validate() const {
    if (gamma1 < 0 || gamma2 < 0 || lambda2 < 0 || omega < 0 || total_epochs < 1)
      throw std::invalid_argument("LossSchedule: weights must be >= 0 and T >= 1");
  }
};

inline constexpr double kScrEps = 1e-8;

template <typename T>
Var<T> fidelity_loss(const Var<T>& pred, const Var<T>& gt) {
  return ag::mean_abs_diff(pred, gt);
}

// gradients flow only to the student side
template <typename T>
Var<T> consistency_loss(const Var<T>& student_out, const Var<T>& teacher_out) {
  return ag::mean_abs_diff(student_out, ag::detach(teacher_out));
}

// Embeddings [B,D]. anchor = student output, positive = teacher output,
// negative = low-light input. Only the anchor receives gradients.
template <typename T>
Var<T> scr_loss(const Var<T>& anchor, const Var<T>& positive, const Var<T>& negative,
                double omega, ScrForm form) {
  if (anchor->value.shape != positive->value.shape ||
      anchor->value.shape != negative->value.shape)
    throw std::invalid_argument("scr_loss: embedding shapes differ");
  Var<T> pos = ag::detach(positive);
  Var<T> neg = ag::detach(negative);
  Var<T> ratio;
  if (form == ScrForm::AnchorRatio) {
    ratio = ag::scalar_div(ag::mean_abs_diff(anchor, pos), ag::mean_abs_diff(anchor, neg),
                           kScrEps);
  } else {
    // the ratio exactly as printed: student-negative over teacher-negative;
    // the guard sits on both sides so equal distances give exactly 1
    Var<T> num = ag::unary_op(
        ag::mean_abs_diff(anchor, neg), [](T x) { return x + T(kScrEps); },
        [](T, T) { return T(1); });
    ratio = ag::scalar_div(num, ag::mean_abs_diff(pos, neg), kScrEps);
  }
  return ag::scale(ratio, omega);
}

// Mean over the last three stages of the spatial mean of the channel-mean
// squared feature difference. Gradients flow only through pyr_enh.
template <typename T>
Var<T> perceptual_loss(const encoder::FeaturePyramid<T>& pyr_gt,
                       const encoder::FeaturePyramid<T>& pyr_enh) {
  std::vector<Var<T>> terms;
  for (size_t i = 1; i < 4; ++i) {
    check_same_shape(pyr_gt.stages[i]->value, pyr_enh.stages[i]->value, "perceptual_loss");
    terms.push_back(ag::mean_sq_diff(ag::detach(pyr_gt.stages[i]), pyr_enh.stages[i]));
  }
  return ag::scale(ag::sum_vars(terms), 1.0 / double(terms.size()));
}

template <typename T>
Var<T> gradient_map(const Var<T>& img) {
  return ag::gradient_map(img);
}

template <typename T>
Var<T> gradient_loss(const Var<T>& enh, const Var<T>& gt) {
  return ag::mean_abs_diff(ag::gradient_map(enh), ag::gradient_map(ag::detach(gt)));
}

template <typename T>
Var<T> supervised_objective(const Var<T>& l_sup, const Var<T>& l_ramper, const Var<T>& l_grad,
                            const LossSchedule& sched) {
  return ag::add(l_sup,
                 ag::add(ag::scale(l_ramper, sched.gamma1), ag::scale(l_grad, sched.gamma2)));
}

template <typename T>
Var<T> unsupervised_objective(const Var<T>& l_un, const Var<T>& l_scr) {
  return ag::add(l_un, l_scr);
}

// 0.2 * exp(-5 * (1 - t/T)^2), constant within an epoch
inline double warmup_lambda1(int epoch, const LossSchedule& sched) {
  if (epoch < 0 || epoch > sched.total_epochs)
    throw std::invalid_argument("warmup_lambda1: epoch out of range");
  const double u = 1.0 - double(epoch) / double(sched.total_epochs);
  return 0.2 * std::exp(-5.0 * u * u);
}

template <typename T>
Var<T> overall_objective(const Var<T>& l_sup_prime, const Var<T>& l_un_prime,
                         const Var<T>& l_adv, int epoch, const LossSchedule& sched) {
  return ag::add(l_sup_prime, ag::add(ag::scale(l_un_prime, warmup_lambda1(epoch, sched)),
                                      ag::scale(l_adv, sched.lambda2)));
}

}  // namespace sllie::losses
