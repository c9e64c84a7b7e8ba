#pragma once

// Preference losses over a policy / frozen-reference pair.
//
// With x_w = log pi(y_w|t,m)/ref, x_l = log pi(y_l|t,m)/ref and
// x_w' = log pi(y_w|t,m')/ref:
//   L_text   = -log sigma(beta (x_w - x_l))
//   L_image  = -log sigma(beta (x_w - x_w'))
//   L_margin = -log sigma(beta x_w - eta)
//   L_total  = w_text L_text + w_image L_image + w_margin L_margin
// All -log sigma(z) are evaluated as softplus(-z).

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "mfpo/error.hpp"
#include "mfpo/policy.hpp"
#include "mfpo/sample.hpp"

namespace mfpo::losses {

using policy::ToyPolicy;

struct LossConfig {
  double beta = 0.1;
  double eta = 0.0;
  double w_text = 1.0;
  double w_image = 1.0;
  double w_margin = 1.0;

  void validate() const {
    if (!(beta > 0)) throw ValidationError("beta must be > 0");
    if (!(eta >= 0)) throw ValidationError("eta must be >= 0");
    if (!(w_text > 0 && w_image > 0 && w_margin > 0)) throw ValidationError("loss weights must be > 0");
  }
};

/// Which terms of L_total are active (the composition ablation switches).
struct LossTerms {
  bool text = true;
  bool image = true;
  bool margin = true;

  bool any() const noexcept { return text || image || margin; }
};

/// Z-free implicit rewards beta * log(pi / ref) for the logged pairs.
struct RewardReport {
  double chosen_text = 0;     ///< (t, m, y_w)
  double rejected_text = 0;   ///< (t, m, y_l)
  double chosen_image = 0;    ///< (t, m, y_w)
  double rejected_image = 0;  ///< (t, m', y_w); 0 when m' is absent

  double text_gap() const noexcept { return chosen_text - rejected_text; }
  double image_gap() const noexcept { return chosen_image - rejected_image; }
};

struct LossBreakdown {
  double text = 0;
  double image = 0;
  double margin = 0;
  double total = 0;
  RewardReport rewards;
};

inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}
inline double neg_log_sigmoid(double z) { return softplus(-z); }
/// d/dz [-log sigma(z)].
inline double neg_log_sigmoid_slope(double z) { return -sigmoid(-z); }

/// Pairwise reward-model loss -log sigma(r_w - r_l).
inline double rm_loss(double r_w, double r_l) { return neg_log_sigmoid(r_w - r_l); }

/// {d/dr_w, d/dr_l} of rm_loss.
inline std::array<double, 2> rm_loss_grad(double r_w, double r_l) {
  const double s = neg_log_sigmoid_slope(r_w - r_l);
  return {s, -s};
}

namespace detail {

/// Log-ratios needed by every loss for one (t, m[, m'], y_w, y_l).
struct Terms {
  policy::Evaluation live_m, live_p;
  std::size_t k_w = 0, k_l = 0;
  double x_w = 0, x_l = 0, x_wp = 0;
  bool has_perturbed = false;
};

inline Terms compute(const ToyPolicy& pol, const ToyPolicy& ref, const Tokens& t, const ImageTensor& m,
                     const ImageTensor* m_perturbed, const Tokens& y_w, const Tokens& y_l) {
  Terms T;
  T.k_w = pol.index_of(y_w);
  T.k_l = pol.index_of(y_l);
  if (ref.index_of(y_w) != T.k_w || ref.index_of(y_l) != T.k_l) {
    throw ValidationError("policy and reference disagree on the candidate set");
  }
  T.live_m = pol.evaluate(t, m);
  const auto ref_m = ref.evaluate(t, m);
  T.x_w = pol.log_prob(T.live_m, T.k_w) - ref.log_prob(ref_m, T.k_w);
  T.x_l = pol.log_prob(T.live_m, T.k_l) - ref.log_prob(ref_m, T.k_l);
  if (m_perturbed) {
    T.has_perturbed = true;
    T.live_p = pol.evaluate(t, *m_perturbed);
    const auto ref_p = ref.evaluate(t, *m_perturbed);
    T.x_wp = pol.log_prob(T.live_p, T.k_w) - ref.log_prob(ref_p, T.k_w);
  }
  return T;
}

inline RewardReport rewards(const Terms& T, double beta) {
  RewardReport r;
  r.chosen_text = beta * T.x_w;
  r.rejected_text = beta * T.x_l;
  r.chosen_image = beta * T.x_w;
  r.rejected_image = T.has_perturbed ? beta * T.x_wp : 0.0;
  return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// DPO on an explicit (t, m, y_w, y_l)

inline double dpo_loss(const ToyPolicy& pol, const ToyPolicy& ref, const Tokens& t, const ImageTensor& m,
                       const Tokens& y_w, const Tokens& y_l, const LossConfig& cfg) {
  cfg.validate();
  const auto T = detail::compute(pol, ref, t, m, nullptr, y_w, y_l);
  return neg_log_sigmoid(cfg.beta * (T.x_w - T.x_l));
}

inline std::vector<double> dpo_loss_grad(const ToyPolicy& pol, const ToyPolicy& ref, const Tokens& t,
                                         const ImageTensor& m, const Tokens& y_w, const Tokens& y_l,
                                         const LossConfig& cfg) {
  cfg.validate();
  const auto T = detail::compute(pol, ref, t, m, nullptr, y_w, y_l);
  const double c = neg_log_sigmoid_slope(cfg.beta * (T.x_w - T.x_l)) * cfg.beta;
  std::vector<double> g(pol.num_params(), 0.0);
  pol.accumulate_log_prob_grad(T.live_m, T.k_w, c, g);
  pol.accumulate_log_prob_grad(T.live_m, T.k_l, -c, g);
  return g;
}

// ---------------------------------------------------------------------------
// Per-sample losses

/// Evaluates the active terms for one sample; when `grad` is nonempty also
/// adds `scale * d(total)/d theta` into it.
inline LossBreakdown evaluate_sample(const ToyPolicy& pol, const ToyPolicy& ref, const PreferenceSample& s,
                                     const LossConfig& cfg, const LossTerms& terms, std::span<double> grad = {},
                                     double scale = 1.0) {
  cfg.validate();
  if (!terms.any()) throw ValidationError("at least one loss term must be enabled");
  const ImageTensor* pert = s.perturbed_image() ? &*s.perturbed_image() : nullptr;
  if (terms.image && !pert) s.require_perturbed();
  const auto T = detail::compute(pol, ref, s.prompt(), s.image(), pert, s.chosen(), s.rejected());

  LossBreakdown out;
  out.rewards = detail::rewards(T, cfg.beta);
  const double b = cfg.beta;
  const bool want_grad = !grad.empty();

  if (terms.text) {
    const double z = b * (T.x_w - T.x_l);
    out.text = neg_log_sigmoid(z);
    out.total += cfg.w_text * out.text;
    if (want_grad) {
      const double c = scale * cfg.w_text * neg_log_sigmoid_slope(z) * b;
      pol.accumulate_log_prob_grad(T.live_m, T.k_w, c, grad);
      pol.accumulate_log_prob_grad(T.live_m, T.k_l, -c, grad);
    }
  }
  if (terms.image) {
    const double z = b * (T.x_w - T.x_wp);
    out.image = neg_log_sigmoid(z);
    out.total += cfg.w_image * out.image;
    if (want_grad) {
      const double c = scale * cfg.w_image * neg_log_sigmoid_slope(z) * b;
      pol.accumulate_log_prob_grad(T.live_m, T.k_w, c, grad);
      pol.accumulate_log_prob_grad(T.live_p, T.k_w, -c, grad);
    }
  }
  if (terms.margin) {
    const double z = b * T.x_w - cfg.eta;
    out.margin = neg_log_sigmoid(z);
    out.total += cfg.w_margin * out.margin;
    if (want_grad) {
      const double c = scale * cfg.w_margin * neg_log_sigmoid_slope(z) * b;
      pol.accumulate_log_prob_grad(T.live_m, T.k_w, c, grad);
    }
  }
  return out;
}

inline double text_loss(const ToyPolicy& pol, const ToyPolicy& ref, const PreferenceSample& s, const LossConfig& cfg) {
  return dpo_loss(pol, ref, s.prompt(), s.image(), s.chosen(), s.rejected(), cfg);
}

inline double image_loss(const ToyPolicy& pol, const ToyPolicy& ref, const PreferenceSample& s, const LossConfig& cfg) {
  return evaluate_sample(pol, ref, s, cfg, {false, true, false}).image;
}

inline double margin_loss(const ToyPolicy& pol, const ToyPolicy& ref, const PreferenceSample& s,
                          const LossConfig& cfg) {
  return evaluate_sample(pol, ref, s, cfg, {false, false, true}).margin;
}

inline LossBreakdown total_loss(const ToyPolicy& pol, const ToyPolicy& ref, const PreferenceSample& s,
                                const LossConfig& cfg, const LossTerms& terms = {}) {
  return evaluate_sample(pol, ref, s, cfg, terms);
}

inline std::vector<double> total_loss_grad(const ToyPolicy& pol, const ToyPolicy& ref, const PreferenceSample& s,
                                           const LossConfig& cfg, const LossTerms& terms = {}) {
  std::vector<double> g(pol.num_params(), 0.0);
  evaluate_sample(pol, ref, s, cfg, terms, g);
  return g;
}

/// Gradient of a single term, for checking each loss on its own.
inline std::vector<double> term_grad(const ToyPolicy& pol, const ToyPolicy& ref, const PreferenceSample& s,
                                     const LossConfig& cfg, const LossTerms& only) {
  return total_loss_grad(pol, ref, s, cfg, only);
}

// ---------------------------------------------------------------------------
// Batches: arithmetic mean over samples, accumulated in index order.

inline LossBreakdown batch_loss(const ToyPolicy& pol, const ToyPolicy& ref, std::span<const PreferenceSample> batch,
                                const LossConfig& cfg, const LossTerms& terms = {}, std::span<double> grad = {}) {
  if (batch.empty()) throw ValidationError("empty batch");
  const double w = 1.0 / static_cast<double>(batch.size());
  LossBreakdown mean;
  for (const auto& s : batch) {
    const auto b = evaluate_sample(pol, ref, s, cfg, terms, grad, w);
    mean.text += w * b.text;
    mean.image += w * b.image;
    mean.margin += w * b.margin;
    mean.total += w * b.total;
    mean.rewards.chosen_text += w * b.rewards.chosen_text;
    mean.rewards.rejected_text += w * b.rewards.rejected_text;
    mean.rewards.chosen_image += w * b.rewards.chosen_image;
    mean.rewards.rejected_image += w * b.rewards.rejected_image;
  }
  return mean;
}

inline double text_loss(const ToyPolicy& pol, const ToyPolicy& ref, std::span<const PreferenceSample> batch,
                        const LossConfig& cfg) {
  return batch_loss(pol, ref, batch, cfg, {true, false, false}).text;
}

}  // namespace mfpo::losses
