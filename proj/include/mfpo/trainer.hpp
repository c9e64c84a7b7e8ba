#pragma once

// Deterministic minibatch training on L_total with optional easy-to-hard
// scheduling, plus held-out evaluation.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mfpo/curriculum.hpp"
#include "mfpo/error.hpp"
#include "mfpo/losses.hpp"
#include "mfpo/policy.hpp"
#include "mfpo/rng.hpp"
#include "mfpo/sample.hpp"

namespace mfpo::train {

using losses::LossBreakdown;
using losses::LossConfig;
using losses::LossTerms;
using losses::RewardReport;
using policy::ToyPolicy;

enum class OptimizerKind { sgd, adam };
enum class CurriculumMode { easy_to_hard, end_to_end };

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::adam;
  double learning_rate = 1e-2;
  /// Epochs per difficulty phase. End-to-end runs the same number of
  /// gradient steps over the full set (nominally 3 x phase_epochs epochs).
  int phase_epochs = 1;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  LossConfig loss;
  LossTerms terms;
  CurriculumMode mode = CurriculumMode::easy_to_hard;
  /// Re-score entropy with the live policy before each later phase.
  bool rescore = true;

  void validate() const {
    if (!(learning_rate > 0) || !std::isfinite(learning_rate)) {
      throw ValidationError("learning_rate must be finite and > 0");
    }
    if (phase_epochs < 0) throw ValidationError("phase_epochs must be >= 0");
    if (batch_size == 0) throw ValidationError("batch_size must be positive");
    if (!terms.any()) throw ValidationError("at least one loss term must be enabled");
    loss.validate();
  }
};

/// Phase 0 is the single end-to-end phase; 1..3 are easy, medium, hard.
inline std::string phase_name(int phase) {
  static const char* names[] = {"all", "easy", "medium", "hard"};
  return phase >= 0 && phase < 4 ? names[phase] : "?";
}

struct TrajectoryRow {
  int phase = 0;
  int epoch = 0;  ///< epoch index within the phase
  int step = 0;   ///< global, starting at 0
  double text = 0, image = 0, margin = 0, total = 0;
  RewardReport rewards;
};

struct TrajectoryLog {
  std::vector<TrajectoryRow> rows;

  bool empty() const noexcept { return rows.empty(); }
  std::size_t size() const noexcept { return rows.size(); }
};

/// Rows whose epoch is the last epoch of the last phase present.
inline std::vector<TrajectoryRow> final_epoch(const TrajectoryLog& log) {
  std::vector<TrajectoryRow> out;
  if (log.empty()) return out;
  const auto& last = log.rows.back();
  for (const auto& r : log.rows)
    if (r.phase == last.phase && r.epoch == last.epoch) out.push_back(r);
  return out;
}

// ---------------------------------------------------------------------------
// Optimizers

class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, std::size_t n) : kind_(kind), lr_(lr) {
    if (kind_ == OptimizerKind::adam) {
      m_.assign(n, 0.0);
      v_.assign(n, 0.0);
    }
  }

  void step(std::span<double> theta, std::span<const double> grad) {
    if (kind_ == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= lr_ * grad[i];
      return;
    }
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ++t_;
    const double c1 = 1.0 - std::pow(b1, t_), c2 = 1.0 - std::pow(b2, t_);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m_[i] = b1 * m_[i] + (1 - b1) * grad[i];
      v_[i] = b2 * v_[i] + (1 - b2) * grad[i] * grad[i];
      theta[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
    }
  }

 private:
  OptimizerKind kind_;
  double lr_;
  std::vector<double> m_, v_;
  int t_ = 0;
};

// ---------------------------------------------------------------------------
// Training

struct TrainResult {
  ToyPolicy policy;
  TrajectoryLog log;
  std::vector<curriculum::PhaseSummary> phases;  ///< empty for end-to-end
  std::size_t steps = 0;
};

inline std::size_t batches_per_epoch(std::size_t n, std::size_t batch) { return (n + batch - 1) / batch; }

/// Gradient steps an easy-to-hard run takes; end-to-end is held to the same.
inline std::size_t step_budget(std::size_t n, const TrainConfig& cfg) {
  std::size_t steps = 0;
  for (auto sz : curriculum::tertile_sizes(n)) steps += static_cast<std::size_t>(cfg.phase_epochs) * batches_per_epoch(sz, cfg.batch_size);
  return steps;
}

namespace detail {

class Runner {
 public:
  Runner(std::span<const PreferenceSample> samples, const ToyPolicy& initial, const TrainConfig& cfg)
      : samples_(samples), cfg_(cfg), ref_(policy::snapshot_reference(initial)), live_(initial),
        opt_(cfg.optimizer, cfg.learning_rate, initial.num_params()) {
    for (std::size_t i = 0; i < samples_.size(); ++i) {
      if (!index_.emplace(samples_[i].id(), i).second) {
        throw ValidationError("duplicate sample id '" + samples_[i].id() + "'");
      }
      if (cfg_.terms.image) samples_[i].require_perturbed();
    }
  }

  /// Trains `epochs` passes over `members`, stopping early once `max_steps`
  /// steps have been taken in this call. Returns per-step totals.
  std::vector<double> run(int phase, std::vector<std::size_t> members, int epochs, std::size_t max_steps) {
    std::vector<double> totals;
    std::vector<PreferenceSample> batch;
    std::vector<double> grad(live_.num_params());
    for (int e = 0; totals.size() < max_steps && (epochs < 0 || e < epochs); ++e) {
      const auto stream = rng::mix64(rng::fnv1a("shuffle") ^ rng::mix64(static_cast<std::uint64_t>(phase) << 32 | static_cast<std::uint32_t>(e)));
      const auto perm = rng::permutation(members.size(), cfg_.seed, stream);
      for (std::size_t start = 0; start < perm.size() && totals.size() < max_steps; start += cfg_.batch_size) {
        batch.clear();
        for (std::size_t k = start; k < std::min(start + cfg_.batch_size, perm.size()); ++k) {
          batch.push_back(samples_[members[perm[k]]]);
        }
        std::fill(grad.begin(), grad.end(), 0.0);
        const auto b = losses::batch_loss(live_, ref_, batch, cfg_.loss, cfg_.terms, grad);
        if (!std::isfinite(b.total)) {
          throw DivergenceError("non-finite loss at phase " + phase_name(phase) + ", epoch " + std::to_string(e) +
                                ", step " + std::to_string(step_));
        }
        log_.rows.push_back({phase, e, step_, b.text, b.image, b.margin, b.total, b.rewards});
        totals.push_back(b.total);
        opt_.step(live_.mutable_params(), grad);
        for (double v : live_.params()) {
          if (!std::isfinite(v)) {
            throw DivergenceError("non-finite parameters after step " + std::to_string(step_));
          }
        }
        ++step_;
      }
    }
    return totals;
  }

  std::vector<std::size_t> indices(const std::vector<std::string>& ids) const {
    std::vector<std::size_t> out;
    for (const auto& id : ids) out.push_back(index_.at(id));
    return out;
  }

  std::vector<std::size_t> all() const {
    std::vector<std::size_t> out(samples_.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = i;
    return out;
  }

  std::span<const PreferenceSample> samples() const { return samples_; }
  const ToyPolicy& live() const { return live_; }
  TrainResult finish(std::vector<curriculum::PhaseSummary> phases) {
    return {std::move(live_), std::move(log_), std::move(phases), static_cast<std::size_t>(step_)};
  }

 private:
  std::span<const PreferenceSample> samples_;
  TrainConfig cfg_;
  ToyPolicy ref_;
  ToyPolicy live_;
  Optimizer opt_;
  std::map<std::string, std::size_t> index_;
  TrajectoryLog log_;
  int step_ = 0;
};

inline bool all_have_entropy(std::span<const PreferenceSample> samples) {
  for (const auto& s : samples)
    if (!s.entropy()) return false;
  return true;
}

}  // namespace detail

/// Trains a copy of `initial`; the reference is `initial` itself, frozen.
inline TrainResult train(std::span<const PreferenceSample> samples, const ToyPolicy& initial, const TrainConfig& cfg) {
  cfg.validate();
  if (samples.empty()) throw ValidationError("cannot train on an empty dataset");
  detail::Runner runner(samples, initial, cfg);
  const std::size_t budget = step_budget(samples.size(), cfg);

  if (cfg.mode == CurriculumMode::end_to_end) {
    if (budget > 0) runner.run(0, runner.all(), -1, budget);
    return runner.finish({});
  }

  std::vector<curriculum::Scored> initial_scores;
  if (!cfg.rescore && detail::all_have_entropy(samples)) {
    for (const auto& s : samples) initial_scores.push_back({s.id(), *s.entropy()});
  } else {
    initial_scores = curriculum::score_dataset(runner.live(), samples);
  }
  auto plan = curriculum::make_plan(std::move(initial_scores), cfg.phase_epochs);
  curriculum::RescoreCallback rescore;
  if (cfg.rescore) rescore = [&] { return curriculum::score_dataset(runner.live(), runner.samples()); };
  auto phases = curriculum::iterate_phases(
      std::move(plan),
      [&](Difficulty d, const std::vector<std::string>& ids, int epochs) {
        const int phase = 1 + static_cast<int>(d);
        return runner.run(phase, runner.indices(ids), epochs, static_cast<std::size_t>(-1));
      },
      rescore);
  return runner.finish(std::move(phases));
}

/// Supervised warm-up on the chosen responses (maximizes log pi(y_w|t,m)),
/// giving the reference policy an informative answer distribution.
inline ToyPolicy sft_warmup(std::span<const PreferenceSample> samples, ToyPolicy pol, int epochs, double lr,
                            std::size_t batch_size, std::uint64_t seed) {
  if (epochs <= 0) return pol;
  if (samples.empty()) throw ValidationError("cannot warm up on an empty dataset");
  Optimizer opt(OptimizerKind::adam, lr, pol.num_params());
  std::vector<double> grad(pol.num_params());
  for (int e = 0; e < epochs; ++e) {
    const auto perm = rng::permutation(samples.size(), seed, rng::mix64(rng::fnv1a("sft") ^ static_cast<std::uint64_t>(e)));
    for (std::size_t start = 0; start < perm.size(); start += batch_size) {
      const std::size_t end = std::min(start + batch_size, perm.size());
      std::fill(grad.begin(), grad.end(), 0.0);
      const double w = -1.0 / static_cast<double>(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const auto& s = samples[perm[k]];
        pol.accumulate_log_prob_grad(pol.evaluate(s.prompt(), s.image()), pol.index_of(s.chosen()), w, grad);
      }
      opt.step(pol.mutable_params(), grad);
    }
  }
  return pol;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalReport {
  std::size_t count = 0;
  /// Stand-in for the hallucination benchmarks: fraction of samples where
  /// pi(y_w|t,m) > pi(y_l|t,m) and pi(y_w|t,m) > pi(y_w|t,m').
  double preference_accuracy = 0;
  double text_accuracy = 0;   ///< pi(y_w|t,m) > pi(y_l|t,m)
  double image_accuracy = 0;  ///< pi(y_w|t,m) > pi(y_w|t,m')
  LossBreakdown mean;         ///< mean losses and rewards against `ref`
};

inline EvalReport evaluate(const ToyPolicy& pol, const ToyPolicy& ref, std::span<const PreferenceSample> samples,
                           const LossConfig& cfg = {}) {
  if (samples.empty()) throw ValidationError("cannot evaluate an empty dataset");
  EvalReport r;
  r.count = samples.size();
  std::size_t both = 0, text_ok = 0, image_ok = 0;
  for (const auto& s : samples) {
    const auto& pert = s.require_perturbed();
    const auto ev = pol.evaluate(s.prompt(), s.image());
    const auto evp = pol.evaluate(s.prompt(), pert);
    const auto kw = pol.index_of(s.chosen()), kl = pol.index_of(s.rejected());
    const bool t_ok = pol.log_prob(ev, kw) > pol.log_prob(ev, kl);
    const bool i_ok = pol.log_prob(ev, kw) > pol.log_prob(evp, kw);
    text_ok += t_ok;
    image_ok += i_ok;
    both += t_ok && i_ok;
  }
  const double n = static_cast<double>(samples.size());
  r.preference_accuracy = static_cast<double>(both) / n;
  r.text_accuracy = static_cast<double>(text_ok) / n;
  r.image_accuracy = static_cast<double>(image_ok) / n;
  r.mean = losses::batch_loss(pol, ref, samples, cfg);
  return r;
}

}  // namespace mfpo::train
