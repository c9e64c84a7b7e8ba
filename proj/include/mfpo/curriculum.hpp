#pragma once

// Easy-to-hard scheduling: score samples by the entropy of the policy's
// answer distribution, split into tertiles, and train bucket by bucket.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mfpo/error.hpp"
#include "mfpo/policy.hpp"
#include "mfpo/sample.hpp"

namespace mfpo::curriculum {

/// Shannon entropy in nats; 0 log 0 = 0.
inline double entropy(std::span<const double> p) {
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("probabilities must be finite and >= 0");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ValidationError("probabilities sum to " + std::to_string(sum) + ", expected 1");
  }
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return std::max(h, 0.0);
}

struct Scored {
  std::string id;
  double entropy = 0;
};

/// Entropy of pi(. | t, m) over the candidate set, per sample, in input order.
inline std::vector<Scored> score_dataset(const policy::ToyPolicy& pol, std::span<const PreferenceSample> samples) {
  std::vector<Scored> out;
  out.reserve(samples.size());
  std::vector<double> p;
  for (const auto& s : samples) {
    const auto ev = pol.evaluate(s.prompt(), s.image());
    p.resize(ev.log_probs.size());
    std::transform(ev.log_probs.begin(), ev.log_probs.end(), p.begin(), [](double lp) { return std::exp(lp); });
    // Renormalize away the last-ulp drift of exp(log_softmax).
    double z = 0.0;
    for (double v : p) z += v;
    for (double& v : p) v /= z;
    out.push_back({s.id(), entropy(p)});
  }
  return out;
}

inline constexpr std::array<Difficulty, 3> kPhaseOrder = {Difficulty::easy, Difficulty::medium, Difficulty::hard};

struct CurriculumPlan {
  std::vector<Scored> scored;  ///< ascending entropy, ties by id
  std::map<std::string, Difficulty> buckets;
  int phase_epochs = 1;

  std::vector<std::string> bucket(Difficulty d) const {
    std::vector<std::string> ids;
    for (const auto& s : scored)
      if (buckets.at(s.id) == d) ids.push_back(s.id);
    return ids;
  }
};

/// Tertile sizes for n items; the remainder goes to the earlier buckets.
inline std::array<std::size_t, 3> tertile_sizes(std::size_t n) {
  std::array<std::size_t, 3> sz{n / 3, n / 3, n / 3};
  for (std::size_t i = 0; i < n % 3; ++i) ++sz[i];
  return sz;
}

inline CurriculumPlan make_plan(std::vector<Scored> scored, int phase_epochs = 1) {
  if (scored.empty()) throw ValidationError("cannot plan an empty dataset");
  if (phase_epochs < 0) throw ValidationError("phase_epochs must be >= 0");
  std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
    if (a.entropy != b.entropy) return a.entropy < b.entropy;
    return a.id < b.id;
  });
  CurriculumPlan plan;
  plan.phase_epochs = phase_epochs;
  const auto sizes = tertile_sizes(scored.size());
  std::size_t i = 0;
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t k = 0; k < sizes[b]; ++k, ++i) {
      if (!plan.buckets.emplace(scored[i].id, kPhaseOrder[b]).second) {
        throw ValidationError("duplicate sample id '" + scored[i].id + "' in curriculum");
      }
    }
  plan.scored = std::move(scored);
  return plan;
}

struct PhaseSummary {
  Difficulty phase = Difficulty::easy;
  std::vector<std::string> ids;  ///< bucket trained in this phase
  std::vector<double> losses;    ///< trajectory returned by the callback
};

/// Trains on `ids` for the plan's phase_epochs and returns the loss trajectory.
using TrainCallback = std::function<std::vector<double>(Difficulty phase, const std::vector<std::string>& ids, int epochs)>;
/// Produces fresh entropy scores from the current policy.
using RescoreCallback = std::function<std::vector<Scored>()>;

/// Easy, then medium, then hard. With a rescore callback the plan is rebuilt
/// before the medium and hard phases.
inline std::vector<PhaseSummary> iterate_phases(CurriculumPlan plan, const TrainCallback& train,
                                                const RescoreCallback& rescore = {}) {
  std::vector<PhaseSummary> out;
  for (std::size_t ph = 0; ph < kPhaseOrder.size(); ++ph) {
    if (ph > 0 && rescore) plan = make_plan(rescore(), plan.phase_epochs);
    PhaseSummary s{kPhaseOrder[ph], plan.bucket(kPhaseOrder[ph]), {}};
    const auto context = std::string("curriculum phase '") + std::string(to_string(s.phase)) + "': ";
    try {
      s.losses = train(s.phase, s.ids, plan.phase_epochs);
    } catch (const DivergenceError& e) {
      throw DivergenceError(context + e.what());
    } catch (const Error& e) {
      throw Error(context + e.what());
    }
    out.push_back(std::move(s));
  }
  return out;
}

/// Writes entropy and difficulty into each sample.
inline std::vector<PreferenceSample> annotate(std::span<const PreferenceSample> samples, const CurriculumPlan& plan) {
  std::map<std::string, double> h;
  for (const auto& s : plan.scored) h[s.id] = s.entropy;
  std::vector<PreferenceSample> out;
  for (const auto& s : samples) out.push_back(s.with_difficulty(h.at(s.id()), plan.buckets.at(s.id())));
  return out;
}

}  // namespace mfpo::curriculum
