#pragma once

// Seeded desk-scale stand-in for a preference dataset: each image holds one
// colored rectangle "object" on a noisy background. The chosen response
// names the object; the rejected response names it and then hallucinates a
// distractor that is not in the image.

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mfpo/error.hpp"
#include "mfpo/image.hpp"
#include "mfpo/providers.hpp"
#include "mfpo/rng.hpp"
#include "mfpo/sample.hpp"

namespace mfpo::synth {

struct ObjectKind {
  std::string name;
  std::string color;
  std::array<double, 3> rgb;
};

inline std::vector<ObjectKind> default_objects() {
  return {
      {"apple", "red", {0.85, 0.10, 0.10}},   {"leaf", "green", {0.15, 0.75, 0.20}},
      {"ocean", "blue", {0.10, 0.25, 0.85}},  {"banana", "yellow", {0.90, 0.85, 0.10}},
      {"grape", "purple", {0.55, 0.15, 0.65}}, {"carrot", "orange", {0.95, 0.55, 0.10}},
      {"cloud", "white", {0.95, 0.95, 0.95}}, {"tire", "black", {0.05, 0.05, 0.05}},
  };
}

struct SynthSpec {
  std::size_t n_train = 200;
  std::size_t n_heldout = 100;
  int height = 16;
  int width = 16;
  int min_side = 5;
  int max_side = 9;
  double background_noise = 0.15;  ///< half-width of per-pixel uniform jitter
  double color_jitter = 0.10;      ///< half-width of per-object color jitter
  /// Probability that the rejected response names a wrong object outright
  /// instead of adding a hallucinated one.
  double swap_rate = 0.0;
  std::vector<ObjectKind> objects = default_objects();
  std::vector<std::string> prompts = {"what is in the image", "describe the image", "what do you see here"};

  void validate() const {
    if (n_train == 0) throw ValidationError("synthetic task needs n_train > 0");
    if (height < 4 || width < 4) throw ValidationError("synthetic images must be at least 4x4");
    if (min_side < 1 || max_side < min_side || max_side > std::min(height, width)) {
      throw ValidationError("object sides must satisfy 1 <= min_side <= max_side <= image size");
    }
    if (objects.size() < 2) throw ValidationError("synthetic task needs at least two object kinds");
    if (prompts.empty()) throw ValidationError("synthetic task needs at least one prompt");
    if (!(swap_rate >= 0 && swap_rate <= 1)) throw ValidationError("swap_rate must be in [0, 1]");
  }
};

struct SynthTask {
  std::vector<PreferenceSample> train;
  std::vector<PreferenceSample> heldout;
  std::vector<diffusion::Annotation> annotations;  ///< object keyword -> rectangle, both splits
};

namespace detail {

inline Tokens describe(const ObjectKind& o) { return {"a", o.color, o.name}; }

struct Draw {
  rng::CounterRng gen;
  std::uint64_t next = 0;
  double uniform() { return gen.uniform(next++); }
  std::size_t below(std::size_t n) { return std::min(n - 1, static_cast<std::size_t>(uniform() * static_cast<double>(n))); }
  int between(int lo, int hi) { return lo + static_cast<int>(below(static_cast<std::size_t>(hi - lo + 1))); }
};

inline void make_split(const SynthSpec& spec, std::uint64_t seed, const std::string& prefix, std::size_t n,
                       std::vector<PreferenceSample>& out, std::vector<diffusion::Annotation>& anns) {
  const int H = spec.height, Wd = spec.width;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string id = prefix + std::to_string(i);
    Draw d{rng::CounterRng(seed, rng::fnv1a("synth:" + id))};
    const auto& obj = spec.objects[d.below(spec.objects.size())];
    std::size_t other_ix = d.below(spec.objects.size() - 1);
    if (spec.objects[other_ix].name == obj.name) other_ix = spec.objects.size() - 1;
    const auto& other = spec.objects[other_ix];

    const double bg = 0.35 + 0.3 * d.uniform();
    std::vector<double> px(static_cast<std::size_t>(H * Wd * 3));
    for (auto& v : px) v = std::clamp(bg + spec.background_noise * (2 * d.uniform() - 1), 0.0, 1.0);
    const int rw = d.between(spec.min_side, spec.max_side), rh = d.between(spec.min_side, spec.max_side);
    const int x0 = d.between(0, Wd - rw), y0 = d.between(0, H - rh);
    std::array<double, 3> rgb{};
    for (int c = 0; c < 3; ++c) rgb[c] = std::clamp(obj.rgb[c] + spec.color_jitter * (2 * d.uniform() - 1), 0.0, 1.0);
    for (int y = y0; y < y0 + rh; ++y)
      for (int x = x0; x < x0 + rw; ++x)
        for (int c = 0; c < 3; ++c) px[static_cast<std::size_t>((y * Wd + x) * 3 + c)] = rgb[c];

    const auto prompt = tokenize(spec.prompts[d.below(spec.prompts.size())]);
    Tokens chosen = describe(obj);
    Tokens rejected;
    if (d.uniform() < spec.swap_rate) {
      rejected = describe(other);
    } else {
      rejected = chosen;
      rejected.push_back("and");
      const auto extra = describe(other);
      rejected.insert(rejected.end(), extra.begin(), extra.end());
    }
    out.emplace_back(id, prompt, std::move(chosen), std::move(rejected), ImageTensor(H, Wd, 3, std::move(px)));
    anns.push_back({id, obj.name, std::array<int, 4>{x0, y0, rw, rh}, std::nullopt});
  }
}

}  // namespace detail

inline SynthTask make_synthetic_task(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  SynthTask task;
  detail::make_split(spec, seed, "train-", spec.n_train, task.train, task.annotations);
  detail::make_split(spec, seed, "heldout-", spec.n_heldout, task.heldout, task.annotations);
  return task;
}

/// Every response the task can produce, so held-out pairs are always in the
/// policy's candidate set.
inline std::vector<Tokens> all_responses(const SynthSpec& spec) {
  std::vector<Tokens> out;
  for (const auto& a : spec.objects) out.push_back(detail::describe(a));
  for (const auto& a : spec.objects)
    for (const auto& b : spec.objects) {
      if (a.name == b.name) continue;
      auto y = detail::describe(a);
      y.push_back("and");
      const auto extra = detail::describe(b);
      y.insert(y.end(), extra.begin(), extra.end());
      out.push_back(std::move(y));
    }
  return out;
}

}  // namespace mfpo::synth
