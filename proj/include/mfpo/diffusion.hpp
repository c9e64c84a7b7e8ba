#pragma once

// Region perturbation by forward-diffusion noising:
//   m'[p] = sqrt(abar_t) * m[p] + sqrt(1 - abar_t) * eps[p]   for p in the mask,
// with abar_t = prod_{j<=t} beta_j and eps drawn from the counter-based
// generator keyed by (seed, sample id, element index).

#include <charconv>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mfpo/error.hpp"
#include "mfpo/image.hpp"
#include "mfpo/rng.hpp"
#include "mfpo/sample.hpp"

namespace mfpo::diffusion {

/// Per-step retention factors beta_j in (0, 1) and their running products.
class NoiseSchedule {
 public:
  explicit NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
    if (betas_.empty()) throw ValidationError("noise schedule must have at least one step");
    alpha_bar_.resize(betas_.size());
    double prod = 1.0;
    for (std::size_t j = 0; j < betas_.size(); ++j) {
      if (!(betas_[j] > 0.0 && betas_[j] < 1.0)) {
        throw ValidationError("schedule factor " + std::to_string(j) + " must lie strictly in (0, 1)");
      }
      prod *= betas_[j];
      alpha_bar_[j] = prod;
    }
    if (!(alpha_bar_.back() > 0.0)) throw ValidationError("schedule cumulative product underflows to 0");
  }

  /// beta_j = 1 - v_j with the per-step noise variance v_j ramping linearly
  /// from `v_start` to `v_end`. The default ramp gives abar_500 ~ 0.047 at T = 1000.
  static NoiseSchedule linear(std::size_t steps, double v_start = 1e-4, double v_end = 0.024) {
    if (steps == 0) throw ValidationError("schedule needs at least one step");
    std::vector<double> b(steps);
    for (std::size_t j = 0; j < steps; ++j) {
      const double frac = steps == 1 ? 0.0 : static_cast<double>(j) / static_cast<double>(steps - 1);
      b[j] = 1.0 - (v_start + (v_end - v_start) * frac);
    }
    return NoiseSchedule(std::move(b));
  }

  /// Parses "linear:T", "linear:T:v_start:v_end" or "const:T:beta".
  static NoiseSchedule parse(std::string_view spec) {
    std::vector<std::string_view> parts;
    for (std::size_t start = 0;;) {
      const auto colon = spec.find(':', start);
      parts.push_back(spec.substr(start, colon == std::string_view::npos ? std::string_view::npos : colon - start));
      if (colon == std::string_view::npos) break;
      start = colon + 1;
    }
    auto num = [&](std::string_view s) {
      double v{};
      const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw ValidationError("bad number '" + std::string(s) + "' in schedule '" + std::string(spec) + "'");
      }
      return v;
    };
    auto count = [&](std::string_view s) {
      const double v = num(s);
      if (!(v >= 1) || v != std::floor(v)) throw ValidationError("schedule length must be a positive integer");
      return static_cast<std::size_t>(v);
    };
    if (parts[0] == "linear" && parts.size() == 2) return linear(count(parts[1]));
    if (parts[0] == "linear" && parts.size() == 4) return linear(count(parts[1]), num(parts[2]), num(parts[3]));
    if (parts[0] == "const" && parts.size() == 3) {
      return NoiseSchedule(std::vector<double>(count(parts[1]), num(parts[2])));
    }
    throw ValidationError("unknown schedule '" + std::string(spec) + "' (expected linear:T or const:T:beta)");
  }

  std::size_t size() const noexcept { return betas_.size(); }
  std::span<const double> betas() const noexcept { return betas_; }

  double alpha_bar(std::size_t t) const {
    if (t >= betas_.size()) {
      throw ValidationError("step " + std::to_string(t) + " outside schedule of length " + std::to_string(size()));
    }
    return alpha_bar_[t];
  }

 private:
  std::vector<double> betas_;
  std::vector<double> alpha_bar_;
};

inline double alpha_bar(const NoiseSchedule& schedule, std::size_t t) { return schedule.alpha_bar(t); }

struct PerturbConfig {
  std::shared_ptr<const NoiseSchedule> schedule = std::make_shared<NoiseSchedule>(NoiseSchedule::linear(1000));
  std::size_t t = 500;
  std::uint64_t seed = 0;
  bool clamp_output = true;

  void validate() const {
    if (!schedule) throw ValidationError("perturb config has no schedule");
    if (t >= schedule->size()) throw ValidationError("perturbation step t must be < schedule length");
  }
};

/// Noise stream for a sample: element e of the image uses draw e.
inline rng::CounterRng noise_stream(std::uint64_t seed, std::string_view sample_id) {
  return {seed, rng::fnv1a(sample_id)};
}

/// Pre-clamp noised values for every element (unmasked elements copied).
/// Clamped or not per `cfg.clamp_output`.
inline std::vector<double> perturb_values(const ImageTensor& image, const RegionMask& mask, const PerturbConfig& cfg,
                                          std::string_view stream_id = {}) {
  cfg.validate();
  if (!mask.matches(image)) throw ValidationError("mask dimensions do not match the image");
  const double ab = cfg.schedule->alpha_bar(cfg.t);
  const double keep = std::sqrt(ab), spread = std::sqrt(1.0 - ab);
  const auto gen = noise_stream(cfg.seed, stream_id);
  const auto src = image.data();
  std::vector<double> out(src.begin(), src.end());
  const auto channels = static_cast<std::size_t>(image.channels());
  for (std::size_t p = 0; p < image.pixel_count(); ++p) {
    if (!mask.contains(p)) continue;
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t e = p * channels + c;
      double v = keep * src[e] + spread * gen.normal(e);
      if (cfg.clamp_output) v = std::clamp(v, 0.0, 1.0);
      out[e] = v;
    }
  }
  return out;
}

/// Noised copy of `image` restricted to `mask`. Output is always a valid
/// image, so `cfg.clamp_output` must be set; use perturb_values() for the
/// raw values.
inline ImageTensor perturb_region(const ImageTensor& image, const RegionMask& mask, const PerturbConfig& cfg,
                                  std::string_view stream_id = {}) {
  if (!cfg.clamp_output) {
    throw ValidationError("perturb_region produces an image and needs clamp_output; use perturb_values for raw values");
  }
  return {image.height(), image.width(), image.channels(), perturb_values(image, mask, cfg, stream_id)};
}

// ---------------------------------------------------------------------------
// Mask providers

/// Maps a keyword to an image region. Returns nullopt when there is no
/// region; throws ProviderError when the lookup itself fails.
class MaskProvider {
 public:
  virtual ~MaskProvider() = default;
  virtual std::optional<RegionMask> query(const ImageTensor& image, std::string_view image_id,
                                          std::string_view keyword) const = 0;
};

inline constexpr std::string_view kGlobalMaskKeyword = "*";

/// Queries every keyword; perturbs the union of the masks found, or the
/// whole image when none is. The returned sample carries the found masks
/// (or a single full-image mask tagged "*").
inline PreferenceSample perturb_sample(const PreferenceSample& sample, const MaskProvider& provider,
                                       const PerturbConfig& cfg) {
  cfg.validate();
  std::vector<RegionMask> found;
  for (const auto& kw : sample.keywords()) {
    std::optional<RegionMask> m;
    try {
      m = provider.query(sample.image(), sample.id(), kw.word);
    } catch (const Error& e) {
      throw ProviderError("sample '" + sample.id() + "': mask provider failed for '" + kw.word + "': " + e.what());
    }
    if (!m) continue;
    if (!m->matches(sample.image())) {
      throw ProviderError("sample '" + sample.id() + "': provider mask for '" + kw.word + "' has wrong dimensions");
    }
    found.push_back(std::move(*m));
  }
  if (found.empty()) {
    found.push_back(RegionMask::full(sample.image().height(), sample.image().width(), std::string(kGlobalMaskKeyword)));
  }
  const auto region = RegionMask::unite(found, "union");
  auto perturbed = perturb_region(sample.image(), region, cfg, sample.id());
  return sample.with_perturbation(std::move(perturbed), std::move(found));
}

}  // namespace mfpo::diffusion
