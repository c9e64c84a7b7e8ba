#pragma once

// Differentiable toy policy over a finite candidate-response set.
//
//   score(y | t, m) = u_y . (W [f_text(t); f_image(m)]) + b_y
//   log pi(y | t, m) = score(y) - logsumexp_k score(k)
//
// u_y is a fixed embedding of the response tokens; W and b are the trainable
// parameters theta, stored flat as [W row-major (R x F), b (n)].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfpo/error.hpp"
#include "mfpo/image.hpp"
#include "mfpo/rng.hpp"
#include "mfpo/sample.hpp"

namespace mfpo::policy {

struct FeatureConfig {
  int text_dim = 16;
  int image_grid = 4;      ///< P: images are mean-pooled on a P x P grid
  int image_channels = 3;  ///< images with other channel counts are converted
  int response_dim = 16;
  std::uint64_t seed = 0x5eed;
  bool center_image = true;  ///< subtract 0.5 from pooled intensities

  int image_dim() const { return image_grid * image_grid * image_channels; }
  int feature_dim() const { return text_dim + image_dim(); }

  void validate() const {
    if (text_dim <= 0 || image_grid <= 0 || response_dim <= 0) throw ValidationError("feature dims must be positive");
    if (image_channels != 1 && image_channels != 3) throw ValidationError("image_channels must be 1 or 3");
  }
  friend bool operator==(const FeatureConfig&, const FeatureConfig&) = default;
};

/// Deterministic text / image / response featurizers. Token projections are
/// keyed by the word string, so no vocabulary has to be shipped around.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(FeatureConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  const FeatureConfig& config() const noexcept { return cfg_; }

  /// Bag-of-tokens count vector times a fixed random projection (entries
  /// N(0, 1/dim)), i.e. the sum of per-token projections.
  std::vector<double> text(const Tokens& tokens) const { return bag(tokens, "text:", cfg_.text_dim); }
  std::vector<double> response(const Tokens& tokens) const { return bag(tokens, "resp:", cfg_.response_dim); }

  std::vector<double> image(const ImageTensor& img) const {
    const int P = cfg_.image_grid, C = cfg_.image_channels;
    std::vector<double> out(static_cast<std::size_t>(cfg_.image_dim()), 0.0);
    for (int gy = 0; gy < P; ++gy) {
      const int y0 = gy * img.height() / P, y1 = std::max(y0 + 1, (gy + 1) * img.height() / P);
      for (int gx = 0; gx < P; ++gx) {
        const int x0 = gx * img.width() / P, x1 = std::max(x0 + 1, (gx + 1) * img.width() / P);
        double* cell = &out[static_cast<std::size_t>((gy * P + gx) * C)];
        int count = 0;
        for (int y = y0; y < std::min(y1, img.height()); ++y)
          for (int x = x0; x < std::min(x1, img.width()); ++x, ++count)
            for (int c = 0; c < C; ++c) cell[c] += pixel(img, y, x, c);
        for (int c = 0; c < C; ++c) {
          cell[c] = count ? cell[c] / count : 0.0;
          if (cfg_.center_image) cell[c] -= 0.5;
        }
      }
    }
    return out;
  }

  std::vector<double> joint(const Tokens& t, const ImageTensor& m) const {
    auto f = text(t);
    const auto g = image(m);
    f.insert(f.end(), g.begin(), g.end());
    return f;
  }

 private:
  double pixel(const ImageTensor& img, int y, int x, int c) const {
    if (img.channels() == cfg_.image_channels) return img.at(y, x, c);
    if (img.channels() == 1) return img.at(y, x, 0);
    return (img.at(y, x, 0) + img.at(y, x, 1) + img.at(y, x, 2)) / 3.0;
  }

  std::vector<double> bag(const Tokens& tokens, std::string_view prefix, int dim) const {
    std::vector<double> out(static_cast<std::size_t>(dim), 0.0);
    if (tokens.empty()) return out;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
    for (const auto& w : tokens) {
      const rng::CounterRng gen(cfg_.seed, rng::fnv1a(std::string(prefix) + w));
      for (int k = 0; k < dim; ++k) out[static_cast<std::size_t>(k)] += scale * gen.normal(static_cast<std::uint64_t>(k));
    }
    return out;
  }

  FeatureConfig cfg_;
};

/// Policy outputs for one input (t, m), reusable across responses.
struct Evaluation {
  std::vector<double> features;        ///< F
  std::vector<double> log_probs;       ///< n, over the candidate set
  std::vector<double> mean_embedding;  ///< R, sum_k p_k u_k
};

struct PolicyOptions {
  /// Divide each sequence log-probability by the response length.
  bool length_normalize = false;
  friend bool operator==(const PolicyOptions&, const PolicyOptions&) = default;
};

class ToyPolicy {
 public:
  ToyPolicy(FeatureConfig cfg, std::vector<Tokens> candidates, PolicyOptions opts = {})
      : extractor_(cfg), candidates_(std::move(candidates)), opts_(opts) {
    if (candidates_.size() < 2) throw ValidationError("policy needs at least two candidate responses");
    for (std::size_t k = 0; k < candidates_.size(); ++k) {
      if (candidates_[k].empty()) throw ValidationError("candidate responses must be nonempty");
      if (!index_.emplace(join(candidates_[k]), k).second) {
        throw ValidationError("duplicate candidate '" + join(candidates_[k]) + "'");
      }
      embeddings_.push_back(extractor_.response(candidates_[k]));
    }
    theta_.assign(weight_count() + candidates_.size(), 0.0);
  }

  /// Candidate set = every distinct chosen/rejected response, in order of
  /// first appearance, followed by `extra` distractors.
  static ToyPolicy for_samples(FeatureConfig cfg, std::span<const PreferenceSample> samples,
                               std::vector<Tokens> extra = {}, PolicyOptions opts = {}) {
    std::vector<Tokens> cands;
    std::map<std::string, bool> seen;
    auto add = [&](const Tokens& y) {
      if (seen.emplace(join(y), true).second) cands.push_back(y);
    };
    for (const auto& s : samples) {
      add(s.chosen());
      add(s.rejected());
    }
    for (const auto& y : extra) add(y);
    return ToyPolicy(cfg, std::move(cands), opts);
  }

  const FeatureExtractor& features() const noexcept { return extractor_; }
  const PolicyOptions& options() const noexcept { return opts_; }
  const std::vector<Tokens>& candidates() const noexcept { return candidates_; }
  std::size_t candidate_count() const noexcept { return candidates_.size(); }
  std::size_t num_params() const noexcept { return theta_.size(); }
  std::span<const double> params() const noexcept { return theta_; }
  std::span<double> mutable_params() noexcept { return theta_; }

  void set_params(std::vector<double> theta) {
    if (theta.size() != theta_.size()) throw ValidationError("parameter vector has the wrong length");
    for (double v : theta)
      if (!std::isfinite(v)) throw ValidationError("parameters must be finite");
    theta_ = std::move(theta);
  }

  /// Seeded N(0, scale^2) parameters.
  void randomize(std::uint64_t seed, double scale) {
    const rng::CounterRng gen(seed, rng::fnv1a("policy-init"));
    for (std::size_t i = 0; i < theta_.size(); ++i) theta_[i] = scale * gen.normal(i);
  }

  bool has_candidate(const Tokens& y) const { return index_.contains(join(y)); }

  std::size_t index_of(const Tokens& y) const {
    auto it = index_.find(join(y));
    if (it == index_.end()) throw ValidationError("response '" + join(y) + "' is not in the candidate set");
    return it->second;
  }

  Evaluation evaluate(const Tokens& t, const ImageTensor& m) const {
    const std::size_t R = response_dim(), F = feature_dim(), n = candidates_.size();
    Evaluation ev;
    ev.features = extractor_.joint(t, m);
    std::vector<double> hidden(R, 0.0);
    for (std::size_t r = 0; r < R; ++r) {
      double acc = 0.0;
      for (std::size_t f = 0; f < F; ++f) acc += theta_[r * F + f] * ev.features[f];
      hidden[r] = acc;
    }
    std::vector<double> scores(n);
    double top = -INFINITY;
    for (std::size_t k = 0; k < n; ++k) {
      double s = theta_[weight_count() + k];
      for (std::size_t r = 0; r < R; ++r) s += embeddings_[k][r] * hidden[r];
      scores[k] = s;
      top = std::max(top, s);
    }
    double z = 0.0;
    for (double s : scores) z += std::exp(s - top);
    const double log_z = top + std::log(z);
    ev.log_probs.resize(n);
    ev.mean_embedding.assign(R, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
      ev.log_probs[k] = scores[k] - log_z;
      const double p = std::exp(ev.log_probs[k]);
      for (std::size_t r = 0; r < R; ++r) ev.mean_embedding[r] += p * embeddings_[k][r];
    }
    return ev;
  }

  /// Sequence log-probability of candidate `k` under `ev` (length-normalized
  /// when configured).
  double log_prob(const Evaluation& ev, std::size_t k) const { return ev.log_probs.at(k) * length_factor(k); }

  double log_prob(const Tokens& t, const ImageTensor& m, const Tokens& y) const {
    const auto k = index_of(y);
    return log_prob(evaluate(t, m), k);
  }

  /// grad += coeff * d log_prob(k) / d theta.
  void accumulate_log_prob_grad(const Evaluation& ev, std::size_t k, double coeff, std::span<double> grad) const {
    if (grad.size() != theta_.size()) throw ValidationError("gradient buffer has the wrong length");
    const std::size_t R = response_dim(), F = feature_dim(), n = candidates_.size();
    coeff *= length_factor(k);
    for (std::size_t r = 0; r < R; ++r) {
      const double dr = coeff * (embeddings_[k][r] - ev.mean_embedding[r]);
      for (std::size_t f = 0; f < F; ++f) grad[r * F + f] += dr * ev.features[f];
    }
    const std::size_t off = weight_count();
    for (std::size_t j = 0; j < n; ++j) grad[off + j] -= coeff * std::exp(ev.log_probs[j]);
    grad[off + k] += coeff;
  }

  std::vector<double> log_prob_grad(const Tokens& t, const ImageTensor& m, const Tokens& y) const {
    const auto k = index_of(y);
    std::vector<double> g(theta_.size(), 0.0);
    accumulate_log_prob_grad(evaluate(t, m), k, 1.0, g);
    return g;
  }

  std::size_t response_dim() const noexcept { return static_cast<std::size_t>(extractor_.config().response_dim); }
  std::size_t feature_dim() const noexcept { return static_cast<std::size_t>(extractor_.config().feature_dim()); }
  std::size_t weight_count() const noexcept { return response_dim() * feature_dim(); }

  friend bool operator==(const ToyPolicy& a, const ToyPolicy& b) {
    return a.extractor_.config() == b.extractor_.config() && a.candidates_ == b.candidates_ && a.opts_ == b.opts_ &&
           a.theta_ == b.theta_;
  }

 private:
  double length_factor(std::size_t k) const {
    return opts_.length_normalize ? 1.0 / static_cast<double>(candidates_[k].size()) : 1.0;
  }

  FeatureExtractor extractor_;
  std::vector<Tokens> candidates_;
  PolicyOptions opts_;
  std::map<std::string, std::size_t> index_;
  std::vector<std::vector<double>> embeddings_;
  std::vector<double> theta_;
};

/// Frozen copy of the policy; later updates to the live policy never reach it.
inline ToyPolicy snapshot_reference(const ToyPolicy& live) { return live; }

// ---------------------------------------------------------------------------
// Checkpoints: {version, dims, theta, ...}

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json checkpoint_to_json(const ToyPolicy& p) {
  const auto& c = p.features().config();
  return {{"version", kCheckpointVersion},
          {"dims",
           {{"text_dim", c.text_dim},
            {"image_grid", c.image_grid},
            {"image_channels", c.image_channels},
            {"response_dim", c.response_dim},
            {"candidates", p.candidate_count()}}},
          {"feature_seed", c.seed},
          {"center_image", c.center_image},
          {"length_normalize", p.options().length_normalize},
          {"candidates", p.candidates()},
          {"theta", std::vector<double>(p.params().begin(), p.params().end())}};
}

inline ToyPolicy checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw ValidationError("unsupported checkpoint version " + j.at("version").dump());
    }
    const auto& d = j.at("dims");
    FeatureConfig cfg;
    cfg.text_dim = d.at("text_dim").get<int>();
    cfg.image_grid = d.at("image_grid").get<int>();
    cfg.image_channels = d.at("image_channels").get<int>();
    cfg.response_dim = d.at("response_dim").get<int>();
    cfg.seed = j.at("feature_seed").get<std::uint64_t>();
    cfg.center_image = j.at("center_image").get<bool>();
    PolicyOptions opts{j.value("length_normalize", false)};
    ToyPolicy p(cfg, j.at("candidates").get<std::vector<Tokens>>(), opts);
    if (d.at("candidates").get<std::size_t>() != p.candidate_count()) {
      throw ValidationError("checkpoint candidate count does not match its candidate list");
    }
    p.set_params(j.at("theta").get<std::vector<double>>());
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const ToyPolicy& p, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << checkpoint_to_json(p).dump() << '\n';
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

inline ToyPolicy load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  const auto j = nlohmann::json::parse(in, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw ValidationError("checkpoint '" + path.string() + "' is not valid JSON");
  return checkpoint_from_json(j);
}

}  // namespace mfpo::policy
