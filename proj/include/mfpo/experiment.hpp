#pragma once

// End-to-end runs on a prepared dataset and the ablation presets.

#include <algorithm>
#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mfpo/dataset.hpp"
#include "mfpo/diffusion.hpp"
#include "mfpo/error.hpp"
#include "mfpo/keyrank.hpp"
#include "mfpo/losses.hpp"
#include "mfpo/policy.hpp"
#include "mfpo/providers.hpp"
#include "mfpo/sample.hpp"
#include "mfpo/trainer.hpp"

namespace mfpo::experiment {

struct ExperimentConfig {
  std::uint64_t seed = 0;
  /// One pooling cell per pixel of the 16x16 synthetic images.
  policy::FeatureConfig features = [] {
    policy::FeatureConfig f;
    f.image_grid = 16;
    return f;
  }();
  keyrank::Params keyrank;
  std::string schedule = "linear:1000";
  std::size_t perturb_t = 500;  ///< noise step for the training dispreferred images
  std::size_t eval_t = 500;     ///< noise step for the held-out dispreferred images
  bool whole_image = false;       ///< noise the entire training image instead of keyword regions
  bool eval_whole_image = false;  ///< same, for the held-out dispreferred images
  double init_scale = 0.0;        ///< N(0, scale^2) initial parameters before warm-up
  int warmup_epochs = 2;
  double warmup_lr = 0.05;
  train::TrainConfig train = [] {
    train::TrainConfig c;
    c.phase_epochs = 3;
    return c;
  }();
};

/// Raw samples plus the annotation provider that maps keywords to regions.
struct Workspace {
  std::vector<PreferenceSample> train;
  std::vector<PreferenceSample> heldout;
  std::vector<diffusion::Annotation> annotations;
};

inline constexpr const char* kTrainFile = "train.jsonl";
inline constexpr const char* kHeldoutFile = "heldout.jsonl";
inline constexpr const char* kAnnotationFile = "annotations.json";

inline void save_workspace(const Workspace& ws, const fs::path& dir, SaveOptions opts = {}) {
  fs::create_directories(dir);
  save_dataset(ws.train, dir / kTrainFile, opts);
  save_dataset(ws.heldout, dir / kHeldoutFile, opts);
  diffusion::save_annotations(ws.annotations, dir / kAnnotationFile);
}

inline Workspace load_workspace(const fs::path& dir) {
  for (const char* f : {kTrainFile, kHeldoutFile, kAnnotationFile}) {
    if (!fs::exists(dir / f)) {
      throw ValidationError("workspace '" + dir.string() + "' has no " + f + "; run gen-synth first");
    }
  }
  Workspace ws;
  ws.train = load_dataset(dir / kTrainFile);
  ws.heldout = load_dataset(dir / kHeldoutFile);
  std::ifstream in(dir / kAnnotationFile);
  std::stringstream text;
  text << in.rdbuf();
  ws.annotations = diffusion::parse_annotations(text.str(), dir);
  return ws;
}

inline std::vector<PreferenceSample> add_keywords(std::span<const PreferenceSample> samples,
                                                  const keyrank::Params& params) {
  const keyrank::HashedNgramEmbedding embedder;
  std::vector<PreferenceSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    try {
      out.push_back(s.with_keywords(keyrank::select_keywords(s, params, embedder)));
    } catch (const ValidationError& e) {
      throw ValidationError("sample '" + s.id() + "': " + e.what());
    }
  }
  return out;
}

inline std::vector<PreferenceSample> perturb_all(std::span<const PreferenceSample> samples,
                                                 const diffusion::MaskProvider& provider,
                                                 const diffusion::PerturbConfig& cfg) {
  std::vector<PreferenceSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(diffusion::perturb_sample(s, provider, cfg));
  return out;
}

/// Provider that never finds a region, so every image is noised globally.
class NoRegionProvider final : public diffusion::MaskProvider {
 public:
  std::optional<RegionMask> query(const ImageTensor&, std::string_view, std::string_view) const override {
    return std::nullopt;
  }
};

struct Prepared {
  std::vector<PreferenceSample> train;
  std::vector<PreferenceSample> heldout;
};

/// Keyword selection and perturbation for both splits.
inline Prepared prepare(const Workspace& ws, const ExperimentConfig& cfg) {
  const diffusion::AnnotationMaskProvider annotated(ws.annotations);
  const NoRegionProvider global;
  diffusion::PerturbConfig pc;
  pc.schedule = std::make_shared<diffusion::NoiseSchedule>(diffusion::NoiseSchedule::parse(cfg.schedule));
  pc.seed = cfg.seed;
  Prepared p;
  pc.t = cfg.perturb_t;
  const diffusion::MaskProvider& train_provider = cfg.whole_image ? static_cast<const diffusion::MaskProvider&>(global) : annotated;
  p.train = perturb_all(add_keywords(ws.train, cfg.keyrank), train_provider, pc);
  pc.t = cfg.eval_t;
  const diffusion::MaskProvider& eval_provider = cfg.eval_whole_image ? static_cast<const diffusion::MaskProvider&>(global) : annotated;
  p.heldout = perturb_all(add_keywords(ws.heldout, cfg.keyrank), eval_provider, pc);
  return p;
}

/// Candidate set over both splits, optional random init, then SFT warm-up.
inline policy::ToyPolicy initial_policy(const Prepared& p, const ExperimentConfig& cfg) {
  std::vector<Tokens> extra;
  for (const auto& s : p.heldout) {
    extra.push_back(s.chosen());
    extra.push_back(s.rejected());
  }
  auto pol = policy::ToyPolicy::for_samples(cfg.features, p.train, std::move(extra));
  if (cfg.init_scale > 0) pol.randomize(cfg.seed, cfg.init_scale);
  return train::sft_warmup(p.train, std::move(pol), cfg.warmup_epochs, cfg.warmup_lr, cfg.train.batch_size, cfg.seed);
}

struct RunResult {
  train::TrainResult trained;
  policy::ToyPolicy reference;
  train::EvalReport heldout;
};

inline RunResult run(const Prepared& p, const ExperimentConfig& cfg) {
  auto ref = initial_policy(p, cfg);
  auto trained = train::train(p.train, ref, cfg.train);
  auto report = train::evaluate(trained.policy, ref, p.heldout, cfg.train.loss);
  return {std::move(trained), std::move(ref), std::move(report)};
}

inline RunResult run(const Workspace& ws, const ExperimentConfig& cfg) { return run(prepare(ws, cfg), cfg); }

/// Mean of each logged column over the final epoch.
inline train::TrajectoryRow final_epoch_mean(const train::TrajectoryLog& log) {
  const auto rows = train::final_epoch(log);
  train::TrajectoryRow m;
  if (rows.empty()) return m;
  const double w = 1.0 / static_cast<double>(rows.size());
  m.phase = rows.front().phase;
  m.epoch = rows.front().epoch;
  m.step = rows.back().step;
  for (const auto& r : rows) {
    m.text += w * r.text;
    m.image += w * r.image;
    m.margin += w * r.margin;
    m.total += w * r.total;
    m.rewards.chosen_text += w * r.rewards.chosen_text;
    m.rewards.rejected_text += w * r.rewards.rejected_text;
    m.rewards.chosen_image += w * r.rewards.chosen_image;
    m.rewards.rejected_image += w * r.rewards.rejected_image;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Ablation presets

struct Variant {
  std::string label;
  std::function<void(ExperimentConfig&)> apply;
};

inline std::string terms_label(const losses::LossTerms& t) {
  std::string s;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += "+";
    s += name;
  };
  add(t.text, "text");
  add(t.image, "image");
  add(t.margin, "margin");
  return s;
}

inline const std::map<std::string, std::vector<Variant>>& presets() {
  static const std::map<std::string, std::vector<Variant>> table = [] {
    std::map<std::string, std::vector<Variant>> m;
    auto terms = [](bool t, bool i, bool g) {
      return [=](ExperimentConfig& c) { c.train.terms = {t, i, g}; };
    };
    m["loss-composition"] = {{"text+margin", terms(true, false, true)},
                             {"image+margin", terms(false, true, true)},
                             {"text+image", terms(true, true, false)},
                             {"text+image+margin", terms(true, true, true)}};
    for (double eta : {0.0, 0.2, 0.4}) {
      std::ostringstream label;
      label << "eta=" << eta;
      m["margin"].push_back({label.str(), [eta](ExperimentConfig& c) { c.train.loss.eta = eta; }});
    }
    for (auto [a, b, g] : std::vector<std::array<double, 3>>{{1, 1, 1}, {1, 5, 1}, {5, 1, 1}, {1, 1, 5}}) {
      std::ostringstream label;
      label << a << ":" << b << ":" << g;
      m["loss-ratio"].push_back({label.str(), [a, b, g](ExperimentConfig& c) {
                                   c.train.loss.w_text = a;
                                   c.train.loss.w_image = b;
                                   c.train.loss.w_margin = g;
                                 }});
    }
    m["curriculum"] = {
        {"easy-to-hard", [](ExperimentConfig& c) { c.train.mode = train::CurriculumMode::easy_to_hard; }},
        {"end-to-end", [](ExperimentConfig& c) { c.train.mode = train::CurriculumMode::end_to_end; }}};
    for (std::size_t t : {100, 300, 500, 700, 900}) {
      m["noise-sweep"].push_back({"t=" + std::to_string(t), [t](ExperimentConfig& c) {
                                    c.perturb_t = t;
                                    c.whole_image = true;
                                    c.eval_whole_image = true;
                                  }});
    }
    return m;
  }();
  return table;
}

inline std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto& [k, v] : presets()) names.push_back(k);
  return names;
}

inline const std::vector<Variant>& find_preset(const std::string& name) {
  auto it = presets().find(name);
  if (it == presets().end()) {
    std::string list;
    for (const auto& n : preset_names()) list += (list.empty() ? "" : ", ") + n;
    throw ValidationError("unknown preset '" + name + "'; available presets: " + list);
  }
  return it->second;
}

struct AblationRow {
  std::string preset;
  std::string label;
  ExperimentConfig config;
  std::size_t steps = 0;
  train::TrajectoryRow final_epoch;  ///< training-log means over the final epoch
  train::EvalReport heldout;
};

inline std::vector<AblationRow> run_ablation(const std::string& preset, const Workspace& ws,
                                             const ExperimentConfig& base) {
  const auto& variants = find_preset(preset);
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    ExperimentConfig cfg = base;
    v.apply(cfg);
    const auto r = run(ws, cfg);
    rows.push_back({preset, v.label, cfg, r.trained.steps, final_epoch_mean(r.trained.log), r.heldout});
  }
  return rows;
}

/// The accuracy column is a synthetic stand-in for hallucination benchmarks.
inline void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "preset,config,seed,terms,w_text,w_image,w_margin,eta,mode,perturb_t,steps,"
         "final_text_loss,final_image_loss,final_margin_loss,final_total_loss,"
         "final_text_reward_gap,final_image_reward_gap,final_chosen_text_reward,"
         "heldout_text_reward_gap,heldout_image_reward_gap,synthetic_pref_accuracy_standin\n";
  out.precision(10);
  for (const auto& r : rows) {
    const auto& c = r.config;
    out << r.preset << ',' << r.label << ',' << c.seed << ',' << terms_label(c.train.terms) << ',' << c.train.loss.w_text
        << ',' << c.train.loss.w_image << ',' << c.train.loss.w_margin << ',' << c.train.loss.eta << ','
        << (c.train.mode == train::CurriculumMode::easy_to_hard ? "easy-to-hard" : "end-to-end") << ','
        << c.perturb_t << ',' << r.steps << ',' << r.final_epoch.text << ',' << r.final_epoch.image << ','
        << r.final_epoch.margin << ',' << r.final_epoch.total << ',' << r.final_epoch.rewards.text_gap() << ','
        << r.final_epoch.rewards.image_gap() << ',' << r.final_epoch.rewards.chosen_text << ','
        << r.heldout.mean.rewards.text_gap() << ',' << r.heldout.mean.rewards.image_gap() << ','
        << r.heldout.preference_accuracy << '\n';
  }
}

}  // namespace mfpo::experiment
