// mfpo: command-line front end for the data pipeline, training and ablations.
//
// Exit codes: 0 success, 2 invalid input or configuration, 3 training
// diverged, 1 any other failure (I/O, external segmenter).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mfpo/curriculum.hpp"
#include "mfpo/dataset.hpp"
#include "mfpo/diffusion.hpp"
#include "mfpo/experiment.hpp"
#include "mfpo/keyrank.hpp"
#include "mfpo/policy.hpp"
#include "mfpo/providers.hpp"
#include "mfpo/report.hpp"
#include "mfpo/synthetic.hpp"
#include "mfpo/trainer.hpp"

namespace fs = std::filesystem;
using namespace mfpo;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  fs::path workspace = ".";
  bool png = false;

  fs::path resolve(const fs::path& p) const { return p.is_absolute() ? p : workspace / p; }
  SaveOptions save_options() const { return {png ? ImageCodec::png8 : ImageCodec::json_float}; }
};

/// Flat `key = value` file; '#' starts a comment.
std::vector<std::pair<std::string, std::string>> read_flat_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r"), e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(lineno, "", "expected key=value");
    auto key = trim(line.substr(0, eq));
    while (!key.empty() && key.front() == '-') key.erase(0, 1);
    if (key.empty()) throw ParseError(lineno, "", "empty key");
    out.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return out;
}

bool given(const std::vector<std::string>& args, const std::string& flag) {
  for (const auto& a : args)
    if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
  return false;
}

/// Splices config-file values into the argument list as `--key=value`
/// unless the flag was given explicitly. Keys the chosen verb does not know
/// are skipped so one file can drive the whole pipeline.
std::vector<std::string> apply_config(CLI::App& app, std::vector<std::string> args) {
  fs::path config;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0) config = args[i].substr(9);
  }
  if (config.empty()) return args;
  CLI::App* verb = nullptr;
  std::size_t verb_pos = args.size();
  for (std::size_t i = 0; i < args.size() && !verb; ++i) {
    for (auto* sub : app.get_subcommands({}))
      if (sub->get_name() == args[i]) {
        verb = sub;
        verb_pos = i;
      }
  }
  std::vector<std::string> global_extra, verb_extra;
  for (const auto& [key, value] : read_flat_config(config)) {
    const std::string flag = "--" + key;
    if (given(args, flag)) continue;
    if (verb && verb->get_option_no_throw(flag)) verb_extra.push_back(flag + "=" + value);
    else if (app.get_option_no_throw(flag)) global_extra.push_back(flag + "=" + value);
    else {
      bool known = false;
      for (auto* sub : app.get_subcommands({})) known = known || sub->get_option_no_throw(flag) != nullptr;
      if (!known) throw ValidationError("config key '" + key + "' is not a known option");
    }
  }
  std::vector<std::string> out(global_extra);
  out.insert(out.end(), args.begin(), args.begin() + static_cast<std::ptrdiff_t>(std::min(verb_pos + 1, args.size())));
  out.insert(out.end(), verb_extra.begin(), verb_extra.end());
  if (verb_pos + 1 < args.size()) out.insert(out.end(), args.begin() + static_cast<std::ptrdiff_t>(verb_pos + 1), args.end());
  return out;
}

// ---------------------------------------------------------------------------
// Shared option groups

struct TrainFlags {
  std::string optimizer = "adam";
  double lr = 1e-2;
  int phase_epochs = 3;
  std::size_t batch_size = 8;
  double beta = 0.1, eta = 0.0, w_text = 1, w_image = 1, w_margin = 1;
  bool no_text = false, no_image = false, no_margin = false;
  std::string mode = "easy-to-hard";
  bool rescore = true;

  void add(CLI::App* c) {
    c->add_option("--optimizer", optimizer, "adam or sgd")->check(CLI::IsMember({"adam", "sgd"}))->capture_default_str();
    c->add_option("--lr", lr, "learning rate")->capture_default_str();
    c->add_option("--phase-epochs", phase_epochs, "epochs per curriculum phase")->capture_default_str();
    c->add_option("--batch-size", batch_size)->capture_default_str();
    c->add_option("--beta", beta)->capture_default_str();
    c->add_option("--eta", eta, "margin")->capture_default_str();
    c->add_option("--w-text", w_text)->capture_default_str();
    c->add_option("--w-image", w_image)->capture_default_str();
    c->add_option("--w-margin", w_margin)->capture_default_str();
    c->add_flag("--no-text", no_text, "disable L_text");
    c->add_flag("--no-image", no_image, "disable L_image");
    c->add_flag("--no-margin", no_margin, "disable L_margin");
    c->add_option("--mode", mode)->check(CLI::IsMember({"easy-to-hard", "end-to-end"}))->capture_default_str();
    c->add_option("--rescore", rescore, "re-score entropy between phases")->capture_default_str();
  }

  train::TrainConfig config(std::uint64_t seed) const {
    train::TrainConfig c;
    c.optimizer = optimizer == "sgd" ? train::OptimizerKind::sgd : train::OptimizerKind::adam;
    c.learning_rate = lr;
    c.phase_epochs = phase_epochs;
    c.batch_size = batch_size;
    c.seed = seed;
    c.loss = {beta, eta, w_text, w_image, w_margin};
    c.terms = {!no_text, !no_image, !no_margin};
    c.mode = mode == "end-to-end" ? train::CurriculumMode::end_to_end : train::CurriculumMode::easy_to_hard;
    c.rescore = rescore;
    c.validate();
    return c;
  }
};

struct PolicyFlags {
  int image_grid = 16;
  int text_dim = 16;
  int response_dim = 16;
  bool length_normalize = false;
  int warmup_epochs = 2;
  double warmup_lr = 0.05;
  std::string heldout;

  void add(CLI::App* c) {
    c->add_option("--image-grid", image_grid, "P for P x P mean pooling")->capture_default_str();
    c->add_option("--text-dim", text_dim)->capture_default_str();
    c->add_option("--response-dim", response_dim)->capture_default_str();
    c->add_flag("--length-normalize", length_normalize, "divide log-probabilities by response length");
    c->add_option("--warmup-epochs", warmup_epochs, "supervised epochs on chosen responses")->capture_default_str();
    c->add_option("--warmup-lr", warmup_lr)->capture_default_str();
    c->add_option("--heldout", heldout, "extra dataset whose responses join the candidate set");
  }

  policy::ToyPolicy build(const Globals& g, const std::vector<PreferenceSample>& samples, std::size_t batch) const {
    policy::FeatureConfig fc;
    fc.image_grid = image_grid;
    fc.text_dim = text_dim;
    fc.response_dim = response_dim;
    std::vector<Tokens> extra;
    if (!heldout.empty()) {
      for (const auto& s : load_dataset(g.resolve(heldout))) {
        extra.push_back(s.chosen());
        extra.push_back(s.rejected());
      }
    }
    auto pol = policy::ToyPolicy::for_samples(fc, samples, std::move(extra), {length_normalize});
    return train::sft_warmup(samples, std::move(pol), warmup_epochs, warmup_lr, batch, g.seed);
  }
};

void print_eval(const train::EvalReport& r) {
  std::printf("samples                     %zu\n", r.count);
  std::printf("synthetic_pref_accuracy     %.6f  (stand-in metric)\n", r.preference_accuracy);
  std::printf("text_accuracy               %.6f\n", r.text_accuracy);
  std::printf("image_accuracy              %.6f\n", r.image_accuracy);
  std::printf("L_text L_image L_margin     %.6f %.6f %.6f\n", r.mean.text, r.mean.image, r.mean.margin);
  std::printf("text_reward_gap             %.6f\n", r.mean.rewards.text_gap());
  std::printf("image_reward_gap            %.6f\n", r.mean.rewards.image_gap());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Modality-fair preference optimization toolkit"};
  app.require_subcommand(1);
  Globals g;
  std::string config_path;
  app.add_option("--seed", g.seed, "seed for every random draw")->capture_default_str();
  app.add_option("--workspace", g.workspace, "directory that relative paths resolve against")->capture_default_str();
  app.add_option("--config", config_path, "flat key=value file; command-line flags win");
  app.add_flag("--png", g.png, "store images as 8-bit PNG files instead of inline floats");

  // gen-synth
  auto* gen = app.add_subcommand("gen-synth", "write a seeded synthetic task into the workspace");
  synth::SynthSpec spec;
  gen->add_option("--n-train", spec.n_train)->capture_default_str();
  gen->add_option("--n-heldout", spec.n_heldout)->capture_default_str();
  gen->add_option("--size", spec.height, "image side in pixels")->capture_default_str();
  gen->add_option("--swap-rate", spec.swap_rate, "fraction of rejected responses naming a wrong object")->capture_default_str();

  // keyrank
  auto* kr = app.add_subcommand("keyrank", "select top-K keywords of each chosen response");
  std::string kr_in, kr_out;
  keyrank::Params kp;
  kr->add_option("--in", kr_in)->required();
  kr->add_option("--out", kr_out)->required();
  kr->add_option("--k", kp.k)->capture_default_str();
  kr->add_option("--phi", kp.phi)->capture_default_str();
  kr->add_option("--gamma", kp.gamma)->capture_default_str();
  kr->add_option("--lambda", kp.lambda)->capture_default_str();
  kr->add_option("--damping", kp.damping)->capture_default_str();
  kr->add_option("--rho", kp.rho)->capture_default_str();
  kr->add_option("--window", kp.context_window, "context window for the topic boost")->capture_default_str();
  kr->add_flag("--include-prompt", kp.include_prompt, "rank prompt and chosen response together");

  // perturb
  auto* pt = app.add_subcommand("perturb", "noise keyword regions to build dispreferred images");
  std::string pt_in, pt_out, pt_ann, pt_cmd, pt_schedule = "linear:1000";
  std::size_t pt_t = 500;
  bool pt_whole = false;
  pt->add_option("--in", pt_in)->required();
  pt->add_option("--out", pt_out)->required();
  auto* ann_opt = pt->add_option("--annotations", pt_ann, "annotation JSON mapping (image id, keyword) to regions");
  auto* cmd_opt = pt->add_option("--segmenter", pt_cmd, "external command; may use {image} {keyword} {out}");
  ann_opt->excludes(cmd_opt);
  pt->add_option("--t", pt_t, "diffusion step")->capture_default_str();
  pt->add_option("--schedule", pt_schedule, "linear:T[:v0:v1] or const:T:beta")->capture_default_str();
  pt->add_flag("--whole-image", pt_whole, "ignore regions and noise every image globally");

  // init-policy
  auto* ip = app.add_subcommand("init-policy", "build the candidate set and warm up a reference policy");
  std::string ip_in, ip_out;
  PolicyFlags ip_flags;
  std::size_t ip_batch = 8;
  ip->add_option("--in", ip_in)->required();
  ip->add_option("--out", ip_out)->required();
  ip->add_option("--batch-size", ip_batch)->capture_default_str();
  ip_flags.add(ip);

  // entropy-sort
  auto* es = app.add_subcommand("entropy-sort", "annotate records with entropy and difficulty");
  std::string es_in, es_out, es_ckpt;
  es->add_option("--in", es_in)->required();
  es->add_option("--out", es_out)->required();
  es->add_option("--ckpt", es_ckpt)->required();

  // train
  auto* tr = app.add_subcommand("train", "train a policy on L_total");
  std::string tr_in, tr_out, tr_ref_out, tr_init, tr_log;
  TrainFlags tr_flags;
  PolicyFlags tr_policy;
  tr->add_option("--in", tr_in, "perturbed (optionally entropy-sorted) dataset")->required();
  tr->add_option("--out", tr_out, "trained checkpoint")->required();
  tr->add_option("--ref-out", tr_ref_out, "where to write the reference checkpoint");
  tr->add_option("--init", tr_init, "start from this checkpoint instead of a fresh warm-up");
  tr->add_option("--log", tr_log, "trajectory CSV");
  tr_flags.add(tr);
  tr_policy.add(tr);

  // eval
  auto* ev = app.add_subcommand("eval", "held-out accuracy and rewards of a checkpoint");
  std::string ev_ckpt, ev_ref, ev_in;
  losses::LossConfig ev_loss;
  ev->add_option("--ckpt", ev_ckpt)->required();
  ev->add_option("--ref", ev_ref)->required();
  ev->add_option("--in", ev_in, "perturbed dataset")->required();
  ev->add_option("--beta", ev_loss.beta)->capture_default_str();
  ev->add_option("--eta", ev_loss.eta)->capture_default_str();

  // ablate
  auto* ab = app.add_subcommand("ablate", "run an ablation preset on the workspace task");
  std::string ab_preset, ab_out;
  std::size_t ab_t = 500;
  TrainFlags ab_flags;
  ab->add_option("--preset", ab_preset, "one of: " + [] {
    std::string s;
    for (const auto& n : experiment::preset_names()) s += (s.empty() ? "" : ", ") + n;
    return s;
  }())->required();
  ab->add_option("--out", ab_out, "CSV path (default ablation-<preset>.csv)");
  ab->add_option("--t", ab_t, "perturbation step for presets that do not sweep it")->capture_default_str();
  ab_flags.add(ab);

  // report
  auto* rp = app.add_subcommand("report", "write plot data for a trajectory log");
  std::string rp_log, rp_out = "report";
  rp->add_option("--log", rp_log)->required();
  rp->add_option("--out", rp_out, "output directory")->capture_default_str();

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    args = apply_config(app, args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*gen) {
      spec.width = spec.height;
      const auto task = synth::make_synthetic_task(spec, g.seed);
      experiment::save_workspace({task.train, task.heldout, task.annotations}, g.workspace, g.save_options());
      std::printf("wrote %zu train and %zu held-out samples to %s\n", task.train.size(), task.heldout.size(),
                  g.workspace.string().c_str());
    } else if (*kr) {
      const auto samples = load_dataset(g.resolve(kr_in));
      save_dataset(experiment::add_keywords(samples, kp), g.resolve(kr_out), g.save_options());
    } else if (*pt) {
      diffusion::PerturbConfig pc;
      pc.schedule = std::make_shared<diffusion::NoiseSchedule>(diffusion::NoiseSchedule::parse(pt_schedule));
      pc.t = pt_t;
      pc.seed = g.seed;
      std::unique_ptr<diffusion::MaskProvider> provider;
      if (pt_whole) provider = std::make_unique<experiment::NoRegionProvider>();
      else if (!pt_cmd.empty()) provider = std::make_unique<diffusion::CommandMaskProvider>(pt_cmd, g.resolve(".mfpo-seg"));
      else if (!pt_ann.empty()) provider = std::make_unique<diffusion::AnnotationMaskProvider>(diffusion::AnnotationMaskProvider::from_file(g.resolve(pt_ann)));
      else throw ValidationError("perturb needs --annotations, --segmenter or --whole-image");
      const auto samples = load_dataset(g.resolve(pt_in));
      save_dataset(experiment::perturb_all(samples, *provider, pc), g.resolve(pt_out), g.save_options());
    } else if (*ip) {
      const auto samples = load_dataset(g.resolve(ip_in));
      policy::save_checkpoint(ip_flags.build(g, samples, ip_batch), g.resolve(ip_out));
    } else if (*es) {
      const auto samples = load_dataset(g.resolve(es_in));
      const auto pol = policy::load_checkpoint(g.resolve(es_ckpt));
      const auto plan = curriculum::make_plan(curriculum::score_dataset(pol, samples));
      save_dataset(curriculum::annotate(samples, plan), g.resolve(es_out), g.save_options());
    } else if (*tr) {
      const auto cfg = tr_flags.config(g.seed);
      const auto samples = load_dataset(g.resolve(tr_in));
      const auto ref = tr_init.empty() ? tr_policy.build(g, samples, cfg.batch_size) : policy::load_checkpoint(g.resolve(tr_init));
      const auto result = train::train(samples, ref, cfg);
      policy::save_checkpoint(result.policy, g.resolve(tr_out));
      const fs::path ref_out = tr_ref_out.empty() ? g.resolve(tr_out).replace_extension(".ref.json") : g.resolve(tr_ref_out);
      policy::save_checkpoint(ref, ref_out);
      if (!tr_log.empty()) {
        std::ofstream out(g.resolve(tr_log), std::ios::trunc);
        if (!out) throw IoError("cannot open '" + g.resolve(tr_log).string() + "'");
        report::write_trajectory_csv(result.log, out);
      }
      const auto last = experiment::final_epoch_mean(result.log);
      std::printf("steps %zu  final-epoch L_total %.6f  text gap %.6f  image gap %.6f\n", result.steps, last.total,
                  last.rewards.text_gap(), last.rewards.image_gap());
    } else if (*ev) {
      const auto pol = policy::load_checkpoint(g.resolve(ev_ckpt));
      const auto ref = policy::load_checkpoint(g.resolve(ev_ref));
      ev_loss.validate();
      print_eval(train::evaluate(pol, ref, load_dataset(g.resolve(ev_in)), ev_loss));
    } else if (*ab) {
      const auto ws = experiment::load_workspace(g.workspace);
      experiment::ExperimentConfig base;
      base.seed = g.seed;
      base.perturb_t = ab_t;
      base.train = ab_flags.config(g.seed);
      const auto rows = experiment::run_ablation(ab_preset, ws, base);
      const fs::path out_path = g.resolve(ab_out.empty() ? "ablation-" + ab_preset + ".csv" : ab_out);
      std::ofstream out(out_path, std::ios::trunc);
      if (!out) throw IoError("cannot open '" + out_path.string() + "'");
      experiment::write_ablation_csv(out, rows);
      experiment::write_ablation_csv(std::cout, rows);
    } else if (*rp) {
      std::ifstream in(g.resolve(rp_log));
      if (!in) throw IoError("cannot open '" + g.resolve(rp_log).string() + "'");
      const auto files = report::write_report(report::read_trajectory_csv(in), g.resolve(rp_out));
      std::printf("wrote %s, %s, %s\n", files.csv.string().c_str(), files.rewards.string().c_str(),
                  files.losses.string().c_str());
    }
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return 3;
  } catch (const ValidationError& e) {
    std::cerr << "invalid: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
