// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <set>
#include <string>

#include "mfpo/experiment.hpp"
#include "mfpo/synthetic.hpp"
#include "oracles.hpp"

using namespace mfpo;
using policy::ToyPolicy;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(int n, double budget_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool in_time = secs < budget_s;
  const bool pass = o.pass && in_time;
  failures += !pass;
  std::printf("criterion %d: %s  %s  [%.2fs of %.0fs]%s\n", n, pass ? "PASS" : "FAIL", o.detail.c_str(), secs,
              budget_s, in_time ? "" : " over time budget");
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// Shared synthetic setup for the training criteria

experiment::Workspace synthetic_workspace(std::uint64_t seed) {
  synth::SynthSpec spec;  // 200 train samples
  auto task = synth::make_synthetic_task(spec, seed);
  return {std::move(task.train), std::move(task.heldout), std::move(task.annotations)};
}

experiment::ExperimentConfig base_config(std::uint64_t seed) {
  experiment::ExperimentConfig c;  // 3 epochs per phase
  c.seed = seed;
  c.train.seed = seed;
  return c;
}

experiment::AblationRow row_for(const std::vector<experiment::AblationRow>& rows, const std::string& label) {
  for (const auto& r : rows)
    if (r.label == label) return r;
  throw Error("no ablation row '" + label + "'");
}

// ---------------------------------------------------------------------------

Outcome closed_form_baselines() {
  std::mt19937_64 gen(101);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    auto s = fixture::random_sample(gen, "s");
    const std::vector<PreferenceSample> one{s};
    auto ref = ToyPolicy::for_samples(fixture::small_features(), one, {{"other"}});
    ref.randomize(gen(), 1.0);
    losses::LossConfig cfg;
    cfg.beta = 0.05 + 0.05 * trial;
    const auto b = losses::total_loss(ref, ref, s, cfg);
    const double ln2 = std::numbers::ln2;
    for (double err : {b.text - ln2, b.image - ln2, b.margin - ln2, b.total - 3 * ln2}) worst = std::max(worst, std::abs(err));
  }
  return {worst <= 1e-12, fmt("max |L - ln2 baseline| = %.3g over 50 reference policies", worst)};
}

Outcome gradient_oracle() {
  std::mt19937_64 gen(202);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0;
  const int configs = 120;
  auto fd = [](const ToyPolicy& live, const std::function<double(const ToyPolicy&)>& f) {
    return oracle::central_diff(
        [&](std::span<const double> th) {
          auto p = live;
          p.set_params({th.begin(), th.end()});
          return f(p);
        },
        {live.params().begin(), live.params().end()}, 1e-5);
  };
  for (int trial = 0; trial < configs; ++trial) {
    const auto x = fixture::random_sample(gen, "a");
    const auto y = fixture::random_sample(gen, "b");
    const std::vector<PreferenceSample> both{x, y};
    auto ref = ToyPolicy::for_samples(fixture::small_features(), both, {{"distractor"}});
    ref.randomize(gen(), 0.3);
    auto live = ref;
    live.randomize(gen(), 0.7);
    losses::LossConfig cfg;
    cfg.beta = 0.05 + 2.0 * u(gen);
    cfg.eta = u(gen);
    cfg.w_text = 0.5 + u(gen);
    cfg.w_image = 0.5 + u(gen);
    cfg.w_margin = 0.5 + u(gen);

    // rm loss on scalar rewards
    const double a = 10 * (u(gen) - 0.5), b = 10 * (u(gen) - 0.5), h = 1e-5;
    const auto g = losses::rm_loss_grad(a, b);
    const std::vector<double> rm_a{g[0], g[1]};
    const std::vector<double> rm_n{(losses::rm_loss(a + h, b) - losses::rm_loss(a - h, b)) / (2 * h),
                                   (losses::rm_loss(a, b + h) - losses::rm_loss(a, b - h)) / (2 * h)};
    worst = std::max(worst, oracle::max_relative_error(rm_a, rm_n));

    worst = std::max(worst, oracle::max_relative_error(
                                losses::dpo_loss_grad(live, ref, x.prompt(), x.image(), x.chosen(), x.rejected(), cfg),
                                fd(live, [&](const ToyPolicy& p) {
                                  return losses::dpo_loss(p, ref, x.prompt(), x.image(), x.chosen(), x.rejected(), cfg);
                                })));
    losses::LossConfig unit = cfg;
    unit.w_text = unit.w_image = unit.w_margin = 1;
    worst = std::max(worst, oracle::max_relative_error(losses::term_grad(live, ref, x, unit, {true, false, false}),
                                                       fd(live, [&](const ToyPolicy& p) { return losses::text_loss(p, ref, x, unit); })));
    worst = std::max(worst, oracle::max_relative_error(losses::term_grad(live, ref, x, unit, {false, true, false}),
                                                       fd(live, [&](const ToyPolicy& p) { return losses::image_loss(p, ref, x, unit); })));
    worst = std::max(worst, oracle::max_relative_error(losses::term_grad(live, ref, x, unit, {false, false, true}),
                                                       fd(live, [&](const ToyPolicy& p) { return losses::margin_loss(p, ref, x, unit); })));
    worst = std::max(worst, oracle::max_relative_error(losses::total_loss_grad(live, ref, x, cfg),
                                                       fd(live, [&](const ToyPolicy& p) { return losses::total_loss(p, ref, x, cfg).total; })));
  }
  return {worst < 1e-5, fmt("max relative error %.3g over %d configurations x 6 losses", worst, configs)};
}

Outcome pagerank_oracle() {
  std::mt19937_64 gen(303);
  double worst = 0;
  int order_mismatch = 0, topk_mismatch = 0;
  const int graphs = 100;
  for (int trial = 0; trial < graphs; ++trial) {
    const auto g = fixture::random_graph(gen, 8);
    std::vector<std::size_t> topics;
    for (const auto& n : g.nodes()) topics.push_back(n.topic);
    const auto r = keyrank::rank(g, 0.85, 1e-12, 10000);
    const auto ref = oracle::pagerank(g.size(), g.omega(), topics, 0.85L);
    for (std::size_t i = 0; i < g.size(); ++i) worst = std::max(worst, std::abs(r.scores[i] - static_cast<double>(ref[i])));
    const auto want = oracle::order(g.nodes(), ref);
    order_mismatch += r.order != want;
    for (std::size_t k = 1; k <= g.size(); ++k) {
      std::set<std::string> got, exp;
      for (const auto& kw : keyrank::top_k(g, r, k)) got.insert(kw.word);
      for (std::size_t i = 0; i < k; ++i) exp.insert(g.nodes()[want[i]].word);
      topk_mismatch += got != exp;
    }
  }
  return {worst <= 1e-8 && order_mismatch == 0 && topk_mismatch == 0,
          fmt("max |score - oracle| = %.3g, order mismatches %d, top-K mismatches %d over %d graphs", worst,
              order_mismatch, topk_mismatch, graphs)};
}

Outcome diffusion_moments() {
  using namespace diffusion;
  const int side = 320;  // 102400 pixels
  const auto img = ImageTensor::filled(side, side, 1, 0.8);
  PerturbConfig cfg;
  cfg.schedule = std::make_shared<NoiseSchedule>(NoiseSchedule({0.25}));
  cfg.t = 0;
  cfg.seed = 404;
  cfg.clamp_output = false;
  const auto v = perturb_values(img, RegionMask::full(side, side, "*"), cfg, "moments");
  const double n = static_cast<double>(v.size());
  double s = 0, s2 = 0;
  for (double x : v) s += x;
  const double mean = s / n;
  for (double x : v) s2 += (x - mean) * (x - mean);
  const double sd = std::sqrt(s2 / (n - 1));
  const double sigma = std::sqrt(0.75);
  const double z_mean = std::abs(mean - 0.4) / (sigma / std::sqrt(n));
  const double z_sd = std::abs(sd - sigma) / (sigma / std::sqrt(2 * (n - 1)));

  PerturbConfig near_one = cfg;
  near_one.schedule = std::make_shared<NoiseSchedule>(NoiseSchedule({1 - 1e-14}));
  near_one.clamp_output = true;
  std::mt19937_64 gen(404);
  const auto rnd = fixture::random_image(gen, 64, 64, 3);
  const auto id = perturb_region(rnd, RegionMask::full(64, 64, "*"), near_one, "identity");
  double dev = 0;
  for (std::size_t i = 0; i < rnd.size(); ++i) dev = std::max(dev, std::abs(id.data()[i] - rnd.data()[i]));

  PerturbConfig mid = cfg;
  mid.schedule = std::make_shared<NoiseSchedule>(NoiseSchedule::linear(1000));
  mid.t = 500;
  mid.clamp_output = true;
  const auto mask = *RegionMask::from_rect(64, 64, 10, 20, 30, 15, "k");
  const auto out = perturb_region(rnd, mask, mid, "region");
  std::size_t differing_outside = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      for (int c = 0; c < 3; ++c)
        if (!mask.contains(y, x) && out.at(y, x, c) != rnd.at(y, x, c)) ++differing_outside;

  return {z_mean < 3 && z_sd < 3 && dev < 1e-6 && differing_outside == 0,
          fmt("N=%.0f mean %.5f (%.2f SE), sd %.5f (%.2f SE); identity max dev %.2g; unmasked changes %zu", n, mean,
              z_mean, sd, z_sd, dev, differing_outside)};
}

Outcome entropy_identities() {
  bool ok = true;
  for (std::size_t n = 1; n <= 64; ++n)
    for (std::size_t hot = 0; hot < n; ++hot) {
      std::vector<double> p(n, 0.0);
      p[hot] = 1.0;
      ok = ok && curriculum::entropy(p) == 0.0;
    }
  double worst = 0;
  for (std::size_t n = 2; n <= 64; ++n) {
    const std::vector<double> u(n, 1.0 / static_cast<double>(n));
    worst = std::max(worst, std::abs(curriculum::entropy(u) - std::log(static_cast<double>(n))));
  }
  std::mt19937_64 gen(505);
  std::uniform_real_distribution<double> h(0, 4);
  int broken = 0;
  const int datasets = 2000;
  for (int trial = 0; trial < datasets; ++trial) {
    const std::size_t n = 1 + gen() % 60;
    std::vector<curriculum::Scored> s;
    for (std::size_t i = 0; i < n; ++i) s.push_back({"x" + std::to_string(i), gen() % 3 == 0 ? 1.0 : h(gen)});
    const auto plan = curriculum::make_plan(s);
    std::multiset<std::string> seen;
    for (auto d : curriculum::kPhaseOrder)
      for (const auto& id : plan.bucket(d)) seen.insert(id);
    std::multiset<std::string> all;
    for (const auto& x : s) all.insert(x.id);
    broken += seen != all;
  }
  return {ok && worst <= 1e-12 && broken == 0,
          fmt("one-hot exact %s; max |H(uniform) - ln n| = %.3g; %d of %d plans not a partition", ok ? "yes" : "no",
              worst, broken, datasets)};
}

Outcome reward_balance() {
  const auto ws = synthetic_workspace(0);
  auto cfg = base_config(0);
  const auto prepared = experiment::prepare(ws, cfg);
  const auto full = experiment::final_epoch_mean(experiment::run(prepared, cfg).trained.log);
  cfg.train.terms = {true, false, false};
  const auto text_only = experiment::final_epoch_mean(experiment::run(prepared, cfg).trained.log);
  cfg.train.terms = {true, false, true};
  const auto text_margin = experiment::final_epoch_mean(experiment::run(prepared, cfg).trained.log);
  const double ig = full.rewards.image_gap(), tg = full.rewards.text_gap();
  const double r1 = ig / std::abs(text_only.rewards.image_gap());
  const double r2 = ig / std::abs(text_margin.rewards.image_gap());
  return {ig > 0 && tg > 0 && r1 >= 5 && r2 >= 5,
          fmt("full image gap %.4f, text gap %.4f; image gap ratio vs text-only %.2f, vs text+margin %.2f", ig, tg, r1,
              r2)};
}

Outcome margin_stability() {
  const auto ws = synthetic_workspace(0);
  const auto rows = experiment::run_ablation("loss-composition", ws, base_config(0));
  const double on = row_for(rows, "text+image+margin").final_epoch.rewards.chosen_text;
  const double off = row_for(rows, "text+image").final_epoch.rewards.chosen_text;
  return {on > off, fmt("final-epoch chosen-text reward with margin %.4f, without %.4f", on, off)};
}

Outcome curriculum_benefit() {
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto rows = experiment::run_ablation("curriculum", synthetic_workspace(seed), base_config(seed));
    const auto e2h = row_for(rows, "easy-to-hard"), e2e = row_for(rows, "end-to-end");
    if (e2h.steps != e2e.steps) throw Error("step budgets differ");
    const bool win = e2h.heldout.preference_accuracy >= e2e.heldout.preference_accuracy;
    wins += win;
    detail += fmt(" s%d:%.2f/%.2f", static_cast<int>(seed), e2h.heldout.preference_accuracy, e2e.heldout.preference_accuracy);
  }
  return {wins >= 4, fmt("easy-to-hard >= end-to-end on %d/5 seeds (acc e2h/e2e)", wins) + detail};
}

Outcome noise_sweep() {
  int interior = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto rows = experiment::run_ablation("noise-sweep", synthetic_workspace(seed), base_config(seed));
    double best_edge = -1, best_inner = -1;
    std::size_t best_t = 0;
    double best = -1;
    for (const auto& r : rows) {
      const double a = r.heldout.preference_accuracy;
      const bool edge = r.config.perturb_t == 100 || r.config.perturb_t == 900;
      (edge ? best_edge : best_inner) = std::max(edge ? best_edge : best_inner, a);
      if (a > best) best = a, best_t = r.config.perturb_t;
    }
    interior += best_inner > best_edge;
    detail += fmt(" s%d:t=%zu", static_cast<int>(seed), best_t);
  }
  return {interior >= 4, fmt("strict interior optimum on %d/5 seeds (argmax t)", interior) + detail};
}

bool same_log(const train::TrajectoryLog& a, const train::TrajectoryLog& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto &x = a.rows[i], &y = b.rows[i];
    if (x.phase != y.phase || x.epoch != y.epoch || x.step != y.step || x.text != y.text || x.image != y.image ||
        x.margin != y.margin || x.total != y.total || x.rewards.chosen_text != y.rewards.chosen_text ||
        x.rewards.rejected_text != y.rewards.rejected_text || x.rewards.chosen_image != y.rewards.chosen_image ||
        x.rewards.rejected_image != y.rewards.rejected_image)
      return false;
  }
  return true;
}

Outcome determinism() {
  const auto ws = synthetic_workspace(3);
  bool ok = synthetic_workspace(3).train == ws.train;
  for (const bool whole : {false, true}) {
    auto cfg = base_config(3);
    cfg.whole_image = cfg.eval_whole_image = whole;
    const auto p1 = experiment::prepare(ws, cfg), p2 = experiment::prepare(ws, cfg);
    ok = ok && p1.train == p2.train && p1.heldout == p2.heldout;
    for (auto mode : {train::CurriculumMode::easy_to_hard, train::CurriculumMode::end_to_end}) {
      cfg.train.mode = mode;
      const auto a = experiment::run(p1, cfg), b = experiment::run(p2, cfg);
      ok = ok && a.reference == b.reference && a.trained.policy == b.trained.policy && same_log(a.trained.log, b.trained.log) &&
           a.heldout.preference_accuracy == b.heldout.preference_accuracy &&
           a.heldout.mean.total == b.heldout.mean.total;
    }
  }
  std::ostringstream c1, c2;
  experiment::write_ablation_csv(c1, experiment::run_ablation("margin", ws, base_config(3)));
  experiment::write_ablation_csv(c2, experiment::run_ablation("margin", ws, base_config(3)));
  ok = ok && c1.str() == c2.str();
  return {ok, "data, perturbations, logs, parameters and ablation CSV bit-identical on rerun"};
}

}  // namespace

int main() {
  criterion(1, 1, closed_form_baselines);
  criterion(2, 30, gradient_oracle);
  criterion(3, 10, pagerank_oracle);
  criterion(4, 10, diffusion_moments);
  criterion(5, 10, entropy_identities);
  criterion(6, 120, reward_balance);
  criterion(7, 120, margin_stability);
  criterion(8, 300, curriculum_benefit);
  criterion(9, 600, noise_sweep);
  criterion(10, 600, determinism);
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
