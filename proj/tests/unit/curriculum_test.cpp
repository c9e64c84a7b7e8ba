#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "mfpo/curriculum.hpp"
#include "oracles.hpp"

using namespace mfpo;
using namespace mfpo::curriculum;

TEST(Entropy, Examples) {
  const std::vector<double> one_hot{0, 1, 0, 0};
  EXPECT_EQ(entropy(one_hot), 0.0);
  for (std::size_t n : {2u, 3u, 7u, 100u}) {
    const std::vector<double> u(n, 1.0 / static_cast<double>(n));
    EXPECT_NEAR(entropy(u), std::log(static_cast<double>(n)), 1e-12);
  }
  const std::vector<double> p{0.5, 0.25, 0.25};
  EXPECT_NEAR(entropy(p), 1.0397, 1e-4);
  EXPECT_NEAR(entropy(p), 1.5 * std::log(2.0), 1e-15);
}

TEST(Entropy, RejectsInvalidDistributions) {
  EXPECT_THROW(entropy(std::vector<double>{0.5, 0.6}), ValidationError);
  EXPECT_THROW(entropy(std::vector<double>{1.5, -0.5}), ValidationError);
  EXPECT_THROW(entropy(std::vector<double>{NAN, 1.0}), ValidationError);
  EXPECT_THROW(entropy(std::vector<double>{}), ValidationError);
}

TEST(Entropy, BoundedByLogN) {
  std::mt19937_64 gen(1);
  std::exponential_distribution<double> ex(1.0);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + gen() % 20;
    std::vector<double> p(n);
    double z = 0;
    for (auto& v : p) z += (v = ex(gen));
    for (auto& v : p) v /= z;
    const double h = entropy(p);
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(static_cast<double>(n)) + 1e-12);
  }
}

TEST(Plan, TertileSizes) {
  EXPECT_EQ(tertile_sizes(9), (std::array<std::size_t, 3>{3, 3, 3}));
  EXPECT_EQ(tertile_sizes(10), (std::array<std::size_t, 3>{4, 3, 3}));
  EXPECT_EQ(tertile_sizes(11), (std::array<std::size_t, 3>{4, 4, 3}));
  EXPECT_EQ(tertile_sizes(1), (std::array<std::size_t, 3>{1, 0, 0}));
}

TEST(Plan, AscendingEntropyIntoBuckets) {
  std::vector<Scored> s;
  for (int i = 0; i < 10; ++i) s.push_back({"s" + std::to_string(i), 0.1 * ((i * 7) % 10)});
  const auto plan = make_plan(s);
  ASSERT_EQ(plan.bucket(Difficulty::easy).size(), 4u);
  ASSERT_EQ(plan.bucket(Difficulty::medium).size(), 3u);
  ASSERT_EQ(plan.bucket(Difficulty::hard).size(), 3u);
  for (std::size_t i = 1; i < plan.scored.size(); ++i) EXPECT_LE(plan.scored[i - 1].entropy, plan.scored[i].entropy);
  EXPECT_EQ(plan.bucket(Difficulty::easy).front(), "s0");
  EXPECT_EQ(plan.bucket(Difficulty::hard).back(), "s7");
}

TEST(Plan, EqualEntropySplitsById) {
  std::vector<Scored> s;
  for (const char* id : {"f", "c", "a", "e", "b", "d"}) s.push_back({id, 0.7});
  const auto plan = make_plan(s);
  EXPECT_EQ(plan.bucket(Difficulty::easy), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(plan.bucket(Difficulty::medium), (std::vector<std::string>{"c", "d"}));
  EXPECT_EQ(plan.bucket(Difficulty::hard), (std::vector<std::string>{"e", "f"}));
}

TEST(Plan, RejectsEmptyAndDuplicateIds) {
  EXPECT_THROW(make_plan({}), ValidationError);
  EXPECT_THROW(make_plan({{"a", 0.1}, {"a", 0.2}}), ValidationError);
}

TEST(Plan, PartitionProperty) {
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> u(0, 3);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + gen() % 40;
    std::vector<Scored> s;
    for (std::size_t i = 0; i < n; ++i) {
      const double h = gen() % 4 == 0 ? 1.0 : u(gen);  // frequent ties
      s.push_back({"id" + std::to_string(i), h});
    }
    const auto plan = make_plan(s);
    std::set<std::string> seen;
    std::array<double, 3> lo{INFINITY, INFINITY, INFINITY}, hi{-INFINITY, -INFINITY, -INFINITY};
    std::map<std::string, double> h;
    for (const auto& x : s) h[x.id] = x.entropy;
    for (std::size_t b = 0; b < 3; ++b) {
      const auto ids = plan.bucket(kPhaseOrder[b]);
      EXPECT_EQ(ids.size(), tertile_sizes(n)[b]);
      for (const auto& id : ids) {
        EXPECT_TRUE(seen.insert(id).second);
        lo[b] = std::min(lo[b], h[id]);
        hi[b] = std::max(hi[b], h[id]);
      }
    }
    EXPECT_EQ(seen.size(), n);
    if (n >= 3) {
      EXPECT_LE(hi[0], lo[1]);
      EXPECT_LE(hi[1], lo[2]);
    }
  }
}

TEST(Phases, RunInOrderWithPlanBuckets) {
  const auto plan = make_plan({{"a", 0.3}, {"b", 0.1}, {"c", 0.2}}, 2);
  std::vector<Difficulty> order;
  const auto out = iterate_phases(plan, [&](Difficulty d, const std::vector<std::string>& ids, int epochs) {
    order.push_back(d);
    EXPECT_EQ(epochs, 2);
    EXPECT_EQ(ids.size(), 1u);
    return std::vector<double>{static_cast<double>(order.size())};
  });
  EXPECT_EQ(order, (std::vector<Difficulty>{Difficulty::easy, Difficulty::medium, Difficulty::hard}));
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].ids, (std::vector<std::string>{"b"}));
  EXPECT_EQ(out[1].ids, (std::vector<std::string>{"c"}));
  EXPECT_EQ(out[2].ids, (std::vector<std::string>{"a"}));
  EXPECT_EQ(out[2].losses, (std::vector<double>{3.0}));
}

TEST(Phases, RescoreRebuildsLaterBuckets) {
  const auto plan = make_plan({{"a", 0.1}, {"b", 0.2}, {"c", 0.3}});
  int calls = 0;
  const auto out = iterate_phases(
      plan, [](Difficulty, const std::vector<std::string>&, int) { return std::vector<double>{}; },
      [&] {
        ++calls;
        return std::vector<Scored>{{"a", 0.9}, {"b", 0.5}, {"c", 0.1}};
      });
  EXPECT_EQ(calls, 2);
  EXPECT_EQ(out[0].ids, (std::vector<std::string>{"a"}));
  EXPECT_EQ(out[1].ids, (std::vector<std::string>{"b"}));
  EXPECT_EQ(out[2].ids, (std::vector<std::string>{"a"}));
}

TEST(Phases, ErrorsNameThePhase) {
  const auto plan = make_plan({{"a", 0.1}, {"b", 0.2}, {"c", 0.3}});
  try {
    iterate_phases(plan, [](Difficulty d, const std::vector<std::string>&, int) -> std::vector<double> {
      if (d == Difficulty::medium) throw DivergenceError("nan");
      return {};
    });
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("curriculum phase 'medium'"), std::string::npos);
  }
  try {
    iterate_phases(plan, [](Difficulty, const std::vector<std::string>&, int) -> std::vector<double> {
      throw ValidationError("bad");
    });
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("curriculum phase 'easy'"), std::string::npos);
  }
}

TEST(Scoring, UniformPolicyGivesLogN) {
  std::mt19937_64 gen(3);
  std::vector<PreferenceSample> s;
  for (int i = 0; i < 5; ++i) s.push_back(fixture::random_sample(gen, "s" + std::to_string(i)));
  const auto pol = policy::ToyPolicy::for_samples(fixture::small_features(), s, {{"x"}, {"y"}});
  const auto scored = score_dataset(pol, s);
  ASSERT_EQ(scored.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(scored[i].id, s[i].id());
    EXPECT_NEAR(scored[i].entropy, std::log(static_cast<double>(pol.candidate_count())), 1e-12);
  }
}

TEST(Scoring, AnnotateWritesEntropyAndBucket) {
  std::mt19937_64 gen(4);
  std::vector<PreferenceSample> s;
  for (int i = 0; i < 6; ++i) s.push_back(fixture::random_sample(gen, "s" + std::to_string(i)));
  auto pol = policy::ToyPolicy::for_samples(fixture::small_features(), s);
  pol.randomize(5, 1.0);
  const auto plan = make_plan(score_dataset(pol, s));
  const auto out = annotate(s, plan);
  for (const auto& x : out) {
    ASSERT_TRUE(x.entropy() && x.difficulty());
    EXPECT_EQ(*x.difficulty(), plan.buckets.at(x.id()));
  }
}
