#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "statml/boost.hpp"

using namespace statml;
using namespace statml::boost;

namespace {

WeightedDataset four_items() {
  return WeightedDataset::uniform({{0.1, 0}, {0.2, 0}, {0.7, 1}, {0.9, 1}});
}

// Wrong exactly on the items whose x is listed.
Hypothesis wrong_on(const WeightedDataset& ds, std::vector<double> xs) {
  const auto truth = ds.items();
  return Hypothesis([truth, xs](double x) {
    for (const auto& it : truth)
      if (it.x == x) return std::find(xs.begin(), xs.end(), x) != xs.end() ? 1 - it.y : it.y;
    return 0;
  });
}

Hypothesis constant(int label) {
  return Hypothesis([label](double) { return label; });
}

}  // namespace

TEST(EmpiricalRisk, Examples) {
  const auto ds = four_items();
  EXPECT_EQ(empirical_risk(threshold_concept(0.5), ds), 0.0);
  EXPECT_DOUBLE_EQ(empirical_risk(constant(1), ds), 0.5);

  const WeightedDataset skewed({{0.1, 0}, {0.2, 0}, {0.7, 1}}, DiscreteDistribution({0.3, 0.2, 0.5}));
  EXPECT_DOUBLE_EQ(empirical_risk(wrong_on(skewed, {0.1}), skewed), 0.3);
}

TEST(ReweightD2, Examples) {
  const auto ds = four_items();
  const auto balanced = reweight_d2(ds, wrong_on(ds, {0.1, 0.7}));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(balanced.weight(i), 0.25, 1e-15);

  const auto d2 = reweight_d2(ds, wrong_on(ds, {0.2}));
  EXPECT_NEAR(d2.weight(1), 0.5, 1e-15);
  for (std::size_t i : {0u, 2u, 3u}) EXPECT_NEAR(d2.weight(i), 1.0 / 6.0, 1e-15);

  EXPECT_THROW(reweight_d2(ds, threshold_concept(0.5)), DegenerateSplitError);
  EXPECT_THROW(reweight_d2(ds, wrong_on(ds, {0.1, 0.2, 0.7, 0.9})), DegenerateSplitError);
}

TEST(ReweightD2, BalancesOnRandomDistributions) {
  RngStream rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.uniform_index(40);
    std::vector<LabeledItem> items(n);
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
      items[i] = {static_cast<double>(i), static_cast<int>(rng.uniform_index(2))};
      w[i] = rng.uniform() + 1e-3;
    }
    const WeightedDataset ds(items, DiscreteDistribution::from_weights(w));
    const std::uint64_t salt = rng();
    const Hypothesis h([salt, items](double x) {
      const auto i = static_cast<std::size_t>(x);
      return (splitmix64(salt + i) & 1U) ? 1 - items[i].y : items[i].y;
    });
    const double e = empirical_risk(h, ds);
    if (e == 0.0 || e == 1.0) continue;
    const auto d2 = reweight_d2(ds, h);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += d2.weight(i);
    EXPECT_NEAR(total, 1.0, 1e-12);
    EXPECT_NEAR(empirical_risk(h, d2), 0.5, 1e-12);
  }
}

TEST(ReweightD3, Examples) {
  const auto ds = four_items();
  EXPECT_THROW(reweight_d3(ds, constant(1), constant(1)), DegenerateSplitError);

  const auto h1 = threshold_concept(0.5), h2 = wrong_on(ds, {0.9});
  const auto point = reweight_d3(ds, h1, h2);
  EXPECT_DOUBLE_EQ(point.weight(3), 1.0);
  EXPECT_DOUBLE_EQ(point.weight(0), 0.0);

  const WeightedDataset skewed({{0.1, 0}, {0.2, 0}, {0.7, 1}}, DiscreteDistribution({0.1, 0.6, 0.3}));
  const auto d3 = reweight_d3(skewed, threshold_concept(0.5), wrong_on(skewed, {0.1, 0.7}));
  EXPECT_NEAR(d3.weight(0), 0.25, 1e-15);
  EXPECT_NEAR(d3.weight(1), 0.0, 1e-15);
  EXPECT_NEAR(d3.weight(2), 0.75, 1e-15);
}

TEST(MajorityVote, Examples) {
  EXPECT_EQ(majority_vote(constant(1), constant(1), constant(1))(0.3), 1);
  EXPECT_EQ(majority_vote(constant(1), constant(1), constant(0))(0.3), 1);
  EXPECT_EQ(majority_vote(constant(0), constant(1), constant(1))(0.3), 1);
  EXPECT_EQ(majority_vote(constant(0), constant(0), constant(1))(0.3), 0);
  EXPECT_EQ(majority_vote(constant(1), constant(0), constant(0))(0.3), 0);

  RngStream rng(42);
  const auto ds = threshold_dataset(500, 0.4, rng);
  const auto h = synthetic_weak_learner(threshold_concept(0.4), 0.1).train(ds, rng);
  const auto hhh = majority_vote(h, h, h);
  const auto other = constant(0);
  for (const auto& it : ds.items()) {
    EXPECT_EQ(hhh(it.x), h(it.x));
    EXPECT_EQ(majority_vote(h, h, other)(it.x), h(it.x));
  }
}

TEST(ErrorBound, Examples) {
  EXPECT_EQ(boost_error_bound(0.5), 0.0);
  EXPECT_EQ(boost_error_bound(0.0), 0.5);
  EXPECT_NEAR(boost_error_bound(0.1), 0.352, 1e-12);
  EXPECT_THROW(boost_error_bound(-0.01), ValidationError);
  EXPECT_THROW(boost_error_bound(0.51), ValidationError);
}

TEST(ErrorBound, StrictImprovementAndMonotone) {
  double prev = boost_error_bound(0.0);
  for (int k = 1; k < 500; ++k) {
    const double gamma = k * 1e-3;
    const double b = boost_error_bound(gamma);
    EXPECT_LT(b, 0.5 - gamma);
    EXPECT_LT(b, prev);
    prev = b;
  }
}

TEST(BoostDepth, Examples) {
  EXPECT_EQ(boost_depth(0.1, 0.352), 1);
  EXPECT_EQ(boost_depth(0.1, 0.4), 0);
  EXPECT_EQ(boost_depth(0.2, 0.45), 0);
  // 0.4 -> 0.352 -> 0.28448 -> 0.19675 -> 0.10090 -> 0.02849
  EXPECT_EQ(boost_depth(0.1, 0.1), 5);
  EXPECT_EQ(boost_depth(0.1, 0.101), 4);
  EXPECT_THROW(boost_depth(0.0, 0.3), ConvergenceError);
  EXPECT_THROW(boost_depth(0.1, 0.0), ValidationError);
}

TEST(SyntheticWeakLearner, MeetsContractAndIsDeterministic) {
  RngStream rng(43);
  const auto ds = threshold_dataset(2000, 0.5, rng);
  const auto weak = synthetic_weak_learner(threshold_concept(0.5), 0.1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto h = weak.train(ds, rng);
    const double e = empirical_risk(h, ds);
    EXPECT_LE(e, 0.4 + 1e-12);
    EXPECT_GT(e, 0.3);
    for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(h(ds.item(i).x), h(ds.item(i).x));
  }
  EXPECT_THROW(synthetic_weak_learner(threshold_concept(0.5), 0.0), ValidationError);
}

TEST(Boost3, PerfectLearnerPassesThrough) {
  RngStream rng(44);
  const auto ds = threshold_dataset(300, 0.3, rng);
  const WeakLearner perfect{[](const WeightedDataset&, RngStream&) { return threshold_concept(0.3); }, 0.5};
  const auto r = boost3(perfect, ds, rng);
  EXPECT_EQ(r.diagnostics.final_err, 0.0);
  EXPECT_FALSE(r.diagnostics.h2_err.has_value());
  EXPECT_EQ(empirical_risk(r.hypothesis, ds), 0.0);
}

TEST(Boost3, SyntheticLearnerBeatsBaseError) {
  RngStream rng(45);
  int within = 0;
  for (int seed = 0; seed < 20; ++seed) {
    RngStream local = rng.substream(seed);
    const auto ds = threshold_dataset(10000, 0.5, local);
    const auto r = boost3(synthetic_weak_learner(threshold_concept(0.5), 0.1), ds, local);
    EXPECT_LE(r.diagnostics.h1_err, 0.4 + 1e-12);
    EXPECT_LE(*r.diagnostics.h2_err, 0.4 + 1e-12);
    EXPECT_LE(*r.diagnostics.h3_err, 0.4 + 1e-12);
    EXPECT_NEAR(r.diagnostics.bound, 0.352, 1e-12);
    within += r.diagnostics.final_err <= 0.352 + 0.05;
  }
  EXPECT_GE(within, 18);
}

TEST(Boost3, DegenerateWeakLearnerIsReported) {
  const auto ds = four_items();
  RngStream rng(46);
  // Always answers with h1 = constant 1, so D3 has no disagreement.
  const WeakLearner stubborn{[](const WeightedDataset&, RngStream&) { return constant(1); }, 0.1};
  try {
    boost3(stubborn, ds, rng);
    FAIL() << "expected DegenerateSplitError";
  } catch (const DegenerateSplitError& e) {
    EXPECT_NE(std::string(e.what()).find("boost3"), std::string::npos);
  }
}

TEST(BoostRecursive, ReachesTargetBound) {
  RngStream rng(47);
  const auto ds = threshold_dataset(5000, 0.5, rng);
  const auto weak = synthetic_weak_learner(threshold_concept(0.5), 0.1);
  const auto shallow = boost_recursive(weak, ds, 0.45, rng);
  EXPECT_EQ(shallow.depth, 0);
  EXPECT_LE(shallow.final_err, 0.4 + 1e-12);

  const auto deep = boost_recursive(weak, ds, 0.2, rng);
  EXPECT_EQ(deep.depth, 3);
  EXPECT_NEAR(deep.bound, 0.19674569827731714, 1e-14);
  EXPECT_LE(deep.final_err, 0.2 + 0.03);
  EXPECT_THROW(boost_recursive(synthetic_weak_learner(threshold_concept(0.5), 0.1), ds, 0.6, rng), ValidationError);
}

TEST(LabeledCsv, Parsing) {
  std::istringstream in("x,y\n0.5,1\n0.25,0\n");
  const auto items = parse_labeled_csv(in);
  ASSERT_EQ(items.size(), 2u);
  EXPECT_EQ(items[1].x, 0.25);
  EXPECT_EQ(items[1].y, 0);
  std::istringstream bad("0.5,2\n");
  EXPECT_THROW(parse_labeled_csv(bad), ValidationError);
}

TEST(StumpLearner, FindsBestWeightedThreshold) {
  RngStream rng(48);
  const auto ds = threshold_dataset(400, 0.37, rng);
  const auto h = stump_learner(0.1).train(ds, rng);
  EXPECT_EQ(empirical_risk(h, ds), 0.0);

  // Inverted labels are learned with the flip.
  std::vector<LabeledItem> inv;
  for (const auto& it : ds.items()) inv.push_back({it.x, 1 - it.y});
  const auto inv_ds = WeightedDataset::uniform(inv);
  EXPECT_EQ(empirical_risk(stump_learner(0.1).train(inv_ds, rng), inv_ds), 0.0);

  // Brute force over every data-point threshold and both polarities.
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<LabeledItem> items(1 + rng.uniform_index(25));
    std::vector<double> w(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
      items[i] = {static_cast<double>(rng.uniform_index(8)), static_cast<int>(rng.uniform_index(2))};
      w[i] = rng.uniform() + 0.01;
    }
    const WeightedDataset noisy(items, DiscreteDistribution::from_weights(w));
    double best = 1.0;
    std::vector<double> ts{-1.0, 100.0};
    for (const auto& it : items) ts.push_back(it.x);
    for (double t : ts)
      for (int flip : {0, 1}) {
        const Hypothesis cand([t, flip](double x) { return (x >= t ? 1 : 0) ^ flip; });
        best = std::min(best, empirical_risk(cand, noisy));
      }
    EXPECT_NEAR(empirical_risk(stump_learner(0.0).train(noisy, rng), noisy), best, 1e-12);
  }
}
