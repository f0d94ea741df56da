#include <gtest/gtest.h>

#include <chrono>
#include <cmath>

#include "statml/marl.hpp"

using namespace statml;
using namespace statml::marl;

namespace {

double log_softmax_at(std::vector<double> logits, std::size_t a) {
  double hi = logits[0];
  for (double x : logits) hi = std::max(hi, x);
  double z = 0.0;
  for (double x : logits) z += std::exp(x - hi);
  return logits[a] - hi - std::log(z);
}

IsingGameEnv torus_env(std::size_t side) {
  IsingGameEnv env;
  env.graph = NeighborGraph::torus(side, side);
  env.coupling = 1.0;
  return env;
}

}  // namespace

TEST(NeighborGraph, TorusAndValidation) {
  const auto g = NeighborGraph::torus(4, 4);
  ASSERT_EQ(g.n_agents(), 16u);
  for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(g.neighbors(j).size(), 4u);
  const std::vector<std::size_t> expect0{1, 3, 4, 12};
  EXPECT_TRUE(std::equal(expect0.begin(), expect0.end(), g.neighbors(0).begin(), g.neighbors(0).end()));

  EXPECT_EQ(NeighborGraph::torus(2, 2).neighbors(0).size(), 2u);
  EXPECT_TRUE(NeighborGraph::torus(1, 1).neighbors(0).empty());
  using Adjacency = std::vector<std::vector<std::size_t>>;
  EXPECT_THROW(NeighborGraph(Adjacency{{0}}), ValidationError);
  EXPECT_THROW(NeighborGraph(Adjacency{{1}, {}}), ValidationError);
  EXPECT_THROW(NeighborGraph(Adjacency{{1, 1}, {0}}), ValidationError);
  EXPECT_THROW(NeighborGraph(Adjacency{{2}, {}}), ValidationError);

  const auto ring = NeighborGraph::from_couplings(ising::CouplingGraph::ring(5, 1.0));
  EXPECT_EQ(ring.neighbors(0).size(), 2u);
}

TEST(MeanAction, Examples) {
  const std::vector<std::size_t> nb{1, 0, 1};
  const auto a = mean_action(nb, 2);
  EXPECT_DOUBLE_EQ(a[0], 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(a[1], 2.0 / 3.0);

  const std::vector<std::size_t> same{2, 2, 2, 2};
  EXPECT_EQ(mean_action(same, 3), (std::vector<double>{0, 0, 1}));
  EXPECT_THROW(mean_action(std::vector<std::size_t>{}, 2), DomainError);
  EXPECT_THROW(mean_action(std::vector<std::size_t>{3}, 2), ValidationError);
}

TEST(MeanAction, StaysInSimplex) {
  RngStream rng(51);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t k = 1 + rng.uniform_index(6);
    std::vector<std::size_t> nb(1 + rng.uniform_index(12));
    for (auto& a : nb) a = rng.uniform_index(k);
    const auto abar = mean_action(nb, k);
    double total = 0.0;
    for (double x : abar) {
      EXPECT_GE(x, 0.0);
      total += x;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
    for (int b : mean_action_bins(abar)) {
      EXPECT_GE(b, 0);
      EXPECT_LE(b, 10);
    }
  }
}

TEST(MeanActionBins, RoundsToGrid) {
  EXPECT_EQ(mean_action_bins(std::vector<double>{0.0, 1.0}), (std::vector<int>{0, 10}));
  EXPECT_EQ(mean_action_bins(std::vector<double>{0.25, 0.75}), (std::vector<int>{3, 8}));
  EXPECT_EQ(mean_action_bins(std::vector<double>{0.5, 0.5}, 3), (std::vector<int>{1, 1}));
  EXPECT_THROW(mean_action_bins(std::vector<double>{1.5}), ValidationError);
}

TEST(MfQUpdate, Examples) {
  QTable q;
  const QKey key{0, 1, {5, 5}};
  q.set(key, 2.0);
  EXPECT_EQ(mf_q_update(q, key, 7.0, 3.0, 0.0, 0.9), 2.0);
  EXPECT_EQ(q.get(key), 2.0);
  EXPECT_DOUBLE_EQ(mf_q_update(q, key, 1.0, 4.0, 1.0, 0.5), 3.0);
  q.set(key, 2.0);
  EXPECT_DOUBLE_EQ(mf_q_update(q, key, 1.0, 123.0, 0.5, 0.0), 1.5);
  EXPECT_THROW(mf_q_update(q, key, 1.0, 0.0, 1.5, 0.5), ValidationError);
  EXPECT_THROW(mf_q_update(q, key, 1.0, 0.0, 0.5, 1.0), ValidationError);
  EXPECT_EQ(q.get({3, 0, {}}), 0.0);
}

TEST(MfQUpdate, IsConvexCombination) {
  RngStream rng(52);
  QTable q;
  const QKey key{0, 0, {}};
  for (int trial = 0; trial < 2000; ++trial) {
    const double old = 20.0 * rng.uniform() - 10.0;
    q.set(key, old);
    const double r = 10.0 * rng.uniform() - 5.0, next = 10.0 * rng.uniform() - 5.0;
    const double alpha = rng.uniform(), gamma = 0.99 * rng.uniform();
    const double target = r + gamma * next;
    const double now = mf_q_update(q, key, r, next, alpha, gamma);
    EXPECT_GE(now, std::min(old, target) - 1e-12);
    EXPECT_LE(now, std::max(old, target) + 1e-12);
  }
}

TEST(MfQUpdate, VisitCountStepSizeGivesSampleMean) {
  RngStream rng(53);
  QTable q;
  const QKey key{0, 1, {4, 6}};
  double sum = 0.0;
  const int n = 100000;
  for (int t = 1; t <= n; ++t) {
    const double r = rng.uniform() < 0.3 ? 2.0 : -1.0;
    sum += r;
    mf_q_update(q, key, r, 0.0, 1.0 / t, 0.0);
  }
  EXPECT_NEAR(q.get(key), sum / n, 1e-10);
  EXPECT_NEAR(q.get(key), 0.3 * 2.0 - 0.7, 1e-2);
}

TEST(BoltzmannPolicy, Examples) {
  const auto flat = boltzmann_policy(std::vector<double>{0.7, 0.7, 0.7}, 0.3);
  for (std::size_t a = 0; a < 3; ++a) EXPECT_NEAR(flat[a], 1.0 / 3.0, 1e-15);
  EXPECT_GT(boltzmann_policy(std::vector<double>{1.0, 0.0}, 0.01)[0], 0.999);
  const auto hot = boltzmann_policy(std::vector<double>{1.0, -1.0, 0.5}, 1e3);
  for (std::size_t a = 0; a < 3; ++a) EXPECT_NEAR(hot[a], 1.0 / 3.0, 1e-3);
  EXPECT_THROW(boltzmann_policy(std::vector<double>{1.0}, 0.0), ValidationError);
  EXPECT_THROW(boltzmann_policy(std::vector<double>{1.0}, -2.0), ValidationError);
  EXPECT_GT(boltzmann_policy(std::vector<double>{800.0, 0.0}, 0.5)[0], 0.999);
}

TEST(BoltzmannPolicy, ShiftInvariant) {
  RngStream rng(54);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> q(2 + rng.uniform_index(5));
    for (auto& x : q) x = 6.0 * rng.uniform() - 3.0;
    const double c = 20.0 * rng.uniform() - 10.0, tau = 0.05 + 3.0 * rng.uniform();
    auto shifted = q;
    for (auto& x : shifted) x += c;
    const auto p = boltzmann_policy(q, tau), ps = boltzmann_policy(shifted, tau);
    for (std::size_t a = 0; a < q.size(); ++a) EXPECT_NEAR(p[a], ps[a], 1e-12);
  }
}

TEST(MfValue, Examples) {
  EXPECT_EQ(mf_value(std::vector<double>{4.0, -1.0}, DiscreteDistribution::point_mass(2, 1)), -1.0);
  EXPECT_DOUBLE_EQ(mf_value(std::vector<double>{1.0, 3.0}, DiscreteDistribution::uniform(2)), 2.0);
  EXPECT_DOUBLE_EQ(mf_value(std::vector<double>{2.5, 2.5, 2.5}, DiscreteDistribution({0.2, 0.5, 0.3})), 2.5);
  EXPECT_THROW(mf_value(std::vector<double>{1.0}, DiscreteDistribution::uniform(2)), ValidationError);
}

TEST(ActorCriticGrad, Examples) {
  EXPECT_EQ(mf_actor_critic_grad(std::vector<double>{0.3, 0.3}, 1, 0.0), (std::vector<double>{0.0, 0.0}));
  const auto g = mf_actor_critic_grad(std::vector<double>{0.0, 0.0}, 0, 1.0);
  EXPECT_DOUBLE_EQ(g[0], 0.5);
  EXPECT_DOUBLE_EQ(g[1], -0.5);
  EXPECT_THROW(mf_actor_critic_grad(std::vector<double>{0.0}, 1, 1.0), ValidationError);
}

TEST(ActorCriticGrad, MatchesFiniteDifferences) {
  RngStream rng(55);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> theta(2 + rng.uniform_index(4));
    for (auto& x : theta) x = 4.0 * rng.uniform() - 2.0;
    const std::size_t a = rng.uniform_index(theta.size());
    const double q = 6.0 * rng.uniform() - 3.0;
    const auto g = mf_actor_critic_grad(theta, a, q);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double h = 1e-5;
      auto up = theta, down = theta;
      up[i] += h;
      down[i] -= h;
      const double fd = q * (log_softmax_at(up, a) - log_softmax_at(down, a)) / (2.0 * h);
      EXPECT_LE(std::abs(fd - g[i]), 1e-6 * std::max(1.0, std::abs(g[i])));
    }
  }
}

TEST(IsingGame, FrozenQMatchesRandomPolicy) {
  auto env = torus_env(4);
  IsingGameOptions opt;
  opt.alpha = 0.0;
  opt.episodes = 4000;
  opt.steps_per_episode = 1;
  RngStream rng(56);
  const auto r = run_ising_game(env, opt, rng);
  for (const auto& q : r.q_tables)
    for (const auto& [key, value] : q.entries()) EXPECT_EQ(value, 0.0);
  double mean = 0.0, second = 0.0;
  for (double m : r.magnetization) {
    mean += m;
    second += m * m;
  }
  mean /= static_cast<double>(r.magnetization.size());
  second /= static_cast<double>(r.magnetization.size());
  // 16 independent fair spins: E|m| = sum_b C(16,b)|2b-16| / (16 * 2^16), E m^2 = 1/16.
  EXPECT_NEAR(mean, 0.196380615234375, 0.012);
  EXPECT_NEAR(second, 0.0625, 0.006);
}

TEST(IsingGame, FerromagnetOrdersOnSmallTorus) {
  const auto env = torus_env(4);
  const IsingGameOptions opt;
  const auto start = std::chrono::steady_clock::now();
  const auto runs = run_ising_replicas(env, opt, RngStream(57), 10);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  int ordered = 0;
  for (const auto& r : runs) {
    ASSERT_EQ(r.magnetization.size(), opt.episodes);
    ordered += r.magnetization.back() > 0.9;
  }
  EXPECT_GE(ordered, 8);
  EXPECT_LT(seconds, 120.0);
}

TEST(IsingGame, DeterministicAndCsv) {
  const auto env = torus_env(3);
  IsingGameOptions opt;
  opt.episodes = 20;
  RngStream a(58), b(58);
  const auto ra = run_ising_game(env, opt, a), rb = run_ising_game(env, opt, b);
  EXPECT_EQ(ra.magnetization, rb.magnetization);
  EXPECT_EQ(ra.q_tables, rb.q_tables);
  const auto csv = ra.magnetization_csv();
  EXPECT_EQ(csv.rfind("episode,magnetization\n0,", 0), 0u);
}

TEST(IsingGame, IsolatedAgentSurfacesAtMeanAction) {
  IsingGameEnv env;
  env.graph = NeighborGraph::torus(1, 1);
  RngStream rng(59);
  EXPECT_THROW(run_ising_game(env, IsingGameOptions{}, rng), DomainError);
  env.graph = NeighborGraph{};
  EXPECT_THROW(run_ising_game(env, IsingGameOptions{}, rng), ValidationError);
}
