#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "statml/ebm.hpp"

using namespace statml;
using namespace statml::ebm;

namespace {

BoltzmannMachine tiny_machine() { return BoltzmannMachine({0.5}, {-0.25}, {1.0}); }

std::vector<double> random_table(RngStream& rng, std::size_t n) {
  std::vector<double> e(n);
  for (auto& x : e) x = 10.0 * rng.uniform() - 5.0;
  return e;
}

// Brute-force enumeration of p(v) straight from the energy, independent of the free-energy path.
std::vector<double> enumerated_visible(const BoltzmannMachine& m) {
  const std::size_t nv = m.n_visible(), nh = m.n_hidden();
  std::vector<double> p(std::size_t{1} << nv, 0.0);
  double z = 0.0;
  for (std::uint64_t vi = 0; vi < p.size(); ++vi) {
    for (std::uint64_t hi = 0; hi < (std::uint64_t{1} << nh); ++hi) {
      double e = 0.0;
      for (std::size_t i = 0; i < nv; ++i) e -= m.a()[i] * ((vi >> i) & 1U);
      for (std::size_t j = 0; j < nh; ++j) e -= m.b()[j] * ((hi >> j) & 1U);
      for (std::size_t i = 0; i < nv; ++i)
        for (std::size_t j = 0; j < nh; ++j) e -= m.weight(i, j) * ((vi >> i) & 1U) * ((hi >> j) & 1U);
      p[vi] += std::exp(-e);
      z += std::exp(-e);
    }
  }
  for (auto& x : p) x /= z;
  return p;
}

double brute_nll(const BoltzmannMachine& m, const VisibleData& data) {
  const auto p = enumerated_visible(m);
  double s = 0.0;
  for (const auto& v : data) s -= std::log(p[visible_index(v)]);
  return s / static_cast<double>(data.size());
}

}  // namespace

TEST(EblInfer, Examples) {
  EXPECT_EQ(ebl_infer(std::vector<double>{0.5}), 0u);
  EXPECT_EQ(ebl_infer(std::vector<double>{3.0, 1.0, 2.0}), 1u);
  EXPECT_EQ(ebl_infer(std::vector<double>{1.0, 1.0}), 0u);
  EXPECT_THROW(ebl_infer(std::vector<double>{}), ValidationError);
}

TEST(GibbsPosterior, Examples) {
  const auto flat = gibbs_posterior(std::vector<double>{0.0, 0.0}, 1.0);
  EXPECT_DOUBLE_EQ(flat.posterior[0], 0.5);
  EXPECT_DOUBLE_EQ(flat.z, 2.0);

  const auto hot = gibbs_posterior(std::vector<double>{4.0, -3.0, 100.0}, 0.0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(hot.posterior[i], 1.0 / 3.0);

  const auto two = gibbs_posterior(std::vector<double>{0.0, 1.0}, 1.0);
  EXPECT_NEAR(two.posterior[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(two.posterior[1], 0.2689414213699951, 1e-15);
  EXPECT_NEAR(two.z, 1.0 + std::exp(-1.0), 1e-15);
}

TEST(GibbsPosterior, StableForLargeEnergies) {
  const auto post = gibbs_posterior(std::vector<double>{-2000.0, -1999.0}, 1.0);
  EXPECT_NEAR(post.posterior[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
  EXPECT_TRUE(std::isinf(post.z));
  EXPECT_NEAR(post.log_z, 2000.0 + std::log1p(std::exp(-1.0)), 1e-9);
  EXPECT_THROW(gibbs_posterior(std::vector<double>{0.0}, -1.0), ValidationError);
  EXPECT_THROW(gibbs_posterior(std::vector<double>{NAN}, 1.0), ValidationError);
}

TEST(Losses, Examples) {
  EXPECT_EQ(loss_perceptron(std::vector<double>{0.8, 0.3}, 1), 0.0);
  EXPECT_NEAR(loss_perceptron(std::vector<double>{0.8, 0.3}, 0), 0.5, 1e-15);
  EXPECT_EQ(loss_perceptron(std::vector<double>{7.0}, 0), 0.0);
  EXPECT_THROW(loss_perceptron(std::vector<double>{1.0}, 1), ValidationError);

  EXPECT_NEAR(loss_hinge(0.2, 0.5, 1.0), 0.7, 1e-15);
  EXPECT_EQ(loss_hinge(0.0, 2.0, 1.0), 0.0);
  EXPECT_EQ(loss_hinge(0.4, 0.4, 0.0), 0.0);
  EXPECT_THROW(loss_hinge(0.0, 0.0, -0.1), ValidationError);

  EXPECT_NEAR(loss_nll(std::vector<double>{1.3, 1.3}, 0, 1.0), std::log(2.0), 1e-15);
  EXPECT_NEAR(loss_nll(std::vector<double>{0.0, 1.0}, 0, 50.0), 0.0, 1e-3);
  EXPECT_THROW(loss_nll(std::vector<double>{0.0, 1.0}, 0, 0.0), ValidationError);
}

TEST(Losses, NllPosteriorIdentity) {
  RngStream rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const auto e = random_table(rng, 1 + rng.uniform_index(8));
    const double beta = 0.1 + 3.0 * rng.uniform();
    const auto y = static_cast<std::size_t>(rng.uniform_index(e.size()));
    const auto post = gibbs_posterior(e, beta);
    EXPECT_NEAR(loss_nll(e, y, beta), -std::log(post.posterior[y]) / beta, 1e-12);
  }
}

TEST(Losses, PropertiesOnRandomTables) {
  RngStream rng(22);
  for (int trial = 0; trial < 300; ++trial) {
    auto e = random_table(rng, 1 + rng.uniform_index(8));
    if (trial % 5 == 0 && e.size() > 1) e[1] = e[0];  // exercise ties
    const double beta = 0.05 + 4.0 * rng.uniform();
    const auto y = static_cast<std::size_t>(rng.uniform_index(e.size()));
    const auto post = gibbs_posterior(e, beta);

    double sum = 0.0;
    std::size_t argmax = 0;
    for (std::size_t i = 0; i < post.posterior.size(); ++i) {
      sum += post.posterior[i];
      if (post.posterior[i] > post.posterior[argmax]) argmax = i;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    EXPECT_EQ(argmax, ebl_infer(e));

    const double lp = loss_perceptron(e, y);
    EXPECT_GE(lp, 0.0);
    EXPECT_EQ(lp == 0.0, e[y] == *std::min_element(e.begin(), e.end()));
    EXPECT_GE(loss_nll(e, y, beta), 0.0);
    EXPECT_GE(loss_hinge(e[y], e[(y + 1) % e.size()], rng.uniform()), 0.0);

    const double c = 20.0 * rng.uniform() - 10.0;
    auto shifted = e;
    for (auto& x : shifted) x += c;
    const auto post2 = gibbs_posterior(shifted, beta);
    for (std::size_t i = 0; i < e.size(); ++i) EXPECT_NEAR(post2.posterior[i], post.posterior[i], 1e-10);
    EXPECT_EQ(ebl_infer(shifted), ebl_infer(e));
    EXPECT_NEAR(loss_perceptron(shifted, y), lp, 1e-10);
    EXPECT_NEAR(loss_hinge(shifted[y], shifted[0], 0.5), loss_hinge(e[y], e[0], 0.5), 1e-10);
  }
}

TEST(BoltzmannEnergy, Examples) {
  EXPECT_EQ(bm_energy({{1, 0, 1}, {1, 1}}, BoltzmannMachine::zeros(3, 2)), 0.0);
  EXPECT_NEAR(bm_energy({{1}, {1}}, tiny_machine()), -1.25, 1e-15);

  const BoltzmannMachine m({0.3, -0.7}, {0.25, 1.5}, {1.0, 2.0, 3.0, 4.0});
  EXPECT_NEAR(bm_energy({{0, 0}, {1, 1}}, m), -1.75, 1e-15);
  EXPECT_NEAR(bm_energy({{0, 1}, {1, 0}}, m), 0.7 - 0.25 - 3.0, 1e-15);

  EXPECT_THROW(bm_energy({{1}, {1, 0}}, tiny_machine()), ValidationError);
  EXPECT_THROW(bm_energy({{2}, {1}}, tiny_machine()), ValidationError);
  EXPECT_THROW(BoltzmannMachine({0.0}, {0.0}, {1.0, 2.0}), ValidationError);
}

TEST(BoltzmannPartition, Examples) {
  const auto z11 = bm_partition_exact(BoltzmannMachine::zeros(1, 1));
  EXPECT_DOUBLE_EQ(z11.z, 4.0);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(z11.joint[i], 0.25);
  EXPECT_DOUBLE_EQ(bm_partition_exact(BoltzmannMachine::zeros(3, 2)).z, 32.0);

  // 4-term enumeration: E(00)=0, E(v=1)=-0.5, E(h=1)=0.25, E(11)=-1.25
  const double expected = 1.0 + std::exp(0.5) + std::exp(-0.25) + std::exp(1.25);
  const auto tiny = bm_partition_exact(tiny_machine());
  EXPECT_NEAR(tiny.z, expected, 1e-12);
  EXPECT_NEAR(tiny.joint[bm_state_index({{1}, {1}})], std::exp(1.25) / expected, 1e-15);

  EXPECT_THROW(bm_partition_exact(BoltzmannMachine::zeros(12, 9)), CapacityError);
}

TEST(BoltzmannPartition, VisibleMarginalMatchesFreeEnergy) {
  RngStream rng(23);
  const auto m = BoltzmannMachine::random(4, 3, 1.0, rng);
  const auto part = bm_partition_exact(m);
  const auto pv = visible_marginal(part.joint, 4);
  const auto brute = enumerated_visible(m);
  for (std::size_t k = 0; k < brute.size(); ++k) {
    EXPECT_NEAR(pv[k], brute[k], 1e-14);
    std::vector<std::uint8_t> v(4);
    for (std::size_t i = 0; i < 4; ++i) v[i] = (k >> i) & 1U;
    EXPECT_NEAR(std::exp(-bm_free_energy(v, m) - part.log_z), brute[k], 1e-14);
  }
}

TEST(BoltzmannGibbs, ConditionalProbabilities) {
  const std::vector<std::uint8_t> v{1};
  EXPECT_NEAR(hidden_probabilities(tiny_machine(), v)[0], 0.679178699175393, 1e-15);
  EXPECT_DOUBLE_EQ(hidden_probabilities(BoltzmannMachine::zeros(2, 3), std::vector<std::uint8_t>{1, 0})[2], 0.5);
  EXPECT_NEAR(logistic(-800.0), 0.0, 1e-300);
  EXPECT_EQ(logistic(800.0), 1.0);
}

TEST(BoltzmannGibbs, TinyMachineMatchesExactJoint) {
  const auto m = tiny_machine();
  const auto exact = bm_partition_exact(m);
  std::vector<double> counts(4, 0.0);
  RngStream rng(42, 3);
  const std::uint64_t steps = 1'000'000;
  bm_gibbs_run(m, steps, rng, {{0}, {0}}, [&](const BMState& s) { counts[bm_state_index(s)] += 1.0; });
  for (auto& c : counts) c /= static_cast<double>(steps);
  EXPECT_LT(total_variation(DiscreteDistribution(counts), exact.joint), 0.02);
}

TEST(BoltzmannGibbs, VisibleFrequenciesMatchMarginalOnRandomMachines) {
  RngStream rng(24);
  for (int trial = 0; trial < 3; ++trial) {
    const auto m = BoltzmannMachine::random(3, 2, 1.0, rng);
    const auto pv = visible_marginal(bm_partition_exact(m).joint, 3);
    std::vector<double> counts(8, 0.0);
    const std::uint64_t steps = 1'000'000;
    bm_gibbs_run(m, steps, rng, {{0, 0, 0}, {0, 0}}, [&](const BMState& s) { counts[visible_index(s.v)] += 1.0; });
    for (auto& c : counts) c /= static_cast<double>(steps);
    EXPECT_LT(total_variation(DiscreteDistribution(counts), pv), 0.02);
  }
}

TEST(BoltzmannGibbs, ZeroMachineUnitsAreFairCoins) {
  RngStream rng(25);
  const auto samples = bm_gibbs_sample(BoltzmannMachine::zeros(2, 2), 20000, rng, {{0, 0}, {0, 0}});
  ASSERT_EQ(samples.size(), 20000u);
  double on = 0.0;
  for (const auto& s : samples) on += s.v[0] + s.v[1] + s.h[0] + s.h[1];
  EXPECT_NEAR(on / (4.0 * samples.size()), 0.5, 0.01);
}

TEST(BoltzmannTrain, NllAndGradientAgreeWithOracles) {
  RngStream rng(26);
  const auto m = BoltzmannMachine::random(2, 2, 1.0, rng);
  auto perturbed = m;
  perturbed.a_mut() = {0.3, -0.2};
  perturbed.b_mut() = {0.1, 0.4};
  const VisibleData data = {{1, 0}, {1, 1}, {0, 1}, {1, 1}};
  EXPECT_NEAR(bm_nll(perturbed, data), brute_nll(perturbed, data), 1e-12);

  const auto g = bm_nll_gradient(perturbed, data);
  const double h = 1e-5;
  const auto check = [&](std::vector<double>& (BoltzmannMachine::*field)(), const std::vector<double>& grad) {
    for (std::size_t k = 0; k < grad.size(); ++k) {
      auto plus = perturbed, minus = perturbed;
      (plus.*field)()[k] += h;
      (minus.*field)()[k] -= h;
      const double fd = (brute_nll(plus, data) - brute_nll(minus, data)) / (2.0 * h);
      EXPECT_NEAR(grad[k], fd, 1e-5 * std::max(1.0, std::abs(fd)));
    }
  };
  check(&BoltzmannMachine::a_mut, g.a);
  check(&BoltzmannMachine::b_mut, g.b);
  check(&BoltzmannMachine::w_mut, g.w);
}

TEST(BoltzmannTrain, ZeroLearningRateLeavesMachine) {
  RngStream rng(27);
  const auto m = BoltzmannMachine::random(3, 2, 0.5, rng);
  const VisibleData data = {{1, 0, 1}, {0, 1, 1}};
  for (auto method : {TrainMethod::exact_gradient, TrainMethod::cd_k}) {
    const auto r = bm_train(m, data, {method, 0.0, 5, 1}, rng);
    EXPECT_EQ(r.machine, m);
    EXPECT_EQ(r.loss.size(), 5u);
  }
}

TEST(BoltzmannTrain, ExactGradientRaisesLikelihoodOfRepeatedVector) {
  RngStream rng(28);
  auto m = BoltzmannMachine::random(3, 2, 0.5, rng);
  const VisibleData data(4, {1, 0, 1});
  const auto target = visible_index(data.front());
  double prev = enumerated_visible(m)[target];
  for (int epoch = 0; epoch < 10; ++epoch) {
    m = bm_train(m, data, {TrainMethod::exact_gradient, 0.2, 1, 1}, rng).machine;
    const double p = enumerated_visible(m)[target];
    EXPECT_GT(p, prev);
    prev = p;
  }
}

TEST(BoltzmannTrain, LossCurveDecreasesForBothMethods) {
  RngStream rng(29);
  const auto m = BoltzmannMachine::random(4, 3, 0.1, rng);
  const VisibleData data = {{1, 1, 0, 0}, {1, 1, 0, 0}, {0, 0, 1, 1}, {0, 0, 1, 1}, {1, 1, 0, 0}};
  const auto exact = bm_train(m, data, {TrainMethod::exact_gradient, 0.1, 200, 1}, rng);
  EXPECT_EQ(exact.loss_kind, LossKind::nll);
  EXPECT_LT(exact.loss.back(), exact.loss.front());
  for (std::size_t k = 1; k < exact.loss.size(); ++k) EXPECT_LE(exact.loss[k], exact.loss[k - 1] + 1e-12);

  const auto cd = bm_train(m, data, {TrainMethod::cd_k, 0.1, 200, 1}, rng);
  EXPECT_LT(cd.loss.back(), cd.loss.front() - 0.3);
}

TEST(BoltzmannTrain, LargeMachinesUseReconstructionError) {
  RngStream rng(30);
  const auto m = BoltzmannMachine::random(16, 8, 0.1, rng);
  VisibleData data(3, std::vector<std::uint8_t>(16, 0));
  for (std::size_t i = 0; i < 8; ++i) data[0][i] = data[1][i] = 1;
  EXPECT_THROW(bm_train(m, data, {TrainMethod::exact_gradient, 0.1, 2, 1}, rng), CapacityError);
  const auto r = bm_train(m, data, {TrainMethod::cd_k, 0.1, 30, 1}, rng);
  EXPECT_EQ(r.loss_kind, LossKind::reconstruction_error);
  EXPECT_LT(r.loss.back(), r.loss.front());
}

TEST(BoltzmannTrain, DataParsing) {
  std::istringstream in("101\n# comment\n011\n\n");
  const auto data = parse_visible_data(in);
  ASSERT_EQ(data.size(), 2u);
  EXPECT_EQ(data[1], (std::vector<std::uint8_t>{0, 1, 1}));
  std::istringstream ragged("10\n101\n");
  EXPECT_THROW(parse_visible_data(ragged), ValidationError);
  std::istringstream junk("1x1\n");
  EXPECT_THROW(parse_visible_data(junk), ValidationError);
  RngStream rng(1);
  EXPECT_THROW(bm_train(tiny_machine(), {{1, 0}}, {}, rng), ValidationError);
}
