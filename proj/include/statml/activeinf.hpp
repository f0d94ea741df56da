#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"
#include "errors.hpp"

namespace statml::activeinf {

/// A = U - T S
inline double helmholtz_free_energy(double internal_energy, double temperature, double entropy) {
  if (!std::isfinite(internal_energy) || !std::isfinite(temperature) || !std::isfinite(entropy))
    throw ValidationError("helmholtz_free_energy: non-finite input");
  if (temperature < 0.0) throw ValidationError("helmholtz_free_energy: temperature must be >= 0");
  return internal_energy - temperature * entropy;
}

/// P(Z | X) proportional to prior(Z) * likelihood(X | Z) for the observed X.
inline DiscreteDistribution exact_posterior(const DiscreteDistribution& prior, std::span<const double> likelihood_column) {
  if (likelihood_column.size() != prior.size())
    throw ValidationError("exact_posterior: likelihood column length does not match prior");
  std::vector<double> w(prior.size());
  for (std::size_t z = 0; z < w.size(); ++z) {
    if (!(likelihood_column[z] >= 0.0) || !std::isfinite(likelihood_column[z]))
      throw ValidationError("exact_posterior: likelihood entries must be finite and >= 0");
    w[z] = prior[z] * likelihood_column[z];
  }
  double s = 0.0;
  for (double x : w) s += x;
  if (!(s > 0.0)) throw DomainError("exact_posterior: evidence has zero probability under the model");
  return DiscreteDistribution::from_weights(w);
}

/// F = KL(q || P(Z | X)).
inline double variational_free_energy(const DiscreteDistribution& q, const DiscreteDistribution& prior,
                                      std::span<const double> likelihood_column) {
  return kl_divergence(q, exact_posterior(prior, likelihood_column));
}

/// Same, with the likelihood given as a table P(X = x | Z = z) indexed [z][x].
inline double variational_free_energy(const DiscreteDistribution& q, const DiscreteDistribution& prior,
                                      const std::vector<std::vector<double>>& likelihood, std::size_t evidence_index) {
  std::vector<double> column(likelihood.size());
  for (std::size_t z = 0; z < likelihood.size(); ++z) {
    if (evidence_index >= likelihood[z].size())
      throw ValidationError("variational_free_energy: evidence index out of range");
    column[z] = likelihood[z][evidence_index];
  }
  return variational_free_energy(q, prior, column);
}

// ---------------------------------------------------------------------------
// Planning

namespace detail {

inline void check_stochastic_rows(const std::vector<double>& table, std::size_t rows, std::size_t cols,
                                  const char* what) {
  if (table.size() != rows * cols) throw ValidationError(std::string(what) + ": wrong table size");
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double p = table[r * cols + c];
      if (!(p >= 0.0) || !std::isfinite(p)) throw ValidationError(std::string(what) + ": entries must be in [0, 1]");
      s += p;
    }
    if (std::abs(s - 1.0) > kProbabilityTolerance)
      throw ValidationError(std::string(what) + ": row " + std::to_string(r) + " sums to " + std::to_string(s));
  }
}

}  // namespace detail

/// transition is indexed [s][a][s'] and reward [s][a], both flattened row-major.
struct DiscreteMDP {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<double> transition;
  std::vector<double> reward;
  double gamma = 0.9;

  void validate() const {
    if (n_states == 0 || n_actions == 0) throw ValidationError("mdp: needs at least one state and one action");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ValidationError("mdp: discount must lie in [0, 1)");
    detail::check_stochastic_rows(transition, n_states * n_actions, n_states, "mdp transition");
    if (reward.size() != n_states * n_actions) throw ValidationError("mdp: reward table must be n_states x n_actions");
    for (double r : reward)
      if (!std::isfinite(r)) throw ValidationError("mdp: non-finite reward");
  }

  double p(std::size_t s, std::size_t a, std::size_t s2) const { return transition[(s * n_actions + a) * n_states + s2]; }
  double r(std::size_t s, std::size_t a) const { return reward[s * n_actions + a]; }
};

struct ValueIterationResult {
  std::vector<double> values;
  std::vector<std::size_t> policy;
  std::size_t iterations = 0;
  double residual = 0.0;              // sup-norm Bellman residual of the returned values
  std::vector<double> sup_differences;  // ||V_{k+1} - V_k|| for each sweep
};

enum class Objective { maximize, minimize };

/**
 * Generic Bellman iteration V(s) <- opt_a [ q(s, a) + gamma sum_s' P(s'|s,a) V(s') ] until the
 * sup-norm change drops below `tolerance`. Greedy ties go to the lowest action index.
 */
inline ValueIterationResult bellman_iterate(std::size_t n_states, std::size_t n_actions,
                                            const std::vector<double>& immediate, const std::vector<double>& transition,
                                            double gamma, double tolerance, Objective objective,
                                            std::size_t max_iterations = 1'000'000) {
  if (!(tolerance > 0.0)) throw ValidationError("value iteration: tolerance must be > 0");
  const double sign = objective == Objective::maximize ? 1.0 : -1.0;
  const auto backup = [&](const std::vector<double>& v, std::vector<double>& out, std::vector<std::size_t>* policy) {
    for (std::size_t s = 0; s < n_states; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      std::size_t best_a = 0;
      for (std::size_t a = 0; a < n_actions; ++a) {
        double q = immediate[s * n_actions + a];
        const double* row = &transition[(s * n_actions + a) * n_states];
        for (std::size_t s2 = 0; s2 < n_states; ++s2) q += gamma * row[s2] * v[s2];
        if (sign * q > best) {
          best = sign * q;
          best_a = a;
        }
      }
      out[s] = sign * best;
      if (policy) (*policy)[s] = best_a;
    }
  };
  const auto sup_diff = [](const std::vector<double>& x, const std::vector<double>& y) {
    double d = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) d = std::max(d, std::abs(x[i] - y[i]));
    return d;
  };

  ValueIterationResult result;
  std::vector<double> v(n_states, 0.0), next(n_states);
  while (true) {
    if (result.iterations >= max_iterations)
      throw ConvergenceError("value iteration: no convergence within " + std::to_string(max_iterations) + " sweeps");
    backup(v, next, nullptr);
    ++result.iterations;
    const double d = sup_diff(next, v);
    result.sup_differences.push_back(d);
    if (!std::isfinite(d)) throw NumericalError("value iteration: values diverged");
    v.swap(next);
    if (d < tolerance) break;
  }
  result.policy.assign(n_states, 0);
  backup(v, next, &result.policy);
  result.residual = sup_diff(next, v);
  result.values = std::move(v);
  return result;
}

/// V(s) = max_a [ R(s,a) + gamma sum_s' P(s'|s,a) V(s') ].
inline ValueIterationResult value_iteration(const DiscreteMDP& mdp, double tolerance) {
  mdp.validate();
  return bellman_iterate(mdp.n_states, mdp.n_actions, mdp.reward, mdp.transition, mdp.gamma, tolerance,
                         Objective::maximize);
}

/// How r(o, s) enters the expected free energy: as written, or negated (reward read as a cost).
enum class RewardConvention { literal, negate };

/**
 * Discrete generative model. Policies are sequences of actions; Q(s'|s, a) is the model's own
 * transition. likelihood is indexed [s][o], transition [s][a][s'], reward [o][s].
 */
struct GenerativeModel {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::size_t n_observations = 0;
  DiscreteDistribution prior;
  std::vector<double> likelihood;
  std::vector<double> transition;
  std::vector<double> reward;
  double gamma = 0.9;
  RewardConvention convention = RewardConvention::literal;

  void validate() const {
    if (n_states == 0 || n_actions == 0 || n_observations == 0)
      throw ValidationError("generative model: empty state, action or observation space");
    if (prior.size() != n_states) throw ValidationError("generative model: prior has wrong length");
    detail::check_stochastic_rows(likelihood, n_states, n_observations, "generative model likelihood");
    detail::check_stochastic_rows(transition, n_states * n_actions, n_states, "generative model transition");
    if (reward.size() != n_observations * n_states) throw ValidationError("generative model: reward must be n_obs x n_states");
    for (double r : reward)
      if (!std::isfinite(r)) throw ValidationError("generative model: non-finite reward");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ValidationError("generative model: discount must lie in [0, 1)");
  }

  double q(std::size_t s, std::size_t a, std::size_t s2) const { return transition[(s * n_actions + a) * n_states + s2]; }
  double p_obs(std::size_t s, std::size_t o) const { return likelihood[s * n_observations + o]; }
  double r(std::size_t o, std::size_t s) const {
    const double v = reward[o * n_states + s];
    return convention == RewardConvention::literal ? v : -v;
  }

  /// E_{o ~ P(o|s)} r(o, s)
  double expected_reward(std::size_t s) const {
    double e = 0.0;
    for (std::size_t o = 0; o < n_observations; ++o) e += p_obs(s, o) * r(o, s);
    return e;
  }

  /// The planning problem the model defines, with R(s, a) = E[r] at the reached state.
  DiscreteMDP as_mdp() const {
    DiscreteMDP mdp{n_states, n_actions, transition, std::vector<double>(n_states * n_actions, 0.0), gamma};
    for (std::size_t s = 0; s < n_states; ++s)
      for (std::size_t a = 0; a < n_actions; ++a)
        for (std::size_t s2 = 0; s2 < n_states; ++s2) mdp.reward[s * n_actions + a] += q(s, a, s2) * expected_reward(s2);
    return mdp;
  }
};

/**
 * G(pi) = sum_t E[ r(o, s') - ln Q(s'|s, a_t) ], the expectation taken over the rolled-out
 * state s, the next state s' ~ Q(.|s, a_t) and the observation o ~ P(o|s').
 */
inline double expected_free_energy(std::span<const std::size_t> policy, const GenerativeModel& model,
                                   const DiscreteDistribution& start) {
  model.validate();
  if (start.size() != model.n_states) throw ValidationError("expected_free_energy: start distribution has wrong length");
  std::vector<double> belief(start.probs().begin(), start.probs().end()), next(model.n_states);
  double g = 0.0;
  for (std::size_t a : policy) {
    if (a >= model.n_actions) throw ValidationError("expected_free_energy: action index out of range");
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t s = 0; s < model.n_states; ++s) {
      if (belief[s] == 0.0) continue;
      for (std::size_t s2 = 0; s2 < model.n_states; ++s2) {
        const double q = model.q(s, a, s2);
        if (q == 0.0) continue;
        const double mass = belief[s] * q;
        g += mass * (model.expected_reward(s2) - std::log(q));
        next[s2] += mass;
      }
    }
    belief.swap(next);
  }
  return g;
}

/// c(s, a) = G([a]) started from a point mass on s.
inline std::vector<double> free_energy_costs(const GenerativeModel& model) {
  model.validate();
  std::vector<double> c(model.n_states * model.n_actions);
  for (std::size_t s = 0; s < model.n_states; ++s) {
    const auto start = DiscreteDistribution::point_mass(model.n_states, s);
    for (std::size_t a = 0; a < model.n_actions; ++a) {
      const std::size_t policy[1] = {a};
      c[s * model.n_actions + a] = expected_free_energy(policy, model, start);
    }
  }
  return c;
}

/// V(s) = min_a [ c(s, a) + gamma sum_s' Q(s'|s, a) V(s') ] with c from free_energy_costs.
inline ValueIterationResult fe_value_iteration(const GenerativeModel& model, double tolerance) {
  const auto costs = free_energy_costs(model);
  return bellman_iterate(model.n_states, model.n_actions, costs, model.transition, model.gamma, tolerance,
                         Objective::minimize);
}

// ---------------------------------------------------------------------------
// Mean-field variational inference

inline constexpr std::size_t kMaxMeanFieldVariables = 3;
inline constexpr std::size_t kMaxMeanFieldValues = 16;

/// ln p(h, x) for the observed x, over up to three discrete hidden variables; row-major.
class LogTable {
 public:
  LogTable(std::vector<std::size_t> dims, std::vector<double> values) : dims_(std::move(dims)), values_(std::move(values)) {
    if (dims_.empty()) throw ValidationError("log table: no variables");
    if (dims_.size() > kMaxMeanFieldVariables)
      throw CapacityError("log table: at most " + std::to_string(kMaxMeanFieldVariables) + " hidden variables");
    std::size_t n = 1;
    for (auto d : dims_) {
      if (d == 0) throw ValidationError("log table: empty variable");
      if (d > kMaxMeanFieldValues)
        throw CapacityError("log table: at most " + std::to_string(kMaxMeanFieldValues) + " values per variable");
      n *= d;
    }
    if (values_.size() != n) throw ValidationError("log table: expected " + std::to_string(n) + " entries");
    for (double v : values_)
      if (!std::isfinite(v)) throw ValidationError("log table: entries must be finite");
  }

  /// From a (possibly unnormalized) positive joint table.
  static LogTable from_probabilities(std::vector<std::size_t> dims, const std::vector<double>& probs) {
    std::vector<double> logs(probs.size());
    for (std::size_t k = 0; k < probs.size(); ++k) {
      if (!(probs[k] > 0.0)) throw ValidationError("log table: probabilities must be > 0");
      logs[k] = std::log(probs[k]);
    }
    return LogTable(std::move(dims), std::move(logs));
  }

  std::size_t n_vars() const noexcept { return dims_.size(); }
  const std::vector<std::size_t>& dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t flat) const { return values_[flat]; }

  /// Value of variable `var` in the flat index.
  std::size_t coordinate(std::size_t flat, std::size_t var) const {
    for (std::size_t v = dims_.size(); v-- > var + 1;) flat /= dims_[v];
    return flat % dims_[var];
  }

  double log_normalizer() const {
    const double m = *std::max_element(values_.begin(), values_.end());
    double s = 0.0;
    for (double v : values_) s += std::exp(v - m);
    return m + std::log(s);
  }

 private:
  std::vector<std::size_t> dims_;
  std::vector<double> values_;
};

using FactorizedPosterior = std::vector<DiscreteDistribution>;

namespace detail {

inline void check_factors(const FactorizedPosterior& q, const LogTable& table) {
  if (q.size() != table.n_vars()) throw ValidationError("mean field: one factor per hidden variable required");
  for (std::size_t i = 0; i < q.size(); ++i)
    if (q[i].size() != table.dims()[i]) throw ValidationError("mean field: factor " + std::to_string(i) + " has wrong size");
}

inline double product_prob(const FactorizedPosterior& q, const LogTable& table, std::size_t flat) {
  double p = 1.0;
  for (std::size_t i = 0; i < q.size(); ++i) p *= q[i][table.coordinate(flat, i)];
  return p;
}

}  // namespace detail

/// KL(prod_i q_i || p(h | x)).
inline double mean_field_kl(const FactorizedPosterior& q, const LogTable& table) {
  detail::check_factors(q, table);
  const double log_z = table.log_normalizer();
  double kl = 0.0;
  for (std::size_t k = 0; k < table.size(); ++k) {
    const double p = detail::product_prob(q, table, k);
    if (p > 0.0) kl += p * (std::log(p) - (table[k] - log_z));
  }
  return std::max(kl, 0.0);
}

struct MeanFieldResult {
  FactorizedPosterior factors;
  std::vector<double> kl;  // before the first sweep, then after each sweep
};

/// Coordinate ascent, q_i(h_i) proportional to exp(E_{q_-i}[ln p(h, x)]), cycling i = 0, 1, ...
inline MeanFieldResult mean_field_update(FactorizedPosterior q, const LogTable& table, std::size_t sweeps) {
  detail::check_factors(q, table);
  MeanFieldResult out;
  out.kl.push_back(mean_field_kl(q, table));
  for (std::size_t sweep = 0; sweep < sweeps; ++sweep) {
    for (std::size_t i = 0; i < q.size(); ++i) {
      std::vector<double> expect(table.dims()[i], 0.0);
      for (std::size_t k = 0; k < table.size(); ++k) {
        double w = 1.0;
        for (std::size_t j = 0; j < q.size(); ++j)
          if (j != i) w *= q[j][table.coordinate(k, j)];
        expect[table.coordinate(k, i)] += w * table[k];
      }
      const double m = *std::max_element(expect.begin(), expect.end());
      for (auto& e : expect) e = std::exp(e - m);
      q[i] = DiscreteDistribution::from_weights(expect);
    }
    out.kl.push_back(mean_field_kl(q, table));
  }
  out.factors = std::move(q);
  return out;
}

}  // namespace statml::activeinf
