#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "anneal.hpp"
#include "core.hpp"
#include "errors.hpp"
#include "io.hpp"
#include "ising.hpp"
#include "rng.hpp"

namespace statml::marl {

inline constexpr std::size_t kDefaultMeanActionBins = 11;

/// Undirected neighbor structure over agents 0..n-1.
class NeighborGraph {
 public:
  NeighborGraph() = default;

  explicit NeighborGraph(std::vector<std::vector<std::size_t>> adjacency) : adjacency_(std::move(adjacency)) {
    const std::size_t n = adjacency_.size();
    for (std::size_t j = 0; j < n; ++j) {
      auto& row = adjacency_[j];
      std::sort(row.begin(), row.end());
      if (std::adjacent_find(row.begin(), row.end()) != row.end())
        throw ValidationError("neighbor graph: repeated neighbor of agent " + std::to_string(j));
      for (std::size_t k : row) {
        if (k >= n) throw ValidationError("neighbor graph: neighbor index out of range");
        if (k == j) throw ValidationError("neighbor graph: self-loop at agent " + std::to_string(j));
      }
    }
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k : adjacency_[j])
        if (!std::binary_search(adjacency_[k].begin(), adjacency_[k].end(), j))
          throw ValidationError("neighbor graph: adjacency is not symmetric");
  }

  /// Periodic rows x cols lattice, agent id = r * cols + c. Coincident wrap-around neighbors are merged.
  static NeighborGraph torus(std::size_t rows, std::size_t cols) {
    if (rows == 0 || cols == 0) throw ValidationError("torus: dimensions must be positive");
    std::vector<std::vector<std::size_t>> adj(rows * cols);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        std::set<std::size_t> nb{((r + rows - 1) % rows) * cols + c, ((r + 1) % rows) * cols + c,
                                 r * cols + (c + cols - 1) % cols, r * cols + (c + 1) % cols};
        nb.erase(r * cols + c);
        adj[r * cols + c].assign(nb.begin(), nb.end());
      }
    return NeighborGraph(std::move(adj));
  }

  static NeighborGraph from_couplings(const ising::CouplingGraph& graph) {
    std::vector<std::vector<std::size_t>> adj(graph.n_sites());
    for (std::size_t j = 0; j < graph.n_sites(); ++j)
      for (const auto& nb : graph.neighbors(j)) adj[j].push_back(nb.site);
    return NeighborGraph(std::move(adj));
  }

  std::size_t n_agents() const noexcept { return adjacency_.size(); }
  std::span<const std::size_t> neighbors(std::size_t j) const { return adjacency_.at(j); }

 private:
  std::vector<std::vector<std::size_t>> adjacency_;
};

/// Average of one-hot encodings of the neighbors' actions.
inline std::vector<double> mean_action(std::span<const std::size_t> neighbor_actions, std::size_t n_actions) {
  if (neighbor_actions.empty()) throw DomainError("mean_action: empty neighborhood");
  if (n_actions == 0) throw ValidationError("mean_action: n_actions must be positive");
  std::vector<std::size_t> counts(n_actions, 0);
  for (std::size_t a : neighbor_actions) {
    if (a >= n_actions) throw ValidationError("mean_action: action index out of range");
    ++counts[a];
  }
  const double m = static_cast<double>(neighbor_actions.size());
  std::vector<double> out(n_actions);
  for (std::size_t a = 0; a < n_actions; ++a) out[a] = static_cast<double>(counts[a]) / m;
  return out;
}

/// Per-dimension bin: round(abar_d * (bins - 1)).
inline std::vector<int> mean_action_bins(std::span<const double> abar, std::size_t bins = kDefaultMeanActionBins) {
  if (bins < 2) throw ValidationError("mean_action_bins: need at least 2 bins");
  std::vector<int> out(abar.size());
  for (std::size_t d = 0; d < abar.size(); ++d) {
    if (!(abar[d] >= 0.0 && abar[d] <= 1.0)) throw ValidationError("mean_action_bins: entry outside [0, 1]");
    out[d] = static_cast<int>(std::lround(abar[d] * static_cast<double>(bins - 1)));
  }
  return out;
}

struct QKey {
  std::uint64_t state = 0;
  std::size_t action = 0;
  std::vector<int> bins;

  friend auto operator<=>(const QKey&, const QKey&) = default;
  friend bool operator==(const QKey&, const QKey&) = default;
};

/// Sparse Q^j(s, a, bin(abar)); missing entries read as 0.
class QTable {
 public:
  double get(const QKey& key) const {
    const auto it = values_.find(key);
    return it == values_.end() ? 0.0 : it->second;
  }

  void set(const QKey& key, double value) {
    if (!std::isfinite(value)) throw NumericalError("q table: non-finite value");
    values_[key] = value;
  }

  std::vector<double> row(std::uint64_t state, std::size_t n_actions, const std::vector<int>& bins) const {
    std::vector<double> q(n_actions);
    for (std::size_t a = 0; a < n_actions; ++a) q[a] = get({state, a, bins});
    return q;
  }

  std::size_t size() const noexcept { return values_.size(); }
  const std::map<QKey, double>& entries() const noexcept { return values_; }

  friend bool operator==(const QTable&, const QTable&) = default;

 private:
  std::map<QKey, double> values_;
};

/// Q <- (1 - alpha) Q + alpha (r + gamma * next_value). Returns the new entry.
inline double mf_q_update(QTable& q, const QKey& key, double reward, double next_value, double alpha, double gamma) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("mf_q_update: alpha must be in [0, 1]");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ValidationError("mf_q_update: gamma must be in [0, 1)");
  if (!std::isfinite(reward) || !std::isfinite(next_value)) throw ValidationError("mf_q_update: non-finite target");
  const double old = q.get(key);
  const double updated = (1.0 - alpha) * old + alpha * (reward + gamma * next_value);
  q.set(key, updated);
  return updated;
}

inline std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw ValidationError("softmax: empty input");
  double hi = -std::numeric_limits<double>::infinity();
  for (double x : logits) {
    if (!std::isfinite(x)) throw ValidationError("softmax: non-finite input");
    hi = std::max(hi, x);
  }
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) z += (p[i] = std::exp(logits[i] - hi));
  for (auto& x : p) x /= z;
  return p;
}

inline DiscreteDistribution boltzmann_policy(std::span<const double> q_row, double temperature) {
  if (!std::isfinite(temperature) || !(temperature > 0.0))
    throw ValidationError("boltzmann_policy: temperature must be > 0");
  std::vector<double> scaled(q_row.begin(), q_row.end());
  for (auto& x : scaled) x /= temperature;
  auto p = softmax(scaled);
  double total = 0.0;
  for (double x : p) total += x;
  for (auto& x : p) x /= total;
  return DiscreteDistribution(std::move(p));
}

/// V = sum_a pi(a) Q(a).
inline double mf_value(std::span<const double> q_row, const DiscreteDistribution& policy) {
  if (q_row.size() != policy.size()) throw ValidationError("mf_value: length mismatch");
  double v = 0.0;
  for (std::size_t a = 0; a < q_row.size(); ++a) v += policy[a] * q_row[a];
  return v;
}

/// grad_theta log softmax(theta)[a] * Q = (onehot(a) - pi) * Q.
inline std::vector<double> mf_actor_critic_grad(std::span<const double> logits, std::size_t own_action, double q_value) {
  if (own_action >= logits.size()) throw ValidationError("mf_actor_critic_grad: action out of range");
  if (!std::isfinite(q_value)) throw ValidationError("mf_actor_critic_grad: non-finite Q");
  auto g = softmax(logits);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = ((i == own_action ? 1.0 : 0.0) - g[i]) * q_value;
  return g;
}

inline std::size_t sample_index(const DiscreteDistribution& p, RngStream& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return i;
  }
  for (std::size_t i = p.size(); i-- > 0;)
    if (p[i] > 0.0) return i;
  return p.size() - 1;
}

/**
 * Ising game. Action 0 is spin -1, action 1 is spin +1. Agent j's reward is
 * s_j * J * sum_{k in N(j)} s_k. The environment has a single state (id 0); the
 * neighbors' mean action enters through the Q key.
 */
struct IsingGameEnv {
  NeighborGraph graph;
  double coupling = 1.0;
  anneal::CoolingSchedule temperature{anneal::CoolingKind::geometric, 2.0, 0.97, 1e-3};
  std::size_t bins = kDefaultMeanActionBins;

  void validate() const {
    if (graph.n_agents() == 0) throw ValidationError("ising game: no agents");
    if (!std::isfinite(coupling)) throw ValidationError("ising game: non-finite coupling");
    if (bins < 2) throw ValidationError("ising game: need at least 2 mean-action bins");
    temperature.validate();
  }
};

inline int spin_of(std::size_t action) { return action == 1 ? 1 : -1; }
inline std::size_t action_of(int spin) { return spin > 0 ? 1 : 0; }

struct IsingGameOptions {
  std::uint64_t episodes = 200;
  std::uint64_t steps_per_episode = 10;
  double alpha = 0.1;
  double gamma = 0.0;
};

struct IsingGameResult {
  std::vector<QTable> q_tables;
  std::vector<double> magnetization;  // |(1/N) sum s| at the end of each episode
  ising::SpinConfig final_spins;

  std::string magnetization_csv() const {
    std::string out = "episode,magnetization\n";
    for (std::size_t e = 0; e < magnetization.size(); ++e)
      out += std::to_string(e) + "," + io::format_double(magnetization[e]) + "\n";
    return out;
  }
};

inline IsingGameResult run_ising_game(const IsingGameEnv& env, const IsingGameOptions& options, RngStream& rng) {
  env.validate();
  if (!(options.alpha >= 0.0 && options.alpha <= 1.0)) throw ValidationError("ising game: alpha must be in [0, 1]");
  if (!(options.gamma >= 0.0 && options.gamma < 1.0)) throw ValidationError("ising game: gamma must be in [0, 1)");
  if (options.episodes == 0 || options.steps_per_episode == 0)
    throw ValidationError("ising game: episodes and steps must be positive");

  const std::size_t n = env.graph.n_agents();
  auto spins = ising::SpinConfig::random(n, rng);
  std::vector<QTable> q(n);
  std::vector<std::size_t> nb_actions;
  IsingGameResult result;
  result.magnetization.reserve(options.episodes);

  for (std::uint64_t ep = 0; ep < options.episodes; ++ep) {
    const double tau = anneal::schedule_temperature(env.temperature, ep);
    for (std::uint64_t step = 0; step < options.steps_per_episode; ++step) {
      for (std::size_t j = 0; j < n; ++j) {
        const auto nbs = env.graph.neighbors(j);
        nb_actions.clear();
        int field = 0;
        for (std::size_t k : nbs) {
          nb_actions.push_back(action_of(spins[k]));
          field += spins[k];
        }
        const auto bins = mean_action_bins(mean_action(nb_actions, 2), env.bins);
        const auto row = q[j].row(0, 2, bins);
        const auto policy = boltzmann_policy(row, tau);
        const std::size_t a = sample_index(policy, rng);
        if (spins[j] != spin_of(a)) spins.flip(j);
        const double reward = spin_of(a) * env.coupling * field;
        // Neighbors have not moved yet, so the bootstrap state shares this bin.
        const double next = mf_value(row, policy);
        mf_q_update(q[j], {0, a, bins}, reward, next, options.alpha, options.gamma);
      }
    }
    result.magnetization.push_back(std::abs(spins.magnetization()));
  }
  result.q_tables = std::move(q);
  result.final_spins = std::move(spins);
  return result;
}

/// Independent replicas, replica i driven by rng.substream(first_stream + i).
inline std::vector<IsingGameResult> run_ising_replicas(const IsingGameEnv& env, const IsingGameOptions& options,
                                                       const RngStream& rng, std::size_t replicas,
                                                       std::uint64_t first_stream = 0) {
  std::vector<IsingGameResult> out;
  out.reserve(replicas);
  for (std::size_t i = 0; i < replicas; ++i) {
    RngStream local = rng.substream(first_stream + i);
    out.push_back(run_ising_game(env, options, local));
  }
  return out;
}

}  // namespace statml::marl
