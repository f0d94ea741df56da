#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "core.hpp"
#include "errors.hpp"
#include "io.hpp"
#include "rng.hpp"

namespace statml::ising {

/// Largest system handled by exhaustive enumeration (2^20 configurations).
inline constexpr std::size_t kMaxEnumerationSites = 20;

#ifdef NDEBUG
inline constexpr bool kVerifyEnergyDefault = false;
#else
inline constexpr bool kVerifyEnergyDefault = true;
#endif

/**
 * Spin configuration, entries in {-1, +1}.
 *
 * Enumeration index convention: bit k of the index is set iff spin k is +1.
 */
class SpinConfig {
 public:
  SpinConfig() = default;

  explicit SpinConfig(std::vector<std::int8_t> spins) : spins_(std::move(spins)) {
    for (auto s : spins_)
      if (s != 1 && s != -1) throw ValidationError("spin config: entries must be -1 or +1");
  }

  static SpinConfig all_up(std::size_t n) { return SpinConfig(std::vector<std::int8_t>(n, 1)); }
  static SpinConfig all_down(std::size_t n) { return SpinConfig(std::vector<std::int8_t>(n, -1)); }

  static SpinConfig from_index(std::uint64_t index, std::size_t n) {
    std::vector<std::int8_t> s(n);
    for (std::size_t k = 0; k < n; ++k) s[k] = ((index >> k) & 1U) ? 1 : -1;
    return SpinConfig(std::move(s));
  }

  static SpinConfig random(std::size_t n, RngStream& rng) {
    std::vector<std::int8_t> s(n);
    for (auto& x : s) x = rng.uniform_index(2) ? 1 : -1;
    return SpinConfig(std::move(s));
  }

  std::uint64_t index() const {
    if (spins_.size() > 63) throw CapacityError("spin config: too many sites to index");
    std::uint64_t idx = 0;
    for (std::size_t k = 0; k < spins_.size(); ++k)
      if (spins_[k] > 0) idx |= (std::uint64_t{1} << k);
    return idx;
  }

  std::size_t size() const noexcept { return spins_.size(); }
  int operator[](std::size_t i) const { return spins_[i]; }
  void flip(std::size_t i) { spins_[i] = static_cast<std::int8_t>(-spins_[i]); }
  std::span<const std::int8_t> spins() const noexcept { return spins_; }

  /// (1/N) sum s_i.
  double magnetization() const {
    if (spins_.empty()) return 0.0;
    long sum = 0;
    for (auto s : spins_) sum += s;
    return static_cast<double>(sum) / static_cast<double>(spins_.size());
  }

  friend bool operator==(const SpinConfig&, const SpinConfig&) = default;

 private:
  std::vector<std::int8_t> spins_;
};

struct Edge {
  std::size_t i;
  std::size_t j;
  double coupling;
};

/**
 * Interaction structure of an Ising model: undirected couplings J_ij (each pair stored once,
 * i < j) and on-site fields h_i. Immutable after construction, so safe to share across chains.
 */
class CouplingGraph {
 public:
  struct Neighbor {
    std::size_t site;
    double coupling;
  };

  CouplingGraph() = default;

  CouplingGraph(std::size_t n_sites, std::vector<Edge> edges, std::vector<double> fields = {})
      : n_sites_(n_sites), edges_(std::move(edges)), fields_(std::move(fields)) {
    if (fields_.empty()) fields_.assign(n_sites_, 0.0);
    if (fields_.size() != n_sites_) throw ValidationError("coupling graph: field vector length differs from n_sites");
    for (double h : fields_)
      if (!std::isfinite(h)) throw ValidationError("coupling graph: non-finite field");
    std::set<std::pair<std::size_t, std::size_t>> seen;
    adjacency_.assign(n_sites_, {});
    for (auto& e : edges_) {
      if (e.i == e.j) throw ValidationError("coupling graph: self-loop at site " + std::to_string(e.i));
      if (e.i >= n_sites_ || e.j >= n_sites_) throw ValidationError("coupling graph: edge index out of range");
      if (!std::isfinite(e.coupling)) throw ValidationError("coupling graph: non-finite coupling");
      if (e.i > e.j) std::swap(e.i, e.j);
      if (!seen.emplace(e.i, e.j).second)
        throw ValidationError("coupling graph: duplicate edge (" + std::to_string(e.i) + ", " + std::to_string(e.j) + ")");
      adjacency_[e.i].push_back({e.j, e.coupling});
      adjacency_[e.j].push_back({e.i, e.coupling});
    }
  }

  /// Open chain 0-1-...-(n-1) with uniform coupling and field.
  static CouplingGraph chain(std::size_t n, double coupling, double field = 0.0) {
    std::vector<Edge> edges;
    for (std::size_t i = 0; i + 1 < n; ++i) edges.push_back({i, i + 1, coupling});
    return CouplingGraph(n, std::move(edges), std::vector<double>(n, field));
  }

  static CouplingGraph ring(std::size_t n, double coupling, double field = 0.0) {
    std::vector<Edge> edges;
    for (std::size_t i = 0; i + 1 < n; ++i) edges.push_back({i, i + 1, coupling});
    if (n > 2) edges.push_back({0, n - 1, coupling});
    return CouplingGraph(n, std::move(edges), std::vector<double>(n, field));
  }

  static CouplingGraph complete(std::size_t n, double coupling, double field = 0.0) {
    std::vector<Edge> edges;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) edges.push_back({i, j, coupling});
    return CouplingGraph(n, std::move(edges), std::vector<double>(n, field));
  }

  std::size_t n_sites() const noexcept { return n_sites_; }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  const std::vector<double>& fields() const noexcept { return fields_; }
  const std::vector<Neighbor>& neighbors(std::size_t i) const { return adjacency_[i]; }

  /// sum_j J_ij s_j + h_i.
  double local_field(const SpinConfig& config, std::size_t i) const {
    double f = fields_[i];
    for (const auto& nb : adjacency_[i]) f += nb.coupling * config[nb.site];
    return f;
  }

  /// Energy change from flipping site i: 2 s_i (sum_j J_ij s_j + h_i).
  double flip_delta(const SpinConfig& config, std::size_t i) const {
    return 2.0 * config[i] * local_field(config, i);
  }

  void check_config(const SpinConfig& config) const {
    if (config.size() != n_sites_)
      throw ValidationError("spin config length " + std::to_string(config.size()) + " does not match n_sites " +
                            std::to_string(n_sites_));
  }

 private:
  std::size_t n_sites_ = 0;
  std::vector<Edge> edges_;
  std::vector<double> fields_;
  std::vector<std::vector<Neighbor>> adjacency_;
};

/**
 * Edge-list text format:
 *
 *     n_sites
 *     i j J        (one line per coupling)
 *     h i value    (one line per non-zero field)
 *
 * Blank lines and lines starting with '#' are ignored.
 */
inline CouplingGraph parse_coupling_graph(std::istream& in) {
  std::string line;
  std::optional<std::size_t> n_sites;
  std::vector<Edge> edges;
  std::vector<std::pair<std::size_t, double>> fields;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = io::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto tok = io::tokens(t);
    const auto where = " (line " + std::to_string(lineno) + ")";
    if (!n_sites) {
      if (tok.size() != 1) throw ValidationError("graph file: expected n_sites header" + where);
      const auto n = io::parse_int(tok[0]);
      if (n < 1) throw ValidationError("graph file: n_sites must be >= 1" + where);
      n_sites = static_cast<std::size_t>(n);
      continue;
    }
    if (tok.size() == 3 && tok[0] == "h") {
      const auto i = io::parse_int(tok[1]);
      if (i < 0) throw ValidationError("graph file: negative site index" + where);
      fields.emplace_back(static_cast<std::size_t>(i), io::parse_double(tok[2]));
    } else if (tok.size() == 3) {
      const auto i = io::parse_int(tok[0]);
      const auto j = io::parse_int(tok[1]);
      if (i < 0 || j < 0) throw ValidationError("graph file: negative site index" + where);
      edges.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), io::parse_double(tok[2])});
    } else {
      throw ValidationError("graph file: expected 'i j J' or 'h i value'" + where);
    }
  }
  if (!n_sites) throw ValidationError("graph file: missing n_sites header");
  std::vector<double> h(*n_sites, 0.0);
  for (const auto& [i, v] : fields) {
    if (i >= *n_sites) throw ValidationError("graph file: field index out of range");
    h[i] = v;
  }
  return CouplingGraph(*n_sites, std::move(edges), std::move(h));
}

inline std::string to_text(const CouplingGraph& graph) {
  std::ostringstream out;
  out << graph.n_sites() << '\n';
  for (const auto& e : graph.edges()) out << e.i << ' ' << e.j << ' ' << io::format_double(e.coupling) << '\n';
  for (std::size_t i = 0; i < graph.n_sites(); ++i)
    if (graph.fields()[i] != 0.0) out << "h " << i << ' ' << io::format_double(graph.fields()[i]) << '\n';
  return out.str();
}

/// Inverse temperature 1/(k_B T); finite and non-negative.
class Beta {
 public:
  explicit Beta(double value) : value_(value) {
    if (!std::isfinite(value_) || value_ < 0.0) throw ValidationError("beta must be finite and >= 0");
  }
  double value() const noexcept { return value_; }

 private:
  double value_;
};

/**
 * E(s) = -sum_{(i,j)} J_ij s_i s_j - sum_i h_i s_i, each undirected pair counted once.
 */
inline double ising_energy(const SpinConfig& config, const CouplingGraph& graph) {
  graph.check_config(config);
  double e = 0.0;
  for (const auto& edge : graph.edges()) e -= edge.coupling * config[edge.i] * config[edge.j];
  for (std::size_t i = 0; i < graph.n_sites(); ++i) e -= graph.fields()[i] * config[i];
  return e;
}

struct PartitionResult {
  double z;
  double log_z;
  /// Indexed by SpinConfig::index().
  DiscreteDistribution gibbs;
  std::vector<double> energies;
};

/**
 * Exact partition function by enumerating all 2^N configurations. Probabilities are computed
 * relative to the minimum energy so they stay finite at large beta; `z` itself may overflow
 * to inf in that regime, `log_z` does not.
 */
inline PartitionResult partition_exact(const CouplingGraph& graph, Beta beta) {
  const std::size_t n = graph.n_sites();
  if (n > kMaxEnumerationSites)
    throw CapacityError("partition_exact: " + std::to_string(n) + " sites exceeds enumeration limit of " +
                        std::to_string(kMaxEnumerationSites));
  const std::uint64_t count = std::uint64_t{1} << n;
  std::vector<double> energies(count);
  double e_min = std::numeric_limits<double>::infinity();
  for (std::uint64_t idx = 0; idx < count; ++idx) {
    energies[idx] = ising_energy(SpinConfig::from_index(idx, n), graph);
    e_min = std::min(e_min, energies[idx]);
  }
  std::vector<double> w(count);
  double shifted = 0.0;
  for (std::uint64_t idx = 0; idx < count; ++idx) {
    w[idx] = std::exp(-beta.value() * (energies[idx] - e_min));
    shifted += w[idx];
  }
  for (double& x : w) x /= shifted;
  const double log_z = std::log(shifted) - beta.value() * e_min;
  return {std::exp(log_z), log_z, DiscreteDistribution(std::move(w)), std::move(energies)};
}

/// S = k_B ln(multiplicity).
inline double boltzmann_entropy(double multiplicity, double k_b = 1.0) {
  if (!(multiplicity >= 1.0) || !std::isfinite(multiplicity))
    throw ValidationError("boltzmann_entropy: multiplicity must be >= 1");
  if (!(k_b > 0.0)) throw ValidationError("boltzmann_entropy: k_B must be > 0");
  return k_b * std::log(multiplicity);
}

// ---------------------------------------------------------------------------
// Metropolis sampling

struct MetropolisMove {
  std::size_t site;
  double delta_h;
  bool accepted;
};

/**
 * Single-spin-flip Metropolis update in place. A site is chosen uniformly; downhill and flat
 * moves are always accepted, uphill moves iff r < exp(-beta dH) with r uniform on [0, 1).
 * r is drawn only on the uphill branch.
 */
inline MetropolisMove metropolis_update(SpinConfig& state, const CouplingGraph& graph, Beta beta, RngStream& rng) {
  const auto site = static_cast<std::size_t>(rng.uniform_index(graph.n_sites()));
  const double dh = graph.flip_delta(state, site);
  bool accept = dh <= 0.0;
  if (!accept) accept = rng.uniform() < std::exp(-beta.value() * dh);
  if (accept) state.flip(site);
  return {site, dh, accept};
}

struct MetropolisStep {
  SpinConfig state;
  bool accepted;
  double delta_h;
};

inline MetropolisStep metropolis_step(const SpinConfig& state, const CouplingGraph& graph, Beta beta,
                                      RngStream& rng) {
  graph.check_config(state);
  if (graph.n_sites() == 0) throw ValidationError("metropolis_step: empty system");
  SpinConfig next = state;
  const auto move = metropolis_update(next, graph, beta, rng);
  return {std::move(next), move.accepted, move.delta_h};
}

/**
 * Analytic single-flip Metropolis kernel P(from -> to) over configuration indices.
 */
inline double metropolis_transition_probability(const CouplingGraph& graph, Beta beta, std::uint64_t from,
                                                std::uint64_t to) {
  const std::size_t n = graph.n_sites();
  const auto accept_prob = [&](std::size_t site) {
    const double dh = graph.flip_delta(SpinConfig::from_index(from, n), site);
    return dh <= 0.0 ? 1.0 : std::exp(-beta.value() * dh);
  };
  if (from == to) {
    double stay = 1.0;
    for (std::size_t k = 0; k < n; ++k) stay -= accept_prob(k) / static_cast<double>(n);
    return stay;
  }
  const std::uint64_t diff = from ^ to;
  if ((diff & (diff - 1)) != 0) return 0.0;
  std::size_t site = 0;
  while (((diff >> site) & 1U) == 0) ++site;
  if (site >= n) return 0.0;
  return accept_prob(site) / static_cast<double>(n);
}

struct TraceRow {
  std::uint64_t step;
  double energy;
  bool accepted;
  double magnetization;
};

/// Step-indexed chain record; CSV columns step,energy,accepted,magnetization.
struct RunTrace {
  std::vector<TraceRow> rows;

  double acceptance_rate() const {
    if (rows.empty()) return 0.0;
    std::size_t acc = 0;
    for (const auto& r : rows) acc += r.accepted ? 1 : 0;
    return static_cast<double>(acc) / static_cast<double>(rows.size());
  }

  std::string to_csv() const {
    std::string out = "step,energy,accepted,magnetization\n";
    for (const auto& r : rows) {
      out += std::to_string(r.step);
      out += ',';
      out += io::format_double(r.energy);
      out += r.accepted ? ",1," : ",0,";
      out += io::format_double(r.magnetization);
      out += '\n';
    }
    return out;
  }
};

struct ChainOptions {
  /// Recompute E(s') - E(s) from scratch at each accepted step and compare with the local dH.
  bool verify_energy = kVerifyEnergyDefault;
  /// Keep post-burn-in states. Long runs that only need the trace can switch this off.
  bool keep_samples = true;
};

struct ChainResult {
  std::vector<SpinConfig> samples;
  RunTrace trace;
  SpinConfig final_state;
};

inline std::uint64_t default_burn_in(std::uint64_t steps) { return steps / 10; }

/**
 * Metropolis chain of `steps` updates (rows 1..steps in the trace). States after step
 * `burn_in` are recorded as samples. Energy is tracked incrementally from the local dH.
 */
inline ChainResult metropolis_chain(const CouplingGraph& graph, Beta beta, std::uint64_t steps, std::uint64_t burn_in,
                                    RngStream& rng, std::optional<SpinConfig> initial = std::nullopt,
                                    const ChainOptions& options = {}) {
  if (graph.n_sites() == 0) throw ValidationError("metropolis_chain: empty system");
  if (!(steps > burn_in)) throw ValidationError("metropolis_chain: steps must exceed burn_in");
  SpinConfig state = initial ? std::move(*initial) : SpinConfig::random(graph.n_sites(), rng);
  graph.check_config(state);

  ChainResult result;
  result.trace.rows.reserve(steps);
  if (options.keep_samples) result.samples.reserve(steps - burn_in);

  double energy = ising_energy(state, graph);
  long spin_sum = 0;
  for (auto s : state.spins()) spin_sum += s;
  const double n = static_cast<double>(graph.n_sites());

  for (std::uint64_t t = 1; t <= steps; ++t) {
    const auto move = metropolis_update(state, graph, beta, rng);
    if (move.accepted) {
      if (options.verify_energy) {
        const double fresh = ising_energy(state, graph);
        if (std::abs((fresh - energy) - move.delta_h) > 1e-9)
          throw NumericalError("metropolis_chain: incremental dH disagrees with recomputed energy at step " +
                               std::to_string(t));
      }
      energy += move.delta_h;
      spin_sum += 2 * state[move.site];
    }
    result.trace.rows.push_back({t, energy, move.accepted, static_cast<double>(spin_sum) / n});
    if (options.keep_samples && t > burn_in) result.samples.push_back(state);
  }
  result.final_state = std::move(state);
  return result;
}

struct Observables {
  double mean_energy;
  double mean_magnetization;
  double energy_stderr;
  double magnetization_stderr;
  std::size_t batches;
};

/**
 * Sample means of energy and magnetization. Standard errors use batch means over 10
 * contiguous batches (or one batch per sample when fewer than 20 samples).
 */
inline Observables estimate_observables(std::span<const SpinConfig> samples, const CouplingGraph& graph) {
  if (samples.empty()) throw ValidationError("estimate_observables: no samples");
  const std::size_t n = samples.size();
  std::vector<double> e(n), m(n);
  for (std::size_t i = 0; i < n; ++i) {
    e[i] = ising_energy(samples[i], graph);
    m[i] = samples[i].magnetization();
  }
  const auto mean = [](std::span<const double> x) {
    return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  };
  const std::size_t batches = n >= 20 ? 10 : n;
  const std::size_t per = n / batches;
  const auto batch_stderr = [&](const std::vector<double>& x) {
    if (batches < 2) return 0.0;
    std::vector<double> bm(batches);
    for (std::size_t b = 0; b < batches; ++b) bm[b] = mean(std::span<const double>(x).subspan(b * per, per));
    const double mu = mean(bm);
    double ss = 0.0;
    for (double v : bm) ss += (v - mu) * (v - mu);
    return std::sqrt(ss / static_cast<double>(batches - 1) / static_cast<double>(batches));
  };
  return {mean(e), mean(m), batch_stderr(e), batch_stderr(m), batches};
}

/// Empirical distribution of samples over configuration indices.
inline DiscreteDistribution empirical_distribution(std::span<const SpinConfig> samples, std::size_t n_sites) {
  if (samples.empty()) throw ValidationError("empirical_distribution: no samples");
  if (n_sites > kMaxEnumerationSites) throw CapacityError("empirical_distribution: too many sites");
  std::vector<double> counts(std::size_t{1} << n_sites, 0.0);
  for (const auto& s : samples) counts[s.index()] += 1.0;
  return DiscreteDistribution::from_weights(counts);
}
}  // namespace statml::ising
