#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <istream>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "io.hpp"
#include "ising.hpp"
#include "rng.hpp"

namespace statml::anneal {

/**
 * Problem interface for annealing. Implementations must be reentrant: all randomness comes
 * through the RngStream argument, and no hidden mutable state is allowed.
 */
template <typename L>
concept EnergyLandscape = requires(const L& landscape, const typename L::state_type& s, RngStream& rng) {
  typename L::state_type;
  { landscape.energy(s) } -> std::convertible_to<double>;
  { landscape.propose(s, rng) } -> std::convertible_to<typename L::state_type>;
  { landscape.random_state(rng) } -> std::convertible_to<typename L::state_type>;
};

enum class CoolingKind { geometric, linear, logarithmic, constant };

inline CoolingKind parse_cooling_kind(std::string_view name) {
  if (name == "geometric") return CoolingKind::geometric;
  if (name == "linear") return CoolingKind::linear;
  if (name == "logarithmic") return CoolingKind::logarithmic;
  if (name == "constant") return CoolingKind::constant;
  throw ValidationError("unknown cooling schedule kind '" + std::string(name) + "'");
}

inline std::string_view to_string(CoolingKind kind) {
  switch (kind) {
    case CoolingKind::geometric: return "geometric";
    case CoolingKind::linear: return "linear";
    case CoolingKind::logarithmic: return "logarithmic";
    case CoolingKind::constant: return "constant";
  }
  return "?";
}

/**
 * Temperature sequence T(k), k = 0, 1, ...
 *
 *   geometric    T0 * parameter^k            (0 < parameter <= 1)
 *   linear       max(T0 - parameter * k, floor)
 *   logarithmic  T0 / ln(k + 2)
 *   constant     T0
 */
struct CoolingSchedule {
  CoolingKind kind = CoolingKind::geometric;
  double t0 = 1.0;
  double parameter = 0.99;
  double floor = 1e-3;

  void validate() const {
    if (!std::isfinite(t0) || !(t0 > 0.0)) throw ValidationError("cooling schedule: T0 must be > 0");
    switch (kind) {
      case CoolingKind::geometric:
        if (!(parameter > 0.0 && parameter <= 1.0))
          throw ValidationError("cooling schedule: geometric ratio must be in (0, 1]");
        break;
      case CoolingKind::linear:
        if (!(parameter >= 0.0) || !std::isfinite(parameter))
          throw ValidationError("cooling schedule: linear decrement must be >= 0");
        if (!(floor > 0.0) || floor > t0) throw ValidationError("cooling schedule: floor must be in (0, T0]");
        break;
      case CoolingKind::logarithmic:
      case CoolingKind::constant:
        break;
    }
  }
};

inline double schedule_temperature(const CoolingSchedule& schedule, std::uint64_t k) {
  schedule.validate();
  const double kd = static_cast<double>(k);
  switch (schedule.kind) {
    case CoolingKind::geometric: return schedule.t0 * std::pow(schedule.parameter, kd);
    case CoolingKind::linear: return std::max(schedule.t0 - schedule.parameter * kd, schedule.floor);
    case CoolingKind::logarithmic: return schedule.t0 / std::log(kd + 2.0);
    case CoolingKind::constant: return schedule.t0;
  }
  throw ValidationError("cooling schedule: invalid kind");
}

struct AnnealTraceRow {
  std::uint64_t sweep;
  double temperature;
  double current_energy;
  double best_energy;
  double acceptance_rate;
  std::uint64_t uphill_proposals;
  std::uint64_t uphill_accepted;
};

/// Per-sweep record; CSV columns sweep,temperature,current_energy,best_energy,acceptance_rate.
struct AnnealTrace {
  std::vector<AnnealTraceRow> rows;

  std::string to_csv() const {
    std::string out = "sweep,temperature,current_energy,best_energy,acceptance_rate\n";
    for (const auto& r : rows) {
      out += std::to_string(r.sweep) + ',' + io::format_double(r.temperature) + ',' +
             io::format_double(r.current_energy) + ',' + io::format_double(r.best_energy) + ',' +
             io::format_double(r.acceptance_rate) + '\n';
    }
    return out;
  }
};

template <typename State>
struct AnnealResult {
  State best_state;
  double best_energy;
  State final_state;
  AnnealTrace trace;
};

/**
 * Simulated annealing: during sweep k, `proposals_per_sweep` Metropolis moves are made at
 * beta = 1 / T(k). Returns the best state ever visited, which can differ from the final one.
 */
template <EnergyLandscape Landscape>
AnnealResult<typename Landscape::state_type> anneal(
    const Landscape& problem, const CoolingSchedule& schedule, std::uint64_t sweeps,
    std::uint64_t proposals_per_sweep, RngStream& rng,
    std::optional<typename Landscape::state_type> initial = std::nullopt) {
  using State = typename Landscape::state_type;
  schedule.validate();
  if (sweeps < 1) throw ValidationError("anneal: sweeps must be >= 1");
  if (proposals_per_sweep < 1) throw ValidationError("anneal: proposals_per_sweep must be >= 1");

  State current = initial ? std::move(*initial) : problem.random_state(rng);
  double energy = problem.energy(current);
  State best = current;
  double best_energy = energy;

  AnnealTrace trace;
  trace.rows.reserve(sweeps);
  for (std::uint64_t k = 0; k < sweeps; ++k) {
    const double t = schedule_temperature(schedule, k);
    if (!(t > 0.0) || !std::isfinite(t))
      throw ValidationError("anneal: schedule produced non-positive temperature at sweep " + std::to_string(k));
    const double beta = 1.0 / t;
    std::uint64_t accepted = 0, uphill = 0, uphill_accepted = 0;
    for (std::uint64_t p = 0; p < proposals_per_sweep; ++p) {
      State candidate = problem.propose(current, rng);
      const double cand_energy = problem.energy(candidate);
      const double dh = cand_energy - energy;
      bool accept = dh <= 0.0;
      if (!accept) {
        ++uphill;
        accept = rng.uniform() < std::exp(-beta * dh);
        if (accept) ++uphill_accepted;
      }
      if (accept) {
        current = std::move(candidate);
        energy = cand_energy;
        ++accepted;
        if (energy < best_energy) {
          best_energy = energy;
          best = current;
        }
      }
    }
    trace.rows.push_back({k, t, energy, best_energy,
                          static_cast<double>(accepted) / static_cast<double>(proposals_per_sweep), uphill,
                          uphill_accepted});
  }
  return {std::move(best), best_energy, std::move(current), std::move(trace)};
}

// ---------------------------------------------------------------------------
// Ising ground-state search

/// Ising model as a landscape; proposals flip one uniformly chosen spin.
class IsingLandscape {
 public:
  using state_type = ising::SpinConfig;

  explicit IsingLandscape(ising::CouplingGraph graph) : graph_(std::move(graph)) {
    if (graph_.n_sites() == 0) throw ValidationError("ising landscape: empty system");
  }

  double energy(const state_type& s) const { return ising::ising_energy(s, graph_); }

  state_type propose(const state_type& s, RngStream& rng) const {
    state_type next = s;
    next.flip(static_cast<std::size_t>(rng.uniform_index(graph_.n_sites())));
    return next;
  }

  state_type random_state(RngStream& rng) const { return ising::SpinConfig::random(graph_.n_sites(), rng); }

  const ising::CouplingGraph& graph() const noexcept { return graph_; }

 private:
  ising::CouplingGraph graph_;
};

// ---------------------------------------------------------------------------
// Double digest

/**
 * Fragment lengths from two single digests (a, b) and the double digest (c) of one sequence.
 */
struct DoubleDigestInstance {
  std::vector<long> a;
  std::vector<long> b;
  std::vector<long> c;
  long total_length = 0;

  DoubleDigestInstance() = default;
  DoubleDigestInstance(std::vector<long> a_, std::vector<long> b_, std::vector<long> c_)
      : a(std::move(a_)), b(std::move(b_)), c(std::move(c_)) {
    validate();
  }

  void validate() {
    if (a.empty() || b.empty() || c.empty()) throw ValidationError("double digest: every digest needs fragments");
    const auto check = [](const std::vector<long>& v, const char* name) {
      long s = 0;
      for (long x : v) {
        if (x <= 0) throw ValidationError(std::string("double digest: fragment lengths in ") + name + " must be > 0");
        s += x;
      }
      return s;
    };
    const long sa = check(a, "a"), sb = check(b, "b"), sc = check(c, "c");
    if (sa != sb || sa != sc)
      throw ValidationError("double digest: fragment sums differ (a=" + std::to_string(sa) + ", b=" +
                            std::to_string(sb) + ", c=" + std::to_string(sc) + ")");
    total_length = sa;
  }
};

/**
 * Instance file format: three lines
 *
 *     a: 3 5
 *     b: 2 6
 *     c: 2 1 5
 */
inline DoubleDigestInstance parse_digest_instance(std::istream& in) {
  std::optional<std::vector<long>> a, b, c;
  std::string line;
  while (std::getline(in, line)) {
    const auto t = io::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto colon = t.find(':');
    if (colon == std::string_view::npos) throw ValidationError("digest file: expected 'name: lengths' line");
    const auto name = io::trim(t.substr(0, colon));
    std::vector<long> values;
    for (auto tok : io::tokens(t.substr(colon + 1))) values.push_back(static_cast<long>(io::parse_int(tok)));
    std::optional<std::vector<long>>* slot = nullptr;
    if (name == "a") slot = &a;
    else if (name == "b") slot = &b;
    else if (name == "c") slot = &c;
    else throw ValidationError("digest file: unknown digest '" + std::string(name) + "'");
    if (*slot) throw ValidationError("digest file: digest '" + std::string(name) + "' given twice");
    *slot = std::move(values);
  }
  if (!a || !b || !c) throw ValidationError("digest file: needs lines a:, b: and c:");
  return DoubleDigestInstance(std::move(*a), std::move(*b), std::move(*c));
}

inline std::string to_text(const DoubleDigestInstance& inst) {
  const auto line = [](char name, const std::vector<long>& v) {
    std::string s(1, name);
    s += ':';
    for (long x : v) s += ' ' + std::to_string(x);
    return s + '\n';
  };
  return line('a', inst.a) + line('b', inst.b) + line('c', inst.c);
}

/// sigma lists a's indices left to right along the sequence; mu likewise for b.
struct DigestOrdering {
  std::vector<std::size_t> sigma;
  std::vector<std::size_t> mu;

  friend bool operator==(const DigestOrdering&, const DigestOrdering&) = default;
};

namespace detail {

inline void check_permutation(const std::vector<std::size_t>& perm, std::size_t n, const char* name) {
  if (perm.size() != n) throw ValidationError(std::string("digest ordering: ") + name + " has wrong length");
  std::vector<bool> seen(n, false);
  for (auto i : perm) {
    if (i >= n || seen[i]) throw ValidationError(std::string("digest ordering: ") + name + " is not a permutation");
    seen[i] = true;
  }
}

inline std::vector<std::size_t> identity(std::size_t n) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  return p;
}

}  // namespace detail

/**
 * Double-digest fragments implied by an ordering: cut positions are the interior prefix sums
 * of a (in sigma order) merged with those of b (in mu order), coincident cuts counted once.
 * The gaps between consecutive cuts are returned sorted ascending.
 */
inline std::vector<long> double_digest_implied_fragments(const DigestOrdering& ordering,
                                                         const DoubleDigestInstance& instance) {
  detail::check_permutation(ordering.sigma, instance.a.size(), "sigma");
  detail::check_permutation(ordering.mu, instance.b.size(), "mu");
  std::vector<long> cuts;
  cuts.reserve(instance.a.size() + instance.b.size());
  long pos = 0;
  for (std::size_t k = 0; k + 1 < ordering.sigma.size(); ++k) cuts.push_back(pos += instance.a[ordering.sigma[k]]);
  pos = 0;
  for (std::size_t k = 0; k + 1 < ordering.mu.size(); ++k) cuts.push_back(pos += instance.b[ordering.mu[k]]);
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  std::vector<long> gaps;
  gaps.reserve(cuts.size() + 1);
  long prev = 0;
  for (long c : cuts) {
    gaps.push_back(c - prev);
    prev = c;
  }
  gaps.push_back(instance.total_length - prev);
  std::sort(gaps.begin(), gaps.end());
  return gaps;
}

/**
 * H(sigma, mu) = sum_j (c_j - c^_j)^2 / c_j.
 *
 * Matching rule: c and c^ are sorted ascending and the shorter list is padded with zeros at the
 * front, so the largest fragments line up. Only observed entries of c contribute; zero padding
 * on the c side carries no weight. H = 0 iff the sorted multisets agree.
 */
inline double double_digest_energy(const DigestOrdering& ordering, const DoubleDigestInstance& instance) {
  for (long x : instance.c)
    if (x <= 0) throw ValidationError("double digest: zero-length observed fragment");
  const auto implied = double_digest_implied_fragments(ordering, instance);
  auto observed = instance.c;
  std::sort(observed.begin(), observed.end());
  const std::size_t len = std::max(implied.size(), observed.size());
  const std::size_t pad_obs = len - observed.size();
  const std::size_t pad_imp = len - implied.size();
  double h = 0.0;
  for (std::size_t j = pad_obs; j < len; ++j) {
    const double cj = static_cast<double>(observed[j - pad_obs]);
    const double hat = j >= pad_imp ? static_cast<double>(implied[j - pad_imp]) : 0.0;
    h += (cj - hat) * (cj - hat) / cj;
  }
  return h;
}

/// Double digest as a landscape. Proposals swap two positions within sigma or within mu.
class DoubleDigestLandscape {
 public:
  using state_type = DigestOrdering;

  explicit DoubleDigestLandscape(DoubleDigestInstance instance) : instance_(std::move(instance)) {
    instance_.validate();
  }

  double energy(const state_type& s) const { return double_digest_energy(s, instance_); }

  state_type propose(const state_type& s, RngStream& rng) const {
    state_type next = s;
    const bool can_a = next.sigma.size() > 1, can_b = next.mu.size() > 1;
    if (!can_a && !can_b) return next;
    bool use_a = can_a;
    if (can_a && can_b) use_a = rng.uniform_index(2) == 0;
    auto& perm = use_a ? next.sigma : next.mu;
    const auto n = static_cast<std::uint64_t>(perm.size());
    const auto i = rng.uniform_index(n);
    auto j = rng.uniform_index(n - 1);
    if (j >= i) ++j;
    std::swap(perm[i], perm[j]);
    return next;
  }

  state_type random_state(RngStream& rng) const {
    state_type s{detail::identity(instance_.a.size()), detail::identity(instance_.b.size())};
    shuffle(s.sigma, rng);
    shuffle(s.mu, rng);
    return s;
  }

  const DoubleDigestInstance& instance() const noexcept { return instance_; }

 private:
  DoubleDigestInstance instance_;
};

struct ForwardDigest {
  DoubleDigestInstance instance;
  DigestOrdering truth;
};

/**
 * Builds an instance forward from random cuts: choose distinct interior cut positions for each
 * enzyme, read off a, b and c, then shuffle the listed order of a, b and c. `truth` is the
 * ordering that regenerates the cuts.
 */
inline ForwardDigest random_digest_instance(RngStream& rng, long total_length, std::size_t fragments_a,
                                            std::size_t fragments_b) {
  if (fragments_a < 1 || fragments_b < 1) throw ValidationError("random_digest_instance: need >= 1 fragment");
  if (total_length < static_cast<long>(std::max(fragments_a, fragments_b)))
    throw ValidationError("random_digest_instance: total length too short for fragment count");

  const auto draw_cuts = [&](std::size_t count) {
    std::set<long> cuts;
    while (cuts.size() < count) cuts.insert(1 + static_cast<long>(rng.uniform_index(static_cast<std::uint64_t>(total_length - 1))));
    return std::vector<long>(cuts.begin(), cuts.end());
  };
  const auto gaps = [&](const std::vector<long>& cuts) {
    std::vector<long> g;
    long prev = 0;
    for (long c : cuts) {
      g.push_back(c - prev);
      prev = c;
    }
    g.push_back(total_length - prev);
    return g;
  };
  // Lists positional fragments in shuffled order; returns the ordering that restores positions.
  const auto scramble = [&](const std::vector<long>& positional, std::vector<long>& listed) {
    auto perm = detail::identity(positional.size());
    shuffle(perm, rng);
    listed.assign(positional.size(), 0);
    std::vector<std::size_t> order(positional.size());
    for (std::size_t k = 0; k < perm.size(); ++k) {
      listed[k] = positional[perm[k]];
      order[perm[k]] = k;
    }
    return order;
  };

  const auto cuts_a = draw_cuts(fragments_a - 1);
  const auto cuts_b = draw_cuts(fragments_b - 1);
  std::vector<long> merged(cuts_a);
  merged.insert(merged.end(), cuts_b.begin(), cuts_b.end());
  std::sort(merged.begin(), merged.end());
  merged.erase(std::unique(merged.begin(), merged.end()), merged.end());

  std::vector<long> a, b;
  DigestOrdering truth;
  truth.sigma = scramble(gaps(cuts_a), a);
  truth.mu = scramble(gaps(cuts_b), b);
  auto c = gaps(merged);
  shuffle(c, rng);
  return {DoubleDigestInstance(std::move(a), std::move(b), std::move(c)), std::move(truth)};
}

}  // namespace statml::anneal
