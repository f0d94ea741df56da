#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"
#include "errors.hpp"
#include "io.hpp"
#include "rng.hpp"

namespace statml::ebm {

// ---------------------------------------------------------------------------
// Energy-based learning over a finite label space

namespace detail {

inline void check_table(std::span<const double> energies, const char* op) {
  if (energies.empty()) throw ValidationError(std::string(op) + ": empty energy table");
  for (double e : energies)
    if (!std::isfinite(e)) throw ValidationError(std::string(op) + ": non-finite energy");
}

inline void check_label(std::span<const double> energies, std::size_t correct, const char* op) {
  if (correct >= energies.size())
    throw ValidationError(std::string(op) + ": label index " + std::to_string(correct) + " out of range");
}

// log sum_y exp(-beta E_y), shifted by the minimum energy.
inline double log_partition(std::span<const double> energies, double beta) {
  const double e_min = *std::min_element(energies.begin(), energies.end());
  double s = 0.0;
  for (double e : energies) s += std::exp(-beta * (e - e_min));
  return -beta * e_min + std::log(s);
}

}  // namespace detail

/// argmin_y E(y); ties go to the lowest index.
inline std::size_t ebl_infer(std::span<const double> energies) {
  detail::check_table(energies, "ebl_infer");
  return static_cast<std::size_t>(std::min_element(energies.begin(), energies.end()) - energies.begin());
}

struct GibbsPosterior {
  DiscreteDistribution posterior;
  double z;
  double log_z;
};

/// P(y) = exp(-beta E_y) / Z. Z itself may overflow to +inf; log_z stays finite.
inline GibbsPosterior gibbs_posterior(std::span<const double> energies, double beta) {
  detail::check_table(energies, "gibbs_posterior");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ValidationError("gibbs_posterior: beta must be finite and >= 0");
  const double e_min = *std::min_element(energies.begin(), energies.end());
  std::vector<double> w(energies.size());
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] = std::exp(-beta * (energies[i] - e_min));
  for (auto& x : w) x /= s;
  const double log_z = -beta * e_min + std::log(s);
  return {DiscreteDistribution(std::move(w)), std::exp(log_z), log_z};
}

inline double loss_perceptron(std::span<const double> energies, std::size_t correct) {
  detail::check_table(energies, "loss_perceptron");
  detail::check_label(energies, correct, "loss_perceptron");
  return energies[correct] - *std::min_element(energies.begin(), energies.end());
}

inline double loss_hinge(double e_correct, double e_incorrect, double margin) {
  if (!std::isfinite(e_correct) || !std::isfinite(e_incorrect) || !std::isfinite(margin))
    throw ValidationError("loss_hinge: non-finite input");
  if (margin < 0.0) throw ValidationError("loss_hinge: margin must be >= 0");
  return std::max(0.0, margin + e_correct - e_incorrect);
}

/// E(y_correct) + (1/beta) log sum_y exp(-beta E_y)  =  -(1/beta) ln P(y_correct).
inline double loss_nll(std::span<const double> energies, std::size_t correct, double beta) {
  detail::check_table(energies, "loss_nll");
  detail::check_label(energies, correct, "loss_nll");
  if (!(beta > 0.0) || !std::isfinite(beta)) throw ValidationError("loss_nll: beta must be > 0");
  // Written relative to the minimum so the two terms do not cancel catastrophically.
  const double e_min = *std::min_element(energies.begin(), energies.end());
  double s = 0.0;
  for (double e : energies) s += std::exp(-beta * (e - e_min));
  return std::max(0.0, (energies[correct] - e_min) + std::log(s) / beta);
}

// ---------------------------------------------------------------------------
// Restricted Boltzmann machine with {0,1} units
//
// Mapping to +-1 spins: s = 2u - 1.

inline constexpr std::size_t kMaxExactUnits = 20;

class BoltzmannMachine {
 public:
  BoltzmannMachine() = default;

  /// `w` is row-major n_visible x n_hidden.
  BoltzmannMachine(std::vector<double> a, std::vector<double> b, std::vector<double> w)
      : a_(std::move(a)), b_(std::move(b)), w_(std::move(w)) {
    if (w_.size() != a_.size() * b_.size())
      throw ValidationError("boltzmann machine: W must be n_visible x n_hidden (" + std::to_string(a_.size()) + "x" +
                            std::to_string(b_.size()) + ")");
    for (const auto* v : {&a_, &b_, &w_})
      for (double x : *v)
        if (!std::isfinite(x)) throw ValidationError("boltzmann machine: non-finite parameter");
  }

  static BoltzmannMachine zeros(std::size_t n_visible, std::size_t n_hidden) {
    return BoltzmannMachine(std::vector<double>(n_visible, 0.0), std::vector<double>(n_hidden, 0.0),
                            std::vector<double>(n_visible * n_hidden, 0.0));
  }

  /// Small random weights, uniform on [-scale, scale]; biases zero.
  static BoltzmannMachine random(std::size_t n_visible, std::size_t n_hidden, double scale, RngStream& rng) {
    auto m = zeros(n_visible, n_hidden);
    for (auto& x : m.w_) x = scale * (2.0 * rng.uniform() - 1.0);
    return m;
  }

  std::size_t n_visible() const noexcept { return a_.size(); }
  std::size_t n_hidden() const noexcept { return b_.size(); }
  const std::vector<double>& a() const noexcept { return a_; }
  const std::vector<double>& b() const noexcept { return b_; }
  const std::vector<double>& w() const noexcept { return w_; }
  double weight(std::size_t i, std::size_t j) const { return w_[i * b_.size() + j]; }

  std::vector<double>& a_mut() noexcept { return a_; }
  std::vector<double>& b_mut() noexcept { return b_; }
  std::vector<double>& w_mut() noexcept { return w_; }

  friend bool operator==(const BoltzmannMachine&, const BoltzmannMachine&) = default;

 private:
  std::vector<double> a_;
  std::vector<double> b_;
  std::vector<double> w_;
};

struct BMState {
  std::vector<std::uint8_t> v;
  std::vector<std::uint8_t> h;

  friend bool operator==(const BMState&, const BMState&) = default;
};

namespace detail {

inline void check_units(std::span<const std::uint8_t> u, std::size_t n, const char* what) {
  if (u.size() != n)
    throw ValidationError(std::string("boltzmann machine: ") + what + " has length " + std::to_string(u.size()) +
                          ", expected " + std::to_string(n));
  for (auto x : u)
    if (x > 1) throw ValidationError(std::string("boltzmann machine: ") + what + " entries must be 0 or 1");
}

inline void check_state(const BMState& s, const BoltzmannMachine& m) {
  check_units(s.v, m.n_visible(), "v");
  check_units(s.h, m.n_hidden(), "h");
}

inline void check_exact_capacity(const BoltzmannMachine& m, const char* op) {
  if (m.n_visible() + m.n_hidden() > kMaxExactUnits)
    throw CapacityError(std::string(op) + ": " + std::to_string(m.n_visible() + m.n_hidden()) +
                        " units exceeds exact-enumeration limit of " + std::to_string(kMaxExactUnits));
}

inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace detail

inline double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// E(v, h) = -sum a_i v_i - sum b_j h_j - sum_ij v_i h_j w_ij
inline double bm_energy(const BMState& state, const BoltzmannMachine& m) {
  detail::check_state(state, m);
  double e = 0.0;
  for (std::size_t i = 0; i < m.n_visible(); ++i) e -= m.a()[i] * state.v[i];
  for (std::size_t j = 0; j < m.n_hidden(); ++j) e -= m.b()[j] * state.h[j];
  for (std::size_t i = 0; i < m.n_visible(); ++i) {
    if (!state.v[i]) continue;
    for (std::size_t j = 0; j < m.n_hidden(); ++j) e -= m.weight(i, j) * state.h[j];
  }
  return e;
}

/// Joint-state index: bit i is v_i, bit n_visible + j is h_j.
inline std::uint64_t bm_state_index(const BMState& s) {
  std::uint64_t idx = 0;
  for (std::size_t i = 0; i < s.v.size(); ++i) idx |= std::uint64_t{s.v[i]} << i;
  for (std::size_t j = 0; j < s.h.size(); ++j) idx |= std::uint64_t{s.h[j]} << (s.v.size() + j);
  return idx;
}

inline BMState bm_state_from_index(std::uint64_t idx, std::size_t n_visible, std::size_t n_hidden) {
  BMState s{std::vector<std::uint8_t>(n_visible), std::vector<std::uint8_t>(n_hidden)};
  for (std::size_t i = 0; i < n_visible; ++i) s.v[i] = (idx >> i) & 1U;
  for (std::size_t j = 0; j < n_hidden; ++j) s.h[j] = (idx >> (n_visible + j)) & 1U;
  return s;
}

inline std::uint64_t visible_index(std::span<const std::uint8_t> v) {
  std::uint64_t idx = 0;
  for (std::size_t i = 0; i < v.size(); ++i) idx |= std::uint64_t{v[i]} << i;
  return idx;
}

struct BMPartition {
  double z;
  double log_z;
  DiscreteDistribution joint;
};

/// Z = sum over all (v, h) of exp(-E(v, h)), beta = 1.
inline BMPartition bm_partition_exact(const BoltzmannMachine& m) {
  detail::check_exact_capacity(m, "bm_partition_exact");
  const std::size_t nv = m.n_visible(), nh = m.n_hidden();
  const std::uint64_t count = std::uint64_t{1} << (nv + nh);
  std::vector<double> neg_e(count);
  for (std::uint64_t idx = 0; idx < count; ++idx) neg_e[idx] = -bm_energy(bm_state_from_index(idx, nv, nh), m);
  const double shift = *std::max_element(neg_e.begin(), neg_e.end());
  double s = 0.0;
  for (auto& x : neg_e) s += x = std::exp(x - shift);
  for (auto& x : neg_e) x /= s;
  const double log_z = shift + std::log(s);
  return {std::exp(log_z), log_z, DiscreteDistribution(std::move(neg_e))};
}

/// Marginal over the 2^n_visible visible patterns, from a joint in bm_state_index order.
inline DiscreteDistribution visible_marginal(const DiscreteDistribution& joint, std::size_t n_visible) {
  const std::uint64_t mask = (std::uint64_t{1} << n_visible) - 1;
  std::vector<double> p(std::size_t{1} << n_visible, 0.0);
  for (std::uint64_t idx = 0; idx < joint.size(); ++idx) p[idx & mask] += joint[idx];
  return DiscreteDistribution(std::move(p));
}

/// -log p*(v) up to log Z: the free energy a.v + sum_j softplus(b_j + sum_i v_i w_ij), negated.
inline double bm_free_energy(std::span<const std::uint8_t> v, const BoltzmannMachine& m) {
  detail::check_units(v, m.n_visible(), "v");
  double f = 0.0;
  for (std::size_t i = 0; i < m.n_visible(); ++i) f -= m.a()[i] * v[i];
  for (std::size_t j = 0; j < m.n_hidden(); ++j) {
    double x = m.b()[j];
    for (std::size_t i = 0; i < m.n_visible(); ++i) x += v[i] * m.weight(i, j);
    f -= detail::softplus(x);
  }
  return f;
}

inline std::vector<double> hidden_probabilities(const BoltzmannMachine& m, std::span<const std::uint8_t> v) {
  std::vector<double> p(m.n_hidden());
  for (std::size_t j = 0; j < m.n_hidden(); ++j) {
    double x = m.b()[j];
    for (std::size_t i = 0; i < m.n_visible(); ++i) x += v[i] * m.weight(i, j);
    p[j] = logistic(x);
  }
  return p;
}

inline std::vector<double> visible_probabilities(const BoltzmannMachine& m, std::span<const std::uint8_t> h) {
  std::vector<double> p(m.n_visible());
  for (std::size_t i = 0; i < m.n_visible(); ++i) {
    double x = m.a()[i];
    for (std::size_t j = 0; j < m.n_hidden(); ++j) x += m.weight(i, j) * h[j];
    p[i] = logistic(x);
  }
  return p;
}

namespace detail {

inline void sample_units(std::span<const double> probs, std::vector<std::uint8_t>& out, RngStream& rng) {
  for (std::size_t k = 0; k < probs.size(); ++k) out[k] = rng.uniform() < probs[k] ? 1 : 0;
}

}  // namespace detail

/**
 * Block Gibbs sweeps: h ~ p(h | v), then v ~ p(v | h). `visit` is called with the state after
 * each of the `steps` sweeps.
 */
template <typename Visitor>
void bm_gibbs_run(const BoltzmannMachine& m, std::uint64_t steps, RngStream& rng, BMState start, Visitor&& visit) {
  detail::check_state(start, m);
  BMState s = std::move(start);
  for (std::uint64_t t = 0; t < steps; ++t) {
    detail::sample_units(hidden_probabilities(m, s.v), s.h, rng);
    detail::sample_units(visible_probabilities(m, s.h), s.v, rng);
    visit(static_cast<const BMState&>(s));
  }
}

inline std::vector<BMState> bm_gibbs_sample(const BoltzmannMachine& m, std::uint64_t steps, RngStream& rng,
                                            BMState start) {
  std::vector<BMState> out;
  out.reserve(steps);
  bm_gibbs_run(m, steps, rng, std::move(start), [&](const BMState& s) { out.push_back(s); });
  return out;
}

// ---------------------------------------------------------------------------
// Training

using VisibleData = std::vector<std::vector<std::uint8_t>>;

/// One visible vector per non-empty line, written as 0/1 characters.
inline VisibleData parse_visible_data(std::istream& in) {
  VisibleData data;
  std::string line;
  while (std::getline(in, line)) {
    const auto t = io::trim(line);
    if (t.empty() || t.front() == '#') continue;
    std::vector<std::uint8_t> v;
    for (char ch : t) {
      if (ch == '0' || ch == '1') v.push_back(static_cast<std::uint8_t>(ch - '0'));
      else if (ch != ' ' && ch != ',') throw ValidationError("visible data: unexpected character '" + std::string(1, ch) + "'");
    }
    if (!data.empty() && v.size() != data.front().size())
      throw ValidationError("visible data: rows have different lengths");
    data.push_back(std::move(v));
  }
  if (data.empty()) throw ValidationError("visible data: no rows");
  return data;
}

namespace detail {

inline void check_data(const VisibleData& data, const BoltzmannMachine& m) {
  if (data.empty()) throw ValidationError("bm_train: empty data set");
  for (const auto& v : data) check_units(v, m.n_visible(), "data row");
}

// log Z via the visible free energy, 2^n_visible terms.
inline double bm_log_partition(const BoltzmannMachine& m, std::vector<double>* visible_probs = nullptr) {
  const std::size_t nv = m.n_visible();
  const std::uint64_t count = std::uint64_t{1} << nv;
  std::vector<double> neg_f(count);
  std::vector<std::uint8_t> v(nv);
  for (std::uint64_t idx = 0; idx < count; ++idx) {
    for (std::size_t i = 0; i < nv; ++i) v[i] = (idx >> i) & 1U;
    neg_f[idx] = -bm_free_energy(v, m);
  }
  const double shift = *std::max_element(neg_f.begin(), neg_f.end());
  double s = 0.0;
  for (auto& x : neg_f) s += x = std::exp(x - shift);
  if (visible_probs) {
    for (auto& x : neg_f) x /= s;
    *visible_probs = std::move(neg_f);
  }
  return shift + std::log(s);
}

}  // namespace detail

/// Mean negative log-likelihood of the data under the machine's visible marginal.
inline double bm_nll(const BoltzmannMachine& m, const VisibleData& data) {
  detail::check_exact_capacity(m, "bm_nll");
  detail::check_data(data, m);
  const double log_z = detail::bm_log_partition(m);
  double total = 0.0;
  for (const auto& v : data) total += bm_free_energy(v, m) + log_z;
  return total / static_cast<double>(data.size());
}

/// Gradient with the same layout as the machine parameters.
struct BMGradient {
  std::vector<double> a;
  std::vector<double> b;
  std::vector<double> w;
};

namespace detail {

// Adds sign * sufficient statistics <v>, <h>, <v h^T> of (v, p(h|v)) into g.
inline void accumulate_stats(BMGradient& g, const BoltzmannMachine& m, std::span<const std::uint8_t> v,
                             double weight) {
  const auto ph = hidden_probabilities(m, v);
  const std::size_t nh = m.n_hidden();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i]) continue;
    g.a[i] += weight;
    for (std::size_t j = 0; j < nh; ++j) g.w[i * nh + j] += weight * ph[j];
  }
  for (std::size_t j = 0; j < nh; ++j) g.b[j] += weight * ph[j];
}

inline BMGradient zero_gradient(const BoltzmannMachine& m) {
  return {std::vector<double>(m.n_visible(), 0.0), std::vector<double>(m.n_hidden(), 0.0),
          std::vector<double>(m.w().size(), 0.0)};
}

}  // namespace detail

/**
 * Gradient of bm_nll: <stat>_model - <stat>_data, where the hidden statistics use p(h | v)
 * and the model expectation enumerates all visible patterns.
 */
inline BMGradient bm_nll_gradient(const BoltzmannMachine& m, const VisibleData& data) {
  detail::check_exact_capacity(m, "bm_nll_gradient");
  detail::check_data(data, m);
  auto g = detail::zero_gradient(m);
  const double inv_n = 1.0 / static_cast<double>(data.size());
  for (const auto& v : data) detail::accumulate_stats(g, m, v, -inv_n);

  std::vector<double> pv;
  detail::bm_log_partition(m, &pv);
  const std::size_t nv = m.n_visible();
  std::vector<std::uint8_t> v(nv);
  for (std::uint64_t idx = 0; idx < pv.size(); ++idx) {
    for (std::size_t i = 0; i < nv; ++i) v[i] = (idx >> i) & 1U;
    detail::accumulate_stats(g, m, v, pv[idx]);
  }
  return g;
}

enum class TrainMethod { exact_gradient, cd_k };
enum class LossKind { nll, reconstruction_error };

inline TrainMethod parse_train_method(std::string_view name) {
  if (name == "exact_gradient") return TrainMethod::exact_gradient;
  if (name == "cd_k") return TrainMethod::cd_k;
  throw ValidationError("unknown training method '" + std::string(name) + "'");
}

inline std::string_view to_string(LossKind k) { return k == LossKind::nll ? "nll" : "reconstruction_error"; }

struct TrainOptions {
  TrainMethod method = TrainMethod::exact_gradient;
  double learning_rate = 0.1;
  std::uint64_t epochs = 100;
  std::uint64_t k = 1;
};

struct TrainResult {
  BoltzmannMachine machine;
  std::vector<double> loss;
  LossKind loss_kind;
};

/// Mean squared error between each data vector and its mean-field reconstruction p(v | p(h | v)).
inline double bm_reconstruction_error(const BoltzmannMachine& m, const VisibleData& data) {
  detail::check_data(data, m);
  double total = 0.0;
  for (const auto& v : data) {
    const auto ph = hidden_probabilities(m, v);
    const std::size_t nh = m.n_hidden();
    for (std::size_t i = 0; i < v.size(); ++i) {
      double x = m.a()[i];
      for (std::size_t j = 0; j < nh; ++j) x += m.weight(i, j) * ph[j];
      const double d = v[i] - logistic(x);
      total += d * d;
    }
  }
  return total / static_cast<double>(data.size());
}

/**
 * Full-batch gradient descent on the data NLL. exact_gradient enumerates the model term;
 * cd_k replaces it with the statistics after k Gibbs sweeps started at each data vector.
 * The loss curve has one entry per epoch, evaluated after that epoch's update: NLL when the
 * machine is small enough to enumerate, otherwise reconstruction error.
 */
inline TrainResult bm_train(BoltzmannMachine machine, const VisibleData& data, const TrainOptions& options,
                            RngStream& rng) {
  detail::check_data(data, machine);
  if (!(options.learning_rate >= 0.0) || !std::isfinite(options.learning_rate))
    throw ValidationError("bm_train: learning_rate must be finite and >= 0");
  if (options.method == TrainMethod::exact_gradient) detail::check_exact_capacity(machine, "bm_train (exact_gradient)");
  if (options.method == TrainMethod::cd_k && options.k < 1) throw ValidationError("bm_train: k must be >= 1");

  const bool enumerable = machine.n_visible() + machine.n_hidden() <= kMaxExactUnits;
  TrainResult result{machine, {}, enumerable ? LossKind::nll : LossKind::reconstruction_error};
  result.loss.reserve(options.epochs);
  auto& m = result.machine;
  const double inv_n = 1.0 / static_cast<double>(data.size());

  for (std::uint64_t epoch = 0; epoch < options.epochs; ++epoch) {
    BMGradient g;
    if (options.method == TrainMethod::exact_gradient) {
      g = bm_nll_gradient(m, data);
    } else {
      g = detail::zero_gradient(m);
      BMState s{{}, std::vector<std::uint8_t>(m.n_hidden())};
      for (const auto& v : data) {
        detail::accumulate_stats(g, m, v, -inv_n);
        s.v = v;
        for (std::uint64_t step = 0; step < options.k; ++step) {
          detail::sample_units(hidden_probabilities(m, s.v), s.h, rng);
          detail::sample_units(visible_probabilities(m, s.h), s.v, rng);
        }
        detail::accumulate_stats(g, m, s.v, inv_n);
      }
    }
    for (std::size_t i = 0; i < g.a.size(); ++i) m.a_mut()[i] -= options.learning_rate * g.a[i];
    for (std::size_t j = 0; j < g.b.size(); ++j) m.b_mut()[j] -= options.learning_rate * g.b[j];
    for (std::size_t k = 0; k < g.w.size(); ++k) m.w_mut()[k] -= options.learning_rate * g.w[k];
    for (const auto* v : {&m.a(), &m.b(), &m.w()})
      for (double x : *v)
        if (!std::isfinite(x)) throw NumericalError("bm_train: parameters diverged at epoch " + std::to_string(epoch));
    result.loss.push_back(enumerable ? bm_nll(m, data) : bm_reconstruction_error(m, data));
  }
  return result;
}

}  // namespace statml::ebm
