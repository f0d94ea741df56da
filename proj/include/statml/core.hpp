#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"

namespace statml {

inline constexpr double kProbabilityTolerance = 1e-9;

/**
 * Finite probability vector. Every entry is non-negative and the entries sum to one
 * within kProbabilityTolerance; construction enforces both.
 */
class DiscreteDistribution {
 public:
  DiscreteDistribution() = default;

  explicit DiscreteDistribution(std::vector<double> probs,
                                std::optional<std::vector<std::string>> labels = std::nullopt)
      : probs_(std::move(probs)), labels_(std::move(labels)) {
    if (probs_.empty()) throw ValidationError("distribution: no outcomes");
    double total = 0.0;
    for (std::size_t i = 0; i < probs_.size(); ++i) {
      const double p = probs_[i];
      if (!std::isfinite(p) || p < 0.0)
        throw ValidationError("distribution: entry " + std::to_string(i) + " is negative or non-finite");
      total += p;
    }
    if (std::abs(total - 1.0) > kProbabilityTolerance)
      throw ValidationError("distribution: entries sum to " + std::to_string(total) + ", expected 1");
    if (labels_ && labels_->size() != probs_.size())
      throw ValidationError("distribution: label count does not match outcome count");
  }

  static DiscreteDistribution uniform(std::size_t n) {
    if (n == 0) throw ValidationError("distribution: no outcomes");
    return DiscreteDistribution(std::vector<double>(n, 1.0 / static_cast<double>(n)));
  }

  /// Normalizes non-negative weights. A zero total is a validation error.
  static DiscreteDistribution from_weights(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) {
      if (!std::isfinite(w) || w < 0.0) throw ValidationError("distribution: weight is negative or non-finite");
      total += w;
    }
    if (!(total > 0.0)) throw ValidationError("distribution: weights sum to zero");
    std::vector<double> p(weights.begin(), weights.end());
    for (double& x : p) x /= total;
    return DiscreteDistribution(std::move(p));
  }

  static DiscreteDistribution point_mass(std::size_t n, std::size_t at) {
    if (at >= n) throw ValidationError("distribution: point mass index out of range");
    std::vector<double> p(n, 0.0);
    p[at] = 1.0;
    return DiscreteDistribution(std::move(p));
  }

  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  std::span<const double> probs() const noexcept { return probs_; }
  const std::optional<std::vector<std::string>>& labels() const noexcept { return labels_; }

  /// Mean of the outcome index, treating outcome i as the integer i.
  double index_mean() const {
    double m = 0.0;
    for (std::size_t i = 0; i < probs_.size(); ++i) m += static_cast<double>(i) * probs_[i];
    return m;
  }

  friend bool operator==(const DiscreteDistribution&, const DiscreteDistribution&) = default;

 private:
  std::vector<double> probs_;
  std::optional<std::vector<std::string>> labels_;
};

/**
 * Joint probability table over outcome pairs, row-major `rows x cols`.
 */
class JointDistribution {
 public:
  JointDistribution(std::size_t rows, std::size_t cols, std::vector<double> table)
      : rows_(rows), cols_(cols), table_(std::move(table)) {
    if (rows_ == 0 || cols_ == 0) throw ValidationError("joint: empty table");
    if (table_.size() != rows_ * cols_) throw ValidationError("joint: table size does not match dimensions");
    double total = 0.0;
    for (double p : table_) {
      if (!std::isfinite(p) || p < 0.0) throw ValidationError("joint: entry is negative or non-finite");
      total += p;
    }
    if (std::abs(total - 1.0) > kProbabilityTolerance)
      throw ValidationError("joint: entries sum to " + std::to_string(total) + ", expected 1");
  }

  static JointDistribution from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw ValidationError("joint: empty table");
    const std::size_t cols = rows.front().size();
    std::vector<double> flat;
    flat.reserve(rows.size() * cols);
    for (const auto& r : rows) {
      if (r.size() != cols) throw ValidationError("joint: ragged rows");
      flat.insert(flat.end(), r.begin(), r.end());
    }
    return JointDistribution(rows.size(), cols, std::move(flat));
  }

  /// p(x, t) = p(x) p(t).
  static JointDistribution product(const DiscreteDistribution& px, const DiscreteDistribution& pt) {
    std::vector<double> flat(px.size() * pt.size());
    for (std::size_t i = 0; i < px.size(); ++i)
      for (std::size_t j = 0; j < pt.size(); ++j) flat[i * pt.size() + j] = px[i] * pt[j];
    return JointDistribution(px.size(), pt.size(), std::move(flat));
  }

  /// Identity channel: p(x, t) = p(x) 1[x = t].
  static JointDistribution diagonal(const DiscreteDistribution& p) {
    const std::size_t n = p.size();
    std::vector<double> flat(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) flat[i * n + i] = p[i];
    return JointDistribution(n, n, std::move(flat));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  double at(std::size_t r, std::size_t c) const { return table_[r * cols_ + c]; }
  std::span<const double> table() const noexcept { return table_; }

  DiscreteDistribution row_marginal() const {
    std::vector<double> m(rows_, 0.0);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) m[r] += at(r, c);
    return DiscreteDistribution(std::move(m));
  }

  DiscreteDistribution col_marginal() const {
    std::vector<double> m(cols_, 0.0);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) m[c] += at(r, c);
    return DiscreteDistribution(std::move(m));
  }

  JointDistribution transposed() const {
    std::vector<double> flat(table_.size());
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) flat[c * rows_ + r] = at(r, c);
    return JointDistribution(cols_, rows_, std::move(flat));
  }

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> table_;
};

/// Importance-weighted sample: weight = p(x) / q(x).
struct WeightedSample {
  double value = 0.0;
  double weight = 0.0;
};

namespace detail {

inline double xlogx_nats(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }

inline double entropy_nats(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) h -= xlogx_nats(p);
  return h;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Entropy and information

/**
 * Shannon entropy in units of log_base (base 2 gives bits). 0 log 0 is taken as 0.
 */
inline double entropy_shannon(const DiscreteDistribution& dist, double log_base = 2.0) {
  if (!(log_base > 1.0) || !std::isfinite(log_base)) throw ValidationError("entropy_shannon: log_base must be > 1");
  return std::max(0.0, detail::entropy_nats(dist.probs()) / std::log(log_base));
}

/// Gibbs entropy -k_B sum p ln p.
inline double entropy_gibbs(const DiscreteDistribution& dist, double k_b = 1.0) {
  if (!(k_b > 0.0) || !std::isfinite(k_b)) throw ValidationError("entropy_gibbs: k_B must be > 0");
  return k_b * std::max(0.0, detail::entropy_nats(dist.probs()));
}

struct WeightedChild {
  double weight;
  DiscreteDistribution dist;
};

/**
 * Entropy reduction (bits) from splitting `parent` into weighted children.
 */
inline double info_gain(const DiscreteDistribution& parent, std::span<const WeightedChild> children) {
  if (children.empty()) throw ValidationError("info_gain: no children");
  double wsum = 0.0;
  double child_h = 0.0;
  for (const auto& c : children) {
    if (!std::isfinite(c.weight) || c.weight < 0.0) throw ValidationError("info_gain: negative child weight");
    wsum += c.weight;
    child_h += c.weight * entropy_shannon(c.dist, 2.0);
  }
  if (std::abs(wsum - 1.0) > kProbabilityTolerance)
    throw ValidationError("info_gain: child weights sum to " + std::to_string(wsum) + ", expected 1");
  return entropy_shannon(parent, 2.0) - child_h;
}

/**
 * KL(q || p) in nats. A p_i = 0 with q_i > 0 is a DomainError rather than +inf.
 */
inline double kl_divergence(const DiscreteDistribution& q, const DiscreteDistribution& p) {
  if (q.size() != p.size()) throw ValidationError("kl_divergence: support sizes differ");
  double d = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (q[i] == 0.0) continue;
    if (p[i] == 0.0)
      throw DomainError("kl_divergence: q is not absolutely continuous w.r.t. p at outcome " + std::to_string(i));
    d += q[i] * std::log(q[i] / p[i]);
  }
  return std::max(0.0, d);
}

/// Total-variation distance (1/2) sum |a_i - b_i|.
inline double total_variation(const DiscreteDistribution& a, const DiscreteDistribution& b) {
  if (a.size() != b.size()) throw ValidationError("total_variation: support sizes differ");
  double tv = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) tv += std::abs(a[i] - b[i]);
  return 0.5 * tv;
}

/// Joint entropy H(X, T) in nats.
inline double joint_entropy(const JointDistribution& joint) { return detail::entropy_nats(joint.table()); }

/// I(X; T) in nats, summed directly over the joint table.
inline double mutual_information(const JointDistribution& joint) {
  const auto px = joint.row_marginal();
  const auto pt = joint.col_marginal();
  double mi = 0.0;
  for (std::size_t r = 0; r < joint.rows(); ++r) {
    for (std::size_t c = 0; c < joint.cols(); ++c) {
      const double pxt = joint.at(r, c);
      if (pxt > 0.0) mi += pxt * std::log(pxt / (px[r] * pt[c]));
    }
  }
  return std::max(0.0, mi);
}

/// Information-bottleneck objective I(X;T) - beta I(T;Y), nats.
inline double ib_objective(const JointDistribution& joint_xt, const JointDistribution& joint_ty, double beta) {
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ValidationError("ib_objective: beta must be >= 0");
  return mutual_information(joint_xt) - beta * mutual_information(joint_ty);
}

// ---------------------------------------------------------------------------
// Sampling estimators

/**
 * Importance-sampling estimate of E_p[h] from draws x_i ~ q:
 * (1/N) sum h(x_i) p(x_i) / q(x_i).
 */
inline double importance_estimate(std::span<const double> h_values, std::span<const double> p_densities,
                                  std::span<const double> q_densities) {
  if (h_values.size() != p_densities.size() || h_values.size() != q_densities.size())
    throw ValidationError("importance_estimate: input lengths differ");
  if (h_values.empty()) throw ValidationError("importance_estimate: no samples");
  double sum = 0.0;
  for (std::size_t i = 0; i < h_values.size(); ++i) {
    if (!(q_densities[i] > 0.0)) throw DomainError("importance_estimate: proposal density must be > 0");
    if (p_densities[i] < 0.0) throw DomainError("importance_estimate: target density is negative");
    sum += h_values[i] * (p_densities[i] / q_densities[i]);
  }
  return sum / static_cast<double>(h_values.size());
}

inline std::vector<WeightedSample> importance_weights(std::span<const double> values,
                                                      std::span<const double> p_densities,
                                                      std::span<const double> q_densities) {
  if (values.size() != p_densities.size() || values.size() != q_densities.size())
    throw ValidationError("importance_weights: input lengths differ");
  std::vector<WeightedSample> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(q_densities[i] > 0.0)) throw DomainError("importance_weights: proposal density must be > 0");
    out[i] = {values[i], p_densities[i] / q_densities[i]};
  }
  return out;
}

/**
 * Scalar distribution with known mean and variance, drawn from an RngStream.
 */
class ScalarSampler {
 public:
  enum class Kind { bernoulli, uniform, exponential, discrete };

  static ScalarSampler bernoulli(double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("bernoulli: p outside [0, 1]");
    return ScalarSampler(Kind::bernoulli, {p}, {});
  }
  static ScalarSampler uniform(double lo, double hi) {
    if (!(hi >= lo)) throw ValidationError("uniform: hi < lo");
    return ScalarSampler(Kind::uniform, {lo, hi}, {});
  }
  static ScalarSampler exponential(double rate) {
    if (!(rate > 0.0)) throw ValidationError("exponential: rate must be > 0");
    return ScalarSampler(Kind::exponential, {rate}, {});
  }
  /// Finite distribution over `values` with probabilities `dist`.
  static ScalarSampler discrete(std::vector<double> values, const DiscreteDistribution& dist) {
    if (values.size() != dist.size()) throw ValidationError("discrete sampler: values/probabilities length mismatch");
    std::vector<double> cdf(dist.size());
    std::partial_sum(dist.probs().begin(), dist.probs().end(), cdf.begin());
    std::vector<double> params(dist.probs().begin(), dist.probs().end());
    ScalarSampler s(Kind::discrete, std::move(params), std::move(values));
    s.cdf_ = std::move(cdf);
    return s;
  }

  Kind kind() const noexcept { return kind_; }

  double mean() const {
    switch (kind_) {
      case Kind::bernoulli: return params_[0];
      case Kind::uniform: return 0.5 * (params_[0] + params_[1]);
      case Kind::exponential: return 1.0 / params_[0];
      case Kind::discrete: {
        double m = 0.0;
        for (std::size_t i = 0; i < values_.size(); ++i) m += params_[i] * values_[i];
        return m;
      }
    }
    return 0.0;
  }

  double variance() const {
    switch (kind_) {
      case Kind::bernoulli: return params_[0] * (1.0 - params_[0]);
      case Kind::uniform: {
        const double w = params_[1] - params_[0];
        return w * w / 12.0;
      }
      case Kind::exponential: return 1.0 / (params_[0] * params_[0]);
      case Kind::discrete: {
        const double m = mean();
        double v = 0.0;
        for (std::size_t i = 0; i < values_.size(); ++i) v += params_[i] * (values_[i] - m) * (values_[i] - m);
        return v;
      }
    }
    return 0.0;
  }

  double draw(RngStream& rng) const {
    switch (kind_) {
      case Kind::bernoulli: return rng.uniform() < params_[0] ? 1.0 : 0.0;
      case Kind::uniform: return params_[0] + (params_[1] - params_[0]) * rng.uniform();
      case Kind::exponential: return -std::log1p(-rng.uniform()) / params_[0];
      case Kind::discrete: {
        const double u = rng.uniform();
        const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
        const auto idx = std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), values_.size() - 1);
        return values_[idx];
      }
    }
    return 0.0;
  }

 private:
  ScalarSampler(Kind kind, std::vector<double> params, std::vector<double> values)
      : kind_(kind), params_(std::move(params)), values_(std::move(values)) {}

  Kind kind_;
  std::vector<double> params_;
  std::vector<double> values_;
  std::vector<double> cdf_;
};

/**
 * `reps` independent draws of (S_n - n mu) / (sigma sqrt n), S_n a sum of n i.i.d. draws.
 * Zero variance is a DomainError.
 */
inline std::vector<double> clt_standardized_sums(const ScalarSampler& sampler, std::size_t n, std::size_t reps,
                                                 RngStream& rng) {
  if (n == 0 || reps == 0) throw ValidationError("clt_standardized_sums: n and reps must be >= 1");
  const double mu = sampler.mean();
  const double var = sampler.variance();
  if (!(var > 0.0)) throw DomainError("clt_standardized_sums: sampler has zero variance");
  const double nd = static_cast<double>(n);
  const double scale = 1.0 / (std::sqrt(var) * std::sqrt(nd));
  std::vector<double> out(reps);
  for (std::size_t r = 0; r < reps; ++r) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += sampler.draw(rng);
    out[r] = (s - nd * mu) * scale;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Learning-theory quantities

/**
 * PAC sample size ceil((1/eps)(ln(|H|/delta) + k)), clamped at 0. Natural log.
 */
inline std::int64_t pac_sample_bound(double epsilon, double delta, std::uint64_t hypothesis_count, double k = 0.0) {
  if (!(epsilon > 0.0 && epsilon <= 1.0)) throw ValidationError("pac_sample_bound: epsilon must be in (0, 1]");
  if (!(delta > 0.0 && delta <= 1.0)) throw ValidationError("pac_sample_bound: delta must be in (0, 1]");
  if (hypothesis_count < 1) throw ValidationError("pac_sample_bound: hypothesis_count must be >= 1");
  if (!std::isfinite(k)) throw ValidationError("pac_sample_bound: k must be finite");
  const double m = (std::log(static_cast<double>(hypothesis_count)) - std::log(delta) + k) / epsilon;
  return std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(m)));
}

/// max(C/C*, C*/C); always >= 1.
inline double approximation_ratio(double cost, double optimal_cost) {
  if (!(cost > 0.0) || !(optimal_cost > 0.0) || !std::isfinite(cost) || !std::isfinite(optimal_cost))
    throw ValidationError("approximation_ratio: costs must be positive and finite");
  return std::max(cost / optimal_cost, optimal_cost / cost);
}

}  // namespace statml
