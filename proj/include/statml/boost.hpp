#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "core.hpp"
#include "errors.hpp"
#include "io.hpp"
#include "rng.hpp"

namespace statml::boost {

struct LabeledItem {
  double x;
  int y;  // 0 or 1
};

class WeightedDataset {
 public:
  WeightedDataset(std::vector<LabeledItem> items, DiscreteDistribution weights)
      : items_(std::move(items)), weights_(std::move(weights)) {
    if (items_.empty()) throw ValidationError("weighted dataset: no items");
    if (weights_.size() != items_.size())
      throw ValidationError("weighted dataset: " + std::to_string(weights_.size()) + " weights for " +
                            std::to_string(items_.size()) + " items");
    for (const auto& it : items_) {
      if (it.y != 0 && it.y != 1) throw ValidationError("weighted dataset: labels must be 0 or 1");
      if (!std::isfinite(it.x)) throw ValidationError("weighted dataset: non-finite feature");
    }
  }

  static WeightedDataset uniform(std::vector<LabeledItem> items) {
    const auto n = items.size();
    if (n == 0) throw ValidationError("weighted dataset: no items");
    return WeightedDataset(std::move(items), DiscreteDistribution::uniform(n));
  }

  std::size_t size() const noexcept { return items_.size(); }
  const std::vector<LabeledItem>& items() const noexcept { return items_; }
  const LabeledItem& item(std::size_t i) const { return items_[i]; }
  const DiscreteDistribution& weights() const noexcept { return weights_; }
  double weight(std::size_t i) const { return weights_[i]; }

 private:
  std::vector<LabeledItem> items_;
  DiscreteDistribution weights_;
};

/// CSV rows "x,y" with y in {0, 1}; a non-numeric first line is taken as a header.
inline std::vector<LabeledItem> parse_labeled_csv(std::istream& in) {
  std::vector<LabeledItem> items;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    const auto t = io::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto cols = io::split(t, ',');
    if (cols.size() != 2) throw ValidationError("labeled csv: expected 'x,y' rows");
    if (first) {
      first = false;
      try {
        io::parse_double(cols[0]);
      } catch (const ValidationError&) {
        continue;
      }
    }
    const auto y = io::parse_int(cols[1]);
    if (y != 0 && y != 1) throw ValidationError("labeled csv: label must be 0 or 1");
    items.push_back({io::parse_double(cols[0]), static_cast<int>(y)});
  }
  if (items.empty()) throw ValidationError("labeled csv: no rows");
  return items;
}

/// Deterministic binary classifier over real features. Cheap to copy.
class Hypothesis {
 public:
  using Fn = std::function<int(double)>;

  Hypothesis() = default;
  explicit Hypothesis(Fn fn) : fn_(std::make_shared<const Fn>(std::move(fn))) {}

  int operator()(double x) const { return (*fn_)(x); }
  int predict(double x) const { return (*fn_)(x); }

 private:
  std::shared_ptr<const Fn> fn_;
};

/// A learner with advantage gamma: train() returns h with weighted error <= 1/2 - gamma.
struct WeakLearner {
  std::function<Hypothesis(const WeightedDataset&, RngStream&)> train;
  double gamma = 0.0;
};

inline double empirical_risk(const Hypothesis& h, const WeightedDataset& ds) {
  double risk = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (h(ds.item(i).x) != ds.item(i).y) risk += ds.weight(i);
  return std::min(risk, 1.0);
}

/**
 * Rescales so items h1 gets wrong carry total weight 1/2 and items it gets right carry 1/2.
 * Under the result h1 has error exactly 1/2.
 */
inline WeightedDataset reweight_d2(const WeightedDataset& ds, const Hypothesis& h1) {
  std::vector<bool> wrong(ds.size());
  double err = 0.0;
  std::size_t n_wrong = 0, n_right = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    wrong[i] = h1(ds.item(i).x) != ds.item(i).y;
    if (ds.weight(i) <= 0.0) continue;
    if (wrong[i]) {
      err += ds.weight(i);
      ++n_wrong;
    } else {
      ++n_right;
    }
  }
  if (n_wrong == 0) throw DegenerateSplitError("reweight_d2: h1 makes no weighted mistakes");
  if (n_right == 0) throw DegenerateSplitError("reweight_d2: h1 is wrong on every weighted item");
  std::vector<double> w(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) w[i] = ds.weight(i) / (wrong[i] ? 2.0 * err : 2.0 * (1.0 - err));
  return WeightedDataset(ds.items(), DiscreteDistribution::from_weights(w));
}

/// Restricts the distribution to items where h1 and h2 disagree, renormalized.
inline WeightedDataset reweight_d3(const WeightedDataset& ds, const Hypothesis& h1, const Hypothesis& h2) {
  std::vector<double> w(ds.size(), 0.0);
  bool any = false;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double x = ds.item(i).x;
    if (ds.weight(i) > 0.0 && h1(x) != h2(x)) {
      w[i] = ds.weight(i);
      any = true;
    }
  }
  if (!any) throw DegenerateSplitError("reweight_d3: h1 and h2 agree on every weighted item");
  return WeightedDataset(ds.items(), DiscreteDistribution::from_weights(w));
}

inline Hypothesis majority_vote(Hypothesis h1, Hypothesis h2, Hypothesis h3) {
  return Hypothesis([h1 = std::move(h1), h2 = std::move(h2), h3 = std::move(h3)](double x) {
    const int a = h1(x), b = h2(x);
    return a == b ? a : h3(x);
  });
}

/// 3 e^2 - 2 e^3 with e = 1/2 - gamma.
inline double boost_error_bound(double gamma) {
  if (!(gamma >= 0.0 && gamma <= 0.5)) throw ValidationError("boost_error_bound: gamma must lie in [0, 1/2]");
  const double e = 0.5 - gamma;
  return 3.0 * e * e - 2.0 * e * e * e;
}

/**
 * Smallest number of boost3 levels d such that the error bound iterated d times from
 * 1/2 - gamma is <= epsilon. Comparisons allow 1e-12 of slack.
 */
inline int boost_depth(double gamma, double epsilon) {
  if (!(gamma >= 0.0 && gamma <= 0.5)) throw ValidationError("boost_depth: gamma must lie in [0, 1/2]");
  if (!(epsilon > 0.0 && epsilon < 0.5)) throw ValidationError("boost_depth: target epsilon must lie in (0, 1/2)");
  double e = 0.5 - gamma;
  int depth = 0;
  while (e > epsilon + 1e-12) {
    const double next = boost_error_bound(0.5 - e);
    if (!(next < e)) throw ConvergenceError("boost_depth: error bound does not improve (gamma = 0)");
    e = next;
    if (++depth > 64) throw ConvergenceError("boost_depth: no convergence within 64 levels");
  }
  return depth;
}

struct Boost3Diagnostics {
  double h1_err = 0.0;
  std::optional<double> h2_err;  // absent when h1 was already perfect
  std::optional<double> h3_err;
  double final_err = 0.0;
  double bound = 0.0;
};

struct Boost3Result {
  Hypothesis hypothesis;
  Boost3Diagnostics diagnostics;
};

/**
 * h1 on D, h2 on the balanced reweighting of h1's mistakes, h3 on the h1/h2 disagreement set;
 * majority vote of the three. If h1 is already perfect on D it is returned as is.
 */
inline Boost3Result boost3(const WeakLearner& weak, const WeightedDataset& ds, RngStream& rng) {
  Boost3Result out;
  out.diagnostics.bound = boost_error_bound(std::clamp(weak.gamma, 0.0, 0.5));
  const Hypothesis h1 = weak.train(ds, rng);
  out.diagnostics.h1_err = empirical_risk(h1, ds);
  if (out.diagnostics.h1_err == 0.0) {
    out.hypothesis = h1;
    return out;
  }
  try {
    const auto d2 = reweight_d2(ds, h1);
    const Hypothesis h2 = weak.train(d2, rng);
    out.diagnostics.h2_err = empirical_risk(h2, d2);
    const auto d3 = reweight_d3(ds, h1, h2);
    const Hypothesis h3 = weak.train(d3, rng);
    out.diagnostics.h3_err = empirical_risk(h3, d3);
    out.hypothesis = majority_vote(h1, h2, h3);
  } catch (const DegenerateSplitError& e) {
    throw DegenerateSplitError(std::string("boost3: ") + e.what());
  }
  out.diagnostics.final_err = empirical_risk(out.hypothesis, ds);
  return out;
}

/// boost3 around `weak`, packaged as a learner whose advantage is the one the bound promises.
inline WeakLearner boosted_learner(WeakLearner weak) {
  const double gamma = 0.5 - boost_error_bound(std::clamp(weak.gamma, 0.0, 0.5));
  auto inner = std::make_shared<const WeakLearner>(std::move(weak));
  return {[inner](const WeightedDataset& ds, RngStream& rng) { return boost3(*inner, ds, rng).hypothesis; }, gamma};
}

struct RecursiveBoostResult {
  Hypothesis hypothesis;
  int depth = 0;
  double final_err = 0.0;
  double bound = 0.0;  // error bound after `depth` levels
};

/// Nests boost3 `boost_depth(gamma, epsilon)` times; each level trains 3 copies of the one below.
inline RecursiveBoostResult boost_recursive(const WeakLearner& weak, const WeightedDataset& ds,
                                            double target_epsilon, RngStream& rng) {
  RecursiveBoostResult out;
  out.depth = boost_depth(weak.gamma, target_epsilon);
  WeakLearner learner = weak;
  for (int level = 0; level < out.depth; ++level) learner = boosted_learner(std::move(learner));
  out.bound = 0.5 - learner.gamma;
  out.hypothesis = learner.train(ds, rng);
  out.final_err = empirical_risk(out.hypothesis, ds);
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data and learners

/// y = 1 iff x >= threshold.
inline Hypothesis threshold_concept(double threshold) {
  return Hypothesis([threshold](double x) { return x >= threshold ? 1 : 0; });
}

inline WeightedDataset threshold_dataset(std::size_t n, double threshold, RngStream& rng) {
  std::vector<LabeledItem> items(n);
  for (auto& it : items) {
    it.x = rng.uniform();
    it.y = it.x >= threshold ? 1 : 0;
  }
  return WeightedDataset::uniform(std::move(items));
}

namespace detail {

inline double hashed_unit(std::uint64_t salt, double x) {
  if (x == 0.0) x = 0.0;  // fold -0.0
  const std::uint64_t h = splitmix64(salt ^ splitmix64(std::bit_cast<std::uint64_t>(x)));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

}  // namespace detail

/**
 * Predicts `target` and flips each prediction with probability 1/2 - gamma. Flips are keyed on
 * x through a salt drawn at training time, so the trained hypothesis is deterministic. Salts
 * are redrawn until the weighted training error is <= 1/2 - gamma, which makes the advantage
 * contract hold exactly rather than only in expectation.
 */
inline WeakLearner synthetic_weak_learner(Hypothesis target, double gamma, int max_attempts = 10000) {
  if (!(gamma > 0.0 && gamma <= 0.5)) throw ValidationError("synthetic_weak_learner: gamma must lie in (0, 1/2]");
  const double flip_p = 0.5 - gamma;
  auto train = [target = std::move(target), flip_p, max_attempts](const WeightedDataset& ds, RngStream& rng) {
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
      const std::uint64_t salt = rng();
      Hypothesis h([target, salt, flip_p](double x) {
        const int y = target(x);
        return detail::hashed_unit(salt, x) < flip_p ? 1 - y : y;
      });
      if (empirical_risk(h, ds) <= flip_p + 1e-12) return h;
    }
    throw ConvergenceError("synthetic_weak_learner: no hypothesis met the advantage contract");
  };
  return {std::move(train), gamma};
}

/**
 * Decision stump h(x) = [x >= t] xor flip with the lowest weighted error on the training set.
 * Thresholds sit at data points; ties go to the smallest threshold, then to no flip.
 * `gamma` is the advantage the caller is willing to assume.
 */
inline WeakLearner stump_learner(double gamma) {
  if (!(gamma >= 0.0 && gamma <= 0.5)) throw ValidationError("stump_learner: gamma must lie in [0, 1/2]");
  auto train = [](const WeightedDataset& ds, RngStream&) {
    std::vector<std::size_t> order(ds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return ds.item(i).x < ds.item(j).x; });

    // err_up: error of "predict 1 iff x >= t" with t below every point.
    double err_up = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (ds.item(i).y == 0) err_up += ds.weight(i);
    double best_err = std::min(err_up, 1.0 - err_up);
    double best_t = -std::numeric_limits<double>::infinity();
    bool best_flip = 1.0 - err_up < err_up;

    for (std::size_t k = 0; k < order.size();) {
      const double x = ds.item(order[k]).x;
      while (k < order.size() && ds.item(order[k]).x == x) {
        const auto i = order[k++];
        err_up += ds.item(i).y == 1 ? ds.weight(i) : -ds.weight(i);
      }
      const double t = k < order.size() ? ds.item(order[k]).x : std::numeric_limits<double>::infinity();
      if (err_up < best_err) {
        best_err = err_up;
        best_t = t;
        best_flip = false;
      }
      if (1.0 - err_up < best_err) {
        best_err = 1.0 - err_up;
        best_t = t;
        best_flip = true;
      }
    }
    return Hypothesis([best_t, best_flip](double x) {
      const int y = x >= best_t ? 1 : 0;
      return best_flip ? 1 - y : y;
    });
  };
  return {std::move(train), gamma};
}

}  // namespace statml::boost
