#pragma once

// Gaussian-process regression with a Matern kernel and the GP-UCB search
// over a finite attacker configuration grid.

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <exception>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "prosac/grid.hpp"
#include "prosac/seed.hpp"

namespace prosac {

class IllConditionedKernel : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct KernelConfig {
  double smoothness = 2.5;                // Matern nu
  std::vector<double> length_scale{1.0};  // one entry, or one per dimension
  double signal_variance = 1.0;

  void validate() const {
    if (!(smoothness > 0.0)) throw std::invalid_argument("kernel: smoothness must be positive");
    if (!(signal_variance > 0.0)) throw std::invalid_argument("kernel: signal_variance must be positive");
    if (length_scale.empty()) throw std::invalid_argument("kernel: length_scale must not be empty");
    for (double l : length_scale) {
      if (!(l > 0.0)) throw std::invalid_argument("kernel: length_scale entries must be positive");
    }
  }
};

namespace detail {

inline double scaled_distance(const KernelConfig& cfg, std::span<const double> x,
                              std::span<const double> y) {
  if (x.size() != y.size()) {
    throw std::invalid_argument("kernel: dimension mismatch (" + std::to_string(x.size()) +
                                " vs " + std::to_string(y.size()) + ")");
  }
  if (cfg.length_scale.size() != 1 && cfg.length_scale.size() != x.size()) {
    throw std::invalid_argument("kernel: length_scale has " + std::to_string(cfg.length_scale.size()) +
                                " entries for " + std::to_string(x.size()) + " dimensions");
  }
  double sq = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double l = cfg.length_scale.size() == 1 ? cfg.length_scale[0] : cfg.length_scale[i];
    const double d = (x[i] - y[i]) / l;
    sq += d * d;
  }
  return std::sqrt(sq);
}

}  // namespace detail

/// Matern covariance. nu in {1/2, 3/2, 5/2} use the closed forms; other
/// positive nu go through the modified Bessel function.
inline double kernel_eval(const KernelConfig& cfg, std::span<const double> x,
                          std::span<const double> y) {
  const double r = detail::scaled_distance(cfg, x, y);
  const double s2 = cfg.signal_variance;
  const double nu = cfg.smoothness;
  if (r == 0.0) return s2;
  if (nu == 0.5) return s2 * std::exp(-r);
  if (nu == 1.5) {
    const double a = std::sqrt(3.0) * r;
    return s2 * (1.0 + a) * std::exp(-a);
  }
  if (nu == 2.5) {
    const double a = std::sqrt(5.0) * r;
    return s2 * (1.0 + a + a * a / 3.0) * std::exp(-a);
  }
  const double a = std::sqrt(2.0 * nu) * r;
  if (a > 700.0) return 0.0;
  return s2 * std::pow(2.0, 1.0 - nu) / std::tgamma(nu) * std::pow(a, nu) *
         std::cyl_bessel_k(nu, a);
}

struct Posterior {
  double mean = 0.0;
  double std = 0.0;
};

/// Zero-mean GP posterior over observed (point, value) pairs. Points are
/// expected in normalized coordinates.
class GpState {
 public:
  GpState(KernelConfig kernel, double noise_variance)
      : kernel_(std::move(kernel)), noise_variance_(noise_variance) {
    kernel_.validate();
    if (!(noise_variance_ >= 0.0)) throw std::invalid_argument("GpState: noise_variance must be >= 0");
  }

  void observe(Point x, double y) {
    points_.push_back(std::move(x));
    values_.push_back(y);
    factorized_ = false;
  }

  [[nodiscard]] std::size_t size() const noexcept { return points_.size(); }
  [[nodiscard]] const std::vector<Point>& points() const noexcept { return points_; }
  [[nodiscard]] const std::vector<double>& values() const noexcept { return values_; }
  [[nodiscard]] const KernelConfig& kernel() const noexcept { return kernel_; }
  [[nodiscard]] double noise_variance() const noexcept { return noise_variance_; }
  /// Diagonal jitter used by the last successful factorization.
  [[nodiscard]] double jitter() const noexcept { return jitter_; }

  [[nodiscard]] Posterior posterior(std::span<const double> query) const {
    const double prior = kernel_eval(kernel_, query, query);
    if (points_.empty()) return {0.0, std::sqrt(prior)};
    factorize();
    const auto t = static_cast<Eigen::Index>(points_.size());
    Eigen::VectorXd k_star(t);
    for (Eigen::Index i = 0; i < t; ++i) {
      k_star[i] = kernel_eval(kernel_, points_[static_cast<std::size_t>(i)], query);
    }
    const double mean = k_star.dot(weights_);
    const Eigen::VectorXd v = llt_.matrixL().solve(k_star);
    const double var = std::max(prior - v.squaredNorm(), 0.0);
    return {mean, std::sqrt(var)};
  }

 private:
  void factorize() const {
    if (factorized_) return;
    const auto t = static_cast<Eigen::Index>(points_.size());
    Eigen::MatrixXd gram(t, t);
    for (Eigen::Index i = 0; i < t; ++i) {
      for (Eigen::Index j = 0; j <= i; ++j) {
        const double k = kernel_eval(kernel_, points_[static_cast<std::size_t>(i)],
                                     points_[static_cast<std::size_t>(j)]);
        gram(i, j) = k;
        gram(j, i) = k;
      }
    }
    gram.diagonal().array() += noise_variance_;
    const double base = kernel_.signal_variance;
    for (double rel = 1e-10; rel <= 1e-6 * (1.0 + 1e-9); rel *= 10.0) {
      Eigen::MatrixXd jittered = gram;
      jittered.diagonal().array() += rel * base;
      llt_.compute(jittered);
      if (llt_.info() == Eigen::Success) {
        Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(values_.data(), t);
        weights_ = llt_.solve(y);
        if (weights_.allFinite()) {
          jitter_ = rel * base;
          factorized_ = true;
          return;
        }
      }
    }
    throw IllConditionedKernel("GP Gram matrix of " + std::to_string(t) +
                               " points is not positive definite even with 1e-6 jitter");
  }

  KernelConfig kernel_;
  double noise_variance_;
  std::vector<Point> points_;
  std::vector<double> values_;
  mutable Eigen::LLT<Eigen::MatrixXd> llt_;
  mutable Eigen::VectorXd weights_;
  mutable double jitter_ = 0.0;
  mutable bool factorized_ = false;
};

struct UcbConfig {
  double beta = 0.1;
  std::size_t rounds = 50;
  double noise_std = 0.0;  // std of the Gaussian noise added to each observation
  Seed seed = 0;
  KernelConfig kernel{};
  // Noise variance assumed by the GP; defaults to noise_std^2.
  std::optional<double> model_noise_variance;
  // Test harness: visit grid points in index order instead of maximizing UCB.
  bool round_robin = false;

  void validate() const {
    if (!(beta >= 0.0)) throw std::invalid_argument("ucb: beta must be >= 0");
    if (rounds < 1) throw std::invalid_argument("ucb: rounds must be >= 1");
    if (!(noise_std >= 0.0)) throw std::invalid_argument("ucb: noise_std must be >= 0");
    if (model_noise_variance && !(*model_noise_variance >= 0.0)) {
      throw std::invalid_argument("ucb: model_noise_variance must be >= 0");
    }
    kernel.validate();
  }

  [[nodiscard]] double gp_noise_variance() const {
    return model_noise_variance.value_or(noise_std * noise_std);
  }
};

struct UcbRound {
  std::size_t index = 0;
  Point lambda;
  double observed = 0.0;    // p(lambda) + noise
  double prior_mean = 0.0;  // posterior before this round's observation
  double prior_std = 0.0;
};

struct UcbResult {
  double p_hat = 0.0;  // mean of observed values over all rounds
  std::vector<UcbRound> trajectory;
  double max_observed = 0.0;
  std::size_t argmax_index = 0;
  Point argmax_observed;
};

/// Grid index maximizing mean + beta * std; lowest index wins ties.
inline std::size_t ucb_select(const GpState& state, std::span<const Point> normalized_grid,
                              double beta) {
  if (normalized_grid.empty()) throw std::invalid_argument("ucb_select: empty grid");
  std::size_t best = 0;
  double best_value = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < normalized_grid.size(); ++i) {
    const Posterior post = state.posterior(normalized_grid[i]);
    const double acquisition = post.mean + beta * post.std;
    if (acquisition > best_value) {
      best_value = acquisition;
      best = i;
    }
  }
  return best;
}

inline std::vector<Point> normalized_points(const HyperGrid& grid) {
  std::vector<Point> pts;
  pts.reserve(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) pts.push_back(grid.normalized_point(i));
  return pts;
}

/// Standard normal draw for (seed, round) via Box-Muller on two derived uniforms.
inline double gaussian_noise(Seed seed, std::size_t round) {
  const double u1 = to_unit_interval(derive_seed(seed, "ucb-noise-u1", round));
  const double u2 = to_unit_interval(derive_seed(seed, "ucb-noise-u2", round));
  return std::sqrt(-2.0 * std::log1p(-u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

class UcbRoundError : public std::runtime_error {
 public:
  UcbRoundError(std::size_t round, const std::string& what)
      : std::runtime_error("GP-UCB round " + std::to_string(round) + ": " + what),
        round_(round) {}
  [[nodiscard]] std::size_t round() const noexcept { return round_; }

 private:
  std::size_t round_;
};

/// Runs the GP-UCB loop. p_value(index, round) returns the (possibly noisy)
/// p-value at grid point `index`; Gaussian noise with std cfg.noise_std is
/// added on top. Oracle failures are rethrown nested inside UcbRoundError.
template <class PValueFn>
UcbResult ucb_run(PValueFn&& p_value, const HyperGrid& grid, const UcbConfig& cfg) {
  cfg.validate();
  if (grid.empty()) throw std::invalid_argument("ucb_run: empty grid");
  const std::vector<Point> normalized = normalized_points(grid);
  GpState state(cfg.kernel, cfg.gp_noise_variance());

  UcbResult result;
  result.trajectory.reserve(cfg.rounds);
  result.max_observed = -std::numeric_limits<double>::infinity();
  double sum = 0.0;
  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    const std::size_t index =
        cfg.round_robin ? t % grid.size() : ucb_select(state, normalized, cfg.beta);
    const Posterior before = state.posterior(normalized[index]);
    double observed = 0.0;
    try {
      observed = p_value(index, t);
    } catch (...) {
      std::throw_with_nested(UcbRoundError(t + 1, "oracle failed at " + format_point(grid.point(index))));
    }
    if (cfg.noise_std > 0.0) observed += cfg.noise_std * gaussian_noise(cfg.seed, t);

    state.observe(normalized[index], observed);
    sum += observed;
    if (observed > result.max_observed) {
      result.max_observed = observed;
      result.argmax_index = index;
    }
    result.trajectory.push_back({index, grid.point(index), observed, before.mean, before.std});
  }
  result.p_hat = sum / static_cast<double>(cfg.rounds);
  result.argmax_observed = grid.point(result.argmax_index);
  return result;
}

/// Greedy information-gain estimates gamma_1..gamma_T. Step t adds the grid
/// point of largest posterior variance, contributing 0.5 log(1 + var / noise);
/// the running sum equals 0.5 log det(I + K_S / noise) for the chosen set S.
/// Points are never repeated, so the curve is flat once the grid is exhausted.
inline std::vector<double> info_gain_curve(const KernelConfig& kernel, const HyperGrid& grid,
                                           double noise_variance, std::size_t rounds) {
  if (rounds < 1) throw std::invalid_argument("info_gain: T must be >= 1");
  if (!(noise_variance > 0.0)) throw std::invalid_argument("info_gain: noise_variance must be positive");
  const std::vector<Point> normalized = normalized_points(grid);
  GpState state(kernel, noise_variance);
  std::vector<bool> used(normalized.size(), false);
  std::vector<double> curve;
  curve.reserve(rounds);
  double gamma = 0.0;
  for (std::size_t t = 0; t < rounds; ++t) {
    if (t < normalized.size()) {
      std::size_t best = 0;
      double best_var = -1.0;
      for (std::size_t i = 0; i < normalized.size(); ++i) {
        if (used[i]) continue;
        const double sd = state.posterior(normalized[i]).std;
        if (sd * sd > best_var) {
          best_var = sd * sd;
          best = i;
        }
      }
      used[best] = true;
      // The GP's own jitter is negligible next to noise_variance here.
      gamma += 0.5 * std::log1p(best_var / noise_variance);
      state.observe(normalized[best], 0.0);
    }
    curve.push_back(gamma);
  }
  return curve;
}

inline double info_gain(const KernelConfig& kernel, const HyperGrid& grid, double noise_variance,
                        std::size_t rounds) {
  return info_gain_curve(kernel, grid, noise_variance, rounds).back();
}

/// zeta' = zeta - c (B sqrt(gamma/T) + sqrt(gamma (gamma + log(1/delta)) / T)) - delta.
inline double conservative_threshold(double zeta, double delta, double smoothness_bound,
                                     double gamma, std::size_t rounds, double scale_c) {
  if (!(delta > 0.0 && delta < zeta && zeta < 1.0)) {
    throw std::invalid_argument("conservative_threshold: need 0 < delta < zeta < 1");
  }
  if (!(smoothness_bound >= 0.0) || !(gamma >= 0.0)) {
    throw std::invalid_argument("conservative_threshold: B and gamma must be >= 0");
  }
  if (rounds < 1) throw std::invalid_argument("conservative_threshold: T must be >= 1");
  if (!(scale_c > 0.0)) throw std::invalid_argument("conservative_threshold: scale_c must be positive");
  const double t = static_cast<double>(rounds);
  const double regret = smoothness_bound * std::sqrt(gamma / t) +
                        std::sqrt(gamma * (gamma + std::log(1.0 / delta)) / t);
  return zeta - scale_c * regret - delta;
}

/// Smallest T with conservative_threshold > 0, given gamma_T for T = 1..|grid|
/// (gamma is constant beyond the grid size). nullopt if no finite T works.
inline std::optional<std::size_t> minimum_rounds_for_positive_threshold(
    double zeta, double delta, double smoothness_bound, double scale_c,
    std::span<const double> gamma_curve) {
  if (gamma_curve.empty()) return std::nullopt;
  for (std::size_t t = 1; t <= gamma_curve.size(); ++t) {
    if (conservative_threshold(zeta, delta, smoothness_bound, gamma_curve[t - 1], t, scale_c) > 0.0) {
      return t;
    }
  }
  const double gamma = gamma_curve.back();
  const double numerator =
      scale_c * (smoothness_bound * std::sqrt(gamma) + std::sqrt(gamma * (gamma + std::log(1.0 / delta))));
  const double bound = numerator / (zeta - delta);
  const double t_min = std::floor(bound * bound) + 1.0;
  if (!std::isfinite(t_min) || t_min > 1e18) return std::nullopt;
  auto t = static_cast<std::size_t>(t_min);
  t = std::max(t, gamma_curve.size() + 1);
  while (conservative_threshold(zeta, delta, smoothness_bound, gamma, t, scale_c) <= 0.0) ++t;
  return t;
}

}  // namespace prosac
