#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "ldp/chain.hpp"
#include "ldp/conjugate.hpp"
#include "ldp/extended.hpp"

namespace ldp {

/// theta in P(X x X), indexed by ordered pairs (x, y).
class PairMeasure {
 public:
  static PairMeasure validate(const Eigen::MatrixXd& raw);

  std::size_t n_states() const { return static_cast<std::size_t>(weights_.rows()); }
  const Eigen::MatrixXd& weights() const { return weights_; }
  double operator()(std::size_t x, std::size_t y) const { return weights_(x, y); }

  /// (e1 # theta)_x = sum_y theta_xy
  Eigen::VectorXd first_marginal() const { return weights_.rowwise().sum(); }
  /// (e2 # theta)_y = sum_x theta_xy
  Eigen::VectorXd second_marginal() const { return weights_.colwise().sum().transpose(); }

 private:
  explicit PairMeasure(Eigen::MatrixXd w) : weights_(std::move(w)) {}
  Eigen::MatrixXd weights_;
};

/// One d-vector k^{xy} per ordered pair. Column x * n + y of `vectors`.
class FluxField {
 public:
  FluxField(std::size_t n_states, std::size_t dim)
      : n_(n_states), vectors_(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim),
                                                       static_cast<Eigen::Index>(n_states * n_states))) {}

  std::size_t n_states() const { return n_; }
  std::size_t dim() const { return static_cast<std::size_t>(vectors_.rows()); }

  auto vec(std::size_t x, std::size_t y) { return vectors_.col(static_cast<Eigen::Index>(x * n_ + y)); }
  auto vec(std::size_t x, std::size_t y) const {
    return vectors_.col(static_cast<Eigen::Index>(x * n_ + y));
  }
  const Eigen::MatrixXd& vectors() const { return vectors_; }
  Eigen::MatrixXd& vectors() { return vectors_; }

  /// sum over all pairs of k^{xy}
  Eigen::VectorXd total() const { return vectors_.rowwise().sum(); }

 private:
  std::size_t n_;
  Eigen::MatrixXd vectors_;
};

/// Nonnegative flux matrix j (jumps per unit time).
class FluxMatrix {
 public:
  static FluxMatrix validate(const Eigen::MatrixXd& raw);

  std::size_t n_states() const { return static_cast<std::size_t>(entries_.rows()); }
  const Eigen::MatrixXd& entries() const { return entries_; }
  double operator()(std::size_t x, std::size_t y) const { return entries_(x, y); }

 private:
  explicit FluxMatrix(Eigen::MatrixXd e) : entries_(std::move(e)) {}
  Eigen::MatrixXd entries_;
};

/// Per-pair access to phi^{xy} and its conjugate. Read-only after
/// construction; safe to share between threads.
class ConjugateOracle {
 public:
  ConjugateOracle(std::size_t n_states, std::size_t dim, ConjugateSettings settings = {});

  std::size_t n_states() const { return n_; }
  std::size_t dim() const { return dim_; }
  const ConjugateSettings& settings() const { return settings_; }

  void set_law(std::size_t x, std::size_t y, std::shared_ptr<const Law> law);
  bool has_law(std::size_t x, std::size_t y) const;
  const Law& law(std::size_t x, std::size_t y) const;

  double log_mgf(std::size_t x, std::size_t y, const Eigen::VectorXd& lambda) const;
  Extended conjugate(std::size_t x, std::size_t y, const Eigen::VectorXd& a) const;
  Eigen::VectorXd mean(std::size_t x, std::size_t y) const { return law(x, y).mean(); }

 private:
  std::size_t n_;
  std::size_t dim_;
  ConjugateSettings settings_;
  std::vector<std::shared_ptr<const Law>> laws_;
};

/// s(a | b) = a log(a/b) - a + b, with s(0|b) = b and s(a|0) = +inf for a > 0.
Extended rel_entropy(double a, double b);

struct DvgSettings {
  double tolerance = 1e-10;     // gradient sup-norm
  int max_iterations = 100000;
  int random_starts = 4;
  std::uint64_t seed = 0x5eed;
};

struct DvgResult {
  double value = 0.0;
  Eigen::VectorXd potential;  // maximizing v with u = e^v and v_0 = 0
  double gradient_norm = 0.0;
  int iterations = 0;
};

/// -sum_x rho_x (Q e^v)_x / e^{v_x}
double dvg_objective(const ProbVector& rho, const GeneratorMatrix& q, const Eigen::VectorXd& v);

/// Occupation-measure rate sup_{u>0} -sum_x rho_x (Qu)_x / u_x, by multi-start
/// damped Newton ascent in log coordinates.
DvgResult dvg_rate(const ProbVector& rho, const GeneratorMatrix& q, const DvgSettings& settings = {});

/// div j = e1 # j - e2 # j (outflow minus inflow per state).
Eigen::VectorXd divergence(const Eigen::MatrixXd& j);
inline Eigen::VectorXd divergence(const FluxMatrix& j) { return divergence(j.entries()); }

/// Joint occupation/flux rate sum_{x != y} s(j_xy | rho_x Q_xy); +inf unless j
/// is divergence-free and j << rho (x) Q.
Extended bfg_rate(const ProbVector& rho, const FluxMatrix& j, const GeneratorMatrix& q);

/// Pair-empirical rate sum_xy s(theta_xy | (e1#theta)_x P_xy); +inf when the
/// marginals differ.
Extended pair_empirical_rate(const PairMeasure& theta, const TransitionKernel& p);

/// Conditional rate sum_xy theta_xy phi^{xy*}(k^{xy} / theta_xy), with
/// 0 phi*(0/0) = 0 and +inf when k^{xy} != 0 on a pair with theta_xy = 0.
Extended cond_rate(const FluxField& k, const PairMeasure& theta, const ConjugateOracle& oracle);

/// I(k, theta) = cond_rate + pair_empirical_rate.
Extended theorem_rate(const FluxField& k, const PairMeasure& theta, const TransitionKernel& p,
                      const ConjugateOracle& oracle);

}  // namespace ldp
