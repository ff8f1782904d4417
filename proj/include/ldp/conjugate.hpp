#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "ldp/extended.hpp"

namespace ldp {

class GeneratorMatrix;

/// A convex, twice differentiable function of lambda in R^d. Implemented by
/// log-moment-generating functions and their nonnegative combinations.
class LogMgf {
 public:
  virtual ~LogMgf() = default;

  virtual std::size_t dim() const = 0;
  virtual double value(const Eigen::VectorXd& lambda) const = 0;
  /// Returns the value and fills gradient and Hessian.
  virtual double derivatives(const Eigen::VectorXd& lambda, Eigen::VectorXd& grad,
                             Eigen::MatrixXd& hess) const = 0;
};

/// Probability law on R^d seen through its log-MGF phi(lambda) = log E e^{lambda.a}
/// and the log-MGF of |a|_1.
class Law : public LogMgf {
 public:
  virtual Eigen::VectorXd mean() const = 0;
  /// log E e^{s |a|_1}; returns the value and its first two derivatives in s.
  virtual double abs_derivatives(double s, double& d1, double& d2) const = 0;

  double abs_log_mgf(double s) const {
    double d1 = 0.0, d2 = 0.0;
    return abs_derivatives(s, d1, d2);
  }
};

/// Plug-in law of N i.i.d. samples. Samples are stored column-wise (d x N).
class EmpiricalLaw final : public Law {
 public:
  explicit EmpiricalLaw(Eigen::MatrixXd samples);

  std::size_t dim() const override { return static_cast<std::size_t>(samples_.rows()); }
  std::size_t count() const { return static_cast<std::size_t>(samples_.cols()); }
  const Eigen::MatrixXd& samples() const { return samples_; }

  double value(const Eigen::VectorXd& lambda) const override;
  double derivatives(const Eigen::VectorXd& lambda, Eigen::VectorXd& grad,
                     Eigen::MatrixXd& hess) const override;
  Eigen::VectorXd mean() const override { return mean_; }
  double abs_derivatives(double s, double& d1, double& d2) const override;

  /// Flat binary dump: int64 d, int64 N, then N*d doubles sample by sample.
  void save(const std::filesystem::path& path) const;
  static EmpiricalLaw load(const std::filesystem::path& path);

 private:
  Eigen::MatrixXd samples_;
  Eigen::VectorXd abs_values_;
  Eigen::VectorXd mean_;
};

class PointMassLaw final : public Law {
 public:
  explicit PointMassLaw(Eigen::VectorXd atom) : atom_(std::move(atom)) {}
  std::size_t dim() const override { return static_cast<std::size_t>(atom_.size()); }
  double value(const Eigen::VectorXd& lambda) const override { return lambda.dot(atom_); }
  double derivatives(const Eigen::VectorXd& lambda, Eigen::VectorXd& grad,
                     Eigen::MatrixXd& hess) const override;
  Eigen::VectorXd mean() const override { return atom_; }
  double abs_derivatives(double s, double& d1, double& d2) const override;

 private:
  Eigen::VectorXd atom_;
};

/// Bernoulli(p) on {0, 1}.
class BernoulliLaw final : public Law {
 public:
  explicit BernoulliLaw(double p);
  std::size_t dim() const override { return 1; }
  double value(const Eigen::VectorXd& lambda) const override;
  double derivatives(const Eigen::VectorXd& lambda, Eigen::VectorXd& grad,
                     Eigen::MatrixXd& hess) const override;
  Eigen::VectorXd mean() const override { return Eigen::VectorXd::Constant(1, p_); }
  double abs_derivatives(double s, double& d1, double& d2) const override;

 private:
  double p_;
};

/// Poisson(c) counts.
class PoissonLaw final : public Law {
 public:
  explicit PoissonLaw(double c);
  std::size_t dim() const override { return 1; }
  double value(const Eigen::VectorXd& lambda) const override;
  double derivatives(const Eigen::VectorXd& lambda, Eigen::VectorXd& grad,
                     Eigen::MatrixXd& hess) const override;
  Eigen::VectorXd mean() const override { return Eigen::VectorXd::Constant(1, c_); }
  double abs_derivatives(double s, double& d1, double& d2) const override;

 private:
  double c_;
};

/// The one-dimensional log-MGF s -> log E e^{s|a|_1} of a law, viewed as a LogMgf.
class AbsLogMgf final : public LogMgf {
 public:
  explicit AbsLogMgf(const Law& law) : law_(law) {}
  std::size_t dim() const override { return 1; }
  double value(const Eigen::VectorXd& s) const override { return law_.abs_log_mgf(s(0)); }
  double derivatives(const Eigen::VectorXd& s, Eigen::VectorXd& grad,
                     Eigen::MatrixXd& hess) const override;

 private:
  const Law& law_;
};

double log_mgf(const Law& law, const Eigen::VectorXd& lambda);
double abs_log_mgf(const Law& law, double s);

struct ConjugateSettings {
  double box = 40.0;            // per-coordinate bound on lambda
  double tolerance = 1e-9;      // projected-gradient sup-norm
  int max_iterations = 500;
  // Box contact on two successive doublings with value growth above
  // growth_slope * (box before doubling) marks the conjugate as +inf.
  double growth_slope = 1e-3;
};

struct ConjugateEstimate {
  double value = 0.0;
  Eigen::VectorXd maximizer;
  bool converged = false;
  bool boundary_contact = false;
  int iterations = 0;
};

/// sup over lambda in [-box, box]^d of lambda.a - phi(lambda), by projected
/// Newton with a projected-gradient fallback.
ConjugateEstimate conjugate_at(const LogMgf& phi, const Eigen::VectorXd& a, double box,
                               const ConjugateSettings& settings = {},
                               const Eigen::VectorXd* warm_start = nullptr);

struct EffectiveConjugate {
  Extended value;
  ConjugateEstimate estimate;  // last box solve performed
};

/// Conjugate with box doubling; +inf when the maximizer keeps riding the box
/// while the value grows linearly with it.
EffectiveConjugate effective_conjugate(const LogMgf& phi, const Eigen::VectorXd& a,
                                       const ConjugateSettings& settings = {},
                                       const Eigen::VectorXd* warm_start = nullptr);

/// phi*_{|.|}(r) = sup_s [r s - log E e^{s|a|_1}].
Extended abs_conjugate(const Law& law, double r, const ConjugateSettings& settings = {});

struct SuperlinearityRow {
  double r = 0.0;
  Extended conjugate;
  Extended ratio;  // conjugate / r
};

struct SuperlinearityReport {
  std::vector<SuperlinearityRow> rows;
  bool increasing = false;  // ratios strictly increase (inf, inf counts as increasing)
};

SuperlinearityReport superlinearity_check(const Law& law, const std::vector<double>& r_grid,
                                          const ConjugateSettings& settings = {});

/// Exponential decay bound for P(|A|_1 >= R): sup over s >= 0 of
/// [R s - log E e^{s|A|_1}]. Equals phi*_{|.|}(R) when R is at or above the mean.
Extended chernoff_bound(const Law& law, double R, const ConjugateSettings& settings = {});

struct FluxMgfBound {
  double value = 0.0;
  double dominating_rate = 0.0;  // Qbar^{xy}
};

/// Upper bound s + Qbar T0 (e^{2s/T0} - 1) on log E e^{s|A|_1} for the
/// occupation+flux law of the (x, y) bridge, via a dominating Poisson counter.
FluxMgfBound flux_mgf_bound(const GeneratorMatrix& q, std::size_t x, std::size_t y, double t0,
                            double s, int grid_points = 2000);

}  // namespace ldp
