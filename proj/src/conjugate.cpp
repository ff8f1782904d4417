#include "ldp/conjugate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>

#include "ldp/error.hpp"

namespace ldp {

namespace {

// log(1 + e^x) without overflow.
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Eigen::VectorXd clamp_box(const Eigen::VectorXd& v, double box) {
  return v.cwiseMax(-box).cwiseMin(box);
}

double dual_objective(const LogMgf& phi, const Eigen::VectorXd& a, const Eigen::VectorXd& lambda) {
  return phi.value(lambda) - lambda.dot(a);
}

}  // namespace

EmpiricalLaw::EmpiricalLaw(Eigen::MatrixXd samples) : samples_(std::move(samples)) {
  if (samples_.cols() < 1 || samples_.rows() < 1) {
    throw Error(ErrorCode::InvalidArgument, "empirical law needs at least one sample of dimension >= 1");
  }
  if (!samples_.allFinite()) throw Error(ErrorCode::InvalidArgument, "empirical law has non-finite samples");
  abs_values_ = samples_.cwiseAbs().colwise().sum().transpose();
  mean_ = samples_.rowwise().mean();
}

// Per-thread scratch space; evaluations stay allocation-free and thread-safe.
thread_local Eigen::VectorXd tls_scores;
thread_local Eigen::MatrixXd tls_centered;

double EmpiricalLaw::value(const Eigen::VectorXd& lambda) const {
  Eigen::VectorXd& z = tls_scores;
  z.resize(samples_.cols());
  z.noalias() = samples_.transpose() * lambda;
  const double shift = z.maxCoeff();
  return shift + std::log((z.array() - shift).exp().sum() / static_cast<double>(z.size()));
}

double EmpiricalLaw::derivatives(const Eigen::VectorXd& lambda, Eigen::VectorXd& grad,
                                 Eigen::MatrixXd& hess) const {
  Eigen::VectorXd& w = tls_scores;
  w.resize(samples_.cols());
  w.noalias() = samples_.transpose() * lambda;
  const double shift = w.maxCoeff();
  w = (w.array() - shift).exp();
  const double total = w.sum();
  grad.noalias() = samples_ * w;
  grad /= total;
  Eigen::MatrixXd& centered = tls_centered;
  centered.resize(samples_.rows(), samples_.cols());
  centered = (samples_.colwise() - grad).array().rowwise() * w.transpose().array().sqrt();
  hess.noalias() = centered * centered.transpose();
  hess /= total;
  return shift + std::log(total / static_cast<double>(w.size()));
}

double EmpiricalLaw::abs_derivatives(double s, double& d1, double& d2) const {
  const Eigen::ArrayXd z = s * abs_values_.array();
  const double shift = z.maxCoeff();
  const Eigen::ArrayXd w = (z - shift).exp();
  const double total = w.sum();
  d1 = (w * abs_values_.array()).sum() / total;
  d2 = (w * (abs_values_.array() - d1).square()).sum() / total;
  return shift + std::log(total / static_cast<double>(w.size()));
}

void EmpiricalLaw::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot open sample dump for writing: " + path.string());
  const std::int64_t header[2] = {static_cast<std::int64_t>(samples_.rows()),
                                  static_cast<std::int64_t>(samples_.cols())};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  out.write(reinterpret_cast<const char*>(samples_.data()),
            static_cast<std::streamsize>(sizeof(double) * samples_.size()));
  if (!out) throw Error(ErrorCode::IoError, "failed writing sample dump: " + path.string());
}

EmpiricalLaw EmpiricalLaw::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open sample dump: " + path.string());
  std::int64_t header[2] = {0, 0};
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in || header[0] < 1 || header[1] < 1) {
    throw Error(ErrorCode::IoError, "malformed sample dump header: " + path.string());
  }
  Eigen::MatrixXd samples(header[0], header[1]);
  in.read(reinterpret_cast<char*>(samples.data()),
          static_cast<std::streamsize>(sizeof(double) * samples.size()));
  if (!in) throw Error(ErrorCode::IoError, "truncated sample dump: " + path.string());
  return EmpiricalLaw(std::move(samples));
}

double PointMassLaw::derivatives(const Eigen::VectorXd& lambda, Eigen::VectorXd& grad,
                                 Eigen::MatrixXd& hess) const {
  grad = atom_;
  hess = Eigen::MatrixXd::Zero(atom_.size(), atom_.size());
  return lambda.dot(atom_);
}

double PointMassLaw::abs_derivatives(double s, double& d1, double& d2) const {
  d1 = atom_.lpNorm<1>();
  d2 = 0.0;
  return s * d1;
}

BernoulliLaw::BernoulliLaw(double p) : p_(p) {
  if (!(p > 0.0 && p < 1.0)) throw Error(ErrorCode::InvalidArgument, "Bernoulli parameter must lie in (0,1)");
}

double BernoulliLaw::value(const Eigen::VectorXd& lambda) const {
  // log(1 - p + p e^l); the softplus form only where expm1 would overflow
  if (lambda(0) < 30.0) return std::log1p(p_ * std::expm1(lambda(0)));
  return std::log1p(-p_) + softplus(lambda(0) + std::log(p_ / (1.0 - p_)));
}

double BernoulliLaw::derivatives(const Eigen::VectorXd& lambda, Eigen::VectorXd& grad,
                                 Eigen::MatrixXd& hess) const {
  const double q = logistic(lambda(0) + std::log(p_ / (1.0 - p_)));
  grad = Eigen::VectorXd::Constant(1, q);
  hess = Eigen::MatrixXd::Constant(1, 1, q * (1.0 - q));
  return value(lambda);
}

double BernoulliLaw::abs_derivatives(double s, double& d1, double& d2) const {
  Eigen::VectorXd g;
  Eigen::MatrixXd h;
  const double v = derivatives(Eigen::VectorXd::Constant(1, s), g, h);
  d1 = g(0);
  d2 = h(0, 0);
  return v;
}

PoissonLaw::PoissonLaw(double c) : c_(c) {
  if (!(c > 0.0)) throw Error(ErrorCode::InvalidArgument, "Poisson mean must be positive");
}

double PoissonLaw::value(const Eigen::VectorXd& lambda) const { return c_ * std::expm1(lambda(0)); }

double PoissonLaw::derivatives(const Eigen::VectorXd& lambda, Eigen::VectorXd& grad,
                               Eigen::MatrixXd& hess) const {
  const double e = c_ * std::exp(lambda(0));
  grad = Eigen::VectorXd::Constant(1, e);
  hess = Eigen::MatrixXd::Constant(1, 1, e);
  return c_ * std::expm1(lambda(0));
}

double PoissonLaw::abs_derivatives(double s, double& d1, double& d2) const {
  d1 = d2 = c_ * std::exp(s);
  return c_ * std::expm1(s);
}

double AbsLogMgf::derivatives(const Eigen::VectorXd& s, Eigen::VectorXd& grad,
                              Eigen::MatrixXd& hess) const {
  double d1 = 0.0, d2 = 0.0;
  const double v = law_.abs_derivatives(s(0), d1, d2);
  grad = Eigen::VectorXd::Constant(1, d1);
  hess = Eigen::MatrixXd::Constant(1, 1, d2);
  return v;
}

double log_mgf(const Law& law, const Eigen::VectorXd& lambda) {
  if (static_cast<std::size_t>(lambda.size()) != law.dim()) {
    throw Error(ErrorCode::InvalidArgument, "log_mgf: lambda dimension mismatch");
  }
  return law.value(lambda);
}

double abs_log_mgf(const Law& law, double s) { return law.abs_log_mgf(s); }

ConjugateEstimate conjugate_at(const LogMgf& phi, const Eigen::VectorXd& a, double box,
                               const ConjugateSettings& settings,
                               const Eigen::VectorXd* warm_start) {
  const auto d = static_cast<Eigen::Index>(phi.dim());
  if (a.size() != d) throw Error(ErrorCode::InvalidArgument, "conjugate_at: dimension mismatch");
  if (!(box > 0.0)) throw Error(ErrorCode::InvalidArgument, "conjugate_at: box must be positive");

  // Minimize f(l) = phi(l) - l.a over the box; the conjugate is -min f.
  Eigen::VectorXd lambda = warm_start && warm_start->size() == d ? clamp_box(*warm_start, box)
                                                                 : Eigen::VectorXd::Zero(d);
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
  ConjugateEstimate est;
  const double edge = box * (1.0 - 1e-12);
  constexpr double armijo = 1e-4;
  const double round_off = 64.0 * std::numeric_limits<double>::epsilon();

  double f = 0.0;
  for (est.iterations = 0; est.iterations < settings.max_iterations; ++est.iterations) {
    f = phi.derivatives(lambda, grad, hess) - lambda.dot(a);
    grad -= a;
    const Eigen::VectorXd projected = lambda - clamp_box(lambda - grad, box);
    if (projected.lpNorm<Eigen::Infinity>() < settings.tolerance) {
      est.converged = true;
      break;
    }

    std::vector<Eigen::Index> free;
    for (Eigen::Index i = 0; i < d; ++i) {
      const bool at_lower = lambda(i) <= -edge && grad(i) > 0.0;
      const bool at_upper = lambda(i) >= edge && grad(i) < 0.0;
      if (!at_lower && !at_upper) free.push_back(i);
    }
    Eigen::VectorXd direction = Eigen::VectorXd::Zero(d);
    if (!free.empty()) {
      const auto m = static_cast<Eigen::Index>(free.size());
      Eigen::MatrixXd h_free(m, m);
      Eigen::VectorXd g_free(m);
      for (Eigen::Index i = 0; i < m; ++i) {
        g_free(i) = grad(free[i]);
        for (Eigen::Index j = 0; j < m; ++j) h_free(i, j) = hess(free[i], free[j]);
      }
      const double scale = std::max(1.0, h_free.diagonal().maxCoeff());
      h_free.diagonal().array() += 1e-10 * scale;
      const Eigen::VectorXd step = h_free.ldlt().solve(-g_free);
      for (Eigen::Index i = 0; i < m; ++i) direction(free[i]) = step(i);
    }

    // Projected-arc Armijo search on the Newton direction, then on -grad.
    bool moved = false;
    for (int attempt = 0; attempt < 2 && !moved; ++attempt) {
      const Eigen::VectorXd dir = attempt == 0 ? direction : Eigen::VectorXd(-grad);
      if (!dir.allFinite()) continue;
      double alpha = attempt == 0 ? 1.0 : 1.0 / std::max(1.0, hess.diagonal().maxCoeff());
      for (int halvings = 0; halvings < 80; ++halvings, alpha *= 0.5) {
        const Eigen::VectorXd trial = clamp_box(lambda + alpha * dir, box);
        const Eigen::VectorXd delta = trial - lambda;
        if (delta.lpNorm<Eigen::Infinity>() == 0.0) break;
        const double slope = grad.dot(delta);
        if (slope >= 0.0) continue;
        const double trial_f = dual_objective(phi, a, trial);
        if (trial_f <= f + armijo * slope + round_off * std::abs(f)) {
          lambda = trial;
          moved = true;
          break;
        }
        // Close to the optimum the decrease drowns in summation noise; a full
        // Newton step is then judged by the projected gradient instead.
        if (attempt == 0 && halvings == 0 && trial_f <= f + 1e-12 * std::max(1.0, std::abs(f))) {
          Eigen::VectorXd trial_grad;
          Eigen::MatrixXd trial_hess;
          phi.derivatives(trial, trial_grad, trial_hess);
          trial_grad -= a;
          const double before = (lambda - clamp_box(lambda - grad, box)).lpNorm<Eigen::Infinity>();
          const double after = (trial - clamp_box(trial - trial_grad, box)).lpNorm<Eigen::Infinity>();
          if (after < 0.5 * before) {
            lambda = trial;
            moved = true;
            break;
          }
        }
      }
    }
    if (!moved) break;
  }

  f = phi.derivatives(lambda, grad, hess) - lambda.dot(a);
  grad -= a;
  if (!est.converged) {
    const Eigen::VectorXd projected = lambda - clamp_box(lambda - grad, box);
    est.converged = projected.lpNorm<Eigen::Infinity>() < settings.tolerance;
  }
  est.value = -f;
  est.maximizer = lambda;
  est.boundary_contact = d > 0 && lambda.cwiseAbs().maxCoeff() >= edge;
  return est;
}

EffectiveConjugate effective_conjugate(const LogMgf& phi, const Eigen::VectorXd& a,
                                       const ConjugateSettings& settings,
                                       const Eigen::VectorXd* warm_start) {
  double box = settings.box;
  ConjugateEstimate current = conjugate_at(phi, a, box, settings, warm_start);
  if (!current.boundary_contact) return {Extended(current.value), current};

  int growing_doublings = 0;
  for (int doubling = 0; doubling < 2; ++doubling) {
    const Eigen::VectorXd start = current.maximizer * 2.0;
    ConjugateEstimate next = conjugate_at(phi, a, 2.0 * box, settings, &start);
    const bool grew = next.value - current.value > settings.growth_slope * box;
    current = std::move(next);
    box *= 2.0;
    if (!current.boundary_contact) return {Extended(current.value), current};
    if (grew) ++growing_doublings;
  }
  if (growing_doublings == 2) return {Extended::infinity(), current};
  return {Extended(current.value), current};
}

Extended abs_conjugate(const Law& law, double r, const ConjugateSettings& settings) {
  const AbsLogMgf phi(law);
  return effective_conjugate(phi, Eigen::VectorXd::Constant(1, r), settings).value;
}

SuperlinearityReport superlinearity_check(const Law& law, const std::vector<double>& r_grid,
                                          const ConjugateSettings& settings) {
  if (r_grid.empty()) throw Error(ErrorCode::InvalidArgument, "superlinearity_check: empty r grid");
  SuperlinearityReport report;
  for (double r : r_grid) {
    if (!(r > 0.0)) throw Error(ErrorCode::InvalidArgument, "superlinearity_check: r must be positive");
    SuperlinearityRow row;
    row.r = r;
    row.conjugate = abs_conjugate(law, r, settings);
    row.ratio = row.conjugate.is_finite() ? Extended(row.conjugate.value() / r) : Extended::infinity();
    report.rows.push_back(row);
  }
  report.increasing = true;
  for (std::size_t i = 1; i < report.rows.size(); ++i) {
    const Extended& prev = report.rows[i - 1].ratio;
    const Extended& cur = report.rows[i].ratio;
    if (report.rows[i].r <= report.rows[i - 1].r) report.increasing = false;
    const bool ok = cur.is_infinite() || (prev.is_finite() && cur.value() > prev.value());
    if (!ok) report.increasing = false;
  }
  return report;
}

Extended chernoff_bound(const Law& law, double R, const ConjugateSettings& settings) {
  if (!(R > 0.0)) throw Error(ErrorCode::InvalidArgument, "chernoff_bound requires R > 0");
  double mean_abs = 0.0, d2 = 0.0;
  law.abs_derivatives(0.0, mean_abs, d2);
  if (R <= mean_abs) return Extended(0.0);
  return abs_conjugate(law, R, settings);
}

}  // namespace ldp
