#include <cmath>
#include <sstream>

#include "ldp/bridge.hpp"
#include "ldp/chain.hpp"
#include "ldp/conjugate.hpp"
#include "ldp/error.hpp"

namespace ldp {

FluxMgfBound flux_mgf_bound(const GeneratorMatrix& q, std::size_t x, std::size_t y, double t0,
                            double s, int grid_points) {
  const std::size_t n = q.n_states();
  if (x >= n || y >= n) throw Error(ErrorCode::InvalidArgument, "flux_mgf_bound: state out of range");
  if (!(t0 > 0.0)) throw Error(ErrorCode::InvalidArgument, "flux_mgf_bound: T0 must be positive");
  if (grid_points < 2) throw Error(ErrorCode::InvalidArgument, "flux_mgf_bound: grid needs >= 2 points");
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      if (a != b && !(q(a, b) > 0.0)) {
        std::ostringstream os;
        os << "flux_mgf_bound requires all rates positive; Q(" << a << "," << b << ") = " << q(a, b);
        throw Error(ErrorCode::ZeroRate, os.str());
      }
    }
  }

  const auto ny = static_cast<Eigen::Index>(y);
  const Eigen::VectorXd to_y_full = transition_at(q, t0).probs().col(ny);

  // Endpoint limits t -> T0 as stated for the dominating process.
  Eigen::MatrixXd sup_rate = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      if (a == b || b == y) continue;
      const double limit = a == y ? q(y, b) * to_y_full(static_cast<Eigen::Index>(b))
                                  : q(a, b) * q(b, y) / q(a, y);
      sup_rate(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = limit;
    }
  }

  // Q^{xy}_ab(t) = Q_ab P_by(T0 - t) / P_ay(T0 - t) on [0, T0 - delta].
  const double delta = 1e-4 * t0;
  for (int k = 0; k < grid_points; ++k) {
    const double t = (t0 - delta) * static_cast<double>(k) / static_cast<double>(grid_points - 1);
    const Eigen::VectorXd to_y = transition_at(q, t0 - t).probs().col(ny);
    for (std::size_t a = 0; a < n; ++a) {
      const double denom = to_y(static_cast<Eigen::Index>(a));
      if (!(denom > 0.0)) throw Error(ErrorCode::DegenerateDenominator, "flux_mgf_bound: P_ay vanished");
      for (std::size_t b = 0; b < n; ++b) {
        if (a == b || b == y) continue;
        double& cell = sup_rate(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
        cell = std::max(cell, q(a, b) * to_y(static_cast<Eigen::Index>(b)) / denom);
      }
    }
  }

  FluxMgfBound out;
  out.dominating_rate = sup_rate.sum();
  out.value = s + out.dominating_rate * t0 * std::expm1(2.0 * s / t0);
  return out;
}

}  // namespace ldp
