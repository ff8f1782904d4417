#include "ldp/bridge.hpp"

#include <iomanip>
#include <sstream>

#include "ldp/error.hpp"
#include "ldp/parallel.hpp"

namespace ldp {

namespace {

void require_state(const BridgeSpec& spec, std::size_t s, const char* what) {
  if (s >= spec.generator().n_states()) {
    throw Error(ErrorCode::InvalidArgument, std::string(what) + ": state out of range");
  }
}

}  // namespace

BridgeSpec::BridgeSpec(GeneratorMatrix q, std::size_t x, std::size_t y, double t0)
    : q_(std::move(q)), x_(x), y_(y), t0_(t0) {
  if (x_ >= q_.n_states() || y_ >= q_.n_states()) throw Error(ErrorCode::InvalidArgument, "bridge endpoints out of range");
  if (!(t0_ > 0.0)) throw Error(ErrorCode::InvalidArgument, "bridge horizon must be positive");
  endpoint_probability_ = transition_at(q_, t0_)(x_, y_);
  if (!(endpoint_probability_ > 0.0)) {
    throw Error(ErrorCode::DegenerateDenominator, "bridge endpoint y is unreachable from x in time T0");
  }
}

double bridge_transition(const BridgeSpec& spec, std::size_t a, std::size_t b, double s, double t) {
  require_state(spec, a, "bridge_transition");
  require_state(spec, b, "bridge_transition");
  return bridge_kernel(spec, s, t)(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
}

Eigen::MatrixXd bridge_kernel(const BridgeSpec& spec, double s, double t) {
  const double t0 = spec.horizon();
  if (!(0.0 <= s && s <= t && t < t0)) throw Error(ErrorCode::InvalidArgument, "bridge_transition needs 0 <= s <= t < T0");
  const auto& q = spec.generator();
  const Eigen::MatrixXd step = transition_at(q, t - s).probs();
  const Eigen::VectorXd to_end_from_t = transition_at(q, t0 - t).probs().col(static_cast<Eigen::Index>(spec.end()));
  const Eigen::VectorXd to_end_from_s = transition_at(q, t0 - s).probs().col(static_cast<Eigen::Index>(spec.end()));
  const auto n = step.rows();
  Eigen::MatrixXd kernel(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    if (!(to_end_from_s(a) > 0.0)) {
      throw Error(ErrorCode::DegenerateDenominator, "bridge_transition: P_ay(T0 - s) = 0");
    }
    for (Eigen::Index b = 0; b < n; ++b) kernel(a, b) = step(a, b) * to_end_from_t(b) / to_end_from_s(a);
  }
  return kernel;
}

double bridge_generator(const BridgeSpec& spec, std::size_t a, std::size_t b, double t) {
  require_state(spec, a, "bridge_generator");
  require_state(spec, b, "bridge_generator");
  if (a == b) throw Error(ErrorCode::InvalidArgument, "bridge_generator is defined for a != b");
  if (!(0.0 <= t && t < spec.horizon())) throw Error(ErrorCode::InvalidArgument, "bridge_generator needs 0 <= t < T0");
  const Eigen::MatrixXd p = transition_at(spec.generator(), spec.horizon() - t).probs();
  const auto y = static_cast<Eigen::Index>(spec.end());
  const double denom = p(static_cast<Eigen::Index>(a), y);
  if (!(denom > 0.0)) throw Error(ErrorCode::DegenerateDenominator, "bridge_generator: P_ay(T0 - t) = 0");
  return spec.generator()(a, b) * p(static_cast<Eigen::Index>(b), y) / denom;
}

BridgeSampler::BridgeSampler(const BridgeSpec& spec, std::uint64_t max_attempts)
    : spec_(spec), simulator_(spec.generator()), max_attempts_(max_attempts) {}

BridgeDraw BridgeSampler::draw(Stream& rng) const {
  BridgeDraw out;
  while (out.attempts < max_attempts_) {
    ++out.attempts;
    out.path = simulator_.run(spec_.start(), spec_.horizon(), rng);
    if (out.path.final_state() == spec_.end()) return out;
  }
  std::ostringstream os;
  os << "bridge (" << spec_.start() << "->" << spec_.end() << ") rejected " << max_attempts_ << " attempts";
  throw Error(ErrorCode::RejectionBudgetExceeded, os.str());
}

BridgeDraw sample_bridge(const BridgeSpec& spec, Stream& rng, std::uint64_t max_attempts) {
  return BridgeSampler(spec, max_attempts).draw(rng);
}

EmpiricalLaw conditional_samples(const BridgeSpec& spec, ObservableMode mode, std::size_t count,
                                 const SamplingOptions& options) {
  if (count == 0) throw Error(ErrorCode::InvalidArgument, "conditional_samples needs N >= 1");
  const std::size_t n = spec.generator().n_states();
  const BridgeSampler sampler(spec, options.max_attempts);
  Eigen::MatrixXd samples(static_cast<Eigen::Index>(observable_dim(mode, n)), static_cast<Eigen::Index>(count));
  parallel_for(count, options.threads, [&](std::size_t i) {
    Stream rng(options.seed, options.stream, i);
    const BridgeDraw draw = sampler.draw(rng);
    samples.col(static_cast<Eigen::Index>(i)) = window_observable(draw.path, spec.horizon(), mode, n);
  });
  return EmpiricalLaw(std::move(samples));
}

std::string sample_dump_name(std::size_t x, std::size_t y, ObservableMode mode, double t0,
                             std::uint64_t seed, std::size_t count) {
  std::ostringstream os;
  os << "q_x" << x << "_y" << y << "_" << mode_name(mode) << "_T0" << std::setprecision(17) << t0
     << "_seed" << seed << "_N" << count << ".bin";
  return os.str();
}

}  // namespace ldp
