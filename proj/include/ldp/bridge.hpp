#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "ldp/chain.hpp"
#include "ldp/conjugate.hpp"
#include "ldp/simulate.hpp"

namespace ldp {

/// Chain with generator Q conditioned on X(0) = x, X(T0) = y.
class BridgeSpec {
 public:
  BridgeSpec(GeneratorMatrix q, std::size_t x, std::size_t y, double t0);

  const GeneratorMatrix& generator() const { return q_; }
  std::size_t start() const { return x_; }
  std::size_t end() const { return y_; }
  double horizon() const { return t0_; }
  /// P_xy(T0), also the acceptance probability of the rejection sampler.
  double endpoint_probability() const { return endpoint_probability_; }

 private:
  GeneratorMatrix q_;
  std::size_t x_;
  std::size_t y_;
  double t0_;
  double endpoint_probability_;
};

/// P(X(t) = b | X(s) = a, X(T0) = y) = P_ab(t-s) P_by(T0-t) / P_ay(T0-s), 0 <= s <= t < T0.
double bridge_transition(const BridgeSpec& spec, std::size_t a, std::size_t b, double s, double t);

/// Full bridge kernel between times s and t (rows a, columns b).
Eigen::MatrixXd bridge_kernel(const BridgeSpec& spec, double s, double t);

/// Time-dependent bridge rate Q^{xy}_ab(t) = Q_ab P_by(T0-t) / P_ay(T0-t), a != b.
double bridge_generator(const BridgeSpec& spec, std::size_t a, std::size_t b, double t);

struct BridgeDraw {
  PathRecord path;
  std::uint64_t attempts = 0;
};

constexpr std::uint64_t kDefaultRejectionBudget = 1'000'000;

/// Exact bridge draw: unconditioned Gillespie paths from x on [0, T0],
/// accepted when they end in y.
class BridgeSampler {
 public:
  explicit BridgeSampler(const BridgeSpec& spec, std::uint64_t max_attempts = kDefaultRejectionBudget);

  BridgeDraw draw(Stream& rng) const;

 private:
  BridgeSpec spec_;
  ChainSimulator simulator_;
  std::uint64_t max_attempts_;
};

BridgeDraw sample_bridge(const BridgeSpec& spec, Stream& rng,
                         std::uint64_t max_attempts = kDefaultRejectionBudget);

struct SamplingOptions {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;  // usually the pair index x * n + y
  unsigned threads = 1;
  std::uint64_t max_attempts = kDefaultRejectionBudget;
};

/// N i.i.d. draws of the window observable under the (x, y) bridge. Sample i
/// uses Stream(seed, stream, i), so the result depends only on (seed, spec, N).
EmpiricalLaw conditional_samples(const BridgeSpec& spec, ObservableMode mode, std::size_t count,
                                 const SamplingOptions& options);

/// Cache file name for one pair's sample dump.
std::string sample_dump_name(std::size_t x, std::size_t y, ObservableMode mode, double t0,
                             std::uint64_t seed, std::size_t count);

}  // namespace ldp
