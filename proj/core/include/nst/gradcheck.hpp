#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nst/tensor.hpp"

namespace nst::gradcheck {

/// Central-difference step used by every suite (f64).
inline constexpr double kStep = 1e-5;
inline constexpr double kOpTolerance = 1e-4;
inline constexpr double kEndToEndTolerance = 1e-3;
inline constexpr double kRelativeFloor = 1e-4;
/// An entry whose one-sided differences disagree by more than this fraction
/// of the check's largest gradient entry sits within one step of a ReLU kink;
/// it is skipped and another entry drawn.
inline constexpr double kKinkRatio = 1e-3;

struct CheckResult {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t entries = 0;      // entries compared
  std::size_t kinks = 0;        // entries skipped as non-differentiable at the step size
  std::size_t evaluations = 0;  // loss evaluations spent
  /// Needs at least one compared entry and no more than one kink per four.
  bool passed() const;
};

struct SuiteResult {
  std::string module;
  std::vector<CheckResult> checks;
  bool passed() const;
};

/// A tensor to perturb and the analytic gradient of the scalar loss w.r.t. it.
struct Probe {
  std::string label;
  Tensor<double>* value;
  Tensor<double> analytic;
};

/// Compares each probe's analytic gradient with central differences of
/// `loss` at up to `max_samples` entries per tensor (all entries if fewer).
/// The error of one tensor is ||analytic - numeric|| / max(||analytic||,
/// ||numeric||, floor') over the sampled entries, where floor' is the larger
/// of `floor` and kRelativeFloor times the largest analytic gradient norm in
/// the check. A tensor whose true gradient is zero (a conv bias feeding an
/// instance norm) is thus judged against the op's gradient scale. The check
/// reports the worst tensor. Kinked entries (see kKinkRatio) are replaced by
/// fresh draws, up to four attempts per wanted sample.
CheckResult compare(const std::string& name, double tolerance, const std::function<double()>& loss,
                    std::vector<Probe>& probes, std::size_t max_samples, Rng& rng, double floor = 1e-8);

SuiteResult check_ops(std::uint64_t seed = 11);
SuiteResult check_losses(std::uint64_t seed = 12);
SuiteResult check_networks(std::uint64_t seed = 13);

/// module: all | ops | losses | networks
std::vector<SuiteResult> run(const std::string& module);

}  // namespace nst::gradcheck
