#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "nst/network.hpp"

namespace nst::bench {

struct BenchOptions {
  std::size_t size = 256;
  std::size_t warmup = 3;
  std::size_t runs = 10;
  std::uint64_t seed = 1;
  unsigned threads = 1;
};

struct VariantStats {
  net::Variant variant = net::Variant::Johnson;
  std::uint64_t param_count = 0;
  std::uint64_t flop_estimate = 0;
  std::vector<double> timings;  // seconds, sorted ascending
  double median = 0.0;
  double p10 = 0.0;
  double p90 = 0.0;
  double relative_reduction = 0.0;  // (median_johnson - median) / median_johnson
};

/// Reference inference times for the four variants (seconds) and the
/// reference reduction percentages.
struct ReferenceRow {
  net::Variant variant;
  double seconds;
  double stated_reduction_pct;
};

inline constexpr std::array<ReferenceRow, 4> kReference{{
    {net::Variant::Johnson, 1.33, 0.0},
    {net::Variant::DepSep, 0.97, 26.06},
    {net::Variant::DepSepUpsamp, 0.81, 39.09},
    {net::Variant::DepSepNN, 0.57, 57.14},
}};

struct BenchReport {
  BenchOptions options;
  std::array<VariantStats, 4> variants;  // in net::kVariants order

  /// depsep_nn < depsep_upsamp < depsep < johnson on medians.
  bool timing_ordered() const;
  bool flop_ordered() const;
};

/// Linear-interpolated percentile of sorted data, q in [0,100].
double percentile(const std::vector<double>& sorted, double q);

/// Builds all four networks from the same seed and times forward passes on
/// one shared random input. Within each repetition the variants run
/// round-robin.
BenchReport run_bench(const BenchOptions& options);

enum class Format { Text, Csv, Markdown };
Format parse_format(const std::string& s);

std::string emit_report(const BenchReport& report, Format format);

}  // namespace nst::bench
