#include "nst/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "nst/parallel.hpp"

namespace nst::bench {

double percentile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("percentile of empty data");
  const double pos = q / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

bool BenchReport::timing_ordered() const {
  for (std::size_t i = 1; i < variants.size(); ++i)
    if (!(variants[i].median < variants[i - 1].median)) return false;
  return true;
}

bool BenchReport::flop_ordered() const {
  for (std::size_t i = 1; i < variants.size(); ++i)
    if (!(variants[i].flop_estimate < variants[i - 1].flop_estimate)) return false;
  return true;
}

BenchReport run_bench(const BenchOptions& options) {
  if (options.size == 0 || options.size % 4 != 0)
    throw std::invalid_argument("benchmark size must be a positive multiple of 4, got " +
                                std::to_string(options.size));
  if (options.runs < 10) throw std::invalid_argument("benchmark needs at least 10 timed runs");

  const unsigned saved_threads = num_threads();
  set_num_threads(options.threads);

  std::vector<net::Network<float>> nets;
  BenchReport report{options, {}};
  for (std::size_t i = 0; i < net::kVariants.size(); ++i) {
    nets.push_back(net::Network<float>::build(net::kVariants[i], options.seed));
    auto& s = report.variants[i];
    s.variant = net::kVariants[i];
    s.param_count = nets.back().param_count();
    s.flop_estimate = net::flop_estimate(nets.back().spec(), options.size, options.size);
  }

  Rng rng(options.seed ^ 0xbe7c4ULL);
  const auto input = uniform_init<float>(rng, {1, 3, options.size, options.size}, 0.0, 1.0);

  using clock = std::chrono::steady_clock;
  double sink = 0.0;
  for (std::size_t rep = 0; rep < options.warmup + options.runs; ++rep) {
    for (std::size_t i = 0; i < nets.size(); ++i) {
      const auto t0 = clock::now();
      const auto out = nets[i].forward(input);
      const auto t1 = clock::now();
      sink += out[0];
      if (rep >= options.warmup) report.variants[i].timings.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
  }
  set_num_threads(saved_threads);
  if (!std::isfinite(sink)) throw std::runtime_error("benchmark produced non-finite network output");

  for (auto& s : report.variants) {
    std::sort(s.timings.begin(), s.timings.end());
    s.median = percentile(s.timings, 50);
    s.p10 = percentile(s.timings, 10);
    s.p90 = percentile(s.timings, 90);
  }
  const double base = report.variants[0].median;
  for (auto& s : report.variants) s.relative_reduction = (base - s.median) / base;
  return report;
}

Format parse_format(const std::string& s) {
  if (s == "text") return Format::Text;
  if (s == "csv") return Format::Csv;
  if (s == "markdown" || s == "md") return Format::Markdown;
  throw std::invalid_argument("unknown report format '" + s + "' (expected text, csv or markdown)");
}

namespace {

struct Row {
  std::string name;
  std::uint64_t params, flops;
  double median, p10, p90, reduction_pct;
  double ref_seconds, ref_table_pct, ref_stated_pct;
};

std::vector<Row> rows_of(const BenchReport& r) {
  std::vector<Row> rows;
  const double ref_base = kReference[0].seconds;
  for (std::size_t i = 0; i < r.variants.size(); ++i) {
    const auto& s = r.variants[i];
    const auto& ref = kReference[i];
    rows.push_back({std::string(net::variant_name(s.variant)), s.param_count, s.flop_estimate, s.median, s.p10,
                    s.p90, 100.0 * s.relative_reduction, ref.seconds,
                    100.0 * (ref_base - ref.seconds) / ref_base, ref.stated_reduction_pct});
  }
  return rows;
}

std::string fixed(double v, int digits) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(digits) << v;
  return o.str();
}

}  // namespace

std::string emit_report(const BenchReport& report, Format format) {
  const auto rows = rows_of(report);
  const auto& o = report.options;
  std::ostringstream out;
  switch (format) {
    case Format::Csv:
      out << "variant,params,flops,median_s,p10_s,p90_s,reduction_pct,reference_s,reference_table_pct,"
             "reference_stated_pct\n";
      for (const auto& r : rows)
        out << r.name << ',' << r.params << ',' << r.flops << ',' << fixed(r.median, 6) << ',' << fixed(r.p10, 6)
            << ',' << fixed(r.p90, 6) << ',' << fixed(r.reduction_pct, 2) << ',' << fixed(r.ref_seconds, 2) << ','
            << fixed(r.ref_table_pct, 2) << ',' << fixed(r.ref_stated_pct, 2) << '\n';
      break;
    case Format::Markdown:
      out << "| variant | params | GFLOPs | median (s) | p10 (s) | p90 (s) | reduction | reference (s) | "
             "reference reduction (table / stated) |\n";
      out << "|---|---:|---:|---:|---:|---:|---:|---:|---:|\n";
      for (const auto& r : rows)
        out << "| " << r.name << " | " << r.params << " | " << fixed(r.flops / 1e9, 3) << " | " << fixed(r.median, 4)
            << " | " << fixed(r.p10, 4) << " | " << fixed(r.p90, 4) << " | " << fixed(r.reduction_pct, 2)
            << "% | " << fixed(r.ref_seconds, 2) << " | " << fixed(r.ref_table_pct, 2) << "% / "
            << fixed(r.ref_stated_pct, 2) << "% |\n";
      break;
    case Format::Text: {
      out << "inference benchmark: " << o.size << "x" << o.size << ", " << o.runs << " timed runs after " << o.warmup
          << " warmups, threads=" << o.threads << ", seed=" << o.seed << "\n\n";
      out << std::left << std::setw(15) << "variant" << std::right << std::setw(10) << "params" << std::setw(10)
          << "GFLOPs" << std::setw(11) << "median s" << std::setw(10) << "p10 s" << std::setw(10) << "p90 s"
          << std::setw(11) << "reduction" << std::setw(10) << "ref s" << std::setw(11) << "ref table"
          << std::setw(12) << "ref stated" << '\n';
      for (const auto& r : rows)
        out << std::left << std::setw(15) << r.name << std::right << std::setw(10) << r.params << std::setw(10)
            << fixed(r.flops / 1e9, 3) << std::setw(11) << fixed(r.median, 4) << std::setw(10) << fixed(r.p10, 4)
            << std::setw(10) << fixed(r.p90, 4) << std::setw(10) << fixed(r.reduction_pct, 2) << '%'
            << std::setw(10) << fixed(r.ref_seconds, 2) << std::setw(10) << fixed(r.ref_table_pct, 2) << '%'
            << std::setw(11) << fixed(r.ref_stated_pct, 2) << "%\n";
      out << "\ntiming order depsep_nn < depsep_upsamp < depsep < johnson: "
          << (report.timing_ordered() ? "yes" : "NO") << "\nFLOP order: " << (report.flop_ordered() ? "yes" : "NO")
          << '\n';
      break;
    }
  }
  return out.str();
}

}  // namespace nst::bench
