#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "nst/bench.hpp"

using namespace nst;
using namespace nst::bench;

namespace {

std::vector<std::string> lines_of(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);)
    if (!l.empty()) out.push_back(l);
  return out;
}

const BenchReport& small_report() {
  static const BenchReport r = run_bench(BenchOptions{16, 1, 10, 1, 1});
  return r;
}

}  // namespace

TEST_SUITE("bench") {

TEST_CASE("percentile interpolates linearly") {
  const std::vector<double> v{1, 2, 3, 4, 5};
  CHECK(percentile(v, 50) == 3.0);
  CHECK(percentile(v, 0) == 1.0);
  CHECK(percentile(v, 100) == 5.0);
  CHECK(percentile(v, 10) == doctest::Approx(1.4));
  CHECK(percentile({2, 4}, 50) == 3.0);
}

TEST_CASE("format names") {
  CHECK(parse_format("csv") == Format::Csv);
  CHECK(parse_format("markdown") == Format::Markdown);
  CHECK(parse_format("text") == Format::Text);
  CHECK_THROWS(parse_format("xml"));
}

TEST_CASE("bench options are validated") {
  CHECK_THROWS(run_bench(BenchOptions{16, 0, 9, 1, 1}));
  CHECK_THROWS(run_bench(BenchOptions{18, 0, 10, 1, 1}));
}

TEST_CASE("report statistics") {
  const auto& r = small_report();
  for (const auto& v : r.variants) {
    CHECK(v.timings.size() == 10);
    CHECK(std::is_sorted(v.timings.begin(), v.timings.end()));
    CHECK(v.p10 <= v.median);
    CHECK(v.median <= v.p90);
    CHECK(v.flop_estimate == net::flop_estimate(net::make_spec(v.variant), 16, 16));
  }
  CHECK(r.variants[0].relative_reduction == 0.0);
  CHECK(r.flop_ordered());
  const double j = r.variants[0].median;
  for (const auto& v : r.variants) CHECK(v.relative_reduction == doctest::Approx((j - v.median) / j));
}

TEST_CASE("csv has one row per variant") {
  const auto rows = lines_of(emit_report(small_report(), Format::Csv));
  REQUIRE(rows.size() == 5);
  CHECK(rows[0].rfind("variant,", 0) == 0);
  const auto cols = std::count(rows[0].begin(), rows[0].end(), ',');
  for (const auto& r : rows) CHECK(std::count(r.begin(), r.end(), ',') == cols);
  CHECK(rows[2].find("26.06") != std::string::npos);
}

TEST_CASE("markdown table has balanced pipes") {
  const auto rows = lines_of(emit_report(small_report(), Format::Markdown));
  std::vector<std::string> table;
  for (const auto& r : rows)
    if (!r.empty() && r.front() == '|') table.push_back(r);
  REQUIRE(table.size() == 6);
  const auto pipes = std::count(table[0].begin(), table[0].end(), '|');
  for (const auto& r : table) {
    CHECK(r.back() == '|');
    CHECK(std::count(r.begin(), r.end(), '|') == pipes);
  }
}

TEST_CASE("text output carries the reduction column and reference values") {
  const auto text = emit_report(small_report(), Format::Text);
  CHECK(text.find("reduction") != std::string::npos);
  CHECK(text.find("57.14") != std::string::npos);
}

}  // TEST_SUITE
