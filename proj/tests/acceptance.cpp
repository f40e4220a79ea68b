// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include "nst/bench.hpp"
#include "nst/gradcheck.hpp"
#include "nst/image_io.hpp"
#include "nst/optimize.hpp"
#include "oracles.hpp"

using namespace nst;

namespace {

const std::filesystem::path kData = NST_TEST_DATA_DIR;

struct Outcome {
  bool pass;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

bool history_finite(const std::vector<optim::LossRecord>& h) {
  for (const auto& r : h)
    if (!std::isfinite(r.total) || !std::isfinite(r.content) || !std::isfinite(r.style) || !std::isfinite(r.tv))
      return false;
  return true;
}

double median_total(const std::vector<optim::LossRecord>& h, std::size_t from, std::size_t count) {
  std::vector<double> v;
  for (std::size_t i = from; i < from + count; ++i) v.push_back(h[i].total);
  return oracle::median(v);
}

optim::TrainConfig smoke_config() {
  optim::TrainConfig cfg;
  cfg.variant = "depsep";
  cfg.style = kData / "style.ppm";
  cfg.content_dir = kData / "content";
  cfg.size = 32;
  cfg.iters = 50;
  return cfg;
}

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = true;
  std::ostringstream d;
  double worst_op = 0, worst_e2e = 0;
  for (const auto& suite : gradcheck::run("all")) {
    for (const auto& c : suite.checks) {
      if (!c.passed()) {
        ok = false;
        d << "failed " << suite.module << "/" << c.name << " err=" << c.max_rel_error << "; ";
      }
      auto& worst = c.tolerance > gradcheck::kOpTolerance ? worst_e2e : worst_op;
      worst = std::max(worst, c.max_rel_error);
    }
  }
  const double secs = seconds_since(t0);
  d << "worst op err " << fmt("%.2e", worst_op) << " (< 1e-4), worst end-to-end err " << fmt("%.2e", worst_e2e)
    << " (< 1e-3), " << fmt("%.1f", secs) << " s";
  return {ok && secs < 300, d.str()};
}

Outcome adjoint() {
  Rng rng(2024);
  double worst = 0;
  const std::size_t kernels[] = {1, 3, 9};
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t ci = 1 + rng.next_u64() % 4, co = 1 + rng.next_u64() % 4;
    const std::size_t k = kernels[trial % 3];
    const int stride = 1 + static_cast<int>(trial % 2);
    const std::size_t h = k + 1 + rng.next_u64() % 8, w = k + 1 + rng.next_u64() % 8;
    auto p = ops::make_conv<double>(rng, ci, co, k, stride);
    const auto x = uniform_init<double>(rng, {1, ci, h, w}, -1, 1);
    const auto cx = ops::conv2d_fwd(x, p);  // bias is zero
    const auto y = uniform_init<double>(rng, cx.shape(), -1, 1);
    const double lhs = dot(cx, y);
    const double rhs = dot(x, ops::conv2d_input_grad(y, p.weight, stride, h, w));
    worst = std::max(worst, std::abs(lhs - rhs) / std::max(std::abs(lhs), std::abs(rhs)));
  }
  return {worst < 1e-10, "max relative error over 20 trials " + fmt("%.2e", worst) + " (< 1e-10)"};
}

Outcome parameters() {
  // Per-layer closed forms; m = 4 for depthwise-separable layers.
  auto conv = [](std::size_t ci, std::size_t co, std::size_t k) { return ci * co * k * k + co; };
  auto sep = [](std::size_t ci, std::size_t co, std::size_t k) { return ci * 4 * k * k + ci * 4 * co + co; };
  const std::size_t norms = 2 * (32 + 64 + 128 + 10 * 128 + 64 + 32);
  const std::size_t johnson = conv(3, 32, 9) + conv(32, 64, 3) + conv(64, 128, 3) + 10 * conv(128, 128, 3) +
                              conv(128, 64, 3) + conv(64, 32, 3) + conv(32, 3, 9) + norms;
  const std::size_t depsep = sep(3, 32, 9) + sep(32, 64, 3) + sep(64, 128, 3) + 10 * sep(128, 128, 3) +
                             sep(128, 64, 3) + sep(64, 32, 3) + sep(32, 3, 9) + norms;
  const auto nj = net::Network<float>::build(net::Variant::Johnson, 1);
  const auto nd = net::Network<float>::build(net::Variant::DepSep, 1);
  const bool exact = nj.param_count() == johnson && nd.param_count() == depsep &&
                     net::param_count(nj.layers()[0]) == 7808 && net::param_count(nd.layers()[0]) == 1388;
  const double ratio = static_cast<double>(nd.param_count()) / static_cast<double>(nj.param_count());
  std::ostringstream d;
  d << "johnson " << nj.param_count() << " (formula " << johnson << "), depsep " << nd.param_count() << " (formula "
    << depsep << "), layer 1 " << net::param_count(nj.layers()[0]) << " vs " << net::param_count(nd.layers()[0])
    << ", ratio " << fmt("%.4f", ratio) << " (< 0.5)";
  return {exact && ratio < 0.5, d.str()};
}

Outcome timing() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto report = bench::run_bench(bench::BenchOptions{256, 3, 10, 1, 1});
  const double secs = seconds_since(t0);
  std::cout << bench::emit_report(report, bench::Format::Text);
  std::ofstream("benchmark_256.md") << bench::emit_report(report, bench::Format::Markdown);
  std::ostringstream d;
  d << "medians";
  for (const auto& v : report.variants) d << " " << net::variant_name(v.variant) << "=" << fmt("%.3f", v.median) << "s";
  d << "; reductions";
  for (std::size_t i = 1; i < 4; ++i)
    d << " " << fmt("%.2f", 100 * report.variants[i].relative_reduction) << "% (reference "
      << fmt("%.2f", bench::kReference[i].stated_reduction_pct) << "%)";
  d << "; time order " << (report.timing_ordered() ? "ok" : "VIOLATED") << ", FLOP order "
    << (report.flop_ordered() ? "ok" : "VIOLATED") << ", " << fmt("%.1f", secs) << " s";
  return {report.timing_ordered() && report.flop_ordered() && secs < 600, d.str()};
}

Outcome training() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = optim::train(smoke_config());
  const double secs = seconds_since(t0);
  const auto& h = r.history;
  if (h.size() != 50) return {false, "expected 50 history entries, got " + std::to_string(h.size())};
  const double first = median_total(h, 0, 10), last = median_total(h, 40, 10);
  std::ostringstream d;
  d << "depsep, 5 images 32x32, median first 10 = " << fmt("%.4f", first) << ", median last 10 = "
    << fmt("%.4f", last) << ", finite " << (history_finite(h) ? "yes" : "NO") << ", " << fmt("%.1f", secs) << " s";
  return {last < first && history_finite(h) && secs < 300, d.str()};
}

Outcome gatys() {
  const auto img = io::load_image(kData / "content" / "c0.ppm").pixels;
  optim::ImageOptions o;
  o.init = optim::ImageOptions::Init::Noise;
  o.steps = 200;
  const auto r = optim::optimize_image(img, img, o);
  const double ratio = r.best_loss / r.initial_loss;
  std::ostringstream d;
  d << "noise init, 200 steps: initial " << fmt("%.4f", r.initial_loss) << ", best " << fmt("%.5f", r.best_loss)
    << ", ratio " << fmt("%.4f", ratio) << " (< 0.10)";
  return {ratio < 0.10 && std::isfinite(r.best_loss), d.str()};
}

Outcome ablation() {
  using losses::Distance;
  std::vector<std::vector<optim::LossRecord>> runs;
  std::ostringstream d;
  bool finite = true;
  for (auto ck : {Distance::mse(), Distance::charbonnier()})
    for (auto sk : {Distance::mse(), Distance::charbonnier()}) {
      auto cfg = smoke_config();
      cfg.content_loss = ck;
      cfg.style_loss = sk;
      const auto r = optim::train(cfg);
      finite = finite && history_finite(r.history) && r.history.size() == 50;
      d << ck.name() << "/" << sk.name() << " " << fmt("%.4f", r.history.front().total) << "->"
        << fmt("%.4f", r.history.back().total) << "; ";
      runs.push_back(r.history);
    }
  bool distinct = true;
  for (std::size_t i = 0; i < runs.size(); ++i)
    for (std::size_t j = i + 1; j < runs.size(); ++j) {
      bool differ = false;
      for (std::size_t t = 0; t < runs[i].size() && !differ; ++t) differ = runs[i][t].total != runs[j][t].total;
      distinct = distinct && differ;
    }
  d << "finite " << (finite ? "yes" : "NO") << ", distinct " << (distinct ? "yes" : "NO");
  return {finite && distinct, d.str()};
}

Outcome properties() {
  std::vector<std::pair<std::string, bool>> checks;
  Rng rng(77);

  bool sym = true, psd = true, scaling = true;
  for (int trial = 0; trial < 20; ++trial) {
    const auto f = uniform_init<double>(rng, {1, 5, 4, 3}, -1, 1);
    const auto g = losses::gram(f).values;
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 5; ++j) sym = sym && g[i * 5 + j] == g[j * 5 + i];
    for (int probe = 0; probe < 10; ++probe) {
      const auto v = uniform_init<double>(rng, {1, 1, 5, 1}, -1, 1);
      double q = 0;
      for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j) q += v[i] * g[i * 5 + j] * v[j];
      psd = psd && q >= -1e-12;
    }
    const double s = 0.25 + 3 * rng.uniform();
    scaling = scaling && oracle::rel_err(losses::gram(scale(f, s)).values, scale(g, s * s)) < 1e-10;
  }
  checks.emplace_back("gram symmetric", sym);
  checks.emplace_back("gram PSD", psd);
  checks.emplace_back("gram s^2 scaling", scaling);

  const Tensor<double> x({1, 1, 2, 2}, {1, 2, 3, 4});
  const Tensor<double> up({1, 1, 4, 4}, {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4});
  checks.emplace_back("nn upsample 2x2 oracle", ops::nn_upsample_fwd(x) == up);

  bool norm_ok = true;
  const auto p = ops::make_instance_norm<double>(4);
  const auto y = ops::instance_norm_fwd(uniform_init<double>(rng, {2, 4, 6, 5}, -5, 9), p);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 4; ++c) {
      double m = 0, v = 0;
      for (double e : y.plane(n, c)) m += e;
      m /= 30;
      for (double e : y.plane(n, c)) v += (e - m) * (e - m);
      v /= 30;
      norm_ok = norm_ok && std::abs(m) < 1e-12 && v <= 1.0 && v > 0.99;
    }
  checks.emplace_back("instance norm mean/variance", norm_ok);

  bool roundtrip = true;
  const auto probe = uniform_init<float>(rng, {1, 3, 32, 32}, 0, 1);
  const auto path = std::filesystem::temp_directory_path() / "nst_acceptance.nstw";
  for (auto v : net::kVariants) {
    const auto netw = net::Network<float>::build(v, 123);
    net::save_weights(netw, path);
    const auto back = net::load_weights<float>(path);
    const auto a = netw.parameters(), b = back.parameters();
    roundtrip = roundtrip && a.size() == b.size() && back.forward(probe) == netw.forward(probe);
    for (std::size_t i = 0; roundtrip && i < a.size(); ++i) roundtrip = *a[i] == *b[i];
  }
  std::filesystem::remove(path);
  checks.emplace_back("weights round trip", roundtrip);

  const auto r1 = optim::train(smoke_config());
  const auto r2 = optim::train(smoke_config());
  bool same = r1.history.size() == r2.history.size();
  for (std::size_t i = 0; same && i < r1.history.size(); ++i) same = r1.history[i].total == r2.history[i].total;
  const auto pa = r1.network.parameters(), pb = r2.network.parameters();
  for (std::size_t i = 0; same && i < pa.size(); ++i) same = *pa[i] == *pb[i];
  checks.emplace_back("training seed determinism", same);

  bool all = true;
  std::ostringstream d;
  for (const auto& [name, ok] : checks) {
    if (d.tellp() > 0) d << "; ";
    d << name << (ok ? " ok" : " FAILED");
    all = all && ok;
  }
  return {all, d.str()};
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"gradient correctness", gradients}, {"adjoint identity", adjoint},       {"parameter reduction", parameters},
      {"timing ordering", timing},         {"training smoke", training},        {"self-style image optimization", gatys},
      {"loss ablation grid", ablation},    {"property suites", properties},
  };
  std::ofstream report("acceptance_report.txt");
  int failures = 0;
  for (std::size_t i = 0; i < std::size(criteria); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::ostringstream line;
    line << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " (" << criteria[i].first << "): " << o.detail;
    std::cout << line.str() << std::endl;
    report << line.str() << '\n';
  }
  std::cout << (failures ? "FAILED " : "ALL PASSED ") << std::size(criteria) - failures << "/"
            << std::size(criteria) << std::endl;
  return failures ? 1 : 0;
}
