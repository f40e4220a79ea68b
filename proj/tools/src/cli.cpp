#include "nst/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <ostream>

#include "nst/bench.hpp"
#include "nst/gradcheck.hpp"
#include "nst/image_io.hpp"
#include "nst/network.hpp"
#include "nst/optimize.hpp"
#include "nst/parallel.hpp"

namespace nst::cli {

namespace {

/// Thrown for bad flag values discovered after parsing; maps to exit code 1.
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

losses::Distance distance_flag(const std::string& flag, const std::string& value) {
  try {
    return losses::parse_distance(value);
  } catch (const std::invalid_argument& e) {
    throw UsageError(flag + ": " + e.what());
  }
}

void write_history(const std::string& path, const std::vector<optim::LossRecord>& history) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error(path + ": cannot open for writing");
  optim::write_loss_csv(f, history);
}

struct TrainArgs {
  std::string config, variant, style, content_dir, out_weights, content_loss, style_loss, loss_csv;
  double alpha = 0, beta = 0, gamma = 0;
  std::uint64_t seed = 0;
  std::size_t size = 0, iters = 0;
};

struct OptimizeArgs {
  std::string content, style, output, init = "content", content_loss = "mse", style_loss = "mse", loss_csv;
  std::size_t steps = 200;
  double lr = 0;
  double alpha = 0, beta = 0, gamma = 0;
  std::uint64_t seed = 7;
};

int do_train(const CLI::App& sub, const TrainArgs& a, std::ostream& out) {
  optim::TrainConfig cfg = a.config.empty() ? optim::TrainConfig{} : optim::load_config(a.config);
  auto given = [&](const char* name) { return sub.get_option(name)->count() > 0; };
  if (given("--variant")) {
    try {
      net::parse_variant(a.variant);
    } catch (const std::invalid_argument& e) {
      throw UsageError(std::string("--variant: ") + e.what());
    }
    cfg.variant = a.variant;
  }
  if (given("--style")) cfg.style = a.style;
  if (given("--content-dir")) cfg.content_dir = a.content_dir;
  if (given("--alpha")) cfg.weights.alpha = a.alpha;
  if (given("--beta")) cfg.weights.beta = a.beta;
  if (given("--gamma")) cfg.weights.gamma = a.gamma;
  if (given("--content-loss")) cfg.content_loss = distance_flag("--content-loss", a.content_loss);
  if (given("--style-loss")) cfg.style_loss = distance_flag("--style-loss", a.style_loss);
  if (given("--seed")) cfg.seed = a.seed;
  if (given("--size")) cfg.size = a.size;
  if (given("--iters")) cfg.iters = a.iters;
  if (cfg.style.empty()) throw UsageError("--style is required (flag or config key 'style')");
  if (cfg.content_dir.empty()) throw UsageError("--content-dir is required (flag or config key 'content_dir')");

  const auto result = optim::train(cfg);
  net::save_weights(result.network, a.out_weights);
  if (!a.loss_csv.empty()) write_history(a.loss_csv, result.history);
  const auto& last = result.history.empty() ? optim::LossRecord{} : result.history.back();
  out << "trained " << cfg.variant << " for " << result.history.size() << " iterations; final total loss "
      << last.total << "\nweights written to " << a.out_weights << '\n';
  return kExitOk;
}

int do_stylize(const std::string& weights, const std::string& input, const std::string& output, std::ostream& out) {
  const auto network = net::load_weights<float>(weights);
  const auto image = io::load_image(input);
  const auto& s = image.pixels.shape();
  if (s.h % 4 != 0 || s.w % 4 != 0)
    throw std::runtime_error(input + ": image is " + std::to_string(s.w) + "x" + std::to_string(s.h) +
                             "; width and height must be multiples of 4");
  const auto styled = network.forward(image.pixels);
  io::save_image(styled, output);
  out << "stylized " << input << " (" << s.w << "x" << s.h << ") with " << network.spec().name() << " -> " << output
      << '\n';
  return kExitOk;
}

int do_optimize(const CLI::App& sub, const OptimizeArgs& a, std::ostream& out) {
  auto given = [&](const char* name) { return sub.get_option(name)->count() > 0; };
  optim::ImageOptions opt;
  opt.steps = a.steps;
  opt.noise_seed = a.seed;
  if (a.init == "noise") {
    opt.init = optim::ImageOptions::Init::Noise;
  } else if (a.init != "content") {
    throw UsageError("--init: expected content or noise, got '" + a.init + "'");
  }
  if (given("--lr")) opt.adam.lr = a.lr;
  if (given("--alpha")) opt.objective.weights.alpha = a.alpha;
  if (given("--beta")) opt.objective.weights.beta = a.beta;
  if (given("--gamma")) opt.objective.weights.gamma = a.gamma;
  opt.objective.content_kind = distance_flag("--content-loss", a.content_loss);
  opt.objective.style_kind = distance_flag("--style-loss", a.style_loss);

  const auto content = io::load_image(a.content).pixels;
  const auto style = io::load_image(a.style).pixels;
  if (content.shape() != style.shape())
    throw std::runtime_error("--content " + a.content + " and --style " + a.style + " must have the same size");
  const auto result = optim::optimize_image(content, style, opt);
  io::save_image(result.image, a.output);
  if (!a.loss_csv.empty()) write_history(a.loss_csv, result.history);
  out << "optimized " << a.steps << " steps: loss " << result.initial_loss << " -> " << result.best_loss
      << "\nimage written to " << a.output << '\n';
  return kExitOk;
}

int do_benchmark(const bench::BenchOptions& opt, const std::string& format, std::ostream& out) {
  bench::Format f;
  try {
    f = bench::parse_format(format);
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("--format: ") + e.what());
  }
  if (opt.size == 0 || opt.size % 4 != 0) throw UsageError("--size must be a positive multiple of 4");
  if (opt.runs < 10) throw UsageError("--runs must be at least 10");
  out << bench::emit_report(bench::run_bench(opt), f);
  return kExitOk;
}

int do_gradcheck(const std::string& module, std::ostream& out) {
  std::vector<gradcheck::SuiteResult> suites;
  try {
    suites = gradcheck::run(module);
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("--module: ") + e.what());
  }
  bool ok = true;
  for (const auto& s : suites) {
    for (const auto& c : s.checks) {
      out << (c.passed() ? "PASS " : "FAIL ") << s.module << ": " << c.name << "  rel_err=" << c.max_rel_error
          << " tol=" << c.tolerance << " entries=" << c.entries << " kinks=" << c.kinks << '\n';
    }
    ok = ok && s.passed();
  }
  out << (ok ? "gradcheck passed" : "gradcheck FAILED") << '\n';
  return ok ? kExitOk : kExitRuntime;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Feed-forward and iterative neural style transfer", "nst"};
  app.require_subcommand(1);
  unsigned threads = 1;
  app.add_option("--threads", threads, "Worker threads for op-internal parallelism")->check(CLI::Range(1u, 256u));

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a transformation network for one style image");
  train->add_option("--config", ta.config, "key = value config file; flags override it")->check(CLI::ExistingFile);
  train->add_option("--variant", ta.variant, "johnson | depsep | depsep_upsamp | depsep_nn");
  train->add_option("--style", ta.style, "Style image (PPM or PNG)");
  train->add_option("--content-dir", ta.content_dir, "Directory of content images");
  train->add_option("--out-weights", ta.out_weights, "Where to write the trained weights")->required();
  train->add_option("--content-loss", ta.content_loss, "mse | char");
  train->add_option("--style-loss", ta.style_loss, "mse | char");
  train->add_option("--alpha", ta.alpha, "Content weight");
  train->add_option("--beta", ta.beta, "Style weight");
  train->add_option("--gamma", ta.gamma, "Total-variation weight");
  train->add_option("--seed", ta.seed, "Initialization seed");
  train->add_option("--size", ta.size, "Content image size (multiple of 4)");
  train->add_option("--iters", ta.iters, "Training iterations");
  train->add_option("--loss-csv", ta.loss_csv, "Write the per-iteration loss history here");

  std::string weights, input, output;
  auto* stylize = app.add_subcommand("stylize", "Apply trained weights to an image");
  stylize->add_option("--weights", weights, "Weights file")->required();
  stylize->add_option("--input", input, "Input image")->required();
  stylize->add_option("--output", output, "Output image (.png or .ppm)")->required();

  OptimizeArgs oa;
  auto* optimize = app.add_subcommand("optimize", "Iteratively optimize image pixels (Gatys mode)");
  optimize->add_option("--content", oa.content, "Content image")->required();
  optimize->add_option("--style", oa.style, "Style image (same size as content)")->required();
  optimize->add_option("--output", oa.output, "Output image")->required();
  optimize->add_option("--steps", oa.steps, "Adam steps")->capture_default_str();
  optimize->add_option("--init", oa.init, "content | noise")->capture_default_str();
  optimize->add_option("--seed", oa.seed, "Noise seed for --init noise")->capture_default_str();
  optimize->add_option("--lr", oa.lr, "Adam learning rate on pixels");
  optimize->add_option("--alpha", oa.alpha, "Content weight");
  optimize->add_option("--beta", oa.beta, "Style weight");
  optimize->add_option("--gamma", oa.gamma, "Total-variation weight (default 0)");
  optimize->add_option("--content-loss", oa.content_loss, "mse | char")->capture_default_str();
  optimize->add_option("--style-loss", oa.style_loss, "mse | char")->capture_default_str();
  optimize->add_option("--loss-csv", oa.loss_csv, "Write the per-step loss history here");

  bench::BenchOptions bo;
  std::string format = "text";
  auto* benchmark = app.add_subcommand("benchmark", "Time all four variants and report");
  benchmark->add_option("--size", bo.size, "Square input size")->capture_default_str();
  benchmark->add_option("--runs", bo.runs, "Timed runs per variant (>= 10)")->capture_default_str();
  benchmark->add_option("--warmup", bo.warmup, "Untimed warmup runs")->capture_default_str();
  benchmark->add_option("--seed", bo.seed, "Network and input seed")->capture_default_str();
  benchmark->add_option("--format", format, "text | csv | markdown")->capture_default_str();

  std::string module = "all";
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gradcheck->add_option("--module", module, "all | ops | losses | networks")->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kExitUsage;
  }

  set_num_threads(threads);
  bo.threads = threads;
  try {
    if (*train) return do_train(*train, ta, out);
    if (*stylize) return do_stylize(weights, input, output, out);
    if (*optimize) return do_optimize(*optimize, oa, out);
    if (*benchmark) return do_benchmark(bo, format, out);
    if (*gradcheck) return do_gradcheck(module, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace nst::cli
