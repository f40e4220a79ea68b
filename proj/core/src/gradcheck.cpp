#include "nst/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "nst/loss_network.hpp"
#include "nst/losses.hpp"
#include "nst/network.hpp"
#include "nst/ops.hpp"
#include "nst/optimize.hpp"

namespace nst::gradcheck {

using TD = Tensor<double>;

bool SuiteResult::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed(); });
}

bool CheckResult::passed() const { return entries > 0 && 4 * kinks <= entries && max_rel_error < tolerance; }

CheckResult compare(const std::string& name, double tolerance, const std::function<double()>& loss,
                    std::vector<Probe>& probes, std::size_t max_samples, Rng& rng, double floor) {
  CheckResult r{name, 0.0, tolerance, 0, 0, 0};
  struct Stats {
    double diff2 = 0, a2 = 0, n2 = 0;
  };
  std::vector<Stats> stats;
  const double base = loss();
  double scale = 0;
  for (const auto& p : probes) scale = std::max(scale, max_abs(p.analytic));
  for (auto& p : probes) {
    if (p.value->shape() != p.analytic.shape())
      throw ShapeError(name + ": analytic gradient for " + p.label + " has shape " + p.analytic.shape().str() +
                       ", value has " + p.value->shape().str());
    const std::size_t n = p.value->size();
    const bool exhaustive = n <= max_samples;
    const std::size_t attempts = exhaustive ? n : 4 * max_samples;
    Stats st;
    std::size_t used = 0;
    for (std::size_t k = 0; k < attempts && used < std::min(n, max_samples); ++k) {
      const std::size_t i = exhaustive ? k : static_cast<std::size_t>(rng.uniform() * static_cast<double>(n));
      double& v = (*p.value)[i];
      const double saved = v;
      v = saved + kStep;
      const double up = loss();
      v = saved - kStep;
      const double down = loss();
      v = saved;
      r.evaluations += 2;
      const double forward = (up - base) / kStep;
      const double backward = (base - down) / kStep;
      if (std::abs(forward - backward) > kKinkRatio * std::max({std::abs(forward), std::abs(backward), scale})) {
        ++r.kinks;
        continue;
      }
      const double numeric = (up - down) / (2 * kStep);
      const double analytic = p.analytic[i];
      st.diff2 += (analytic - numeric) * (analytic - numeric);
      st.a2 += analytic * analytic;
      st.n2 += numeric * numeric;
      ++used;
      ++r.entries;
    }
    stats.push_back(st);
  }
  double largest = 0;
  for (const auto& st : stats) largest = std::max(largest, std::sqrt(st.a2));
  const double eff_floor = std::max(floor, kRelativeFloor * largest);
  for (const auto& st : stats) {
    const double denom = std::max({std::sqrt(st.a2), std::sqrt(st.n2), eff_floor});
    r.max_rel_error = std::max(r.max_rel_error, std::sqrt(st.diff2) / denom);
  }
  return r;
}

namespace {

TD random(Rng& rng, Shape s, double lo = -1.0, double hi = 1.0) { return uniform_init<double>(rng, s, lo, hi); }

/// Non-trivial values for every parameter (biases and affine terms included).
template <class P>
void randomize(P& params, Rng& rng) {
  ops::for_each_tensor(params, [&](TD& t) {
    for (double& v : t.data()) v = -0.5 + rng.uniform();
  });
}

template <class P>
void add_param_probes(std::vector<Probe>& probes, P& params, const P& grads) {
  std::vector<TD*> values;
  std::vector<const TD*> gs;
  ops::for_each_tensor(params, [&](TD& t) { values.push_back(&t); });
  ops::for_each_tensor(grads, [&](const TD& t) { gs.push_back(&t); });
  for (std::size_t i = 0; i < values.size(); ++i)
    probes.push_back({"param" + std::to_string(i), values[i], *gs[i]});
}

/// Loss <f(x, p), R> for a random R; probes x and every tensor of p.
template <class P, class Fwd, class Bwd>
CheckResult check_param_op(const std::string& name, Rng& rng, TD x, P params, Fwd fwd, Bwd bwd) {
  randomize(params, rng);
  const TD y = fwd(x, params);
  const TD weights = random(rng, y.shape());
  auto g = bwd(x, params, weights);
  std::vector<Probe> probes{{"input", &x, g.input_grad}};
  add_param_probes(probes, params, g.param_grads);
  return compare(name, kOpTolerance, [&] { return dot(fwd(x, params), weights); }, probes, 64, rng);
}

template <class Fwd, class Bwd>
CheckResult check_plain_op(const std::string& name, Rng& rng, TD x, Fwd fwd, Bwd bwd) {
  const TD y = fwd(x);
  const TD weights = random(rng, y.shape());
  std::vector<Probe> probes{{"input", &x, bwd(x, weights)}};
  return compare(name, kOpTolerance, [&] { return dot(fwd(x), weights); }, probes, 64, rng);
}

}  // namespace

SuiteResult check_ops(std::uint64_t seed) {
  using namespace ops;
  Rng rng(seed);
  SuiteResult s{"ops", {}};
  auto conv_f = [](const TD& x, const ConvParams<double>& p) { return conv2d_fwd(x, p); };
  auto conv_b = [](const TD& x, const ConvParams<double>& p, const TD& u) { return conv2d_bwd(x, p, u); };
  auto ds_f = [](const TD& x, const DepSepParams<double>& p) { return depsep_conv_fwd(x, p); };
  auto ds_b = [](const TD& x, const DepSepParams<double>& p, const TD& u) { return depsep_conv_bwd(x, p, u); };

  s.checks.push_back(check_param_op("conv2d 3x3 s1", rng, random(rng, {1, 2, 6, 6}), make_conv<double>(rng, 2, 3, 3, 1),
                                    conv_f, conv_b));
  s.checks.push_back(check_param_op("conv2d 3x3 s2", rng, random(rng, {1, 2, 6, 6}), make_conv<double>(rng, 2, 3, 3, 2),
                                    conv_f, conv_b));
  s.checks.push_back(check_param_op("conv2d 9x9 s1", rng, random(rng, {1, 2, 6, 6}), make_conv<double>(rng, 2, 2, 9, 1),
                                    conv_f, conv_b));
  s.checks.push_back(check_param_op("conv2d 1x1", rng, random(rng, {2, 3, 4, 5}), make_conv<double>(rng, 3, 2, 1, 1),
                                    conv_f, conv_b));
  s.checks.push_back(check_param_op("depsep conv s1", rng, random(rng, {1, 3, 6, 6}),
                                    make_depsep<double>(rng, 3, 4, 3, 1, 4), ds_f, ds_b));
  s.checks.push_back(check_param_op("depsep conv s2", rng, random(rng, {1, 3, 6, 6}),
                                    make_depsep<double>(rng, 3, 2, 3, 2, 4), ds_f, ds_b));
  s.checks.push_back(check_param_op(
      "transposed conv", rng, random(rng, {1, 3, 3, 3}), make_transposed_conv<double>(rng, 3, 2, 3, 2),
      [](const TD& x, const TransposedConvParams<double>& p) { return transposed_conv_fwd(x, p); },
      [](const TD& x, const TransposedConvParams<double>& p, const TD& u) { return transposed_conv_bwd(x, p, u); }));
  s.checks.push_back(check_param_op(
      "depsep transposed conv", rng, random(rng, {1, 3, 3, 3}), make_depsep<double>(rng, 3, 2, 3, 2, 4),
      [](const TD& x, const DepSepParams<double>& p) { return depsep_transposed_conv_fwd(x, p); },
      [](const TD& x, const DepSepParams<double>& p, const TD& u) { return depsep_transposed_conv_bwd(x, p, u); }));
  s.checks.push_back(check_param_op(
      "instance norm", rng, random(rng, {2, 4, 6, 6}), make_instance_norm<double>(4),
      [](const TD& x, const InstanceNormParams<double>& p) { return instance_norm_fwd(x, p); },
      [](const TD& x, const InstanceNormParams<double>& p, const TD& u) { return instance_norm_bwd(x, p, u); }));
  auto res_f = [](const TD& x, const ResidualParams<double>& p) { return residual_block_fwd(x, p); };
  auto res_b = [](const TD& x, const ResidualParams<double>& p, const TD& u) { return residual_block_bwd(x, p, u); };
  s.checks.push_back(check_param_op("residual block (full)", rng, random(rng, {1, 4, 6, 6}),
                                    make_residual<double>(rng, 4, 3, false, 1), res_f, res_b));
  s.checks.push_back(check_param_op("residual block (depsep)", rng, random(rng, {1, 4, 6, 6}),
                                    make_residual<double>(rng, 4, 3, true, 4), res_f, res_b));
  s.checks.push_back(check_param_op(
      "nn upsample + 1x1 conv", rng, random(rng, {1, 4, 3, 3}), make_conv<double>(rng, 4, 2, 1, 1),
      [](const TD& x, const ConvParams<double>& p) { return nn_upsample_conv_fwd(x, p); },
      [](const TD& x, const ConvParams<double>& p, const TD& u) { return nn_upsample_conv_bwd(x, p, u); }));
  s.checks.push_back(check_param_op(
      "concat(nn, bilinear) upsample + 1x1 conv", rng, random(rng, {1, 3, 3, 3}), make_conv<double>(rng, 6, 2, 1, 1),
      [](const TD& x, const ConvParams<double>& p) { return concat_upsample_conv_fwd(x, p); },
      [](const TD& x, const ConvParams<double>& p, const TD& u) { return concat_upsample_conv_bwd(x, p, u); }));
  s.checks.push_back(check_plain_op(
      "nn upsample", rng, random(rng, {1, 2, 3, 4}), [](const TD& x) { return nn_upsample_fwd(x); },
      [](const TD&, const TD& u) { return nn_upsample_bwd(u); }));
  s.checks.push_back(check_plain_op(
      "bilinear upsample", rng, random(rng, {1, 2, 3, 4}), [](const TD& x) { return bilinear_upsample_fwd(x); },
      [](const TD&, const TD& u) { return bilinear_upsample_bwd(u); }));
  s.checks.push_back(check_plain_op(
      "relu", rng, random(rng, {1, 2, 4, 4}), [](const TD& x) { return relu_fwd(x); },
      [](const TD& x, const TD& u) { return relu_bwd(x, u); }));
  s.checks.push_back(check_plain_op(
      "tanh out", rng, random(rng, {1, 2, 4, 4}), [](const TD& x) { return tanh_out_fwd(x); },
      [](const TD& x, const TD& u) { return tanh_out_bwd(x, u); }));
  return s;
}

SuiteResult check_losses(std::uint64_t seed) {
  using namespace losses;
  Rng rng(seed);
  SuiteResult s{"losses", {}};

  for (const Distance kind : {Distance::mse(), Distance::charbonnier()}) {
    TD a = random(rng, {1, 2, 3, 3});
    const TD b = random(rng, {1, 2, 3, 3});
    std::vector<Probe> probes{{"a", &a, distance(a, b, kind).grad}};
    s.checks.push_back(compare("distance " + kind.name(), 1e-5, [&] { return distance(a, b, kind).value; }, probes,
                               64, rng));
  }

  LossWeights lw;
  lw.style_layers = {{1, 1.0}, {2, 0.5}};
  lw.content_layers = {{1, 0.3}, {2, 1.0}};
  auto make_taps = [&] {
    FeatureTaps<double> t;
    t[1] = random(rng, {1, 3, 4, 4});
    t[2] = random(rng, {1, 5, 2, 2});
    return t;
  };
  for (const Distance kind : {Distance::mse(), Distance::charbonnier()}) {
    for (const bool raw : {false, true}) {
      auto y = make_taps();
      const auto ref = make_taps();
      LossWeights w = lw;
      w.raw_gram = raw;
      const auto g = style_loss(y, ref, w, kind);
      std::vector<Probe> probes;
      for (auto& [tag, t] : y) probes.push_back({"tap" + std::to_string(tag), &t, g.grads.at(tag)});
      s.checks.push_back(compare(std::string("style loss ") + kind.name() + (raw ? " raw gram" : ""), kOpTolerance,
                                 [&] { return style_loss(y, ref, w, kind).value; }, probes, 64, rng));
    }
    auto y = make_taps();
    const auto ref = make_taps();
    const auto g = content_loss(y, ref, lw, kind);
    std::vector<Probe> probes;
    for (auto& [tag, t] : y) probes.push_back({"tap" + std::to_string(tag), &t, g.grads.at(tag)});
    s.checks.push_back(compare("content loss " + kind.name(), kOpTolerance,
                               [&] { return content_loss(y, ref, lw, kind).value; }, probes, 64, rng));
  }

  {
    TD img = random(rng, {2, 3, 5, 4});
    std::vector<Probe> probes{{"image", &img, tv_loss(img).grad}};
    s.checks.push_back(compare("tv loss", kOpTolerance, [&] { return tv_loss(img).value; }, probes, 64, rng));
  }

  // Through the frozen extractor: taps backprop and the full objective.
  const lossnet::FrozenExtractor<double> extractor;
  {
    TD img = random(rng, {1, 3, 32, 32}, 0.0, 1.0);
    const auto taps = extractor.extract(img);
    FeatureTaps<double> weights;
    for (const auto& [tag, t] : taps) weights[tag] = random(rng, t.shape());
    auto functional = [&] {
      const auto tp = extractor.extract(img);
      double acc = 0;
      for (const auto& [tag, t] : tp) acc += dot(t, weights.at(tag));
      return acc;
    };
    std::vector<Probe> probes{{"image", &img, extractor.backprop_taps(img, taps, weights)}};
    s.checks.push_back(compare("extractor backprop", kEndToEndTolerance, functional, probes, 48, rng));
  }
  for (const Distance ck : {Distance::mse(), Distance::charbonnier()}) {
    for (const Distance sk : {Distance::mse(), Distance::charbonnier()}) {
      const TD content = random(rng, {1, 3, 32, 32}, 0.0, 1.0);
      const TD style = random(rng, {1, 3, 32, 32}, 0.0, 1.0);
      TD y = random(rng, {1, 3, 32, 32}, 0.0, 1.0);
      const auto taps_n = extractor.extract(content);
      const auto taps_s = extractor.extract(style);
      const optim::Objective obj{LossWeights{}, ck, sk};
      std::vector<Probe> probes{{"image", &y, optim::evaluate(extractor, y, taps_n, taps_s, obj).image_grad}};
      s.checks.push_back(compare("total loss " + ck.name() + "/" + sk.name() + " through extractor",
                                 kEndToEndTolerance,
                                 [&] { return optim::evaluate(extractor, y, taps_n, taps_s, obj).loss.total; },
                                 probes, 24, rng));
    }
  }
  return s;
}

SuiteResult check_networks(std::uint64_t seed) {
  Rng rng(seed);
  SuiteResult s{"networks", {}};
  for (const net::Variant v : net::kVariants) {
    auto network = net::Network<double>::build(v, seed);
    for (auto& layer : network.layers()) {
      net::for_each_tensor(layer.params, [&](TD& t) {
        for (double& x : t.data()) x = -0.5 + rng.uniform();
      });
    }
    TD x = random(rng, {1, 3, 16, 16}, 0.0, 1.0);
    net::Trace<double> trace;
    const TD y = network.forward(x, trace);
    const TD weights = random(rng, y.shape());
    const auto grads = network.backward(trace, weights);

    std::vector<Probe> probes{{"input", &x, grads.input_grad}};
    const auto params = network.parameters();
    const auto gs = grads.tensors();
    for (std::size_t i = 0; i < params.size(); ++i)
      probes.push_back({"param" + std::to_string(i), params[i], *gs[i]});
    s.checks.push_back(compare(std::string("network ") + std::string(net::variant_name(v)) + " 16x16",
                               kEndToEndTolerance, [&] { return dot(network.forward(x), weights); }, probes, 4,
                               rng));
  }
  return s;
}

std::vector<SuiteResult> run(const std::string& module) {
  if (module == "ops") return {check_ops()};
  if (module == "losses") return {check_losses()};
  if (module == "networks") return {check_networks()};
  if (module == "all") return {check_ops(), check_losses(), check_networks()};
  throw std::invalid_argument("unknown gradcheck module '" + module + "' (expected all, ops, losses or networks)");
}

}  // namespace nst::gradcheck
