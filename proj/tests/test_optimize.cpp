#include <doctest.h>

#include <sstream>

#include "nst/optimize.hpp"
#include "oracles.hpp"

using namespace nst;
using namespace nst::optim;

namespace {

std::vector<Tensor<float>> tiny_dataset(std::size_t count, std::size_t side, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor<float>> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(uniform_init<float>(rng, {1, 3, side, side}, 0, 1));
  return out;
}

}  // namespace

TEST_SUITE("optimize") {

TEST_CASE("adam: zero gradient keeps params fixed") {
  Rng rng(1);
  auto p = uniform_init<double>(rng, {1, 2, 3, 3}, -1, 1);
  const auto p0 = p;
  const auto g = zeros_like(p);
  auto st = adam_init<double>({&p});
  for (int i = 0; i < 20; ++i) adam_step<double>({&p}, {&g}, st);
  CHECK(p == p0);
}

TEST_CASE("adam: lr 0 is the identity") {
  Rng rng(2);
  auto p = uniform_init<double>(rng, {1, 1, 4, 4}, -1, 1);
  const auto p0 = p;
  const auto g = uniform_init<double>(rng, p.shape(), -1, 1);
  auto st = adam_init<double>({&p}, AdamConfig{0.0, 0.999, 0.99, 1e-8});
  for (int i = 0; i < 5; ++i) adam_step<double>({&p}, {&g}, st);
  CHECK(p == p0);
}

TEST_CASE("adam: first step closed form") {
  // m1 = (1-b1) g, v1 = (1-b2) g^2; bias correction gives m_hat = g, v_hat = g^2,
  // so the step is -lr * g / (|g| + eps) = -lr / (1 + eps) for g = 1.
  Tensor<double> p({1, 1, 1, 1}, {0.0});
  const Tensor<double> g({1, 1, 1, 1}, {1.0});
  auto st = adam_init<double>({&p});
  adam_step<double>({&p}, {&g}, st);
  CHECK(p[0] == doctest::Approx(-1e-3 / (1 + 1e-8)).epsilon(1e-12));
  CHECK(st.t == 1);
}

TEST_CASE("adam: constant gradient moves by lr per step") {
  Tensor<double> p({1, 1, 1, 1}, {0.0});
  const Tensor<double> g({1, 1, 1, 1}, {-3.0});
  auto st = adam_init<double>({&p});
  double prev = 0;
  for (int i = 0; i < 200; ++i) {
    adam_step<double>({&p}, {&g}, st);
    CHECK(p[0] - prev == doctest::Approx(1e-3 * 3 / (3 + 1e-8)).epsilon(1e-9));
    prev = p[0];
  }
}

TEST_CASE("adam: mismatched gradients are rejected") {
  auto p = zeros<double>({1, 1, 2, 2});
  const auto g = zeros<double>({1, 1, 2, 3});
  auto st = adam_init<double>({&p});
  CHECK_THROWS_AS(adam_step<double>({&p}, {&g}, st), ShapeError);
  CHECK_THROWS(adam_step<double>({&p}, {}, st));
}

TEST_CASE("config parsing") {
  std::istringstream empty("");
  const auto d = parse_config(empty);
  CHECK(d.weights.alpha == 7.5);
  CHECK(d.weights.beta == 100.0);
  CHECK(d.weights.gamma == 200.0);
  CHECK(d.variant == "johnson");

  std::istringstream zero("alpha = 0\n");
  CHECK(parse_config(zero).weights.alpha == 0.0);

  std::istringstream full(
      "# comment\n"
      "variant = depsep_nn\n"
      "style = s.png\n"
      "content_dir = imgs\n"
      "beta = 10   # trailing\n"
      "gamma = 1e2\n"
      "content_loss = char\n"
      "style_loss = mse\n"
      "seed = 9\n"
      "size = 64\n"
      "iters = 3\n");
  const auto c = parse_config(full);
  CHECK(c.variant == "depsep_nn");
  CHECK(c.style == "s.png");
  CHECK(c.content_dir == "imgs");
  CHECK(c.weights.beta == 10.0);
  CHECK(c.weights.gamma == 100.0);
  CHECK(c.content_loss.kind == losses::Distance::Kind::Charbonnier);
  CHECK(c.seed == 9);
  CHECK(c.size == 64);
  CHECK(c.iters == 3);

  std::istringstream typo("alphaa = 1\n");
  CHECK_THROWS_WITH(parse_config(typo, "cfg.txt"), doctest::Contains("alphaa"));
  std::istringstream junk("beta = lots\n");
  CHECK_THROWS_WITH(parse_config(junk, "cfg.txt"), doctest::Contains("beta"));
  std::istringstream noeq("gamma 3\n");
  CHECK_THROWS_WITH(parse_config(noeq, "cfg.txt"), doctest::Contains("cfg.txt:1"));
}

TEST_CASE("loss csv") {
  std::ostringstream out;
  write_loss_csv(out, {{0, 1, 2, 3, 4}, {1, 0.5, 0.25, 0.125, 1}});
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "iteration,l_content,l_style,l_tv,l_total");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 2);
}

TEST_CASE("training with only the TV term reports gamma * tv of the output") {
  const auto data = tiny_dataset(2, 32, 3);
  TrainOptions opt;
  opt.variant = net::Variant::DepSepNN;
  opt.objective.weights.alpha = 0;
  opt.objective.weights.beta = 0;
  opt.iterations = 4;
  const auto r = train(data, data[0], opt);
  REQUIRE(r.history.size() == 4);
  for (const auto& rec : r.history) CHECK(rec.total == doctest::Approx(200.0 * rec.tv).epsilon(1e-12));

  const auto fresh = net::Network<float>::build(opt.variant, opt.seed);
  CHECK(r.history[0].tv == doctest::Approx(losses::tv_loss(fresh.forward(data[0])).value).epsilon(1e-9));
}

TEST_CASE("training is deterministic for a fixed seed") {
  const auto data = tiny_dataset(3, 32, 4);
  TrainOptions opt;
  opt.variant = net::Variant::DepSepUpsamp;
  opt.iterations = 5;
  const auto a = train(data, data[1], opt);
  const auto b = train(data, data[1], opt);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) CHECK(a.history[i].total == b.history[i].total);
  const auto pa = a.network.parameters(), pb = b.network.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(*pa[i] == *pb[i]);
}

TEST_CASE("training input validation") {
  TrainOptions opt;
  CHECK_THROWS(train<float>({}, zeros<float>({1, 3, 32, 32}), opt));
  auto mixed = tiny_dataset(2, 32, 5);
  mixed.push_back(zeros<float>({1, 3, 36, 36}));
  CHECK_THROWS_AS(train(mixed, mixed[0], opt), ShapeError);
}

TEST_CASE("optimize_image with zero steps returns the initialization") {
  Rng rng(6);
  const auto c = uniform_init<float>(rng, {1, 3, 32, 32}, 0, 1);
  const auto s = uniform_init<float>(rng, {1, 3, 32, 32}, 0, 1);
  ImageOptions o;
  o.steps = 0;
  CHECK(optimize_image(c, s, o).image == c);
  CHECK_THROWS_AS(optimize_image(c, zeros<float>({1, 3, 32, 36}), o), ShapeError);
}

TEST_CASE("pure TV objective descends monotonically") {
  Rng rng(7);
  const auto c = uniform_init<double>(rng, {1, 3, 32, 32}, 0, 1);
  ImageOptions o;
  o.objective.weights.alpha = 0;
  o.objective.weights.beta = 0;
  o.objective.weights.gamma = 1;
  o.steps = 50;
  o.adam.lr = 1e-3;
  const auto r = optimize_image(c, c, o);
  REQUIRE(r.history.size() == 51);
  for (std::size_t i = 1; i < r.history.size(); ++i) CHECK(r.history[i].tv < r.history[i - 1].tv);
}

}  // TEST_SUITE
