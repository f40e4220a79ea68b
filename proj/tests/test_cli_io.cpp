#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "nst/cli.hpp"
#include "nst/image_io.hpp"
#include "nst/network.hpp"

using namespace nst;
namespace fs = std::filesystem;

namespace {

// 2x2 8-bit grayscale PNG.
const unsigned char kGrayPng[] = {
    0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48, 0x44, 0x52, 0x00, 0x00,
    0x00, 0x02, 0x00, 0x00, 0x00, 0x02, 0x08, 0x00, 0x00, 0x00, 0x00, 0x57, 0xdd, 0x52, 0xf8, 0x00, 0x00, 0x00,
    0x0e, 0x49, 0x44, 0x41, 0x54, 0x78, 0x9c, 0x63, 0x10, 0x50, 0x60, 0x30, 0x70, 0x00, 0x00, 0x01, 0x76, 0x00,
    0xa1, 0xec, 0x30, 0x8a, 0xf4, 0x00, 0x00, 0x00, 0x00, 0x49, 0x45, 0x4e, 0x44, 0xae, 0x42, 0x60, 0x82};

struct Run {
  int code;
  std::string out, err;
};

Run invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = nst::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch() {
  const auto d = fs::temp_directory_path() / "nst_cli_test";
  fs::create_directories(d);
  return d;
}

const fs::path kData = NST_TEST_DATA_DIR;

}  // namespace

TEST_SUITE("cli-io") {

TEST_CASE("P6 2x2 parses") {
  std::string bytes = "P6\n2 2\n255\n";
  for (int i = 0; i < 12; ++i) bytes.push_back(static_cast<char>(i * 20));
  const auto img = io::decode_ppm(bytes);
  CHECK(img.pixels.shape() == Shape{1, 3, 2, 2});
  CHECK(img.pixels.at(0, 0, 0, 0) == 0.0f);
  CHECK(img.pixels.at(0, 1, 0, 0) == doctest::Approx(20.0 / 255));
  CHECK(img.pixels.at(0, 2, 1, 1) == doctest::Approx(220.0 / 255));
  CHECK(io::encode_ppm(img.pixels) == bytes);

  CHECK_THROWS_AS(io::decode_ppm("P3\n2 2\n255\n"), io::ImageError);
  CHECK_THROWS_AS(io::decode_ppm(bytes.substr(0, bytes.size() - 1)), io::ImageError);
}

TEST_CASE("save then load stays within one quantization step") {
  Rng rng(1);
  const auto px = uniform_init<float>(rng, {1, 3, 7, 5}, 0, 1);
  for (const char* name : {"img.ppm", "img.png"}) {
    const auto p = scratch() / name;
    io::save_image(px, p);
    const auto back = io::load_image(p).pixels;
    REQUIRE(back.shape() == px.shape());
    for (std::size_t i = 0; i < px.size(); ++i) CHECK(std::abs(back[i] - px[i]) <= 1.0f / 255 + 1e-7f);
  }
}

TEST_CASE("grayscale PNG is rejected") {
  const auto p = scratch() / "gray.png";
  {
    std::ofstream f(p, std::ios::binary);
    f.write(reinterpret_cast<const char*>(kGrayPng), sizeof kGrayPng);
  }
  CHECK_THROWS_WITH_AS(io::load_image(p), doctest::Contains("unsupported format"), io::ImageError);
}

TEST_CASE("usage errors exit 1") {
  CHECK(invoke({}).code == nst::cli::kExitUsage);
  CHECK(invoke({"frobnicate"}).code == nst::cli::kExitUsage);
  const auto r = invoke({"benchmark", "--bogus"});
  CHECK(r.code == nst::cli::kExitUsage);
  CHECK(r.err.find("--bogus") != std::string::npos);
  CHECK(invoke({"benchmark", "--format", "yaml"}).code == nst::cli::kExitUsage);
  CHECK(invoke({"stylize", "--weights", "w.nstw"}).code == nst::cli::kExitUsage);
}

TEST_CASE("runtime errors exit 2 and name the file") {
  const auto r = invoke({"stylize", "--weights", "/nonexistent/w.nstw", "--input", "a.ppm", "--output", "b.ppm"});
  CHECK(r.code == nst::cli::kExitRuntime);
  CHECK(r.err.find("/nonexistent/w.nstw") != std::string::npos);
}

TEST_CASE("benchmark --format csv prints four rows") {
  const auto r = invoke({"benchmark", "--format", "csv", "--size", "16", "--runs", "10", "--warmup", "0"});
  REQUIRE(r.code == nst::cli::kExitOk);
  std::istringstream in(r.out);
  std::vector<std::string> rows;
  for (std::string l; std::getline(in, l);)
    if (!l.empty()) rows.push_back(l);
  CHECK(rows.size() == 5);
}

TEST_CASE("train, stylize and optimize round trip") {
  const auto dir = scratch();
  const auto cfg = dir / "train.cfg";
  {
    std::ofstream f(cfg);
    f << "variant = depsep_nn\n"
      << "style = " << (kData / "style.ppm").string() << "\n"
      << "content_dir = " << (kData / "content").string() << "\n"
      << "iters = 5\n";
  }
  const auto weights = dir / "net.nstw";
  const auto csv = dir / "loss.csv";
  auto r = invoke({"train", "--config", cfg.string(), "--iters", "3", "--out-weights", weights.string(), "--loss-csv",
                csv.string()});
  REQUIRE_MESSAGE(r.code == nst::cli::kExitOk, r.err);
  CHECK(net::load_weights<float>(weights).spec().variant == net::Variant::DepSepNN);
  std::ifstream lc(csv);
  int lines = 0;
  for (std::string l; std::getline(lc, l);) ++lines;
  CHECK(lines == 4);  // header + the --iters override

  const auto input = dir / "in.ppm";
  Rng rng(2);
  io::save_image(uniform_init<float>(rng, {1, 3, 36, 44}, 0, 1), input);
  const auto output = dir / "out.png";
  r = invoke({"stylize", "--weights", weights.string(), "--input", input.string(), "--output", output.string()});
  REQUIRE_MESSAGE(r.code == nst::cli::kExitOk, r.err);
  CHECK(io::load_image(output).pixels.shape() == Shape{1, 3, 36, 44});

  const auto opt_out = dir / "gatys.ppm";
  r = invoke({"optimize", "--content", (kData / "content" / "c0.ppm").string(), "--style",
           (kData / "style.ppm").string(), "--output", opt_out.string(), "--steps", "3"});
  REQUIRE_MESSAGE(r.code == nst::cli::kExitOk, r.err);
  CHECK(io::load_image(opt_out).pixels.shape() == Shape{1, 3, 32, 32});
}

TEST_CASE("a bad config file is a runtime error naming the key") {
  const auto cfg = scratch() / "bad.cfg";
  {
    std::ofstream f(cfg);
    f << "alphaa = 1\n";
  }
  const auto r = invoke({"train", "--config", cfg.string(), "--out-weights", (scratch() / "x.nstw").string()});
  CHECK(r.code == nst::cli::kExitRuntime);
  CHECK(r.err.find("alphaa") != std::string::npos);
}

}  // TEST_SUITE
