#include "nst/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "nst/image_io.hpp"

namespace nst::optim {

template <class T>
AdamState<T> adam_init(const std::vector<Tensor<T>*>& params, AdamConfig config) {
  AdamState<T> s;
  s.config = config;
  for (const Tensor<T>* p : params) {
    s.m.push_back(zeros_like(*p));
    s.v.push_back(zeros_like(*p));
  }
  return s;
}

template <class T>
void adam_step(const std::vector<Tensor<T>*>& params, const std::vector<const Tensor<T>*>& grads,
               AdamState<T>& state) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw std::invalid_argument("adam_step: " + std::to_string(params.size()) + " params, " +
                                std::to_string(grads.size()) + " grads, " + std::to_string(state.m.size()) +
                                " moment slots");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i]->shape() || params[i]->shape() != state.m[i].shape())
      throw ShapeError("adam_step: tensor " + std::to_string(i) + " has param " + params[i]->shape().str() +
                       ", grad " + grads[i]->shape().str() + ", moments " + state.m[i].shape().str());
  }
  const AdamConfig& c = state.config;
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* p = params[i]->ptr();
    const T* g = grads[i]->ptr();
    T* m = state.m[i].ptr();
    T* v = state.v[i].ptr();
    for (std::size_t j = 0; j < params[i]->size(); ++j) {
      const double gj = g[j];
      const double mj = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
      const double vj = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double mhat = mj / bc1;
      const double vhat = vj / bc2;
      p[j] = static_cast<T>(p[j] - c.lr * mhat / (std::sqrt(vhat) + c.eps));
    }
  }
}

template <class T>
Evaluation<T> evaluate(const lossnet::FrozenExtractor<T>& extractor, const Tensor<T>& image_y,
                       const losses::FeatureTaps<T>& taps_n, const losses::FeatureTaps<T>& taps_s,
                       const Objective& objective) {
  const auto taps_y = extractor.extract(image_y);
  Evaluation<T> e{losses::total_loss(image_y, taps_y, taps_n, taps_s, objective.weights, objective.content_kind,
                                     objective.style_kind),
                  {}};
  e.image_grad = extractor.backprop_taps(image_y, taps_y, e.loss.tap_grads);
  axpy(T(1), e.loss.image_grad, e.image_grad);
  return e;
}

void write_loss_csv(std::ostream& out, const std::vector<LossRecord>& history) {
  out << "iteration,l_content,l_style,l_tv,l_total\n";
  const auto old_flags = out.flags();
  const auto old_prec = out.precision();
  out << std::setprecision(17);
  for (const auto& r : history)
    out << r.iteration << ',' << r.content << ',' << r.style << ',' << r.tv << ',' << r.total << '\n';
  out.flags(old_flags);
  out.precision(old_prec);
}

namespace {

template <class T>
LossRecord record_of(std::size_t it, const losses::TotalLoss<T>& l) {
  return {it, l.content, l.style, l.tv, l.total};
}

void check_finite(const LossRecord& r) {
  if (!std::isfinite(r.total) || !std::isfinite(r.content) || !std::isfinite(r.style) || !std::isfinite(r.tv))
    throw std::runtime_error("loss became non-finite at iteration " + std::to_string(r.iteration) +
                             "; try a lower learning rate");
}

}  // namespace

template <class T>
TrainResult<T> train(const std::vector<Tensor<T>>& content_images, const Tensor<T>& style_image,
                     const TrainOptions& options) {
  if (content_images.empty()) throw std::invalid_argument("train: content dataset is empty");
  const Shape shape = content_images.front().shape();
  for (std::size_t i = 0; i < content_images.size(); ++i)
    if (content_images[i].shape() != shape)
      throw ShapeError("train: content image " + std::to_string(i) + " has shape " +
                       content_images[i].shape().str() + ", expected " + shape.str());
  if (shape.n != 1) throw ShapeError("train: batch size is 1, got " + shape.str());
  options.objective.weights.validate();

  const lossnet::FrozenExtractor<T> extractor(options.extractor_seed);
  const std::uint64_t checksum_before = extractor.checksum();

  auto network = net::Network<T>::build(options.variant, options.seed);
  auto params = network.parameters();
  auto adam = adam_init(params, options.adam);

  const auto taps_s = extractor.extract(style_image);
  std::vector<losses::FeatureTaps<T>> taps_n;
  taps_n.reserve(content_images.size());
  for (const auto& img : content_images) taps_n.push_back(extractor.extract(img));

  std::vector<LossRecord> history;
  history.reserve(options.iterations);
  net::Trace<T> trace;
  for (std::size_t it = 0; it < options.iterations; ++it) {
    const std::size_t k = it % content_images.size();
    const Tensor<T> y = network.forward(content_images[k], trace);
    const auto eval = evaluate(extractor, y, taps_n[k], taps_s, options.objective);
    history.push_back(record_of(it, eval.loss));
    check_finite(history.back());
    const auto grads = network.backward(trace, eval.image_grad);
    adam_step(params, grads.tensors(), adam);
  }

  if (extractor.checksum() != checksum_before)
    throw std::logic_error("train: loss network weights changed during training");
  return {std::move(network), std::move(history)};
}

// --- config ----------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != value.size() || !std::isfinite(v))
    throw std::invalid_argument("config key '" + key + "': cannot parse '" + value + "' as a number");
  return v;
}

std::uint64_t parse_uint(const std::string& key, const std::string& value) {
  if (value.empty() || value.find_first_not_of("0123456789") != std::string::npos)
    throw std::invalid_argument("config key '" + key + "': cannot parse '" + value + "' as a non-negative integer");
  try {
    return std::stoull(value);
  } catch (const std::out_of_range&) {
    throw std::invalid_argument("config key '" + key + "': value '" + value + "' is out of range");
  }
}

}  // namespace

TrainConfig parse_config(std::istream& in, const std::string& source) {
  TrainConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw std::invalid_argument(where + ": expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "variant") {
        net::parse_variant(value);
        cfg.variant = value;
      } else if (key == "style") {
        cfg.style = value;
      } else if (key == "content_dir") {
        cfg.content_dir = value;
      } else if (key == "alpha") {
        cfg.weights.alpha = parse_double(key, value);
      } else if (key == "beta") {
        cfg.weights.beta = parse_double(key, value);
      } else if (key == "gamma") {
        cfg.weights.gamma = parse_double(key, value);
      } else if (key == "content_loss") {
        cfg.content_loss = losses::parse_distance(value);
      } else if (key == "style_loss") {
        cfg.style_loss = losses::parse_distance(value);
      } else if (key == "seed") {
        cfg.seed = parse_uint(key, value);
      } else if (key == "size") {
        cfg.size = parse_uint(key, value);
      } else if (key == "iters") {
        cfg.iters = parse_uint(key, value);
      } else {
        throw std::invalid_argument("unknown config key '" + key + "'");
      }
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(where + ": " + e.what());
    }
  }
  return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error(path.string() + ": cannot open config file");
  return parse_config(f, path.string());
}

TrainResult<float> train(const TrainConfig& config) {
  if (config.size == 0 || config.size % 4 != 0)
    throw std::invalid_argument("size must be a positive multiple of 4, got " + std::to_string(config.size));
  if (!std::filesystem::is_directory(config.content_dir))
    throw std::runtime_error(config.content_dir.string() + ": content directory not found");

  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(config.content_dir))
    if (entry.is_regular_file() && io::is_image_file(entry.path())) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error(config.content_dir.string() + ": no .ppm or .png images");

  const auto style = io::load_image(config.style).pixels;
  std::vector<Tensor<float>> content;
  for (const auto& f : files) {
    auto img = io::load_image(f).pixels;
    if (img.shape().h != config.size || img.shape().w != config.size)
      throw std::runtime_error(f.string() + ": image is " + std::to_string(img.shape().w) + "x" +
                               std::to_string(img.shape().h) + ", expected " + std::to_string(config.size) + "x" +
                               std::to_string(config.size));
    content.push_back(std::move(img));
  }

  TrainOptions opt;
  opt.variant = net::parse_variant(config.variant);
  opt.objective = {config.weights, config.content_loss, config.style_loss};
  opt.adam = config.adam;
  opt.iterations = config.iters;
  opt.seed = config.seed;
  return train(content, style, opt);
}

// --- image optimization ---------------------------------------------------------------

template <class T>
ImageResult<T> optimize_image(const Tensor<T>& content, const Tensor<T>& style, const ImageOptions& options) {
  if (content.shape() != style.shape())
    throw ShapeError("optimize_image: content " + content.shape().str() + " and style " + style.shape().str() +
                     " differ in size");
  options.objective.weights.validate();
  const lossnet::FrozenExtractor<T> extractor(options.extractor_seed);
  const auto taps_n = extractor.extract(content);
  const auto taps_s = extractor.extract(style);

  Tensor<T> y = content;
  if (options.init == ImageOptions::Init::Noise) {
    Rng rng(options.noise_seed);
    y = uniform_init<T>(rng, content.shape(), 0.0, 1.0);
  }

  std::vector<Tensor<T>*> params{&y};
  auto adam = adam_init(params, options.adam);
  ImageResult<T> result{y, {}, 0.0, 0.0};
  for (std::size_t step = 0;; ++step) {
    const auto eval = evaluate(extractor, y, taps_n, taps_s, options.objective);
    result.history.push_back(record_of(step, eval.loss));
    check_finite(result.history.back());
    if (step == 0) {
      result.initial_loss = result.best_loss = eval.loss.total;
    } else if (eval.loss.total < result.best_loss) {
      result.best_loss = eval.loss.total;
      result.image = y;
    }
    if (step == options.steps) break;
    adam_step(params, {&eval.image_grad}, adam);
    for (T& v : y.data()) v = std::clamp(v, T(0), T(1));
  }
  return result;
}

#define NST_OPTIM_INSTANTIATE(T)                                                                            \
  template AdamState<T> adam_init<T>(const std::vector<Tensor<T>*>&, AdamConfig);                          \
  template void adam_step<T>(const std::vector<Tensor<T>*>&, const std::vector<const Tensor<T>*>&,         \
                             AdamState<T>&);                                                               \
  template Evaluation<T> evaluate<T>(const lossnet::FrozenExtractor<T>&, const Tensor<T>&,                 \
                                     const losses::FeatureTaps<T>&, const losses::FeatureTaps<T>&,          \
                                     const Objective&);                                                    \
  template TrainResult<T> train<T>(const std::vector<Tensor<T>>&, const Tensor<T>&, const TrainOptions&); \
  template ImageResult<T> optimize_image<T>(const Tensor<T>&, const Tensor<T>&, const ImageOptions&);

NST_OPTIM_INSTANTIATE(float)
NST_OPTIM_INSTANTIATE(double)

}  // namespace nst::optim
