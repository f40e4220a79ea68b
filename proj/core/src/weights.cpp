#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "nst/network.hpp"

namespace nst::net {

static_assert(std::endian::native == std::endian::little, "weights I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'N', 'S', 'T', 'W'};

template <class U>
void put(std::string& buf, U v) {
  char bytes[sizeof(U)];
  std::memcpy(bytes, &v, sizeof(U));
  buf.append(bytes, sizeof(U));
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::filesystem::path& path) : bytes_(bytes), path_(path) {}

  template <class U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }

  void read_floats(float* dst, std::size_t count, const char* what) {
    need(count * sizeof(float), what);
    std::memcpy(dst, bytes_.data() + pos_, count * sizeof(float));
    pos_ += count * sizeof(float);
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n)
      throw FormatError(path_.string() + ": truncated file while reading " + what + " at byte " +
                        std::to_string(pos_));
  }

  const std::string& bytes_;
  const std::filesystem::path& path_;
  std::size_t pos_ = 0;
};

template <class T>
std::vector<WeightRecord> records_of(const Network<T>& net) {
  std::vector<WeightRecord> out;
  for (const auto& layer : net.layers()) {
    for_each_tensor(layer.params, [&](const Tensor<T>& t) {
      WeightRecord r{layer.spec.kind, t.shape(), {}};
      r.data.reserve(t.size());
      for (T v : t.data()) r.data.push_back(static_cast<float>(v));
      out.push_back(std::move(r));
    });
  }
  return out;
}

template <class T>
bool signature_matches(const Network<T>& net, const std::vector<WeightRecord>& records) {
  std::size_t i = 0;
  bool ok = true;
  for (const auto& layer : net.layers()) {
    for_each_tensor(layer.params, [&](const Tensor<T>& t) {
      if (!ok) return;
      if (i >= records.size() || records[i].kind != layer.spec.kind || records[i].shape != t.shape()) ok = false;
      ++i;
    });
  }
  return ok && i == records.size();
}

}  // namespace

void write_weight_records(const std::filesystem::path& path, const std::vector<WeightRecord>& records) {
  if (records.size() > 0xFFFF) throw FormatError("weights file cannot hold more than 65535 records");
  std::string buf(kMagic, 4);
  put<std::uint16_t>(buf, kWeightsVersion);
  put<std::uint16_t>(buf, static_cast<std::uint16_t>(records.size()));
  for (const auto& r : records) {
    if (r.data.size() != r.shape.numel()) throw FormatError("weight record data does not match its shape");
    put<std::uint8_t>(buf, static_cast<std::uint8_t>(r.kind));
    for (std::size_t d : {r.shape.n, r.shape.c, r.shape.h, r.shape.w}) {
      if (d > 0xFFFFFFFFu) throw FormatError("weight record dimension exceeds u32");
      put<std::uint32_t>(buf, static_cast<std::uint32_t>(d));
    }
    buf.append(reinterpret_cast<const char*>(r.data.data()), r.data.size() * sizeof(float));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error(path.string() + ": cannot open for writing");
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw std::runtime_error(path.string() + ": write failed");
}

std::vector<WeightRecord> read_weight_records(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(path.string() + ": cannot open weights file");
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Reader in(bytes, path);
  char magic[4];
  for (char& c : magic) c = in.get<char>("magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError(path.string() + ": bad magic, not an NSTW weights file");
  const auto version = in.get<std::uint16_t>("version");
  if (version != kWeightsVersion)
    throw FormatError(path.string() + ": unsupported weights version " + std::to_string(version) + " (expected " +
                      std::to_string(kWeightsVersion) + ")");
  const auto count = in.get<std::uint16_t>("record count");

  std::vector<WeightRecord> records;
  records.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto kind = in.get<std::uint8_t>("record kind");
    if (kind < 1 || kind > 10)
      throw FormatError(path.string() + ": record " + std::to_string(i) + " has unknown layer kind " +
                        std::to_string(kind));
    std::uint32_t dims[4];
    for (auto& d : dims) d = in.get<std::uint32_t>("record shape");
    const Shape shape{dims[0], dims[1], dims[2], dims[3]};
    std::size_t numel = 0;
    try {
      numel = shape.numel();
    } catch (const ShapeError&) {
      throw FormatError(path.string() + ": record " + std::to_string(i) + " has invalid shape " + shape.str());
    }
    WeightRecord r{static_cast<LayerKind>(kind), shape, std::vector<float>(numel)};
    in.read_floats(r.data.data(), numel, "record data");
    records.push_back(std::move(r));
  }
  if (!in.done()) throw FormatError(path.string() + ": trailing bytes after the last record");
  return records;
}

template <class T>
void save_weights(const Network<T>& net, const std::filesystem::path& path) {
  write_weight_records(path, records_of(net));
}

template <class T>
Network<T> load_weights(const std::filesystem::path& path) {
  const auto records = read_weight_records(path);
  for (Variant v : kVariants) {
    auto net = Network<T>::build(v, 0);
    if (!signature_matches(net, records)) continue;
    std::size_t i = 0;
    for (Tensor<T>* t : net.parameters()) {
      const auto& src = records[i++].data;
      for (std::size_t j = 0; j < src.size(); ++j) (*t)[j] = static_cast<T>(src[j]);
    }
    return net;
  }
  throw FormatError(path.string() + ": record kinds and shapes do not match any network variant");
}

template void save_weights<float>(const Network<float>&, const std::filesystem::path&);
template void save_weights<double>(const Network<double>&, const std::filesystem::path&);
template Network<float> load_weights<float>(const std::filesystem::path&);
template Network<double> load_weights<double>(const std::filesystem::path&);

}  // namespace nst::net
