#include "dsinit/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>

#include "dsinit/errors.hpp"

namespace dsinit::nn {

namespace {

constexpr char kMagic[4] = {'D', 'S', 'I', 'N'};

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }

  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("DSIN: truncated ") + what, pos_);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64(const char* what) {
    need(8, what);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= std::uint64_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(bits);
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_model(const Network& network) {
  Writer w;
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u32(kModelVersion);
  const NetworkSpec& spec = network.spec();
  w.u32(static_cast<std::uint32_t>(spec.input_shape().size()));
  for (auto d : spec.input_shape()) w.u32(static_cast<std::uint32_t>(d));
  w.u32(static_cast<std::uint32_t>(spec.layers().size()));
  for (std::size_t i = 0; i < spec.layers().size(); ++i) {
    const LayerSpec& layer = spec.layers()[i];
    w.u8(static_cast<std::uint8_t>(layer.kind));
    if (!layer.is_affine()) {
      w.u32(0);
      continue;
    }
    const Parameters& p = network.params(i);
    w.u32(static_cast<std::uint32_t>(p.weight.rank()));
    for (auto d : p.weight.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : p.weight.data()) w.f64(v);
    for (double v : p.bias.data()) w.f64(v);
  }
  return w.take();
}

Network decode_model(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("DSIN: bad magic", 0);
  for (int i = 0; i < 4; ++i) r.u8("magic");
  const std::size_t version_offset = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != kModelVersion) {
    throw UnsupportedVersion("DSIN: unsupported version " + std::to_string(version), version_offset);
  }

  const std::uint32_t rank = r.u32("input rank");
  if (rank != 3) throw FormatError("DSIN: input rank must be 3", r.offset() - 4);
  Shape input_shape;
  for (std::uint32_t i = 0; i < rank; ++i) input_shape.push_back(r.u32("input shape"));

  const std::uint32_t layer_count = r.u32("layer count");
  std::vector<LayerSpec> layers;
  std::vector<Parameters> params;
  for (std::uint32_t li = 0; li < layer_count; ++li) {
    const std::size_t kind_offset = r.offset();
    const std::uint8_t tag = r.u8("layer kind");
    if (tag > static_cast<std::uint8_t>(LayerKind::flatten)) throw FormatError("DSIN: unknown layer kind", kind_offset);
    const auto kind = static_cast<LayerKind>(tag);
    const std::size_t dims_offset = r.offset();
    const std::uint32_t dim_count = r.u32("dimension count");
    Shape dims;
    for (std::uint32_t d = 0; d < dim_count; ++d) dims.push_back(r.u32("dimensions"));

    LayerSpec layer{kind};
    if (kind == LayerKind::conv2d) {
      if (dims.size() != 4 || dims[2] != dims[3]) throw FormatError("DSIN: conv weight must be n×c×m×m", dims_offset);
      layer = LayerSpec::conv2d(dims[0], dims[2], dims[1]);
    } else if (kind == LayerKind::dense) {
      if (dims.size() != 2) throw FormatError("DSIN: dense weight must be out×in", dims_offset);
      layer = LayerSpec::dense(dims[0], dims[1]);
    } else if (!dims.empty()) {
      throw FormatError("DSIN: parameter-free layer carries dimensions", dims_offset);
    }

    Parameters p;
    if (layer.is_affine()) {
      for (auto d : dims) {
        if (d == 0) throw FormatError("DSIN: zero dimension", dims_offset);
      }
      const std::size_t wn = shape_size(dims);
      r.need(8 * (wn + dims[0]), "weight payload");
      std::vector<double> w(wn), b(dims[0]);
      for (double& v : w) v = r.f64("weights");
      for (double& v : b) v = r.f64("biases");
      p = {Tensor(dims, std::move(w)), Tensor(Shape{dims[0]}, std::move(b))};
    }
    layers.push_back(layer);
    params.push_back(std::move(p));
  }
  if (!r.at_end()) throw FormatError("DSIN: trailing bytes after last layer", r.offset());
  if (layers.empty() || layers.back().kind != LayerKind::dense) {
    throw FormatError("DSIN: model must end with a dense layer", r.offset());
  }

  const std::size_t classes = layers.back().fan_out;
  std::optional<Network> decoded;
  try {
    decoded.emplace(NetworkSpec(std::move(layers), std::move(input_shape), classes));
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("DSIN: inconsistent architecture: ") + e.what(), r.offset());
  }
  Network& net = *decoded;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (net.spec().layers()[i].is_affine()) net.params(i) = std::move(params[i]);
  }
  return std::move(net);
}

void save_model(const Network& network, const std::filesystem::path& path) {
  const auto bytes = encode_model(network);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("save_model: cannot open " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InvalidArgument("save_model: write failed for " + path.string());
}

Network load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("load_model: cannot open " + path.string(), 0);
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_model(bytes);
}

}  // namespace dsinit::nn
