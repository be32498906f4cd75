#include "dsinit/datasets.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <string>

#include "dsinit/errors.hpp"

namespace dsinit::data {

namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string(), 0);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset, const fs::path& path) {
  if (offset + 4 > bytes.size()) throw FormatError(path.string() + ": truncated header", bytes.size());
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

std::uint8_t to_byte(double v) {
  const double clamped = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(clamped * 255.0));
}

constexpr std::size_t kCifarRecord = 3073;
constexpr std::size_t kCifarPixels = 3072;

}  // namespace

void Dataset::validate() const {
  if (images.empty()) throw InvalidArgument("dataset is empty");
  if (images.size() != labels.size()) {
    throw InvalidArgument("dataset has " + std::to_string(images.size()) + " images but " +
                          std::to_string(labels.size()) + " labels");
  }
  if (class_count == 0) throw InvalidArgument("dataset class_count must be positive");
  const Shape& shape = images.front().shape();
  if (shape.size() != 3) throw InvalidArgument("dataset images must be c×H×W");
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != shape) {
      throw InvalidArgument("image " + std::to_string(i) + " has shape " + shape_to_string(images[i].shape()) +
                            ", expected " + shape_to_string(shape));
    }
    if (labels[i] >= class_count) {
      throw InvalidArgument("label " + std::to_string(labels[i]) + " of sample " + std::to_string(i) +
                            " is outside [0, " + std::to_string(class_count) + ")");
    }
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.class_count = class_count;
  out.images.reserve(indices.size());
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    out.images.push_back(images.at(i));
    out.labels.push_back(labels.at(i));
  }
  return out;
}

Dataset load_mnist_idx(const fs::path& images_path, const fs::path& labels_path) {
  const auto image_bytes = read_bytes(images_path);
  const auto label_bytes = read_bytes(labels_path);

  if (read_be32(image_bytes, 0, images_path) != 2051) {
    throw FormatError(images_path.string() + ": bad IDX image magic (expected 2051)", 0);
  }
  if (read_be32(label_bytes, 0, labels_path) != 2049) {
    throw FormatError(labels_path.string() + ": bad IDX label magic (expected 2049)", 0);
  }
  const std::size_t count = read_be32(image_bytes, 4, images_path);
  const std::size_t rows = read_be32(image_bytes, 8, images_path);
  const std::size_t cols = read_be32(image_bytes, 12, images_path);
  const std::size_t label_count = read_be32(label_bytes, 4, labels_path);
  if (count != label_count) {
    throw FormatError(labels_path.string() + ": label count " + std::to_string(label_count) +
                          " does not match image count " + std::to_string(count),
                      4);
  }
  if (count == 0 || rows == 0 || cols == 0) throw FormatError(images_path.string() + ": empty IDX payload", 4);
  const std::size_t pixels = rows * cols;
  if (image_bytes.size() < 16 + count * pixels) {
    throw FormatError(images_path.string() + ": truncated image payload", image_bytes.size());
  }
  if (label_bytes.size() < 8 + count) {
    throw FormatError(labels_path.string() + ": truncated label payload", label_bytes.size());
  }

  Dataset out;
  out.class_count = 10;
  out.images.reserve(count);
  out.labels.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint8_t label = label_bytes[8 + i];
    if (label > 9) throw FormatError(labels_path.string() + ": label out of range", 8 + i);
    std::vector<double> data(pixels);
    const std::uint8_t* src = image_bytes.data() + 16 + i * pixels;
    for (std::size_t p = 0; p < pixels; ++p) data[p] = src[p] / 255.0;
    out.images.emplace_back(Shape{1, rows, cols}, std::move(data));
    out.labels.push_back(label);
  }
  return out;
}

Dataset decode_cifar10(std::span<const std::uint8_t> bytes) {
  if (bytes.empty() || bytes.size() % kCifarRecord != 0) {
    throw FormatError("CIFAR-10 batch length " + std::to_string(bytes.size()) + " is not a multiple of 3073",
                      bytes.size() - bytes.size() % kCifarRecord);
  }
  const std::size_t count = bytes.size() / kCifarRecord;
  Dataset out;
  out.class_count = 10;
  out.images.reserve(count);
  out.labels.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint8_t* record = bytes.data() + i * kCifarRecord;
    if (record[0] > 9) throw FormatError("CIFAR-10 label out of range", i * kCifarRecord);
    std::vector<double> data(kCifarPixels);
    for (std::size_t p = 0; p < kCifarPixels; ++p) data[p] = record[1 + p] / 255.0;
    out.images.emplace_back(Shape{3, 32, 32}, std::move(data));
    out.labels.push_back(record[0]);
  }
  return out;
}

Dataset load_cifar10(std::span<const fs::path> batch_paths) {
  if (batch_paths.empty()) throw InvalidArgument("load_cifar10: no batch files given");
  Dataset out;
  out.class_count = 10;
  for (const auto& path : batch_paths) {
    const auto bytes = read_bytes(path);
    Dataset batch;
    try {
      batch = decode_cifar10(bytes);
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ": " + e.what(), e.offset());
    }
    std::move(batch.images.begin(), batch.images.end(), std::back_inserter(out.images));
    out.labels.insert(out.labels.end(), batch.labels.begin(), batch.labels.end());
  }
  return out;
}

std::vector<std::uint8_t> encode_cifar10(const Dataset& dataset) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(dataset.size() * kCifarRecord);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const Tensor& image = dataset.images[i];
    if (image.shape() != Shape{3, 32, 32}) throw InvalidArgument("encode_cifar10: images must be 3×32×32");
    if (dataset.labels[i] > 255) throw InvalidArgument("encode_cifar10: label does not fit in a byte");
    bytes.push_back(static_cast<std::uint8_t>(dataset.labels[i]));
    for (double v : image.data()) bytes.push_back(to_byte(v));
  }
  return bytes;
}

Tensor read_pgm(const fs::path& path) {
  const auto bytes = read_bytes(path);
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&] {
    skip_space();
    const std::size_t start = pos;
    std::size_t value = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) value = value * 10 + (bytes[pos++] - '0');
    if (pos == start) throw FormatError(path.string() + ": expected an integer in PGM header", start);
    return value;
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') {
    throw FormatError(path.string() + ": not a binary PGM (P5)", 0);
  }
  pos = 2;
  const std::size_t width = read_uint();
  const std::size_t height = read_uint();
  const std::size_t maxval = read_uint();
  if (maxval != 255) throw FormatError(path.string() + ": only maxval 255 is supported", pos);
  if (width == 0 || height == 0) throw FormatError(path.string() + ": empty image", pos);
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError(path.string() + ": malformed header", pos);
  ++pos;
  if (bytes.size() - pos < width * height) throw FormatError(path.string() + ": truncated pixel data", bytes.size());

  std::vector<double> data(width * height);
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = bytes[pos + i] / 255.0;
  return Tensor(Shape{1, height, width}, std::move(data));
}

void write_pgm(const fs::path& path, const Tensor& image) {
  std::size_t height = 0;
  std::size_t width = 0;
  if (image.rank() == 2) {
    height = image.dim(0);
    width = image.dim(1);
  } else if (image.rank() == 3 && image.dim(0) == 1) {
    height = image.dim(1);
    width = image.dim(2);
  } else {
    throw InvalidArgument("write_pgm: expected H×W or 1×H×W, got " + shape_to_string(image.shape()));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("write_pgm: cannot open " + path.string());
  out << "P5\n" << width << ' ' << height << "\n255\n";
  for (double v : image.data()) out.put(static_cast<char>(to_byte(v)));
  if (!out) throw InvalidArgument("write_pgm: write failed for " + path.string());
}

Dataset load_pgm_directory(const fs::path& root) {
  if (!fs::is_directory(root)) throw FormatError(root.string() + ": not a directory", 0);
  std::map<std::size_t, std::vector<fs::path>> by_label;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    const std::string name = entry.path().filename().string();
    if (name.empty() || !std::all_of(name.begin(), name.end(), [](unsigned char c) { return std::isdigit(c); })) {
      continue;
    }
    auto& files = by_label[std::stoul(name)];
    for (const auto& file : fs::directory_iterator(entry.path())) {
      if (file.is_regular_file() && file.path().extension() == ".pgm") files.push_back(file.path());
    }
    std::sort(files.begin(), files.end());
  }
  Dataset out;
  for (const auto& [label, files] : by_label) {
    for (const auto& file : files) {
      out.images.push_back(read_pgm(file));
      out.labels.push_back(label);
    }
    out.class_count = std::max(out.class_count, label + 1);
  }
  if (out.images.empty()) throw FormatError(root.string() + ": no PGM images found under numeric label dirs", 0);
  out.validate();
  return out;
}

Tensor default_signal_patch(std::size_t side) {
  if (side == 0) throw InvalidArgument("default_signal_patch: side must be positive");
  Tensor patch(Shape{1, side, side});
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t c = 0; c < side; ++c) {
      double v = r <= c ? 0.9 : 0.3;  // oriented edge along the diagonal
      if (r == side / 2) v = 1.0;     // horizontal bar
      patch.at(0, r, c) = v;
    }
  }
  return patch;
}

SyntheticDataset synthetic_dataset(const SyntheticSpec& spec, Rng& rng) {
  const Tensor& patch = spec.signal_patch;
  if (patch.rank() != 3 || patch.dim(0) != 1 || patch.dim(1) != patch.dim(2)) {
    throw InvalidArgument("synthetic_dataset: signal patch must be 1×p×p");
  }
  const std::size_t p = patch.dim(1);
  if (p > spec.image_side) throw InvalidArgument("synthetic_dataset: patch larger than the image");
  if (!(spec.noise_std >= 0.0)) throw InvalidArgument("synthetic_dataset: noise_std must be non-negative");
  if (spec.classes != 2) throw InvalidArgument("synthetic_dataset: exactly 2 classes are supported");
  if (spec.samples_per_class == 0) throw InvalidArgument("synthetic_dataset: samples_per_class must be positive");

  const std::size_t side = spec.image_side;
  const std::size_t base = (side - p) / 2;
  const std::size_t max_offset = side - p;
  auto jittered = [&] {
    const std::size_t span = 2 * spec.patch_jitter + 1;
    const auto shift = static_cast<long long>(rng.index(span)) - static_cast<long long>(spec.patch_jitter);
    return static_cast<std::size_t>(std::clamp<long long>(static_cast<long long>(base) + shift, 0,
                                                          static_cast<long long>(max_offset)));
  };

  SyntheticDataset out;
  out.dataset.class_count = 2;
  const std::size_t total = 2 * spec.samples_per_class;
  for (std::size_t s = 0; s < total; ++s) {
    const std::size_t label = s % 2;
    Tensor image(Shape{1, side, side});
    for (double& v : image.data()) v = std::clamp(spec.noise_std * rng.normal(), 0.0, 1.0);
    std::optional<PatchOffset> offset;
    if (label == 1) {
      const std::size_t row = jittered();
      const std::size_t col = jittered();
      for (std::size_t r = 0; r < p; ++r) {
        for (std::size_t c = 0; c < p; ++c) image.at(0, row + r, col + c) = patch.at(0, r, c);
      }
      offset = PatchOffset{row, col};
    }
    out.dataset.images.push_back(std::move(image));
    out.dataset.labels.push_back(label);
    out.patch_offsets.push_back(offset);
  }
  return out;
}

Split split(const Dataset& dataset, double train_fraction, Rng& rng) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw InvalidArgument("split: train_fraction must lie in (0, 1)");
  }
  const std::size_t n = dataset.size();
  const auto train_count = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  if (train_count == 0 || train_count >= n) {
    throw InvalidArgument("split: fraction " + std::to_string(train_fraction) + " of " + std::to_string(n) +
                          " samples leaves one side empty");
  }
  const std::vector<std::size_t> order = rng.permutation(n);
  Split out;
  out.train_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(train_count));
  out.val_indices.assign(order.begin() + static_cast<std::ptrdiff_t>(train_count), order.end());
  out.train = dataset.subset(out.train_indices);
  out.val = dataset.subset(out.val_indices);
  return out;
}

std::vector<std::vector<std::size_t>> minibatches(std::size_t sample_count, std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw InvalidArgument("minibatches: batch_size must be at least 1");
  const std::vector<std::size_t> order = rng.permutation(sample_count);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < sample_count; start += batch_size) {
    const std::size_t end = std::min(sample_count, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

Tensor mean_image(const Dataset& dataset) {
  dataset.validate();
  Tensor mean(dataset.image_shape());
  for (const Tensor& image : dataset.images) {
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += image[i];
  }
  const double inv = 1.0 / static_cast<double>(dataset.size());
  for (double& v : mean.data()) v *= inv;
  return mean;
}

void subtract_image(Dataset& dataset, const Tensor& image) {
  for (Tensor& x : dataset.images) {
    if (x.shape() != image.shape()) throw InvalidArgument("subtract_image: shape mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) x[i] -= image[i];
  }
}

}  // namespace dsinit::data
