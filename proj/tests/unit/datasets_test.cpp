#include "dsinit/datasets.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>

#include "dsinit/errors.hpp"
#include "test_util.hpp"

namespace dsinit::data {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / name) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::uint8_t> read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

std::vector<std::uint8_t> idx_images(std::uint32_t count, std::uint32_t rows, std::uint32_t cols,
                                     const std::vector<std::uint8_t>& pixels) {
  std::vector<std::uint8_t> b;
  put_be32(b, 2051);
  put_be32(b, count);
  put_be32(b, rows);
  put_be32(b, cols);
  b.insert(b.end(), pixels.begin(), pixels.end());
  return b;
}

std::vector<std::uint8_t> idx_labels(const std::vector<std::uint8_t>& labels, std::uint32_t count) {
  std::vector<std::uint8_t> b;
  put_be32(b, 2049);
  put_be32(b, count);
  b.insert(b.end(), labels.begin(), labels.end());
  return b;
}

// --- MNIST IDX -----------------------------------------------------------------

const fs::path kImages = fs::path(DSINIT_TEST_DATA_DIR) / "mnist-subset-images-idx3-ubyte";
const fs::path kLabels = fs::path(DSINIT_TEST_DATA_DIR) / "mnist-subset-labels-idx1-ubyte";

TEST(Mnist, BundledSubsetShapeAndFirstLabel) {
  const Dataset ds = load_mnist_idx(kImages, kLabels);
  ASSERT_GT(ds.size(), 0u);
  EXPECT_EQ(ds.image_shape(), (Shape{1, 28, 28}));
  EXPECT_EQ(ds.class_count, 10u);
  const auto label_bytes = read_all(kLabels);
  const auto image_bytes = read_all(kImages);
  EXPECT_EQ(ds.labels[0], label_bytes[8]);
  EXPECT_EQ(ds.size(), label_bytes.size() - 8);
  for (std::size_t p = 0; p < 784; ++p) EXPECT_DOUBLE_EQ(ds.images[0][p], image_bytes[16 + p] / 255.0);
  EXPECT_NO_THROW(ds.validate());
}

TEST(Mnist, PixelScaling) {
  TempDir dir("dsinit_mnist_scaling");
  write_bytes(dir.path() / "img", idx_images(1, 2, 2, {0, 255, 51, 102}));
  write_bytes(dir.path() / "lbl", idx_labels({7}, 1));
  const Dataset ds = load_mnist_idx(dir.path() / "img", dir.path() / "lbl");
  EXPECT_EQ(ds.images[0].values(), (std::vector<double>{0.0, 1.0, 0.2, 0.4}));
  EXPECT_EQ(ds.labels[0], 7u);
}

TEST(Mnist, Errors) {
  TempDir dir("dsinit_mnist_errors");
  auto expect_offset = [&](const std::vector<std::uint8_t>& img, const std::vector<std::uint8_t>& lbl,
                           std::uint64_t offset) {
    write_bytes(dir.path() / "img", img);
    write_bytes(dir.path() / "lbl", lbl);
    try {
      load_mnist_idx(dir.path() / "img", dir.path() / "lbl");
      ADD_FAILURE() << "accepted malformed input";
    } catch (const FormatError& e) {
      EXPECT_EQ(e.offset(), offset) << e.what();
    }
  };
  auto bad_magic = idx_images(1, 2, 2, {0, 0, 0, 0});
  bad_magic[3] = 0x02;
  expect_offset(bad_magic, idx_labels({1}, 1), 0);
  expect_offset(idx_images(2, 2, 2, {0, 0, 0, 0}), idx_labels({1, 2}, 2), 16 + 4);
  expect_offset(idx_images(1, 2, 2, {0, 0, 0, 0}), idx_labels({1, 2}, 2), 4);
  expect_offset(idx_images(1, 2, 2, {0, 0, 0, 0}), idx_labels({12}, 1), 8);
  EXPECT_THROW(load_mnist_idx(dir.path() / "missing", dir.path() / "lbl"), FormatError);
}

// --- CIFAR-10 --------------------------------------------------------------------

std::vector<std::uint8_t> random_cifar_bytes(std::size_t records, Rng& rng) {
  std::vector<std::uint8_t> b(records * 3073);
  for (std::size_t r = 0; r < records; ++r) {
    b[r * 3073] = static_cast<std::uint8_t>(rng.index(10));
    for (std::size_t i = 1; i < 3073; ++i) b[r * 3073 + i] = static_cast<std::uint8_t>(rng.index(256));
  }
  return b;
}

TEST(Cifar, DecodeMatchesByteLayout) {
  Rng rng(1);
  const auto bytes = random_cifar_bytes(7, rng);
  const Dataset ds = decode_cifar10(bytes);
  ASSERT_EQ(ds.size(), bytes.size() / 3073);
  EXPECT_EQ(ds.image_shape(), (Shape{3, 32, 32}));
  std::vector<std::size_t> histogram(10, 0), decoded(10, 0);
  for (std::size_t r = 0; r < 7; ++r) ++histogram[bytes[r * 3073]];
  for (std::size_t label : ds.labels) ++decoded[label];
  EXPECT_EQ(decoded, histogram);
  // Green plane, row 5, column 9 of record 3.
  EXPECT_DOUBLE_EQ(ds.images[3].at(1, 5, 9), bytes[3 * 3073 + 1 + 1024 + 5 * 32 + 9] / 255.0);
}

TEST(Cifar, RoundTrip) {
  Rng rng(2);
  const auto bytes = random_cifar_bytes(4, rng);
  EXPECT_EQ(encode_cifar10(decode_cifar10(bytes)), bytes);
}

TEST(Cifar, FilesAndErrors) {
  Rng rng(3);
  TempDir dir("dsinit_cifar");
  write_bytes(dir.path() / "a.bin", random_cifar_bytes(2, rng));
  write_bytes(dir.path() / "b.bin", random_cifar_bytes(3, rng));
  const std::vector<fs::path> paths{dir.path() / "a.bin", dir.path() / "b.bin"};
  EXPECT_EQ(load_cifar10(paths).size(), 5u);
  const std::vector<std::uint8_t> short_batch(3000, 0);
  EXPECT_THROW(decode_cifar10(short_batch), FormatError);
  auto bad_label = random_cifar_bytes(1, rng);
  bad_label[0] = 10;
  EXPECT_THROW(decode_cifar10(bad_label), FormatError);
}

// --- PGM ---------------------------------------------------------------------------

TEST(Pgm, RoundTripAndClamp) {
  TempDir dir("dsinit_pgm");
  Tensor img({1, 2, 3}, {0.0, 1.0, 0.2, -4.0, 9.0, 0.4});
  write_pgm(dir.path() / "x.pgm", img);
  const Tensor back = read_pgm(dir.path() / "x.pgm");
  EXPECT_EQ(back.values(), (std::vector<double>{0.0, 1.0, 0.2, 0.0, 1.0, 0.4}));
}

TEST(Pgm, HeaderComments) {
  TempDir dir("dsinit_pgm_comment");
  const std::string text = "P5\n# a comment\n2 1\n255\n";
  std::vector<std::uint8_t> bytes(text.begin(), text.end());
  bytes.push_back(0);
  bytes.push_back(255);
  write_bytes(dir.path() / "c.pgm", bytes);
  EXPECT_EQ(read_pgm(dir.path() / "c.pgm").values(), (std::vector<double>{0.0, 1.0}));
  const std::string ascii = "P2\n2 1\n255\n0 255\n";
  write_bytes(dir.path() / "a.pgm", {ascii.begin(), ascii.end()});
  EXPECT_THROW(read_pgm(dir.path() / "a.pgm"), FormatError);
}

TEST(Pgm, DirectoryLoader) {
  TempDir dir("dsinit_pgm_dir");
  for (int label : {0, 1, 2}) {
    fs::create_directories(dir.path() / std::to_string(label));
    for (int k = 0; k < 2; ++k) {
      write_pgm(dir.path() / std::to_string(label) / ("img" + std::to_string(k) + ".pgm"), Tensor({4, 4}, 0.1 * label));
    }
  }
  const Dataset ds = load_pgm_directory(dir.path());
  EXPECT_EQ(ds.size(), 6u);
  EXPECT_EQ(ds.class_count, 3u);
  EXPECT_EQ(ds.image_shape(), (Shape{1, 4, 4}));
  EXPECT_THROW(load_pgm_directory(dir.path() / "missing"), FormatError);
}

// --- synthetic -----------------------------------------------------------------------

TEST(Synthetic, NoiseFreeIsExact) {
  SyntheticSpec spec;
  spec.signal_patch = default_signal_patch(5);
  spec.noise_std = 0.0;
  spec.patch_jitter = 0;
  Rng rng(4);
  const auto syn = synthetic_dataset(spec, rng);
  for (std::size_t s = 0; s < syn.dataset.size(); ++s) {
    const Tensor& img = syn.dataset.images[s];
    if (syn.dataset.labels[s] == 0) {
      for (double v : img.data()) EXPECT_EQ(v, 0.0);
      EXPECT_FALSE(syn.patch_offsets[s].has_value());
      continue;
    }
    ASSERT_TRUE(syn.patch_offsets[s].has_value());
    EXPECT_EQ(syn.patch_offsets[s]->row, 5u);
    EXPECT_EQ(syn.patch_offsets[s]->col, 5u);
    for (std::size_t r = 0; r < 16; ++r) {
      for (std::size_t c = 0; c < 16; ++c) {
        const bool inside = r >= 5 && r < 10 && c >= 5 && c < 10;
        EXPECT_EQ(img.at(0, r, c), inside ? spec.signal_patch.at(0, r - 5, c - 5) : 0.0);
      }
    }
  }
}

TEST(Synthetic, SizeAndBalance) {
  SyntheticSpec spec;
  spec.signal_patch = default_signal_patch(5);
  Rng rng(5);
  const auto syn = synthetic_dataset(spec, rng);
  EXPECT_EQ(syn.dataset.size(), 100u);
  EXPECT_EQ(std::count(syn.dataset.labels.begin(), syn.dataset.labels.end(), 1u), 50);
  for (const Tensor& img : syn.dataset.images) {
    for (double v : img.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Synthetic, MeanDifferenceConcentratesOnPatch) {
  SyntheticSpec spec;
  spec.signal_patch = default_signal_patch(5);
  spec.samples_per_class = 200;
  Rng rng(6);
  const auto syn = synthetic_dataset(spec, rng);
  Tensor diff({1, 16, 16});
  for (std::size_t s = 0; s < syn.dataset.size(); ++s) {
    const double sign = syn.dataset.labels[s] == 1 ? 1.0 : -1.0;
    for (std::size_t i = 0; i < 256; ++i) diff[i] += sign * syn.dataset.images[s][i] / 200.0;
  }
  double inside = 0.0, total = 0.0;
  for (std::size_t r = 0; r < 16; ++r) {
    for (std::size_t c = 0; c < 16; ++c) {
      const double a = std::abs(diff.at(0, r, c));
      total += a;
      if (r >= 3 && r <= 11 && c >= 3 && c <= 11) inside += a;
    }
  }
  EXPECT_GE(inside / total, 0.8);
}

TEST(Synthetic, TopPixelsOfMeanDifferenceLieOnPatch) {
  SyntheticSpec spec;
  spec.signal_patch = default_signal_patch(5);
  spec.patch_jitter = 0;
  spec.samples_per_class = 200;
  Rng rng(61);
  const auto syn = synthetic_dataset(spec, rng);
  std::vector<std::pair<double, std::size_t>> magnitude(256);
  for (std::size_t i = 0; i < 256; ++i) magnitude[i] = {0.0, i};
  for (std::size_t s = 0; s < syn.dataset.size(); ++s) {
    const double sign = syn.dataset.labels[s] == 1 ? 1.0 : -1.0;
    for (std::size_t i = 0; i < 256; ++i) magnitude[i].first += sign * syn.dataset.images[s][i] / 200.0;
  }
  for (auto& m : magnitude) m.first = std::abs(m.first);
  std::partial_sort(magnitude.begin(), magnitude.begin() + 25, magnitude.end(), std::greater<>());
  std::size_t on_patch = 0;
  for (std::size_t k = 0; k < 25; ++k) {
    const std::size_t r = magnitude[k].second / 16, c = magnitude[k].second % 16;
    on_patch += r >= 5 && r < 10 && c >= 5 && c < 10;
  }
  EXPECT_GE(on_patch, 20u);
}

TEST(Synthetic, InvalidSpecs) {
  SyntheticSpec spec;
  spec.signal_patch = default_signal_patch(20);
  Rng rng(7);
  EXPECT_THROW(synthetic_dataset(spec, rng), InvalidArgument);
  spec.signal_patch = default_signal_patch(5);
  spec.classes = 3;
  EXPECT_THROW(synthetic_dataset(spec, rng), InvalidArgument);
}

// --- split & batches --------------------------------------------------------------------

Dataset indexed_dataset(std::size_t n) {
  Dataset ds;
  ds.class_count = 2;
  for (std::size_t i = 0; i < n; ++i) {
    ds.images.emplace_back(Shape{1, 1, 1}, static_cast<double>(i));
    ds.labels.push_back(i % 2);
  }
  return ds;
}

TEST(Split, SizesAndPartition) {
  const Dataset ds = indexed_dataset(1000);
  Rng rng(8);
  const Split s = split(ds, 0.8, rng);
  EXPECT_EQ(s.train.size(), 800u);
  EXPECT_EQ(s.val.size(), 200u);
  std::vector<double> seen;
  for (const auto* part : {&s.train, &s.val}) {
    for (const Tensor& t : part->images) seen.push_back(t[0]);
  }
  std::sort(seen.begin(), seen.end());
  for (std::size_t i = 0; i < 1000; ++i) EXPECT_EQ(seen[i], static_cast<double>(i));
  for (std::size_t i = 0; i < 200; ++i) EXPECT_EQ(s.val.images[i][0], static_cast<double>(s.val_indices[i]));
}

TEST(Split, EmptySideRejected) {
  const Dataset ds = indexed_dataset(3);
  Rng rng(9);
  EXPECT_THROW(split(ds, 0.1, rng), InvalidArgument);
  EXPECT_THROW(split(ds, 0.9, rng), InvalidArgument);
  EXPECT_THROW(split(ds, 1.0, rng), InvalidArgument);
}

TEST(Minibatches, DeterministicAndComplete) {
  Rng a(10), b(10);
  const auto x = minibatches(103, 10, a);
  EXPECT_EQ(x, minibatches(103, 10, b));
  ASSERT_EQ(x.size(), 11u);
  EXPECT_EQ(x.back().size(), 3u);
  std::vector<std::size_t> all;
  for (const auto& batch : x) all.insert(all.end(), batch.begin(), batch.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 103; ++i) EXPECT_EQ(all[i], i);
  EXPECT_THROW(minibatches(10, 0, a), InvalidArgument);
}

TEST(Centering, MeanImageAndSubtract) {
  Dataset ds = indexed_dataset(4);
  const Tensor mean = mean_image(ds);
  EXPECT_DOUBLE_EQ(mean[0], 1.5);
  subtract_image(ds, mean);
  EXPECT_DOUBLE_EQ(ds.images[3][0], 1.5);
}

}  // namespace
}  // namespace dsinit::data
