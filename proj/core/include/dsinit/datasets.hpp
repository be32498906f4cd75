#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "dsinit/rng.hpp"
#include "dsinit/tensor.hpp"

namespace dsinit::data {

/// Labelled images of one shared c×H×W shape, pixel values in [0, 1].
struct Dataset {
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
  std::size_t class_count = 0;

  std::size_t size() const noexcept { return images.size(); }
  const Shape& image_shape() const { return images.front().shape(); }

  /// Throws InvalidArgument when the invariants do not hold.
  void validate() const;

  Dataset subset(std::span<const std::size_t> indices) const;
};

Dataset load_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Reads CIFAR-10 binary batches (3073-byte records, label then R, G, B planes).
Dataset load_cifar10(std::span<const std::filesystem::path> batch_paths);
Dataset decode_cifar10(std::span<const std::uint8_t> bytes);
/// Inverse of decode_cifar10 for datasets of 3×32×32 images.
std::vector<std::uint8_t> encode_cifar10(const Dataset& dataset);

/// Binary "P5" greymap with maxval 255, returned as 1×H×W in [0, 1].
Tensor read_pgm(const std::filesystem::path& path);
/// Writes an H×W (or 1×H×W) tensor; values are clamped to [0, 1].
void write_pgm(const std::filesystem::path& path, const Tensor& image);

/// Loads `root/<label>/*.pgm`, label directories named by integer.
Dataset load_pgm_directory(const std::filesystem::path& root);

struct SyntheticSpec {
  std::size_t image_side = 16;
  Tensor signal_patch;  // 1×p×p
  std::size_t classes = 2;
  double noise_std = 0.2;
  std::size_t patch_jitter = 2;
  std::size_t samples_per_class = 50;
};

struct PatchOffset {
  std::size_t row = 0;
  std::size_t col = 0;
};

struct SyntheticDataset {
  Dataset dataset;
  /// Top-left corner of the pasted patch; empty for noise-only images.
  std::vector<std::optional<PatchOffset>> patch_offsets;
};

/// A p×p patch with an oriented edge and a bright bar.
Tensor default_signal_patch(std::size_t side);

/// Class 0: N(0, noise_std²) noise clamped to [0, 1]. Class 1: the same
/// noise with the signal patch pasted over it at the centred location
/// shifted by up to ±patch_jitter pixels per axis. Samples alternate
/// between the classes.
SyntheticDataset synthetic_dataset(const SyntheticSpec& spec, Rng& rng);

struct Split {
  Dataset train;
  Dataset val;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> val_indices;
};

/// Seeded shuffle, then the first round(train_fraction·N) go to training.
Split split(const Dataset& dataset, double train_fraction, Rng& rng);

/// One epoch of minibatch index lists over a fresh permutation; the final
/// short batch is kept.
std::vector<std::vector<std::size_t>> minibatches(std::size_t sample_count, std::size_t batch_size, Rng& rng);

Tensor mean_image(const Dataset& dataset);
void subtract_image(Dataset& dataset, const Tensor& image);

}  // namespace dsinit::data
