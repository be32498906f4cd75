#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dsinit/datasets.hpp"
#include "dsinit/errors.hpp"
#include "dsinit/initializers.hpp"
#include "dsinit/nn.hpp"

namespace dsinit::harness {

/// Malformed or unknown configuration entry.
class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

enum class DatasetKind { mnist, cifar10, synthetic, pgm };

struct DataConfig {
  DatasetKind kind = DatasetKind::synthetic;
  std::filesystem::path mnist_images;
  std::filesystem::path mnist_labels;
  std::vector<std::filesystem::path> cifar_batches;
  std::filesystem::path pgm_dir;
  std::size_t max_samples = 0;  // 0: everything loaded
  double train_fraction = 0.9;
  bool center = false;
  // synthetic generator
  std::size_t synthetic_side = 16;
  std::size_t synthetic_patch = 5;
  double synthetic_noise = 0.2;
  std::size_t synthetic_jitter = 2;
  std::size_t synthetic_per_class = 200;
};

struct RunConfig {
  std::string layers;  // e.g. "conv:8:3, relu, maxpool, flatten, dense:64, relu, dense:10"
  DataConfig data;
  init::InitConfig init;
  std::size_t epochs = 10;
  double lr = 0.01;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  std::filesystem::path out_dir = "runs/default";

  void validate() const;
};

/// Parses `key = value` lines; `#` starts a comment. Relative paths are
/// resolved against `base_dir`. Unknown keys are errors.
RunConfig parse_config(std::istream& in, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);
/// Canonical text form; parse_config(write_config(c)) reproduces c.
std::string write_config(const RunConfig& config);

/// Parses the inline layer list against an input shape.
nn::NetworkSpec parse_architecture(const std::string& layers, const Shape& input_shape, std::size_t class_count);

struct PreparedData {
  data::Dataset all;  // after max_samples, before the split
  data::Split split;
  std::optional<data::SyntheticDataset> synthetic;  // patch offsets when generated
  nn::NetworkSpec spec;
};

/// Loads or generates the dataset, applies max_samples, splits with the
/// run seed and (optionally) centers both sides on the training mean.
PreparedData prepare_data(const RunConfig& config);

/// Named sub-streams of the run seed.
enum class Stream : std::uint64_t { split = 1, init = 2, batches = 3, synthetic = 4 };
std::uint64_t stream_seed(const RunConfig& config, Stream stream);

nn::Network initialize(const RunConfig& config, const PreparedData& prepared);

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct RunMetrics {
  std::vector<EpochMetrics> rows;
};

inline constexpr const char* kMetricsHeader = "epoch,train_loss,val_loss,val_accuracy";

std::string format_metrics_csv(const RunMetrics& metrics);
void write_metrics_csv(const RunMetrics& metrics, const std::filesystem::path& path);

struct RunResult {
  RunMetrics metrics;
  nn::Network network;
  std::uint64_t val_index_hash = 0;
  std::vector<std::uint64_t> batch_hashes;  // one per epoch
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Trains `network` in place with minibatch SGD (per-batch mean gradient).
/// Throws NumericalFailure on a non-finite loss after flushing the rows so
/// far into `metrics`.
void train(nn::Network& network, const RunConfig& config, const data::Split& split, RunMetrics& metrics,
           std::vector<std::uint64_t>* batch_hashes = nullptr, const EpochCallback& on_epoch = {});

/// Full pipeline. Writes metrics.csv, model.dsin, plot.svg and run.conf
/// into config.out_dir.
RunResult run_experiment(const RunConfig& config, const EpochCallback& on_epoch = {});

struct SchemeOutcome {
  init::Scheme scheme;
  std::optional<RunResult> result;
  std::string error;  // set when the run failed
};

/// Runs every scheme on the same split and batch order, each in
/// out_dir/<scheme>/, plus out_dir/compare.svg overlaying the runs.
std::vector<SchemeOutcome> compare_initializers(const RunConfig& config, const std::vector<init::Scheme>& schemes,
                                                const EpochCallback& on_epoch = {});

/// |∂ logit_predicted / ∂ pixel|, max over channels, min-max scaled to [0, 1].
/// A flat map comes back as all zeros.
Tensor saliency_map(const nn::Network& network, const Tensor& image);

/// Filter bank of affine layer k (1-based) as CSV, one filter per line.
void write_filter_csv(const nn::Network& network, std::size_t k, const std::filesystem::path& path);

std::string format_double(double value);

// SVG line charts

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct Chart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
};

/// Self-contained SVG with the charts stacked vertically.
std::string render_svg(const std::vector<Chart>& charts);
void write_svg(const std::vector<Chart>& charts, const std::filesystem::path& path);

}  // namespace dsinit::harness
