#include <charconv>
#include <cmath>
#include <fstream>

#include "dsinit/harness.hpp"
#include "dsinit/model_io.hpp"

namespace dsinit::harness {

namespace fs = std::filesystem;

namespace {

std::uint64_t fnv1a(std::span<const std::size_t> values, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (std::size_t v : values) {
    auto x = static_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
      h ^= (x >> (8 * i)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

data::Dataset load_dataset(const DataConfig& cfg, std::optional<data::SyntheticDataset>& synthetic,
                           std::uint64_t synthetic_seed) {
  switch (cfg.kind) {
    case DatasetKind::mnist: return data::load_mnist_idx(cfg.mnist_images, cfg.mnist_labels);
    case DatasetKind::cifar10: return data::load_cifar10(cfg.cifar_batches);
    case DatasetKind::pgm: return data::load_pgm_directory(cfg.pgm_dir);
    case DatasetKind::synthetic: {
      data::SyntheticSpec spec;
      spec.image_side = cfg.synthetic_side;
      spec.signal_patch = data::default_signal_patch(cfg.synthetic_patch);
      spec.noise_std = cfg.synthetic_noise;
      spec.patch_jitter = cfg.synthetic_jitter;
      spec.samples_per_class = cfg.synthetic_per_class;
      Rng rng(synthetic_seed);
      synthetic = data::synthetic_dataset(spec, rng);
      return synthetic->dataset;
    }
  }
  throw InvalidArgument("unknown dataset kind");
}

}  // namespace

std::uint64_t stream_seed(const RunConfig& config, Stream stream) {
  return derive_seed(config.seed, static_cast<std::uint64_t>(stream));
}

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::general, 17);
  if (ec != std::errc()) throw InvalidArgument("format_double: conversion failed");
  return std::string(buf, ptr);
}

PreparedData prepare_data(const RunConfig& config) {
  std::optional<data::SyntheticDataset> synthetic;
  data::Dataset all = load_dataset(config.data, synthetic, stream_seed(config, Stream::synthetic));
  if (config.data.max_samples != 0 && config.data.max_samples < all.size()) {
    all.images.resize(config.data.max_samples);
    all.labels.resize(config.data.max_samples);
    if (synthetic) synthetic->patch_offsets.resize(config.data.max_samples);
  }
  all.validate();

  Rng split_rng(stream_seed(config, Stream::split));
  data::Split split = data::split(all, config.data.train_fraction, split_rng);
  if (config.data.center) {
    const Tensor mean = data::mean_image(split.train);
    data::subtract_image(split.train, mean);
    data::subtract_image(split.val, mean);
  }
  nn::NetworkSpec spec = parse_architecture(config.layers, all.image_shape(), all.class_count);
  return {std::move(all), std::move(split), std::move(synthetic), std::move(spec)};
}

nn::Network initialize(const RunConfig& config, const PreparedData& prepared) {
  init::InitConfig init_config = config.init;
  init_config.seed = stream_seed(config, Stream::init);
  Rng rng(init_config.seed);
  return init::initialize_network(prepared.spec, prepared.split.train, init_config, rng);
}

std::string format_metrics_csv(const RunMetrics& metrics) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& row : metrics.rows) {
    out += std::to_string(row.epoch) + "," + format_double(row.train_loss) + "," + format_double(row.val_loss) + "," +
           format_double(row.val_accuracy) + "\n";
  }
  return out;
}

void write_metrics_csv(const RunMetrics& metrics, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  out << format_metrics_csv(metrics);
}

void train(nn::Network& network, const RunConfig& config, const data::Split& split, RunMetrics& metrics,
           std::vector<std::uint64_t>* batch_hashes, const EpochCallback& on_epoch) {
  const data::Dataset& train_set = split.train;
  Rng batch_rng(stream_seed(config, Stream::batches));
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto batches = data::minibatches(train_set.size(), config.batch_size, batch_rng);
    if (batch_hashes != nullptr) {
      std::uint64_t h = 0xcbf29ce484222325ULL;
      for (const auto& batch : batches) h = fnv1a(batch, h);
      batch_hashes->push_back(h);
    }
    double loss_sum = 0.0;
    for (const auto& batch : batches) {
      nn::GradientSet sum = nn::GradientSet::zeros_like(network);
      for (std::size_t idx : batch) {
        const auto lg = nn::backward(network, train_set.images[idx], train_set.labels[idx]);
        if (!std::isfinite(lg.loss)) {
          throw NumericalFailure("non-finite training loss in epoch " + std::to_string(epoch));
        }
        loss_sum += lg.loss;
        sum.add(lg.grads);
      }
      sum.scale(1.0 / static_cast<double>(batch.size()));
      nn::sgd_step(network, sum, config.lr);
    }
    const nn::Evaluation eval = nn::evaluate(network, split.val);
    if (!std::isfinite(eval.mean_loss)) {
      throw NumericalFailure("non-finite validation loss in epoch " + std::to_string(epoch));
    }
    EpochMetrics row{epoch, loss_sum / static_cast<double>(train_set.size()), eval.mean_loss, eval.accuracy};
    metrics.rows.push_back(row);
    if (on_epoch) on_epoch(row);
  }
}

namespace {

std::vector<Chart> run_charts(const std::vector<std::pair<std::string, const RunMetrics*>>& runs, bool with_train) {
  Chart loss{"Log loss vs epoch", "epoch", "log loss", {}};
  Chart accuracy{"Validation accuracy vs epoch", "epoch", "accuracy", {}};
  for (const auto& [name, metrics] : runs) {
    Series train{name + " train", {}, {}}, val{name + " validation", {}, {}}, acc{name, {}, {}};
    for (const auto& row : metrics->rows) {
      const auto x = static_cast<double>(row.epoch);
      train.x.push_back(x);
      train.y.push_back(row.train_loss);
      val.x.push_back(x);
      val.y.push_back(row.val_loss);
      acc.x.push_back(x);
      acc.y.push_back(row.val_accuracy);
    }
    if (with_train) loss.series.push_back(std::move(train));
    loss.series.push_back(std::move(val));
    accuracy.series.push_back(std::move(acc));
  }
  return {loss, accuracy};
}

}  // namespace

RunResult run_experiment(const RunConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  const PreparedData prepared = prepare_data(config);
  RunResult result{{}, initialize(config, prepared), fnv1a(prepared.split.val_indices), {}};

  fs::create_directories(config.out_dir);
  {
    std::ofstream conf(config.out_dir / "run.conf", std::ios::binary | std::ios::trunc);
    conf << write_config(config);
  }
  try {
    train(result.network, config, prepared.split, result.metrics, &result.batch_hashes, on_epoch);
  } catch (const NumericalFailure&) {
    write_metrics_csv(result.metrics, config.out_dir / "metrics.csv");
    throw;
  }
  write_metrics_csv(result.metrics, config.out_dir / "metrics.csv");
  nn::save_model(result.network, config.out_dir / "model.dsin");
  write_svg(run_charts({{init::to_string(config.init.scheme), &result.metrics}}, true), config.out_dir / "plot.svg");
  return result;
}

std::vector<SchemeOutcome> compare_initializers(const RunConfig& config, const std::vector<init::Scheme>& schemes,
                                                const EpochCallback& on_epoch) {
  if (schemes.size() < 2) throw InvalidArgument("compare_initializers: need at least 2 schemes");
  config.validate();
  std::vector<SchemeOutcome> outcomes;
  for (init::Scheme scheme : schemes) {
    RunConfig run = config;
    run.init.scheme = scheme;
    run.out_dir = config.out_dir / init::to_string(scheme);
    SchemeOutcome outcome{scheme, std::nullopt, {}};
    try {
      outcome.result = run_experiment(run, on_epoch);
    } catch (const std::exception& e) {
      outcome.error = e.what();
    }
    outcomes.push_back(std::move(outcome));
  }

  std::vector<std::pair<std::string, const RunMetrics*>> runs;
  for (const auto& o : outcomes) {
    if (o.result) runs.emplace_back(init::to_string(o.scheme), &o.result->metrics);
  }
  fs::create_directories(config.out_dir);
  write_svg(run_charts(runs, false), config.out_dir / "compare.svg");
  return outcomes;
}

Tensor saliency_map(const nn::Network& network, const Tensor& image) {
  const nn::ForwardTrace trace = nn::forward_trace(network, image);
  const std::size_t predicted = nn::argmax(trace.logits.data());
  std::vector<double> seed(trace.logits.size(), 0.0);
  seed[predicted] = 1.0;
  const nn::Backprop bp = nn::backward_from(network, trace, seed, true);
  const Tensor& g = bp.input_grad;

  const std::size_t c = g.dim(0), h = g.dim(1), w = g.dim(2);
  Tensor heat(Shape{h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double m = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) m = std::max(m, std::abs(g.at(ch, y, x)));
      heat[y * w + x] = m;
    }
  }
  double lo = heat[0], hi = heat[0];
  for (double v : heat.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(hi > lo)) return Tensor(Shape{h, w});
  for (double& v : heat.data()) v = (v - lo) / (hi - lo);
  return heat;
}

void write_filter_csv(const nn::Network& network, std::size_t k, const fs::path& path) {
  const auto& affine = network.spec().affine_layers();
  if (k < 1 || k > affine.size()) {
    throw InvalidArgument("layer " + std::to_string(k) + " outside [1, " + std::to_string(affine.size()) + "]");
  }
  const Tensor& w = network.params(affine[k - 1]).weight;
  const std::size_t rows = w.dim(0);
  const std::size_t cols = w.size() / rows;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out << (c ? "," : "") << format_double(w[r * cols + c]);
    out << '\n';
  }
}

}  // namespace dsinit::harness
