// dsinit: train, compare and inspect networks under different weight
// initializers.
//
//   dsinit train --config F [--init SCHEME] [--seed N] [--out-dir D]
//   dsinit compare --config F --inits a,b[,c...]
//   dsinit visualize --model M --dataset-image INDEX --out P.pgm [--config F]
//   dsinit dump-init --config F --layer K --out W.csv
//
// Exit codes: 0 ok, 1 usage, 2 data/format, 3 numerical failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "dsinit/datasets.hpp"
#include "dsinit/errors.hpp"
#include "dsinit/harness.hpp"
#include "dsinit/model_io.hpp"

namespace fs = std::filesystem;
using namespace dsinit;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

struct Overrides {
  std::string init;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
};

harness::RunConfig load_with_overrides(const std::string& path, const Overrides& o) {
  harness::RunConfig config = harness::load_config(path);
  if (!o.init.empty()) config.init.scheme = init::parse_scheme(o.init);
  if (o.seed) config.seed = *o.seed;
  if (!o.out_dir.empty()) config.out_dir = o.out_dir;
  config.validate();
  return config;
}

void print_epoch(const harness::EpochMetrics& m) {
  std::printf("epoch %3zu  train_loss %.5f  val_loss %.5f  val_acc %.4f\n", m.epoch, m.train_loss, m.val_loss,
              m.val_accuracy);
  std::fflush(stdout);
}

int run_train(const std::string& config_path, const Overrides& o) {
  const auto config = load_with_overrides(config_path, o);
  std::printf("training with %s init, writing to %s\n", init::to_string(config.init.scheme).c_str(),
              config.out_dir.string().c_str());
  harness::run_experiment(config, print_epoch);
  return 0;
}

int run_compare(const std::string& config_path, const std::string& inits, const Overrides& o) {
  const auto config = load_with_overrides(config_path, o);
  std::vector<init::Scheme> schemes;
  std::size_t start = 0;
  while (start <= inits.size()) {
    const auto comma = inits.find(',', start);
    const std::string name = inits.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!name.empty()) schemes.push_back(init::parse_scheme(name));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  const auto outcomes = harness::compare_initializers(config, schemes, print_epoch);
  int status = 0;
  for (const auto& outcome : outcomes) {
    const std::string name = init::to_string(outcome.scheme);
    if (outcome.result) {
      const auto& last = outcome.result->metrics.rows.back();
      std::printf("%-10s final val_acc %.4f  val_loss %.5f\n", name.c_str(), last.val_accuracy, last.val_loss);
    } else {
      std::printf("%-10s FAILED: %s\n", name.c_str(), outcome.error.c_str());
      status = kExitNumerical;
    }
  }
  return status;
}

int run_visualize(const std::string& model_path, std::size_t index, const std::string& out_path,
                  std::string config_path) {
  const nn::Network network = nn::load_model(model_path);
  if (config_path.empty()) config_path = (fs::path(model_path).parent_path() / "run.conf").string();
  const auto config = harness::load_config(config_path);
  const auto prepared = harness::prepare_data(config);
  if (index >= prepared.all.size()) {
    throw InvalidArgument("dataset image " + std::to_string(index) + " out of range (dataset has " +
                          std::to_string(prepared.all.size()) + ")");
  }
  Tensor image = prepared.all.images[index];
  if (config.data.center) {
    const Tensor mean = data::mean_image(prepared.all.subset(prepared.split.train_indices));
    for (std::size_t i = 0; i < image.size(); ++i) image[i] -= mean[i];
  }
  const Tensor heat = harness::saliency_map(network, image);
  data::write_pgm(out_path, heat);
  std::printf("wrote %s (label %zu, predicted %zu)\n", out_path.c_str(), prepared.all.labels[index],
              nn::argmax(nn::forward(network, image).data()));
  return 0;
}

int run_dump_init(const std::string& config_path, std::size_t layer, const std::string& out_path,
                  const Overrides& o) {
  const auto config = load_with_overrides(config_path, o);
  const auto prepared = harness::prepare_data(config);
  const nn::Network network = harness::initialize(config, prepared);
  harness::write_filter_csv(network, layer, out_path);
  std::printf("wrote affine layer %zu of %s init to %s\n", layer, init::to_string(config.init.scheme).c_str(),
              out_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Data-dependent weight initialization experiments"};
  app.require_subcommand(1);

  std::string config_path, model_path, out_path, inits, init_name, out_dir;
  std::uint64_t seed = 0;
  std::size_t index = 0, layer = 0;
  Overrides overrides;

  auto* train = app.add_subcommand("train", "Initialize and train one network");
  train->add_option("--config", config_path, "Run configuration file")->required();
  train->add_option("--init", overrides.init, "Initializer: xavier, he, pca or datastats");
  auto* seed_opt = train->add_option("--seed", seed, "Run seed");
  train->add_option("--out-dir", overrides.out_dir, "Output directory");

  auto* compare = app.add_subcommand("compare", "Train the same network under several initializers");
  compare->add_option("--config", config_path, "Run configuration file")->required();
  compare->add_option("--inits", inits, "Comma-separated initializer list")->required();
  auto* compare_seed = compare->add_option("--seed", seed, "Run seed");
  compare->add_option("--out-dir", overrides.out_dir, "Output directory");

  auto* visualize = app.add_subcommand("visualize", "Write an input-gradient saliency heatmap");
  visualize->add_option("--model", model_path, "DSIN model file")->required();
  visualize->add_option("--dataset-image", index, "Index into the configured dataset")->required();
  visualize->add_option("--out", out_path, "Output PGM path")->required();
  visualize->add_option("--config", config_path, "Run configuration (default: run.conf next to the model)");

  auto* dump = app.add_subcommand("dump-init", "Write the initialized filter bank of one affine layer");
  dump->add_option("--config", config_path, "Run configuration file")->required();
  dump->add_option("--layer", layer, "Affine layer, 1-based")->required();
  dump->add_option("--out", out_path, "Output CSV path")->required();
  dump->add_option("--init", overrides.init, "Initializer override");
  auto* dump_seed = dump->add_option("--seed", seed, "Run seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }
  if (seed_opt->count() || compare_seed->count() || dump_seed->count()) overrides.seed = seed;

  try {
    if (*train) return run_train(config_path, overrides);
    if (*compare) return run_compare(config_path, inits, overrides);
    if (*visualize) return run_visualize(model_path, index, out_path, config_path);
    if (*dump) return run_dump_init(config_path, layer, out_path, overrides);
  } catch (const FormatError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const DegenerateInput& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
