#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "dsinit/harness.hpp"

namespace dsinit::harness {

namespace fs = std::filesystem;

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto end = comma == std::string_view::npos ? s.size() : comma;
    std::string item = trim(s.substr(start, end - start));
    if (!item.empty()) out.push_back(std::move(item));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::size_t to_size(const std::string& key, const std::string& value) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + value + "'");
  }
  return v;
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError("config key '" + key + "': expected an unsigned integer, got '" + value + "'");
  }
  return v;
}

double to_double(const std::string& key, const std::string& value) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + value + "'");
  }
  return v;
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + value + "'");
}

fs::path resolve(const fs::path& base, const std::string& value) {
  fs::path p(value);
  if (p.is_relative() && !base.empty()) p = base / p;
  return p.lexically_normal();
}

DatasetKind to_dataset(const std::string& value) {
  if (value == "mnist") return DatasetKind::mnist;
  if (value == "cifar10") return DatasetKind::cifar10;
  if (value == "synthetic") return DatasetKind::synthetic;
  if (value == "pgm") return DatasetKind::pgm;
  throw ConfigError("config key 'dataset': expected mnist, cifar10, synthetic or pgm, got '" + value + "'");
}

std::string dataset_name(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::mnist: return "mnist";
    case DatasetKind::cifar10: return "cifar10";
    case DatasetKind::synthetic: return "synthetic";
    case DatasetKind::pgm: return "pgm";
  }
  return "unknown";
}

}  // namespace

void RunConfig::validate() const {
  if (layers.empty()) throw ConfigError("config: 'layers' is required");
  if (epochs < 1) throw ConfigError("config: epochs must be at least 1");
  if (!(lr > 0.0)) throw ConfigError("config: lr must be positive");
  if (batch_size < 1) throw ConfigError("config: batch_size must be at least 1");
  if (!(data.train_fraction > 0.0 && data.train_fraction < 1.0)) {
    throw ConfigError("config: train_fraction must lie in (0, 1)");
  }
  if (out_dir.empty()) throw ConfigError("config: out_dir must not be empty");
  try {
    init.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  switch (data.kind) {
    case DatasetKind::mnist:
      if (data.mnist_images.empty() || data.mnist_labels.empty()) {
        throw ConfigError("config: dataset = mnist needs mnist_images and mnist_labels");
      }
      break;
    case DatasetKind::cifar10:
      if (data.cifar_batches.empty()) throw ConfigError("config: dataset = cifar10 needs cifar_batches");
      break;
    case DatasetKind::pgm:
      if (data.pgm_dir.empty()) throw ConfigError("config: dataset = pgm needs pgm_dir");
      break;
    case DatasetKind::synthetic:
      if (data.synthetic_patch < 1 || data.synthetic_patch > data.synthetic_side) {
        throw ConfigError("config: synthetic_patch must lie in [1, synthetic_side]");
      }
      if (data.synthetic_per_class < 1) throw ConfigError("config: synthetic_per_class must be positive");
      if (!(data.synthetic_noise >= 0.0)) throw ConfigError("config: synthetic_noise must be non-negative");
      break;
  }
}

RunConfig parse_config(std::istream& in, const fs::path& base_dir) {
  RunConfig c;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (!seen.insert(key).second) {
      throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }

    if (key == "layers") c.layers = value;
    else if (key == "dataset") c.data.kind = to_dataset(value);
    else if (key == "mnist_images") c.data.mnist_images = resolve(base_dir, value);
    else if (key == "mnist_labels") c.data.mnist_labels = resolve(base_dir, value);
    else if (key == "cifar_batches") {
      c.data.cifar_batches.clear();
      for (const auto& item : split_list(value)) c.data.cifar_batches.push_back(resolve(base_dir, item));
    }
    else if (key == "pgm_dir") c.data.pgm_dir = resolve(base_dir, value);
    else if (key == "max_samples") c.data.max_samples = to_size(key, value);
    else if (key == "train_fraction") c.data.train_fraction = to_double(key, value);
    else if (key == "center_data") c.data.center = to_bool(key, value);
    else if (key == "synthetic_side") c.data.synthetic_side = to_size(key, value);
    else if (key == "synthetic_patch") c.data.synthetic_patch = to_size(key, value);
    else if (key == "synthetic_noise") c.data.synthetic_noise = to_double(key, value);
    else if (key == "synthetic_jitter") c.data.synthetic_jitter = to_size(key, value);
    else if (key == "synthetic_per_class") c.data.synthetic_per_class = to_size(key, value);
    else if (key == "init") {
      try {
        c.init.scheme = init::parse_scheme(value);
      } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("config key 'init': ") + e.what());
      }
    }
    else if (key == "subsample_size") c.init.subsample_size = to_size(key, value);
    else if (key == "crops_per_image") c.init.crops_per_image = to_size(key, value);
    else if (key == "epsilon") c.init.epsilon = to_double(key, value);
    else if (key == "pca_center") c.init.pca_center = to_bool(key, value);
    else if (key == "epochs") c.epochs = to_size(key, value);
    else if (key == "lr") c.lr = to_double(key, value);
    else if (key == "batch_size") c.batch_size = to_size(key, value);
    else if (key == "seed") c.seed = to_u64(key, value);
    else if (key == "out_dir") c.out_dir = resolve(base_dir, value);
    else throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
  }
  return c;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse_config(in, path.parent_path());
}

std::string write_config(const RunConfig& c) {
  std::ostringstream out;
  out << "layers = " << c.layers << '\n';
  out << "dataset = " << dataset_name(c.data.kind) << '\n';
  if (!c.data.mnist_images.empty()) out << "mnist_images = " << c.data.mnist_images.string() << '\n';
  if (!c.data.mnist_labels.empty()) out << "mnist_labels = " << c.data.mnist_labels.string() << '\n';
  if (!c.data.cifar_batches.empty()) {
    out << "cifar_batches = ";
    for (std::size_t i = 0; i < c.data.cifar_batches.size(); ++i) {
      out << (i ? ", " : "") << c.data.cifar_batches[i].string();
    }
    out << '\n';
  }
  if (!c.data.pgm_dir.empty()) out << "pgm_dir = " << c.data.pgm_dir.string() << '\n';
  out << "max_samples = " << c.data.max_samples << '\n';
  out << "train_fraction = " << format_double(c.data.train_fraction) << '\n';
  out << "center_data = " << (c.data.center ? "true" : "false") << '\n';
  out << "synthetic_side = " << c.data.synthetic_side << '\n';
  out << "synthetic_patch = " << c.data.synthetic_patch << '\n';
  out << "synthetic_noise = " << format_double(c.data.synthetic_noise) << '\n';
  out << "synthetic_jitter = " << c.data.synthetic_jitter << '\n';
  out << "synthetic_per_class = " << c.data.synthetic_per_class << '\n';
  out << "init = " << init::to_string(c.init.scheme) << '\n';
  out << "subsample_size = " << c.init.subsample_size << '\n';
  out << "crops_per_image = " << c.init.crops_per_image << '\n';
  out << "epsilon = " << format_double(c.init.epsilon) << '\n';
  out << "pca_center = " << (c.init.pca_center ? "true" : "false") << '\n';
  out << "epochs = " << c.epochs << '\n';
  out << "lr = " << format_double(c.lr) << '\n';
  out << "batch_size = " << c.batch_size << '\n';
  out << "seed = " << c.seed << '\n';
  out << "out_dir = " << c.out_dir.string() << '\n';
  return out.str();
}

nn::NetworkSpec parse_architecture(const std::string& layers, const Shape& input_shape, std::size_t class_count) {
  std::vector<nn::LayerSpec> specs;
  for (const auto& token : split_list(layers)) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
      const auto colon = token.find(':', start);
      parts.push_back(trim(std::string_view(token).substr(start, colon - start)));
      if (colon == std::string::npos) break;
      start = colon + 1;
    }
    const std::string& kind = parts[0];
    auto arg = [&](std::size_t i) { return to_size("layers", parts.at(i)); };
    if (kind == "conv" && parts.size() == 3) specs.push_back(nn::LayerSpec::conv2d(arg(1), arg(2)));
    else if (kind == "dense" && parts.size() == 2) specs.push_back(nn::LayerSpec::dense(arg(1)));
    else if (kind == "relu" && parts.size() == 1) specs.push_back(nn::LayerSpec::relu());
    else if (kind == "maxpool" && parts.size() == 1) specs.push_back(nn::LayerSpec::maxpool2x2());
    else if (kind == "flatten" && parts.size() == 1) specs.push_back(nn::LayerSpec::flatten());
    else {
      throw ConfigError("layers: cannot parse '" + token +
                        "' (expected conv:FILTERS:KERNEL, dense:UNITS, relu, maxpool or flatten)");
    }
  }
  try {
    return nn::NetworkSpec(std::move(specs), input_shape, class_count);
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("layers: ") + e.what());
  }
}

}  // namespace dsinit::harness
