#include "dsinit/initializers.hpp"

#include <algorithm>
#include <cmath>

#include "dsinit/errors.hpp"
#include "dsinit/numerics.hpp"

namespace dsinit::init {

namespace {

Tensor gaussian_tensor(const Shape& shape, double variance, Rng& rng) {
  Tensor t(shape);
  const double sd = std::sqrt(variance);
  for (double& v : t.data()) v = sd * rng.normal();
  return t;
}

// Re-raises `e` as the same error kind with the layer position prepended.
template <typename Fn>
decltype(auto) annotate_layer(std::size_t layer, Fn&& fn) {
  const std::string prefix = "layer " + std::to_string(layer) + ": ";
  try {
    return fn();
  } catch (const DegenerateInput& e) {
    throw DegenerateInput(prefix + e.what());
  } catch (const NumericalFailure& e) {
    throw NumericalFailure(prefix + e.what());
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(prefix + e.what());
  }
}

// Orthonormalizes the first `count` columns of `basis` in order.
Matrix gram_schmidt_rows(const Matrix& basis, std::size_t count) {
  const std::size_t d = basis.rows();
  Matrix out(count, d);
  for (std::size_t j = 0; j < count; ++j) {
    auto v = out.row(j);
    for (std::size_t r = 0; r < d; ++r) v[r] = basis(r, j);
    for (std::size_t p = 0; p < j; ++p) {
      auto q = out.row(p);
      double dot = 0.0;
      for (std::size_t r = 0; r < d; ++r) dot += q[r] * v[r];
      for (std::size_t r = 0; r < d; ++r) v[r] -= dot * q[r];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-12) {
      throw DegenerateInput("Gram-Schmidt breakdown at averaged eigenvector " + std::to_string(j) +
                            " (norm " + std::to_string(norm) + ")");
    }
    for (double& x : v) x /= norm;
  }
  return out;
}

void center_columns(Matrix& m) {
  const auto mean = numerics::mean_vector(m);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto row = m.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] -= mean[j];
  }
}

std::vector<Tensor> prefix_outputs(const nn::Network& net, std::span<const Tensor> images, std::size_t k) {
  std::vector<Tensor> out;
  out.reserve(images.size());
  for (const Tensor& image : images) out.push_back(nn::forward_prefix(net, image, k));
  return out;
}

std::vector<Tensor> draw_subsample(const data::Dataset& dataset, std::size_t size, Rng& rng) {
  if (dataset.size() < size) {
    throw InvalidArgument("dataset has " + std::to_string(dataset.size()) + " images, subsample needs " +
                          std::to_string(size));
  }
  const std::vector<std::size_t> order = rng.permutation(dataset.size());
  std::vector<Tensor> picked;
  picked.reserve(size);
  for (std::size_t i = 0; i < size; ++i) picked.push_back(dataset.images[order[i]]);
  return picked;
}

}  // namespace

std::string to_string(Scheme scheme) {
  switch (scheme) {
    case Scheme::xavier: return "xavier";
    case Scheme::he: return "he";
    case Scheme::pca: return "pca";
    case Scheme::datastats: return "datastats";
  }
  return "unknown";
}

Scheme parse_scheme(std::string_view name) {
  if (name == "xavier" || name == "glorot") return Scheme::xavier;
  if (name == "he") return Scheme::he;
  if (name == "pca") return Scheme::pca;
  if (name == "datastats") return Scheme::datastats;
  throw InvalidArgument("unknown initialization scheme '" + std::string(name) +
                        "' (expected xavier, he, pca or datastats)");
}

void InitConfig::validate() const {
  if (subsample_size < 2) throw InvalidArgument("subsample_size must be at least 2");
  if (crops_per_image < 1) throw InvalidArgument("crops_per_image must be at least 1");
  if (!(epsilon > 0.0)) throw InvalidArgument("epsilon must be positive");
}

Tensor FilterBank::to_weight(const Shape& weight_shape) const {
  if (weight_shape.empty() || weight_shape[0] != filters.rows() ||
      shape_size(weight_shape) != filters.rows() * filters.cols()) {
    throw InvalidArgument("filter bank " + std::to_string(filters.rows()) + "x" + std::to_string(filters.cols()) +
                          " does not reshape to " + shape_to_string(weight_shape));
  }
  return Tensor(weight_shape, filters.values());
}

Tensor init_he(std::size_t fan_in, const Shape& shape, Rng& rng) {
  if (fan_in < 1) throw InvalidArgument("init_he: fan_in must be at least 1");
  return gaussian_tensor(shape, 2.0 / static_cast<double>(fan_in), rng);
}

Tensor init_xavier(std::size_t fan_in, std::size_t fan_out, const Shape& shape, Rng& rng) {
  if (fan_in < 1 || fan_out < 1) throw InvalidArgument("init_xavier: fan_in and fan_out must be at least 1");
  return gaussian_tensor(shape, 2.0 / static_cast<double>(fan_in + fan_out), rng);
}

SampleMatrix extract_blocks(const Tensor& image, std::size_t m, std::size_t channel) {
  if (image.rank() != 3) throw InvalidArgument("extract_blocks: expected a c×H×W image");
  const std::size_t h = image.dim(1), w = image.dim(2);
  if (channel >= image.dim(0)) throw InvalidArgument("extract_blocks: channel out of range");
  if (m < 1 || m > std::min(h, w)) {
    throw InvalidArgument("extract_blocks: block size " + std::to_string(m) + " does not fit " +
                          shape_to_string(image.shape()));
  }
  const std::size_t bh = h - m + 1, bw = w - m + 1;
  SampleMatrix blocks(bh * bw, m * m);
  for (std::size_t y = 0; y < bh; ++y) {
    for (std::size_t x = 0; x < bw; ++x) {
      auto row = blocks.row(y * bw + x);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) row[i * m + j] = image.at(channel, y + i, x + j);
      }
    }
  }
  return blocks;
}

Matrix pca_basis(std::span<const Tensor> images, std::size_t n_k, std::size_t m, bool center) {
  if (images.empty()) throw InvalidArgument("pca_init: no images");
  const Shape& shape = images.front().shape();
  if (shape.size() != 3) throw InvalidArgument("pca_init: images must be c×H×W");
  const std::size_t channels = shape[0], h = shape[1], w = shape[2];
  const std::size_t mm = m * m;
  if (m < 1 || m > std::min(h, w)) throw InvalidArgument("pca_init: block size does not fit the images");
  if (n_k < 1 || n_k > mm) {
    throw InvalidArgument("pca_init: " + std::to_string(n_k) + " filters requested but blocks have only " +
                          std::to_string(mm) + " dimensions");
  }
  for (const Tensor& image : images) {
    if (image.shape() != shape) throw InvalidArgument("pca_init: images differ in shape");
  }

  const std::size_t n = images.size();
  const std::size_t bh = h - m + 1, bw = w - m + 1;
  Matrix averaged(mm, mm);  // column j: average j-th eigenvector
  Matrix u(n, mm);
  for (std::size_t c = 0; c < channels; ++c) {
    Matrix channel_sum(mm, mm);
    for (std::size_t y = 0; y < bh; ++y) {
      for (std::size_t x = 0; x < bw; ++x) {
        for (std::size_t s = 0; s < n; ++s) {
          auto row = u.row(s);
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < m; ++j) row[i * m + j] = images[s].at(c, y + i, x + j);
          }
        }
        Matrix block = u;
        if (center) center_columns(block);
        const auto eig = numerics::sym_eigendecomposition(matmul_tn(block, block));
        for (std::size_t t = 0; t < mm * mm; ++t) channel_sum.data()[t] += eig.vectors.data()[t];
      }
    }
    const double inv_blocks = 1.0 / static_cast<double>(bh * bw);
    for (std::size_t t = 0; t < mm * mm; ++t) averaged.data()[t] += channel_sum.data()[t] * inv_blocks;
  }
  const double inv_channels = 1.0 / static_cast<double>(channels);
  for (double& v : averaged.data()) v *= inv_channels;
  return gram_schmidt_rows(averaged, n_k);
}

FilterBank pca_init(std::span<const Tensor> images, std::size_t n_k, std::size_t m, std::size_t c_in, bool center) {
  if (!images.empty() && images.front().rank() == 3 && images.front().dim(0) != c_in) {
    throw InvalidArgument("pca_init: images have " + std::to_string(images.front().dim(0)) + " channels, layer expects " +
                          std::to_string(c_in));
  }
  const Matrix basis = pca_basis(images, n_k, m, center);
  const std::size_t mm = m * m;
  FilterBank bank{Matrix(n_k, c_in * mm)};
  const double share = 1.0 / static_cast<double>(c_in);
  for (std::size_t f = 0; f < n_k; ++f) {
    auto dst = bank.filters.row(f);
    auto src = basis.row(f);
    for (std::size_t c = 0; c < c_in; ++c) {
      for (std::size_t t = 0; t < mm; ++t) dst[c * mm + t] = share * src[t];
    }
  }
  return bank;
}

FilterBank pca_init_dense(std::span<const Tensor> activations, std::size_t n_k, bool center) {
  if (activations.empty()) throw InvalidArgument("pca_init_dense: no activations");
  const std::size_t d = activations.front().size();
  const std::size_t n = activations.size();
  if (n_k < 1 || n_k > d) throw InvalidArgument("pca_init_dense: n_k must lie in [1, fan_in]");
  Matrix u(n, d);
  for (std::size_t s = 0; s < n; ++s) {
    if (activations[s].size() != d) throw InvalidArgument("pca_init_dense: activations differ in size");
    std::copy(activations[s].data().begin(), activations[s].data().end(), u.row(s).begin());
  }
  if (center) center_columns(u);

  Matrix basis(d, n_k);
  if (d <= n) {
    const auto eig = numerics::sym_eigendecomposition(matmul_tn(u, u));
    for (std::size_t r = 0; r < d; ++r) {
      for (std::size_t j = 0; j < n_k; ++j) basis(r, j) = eig.vectors(r, j);
    }
  } else {
    // Nonzero spectrum of U^T·U via the Gram matrix: v = U^T·w / sqrt(μ).
    const auto eig = numerics::sym_eigendecomposition(matmul_nt(u, u));
    const double floor = 1e-12 * std::max(eig.values.front(), 0.0);
    for (std::size_t j = 0; j < n_k; ++j) {
      const double mu = eig.values[j];
      if (!(mu > floor)) {
        throw DegenerateInput("pca_init_dense: activations span only " + std::to_string(j) + " directions, " +
                              std::to_string(n_k) + " filters requested");
      }
      const double inv = 1.0 / std::sqrt(mu);
      double largest = 0.0;
      std::size_t pivot = 0;
      for (std::size_t r = 0; r < d; ++r) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += u(i, r) * eig.vectors(i, j);
        basis(r, j) = s * inv;
        if (std::abs(basis(r, j)) > largest * (1.0 + 1e-12)) {
          largest = std::abs(basis(r, j));
          pivot = r;
        }
      }
      if (basis(pivot, j) < 0.0) {
        for (std::size_t r = 0; r < d; ++r) basis(r, j) = -basis(r, j);
      }
    }
  }
  return FilterBank{gram_schmidt_rows(basis, n_k)};
}

SampleMatrix extract_random_crops(const Tensor& activation, std::size_t m, std::size_t n, Rng& rng,
                                  std::vector<CropOffset>* offsets) {
  if (activation.rank() != 3) throw InvalidArgument("extract_random_crops: expected a c×H×W activation");
  const std::size_t c = activation.dim(0), h = activation.dim(1), w = activation.dim(2);
  if (m < 1 || m > std::min(h, w)) {
    throw InvalidArgument("extract_random_crops: crop size " + std::to_string(m) + " does not fit " +
                          shape_to_string(activation.shape()));
  }
  if (n < 1) throw InvalidArgument("extract_random_crops: need at least one crop");
  SampleMatrix crops(n, c * m * m);
  if (offsets != nullptr) offsets->clear();
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t row0 = rng.index(h - m + 1);
    const std::size_t col0 = rng.index(w - m + 1);
    if (offsets != nullptr) offsets->push_back({row0, col0});
    auto dst = crops.row(k);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) dst[(ch * m + i) * m + j] = activation.at(ch, row0 + i, col0 + j);
      }
    }
  }
  return crops;
}

SampleMatrix sample_filters(const SampleMatrix& crops, std::size_t n_k, double epsilon, Rng& rng) {
  if (crops.rows() < 2) throw InvalidArgument("data statistics need at least 2 crops");
  const auto model = numerics::GaussianModel::fit(crops);
  double spread = 0.0;
  for (std::size_t j = 0; j < model.covariance.rows(); ++j) spread += model.covariance(j, j);
  double scale = 0.0;
  for (double v : crops.data()) scale = std::max(scale, std::abs(v));
  if (!(spread > 1e-24 * scale * scale * static_cast<double>(crops.cols()))) {
    throw DegenerateInput("crops are constant: pooled variance is zero");
  }
  return numerics::sample_multivariate_gaussian(model, n_k, epsilon, rng);
}

FilterBank data_stats_init_layer(const SampleMatrix& crops, std::size_t n_k, std::size_t fan_in, double epsilon,
                                 Rng& rng, LayerTrace* trace) {
  if (crops.cols() != fan_in) {
    throw InvalidArgument("crop dimension " + std::to_string(crops.cols()) + " differs from fan_in " +
                          std::to_string(fan_in));
  }
  if (n_k < 2) throw InvalidArgument("data-statistics initialization needs at least 2 filters to whiten");
  SampleMatrix sampled = sample_filters(crops, n_k, epsilon, rng);
  SampleMatrix whitened = numerics::zca_whiten(sampled, epsilon);
  FilterBank bank{numerics::scale_to_variance(whitened, 2.0 / static_cast<double>(fan_in))};
  if (trace != nullptr) *trace = {std::move(sampled), std::move(whitened)};
  return bank;
}

nn::Network data_stats_init_network(const nn::NetworkSpec& spec, const data::Dataset& dataset,
                                    const InitConfig& config, Rng& rng, std::vector<LayerTrace>* traces) {
  config.validate();
  nn::Network net(spec);
  const std::vector<Tensor> subsample = draw_subsample(dataset, config.subsample_size, rng);
  if (traces != nullptr) traces->clear();

  const auto& affine = spec.affine_layers();
  for (std::size_t k = 1; k <= affine.size(); ++k) {
    const std::size_t li = affine[k - 1];
    const nn::LayerSpec& layer = spec.layers()[li];
    annotate_layer(li, [&] {
      const std::vector<Tensor> inputs = prefix_outputs(net, subsample, k);
      SampleMatrix crops;
      if (layer.kind == nn::LayerKind::conv2d) {
        const std::size_t per_image = config.crops_per_image;
        crops = SampleMatrix(inputs.size() * per_image, layer.incoming());
        for (std::size_t s = 0; s < inputs.size(); ++s) {
          const SampleMatrix part = extract_random_crops(inputs[s], layer.kernel, per_image, rng);
          std::copy(part.data().begin(), part.data().end(), crops.row(s * per_image).begin());
        }
      } else {
        crops = SampleMatrix(inputs.size(), layer.fan_in);
        for (std::size_t s = 0; s < inputs.size(); ++s) {
          std::copy(inputs[s].data().begin(), inputs[s].data().end(), crops.row(s).begin());
        }
      }
      LayerTrace trace;
      const FilterBank bank =
          data_stats_init_layer(crops, layer.outgoing(), layer.incoming(), config.epsilon, rng, &trace);
      net.params(li).weight = bank.to_weight(layer.weight_shape());
      net.params(li).bias = Tensor(layer.bias_shape());
      if (traces != nullptr) traces->push_back(std::move(trace));
    });
  }
  return net;
}

nn::Network pca_init_network(const nn::NetworkSpec& spec, const data::Dataset& dataset, const InitConfig& config,
                             Rng& rng) {
  config.validate();
  nn::Network net(spec);
  const std::vector<Tensor> subsample = draw_subsample(dataset, config.subsample_size, rng);
  const auto& affine = spec.affine_layers();
  for (std::size_t k = 1; k <= affine.size(); ++k) {
    const std::size_t li = affine[k - 1];
    const nn::LayerSpec& layer = spec.layers()[li];
    annotate_layer(li, [&] {
      const std::vector<Tensor> inputs = prefix_outputs(net, subsample, k);
      const FilterBank bank = layer.kind == nn::LayerKind::conv2d
                                  ? pca_init(inputs, layer.out_channels, layer.kernel, layer.in_channels,
                                             config.pca_center)
                                  : pca_init_dense(inputs, layer.fan_out, config.pca_center);
      net.params(li).weight = bank.to_weight(layer.weight_shape());
      net.params(li).bias = Tensor(layer.bias_shape());
    });
  }
  return net;
}

nn::Network initialize_network(const nn::NetworkSpec& spec, const data::Dataset& dataset, const InitConfig& config,
                               Rng& rng) {
  switch (config.scheme) {
    case Scheme::datastats: return data_stats_init_network(spec, dataset, config, rng);
    case Scheme::pca: return pca_init_network(spec, dataset, config, rng);
    case Scheme::he:
    case Scheme::xavier: break;
  }
  nn::Network net(spec);
  for (std::size_t li : spec.affine_layers()) {
    const nn::LayerSpec& layer = spec.layers()[li];
    // Glorot's fan_out for a conv layer counts every output position a filter reaches: n_k·m·m.
    const std::size_t fan_out =
        layer.kind == nn::LayerKind::conv2d ? layer.out_channels * layer.kernel * layer.kernel : layer.fan_out;
    net.params(li).weight = config.scheme == Scheme::he
                                ? init_he(layer.incoming(), layer.weight_shape(), rng)
                                : init_xavier(layer.incoming(), fan_out, layer.weight_shape(), rng);
  }
  return net;
}

std::vector<double> preactivation_stddevs(const nn::Network& network, std::span<const Tensor> inputs) {
  if (inputs.empty()) throw InvalidArgument("preactivation_stddevs: no inputs");
  const auto& affine = network.spec().affine_layers();
  std::vector<double> sum(affine.size(), 0.0), sum_sq(affine.size(), 0.0);
  std::vector<std::size_t> count(affine.size(), 0);
  for (const Tensor& input : inputs) {
    const nn::ForwardTrace trace = nn::forward_trace(network, input);
    for (std::size_t k = 0; k < affine.size(); ++k) {
      const std::size_t li = affine[k];
      const Tensor& pre = li + 1 < trace.inputs.size() ? trace.inputs[li + 1] : trace.logits;
      for (double v : pre.data()) {
        sum[k] += v;
        sum_sq[k] += v * v;
      }
      count[k] += pre.size();
    }
  }
  std::vector<double> out(affine.size());
  for (std::size_t k = 0; k < affine.size(); ++k) {
    const double n = static_cast<double>(count[k]);
    const double mean = sum[k] / n;
    out[k] = std::sqrt(std::max(0.0, sum_sq[k] / n - mean * mean));
  }
  return out;
}

double mean_abs_cosine(const Matrix& filters, std::span<const double> target) {
  if (filters.cols() != target.size()) throw InvalidArgument("mean_abs_cosine: dimension mismatch");
  if (filters.rows() == 0) throw InvalidArgument("mean_abs_cosine: no filters");
  double target_norm = 0.0;
  for (double v : target) target_norm += v * v;
  target_norm = std::sqrt(target_norm);
  double total = 0.0;
  for (std::size_t r = 0; r < filters.rows(); ++r) {
    auto row = filters.row(r);
    double dot = 0.0, norm = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      dot += row[j] * target[j];
      norm += row[j] * row[j];
    }
    const double denom = std::sqrt(norm) * target_norm;
    total += denom > 0.0 ? std::abs(dot) / denom : 0.0;
  }
  return total / static_cast<double>(filters.rows());
}

}  // namespace dsinit::init
