#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dsinit/datasets.hpp"
#include "dsinit/nn.hpp"
#include "dsinit/rng.hpp"
#include "dsinit/tensor.hpp"

namespace dsinit::init {

enum class Scheme { xavier, he, pca, datastats };

std::string to_string(Scheme scheme);
/// Throws InvalidArgument for unknown names.
Scheme parse_scheme(std::string_view name);

struct InitConfig {
  Scheme scheme = Scheme::he;
  std::size_t subsample_size = 256;  // |D̃|, drawn without replacement
  std::size_t crops_per_image = 10;
  double epsilon = 1e-5;  // sampling and whitening regularizer
  std::uint64_t seed = 0;
  bool pca_center = false;  // PCA on centered blocks instead of the raw scatter

  void validate() const;
};

/// n_k vectorized filters, one per row. Conv filters are laid out
/// channel-major then row-major, matching the conv weight tensor.
struct FilterBank {
  Matrix filters;

  Tensor to_weight(const Shape& weight_shape) const;
};

/// i.i.d. N(0, 2/fan_in).
Tensor init_he(std::size_t fan_in, const Shape& shape, Rng& rng);
/// i.i.d. N(0, 2/(fan_in + fan_out)).
Tensor init_xavier(std::size_t fan_in, std::size_t fan_out, const Shape& shape, Rng& rng);

/// Every stride-1 m×m block of one channel, raster order, one row each.
SampleMatrix extract_blocks(const Tensor& image, std::size_t m, std::size_t channel);

/// Block-averaged PCA basis: for every block position the eigenvectors of
/// U_i^T·U_i (N images × mm), sign-normalized and averaged over positions
/// and then channels, re-orthonormalized by modified Gram–Schmidt in
/// eigenvalue order. Returns the top n_k as rows of an n_k×mm matrix.
Matrix pca_basis(std::span<const Tensor> images, std::size_t n_k, std::size_t m, bool center = false);

/// Conv filters from pca_basis, each replicated over the c_in input
/// channels with weight 1/c_in.
FilterBank pca_init(std::span<const Tensor> images, std::size_t n_k, std::size_t m, std::size_t c_in,
                    bool center = false);

/// PCA for a dense layer: the whole activation vector is a single block.
/// Uses the N×N Gram matrix when the dimension exceeds the sample count.
FilterBank pca_init_dense(std::span<const Tensor> activations, std::size_t n_k, bool center = false);

struct CropOffset {
  std::size_t row = 0;
  std::size_t col = 0;
};

/// n crops of size c×m×m at uniform top-left corners (row drawn before
/// column). Each row is the channel-major, row-major vectorization.
SampleMatrix extract_random_crops(const Tensor& activation, std::size_t m, std::size_t n, Rng& rng,
                                  std::vector<CropOffset>* offsets = nullptr);

/// Fits N(mean, C) to the crops and draws n_k filters from N(mean, C + εI).
SampleMatrix sample_filters(const SampleMatrix& crops, std::size_t n_k, double epsilon, Rng& rng);

/// Intermediate matrices of one data-statistics layer initialization.
struct LayerTrace {
  SampleMatrix sampled;   // drawn from the crop Gaussian
  SampleMatrix whitened;  // after ZCA, before the variance rescale
};

/// Samples filters from the crop statistics, ZCA-whitens them across the
/// n_k samples and rescales the pooled variance to 2/fan_in.
FilterBank data_stats_init_layer(const SampleMatrix& crops, std::size_t n_k, std::size_t fan_in, double epsilon,
                                 Rng& rng, LayerTrace* trace = nullptr);

/// Layer-by-layer data-statistics initialization. Layer k sees the
/// subsample pushed through layers 1..k−1 with the weights already chosen.
/// Dense layers use each whole activation vector as a single crop.
nn::Network data_stats_init_network(const nn::NetworkSpec& spec, const data::Dataset& dataset,
                                    const InitConfig& config, Rng& rng, std::vector<LayerTrace>* traces = nullptr);

nn::Network pca_init_network(const nn::NetworkSpec& spec, const data::Dataset& dataset, const InitConfig& config,
                             Rng& rng);

/// Dispatches on config.scheme. He and Xavier ignore the dataset. Biases are 0.
nn::Network initialize_network(const nn::NetworkSpec& spec, const data::Dataset& dataset, const InitConfig& config,
                               Rng& rng);

// Diagnostics

/// Standard deviation of all pre-activation values of each affine layer
/// over the given inputs, in network order.
std::vector<double> preactivation_stddevs(const nn::Network& network, std::span<const Tensor> inputs);

/// Mean over rows of |cos(row, target)|.
double mean_abs_cosine(const Matrix& filters, std::span<const double> target);

}  // namespace dsinit::init
