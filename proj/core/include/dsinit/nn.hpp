#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dsinit/datasets.hpp"
#include "dsinit/tensor.hpp"

namespace dsinit::nn {

enum class LayerKind : std::uint8_t {
  conv2d = 0,
  dense = 1,
  relu = 2,
  maxpool2x2 = 3,
  flatten = 4,
};

std::string to_string(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  // conv2d: valid stride-1 cross-correlation.
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t in_channels = 0;  // 0: inferred from the incoming shape
  // dense
  std::size_t fan_in = 0;  // 0: inferred from the incoming shape
  std::size_t fan_out = 0;

  static LayerSpec conv2d(std::size_t out_channels, std::size_t kernel, std::size_t in_channels = 0);
  static LayerSpec dense(std::size_t fan_out, std::size_t fan_in = 0);
  static LayerSpec relu() { return {LayerKind::relu}; }
  static LayerSpec maxpool2x2() { return {LayerKind::maxpool2x2}; }
  static LayerSpec flatten() { return {LayerKind::flatten}; }

  bool is_affine() const noexcept { return kind == LayerKind::conv2d || kind == LayerKind::dense; }
  /// Incoming connections per output unit: m·m·c_in for conv, fan_in for dense.
  std::size_t incoming() const noexcept { return kind == LayerKind::conv2d ? kernel * kernel * in_channels : fan_in; }
  std::size_t outgoing() const noexcept { return kind == LayerKind::conv2d ? out_channels : fan_out; }
  Shape weight_shape() const;
  Shape bias_shape() const;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Validated layer list. Shapes are chained at construction, so a spec that
/// exists never fails a shape check during forward.
class NetworkSpec {
 public:
  NetworkSpec(std::vector<LayerSpec> layers, Shape input_shape, std::size_t class_count);

  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  const Shape& input_shape() const noexcept { return input_shape_; }
  std::size_t class_count() const noexcept { return class_count_; }

  const Shape& layer_input_shape(std::size_t layer) const { return shapes_.at(layer); }
  const Shape& layer_output_shape(std::size_t layer) const { return shapes_.at(layer + 1); }

  /// Positions in layers() of the conv/dense layers, in network order.
  const std::vector<std::size_t>& affine_layers() const noexcept { return affine_; }
  std::size_t parameter_count() const;

  friend bool operator==(const NetworkSpec& a, const NetworkSpec& b) {
    return a.layers_ == b.layers_ && a.input_shape_ == b.input_shape_ && a.class_count_ == b.class_count_;
  }

 private:
  std::vector<LayerSpec> layers_;
  Shape input_shape_;
  std::size_t class_count_;
  std::vector<Shape> shapes_;  // shapes_[i] feeds layer i; back() is the logits shape
  std::vector<std::size_t> affine_;
};

/// Weight and bias of one layer; both empty for layers without parameters.
struct Parameters {
  Tensor weight;
  Tensor bias;

  friend bool operator==(const Parameters&, const Parameters&) = default;
};

class Network {
 public:
  /// All weights and biases start at zero.
  explicit Network(NetworkSpec spec);

  const NetworkSpec& spec() const noexcept { return spec_; }
  Parameters& params(std::size_t layer) { return params_.at(layer); }
  const Parameters& params(std::size_t layer) const { return params_.at(layer); }
  std::vector<Parameters>& all_params() noexcept { return params_; }
  const std::vector<Parameters>& all_params() const noexcept { return params_; }

  friend bool operator==(const Network& a, const Network& b) {
    return a.spec_ == b.spec_ && a.params_ == b.params_;
  }

 private:
  NetworkSpec spec_;
  std::vector<Parameters> params_;
};

/// One gradient per weight/bias tensor, shapes mirroring the network.
struct GradientSet {
  std::vector<Parameters> layers;

  static GradientSet zeros_like(const Network& network);
  void add(const GradientSet& other);
  void scale(double factor);
};

/// Dense: W·x + b. Conv: valid stride-1 cross-correlation plus per-channel bias.
Tensor affine_forward(const LayerSpec& layer, const Parameters& params, const Tensor& input,
                      std::size_t layer_index = 0);
Tensor activation_forward(LayerKind kind, const Tensor& input);

struct ForwardTrace {
  std::vector<Tensor> inputs;  // inputs[i] is what layer i received
  Tensor logits;
};

ForwardTrace forward_trace(const Network& network, const Tensor& input);
Tensor forward(const Network& network, const Tensor& input);

/// Runs every layer placed before the k-th affine layer (k is 1-based) and
/// returns what that layer receives. k = 1 returns the input unchanged.
Tensor forward_prefix(const Network& network, const Tensor& input, std::size_t k);

struct LossGradient {
  double loss = 0.0;
  std::vector<double> dlogits;
};

LossGradient softmax_cross_entropy(std::span<const double> logits, std::size_t label);

struct Backprop {
  GradientSet grads;
  Tensor input_grad;  // empty unless requested
};

/// Reverse pass from an upstream gradient on the logits.
Backprop backward_from(const Network& network, const ForwardTrace& trace, std::span<const double> dlogits,
                       bool want_input_grad = false);

struct LossAndGradients {
  double loss = 0.0;
  GradientSet grads;
};

LossAndGradients backward(const Network& network, const Tensor& input, std::size_t label);

/// w ← w − lr·g for every parameter.
void sgd_step(Network& network, const GradientSet& grads, double lr);

struct Evaluation {
  double mean_loss = 0.0;
  double accuracy = 0.0;
};

/// Argmax with ties resolved to the lowest index.
std::size_t argmax(std::span<const double> values);

Evaluation evaluate(const Network& network, const data::Dataset& dataset);

/// Central differences of the cross-entropy loss w.r.t. every parameter.
/// Uses forward passes only. When `kinks` is given it receives 1.0 for every
/// component whose ±h stencil changes a ReLU sign or max-pool winner: the
/// loss is not differentiable along that stencil and the difference
/// quotient says nothing about the gradient there.
GradientSet numerical_gradients(const Network& network, const Tensor& input, std::size_t label, double h,
                                GradientSet* kinks = nullptr);

struct GradientComparison {
  double max_relative_error = 0.0;
  std::size_t worst_layer = 0;
  std::size_t worst_index = 0;
  bool worst_is_bias = false;
  std::size_t components = 0;  // compared
  std::size_t skipped = 0;     // masked out
};

/// |a − n| / max(|a|, |n|, floor), maximized over all components except
/// those flagged non-zero in `skip`.
GradientComparison compare_gradients(const GradientSet& analytic, const GradientSet& numeric, double floor = 1e-8,
                                     const GradientSet* skip = nullptr);

}  // namespace dsinit::nn
