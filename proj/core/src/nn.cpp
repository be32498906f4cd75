#include "dsinit/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dsinit/errors.hpp"

namespace dsinit::nn {

namespace {

std::string layer_label(std::size_t index, LayerKind kind) {
  return "layer " + std::to_string(index) + " (" + to_string(kind) + ")";
}

}  // namespace

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::dense: return "dense";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2x2: return "maxpool2x2";
    case LayerKind::flatten: return "flatten";
  }
  return "unknown";
}

LayerSpec LayerSpec::conv2d(std::size_t out_channels, std::size_t kernel, std::size_t in_channels) {
  LayerSpec s{LayerKind::conv2d};
  s.out_channels = out_channels;
  s.kernel = kernel;
  s.in_channels = in_channels;
  return s;
}

LayerSpec LayerSpec::dense(std::size_t fan_out, std::size_t fan_in) {
  LayerSpec s{LayerKind::dense};
  s.fan_in = fan_in;
  s.fan_out = fan_out;
  return s;
}

Shape LayerSpec::weight_shape() const {
  if (kind == LayerKind::conv2d) return {out_channels, in_channels, kernel, kernel};
  if (kind == LayerKind::dense) return {fan_out, fan_in};
  return {};
}

Shape LayerSpec::bias_shape() const {
  if (kind == LayerKind::conv2d) return {out_channels};
  if (kind == LayerKind::dense) return {fan_out};
  return {};
}

NetworkSpec::NetworkSpec(std::vector<LayerSpec> layers, Shape input_shape, std::size_t class_count)
    : layers_(std::move(layers)), input_shape_(std::move(input_shape)), class_count_(class_count) {
  if (input_shape_.size() != 3 || shape_size(input_shape_) == 0) {
    throw InvalidArgument("network input shape must be (channels, height, width) with positive sizes");
  }
  if (layers_.empty()) throw InvalidArgument("network has no layers");
  if (class_count_ == 0) throw InvalidArgument("network class_count must be positive");

  shapes_.push_back(input_shape_);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    LayerSpec& layer = layers_[i];
    const Shape& in = shapes_.back();
    const std::string where = layer_label(i, layer.kind);
    Shape out;
    switch (layer.kind) {
      case LayerKind::conv2d: {
        if (in.size() != 3) throw InvalidArgument(where + ": expects a c×H×W input, got " + shape_to_string(in));
        if (layer.in_channels == 0) layer.in_channels = in[0];
        if (layer.in_channels != in[0]) {
          throw InvalidArgument(where + ": declared " + std::to_string(layer.in_channels) +
                                " input channels, incoming tensor has " + std::to_string(in[0]));
        }
        if (layer.out_channels == 0 || layer.kernel == 0) {
          throw InvalidArgument(where + ": filter count and kernel size must be positive");
        }
        if (layer.kernel > std::min(in[1], in[2])) {
          throw InvalidArgument(where + ": kernel " + std::to_string(layer.kernel) + " exceeds spatial size " +
                                shape_to_string(in));
        }
        out = {layer.out_channels, in[1] - layer.kernel + 1, in[2] - layer.kernel + 1};
        affine_.push_back(i);
        break;
      }
      case LayerKind::dense: {
        if (in.size() != 1) {
          throw InvalidArgument(where + ": expects a flat vector, got " + shape_to_string(in) +
                                " (insert a flatten layer)");
        }
        if (layer.fan_in == 0) layer.fan_in = in[0];
        if (layer.fan_in != in[0]) {
          throw InvalidArgument(where + ": declared fan_in " + std::to_string(layer.fan_in) + ", incoming size " +
                                std::to_string(in[0]));
        }
        if (layer.fan_out == 0) throw InvalidArgument(where + ": fan_out must be positive");
        out = {layer.fan_out};
        affine_.push_back(i);
        break;
      }
      case LayerKind::relu:
        out = in;
        break;
      case LayerKind::maxpool2x2:
        if (in.size() != 3 || in[1] % 2 != 0 || in[2] % 2 != 0) {
          throw InvalidArgument(where + ": needs even spatial dimensions, got " + shape_to_string(in));
        }
        out = {in[0], in[1] / 2, in[2] / 2};
        break;
      case LayerKind::flatten:
        out = {shape_size(in)};
        break;
    }
    shapes_.push_back(std::move(out));
  }

  const LayerSpec& last = layers_.back();
  if (last.kind != LayerKind::dense || last.fan_out != class_count_) {
    throw InvalidArgument("final layer must be dense with fan_out equal to class_count " +
                          std::to_string(class_count_));
  }
}

std::size_t NetworkSpec::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t i : affine_) n += shape_size(layers_[i].weight_shape()) + shape_size(layers_[i].bias_shape());
  return n;
}

Network::Network(NetworkSpec spec) : spec_(std::move(spec)) {
  params_.resize(spec_.layers().size());
  for (std::size_t i : spec_.affine_layers()) {
    const LayerSpec& layer = spec_.layers()[i];
    params_[i] = {Tensor(layer.weight_shape()), Tensor(layer.bias_shape())};
  }
}

GradientSet GradientSet::zeros_like(const Network& network) {
  GradientSet g;
  g.layers.resize(network.all_params().size());
  for (std::size_t i : network.spec().affine_layers()) {
    const Parameters& p = network.params(i);
    g.layers[i] = {Tensor(p.weight.shape()), Tensor(p.bias.shape())};
  }
  return g;
}

void GradientSet::add(const GradientSet& other) {
  if (other.layers.size() != layers.size()) throw InvalidArgument("GradientSet::add: layer count mismatch");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& w = layers[i].weight.values();
    auto& b = layers[i].bias.values();
    const auto& ow = other.layers[i].weight.values();
    const auto& ob = other.layers[i].bias.values();
    if (w.size() != ow.size() || b.size() != ob.size()) throw InvalidArgument("GradientSet::add: shape mismatch");
    for (std::size_t k = 0; k < w.size(); ++k) w[k] += ow[k];
    for (std::size_t k = 0; k < b.size(); ++k) b[k] += ob[k];
  }
}

void GradientSet::scale(double factor) {
  for (auto& p : layers) {
    for (double& v : p.weight.data()) v *= factor;
    for (double& v : p.bias.data()) v *= factor;
  }
}

Tensor affine_forward(const LayerSpec& layer, const Parameters& params, const Tensor& input,
                      std::size_t layer_index) {
  const std::string where = layer_label(layer_index, layer.kind);
  if (layer.kind == LayerKind::dense) {
    if (input.rank() != 1 || input.dim(0) != layer.fan_in) {
      throw InvalidArgument(where + ": input shape " + shape_to_string(input.shape()) + " does not match fan_in " +
                            std::to_string(layer.fan_in));
    }
    Tensor out(Shape{layer.fan_out});
    const auto x = input.data();
    const auto w = params.weight.data();
    for (std::size_t o = 0; o < layer.fan_out; ++o) {
      double s = params.bias[o];
      const double* wr = w.data() + o * layer.fan_in;
      for (std::size_t i = 0; i < layer.fan_in; ++i) s += wr[i] * x[i];
      out[o] = s;
    }
    return out;
  }
  if (layer.kind != LayerKind::conv2d) throw InvalidArgument(where + ": not an affine layer");

  if (input.rank() != 3 || input.dim(0) != layer.in_channels || input.dim(1) < layer.kernel ||
      input.dim(2) < layer.kernel) {
    throw InvalidArgument(where + ": input shape " + shape_to_string(input.shape()) + " does not fit " +
                          std::to_string(layer.in_channels) + " channels with kernel " + std::to_string(layer.kernel));
  }
  const std::size_t m = layer.kernel;
  const std::size_t h = input.dim(1);
  const std::size_t w = input.dim(2);
  const std::size_t oh = h - m + 1;
  const std::size_t ow = w - m + 1;
  Tensor out(Shape{layer.out_channels, oh, ow});
  const double* in = input.data().data();
  const double* weights = params.weight.data().data();
  for (std::size_t o = 0; o < layer.out_channels; ++o) {
    double* dst = out.data().data() + o * oh * ow;
    std::fill(dst, dst + oh * ow, params.bias[o]);
    for (std::size_t c = 0; c < layer.in_channels; ++c) {
      const double* plane = in + c * h * w;
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
          const double k = weights[((o * layer.in_channels + c) * m + i) * m + j];
          for (std::size_t y = 0; y < oh; ++y) {
            const double* src = plane + (y + i) * w + j;
            double* row = dst + y * ow;
            for (std::size_t x = 0; x < ow; ++x) row[x] += k * src[x];
          }
        }
      }
    }
  }
  return out;
}

Tensor activation_forward(LayerKind kind, const Tensor& input) {
  switch (kind) {
    case LayerKind::relu: {
      Tensor out = input;
      for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
      return out;
    }
    case LayerKind::maxpool2x2: {
      if (input.rank() != 3 || input.dim(1) % 2 != 0 || input.dim(2) % 2 != 0) {
        throw InvalidArgument("maxpool2x2: needs a c×H×W input with even H and W, got " +
                              shape_to_string(input.shape()));
      }
      const std::size_t c = input.dim(0), h = input.dim(1) / 2, w = input.dim(2) / 2;
      Tensor out(Shape{c, h, w});
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t x = 0; x < w; ++x) {
            out.at(ch, y, x) = std::max({input.at(ch, 2 * y, 2 * x), input.at(ch, 2 * y, 2 * x + 1),
                                         input.at(ch, 2 * y + 1, 2 * x), input.at(ch, 2 * y + 1, 2 * x + 1)});
          }
        }
      }
      return out;
    }
    case LayerKind::flatten:
      return input.reshaped(Shape{input.size()});
    default:
      throw InvalidArgument("activation_forward: " + to_string(kind) + " is not an activation");
  }
}

namespace {

Tensor layer_forward(const Network& network, std::size_t i, const Tensor& input) {
  const LayerSpec& layer = network.spec().layers()[i];
  if (layer.is_affine()) return affine_forward(layer, network.params(i), input, i);
  return activation_forward(layer.kind, input);
}

void require_input_shape(const Network& network, const Tensor& input) {
  if (input.shape() != network.spec().input_shape()) {
    throw InvalidArgument("network input has shape " + shape_to_string(input.shape()) + ", expected " +
                          shape_to_string(network.spec().input_shape()));
  }
}

}  // namespace

ForwardTrace forward_trace(const Network& network, const Tensor& input) {
  require_input_shape(network, input);
  ForwardTrace trace;
  const std::size_t n = network.spec().layers().size();
  trace.inputs.reserve(n);
  trace.inputs.push_back(input);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor out = layer_forward(network, i, trace.inputs.back());
    if (i + 1 < n) {
      trace.inputs.push_back(std::move(out));
    } else {
      trace.logits = std::move(out);
    }
  }
  return trace;
}

Tensor forward(const Network& network, const Tensor& input) {
  require_input_shape(network, input);
  Tensor x = input;
  for (std::size_t i = 0; i < network.spec().layers().size(); ++i) x = layer_forward(network, i, x);
  return x;
}

Tensor forward_prefix(const Network& network, const Tensor& input, std::size_t k) {
  const auto& affine = network.spec().affine_layers();
  if (k < 1 || k > affine.size()) {
    throw InvalidArgument("forward_prefix: k=" + std::to_string(k) + " outside [1, " +
                          std::to_string(affine.size()) + "]");
  }
  require_input_shape(network, input);
  Tensor x = input;
  for (std::size_t i = 0; i < affine[k - 1]; ++i) x = layer_forward(network, i, x);
  return x;
}

LossGradient softmax_cross_entropy(std::span<const double> logits, std::size_t label) {
  if (logits.empty()) throw InvalidArgument("softmax_cross_entropy: no logits");
  if (label >= logits.size()) {
    throw InvalidArgument("softmax_cross_entropy: label " + std::to_string(label) + " outside [0, " +
                          std::to_string(logits.size()) + ")");
  }
  const double top = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  std::vector<double> p(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - top);
    sum += p[i];
  }
  LossGradient out;
  out.loss = std::log(sum) - (logits[label] - top);
  for (double& v : p) v /= sum;
  p[label] -= 1.0;
  out.dlogits = std::move(p);
  return out;
}

Backprop backward_from(const Network& network, const ForwardTrace& trace, std::span<const double> dlogits,
                       bool want_input_grad) {
  const auto& layers = network.spec().layers();
  if (dlogits.size() != network.spec().class_count()) throw InvalidArgument("backward_from: dlogits size mismatch");

  Backprop result{GradientSet::zeros_like(network), Tensor()};
  Tensor upstream(Shape{dlogits.size()}, std::vector<double>(dlogits.begin(), dlogits.end()));
  const std::size_t first_affine = network.spec().affine_layers().front();

  for (std::size_t li = layers.size(); li-- > 0;) {
    const LayerSpec& layer = layers[li];
    const Tensor& in = trace.inputs[li];
    const bool need_down = want_input_grad || li > first_affine;
    Tensor down;
    switch (layer.kind) {
      case LayerKind::dense: {
        const Parameters& p = network.params(li);
        Parameters& g = result.grads.layers[li];
        const auto x = in.data();
        for (std::size_t o = 0; o < layer.fan_out; ++o) {
          const double d = upstream[o];
          g.bias[o] = d;
          if (d == 0.0) continue;
          double* gw = g.weight.data().data() + o * layer.fan_in;
          for (std::size_t i = 0; i < layer.fan_in; ++i) gw[i] = d * x[i];
        }
        if (need_down) {
          down = Tensor(in.shape());
          for (std::size_t o = 0; o < layer.fan_out; ++o) {
            const double d = upstream[o];
            if (d == 0.0) continue;
            const double* wr = p.weight.data().data() + o * layer.fan_in;
            for (std::size_t i = 0; i < layer.fan_in; ++i) down[i] += wr[i] * d;
          }
        }
        break;
      }
      case LayerKind::conv2d: {
        const Parameters& p = network.params(li);
        Parameters& g = result.grads.layers[li];
        const std::size_t m = layer.kernel, cin = layer.in_channels;
        const std::size_t h = in.dim(1), w = in.dim(2);
        const std::size_t oh = h - m + 1, ow = w - m + 1;
        if (need_down) down = Tensor(in.shape());
        for (std::size_t o = 0; o < layer.out_channels; ++o) {
          const double* dout = upstream.data().data() + o * oh * ow;
          double bsum = 0.0;
          for (std::size_t t = 0; t < oh * ow; ++t) bsum += dout[t];
          g.bias[o] = bsum;
          for (std::size_t c = 0; c < cin; ++c) {
            const double* plane = in.data().data() + c * h * w;
            double* dplane = need_down ? down.data().data() + c * h * w : nullptr;
            for (std::size_t i = 0; i < m; ++i) {
              for (std::size_t j = 0; j < m; ++j) {
                const std::size_t widx = ((o * cin + c) * m + i) * m + j;
                const double k = p.weight[widx];
                double acc = 0.0;
                for (std::size_t y = 0; y < oh; ++y) {
                  const double* src = plane + (y + i) * w + j;
                  const double* drow = dout + y * ow;
                  for (std::size_t x = 0; x < ow; ++x) acc += drow[x] * src[x];
                  if (dplane != nullptr) {
                    double* dst = dplane + (y + i) * w + j;
                    for (std::size_t x = 0; x < ow; ++x) dst[x] += k * drow[x];
                  }
                }
                g.weight[widx] = acc;
              }
            }
          }
        }
        break;
      }
      case LayerKind::relu: {
        down = upstream;
        for (std::size_t t = 0; t < down.size(); ++t) {
          if (!(in[t] > 0.0)) down[t] = 0.0;
        }
        break;
      }
      case LayerKind::maxpool2x2: {
        down = Tensor(in.shape());
        const std::size_t c = in.dim(0), h = in.dim(1) / 2, w = in.dim(2) / 2;
        for (std::size_t ch = 0; ch < c; ++ch) {
          for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
              // First row-major maximum wins.
              std::size_t by = 2 * y, bx = 2 * x;
              for (std::size_t dy = 0; dy < 2; ++dy) {
                for (std::size_t dx = 0; dx < 2; ++dx) {
                  if (in.at(ch, 2 * y + dy, 2 * x + dx) > in.at(ch, by, bx)) {
                    by = 2 * y + dy;
                    bx = 2 * x + dx;
                  }
                }
              }
              down.at(ch, by, bx) += upstream.at(ch, y, x);
            }
          }
        }
        break;
      }
      case LayerKind::flatten:
        down = upstream.reshaped(in.shape());
        break;
    }
    if (li == 0) {
      if (want_input_grad) result.input_grad = std::move(down);
      break;
    }
    if (!need_down) break;
    upstream = std::move(down);
  }
  return result;
}

LossAndGradients backward(const Network& network, const Tensor& input, std::size_t label) {
  const ForwardTrace trace = forward_trace(network, input);
  LossGradient lg = softmax_cross_entropy(trace.logits.data(), label);
  Backprop bp = backward_from(network, trace, lg.dlogits);
  return {lg.loss, std::move(bp.grads)};
}

void sgd_step(Network& network, const GradientSet& grads, double lr) {
  if (!(lr > 0.0)) throw InvalidArgument("sgd_step: learning rate must be positive");
  auto& params = network.all_params();
  if (grads.layers.size() != params.size()) throw InvalidArgument("sgd_step: gradient set does not match network");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i].weight.values();
    auto& b = params[i].bias.values();
    const auto& gw = grads.layers[i].weight.values();
    const auto& gb = grads.layers[i].bias.values();
    if (w.size() != gw.size() || b.size() != gb.size()) throw InvalidArgument("sgd_step: gradient shape mismatch");
    for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr * gw[k];
    for (std::size_t k = 0; k < b.size(); ++k) b[k] -= lr * gb[k];
  }
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

Evaluation evaluate(const Network& network, const data::Dataset& dataset) {
  if (dataset.size() == 0) throw InvalidArgument("evaluate: empty dataset");
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const Tensor logits = forward(network, dataset.images[i]);
    loss += softmax_cross_entropy(logits.data(), dataset.labels[i]).loss;
    if (argmax(logits.data()) == dataset.labels[i]) ++correct;
  }
  const auto n = static_cast<double>(dataset.size());
  return {loss / n, static_cast<double>(correct) / n};
}

namespace {

// ReLU on/off bits and max-pool winners of one forward pass. Two inputs with
// equal patterns lie on the same linear piece of the network.
std::vector<std::uint8_t> switching_pattern(const Network& network, const ForwardTrace& trace) {
  std::vector<std::uint8_t> bits;
  const auto& layers = network.spec().layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Tensor& in = trace.inputs[i];
    if (layers[i].kind == LayerKind::relu) {
      for (double v : in.data()) bits.push_back(v > 0.0);
    } else if (layers[i].kind == LayerKind::maxpool2x2) {
      const std::size_t c = in.dim(0), h = in.dim(1) / 2, w = in.dim(2) / 2;
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t x = 0; x < w; ++x) {
            std::uint8_t best = 0;
            double top = in.at(ch, 2 * y, 2 * x);
            for (std::uint8_t q = 1; q < 4; ++q) {
              const double v = in.at(ch, 2 * y + q / 2, 2 * x + q % 2);
              if (v > top) {
                top = v;
                best = q;
              }
            }
            bits.push_back(best);
          }
        }
      }
    }
  }
  return bits;
}

}  // namespace

GradientSet numerical_gradients(const Network& network, const Tensor& input, std::size_t label, double h,
                                GradientSet* kinks) {
  if (!(h > 0.0)) throw InvalidArgument("numerical_gradients: step must be positive");
  Network probe = network;
  GradientSet g = GradientSet::zeros_like(network);
  if (kinks != nullptr) *kinks = GradientSet::zeros_like(network);
  const auto base = kinks != nullptr ? switching_pattern(network, forward_trace(network, input))
                                     : std::vector<std::uint8_t>{};
  bool crossed = false;
  auto loss_at = [&] {
    if (kinks == nullptr) return softmax_cross_entropy(forward(probe, input).data(), label).loss;
    const ForwardTrace trace = forward_trace(probe, input);
    crossed = crossed || switching_pattern(probe, trace) != base;
    return softmax_cross_entropy(trace.logits.data(), label).loss;
  };
  for (std::size_t li : network.spec().affine_layers()) {
    for (int which = 0; which < 2; ++which) {
      auto& values = which == 0 ? probe.params(li).weight.values() : probe.params(li).bias.values();
      auto& out = which == 0 ? g.layers[li].weight.values() : g.layers[li].bias.values();
      for (std::size_t k = 0; k < values.size(); ++k) {
        const double saved = values[k];
        crossed = false;
        values[k] = saved + h;
        const double up = loss_at();
        values[k] = saved - h;
        const double down = loss_at();
        values[k] = saved;
        out[k] = (up - down) / (2.0 * h);
        if (crossed) {
          auto& flag = which == 0 ? kinks->layers[li].weight : kinks->layers[li].bias;
          flag[k] = 1.0;
        }
      }
    }
  }
  return g;
}

GradientComparison compare_gradients(const GradientSet& analytic, const GradientSet& numeric, double floor,
                                     const GradientSet* skip) {
  if (analytic.layers.size() != numeric.layers.size()) throw InvalidArgument("compare_gradients: layer mismatch");
  if (skip != nullptr && skip->layers.size() != analytic.layers.size()) {
    throw InvalidArgument("compare_gradients: skip mask layer mismatch");
  }
  GradientComparison cmp;
  for (std::size_t li = 0; li < analytic.layers.size(); ++li) {
    for (int which = 0; which < 2; ++which) {
      const auto& a = which == 0 ? analytic.layers[li].weight.values() : analytic.layers[li].bias.values();
      const auto& n = which == 0 ? numeric.layers[li].weight.values() : numeric.layers[li].bias.values();
      if (a.size() != n.size()) throw InvalidArgument("compare_gradients: shape mismatch");
      const std::vector<double>* mask = nullptr;
      if (skip != nullptr) {
        mask = which == 0 ? &skip->layers[li].weight.values() : &skip->layers[li].bias.values();
        if (mask->size() != a.size()) throw InvalidArgument("compare_gradients: skip mask shape mismatch");
      }
      for (std::size_t k = 0; k < a.size(); ++k) {
        if (mask != nullptr && (*mask)[k] != 0.0) {
          ++cmp.skipped;
          continue;
        }
        const double denom = std::max({std::abs(a[k]), std::abs(n[k]), floor});
        const double rel = std::abs(a[k] - n[k]) / denom;
        ++cmp.components;
        if (rel > cmp.max_relative_error) {
          cmp.max_relative_error = rel;
          cmp.worst_layer = li;
          cmp.worst_index = k;
          cmp.worst_is_bias = which == 1;
        }
      }
    }
  }
  return cmp;
}

}  // namespace dsinit::nn
