#pragma once

// Minimal convolutional network engine: an ordered layer graph with named
// hook points, a capture-everything forward pass, and a backward pass whose
// activation rules can be rewritten (standard / guided / deconvolution).
// Hooks are observational: they copy the activation and the upstream
// gradient at the identical network point and never perturb the values that
// flow onward.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "salforge/errors.hpp"
#include "salforge/kernels.hpp"
#include "salforge/parallel.hpp"
#include "salforge/rng.hpp"
#include "salforge/tensor.hpp"

namespace salforge {

enum class LayerKind { Conv, BatchNorm, Activation, MaxPool, Gap, Fc };
enum class ActivationFamily { Relu, Silu };
enum class GradMode { Standard, Guided, Deconv };
enum class RandScheme { FullyRandom, SemiRandom, TrainedLoad };

inline std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::BatchNorm: return "batchnorm";
    case LayerKind::Activation: return "activation";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Gap: return "gap";
    case LayerKind::Fc: return "fc";
  }
  return "?";
}

inline LayerKind layer_kind_from_string(const std::string& s) {
  if (s == "conv") return LayerKind::Conv;
  if (s == "batchnorm") return LayerKind::BatchNorm;
  if (s == "activation") return LayerKind::Activation;
  if (s == "maxpool") return LayerKind::MaxPool;
  if (s == "gap") return LayerKind::Gap;
  if (s == "fc") return LayerKind::Fc;
  throw ConfigError("unknown layer kind '" + s + "'");
}

inline std::string to_string(ActivationFamily family) {
  return family == ActivationFamily::Relu ? "relu" : "silu";
}

inline ActivationFamily activation_family_from_string(const std::string& s) {
  if (s == "relu") return ActivationFamily::Relu;
  if (s == "silu") return ActivationFamily::Silu;
  throw ConfigError("unknown activation family '" + s + "'");
}

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::Conv;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 0;
  int stride = 1;
  int pad = 0;
  ActivationFamily family = ActivationFamily::Relu;
  bool hookable = false;
};

struct ModelConfig {
  std::string variant = "micro-res";  // micro-res | micro-eff | custom
  std::size_t input_size = 64;
  std::uint64_t init_seed = 1;
  std::vector<LayerSpec> custom_layers;
  ActivationFamily custom_family = ActivationFamily::Relu;
};

struct Model {
  std::string variant;
  std::vector<LayerSpec> layers;
  std::map<std::string, Tensor> params;   // <layer>.weight/.bias/.gamma/.beta
  std::map<std::string, Tensor> running;  // <layer>.running_mean/.running_var
  ActivationFamily activation_family = ActivationFamily::Relu;
  std::size_t input_size = 64;
  bool train_mode = false;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  const LayerSpec* find_layer(const std::string& name) const {
    for (const auto& layer : layers) {
      if (layer.name == name) return &layer;
    }
    return nullptr;
  }

  std::vector<std::string> hookable_layers() const {
    std::vector<std::string> out;
    for (const auto& layer : layers) {
      if (layer.hookable) out.push_back(layer.name);
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Activations

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double silu(double x) { return x * sigmoid(x); }

// d/dx [x * sigmoid(x)] = sigmoid(x) + x * sigmoid(x) * (1 - sigmoid(x)).
inline double silu_derivative(double x) {
  const double s = sigmoid(x);
  return s + x * s * (1.0 - s);
}

// Elementwise backward rule of an activation layer.
//
// `h` is the tensor the rule is evaluated at:
//   standard: ReLU masks by (h > 0) where h is the layer output; SiLU expects
//             the layer's pre-activation input and multiplies by its
//             derivative there.
//   guided:   h is the layer *output*; ReLU keeps positions where both the
//             output and the upstream gradient are positive; SiLU multiplies
//             by the derivative expression evaluated at the output and,
//             verbatim per the method's definition, at the upstream gradient
//             itself.
//   deconv:   masks by the upstream gradient only; h is ignored for ReLU and
//             unused sign-wise for SiLU (derivative of g applied to g).
inline Tensor activation_backward(ActivationFamily family, GradMode mode,
                                  const Tensor& h, const Tensor& g) {
  require_same_shape(h, g, "activation_backward");
  Tensor out(g.shape());
  const std::size_t n = g.size();
  if (family == ActivationFamily::Relu) {
    switch (mode) {
      case GradMode::Standard:
        for (std::size_t i = 0; i < n; ++i) out[i] = h[i] > 0.0 ? g[i] : 0.0;
        break;
      case GradMode::Guided:
        for (std::size_t i = 0; i < n; ++i)
          out[i] = (h[i] > 0.0 && g[i] > 0.0) ? g[i] : 0.0;
        break;
      case GradMode::Deconv:
        for (std::size_t i = 0; i < n; ++i) out[i] = g[i] > 0.0 ? g[i] : 0.0;
        break;
    }
  } else {
    switch (mode) {
      case GradMode::Standard:
        for (std::size_t i = 0; i < n; ++i) out[i] = silu_derivative(h[i]) * g[i];
        break;
      case GradMode::Guided:
        for (std::size_t i = 0; i < n; ++i)
          out[i] = silu_derivative(h[i]) * silu_derivative(g[i]) * g[i];
        break;
      case GradMode::Deconv:
        for (std::size_t i = 0; i < n; ++i) out[i] = silu_derivative(g[i]) * g[i];
        break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model construction

namespace detail {

inline std::vector<LayerSpec> stock_layers(ActivationFamily family) {
  std::vector<LayerSpec> layers;
  auto conv = [&](const std::string& name, int in, int out) {
    LayerSpec s;
    s.name = name;
    s.kind = LayerKind::Conv;
    s.in_channels = in;
    s.out_channels = out;
    s.kernel = 3;
    s.stride = 1;
    s.pad = 1;
    layers.push_back(s);
  };
  auto bn = [&](const std::string& name, int ch) {
    LayerSpec s;
    s.name = name;
    s.kind = LayerKind::BatchNorm;
    s.in_channels = ch;
    s.out_channels = ch;
    layers.push_back(s);
  };
  auto act = [&](const std::string& name, int ch) {
    LayerSpec s;
    s.name = name;
    s.kind = LayerKind::Activation;
    s.in_channels = ch;
    s.out_channels = ch;
    s.family = family;
    s.hookable = true;
    layers.push_back(s);
  };
  auto pool = [&](const std::string& name, int ch) {
    LayerSpec s;
    s.name = name;
    s.kind = LayerKind::MaxPool;
    s.in_channels = ch;
    s.out_channels = ch;
    layers.push_back(s);
  };

  conv("block1.conv", 1, 8);
  bn("block1.bn", 8);
  act("block1.act", 8);
  pool("pool1", 8);
  conv("block2.conv", 8, 16);
  bn("block2.bn", 16);
  act("block2.act", 16);
  pool("pool2", 16);
  conv("block3.conv", 16, 32);
  bn("block3.bn", 32);
  act("block3.act", 32);
  conv("block4.conv", 32, 32);
  bn("block4.bn", 32);
  act("block4.act", 32);

  LayerSpec gap;
  gap.name = "gap";
  gap.kind = LayerKind::Gap;
  gap.in_channels = 32;
  gap.out_channels = 32;
  gap.hookable = true;
  layers.push_back(gap);

  LayerSpec fc;
  fc.name = "fc";
  fc.kind = LayerKind::Fc;
  fc.in_channels = 32;
  fc.out_channels = 2;
  fc.hookable = true;
  layers.push_back(fc);
  return layers;
}

inline void he_init_weight(Tensor& w, std::size_t fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = stddev * rng.normal();
}

}  // namespace detail

inline void validate_layers(const std::vector<LayerSpec>& layers) {
  std::set<std::string> names;
  int channels = 1;
  for (const auto& layer : layers) {
    if (!names.insert(layer.name).second) {
      throw ConfigError("duplicate layer name '" + layer.name + "'");
    }
    if (layer.in_channels != channels) {
      throw ConfigError("layer '" + layer.name + "' expects " +
                        std::to_string(layer.in_channels) +
                        " input channels, previous layer provides " +
                        std::to_string(channels));
    }
    channels = layer.out_channels;
  }
  if (layers.empty() || layers.back().kind != LayerKind::Fc) {
    throw ConfigError("model must end in an fc layer");
  }
}

// Allocates and He-initializes all parameters; BN stats start at (0, 1).
inline Model build_model(const ModelConfig& config) {
  Model model;
  model.variant = config.variant;
  model.input_size = config.input_size;
  if (config.input_size < 8 || config.input_size % 4 != 0) {
    throw ConfigError("input_size must be a multiple of 4 and >= 8");
  }
  if (config.variant == "micro-res") {
    model.activation_family = ActivationFamily::Relu;
    model.layers = detail::stock_layers(model.activation_family);
  } else if (config.variant == "micro-eff") {
    model.activation_family = ActivationFamily::Silu;
    model.layers = detail::stock_layers(model.activation_family);
  } else if (config.variant == "custom") {
    model.activation_family = config.custom_family;
    model.layers = config.custom_layers;
  } else {
    throw ConfigError("unknown model variant '" + config.variant + "'");
  }
  validate_layers(model.layers);

  Rng rng(config.init_seed);
  for (const auto& layer : model.layers) {
    switch (layer.kind) {
      case LayerKind::Conv: {
        Tensor w({static_cast<std::size_t>(layer.out_channels),
                  static_cast<std::size_t>(layer.in_channels),
                  static_cast<std::size_t>(layer.kernel),
                  static_cast<std::size_t>(layer.kernel)});
        detail::he_init_weight(
            w, static_cast<std::size_t>(layer.in_channels) * layer.kernel *
                   layer.kernel,
            rng);
        model.params[layer.name + ".weight"] = std::move(w);
        model.params[layer.name + ".bias"] =
            Tensor({static_cast<std::size_t>(layer.out_channels)});
        break;
      }
      case LayerKind::BatchNorm: {
        const std::size_t ch = static_cast<std::size_t>(layer.out_channels);
        model.params[layer.name + ".gamma"] = Tensor({ch}, 1.0);
        model.params[layer.name + ".beta"] = Tensor({ch});
        model.running[layer.name + ".running_mean"] = Tensor({ch});
        model.running[layer.name + ".running_var"] = Tensor({ch}, 1.0);
        break;
      }
      case LayerKind::Fc: {
        Tensor w({static_cast<std::size_t>(layer.out_channels),
                  static_cast<std::size_t>(layer.in_channels)});
        detail::he_init_weight(w, static_cast<std::size_t>(layer.in_channels),
                               rng);
        model.params[layer.name + ".weight"] = std::move(w);
        model.params[layer.name + ".bias"] =
            Tensor({static_cast<std::size_t>(layer.out_channels)});
        break;
      }
      default:
        break;
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// Forward / backward

// Everything the backward pass needs, captured layer by layer. Batched
// activation tensors are {B,K,H,W}; gap emits {B,K} and fc {B,out}.
struct LayerState {
  Tensor output;
  std::vector<double> bn_mean;  // statistics actually used (batch or running)
  std::vector<double> bn_rstd;
  std::vector<std::size_t> pool_argmax;  // flat indices into this layer input
};

struct Trace {
  Tensor input;  // {B,1,H,W}
  std::vector<LayerState> layers;
  Tensor logits;  // {B,out}
  bool train_mode = false;
};

struct HookEntry {
  Tensor activation;  // x~_out at the hook point, {K',H',W'}
  Tensor gradient;    // g_out at the identical point, filled by backward
  bool has_gradient = false;
};

struct HookRecord {
  std::map<std::string, HookEntry> entries;
  std::shared_ptr<Trace> trace;  // internal: enables backward on this record

  bool empty() const { return entries.empty(); }
  bool has(const std::string& name) const { return entries.count(name) > 0; }
  const HookEntry& at(const std::string& name) const {
    auto it = entries.find(name);
    if (it == entries.end()) {
      throw StateError("no hook captured for layer '" + name + "'");
    }
    return it->second;
  }
};

namespace detail {

inline Tensor slice_sample(const Tensor& batch, std::size_t b) {
  // {B,K,H,W} -> {K,H,W}
  const std::size_t k = batch.extent(1);
  const std::size_t h = batch.extent(2);
  const std::size_t w = batch.extent(3);
  Tensor out({k, h, w});
  const std::size_t stride = k * h * w;
  std::copy(batch.data() + b * stride, batch.data() + (b + 1) * stride,
            out.data());
  return out;
}

inline void place_sample(Tensor& batch, std::size_t b, const Tensor& sample) {
  const std::size_t stride = sample.size();
  std::copy(sample.data(), sample.data() + stride,
            batch.data() + b * stride);
}

// Shared by train- and eval-mode entry points; `mutable_running` is non-null
// only when running statistics should be updated (train mode).
inline Tensor forward_impl(const Model& model, const Tensor& input,
                           Trace& trace,
                           std::map<std::string, Tensor>* mutable_running) {
  if (input.rank() != 4 || input.extent(1) != 1 ||
      input.extent(2) != model.input_size ||
      input.extent(3) != model.input_size) {
    throw DimensionError("forward: expected input {B,1," +
                         std::to_string(model.input_size) + "," +
                         std::to_string(model.input_size) + "}, got " +
                         input.shape_string());
  }
  const std::size_t batch = input.extent(0);
  trace.input = input;
  trace.layers.clear();
  trace.layers.resize(model.layers.size());
  trace.train_mode = model.train_mode;

  const Tensor* current = &trace.input;
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const LayerSpec& layer = model.layers[li];
    LayerState& state = trace.layers[li];
    const Tensor& x = *current;
    switch (layer.kind) {
      case LayerKind::Conv: {
        const Tensor& w = model.params.at(layer.name + ".weight");
        const Tensor& b = model.params.at(layer.name + ".bias");
        const std::size_t out_h =
            conv_out_extent(x.extent(2), layer.kernel, layer.stride, layer.pad);
        const std::size_t out_w =
            conv_out_extent(x.extent(3), layer.kernel, layer.stride, layer.pad);
        Tensor out({batch, static_cast<std::size_t>(layer.out_channels),
                    out_h, out_w});
        parallel_for(batch, [&](std::size_t bi) {
          const Tensor sample = slice_sample(x, bi);
          place_sample(out, bi,
                       conv2d_forward(sample, w, b, layer.stride, layer.pad));
        });
        state.output = std::move(out);
        break;
      }
      case LayerKind::BatchNorm: {
        const Tensor& gamma = model.params.at(layer.name + ".gamma");
        const Tensor& beta = model.params.at(layer.name + ".beta");
        const std::size_t ch = x.extent(1);
        const std::size_t plane = x.extent(2) * x.extent(3);
        const std::size_t m = batch * plane;
        state.bn_mean.assign(ch, 0.0);
        state.bn_rstd.assign(ch, 0.0);
        std::vector<double> var(ch, 0.0);
        if (model.train_mode) {
          for (std::size_t c = 0; c < ch; ++c) {
            double sum = 0.0;
            for (std::size_t bi = 0; bi < batch; ++bi) {
              const double* p = x.data() + (bi * ch + c) * plane;
              for (std::size_t i = 0; i < plane; ++i) sum += p[i];
            }
            const double mean = sum / static_cast<double>(m);
            double sq = 0.0;
            for (std::size_t bi = 0; bi < batch; ++bi) {
              const double* p = x.data() + (bi * ch + c) * plane;
              for (std::size_t i = 0; i < plane; ++i) {
                const double d = p[i] - mean;
                sq += d * d;
              }
            }
            const double v = sq / static_cast<double>(m);
            state.bn_mean[c] = mean;
            var[c] = v;
            state.bn_rstd[c] = 1.0 / std::sqrt(v + model.bn_eps);
          }
          if (mutable_running != nullptr) {
            Tensor& rmean = mutable_running->at(layer.name + ".running_mean");
            Tensor& rvar = mutable_running->at(layer.name + ".running_var");
            for (std::size_t c = 0; c < ch; ++c) {
              rmean[c] = (1.0 - model.bn_momentum) * rmean[c] +
                         model.bn_momentum * state.bn_mean[c];
              rvar[c] = (1.0 - model.bn_momentum) * rvar[c] +
                        model.bn_momentum * var[c];
            }
          }
        } else {
          const Tensor& rmean = model.running.at(layer.name + ".running_mean");
          const Tensor& rvar = model.running.at(layer.name + ".running_var");
          for (std::size_t c = 0; c < ch; ++c) {
            state.bn_mean[c] = rmean[c];
            state.bn_rstd[c] = 1.0 / std::sqrt(rvar[c] + model.bn_eps);
          }
        }
        Tensor out(x.shape());
        for (std::size_t bi = 0; bi < batch; ++bi) {
          for (std::size_t c = 0; c < ch; ++c) {
            const double* p = x.data() + (bi * ch + c) * plane;
            double* q = out.data() + (bi * ch + c) * plane;
            const double mean = state.bn_mean[c];
            const double rstd = state.bn_rstd[c];
            const double g = gamma[c];
            const double bta = beta[c];
            for (std::size_t i = 0; i < plane; ++i) {
              q[i] = g * (p[i] - mean) * rstd + bta;
            }
          }
        }
        state.output = std::move(out);
        break;
      }
      case LayerKind::Activation: {
        Tensor out(x.shape());
        if (layer.family == ActivationFamily::Relu) {
          for (std::size_t i = 0; i < x.size(); ++i)
            out[i] = x[i] > 0.0 ? x[i] : 0.0;
        } else {
          for (std::size_t i = 0; i < x.size(); ++i) out[i] = silu(x[i]);
        }
        state.output = std::move(out);
        break;
      }
      case LayerKind::MaxPool: {
        const std::size_t ch = x.extent(1);
        const std::size_t out_h = x.extent(2) / 2;
        const std::size_t out_w = x.extent(3) / 2;
        Tensor out({batch, ch, out_h, out_w});
        state.pool_argmax.resize(batch * ch * out_h * out_w);
        const std::size_t sample_in = ch * x.extent(2) * x.extent(3);
        const std::size_t sample_out = ch * out_h * out_w;
        for (std::size_t bi = 0; bi < batch; ++bi) {
          const MaxPoolResult res = maxpool2_forward(slice_sample(x, bi));
          place_sample(out, bi, res.output);
          for (std::size_t i = 0; i < sample_out; ++i) {
            state.pool_argmax[bi * sample_out + i] =
                bi * sample_in + res.argmax[i];
          }
        }
        state.output = std::move(out);
        break;
      }
      case LayerKind::Gap: {
        const std::size_t ch = x.extent(1);
        const std::size_t plane = x.extent(2) * x.extent(3);
        Tensor out({batch, ch});
        for (std::size_t bi = 0; bi < batch; ++bi) {
          for (std::size_t c = 0; c < ch; ++c) {
            const double* p = x.data() + (bi * ch + c) * plane;
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) acc += p[i];
            out(bi, c) = acc / static_cast<double>(plane);
          }
        }
        state.output = std::move(out);
        break;
      }
      case LayerKind::Fc: {
        const Tensor& w = model.params.at(layer.name + ".weight");
        const Tensor& b = model.params.at(layer.name + ".bias");
        const std::size_t in = w.extent(1);
        const std::size_t out_n = w.extent(0);
        Tensor out({batch, out_n});
        for (std::size_t bi = 0; bi < batch; ++bi) {
          for (std::size_t o = 0; o < out_n; ++o) {
            double acc = b[o];
            for (std::size_t i = 0; i < in; ++i) acc += w(o, i) * x(bi, i);
            out(bi, o) = acc;
          }
        }
        state.output = std::move(out);
        break;
      }
    }
    current = &state.output;
  }
  trace.logits = *current;
  return trace.logits;
}

}  // namespace detail

inline Tensor forward_batch(const Model& model, const Tensor& input,
                            Trace& trace) {
  if (model.train_mode) {
    throw StateError("forward_batch(const Model&) requires eval mode");
  }
  return detail::forward_impl(model, input, trace, nullptr);
}

inline Tensor forward_batch(Model& model, const Tensor& input, Trace& trace) {
  return detail::forward_impl(model, input, trace,
                              model.train_mode ? &model.running : nullptr);
}

using ActivationObserver =
    std::function<void(const std::string& layer, const Tensor& output,
                       const Tensor& upstream, const Tensor& rewritten)>;

struct BackwardResult {
  Tensor input_grad;                          // {B,1,H,W}
  std::map<std::string, Tensor> param_grads;  // keyed like Model::params
};

// Walks the trace in reverse. `mode` rewrites only activation-layer rules.
// When `hooks` is given (single-sample traces), g_out is captured at each
// hooked layer before that layer's own backward runs, i.e. at the same
// point where the activation was recorded.
inline BackwardResult backward_batch(const Model& model, const Trace& trace,
                                     const Tensor& dlogits, GradMode mode,
                                     HookRecord* hooks = nullptr,
                                     const ActivationObserver& observer = {}) {
  if (trace.layers.empty()) {
    throw StateError("backward before forward");
  }
  require_same_shape(trace.logits, dlogits, "backward_batch: dlogits");
  const std::size_t batch = trace.input.extent(0);

  BackwardResult result;
  for (const auto& [name, tensor] : model.params) {
    result.param_grads.emplace(name, Tensor(tensor.shape()));
  }

  Tensor grad = dlogits;
  for (std::size_t li = model.layers.size(); li-- > 0;) {
    const LayerSpec& layer = model.layers[li];
    const LayerState& state = trace.layers[li];
    const Tensor& x =
        li == 0 ? trace.input : trace.layers[li - 1].output;

    if (hooks != nullptr && hooks->has(layer.name)) {
      HookEntry& entry = hooks->entries.at(layer.name);
      Tensor g_out = grad;
      if (g_out.rank() == 4) {
        g_out = detail::slice_sample(g_out, 0);
      } else {
        // {1,K} -> {K,1,1} to pair with the stored activation
        g_out = g_out.reshaped({g_out.extent(1), 1, 1});
      }
      entry.gradient = std::move(g_out);
      entry.has_gradient = true;
    }

    switch (layer.kind) {
      case LayerKind::Conv: {
        const Tensor& w = model.params.at(layer.name + ".weight");
        Tensor dx(x.shape());
        std::vector<ConvGrads> per_sample(batch);
        parallel_for(batch, [&](std::size_t bi) {
          per_sample[bi] =
              conv2d_backward(detail::slice_sample(x, bi), w,
                              detail::slice_sample(grad, bi), layer.stride,
                              layer.pad);
          detail::place_sample(dx, bi, per_sample[bi].input);
        });
        Tensor& gw = result.param_grads.at(layer.name + ".weight");
        Tensor& gb = result.param_grads.at(layer.name + ".bias");
        for (std::size_t bi = 0; bi < batch; ++bi) {  // fixed reduction order
          axpy(gw, 1.0, per_sample[bi].weights);
          axpy(gb, 1.0, per_sample[bi].bias);
        }
        grad = std::move(dx);
        break;
      }
      case LayerKind::BatchNorm: {
        const Tensor& gamma = model.params.at(layer.name + ".gamma");
        Tensor& dgamma = result.param_grads.at(layer.name + ".gamma");
        Tensor& dbeta = result.param_grads.at(layer.name + ".beta");
        const std::size_t ch = x.extent(1);
        const std::size_t plane = x.extent(2) * x.extent(3);
        const double m = static_cast<double>(batch * plane);
        Tensor dx(x.shape());
        for (std::size_t c = 0; c < ch; ++c) {
          const double mean = state.bn_mean[c];
          const double rstd = state.bn_rstd[c];
          double sum_dy = 0.0;
          double sum_dy_xhat = 0.0;
          for (std::size_t bi = 0; bi < batch; ++bi) {
            const double* xp = x.data() + (bi * ch + c) * plane;
            const double* gp = grad.data() + (bi * ch + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              sum_dy += gp[i];
              sum_dy_xhat += gp[i] * (xp[i] - mean) * rstd;
            }
          }
          dgamma[c] += sum_dy_xhat;
          dbeta[c] += sum_dy;
          const double g = gamma[c];
          if (trace.train_mode) {
            for (std::size_t bi = 0; bi < batch; ++bi) {
              const double* xp = x.data() + (bi * ch + c) * plane;
              const double* gp = grad.data() + (bi * ch + c) * plane;
              double* dp = dx.data() + (bi * ch + c) * plane;
              for (std::size_t i = 0; i < plane; ++i) {
                const double xhat = (xp[i] - mean) * rstd;
                dp[i] = g * rstd *
                        (gp[i] - sum_dy / m - xhat * sum_dy_xhat / m);
              }
            }
          } else {
            for (std::size_t bi = 0; bi < batch; ++bi) {
              const double* gp = grad.data() + (bi * ch + c) * plane;
              double* dp = dx.data() + (bi * ch + c) * plane;
              for (std::size_t i = 0; i < plane; ++i) {
                dp[i] = g * rstd * gp[i];
              }
            }
          }
        }
        grad = std::move(dx);
        break;
      }
      case LayerKind::Activation: {
        const Tensor& reference =
            (mode == GradMode::Standard &&
             layer.family == ActivationFamily::Silu)
                ? x               // derivative at the pre-activation input
                : state.output;   // masks evaluated at the forward output
        Tensor rewritten = activation_backward(layer.family, mode, reference, grad);
        if (observer) observer(layer.name, state.output, grad, rewritten);
        grad = std::move(rewritten);
        break;
      }
      case LayerKind::MaxPool: {
        Tensor dx(x.shape());
        for (std::size_t i = 0; i < grad.size(); ++i) {
          dx[state.pool_argmax[i]] += grad[i];
        }
        grad = std::move(dx);
        break;
      }
      case LayerKind::Gap: {
        const std::size_t ch = x.extent(1);
        const std::size_t plane = x.extent(2) * x.extent(3);
        Tensor dx(x.shape());
        for (std::size_t bi = 0; bi < batch; ++bi) {
          for (std::size_t c = 0; c < ch; ++c) {
            const double v = grad(bi, c) / static_cast<double>(plane);
            double* dp = dx.data() + (bi * ch + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) dp[i] = v;
          }
        }
        grad = std::move(dx);
        break;
      }
      case LayerKind::Fc: {
        const Tensor& w = model.params.at(layer.name + ".weight");
        Tensor& gw = result.param_grads.at(layer.name + ".weight");
        Tensor& gb = result.param_grads.at(layer.name + ".bias");
        const std::size_t in = w.extent(1);
        const std::size_t out_n = w.extent(0);
        Tensor dx({batch, in});
        for (std::size_t bi = 0; bi < batch; ++bi) {
          for (std::size_t o = 0; o < out_n; ++o) {
            const double g = grad(bi, o);
            gb[o] += g;
            for (std::size_t i = 0; i < in; ++i) {
              gw(o, i) += g * x(bi, i);
              dx(bi, i) += g * w(o, i);
            }
          }
        }
        grad = std::move(dx);
        break;
      }
    }
  }
  result.input_grad = std::move(grad);
  return result;
}

// ---------------------------------------------------------------------------
// Single-sample API used by the saliency detectors

struct ForwardOutput {
  Tensor logits;  // {2}
  HookRecord record;
};

inline ForwardOutput forward(const Model& model, const Tensor& x,
                             const std::vector<std::string>& hook_names = {}) {
  if (x.rank() != 3 || x.extent(0) != 1) {
    throw DimensionError("forward: expected {1,H,W} input, got " +
                         x.shape_string());
  }
  for (const auto& name : hook_names) {
    const LayerSpec* layer = model.find_layer(name);
    if (layer == nullptr || !layer->hookable) {
      throw InvalidArgument("hook request names non-hookable layer '" + name +
                            "'");
    }
  }
  Tensor input({1, 1, x.extent(1), x.extent(2)});
  std::copy(x.data(), x.data() + x.size(), input.data());

  ForwardOutput out;
  out.record.trace = std::make_shared<Trace>();
  const Tensor logits =
      detail::forward_impl(model, input, *out.record.trace, nullptr);
  out.logits = logits.reshaped({logits.extent(1)});

  for (const auto& name : hook_names) {
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
      if (model.layers[li].name != name) continue;
      const Tensor& activation = out.record.trace->layers[li].output;
      HookEntry entry;
      if (activation.rank() == 4) {
        entry.activation = detail::slice_sample(activation, 0);
      } else {
        entry.activation = activation.reshaped({activation.extent(1), 1, 1});
      }
      out.record.entries.emplace(name, std::move(entry));
    }
  }
  return out;
}

// Seeds d(logit[target])/d(logit) one-hot and back-propagates; fills g_out on
// every hooked layer and returns the input-image gradient {1,H,W}.
inline Tensor backward(const Model& model, int target_class, GradMode mode,
                       HookRecord& record,
                       const ActivationObserver& observer = {}) {
  if (record.trace == nullptr || record.trace->layers.empty()) {
    throw StateError("backward before forward");
  }
  const Tensor& logits = record.trace->logits;
  if (target_class < 0 ||
      static_cast<std::size_t>(target_class) >= logits.extent(1)) {
    throw InvalidArgument("target class " + std::to_string(target_class) +
                          " out of range");
  }
  Tensor seed(logits.shape());
  seed(0, static_cast<std::size_t>(target_class)) = 1.0;
  BackwardResult res =
      backward_batch(model, *record.trace, seed, mode, &record, observer);
  return res.input_grad.reshaped(
      {1, res.input_grad.extent(2), res.input_grad.extent(3)});
}

// ---------------------------------------------------------------------------
// Randomization schemes

// FullyRandom: every weight redrawn from the He-normal scheme, biases zeroed,
// BN reset. SemiRandom: feature extractor (conv + BN, incl. running stats)
// copied from the donor, final fc re-randomized. TrainedLoad: donor copied
// wholesale.
inline Model randomize_model(const Model& model, RandScheme scheme,
                             std::uint64_t seed,
                             const Model* donor = nullptr) {
  Model out = model;
  Rng rng(seed);
  switch (scheme) {
    case RandScheme::FullyRandom: {
      for (const auto& layer : out.layers) {
        switch (layer.kind) {
          case LayerKind::Conv: {
            Tensor& w = out.params.at(layer.name + ".weight");
            detail::he_init_weight(
                w, static_cast<std::size_t>(layer.in_channels) * layer.kernel *
                       layer.kernel,
                rng);
            out.params.at(layer.name + ".bias").fill(0.0);
            break;
          }
          case LayerKind::BatchNorm: {
            out.params.at(layer.name + ".gamma").fill(1.0);
            out.params.at(layer.name + ".beta").fill(0.0);
            out.running.at(layer.name + ".running_mean").fill(0.0);
            out.running.at(layer.name + ".running_var").fill(1.0);
            break;
          }
          case LayerKind::Fc: {
            Tensor& w = out.params.at(layer.name + ".weight");
            detail::he_init_weight(
                w, static_cast<std::size_t>(layer.in_channels), rng);
            out.params.at(layer.name + ".bias").fill(0.0);
            break;
          }
          default:
            break;
        }
      }
      break;
    }
    case RandScheme::SemiRandom: {
      if (donor == nullptr) {
        throw MissingResource(
            "semi-random scheme requires a donor checkpoint for the feature "
            "layers");
      }
      for (const auto& layer : out.layers) {
        switch (layer.kind) {
          case LayerKind::Conv:
          case LayerKind::BatchNorm: {
            for (const char* suffix :
                 {".weight", ".bias", ".gamma", ".beta"}) {
              const std::string key = layer.name + suffix;
              auto src = donor->params.find(key);
              if (src == donor->params.end()) continue;
              auto dst = out.params.find(key);
              if (dst == out.params.end() ||
                  !dst->second.same_shape(src->second)) {
                throw DimensionError("donor parameter '" + key +
                                     "' does not match model topology");
              }
              dst->second = src->second;
            }
            for (const char* suffix : {".running_mean", ".running_var"}) {
              const std::string key = layer.name + suffix;
              auto src = donor->running.find(key);
              if (src != donor->running.end()) {
                out.running.at(key) = src->second;
              }
            }
            break;
          }
          case LayerKind::Fc: {
            Tensor& w = out.params.at(layer.name + ".weight");
            detail::he_init_weight(
                w, static_cast<std::size_t>(layer.in_channels), rng);
            out.params.at(layer.name + ".bias").fill(0.0);
            break;
          }
          default:
            break;
        }
      }
      break;
    }
    case RandScheme::TrainedLoad: {
      if (donor == nullptr) {
        throw MissingResource("trained-load scheme requires a donor model");
      }
      out.params = donor->params;
      out.running = donor->running;
      break;
    }
  }
  return out;
}

}  // namespace salforge
