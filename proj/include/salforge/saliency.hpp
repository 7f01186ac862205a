#pragma once

// Saliency detectors over HookRecords: Input x Grad, guided backpropagation,
// Grad-CAM, Guided Grad-CAM, and NormGrad with its virtual-identity-layer
// variants (bias, scaling, conv NxN), plus geometric-mean combination across
// layers and a single dispatch entry point.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "salforge/errors.hpp"
#include "salforge/io.hpp"
#include "salforge/kernels.hpp"
#include "salforge/net.hpp"

namespace salforge {

enum class SaliencyMethod {
  InputXGrad,
  GuidedBackprop,
  GradCam,
  GuidedGradCam,
  NormGrad
};

enum class VilKind { None, Bias, Scaling, Conv1x1, Conv3x3 };

inline int vil_patch(VilKind kind) {
  switch (kind) {
    case VilKind::Conv1x1: return 1;
    case VilKind::Conv3x3: return 3;
    default: return 0;
  }
}

inline std::string to_string(VilKind kind) {
  switch (kind) {
    case VilKind::None: return "none";
    case VilKind::Bias: return "bias";
    case VilKind::Scaling: return "scaling";
    case VilKind::Conv1x1: return "conv1x1";
    case VilKind::Conv3x3: return "conv3x3";
  }
  return "?";
}

struct SaliencyMap {
  Tensor values;  // {H,W} at input resolution
  SaliencyMethod method = SaliencyMethod::InputXGrad;
  VilKind vil_kind = VilKind::None;
  std::vector<std::string> hook_layers;
  bool smoothed = false;
  bool combined = false;
};

// A concrete detector configuration, e.g. "normgrad-conv3x3-combined".
struct MethodSpec {
  SaliencyMethod method = SaliencyMethod::InputXGrad;
  VilKind vil = VilKind::None;
  bool combined = false;

  bool operator<(const MethodSpec& other) const {
    if (method != other.method) return method < other.method;
    if (vil != other.vil) return vil < other.vil;
    return combined < other.combined;
  }
  bool operator==(const MethodSpec& other) const {
    return method == other.method && vil == other.vil &&
           combined == other.combined;
  }
};

inline std::string method_id(const MethodSpec& spec) {
  switch (spec.method) {
    case SaliencyMethod::InputXGrad: return "input-x-grad";
    case SaliencyMethod::GuidedBackprop: return "guided-backprop";
    case SaliencyMethod::GradCam: return "grad-cam";
    case SaliencyMethod::GuidedGradCam: return "guided-grad-cam";
    case SaliencyMethod::NormGrad:
      return "normgrad-" + to_string(spec.vil) +
             (spec.combined ? "-combined" : "-single");
  }
  return "?";
}

inline MethodSpec parse_method(const std::string& id) {
  MethodSpec spec;
  if (id == "input-x-grad") {
    spec.method = SaliencyMethod::InputXGrad;
    return spec;
  }
  if (id == "guided-backprop") {
    spec.method = SaliencyMethod::GuidedBackprop;
    return spec;
  }
  if (id == "grad-cam") {
    spec.method = SaliencyMethod::GradCam;
    return spec;
  }
  if (id == "guided-grad-cam") {
    spec.method = SaliencyMethod::GuidedGradCam;
    return spec;
  }
  if (id.rfind("normgrad-", 0) == 0) {
    spec.method = SaliencyMethod::NormGrad;
    std::string rest = id.substr(9);
    if (rest.size() > 9 && rest.rfind("-combined") == rest.size() - 9) {
      spec.combined = true;
      rest = rest.substr(0, rest.size() - 9);
    } else if (rest.size() > 7 && rest.rfind("-single") == rest.size() - 7) {
      rest = rest.substr(0, rest.size() - 7);
    }
    if (rest == "bias") {
      spec.vil = VilKind::Bias;
    } else if (rest == "scaling") {
      spec.vil = VilKind::Scaling;
    } else if (rest == "conv1x1") {
      spec.vil = VilKind::Conv1x1;
    } else if (rest == "conv3x3") {
      spec.vil = VilKind::Conv3x3;
    } else {
      throw InvalidArgument("unknown NormGrad variant '" + id + "'");
    }
    return spec;
  }
  throw InvalidArgument("unknown saliency method '" + id + "'");
}

// The method grid benchmarked throughout: the four baselines plus the
// scaling/conv1x1/conv3x3 NormGrad variants in single and combined layer
// settings. The bias variant stays available but out of the grid, since its
// gradient degenerates to a constant map at the last layer.
inline std::vector<MethodSpec> benchmark_methods() {
  std::vector<MethodSpec> out;
  out.push_back({SaliencyMethod::InputXGrad, VilKind::None, false});
  out.push_back({SaliencyMethod::GuidedBackprop, VilKind::None, false});
  out.push_back({SaliencyMethod::GuidedGradCam, VilKind::None, false});
  out.push_back({SaliencyMethod::GradCam, VilKind::None, false});
  for (VilKind vil : {VilKind::Scaling, VilKind::Conv1x1, VilKind::Conv3x3}) {
    out.push_back({SaliencyMethod::NormGrad, vil, false});
    out.push_back({SaliencyMethod::NormGrad, vil, true});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Individual detectors

// values = sum over channels of x (.) g; signed by construction.
inline SaliencyMap input_x_grad(const Tensor& x, const Tensor& g) {
  require_same_shape(x, g, "input_x_grad");
  if (x.rank() != 3) {
    throw DimensionError("input_x_grad: expected {C,H,W}, got " +
                         x.shape_string());
  }
  const std::size_t h = x.extent(1);
  const std::size_t w = x.extent(2);
  const std::size_t plane = h * w;
  SaliencyMap map;
  map.method = SaliencyMethod::InputXGrad;
  map.values = Tensor({h, w});
  for (std::size_t c = 0; c < x.extent(0); ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      map.values[i] += x[c * plane + i] * g[c * plane + i];
    }
  }
  return map;
}

// Guided-mode input gradient with negatives clamped to zero, channels summed.
inline SaliencyMap guided_backprop_map(const Model& model, const Tensor& x,
                                       int target_class) {
  ForwardOutput out = forward(model, x);
  const Tensor g = backward(model, target_class, GradMode::Guided, out.record);
  const std::size_t h = x.extent(1);
  const std::size_t w = x.extent(2);
  const std::size_t plane = h * w;
  SaliencyMap map;
  map.method = SaliencyMethod::GuidedBackprop;
  map.values = Tensor({h, w});
  for (std::size_t c = 0; c < g.extent(0); ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      const double v = g[c * plane + i];
      if (v > 0.0) map.values[i] += v;
    }
  }
  return map;
}

// Pre-upsample Grad-CAM: alpha_k = mean_u g[k,u]; S = sum_k alpha_k x[k];
// map = ReLU(S). The mean is over the hooked layer's own positions.
inline Tensor grad_cam_spatial(const HookEntry& entry) {
  if (!entry.has_gradient) {
    throw StateError("grad_cam: hook entry has no gradient; run backward");
  }
  const Tensor& act = entry.activation;
  const Tensor& grad = entry.gradient;
  const std::size_t channels = act.extent(0);
  const std::size_t plane = act.extent(1) * act.extent(2);
  Tensor s({act.extent(1), act.extent(2)});
  for (std::size_t k = 0; k < channels; ++k) {
    double alpha = 0.0;
    const double* gp = grad.data() + k * plane;
    for (std::size_t i = 0; i < plane; ++i) alpha += gp[i];
    alpha /= static_cast<double>(plane);
    const double* ap = act.data() + k * plane;
    for (std::size_t i = 0; i < plane; ++i) s[i] += alpha * ap[i];
  }
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] < 0.0) s[i] = 0.0;
  }
  return s;
}

inline SaliencyMap grad_cam(const HookRecord& record, const std::string& layer,
                            std::size_t out_h, std::size_t out_w) {
  SaliencyMap map;
  map.method = SaliencyMethod::GradCam;
  map.hook_layers = {layer};
  map.values = bilinear_upsample(grad_cam_spatial(record.at(layer)), out_h, out_w);
  return map;
}

inline SaliencyMap guided_grad_cam(const SaliencyMap& gc,
                                   const SaliencyMap& gbp) {
  require_same_shape(gc.values, gbp.values, "guided_grad_cam");
  SaliencyMap map;
  map.method = SaliencyMethod::GuidedGradCam;
  map.hook_layers = gc.hook_layers;
  map.values = hadamard(gc.values, gbp.values);
  return map;
}

// Per-position map for one virtual-identity-layer choice, before upsampling:
//   bias      ||g_u||
//   scaling   ||(g .* x)_u||
//   conv NxN  ||g_u|| * ||x_{u,NxN}||
inline Tensor normgrad_spatial(const HookEntry& entry, VilKind kind) {
  if (!entry.has_gradient) {
    throw StateError("normgrad: hook entry has no gradient; run backward");
  }
  const Tensor& act = entry.activation;
  const Tensor& grad = entry.gradient;
  switch (kind) {
    case VilKind::Bias:
      return frobenius_map(grad);
    case VilKind::Scaling:
      return frobenius_map(hadamard(grad, act));
    case VilKind::Conv1x1:
    case VilKind::Conv3x3: {
      const int patch = vil_patch(kind);
      const UnfoldedTensor cols = unfold(act, patch, (patch - 1) / 2);
      Tensor gnorm = frobenius_map(grad);
      for (std::size_t u = 0; u < cols.positions; ++u) {
        double acc = 0.0;
        for (std::size_t p = 0; p < cols.patch_dim; ++p) {
          const double v = cols.data(p, u);
          acc += v * v;
        }
        gnorm[u] *= std::sqrt(acc);
      }
      return gnorm;
    }
    case VilKind::None:
      break;
  }
  throw InvalidArgument("normgrad: VIL kind must be bias, scaling, or conv");
}

// Brute-force ground truth for the conv-NxN kind: explicitly forms the
// outer product g_u x_u^T at every position and takes its Frobenius norm.
// The factorized ||g||*||x|| route must reproduce this.
inline Tensor normgrad_oracle(const HookEntry& entry, int patch) {
  if (!entry.has_gradient) {
    throw StateError("normgrad_oracle: hook entry has no gradient");
  }
  const Tensor& act = entry.activation;
  const Tensor& grad = entry.gradient;
  const std::size_t channels = grad.extent(0);
  const UnfoldedTensor cols = unfold(act, patch, (patch - 1) / 2);
  Tensor out({act.extent(1), act.extent(2)});
  const std::size_t plane = out.size();
  for (std::size_t u = 0; u < plane; ++u) {
    double sum_sq = 0.0;
    for (std::size_t k = 0; k < channels; ++k) {
      const double g = grad[k * plane + u];
      for (std::size_t p = 0; p < cols.patch_dim; ++p) {
        const double prod = g * cols.data(p, u);
        sum_sq += prod * prod;
      }
    }
    out[u] = std::sqrt(sum_sq);
  }
  return out;
}

inline SaliencyMap normgrad_single(const HookRecord& record,
                                   const std::string& layer, VilKind kind,
                                   std::size_t out_h, std::size_t out_w) {
  SaliencyMap map;
  map.method = SaliencyMethod::NormGrad;
  map.vil_kind = kind;
  map.hook_layers = {layer};
  map.values =
      bilinear_upsample(normgrad_spatial(record.at(layer), kind), out_h, out_w);
  return map;
}

// Geometric mean of max-normalized maps sharing one VIL kind. Zero pixels
// stay zero (no epsilon floor), so a zero in any layer annihilates.
inline SaliencyMap normgrad_combine(const std::vector<SaliencyMap>& maps) {
  if (maps.empty()) {
    throw InvalidArgument("normgrad_combine: need at least one map");
  }
  const VilKind kind = maps.front().vil_kind;
  for (const auto& m : maps) {
    if (m.vil_kind != kind) {
      throw InvalidArgument(
          "normgrad_combine: mixed VIL kinds (" + to_string(kind) + " vs " +
          to_string(m.vil_kind) + ")");
    }
    require_same_shape(m.values, maps.front().values, "normgrad_combine");
  }
  SaliencyMap out;
  out.method = SaliencyMethod::NormGrad;
  out.vil_kind = kind;
  out.combined = true;
  out.values = Tensor(maps.front().values.shape(), 1.0);
  const double exponent = 1.0 / static_cast<double>(maps.size());
  for (const auto& m : maps) {
    out.hook_layers.insert(out.hook_layers.end(), m.hook_layers.begin(),
                           m.hook_layers.end());
    const double peak = m.values.max_value();
    const double scale = peak > 0.0 ? 1.0 / peak : 1.0;
    for (std::size_t i = 0; i < out.values.size(); ++i) {
      out.values[i] *= std::pow(m.values[i] * scale, exponent);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dispatch

struct SaliencyOptions {
  std::vector<std::string> layers;  // empty -> method defaults
  bool smoothed = false;
  double sigma = 1.0;
};

// Post-activation conv block outputs, in network order. These are the
// combined-NormGrad hook points; the last one doubles as the Grad-CAM /
// single-NormGrad target layer.
inline std::vector<std::string> activation_hook_layers(const Model& model) {
  std::vector<std::string> out;
  for (const auto& layer : model.layers) {
    if (layer.hookable && layer.kind == LayerKind::Activation) {
      out.push_back(layer.name);
    }
  }
  if (out.empty()) {
    throw ConfigError("model has no hookable activation layers");
  }
  return out;
}

namespace detail {

inline std::vector<std::string> resolve_layers(const Model& model,
                                               const MethodSpec& spec,
                                               const SaliencyOptions& opts) {
  if (!opts.layers.empty()) return opts.layers;
  const std::vector<std::string> acts = activation_hook_layers(model);
  if (spec.method == SaliencyMethod::NormGrad && spec.combined) return acts;
  return {acts.back()};
}

}  // namespace detail

// Computes every requested method from (at most) one standard and one guided
// backward pass over the same forward trace, then returns the raw maps keyed
// by method. Smoothing is left to the caller so one computation can be
// scored both ways.
inline std::map<std::string, SaliencyMap> compute_saliency_set(
    const Model& model, const Tensor& image, int target_class,
    const std::vector<MethodSpec>& methods, const SaliencyOptions& opts = {}) {
  const std::size_t out_h = image.extent(1);
  const std::size_t out_w = image.extent(2);

  bool need_standard = false;
  bool need_guided_map = false;
  std::set<std::string> standard_hooks;
  for (const auto& spec : methods) {
    switch (spec.method) {
      case SaliencyMethod::InputXGrad:
        need_standard = true;
        break;
      case SaliencyMethod::GuidedBackprop:
        need_guided_map = true;
        break;
      case SaliencyMethod::GradCam:
      case SaliencyMethod::GuidedGradCam:
        need_standard = true;
        for (const auto& l : detail::resolve_layers(model, spec, opts)) {
          standard_hooks.insert(l);
        }
        if (spec.method == SaliencyMethod::GuidedGradCam) {
          need_guided_map = true;
        }
        break;
      case SaliencyMethod::NormGrad:
        need_standard = true;
        for (const auto& l : detail::resolve_layers(model, spec, opts)) {
          standard_hooks.insert(l);
        }
        break;
    }
  }

  HookRecord standard_record;
  Tensor input_grad;
  if (need_standard) {
    ForwardOutput out = forward(
        model, image,
        std::vector<std::string>(standard_hooks.begin(), standard_hooks.end()));
    standard_record = std::move(out.record);
    input_grad =
        backward(model, target_class, GradMode::Standard, standard_record);
  }
  SaliencyMap gbp;
  if (need_guided_map) {
    gbp = guided_backprop_map(model, image, target_class);
  }

  std::map<std::string, SaliencyMap> result;
  for (const auto& spec : methods) {
    const std::vector<std::string> layers =
        detail::resolve_layers(model, spec, opts);
    SaliencyMap map;
    switch (spec.method) {
      case SaliencyMethod::InputXGrad:
        map = input_x_grad(image, input_grad);
        break;
      case SaliencyMethod::GuidedBackprop:
        map = gbp;
        break;
      case SaliencyMethod::GradCam:
        map = grad_cam(standard_record, layers.back(), out_h, out_w);
        break;
      case SaliencyMethod::GuidedGradCam:
        map = guided_grad_cam(
            grad_cam(standard_record, layers.back(), out_h, out_w), gbp);
        break;
      case SaliencyMethod::NormGrad: {
        if (spec.combined) {
          std::vector<SaliencyMap> parts;
          parts.reserve(layers.size());
          for (const auto& layer : layers) {
            parts.push_back(
                normgrad_single(standard_record, layer, spec.vil, out_h, out_w));
          }
          map = normgrad_combine(parts);
        } else {
          if (layers.size() != 1) {
            throw InvalidArgument(
                "normgrad single expects exactly one hook layer");
          }
          map = normgrad_single(standard_record, layers.front(), spec.vil,
                                out_h, out_w);
        }
        break;
      }
    }
    result.emplace(method_id(spec), std::move(map));
  }
  return result;
}

inline SaliencyMap compute_saliency(const Model& model, const Tensor& image,
                                    int target_class, const MethodSpec& spec,
                                    const SaliencyOptions& opts = {}) {
  auto maps = compute_saliency_set(model, image, target_class, {spec}, opts);
  SaliencyMap map = std::move(maps.at(method_id(spec)));
  if (opts.smoothed) {
    map.values = gaussian_smooth(map.values, opts.sigma);
    map.smoothed = true;
  }
  return map;
}

// ---------------------------------------------------------------------------
// Export

// 8-bit grayscale PGM, min-max scaled per map (flat maps save as black).
inline void write_saliency_pgm(const SaliencyMap& map,
                               const std::string& path) {
  const double lo = map.values.min_value();
  const double hi = map.values.max_value();
  Tensor scaled(map.values.shape());
  if (hi > lo) {
    for (std::size_t i = 0; i < scaled.size(); ++i) {
      scaled[i] = (map.values[i] - lo) / (hi - lo);
    }
  }
  write_image(scaled, path);
}

inline nlohmann::json saliency_metadata(const SaliencyMap& map) {
  MethodSpec spec;
  spec.method = map.method;
  spec.vil = map.vil_kind;
  spec.combined = map.combined;
  return nlohmann::json{{"method", method_id(spec)},
                        {"vil_kind", to_string(map.vil_kind)},
                        {"hook_layers", map.hook_layers},
                        {"smoothed", map.smoothed},
                        {"combined", map.combined}};
}

// Bit-exact dump: <prefix>.f64 plus <prefix>.json sidecar.
inline void write_saliency_raw(const SaliencyMap& map,
                               const std::string& path_prefix) {
  write_raw_f64(map.values, path_prefix, saliency_metadata(map));
}

}  // namespace salforge
