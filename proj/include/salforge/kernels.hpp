#pragma once

// Numerical kernels shared by the network engine and the saliency methods.
// Convolution is always expressed through unfold + matrix multiply so the
// same patch machinery backs both the conv layers and the conv-style
// virtual-identity-layer saliency formulas.

#include <cmath>
#include <cstddef>
#include <string>
#include <tuple>
#include <vector>

#include "salforge/errors.hpp"
#include "salforge/tensor.hpp"

namespace salforge {

// Column u holds the flattened N x N x K patch centered at output position u.
// Patch elements are ordered (channel, row, col), matching the row-major
// layout of a [K' x K x N x N] weight tensor.
struct UnfoldedTensor {
  std::size_t patch_dim = 0;  // N*N*K
  std::size_t positions = 0;  // H''*W''
  Tensor data;                // shape {patch_dim, positions}
};

inline std::size_t conv_out_extent(std::size_t in, int kernel, int stride,
                                   int pad) {
  const long long span =
      static_cast<long long>(in) + 2LL * pad - static_cast<long long>(kernel);
  if (span < 0) {
    throw DimensionError("conv: kernel " + std::to_string(kernel) +
                         " larger than padded input " + std::to_string(in));
  }
  return static_cast<std::size_t>(span / stride) + 1;
}

// General im2col with zero padding. input is {K,H,W}.
inline UnfoldedTensor im2col(const Tensor& input, int kernel, int stride,
                             int pad) {
  if (input.rank() != 3) {
    throw DimensionError("im2col: expected rank-3 input, got " +
                         input.shape_string());
  }
  if (stride < 1 || pad < 0 || kernel < 1) {
    throw InvalidArgument("im2col: stride >= 1, pad >= 0, kernel >= 1");
  }
  const std::size_t channels = input.extent(0);
  const std::size_t in_h = input.extent(1);
  const std::size_t in_w = input.extent(2);
  const std::size_t out_h = conv_out_extent(in_h, kernel, stride, pad);
  const std::size_t out_w = conv_out_extent(in_w, kernel, stride, pad);

  UnfoldedTensor out;
  out.patch_dim = channels * kernel * kernel;
  out.positions = out_h * out_w;
  out.data = Tensor({out.patch_dim, out.positions});

  const double* src = input.data();
  double* dst = out.data.data();
  for (std::size_t k = 0; k < channels; ++k) {
    for (int dy = 0; dy < kernel; ++dy) {
      for (int dx = 0; dx < kernel; ++dx) {
        const std::size_t row = (k * kernel + dy) * kernel + dx;
        double* drow = dst + row * out.positions;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const long long iy =
              static_cast<long long>(oy) * stride - pad + dy;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const long long ix =
                static_cast<long long>(ox) * stride - pad + dx;
            double v = 0.0;
            if (iy >= 0 && iy < static_cast<long long>(in_h) && ix >= 0 &&
                ix < static_cast<long long>(in_w)) {
              v = src[(k * in_h + static_cast<std::size_t>(iy)) * in_w +
                      static_cast<std::size_t>(ix)];
            }
            drow[oy * out_w + ox] = v;
          }
        }
      }
    }
  }
  return out;
}

// Overlap-add inverse of im2col: scatter patch columns back to {K,H,W}.
inline Tensor col2im(const Tensor& columns, std::size_t channels,
                     std::size_t in_h, std::size_t in_w, int kernel,
                     int stride, int pad) {
  const std::size_t out_h = conv_out_extent(in_h, kernel, stride, pad);
  const std::size_t out_w = conv_out_extent(in_w, kernel, stride, pad);
  if (columns.rank() != 2 || columns.extent(0) != channels * kernel * kernel ||
      columns.extent(1) != out_h * out_w) {
    throw DimensionError("col2im: column matrix " + columns.shape_string() +
                         " does not match target geometry");
  }
  Tensor out({channels, in_h, in_w});
  double* dst = out.data();
  const double* src = columns.data();
  const std::size_t positions = out_h * out_w;
  for (std::size_t k = 0; k < channels; ++k) {
    for (int dy = 0; dy < kernel; ++dy) {
      for (int dx = 0; dx < kernel; ++dx) {
        const std::size_t row = (k * kernel + dy) * kernel + dx;
        const double* srow = src + row * positions;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const long long iy = static_cast<long long>(oy) * stride - pad + dy;
          if (iy < 0 || iy >= static_cast<long long>(in_h)) continue;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const long long ix =
                static_cast<long long>(ox) * stride - pad + dx;
            if (ix < 0 || ix >= static_cast<long long>(in_w)) continue;
            dst[(k * in_h + static_cast<std::size_t>(iy)) * in_w +
                static_cast<std::size_t>(ix)] += srow[oy * out_w + ox];
          }
        }
      }
    }
  }
  return out;
}

// Same-size patch extraction (stride 1). N must be odd and pad = (N-1)/2.
inline UnfoldedTensor unfold(const Tensor& input, int patch, int pad) {
  if (patch < 1 || patch % 2 == 0) {
    throw InvalidArgument("unfold: patch size must be odd, got " +
                          std::to_string(patch));
  }
  if (pad != (patch - 1) / 2) {
    throw InvalidArgument("unfold: pad must be (N-1)/2 for same-size output");
  }
  return im2col(input, patch, 1, pad);
}

inline Tensor conv2d_forward(const Tensor& input, const Tensor& weights,
                             const Tensor& bias, int stride, int pad) {
  if (input.rank() != 3 || weights.rank() != 4) {
    throw DimensionError("conv2d_forward: input must be {K,H,W}, weights {K',K,N,N}");
  }
  if (weights.extent(1) != input.extent(0)) {
    throw DimensionError(
        "conv2d_forward: weight channel axis " +
        std::to_string(weights.extent(1)) + " != input channels " +
        std::to_string(input.extent(0)));
  }
  if (weights.extent(2) != weights.extent(3)) {
    throw DimensionError("conv2d_forward: non-square kernel");
  }
  const std::size_t out_channels = weights.extent(0);
  if (bias.size() != out_channels) {
    throw DimensionError("conv2d_forward: bias size " +
                         std::to_string(bias.size()) + " != K' " +
                         std::to_string(out_channels));
  }
  const int kernel = static_cast<int>(weights.extent(2));
  const std::size_t out_h = conv_out_extent(input.extent(1), kernel, stride, pad);
  const std::size_t out_w = conv_out_extent(input.extent(2), kernel, stride, pad);

  const UnfoldedTensor cols = im2col(input, kernel, stride, pad);
  Tensor out({out_channels, out_h, out_w});
  // weights viewed as K' x (K*N*N); columns are (K*N*N) x P.
  matmul(weights.data(), cols.data.data(), out.data(), out_channels,
         cols.patch_dim, cols.positions);
  double* dst = out.data();
  const std::size_t positions = out_h * out_w;
  for (std::size_t k = 0; k < out_channels; ++k) {
    const double b = bias[k];
    for (std::size_t u = 0; u < positions; ++u) dst[k * positions + u] += b;
  }
  return out;
}

struct ConvGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

inline ConvGrads conv2d_backward(const Tensor& input, const Tensor& weights,
                                 const Tensor& upstream, int stride, int pad) {
  const int kernel = static_cast<int>(weights.extent(2));
  const std::size_t out_channels = weights.extent(0);
  const std::size_t out_h = conv_out_extent(input.extent(1), kernel, stride, pad);
  const std::size_t out_w = conv_out_extent(input.extent(2), kernel, stride, pad);
  if (upstream.rank() != 3 || upstream.extent(0) != out_channels ||
      upstream.extent(1) != out_h || upstream.extent(2) != out_w) {
    throw DimensionError("conv2d_backward: upstream " +
                         upstream.shape_string() + " != forward output shape");
  }
  const std::size_t positions = out_h * out_w;
  const UnfoldedTensor cols = im2col(input, kernel, stride, pad);

  ConvGrads grads;
  grads.bias = Tensor({out_channels});
  for (std::size_t k = 0; k < out_channels; ++k) {
    double acc = 0.0;
    const double* g = upstream.data() + k * positions;
    for (std::size_t u = 0; u < positions; ++u) acc += g[u];
    grads.bias[k] = acc;
  }

  // dW = sum_u g_u x_u^T, evaluated as G (K'xP) * X^T (P x N^2K).
  grads.weights = Tensor(weights.shape());
  {
    double* gw = grads.weights.data();
    const double* g = upstream.data();
    const double* x = cols.data.data();
    for (std::size_t k = 0; k < out_channels; ++k) {
      for (std::size_t p = 0; p < cols.patch_dim; ++p) {
        const double* grow = g + k * positions;
        const double* xrow = x + p * positions;
        double acc = 0.0;
        for (std::size_t u = 0; u < positions; ++u) acc += grow[u] * xrow[u];
        gw[k * cols.patch_dim + p] = acc;
      }
    }
  }

  // dX columns = W^T (N^2K x K') * G (K' x P), folded back with overlap-add.
  Tensor dcols({cols.patch_dim, positions});
  {
    double* dc = dcols.data();
    const double* w = weights.data();
    const double* g = upstream.data();
    for (std::size_t p = 0; p < cols.patch_dim; ++p) {
      double* drow = dc + p * positions;
      for (std::size_t k = 0; k < out_channels; ++k) {
        const double wv = w[k * cols.patch_dim + p];
        if (wv == 0.0) continue;
        const double* grow = g + k * positions;
        for (std::size_t u = 0; u < positions; ++u) drow[u] += wv * grow[u];
      }
    }
  }
  grads.input = col2im(dcols, input.extent(0), input.extent(1),
                       input.extent(2), kernel, stride, pad);
  return grads;
}

// Bilinear interpolation, align-corners = false, edge-replicated sampling.
inline Tensor bilinear_upsample(const Tensor& map, std::size_t out_h,
                                std::size_t out_w) {
  if (map.rank() != 2) {
    throw DimensionError("bilinear_upsample: expected rank-2 map, got " +
                         map.shape_string());
  }
  if (out_h == 0 || out_w == 0) {
    throw InvalidArgument("bilinear_upsample: zero-size target");
  }
  const std::size_t in_h = map.extent(0);
  const std::size_t in_w = map.extent(1);
  if (out_h < in_h || out_w < in_w) {
    throw InvalidArgument("bilinear_upsample: target smaller than source");
  }
  Tensor out({out_h, out_w});
  const double sy = static_cast<double>(in_h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(in_w) / static_cast<double>(out_w);
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
    fy = std::max(0.0, std::min(fy, static_cast<double>(in_h - 1)));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, in_h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
      fx = std::max(0.0, std::min(fx, static_cast<double>(in_w - 1)));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, in_w - 1);
      const double wx = fx - static_cast<double>(x0);
      const double top = map(y0, x0) * (1.0 - wx) + map(y0, x1) * wx;
      const double bot = map(y1, x0) * (1.0 - wx) + map(y1, x1) * wx;
      out(oy, ox) = top * (1.0 - wy) + bot * wy;
    }
  }
  return out;
}

namespace detail {

// Symmetric reflection into [0, n): -1 -> 0, n -> n-1, with repeated bounces
// for very small extents.
inline std::size_t reflect_index(long long i, std::size_t n) {
  const long long last = static_cast<long long>(n) - 1;
  if (n == 1) return 0;
  while (i < 0 || i > last) {
    if (i < 0) i = -i - 1;
    if (i > last) i = 2 * last + 1 - i;
  }
  return static_cast<std::size_t>(i);
}

inline std::vector<double> gaussian_kernel_1d(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-(static_cast<double>(i) * i) /
                              (2.0 * sigma * sigma));
    kernel[i + radius] = v;
    sum += v;
  }
  for (double& v : kernel) v /= sum;
  return kernel;
}

}  // namespace detail

// Separable Gaussian with reflect padding; kernel truncated at ceil(3*sigma)
// and normalized to sum 1, so constants pass through exactly.
inline Tensor gaussian_smooth(const Tensor& map, double sigma) {
  if (map.rank() != 2) {
    throw DimensionError("gaussian_smooth: expected rank-2 map, got " +
                         map.shape_string());
  }
  if (!(sigma > 0.0)) {
    throw InvalidArgument("gaussian_smooth: sigma must be > 0");
  }
  const std::vector<double> kernel = detail::gaussian_kernel_1d(sigma);
  const int radius = static_cast<int>(kernel.size() / 2);
  const std::size_t h = map.extent(0);
  const std::size_t w = map.extent(1);

  Tensor horizontal({h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t) {
        const std::size_t sx =
            detail::reflect_index(static_cast<long long>(x) + t, w);
        acc += kernel[t + radius] * map(y, sx);
      }
      horizontal(y, x) = acc;
    }
  }
  Tensor out({h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t) {
        const std::size_t sy =
            detail::reflect_index(static_cast<long long>(y) + t, h);
        acc += kernel[t + radius] * horizontal(sy, x);
      }
      out(y, x) = acc;
    }
  }
  return out;
}

// Per-position L2 norm of the channel vector: out[h,w] = ||t[:,h,w]||.
inline Tensor frobenius_map(const Tensor& t) {
  if (t.rank() != 3) {
    throw DimensionError("frobenius_map: expected rank-3 tensor, got " +
                         t.shape_string());
  }
  const std::size_t channels = t.extent(0);
  const std::size_t h = t.extent(1);
  const std::size_t w = t.extent(2);
  Tensor out({h, w});
  const std::size_t plane = h * w;
  const double* src = t.data();
  for (std::size_t u = 0; u < plane; ++u) {
    double acc = 0.0;
    for (std::size_t k = 0; k < channels; ++k) {
      const double v = src[k * plane + u];
      acc += v * v;
    }
    out[u] = std::sqrt(acc);
  }
  return out;
}

struct MaxPoolResult {
  Tensor output;
  std::vector<std::size_t> argmax;  // flat source index per output element
};

// 2x2 max pooling with stride 2; odd trailing row/col is dropped. Ties go to
// the first element in window scan order, which keeps backward deterministic.
inline MaxPoolResult maxpool2_forward(const Tensor& input) {
  if (input.rank() != 3) {
    throw DimensionError("maxpool2: expected rank-3 input");
  }
  const std::size_t channels = input.extent(0);
  const std::size_t in_h = input.extent(1);
  const std::size_t in_w = input.extent(2);
  const std::size_t out_h = in_h / 2;
  const std::size_t out_w = in_w / 2;
  MaxPoolResult res;
  res.output = Tensor({channels, out_h, out_w});
  res.argmax.resize(channels * out_h * out_w);
  for (std::size_t k = 0; k < channels; ++k) {
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        std::size_t best_idx = (k * in_h + 2 * oy) * in_w + 2 * ox;
        double best = input[best_idx];
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t idx =
                (k * in_h + 2 * oy + dy) * in_w + 2 * ox + dx;
            if (input[idx] > best) {
              best = input[idx];
              best_idx = idx;
            }
          }
        }
        res.output(k, oy, ox) = best;
        res.argmax[(k * out_h + oy) * out_w + ox] = best_idx;
      }
    }
  }
  return res;
}

inline Tensor maxpool2_backward(const MaxPoolResult& cache,
                                const Tensor& upstream,
                                const std::vector<std::size_t>& input_shape) {
  require_same_shape(cache.output, upstream, "maxpool2_backward");
  Tensor grad(input_shape);
  for (std::size_t i = 0; i < upstream.size(); ++i) {
    grad[cache.argmax[i]] += upstream[i];
  }
  return grad;
}

}  // namespace salforge
