#include "resa/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace resa {

namespace {

template <typename Scalar>
using MatMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatMap = Eigen::Map<const RowMatrix<Scalar>>;

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

// Lays out every receptive field of one image as a column:
// cols is (C * kh * kw) x (Ho * Wo), row-major.
template <typename Scalar>
void im2col(const Scalar* img, Index channels, Index height, Index width, Index kh, Index kw,
            const ConvGeometry& g, Index out_h, Index out_w, Scalar* cols) {
  const Index positions = out_h * out_w;
  for (Index c = 0; c < channels; ++c) {
    for (Index ki = 0; ki < kh; ++ki) {
      for (Index kj = 0; kj < kw; ++kj) {
        Scalar* row = cols + ((c * kh + ki) * kw + kj) * positions;
        for (Index oi = 0; oi < out_h; ++oi) {
          Scalar* dst = row + oi * out_w;
          const Index ii = oi * g.stride_h - g.pad_h + ki;
          if (ii < 0 || ii >= height) {
            std::fill(dst, dst + out_w, Scalar(0));
            continue;
          }
          const Scalar* src = img + (c * height + ii) * width;
          const Index offset = kj - g.pad_w;
          if (g.stride_w == 1) {
            const Index lo = std::clamp<Index>(-offset, 0, out_w);
            const Index hi = std::clamp<Index>(width - offset, lo, out_w);
            std::fill(dst, dst + lo, Scalar(0));
            std::copy(src + lo + offset, src + hi + offset, dst + lo);
            std::fill(dst + hi, dst + out_w, Scalar(0));
          } else {
            for (Index oj = 0; oj < out_w; ++oj) {
              const Index jj = oj * g.stride_w + offset;
              dst[oj] = (jj >= 0 && jj < width) ? src[jj] : Scalar(0);
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates columns back into the image.
template <typename Scalar>
void col2im(const Scalar* cols, Index channels, Index height, Index width, Index kh, Index kw,
            const ConvGeometry& g, Index out_h, Index out_w, Scalar* img) {
  const Index positions = out_h * out_w;
  for (Index c = 0; c < channels; ++c) {
    for (Index ki = 0; ki < kh; ++ki) {
      for (Index kj = 0; kj < kw; ++kj) {
        const Scalar* row = cols + ((c * kh + ki) * kw + kj) * positions;
        for (Index oi = 0; oi < out_h; ++oi) {
          const Index ii = oi * g.stride_h - g.pad_h + ki;
          if (ii < 0 || ii >= height) continue;
          const Scalar* src = row + oi * out_w;
          Scalar* dst = img + (c * height + ii) * width;
          const Index offset = kj - g.pad_w;
          for (Index oj = 0; oj < out_w; ++oj) {
            const Index jj = oj * g.stride_w + offset;
            if (jj >= 0 && jj < width) dst[jj] += src[oj];
          }
        }
      }
    }
  }
}

struct ConvShape {
  Nchw in;
  Index out_channels, kh, kw, out_h, out_w;
  bool pointwise;  // 1x1, stride 1, no padding: the image is its own column matrix
  Index patch() const { return in.c * kh * kw; }
  Index positions() const { return out_h * out_w; }
};

template <typename Scalar>
ConvShape conv_shape(const Tensor<Scalar>& x, const ConvKernel<Scalar>& k, const ConvGeometry& g) {
  const Nchw in = nchw(x, "conv2d input");
  require(k.weight.rank() == 4, "conv kernel must be (out, in, kh, kw)");
  require(k.in_channels() == in.c, "conv2d: kernel expects " + std::to_string(k.in_channels()) +
                                       " input channels, got " + std::to_string(in.c));
  require(g.pad_h >= 0 && g.pad_w >= 0, "conv2d: padding must be non-negative");
  require(g.stride_h >= 1 && g.stride_w >= 1, "conv2d: stride must be positive");
  if (k.bias) require(k.bias->size() == k.out_channels(), "conv2d: bias length mismatch");
  ConvShape s{in,
              k.out_channels(),
              k.kh(),
              k.kw(),
              conv_output_extent(in.h, k.kh(), g.stride_h, g.pad_h),
              conv_output_extent(in.w, k.kw(), g.stride_w, g.pad_w),
              false};
  require(s.out_h > 0 && s.out_w > 0, "conv2d: non-positive output size");
  s.pointwise = s.kh == 1 && s.kw == 1 && g.stride_h == 1 && g.stride_w == 1 && g.pad_h == 0 &&
                g.pad_w == 0;
  return s;
}

template <typename Scalar>
ConvKernel<Scalar> as_column_kernel(const ConvKernel<Scalar>& k) {
  ConvKernel<Scalar> col;
  col.weight = k.weight.reshaped({k.out_channels(), k.in_channels(), k.kw(), 1});
  col.bias = k.bias;
  return col;
}

template <typename Scalar>
void check_slice_kernel(const Tensor<Scalar>& x, const ConvKernel<Scalar>& k) {
  const Nchw in = nchw(x, "slice_conv1d input");
  require(k.weight.rank() == 4 && k.kh() == 1, "slice kernel must be (C, C, 1, w)");
  require(k.out_channels() == k.in_channels(), "slice kernel must map C -> C");
  require(k.in_channels() == in.c, "slice_conv1d: channel mismatch");
  require(k.kw() % 2 == 1, "slice kernel width must be odd");
}

struct UpsampleTap {
  Index i0, i1;
  double w0, w1;
};

std::vector<UpsampleTap> upsample_taps(Index in, Index factor) {
  std::vector<UpsampleTap> taps(static_cast<std::size_t>(in * factor));
  for (Index d = 0; d < in * factor; ++d) {
    double src = (static_cast<double>(d) + 0.5) / static_cast<double>(factor) - 0.5;
    if (src < 0.0) src = 0.0;
    const Index i0 = std::min<Index>(static_cast<Index>(std::floor(src)), in - 1);
    const Index i1 = std::min<Index>(i0 + 1, in - 1);
    const double l1 = src - static_cast<double>(i0);
    taps[static_cast<std::size_t>(d)] = {i0, i1, 1.0 - l1, l1};
  }
  return taps;
}

}  // namespace

Index conv_output_extent(Index in, Index kernel, Index stride, Index pad) {
  const Index span = in + 2 * pad - kernel;
  if (span < 0) return 0;
  return span / stride + 1;
}

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const ConvKernel<Scalar>& k, const ConvGeometry& g) {
  const ConvShape s = conv_shape(x, k, g);
  Tensor<Scalar> y({s.in.n, s.out_channels, s.out_h, s.out_w});
  ConstMatMap<Scalar> weights(k.weight.data(), s.out_channels, s.patch());
  Vector<Scalar> cols;
  if (!s.pointwise) cols.resize(s.patch() * s.positions());
  for (Index n = 0; n < s.in.n; ++n) {
    const Scalar* img = x.data() + n * s.in.c * s.in.plane();
    MatMap<Scalar> out(y.data() + n * s.out_channels * s.positions(), s.out_channels, s.positions());
    if (s.pointwise) {
      out.noalias() = weights * ConstMatMap<Scalar>(img, s.in.c, s.positions());
    } else {
      im2col(img, s.in.c, s.in.h, s.in.w, s.kh, s.kw, g, s.out_h, s.out_w, cols.data());
      out.noalias() = weights * ConstMatMap<Scalar>(cols.data(), s.patch(), s.positions());
    }
    if (k.bias) out.colwise() += k.bias->flat();
  }
  return y;
}

template <typename Scalar>
ConvGrads<Scalar> conv2d_backward(const Tensor<Scalar>& x, const ConvKernel<Scalar>& k,
                                  const ConvGeometry& g, const Tensor<Scalar>& grad_out) {
  const ConvShape s = conv_shape(x, k, g);
  require(grad_out.dims() == Dims{s.in.n, s.out_channels, s.out_h, s.out_w},
          "conv2d_backward: grad_out dims " + dims_to_string(grad_out.dims()));
  ConvGrads<Scalar> grads{Tensor<Scalar>::zeros_like(x), Tensor<Scalar>::zeros_like(k.weight),
                          std::nullopt};
  if (k.bias) grads.bias = Tensor<Scalar>({s.out_channels});

  ConstMatMap<Scalar> weights(k.weight.data(), s.out_channels, s.patch());
  MatMap<Scalar> grad_weights(grads.weight.data(), s.out_channels, s.patch());
  Vector<Scalar> cols;
  Vector<Scalar> grad_cols;
  if (!s.pointwise) {
    cols.resize(s.patch() * s.positions());
    grad_cols.resize(s.patch() * s.positions());
  }
  for (Index n = 0; n < s.in.n; ++n) {
    const Scalar* img = x.data() + n * s.in.c * s.in.plane();
    Scalar* grad_img = grads.input.data() + n * s.in.c * s.in.plane();
    ConstMatMap<Scalar> gy(grad_out.data() + n * s.out_channels * s.positions(), s.out_channels,
                           s.positions());
    if (s.pointwise) {
      ConstMatMap<Scalar> in(img, s.in.c, s.positions());
      grad_weights.noalias() += gy * in.transpose();
      MatMap<Scalar>(grad_img, s.in.c, s.positions()).noalias() = weights.transpose() * gy;
    } else {
      im2col(img, s.in.c, s.in.h, s.in.w, s.kh, s.kw, g, s.out_h, s.out_w, cols.data());
      ConstMatMap<Scalar> c(cols.data(), s.patch(), s.positions());
      grad_weights.noalias() += gy * c.transpose();
      MatMap<Scalar>(grad_cols.data(), s.patch(), s.positions()).noalias() = weights.transpose() * gy;
      col2im(grad_cols.data(), s.in.c, s.in.h, s.in.w, s.kh, s.kw, g, s.out_h, s.out_w, grad_img);
    }
    if (grads.bias) grads.bias->flat() += gy.rowwise().sum();
  }
  return grads;
}

template <typename Scalar>
Tensor<Scalar> slice_conv1d(const Tensor<Scalar>& x, const ConvKernel<Scalar>& k, SliceAxis axis) {
  check_slice_kernel(x, k);
  const Index half = k.kw() / 2;
  if (axis == SliceAxis::kRows) return conv2d(x, k, ConvGeometry{1, 1, 0, half});
  return conv2d(x, as_column_kernel(k), ConvGeometry{1, 1, half, 0});
}

template <typename Scalar>
ConvGrads<Scalar> slice_conv1d_backward(const Tensor<Scalar>& x, const ConvKernel<Scalar>& k,
                                        SliceAxis axis, const Tensor<Scalar>& grad_out) {
  check_slice_kernel(x, k);
  const Index half = k.kw() / 2;
  if (axis == SliceAxis::kRows) return conv2d_backward(x, k, ConvGeometry{1, 1, 0, half}, grad_out);
  ConvGrads<Scalar> g = conv2d_backward(x, as_column_kernel(k), ConvGeometry{1, 1, half, 0}, grad_out);
  g.weight = g.weight.reshaped(k.weight.dims());
  return g;
}

template <typename Scalar>
Tensor<Scalar> bilinear_upsample(const Tensor<Scalar>& x, Index factor) {
  const Nchw in = nchw(x, "bilinear_upsample input");
  require(factor >= 1, "bilinear_upsample: factor must be positive");
  const auto rows = upsample_taps(in.h, factor);
  const auto cols = upsample_taps(in.w, factor);
  const Index oh = in.h * factor;
  const Index ow = in.w * factor;
  Tensor<Scalar> y({in.n, in.c, oh, ow});
  // Separable: widen every source row, then blend pairs of widened rows.
  RowMatrix<Scalar> wide(in.h, ow);
  for (Index p = 0; p < in.n * in.c; ++p) {
    const Scalar* src = x.data() + p * in.plane();
    for (Index i = 0; i < in.h; ++i)
      for (Index j = 0; j < ow; ++j) {
        const UpsampleTap& c = cols[static_cast<std::size_t>(j)];
        wide(i, j) = static_cast<Scalar>(c.w0 * src[i * in.w + c.i0] + c.w1 * src[i * in.w + c.i1]);
      }
    MatMap<Scalar> dst(y.data() + p * oh * ow, oh, ow);
    for (Index i = 0; i < oh; ++i) {
      const UpsampleTap& r = rows[static_cast<std::size_t>(i)];
      dst.row(i) = wide.row(r.i0) * static_cast<Scalar>(r.w0) + wide.row(r.i1) * static_cast<Scalar>(r.w1);
    }
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> bilinear_upsample_backward(const Dims& input_dims, Index factor,
                                          const Tensor<Scalar>& grad_out) {
  require(input_dims.size() == 4, "bilinear_upsample_backward: input must be NCHW");
  const Nchw in{input_dims[0], input_dims[1], input_dims[2], input_dims[3]};
  const Index oh = in.h * factor;
  const Index ow = in.w * factor;
  require(grad_out.dims() == Dims{in.n, in.c, oh, ow}, "bilinear_upsample_backward: dims mismatch");
  const auto rows = upsample_taps(in.h, factor);
  const auto cols = upsample_taps(in.w, factor);
  Tensor<Scalar> gx(input_dims);
  RowMatrix<Scalar> wide(in.h, ow);
  for (Index p = 0; p < in.n * in.c; ++p) {
    ConstMatMap<Scalar> g(grad_out.data() + p * oh * ow, oh, ow);
    wide.setZero();
    for (Index i = 0; i < oh; ++i) {
      const UpsampleTap& r = rows[static_cast<std::size_t>(i)];
      wide.row(r.i0) += g.row(i) * static_cast<Scalar>(r.w0);
      wide.row(r.i1) += g.row(i) * static_cast<Scalar>(r.w1);
    }
    Scalar* dst = gx.data() + p * in.plane();
    for (Index i = 0; i < in.h; ++i)
      for (Index j = 0; j < ow; ++j) {
        const UpsampleTap& c = cols[static_cast<std::size_t>(j)];
        dst[i * in.w + c.i0] += static_cast<Scalar>(c.w0) * wide(i, j);
        dst[i * in.w + c.i1] += static_cast<Scalar>(c.w1) * wide(i, j);
      }
  }
  return gx;
}

namespace {

template <typename Scalar>
void check_transpose_kernel(const Tensor<Scalar>& x, const ConvKernel<Scalar>& k) {
  const Nchw in = nchw(x, "transpose_conv2x input");
  require(k.weight.rank() == 4 && k.kh() == 2 && k.kw() == 2,
          "transpose_conv2x kernel must be (out, in, 2, 2)");
  require(k.in_channels() == in.c, "transpose_conv2x: channel mismatch");
  if (k.bias) require(k.bias->size() == k.out_channels(), "transpose_conv2x: bias length mismatch");
}

// (out, in, 2, 2) -> rows ordered (out, a, b), columns in.
template <typename Scalar>
RowMatrix<Scalar> tap_major_weights(const ConvKernel<Scalar>& k) {
  const Index out = k.out_channels();
  const Index in = k.in_channels();
  RowMatrix<Scalar> m(out * 4, in);
  for (Index o = 0; o < out; ++o)
    for (Index c = 0; c < in; ++c)
      for (Index t = 0; t < 4; ++t) m(o * 4 + t, c) = k.weight[(o * in + c) * 4 + t];
  return m;
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> transpose_conv2x(const Tensor<Scalar>& x, const ConvKernel<Scalar>& k) {
  check_transpose_kernel(x, k);
  const Nchw in = nchw(x);
  const Index out_c = k.out_channels();
  const Index ow = 2 * in.w;
  Tensor<Scalar> y({in.n, out_c, 2 * in.h, ow});
  const RowMatrix<Scalar> taps = tap_major_weights(k);
  RowMatrix<Scalar> scattered(out_c * 4, in.plane());
  for (Index n = 0; n < in.n; ++n) {
    scattered.noalias() = taps * ConstMatMap<Scalar>(x.data() + n * in.c * in.plane(), in.c, in.plane());
    for (Index o = 0; o < out_c; ++o) {
      Scalar* dst = y.data() + (n * out_c + o) * 4 * in.plane();
      const Scalar b = k.bias ? (*k.bias)[o] : Scalar(0);
      for (Index a = 0; a < 2; ++a)
        for (Index bb = 0; bb < 2; ++bb) {
          const Scalar* src = scattered.row(o * 4 + a * 2 + bb).data();
          for (Index i = 0; i < in.h; ++i)
            for (Index j = 0; j < in.w; ++j)
              dst[(2 * i + a) * ow + 2 * j + bb] = src[i * in.w + j] + b;
        }
    }
  }
  return y;
}

template <typename Scalar>
ConvGrads<Scalar> transpose_conv2x_backward(const Tensor<Scalar>& x, const ConvKernel<Scalar>& k,
                                            const Tensor<Scalar>& grad_out) {
  check_transpose_kernel(x, k);
  const Nchw in = nchw(x);
  const Index out_c = k.out_channels();
  const Index ow = 2 * in.w;
  require(grad_out.dims() == Dims{in.n, out_c, 2 * in.h, ow}, "transpose_conv2x_backward: dims mismatch");
  const RowMatrix<Scalar> taps = tap_major_weights(k);
  RowMatrix<Scalar> gathered(out_c * 4, in.plane());
  RowMatrix<Scalar> grad_taps = RowMatrix<Scalar>::Zero(out_c * 4, in.c);
  ConvGrads<Scalar> grads{Tensor<Scalar>::zeros_like(x), Tensor<Scalar>::zeros_like(k.weight),
                          std::nullopt};
  if (k.bias) grads.bias = Tensor<Scalar>({out_c});
  for (Index n = 0; n < in.n; ++n) {
    for (Index o = 0; o < out_c; ++o) {
      const Scalar* g = grad_out.data() + (n * out_c + o) * 4 * in.plane();
      for (Index a = 0; a < 2; ++a)
        for (Index bb = 0; bb < 2; ++bb) {
          Scalar* dst = gathered.row(o * 4 + a * 2 + bb).data();
          for (Index i = 0; i < in.h; ++i)
            for (Index j = 0; j < in.w; ++j) dst[i * in.w + j] = g[(2 * i + a) * ow + 2 * j + bb];
        }
      if (grads.bias) {
        Scalar acc(0);
        for (Index t = 0; t < 4 * in.plane(); ++t) acc += g[t];
        (*grads.bias)[o] += acc;
      }
    }
    ConstMatMap<Scalar> xn(x.data() + n * in.c * in.plane(), in.c, in.plane());
    grad_taps.noalias() += gathered * xn.transpose();
    MatMap<Scalar>(grads.input.data() + n * in.c * in.plane(), in.c, in.plane()).noalias() =
        taps.transpose() * gathered;
  }
  for (Index o = 0; o < out_c; ++o)
    for (Index c = 0; c < in.c; ++c)
      for (Index t = 0; t < 4; ++t) grads.weight[(o * in.c + c) * 4 + t] = grad_taps(o * 4 + t, c);
  return grads;
}

template <typename Scalar>
Tensor<Scalar> batch_norm(const Tensor<Scalar>& x, const BatchNormParams<Scalar>& p, NormMode mode,
                          double eps, BatchNormCache<Scalar>* cache) {
  const Nchw s = nchw(x, "batch_norm input");
  require(p.gamma.size() == s.c && p.beta.size() == s.c && p.running_mean.size() == s.c &&
              p.running_var.size() == s.c,
          "batch_norm: per-channel parameter length must equal C");
  const Index count = s.n * s.plane();
  Tensor<Scalar> y = x;
  Tensor<Scalar> normalized = x;
  Tensor<Scalar> inv_std({s.c});
  Tensor<Scalar> batch_mean({s.c});
  Tensor<Scalar> batch_var({s.c});
  const Index plane = s.plane();
  auto seg = [plane, &s](auto& t, Index n, Index c) { return t.flat().segment((n * s.c + c) * plane, plane); };
  for (Index c = 0; c < s.c; ++c) {
    double mean;
    double var;
    if (mode == NormMode::kTrain) {
      double sum = 0.0;
      for (Index n = 0; n < s.n; ++n) sum += seg(x, n, c).template cast<double>().sum();
      mean = sum / static_cast<double>(count);
      double sq = 0.0;
      for (Index n = 0; n < s.n; ++n) sq += (seg(x, n, c).template cast<double>().array() - mean).square().sum();
      var = sq / static_cast<double>(count);
      batch_mean[c] = static_cast<Scalar>(mean);
      batch_var[c] = static_cast<Scalar>(var);
    } else {
      mean = p.running_mean[c];
      var = p.running_var[c];
    }
    const Scalar istd = static_cast<Scalar>(1.0 / std::sqrt(var + eps));
    const Scalar m = static_cast<Scalar>(mean);
    inv_std[c] = istd;
    const Scalar gamma = p.gamma[c];
    const Scalar beta = p.beta[c];
    for (Index n = 0; n < s.n; ++n) {
      auto xh = seg(normalized, n, c);
      xh = (seg(x, n, c).array() - m) * istd;
      seg(y, n, c) = (xh.array() * gamma + beta).matrix();
    }
  }
  if (cache) {
    cache->mode = mode;
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
    cache->batch_mean = std::move(batch_mean);
    cache->batch_var = std::move(batch_var);
    cache->count = count;
  }
  return y;
}

template <typename Scalar>
BatchNormGrads<Scalar> batch_norm_backward(const BatchNormCache<Scalar>& cache,
                                           const BatchNormParams<Scalar>& p,
                                           const Tensor<Scalar>& grad_out) {
  Tensor<Scalar>::require_same_dims(cache.normalized, grad_out, "batch_norm_backward");
  const Nchw s = nchw(grad_out);
  BatchNormGrads<Scalar> g{grad_out, Tensor<Scalar>({s.c}),
                           Tensor<Scalar>({s.c})};
  const double m = static_cast<double>(cache.count);
  const Index plane = s.plane();
  auto seg = [plane, &s](auto& t, Index n, Index c) { return t.flat().segment((n * s.c + c) * plane, plane); };
  for (Index c = 0; c < s.c; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xh = 0.0;
    for (Index n = 0; n < s.n; ++n) {
      sum_dy += seg(grad_out, n, c).template cast<double>().sum();
      sum_dy_xh += seg(grad_out, n, c).template cast<double>().dot(seg(cache.normalized, n, c).template cast<double>());
    }
    g.beta[c] = static_cast<Scalar>(sum_dy);
    g.gamma[c] = static_cast<Scalar>(sum_dy_xh);
    const double scale = static_cast<double>(p.gamma[c]) * cache.inv_std[c];
    for (Index n = 0; n < s.n; ++n) {
      if (cache.mode == NormMode::kTrain) {
        const Scalar a = static_cast<Scalar>(scale);
        const Scalar b = static_cast<Scalar>(scale * sum_dy / m);
        const Scalar k = static_cast<Scalar>(scale * sum_dy_xh / m);
        seg(g.input, n, c) = (seg(grad_out, n, c).array() * a - b - seg(cache.normalized, n, c).array() * k).matrix();
      } else {
        seg(g.input, n, c) = seg(grad_out, n, c) * static_cast<Scalar>(scale);
      }
    }
  }
  return g;
}

template <typename Scalar>
void update_running_stats(BatchNormParams<Scalar>& p, const BatchNormCache<Scalar>& cache,
                          double momentum) {
  if (cache.mode != NormMode::kTrain) return;
  const double unbias =
      cache.count > 1 ? static_cast<double>(cache.count) / static_cast<double>(cache.count - 1) : 1.0;
  for (Index c = 0; c < p.channels(); ++c) {
    p.running_mean[c] = static_cast<Scalar>((1.0 - momentum) * p.running_mean[c] +
                                            momentum * cache.batch_mean[c]);
    p.running_var[c] = static_cast<Scalar>((1.0 - momentum) * p.running_var[c] +
                                           momentum * cache.batch_var[c] * unbias);
  }
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  Tensor<Scalar> y = x;
  y.flat() = x.flat().cwiseMax(Scalar(0));
  return y;
}

template <typename Scalar>
Tensor<Scalar> relu_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& grad_out) {
  Tensor<Scalar>::require_same_dims(x, grad_out, "relu_backward");
  Tensor<Scalar> g = grad_out;
  const Scalar* xs = x.data();
  Scalar* gs = g.data();
  for (Index i = 0; i < g.size(); ++i) gs[i] = xs[i] > Scalar(0) ? gs[i] : Scalar(0);
  return g;
}

template <typename Scalar>
Tensor<Scalar> fc(const Tensor<Scalar>& x, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias) {
  require(x.rank() == 2 && weight.rank() == 2 && weight.dim(1) == x.dim(1),
          "fc: expected x (N, F) and weight (O, F)");
  require(bias.size() == weight.dim(0), "fc: bias length mismatch");
  Tensor<Scalar> y({x.dim(0), weight.dim(0)});
  auto out = y.matrix(x.dim(0), weight.dim(0));
  out.noalias() = x.matrix(x.dim(0), x.dim(1)) * weight.matrix(weight.dim(0), weight.dim(1)).transpose();
  out.rowwise() += bias.flat().transpose();
  return y;
}

template <typename Scalar>
FcGrads<Scalar> fc_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& weight,
                            const Tensor<Scalar>& grad_out) {
  require(grad_out.dims() == Dims{x.dim(0), weight.dim(0)}, "fc_backward: grad_out dims mismatch");
  FcGrads<Scalar> g{Tensor<Scalar>::zeros_like(x), Tensor<Scalar>::zeros_like(weight),
                    Tensor<Scalar>({weight.dim(0)})};
  const auto gy = grad_out.matrix(x.dim(0), weight.dim(0));
  g.input.matrix(x.dim(0), x.dim(1)).noalias() = gy * weight.matrix(weight.dim(0), weight.dim(1));
  g.weight.matrix(weight.dim(0), weight.dim(1)).noalias() = gy.transpose() * x.matrix(x.dim(0), x.dim(1));
  g.bias.flat() = gy.colwise().sum().transpose();
  return g;
}

template <typename Scalar>
Tensor<Scalar> softmax_rows(const Tensor<Scalar>& x) {
  require(x.rank() == 2, "softmax_rows expects a rank-2 tensor");
  Tensor<Scalar> y = x;
  auto m = y.matrix(x.dim(0), x.dim(1));
  for (Index r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> softmax_rows_backward(const Tensor<Scalar>& y, const Tensor<Scalar>& grad_out) {
  Tensor<Scalar>::require_same_dims(y, grad_out, "softmax_rows_backward");
  Tensor<Scalar> g = grad_out;
  auto gm = g.matrix(y.dim(0), y.dim(1));
  const auto ym = y.matrix(y.dim(0), y.dim(1));
  for (Index r = 0; r < gm.rows(); ++r) {
    const Scalar inner = gm.row(r).dot(ym.row(r));
    gm.row(r) = ym.row(r).cwiseProduct((gm.row(r).array() - inner).matrix());
  }
  return g;
}

template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& x) {
  const Nchw s = nchw(x, "global_avg_pool input");
  Tensor<Scalar> y({s.n, s.c});
  for (Index p = 0; p < s.n * s.c; ++p) {
    double acc = 0.0;
    const Scalar* src = x.data() + p * s.plane();
    for (Index t = 0; t < s.plane(); ++t) acc += src[t];
    y[p] = static_cast<Scalar>(acc / static_cast<double>(s.plane()));
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> global_avg_pool_backward(const Dims& input_dims, const Tensor<Scalar>& grad_out) {
  require(input_dims.size() == 4 && grad_out.dims() == Dims{input_dims[0], input_dims[1]},
          "global_avg_pool_backward: dims mismatch");
  Tensor<Scalar> gx(input_dims);
  const Index plane = input_dims[2] * input_dims[3];
  const Scalar inv = Scalar(1) / static_cast<Scalar>(plane);
  for (Index p = 0; p < grad_out.size(); ++p) {
    std::fill(gx.data() + p * plane, gx.data() + (p + 1) * plane, grad_out[p] * inv);
  }
  return gx;
}

#define RESA_INSTANTIATE_OPS(S)                                                                      \
  template Tensor<S> conv2d(const Tensor<S>&, const ConvKernel<S>&, const ConvGeometry&);             \
  template ConvGrads<S> conv2d_backward(const Tensor<S>&, const ConvKernel<S>&, const ConvGeometry&, \
                                        const Tensor<S>&);                                           \
  template Tensor<S> slice_conv1d(const Tensor<S>&, const ConvKernel<S>&, SliceAxis);                 \
  template ConvGrads<S> slice_conv1d_backward(const Tensor<S>&, const ConvKernel<S>&, SliceAxis,     \
                                              const Tensor<S>&);                                     \
  template Tensor<S> bilinear_upsample(const Tensor<S>&, Index);                                      \
  template Tensor<S> bilinear_upsample_backward(const Dims&, Index, const Tensor<S>&);                \
  template Tensor<S> transpose_conv2x(const Tensor<S>&, const ConvKernel<S>&);                        \
  template ConvGrads<S> transpose_conv2x_backward(const Tensor<S>&, const ConvKernel<S>&,            \
                                                  const Tensor<S>&);                                 \
  template Tensor<S> batch_norm(const Tensor<S>&, const BatchNormParams<S>&, NormMode, double,       \
                                BatchNormCache<S>*);                                                 \
  template BatchNormGrads<S> batch_norm_backward(const BatchNormCache<S>&, const BatchNormParams<S>&, \
                                                 const Tensor<S>&);                                  \
  template void update_running_stats(BatchNormParams<S>&, const BatchNormCache<S>&, double);         \
  template Tensor<S> relu(const Tensor<S>&);                                                         \
  template Tensor<S> relu_backward(const Tensor<S>&, const Tensor<S>&);                              \
  template Tensor<S> fc(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);                       \
  template FcGrads<S> fc_backward(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);             \
  template Tensor<S> softmax_rows(const Tensor<S>&);                                                 \
  template Tensor<S> softmax_rows_backward(const Tensor<S>&, const Tensor<S>&);                      \
  template Tensor<S> global_avg_pool(const Tensor<S>&);                                              \
  template Tensor<S> global_avg_pool_backward(const Dims&, const Tensor<S>&);

RESA_INSTANTIATE_OPS(float)
RESA_INSTANTIATE_OPS(double)

}  // namespace resa
