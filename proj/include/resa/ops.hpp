#pragma once

// Differentiable dense kernels. Every forward kernel here has a matching
// *_backward that returns exact gradients given the forward inputs (the saved
// state) and the gradient of the output. All kernels are pure.

#include <optional>

#include "resa/tensor.hpp"

namespace resa {

/// Stride and zero padding along each spatial axis.
struct ConvGeometry {
  Index stride_h = 1;
  Index stride_w = 1;
  Index pad_h = 0;
  Index pad_w = 0;

  static ConvGeometry uniform(Index stride, Index pad) { return {stride, stride, pad, pad}; }
};

template <typename Scalar>
struct ConvGrads {
  Tensor<Scalar> input;
  Tensor<Scalar> weight;
  std::optional<Tensor<Scalar>> bias;
};

Index conv_output_extent(Index in, Index kernel, Index stride, Index pad);

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const ConvKernel<Scalar>& k, const ConvGeometry& g);
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const ConvKernel<Scalar>& k, Index stride, Index pad) {
  return conv2d(x, k, ConvGeometry::uniform(stride, pad));
}
template <typename Scalar>
ConvGrads<Scalar> conv2d_backward(const Tensor<Scalar>& x, const ConvKernel<Scalar>& k,
                                  const ConvGeometry& g, const Tensor<Scalar>& grad_out);

/// Which 1-pixel-thick slices a 1-d convolution runs inside of.
enum class SliceAxis {
  kRows,     // each of the H rows (C x W) is convolved along W
  kColumns,  // each of the W columns (C x H) is convolved along H
};

/// Full channel-mixing 1-d convolution inside every slice, zero padded at
/// slice ends. The kernel is (C, C, 1, w) for both axes.
template <typename Scalar>
Tensor<Scalar> slice_conv1d(const Tensor<Scalar>& x, const ConvKernel<Scalar>& k, SliceAxis axis);
template <typename Scalar>
ConvGrads<Scalar> slice_conv1d_backward(const Tensor<Scalar>& x, const ConvKernel<Scalar>& k,
                                        SliceAxis axis, const Tensor<Scalar>& grad_out);

/// Half-pixel-centre bilinear up-sampling by an integer factor (edge clamped).
template <typename Scalar>
Tensor<Scalar> bilinear_upsample(const Tensor<Scalar>& x, Index factor);
template <typename Scalar>
Tensor<Scalar> bilinear_upsample_backward(const Dims& input_dims, Index factor,
                                          const Tensor<Scalar>& grad_out);
template <typename Scalar>
Tensor<Scalar> bilinear_upsample2x(const Tensor<Scalar>& x) {
  return bilinear_upsample(x, 2);
}

/// Stride-2 transpose convolution with a (out, in, 2, 2) kernel: every input
/// pixel scatters into its own 2x2 output block, so the output is exactly 2H x 2W.
template <typename Scalar>
Tensor<Scalar> transpose_conv2x(const Tensor<Scalar>& x, const ConvKernel<Scalar>& k);
template <typename Scalar>
ConvGrads<Scalar> transpose_conv2x_backward(const Tensor<Scalar>& x, const ConvKernel<Scalar>& k,
                                            const Tensor<Scalar>& grad_out);

enum class NormMode { kTrain, kInfer };

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

template <typename Scalar>
struct BatchNormParams {
  Tensor<Scalar> gamma;
  Tensor<Scalar> beta;
  Tensor<Scalar> running_mean;
  Tensor<Scalar> running_var;

  BatchNormParams() = default;
  explicit BatchNormParams(Index channels)
      : gamma({channels}, Scalar(1)),
        beta({channels}),
        running_mean({channels}),
        running_var({channels}, Scalar(1)) {}

  Index channels() const { return gamma.size(); }
};

/// Everything batch_norm_backward needs, plus the batch statistics used to
/// update the running estimates in train mode.
template <typename Scalar>
struct BatchNormCache {
  NormMode mode = NormMode::kInfer;
  Tensor<Scalar> normalized;  // x_hat
  Tensor<Scalar> inv_std;     // (C)
  Tensor<Scalar> batch_mean;  // (C), train mode only
  Tensor<Scalar> batch_var;   // (C), biased, train mode only
  Index count = 0;            // elements per channel
};

template <typename Scalar>
Tensor<Scalar> batch_norm(const Tensor<Scalar>& x, const BatchNormParams<Scalar>& p, NormMode mode,
                          double eps = kBatchNormEps, BatchNormCache<Scalar>* cache = nullptr);

template <typename Scalar>
struct BatchNormGrads {
  Tensor<Scalar> input;
  Tensor<Scalar> gamma;
  Tensor<Scalar> beta;
};

template <typename Scalar>
BatchNormGrads<Scalar> batch_norm_backward(const BatchNormCache<Scalar>& cache,
                                           const BatchNormParams<Scalar>& p,
                                           const Tensor<Scalar>& grad_out);

/// running <- (1 - momentum) * running + momentum * batch (unbiased variance).
template <typename Scalar>
void update_running_stats(BatchNormParams<Scalar>& p, const BatchNormCache<Scalar>& cache,
                          double momentum = kBatchNormMomentum);

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x);
/// ReLU subgradient at 0 is 0.
template <typename Scalar>
Tensor<Scalar> relu_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& grad_out);

/// Affine map on rows: x (N, F), weight (O, F), bias (O) -> (N, O).
template <typename Scalar>
Tensor<Scalar> fc(const Tensor<Scalar>& x, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias);

template <typename Scalar>
struct FcGrads {
  Tensor<Scalar> input;
  Tensor<Scalar> weight;
  Tensor<Scalar> bias;
};

template <typename Scalar>
FcGrads<Scalar> fc_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& weight,
                            const Tensor<Scalar>& grad_out);

/// Row-wise softmax of a rank-2 tensor.
template <typename Scalar>
Tensor<Scalar> softmax_rows(const Tensor<Scalar>& x);
template <typename Scalar>
Tensor<Scalar> softmax_rows_backward(const Tensor<Scalar>& y, const Tensor<Scalar>& grad_out);

/// (N, C, H, W) -> (N, C) spatial mean.
template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& x);
template <typename Scalar>
Tensor<Scalar> global_avg_pool_backward(const Dims& input_dims, const Tensor<Scalar>& grad_out);

}  // namespace resa
