#pragma once

// Bilateral up-sampling decoder. Each block maps (N, C, H, W) to
// (N, C/2, 2H, 2W) as the sum of
//   coarse: relu(bilinear2x(bn(conv1x1(x))))
//   fine:   nb(nb(relu(transpose_conv2x(x))))
// where nb is a factorised 3x1/1x3 residual block.

#include <array>
#include <string>
#include <vector>

#include "resa/ops.hpp"
#include "resa/params.hpp"
#include "resa/random.hpp"

namespace resa {

/// Layers alternate (C, C, 3, 1) and (C, C, 1, 3), each followed by batch norm.
template <typename Scalar>
struct NonBottleneck1DParams {
  std::array<ConvBn<Scalar>, 4> layers;
};

template <typename Scalar>
struct BusdBlockParams {
  ConvBn<Scalar> coarse;
  ConvKernel<Scalar> fine_up;  // (C/2, C, 2, 2) with bias
  std::array<NonBottleneck1DParams<Scalar>, 2> fine_blocks;

  Index in_channels() const { return coarse.conv.in_channels(); }
};

template <typename Scalar>
NonBottleneck1DParams<Scalar> make_nonbottleneck(Index channels, Rng* rng);
template <typename Scalar>
BusdBlockParams<Scalar> make_busd_block(Index in_channels, Rng* rng);

template <typename Scalar>
void collect_params(ParamList<Scalar>& out, const std::string& prefix, NonBottleneck1DParams<Scalar>& p) {
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    collect_params(out, prefix + "." + std::to_string(l), p.layers[l]);
  }
}

template <typename Scalar>
void collect_params(ParamList<Scalar>& out, const std::string& prefix, BusdBlockParams<Scalar>& p) {
  collect_params(out, prefix + ".coarse", p.coarse);
  collect_params(out, prefix + ".fine.up", p.fine_up);
  collect_params(out, prefix + ".fine.nb0", p.fine_blocks[0]);
  collect_params(out, prefix + ".fine.nb1", p.fine_blocks[1]);
}

template <typename Scalar>
struct NonBottleneckCache {
  Tensor<Scalar> input;
  std::array<Tensor<Scalar>, 4> conv_inputs;
  std::array<Tensor<Scalar>, 4> normalized;  // batch-norm outputs
  std::array<BatchNormCache<Scalar>, 4> bn;
  Tensor<Scalar> sum;  // input + branch, before the final relu
};

template <typename Scalar>
Tensor<Scalar> nonbottleneck1d(const Tensor<Scalar>& x, const NonBottleneck1DParams<Scalar>& p,
                               NormMode mode, NonBottleneckCache<Scalar>* cache = nullptr);

template <typename Scalar>
struct NonBottleneckGrads {
  Tensor<Scalar> input;
  NonBottleneck1DParams<Scalar> params;  // running statistics left at zero
};

template <typename Scalar>
NonBottleneckGrads<Scalar> nonbottleneck1d_backward(const NonBottleneckCache<Scalar>& cache,
                                                    const NonBottleneck1DParams<Scalar>& p,
                                                    const Tensor<Scalar>& grad_out);

template <typename Scalar>
struct BusdBlockCache {
  Tensor<Scalar> input;
  Tensor<Scalar> coarse_conv;
  BatchNormCache<Scalar> coarse_bn;
  Tensor<Scalar> coarse_upsampled;
  Tensor<Scalar> fine_up;
  Tensor<Scalar> fine_activated;
  Tensor<Scalar> fine_mid;
  std::array<NonBottleneckCache<Scalar>, 2> fine_blocks;
};

template <typename Scalar>
Tensor<Scalar> busd_block(const Tensor<Scalar>& x, const BusdBlockParams<Scalar>& p, NormMode mode,
                          BusdBlockCache<Scalar>* cache = nullptr);

template <typename Scalar>
struct BusdBlockGrads {
  Tensor<Scalar> input;
  BusdBlockParams<Scalar> params;
};

template <typename Scalar>
BusdBlockGrads<Scalar> busd_block_backward(const BusdBlockCache<Scalar>& cache,
                                           const BusdBlockParams<Scalar>& p,
                                           const Tensor<Scalar>& grad_out);

/// Updates every batch-norm running estimate touched by a train-mode forward.
template <typename Scalar>
void update_running_stats(BusdBlockParams<Scalar>& p, const BusdBlockCache<Scalar>& cache,
                          double momentum = kBatchNormMomentum);

}  // namespace resa
