#pragma once

// End-to-end lane network: strided conv encoder -> optional RESA -> BUSD
// decoder (or plain bilinear 8x) -> per-pixel class logits, plus an
// existence classifier on globally pooled features.

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "resa/aggregator.hpp"
#include "resa/config.hpp"
#include "resa/decoder.hpp"
#include "resa/lane.hpp"
#include "resa/params.hpp"

namespace resa {

template <typename Scalar>
struct NetworkWeights {
  std::vector<ConvBn<Scalar>> encoder;  // 3x3, stride 2
  std::optional<ResaParams<Scalar>> resa;
  std::vector<BusdBlockParams<Scalar>> decoder;  // empty for the bilinear decoder
  ConvKernel<Scalar> seg_head;                   // 1x1 with bias
  Tensor<Scalar> exist_weight;                   // (num_lanes, C)
  Tensor<Scalar> exist_bias;                     // (num_lanes)
};

/// Deterministic initialisation from cfg.seed.
template <typename Scalar>
NetworkWeights<Scalar> build_network(const ModelConfig& cfg);

/// Tensor with the same structure and every entry zero.
template <typename Scalar>
NetworkWeights<Scalar> zeros_like(const NetworkWeights<Scalar>& w);

/// Named tensors in a fixed order ("encoder.0.conv.weight", "resa.D.0.weight", ...).
template <typename Scalar>
ParamList<Scalar> collect_params(NetworkWeights<Scalar>& w);

template <typename Scalar>
struct Prediction {
  Tensor<Scalar> seg_logits;        // (N, num_lanes + 1, H, W); channel 0 is background
  Tensor<Scalar> existence_logits;  // (N, num_lanes); entry i is lane channel i + 1
};

template <typename Scalar>
struct EncoderCache {
  std::vector<Tensor<Scalar>> stage_inputs;
  std::vector<BatchNormCache<Scalar>> bn;
  std::vector<Tensor<Scalar>> normalized;
};

/// (N, 3, H, W) -> (N, C_last, H / 2^stages, W / 2^stages).
template <typename Scalar>
Tensor<Scalar> encoder_stub(const Tensor<Scalar>& x, const std::vector<ConvBn<Scalar>>& stages,
                            NormMode mode, EncoderCache<Scalar>* cache = nullptr);

template <typename Scalar>
struct EncoderGrads {
  Tensor<Scalar> input;
  std::vector<ConvBn<Scalar>> stages;
};

template <typename Scalar>
EncoderGrads<Scalar> encoder_stub_backward(const EncoderCache<Scalar>& cache,
                                           const std::vector<ConvBn<Scalar>>& stages,
                                           const Tensor<Scalar>& grad_out);

template <typename Scalar>
struct ForwardTape {
  EncoderCache<Scalar> encoder;
  Tensor<Scalar> features;    // encoder output
  ResaTape<Scalar> resa;
  Tensor<Scalar> aggregated;  // RESA output (== features without RESA)
  std::vector<BusdBlockCache<Scalar>> decoder;
  Tensor<Scalar> head_input;
  Tensor<Scalar> exist_source;
  Tensor<Scalar> pooled;
};

template <typename Scalar>
Prediction<Scalar> forward(const ModelConfig& cfg, const NetworkWeights<Scalar>& w,
                           const Tensor<Scalar>& x, NormMode mode, ForwardTape<Scalar>* tape = nullptr);

template <typename Scalar>
struct NetworkGrads {
  Tensor<Scalar> input;
  NetworkWeights<Scalar> weights;
};

template <typename Scalar>
NetworkGrads<Scalar> backward(const ModelConfig& cfg, const NetworkWeights<Scalar>& w,
                              const ForwardTape<Scalar>& tape, const Prediction<Scalar>& grad);

/// Folds the batch statistics of a train-mode forward into the running estimates.
template <typename Scalar>
void update_running_stats(NetworkWeights<Scalar>& w, const ForwardTape<Scalar>& tape,
                          double momentum = kBatchNormMomentum);

template <typename Scalar>
struct LossResult {
  double total = 0.0;
  double segmentation = 0.0;
  double existence = 0.0;
  Prediction<Scalar> grad;
};

/// Weighted per-pixel cross-entropy (class 0 scaled by bg_weight, averaged over
/// all pixels) plus exist_weight times the mean binary cross-entropy of the
/// existence logits.
template <typename Scalar>
LossResult<Scalar> lane_loss(const Prediction<Scalar>& pred, const Tensor<std::int32_t>& seg_target,
                             const Tensor<Scalar>& exist_target, double bg_weight = 0.4,
                             double exist_weight = 1.0);

struct SgdOptions {
  double lr = 0.0;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

/// v <- momentum * v + grad + weight_decay * w;  w <- w - lr * v
template <typename Scalar>
void sgd_step(Tensor<Scalar>& w, const Tensor<Scalar>& grad, Tensor<Scalar>& velocity,
              const SgdOptions& opt);

/// Applies sgd_step to every trainable tensor; buffers are left alone.
template <typename Scalar>
void sgd_step(NetworkWeights<Scalar>& w, NetworkWeights<Scalar>& grads,
              NetworkWeights<Scalar>& velocity, const SgdOptions& opt);

struct LrSchedule {
  double base = 0.025;
  int warmup = 500;
  int total = 1500;
  double power = 0.9;
};

/// Linear warm-up 0 -> base over `warmup` iterations, then polynomial decay to 0 at `total`.
double lr_at(int iter, const LrSchedule& s);
LrSchedule schedule_of(const ModelConfig& cfg);

struct DecodeOptions {
  double exist_threshold = 0.5;
  double prob_threshold = 0.3;
  Index row_step = 4;  // rows H-1, H-1-step, ...
  std::size_t min_points = 2;
};

template <typename Scalar>
std::vector<LaneLabel> decode_lanes(const Prediction<Scalar>& pred, Index batch_index,
                                    const DecodeOptions& opt = {});

/// Weights plus running statistics as named RTEN entries.
template <typename Scalar>
void save_weights(const NetworkWeights<Scalar>& w, const std::filesystem::path& path);
/// Loads into a network built from cfg; every entry must be present with matching dims.
template <typename Scalar>
NetworkWeights<Scalar> load_weights(const ModelConfig& cfg, const std::filesystem::path& path);

}  // namespace resa
