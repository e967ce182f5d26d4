#pragma once

// Single-threaded, deterministic training loop and dataset-level prediction.

#include <functional>
#include <vector>

#include "resa/data.hpp"
#include "resa/eval.hpp"
#include "resa/model.hpp"

namespace resa {

struct TrainingExample {
  Tensor<float> image;        // (3, H, W)
  Tensor<std::int32_t> seg;   // (H, W)
  Tensor<float> exist;        // (num_lanes)
  std::vector<LaneLabel> lanes;
};

/// Rasterises targets at the configured resolution with the scaled line width.
std::vector<TrainingExample> make_examples(const std::vector<LabelledImage>& images, const ModelConfig& cfg);

/// The training set named by cfg: data_dir when set, otherwise train_samples
/// generated from data_seed.
std::vector<TrainingExample> training_examples(const ModelConfig& cfg);

struct LossLogRow {
  int iter = 0;
  double lr = 0.0;
  double loss = 0.0;
};

template <typename Scalar>
struct TrainHooks {
  std::function<void(const LossLogRow&)> on_iteration;
  /// Called after iteration `iter` (1-based count of completed steps).
  std::function<void(int iter, const NetworkWeights<Scalar>&)> on_checkpoint;
};

template <typename Scalar>
struct TrainOutcome {
  NetworkWeights<Scalar> weights;
  std::vector<LossLogRow> log;
};

/// Runs cfg.total_iters SGD steps over batches drawn from a per-epoch
/// shuffle seeded by cfg.seed.
template <typename Scalar>
TrainOutcome<Scalar> train_network(const ModelConfig& cfg, const std::vector<TrainingExample>& data,
                                   const TrainHooks<Scalar>& hooks = {});

/// Stacks images into an (N, 3, H, W) batch.
template <typename Scalar>
Tensor<Scalar> stack_images(const std::vector<const Tensor<float>*>& images);

/// Inference-mode lanes for every image.
template <typename Scalar>
std::vector<std::vector<LaneLabel>> predict_lanes(const ModelConfig& cfg, const NetworkWeights<Scalar>& w,
                                                  const std::vector<const Tensor<float>*>& images,
                                                  const DecodeOptions& decode = {}, Index batch = 8);

template <typename Scalar>
EvalReport evaluate_culane(const ModelConfig& cfg, const NetworkWeights<Scalar>& w,
                           const std::vector<TrainingExample>& data, const DecodeOptions& decode = {});

}  // namespace resa
