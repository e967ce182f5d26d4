#include "resa/train.hpp"

#include <algorithm>
#include <numeric>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace resa {

namespace {

// Activations are allocated and freed every step. Above glibc's default mmap
// threshold each one gets fresh pages and pays the page faults again.
void keep_large_blocks_in_heap() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)done;
#endif
}

}  // namespace

std::vector<TrainingExample> make_examples(const std::vector<LabelledImage>& images, const ModelConfig& cfg) {
  std::vector<TrainingExample> out;
  out.reserve(images.size());
  const double line = static_cast<double>(line_width_for(cfg.width));
  for (const auto& li : images) {
    if (li.image.dims() != Dims{3, cfg.height, cfg.width}) {
      throw DataError("image " + dims_to_string(li.image.dims()) + " does not match the configured " +
                      std::to_string(cfg.height) + "x" + std::to_string(cfg.width));
    }
    Targets t = rasterize_targets(li.lanes, cfg.height, cfg.width, line, cfg.num_lanes);
    out.push_back({li.image, std::move(t.seg), std::move(t.exist), li.lanes});
  }
  return out;
}

std::vector<TrainingExample> training_examples(const ModelConfig& cfg) {
  if (!cfg.data_dir.empty()) return make_examples(load_dataset(cfg.data_dir, cfg.num_lanes), cfg);
  const SceneOptions scene{cfg.height, cfg.width, cfg.num_lanes};
  return make_examples(generate_images(cfg.train_samples, cfg.difficulty, cfg.data_seed, scene), cfg);
}

template <typename Scalar>
Tensor<Scalar> stack_images(const std::vector<const Tensor<float>*>& images) {
  if (images.empty()) throw ShapeError("stack_images: empty batch");
  const Dims& d = images.front()->dims();
  Tensor<Scalar> out({static_cast<Index>(images.size()), d[0], d[1], d[2]});
  const Index per = images.front()->size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i]->dims() != d) throw ShapeError("stack_images: mixed image dims");
    out.flat().segment(static_cast<Index>(i) * per, per) = images[i]->flat().template cast<Scalar>();
  }
  return out;
}

template <typename Scalar>
TrainOutcome<Scalar> train_network(const ModelConfig& cfg, const std::vector<TrainingExample>& data,
                                   const TrainHooks<Scalar>& hooks) {
  cfg.validate();
  keep_large_blocks_in_heap();
  if (data.empty()) throw DataError("training set is empty");
  TrainOutcome<Scalar> outcome{build_network<Scalar>(cfg), {}};
  NetworkWeights<Scalar>& w = outcome.weights;
  NetworkWeights<Scalar> velocity = zeros_like(w);
  const LrSchedule schedule = schedule_of(cfg);
  const SgdOptions base{0.0, cfg.momentum, cfg.weight_decay};

  Rng shuffle_rng(cfg.seed ^ 0x5DEECE66DULL);
  std::vector<std::size_t> order(data.size());
  std::size_t cursor = order.size();
  const Index n = cfg.batch_size;
  const Index plane = cfg.height * cfg.width;

  for (int iter = 0; iter < cfg.total_iters; ++iter) {
    std::vector<const TrainingExample*> batch;
    while (static_cast<Index>(batch.size()) < n) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        cursor = 0;
      }
      batch.push_back(&data[order[cursor++]]);
    }
    std::vector<const Tensor<float>*> images;
    Tensor<std::int32_t> seg({n, cfg.height, cfg.width});
    Tensor<Scalar> exist({n, cfg.num_lanes});
    for (Index b = 0; b < n; ++b) {
      const TrainingExample& ex = *batch[static_cast<std::size_t>(b)];
      images.push_back(&ex.image);
      std::copy(ex.seg.data(), ex.seg.data() + plane, seg.data() + b * plane);
      for (Index l = 0; l < cfg.num_lanes; ++l) exist(b, l) = static_cast<Scalar>(ex.exist[l]);
    }
    const Tensor<Scalar> x = stack_images<Scalar>(images);

    ForwardTape<Scalar> tape;
    const Prediction<Scalar> pred = forward(cfg, w, x, NormMode::kTrain, &tape);
    const LossResult<Scalar> loss = lane_loss(pred, seg, exist, cfg.bg_weight, cfg.exist_weight);
    NetworkGrads<Scalar> grads = backward(cfg, w, tape, loss.grad);
    SgdOptions opt = base;
    opt.lr = lr_at(iter, schedule);
    sgd_step(w, grads.weights, velocity, opt);
    update_running_stats(w, tape);

    const LossLogRow row{iter, opt.lr, loss.total};
    outcome.log.push_back(row);
    if (hooks.on_iteration) hooks.on_iteration(row);
    const int done = iter + 1;
    if (hooks.on_checkpoint && cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done != cfg.total_iters)
      hooks.on_checkpoint(done, w);
  }
  if (hooks.on_checkpoint) hooks.on_checkpoint(cfg.total_iters, w);
  return outcome;
}

template <typename Scalar>
std::vector<std::vector<LaneLabel>> predict_lanes(const ModelConfig& cfg, const NetworkWeights<Scalar>& w,
                                                  const std::vector<const Tensor<float>*>& images,
                                                  const DecodeOptions& decode, Index batch) {
  std::vector<std::vector<LaneLabel>> out;
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(batch)) {
    const std::size_t end = std::min(images.size(), start + static_cast<std::size_t>(batch));
    const std::vector<const Tensor<float>*> chunk(images.begin() + static_cast<std::ptrdiff_t>(start),
                                                  images.begin() + static_cast<std::ptrdiff_t>(end));
    const Prediction<Scalar> pred = forward(cfg, w, stack_images<Scalar>(chunk), NormMode::kInfer);
    for (std::size_t i = 0; i < chunk.size(); ++i) out.push_back(decode_lanes(pred, static_cast<Index>(i), decode));
  }
  return out;
}

template <typename Scalar>
EvalReport evaluate_culane(const ModelConfig& cfg, const NetworkWeights<Scalar>& w,
                           const std::vector<TrainingExample>& data, const DecodeOptions& decode) {
  std::vector<const Tensor<float>*> images;
  std::vector<std::vector<LaneLabel>> gts;
  for (const auto& ex : data) {
    images.push_back(&ex.image);
    gts.push_back(ex.lanes);
  }
  const auto preds = predict_lanes(cfg, w, images, decode);
  return culane_f1(preds, gts, 0.5, static_cast<double>(line_width_for(cfg.width)), cfg.height, cfg.width);
}

#define RESA_INSTANTIATE_TRAIN(S)                                                                          \
  template Tensor<S> stack_images(const std::vector<const Tensor<float>*>&);                               \
  template TrainOutcome<S> train_network(const ModelConfig&, const std::vector<TrainingExample>&,          \
                                         const TrainHooks<S>&);                                            \
  template std::vector<std::vector<LaneLabel>> predict_lanes(const ModelConfig&, const NetworkWeights<S>&, \
                                                             const std::vector<const Tensor<float>*>&,     \
                                                             const DecodeOptions&, Index);                 \
  template EvalReport evaluate_culane(const ModelConfig&, const NetworkWeights<S>&,                        \
                                      const std::vector<TrainingExample>&, const DecodeOptions&);

RESA_INSTANTIATE_TRAIN(float)
RESA_INSTANTIATE_TRAIN(double)

}  // namespace resa
