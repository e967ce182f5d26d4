#include "resa/model.hpp"

#include <algorithm>
#include <cmath>

#include "resa/tensor_io.hpp"

namespace resa {

namespace {

Index head_channels(const ModelConfig& cfg) {
  const Index c = cfg.encoder_channels.back();
  if (cfg.decoder == DecoderKind::kBilinear) return c;
  return c >> cfg.encoder_channels.size();
}

Index upsample_factor(const ModelConfig& cfg) { return Index{1} << cfg.encoder_channels.size(); }

bool exist_from_decoder(const ModelConfig& cfg) {
  return cfg.exist_tap == ExistenceTap::kDecoder && cfg.decoder == DecoderKind::kBusd;
}

template <typename Scalar>
void zero_all(ParamList<Scalar>& params) {
  for (auto& p : params) p.tensor->set_zero();
}

}  // namespace

template <typename Scalar>
NetworkWeights<Scalar> build_network(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  NetworkWeights<Scalar> w;
  Index in = 3;
  for (Index c : cfg.encoder_channels) {
    ConvBn<Scalar> stage{ConvKernel<Scalar>(c, in, 3, 3), BatchNormParams<Scalar>(c)};
    init_he_uniform(stage.conv, rng);
    w.encoder.push_back(std::move(stage));
    in = c;
  }
  if (cfg.use_resa) w.resa = make_resa_params<Scalar>(in, cfg.resa, rng);
  if (cfg.decoder == DecoderKind::kBusd) {
    Index c = in;
    for (std::size_t b = 0; b < cfg.encoder_channels.size(); ++b) {
      w.decoder.push_back(make_busd_block<Scalar>(c, &rng));
      c /= 2;
    }
  }
  const Index hc = head_channels(cfg);
  w.seg_head = ConvKernel<Scalar>(cfg.num_lanes + 1, hc, 1, 1, true);
  const double head_bound = 1.0 / std::sqrt(static_cast<double>(hc));
  fill_uniform(w.seg_head.weight, rng, -head_bound, head_bound);
  const Index ec = exist_from_decoder(cfg) ? hc : in;
  w.exist_weight = Tensor<Scalar>({cfg.num_lanes, ec});
  w.exist_bias = Tensor<Scalar>({cfg.num_lanes});
  const double exist_bound = 1.0 / std::sqrt(static_cast<double>(ec));
  fill_uniform(w.exist_weight, rng, -exist_bound, exist_bound);
  return w;
}

template <typename Scalar>
NetworkWeights<Scalar> zeros_like(const NetworkWeights<Scalar>& w) {
  NetworkWeights<Scalar> z = w;
  ParamList<Scalar> params = collect_params(z);
  zero_all(params);
  return z;
}

template <typename Scalar>
ParamList<Scalar> collect_params(NetworkWeights<Scalar>& w) {
  ParamList<Scalar> out;
  for (std::size_t i = 0; i < w.encoder.size(); ++i) {
    collect_params(out, "encoder." + std::to_string(i), w.encoder[i]);
  }
  if (w.resa) {
    for (std::size_t d = 0; d < w.resa->kernels.size(); ++d) {
      const char code = direction_code(w.resa->config.directions[d]);
      for (std::size_t k = 0; k < w.resa->kernels[d].size(); ++k) {
        collect_params(out, std::string("resa.") + code + "." + std::to_string(k), w.resa->kernels[d][k]);
      }
    }
  }
  for (std::size_t b = 0; b < w.decoder.size(); ++b) {
    collect_params(out, "busd." + std::to_string(b), w.decoder[b]);
  }
  collect_params(out, "head.seg", w.seg_head);
  out.push_back({"head.exist.weight", &w.exist_weight, ParamKind::kTrainable});
  out.push_back({"head.exist.bias", &w.exist_bias, ParamKind::kTrainable});
  return out;
}

template <typename Scalar>
Tensor<Scalar> encoder_stub(const Tensor<Scalar>& x, const std::vector<ConvBn<Scalar>>& stages,
                            NormMode mode, EncoderCache<Scalar>* cache) {
  const Nchw s = nchw(x, "encoder input");
  const Index reduction = Index{1} << stages.size();
  if (s.h % reduction || s.w % reduction) {
    throw ShapeError("encoder input " + dims_to_string(x.dims()) + " not divisible by " +
                     std::to_string(reduction));
  }
  if (cache) *cache = {};
  Tensor<Scalar> h = x;
  for (const auto& stage : stages) {
    BatchNormCache<Scalar> bn;
    Tensor<Scalar> a = conv2d(h, stage.conv, 2, 1);
    Tensor<Scalar> b = batch_norm(a, stage.bn, mode, kBatchNormEps, cache ? &bn : nullptr);
    Tensor<Scalar> next = relu(b);
    if (cache) {
      cache->stage_inputs.push_back(std::move(h));
      cache->bn.push_back(std::move(bn));
      cache->normalized.push_back(std::move(b));
    }
    h = std::move(next);
  }
  return h;
}

template <typename Scalar>
EncoderGrads<Scalar> encoder_stub_backward(const EncoderCache<Scalar>& cache,
                                           const std::vector<ConvBn<Scalar>>& stages,
                                           const Tensor<Scalar>& grad_out) {
  if (cache.stage_inputs.size() != stages.size()) throw ShapeError("encoder_stub_backward: cache mismatch");
  EncoderGrads<Scalar> g{grad_out, stages};
  for (std::size_t i = stages.size(); i-- > 0;) {
    const Tensor<Scalar> g_b = relu_backward(cache.normalized[i], g.input);
    BatchNormGrads<Scalar> bg = batch_norm_backward(cache.bn[i], stages[i].bn, g_b);
    ConvGrads<Scalar> cg = conv2d_backward(cache.stage_inputs[i], stages[i].conv, ConvGeometry::uniform(2, 1), bg.input);
    g.stages[i].conv.weight = std::move(cg.weight);
    g.stages[i].bn.gamma = std::move(bg.gamma);
    g.stages[i].bn.beta = std::move(bg.beta);
    g.stages[i].bn.running_mean.set_zero();
    g.stages[i].bn.running_var.set_zero();
    g.input = std::move(cg.input);
  }
  return g;
}

template <typename Scalar>
Prediction<Scalar> forward(const ModelConfig& cfg, const NetworkWeights<Scalar>& w,
                           const Tensor<Scalar>& x, NormMode mode, ForwardTape<Scalar>* tape) {
  const Nchw s = nchw(x, "network input");
  if (s.c != 3 || s.h != cfg.height || s.w != cfg.width) {
    throw ShapeError("network input " + dims_to_string(x.dims()) + " does not match config " +
                     std::to_string(cfg.height) + "x" + std::to_string(cfg.width));
  }
  if (w.encoder.size() != cfg.encoder_channels.size() || w.resa.has_value() != cfg.use_resa ||
      (cfg.decoder == DecoderKind::kBusd) != !w.decoder.empty()) {
    throw ShapeError("network weights do not match config");
  }

  Tensor<Scalar> features = encoder_stub(x, w.encoder, mode, tape ? &tape->encoder : nullptr);
  Tensor<Scalar> aggregated = w.resa ? resa_forward(features, *w.resa, tape ? &tape->resa : nullptr) : features;

  Prediction<Scalar> pred;
  Tensor<Scalar> head_input = aggregated;
  if (cfg.decoder == DecoderKind::kBusd) {
    if (tape) tape->decoder.assign(w.decoder.size(), {});
    for (std::size_t b = 0; b < w.decoder.size(); ++b) {
      head_input = busd_block(head_input, w.decoder[b], mode, tape ? &tape->decoder[b] : nullptr);
    }
    pred.seg_logits = conv2d(head_input, w.seg_head, 1, 0);
  } else {
    pred.seg_logits = bilinear_upsample(conv2d(aggregated, w.seg_head, 1, 0), upsample_factor(cfg));
  }
  const Tensor<Scalar>& exist_source = exist_from_decoder(cfg) ? head_input : aggregated;
  Tensor<Scalar> pooled = global_avg_pool(exist_source);
  pred.existence_logits = fc(pooled, w.exist_weight, w.exist_bias);

  if (tape) {
    tape->exist_source = exist_source;
    tape->features = std::move(features);
    tape->aggregated = std::move(aggregated);
    tape->head_input = std::move(head_input);
    tape->pooled = std::move(pooled);
  }
  return pred;
}

template <typename Scalar>
NetworkGrads<Scalar> backward(const ModelConfig& cfg, const NetworkWeights<Scalar>& w,
                              const ForwardTape<Scalar>& tape, const Prediction<Scalar>& grad) {
  NetworkGrads<Scalar> out{{}, zeros_like(w)};
  NetworkWeights<Scalar>& g = out.weights;

  FcGrads<Scalar> fg = fc_backward(tape.pooled, w.exist_weight, grad.existence_logits);
  g.exist_weight = std::move(fg.weight);
  g.exist_bias = std::move(fg.bias);
  const Tensor<Scalar> g_exist_source = global_avg_pool_backward(tape.exist_source.dims(), fg.input);

  Tensor<Scalar> g_agg;
  if (cfg.decoder == DecoderKind::kBusd) {
    ConvGrads<Scalar> hg = conv2d_backward(tape.head_input, w.seg_head, ConvGeometry{}, grad.seg_logits);
    g.seg_head.weight = std::move(hg.weight);
    g.seg_head.bias = std::move(hg.bias);
    Tensor<Scalar> gd = std::move(hg.input);
    if (exist_from_decoder(cfg)) gd += g_exist_source;
    for (std::size_t b = w.decoder.size(); b-- > 0;) {
      BusdBlockGrads<Scalar> bg = busd_block_backward(tape.decoder[b], w.decoder[b], gd);
      g.decoder[b] = std::move(bg.params);
      gd = std::move(bg.input);
    }
    g_agg = std::move(gd);
  } else {
    const Nchw a = nchw(tape.aggregated);
    const Tensor<Scalar> g_low =
        bilinear_upsample_backward({a.n, cfg.num_lanes + 1, a.h, a.w}, upsample_factor(cfg), grad.seg_logits);
    ConvGrads<Scalar> hg = conv2d_backward(tape.aggregated, w.seg_head, ConvGeometry{}, g_low);
    g.seg_head.weight = std::move(hg.weight);
    g.seg_head.bias = std::move(hg.bias);
    g_agg = std::move(hg.input);
  }
  if (!exist_from_decoder(cfg)) g_agg += g_exist_source;

  Tensor<Scalar> g_features;
  if (w.resa) {
    ResaGrads<Scalar> rg = resa_backward(*w.resa, tape.resa, g_agg);
    for (std::size_t d = 0; d < rg.kernels.size(); ++d)
      for (std::size_t k = 0; k < rg.kernels[d].size(); ++k) g.resa->kernels[d][k].weight = std::move(rg.kernels[d][k]);
    g_features = std::move(rg.input);
  } else {
    g_features = std::move(g_agg);
  }

  EncoderGrads<Scalar> eg = encoder_stub_backward(tape.encoder, w.encoder, g_features);
  g.encoder = std::move(eg.stages);
  out.input = std::move(eg.input);
  return out;
}

template <typename Scalar>
void update_running_stats(NetworkWeights<Scalar>& w, const ForwardTape<Scalar>& tape, double momentum) {
  for (std::size_t i = 0; i < w.encoder.size(); ++i) update_running_stats(w.encoder[i].bn, tape.encoder.bn[i], momentum);
  for (std::size_t b = 0; b < w.decoder.size(); ++b) update_running_stats(w.decoder[b], tape.decoder[b], momentum);
}

template <typename Scalar>
LossResult<Scalar> lane_loss(const Prediction<Scalar>& pred, const Tensor<std::int32_t>& seg_target,
                             const Tensor<Scalar>& exist_target, double bg_weight, double exist_weight) {
  const Nchw s = nchw(pred.seg_logits, "seg logits");
  if (seg_target.dims() != Dims{s.n, s.h, s.w}) {
    throw ShapeError("seg target " + dims_to_string(seg_target.dims()) + " does not match logits");
  }
  const Index lanes = s.c - 1;
  if (exist_target.dims() != Dims{s.n, lanes} || pred.existence_logits.dims() != exist_target.dims()) {
    throw ShapeError("existence target/logit dims mismatch");
  }
  LossResult<Scalar> r;
  r.grad.seg_logits = Tensor<Scalar>::zeros_like(pred.seg_logits);
  r.grad.existence_logits = Tensor<Scalar>::zeros_like(pred.existence_logits);

  const double pixels = static_cast<double>(s.n * s.plane());
  std::vector<double> prob(static_cast<std::size_t>(s.c));
  double seg = 0.0;
  for (Index n = 0; n < s.n; ++n) {
    for (Index t = 0; t < s.plane(); ++t) {
      const std::int32_t label = seg_target[n * s.plane() + t];
      if (label < 0 || label >= s.c) {
        throw DataError("segmentation label " + std::to_string(label) + " out of range [0," +
                        std::to_string(s.c) + ")");
      }
      const Scalar* z = pred.seg_logits.data() + n * s.c * s.plane() + t;
      double zmax = z[0];
      for (Index c = 1; c < s.c; ++c) zmax = std::max<double>(zmax, z[c * s.plane()]);
      double sum = 0.0;
      for (Index c = 0; c < s.c; ++c) {
        prob[static_cast<std::size_t>(c)] = std::exp(static_cast<double>(z[c * s.plane()]) - zmax);
        sum += prob[static_cast<std::size_t>(c)];
      }
      const double weight = label == 0 ? bg_weight : 1.0;
      const double log_sum = zmax + std::log(sum);
      seg += weight * (log_sum - static_cast<double>(z[label * s.plane()]));
      Scalar* gz = r.grad.seg_logits.data() + n * s.c * s.plane() + t;
      for (Index c = 0; c < s.c; ++c) {
        const double p = prob[static_cast<std::size_t>(c)] / sum;
        gz[c * s.plane()] = static_cast<Scalar>(weight * (p - (c == label ? 1.0 : 0.0)) / pixels);
      }
    }
  }
  r.segmentation = seg / pixels;

  const double entries = static_cast<double>(exist_target.size());
  double bce = 0.0;
  for (Index i = 0; i < exist_target.size(); ++i) {
    const double z = pred.existence_logits[i];
    const double y = exist_target[i];
    bce += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    const double sig = 1.0 / (1.0 + std::exp(-z));
    r.grad.existence_logits[i] = static_cast<Scalar>(exist_weight * (sig - y) / entries);
  }
  r.existence = bce / entries;
  r.total = r.segmentation + exist_weight * r.existence;
  return r;
}

template <typename Scalar>
void sgd_step(Tensor<Scalar>& w, const Tensor<Scalar>& grad, Tensor<Scalar>& velocity, const SgdOptions& opt) {
  Tensor<Scalar>::require_same_dims(w, grad, "sgd_step");
  Tensor<Scalar>::require_same_dims(w, velocity, "sgd_step");
  const Scalar m = static_cast<Scalar>(opt.momentum);
  const Scalar wd = static_cast<Scalar>(opt.weight_decay);
  const Scalar lr = static_cast<Scalar>(opt.lr);
  velocity.flat() = m * velocity.flat() + grad.flat() + wd * w.flat();
  w.flat() -= lr * velocity.flat();
}

template <typename Scalar>
void sgd_step(NetworkWeights<Scalar>& w, NetworkWeights<Scalar>& grads, NetworkWeights<Scalar>& velocity,
              const SgdOptions& opt) {
  ParamList<Scalar> wp = collect_params(w);
  ParamList<Scalar> gp = collect_params(grads);
  ParamList<Scalar> vp = collect_params(velocity);
  if (wp.size() != gp.size() || wp.size() != vp.size()) throw ShapeError("sgd_step: structure mismatch");
  for (std::size_t i = 0; i < wp.size(); ++i) {
    if (wp[i].kind != ParamKind::kTrainable) continue;
    sgd_step(*wp[i].tensor, *gp[i].tensor, *vp[i].tensor, opt);
  }
}

double lr_at(int iter, const LrSchedule& s) {
  if (iter < 0 || iter > s.total) throw std::invalid_argument("lr_at: iteration out of range");
  if (iter < s.warmup) return s.base * static_cast<double>(iter) / static_cast<double>(s.warmup);
  const double t = iter - s.warmup;
  const double span = s.total - s.warmup;
  return s.base * std::pow(1.0 - t / span, s.power);
}

LrSchedule schedule_of(const ModelConfig& cfg) {
  return {cfg.lr, cfg.warmup_batches, cfg.total_iters, cfg.poly_power};
}

template <typename Scalar>
std::vector<LaneLabel> decode_lanes(const Prediction<Scalar>& pred, Index batch_index, const DecodeOptions& opt) {
  const Nchw s = nchw(pred.seg_logits, "seg logits");
  const Index lanes = s.c - 1;
  std::vector<LaneLabel> out;
  std::vector<double> prob(static_cast<std::size_t>(s.w));
  for (Index lane = 0; lane < lanes; ++lane) {
    const double exist = 1.0 / (1.0 + std::exp(-static_cast<double>(pred.existence_logits(batch_index, lane))));
    if (!(exist > opt.exist_threshold)) continue;
    LaneLabel label;
    label.lane_index = static_cast<int>(lane);
    for (Index y = s.h - 1; y >= 0; y -= opt.row_step) {
      for (Index x = 0; x < s.w; ++x) {
        double zmax = pred.seg_logits(batch_index, 0, y, x);
        for (Index c = 1; c < s.c; ++c) zmax = std::max<double>(zmax, pred.seg_logits(batch_index, c, y, x));
        double sum = 0.0;
        for (Index c = 0; c < s.c; ++c) sum += std::exp(pred.seg_logits(batch_index, c, y, x) - zmax);
        prob[static_cast<std::size_t>(x)] = std::exp(pred.seg_logits(batch_index, lane + 1, y, x) - zmax) / sum;
      }
      const auto best = std::max_element(prob.begin(), prob.end());
      if (!(*best > opt.prob_threshold)) continue;
      // Probability-weighted centre of the above-threshold run holding the argmax.
      Index lo = best - prob.begin();
      Index hi = lo;
      while (lo > 0 && prob[static_cast<std::size_t>(lo - 1)] > opt.prob_threshold) --lo;
      while (hi + 1 < s.w && prob[static_cast<std::size_t>(hi + 1)] > opt.prob_threshold) ++hi;
      double mass = 0.0;
      double moment = 0.0;
      for (Index x = lo; x <= hi; ++x) {
        mass += prob[static_cast<std::size_t>(x)];
        moment += prob[static_cast<std::size_t>(x)] * static_cast<double>(x);
      }
      label.points.push_back({moment / mass, static_cast<double>(y)});
    }
    if (label.points.size() < opt.min_points) continue;
    std::reverse(label.points.begin(), label.points.end());
    out.push_back(std::move(label));
  }
  return out;
}

template <typename Scalar>
void save_weights(const NetworkWeights<Scalar>& w, const std::filesystem::path& path) {
  NetworkWeights<Scalar>& mut = const_cast<NetworkWeights<Scalar>&>(w);
  TensorArchive<Scalar> archive;
  for (const auto& p : collect_params(mut)) archive.add(p.name, *p.tensor);
  archive.save(path);
}

template <typename Scalar>
NetworkWeights<Scalar> load_weights(const ModelConfig& cfg, const std::filesystem::path& path) {
  NetworkWeights<Scalar> w = build_network<Scalar>(cfg);
  const TensorArchive<Scalar> archive = TensorArchive<Scalar>::load(path);
  ParamList<Scalar> params = collect_params(w);
  if (archive.size() != params.size()) {
    throw FormatError("checkpoint has " + std::to_string(archive.size()) + " entries, config expects " +
                      std::to_string(params.size()));
  }
  for (auto& p : params) {
    const Tensor<Scalar>& stored = archive.at(p.name);
    if (stored.dims() != p.tensor->dims()) {
      throw FormatError("checkpoint entry " + p.name + " has dims " + dims_to_string(stored.dims()));
    }
    *p.tensor = stored;
  }
  return w;
}

#define RESA_INSTANTIATE_MODEL(S)                                                                     \
  template NetworkWeights<S> build_network(const ModelConfig&);                                       \
  template NetworkWeights<S> zeros_like(const NetworkWeights<S>&);                                    \
  template ParamList<S> collect_params(NetworkWeights<S>&);                                           \
  template Tensor<S> encoder_stub(const Tensor<S>&, const std::vector<ConvBn<S>>&, NormMode,          \
                                  EncoderCache<S>*);                                                  \
  template EncoderGrads<S> encoder_stub_backward(const EncoderCache<S>&, const std::vector<ConvBn<S>>&, \
                                                 const Tensor<S>&);                                   \
  template Prediction<S> forward(const ModelConfig&, const NetworkWeights<S>&, const Tensor<S>&,      \
                                 NormMode, ForwardTape<S>*);                                          \
  template NetworkGrads<S> backward(const ModelConfig&, const NetworkWeights<S>&,                     \
                                    const ForwardTape<S>&, const Prediction<S>&);                     \
  template void update_running_stats(NetworkWeights<S>&, const ForwardTape<S>&, double);             \
  template LossResult<S> lane_loss(const Prediction<S>&, const Tensor<std::int32_t>&,                 \
                                   const Tensor<S>&, double, double);                                 \
  template void sgd_step(Tensor<S>&, const Tensor<S>&, Tensor<S>&, const SgdOptions&);               \
  template void sgd_step(NetworkWeights<S>&, NetworkWeights<S>&, NetworkWeights<S>&,                  \
                         const SgdOptions&);                                                          \
  template std::vector<LaneLabel> decode_lanes(const Prediction<S>&, Index, const DecodeOptions&);    \
  template void save_weights(const NetworkWeights<S>&, const std::filesystem::path&);                 \
  template NetworkWeights<S> load_weights(const ModelConfig&, const std::filesystem::path&);

RESA_INSTANTIATE_MODEL(float)
RESA_INSTANTIATE_MODEL(double)

}  // namespace resa
