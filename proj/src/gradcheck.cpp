#include "resa/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "resa/aggregator.hpp"
#include "resa/decoder.hpp"
#include "resa/model.hpp"
#include "resa/ops.hpp"

namespace resa {

namespace {

using T = Tensor<double>;

constexpr double kOpTolerance = 1e-5;
constexpr double kModelTolerance = 1e-4;
constexpr double kLossTolerance = 1e-6;

T random_tensor(const Dims& d, Rng& rng) { return random_uniform<double>(d, rng); }

// Keeps values at least `gap` away from zero so ReLU inputs sit off the kink.
void push_off_zero(T& t, double gap) {
  for (double& v : t.values())
    if (std::abs(v) < gap) v = v < 0 ? -gap - std::abs(v) : gap + v;
}

ConvKernel<double> random_kernel(Index out, Index in, Index kh, Index kw, bool bias, Rng& rng) {
  ConvKernel<double> k(out, in, kh, kw, bias);
  fill_uniform(k.weight, rng, -1.0, 1.0);
  if (k.bias) fill_uniform(*k.bias, rng, -1.0, 1.0);
  return k;
}

void append_params(std::vector<GradTarget>& targets, ParamList<double> values, const ParamList<double>& grads) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].kind != ParamKind::kTrainable) continue;
    targets.push_back({values[i].tensor, grads[i].tensor});
  }
}

// Non-trivial batch-norm affine parameters so their gradients are exercised.
template <typename Params>
void randomize_affine(Params& p, Rng& rng) {
  ParamList<double> list;
  collect_params(list, "p", p);
  for (auto& ref : list) {
    if (ref.name.ends_with(".gamma")) fill_uniform(*ref.tensor, rng, 0.5, 1.5);
    if (ref.name.ends_with(".beta")) fill_uniform(*ref.tensor, rng, -0.5, 0.5);
  }
}

void tensor_scope(std::vector<GradcheckResult>& out, Rng& rng, const GradcheckOptions& opt) {
  {
    T x = random_tensor({2, 3, 6, 7}, rng);
    auto k = random_kernel(4, 3, 3, 3, true, rng);
    const ConvGeometry g = ConvGeometry::uniform(1, 1);
    const T r = random_tensor({2, 4, 6, 7}, rng);
    const auto grads = conv2d_backward(x, k, g, r);
    out.push_back(check_gradient("conv2d 3x3", [&] { return dot(conv2d(x, k, g), r); },
                                 {{&x, &grads.input}, {&k.weight, &grads.weight}, {&*k.bias, &*grads.bias}},
                                 kOpTolerance, rng, opt));
  }
  {
    T x = random_tensor({2, 3, 8, 8}, rng);
    auto k = random_kernel(2, 3, 3, 3, false, rng);
    const ConvGeometry g = ConvGeometry::uniform(2, 1);
    const T r = random_tensor({2, 2, 4, 4}, rng);
    const auto grads = conv2d_backward(x, k, g, r);
    out.push_back(check_gradient("conv2d 3x3 stride 2", [&] { return dot(conv2d(x, k, g), r); },
                                 {{&x, &grads.input}, {&k.weight, &grads.weight}}, kOpTolerance, rng, opt));
  }
  {
    T x = random_tensor({2, 3, 5, 6}, rng);
    auto k = random_kernel(3, 3, 1, 3, true, rng);
    const ConvGeometry g{1, 1, 0, 1};
    const T r = random_tensor({2, 3, 5, 6}, rng);
    const auto grads = conv2d_backward(x, k, g, r);
    out.push_back(check_gradient("conv2d 1x3", [&] { return dot(conv2d(x, k, g), r); },
                                 {{&x, &grads.input}, {&k.weight, &grads.weight}, {&*k.bias, &*grads.bias}},
                                 kOpTolerance, rng, opt));
  }
  for (SliceAxis axis : {SliceAxis::kRows, SliceAxis::kColumns}) {
    T x = random_tensor({2, 3, 5, 6}, rng);
    auto k = random_kernel(3, 3, 1, 3, false, rng);
    const T r = random_tensor({2, 3, 5, 6}, rng);
    const auto grads = slice_conv1d_backward(x, k, axis, r);
    out.push_back(check_gradient(axis == SliceAxis::kRows ? "slice_conv1d rows" : "slice_conv1d columns",
                                 [&] { return dot(slice_conv1d(x, k, axis), r); },
                                 {{&x, &grads.input}, {&k.weight, &grads.weight}}, kOpTolerance, rng, opt));
  }
  for (Index factor : {2, 8}) {
    T x = random_tensor({2, 3, 3, 4}, rng);
    const T r = random_tensor({2, 3, 3 * factor, 4 * factor}, rng);
    const T g = bilinear_upsample_backward(x.dims(), factor, r);
    out.push_back(check_gradient("bilinear_upsample x" + std::to_string(factor),
                                 [&] { return dot(bilinear_upsample(x, factor), r); }, {{&x, &g}}, kOpTolerance, rng,
                                 opt));
  }
  {
    T x = random_tensor({2, 3, 4, 5}, rng);
    auto k = random_kernel(2, 3, 2, 2, true, rng);
    const T r = random_tensor({2, 2, 8, 10}, rng);
    const auto grads = transpose_conv2x_backward(x, k, r);
    out.push_back(check_gradient("transpose_conv2x", [&] { return dot(transpose_conv2x(x, k), r); },
                                 {{&x, &grads.input}, {&k.weight, &grads.weight}, {&*k.bias, &*grads.bias}},
                                 kOpTolerance, rng, opt));
  }
  for (NormMode mode : {NormMode::kTrain, NormMode::kInfer}) {
    T x = random_tensor({2, 3, 4, 5}, rng);
    BatchNormParams<double> p(3);
    fill_uniform(p.gamma, rng, 0.5, 1.5);
    fill_uniform(p.beta, rng, -0.5, 0.5);
    fill_uniform(p.running_mean, rng, -0.5, 0.5);
    fill_uniform(p.running_var, rng, 0.5, 1.5);
    const T r = random_tensor(x.dims(), rng);
    BatchNormCache<double> cache;
    batch_norm(x, p, mode, kBatchNormEps, &cache);
    const auto grads = batch_norm_backward(cache, p, r);
    out.push_back(check_gradient(mode == NormMode::kTrain ? "batch_norm train" : "batch_norm infer",
                                 [&] { return dot(batch_norm(x, p, mode), r); },
                                 {{&x, &grads.input}, {&p.gamma, &grads.gamma}, {&p.beta, &grads.beta}},
                                 kOpTolerance, rng, opt));
  }
  {
    T x = random_tensor({2, 3, 4, 5}, rng);
    push_off_zero(x, 0.05);
    const T r = random_tensor(x.dims(), rng);
    const T g = relu_backward(x, r);
    out.push_back(check_gradient("relu", [&] { return dot(relu(x), r); }, {{&x, &g}}, kOpTolerance, rng, opt));
  }
  {
    T x = random_tensor({3, 5}, rng);
    T w = random_tensor({4, 5}, rng);
    T b = random_tensor({4}, rng);
    const T r = random_tensor({3, 4}, rng);
    const auto grads = fc_backward(x, w, r);
    out.push_back(check_gradient("fc", [&] { return dot(fc(x, w, b), r); },
                                 {{&x, &grads.input}, {&w, &grads.weight}, {&b, &grads.bias}}, kOpTolerance, rng, opt));
  }
  {
    T x = random_tensor({3, 5}, rng);
    const T r = random_tensor({3, 5}, rng);
    const T g = softmax_rows_backward(softmax_rows(x), r);
    out.push_back(check_gradient("softmax_rows", [&] { return dot(softmax_rows(x), r); }, {{&x, &g}}, kOpTolerance,
                                 rng, opt));
  }
  {
    T x = random_tensor({2, 3, 4, 5}, rng);
    const T r = random_tensor({2, 3}, rng);
    const T g = global_avg_pool_backward(x.dims(), r);
    out.push_back(check_gradient("global_avg_pool", [&] { return dot(global_avg_pool(x), r); }, {{&x, &g}},
                                 kOpTolerance, rng, opt));
  }
  {
    Prediction<double> pred{random_tensor({2, 5, 4, 6}, rng), random_tensor({2, 4}, rng)};
    Tensor<std::int32_t> seg({2, 4, 6});
    for (auto& v : seg.values()) v = std::uniform_int_distribution<std::int32_t>(0, 4)(rng);
    T exist({2, 4});
    for (auto& v : exist.values()) v = std::uniform_int_distribution<int>(0, 1)(rng);
    const auto loss = lane_loss(pred, seg, exist, 0.4, 1.0);
    out.push_back(check_gradient("lane_loss", [&] { return lane_loss(pred, seg, exist, 0.4, 1.0).total; },
                                 {{&pred.seg_logits, &loss.grad.seg_logits},
                                  {&pred.existence_logits, &loss.grad.existence_logits}},
                                 kLossTolerance, rng, opt));
  }
}

void resa_scope(std::vector<GradcheckResult>& out, Rng& rng, const GradcheckOptions& opt) {
  const Direction dirs[] = {Direction::kUpToDown, Direction::kDownToUp, Direction::kRightToLeft,
                            Direction::kLeftToRight};
  for (Fusion fusion : {Fusion::kAdd, Fusion::kMax}) {
    for (Direction dir : dirs) {
      T x = random_tensor({2, 3, 6, 7}, rng);
      auto k = random_kernel(3, 3, 1, 3, false, rng);
      const T r = random_tensor(x.dims(), rng);
      T pre;
      directional_pass(x, dir, 2, k, fusion, &pre);
      const auto grads = directional_pass_backward(x, pre, dir, 2, k, fusion, r);
      out.push_back(check_gradient(std::string("directional pass ") + direction_code(dir) +
                                       (fusion == Fusion::kAdd ? " add" : " max"),
                                   [&] { return dot(directional_pass(x, dir, 2, k, fusion), r); },
                                   {{&x, &grads.input}, {&k.weight, &grads.weight}}, kOpTolerance, rng, opt));
    }
  }
  struct Case {
    const char* name;
    Dims dims;
    int iterations;
    Fusion fusion;
    StridePolicy policy;
  };
  const Case cases[] = {
      {"resa_forward add", {2, 3, 6, 8}, 2, Fusion::kAdd, StridePolicy::kFloorDivision},
      {"resa_forward max", {2, 2, 5, 7}, 3, Fusion::kMax, StridePolicy::kFloorDivision},
      {"resa_forward add pow2 strides", {1, 2, 8, 8}, 3, Fusion::kAdd, StridePolicy::kPowersOfTwo},
  };
  for (const Case& c : cases) {
    ResaConfig rc;
    rc.iterations = c.iterations;
    rc.kernel_width = 3;
    rc.fusion = c.fusion;
    rc.stride_policy = c.policy;
    T x = random_tensor(c.dims, rng);
    ResaParams<double> p = make_resa_params<double>(c.dims[1], rc, rng);
    const T r = random_tensor(c.dims, rng);
    ResaTape<double> tape;
    resa_forward(x, p, &tape);
    const auto grads = resa_backward(p, tape, r);
    std::vector<GradTarget> targets{{&x, &grads.input}};
    for (std::size_t d = 0; d < p.kernels.size(); ++d)
      for (std::size_t k = 0; k < p.kernels[d].size(); ++k) targets.push_back({&p.kernels[d][k].weight, &grads.kernels[d][k]});
    out.push_back(check_gradient(c.name, [&] { return dot(resa_forward(x, p), r); }, targets, kOpTolerance, rng, opt));
  }
}

void busd_scope(std::vector<GradcheckResult>& out, Rng& rng, const GradcheckOptions& opt) {
  for (NormMode mode : {NormMode::kTrain, NormMode::kInfer}) {
    const std::string suffix = mode == NormMode::kTrain ? " train" : " infer";
    {
      T x = random_tensor({2, 4, 4, 5}, rng);
      auto p = make_nonbottleneck<double>(4, &rng);
      randomize_affine(p, rng);
      const T r = random_tensor(x.dims(), rng);
      NonBottleneckCache<double> cache;
      nonbottleneck1d(x, p, mode, &cache);
      auto grads = nonbottleneck1d_backward(cache, p, r);
      std::vector<GradTarget> targets{{&x, &grads.input}};
      ParamList<double> pl, gl;
      collect_params(pl, "nb", p);
      collect_params(gl, "nb", grads.params);
      append_params(targets, pl, gl);
      out.push_back(check_gradient("non-bottleneck-1d" + suffix, [&] { return dot(nonbottleneck1d(x, p, mode), r); },
                                   targets, kOpTolerance, rng, opt));
    }
    {
      T x = random_tensor({2, 4, 3, 4}, rng);
      auto p = make_busd_block<double>(4, &rng);
      randomize_affine(p, rng);
      const T r = random_tensor({2, 2, 6, 8}, rng);
      BusdBlockCache<double> cache;
      busd_block(x, p, mode, &cache);
      auto grads = busd_block_backward(cache, p, r);
      std::vector<GradTarget> targets{{&x, &grads.input}};
      ParamList<double> pl, gl;
      collect_params(pl, "busd", p);
      collect_params(gl, "busd", grads.params);
      append_params(targets, pl, gl);
      out.push_back(check_gradient("busd block" + suffix, [&] { return dot(busd_block(x, p, mode), r); }, targets,
                                   kOpTolerance, rng, opt));
    }
  }
}

ModelConfig micro_config() {
  ModelConfig cfg;
  cfg.height = 16;
  cfg.width = 16;
  cfg.encoder_channels = {4, 8, 16};
  cfg.resa.iterations = 2;
  cfg.resa.kernel_width = 3;
  return cfg;
}

void model_scope(std::vector<GradcheckResult>& out, Rng& rng, const GradcheckOptions& opt) {
  {
    ModelConfig cfg = micro_config();
    cfg.seed = rng();
    NetworkWeights<double> w = build_network<double>(cfg);
    T x = random_tensor({2, 3, 16, 16}, rng);
    const T r = random_tensor({2, 16, 2, 2}, rng);
    EncoderCache<double> cache;
    encoder_stub(x, w.encoder, NormMode::kTrain, &cache);
    auto grads = encoder_stub_backward(cache, w.encoder, r);
    std::vector<GradTarget> targets{{&x, &grads.input}};
    ParamList<double> pl, gl;
    for (std::size_t i = 0; i < w.encoder.size(); ++i) {
      collect_params(pl, "e", w.encoder[i]);
      collect_params(gl, "e", grads.stages[i]);
    }
    append_params(targets, pl, gl);
    out.push_back(check_gradient("encoder stub",
                                 [&] { return dot(encoder_stub(x, w.encoder, NormMode::kTrain), r); }, targets,
                                 kOpTolerance, rng, opt));
  }
  struct Variant {
    const char* name;
    DecoderKind decoder;
    ExistenceTap tap;
    Fusion fusion;
    bool use_resa;
  };
  const Variant variants[] = {
      {"model end-to-end", DecoderKind::kBusd, ExistenceTap::kAggregator, Fusion::kAdd, true},
      {"model end-to-end max fusion, decoder tap", DecoderKind::kBusd, ExistenceTap::kDecoder, Fusion::kMax, true},
      {"model end-to-end bilinear decoder", DecoderKind::kBilinear, ExistenceTap::kAggregator, Fusion::kAdd, true},
  };
  for (const Variant& v : variants) {
    ModelConfig cfg = micro_config();
    cfg.decoder = v.decoder;
    cfg.exist_tap = v.tap;
    cfg.resa.fusion = v.fusion;
    cfg.use_resa = v.use_resa;
    cfg.seed = rng();
    NetworkWeights<double> w = build_network<double>(cfg);
    T x = random_tensor({2, 3, 16, 16}, rng);
    Tensor<std::int32_t> seg({2, 16, 16});
    for (auto& s : seg.values()) s = std::uniform_int_distribution<std::int32_t>(0, 4)(rng);
    T exist({2, 4});
    for (auto& e : exist.values()) e = std::uniform_int_distribution<int>(0, 1)(rng);
    auto loss_of = [&] {
      return lane_loss(forward(cfg, w, x, NormMode::kTrain), seg, exist, cfg.bg_weight, cfg.exist_weight).total;
    };
    ForwardTape<double> tape;
    const Prediction<double> pred = forward(cfg, w, x, NormMode::kTrain, &tape);
    const auto loss = lane_loss(pred, seg, exist, cfg.bg_weight, cfg.exist_weight);
    NetworkGrads<double> grads = backward(cfg, w, tape, loss.grad);
    std::vector<GradTarget> targets{{&x, &grads.input}};
    append_params(targets, collect_params(w), collect_params(grads.weights));
    out.push_back(check_gradient(v.name, loss_of, targets, kModelTolerance, rng, opt));
  }
}

}  // namespace

GradcheckResult check_gradient(const std::string& name, const std::function<double()>& f,
                               const std::vector<GradTarget>& targets, double tolerance, Rng& rng,
                               const GradcheckOptions& opt) {
  GradcheckResult res;
  res.name = name;
  res.tolerance = tolerance;
  double diff2 = 0.0;
  double num2 = 0.0;
  double ana2 = 0.0;
  const double h = opt.step;
  const double f0 = f();
  for (const GradTarget& t : targets) {
    Tensor<double>::require_same_dims(*t.value, *t.analytic, "check_gradient");
    std::vector<Index> coords(static_cast<std::size_t>(t.value->size()));
    std::iota(coords.begin(), coords.end(), Index{0});
    if (static_cast<int>(coords.size()) > opt.max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(opt.max_coords));
    }
    for (Index i : coords) {
      double& v = (*t.value)[i];
      const double saved = v;
      auto eval_at = [&](double delta) {
        v = saved + delta;
        const double y = f();
        v = saved;
        return y;
      };
      const double fp = eval_at(h);
      const double fm = eval_at(-h);
      const double numeric = (fp - fm) / (2.0 * h);
      const double hp = eval_at(h / 2);
      const double hm = eval_at(-h / 2);
      const double half = (hp - hm) / h;
      const double bound = 1e-5 * std::max(1.0, std::abs(numeric));
      // a kink sitting exactly on the point fools the half-step test. The
      // slope jump (fp - 2 f0 + fm) / h keeps its size as h halves, where
      // curvature alone would halve it.
      const double jump = (fp - 2.0 * f0 + fm) / h - 4.0 * (hp - 2.0 * f0 + hm) / h;
      if (std::abs(numeric - half) > bound || std::abs(jump) > bound) {
        ++res.skipped;
        continue;
      }
      const double analytic = (*t.analytic)[i];
      diff2 += (numeric - analytic) * (numeric - analytic);
      num2 += numeric * numeric;
      ana2 += analytic * analytic;
      ++res.checked;
    }
  }
  const double scale = std::sqrt(std::max(num2, ana2));
  res.rel_error = scale > 0.0 ? std::sqrt(diff2) / scale : std::sqrt(diff2);
  return res;
}

std::vector<GradcheckResult> run_gradcheck_scope(const std::string& scope, std::uint64_t seed,
                                                 const GradcheckOptions& opt) {
  Rng rng(seed);
  std::vector<GradcheckResult> out;
  const bool all = scope == "all";
  bool known = all;
  if (all || scope == "tensor") {
    tensor_scope(out, rng, opt);
    known = true;
  }
  if (all || scope == "resa") {
    resa_scope(out, rng, opt);
    known = true;
  }
  if (all || scope == "busd") {
    busd_scope(out, rng, opt);
    known = true;
  }
  if (all || scope == "model") {
    model_scope(out, rng, opt);
    known = true;
  }
  if (!known) throw std::invalid_argument("unknown gradcheck scope '" + scope + "'");
  return out;
}

}  // namespace resa
