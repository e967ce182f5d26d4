#include "resa/decoder.hpp"

namespace resa {

namespace {

ConvGeometry nb_geometry(std::size_t layer) {
  // Even layers are 3x1 (pad rows), odd layers are 1x3 (pad columns).
  return layer % 2 == 0 ? ConvGeometry{1, 1, 1, 0} : ConvGeometry{1, 1, 0, 1};
}

template <typename Scalar>
ConvBn<Scalar> make_conv_bn(Index out, Index in, Index kh, Index kw, Rng* rng) {
  ConvBn<Scalar> cb{ConvKernel<Scalar>(out, in, kh, kw), BatchNormParams<Scalar>(out)};
  if (rng) init_he_uniform(cb.conv, *rng);
  return cb;
}

template <typename Scalar>
NonBottleneck1DParams<Scalar> zero_like(const NonBottleneck1DParams<Scalar>& p) {
  NonBottleneck1DParams<Scalar> z = p;
  for (auto& l : z.layers) {
    l.conv.weight.set_zero();
    l.bn.gamma.set_zero();
    l.bn.beta.set_zero();
    l.bn.running_mean.set_zero();
    l.bn.running_var.set_zero();
  }
  return z;
}

}  // namespace

template <typename Scalar>
NonBottleneck1DParams<Scalar> make_nonbottleneck(Index channels, Rng* rng) {
  NonBottleneck1DParams<Scalar> p;
  for (std::size_t l = 0; l < 4; ++l) {
    p.layers[l] = l % 2 == 0 ? make_conv_bn<Scalar>(channels, channels, 3, 1, rng)
                             : make_conv_bn<Scalar>(channels, channels, 1, 3, rng);
  }
  return p;
}

template <typename Scalar>
BusdBlockParams<Scalar> make_busd_block(Index in_channels, Rng* rng) {
  if (in_channels % 2 != 0) throw ShapeError("BUSD block needs an even channel count");
  const Index out = in_channels / 2;
  BusdBlockParams<Scalar> p;
  p.coarse = make_conv_bn<Scalar>(out, in_channels, 1, 1, rng);
  p.fine_up = ConvKernel<Scalar>(out, in_channels, 2, 2, true);
  if (rng) init_he_uniform(p.fine_up, *rng);
  p.fine_blocks = {make_nonbottleneck<Scalar>(out, rng), make_nonbottleneck<Scalar>(out, rng)};
  return p;
}

template <typename Scalar>
Tensor<Scalar> nonbottleneck1d(const Tensor<Scalar>& x, const NonBottleneck1DParams<Scalar>& p,
                               NormMode mode, NonBottleneckCache<Scalar>* cache) {
  Tensor<Scalar> h = x;
  for (std::size_t l = 0; l < 4; ++l) {
    BatchNormCache<Scalar> bn_cache;
    Tensor<Scalar> a = conv2d(h, p.layers[l].conv, nb_geometry(l));
    Tensor<Scalar> b = batch_norm(a, p.layers[l].bn, mode, kBatchNormEps, cache ? &bn_cache : nullptr);
    Tensor<Scalar> next = l < 3 ? relu(b) : b;
    if (cache) {
      cache->conv_inputs[l] = std::move(h);
      cache->normalized[l] = std::move(b);
      cache->bn[l] = std::move(bn_cache);
    }
    h = std::move(next);
  }
  Tensor<Scalar> sum = x + h;
  Tensor<Scalar> out = relu(sum);
  if (cache) {
    cache->input = x;
    cache->sum = std::move(sum);
  }
  return out;
}

template <typename Scalar>
NonBottleneckGrads<Scalar> nonbottleneck1d_backward(const NonBottleneckCache<Scalar>& cache,
                                                    const NonBottleneck1DParams<Scalar>& p,
                                                    const Tensor<Scalar>& grad_out) {
  const Tensor<Scalar> grad_sum = relu_backward(cache.sum, grad_out);
  NonBottleneckGrads<Scalar> g{grad_sum, zero_like(p)};
  Tensor<Scalar> grad_h = grad_sum;
  for (std::size_t l = 4; l-- > 0;) {
    const Tensor<Scalar> grad_b = l < 3 ? relu_backward(cache.normalized[l], grad_h) : grad_h;
    BatchNormGrads<Scalar> bg = batch_norm_backward(cache.bn[l], p.layers[l].bn, grad_b);
    ConvGrads<Scalar> cg = conv2d_backward(cache.conv_inputs[l], p.layers[l].conv, nb_geometry(l), bg.input);
    g.params.layers[l].conv.weight = std::move(cg.weight);
    g.params.layers[l].bn.gamma = std::move(bg.gamma);
    g.params.layers[l].bn.beta = std::move(bg.beta);
    grad_h = std::move(cg.input);
  }
  g.input += grad_h;
  return g;
}

template <typename Scalar>
Tensor<Scalar> busd_block(const Tensor<Scalar>& x, const BusdBlockParams<Scalar>& p, NormMode mode,
                          BusdBlockCache<Scalar>* cache) {
  const Nchw s = nchw(x, "busd_block input");
  if (s.c % 2 != 0) throw ShapeError("busd_block: odd channel count " + std::to_string(s.c));
  if (p.in_channels() != s.c) throw ShapeError("busd_block: parameters expect a different channel count");

  BatchNormCache<Scalar> bn_cache;
  Tensor<Scalar> coarse_conv = conv2d(x, p.coarse.conv, 1, 0);
  Tensor<Scalar> coarse_bn = batch_norm(coarse_conv, p.coarse.bn, mode, kBatchNormEps, cache ? &bn_cache : nullptr);
  Tensor<Scalar> coarse_up = bilinear_upsample2x(coarse_bn);
  Tensor<Scalar> out = relu(coarse_up);

  Tensor<Scalar> fine_up = transpose_conv2x(x, p.fine_up);
  Tensor<Scalar> fine_act = relu(fine_up);
  NonBottleneckCache<Scalar> nb0;
  NonBottleneckCache<Scalar> nb1;
  Tensor<Scalar> fine_mid = nonbottleneck1d(fine_act, p.fine_blocks[0], mode, cache ? &nb0 : nullptr);
  out += nonbottleneck1d(fine_mid, p.fine_blocks[1], mode, cache ? &nb1 : nullptr);

  if (cache) {
    cache->input = x;
    cache->coarse_conv = std::move(coarse_conv);
    cache->coarse_bn = std::move(bn_cache);
    cache->coarse_upsampled = std::move(coarse_up);
    cache->fine_up = std::move(fine_up);
    cache->fine_activated = std::move(fine_act);
    cache->fine_mid = std::move(fine_mid);
    cache->fine_blocks = {std::move(nb0), std::move(nb1)};
  }
  return out;
}

template <typename Scalar>
BusdBlockGrads<Scalar> busd_block_backward(const BusdBlockCache<Scalar>& cache,
                                           const BusdBlockParams<Scalar>& p,
                                           const Tensor<Scalar>& grad_out) {
  BusdBlockGrads<Scalar> g{Tensor<Scalar>::zeros_like(cache.input), p};

  // Coarse branch.
  const Tensor<Scalar> g_up = relu_backward(cache.coarse_upsampled, grad_out);
  const Tensor<Scalar> g_bn = bilinear_upsample_backward(cache.coarse_conv.dims(), 2, g_up);
  BatchNormGrads<Scalar> bg = batch_norm_backward(cache.coarse_bn, p.coarse.bn, g_bn);
  ConvGrads<Scalar> cg = conv2d_backward(cache.input, p.coarse.conv, ConvGeometry{}, bg.input);
  g.params.coarse.conv.weight = std::move(cg.weight);
  g.params.coarse.bn.gamma = std::move(bg.gamma);
  g.params.coarse.bn.beta = std::move(bg.beta);
  g.params.coarse.bn.running_mean.set_zero();
  g.params.coarse.bn.running_var.set_zero();
  g.input = std::move(cg.input);

  // Fine branch.
  NonBottleneckGrads<Scalar> nb1 = nonbottleneck1d_backward(cache.fine_blocks[1], p.fine_blocks[1], grad_out);
  NonBottleneckGrads<Scalar> nb0 = nonbottleneck1d_backward(cache.fine_blocks[0], p.fine_blocks[0], nb1.input);
  const Tensor<Scalar> g_fine_up = relu_backward(cache.fine_up, nb0.input);
  ConvGrads<Scalar> tg = transpose_conv2x_backward(cache.input, p.fine_up, g_fine_up);
  g.params.fine_up.weight = std::move(tg.weight);
  g.params.fine_up.bias = std::move(tg.bias);
  g.params.fine_blocks = {std::move(nb0.params), std::move(nb1.params)};
  g.input += tg.input;
  return g;
}

template <typename Scalar>
void update_running_stats(BusdBlockParams<Scalar>& p, const BusdBlockCache<Scalar>& cache, double momentum) {
  update_running_stats(p.coarse.bn, cache.coarse_bn, momentum);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t l = 0; l < 4; ++l)
      update_running_stats(p.fine_blocks[b].layers[l].bn, cache.fine_blocks[b].bn[l], momentum);
}

#define RESA_INSTANTIATE_DECODER(S)                                                                  \
  template NonBottleneck1DParams<S> make_nonbottleneck(Index, Rng*);                                 \
  template BusdBlockParams<S> make_busd_block(Index, Rng*);                                          \
  template Tensor<S> nonbottleneck1d(const Tensor<S>&, const NonBottleneck1DParams<S>&, NormMode,    \
                                     NonBottleneckCache<S>*);                                        \
  template NonBottleneckGrads<S> nonbottleneck1d_backward(                                           \
      const NonBottleneckCache<S>&, const NonBottleneck1DParams<S>&, const Tensor<S>&);              \
  template Tensor<S> busd_block(const Tensor<S>&, const BusdBlockParams<S>&, NormMode,               \
                                BusdBlockCache<S>*);                                                 \
  template BusdBlockGrads<S> busd_block_backward(const BusdBlockCache<S>&, const BusdBlockParams<S>&, \
                                                 const Tensor<S>&);                                  \
  template void update_running_stats(BusdBlockParams<S>&, const BusdBlockCache<S>&, double);

RESA_INSTANTIATE_DECODER(float)
RESA_INSTANTIATE_DECODER(double)

}  // namespace resa
