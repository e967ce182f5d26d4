#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "resa/ops.hpp"
#include "resa/tensor.hpp"

namespace resa {

enum class ParamKind {
  kTrainable,
  kBuffer,  // running statistics: serialized, never updated by the optimizer
};

template <typename Scalar>
struct ParamRef {
  std::string name;
  Tensor<Scalar>* tensor;
  ParamKind kind;
};

template <typename Scalar>
using ParamList = std::vector<ParamRef<Scalar>>;

template <typename Scalar>
void collect_params(ParamList<Scalar>& out, const std::string& prefix, ConvKernel<Scalar>& k) {
  out.push_back({prefix + ".weight", &k.weight, ParamKind::kTrainable});
  if (k.bias) out.push_back({prefix + ".bias", &*k.bias, ParamKind::kTrainable});
}

template <typename Scalar>
void collect_params(ParamList<Scalar>& out, const std::string& prefix, BatchNormParams<Scalar>& bn) {
  out.push_back({prefix + ".gamma", &bn.gamma, ParamKind::kTrainable});
  out.push_back({prefix + ".beta", &bn.beta, ParamKind::kTrainable});
  out.push_back({prefix + ".running_mean", &bn.running_mean, ParamKind::kBuffer});
  out.push_back({prefix + ".running_var", &bn.running_var, ParamKind::kBuffer});
}

/// Convolution followed by batch norm; the conv carries no bias.
template <typename Scalar>
struct ConvBn {
  ConvKernel<Scalar> conv;
  BatchNormParams<Scalar> bn;
};

template <typename Scalar>
void collect_params(ParamList<Scalar>& out, const std::string& prefix, ConvBn<Scalar>& cb) {
  collect_params(out, prefix + ".conv", cb.conv);
  collect_params(out, prefix + ".bn", cb.bn);
}

/// He-uniform initialisation for a ReLU-followed convolution.
template <typename Scalar, typename Rng>
void init_he_uniform(ConvKernel<Scalar>& k, Rng& rng) {
  const double fan_in = static_cast<double>(k.in_channels() * k.kh() * k.kw());
  const double bound = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Scalar& v : k.weight.values()) v = static_cast<Scalar>(dist(rng));
  if (k.bias) k.bias->set_zero();
}

}  // namespace resa
