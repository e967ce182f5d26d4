#include "doctest.h"
#include "resa/decoder.hpp"
#include "resa/gradcheck.hpp"

using namespace resa;

namespace {

template <typename P>
void zero_all(P& p) {
  ParamList<double> list;
  collect_params(list, "p", p);
  for (auto& r : list) {
    r.tensor->set_zero();
    if (r.name.ends_with("running_var")) r.tensor->flat().setOnes();
  }
}

}  // namespace

TEST_SUITE("busd") {

TEST_CASE("block halves channels and doubles the plane") {
  Rng rng(1);
  const auto p = make_busd_block<float>(128, &rng);
  const Tensor<float> x({1, 128, 36, 100});
  CHECK(busd_block(x, p, NormMode::kInfer).dims() == Dims{1, 64, 72, 200});
  for (Index c : {2, 4, 6}) {
    const auto q = make_busd_block<double>(c, &rng);
    const auto y = busd_block(random_uniform<double>({2, c, 3, 5}, rng), q, NormMode::kTrain);
    CHECK(y.dims() == Dims{2, c / 2, 6, 10});
  }
}

TEST_CASE("three stacked blocks restore full resolution") {
  Tensor<float> x({1, 128, 36, 100});
  for (Index c : {128, 64, 32}) x = busd_block(x, make_busd_block<float>(c, nullptr), NormMode::kInfer);
  CHECK(x.dims() == Dims{1, 16, 288, 800});
}

TEST_CASE("zero parameters give a zero output") {
  Rng rng(3);
  auto p = make_busd_block<double>(4, &rng);
  zero_all(p);
  const auto y = busd_block(random_uniform<double>({1, 4, 5, 6}, rng), p, NormMode::kInfer);
  CHECK(y.flat().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("non-bottleneck with zero kernels is a relu") {
  Rng rng(4);
  auto p = make_nonbottleneck<double>(3, &rng);
  for (auto& l : p.layers) l.conv.weight.set_zero();
  const auto x = random_uniform<double>({2, 3, 4, 5}, rng);
  CHECK(nonbottleneck1d(x, p, NormMode::kInfer) == relu(x));
  const auto q = make_nonbottleneck<double>(5, &rng);
  for (const Dims& d : {Dims{1, 5, 1, 1}, Dims{2, 5, 7, 3}, Dims{1, 5, 2, 9}})
    CHECK(nonbottleneck1d(random_uniform<double>(d, rng), q, NormMode::kTrain).dims() == d);
}

TEST_CASE("odd channel counts are rejected") {
  Rng rng(5);
  CHECK_THROWS_AS(make_busd_block<double>(3, &rng), ShapeError);
  const auto p = make_busd_block<double>(4, &rng);
  CHECK_THROWS_AS(busd_block(Tensor<double>({1, 3, 2, 2}), p, NormMode::kInfer), ShapeError);
  CHECK_THROWS_AS(busd_block(Tensor<double>({1, 6, 2, 2}), p, NormMode::kInfer), ShapeError);
}

TEST_CASE("every parameter receives a gradient") {
  Rng rng(6);
  auto p = make_busd_block<double>(4, &rng);
  BusdBlockCache<double> cache;
  const auto x = random_uniform<double>({2, 4, 3, 4}, rng);
  const auto y = busd_block(x, p, NormMode::kTrain, &cache);
  auto g = busd_block_backward(cache, p, random_uniform<double>(y.dims(), rng));
  CHECK(g.input.dims() == x.dims());
  ParamList<double> grads;
  collect_params(grads, "g", g.params);
  for (const auto& r : grads) {
    if (r.kind != ParamKind::kTrainable) continue;
    INFO(r.name);
    CHECK(r.tensor->flat().cwiseAbs().maxCoeff() > 0.0);
  }
}

TEST_CASE("train-mode forward folds into the running statistics") {
  Rng rng(7);
  auto p = make_busd_block<double>(4, &rng);
  BusdBlockCache<double> cache;
  busd_block(random_uniform<double>({2, 4, 3, 3}, rng, 1.0, 3.0), p, NormMode::kTrain, &cache);
  const auto before = p.coarse.bn.running_mean;
  update_running_stats(p, cache);
  CHECK(max_abs_diff(before, p.coarse.bn.running_mean) > 0.0);
}

TEST_CASE("decoder passes finite-difference checks") {
  for (std::uint64_t seed : {1, 2, 3}) {
    for (const auto& r : run_gradcheck_scope("busd", seed)) {
      INFO(r.name << " seed " << seed << " rel " << r.rel_error << " skipped " << r.skipped);
      CHECK(r.passed());
      CHECK(r.tolerance <= 1e-5);
    }
  }
}

}  // TEST_SUITE
