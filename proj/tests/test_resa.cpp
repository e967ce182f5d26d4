#include <algorithm>

#include "doctest.h"
#include "oracles.hpp"
#include "resa/aggregator.hpp"
#include "resa/commands.hpp"
#include "resa/gradcheck.hpp"

using namespace resa;

namespace {

ConvKernel<double> unit_kernel(Index c = 1, Index w = 1) {
  ConvKernel<double> k(c, c, 1, w);
  for (Index i = 0; i < c; ++i) k.weight(i, i, 0, w / 2) = 1.0;
  return k;
}

Tensor<double> row_of(std::initializer_list<double> v) {
  return Tensor<double>({1, 1, 1, static_cast<Index>(v.size())}, v);
}

}  // namespace

TEST_SUITE("resa") {

TEST_CASE("stride schedules") {
  CHECK(compute_stride_schedule(8, 3).strides == std::vector<Index>{1, 2, 4});
  CHECK(compute_stride_schedule(16, 4).strides == std::vector<Index>{1, 2, 4, 8});
  CHECK(compute_stride_schedule(2, 1).strides == std::vector<Index>{1});
  CHECK(compute_stride_schedule(100, 4).strides == std::vector<Index>{6, 12, 25, 50});
  CHECK(compute_stride_schedule(5, 0).strides.empty());
  CHECK(compute_stride_schedule(3, 4).strides == std::vector<Index>{1, 1, 1, 1});
  CHECK(compute_stride_schedule(10, 3, StridePolicy::kPowersOfTwo).strides == std::vector<Index>{1, 2, 4});
  for (Index L = 1; L <= 64; ++L)
    for (int K = 0; K <= 7; ++K) {
      const auto s = compute_stride_schedule(L, K).strides;
      REQUIRE(s.size() == static_cast<std::size_t>(K));
      CHECK(s == oracle::strides(L, K, StridePolicy::kFloorDivision));
      CHECK(std::all_of(s.begin(), s.end(), [](Index v) { return v >= 1; }));
    }
  for (int K = 1; K <= 6; ++K) {
    std::vector<Index> want;
    for (int k = 0; k < K; ++k) want.push_back(Index{1} << k);
    CHECK(compute_stride_schedule(Index{1} << K, K).strides == want);
  }
}

TEST_CASE("direction codes") {
  CHECK(directions_to_string(parse_directions("DULR")) == "DULR");
  CHECK(gather_sign(Direction::kDownToUp) == 1);
  CHECK(gather_sign(Direction::kRightToLeft) == 1);
  CHECK(gather_sign(Direction::kUpToDown) == -1);
  CHECK(gather_sign(Direction::kLeftToRight) == -1);
  CHECK_THROWS(parse_directions("DX"));
}

TEST_CASE("circular shift gather") {
  const auto x = row_of({1, 2, 3, 4});
  CHECK(circular_shift_gather(x, Axis::kHorizontal, 1, +1) == row_of({2, 3, 4, 1}));
  CHECK(circular_shift_gather(x, Axis::kHorizontal, 0, +1) == x);
  CHECK(circular_shift_gather(x, Axis::kHorizontal, 2, -1) == row_of({3, 4, 1, 2}));
  const Tensor<double> col({1, 1, 4, 1}, {1, 2, 3, 4});
  CHECK(circular_shift_gather(col, Axis::kVertical, 1, +1) == Tensor<double>({1, 1, 4, 1}, {2, 3, 4, 1}));
}

TEST_CASE("directional pass hand cases") {
  const auto x = row_of({1, 0, 0, 0});
  CHECK(directional_pass(x, Direction::kRightToLeft, 1, unit_kernel(), Fusion::kAdd) == row_of({1, 0, 0, 1}));
  CHECK(directional_pass(x, Direction::kLeftToRight, 1, unit_kernel(), Fusion::kAdd) == row_of({1, 1, 0, 0}));
  const ConvKernel<double> zero(1, 1, 1, 3);
  CHECK(directional_pass(x, Direction::kRightToLeft, 1, zero, Fusion::kAdd) == x);
  const auto neg = row_of({-1, -2, -3, -4});
  CHECK(directional_pass(neg, Direction::kLeftToRight, 2, unit_kernel(), Fusion::kAdd) == neg);
  CHECK(directional_pass(row_of({-1, 3, 0.5, 2}), Direction::kRightToLeft, 1, unit_kernel(), Fusion::kMax) ==
        row_of({3, 3, 2, 2}));
}

TEST_CASE("slices of a pass are independent") {
  Rng rng(1);
  const auto x = random_uniform<double>({2, 3, 7, 9}, rng);
  const auto k = make_resa_params<double>(3, ResaConfig{}, rng).kernels[2][1];
  for (Direction d : parse_directions("DULR")) {
    const Tensor<double> whole = directional_pass(x, d, 2, k, Fusion::kAdd);
    const Index L = axis_of(d) == Axis::kVertical ? 7 : 9;
    Tensor<double> pieces(x.dims());
    // reverse order, uneven ranges
    for (Index hi = L; hi > 0;) {
      const Index lo = std::max<Index>(0, hi - 3);
      directional_pass_range(x, d, 2, k, Fusion::kAdd, lo, hi, pieces);
      hi = lo;
    }
    CHECK(pieces == whole);
  }
}

TEST_CASE("resa_forward matches the unrolled loop") {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    ResaConfig cfg;
    cfg.iterations = 1 + t % 4;
    cfg.kernel_width = 1 + 2 * (t % 3);
    cfg.fusion = t % 2 ? Fusion::kMax : Fusion::kAdd;
    cfg.stride_policy = t % 3 ? StridePolicy::kFloorDivision : StridePolicy::kPowersOfTwo;
    if (t % 5 == 4) cfg.directions = parse_directions("UR");
    const Index c = 1 + t % 4;
    const auto p = make_resa_params<double>(c, cfg, rng);
    const auto x = random_uniform<double>({2, c, 3 + t % 6, 4 + t % 5}, rng);
    const auto y = resa_forward(x, p);
    CHECK(y.dims() == x.dims());
    CHECK(max_abs_diff(y, oracle::resa(x, p)) < 1e-6);
  }
  const auto x = random_uniform<double>({2, 3, 8, 8}, rng);
  const auto p = make_resa_params<double>(3, ResaConfig{}, rng);
  CHECK(max_abs_diff(resa_forward(x, p), oracle::resa(x, p)) < 1e-6);
}

TEST_CASE("zero kernels are the identity, forward and backward") {
  Rng rng(3);
  const auto p = zero_resa_params<double>(3, ResaConfig{});
  const auto x = random_uniform<double>({1, 3, 6, 10}, rng);
  ResaTape<double> tape;
  CHECK(resa_forward(x, p, &tape) == x);
  const auto g = random_uniform<double>(x.dims(), rng);
  const auto grads = resa_backward(p, tape, g);
  CHECK(grads.input == g);
  for (const auto& per_dir : grads.kernels)
    for (const auto& kg : per_dir) CHECK(std::isfinite(kg.flat().sum()));
  const auto zero = resa_backward(p, tape, Tensor<double>(x.dims()));
  CHECK(zero.input.flat().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("impulse reaches the whole axis in ceil(log2 L) doubling steps") {
  for (Index W = 2; W <= 40; ++W) {
    int K = 0;
    while ((Index{1} << K) < W) ++K;
    ResaConfig cfg;
    cfg.directions = parse_directions("R");
    cfg.iterations = K;
    cfg.kernel_width = 1;
    cfg.stride_policy = StridePolicy::kPowersOfTwo;
    ResaParams<double> p = zero_resa_params<double>(1, cfg);
    for (auto& k : p.kernels[0]) k.weight[0] = 1.0;
    Tensor<double> x({1, 1, 3, W});
    x(0, 0, 1, 0) = 1.0;
    const auto y = resa_forward(x, p);
    for (Index j = 0; j < W; ++j) CHECK(y(0, 0, 1, j) > 0.0);
    CHECK(y(0, 0, 0, 0) == 0.0);
  }
}

TEST_CASE("impulse support equals brute-force reachability") {
  for (Index L = 2; L <= 64; ++L)
    for (int K = 1; K <= 6; ++K)
      for (StridePolicy policy : {StridePolicy::kFloorDivision, StridePolicy::kPowersOfTwo})
        for (Axis axis : {Axis::kHorizontal, Axis::kVertical}) {
          const auto rows = impulse_support(L, K, policy, axis);
          const auto want = oracle::reachable(L, oracle::strides(L, K, policy));
          REQUIRE(rows.size() == want.size());
          for (std::size_t k = 0; k < rows.size(); ++k)
            for (Index i = 0; i < L; ++i) CHECK(rows[k][static_cast<std::size_t>(i)] == (want[k].count(i) == 1));
        }
}

TEST_CASE("sequential propagation") {
  const auto x = row_of({1, 0, 0, 0});
  PassCounters counters;
  CHECK(scnn_reference_pass(x, Direction::kLeftToRight, unit_kernel(), &counters) == row_of({1, 1, 1, 1}));
  CHECK(counters.horizontal == 4);
  CHECK(scnn_reference_pass(x, Direction::kLeftToRight, ConvKernel<double>(1, 1, 1, 3)) == x);
  CHECK(scnn_reference_pass(x, Direction::kRightToLeft, unit_kernel()) == x);
}

TEST_CASE("pass counters scale with K and L") {
  Rng rng(4);
  for (Index W : {Index{16}, Index{50}, Index{100}}) {
    ResaConfig cfg;
    cfg.iterations = 4;
    const auto p = make_resa_params<float>(2, cfg, rng);
    const auto x = random_uniform<float>({1, 2, 6, W}, rng);
    PassCounters rc;
    resa_forward<float>(x, p, nullptr, {1, &rc});
    CHECK(rc.horizontal == 2 * 4);
    CHECK(rc.vertical == 2 * 4);
    PassCounters sc;
    std::vector<ConvKernel<float>> ks(4, p.kernels[0][0]);
    scnn_forward(x, parse_directions("DULR"), ks, &sc);
    CHECK(sc.horizontal == 2 * W);
    CHECK(sc.vertical == 2 * 6);
  }
}

TEST_CASE("threaded forward is bit-identical") {
  Rng rng(5);
  const auto p = make_resa_params<double>(3, ResaConfig{}, rng);
  const auto x = random_uniform<double>({2, 3, 9, 17}, rng);
  CHECK(resa_forward<double>(x, p, nullptr, {3, nullptr}) == resa_forward(x, p));
}

TEST_CASE("aggregator passes finite-difference checks") {
  for (std::uint64_t seed : {1, 2, 3}) {
    for (const auto& r : run_gradcheck_scope("resa", seed)) {
      INFO(r.name << " seed " << seed << " rel " << r.rel_error);
      CHECK(r.passed());
      CHECK(r.tolerance <= 1e-5);
    }
  }
}

}  // TEST_SUITE
