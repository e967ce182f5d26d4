#pragma once

// Slow, loop-by-loop reference implementations used as test oracles. None of
// these share code with the library kernels they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <set>
#include <vector>

#include "resa/aggregator.hpp"
#include "resa/eval.hpp"
#include "resa/lane.hpp"
#include "resa/tensor.hpp"

namespace oracle {

using resa::Index;
using resa::Tensor;

inline Index wrap(Index i, Index n) { return ((i % n) + n) % n; }

/// Direct 6-loop convolution with zero padding.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const resa::ConvKernel<S>& k, Index sh, Index sw, Index ph, Index pw) {
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index O = k.out_channels(), KH = k.kh(), KW = k.kw();
  const Index OH = (H + 2 * ph - KH) / sh + 1, OW = (W + 2 * pw - KW) / sw + 1;
  Tensor<S> y({N, O, OH, OW});
  for (Index n = 0; n < N; ++n)
    for (Index o = 0; o < O; ++o)
      for (Index i = 0; i < OH; ++i)
        for (Index j = 0; j < OW; ++j) {
          double acc = k.bias ? static_cast<double>((*k.bias)[o]) : 0.0;
          for (Index c = 0; c < C; ++c)
            for (Index a = 0; a < KH; ++a)
              for (Index b = 0; b < KW; ++b) {
                const Index r = i * sh + a - ph, q = j * sw + b - pw;
                if (r < 0 || r >= H || q < 0 || q >= W) continue;
                acc += static_cast<double>(k.weight(o, c, a, b)) * static_cast<double>(x(n, c, r, q));
              }
          y(n, o, i, j) = static_cast<S>(acc);
        }
  return y;
}

/// 1-d convolution inside each row slice (along W) or column slice (along H).
template <typename S>
Tensor<S> slice_conv(const Tensor<S>& x, const resa::ConvKernel<S>& k, bool rows) {
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), w = k.kw(), half = w / 2;
  Tensor<S> y(x.dims());
  for (Index n = 0; n < N; ++n)
    for (Index o = 0; o < C; ++o)
      for (Index i = 0; i < H; ++i)
        for (Index j = 0; j < W; ++j) {
          double acc = 0.0;
          for (Index c = 0; c < C; ++c)
            for (Index t = 0; t < w; ++t) {
              const Index r = rows ? i : i + t - half;
              const Index q = rows ? j + t - half : j;
              if (r < 0 || r >= H || q < 0 || q >= W) continue;
              acc += static_cast<double>(k.weight(o, c, 0, t)) * static_cast<double>(x(n, c, r, q));
            }
          y(n, o, i, j) = static_cast<S>(acc);
        }
  return y;
}

/// Half-pixel-centre bilinear interpolation, coordinates clamped to the image.
template <typename S>
Tensor<S> bilinear(const Tensor<S>& x, Index f) {
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<S> y({N, C, H * f, W * f});
  auto coord = [f](Index d, Index n) {
    double s = (d + 0.5) / static_cast<double>(f) - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(n - 1));
  };
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < C; ++c)
      for (Index i = 0; i < H * f; ++i)
        for (Index j = 0; j < W * f; ++j) {
          const double sy = coord(i, H), sx = coord(j, W);
          double acc = 0.0;
          // tent weights over every source pixel
          for (Index r = 0; r < H; ++r)
            for (Index q = 0; q < W; ++q) {
              const double wy = std::max(0.0, 1.0 - std::abs(sy - r));
              const double wx = std::max(0.0, 1.0 - std::abs(sx - q));
              acc += wy * wx * static_cast<double>(x(n, c, r, q));
            }
          y(n, c, i, j) = static_cast<S>(acc);
        }
  return y;
}

/// Every input pixel scatters weight(o, c, a, b) * x into output (2i+a, 2j+b).
template <typename S>
Tensor<S> transpose_conv2x(const Tensor<S>& x, const resa::ConvKernel<S>& k) {
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), O = k.out_channels();
  Tensor<S> y({N, O, 2 * H, 2 * W});
  for (Index n = 0; n < N; ++n)
    for (Index o = 0; o < O; ++o) {
      if (k.bias)
        for (Index i = 0; i < 2 * H; ++i)
          for (Index j = 0; j < 2 * W; ++j) y(n, o, i, j) = (*k.bias)[o];
      for (Index c = 0; c < C; ++c)
        for (Index i = 0; i < H; ++i)
          for (Index j = 0; j < W; ++j)
            for (Index a = 0; a < 2; ++a)
              for (Index b = 0; b < 2; ++b) y(n, o, 2 * i + a, 2 * j + b) += k.weight(o, c, a, b) * x(n, c, i, j);
    }
  return y;
}

inline std::vector<Index> strides(Index L, int K, resa::StridePolicy policy) {
  std::vector<Index> s;
  for (int k = 0; k < K; ++k) {
    if (policy == resa::StridePolicy::kPowersOfTwo) {
      s.push_back(Index{1} << k);
    } else {
      Index v = L;
      for (int d = 0; d < K - k; ++d) v /= 2;
      s.push_back(std::max<Index>(1, v));
    }
  }
  return s;
}

/// Unrolled feature-shift aggregation: per iteration, per direction, every
/// output element recomputed from the previous state.
inline Tensor<double> resa(const Tensor<double>& x, const resa::ResaParams<double>& p) {
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto& cfg = p.config;
  const Index half = cfg.kernel_width / 2;
  Tensor<double> cur = x;
  for (int k = 0; k < cfg.iterations; ++k) {
    for (std::size_t d = 0; d < cfg.directions.size(); ++d) {
      const char code = resa::direction_code(cfg.directions[d]);
      const bool vertical = code == 'D' || code == 'U';
      // D and R pull from the slice s before, U and L from the slice s after
      const Index sign = (code == 'D' || code == 'R') ? -1 : 1;
      const Index s = strides(vertical ? H : W, cfg.iterations, cfg.stride_policy)[static_cast<std::size_t>(k)];
      const auto& ker = p.kernels[d][static_cast<std::size_t>(k)];
      Tensor<double> next(x.dims());
      for (Index n = 0; n < N; ++n)
        for (Index o = 0; o < C; ++o)
          for (Index i = 0; i < H; ++i)
            for (Index j = 0; j < W; ++j) {
              double z = 0.0;
              for (Index c = 0; c < C; ++c)
                for (Index t = 0; t < cfg.kernel_width; ++t) {
                  Index r, q;
                  if (vertical) {
                    r = wrap(i + sign * s, H);
                    q = j + t - half;
                  } else {
                    r = i + t - half;
                    q = wrap(j + sign * s, W);
                  }
                  if (r < 0 || r >= H || q < 0 || q >= W) continue;
                  z += ker.weight(o, c, 0, t) * cur(n, c, r, q);
                }
              const double fz = std::max(0.0, z);
              const double v = cur(n, o, i, j);
              next(n, o, i, j) = cfg.fusion == resa::Fusion::kAdd ? v + fz : std::max(v, fz);
            }
      cur = next;
    }
  }
  return cur;
}

/// Offsets reachable from position 0 after each iteration: row k holds
/// { sum of a subset of s_0..s_k } mod L.
inline std::vector<std::set<Index>> reachable(Index L, const std::vector<Index>& s) {
  std::vector<std::set<Index>> rows;
  std::set<Index> cur{0};
  for (Index step : s) {
    std::set<Index> next = cur;
    for (Index p : cur) next.insert(wrap(p + step, L));
    cur = next;
    rows.push_back(cur);
  }
  return rows;
}

/// Per-pixel test: pixel (y, j) is on the lane when y lies in the lane's
/// integer row span and x(y) - h <= j < x(y) + h, with h the slope-widened
/// half width of the segment holding y (the earlier one at a shared vertex).
inline std::vector<std::uint8_t> lane_mask(const resa::LaneLabel& lane, Index H, Index W, double width) {
  std::vector<std::uint8_t> m(static_cast<std::size_t>(H * W), 0);
  const auto& p = lane.points;
  if (p.empty()) return m;
  for (Index y = 0; y < H; ++y) {
    if (y < p.front().y || y > p.back().y) continue;
    double xc = p.front().x, slope = 0.0;
    for (std::size_t s = 0; s + 1 < p.size(); ++s) {
      if (p[s + 1].y >= y || s + 2 == p.size()) {
        slope = (p[s + 1].x - p[s].x) / (p[s + 1].y - p[s].y);
        xc = p[s].x + slope * (y - p[s].y);
        break;
      }
    }
    const double h = 0.5 * width * std::sqrt(1.0 + slope * slope);
    for (Index j = 0; j < W; ++j)
      if (j >= xc - h && j < xc + h) m[static_cast<std::size_t>(y * W + j)] = 1;
  }
  return m;
}

inline double iou(const resa::LaneLabel& a, const resa::LaneLabel& b, double width, Index H, Index W) {
  const auto ma = lane_mask(a, H, W, width), mb = lane_mask(b, H, W, width);
  long inter = 0, uni = 0;
  for (std::size_t i = 0; i < ma.size(); ++i) {
    inter += ma[i] && mb[i];
    uni += ma[i] || mb[i];
  }
  return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

struct Matching {
  double total = 0.0;
  long pairs = 0;
};

/// Enumerates every one-to-one partial matching over pairs with weight > 0;
/// returns the best total weight (more pairs break exact ties).
inline Matching best_matching(const std::vector<std::vector<double>>& w) {
  const std::size_t n = w.size(), m = n ? w[0].size() : 0;
  std::vector<bool> used(m, false);
  Matching best;
  std::function<void(std::size_t, Matching)> go = [&](std::size_t row, Matching acc) {
    if (row == n) {
      if (acc.total > best.total + 1e-12 || (std::abs(acc.total - best.total) <= 1e-12 && acc.pairs > best.pairs))
        best = acc;
      return;
    }
    go(row + 1, acc);
    for (std::size_t c = 0; c < m; ++c) {
      if (used[c] || w[row][c] <= 0.0) continue;
      used[c] = true;
      go(row + 1, {acc.total + w[row][c], acc.pairs + 1});
      used[c] = false;
    }
  };
  go(0, {});
  return best;
}

inline resa::MatchCounts culane_match(const std::vector<resa::LaneLabel>& preds,
                                      const std::vector<resa::LaneLabel>& gts, double thr, double width, Index H,
                                      Index W) {
  std::vector<std::vector<double>> w(preds.size(), std::vector<double>(gts.size(), 0.0));
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (std::size_t j = 0; j < gts.size(); ++j) {
      const double v = iou(preds[i], gts[j], width, H, W);
      w[i][j] = v > thr ? v : 0.0;
    }
  const long tp = best_matching(w).pairs;
  return {tp, static_cast<long>(preds.size()) - tp, static_cast<long>(gts.size()) - tp};
}

struct PointScore {
  long correct = 0, total = 0, fp = 0, fn = 0, num_pred = 0, num_gt = 0;
};

/// Point-by-point Tusimple scoring. x < 0 marks an absent point; lanes with
/// no points at all are not lanes.
inline PointScore tusimple(const std::vector<std::vector<double>>& preds,
                           const std::vector<std::vector<double>>& gts, double thr = 20.0, double accept = 0.85) {
  PointScore s;
  std::vector<const std::vector<double>*> P;
  for (const auto& p : preds)
    if (std::any_of(p.begin(), p.end(), [](double v) { return v >= 0.0; })) P.push_back(&p);
  s.num_pred = static_cast<long>(P.size());
  std::vector<bool> accepted(P.size(), false);
  for (const auto& g : gts) {
    long n = 0;
    for (double v : g) n += v >= 0.0;
    if (n == 0) continue;
    ++s.num_gt;
    s.total += n;
    long best = 0;
    for (std::size_t i = 0; i < P.size(); ++i) {
      long hit = 0;
      for (std::size_t r = 0; r < g.size(); ++r)
        if (g[r] >= 0.0 && (*P[i])[r] >= 0.0 && std::abs((*P[i])[r] - g[r]) <= thr) ++hit;
      best = std::max(best, hit);
      if (static_cast<double>(hit) / static_cast<double>(n) >= accept) accepted[i] = true;
    }
    s.correct += best;
    if (static_cast<double>(best) / static_cast<double>(n) < accept) ++s.fn;
  }
  for (bool a : accepted) s.fp += !a;
  return s;
}

}  // namespace oracle
