#include "resa/aggregator.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace resa {

namespace {

Index wrap(Index i, Index n) {
  const Index r = i % n;
  return r < 0 ? r + n : r;
}

Index axis_length(const Nchw& s, Axis axis) { return axis == Axis::kVertical ? s.h : s.w; }

// Slices [first, last) of the circularly gathered tensor.
template <typename Scalar>
Tensor<Scalar> gather_slices(const Tensor<Scalar>& x, Axis axis, Index s, int sign, Index first,
                             Index last) {
  const Nchw d = nchw(x, "shift input");
  const Index count = last - first;
  if (axis == Axis::kVertical) {
    Tensor<Scalar> out({d.n, d.c, count, d.w});
    for (Index p = 0; p < d.n * d.c; ++p) {
      const Scalar* src = x.data() + p * d.plane();
      Scalar* dst = out.data() + p * count * d.w;
      for (Index r = 0; r < count; ++r) {
        const Index from = wrap(first + r + sign * s, d.h);
        std::copy(src + from * d.w, src + (from + 1) * d.w, dst + r * d.w);
      }
    }
    return out;
  }
  Tensor<Scalar> out({d.n, d.c, d.h, count});
  for (Index p = 0; p < d.n * d.c * d.h; ++p) {
    const Scalar* src = x.data() + p * d.w;
    Scalar* dst = out.data() + p * count;
    for (Index r = 0; r < count; ++r) dst[r] = src[wrap(first + r + sign * s, d.w)];
  }
  return out;
}

template <typename Scalar>
void check_pass_kernel(const Tensor<Scalar>& x, const ConvKernel<Scalar>& k) {
  const Nchw d = nchw(x, "directional pass input");
  if (k.weight.rank() != 4 || k.kh() != 1 || k.in_channels() != d.c || k.out_channels() != d.c) {
    throw ShapeError("directional pass: kernel " + dims_to_string(k.weight.dims()) +
                     " does not match " + std::to_string(d.c) + " channels");
  }
}

template <typename Scalar>
Scalar fuse(Scalar residual, Scalar z, Fusion fusion) {
  const Scalar f = z > Scalar(0) ? z : Scalar(0);
  return fusion == Fusion::kAdd ? residual + f : std::max(residual, f);
}

}  // namespace

char direction_code(Direction d) {
  switch (d) {
    case Direction::kUpToDown: return 'D';
    case Direction::kDownToUp: return 'U';
    case Direction::kRightToLeft: return 'L';
    case Direction::kLeftToRight: return 'R';
  }
  return '?';
}

Direction parse_direction(char code) {
  switch (code) {
    case 'D': return Direction::kUpToDown;
    case 'U': return Direction::kDownToUp;
    case 'L': return Direction::kRightToLeft;
    case 'R': return Direction::kLeftToRight;
    default: throw std::invalid_argument(std::string("unknown direction code '") + code + "'");
  }
}

std::vector<Direction> parse_directions(std::string_view codes) {
  std::vector<Direction> dirs;
  for (char c : codes) {
    const Direction d = parse_direction(c);
    if (std::find(dirs.begin(), dirs.end(), d) != dirs.end()) {
      throw std::invalid_argument(std::string("direction '") + c + "' listed twice");
    }
    dirs.push_back(d);
  }
  return dirs;
}

std::string directions_to_string(const std::vector<Direction>& dirs) {
  std::string s;
  for (Direction d : dirs) s += direction_code(d);
  return s;
}

StrideSchedule compute_stride_schedule(Index length, int iterations, StridePolicy policy) {
  if (length < 1 || iterations < 0) {
    throw std::invalid_argument("stride schedule needs L >= 1 and K >= 0");
  }
  StrideSchedule s{length, iterations, {}};
  for (int k = 0; k < iterations; ++k) {
    Index stride;
    if (policy == StridePolicy::kPowersOfTwo) {
      stride = Index{1} << k;
    } else {
      const int shift = iterations - k;
      stride = shift >= 63 ? 0 : length >> shift;
    }
    s.strides.push_back(std::max<Index>(stride, 1));
  }
  return s;
}

template <typename Scalar>
ResaParams<Scalar> zero_resa_params(Index channels, const ResaConfig& config) {
  if (config.kernel_width % 2 == 0 || config.kernel_width < 1) {
    throw std::invalid_argument("RESA kernel width must be odd");
  }
  ResaParams<Scalar> p{config, {}};
  for (std::size_t d = 0; d < config.directions.size(); ++d) {
    p.kernels.emplace_back();
    for (int k = 0; k < config.iterations; ++k) {
      p.kernels.back().emplace_back(channels, channels, 1, config.kernel_width);
    }
  }
  return p;
}

template <typename Scalar>
ResaParams<Scalar> make_resa_params(Index channels, const ResaConfig& config, Rng& rng) {
  ResaParams<Scalar> p = zero_resa_params<Scalar>(channels, config);
  const double bound = 1.0 / std::sqrt(static_cast<double>(channels * config.kernel_width));
  for (auto& per_dir : p.kernels)
    for (auto& k : per_dir) fill_uniform(k.weight, rng, -bound, bound);
  return p;
}

template <typename Scalar>
Tensor<Scalar> circular_shift_gather(const Tensor<Scalar>& x, Axis axis, Index s, int sign) {
  const Nchw d = nchw(x, "circular_shift_gather input");
  if (s < 0) throw std::invalid_argument("shift stride must be non-negative");
  return gather_slices(x, axis, s, sign, 0, axis_length(d, axis));
}

template <typename Scalar>
Tensor<Scalar> directional_pass(const Tensor<Scalar>& x, Direction dir, Index stride,
                                const ConvKernel<Scalar>& kernel, Fusion fusion,
                                Tensor<Scalar>* preactivation) {
  check_pass_kernel(x, kernel);
  const Tensor<Scalar> shifted = circular_shift_gather(x, axis_of(dir), stride, gather_sign(dir));
  Tensor<Scalar> z = slice_conv1d(shifted, kernel, slice_axis_of(dir));
  Tensor<Scalar> out = x;
  for (Index t = 0; t < out.size(); ++t) out[t] = fuse(x[t], z[t], fusion);
  if (preactivation) *preactivation = std::move(z);
  return out;
}

template <typename Scalar>
void directional_pass_range(const Tensor<Scalar>& x, Direction dir, Index stride,
                            const ConvKernel<Scalar>& kernel, Fusion fusion, Index first, Index last,
                            Tensor<Scalar>& out) {
  check_pass_kernel(x, kernel);
  Tensor<Scalar>::require_same_dims(x, out, "directional_pass_range");
  const Nchw d = nchw(x);
  const Axis axis = axis_of(dir);
  if (first < 0 || last > axis_length(d, axis) || first >= last) {
    throw std::invalid_argument("directional_pass_range: bad slice range");
  }
  const Tensor<Scalar> shifted = gather_slices(x, axis, stride, gather_sign(dir), first, last);
  const Tensor<Scalar> z = slice_conv1d(shifted, kernel, slice_axis_of(dir));
  const Index count = last - first;
  for (Index p = 0; p < d.n * d.c; ++p) {
    for (Index i = 0; i < d.h; ++i) {
      if (axis == Axis::kVertical) {
        if (i < first || i >= last) continue;
        for (Index j = 0; j < d.w; ++j) {
          const Index at = (p * d.h + i) * d.w + j;
          out[at] = fuse(x[at], z[(p * count + (i - first)) * d.w + j], fusion);
        }
      } else {
        for (Index j = first; j < last; ++j) {
          const Index at = (p * d.h + i) * d.w + j;
          out[at] = fuse(x[at], z[(p * d.h + i) * count + (j - first)], fusion);
        }
      }
    }
  }
}

template <typename Scalar>
PassGrads<Scalar> directional_pass_backward(const Tensor<Scalar>& input,
                                            const Tensor<Scalar>& preactivation, Direction dir,
                                            Index stride, const ConvKernel<Scalar>& kernel,
                                            Fusion fusion, const Tensor<Scalar>& grad_out) {
  Tensor<Scalar>::require_same_dims(input, grad_out, "directional_pass_backward");
  Tensor<Scalar>::require_same_dims(input, preactivation, "directional_pass_backward");
  Tensor<Scalar> grad_residual = grad_out;
  Tensor<Scalar> grad_z = Tensor<Scalar>::zeros_like(grad_out);
  for (Index t = 0; t < grad_out.size(); ++t) {
    const Scalar z = preactivation[t];
    const bool active = z > Scalar(0);  // relu'(0) = 0
    if (fusion == Fusion::kAdd) {
      if (active) grad_z[t] = grad_out[t];
    } else if ((active ? z : Scalar(0)) > input[t]) {
      // relu branch wins; a negative residual against relu(z) = 0 passes nothing back
      if (active) grad_z[t] = grad_out[t];
      grad_residual[t] = Scalar(0);
    }
  }
  const Axis axis = axis_of(dir);
  const int sign = gather_sign(dir);
  const Tensor<Scalar> shifted = circular_shift_gather(input, axis, stride, sign);
  ConvGrads<Scalar> cg = slice_conv1d_backward(shifted, kernel, slice_axis_of(dir), grad_z);
  // The gather is a permutation; its adjoint gathers with the opposite sign.
  grad_residual += circular_shift_gather(cg.input, axis, stride, -sign);
  return {std::move(grad_residual), std::move(cg.weight)};
}

template <typename Scalar>
Tensor<Scalar> resa_forward(const Tensor<Scalar>& x, const ResaParams<Scalar>& p,
                            ResaTape<Scalar>* tape, const ResaExecution& exec) {
  const Nchw d = nchw(x, "resa input");
  const ResaConfig& cfg = p.config;
  if (p.kernels.size() != cfg.directions.size()) throw ShapeError("resa: kernel/direction mismatch");
  for (const auto& per_dir : p.kernels) {
    if (static_cast<int>(per_dir.size()) != cfg.iterations) {
      throw ShapeError("resa: expected one kernel per iteration");
    }
  }
  if (!p.kernels.empty() && p.channels() != d.c) {
    throw ShapeError("resa: kernels expect " + std::to_string(p.channels()) + " channels, input has " +
                     std::to_string(d.c));
  }
  const StrideSchedule vertical = compute_stride_schedule(d.h, cfg.iterations, cfg.stride_policy);
  const StrideSchedule horizontal = compute_stride_schedule(d.w, cfg.iterations, cfg.stride_policy);
  if (tape) tape->passes.clear();

  Tensor<Scalar> cur = x;
  for (int k = 0; k < cfg.iterations; ++k) {
    for (std::size_t di = 0; di < cfg.directions.size(); ++di) {
      const Direction dir = cfg.directions[di];
      const Axis axis = axis_of(dir);
      const Index length = axis_length(d, axis);
      const Index stride = (axis == Axis::kVertical ? vertical : horizontal).strides[k];
      const ConvKernel<Scalar>& kernel = p.kernels[di][k];
      if (exec.counters) exec.counters->record(axis, 1, length);

      if (tape) {
        PassRecord<Scalar> rec{di, k, stride, cur, {}};
        cur = directional_pass(cur, dir, stride, kernel, cfg.fusion, &rec.preactivation);
        tape->passes.push_back(std::move(rec));
      } else if (exec.threads <= 1) {
        cur = directional_pass(cur, dir, stride, kernel, cfg.fusion);
      } else {
        Tensor<Scalar> next = cur;
        const Index workers = std::min<Index>(exec.threads, length);
        std::vector<std::thread> pool;
        for (Index t = 0; t < workers; ++t) {
          const Index first = length * t / workers;
          const Index last = length * (t + 1) / workers;
          pool.emplace_back([&, first, last] {
            directional_pass_range(cur, dir, stride, kernel, cfg.fusion, first, last, next);
          });
        }
        for (auto& th : pool) th.join();
        cur = std::move(next);
      }
    }
  }
  return cur;
}

template <typename Scalar>
ResaGrads<Scalar> resa_backward(const ResaParams<Scalar>& p, const ResaTape<Scalar>& tape,
                                const Tensor<Scalar>& grad_out) {
  const std::size_t expected = p.config.directions.size() * static_cast<std::size_t>(p.config.iterations);
  if (tape.passes.size() != expected) throw ShapeError("resa_backward: tape does not match params");
  if (!tape.passes.empty()) {
    Tensor<Scalar>::require_same_dims(tape.passes.front().input, grad_out, "resa_backward");
  }
  ResaGrads<Scalar> grads{grad_out, {}};
  for (const auto& per_dir : p.kernels) {
    grads.kernels.emplace_back();
    for (const auto& k : per_dir) grads.kernels.back().push_back(Tensor<Scalar>::zeros_like(k.weight));
  }
  for (auto it = tape.passes.rbegin(); it != tape.passes.rend(); ++it) {
    const PassRecord<Scalar>& rec = *it;
    PassGrads<Scalar> g = directional_pass_backward(
        rec.input, rec.preactivation, p.config.directions[rec.direction_index], rec.stride,
        p.kernels[rec.direction_index][static_cast<std::size_t>(rec.iteration)], p.config.fusion,
        grads.input);
    grads.input = std::move(g.input);
    grads.kernels[rec.direction_index][static_cast<std::size_t>(rec.iteration)] += g.weight;
  }
  return grads;
}

namespace {

// Per-slice 1-d convolution with reusable buffers: slice (C x len) -> (C x len).
template <typename Scalar>
struct SliceWorkspace {
  Index channels, len, width;
  RowMatrix<Scalar> slice, cols, response;

  SliceWorkspace(Index c, Index l, Index w)
      : channels(c), len(l), width(w), slice(c, l), cols(c * w, l), response(c, l) {}

  void convolve(const Eigen::Map<const RowMatrix<Scalar>>& weights) {
    const Index half = width / 2;
    for (Index c = 0; c < channels; ++c) {
      for (Index n = 0; n < width; ++n) {
        Scalar* dst = cols.row(c * width + n).data();
        const Index off = n - half;
        for (Index t = 0; t < len; ++t) {
          const Index at = t + off;
          dst[t] = (at >= 0 && at < len) ? slice(c, at) : Scalar(0);
        }
      }
    }
    response.noalias() = weights * cols;
  }
};

}  // namespace

template <typename Scalar>
Tensor<Scalar> scnn_reference_pass(const Tensor<Scalar>& x, Direction dir,
                                   const ConvKernel<Scalar>& kernel, PassCounters* counters) {
  check_pass_kernel(x, kernel);
  const Nchw d = nchw(x);
  const Axis axis = axis_of(dir);
  const Index length = axis_length(d, axis);
  const Index len = axis == Axis::kVertical ? d.w : d.h;
  const int sign = gather_sign(dir);
  const Eigen::Map<const RowMatrix<Scalar>> weights(kernel.weight.data(), d.c, d.c * kernel.kw());
  SliceWorkspace<Scalar> ws(d.c, len, kernel.kw());

  Tensor<Scalar> out = x;
  auto element = [&](Index n, Index c, Index slice, Index t) -> Scalar& {
    return axis == Axis::kVertical ? out(n, c, slice, t) : out(n, c, t, slice);
  };
  // sign -1 reads slice i-1, so it sweeps upward in index; sign +1 sweeps downward.
  const Index begin = sign < 0 ? 1 : length - 2;
  const Index step = sign < 0 ? 1 : -1;
  for (Index i = begin; i >= 0 && i < length; i += step) {
    const Index from = i + sign;
    for (Index n = 0; n < d.n; ++n) {
      for (Index c = 0; c < d.c; ++c)
        for (Index t = 0; t < len; ++t) ws.slice(c, t) = element(n, c, from, t);
      ws.convolve(weights);
      for (Index c = 0; c < d.c; ++c)
        for (Index t = 0; t < len; ++t) {
          const Scalar z = ws.response(c, t);
          if (z > Scalar(0)) element(n, c, i, t) += z;
        }
    }
  }
  if (counters) counters->record(axis, length, length);
  return out;
}

template <typename Scalar>
Tensor<Scalar> scnn_forward(const Tensor<Scalar>& x, const std::vector<Direction>& directions,
                            const std::vector<ConvKernel<Scalar>>& kernels, PassCounters* counters) {
  if (directions.size() != kernels.size()) throw ShapeError("scnn_forward: one kernel per direction");
  Tensor<Scalar> cur = x;
  for (std::size_t i = 0; i < directions.size(); ++i) {
    cur = scnn_reference_pass(cur, directions[i], kernels[i], counters);
  }
  return cur;
}

#define RESA_INSTANTIATE_AGGREGATOR(S)                                                                \
  template ResaParams<S> make_resa_params(Index, const ResaConfig&, Rng&);                            \
  template ResaParams<S> zero_resa_params(Index, const ResaConfig&);                                  \
  template Tensor<S> circular_shift_gather(const Tensor<S>&, Axis, Index, int);                       \
  template Tensor<S> directional_pass(const Tensor<S>&, Direction, Index, const ConvKernel<S>&,      \
                                      Fusion, Tensor<S>*);                                            \
  template void directional_pass_range(const Tensor<S>&, Direction, Index, const ConvKernel<S>&,     \
                                       Fusion, Index, Index, Tensor<S>&);                             \
  template PassGrads<S> directional_pass_backward(const Tensor<S>&, const Tensor<S>&, Direction,     \
                                                  Index, const ConvKernel<S>&, Fusion,                \
                                                  const Tensor<S>&);                                  \
  template Tensor<S> resa_forward(const Tensor<S>&, const ResaParams<S>&, ResaTape<S>*,               \
                                  const ResaExecution&);                                              \
  template ResaGrads<S> resa_backward(const ResaParams<S>&, const ResaTape<S>&, const Tensor<S>&);    \
  template Tensor<S> scnn_reference_pass(const Tensor<S>&, Direction, const ConvKernel<S>&,          \
                                         PassCounters*);                                              \
  template Tensor<S> scnn_forward(const Tensor<S>&, const std::vector<Direction>&,                    \
                                  const std::vector<ConvKernel<S>>&, PassCounters*);

RESA_INSTANTIATE_AGGREGATOR(float)
RESA_INSTANTIATE_AGGREGATOR(double)

}  // namespace resa
