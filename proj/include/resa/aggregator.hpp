#pragma once

// Recurrent feature-shift aggregation.
//
// A directional pass circularly gathers every slice from the slice s positions
// away, runs a shared 1-d channel-mixing convolution inside each gathered
// slice, and fuses the rectified result back into the pass input:
//
//   Z = slice_conv1d(gather(X, s)),  X' = X + relu(Z)   (or max(X, relu(Z)))
//
// Every slice reads the pre-pass tensor only, so all slices of a pass are
// independent. Iteration k uses stride s_k; the stride grows geometrically so
// that K passes reach 2^K slices.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "resa/ops.hpp"
#include "resa/random.hpp"
#include "resa/tensor.hpp"

namespace resa {

/// D: up-to-down, U: down-to-up, L: right-to-left, R: left-to-right.
enum class Direction : std::uint8_t { kUpToDown, kDownToUp, kRightToLeft, kLeftToRight };

enum class Axis { kVertical, kHorizontal };

char direction_code(Direction d);
Direction parse_direction(char code);
std::vector<Direction> parse_directions(std::string_view codes);
std::string directions_to_string(const std::vector<Direction>& dirs);

inline Axis axis_of(Direction d) {
  return (d == Direction::kUpToDown || d == Direction::kDownToUp) ? Axis::kVertical
                                                                   : Axis::kHorizontal;
}

/// +1 gathers from (i + s) mod L (down-to-up, right-to-left); -1 from (i - s) mod L.
inline int gather_sign(Direction d) {
  return (d == Direction::kDownToUp || d == Direction::kRightToLeft) ? +1 : -1;
}

/// Vertical passes shift rows and convolve inside each row, and vice versa.
inline SliceAxis slice_axis_of(Direction d) {
  return axis_of(d) == Axis::kVertical ? SliceAxis::kRows : SliceAxis::kColumns;
}

enum class Fusion { kAdd, kMax };
enum class StridePolicy {
  kFloorDivision,  // s_k = max(1, floor(L / 2^(K-k)))
  kPowersOfTwo,    // s_k = 2^k
};

struct StrideSchedule {
  Index length = 0;
  int iterations = 0;
  std::vector<Index> strides;
};

StrideSchedule compute_stride_schedule(Index length, int iterations,
                                       StridePolicy policy = StridePolicy::kFloorDivision);

/// Counts sequential update steps per axis. A RESA pass is one step for the
/// whole axis; sequential propagation spends one step per slice.
struct PassCounters {
  Index vertical = 0;
  Index horizontal = 0;
  Index slice_updates = 0;

  void record(Axis axis, Index steps, Index slices) {
    (axis == Axis::kVertical ? vertical : horizontal) += steps;
    slice_updates += slices;
  }
};

struct ResaConfig {
  std::vector<Direction> directions{Direction::kUpToDown, Direction::kDownToUp,
                                    Direction::kRightToLeft, Direction::kLeftToRight};
  int iterations = 4;
  Index kernel_width = 9;
  Fusion fusion = Fusion::kAdd;
  StridePolicy stride_policy = StridePolicy::kFloorDivision;
};

template <typename Scalar>
struct ResaParams {
  ResaConfig config;
  /// kernels[d][k]: (C, C, 1, w) kernel of config.directions[d] at iteration k.
  std::vector<std::vector<ConvKernel<Scalar>>> kernels;

  Index channels() const { return kernels.empty() ? 0 : kernels.front().front().out_channels(); }

  template <typename To>
  ResaParams<To> cast() const {
    ResaParams<To> out{config, {}};
    for (const auto& per_dir : kernels) {
      out.kernels.emplace_back();
      for (const auto& k : per_dir) out.kernels.back().push_back(k.template cast<To>());
    }
    return out;
  }
};

/// Zero-mean uniform kernels with bound (C * w)^-1/2, no bias.
template <typename Scalar>
ResaParams<Scalar> make_resa_params(Index channels, const ResaConfig& config, Rng& rng);
template <typename Scalar>
ResaParams<Scalar> zero_resa_params(Index channels, const ResaConfig& config);

/// out slice i = x slice (i + sign * s) mod L along the given axis.
template <typename Scalar>
Tensor<Scalar> circular_shift_gather(const Tensor<Scalar>& x, Axis axis, Index s, int sign);

template <typename Scalar>
struct PassRecord {
  std::size_t direction_index = 0;
  int iteration = 0;
  Index stride = 0;
  Tensor<Scalar> input;
  Tensor<Scalar> preactivation;
};

template <typename Scalar>
Tensor<Scalar> directional_pass(const Tensor<Scalar>& x, Direction dir, Index stride,
                                const ConvKernel<Scalar>& kernel, Fusion fusion,
                                Tensor<Scalar>* preactivation = nullptr);

/// Computes only slices [first, last) of a directional pass into `out`. Each
/// slice depends on the pre-pass tensor alone, so ranges may be evaluated in
/// any order or concurrently.
template <typename Scalar>
void directional_pass_range(const Tensor<Scalar>& x, Direction dir, Index stride,
                            const ConvKernel<Scalar>& kernel, Fusion fusion, Index first, Index last,
                            Tensor<Scalar>& out);

template <typename Scalar>
struct PassGrads {
  Tensor<Scalar> input;
  Tensor<Scalar> weight;
};

/// Max fusion routes the gradient to the larger branch; ties go to the residual.
template <typename Scalar>
PassGrads<Scalar> directional_pass_backward(const Tensor<Scalar>& input,
                                            const Tensor<Scalar>& preactivation, Direction dir,
                                            Index stride, const ConvKernel<Scalar>& kernel,
                                            Fusion fusion, const Tensor<Scalar>& grad_out);

template <typename Scalar>
struct ResaTape {
  std::vector<PassRecord<Scalar>> passes;
};

struct ResaExecution {
  int threads = 1;  // slice-parallel workers per pass
  PassCounters* counters = nullptr;
};

/// Runs iterations k = 0..K-1, each applying every configured direction in
/// order; each pass consumes the previous pass's output.
template <typename Scalar>
Tensor<Scalar> resa_forward(const Tensor<Scalar>& x, const ResaParams<Scalar>& p,
                            ResaTape<Scalar>* tape = nullptr, const ResaExecution& exec = {});

template <typename Scalar>
struct ResaGrads {
  Tensor<Scalar> input;
  std::vector<std::vector<Tensor<Scalar>>> kernels;  // same layout as ResaParams::kernels
};

template <typename Scalar>
ResaGrads<Scalar> resa_backward(const ResaParams<Scalar>& p, const ResaTape<Scalar>& tape,
                                const Tensor<Scalar>& grad_out);

/// Sequential slice-by-slice propagation: slices are visited in order along
/// `dir` and each one adds relu(conv(previous, already updated slice)). No
/// wrap-around. Forward only; serves as the linear-depth baseline.
template <typename Scalar>
Tensor<Scalar> scnn_reference_pass(const Tensor<Scalar>& x, Direction dir,
                                   const ConvKernel<Scalar>& kernel, PassCounters* counters = nullptr);

/// One sequential pass per direction, in order, with kernels[d] for directions[d].
template <typename Scalar>
Tensor<Scalar> scnn_forward(const Tensor<Scalar>& x, const std::vector<Direction>& directions,
                            const std::vector<ConvKernel<Scalar>>& kernels,
                            PassCounters* counters = nullptr);

}  // namespace resa
