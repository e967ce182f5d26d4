#pragma once

// Synthetic road scenes with lane labels, target rasterisation, and the
// CULane / Tusimple label formats.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "resa/config.hpp"
#include "resa/lane.hpp"
#include "resa/tensor.hpp"

namespace resa {

struct SceneOptions {
  Index height = 96;
  Index width = 160;
  Index num_lanes = 4;
};

struct Sample {
  Tensor<float> image;           // (3, H, W), values in [0,1] on the 8-bit grid
  std::vector<LaneLabel> lanes;  // ordered by lane_index
  Tensor<float> occlusion;       // (H, W), 1 where an occluder covers the road
  Difficulty difficulty = Difficulty::kNormal;
  double occluded_fraction = 0.0;  // share of labelled lane pixels under the occlusion mask
};

Sample generate_sample(std::uint64_t seed, Difficulty difficulty, const SceneOptions& opt = {});

/// Seed of sample `index` in a set generated from `base`.
std::uint64_t sample_seed(std::uint64_t base, std::uint64_t index);

/// round(30 * W / 1640), at least 1.
Index line_width_for(Index image_width);

/// Pixels covered by a lane drawn `width` pixels wide (row-major H*W, 0/1).
/// Row y is covered on columns j with x(y) - h <= j < x(y) + h, where the
/// half extent h widens with the lane's slope so the normal width stays `width`.
std::vector<std::uint8_t> lane_mask(const LaneLabel& lane, Index height, Index width, double line_width);

struct Targets {
  Tensor<std::int32_t> seg;  // (H, W): 0 background, lane_index + 1 on lane pixels
  Tensor<float> exist;       // (num_lanes)
};

/// Lower lane indices win where lanes overlap. Throws DataError on duplicate
/// or out-of-range lane indices.
Targets rasterize_targets(const std::vector<LaneLabel>& lanes, Index height, Index width, double line_width,
                          Index num_lanes);

// --- CULane: one lane per line, "x y" pairs ---
void write_culane_lines(const std::vector<LaneLabel>& lanes, const std::filesystem::path& path);
/// Lanes get lane_index 0, 1, ... in file order.
std::vector<LaneLabel> read_culane_lines(const std::filesystem::path& path);
std::vector<LaneLabel> parse_culane_lines(const std::string& text);

// --- Tusimple: JSON lines with "lanes", "h_samples", "raw_file" ---
inline constexpr double kTusimpleAbsent = -2.0;

struct TusimpleRecord {
  std::string raw_file;
  std::vector<double> h_samples;
  std::vector<std::vector<double>> lanes;  // x per h_sample; kTusimpleAbsent (any negative x on read) where missing
};

std::vector<TusimpleRecord> read_tusimple_labels(const std::filesystem::path& path);
std::vector<TusimpleRecord> parse_tusimple_labels(const std::string& text);
void write_tusimple_labels(const std::vector<TusimpleRecord>& records, const std::filesystem::path& path);

/// Present points of each lane; lane_index follows list position.
std::vector<LaneLabel> to_lane_labels(const TusimpleRecord& record);
/// Samples a polyline at each h_sample by linear interpolation; rows outside
/// its y-range or outside [0, image_width) are absent.
std::vector<double> sample_at_rows(const LaneLabel& lane, const std::vector<double>& h_samples, Index image_width);

// --- Generated datasets on disk ---
// manifest.txt: "<image> <label> e0 .. e{L-1} <difficulty>" per sample, paths relative to the
// dataset directory. Label files hold the present lanes in slot order.
struct ManifestEntry {
  std::string image;
  std::string label;
  std::vector<int> exist;
  Difficulty difficulty = Difficulty::kNormal;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir);

struct GenerateOptions {
  int count = 100;
  Difficulty difficulty = Difficulty::kCrowded;
  std::uint64_t seed = 1;
  SceneOptions scene;
  std::vector<double> h_samples;  // empty: every 4th row from the bottom
};

/// Writes images/, labels/, manifest.txt and tusimple.json under dir.
void write_dataset(const std::filesystem::path& dir, const GenerateOptions& opt);

struct LabelledImage {
  Tensor<float> image;  // (3, H, W)
  std::vector<LaneLabel> lanes;
  Difficulty difficulty = Difficulty::kNormal;
};

std::vector<LabelledImage> load_dataset(const std::filesystem::path& dir, Index num_lanes);
std::vector<LabelledImage> generate_images(int count, Difficulty difficulty, std::uint64_t seed,
                                           const SceneOptions& opt = {});

/// Rows H-1, H-1-step, ... in increasing order.
std::vector<double> default_h_samples(Index height, Index step = 4);

}  // namespace resa
