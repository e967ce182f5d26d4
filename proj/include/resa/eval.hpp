#pragma once

// Lane metrics: IoU-matched precision/recall/F1 and point-wise accuracy with
// false-positive / false-negative rates.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "resa/lane.hpp"
#include "resa/tensor.hpp"

namespace resa {

enum class MetricKind { kCulane, kTusimple };

struct EvalReport {
  MetricKind metric = MetricKind::kCulane;
  std::size_t images = 0;
  // IoU mode
  long tp = 0;
  long fp = 0;
  long fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  // point mode
  long correct_points = 0;
  long total_points = 0;
  long num_pred = 0;
  long num_gt = 0;
  double accuracy = 0.0;
  double fp_rate = 0.0;
  double fn_rate = 0.0;
};

/// IoU of the two lanes drawn width_px wide on an H x W canvas; 0 when both are empty.
double lane_iou(const LaneLabel& a, const LaneLabel& b, double width_px, Index height, Index width);

/// One-to-one assignment maximising the summed weight of an n x m matrix
/// (Hungarian method). Returns (row, col) pairs for every row when n <= m,
/// every column otherwise; callers drop pairs they consider unmatched.
std::vector<std::pair<int, int>> max_weight_assignment(const std::vector<std::vector<double>>& weight);

struct MatchCounts {
  long tp = 0;
  long fp = 0;
  long fn = 0;
};

/// Matches one image's lanes: pairs with IoU > threshold are candidates and
/// the assignment maximises their total IoU.
MatchCounts culane_match(const std::vector<LaneLabel>& preds, const std::vector<LaneLabel>& gts,
                         double iou_threshold, double width_px, Index height, Index width);

/// preds[i] and gts[i] are the lanes of image i.
EvalReport culane_f1(const std::vector<std::vector<LaneLabel>>& preds,
                     const std::vector<std::vector<LaneLabel>>& gts, double iou_threshold, double width_px,
                     Index height, Index width);

/// Precision/recall/F1 from counts, 0/0 taken as 0.
void finalize_culane(EvalReport& r);

/// x per h_sample for each lane of an image; negative x (written as -2) is absent.
using RowLanes = std::vector<std::vector<double>>;

struct TusimpleOptions {
  double dist_threshold = 20.0;
  double accept_ratio = 0.85;
};

struct PointCounts {
  long correct = 0;
  long total = 0;
  long fp = 0;
  long fn = 0;
  long num_pred = 0;
  long num_gt = 0;
};

/// Scores one image. Throws DataError when a lane's length differs from `rows`.
PointCounts tusimple_image(const RowLanes& preds, const RowLanes& gts, std::size_t rows,
                           const TusimpleOptions& opt = {});

EvalReport tusimple_accuracy(const std::vector<RowLanes>& preds, const std::vector<RowLanes>& gts,
                             const std::vector<double>& h_samples, const TusimpleOptions& opt = {});

/// Human-readable table.
std::string report_text(const EvalReport& r);
/// key=value lines.
std::string report_key_values(const EvalReport& r);
void write_report(const EvalReport& r, const std::filesystem::path& path);

}  // namespace resa
