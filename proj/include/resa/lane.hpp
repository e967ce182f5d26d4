#pragma once

#include <stdexcept>
#include <vector>

namespace resa {

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

/// A lane as an ordered polyline in image pixels (y strictly increasing) and
/// its slot in [0, num_lanes).
struct LaneLabel {
  std::vector<Point> points;
  int lane_index = 0;
  friend bool operator==(const LaneLabel&, const LaneLabel&) = default;
};

/// Malformed or inconsistent input data (labels, manifests, images).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace resa
