#include "resa/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "resa/data.hpp"

namespace resa {

double lane_iou(const LaneLabel& a, const LaneLabel& b, double width_px, Index height, Index width) {
  const auto ma = lane_mask(a, height, width, width_px);
  const auto mb = lane_mask(b, height, width, width_px);
  long inter = 0;
  long uni = 0;
  for (std::size_t i = 0; i < ma.size(); ++i) {
    inter += ma[i] & mb[i];
    uni += ma[i] | mb[i];
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<std::pair<int, int>> max_weight_assignment(const std::vector<std::vector<double>>& weight) {
  const int rows = static_cast<int>(weight.size());
  const int cols = rows ? static_cast<int>(weight.front().size()) : 0;
  for (const auto& r : weight) {
    if (static_cast<int>(r.size()) != cols) throw std::invalid_argument("max_weight_assignment: ragged matrix");
  }
  if (rows == 0 || cols == 0) return {};
  const bool flip = rows > cols;
  const int n = flip ? cols : rows;
  const int m = flip ? rows : cols;
  auto cost = [&](int i, int j) { return flip ? -weight[j - 1][i - 1] : -weight[i - 1][j - 1]; };

  // Potentials-based shortest augmenting paths, 1-based with column 0 as the virtual source.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<std::pair<int, int>> out;
  for (int j = 1; j <= m; ++j) {
    if (!p[j]) continue;
    if (flip) out.emplace_back(j - 1, p[j] - 1);
    else out.emplace_back(p[j] - 1, j - 1);
  }
  std::sort(out.begin(), out.end());
  return out;
}

MatchCounts culane_match(const std::vector<LaneLabel>& preds, const std::vector<LaneLabel>& gts, double iou_threshold,
                         double width_px, Index height, Index width) {
  std::vector<std::vector<double>> w(preds.size(), std::vector<double>(gts.size(), 0.0));
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (std::size_t j = 0; j < gts.size(); ++j) {
      const double iou = lane_iou(preds[i], gts[j], width_px, height, width);
      w[i][j] = iou > iou_threshold ? iou : 0.0;
    }
  long tp = 0;
  for (const auto& [i, j] : max_weight_assignment(w)) tp += w[i][j] > 0.0;
  return {tp, static_cast<long>(preds.size()) - tp, static_cast<long>(gts.size()) - tp};
}

void finalize_culane(EvalReport& r) {
  r.precision = r.tp + r.fp ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp) : 0.0;
  r.recall = r.tp + r.fn ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn) : 0.0;
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
}

EvalReport culane_f1(const std::vector<std::vector<LaneLabel>>& preds, const std::vector<std::vector<LaneLabel>>& gts,
                     double iou_threshold, double width_px, Index height, Index width) {
  if (preds.size() != gts.size()) {
    throw std::invalid_argument("culane_f1: " + std::to_string(preds.size()) + " prediction sets for " +
                                std::to_string(gts.size()) + " images");
  }
  EvalReport r;
  r.metric = MetricKind::kCulane;
  r.images = preds.size();
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const MatchCounts c = culane_match(preds[i], gts[i], iou_threshold, width_px, height, width);
    r.tp += c.tp;
    r.fp += c.fp;
    r.fn += c.fn;
  }
  finalize_culane(r);
  return r;
}

PointCounts tusimple_image(const RowLanes& preds, const RowLanes& gts, std::size_t rows, const TusimpleOptions& opt) {
  auto check = [rows](const RowLanes& lanes, const char* what) {
    for (const auto& l : lanes) {
      if (l.size() != rows) {
        throw DataError(std::string(what) + " lane has " + std::to_string(l.size()) + " entries for " +
                        std::to_string(rows) + " h_samples");
      }
    }
  };
  check(preds, "predicted");
  check(gts, "ground-truth");
  auto present = [](double x) { return x >= 0.0; };
  auto count_present = [&](const std::vector<double>& l) {
    return static_cast<long>(std::count_if(l.begin(), l.end(), present));
  };
  auto correct = [&](const std::vector<double>& p, const std::vector<double>& g) {
    long c = 0;
    for (std::size_t k = 0; k < rows; ++k)
      c += present(g[k]) && present(p[k]) && std::abs(p[k] - g[k]) <= opt.dist_threshold;
    return c;
  };

  PointCounts out;
  std::vector<const std::vector<double>*> pred_lanes;
  for (const auto& p : preds)
    if (count_present(p) > 0) pred_lanes.push_back(&p);
  std::vector<double> best_pred_ratio(pred_lanes.size(), 0.0);
  for (const auto& g : gts) {
    const long total = count_present(g);
    if (total == 0) continue;
    ++out.num_gt;
    long best = 0;
    for (std::size_t i = 0; i < pred_lanes.size(); ++i) {
      const long c = correct(*pred_lanes[i], g);
      best = std::max(best, c);
      best_pred_ratio[i] = std::max(best_pred_ratio[i], static_cast<double>(c) / static_cast<double>(total));
    }
    out.correct += best;
    out.total += total;
    if (static_cast<double>(best) / static_cast<double>(total) < opt.accept_ratio) ++out.fn;
  }
  out.num_pred = static_cast<long>(pred_lanes.size());
  for (double r : best_pred_ratio) out.fp += r < opt.accept_ratio;
  return out;
}

EvalReport tusimple_accuracy(const std::vector<RowLanes>& preds, const std::vector<RowLanes>& gts,
                             const std::vector<double>& h_samples, const TusimpleOptions& opt) {
  if (preds.size() != gts.size()) throw std::invalid_argument("tusimple_accuracy: image count mismatch");
  EvalReport r;
  r.metric = MetricKind::kTusimple;
  r.images = preds.size();
  long fp = 0;
  long fn = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const PointCounts c = tusimple_image(preds[i], gts[i], h_samples.size(), opt);
    r.correct_points += c.correct;
    r.total_points += c.total;
    r.num_pred += c.num_pred;
    r.num_gt += c.num_gt;
    fp += c.fp;
    fn += c.fn;
  }
  r.fp = fp;
  r.fn = fn;
  r.tp = r.num_gt - fn;
  r.accuracy = r.total_points ? static_cast<double>(r.correct_points) / static_cast<double>(r.total_points) : 0.0;
  r.fp_rate = r.num_pred ? static_cast<double>(fp) / static_cast<double>(r.num_pred) : 0.0;
  r.fn_rate = r.num_gt ? static_cast<double>(fn) / static_cast<double>(r.num_gt) : 0.0;
  return r;
}

std::string report_text(const EvalReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  if (r.metric == MetricKind::kCulane) {
    os << "metric     culane\n"
       << "images     " << r.images << '\n'
       << "TP         " << r.tp << '\n'
       << "FP         " << r.fp << '\n'
       << "FN         " << r.fn << '\n'
       << "Precision  " << r.precision << '\n'
       << "Recall     " << r.recall << '\n'
       << "F1         " << r.f1 << '\n';
  } else {
    os << "metric     tusimple\n"
       << "images     " << r.images << '\n'
       << "Accuracy   " << r.accuracy << '\n'
       << "FP         " << r.fp_rate << '\n'
       << "FN         " << r.fn_rate << '\n'
       << "points     " << r.correct_points << '/' << r.total_points << '\n';
  }
  return os.str();
}

std::string report_key_values(const EvalReport& r) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "metric=" << (r.metric == MetricKind::kCulane ? "culane" : "tusimple") << '\n' << "images=" << r.images << '\n';
  if (r.metric == MetricKind::kCulane) {
    os << "tp=" << r.tp << "\nfp=" << r.fp << "\nfn=" << r.fn << "\nprecision=" << r.precision
       << "\nrecall=" << r.recall << "\nf1=" << r.f1 << '\n';
  } else {
    os << "correct_points=" << r.correct_points << "\ntotal_points=" << r.total_points << "\nnum_pred=" << r.num_pred
       << "\nnum_gt=" << r.num_gt << "\nfp=" << r.fp << "\nfn=" << r.fn << "\naccuracy=" << r.accuracy
       << "\nfp_rate=" << r.fp_rate << "\nfn_rate=" << r.fn_rate << '\n';
  }
  return os.str();
}

void write_report(const EvalReport& r, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << report_key_values(r);
}

}  // namespace resa
