#pragma once

// Forward-only timing of RESA against sequential slice-by-slice propagation.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "resa/aggregator.hpp"

namespace resa {

struct FeatureSize {
  Index channels = 128;
  Index height = 36;
  Index width = 100;
};

/// "CxHxW", e.g. "128x36x100".
FeatureSize parse_feature_size(const std::string& text);

struct BenchConfig {
  std::vector<std::string> methods{"resa", "scnn_seq"};
  std::vector<Index> widths{7, 9, 11};
  std::vector<FeatureSize> sizes{{128, 36, 100}};
  int iterations = 4;  // RESA K
  int warmup = 5;
  int runs = 30;
  int threads = 1;  // >1 adds a "resa_parallel" row per config
  std::uint64_t seed = 7;
};

struct BenchResult {
  std::string method;
  Index kernel_width = 0;
  FeatureSize size;
  int iterations = 0;
  Index passes = 0;  // sequential horizontal steps per direction
  double median_ms = 0.0;
  double iqr_ms = 0.0;
  double flops = 0.0;  // multiply-adds of one forward
  PassCounters counters;
};

/// N * C^2 * w * H * W multiply-adds for one directional pass.
double pass_flops(Index batch, const FeatureSize& size, Index kernel_width);

/// Median and interquartile range (linear interpolation between order statistics).
std::pair<double, double> median_iqr(std::vector<double> samples);

std::vector<BenchResult> run_bench(const BenchConfig& cfg, std::ostream* progress = nullptr);

/// Table with one row per (width, size) and the scnn_seq / resa speedup.
std::string report_table(const std::vector<BenchResult>& results);

inline constexpr const char* kBenchCsvHeader = "method,width,C,H,W,passes,median_ms,iqr_ms,flops";
std::string report_csv(const std::vector<BenchResult>& results);
/// Parses report_csv output; throws FormatError on bad rows.
std::vector<BenchResult> read_bench_csv(const std::string& text);

}  // namespace resa
