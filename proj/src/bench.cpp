#include "resa/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "resa/random.hpp"
#include "resa/tensor_io.hpp"

namespace resa {

namespace {

double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

template <typename F>
std::vector<double> time_runs(F&& fn, int warmup, int runs) {
  for (int i = 0; i < warmup; ++i) fn();
  std::vector<double> ms;
  ms.reserve(static_cast<std::size_t>(runs));
  for (int i = 0; i < runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return ms;
}

Index horizontal_directions(const std::vector<Direction>& dirs) {
  return std::count_if(dirs.begin(), dirs.end(), [](Direction d) { return axis_of(d) == Axis::kHorizontal; });
}

}  // namespace

FeatureSize parse_feature_size(const std::string& text) {
  FeatureSize s;
  char x1 = 0;
  char x2 = 0;
  std::istringstream is(text);
  if (!(is >> s.channels >> x1 >> s.height >> x2 >> s.width) || x1 != 'x' || x2 != 'x' || !is.eof() ||
      s.channels <= 0 || s.height <= 0 || s.width <= 0) {
    throw std::invalid_argument("feature size '" + text + "' is not CxHxW");
  }
  return s;
}

double pass_flops(Index batch, const FeatureSize& size, Index kernel_width) {
  return static_cast<double>(batch) * static_cast<double>(size.channels) * static_cast<double>(size.channels) *
         static_cast<double>(kernel_width) * static_cast<double>(size.height) * static_cast<double>(size.width);
}

std::pair<double, double> median_iqr(std::vector<double> samples) {
  if (samples.empty()) return {0.0, 0.0};
  std::sort(samples.begin(), samples.end());
  return {quantile(samples, 0.5), quantile(samples, 0.75) - quantile(samples, 0.25)};
}

std::vector<BenchResult> run_bench(const BenchConfig& cfg, std::ostream* progress) {
  if (cfg.warmup < 0 || cfg.runs < 1) throw std::invalid_argument("bench needs runs >= 1 and warmup >= 0");
  for (const auto& m : cfg.methods) {
    if (m != "resa" && m != "scnn_seq") throw std::invalid_argument("unknown bench method '" + m + "'");
  }
  std::vector<BenchResult> out;
  for (const FeatureSize& size : cfg.sizes) {
    for (Index w : cfg.widths) {
      Rng rng(cfg.seed);
      const Tensor<float> x = random_uniform<float>({1, size.channels, size.height, size.width}, rng);
      ResaConfig rc;
      rc.iterations = cfg.iterations;
      rc.kernel_width = w;
      const ResaParams<float> params = make_resa_params<float>(size.channels, rc, rng);
      std::vector<ConvKernel<float>> seq_kernels;
      for (const auto& per_dir : params.kernels) seq_kernels.push_back(per_dir.front());
      const double one_pass = pass_flops(1, size, w);
      const Index hdirs = std::max<Index>(1, horizontal_directions(rc.directions));
      const auto dirs = static_cast<double>(rc.directions.size());

      auto record = [&](const std::string& method, const std::vector<double>& ms, const PassCounters& counters,
                        double flops) {
        BenchResult r;
        r.method = method;
        r.kernel_width = w;
        r.size = size;
        r.iterations = method == "scnn_seq" ? 1 : cfg.iterations;
        r.counters = counters;
        r.passes = counters.horizontal / hdirs;
        std::tie(r.median_ms, r.iqr_ms) = median_iqr(ms);
        r.flops = flops;
        if (progress) {
          *progress << method << " w=" << w << ' ' << size.channels << 'x' << size.height << 'x' << size.width
                    << ": median " << std::fixed << std::setprecision(2) << r.median_ms << " ms" << std::endl;
        }
        out.push_back(std::move(r));
      };

      for (const auto& method : cfg.methods) {
        PassCounters counters;
        if (method == "resa") {
          resa_forward<float>(x, params, nullptr, {1, &counters});
          const auto ms = time_runs([&] { resa_forward(x, params); }, cfg.warmup, cfg.runs);
          record("resa", ms, counters, dirs * cfg.iterations * one_pass);
          if (cfg.threads > 1) {
            const ResaExecution par{cfg.threads, nullptr};
            const auto pms = time_runs([&] { resa_forward<float>(x, params, nullptr, par); }, cfg.warmup, cfg.runs);
            record("resa_parallel", pms, counters, dirs * cfg.iterations * one_pass);
          }
        } else {
          scnn_forward(x, rc.directions, seq_kernels, &counters);
          const auto ms = time_runs([&] { scnn_forward(x, rc.directions, seq_kernels); }, cfg.warmup, cfg.runs);
          record("scnn_seq", ms, counters, dirs * one_pass);
        }
      }
    }
  }
  return out;
}

std::string report_table(const std::vector<BenchResult>& results) {
  struct Row {
    double resa = -1.0;
    double scnn = -1.0;
    Index resa_passes = 0;
    Index scnn_passes = 0;
  };
  using Key = std::tuple<Index, Index, Index, Index>;
  std::map<Key, Row> rows;
  for (const auto& r : results) {
    Row& row = rows[{r.kernel_width, r.size.channels, r.size.height, r.size.width}];
    if (r.method == "resa") {
      row.resa = r.median_ms;
      row.resa_passes = r.passes;
    } else if (r.method == "scnn_seq") {
      row.scnn = r.median_ms;
      row.scnn_passes = r.passes;
    }
  }
  std::ostringstream os;
  os << std::left << std::setw(6) << "width" << std::setw(14) << "size" << std::right << std::setw(12) << "resa_ms"
     << std::setw(8) << "passes" << std::setw(12) << "scnn_ms" << std::setw(8) << "passes" << std::setw(10) << "speedup"
     << '\n';
  os << std::fixed << std::setprecision(3);
  for (const auto& [key, row] : rows) {
    const auto [w, c, h, wd] = key;
    std::ostringstream size;
    size << c << 'x' << h << 'x' << wd;
    os << std::left << std::setw(6) << w << std::setw(14) << size.str() << std::right;
    if (row.resa >= 0) os << std::setw(12) << row.resa << std::setw(8) << row.resa_passes;
    else os << std::setw(12) << "-" << std::setw(8) << "-";
    if (row.scnn >= 0) os << std::setw(12) << row.scnn << std::setw(8) << row.scnn_passes;
    else os << std::setw(12) << "-" << std::setw(8) << "-";
    if (row.resa > 0 && row.scnn >= 0) os << std::setw(10) << row.scnn / row.resa;
    else os << std::setw(10) << "-";
    os << '\n';
  }
  for (const auto& r : results) {
    if (r.method != "resa_parallel") continue;
    os << "parallel resa w=" << r.kernel_width << ' ' << r.size.channels << 'x' << r.size.height << 'x' << r.size.width
       << ": " << r.median_ms << " ms\n";
  }
  return os.str();
}

std::string report_csv(const std::vector<BenchResult>& results) {
  std::ostringstream os;
  os << kBenchCsvHeader << '\n' << std::setprecision(17);
  for (const auto& r : results) {
    os << r.method << ',' << r.kernel_width << ',' << r.size.channels << ',' << r.size.height << ',' << r.size.width
       << ',' << r.passes << ',' << r.median_ms << ',' << r.iqr_ms << ',' << r.flops << '\n';
  }
  return os.str();
}

std::vector<BenchResult> read_bench_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kBenchCsvHeader) throw FormatError("bench CSV header mismatch");
  std::vector<BenchResult> out;
  int number = 1;
  while (std::getline(is, line)) {
    ++number;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 9) throw FormatError("bench CSV line " + std::to_string(number) + ": expected 9 fields");
    try {
      BenchResult r;
      r.method = f[0];
      r.kernel_width = std::stoll(f[1]);
      r.size = {std::stoll(f[2]), std::stoll(f[3]), std::stoll(f[4])};
      r.passes = std::stoll(f[5]);
      r.median_ms = std::stod(f[6]);
      r.iqr_ms = std::stod(f[7]);
      r.flops = std::stod(f[8]);
      out.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw FormatError("bench CSV line " + std::to_string(number) + ": bad number");
    }
  }
  return out;
}

}  // namespace resa
