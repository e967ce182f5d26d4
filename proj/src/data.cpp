#include "resa/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include "json.hpp"
#include <sstream>

#include "resa/image.hpp"
#include "resa/random.hpp"

namespace resa {

namespace {

std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

double round3(double v) { return std::round(v * 1000.0) / 1000.0; }

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

// Road geometry shared by every lane of a scene: all lanes converge on the
// vanishing point and bend with a common curvature term.
struct Road {
  double horizon;
  double top;  // first labelled row
  double vanish_x;
  double center_x;
  double spacing;
  double curvature;
  Index height;

  double depth(double y) const { return (y - horizon) / (static_cast<double>(height - 1) - horizon); }
  double x_at(double slot, double y) const {
    const double t = depth(y);
    const double bottom = center_x + (slot - 1.5) * spacing;
    return vanish_x + (bottom - vanish_x) * t + curvature * t * (1.0 - t);
  }
};

struct Box {
  double x0, y0, x1, y1;
  Rgb color;
};

void paint_box(Tensor<float>& image, Tensor<float>& mask, const Box& b, Rng& rng) {
  const Index h = image.dim(1);
  const Index w = image.dim(2);
  const Index ya = std::max<Index>(0, static_cast<Index>(std::ceil(b.y0)));
  const Index yb = std::min<Index>(h - 1, static_cast<Index>(std::floor(b.y1)));
  const Index xa = std::max<Index>(0, static_cast<Index>(std::ceil(b.x0)));
  const Index xb = std::min<Index>(w - 1, static_cast<Index>(std::floor(b.x1)));
  const double glass_lo = b.y0 + 0.15 * (b.y1 - b.y0);
  const double glass_hi = b.y0 + 0.4 * (b.y1 - b.y0);
  for (Index y = ya; y <= yb; ++y) {
    for (Index x = xa; x <= xb; ++x) {
      Rgb c = b.color;
      if (y >= glass_lo && y <= glass_hi) c = {0.12f, 0.14f, 0.18f};
      const float n = static_cast<float>(uniform(rng, -0.02, 0.02));
      blend_pixel(image, y, x, {c[0] + n, c[1] + n, c[2] + n});
      mask(y, x) = 1.0f;
    }
  }
}

double covered_share(const std::vector<Index>& lane_pixels, const Tensor<float>& mask) {
  if (lane_pixels.empty()) return 0.0;
  Index hits = 0;
  for (Index p : lane_pixels) hits += mask[p] > 0.5f;
  return static_cast<double>(hits) / static_cast<double>(lane_pixels.size());
}

}  // namespace

std::uint64_t sample_seed(std::uint64_t base, std::uint64_t index) {
  // splitmix64 finaliser over the pair
  std::uint64_t z = base * 0x9E3779B97F4A7C15ULL + index + 1;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Index line_width_for(Index image_width) {
  return std::max<Index>(1, std::lround(30.0 * static_cast<double>(image_width) / 1640.0));
}

std::vector<std::uint8_t> lane_mask(const LaneLabel& lane, Index height, Index width, double line_width) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(height * width), 0);
  const auto& p = lane.points;
  if (p.empty()) return mask;
  const Index y_first = std::max<Index>(0, static_cast<Index>(std::ceil(p.front().y)));
  const Index y_last = std::min<Index>(height - 1, static_cast<Index>(std::floor(p.back().y)));
  std::size_t seg = 0;
  for (Index y = y_first; y <= y_last; ++y) {
    const double yd = static_cast<double>(y);
    double xc = p.front().x;
    double slope = 0.0;
    if (p.size() > 1) {
      while (seg + 2 < p.size() && p[seg + 1].y < yd) ++seg;
      const Point& a = p[seg];
      const Point& b = p[seg + 1];
      slope = (b.x - a.x) / (b.y - a.y);
      xc = a.x + slope * (yd - a.y);
    }
    const double half = 0.5 * line_width * std::sqrt(1.0 + slope * slope);
    const Index j0 = std::max<Index>(0, static_cast<Index>(std::ceil(xc - half)));
    const Index j1 = std::min<Index>(width - 1, static_cast<Index>(std::ceil(xc + half)) - 1);
    for (Index j = j0; j <= j1; ++j) mask[static_cast<std::size_t>(y * width + j)] = 1;
  }
  return mask;
}

Targets rasterize_targets(const std::vector<LaneLabel>& lanes, Index height, Index width, double line_width,
                          Index num_lanes) {
  Targets t{Tensor<std::int32_t>({height, width}), Tensor<float>({num_lanes})};
  std::vector<const LaneLabel*> order;
  for (const auto& lane : lanes) {
    if (lane.lane_index < 0 || lane.lane_index >= num_lanes) {
      throw DataError("lane index " + std::to_string(lane.lane_index) + " outside [0," + std::to_string(num_lanes) + ")");
    }
    if (t.exist[lane.lane_index] != 0.0f) throw DataError("duplicate lane index " + std::to_string(lane.lane_index));
    t.exist[lane.lane_index] = 1.0f;
    order.push_back(&lane);
  }
  // Paint higher indices first so lower ones overwrite shared pixels.
  std::sort(order.begin(), order.end(), [](const LaneLabel* a, const LaneLabel* b) { return a->lane_index > b->lane_index; });
  for (const LaneLabel* lane : order) {
    const auto mask = lane_mask(*lane, height, width, line_width);
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i]) t.seg[static_cast<Index>(i)] = lane->lane_index + 1;
  }
  return t;
}

Sample generate_sample(std::uint64_t seed, Difficulty difficulty, const SceneOptions& opt) {
  if (opt.num_lanes != 4) throw DataError("the scene generator draws exactly four lane slots");
  const Index H = opt.height;
  const Index W = opt.width;
  Rng rng(seed);
  const double Wd = static_cast<double>(W);

  Road road;
  road.height = H;
  road.horizon = static_cast<double>(H) * uniform(rng, 0.30, 0.40);
  road.top = road.horizon + 0.06 * static_cast<double>(H);
  road.vanish_x = Wd * (0.5 + uniform(rng, -0.1, 0.1));
  road.center_x = Wd * (0.5 + uniform(rng, -0.08, 0.08));
  road.spacing = Wd * uniform(rng, 0.38, 0.48);
  road.curvature = uniform(rng, 0.0, 1.0) < 0.5 ? 0.0 : Wd * uniform(rng, -0.25, 0.25);

  static const std::vector<std::vector<int>> kSlotSets{{1, 2}, {0, 1, 2}, {1, 2, 3}, {0, 1, 2, 3}};
  const auto& slots = kSlotSets[std::uniform_int_distribution<std::size_t>(0, kSlotSets.size() - 1)(rng)];

  Sample s;
  s.difficulty = difficulty;
  s.image = Tensor<float>({3, H, W});
  s.occlusion = Tensor<float>({H, W});

  // Background: sky above the horizon, textured asphalt below.
  const double road_gray = uniform(rng, 0.25, 0.45);
  const double wave_phase = uniform(rng, 0.0, 6.283);
  const double wave_freq = uniform(rng, 0.05, 0.15);
  const Rgb sky{static_cast<float>(uniform(rng, 0.5, 0.65)), static_cast<float>(uniform(rng, 0.6, 0.72)),
                static_cast<float>(uniform(rng, 0.72, 0.9))};
  for (Index y = 0; y < H; ++y) {
    for (Index x = 0; x < W; ++x) {
      const double n = uniform(rng, -0.04, 0.04);
      Rgb c;
      if (static_cast<double>(y) < road.horizon) {
        c = {sky[0] + static_cast<float>(n * 0.5), sky[1] + static_cast<float>(n * 0.5), sky[2] + static_cast<float>(n * 0.5)};
      } else {
        const double v = road_gray + n + 0.03 * std::sin(wave_freq * static_cast<double>(x + 2 * y) + wave_phase);
        c = {static_cast<float>(v), static_cast<float>(v), static_cast<float>(v * 1.02)};
      }
      blend_pixel(s.image, y, x, c);
    }
  }

  // Lane paint.
  const bool faint = difficulty == Difficulty::kNoLine;
  for (int slot : slots) {
    Rgb paint;
    if (faint) {
      const float d = static_cast<float>(uniform(rng, 0.04, 0.08));
      const float g = static_cast<float>(road_gray);
      paint = {g + d, g + d, g + d};
    } else if (uniform(rng, 0.0, 1.0) < 0.2) {
      paint = {0.9f, 0.8f, 0.3f};
    } else {
      const float b = static_cast<float>(uniform(rng, 0.78, 0.95));
      paint = {b, b, b};
    }
    const bool dashed = (slot == 1 || slot == 2) && uniform(rng, 0.0, 1.0) < 0.6;
    const double dash_phase = uniform(rng, 0.0, 1.0);
    for (Index y = static_cast<Index>(std::ceil(road.top)); y < H; ++y) {
      const double yd = static_cast<double>(y);
      const double t = road.depth(yd);
      if (dashed) {
        const double u = 4.0 / (t + 0.12) + dash_phase;
        if (u - std::floor(u) > 0.55) continue;
      }
      const double xc = road.x_at(slot, yd);
      const double slope = (road.x_at(slot, yd + 0.5) - road.x_at(slot, yd - 0.5));
      const double half = 0.5 * std::max(0.7, 3.2 * t) * std::sqrt(1.0 + slope * slope);
      for (Index x = static_cast<Index>(std::floor(xc - half - 1)); x <= static_cast<Index>(std::ceil(xc + half + 1)); ++x) {
        const double cover = std::clamp(half + 0.5 - std::abs(static_cast<double>(x) - xc), 0.0, 1.0);
        if (cover > 0.0) blend_pixel(s.image, y, x, paint, static_cast<float>(cover));
      }
    }
  }

  // Labels: every other row from the first labelled row down, while on-image.
  for (int slot : slots) {
    LaneLabel lane;
    lane.lane_index = slot;
    const Index first = static_cast<Index>(std::ceil(road.top));
    for (Index y = first + ((H - 1 - first) % 2); y < H; y += 2) {
      const double x = road.x_at(slot, static_cast<double>(y));
      if (x < 0.0 || x > Wd - 1.0) {
        if (!lane.points.empty()) break;
        continue;
      }
      lane.points.push_back({round3(x), static_cast<double>(y)});
    }
    if (lane.points.size() >= 4) s.lanes.push_back(std::move(lane));
  }

  if (difficulty == Difficulty::kCrowded) {
    const Targets targets = rasterize_targets(s.lanes, H, W, static_cast<double>(line_width_for(W)), opt.num_lanes);
    std::vector<Index> lane_pixels;
    for (Index i = 0; i < targets.seg.size(); ++i)
      if (targets.seg[i] > 0) lane_pixels.push_back(i);

    const double goal = uniform(rng, 0.35, 0.6);
    std::vector<Box> boxes;
    Tensor<float> trial = s.occlusion;
    auto propose = [&](double slot_jitter, double t_lo) {
      const LaneLabel& lane = s.lanes[std::uniform_int_distribution<std::size_t>(0, s.lanes.size() - 1)(rng)];
      const double slot = lane.lane_index + uniform(rng, -slot_jitter, slot_jitter);
      const double t = uniform(rng, t_lo, 1.0);
      const double y1 = road.horizon + t * (static_cast<double>(H - 1) - road.horizon);
      const double cx = road.x_at(slot, y1);
      const double bw = road.spacing * t * uniform(rng, 0.45, 0.8);
      const double bh = bw * uniform(rng, 0.5, 0.8);
      const bool dark = uniform(rng, 0.0, 1.0) < 0.5;
      const Rgb color = dark ? Rgb{static_cast<float>(uniform(rng, 0.03, 0.2)), static_cast<float>(uniform(rng, 0.03, 0.2)),
                                   static_cast<float>(uniform(rng, 0.03, 0.2))}
                             : Rgb{static_cast<float>(uniform(rng, 0.3, 0.95)), static_cast<float>(uniform(rng, 0.1, 0.9)),
                                   static_cast<float>(uniform(rng, 0.1, 0.9))};
      return Box{cx - bw / 2, y1 - bh, cx + bw / 2, y1, color};
    };
    auto share_with = [&](const Box& b) {
      Tensor<float> m = s.occlusion;
      Tensor<float> dummy({3, H, W});
      Rng scratch(0);
      paint_box(dummy, m, b, scratch);
      return std::pair{covered_share(lane_pixels, m), m};
    };
    double share = 0.0;
    for (int attempt = 0; attempt < 400 && share < goal; ++attempt) {
      const Box b = attempt < 300 ? propose(0.35, 0.25) : propose(0.0, 0.5);
      auto [next, m] = share_with(b);
      if (next > 0.7 || next <= share) continue;
      share = next;
      s.occlusion = std::move(m);
      boxes.push_back(b);
    }
    std::sort(boxes.begin(), boxes.end(), [](const Box& a, const Box& b) { return a.y1 < b.y1; });
    Tensor<float> painted({H, W});
    for (const Box& b : boxes) paint_box(s.image, painted, b, rng);
    s.occluded_fraction = share;
  }

  quantize_8bit(s.image);
  return s;
}

// --- CULane ---

void write_culane_lines(const std::vector<LaneLabel>& lanes, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << std::fixed << std::setprecision(6);
  for (const auto& lane : lanes) {
    for (std::size_t i = 0; i < lane.points.size(); ++i) {
      if (i) os << ' ';
      os << lane.points[i].x << ' ' << lane.points[i].y;
    }
    os << '\n';
  }
}

std::vector<LaneLabel> parse_culane_lines(const std::string& text) {
  std::vector<LaneLabel> lanes;
  std::istringstream is(text);
  std::string line;
  int number = 0;
  while (std::getline(is, line)) {
    ++number;
    std::istringstream ls(line);
    std::vector<double> values;
    std::string token;
    while (ls >> token) {
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
      if (ec != std::errc() || ptr != token.data() + token.size()) {
        throw DataError("line " + std::to_string(number) + ": bad number '" + token + "'");
      }
      values.push_back(v);
    }
    if (values.empty()) continue;
    if (values.size() % 2) throw DataError("line " + std::to_string(number) + ": odd number of coordinates");
    LaneLabel lane;
    lane.lane_index = static_cast<int>(lanes.size());
    for (std::size_t i = 0; i < values.size(); i += 2) lane.points.push_back({values[i], values[i + 1]});
    // The public files list points bottom-up; store them top-down.
    if (lane.points.size() > 1 && lane.points.front().y > lane.points.back().y)
      std::reverse(lane.points.begin(), lane.points.end());
    for (std::size_t i = 1; i < lane.points.size(); ++i) {
      if (!(lane.points[i].y > lane.points[i - 1].y)) {
        throw DataError("line " + std::to_string(number) + ": y values are not strictly monotone");
      }
    }
    lanes.push_back(std::move(lane));
  }
  return lanes;
}

std::vector<LaneLabel> read_culane_lines(const std::filesystem::path& path) {
  try {
    return parse_culane_lines(read_text(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// --- Tusimple ---

std::vector<TusimpleRecord> parse_tusimple_labels(const std::string& text) {
  std::vector<TusimpleRecord> out;
  std::istringstream is(text);
  std::string line;
  int number = 0;
  while (std::getline(is, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(number) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + "invalid JSON (" + e.what() + ")");
    }
    try {
      TusimpleRecord r;
      r.raw_file = j.at("raw_file").get<std::string>();
      r.h_samples = j.at("h_samples").get<std::vector<double>>();
      r.lanes = j.at("lanes").get<std::vector<std::vector<double>>>();
      for (const auto& lane : r.lanes) {
        if (lane.size() != r.h_samples.size()) {
          throw DataError(where + "lane has " + std::to_string(lane.size()) + " entries for " +
                          std::to_string(r.h_samples.size()) + " h_samples");
        }
      }
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + e.what());
    }
  }
  return out;
}

std::vector<TusimpleRecord> read_tusimple_labels(const std::filesystem::path& path) {
  try {
    return parse_tusimple_labels(read_text(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_tusimple_labels(const std::vector<TusimpleRecord>& records, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  for (const auto& r : records) {
    nlohmann::json j;
    j["lanes"] = r.lanes;
    j["h_samples"] = r.h_samples;
    j["raw_file"] = r.raw_file;
    os << j.dump() << '\n';
  }
}

std::vector<LaneLabel> to_lane_labels(const TusimpleRecord& record) {
  std::vector<LaneLabel> out;
  for (std::size_t i = 0; i < record.lanes.size(); ++i) {
    LaneLabel lane;
    lane.lane_index = static_cast<int>(i);
    for (std::size_t k = 0; k < record.h_samples.size(); ++k) {
      if (record.lanes[i][k] >= 0.0) lane.points.push_back({record.lanes[i][k], record.h_samples[k]});
    }
    if (!lane.points.empty()) out.push_back(std::move(lane));
  }
  return out;
}

std::vector<double> sample_at_rows(const LaneLabel& lane, const std::vector<double>& h_samples, Index image_width) {
  std::vector<double> xs(h_samples.size(), kTusimpleAbsent);
  const auto& p = lane.points;
  if (p.empty()) return xs;
  for (std::size_t k = 0; k < h_samples.size(); ++k) {
    const double y = h_samples[k];
    if (y < p.front().y || y > p.back().y) continue;
    double x = p.front().x;
    for (std::size_t i = 0; i + 1 < p.size(); ++i) {
      if (y <= p[i + 1].y) {
        x = p[i].x + (p[i + 1].x - p[i].x) * (y - p[i].y) / (p[i + 1].y - p[i].y);
        break;
      }
    }
    if (x >= 0.0 && x < static_cast<double>(image_width)) xs[k] = x;
  }
  return xs;
}

std::vector<double> default_h_samples(Index height, Index step) {
  std::vector<double> rows;
  for (Index y = height - 1; y >= 0; y -= step) rows.push_back(static_cast<double>(y));
  std::reverse(rows.begin(), rows.end());
  return rows;
}

// --- datasets ---

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir) {
  const std::string text = read_text(dir / "manifest.txt");
  std::istringstream is(text);
  std::string line;
  int number = 0;
  std::vector<ManifestEntry> out;
  while (std::getline(is, line)) {
    ++number;
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty() || tok.front().starts_with('#')) continue;
    if (tok.size() < 4) throw DataError("manifest line " + std::to_string(number) + ": too few fields");
    ManifestEntry e;
    e.image = tok[0];
    e.label = tok[1];
    for (std::size_t i = 2; i + 1 < tok.size(); ++i) {
      if (tok[i] != "0" && tok[i] != "1") {
        throw DataError("manifest line " + std::to_string(number) + ": existence flag '" + tok[i] + "'");
      }
      e.exist.push_back(tok[i] == "1");
    }
    try {
      e.difficulty = parse_difficulty(tok.back());
    } catch (const std::invalid_argument& ex) {
      throw DataError("manifest line " + std::to_string(number) + ": " + ex.what());
    }
    out.push_back(std::move(e));
  }
  return out;
}

void write_dataset(const std::filesystem::path& dir, const GenerateOptions& opt) {
  if (opt.count < 0) throw DataError("sample count must be non-negative");
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "labels");
  const std::vector<double> rows = opt.h_samples.empty() ? default_h_samples(opt.scene.height) : opt.h_samples;
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw DataError("cannot write " + (dir / "manifest.txt").string());
  std::vector<TusimpleRecord> records;
  for (int i = 0; i < opt.count; ++i) {
    const Sample s = generate_sample(sample_seed(opt.seed, static_cast<std::uint64_t>(i)), opt.difficulty, opt.scene);
    std::ostringstream stem;
    stem << std::setw(6) << std::setfill('0') << i;
    const std::string image = "images/" + stem.str() + ".png";
    const std::string label = "labels/" + stem.str() + ".lines.txt";
    write_png(dir / image, s.image);
    write_culane_lines(s.lanes, dir / label);
    std::vector<int> exist(static_cast<std::size_t>(opt.scene.num_lanes), 0);
    TusimpleRecord rec{image, rows, {}};
    for (const auto& lane : s.lanes) {
      exist[static_cast<std::size_t>(lane.lane_index)] = 1;
      rec.lanes.push_back(sample_at_rows(lane, rows, opt.scene.width));
    }
    records.push_back(std::move(rec));
    manifest << image << ' ' << label;
    for (int e : exist) manifest << ' ' << e;
    manifest << ' ' << to_string(s.difficulty) << '\n';
  }
  write_tusimple_labels(records, dir / "tusimple.json");
}

std::vector<LabelledImage> load_dataset(const std::filesystem::path& dir, Index num_lanes) {
  std::vector<LabelledImage> out;
  for (const auto& e : read_manifest(dir)) {
    if (static_cast<Index>(e.exist.size()) != num_lanes) {
      throw DataError("manifest entry " + e.image + " has " + std::to_string(e.exist.size()) + " existence flags, expected " +
                      std::to_string(num_lanes));
    }
    LabelledImage li;
    li.image = read_png(dir / e.image);
    li.lanes = read_culane_lines(dir / e.label);
    li.difficulty = e.difficulty;
    std::vector<int> slots;
    for (std::size_t k = 0; k < e.exist.size(); ++k)
      if (e.exist[k]) slots.push_back(static_cast<int>(k));
    if (slots.size() != li.lanes.size()) {
      throw DataError(e.label + " holds " + std::to_string(li.lanes.size()) + " lanes but the manifest flags " +
                      std::to_string(slots.size()));
    }
    for (std::size_t k = 0; k < slots.size(); ++k) li.lanes[k].lane_index = slots[k];
    out.push_back(std::move(li));
  }
  return out;
}

std::vector<LabelledImage> generate_images(int count, Difficulty difficulty, std::uint64_t seed, const SceneOptions& opt) {
  std::vector<LabelledImage> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) {
    Sample s = generate_sample(sample_seed(seed, static_cast<std::uint64_t>(i)), difficulty, opt);
    out.push_back({std::move(s.image), std::move(s.lanes), difficulty});
  }
  return out;
}

}  // namespace resa
