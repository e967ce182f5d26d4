#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "oracles.hpp"
#include "resa/data.hpp"
#include "resa/image.hpp"

using namespace resa;

namespace {

std::filesystem::path temp_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() / ("resa_data_test_" + tag);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

LaneLabel random_polyline(Rng& rng, Index H, Index W, int index) {
  std::uniform_real_distribution<double> ux(-5.0, static_cast<double>(W) + 5.0);
  std::uniform_real_distribution<double> dy(0.5, 9.0);
  LaneLabel l;
  l.lane_index = index;
  double y = std::uniform_real_distribution<double>(-3.0, 10.0)(rng);
  while (y < static_cast<double>(H) + 3.0) {
    l.points.push_back({ux(rng) * 0.3 + l.points.size() * 2.0, y});
    y += dy(rng);
  }
  return l;
}

// Mean luminance on labelled lane pixels minus the mean a few pixels to the side.
double lane_contrast(const Sample& s) {
  const Index H = s.image.dim(1), W = s.image.dim(2);
  const auto t = rasterize_targets(s.lanes, H, W, 1.0, 4);
  double on = 0.0, off = 0.0;
  long n = 0;
  for (Index y = 0; y < H; ++y)
    for (Index x = 6; x < W - 6; ++x) {
      if (t.seg(y, x) == 0 || t.seg(y, x - 6) != 0) continue;
      for (Index c = 0; c < 3; ++c) {
        on += s.image[(c * H + y) * W + x];
        off += s.image[(c * H + y) * W + x - 6];
      }
      ++n;
    }
  return n ? (on - off) / (3.0 * static_cast<double>(n)) : 0.0;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("generation is seeded") {
  for (Difficulty d : {Difficulty::kNormal, Difficulty::kCrowded, Difficulty::kNoLine}) {
    const auto a = generate_sample(17, d);
    const auto b = generate_sample(17, d);
    CHECK(a.image == b.image);
    CHECK(a.lanes == b.lanes);
    CHECK(a.occlusion == b.occlusion);
    CHECK(!(generate_sample(18, d).image == a.image));
  }
  CHECK(sample_seed(5, 0) != sample_seed(5, 1));
  CHECK(sample_seed(5, 3) == sample_seed(5, 3));
}

TEST_CASE("generator contract") {
  double noline_contrast = 0.0, normal_contrast = 0.0;
  for (std::uint64_t seed = 1; seed <= 60; ++seed) {
    for (Difficulty d : {Difficulty::kNormal, Difficulty::kCrowded, Difficulty::kNoLine}) {
      const auto s = generate_sample(seed, d);
      INFO("seed " << seed << " " << to_string(d));
      CHECK(s.lanes.size() >= 2);
      CHECK(s.lanes.size() <= 4);
      CHECK(s.image.dims() == Dims{3, 96, 160});
      CHECK(s.image.flat().minCoeff() >= 0.0f);
      CHECK(s.image.flat().maxCoeff() <= 1.0f);
      for (std::size_t i = 0; i < s.lanes.size(); ++i) {
        const auto& p = s.lanes[i].points;
        if (i > 0) CHECK(s.lanes[i - 1].lane_index < s.lanes[i].lane_index);
        for (std::size_t k = 1; k < p.size(); ++k) CHECK(p[k].y > p[k - 1].y);
        for (const auto& q : p) {
          CHECK(q.x >= 0.0);
          CHECK(q.x <= 159.0);
        }
      }
      if (d == Difficulty::kCrowded) {
        CHECK(s.occluded_fraction >= 0.3);
        CHECK(s.occluded_fraction <= 0.7);
        // measured again from the mask
        const auto t = rasterize_targets(s.lanes, 96, 160, static_cast<double>(line_width_for(160)), 4);
        long lane = 0, hidden = 0;
        for (Index i = 0; i < t.seg.size(); ++i) {
          if (t.seg[i] == 0) continue;
          ++lane;
          hidden += s.occlusion[i] > 0.5f;
        }
        CHECK(static_cast<double>(hidden) / static_cast<double>(lane) == doctest::Approx(s.occluded_fraction));
      } else {
        CHECK(s.occlusion.flat().maxCoeff() == 0.0f);
      }
      if (d == Difficulty::kNoLine) {
        const double c = lane_contrast(s);
        CHECK(std::abs(c) < 0.1);
        noline_contrast += c / 60.0;
      }
      if (d == Difficulty::kNormal) normal_contrast += lane_contrast(s) / 60.0;
    }
  }
  CHECK(normal_contrast > 0.1);
  CHECK(normal_contrast > 3.0 * noline_contrast);
}

TEST_CASE("line width scales with image width") {
  CHECK(line_width_for(1640) == 30);
  CHECK(line_width_for(800) == 15);
  CHECK(line_width_for(160) == 3);
  CHECK(line_width_for(20) == 1);
}

TEST_CASE("rasterisation") {
  const auto none = rasterize_targets({}, 8, 9, 3.0, 4);
  CHECK(none.seg.flat().maxCoeff() == 0);
  CHECK(none.exist.flat().maxCoeff() == 0.0f);

  const LaneLabel vertical{{{10.0, 0.0}, {10.0, 19.0}}, 1};
  const auto t = rasterize_targets({vertical}, 20, 30, 3.0, 4);
  long count = 0;
  for (Index i = 0; i < t.seg.size(); ++i) count += t.seg[i] == 2;
  CHECK(count == 3 * 20);
  for (Index y = 0; y < 20; ++y) CHECK((t.seg(y, 9) == 2 && t.seg(y, 10) == 2 && t.seg(y, 11) == 2));
  CHECK(t.exist[1] == 1.0f);
  CHECK(t.exist[0] == 0.0f);

  // overlap goes to the lower index, whatever the input order
  const LaneLabel other{{{11.0, 0.0}, {11.0, 19.0}}, 3};
  const auto both = rasterize_targets({other, vertical}, 20, 30, 3.0, 4);
  CHECK(both.seg(5, 11) == 2);
  CHECK(both.seg(5, 12) == 4);
  CHECK(both.seg == rasterize_targets({vertical, other}, 20, 30, 3.0, 4).seg);

  CHECK_THROWS_AS(rasterize_targets({vertical, vertical}, 20, 30, 3.0, 4), DataError);
  CHECK_THROWS_AS(rasterize_targets({LaneLabel{{{1, 1}, {1, 2}}, 4}}, 20, 30, 3.0, 4), DataError);
}

TEST_CASE("lane mask matches the per-pixel oracle") {
  Rng rng(8);
  for (int t = 0; t < 200; ++t) {
    const auto lane = random_polyline(rng, 24, 40, 0);
    const double width = std::uniform_real_distribution<double>(1.0, 6.0)(rng);
    CHECK(lane_mask(lane, 24, 40, width) == oracle::lane_mask(lane, 24, 40, width));
  }
}

TEST_CASE("rasterisation is idempotent") {
  const auto s = generate_sample(4, Difficulty::kNormal);
  const auto a = rasterize_targets(s.lanes, 96, 160, 3.0, 4);
  const auto b = rasterize_targets(s.lanes, 96, 160, 3.0, 4);
  CHECK(a.seg == b.seg);
  CHECK(a.exist == b.exist);
}

TEST_CASE("tusimple labels") {
  const auto recs = parse_tusimple_labels(R"({"lanes":[[-2,10,12]],"h_samples":[100,110,120],"raw_file":"a.jpg"})");
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].raw_file == "a.jpg");
  const auto lanes = to_lane_labels(recs[0]);
  REQUIRE(lanes.size() == 1);
  CHECK(lanes[0].points == std::vector<Point>{{10, 110}, {12, 120}});

  const auto neg = parse_tusimple_labels(R"({"lanes":[[-1,4,-7.5]],"h_samples":[1,2,3],"raw_file":"c.jpg"})");
  CHECK(to_lane_labels(neg[0])[0].points == std::vector<Point>{{4, 2}});

  const auto empty = parse_tusimple_labels("{\"lanes\":[],\"h_samples\":[1,2],\"raw_file\":\"b.jpg\"}\n\n");
  REQUIRE(empty.size() == 1);
  CHECK(to_lane_labels(empty[0]).empty());

  try {
    parse_tusimple_labels("{\"lanes\":[],\"h_samples\":[],\"raw_file\":\"a\"}\n{\"lanes\":[[1,2]],\"h_samples\":[1]}\n");
    FAIL("expected an error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_tusimple_labels("not json\n"), DataError);

  const auto dir = temp_dir("tusimple");
  const std::vector<TusimpleRecord> out{{"x/1.png", {10, 20, 30}, {{-2, 5.5, 6.25}, {1, 2, -2}}},
                                        {"x/2.png", {10, 20, 30}, {}}};
  write_tusimple_labels(out, dir / "t.json");
  const auto back = read_tusimple_labels(dir / "t.json");
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].raw_file == out[i].raw_file);
    CHECK(back[i].h_samples == out[i].h_samples);
    CHECK(back[i].lanes == out[i].lanes);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("row sampling") {
  const LaneLabel l{{{10.0, 10.0}, {20.0, 20.0}, {20.0, 30.0}}, 0};
  const auto xs = sample_at_rows(l, {5, 10, 15, 25, 30, 35}, 100);
  CHECK(xs == std::vector<double>{kTusimpleAbsent, 10.0, 15.0, 20.0, 20.0, kTusimpleAbsent});
  const LaneLabel off{{{-10.0, 0.0}, {10.0, 20.0}}, 0};
  CHECK(sample_at_rows(off, {0, 5, 10, 15}, 8) == std::vector<double>{kTusimpleAbsent, kTusimpleAbsent, 0.0, 5.0});
}

TEST_CASE("culane lines") {
  const auto dir = temp_dir("culane");
  const std::vector<LaneLabel> lanes{{{{1.5, 2.0}, {3.25, 4.0}}, 0}, {{{100.123456, 7.0}, {99.0, 9.5}}, 1}};
  write_culane_lines(lanes, dir / "a.lines.txt");
  const auto back = read_culane_lines(dir / "a.lines.txt");
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].lane_index == static_cast<int>(i));
    REQUIRE(back[i].points.size() == lanes[i].points.size());
    for (std::size_t k = 0; k < back[i].points.size(); ++k) {
      CHECK(back[i].points[k].x == doctest::Approx(lanes[i].points[k].x).epsilon(1e-6));
      CHECK(back[i].points[k].y == doctest::Approx(lanes[i].points[k].y).epsilon(1e-6));
    }
  }
  write_culane_lines({}, dir / "b.lines.txt");
  CHECK(read_culane_lines(dir / "b.lines.txt").empty());
  try {
    parse_culane_lines("1 2 3 4\n1 2 3\n");
    FAIL("expected an error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_culane_lines("1 x\n"), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("png round trip") {
  auto img = generate_sample(3, Difficulty::kNormal).image;
  const auto dir = temp_dir("png");
  write_png(dir / "a.png", img);
  CHECK(read_png(dir / "a.png") == img);
  CHECK_THROWS_AS(read_png(dir / "missing.png"), DataError);
  std::ofstream(dir / "junk.png") << "nope";
  CHECK_THROWS_AS(read_png(dir / "junk.png"), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("dataset on disk") {
  const auto dir = temp_dir("set");
  GenerateOptions opt;
  opt.count = 3;
  opt.seed = 21;
  write_dataset(dir, opt);
  const auto entries = read_manifest(dir);
  REQUIRE(entries.size() == 3);
  for (const auto& e : entries) {
    CHECK(std::filesystem::exists(dir / e.image));
    CHECK(std::filesystem::exists(dir / e.label));
    CHECK(e.exist.size() == 4);
    CHECK(e.difficulty == Difficulty::kCrowded);
  }
  CHECK(std::filesystem::exists(dir / "tusimple.json"));
  CHECK(read_tusimple_labels(dir / "tusimple.json").size() == 3);

  const auto loaded = load_dataset(dir, 4);
  const auto fresh = generate_images(3, Difficulty::kCrowded, 21);
  REQUIRE(loaded.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(loaded[i].image == fresh[i].image);
    REQUIRE(loaded[i].lanes.size() == fresh[i].lanes.size());
    for (std::size_t k = 0; k < loaded[i].lanes.size(); ++k) {
      CHECK(loaded[i].lanes[k].lane_index == fresh[i].lanes[k].lane_index);
      CHECK(loaded[i].lanes[k].points.size() == fresh[i].lanes[k].points.size());
    }
  }
  std::ofstream(dir / "manifest.txt", std::ios::app) << "images/x.png\n";
  CHECK_THROWS_AS(read_manifest(dir), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("default rows") {
  CHECK(default_h_samples(10, 4) == std::vector<double>{1, 5, 9});
}

}  // TEST_SUITE
