// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance --criterion N      (N in 1..9, or 0 for all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "CLI11.hpp"
#include "../oracles.hpp"
#include "resa/bench.hpp"
#include "resa/commands.hpp"
#include "resa/gradcheck.hpp"
#include "resa/train.hpp"

using namespace resa;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

bool report(int n, const char* title, const Verdict& v, double secs, double budget_s) {
  const bool in_time = secs < budget_s;
  const bool ok = v.pass && in_time;
  std::cout << "criterion " << n << " [" << title << "]: " << (ok ? "PASS" : "FAIL") << "  (" << std::fixed
            << std::setprecision(3) << secs << " s, budget " << budget_s << " s" << (in_time ? "" : ", OVER BUDGET")
            << ")  " << v.detail << std::endl;
  return ok;
}

std::string join(const std::vector<Index>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

int ceil_log2(Index L) {
  int k = 0;
  while ((Index{1} << k) < L) ++k;
  return k;
}

// --- 1: stride schedule ---
Verdict schedules() {
  const auto a = compute_stride_schedule(8, 3).strides;
  const auto b = compute_stride_schedule(16, 4).strides;
  const bool ok = a == std::vector<Index>{1, 2, 4} && b == std::vector<Index>{1, 2, 4, 8};
  return {ok, "(8,3)=[" + join(a) + "] (16,4)=[" + join(b) + "]"};
}

std::vector<std::set<Index>> support_sets(Index L, int K, StridePolicy policy) {
  std::vector<std::set<Index>> out;
  for (const auto& row : impulse_support(L, K, policy)) {
    std::set<Index> s;
    for (Index i = 0; i < L; ++i)
      if (row[static_cast<std::size_t>(i)]) s.insert(i);
    out.push_back(s);
  }
  return out;
}

// --- 2: receptive-field coverage ---
Verdict coverage() {
  bool ok = true;
  std::ostringstream msg;
  std::vector<Index> floor_gaps;
  int partial_cases = 0;
  for (Index L = 4; L <= 64; ++L) {
    const int K = ceil_log2(L);
    // full coverage in ceil(log2 L) iterations with doubling strides 1,2,..,2^(K-1)
    const auto full = support_sets(L, K, StridePolicy::kPowersOfTwo);
    if (static_cast<Index>(full.back().size()) != L) {
      ok = false;
      msg << " pow2 L=" << L << " covers " << full.back().size();
    }
    const auto fl = support_sets(L, K, StridePolicy::kFloorDivision);
    if (static_cast<Index>(fl.back().size()) != L) floor_gaps.push_back(L);
    for (int k = 1; k <= K; ++k) {
      for (StridePolicy policy : {StridePolicy::kFloorDivision, StridePolicy::kPowersOfTwo}) {
        const auto got = support_sets(L, k, policy);
        const auto want = oracle::reachable(L, oracle::strides(L, k, policy));
        ++partial_cases;
        if (got != want) {
          ok = false;
          msg << " L=" << L << " K=" << k << " support differs from reachability";
        }
      }
    }
  }
  msg << " L=4..64 full with doubling strides; " << partial_cases << " (L,K,policy) supports equal brute force";
  if (!floor_gaps.empty()) msg << "; floor-division schedule leaves gaps at " << floor_gaps.size() << " non-power-of-two L (info)";
  return {ok, msg.str()};
}

// --- 3: optimized aggregator against the unrolled loop ---
Verdict oracle_equivalence() {
  Rng rng(20240603);
  double worst = 0.0;
  std::ostringstream msg;
  const char* dir_sets[] = {"DULR", "D", "U", "L", "R", "UR", "LRDU", "RLUD"};
  for (int t = 0; t < 20; ++t) {
    auto pick = [&](Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(rng); };
    const Index C = pick(1, 4), H = pick(2, 16), W = pick(2, 16), N = pick(1, 2);
    ResaConfig cfg;
    cfg.directions = parse_directions(dir_sets[pick(0, 7)]);
    cfg.iterations = static_cast<int>(pick(1, 4));
    cfg.kernel_width = 2 * pick(0, 3) + 1;
    cfg.fusion = pick(0, 1) ? Fusion::kMax : Fusion::kAdd;
    cfg.stride_policy = pick(0, 1) ? StridePolicy::kPowersOfTwo : StridePolicy::kFloorDivision;
    const ResaParams<double> p = make_resa_params<double>(C, cfg, rng);
    const Tensor<double> x = random_uniform<double>({N, C, H, W}, rng);
    const double d = max_abs_diff(resa_forward(x, p), oracle::resa(x, p));
    worst = std::max(worst, d);
  }
  msg << "20 configs, max |diff| " << std::scientific << std::setprecision(2) << worst << " (tol 1e-6)";
  return {worst < 1e-6, msg.str()};
}

// --- 4: finite-difference gradient checks ---
Verdict gradchecks() {
  bool ok = true;
  int checks = 0;
  double worst_op = 0.0, worst_model = 0.0;
  std::ostringstream fails;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    for (const auto& r : run_gradcheck_scope("all", seed)) {
      ++checks;
      const bool model = r.name.rfind("model", 0) == 0;
      (model ? worst_model : worst_op) = std::max(model ? worst_model : worst_op, r.rel_error);
      // per-op tolerance 1e-5 (loss 1e-6), end-to-end 1e-4
      if (!r.passed() || r.tolerance > (model ? 1e-4 : 1e-5)) {
        ok = false;
        fails << " " << r.name << "@" << seed;
      }
    }
  }
  std::ostringstream msg;
  msg << checks << " checks over 3 seeds, worst per-op " << std::scientific << std::setprecision(2) << worst_op
      << " (tol 1e-5), worst end-to-end " << worst_model << " (tol 1e-4)";
  if (!ok) msg << "; failed:" << fails.str();
  return {ok, msg.str()};
}

// --- 5: pass counts and wall time ---
Verdict complexity() {
  std::ostringstream msg;
  bool counts_ok = true;
  for (Index W : {Index{50}, Index{100}, Index{200}}) {
    BenchConfig c;
    c.widths = {9};
    c.sizes = {{8, 8, W}};
    c.warmup = 0;
    c.runs = 1;
    for (const auto& r : run_bench(c)) {
      const Index want = r.method == "resa" ? c.iterations : W;
      if (r.passes != want) counts_ok = false;
      msg << r.method << "(W=" << W << ")=" << r.passes << " ";
    }
  }
  BenchConfig c;
  c.widths = {9};
  c.sizes = {{128, 36, 50}, {128, 36, 100}, {128, 36, 200}};
  c.warmup = 1;
  c.runs = 5;
  const auto results = run_bench(c);
  auto median = [&](const char* method, Index W) {
    for (const auto& r : results)
      if (r.method == method && r.size.width == W) return r.median_ms;
    return -1.0;
  };
  const double resa100 = median("resa", 100), scnn100 = median("scnn_seq", 100);
  const double sp50 = median("scnn_seq", 50) / median("resa", 50);
  const double sp200 = median("scnn_seq", 200) / median("resa", 200);
  const bool faster = resa100 < scnn100;
  const bool trend = sp200 > sp50;
  msg << std::fixed << std::setprecision(1) << "| C128 H36 W100 w9: resa " << resa100 << " ms vs scnn_seq " << scnn100
      << " ms (" << (faster ? "ok" : "resa slower") << "); speedup W=50 " << std::setprecision(3) << sp50
      << ", W=200 " << sp200 << " (" << (trend ? "ok" : "not increasing") << ")";
  if (!counts_ok) msg << "; pass counts wrong";
  return {counts_ok && faster && trend, msg.str()};
}

// --- 6: four-arm training study ---
struct StudyOptions {
  int iterations = 1500;
  int seeds = 3;
  int train = 500;
  int val = 100;
  double lr = 0.2;
  std::vector<Index> channels{8, 16, 32};
};

Verdict training_study(const StudyOptions& so) {
  struct Arm {
    const char* name;
    DecoderKind decoder;
    bool use_resa;
  };
  const Arm arms[] = {{"baseline", DecoderKind::kBilinear, false},
                      {"baseline+BUSD", DecoderKind::kBusd, false},
                      {"baseline+RESA", DecoderKind::kBilinear, true},
                      {"full", DecoderKind::kBusd, true}};
  ModelConfig base;
  base.height = 96;
  base.width = 160;
  base.encoder_channels = so.channels;
  base.total_iters = so.iterations;
  base.lr = so.lr;
  base.warmup_batches = std::min(base.warmup_batches, so.iterations / 3);
  const SceneOptions scene{base.height, base.width, base.num_lanes};
  const auto train = make_examples(generate_images(so.train, Difficulty::kCrowded, 5000, scene), base);
  const auto val = make_examples(generate_images(so.val, Difficulty::kCrowded, 9000, scene), base);

  std::vector<double> mean(4, 0.0);
  std::ostringstream msg;
  for (std::size_t a = 0; a < 4; ++a) {
    ModelConfig cfg = base;
    cfg.decoder = arms[a].decoder;
    cfg.use_resa = arms[a].use_resa;
    msg << arms[a].name << " [";
    for (int s = 1; s <= so.seeds; ++s) {
      cfg.seed = static_cast<std::uint64_t>(s);
      const auto t0 = Clock::now();
      const auto out = train_network<float>(cfg, train);
      const double f1 = evaluate_culane(cfg, out.weights, val).f1;
      std::cerr << "  " << arms[a].name << " seed " << s << ": F1 " << f1 << " final loss " << out.log.back().loss
                << " (" << seconds_since(t0) << " s)" << std::endl;
      mean[a] += f1 / so.seeds;
      msg << (s > 1 ? " " : "") << std::fixed << std::setprecision(3) << f1;
    }
    msg << "] mean " << std::setprecision(3) << mean[a] << "; ";
  }
  const bool order = mean[0] < mean[1] && mean[1] <= mean[2] && mean[2] <= mean[3];
  const bool margin = mean[3] - mean[0] >= 0.05;
  msg << "ordering " << (order ? "holds" : "violated") << ", full - baseline = " << std::setprecision(3)
      << 100.0 * (mean[3] - mean[0]) << " F1 points (need >= 5)";
  return {order && margin, msg.str()};
}

// --- 7: metrics against brute force ---
LaneLabel random_lane(Rng& rng, Index H, Index W) {
  std::uniform_real_distribution<double> ux(-4.0, static_cast<double>(W) + 4.0);
  std::uniform_real_distribution<double> uy(0.0, static_cast<double>(H) - 1.0);
  const int n = std::uniform_int_distribution<int>(2, 4)(rng);
  std::vector<double> ys;
  for (int i = 0; i < n; ++i) ys.push_back(uy(rng));
  std::sort(ys.begin(), ys.end());
  ys.erase(std::unique(ys.begin(), ys.end()), ys.end());
  if (ys.size() < 2) ys = {0.0, static_cast<double>(H) - 1.0};
  LaneLabel l;
  const double x0 = ux(rng);
  for (double y : ys) l.points.push_back({x0 + std::uniform_real_distribution<double>(-6.0, 6.0)(rng), y});
  return l;
}

LaneLabel jitter(const LaneLabel& l, Rng& rng, double amount) {
  LaneLabel out = l;
  std::uniform_real_distribution<double> u(-amount, amount);
  for (auto& p : out.points) p.x += u(rng);
  return out;
}

Verdict metrics() {
  Rng rng(77);
  const Index H = 24, W = 32;
  const double width = 3.0;
  int cu_mismatches = 0, ts_mismatches = 0;
  std::vector<std::vector<LaneLabel>> all_p, all_g;
  oracle::PointScore ts_total;
  std::vector<RowLanes> tp_preds, tp_gts;
  const std::size_t rows = 12;
  std::vector<double> h_samples;
  for (std::size_t r = 0; r < rows; ++r) h_samples.push_back(static_cast<double>(2 * r));
  for (int c = 0; c < 100; ++c) {
    std::vector<LaneLabel> gts, preds;
    const int ng = std::uniform_int_distribution<int>(0, 5)(rng);
    const int np = std::uniform_int_distribution<int>(0, 5)(rng);
    for (int i = 0; i < ng; ++i) gts.push_back(random_lane(rng, H, W));
    for (int i = 0; i < np; ++i) {
      if (i < ng && std::bernoulli_distribution(0.7)(rng))
        preds.push_back(jitter(gts[static_cast<std::size_t>(i)], rng, 2.0));
      else
        preds.push_back(random_lane(rng, H, W));
    }
    std::shuffle(preds.begin(), preds.end(), rng);
    const MatchCounts got = culane_match(preds, gts, 0.5, width, H, W);
    const MatchCounts want = oracle::culane_match(preds, gts, 0.5, width, H, W);
    const bool cu_bad = got.tp != want.tp || got.fp != want.fp || got.fn != want.fn;
    cu_mismatches += cu_bad;
    all_p.push_back(preds);
    all_g.push_back(gts);

    // point scoring on random row samples
    auto row_lane = [&](double base, bool sparse) {
      std::vector<double> xs(rows);
      for (std::size_t r = 0; r < rows; ++r)
        xs[r] = sparse && std::bernoulli_distribution(0.2)(rng) ? kTusimpleAbsent
                                                                : base + std::uniform_real_distribution<double>(-30, 30)(rng);
      return xs;
    };
    RowLanes tg, tpred;
    for (int i = 0; i < ng; ++i) tg.push_back(row_lane(60.0 + 40.0 * i, true));
    for (int i = 0; i < np; ++i) {
      if (i < ng && std::bernoulli_distribution(0.6)(rng)) {
        auto l = tg[static_cast<std::size_t>(i)];
        for (double& x : l)
          if (x != kTusimpleAbsent) x += std::uniform_real_distribution<double>(-24, 24)(rng);
        tpred.push_back(l);
      } else {
        tpred.push_back(row_lane(60.0 + 40.0 * i, true));
      }
    }
    const PointCounts pc = tusimple_image(tpred, tg, rows);
    const oracle::PointScore ps = oracle::tusimple(tpred, tg);
    ts_mismatches += pc.correct != ps.correct || pc.total != ps.total || pc.fp != ps.fp || pc.fn != ps.fn ||
                  pc.num_pred != ps.num_pred || pc.num_gt != ps.num_gt;
    ts_total.correct += ps.correct;
    ts_total.total += ps.total;
    tp_preds.push_back(tpred);
    tp_gts.push_back(tg);
  }
  // dataset-level aggregation against the summed brute-force counts
  long tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < all_p.size(); ++i) {
    const auto m = oracle::culane_match(all_p[i], all_g[i], 0.5, width, H, W);
    tp += m.tp;
    fp += m.fp;
    fn += m.fn;
  }
  const EvalReport cu = culane_f1(all_p, all_g, 0.5, width, H, W);
  const bool agg_ok = cu.tp == tp && cu.fp == fp && cu.fn == fn;
  const EvalReport ts = tusimple_accuracy(tp_preds, tp_gts, h_samples);
  const bool acc_ok = ts.correct_points == ts_total.correct && ts.total_points == ts_total.total;

  // one matched pair, one extra prediction, one missed lane
  LaneLabel a{{{4.0, 0.0}, {4.0, 23.0}}, 0};
  LaneLabel b{{{20.0, 0.0}, {20.0, 23.0}}, 1};
  LaneLabel c2{{{28.0, 0.0}, {28.0, 23.0}}, 2};
  const EvalReport hand = culane_f1({{a, c2}}, {{a, b}}, 0.5, width, H, W);
  const bool hand_ok = hand.precision == 0.5 && hand.recall == 0.5 && hand.f1 == 0.5;

  std::ostringstream msg;
  const int mismatches = cu_mismatches + ts_mismatches;
  msg << "100 random images: " << cu_mismatches << " IoU-matching and " << ts_mismatches
      << " point-scoring mismatches (" << tp << " matched lanes); totals " << (agg_ok && acc_ok ? "agree" : "differ")
      << "; hand case P/R/F1 = " << hand.precision << "/" << hand.recall << "/" << hand.f1;
  return {mismatches == 0 && agg_ok && acc_ok && hand_ok, msg.str()};
}

// --- 8: zero aggregator kernels leave the network unchanged ---
Verdict zero_resa_identity() {
  bool ok = true;
  std::ostringstream msg;
  for (Fusion fusion : {Fusion::kAdd, Fusion::kMax}) {
    ModelConfig with;
    with.height = 32;
    with.width = 64;
    with.encoder_channels = {8, 16, 32};
    with.resa.fusion = fusion;
    with.seed = 11;
    ModelConfig without = with;
    without.use_resa = false;
    NetworkWeights<float> wr = build_network<float>(with);
    for (auto& per_dir : wr.resa->kernels)
      for (auto& k : per_dir) k.weight.set_zero();
    const NetworkWeights<float> w0 = build_network<float>(without);
    // the two builds share every non-aggregator tensor
    NetworkWeights<float> shared = wr;
    shared.resa.reset();
    Rng rng(3);
    const Tensor<float> x = random_uniform<float>({2, 3, with.height, with.width}, rng, 0.0, 1.0);
    for (NormMode mode : {NormMode::kTrain, NormMode::kInfer}) {
      const auto a = forward(with, wr, x, mode);
      const auto b = forward(without, shared, x, mode);
      const auto c = forward(without, w0, x, mode);
      const bool same = a.seg_logits == b.seg_logits && a.existence_logits == b.existence_logits;
      const bool built_same = b.seg_logits == c.seg_logits;
      ok = ok && same;
      msg << (fusion == Fusion::kAdd ? "add" : "max") << "/" << (mode == NormMode::kTrain ? "train" : "infer") << ": "
          << (same ? "bit-identical" : "DIFFERENT") << (built_same ? "" : " (independent builds differ)") << "; ";
    }
  }
  return {ok, msg.str()};
}

// --- 9: deterministic training runs ---
std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

Verdict deterministic_training() {
  const fs::path root = fs::temp_directory_path() / ("resa_accept_" + std::to_string(::getpid()));
  fs::remove_all(root);
  const std::vector<std::pair<std::string, std::string>> overrides = {
      {"precision", "f64"},      {"total_iters", "100"},   {"warmup_batches", "20"}, {"seed", "42"},
      {"encoder_channels", "8,16,32"}, {"train_samples", "24"}, {"checkpoint_every", "50"}};
  std::ostringstream sink;
  for (const char* run : {"a", "b"}) {
    TrainArgs args;
    args.out = root / run;
    args.overrides = overrides;
    if (cmd_train(args, sink) != kExitOk) return {false, "cmd_train failed"};
  }
  const std::vector<fs::path> files = {"logs/loss.csv", "checkpoints/final.rten", "checkpoints/final.rten.meta",
                                       "checkpoints/iter_000050.rten", "config.resolved"};
  bool ok = true;
  std::ostringstream msg;
  for (const auto& f : files) {
    const std::string a = slurp(root / "a" / f), b = slurp(root / "b" / f);
    const bool same = !a.empty() && a == b;
    ok = ok && same;
    msg << f.string() << (same ? " identical" : " DIFFERS") << "; ";
  }
  std::istringstream log(slurp(root / "a" / "logs/loss.csv"));
  const auto lines = std::count(std::istreambuf_iterator<char>(log), {}, '\n');
  msg << lines - 1 << " loss rows";
  ok = ok && lines == 101;
  fs::remove_all(root);
  return {ok, msg.str()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  int criterion = 0;
  StudyOptions study;
  app.add_option("--criterion", criterion, "criterion 1..9, 0 runs all")->check(CLI::Range(0, 9));
  app.add_option("--study-iterations", study.iterations, "training iterations per study run");
  app.add_option("--study-seeds", study.seeds, "seeds per study arm");
  app.add_option("--study-lr", study.lr, "base learning rate of every study arm");
  CLI11_PARSE(app, argc, argv);

  struct Entry {
    int n;
    const char* title;
    double budget_s;
    std::function<Verdict()> run;
  };
  const std::vector<Entry> entries = {
      {1, "stride schedule", 0.001, schedules},
      {2, "coverage", 10.0, coverage},
      {3, "oracle equivalence", 30.0, oracle_equivalence},
      {4, "gradient checks", 300.0, gradchecks},
      {5, "complexity and timing", 300.0, complexity},
      {6, "training study", 1800.0, [&] { return training_study(study); }},
      {7, "metric correctness", 10.0, metrics},
      {8, "zeroed aggregator identity", 10.0, zero_resa_identity},
      {9, "deterministic training", 300.0, deterministic_training},
  };
  bool all = true;
  for (const auto& e : entries) {
    if (criterion != 0 && criterion != e.n) continue;
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = e.run();
    } catch (const std::exception& ex) {
      v = {false, std::string("exception: ") + ex.what()};
    }
    all = report(e.n, e.title, v, seconds_since(t0), e.budget_s) && all;
  }
  return all ? 0 : 1;
}
