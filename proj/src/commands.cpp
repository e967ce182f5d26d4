#include "resa/commands.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "resa/data.hpp"
#include "resa/eval.hpp"
#include "resa/gradcheck.hpp"
#include "resa/image.hpp"
#include "resa/tensor_io.hpp"
#include "resa/train.hpp"

namespace resa {

namespace {

template <typename F>
decltype(auto) with_scalar(Precision p, F&& f) {
  if (p == Precision::kFloat64) return f.template operator()<double>();
  return f.template operator()<float>();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
}

std::filesystem::path default_config_for(const std::filesystem::path& checkpoint) {
  return checkpoint.parent_path().parent_path() / "config.resolved";
}

ModelConfig config_for_checkpoint(const std::filesystem::path& checkpoint,
                                  const std::optional<std::filesystem::path>& config) {
  const ModelConfig cfg = load_model_config(config ? *config : default_config_for(checkpoint));
  const CheckpointMeta meta = read_checkpoint_meta(checkpoint);
  if (meta.config_hash != config_hash(cfg)) {
    throw DataError("checkpoint " + checkpoint.string() + " was written by a different configuration");
  }
  return cfg;
}

const Rgb kLaneColors[] = {{1.0f, 0.2f, 0.2f}, {0.2f, 1.0f, 0.2f}, {0.3f, 0.5f, 1.0f}, {1.0f, 0.9f, 0.1f},
                           {1.0f, 0.3f, 1.0f}, {0.2f, 1.0f, 1.0f}};

}  // namespace

int run_command(const std::function<int()>& body, std::ostream& err) {
  try {
    return body();
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << '\n';
    return kExitData;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ShapeError& e) {
    err << "shape error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::invalid_argument& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "file error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

ModelConfig resolve_config(const std::optional<std::filesystem::path>& file,
                           const std::vector<std::pair<std::string, std::string>>& overrides) {
  ModelConfig cfg = file ? load_model_config(*file) : ModelConfig{};
  for (const auto& [k, v] : overrides) apply_config_value(cfg, k, v);
  cfg.validate();
  return cfg;
}

void write_checkpoint_meta(const std::filesystem::path& checkpoint, const CheckpointMeta& meta) {
  std::ostringstream os;
  os << "config_hash=" << std::hex << std::setw(16) << std::setfill('0') << meta.config_hash << std::dec << '\n'
     << "iter=" << meta.iter << '\n'
     << "seed=" << meta.seed << '\n';
  write_file(checkpoint.string() + ".meta", os.str());
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& checkpoint) {
  const std::filesystem::path path = checkpoint.string() + ".meta";
  std::ifstream is(path);
  if (!is) throw DataError("missing checkpoint metadata " + path.string());
  CheckpointMeta meta;
  bool have_hash = false;
  try {
    for (const auto& [k, v] : parse_key_values(is)) {
      if (k == "config_hash") {
        meta.config_hash = std::stoull(v, nullptr, 16);
        have_hash = true;
      } else if (k == "iter") {
        meta.iter = std::stoi(v);
      } else if (k == "seed") {
        meta.seed = std::stoull(v);
      } else {
        throw DataError(path.string() + ": unknown key '" + k + "'");
      }
    }
  } catch (const std::logic_error& e) {
    throw DataError(path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  if (!have_hash) throw DataError(path.string() + ": no config_hash");
  return meta;
}

int cmd_gen(const GenArgs& args, std::ostream& log) {
  if (args.count < 0) throw std::invalid_argument("--count must be non-negative");
  GenerateOptions opt;
  opt.count = args.count;
  opt.difficulty = args.difficulty;
  opt.seed = args.seed;
  opt.scene = {args.height, args.width, 4};
  if (args.height % 8 || args.width % 8 || args.height <= 0 || args.width <= 0)
    throw std::invalid_argument("image size must be positive and divisible by 8");
  std::filesystem::create_directories(args.out);
  std::ostringstream resolved;
  resolved << "count=" << args.count << "\ndifficulty=" << to_string(args.difficulty) << "\nseed=" << args.seed
           << "\nheight=" << args.height << "\nwidth=" << args.width << '\n';
  write_file(args.out / "config.resolved", resolved.str());
  log << resolved.str();
  write_dataset(args.out, opt);
  log << "wrote " << args.count << " samples to " << args.out.string() << '\n';
  return kExitOk;
}

int cmd_train(const TrainArgs& args, std::ostream& log) {
  const ModelConfig cfg = resolve_config(args.config, args.overrides);
  const std::filesystem::path ckpt_dir = args.out / "checkpoints";
  const std::filesystem::path log_dir = args.out / "logs";
  const std::filesystem::path report_dir = args.out / "reports";
  std::filesystem::create_directories(ckpt_dir);
  std::filesystem::create_directories(log_dir);
  std::filesystem::create_directories(report_dir);
  const std::string resolved = to_text(cfg);
  write_file(args.out / "config.resolved", resolved);
  log << "# resolved config\n" << resolved;

  const std::vector<TrainingExample> data = training_examples(cfg);
  log << "training on " << data.size() << " samples for " << cfg.total_iters << " iterations\n";

  std::ofstream loss_csv(log_dir / "loss.csv", std::ios::binary);
  if (!loss_csv) throw DataError("cannot write " + (log_dir / "loss.csv").string());
  loss_csv << "iter,lr,loss\n" << std::setprecision(17);
  const auto start = std::chrono::steady_clock::now();

  double final_loss = 0.0;
  with_scalar(cfg.precision, [&]<typename S>() {
    TrainHooks<S> hooks;
    hooks.on_iteration = [&](const LossLogRow& row) {
      loss_csv << row.iter << ',' << row.lr << ',' << row.loss << '\n';
      final_loss = row.loss;
      if ((row.iter + 1) % 50 == 0 || row.iter + 1 == cfg.total_iters) {
        log << "iter " << row.iter + 1 << " lr " << row.lr << " loss " << row.loss << '\n';
      }
    };
    hooks.on_checkpoint = [&](int iter, const NetworkWeights<S>& w) {
      std::ostringstream name;
      if (iter == cfg.total_iters) name << "final.rten";
      else name << "iter_" << std::setw(6) << std::setfill('0') << iter << ".rten";
      const std::filesystem::path path = ckpt_dir / name.str();
      save_weights(w, path);
      write_checkpoint_meta(path, {config_hash(cfg), iter, cfg.seed});
    };
    train_network<S>(cfg, data, hooks);
  });
  loss_csv.close();
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::ostringstream summary;
  summary << std::setprecision(17) << "iterations=" << cfg.total_iters << "\nfinal_loss=" << final_loss << '\n';
  write_file(report_dir / "train_summary.txt", summary.str());
  log << "finished in " << std::fixed << std::setprecision(1) << seconds << " s; checkpoint "
      << (ckpt_dir / "final.rten").string() << '\n';
  return kExitOk;
}

int cmd_eval(const EvalArgs& args, std::ostream& log) {
  if (args.metric != "culane" && args.metric != "tusimple")
    throw std::invalid_argument("--metric must be culane or tusimple");
  if (args.checkpoint.has_value() == args.predictions.has_value())
    throw std::invalid_argument("exactly one of --checkpoint and --pred is required");

  const std::vector<ManifestEntry> manifest = read_manifest(args.data);
  Index num_lanes = manifest.empty() ? 4 : static_cast<Index>(manifest.front().exist.size());
  std::optional<ModelConfig> cfg;
  if (args.checkpoint) {
    cfg = config_for_checkpoint(*args.checkpoint, args.config);
    num_lanes = cfg->num_lanes;
  }
  const std::vector<LabelledImage> data = load_dataset(args.data, num_lanes);
  if (data.empty()) throw DataError("dataset " + args.data.string() + " is empty");
  const Index height = data.front().image.dim(1);
  const Index width = data.front().image.dim(2);

  std::vector<std::vector<LaneLabel>> preds;
  if (args.checkpoint) {
    if (cfg->height != height || cfg->width != width) throw DataError("dataset resolution differs from the model's");
    std::vector<const Tensor<float>*> images;
    for (const auto& d : data) images.push_back(&d.image);
    preds = with_scalar(cfg->precision, [&]<typename S>() {
      const NetworkWeights<S> w = load_weights<S>(*cfg, *args.checkpoint);
      return predict_lanes(*cfg, w, images);
    });
  } else {
    for (const auto& e : manifest) preds.push_back(read_culane_lines(*args.predictions / e.label));
  }

  EvalReport report;
  if (args.metric == "culane") {
    std::vector<std::vector<LaneLabel>> gts;
    for (const auto& d : data) gts.push_back(d.lanes);
    report = culane_f1(preds, gts, 0.5, static_cast<double>(line_width_for(width)), height, width);
  } else {
    const std::vector<TusimpleRecord> records = read_tusimple_labels(args.data / "tusimple.json");
    std::map<std::string, const TusimpleRecord*> by_file;
    for (const auto& r : records) by_file[r.raw_file] = &r;
    std::vector<RowLanes> pred_rows, gt_rows;
    std::vector<double> h_samples;
    for (std::size_t i = 0; i < manifest.size(); ++i) {
      const auto it = by_file.find(manifest[i].image);
      if (it == by_file.end()) throw DataError("tusimple.json has no entry for " + manifest[i].image);
      const TusimpleRecord& rec = *it->second;
      if (h_samples.empty()) h_samples = rec.h_samples;
      if (rec.h_samples != h_samples) throw DataError("h_samples differ between images");
      gt_rows.push_back(rec.lanes);
      RowLanes rows;
      for (const auto& lane : preds[i]) rows.push_back(sample_at_rows(lane, h_samples, width));
      pred_rows.push_back(std::move(rows));
    }
    report = tusimple_accuracy(pred_rows, gt_rows, h_samples);
  }
  log << report_text(report);
  if (args.out) {
    std::filesystem::create_directories(*args.out / "reports");
    write_report(report, *args.out / "reports" / ("eval_" + args.metric + ".txt"));
    write_file(*args.out / "reports" / ("eval_" + args.metric + ".table.txt"), report_text(report));
  }
  return kExitOk;
}

int cmd_infer(const InferArgs& args, std::ostream& log) {
  const ModelConfig cfg = config_for_checkpoint(args.checkpoint, args.config);
  Tensor<float> image = read_png(args.image);
  if (image.dims() != Dims{3, cfg.height, cfg.width}) {
    throw DataError("image is " + dims_to_string(image.dims()) + ", the model expects 3x" + std::to_string(cfg.height) +
                    "x" + std::to_string(cfg.width));
  }
  const std::vector<LaneLabel> lanes = with_scalar(cfg.precision, [&]<typename S>() {
    const NetworkWeights<S> w = load_weights<S>(cfg, args.checkpoint);
    return predict_lanes(cfg, w, {&image}).front();
  });
  for (const auto& lane : lanes) {
    const Rgb& color = kLaneColors[static_cast<std::size_t>(lane.lane_index) % std::size(kLaneColors)];
    const auto mask = lane_mask(lane, cfg.height, cfg.width, 2.0);
    for (Index i = 0; i < static_cast<Index>(mask.size()); ++i)
      if (mask[static_cast<std::size_t>(i)]) blend_pixel(image, i / cfg.width, i % cfg.width, color, 0.85f);
    log << "lane " << lane.lane_index << ':';
    for (const auto& p : lane.points) log << ' ' << std::fixed << std::setprecision(2) << p.x << ',' << p.y;
    log << '\n';
  }
  if (args.out.has_parent_path()) std::filesystem::create_directories(args.out.parent_path());
  write_png(args.out, image);
  log << lanes.size() << " lanes drawn to " << args.out.string() << '\n';
  return kExitOk;
}

int cmd_gradcheck(const GradcheckArgs& args, std::ostream& log) {
  if (args.seeds < 1) throw std::invalid_argument("--seeds must be at least 1");
  bool ok = true;
  for (int s = 0; s < args.seeds; ++s) {
    const auto results = run_gradcheck_scope(args.scope, args.seed + static_cast<std::uint64_t>(s));
    for (const auto& r : results) {
      ok = ok && r.passed();
      log << std::left << std::setw(44) << r.name << std::right << " max_rel_err " << std::scientific
          << std::setprecision(3) << r.rel_error << " (tol " << r.tolerance << ", " << r.checked << " coords";
      if (r.skipped) log << ", " << r.skipped << " at kinks";
      log << ") " << (r.passed() ? "PASS" : "FAIL") << '\n';
    }
  }
  log << (ok ? "all gradient checks passed" : "gradient check FAILED") << '\n';
  return ok ? kExitOk : kExitCheckFailed;
}

std::vector<std::vector<bool>> impulse_support(Index length, int iterations, StridePolicy policy, Axis axis) {
  const StrideSchedule schedule = compute_stride_schedule(length, iterations, policy);
  ConvKernel<double> identity(1, 1, 1, 1, false);
  identity.weight[0] = 1.0;
  const bool vertical = axis == Axis::kVertical;
  Tensor<double> x(vertical ? Dims{1, 1, length, 1} : Dims{1, 1, 1, length});
  x[0] = 1.0;
  const Direction dir = vertical ? Direction::kUpToDown : Direction::kLeftToRight;
  std::vector<std::vector<bool>> rows;
  for (Index s : schedule.strides) {
    x = directional_pass(x, dir, s, identity, Fusion::kAdd);
    std::vector<bool> row(static_cast<std::size_t>(length));
    for (Index i = 0; i < length; ++i) row[static_cast<std::size_t>(i)] = x[i] != 0.0;
    rows.push_back(std::move(row));
  }
  return rows;
}

int cmd_inspect(const InspectArgs& args, std::ostream& log) {
  if (args.axis != 'h' && args.axis != 'v') throw std::invalid_argument("--axis must be h or v");
  if (args.length < 1 || args.iterations < 1) throw std::invalid_argument("--L and --K must be positive");
  const StrideSchedule schedule = compute_stride_schedule(args.length, args.iterations, args.policy);
  const auto rows = impulse_support(args.length, args.iterations, args.policy,
                                    args.axis == 'h' ? Axis::kHorizontal : Axis::kVertical);
  log << "axis: " << (args.axis == 'h' ? "horizontal" : "vertical") << '\n' << "strides:";
  for (Index s : schedule.strides) log << ' ' << s;
  log << '\n';
  for (std::size_t k = 0; k < rows.size(); ++k) {
    Index covered = 0;
    log << "k=" << k << ' ';
    for (bool b : rows[k]) {
      log << (b ? '#' : '.');
      covered += b;
    }
    log << "  " << covered << '/' << args.length << '\n';
  }
  const Index cell = 12;
  const Index gap = 1;
  const Index h = static_cast<Index>(rows.size()) * cell;
  const Index w = args.length * cell;
  Tensor<float> img({3, h, w});
  for (std::size_t k = 0; k < rows.size(); ++k) {
    // later iterations drawn warmer
    const float heat = static_cast<float>(k + 1) / static_cast<float>(rows.size());
    for (Index i = 0; i < args.length; ++i) {
      const Rgb color = rows[k][static_cast<std::size_t>(i)] ? Rgb{1.0f, 0.35f + 0.6f * heat, 0.1f}
                                                             : Rgb{0.08f, 0.08f, 0.2f};
      for (Index y = 0; y < cell - gap; ++y)
        for (Index x = 0; x < cell - gap; ++x)
          blend_pixel(img, static_cast<Index>(k) * cell + y, i * cell + x, color);
    }
  }
  if (args.out.has_parent_path()) std::filesystem::create_directories(args.out.parent_path());
  write_png(args.out, img);
  log << "wrote " << args.out.string() << '\n';
  return kExitOk;
}

int cmd_bench(const BenchArgs& args, std::ostream& log) {
  const std::vector<BenchResult> results = run_bench(args.config, &log);
  log << report_table(results);
  if (args.out) {
    if (args.out->has_parent_path()) std::filesystem::create_directories(args.out->parent_path());
    write_file(*args.out, report_csv(results));
    log << "wrote " << args.out->string() << '\n';
  }
  return kExitOk;
}

}  // namespace resa
