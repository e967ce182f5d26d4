#include "resa/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <map>
#include <sstream>

namespace resa {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("invalid value '" + value + "' for key " + key);
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("invalid boolean '" + value + "' for key " + key);
}

std::vector<Index> parse_index_list(const std::string& key, const std::string& value) {
  std::vector<Index> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<Index>(key, trim(item)));
  if (out.empty()) throw ConfigError("empty list for key " + key);
  return out;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

using Setter = std::function<void(ModelConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"height", [](ModelConfig& c, const std::string& k, const std::string& v) { c.height = parse_number<Index>(k, v); }},
      {"width", [](ModelConfig& c, const std::string& k, const std::string& v) { c.width = parse_number<Index>(k, v); }},
      {"encoder_channels", [](ModelConfig& c, const std::string& k, const std::string& v) { c.encoder_channels = parse_index_list(k, v); }},
      {"use_resa", [](ModelConfig& c, const std::string& k, const std::string& v) { c.use_resa = parse_bool(k, v); }},
      {"resa_iterations", [](ModelConfig& c, const std::string& k, const std::string& v) { c.resa.iterations = parse_number<int>(k, v); }},
      {"resa_kernel_width", [](ModelConfig& c, const std::string& k, const std::string& v) { c.resa.kernel_width = parse_number<Index>(k, v); }},
      {"resa_directions", [](ModelConfig& c, const std::string&, const std::string& v) {
         try {
           c.resa.directions = parse_directions(v);
         } catch (const std::invalid_argument& e) {
           throw ConfigError(e.what());
         }
       }},
      {"resa_fusion", [](ModelConfig& c, const std::string& k, const std::string& v) {
         if (v == "add") c.resa.fusion = Fusion::kAdd;
         else if (v == "max") c.resa.fusion = Fusion::kMax;
         else throw ConfigError("invalid value '" + v + "' for key " + k);
       }},
      {"resa_stride_policy", [](ModelConfig& c, const std::string& k, const std::string& v) {
         if (v == "floor") c.resa.stride_policy = StridePolicy::kFloorDivision;
         else if (v == "pow2") c.resa.stride_policy = StridePolicy::kPowersOfTwo;
         else throw ConfigError("invalid value '" + v + "' for key " + k);
       }},
      {"decoder", [](ModelConfig& c, const std::string& k, const std::string& v) {
         if (v == "busd") c.decoder = DecoderKind::kBusd;
         else if (v == "bilinear") c.decoder = DecoderKind::kBilinear;
         else throw ConfigError("invalid value '" + v + "' for key " + k);
       }},
      {"exist_tap", [](ModelConfig& c, const std::string& k, const std::string& v) {
         if (v == "aggregator") c.exist_tap = ExistenceTap::kAggregator;
         else if (v == "decoder") c.exist_tap = ExistenceTap::kDecoder;
         else throw ConfigError("invalid value '" + v + "' for key " + k);
       }},
      {"num_lanes", [](ModelConfig& c, const std::string& k, const std::string& v) { c.num_lanes = parse_number<Index>(k, v); }},
      {"bg_weight", [](ModelConfig& c, const std::string& k, const std::string& v) { c.bg_weight = parse_number<double>(k, v); }},
      {"exist_weight", [](ModelConfig& c, const std::string& k, const std::string& v) { c.exist_weight = parse_number<double>(k, v); }},
      {"lr", [](ModelConfig& c, const std::string& k, const std::string& v) { c.lr = parse_number<double>(k, v); }},
      {"momentum", [](ModelConfig& c, const std::string& k, const std::string& v) { c.momentum = parse_number<double>(k, v); }},
      {"weight_decay", [](ModelConfig& c, const std::string& k, const std::string& v) { c.weight_decay = parse_number<double>(k, v); }},
      {"warmup_batches", [](ModelConfig& c, const std::string& k, const std::string& v) { c.warmup_batches = parse_number<int>(k, v); }},
      {"total_iters", [](ModelConfig& c, const std::string& k, const std::string& v) { c.total_iters = parse_number<int>(k, v); }},
      {"poly_power", [](ModelConfig& c, const std::string& k, const std::string& v) { c.poly_power = parse_number<double>(k, v); }},
      {"batch_size", [](ModelConfig& c, const std::string& k, const std::string& v) { c.batch_size = parse_number<int>(k, v); }},
      {"seed", [](ModelConfig& c, const std::string& k, const std::string& v) { c.seed = parse_number<std::uint64_t>(k, v); }},
      {"precision", [](ModelConfig& c, const std::string& k, const std::string& v) {
         if (v == "f32") c.precision = Precision::kFloat32;
         else if (v == "f64") c.precision = Precision::kFloat64;
         else throw ConfigError("invalid value '" + v + "' for key " + k);
       }},
      {"data_dir", [](ModelConfig& c, const std::string&, const std::string& v) { c.data_dir = v; }},
      {"train_samples", [](ModelConfig& c, const std::string& k, const std::string& v) { c.train_samples = parse_number<int>(k, v); }},
      {"difficulty", [](ModelConfig& c, const std::string&, const std::string& v) {
         try {
           c.difficulty = parse_difficulty(v);
         } catch (const std::invalid_argument& e) {
           throw ConfigError(e.what());
         }
       }},
      {"data_seed", [](ModelConfig& c, const std::string& k, const std::string& v) { c.data_seed = parse_number<std::uint64_t>(k, v); }},
      {"checkpoint_every", [](ModelConfig& c, const std::string& k, const std::string& v) { c.checkpoint_every = parse_number<int>(k, v); }},
  };
  return table;
}

}  // namespace

const char* to_string(Difficulty d) {
  switch (d) {
    case Difficulty::kNormal: return "normal";
    case Difficulty::kCrowded: return "crowded";
    case Difficulty::kNoLine: return "noline";
  }
  return "?";
}

Difficulty parse_difficulty(const std::string& s) {
  if (s == "normal") return Difficulty::kNormal;
  if (s == "crowded") return Difficulty::kCrowded;
  if (s == "noline") return Difficulty::kNoLine;
  throw std::invalid_argument("unknown difficulty '" + s + "'");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (encoder_channels.empty()) fail("encoder_channels must list at least one stage");
  const Index reduction = Index{1} << encoder_channels.size();
  if (height <= 0 || width <= 0 || height % reduction || width % reduction) {
    fail("height and width must be positive and divisible by " + std::to_string(reduction));
  }
  for (Index c : encoder_channels) {
    if (c <= 0) fail("encoder channel counts must be positive");
  }
  if (decoder == DecoderKind::kBusd) {
    Index c = encoder_channels.back();
    for (std::size_t i = 0; i < encoder_channels.size(); ++i) {
      if (c % 2) fail("BUSD decoder needs the final encoder channel count divisible by 2^stages");
      c /= 2;
    }
  }
  if (resa.iterations < 1 || resa.kernel_width < 1 || resa.kernel_width % 2 == 0) {
    fail("resa_iterations must be >= 1 and resa_kernel_width odd");
  }
  if (resa.directions.empty()) fail("resa_directions must name at least one direction");
  if (num_lanes < 1) fail("num_lanes must be >= 1");
  if (!(bg_weight > 0.0 && bg_weight <= 1.0)) fail("bg_weight must be in (0, 1]");
  if (exist_weight < 0.0) fail("exist_weight must be non-negative");
  if (!(lr > 0.0) || momentum < 0.0 || weight_decay < 0.0) fail("optimizer settings out of range");
  if (warmup_batches < 0 || total_iters <= 0 || warmup_batches >= total_iters) {
    fail("need 0 <= warmup_batches < total_iters");
  }
  if (!(poly_power > 0.0)) fail("poly_power must be positive");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (data_dir.empty() && train_samples < 1) fail("train_samples must be >= 1");
  if (checkpoint_every < 0) fail("checkpoint_every must be >= 0");
}

std::vector<std::pair<std::string, std::string>> parse_key_values(std::istream& is) {
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int number = 0;
  while (std::getline(is, line)) {
    ++number;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("line " + std::to_string(number) + ": expected key=value");
    }
    out.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return out;
}

void apply_config_value(ModelConfig& cfg, const std::string& key, const std::string& value) {
  const auto& table = setters();
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(cfg, key, value);
}

ModelConfig parse_model_config(std::istream& is) {
  ModelConfig cfg;
  for (const auto& [k, v] : parse_key_values(is)) apply_config_value(cfg, k, v);
  cfg.validate();
  return cfg;
}

ModelConfig load_model_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  return parse_model_config(is);
}

std::string to_text(const ModelConfig& c) {
  std::ostringstream os;
  auto fusion = c.resa.fusion == Fusion::kAdd ? "add" : "max";
  auto policy = c.resa.stride_policy == StridePolicy::kFloorDivision ? "floor" : "pow2";
  std::string channels;
  for (std::size_t i = 0; i < c.encoder_channels.size(); ++i) {
    channels += (i ? "," : "") + std::to_string(c.encoder_channels[i]);
  }
  os << "height=" << c.height << '\n'
     << "width=" << c.width << '\n'
     << "encoder_channels=" << channels << '\n'
     << "use_resa=" << (c.use_resa ? "true" : "false") << '\n'
     << "resa_iterations=" << c.resa.iterations << '\n'
     << "resa_kernel_width=" << c.resa.kernel_width << '\n'
     << "resa_directions=" << directions_to_string(c.resa.directions) << '\n'
     << "resa_fusion=" << fusion << '\n'
     << "resa_stride_policy=" << policy << '\n'
     << "decoder=" << (c.decoder == DecoderKind::kBusd ? "busd" : "bilinear") << '\n'
     << "exist_tap=" << (c.exist_tap == ExistenceTap::kAggregator ? "aggregator" : "decoder") << '\n'
     << "num_lanes=" << c.num_lanes << '\n'
     << "bg_weight=" << format_double(c.bg_weight) << '\n'
     << "exist_weight=" << format_double(c.exist_weight) << '\n'
     << "lr=" << format_double(c.lr) << '\n'
     << "momentum=" << format_double(c.momentum) << '\n'
     << "weight_decay=" << format_double(c.weight_decay) << '\n'
     << "warmup_batches=" << c.warmup_batches << '\n'
     << "total_iters=" << c.total_iters << '\n'
     << "poly_power=" << format_double(c.poly_power) << '\n'
     << "batch_size=" << c.batch_size << '\n'
     << "seed=" << c.seed << '\n'
     << "precision=" << (c.precision == Precision::kFloat32 ? "f32" : "f64") << '\n'
     << "data_dir=" << c.data_dir << '\n'
     << "train_samples=" << c.train_samples << '\n'
     << "difficulty=" << to_string(c.difficulty) << '\n'
     << "data_seed=" << c.data_seed << '\n'
     << "checkpoint_every=" << c.checkpoint_every << '\n';
  return os.str();
}

std::uint64_t config_hash(const ModelConfig& cfg) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : to_text(cfg)) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace resa
