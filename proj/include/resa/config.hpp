#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "resa/aggregator.hpp"

namespace resa {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DecoderKind { kBusd, kBilinear };
enum class ExistenceTap { kAggregator, kDecoder };
enum class Precision { kFloat32, kFloat64 };
enum class Difficulty { kNormal, kCrowded, kNoLine };

const char* to_string(Difficulty d);
Difficulty parse_difficulty(const std::string& s);

/// Every architecture, training and data hyperparameter of a run.
struct ModelConfig {
  // Architecture.
  Index height = 96;
  Index width = 160;
  std::vector<Index> encoder_channels{32, 64, 128};
  bool use_resa = true;
  ResaConfig resa;
  DecoderKind decoder = DecoderKind::kBusd;
  ExistenceTap exist_tap = ExistenceTap::kAggregator;
  Index num_lanes = 4;

  // Loss.
  double bg_weight = 0.4;
  double exist_weight = 1.0;

  // Optimiser and schedule.
  double lr = 0.025;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int warmup_batches = 500;
  int total_iters = 1500;
  double poly_power = 0.9;
  int batch_size = 4;

  std::uint64_t seed = 1;
  Precision precision = Precision::kFloat32;

  // Training data: a generated dataset directory, or synthetic samples drawn in memory.
  std::string data_dir;
  int train_samples = 200;
  Difficulty difficulty = Difficulty::kCrowded;
  std::uint64_t data_seed = 1000;
  int checkpoint_every = 0;  // 0: final checkpoint only

  /// Throws ConfigError when any field is out of range.
  void validate() const;
};

/// Parses "key=value" lines. Blank lines and '#' comments are skipped;
/// malformed lines raise ConfigError with the line number.
std::vector<std::pair<std::string, std::string>> parse_key_values(std::istream& is);

/// Applies one key; unknown keys raise ConfigError.
void apply_config_value(ModelConfig& cfg, const std::string& key, const std::string& value);

ModelConfig load_model_config(const std::filesystem::path& path);
ModelConfig parse_model_config(std::istream& is);

/// Canonical, fully resolved key=value text (fixed key order).
std::string to_text(const ModelConfig& cfg);

/// FNV-1a 64 of the canonical text.
std::uint64_t config_hash(const ModelConfig& cfg);

}  // namespace resa
