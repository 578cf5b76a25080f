#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dlow/domainness.hpp"
#include "dlow/networks.hpp"
#include "dlow/objectives.hpp"

namespace dlow {

/// Everything a training run needs. Read from a flat `key = value` file;
/// see README for the key list.
struct TrainConfig {
  // optimization
  std::int64_t total_iterations = 2000;
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double lambda_cyc = 10.0;
  double lambda_identity = 0.0;
  GanLossKind gan_loss = GanLossKind::kLeastSquares;
  std::int64_t batch_size = 1;
  std::uint64_t seed = 0;

  // domainness
  ZMode z_mode = ZMode::kCurriculum;
  double z_fixed = 1.0;
  /// One z per batch instead of one per image.
  bool per_batch_z = false;
  std::int64_t num_targets = 1;
  /// Multi-target phase period: K vertex steps then (period - K) random
  /// simplex steps. 0 means K + 1.
  std::int64_t style_gen_cycle = 0;
  bool weight_target_reconstruction = true;

  // data
  std::int64_t image_size = 64;
  std::int64_t crop_size = 64;
  bool flip = true;
  std::string source_dir;
  std::vector<std::string> target_dirs;
  std::vector<std::string> target_names;

  // architecture
  std::int64_t ngf = 16;
  std::int64_t ndf = 32;
  std::int64_t n_residual = 4;
  std::int64_t n_downsampling = 2;
  std::int64_t disc_layers = 3;
  bool condition_all_norms = true;

  // run bookkeeping
  std::string experiment = "dlow";
  std::string run_dir = "runs/dlow";
  std::int64_t log_every = 50;
  std::int64_t checkpoint_every = 0;

  GeneratorOptions generator_options() const;
  DiscriminatorOptions discriminator_options() const;
  ObjectiveConfig objective_config() const;
  /// Period of the multi-target z phase cycle.
  std::int64_t style_period() const;

  /// Throws ArgumentError when a field violates its range.
  void validate() const;
};

/// `key = value` lines of a flat config document with their line numbers.
/// `#` starts a comment; blank lines are skipped.
struct KeyValueLine {
  int line = 0;
  std::string key;
  std::string value;
};
std::vector<KeyValueLine> parse_key_values(const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

/// Applies one `key = value` assignment. Unknown keys throw ArgumentError.
void set_config_value(TrainConfig& config, const std::string& key, const std::string& value);

/// Parses the flat key-value text format: one `key = value` per line, `#`
/// starts a comment, blank lines ignored. Unknown keys are errors.
TrainConfig parse_train_config(const std::string& text, TrainConfig base = {});
TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base = {});

/// Every key with its resolved value, in canonical order.
std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& config);
/// Serializes in the same format parse_train_config reads.
std::string format_train_config(const TrainConfig& config);

std::string to_string(ZMode mode, double fixed_value);
std::string to_string(GanLossKind kind);

}  // namespace dlow
