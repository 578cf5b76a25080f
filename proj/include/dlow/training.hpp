#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dlow/config.hpp"
#include "dlow/domainness.hpp"
#include "dlow/networks.hpp"
#include "dlow/objectives.hpp"

namespace dlow {

struct StepResult {
  /// Iteration index the step ran at (before increment).
  std::int64_t iteration = 0;
  /// Per-image z (single target) or the shared domainness vector (K targets).
  std::vector<double> z;
  LossBreakdown generator;
  double critic_source = 0.0;
  double critic_target = 0.0;
};

/// Owns a domain-flow model and everything needed to continue training it:
/// optimizers, the z sampler's engine, the data engine and the iteration
/// counter. Single writer; not thread-safe.
class DomainFlowTrainer {
 public:
  explicit DomainFlowTrainer(TrainConfig config);

  /// One alternating update: generators on the full objective at z drawn
  /// for iteration t, then each critic on its weighted loss.
  StepResult train_step(const torch::Tensor& batch_source, const torch::Tensor& batch_target);
  /// Same with caller-supplied per-image z, shape (N) or (N, 1).
  StepResult train_step(const torch::Tensor& batch_source, const torch::Tensor& batch_target, const torch::Tensor& z);

  /// K-target update; z follows the vertex/random phase cycle.
  StepResult train_multi_target_step(const torch::Tensor& batch_source, std::span<const torch::Tensor> batch_targets);

  /// Domainness vector for iteration t of the phase cycle: vertices e_0 ..
  /// e_{K-1}, then random simplex points until the period ends. Draws from
  /// the sampler engine on random phases.
  DomainnessVector scheduled_vector(std::int64_t t);

  void checkpoint(const std::filesystem::path& path) const;
  static DomainFlowTrainer restore(const std::filesystem::path& path);

  std::int64_t iteration() const { return iteration_; }
  const TrainConfig& config() const { return config_; }
  DomainFlowModels& models() { return models_; }
  const DomainFlowModels& models() const { return models_; }
  Rng& data_rng() { return data_rng_; }

  /// Converts models and optimizer state to `dtype` (float64 for gradient
  /// checks). Call before the first step.
  void set_dtype(torch::Dtype dtype);

 private:
  void require_room() const;
  void build_optimizers();

  TrainConfig config_;
  DomainFlowModels models_;
  std::unique_ptr<torch::optim::Adam> generator_opt_;
  std::unique_ptr<torch::optim::Adam> source_critic_opt_;
  std::vector<std::unique_ptr<torch::optim::Adam>> target_critic_opts_;
  DomainnessSampler sampler_;
  Rng data_rng_;
  std::int64_t iteration_ = 0;
};

/// A generator restored from a checkpoint for inference.
struct LoadedGenerator {
  Generator generator{nullptr};
  std::int64_t num_targets = 1;
  std::int64_t image_size = 0;
  std::vector<std::string> target_names;
  std::string checkpoint_hash;
};

/// Loads G_ST (or G_TS with `source_to_target = false`).
LoadedGenerator load_generator(const std::filesystem::path& checkpoint, bool source_to_target = true);

/// Appends rows `iteration,z,adv_source,adv_target,cycle,total`.
class MetricsLog {
 public:
  explicit MetricsLog(std::filesystem::path path);
  void append(const StepResult& step);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

struct TrainRunOptions {
  std::optional<std::filesystem::path> resume;
  /// Called after every step; return false to stop early.
  std::function<bool(const StepResult&)> on_step;
  bool verbose = true;
};

/// Full run from config: loads domains, writes run_dir/config.txt (the
/// resolved config), metrics.csv, periodic and final checkpoints
/// (run_dir/checkpoint.dlow). Returns the trainer at the end of training.
DomainFlowTrainer run_training(const TrainConfig& config, const TrainRunOptions& options = {});

}  // namespace dlow
