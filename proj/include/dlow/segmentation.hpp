#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dlow/dataset.hpp"
#include "dlow/networks.hpp"

namespace dlow {

struct SegOptions {
  std::int64_t in_channels = 3;
  std::int64_t num_classes = 2;
  std::int64_t width = 16;
};

/// Small encoder-decoder with three stride-2 downsamplings and skip
/// connections; per-pixel class logits at input resolution.
class SegNetImpl : public torch::nn::Module {
 public:
  explicit SegNetImpl(const SegOptions& options);
  torch::Tensor forward(const torch::Tensor& x);
  const SegOptions& options() const { return options_; }

 private:
  SegOptions options_;
  torch::nn::Sequential stem_, down1_, down2_, down3_;
  torch::nn::Sequential up3_, up2_, up1_;
  torch::nn::Conv2d classifier_{nullptr};
};
TORCH_MODULE(SegNet);

struct BoostConfig {
  std::int64_t iterations = 600;
  double learning_rate = 1e-3;
  double critic_learning_rate = 1e-4;
  std::int64_t batch_size = 8;
  /// Weight of the adversarial alignment term in the segmentation update.
  double lambda_adv = 0.01;
  /// false: plain supervised training on the source set.
  bool adversarial = false;
  /// Apply sqrt(1 - z_i) per source sample; false uses weight 1.
  bool domainness_weighting = true;
  /// Also weight the critic's own loss by sqrt(1 - z_i).
  bool weight_critic = true;
  std::uint64_t seed = 0;
  std::int64_t num_classes = 2;
  std::int64_t width = 16;
  std::int64_t ndf = 16;
  std::int64_t image_size = 64;
  bool flip = true;
  std::string run_dir = "runs/boost";
};

/// Parses `key = value` lines with the keys of BoostConfig. Unknown keys
/// throw ArgumentError.
BoostConfig parse_boost_config(const std::string& text, BoostConfig base = {});

/// Labeled source images (optionally with domainness) and unlabeled target
/// images for one boosted step.
struct BoostBatch {
  torch::Tensor images;
  torch::Tensor labels;
  std::optional<torch::Tensor> z;
  torch::Tensor target_images;
};

struct BoostLosses {
  double segmentation = 0.0;
  double adversarial = 0.0;
  double critic = 0.0;
};

/// Per-source-sample alignment loss, shape (N): sample i pairs the source
/// prediction with target prediction i, and the segmentation model is
/// rewarded when the critic swaps their domains.
torch::Tensor alignment_per_sample(SegNet& model, PatchDiscriminator& critic, const torch::Tensor& source_images,
                                   const torch::Tensor& target_images);

/// sqrt(1 - z) per sample, or ones when weighting is off. Throws
/// ArgumentError if weighting is on and z is missing.
torch::Tensor sample_weights(const BoostBatch& batch, bool domainness_weighting);

/// Output-space adversarial segmentation trainer.
class BoostTrainer {
 public:
  explicit BoostTrainer(BoostConfig config);

  /// Cross-entropy on the source batch plus lambda_adv times the weighted
  /// alignment loss, then (adversarial mode) one critic update.
  BoostLosses boosted_da_step(const BoostBatch& batch);

  SegNet& model() { return model_; }
  PatchDiscriminator& critic() { return critic_; }
  const BoostConfig& config() const { return config_; }
  Rng& rng() { return rng_; }

  void save(const std::filesystem::path& path) const;

 private:
  BoostConfig config_;
  SegNet model_{nullptr};
  PatchDiscriminator critic_{nullptr};
  std::unique_ptr<torch::optim::Adam> model_opt_;
  std::unique_ptr<torch::optim::Adam> critic_opt_;
  Rng rng_;
};

SegNet load_segmentation_model(const std::filesystem::path& path);

/// Trains for config.iterations steps. `source_z` may be undefined (all
/// samples weighted 1). Target labels are never read.
BoostTrainer run_boost_training(const BoostConfig& config, const ImageBank& source, const torch::Tensor& source_z,
                                const ImageBank& target);

struct IouReport {
  /// IoU per class; NaN for classes absent from both prediction and truth.
  std::vector<double> per_class;
  /// Mean over classes present in the ground truth.
  double mean = 0.0;
};

/// IoU_c = TP / (TP + FP + FN) from integer prediction and truth maps.
IouReport iou_from_predictions(const torch::Tensor& prediction, const torch::Tensor& truth, std::int64_t num_classes);

/// Predicts every image of `bank` (which must carry labels) and scores it.
IouReport evaluate_miou(SegNet& model, const ImageBank& bank);

}  // namespace dlow
