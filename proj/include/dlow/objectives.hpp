#pragma once

#include <torch/torch.h>

#include <span>
#include <vector>

#include "dlow/domainness.hpp"
#include "dlow/networks.hpp"

namespace dlow {

enum class GanLossKind { kLeastSquares, kLog };
enum class CriticRole { kGenerator, kDiscriminator };
enum class Direction { kSourceToTarget, kTargetToSource, kBoth };

struct ObjectiveConfig {
  double lambda_cyc = 10.0;
  GanLossKind gan_loss_kind = GanLossKind::kLeastSquares;
  Direction direction = Direction::kBoth;
  /// Identity term |G_ST(x_t, 1) - x_t| + |G_TS(x_s, 1) - x_s|; off by default.
  double lambda_identity = 0.0;
  /// Multi-target only: weight each target's reconstruction by z_k.
  bool weight_target_reconstruction = true;
};

struct LossBreakdown {
  double adv_source = 0.0;
  double adv_target = 0.0;
  double combined_adv = 0.0;
  double cycle = 0.0;
  double identity = 0.0;
  double total = 0.0;
};

/// Differentiable objective plus the detached fakes the critic update needs.
struct ObjectiveResult {
  torch::Tensor total;
  LossBreakdown breakdown;
  /// G_ST(x_s, z), or undefined when the direction is disabled.
  torch::Tensor fake_target;
  /// G_TS(x_t, z), or undefined when the direction is disabled.
  torch::Tensor fake_source;
};

/// Per-sample adversarial loss, shape (N). For the generator role
/// `real_scores` is ignored and may be undefined. Least squares:
///   discriminator 0.5 * (mean (r - 1)^2 + mean f^2), generator mean (f - 1)^2.
/// Log loss uses the same structure with binary cross-entropy on logits
/// (non-saturating generator form).
torch::Tensor adversarial_per_sample(const torch::Tensor& fake_scores, const torch::Tensor& real_scores,
                                     CriticRole role, GanLossKind kind);

/// Batch mean of adversarial_per_sample. Throws NumericError on non-finite
/// scores.
torch::Tensor adversarial_pair(const torch::Tensor& fake_scores, const torch::Tensor& real_scores, CriticRole role,
                               GanLossKind kind);

/// (1 - z) * adv_source + z * adv_target.
double combined_adversarial(double adv_source, double adv_target, DomainnessValue z);
torch::Tensor combined_adversarial(const torch::Tensor& adv_source, const torch::Tensor& adv_target,
                                   const torch::Tensor& z);

/// Mean absolute difference over every element.
torch::Tensor cycle_loss(const torch::Tensor& x, const torch::Tensor& x_roundtrip);

/// Full single-target objective. `z` holds one domainness per image, shape
/// (N) or (N, 1); both directions reuse it. The target-to-source direction
/// weights its critics as z * adv(D_S) + (1 - z) * adv(D_T) since
/// G_TS(., z) moves a target image a fraction z of the way to the source.
ObjectiveResult full_objective(const torch::Tensor& batch_source, const torch::Tensor& batch_target,
                               const torch::Tensor& z, DomainFlowModels& models, const ObjectiveConfig& config);

/// Critic losses for one single-target step, each weighted like the
/// generator side. Fakes must already be detached.
struct CriticLosses {
  torch::Tensor source;
  torch::Tensor target;
};
CriticLosses critic_objective(const torch::Tensor& batch_source, const torch::Tensor& batch_target,
                              const torch::Tensor& fake_target, const torch::Tensor& fake_source,
                              const torch::Tensor& z, DomainFlowModels& models, GanLossKind kind);

/// sum_k z_k * loss_k.
double multi_target_adversarial(std::span<const double> per_target_losses, const DomainnessVector& z);
torch::Tensor multi_target_adversarial(std::span<const torch::Tensor> per_target_losses, const DomainnessVector& z);

struct MultiTargetResult {
  torch::Tensor total;
  LossBreakdown breakdown;
  torch::Tensor fake_target;
  /// Per target domain; undefined where z_k = 0.
  std::vector<torch::Tensor> fake_sources;
};

/// K-target objective for one domainness vector shared by the batch. Terms
/// with z_k = 0 are skipped.
MultiTargetResult multi_target_objective(const torch::Tensor& batch_source, std::span<const torch::Tensor> batch_targets,
                                         const DomainnessVector& z, DomainFlowModels& models,
                                         const ObjectiveConfig& config);

/// Critic losses for a K-target step: [0] is D_S, [1 + k] is D_Tk.
/// Undefined tensors mark critics with zero weight this step.
std::vector<torch::Tensor> multi_target_critic_objective(const torch::Tensor& batch_source,
                                                         std::span<const torch::Tensor> batch_targets,
                                                         const MultiTargetResult& generated, const DomainnessVector& z,
                                                         DomainFlowModels& models, GanLossKind kind);

/// sqrt(1 - z): adversarial weight of a translated sample in boosted
/// adaptation.
double boost_weight(DomainnessValue z);

}  // namespace dlow
