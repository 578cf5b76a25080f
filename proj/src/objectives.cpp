#include "dlow/objectives.hpp"

#include <cmath>

#include "dlow/errors.hpp"

namespace dlow {

namespace F = torch::nn::functional;

namespace {

torch::Tensor per_sample_mean(const torch::Tensor& t) { return t.flatten(1).mean(1); }

void require_finite(const torch::Tensor& t, const char* what) {
  if (t.defined() && !torch::isfinite(t).all().item<bool>()) {
    throw NumericError(cat("non-finite ", what, " scores"));
  }
}

torch::Tensor as_column(const torch::Tensor& z) { return z.dim() == 2 ? z.squeeze(1) : z; }

torch::Tensor generator_loss(const torch::Tensor& scores, GanLossKind kind) {
  return adversarial_per_sample(scores, {}, CriticRole::kGenerator, kind);
}

torch::Tensor critic_loss(PatchDiscriminator& d, const torch::Tensor& real_scores, const torch::Tensor& fake,
                          GanLossKind kind) {
  return adversarial_per_sample(d->forward(fake), real_scores, CriticRole::kDiscriminator, kind);
}

}  // namespace

torch::Tensor adversarial_per_sample(const torch::Tensor& fake_scores, const torch::Tensor& real_scores,
                                     CriticRole role, GanLossKind kind) {
  if (role == CriticRole::kGenerator) {
    if (kind == GanLossKind::kLeastSquares) return per_sample_mean((fake_scores - 1.0).pow(2));
    return per_sample_mean(F::binary_cross_entropy_with_logits(
        fake_scores, torch::ones_like(fake_scores), F::BinaryCrossEntropyWithLogitsFuncOptions().reduction(torch::kNone)));
  }
  if (!real_scores.defined()) throw ArgumentError("discriminator role needs real scores");
  if (kind == GanLossKind::kLeastSquares) {
    return 0.5 * (per_sample_mean((real_scores - 1.0).pow(2)) + per_sample_mean(fake_scores.pow(2)));
  }
  const auto none = F::BinaryCrossEntropyWithLogitsFuncOptions().reduction(torch::kNone);
  return 0.5 * (per_sample_mean(F::binary_cross_entropy_with_logits(real_scores, torch::ones_like(real_scores), none)) +
                per_sample_mean(F::binary_cross_entropy_with_logits(fake_scores, torch::zeros_like(fake_scores), none)));
}

torch::Tensor adversarial_pair(const torch::Tensor& fake_scores, const torch::Tensor& real_scores, CriticRole role,
                               GanLossKind kind) {
  require_finite(fake_scores, "fake");
  if (role == CriticRole::kDiscriminator) {
    if (!real_scores.defined()) throw ArgumentError("discriminator role needs real scores");
    require_finite(real_scores, "real");
  }
  if (role == CriticRole::kGenerator) return adversarial_per_sample(fake_scores, {}, role, kind).mean();
  if (kind == GanLossKind::kLeastSquares) {
    return 0.5 * ((real_scores - 1.0).pow(2).mean() + fake_scores.pow(2).mean());
  }
  return 0.5 * (F::binary_cross_entropy_with_logits(real_scores, torch::ones_like(real_scores)) +
                F::binary_cross_entropy_with_logits(fake_scores, torch::zeros_like(fake_scores)));
}

double combined_adversarial(double adv_source, double adv_target, DomainnessValue z) {
  const double w = z.value();
  return (1.0 - w) * adv_source + w * adv_target;
}

torch::Tensor combined_adversarial(const torch::Tensor& adv_source, const torch::Tensor& adv_target,
                                   const torch::Tensor& z) {
  const auto w = as_column(z);
  return (1.0 - w) * adv_source + w * adv_target;
}

torch::Tensor cycle_loss(const torch::Tensor& x, const torch::Tensor& x_roundtrip) {
  if (!x.sizes().equals(x_roundtrip.sizes())) {
    throw ArgumentError(cat("cycle_loss: shape mismatch ", x.sizes(), " vs ", x_roundtrip.sizes()));
  }
  return (x - x_roundtrip).abs().mean();
}

ObjectiveResult full_objective(const torch::Tensor& batch_source, const torch::Tensor& batch_target,
                               const torch::Tensor& z, DomainFlowModels& models, const ObjectiveConfig& config) {
  if (batch_source.numel() == 0 || batch_target.numel() == 0) throw ArgumentError("full_objective: empty batch");
  if (config.lambda_cyc < 0.0) throw ArgumentError("lambda_cyc must be non-negative");
  const auto w = as_column(z).to(batch_source.scalar_type());
  if (w.size(0) != batch_source.size(0) || w.size(0) != batch_target.size(0)) {
    throw ArgumentError("full_objective: z needs one value per image in both batches");
  }
  auto& g_st = models.source_to_target;
  auto& g_ts = models.target_to_source;
  auto& d_s = models.source_critic;
  auto& d_t = models.target_critic();
  const auto kind = config.gan_loss_kind;

  ObjectiveResult out;
  LossBreakdown& b = out.breakdown;
  auto combined = torch::zeros({}, batch_source.options());
  auto cycle = torch::zeros({}, batch_source.options());
  auto identity = torch::zeros({}, batch_source.options());

  if (config.direction != Direction::kTargetToSource) {
    out.fake_target = translate(batch_source, w, g_st);
    const auto adv_s = generator_loss(discriminate(out.fake_target, d_s), kind);
    const auto adv_t = generator_loss(discriminate(out.fake_target, d_t), kind);
    combined = combined + combined_adversarial(adv_s, adv_t, w).mean();
    cycle = cycle + cycle_loss(batch_source, translate(out.fake_target, w, g_ts));
    b.adv_source += adv_s.mean().item<double>();
    b.adv_target += adv_t.mean().item<double>();
  }
  if (config.direction != Direction::kSourceToTarget) {
    out.fake_source = translate(batch_target, w, g_ts);
    const auto adv_s = generator_loss(discriminate(out.fake_source, d_s), kind);
    const auto adv_t = generator_loss(discriminate(out.fake_source, d_t), kind);
    // G_TS(., z) lands in the intermediate domain of domainness 1 - z.
    combined = combined + combined_adversarial(adv_t, adv_s, w).mean();
    cycle = cycle + cycle_loss(batch_target, translate(out.fake_source, w, g_st));
    b.adv_source += adv_s.mean().item<double>();
    b.adv_target += adv_t.mean().item<double>();
  }
  if (config.lambda_identity > 0.0) {
    const auto ones = torch::ones_like(w);
    identity = cycle_loss(batch_target, translate(batch_target, ones, g_st)) +
               cycle_loss(batch_source, translate(batch_source, ones, g_ts));
  }
  out.total = combined + config.lambda_cyc * cycle + config.lambda_identity * identity;
  b.combined_adv = combined.item<double>();
  b.cycle = cycle.item<double>();
  b.identity = identity.item<double>();
  b.total = out.total.item<double>();
  return out;
}

CriticLosses critic_objective(const torch::Tensor& batch_source, const torch::Tensor& batch_target,
                              const torch::Tensor& fake_target, const torch::Tensor& fake_source,
                              const torch::Tensor& z, DomainFlowModels& models, GanLossKind kind) {
  const auto w = as_column(z).to(batch_source.scalar_type());
  auto& d_s = models.source_critic;
  auto& d_t = models.target_critic();
  const auto real_s = d_s->forward(batch_source);
  const auto real_t = d_t->forward(batch_target);
  auto loss_s = torch::zeros_like(w);
  auto loss_t = torch::zeros_like(w);
  if (fake_target.defined()) {
    loss_s = loss_s + (1.0 - w) * critic_loss(d_s, real_s, fake_target, kind);
    loss_t = loss_t + w * critic_loss(d_t, real_t, fake_target, kind);
  }
  if (fake_source.defined()) {
    loss_s = loss_s + w * critic_loss(d_s, real_s, fake_source, kind);
    loss_t = loss_t + (1.0 - w) * critic_loss(d_t, real_t, fake_source, kind);
  }
  return {loss_s.mean(), loss_t.mean()};
}

double multi_target_adversarial(std::span<const double> per_target_losses, const DomainnessVector& z) {
  if (per_target_losses.size() != z.size()) {
    throw ArgumentError(cat("multi_target_adversarial: ", per_target_losses.size(), " losses for K = ", z.size()));
  }
  double total = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) total += z[k] * per_target_losses[k];
  return total;
}

torch::Tensor multi_target_adversarial(std::span<const torch::Tensor> per_target_losses, const DomainnessVector& z) {
  if (per_target_losses.size() != z.size()) {
    throw ArgumentError(cat("multi_target_adversarial: ", per_target_losses.size(), " losses for K = ", z.size()));
  }
  torch::Tensor total;
  for (std::size_t k = 0; k < z.size(); ++k) {
    if (z[k] == 0.0) continue;
    auto term = z[k] * per_target_losses[k];
    total = total.defined() ? total + term : term;
  }
  return total;
}

MultiTargetResult multi_target_objective(const torch::Tensor& batch_source, std::span<const torch::Tensor> batch_targets,
                                         const DomainnessVector& z, DomainFlowModels& models,
                                         const ObjectiveConfig& config) {
  const std::size_t k_count = z.size();
  if (batch_targets.size() != k_count || models.num_targets() != k_count) {
    throw ArgumentError(cat("multi_target_objective: K = ", k_count, " but ", batch_targets.size(),
                            " target batches and ", models.num_targets(), " target critics"));
  }
  const auto n = batch_source.size(0);
  const auto dtype = batch_source.scalar_type();
  const auto zt = z_tensor(z, n, dtype);
  auto& g_st = models.source_to_target;
  auto& g_ts = models.target_to_source;
  const auto kind = config.gan_loss_kind;

  MultiTargetResult out;
  out.fake_sources.resize(k_count);
  LossBreakdown& b = out.breakdown;

  // Source -> mixture of targets.
  out.fake_target = translate(batch_source, zt, g_st);
  std::vector<torch::Tensor> adv_targets(k_count);
  for (std::size_t k = 0; k < k_count; ++k) {
    if (z[k] == 0.0) continue;
    adv_targets[k] = generator_loss(discriminate(out.fake_target, models.target_critics[k]), kind).mean();
  }
  auto adv_target = multi_target_adversarial(adv_targets, z);
  auto cycle = cycle_loss(batch_source, translate(out.fake_target, zt, g_ts));

  // Each target back to the source, weighted by its share of the mixture.
  auto adv_source = torch::zeros({}, batch_source.options());
  auto target_recon = torch::zeros({}, batch_source.options());
  for (std::size_t k = 0; k < k_count; ++k) {
    const bool active = z[k] > 0.0;
    if (!active && config.weight_target_reconstruction) continue;
    const auto& x_t = batch_targets[k];
    const auto zk = z_tensor(z, x_t.size(0), dtype);
    auto fake_s = translate(x_t, zk, g_ts);
    auto recon = cycle_loss(x_t, translate(fake_s, zk, g_st));
    if (config.weight_target_reconstruction) {
      target_recon = target_recon + z[k] * recon;
    } else {
      target_recon = target_recon + recon / static_cast<double>(k_count);
    }
    if (active) {
      adv_source = adv_source + z[k] * generator_loss(discriminate(fake_s, models.source_critic), kind).mean();
      out.fake_sources[k] = fake_s;
    }
  }
  cycle = cycle + target_recon;

  auto combined = adv_target + adv_source;
  out.total = combined + config.lambda_cyc * cycle;
  b.adv_source = adv_source.item<double>();
  b.adv_target = adv_target.item<double>();
  b.combined_adv = combined.item<double>();
  b.cycle = cycle.item<double>();
  b.total = out.total.item<double>();
  return out;
}

std::vector<torch::Tensor> multi_target_critic_objective(const torch::Tensor& batch_source,
                                                         std::span<const torch::Tensor> batch_targets,
                                                         const MultiTargetResult& generated, const DomainnessVector& z,
                                                         DomainFlowModels& models, GanLossKind kind) {
  const std::size_t k_count = z.size();
  std::vector<torch::Tensor> losses(k_count + 1);
  const auto fake_target = generated.fake_target.detach();
  auto& d_s = models.source_critic;
  const auto real_s = d_s->forward(batch_source);
  for (std::size_t k = 0; k < k_count; ++k) {
    if (z[k] == 0.0) continue;
    auto& d_k = models.target_critics[k];
    const auto real_k = d_k->forward(batch_targets[k]);
    losses[k + 1] = z[k] * critic_loss(d_k, real_k, fake_target, kind).mean();
    const auto source_term = z[k] * critic_loss(d_s, real_s, generated.fake_sources[k].detach(), kind).mean();
    losses[0] = losses[0].defined() ? losses[0] + source_term : source_term;
  }
  return losses;
}

double boost_weight(DomainnessValue z) { return std::sqrt(1.0 - z.value()); }

}  // namespace dlow
