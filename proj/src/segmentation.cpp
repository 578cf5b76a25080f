#include "dlow/segmentation.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <charconv>
#include <cmath>
#include <iostream>
#include <limits>

#include "dlow/checkpoint.hpp"
#include "dlow/config.hpp"
#include "dlow/errors.hpp"

namespace dlow {

namespace F = torch::nn::functional;

namespace {

torch::nn::Sequential conv_relu(std::int64_t in, std::int64_t out, std::int64_t stride) {
  return torch::nn::Sequential(
      torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1)),
      torch::nn::ReLU(torch::nn::ReLUOptions(true)),
      torch::nn::Conv2d(torch::nn::Conv2dOptions(out, out, 3).padding(1)),
      torch::nn::ReLU(torch::nn::ReLUOptions(true)));
}

// He-normal weights from an explicit generator so runs do not depend on the
// global torch RNG.
void init_segmentation(torch::nn::Module& module, std::uint64_t seed) {
  torch::NoGradGuard no_grad;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  for (auto& m : module.modules(/*include_self=*/true)) {
    if (auto* conv = m->as<torch::nn::Conv2dImpl>()) {
      const auto& k = conv->options.kernel_size();
      const double fan_in = static_cast<double>(conv->options.in_channels() * (*k)[0] * (*k)[1]);
      conv->weight.normal_(0.0, std::sqrt(2.0 / fan_in), gen);
      if (conv->bias.defined()) conv->bias.zero_();
    }
  }
}

std::int64_t to_int(const std::string& key, const std::string& v) {
  std::int64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ArgumentError(cat("boost key '", key, "': not an integer"));
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ArgumentError(cat("boost key '", key, "': not a number"));
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ArgumentError(cat("boost key '", key, "': expected true/false"));
}

constexpr double kSourceLabel = 0.0;
constexpr double kTargetLabel = 1.0;

// Per-sample BCE of patch scores against a constant domain label, shape (N).
torch::Tensor domain_bce(const torch::Tensor& scores, double label) {
  auto target = torch::full_like(scores, label);
  return F::binary_cross_entropy_with_logits(scores, target,
                                             F::BinaryCrossEntropyWithLogitsFuncOptions().reduction(torch::kNone))
      .flatten(1)
      .mean(1);
}

}  // namespace

SegNetImpl::SegNetImpl(const SegOptions& options) : options_(options) {
  const auto w = options.width;
  stem_ = register_module("stem", conv_relu(options.in_channels, w, 1));
  down1_ = register_module("down1", conv_relu(w, 2 * w, 2));
  down2_ = register_module("down2", conv_relu(2 * w, 4 * w, 2));
  down3_ = register_module("down3", conv_relu(4 * w, 4 * w, 2));
  up3_ = register_module("up3", conv_relu(8 * w, 2 * w, 1));
  up2_ = register_module("up2", conv_relu(4 * w, w, 1));
  up1_ = register_module("up1", conv_relu(2 * w, w, 1));
  classifier_ = register_module("classifier", torch::nn::Conv2d(torch::nn::Conv2dOptions(w, options.num_classes, 1)));
}

torch::Tensor SegNetImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(2) % 8 != 0 || x.size(3) % 8 != 0) {
    throw ArgumentError(cat("segmentation input must be (N, C, H, W) with H, W divisible by 8, got ", x.sizes()));
  }
  auto up = [](const torch::Tensor& t) {
    return F::interpolate(t, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
  };
  auto s0 = stem_->forward(x);
  auto s1 = down1_->forward(s0);
  auto s2 = down2_->forward(s1);
  auto s3 = down3_->forward(s2);
  auto y = up3_->forward(torch::cat({up(s3), s2}, 1));
  y = up2_->forward(torch::cat({up(y), s1}, 1));
  y = up1_->forward(torch::cat({up(y), s0}, 1));
  return classifier_->forward(y);
}

BoostConfig parse_boost_config(const std::string& text, BoostConfig c) {
  for (const auto& kv : parse_key_values(text)) {
    const auto& k = kv.key;
    const auto& v = kv.value;
    if (k == "iterations") c.iterations = to_int(k, v);
    else if (k == "learning_rate") c.learning_rate = to_double(k, v);
    else if (k == "critic_learning_rate") c.critic_learning_rate = to_double(k, v);
    else if (k == "batch_size") c.batch_size = to_int(k, v);
    else if (k == "lambda_adv") c.lambda_adv = to_double(k, v);
    else if (k == "adversarial") c.adversarial = to_bool(k, v);
    else if (k == "domainness_weighting") c.domainness_weighting = to_bool(k, v);
    else if (k == "weight_critic") c.weight_critic = to_bool(k, v);
    else if (k == "seed") c.seed = static_cast<std::uint64_t>(to_int(k, v));
    else if (k == "num_classes") c.num_classes = to_int(k, v);
    else if (k == "width") c.width = to_int(k, v);
    else if (k == "ndf") c.ndf = to_int(k, v);
    else if (k == "image_size") c.image_size = to_int(k, v);
    else if (k == "flip") c.flip = to_bool(k, v);
    else if (k == "run_dir") c.run_dir = v;
    else throw ArgumentError(cat("config line ", kv.line, ": unknown boost key '", k, "'"));
  }
  if (c.iterations < 1 || c.batch_size < 1 || c.num_classes < 2) {
    throw ArgumentError("boost config needs iterations >= 1, batch_size >= 1, num_classes >= 2");
  }
  return c;
}

torch::Tensor alignment_per_sample(SegNet& model, PatchDiscriminator& critic, const torch::Tensor& source_images,
                                   const torch::Tensor& target_images) {
  if (source_images.size(0) != target_images.size(0)) {
    throw ArgumentError("alignment pairs need equal source and target batch sizes");
  }
  auto p_source = torch::softmax(model->forward(source_images), 1);
  auto p_target = torch::softmax(model->forward(target_images), 1);
  return domain_bce(critic->forward(p_source), kTargetLabel) + domain_bce(critic->forward(p_target), kSourceLabel);
}

torch::Tensor sample_weights(const BoostBatch& batch, bool domainness_weighting) {
  const auto n = batch.images.size(0);
  if (!domainness_weighting) return torch::ones({n});
  if (!batch.z || !batch.z->defined()) throw ArgumentError("boosted step needs a z value for every source sample");
  auto z = batch.z->to(torch::kFloat32).flatten();
  if (z.size(0) != n) throw ArgumentError(cat("boosted step got ", z.size(0), " z values for ", n, " samples"));
  if ((z < 0).any().item<bool>() || (z > 1).any().item<bool>()) throw ArgumentError("z values must lie in [0, 1]");
  return torch::sqrt(1.0 - z);
}

BoostTrainer::BoostTrainer(BoostConfig config) : config_(std::move(config)), rng_(config_.seed * 7919ULL + 3) {
  model_ = SegNet(SegOptions{3, config_.num_classes, config_.width});
  init_segmentation(*model_, config_.seed * 1000003ULL + 11);
  DiscriminatorOptions dopt;
  dopt.in_channels = config_.num_classes;
  dopt.ndf = config_.ndf;
  critic_ = PatchDiscriminator(dopt);
  initialize_parameters(*critic_, config_.seed * 1000003ULL + 12);
  model_opt_ = std::make_unique<torch::optim::Adam>(
      model_->parameters(), torch::optim::AdamOptions(config_.learning_rate).betas({0.9, 0.99}));
  critic_opt_ = std::make_unique<torch::optim::Adam>(
      critic_->parameters(), torch::optim::AdamOptions(config_.critic_learning_rate).betas({0.9, 0.99}));
}

BoostLosses BoostTrainer::boosted_da_step(const BoostBatch& batch) {
  BoostLosses out;
  const bool adversarial = config_.adversarial;
  torch::Tensor weights;
  if (adversarial) weights = sample_weights(batch, config_.domainness_weighting);

  model_->train();
  model_opt_->zero_grad();
  auto seg = F::cross_entropy(model_->forward(batch.images), batch.labels);
  auto total = seg;
  if (adversarial) {
    if (!batch.target_images.defined()) throw ArgumentError("adversarial step needs target images");
    for (auto& p : critic_->parameters()) p.set_requires_grad(false);
    auto adv = (weights * alignment_per_sample(model_, critic_, batch.images, batch.target_images)).mean();
    for (auto& p : critic_->parameters()) p.set_requires_grad(true);
    total = total + config_.lambda_adv * adv;
    out.adversarial = adv.item<double>();
  }
  total.backward();
  model_opt_->step();
  out.segmentation = seg.item<double>();
  if (!std::isfinite(out.segmentation) || !std::isfinite(out.adversarial)) {
    throw NumericError(cat("non-finite segmentation loss (seg ", out.segmentation, ", adv ", out.adversarial, ")"));
  }

  if (adversarial) {
    torch::Tensor p_source, p_target;
    {
      torch::NoGradGuard no_grad;
      p_source = torch::softmax(model_->forward(batch.images), 1);
      p_target = torch::softmax(model_->forward(batch.target_images), 1);
    }
    auto per = domain_bce(critic_->forward(p_source), kSourceLabel) + domain_bce(critic_->forward(p_target), kTargetLabel);
    auto critic_loss = config_.weight_critic ? (weights * per).mean() : per.mean();
    critic_opt_->zero_grad();
    critic_loss.backward();
    critic_opt_->step();
    out.critic = critic_loss.item<double>();
  }
  return out;
}

void BoostTrainer::save(const std::filesystem::path& path) const {
  CheckpointContainer c;
  c.manifest = {{"kind", "segmentation"},
                {"num_classes", config_.num_classes},
                {"width", config_.width},
                {"image_size", config_.image_size}};
  c.blobs["model.seg"] = serialize_module(*model_);
  c.write(path);
}

SegNet load_segmentation_model(const std::filesystem::path& path) {
  const auto c = CheckpointContainer::read(path);
  if (c.manifest.value("kind", "") != "segmentation") {
    throw LoadError(cat("checkpoint ", path, " is not a segmentation checkpoint"));
  }
  SegNet model(SegOptions{3, c.manifest.at("num_classes").get<std::int64_t>(), c.manifest.at("width").get<std::int64_t>()});
  deserialize_module(*model, c.blob("model.seg"));
  model->eval();
  return model;
}

BoostTrainer run_boost_training(const BoostConfig& config, const ImageBank& source, const torch::Tensor& source_z,
                                const ImageBank& target) {
  if (!source.labels.defined()) throw ArgumentError("boost training needs labeled source images");
  if (config.adversarial && config.domainness_weighting && !source_z.defined()) {
    throw ArgumentError("domainness weighting needs per-sample z (use a translated index)");
  }
  BoostTrainer trainer(config);
  for (std::int64_t it = 0; it < config.iterations; ++it) {
    auto s = source.sample(config.batch_size, config.image_size, config.flip, trainer.rng());
    BoostBatch batch{s.images, s.labels, std::nullopt, {}};
    if (source_z.defined()) batch.z = source_z.index({torch::tensor(s.indices)});
    if (config.adversarial) batch.target_images = target.sample(config.batch_size, config.image_size, config.flip,
                                                                trainer.rng()).images;
    trainer.boosted_da_step(batch);
  }
  return trainer;
}

IouReport iou_from_predictions(const torch::Tensor& prediction, const torch::Tensor& truth, std::int64_t num_classes) {
  if (!prediction.sizes().equals(truth.sizes())) throw ArgumentError("prediction and truth shapes differ");
  if (truth.numel() == 0) throw ArgumentError("empty evaluation set");
  auto p = prediction.to(torch::kInt64).flatten();
  auto t = truth.to(torch::kInt64).flatten();
  auto confusion = torch::bincount(t * num_classes + p, {}, num_classes * num_classes).view({num_classes, num_classes});
  auto acc = confusion.accessor<std::int64_t, 2>();
  IouReport out;
  double sum = 0.0;
  int present = 0;
  for (std::int64_t c = 0; c < num_classes; ++c) {
    std::int64_t row = 0, col = 0;
    for (std::int64_t j = 0; j < num_classes; ++j) {
      row += acc[c][j];
      col += acc[j][c];
    }
    const std::int64_t tp = acc[c][c];
    const std::int64_t uni = row + col - tp;
    out.per_class.push_back(uni == 0 ? std::numeric_limits<double>::quiet_NaN() : static_cast<double>(tp) / uni);
    if (row > 0) {
      sum += out.per_class.back();
      ++present;
    }
  }
  out.mean = sum / present;
  return out;
}

IouReport evaluate_miou(SegNet& model, const ImageBank& bank) {
  if (bank.images.numel() == 0 || bank.size() == 0) throw ArgumentError("empty evaluation set");
  if (!bank.labels.defined()) throw ArgumentError("evaluation needs labels");
  torch::NoGradGuard no_grad;
  const bool was_training = model->is_training();
  model->eval();
  std::vector<torch::Tensor> preds;
  for (std::int64_t i = 0; i < bank.size(); i += 32) {
    const auto n = std::min<std::int64_t>(32, bank.size() - i);
    preds.push_back(model->forward(bank.images.narrow(0, i, n)).argmax(1));
  }
  model->train(was_training);
  return iou_from_predictions(torch::cat(preds), bank.labels, model->options().num_classes);
}

}  // namespace dlow
