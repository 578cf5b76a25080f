#include "dlow/training.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dlow/checkpoint.hpp"
#include "dlow/dataset.hpp"
#include "dlow/errors.hpp"

namespace dlow {

namespace fs = std::filesystem;

namespace {

constexpr const char* kCheckpointKind = "domain-flow";

void set_requires_grad(torch::nn::Module& module, bool on) {
  for (auto& p : module.parameters()) p.set_requires_grad(on);
}

std::string describe(const LossBreakdown& b) {
  return cat("adv_source=", b.adv_source, " adv_target=", b.adv_target, " combined_adv=", b.combined_adv,
             " cycle=", b.cycle, " identity=", b.identity, " total=", b.total);
}

void require_finite(const LossBreakdown& b, std::int64_t t) {
  if (!std::isfinite(b.total) || !std::isfinite(b.combined_adv) || !std::isfinite(b.cycle)) {
    throw NumericError(cat("non-finite generator loss at iteration ", t, ": ", describe(b)));
  }
}

void require_finite(const torch::Tensor& loss, const char* which, std::int64_t t) {
  if (loss.defined() && !std::isfinite(loss.item<double>())) {
    throw NumericError(cat("non-finite ", which, " critic loss at iteration ", t));
  }
}

std::string rng_text(const Rng& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

void rng_from_text(Rng& rng, const std::string& text) {
  std::istringstream in(text);
  in >> rng;
  if (!in) throw LoadError("corrupt random engine state in checkpoint");
}

nlohmann::json generator_json(const GeneratorOptions& o) {
  return {{"in_channels", o.in_channels}, {"ngf", o.ngf},         {"n_downsampling", o.n_downsampling},
          {"n_residual", o.n_residual},   {"z_dim", o.z_dim},     {"outer_kernel", o.outer_kernel},
          {"condition_all_norms", o.condition_all_norms}};
}

GeneratorOptions generator_from_json(const nlohmann::json& j) {
  GeneratorOptions o;
  o.in_channels = j.at("in_channels").get<std::int64_t>();
  o.ngf = j.at("ngf").get<std::int64_t>();
  o.n_downsampling = j.at("n_downsampling").get<std::int64_t>();
  o.n_residual = j.at("n_residual").get<std::int64_t>();
  o.z_dim = j.at("z_dim").get<std::int64_t>();
  o.outer_kernel = j.at("outer_kernel").get<std::int64_t>();
  o.condition_all_norms = j.at("condition_all_norms").get<bool>();
  return o;
}

torch::Dtype dtype_of(const DomainFlowModels& models) {
  return models.source_critic->parameters().front().scalar_type();
}

}  // namespace

DomainFlowTrainer::DomainFlowTrainer(TrainConfig config)
    : config_((config.validate(), std::move(config))),
      models_(make_models(config_.generator_options(), config_.discriminator_options(),
                          static_cast<std::size_t>(config_.num_targets), config_.seed)),
      sampler_(BetaSchedule{config_.total_iterations, config_.seed * 2654435761ULL + 17}, config_.z_mode,
               config_.z_fixed),
      data_rng_(config_.seed * 40503ULL + 29) {
  build_optimizers();
}

void DomainFlowTrainer::build_optimizers() {
  const auto options = torch::optim::AdamOptions(config_.learning_rate).betas({config_.beta1, config_.beta2});
  generator_opt_ = std::make_unique<torch::optim::Adam>(models_.generator_parameters(), options);
  source_critic_opt_ = std::make_unique<torch::optim::Adam>(models_.source_critic->parameters(), options);
  target_critic_opts_.clear();
  for (auto& d : models_.target_critics) {
    target_critic_opts_.push_back(std::make_unique<torch::optim::Adam>(d->parameters(), options));
  }
}

void DomainFlowTrainer::set_dtype(torch::Dtype dtype) {
  if (iteration_ != 0) throw ArgumentError("set_dtype must be called before training starts");
  models_.to(dtype);
  build_optimizers();
}

void DomainFlowTrainer::require_room() const {
  if (iteration_ >= config_.total_iterations) {
    throw ArgumentError(cat("training already ran all ", config_.total_iterations, " iterations"));
  }
}

StepResult DomainFlowTrainer::train_step(const torch::Tensor& batch_source, const torch::Tensor& batch_target) {
  require_room();
  const auto n = batch_source.size(0);
  std::vector<double> zs;
  for (std::int64_t i = 0; i < n; ++i) {
    zs.push_back(config_.per_batch_z && i > 0 ? zs.front() : sampler_.next(iteration_).value());
  }
  return train_step(batch_source, batch_target, torch::tensor(zs, torch::kFloat64).to(batch_source.scalar_type()));
}

StepResult DomainFlowTrainer::train_step(const torch::Tensor& batch_source, const torch::Tensor& batch_target,
                                         const torch::Tensor& z) {
  require_room();
  if (models_.num_targets() != 1) throw ArgumentError("train_step needs a single-target model");
  if (batch_source.size(0) == 0 || batch_target.size(0) == 0) throw ArgumentError("train_step: empty batch");
  StepResult result;
  result.iteration = iteration_;
  const auto zc = z.to(torch::kFloat64).flatten();
  result.z.assign(zc.data_ptr<double>(), zc.data_ptr<double>() + zc.numel());
  for (double v : result.z) DomainnessValue{v};

  models_.train(true);
  set_requires_grad(*models_.source_critic, false);
  set_requires_grad(*models_.target_critic(), false);
  generator_opt_->zero_grad();
  auto objective = full_objective(batch_source, batch_target, z, models_, config_.objective_config());
  require_finite(objective.breakdown, iteration_);
  objective.total.backward();
  generator_opt_->step();
  result.generator = objective.breakdown;

  set_requires_grad(*models_.source_critic, true);
  set_requires_grad(*models_.target_critic(), true);
  source_critic_opt_->zero_grad();
  target_critic_opts_[0]->zero_grad();
  auto critics = critic_objective(batch_source, batch_target, objective.fake_target.detach(),
                                  objective.fake_source.detach(), z, models_, config_.gan_loss);
  require_finite(critics.source, "source", iteration_);
  require_finite(critics.target, "target", iteration_);
  (critics.source + critics.target).backward();
  source_critic_opt_->step();
  target_critic_opts_[0]->step();
  result.critic_source = critics.source.item<double>();
  result.critic_target = critics.target.item<double>();
  ++iteration_;
  return result;
}

DomainnessVector DomainFlowTrainer::scheduled_vector(std::int64_t t) {
  const auto k = static_cast<std::size_t>(config_.num_targets);
  const auto phase = static_cast<std::size_t>(t % config_.style_period());
  if (phase < k) return DomainnessVector::vertex(phase, k);
  return sampler_.next_vector(k);
}

StepResult DomainFlowTrainer::train_multi_target_step(const torch::Tensor& batch_source,
                                                      std::span<const torch::Tensor> batch_targets) {
  require_room();
  if (config_.num_targets < 2) throw ArgumentError("multi-target training needs num_targets >= 2");
  const auto zvec = scheduled_vector(iteration_);
  StepResult result;
  result.iteration = iteration_;
  result.z.assign(zvec.values().begin(), zvec.values().end());

  models_.train(true);
  set_requires_grad(*models_.source_critic, false);
  for (auto& d : models_.target_critics) set_requires_grad(*d, false);
  generator_opt_->zero_grad();
  auto generated = multi_target_objective(batch_source, batch_targets, zvec, models_, config_.objective_config());
  require_finite(generated.breakdown, iteration_);
  generated.total.backward();
  generator_opt_->step();
  result.generator = generated.breakdown;

  set_requires_grad(*models_.source_critic, true);
  for (auto& d : models_.target_critics) set_requires_grad(*d, true);
  auto losses = multi_target_critic_objective(batch_source, batch_targets, generated, zvec, models_, config_.gan_loss);
  torch::Tensor sum;
  for (const auto& l : losses) {
    if (l.defined()) sum = sum.defined() ? sum + l : l;
  }
  source_critic_opt_->zero_grad();
  for (auto& opt : target_critic_opts_) opt->zero_grad();
  require_finite(sum, "combined", iteration_);
  sum.backward();
  if (losses[0].defined()) {
    source_critic_opt_->step();
    result.critic_source = losses[0].item<double>();
  }
  for (std::size_t k = 0; k < target_critic_opts_.size(); ++k) {
    if (!losses[k + 1].defined()) continue;
    target_critic_opts_[k]->step();
    result.critic_target += losses[k + 1].item<double>();
  }
  ++iteration_;
  return result;
}

void DomainFlowTrainer::checkpoint(const fs::path& path) const {
  CheckpointContainer c;
  nlohmann::json config_json = nlohmann::json::object();
  for (const auto& [k, v] : config_entries(config_)) config_json[k] = v;
  c.manifest = {{"kind", kCheckpointKind},
                {"iteration", iteration_},
                {"config", config_json},
                {"generator", generator_json(models_.source_to_target->options())},
                {"num_targets", config_.num_targets},
                {"image_size", config_.crop_size},
                {"target_names", config_.target_names},
                {"dtype", dtype_of(models_) == torch::kFloat64 ? "float64" : "float32"}};
  const auto& m = models_;
  c.blobs["model.g_st"] = serialize_module(*m.source_to_target);
  c.blobs["model.g_ts"] = serialize_module(*m.target_to_source);
  c.blobs["model.d_s"] = serialize_module(*m.source_critic);
  for (std::size_t k = 0; k < m.target_critics.size(); ++k) {
    c.blobs["model.d_t." + std::to_string(k)] = serialize_module(*m.target_critics[k]);
    c.blobs["optim.d_t." + std::to_string(k)] = serialize_optimizer(*target_critic_opts_[k]);
  }
  c.blobs["optim.g"] = serialize_optimizer(*generator_opt_);
  c.blobs["optim.d_s"] = serialize_optimizer(*source_critic_opt_);
  c.blobs["rng.z"] = rng_text(sampler_.rng());
  c.blobs["rng.data"] = rng_text(data_rng_);
  c.write(path);
}

DomainFlowTrainer DomainFlowTrainer::restore(const fs::path& path) {
  const auto c = CheckpointContainer::read(path);
  if (c.manifest.value("kind", "") != kCheckpointKind) {
    throw LoadError(cat("checkpoint ", path, " is not a domain-flow training checkpoint"));
  }
  TrainConfig config;
  try {
    for (const auto& [k, v] : c.manifest.at("config").items()) set_config_value(config, k, v.get<std::string>());
  } catch (const std::exception& e) {
    throw LoadError(cat("checkpoint ", path, " has an unusable config: ", e.what()));
  }
  DomainFlowTrainer trainer(config);
  if (c.manifest.value("dtype", "float32") == "float64") trainer.set_dtype(torch::kFloat64);
  auto& m = trainer.models_;
  deserialize_module(*m.source_to_target, c.blob("model.g_st"));
  deserialize_module(*m.target_to_source, c.blob("model.g_ts"));
  deserialize_module(*m.source_critic, c.blob("model.d_s"));
  for (std::size_t k = 0; k < m.target_critics.size(); ++k) {
    deserialize_module(*m.target_critics[k], c.blob("model.d_t." + std::to_string(k)));
    deserialize_optimizer(*trainer.target_critic_opts_[k], c.blob("optim.d_t." + std::to_string(k)));
  }
  deserialize_optimizer(*trainer.generator_opt_, c.blob("optim.g"));
  deserialize_optimizer(*trainer.source_critic_opt_, c.blob("optim.d_s"));
  rng_from_text(trainer.sampler_.rng(), c.blob("rng.z"));
  rng_from_text(trainer.data_rng_, c.blob("rng.data"));
  trainer.iteration_ = c.manifest.at("iteration").get<std::int64_t>();
  return trainer;
}

LoadedGenerator load_generator(const fs::path& checkpoint, bool source_to_target) {
  const auto c = CheckpointContainer::read(checkpoint);
  if (c.manifest.value("kind", "") != kCheckpointKind) {
    throw LoadError(cat("checkpoint ", checkpoint, " does not hold a domain-flow model"));
  }
  LoadedGenerator out;
  try {
    out.generator = Generator(generator_from_json(c.manifest.at("generator")));
    out.num_targets = c.manifest.at("num_targets").get<std::int64_t>();
    out.image_size = c.manifest.at("image_size").get<std::int64_t>();
    out.target_names = c.manifest.value("target_names", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(cat("checkpoint ", checkpoint, " has an incomplete manifest: ", e.what()));
  }
  if (c.manifest.value("dtype", "float32") == "float64") out.generator->to(torch::kFloat64);
  deserialize_module(*out.generator, c.blob(source_to_target ? "model.g_st" : "model.g_ts"));
  out.generator->eval();
  out.checkpoint_hash = file_sha256(checkpoint);
  return out;
}

MetricsLog::MetricsLog(fs::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
  if (!fs::exists(path_) || fs::file_size(path_) == 0) {
    std::ofstream out(path_);
    if (!out) throw IoError(cat("cannot write metrics log ", path_));
    out << "iteration,z,adv_source,adv_target,cycle,total\n";
  }
}

void MetricsLog::append(const StepResult& step) {
  std::ofstream out(path_, std::ios::app);
  if (!out) throw IoError(cat("cannot append to metrics log ", path_));
  // Mean z over the batch; for K targets the vector joined with ';'.
  std::ostringstream z;
  z.precision(17);
  if (step.z.size() == 1 || step.z.empty()) {
    z << (step.z.empty() ? 0.0 : step.z.front());
  } else {
    for (std::size_t i = 0; i < step.z.size(); ++i) z << (i ? ";" : "") << step.z[i];
  }
  out.precision(17);
  out << step.iteration << ',' << z.str() << ',' << step.generator.adv_source << ',' << step.generator.adv_target
      << ',' << step.generator.cycle << ',' << step.generator.total << '\n';
}

namespace {

torch::Tensor sample_strip(DomainFlowTrainer& trainer, const torch::Tensor& image) {
  torch::NoGradGuard no_grad;
  auto& g = trainer.models().source_to_target;
  std::vector<torch::Tensor> tiles{image};
  const auto k = static_cast<std::size_t>(trainer.config().num_targets);
  if (k == 1) {
    for (double z : {0.0, 0.25, 0.5, 0.75, 1.0}) tiles.push_back(translate(image.unsqueeze(0), DomainnessValue(z), g)[0]);
  } else {
    for (std::size_t i = 0; i < k; ++i) {
      tiles.push_back(translate(image.unsqueeze(0), DomainnessVector::vertex(i, k), g)[0]);
    }
    tiles.push_back(translate(image.unsqueeze(0), DomainnessVector(std::vector<double>(k, 1.0 / k)), g)[0]);
  }
  return torch::cat(tiles, 2);
}

}  // namespace

DomainFlowTrainer run_training(const TrainConfig& config, const TrainRunOptions& options) {
  config.validate();
  auto trainer = options.resume ? DomainFlowTrainer::restore(*options.resume) : DomainFlowTrainer(config);
  const auto& cfg = trainer.config();
  if (cfg.source_dir.empty()) throw ArgumentError("config needs source_dir");
  if (static_cast<std::int64_t>(cfg.target_dirs.size()) != cfg.num_targets) {
    throw ArgumentError(cat("config lists ", cfg.target_dirs.size(), " target_dirs for num_targets = ", cfg.num_targets));
  }
  const auto source = ImageBank::load(DatasetManifest::load(cfg.source_dir), cfg.image_size);
  std::vector<ImageBank> targets;
  for (const auto& dir : cfg.target_dirs) targets.push_back(ImageBank::load(DatasetManifest::load(dir), cfg.image_size));

  const fs::path run_dir = config.run_dir;
  fs::create_directories(run_dir);
  {
    std::ofstream snapshot(run_dir / "config.txt");
    snapshot << format_train_config(cfg);
  }
  MetricsLog log(run_dir / "metrics.csv");
  const auto checkpoint_path = run_dir / "checkpoint.dlow";

  while (trainer.iteration() < cfg.total_iterations) {
    auto& rng = trainer.data_rng();
    const auto xs = source.sample(cfg.batch_size, cfg.crop_size, cfg.flip, rng).images;
    StepResult step;
    if (cfg.num_targets == 1) {
      const auto xt = targets[0].sample(cfg.batch_size, cfg.crop_size, cfg.flip, rng).images;
      step = trainer.train_step(xs, xt);
    } else {
      std::vector<torch::Tensor> xts;
      for (const auto& bank : targets) xts.push_back(bank.sample(cfg.batch_size, cfg.crop_size, cfg.flip, rng).images);
      step = trainer.train_multi_target_step(xs, xts);
    }
    log.append(step);
    if (options.verbose && cfg.log_every > 0 && step.iteration % cfg.log_every == 0) {
      std::cout << "iter " << step.iteration << " z0=" << step.z.front() << " " << describe(step.generator)
                << " critic_s=" << step.critic_source << " critic_t=" << step.critic_target << std::endl;
    }
    if (cfg.checkpoint_every > 0 && trainer.iteration() % cfg.checkpoint_every == 0) {
      trainer.checkpoint(checkpoint_path);
    }
    if (options.on_step && !options.on_step(step)) break;
  }
  trainer.checkpoint(checkpoint_path);
  write_png(run_dir / "samples.png", sample_strip(trainer, source.images[0]));
  return trainer;
}

}  // namespace dlow
