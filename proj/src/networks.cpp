#include "dlow/networks.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <cmath>
#include <string_view>

#include "dlow/errors.hpp"

namespace dlow {

namespace F = torch::nn::functional;

namespace {

torch::Tensor reflect_pad(const torch::Tensor& x, std::int64_t pad) {
  if (pad == 0) return x;
  return F::pad(x, F::PadFuncOptions({pad, pad, pad, pad}).mode(torch::kReflect));
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace

CondInstanceNormImpl::CondInstanceNormImpl(std::int64_t channels, bool conditioned) : channels_(channels) {
  if (conditioned) head_ = register_module("head", torch::nn::Linear(kEmbeddingChannels, 2 * channels));
}

torch::Tensor CondInstanceNormImpl::forward(const torch::Tensor& x, const torch::Tensor& embedding) {
  auto normalized = F::instance_norm(x, F::InstanceNormFuncOptions().eps(1e-5));
  if (head_.is_empty()) return normalized;
  auto affine = head_->forward(embedding.flatten(1));  // (N, 2C)
  auto gamma = affine.narrow(1, 0, channels_).view({-1, channels_, 1, 1});
  auto beta = affine.narrow(1, channels_, channels_).view({-1, channels_, 1, 1});
  return normalized * (1.0 + gamma) + beta;
}

ConvNormBlockImpl::ConvNormBlockImpl(Kind kind, std::int64_t in, std::int64_t out, std::int64_t kernel, bool relu,
                                     bool conditioned)
    : kind_(kind), relu_(relu) {
  switch (kind) {
    case Kind::kReflectConv:
      reflect_pad_ = kernel / 2;
      conv_ = register_module("conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, kernel)));
      break;
    case Kind::kStridedConv:
      conv_ = register_module(
          "conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, kernel).stride(2).padding(kernel / 2)));
      break;
    case Kind::kUpConv:
      deconv_ = register_module("deconv", torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(in, out, kernel)
                                                                          .stride(2)
                                                                          .padding(kernel / 2)
                                                                          .output_padding(1)));
      break;
  }
  norm_ = register_module("norm", CondInstanceNorm(out, conditioned));
}

torch::Tensor ConvNormBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& embedding) {
  auto y = kind_ == Kind::kUpConv ? deconv_->forward(x) : conv_->forward(reflect_pad(x, reflect_pad_));
  y = norm_->forward(y, embedding);
  return relu_ ? torch::relu(y) : y;
}

ResidualBlockImpl::ResidualBlockImpl(std::int64_t channels, bool conditioned) {
  using Kind = ConvNormBlockImpl::Kind;
  first_ = register_module("first", ConvNormBlock(Kind::kReflectConv, channels, channels, 3, true, conditioned));
  second_ = register_module("second", ConvNormBlock(Kind::kReflectConv, channels, channels, 3, false, conditioned));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& embedding) {
  return x + second_->forward(first_->forward(x, embedding), embedding);
}

GeneratorImpl::GeneratorImpl(const GeneratorOptions& options) : options_(options) {
  using Kind = ConvNormBlockImpl::Kind;
  if (options.in_channels < 1 || options.ngf < 1 || options.z_dim < 1 || options.n_downsampling < 0 ||
      options.n_residual < 0 || options.outer_kernel < 1 || options.outer_kernel % 2 == 0) {
    throw ArgumentError("invalid generator options");
  }
  const bool outer_cond = options.condition_all_norms;
  embedding_ = register_module(
      "embedding", torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(options.z_dim, kEmbeddingChannels, 1)));
  stem_ = register_module(
      "stem", ConvNormBlock(Kind::kReflectConv, options.in_channels, options.ngf, options.outer_kernel, true, outer_cond));
  std::int64_t channels = options.ngf;
  for (std::int64_t i = 0; i < options.n_downsampling; ++i) {
    down_->push_back(ConvNormBlock(Kind::kStridedConv, channels, channels * 2, 3, true, outer_cond));
    channels *= 2;
  }
  for (std::int64_t i = 0; i < options.n_residual; ++i) residual_->push_back(ResidualBlock(channels, true));
  for (std::int64_t i = 0; i < options.n_downsampling; ++i) {
    up_->push_back(ConvNormBlock(Kind::kUpConv, channels, channels / 2, 3, true, outer_cond));
    channels /= 2;
  }
  register_module("down", down_);
  register_module("residual", residual_);
  register_module("up", up_);
  head_ = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, options.in_channels,
                                                                              options.outer_kernel)));
}

torch::Tensor GeneratorImpl::embed(const torch::Tensor& z) {
  auto zz = z.dim() == 1 ? z.unsqueeze(1) : z;
  return embedding_->forward(zz.view({zz.size(0), options_.z_dim, 1, 1}));
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& x, const torch::Tensor& z) {
  const auto embedding = embed(z);
  auto y = stem_->forward(x, embedding);
  for (auto& m : *down_) y = m->as<ConvNormBlockImpl>()->forward(y, embedding);
  for (auto& m : *residual_) y = m->as<ResidualBlockImpl>()->forward(y, embedding);
  for (auto& m : *up_) y = m->as<ConvNormBlockImpl>()->forward(y, embedding);
  return torch::tanh(head_->forward(reflect_pad(y, options_.outer_kernel / 2)));
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(const DiscriminatorOptions& options) : options_(options) {
  using namespace torch::nn;
  if (options.in_channels < 1 || options.ndf < 1 || options.n_layers < 1) {
    throw ArgumentError("invalid discriminator options");
  }
  const auto lrelu = [] { return LeakyReLU(LeakyReLUOptions().negative_slope(0.2)); };
  body_->push_back(Conv2d(Conv2dOptions(options.in_channels, options.ndf, 4).stride(2).padding(1)));
  body_->push_back(lrelu());
  std::int64_t mult = 1;
  for (std::int64_t i = 1; i < options.n_layers; ++i) {
    const auto prev = mult;
    mult = std::min<std::int64_t>(std::int64_t{1} << i, 8);
    body_->push_back(Conv2d(Conv2dOptions(options.ndf * prev, options.ndf * mult, 4).stride(2).padding(1)));
    body_->push_back(InstanceNorm2d(InstanceNorm2dOptions(options.ndf * mult)));
    body_->push_back(lrelu());
  }
  const auto prev = mult;
  mult = std::min<std::int64_t>(std::int64_t{1} << options.n_layers, 8);
  body_->push_back(Conv2d(Conv2dOptions(options.ndf * prev, options.ndf * mult, 4).stride(1).padding(1)));
  body_->push_back(InstanceNorm2d(InstanceNorm2dOptions(options.ndf * mult)));
  body_->push_back(lrelu());
  body_->push_back(Conv2d(Conv2dOptions(options.ndf * mult, 1, 4).stride(1).padding(1)));
  register_module("body", body_);
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& x) { return body_->forward(x); }

void initialize_parameters(torch::nn::Module& module, std::uint64_t seed) {
  torch::NoGradGuard no_grad;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  for (const auto& item : module.named_modules("", /*include_self=*/true)) {
    const auto& name = item.key();
    auto& m = *item.value();
    if (auto* deconv = m.as<torch::nn::ConvTranspose2dImpl>(); deconv && ends_with(name, "embedding")) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(deconv->options.in_channels()));
      deconv->weight.uniform_(-bound, bound, gen);
      deconv->bias.uniform_(-bound, bound, gen);
    } else if (auto* conv = m.as<torch::nn::Conv2dImpl>()) {
      conv->weight.normal_(0.0, 0.02, gen);
      if (conv->bias.defined()) conv->bias.zero_();
    } else if (auto* up = m.as<torch::nn::ConvTranspose2dImpl>()) {
      up->weight.normal_(0.0, 0.02, gen);
      if (up->bias.defined()) up->bias.zero_();
    } else if (auto* linear = m.as<torch::nn::LinearImpl>()) {
      linear->weight.normal_(0.0, 0.02, gen);
      linear->bias.zero_();
    }
  }
}

std::int64_t patch_map_size(std::int64_t size, const DiscriminatorOptions& options) {
  for (std::int64_t i = 0; i < options.n_layers; ++i) size = (size + 2 - 4) / 2 + 1;
  return size - 2;
}

torch::Tensor z_tensor(DomainnessValue z, std::int64_t n, torch::Dtype dtype) {
  return torch::full({n, 1}, z.value(), torch::TensorOptions().dtype(dtype));
}

torch::Tensor z_tensor(const DomainnessVector& z, std::int64_t n, torch::Dtype dtype) {
  auto row = torch::tensor(std::vector<double>(z.values().begin(), z.values().end()), torch::kFloat64);
  return row.unsqueeze(0).expand({n, static_cast<std::int64_t>(z.size())}).to(dtype).contiguous();
}

torch::Tensor embed_domainness(DomainnessValue z, Generator& g) {
  if (g->options().z_dim != 1) throw ArgumentError("scalar domainness needs a generator with z_dim = 1");
  const auto dtype = g->embedding_layer()->weight.scalar_type();
  return g->embed(z_tensor(z, 1, dtype));
}

torch::Tensor translate(const torch::Tensor& x, const torch::Tensor& z, Generator& g) {
  const auto& opt = g->options();
  if (x.dim() != 4) throw ArgumentError(cat("translate expects (N, C, H, W), got rank ", x.dim()));
  if (x.size(1) != opt.in_channels) {
    throw ArgumentError(cat("translate: input has ", x.size(1), " channels, model expects ", opt.in_channels));
  }
  const std::int64_t stride = std::int64_t{1} << opt.n_downsampling;
  if (x.size(2) % stride != 0 || x.size(3) % stride != 0) {
    throw ArgumentError(cat("translate: spatial size ", x.size(2), "x", x.size(3), " not divisible by ", stride));
  }
  if (x.size(2) <= opt.outer_kernel / 2 || x.size(3) <= opt.outer_kernel / 2) {
    throw ArgumentError("translate: image smaller than the reflection padding");
  }
  const auto zz = z.dim() == 1 ? z.unsqueeze(1) : z;
  if (zz.dim() != 2 || zz.size(0) != x.size(0) || zz.size(1) != opt.z_dim) {
    throw ArgumentError(cat("translate: z must have shape (", x.size(0), ", ", opt.z_dim, ")"));
  }
  return g->forward(x, zz.to(x.scalar_type()));
}

torch::Tensor translate(const torch::Tensor& x, DomainnessValue z, Generator& g) {
  return translate(x, z_tensor(z, x.size(0), x.scalar_type()), g);
}

torch::Tensor translate(const torch::Tensor& x, const DomainnessVector& z, Generator& g) {
  return translate(x, z_tensor(z, x.size(0), x.scalar_type()), g);
}

torch::Tensor discriminate(const torch::Tensor& x, PatchDiscriminator& d) {
  if (x.dim() != 4 || x.size(1) != d->options().in_channels) {
    throw ArgumentError(cat("discriminate expects (N, ", d->options().in_channels, ", H, W)"));
  }
  if (patch_map_size(std::min(x.size(2), x.size(3)), d->options()) < 1) {
    throw ArgumentError("discriminate: image too small for the patch stack");
  }
  return d->forward(x);
}

std::int64_t parameter_count(const torch::nn::Module& module) {
  std::int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

}  // namespace dlow

namespace dlow {

std::vector<torch::Tensor> DomainFlowModels::generator_parameters() const {
  auto params = source_to_target->parameters();
  for (auto& p : target_to_source->parameters()) params.push_back(p);
  return params;
}

std::vector<torch::Tensor> DomainFlowModels::all_parameters() const {
  auto params = generator_parameters();
  for (auto& p : source_critic->parameters()) params.push_back(p);
  for (const auto& d : target_critics) {
    for (auto& p : d->parameters()) params.push_back(p);
  }
  return params;
}

void DomainFlowModels::to(torch::Dtype dtype) {
  source_to_target->to(dtype);
  target_to_source->to(dtype);
  source_critic->to(dtype);
  for (auto& d : target_critics) d->to(dtype);
}

void DomainFlowModels::train(bool on) {
  source_to_target->train(on);
  target_to_source->train(on);
  source_critic->train(on);
  for (auto& d : target_critics) d->train(on);
}

DomainFlowModels make_models(const GeneratorOptions& generator, const DiscriminatorOptions& critic,
                             std::size_t num_targets, std::uint64_t seed) {
  if (num_targets < 1) throw ArgumentError("a domain-flow model needs at least one target domain");
  GeneratorOptions gopt = generator;
  gopt.z_dim = static_cast<std::int64_t>(num_targets);
  DomainFlowModels m;
  m.source_to_target = Generator(gopt);
  m.target_to_source = Generator(gopt);
  m.source_critic = PatchDiscriminator(critic);
  initialize_parameters(*m.source_to_target, seed * 1000003ULL + 1);
  initialize_parameters(*m.target_to_source, seed * 1000003ULL + 2);
  initialize_parameters(*m.source_critic, seed * 1000003ULL + 3);
  for (std::size_t k = 0; k < num_targets; ++k) {
    m.target_critics.emplace_back(critic);
    initialize_parameters(*m.target_critics.back(), seed * 1000003ULL + 4 + k);
  }
  return m;
}

void copy_parameters(const torch::nn::Module& from, torch::nn::Module& to) {
  torch::NoGradGuard no_grad;
  auto source = from.named_parameters();
  auto dest = to.named_parameters();
  if (source.size() != dest.size()) throw ArgumentError("copy_parameters: parameter count mismatch");
  for (auto& item : dest) {
    const auto* src = source.find(item.key());
    if (src == nullptr || !src->sizes().equals(item.value().sizes())) {
      throw ArgumentError(cat("copy_parameters: no matching parameter for ", item.key()));
    }
    item.value().copy_(*src);
  }
}

DomainFlowModels clone_models(const DomainFlowModels& models) {
  DomainFlowModels out;
  out.source_to_target = Generator(models.source_to_target->options());
  out.target_to_source = Generator(models.target_to_source->options());
  out.source_critic = PatchDiscriminator(models.source_critic->options());
  const auto dtype = models.source_critic->parameters().front().scalar_type();
  out.to(dtype);
  copy_parameters(*models.source_to_target, *out.source_to_target);
  copy_parameters(*models.target_to_source, *out.target_to_source);
  copy_parameters(*models.source_critic, *out.source_critic);
  for (const auto& d : models.target_critics) {
    out.target_critics.emplace_back(d->options());
    out.target_critics.back()->to(dtype);
    copy_parameters(*d, *out.target_critics.back());
  }
  return out;
}

}  // namespace dlow
