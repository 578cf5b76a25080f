#pragma once

#include <torch/torch.h>

#include <cstdint>

#include "dlow/domainness.hpp"

namespace dlow {

/// Width of the domainness embedding fed to every conditional norm.
inline constexpr std::int64_t kEmbeddingChannels = 16;

struct GeneratorOptions {
  std::int64_t in_channels = 3;
  std::int64_t ngf = 16;
  std::int64_t n_downsampling = 2;
  std::int64_t n_residual = 4;
  /// 1 for scalar z, K for a K-target domainness vector.
  std::int64_t z_dim = 1;
  std::int64_t outer_kernel = 7;
  /// When false only the residual blocks are conditioned; the encoder and
  /// decoder use plain instance norm.
  bool condition_all_norms = true;

  bool operator==(const GeneratorOptions&) const = default;
};

struct DiscriminatorOptions {
  std::int64_t in_channels = 3;
  std::int64_t ndf = 32;
  /// Number of stride-2 convolutions.
  std::int64_t n_layers = 3;

  bool operator==(const DiscriminatorOptions&) const = default;
};

/// Instance norm whose scale and shift are predicted from the domainness
/// embedding: y = (1 + gamma(e)) * norm(x) + beta(e). With conditioning
/// disabled it is a plain affine-free instance norm.
class CondInstanceNormImpl : public torch::nn::Module {
 public:
  CondInstanceNormImpl(std::int64_t channels, bool conditioned);

  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& embedding);

  bool conditioned() const { return !head_.is_empty(); }

 private:
  std::int64_t channels_;
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(CondInstanceNorm);

/// conv (or transposed conv) -> conditional instance norm -> optional ReLU.
class ConvNormBlockImpl : public torch::nn::Module {
 public:
  enum class Kind { kReflectConv, kStridedConv, kUpConv };

  ConvNormBlockImpl(Kind kind, std::int64_t in, std::int64_t out, std::int64_t kernel, bool relu, bool conditioned);

  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& embedding);

 private:
  Kind kind_;
  std::int64_t reflect_pad_ = 0;
  bool relu_;
  torch::nn::Conv2d conv_{nullptr};
  torch::nn::ConvTranspose2d deconv_{nullptr};
  CondInstanceNorm norm_{nullptr};
};
TORCH_MODULE(ConvNormBlock);

class ResidualBlockImpl : public torch::nn::Module {
 public:
  ResidualBlockImpl(std::int64_t channels, bool conditioned);

  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& embedding);

 private:
  ConvNormBlock first_{nullptr};
  ConvNormBlock second_{nullptr};
};
TORCH_MODULE(ResidualBlock);

/// Domainness-conditioned encoder / residual / decoder generator. z enters
/// only through a 1x1 transposed convolution producing a (N, 16, 1, 1)
/// embedding that drives the conditional norms.
class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(const GeneratorOptions& options);

  /// x: (N, C, H, W) in [-1, 1]; z: (N, z_dim). Output has x's shape, in [-1, 1].
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& z);

  /// (N, z_dim) -> (N, 16, 1, 1).
  torch::Tensor embed(const torch::Tensor& z);

  const GeneratorOptions& options() const { return options_; }
  torch::nn::ConvTranspose2d& embedding_layer() { return embedding_; }

 private:
  GeneratorOptions options_;
  torch::nn::ConvTranspose2d embedding_{nullptr};
  ConvNormBlock stem_{nullptr};
  torch::nn::ModuleList down_;
  torch::nn::ModuleList residual_;
  torch::nn::ModuleList up_;
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(Generator);

/// Patch discriminator: n_layers stride-2 4x4 convs, then two stride-1 4x4
/// convs; one unbounded score per receptive-field patch.
class PatchDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit PatchDiscriminatorImpl(const DiscriminatorOptions& options);

  torch::Tensor forward(const torch::Tensor& x);

  const DiscriminatorOptions& options() const { return options_; }

 private:
  DiscriminatorOptions options_;
  torch::nn::Sequential body_;
};
TORCH_MODULE(PatchDiscriminator);

/// Re-draws every parameter from `seed`: conv and conditioning-head weights
/// N(0, 0.02), biases 0, the domainness embedding U(-1/sqrt(K), 1/sqrt(K))
/// so conditioning is live from the first step. Independent of the global
/// torch RNG.
void initialize_parameters(torch::nn::Module& module, std::uint64_t seed);

/// Spatial size of the patch map for a square input of side `size`.
std::int64_t patch_map_size(std::int64_t size, const DiscriminatorOptions& options);

/// z as a (n, 1) tensor.
torch::Tensor z_tensor(DomainnessValue z, std::int64_t n, torch::Dtype dtype = torch::kFloat32);
/// zvec as a (n, K) tensor.
torch::Tensor z_tensor(const DomainnessVector& z, std::int64_t n, torch::Dtype dtype = torch::kFloat32);

/// Embedding of a single domainness value, shape (1, 16, 1, 1).
torch::Tensor embed_domainness(DomainnessValue z, Generator& g);

/// Validated forward pass: checks rank, channel count, divisibility by the
/// encoder stride and that z has one row per image.
torch::Tensor translate(const torch::Tensor& x, const torch::Tensor& z, Generator& g);
torch::Tensor translate(const torch::Tensor& x, DomainnessValue z, Generator& g);
torch::Tensor translate(const torch::Tensor& x, const DomainnessVector& z, Generator& g);

torch::Tensor discriminate(const torch::Tensor& x, PatchDiscriminator& d);

/// Number of scalar parameters.
std::int64_t parameter_count(const torch::nn::Module& module);


/// The four (or 3 + K) networks of a domain-flow model. For K targets
/// `target_critics` holds one discriminator per target domain.
struct DomainFlowModels {
  Generator source_to_target{nullptr};
  Generator target_to_source{nullptr};
  PatchDiscriminator source_critic{nullptr};
  std::vector<PatchDiscriminator> target_critics;

  std::size_t num_targets() const { return target_critics.size(); }
  PatchDiscriminator& target_critic() { return target_critics.at(0); }

  std::vector<torch::Tensor> generator_parameters() const;
  /// Every parameter in a fixed order: G_ST, G_TS, D_S, D_T1..D_TK.
  std::vector<torch::Tensor> all_parameters() const;
  void to(torch::Dtype dtype);
  void train(bool on = true);
};

/// Builds generators with z_dim = num_targets and initializes each network
/// from a seed derived from `seed`.
DomainFlowModels make_models(const GeneratorOptions& generator, const DiscriminatorOptions& critic,
                             std::size_t num_targets, std::uint64_t seed);

/// Copies parameter values by name; throws ArgumentError on any mismatch.
void copy_parameters(const torch::nn::Module& from, torch::nn::Module& to);

/// Deep copy with identical parameter values.
DomainFlowModels clone_models(const DomainFlowModels& models);

}  // namespace dlow
