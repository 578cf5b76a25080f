#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dlow/dataset.hpp"
#include "dlow/networks.hpp"
#include "dlow/objectives.hpp"

namespace dlow {

// ---- statistics helpers -----------------------------------------------

/// Spearman rank correlation; ties get their average rank.
double spearman(std::span<const double> x, std::span<const double> y);

/// sup |F_n(x) - F(x)| for the empirical CDF of `samples`.
double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf);

/// Asymptotic one-sample KS critical value at significance 0.01.
double ks_critical_value_01(std::size_t n);

/// True when `p` lies inside (or on) the convex hull of `points`.
bool inside_convex_hull(std::pair<double, double> p, std::vector<std::pair<double, double>> points);

/// Max relative error between analytic and central-difference gradients of
/// the full objective with respect to every generator parameter, with the
/// denominator floored at 1e-6 of the largest gradient entry. Models
/// must already be float64.
double objective_gradient_error(DomainFlowModels& models, const torch::Tensor& batch_source,
                                const torch::Tensor& batch_target, const torch::Tensor& z,
                                const ObjectiveConfig& config, double step = 1e-5);

/// `count` images of content family `content_seed` rendered with `spec`'s
/// style at `size`: {(N, 3, S, S), (N, S, S)}.
std::pair<torch::Tensor, torch::Tensor> render_styled_set(const SyntheticStyleSpec& spec, std::uint64_t content_seed,
                                                          std::int64_t count, std::int64_t size);

/// Mean hue of a (N, 3, H, W) batch.
double mean_hue(const torch::Tensor& images);

// ---- acceptance experiments -------------------------------------------

struct CriterionResult {
  std::string id;
  std::string title;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct ReproOptions {
  /// Scratch space for generated data, runs and checkpoints.
  std::filesystem::path work_dir = "repro-work";
  /// Reference responses for the service contract; empty skips the golden
  /// comparison. With `update_golden` they are rewritten instead.
  std::filesystem::path golden_dir;
  bool update_golden = false;
  bool verbose = false;
  std::int64_t flow_iterations = 2000;
  std::int64_t multi_target_iterations = 3000;
  std::int64_t single_target_iterations = 1500;
  std::int64_t boost_iterations = 500;
};

CriterionResult check_loss_algebra(const ReproOptions& options);
CriterionResult check_sampler_statistics(const ReproOptions& options);
CriterionResult check_gradients(const ReproOptions& options);
CriterionResult check_domain_flow(const ReproOptions& options);
CriterionResult check_cyclegan_degeneracy(const ReproOptions& options);
CriterionResult check_cycle_quality(const ReproOptions& options);
CriterionResult check_boost_direction(const ReproOptions& options);
CriterionResult check_multi_target(const ReproOptions& options);
CriterionResult check_service_contract(const ReproOptions& options);

/// Ids "A1" .. "A9" in order.
std::vector<std::string> criterion_ids();

/// Runs the selected criteria (all when empty), printing one line per
/// criterion to `out` as it finishes. Exceptions count as failures.
std::vector<CriterionResult> run_acceptance(const ReproOptions& options, const std::vector<std::string>& ids,
                                            std::ostream& out);

std::string format_result(const CriterionResult& r);

}  // namespace dlow
