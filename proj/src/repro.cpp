#include "dlow/repro.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>
#include <thread>

#include "dlow/checkpoint.hpp"
#include "dlow/config.hpp"
#include "dlow/errors.hpp"
#include "dlow/segmentation.hpp"
#include "dlow/service.hpp"
#include "dlow/training.hpp"
#include "httplib.h"

namespace dlow {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- statistics helpers -----------------------------------------------

namespace {

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t m = i; m <= j; ++m) out[order[m]] = avg;
    i = j + 1;
  }
  return out;
}

double cross(std::pair<double, double> o, std::pair<double, double> a, std::pair<double, double> b) {
  return (a.first - o.first) * (b.second - o.second) - (a.second - o.second) * (b.first - o.first);
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ArgumentError("spearman needs two equal-length series of length >= 2");
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf) {
  if (samples.empty()) throw ArgumentError("ks_statistic needs samples");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = cdf(samples[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

double ks_critical_value_01(std::size_t n) { return 1.628 / std::sqrt(static_cast<double>(n)); }

bool inside_convex_hull(std::pair<double, double> p, std::vector<std::pair<double, double>> points) {
  if (points.empty()) return false;
  std::sort(points.begin(), points.end());
  points.erase(std::unique(points.begin(), points.end()), points.end());
  if (points.size() == 1) return p == points[0];
  // Andrew's monotone chain, counter-clockwise.
  std::vector<std::pair<double, double>> hull(2 * points.size());
  std::size_t k = 0;
  for (const auto& q : points) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], q) <= 0) --k;
    hull[k++] = q;
  }
  for (std::size_t i = points.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], points[i]) <= 0) --k;
    hull[k++] = points[i];
  }
  hull.resize(k - 1);
  if (hull.size() < 3) {
    // Degenerate: on the segment between the extremes.
    const auto& a = points.front();
    const auto& b = points.back();
    return std::abs(cross(a, b, p)) < 1e-12 && p >= a && p <= b;
  }
  for (std::size_t i = 0; i < hull.size(); ++i) {
    if (cross(hull[i], hull[(i + 1) % hull.size()], p) < 0) return false;
  }
  return true;
}

double objective_gradient_error(DomainFlowModels& models, const torch::Tensor& batch_source,
                                const torch::Tensor& batch_target, const torch::Tensor& z,
                                const ObjectiveConfig& config, double step) {
  auto params = models.generator_parameters();
  for (auto& p : models.all_parameters()) p.mutable_grad() = torch::Tensor();
  full_objective(batch_source, batch_target, z, models, config).total.backward();
  std::vector<torch::Tensor> analytic;
  for (auto& p : params) analytic.push_back(p.grad().detach().clone().contiguous());

  // entries far below the gradient scale (e.g. conv biases ahead of instance norm, exactly zero)
  // sit under the difference quotient's roundoff, so the denominator is floored relative to it
  double grad_scale = 0.0;
  for (const auto& g : analytic) grad_scale = std::max(grad_scale, g.abs().max().item<double>());
  const double floor = std::max(1e-6 * grad_scale, 1e-12);

  torch::NoGradGuard no_grad;
  auto loss = [&] { return full_objective(batch_source, batch_target, z, models, config).total.item<double>(); };
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (p.scalar_type() != torch::kFloat64 || !p.is_contiguous()) {
      throw ArgumentError("gradient check needs contiguous float64 parameters");
    }
    double* data = p.data_ptr<double>();
    const double* grad = analytic[i].data_ptr<double>();
    for (std::int64_t j = 0; j < p.numel(); ++j) {
      const double orig = data[j];
      data[j] = orig + step;
      const double up = loss();
      data[j] = orig - step;
      const double down = loss();
      data[j] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double scale = std::max({std::abs(numeric), std::abs(grad[j]), floor});
      worst = std::max(worst, std::abs(numeric - grad[j]) / scale);
    }
  }
  return worst;
}

std::pair<torch::Tensor, torch::Tensor> render_styled_set(const SyntheticStyleSpec& spec, std::uint64_t content_seed,
                                                          std::int64_t count, std::int64_t size) {
  std::vector<torch::Tensor> images, labels;
  for (std::int64_t i = 0; i < count; ++i) {
    auto [image, mask] = render_content(content_seed, i, size);
    images.push_back(apply_style(image, spec));
    labels.push_back(mask);
  }
  return {torch::stack(images), torch::stack(labels)};
}

double mean_hue(const torch::Tensor& images) {
  const torch::Tensor batch[] = {images};
  return measure_style_statistic(batch, StyleStatistic::kMeanHue);
}

// ---- experiments --------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

std::string fixed(double v, int digits = 3) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(digits) << v;
  return out.str();
}

std::string list(const std::vector<double>& values, int digits = 1) {
  std::string out = "[";
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? ", " : "") + fixed(values[i], digits);
  return out + "]";
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

torch::Tensor translate_all(Generator& g, const torch::Tensor& images, const torch::Tensor& z_row) {
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> out;
  for (std::int64_t i = 0; i < images.size(0); i += 16) {
    const auto n = std::min<std::int64_t>(16, images.size(0) - i);
    out.push_back(g->forward(images.narrow(0, i, n), z_row.expand({n, z_row.size(1)}).contiguous()));
  }
  return torch::cat(out);
}

torch::Tensor scalar_row(double z) { return torch::full({1, 1}, z); }

torch::Tensor vector_row(const DomainnessVector& z) { return z_tensor(z, 1); }

// ---- shared single-target domain-flow run (A4, A6, A7) ----

constexpr double kFlowSourceHue = 0.0;
constexpr double kFlowTargetHue = 120.0;
constexpr std::uint64_t kTrainContent = 1;
constexpr std::uint64_t kHeldOutContent = 2;

struct FlowRun {
  fs::path data_dir;
  fs::path checkpoint;
};

DatasetManifest ensure_domain(const SyntheticStyleSpec& spec, const std::string& name, const fs::path& dir) {
  if (fs::exists(dir / DatasetManifest::kFileName)) return DatasetManifest::load(dir);
  return generate_synthetic_domain(spec, name, dir);
}

SyntheticStyleSpec hue_spec(double theta, std::uint64_t content, std::int64_t count, std::int64_t size) {
  SyntheticStyleSpec s;
  s.kind = StyleKind::kHueRotation;
  s.theta = theta;
  s.content_seed = content;
  s.count = count;
  s.image_size = size;
  return s;
}

FlowRun ensure_flow_run(const ReproOptions& options) {
  FlowRun run;
  run.data_dir = options.work_dir / "flow" / "data";
  ensure_domain(hue_spec(kFlowSourceHue, kTrainContent, 500, 64), "source", run.data_dir / "source");
  ensure_domain(hue_spec(kFlowTargetHue, kTrainContent, 500, 64), "target", run.data_dir / "target");
  TrainConfig config;
  config.total_iterations = options.flow_iterations;
  config.image_size = config.crop_size = 64;
  config.source_dir = (run.data_dir / "source").string();
  config.target_dirs = {(run.data_dir / "target").string()};
  config.target_names = {"hue120"};
  config.experiment = "flow";
  config.run_dir = (options.work_dir / "flow" / "run").string();
  config.log_every = options.verbose ? 200 : 0;
  run.checkpoint = fs::path(config.run_dir) / "checkpoint.dlow";
  if (!fs::exists(run.checkpoint)) {
    TrainRunOptions ro;
    ro.verbose = options.verbose;
    run_training(config, ro);
  }
  return run;
}

torch::Tensor flow_held_out(const ReproOptions& options, double theta, std::int64_t count, std::int64_t size) {
  const auto dir = options.work_dir / "held_out" / cat("hue", static_cast<int>(theta), "_", size);
  auto manifest = ensure_domain(hue_spec(theta, kHeldOutContent, count, size), "held-out", dir);
  return ImageBank::load(manifest, size).images;
}

// ---- multi-target run (A8) ----

constexpr double kMultiSourceHue = 60.0;
constexpr double kMultiTargetHues[] = {0.0, 120.0, 240.0};
constexpr std::int64_t kMultiSize = 32;

TrainConfig multi_base_config(const ReproOptions& options) {
  TrainConfig c;
  c.image_size = c.crop_size = kMultiSize;
  c.ngf = 16;
  c.n_residual = 3;
  c.source_dir = (options.work_dir / "multi" / "data" / "source").string();
  c.log_every = options.verbose ? 500 : 0;
  return c;
}

fs::path ensure_multi_run(const ReproOptions& options, std::optional<std::size_t> single_target) {
  const auto data = options.work_dir / "multi" / "data";
  ensure_domain(hue_spec(kMultiSourceHue, kTrainContent, 500, kMultiSize), "source", data / "source");
  std::vector<std::string> dirs, names;
  for (double hue : kMultiTargetHues) {
    const auto name = cat("hue", static_cast<int>(hue));
    ensure_domain(hue_spec(hue, kTrainContent, 500, kMultiSize), name, data / name);
    dirs.push_back((data / name).string());
    names.push_back(name);
  }
  auto config = multi_base_config(options);
  if (single_target) {
    config.total_iterations = options.single_target_iterations;
    config.target_dirs = {dirs[*single_target]};
    config.target_names = {names[*single_target]};
    config.run_dir = (options.work_dir / "multi" / cat("single_", *single_target)).string();
  } else {
    config.total_iterations = options.multi_target_iterations;
    config.num_targets = 3;
    config.target_dirs = dirs;
    config.target_names = names;
    config.run_dir = (options.work_dir / "multi" / "joint").string();
  }
  const auto ckpt = fs::path(config.run_dir) / "checkpoint.dlow";
  if (!fs::exists(ckpt)) {
    TrainRunOptions ro;
    ro.verbose = options.verbose;
    run_training(config, ro);
  }
  return ckpt;
}

// ---- service fixtures (A9) ----

fs::path write_service_model(const fs::path& path, std::int64_t num_targets, std::vector<std::string> names) {
  TrainConfig c;
  c.image_size = c.crop_size = 32;
  c.ngf = 8;
  c.n_residual = 2;
  c.seed = 7;
  c.num_targets = num_targets;
  c.target_names = std::move(names);
  c.total_iterations = 1;
  DomainFlowTrainer(c).checkpoint(path);
  return path;
}

json normalize(const ServiceResponse& r) {
  json body = r.body;
  body.erase("latency_ms");
  if (body.contains("image")) body["image"] = sha256_hex(base64_decode(body["image"].get<std::string>()));
  if (body.contains("images")) {
    for (auto& img : body["images"]) img = sha256_hex(base64_decode(img.get<std::string>()));
  }
  return {{"status", r.status}, {"body", body}};
}

}  // namespace

CriterionResult check_loss_algebra(const ReproOptions&) {
  CriterionResult r{"A1", "loss algebra", false, "", 0.0};
  Rng rng(12345);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double a = 10.0 * uniform01(rng), b = 10.0 * uniform01(rng), z = uniform01(rng);
    worst = std::max(worst, std::abs(combined_adversarial(a, b, DomainnessValue(z)) - ((1.0 - z) * a + z * b)));
    // tensor path, float64
    auto t = combined_adversarial(torch::tensor({a}, torch::kFloat64), torch::tensor({b}, torch::kFloat64),
                                  torch::tensor({z}, torch::kFloat64));
    worst = std::max(worst, std::abs(t.item<double>() - ((1.0 - z) * a + z * b)));
  }
  bool reductions = true;
  for (int i = 0; i < 100; ++i) {
    const double a = uniform01(rng), b = uniform01(rng);
    reductions &= combined_adversarial(a, b, DomainnessValue(0.0)) == a;
    reductions &= combined_adversarial(a, b, DomainnessValue(1.0)) == b;
  }
  bool weights = true;
  for (int i = 0; i <= 100; ++i) {
    const double z = i / 100.0;
    weights &= boost_weight(DomainnessValue(z)) == std::sqrt(1.0 - z);
  }
  r.passed = worst <= 1e-6 && reductions && weights;
  r.detail = cat("max |err| ", worst, "; z=0/1 reductions ", reductions ? "exact" : "INEXACT", "; sqrt(1-z) grid ",
                 weights ? "exact" : "INEXACT");
  return r;
}

CriterionResult check_sampler_statistics(const ReproOptions&) {
  CriterionResult r{"A2", "sampler statistics", false, "", 0.0};
  const BetaSchedule schedule{2000, 99};
  const std::size_t n = 100000;
  const double critical = ks_critical_value_01(n);
  r.passed = true;
  std::ostringstream detail;
  for (std::int64_t t : {std::int64_t{0}, schedule.total_iterations / 2, schedule.total_iterations}) {
    Rng rng(schedule.rng_seed + static_cast<std::uint64_t>(t));
    const double alpha = alpha_at(t, schedule);
    std::vector<double> draws(n);
    for (auto& d : draws) d = sample_scalar(t, schedule, rng).value();
    const double mean = std::accumulate(draws.begin(), draws.end(), 0.0) / static_cast<double>(n);
    const double expected = alpha / (alpha + 1.0);
    const double d = ks_statistic(draws, [alpha](double z) { return std::pow(z, alpha); });
    const bool ok = std::abs(mean - expected) <= 0.01 && d < critical;
    r.passed &= ok;
    detail << "t=" << t << ": mean " << fixed(mean, 4) << " vs " << fixed(expected, 4) << ", KS " << fixed(d, 5)
           << (ok ? "" : " FAIL") << "; ";
  }
  detail << "KS critical " << fixed(critical, 5);
  r.detail = detail.str();
  return r;
}

CriterionResult check_gradients(const ReproOptions&) {
  CriterionResult r{"A3", "gradient check", false, "", 0.0};
  GeneratorOptions g;
  g.in_channels = 1;
  g.ngf = 4;
  g.n_downsampling = 0;
  g.n_residual = 1;
  DiscriminatorOptions d;
  d.in_channels = 1;
  d.ndf = 4;
  d.n_layers = 1;
  auto models = make_models(g, d, 1, 5);
  models.to(torch::kFloat64);
  auto gen = at::make_generator<at::CPUGeneratorImpl>(77);
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto xs = torch::empty({2, 1, 8, 8}, opts).uniform_(-1, 1, gen);
  auto xt = torch::empty({2, 1, 8, 8}, opts).uniform_(-1, 1, gen);
  double worst = 0.0;
  std::vector<double> per_z;
  for (double z : {0.2, 0.8}) {
    const double e = objective_gradient_error(models, xs, xt, torch::full({2}, z, opts), ObjectiveConfig{});
    per_z.push_back(e);
    worst = std::max(worst, e);
  }
  r.passed = worst < 1e-4;
  r.detail = cat("max relative error z=0.2: ", per_z[0], ", z=0.8: ", per_z[1], " over ",
                 parameter_count(*models.source_to_target) + parameter_count(*models.target_to_source),
                 " generator parameters");
  return r;
}

CriterionResult check_domain_flow(const ReproOptions& options) {
  CriterionResult r{"A4", "monotonic domain flow", false, "", 0.0};
  const auto run = ensure_flow_run(options);
  auto loaded = load_generator(run.checkpoint);
  const auto held_out = flow_held_out(options, kFlowSourceHue, 20, 64);
  const std::vector<double> grid = {0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<double> hues;
  for (double z : grid) hues.push_back(mean_hue(translate_all(loaded.generator, held_out, scalar_row(z))));
  const double rho = spearman(grid, hues);
  const bool between = (hues[2] > std::min(hues[0], hues[4])) && (hues[2] < std::max(hues[0], hues[4]));
  r.passed = rho >= 0.9 && between;
  r.detail = cat("mean hue over z grid ", list(hues), " deg; Spearman ", fixed(rho), "; hue(0.5) ",
                 between ? "strictly between" : "NOT between", " endpoints; ", options.flow_iterations, " iterations");
  return r;
}

CriterionResult check_cyclegan_degeneracy(const ReproOptions&) {
  CriterionResult r{"A5", "CycleGAN degeneracy", false, "", 0.0};
  TrainConfig c;
  c.image_size = c.crop_size = 32;
  c.ngf = 8;
  c.ndf = 16;
  c.n_residual = 2;
  c.z_mode = ZMode::kFixed;
  c.z_fixed = 1.0;
  c.total_iterations = 20;
  c.seed = 3;
  DomainFlowTrainer trainer(c);
  auto ref = clone_models(trainer.models());
  const auto adam = torch::optim::AdamOptions(c.learning_rate).betas({c.beta1, c.beta2});
  torch::optim::Adam opt_g(ref.generator_parameters(), adam);
  torch::optim::Adam opt_ds(ref.source_critic->parameters(), adam);
  torch::optim::Adam opt_dt(ref.target_critic()->parameters(), adam);

  auto [source, _s] = render_styled_set(hue_spec(0.0, 11, 20, 32), 11, 20, 32);
  auto [target, _t] = render_styled_set(hue_spec(120.0, 12, 20, 32), 12, 20, 32);
  const auto one = torch::ones({1, 1});
  auto lsq_g = [](const torch::Tensor& s) { return (s - 1.0).pow(2).mean(); };
  auto lsq_d = [](const torch::Tensor& real, const torch::Tensor& fake) {
    return 0.5 * ((real - 1.0).pow(2).mean() + fake.pow(2).mean());
  };

  double worst = 0.0;
  for (int step = 0; step < 20; ++step) {
    const auto xs = source.narrow(0, step, 1);
    const auto xt = target.narrow(0, step, 1);
    trainer.train_step(xs, xt);

    // plain CycleGAN step, generators pinned to z = 1
    for (auto& p : ref.source_critic->parameters()) p.set_requires_grad(false);
    for (auto& p : ref.target_critic()->parameters()) p.set_requires_grad(false);
    opt_g.zero_grad();
    auto fake_t = ref.source_to_target->forward(xs, one);
    auto fake_s = ref.target_to_source->forward(xt, one);
    auto loss_g = lsq_g(ref.target_critic()->forward(fake_t)) + lsq_g(ref.source_critic->forward(fake_s)) +
                  c.lambda_cyc * ((xs - ref.target_to_source->forward(fake_t, one)).abs().mean() +
                                  (xt - ref.source_to_target->forward(fake_s, one)).abs().mean());
    loss_g.backward();
    opt_g.step();
    for (auto& p : ref.source_critic->parameters()) p.set_requires_grad(true);
    for (auto& p : ref.target_critic()->parameters()) p.set_requires_grad(true);
    opt_ds.zero_grad();
    opt_dt.zero_grad();
    auto loss_d = lsq_d(ref.source_critic->forward(xs), ref.source_critic->forward(fake_s.detach())) +
                  lsq_d(ref.target_critic()->forward(xt), ref.target_critic()->forward(fake_t.detach()));
    loss_d.backward();
    opt_ds.step();
    opt_dt.step();

    const auto a = trainer.models().all_parameters();
    const auto b = ref.all_parameters();
    for (std::size_t i = 0; i < a.size(); ++i) {
      worst = std::max(worst, (a[i] - b[i]).abs().max().item<double>());
    }
  }
  r.passed = worst < 1e-6;
  r.detail = cat("parameter max-abs-diff over 20 steps ", worst);
  return r;
}

CriterionResult check_cycle_quality(const ReproOptions& options) {
  CriterionResult r{"A6", "cycle quality", false, "", 0.0};
  const auto run = ensure_flow_run(options);
  auto forward = load_generator(run.checkpoint, true);
  auto backward = load_generator(run.checkpoint, false);
  const auto held_out = flow_held_out(options, kFlowSourceHue, 20, 64);
  std::vector<double> errors;
  for (double z : {0.25, 0.5, 0.75}) {
    const auto mid = translate_all(forward.generator, held_out, scalar_row(z));
    const auto back = translate_all(backward.generator, mid, scalar_row(z));
    errors.push_back((back - held_out).abs().mean().item<double>());
  }
  const double mean = std::accumulate(errors.begin(), errors.end(), 0.0) / 3.0;
  r.passed = mean <= 0.15;
  r.detail = cat("round-trip L1 at z=0.25/0.5/0.75 ", list(errors, 4), ", mean ", fixed(mean, 4), " (limit 0.15)");
  return r;
}

CriterionResult check_boost_direction(const ReproOptions& options) {
  CriterionResult r{"A7", "boost direction", false, "", 0.0};
  const auto run = ensure_flow_run(options);
  const auto source_manifest = DatasetManifest::load(run.data_dir / "source");
  const auto target_manifest = DatasetManifest::load(run.data_dir / "target");
  const auto stilde_dir = options.work_dir / "boost" / "stilde";
  const auto index = stilde_dir / "index.tsv";
  if (!fs::exists(index)) {
    auto loaded = load_generator(run.checkpoint);
    translate_dataset(source_manifest, loaded.generator, ZAssignment::uniform(), 17, stilde_dir);
  }
  constexpr std::int64_t kSize = 32;
  const auto source = ImageBank::load(source_manifest, kSize);
  torch::Tensor stilde_z;
  const auto stilde = ImageBank::load_index(index, kSize, &stilde_z);
  const auto target = ImageBank::load(target_manifest, kSize);
  const auto eval_dir = options.work_dir / "held_out" / "target_labeled";
  const auto eval = ImageBank::load(ensure_domain(hue_spec(kFlowTargetHue, kHeldOutContent, 100, 64), "eval", eval_dir),
                                    kSize);

  std::vector<double> src_only, stilde_sup, src_adv, stilde_adv;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    BoostConfig b;
    b.seed = seed;
    b.image_size = kSize;
    b.iterations = options.boost_iterations;
    auto score = [&](BoostConfig cfg, const ImageBank& bank, const torch::Tensor& z) {
      auto trainer = run_boost_training(cfg, bank, z, target);
      return 100.0 * evaluate_miou(trainer.model(), eval).mean;
    };
    b.adversarial = false;
    src_only.push_back(score(b, source, {}));
    stilde_sup.push_back(score(b, stilde, stilde_z));
    b.adversarial = true;
    b.domainness_weighting = false;
    src_adv.push_back(score(b, source, {}));
    b.domainness_weighting = true;
    stilde_adv.push_back(score(b, stilde, stilde_z));
    if (options.verbose) {
      std::cout << "  A7 seed " << seed << ": source " << src_only.back() << ", S~ " << stilde_sup.back()
                << ", source+adv " << src_adv.back() << ", S~+weighted adv " << stilde_adv.back() << std::endl;
    }
  }
  const double m_src = median(src_only), m_til = median(stilde_sup), m_adv = median(src_adv),
               m_wadv = median(stilde_adv);
  r.passed = m_til >= m_src + 2.0 && m_wadv >= m_adv;
  r.detail = cat("median target mIoU: source-only ", fixed(m_src, 1), ", S~ (uniform z) ", fixed(m_til, 1),
                 ", source-only adversarial ", fixed(m_adv, 1), ", S~ sqrt(1-z)-weighted adversarial ", fixed(m_wadv, 1),
                 "; per seed ", list(src_only), " ", list(stilde_sup), " ", list(src_adv), " ", list(stilde_adv));
  return r;
}

CriterionResult check_multi_target(const ReproOptions& options) {
  CriterionResult r{"A8", "multi-target degeneracy", false, "", 0.0};
  // Loss identity at every vertex, float64.
  GeneratorOptions g;
  g.ngf = 8;
  g.n_residual = 1;
  DiscriminatorOptions d;
  d.ndf = 8;
  auto multi = make_models(g, d, 3, 21);
  multi.to(torch::kFloat64);
  auto gen = at::make_generator<at::CPUGeneratorImpl>(5);
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  const auto xs = torch::empty({2, 3, kMultiSize, kMultiSize}, opts).uniform_(-1, 1, gen);
  std::vector<torch::Tensor> xts;
  for (int k = 0; k < 3; ++k) xts.push_back(torch::empty({2, 3, kMultiSize, kMultiSize}, opts).uniform_(-1, 1, gen));
  double loss_gap = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    auto single = make_models(g, d, 1, 99);
    single.to(torch::kFloat64);
    copy_parameters(*multi.source_critic, *single.source_critic);
    copy_parameters(*multi.target_critics[k], *single.target_critic());
    for (auto [from, to] : {std::pair{&multi.source_to_target, &single.source_to_target},
                            std::pair{&multi.target_to_source, &single.target_to_source}}) {
      torch::NoGradGuard no_grad;
      auto& src = **from;
      auto& dst = **to;
      auto dst_params = dst.named_parameters();
      for (const auto& item : src.named_parameters()) {
        auto& out = dst_params[item.key()];
        if (item.key() == "embedding.weight") {
          out.copy_(item.value().narrow(0, static_cast<std::int64_t>(k), 1));
        } else {
          out.copy_(item.value());
        }
      }
    }
    const auto vertex = DomainnessVector::vertex(k, 3);
    const double lm = multi_target_objective(xs, xts, vertex, multi, ObjectiveConfig{}).breakdown.total;
    const double ls = full_objective(xs, xts[k], torch::ones({2}, opts), single, ObjectiveConfig{}).breakdown.total;
    loss_gap = std::max(loss_gap, std::abs(lm - ls));
  }
  const bool identity_ok = loss_gap <= 1e-6;

  // Desk run: joint K = 3 model against three single-target models.
  const auto joint_ckpt = ensure_multi_run(options, std::nullopt);
  auto joint = load_generator(joint_ckpt);
  const auto held_out = flow_held_out(options, kMultiSourceHue, 20, kMultiSize);
  std::vector<double> joint_hues, single_hues, gaps;
  std::vector<std::pair<double, double>> vertex_points;
  bool vertices_ok = true;
  for (std::size_t k = 0; k < 3; ++k) {
    auto single = load_generator(ensure_multi_run(options, k));
    const auto tj = translate_all(joint.generator, held_out, vector_row(DomainnessVector::vertex(k, 3)));
    const auto ts = translate_all(single.generator, held_out, scalar_row(1.0));
    joint_hues.push_back(mean_hue(tj));
    single_hues.push_back(mean_hue(ts));
    gaps.push_back(hue_difference(joint_hues.back(), single_hues.back()));
    vertices_ok &= std::abs(gaps.back()) <= 10.0;
    const torch::Tensor batch[] = {tj};
    vertex_points.push_back(hue_resultant(batch));
  }
  const auto mix = translate_all(joint.generator, held_out, vector_row(DomainnessVector({1.0 / 3, 1.0 / 3, 1.0 / 3})));
  const torch::Tensor mix_batch[] = {mix};
  const auto mix_point = hue_resultant(mix_batch);
  const bool hull_ok = inside_convex_hull(mix_point, vertex_points);

  r.passed = identity_ok && vertices_ok && hull_ok;
  r.detail = cat("one-hot loss gap ", loss_gap, "; vertex hues joint ", list(joint_hues), " vs single ",
                 list(single_hues), " (diff ", list(gaps), "); mixture hue ",
                 fixed(std::atan2(mix_point.second, mix_point.first) * 180.0 / M_PI, 1), " ",
                 hull_ok ? "inside" : "OUTSIDE", " vertex hull");
  return r;
}

CriterionResult check_service_contract(const ReproOptions& options) {
  CriterionResult r{"A9", "service contract", false, "", 0.0};
  const auto dir = options.work_dir / "service";
  fs::create_directories(dir);
  ModelRegistry registry;
  registry.add("flow", write_service_model(dir / "flow.dlow", 1, {"target"}));
  registry.add("styles", write_service_model(dir / "styles.dlow", 4, {"Monet", "VanGogh", "Ukiyoe", "Cezanne"}));

  auto [images, _] = render_styled_set(hue_spec(0.0, 4, 2, 40), 4, 2, 40);
  const auto square = base64_encode(encode_png(images[0].narrow(1, 4, 32).narrow(2, 4, 32)));
  const auto wide = base64_encode(encode_png(images[1].narrow(1, 8, 24)));  // 40 x 24

  std::vector<std::string> failures;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };
  std::map<std::string, ServiceResponse> cases;
  cases["translate_ok"] = handle_translate(registry, {{"model", "flow"}, {"image", square}, {"z", 0.5}});
  cases["translate_resized"] = handle_translate(registry, {{"model", "flow"}, {"image", wide}, {"z", 0.25}});
  cases["translate_vector"] =
      handle_translate(registry, {{"model", "styles"}, {"image", square}, {"z", {0.1, 0.2, 0.3, 0.4}}});
  cases["invalid_z_range"] =
      handle_translate(registry, {{"model", "styles"}, {"image", square}, {"z", {0.5, 0.5, 0.5, -0.5}}});
  cases["invalid_z_sum"] =
      handle_translate(registry, {{"model", "styles"}, {"image", square}, {"z", {0.5, 0.5, 0.5, 0.5}}});
  cases["invalid_z_scalar"] = handle_translate(registry, {{"model", "flow"}, {"image", square}, {"z", 1.5}});
  cases["unknown_model"] = handle_translate(registry, {{"model", "nope"}, {"image", square}, {"z", 0.5}});
  cases["bad_image"] = handle_translate(registry, {{"model", "flow"}, {"image", "aGVsbG8="}, {"z", 0.5}});
  const json grid = {0.0, 0.3, 0.6, 0.8, 1.0};
  cases["sweep"] = handle_sweep(registry, {{"model", "flow"}, {"image", square}, {"zs", grid}});
  cases["sweep_empty"] = handle_sweep(registry, {{"model", "flow"}, {"image", square}, {"zs", json::array()}});
  cases["info"] = handle_info(registry);

  // determinism, shape
  const auto again = handle_translate(registry, {{"model", "flow"}, {"image", square}, {"z", 0.5}});
  expect(cases["translate_ok"].status == 200, "translate status");
  expect(again.body["image"] == cases["translate_ok"].body["image"], "repeat translate byte-identical");
  const auto decoded = decode_png(base64_decode(cases["translate_resized"].body["image"].get<std::string>()));
  expect(decoded.size(1) == 24 && decoded.size(2) == 40, "resized translate keeps input dimensions");
  // validation
  expect(cases["invalid_z_range"].status == 422 &&
             cases["invalid_z_range"].body["detail"].get<std::string>().find("range") != std::string::npos,
         "range violation is 422 with diagnostic");
  expect(cases["invalid_z_sum"].status == 422 &&
             cases["invalid_z_sum"].body["detail"].get<std::string>().find("sum") != std::string::npos,
         "sum violation is 422 with diagnostic");
  expect(cases["invalid_z_scalar"].status == 422, "scalar z out of range is 422");
  expect(cases["unknown_model"].status == 404, "unknown model is 404");
  expect(cases["bad_image"].status == 400, "undecodable image is 400");
  // sweep == composed translate
  bool composed = cases["sweep"].status == 200 && cases["sweep"].body["images"].size() == grid.size();
  for (std::size_t i = 0; composed && i < grid.size(); ++i) {
    const auto single = handle_translate(registry, {{"model", "flow"}, {"image", square}, {"z", grid[i]}});
    composed = single.body["image"] == cases["sweep"].body["images"][i];
  }
  expect(composed, "sweep equals composed translate calls");
  expect(cases["sweep_empty"].status == 200 && cases["sweep_empty"].body["images"].empty(), "empty sweep");
  // info
  const auto& models = cases["info"].body["models"];
  bool info_ok = models.size() == 2;
  for (const auto& m : models) {
    if (m["id"] == "styles") info_ok &= m["num_targets"] == 4 && m["domains"].size() == 4;
    info_ok &= m["checkpoint_hash"] == file_sha256(dir / (m["id"].get<std::string>() + ".dlow"));
  }
  expect(info_ok, "info metadata and hashes");
  ModelRegistry empty;
  expect(handle_info(empty).body["models"].empty(), "info with no models");

  // concurrent identical requests over HTTP
  {
    ServiceServer server(registry);
    const int port = server.start("127.0.0.1", 0);
    const std::string body = json{{"model", "flow"}, {"image", square}, {"z", 0.5}}.dump();
    std::vector<std::string> payloads(4);
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < payloads.size(); ++i) {
      threads.emplace_back([&, i] {
        httplib::Client client("127.0.0.1", port);
        if (auto res = client.Post("/translate", body, "application/json"); res && res->status == 200) {
          payloads[i] = json::parse(res->body)["image"].get<std::string>();
        }
      });
    }
    for (auto& t : threads) t.join();
    bool same = true;
    for (const auto& p : payloads) same &= p == cases["translate_ok"].body["image"].get<std::string>();
    expect(same, "concurrent HTTP requests return identical payloads");
    server.stop();
  }

  // golden files
  std::size_t golden_checked = 0;
  if (!options.golden_dir.empty()) {
    cases.erase("info");  // hashes depend on the checkpoint bytes
    for (const auto& [name, response] : cases) {
      const auto path = options.golden_dir / (name + ".json");
      const auto actual = normalize(response);
      if (options.update_golden) {
        fs::create_directories(options.golden_dir);
        std::ofstream(path) << actual.dump(2) << "\n";
        continue;
      }
      std::ifstream in(path);
      if (!in) {
        failures.push_back("missing golden " + path.string());
        continue;
      }
      if (json::parse(in) != actual) failures.push_back("golden mismatch: " + name);
      ++golden_checked;
    }
  }
  r.passed = failures.empty();
  std::string joined;
  for (const auto& f : failures) joined += (joined.empty() ? "" : "; ") + f;
  r.detail = failures.empty() ? cat("all contract checks hold; ", golden_checked, " golden responses match")
                              : "failed: " + joined;
  return r;
}

std::vector<std::string> criterion_ids() { return {"A1", "A2", "A3", "A4", "A5", "A6", "A7", "A8", "A9"}; }

std::vector<CriterionResult> run_acceptance(const ReproOptions& options, const std::vector<std::string>& ids,
                                            std::ostream& out) {
  using Check = CriterionResult (*)(const ReproOptions&);
  const std::vector<std::pair<std::string, Check>> table = {
      {"A1", check_loss_algebra},     {"A2", check_sampler_statistics}, {"A3", check_gradients},
      {"A4", check_domain_flow},      {"A5", check_cyclegan_degeneracy}, {"A6", check_cycle_quality},
      {"A7", check_boost_direction},  {"A8", check_multi_target},       {"A9", check_service_contract}};
  for (const auto& id : ids) {
    if (std::none_of(table.begin(), table.end(), [&](const auto& e) { return e.first == id; })) {
      throw ArgumentError(cat("unknown criterion '", id, "'"));
    }
  }
  std::vector<CriterionResult> results;
  for (const auto& [id, check] : table) {
    if (!ids.empty() && std::find(ids.begin(), ids.end(), id) == ids.end()) continue;
    const auto start = Clock::now();
    CriterionResult r;
    try {
      r = check(options);
    } catch (const std::exception& e) {
      r.id = id;
      r.title = "error";
      r.passed = false;
      r.detail = e.what();
    }
    r.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    out << format_result(r) << std::endl;
    results.push_back(std::move(r));
  }
  return results;
}

std::string format_result(const CriterionResult& r) {
  return cat(r.id, " ", r.passed ? "PASS" : "FAIL", "  ", r.title, " (", fixed(r.seconds, 1), " s): ", r.detail);
}

}  // namespace dlow
