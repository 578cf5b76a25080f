#include <torch/torch.h>

#include <cmath>
#include <vector>

#include "testing.hpp"
#include "dlow/errors.hpp"
#include "dlow/objectives.hpp"
#include "helpers.hpp"

using namespace dlow;
using namespace dlow::test;

namespace {

torch::Tensor full(double v, std::vector<std::int64_t> shape = {2, 1, 6, 6}) {
  return torch::full(shape, v, torch::kFloat64);
}

double scalar(const torch::Tensor& t) { return t.item<double>(); }

DomainFlowModels tiny_models(std::size_t k, std::uint64_t seed) {
  GeneratorOptions g;
  g.ngf = 4;
  g.n_downsampling = 1;
  g.n_residual = 1;
  DiscriminatorOptions d{3, 4, 1};
  auto m = make_models(g, d, k, seed);
  m.to(torch::kFloat64);
  return m;
}

torch::Tensor images(std::int64_t n, std::uint64_t seed, std::int64_t size = 16) {
  auto gen = at::detail::createCPUGenerator(seed);
  return torch::rand({n, 3, size, size}, gen, torch::kFloat64) * 2 - 1;
}

double mean_abs_brute_force(const torch::Tensor& a, const torch::Tensor& b) {
  const auto fa = a.contiguous().flatten();
  const auto fb = b.contiguous().flatten();
  const double* pa = fa.data_ptr<double>();
  const double* pb = fb.data_ptr<double>();
  double sum = 0.0;
  for (std::int64_t i = 0; i < fa.numel(); ++i) sum += std::abs(pa[i] - pb[i]);
  return sum / static_cast<double>(fa.numel());
}

double lsq_generator(const torch::Tensor& scores) { return scalar((scores - 1).pow(2).mean()); }

}  // namespace

TEST_SUITE("objectives") {
  TEST_CASE("least-squares adversarial examples") {
    const auto lsq = GanLossKind::kLeastSquares;
    CHECK(scalar(adversarial_pair(full(0), full(1), CriticRole::kDiscriminator, lsq)) == 0.0);
    CHECK(scalar(adversarial_pair(full(1), {}, CriticRole::kGenerator, lsq)) == 0.0);
    CHECK(scalar(adversarial_pair(full(0.5), full(0.5), CriticRole::kDiscriminator, lsq)) == doctest::Approx(0.25));
    CHECK_THROWS_AS(adversarial_pair(full(0), {}, CriticRole::kDiscriminator, lsq), ArgumentError);
  }

  TEST_CASE("log loss matches the logistic formula") {
    auto gen = at::detail::createCPUGenerator(3);
    const auto f = torch::randn({2, 1, 4, 4}, gen, torch::kFloat64);
    const auto r = torch::randn({2, 1, 4, 4}, gen, torch::kFloat64);
    auto softplus = [](const torch::Tensor& x) { return torch::log1p(torch::exp(x)); };
    const double d = 0.5 * (scalar(softplus(-r).mean()) + scalar(softplus(f).mean()));
    const double g = scalar(softplus(-f).mean());
    CHECK(scalar(adversarial_pair(f, r, CriticRole::kDiscriminator, GanLossKind::kLog)) == doctest::Approx(d));
    CHECK(scalar(adversarial_pair(f, {}, CriticRole::kGenerator, GanLossKind::kLog)) == doctest::Approx(g));
  }

  TEST_CASE("per-sample loss averages to the pair loss") {
    auto gen = at::detail::createCPUGenerator(4);
    const auto f = torch::randn({3, 1, 5, 5}, gen, torch::kFloat64);
    const auto r = torch::randn({3, 1, 5, 5}, gen, torch::kFloat64);
    for (auto kind : {GanLossKind::kLeastSquares, GanLossKind::kLog}) {
      for (auto role : {CriticRole::kGenerator, CriticRole::kDiscriminator}) {
        const auto per = adversarial_per_sample(f, r, role, kind);
        CHECK(per.sizes() == torch::IntArrayRef({3}));
        CHECK(scalar(per.mean()) == doctest::Approx(scalar(adversarial_pair(f, r, role, kind))));
      }
    }
  }

  TEST_CASE("non-finite scores are rejected") {
    auto bad = full(0);
    bad[0][0][0][0] = std::nan("");
    CHECK_THROWS_AS(adversarial_pair(bad, full(1), CriticRole::kDiscriminator, GanLossKind::kLeastSquares),
                    NumericError);
    CHECK_THROWS_AS(adversarial_pair(full(0), bad, CriticRole::kDiscriminator, GanLossKind::kLeastSquares),
                    NumericError);
  }

  TEST_CASE("combined adversarial") {
    CHECK(combined_adversarial(3.7, 1.1, DomainnessValue(0.0)) == 3.7);
    CHECK(combined_adversarial(3.7, 1.1, DomainnessValue(1.0)) == 1.1);
    CHECK(combined_adversarial(2.0, 1.0, DomainnessValue(0.3)) == doctest::Approx(1.7));
    const auto t = combined_adversarial(torch::tensor({2.0, 2.0}), torch::tensor({1.0, 1.0}), torch::tensor({0.3, 1.0}));
    CHECK(t[0].item<double>() == doctest::Approx(1.7));
    CHECK(t[1].item<double>() == 1.0);
  }

  TEST_CASE("combined adversarial is affine in z") {
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
      const double a = uniform01(rng) * 4, b = uniform01(rng) * 4, z = uniform01(rng);
      const double v = combined_adversarial(a, b, DomainnessValue(z));
      CHECK(v >= std::min(a, b) - 1e-12);
      CHECK(v <= std::max(a, b) + 1e-12);
      CHECK(v == doctest::Approx(a + z * (b - a)));
    }
  }

  TEST_CASE("cycle loss") {
    const auto x = images(2, 1);
    CHECK(scalar(cycle_loss(x, x)) == 0.0);
    CHECK(scalar(cycle_loss(x, x + 0.5)) == doctest::Approx(0.5));
    const auto y = images(2, 2);
    CHECK(scalar(cycle_loss(x, y)) == doctest::Approx(mean_abs_brute_force(x, y)).epsilon(1e-12));
    CHECK_THROWS_AS(cycle_loss(x, images(1, 2)), ArgumentError);
  }

  TEST_CASE("full objective matches a per-image oracle") {
    auto m = tiny_models(1, 7);
    const auto xs = images(3, 11), xt = images(3, 12);
    const auto z = torch::tensor({0.2, 0.55, 0.9}, torch::kFloat64);
    ObjectiveConfig cfg;
    const auto result = full_objective(xs, xt, z, m, cfg);

    double adv = 0.0, cyc = 0.0;
    torch::NoGradGuard ng;
    for (std::int64_t i = 0; i < 3; ++i) {
      const double zi = z[i].item<double>();
      const auto zc = torch::full({1, 1}, zi, torch::kFloat64);
      const auto s = xs.slice(0, i, i + 1), t = xt.slice(0, i, i + 1);
      const auto ft = m.source_to_target->forward(s, zc);
      const auto fs = m.target_to_source->forward(t, zc);
      adv += (1 - zi) * lsq_generator(m.source_critic->forward(ft)) + zi * lsq_generator(m.target_critic()->forward(ft));
      adv += zi * lsq_generator(m.source_critic->forward(fs)) + (1 - zi) * lsq_generator(m.target_critic()->forward(fs));
      cyc += mean_abs_brute_force(s, m.target_to_source->forward(ft, zc)) +
             mean_abs_brute_force(t, m.source_to_target->forward(fs, zc));
    }
    adv /= 3;
    cyc /= 3;
    CHECK(result.breakdown.combined_adv == doctest::Approx(adv).epsilon(1e-10));
    CHECK(result.breakdown.cycle == doctest::Approx(cyc).epsilon(1e-10));
    CHECK(result.breakdown.total == doctest::Approx(adv + 10 * cyc).epsilon(1e-10));
  }

  TEST_CASE("total composition") {
    auto m = tiny_models(1, 8);
    const auto xs = images(2, 1), xt = images(2, 2);
    const auto z = torch::tensor({0.4, 0.4}, torch::kFloat64);
    ObjectiveConfig off;
    off.lambda_cyc = 0;
    const auto r0 = full_objective(xs, xt, z, m, off);
    CHECK(r0.breakdown.total == r0.breakdown.combined_adv);
    ObjectiveConfig on;
    const auto r1 = full_objective(xs, xt, z, m, on);
    CHECK(r1.breakdown.total == doctest::Approx(r1.breakdown.combined_adv + 10 * r1.breakdown.cycle));
    CHECK(r1.breakdown.combined_adv == doctest::Approx(r0.breakdown.combined_adv));
    CHECK_THROWS_AS(full_objective(xs, xt, torch::tensor({0.4}, torch::kFloat64), m, on), ArgumentError);
  }

  TEST_CASE("at z = 1 the source critics carry no weight") {
    auto m = tiny_models(1, 9);
    const auto xs = images(2, 3), xt = images(2, 4);
    const auto z = torch::ones({2}, torch::kFloat64);
    ObjectiveConfig cfg;
    cfg.direction = Direction::kSourceToTarget;
    const auto r = full_objective(xs, xt, z, m, cfg);
    CHECK(r.breakdown.combined_adv == doctest::Approx(r.breakdown.adv_target).epsilon(1e-12));
    m.source_to_target->zero_grad();
    m.source_critic->zero_grad();
    r.total.backward();
    for (const auto& p : m.source_critic->parameters()) {
      CHECK((!p.grad().defined() || p.grad().abs().max().item<double>() == 0.0));
    }
  }

  TEST_CASE("critic objective weights") {
    auto m = tiny_models(1, 10);
    const auto xs = images(2, 5), xt = images(2, 6);
    torch::NoGradGuard ng;
    const auto z1 = torch::zeros({1}, torch::kFloat64);
    const auto ft = m.source_to_target->forward(xs.slice(0, 0, 1), z1.view({1, 1}));
    const auto l = critic_objective(xs.slice(0, 0, 1), xt.slice(0, 0, 1), ft, {}, z1, m, GanLossKind::kLeastSquares);
    CHECK(l.target.item<double>() == 0.0);
    const auto expected = adversarial_pair(m.source_critic->forward(ft), m.source_critic->forward(xs.slice(0, 0, 1)),
                                           CriticRole::kDiscriminator, GanLossKind::kLeastSquares);
    CHECK(l.source.item<double>() == doctest::Approx(expected.item<double>()));
  }

  TEST_CASE("multi-target adversarial") {
    const std::vector<double> losses{4, 2, 1, 1};
    CHECK(multi_target_adversarial(losses, DomainnessVector({0.25, 0.25, 0.25, 0.25})) == doctest::Approx(2.0));
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(multi_target_adversarial(losses, DomainnessVector::vertex(k, 4)) == losses[k]);
    }
    CHECK_THROWS_AS(multi_target_adversarial(std::vector<double>{1, 2}, DomainnessVector::vertex(0, 4)), ArgumentError);
    CHECK_THROWS_AS(DomainnessVector({0.3, 0.3, 0.3}), ValidationError);
  }

  TEST_CASE("single-target K = 1 degeneracy of the multi-target objective") {
    auto m = tiny_models(1, 12);
    const auto xs = images(2, 7), xt = images(2, 8);
    const std::vector<torch::Tensor> targets{xt};
    const auto multi = multi_target_objective(xs, targets, DomainnessVector({1.0}), m, ObjectiveConfig{});
    const auto single = full_objective(xs, xt, torch::ones({2}, torch::kFloat64), m, ObjectiveConfig{});
    CHECK(multi.breakdown.total == doctest::Approx(single.breakdown.total).epsilon(1e-12));
    CHECK(multi.breakdown.cycle == doctest::Approx(single.breakdown.cycle).epsilon(1e-12));
  }

  TEST_CASE("multi-target zero weights skip terms") {
    auto m = tiny_models(3, 13);
    const auto xs = images(2, 9);
    const std::vector<torch::Tensor> targets{images(2, 10), images(2, 11), images(2, 12)};
    const auto r = multi_target_objective(xs, targets, DomainnessVector({0.0, 1.0, 0.0}), m, ObjectiveConfig{});
    CHECK(!r.fake_sources[0].defined());
    CHECK(r.fake_sources[1].defined());
    CHECK(!r.fake_sources[2].defined());
    const auto critics = multi_target_critic_objective(xs, targets, r, DomainnessVector({0.0, 1.0, 0.0}), m,
                                                       GanLossKind::kLeastSquares);
    CHECK(critics[0].defined());
    CHECK(!critics[1].defined());
    CHECK(critics[2].defined());
    CHECK(!critics[3].defined());
  }

  TEST_CASE("unweighted multi-target reconstruction averages every target") {
    auto m = tiny_models(2, 14);
    const auto xs = images(1, 1);
    const std::vector<torch::Tensor> targets{images(1, 2), images(1, 3)};
    ObjectiveConfig weighted, plain;
    plain.weight_target_reconstruction = false;
    const DomainnessVector z({1.0, 0.0});
    const auto rw = multi_target_objective(xs, targets, z, m, weighted);
    const auto rp = multi_target_objective(xs, targets, z, m, plain);
    torch::NoGradGuard ng;
    const auto zt = z_tensor(z, 1, torch::kFloat64);
    const auto forward_cycle = mean_abs_brute_force(xs, m.target_to_source->forward(rw.fake_target, zt));
    double recon[2];
    for (int k = 0; k < 2; ++k) {
      const auto back = m.target_to_source->forward(targets[k], zt);
      recon[k] = mean_abs_brute_force(targets[k], m.source_to_target->forward(back, zt));
    }
    CHECK(rw.breakdown.cycle == doctest::Approx(forward_cycle + recon[0]).epsilon(1e-10));
    CHECK(rp.breakdown.cycle == doctest::Approx(forward_cycle + 0.5 * (recon[0] + recon[1])).epsilon(1e-10));
  }

  TEST_CASE("distance-ratio surrogate minimizer is z") {
    for (double z : {0.2, 0.5, 0.8}) {
      double best_m = 0.0, best = 1e300;
      for (int i = 0; i <= 100000; ++i) {
        const double m = i / 100000.0;
        const double v = combined_adversarial(m * m, (1 - m) * (1 - m), DomainnessValue(z));
        if (v < best) {
          best = v;
          best_m = m;
        }
      }
      CAPTURE(z);
      CHECK(best_m == doctest::Approx(z).epsilon(1e-4));
      const double ds = best_m * best_m, dt = (1 - best_m) * (1 - best_m);
      CHECK(std::sqrt(ds / dt) == doctest::Approx(z / (1 - z)).epsilon(1e-3));
    }
  }

  TEST_CASE("objective gradient reaches the embedding") {
    auto m = tiny_models(1, 15);
    const auto xs = images(2, 13), xt = images(2, 14);
    const auto r = full_objective(xs, xt, torch::tensor({0.3, 0.7}, torch::kFloat64), m, ObjectiveConfig{});
    r.total.backward();
    CHECK(m.source_to_target->embedding_layer()->weight.grad().abs().sum().item<double>() > 0.0);
    CHECK(m.target_to_source->embedding_layer()->weight.grad().abs().sum().item<double>() > 0.0);
  }

  TEST_CASE("boost weight") {
    CHECK(boost_weight(DomainnessValue(0.0)) == 1.0);
    CHECK(boost_weight(DomainnessValue(1.0)) == 0.0);
    CHECK(boost_weight(DomainnessValue(0.75)) == doctest::Approx(0.5));
    double prev = 2.0;
    for (int i = 0; i <= 100; ++i) {
      const double w = boost_weight(DomainnessValue(i / 100.0));
      CHECK(w < prev);
      CHECK(w >= 0.0);
      prev = w;
    }
  }
}
