#include <cmath>
#include <numeric>
#include <string>

#include "testing.hpp"
#include "dlow/domainness.hpp"
#include "dlow/errors.hpp"

using namespace dlow;

namespace {

std::string message_of(const std::vector<double>& v) {
  try {
    DomainnessVector{v};
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

// Composite Simpson on [0, 1] after z = s^5, which absorbs the z^(alpha-1)
// singularity for alpha >= 0.2.
double integrate_pdf(double alpha) {
  const int n = 1000;
  const double h = 1.0 / n;
  auto g = [&](double s) {
    if (s == 0.0) return std::abs(alpha - 0.2) < 1e-12 ? 1.0 : 0.0;
    return beta_pdf(std::pow(s, 5.0), alpha, 1.0) * 5.0 * std::pow(s, 4.0);
  };
  double sum = g(0.0) + g(1.0);
  for (int i = 1; i < n; ++i) sum += (i % 2 ? 4.0 : 2.0) * g(i * h);
  return sum * h / 3.0;
}

}  // namespace

TEST_SUITE("domainness") {
  TEST_CASE("scalar range") {
    CHECK(DomainnessValue(0.0).value() == 0.0);
    CHECK(DomainnessValue(1.0).value() == 1.0);
    CHECK_THROWS_AS(DomainnessValue(-1e-9), ValidationError);
    CHECK_THROWS_AS(DomainnessValue(1.0 + 1e-9), ValidationError);
    CHECK_THROWS_AS(DomainnessValue(std::nan("")), ValidationError);
  }

  TEST_CASE("validate_vector examples") {
    CHECK(DomainnessVector({1, 0, 0, 0}).size() == 4);
    CHECK_NOTHROW(DomainnessVector({0.25, 0.25, 0.25, 0.25}));
    CHECK(message_of({0.5, 0.5, 0.5, -0.5}).find("range") != std::string::npos);
    CHECK(message_of({0.3, 0.3, 0.3}).find("sum") != std::string::npos);
    CHECK(message_of({}).size() > 0);
  }

  TEST_CASE("within tolerance is renormalized, outside rejected") {
    DomainnessVector v({0.5 + 4e-7, 0.5});
    CHECK(v[0] + v[1] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK_THROWS_AS(DomainnessVector({0.5 + 2e-6, 0.5}), ValidationError);
  }

  TEST_CASE("K = 1 vector is the scalar 1") {
    DomainnessVector v({1.0});
    CHECK(v[0] == 1.0);
    CHECK_THROWS_AS(DomainnessVector({0.5}), ValidationError);
  }

  TEST_CASE("vertex") {
    const auto v = DomainnessVector::vertex(2, 4);
    CHECK(v[2] == 1.0);
    CHECK(v[0] == 0.0);
    CHECK_THROWS_AS(DomainnessVector::vertex(4, 4), ArgumentError);
  }

  TEST_CASE("alpha_at") {
    const BetaSchedule s{1000, 0};
    CHECK(alpha_at(500, s) == 1.0);
    CHECK(alpha_at(0, s) == doctest::Approx(0.135335283).epsilon(1e-8));
    CHECK(alpha_at(1000, s) == doctest::Approx(7.389056099).epsilon(1e-8));
    double prev = 0.0;
    for (std::int64_t t = 0; t <= 1000; ++t) {
      const double a = alpha_at(t, s);
      CHECK(a > prev);
      prev = a;
    }
    CHECK_THROWS_AS(alpha_at(-1, s), ArgumentError);
    CHECK_THROWS_AS(alpha_at(1001, s), ArgumentError);
  }

  TEST_CASE("beta_pdf examples") {
    CHECK(beta_pdf(0.5, 1, 1) == doctest::Approx(1.0));
    CHECK(beta_pdf(0.5, 2, 1) == doctest::Approx(1.0));
    CHECK(beta_pdf(0.0, 2, 1) == 0.0);
    CHECK(beta_pdf(0.3, 2, 1) == doctest::Approx(0.6));
    CHECK_THROWS_AS(beta_pdf(0.5, 0.0, 1.0), ArgumentError);
    CHECK_THROWS_AS(beta_pdf(0.5, 1.0, -1.0), ArgumentError);
  }

  TEST_CASE("beta_pdf integrates to one") {
    for (double alpha : {0.2, 1.0, 2.0, 7.39}) {
      CAPTURE(alpha);
      CHECK(std::abs(integrate_pdf(alpha) - 1.0) < 1e-4);
    }
  }

  TEST_CASE("sample_scalar moments") {
    const BetaSchedule s{2000, 42};
    for (std::int64_t t : {std::int64_t{0}, std::int64_t{1000}, std::int64_t{2000}}) {
      Rng rng(7 + t);
      const double alpha = alpha_at(t, s);
      double sum = 0.0;
      for (int i = 0; i < 100000; ++i) {
        const double z = sample_scalar(t, s, rng).value();
        REQUIRE(z >= 0.0);
        REQUIRE(z <= 1.0);
        sum += z;
      }
      CAPTURE(t);
      CHECK(std::abs(sum / 100000 - alpha / (alpha + 1.0)) <= 0.01);
    }
  }

  TEST_CASE("sampler reproducible") {
    DomainnessSampler a(BetaSchedule{100, 5}, ZMode::kCurriculum);
    DomainnessSampler b(BetaSchedule{100, 5}, ZMode::kCurriculum);
    for (int t = 0; t < 100; ++t) CHECK(a.next(t).value() == b.next(t).value());
    DomainnessSampler c(BetaSchedule{100, 6}, ZMode::kCurriculum);
    int differ = 0;
    DomainnessSampler d(BetaSchedule{100, 5}, ZMode::kCurriculum);
    for (int t = 0; t < 100; ++t) differ += c.next(t).value() != d.next(t).value();
    CHECK(differ > 90);
  }

  TEST_CASE("fixed and uniform modes") {
    DomainnessSampler fixed(BetaSchedule{10, 0}, ZMode::kFixed, 0.3);
    for (int t = 0; t < 10; ++t) CHECK(fixed.next(t).value() == 0.3);
    DomainnessSampler uniform(BetaSchedule{10, 0}, ZMode::kUniform);
    double sum = 0;
    for (int i = 0; i < 20000; ++i) sum += uniform.next(0).value();
    CHECK(sum / 20000 == doctest::Approx(0.5).epsilon(0.02));
  }

  TEST_CASE("curriculum drift") {
    DomainnessSampler s(BetaSchedule{1000, 3}, ZMode::kCurriculum);
    double early = 0, late = 0;
    for (int t = 0; t <= 100; ++t) early += s.next(t).value();
    for (int t = 900; t <= 1000; ++t) late += s.next(t).value();
    CHECK(early < late);
  }

  TEST_CASE("sample_vector") {
    Rng rng(11);
    double means[4] = {0, 0, 0, 0};
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
      const auto v = sample_vector(4, rng);
      double sum = 0;
      for (std::size_t k = 0; k < 4; ++k) {
        REQUIRE(v[k] >= 0.0);
        means[k] += v[k];
        sum += v[k];
      }
      REQUIRE(std::abs(sum - 1.0) <= 1e-6);
      REQUIRE_NOTHROW(validate_vector(v.values()));
    }
    for (double m : means) CHECK(std::abs(m / n - 0.25) <= 0.01);
    CHECK_THROWS_AS(sample_vector(1, rng), ArgumentError);
  }

  TEST_CASE("K = 2 vector is (v, 1 - v) with v uniform") {
    Rng rng(3);
    int below = 0;
    for (int i = 0; i < 20000; ++i) {
      const auto v = sample_vector(2, rng);
      CHECK(v[0] + v[1] == doctest::Approx(1.0));
      below += v[0] < 0.25;
    }
    CHECK(below / 20000.0 == doctest::Approx(0.25).epsilon(0.05));
  }

  TEST_CASE("uniform01 range") {
    Rng rng(0);
    for (int i = 0; i < 100000; ++i) {
      const double u = uniform01(rng);
      REQUIRE(u >= 0.0);
      REQUIRE(u < 1.0);
    }
  }
}
