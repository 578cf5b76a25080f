#include <torch/torch.h>

#include <fstream>
#include <string>
#include <vector>

#include "testing.hpp"
#include "dlow/checkpoint.hpp"
#include "dlow/config.hpp"
#include "dlow/dataset.hpp"
#include "dlow/errors.hpp"
#include "dlow/training.hpp"
#include "helpers.hpp"

using namespace dlow;
using namespace dlow::test;

namespace {

TrainConfig tiny_config(std::int64_t iterations = 20) {
  TrainConfig c;
  c.total_iterations = iterations;
  c.ngf = 4;
  c.ndf = 8;
  c.n_residual = 1;
  c.n_downsampling = 1;
  c.disc_layers = 1;
  c.image_size = 16;
  c.crop_size = 16;
  c.seed = 3;
  return c;
}

torch::Tensor images(std::int64_t n, std::uint64_t seed, std::int64_t size = 16) {
  auto gen = at::detail::createCPUGenerator(seed);
  return torch::rand({n, 3, size, size}, gen) * 2 - 1;
}

bool same_parameters(const DomainFlowModels& a, const DomainFlowModels& b) {
  const auto pa = a.all_parameters(), pb = b.all_parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (!bitwise_equal(pa[i], pb[i])) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("parse, defaults and precedence") {
    const auto c = parse_train_config("# comment\ntotal_iterations = 10\n\nlearning_rate=0.001\nz_mode = fixed:0.5\n");
    CHECK(c.total_iterations == 10);
    CHECK(c.learning_rate == 0.001);
    CHECK(c.z_mode == ZMode::kFixed);
    CHECK(c.z_fixed == 0.5);
    CHECK(c.lambda_cyc == 10.0);
    TrainConfig base;
    base.seed = 99;
    CHECK(parse_train_config("ngf = 8", base).seed == 99);
  }

  TEST_CASE("unknown keys and bad values are errors") {
    CHECK_THROWS_AS(parse_train_config("bogus = 1"), ArgumentError);
    CHECK_THROWS_AS(parse_train_config("ngf = eight"), ArgumentError);
    CHECK_THROWS_AS(parse_train_config("just text"), ArgumentError);
    TrainConfig c;
    c.total_iterations = 0;
    CHECK_THROWS_AS(c.validate(), ArgumentError);
  }

  TEST_CASE("format round trip") {
    TrainConfig c = tiny_config();
    c.learning_rate = 1.0 / 3.0;
    c.target_dirs = {"a", "b"};
    c.target_names = {"x", "y"};
    c.num_targets = 2;
    c.source_dir = "src dir";
    c.gan_loss = GanLossKind::kLog;
    const auto back = parse_train_config(format_train_config(c));
    CHECK(format_train_config(back) == format_train_config(c));
    CHECK(back.learning_rate == c.learning_rate);
    CHECK(back.target_dirs == c.target_dirs);
    CHECK(back.source_dir == c.source_dir);
  }

  TEST_CASE("style period") {
    TrainConfig c;
    c.num_targets = 4;
    CHECK(c.style_period() == 5);
    c.num_targets = 2;
    CHECK(c.style_period() == 3);
    c.style_gen_cycle = 7;
    CHECK(c.style_period() == 7);
  }
}

TEST_SUITE("training") {
  TEST_CASE("identical seeds give identical trajectories") {
    DomainFlowTrainer a(tiny_config()), b(tiny_config());
    for (int t = 0; t < 10; ++t) {
      const auto xs = images(1, 100 + t), xt = images(1, 200 + t);
      const auto ra = a.train_step(xs, xt);
      const auto rb = b.train_step(xs, xt);
      CHECK(ra.z == rb.z);
      CHECK(ra.generator.total == rb.generator.total);
      REQUIRE(same_parameters(a.models(), b.models()));
    }
  }

  TEST_CASE("critic loss does not increase after its update") {
    auto cfg = tiny_config();
    cfg.learning_rate = 1e-5;
    DomainFlowTrainer trainer(cfg);
    const auto xs = images(2, 1), xt = images(2, 2);
    const auto z = torch::tensor({0.3f, 0.8f});
    auto& m = trainer.models();
    torch::Tensor fake_t, fake_s;
    {
      torch::NoGradGuard ng;
      fake_t = m.source_to_target->forward(xs, z.view({2, 1}));
      fake_s = m.target_to_source->forward(xt, z.view({2, 1}));
    }
    auto critic_total = [&] {
      torch::NoGradGuard ng;
      const auto l = critic_objective(xs, xt, fake_t, fake_s, z, m, GanLossKind::kLeastSquares);
      return (l.source + l.target).item<double>();
    };
    const double before = critic_total();
    auto generators_before = clone_models(m);
    trainer.train_step(xs, xt, z);
    copy_parameters(*generators_before.source_to_target, *m.source_to_target);
    copy_parameters(*generators_before.target_to_source, *m.target_to_source);
    CHECK(critic_total() <= before);
  }

  TEST_CASE("per-image z by default, shared with per_batch_z") {
    DomainFlowTrainer a(tiny_config());
    const auto r = a.train_step(images(3, 1), images(3, 2));
    REQUIRE(r.z.size() == 3);
    CHECK(r.z[0] != r.z[1]);
    auto cfg = tiny_config();
    cfg.per_batch_z = true;
    DomainFlowTrainer b(cfg);
    const auto rb = b.train_step(images(3, 1), images(3, 2));
    CHECK(rb.z[0] == rb.z[1]);
    CHECK(rb.z[1] == rb.z[2]);
  }

  TEST_CASE("z drifts towards the target over training") {
    DomainnessSampler sampler(BetaSchedule{400, 1}, ZMode::kCurriculum);
    double early = 0, late = 0;
    for (int t = 0; t < 40; ++t) early += sampler.next(t).value();
    for (int t = 360; t < 400; ++t) late += sampler.next(t).value();
    CHECK(early / 40 < 0.35);
    CHECK(late / 40 > 0.65);
  }

  TEST_CASE("training stops at total_iterations") {
    DomainFlowTrainer trainer(tiny_config(2));
    trainer.train_step(images(1, 1), images(1, 2));
    trainer.train_step(images(1, 1), images(1, 2));
    CHECK(trainer.iteration() == 2);
    CHECK_THROWS_AS(trainer.train_step(images(1, 1), images(1, 2)), ArgumentError);
  }

  TEST_CASE("multi-target phase schedule") {
    auto cfg = tiny_config();
    cfg.num_targets = 4;
    DomainFlowTrainer trainer(cfg);
    for (int cycle = 0; cycle < 2; ++cycle) {
      for (std::size_t k = 0; k < 4; ++k) {
        const auto v = trainer.scheduled_vector(cycle * 5 + static_cast<std::int64_t>(k));
        CHECK(v[k] == 1.0);
      }
      const auto r = trainer.scheduled_vector(cycle * 5 + 4);
      int nonzero = 0;
      for (std::size_t k = 0; k < 4; ++k) nonzero += r[k] > 0.0;
      CHECK(nonzero == 4);
    }
    cfg.num_targets = 2;
    DomainFlowTrainer two(cfg);
    CHECK(two.scheduled_vector(0)[0] == 1.0);
    CHECK(two.scheduled_vector(1)[1] == 1.0);
    const auto mid = two.scheduled_vector(2);
    CHECK(mid[0] > 0.0);
    CHECK(mid[1] > 0.0);
    CHECK(two.scheduled_vector(3)[0] == 1.0);
  }

  TEST_CASE("multi-target step runs the cycle") {
    auto cfg = tiny_config();
    cfg.num_targets = 2;
    DomainFlowTrainer trainer(cfg);
    const std::vector<torch::Tensor> targets{images(1, 5), images(1, 6)};
    const auto r0 = trainer.train_multi_target_step(images(1, 4), targets);
    CHECK(r0.z == std::vector<double>{1.0, 0.0});
    const auto r1 = trainer.train_multi_target_step(images(1, 4), targets);
    CHECK(r1.z == std::vector<double>{0.0, 1.0});
    CHECK(std::isfinite(r1.generator.total));
  }

  TEST_CASE("restore and continue equals uninterrupted training") {
    TempDir dir;
    DomainFlowTrainer straight(tiny_config());
    DomainFlowTrainer first(tiny_config());
    for (int t = 0; t < 4; ++t) {
      straight.train_step(images(1, t), images(1, 50 + t));
      first.train_step(images(1, t), images(1, 50 + t));
    }
    first.checkpoint(dir.path() / "c.dlow");
    auto resumed = DomainFlowTrainer::restore(dir.path() / "c.dlow");
    CHECK(resumed.iteration() == 4);
    CHECK(same_parameters(resumed.models(), straight.models()));
    for (int t = 4; t < 8; ++t) {
      const auto a = straight.train_step(images(1, t), images(1, 50 + t));
      const auto b = resumed.train_step(images(1, t), images(1, 50 + t));
      CHECK(a.z == b.z);
    }
    CHECK(same_parameters(resumed.models(), straight.models()));
  }

  TEST_CASE("checkpoint restores translation outputs") {
    TempDir dir;
    DomainFlowTrainer trainer(tiny_config());
    trainer.train_step(images(1, 1), images(1, 2));
    trainer.checkpoint(dir.path() / "c.dlow");
    auto loaded = load_generator(dir.path() / "c.dlow");
    CHECK(loaded.num_targets == 1);
    CHECK(loaded.image_size == 16);
    CHECK(loaded.checkpoint_hash == file_sha256(dir.path() / "c.dlow"));
    torch::NoGradGuard ng;
    const auto x = images(1, 9);
    trainer.models().source_to_target->eval();
    CHECK(bitwise_equal(translate(x, DomainnessValue(0.3), trainer.models().source_to_target),
                        translate(x, DomainnessValue(0.3), loaded.generator)));
    auto back = load_generator(dir.path() / "c.dlow", false);
    CHECK(bitwise_equal(translate(x, DomainnessValue(0.3), trainer.models().target_to_source),
                        translate(x, DomainnessValue(0.3), back.generator)));
  }

  TEST_CASE("wrong checkpoint kind is rejected") {
    TempDir dir;
    CheckpointContainer c;
    c.manifest = {{"kind", "other"}};
    c.write(dir.path() / "x.dlow");
    CHECK_THROWS_AS(DomainFlowTrainer::restore(dir.path() / "x.dlow"), LoadError);
    CHECK_THROWS_AS(load_generator(dir.path() / "x.dlow"), LoadError);
  }

  TEST_CASE("run_training end to end") {
    TempDir dir;
    SyntheticStyleSpec s;
    s.count = 4;
    s.image_size = 16;
    auto t = s;
    t.theta = 120;
    generate_synthetic_domains(s, t, dir.path() / "data");
    auto cfg = tiny_config(3);
    cfg.source_dir = (dir.path() / "data" / "source").string();
    cfg.target_dirs = {(dir.path() / "data" / "target").string()};
    cfg.run_dir = (dir.path() / "run").string();
    cfg.log_every = 0;
    TrainRunOptions options;
    options.verbose = false;
    const auto trainer = run_training(cfg, options);
    CHECK(trainer.iteration() == 3);
    CHECK(std::filesystem::exists(dir.path() / "run" / "checkpoint.dlow"));
    CHECK(std::filesystem::exists(dir.path() / "run" / "config.txt"));
    std::ifstream metrics(dir.path() / "run" / "metrics.csv");
    int lines = 0;
    for (std::string line; std::getline(metrics, line);) ++lines;
    CHECK(lines == 4);
    const auto written = load_train_config(dir.path() / "run" / "config.txt");
    CHECK(format_train_config(written) == format_train_config(cfg));
  }
}
