// dlow: command-line front end.
#include <torch/torch.h>

#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "dlow/checkpoint.hpp"
#include "dlow/config.hpp"
#include "dlow/dataset.hpp"
#include "dlow/errors.hpp"
#include "dlow/repro.hpp"
#include "dlow/segmentation.hpp"
#include "dlow/service.hpp"
#include "dlow/training.hpp"

namespace fs = std::filesystem;
using namespace dlow;

namespace {

constexpr int kUsageError = 2;
constexpr int kRuntimeError = 1;

// Dataset directory with manifest.json, or a translated index (file or dir).
ImageBank load_any(const fs::path& path, std::int64_t size, torch::Tensor* z = nullptr) {
  if (fs::is_regular_file(path)) return ImageBank::load_index(path, size, z);
  if (fs::exists(path / "index.tsv")) return ImageBank::load_index(path / "index.tsv", size, z);
  return ImageBank::load(DatasetManifest::load(path), size);
}

std::int64_t native_size(const fs::path& path) {
  if (fs::is_directory(path) && fs::exists(path / DatasetManifest::kFileName)) {
    return DatasetManifest::load(path).image_size;
  }
  const auto index = fs::is_regular_file(path) ? path : path / "index.tsv";
  const auto rows = read_index(index);
  if (rows.empty()) throw ArgumentError(cat(index, " lists no images"));
  return read_png(index.parent_path() / rows.front().image).size(1);
}

struct TrainArgs {
  std::string config;
  std::string resume;
  std::vector<std::string> sets;
  std::optional<std::int64_t> iterations;
  std::optional<std::uint64_t> seed;
  std::string run_dir;
};

int cmd_train(const TrainArgs& a) {
  TrainConfig config;
  if (!a.config.empty()) config = load_train_config(a.config);
  for (const auto& kv : a.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ArgumentError(cat("--set expects key=value, got '", kv, "'"));
    set_config_value(config, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (a.iterations) config.total_iterations = *a.iterations;
  if (a.seed) config.seed = *a.seed;
  if (!a.run_dir.empty()) config.run_dir = a.run_dir;
  config.validate();
  TrainRunOptions options;
  if (!a.resume.empty()) options.resume = a.resume;
  const auto trainer = run_training(config, options);
  std::cout << "trained " << trainer.iteration() << " iterations; checkpoint "
            << (fs::path(config.run_dir) / "checkpoint.dlow").string() << "\n";
  return 0;
}

struct GenArgs {
  double theta_source = 0.0;
  double theta_target = 120.0;
  std::string kind = "hue";
  std::int64_t count = 500;
  std::int64_t size = 64;
  std::uint64_t content_seed = 1;
  double blur = 0.0;
  std::string out;
};

int cmd_gen_synthetic(const GenArgs& a) {
  SyntheticStyleSpec s;
  s.kind = a.kind == "brightness" ? StyleKind::kBrightness : StyleKind::kHueRotation;
  s.count = a.count;
  s.image_size = a.size;
  s.content_seed = a.content_seed;
  s.blur_sigma = a.blur;
  auto t = s;
  s.theta = a.theta_source;
  t.theta = a.theta_target;
  const auto [src, tgt] = generate_synthetic_domains(s, t, a.out);
  std::cout << "wrote " << src.size() << " source images to " << src.root.string() << " and " << tgt.size()
            << " target images to " << tgt.root.string() << "\n";
  return 0;
}

struct TranslateArgs {
  std::string ckpt, input, out, z_mode = "uniform";
  std::uint64_t seed = 0;
};

int cmd_translate(const TranslateArgs& a) {
  auto loaded = load_generator(a.ckpt);
  if (loaded.num_targets != 1) throw ArgumentError("translate needs a single-target checkpoint");
  const auto summary =
      translate_dataset(DatasetManifest::load(a.input), loaded.generator, ZAssignment::parse(a.z_mode), a.seed, a.out);
  std::cout << "translated " << summary.translated << " images; index " << summary.index_path.string() << "\n";
  for (const auto& f : summary.failures) std::cerr << "skipped: " << f << "\n";
  return summary.failures.empty() ? 0 : kRuntimeError;
}

int cmd_measure(const std::string& kind, const std::string& dir) {
  StyleStatistic stat;
  if (kind == "mean-hue") {
    stat = StyleStatistic::kMeanHue;
  } else if (kind == "mean-brightness") {
    stat = StyleStatistic::kMeanBrightness;
  } else {
    throw ArgumentError(cat("unknown statistic '", kind, "' (mean-hue, mean-brightness)"));
  }
  const auto bank = load_any(dir, native_size(dir));
  const torch::Tensor images[] = {bank.images};
  std::cout << kind << " " << measure_style_statistic(images, stat) << "\n";
  return 0;
}

struct BoostArgs {
  std::string source_index, target, config, out = "segmentation.dlow", eval;
};

int cmd_boost_train(const BoostArgs& a) {
  BoostConfig config;
  if (!a.config.empty()) config = parse_boost_config(read_text_file(a.config));
  torch::Tensor z;
  const auto source = load_any(a.source_index, config.image_size, &z);
  const auto target = load_any(a.target, config.image_size);
  if (config.adversarial && config.domainness_weighting && !z.defined()) {
    throw ArgumentError("domainness weighting needs a translated index as --source-index");
  }
  auto trainer = run_boost_training(config, source, z, target);
  trainer.save(a.out);
  std::cout << "saved " << a.out << "\n";
  if (!a.eval.empty()) {
    const auto report = evaluate_miou(trainer.model(), load_any(a.eval, config.image_size));
    std::cout << "mIoU " << report.mean << "\n";
  }
  return 0;
}

int cmd_eval_seg(const std::string& ckpt, const std::string& data) {
  auto model = load_segmentation_model(ckpt);
  const auto c = CheckpointContainer::read(ckpt);
  const auto bank = load_any(data, c.manifest.at("image_size").get<std::int64_t>());
  const auto report = evaluate_miou(model, bank);
  for (std::size_t k = 0; k < report.per_class.size(); ++k) {
    std::cout << "class " << k << " IoU " << report.per_class[k] << "\n";
  }
  std::cout << "mIoU " << report.mean << "\n";
  return 0;
}

int cmd_serve(const std::vector<std::string>& ckpts, const std::string& host, int port) {
  ModelRegistry registry;
  for (const auto& c : ckpts) {
    const auto& m = registry.add(c);
    std::cout << "loaded " << m.id << " (K = " << m.loaded.num_targets << ", " << m.loaded.image_size << " px)\n";
  }
  port = service_port(port);
  ServiceServer server(registry);
  std::cout << "serving on http://" << host << ":" << port << std::endl;
  server.listen(host, port);
  return 0;
}

struct ReproArgs {
  bool quick = false;
  std::vector<std::string> only;
  std::string work_dir = "repro-work";
  bool verbose = false;
};

int cmd_repro(const ReproArgs& a) {
  ReproOptions options;
  options.work_dir = a.work_dir;
  options.verbose = a.verbose;
  auto ids = a.only;
  if (a.quick && ids.empty()) ids = {"A1", "A2", "A3"};
  const auto results = run_acceptance(options, ids, std::cout);
  std::size_t passed = 0;
  for (const auto& r : results) passed += r.passed;
  std::cout << passed << "/" << results.size() << " criteria passed\n";
  return passed == results.size() ? 0 : kRuntimeError;
}

}  // namespace

int main(int argc, char** argv) {
  torch::set_num_threads(1);
  CLI::App app{"dlow: domain flow image translation"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "train a domain-flow model");
  t->add_option("--config", train.config, "key = value config file")->check(CLI::ExistingFile);
  t->add_option("--resume", train.resume, "continue from a training checkpoint")->check(CLI::ExistingFile);
  t->add_option("--set", train.sets, "override a config key (key=value), repeatable");
  t->add_option("--iterations", train.iterations, "total_iterations override");
  t->add_option("--seed", train.seed, "seed override");
  t->add_option("--run-dir", train.run_dir, "run_dir override");

  GenArgs gen;
  auto* g = app.add_subcommand("gen-synthetic", "write a synthetic source/target domain pair");
  g->add_option("--theta-source", gen.theta_source, "source style (hue degrees or brightness offset)");
  g->add_option("--theta-target", gen.theta_target, "target style");
  g->add_option("--kind", gen.kind, "hue or brightness")->check(CLI::IsMember({"hue", "brightness"}));
  g->add_option("--count", gen.count, "images per domain")->check(CLI::PositiveNumber);
  g->add_option("--size", gen.size, "image side in pixels")->check(CLI::PositiveNumber);
  g->add_option("--content-seed", gen.content_seed, "content family seed");
  g->add_option("--blur", gen.blur, "Gaussian blur sigma")->check(CLI::NonNegativeNumber);
  g->add_option("--out", gen.out, "output directory")->required();

  TranslateArgs tr;
  auto* x = app.add_subcommand("translate", "translate a dataset into S~ with per-image z");
  x->add_option("--ckpt", tr.ckpt, "domain-flow checkpoint")->required()->check(CLI::ExistingFile);
  x->add_option("--input", tr.input, "source dataset directory")->required()->check(CLI::ExistingDirectory);
  x->add_option("--out", tr.out, "output directory")->required();
  x->add_option("--z-mode", tr.z_mode, "uniform or fixed:<z>");
  x->add_option("--seed", tr.seed, "z draw seed");

  std::string measure_kind = "mean-hue", measure_dir;
  auto* m = app.add_subcommand("measure", "style statistic of a dataset");
  m->add_option("--kind", measure_kind, "mean-hue or mean-brightness");
  m->add_option("dir", measure_dir, "dataset directory or index file")->required()->check(CLI::ExistingPath);

  BoostArgs boost;
  auto* b = app.add_subcommand("boost-train", "train the segmentation model with domainness-weighted adaptation");
  b->add_option("--source-index", boost.source_index, "S~ index (or a labeled dataset)")->required()->check(CLI::ExistingPath);
  b->add_option("--target", boost.target, "unlabeled target dataset")->required()->check(CLI::ExistingPath);
  b->add_option("--config", boost.config, "boost config file")->check(CLI::ExistingFile);
  b->add_option("--out", boost.out, "segmentation checkpoint path");
  b->add_option("--eval", boost.eval, "labeled dataset to score after training")->check(CLI::ExistingPath);

  std::string seg_ckpt, seg_data;
  auto* e = app.add_subcommand("eval-seg", "mIoU of a segmentation checkpoint");
  e->add_option("--ckpt", seg_ckpt, "segmentation checkpoint")->required()->check(CLI::ExistingFile);
  e->add_option("--data", seg_data, "labeled dataset")->required()->check(CLI::ExistingPath);

  std::vector<std::string> serve_ckpts;
  std::string host = "127.0.0.1";
  int port = 8080;
  auto* s = app.add_subcommand("serve", "HTTP translation service (port overridable by DLOW_PORT)");
  s->add_option("--ckpt", serve_ckpts, "checkpoint path or id=path, repeatable")->required();
  s->add_option("--port", port, "listen port")->check(CLI::Range(0, 65535));
  s->add_option("--host", host, "listen address");

  ReproArgs repro;
  auto* r = app.add_subcommand("repro", "run the acceptance experiments");
  r->add_flag("--quick", repro.quick, "A1-A3 only");
  r->add_option("--only", repro.only, "criterion ids, e.g. A4 A6")->delimiter(',');
  r->add_option("--work-dir", repro.work_dir, "scratch directory");
  r->add_flag("--verbose", repro.verbose, "progress output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kUsageError;
  }

  try {
    if (*t) return cmd_train(train);
    if (*g) return cmd_gen_synthetic(gen);
    if (*x) return cmd_translate(tr);
    if (*m) return cmd_measure(measure_kind, measure_dir);
    if (*b) return cmd_boost_train(boost);
    if (*e) return cmd_eval_seg(seg_ckpt, seg_data);
    if (*s) return cmd_serve(serve_ckpts, host, port);
    if (*r) return cmd_repro(repro);
  } catch (const std::invalid_argument& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kUsageError;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kRuntimeError;
  }
  return kUsageError;
}
