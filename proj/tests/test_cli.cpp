#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "testing.hpp"
#include "helpers.hpp"

using namespace dlow::test;

namespace {

int run(const std::string& args, const std::filesystem::path& log) {
  const std::string cmd = std::string("\"") + DLOW_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("help and argument errors") {
    TempDir dir;
    const auto log = dir.path() / "log";
    CHECK(run("--help", log) == 0);
    CHECK(slurp(log).find("translate") != std::string::npos);
    CHECK(run("--no-such-flag", log) == 2);
    CHECK(run("translate --ckpt", log) == 2);
    CHECK(run("train --config " + (dir.path() / "absent.cfg").string(), log) != 0);
  }

  TEST_CASE("gen-synthetic then measure") {
    TempDir dir;
    const auto log = dir.path() / "log";
    REQUIRE(run("gen-synthetic --theta-source 0 --theta-target 120 --count 40 --size 32 --out " +
                    (dir.path() / "data").string(),
                log) == 0);
    CHECK(std::filesystem::exists(dir.path() / "data" / "source" / "manifest.json"));
    REQUIRE(run("measure --kind mean-hue " + (dir.path() / "data" / "target").string(), log) == 0);
    const auto out = slurp(log);
    REQUIRE(out.rfind("mean-hue ", 0) == 0);
    const double hue = std::stod(out.substr(9));
    CHECK(std::abs(hue - 120.0) <= 2.0);
  }

  TEST_CASE("train, translate and measure a translated set") {
    TempDir dir;
    const auto log = dir.path() / "log";
    REQUIRE(run("gen-synthetic --count 4 --size 16 --out " + (dir.path() / "data").string(), log) == 0);
    {
      std::ofstream cfg(dir.path() / "train.cfg");
      cfg << "source_dir = " << (dir.path() / "data" / "source").string() << "\n"
          << "target_dirs = " << (dir.path() / "data" / "target").string() << "\n"
          << "image_size = 16\ncrop_size = 16\nngf = 4\nndf = 8\nn_residual = 1\ndisc_layers = 1\n";
    }
    REQUIRE(run("train --config " + (dir.path() / "train.cfg").string() + " --iterations 2 --run-dir " +
                    (dir.path() / "run").string(),
                log) == 0);
    REQUIRE(std::filesystem::exists(dir.path() / "run" / "checkpoint.dlow"));
    REQUIRE(run("translate --ckpt " + (dir.path() / "run" / "checkpoint.dlow").string() + " --input " +
                    (dir.path() / "data" / "source").string() + " --out " + (dir.path() / "tilde").string() +
                    " --z-mode fixed:1 --seed 3",
                log) == 0);
    CHECK(std::filesystem::exists(dir.path() / "tilde" / "index.tsv"));
    CHECK(run("measure --kind mean-brightness " + (dir.path() / "tilde").string(), log) == 0);
    CHECK(run("translate --ckpt " + (dir.path() / "run" / "checkpoint.dlow").string() + " --input " +
                  (dir.path() / "data" / "source").string() + " --out " + (dir.path() / "x").string() +
                  " --z-mode fixed:2",
              log) == 2);
  }

  TEST_CASE("quick repro") {
    TempDir dir;
    const auto log = dir.path() / "log";
    CHECK(run("repro --quick --work-dir " + (dir.path() / "work").string(), log) == 0);
    const auto out = slurp(log);
    CHECK(out.find("A1 PASS") != std::string::npos);
    CHECK(out.find("A2 PASS") != std::string::npos);
    CHECK(out.find("A3 PASS") != std::string::npos);
  }
}
