#include <torch/torch.h>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "dlow/repro.hpp"

int main(int argc, char** argv) {
  torch::set_num_threads(1);
  dlow::ReproOptions options;
  options.golden_dir = DLOW_GOLDEN_DIR;
  options.work_dir = std::filesystem::current_path() / "acceptance-work";
  std::vector<std::string> ids;
  bool fresh = false;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--update-golden") {
      options.update_golden = true;
    } else if (arg == "--fresh") {
      fresh = true;
    } else if (arg == "--work-dir" && i + 1 < argc) {
      options.work_dir = argv[++i];
    } else {
      ids.push_back(arg);
    }
  }
  if (fresh) std::filesystem::remove_all(options.work_dir);
  const auto results = dlow::run_acceptance(options, ids, std::cout);
  int failed = 0;
  for (const auto& r : results) failed += !r.passed;
  std::cout << (results.size() - failed) << "/" << results.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
