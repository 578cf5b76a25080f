#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"

namespace dlow {

/// On-disk container: magic "DLOWCKPT", little-endian u32 format version,
/// a JSON manifest, then named binary blobs (torch archives, rng text).
///
///   magic[8] | u32 version | u64 len | manifest json | u32 count |
///   count x (u32 name_len | name | u64 len | bytes)
struct CheckpointContainer {
  static constexpr std::uint32_t kFormatVersion = 1;

  nlohmann::json manifest;
  std::map<std::string, std::string> blobs;

  /// Writes atomically (temp file + rename).
  void write(const std::filesystem::path& path) const;
  /// Throws LoadError on missing file, bad magic, version mismatch or
  /// truncation, with a message naming the problem.
  static CheckpointContainer read(const std::filesystem::path& path);

  const std::string& blob(const std::string& name) const;
};

std::string serialize_module(const torch::nn::Module& module);
void deserialize_module(torch::nn::Module& module, const std::string& bytes);
std::string serialize_optimizer(const torch::optim::Optimizer& optimizer);
void deserialize_optimizer(torch::optim::Optimizer& optimizer, const std::string& bytes);

/// Lowercase hex SHA-256 of a file's bytes.
std::string file_sha256(const std::filesystem::path& path);
std::string sha256_hex(std::string_view bytes);

}  // namespace dlow
