#include "dlow/checkpoint.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <memory>
#include <sstream>

#include "dlow/errors.hpp"

namespace dlow {

namespace {

constexpr std::array<char, 8> kMagic = {'D', 'L', 'O', 'W', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T take(std::istream& in, const std::filesystem::path& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw LoadError(cat("checkpoint ", path, " is truncated"));
  }
  return value;
}

std::string take_bytes(std::istream& in, std::uint64_t n, const std::filesystem::path& path) {
  std::string bytes(n, '\0');
  if (n > 0 && !in.read(bytes.data(), static_cast<std::streamsize>(n))) {
    throw LoadError(cat("checkpoint ", path, " is truncated"));
  }
  return bytes;
}

}  // namespace

void CheckpointContainer::write(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(cat("cannot write checkpoint ", tmp));
    out.write(kMagic.data(), kMagic.size());
    put<std::uint32_t>(out, kFormatVersion);
    const auto text = manifest.dump();
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(blobs.size()));
    for (const auto& [name, bytes] : blobs) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<std::uint64_t>(out, bytes.size());
      out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    if (!out) throw IoError(cat("failed writing checkpoint ", tmp));
  }
  std::filesystem::rename(tmp, path);
}

CheckpointContainer CheckpointContainer::read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(cat("checkpoint ", path, " not found or unreadable"));
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw LoadError(cat("checkpoint ", path, " is not a DLOW checkpoint (bad magic)"));
  }
  const auto version = take<std::uint32_t>(in, path);
  if (version != kFormatVersion) {
    throw LoadError(cat("checkpoint ", path, " has format version ", version, "; this build reads version ",
                        kFormatVersion));
  }
  CheckpointContainer out;
  const auto manifest_len = take<std::uint64_t>(in, path);
  try {
    out.manifest = nlohmann::json::parse(take_bytes(in, manifest_len, path));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(cat("checkpoint ", path, " has a corrupt manifest: ", e.what()));
  }
  const auto count = take<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = take_bytes(in, take<std::uint32_t>(in, path), path);
    out.blobs[name] = take_bytes(in, take<std::uint64_t>(in, path), path);
  }
  return out;
}

const std::string& CheckpointContainer::blob(const std::string& name) const {
  const auto it = blobs.find(name);
  if (it == blobs.end()) throw LoadError(cat("checkpoint is missing entry '", name, "'"));
  return it->second;
}

std::string serialize_module(const torch::nn::Module& module) {
  torch::serialize::OutputArchive archive;
  module.save(archive);
  std::ostringstream out;
  archive.save_to(out);
  return out.str();
}

void deserialize_module(torch::nn::Module& module, const std::string& bytes) {
  torch::serialize::InputArchive archive;
  std::istringstream in(bytes);
  try {
    archive.load_from(in);
    module.load(archive);
  } catch (const c10::Error& e) {
    throw LoadError(cat("cannot restore module parameters: ", e.what_without_backtrace()));
  }
}

std::string serialize_optimizer(const torch::optim::Optimizer& optimizer) {
  torch::serialize::OutputArchive archive;
  optimizer.save(archive);
  std::ostringstream out;
  archive.save_to(out);
  return out.str();
}

void deserialize_optimizer(torch::optim::Optimizer& optimizer, const std::string& bytes) {
  torch::serialize::InputArchive archive;
  std::istringstream in(bytes);
  try {
    archive.load_from(in);
    optimizer.load(archive);
  } catch (const c10::Error& e) {
    throw LoadError(cat("cannot restore optimizer state: ", e.what_without_backtrace()));
  }
}

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xf];
  }
  return out;
}

std::string file_sha256(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(cat("cannot read ", path));
  std::ostringstream buf;
  buf << in.rdbuf();
  return sha256_hex(buf.str());
}

}  // namespace dlow
