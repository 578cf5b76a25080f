#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "dlow/training.hpp"
#include "json.hpp"

namespace dlow {

/// Largest accepted request body.
inline constexpr std::size_t kMaxPayloadBytes = 8u << 20;

struct RegisteredModel {
  std::string id;
  std::filesystem::path path;
  LoadedGenerator loaded;
  /// One name per target domain; "target_k" when the checkpoint has none.
  std::vector<std::string> domains;
};

/// id -> generator. Filled before serving starts and read-only afterwards,
/// so concurrent readers need no locking.
class ModelRegistry {
 public:
  /// `spec` is `path` or `id=path`; the default id is the file stem.
  /// Throws ArgumentError on a duplicate id, LoadError on a bad checkpoint.
  const RegisteredModel& add(const std::string& spec);
  const RegisteredModel& add(const std::string& id, const std::filesystem::path& path);

  /// nullptr when unknown.
  const RegisteredModel* find(const std::string& id) const;
  std::vector<const RegisteredModel*> models() const;
  std::size_t size() const { return models_.size(); }

 private:
  std::map<std::string, std::unique_ptr<RegisteredModel>> models_;
};

struct ServiceResponse {
  int status = 200;
  nlohmann::json body;
};

/// POST /translate body:
///   {"model": id (optional with one model), "image": base64 PNG, "z": number | [K numbers]}
/// 200: {"model", "image", "z", "width", "height", "resize", "latency_ms"}
/// 400 bad request / undecodable image, 404 unknown model, 413 payload too
/// large, 422 invalid z. Errors carry {"error": kind, "detail": message}.
ServiceResponse handle_translate(const ModelRegistry& registry, const nlohmann::json& request);

/// POST /sweep body: {"model", "image", "zs": [z, ...]}; z as in /translate.
/// 200: {"model", "images": [...], "zs": [...], "width", "height", "resize", "latency_ms"}
ServiceResponse handle_sweep(const ModelRegistry& registry, const nlohmann::json& request);

/// GET /info: {"models": [{"id", "num_targets", "domains", "image_size", "checkpoint_hash"}]}
ServiceResponse handle_info(const ModelRegistry& registry);

/// Parses raw request text and dispatches; adds the 8 MiB limit and JSON
/// syntax errors on top of the handlers.
ServiceResponse handle_request(const ModelRegistry& registry, const std::string& method, const std::string& path,
                               const std::string& body);

std::string base64_encode(std::string_view bytes);
/// Throws ArgumentError on malformed input.
std::string base64_decode(std::string_view text);

/// HTTP front end over handle_request.
class ServiceServer {
 public:
  explicit ServiceServer(const ModelRegistry& registry);
  ~ServiceServer();

  /// Binds and serves on a background thread; port 0 picks a free port.
  /// Returns the bound port.
  int start(const std::string& host, int port);
  /// Blocks serving on the calling thread.
  void listen(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::thread thread_;
};

/// Port from `DLOW_PORT` when set, else `fallback`.
int service_port(int fallback);

}  // namespace dlow
