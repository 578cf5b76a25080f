#include "dlow/service.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cstdlib>
#include <iostream>

#include "dlow/dataset.hpp"
#include "dlow/errors.hpp"
#include "httplib.h"

namespace dlow {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;
using nlohmann::json;

namespace {

struct RequestError {
  int status;
  std::string kind;
  std::string detail;
};

torch::Dtype model_dtype(const RegisteredModel& m) {
  return m.loaded.generator->parameters().front().scalar_type();
}

ServiceResponse error_response(const RequestError& e) { return {e.status, {{"error", e.kind}, {"detail", e.detail}}}; }

const RegisteredModel& pick_model(const ModelRegistry& registry, const json& request) {
  if (request.contains("model")) {
    if (!request["model"].is_string()) throw RequestError{400, "bad_request", "'model' must be a string"};
    const auto id = request["model"].get<std::string>();
    if (const auto* m = registry.find(id)) return *m;
    throw RequestError{404, "not_found", cat("unknown model '", id, "'")};
  }
  if (registry.size() == 1) return *registry.models().front();
  if (registry.size() == 0) throw RequestError{404, "not_found", "no models are loaded"};
  throw RequestError{400, "bad_request", "'model' is required when several models are loaded"};
}

// Validated z as a (1, z_dim) row plus its JSON echo.
struct AppliedZ {
  torch::Tensor row;
  json echo;
};

AppliedZ parse_z(const json& z, const RegisteredModel& model) {
  const auto k = model.loaded.num_targets;
  const auto dtype = model_dtype(model);
  try {
    if (z.is_number()) {
      if (k != 1) throw RequestError{422, "invalid_z", cat("model '", model.id, "' needs a ", k, "-component z vector")};
      DomainnessValue v(z.get<double>());
      return {z_tensor(v, 1, dtype), v.value()};
    }
    if (z.is_array()) {
      std::vector<double> values;
      for (const auto& item : z) {
        if (!item.is_number()) throw RequestError{422, "invalid_z", "z components must be numbers"};
        values.push_back(item.get<double>());
      }
      if (static_cast<std::int64_t>(values.size()) != k) {
        throw RequestError{422, "invalid_z", cat("z has ", values.size(), " components; model '", model.id,
                                                 "' has ", k, " target domain", k == 1 ? "" : "s")};
      }
      if (k == 1) {
        DomainnessValue v(values[0]);
        return {z_tensor(v, 1, dtype), json::array({v.value()})};
      }
      DomainnessVector v(std::move(values));
      return {z_tensor(v, 1, dtype), std::vector<double>(v.values().begin(), v.values().end())};
    }
  } catch (const ValidationError& e) {
    throw RequestError{422, "invalid_z", e.what()};
  }
  throw RequestError{422, "invalid_z", "z must be a number or an array of numbers"};
}

// Input image fitted into the model's square canvas.
struct Letterbox {
  torch::Tensor canvas;  // (1, 3, S, S)
  std::int64_t width = 0, height = 0;
  std::int64_t scaled_width = 0, scaled_height = 0;
  std::int64_t left = 0, top = 0;
  std::int64_t size = 0;

  json describe() const {
    return {{"original", {width, height}},
            {"scaled", {scaled_width, scaled_height}},
            {"pad", {left, top, size - scaled_width - left, size - scaled_height - top}},
            {"resized", scaled_width != width || scaled_height != height}};
  }
};

torch::Tensor resize_to(const torch::Tensor& x, std::int64_t h, std::int64_t w) {
  if (x.size(2) == h && x.size(3) == w) return x;
  const bool shrinking = h < x.size(2) || w < x.size(3);
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<std::int64_t>{h, w})
                               .mode(torch::kBilinear)
                               .align_corners(false)
                               .antialias(shrinking));
}

Letterbox fit(const torch::Tensor& image, std::int64_t size, torch::Dtype dtype) {
  Letterbox box;
  box.size = size;
  box.height = image.size(1);
  box.width = image.size(2);
  const double scale = static_cast<double>(size) / static_cast<double>(std::max(box.width, box.height));
  box.scaled_width = std::clamp<std::int64_t>(std::llround(box.width * scale), 1, size);
  box.scaled_height = std::clamp<std::int64_t>(std::llround(box.height * scale), 1, size);
  box.left = (size - box.scaled_width) / 2;
  box.top = (size - box.scaled_height) / 2;
  auto scaled = resize_to(image.unsqueeze(0).to(dtype), box.scaled_height, box.scaled_width);
  box.canvas = F::pad(scaled, F::PadFuncOptions({box.left, size - box.scaled_width - box.left, box.top,
                                                 size - box.scaled_height - box.top}));
  return box;
}

torch::Tensor unfit(const torch::Tensor& out, const Letterbox& box) {
  auto crop = out.narrow(2, box.top, box.scaled_height).narrow(3, box.left, box.scaled_width);
  return resize_to(crop, box.height, box.width).squeeze(0).clamp(-1.0, 1.0).to(torch::kFloat32);
}

torch::Tensor decode_image(const json& request) {
  if (!request.contains("image") || !request["image"].is_string()) {
    throw RequestError{400, "bad_request", "'image' must be a base64 PNG string"};
  }
  std::string bytes;
  try {
    bytes = base64_decode(request["image"].get<std::string>());
  } catch (const ArgumentError& e) {
    throw RequestError{400, "bad_image", e.what()};
  }
  try {
    return decode_png(bytes);
  } catch (const std::exception& e) {
    throw RequestError{400, "bad_image", cat("image is not a decodable PNG: ", e.what())};
  }
}

std::string run_one(const RegisteredModel& model, const Letterbox& box, const torch::Tensor& z) {
  c10::InferenceMode guard;
  auto& g = const_cast<Generator&>(model.loaded.generator);
  auto out = g->forward(box.canvas, z);
  return base64_encode(encode_png(unfit(out, box)));
}

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

const RegisteredModel& ModelRegistry::add(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq != std::string::npos) return add(spec.substr(0, eq), spec.substr(eq + 1));
  return add(fs::path(spec).stem().string(), spec);
}

const RegisteredModel& ModelRegistry::add(const std::string& id, const fs::path& path) {
  if (id.empty()) throw ArgumentError("model id must not be empty");
  if (models_.count(id)) throw ArgumentError(cat("duplicate model id '", id, "'"));
  auto m = std::make_unique<RegisteredModel>();
  m->id = id;
  m->path = path;
  m->loaded = load_generator(path);
  m->domains = m->loaded.target_names;
  if (m->domains.empty()) {
    for (std::int64_t k = 0; k < m->loaded.num_targets; ++k) m->domains.push_back(cat("target_", k));
  }
  return *(models_[id] = std::move(m));
}

const RegisteredModel* ModelRegistry::find(const std::string& id) const {
  const auto it = models_.find(id);
  return it == models_.end() ? nullptr : it->second.get();
}

std::vector<const RegisteredModel*> ModelRegistry::models() const {
  std::vector<const RegisteredModel*> out;
  for (const auto& [id, m] : models_) out.push_back(m.get());
  return out;
}

ServiceResponse handle_translate(const ModelRegistry& registry, const json& request) {
  const auto start = std::chrono::steady_clock::now();
  try {
    if (!request.is_object()) throw RequestError{400, "bad_request", "request body must be a JSON object"};
    const auto& model = pick_model(registry, request);
    if (!request.contains("z")) throw RequestError{422, "invalid_z", "'z' is required"};
    auto z = parse_z(request["z"], model);
    auto image = decode_image(request);
    const auto dtype = z.row.scalar_type();
    auto box = fit(image, model.loaded.image_size, dtype);
    json body = {{"model", model.id},          {"image", run_one(model, box, z.row)},
                 {"z", z.echo},                {"width", box.width},
                 {"height", box.height},       {"resize", box.describe()}};
    body["latency_ms"] = elapsed_ms(start);
    return {200, body};
  } catch (const RequestError& e) {
    return error_response(e);
  }
}

ServiceResponse handle_sweep(const ModelRegistry& registry, const json& request) {
  const auto start = std::chrono::steady_clock::now();
  try {
    if (!request.is_object()) throw RequestError{400, "bad_request", "request body must be a JSON object"};
    const auto& model = pick_model(registry, request);
    if (!request.contains("zs") || !request["zs"].is_array()) {
      throw RequestError{400, "bad_request", "'zs' must be an array of z values"};
    }
    std::vector<AppliedZ> zs;
    for (std::size_t i = 0; i < request["zs"].size(); ++i) {
      try {
        zs.push_back(parse_z(request["zs"][i], model));
      } catch (RequestError& e) {
        e.detail = cat("zs[", i, "]: ", e.detail);
        throw;
      }
    }
    auto image = decode_image(request);
    const auto dtype = model_dtype(model);
    auto box = fit(image, model.loaded.image_size, dtype);
    json images = json::array(), echoes = json::array();
    for (const auto& z : zs) {
      images.push_back(run_one(model, box, z.row));
      echoes.push_back(z.echo);
    }
    json body = {{"model", model.id}, {"images", images},      {"zs", echoes},
                 {"width", box.width}, {"height", box.height}, {"resize", box.describe()}};
    body["latency_ms"] = elapsed_ms(start);
    return {200, body};
  } catch (const RequestError& e) {
    return error_response(e);
  }
}

ServiceResponse handle_info(const ModelRegistry& registry) {
  json models = json::array();
  for (const auto* m : registry.models()) {
    models.push_back({{"id", m->id},
                      {"num_targets", m->loaded.num_targets},
                      {"domains", m->domains},
                      {"image_size", m->loaded.image_size},
                      {"checkpoint_hash", m->loaded.checkpoint_hash}});
  }
  return {200, {{"models", models}}};
}

ServiceResponse handle_request(const ModelRegistry& registry, const std::string& method, const std::string& path,
                               const std::string& body) {
  if (method == "GET" && path == "/health") return {200, {{"status", "ok"}}};
  if (method == "GET" && path == "/info") return handle_info(registry);
  if (method == "POST" && (path == "/translate" || path == "/sweep")) {
    if (body.size() > kMaxPayloadBytes) {
      return error_response({413, "payload_too_large", cat("request body exceeds ", kMaxPayloadBytes, " bytes")});
    }
    json request;
    try {
      request = json::parse(body);
    } catch (const json::exception& e) {
      return error_response({400, "bad_request", cat("malformed JSON: ", e.what())});
    }
    return path == "/translate" ? handle_translate(registry, request) : handle_sweep(registry, request);
  }
  return error_response({404, "not_found", cat("no route ", method, " ", path)});
}

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw ArgumentError("base64 length is not a multiple of 4");
  std::string out(3 * (text.size() / 4), '\0');
  if (text.empty()) return out;
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) throw ArgumentError("invalid base64");
  std::size_t padding = 0;
  if (text.back() == '=') ++padding;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++padding;
  out.resize(static_cast<std::size_t>(n) - padding);
  return out;
}

struct ServiceServer::Impl {
  const ModelRegistry& registry;
  httplib::Server server;

  explicit Impl(const ModelRegistry& r) : registry(r) {
    server.set_payload_max_length(2 * kMaxPayloadBytes);
    auto handler = [this](const httplib::Request& req, httplib::Response& res) {
      const auto out = handle_request(registry, req.method, req.path, req.body);
      res.status = out.status;
      res.set_content(out.body.dump(), "application/json");
    };
    server.Get("/health", handler);
    server.Get("/info", handler);
    server.Post("/translate", handler);
    server.Post("/sweep", handler);
  }
};

ServiceServer::ServiceServer(const ModelRegistry& registry) : impl_(std::make_unique<Impl>(registry)) {}

ServiceServer::~ServiceServer() { stop(); }

int ServiceServer::start(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw IoError(cat("cannot bind ", host, ":", port));
  thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void ServiceServer::listen(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) throw IoError(cat("cannot listen on ", host, ":", port));
}

void ServiceServer::stop() {
  impl_->server.stop();
  if (thread_.joinable()) thread_.join();
}

int service_port(int fallback) {
  const char* env = std::getenv("DLOW_PORT");
  if (env == nullptr || *env == '\0') return fallback;
  char* end = nullptr;
  const long port = std::strtol(env, &end, 10);
  if (*end != '\0' || port < 0 || port > 65535) throw ArgumentError(cat("DLOW_PORT is not a port number: '", env, "'"));
  return static_cast<int>(port);
}

}  // namespace dlow
