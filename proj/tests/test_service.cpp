#include <torch/torch.h>

#include <cstdlib>
#include <string>

#include "testing.hpp"
#include "dlow/checkpoint.hpp"
#include "dlow/dataset.hpp"
#include "dlow/errors.hpp"
#include "dlow/service.hpp"
#include "helpers.hpp"
#include "httplib.h"

using namespace dlow;
using namespace dlow::test;
using nlohmann::json;

namespace {

std::filesystem::path write_model(const std::filesystem::path& path, std::int64_t k,
                                  std::vector<std::string> names = {}) {
  TrainConfig c;
  c.image_size = c.crop_size = 16;
  c.ngf = 4;
  c.n_residual = 1;
  c.seed = 2;
  c.num_targets = k;
  c.target_names = std::move(names);
  c.total_iterations = 1;
  DomainFlowTrainer(c).checkpoint(path);
  return path;
}

std::string png_b64(std::int64_t width, std::int64_t height, std::uint64_t seed) {
  auto gen = at::detail::createCPUGenerator(seed);
  return base64_encode(encode_png(torch::rand({3, height, width}, gen) * 2 - 1));
}

struct Fixture {
  TempDir dir;
  ModelRegistry registry;
  Fixture() {
    registry.add("flow", write_model(dir.path() / "flow.dlow", 1));
    registry.add("styles=" + write_model(dir.path() / "styles.dlow", 4, {"Monet", "VanGogh", "Ukiyoe", "Cezanne"}).string());
  }
};

}  // namespace

TEST_SUITE("service") {
  TEST_CASE("base64") {
    for (const std::string s : {"", "f", "fo", "foo", "foob", "fooba", "foobar"}) {
      CHECK(base64_decode(base64_encode(s)) == s);
    }
    CHECK(base64_encode("foobar") == "Zm9vYmFy");
    CHECK(base64_encode("fo") == "Zm8=");
    CHECK_THROWS_AS(base64_decode("Zm9v!!!!"), ArgumentError);
  }

  TEST_CASE("registry") {
    Fixture f;
    CHECK(f.registry.size() == 2);
    REQUIRE(f.registry.find("styles") != nullptr);
    CHECK(f.registry.find("styles")->domains == std::vector<std::string>{"Monet", "VanGogh", "Ukiyoe", "Cezanne"});
    CHECK(f.registry.find("flow")->domains == std::vector<std::string>{"target_0"});
    CHECK(f.registry.find("none") == nullptr);
    CHECK_THROWS_AS(f.registry.add("flow", f.dir.path() / "flow.dlow"), ArgumentError);
    CHECK_THROWS_AS(f.registry.add("x", f.dir.path() / "missing.dlow"), LoadError);
    ModelRegistry r;
    CHECK(r.add((f.dir.path() / "flow.dlow").string()).id == "flow");
  }

  TEST_CASE("translate") {
    Fixture f;
    const auto img = png_b64(16, 16, 1);
    const auto r = handle_translate(f.registry, {{"model", "flow"}, {"image", img}, {"z", 0.5}});
    REQUIRE(r.status == 200);
    CHECK(r.body["z"] == 0.5);
    CHECK(r.body["width"] == 16);
    CHECK(r.body["height"] == 16);
    CHECK(r.body["latency_ms"].get<double>() >= 0.0);
    const auto out = decode_png(base64_decode(r.body["image"].get<std::string>()));
    CHECK(out.sizes() == torch::IntArrayRef({3, 16, 16}));
    const auto again = handle_translate(f.registry, {{"model", "flow"}, {"image", img}, {"z", 0.5}});
    CHECK(again.body["image"] == r.body["image"]);
    const auto other = handle_translate(f.registry, {{"model", "flow"}, {"image", img}, {"z", 0.9}});
    CHECK(other.body["image"] != r.body["image"]);
  }

  TEST_CASE("non-square input is letterboxed and restored") {
    Fixture f;
    const auto r = handle_translate(f.registry, {{"model", "flow"}, {"image", png_b64(20, 12, 2)}, {"z", 0.3}});
    REQUIRE(r.status == 200);
    const auto out = decode_png(base64_decode(r.body["image"].get<std::string>()));
    CHECK(out.size(1) == 12);
    CHECK(out.size(2) == 20);
    CHECK(r.body["resize"]["resized"] == true);
    CHECK(r.body["resize"]["original"] == json::array({20, 12}));
  }

  TEST_CASE("vector z") {
    Fixture f;
    const auto img = png_b64(16, 16, 3);
    const auto ok = handle_translate(f.registry, {{"model", "styles"}, {"image", img}, {"z", {0.1, 0.2, 0.3, 0.4}}});
    CHECK(ok.status == 200);
    const auto range =
        handle_translate(f.registry, {{"model", "styles"}, {"image", img}, {"z", {0.5, 0.5, 0.5, -0.5}}});
    CHECK(range.status == 422);
    CHECK(range.body["error"] == "invalid_z");
    CHECK(range.body["detail"].get<std::string>().find("range") != std::string::npos);
    const auto sum = handle_translate(f.registry, {{"model", "styles"}, {"image", img}, {"z", {0.5, 0.5, 0.5, 0.5}}});
    CHECK(sum.status == 422);
    CHECK(sum.body["detail"].get<std::string>().find("sum") != std::string::npos);
    CHECK(handle_translate(f.registry, {{"model", "styles"}, {"image", img}, {"z", {0.5, 0.5}}}).status == 422);
    CHECK(handle_translate(f.registry, {{"model", "styles"}, {"image", img}, {"z", 0.5}}).status == 422);
    CHECK(handle_translate(f.registry, {{"model", "flow"}, {"image", img}, {"z", -0.1}}).status == 422);
  }

  TEST_CASE("request errors") {
    Fixture f;
    const auto img = png_b64(16, 16, 4);
    CHECK(handle_translate(f.registry, {{"model", "nope"}, {"image", img}, {"z", 0.5}}).status == 404);
    CHECK(handle_translate(f.registry, {{"model", "flow"}, {"image", "aGVsbG8="}, {"z", 0.5}}).status == 400);
    CHECK(handle_translate(f.registry, {{"model", "flow"}, {"image", "***"}, {"z", 0.5}}).status == 400);
    CHECK(handle_translate(f.registry, {{"model", "flow"}, {"z", 0.5}}).status == 400);
    CHECK(handle_translate(f.registry, {{"model", "flow"}, {"image", img}}).status == 422);
    CHECK(handle_translate(f.registry, {{"model", "flow"}, {"image", img}, {"z", "half"}}).status == 422);
    CHECK(handle_translate(f.registry, {{"image", img}, {"z", 0.5}}).status == 400);
  }

  TEST_CASE("model may be omitted with a single model") {
    TempDir dir;
    ModelRegistry one;
    one.add("only", write_model(dir.path() / "only.dlow", 1));
    const auto r = handle_translate(one, {{"image", png_b64(16, 16, 5)}, {"z", 0.5}});
    CHECK(r.status == 200);
    CHECK(r.body["model"] == "only");
  }

  TEST_CASE("sweep") {
    Fixture f;
    const auto img = png_b64(16, 16, 6);
    const json grid = {0.0, 0.3, 0.6, 0.8, 1.0};
    const auto r = handle_sweep(f.registry, {{"model", "flow"}, {"image", img}, {"zs", grid}});
    REQUIRE(r.status == 200);
    REQUIRE(r.body["images"].size() == 5);
    CHECK(r.body["zs"] == grid);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const auto single = handle_translate(f.registry, {{"model", "flow"}, {"image", img}, {"z", grid[i]}});
      CHECK(single.body["image"] == r.body["images"][i]);
    }
    const auto empty = handle_sweep(f.registry, {{"model", "flow"}, {"image", img}, {"zs", json::array()}});
    CHECK(empty.status == 200);
    CHECK(empty.body["images"].empty());
    const auto bad = handle_sweep(f.registry, {{"model", "flow"}, {"image", img}, {"zs", {0.2, 3.0}}});
    CHECK(bad.status == 422);
    CHECK(bad.body["detail"].get<std::string>().rfind("zs[1]", 0) == 0);
  }

  TEST_CASE("info") {
    Fixture f;
    const auto r = handle_info(f.registry);
    CHECK(r.status == 200);
    REQUIRE(r.body["models"].size() == 2);
    for (const auto& m : r.body["models"]) {
      const auto id = m["id"].get<std::string>();
      CHECK(m["checkpoint_hash"] == file_sha256(f.dir.path() / (id + ".dlow")));
      CHECK(m["image_size"] == 16);
      if (id == "styles") {
        CHECK(m["num_targets"] == 4);
        CHECK(m["domains"].size() == 4);
      }
    }
    ModelRegistry empty;
    const auto e = handle_info(empty);
    CHECK(e.status == 200);
    CHECK(e.body["models"].empty());
  }

  TEST_CASE("routing") {
    Fixture f;
    CHECK(handle_request(f.registry, "GET", "/health", "").status == 200);
    CHECK(handle_request(f.registry, "GET", "/info", "").body["models"].size() == 2);
    CHECK(handle_request(f.registry, "GET", "/nowhere", "").status == 404);
    CHECK(handle_request(f.registry, "POST", "/translate", "{not json").status == 400);
    CHECK(handle_request(f.registry, "POST", "/translate", "[1, 2]").status == 400);
    CHECK(handle_request(f.registry, "POST", "/translate", std::string(kMaxPayloadBytes + 1, ' ')).status == 413);
    const auto body = json{{"model", "flow"}, {"image", png_b64(16, 16, 7)}, {"z", 0.5}}.dump();
    CHECK(handle_request(f.registry, "POST", "/translate", body).status == 200);
  }

  TEST_CASE("http server") {
    Fixture f;
    ServiceServer server(f.registry);
    const int port = server.start("127.0.0.1", 0);
    REQUIRE(port > 0);
    httplib::Client client("127.0.0.1", port);
    auto health = client.Get("/health");
    REQUIRE(health);
    CHECK(health->status == 200);
    const auto body = json{{"model", "flow"}, {"image", png_b64(16, 16, 8)}, {"z", 0.5}}.dump();
    auto res = client.Post("/translate", body, "application/json");
    REQUIRE(res);
    CHECK(res->status == 200);
    const auto direct = handle_request(f.registry, "POST", "/translate", body);
    CHECK(json::parse(res->body)["image"] == direct.body["image"]);
    auto bad = client.Post("/translate", "{}", "application/json");
    REQUIRE(bad);
    CHECK(bad->status == 400);
    server.stop();
  }

  TEST_CASE("checkpoints are not modified by serving") {
    Fixture f;
    const auto before = file_sha256(f.dir.path() / "flow.dlow");
    handle_translate(f.registry, {{"model", "flow"}, {"image", png_b64(16, 16, 9)}, {"z", 0.5}});
    CHECK(file_sha256(f.dir.path() / "flow.dlow") == before);
  }

  TEST_CASE("port from environment") {
    ::unsetenv("DLOW_PORT");
    CHECK(service_port(8080) == 8080);
    ::setenv("DLOW_PORT", "9191", 1);
    CHECK(service_port(8080) == 9191);
    ::unsetenv("DLOW_PORT");
  }
}
