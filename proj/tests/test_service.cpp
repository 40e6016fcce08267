#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include <unistd.h>

#include "doctest.h"
#include "oracles.hpp"  // Eigen before httplib: resolv.h defines _res
#include "dve/error.hpp"
#include "dve/service.hpp"
#include "httplib.h"
#include "json.hpp"
#include "stub_embedder.hpp"

using namespace dve;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected dve::Error");
  return ErrorCode::InvalidArgument;
}

EmbeddingBank bank_of(std::size_t dim, std::vector<std::pair<std::string, std::vector<double>>> entries) {
  EmbeddingBank b{dim, {}};
  for (auto& [n, v] : entries) b.entries.push_back({n, EmbeddingVector(v)});
  return b;
}

std::vector<std::uint8_t> decode_b64(const std::string& s) {
  static const std::string chars = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::vector<std::uint8_t> out;
  std::uint32_t buf = 0;
  int bits = 0;
  for (char c : s) {
    if (c == '=') break;
    buf = (buf << 6) | static_cast<std::uint32_t>(chars.find(c));
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<std::uint8_t>(buf >> bits));
    }
  }
  return out;
}

fs::path temp_dir(const char* tag) {
  const auto dir = fs::temp_directory_path() / (std::string("dve_") + tag + "_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("embed_prompt examples") {
  const auto bank = bank_of(2, {{"chair", {1, 0}}, {"table", {0, 1}}, {"chair", {0.6, 0.8}}});
  const auto hit = embed_prompt("chair", EmbedderConfig{}, bank);
  REQUIRE(hit.size() == 2);
  CHECK(hit[1].values()[1] == 0.8);
  CHECK(code_of([&] { embed_prompt("lamp", EmbedderConfig{}, bank); }) == ErrorCode::NoEmbedderConfigured);
  CHECK(code_of([&] { embed_prompt("", EmbedderConfig{}, bank); }) == ErrorCode::InvalidArgument);

  testing::StubEmbedder stub(2);
  EmbedderConfig ext{EmbedderConfig::Mode::external, stub.url(), 200};
  CHECK(embed_prompt("chair", ext, bank).size() == 2);
  CHECK(stub.calls() == 0);
  const auto miss = embed_prompt("lamp", ext, bank, 2);
  CHECK(stub.calls() == 1);
  CHECK(miss[0].data() == testing::stub_vector("lamp", 2));
  CHECK(code_of([&] { embed_prompt("wrongdim", ext, bank, 2); }) == ErrorCode::DimMismatch);
  CHECK(code_of([&] { embed_prompt("garbage", ext, bank, 2); }) == ErrorCode::BadSchema);
  CHECK(code_of([&] { embed_prompt("slow:lamp", ext, bank, 2); }) == ErrorCode::ProviderTimeout);

  EmbedderConfig dead{EmbedderConfig::Mode::external, "http://127.0.0.1:1/embed", 200};
  CHECK(code_of([&] { embed_prompt("lamp", dead, bank); }) == ErrorCode::ProviderUnreachable);
  EmbedderConfig no_url{EmbedderConfig::Mode::external, "", 200};
  CHECK(code_of([&] { no_url.validate(); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("embedder config from environment") {
  ::setenv("DVE_EMBEDDER_URL", "http://example.invalid/embed", 1);
  ::setenv("DVE_EMBEDDER_TIMEOUT_MS", "1234", 1);
  const auto cfg = EmbedderConfig::from_env();
  CHECK(cfg.mode == EmbedderConfig::Mode::external);
  CHECK(cfg.timeout_ms == 1234);
  ::unsetenv("DVE_EMBEDDER_URL");
  ::unsetenv("DVE_EMBEDDER_TIMEOUT_MS");
  CHECK(EmbedderConfig::from_env().mode == EmbedderConfig::Mode::bank_only);
}

TEST_CASE("query_image examples") {
  SessionState s;
  s.bank = bank_of(3, {{"chair", {0, 0, 2}}, {"x", {1, 0, 0}}});
  s.volumes["one"] = {DenseEmbeddingMap(1, 1, 3, {0, 0, 5}), std::nullopt};
  const auto r = query_image(s, "one", "chair");
  CHECK(r.stats.min == doctest::Approx(1.0));
  CHECK(r.stats.max == doctest::Approx(1.0));
  CHECK(r.stats.mean == doctest::Approx(1.0));

  s.volumes["ortho"] = {DenseEmbeddingMap(1, 2, 3, {0, 1, 0, 0, 0, 3}), std::nullopt};
  const auto o = query_image(s, "ortho", "x");
  CHECK(o.stats.min == 0.0);
  CHECK(o.stats.max == 0.0);
  CHECK(o.stats.mean == 0.0);
  CHECK(o.pgm == encode_similarity_pgm(1, 2, o.similarity));

  CHECK(code_of([&] { query_image(s, "nope", "x"); }) == ErrorCode::UnknownImage);
  CHECK(code_of([&] { query_map(s, "x"); }) == ErrorCode::NoMapLoaded);
}

TEST_CASE("query_image equals the per-pixel cosine path and max-aggregates prompts") {
  std::mt19937_64 rng(60);
  for (int i = 0; i < 20; ++i) {
    SessionState s;
    const auto a = testing::random_vector(rng, 6), b = testing::random_vector(rng, 6);
    s.bank = bank_of(6, {{"p", a}, {"p", b}});
    s.volumes["img"] = {testing::random_map(rng, 4, 4, 6), std::nullopt};
    const auto r = query_image(s, "img", "p");
    const auto& m = s.volumes["img"].map;
    for (std::size_t p = 0; p < m.pixels(); ++p) {
      const double want = std::max(cosine_similarity(m.pixel(p), a), cosine_similarity(m.pixel(p), b));
      CHECK(std::abs(r.similarity[p] - want) <= 1e-6);
    }
  }
}

TEST_CASE("query_map respects top_k and library ordering") {
  std::mt19937_64 rng(61);
  std::uniform_real_distribution<double> coord(-2, 2);
  MapBuilder b(0.5, 4);
  for (int i = 0; i < 60; ++i) b.insert({coord(rng), coord(rng), coord(rng)}, testing::random_vector(rng, 4));
  SessionState s;
  s.map = map_freeze(b).map;
  const auto q = testing::random_vector(rng, 4);
  s.bank = bank_of(4, {{"q", q}});
  const auto full = map_query(*s.map, q);
  const auto top = query_map(s, "q", 5);
  REQUIRE(top.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(top[i].key == full[i].key);
    CHECK(top[i].similarity == full[i].similarity);
  }
  CHECK(query_map(s, "q").size() == std::min<std::size_t>(kDefaultTopK, full.size()));
}

TEST_CASE("handle_segment examples") {
  std::mt19937_64 rng(62);
  SessionState s;
  s.volumes["img"] = {testing::random_map(rng, 3, 4, 5), std::nullopt};
  s.volumes["img"].map.pixel(0)[0] = 0;
  for (double& v : s.volumes["img"].map.pixel(5)) v = 0.0;

  CHECK(code_of([&] { handle_segment(s, "img", SegmentMode::mean); }) == ErrorCode::MissingReferences);
  CHECK(code_of([&] { handle_segment(s, "img", SegmentMode::probe); }) == ErrorCode::MissingProbe);
  CHECK(code_of([&] { handle_segment(s, "img", SegmentMode::text); }) == ErrorCode::MissingReferences);
  CHECK(code_of([&] { parse_segment_mode("fancy"); }) == ErrorCode::InvalidArgument);

  s.probe = ProbeWeights{Matrix(2, 5), {0.0, 1.0}};
  const auto probe = handle_segment(s, "img", SegmentMode::probe);
  for (auto v : probe.labels.labels) CHECK(v == 1);
  CHECK(probe.legend == std::vector<std::string>{"class_0", "class_1"});
  CHECK(probe.lmap == encode_label_map(probe.labels));

  s.bank = bank_of(5, {{"only", testing::random_vector(rng, 5)}});
  const auto text = handle_segment(s, "img", SegmentMode::text);
  CHECK(text.legend == std::vector<std::string>{"only"});
  for (std::size_t p = 0; p < text.labels.pixels(); ++p) CHECK(text.labels.labels[p] == (p == 5 ? kIgnoreLabel : 0));

  Matrix rows(2, 5);
  rows.data = testing::random_vector(rng, 10);
  const std::vector<std::string> names{"a", "b"};
  s.mean_references = ReferenceSet::from_rows(names, rows);
  const auto mean = handle_segment(s, "img", SegmentMode::mean);
  CHECK(mean.labels == classify_argmax(s.volumes["img"].map, *s.mean_references).labels);
  CHECK(mean.legend == names);
}

TEST_CASE("service loads, dimension checks, and byte-identical JSON") {
  const auto dir = temp_dir("svc");
  std::mt19937_64 rng(63);
  write_volume(testing::random_map(rng, 3, 3, 4), Dtype::f32, dir / "kitchen.dvem");
  write_volume(testing::random_map(rng, 2, 2, 5), Dtype::f32, dir / "wide.dvem");
  {
    std::ofstream(dir / "bank.json") << json{{"dim", 4},
                                             {"entries",
                                              {{{"name", "chair"}, {"vector", testing::random_vector(rng, 4)}},
                                               {{"name", "wall"}, {"vector", testing::random_vector(rng, 4)}}}}}
                                            .dump();
    std::ofstream(dir / "manifest.json") << R"([{"id": "k2", "embedding_map": "kitchen.dvem", "display_image": "k.pgm"}])";
    std::ofstream(dir / "k.pgm") << "P5\n1 1\n255\n\x7f";
  }
  QueryService svc;
  svc.load("bank", dir / "bank.json");
  svc.load("volume", dir / "kitchen.dvem");
  svc.load("manifest", dir / "manifest.json");
  CHECK(code_of([&] { svc.load("volume", dir / "wide.dvem"); }) == ErrorCode::DimMismatch);
  CHECK(code_of([&] { svc.load("bogus", dir / "bank.json"); }) == ErrorCode::InvalidArgument);
  CHECK(svc.snapshot()->volumes.size() == 2);
  CHECK(svc.snapshot()->volumes.at("k2").display_image.has_value());

  const auto session = json::parse(svc.session_json());
  CHECK(session["dim"] == 4);
  CHECK(session["bank"]["names"] == json{"chair", "wall"});

  const std::string q = R"({"target": "kitchen", "prompt": "chair"})";
  const auto a = svc.query_json(q), b = svc.query_json(q);
  CHECK(a == b);
  const auto body = json::parse(a);
  const auto lib = query_image(*svc.snapshot(), "kitchen", "chair");
  CHECK(decode_b64(body["pgm_base64"]) == lib.pgm);
  CHECK(body["stats"]["max"].get<double>() == lib.stats.max);

  const std::string seg = R"({"image": "kitchen", "mode": "text"})";
  CHECK(svc.segment_json(seg) == svc.segment_json(seg));
  CHECK(decode_b64(json::parse(svc.segment_json(seg))["lmap_base64"]) ==
        handle_segment(*svc.snapshot(), "kitchen", SegmentMode::text).lmap);

  CHECK(code_of([&] { svc.query_json("{"); }) == ErrorCode::BadSchema);
  CHECK(code_of([&] { svc.query_json(R"({"target": "map", "prompt": "chair"})"); }) == ErrorCode::NoMapLoaded);
  fs::remove_all(dir);
}

TEST_CASE("readers never observe a partial load") {
  const auto dir = temp_dir("swap");
  std::mt19937_64 rng(64);
  for (int i = 0; i < 4; ++i) write_volume(testing::random_map(rng, 2, 2, 3), Dtype::f32, dir / ("v" + std::to_string(i) + ".dvem"));
  QueryService svc;
  std::atomic<bool> done{false};
  std::atomic<int> bad{0};
  std::thread reader([&] {
    while (!done) {
      const auto s = svc.snapshot();
      for (const auto& [id, v] : s->volumes)
        if (v.map.dim() != 3) ++bad;
    }
  });
  for (int round = 0; round < 50; ++round)
    for (int i = 0; i < 4; ++i) svc.load("volume", dir / ("v" + std::to_string(i) + ".dvem"));
  done = true;
  reader.join();
  CHECK(bad == 0);
  CHECK(svc.snapshot()->volumes.size() == 4);
  fs::remove_all(dir);
}

TEST_CASE("HTTP frontend routes and status codes") {
  const auto dir = temp_dir("http");
  std::mt19937_64 rng(65);
  write_volume(testing::random_map(rng, 2, 3, 4), Dtype::f32, dir / "room.dvem");
  {
    std::ofstream(dir / "bank.json") << json{{"dim", 4}, {"entries", {{{"name", "door"}, {"vector", {1, 0, 0, 0}}}}}}.dump();
    std::ofstream(dir / "room.pgm") << "P5\n1 1\n255\n\x10";
  }
  testing::StubEmbedder stub(4);
  SessionState init;
  init.embedder = EmbedderConfig{EmbedderConfig::Mode::external, stub.url(), 2000};
  QueryService svc(init);
  HttpFrontend http(svc);
  const int port = http.bind("127.0.0.1", 0);
  std::thread server([&] { http.listen(); });
  httplib::Client cli("127.0.0.1", port);
  for (int i = 0; i < 50 && !cli.Get("/session"); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(20));

  auto res = cli.Post("/load", json{{"kind", "bank"}, {"path", (dir / "bank.json").string()}}.dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == 200);
  res = cli.Post("/load",
                 json{{"kind", "volume"}, {"path", (dir / "room.dvem").string()}, {"display_image", (dir / "room.pgm").string()}}
                     .dump(),
                 "application/json");
  CHECK(res->status == 200);

  res = cli.Post("/query", R"({"target": "room", "prompt": "door"})", "application/json");
  CHECK(res->status == 200);
  CHECK(res->body == svc.query_json(R"({"target": "room", "prompt": "door"})"));

  // bank miss goes to the stub provider
  const auto first = cli.Post("/query", R"({"target": "room", "prompt": "sofa"})", "application/json");
  const auto second = cli.Post("/query", R"({"target": "room", "prompt": "sofa"})", "application/json");
  CHECK(first->status == 200);
  CHECK(first->body == second->body);
  CHECK(stub.calls() == 2);

  res = cli.Post("/query", R"({"target": "attic", "prompt": "door"})", "application/json");
  CHECK(res->status == 404);
  CHECK(json::parse(res->body)["error"] == "UnknownImage");
  res = cli.Post("/query", R"({"target": "map", "prompt": "door"})", "application/json");
  CHECK(res->status == 404);
  res = cli.Post("/segment", R"({"image": "room", "mode": "probe"})", "application/json");
  CHECK(res->status == 409);
  CHECK(json::parse(res->body)["error"] == "MissingProbe");
  res = cli.Post("/segment", R"({"image": "room", "mode": "text"})", "application/json");
  CHECK(res->status == 200);
  CHECK(json::parse(res->body)["legend"] == json{"door"});
  res = cli.Post("/query", "not json", "application/json");
  CHECK(res->status == 400);

  res = cli.Get("/image/room");
  CHECK(res->status == 200);
  CHECK(res->body == std::string("P5\n1 1\n255\n\x10"));
  CHECK(cli.Get("/image/none")->status == 404);
  CHECK(json::parse(cli.Get("/session")->body)["volumes"].size() == 1);

  http.stop();
  server.join();
  fs::remove_all(dir);

  CHECK(http_status_for(ErrorCode::ProviderTimeout) == 504);
  CHECK(http_status_for(ErrorCode::ProviderUnreachable) == 502);
  CHECK(http_status_for(ErrorCode::NoEmbedderConfigured) == 409);
}
