#include "dve/service.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <set>

#include "dve/error.hpp"
#include "httplib.h"
#include "json.hpp"

namespace dve {

using nlohmann::json;

void EmbedderConfig::validate() const {
  if (mode == Mode::external && endpoint.empty()) {
    throw Error(ErrorCode::InvalidArgument, "external embedder mode requires an endpoint");
  }
  if (timeout_ms <= 0) throw Error(ErrorCode::InvalidArgument, "embedder timeout must be positive");
}

EmbedderConfig EmbedderConfig::from_env() {
  EmbedderConfig cfg;
  if (const char* url = std::getenv("DVE_EMBEDDER_URL"); url != nullptr && *url != '\0') {
    cfg.mode = Mode::external;
    cfg.endpoint = url;
  }
  if (const char* t = std::getenv("DVE_EMBEDDER_TIMEOUT_MS"); t != nullptr && *t != '\0') {
    cfg.timeout_ms = std::atoi(t);
  }
  cfg.validate();
  return cfg;
}

namespace {

EmbeddingVector call_provider(const std::string& prompt, const EmbedderConfig& cfg) {
  const auto scheme_end = cfg.endpoint.find("://");
  const auto path_start = cfg.endpoint.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  const std::string origin = cfg.endpoint.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : cfg.endpoint.substr(path_start);

  httplib::Client client(origin);
  const auto timeout = std::chrono::milliseconds(cfg.timeout_ms);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  const auto res = client.Post(path, json{{"prompt", prompt}}.dump(), "application/json");
  if (!res) {
    const auto err = res.error();
    if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read) {
      throw Error(ErrorCode::ProviderTimeout, cfg.endpoint + " (" + httplib::to_string(err) + ")");
    }
    throw Error(ErrorCode::ProviderUnreachable, cfg.endpoint + " (" + httplib::to_string(err) + ")");
  }
  if (res->status != 200) {
    throw Error(ErrorCode::ProviderUnreachable, cfg.endpoint + " answered HTTP " + std::to_string(res->status));
  }
  json body;
  try {
    body = json::parse(res->body);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadSchema, std::string("provider response: ") + e.what());
  }
  if (!body.is_object() || !body.contains("dim") || !body.contains("vector") || !body["vector"].is_array()) {
    throw Error(ErrorCode::BadSchema, "provider response needs 'dim' and 'vector'");
  }
  std::vector<double> values;
  for (const auto& v : body["vector"]) {
    if (!v.is_number()) throw Error(ErrorCode::BadSchema, "provider vector must hold numbers");
    values.push_back(v.get<double>());
  }
  if (!body["dim"].is_number_integer() || body["dim"].get<std::int64_t>() != static_cast<std::int64_t>(values.size())) {
    throw Error(ErrorCode::BadSchema, "provider 'dim' disagrees with vector length");
  }
  return EmbeddingVector(std::move(values));
}

}  // namespace

std::vector<EmbeddingVector> embed_prompt(const std::string& prompt, const EmbedderConfig& cfg,
                                          const EmbeddingBank& bank, std::size_t expected_dim) {
  if (prompt.empty()) throw Error(ErrorCode::InvalidArgument, "prompt must be non-empty");
  std::vector<EmbeddingVector> out;
  for (const auto* e : bank.find(prompt)) out.push_back(e->vector);
  if (out.empty()) {
    if (cfg.mode != EmbedderConfig::Mode::external) {
      throw Error(ErrorCode::NoEmbedderConfigured, "'" + prompt + "' is not in the bank");
    }
    cfg.validate();
    out.push_back(call_provider(prompt, cfg));
  }
  for (const auto& v : out) {
    if (expected_dim != 0 && v.dim() != expected_dim) {
      throw Error(ErrorCode::DimMismatch, "prompt embedding has D=" + std::to_string(v.dim()) + ", session D=" +
                                              std::to_string(expected_dim));
    }
    if (l2_norm(v.values()) < kZeroNorm) throw Error(ErrorCode::ZeroVector, "prompt embedding is zero");
  }
  return out;
}

std::optional<std::size_t> SessionState::dim() const {
  if (!volumes.empty()) return volumes.begin()->second.map.dim();
  if (map) return map->dim();
  if (!bank.entries.empty()) return bank.dim;
  if (mean_references) return mean_references->dim();
  if (probe) return probe->dim();
  return std::nullopt;
}

namespace {

const LoadedVolume& find_volume(const SessionState& s, const std::string& id) {
  const auto it = s.volumes.find(id);
  if (it == s.volumes.end()) throw Error(ErrorCode::UnknownImage, id);
  return it->second;
}

}  // namespace

ImageQueryResult query_image(const SessionState& session, const std::string& image_id, const std::string& prompt) {
  const auto& volume = find_volume(session, image_id);
  const auto& map = volume.map;
  const auto prompts = embed_prompt(prompt, session.embedder, session.bank, map.dim());

  ImageQueryResult out;
  out.height = map.height();
  out.width = map.width();
  out.similarity.assign(map.pixels(), 0.0);
  for_each_index(map.pixels(), Exec::parallel, [&](std::size_t p) {
    const auto x = map.pixel(p);
    if (l2_norm(x) < kZeroNorm) return;
    double best = -1.0;
    for (const auto& q : prompts) best = std::max(best, cosine_similarity(x, q.values()));
    out.similarity[p] = best;
  });
  if (!out.similarity.empty()) {
    const auto [lo, hi] = std::minmax_element(out.similarity.begin(), out.similarity.end());
    double sum = 0.0;
    for (double s : out.similarity) sum += s;
    out.stats = {*lo, *hi, sum / static_cast<double>(out.similarity.size())};
  }
  out.pgm = encode_similarity_pgm(out.height, out.width, out.similarity);
  return out;
}

std::vector<CellScore> query_map(const SessionState& session, const std::string& prompt, std::size_t top_k) {
  if (!session.map) throw Error(ErrorCode::NoMapLoaded, "no 3D map in the session");
  const auto prompts = embed_prompt(prompt, session.embedder, session.bank, session.map->dim());
  std::vector<CellScore> scores = map_query(*session.map, prompts.front().values());
  if (prompts.size() > 1) {
    // Max over prompt vectors per cell, then re-rank.
    std::map<VoxelKey, double> best;
    for (const auto& q : prompts) {
      for (const auto& s : map_query(*session.map, q.values())) {
        auto [it, inserted] = best.try_emplace(s.key, s.similarity);
        if (!inserted) it->second = std::max(it->second, s.similarity);
      }
    }
    scores.clear();
    for (const auto& [k, v] : best) scores.push_back({k, v});
    std::stable_sort(scores.begin(), scores.end(), [](const CellScore& a, const CellScore& b) {
      if (a.similarity != b.similarity) return a.similarity > b.similarity;
      return a.key < b.key;
    });
  }
  if (scores.size() > top_k) scores.resize(top_k);
  return scores;
}

SegmentMode parse_segment_mode(const std::string& mode) {
  if (mode == "text") return SegmentMode::text;
  if (mode == "mean") return SegmentMode::mean;
  if (mode == "probe") return SegmentMode::probe;
  throw Error(ErrorCode::InvalidArgument, "mode must be text, mean or probe");
}

SegmentResult handle_segment(const SessionState& session, const std::string& image_id, SegmentMode mode) {
  const auto& map = find_volume(session, image_id).map;
  SegmentResult out;
  switch (mode) {
    case SegmentMode::text: {
      if (session.bank.entries.empty()) throw Error(ErrorCode::MissingReferences, "bank has no entries");
      std::vector<std::string> names;
      Matrix rows(session.bank.entries.size(), session.bank.dim);
      for (std::size_t i = 0; i < session.bank.entries.size(); ++i) {
        names.push_back(session.bank.entries[i].name);
        const auto& v = session.bank.entries[i].vector.data();
        std::copy(v.begin(), v.end(), rows.row(i).begin());
      }
      const auto refs = ReferenceSet::from_named_rows(names, rows);
      out.labels = classify_argmax(map, refs).labels;
      out.legend = refs.class_names();
      break;
    }
    case SegmentMode::mean: {
      if (!session.mean_references) throw Error(ErrorCode::MissingReferences, "no visual-mean references loaded");
      out.labels = classify_argmax(map, *session.mean_references).labels;
      out.legend = session.mean_references->class_names();
      break;
    }
    case SegmentMode::probe: {
      if (!session.probe) throw Error(ErrorCode::MissingProbe, "no probe weights loaded");
      out.labels = probe_predict(map, *session.probe);
      for (std::size_t c = 0; c < session.probe->classes(); ++c) out.legend.push_back("class_" + std::to_string(c));
      break;
    }
  }
  out.lmap = encode_label_map(out.labels);
  return out;
}

// ---------------------------------------------------------------------------
// QueryService

QueryService::QueryService(SessionState initial)
    : state_(std::make_shared<const SessionState>(std::move(initial))) {}

std::shared_ptr<const SessionState> QueryService::snapshot() const {
  std::lock_guard lock(swap_mutex_);
  return state_;
}

namespace {

void require_dim(const SessionState& s, std::size_t dim, const std::string& what) {
  if (const auto d = s.dim(); d && *d != dim) {
    throw Error(ErrorCode::DimMismatch, what + " has D=" + std::to_string(dim) + ", session D=" + std::to_string(*d));
  }
}

void add_volume(SessionState& s, const std::string& id, DenseEmbeddingMap map,
                std::optional<std::filesystem::path> display) {
  require_dim(s, map.dim(), "volume '" + id + "'");
  s.volumes[id] = LoadedVolume{std::move(map), std::move(display)};
}

}  // namespace

void QueryService::load(const std::string& kind, const std::filesystem::path& path, const std::string& id,
                        const std::optional<std::filesystem::path>& display_image) {
  std::lock_guard writer(load_mutex_);
  SessionState next = *snapshot();
  if (kind == "bank") {
    auto bank = load_embedding_bank(path);
    // The bank itself is replaced, so only other artifacts constrain D.
    SessionState probe_state = next;
    probe_state.bank = {};
    require_dim(probe_state, bank.dim, "bank");
    next.bank = std::move(bank);
  } else if (kind == "probe") {
    auto w = load_probe(path);
    SessionState probe_state = next;
    probe_state.probe.reset();
    require_dim(probe_state, w.dim(), "probe");
    next.probe = std::move(w);
  } else if (kind == "map") {
    auto m = read_map3d(path);
    SessionState probe_state = next;
    probe_state.map.reset();
    require_dim(probe_state, m.dim(), "map");
    next.map = std::move(m);
  } else if (kind == "references") {
    const auto bank = load_embedding_bank(path);
    if (bank.entries.empty()) throw Error(ErrorCode::MissingReferences, "reference file has no entries");
    std::vector<std::string> names;
    Matrix rows(bank.entries.size(), bank.dim);
    for (std::size_t i = 0; i < bank.entries.size(); ++i) {
      names.push_back(bank.entries[i].name);
      const auto& v = bank.entries[i].vector.data();
      std::copy(v.begin(), v.end(), rows.row(i).begin());
    }
    SessionState probe_state = next;
    probe_state.mean_references.reset();
    require_dim(probe_state, bank.dim, "references");
    next.mean_references = ReferenceSet::from_named_rows(names, rows);
  } else if (kind == "volume") {
    add_volume(next, id.empty() ? path.stem().string() : id, read_volume(path), display_image);
  } else if (kind == "manifest") {
    for (auto& e : load_volume_manifest(path)) add_volume(next, e.id, read_volume(e.embedding_map), e.display_image);
  } else {
    throw Error(ErrorCode::InvalidArgument, "unknown load kind '" + kind + "'");
  }
  auto published = std::make_shared<const SessionState>(std::move(next));
  std::lock_guard lock(swap_mutex_);
  state_ = std::move(published);
}

namespace {

json parse_request(const std::string& body) {
  try {
    auto j = json::parse(body);
    if (!j.is_object()) throw Error(ErrorCode::BadSchema, "request body must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadSchema, std::string("request body: ") + e.what());
  }
}

std::string string_field(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_string()) {
    throw Error(ErrorCode::BadSchema, std::string("request needs string field '") + key + "'");
  }
  return j[key].get<std::string>();
}

}  // namespace

std::string QueryService::session_json() const {
  const auto s = snapshot();
  json j;
  j["dim"] = s->dim() ? json(*s->dim()) : json(nullptr);
  j["volumes"] = json::array();
  for (const auto& [id, v] : s->volumes) {
    j["volumes"].push_back({{"id", id},
                            {"height", v.map.height()},
                            {"width", v.map.width()},
                            {"dim", v.map.dim()},
                            {"display_image", v.display_image.has_value()}});
  }
  j["map"] = s->map ? json{{"cells", s->map->size()}, {"cell_size", s->map->cell_size()}} : json(nullptr);
  std::vector<std::string> names;
  std::set<std::string> seen;
  for (const auto& e : s->bank.entries) {
    if (seen.insert(e.name).second) names.push_back(e.name);
  }
  j["bank"] = {{"entries", s->bank.entries.size()}, {"names", names}};
  j["probe"] = s->probe ? json{{"classes", s->probe->classes()}} : json(nullptr);
  j["mean_references"] = s->mean_references ? json{{"classes", s->mean_references->class_names()}} : json(nullptr);
  j["embedder"] = {{"mode", s->embedder.mode == EmbedderConfig::Mode::external ? "external" : "bank-only"},
                   {"endpoint", s->embedder.endpoint}};
  return j.dump();
}

std::string QueryService::query_json(const std::string& request_body) const {
  const auto req = parse_request(request_body);
  const auto target = string_field(req, "target");
  const auto prompt = string_field(req, "prompt");
  const auto s = snapshot();
  json out;
  if (target == "map") {
    std::size_t top_k = kDefaultTopK;
    if (req.contains("top_k")) {
      if (!req["top_k"].is_number_unsigned()) throw Error(ErrorCode::BadSchema, "top_k must be a non-negative integer");
      top_k = req["top_k"].get<std::size_t>();
    }
    out["target"] = "map";
    out["results"] = json::array();
    for (const auto& c : query_map(*s, prompt, top_k)) {
      out["results"].push_back({{"key", {c.key.x, c.key.y, c.key.z}}, {"similarity", c.similarity}});
    }
  } else {
    const auto r = query_image(*s, target, prompt);
    out["target"] = "image";
    out["image"] = target;
    out["height"] = r.height;
    out["width"] = r.width;
    out["stats"] = {{"min", r.stats.min}, {"max", r.stats.max}, {"mean", r.stats.mean}};
    out["pgm_base64"] = base64_encode(r.pgm);
  }
  return out.dump();
}

std::string QueryService::segment_json(const std::string& request_body) const {
  const auto req = parse_request(request_body);
  const auto image = string_field(req, "image");
  const auto mode = parse_segment_mode(string_field(req, "mode"));
  const auto r = handle_segment(*snapshot(), image, mode);
  json out;
  out["image"] = image;
  out["height"] = r.labels.height;
  out["width"] = r.labels.width;
  out["legend"] = r.legend;
  out["lmap_base64"] = base64_encode(r.lmap);
  return out.dump();
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  return httplib::detail::base64_encode(std::string(bytes.begin(), bytes.end()));
}

int http_status_for(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::UnknownImage:
    case ErrorCode::NoMapLoaded:
      return 404;
    case ErrorCode::NoEmbedderConfigured:
    case ErrorCode::MissingReferences:
    case ErrorCode::MissingProbe:
      return 409;
    case ErrorCode::ProviderUnreachable:
      return 502;
    case ErrorCode::ProviderTimeout:
      return 504;
    default:
      return 400;
  }
}

}  // namespace dve
