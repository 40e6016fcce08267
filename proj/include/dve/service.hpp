#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "dve/closed_set.hpp"
#include "dve/error.hpp"
#include "dve/map3d.hpp"
#include "dve/storage.hpp"

namespace dve {

struct EmbedderConfig {
  enum class Mode { bank_only, external };

  Mode mode = Mode::bank_only;
  std::string endpoint;  // e.g. http://127.0.0.1:9000/embed
  int timeout_ms = 5000;

  void validate() const;
  /// DVE_EMBEDDER_URL selects external mode; DVE_EMBEDDER_TIMEOUT_MS overrides the timeout.
  static EmbedderConfig from_env();
};

/// Bank hits return every same-name entry (callers max-aggregate); misses go
/// to the external provider as {"prompt": str} -> {"dim": int, "vector": [...]}.
/// `expected_dim` of 0 skips the dimension check.
std::vector<EmbeddingVector> embed_prompt(const std::string& prompt, const EmbedderConfig& cfg,
                                          const EmbeddingBank& bank, std::size_t expected_dim = 0);

struct LoadedVolume {
  DenseEmbeddingMap map;
  std::optional<std::filesystem::path> display_image;
};

/// Everything a request can read. Replaced wholesale on every load.
struct SessionState {
  std::map<std::string, LoadedVolume> volumes;
  std::optional<EmbeddingMap3D> map;
  EmbeddingBank bank;
  std::optional<ReferenceSet> mean_references;
  std::optional<ProbeWeights> probe;
  EmbedderConfig embedder;

  /// The single embedding dim shared by all loaded artifacts, if any is loaded.
  std::optional<std::size_t> dim() const;
};

struct SimilarityStats {
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
};

struct ImageQueryResult {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> similarity;  // max over prompt vectors; 0 at zero-norm pixels
  SimilarityStats stats;
  Bytes pgm;
};

ImageQueryResult query_image(const SessionState& session, const std::string& image_id, const std::string& prompt);

inline constexpr std::size_t kDefaultTopK = 100;

std::vector<CellScore> query_map(const SessionState& session, const std::string& prompt,
                                 std::size_t top_k = kDefaultTopK);

enum class SegmentMode { text, mean, probe };
SegmentMode parse_segment_mode(const std::string& mode);

struct SegmentResult {
  LabelMap labels;
  Bytes lmap;
  std::vector<std::string> legend;
};

SegmentResult handle_segment(const SessionState& session, const std::string& image_id, SegmentMode mode);

/// Owns the current session snapshot. Loads build a new state off to the side
/// and publish it with one pointer swap; readers hold their own snapshot.
class QueryService {
 public:
  explicit QueryService(SessionState initial = {});

  std::shared_ptr<const SessionState> snapshot() const;

  /// kind: bank | probe | map | volume | manifest | references.
  /// `id` names a volume (defaults to the file stem).
  void load(const std::string& kind, const std::filesystem::path& path, const std::string& id = {},
            const std::optional<std::filesystem::path>& display_image = std::nullopt);

  // JSON endpoints. Each returns the response body; errors throw dve::Error.
  std::string session_json() const;
  std::string query_json(const std::string& request_body) const;
  std::string segment_json(const std::string& request_body) const;

 private:
  mutable std::mutex swap_mutex_;  // guards the pointer only
  std::mutex load_mutex_;          // serializes writers
  std::shared_ptr<const SessionState> state_;
};

/// HTTP status used for an error code.
int http_status_for(ErrorCode code) noexcept;

/// Blocking HTTP server. Routes: GET /session, POST /load, POST /query,
/// POST /segment, GET /image/{id}.
class HttpFrontend {
 public:
  explicit HttpFrontend(QueryService& service);
  ~HttpFrontend();
  HttpFrontend(const HttpFrontend&) = delete;
  HttpFrontend& operator=(const HttpFrontend&) = delete;

  /// Binds; port 0 picks a free one. Returns the bound port.
  int bind(const std::string& host, int port);
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::string base64_encode(std::span<const std::uint8_t> bytes);

}  // namespace dve
