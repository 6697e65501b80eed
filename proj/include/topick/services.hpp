#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <unordered_map>
#include <vector>

#include "topick/embedding.hpp"

namespace topick {

/// One core-topic matching request. Scores are aligned with
/// `candidate_names` and only consulted by the offline stub.
struct MatchRequest {
    std::string demo_text;
    std::vector<std::string> candidate_names;
    std::vector<double> candidate_bm25;
    std::vector<double> candidate_cosine;
};

/// Turns a demonstration plus its candidate topics into core topic names.
class CoreTopicMatcher {
  public:
    virtual ~CoreTopicMatcher() = default;
    virtual std::vector<std::string> match(const MatchRequest& req) = 0;

    /// Results are index-aligned with `reqs`. The default runs sequentially.
    virtual std::vector<std::vector<std::string>> match_all(const std::vector<MatchRequest>& reqs);
};

/// Deterministic offline matcher.
///
/// kIdentity returns the candidates unchanged. kHeuristic keeps candidates
/// with BM25 > 0 or cosine >= the median candidate cosine, then pads by
/// descending cosine until at least five names are kept (or candidates run
/// out). Output preserves candidate order.
class StubMatcher : public CoreTopicMatcher {
  public:
    enum class Mode { kIdentity, kHeuristic };
    explicit StubMatcher(Mode mode = Mode::kHeuristic) : mode_(mode) {}
    std::vector<std::string> match(const MatchRequest& req) override;

    static constexpr std::size_t kMinTopics = 5;

  private:
    Mode mode_;
};

/// Core-topic matching prompt with the demonstration and the comma-joined
/// candidate list substituted in.
std::string render_match_prompt(const std::string& demo_text,
                                const std::vector<std::string>& candidate_names);

/// Comma split, trim, normalize, drop empties and duplicates (first wins).
std::vector<std::string> parse_topic_list(const std::string& content);

struct HttpRequest {
    std::string path;  // relative to base_url, e.g. "/chat/completions"
    std::string body;  // JSON
};

struct HttpResponse {
    int status = 0;
    std::string body;
};

/// Pluggable HTTP transport; throws TransportError on connection failure.
using HttpTransport = std::function<HttpResponse(const HttpRequest&)>;

struct MatcherEndpointConfig {
    std::string base_url;   // e.g. https://api.openai.com/v1
    std::string model_name = "gpt-4o";
    std::string api_key;    // from TOPICK_API_KEY only
    std::chrono::milliseconds timeout{60000};
    int max_retries = 3;
    int max_in_flight = 4;
    std::chrono::milliseconds backoff_base{500};
    std::filesystem::path cache_path;  // empty: in-memory only

    void validate() const;

    /// Fills base_url and api_key from TOPICK_BASE_URL / TOPICK_API_KEY when set.
    void apply_environment();
};

/// cpp-httplib transport bound to `cfg.base_url`; sends the bearer token.
HttpTransport make_http_transport(const MatcherEndpointConfig& cfg);

/// Append-only JSONL key/value log. Later records win; the file is compacted
/// on open. Writes are serialized and flushed per record.
class ResponseCache {
  public:
    ResponseCache() = default;
    explicit ResponseCache(std::filesystem::path path);

    std::optional<std::string> get(const std::string& key) const;
    void put(const std::string& key, const std::string& value);
    std::size_t size() const;

  private:
    std::filesystem::path path_;
    mutable std::mutex mu_;
    std::unordered_map<std::string, std::string> entries_;
};

/// Chat-completions core-topic matcher with retry, on-disk cache and a cap
/// on concurrent requests.
class HttpMatcher : public CoreTopicMatcher {
  public:
    HttpMatcher(MatcherEndpointConfig cfg, HttpTransport transport);

    std::vector<std::string> match(const MatchRequest& req) override;
    std::vector<std::vector<std::string>> match_all(const std::vector<MatchRequest>& reqs) override;

    std::size_t network_calls() const noexcept { return calls_.load(); }

    static std::string cache_key(const std::string& demo_text, const std::vector<std::string>& names,
                                 const std::string& model);

  private:
    std::string request_once(const std::string& prompt);

    MatcherEndpointConfig cfg_;
    HttpTransport transport_;
    ResponseCache cache_;
    std::counting_semaphore<1024> in_flight_;
    std::atomic<std::size_t> calls_{0};
};

/// Embeddings-endpoint client ({base}/embeddings, OpenAI-compatible), cached
/// per (model, text).
class EmbeddingClient {
  public:
    EmbeddingClient(MatcherEndpointConfig cfg, HttpTransport transport);

    /// One row per text, order preserved. Empty input gives a 0-row matrix.
    EmbeddingMatrix fetch(const std::vector<std::string>& texts);
    std::size_t network_calls() const noexcept { return calls_; }

  private:
    MatcherEndpointConfig cfg_;
    HttpTransport transport_;
    ResponseCache cache_;
    std::size_t calls_ = 0;
};

}  // namespace topick
