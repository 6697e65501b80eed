#include "topick/services.hpp"

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <set>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <json.hpp>

#include "topick/error.hpp"
#include "topick/hashing.hpp"
#include "topick/tokenize.hpp"

namespace topick {

using nlohmann::json;

std::vector<std::vector<std::string>> CoreTopicMatcher::match_all(const std::vector<MatchRequest>& reqs)
{
    std::vector<std::vector<std::string>> out;
    out.reserve(reqs.size());
    for (const auto& r : reqs) out.push_back(match(r));
    return out;
}

// ---------------------------------------------------------------------------
// Offline stub

std::vector<std::string> StubMatcher::match(const MatchRequest& req)
{
    const auto& names = req.candidate_names;
    if (mode_ == Mode::kIdentity || names.empty()) return names;
    if (req.candidate_bm25.size() != names.size() || req.candidate_cosine.size() != names.size()) {
        throw DimensionMismatch("match request scores are not aligned with candidate names");
    }

    std::vector<double> sorted = req.candidate_cosine;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    const double median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);

    std::vector<bool> keep(n);
    std::size_t kept = 0;
    for (std::size_t i = 0; i < n; ++i) {
        keep[i] = req.candidate_bm25[i] > 0.0 || req.candidate_cosine[i] >= median;
        kept += keep[i];
    }
    if (kept < kMinTopics) {
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return req.candidate_cosine[a] > req.candidate_cosine[b];
        });
        for (auto i : order) {
            if (kept >= kMinTopics) break;
            if (!keep[i]) {
                keep[i] = true;
                ++kept;
            }
        }
    }
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) {
        if (keep[i]) out.push_back(names[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Prompt and response parsing

std::string render_match_prompt(const std::string& demo_text, const std::vector<std::string>& candidate_names)
{
    std::string joined;
    for (std::size_t i = 0; i < candidate_names.size(); ++i) {
        if (i) joined += ", ";
        joined += candidate_names[i];
    }
    return "You will receive a question-answer demonstration along with a candidate topic set. "
           "Your task is to output relevant topics of the demonstration. "
           "You may choose topics from the candidate topic set, or you can create new relevant topics. "
           "You must provide at least five topics. "
           "Do not include any explanation or numbers. "
           "Please just output the list of relevant topics, separated by commas. "
           "Demonstration: " +
           demo_text + ", Candidate topic set: " + joined;
}

std::vector<std::string> parse_topic_list(const std::string& content)
{
    std::vector<std::string> out;
    std::set<std::string> seen;
    std::size_t start = 0;
    while (start <= content.size()) {
        std::size_t end = content.find_first_of(",\n", start);
        if (end == std::string::npos) end = content.size();
        auto name = normalize_topic_name(std::string_view(content).substr(start, end - start));
        if (!name.empty() && seen.insert(name).second) out.push_back(std::move(name));
        start = end + 1;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Endpoint configuration and transport

void MatcherEndpointConfig::validate() const
{
    if (base_url.rfind("http://", 0) != 0 && base_url.rfind("https://", 0) != 0) {
        throw ConfigError("matcher base_url must start with http:// or https:// (set TOPICK_BASE_URL)");
    }
    if (model_name.empty()) throw ConfigError("matcher model_name is empty");
    if (timeout.count() <= 0) throw ConfigError("matcher timeout must be > 0");
    if (max_retries < 0) throw ConfigError("matcher max_retries must be >= 0");
    if (max_in_flight < 1 || max_in_flight > 1024) throw ConfigError("matcher max_in_flight must lie in [1,1024]");
    if (backoff_base.count() < 0) throw ConfigError("matcher backoff must be >= 0");
}

void MatcherEndpointConfig::apply_environment()
{
    if (const char* v = std::getenv("TOPICK_BASE_URL"); v && *v) base_url = v;
    if (const char* v = std::getenv("TOPICK_API_KEY"); v && *v) api_key = v;
}

HttpTransport make_http_transport(const MatcherEndpointConfig& cfg)
{
    cfg.validate();
    const std::size_t scheme_end = cfg.base_url.find("://") + 3;
    const std::size_t path_start = cfg.base_url.find('/', scheme_end);
    const std::string origin = cfg.base_url.substr(0, path_start);
    std::string prefix = path_start == std::string::npos ? "" : cfg.base_url.substr(path_start);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();

    return [origin, prefix, key = cfg.api_key, timeout = cfg.timeout](const HttpRequest& req) {
        httplib::Client client(origin);
        const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
        const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
        client.set_connection_timeout(secs.count(), usecs.count());
        client.set_read_timeout(secs.count(), usecs.count());
        client.set_write_timeout(secs.count(), usecs.count());
        httplib::Headers headers;
        if (!key.empty()) headers.emplace("Authorization", "Bearer " + key);
        auto res = client.Post(prefix + req.path, headers, req.body, "application/json");
        if (!res) throw TransportError("POST " + origin + prefix + req.path + ": " + httplib::to_string(res.error()));
        return HttpResponse{res->status, res->body};
    };
}

namespace {

bool retryable_status(int status) { return status == 408 || status == 429 || status >= 500; }

void backoff(const MatcherEndpointConfig& cfg, int attempt)
{
    std::this_thread::sleep_for(cfg.backoff_base * (1LL << std::min(attempt, 10)));
}

/// Sends `req`, retrying transport failures and retryable statuses. Non-2xx
/// responses that cannot succeed on retry throw at once.
std::string post_with_retry(const MatcherEndpointConfig& cfg, const HttpTransport& transport, const HttpRequest& req,
                            std::atomic<std::size_t>& calls)
{
    std::string last_error;
    for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
        if (attempt) backoff(cfg, attempt - 1);
        ++calls;
        HttpResponse res;
        try {
            res = transport(req);
        } catch (const TransportError& e) {
            last_error = e.what();
            continue;
        }
        if (res.status >= 200 && res.status < 300) return res.body;
        last_error = "HTTP " + std::to_string(res.status) + " from " + req.path + ": " + res.body.substr(0, 200);
        if (!retryable_status(res.status)) throw TransportError(last_error);
    }
    throw TransportError("giving up after " + std::to_string(cfg.max_retries + 1) + " attempts: " + last_error);
}

}  // namespace

// ---------------------------------------------------------------------------
// Response cache

ResponseCache::ResponseCache(std::filesystem::path path) : path_(std::move(path))
{
    if (path_.empty()) return;
    if (std::filesystem::exists(path_)) {
        std::ifstream in(path_);
        std::string line;
        while (std::getline(in, line)) {
            // A torn final record from an interrupted run is skipped.
            auto rec = json::parse(line, nullptr, false);
            if (rec.is_discarded() || !rec.is_object() || !rec.contains("k") || !rec.contains("v")) continue;
            if (!rec["k"].is_string() || !rec["v"].is_string()) continue;
            entries_[rec["k"].get<std::string>()] = rec["v"].get<std::string>();
        }
    }
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    std::vector<const std::pair<const std::string, std::string>*> sorted;
    for (const auto& e : entries_) sorted.push_back(&e);
    std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->first < b->first; });
    auto tmp = path_;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw Error("cannot write cache " + tmp.string());
        for (auto* e : sorted) out << json{{"k", e->first}, {"v", e->second}}.dump() << '\n';
    }
    std::filesystem::rename(tmp, path_);
}

std::optional<std::string> ResponseCache::get(const std::string& key) const
{
    std::lock_guard lock(mu_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

void ResponseCache::put(const std::string& key, const std::string& value)
{
    std::lock_guard lock(mu_);
    entries_[key] = value;
    if (path_.empty()) return;
    std::ofstream out(path_, std::ios::app);
    if (!out) throw Error("cannot append to cache " + path_.string());
    out << json{{"k", key}, {"v", value}}.dump() << '\n';
    out.flush();
}

std::size_t ResponseCache::size() const
{
    std::lock_guard lock(mu_);
    return entries_.size();
}

// ---------------------------------------------------------------------------
// Chat-completions matcher

namespace {

const MatcherEndpointConfig& validated(const MatcherEndpointConfig& cfg)
{
    cfg.validate();
    return cfg;
}

}  // namespace

HttpMatcher::HttpMatcher(MatcherEndpointConfig cfg, HttpTransport transport)
    : cfg_(std::move(cfg)), transport_(std::move(transport)), cache_(cfg_.cache_path),
      in_flight_(validated(cfg_).max_in_flight)
{
    if (!transport_) throw ConfigError("HttpMatcher needs a transport");
}

std::string HttpMatcher::cache_key(const std::string& demo_text, const std::vector<std::string>& names,
                                   const std::string& model)
{
    Sha256 cand;
    for (const auto& n : names) cand.update(n).update(std::string_view("\0", 1));
    return sha256_hex(sha256_hex(demo_text) + ":" + cand.hex_digest() + ":" + model);
}

std::string HttpMatcher::request_once(const std::string& prompt)
{
    const json body{{"model", cfg_.model_name}, {"messages", json::array({{{"role", "user"}, {"content", prompt}}})}};
    in_flight_.acquire();
    std::string raw;
    try {
        raw = post_with_retry(cfg_, transport_, {"/chat/completions", body.dump()}, calls_);
    } catch (...) {
        in_flight_.release();
        throw;
    }
    in_flight_.release();
    return raw;
}

std::vector<std::string> HttpMatcher::match(const MatchRequest& req)
{
    if (req.candidate_names.empty()) throw Error("core-topic matching needs at least one candidate");
    const auto key = cache_key(req.demo_text, req.candidate_names, cfg_.model_name);
    if (auto hit = cache_.get(key)) return parse_topic_list(json::parse(*hit).value("content", ""));

    const auto prompt = render_match_prompt(req.demo_text, req.candidate_names);
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
        if (attempt) backoff(cfg_, attempt - 1);
        const auto raw = request_once(prompt);
        auto resp = json::parse(raw, nullptr, false);
        std::string content;
        if (!resp.is_discarded() && resp.contains("choices") && resp["choices"].is_array() &&
            !resp["choices"].empty()) {
            const auto& msg = resp["choices"][0].value("message", json::object());
            if (msg.contains("content") && msg["content"].is_string()) content = msg["content"].get<std::string>();
        }
        auto names = parse_topic_list(content);
        if (names.empty()) continue;
        json entry{{"content", content}, {"model", resp.value("model", cfg_.model_name)}};
        if (resp.contains("system_fingerprint") && resp["system_fingerprint"].is_string()) {
            entry["system_fingerprint"] = resp["system_fingerprint"];
        }
        cache_.put(key, entry.dump());
        return names;
    }
    return {};
}

std::vector<std::vector<std::string>> HttpMatcher::match_all(const std::vector<MatchRequest>& reqs)
{
    std::vector<std::vector<std::string>> out(reqs.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    auto worker = [&] {
        for (std::size_t i = next++; i < reqs.size(); i = next++) {
            try {
                out[i] = match(reqs[i]);
            } catch (...) {
                std::lock_guard lock(failure_mu);
                if (!failure) failure = std::current_exception();
                next = reqs.size();
            }
        }
    };
    const auto workers = std::min<std::size_t>(cfg_.max_in_flight, reqs.size());
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    pool.clear();
    if (failure) std::rethrow_exception(failure);
    return out;
}

// ---------------------------------------------------------------------------
// Embeddings endpoint

EmbeddingClient::EmbeddingClient(MatcherEndpointConfig cfg, HttpTransport transport)
    : cfg_(std::move(cfg)), transport_(std::move(transport)), cache_(cfg_.cache_path)
{
    cfg_.validate();
    if (!transport_) throw ConfigError("EmbeddingClient needs a transport");
}

EmbeddingMatrix EmbeddingClient::fetch(const std::vector<std::string>& texts)
{
    auto key_of = [&](const std::string& t) { return sha256_hex("embedding:" + cfg_.model_name + ":" + t); };

    std::vector<std::string> missing;
    std::set<std::string> queued;
    for (const auto& t : texts) {
        if (!cache_.get(key_of(t)) && queued.insert(t).second) missing.push_back(t);
    }
    if (!missing.empty()) {
        const json body{{"model", cfg_.model_name}, {"input", missing}};
        std::atomic<std::size_t> calls{0};
        const auto raw = post_with_retry(cfg_, transport_, {"/embeddings", body.dump()}, calls);
        calls_ += calls.load();
        auto resp = json::parse(raw, nullptr, false);
        if (resp.is_discarded() || !resp.contains("data") || !resp["data"].is_array() ||
            resp["data"].size() != missing.size()) {
            throw TransportError("embeddings response does not hold one vector per input");
        }
        for (std::size_t i = 0; i < missing.size(); ++i) {
            const auto& item = resp["data"][i];
            const std::size_t idx = item.value("index", i);
            if (idx >= missing.size() || !item.contains("embedding") || !item["embedding"].is_array()) {
                throw TransportError("malformed embeddings response item " + std::to_string(i));
            }
            cache_.put(key_of(missing[idx]), item["embedding"].dump());
        }
    }

    EmbeddingMatrix m;
    for (const auto& t : texts) {
        const auto row = json::parse(*cache_.get(key_of(t))).get<std::vector<float>>();
        if (!m.empty() && row.size() != m.dim()) {
            throw DimensionMismatch("embedding endpoint returned dimension " + std::to_string(row.size()) +
                                    ", earlier rows have " + std::to_string(m.dim()));
        }
        m.append_row(row);
    }
    return m;
}

}  // namespace topick
