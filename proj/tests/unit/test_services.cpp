#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "synthetic.hpp"
#include "tempdir.hpp"
#include "topick/error.hpp"
#include "topick/services.hpp"
#include "topick/topic_identification.hpp"

using namespace topick;
using namespace topick::testing;
using nlohmann::json;

namespace {

MatcherEndpointConfig test_endpoint(const std::filesystem::path& cache = {})
{
    MatcherEndpointConfig cfg;
    cfg.base_url = "http://localhost:1/v1";
    cfg.backoff_base = std::chrono::milliseconds(0);
    cfg.cache_path = cache;
    return cfg;
}

std::string chat_reply(const std::string& content)
{
    return json{{"model", "gpt-4o-2024-08-06"},
                {"system_fingerprint", "fp_test"},
                {"choices", json::array({{{"index", 0}, {"message", {{"role", "assistant"}, {"content", content}}}}})}}
        .dump();
}

/// Scripted transport: pops one response per call and records requests.
struct Script {
    std::mutex mu;
    std::vector<std::function<HttpResponse(const HttpRequest&)>> steps;
    std::vector<HttpRequest> seen;
    std::atomic<int> active{0}, peak{0};

    HttpTransport transport()
    {
        return [this](const HttpRequest& req) {
            std::function<HttpResponse(const HttpRequest&)> step;
            {
                std::lock_guard lock(mu);
                seen.push_back(req);
                REQUIRE_FALSE(steps.empty());
                step = steps.front();
                if (steps.size() > 1) steps.erase(steps.begin());
            }
            const int now = ++active;
            int p = peak.load();
            while (now > p && !peak.compare_exchange_weak(p, now)) {}
            auto res = step(req);
            --active;
            return res;
        };
    }
};

MatchRequest request(std::string demo = "Q: What do cows eat?\nA: Grass.")
{
    MatchRequest r;
    r.demo_text = std::move(demo);
    r.candidate_names = {"herbivore", "omnivore", "grass"};
    return r;
}

}  // namespace

TEST_CASE("match prompt reproduces the template verbatim")
{
    const auto p = render_match_prompt("Q: x? A: y.", {"food chain", "ecosystem"});
    CHECK(p ==
          "You will receive a question-answer demonstration along with a candidate topic set. Your task is to "
          "output relevant topics of the demonstration. You may choose topics from the candidate topic set, or you "
          "can create new relevant topics. You must provide at least five topics. Do not include any explanation or "
          "numbers. Please just output the list of relevant topics, separated by commas. Demonstration: Q: x? A: "
          "y., Candidate topic set: food chain, ecosystem");
}

TEST_CASE("topic lists are split, trimmed, normalized and de-duplicated")
{
    CHECK(parse_topic_list("ecosystem, food chain, herbivore, omnivore, predation") ==
          std::vector<std::string>{"ecosystem", "food chain", "herbivore", "omnivore", "predation"});
    CHECK(parse_topic_list(" Food  Chain ,food chain,, ,\nEcosystem") ==
          std::vector<std::string>{"food chain", "ecosystem"});
    CHECK(parse_topic_list("").empty());
}

TEST_CASE("stub matcher: identity and heuristic modes")
{
    MatchRequest r;
    r.candidate_names = {"a", "b", "c", "d", "e", "f", "g", "h"};
    r.candidate_bm25 = {1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
    r.candidate_cosine = {0.0, 0.9, 0.1, 0.8, 0.2, 0.7, 0.3, 0.6};
    CHECK(StubMatcher(StubMatcher::Mode::kIdentity).match(r) == r.candidate_names);
    // median cosine = 0.45: keeps a (bm25), b, d, f, h.
    CHECK(StubMatcher().match(r) == std::vector<std::string>{"a", "b", "d", "f", "h"});

    r.candidate_bm25.assign(8, 0.0);
    r.candidate_cosine = {0.5, 0.5, 0.5, 0.5, 0.9, 0.1, 0.2, 0.3};
    // median 0.5 keeps a-e (five names) without padding.
    CHECK(StubMatcher().match(r) == std::vector<std::string>{"a", "b", "c", "d", "e"});

    r.candidate_names = {"a", "b", "c", "d", "e", "f"};
    r.candidate_bm25.assign(6, 0.0);
    r.candidate_cosine = {0.1, 0.9, 0.3, 0.8, 0.2, 0.05};
    // median 0.25 keeps b, c, d; padding by cosine adds e then a.
    CHECK(StubMatcher().match(r) == std::vector<std::string>{"a", "b", "c", "d", "e"});

    r.candidate_names = {"x", "y"};
    r.candidate_bm25 = {0.0, 0.0};
    r.candidate_cosine = {0.1, 0.2};
    CHECK(StubMatcher().match(r) == std::vector<std::string>{"x", "y"});
}

TEST_CASE("endpoint config validation and environment")
{
    auto cfg = test_endpoint();
    CHECK_NOTHROW(cfg.validate());
    cfg.timeout = std::chrono::milliseconds(0);
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = test_endpoint();
    cfg.max_retries = -1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = test_endpoint();
    cfg.base_url = "ftp://x";
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    ::setenv("TOPICK_BASE_URL", "https://example.invalid/v1", 1);
    ::setenv("TOPICK_API_KEY", "sk-test", 1);
    MatcherEndpointConfig env;
    env.apply_environment();
    CHECK(env.base_url == "https://example.invalid/v1");
    CHECK(env.api_key == "sk-test");
    ::unsetenv("TOPICK_BASE_URL");
    ::unsetenv("TOPICK_API_KEY");
}

TEST_CASE("http matcher sends one chat message and parses the reply")
{
    Script s;
    s.steps.push_back([](const HttpRequest&) {
        return HttpResponse{200, chat_reply("ecosystem, food chain, herbivore, omnivore, predation")};
    });
    HttpMatcher m(test_endpoint(), s.transport());
    const auto names = m.match(request());
    CHECK(names.size() == 5);
    CHECK(names.front() == "ecosystem");
    REQUIRE(s.seen.size() == 1);
    CHECK(s.seen[0].path == "/chat/completions");
    const auto body = json::parse(s.seen[0].body);
    CHECK(body["model"] == "gpt-4o");
    REQUIRE(body["messages"].size() == 1);
    CHECK(body["messages"][0]["role"] == "user");
    CHECK(body["messages"][0]["content"] == render_match_prompt(request().demo_text, request().candidate_names));
}

TEST_CASE("cached requests make no network calls, across instances too")
{
    TempDir dir;
    Script s;
    s.steps.push_back([](const HttpRequest&) { return HttpResponse{200, chat_reply("a, b, c, d, e")}; });
    {
        HttpMatcher m(test_endpoint(dir / "cache.jsonl"), s.transport());
        const auto first = m.match(request());
        const auto again = m.match(request());
        CHECK(first == again);
        CHECK(m.network_calls() == 1);
    }
    HttpMatcher fresh(test_endpoint(dir / "cache.jsonl"), s.transport());
    CHECK(fresh.match(request()) == std::vector<std::string>{"a", "b", "c", "d", "e"});
    CHECK(fresh.network_calls() == 0);
    const auto entry = json::parse(read_text(dir / "cache.jsonl").substr(0, read_text(dir / "cache.jsonl").find('\n')));
    CHECK(json::parse(entry["v"].get<std::string>())["system_fingerprint"] == "fp_test");

    // A different candidate set is a different key.
    auto other = request();
    other.candidate_names.push_back("plants");
    fresh.match(other);
    CHECK(fresh.network_calls() == 1);
}

TEST_CASE("a torn trailing cache record is ignored")
{
    TempDir dir;
    write_text(dir / "cache.jsonl", "{\"k\":\"a\",\"v\":\"1\"}\n{\"k\":\"b\",\"v\":\"2\"}\n{\"k\":\"c\",\"v");
    ResponseCache c(dir / "cache.jsonl");
    CHECK(c.size() == 2);
    CHECK(c.get("b") == "2");
    c.put("a", "3");
    ResponseCache again(dir / "cache.jsonl");
    CHECK(again.get("a") == "3");
    CHECK(again.size() == 2);
}

TEST_CASE("transport failures and 5xx are retried with backoff")
{
    Script s;
    s.steps.push_back([](const HttpRequest&) -> HttpResponse { throw TransportError("connection refused"); });
    s.steps.push_back([](const HttpRequest&) { return HttpResponse{503, "busy"}; });
    s.steps.push_back([](const HttpRequest&) { return HttpResponse{200, chat_reply("x, y, z, w, v")}; });
    HttpMatcher m(test_endpoint(), s.transport());
    CHECK(m.match(request()).size() == 5);
    CHECK(m.network_calls() == 3);
}

TEST_CASE("exhausted retries and client errors raise TransportError")
{
    Script s;
    s.steps.push_back([](const HttpRequest&) { return HttpResponse{500, "down"}; });
    auto cfg = test_endpoint();
    cfg.max_retries = 2;
    HttpMatcher m(cfg, s.transport());
    CHECK_THROWS_AS(m.match(request()), TransportError);
    CHECK(m.network_calls() == 3);

    Script t;
    t.steps.push_back([](const HttpRequest&) { return HttpResponse{401, "bad key"}; });
    HttpMatcher m2(cfg, t.transport());
    CHECK_THROWS_AS(m2.match(request()), TransportError);
    CHECK(m2.network_calls() == 1);
}

TEST_CASE("an empty parse is retried, then yields no names")
{
    Script s;
    s.steps.push_back([](const HttpRequest&) { return HttpResponse{200, chat_reply(" , ")}; });
    auto cfg = test_endpoint();
    cfg.max_retries = 1;
    HttpMatcher m(cfg, s.transport());
    CHECK(m.match(request()).empty());
    CHECK(m.network_calls() == 2);
}

TEST_CASE("match_all keeps order and caps in-flight requests")
{
    Script s;
    s.steps.push_back([](const HttpRequest& req) {
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
        const auto prompt = json::parse(req.body)["messages"][0]["content"].get<std::string>();
        const auto at = prompt.find("Demonstration: ") + 15;
        const auto tag = prompt.substr(at, prompt.find(',', at) - at);
        return HttpResponse{200, chat_reply(tag + ", a, b, c, d")};
    });
    auto cfg = test_endpoint();
    cfg.max_in_flight = 3;
    HttpMatcher m(cfg, s.transport());
    std::vector<MatchRequest> reqs;
    for (int i = 0; i < 20; ++i) reqs.push_back(request("demo" + std::to_string(i)));
    const auto out = m.match_all(reqs);
    for (int i = 0; i < 20; ++i) CHECK(out[i].front() == "demo" + std::to_string(i));
    CHECK(s.peak.load() <= 3);
    CHECK(s.peak.load() >= 2);
}

TEST_CASE("label_pool through a caching matcher equals the uncached result")
{
    // Stub-backed endpoint: the transport answers with the heuristic stub's
    // choice, so cache hits can be compared with recomputation.
    TempDir dir;
    const auto spec = SyntheticSpec{.demos = 25, .topics = 15, .dim = 6, .seed = 3};
    auto base = synthetic_pool(spec);
    std::vector<MatchRequest> reqs;
    for (std::size_t d = 0; d < base.size(); ++d) {
        reqs.push_back(make_match_request(base, d, candidate_topics(base, d, {}), {}));
    }
    Script s;
    s.steps.push_back([&](const HttpRequest& req) {
        const auto prompt = json::parse(req.body)["messages"][0]["content"].get<std::string>();
        for (const auto& r : reqs) {
            if (prompt == render_match_prompt(r.demo_text, r.candidate_names)) {
                std::string joined;
                for (const auto& n : StubMatcher().match(r)) joined += (joined.empty() ? "" : ", ") + n;
                return HttpResponse{200, chat_reply(joined)};
            }
        }
        return HttpResponse{400, "unknown prompt"};
    });

    auto direct = synthetic_pool(spec);
    StubMatcher stub;
    label_pool(direct, &stub, {});

    auto cold = synthetic_pool(spec);
    HttpMatcher m1(test_endpoint(dir / "c.jsonl"), s.transport());
    label_pool(cold, &m1, {});
    CHECK(m1.network_calls() == 25);

    auto warm = synthetic_pool(spec);
    HttpMatcher m2(test_endpoint(dir / "c.jsonl"), s.transport());
    label_pool(warm, &m2, {});
    CHECK(m2.network_calls() == 0);

    CHECK(serialize_labels(cold) == serialize_labels(direct));
    CHECK(serialize_labels(warm) == serialize_labels(direct));
}

TEST_CASE("embedding client: order, cache and shape")
{
    TempDir dir;
    Script s;
    s.steps.push_back([](const HttpRequest& req) {
        const auto body = json::parse(req.body);
        json data = json::array();
        int i = 0;
        for (const auto& t : body["input"]) {
            const float v = static_cast<float>(t.get<std::string>().size());
            data.push_back({{"index", i++}, {"embedding", {v, v + 1, v + 2}}});
        }
        std::reverse(data.begin(), data.end());
        return HttpResponse{200, json{{"data", data}}.dump()};
    });
    auto cfg = test_endpoint(dir / "e.jsonl");
    cfg.model_name = "text-embedding-3-small";
    EmbeddingClient c(cfg, s.transport());
    CHECK(c.fetch({}).rows() == 0);
    const auto m = c.fetch({"a", "bbb", "cc"});
    CHECK(m.rows() == 3);
    CHECK(m.dim() == 3);
    CHECK(m.row(1)[0] == 3.0f);
    CHECK(m.row(2)[2] == 4.0f);
    CHECK(c.network_calls() == 1);
    const auto again = c.fetch({"cc", "a", "cc"});
    CHECK(c.network_calls() == 1);
    CHECK(std::vector<float>(again.row(0).begin(), again.row(0).end()) ==
          std::vector<float>(m.row(2).begin(), m.row(2).end()));
    CHECK(std::vector<float>(again.row(2).begin(), again.row(2).end()) ==
          std::vector<float>(again.row(0).begin(), again.row(0).end()));
}
