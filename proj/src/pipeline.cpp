#include "topick/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "topick/error.hpp"
#include "topick/hashing.hpp"
#include "topick/kernels.hpp"
#include "topick/knowledge.hpp"

namespace topick {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config parsing

namespace {

/// Reads known keys from one JSON object and rejects the rest.
class Section {
  public:
    Section(const json& j, std::string where) : j_(j), where_(std::move(where))
    {
        if (!j_.is_object()) throw ConfigError(where_ + " must be a JSON object");
    }

    template <typename T>
    void get(const std::string& key, T& out)
    {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(where_ + "." + key + " has the wrong type");
        }
    }

    void get_path(const std::string& key, fs::path& out, const fs::path& base)
    {
        std::string s;
        get(key, s);
        if (!s.empty()) out = fs::path(s).is_absolute() ? fs::path(s) : base / s;
    }

    void get(const std::string& key, std::optional<std::size_t>& out)
    {
        seen_.insert(key);
        if (!j_.contains(key) || j_.at(key).is_null()) return;
        std::size_t v = 0;
        get(key, v);
        out = v;
    }

    Section sub(const std::string& key)
    {
        seen_.insert(key);
        static const json empty = json::object();
        return Section(j_.contains(key) ? j_.at(key) : empty, where_ + "." + key);
    }

    void finish() const
    {
        for (const auto& [k, v] : j_.items()) {
            if (!seen_.contains(k)) throw ConfigError("unknown config key " + where_ + "." + k);
        }
    }

  private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

}  // namespace

PipelineConfig PipelineConfig::parse(const std::string& text, const fs::path& base)
{
    const auto base_dir = fs::absolute(base);
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    PipelineConfig c;
    Section top(root, "config");
    top.get_path("work_dir", c.work_dir, base_dir);
    if (c.work_dir.is_relative()) c.work_dir = base_dir / c.work_dir;

    {
        auto s = top.sub("paths");
        s.get_path("demos", c.pool.demos, base_dir);
        s.get_path("embeddings", c.pool.embeddings, base_dir);
        s.get_path("topics", c.pool.topics, base_dir);
        s.get_path("topic_embeddings", c.pool.topic_embeddings, base_dir);
        s.get_path("zeroshot", c.zeroshot, base_dir);
        s.get_path("test_inputs", c.test_inputs, base_dir);
        s.get_path("test_embeddings", c.test_embeddings, base_dir);
        s.finish();
    }
    {
        auto s = top.sub("bm25");
        s.get("k1", c.bm25.k1);
        s.get("b", c.bm25.b);
        s.finish();
    }
    {
        auto s = top.sub("miner");
        s.get("max_ngram", c.miner.max_ngram);
        s.get("min_doc_freq", c.miner.min_doc_freq);
        s.get("max_doc_frac", c.miner.max_doc_frac);
        s.get("max_topics", c.miner.max_topics);
        s.finish();
    }
    {
        auto s = top.sub("label");
        s.get("neighbors", c.neighbors);
        s.finish();
    }
    {
        auto s = top.sub("train");
        s.get("learning_rate", c.train.learning_rate);
        s.get("epochs", c.train.epochs);
        s.get("batch_size", c.train.batch_size);
        s.get("seed", c.train.seed);
        s.get("hidden", c.train.hidden);
        s.get("beta1", c.train.beta1);
        s.get("beta2", c.train.beta2);
        s.get("epsilon", c.train.epsilon);
        std::optional<std::size_t> neg;
        s.get("negative_subsample", neg);
        c.train.negative_subsample = neg;
        s.finish();
    }
    {
        auto s = top.sub("knowledge");
        s.get("eps", c.retrieval.eps);
        s.finish();
    }
    {
        auto s = top.sub("retrieval");
        s.get("k", c.retrieval.k);
        s.get("lambda", c.retrieval.lambda);
        s.get("prune_m", c.retrieval.prune_m);
        s.get("prune", c.retrieval.prune);
        s.get("allow_negative_coverage", c.retrieval.allow_negative_coverage);
        s.finish();
    }
    {
        auto s = top.sub("matcher");
        std::string mode = "stub";
        s.get("mode", mode);
        if (mode == "stub") {
            c.matcher_mode = MatcherMode::kStub;
        } else if (mode == "http") {
            c.matcher_mode = MatcherMode::kHttp;
        } else {
            throw ConfigError("config.matcher.mode must be \"stub\" or \"http\", got \"" + mode + "\"");
        }
        s.get("model_name", c.matcher.model_name);
        s.get("embedding_model", c.embedding_model);
        long long timeout_ms = c.matcher.timeout.count();
        long long backoff_ms = c.matcher.backoff_base.count();
        s.get("timeout_ms", timeout_ms);
        s.get("backoff_ms", backoff_ms);
        c.matcher.timeout = std::chrono::milliseconds(timeout_ms);
        c.matcher.backoff_base = std::chrono::milliseconds(backoff_ms);
        s.get("max_retries", c.matcher.max_retries);
        s.get("max_in_flight", c.matcher.max_in_flight);
        s.get("fetch_topic_embeddings", c.fetch_topic_embeddings);
        s.finish();
    }
    {
        auto s = top.sub("metrics");
        s.get("top_r", c.metrics.top_r);
        s.get("top_c", c.metrics.top_c);
        s.finish();
    }
    top.finish();
    c.matcher.cache_path = c.work_dir / "matcher_cache.jsonl";
    return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), fs::absolute(path).parent_path());
}

void PipelineConfig::validate() const
{
    bm25.validate();
    miner.validate();
    train.validate();
    retrieval.validate();
    if (neighbors < 1) throw ConfigError("label.neighbors must be >= 1");
    if (metrics.top_r < 1 || metrics.top_c < 1) throw ConfigError("metrics.top_r and metrics.top_c must be >= 1");
    if (matcher.timeout.count() <= 0) throw ConfigError("matcher.timeout_ms must be > 0");
    if (matcher.max_retries < 0) throw ConfigError("matcher.max_retries must be >= 0");
    if (matcher.max_in_flight < 1 || matcher.max_in_flight > 1024) {
        throw ConfigError("matcher.max_in_flight must lie in [1,1024]");
    }
    if (work_dir.empty()) throw ConfigError("work_dir is empty");
}

std::string PipelineConfig::effective_json() const
{
    json j;
    j["work_dir"] = work_dir.string();
    j["paths"] = {{"demos", pool.demos.string()},
                  {"embeddings", pool.embeddings.string()},
                  {"topics", pool.topics.string()},
                  {"topic_embeddings", pool.topic_embeddings.string()},
                  {"zeroshot", zeroshot.string()},
                  {"test_inputs", test_inputs.string()},
                  {"test_embeddings", test_embeddings.string()}};
    j["bm25"] = {{"k1", bm25.k1}, {"b", bm25.b}};
    j["miner"] = {{"max_ngram", miner.max_ngram},
                  {"min_doc_freq", miner.min_doc_freq},
                  {"max_doc_frac", miner.max_doc_frac},
                  {"max_topics", miner.max_topics}};
    j["label"] = {{"neighbors", neighbors}};
    j["train"] = {{"learning_rate", train.learning_rate},
                  {"epochs", train.epochs},
                  {"batch_size", train.batch_size},
                  {"seed", train.seed},
                  {"hidden", train.hidden},
                  {"beta1", train.beta1},
                  {"beta2", train.beta2},
                  {"epsilon", train.epsilon},
                  {"negative_subsample", train.negative_subsample ? json(*train.negative_subsample) : json()}};
    j["knowledge"] = {{"eps", retrieval.eps}};
    j["retrieval"] = {{"k", retrieval.k},
                      {"lambda", retrieval.lambda},
                      {"prune_m", retrieval.prune_m},
                      {"prune", retrieval.prune},
                      {"allow_negative_coverage", retrieval.allow_negative_coverage}};
    j["matcher"] = {{"mode", matcher_mode == MatcherMode::kStub ? "stub" : "http"},
                    {"model_name", matcher.model_name},
                    {"embedding_model", embedding_model},
                    {"timeout_ms", matcher.timeout.count()},
                    {"backoff_ms", matcher.backoff_base.count()},
                    {"max_retries", matcher.max_retries},
                    {"max_in_flight", matcher.max_in_flight},
                    {"fetch_topic_embeddings", fetch_topic_embeddings}};
    j["metrics"] = {{"top_r", metrics.top_r}, {"top_c", metrics.top_c}};
    return j.dump(2);
}

LabelOptions PipelineConfig::label_options() const
{
    LabelOptions o;
    o.bm25 = bm25;
    o.neighbors = neighbors;
    return o;
}

// ---------------------------------------------------------------------------
// Files

void write_file_atomic(const fs::path& path, const std::string& bytes)
{
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error("short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

namespace {

/// Runs `writer` against a temp path and renames the result into place.
template <typename Fn>
void produce_atomic(const fs::path& path, Fn&& writer)
{
    fs::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    writer(tmp);
    fs::rename(tmp, path);
}

void require_file(const fs::path& path, const std::string& what, const std::string& hint)
{
    if (path.empty()) throw ConfigError("no path configured for " + what);
    if (!fs::exists(path)) throw MissingArtifact("missing " + what + ": " + path.string() + hint);
}

void require_artifact(const fs::path& path, const std::string& stage)
{
    require_file(path, path.filename().string(), " (run `topick " + stage + "` first)");
}

/// Collects input and output hashes for a stage manifest.
class Manifest {
  public:
    Manifest(std::string stage, const PipelineConfig& cfg)
        : stage_(std::move(stage)), cfg_(cfg), start_(std::chrono::steady_clock::now())
    {}

    void input(const fs::path& p) { inputs_[p.string()] = sha256_file(p); }
    void output(const fs::path& p) { outputs_[p.filename().string()] = sha256_file(p); }
    void note(const std::string& key, json value) { notes_[key] = std::move(value); }

    void write() const
    {
        const auto ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
        const auto config = cfg_.effective_json();
        json j{{"stage", stage_},
               {"inputs", inputs_},
               {"outputs", outputs_},
               {"config", json::parse(config)},
               {"config_hash", sha256_hex(config)},
               {"duration_ms", ms}};
        if (!notes_.empty()) j["notes"] = notes_;
        write_file_atomic(cfg_.work_dir / (stage_ + ".manifest.json"), j.dump(2) + "\n");
    }

  private:
    std::string stage_;
    const PipelineConfig& cfg_;
    std::chrono::steady_clock::time_point start_;
    json inputs_ = json::object();
    json outputs_ = json::object();
    json notes_ = json::object();
};

fs::path art(const PipelineConfig& cfg, const char* name) { return cfg.work_dir / name; }

MatcherEndpointConfig endpoint(const PipelineConfig& cfg, const std::string& model, const char* cache)
{
    MatcherEndpointConfig e = cfg.matcher;
    e.apply_environment();
    e.model_name = model;
    e.cache_path = cfg.work_dir / cache;
    e.validate();
    return e;
}

EmbeddingMatrix fetch_embeddings(const PipelineConfig& cfg, const std::vector<std::string>& texts)
{
    const auto e = endpoint(cfg, cfg.embedding_model, "embedding_cache.jsonl");
    EmbeddingClient client(e, make_http_transport(e));
    return client.fetch(texts);
}

/// Demonstrations and embeddings from the configured inputs, topics and
/// labels from the label stage.
CandidatePool load_labeled_pool(const PipelineConfig& cfg, Manifest& m)
{
    const fs::path topics = art(cfg, artifacts::kTopics);
    const fs::path topic_emb = art(cfg, artifacts::kTopicEmbeddings);
    const fs::path labels = art(cfg, artifacts::kLabels);
    require_file(cfg.pool.demos, "demonstrations", "");
    require_file(cfg.pool.embeddings, "demonstration embeddings", "");
    for (const auto& p : {topics, topic_emb, labels}) require_artifact(p, "label");
    auto pool = load_pool({cfg.pool.demos, cfg.pool.embeddings, topics, topic_emb});
    load_labels(pool, labels);
    for (const auto& p : {cfg.pool.demos, cfg.pool.embeddings, topics, topic_emb, labels}) m.input(p);
    return pool;
}

std::vector<std::string> load_test_ids(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) throw MissingArtifact("cannot open test inputs " + path.string());
    std::vector<std::string> ids;
    std::set<std::string> seen;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto rec = json::parse(line, nullptr, false);
        if (rec.is_discarded() || !rec.is_object() || !rec.contains("id") || !rec["id"].is_string()) {
            throw FormatError(path.string(), n, "expected an object with a string \"id\"");
        }
        auto id = rec["id"].get<std::string>();
        if (!seen.insert(id).second) throw DuplicateId(path.string() + ":" + std::to_string(n) + ": duplicate id " + id);
        ids.push_back(std::move(id));
    }
    return ids;
}

struct TestSet {
    std::vector<std::string> ids;
    EmbeddingMatrix embeddings;
};

TestSet load_tests(const PipelineConfig& cfg, Manifest& m)
{
    require_file(cfg.test_inputs, "test inputs", "");
    require_file(cfg.test_embeddings, "test embeddings", "");
    TestSet t{load_test_ids(cfg.test_inputs), read_embeddings(cfg.test_embeddings)};
    if (t.ids.size() != t.embeddings.rows()) {
        throw DimensionMismatch(cfg.test_inputs.string() + " has " + std::to_string(t.ids.size()) + " inputs but " +
                                cfg.test_embeddings.string() + " has " + std::to_string(t.embeddings.rows()) +
                                " rows");
    }
    m.input(cfg.test_inputs);
    m.input(cfg.test_embeddings);
    return t;
}

/// Labeled pool with outcomes, params and knowledge, after checking that the
/// knowledge sidecar matches the current pool, params and eps.
struct Trained {
    CandidatePool pool;
    PredictorParams params;
    TopicalKnowledge knowledge;
};

Trained load_trained(const PipelineConfig& cfg, Manifest& m)
{
    Trained t;
    t.pool = load_labeled_pool(cfg, m);
    const auto params_path = art(cfg, artifacts::kParams);
    const auto know_path = art(cfg, artifacts::kKnowledge);
    const auto meta_path = art(cfg, artifacts::kKnowledgeMeta);
    require_artifact(params_path, "train");
    require_artifact(know_path, "knowledge");
    require_artifact(meta_path, "knowledge");
    require_file(cfg.zeroshot, "zero-shot outcomes", "");
    ingest_zero_shot(t.pool, cfg.zeroshot);
    t.params = load_params(params_path);

    std::ifstream in(meta_path);
    auto meta = json::parse(in, nullptr, false);
    if (meta.is_discarded() || !meta.is_object()) throw FormatError(meta_path.string(), 0, "invalid JSON");
    const bool fresh = meta.value("pool_hash", "") == pool_fingerprint(t.pool) &&
                       meta.value("params_hash", "") == sha256_file(params_path) &&
                       meta.value("eps", -1.0) == cfg.retrieval.eps;
    if (!fresh) {
        throw MissingArtifact("knowledge is stale for the current pool, params or eps: " + know_path.string() +
                              " (re-run `topick knowledge`)");
    }
    t.knowledge = load_knowledge(know_path, cfg.retrieval.eps);
    if (t.knowledge.values.size() != t.params.topics()) {
        throw DimensionMismatch("knowledge covers " + std::to_string(t.knowledge.values.size()) +
                                " topics, params " + std::to_string(t.params.topics()));
    }
    for (const auto& p : {params_path, know_path, meta_path, cfg.zeroshot}) m.input(p);
    return t;
}

// ---------------------------------------------------------------------------
// Stages

void stage_mine(const PipelineConfig& cfg, std::ostream& log)
{
    Manifest m("mine", cfg);
    require_file(cfg.pool.demos, "demonstrations", "");
    const auto demos = load_demonstrations(cfg.pool.demos);
    m.input(cfg.pool.demos);
    const auto mined = mine_topics(demos, cfg.miner);

    std::string out;
    for (const auto& t : mined) out += json{{"name", t.name}, {"score", t.score}, {"doc_freq", t.doc_freq}}.dump() + "\n";
    const auto path = art(cfg, artifacts::kMinedTopics);
    write_file_atomic(path, out);
    m.output(path);

    if (cfg.fetch_topic_embeddings) {
        if (cfg.matcher_mode != MatcherMode::kHttp) {
            throw ConfigError("matcher.fetch_topic_embeddings needs matcher.mode \"http\"");
        }
        std::vector<std::string> names;
        for (const auto& t : mined) names.push_back(t.name);
        const auto emb = fetch_embeddings(cfg, names);
        const auto epath = art(cfg, artifacts::kMinedTopicEmbeddings);
        produce_atomic(epath, [&](const fs::path& p) { write_embeddings(p, emb); });
        m.output(epath);
    }
    log << "mine: " << mined.size() << " topics from " << demos.size() << " demonstrations\n";
    m.write();
}

void stage_label(const PipelineConfig& cfg, std::ostream& log)
{
    Manifest m("label", cfg);
    require_file(cfg.pool.demos, "demonstrations", "");
    require_file(cfg.pool.embeddings, "demonstration embeddings", "");
    require_file(cfg.pool.topics, "topic set", "");
    require_file(cfg.pool.topic_embeddings, "topic name embeddings", "");
    auto pool = load_pool(cfg.pool);
    for (const auto& p : {cfg.pool.demos, cfg.pool.embeddings, cfg.pool.topics, cfg.pool.topic_embeddings}) m.input(p);

    std::unique_ptr<CoreTopicMatcher> matcher;
    if (cfg.matcher_mode == MatcherMode::kStub) {
        matcher = std::make_unique<StubMatcher>(StubMatcher::Mode::kHeuristic);
    } else {
        const auto e = endpoint(cfg, cfg.matcher.model_name, "matcher_cache.jsonl");
        matcher = std::make_unique<HttpMatcher>(e, make_http_transport(e));
    }
    const auto report = label_pool(pool, matcher.get(), cfg.label_options());

    if (!pool.topics.fully_embedded()) {
        std::vector<std::string> missing;
        for (std::size_t t = pool.topics.name_embeddings().rows(); t < pool.topics.size(); ++t) {
            missing.push_back(pool.topics.name(static_cast<TopicId>(t)));
        }
        if (cfg.matcher_mode != MatcherMode::kHttp) {
            std::string list;
            for (const auto& n : missing) list += (list.empty() ? "" : ", ") + n;
            throw Error("matcher introduced topics without name embeddings: " + list);
        }
        const auto emb = fetch_embeddings(cfg, missing);
        for (std::size_t i = 0; i < emb.rows(); ++i) pool.topics.append_embedding(emb.row(i));
    }

    const auto labels = art(cfg, artifacts::kLabels);
    const auto topics = art(cfg, artifacts::kTopics);
    const auto topic_emb = art(cfg, artifacts::kTopicEmbeddings);
    write_file_atomic(labels, serialize_labels(pool));
    produce_atomic(topics, [&](const fs::path& p) { write_topic_names(p, pool.topics.names()); });
    produce_atomic(topic_emb, [&](const fs::path& p) { write_embeddings(p, pool.topics.name_embeddings()); });
    for (const auto& p : {labels, topics, topic_emb}) m.output(p);
    m.note("new_topics", report.new_topics);
    m.note("fallbacks", report.fallbacks);
    log << "label: " << pool.size() << " demonstrations, " << pool.topics.size() << " topics (" << report.new_topics
        << " new, " << report.fallbacks << " fallbacks)\n";
    m.write();
}

void stage_train(const PipelineConfig& cfg, std::ostream& log)
{
    Manifest m("train", cfg);
    const auto pool = load_labeled_pool(cfg, m);
    const auto result = train(pool, cfg.train);
    const auto path = art(cfg, artifacts::kParams);
    produce_atomic(path, [&](const fs::path& p) { save_params(p, result.params); });

    json meta{{"input_dim", result.params.input_dim()},
              {"hidden", result.params.hidden()},
              {"topics", result.params.topics()},
              {"initial_loss", result.initial_loss},
              {"final_loss", result.epoch_losses.empty() ? result.initial_loss : result.epoch_losses.back()},
              {"epoch_losses", result.epoch_losses},
              {"train", json::parse(cfg.effective_json())["train"]},
              {"pool_hash", pool_fingerprint(pool)}};
    const auto meta_path = art(cfg, artifacts::kParamsMeta);
    write_file_atomic(meta_path, meta.dump(2) + "\n");
    m.output(path);
    m.output(meta_path);
    log << "train: loss " << result.initial_loss << " -> " << meta["final_loss"].get<double>() << " over "
        << result.epoch_losses.size() << " epochs\n";
    m.write();
}

void stage_knowledge(const PipelineConfig& cfg, std::ostream& log)
{
    Manifest m("knowledge", cfg);
    auto pool = load_labeled_pool(cfg, m);
    const auto params_path = art(cfg, artifacts::kParams);
    require_artifact(params_path, "train");
    require_file(cfg.zeroshot, "zero-shot outcomes", "");
    ingest_zero_shot(pool, cfg.zeroshot);
    const auto params = load_params(params_path);
    m.input(params_path);
    m.input(cfg.zeroshot);

    const auto k = estimate_knowledge(pool, params, cfg.retrieval.eps);
    const auto path = art(cfg, artifacts::kKnowledge);
    produce_atomic(path, [&](const fs::path& p) { save_knowledge(p, k); });
    json meta{{"eps", cfg.retrieval.eps},
              {"pool_hash", pool_fingerprint(pool)},
              {"params_hash", sha256_file(params_path)},
              {"mean_accuracy", k.mean_accuracy}};
    const auto meta_path = art(cfg, artifacts::kKnowledgeMeta);
    write_file_atomic(meta_path, meta.dump(2) + "\n");
    m.output(path);
    m.output(meta_path);
    log << "knowledge: " << k.values.size() << " topics, mean zero-shot accuracy " << k.mean_accuracy << "\n";
    m.write();
}

void stage_retrieve(const PipelineConfig& cfg, const StageOptions& opt, std::ostream& log)
{
    Manifest m("retrieve", cfg);
    const auto t = load_trained(cfg, m);
    const auto tests = load_tests(cfg, m);
    const Retriever retriever(t.pool, t.params, t.knowledge);
    const auto items = retrieve_batch(tests.ids, tests.embeddings, retriever, cfg.retrieval);

    std::string out;
    std::size_t failed = 0;
    for (const auto& item : items) {
        json rec{{"id", item.id}};
        if (!item.result) {
            rec["error"] = item.error;
            ++failed;
        } else {
            rec["selected"] = item.result->selected;
            json scores = json::array();
            for (const auto& s : item.result->steps) scores.push_back(s.score);
            rec["scores"] = scores;
            if (opt.explain) {
                json steps = json::array();
                for (const auto& s : item.result->steps) {
                    json top = json::array();
                    for (const auto& [topic, v] : s.top_contributions) {
                        top.push_back({{"topic", t.pool.topics.name(topic)}, {"contribution", v}});
                    }
                    steps.push_back({{"demo", t.pool.demonstrations[s.demo].id},
                                     {"relevance", s.relevance},
                                     {"cosine", s.cosine},
                                     {"score", s.score},
                                     {"coverage_mass", s.coverage_mass},
                                     {"top_topics", top}});
                }
                rec["steps"] = steps;
            }
        }
        out += rec.dump() + "\n";
    }
    const auto path = art(cfg, artifacts::kRetrieve);
    write_file_atomic(path, out);
    m.output(path);
    m.note("failed", failed);
    m.write();
    log << "retrieve: " << items.size() - failed << " of " << items.size() << " test inputs, K = " << cfg.retrieval.k
        << "\n";
    if (failed) throw Error(std::to_string(failed) + " test inputs failed; see " + path.string());
}

void stage_eval(const PipelineConfig& cfg, const StageOptions& opt, std::ostream& log)
{
    const auto name = to_string(opt.variant);
    Manifest m("eval_" + name, cfg);
    const auto t = load_trained(cfg, m);
    const auto tests = load_tests(cfg, m);

    AblationInputs in;
    in.pool = &t.pool;
    in.params = &t.params;
    in.knowledge = &t.knowledge;
    in.test_ids = tests.ids;
    in.test_embeddings = &tests.embeddings;
    in.retrieval = cfg.retrieval;
    in.train = cfg.train;
    in.label = cfg.label_options();
    in.metrics = cfg.metrics;
    const auto report = run_ablation(in, opt.variant);

    std::ostringstream csv;
    write_report_csv(csv, report);
    const auto csv_path = cfg.work_dir / ("eval_" + name + ".csv");
    write_file_atomic(csv_path, csv.str());

    std::string sel;
    for (const auto& item : report.selections) {
        json rec{{"id", item.id}};
        if (item.result) {
            rec["selected"] = item.result->selected;
        } else {
            rec["error"] = item.error;
        }
        sel += rec.dump() + "\n";
    }
    const auto sel_path = cfg.work_dir / ("eval_" + name + ".jsonl");
    write_file_atomic(sel_path, sel);
    m.output(csv_path);
    m.output(sel_path);
    if (!report.train_losses.empty()) m.note("train_losses", report.train_losses);
    m.write();
    log << "eval (" << name << "): " << report.rows.size() << " rows\n";
}

}  // namespace

void run_stage(const std::string& stage, const PipelineConfig& cfg, const StageOptions& opt, std::ostream& log)
{
    cfg.validate();
    fs::create_directories(cfg.work_dir);
    if (stage == "mine") {
        stage_mine(cfg, log);
    } else if (stage == "label") {
        stage_label(cfg, log);
    } else if (stage == "train") {
        stage_train(cfg, log);
    } else if (stage == "knowledge") {
        stage_knowledge(cfg, log);
    } else if (stage == "retrieve") {
        stage_retrieve(cfg, opt, log);
    } else if (stage == "eval") {
        stage_eval(cfg, opt, log);
    } else {
        throw ConfigError("unknown stage \"" + stage + "\"");
    }
}

int exit_code_for(const std::exception& e)
{
    if (dynamic_cast<const MissingArtifact*>(&e)) return 2;
    if (dynamic_cast<const ConfigError*>(&e)) return 3;
    return 1;
}

}  // namespace topick
