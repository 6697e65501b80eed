#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include "topick/bm25.hpp"
#include "topick/corpus.hpp"
#include "topick/metrics.hpp"
#include "topick/miner.hpp"
#include "topick/predictor.hpp"
#include "topick/retrieval.hpp"
#include "topick/services.hpp"
#include "topick/topic_identification.hpp"

namespace topick {

enum class MatcherMode { kStub, kHttp };

/// Everything one pipeline run needs. Loaded from a single JSON document;
/// relative paths resolve against the config file's directory.
///
///   {
///     "work_dir": "run",
///     "paths": {"demos", "embeddings", "topics", "topic_embeddings",
///               "zeroshot", "test_inputs", "test_embeddings"},
///     "bm25": {"k1", "b"},
///     "miner": {"max_ngram", "min_doc_freq", "max_doc_frac", "max_topics"},
///     "label": {"neighbors"},
///     "train": {"learning_rate", "epochs", "batch_size", "seed", "hidden",
///               "negative_subsample"},
///     "knowledge": {"eps"},
///     "retrieval": {"k", "lambda", "prune_m", "prune", "allow_negative_coverage"},
///     "matcher": {"mode": "stub"|"http", "model_name", "embedding_model",
///                 "timeout_ms", "max_retries", "max_in_flight", "backoff_ms",
///                 "fetch_topic_embeddings"},
///     "metrics": {"top_r", "top_c"}
///   }
///
/// Unknown keys are rejected. Endpoint URL and key come only from
/// TOPICK_BASE_URL and TOPICK_API_KEY.
struct PipelineConfig {
    std::filesystem::path work_dir = "run";
    PoolPaths pool;
    std::filesystem::path zeroshot;
    std::filesystem::path test_inputs;      // JSONL, {"id": str} per line
    std::filesystem::path test_embeddings;  // TPKEMB01, one row per test input

    Bm25Params bm25;
    MinerConfig miner;
    std::size_t neighbors = kDistinctivenessNeighbors;
    TrainConfig train;
    RetrievalConfig retrieval;
    MetricConfig metrics;

    MatcherMode matcher_mode = MatcherMode::kStub;
    MatcherEndpointConfig matcher;
    std::string embedding_model = "text-embedding-3-small";
    bool fetch_topic_embeddings = false;

    static PipelineConfig load(const std::filesystem::path& path);
    static PipelineConfig parse(const std::string& text, const std::filesystem::path& base_dir);

    void validate() const;
    /// Canonical JSON of the effective configuration (paths as resolved).
    std::string effective_json() const;

    LabelOptions label_options() const;
};

struct StageOptions {
    bool explain = false;
    Variant variant = Variant::kFull;
};

/// Stage names, in pipeline order.
inline constexpr const char* kStages[] = {"mine", "label", "train", "knowledge", "retrieve", "eval"};

/// Runs one stage; throws on failure. Artifacts land in cfg.work_dir.
void run_stage(const std::string& stage, const PipelineConfig& cfg, const StageOptions& opt, std::ostream& log);

/// Maps an exception from run_stage to the process exit status: missing
/// prerequisite 2, invalid configuration 3, anything else 1.
int exit_code_for(const std::exception& e);

/// Work-dir artifact names.
namespace artifacts {
inline constexpr const char* kMinedTopics = "mined_topics.jsonl";
inline constexpr const char* kMinedTopicEmbeddings = "mined_topic_embeddings.bin";
inline constexpr const char* kLabels = "labels.jsonl";
inline constexpr const char* kTopics = "topics.jsonl";
inline constexpr const char* kTopicEmbeddings = "topic_embeddings.bin";
inline constexpr const char* kParams = "params.bin";
inline constexpr const char* kParamsMeta = "params.json";
inline constexpr const char* kKnowledge = "knowledge.bin";
inline constexpr const char* kKnowledgeMeta = "knowledge.json";
inline constexpr const char* kRetrieve = "retrieve.jsonl";
}  // namespace artifacts

/// Writes through a sibling temp file renamed into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace topick
