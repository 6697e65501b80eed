#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "topick/corpus.hpp"
#include "topick/knowledge.hpp"
#include "topick/predictor.hpp"
#include "topick/retrieval.hpp"
#include "topick/topic_identification.hpp"

namespace topick {

struct MetricConfig {
    std::size_t top_r = 20;  // required topics taken from the test input
    std::size_t top_c = 20;  // topics a demonstration counts as covering
};

/// Indices of the n largest entries, ties to the lower index.
std::vector<TopicId> top_topics(std::span<const double> dist, std::size_t n);

/// counts[k] = required topics covered by the first k demonstrations; k = 0..K.
std::vector<std::size_t> topic_coverage(const std::vector<TopicDistribution>& selected,
                                        const TopicDistribution& t_x, const MetricConfig& cfg = {});

/// fractions[k] = share of d_k's covered topics already covered by d_1..d_{k-1};
/// unset for k < 2.
std::vector<std::optional<double>> topic_redundancy(const std::vector<TopicDistribution>& selected,
                                                    const MetricConfig& cfg = {});

enum class Variant { kFull, kNoCoreTopic, kNoSoftLabel, kNoCumulative };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

struct CoverageRow {
    std::string test_id;
    std::size_t k = 0;
    std::size_t coverage = 0;
    std::optional<double> redundancy;
};

struct CoverageReport {
    Variant variant = Variant::kFull;
    MetricConfig config;
    std::vector<CoverageRow> rows;
    std::vector<BatchItem> selections;
    std::vector<double> train_losses;  // set when the variant retrains
};

/// Everything the ablation runner needs from the full pipeline. Metrics are
/// always computed with the full pipeline's predictor so variants compare on
/// one topic space.
struct AblationInputs {
    const CandidatePool* pool = nullptr;   // labeled by the full pipeline
    const PredictorParams* params = nullptr;
    const TopicalKnowledge* knowledge = nullptr;
    std::vector<std::string> test_ids;
    const EmbeddingMatrix* test_embeddings = nullptr;
    RetrievalConfig retrieval;
    TrainConfig train;
    LabelOptions label;
    MetricConfig metrics;
};

CoverageReport run_ablation(const AblationInputs& in, Variant variant);

/// Per-selection metrics under `params`.
std::vector<CoverageRow> coverage_rows(const std::string& test_id, const std::vector<std::size_t>& selected,
                                       std::span<const float> x, const CandidatePool& pool,
                                       const PredictorParams& params, const MetricConfig& cfg);

/// Columns: test_id,k,coverage,redundancy,variant.
void write_report_csv(std::ostream& os, const CoverageReport& report);

}  // namespace topick
