#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "topick/corpus.hpp"
#include "topick/knowledge.hpp"
#include "topick/predictor.hpp"

namespace topick {

struct RetrievalConfig {
    std::size_t k = 8;
    double lambda = 0.5;
    std::size_t prune_m = 300;
    bool prune = true;
    double eps = kDefaultKnowledgeFloor;
    bool allow_negative_coverage = true;
    /// false: later steps reuse raw predictions (no marginal coverage update).
    bool cumulative = true;

    void validate() const;
};

/// sum_t x_t * d_t / lm_t. Throws DimensionMismatch on length mismatch.
double relevance(std::span<const double> t_x, std::span<const double> t_d, std::span<const double> t_lm);

/// x / lm element-wise; relevance is then a plain inner product with it.
std::vector<double> knowledge_weighted_query(std::span<const double> t_x, std::span<const double> t_lm);

/// (v - mean) / std with the population std; all zeros when std == 0.
std::vector<double> zscores(std::span<const double> v);

/// z(relevance) + lambda * z(cosine) over the given candidate set.
std::vector<double> final_scores(std::span<const double> relevance, std::span<const double> cosine,
                                 double lambda);

/// f(mean of d and the selected embeddings) - f(mean of the selected).
/// With nothing selected this is f(e_d): the empty set covers nothing.
TopicDistribution cumulative_coverage(const PredictorParams& params, std::span<const float> e_d,
                                      const std::vector<std::span<const float>>& selected);
TopicDistribution cumulative_coverage(const CandidatePool& pool, const PredictorParams& params,
                                      std::size_t doc, const std::vector<std::size_t>& selected);

struct StepTrace {
    std::size_t demo = 0;
    double relevance = 0.0;     // raw, before z-scoring
    double cosine = 0.0;
    double score = 0.0;         // z-scored blend that won the step
    double coverage_mass = 0.0; // sum of the coverage vector used this step
    std::size_t coverage_positive = 0;
    std::vector<std::pair<TopicId, double>> top_contributions;  // largest relevance summands
};

struct SelectionResult {
    std::vector<std::string> selected;   // ids, selection order == prompt order
    std::vector<std::size_t> indices;
    std::vector<StepTrace> steps;

    bool operator==(const SelectionResult& o) const { return indices == o.indices; }
};

/// Per-pool state for repeated selection: predictions, first-layer
/// pre-activations and embedding norms, all computed once.
class Retriever {
  public:
    Retriever(const CandidatePool& pool, const PredictorParams& params, const TopicalKnowledge& knowledge);

    /// Greedy K-shot selection. Throws Error when K > |pool|, DimensionMismatch
    /// on a wrong-sized input.
    SelectionResult select(std::span<const float> x, const RetrievalConfig& cfg) const;

    const CandidatePool& pool() const noexcept { return pool_; }
    const PredictorParams& params() const noexcept { return params_; }
    const Matrix& pool_predictions() const noexcept { return predictions_; }

  private:
    const CandidatePool& pool_;
    const PredictorParams& params_;
    const TopicalKnowledge& knowledge_;
    Matrix predictions_;
    Matrix preactivations_;
    std::vector<double> norms_;
};

SelectionResult select(std::span<const float> x, const CandidatePool& pool, const PredictorParams& params,
                       const TopicalKnowledge& knowledge, const RetrievalConfig& cfg);

struct BatchItem {
    std::string id;
    std::optional<SelectionResult> result;
    std::string error;
};

/// Independent selection per test input, parallel across inputs, order kept.
/// A failing input records its error without affecting the others.
std::vector<BatchItem> retrieve_batch(const std::vector<std::string>& ids, const EmbeddingMatrix& inputs,
                                      const Retriever& retriever, const RetrievalConfig& cfg);
std::vector<BatchItem> retrieve_batch_serial(const std::vector<std::string>& ids,
                                             const EmbeddingMatrix& inputs, const Retriever& retriever,
                                             const RetrievalConfig& cfg);

/// Similarity baseline: the k most cosine-similar demonstrations.
std::vector<std::size_t> cosine_top_k(std::span<const float> x, const CandidatePool& pool, std::size_t k);

}  // namespace topick
