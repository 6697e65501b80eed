#pragma once

#include <filesystem>
#include <vector>

#include "topick/corpus.hpp"
#include "topick/embedding.hpp"
#include "topick/predictor.hpp"

namespace topick {

inline constexpr double kDefaultKnowledgeFloor = 0.05;

struct TopicalKnowledge {
    TopicDistribution values;          // per-topic, in [floor, 1]
    std::vector<double> raw;           // before flooring
    std::vector<double> coverage_mass; // sum of predicted weights over demos with outcomes
    double floor = kDefaultKnowledgeFloor;
    double mean_accuracy = 0.0;        // prior for topics with zero coverage mass
};

/// Weighted mean of {0,1} outcomes per topic. `weights` has one row per
/// outcome. Topics with zero mass take the mean outcome; everything is
/// floored at `eps`.
TopicalKnowledge aggregate_knowledge(const Matrix& weights, const std::vector<int>& outcomes, double eps);

/// Predicts every demonstration with a known zero-shot outcome and
/// aggregates. Throws Error when no outcome is known.
TopicalKnowledge estimate_knowledge(const CandidatePool& pool, const PredictorParams& params, double eps);

/// Values as a 1 x |T| TPKEMB01 file.
void save_knowledge(const std::filesystem::path& path, const TopicalKnowledge& k);
TopicalKnowledge load_knowledge(const std::filesystem::path& path, double eps);

}  // namespace topick
