#pragma once

#include <cstddef>
#include <vector>

#include "topick/bm25.hpp"
#include "topick/corpus.hpp"
#include "topick/services.hpp"

namespace topick {

inline constexpr std::size_t kCandidatesPerSegment = 10;
inline constexpr std::size_t kDistinctivenessNeighbors = 100;

/// Candidate topics in two disjoint segments: lexical (top BM25, positive
/// scores only) first, then semantic (top cosine among the rest).
struct CandidateTopics {
    std::vector<TopicId> lexical;
    std::vector<double> lexical_scores;
    std::vector<TopicId> semantic;
    std::vector<double> semantic_scores;

    std::vector<TopicId> all() const;
};

CandidateTopics candidate_topics(const CandidatePool& pool, std::size_t doc, const Bm25Params& p,
                                 std::size_t per_segment = kCandidatesPerSegment);

/// The n nearest demonstrations to `doc` by cosine, self excluded.
std::vector<std::size_t> knn_neighbors(const CandidatePool& pool, std::size_t doc,
                                       std::size_t n = kDistinctivenessNeighbors);

/// Maps matcher output names onto the topic set, admitting unknown names as
/// new topics. Falls back to `candidates` when no usable name came back.
std::vector<TopicId> resolve_core_topics(TopicSet& topics, const std::vector<std::string>& names,
                                         const std::vector<TopicId>& candidates);

MatchRequest make_match_request(const CandidatePool& pool, std::size_t doc, const CandidateTopics& c,
                                const Bm25Params& p);

/// Asks the matcher for the core topics of `doc`. May grow pool.topics.
std::vector<TopicId> core_topics(CandidatePool& pool, std::size_t doc, const CandidateTopics& candidates,
                                 CoreTopicMatcher& matcher, const Bm25Params& p = {});

/// log DST(d,t) = BM25(d,t) - log(1 + sum_{d' in neighbors} exp(BM25(d',t))),
/// evaluated with log-sum-exp.
double log_dst(const CandidatePool& pool, std::size_t doc, TopicId t,
               const std::vector<std::size_t>& neighbors, const Bm25Params& p);
double dst(const CandidatePool& pool, std::size_t doc, TopicId t,
           const std::vector<std::size_t>& neighbors, const Bm25Params& p);

/// DST over the core topics of `doc`, normalized so the maximum is exactly 1.
SoftLabel soft_labels(const CandidatePool& pool, std::size_t doc,
                      const std::vector<std::size_t>& neighbors, const Bm25Params& p);

enum class CoreTopicSource {
    kMatcher,        // candidates filtered by the matcher
    kLexicalOnly,    // BM25 candidate segment, no matcher
};

struct LabelOptions {
    Bm25Params bm25;
    std::size_t neighbors = kDistinctivenessNeighbors;
    CoreTopicSource source = CoreTopicSource::kMatcher;
};

struct LabelReport {
    std::size_t new_topics = 0;
    std::size_t fallbacks = 0;  // demos whose matcher output was unusable
};

/// Candidate matching, core topic selection and soft labels for every
/// demonstration. `matcher` may be null when source is kLexicalOnly.
LabelReport label_pool(CandidatePool& pool, CoreTopicMatcher* matcher, const LabelOptions& opt);

}  // namespace topick
