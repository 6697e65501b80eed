#pragma once

#include <cstddef>

#include "topick/corpus.hpp"

namespace topick {

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;

    /// Throws ConfigError unless k1 > 0 and 0 <= b <= 1.
    void validate() const;
};

/// Okapi BM25 contribution of one query term. The IDF is the non-negative
/// variant ln(1 + (N - df + 0.5) / (df + 0.5)), so present terms never score
/// below absent ones.
double bm25_term_score(double tf, double df, double num_docs, double doc_len, double avg_doc_len,
                       const Bm25Params& p);

/// BM25 of topic `t`'s name tokens as a query against demonstration `doc`.
/// Multi-word topics sum their per-token scores; unseen tokens contribute 0.
double bm25(const CandidatePool& pool, std::size_t doc, TopicId t, const Bm25Params& p);

}  // namespace topick
