#include "topick/bm25.hpp"

#include <cmath>

#include "topick/error.hpp"

namespace topick {

void Bm25Params::validate() const
{
    if (!(k1 > 0.0) || !std::isfinite(k1)) throw ConfigError("bm25.k1 must be positive");
    if (!(b >= 0.0 && b <= 1.0)) throw ConfigError("bm25.b must lie in [0,1]");
}

double bm25_term_score(double tf, double df, double num_docs, double doc_len, double avg_doc_len, const Bm25Params& p)
{
    if (tf <= 0.0) return 0.0;
    const double idf = std::log(1.0 + (num_docs - df + 0.5) / (df + 0.5));
    const double norm = avg_doc_len > 0.0 ? doc_len / avg_doc_len : 1.0;
    return idf * (tf * (p.k1 + 1.0)) / (tf + p.k1 * (1.0 - p.b + p.b * norm));
}

double bm25(const CandidatePool& pool, std::size_t doc, TopicId t, const Bm25Params& p)
{
    const auto& stats = pool.corpus_stats;
    const auto n = static_cast<double>(stats.num_docs());
    const auto dl = static_cast<double>(stats.doc_len[doc]);
    double score = 0.0;
    for (const auto& tok : pool.topics.name_tokens()[t]) {
        auto term = stats.term_id(tok);
        if (!term) continue;
        const auto tf = stats.term_frequency(doc, *term);
        if (tf == 0) continue;
        score += bm25_term_score(tf, stats.doc_freq[*term], n, dl, stats.avg_doc_len, p);
    }
    return score;
}

}  // namespace topick
