#include "topick/topic_identification.hpp"

#include <algorithm>
#include <cmath>

#include "topick/error.hpp"
#include "topick/kernels.hpp"
#include "topick/tokenize.hpp"

namespace topick {

std::vector<TopicId> CandidateTopics::all() const
{
    std::vector<TopicId> out(lexical);
    out.insert(out.end(), semantic.begin(), semantic.end());
    return out;
}

CandidateTopics candidate_topics(const CandidatePool& pool, std::size_t doc, const Bm25Params& p, std::size_t per_segment)
{
    const std::size_t n = pool.topics.size();
    CandidateTopics c;

    std::vector<double> lexical(n);
    std::vector<bool> skip(n, false);
    for (TopicId t = 0; t < n; ++t) {
        lexical[t] = bm25(pool, doc, t, p);
        skip[t] = !(lexical[t] > 0.0);
    }
    for (auto t : kernels::top_k(lexical, per_segment, skip)) {
        c.lexical.push_back(static_cast<TopicId>(t));
        c.lexical_scores.push_back(lexical[t]);
    }

    std::vector<double> semantic(n, 0.0);
    std::fill(skip.begin(), skip.end(), false);
    const auto e = pool.embedding(doc);
    for (TopicId t = 0; t < n; ++t) {
        if (!pool.topics.has_embedding(t)) {
            skip[t] = true;
            continue;
        }
        semantic[t] = kernels::cosine(e, pool.topics.name_embeddings().row(t));
    }
    for (auto t : c.lexical) skip[t] = true;
    for (auto t : kernels::top_k(semantic, per_segment, skip)) {
        c.semantic.push_back(static_cast<TopicId>(t));
        c.semantic_scores.push_back(semantic[t]);
    }
    return c;
}

namespace {

bool identity_embedding_order(const CandidatePool& pool)
{
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (pool.demonstrations[i].embedding_index != i) return false;
    }
    return pool.embeddings.rows() == pool.size();
}

EmbeddingMatrix embeddings_in_demo_order(const CandidatePool& pool)
{
    if (identity_embedding_order(pool)) return pool.embeddings;
    EmbeddingMatrix m(0, 0);
    for (std::size_t i = 0; i < pool.size(); ++i) m.append_row(pool.embedding(i));
    return m;
}

}  // namespace

std::vector<std::size_t> knn_neighbors(const CandidatePool& pool, std::size_t doc, std::size_t n)
{
    std::vector<double> scores(pool.size());
    const auto e = pool.embedding(doc);
    for (std::size_t j = 0; j < pool.size(); ++j) scores[j] = kernels::cosine(e, pool.embedding(j));
    std::vector<bool> skip(pool.size(), false);
    skip[doc] = true;
    return kernels::top_k(scores, n, skip);
}

std::vector<TopicId> resolve_core_topics(TopicSet& topics, const std::vector<std::string>& names,
                                         const std::vector<TopicId>& candidates)
{
    std::vector<TopicId> out;
    for (const auto& raw : names) {
        if (normalize_topic_name(raw).empty()) continue;
        out.push_back(topics.find_or_add(raw));
    }
    if (out.empty()) out = candidates;
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

MatchRequest make_match_request(const CandidatePool& pool, std::size_t doc, const CandidateTopics& c,
                                const Bm25Params& p)
{
    MatchRequest req;
    req.demo_text = pool.demonstrations[doc].text();
    const auto e = pool.embedding(doc);
    for (TopicId t : c.all()) {
        req.candidate_names.push_back(pool.topics.name(t));
        req.candidate_bm25.push_back(bm25(pool, doc, t, p));
        req.candidate_cosine.push_back(pool.topics.has_embedding(t)
                                           ? kernels::cosine(e, pool.topics.name_embeddings().row(t))
                                           : 0.0);
    }
    return req;
}

std::vector<TopicId> core_topics(CandidatePool& pool, std::size_t doc, const CandidateTopics& candidates,
                                 CoreTopicMatcher& matcher, const Bm25Params& p)
{
    const auto all = candidates.all();
    if (all.empty()) throw Error("demonstration \"" + pool.demonstrations[doc].id + "\" has no candidate topics");
    const auto names = matcher.match(make_match_request(pool, doc, candidates, p));
    return resolve_core_topics(pool.topics, names, all);
}

double log_dst(const CandidatePool& pool, std::size_t doc, TopicId t, const std::vector<std::size_t>& neighbors,
               const Bm25Params& p)
{
    std::vector<double> terms;
    terms.reserve(neighbors.size() + 1);
    terms.push_back(0.0);  // the "1 +" in the denominator
    for (auto nb : neighbors) terms.push_back(bm25(pool, nb, t, p));
    const double m = *std::max_element(terms.begin(), terms.end());
    double s = 0.0;
    for (double x : terms) s += std::exp(x - m);
    return bm25(pool, doc, t, p) - (m + std::log(s));
}

double dst(const CandidatePool& pool, std::size_t doc, TopicId t, const std::vector<std::size_t>& neighbors,
           const Bm25Params& p)
{
    return std::exp(log_dst(pool, doc, t, neighbors, p));
}

SoftLabel soft_labels(const CandidatePool& pool, std::size_t doc, const std::vector<std::size_t>& neighbors,
                      const Bm25Params& p)
{
    const auto& core = pool.demonstrations[doc].core_topics;
    if (core.empty()) throw Error("demonstration \"" + pool.demonstrations[doc].id + "\" has no core topics");
    std::vector<double> logs;
    logs.reserve(core.size());
    for (TopicId t : core) logs.push_back(log_dst(pool, doc, t, neighbors, p));
    const double top = *std::max_element(logs.begin(), logs.end());
    SoftLabel out;
    for (std::size_t i = 0; i < core.size(); ++i) out[core[i]] = std::exp(logs[i] - top);
    return out;
}

LabelReport label_pool(CandidatePool& pool, CoreTopicMatcher* matcher, const LabelOptions& opt)
{
    opt.bm25.validate();
    if (opt.source == CoreTopicSource::kMatcher && matcher == nullptr) {
        throw ConfigError("label_pool: matcher required");
    }
    LabelReport report;
    const std::size_t n = pool.size();
    const std::size_t topics_before = pool.topics.size();
    if (topics_before == 0) throw Error("topic set is empty");

    const auto neighbors = kernels::all_nearest_neighbors(embeddings_in_demo_order(pool), opt.neighbors);

    std::vector<CandidateTopics> candidates(n);
    const auto sn = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic, 8)
    for (std::ptrdiff_t i = 0; i < sn; ++i) candidates[i] = candidate_topics(pool, i, opt.bm25);

    if (opt.source == CoreTopicSource::kLexicalOnly) {
        for (std::size_t i = 0; i < n; ++i) {
            auto core = candidates[i].lexical.empty() ? candidates[i].all() : candidates[i].lexical;
            if (candidates[i].lexical.empty()) ++report.fallbacks;
            std::sort(core.begin(), core.end());
            pool.demonstrations[i].core_topics = std::move(core);
        }
    } else {
        std::vector<MatchRequest> requests(n);
#pragma omp parallel for schedule(dynamic, 8)
        for (std::ptrdiff_t i = 0; i < sn; ++i) requests[i] = make_match_request(pool, i, candidates[i], opt.bm25);
        const auto answers = matcher->match_all(requests);
        for (std::size_t i = 0; i < n; ++i) {
            const auto all = candidates[i].all();
            auto core = resolve_core_topics(pool.topics, answers[i], all);
            bool usable = false;
            for (const auto& a : answers[i]) usable = usable || !normalize_topic_name(a).empty();
            if (!usable) ++report.fallbacks;
            pool.demonstrations[i].core_topics = std::move(core);
        }
    }
    report.new_topics = pool.topics.size() - topics_before;

    for (std::size_t i = 0; i < n; ++i) {
        if (pool.demonstrations[i].core_topics.empty()) {
            throw Error("demonstration \"" + pool.demonstrations[i].id + "\" ended with no core topics");
        }
    }
#pragma omp parallel for schedule(dynamic, 8)
    for (std::ptrdiff_t i = 0; i < sn; ++i) {
        pool.demonstrations[i].soft_label = soft_labels(pool, i, neighbors[i], opt.bm25);
    }
    return report;
}

}  // namespace topick
