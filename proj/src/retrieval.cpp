#include "topick/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "topick/error.hpp"
#include "topick/kernels.hpp"

namespace topick {

void RetrievalConfig::validate() const
{
    if (k < 1) throw ConfigError("retrieval.k must be >= 1");
    if (prune_m < k) throw ConfigError("retrieval.prune_m must be >= k");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("retrieval.lambda must be >= 0");
    if (!(eps > 0.0 && eps <= 1.0)) throw ConfigError("retrieval.eps must lie in (0,1]");
}

std::vector<double> knowledge_weighted_query(std::span<const double> t_x, std::span<const double> t_lm)
{
    if (t_x.size() != t_lm.size()) {
        throw DimensionMismatch("required topics have length " + std::to_string(t_x.size()) + ", knowledge has " +
                                std::to_string(t_lm.size()));
    }
    std::vector<double> q(t_x.size());
    for (std::size_t t = 0; t < q.size(); ++t) q[t] = t_x[t] / t_lm[t];
    return q;
}

double relevance(std::span<const double> t_x, std::span<const double> t_d, std::span<const double> t_lm)
{
    if (t_d.size() != t_x.size()) {
        throw DimensionMismatch("covered topics have length " + std::to_string(t_d.size()) + ", required topics have " +
                                std::to_string(t_x.size()));
    }
    return kernels::dot(knowledge_weighted_query(t_x, t_lm), t_d);
}

std::vector<double> zscores(std::span<const double> v)
{
    std::vector<double> z(v.size(), 0.0);
    if (v.empty()) return z;
    const double n = static_cast<double>(v.size());
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= n;
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / n);
    // Rounding in the mean leaves a residual spread on constant input.
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) return z;
    for (std::size_t i = 0; i < v.size(); ++i) z[i] = (v[i] - mean) / sd;
    return z;
}

std::vector<double> final_scores(std::span<const double> relevance, std::span<const double> cosine, double lambda)
{
    if (relevance.size() != cosine.size()) throw DimensionMismatch("relevance and cosine lengths differ");
    const auto zr = zscores(relevance);
    const auto zc = zscores(cosine);
    std::vector<double> out(zr.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = zr[i] + lambda * zc[i];
    return out;
}

TopicDistribution cumulative_coverage(const PredictorParams& params, std::span<const float> e_d,
                                      const std::vector<std::span<const float>>& selected)
{
    if (selected.empty()) return forward(params, e_d);
    const std::size_t dim = e_d.size();
    std::vector<double> with(dim), without(dim, 0.0);
    for (const auto& s : selected) {
        if (s.size() != dim) throw DimensionMismatch("selected embedding dimension differs");
        for (std::size_t i = 0; i < dim; ++i) without[i] += static_cast<double>(s[i]);
    }
    const double n = static_cast<double>(selected.size());
    for (std::size_t i = 0; i < dim; ++i) with[i] = (static_cast<double>(e_d[i]) + without[i]) / (n + 1.0);
    for (auto& v : without) v /= n;
    auto after = forward(params, std::span<const double>(with));
    const auto before = forward(params, std::span<const double>(without));
    for (std::size_t t = 0; t < after.size(); ++t) after[t] -= before[t];
    return after;
}

TopicDistribution cumulative_coverage(const CandidatePool& pool, const PredictorParams& params, std::size_t doc,
                                      const std::vector<std::size_t>& selected)
{
    std::vector<std::span<const float>> sel;
    for (auto s : selected) sel.push_back(pool.embedding(s));
    return cumulative_coverage(params, pool.embedding(doc), sel);
}

// ---------------------------------------------------------------------------
// Retriever

Retriever::Retriever(const CandidatePool& pool, const PredictorParams& params, const TopicalKnowledge& knowledge)
    : pool_(pool), params_(params), knowledge_(knowledge)
{
    if (knowledge.values.size() != params.topics()) {
        throw DimensionMismatch("knowledge covers " + std::to_string(knowledge.values.size()) + " topics, predictor " +
                                std::to_string(params.topics()));
    }
    if (pool.embeddings.dim() != params.input_dim()) {
        throw DimensionMismatch("pool embeddings have dim " + std::to_string(pool.embeddings.dim()) +
                                ", predictor expects " + std::to_string(params.input_dim()));
    }
    const std::size_t n = pool.size();
    predictions_ = Matrix(n, params.topics());
    preactivations_ = Matrix(n, params.hidden());
    norms_.resize(n);
    const auto sn = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < sn; ++i) {
        const auto e = pool.embedding(i);
        const auto pre = first_layer_preactivation(params, e);
        const auto y = forward_from_preactivation(params, pre);
        std::copy(pre.begin(), pre.end(), preactivations_.row(i).begin());
        std::copy(y.begin(), y.end(), predictions_.row(i).begin());
        norms_[i] = kernels::norm(e);
    }
}

namespace {

std::size_t argmax_lowest(std::span<const double> v)
{
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

StepTrace make_trace(std::size_t demo, double r, double cos, double score, std::span<const double> q,
                     std::span<const double> coverage)
{
    StepTrace s;
    s.demo = demo;
    s.relevance = r;
    s.cosine = cos;
    s.score = score;
    std::vector<double> summands(q.size());
    for (std::size_t t = 0; t < q.size(); ++t) {
        summands[t] = q[t] * coverage[t];
        s.coverage_mass += coverage[t];
        if (coverage[t] > 0.0) ++s.coverage_positive;
    }
    for (auto t : kernels::top_k(summands, 10)) s.top_contributions.emplace_back(static_cast<TopicId>(t), summands[t]);
    return s;
}

}  // namespace

SelectionResult Retriever::select(std::span<const float> x, const RetrievalConfig& cfg) const
{
    cfg.validate();
    const std::size_t n = pool_.size();
    if (n == 0) throw Error("candidate pool is empty");
    if (cfg.k > n) throw Error("K = " + std::to_string(cfg.k) + " exceeds pool size " + std::to_string(n));
    if (x.size() != params_.input_dim()) {
        throw DimensionMismatch("test embedding has dimension " + std::to_string(x.size()) + ", expected " +
                                std::to_string(params_.input_dim()));
    }
    for (float v : x) {
        if (!std::isfinite(v)) throw Error("test embedding has non-finite values");
    }

    const auto t_x = forward(params_, x);
    const auto q = knowledge_weighted_query(t_x, knowledge_.values);

    std::vector<double> cos(n), r(n);
    const double xn = kernels::norm(x);
    for (std::size_t i = 0; i < n; ++i) {
        cos[i] = (xn == 0.0 || norms_[i] == 0.0) ? 0.0 : kernels::dot(x, pool_.embedding(i)) / (xn * norms_[i]);
        r[i] = kernels::dot(q, predictions_.row(i));
    }
    const auto zcos = zscores(cos);  // frozen for all later steps
    const auto zr = zscores(r);
    std::vector<double> score(n);
    for (std::size_t i = 0; i < n; ++i) score[i] = zr[i] + cfg.lambda * zcos[i];

    SelectionResult res;
    const std::size_t first = argmax_lowest(score);
    res.indices.push_back(first);
    res.steps.push_back(make_trace(first, r[first], cos[first], score[first], q, predictions_.row(first)));

    std::vector<std::size_t> remaining;
    // After the first pick, the remainder is cut to the prune_m best step-1 scores.
    if (cfg.prune && n - 1 > cfg.prune_m) {
        remaining = kernels::top_k(score, cfg.prune_m + 1);
        std::sort(remaining.begin(), remaining.end());
    } else {
        remaining.resize(n);
        std::iota(remaining.begin(), remaining.end(), 0);
    }
    remaining.erase(std::find(remaining.begin(), remaining.end(), first));

    const std::size_t h = params_.hidden();
    const std::size_t nt = params_.topics();
    std::vector<double> sum_pre(preactivations_.row(first).begin(), preactivations_.row(first).end());

    for (std::size_t step = 1; step < cfg.k; ++step) {
        const double sel = static_cast<double>(res.indices.size());
        std::vector<double> mean_pre(h);
        for (std::size_t j = 0; j < h; ++j) mean_pre[j] = sum_pre[j] / sel;
        const auto covered = forward_from_preactivation(params_, mean_pre);

        auto coverage_of = [&](std::size_t c) {
            std::vector<double> pre(h);
            const auto pc = preactivations_.row(c);
            for (std::size_t j = 0; j < h; ++j) pre[j] = (pc[j] + sum_pre[j]) / (sel + 1.0);
            auto cov = forward_from_preactivation(params_, pre);
            for (std::size_t t = 0; t < nt; ++t) {
                cov[t] -= covered[t];
                if (!cfg.allow_negative_coverage && cov[t] < 0.0) cov[t] = 0.0;
            }
            return cov;
        };

        const auto m = static_cast<std::ptrdiff_t>(remaining.size());
        std::vector<double> rr(remaining.size());
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < m; ++i) {
            const std::size_t c = remaining[i];
            rr[i] = cfg.cumulative ? kernels::dot(q, coverage_of(c)) : kernels::dot(q, predictions_.row(c));
        }
        const auto zrr = zscores(rr);
        std::vector<double> sc(remaining.size());
        for (std::size_t i = 0; i < sc.size(); ++i) sc[i] = zrr[i] + cfg.lambda * zcos[remaining[i]];
        const std::size_t win = argmax_lowest(sc);
        const std::size_t pick = remaining[win];

        if (cfg.cumulative) {
            const auto cov = coverage_of(pick);
            res.steps.push_back(make_trace(pick, rr[win], cos[pick], sc[win], q, cov));
        } else {
            res.steps.push_back(make_trace(pick, rr[win], cos[pick], sc[win], q, predictions_.row(pick)));
        }
        res.indices.push_back(pick);
        const auto pp = preactivations_.row(pick);
        for (std::size_t j = 0; j < h; ++j) sum_pre[j] += pp[j];
        remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(win));
    }

    for (auto i : res.indices) res.selected.push_back(pool_.demonstrations[i].id);
    return res;
}

SelectionResult select(std::span<const float> x, const CandidatePool& pool, const PredictorParams& params,
                       const TopicalKnowledge& knowledge, const RetrievalConfig& cfg)
{
    return Retriever(pool, params, knowledge).select(x, cfg);
}

namespace {

BatchItem select_one(const std::string& id, std::span<const float> x, const Retriever& retriever,
                     const RetrievalConfig& cfg)
{
    BatchItem item;
    item.id = id;
    try {
        item.result = retriever.select(x, cfg);
    } catch (const std::exception& e) {
        item.error = e.what();
    }
    return item;
}

void check_batch_shape(const std::vector<std::string>& ids, const EmbeddingMatrix& inputs)
{
    if (ids.size() != inputs.rows()) {
        throw DimensionMismatch(std::to_string(ids.size()) + " test ids for " + std::to_string(inputs.rows()) +
                                " test embeddings");
    }
}

}  // namespace

std::vector<BatchItem> retrieve_batch_serial(const std::vector<std::string>& ids, const EmbeddingMatrix& inputs,
                                             const Retriever& retriever, const RetrievalConfig& cfg)
{
    check_batch_shape(ids, inputs);
    std::vector<BatchItem> out;
    out.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) out.push_back(select_one(ids[i], inputs.row(i), retriever, cfg));
    return out;
}

std::vector<BatchItem> retrieve_batch(const std::vector<std::string>& ids, const EmbeddingMatrix& inputs,
                                      const Retriever& retriever, const RetrievalConfig& cfg)
{
    check_batch_shape(ids, inputs);
    std::vector<BatchItem> out(ids.size());
    const auto n = static_cast<std::ptrdiff_t>(ids.size());
#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = select_one(ids[i], inputs.row(i), retriever, cfg);
    return out;
}

std::vector<std::size_t> cosine_top_k(std::span<const float> x, const CandidatePool& pool, std::size_t k)
{
    std::vector<double> cos(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) cos[i] = kernels::cosine(x, pool.embedding(i));
    return kernels::top_k(cos, k);
}

}  // namespace topick
