#include "topick/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "topick/error.hpp"
#include "topick/kernels.hpp"

namespace topick {

std::vector<TopicId> top_topics(std::span<const double> dist, std::size_t n)
{
    std::vector<TopicId> out;
    for (auto i : kernels::top_k(dist, n)) out.push_back(static_cast<TopicId>(i));
    return out;
}

std::vector<std::size_t> topic_coverage(const std::vector<TopicDistribution>& selected,
                                        const TopicDistribution& t_x, const MetricConfig& cfg)
{
    const auto required = top_topics(t_x, cfg.top_r);
    const std::set<TopicId> want(required.begin(), required.end());
    std::set<TopicId> seen;
    std::vector<std::size_t> counts{0};
    std::size_t hit = 0;
    for (const auto& d : selected) {
        if (d.size() != t_x.size()) throw DimensionMismatch("covered and required topic lengths differ");
        for (auto t : top_topics(d, cfg.top_c)) {
            if (seen.insert(t).second && want.contains(t)) ++hit;
        }
        counts.push_back(hit);
    }
    return counts;
}

std::vector<std::optional<double>> topic_redundancy(const std::vector<TopicDistribution>& selected,
                                                    const MetricConfig& cfg)
{
    std::vector<std::optional<double>> out(selected.size() + 1);
    std::set<TopicId> seen;
    for (std::size_t k = 1; k <= selected.size(); ++k) {
        const auto covers = top_topics(selected[k - 1], cfg.top_c);
        if (k >= 2 && !covers.empty()) {
            std::size_t dup = 0;
            for (auto t : covers) dup += seen.contains(t) ? 1 : 0;
            out[k] = static_cast<double>(dup) / static_cast<double>(covers.size());
        }
        seen.insert(covers.begin(), covers.end());
    }
    return out;
}

std::string to_string(Variant v)
{
    switch (v) {
    case Variant::kFull: return "full";
    case Variant::kNoCoreTopic: return "no_core_topic";
    case Variant::kNoSoftLabel: return "no_soft_label";
    case Variant::kNoCumulative: return "no_cumulative";
    }
    return "full";
}

Variant parse_variant(const std::string& s)
{
    for (auto v : {Variant::kFull, Variant::kNoCoreTopic, Variant::kNoSoftLabel, Variant::kNoCumulative}) {
        if (to_string(v) == s) return v;
    }
    throw ConfigError("unknown variant '" + s + "' (full, no_core_topic, no_soft_label, no_cumulative)");
}

std::vector<CoverageRow> coverage_rows(const std::string& test_id, const std::vector<std::size_t>& selected,
                                       std::span<const float> x, const CandidatePool& pool,
                                       const PredictorParams& params, const MetricConfig& cfg)
{
    const auto t_x = forward(params, x);
    std::vector<TopicDistribution> covered;
    for (auto i : selected) covered.push_back(forward(params, pool.embedding(i)));
    const auto cov = topic_coverage(covered, t_x, cfg);
    const auto red = topic_redundancy(covered, cfg);
    std::vector<CoverageRow> rows;
    for (std::size_t k = 1; k <= selected.size(); ++k) rows.push_back({test_id, k, cov[k], red[k]});
    return rows;
}

CoverageReport run_ablation(const AblationInputs& in, Variant variant)
{
    if (!in.pool || !in.params || !in.knowledge || !in.test_embeddings) {
        throw Error("ablation inputs are incomplete");
    }
    CoverageReport report;
    report.variant = variant;
    report.config = in.metrics;

    RetrievalConfig rcfg = in.retrieval;
    std::optional<CandidatePool> pool;
    std::optional<PredictorParams> params;
    std::optional<TopicalKnowledge> knowledge;

    auto retrain = [&](const CandidatePool& p, const TrainConfig& tcfg) {
        auto tr = train(p, tcfg);
        report.train_losses = tr.epoch_losses;
        params = std::move(tr.params);
        knowledge = estimate_knowledge(p, *params, rcfg.eps);
    };

    switch (variant) {
    case Variant::kFull:
        break;
    case Variant::kNoCumulative:
        rcfg.cumulative = false;
        break;
    case Variant::kNoSoftLabel: {
        TrainConfig tcfg = in.train;
        tcfg.soft_labels = false;
        retrain(*in.pool, tcfg);
        break;
    }
    case Variant::kNoCoreTopic: {
        pool = *in.pool;
        LabelOptions opt = in.label;
        opt.source = CoreTopicSource::kLexicalOnly;
        label_pool(*pool, nullptr, opt);
        retrain(*pool, in.train);
        break;
    }
    }

    const CandidatePool& use_pool = pool ? *pool : *in.pool;
    const PredictorParams& use_params = params ? *params : *in.params;
    const TopicalKnowledge& use_knowledge = knowledge ? *knowledge : *in.knowledge;
    const Retriever retriever(use_pool, use_params, use_knowledge);
    report.selections = retrieve_batch(in.test_ids, *in.test_embeddings, retriever, rcfg);

    for (std::size_t i = 0; i < report.selections.size(); ++i) {
        const auto& item = report.selections[i];
        if (!item.result) continue;
        auto rows = coverage_rows(item.id, item.result->indices, in.test_embeddings->row(i), *in.pool, *in.params,
                                  in.metrics);
        report.rows.insert(report.rows.end(), rows.begin(), rows.end());
    }
    return report;
}

void write_report_csv(std::ostream& os, const CoverageReport& report)
{
    const auto name = to_string(report.variant);
    os << "test_id,k,coverage,redundancy,variant\n";
    for (const auto& r : report.rows) {
        os << r.test_id << ',' << r.k << ',' << r.coverage << ',';
        if (r.redundancy) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.6f", *r.redundancy);
            os << buf;
        }
        os << ',' << name << '\n';
    }
}

}  // namespace topick
