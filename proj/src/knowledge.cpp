#include "topick/knowledge.hpp"

#include <algorithm>
#include <cmath>

#include "topick/error.hpp"

namespace topick {

TopicalKnowledge aggregate_knowledge(const Matrix& weights, const std::vector<int>& outcomes, double eps)
{
    if (weights.rows != outcomes.size()) throw DimensionMismatch("one outcome per weight row required");
    if (outcomes.empty()) throw Error("no demonstration has a known zero-shot outcome");
    if (!(eps > 0.0 && eps <= 1.0)) throw ConfigError("knowledge floor must lie in (0,1]");

    TopicalKnowledge k;
    k.floor = eps;
    double correct = 0.0;
    for (int o : outcomes) correct += o;
    k.mean_accuracy = correct / static_cast<double>(outcomes.size());

    const std::size_t nt = weights.cols;
    std::vector<double> num(nt, 0.0);
    k.coverage_mass.assign(nt, 0.0);
    for (std::size_t d = 0; d < weights.rows; ++d) {
        const auto w = weights.row(d);
        const double z = outcomes[d];
        for (std::size_t t = 0; t < nt; ++t) {
            num[t] += w[t] * z;
            k.coverage_mass[t] += w[t];
        }
    }
    k.values.resize(nt);
    k.raw.resize(nt);
    for (std::size_t t = 0; t < nt; ++t) {
        k.raw[t] = k.coverage_mass[t] > 0.0 ? num[t] / k.coverage_mass[t] : k.mean_accuracy;
        k.values[t] = std::max(eps, k.raw[t]);
    }
    return k;
}

TopicalKnowledge estimate_knowledge(const CandidatePool& pool, const PredictorParams& params, double eps)
{
    EmbeddingMatrix known(0, 0);
    std::vector<int> outcomes;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        const auto& z = pool.demonstrations[i].zero_shot_correct;
        if (!z) continue;
        known.append_row(pool.embedding(i));
        outcomes.push_back(*z ? 1 : 0);
    }
    if (outcomes.empty()) throw Error("no demonstration has a known zero-shot outcome");
    return aggregate_knowledge(predict_rows(params, known), outcomes, eps);
}

void save_knowledge(const std::filesystem::path& path, const TopicalKnowledge& k)
{
    EmbeddingMatrix m(1, k.values.size());
    for (std::size_t t = 0; t < k.values.size(); ++t) m.row(0)[t] = static_cast<float>(k.values[t]);
    write_embeddings(path, m);
}

TopicalKnowledge load_knowledge(const std::filesystem::path& path, double eps)
{
    const auto m = read_embeddings(path);
    if (m.rows() != 1) throw FormatError(path.string(), 0, "knowledge file must have exactly one row");
    TopicalKnowledge k;
    k.floor = eps;
    k.values.assign(m.row(0).begin(), m.row(0).end());
    for (double v : k.values) {
        if (!(v > 0.0 && v <= 1.0)) throw FormatError(path.string(), 0, "knowledge value outside (0,1]");
    }
    return k;
}

}  // namespace topick
