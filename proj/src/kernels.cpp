#include "topick/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "topick/error.hpp"

namespace topick::kernels {

double dot(std::span<const float> a, std::span<const float> b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return s;
}

double dot(std::span<const double> a, std::span<const double> b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(std::span<const float> a) { return std::sqrt(dot(a, a)); }

double cosine(std::span<const float> a, std::span<const float> b)
{
    if (a.size() != b.size()) throw DimensionMismatch("cosine of vectors with different dimensions");
    const double na = norm(a);
    const double nb = norm(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot(a, b) / (na * nb);
}

std::vector<double> row_norms_serial(const EmbeddingMatrix& m)
{
    std::vector<double> out(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) out[i] = norm(m.row(i));
    return out;
}

std::vector<double> row_norms(const EmbeddingMatrix& m)
{
    std::vector<double> out(m.rows());
    const auto n = static_cast<std::ptrdiff_t>(m.rows());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = norm(m.row(i));
    return out;
}

namespace {

inline double cosine_with_norms(std::span<const float> q, double qn, std::span<const float> r, double rn)
{
    if (qn == 0.0 || rn == 0.0) return 0.0;
    return dot(q, r) / (qn * rn);
}

void check_query(std::span<const float> query, const EmbeddingMatrix& m, std::span<const double> norms,
                 std::span<double> out)
{
    if (query.size() != m.dim()) {
        throw DimensionMismatch("query has dimension " + std::to_string(query.size()) + ", rows have " +
                                std::to_string(m.dim()));
    }
    if (norms.size() != m.rows() || out.size() != m.rows()) throw DimensionMismatch("cosine_scores buffer size");
}

}  // namespace

void cosine_scores_serial(std::span<const float> query, const EmbeddingMatrix& m, std::span<const double> norms,
                          std::span<double> out)
{
    check_query(query, m, norms, out);
    const double qn = norm(query);
    for (std::size_t i = 0; i < m.rows(); ++i) out[i] = cosine_with_norms(query, qn, m.row(i), norms[i]);
}

void cosine_scores(std::span<const float> query, const EmbeddingMatrix& m, std::span<const double> norms,
                   std::span<double> out)
{
    check_query(query, m, norms, out);
    const double qn = norm(query);
    const auto n = static_cast<std::ptrdiff_t>(m.rows());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = cosine_with_norms(query, qn, m.row(i), norms[i]);
}

std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k, const std::vector<bool>& excluded)
{
    std::vector<std::size_t> idx;
    idx.reserve(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!excluded.empty() && excluded[i]) continue;
        idx.push_back(i);
    }
    k = std::min(k, idx.size());
    auto better = [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    };
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), better);
    idx.resize(k);
    return idx;
}

namespace {

std::vector<std::size_t> neighbors_of(const EmbeddingMatrix& m, std::span<const double> norms, std::size_t i,
                                      std::size_t n, std::vector<double>& scratch, std::vector<bool>& excluded)
{
    const auto q = m.row(i);
    for (std::size_t j = 0; j < m.rows(); ++j) scratch[j] = cosine_with_norms(q, norms[i], m.row(j), norms[j]);
    excluded.assign(m.rows(), false);
    excluded[i] = true;
    return top_k(scratch, n, excluded);
}

}  // namespace

std::vector<std::vector<std::size_t>> all_nearest_neighbors_serial(const EmbeddingMatrix& m, std::size_t n)
{
    const auto norms = row_norms_serial(m);
    std::vector<std::vector<std::size_t>> out(m.rows());
    std::vector<double> scratch(m.rows());
    std::vector<bool> excluded;
    for (std::size_t i = 0; i < m.rows(); ++i) out[i] = neighbors_of(m, norms, i, n, scratch, excluded);
    return out;
}

std::vector<std::vector<std::size_t>> all_nearest_neighbors(const EmbeddingMatrix& m, std::size_t n)
{
    const auto norms = row_norms(m);
    std::vector<std::vector<std::size_t>> out(m.rows());
    const auto rows = static_cast<std::ptrdiff_t>(m.rows());
#pragma omp parallel
    {
        std::vector<double> scratch(m.rows());
        std::vector<bool> excluded;
#pragma omp for schedule(dynamic, 16)
        for (std::ptrdiff_t i = 0; i < rows; ++i) out[i] = neighbors_of(m, norms, i, n, scratch, excluded);
    }
    return out;
}

void set_threads(int n)
{
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#else
    (void)n;
#endif
}

int max_threads()
{
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

}  // namespace topick::kernels
