#pragma once

// Data-parallel inner loops. Every OpenMP kernel has a `_serial` twin that
// is the reference implementation; tests assert the two agree bit-for-bit
// and bench/ times them against each other. Parallel kernels only split
// work over independent outputs, so results never depend on thread count.

#include <cstddef>
#include <span>
#include <vector>

#include "topick/embedding.hpp"

namespace topick::kernels {

double dot(std::span<const float> a, std::span<const float> b);
double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const float> a);

/// Cosine similarity; 0 when either vector has zero norm.
double cosine(std::span<const float> a, std::span<const float> b);

std::vector<double> row_norms(const EmbeddingMatrix& m);
std::vector<double> row_norms_serial(const EmbeddingMatrix& m);

/// out[i] = cos(query, m.row(i)) given precomputed row norms.
void cosine_scores(std::span<const float> query, const EmbeddingMatrix& m,
                   std::span<const double> norms, std::span<double> out);
void cosine_scores_serial(std::span<const float> query, const EmbeddingMatrix& m,
                          std::span<const double> norms, std::span<double> out);

/// Indices of the `k` largest scores, descending; ties go to the lower index.
/// Entries whose `excluded[i]` is true are skipped (empty span: none excluded).
std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k,
                               const std::vector<bool>& excluded = {});

/// For every row, the `n` most cosine-similar other rows (self excluded),
/// descending similarity, ties to the lower index.
std::vector<std::vector<std::size_t>> all_nearest_neighbors(const EmbeddingMatrix& m, std::size_t n);
std::vector<std::vector<std::size_t>> all_nearest_neighbors_serial(const EmbeddingMatrix& m,
                                                                   std::size_t n);

/// Sets the OpenMP worker count; n == 0 keeps the runtime default.
void set_threads(int n);
int max_threads();

}  // namespace topick::kernels
