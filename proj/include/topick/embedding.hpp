#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace topick {

/// Row-major float32 matrix; one row per text. Backing store for the
/// TPKEMB01 file format:
///
///   bytes 0..7   "TPKEMB01"
///   u32 LE       rows
///   u32 LE       dim
///   f32 LE       rows * dim values, row-major
class EmbeddingMatrix {
  public:
    EmbeddingMatrix() = default;
    EmbeddingMatrix(std::size_t rows, std::size_t dim);
    EmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<float> data);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t dim() const noexcept { return dim_; }
    bool empty() const noexcept { return rows_ == 0; }

    std::span<const float> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
    std::span<float> row(std::size_t i) { return {data_.data() + i * dim_, dim_}; }
    const std::vector<float>& data() const noexcept { return data_; }

    /// Appends a row; the first append on an empty 0-dim matrix fixes dim.
    void append_row(std::span<const float> values);

    bool operator==(const EmbeddingMatrix&) const = default;

  private:
    std::size_t rows_ = 0;
    std::size_t dim_ = 0;
    std::vector<float> data_;
};

/// Throws FormatError on bad magic, truncation, trailing bytes or non-finite values.
EmbeddingMatrix read_embeddings(const std::filesystem::path& path);
void write_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& m);

/// Row-major float64 matrix used for predictor outputs and parameters.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }

    bool operator==(const Matrix&) const = default;
};

}  // namespace topick
