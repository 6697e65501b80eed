#include "topick/embedding.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "topick/error.hpp"

namespace topick {

namespace {

constexpr char kMagic[8] = {'T', 'P', 'K', 'E', 'M', 'B', '0', '1'};

static_assert(std::endian::native == std::endian::little, "TPKEMB01 I/O assumes a little-endian host");

std::uint32_t read_u32(std::istream& in, const std::filesystem::path& path)
{
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw FormatError(path.string(), 0, "truncated header");
    return v;
}

}  // namespace

EmbeddingMatrix::EmbeddingMatrix(std::size_t rows, std::size_t dim)
    : rows_(rows), dim_(dim), data_(rows * dim, 0.0f)
{}

EmbeddingMatrix::EmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<float> data)
    : rows_(rows), dim_(dim), data_(std::move(data))
{
    if (data_.size() != rows_ * dim_) {
        throw DimensionMismatch("embedding data has " + std::to_string(data_.size()) + " values, expected " +
                                std::to_string(rows_ * dim_));
    }
}

void EmbeddingMatrix::append_row(std::span<const float> values)
{
    if (rows_ == 0 && dim_ == 0) dim_ = values.size();
    if (values.size() != dim_) {
        throw DimensionMismatch("row of dimension " + std::to_string(values.size()) + ", matrix has " +
                                std::to_string(dim_));
    }
    data_.insert(data_.end(), values.begin(), values.end());
    ++rows_;
}

EmbeddingMatrix read_embeddings(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifact("cannot open embedding file " + path.string());
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) {
        throw FormatError(path.string(), 0, "bad magic, expected TPKEMB01");
    }
    const std::uint32_t rows = read_u32(in, path);
    const std::uint32_t dim = read_u32(in, path);
    std::vector<float> data(static_cast<std::size_t>(rows) * dim);
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != data.size() * sizeof(float)) {
        throw FormatError(path.string(), 0, "truncated payload");
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw FormatError(path.string(), 0, "trailing bytes after payload");
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (!std::isfinite(data[i])) {
            throw FormatError(path.string(), 0,
                              "non-finite value at row " + std::to_string(i / dim) + " col " + std::to_string(i % dim));
        }
    }
    return EmbeddingMatrix(rows, dim, std::move(data));
}

void write_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& m)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(kMagic, sizeof kMagic);
    const auto rows = static_cast<std::uint32_t>(m.rows());
    const auto dim = static_cast<std::uint32_t>(m.dim());
    out.write(reinterpret_cast<const char*>(&rows), sizeof rows);
    out.write(reinterpret_cast<const char*>(&dim), sizeof dim);
    out.write(reinterpret_cast<const char*>(m.data().data()),
              static_cast<std::streamsize>(m.data().size() * sizeof(float)));
    if (!out) throw Error("write failed: " + path.string());
}

}  // namespace topick
