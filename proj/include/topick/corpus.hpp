#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "topick/embedding.hpp"

namespace topick {

using TopicId = std::uint32_t;

/// Dense vector over the topic set: required topics, covered topics or
/// topical knowledge depending on role. Entries lie in [0,1] except for
/// marginal-coverage differences, which may be negative.
using TopicDistribution = std::vector<double>;

/// Sparse soft target; keys are a subset of the core topics.
using SoftLabel = std::map<TopicId, double>;

struct Demonstration {
    std::string id;
    std::string input_text;
    std::string output_text;
    std::size_t embedding_index = 0;
    std::vector<TopicId> core_topics;  // sorted, unique
    SoftLabel soft_label;
    std::optional<bool> zero_shot_correct;

    /// Text BM25 and the matcher see: input and output joined by a newline.
    std::string text() const { return input_text + "\n" + output_text; }
};

/// Ordered topic vocabulary. Topics appended after load (matcher-proposed
/// names) have no name embedding until one is supplied; `has_embedding`
/// reports which.
class TopicSet {
  public:
    TopicSet() = default;
    /// Names are normalized; duplicates after normalization throw DuplicateId.
    TopicSet(std::vector<std::string> names, EmbeddingMatrix name_embeddings);

    std::size_t size() const noexcept { return names_.size(); }
    const std::string& name(TopicId t) const { return names_.at(t); }
    const std::vector<std::string>& names() const noexcept { return names_; }
    const std::vector<std::vector<std::string>>& name_tokens() const noexcept { return tokens_; }
    const EmbeddingMatrix& name_embeddings() const noexcept { return embeddings_; }

    bool has_embedding(TopicId t) const noexcept { return t < embeddings_.rows(); }
    bool fully_embedded() const noexcept { return embeddings_.rows() == names_.size(); }

    std::optional<TopicId> find(std::string_view raw_name) const;

    /// Returns the existing id when the normalized name is known, otherwise
    /// appends a new topic without embedding. Throws on empty normalized name.
    TopicId find_or_add(std::string_view raw_name);

    /// Supplies name embeddings for the next topics lacking one, in order.
    void append_embedding(std::span<const float> values);

    /// Replaces all name embeddings; row count must not exceed size().
    void set_embeddings(EmbeddingMatrix m);

  private:
    std::vector<std::string> names_;
    std::vector<std::vector<std::string>> tokens_;
    std::unordered_map<std::string, TopicId> index_;
    EmbeddingMatrix embeddings_;
};

/// Tokenized corpus with the statistics Okapi BM25 needs.
struct CorpusStats {
    struct TermCount {
        std::uint32_t term;
        std::uint32_t count;
    };

    std::unordered_map<std::string, std::uint32_t> vocab;  // ids in first-occurrence order
    std::vector<std::uint32_t> doc_freq;                   // per term
    std::vector<std::vector<TermCount>> doc_terms;         // per doc, sorted by term id
    std::vector<std::uint32_t> doc_len;                    // tokens per doc
    double avg_doc_len = 0.0;

    static CorpusStats build(const std::vector<std::vector<std::string>>& tokenized_docs);

    std::size_t num_docs() const noexcept { return doc_len.size(); }
    std::optional<std::uint32_t> term_id(const std::string& token) const;
    std::uint32_t term_frequency(std::size_t doc, std::uint32_t term) const;

    bool operator==(const CorpusStats&) const;
};

struct CandidatePool {
    std::vector<Demonstration> demonstrations;
    EmbeddingMatrix embeddings;
    TopicSet topics;
    CorpusStats corpus_stats;

    std::size_t size() const noexcept { return demonstrations.size(); }
    std::span<const float> embedding(std::size_t i) const
    {
        return embeddings.row(demonstrations[i].embedding_index);
    }
    std::optional<std::size_t> index_of(const std::string& id) const;

    /// Validates invariants and (re)computes corpus_stats from the texts.
    void finalize();

  private:
    std::unordered_map<std::string, std::size_t> id_index_;
};

struct PoolPaths {
    std::filesystem::path demos;
    std::filesystem::path embeddings;
    std::filesystem::path topics;
    std::filesystem::path topic_embeddings;
};

/// demos.jsonl records: {"id","input","output"}; file order is embedding row order.
std::vector<Demonstration> load_demonstrations(const std::filesystem::path& path);
std::vector<std::string> load_topic_names(const std::filesystem::path& path);
void write_topic_names(const std::filesystem::path& path, const std::vector<std::string>& names);

CandidatePool load_pool(const PoolPaths& paths);
CandidatePool make_pool(std::vector<Demonstration> demos, EmbeddingMatrix embeddings, TopicSet topics);

/// labels.jsonl: {"id","core_topics":[int],"soft_label":{"<int>":float}}.
void save_labels(const CandidatePool& pool, const std::filesystem::path& path);
std::string serialize_labels(const CandidatePool& pool);
void load_labels(CandidatePool& pool, const std::filesystem::path& path);

/// zeroshot.jsonl: {"id","correct":0|1}.
void ingest_zero_shot(CandidatePool& pool, const std::filesystem::path& path);

/// Content hash over ids, texts, embeddings, topic names, labels and outcomes.
std::string pool_fingerprint(const CandidatePool& pool);

}  // namespace topick
