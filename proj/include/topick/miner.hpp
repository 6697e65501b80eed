#pragma once

#include <string>
#include <vector>

#include "topick/corpus.hpp"

namespace topick {

struct MinerConfig {
    int max_ngram = 2;
    std::size_t min_doc_freq = 2;
    double max_doc_frac = 0.5;
    std::size_t max_topics = 1000;

    void validate() const;
};

struct MinedTopic {
    std::string name;
    double score;        // TF-IDF mass over the corpus
    std::size_t doc_freq;
};

/// Frequency/TF-IDF phrase miner over unigrams (and bigrams when
/// max_ngram == 2). Candidates outside the document-frequency bounds are
/// dropped; the rest are ranked by descending score, ties lexicographic.
/// Throws Error on an empty corpus.
std::vector<MinedTopic> mine_topics(const std::vector<Demonstration>& demos, const MinerConfig& cfg);

}  // namespace topick
