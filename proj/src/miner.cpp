#include "topick/miner.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

#include "topick/error.hpp"
#include "topick/tokenize.hpp"

namespace topick {

void MinerConfig::validate() const
{
    if (max_ngram < 1 || max_ngram > 2) throw ConfigError("miner.max_ngram must be 1 or 2");
    if (min_doc_freq < 1) throw ConfigError("miner.min_doc_freq must be >= 1");
    if (!(max_doc_frac > 0.0 && max_doc_frac <= 1.0)) throw ConfigError("miner.max_doc_frac must lie in (0,1]");
    if (max_topics < 1) throw ConfigError("miner.max_topics must be >= 1");
}

std::vector<MinedTopic> mine_topics(const std::vector<Demonstration>& demos, const MinerConfig& cfg)
{
    cfg.validate();
    if (demos.empty()) throw Error("cannot mine topics from an empty corpus");

    struct Stat {
        std::size_t df = 0;
        std::vector<std::pair<std::size_t, std::size_t>> tf;  // (doc, count), doc ascending
    };
    std::unordered_map<std::string, Stat> stats;

    for (std::size_t d = 0; d < demos.size(); ++d) {
        const auto tokens = tokenize(demos[d].text());
        std::map<std::string, std::size_t> counts;
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            ++counts[tokens[i]];
            if (cfg.max_ngram >= 2 && i + 1 < tokens.size()) ++counts[tokens[i] + " " + tokens[i + 1]];
        }
        for (auto& [term, c] : counts) {
            auto& s = stats[term];
            ++s.df;
            s.tf.emplace_back(d, c);
        }
    }

    const auto n = static_cast<double>(demos.size());
    std::vector<MinedTopic> out;
    for (const auto& [term, s] : stats) {
        if (s.df < cfg.min_doc_freq) continue;
        if (static_cast<double>(s.df) / n > cfg.max_doc_frac) continue;
        const double idf = std::log((1.0 + n) / (1.0 + static_cast<double>(s.df))) + 1.0;
        double mass = 0.0;
        for (auto [doc, c] : s.tf) mass += static_cast<double>(c) * idf;
        out.push_back({term, mass, s.df});
    }
    std::sort(out.begin(), out.end(), [](const MinedTopic& a, const MinedTopic& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.name < b.name;
    });
    if (out.size() > cfg.max_topics) out.resize(cfg.max_topics);
    return out;
}

}  // namespace topick
