#include "topick/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "topick/error.hpp"
#include "topick/hashing.hpp"
#include "topick/tokenize.hpp"

namespace topick {

using nlohmann::json;

namespace {

/// Calls fn(record, line_no) for every non-blank line.
template <typename Fn>
void for_each_jsonl(const std::filesystem::path& path, Fn&& fn)
{
    std::ifstream in(path);
    if (!in) throw MissingArtifact("cannot open " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::parse_error& e) {
            throw FormatError(path.string(), line_no, std::string("invalid JSON: ") + e.what());
        }
        if (!rec.is_object()) throw FormatError(path.string(), line_no, "record is not an object");
        fn(rec, line_no);
    }
}

std::string require_string(const json& rec, const char* key, const std::filesystem::path& path, std::size_t line)
{
    auto it = rec.find(key);
    if (it == rec.end() || !it->is_string()) {
        throw FormatError(path.string(), line, std::string("missing string field \"") + key + "\"");
    }
    return it->get<std::string>();
}

void write_text(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("write failed: " + path.string());
}

}  // namespace

// ---------------------------------------------------------------------------
// TopicSet

TopicSet::TopicSet(std::vector<std::string> names, EmbeddingMatrix name_embeddings)
{
    for (const auto& raw : names) {
        std::string n = normalize_topic_name(raw);
        if (n.empty()) throw FormatError("topics", 0, "empty topic name \"" + raw + "\"");
        if (index_.count(n)) throw DuplicateId("duplicate topic name \"" + n + "\"");
        index_.emplace(n, static_cast<TopicId>(names_.size()));
        tokens_.push_back(tokenize(n));
        names_.push_back(std::move(n));
    }
    set_embeddings(std::move(name_embeddings));
}

std::optional<TopicId> TopicSet::find(std::string_view raw_name) const
{
    auto it = index_.find(normalize_topic_name(raw_name));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

TopicId TopicSet::find_or_add(std::string_view raw_name)
{
    std::string n = normalize_topic_name(raw_name);
    if (n.empty()) throw Error("cannot add a topic with an empty normalized name");
    if (auto it = index_.find(n); it != index_.end()) return it->second;
    const auto id = static_cast<TopicId>(names_.size());
    index_.emplace(n, id);
    tokens_.push_back(tokenize(n));
    names_.push_back(std::move(n));
    return id;
}

void TopicSet::append_embedding(std::span<const float> values)
{
    if (embeddings_.rows() >= names_.size()) throw OutOfRange("every topic already has a name embedding");
    embeddings_.append_row(values);
}

void TopicSet::set_embeddings(EmbeddingMatrix m)
{
    if (m.rows() > names_.size()) {
        throw DimensionMismatch("topic embeddings have " + std::to_string(m.rows()) + " rows for " +
                                std::to_string(names_.size()) + " topics");
    }
    embeddings_ = std::move(m);
}

// ---------------------------------------------------------------------------
// CorpusStats

CorpusStats CorpusStats::build(const std::vector<std::vector<std::string>>& tokenized_docs)
{
    CorpusStats s;
    s.doc_terms.reserve(tokenized_docs.size());
    std::uint64_t total = 0;
    for (const auto& doc : tokenized_docs) {
        std::vector<TermCount> counts;
        for (const auto& tok : doc) {
            auto [it, inserted] = s.vocab.try_emplace(tok, static_cast<std::uint32_t>(s.vocab.size()));
            if (inserted) s.doc_freq.push_back(0);
            counts.push_back({it->second, 1});
        }
        std::sort(counts.begin(), counts.end(), [](auto a, auto b) { return a.term < b.term; });
        std::vector<TermCount> merged;
        for (auto tc : counts) {
            if (!merged.empty() && merged.back().term == tc.term) {
                ++merged.back().count;
            } else {
                merged.push_back(tc);
            }
        }
        for (auto tc : merged) ++s.doc_freq[tc.term];
        s.doc_len.push_back(static_cast<std::uint32_t>(doc.size()));
        total += doc.size();
        s.doc_terms.push_back(std::move(merged));
    }
    s.avg_doc_len = tokenized_docs.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(tokenized_docs.size());
    return s;
}

std::optional<std::uint32_t> CorpusStats::term_id(const std::string& token) const
{
    auto it = vocab.find(token);
    if (it == vocab.end()) return std::nullopt;
    return it->second;
}

std::uint32_t CorpusStats::term_frequency(std::size_t doc, std::uint32_t term) const
{
    const auto& terms = doc_terms[doc];
    auto it = std::lower_bound(terms.begin(), terms.end(), term, [](TermCount tc, std::uint32_t t) { return tc.term < t; });
    return (it != terms.end() && it->term == term) ? it->count : 0;
}

bool CorpusStats::operator==(const CorpusStats& o) const
{
    if (vocab != o.vocab || doc_freq != o.doc_freq || doc_len != o.doc_len || avg_doc_len != o.avg_doc_len) return false;
    if (doc_terms.size() != o.doc_terms.size()) return false;
    for (std::size_t i = 0; i < doc_terms.size(); ++i) {
        const auto& a = doc_terms[i];
        const auto& b = o.doc_terms[i];
        if (!std::equal(a.begin(), a.end(), b.begin(), b.end(),
                        [](auto x, auto y) { return x.term == y.term && x.count == y.count; })) {
            return false;
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// CandidatePool

std::optional<std::size_t> CandidatePool::index_of(const std::string& id) const
{
    auto it = id_index_.find(id);
    if (it == id_index_.end()) return std::nullopt;
    return it->second;
}

void CandidatePool::finalize()
{
    id_index_.clear();
    std::vector<std::vector<std::string>> docs;
    docs.reserve(demonstrations.size());
    for (std::size_t i = 0; i < demonstrations.size(); ++i) {
        const auto& d = demonstrations[i];
        if (!id_index_.emplace(d.id, i).second) throw DuplicateId("duplicate demonstration id \"" + d.id + "\"");
        if (d.embedding_index >= embeddings.rows()) {
            throw DimensionMismatch("demonstration \"" + d.id + "\" has embedding row " +
                                    std::to_string(d.embedding_index) + " but the matrix has " +
                                    std::to_string(embeddings.rows()) + " rows");
        }
        for (TopicId t : d.core_topics) {
            if (t >= topics.size()) throw OutOfRange("demonstration \"" + d.id + "\" references topic " + std::to_string(t));
        }
        docs.push_back(tokenize(d.text()));
    }
    if (topics.name_embeddings().rows() > 0 && topics.name_embeddings().dim() != embeddings.dim()) {
        throw DimensionMismatch("topic embeddings have dim " + std::to_string(topics.name_embeddings().dim()) +
                                ", demonstrations have dim " + std::to_string(embeddings.dim()));
    }
    corpus_stats = CorpusStats::build(docs);
}

// ---------------------------------------------------------------------------
// File I/O

std::vector<Demonstration> load_demonstrations(const std::filesystem::path& path)
{
    std::vector<Demonstration> demos;
    for_each_jsonl(path, [&](const json& rec, std::size_t line) {
        Demonstration d;
        d.id = require_string(rec, "id", path, line);
        d.input_text = require_string(rec, "input", path, line);
        d.output_text = require_string(rec, "output", path, line);
        d.embedding_index = demos.size();
        demos.push_back(std::move(d));
    });
    return demos;
}

std::vector<std::string> load_topic_names(const std::filesystem::path& path)
{
    std::vector<std::string> names;
    for_each_jsonl(path, [&](const json& rec, std::size_t line) { names.push_back(require_string(rec, "name", path, line)); });
    return names;
}

void write_topic_names(const std::filesystem::path& path, const std::vector<std::string>& names)
{
    std::string out;
    for (const auto& n : names) out += json{{"name", n}}.dump() + "\n";
    write_text(path, out);
}

CandidatePool make_pool(std::vector<Demonstration> demos, EmbeddingMatrix embeddings, TopicSet topics)
{
    if (embeddings.rows() != demos.size()) {
        throw DimensionMismatch("embedding file has " + std::to_string(embeddings.rows()) + " rows for " +
                                std::to_string(demos.size()) + " demonstrations");
    }
    CandidatePool pool;
    pool.demonstrations = std::move(demos);
    pool.embeddings = std::move(embeddings);
    pool.topics = std::move(topics);
    pool.finalize();
    return pool;
}

CandidatePool load_pool(const PoolPaths& paths)
{
    auto demos = load_demonstrations(paths.demos);
    auto emb = read_embeddings(paths.embeddings);
    auto names = load_topic_names(paths.topics);
    EmbeddingMatrix topic_emb;
    if (!paths.topic_embeddings.empty()) topic_emb = read_embeddings(paths.topic_embeddings);
    return make_pool(std::move(demos), std::move(emb), TopicSet(std::move(names), std::move(topic_emb)));
}

std::string serialize_labels(const CandidatePool& pool)
{
    std::string out;
    for (const auto& d : pool.demonstrations) {
        json soft = json::object();
        for (auto [t, w] : d.soft_label) soft[std::to_string(t)] = w;
        json rec = {{"id", d.id}, {"core_topics", d.core_topics}, {"soft_label", soft}};
        out += rec.dump() + "\n";
    }
    return out;
}

void save_labels(const CandidatePool& pool, const std::filesystem::path& path) { write_text(path, serialize_labels(pool)); }

void load_labels(CandidatePool& pool, const std::filesystem::path& path)
{
    for (auto& d : pool.demonstrations) {
        d.core_topics.clear();
        d.soft_label.clear();
    }
    const std::size_t num_topics = pool.topics.size();
    for_each_jsonl(path, [&](const json& rec, std::size_t line) {
        const std::string id = require_string(rec, "id", path, line);
        auto idx = pool.index_of(id);
        if (!idx) throw UnknownId(path.string() + ":" + std::to_string(line) + ": unknown demonstration id \"" + id + "\"");
        auto& d = pool.demonstrations[*idx];
        auto check = [&](long long t) {
            if (t < 0 || static_cast<std::size_t>(t) >= num_topics) {
                throw OutOfRange(path.string() + ":" + std::to_string(line) + ": topic index " + std::to_string(t) +
                                 " out of range for " + std::to_string(num_topics) + " topics");
            }
            return static_cast<TopicId>(t);
        };
        const auto& ct = rec.value("core_topics", json::array());
        if (!ct.is_array()) throw FormatError(path.string(), line, "core_topics must be an array");
        for (const auto& v : ct) {
            if (!v.is_number_integer()) throw FormatError(path.string(), line, "core topic must be an integer");
            d.core_topics.push_back(check(v.get<long long>()));
        }
        std::sort(d.core_topics.begin(), d.core_topics.end());
        d.core_topics.erase(std::unique(d.core_topics.begin(), d.core_topics.end()), d.core_topics.end());
        const auto& sl = rec.value("soft_label", json::object());
        if (!sl.is_object()) throw FormatError(path.string(), line, "soft_label must be an object");
        for (const auto& [key, w] : sl.items()) {
            long long t = 0;
            try {
                std::size_t used = 0;
                t = std::stoll(key, &used);
                if (used != key.size()) throw std::invalid_argument(key);
            } catch (const std::exception&) {
                throw FormatError(path.string(), line, "soft_label key \"" + key + "\" is not an integer");
            }
            const TopicId tid = check(t);
            if (!w.is_number()) throw FormatError(path.string(), line, "soft_label weight must be a number");
            const double wv = w.get<double>();
            if (!(wv > 0.0 && wv <= 1.0)) throw FormatError(path.string(), line, "soft_label weight outside (0,1]");
            if (!std::binary_search(d.core_topics.begin(), d.core_topics.end(), tid)) {
                throw FormatError(path.string(), line, "soft_label topic " + key + " is not a core topic");
            }
            d.soft_label[tid] = wv;
        }
    });
}

void ingest_zero_shot(CandidatePool& pool, const std::filesystem::path& path)
{
    for_each_jsonl(path, [&](const json& rec, std::size_t line) {
        const std::string id = require_string(rec, "id", path, line);
        auto idx = pool.index_of(id);
        if (!idx) throw UnknownId(path.string() + ":" + std::to_string(line) + ": unknown demonstration id \"" + id + "\"");
        auto it = rec.find("correct");
        if (it == rec.end() || !it->is_number_integer() || (it->get<long long>() != 0 && it->get<long long>() != 1)) {
            throw FormatError(path.string(), line, "\"correct\" must be 0 or 1");
        }
        pool.demonstrations[*idx].zero_shot_correct = it->get<long long>() == 1;
    });
}

std::string pool_fingerprint(const CandidatePool& pool)
{
    Sha256 h;
    auto field = [&](std::string_view s) {
        const std::uint64_t n = s.size();
        h.update(std::string_view(reinterpret_cast<const char*>(&n), sizeof n));
        h.update(s);
    };
    for (const auto& d : pool.demonstrations) {
        field(d.id);
        field(d.input_text);
        field(d.output_text);
        const char zs = d.zero_shot_correct ? (*d.zero_shot_correct ? '1' : '0') : '-';
        field(std::string_view(&zs, 1));
    }
    h.update(std::span(reinterpret_cast<const std::uint8_t*>(pool.embeddings.data().data()),
                       pool.embeddings.data().size() * sizeof(float)));
    for (const auto& n : pool.topics.names()) field(n);
    field(serialize_labels(pool));
    return h.hex_digest();
}

}  // namespace topick
