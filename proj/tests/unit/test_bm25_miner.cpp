#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "synthetic.hpp"
#include "topick/bm25.hpp"
#include "topick/error.hpp"
#include "topick/miner.hpp"

using namespace topick;
using namespace topick::testing;

namespace {

Demonstration demo(std::string id, std::string in, std::string out = "")
{
    Demonstration d;
    d.id = std::move(id);
    d.input_text = std::move(in);
    d.output_text = std::move(out);
    return d;
}

CandidatePool text_pool(const std::vector<std::string>& texts, const std::vector<std::string>& topics)
{
    std::vector<Demonstration> demos;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        demos.push_back(demo("d" + std::to_string(i), texts[i]));
        demos.back().embedding_index = i;
    }
    return make_pool(std::move(demos), random_embeddings(texts.size(), 2, 1),
                     TopicSet(topics, random_embeddings(topics.size(), 2, 2)));
}

}  // namespace

TEST_CASE("bm25 of an absent term is zero")
{
    const auto pool = text_pool({"plants grow", "animals eat"}, {"photosynthesis", "plants"});
    CHECK(bm25(pool, 0, 0, {}) == 0.0);
    CHECK(bm25(pool, 1, 1, {}) == 0.0);
    CHECK(bm25(pool, 0, 1, {}) > 0.0);
}

TEST_CASE("bm25 on a single-document corpus matches the Okapi closed form")
{
    // N = 1, df = 1, tf = 1, dl = avgdl: idf = ln(1 + 0.5/1.5), tf part = 2.2 / 2.2.
    const auto pool = text_pool({"herbivore grazing"}, {"herbivore"});
    const double expected = std::log(1.0 + 0.5 / 1.5) * (1.0 * 2.2) / (1.0 + 1.2);
    CHECK(bm25(pool, 0, 0, {}) == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("term saturation follows the closed form as k1 changes")
{
    for (double k1 : {0.5, 1.2, 2.4, 4.8}) {
        const Bm25Params p{k1, 0.75};
        const double idf = std::log(1.0 + (10.0 - 3.0 + 0.5) / 3.5);
        const double got = bm25_term_score(1.0, 3.0, 10.0, 20.0, 20.0, p);
        CHECK(got == doctest::Approx(idf * (k1 + 1.0) / (1.0 + k1)).epsilon(1e-14));
    }
    // With tf > 1 a larger k1 lets repeated terms count for more.
    CHECK(bm25_term_score(4.0, 3.0, 10.0, 20.0, 20.0, {2.4, 0.75}) >
          bm25_term_score(4.0, 3.0, 10.0, 20.0, 20.0, {1.2, 0.75}));
}

TEST_CASE("multi-word topics sum per-term scores and match a scan oracle")
{
    const auto pool = synthetic_pool({.demos = 30, .topics = 16, .dim = 4, .seed = 5});
    const auto docs = oracle::tokenized_texts(pool);
    for (std::size_t d = 0; d < pool.size(); ++d) {
        for (TopicId t = 0; t < pool.topics.size(); ++t) {
            const double want = oracle::bm25(docs, d, pool.topics.name_tokens()[t]);
            CHECK(bm25(pool, d, t, {}) == doctest::Approx(want).epsilon(1e-13));
        }
    }
}

TEST_CASE("bm25 params are validated")
{
    CHECK_THROWS_AS((Bm25Params{0.0, 0.5}.validate()), ConfigError);
    CHECK_THROWS_AS((Bm25Params{1.0, 1.5}.validate()), ConfigError);
    CHECK_NOTHROW((Bm25Params{1.0, 0.0}.validate()));
}

TEST_CASE("miner on a single-term corpus yields that term")
{
    std::vector<Demonstration> demos{demo("a", "photosynthesis"), demo("b", "photosynthesis"),
                                     demo("c", "photosynthesis")};
    MinerConfig cfg;
    cfg.min_doc_freq = 1;
    cfg.max_doc_frac = 1.0;
    const auto topics = mine_topics(demos, cfg);
    REQUIRE(topics.size() == 1);
    CHECK(topics[0].name == "photosynthesis");
    CHECK(topics[0].doc_freq == 3);
}

TEST_CASE("miner drops terms above the document-frequency ceiling")
{
    std::vector<Demonstration> demos{demo("a", "common alpha"), demo("b", "common alpha"), demo("c", "common beta"),
                                     demo("d", "common beta")};
    MinerConfig cfg;
    cfg.min_doc_freq = 1;
    cfg.max_ngram = 1;
    const auto topics = mine_topics(demos, cfg);
    for (const auto& t : topics) CHECK(t.name != "common");
    CHECK(topics.size() == 2);
}

TEST_CASE("planted theme words outrank filler")
{
    const std::vector<std::string> themes{"glacier", "volcano", "enzyme", "mitosis"};
    std::vector<Demonstration> demos;
    for (int i = 0; i < 10; ++i) {
        std::string text;
        for (int k = 0; k < 3; ++k) text += themes[i % 4] + " ";
        text += pseudo_word(100 + i) + " " + pseudo_word(200 + i % 5);
        demos.push_back(demo("d" + std::to_string(i), text));
    }
    MinerConfig cfg;
    cfg.max_ngram = 1;
    cfg.min_doc_freq = 2;
    const auto topics = mine_topics(demos, cfg);
    REQUIRE(topics.size() >= 4);
    std::vector<std::string> top4;
    for (int i = 0; i < 4; ++i) top4.push_back(topics[i].name);
    std::sort(top4.begin(), top4.end());
    auto sorted_themes = themes;
    std::sort(sorted_themes.begin(), sorted_themes.end());
    CHECK(top4 == sorted_themes);

    // glacier: df = 3, tf = 3 in each, N = 10 -> 9 * (ln(11/4) + 1)
    const auto it = std::find_if(topics.begin(), topics.end(), [](auto& t) { return t.name == "glacier"; });
    CHECK(it->score == doctest::Approx(9.0 * (std::log(11.0 / 4.0) + 1.0)).epsilon(1e-14));
}

TEST_CASE("miner ranks bigrams, breaks ties by name and rejects an empty corpus")
{
    std::vector<Demonstration> demos{demo("a", "food chain x"), demo("b", "food chain y"), demo("c", "zz"),
                                     demo("d", "ww"), demo("e", "vv")};
    MinerConfig cfg;
    const auto topics = mine_topics(demos, cfg);
    std::vector<std::string> names;
    for (const auto& t : topics) names.push_back(t.name);
    CHECK(names == std::vector<std::string>{"chain", "food", "food chain"});
    CHECK_THROWS_AS(mine_topics({}, cfg), Error);
    cfg.max_topics = 0;
    CHECK_THROWS_AS(mine_topics(demos, cfg), ConfigError);
}
