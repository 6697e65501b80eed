#include <doctest.h>

#include <set>

#include <cmath>

#include "oracles.hpp"
#include "synthetic.hpp"
#include "topick/error.hpp"
#include "topick/kernels.hpp"
#include "topick/retrieval.hpp"

using namespace topick;
using namespace topick::testing;

namespace {

struct Instance {
    CandidatePool pool;
    PredictorParams params;
    TopicalKnowledge knowledge;
    EmbeddingMatrix tests;
};

Instance random_instance(std::size_t demos, std::size_t topics, std::size_t dim, std::uint64_t seed)
{
    Instance in;
    in.pool = synthetic_pool({.demos = demos, .topics = topics, .dim = dim, .seed = seed});
    in.params = random_params(dim, dim, topics, seed + 1);
    Rng rng(seed + 2);
    in.knowledge.values.resize(topics);
    for (auto& v : in.knowledge.values) v = uniform(rng, 0.05, 1.0);
    in.tests = random_embeddings(6, dim, seed + 3);
    return in;
}

}  // namespace

TEST_CASE("z-scores use the population deviation and vanish on constant input")
{
    const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
    const auto z = zscores(v);
    const double sd = std::sqrt(1.25);
    CHECK(z[0] == doctest::Approx(-1.5 / sd).epsilon(1e-15));
    CHECK(z[3] == doctest::Approx(1.5 / sd).epsilon(1e-15));
    for (double x : zscores(std::vector<double>{0.1, 0.1, 0.1})) CHECK(x == 0.0);
    CHECK(zscores(std::vector<double>{}).empty());
    const auto f = final_scores(v, std::vector<double>{5, 5, 5, 5}, 0.7);
    CHECK(f == z);
}

TEST_CASE("relevance divides coverage by knowledge")
{
    const std::vector<double> x{1.0, 0.5}, d{0.87, 0.9}, lm{0.75, 0.85};
    CHECK(relevance(x, d, lm) == doctest::Approx(0.87 / 0.75 + 0.45 / 0.85).epsilon(1e-15));
    CHECK(relevance(x, d, lm) == doctest::Approx(oracle::relevance(x, d, lm)).epsilon(1e-15));
    const std::vector<double> one{1.0, 1.0};
    CHECK(relevance(x, d, one) == kernels::dot(std::span<const double>(x), std::span<const double>(d)));
    CHECK_THROWS_AS(relevance(x, std::vector<double>{1.0}, lm), DimensionMismatch);
}

TEST_CASE("cumulative coverage conventions")
{
    const auto p = random_params(4, 4, 5, 3);
    const std::vector<float> e{0.25f, -0.5f, 1.0f, 0.0f};
    CHECK(cumulative_coverage(p, e, {}) == forward(p, e));

    const std::vector<float> s1{1.0f, 0.0f, 0.5f, -1.0f}, s2{0.0f, 0.5f, -0.5f, 2.0f};
    const std::vector<float> mean{0.5f, 0.25f, 0.0f, 0.5f};
    for (double v : cumulative_coverage(p, mean, {s1, s2})) CHECK(std::abs(v) <= 1e-12);

    // Direct definition: f(mean(d, S)) - f(mean(S)).
    const auto got = cumulative_coverage(p, e, {s1, s2});
    std::vector<double> with(4), without(4);
    for (int i = 0; i < 4; ++i) {
        with[i] = (double(e[i]) + s1[i] + s2[i]) / 3.0;
        without[i] = (double(s1[i]) + s2[i]) / 2.0;
    }
    const auto fa = oracle::forward(p, with), fb = oracle::forward(p, without);
    for (int t = 0; t < 5; ++t) CHECK(got[t] == doctest::Approx(fa[t] - fb[t]).epsilon(1e-12));
}

TEST_CASE("select returns K distinct demonstrations with traces")
{
    const auto in = random_instance(60, 15, 8, 1);
    const Retriever r(in.pool, in.params, in.knowledge);
    RetrievalConfig cfg;
    cfg.k = 6;
    const auto res = r.select(in.tests.row(0), cfg);
    CHECK(res.indices.size() == 6);
    CHECK(std::set<std::size_t>(res.indices.begin(), res.indices.end()).size() == 6);
    CHECK(res.steps.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(res.selected[i] == in.pool.demonstrations[res.indices[i]].id);
        CHECK(res.steps[i].demo == res.indices[i]);
        CHECK(res.steps[i].top_contributions.size() == 10);
    }
    CHECK(res == select(in.tests.row(0), in.pool, in.params, in.knowledge, cfg));
}

TEST_CASE("the first pick maximizes the blended z-score over the pool")
{
    const auto in = random_instance(40, 10, 6, 2);
    const Retriever r(in.pool, in.params, in.knowledge);
    const auto x = in.tests.row(1);
    RetrievalConfig cfg;
    cfg.k = 1;
    const auto tx = oracle::forward(in.params, oracle::to_double(x));
    std::vector<double> rel, cos;
    for (std::size_t i = 0; i < in.pool.size(); ++i) {
        rel.push_back(oracle::relevance(tx, oracle::forward(in.params, oracle::to_double(in.pool.embedding(i))),
                                        in.knowledge.values));
        cos.push_back(oracle::cosine(x, in.pool.embedding(i)));
    }
    const auto score = final_scores(rel, cos, cfg.lambda);
    const auto best = std::max_element(score.begin(), score.end()) - score.begin();
    CHECK(r.select(x, cfg).indices.front() == static_cast<std::size_t>(best));
}

TEST_CASE("later steps score candidates by marginal coverage")
{
    const auto in = random_instance(30, 8, 5, 3);
    const Retriever r(in.pool, in.params, in.knowledge);
    const auto x = in.tests.row(2);
    RetrievalConfig cfg;
    cfg.k = 4;
    const auto res = r.select(x, cfg);
    const auto tx = oracle::forward(in.params, oracle::to_double(x));
    std::vector<double> cos_all;
    for (std::size_t i = 0; i < in.pool.size(); ++i) cos_all.push_back(oracle::cosine(x, in.pool.embedding(i)));
    const auto zcos = zscores(cos_all);

    for (std::size_t step = 1; step < cfg.k; ++step) {
        const std::vector<std::size_t> chosen(res.indices.begin(), res.indices.begin() + step);
        std::vector<std::size_t> cands;
        std::vector<double> rel;
        for (std::size_t i = 0; i < in.pool.size(); ++i) {
            if (std::find(chosen.begin(), chosen.end(), i) != chosen.end()) continue;
            cands.push_back(i);
            rel.push_back(oracle::relevance(tx, cumulative_coverage(in.pool, in.params, i, chosen), in.knowledge.values));
        }
        const auto zr = zscores(rel);
        std::size_t best = 0;
        for (std::size_t c = 1; c < cands.size(); ++c) {
            if (zr[c] + cfg.lambda * zcos[cands[c]] > zr[best] + cfg.lambda * zcos[cands[best]]) best = c;
        }
        CHECK(res.indices[step] == cands[best]);
        CHECK(res.steps[step].relevance == doctest::Approx(rel[best]).epsilon(1e-9));
    }
}

TEST_CASE("without cumulative updates later steps rank by raw relevance")
{
    const auto in = random_instance(30, 8, 5, 4);
    const Retriever r(in.pool, in.params, in.knowledge);
    RetrievalConfig cfg;
    cfg.k = 5;
    cfg.cumulative = false;
    cfg.lambda = 0.0;
    const auto res = r.select(in.tests.row(0), cfg);
    const auto tx = oracle::forward(in.params, oracle::to_double(in.tests.row(0)));
    std::vector<double> rel;
    for (std::size_t i = 0; i < in.pool.size(); ++i) {
        rel.push_back(oracle::relevance(tx, oracle::forward(in.params, oracle::to_double(in.pool.embedding(i))),
                                        in.knowledge.values));
    }
    auto order = kernels::top_k(rel, 5);
    CHECK(res.indices == order);
}

TEST_CASE("selection errors")
{
    const auto in = random_instance(5, 4, 4, 5);
    const Retriever r(in.pool, in.params, in.knowledge);
    RetrievalConfig cfg;
    cfg.k = 6;
    CHECK_THROWS_AS(r.select(in.tests.row(0), cfg), Error);
    cfg.k = 2;
    const std::vector<float> bad{1, 2};
    CHECK_THROWS_AS(r.select(bad, cfg), DimensionMismatch);
    cfg.prune_m = 1;
    CHECK_THROWS_AS(r.select(in.tests.row(0), cfg), ConfigError);
    TopicalKnowledge short_k;
    short_k.values = {0.5};
    CHECK_THROWS_AS(Retriever(in.pool, in.params, short_k), DimensionMismatch);
}

TEST_CASE("pruning only narrows pools larger than prune_m")
{
    const auto in = random_instance(80, 12, 6, 6);
    const Retriever r(in.pool, in.params, in.knowledge);
    RetrievalConfig on, off;
    on.k = off.k = 5;
    off.prune = false;
    on.prune_m = 80;
    for (std::size_t i = 0; i < in.tests.rows(); ++i) CHECK(r.select(in.tests.row(i), on) == r.select(in.tests.row(i), off));
    on.prune_m = 10;
    for (std::size_t i = 0; i < in.tests.rows(); ++i) {
        const auto res = r.select(in.tests.row(i), on);
        CHECK(res.indices.size() == 5);
    }
}

TEST_CASE("batch retrieval is order-preserving and matches the serial path")
{
    const auto in = random_instance(120, 20, 8, 7);
    const Retriever r(in.pool, in.params, in.knowledge);
    EmbeddingMatrix tests = random_embeddings(30, 8, 8);
    std::copy(tests.row(3).begin(), tests.row(3).end(), tests.row(17).begin());
    std::vector<std::string> ids;
    for (int i = 0; i < 30; ++i) ids.push_back("q" + std::to_string(i));
    RetrievalConfig cfg;
    const auto ser = retrieve_batch_serial(ids, tests, r, cfg);
    for (int threads : {1, 4}) {
        kernels::set_threads(threads);
        const auto par = retrieve_batch(ids, tests, r, cfg);
        REQUIRE(par.size() == ser.size());
        for (std::size_t i = 0; i < par.size(); ++i) {
            CHECK(par[i].id == ids[i]);
            REQUIRE(par[i].result.has_value());
            CHECK(par[i].result->indices == ser[i].result->indices);
            for (std::size_t s = 0; s < par[i].result->steps.size(); ++s) {
                CHECK(par[i].result->steps[s].score == ser[i].result->steps[s].score);
            }
        }
        CHECK(par[3].result->indices == par[17].result->indices);
    }
    kernels::set_threads(0);
    CHECK_THROWS_AS(retrieve_batch({"a"}, tests, r, cfg), DimensionMismatch);
}

TEST_CASE("a failing input does not disturb the rest of the batch")
{
    const auto in = random_instance(6, 4, 4, 9);
    const Retriever r(in.pool, in.params, in.knowledge);
    RetrievalConfig cfg;
    cfg.k = 3;
    auto tests = random_embeddings(2, 4, 1);
    tests.row(1)[0] = std::nanf("");
    const auto out = retrieve_batch({"ok", "nan"}, tests, r, cfg);
    CHECK(out[0].result.has_value());
    CHECK(out[0].error.empty());
    CHECK_FALSE(out[1].result.has_value());
    CHECK(out[1].error.find("non-finite") != std::string::npos);
}

TEST_CASE("cosine baseline picks the most similar demonstrations")
{
    const auto cc = cluster_corpus();
    const auto top = cosine_top_k(cc.test_input, cc.pool, 4);
    for (auto i : top) CHECK(cc.cluster_of(i) == 0);
}

TEST_CASE("case-study ordering: lower knowledge lifts the herbivore demo")
{
    const std::vector<double> lm{0.75, 0.85};
    const std::vector<double> herb{0.87, 0.0}, omni{0.0, 0.90};
    const std::vector<double> x{0.9, 0.9};
    CHECK(relevance(x, herb, lm) == doctest::Approx(1.044).epsilon(1e-12));
    CHECK(relevance(x, omni, lm) == doctest::Approx(0.81 / 0.85).epsilon(1e-12));
    CHECK(relevance(x, herb, lm) > relevance(x, omni, lm));
}

TEST_CASE("z-scoring makes selection blind to cosine shifts and knowledge scale")
{
    const std::vector<double> r{0.3, 1.2, -0.4, 0.8}, c{0.1, 0.2, 0.9, 0.4};
    std::vector<double> shifted(c);
    for (auto& v : shifted) v += 3.0;
    const auto a = final_scores(r, c, 0.5), b = final_scores(r, shifted, 0.5);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
    CHECK(final_scores(std::vector<double>{2.0}, std::vector<double>{0.3}, 0.5) == std::vector<double>{0.0});

    const auto in = random_instance(50, 10, 6, 21);
    auto scaled = in.knowledge;
    for (auto& v : scaled.values) v *= 3.0;
    const Retriever r1(in.pool, in.params, in.knowledge), r2(in.pool, in.params, scaled);
    RetrievalConfig cfg;
    cfg.k = 5;
    for (std::size_t i = 0; i < in.tests.rows(); ++i) CHECK(r1.select(in.tests.row(i), cfg) == r2.select(in.tests.row(i), cfg));
}
