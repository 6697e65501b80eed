#include "topick/predictor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "topick/error.hpp"

namespace topick {

std::size_t PredictorParams::parameter_count() const noexcept
{
    return w1.data.size() + w2.data.size() + w3.data.size() + b1.size() + b2.size() + b3.size();
}

PredictorParams PredictorParams::zeros(std::size_t d, std::size_t h, std::size_t t)
{
    PredictorParams p;
    p.w1 = Matrix(d, h);
    p.w2 = Matrix(h, h);
    p.w3 = Matrix(h, t);
    p.b1.assign(h, 0.0);
    p.b2.assign(h, 0.0);
    p.b3.assign(t, 0.0);
    return p;
}

namespace {

template <typename Fn>
void for_each_tensor(PredictorParams& p, Fn&& fn)
{
    fn(std::span<double>(p.w1.data));
    fn(std::span<double>(p.b1));
    fn(std::span<double>(p.w2.data));
    fn(std::span<double>(p.b2));
    fn(std::span<double>(p.w3.data));
    fn(std::span<double>(p.b3));
}

template <typename Fn>
void for_each_tensor(const PredictorParams& p, Fn&& fn)
{
    fn(std::span<const double>(p.w1.data));
    fn(std::span<const double>(p.b1));
    fn(std::span<const double>(p.w2.data));
    fn(std::span<const double>(p.b2));
    fn(std::span<const double>(p.w3.data));
    fn(std::span<const double>(p.b3));
}

std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Uniform double in [0,1) from the top 53 bits.
double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

template <typename T>
void check_dim(const PredictorParams& p, std::span<const T> e)
{
    if (e.size() != p.input_dim()) {
        throw DimensionMismatch("embedding has dimension " + std::to_string(e.size()) + ", predictor expects " +
                                std::to_string(p.input_dim()));
    }
}

template <typename T>
std::vector<double> preactivation_impl(const PredictorParams& p, std::span<const T> e)
{
    const std::size_t h = p.hidden();
    std::vector<double> acc(h, 0.0);
    for (std::size_t i = 0; i < e.size(); ++i) {
        const double ei = static_cast<double>(e[i]);
        const auto w = p.w1.row(i);
        for (std::size_t j = 0; j < h; ++j) acc[j] += ei * w[j];
    }
    return acc;
}

/// Affine map acc = x W + b for row-major W (x.size() x out).
void affine(std::span<const double> x, const Matrix& w, std::span<const double> b, std::vector<double>& out)
{
    out.assign(w.cols, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        const auto row = w.row(i);
        for (std::size_t j = 0; j < w.cols; ++j) out[j] += xi * row[j];
    }
    for (std::size_t j = 0; j < w.cols; ++j) out[j] += b[j];
}

struct Activations {
    std::vector<double> h1, h2, z;  // z is the unclamped logit
};

void hidden_from_preactivation(const PredictorParams& p, std::span<const double> pre1, Activations& a)
{
    const std::size_t h = p.hidden();
    a.h1.resize(h);
    for (std::size_t j = 0; j < h; ++j) a.h1[j] = std::tanh(pre1[j] + p.b1[j]);
    affine(a.h1, p.w2, p.b2, a.h2);
    for (auto& v : a.h2) v = std::tanh(v);
    affine(a.h2, p.w3, p.b3, a.z);
}

inline double clamp_logit(double z) { return std::clamp(z, -kLogitClamp, kLogitClamp); }

}  // namespace

PredictorParams init_params(const TopicSet& topics, std::size_t input_dim, std::size_t hidden, std::uint64_t seed)
{
    if (hidden == 0) hidden = input_dim;
    for (TopicId t = 0; t < topics.size(); ++t) {
        if (!topics.has_embedding(t)) {
            throw Error("topic \"" + topics.name(t) + "\" (index " + std::to_string(t) + ") has no name embedding");
        }
    }
    if (topics.size() > 0 && topics.name_embeddings().dim() != input_dim) {
        throw DimensionMismatch("topic name embeddings have dim " + std::to_string(topics.name_embeddings().dim()) +
                                ", predictor input dim is " + std::to_string(input_dim));
    }
    auto p = PredictorParams::zeros(input_dim, hidden, topics.size());
    std::mt19937_64 rng(seed);
    auto fill = [&](Matrix& m) {
        const double a = 1.0 / std::sqrt(static_cast<double>(m.rows));
        for (auto& v : m.data) v = (2.0 * unit_uniform(rng) - 1.0) * a;
    };
    fill(p.w1);
    fill(p.w2);
    const std::size_t copy = std::min(hidden, input_dim);
    for (TopicId t = 0; t < topics.size(); ++t) {
        const auto e = topics.name_embeddings().row(t);
        for (std::size_t j = 0; j < copy; ++j) p.w3(j, t) = static_cast<double>(e[j]);
    }
    return p;
}

std::vector<double> first_layer_preactivation(const PredictorParams& p, std::span<const double> e)
{
    check_dim(p, e);
    return preactivation_impl(p, e);
}

std::vector<double> first_layer_preactivation(const PredictorParams& p, std::span<const float> e)
{
    check_dim(p, e);
    return preactivation_impl(p, e);
}

TopicDistribution forward_from_preactivation(const PredictorParams& p, std::span<const double> pre1)
{
    Activations a;
    hidden_from_preactivation(p, pre1, a);
    for (auto& v : a.z) v = sigmoid(clamp_logit(v));
    return std::move(a.z);
}

TopicDistribution forward(const PredictorParams& p, std::span<const float> e)
{
    return forward_from_preactivation(p, first_layer_preactivation(p, e));
}

TopicDistribution forward(const PredictorParams& p, std::span<const double> e)
{
    return forward_from_preactivation(p, first_layer_preactivation(p, e));
}

Matrix predict_rows_serial(const PredictorParams& p, const EmbeddingMatrix& m)
{
    Matrix out(m.rows(), p.topics());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const auto y = forward(p, m.row(i));
        std::copy(y.begin(), y.end(), out.row(i).begin());
    }
    return out;
}

Matrix predict_rows(const PredictorParams& p, const EmbeddingMatrix& m)
{
    if (m.rows() > 0) check_dim(p, m.row(0));
    Matrix out(m.rows(), p.topics());
    const auto n = static_cast<std::ptrdiff_t>(m.rows());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto y = forward(p, m.row(i));
        std::copy(y.begin(), y.end(), out.row(i).begin());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Loss and gradient

namespace {

/// Per-example forward state plus the logit gradient dL/dz.
struct ExampleState {
    Activations act;
    std::vector<double> dz;
    std::vector<double> dpre2;
    std::vector<double> dpre1;
    double loss = 0.0;
};

/// Which topics count as negatives for one example, with their weight.
struct NegativePlan {
    std::vector<char> sampled;  // empty: all negatives, weight 1
    double scale = 1.0;
};

NegativePlan plan_negatives(const TrainingExample& ex, std::size_t num_topics, const LossOptions& opt,
                            std::size_t ordinal)
{
    NegativePlan plan;
    if (!opt.negative_subsample) return plan;
    std::vector<TopicId> negatives;
    negatives.reserve(num_topics);
    const auto& core = *ex.core_topics;
    for (TopicId t = 0; t < num_topics; ++t) {
        if (!std::binary_search(core.begin(), core.end(), t)) negatives.push_back(t);
    }
    const std::size_t m = *opt.negative_subsample;
    if (m >= negatives.size()) return plan;
    std::mt19937_64 rng(splitmix64(opt.sampling_seed ^ splitmix64(ordinal)));
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng() % (negatives.size() - i));
        std::swap(negatives[i], negatives[j]);
    }
    plan.sampled.assign(num_topics, 0);
    for (std::size_t i = 0; i < m; ++i) plan.sampled[negatives[i]] = 1;
    plan.scale = m == 0 ? 0.0 : static_cast<double>(negatives.size()) / static_cast<double>(m);
    return plan;
}

void example_forward_backward(const PredictorParams& p, const TrainingExample& ex, const LossOptions& opt,
                              std::size_t ordinal, bool want_grad, ExampleState& st)
{
    check_dim(p, ex.embedding);
    hidden_from_preactivation(p, preactivation_impl(p, ex.embedding), st.act);
    const std::size_t nt = p.topics();
    const auto& core = *ex.core_topics;
    const auto plan = plan_negatives(ex, nt, opt, ordinal);

    st.dz.assign(nt, 0.0);
    double pos = 0.0;
    double neg = 0.0;
    std::size_t ci = 0;
    for (TopicId t = 0; t < nt; ++t) {
        const double zr = st.act.z[t];
        const double z = clamp_logit(zr);
        const bool clamped = zr != z;
        const bool positive = ci < core.size() && core[ci] == t;
        if (positive) {
            ++ci;
            double w = 1.0;
            if (opt.soft_labels && ex.soft_label) {
                auto it = ex.soft_label->find(t);
                if (it != ex.soft_label->end()) w = it->second;
            }
            pos += w * -softplus(-z);  // w log sigmoid(z)
            if (want_grad && !clamped) st.dz[t] = -w * (1.0 - sigmoid(z));
        } else {
            if (!plan.sampled.empty() && !plan.sampled[t]) continue;
            neg += -softplus(z);  // log(1 - sigmoid(z))
            if (want_grad && !clamped) st.dz[t] = plan.scale * sigmoid(z);
        }
    }
    st.loss = -(pos + plan.scale * neg);
    if (!want_grad) return;

    const std::size_t h = p.hidden();
    st.dpre2.assign(h, 0.0);
    for (std::size_t j = 0; j < h; ++j) {
        const auto w = p.w3.row(j);
        double s = 0.0;
        for (std::size_t t = 0; t < nt; ++t) s += w[t] * st.dz[t];
        st.dpre2[j] = s * (1.0 - st.act.h2[j] * st.act.h2[j]);
    }
    st.dpre1.assign(h, 0.0);
    for (std::size_t i = 0; i < h; ++i) {
        const auto w = p.w2.row(i);
        double s = 0.0;
        for (std::size_t j = 0; j < h; ++j) s += w[j] * st.dpre2[j];
        st.dpre1[i] = s * (1.0 - st.act.h1[i] * st.act.h1[i]);
    }
}

void check_batch(const PredictorParams& p, std::span<const TrainingExample> batch)
{
    for (const auto& ex : batch) {
        if (ex.core_topics == nullptr) throw Error("training example without core topics");
        check_dim(p, ex.embedding);
        if (!ex.core_topics->empty() && ex.core_topics->back() >= p.topics()) {
            throw OutOfRange("core topic " + std::to_string(ex.core_topics->back()) + " outside predictor output");
        }
    }
}

}  // namespace

double loss(const PredictorParams& p, std::span<const TrainingExample> batch, const LossOptions& opt)
{
    check_batch(p, batch);
    std::vector<double> per(batch.size());
    const auto n = static_cast<std::ptrdiff_t>(batch.size());
#pragma omp parallel
    {
        ExampleState st;
#pragma omp for schedule(static)
        for (std::ptrdiff_t b = 0; b < n; ++b) {
            example_forward_backward(p, batch[b], opt, b, false, st);
            per[b] = st.loss;
        }
    }
    double total = 0.0;
    for (double v : per) total += v;
    return total;
}

LossAndGrad grad_serial(const PredictorParams& p, std::span<const TrainingExample> batch, const LossOptions& opt)
{
    check_batch(p, batch);
    LossAndGrad out{0.0, PredictorParams::zeros(p.input_dim(), p.hidden(), p.topics())};
    auto& g = out.grad;
    const std::size_t h = p.hidden();
    const std::size_t nt = p.topics();
    ExampleState st;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        example_forward_backward(p, batch[b], opt, b, true, st);
        out.loss += st.loss;
        for (std::size_t t = 0; t < nt; ++t) g.b3[t] += st.dz[t];
        for (std::size_t j = 0; j < h; ++j) {
            auto row = g.w3.row(j);
            for (std::size_t t = 0; t < nt; ++t) row[t] += st.act.h2[j] * st.dz[t];
        }
        for (std::size_t j = 0; j < h; ++j) g.b2[j] += st.dpre2[j];
        for (std::size_t i = 0; i < h; ++i) {
            auto row = g.w2.row(i);
            for (std::size_t j = 0; j < h; ++j) row[j] += st.act.h1[i] * st.dpre2[j];
        }
        for (std::size_t j = 0; j < h; ++j) g.b1[j] += st.dpre1[j];
        const auto e = batch[b].embedding;
        for (std::size_t i = 0; i < e.size(); ++i) {
            auto row = g.w1.row(i);
            const double ei = static_cast<double>(e[i]);
            for (std::size_t j = 0; j < h; ++j) row[j] += ei * st.dpre1[j];
        }
    }
    return out;
}

LossAndGrad grad(const PredictorParams& p, std::span<const TrainingExample> batch, const LossOptions& opt)
{
    check_batch(p, batch);
    const std::size_t nb = batch.size();
    const std::size_t d = p.input_dim();
    const std::size_t h = p.hidden();
    const std::size_t nt = p.topics();
    std::vector<ExampleState> states(nb);
    const auto snb = static_cast<std::ptrdiff_t>(nb);

#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t b = 0; b < snb; ++b) example_forward_backward(p, batch[b], opt, b, true, states[b]);

    LossAndGrad out{0.0, PredictorParams::zeros(d, h, nt)};
    auto& g = out.grad;
    for (const auto& st : states) out.loss += st.loss;

    // Each output element sums its per-example terms in batch order, exactly
    // as grad_serial does, so the two agree bit-for-bit.
#pragma omp parallel
    {
#pragma omp for schedule(static) nowait
        for (std::ptrdiff_t t = 0; t < static_cast<std::ptrdiff_t>(nt); ++t) {
            for (std::size_t b = 0; b < nb; ++b) g.b3[t] += states[b].dz[t];
        }
#pragma omp for schedule(static) nowait
        for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(h); ++j) {
            auto row = g.w3.row(j);
            for (std::size_t b = 0; b < nb; ++b) {
                const double hj = states[b].act.h2[j];
                const auto& dz = states[b].dz;
                for (std::size_t t = 0; t < nt; ++t) row[t] += hj * dz[t];
            }
            for (std::size_t b = 0; b < nb; ++b) g.b2[j] += states[b].dpre2[j];
            for (std::size_t b = 0; b < nb; ++b) g.b1[j] += states[b].dpre1[j];
        }
#pragma omp for schedule(static) nowait
        for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(h); ++i) {
            auto row = g.w2.row(i);
            for (std::size_t b = 0; b < nb; ++b) {
                const double hi = states[b].act.h1[i];
                const auto& dp = states[b].dpre2;
                for (std::size_t j = 0; j < h; ++j) row[j] += hi * dp[j];
            }
        }
#pragma omp for schedule(static)
        for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(d); ++i) {
            auto row = g.w1.row(i);
            for (std::size_t b = 0; b < nb; ++b) {
                const double ei = static_cast<double>(batch[b].embedding[i]);
                const auto& dp = states[b].dpre1;
                for (std::size_t j = 0; j < h; ++j) row[j] += ei * dp[j];
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate() const
{
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("train.learning_rate must be positive");
    if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train betas must lie in [0,1)");
    if (!(epsilon > 0.0)) throw ConfigError("train.epsilon must be positive");
    if (negative_subsample && *negative_subsample == 0) throw ConfigError("train.negative_subsample must be >= 1");
}

namespace {

std::vector<TrainingExample> pool_examples(const CandidatePool& pool)
{
    std::vector<TrainingExample> ex;
    ex.reserve(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
        const auto& d = pool.demonstrations[i];
        if (d.core_topics.empty()) throw Error("demonstration \"" + d.id + "\" is unlabeled (no core topics)");
        ex.push_back({pool.embedding(i), &d.core_topics, &d.soft_label});
    }
    return ex;
}

}  // namespace

double pool_loss(const PredictorParams& p, const CandidatePool& pool, const LossOptions& opt)
{
    const auto ex = pool_examples(pool);
    return loss(p, ex, opt);
}

TrainResult train(const CandidatePool& pool, const TrainConfig& cfg)
{
    cfg.validate();
    const auto examples = pool_examples(pool);
    TrainResult result;
    result.params = init_params(pool.topics, pool.embeddings.dim(), cfg.hidden, cfg.seed);
    auto& p = result.params;

    LossOptions eval_opt;
    eval_opt.soft_labels = cfg.soft_labels;
    result.initial_loss = loss(p, examples, eval_opt);
    if (cfg.epochs == 0) return result;

    auto m = PredictorParams::zeros(p.input_dim(), p.hidden(), p.topics());
    auto v = m;
    std::mt19937_64 rng(splitmix64(cfg.seed));
    std::vector<std::size_t> order(examples.size());
    std::vector<TrainingExample> batch;
    std::uint64_t step = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(rng() % i);
            std::swap(order[i - 1], order[j]);
        }
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            batch.clear();
            for (std::size_t k = start; k < end; ++k) batch.push_back(examples[order[k]]);

            LossOptions opt;
            opt.soft_labels = cfg.soft_labels;
            opt.negative_subsample = cfg.negative_subsample;
            opt.sampling_seed = splitmix64(cfg.seed ^ splitmix64(step));
            const auto lg = grad(p, batch, opt);
            ++step;

            const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
            std::vector<std::span<double>> ps, ms, vs;
            std::vector<std::span<const double>> gs;
            for_each_tensor(p, [&](std::span<double> s) { ps.push_back(s); });
            for_each_tensor(m, [&](std::span<double> s) { ms.push_back(s); });
            for_each_tensor(v, [&](std::span<double> s) { vs.push_back(s); });
            for_each_tensor(lg.grad, [&](std::span<const double> s) { gs.push_back(s); });
            for (std::size_t k = 0; k < ps.size(); ++k) {
                const auto n = static_cast<std::ptrdiff_t>(ps[k].size());
#pragma omp parallel for schedule(static)
                for (std::ptrdiff_t i = 0; i < n; ++i) {
                    const double gi = gs[k][i];
                    ms[k][i] = cfg.beta1 * ms[k][i] + (1.0 - cfg.beta1) * gi;
                    vs[k][i] = cfg.beta2 * vs[k][i] + (1.0 - cfg.beta2) * gi * gi;
                    const double mhat = ms[k][i] / c1;
                    const double vhat = vs[k][i] / c2;
                    ps[k][i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
                }
            }
        }
        result.epoch_losses.push_back(loss(p, examples, eval_opt));
    }
    return result;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr char kParamMagic[8] = {'T', 'P', 'K', 'P', 'R', 'M', '0', '1'};
static_assert(std::endian::native == std::endian::little, "TPKPRM01 I/O assumes a little-endian host");

}  // namespace

void save_params(const std::filesystem::path& path, const PredictorParams& p)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(kParamMagic, sizeof kParamMagic);
    const std::uint32_t dims[3] = {static_cast<std::uint32_t>(p.input_dim()), static_cast<std::uint32_t>(p.hidden()),
                                   static_cast<std::uint32_t>(p.topics())};
    out.write(reinterpret_cast<const char*>(dims), sizeof dims);
    for_each_tensor(p, [&](std::span<const double> s) {
        out.write(reinterpret_cast<const char*>(s.data()), static_cast<std::streamsize>(s.size_bytes()));
    });
    if (!out) throw Error("write failed: " + path.string());
}

PredictorParams load_params(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifact("cannot open predictor params " + path.string());
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kParamMagic, sizeof magic) != 0) {
        throw FormatError(path.string(), 0, "bad magic, expected TPKPRM01");
    }
    std::uint32_t dims[3];
    in.read(reinterpret_cast<char*>(dims), sizeof dims);
    if (!in) throw FormatError(path.string(), 0, "truncated header");
    auto p = PredictorParams::zeros(dims[0], dims[1], dims[2]);
    for_each_tensor(p, [&](std::span<double> s) {
        in.read(reinterpret_cast<char*>(s.data()), static_cast<std::streamsize>(s.size_bytes()));
        if (static_cast<std::size_t>(in.gcount()) != s.size_bytes()) throw FormatError(path.string(), 0, "truncated payload");
        for (double x : s) {
            if (!std::isfinite(x)) throw FormatError(path.string(), 0, "non-finite parameter");
        }
    });
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path.string(), 0, "trailing bytes after payload");
    return p;
}

}  // namespace topick
