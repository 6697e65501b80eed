#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "topick/corpus.hpp"
#include "topick/embedding.hpp"

namespace topick {

/// Three-layer MLP from embedding space to topic space:
///   h1 = tanh(e W1 + b1), h2 = tanh(h1 W2 + b2), out = sigmoid(h2 W3 + b3).
/// W1 is D x H, W2 is H x H, W3 is H x |T|, all row-major. The same struct
/// holds gradients.
struct PredictorParams {
    Matrix w1, w2, w3;
    std::vector<double> b1, b2, b3;

    std::size_t input_dim() const noexcept { return w1.rows; }
    std::size_t hidden() const noexcept { return w1.cols; }
    std::size_t topics() const noexcept { return w3.cols; }
    std::size_t parameter_count() const noexcept;

    static PredictorParams zeros(std::size_t d, std::size_t h, std::size_t t);
    bool operator==(const PredictorParams&) const = default;
};

inline constexpr double kLogitClamp = 30.0;

/// W3 columns copy the topic-name embeddings (truncated or zero-padded to
/// H); W1 and W2 are U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases are zero.
/// Throws Error naming the first topic without a name embedding.
PredictorParams init_params(const TopicSet& topics, std::size_t input_dim, std::size_t hidden,
                            std::uint64_t seed);

/// e W1 without the bias. Linear in e, which lets mean-pooled inputs be
/// combined from per-demonstration pre-activations.
std::vector<double> first_layer_preactivation(const PredictorParams& p, std::span<const double> e);
std::vector<double> first_layer_preactivation(const PredictorParams& p, std::span<const float> e);
TopicDistribution forward_from_preactivation(const PredictorParams& p, std::span<const double> pre1);

/// Throws DimensionMismatch when e.size() != D.
TopicDistribution forward(const PredictorParams& p, std::span<const float> e);
TopicDistribution forward(const PredictorParams& p, std::span<const double> e);

/// Predictions for every row (parallel over rows) and its serial reference.
Matrix predict_rows(const PredictorParams& p, const EmbeddingMatrix& m);
Matrix predict_rows_serial(const PredictorParams& p, const EmbeddingMatrix& m);

struct TrainingExample {
    std::span<const float> embedding;
    const std::vector<TopicId>* core_topics;
    const SoftLabel* soft_label;
};

struct LossOptions {
    /// false: every core topic gets weight 1 (binary-target ablation).
    bool soft_labels = true;
    /// Uniformly sample this many negatives per example and rescale their
    /// sum by |T \ T_d| / sample size. Unset: all negatives.
    std::optional<std::size_t> negative_subsample;
    std::uint64_t sampling_seed = 0;
};

/// Summed binary cross-entropy: soft-weighted log-likelihood of core topics
/// plus unweighted log(1 - p) over the rest.
double loss(const PredictorParams& p, std::span<const TrainingExample> batch, const LossOptions& opt = {});

struct LossAndGrad {
    double loss = 0.0;
    PredictorParams grad;
};

/// Exact backprop of `loss`. Examples are split into fixed-size chunks that
/// run in parallel and are reduced in chunk order, so the result does not
/// depend on the thread count.
LossAndGrad grad(const PredictorParams& p, std::span<const TrainingExample> batch, const LossOptions& opt = {});
LossAndGrad grad_serial(const PredictorParams& p, std::span<const TrainingExample> batch,
                        const LossOptions& opt = {});

struct TrainConfig {
    double learning_rate = 1e-4;
    int epochs = 50;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t hidden = 0;  // 0: same as the embedding dimension
    bool soft_labels = true;
    std::optional<std::size_t> negative_subsample;

    void validate() const;
};

struct TrainResult {
    PredictorParams params;
    double initial_loss = 0.0;          // full-pool loss at initialization
    std::vector<double> epoch_losses;   // full-pool loss after each epoch
};

/// Adam over shuffled mini-batches. Throws Error if any demonstration has
/// no core topics.
TrainResult train(const CandidatePool& pool, const TrainConfig& cfg);

/// Full-pool loss under `opt` (used for logging and tests).
double pool_loss(const PredictorParams& p, const CandidatePool& pool, const LossOptions& opt);

/// Binary layout "TPKPRM01", u32 LE D, H, |T|, then f64 LE W1, b1, W2, b2, W3, b3.
void save_params(const std::filesystem::path& path, const PredictorParams& p);
PredictorParams load_params(const std::filesystem::path& path);

}  // namespace topick
