#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "exgrpo/rng.hpp"
#include "exgrpo/vocabulary.hpp"

namespace exgrpo {

/// Hashes the last `window` tokens of a prefix into one of `buckets` rows.
struct FeatureMap {
    std::size_t window = 4;
    std::size_t buckets = 4096;
    std::uint64_t seed = 0;

    std::size_t operator()(std::span<const TokenId> prefix) const;
    bool operator==(const FeatureMap&) const = default;
};

/// Gradient with respect to theta, stored as the feature rows actually touched.
/// Rows iterate in ascending order, so sums over a gradient are order-deterministic.
class Gradient {
public:
    Gradient() = default;
    Gradient(std::size_t rows, std::size_t cols) : n_rows_(rows), cols_(cols) {}

    std::size_t size() const noexcept { return n_rows_ * cols_; }
    std::size_t cols() const noexcept { return cols_; }
    const std::map<std::size_t, std::vector<double>>& rows() const noexcept { return rows_; }

    /// Row `r`, created as zeros on first access.
    std::span<double> row(std::size_t r);
    /// Entry at flat index `row * cols + col`.
    double at(std::size_t index) const;
    std::vector<double> dense() const;

    /// this += scale * other
    void add_scaled(const Gradient& other, double scale);
    double norm() const;
    bool all_finite() const;

private:
    std::size_t n_rows_ = 0, cols_ = 0;
    std::map<std::size_t, std::vector<double>> rows_;
};

/// Linear-softmax autoregressive policy: next-token logits are row `feature(prefix)` of a
/// dense (buckets x |V|) matrix. Copies are deep, so a copy is a frozen snapshot.
class PolicyParameters {
public:
    PolicyParameters(FeatureMap features, std::size_t vocab_size);

    const FeatureMap& features() const noexcept { return features_; }
    std::size_t buckets() const noexcept { return features_.buckets; }
    std::size_t vocab_size() const noexcept { return vocab_size_; }
    std::size_t size() const noexcept { return theta_.size(); }

    std::vector<double>& theta() noexcept { return theta_; }
    const std::vector<double>& theta() const noexcept { return theta_; }
    std::span<double> row(std::size_t feature) { return {theta_.data() + feature * vocab_size_, vocab_size_}; }
    std::span<const double> row(std::size_t feature) const {
        return {theta_.data() + feature * vocab_size_, vocab_size_};
    }

    Gradient zero_gradient() const { return Gradient(features_.buckets, vocab_size_); }
    bool same_layout(const PolicyParameters& other) const;
    bool all_finite() const;

    /// theta += scale * direction. Throws NumericError (leaving theta untouched) if the result would be non-finite.
    void apply(const Gradient& direction, double scale);

    /// Stable 64-bit digest of the layout and every parameter bit.
    std::uint64_t digest() const;

    // Binary checkpoint: "EXGRPOCK", version, window, buckets, |V|, seed, row count, then
    // (row index, |V| doubles) for each non-zero row in ascending order. Little-endian.
    void save(const std::filesystem::path& path) const;
    static PolicyParameters load(const std::filesystem::path& path);

    bool operator==(const PolicyParameters&) const = default;

private:
    FeatureMap features_;
    std::size_t vocab_size_;
    std::vector<double> theta_;
};

/// log softmax of one parameter row.
void log_softmax(std::span<const double> logits, std::span<double> out);

/// Feature rows visited while scoring `continuation` after `context`, one per continuation token.
std::vector<std::size_t> visited_features(const PolicyParameters& params, std::span<const TokenId> context,
                                          std::span<const TokenId> continuation);

/// Sum of next-token log-probabilities of `continuation` given `context`. Throws ContractError
/// on an empty continuation or an out-of-range token.
double log_prob(const PolicyParameters& params, std::span<const TokenId> context,
                std::span<const TokenId> continuation);

/// Same value as log_prob; also adds `weight * d log_prob / d theta` into `grad`.
double log_prob_and_grad(const PolicyParameters& params, std::span<const TokenId> context,
                         std::span<const TokenId> continuation, double weight, Gradient& grad);

/// Per-token log-probabilities of `continuation` given `context`.
std::vector<double> token_log_probs(const PolicyParameters& params, std::span<const TokenId> context,
                                    std::span<const TokenId> continuation);

struct Sampled {
    TokenSequence tokens;
    std::vector<double> log_probs;  // behaviour log-probability of each sampled token
};

/// Ancestral sampling until `stop` is produced or `max_len` tokens were drawn.
Sampled sample(const PolicyParameters& params, std::span<const TokenId> context, Rng& rng, std::size_t max_len,
               TokenId stop = -1);

/// Argmax decoding, ties to the lowest token index.
Sampled greedy(const PolicyParameters& params, std::span<const TokenId> context, std::size_t max_len,
               TokenId stop = -1);

struct SftPair {
    TokenSequence context;
    TokenSequence target;
};

struct LossAndGrad {
    double loss = 0.0;
    Gradient grad;
};

/// Negative log-likelihood summed over the batch, with its exact gradient.
LossAndGrad sft_loss_and_grad(const PolicyParameters& params, std::span<const SftPair> batch);

/// Mean over states of KL(p(.|s) || q(.|s)); states given as feature rows.
double kl_divergence(const PolicyParameters& p, const PolicyParameters& q, std::span<const std::size_t> states);

/// Mean over prefixes (each prefix is one state).
double kl_divergence(const PolicyParameters& p, const PolicyParameters& q, std::span<const TokenSequence> states);

/// KL value as above; adds `weight * dKL/dtheta_p` into `grad`.
double kl_divergence_and_grad(const PolicyParameters& p, const PolicyParameters& q,
                              std::span<const std::size_t> states, double weight, Gradient& grad);


}  // namespace exgrpo
