#include "exgrpo/policy.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "exgrpo/error.hpp"

namespace exgrpo {

namespace {

constexpr char kMagic[8] = {'E', 'X', 'G', 'R', 'P', 'O', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 2;

template <class T>
void write_le(std::ostream& out, T value) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    U bits = std::bit_cast<U>(value);
    unsigned char bytes[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(bytes), sizeof bytes);
}

template <class T>
T read_le(std::istream& in) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    unsigned char bytes[sizeof(U)];
    if (!in.read(reinterpret_cast<char*>(bytes), sizeof bytes)) throw IoError("truncated checkpoint");
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<U>(bytes[i]) << (8 * i);
    return std::bit_cast<T>(bits);
}

void check_tokens(const PolicyParameters& params, std::span<const TokenId> tokens) {
    for (TokenId t : tokens)
        if (t < 0 || static_cast<std::size_t>(t) >= params.vocab_size())
            throw ContractError("token index " + std::to_string(t) + " outside the vocabulary");
}

// Walks the scoring states of `continuation`, keeping only the tail the feature map can see.
template <class Visit>
void for_each_state(const PolicyParameters& params, std::span<const TokenId> context,
                    std::span<const TokenId> continuation, Visit&& visit) {
    const std::size_t w = params.features().window;
    std::vector<TokenId> tail(context.end() - std::min(context.size(), w), context.end());
    tail.reserve(w + continuation.size());
    for (std::size_t t = 0; t < continuation.size(); ++t) {
        visit(params.features()(tail), continuation[t]);
        tail.push_back(continuation[t]);
        if (tail.size() > w) tail.erase(tail.begin());
    }
}

}  // namespace

std::size_t FeatureMap::operator()(std::span<const TokenId> prefix) const {
    std::uint64_t h = hash_combine(seed, window);
    const std::size_t n = prefix.size();
    for (std::size_t i = 0; i < window; ++i) {
        const std::size_t back = window - i;  // distance from the end
        const std::uint64_t token = back <= n ? static_cast<std::uint64_t>(prefix[n - back]) + 1 : 0;
        h = hash_combine(h, token);
    }
    return static_cast<std::size_t>(h % buckets);
}

PolicyParameters::PolicyParameters(FeatureMap features, std::size_t vocab_size)
    : features_(features), vocab_size_(vocab_size) {
    if (features_.window == 0) throw ConfigError("feature window must be at least 1");
    if (features_.buckets == 0) throw ConfigError("bucket count must be positive");
    if (vocab_size_ == 0) throw ConfigError("vocabulary must not be empty");
    theta_.assign(features_.buckets * vocab_size_, 0.0);
}

bool PolicyParameters::same_layout(const PolicyParameters& other) const {
    return features_ == other.features_ && vocab_size_ == other.vocab_size_;
}

bool PolicyParameters::all_finite() const {
    return std::all_of(theta_.begin(), theta_.end(), [](double v) { return std::isfinite(v); });
}

void PolicyParameters::apply(const Gradient& direction, double scale) {
    if (direction.size() != theta_.size() || direction.cols() != vocab_size_)
        throw ContractError("gradient layout does not match parameters");
    for (const auto& [r, values] : direction.rows())
        for (std::size_t i = 0; i < values.size(); ++i)
            if (!std::isfinite(theta_[r * vocab_size_ + i] + scale * values[i]))
                throw NumericError("update would make parameter " + std::to_string(r * vocab_size_ + i) +
                                   " non-finite");
    for (const auto& [r, values] : direction.rows())
        for (std::size_t i = 0; i < values.size(); ++i) theta_[r * vocab_size_ + i] += scale * values[i];
}

std::span<double> Gradient::row(std::size_t r) {
    if (r >= n_rows_) throw ContractError("gradient row out of range");
    auto it = rows_.find(r);
    if (it == rows_.end()) it = rows_.emplace(r, std::vector<double>(cols_, 0.0)).first;
    return it->second;
}

double Gradient::at(std::size_t index) const {
    if (index >= size()) throw ContractError("gradient index out of range");
    const auto it = rows_.find(index / cols_);
    return it == rows_.end() ? 0.0 : it->second[index % cols_];
}

std::vector<double> Gradient::dense() const {
    std::vector<double> out(size(), 0.0);
    for (const auto& [r, values] : rows_) std::copy(values.begin(), values.end(), out.begin() + r * cols_);
    return out;
}

void Gradient::add_scaled(const Gradient& other, double scale) {
    if (other.n_rows_ != n_rows_ || other.cols_ != cols_) throw ContractError("gradient layouts differ");
    for (const auto& [r, values] : other.rows_) {
        auto dst = row(r);
        for (std::size_t i = 0; i < cols_; ++i) dst[i] += scale * values[i];
    }
}

double Gradient::norm() const {
    double s = 0.0;
    for (const auto& [r, values] : rows_)
        for (double x : values) s += x * x;
    return std::sqrt(s);
}

bool Gradient::all_finite() const {
    for (const auto& [r, values] : rows_)
        for (double x : values)
            if (!std::isfinite(x)) return false;
    return true;
}

std::uint64_t PolicyParameters::digest() const {
    std::uint64_t h = hash_combine(features_.seed, features_.window);
    h = hash_combine(h, features_.buckets);
    h = hash_combine(h, vocab_size_);
    for (double v : theta_) h = hash_combine(h, std::bit_cast<std::uint64_t>(v));
    return h;
}

void PolicyParameters::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    write_le<std::uint32_t>(out, kCheckpointVersion);
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(features_.window));
    write_le<std::uint64_t>(out, features_.buckets);
    write_le<std::uint64_t>(out, vocab_size_);
    write_le<std::uint64_t>(out, features_.seed);
    // Rows of never-visited states stay exactly zero; only rows with a set bit are stored.
    std::vector<std::uint64_t> live;
    for (std::size_t f = 0; f < features_.buckets; ++f) {
        auto r = row(f);
        if (std::any_of(r.begin(), r.end(), [](double v) { return std::bit_cast<std::uint64_t>(v) != 0; }))
            live.push_back(f);
    }
    write_le<std::uint64_t>(out, live.size());
    for (auto f : live) {
        write_le<std::uint64_t>(out, f);
        for (double v : row(f)) write_le<double>(out, v);
    }
    if (!out) throw IoError("failed writing checkpoint " + path.string());
}

PolicyParameters PolicyParameters::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    char magic[8];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
        throw SchemaError(path.string() + " is not a policy checkpoint");
    if (read_le<std::uint32_t>(in) != kCheckpointVersion) throw SchemaError("unsupported checkpoint version");
    FeatureMap fm;
    fm.window = read_le<std::uint32_t>(in);
    fm.buckets = read_le<std::uint64_t>(in);
    const auto vocab = read_le<std::uint64_t>(in);
    fm.seed = read_le<std::uint64_t>(in);
    if (fm.window == 0 || fm.buckets == 0 || vocab == 0 || fm.buckets > (std::uint64_t{1} << 32) / vocab)
        throw SchemaError("implausible checkpoint layout");
    PolicyParameters params(fm, vocab);
    const auto n_rows = read_le<std::uint64_t>(in);
    if (n_rows > fm.buckets) throw SchemaError("checkpoint row count exceeds buckets");
    std::uint64_t prev = 0;
    for (std::uint64_t i = 0; i < n_rows; ++i) {
        const auto f = read_le<std::uint64_t>(in);
        if (f >= fm.buckets || (i > 0 && f <= prev)) throw SchemaError("checkpoint rows out of order");
        prev = f;
        for (double& v : params.row(f)) v = read_le<double>(in);
    }
    if (in.peek() != std::char_traits<char>::eof()) throw SchemaError("trailing bytes in checkpoint");
    return params;
}

void log_softmax(std::span<const double> logits, std::span<double> out) {
    const double m = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - m);
    const double log_z = m + std::log(z);
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - log_z;
}

std::vector<std::size_t> visited_features(const PolicyParameters& params, std::span<const TokenId> context,
                                          std::span<const TokenId> continuation) {
    std::vector<std::size_t> out;
    out.reserve(continuation.size());
    for_each_state(params, context, continuation, [&](std::size_t f, TokenId) { out.push_back(f); });
    return out;
}

std::vector<double> token_log_probs(const PolicyParameters& params, std::span<const TokenId> context,
                                    std::span<const TokenId> continuation) {
    if (continuation.empty()) throw ContractError("continuation must not be empty");
    check_tokens(params, context);
    check_tokens(params, continuation);
    std::vector<double> lp(params.vocab_size());
    std::vector<double> out;
    out.reserve(continuation.size());
    for_each_state(params, context, continuation, [&](std::size_t f, TokenId next) {
        log_softmax(params.row(f), lp);
        out.push_back(lp[next]);
    });
    return out;
}

double log_prob(const PolicyParameters& params, std::span<const TokenId> context,
                std::span<const TokenId> continuation) {
    double total = 0.0;
    for (double v : token_log_probs(params, context, continuation)) total += v;
    return total;
}

double log_prob_and_grad(const PolicyParameters& params, std::span<const TokenId> context,
                         std::span<const TokenId> continuation, double weight, Gradient& grad) {
    if (continuation.empty()) throw ContractError("continuation must not be empty");
    if (grad.size() != params.size()) throw ContractError("gradient layout does not match parameters");
    check_tokens(params, context);
    check_tokens(params, continuation);
    const std::size_t v = params.vocab_size();
    std::vector<double> lp(v);
    double total = 0.0;
    for_each_state(params, context, continuation, [&](std::size_t f, TokenId next) {
        log_softmax(params.row(f), lp);
        total += lp[next];
        auto g = grad.row(f);
        for (std::size_t i = 0; i < v; ++i) g[i] -= weight * std::exp(lp[i]);
        g[next] += weight;
    });
    return total;
}

namespace {

template <class Choose>
Sampled decode(const PolicyParameters& params, std::span<const TokenId> context, std::size_t max_len, TokenId stop,
               Choose&& choose) {
    if (max_len == 0) throw ContractError("max_len must be at least 1");
    check_tokens(params, context);
    const std::size_t w = params.features().window;
    std::vector<TokenId> tail(context.end() - std::min(context.size(), w), context.end());
    std::vector<double> lp(params.vocab_size());
    Sampled out;
    while (out.tokens.size() < max_len) {
        log_softmax(params.row(params.features()(tail)), lp);
        const TokenId next = choose(lp);
        out.tokens.push_back(next);
        out.log_probs.push_back(lp[next]);
        if (next == stop) break;
        tail.push_back(next);
        if (tail.size() > w) tail.erase(tail.begin());
    }
    return out;
}

}  // namespace

Sampled sample(const PolicyParameters& params, std::span<const TokenId> context, Rng& rng, std::size_t max_len,
               TokenId stop) {
    return decode(params, context, max_len, stop, [&](const std::vector<double>& lp) {
        double u = rng.uniform();
        for (std::size_t i = 0; i < lp.size(); ++i) {
            u -= std::exp(lp[i]);
            if (u < 0.0) return static_cast<TokenId>(i);
        }
        // Rounding left a sliver of mass: fall back to the last token with non-zero probability.
        for (std::size_t i = lp.size(); i-- > 0;)
            if (std::exp(lp[i]) > 0.0) return static_cast<TokenId>(i);
        return static_cast<TokenId>(lp.size() - 1);
    });
}

Sampled greedy(const PolicyParameters& params, std::span<const TokenId> context, std::size_t max_len, TokenId stop) {
    return decode(params, context, max_len, stop, [](const std::vector<double>& lp) {
        return static_cast<TokenId>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    });
}

LossAndGrad sft_loss_and_grad(const PolicyParameters& params, std::span<const SftPair> batch) {
    if (batch.empty()) throw ContractError("SFT batch must not be empty");
    LossAndGrad out{0.0, params.zero_gradient()};
    // grad of the loss = -(grad of the log-likelihood)
    for (const auto& pair : batch) out.loss -= log_prob_and_grad(params, pair.context, pair.target, -1.0, out.grad);
    return out;
}

namespace {

double state_kl(std::span<const double> lp, std::span<const double> lq) {
    double kl = 0.0;
    for (std::size_t i = 0; i < lp.size(); ++i) {
        const double p = std::exp(lp[i]);
        if (p > 0.0) kl += p * (lp[i] - lq[i]);
    }
    return std::max(kl, 0.0);
}

}  // namespace

double kl_divergence(const PolicyParameters& p, const PolicyParameters& q, std::span<const std::size_t> states) {
    Gradient none;
    return kl_divergence_and_grad(p, q, states, 0.0, none);
}

double kl_divergence(const PolicyParameters& p, const PolicyParameters& q, std::span<const TokenSequence> states) {
    std::vector<std::size_t> rows;
    rows.reserve(states.size());
    for (const auto& s : states) {
        check_tokens(p, s);
        rows.push_back(p.features()(s));
    }
    return kl_divergence(p, q, rows);
}

double kl_divergence_and_grad(const PolicyParameters& p, const PolicyParameters& q,
                              std::span<const std::size_t> states, double weight, Gradient& grad) {
    if (!p.same_layout(q)) throw ContractError("KL between policies with different layouts");
    if (states.empty()) throw ContractError("KL needs at least one state");
    const bool want_grad = weight != 0.0;
    if (want_grad && grad.size() != p.size()) throw ContractError("gradient layout does not match parameters");
    const std::size_t v = p.vocab_size();
    std::vector<double> lp(v), lq(v);
    const double per_state = weight / static_cast<double>(states.size());
    double total = 0.0;
    for (std::size_t f : states) {
        if (f >= p.buckets()) throw ContractError("state row outside the parameter matrix");
        log_softmax(p.row(f), lp);
        log_softmax(q.row(f), lq);
        const double kl = state_kl(lp, lq);
        total += kl;
        if (!want_grad) continue;
        auto g = grad.row(f);
        for (std::size_t i = 0; i < v; ++i) {
            const double pi = std::exp(lp[i]);
            g[i] += per_state * pi * (lp[i] - lq[i] - kl);
        }
    }
    return total / static_cast<double>(states.size());
}

}  // namespace exgrpo
