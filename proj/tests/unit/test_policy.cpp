#include <cmath>
#include <map>
#include <set>

#include "doctest.h"
#include "exgrpo/error.hpp"
#include "exgrpo/policy.hpp"
#include "exgrpo/synth.hpp"
#include "fixtures.hpp"

using namespace exgrpo;

namespace {

TokenSequence random_tokens(Rng& rng, std::size_t n, std::size_t vocab) {
    TokenSequence s(n);
    for (auto& t : s) t = static_cast<TokenId>(rng.below(vocab));
    return s;
}

/// Flat indices of `count` random coordinates inside the rows `grad` touched.
std::vector<std::size_t> touched_coordinates(const Gradient& grad, Rng& rng, std::size_t count) {
    std::vector<std::size_t> rows;
    for (const auto& [r, v] : grad.rows()) rows.push_back(r);
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < count; ++i)
        out.push_back(rows[rng.below(rows.size())] * grad.cols() + rng.below(grad.cols()));
    return out;
}

template <class F>
double central_difference(PolicyParameters& params, std::size_t index, double h, F&& f) {
    const double saved = params.theta()[index];
    params.theta()[index] = saved + h;
    const double up = f();
    params.theta()[index] = saved - h;
    const double down = f();
    params.theta()[index] = saved;
    return (up - down) / (2 * h);
}

}  // namespace

TEST_CASE("log_prob analytic values") {
    PolicyParameters one(FeatureMap{4, 16, 0}, 1);
    TokenSequence zeros{0, 0, 0, 0};
    CHECK(log_prob(one, {}, zeros) == 0.0);

    PolicyParameters uniform(FeatureMap{4, 16, 0}, 4);
    TokenSequence cont{1, 3, 2};
    CHECK(log_prob(uniform, TokenSequence{0}, cont) == doctest::Approx(3 * std::log(0.25)).epsilon(1e-15));
    CHECK(std::abs(3 * std::log(0.25) - (-4.158883)) < 1e-6);

    TokenSequence bad{4};
    CHECK_THROWS_AS(log_prob(uniform, {}, bad), ContractError);
    CHECK_THROWS_AS(log_prob(uniform, {}, TokenSequence{}), ContractError);
}

TEST_CASE("log_prob chains over concatenated continuations and stays non-positive") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        auto p = fx::random_policy(7, 64, trial, 3.0);
        auto ctx = random_tokens(rng, rng.below(6), 7);
        auto a = random_tokens(rng, 1 + rng.below(5), 7);
        auto b = random_tokens(rng, 1 + rng.below(5), 7);
        TokenSequence ab = a, ctx_a = ctx;
        ab.insert(ab.end(), b.begin(), b.end());
        ctx_a.insert(ctx_a.end(), a.begin(), a.end());
        const double whole = log_prob(p, ctx, ab);
        CHECK(whole == doctest::Approx(log_prob(p, ctx, a) + log_prob(p, ctx_a, b)).epsilon(1e-12));
        CHECK(whole <= 0.0);
    }
}

TEST_CASE("per-state distributions sum to one") {
    auto p = fx::random_policy(9, 32, 3, 20.0);
    std::vector<double> lp(9);
    for (std::size_t f = 0; f < p.buckets(); ++f) {
        log_softmax(p.row(f), lp);
        double s = 0;
        for (double v : lp) s += std::exp(v);
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("sampling: saturation, determinism and 2-gram frequencies") {
    PolicyParameters sat(FeatureMap{4, 32, 0}, 5);
    for (std::size_t f = 0; f < sat.buckets(); ++f) sat.row(f)[2] = 1e6;
    Rng r0(1);
    auto s = sample(sat, TokenSequence{0}, r0, 6);
    CHECK(s.tokens == TokenSequence(6, 2));

    auto p = fx::random_policy(6, 64, 9);
    Rng a(42), b(42);
    for (int i = 0; i < 20; ++i) CHECK(sample(p, TokenSequence{1}, a, 8, 5).tokens == sample(p, TokenSequence{1}, b, 8, 5).tokens);

    PolicyParameters uniform(FeatureMap{4, 64, 0}, 4);
    Rng rng(2024);
    std::map<std::pair<int, int>, int> counts;
    const int n = 40000;
    for (int i = 0; i < n; ++i) {
        auto x = sample(uniform, TokenSequence{}, rng, 2);
        REQUIRE(x.tokens.size() == 2);
        ++counts[{x.tokens[0], x.tokens[1]}];
        CHECK(x.log_probs[0] == doctest::Approx(std::log(0.25)));
    }
    CHECK(counts.size() == 16);
    for (const auto& [k, c] : counts) CHECK(std::abs(double(c) / n - 1.0 / 16) < 0.01);
}

TEST_CASE("sampling stops at the stop token and greedy breaks ties low") {
    PolicyParameters p(FeatureMap{4, 32, 0}, 4);
    for (std::size_t f = 0; f < p.buckets(); ++f) p.row(f)[3] = 50.0;
    Rng rng(3);
    CHECK(sample(p, TokenSequence{0}, rng, 10, 3).tokens == TokenSequence{3});
    PolicyParameters flat(FeatureMap{4, 32, 0}, 4);
    CHECK(greedy(flat, TokenSequence{1}, 3).tokens == TokenSequence{0, 0, 0});
}

TEST_CASE("SFT loss: analytic value, finite differences and linearity") {
    PolicyParameters two(FeatureMap{4, 16, 0}, 2);
    std::vector<SftPair> one{{TokenSequence{0}, TokenSequence{1, 0, 1}}};
    auto lg = sft_loss_and_grad(two, one);
    CHECK(lg.loss == doctest::Approx(3 * std::log(2.0)).epsilon(1e-15));

    auto p = fx::random_policy(8, 64, 5, 1.5);
    Rng rng(8);
    std::vector<SftPair> batch;
    for (int i = 0; i < 4; ++i) batch.push_back({random_tokens(rng, 3, 8), random_tokens(rng, 5, 8)});
    auto res = sft_loss_and_grad(p, batch);
    double worst = 0;
    for (auto idx : touched_coordinates(res.grad, rng, 20)) {
        const double fd = central_difference(p, idx, 1e-5, [&] { return sft_loss_and_grad(p, batch).loss; });
        worst = std::max(worst, fx::rel_err(res.grad.at(idx), fd));
    }
    CHECK(worst < 1e-6);

    // rows outside the visited states carry no gradient
    std::set<std::size_t> visited;
    for (const auto& pair : batch)
        for (auto f : visited_features(p, pair.context, pair.target)) visited.insert(f);
    for (const auto& [r, v] : res.grad.rows()) CHECK(visited.count(r) == 1);

    std::vector<SftPair> twice{batch[0], batch[0]};
    std::vector<SftPair> once{batch[0]};
    auto g1 = sft_loss_and_grad(p, once), g2 = sft_loss_and_grad(p, twice);
    CHECK(g2.loss == 2 * g1.loss);
    auto d1 = g1.grad.dense(), d2 = g2.grad.dense();
    for (std::size_t i = 0; i < d1.size(); ++i) CHECK(d2[i] == 2 * d1[i]);
}

TEST_CASE("KL divergence") {
    auto p = fx::random_policy(4, 16, 1);
    std::vector<std::size_t> states{0, 3, 7};
    CHECK(kl_divergence(p, p, states) == 0.0);

    PolicyParameters det(FeatureMap{4, 16, 1}, 4), uni(FeatureMap{4, 16, 1}, 4);
    for (std::size_t f = 0; f < det.buckets(); ++f) det.row(f)[0] = 1e3;
    CHECK(kl_divergence(det, uni, states) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    for (std::uint64_t s = 0; s < 100; ++s) {
        auto a = fx::random_policy(5, 8, 7, 4.0), b = fx::random_policy(5, 8, 7, 4.0);
        fx::randomize(a, 2 * s, 4.0);
        fx::randomize(b, 2 * s + 1, 4.0);
        CHECK(kl_divergence(a, b, std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7}) >= 0.0);
    }

    PolicyParameters other(FeatureMap{4, 32, 1}, 4);
    CHECK_THROWS(kl_divergence(det, other, states));
    CHECK_THROWS(kl_divergence(det, uni, std::vector<std::size_t>{}));

    std::vector<TokenSequence> prefixes{{1, 2}, {3}};
    std::vector<std::size_t> rows{det.features()(prefixes[0]), det.features()(prefixes[1])};
    CHECK(kl_divergence(det, uni, prefixes) == kl_divergence(det, uni, rows));
}

TEST_CASE("KL gradient against finite differences") {
    auto p = fx::random_policy(6, 32, 2, 2.0), q = p;
    fx::randomize(q, 3, 2.0);
    std::vector<std::size_t> states{1, 5, 5, 9, 30};
    auto g = p.zero_gradient();
    const double kl = kl_divergence_and_grad(p, q, states, 0.7, g);
    CHECK(kl == doctest::Approx(kl_divergence(p, q, states)).epsilon(1e-14));
    Rng rng(4);
    double worst = 0;
    for (auto idx : touched_coordinates(g, rng, 20)) {
        const double fd = central_difference(p, idx, 1e-5, [&] { return 0.7 * kl_divergence(p, q, states); });
        worst = std::max(worst, fx::rel_err(g.at(idx), fd));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("snapshots are deep copies") {
    auto live = fx::random_policy(5, 16, 6);
    const auto snap = live;
    TokenSequence ctx{1, 2}, cont{3, 4};
    const double before = log_prob(snap, ctx, cont);
    auto g = live.zero_gradient();
    log_prob_and_grad(live, ctx, cont, 1.0, g);
    live.apply(g, 0.5);
    CHECK(log_prob(live, ctx, cont) > before);
    CHECK(log_prob(snap, ctx, cont) == before);
}

TEST_CASE("apply refuses non-finite steps") {
    auto p = fx::random_policy(3, 8, 1);
    const auto before = p.theta();
    auto g = p.zero_gradient();
    g.row(2)[1] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(p.apply(g, 1.0), NumericError);
    CHECK(p.theta() == before);
    Gradient wrong(4, 3);
    CHECK_THROWS(p.apply(wrong, 1.0));
}

TEST_CASE("checkpoint round trip and corruption") {
    auto dir = fx::fresh_dir("ckpt");
    auto p = fx::random_policy(11, 64, 21);
    for (std::size_t f = 0; f < 64; f += 3) std::fill(p.row(f).begin(), p.row(f).end(), 0.0);
    p.row(5)[0] = -0.0;
    p.save(dir / "a.ckpt");
    auto q = PolicyParameters::load(dir / "a.ckpt");
    CHECK(q == p);
    CHECK(q.digest() == p.digest());
    CHECK(q.features() == p.features());

    auto bytes = fx::read_file(dir / "a.ckpt");
    fx::write_file(dir / "trail.ckpt", bytes + "x");
    CHECK_THROWS_AS(PolicyParameters::load(dir / "trail.ckpt"), SchemaError);
    fx::write_file(dir / "short.ckpt", bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS(PolicyParameters::load(dir / "short.ckpt"));
    auto magic = bytes;
    magic[0] = 'X';
    fx::write_file(dir / "magic.ckpt", magic);
    CHECK_THROWS_AS(PolicyParameters::load(dir / "magic.ckpt"), SchemaError);
    CHECK_THROWS_AS(PolicyParameters::load(dir / "missing.ckpt"), IoError);
}

TEST_CASE("vocabulary") {
    auto v = synthetic_vocabulary();
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(v.id(v.token(static_cast<TokenId>(i))) == TokenId(i));
    CHECK(v.contains("<think>"));
    CHECK(v.contains("</think>"));
    CHECK(v.contains("<eos>"));
    CHECK(v.decode(v.encode("5 minus 2")) == "5 minus 2");
    CHECK_THROWS_AS(v.encode("zebra"), SchemaError);
    CHECK(v.encode_lenient("zebra 5") == TokenSequence{v.id("<unk>"), v.id("5")});
    CHECK_THROWS_AS(Vocabulary({"a", "a"}), SchemaError);
}
