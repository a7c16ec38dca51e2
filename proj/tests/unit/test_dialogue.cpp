#include <algorithm>
#include <set>

#include "doctest.h"
#include "exgrpo/dialogue.hpp"
#include "exgrpo/error.hpp"
#include "fixtures.hpp"

using namespace exgrpo;

namespace {

bool starts_with(const TokenSequence& s, const TokenSequence& prefix) {
    return s.size() >= prefix.size() && std::equal(prefix.begin(), prefix.end(), s.begin());
}

bool ends_with(const TokenSequence& s, const TokenSequence& suffix) {
    return s.size() >= suffix.size() && std::equal(suffix.rbegin(), suffix.rend(), s.rbegin());
}

TokenSequence strip_eos(TokenSequence s, TokenId eos) {
    if (!s.empty() && s.back() == eos) s.pop_back();
    return s;
}

/// Teacher whose probe generation fails on every call numbered in `fail_calls`.
class FlakyTeacher final : public TeacherOracle {
public:
    FlakyTeacher(TeacherOracle& inner, std::set<int> fail_calls) : inner_(inner), fail_(std::move(fail_calls)) {}
    AugmentedTuple generate_probe(const Task& t, RuleId r) override {
        if (fail_.count(calls_++)) throw OracleError("flaky");
        return inner_.generate_probe(t, r);
    }
    TeacherAnswer answer_probe(const std::string& q, const std::string& c) override { return inner_.answer_probe(q, c); }
    std::string predict_answer(const std::string& p) override { return inner_.predict_answer(p); }

private:
    TeacherOracle& inner_;
    std::set<int> fail_;
    int calls_ = 0;
};

}  // namespace

TEST_CASE("sample_rules shapes and constraints") {
    Rng rng(1);
    auto p = sample_rules(10, 5, 2, rng, "t");
    CHECK(p.k() == 5);
    CHECK(std::set<RuleId>(p.full_rules.begin(), p.full_rules.end()).size() == 5);
    CHECK(p.k_prime() == 2);

    auto all = sample_rules(10, 10, 3, rng);
    auto sorted = all.full_rules;
    std::sort(sorted.begin(), sorted.end());
    const auto every = all_rules();
    CHECK(sorted == std::vector<RuleId>(every.begin(), every.end()));

    CHECK_THROWS_AS(sample_rules(10, 5, 5, rng), ContractError);
    CHECK_THROWS_AS(sample_rules(10, 11, 2, rng), ContractError);
    CHECK_THROWS_AS(sample_rules(10, 5, 0, rng), ContractError);
}

TEST_CASE("partial rules are an order-preserving subset of the full rules") {
    Rng rng(5);
    for (int i = 0; i < 2000; ++i) {
        const std::size_t k = 2 + rng.below(9), kp = 1 + rng.below(k - 1);
        auto p = sample_rules(10, k, kp, rng);
        p.validate();
        std::size_t pos = 0;
        for (RuleId r : p.partial_rules) {
            auto it = std::find(p.full_rules.begin() + pos, p.full_rules.end(), r);
            REQUIRE(it != p.full_rules.end());
            pos = static_cast<std::size_t>(it - p.full_rules.begin()) + 1;
        }
    }
}

TEST_CASE("rule inclusion frequency is k/N") {
    Rng rng(77);
    std::vector<int> hits(kNumRules, 0);
    const int n = 10000;
    for (int i = 0; i < n; ++i)
        for (RuleId r : sample_rules(10, 5, 2, rng).full_rules) ++hits[rule_index(r)];
    for (int h : hits) CHECK(std::abs(double(h) / n - 0.5) < 0.02);
}

TEST_CASE("first-position rule is uniform (chi-square, alpha 0.01)") {
    Rng rng(123);
    std::vector<int> first(kNumRules, 0);
    const int n = 1000;
    for (int i = 0; i < n; ++i) ++first[rule_index(sample_rules(10, 5, 2, rng).full_rules.front())];
    double chi2 = 0;
    for (int c : first) chi2 += (c - n / 10.0) * (c - n / 10.0) / (n / 10.0);
    CHECK(chi2 < 21.666);  // chi-square 0.99 quantile, 9 degrees of freedom
}

TEST_CASE("rollout turn counts and log-prob alignment") {
    fx::World w;
    auto p = w.policy(3);
    auto plan = w.plan(9);
    for (Scenario s : {Scenario::full, Scenario::partial}) {
        auto group = w.roll(p, plan, s);
        REQUIRE(group.trajectories.size() == 4);
        for (std::size_t g = 0; g < group.trajectories.size(); ++g) {
            const auto& t = group.trajectories[g];
            CHECK(t.turns.size() == (s == Scenario::full ? 5u : 2u));
            CHECK(t.group_index == g + 1);
            CHECK(t.final_log_probs.size() == t.final_response.size());
            CHECK(t.final_log_probs == token_log_probs(p, t.final_context, t.final_response));
            for (const auto& turn : t.turns) {
                CHECK(turn.log_probs.size() == turn.response.size());
                CHECK_FALSE(turn.teacher_reasoning.empty());
            }
        }
    }
    CHECK_THROWS_AS(w.roll(p, plan, Scenario::full, 0, 1), ContractError);
}

TEST_CASE("rollout contexts accumulate the dialogue history") {
    fx::World w;
    auto p = w.policy(4);
    auto plan = w.plan(2);
    const TokenId eos = w.vocab.eos();
    for (const auto& t : w.roll(p, plan).trajectories) {
        TokenSequence expected;
        for (std::size_t j = 0; j < t.turns.size(); ++j) {
            const auto& turn = t.turns[j];
            if (j > 0) {
                const auto& prev = t.turns[j - 1];
                TokenSequence prefix = prev.context;
                auto r = strip_eos(prev.response, eos);
                prefix.insert(prefix.end(), r.begin(), r.end());
                CHECK(starts_with(turn.context, prefix));
                CHECK(turn.context.size() > prefix.size());
            }
            auto label = w.format.encode("probe " + std::to_string(j + 1) + " : " + turn.q_aug);
            expected.insert(expected.end(), label.begin(), label.end());
            CHECK(turn.context == expected);
            auto r = strip_eos(turn.response, eos);
            expected.insert(expected.end(), r.begin(), r.end());
        }
        CHECK(starts_with(t.final_context, expected));
        CHECK(ends_with(t.final_context, w.format.encode("original question : " + w.task.question)));
        const std::string text = w.vocab.decode(t.final_context);
        std::size_t pos = 0;
        for (const auto& turn : t.turns) {
            pos = text.find(turn.q_aug, pos);
            REQUIRE(pos != std::string::npos);
        }
    }
}

TEST_CASE("rollout determinism and saturated policies") {
    fx::World w;
    auto p = w.policy(5);
    auto plan = w.plan(3);
    auto a = w.roll(p, plan, Scenario::full, 11), b = w.roll(p, plan, Scenario::full, 11);
    for (std::size_t g = 0; g < 4; ++g) CHECK(a.trajectories[g].final_response == b.trajectories[g].final_response);

    PolicyParameters sat(FeatureMap{4, 64, 0}, w.vocab.size());
    for (std::size_t f = 0; f < sat.buckets(); ++f) sat.row(f)[w.vocab.id("7")] = 1e6;
    auto group = w.roll(sat, plan);
    for (const auto& t : group.trajectories) {
        CHECK(t.final_response == group.trajectories[0].final_response);
        for (std::size_t j = 0; j < t.turns.size(); ++j)
            CHECK(t.turns[j].response == group.trajectories[0].turns[j].response);
    }
}

TEST_CASE("teacher failures shrink the group") {
    fx::World w;
    auto p = w.policy(6);
    auto plan = w.plan(4, 3, 1);
    FlakyTeacher one_bad(w.teacher, {0});  // first trajectory's first probe
    auto group = rollout(w.task, plan, Scenario::full, p, one_bad, w.format, {1, 0}, 4);
    CHECK(group.trajectories.size() == 3);
    REQUIRE(group.failures.size() == 1);
    CHECK(group.failures[0].group_index == 1);
    CHECK(group.trajectories[0].group_index == 2);

    FlakyTeacher mostly_bad(w.teacher, {0, 3, 6});
    CHECK_THROWS_AS(rollout(w.task, plan, Scenario::full, p, mostly_bad, w.format, {1, 0}, 4), OracleError);
}

TEST_CASE("trajectory dump record") {
    fx::World w;
    auto p = w.policy(1);
    auto t = w.roll(p, w.plan(1)).trajectories[0];
    auto j = trajectory_to_json(t, w.format, {{"r_total", 1.0}});
    CHECK(j["task_id"] == w.task.id);
    CHECK(j["scenario"] == "full");
    CHECK(j["g"] == 1);
    CHECK(j["turns"].size() == 5);
    CHECK(j["reward"]["r_total"] == 1.0);
}
