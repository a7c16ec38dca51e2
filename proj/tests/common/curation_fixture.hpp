#pragma once

#include <map>
#include <set>
#include <string>
#include <utility>

#include "exgrpo/curation.hpp"
#include "exgrpo/probes.hpp"
#include "exgrpo/rng.hpp"
#include "exgrpo/synth.hpp"

namespace fixture {

inline constexpr std::string_view kPoison = "poison";

/// Scripted teacher whose consistency check fails exactly on probes carrying the poison marker.
/// Which (task, rule) probes get the marker is fixed up front.
class PoisonTeacher final : public exgrpo::TeacherOracle {
public:
    explicit PoisonTeacher(std::set<std::pair<std::string, exgrpo::RuleId>> poisoned)
        : inner_(exgrpo::SyntheticTaskSpec{}), poisoned_(std::move(poisoned)) {}

    exgrpo::AugmentedTuple generate_probe(const exgrpo::Task& task, exgrpo::RuleId rule) override {
        auto p = inner_.generate_probe(task, rule);
        if (poisoned_.count({task.id, rule})) p.q_aug = std::string(kPoison) + " " + p.q_aug;
        return p;
    }
    exgrpo::TeacherAnswer answer_probe(const std::string& q, const std::string& ctx) override {
        return inner_.answer_probe(q, ctx);
    }
    std::string predict_answer(const std::string& prompt) override {
        const auto truth = inner_.predict_answer(prompt);
        return prompt.find(kPoison) == std::string::npos ? truth : truth + "0";
    }

private:
    exgrpo::ScriptedTeacher inner_;
    std::set<std::pair<std::string, exgrpo::RuleId>> poisoned_;
};

/// A random curation instance. Consistency is fixed per (task, rule); baseline correctness is a
/// seeded function of the probe text, since distinct tasks can share a probe text.
struct Instance {
    std::vector<exgrpo::Task> tasks;
    std::vector<exgrpo::RuleId> rules;
    int tau_hard = 1;
    std::set<std::pair<std::string, exgrpo::RuleId>> poisoned;
    std::uint64_t salt = 0;
    double p_correct = 0.5;

    bool baseline_correct(const std::string& q_aug) const {
        const auto h = exgrpo::hash_combine(salt, exgrpo::hash_string(q_aug));
        return static_cast<double>(h >> 11) * 0x1.0p-53 < p_correct;
    }

    /// Greedy-student stand-in for the rejective filter.
    exgrpo::AnswerFn baseline() const {
        return [this](const std::string& q) -> std::string {
            const auto truth = std::to_string(exgrpo::parse_cue(q)->value());
            return baseline_correct(q) ? truth : truth + "1";
        };
    }
};

inline Instance random_instance(std::uint64_t seed) {
    exgrpo::Rng rng(seed);
    Instance inst;
    exgrpo::SyntheticTaskSpec spec;
    spec.seed = seed;
    spec.n_tasks = 1 + rng.below(6);
    inst.tasks = exgrpo::generate_tasks(spec);
    for (exgrpo::RuleId r : exgrpo::all_rules())
        if (rng.bernoulli(0.6)) inst.rules.push_back(r);
    if (inst.rules.empty()) inst.rules.push_back(exgrpo::RuleId::R1);
    inst.tau_hard = 1 + static_cast<int>(rng.below(3));
    const double p_poison = rng.uniform();
    inst.p_correct = rng.uniform();
    inst.salt = rng.next();
    for (const auto& t : inst.tasks)
        for (exgrpo::RuleId r : inst.rules)
            if (rng.bernoulli(p_poison)) inst.poisoned.insert({t.id, r});
    return inst;
}

// Keep iff some consistent probe exists, the baseline is not perfect on them, and it answers
// at least tau_hard of them.
inline bool keep_oracle(int n_prime, int lambda, int tau) {
    const bool too_easy = n_prime > 0 && lambda == n_prime;
    const bool too_hard = lambda < tau;
    return n_prime != 0 && !too_easy && !too_hard;
}

struct Expected {
    int n = 0, n_prime = 0, lambda = 0;
    bool kept = false;
};

/// Counts recomputed probe by probe from the instance's own definitions.
inline Expected brute_force(const Instance& inst, const exgrpo::Task& task) {
    PoisonTeacher teacher(inst.poisoned);
    Expected e;
    for (exgrpo::RuleId r : inst.rules) {
        ++e.n;
        if (inst.poisoned.count({task.id, r})) continue;
        ++e.n_prime;
        e.lambda += inst.baseline_correct(teacher.generate_probe(task, r).q_aug);
    }
    e.kept = keep_oracle(e.n_prime, e.lambda, inst.tau_hard);
    return e;
}

}  // namespace fixture
