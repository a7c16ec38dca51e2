#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "exgrpo/dialogue.hpp"
#include "exgrpo/policy.hpp"
#include "exgrpo/rng.hpp"

namespace fx {

inline std::filesystem::path fresh_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "exgrpo_unit" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream(p, std::ios::binary) << text;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// theta entries uniform in [-scale, scale).
inline void randomize(exgrpo::PolicyParameters& params, std::uint64_t seed, double scale) {
    exgrpo::Rng rng(seed);
    for (double& v : params.theta()) v = scale * (2.0 * rng.uniform() - 1.0);
}

inline exgrpo::PolicyParameters random_policy(std::size_t vocab, std::size_t buckets, std::uint64_t seed,
                                              double scale = 1.0, std::size_t window = 4) {
    exgrpo::PolicyParameters p(exgrpo::FeatureMap{window, buckets, seed}, vocab);
    randomize(p, seed ^ 0x5eed, scale);
    return p;
}

/// |a - b| relative to the larger magnitude, floored so coordinates whose true value is
/// zero are judged on an absolute scale.
inline double rel_err(double analytic, double numeric, double floor = 1e-6) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline exgrpo::DialogueTrajectory final_only(const std::string& answer,
                                             exgrpo::Scenario s = exgrpo::Scenario::full) {
    exgrpo::DialogueTrajectory t;
    t.scenario = s;
    t.final_answer = answer;
    return t;
}

}  // namespace fx

#include "exgrpo/probes.hpp"
#include "exgrpo/synth.hpp"

namespace fx {

/// Synthetic vocabulary, student format and scripted teacher for rollout-level tests.
struct World {
    exgrpo::Vocabulary vocab = exgrpo::synthetic_vocabulary();
    exgrpo::StudentFormat format{vocab, 12};
    exgrpo::ScriptedTeacher teacher{exgrpo::SyntheticTaskSpec{}};
    exgrpo::Task task = exgrpo::make_forward_task(5, exgrpo::Op::minus, 2, "apples");

    World() = default;
    World(const World&) = delete;
    World& operator=(const World&) = delete;

    exgrpo::PolicyParameters policy(std::uint64_t seed, double scale = 1.0, std::size_t buckets = 512) const {
        return random_policy(vocab.size(), buckets, seed, scale);
    }

    exgrpo::DialoguePlan plan(std::uint64_t seed, std::size_t k = 5, std::size_t k_prime = 2) const {
        exgrpo::Rng rng(seed);
        return exgrpo::sample_rules(exgrpo::kNumRules, k, k_prime, rng, task.id);
    }

    exgrpo::RolloutGroup roll(const exgrpo::PolicyParameters& p, const exgrpo::DialoguePlan& plan,
                              exgrpo::Scenario s = exgrpo::Scenario::full, std::uint64_t step = 0,
                              std::size_t G = 4) {
        return exgrpo::rollout(task, plan, s, p, teacher, format, {7, step}, G);
    }
};

}  // namespace fx
