#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "exgrpo/policy.hpp"
#include "exgrpo/rewards.hpp"
#include "exgrpo/synth.hpp"
#include "exgrpo/update.hpp"
#include "json.hpp"

namespace exgrpo {

inline std::vector<RuleId> every_rule() {
    const auto rules = all_rules();
    return {rules.begin(), rules.end()};
}

struct StageToggles {
    bool curate = true;
    bool sft = true;
    bool rl = true;
    bool eval = true;
};

struct EnvironmentConfig {
    SyntheticTaskSpec spec;
    double holdout_fraction = 0.3;
    SplitMode split = SplitMode::in_distribution;
    std::filesystem::path tasks_path;  // load tasks from here instead of generating them
};

struct TeacherConfig {
    std::string kind = "scripted";  // scripted | http
    double p_err = 0.0;
    std::string endpoint;
    std::string model = "gpt-4o-mini";
    std::string auth_env = "EXGRPO_API_KEY";
    std::filesystem::path replay_log;  // http: record here; replay from here when no endpoint is set
    std::string answer_delimiter = "The best answer is";
    int max_retries = 3;
};

/// The pre-distillation student: fitted on a random share of the environment's arithmetic facts.
struct BaseStudentConfig {
    double fact_fraction = 0.35;
    std::size_t epochs = 40;
    double lr = 0.5;
};

struct SftConfig {
    std::size_t epochs = 3;
    double lr = 4.0;
    std::size_t batch_size = 8;
};

struct RlConfig {
    std::size_t steps = 500;
    std::size_t tasks_per_step = 4;
    std::size_t k = 5;
    std::size_t k_prime = 2;
    bool dump_trajectories = false;
};

/// The featurized student moves in O(1) logit steps, so the pipeline's RL rate is far above
/// the library default.
inline UpdateConfig pipeline_update_defaults() {
    UpdateConfig u;
    u.lr = 4.0;
    return u;
}

struct RunConfig {
    std::uint64_t seed = 0;
    std::filesystem::path out_dir = "runs/default";
    StageToggles stages;
    EnvironmentConfig environment;
    TeacherConfig teacher;
    FeatureMap features{4, 262144, 0};  // seed is overwritten from `seed` when the run starts
    std::size_t max_response_tokens = 12;
    BaseStudentConfig base;
    int tau_hard = 1;
    std::vector<RuleId> rules = every_rule();
    SftConfig sft;
    RlConfig rl;
    RewardConfig reward;
    UpdateConfig update = pipeline_update_defaults();
    double smoothing_fraction = 0.05;

    void validate() const;  // throws ConfigError
    nlohmann::json to_json() const;
};

/// TOML-style file: top-level `seed`, `out_dir`, then sections [stages] [environment] [teacher]
/// [policy] [base] [curation] [sft] [dialogue] [reward] [update] [rl] [metrics]. Unknown keys
/// and ill-typed values raise ConfigError.
RunConfig parse_run_config(const std::string& text, RunConfig defaults = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig defaults = {});

}  // namespace exgrpo
