#pragma once

#include <span>

#include "exgrpo/dialogue.hpp"
#include "exgrpo/task.hpp"
#include "json.hpp"

namespace exgrpo {

struct RewardConfig {
    double delta = 0.1;  // bonus value; 0 disables the bonus (used for matched comparisons)
    double nu = 1.05;    // required margin of the full over the partial success rate
    double format_weight = 0.0;

    void validate() const;  // throws ConfigError
};

struct RewardBreakdown {
    int r_outcome = 0;
    double r_base = 0.0;
    bool dsu_fired = false;    // group-level condition p_full > nu * p_partial
    bool dsu_applied = false;  // fired and this trajectory is correct
    double r_dsu = 0.0;        // bonus value granted to this trajectory
    double r_format = 0.0;
    double r_total = 0.0;

    nlohmann::json to_json() const;
};

/// 1 iff the final answer canonically matches the task's answer key.
int outcome_reward(const DialogueTrajectory& trajectory, const Task& task);

/// delta when p_full > nu * p_partial (strict), else 0.
double dsu_bonus(double p_full, double p_partial, const RewardConfig& config);

/// Mean outcome reward over a group of trajectories for one task.
double success_rate(std::span<const DialogueTrajectory> group, const Task& task);

/// Full-dialogue trajectories only; ContractError otherwise. `vocab` is needed only when the
/// format reward is weighted in.
RewardBreakdown total_reward(const DialogueTrajectory& trajectory, const Task& task, double p_full, double p_partial,
                             const RewardConfig& config, const Vocabulary* vocab = nullptr);

/// 1 iff the final response has exactly one think span followed by an answer.
int format_reward(const DialogueTrajectory& trajectory, const Vocabulary& vocab);

}  // namespace exgrpo
