#include "exgrpo/rewards.hpp"

#include <cmath>

#include "exgrpo/error.hpp"
#include "exgrpo/text.hpp"

namespace exgrpo {

void RewardConfig::validate() const {
    if (!(delta >= 0.0) || !std::isfinite(delta)) throw ConfigError("delta must be a finite value >= 0");
    if (!(nu >= 1.0) || !std::isfinite(nu)) throw ConfigError("nu must be a finite value >= 1");
    if (!(format_weight >= 0.0) || !std::isfinite(format_weight))
        throw ConfigError("format_weight must be a finite value >= 0");
}

nlohmann::json RewardBreakdown::to_json() const {
    return {{"r_outcome", r_outcome}, {"r_base", r_base},     {"dsu_fired", dsu_fired}, {"dsu_applied", dsu_applied},
            {"r_dsu", r_dsu},         {"r_format", r_format}, {"r_total", r_total}};
}

int outcome_reward(const DialogueTrajectory& trajectory, const Task& task) {
    return answers_match(trajectory.final_answer, task.answer_key) ? 1 : 0;
}

double dsu_bonus(double p_full, double p_partial, const RewardConfig& config) {
    if (!(p_full >= 0.0 && p_full <= 1.0 && p_partial >= 0.0 && p_partial <= 1.0))
        throw ContractError("success rates must lie in [0, 1]");
    return p_full > config.nu * p_partial ? config.delta : 0.0;
}

double success_rate(std::span<const DialogueTrajectory> group, const Task& task) {
    if (group.empty()) throw ContractError("success rate of an empty group");
    int correct = 0;
    for (const auto& t : group) correct += outcome_reward(t, task);
    return static_cast<double>(correct) / static_cast<double>(group.size());
}

RewardBreakdown total_reward(const DialogueTrajectory& trajectory, const Task& task, double p_full, double p_partial,
                             const RewardConfig& config, const Vocabulary* vocab) {
    if (trajectory.scenario != Scenario::full)
        throw ContractError("total reward is defined for full-dialogue trajectories only");
    RewardBreakdown r;
    r.r_outcome = outcome_reward(trajectory, task);
    r.r_base = r.r_outcome;
    r.dsu_fired = p_full > config.nu * p_partial;
    const double bonus = dsu_bonus(p_full, p_partial, config);
    r.dsu_applied = r.dsu_fired && r.r_outcome == 1;
    r.r_dsu = r.dsu_applied ? bonus : 0.0;
    r.r_total = r.r_base + r.r_dsu;
    if (config.format_weight > 0.0) {
        if (!vocab) throw ContractError("format reward needs the vocabulary");
        r.r_format = format_reward(trajectory, *vocab);
        r.r_total += config.format_weight * r.r_format;
    }
    return r;
}

int format_reward(const DialogueTrajectory& trajectory, const Vocabulary& vocab) {
    auto end = trajectory.final_response.end();
    if (!trajectory.final_response.empty() && trajectory.final_response.back() == vocab.eos()) --end;
    return has_single_think_span(vocab.decode(std::span<const TokenId>(trajectory.final_response.begin(), end))) ? 1
                                                                                                                   : 0;
}

}  // namespace exgrpo
