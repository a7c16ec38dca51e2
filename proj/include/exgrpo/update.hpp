#pragma once

#include <span>
#include <vector>

#include "exgrpo/dialogue.hpp"
#include "exgrpo/policy.hpp"
#include "exgrpo/rewards.hpp"

namespace exgrpo {

struct UpdateConfig {
    double epsilon = 0.2;
    double beta = 0.01;
    double lr = 1e-2;
    std::size_t G = 4;
    double sft_aux_weight = 0.1;
    double norm_floor = 1e-8;
    bool mean_only = false;  // subtract the group mean without dividing by the spread

    void validate() const;  // throws ConfigError
};

/// (r - mean) / max(population std, floor); a group whose std is below the floor maps to zeros.
std::vector<double> normalize_advantages(std::span<const double> rewards, double norm_floor, bool mean_only = false);

/// min(rho * U, clip(rho, 1 - eps, 1 + eps) * U)
double clipped_term(double ratio, double advantage, double epsilon);

/// True where the clipped branch is the active minimum, so no gradient flows through the ratio.
bool clip_active(double ratio, double advantage, double epsilon);

struct SurrogateResult {
    double objective = 0.0;  // surrogate - beta * kl
    double surrogate = 0.0;  // mean clipped term over the group
    double kl = 0.0;
    std::vector<double> ratios;
    Gradient grad;  // ascent direction of `objective`
};

/// Clipped ratio objective over one group of full-dialogue trajectories, ratios taken over the
/// final-response tokens, minus beta * KL(params || params_ref) over every student-generated
/// state of the group. With `clip` false the plain ratio term rho * U is used.
SurrogateResult surrogate_loss_and_grad(std::span<const DialogueTrajectory> trajectories,
                                        std::span<const double> advantages, const PolicyParameters& params,
                                        const PolicyParameters& params_old, const PolicyParameters& params_ref,
                                        const UpdateConfig& config, bool clip = true);

/// Mean over trajectories of the summed teacher-turn negative log-likelihood, each turn
/// conditioned on the context the student saw. ContractError on a turn with no teacher reasoning.
LossAndGrad sft_aux_loss_and_grad(std::span<const DialogueTrajectory> trajectories, const PolicyParameters& params,
                                  const StudentFormat& format);

/// One task's scored full-dialogue group.
struct GroupBatch {
    std::vector<DialogueTrajectory> trajectories;
    std::vector<RewardBreakdown> rewards;
    std::vector<double> advantages;
    double p_full = 0.0;
    double p_partial = 0.0;
};

struct UpdateReport {
    double mean_r_base = 0.0;
    double mean_r_total = 0.0;
    double dsu_rate = 0.0;  // share of groups whose bonus condition fired
    double kl = 0.0;
    double grad_norm = 0.0;
    double objective = 0.0;
    double aux_loss = 0.0;
};

/// theta += lr * (mean_g grad J_g - sft_aux_weight * mean_g grad L_aux,g). `params_old` is the
/// rollout snapshot, `params_ref` stays untouched. A non-finite step throws NumericError and
/// leaves `params` unchanged.
UpdateReport train_step(std::span<const GroupBatch> batch, PolicyParameters& params,
                        const PolicyParameters& params_old, const PolicyParameters& params_ref,
                        const StudentFormat& format, const UpdateConfig& config);

}  // namespace exgrpo
