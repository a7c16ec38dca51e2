#include "exgrpo/update.hpp"

#include <algorithm>
#include <cmath>

#include "exgrpo/error.hpp"

namespace exgrpo {

void UpdateConfig::validate() const {
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("epsilon must lie in (0, 1)");
    if (!(beta >= 0.0)) throw ConfigError("beta must be >= 0");
    if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
    if (G < 2) throw ConfigError("G must be at least 2");
    if (!(sft_aux_weight >= 0.0)) throw ConfigError("sft_aux_weight must be >= 0");
    if (!(norm_floor > 0.0)) throw ConfigError("norm_floor must be > 0");
}

std::vector<double> normalize_advantages(std::span<const double> rewards, double norm_floor, bool mean_only) {
    if (rewards.size() < 2) throw ContractError("advantage normalization needs at least two rewards");
    const double n = static_cast<double>(rewards.size());
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= n;
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    const double sd = std::sqrt(var / n);
    std::vector<double> out(rewards.size(), 0.0);
    if (sd < norm_floor) return out;
    const double scale = mean_only ? 1.0 : sd;
    for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mean) / scale;
    return out;
}

double clipped_term(double ratio, double advantage, double epsilon) {
    const double clipped = std::clamp(ratio, 1.0 - epsilon, 1.0 + epsilon);
    return std::min(ratio * advantage, clipped * advantage);
}

bool clip_active(double ratio, double advantage, double epsilon) {
    return (advantage > 0.0 && ratio > 1.0 + epsilon) || (advantage < 0.0 && ratio < 1.0 - epsilon);
}

namespace {

std::vector<std::size_t> generated_states(const PolicyParameters& params, const DialogueTrajectory& t) {
    std::vector<std::size_t> states;
    for (const auto& turn : t.turns)
        if (!turn.response.empty()) {
            auto f = visited_features(params, turn.context, turn.response);
            states.insert(states.end(), f.begin(), f.end());
        }
    if (!t.final_response.empty()) {
        auto f = visited_features(params, t.final_context, t.final_response);
        states.insert(states.end(), f.begin(), f.end());
    }
    return states;
}

}  // namespace

SurrogateResult surrogate_loss_and_grad(std::span<const DialogueTrajectory> trajectories,
                                        std::span<const double> advantages, const PolicyParameters& params,
                                        const PolicyParameters& params_old, const PolicyParameters& params_ref,
                                        const UpdateConfig& config, bool clip) {
    if (trajectories.size() != advantages.size())
        throw ContractError("advantages do not align with trajectories");
    if (trajectories.empty()) throw ContractError("surrogate over an empty group");
    if (!params.same_layout(params_old) || !params.same_layout(params_ref))
        throw ContractError("policy snapshots have a different layout");
    SurrogateResult out;
    out.grad = params.zero_gradient();
    const double inv_g = 1.0 / static_cast<double>(trajectories.size());
    std::vector<std::size_t> states;
    for (std::size_t g = 0; g < trajectories.size(); ++g) {
        const auto& t = trajectories[g];
        if (t.scenario != Scenario::full) throw ContractError("surrogate takes full-dialogue trajectories only");
        if (t.final_response.empty()) throw ContractError("trajectory has no final response");
        const double u = advantages[g];
        const double lp_old = log_prob(params_old, t.final_context, t.final_response);
        Gradient lp_grad = params.zero_gradient();
        const double lp = log_prob_and_grad(params, t.final_context, t.final_response, 1.0, lp_grad);
        const double rho = std::exp(lp - lp_old);
        out.ratios.push_back(rho);
        out.surrogate += inv_g * (clip ? clipped_term(rho, u, config.epsilon) : rho * u);
        if (!(clip && clip_active(rho, u, config.epsilon)) && u != 0.0) out.grad.add_scaled(lp_grad, inv_g * u * rho);
        auto s = generated_states(params, t);
        states.insert(states.end(), s.begin(), s.end());
    }
    if (!states.empty()) out.kl = kl_divergence_and_grad(params, params_ref, states, -config.beta, out.grad);
    out.objective = out.surrogate - config.beta * out.kl;
    return out;
}

LossAndGrad sft_aux_loss_and_grad(std::span<const DialogueTrajectory> trajectories, const PolicyParameters& params,
                                  const StudentFormat& format) {
    LossAndGrad out{0.0, params.zero_gradient()};
    if (trajectories.empty()) return out;
    const double inv = 1.0 / static_cast<double>(trajectories.size());
    for (const auto& t : trajectories)
        for (const auto& turn : t.turns) {
            if (turn.teacher_reasoning.empty() || turn.teacher_answer.empty())
                throw ContractError("turn '" + turn.q_aug + "' has no teacher response");
            const TokenSequence target = format.target(turn.teacher_reasoning, turn.teacher_answer);
            out.loss -= inv * log_prob_and_grad(params, turn.context, target, -inv, out.grad);
        }
    return out;
}

UpdateReport train_step(std::span<const GroupBatch> batch, PolicyParameters& params,
                        const PolicyParameters& params_old, const PolicyParameters& params_ref,
                        const StudentFormat& format, const UpdateConfig& config) {
    config.validate();
    if (batch.empty()) throw ContractError("train_step needs at least one group");
    UpdateReport report;
    Gradient direction = params.zero_gradient();
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    std::size_t n_traj = 0, fired = 0;
    for (const auto& group : batch) {
        if (group.rewards.size() != group.trajectories.size())
            throw ContractError("rewards do not align with trajectories");
        auto s = surrogate_loss_and_grad(group.trajectories, group.advantages, params, params_old, params_ref, config);
        direction.add_scaled(s.grad, inv_b);
        report.objective += inv_b * s.objective;
        report.kl += inv_b * s.kl;
        if (config.sft_aux_weight > 0.0) {
            auto aux = sft_aux_loss_and_grad(group.trajectories, params, format);
            const double w = inv_b * config.sft_aux_weight;
            direction.add_scaled(aux.grad, -w);
            report.aux_loss += inv_b * aux.loss;
        }
        for (const auto& r : group.rewards) {
            report.mean_r_base += r.r_base;
            report.mean_r_total += r.r_total;
            ++n_traj;
        }
        if (!group.rewards.empty() && group.rewards.front().dsu_fired) ++fired;
    }
    report.mean_r_base /= static_cast<double>(n_traj);
    report.mean_r_total /= static_cast<double>(n_traj);
    report.dsu_rate = static_cast<double>(fired) / static_cast<double>(batch.size());
    report.grad_norm = direction.norm();
    if (!std::isfinite(report.grad_norm) || !std::isfinite(report.objective))
        throw NumericError("non-finite gradient (norm " + std::to_string(report.grad_norm) + ", objective " +
                           std::to_string(report.objective) + ")");
    params.apply(direction, config.lr);
    return report;
}

}  // namespace exgrpo
