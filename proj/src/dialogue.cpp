#include "exgrpo/dialogue.hpp"

#include <algorithm>
#include <numeric>

#include "exgrpo/error.hpp"
#include "exgrpo/text.hpp"

namespace exgrpo {

StudentFormat::StudentFormat(const Vocabulary& vocab, std::size_t max_response_tokens)
    : vocab_(&vocab), max_response_tokens_(max_response_tokens) {
    if (max_response_tokens_ == 0) throw ConfigError("max_response_tokens must be positive");
}

std::string StudentFormat::question_prompt(const std::string& question) { return "question : " + question; }

std::string StudentFormat::probe_prompt(const std::string& q_aug) { return "probe : " + q_aug; }

TokenSequence StudentFormat::target(const ReasoningTrace& reasoning, const std::string& answer) const {
    TokenSequence out = vocab_->encode_lenient(render_response(reasoning, answer));
    out.push_back(vocab_->eos());
    return out;
}

std::string StudentFormat::response_text(const TokenSequence& tokens) const {
    auto end = tokens.end();
    if (!tokens.empty() && tokens.back() == vocab_->eos()) --end;
    return vocab_->decode(std::span<const TokenId>(tokens.begin(), end));
}

Sampled StudentFormat::sample_response(const PolicyParameters& params, const TokenSequence& context,
                                       Rng& rng) const {
    return sample(params, context, rng, max_response_tokens_, vocab_->eos());
}

Sampled StudentFormat::greedy_response(const PolicyParameters& params, const TokenSequence& context) const {
    return greedy(params, context, max_response_tokens_, vocab_->eos());
}

std::string StudentFormat::greedy_answer(const PolicyParameters& params, const std::string& prompt) const {
    return extract_answer(response_text(greedy_response(params, encode(prompt)).tokens));
}

std::string scenario_name(Scenario s) { return s == Scenario::full ? "full" : "partial"; }

void DialoguePlan::validate() const {
    if (full_rules.size() > kNumRules) throw ContractError("a dialogue cannot use more than ten rules");
    if (!full_rules.empty() && partial_rules.size() >= full_rules.size())
        throw ContractError("partial dialogue must be shorter than the full dialogue");
    std::vector<bool> seen(kNumRules, false);
    for (RuleId r : full_rules) {
        if (!is_valid_rule(r)) throw ContractError("invalid rule in plan");
        if (seen[rule_index(r)]) throw ContractError("rule " + rule_name(r) + " repeated in plan");
        seen[rule_index(r)] = true;
    }
    std::size_t pos = 0;
    for (RuleId r : partial_rules) {
        while (pos < full_rules.size() && full_rules[pos] != r) ++pos;
        if (pos == full_rules.size())
            throw ContractError("partial rule " + rule_name(r) + " is not an ordered subset of the full rules");
        ++pos;
    }
}

DialoguePlan sample_rules(std::size_t n_rules, std::size_t k, std::size_t k_prime, Rng& rng, std::string task_id) {
    if (n_rules > kNumRules) throw ContractError("at most ten rules exist");
    if (!(1 <= k_prime && k_prime < k && k <= n_rules))
        throw ContractError("need 1 <= k' < k <= N, got k'=" + std::to_string(k_prime) + " k=" + std::to_string(k) +
                            " N=" + std::to_string(n_rules));
    std::vector<RuleId> pool;
    for (std::size_t i = 0; i < n_rules; ++i) pool.push_back(rule_from_index(i));
    for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.below(n_rules - i)]);

    DialoguePlan plan;
    plan.task_id = std::move(task_id);
    plan.full_rules.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));

    std::vector<std::size_t> idx(k);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < k_prime; ++i) std::swap(idx[i], idx[i + rng.below(k - i)]);
    std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k_prime));
    for (std::size_t i = 0; i < k_prime; ++i) plan.partial_rules.push_back(plan.full_rules[idx[i]]);
    return plan;
}

namespace {

void append(TokenSequence& dst, const TokenSequence& src) { dst.insert(dst.end(), src.begin(), src.end()); }

TokenSequence without_eos(const TokenSequence& tokens, TokenId eos) {
    TokenSequence out = tokens;
    if (!out.empty() && out.back() == eos) out.pop_back();
    return out;
}

}  // namespace

RolloutGroup rollout(const Task& task, const DialoguePlan& plan, Scenario scenario, const PolicyParameters& params,
                     TeacherOracle& oracle, const StudentFormat& format, RolloutSeed seed, std::size_t G) {
    if (G < 2) throw ContractError("a rollout group needs G >= 2");
    plan.validate();
    const auto& rules = plan.rules(scenario);
    const auto& vocab = format.vocab();
    const std::uint64_t base = hash_combine(hash_combine(hash_combine(seed.run, seed.step), hash_string(task.id)),
                                            static_cast<std::uint64_t>(scenario));
    RolloutGroup group;
    for (std::size_t g = 1; g <= G; ++g) {
        Rng rng(hash_combine(base, g));
        DialogueTrajectory traj;
        traj.plan = plan;
        traj.scenario = scenario;
        traj.group_index = g;
        TokenSequence history;
        try {
            for (std::size_t j = 0; j < rules.size(); ++j) {
                AugmentedTuple probe = oracle.generate_probe(task, rules[j]);
                Turn turn;
                turn.rule = rules[j];
                turn.q_aug = probe.q_aug;
                append(history, format.encode("probe " + std::to_string(j + 1) + " : " + probe.q_aug));
                turn.context = history;
                Sampled s = format.sample_response(params, history, rng);
                turn.response = s.tokens;
                turn.log_probs = std::move(s.log_probs);
                const std::string text = format.response_text(turn.response);
                turn.student_reasoning = extract_reasoning(text);
                turn.student_answer = extract_answer(text);
                turn.teacher_reasoning = std::move(probe.r_aug);
                turn.teacher_answer = std::move(probe.a_aug);
                append(history, without_eos(turn.response, vocab.eos()));
                traj.turns.push_back(std::move(turn));
            }
        } catch (const Error& e) {
            group.failures.push_back({g, e.what()});
            continue;
        }
        append(history, format.encode("original " + StudentFormat::question_prompt(task.question)));
        traj.final_context = history;
        Sampled s = format.sample_response(params, history, rng);
        traj.final_response = s.tokens;
        traj.final_log_probs = std::move(s.log_probs);
        const std::string text = format.response_text(traj.final_response);
        traj.final_reasoning = extract_reasoning(text);
        traj.final_answer = extract_answer(text);
        group.trajectories.push_back(std::move(traj));
    }
    if (group.trajectories.size() < 2) {
        std::string why = "only " + std::to_string(group.trajectories.size()) + " of " + std::to_string(G) +
                          " trajectories survived for task " + task.id;
        if (!group.failures.empty()) why += ": " + group.failures.front().reason;
        throw OracleError(why);
    }
    return group;
}

nlohmann::json trajectory_to_json(const DialogueTrajectory& t, const StudentFormat& format,
                                  const nlohmann::json& reward) {
    nlohmann::json turns = nlohmann::json::array();
    for (const auto& turn : t.turns)
        turns.push_back({{"rule_id", rule_name(turn.rule)},
                         {"probe", turn.q_aug},
                         {"student_response", format.response_text(turn.response)},
                         {"student_answer", turn.student_answer},
                         {"teacher_reasoning", turn.teacher_reasoning.steps()},
                         {"teacher_answer", turn.teacher_answer}});
    return {{"task_id", t.plan.task_id},
            {"scenario", scenario_name(t.scenario)},
            {"g", t.group_index},
            {"turns", std::move(turns)},
            {"final_response", format.response_text(t.final_response)},
            {"final_answer", t.final_answer},
            {"reward", reward}};
}

}  // namespace exgrpo
