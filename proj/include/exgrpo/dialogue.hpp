#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "exgrpo/policy.hpp"
#include "exgrpo/probes.hpp"
#include "exgrpo/task.hpp"
#include "json.hpp"

namespace exgrpo {

/// Text layout the student sees and produces.
///
/// Prompts: "question : Q" for a plain question, "probe : q" for a probe on its own,
/// "probe j : q response ... original question : Q" inside a dialogue. Responses are
/// "<think> reasoning </think> answer <eos>".
class StudentFormat {
public:
    explicit StudentFormat(const Vocabulary& vocab, std::size_t max_response_tokens = 12);

    const Vocabulary& vocab() const noexcept { return *vocab_; }
    std::size_t max_response_tokens() const noexcept { return max_response_tokens_; }

    static std::string question_prompt(const std::string& question);
    static std::string probe_prompt(const std::string& q_aug);

    TokenSequence encode(const std::string& text) const { return vocab_->encode_lenient(text); }
    /// Response tokens for a teacher turn, end marker included.
    TokenSequence target(const ReasoningTrace& reasoning, const std::string& answer) const;
    /// Response text without the end marker.
    std::string response_text(const TokenSequence& tokens) const;

    Sampled sample_response(const PolicyParameters& params, const TokenSequence& context, Rng& rng) const;
    Sampled greedy_response(const PolicyParameters& params, const TokenSequence& context) const;

    /// Single-pass greedy answer to `prompt`.
    std::string greedy_answer(const PolicyParameters& params, const std::string& prompt) const;

private:
    const Vocabulary* vocab_;
    std::size_t max_response_tokens_;
};

enum class Scenario { full, partial };

std::string scenario_name(Scenario s);

struct DialoguePlan {
    std::string task_id;
    std::vector<RuleId> full_rules;     // k distinct rules, random order
    std::vector<RuleId> partial_rules;  // k' of full_rules, in their full-dialogue order

    std::size_t k() const noexcept { return full_rules.size(); }
    std::size_t k_prime() const noexcept { return partial_rules.size(); }
    const std::vector<RuleId>& rules(Scenario s) const { return s == Scenario::full ? full_rules : partial_rules; }
    void validate() const;  // throws ContractError
};

/// k distinct rules out of the first `n_rules`, shuffled, and a random k'-subset of them.
DialoguePlan sample_rules(std::size_t n_rules, std::size_t k, std::size_t k_prime, Rng& rng,
                          std::string task_id = {});

struct Turn {
    RuleId rule = RuleId::R1;
    std::string q_aug;
    TokenSequence context;            // everything the student saw before answering
    TokenSequence response;           // sampled student tokens
    std::vector<double> log_probs;    // behaviour log-probs, aligned with `response`
    std::string student_reasoning;
    std::string student_answer;
    ReasoningTrace teacher_reasoning;
    std::string teacher_answer;
};

struct DialogueTrajectory {
    DialoguePlan plan;
    Scenario scenario = Scenario::full;
    std::size_t group_index = 0;  // 1..G
    std::vector<Turn> turns;
    TokenSequence final_context;
    TokenSequence final_response;
    std::vector<double> final_log_probs;
    std::string final_reasoning;
    std::string final_answer;
};

struct RolloutFailure {
    std::size_t group_index = 0;
    std::string reason;
};

struct RolloutGroup {
    std::vector<DialogueTrajectory> trajectories;
    std::vector<RolloutFailure> failures;
};

struct RolloutSeed {
    std::uint64_t run = 0;
    std::uint64_t step = 0;
};

/// G dialogues for one task under one scenario. Trajectory g draws from its own stream seeded by
/// (run, step, task id, scenario, g). A teacher failure drops that trajectory; fewer than two
/// survivors raises OracleError.
RolloutGroup rollout(const Task& task, const DialoguePlan& plan, Scenario scenario, const PolicyParameters& params,
                     TeacherOracle& oracle, const StudentFormat& format, RolloutSeed seed, std::size_t G);

/// Debug record {task_id, scenario, g, turns[], final_answer, reward}.
nlohmann::json trajectory_to_json(const DialogueTrajectory& t, const StudentFormat& format,
                                  const nlohmann::json& reward = nullptr);

}  // namespace exgrpo
