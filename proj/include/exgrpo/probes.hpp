#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "exgrpo/rng.hpp"
#include "exgrpo/synth.hpp"
#include "exgrpo/task.hpp"

namespace exgrpo {

struct RuleInfo {
    RuleId id;
    std::string_view title;
    std::string_view instruction;  // teacher-facing rewrite instruction
    std::string_view keyword;      // phrase every rendering of the rule contains
};

const RuleInfo& rule_info(RuleId rule);

/// Where a template slot takes its text from.
struct SlotBinding {
    enum class Source { question, answer, step, derived };
    Source source = Source::derived;
    std::size_t step_index = 0;  // Source::step; falls back to the last step
};

/// Text pattern with `{name}` slots, each bound to a Task field or a rule-derived value.
class ProbeTemplate {
public:
    /// Throws SchemaError when a slot in `pattern` has no binding.
    ProbeTemplate(RuleId rule, std::string pattern, std::map<std::string, SlotBinding> bindings);

    RuleId rule() const noexcept { return rule_; }
    const std::string& pattern() const noexcept { return pattern_; }
    std::vector<std::string> slots() const;

    /// Throws SchemaError when a bound value resolves to empty text.
    std::string render(const Task& task, const std::map<std::string, std::string>& derived) const;

private:
    RuleId rule_;
    std::string pattern_;
    std::map<std::string, SlotBinding> bindings_;
};

/// Built-in template for each rule over the synthetic task family.
const ProbeTemplate& probe_template(RuleId rule);

struct TeacherAnswer {
    ReasoningTrace reasoning;
    std::string answer;
};

/// The teacher role. Implementations must tolerate serialized calls from several threads.
class TeacherOracle {
public:
    virtual ~TeacherOracle() = default;
    virtual AugmentedTuple generate_probe(const Task& task, RuleId rule) = 0;
    virtual TeacherAnswer answer_probe(const std::string& q_aug, const std::string& context) = 0;
    virtual std::string predict_answer(const std::string& prompt) = 0;
};

struct ProbeFailure {
    RuleId rule;
    std::string reason;
};

struct GeneratedProbes {
    std::vector<AugmentedTuple> probes;  // input rule order, failed rules skipped
    std::vector<ProbeFailure> failures;
};

/// One probe per rule. Per-rule oracle failures are collected; throws OracleError when every
/// rule failed and ContractError on duplicate rules.
GeneratedProbes generate_probes(const Task& task, std::span<const RuleId> rules, TeacherOracle& oracle);

/// Deterministic stand-in teacher for the synthetic arithmetic family.
///
/// Probes come from probe_template(); answers are computed from the trailing cue of the
/// probe text; predict_answer() answers the trailing cue of the prompt and is wrong with
/// probability `p_err` (one seeded draw per call).
class ScriptedTeacher final : public TeacherOracle {
public:
    explicit ScriptedTeacher(SyntheticTaskSpec spec, double p_err = 0.0);

    AugmentedTuple generate_probe(const Task& task, RuleId rule) override;
    TeacherAnswer answer_probe(const std::string& q_aug, const std::string& context) override;
    std::string predict_answer(const std::string& prompt) override;

    double error_rate() const noexcept { return p_err_; }

    /// Slot values and computation cue a rule derives from the task's own cue.
    static std::map<std::string, std::string> derived_slots(const Problem& task_cue, RuleId rule);

private:
    SyntheticTaskSpec spec_;
    double p_err_;
    std::mutex mutex_;
    Rng rng_;
};

std::unique_ptr<TeacherOracle> scripted_teacher(const SyntheticTaskSpec& spec, double p_err = 0.0);

/// Teacher reasoning for a synthetic fact: steps ["x op y", "= z"], answer "z".
TeacherAnswer solve_cue(const Problem& problem);

}  // namespace exgrpo
