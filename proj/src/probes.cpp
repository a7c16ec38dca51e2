#include "exgrpo/probes.hpp"

#include <array>
#include <set>

#include "exgrpo/error.hpp"

namespace exgrpo {

namespace {

constexpr std::array<RuleInfo, kNumRules> kRules = {{
    {RuleId::R1, "why-based transformation",
     "Rewrite the question as a why-question about the reasons behind its answer.", "why"},
    {RuleId::R2, "causal relationship probing",
     "Rewrite the question so it asks how one stated fact causes the result.", "lead"},
    {RuleId::R3, "process and mechanism elucidation",
     "Ask for the step-by-step process that produces the answer.", "process"},
    {RuleId::R4, "counterfactual scenario generation",
     "Ask what happens if one premise of the question were different.", "what if"},
    {RuleId::R5, "comparative and contrastive framing",
     "Ask to compare the answer with the result under a changed condition.", "compare"},
    {RuleId::R6, "hypothesis generation and evaluation",
     "Ask to evaluate an alternative hypothesis for how the answer is obtained.", "hypothesis"},
    {RuleId::R7, "applied scenario generalization",
     "Move the same computation into a new practical scenario.", "shop"},
    {RuleId::R8, "multi-step decomposition",
     "Ask for the quantity that precedes a given reasoning step.", "before"},
    {RuleId::R9, "temporal and sequential dynamics",
     "Ask how the quantity evolves if the sequence continues one more step.", "time"},
    {RuleId::R10, "direct explanatory challenge",
     "Ask for an explicit justification of one reasoning step.", "explain"},
}};

using Source = SlotBinding::Source;

const SlotBinding kQuestion{Source::question};
const SlotBinding kAnswer{Source::answer};
const SlotBinding kStep1{Source::step, 0};
const SlotBinding kStep2{Source::step, 1};
const SlotBinding kDerived{Source::derived};

std::array<ProbeTemplate, kNumRules> build_catalog() {
    return {{
        ProbeTemplate(RuleId::R1, "why is {answer} the answer to the question : {question} ? {cue}",
                      {{"answer", kAnswer}, {"question", kQuestion}, {"cue", kDerived}}),
        ProbeTemplate(RuleId::R2, "how does the fact that {step_1} lead to the answer {answer} ? {cue}",
                      {{"step_1", kStep1}, {"answer", kAnswer}, {"cue", kDerived}}),
        ProbeTemplate(RuleId::R3, "describe the process step by step : {step_1} and then {step_2} ? {cue}",
                      {{"step_1", kStep1}, {"step_2", kStep2}, {"cue", kDerived}}),
        ProbeTemplate(RuleId::R4, "what if {altered_premise} instead ? {cue}",
                      {{"altered_premise", kDerived}, {"cue", kDerived}}),
        ProbeTemplate(RuleId::R5, "compare the answer {answer} with the case where {altered_premise} ? {cue}",
                      {{"answer", kAnswer}, {"altered_premise", kDerived}, {"cue", kDerived}}),
        ProbeTemplate(RuleId::R6, "evaluate the alternative hypothesis that {altered_premise} ? {cue}",
                      {{"altered_premise", kDerived}, {"cue", kDerived}}),
        ProbeTemplate(RuleId::R7, "apply this to a real shop where {altered_premise} ? {cue}",
                      {{"altered_premise", kDerived}, {"cue", kDerived}}),
        ProbeTemplate(RuleId::R8, "what number comes before the step {step_2} ? {cue}",
                      {{"step_2", kStep2}, {"cue", kDerived}}),
        ProbeTemplate(RuleId::R9, "how does the count change over time if one more step follows {answer} ? {cue}",
                      {{"answer", kAnswer}, {"cue", kDerived}}),
        ProbeTemplate(RuleId::R10, "explain the step {step_2} ? {cue}", {{"step_2", kStep2}, {"cue", kDerived}}),
    }};
}

}  // namespace

const RuleInfo& rule_info(RuleId rule) {
    if (!is_valid_rule(rule)) throw ContractError("unknown rule id");
    return kRules[rule_index(rule)];
}

ProbeTemplate::ProbeTemplate(RuleId rule, std::string pattern, std::map<std::string, SlotBinding> bindings)
    : rule_(rule), pattern_(std::move(pattern)), bindings_(std::move(bindings)) {
    for (const auto& s : slots())
        if (!bindings_.contains(s)) throw SchemaError("template slot '{" + s + "}' has no binding");
}

std::vector<std::string> ProbeTemplate::slots() const {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while ((pos = pattern_.find('{', pos)) != std::string::npos) {
        const auto end = pattern_.find('}', pos);
        if (end == std::string::npos) throw SchemaError("unterminated slot in template");
        out.push_back(pattern_.substr(pos + 1, end - pos - 1));
        pos = end + 1;
    }
    return out;
}

std::string ProbeTemplate::render(const Task& task, const std::map<std::string, std::string>& derived) const {
    std::string out;
    std::size_t pos = 0;
    while (true) {
        const auto open = pattern_.find('{', pos);
        out.append(pattern_, pos, open == std::string::npos ? std::string::npos : open - pos);
        if (open == std::string::npos) break;
        const auto close = pattern_.find('}', open);
        const std::string name = pattern_.substr(open + 1, close - open - 1);
        const auto& b = bindings_.at(name);
        std::string value;
        switch (b.source) {
            case Source::question: value = task.question; break;
            case Source::answer: value = task.answer_text; break;
            case Source::step:
                if (!task.reasoning.empty())
                    value = task.reasoning.steps()[std::min(b.step_index, task.reasoning.size() - 1)];
                break;
            case Source::derived:
                if (auto it = derived.find(name); it != derived.end()) value = it->second;
                break;
        }
        if (value.empty()) throw SchemaError("slot '{" + name + "}' resolved to empty text");
        out += value;
        pos = close + 1;
    }
    return out;
}

const ProbeTemplate& probe_template(RuleId rule) {
    static const auto catalog = build_catalog();
    if (!is_valid_rule(rule)) throw ContractError("unknown rule id");
    return catalog[rule_index(rule)];
}

GeneratedProbes generate_probes(const Task& task, std::span<const RuleId> rules, TeacherOracle& oracle) {
    std::set<RuleId> seen;
    for (RuleId r : rules)
        if (!seen.insert(r).second) throw ContractError("duplicate rule " + rule_name(r) + " in probe request");
    GeneratedProbes out;
    for (RuleId r : rules) {
        try {
            AugmentedTuple t = oracle.generate_probe(task, r);
            if (t.q_aug.empty() || t.r_aug.empty() || t.a_aug.empty())
                throw OracleError("teacher returned an incomplete probe");
            out.probes.push_back(std::move(t));
        } catch (const OracleError& e) {
            out.failures.push_back({r, e.what()});
        } catch (const SchemaError& e) {
            out.failures.push_back({r, e.what()});
        }
    }
    if (!rules.empty() && out.probes.empty())
        throw OracleError("all " + std::to_string(rules.size()) + " probe rules failed for task " + task.id +
                          "; first: " + out.failures.front().reason);
    return out;
}

TeacherAnswer solve_cue(const Problem& p) {
    TeacherAnswer a;
    a.reasoning.add(p.cue());
    a.reasoning.add("= " + std::to_string(p.value()));
    a.answer = std::to_string(p.value());
    return a;
}

std::map<std::string, std::string> ScriptedTeacher::derived_slots(const Problem& p, RuleId rule) {
    const auto n = [](int v) { return std::to_string(v); };
    std::map<std::string, std::string> d;
    Problem cue = p;
    switch (rule) {
        case RuleId::R4: {
            int rhs = p.rhs + 1;
            if (p.op == Op::minus && rhs > p.lhs) rhs = p.rhs - 1;
            d["altered_premise"] = "the second number were " + n(rhs);
            cue = {p.lhs, p.op, rhs};
            break;
        }
        case RuleId::R5:
            d["altered_premise"] = "the first number were " + n(p.lhs + 1);
            cue = {p.lhs + 1, p.op, p.rhs};
            break;
        case RuleId::R6: {
            const Op alt = inverse(p.op);
            d["altered_premise"] =
                "the rule were " + std::string(op_word(alt)) + " and not " + std::string(op_word(p.op));
            cue = (alt == Op::minus && p.lhs < p.rhs) ? Problem{p.rhs, alt, p.lhs} : Problem{p.lhs, alt, p.rhs};
            break;
        }
        case RuleId::R7:
            d["altered_premise"] = "a box has " + n(p.lhs) + " items and " + n(p.rhs) + " items are " +
                                   (p.op == Op::minus ? "sold" : "added");
            break;
        case RuleId::R8:
            cue = {p.value(), inverse(p.op), p.rhs};
            break;
        case RuleId::R9:
            cue = p.value() >= 1 ? Problem{p.value(), Op::minus, 1} : Problem{p.value(), Op::plus, 1};
            break;
        default:
            break;
    }
    d["cue"] = cue.cue();
    return d;
}

ScriptedTeacher::ScriptedTeacher(SyntheticTaskSpec spec, double p_err)
    : spec_(std::move(spec)), p_err_(p_err), rng_(hash_combine(spec_.seed, 0x7eac4e5)) {
    if (!(p_err >= 0.0 && p_err <= 1.0)) throw ConfigError("teacher error probability must lie in [0, 1]");
}

AugmentedTuple ScriptedTeacher::generate_probe(const Task& task, RuleId rule) {
    if (!is_valid_rule(rule)) throw ContractError("unknown rule id " + std::to_string(static_cast<int>(rule)));
    const auto cue = parse_cue(task.question);
    if (!cue) throw OracleError("task " + task.id + " has no trailing arithmetic cue", task.question);
    AugmentedTuple t;
    t.parent_task_id = task.id;
    t.rule = rule;
    t.q_aug = probe_template(rule).render(task, derived_slots(*cue, rule));
    auto answer = answer_probe(t.q_aug, {});
    t.r_aug = std::move(answer.reasoning);
    t.a_aug = std::move(answer.answer);
    return t;
}

TeacherAnswer ScriptedTeacher::answer_probe(const std::string& q_aug, const std::string&) {
    const auto cue = parse_cue(q_aug);
    if (!cue) throw OracleError("probe has no trailing arithmetic cue", q_aug);
    return solve_cue(*cue);
}

std::string ScriptedTeacher::predict_answer(const std::string& prompt) {
    const auto cue = parse_cue(prompt);
    if (!cue) throw OracleError("prompt has no trailing arithmetic cue", prompt);
    bool wrong;
    {
        std::lock_guard lock(mutex_);
        wrong = rng_.bernoulli(p_err_);
    }
    const int truth = cue->value();
    return std::to_string(wrong ? (truth + 1) % (kMaxNumber + 1) : truth);
}

std::unique_ptr<TeacherOracle> scripted_teacher(const SyntheticTaskSpec& spec, double p_err) {
    spec.validate();
    return std::make_unique<ScriptedTeacher>(spec, p_err);
}

}  // namespace exgrpo
