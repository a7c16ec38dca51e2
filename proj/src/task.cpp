#include "exgrpo/task.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "exgrpo/error.hpp"

namespace exgrpo {

using nlohmann::json;

ReasoningTrace::ReasoningTrace(std::vector<std::string> steps) {
    for (auto& s : steps) add(std::move(s));
}

void ReasoningTrace::add(std::string step) {
    if (step.empty()) throw InvariantError("reasoning step must not be empty");
    steps_.push_back(std::move(step));
}

std::string ReasoningTrace::joined(std::string_view sep) const {
    std::string out;
    for (std::size_t i = 0; i < steps_.size(); ++i) {
        if (i) out += sep;
        out += steps_[i];
    }
    return out;
}

RuleId rule_from_index(std::size_t index) {
    if (index >= kNumRules) throw ContractError("rule index out of range: " + std::to_string(index));
    return static_cast<RuleId>(index + 1);
}

bool is_valid_rule(RuleId r) noexcept {
    const auto v = static_cast<unsigned>(r);
    return v >= 1 && v <= kNumRules;
}

std::string rule_name(RuleId r) {
    if (!is_valid_rule(r)) throw ContractError("unknown rule id");
    return "R" + std::to_string(static_cast<unsigned>(r));
}

RuleId parse_rule(std::string_view name) {
    if (name.size() >= 2 && (name[0] == 'R' || name[0] == 'r')) {
        unsigned v = 0;
        for (char c : name.substr(1)) {
            if (!std::isdigit(static_cast<unsigned char>(c))) goto bad;
            v = v * 10 + static_cast<unsigned>(c - '0');
            if (v > kNumRules) goto bad;
        }
        if (v >= 1) return static_cast<RuleId>(v);
    }
bad:
    throw SchemaError("unknown rule id '" + std::string(name) + "'");
}

void Task::validate() const {
    if (id.empty()) throw InvariantError("task id must not be empty");
    if (answer_key.empty()) throw InvariantError("task " + id + ": answer_key must not be empty");
    if (reasoning.empty()) throw InvariantError("task " + id + ": reasoning needs at least one step");
}

void CuratedDataset::validate() const {
    std::map<std::string, std::size_t> counts;
    for (const auto& [id, task] : tasks) {
        if (id != task.id) throw InvariantError("task keyed as '" + id + "' has id '" + task.id + "'");
        task.validate();
        counts[id] = 0;
    }
    for (const auto& p : probes) {
        auto it = counts.find(p.parent_task_id);
        if (it == counts.end())
            throw InvariantError("probe references unknown task '" + p.parent_task_id + "'");
        if (!p.passed_consistency)
            throw InvariantError("probe " + rule_name(p.rule) + " of task '" + p.parent_task_id +
                                 "' did not pass the consistency filter");
        ++it->second;
    }
    for (const auto& [id, n] : counts)
        if (n == 0) throw InvariantError("retained task '" + id + "' has no consistent probes");
}

std::vector<const AugmentedTuple*> CuratedDataset::probes_for(const std::string& task_id) const {
    std::vector<const AugmentedTuple*> out;
    for (const auto& p : probes)
        if (p.parent_task_id == task_id) out.push_back(&p);
    return out;
}

std::string canonical_answer(std::string_view answer) {
    auto begin = answer.find_first_not_of(" \t\r\n");
    if (begin == std::string_view::npos) return {};
    auto end = answer.find_last_not_of(" \t\r\n");
    std::string out(answer.substr(begin, end - begin + 1));
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

bool answers_match(std::string_view a, std::string_view b) {
    return canonical_answer(a) == canonical_answer(b);
}

namespace {

std::string require_string(const json& j, const char* key, std::size_t line) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_string())
        throw ParseError(std::string("missing string field '") + key + "'", line);
    return it->get<std::string>();
}

ReasoningTrace trace_from_json(const json& j, std::size_t line) {
    ReasoningTrace trace;
    try {
        if (j.is_array()) {
            for (const auto& s : j) trace.add(s.get<std::string>());
        } else if (j.is_string()) {
            std::istringstream in(j.get<std::string>());
            for (std::string l; std::getline(in, l);)
                if (!l.empty()) trace.add(l);
        } else {
            throw ParseError("reasoning must be a string or an array of strings", line);
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("bad reasoning: ") + e.what(), line);
    }
    return trace;
}

template <class Fn>
void for_each_record(const std::filesystem::path& path, Fn&& fn) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string text;
    std::size_t line_no = 0;
    while (std::getline(in, text)) {
        ++line_no;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(text);
        } catch (const json::parse_error& e) {
            throw ParseError(std::string("malformed JSON: ") + e.what(), line_no);
        }
        if (!j.is_object()) throw ParseError("record is not a JSON object", line_no);
        fn(j, line_no);
    }
}

std::ofstream open_for_write(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

}  // namespace

json task_to_json(const Task& task) {
    json j = {{"id", task.id},
              {"question", task.question},
              {"answer_key", task.answer_key},
              {"answer_text", task.answer_text},
              {"reasoning", task.reasoning.steps()},
              {"domain_tag", task.domain_tag}};
    if (!task.link_id.empty()) j["link_id"] = task.link_id;
    return j;
}

Task task_from_json(const json& j, std::size_t line) {
    Task t;
    t.question = require_string(j, "question", line);
    t.answer_key = require_string(j, "answer_key", line);
    t.answer_text = j.contains("answer_text") ? require_string(j, "answer_text", line) : t.answer_key;
    if (auto it = j.find("id"); it != j.end()) {
        if (!it->is_string()) throw ParseError("id must be a string", line);
        t.id = it->get<std::string>();
    } else {
        char buf[32];
        std::snprintf(buf, sizeof buf, "q%06zu", line);
        t.id = buf;
    }
    if (auto it = j.find("reasoning"); it != j.end())
        t.reasoning = trace_from_json(*it, line);
    else if (!t.answer_text.empty())
        t.reasoning.add(t.answer_text);
    if (auto it = j.find("domain_tag"); it != j.end() && it->is_string()) t.domain_tag = it->get<std::string>();
    if (auto it = j.find("link_id"); it != j.end() && it->is_string()) t.link_id = it->get<std::string>();
    try {
        t.validate();
    } catch (const InvariantError& e) {
        throw ParseError(e.what(), line);
    }
    return t;
}

std::vector<Task> load_tasks(const std::filesystem::path& path) {
    std::vector<Task> tasks;
    std::set<std::string> seen;
    for_each_record(path, [&](const json& j, std::size_t line) {
        Task t = task_from_json(j, line);
        if (!seen.insert(t.id).second)
            throw SchemaError("duplicate task id '" + t.id + "' at line " + std::to_string(line));
        tasks.push_back(std::move(t));
    });
    return tasks;
}

void save_tasks(const std::vector<Task>& tasks, const std::filesystem::path& path) {
    auto out = open_for_write(path);
    for (const auto& t : tasks) out << task_to_json(t).dump() << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

void save_dataset(const CuratedDataset& dataset, const std::filesystem::path& path) {
    dataset.validate();
    auto out = open_for_write(path);
    if (!dataset.provenance.is_null()) out << json{{"provenance", dataset.provenance}}.dump() << '\n';
    for (const auto& [id, task] : dataset.tasks) {
        json j = task_to_json(task);
        json questions = json::array(), solutions = json::array(), steps = json::array(),
             answers = json::array(), rules = json::array(), consistent = json::array(),
             correct = json::array();
        for (const auto* p : dataset.probes_for(id)) {
            questions.push_back(p->q_aug);
            solutions.push_back(p->r_aug.joined(" "));
            steps.push_back(p->r_aug.steps());
            answers.push_back(p->a_aug);
            rules.push_back(rule_name(p->rule));
            consistent.push_back(p->passed_consistency);
            correct.push_back(p->student_correct);
        }
        j["augmented_questions"] = std::move(questions);
        j["augmented_solutions_teacher"] = std::move(solutions);
        j["augmented_solution_steps"] = std::move(steps);
        j["augmented_answers"] = std::move(answers);
        j["rule_id"] = std::move(rules);
        j["passed_consistency"] = std::move(consistent);
        j["student_correct"] = std::move(correct);
        out << j.dump() << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
}

CuratedDataset load_dataset(const std::filesystem::path& path) {
    CuratedDataset ds;
    for_each_record(path, [&](const json& j, std::size_t line) {
        if (j.contains("provenance") && !j.contains("question")) {
            ds.provenance = j["provenance"];
            return;
        }
        Task t = task_from_json(j, line);
        const std::string id = t.id;
        if (!ds.tasks.emplace(id, std::move(t)).second)
            throw SchemaError("duplicate task id '" + id + "' at line " + std::to_string(line));
        try {
            const auto& questions = j.at("augmented_questions");
            const auto& answers = j.at("augmented_answers");
            const auto& rules = j.at("rule_id");
            const auto& consistent = j.at("passed_consistency");
            const auto& correct = j.at("student_correct");
            const json* steps = j.contains("augmented_solution_steps") ? &j["augmented_solution_steps"] : nullptr;
            const auto& solutions = j.at("augmented_solutions_teacher");
            const std::size_t n = questions.size();
            if (answers.size() != n || rules.size() != n || consistent.size() != n || correct.size() != n ||
                solutions.size() != n || (steps && steps->size() != n))
                throw ParseError("probe arrays have mismatched lengths", line);
            for (std::size_t i = 0; i < n; ++i) {
                AugmentedTuple p;
                p.parent_task_id = id;
                p.rule = parse_rule(rules[i].get<std::string>());
                p.q_aug = questions[i].get<std::string>();
                p.a_aug = answers[i].get<std::string>();
                p.r_aug = trace_from_json(steps ? (*steps)[i] : solutions[i], line);
                p.passed_consistency = consistent[i].get<bool>();
                p.student_correct = correct[i].get<bool>();
                ds.probes.push_back(std::move(p));
            }
        } catch (const json::exception& e) {
            throw ParseError(std::string("bad probe fields: ") + e.what(), line);
        }
    });
    try {
        ds.validate();
    } catch (const InvariantError& e) {
        throw SchemaError(std::string("loaded dataset violates invariants: ") + e.what());
    }
    return ds;
}

}  // namespace exgrpo
