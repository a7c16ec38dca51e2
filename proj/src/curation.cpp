#include "exgrpo/curation.hpp"

#include <fstream>

#include "exgrpo/error.hpp"

namespace exgrpo {

void CurationConfig::validate() const {
    if (tau_hard < 1) throw ConfigError("tau_hard must be >= 1");
    if (!baseline) throw ConfigError("curation needs a baseline student");
    if (!teacher) throw ConfigError("curation needs a teacher");
}

std::string consistency_prompt(const Task& task, const AugmentedTuple& probe) {
    return "Probe: " + probe.q_aug + "\nReasoning: " + probe.r_aug.joined(" ") + "\nAnswer: " + probe.a_aug +
           "\nQuestion: " + task.question;
}

bool ei_consistency_filter(const Task& task, AugmentedTuple& probe, TeacherOracle& teacher) {
    if (probe.parent_task_id != task.id)
        throw ContractError("probe of task " + probe.parent_task_id + " checked against task " + task.id);
    probe.passed_consistency = answers_match(teacher.predict_answer(consistency_prompt(task, probe)), task.answer_key);
    return probe.passed_consistency;
}

bool rejective_keep(std::size_t n_prime, std::size_t lambda, int tau_hard) {
    return n_prime > 0 && lambda != n_prime && static_cast<long long>(lambda) >= tau_hard;
}

bool rejective_filter(const Task& task, std::span<AugmentedTuple> consistent_probes, const CurationConfig& config) {
    std::size_t lambda = 0;
    for (auto& p : consistent_probes) {
        if (!p.passed_consistency) throw ContractError("rejective filter given a probe that failed consistency");
        if (p.parent_task_id != task.id) throw ContractError("probe does not belong to task " + task.id);
        p.student_correct = answers_match(config.baseline(p.q_aug), p.a_aug);
        lambda += p.student_correct ? 1 : 0;
    }
    return rejective_keep(consistent_probes.size(), lambda, config.tau_hard);
}

nlohmann::json AuditRecord::to_json() const {
    return {{"task_id", task_id}, {"N", n}, {"N_prime", n_prime}, {"Lambda", lambda}, {"kept", kept},
            {"reason", reason}};
}

CurationResult curate(std::span<const Task> tasks, const CurationConfig& config, std::span<const RuleId> rules) {
    config.validate();
    if (rules.empty()) throw ContractError("curation needs at least one rule");
    CurationResult out;
    out.dataset.provenance = {{"tau_hard", config.tau_hard}, {"rules", nlohmann::json::array()}};
    for (RuleId r : rules) out.dataset.provenance["rules"].push_back(rule_name(r));

    for (const Task& task : tasks) {
        AuditRecord audit;
        audit.task_id = task.id;
        GeneratedProbes generated;
        try {
            generated = generate_probes(task, rules, *config.teacher);
        } catch (const OracleError& e) {
            out.failures.push_back({task.id, "", e.what()});
            audit.reason = std::string("probe generation failed: ") + e.what();
            out.audit.push_back(std::move(audit));
            continue;
        }
        for (const auto& f : generated.failures) out.failures.push_back({task.id, rule_name(f.rule), f.reason});
        audit.n = generated.probes.size();

        std::vector<AugmentedTuple> consistent;
        for (auto& probe : generated.probes) {
            try {
                if (ei_consistency_filter(task, probe, *config.teacher)) consistent.push_back(probe);
            } catch (const OracleError& e) {
                out.failures.push_back({task.id, rule_name(probe.rule), std::string("consistency: ") + e.what()});
            }
        }
        audit.n_prime = consistent.size();
        audit.kept = rejective_filter(task, consistent, config);
        for (const auto& p : consistent) audit.lambda += p.student_correct ? 1 : 0;

        if (audit.n_prime == 0)
            audit.reason = "no consistent probes";
        else if (audit.lambda == audit.n_prime)
            audit.reason = "too easy";
        else if (!audit.kept)
            audit.reason = "too hard";
        else
            audit.reason = "kept";

        // candidates carry the final flags of every generated probe
        std::size_t c = 0;
        for (auto& probe : generated.probes) {
            if (probe.passed_consistency) probe.student_correct = consistent[c++].student_correct;
            out.candidates.push_back(probe);
        }
        if (audit.kept) {
            out.dataset.tasks.emplace(task.id, task);
            for (auto& p : consistent) out.dataset.probes.push_back(std::move(p));
        }
        out.audit.push_back(std::move(audit));
    }
    // a teacher that failed on every task is an outage, not a curation outcome
    if (!tasks.empty() && out.candidates.empty() && out.failures.size() >= tasks.size())
        throw OracleError("teacher produced no probes for any task: " + out.failures.front().reason);
    return out;
}

void save_audit(std::span<const AuditRecord> audit, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write audit " + path.string());
    for (const auto& a : audit) out << a.to_json().dump() << '\n';
    if (!out) throw IoError("failed writing audit " + path.string());
}

std::vector<AuditRecord> load_audit(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open audit " + path.string());
    std::vector<AuditRecord> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            AuditRecord a;
            a.task_id = j.at("task_id").get<std::string>();
            a.n = j.at("N").get<std::size_t>();
            a.n_prime = j.at("N_prime").get<std::size_t>();
            a.lambda = j.at("Lambda").get<std::size_t>();
            a.kept = j.at("kept").get<bool>();
            a.reason = j.value("reason", "");
            out.push_back(std::move(a));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(e.what(), n);
        }
    }
    return out;
}

}  // namespace exgrpo
