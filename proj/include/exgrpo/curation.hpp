#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "exgrpo/probes.hpp"
#include "exgrpo/task.hpp"
#include "json.hpp"

namespace exgrpo {

/// Greedy answer of the baseline student to a probe question.
using AnswerFn = std::function<std::string(const std::string& q_aug)>;

struct CurationConfig {
    int tau_hard = 1;
    AnswerFn baseline;
    TeacherOracle* teacher = nullptr;

    void validate() const;  // throws ConfigError
};

/// Labeled concatenation handed to the teacher by the consistency filter.
std::string consistency_prompt(const Task& task, const AugmentedTuple& probe);

/// True iff the teacher, shown the probe, its reasoning and answer, then Q, still answers A.
/// Sets probe.passed_consistency. Teacher failures propagate as OracleError.
bool ei_consistency_filter(const Task& task, AugmentedTuple& probe, TeacherOracle& teacher);

/// Keep iff n_prime > 0, lambda != n_prime and lambda >= tau_hard.
bool rejective_keep(std::size_t n_prime, std::size_t lambda, int tau_hard);

/// Scores every probe with the baseline (setting student_correct) and applies rejective_keep.
bool rejective_filter(const Task& task, std::span<AugmentedTuple> consistent_probes, const CurationConfig& config);

struct AuditRecord {
    std::string task_id;
    std::size_t n = 0;        // probes generated
    std::size_t n_prime = 0;  // probes passing consistency
    std::size_t lambda = 0;   // consistent probes the baseline answers correctly
    bool kept = false;
    std::string reason;

    nlohmann::json to_json() const;
    bool operator==(const AuditRecord&) const = default;
};

struct CurationFailure {
    std::string task_id;
    std::string rule;  // empty when the whole task failed
    std::string reason;
};

struct CurationResult {
    CuratedDataset dataset;
    std::vector<AuditRecord> audit;          // one per input task, input order
    std::vector<AugmentedTuple> candidates;  // every generated probe with its final flags
    std::vector<CurationFailure> failures;
};

/// Probe generation, consistency filtering and rejective filtering for every task.
/// Per-probe teacher failures are recorded; OracleError when no task yielded a single probe.
CurationResult curate(std::span<const Task> tasks, const CurationConfig& config, std::span<const RuleId> rules);

void save_audit(std::span<const AuditRecord> audit, const std::filesystem::path& path);
std::vector<AuditRecord> load_audit(const std::filesystem::path& path);

}  // namespace exgrpo
