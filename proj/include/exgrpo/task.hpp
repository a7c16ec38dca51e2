#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace exgrpo {

/// Ordered list of non-empty reasoning steps.
class ReasoningTrace {
public:
    ReasoningTrace() = default;
    explicit ReasoningTrace(std::vector<std::string> steps);

    void add(std::string step);
    const std::vector<std::string>& steps() const noexcept { return steps_; }
    std::size_t size() const noexcept { return steps_.size(); }
    bool empty() const noexcept { return steps_.empty(); }
    std::string joined(std::string_view sep = " ") const;

    bool operator==(const ReasoningTrace&) const = default;

private:
    std::vector<std::string> steps_;
};

/// The ten explanatory-inversion rule families.
enum class RuleId : std::uint8_t { R1 = 1, R2, R3, R4, R5, R6, R7, R8, R9, R10 };

inline constexpr std::size_t kNumRules = 10;

constexpr std::array<RuleId, kNumRules> all_rules() {
    return {RuleId::R1, RuleId::R2, RuleId::R3, RuleId::R4, RuleId::R5,
            RuleId::R6, RuleId::R7, RuleId::R8, RuleId::R9, RuleId::R10};
}

/// Zero-based position in all_rules().
constexpr std::size_t rule_index(RuleId r) { return static_cast<std::size_t>(r) - 1; }
RuleId rule_from_index(std::size_t index);
std::string rule_name(RuleId r);  // "R1" ... "R10"
RuleId parse_rule(std::string_view name);
bool is_valid_rule(RuleId r) noexcept;

struct Task {
    std::string id;
    std::string question;
    std::string answer_key;
    std::string answer_text;
    ReasoningTrace reasoning;
    std::string domain_tag;
    std::string link_id;  // shared by a forward task and its inverse; empty otherwise

    /// Throws InvariantError on an empty id, empty answer key or empty reasoning.
    void validate() const;
    bool operator==(const Task&) const = default;
};

struct AugmentedTuple {
    std::string parent_task_id;
    RuleId rule = RuleId::R1;
    std::string q_aug;
    std::string a_aug;
    ReasoningTrace r_aug;
    bool passed_consistency = false;
    bool student_correct = false;

    bool operator==(const AugmentedTuple&) const = default;
};

/// Curated probes grouped under their retained parent tasks.
///
/// Invariants (checked by validate()): every probe's parent exists, every probe
/// passed the consistency filter, and every task owns at least one probe.
struct CuratedDataset {
    std::map<std::string, Task> tasks;
    std::vector<AugmentedTuple> probes;
    nlohmann::json provenance;

    void validate() const;
    std::vector<const AugmentedTuple*> probes_for(const std::string& task_id) const;
    bool operator==(const CuratedDataset&) const = default;
};

/// Trim surrounding whitespace and lowercase.
std::string canonical_answer(std::string_view answer);
bool answers_match(std::string_view a, std::string_view b);

// Line-delimited JSON records.

std::vector<Task> load_tasks(const std::filesystem::path& path);
void save_tasks(const std::vector<Task>& tasks, const std::filesystem::path& path);

void save_dataset(const CuratedDataset& dataset, const std::filesystem::path& path);
CuratedDataset load_dataset(const std::filesystem::path& path);

nlohmann::json task_to_json(const Task& task);
Task task_from_json(const nlohmann::json& j, std::size_t line_index);

}  // namespace exgrpo
