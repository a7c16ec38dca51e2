#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "exgrpo/config.hpp"
#include "exgrpo/curation.hpp"
#include "exgrpo/dialogue.hpp"
#include "exgrpo/metrics.hpp"
#include "exgrpo/policy.hpp"
#include "exgrpo/probes.hpp"
#include "json.hpp"

namespace exgrpo {

/// Tasks of a run and their train/test split.
struct Environment {
    std::vector<Task> tasks;
    TaskSplit split;
};

Environment make_environment(const RunConfig& config);

/// Scripted teacher, or the HTTP teacher (token read from the `auth_env` variable). An HTTP
/// teacher without an endpoint replays `replay_log`.
std::unique_ptr<TeacherOracle> make_teacher(const RunConfig& config);

/// Synthetic lexicon plus every word of the given texts.
Vocabulary run_vocabulary(std::span<const Task> tasks, std::span<const AugmentedTuple> probes);

struct SftExample {
    std::string prompt;
    ReasoningTrace reasoning;
    std::string answer;
};

/// "question : Q" answered by the teacher.
std::vector<SftExample> task_examples(std::span<const Task> tasks, TeacherOracle& teacher);
/// "probe : q" with the probe's own teacher reasoning.
std::vector<SftExample> probe_examples(std::span<const AugmentedTuple> probes);
std::vector<SftPair> encode_examples(std::span<const SftExample> examples, const StudentFormat& format);

struct SftReport {
    std::size_t pairs = 0;
    std::vector<double> epoch_loss;  // mean per-pair loss over each epoch
};

/// Minibatch gradient descent on the mean per-pair negative log-likelihood, one seeded shuffle per epoch.
SftReport sft_train(PolicyParameters& params, std::span<const SftPair> pairs, const SftConfig& config,
                    std::uint64_t seed, MetricsLog* log = nullptr, const std::string& stage = "sft");

/// Arithmetic facts ("lhs op rhs") touched by the tasks and by every rule's probe of them.
std::vector<Problem> environment_facts(std::span<const Task> tasks);

/// Student fitted on a seeded `fact_fraction` share of environment_facts().
PolicyParameters build_base_student(const RunConfig& config, std::span<const Task> tasks,
                                    const StudentFormat& format);

/// Single-pass greedy accuracy: exactly one generation per task, no probe turns.
double evaluate(const PolicyParameters& params, const StudentFormat& format, std::span<const Task> tasks,
                std::size_t* generations = nullptr);

/// Logged inputs of each group's bonus decision.
struct PremiseRecord {
    std::size_t step = 0;
    std::string task_id;
    double p_full = 0.0;
    double p_partial = 0.0;
    double nu = 1.0;
    bool fired = false;

    nlohmann::json to_json() const;
};

struct RlReport {
    std::size_t steps = 0;
    std::size_t groups = 0;
    std::size_t fired_groups = 0;
    std::size_t failed_groups = 0;
    double final_mean_r_base = 0.0;
    std::vector<PremiseRecord> premises;
};

/// The ExGRPO stage over `tasks`. `ref` is the frozen reference policy.
RlReport rl_train(PolicyParameters& params, const PolicyParameters& ref, std::span<const Task> tasks,
                  TeacherOracle& teacher, const StudentFormat& format, const RunConfig& config, MetricsLog& log,
                  std::ostream* trajectory_dump = nullptr);

struct RunSummary {
    bool ok = true;
    std::string failed_stage;
    std::string diagnostic;
    int exit_code = 0;

    std::size_t n_tasks = 0, n_train = 0, n_test = 0;
    std::size_t curated_tasks = 0, curated_probes = 0, sft_pairs = 0, rl_tasks = 0;
    std::size_t rl_steps = 0, fired_groups = 0, rl_groups = 0, eval_generations = 0;
    double held_out_base = 0.0, held_out_before_rl = 0.0, held_out_after_rl = 0.0;
    double inverse_before_rl = 0.0, inverse_after_rl = 0.0;  // NaN without inverse test tasks
    std::uint64_t ref_digest_before = 0, ref_digest_after = 0;
    std::vector<MetricsRow> metrics;

    nlohmann::json to_json() const;
};

/// Curate, SFT warm-up, ExGRPO, then single-pass held-out evaluation, writing artefacts under
/// config.out_dir. Stage failures are reported in the summary, never thrown.
RunSummary run_pipeline(const RunConfig& config);

struct TheoremRow {
    std::uint64_t seed = 0;
    double delta = 0.0;
    double before = 0.0;  // held-out accuracy of the post-SFT policy
    double after = 0.0;   // held-out accuracy after the RL stage
    std::size_t fired_groups = 0;
    std::size_t groups = 0;
    double final_mean_r_base = 0.0;
};

struct TheoremReport {
    std::vector<TheoremRow> rows;
    std::vector<PremiseRecord> premises;
    std::size_t n_seeds = 0;
    double reference_delta = 0.0;      // the delta whose runs are checked for non-decrease
    std::size_t non_decreasing = 0;    // seeds with after >= before at reference_delta
    std::size_t bonus_seeds = 0;       // seeds whose reference run fired the bonus at least once
    std::size_t bonus_at_least_zero = 0;  // of those, after(reference) >= after(delta 0)
    double seconds = 0.0;

    nlohmann::json to_json() const;
};

/// For each seed: one environment, base student and SFT warm-up, then one RL stage per delta
/// from that same checkpoint with identical rollout seeds. `delta_values` must contain 0;
/// the largest delta is the reference.
TheoremReport run_theorem_check(const RunConfig& config, std::size_t n_seeds, std::span<const double> delta_values);

}  // namespace exgrpo
