#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "exgrpo/task.hpp"
#include "exgrpo/vocabulary.hpp"

namespace exgrpo {

enum class Op { plus, minus };

std::string_view op_word(Op op);
Op inverse(Op op);

/// One arithmetic fact "lhs op rhs". Every synthetic question ends with this cue.
struct Problem {
    int lhs = 0;
    Op op = Op::plus;
    int rhs = 0;

    int value() const { return op == Op::plus ? lhs + rhs : lhs - rhs; }
    std::string cue() const;  // "5 minus 2"
    bool operator==(const Problem&) const = default;
};

/// Reads the trailing "lhs op rhs" cue of a question or prompt.
std::optional<Problem> parse_cue(std::string_view text);

inline constexpr int kMaxNumber = 99;

struct SyntheticTaskSpec {
    int operand_min = 1;
    int operand_max = 9;
    std::vector<Op> operations{Op::plus, Op::minus};
    std::size_t n_tasks = 100;
    std::uint64_t seed = 0;
    bool include_inverse = false;

    void validate() const;  // throws ConfigError
};

/// Forward word problem, e.g. "tom had 5 apples and gave away 2 apples . ... ? 5 minus 2".
Task make_forward_task(int a, Op op, int b, std::string id, std::string link_id = {});
/// The reversal of make_forward_task(a, op, b): the end count is given and the start is asked.
Task make_inverse_task(int a, Op op, int b, std::string id, std::string link_id = {});

/// `n_tasks` forward tasks drawn without replacement from the operand grid (cycling when the
/// grid is exhausted). With include_inverse each forward task gets an inverse twin sharing its
/// link_id, so 2 * n_tasks tasks are returned, twins adjacent.
std::vector<Task> generate_tasks(const SyntheticTaskSpec& spec);

bool is_inverse_task(const Task& task);

enum class SplitMode {
    in_distribution,  // linked twins land on the same side
    reversal,         // held-out twins: inverse to test, forward to train
};

struct TaskSplit {
    std::vector<Task> train;
    std::vector<Task> test;
};

/// `fraction` is the held-out share. In reversal mode it is the share of linked pairs whose
/// inverse is held out; the remaining tasks all go to train.
TaskSplit holdout_split(const std::vector<Task>& tasks, double fraction, std::uint64_t seed,
                        SplitMode mode = SplitMode::in_distribution);

/// Template words used by tasks, probes and dialogue labels.
const std::vector<std::string>& synthetic_lexicon();

/// Numbers 0..99 as whole tokens, then the lexicon, then the reserved markers.
Vocabulary synthetic_vocabulary();

}  // namespace exgrpo
