#include "exgrpo/synth.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numeric>

#include "exgrpo/error.hpp"
#include "exgrpo/rng.hpp"
#include "exgrpo/text.hpp"

namespace exgrpo {

std::string_view op_word(Op op) { return op == Op::plus ? "plus" : "minus"; }

Op inverse(Op op) { return op == Op::plus ? Op::minus : Op::plus; }

std::string Problem::cue() const {
    return std::to_string(lhs) + " " + std::string(op_word(op)) + " " + std::to_string(rhs);
}

namespace {

std::optional<int> parse_number(std::string_view w) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(w.data(), w.data() + w.size(), v);
    if (ec != std::errc{} || ptr != w.data() + w.size() || v < 0 || v > kMaxNumber) return std::nullopt;
    return v;
}

std::string num(int v) { return std::to_string(v); }

}  // namespace

std::optional<Problem> parse_cue(std::string_view text) {
    const auto words = split_words(text);
    if (words.size() < 3) return std::nullopt;
    const auto& l = words[words.size() - 3];
    const auto& o = words[words.size() - 2];
    const auto& r = words[words.size() - 1];
    auto lhs = parse_number(l);
    auto rhs = parse_number(r);
    if (!lhs || !rhs) return std::nullopt;
    Problem p{*lhs, Op::plus, *rhs};
    if (o == "plus")
        p.op = Op::plus;
    else if (o == "minus")
        p.op = Op::minus;
    else
        return std::nullopt;
    if (p.value() < 0 || p.value() > kMaxNumber) return std::nullopt;
    return p;
}

void SyntheticTaskSpec::validate() const {
    if (operations.empty()) throw ConfigError("synthetic spec needs at least one operation");
    if (operand_min < 1 || operand_max < operand_min)
        throw ConfigError("operand range must be positive and non-empty");
    // probe variations reach 3 * operand_max + 2 (alternative-operation probe on an inverse task)
    if (3 * operand_max + 2 > kMaxNumber) throw ConfigError("operand_max too large for the 0..99 lexicon");
    if (n_tasks == 0) throw ConfigError("n_tasks must be positive");
}

Task make_forward_task(int a, Op op, int b, std::string id, std::string link_id) {
    const Problem p{a, op, b};
    const int c = p.value();
    Task t;
    t.id = std::move(id);
    t.link_id = std::move(link_id);
    t.answer_key = t.answer_text = num(c);
    if (op == Op::minus) {
        t.question = "tom had " + num(a) + " apples and gave away " + num(b) +
                     " apples . how many apples are left ? " + p.cue();
        t.reasoning.add("tom gave away " + num(b) + " apples so we take " + num(b) + " from " + num(a));
        t.domain_tag = "synthetic:forward:minus";
    } else {
        t.question = "tom had " + num(a) + " apples and got " + num(b) +
                     " more apples . how many apples does tom have now ? " + p.cue();
        t.reasoning.add("tom got " + num(b) + " more apples so we add " + num(b) + " to " + num(a));
        t.domain_tag = "synthetic:forward:plus";
    }
    t.reasoning.add(p.cue() + " = " + num(c));
    return t;
}

Task make_inverse_task(int a, Op op, int b, std::string id, std::string link_id) {
    const int c = Problem{a, op, b}.value();
    const Problem inv{c, inverse(op), b};
    Task t;
    t.id = std::move(id);
    t.link_id = std::move(link_id);
    t.answer_key = t.answer_text = num(a);
    if (op == Op::minus) {
        t.question = "tom gave away " + num(b) + " apples and has " + num(c) +
                     " apples left . how many apples did tom start with ? " + inv.cue();
        t.reasoning.add("tom had " + num(c) + " left after giving away " + num(b) + " so we add " + num(b) +
                        " back to " + num(c));
        t.domain_tag = "synthetic:inverse:minus";
    } else {
        t.question = "tom got " + num(b) + " more apples and now has " + num(c) +
                     " apples . how many apples did tom start with ? " + inv.cue();
        t.reasoning.add("tom has " + num(c) + " after getting " + num(b) + " more so we take " + num(b) +
                        " from " + num(c));
        t.domain_tag = "synthetic:inverse:plus";
    }
    t.reasoning.add(inv.cue() + " = " + num(a));
    return t;
}

bool is_inverse_task(const Task& task) { return task.domain_tag.rfind("synthetic:inverse:", 0) == 0; }

std::vector<Task> generate_tasks(const SyntheticTaskSpec& spec) {
    spec.validate();
    std::vector<Problem> grid;
    for (Op op : spec.operations)
        for (int a = spec.operand_min; a <= spec.operand_max; ++a)
            for (int b = spec.operand_min; b <= spec.operand_max; ++b)
                if (op == Op::plus || a > b) grid.push_back({a, op, b});
    if (grid.empty()) throw ConfigError("operand range admits no task");

    Rng rng(hash_combine(spec.seed, 0x7a5c));
    std::vector<Task> tasks;
    std::vector<Problem> order;
    for (std::size_t i = 0; i < spec.n_tasks; ++i) {
        if (order.empty()) {
            order = grid;
            for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng.below(k)]);
        }
        const Problem p = order.back();
        order.pop_back();
        char buf[32];
        std::snprintf(buf, sizeof buf, "%05zu", i);
        const std::string stem(buf);
        if (spec.include_inverse) {
            tasks.push_back(make_forward_task(p.lhs, p.op, p.rhs, "f" + stem, "p" + stem));
            tasks.push_back(make_inverse_task(p.lhs, p.op, p.rhs, "i" + stem, "p" + stem));
        } else {
            tasks.push_back(make_forward_task(p.lhs, p.op, p.rhs, "f" + stem));
        }
    }
    return tasks;
}

TaskSplit holdout_split(const std::vector<Task>& tasks, double fraction, std::uint64_t seed, SplitMode mode) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw ContractError("holdout fraction must lie in (0, 1)");
    // Units are linkage groups in first-appearance order; unlinked tasks are singleton units.
    std::vector<std::vector<std::size_t>> units;
    std::map<std::string, std::size_t> unit_of_link;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        const auto& link = tasks[i].link_id;
        if (link.empty()) {
            units.push_back({i});
            continue;
        }
        auto [it, inserted] = unit_of_link.emplace(link, units.size());
        if (inserted) units.emplace_back();
        units[it->second].push_back(i);
    }

    Rng rng(hash_combine(seed, 0x5b1e));
    std::vector<std::size_t> perm(units.size());
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t k = perm.size(); k > 1; --k) std::swap(perm[k - 1], perm[rng.below(k)]);

    TaskSplit split;
    std::vector<bool> to_test(tasks.size(), false);
    if (mode == SplitMode::in_distribution) {
        const auto n_test = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(units.size())));
        for (std::size_t u = 0; u < n_test; ++u)
            for (std::size_t i : units[perm[u]]) to_test[i] = true;
    } else {
        std::vector<std::size_t> pairs;
        for (std::size_t u : perm) {
            bool has_fwd = false, has_inv = false;
            for (std::size_t i : units[u]) (is_inverse_task(tasks[i]) ? has_inv : has_fwd) = true;
            if (has_fwd && has_inv) pairs.push_back(u);
        }
        const auto n_test = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(pairs.size())));
        for (std::size_t k = 0; k < n_test; ++k)
            for (std::size_t i : units[pairs[k]])
                if (is_inverse_task(tasks[i])) to_test[i] = true;
    }
    for (std::size_t i = 0; i < tasks.size(); ++i) (to_test[i] ? split.test : split.train).push_back(tasks[i]);
    return split;
}

const std::vector<std::string>& synthetic_lexicon() {
    static const std::vector<std::string> words = {
        // task text
        "tom", "had", "apples", "and", "gave", "away", "how", "many", "are", "left", "?", ".", "got", "more",
        "does", "have", "now", "has", "did", "start", "with", "so", "we", "take", "from", "add", "to", "after",
        "giving", "getting", "back", "plus", "minus", "=",
        // probe templates
        "why", "is", "the", "answer", "question", ":", "fact", "that", "lead", "describe", "process", "step",
        "by", "then", "what", "if", "second", "number", "were", "instead", "compare", "case", "where", "first",
        "evaluate", "alternative", "hypothesis", "rule", "not", "apply", "this", "a", "real", "shop", "box",
        "items", "sold", "added", "comes", "before", "count", "change", "over", "time", "one", "follows",
        "explain",
        // dialogue labels
        "probe", "original",
        // stands in for words a real teacher uses outside this lexicon
        "<unk>"};
    return words;
}

Vocabulary synthetic_vocabulary() {
    std::vector<std::string> tokens;
    for (int i = 0; i <= kMaxNumber; ++i) tokens.push_back(std::to_string(i));
    for (const auto& w : synthetic_lexicon()) tokens.push_back(w);
    return Vocabulary(std::move(tokens));
}

}  // namespace exgrpo
