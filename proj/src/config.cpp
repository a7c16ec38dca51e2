#include "exgrpo/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "exgrpo/error.hpp"

namespace exgrpo {

void RunConfig::validate() const {
    environment.spec.validate();
    if (!(environment.holdout_fraction > 0.0 && environment.holdout_fraction < 1.0))
        throw ConfigError("environment.holdout_fraction must lie in (0, 1)");
    if (!environment.tasks_path.empty() && !std::filesystem::exists(environment.tasks_path))
        throw ConfigError("tasks file not found: " + environment.tasks_path.string());
    if (teacher.kind != "scripted" && teacher.kind != "http")
        throw ConfigError("teacher.kind must be scripted or http, got " + teacher.kind);
    if (!(teacher.p_err >= 0.0 && teacher.p_err <= 1.0)) throw ConfigError("teacher.p_err must lie in [0, 1]");
    if (teacher.kind == "http" && teacher.endpoint.empty() && teacher.replay_log.empty())
        throw ConfigError("http teacher needs an endpoint or a replay log");
    if (features.window == 0 || features.buckets == 0) throw ConfigError("policy window and buckets must be positive");
    if (max_response_tokens < 2) throw ConfigError("policy.max_response_tokens must be at least 2");
    if (!(base.fact_fraction >= 0.0 && base.fact_fraction <= 1.0))
        throw ConfigError("base.fact_fraction must lie in [0, 1]");
    if (!(base.lr > 0.0)) throw ConfigError("base.lr must be positive");
    if (tau_hard < 1) throw ConfigError("curation.tau_hard must be >= 1");
    if (rules.empty()) throw ConfigError("curation.rules must not be empty");
    if (!(sft.lr > 0.0) || sft.batch_size == 0) throw ConfigError("sft.lr and sft.batch_size must be positive");
    if (!(1 <= rl.k_prime && rl.k_prime < rl.k && rl.k <= kNumRules))
        throw ConfigError("dialogue needs 1 <= k_prime < k <= 10");
    if (rl.tasks_per_step == 0) throw ConfigError("rl.tasks_per_step must be positive");
    if (!(smoothing_fraction > 0.0 && smoothing_fraction <= 1.0))
        throw ConfigError("metrics.smoothing_fraction must lie in (0, 1]");
    reward.validate();
    update.validate();
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json ops = nlohmann::json::array();
    for (Op op : environment.spec.operations) ops.push_back(std::string(op_word(op)));
    nlohmann::json rule_names = nlohmann::json::array();
    for (RuleId r : rules) rule_names.push_back(rule_name(r));
    return {
        {"seed", seed},
        {"out_dir", out_dir.string()},
        {"stages", {{"curate", stages.curate}, {"sft", stages.sft}, {"rl", stages.rl}, {"eval", stages.eval}}},
        {"environment",
         {{"operand_min", environment.spec.operand_min},
          {"operand_max", environment.spec.operand_max},
          {"operations", ops},
          {"n_tasks", environment.spec.n_tasks},
          {"include_inverse", environment.spec.include_inverse},
          {"holdout_fraction", environment.holdout_fraction},
          {"split", environment.split == SplitMode::reversal ? "reversal" : "in_distribution"},
          {"tasks_path", environment.tasks_path.string()}}},
        {"teacher",
         {{"kind", teacher.kind},
          {"p_err", teacher.p_err},
          {"endpoint", teacher.endpoint},
          {"model", teacher.model},
          {"auth_env", teacher.auth_env},
          {"replay_log", teacher.replay_log.string()},
          {"answer_delimiter", teacher.answer_delimiter},
          {"max_retries", teacher.max_retries}}},
        {"policy",
         {{"window", features.window},
          {"buckets", features.buckets},
          {"max_response_tokens", max_response_tokens}}},
        {"base", {{"fact_fraction", base.fact_fraction}, {"epochs", base.epochs}, {"lr", base.lr}}},
        {"curation", {{"tau_hard", tau_hard}, {"rules", rule_names}}},
        {"sft", {{"epochs", sft.epochs}, {"lr", sft.lr}, {"batch_size", sft.batch_size}}},
        {"dialogue", {{"k", rl.k}, {"k_prime", rl.k_prime}}},
        {"reward", {{"delta", reward.delta}, {"nu", reward.nu}, {"format_weight", reward.format_weight}}},
        {"update",
         {{"epsilon", update.epsilon},
          {"beta", update.beta},
          {"lr", update.lr},
          {"G", update.G},
          {"sft_aux_weight", update.sft_aux_weight},
          {"norm_floor", update.norm_floor},
          {"mean_only", update.mean_only}}},
        {"rl",
         {{"steps", rl.steps}, {"tasks_per_step", rl.tasks_per_step}, {"dump_trajectories", rl.dump_trajectories}}},
        {"metrics", {{"smoothing_fraction", smoothing_fraction}}}};
}

namespace {

using Values = std::vector<std::string>;
using Setter = std::function<void(RunConfig&, const Values&)>;

const std::string& single(const std::string& key, const Values& v) {
    if (v.size() != 1) throw ConfigError(key + " expects a single value");
    return v.front();
}

double to_double(const std::string& key, const Values& v) {
    const auto& s = single(key, v);
    try {
        std::size_t used = 0;
        const double d = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return d;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + s + "'");
    }
}

std::uint64_t to_unsigned(const std::string& key, const Values& v) {
    const auto& s = single(key, v);
    try {
        std::size_t used = 0;
        if (!s.empty() && s.front() == '-') throw std::invalid_argument(s);
        const auto u = std::stoull(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return u;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a non-negative integer, got '" + s + "'");
    }
}

int to_int(const std::string& key, const Values& v) {
    const auto& s = single(key, v);
    try {
        std::size_t used = 0;
        const int i = std::stoi(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return i;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected an integer, got '" + s + "'");
    }
}

bool to_bool(const std::string& key, const Values& v) {
    const auto& s = single(key, v);
    if (s == "true") return true;
    if (s == "false") return false;
    throw ConfigError(key + ": expected true or false, got '" + s + "'");
}

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> t;
        t["seed"] = [](RunConfig& c, const Values& v) { c.seed = to_unsigned("seed", v); };
        t["out_dir"] = [](RunConfig& c, const Values& v) { c.out_dir = single("out_dir", v); };
        t["stages.curate"] = [](RunConfig& c, const Values& v) { c.stages.curate = to_bool("stages.curate", v); };
        t["stages.sft"] = [](RunConfig& c, const Values& v) { c.stages.sft = to_bool("stages.sft", v); };
        t["stages.rl"] = [](RunConfig& c, const Values& v) { c.stages.rl = to_bool("stages.rl", v); };
        t["stages.eval"] = [](RunConfig& c, const Values& v) { c.stages.eval = to_bool("stages.eval", v); };
        t["environment.operand_min"] = [](RunConfig& c, const Values& v) {
            c.environment.spec.operand_min = to_int("environment.operand_min", v);
        };
        t["environment.operand_max"] = [](RunConfig& c, const Values& v) {
            c.environment.spec.operand_max = to_int("environment.operand_max", v);
        };
        t["environment.operations"] = [](RunConfig& c, const Values& v) {
            c.environment.spec.operations.clear();
            for (const auto& s : v) {
                if (s == "plus")
                    c.environment.spec.operations.push_back(Op::plus);
                else if (s == "minus")
                    c.environment.spec.operations.push_back(Op::minus);
                else
                    throw ConfigError("environment.operations: unknown operation '" + s + "'");
            }
        };
        t["environment.n_tasks"] = [](RunConfig& c, const Values& v) {
            c.environment.spec.n_tasks = to_unsigned("environment.n_tasks", v);
        };
        t["environment.include_inverse"] = [](RunConfig& c, const Values& v) {
            c.environment.spec.include_inverse = to_bool("environment.include_inverse", v);
        };
        t["environment.holdout_fraction"] = [](RunConfig& c, const Values& v) {
            c.environment.holdout_fraction = to_double("environment.holdout_fraction", v);
        };
        t["environment.split"] = [](RunConfig& c, const Values& v) {
            const auto& s = single("environment.split", v);
            if (s == "in_distribution")
                c.environment.split = SplitMode::in_distribution;
            else if (s == "reversal")
                c.environment.split = SplitMode::reversal;
            else
                throw ConfigError("environment.split must be in_distribution or reversal");
        };
        t["environment.tasks_path"] = [](RunConfig& c, const Values& v) {
            c.environment.tasks_path = single("environment.tasks_path", v);
        };
        t["teacher.kind"] = [](RunConfig& c, const Values& v) { c.teacher.kind = single("teacher.kind", v); };
        t["teacher.p_err"] = [](RunConfig& c, const Values& v) { c.teacher.p_err = to_double("teacher.p_err", v); };
        t["teacher.endpoint"] = [](RunConfig& c, const Values& v) {
            c.teacher.endpoint = single("teacher.endpoint", v);
        };
        t["teacher.model"] = [](RunConfig& c, const Values& v) { c.teacher.model = single("teacher.model", v); };
        t["teacher.auth_env"] = [](RunConfig& c, const Values& v) {
            c.teacher.auth_env = single("teacher.auth_env", v);
        };
        t["teacher.replay_log"] = [](RunConfig& c, const Values& v) {
            c.teacher.replay_log = single("teacher.replay_log", v);
        };
        t["teacher.answer_delimiter"] = [](RunConfig& c, const Values& v) {
            c.teacher.answer_delimiter = single("teacher.answer_delimiter", v);
        };
        t["teacher.max_retries"] = [](RunConfig& c, const Values& v) {
            c.teacher.max_retries = to_int("teacher.max_retries", v);
        };
        t["policy.window"] = [](RunConfig& c, const Values& v) { c.features.window = to_unsigned("policy.window", v); };
        t["policy.buckets"] = [](RunConfig& c, const Values& v) {
            c.features.buckets = to_unsigned("policy.buckets", v);
        };
        t["policy.max_response_tokens"] = [](RunConfig& c, const Values& v) {
            c.max_response_tokens = to_unsigned("policy.max_response_tokens", v);
        };
        t["base.fact_fraction"] = [](RunConfig& c, const Values& v) {
            c.base.fact_fraction = to_double("base.fact_fraction", v);
        };
        t["base.epochs"] = [](RunConfig& c, const Values& v) { c.base.epochs = to_unsigned("base.epochs", v); };
        t["base.lr"] = [](RunConfig& c, const Values& v) { c.base.lr = to_double("base.lr", v); };
        t["curation.tau_hard"] = [](RunConfig& c, const Values& v) { c.tau_hard = to_int("curation.tau_hard", v); };
        t["curation.rules"] = [](RunConfig& c, const Values& v) {
            c.rules.clear();
            for (const auto& s : v) {
                try {
                    c.rules.push_back(parse_rule(s));
                } catch (const Error& e) {
                    throw ConfigError(std::string("curation.rules: ") + e.what());
                }
            }
        };
        t["sft.epochs"] = [](RunConfig& c, const Values& v) { c.sft.epochs = to_unsigned("sft.epochs", v); };
        t["sft.lr"] = [](RunConfig& c, const Values& v) { c.sft.lr = to_double("sft.lr", v); };
        t["sft.batch_size"] = [](RunConfig& c, const Values& v) {
            c.sft.batch_size = to_unsigned("sft.batch_size", v);
        };
        t["dialogue.k"] = [](RunConfig& c, const Values& v) { c.rl.k = to_unsigned("dialogue.k", v); };
        t["dialogue.k_prime"] = [](RunConfig& c, const Values& v) {
            c.rl.k_prime = to_unsigned("dialogue.k_prime", v);
        };
        t["reward.delta"] = [](RunConfig& c, const Values& v) { c.reward.delta = to_double("reward.delta", v); };
        t["reward.nu"] = [](RunConfig& c, const Values& v) { c.reward.nu = to_double("reward.nu", v); };
        t["reward.format_weight"] = [](RunConfig& c, const Values& v) {
            c.reward.format_weight = to_double("reward.format_weight", v);
        };
        t["update.epsilon"] = [](RunConfig& c, const Values& v) { c.update.epsilon = to_double("update.epsilon", v); };
        t["update.beta"] = [](RunConfig& c, const Values& v) { c.update.beta = to_double("update.beta", v); };
        t["update.lr"] = [](RunConfig& c, const Values& v) { c.update.lr = to_double("update.lr", v); };
        t["update.G"] = [](RunConfig& c, const Values& v) { c.update.G = to_unsigned("update.G", v); };
        t["update.sft_aux_weight"] = [](RunConfig& c, const Values& v) {
            c.update.sft_aux_weight = to_double("update.sft_aux_weight", v);
        };
        t["update.norm_floor"] = [](RunConfig& c, const Values& v) {
            c.update.norm_floor = to_double("update.norm_floor", v);
        };
        t["update.mean_only"] = [](RunConfig& c, const Values& v) {
            c.update.mean_only = to_bool("update.mean_only", v);
        };
        t["rl.steps"] = [](RunConfig& c, const Values& v) { c.rl.steps = to_unsigned("rl.steps", v); };
        t["rl.tasks_per_step"] = [](RunConfig& c, const Values& v) {
            c.rl.tasks_per_step = to_unsigned("rl.tasks_per_step", v);
        };
        t["rl.dump_trajectories"] = [](RunConfig& c, const Values& v) {
            c.rl.dump_trajectories = to_bool("rl.dump_trajectories", v);
        };
        t["metrics.smoothing_fraction"] = [](RunConfig& c, const Values& v) {
            c.smoothing_fraction = to_double("metrics.smoothing_fraction", v);
        };
        return t;
    }();
    return table;
}

}  // namespace

RunConfig parse_run_config(const std::string& text, RunConfig config) {
    std::istringstream in(text);
    std::vector<CLI::ConfigItem> items;
    try {
        items = CLI::ConfigTOML().from_config(in);
    } catch (const CLI::Error& e) {
        throw ConfigError(std::string("config syntax: ") + e.what());
    }
    for (const auto& item : items) {
        if (item.name == "++" || item.name == "--") continue;
        std::string key;
        for (const auto& p : item.parents) key += p + ".";
        key += item.name;
        const auto it = setters().find(key);
        if (it == setters().end()) throw ConfigError("unknown config key '" + key + "'");
        it->second(config, item.inputs);
    }
    return config;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig defaults) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str(), std::move(defaults));
}

}  // namespace exgrpo
