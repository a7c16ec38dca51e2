// Command-line front end: one subcommand per pipeline stage plus `run` for all of them.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "exgrpo/config.hpp"
#include "exgrpo/curation.hpp"
#include "exgrpo/error.hpp"
#include "exgrpo/metrics.hpp"
#include "exgrpo/pipeline.hpp"

using namespace exgrpo;

namespace {

struct Overrides {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir, teacher, endpoint;
    std::optional<std::size_t> k, k_prime;
    std::optional<double> delta, nu;
    std::optional<int> tau_hard;
};

RunConfig resolve(const Overrides& o) {
    RunConfig c = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
    if (o.seed) c.seed = *o.seed;
    if (o.out_dir) c.out_dir = *o.out_dir;
    if (o.teacher) c.teacher.kind = *o.teacher;
    if (o.endpoint) c.teacher.endpoint = *o.endpoint;
    if (o.k) c.rl.k = *o.k;
    if (o.k_prime) c.rl.k_prime = *o.k_prime;
    if (o.delta) c.reward.delta = *o.delta;
    if (o.nu) c.reward.nu = *o.nu;
    if (o.tau_hard) c.tau_hard = *o.tau_hard;
    c.validate();
    return c;
}

std::vector<Task> tasks_or_generated(const RunConfig& c, const std::string& path) {
    if (!path.empty()) return load_tasks(path);
    return make_environment(c).split.train;
}

void print_json(const nlohmann::json& j) { std::cout << j.dump(2) << '\n'; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Explanatory-inversion reinforcement distillation on a synthetic arithmetic environment"};
    app.require_subcommand(1);
    app.fallthrough();
    Overrides o;
    app.add_option("--config", o.config_path, "TOML-style run configuration");
    app.add_option("--seed", o.seed, "run seed");
    app.add_option("--out-dir", o.out_dir, "directory for artefacts");
    app.add_option("--teacher", o.teacher, "teacher backend")->check(CLI::IsMember({"scripted", "http"}));
    app.add_option("--endpoint", o.endpoint, "chat-completions URL for the http teacher");
    app.add_option("--k", o.k, "turns in a full dialogue");
    app.add_option("--k-prime", o.k_prime, "turns in a partial dialogue");
    app.add_option("--delta", o.delta, "dialogue bonus value");
    app.add_option("--nu", o.nu, "dialogue bonus margin");
    app.add_option("--tau-hard", o.tau_hard, "minimum baseline-solved probes to keep a task");

    std::string tasks_path, dataset_path, vocab_path, checkpoint_path, metrics_path;
    std::size_t n_seeds = 20;
    std::vector<double> deltas{0.0, 0.1};

    auto* gen = app.add_subcommand("gen", "generate synthetic tasks");
    auto* augment = app.add_subcommand("augment", "generate explanatory probes for tasks");
    augment->add_option("--tasks", tasks_path, "task file (default: generated train split)");
    auto* curate_cmd = app.add_subcommand("curate", "build the baseline student and filter probes");
    curate_cmd->add_option("--tasks", tasks_path, "task file (default: generated train split)");
    auto* sft = app.add_subcommand("sft", "supervised warm-up on a curated dataset");
    sft->add_option("--dataset", dataset_path)->required();
    sft->add_option("--vocab", vocab_path)->required();
    sft->add_option("--checkpoint", checkpoint_path, "starting policy (the baseline)")->required();
    auto* rl = app.add_subcommand("rl", "dialogue policy optimisation from a warm-started policy");
    rl->add_option("--dataset", dataset_path)->required();
    rl->add_option("--vocab", vocab_path)->required();
    rl->add_option("--checkpoint", checkpoint_path, "warm-started policy, also the reference")->required();
    auto* eval = app.add_subcommand("eval", "single-pass accuracy of a checkpoint");
    eval->add_option("--tasks", tasks_path)->required();
    eval->add_option("--vocab", vocab_path)->required();
    eval->add_option("--checkpoint", checkpoint_path)->required();
    auto* theorem = app.add_subcommand("theorem", "matched runs with and without the dialogue bonus");
    theorem->add_option("--n-seeds", n_seeds, "number of seeds (>= 10)");
    theorem->add_option("--deltas", deltas, "bonus values, must include 0");
    auto* report = app.add_subcommand("report", "plot and trend statistics of a metrics file");
    report->add_option("--metrics", metrics_path)->required();
    auto* run = app.add_subcommand("run", "all stages end to end");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        const RunConfig c = resolve(o);
        std::filesystem::create_directories(c.out_dir);

        if (*gen) {
            const auto env = make_environment(c);
            save_tasks(env.tasks, c.out_dir / "tasks.jsonl");
            save_tasks(env.split.train, c.out_dir / "tasks_train.jsonl");
            save_tasks(env.split.test, c.out_dir / "tasks_test.jsonl");
            print_json({{"tasks", env.tasks.size()}, {"train", env.split.train.size()}, {"test", env.split.test.size()}});
        } else if (*augment) {
            const auto tasks = tasks_or_generated(c, tasks_path);
            auto teacher = make_teacher(c);
            std::ofstream out(c.out_dir / "probes.jsonl");
            std::size_t n = 0, failed = 0;
            for (const auto& t : tasks) {
                auto g = generate_probes(t, c.rules, *teacher);
                failed += g.failures.size();
                for (const auto& p : g.probes) {
                    out << nlohmann::json{{"parent_task_id", p.parent_task_id}, {"rule_id", rule_name(p.rule)},
                                          {"q_aug", p.q_aug}, {"a_aug", p.a_aug}, {"r_aug", p.r_aug.steps()}}
                               .dump()
                        << '\n';
                    ++n;
                }
            }
            print_json({{"probes", n}, {"failures", failed}});
        } else if (*curate_cmd) {
            const auto tasks = tasks_or_generated(c, tasks_path);
            auto teacher = make_teacher(c);
            const Vocabulary vocab = run_vocabulary(tasks, {});
            const StudentFormat format(vocab, c.max_response_tokens);
            const PolicyParameters base = build_base_student(c, tasks, format);
            CurationConfig cc;
            cc.tau_hard = c.tau_hard;
            cc.teacher = teacher.get();
            cc.baseline = [&](const std::string& q) {
                return format.greedy_answer(base, StudentFormat::question_prompt(q));
            };
            auto result = curate(tasks, cc, c.rules);
            save_dataset(result.dataset, c.out_dir / "dataset.jsonl");
            save_audit(result.audit, c.out_dir / "audit.jsonl");
            vocab.save(c.out_dir / "vocab.json");
            base.save(c.out_dir / "base.ckpt");
            print_json({{"tasks", tasks.size()},
                        {"kept", result.dataset.tasks.size()},
                        {"probes", result.dataset.probes.size()},
                        {"failures", result.failures.size()}});
        } else if (*sft || *rl) {
            const auto dataset = load_dataset(dataset_path);
            const Vocabulary vocab = Vocabulary::load(vocab_path);
            const StudentFormat format(vocab, c.max_response_tokens);
            PolicyParameters params = PolicyParameters::load(checkpoint_path);
            if (params.vocab_size() != vocab.size()) throw SchemaError("checkpoint does not match the vocabulary");
            auto teacher = make_teacher(c);
            std::vector<Task> tasks;
            for (const auto& [id, t] : dataset.tasks) tasks.push_back(t);
            MetricsLog log;
            if (*sft) {
                auto examples = task_examples(tasks, *teacher);
                auto pe = probe_examples(dataset.probes);
                examples.insert(examples.end(), pe.begin(), pe.end());
                const auto r = sft_train(params, encode_examples(examples, format), c.sft, hash_combine(c.seed, 3), &log);
                params.save(c.out_dir / "sft.ckpt");
                print_json({{"pairs", r.pairs}, {"epoch_loss", r.epoch_loss}});
            } else {
                const PolicyParameters ref = params;
                const auto r = rl_train(params, ref, tasks, *teacher, format, c, log);
                params.save(c.out_dir / "final.ckpt");
                print_json({{"steps", r.steps}, {"groups", r.groups}, {"fired_groups", r.fired_groups},
                            {"final_mean_r_base", r.final_mean_r_base}});
            }
            export_metrics(log.rows(), c.out_dir / "metrics.csv");
            export_timing(log.rows(), c.out_dir / "timing.csv");
        } else if (*eval) {
            const auto tasks = load_tasks(tasks_path);
            const Vocabulary vocab = Vocabulary::load(vocab_path);
            const StudentFormat format(vocab, c.max_response_tokens);
            const auto params = PolicyParameters::load(checkpoint_path);
            std::size_t generations = 0;
            const double acc = evaluate(params, format, tasks, &generations);
            print_json({{"tasks", tasks.size()}, {"generations", generations},
                        {"accuracy", std::isfinite(acc) ? nlohmann::json(acc) : nlohmann::json(nullptr)}});
        } else if (*theorem) {
            const auto r = run_theorem_check(c, n_seeds, deltas);
            std::ofstream(c.out_dir / "theorem.json") << r.to_json().dump(2) << '\n';
            std::vector<nlohmann::json> premises;
            std::ofstream pl(c.out_dir / "theorem_premises.jsonl");
            for (const auto& p : r.premises) pl << p.to_json().dump() << '\n';
            print_json({{"n_seeds", r.n_seeds}, {"non_decreasing", r.non_decreasing}, {"bonus_seeds", r.bonus_seeds},
                        {"bonus_at_least_zero", r.bonus_at_least_zero}, {"seconds", r.seconds}});
        } else if (*report) {
            const auto rows = load_metrics(metrics_path);
            std::vector<double> steps, base;
            for (const auto& r : rows)
                if (r.stage == "rl" && r.values.count("mean_r_base")) {
                    steps.push_back(static_cast<double>(r.step));
                    base.push_back(r.values.at("mean_r_base"));
                }
            const auto window = smoothing_window(steps.size(), c.smoothing_fraction);
            nlohmann::json out = {{"rl_rows", steps.size()}, {"window", window}};
            if (steps.size() >= 2) {
                const auto smooth = moving_average(base, window);
                const double rho = spearman(steps, smooth);
                out["spearman_smoothed_r_base"] = std::isfinite(rho) ? nlohmann::json(rho) : nlohmann::json(nullptr);
                out["first_smoothed"] = smooth.front();
                out["last_smoothed"] = smooth.back();
                plot_emit(rows, c.out_dir / "rewards.svg", window);
            }
            print_json(out);
        } else if (*run) {
            const auto s = run_pipeline(c);
            print_json(s.to_json());
            return s.exit_code;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e);
    }
    return 0;
}
