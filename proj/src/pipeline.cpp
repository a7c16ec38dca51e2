#include "exgrpo/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include "exgrpo/error.hpp"
#include "exgrpo/http_teacher.hpp"
#include "exgrpo/rewards.hpp"
#include "exgrpo/text.hpp"
#include "exgrpo/update.hpp"

namespace exgrpo {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

// Distinct streams for the run's random choices.
enum Stream : std::uint64_t { split_stream = 1, base_stream, sft_stream, rl_order_stream, plan_stream };

std::uint64_t stream_seed(std::uint64_t seed, Stream s) { return hash_combine(seed, s); }

void write_lines(const std::filesystem::path& path, const std::vector<nlohmann::json>& lines) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& j : lines) out << j.dump() << '\n';
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

std::vector<Task> inverse_only(std::span<const Task> tasks) {
    std::vector<Task> out;
    for (const auto& t : tasks)
        if (is_inverse_task(t)) out.push_back(t);
    return out;
}

double nan() { return std::numeric_limits<double>::quiet_NaN(); }

}  // namespace

Environment make_environment(const RunConfig& config) {
    Environment env;
    if (config.environment.tasks_path.empty()) {
        SyntheticTaskSpec spec = config.environment.spec;
        spec.seed = config.seed;
        env.tasks = generate_tasks(spec);
    } else {
        env.tasks = load_tasks(config.environment.tasks_path);
    }
    env.split = holdout_split(env.tasks, config.environment.holdout_fraction, stream_seed(config.seed, split_stream),
                              config.environment.split);
    return env;
}

std::unique_ptr<TeacherOracle> make_teacher(const RunConfig& config) {
    if (config.teacher.kind == "scripted") {
        SyntheticTaskSpec spec = config.environment.spec;
        spec.seed = config.seed;
        return scripted_teacher(spec, config.teacher.p_err);
    }
    HttpTeacherConfig hc;
    hc.answer_delimiter = config.teacher.answer_delimiter;
    hc.max_retries = config.teacher.max_retries;
    hc.model = config.teacher.model;
    if (config.teacher.endpoint.empty()) return replay_teacher(config.teacher.replay_log, hc);
    hc.replay_log = config.teacher.replay_log;
    const char* token = std::getenv(config.teacher.auth_env.c_str());
    return http_teacher(config.teacher.endpoint, config.teacher.model, token ? token : "", hc);
}

Vocabulary run_vocabulary(std::span<const Task> tasks, std::span<const AugmentedTuple> probes) {
    const Vocabulary base = synthetic_vocabulary();
    std::vector<std::string> tokens = base.tokens();
    std::set<std::string> seen(tokens.begin(), tokens.end());
    auto add = [&](const std::string& text) {
        for (auto& w : split_words(text))
            if (seen.insert(w).second) tokens.push_back(w);
    };
    for (const auto& t : tasks) {
        add(t.question);
        add(t.answer_text);
        add(t.answer_key);
        for (const auto& s : t.reasoning.steps()) add(s);
    }
    for (const auto& p : probes) {
        add(p.q_aug);
        add(p.a_aug);
        for (const auto& s : p.r_aug.steps()) add(s);
    }
    return Vocabulary(std::move(tokens));
}

std::vector<SftExample> task_examples(std::span<const Task> tasks, TeacherOracle& teacher) {
    std::vector<SftExample> out;
    for (const auto& t : tasks) {
        auto a = teacher.answer_probe(t.question, {});
        out.push_back({StudentFormat::question_prompt(t.question), std::move(a.reasoning), std::move(a.answer)});
    }
    return out;
}

std::vector<SftExample> probe_examples(std::span<const AugmentedTuple> probes) {
    std::vector<SftExample> out;
    for (const auto& p : probes) out.push_back({StudentFormat::probe_prompt(p.q_aug), p.r_aug, p.a_aug});
    return out;
}

std::vector<SftPair> encode_examples(std::span<const SftExample> examples, const StudentFormat& format) {
    std::vector<SftPair> out;
    out.reserve(examples.size());
    for (const auto& e : examples) out.push_back({format.encode(e.prompt), format.target(e.reasoning, e.answer)});
    return out;
}

SftReport sft_train(PolicyParameters& params, std::span<const SftPair> pairs, const SftConfig& config,
                    std::uint64_t seed, MetricsLog* log, const std::string& stage) {
    SftReport report;
    report.pairs = pairs.size();
    if (pairs.empty()) return report;
    std::vector<std::size_t> order(pairs.size());
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const auto t0 = Clock::now();
        std::iota(order.begin(), order.end(), 0);
        Rng rng(hash_combine(seed, epoch));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        double total = 0.0, norm_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            std::vector<SftPair> batch;
            for (std::size_t i = start; i < end; ++i) batch.push_back(pairs[order[i]]);
            auto lg = sft_loss_and_grad(params, batch);
            const double inv = 1.0 / static_cast<double>(batch.size());
            total += lg.loss;
            norm_sum += lg.grad.norm() * inv;
            ++batches;
            params.apply(lg.grad, -config.lr * inv);
        }
        report.epoch_loss.push_back(total / static_cast<double>(pairs.size()));
        if (log)
            log->append({stage,
                         epoch,
                         {{"loss", report.epoch_loss.back()}, {"grad_norm", norm_sum / static_cast<double>(batches)}},
                         ms_since(t0)});
    }
    return report;
}

std::vector<Problem> environment_facts(std::span<const Task> tasks) {
    std::set<std::tuple<int, int, int>> seen;
    std::vector<Problem> out;
    auto add = [&](const Problem& p) {
        if (seen.insert({p.lhs, static_cast<int>(p.op), p.rhs}).second) out.push_back(p);
    };
    for (const auto& t : tasks) {
        const auto cue = parse_cue(t.question);
        if (!cue) continue;
        add(*cue);
        for (RuleId r : all_rules()) {
            const auto derived = parse_cue(ScriptedTeacher::derived_slots(*cue, r).at("cue"));
            if (derived) add(*derived);
        }
    }
    std::sort(out.begin(), out.end(), [](const Problem& a, const Problem& b) {
        return std::tuple(a.lhs, static_cast<int>(a.op), a.rhs) < std::tuple(b.lhs, static_cast<int>(b.op), b.rhs);
    });
    return out;
}

PolicyParameters build_base_student(const RunConfig& config, std::span<const Task> tasks,
                                    const StudentFormat& format) {
    FeatureMap fm = config.features;
    fm.seed = config.seed;
    PolicyParameters params(fm, format.vocab().size());
    auto facts = environment_facts(tasks);
    Rng rng(stream_seed(config.seed, base_stream));
    for (std::size_t i = facts.size(); i > 1; --i) std::swap(facts[i - 1], facts[rng.below(i)]);
    const auto keep =
        static_cast<std::size_t>(std::llround(config.base.fact_fraction * static_cast<double>(facts.size())));
    std::vector<SftExample> examples;
    for (std::size_t i = 0; i < keep; ++i) {
        auto a = solve_cue(facts[i]);
        examples.push_back({StudentFormat::question_prompt("? " + facts[i].cue()), a.reasoning, a.answer});
    }
    const auto pairs = encode_examples(examples, format);
    SftConfig sc{config.base.epochs, config.base.lr, 8};
    sft_train(params, pairs, sc, stream_seed(config.seed, base_stream));
    return params;
}

double evaluate(const PolicyParameters& params, const StudentFormat& format, std::span<const Task> tasks,
                std::size_t* generations) {
    if (tasks.empty()) return nan();
    std::size_t correct = 0;
    for (const auto& t : tasks) {
        if (generations) ++*generations;
        if (answers_match(format.greedy_answer(params, StudentFormat::question_prompt(t.question)), t.answer_key))
            ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(tasks.size());
}

nlohmann::json PremiseRecord::to_json() const {
    return {{"step", step}, {"task_id", task_id}, {"p_full", p_full}, {"p_partial", p_partial}, {"nu", nu},
            {"fired", fired}};
}

RlReport rl_train(PolicyParameters& params, const PolicyParameters& ref, std::span<const Task> tasks,
                  TeacherOracle& teacher, const StudentFormat& format, const RunConfig& config, MetricsLog& log,
                  std::ostream* trajectory_dump) {
    RlReport report;
    if (tasks.empty() || config.rl.steps == 0) return report;
    const std::size_t per_step = std::min(config.rl.tasks_per_step, tasks.size());
    std::vector<std::size_t> order(tasks.size());
    std::size_t cursor = order.size(), epoch = 0;
    auto next_task = [&]() -> const Task& {
        if (cursor == order.size()) {
            std::iota(order.begin(), order.end(), 0);
            Rng rng(hash_combine(stream_seed(config.seed, rl_order_stream), epoch++));
            for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
            cursor = 0;
        }
        return tasks[order[cursor++]];
    };

    for (std::size_t step = 0; step < config.rl.steps; ++step) {
        const auto t0 = Clock::now();
        std::vector<GroupBatch> batch;
        for (std::size_t b = 0; b < per_step; ++b) {
            const Task& task = next_task();
            Rng plan_rng(hash_combine(hash_combine(stream_seed(config.seed, plan_stream), step), hash_string(task.id)));
            const auto plan = sample_rules(kNumRules, config.rl.k, config.rl.k_prime, plan_rng, task.id);
            const RolloutSeed rs{config.seed, step};
            RolloutGroup full, partial;
            try {
                full = rollout(task, plan, Scenario::full, params, teacher, format, rs, config.update.G);
                partial = rollout(task, plan, Scenario::partial, params, teacher, format, rs, config.update.G);
            } catch (const OracleError&) {
                ++report.failed_groups;
                continue;
            }
            GroupBatch group;
            group.p_full = success_rate(full.trajectories, task);
            group.p_partial = success_rate(partial.trajectories, task);
            std::vector<double> totals;
            for (const auto& t : full.trajectories) {
                group.rewards.push_back(
                    total_reward(t, task, group.p_full, group.p_partial, config.reward, &format.vocab()));
                totals.push_back(group.rewards.back().r_total);
            }
            group.advantages = normalize_advantages(totals, config.update.norm_floor, config.update.mean_only);
            const bool fired = group.p_full > config.reward.nu * group.p_partial;
            report.premises.push_back({step, task.id, group.p_full, group.p_partial, config.reward.nu, fired});
            ++report.groups;
            report.fired_groups += fired ? 1 : 0;
            if (trajectory_dump) {
                for (std::size_t g = 0; g < full.trajectories.size(); ++g)
                    *trajectory_dump << trajectory_to_json(full.trajectories[g], format, group.rewards[g].to_json())
                                            .dump()
                                     << '\n';
                for (const auto& t : partial.trajectories)
                    *trajectory_dump << trajectory_to_json(t, format).dump() << '\n';
            }
            group.trajectories = std::move(full.trajectories);
            batch.push_back(std::move(group));
        }
        if (batch.empty()) continue;
        // One gradient step per batch: the rollout policy is the pre-update policy.
        const auto r = train_step(batch, params, params, ref, format, config.update);
        report.final_mean_r_base = r.mean_r_base;
        ++report.steps;
        log.append({"rl",
                    step,
                    {{"mean_r_base", r.mean_r_base},
                     {"mean_r_total", r.mean_r_total},
                     {"dsu_rate", r.dsu_rate},
                     {"kl", r.kl},
                     {"grad_norm", r.grad_norm},
                     {"objective", r.objective},
                     {"aux_loss", r.aux_loss}},
                    ms_since(t0)});
    }
    return report;
}

nlohmann::json RunSummary::to_json() const {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    return {{"ok", ok},
            {"failed_stage", failed_stage},
            {"diagnostic", diagnostic},
            {"exit_code", exit_code},
            {"n_tasks", n_tasks},
            {"n_train", n_train},
            {"n_test", n_test},
            {"curated_tasks", curated_tasks},
            {"curated_probes", curated_probes},
            {"sft_pairs", sft_pairs},
            {"rl_tasks", rl_tasks},
            {"rl_steps", rl_steps},
            {"rl_groups", rl_groups},
            {"fired_groups", fired_groups},
            {"eval_generations", eval_generations},
            {"held_out_base", num(held_out_base)},
            {"held_out_before_rl", num(held_out_before_rl)},
            {"held_out_after_rl", num(held_out_after_rl)},
            {"inverse_before_rl", num(inverse_before_rl)},
            {"inverse_after_rl", num(inverse_after_rl)},
            {"ref_digest_before", ref_digest_before},
            {"ref_digest_after", ref_digest_after}};
}

namespace {

// State shared by the pipeline stages of one run.
struct Run {
    const RunConfig& config;
    std::filesystem::path dir;
    Environment env;
    std::unique_ptr<TeacherOracle> teacher;
    std::unique_ptr<Vocabulary> vocab;
    std::unique_ptr<StudentFormat> format;
    std::unique_ptr<PolicyParameters> base;
    std::unique_ptr<PolicyParameters> params;
    std::vector<Task> rl_tasks;
    std::vector<SftExample> sft_examples;
    MetricsLog log;
};

void stage_setup(Run& run, RunSummary& s) {
    run.config.validate();
    std::filesystem::create_directories(run.dir);
    write_json(run.dir / "config.json", run.config.to_json());
    run.env = make_environment(run.config);
    s.n_tasks = run.env.tasks.size();
    s.n_train = run.env.split.train.size();
    s.n_test = run.env.split.test.size();
    save_tasks(run.env.split.train, run.dir / "tasks_train.jsonl");
    save_tasks(run.env.split.test, run.dir / "tasks_test.jsonl");
    run.teacher = make_teacher(run.config);
}

void stage_curate(Run& run, RunSummary& s) {
    std::vector<AugmentedTuple> probes;
    const auto& train = run.env.split.train;
    if (run.config.stages.curate) {
        // the baseline student needs a vocabulary before curation; probe words are added afterwards
        run.vocab = std::make_unique<Vocabulary>(run_vocabulary(run.env.tasks, {}));
        run.format = std::make_unique<StudentFormat>(*run.vocab, run.config.max_response_tokens);
        run.base = std::make_unique<PolicyParameters>(build_base_student(run.config, run.env.tasks, *run.format));
        CurationConfig cc;
        cc.tau_hard = run.config.tau_hard;
        cc.teacher = run.teacher.get();
        cc.baseline = [&](const std::string& q) {
            return run.format->greedy_answer(*run.base, StudentFormat::question_prompt(q));
        };
        auto result = curate(train, cc, run.config.rules);
        save_audit(result.audit, run.dir / "audit.jsonl");
        std::vector<nlohmann::json> cand;
        for (const auto& p : result.candidates)
            cand.push_back({{"parent_task_id", p.parent_task_id},
                            {"rule_id", rule_name(p.rule)},
                            {"q_aug", p.q_aug},
                            {"a_aug", p.a_aug},
                            {"r_aug", p.r_aug.steps()},
                            {"passed_consistency", p.passed_consistency},
                            {"student_correct", p.student_correct}});
        write_lines(run.dir / "probes.jsonl", cand);
        std::vector<nlohmann::json> fails;
        for (const auto& f : result.failures)
            fails.push_back({{"task_id", f.task_id}, {"rule_id", f.rule}, {"reason", f.reason}});
        write_lines(run.dir / "curation_failures.jsonl", fails);
        result.dataset.provenance["seed"] = run.config.seed;
        save_dataset(result.dataset, run.dir / "dataset.jsonl");
        s.curated_tasks = result.dataset.tasks.size();
        s.curated_probes = result.dataset.probes.size();
        for (const auto& [id, t] : result.dataset.tasks) run.rl_tasks.push_back(t);
        // keep the training order of the split rather than the map order
        std::stable_sort(run.rl_tasks.begin(), run.rl_tasks.end(), [&](const Task& a, const Task& b) {
            auto pos = [&](const Task& t) {
                return std::find_if(train.begin(), train.end(), [&](const Task& x) { return x.id == t.id; }) -
                       train.begin();
            };
            return pos(a) < pos(b);
        });
        probes = result.dataset.probes;
    } else {
        run.rl_tasks = train;
        for (const auto& t : train) {
            auto g = generate_probes(t, run.config.rules, *run.teacher);
            for (auto& p : g.probes) probes.push_back(std::move(p));
        }
    }
    // extend the vocabulary with probe words only when a real teacher introduced any
    Vocabulary full = run_vocabulary(run.env.tasks, probes);
    if (!run.vocab || full.size() != run.vocab->size()) {
        if (run.base) throw InvariantError("probe text uses words outside the baseline vocabulary");
        run.vocab = std::make_unique<Vocabulary>(std::move(full));
        run.format = std::make_unique<StudentFormat>(*run.vocab, run.config.max_response_tokens);
    }
    if (!run.base)
        run.base = std::make_unique<PolicyParameters>(build_base_student(run.config, run.env.tasks, *run.format));
    run.vocab->save(run.dir / "vocab.json");
    run.base->save(run.dir / "base.ckpt");
    run.sft_examples = task_examples(run.rl_tasks, *run.teacher);
    auto pe = probe_examples(probes);
    run.sft_examples.insert(run.sft_examples.end(), pe.begin(), pe.end());
    s.rl_tasks = run.rl_tasks.size();
}

}  // namespace

RunSummary run_pipeline(const RunConfig& config) {
    RunSummary s;
    const auto& st = config.stages;
    if (!st.curate && !st.sft && !st.rl && !st.eval) return s;

    Run run{config, config.out_dir, {}, {}, {}, {}, {}, {}, {}, {}, {}};
    std::string stage = "setup";
    try {
        stage_setup(run, s);
        stage = "curate";
        stage_curate(run, s);
        run.params = std::make_unique<PolicyParameters>(*run.base);
        const auto& test = run.env.split.test;
        const auto inverse_test = inverse_only(test);
        s.held_out_base = evaluate(*run.base, *run.format, test);

        stage = "sft";
        if (st.sft) {
            const auto pairs = encode_examples(run.sft_examples, *run.format);
            s.sft_pairs = pairs.size();
            sft_train(*run.params, pairs, config.sft, stream_seed(config.seed, sft_stream), &run.log);
            run.params->save(run.dir / "sft.ckpt");
        }
        const PolicyParameters ref = *run.params;  // frozen from here on
        s.ref_digest_before = ref.digest();
        if (st.eval) {
            s.held_out_before_rl = evaluate(*run.params, *run.format, test);
            s.inverse_before_rl = evaluate(*run.params, *run.format, inverse_test);
            run.log.append({"eval", 0, {{"accuracy", s.held_out_before_rl}}, 0.0});
        }

        stage = "rl";
        if (st.rl) {
            std::ofstream dump;
            if (config.rl.dump_trajectories) dump.open(run.dir / "trajectories.jsonl");
            auto r = rl_train(*run.params, ref, run.rl_tasks, *run.teacher, *run.format, config, run.log,
                              config.rl.dump_trajectories ? &dump : nullptr);
            s.rl_steps = r.steps;
            s.rl_groups = r.groups;
            s.fired_groups = r.fired_groups;
            std::vector<nlohmann::json> premises;
            for (const auto& p : r.premises) premises.push_back(p.to_json());
            write_lines(run.dir / "premises.jsonl", premises);
        }
        s.ref_digest_after = ref.digest();
        run.params->save(run.dir / "final.ckpt");

        stage = "eval";
        if (st.eval) {
            s.held_out_after_rl = evaluate(*run.params, *run.format, test, &s.eval_generations);
            s.inverse_after_rl = evaluate(*run.params, *run.format, inverse_test);
            run.log.append({"eval", std::max<std::size_t>(1, s.rl_steps), {{"accuracy", s.held_out_after_rl}}, 0.0});
        }
        stage = "report";
        export_metrics(run.log.rows(), run.dir / "metrics.csv");
        export_timing(run.log.rows(), run.dir / "timing.csv");
        bool has_rl = std::any_of(run.log.rows().begin(), run.log.rows().end(),
                                  [](const MetricsRow& r) { return r.stage == "rl"; });
        if (has_rl)
            plot_emit(run.log.rows(), run.dir / "rewards.svg",
                      smoothing_window(s.rl_steps, config.smoothing_fraction));
    } catch (const std::exception& e) {
        s.ok = false;
        s.failed_stage = stage;
        s.diagnostic = e.what();
        s.exit_code = exit_code_for(e);
    }
    s.metrics = run.log.rows();
    if (std::filesystem::exists(run.dir)) {
        try {
            write_json(run.dir / "summary.json", s.to_json());
        } catch (const std::exception&) {
        }
    }
    return s;
}

nlohmann::json TheoremReport::to_json() const {
    nlohmann::json rs = nlohmann::json::array();
    for (const auto& r : rows)
        rs.push_back({{"seed", r.seed},
                      {"delta", r.delta},
                      {"before", r.before},
                      {"after", r.after},
                      {"fired_groups", r.fired_groups},
                      {"groups", r.groups},
                      {"final_mean_r_base", r.final_mean_r_base}});
    return {{"n_seeds", n_seeds},
            {"reference_delta", reference_delta},
            {"non_decreasing", non_decreasing},
            {"bonus_seeds", bonus_seeds},
            {"bonus_at_least_zero", bonus_at_least_zero},
            {"seconds", seconds},
            {"rows", rs}};
}

TheoremReport run_theorem_check(const RunConfig& config, std::size_t n_seeds, std::span<const double> delta_values) {
    if (n_seeds < 10) throw ContractError("the theorem check needs at least 10 seeds");
    if (std::find(delta_values.begin(), delta_values.end(), 0.0) == delta_values.end())
        throw ContractError("delta values must include 0");
    const auto t0 = Clock::now();
    TheoremReport report;
    report.n_seeds = n_seeds;
    report.reference_delta = *std::max_element(delta_values.begin(), delta_values.end());
    for (std::size_t i = 0; i < n_seeds; ++i) {
        RunConfig c = config;
        c.seed = config.seed + i;
        c.validate();
        Run run{c, {}, {}, {}, {}, {}, {}, {}, {}, {}, {}};
        RunSummary scratch;
        run.env = make_environment(c);
        run.teacher = make_teacher(c);
        // curation writes its records under the run directory; keep them out of the way
        run.dir = std::filesystem::temp_directory_path() / ("exgrpo_theorem_" + std::to_string(c.seed));
        std::filesystem::create_directories(run.dir);
        stage_curate(run, scratch);
        PolicyParameters sft = *run.base;
        if (c.stages.sft) sft_train(sft, encode_examples(run.sft_examples, *run.format), c.sft, stream_seed(c.seed, sft_stream));
        const auto& test = run.env.split.test;
        const double before = evaluate(sft, *run.format, test);

        std::map<double, TheoremRow> by_delta;
        for (double delta : delta_values) {
            RunConfig rc = c;
            rc.reward.delta = delta;
            PolicyParameters params = sft;
            MetricsLog log;
            auto r = rl_train(params, sft, run.rl_tasks, *run.teacher, *run.format, rc, log);
            TheoremRow row{c.seed, delta, before, evaluate(params, *run.format, test), r.fired_groups, r.groups,
                           r.final_mean_r_base};
            if (delta == report.reference_delta)
                report.premises.insert(report.premises.end(), r.premises.begin(), r.premises.end());
            by_delta[delta] = row;
            report.rows.push_back(row);
        }
        std::filesystem::remove_all(run.dir);
        const auto& ref_row = by_delta.at(report.reference_delta);
        if (ref_row.after >= ref_row.before) ++report.non_decreasing;
        if (ref_row.fired_groups > 0) {
            ++report.bonus_seeds;
            if (ref_row.after >= by_delta.at(0.0).after) ++report.bonus_at_least_zero;
        }
    }
    report.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    return report;
}

}  // namespace exgrpo
