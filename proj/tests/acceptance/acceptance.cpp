// One PASS/FAIL line per acceptance criterion. Exit status is the number of failures.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "curation_fixture.hpp"
#include "exgrpo/error.hpp"
#include "exgrpo/pipeline.hpp"
#include "exgrpo/update.hpp"
#include "fixtures.hpp"

using namespace exgrpo;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Verdict {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void criterion(const std::string& name, const std::function<Verdict()>& check) {
    const auto t0 = Clock::now();
    Verdict v;
    try {
        v = check();
    } catch (const std::exception& e) {
        v = {false, std::string("threw: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(Clock::now() - t0).count();
    std::printf("%s  %-28s %s [%.1fs]\n", v.pass ? "PASS" : "FAIL", name.c_str(), v.detail.c_str(), s);
    std::fflush(stdout);
    failures += !v.pass;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::vector<nlohmann::json> read_jsonl(const fs::path& p) {
    std::vector<nlohmann::json> out;
    std::istringstream in(fx::read_file(p));
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) out.push_back(nlohmann::json::parse(line));
    return out;
}

Verdict filter_oracle() {
    const auto t0 = Clock::now();
    std::size_t decisions = 0, mismatches = 0;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        auto inst = fixture::random_instance(1000 + seed);
        fixture::PoisonTeacher teacher(inst.poisoned);
        CurationConfig cfg;
        cfg.teacher = &teacher;
        cfg.tau_hard = inst.tau_hard;
        cfg.baseline = inst.baseline();
        auto res = curate(inst.tasks, cfg, inst.rules);
        for (std::size_t i = 0; i < inst.tasks.size(); ++i) {
            const auto e = fixture::brute_force(inst, inst.tasks[i]);
            const auto& a = res.audit[i];
            ++decisions;
            mismatches += a.kept != e.kept || a.n != std::size_t(e.n) || a.n_prime != std::size_t(e.n_prime) ||
                          a.lambda != std::size_t(e.lambda) ||
                          res.dataset.tasks.count(a.task_id) != (e.kept ? 1u : 0u);
        }
    }
    const double s = seconds_since(t0);
    return {mismatches == 0 && s < 10.0, fmt("%zu decisions, %zu mismatches", decisions, mismatches)};
}

Verdict dsu_truth_table() {
    const auto t0 = Clock::now();
    std::size_t cells = 0, wrong = 0;
    for (double nu : {1.0, 1.05, 1.1}) {
        RewardConfig cfg;
        cfg.nu = nu;
        for (int cf = 0; cf <= 4; ++cf)
            for (int cp = 0; cp <= 4; ++cp) {
                ++cells;
                // integer form of c_full/4 > nu * c_partial/4, with nu = m/100 exactly
                const int m = static_cast<int>(std::lround(nu * 100));
                const bool fire = 100 * cf > m * cp;
                wrong += (dsu_bonus(cf / 4.0, cp / 4.0, cfg) == cfg.delta) != fire;
                wrong += (dsu_bonus(cf / 4.0, cp / 4.0, cfg) == 0.0) == fire;
            }
    }
    return {wrong == 0 && seconds_since(t0) < 1.0, fmt("%zu cells, %zu wrong", cells, wrong)};
}

Verdict reward_gating() {
    const auto t0 = Clock::now();
    Task task = make_forward_task(3, Op::plus, 4, "t");
    Rng rng(2024);
    std::size_t n = 0, wrong = 0, applied = 0;
    for (int i = 0; i < 20000; ++i) {
        std::vector<DialogueTrajectory> full, partial;
        for (int g = 0; g < 4; ++g) {
            full.push_back(fx::final_only(rng.bernoulli(0.5) ? "7" : "8"));
            partial.push_back(fx::final_only(rng.bernoulli(0.5) ? "7" : "", Scenario::partial));
        }
        RewardConfig cfg;
        cfg.delta = 0.05 + 0.2 * rng.uniform();
        cfg.nu = 1.0 + 0.1 * rng.uniform();
        const double pf = success_rate(full, task), pp = success_rate(partial, task);
        const bool fired = pf > cfg.nu * pp;
        for (const auto& t : full) {
            const int outcome = t.final_answer == "7";
            const auto r = total_reward(t, task, pf, pp, cfg);
            const double want = outcome + (outcome == 1 && fired ? cfg.delta : 0.0);
            ++n;
            applied += r.dsu_applied;
            wrong += r.r_total != want || r.dsu_applied != (outcome == 1 && fired) || r.r_outcome != outcome;
        }
    }
    return {wrong == 0 && applied > 0 && seconds_since(t0) < 1.0,
            fmt("%zu trajectories, %zu bonus grants, %zu wrong", n, applied, wrong)};
}

Verdict advantage_normalization() {
    const auto t0 = Clock::now();
    Rng rng(99);
    double worst_mean = 0, worst_std = 0;
    std::size_t degenerate = 0, bad_zero = 0;
    for (int i = 0; i < 1000; ++i) {
        std::vector<double> r(2 + rng.below(15));
        const bool flat = rng.below(10) == 0;
        const double c = rng.uniform();
        for (double& x : r) x = flat ? c : (rng.bernoulli(0.5) ? 1.0 + 0.1 * rng.below(2) : 0.0) + 0.01 * rng.uniform();
        auto u = normalize_advantages(r, 1e-8);
        if (flat) {
            ++degenerate;
            for (double x : u) bad_zero += x != 0.0;
            continue;
        }
        double mean = 0;
        for (double x : u) mean += x;
        mean /= u.size();
        double var = 0;
        for (double x : u) var += (x - mean) * (x - mean);
        worst_mean = std::max(worst_mean, std::abs(mean));
        worst_std = std::max(worst_std, std::abs(std::sqrt(var / u.size()) - 1.0));
    }
    return {worst_mean < 1e-9 && worst_std < 1e-6 && bad_zero == 0 && seconds_since(t0) < 1.0,
            fmt("max|mean| %.2e, max|std-1| %.2e, %zu degenerate groups", worst_mean, worst_std, degenerate)};
}

/// Central differences on `n` random coordinates of the rows the gradient touches.
template <class F>
double fd_error(PolicyParameters& params, const Gradient& grad, F f, std::size_t n, std::uint64_t seed,
                std::size_t* checked) {
    std::vector<std::size_t> coords;
    for (const auto& [row, vals] : grad.rows())
        for (std::size_t c = 0; c < vals.size(); ++c) coords.push_back(row * grad.cols() + c);
    Rng rng(seed);
    double worst = 0.0;
    const double h = 1e-5;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t idx = coords[rng.below(coords.size())];
        double& v = params.theta()[idx];
        const double saved = v;
        v = saved + h;
        const double up = f();
        v = saved - h;
        const double down = f();
        v = saved;
        worst = std::max(worst, fx::rel_err(grad.at(idx), (up - down) / (2 * h)));
        ++*checked;
    }
    return worst;
}

Verdict gradient_checks() {
    const auto t0 = Clock::now();
    fx::World w;
    std::size_t n_sft = 0, n_sur = 0, n_aux = 0;

    auto p = w.policy(21, 0.5);
    std::vector<SftPair> pairs;
    for (RuleId r : {RuleId::R1, RuleId::R4, RuleId::R9}) {
        auto probe = w.teacher.generate_probe(w.task, r);
        pairs.push_back({w.format.encode(StudentFormat::probe_prompt(probe.q_aug)),
                         w.format.target(probe.r_aug, probe.a_aug)});
    }
    auto sft = sft_loss_and_grad(p, pairs);
    const double e_sft = fd_error(p, sft.grad, [&] { return sft_loss_and_grad(p, pairs).loss; }, 40, 1, &n_sft);

    auto old = w.policy(22, 0.5);
    PolicyParameters ref = old;
    fx::randomize(ref, 5, 0.5);
    auto group = w.roll(old, w.plan(22));
    PolicyParameters params = old;
    Rng jr(6);
    for (double& v : params.theta()) v += 0.005 * (2 * jr.uniform() - 1);
    const std::vector<double> u{1.2, -0.4, 0.7, -1.5};
    UpdateConfig cfg;
    auto s = surrogate_loss_and_grad(group.trajectories, u, params, old, ref, cfg);
    bool interior = true;
    for (double r : s.ratios) interior &= std::abs(r - 1.0) < cfg.epsilon;
    const double e_sur = fd_error(
        params, s.grad, [&] { return surrogate_loss_and_grad(group.trajectories, u, params, old, ref, cfg).objective; },
        40, 2, &n_sur);

    auto aux = sft_aux_loss_and_grad(group.trajectories, params, w.format);
    const double e_aux = fd_error(
        params, aux.grad, [&] { return sft_aux_loss_and_grad(group.trajectories, params, w.format).loss; }, 40, 3,
        &n_aux);

    const double worst = std::max({e_sft, e_sur, e_aux});
    return {interior && worst < 1e-4 && std::min({n_sft, n_sur, n_aux}) >= 20 && seconds_since(t0) < 30.0,
            fmt("max rel err sft %.1e / surrogate %.1e / aux %.1e over %zu+%zu+%zu coords", e_sft, e_sur, e_aux,
                n_sft, n_sur, n_aux)};
}

Verdict clip_behavior() {
    const bool term = clipped_term(1.5, 1.0, 0.2) == 1.2;
    const bool active = clip_active(1.5, 1.0, 0.2);

    // move along the final response's log-prob gradient until its ratio is 1.5, then check that
    // a positive advantage sends no gradient through the ratio
    fx::World w;
    auto old = w.policy(31, 0.5);
    auto group = w.roll(old, w.plan(31));
    std::vector<DialogueTrajectory> pair{group.trajectories[0], group.trajectories[1]};
    const auto& t = pair[0];
    Gradient dir = old.zero_gradient();
    log_prob_and_grad(old, t.final_context, t.final_response, 1.0, dir);
    const double lp_old = log_prob(old, t.final_context, t.final_response);
    auto at = [&](double step) {
        PolicyParameters p = old;
        p.apply(dir, step);
        return p;
    };
    double lo = 0.0, hi = 1.0;
    while (std::exp(log_prob(at(hi), t.final_context, t.final_response) - lp_old) < 1.5) hi *= 2;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (std::exp(log_prob(at(mid), t.final_context, t.final_response) - lp_old) < 1.5 ? lo : hi) = mid;
    }
    PolicyParameters params = at(hi);
    UpdateConfig cfg;
    cfg.beta = 0.0;
    const std::vector<double> u{1.0, 0.0};
    auto s = surrogate_loss_and_grad(pair, u, params, old, old, cfg);
    const bool rho_ok = std::abs(s.ratios[0] - 1.5) < 1e-9;
    const bool in_objective = std::abs(2.0 * s.surrogate - 1.2) < 1e-12;
    const bool no_grad = s.grad.norm() == 0.0;

    // inside the trust region clipped and unclipped agree exactly
    PolicyParameters near = old;
    Rng jr(8);
    for (double& v : near.theta()) v += 0.002 * (2 * jr.uniform() - 1);
    const std::vector<double> u4{0.5, -1.0, 1.5, -0.25};
    auto a = surrogate_loss_and_grad(group.trajectories, u4, near, old, old, UpdateConfig{}, true);
    auto b = surrogate_loss_and_grad(group.trajectories, u4, near, old, old, UpdateConfig{}, false);
    const bool inert = a.objective == b.objective && a.grad.dense() == b.grad.dense();
    return {term && active && rho_ok && in_objective && no_grad && inert,
            fmt("term %.17g, rollout rho %.12f, |grad| %.1e, clipped-unclipped diff %.1e", clipped_term(1.5, 1.0, 0.2),
                s.ratios[0], s.grad.norm(), std::abs(a.objective - b.objective))};
}

RunConfig default_run(const fs::path& dir, std::uint64_t seed = 0) {
    RunConfig c;
    c.seed = seed;
    c.out_dir = dir;
    return c;
}

Verdict theorem(std::size_t n_seeds) {
    RunConfig c = default_run({});
    const std::vector<double> deltas{0.0, 0.1};
    auto r = run_theorem_check(c, n_seeds, deltas);
    const bool ok = r.non_decreasing >= 18 && r.bonus_at_least_zero >= 14 && r.seconds < 600.0;
    return {ok, fmt("non-decreasing %zu/%zu, delta 0.1 >= delta 0 in %zu of %zu bonus seeds, %.0fs",
                    r.non_decreasing, r.n_seeds, r.bonus_at_least_zero, r.bonus_seeds, r.seconds)};
}

struct DefaultRun {
    RunSummary summary;
    double seconds = 0.0;
};

DefaultRun default_pipeline(const fs::path& dir) {
    fs::remove_all(dir);
    const auto t0 = Clock::now();
    DefaultRun r{run_pipeline(default_run(dir)), 0.0};
    r.seconds = seconds_since(t0);
    if (!r.summary.ok) throw std::runtime_error(r.summary.failed_stage + ": " + r.summary.diagnostic);
    return r;
}

Verdict reward_trend(const DefaultRun& run) {
    std::vector<double> steps, base;
    for (const auto& row : run.summary.metrics)
        if (row.stage == "rl") {
            steps.push_back(static_cast<double>(row.step));
            base.push_back(row.values.at("mean_r_base"));
        }
    const auto smooth = moving_average(base, smoothing_window(base.size(), 0.05));
    const double rho = spearman(steps, smooth);
    return {rho > 0.8 && run.seconds < 120.0,
            fmt("spearman %.3f over %zu steps, R_base %.3f -> %.3f, run %.0fs", rho, steps.size(), smooth.front(),
                smooth.back(), run.seconds)};
}

Verdict determinism(const fs::path& a, const fs::path& b) {
    std::size_t same = 0, total = 0;
    std::string diff;
    for (const char* f : {"metrics.csv", "base.ckpt", "sft.ckpt", "final.ckpt"}) {
        ++total;
        const bool eq = fs::exists(a / f) && fx::read_file(a / f) == fx::read_file(b / f);
        same += eq;
        if (!eq) diff += std::string(" ") + f;
    }
    return {same == total, fmt("%zu/%zu artefacts bitwise identical%s", same, total, diff.c_str())};
}

Verdict audit_reconciliation(const fs::path& dir, const RunSummary& s) {
    auto audit = read_jsonl(dir / "audit.jsonl");
    auto probes = read_jsonl(dir / "probes.jsonl");
    std::map<std::string, std::array<std::size_t, 3>> counted;
    for (const auto& p : probes) {
        auto& n = counted[p["parent_task_id"]];
        const bool consistent = p["passed_consistency"];
        ++n[0];
        n[1] += consistent;
        n[2] += consistent && p["student_correct"].get<bool>();
    }
    std::size_t mismatched = 0, kept = 0;
    for (const auto& a : audit) {
        const auto& n = counted[a["task_id"]];
        mismatched += a["N"] != n[0] || a["N_prime"] != n[1] || a["Lambda"] != n[2];
        kept += a["kept"].get<bool>();
    }
    const bool ok = s.n_tasks == 100 && audit.size() == s.n_train && mismatched == 0 && kept == s.curated_tasks;
    return {ok, fmt("%zu-task run, %zu audited train tasks, %zu probe records, %zu mismatches, %zu kept", s.n_tasks,
                    audit.size(), probes.size(), mismatched, kept)};
}

Verdict reversal(const fs::path& root, std::size_t n_seeds) {
    std::size_t wins = 0, counted = 0;
    double sum_sft = 0, sum_rl = 0;
    for (std::size_t seed = 0; seed < n_seeds; ++seed) {
        RunConfig c = default_run(root / ("seed" + std::to_string(seed)), seed);
        c.environment.spec.include_inverse = true;
        c.environment.split = SplitMode::reversal;
        auto s = run_pipeline(c);
        fs::remove_all(c.out_dir);
        if (!s.ok) throw std::runtime_error("seed " + std::to_string(seed) + ": " + s.diagnostic);
        if (std::isnan(s.inverse_before_rl)) continue;
        ++counted;
        wins += s.inverse_after_rl >= s.inverse_before_rl;
        sum_sft += s.inverse_before_rl;
        sum_rl += s.inverse_after_rl;
    }
    return {counted == n_seeds && wins >= 14,
            fmt("ExGRPO >= SFT-only on inverse tasks in %zu/%zu seeds (mean %.3f vs %.3f)", wins, n_seeds,
                sum_rl / std::max<std::size_t>(1, counted), sum_sft / std::max<std::size_t>(1, counted))};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance checks"};
    fs::path work = fs::temp_directory_path() / "exgrpo_acceptance";
    std::size_t seeds = 20;
    app.add_option("--work-dir", work, "scratch directory for pipeline runs");
    app.add_option("--seeds", seeds, "seed count for the multi-seed checks");
    CLI11_PARSE(app, argc, argv);
    fs::create_directories(work);

    criterion("filter-oracle equivalence", filter_oracle);
    criterion("dsu truth table", dsu_truth_table);
    criterion("reward gating", reward_gating);
    criterion("advantage normalization", advantage_normalization);
    criterion("gradient checks", gradient_checks);
    criterion("clip behavior", clip_behavior);
    criterion("theorem desk-scale", [&] { return theorem(seeds); });

    DefaultRun a, b;
    std::string run_error;
    try {
        a = default_pipeline(work / "default_a");
        b = default_pipeline(work / "default_b");
    } catch (const std::exception& e) {
        run_error = e.what();
    }
    auto needs_runs = [&](auto f) {
        return [&, f] { return run_error.empty() ? f() : Verdict{false, "default run failed: " + run_error}; };
    };
    criterion("reward dynamics trend", needs_runs([&] { return reward_trend(a); }));
    criterion("reversal generalization", [&] { return reversal(work / "reversal", seeds); });
    criterion("pipeline determinism", needs_runs([&] { return determinism(work / "default_a", work / "default_b"); }));
    criterion("stage audit", needs_runs([&] { return audit_reconciliation(work / "default_a", a.summary); }));

    std::printf("%d failed\n", failures);
    return failures;
}
