#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <memory>

#include "mpcimit/harness.hpp"

namespace fs = std::filesystem;
using namespace mpcimit;

namespace {

constexpr const char* kConfigHelp =
    "Flat key = value config file. Keys: d, a_source (paper|random), system_seed, q_scale, "
    "r_scale, n_horizon, t_imitation, eps, schedule (flat|theory), ell, delta, algorithms "
    "(bc,forward,forward_switch,bc_switch), budgets, repeats, test_states, expert "
    "(robust|nominal), terminal_set (on|off), epochs, learning_rate, out_dir, root_seed. "
    "Unknown keys are errors.";

struct TrainedPolicy {
    std::shared_ptr<MlpPolicy> flat;
    std::shared_ptr<TimeVaryingPolicy> staged;

    ControlFn fn() const {
        if (flat) {
            auto p = flat;
            return [p](int, const Vector& x) { return p->forward(x); };
        }
        auto p = staged;
        return [p](int t, const Vector& x) { return p->control(t, x); };
    }
};

Algorithm parse_algorithm(const std::string& name) {
    if (name == "bc") return Algorithm::BehaviorCloning;
    if (name == "forward") return Algorithm::Forward;
    if (name == "forward_switch") return Algorithm::ForwardSwitch;
    throw ConfigError("unknown algorithm '" + name + "' (use bc|forward|forward_switch)");
}

TrainedPolicy train_one(const ExperimentConfig& cfg, Algorithm algorithm, int budget) {
    const BenchmarkSystem bench = make_benchmark_system(cfg.d, cfg.a_source, cfg.system_seed);
    const Matrix Q = cfg.q_scale * Matrix::Identity(cfg.d, cfg.d);
    const Matrix R = cfg.r_scale * Matrix::Identity(1, 1);
    const TerminalMode mode =
        cfg.terminal_set ? TerminalMode::LqrCostAndSet : TerminalMode::LqrCost;
    const LqrSolution lqr = solve_dare(bench.sys, QuadCost(Q, R));

    ExpertPolicy expert;
    std::shared_ptr<MpcController> nominal;
    std::shared_ptr<RmpcController> robust;
    if (cfg.expert == ExpertKind::Nominal) {
        nominal = std::make_shared<MpcController>(
            make_mpc_spec(bench.sys, Q, R, cfg.n_horizon, bench.X, bench.U, mode));
        expert = ExpertPolicy{[nominal](const Vector& x) { return nominal->control(x); },
                              [nominal](const Vector& x) { return nominal->is_feasible(x); },
                              bench.X};
    } else {
        robust = std::make_shared<RmpcController>(
            make_rmpc_spec(bench.sys, Q, R, cfg.n_horizon, bench.X, bench.U, cfg.eps, mode));
        expert = ExpertPolicy{[robust](const Vector& x) { return robust->control(x); },
                              [robust](const Vector& x) { return robust->is_feasible(x); },
                              bench.X};
    }

    TrainConfig tc;
    tc.learning_rate = cfg.learning_rate;
    tc.epochs = cfg.epochs;
    tc.rng_seed = derive_seed(cfg.root_seed, 0);

    TrainedPolicy out;
    const int per_stage = std::max(1, budget / cfg.t_imitation);
    if (algorithm == Algorithm::BehaviorCloning) {
        ImitationReport rep;
        out.flat = std::make_shared<MlpPolicy>(
            behavior_cloning(expert, bench.sys, bench.D, std::max(1, budget / cfg.t_imitation),
                             cfg.t_imitation, tc, bench.U, &rep));
        std::cout << "trained bc: labels=" << rep.expert_labels
                  << " final_loss=" << out.flat->final_loss() << "\n";
    } else if (algorithm == Algorithm::Forward) {
        ScheduleParams params{per_stage, 0.0, cfg.t_imitation, cfg.ell, cfg.eps, cfg.delta};
        out.staged = std::make_shared<TimeVaryingPolicy>(
            forward_train(expert, bench.sys, bench.D, params, cfg.schedule, tc, bench.U));
        std::cout << "trained forward: labels=" << out.staged->report.expert_labels << "\n";
    } else {
        EllipsoidLevelSet O_test = [&] {
            if (cfg.expert == ExpertKind::Robust) {
                const StabilityEnvelope envl = stability_envelope(lqr.A_K);
                const Ball Z = min_disturbance_invariant_bound(envl, cfg.eps, cfg.d);
                const auto Xb = pontryagin_diff(bench.X, Z);
                const auto Ub =
                    pontryagin_diff(bench.U, Ball(operator_norm(lqr.K) * Z.radius, 1));
                if (!Xb || !Ub) throw EmptyTightenedSet("train: eps too large");
                return lqr_levelset(lqr.P, lqr.K, *Xb, *Ub);
            }
            return lqr_levelset(lqr.P, lqr.K, bench.X, bench.U);
        }();
        ScheduleParams params{per_stage, 0.0, cfg.t_imitation, cfg.ell, cfg.eps, cfg.delta};
        out.staged = std::make_shared<TimeVaryingPolicy>(forward_switch(
            expert, bench.sys, bench.D, params, cfg.schedule, tc, bench.U, O_test, lqr.K));
        std::cout << "trained forward_switch: labels=" << out.staged->report.expert_labels
                  << " tau_inf=" << out.staged->report.tau_inf << "\n";
        for (const std::string& w : out.staged->report.warnings)
            std::cout << "warning: " << w << "\n";
    }
    return out;
}

int dispatch(int argc, char** argv) {
    CLI::App app{"explicit-controller learning toolkit for constrained linear MPC"};
    app.require_subcommand(1);

    std::string config_path, out_path, policy_path, csv_path, algorithm_name = "forward";
    int budget = 450;

    auto* bench_cmd = app.add_subcommand("bench", "run a full experiment sweep from a config");
    bench_cmd->add_option("--config", config_path, kConfigHelp)->required();
    std::string bench_out;
    bench_cmd->add_option("--out", bench_out, "override the config out_dir");

    auto* train_cmd = app.add_subcommand("train", "train one policy and serialize it");
    train_cmd->add_option("--config", config_path, kConfigHelp)->required();
    train_cmd->add_option("--algorithm", algorithm_name, "bc|forward|forward_switch");
    train_cmd->add_option("--budget", budget, "expert-label budget");
    train_cmd->add_option("--out", out_path, "output file (bc) or directory (staged)")->required();

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a serialized policy");
    eval_cmd->add_option("--config", config_path, kConfigHelp)->required();
    eval_cmd->add_option("--policy", policy_path, "policy file or directory")->required();
    eval_cmd->add_option("--out", out_path, "metrics csv (prints to stdout when omitted)");

    auto* plot_cmd = app.add_subcommand("plot", "render SVG plots from a metrics csv");
    plot_cmd->add_option("--csv", csv_path, "metrics.csv produced by bench")->required();
    plot_cmd->add_option("--out", out_path, "output directory")->required();

    auto* sysinfo_cmd = app.add_subcommand("sysinfo", "print LQR and invariant-set diagnostics");
    sysinfo_cmd->add_option("--config", config_path, kConfigHelp)->required();

    CLI11_PARSE(app, argc, argv);

    if (bench_cmd->parsed()) {
        ExperimentConfig cfg = ExperimentConfig::from_file(config_path);
        if (!bench_out.empty()) cfg.out_dir = bench_out;
        const ExperimentResult result = run_experiment(cfg);
        emit_outputs(result, cfg.out_dir);
        std::cout << "wrote " << cfg.out_dir << "/metrics.csv (" << result.rows.size()
                  << " rows, " << result.manifest.total_seconds << " s)\n";
        return 0;
    }

    if (train_cmd->parsed()) {
        const ExperimentConfig cfg = ExperimentConfig::from_file(config_path);
        const Algorithm algorithm = parse_algorithm(algorithm_name);
        const TrainedPolicy trained = train_one(cfg, algorithm, budget);
        if (trained.flat)
            trained.flat->save(out_path);
        else
            trained.staged->save(out_path);
        std::cout << "wrote " << out_path << "\n";
        return 0;
    }

    if (eval_cmd->parsed()) {
        const ExperimentConfig cfg = ExperimentConfig::from_file(config_path);
        const BenchmarkSystem bench = make_benchmark_system(cfg.d, cfg.a_source, cfg.system_seed);
        const Matrix Q = cfg.q_scale * Matrix::Identity(cfg.d, cfg.d);
        const Matrix R = cfg.r_scale * Matrix::Identity(1, 1);
        const SimEnv env{bench.sys, QuadCost(Q, R), bench.X, bench.U};

        TrainedPolicy policy;
        if (fs::is_directory(policy_path))
            policy.staged =
                std::make_shared<TimeVaryingPolicy>(TimeVaryingPolicy::load(policy_path, bench.U));
        else
            policy.flat = std::make_shared<MlpPolicy>(MlpPolicy::load(policy_path, bench.U));

        const TerminalMode mode =
            cfg.terminal_set ? TerminalMode::LqrCostAndSet : TerminalMode::LqrCost;
        ControlFn expert_fn;
        std::shared_ptr<MpcController> nominal;
        std::shared_ptr<RmpcController> robust;
        if (cfg.expert == ExpertKind::Nominal) {
            nominal = std::make_shared<MpcController>(
                make_mpc_spec(bench.sys, Q, R, cfg.n_horizon, bench.X, bench.U, mode));
            expert_fn = [nominal](int, const Vector& x) { return nominal->control(x); };
        } else {
            robust = std::make_shared<RmpcController>(
                make_rmpc_spec(bench.sys, Q, R, cfg.n_horizon, bench.X, bench.U, cfg.eps, mode));
            expert_fn = [robust](int, const Vector& x) { return robust->control(x); };
        }

        Rng rng(derive_seed(cfg.root_seed, 500000));
        std::vector<MetricRow> rows;
        double sum_cost = 0.0, sum_sat = 0.0;
        const ControlFn fn = policy.fn();
        for (int i = 0; i < cfg.test_states; ++i) {
            const Vector x0 = bench.D.sample(rng);
            const Trajectory base = rollout(env, expert_fn, x0, cfg.t_imitation);
            const Trajectory traj = rollout(env, fn, x0, cfg.t_imitation);
            sum_cost += normalized_cost(traj, base);
            sum_sat += constraint_satisfaction(traj);
        }
        MetricRow row{"eval", 0, sum_cost / cfg.test_states, sum_sat / cfg.test_states,
                      cfg.root_seed};
        if (out_path.empty()) {
            std::cout << "normalized_cost = " << row.normalized_cost << "\n"
                      << "constraint_satisfaction_ratio = " << row.constraint_satisfaction_ratio
                      << "\n";
        } else {
            write_metrics_csv({row}, out_path);
            std::cout << "wrote " << out_path << "\n";
        }
        return 0;
    }

    if (plot_cmd->parsed()) {
        const std::vector<MetricRow> rows = read_metrics_csv(csv_path);
        ExperimentResult result;
        result.rows = rows;
        result.manifest.config_text = "plotted from " + csv_path + "\n";
        result.manifest.config_hash = fnv1a_hash(result.manifest.config_text);
        emit_outputs(result, out_path);
        std::cout << "wrote plots to " << out_path << "\n";
        return 0;
    }

    if (sysinfo_cmd->parsed()) {
        const ExperimentConfig cfg = ExperimentConfig::from_file(config_path);
        const BenchmarkSystem bench = make_benchmark_system(cfg.d, cfg.a_source, cfg.system_seed);
        const Matrix Q = cfg.q_scale * Matrix::Identity(cfg.d, cfg.d);
        const Matrix R = cfg.r_scale * Matrix::Identity(1, 1);
        const LqrSolution lqr = solve_dare(bench.sys, QuadCost(Q, R));
        const StabilityEnvelope envl = stability_envelope(lqr.A_K);
        std::cout << "A =\n" << bench.sys.A << "\n";
        std::cout << "spectral_radius(A) = " << spectral_radius(bench.sys.A) << "\n";
        std::cout << "P_lqr =\n" << lqr.P << "\n";
        std::cout << "K_lqr =\n" << lqr.K << "\n";
        std::cout << "riccati_residual = " << lqr.riccati_residual << "\n";
        std::cout << "spectral_radius(A_K) = " << spectral_radius(lqr.A_K) << "\n";
        std::cout << "tau = " << envl.tau << ", rho = " << envl.rho << ", kappa = " << envl.kappa
                  << "\n";
        const Ball Z = min_disturbance_invariant_bound(envl, cfg.eps, cfg.d);
        std::cout << "tube radius kappa*eps = " << Z.radius << "\n";
        const auto Xb = pontryagin_diff(bench.X, Z);
        const auto Ub = pontryagin_diff(bench.U, Ball(operator_norm(lqr.K) * Z.radius, 1));
        if (Xb && Ub) {
            std::cout << "X_bar = box[" << Xb->lb[0] << ", " << Xb->ub[0] << "]^d\n";
            std::cout << "U_bar = box[" << Ub->lb[0] << ", " << Ub->ub[0] << "]\n";
            const EllipsoidLevelSet lvl = lqr_levelset(lqr.P, lqr.K, *Xb, *Ub);
            std::cout << "levelset c (tightened) = " << lvl.level << "\n";
        } else {
            std::cout << "tightened sets EMPTY at eps = " << cfg.eps << "\n";
        }
        const EllipsoidLevelSet lvl_full = lqr_levelset(lqr.P, lqr.K, bench.X, bench.U);
        std::cout << "levelset c (full sets) = " << lvl_full.level << "\n";
        const InvariantSetReport inv = max_positive_invariant(lqr.A_K, bench.X, bench.U, lqr.K);
        std::cout << "O_inf rows = " << inv.O_inf.rows() << ", iterations = " << inv.iterations
                  << ", converged = " << (inv.converged ? "yes" : "no") << "\n";
        return 0;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const UnknownDimension& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ExpertInfeasible& e) {
        std::cerr << "infeasible: " << e.what() << "\n";
        return 3;
    } catch (const InfeasibleState& e) {
        std::cerr << "infeasible: " << e.what() << "\n";
        return 3;
    } catch (const EmptyTightenedSet& e) {
        std::cerr << "infeasible: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
