#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mpcimit/harness.hpp"

namespace py = pybind11;
using namespace mpcimit;

namespace {

// Time-invariant expert wrapper selected by name, shared with the training
// entry points below.
struct PyExpert {
    std::shared_ptr<MpcController> nominal;
    std::shared_ptr<RmpcController> robust;
    ExpertPolicy expert;

    Vector control(const Vector& x) { return expert.control(x); }
    Vector query(const Vector& x) { return expert.query(x); }
    bool feasible(const Vector& x) { return expert.feasible(x); }
};

PyExpert make_expert_py(const BenchmarkSystem& bench, const Matrix& Q, const Matrix& R, int N,
                        const std::string& kind, double eps, bool terminal_set) {
    const TerminalMode mode = terminal_set ? TerminalMode::LqrCostAndSet : TerminalMode::LqrCost;
    PyExpert e;
    if (kind == "nominal") {
        e.nominal = std::make_shared<MpcController>(make_mpc_spec(bench.sys, Q, R, N, bench.X,
                                                                  bench.U, mode));
        auto c = e.nominal;
        e.expert = ExpertPolicy{[c](const Vector& x) { return c->control(x); },
                                [c](const Vector& x) { return c->is_feasible(x); }, bench.X};
    } else if (kind == "robust") {
        e.robust = std::make_shared<RmpcController>(
            make_rmpc_spec(bench.sys, Q, R, N, bench.X, bench.U, eps, mode));
        auto c = e.robust;
        e.expert = ExpertPolicy{[c](const Vector& x) { return c->control(x); },
                                [c](const Vector& x) { return c->is_feasible(x); }, bench.X};
    } else {
        throw InvalidInput("expert kind must be 'nominal' or 'robust'");
    }
    return e;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "neural-controller learning for constrained linear MPC";

    py::register_exception<InfeasibleState>(m, "InfeasibleStateError");
    py::register_exception<ExpertInfeasible>(m, "ExpertInfeasibleError");
    py::register_exception<NonConvergence>(m, "NonConvergenceError");

    py::class_<LinearSystem>(m, "LinearSystem")
        .def(py::init<Matrix, Matrix>(), py::arg("A"), py::arg("B"))
        .def_readonly("A", &LinearSystem::A)
        .def_readonly("B", &LinearSystem::B)
        .def_property_readonly("dx", &LinearSystem::dx)
        .def_property_readonly("du", &LinearSystem::du);

    py::class_<QuadCost>(m, "QuadCost")
        .def(py::init<Matrix, Matrix, Matrix>(), py::arg("Q"), py::arg("R"), py::arg("Pf"))
        .def(py::init<Matrix, Matrix>(), py::arg("Q"), py::arg("R"))
        .def_readonly("Q", &QuadCost::Q)
        .def_readonly("R", &QuadCost::R)
        .def_readonly("Pf", &QuadCost::Pf);

    py::class_<LqrSolution>(m, "LqrSolution")
        .def_readonly("P", &LqrSolution::P)
        .def_readonly("K", &LqrSolution::K)
        .def_readonly("A_K", &LqrSolution::A_K)
        .def_readonly("riccati_residual", &LqrSolution::riccati_residual);

    py::class_<StabilityEnvelope>(m, "StabilityEnvelope")
        .def_readonly("tau", &StabilityEnvelope::tau)
        .def_readonly("rho", &StabilityEnvelope::rho)
        .def_readonly("kappa", &StabilityEnvelope::kappa);

    m.def("solve_dare", &solve_dare, py::arg("sys"), py::arg("cost"), py::arg("max_iters") = 10000,
          py::arg("tol") = 1e-8);
    m.def("spectral_radius", &spectral_radius);
    m.def("stability_envelope", &stability_envelope, py::arg("A_K"), py::arg("k_check") = 200);
    m.def("series_constant", &series_constant);
    m.def("stage_sample_size",
          [](int n, int T, int t) { return stage_sample_size(ScheduleParams{n, 0.0, T}, t); },
          py::arg("n"), py::arg("T"), py::arg("t"));

    py::class_<Polytope>(m, "Polytope")
        .def_static("box", &Polytope::box, py::arg("lower"), py::arg("upper"))
        .def_static("from_rows", &Polytope::from_rows, py::arg("G"), py::arg("h"))
        .def_readonly("G", &Polytope::G)
        .def_readonly("h", &Polytope::h)
        .def_readonly("is_box", &Polytope::is_box)
        .def("contains", [](const Polytope& s, const Vector& x) { return contains(s, x); });

    py::class_<Ball>(m, "Ball")
        .def(py::init<double, int>(), py::arg("radius"), py::arg("dim"))
        .def_readonly("radius", &Ball::radius)
        .def("contains", [](const Ball& s, const Vector& x) { return contains(s, x); });

    py::class_<EllipsoidLevelSet>(m, "EllipsoidLevelSet")
        .def(py::init<Matrix, double>(), py::arg("P"), py::arg("level"))
        .def_readonly("P", &EllipsoidLevelSet::P)
        .def_readonly("level", &EllipsoidLevelSet::level)
        .def("contains",
             [](const EllipsoidLevelSet& s, const Vector& x) { return contains(s, x); });

    m.def("pontryagin_diff_ball",
          [](const Polytope& X, const Ball& S) { return pontryagin_diff(X, S); });
    m.def("pontryagin_diff",
          [](const Polytope& X, const Polytope& S) { return pontryagin_diff(X, S); });
    m.def("lqr_levelset", &lqr_levelset, py::arg("P"), py::arg("K"), py::arg("X"), py::arg("U"));

    py::class_<QpProblem>(m, "QpProblem")
        .def(py::init<Matrix, Vector, Matrix, Vector, Matrix, Vector>(), py::arg("H"),
             py::arg("g"), py::arg("A_eq"), py::arg("b_eq"), py::arg("A_in"), py::arg("b_in"));
    py::class_<QpSolution>(m, "QpSolution")
        .def_readonly("z", &QpSolution::z)
        .def_readonly("objective", &QpSolution::objective)
        .def_readonly("iterations", &QpSolution::iterations)
        .def_readonly("primal_residual", &QpSolution::primal_residual)
        .def_readonly("dual_residual", &QpSolution::dual_residual)
        .def_property_readonly("status",
                               [](const QpSolution& s) { return std::string(to_string(s.status)); });
    m.def("solve_qp", py::overload_cast<const QpProblem&>(&solve_qp));

    py::class_<BenchmarkSystem>(m, "BenchmarkSystem")
        .def_readonly("sys", &BenchmarkSystem::sys)
        .def_readonly("X", &BenchmarkSystem::X)
        .def_readonly("U", &BenchmarkSystem::U);
    m.def("make_benchmark_system",
          [](int d, const std::string& source, std::uint64_t seed) {
              return make_benchmark_system(d, source == "paper" ? ASource::Paper : ASource::Random,
                                           seed);
          },
          py::arg("d"), py::arg("source") = "paper", py::arg("seed") = 0);

    py::class_<PyExpert>(m, "Expert")
        .def("control", &PyExpert::control)
        .def("query", &PyExpert::query)
        .def("feasible", &PyExpert::feasible);
    m.def("make_expert", &make_expert_py, py::arg("bench"), py::arg("Q"), py::arg("R"),
          py::arg("N"), py::arg("kind") = "nominal", py::arg("eps") = 0.1,
          py::arg("terminal_set") = false);

    py::class_<MlpPolicy>(m, "MlpPolicy")
        .def_static("random", &MlpPolicy::random, py::arg("dx"), py::arg("hidden"), py::arg("du"),
                    py::arg("U"), py::arg("seed"))
        .def("forward", &MlpPolicy::forward)
        .def("raw", &MlpPolicy::raw)
        .def_property_readonly("final_loss", &MlpPolicy::final_loss)
        .def("save", &MlpPolicy::save)
        .def_static("load", &MlpPolicy::load, py::arg("path"), py::arg("U"));

    py::class_<Dataset>(m, "Dataset")
        .def(py::init<>())
        .def("add", &Dataset::add)
        .def("size", &Dataset::size);

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("learning_rate", &TrainConfig::learning_rate)
        .def_readwrite("epochs", &TrainConfig::epochs)
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("rng_seed", &TrainConfig::rng_seed)
        .def_readwrite("hidden", &TrainConfig::hidden);
    m.def("train_erm", &train_erm, py::arg("dataset"), py::arg("cfg"), py::arg("init"));
    m.def("grad_check", &grad_check, py::arg("policy"), py::arg("dataset"),
          py::arg("n_coords") = 20, py::arg("h") = 1e-5, py::arg("seed") = 7);

    py::class_<ImitationReport>(m, "ImitationReport")
        .def_readonly("expert_labels", &ImitationReport::expert_labels)
        .def_readonly("probe_rounds", &ImitationReport::probe_rounds)
        .def_readonly("probe_trajectories", &ImitationReport::probe_trajectories)
        .def_readonly("tau_inf", &ImitationReport::tau_inf)
        .def_readonly("stage_losses", &ImitationReport::stage_losses)
        .def("total_demonstrations", &ImitationReport::total_demonstrations);

    py::class_<TimeVaryingPolicy>(m, "TimeVaryingPolicy")
        .def("control",
             [](const TimeVaryingPolicy& p, int t, const Vector& x) { return p.control(t, x); })
        .def_readonly("report", &TimeVaryingPolicy::report)
        .def_property_readonly("stage_count",
                               [](const TimeVaryingPolicy& p) { return p.stages.size(); })
        .def("save", &TimeVaryingPolicy::save)
        .def_static("load", &TimeVaryingPolicy::load, py::arg("dir"), py::arg("U"));

    m.def(
        "behavior_cloning",
        [](PyExpert& expert, const BenchmarkSystem& bench, int n_traj, int T,
           const TrainConfig& cfg) {
            ImitationReport rep;
            MlpPolicy p = behavior_cloning(expert.expert, bench.sys, bench.D, n_traj, T, cfg,
                                           bench.U, &rep);
            return py::make_tuple(p, rep);
        },
        py::arg("expert"), py::arg("bench"), py::arg("n_traj"), py::arg("T"), py::arg("cfg"));

    m.def(
        "forward_train",
        [](PyExpert& expert, const BenchmarkSystem& bench, int n, int T, const TrainConfig& cfg,
           const std::string& schedule) {
            ScheduleParams params{n, 0.0, T};
            return forward_train(expert.expert, bench.sys, bench.D, params,
                                 schedule == "theory" ? ScheduleMode::Theory : ScheduleMode::Flat,
                                 cfg, bench.U);
        },
        py::arg("expert"), py::arg("bench"), py::arg("n"), py::arg("T"), py::arg("cfg"),
        py::arg("schedule") = "flat");

    m.def(
        "forward_switch",
        [](PyExpert& expert, const BenchmarkSystem& bench, int n, int T, int ell,
           const TrainConfig& cfg, const EllipsoidLevelSet& O_test, const Matrix& K,
           const std::string& schedule) {
            ScheduleParams params{n, 0.0, T, ell};
            return forward_switch(expert.expert, bench.sys, bench.D, params,
                                  schedule == "theory" ? ScheduleMode::Theory : ScheduleMode::Flat,
                                  cfg, bench.U, O_test, K);
        },
        py::arg("expert"), py::arg("bench"), py::arg("n"), py::arg("T"), py::arg("ell"),
        py::arg("cfg"), py::arg("O_test"), py::arg("K"), py::arg("schedule") = "flat");

    py::class_<Trajectory>(m, "Trajectory")
        .def_property_readonly("states",
                               [](const Trajectory& t) { return t.states; })
        .def_property_readonly("inputs", [](const Trajectory& t) { return t.inputs; })
        .def_readonly("per_step_cost", &Trajectory::per_step_cost)
        .def_property_readonly("failed", [](const Trajectory& t) { return bool(t.failure); })
        .def("total_cost", &Trajectory::total_cost);

    m.def(
        "rollout",
        [](const BenchmarkSystem& bench, const Matrix& Q, const Matrix& R,
           const std::function<Vector(int, const Vector&)>& controller, const Vector& x0, int T) {
            const SimEnv env{bench.sys, QuadCost(Q, R), bench.X, bench.U};
            return rollout(env, controller, x0, T);
        },
        py::arg("bench"), py::arg("Q"), py::arg("R"), py::arg("controller"), py::arg("x0"),
        py::arg("T"));
    m.def("normalized_cost", &normalized_cost);
    m.def("constraint_satisfaction", &constraint_satisfaction);

    m.def("run_experiment_csv",
          [](const std::string& config_text, const std::string& outdir) {
              const ExperimentConfig cfg = ExperimentConfig::parse(config_text);
              const ExperimentResult result = run_experiment(cfg);
              emit_outputs(result, outdir);
              return outdir + "/metrics.csv";
          },
          py::arg("config_text"), py::arg("outdir"));
}
