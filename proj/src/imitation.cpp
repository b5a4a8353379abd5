#include "mpcimit/imitation.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mpcimit/qp.hpp"

namespace mpcimit {

namespace fs = std::filesystem;

Vector ExpertPolicy::query(const Vector& x) const {
    Vector projected;
    if (X.is_box) {
        projected = project_box(X, x);
    } else {
        const int d = X.dim();
        QpProblem proj(2.0 * Matrix::Identity(d, d), -2.0 * x, Matrix(0, d), Vector(0), X.G, X.h);
        const QpSolution sol = solve_qp(proj);
        if (sol.status != QpStatus::Optimal)
            throw NonConvergence("ExpertPolicy: projection QP did not solve");
        projected = sol.z;
    }
    try {
        return control(projected);
    } catch (const ExpertInfeasible&) {
        throw;
    } catch (const Error& e) {
        std::ostringstream os;
        os << "expert query failed at state [" << projected.transpose() << "]: " << e.what();
        throw ExpertInfeasible(os.str());
    }
}

InitialDistribution::InitialDistribution(Vector lo, Vector hi)
    : lower(std::move(lo)), upper(std::move(hi)) {
    if (lower.size() != upper.size() || lower.size() == 0)
        throw InvalidInput("InitialDistribution: bad bounds");
    for (Eigen::Index i = 0; i < lower.size(); ++i)
        if (lower[i] > upper[i]) throw InvalidInput("InitialDistribution: lower > upper");
}

void check_support(const ExpertPolicy& expert, const InitialDistribution& D, int samples,
                   Rng& rng) {
    for (int i = 0; i < samples; ++i) {
        const Vector x = D.sample(rng);
        if (!expert.feasible(x)) {
            std::ostringstream os;
            os << "initial distribution support outside the feasible domain at ["
               << x.transpose() << "]";
            throw ExpertInfeasible(os.str());
        }
    }
}

const char* to_string(ScheduleMode m) {
    return m == ScheduleMode::Flat ? "flat" : "theory";
}

double series_constant() {
    static const double cached = [] {
        double sum = 0.0;
        for (long t = 1; t <= 1000000; ++t) {
            const double lg = std::log(static_cast<double>(t) + 1.0);
            sum += 1.0 / (static_cast<double>(t) * lg * lg);
        }
        return sum + 1.0 / std::log(1e6);  // integral tail bound
    }();
    return cached;
}

int stage_sample_size(const ScheduleParams& params, int t) {
    if (t < 0) throw InvalidInput("stage_sample_size: t must be >= 0");
    if (params.n < 2) throw InvalidInput("stage_sample_size: n must be >= 2");
    if (t == 0) return params.n;
    const double c = params.c > 0.0 ? params.c : series_constant();
    const double lg = std::log(static_cast<double>(t) + 1.0);
    const double ceil_ln2 = std::ceil(lg * lg);
    return static_cast<int>(std::ceil(c * params.n * t * ceil_ln2)) + params.n;
}

int theory_probe_count(int T, double delta) {
    if (T < 1 || delta <= 0.0 || delta >= 1.0) throw InvalidInput("theory_probe_count: bad args");
    return static_cast<int>(std::ceil(10.0 * std::log(T / delta) / delta));
}

Vector TimeVaryingPolicy::control(int t, const Vector& x, bool* tail_clamped) const {
    if (tail_clamped) *tail_clamped = false;
    if (t < 0) throw InvalidInput("TimeVaryingPolicy: negative time");
    if (tail && t >= tail->tau_inf) {
        const Vector raw = tail->K * x;
        Vector u = raw;
        if (U.is_box)
            u = raw.cwiseMax(U.lb).cwiseMin(U.ub);
        else if (!contains(U, raw, 1e-12))
            throw InvalidInput("TimeVaryingPolicy: non-box U tail clamp unsupported");
        if (tail_clamped && (u - raw).cwiseAbs().maxCoeff() > 1e-12) *tail_clamped = true;
        return u;
    }
    if (t >= static_cast<int>(stages.size()))
        throw InvalidInput("TimeVaryingPolicy: time index beyond learned stages");
    return stages[static_cast<std::size_t>(t)].forward(x);
}

Vector switched_control(const TimeVaryingPolicy& p, int t, const Vector& x, bool* tail_clamped) {
    return p.control(t, x, tail_clamped);
}

namespace {

std::string stage_file(const std::string& dir, int t) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "stage_%03d.mlp", t);
    return (fs::path(dir) / buf).string();
}

Vector rollout_states_only(const LinearSystem& sys, const std::vector<MlpPolicy>& stages,
                           const Vector& x0, int t_steps) {
    Vector x = x0;
    for (int t = 0; t < t_steps; ++t) x = sys.A * x + sys.B * stages[t].forward(x);
    return x;
}

}  // namespace

void TimeVaryingPolicy::save(const std::string& dir) const {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("TimeVaryingPolicy::save: cannot create " + dir);
    for (std::size_t t = 0; t < stages.size(); ++t) stages[t].save(stage_file(dir, static_cast<int>(t)));

    std::ofstream out(fs::path(dir) / "manifest.txt");
    if (!out) throw IoError("TimeVaryingPolicy::save: cannot write manifest");
    out << "stages = " << stages.size() << "\n";
    out << "mode = " << to_string(report.mode) << "\n";
    out << "tau_inf = " << (tail ? tail->tau_inf : -1) << "\n";
    out << "expert_labels = " << report.expert_labels << "\n";
    out << "probe_rounds = " << report.probe_rounds << "\n";
    out << "probe_trajectories = " << report.probe_trajectories << "\n";
    out << "total_demonstrations = " << report.total_demonstrations() << "\n";
    if (tail) {
        out << "K = " << tail->K.rows() << " " << tail->K.cols();
        char buf[32];
        for (Eigen::Index i = 0; i < tail->K.rows(); ++i)
            for (Eigen::Index j = 0; j < tail->K.cols(); ++j) {
                std::snprintf(buf, sizeof(buf), "%.17g", tail->K(i, j));
                out << " " << buf;
            }
        out << "\n";
    }
    out << "stage_seeds =";
    for (std::uint64_t s : report.stage_seeds) out << " " << s;
    out << "\n";
    out << "stage_losses =";
    for (double l : report.stage_losses) out << " " << l;
    out << "\n";
    for (const std::string& w : report.warnings) out << "warning = " << w << "\n";
}

TimeVaryingPolicy TimeVaryingPolicy::load(const std::string& dir, Polytope U_in) {
    std::ifstream in(fs::path(dir) / "manifest.txt");
    if (!in) throw IoError("TimeVaryingPolicy::load: cannot open manifest in " + dir);
    TimeVaryingPolicy p;
    p.U = U_in;
    int n_stages = -1, tau_inf = -1;
    Matrix K;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string key, eq;
        ls >> key >> eq;
        if (key == "stages") ls >> n_stages;
        else if (key == "tau_inf") ls >> tau_inf;
        else if (key == "mode") {
            std::string m;
            ls >> m;
            p.report.mode = (m == "theory") ? ScheduleMode::Theory : ScheduleMode::Flat;
        } else if (key == "expert_labels") ls >> p.report.expert_labels;
        else if (key == "probe_rounds") ls >> p.report.probe_rounds;
        else if (key == "probe_trajectories") ls >> p.report.probe_trajectories;
        else if (key == "K") {
            int r = 0, c = 0;
            ls >> r >> c;
            K.resize(r, c);
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) ls >> K(i, j);
        } else if (key == "stage_seeds") {
            std::uint64_t s;
            while (ls >> s) p.report.stage_seeds.push_back(s);
        } else if (key == "stage_losses") {
            double l;
            while (ls >> l) p.report.stage_losses.push_back(l);
        }
    }
    if (n_stages < 0) throw IoError("TimeVaryingPolicy::load: bad manifest");
    for (int t = 0; t < n_stages; ++t) p.stages.push_back(MlpPolicy::load(stage_file(dir, t), U_in));
    p.report.tau_inf = tau_inf;
    if (tau_inf >= 0 && K.size() > 0) p.tail = LqrTail{tau_inf, K};
    return p;
}

MlpPolicy behavior_cloning(const ExpertPolicy& expert, const LinearSystem& sys,
                           const InitialDistribution& D, int n_traj, int T,
                           const TrainConfig& cfg, const Polytope& U, ImitationReport* report) {
    if (n_traj < 1 || T < 1) throw InvalidInput("behavior_cloning: need n_traj, T >= 1");
    Rng sample_rng(derive_seed(cfg.rng_seed, 101));
    check_support(expert, D, std::min(20, n_traj), sample_rng);

    Dataset data;
    Rng rng(derive_seed(cfg.rng_seed, 1));
    for (int i = 0; i < n_traj; ++i) {
        Vector x = D.sample(rng);
        for (int t = 0; t < T; ++t) {
            const Vector u = expert.query(x);
            data.add(x, u);
            x = sys.A * x + sys.B * u;
        }
    }
    TrainConfig tc = cfg;
    tc.rng_seed = derive_seed(cfg.rng_seed, 2);
    MlpPolicy init = MlpPolicy::random(sys.dx(), cfg.hidden, sys.du(), U, derive_seed(cfg.rng_seed, 3));
    MlpPolicy trained = train_erm(data, tc, std::move(init));
    if (report) {
        report->expert_labels = n_traj * T;
        report->stage_losses = {trained.final_loss()};
        report->stage_seeds = {tc.rng_seed};
    }
    return trained;
}

namespace {

// Shared stage loop of the forward algorithms. The switch probe is run after
// each stage when probe_cfg is set.
struct SwitchProbe {
    const EllipsoidLevelSet* O_test = nullptr;
    const Matrix* K_tail = nullptr;
};

TimeVaryingPolicy forward_impl(const ExpertPolicy& expert, const LinearSystem& sys,
                               const InitialDistribution& D, const ScheduleParams& params,
                               ScheduleMode mode, const TrainConfig& cfg, const Polytope& U,
                               const SwitchProbe& probe) {
    if (params.T < 1) throw InvalidInput("forward_train: T must be >= 1");
    if (params.n < 1) throw InvalidInput("forward_train: n must be >= 1");
    if (params.ell < 1) throw InvalidInput("forward_train: ell must be >= 1");

    TimeVaryingPolicy policy;
    policy.U = U;
    policy.report.mode = mode;
    policy.report.tau_inf = params.T;

    {
        Rng support_rng(derive_seed(cfg.rng_seed, 11));
        check_support(expert, D, 20, support_rng);
    }
    if (probe.O_test && params.ell < theory_probe_count(params.T, params.delta)) {
        std::ostringstream os;
        os << "probe count ell=" << params.ell << " is below the high-confidence bound "
           << theory_probe_count(params.T, params.delta) << " for delta=" << params.delta;
        policy.report.warnings.push_back(os.str());
    }

    for (int t = 0; t < params.T; ++t) {
        const int n_t = (mode == ScheduleMode::Flat) ? params.n : stage_sample_size(params, t);
        const std::uint64_t stage_seed = derive_seed(cfg.rng_seed, 1000 + t);
        policy.report.stage_seeds.push_back(stage_seed);
        Rng rng(stage_seed);

        Dataset data;
        for (int i = 0; i < n_t; ++i) {
            const Vector x0 = D.sample(rng);
            const Vector x_t = rollout_states_only(sys, policy.stages, x0, t);
            data.add(x_t, expert.query(x_t));
        }
        policy.report.expert_labels += n_t;

        TrainConfig tc = cfg;
        tc.rng_seed = derive_seed(cfg.rng_seed, 2000 + t);
        MlpPolicy init = policy.stages.empty()
                             ? MlpPolicy::random(sys.dx(), cfg.hidden, sys.du(), U,
                                                 derive_seed(cfg.rng_seed, 3000))
                             : policy.stages.back();  // warm start from the previous stage
        policy.stages.push_back(train_erm(data, tc, std::move(init)));
        policy.report.stage_losses.push_back(policy.stages.back().final_loss());

        // switch test at probe time t+1 (skipped after the final stage)
        if (probe.O_test && t + 1 < params.T) {
            Rng probe_rng(derive_seed(cfg.rng_seed, 4000 + t));
            policy.report.probe_rounds += 1;
            policy.report.probe_trajectories += params.ell;
            bool all_inside = true;
            for (int i = 0; i < params.ell; ++i) {
                const Vector x0 = D.sample(probe_rng);
                const Vector x_probe = rollout_states_only(sys, policy.stages, x0, t + 1);
                if (!contains(*probe.O_test, x_probe)) {
                    all_inside = false;
                    break;
                }
            }
            if (all_inside) {
                policy.tail = LqrTail{t + 1, *probe.K_tail};
                policy.report.tau_inf = t + 1;
                break;
            }
        }
    }
    return policy;
}

}  // namespace

TimeVaryingPolicy forward_train(const ExpertPolicy& expert, const LinearSystem& sys,
                                const InitialDistribution& D, const ScheduleParams& params,
                                ScheduleMode mode, const TrainConfig& cfg, const Polytope& U) {
    return forward_impl(expert, sys, D, params, mode, cfg, U, SwitchProbe{});
}

TimeVaryingPolicy forward_switch(const ExpertPolicy& expert, const LinearSystem& sys,
                                 const InitialDistribution& D, const ScheduleParams& params,
                                 ScheduleMode mode, const TrainConfig& cfg, const Polytope& U,
                                 const EllipsoidLevelSet& O_test, const Matrix& K_tail) {
    if (K_tail.rows() != sys.du() || K_tail.cols() != sys.dx())
        throw InvalidInput("forward_switch: tail gain shape");
    return forward_impl(expert, sys, D, params, mode, cfg, U, SwitchProbe{&O_test, &K_tail});
}

}  // namespace mpcimit
