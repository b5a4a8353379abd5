#include "mpcimit/rmpc.hpp"

#include <cmath>

namespace mpcimit {

EllipsoidLevelSet invariant_tube(const Matrix& A_K, const Matrix& K, double eps,
                                 double radius_cap) {
    if (!(eps > 0.0)) throw InvalidInput("invariant_tube: eps must be > 0");
    const int d = static_cast<int>(A_K.rows());
    const double sr = spectral_radius(A_K);
    if (sr >= 1.0) throw UnstableMatrix("invariant_tube: closed loop unstable");

    const double theta_max = 1.0 / (sr * sr) - 1.0;
    std::optional<Matrix> best;
    double best_metric = std::numeric_limits<double>::infinity();
    for (double frac : {0.02, 0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}) {
        const double theta = frac * theta_max;
        Matrix S;
        try {
            S = solve_discrete_lyapunov(
                std::sqrt(1.0 + theta) * A_K,
                Matrix((1.0 + 1.0 / theta) * eps * eps * Matrix::Identity(d, d)));
        } catch (const Error&) {
            continue;
        }
        const double lam_max = -min_eigenvalue_sym(Matrix(-S));
        if (std::sqrt(lam_max) > radius_cap) continue;  // must stay inside the outer ball
        const double metric = operator_norm(K * S * K.transpose());
        if (metric < best_metric) {
            best_metric = metric;
            best = S;
        }
    }
    if (!best)
        throw NonConvergence("invariant_tube: no theta yields a tube inside the outer ball");
    const Matrix P = lu_solve(*best, Matrix::Identity(d, d));
    return EllipsoidLevelSet(0.5 * (P + P.transpose()), 1.0);
}

RmpcSpec make_rmpc_spec(const LinearSystem& sys, const Matrix& Q, const Matrix& R, int N,
                        const Polytope& X, const Polytope& U, double eps, TerminalMode mode) {
    if (!(eps > 0.0)) throw InvalidInput("make_rmpc_spec: eps must be > 0");
    const LqrSolution lqr = solve_dare(sys, QuadCost(Q, R));
    const StabilityEnvelope env = stability_envelope(lqr.A_K);
    const Ball Z = min_disturbance_invariant_bound(env, eps, sys.dx());
    const EllipsoidLevelSet tube = invariant_tube(lqr.A_K, lqr.K, eps, Z.radius);
    const MpcSpec nominal = make_mpc_spec(sys, Q, R, N, X, U, mode);
    RmpcSpec spec{tightened_spec(nominal, tube, lqr.K), Z, tube, lqr.K, eps, X, U};
    return spec;
}

RmpcController::RmpcController(RmpcSpec spec, QpSettings qp_settings)
    : spec_(std::move(spec)), solver_(qp_settings) {
    spec_.base.validate();
    if (spec_.Z.dim != spec_.base.sys.dx()) throw InvalidInput("RmpcController: tube dimension");
}

void RmpcController::reset() {
    solver_.reset();
    warm_.reset();
}

// Decision vector stacks (x_bar0 .. x_barN, u_bar0 .. u_bar_{N-1}). The tube
// constraint x - x_bar0 in E enters as E's bounding box plus the penalty
// mu * (x - x_bar0)' P_tube (x - x_bar0); the multiplier is tuned by the
// caller so the exact tube constraint holds at the optimum.
QpProblem RmpcController::build(const Vector& x, double mu) const {
    const MpcSpec& b = spec_.base;
    const int dx = b.sys.dx(), du = b.sys.du(), N = b.N;
    const int n = (N + 1) * dx + N * du;
    const auto xi = [dx](int t) { return t * dx; };                       // x_bar_t, t = 0..N
    const auto ui = [dx, du, N](int t) { return (N + 1) * dx + t * du; };  // u_bar_t

    Matrix H = Matrix::Zero(n, n);
    for (int t = 0; t < N; ++t) H.block(xi(t), xi(t), dx, dx) = 2.0 * b.cost.Q;
    H.block(xi(N), xi(N), dx, dx) = 2.0 * b.cost.Pf;
    for (int t = 0; t < N; ++t) H.block(ui(t), ui(t), du, du) = 2.0 * b.cost.R;
    Vector g = Vector::Zero(n);
    H.block(xi(0), xi(0), dx, dx) += 2.0 * mu * spec_.tube.P;
    g.segment(xi(0), dx) = -2.0 * mu * (spec_.tube.P * x);

    Matrix A_eq = Matrix::Zero(N * dx, n);
    const Vector b_eq = Vector::Zero(N * dx);
    for (int t = 0; t < N; ++t) {
        A_eq.block(t * dx, xi(t + 1), dx, dx) = Matrix::Identity(dx, dx);
        A_eq.block(t * dx, xi(t), dx, dx) = -b.sys.A;
        A_eq.block(t * dx, ui(t), dx, du) = -b.sys.B;
    }

    const int mx = b.X.rows(), mu_rows = b.U.rows();
    int m_term = 0;
    if (std::holds_alternative<Polytope>(b.X_f))
        m_term = std::get<Polytope>(b.X_f).rows();
    else if (std::holds_alternative<EllipsoidLevelSet>(b.X_f))
        m_term = 2 * dx;
    else
        m_term = mx;

    const int m = N * mx + N * mu_rows + m_term + 2 * dx;
    Matrix A_in = Matrix::Zero(m, n);
    Vector b_in(m);
    int r = 0;
    for (int t = 0; t < N; ++t, r += mx) {  // nominal states in X_bar, incl. x_bar0
        A_in.block(r, xi(t), mx, dx) = b.X.G;
        b_in.segment(r, mx) = b.X.h;
    }
    for (int t = 0; t < N; ++t, r += mu_rows) {
        A_in.block(r, ui(t), mu_rows, du) = b.U.G;
        b_in.segment(r, mu_rows) = b.U.h;
    }
    if (std::holds_alternative<Polytope>(b.X_f)) {
        const Polytope& Xf = std::get<Polytope>(b.X_f);
        A_in.block(r, xi(N), Xf.rows(), dx) = Xf.G;
        b_in.segment(r, Xf.rows()) = Xf.h;
        r += Xf.rows();
    } else if (std::holds_alternative<EllipsoidLevelSet>(b.X_f)) {
        const auto [lb, ub] = ellipsoid_bounding_box(std::get<EllipsoidLevelSet>(b.X_f));
        A_in.block(r, xi(N), dx, dx) = Matrix::Identity(dx, dx);
        b_in.segment(r, dx) = ub;
        A_in.block(r + dx, xi(N), dx, dx) = -Matrix::Identity(dx, dx);
        b_in.segment(r + dx, dx) = -lb;
        r += 2 * dx;
    } else {
        A_in.block(r, xi(N), mx, dx) = b.X.G;
        b_in.segment(r, mx) = b.X.h;
        r += mx;
    }
    // bounding box of the tube ellipsoid around x
    const auto [tube_lb, tube_ub] = ellipsoid_bounding_box(spec_.tube);
    A_in.block(r, xi(0), dx, dx) = Matrix::Identity(dx, dx);
    b_in.segment(r, dx) = x + tube_ub;
    A_in.block(r + dx, xi(0), dx, dx) = -Matrix::Identity(dx, dx);
    b_in.segment(r + dx, dx) = tube_ub - x;

    return QpProblem(std::move(H), std::move(g), std::move(A_eq), Vector(b_eq), std::move(A_in),
                     std::move(b_in));
}

double RmpcController::solve_at(const Vector& x, double mu, QpSolution* out) {
    const QpProblem qp = build(x, mu);
    QpSolution sol = warm_ ? solver_.solve(qp, *warm_) : solver_.solve(qp);
    if (sol.status == QpStatus::Infeasible)
        throw InfeasibleState("RmpcController: problem infeasible at state");
    if (sol.status == QpStatus::MaxIters)
        throw NonConvergence("RmpcController: QP solver hit iteration limit");
    warm_ = sol.z;
    const Vector gap = x - sol.z.head(spec_.base.sys.dx());
    const double slack =
        std::sqrt(std::max(gap.dot(spec_.tube.P * gap), 0.0)) - std::sqrt(spec_.tube.level);
    if (out) *out = std::move(sol);
    return slack;
}

RmpcSolution RmpcController::solve(const Vector& x) {
    const MpcSpec& b = spec_.base;
    const int dx = b.sys.dx(), du = b.sys.du(), N = b.N;
    if (x.size() != dx || !x.allFinite()) throw InvalidInput("RmpcController: bad state");
    if (!contains(spec_.X_full, x)) throw InfeasibleState("RmpcController: state outside X");

    // Exact handling of the tube constraint: the penalty
    // mu (x - x_bar0)' P (x - x_bar0) is added to the objective and the
    // multiplier is driven to complementarity, so each subproblem stays a QP
    // while the accepted solution satisfies the exact quadratic constraint.
    // phi(mu) = dist_P(x, x_bar0(mu)) - sqrt(level) is monotone nonincreasing.
    const double tol = 1e-9 * (1.0 + std::sqrt(spec_.tube.level));
    QpSolution qp_sol;
    int iters = 0;
    double phi_lo = solve_at(x, 0.0, &qp_sol);
    if (phi_lo > tol) {
        double mu_lo = 0.0, mu_hi = 1.0, phi_hi;
        for (;;) {
            ++iters;
            phi_hi = solve_at(x, mu_hi, &qp_sol);
            if (phi_hi <= tol) break;
            mu_lo = mu_hi;
            phi_lo = phi_hi;
            mu_hi *= 10.0;
            if (mu_hi > 1e14) {
                // the nominal feasible set stays farther than the tube radius
                if (phi_hi <= 1e-6) break;
                throw InfeasibleState("RmpcController: state outside the tube-reachable set");
            }
        }
        // safeguarded secant (Illinois) on [mu_lo, mu_hi]
        while (phi_hi < -tol && mu_hi - mu_lo > 1e-12 * (1.0 + mu_hi)) {
            ++iters;
            if (iters > 200) throw NonConvergence("RmpcController: dual search did not converge");
            double mu_mid = mu_hi - phi_hi * (mu_hi - mu_lo) / (phi_hi - phi_lo);
            const double lo_guard = mu_lo + 1e-3 * (mu_hi - mu_lo);
            const double hi_guard = mu_hi - 1e-3 * (mu_hi - mu_lo);
            mu_mid = std::clamp(mu_mid, lo_guard, hi_guard);
            const double phi_mid = solve_at(x, mu_mid, &qp_sol);
            if (phi_mid > tol) {
                mu_lo = mu_mid;
                phi_lo = phi_mid;
            } else if (phi_mid < -tol) {
                mu_hi = mu_mid;
                phi_hi = phi_mid;
            } else {
                phi_hi = phi_mid;
                break;
            }
        }
        // final iterate may sit on the violating side; take mu_hi
        const Vector gap = x - qp_sol.z.head(dx);
        if (std::sqrt(std::max(gap.dot(spec_.tube.P * gap), 0.0)) >
            std::sqrt(spec_.tube.level) + 1e-6)
            solve_at(x, mu_hi, &qp_sol);
    }
    last_dual_iters_ = iters;

    RmpcSolution sol;
    sol.status = qp_sol.status;
    sol.x_bar0 = qp_sol.z.head(dx);
    sol.x_bar_seq.reserve(N + 1);
    for (int t = 0; t <= N; ++t) sol.x_bar_seq.push_back(qp_sol.z.segment(t * dx, dx));
    sol.u_bar_seq.reserve(N);
    for (int t = 0; t < N; ++t)
        sol.u_bar_seq.push_back(qp_sol.z.segment((N + 1) * dx + t * du, du));
    // V_N of the nominal pair, excluding the penalty term
    double v = sol.x_bar_seq[N].dot(b.cost.Pf * sol.x_bar_seq[N]);
    for (int t = 0; t < N; ++t)
        v += sol.x_bar_seq[t].dot(b.cost.Q * sol.x_bar_seq[t]) +
             sol.u_bar_seq[t].dot(b.cost.R * sol.u_bar_seq[t]);
    sol.objective = v;
    return sol;
}

Vector RmpcController::control(const Vector& x) {
    const RmpcSolution sol = solve(x);
    const Vector u = sol.u_bar_seq.front() + spec_.K * (x - sol.x_bar0);
    if (!contains(spec_.U_full, u, 1e-6))
        throw NonConvergence("RmpcController: control left the input set");
    return u;
}

Vector RmpcController::expert_query(const Vector& x) {
    const Vector projected = project_box(spec_.X_full, x);
    try {
        return control(projected);
    } catch (const InfeasibleState& e) {
        throw ExpertInfeasible(std::string("expert query failed: ") + e.what());
    }
}

bool RmpcController::is_feasible(const Vector& x) {
    try {
        solve(x);
        return true;
    } catch (const InfeasibleState&) {
        return false;
    }
}

TubeReport tube_diagnostics(RmpcController& ctl, const Trajectory& traj) {
    TubeReport report;
    const QuadCost& cost = ctl.spec().base.cost;
    const double radius = ctl.spec().Z.radius;

    double prev_value = 0.0;
    double prev_stage = 0.0;
    for (int t = 0; t < static_cast<int>(traj.states.size()); ++t) {
        RmpcSolution sol;
        try {
            sol = ctl.solve(traj.states[t]);
        } catch (const Error&) {
            report.infeasible_at = t;
            break;
        }
        TubeStep step;
        step.tube_norm = (traj.states[t] - sol.x_bar0).norm();
        step.containment_ok = step.tube_norm <= radius + 1e-6;
        step.value = sol.objective;
        step.nominal_norm = sol.x_bar0.norm();
        if (t == 0) {
            step.decrease_ok = true;
        } else {
            step.decrease_ok = step.value <= prev_value - prev_stage + 1e-5;
        }
        report.all_contained = report.all_contained && step.containment_ok;
        report.all_decreasing = report.all_decreasing && step.decrease_ok;
        prev_value = step.value;
        prev_stage = cost.stage(sol.x_bar0, sol.u_bar_seq.front());
        report.steps.push_back(step);
    }
    return report;
}

}  // namespace mpcimit
