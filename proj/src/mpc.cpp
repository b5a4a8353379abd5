#include "mpcimit/mpc.hpp"

#include <cmath>

namespace mpcimit {

const char* to_string(TerminalMode m) {
    switch (m) {
        case TerminalMode::LqrCost: return "LqrCost";
        case TerminalMode::LqrCostAndSet: return "LqrCostAndSet";
        case TerminalMode::None: return "None";
    }
    return "Unknown";
}

void MpcSpec::validate() const {
    if (N < 1) throw InvalidInput("MpcSpec: N must be >= 1");
    if (X.dim() != sys.dx() || U.dim() != sys.du()) throw InvalidInput("MpcSpec: set dimensions");
    if (cost.Q.rows() != sys.dx() || cost.R.rows() != sys.du())
        throw InvalidInput("MpcSpec: cost dimensions");
    if (terminal_mode != TerminalMode::None) {
        const LqrSolution lqr = solve_dare(sys, cost);
        if ((cost.Pf - lqr.P).norm() > 1e-8 * (1.0 + lqr.P.norm()))
            throw InvalidInput("MpcSpec: Pf must equal the Riccati solution for LQR terminal modes");
    }
    if (terminal_mode == TerminalMode::LqrCostAndSet &&
        std::holds_alternative<std::monostate>(X_f))
        throw InvalidInput("MpcSpec: LqrCostAndSet requires a terminal set");
}

MpcSpec make_mpc_spec(const LinearSystem& sys, const Matrix& Q, const Matrix& R, int N,
                      const Polytope& X, const Polytope& U, TerminalMode mode) {
    const LqrSolution lqr = solve_dare(sys, QuadCost(Q, R));
    MpcSpec spec{sys, QuadCost(Q, R, lqr.P), N, X, U, std::monostate{}, mode};
    if (mode == TerminalMode::None) spec.cost = QuadCost(Q, R, Q);
    if (mode == TerminalMode::LqrCostAndSet) {
        const InvariantSetReport inv = max_positive_invariant(lqr.A_K, X, U, lqr.K);
        if (!inv.converged)
            throw NonConvergence("make_mpc_spec: invariant set iteration did not converge");
        spec.X_f = inv.O_inf;
    }
    spec.validate();
    return spec;
}

QpProblem build_qp(const MpcSpec& spec, const Vector& x0, double terminal_shrink) {
    const int dx = spec.sys.dx(), du = spec.sys.du(), N = spec.N;
    if (x0.size() != dx || !x0.allFinite()) throw InvalidInput("build_qp: bad initial state");

    const int n = N * dx + N * du;
    const auto xi = [dx](int t) { return (t - 1) * dx; };          // x_t, t = 1..N
    const auto ui = [dx, du, N](int t) { return N * dx + t * du; };  // u_t, t = 0..N-1

    Matrix H = Matrix::Zero(n, n);
    for (int t = 1; t < N; ++t) H.block(xi(t), xi(t), dx, dx) = 2.0 * spec.cost.Q;
    H.block(xi(N), xi(N), dx, dx) = 2.0 * spec.cost.Pf;
    for (int t = 0; t < N; ++t) H.block(ui(t), ui(t), du, du) = 2.0 * spec.cost.R;

    Matrix A_eq = Matrix::Zero(N * dx, n);
    Vector b_eq = Vector::Zero(N * dx);
    for (int t = 0; t < N; ++t) {
        A_eq.block(t * dx, xi(t + 1), dx, dx) = Matrix::Identity(dx, dx);
        A_eq.block(t * dx, ui(t), dx, du) = -spec.sys.B;
        if (t == 0)
            b_eq.head(dx) = spec.sys.A * x0;
        else
            A_eq.block(t * dx, xi(t), dx, dx) = -spec.sys.A;
    }

    // inequality rows: states x_1..x_{N-1}, inputs, then the terminal block
    const int mx = spec.X.rows(), mu = spec.U.rows();
    int m_term = 0;
    if (std::holds_alternative<Polytope>(spec.X_f))
        m_term = std::get<Polytope>(spec.X_f).rows();
    else if (std::holds_alternative<EllipsoidLevelSet>(spec.X_f))
        m_term = 2 * dx;
    else
        m_term = mx;

    const int m = (N - 1) * mx + N * mu + m_term;
    Matrix A_in = Matrix::Zero(m, n);
    Vector b_in(m);
    int r = 0;
    for (int t = 1; t < N; ++t, r += mx) {
        A_in.block(r, xi(t), mx, dx) = spec.X.G;
        b_in.segment(r, mx) = spec.X.h;
    }
    for (int t = 0; t < N; ++t, r += mu) {
        A_in.block(r, ui(t), mu, du) = spec.U.G;
        b_in.segment(r, mu) = spec.U.h;
    }
    if (std::holds_alternative<Polytope>(spec.X_f)) {
        const Polytope& Xf = std::get<Polytope>(spec.X_f);
        A_in.block(r, xi(N), Xf.rows(), dx) = Xf.G;
        b_in.segment(r, Xf.rows()) = Xf.h;
    } else if (std::holds_alternative<EllipsoidLevelSet>(spec.X_f)) {
        const auto [lb, ub] = ellipsoid_bounding_box(std::get<EllipsoidLevelSet>(spec.X_f));
        A_in.block(r, xi(N), dx, dx) = Matrix::Identity(dx, dx);
        b_in.segment(r, dx) = terminal_shrink * ub;
        A_in.block(r + dx, xi(N), dx, dx) = -Matrix::Identity(dx, dx);
        b_in.segment(r + dx, dx) = -terminal_shrink * lb;
    } else {
        A_in.block(r, xi(N), mx, dx) = spec.X.G;
        b_in.segment(r, mx) = spec.X.h;
    }

    return QpProblem(std::move(H), Vector::Zero(n), std::move(A_eq), std::move(b_eq),
                     std::move(A_in), std::move(b_in));
}

MpcController::MpcController(MpcSpec spec, QpSettings qp_settings)
    : spec_(std::move(spec)), solver_(qp_settings), feasibility_solver_(qp_settings) {
    spec_.validate();
}

void MpcController::reset() {
    solver_.reset();
    feasibility_solver_.reset();
    warm_.reset();
}

MpcSolution MpcController::solve(const Vector& x) {
    if (x.size() != spec_.sys.dx() || !x.allFinite())
        throw InvalidInput("MpcController: bad state");
    if (!contains(spec_.X, x)) throw InfeasibleState("MpcController: state outside X");

    const bool ellipsoidal = std::holds_alternative<EllipsoidLevelSet>(spec_.X_f);
    const int dx = spec_.sys.dx(), du = spec_.sys.du(), N = spec_.N;

    // Bounding-box retry ladder for an ellipsoidal terminal set; the final
    // round scales down to a box guaranteed inside the ellipsoid.
    double shrinks[5] = {1.0, 0.9, 0.81, 0.729, 0.5};
    if (ellipsoidal) {
        const EllipsoidLevelSet& E = std::get<EllipsoidLevelSet>(spec_.X_f);
        const auto [lb, ub] = ellipsoid_bounding_box(E);
        const double lam_max = -min_eigenvalue_sym(-E.P);
        double s_last = 1.0;
        for (int i = 0; i < dx; ++i)
            s_last = std::min(s_last, std::sqrt(E.level / (dx * lam_max)) / ub[i]);
        shrinks[4] = 0.999 * s_last;
    }

    QpSolution qp_sol;
    for (int round = 0;; ++round) {
        const QpProblem qp = build_qp(spec_, x, shrinks[round]);
        qp_sol = warm_ ? solver_.solve(qp, *warm_) : solver_.solve(qp);
        if (qp_sol.status == QpStatus::Infeasible)
            throw InfeasibleState("MpcController: problem infeasible at state");
        if (qp_sol.status == QpStatus::MaxIters)
            throw NonConvergence("MpcController: QP solver hit iteration limit");
        if (!ellipsoidal) break;
        const Vector x_N = qp_sol.z.segment((N - 1) * dx, dx);
        if (contains(std::get<EllipsoidLevelSet>(spec_.X_f), x_N, 1e-9)) break;
        if (round >= 4)
            throw NonConvergence("MpcController: terminal set shrink rounds exhausted");
    }
    warm_ = qp_sol.z;

    MpcSolution sol;
    sol.status = qp_sol.status;
    sol.objective = qp_sol.objective + x.dot(spec_.cost.Q * x);
    sol.x_seq.reserve(N + 1);
    sol.x_seq.push_back(x);
    for (int t = 1; t <= N; ++t) sol.x_seq.push_back(qp_sol.z.segment((t - 1) * dx, dx));
    sol.u_seq.reserve(N);
    for (int t = 0; t < N; ++t) sol.u_seq.push_back(qp_sol.z.segment(N * dx + t * du, du));
    for (int t = 0; t < N; ++t) {
        const Vector next = spec_.sys.A * sol.x_seq[t] + spec_.sys.B * sol.u_seq[t];
        sol.dynamics_residual =
            std::max(sol.dynamics_residual, (sol.x_seq[t + 1] - next).cwiseAbs().maxCoeff());
    }
    return sol;
}

Vector MpcController::control(const Vector& x) { return solve(x).u_seq.front(); }

bool MpcController::is_feasible(const Vector& x) {
    if (x.size() != spec_.sys.dx() || !x.allFinite()) return false;
    if (!contains(spec_.X, x)) return false;
    QpProblem qp = build_qp(spec_, x);
    qp.H.setZero();
    const QpSolution sol = feasibility_solver_.solve(qp);
    if (sol.status == QpStatus::MaxIters)
        throw NonConvergence("MpcController: feasibility QP hit iteration limit");
    return sol.status == QpStatus::Optimal;
}

MpcSpec tightened_spec(const MpcSpec& spec, const Ball& Z, const Matrix& K) {
    if (Z.dim != spec.sys.dx()) throw InvalidInput("tightened_spec: tube dimension");
    if (K.rows() != spec.sys.du() || K.cols() != spec.sys.dx())
        throw InvalidInput("tightened_spec: gain shape");

    const auto X_bar = pontryagin_diff(spec.X, Z);
    if (!X_bar) throw EmptyTightenedSet("tightened_spec: X - Z is empty");
    // K Z is outer-bounded by the input-space ball of radius ||K|| r
    const Ball KZ(operator_norm(K) * Z.radius, spec.sys.du());
    const auto U_bar = pontryagin_diff(spec.U, KZ);
    if (!U_bar) throw EmptyTightenedSet("tightened_spec: U - KZ is empty");

    MpcSpec out = spec;
    out.X = *X_bar;
    out.U = *U_bar;
    out.X_f = std::monostate{};
    if (spec.terminal_mode == TerminalMode::LqrCostAndSet) {
        const Matrix A_K = spec.sys.A + spec.sys.B * K;
        const InvariantSetReport inv = max_positive_invariant(A_K, out.X, out.U, K);
        if (!inv.converged)
            throw NonConvergence("tightened_spec: invariant set iteration did not converge");
        out.X_f = inv.O_inf;
    }
    out.validate();
    return out;
}

MpcSpec tightened_spec(const MpcSpec& spec, const EllipsoidLevelSet& tube, const Matrix& K) {
    if (tube.dim() != spec.sys.dx()) throw InvalidInput("tightened_spec: tube dimension");
    if (K.rows() != spec.sys.du() || K.cols() != spec.sys.dx())
        throw InvalidInput("tightened_spec: gain shape");

    const auto X_bar = pontryagin_diff(spec.X, tube);
    if (!X_bar) throw EmptyTightenedSet("tightened_spec: X - E is empty");

    const Polytope& U = spec.U;
    Vector h_new(U.rows());
    for (int i = 0; i < U.rows(); ++i) {
        h_new[i] = U.h[i] - support_of_image(tube, K, U.G.row(i).transpose());
        if (h_new[i] < 0.0) throw EmptyTightenedSet("tightened_spec: U - K E is empty");
    }
    Polytope U_bar;
    U_bar.G = U.G;
    U_bar.h = h_new;
    if (U.is_box) {
        U_bar.is_box = true;
        const int d = U.dim();
        U_bar.ub = h_new.head(d);
        U_bar.lb = -h_new.tail(d);
    }

    MpcSpec out = spec;
    out.X = *X_bar;
    out.U = U_bar;
    out.X_f = std::monostate{};
    if (spec.terminal_mode == TerminalMode::LqrCostAndSet) {
        const Matrix A_K = spec.sys.A + spec.sys.B * K;
        const InvariantSetReport inv = max_positive_invariant(A_K, out.X, out.U, K);
        if (!inv.converged)
            throw NonConvergence("tightened_spec: invariant set iteration did not converge");
        out.X_f = inv.O_inf;
    }
    out.validate();
    return out;
}

Vector mpc_control(const MpcSpec& spec, const Vector& x) {
    MpcController ctl(spec);
    return ctl.control(x);
}

bool is_feasible(const MpcSpec& spec, const Vector& x) {
    MpcController ctl(spec);
    return ctl.is_feasible(x);
}

}  // namespace mpcimit
