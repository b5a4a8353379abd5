#include "mpcimit/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace mpcimit {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double inf_norm(const Vector& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

// Equality rows get a stiffer penalty, as in standard operator-splitting
// implementations.
constexpr double kEqRhoScale = 1e3;

}  // namespace

QpProblem::QpProblem(Matrix H_in, Vector g_in, Matrix A_eq_in, Vector b_eq_in, Matrix A_in_in,
                     Vector b_in_in)
    : H(std::move(H_in)),
      g(std::move(g_in)),
      A_eq(std::move(A_eq_in)),
      b_eq(std::move(b_eq_in)),
      A_in(std::move(A_in_in)),
      b_in(std::move(b_in_in)) {
    const Eigen::Index nv = H.rows();
    if (H.cols() != nv || g.size() != nv) throw InvalidInput("QpProblem: H/g shape mismatch");
    if (A_eq.size() == 0 && A_eq.rows() == 0) A_eq.resize(0, nv);
    if (A_in.size() == 0 && A_in.rows() == 0) A_in.resize(0, nv);
    if (A_eq.cols() != nv || A_eq.rows() != b_eq.size())
        throw InvalidInput("QpProblem: equality block shape mismatch");
    if (A_in.cols() != nv || A_in.rows() != b_in.size())
        throw InvalidInput("QpProblem: inequality block shape mismatch");
    if (!H.allFinite() || !g.allFinite() || !A_eq.allFinite() || !b_eq.allFinite() ||
        !A_in.allFinite() || !b_in.allFinite())
        throw InvalidInput("QpProblem: non-finite entries");
    H = 0.5 * (H + H.transpose());
}

const char* to_string(QpStatus s) {
    switch (s) {
        case QpStatus::Optimal: return "Optimal";
        case QpStatus::Infeasible: return "Infeasible";
        case QpStatus::MaxIters: return "MaxIters";
    }
    return "Unknown";
}

void QpSolver::reset() {
    cache_.valid = false;
    have_state_ = false;
}

void QpSolver::factorize(const QpProblem& p, double rho_base) {
    const int n = p.n(), pe = p.n_eq(), m = p.n_in();
    cache_.A.resize(pe + m, n);
    if (pe) cache_.A.topRows(pe) = p.A_eq;
    if (m) cache_.A.bottomRows(m) = p.A_in;
    cache_.rho_vec.resize(pe + m);
    cache_.rho_vec.head(pe).setConstant(rho_base * kEqRhoScale);
    cache_.rho_vec.tail(m).setConstant(rho_base);
    Matrix M = p.H + settings_.sigma * Matrix::Identity(n, n) +
               cache_.A.transpose() * cache_.rho_vec.asDiagonal() * cache_.A;
    cache_.lu.compute(M);
    cache_.H = p.H;
    cache_.rho_base = rho_base;
    cache_.valid = true;
}

QpSolution QpSolver::solve(const QpProblem& p) { return solve_impl(p, std::nullopt); }

QpSolution QpSolver::solve(const QpProblem& p, const Vector& z_warm) {
    if (z_warm.size() != p.n()) throw InvalidInput("QpSolver: warm start dimension mismatch");
    return solve_impl(p, z_warm);
}

QpSolution QpSolver::solve_impl(const QpProblem& p, std::optional<Vector> z_warm) {
    const bool warm_used = z_warm.has_value() || have_state_;
    QpSolution sol = run(p, z_warm);
    if (sol.status == QpStatus::MaxIters && warm_used) {
        // a stale warm start can trap the iteration; restart cold once
        have_state_ = false;
        cache_.valid = false;
        sol = run(p, std::nullopt);
    }
    return sol;
}

QpSolution QpSolver::run(const QpProblem& p, const std::optional<Vector>& z_warm) {
    const int n = p.n(), pe = p.n_eq(), m = p.n_in(), k = pe + m;

    Vector lower(k), upper(k);
    lower.head(pe) = p.b_eq;
    upper.head(pe) = p.b_eq;
    lower.tail(m).setConstant(kNegInf);
    upper.tail(m) = p.b_in;

    const bool same_struct = cache_.valid && cache_.H.rows() == n && cache_.A.rows() == k &&
                             cache_.H == p.H && (pe == 0 || cache_.A.topRows(pe) == p.A_eq) &&
                             (m == 0 || cache_.A.bottomRows(m) == p.A_in);
    if (!same_struct) factorize(p, settings_.rho);
    const Matrix& A = cache_.A;

    Vector z = Vector::Zero(n);
    Vector y = Vector::Zero(k);
    if (z_warm) {
        z = *z_warm;
        // rows only ever get appended by callers, so a shorter dual prefix
        // still lines up
        if (have_state_ && last_y_.size() <= k) y.head(last_y_.size()) = last_y_;
    } else if (have_state_ && same_struct && last_z_.size() == n) {
        z = last_z_;
        y = last_y_;
    }
    Vector s = (A * z).cwiseMax(lower).cwiseMin(upper);

    QpSolution sol;
    sol.z = z;
    sol.status = QpStatus::MaxIters;

    Vector y_prev_check = y;
    int it = 0;
    int rho_gap = settings_.rho_update_interval;
    int next_rho_check = rho_gap;
    while (it < settings_.max_iters) {
        ++it;
        const Vector rhs = settings_.sigma * z - p.g + A.transpose() * (cache_.rho_vec.cwiseProduct(s) - y);
        const Vector x_tilde = cache_.lu.solve(rhs);
        const Vector v = A * x_tilde;
        const Vector v_rel = settings_.alpha * v + (1.0 - settings_.alpha) * s;
        z = settings_.alpha * x_tilde + (1.0 - settings_.alpha) * z;
        const Vector s_next = (v_rel + y.cwiseQuotient(cache_.rho_vec)).cwiseMax(lower).cwiseMin(upper);
        y += cache_.rho_vec.cwiseProduct(v_rel - s_next);
        s = s_next;

        if (it % settings_.check_interval != 0 && it != settings_.max_iters) continue;

        const Vector Az = A * z;
        const Vector Hz = p.H * z;
        const Vector Aty = A.transpose() * y;
        const double r_prim = k ? inf_norm(Az - s) : 0.0;
        const double r_dual = inf_norm(Hz + p.g + Aty);
        const double scale_p = std::max({inf_norm(Az), inf_norm(s), 1e-30});
        const double scale_d = std::max({inf_norm(Hz), inf_norm(Aty), inf_norm(p.g), 1e-30});
        const double eps_p = std::min(settings_.eps_abs + settings_.eps_rel * scale_p, settings_.residual_cap);
        const double eps_d = std::min(settings_.eps_abs + settings_.eps_rel * scale_d, settings_.residual_cap);

        if (r_prim <= eps_p && r_dual <= eps_d) {
            sol.z = z;
            sol.status = QpStatus::Optimal;
            sol.primal_residual = r_prim;
            sol.dual_residual = r_dual;
            sol.iterations = it;
            break;
        }

        // primal infeasibility certificate from the dual-variable drift
        const Vector dy = y - y_prev_check;
        const double dy_norm = inf_norm(dy);
        if (dy_norm > 1e-14) {
            const double cert_tol = settings_.eps_infeasible * dy_norm;
            bool sign_ok = true;
            double support = 0.0;
            for (int i = 0; i < pe; ++i) support += p.b_eq[i] * dy[i];
            for (int i = 0; i < m; ++i) {
                const double d = dy[pe + i];
                if (d < -cert_tol) { sign_ok = false; break; }
                support += p.b_in[i] * std::max(d, 0.0);
            }
            if (sign_ok && inf_norm(A.transpose() * dy) <= cert_tol &&
                support <= -cert_tol * (1.0 + std::max(inf_norm(p.b_eq), inf_norm(p.b_in)))) {
                sol.z = z;
                sol.status = QpStatus::Infeasible;
                sol.primal_residual = r_prim;
                sol.dual_residual = r_dual;
                sol.iterations = it;
                break;
            }
        }
        y_prev_check = y;

        if (it >= next_rho_check) {
            // residual balancing against the termination tolerances, on a
            // doubling interval so the iteration can settle between updates
            rho_gap *= 2;
            next_rho_check = it + rho_gap;
            const double ratio =
                std::sqrt((r_prim / eps_p) / std::max(r_dual / eps_d, 1e-30));
            const double rho_new = std::clamp(cache_.rho_base * ratio, 1e-4, 1e4);
            if (rho_new > 5.0 * cache_.rho_base || rho_new < cache_.rho_base / 5.0)
                factorize(p, rho_new);
        }
    }

    if (sol.status == QpStatus::MaxIters) {
        sol.z = z;
        const Vector Az = A * z;
        sol.primal_residual = k ? inf_norm(Az - s) : 0.0;
        sol.dual_residual = inf_norm(p.H * z + p.g + A.transpose() * y);
        sol.iterations = it;
        // the active-set polish validates against the problem itself, so a
        // successful polish from a rough iterate is still a certified optimum
        if (settings_.polish && polish(p, sol, y) &&
            std::max(sol.primal_residual, sol.dual_residual) <= settings_.residual_cap)
            sol.status = QpStatus::Optimal;
    } else if (sol.status == QpStatus::Optimal && settings_.polish) {
        polish(p, sol, y);
    }

    sol.objective = 0.5 * sol.z.dot(p.H * sol.z) + p.g.dot(sol.z);
    last_z_ = sol.z;
    last_y_ = y;
    last_s_ = s;
    have_state_ = true;
    return sol;
}

bool QpSolver::polish(const QpProblem& p, QpSolution& sol, const Vector& y) const {
    const int n = p.n(), pe = p.n_eq(), m = p.n_in();

    std::vector<int> active;
    for (int i = 0; i < m; ++i) {
        const double slack = p.b_in[i] - p.A_in.row(i).dot(sol.z);
        if (y[pe + i] > 1e-10 || slack < 1e-7 * (1.0 + std::abs(p.b_in[i]))) active.push_back(i);
    }
    const int na = static_cast<int>(active.size());
    const int dim = n + pe + na;

    Matrix G(pe + na, n);
    Vector b_act(pe + na);
    if (pe) {
        G.topRows(pe) = p.A_eq;
        b_act.head(pe) = p.b_eq;
    }
    for (int i = 0; i < na; ++i) {
        G.row(pe + i) = p.A_in.row(active[i]);
        b_act[pe + i] = p.b_in[active[i]];
    }

    Matrix kkt = Matrix::Zero(dim, dim);
    kkt.topLeftCorner(n, n) = p.H;
    kkt.topRightCorner(n, pe + na) = G.transpose();
    kkt.bottomLeftCorner(pe + na, n) = G;
    Matrix kkt_reg = kkt;
    kkt_reg.topLeftCorner(n, n) += 1e-9 * Matrix::Identity(n, n);
    kkt_reg.bottomRightCorner(pe + na, pe + na) -= 1e-9 * Matrix::Identity(pe + na, pe + na);

    Vector rhs(dim);
    rhs.head(n) = -p.g;
    rhs.tail(pe + na) = b_act;

    Eigen::PartialPivLU<Matrix> lu(kkt_reg);
    Vector w = lu.solve(rhs);
    for (int pass = 0; pass < 3; ++pass) w += lu.solve(rhs - kkt * w);
    if (!w.allFinite()) return false;

    const Vector z_pol = w.head(n);
    const Vector mult = w.tail(pe + na);
    for (int i = 0; i < na; ++i)
        if (mult[pe + i] < -1e-7) return false;  // wrong active set

    Vector y_pol = Vector::Zero(pe + m);
    y_pol.head(pe) = mult.head(pe);
    for (int i = 0; i < na; ++i) y_pol[pe + active[i]] = std::max(mult[pe + i], 0.0);

    double r_prim = 0.0;
    if (pe) r_prim = inf_norm(p.A_eq * z_pol - p.b_eq);
    for (int i = 0; i < m; ++i)
        r_prim = std::max(r_prim, p.A_in.row(i).dot(z_pol) - p.b_in[i]);
    Vector grad = p.H * z_pol + p.g;
    if (pe) grad += p.A_eq.transpose() * y_pol.head(pe);
    if (m) grad += p.A_in.transpose() * y_pol.tail(m);
    const double r_dual = inf_norm(grad);

    if (std::max(r_prim, r_dual) <= std::max(sol.primal_residual, sol.dual_residual)) {
        sol.z = z_pol;
        sol.primal_residual = std::max(r_prim, 0.0);
        sol.dual_residual = r_dual;
        return true;
    }
    return false;
}

QpSolution solve_qp(const QpProblem& p) {
    QpSolver solver;
    return solver.solve(p);
}

KktReport check_kkt(const QpProblem& p, const QpSolution& sol, double tol) {
    if (sol.status != QpStatus::Optimal) throw InvalidInput("check_kkt: solution is not Optimal");
    const int n = p.n(), pe = p.n_eq(), m = p.n_in();
    const Vector& z = sol.z;

    KktReport rep;
    if (pe) rep.primal = (p.A_eq * z - p.b_eq).cwiseAbs().maxCoeff();
    Vector slack(m);
    for (int i = 0; i < m; ++i) {
        slack[i] = p.b_in[i] - p.A_in.row(i).dot(z);
        rep.primal = std::max(rep.primal, -slack[i]);
    }

    std::vector<int> active;
    for (int i = 0; i < m; ++i)
        if (slack[i] <= std::max(tol, 1e-6) * (1.0 + std::abs(p.b_in[i]))) active.push_back(i);
    const int na = static_cast<int>(active.size());

    // stationarity: H z + g + A_eq' nu + A_act' lambda = 0, multipliers from
    // least squares over the active rows
    Matrix At(n, pe + na);
    if (pe) At.leftCols(pe) = p.A_eq.transpose();
    for (int i = 0; i < na; ++i) At.col(pe + i) = p.A_in.row(active[i]).transpose();
    const Vector target = -(p.H * z + p.g);

    Vector mult = Vector::Zero(pe + na);
    if (pe + na > 0) mult = At.colPivHouseholderQr().solve(target);

    Vector lambda = Vector::Zero(m);
    for (int i = 0; i < na; ++i) {
        rep.dual_violation = std::max(rep.dual_violation, -mult[pe + i]);
        lambda[active[i]] = std::max(mult[pe + i], 0.0);
    }

    Vector grad = p.H * z + p.g;
    if (pe) grad += p.A_eq.transpose() * mult.head(pe);
    if (m) grad += p.A_in.transpose() * lambda;
    rep.stationarity = inf_norm(grad);

    for (int i = 0; i < m; ++i)
        rep.complementarity = std::max(rep.complementarity, std::abs(lambda[i] * slack[i]));

    rep.pass = rep.stationarity <= tol && rep.primal <= tol && rep.complementarity <= tol &&
               rep.dual_violation <= tol;
    return rep;
}

}  // namespace mpcimit
