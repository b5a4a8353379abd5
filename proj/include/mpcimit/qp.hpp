#pragma once

#include <optional>

#include "mpcimit/types.hpp"

namespace mpcimit {

// minimize 1/2 z'Hz + g'z  s.t.  A_eq z = b_eq,  A_in z <= b_in.
struct QpProblem {
    Matrix H;
    Vector g;
    Matrix A_eq;
    Vector b_eq;
    Matrix A_in;
    Vector b_in;

    QpProblem(Matrix H_in, Vector g_in, Matrix A_eq_in, Vector b_eq_in, Matrix A_in_in,
              Vector b_in_in);

    int n() const { return static_cast<int>(H.rows()); }
    int n_eq() const { return static_cast<int>(A_eq.rows()); }
    int n_in() const { return static_cast<int>(A_in.rows()); }
};

enum class QpStatus { Optimal, Infeasible, MaxIters };

const char* to_string(QpStatus s);

struct QpSolution {
    Vector z;
    double objective = 0.0;
    QpStatus status = QpStatus::MaxIters;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    int iterations = 0;
};

struct QpSettings {
    double eps_abs = 1e-8;
    double eps_rel = 1e-6;
    // status Optimal additionally guarantees residuals below this cap
    double residual_cap = 1e-6;
    int max_iters = 20000;
    double rho = 0.1;
    double sigma = 1e-6;
    double alpha = 1.6;  // over-relaxation
    int check_interval = 25;
    int rho_update_interval = 100;
    double eps_infeasible = 1e-7;
    bool polish = true;
};

// Operator-splitting (ADMM) QP solver. An instance caches the KKT
// factorization and the last iterates, so repeated solves of problems with
// identical (H, A_eq, A_in) are warm-started cheaply. One instance serves one
// thread; independent instances may run concurrently.
class QpSolver {
  public:
    explicit QpSolver(QpSettings settings = {}) : settings_(settings) {}

    QpSolution solve(const QpProblem& p);
    QpSolution solve(const QpProblem& p, const Vector& z_warm);

    void reset();

    const QpSettings& settings() const { return settings_; }

  private:
    QpSolution solve_impl(const QpProblem& p, std::optional<Vector> z_warm);
    QpSolution run(const QpProblem& p, const std::optional<Vector>& z_warm);
    void factorize(const QpProblem& p, double rho_base);
    bool polish(const QpProblem& p, QpSolution& sol, const Vector& y) const;

    QpSettings settings_;

    struct Cache {
        bool valid = false;
        Matrix H, A;  // A stacks [A_eq; A_in]
        Vector rho_vec;
        double rho_base = 0.0;
        Eigen::PartialPivLU<Matrix> lu;
    } cache_;

    // warm-start state from the previous solve
    Vector last_z_, last_y_, last_s_;
    bool have_state_ = false;
};

// One-shot solve with default settings (cold start).
QpSolution solve_qp(const QpProblem& p);

struct KktReport {
    double stationarity = 0.0;
    double primal = 0.0;
    double complementarity = 0.0;
    double dual_violation = 0.0;
    bool pass = false;
};

// Independent optimality check: reconstructs multipliers by least squares over
// the active rows and reports KKT residuals.
KktReport check_kkt(const QpProblem& p, const QpSolution& sol, double tol);

}  // namespace mpcimit
