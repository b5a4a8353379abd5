#include "mpcimit/numerics.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <optional>

namespace mpcimit {

namespace {

// One Riccati map application f(P) = A'PA - A'PB (R + B'PB)^-1 B'PA + Q.
Matrix riccati_map(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                   const Matrix& P) {
    const Matrix BtP = B.transpose() * P;
    const Matrix S = R + BtP * B;          // R + B'PB, positive definite for R > 0
    const Matrix M = lu_solve(S, BtP * A); // (R + B'PB)^-1 B'PA
    Matrix next = A.transpose() * P * A - (BtP * A).transpose() * M + Q;
    return 0.5 * (next + next.transpose());
}

struct DareIterate {
    Matrix P;
    double residual;
};

std::optional<DareIterate> dare_fixed_point(const Matrix& A, const Matrix& B, const Matrix& Q,
                                            const Matrix& R, int max_iters, double tol) {
    Matrix P = 0.5 * (Q + Q.transpose());
    for (int it = 0; it < max_iters; ++it) {
        Matrix next = riccati_map(A, B, Q, R, P);
        const double step = (next - P).norm();
        P = next;
        if (step <= tol) {
            const double residual = (riccati_map(A, B, Q, R, P) - P).norm();
            if (residual <= tol) return DareIterate{P, residual};
        }
        if (!P.allFinite()) return std::nullopt;
    }
    return std::nullopt;
}

}  // namespace

Matrix lu_solve(const Matrix& A, const Matrix& rhs) {
    if (A.rows() != A.cols() || A.rows() != rhs.rows()) throw InvalidInput("lu_solve: shape mismatch");
    Eigen::PartialPivLU<Matrix> lu(A);
    Matrix x = lu.solve(rhs);
    x += lu.solve(rhs - A * x);  // one refinement pass
    const double scale = A.cwiseAbs().maxCoeff() * x.cwiseAbs().maxCoeff() + rhs.cwiseAbs().maxCoeff() + 1e-300;
    if (!x.allFinite() || (A * x - rhs).cwiseAbs().maxCoeff() > 1e-6 * scale)
        throw SingularMatrix("lu_solve: system is singular or badly conditioned");
    return x;
}

bool is_symmetric(const Matrix& M, double tol) {
    if (M.rows() != M.cols()) return false;
    const double scale = M.cwiseAbs().maxCoeff() + 1.0;
    return (M - M.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
}

double min_eigenvalue_sym(const Matrix& M) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (M + M.transpose()), Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

LinearSystem::LinearSystem(Matrix A_in, Matrix B_in) : A(std::move(A_in)), B(std::move(B_in)) {
    if (A.rows() == 0 || A.rows() != A.cols()) throw InvalidInput("LinearSystem: A must be square");
    if (B.rows() != A.rows() || B.cols() == 0) throw InvalidInput("LinearSystem: B must have dx rows");
    if (!A.allFinite() || !B.allFinite()) throw InvalidInput("LinearSystem: non-finite entries");
    const Matrix I_x = Matrix::Identity(A.rows(), A.rows());
    const Matrix I_u = Matrix::Identity(B.cols(), B.cols());
    if (!dare_fixed_point(A, B, I_x, I_u, 10000, 1e-8))
        throw InvalidInput("LinearSystem: (A, B) is not stabilizable");
}

QuadCost::QuadCost(Matrix Q_in, Matrix R_in, Matrix Pf_in)
    : Q(std::move(Q_in)), R(std::move(R_in)), Pf(std::move(Pf_in)) {
    if (!is_symmetric(Q) || !is_symmetric(R) || !is_symmetric(Pf))
        throw InvalidInput("QuadCost: matrices must be symmetric");
    if (min_eigenvalue_sym(Q) < -1e-10) throw InvalidInput("QuadCost: Q must be PSD");
    if (min_eigenvalue_sym(Pf) < -1e-10) throw InvalidInput("QuadCost: Pf must be PSD");
    if (min_eigenvalue_sym(R) <= 1e-10) throw InvalidInput("QuadCost: R must be positive definite");
}

LqrSolution solve_dare(const LinearSystem& sys, const QuadCost& cost, int max_iters, double tol) {
    auto it = dare_fixed_point(sys.A, sys.B, cost.Q, cost.R, max_iters, tol);
    if (!it) throw NonConvergence("solve_dare: fixed-point iteration did not converge");

    LqrSolution sol;
    sol.P = it->P;
    sol.riccati_residual = it->residual;
    const Matrix BtP = sys.B.transpose() * sol.P;
    sol.K = -lu_solve(cost.R + BtP * sys.B, BtP * sys.A);
    sol.A_K = sys.A + sys.B * sol.K;
    if (spectral_radius(sol.A_K) >= 1.0)
        throw NonConvergence("solve_dare: closed loop is not stable");
    return sol;
}

double spectral_radius(const Matrix& M) {
    if (M.rows() != M.cols()) throw InvalidInput("spectral_radius: matrix must be square");
    if (!M.allFinite()) throw InvalidInput("spectral_radius: non-finite entries");
    if (M.rows() == 0) return 0.0;
    Eigen::EigenSolver<Matrix> es(M, /*computeEigenvectors=*/false);
    if (es.info() != Eigen::Success) throw NonConvergence("spectral_radius: eigensolver failed");
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

double operator_norm(const Matrix& M) {
    if (M.size() == 0) return 0.0;
    Eigen::JacobiSVD<Matrix> svd(M);
    return svd.singularValues()(0);
}

Matrix solve_discrete_lyapunov(const Matrix& A, const Matrix& Q, double tol) {
    if (A.rows() != A.cols() || Q.rows() != A.rows() || Q.cols() != A.cols())
        throw InvalidInput("solve_discrete_lyapunov: shape mismatch");
    if (spectral_radius(A) >= 1.0)
        throw UnstableMatrix("solve_discrete_lyapunov: A must be stable");
    Matrix S = Q;
    Matrix M = A;
    for (int k = 0; k < 200; ++k) {
        const Matrix term = M * S * M.transpose();
        S += term;
        if (term.norm() <= tol * S.norm()) return 0.5 * (S + S.transpose());
        M = M * M;
        if (!S.allFinite()) break;
    }
    throw NonConvergence("solve_discrete_lyapunov: doubling iteration did not converge");
}

StabilityEnvelope stability_envelope(const Matrix& A_K, int k_check) {
    const double sr = spectral_radius(A_K);
    if (sr >= 1.0) throw UnstableMatrix("stability_envelope: spectral radius >= 1");

    StabilityEnvelope env;
    env.rho = 0.5 * (1.0 + sr);
    double tau = 1.0;  // k = 0 gives ||I|| / rho^0 = 1
    Matrix power = Matrix::Identity(A_K.rows(), A_K.cols());
    double rho_k = 1.0;
    for (int k = 1; k <= k_check; ++k) {
        power = A_K * power;
        rho_k *= env.rho;
        tau = std::max(tau, operator_norm(power) / rho_k);
    }
    env.tau = tau;
    env.kappa = env.tau / (1.0 - env.rho);
    return env;
}

}  // namespace mpcimit
