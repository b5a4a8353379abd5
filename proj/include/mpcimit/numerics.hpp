#pragma once

#include "mpcimit/types.hpp"

namespace mpcimit {

// Discrete-time linear dynamics x_{t+1} = A x_t + B u_t.
struct LinearSystem {
    Matrix A;
    Matrix B;

    // Validates shapes and checks (A, B) stabilizability: the Riccati
    // fixed-point iteration with identity weights must converge.
    LinearSystem(Matrix A_in, Matrix B_in);

    int dx() const { return static_cast<int>(A.rows()); }
    int du() const { return static_cast<int>(B.cols()); }
};

// Quadratic stage cost x'Qx + u'Ru with terminal weight Pf.
struct QuadCost {
    Matrix Q;
    Matrix R;
    Matrix Pf;

    QuadCost(Matrix Q_in, Matrix R_in, Matrix Pf_in);
    QuadCost(Matrix Q_in, Matrix R_in) : QuadCost(Q_in, R_in, Q_in) {}

    double stage(const Vector& x, const Vector& u) const {
        return x.dot(Q * x) + u.dot(R * u);
    }
};

struct LqrSolution {
    Matrix P;    // Riccati solution
    Matrix K;    // gain, u = K x
    Matrix A_K;  // closed loop A + B K
    double riccati_residual = 0.0;
};

// Decay envelope ||A_K^k|| <= tau * rho^k with kappa = tau / (1 - rho).
struct StabilityEnvelope {
    double tau = 1.0;
    double rho = 0.0;
    double kappa = 1.0;
};

// Fixed-point iteration P <- A'PA - A'PB (R + B'PB)^-1 B'PA + Q from P0 = Q.
LqrSolution solve_dare(const LinearSystem& sys, const QuadCost& cost, int max_iters = 10000,
                       double tol = 1e-8);

double spectral_radius(const Matrix& M);

// Largest singular value.
double operator_norm(const Matrix& M);

// rho is the midpoint between the spectral radius and 1; tau is the tightest
// prefactor over matrix powers up to k_check.
StabilityEnvelope stability_envelope(const Matrix& A_K, int k_check = 200);

// Partial-pivoted LU solve with one pass of residual refinement. Throws
// SingularMatrix when the refined residual stays large.
Matrix lu_solve(const Matrix& A, const Matrix& rhs);

// Solves S = A S A' + Q for stable A by the doubling iteration.
Matrix solve_discrete_lyapunov(const Matrix& A, const Matrix& Q, double tol = 1e-13);

bool is_symmetric(const Matrix& M, double tol = 1e-10);
double min_eigenvalue_sym(const Matrix& M);

}  // namespace mpcimit
