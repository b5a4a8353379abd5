#include <doctest.h>

#include "mpcimit/harness.hpp"
#include "mpcimit/numerics.hpp"
#include "mpcimit/rng.hpp"
#include "oracles.hpp"

using namespace mpcimit;

namespace {

Matrix mat2(double a, double b, double c, double d) {
    Matrix m(2, 2);
    m << a, b, c, d;
    return m;
}

}  // namespace

TEST_CASE("dare: zero A with identity weights gives P = Q, K = 0") {
    const Matrix A = Matrix::Zero(2, 2);
    const Matrix B = Matrix::Identity(2, 2);
    const LinearSystem sys(A, B);
    const LqrSolution sol = solve_dare(sys, QuadCost(Matrix::Identity(2, 2), Matrix::Identity(2, 2)));
    CHECK((sol.P - Matrix::Identity(2, 2)).norm() < 1e-9);
    CHECK(sol.K.norm() < 1e-9);
    CHECK(sol.riccati_residual <= 1e-8);
}

TEST_CASE("dare: scalar closed forms") {
    SUBCASE("stable system without input: geometric fixed point") {
        Matrix A(1, 1), B(1, 1), Q(1, 1), R(1, 1);
        A << 0.5;
        B << 0.0;
        Q << 1.0;
        R << 1.0;
        const LqrSolution sol = solve_dare(LinearSystem(A, B), QuadCost(Q, R));
        CHECK(sol.P(0, 0) == doctest::Approx(4.0 / 3.0).epsilon(1e-8));
        CHECK(sol.K.norm() < 1e-9);
    }
    SUBCASE("unstable scalar against the quadratic-formula oracle") {
        Matrix A(1, 1), B(1, 1), Q(1, 1), R(1, 1);
        A << 1.1;
        B << 1.0;
        Q << 1.0;
        R << 1.0;
        const LqrSolution sol = solve_dare(LinearSystem(A, B), QuadCost(Q, R));
        const double p_star = oracles::scalar_dare(1.1, 1.0, 1.0, 1.0);
        CHECK(sol.P(0, 0) == doctest::Approx(p_star).epsilon(1e-9));
        CHECK(std::abs(sol.A_K(0, 0)) < 1.0);
    }
}

TEST_CASE("dare: residual contract and stability on seeded random systems") {
    Rng rng(2024);
    int built = 0;
    while (built < 20) {
        const int d = rng.uniform_int(2, 6);
        Matrix A(d, d), B(d, 1);
        for (int i = 0; i < d; ++i) {
            B(i, 0) = rng.uniform(-1.0, 1.0);
            for (int j = 0; j < d; ++j) A(i, j) = rng.uniform(-1.0, 1.0);
        }
        try {
            const LinearSystem sys(A, B);
            const LqrSolution sol =
                solve_dare(sys, QuadCost(Matrix::Identity(d, d), Matrix::Identity(1, 1)));
            CHECK(sol.riccati_residual <= 1e-8);
            CHECK(spectral_radius(sol.A_K) < 1.0);
            CHECK(min_eigenvalue_sym(sol.P) > 0.0);
            ++built;
        } catch (const InvalidInput&) {
            // not stabilizable; skip
        }
    }
}

TEST_CASE("dare: determinism") {
    const BenchmarkSystem bench = make_benchmark_system(3, ASource::Paper);
    const QuadCost cost(Matrix::Identity(3, 3), Matrix::Identity(1, 1));
    const LqrSolution a = solve_dare(bench.sys, cost);
    const LqrSolution b = solve_dare(bench.sys, cost);
    CHECK(a.P == b.P);
    CHECK(a.K == b.K);
}

TEST_CASE("spectral_radius basics") {
    CHECK(spectral_radius(Matrix(mat2(0.5, 0.0, 0.0, -0.9))) == doctest::Approx(0.9));
    CHECK(spectral_radius(Matrix(mat2(0.0, 1.0, 0.0, 0.0))) == doctest::Approx(0.0));
    Matrix bad = mat2(1.0, 0.0, 0.0, 1.0);
    bad(0, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(spectral_radius(bad), InvalidInput);
}

TEST_CASE("spectral_radius of the paper benchmark matrices is 1.1") {
    for (int d : {3, 5}) {
        const BenchmarkSystem bench = make_benchmark_system(d, ASource::Paper);
        CHECK(spectral_radius(bench.sys.A) == doctest::Approx(1.1).epsilon(1e-10));
    }
}

TEST_CASE("stability envelope") {
    SUBCASE("scaled identity") {
        const StabilityEnvelope env = stability_envelope(Matrix(0.5 * Matrix::Identity(3, 3)));
        CHECK(env.rho == doctest::Approx(0.75));
        CHECK(env.tau == doctest::Approx(1.0));
        CHECK(env.kappa == doctest::Approx(4.0));
    }
    SUBCASE("normal diagonal matrix has tau = 1") {
        const StabilityEnvelope env = stability_envelope(Matrix(mat2(0.9, 0.0, 0.0, 0.1)));
        CHECK(env.rho == doctest::Approx(0.95));
        CHECK(env.tau == doctest::Approx(1.0));
    }
    SUBCASE("non-normal matrix: envelope bound verified by direct powers") {
        const Matrix A_K = mat2(0.5, 10.0, 0.0, 0.5);
        const StabilityEnvelope env = stability_envelope(A_K);
        CHECK(env.tau > 1.0);
        Matrix power = Matrix::Identity(2, 2);
        double rho_k = 1.0;
        for (int k = 0; k <= 200; ++k) {
            CHECK(operator_norm(power) <= env.tau * rho_k + 1e-9);
            power = A_K * power;
            rho_k *= env.rho;
        }
    }
    SUBCASE("unstable input is rejected") {
        CHECK_THROWS_AS(stability_envelope(Matrix(mat2(1.0, 0.0, 0.0, 0.5))), UnstableMatrix);
    }
}

TEST_CASE("quad cost invariants") {
    CHECK_THROWS_AS(QuadCost(mat2(1.0, 0.2, 0.0, 1.0), Matrix::Identity(2, 2)), InvalidInput);
    CHECK_THROWS_AS(QuadCost(Matrix::Identity(2, 2), Matrix::Zero(2, 2)), InvalidInput);
    CHECK_THROWS_AS(QuadCost(Matrix(mat2(-1.0, 0.0, 0.0, 1.0)), Matrix::Identity(2, 2)),
                    InvalidInput);
}

TEST_CASE("linear system rejects non-stabilizable pairs") {
    Matrix A(1, 1), B(1, 1);
    A << 1.1;
    B << 0.0;
    CHECK_THROWS_AS(LinearSystem(A, B), InvalidInput);
}
