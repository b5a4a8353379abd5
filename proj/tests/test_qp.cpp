#include <doctest.h>

#include "mpcimit/qp.hpp"
#include "mpcimit/rng.hpp"
#include "oracles.hpp"

using namespace mpcimit;

namespace {

QpProblem halfline_problem() {
    // min 1/2 x^2 s.t. x >= 1
    Matrix H(1, 1), A_in(1, 1);
    H << 1.0;
    A_in << -1.0;
    Vector g(1), b_in(1);
    g << 0.0;
    b_in << -1.0;
    return QpProblem(H, g, Matrix(0, 1), Vector(0), A_in, b_in);
}

// random PSD H with box plus coupling rows, feasible by construction
QpProblem random_problem(Rng& rng, int n) {
    Matrix L(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) L(i, j) = rng.uniform(-1.0, 1.0);
    Matrix H = L * L.transpose() + 0.1 * Matrix::Identity(n, n);
    Vector g(n);
    for (int i = 0; i < n; ++i) g[i] = rng.uniform(-2.0, 2.0);
    const int extra = rng.uniform_int(0, 2);
    Matrix A_in(2 * n + extra, n);
    Vector b_in(2 * n + extra);
    A_in.topRows(n) = Matrix::Identity(n, n);
    A_in.middleRows(n, n) = -Matrix::Identity(n, n);
    for (int i = 0; i < 2 * n; ++i) b_in[i] = rng.uniform(0.2, 2.0);
    for (int e = 0; e < extra; ++e) {
        for (int j = 0; j < n; ++j) A_in(2 * n + e, j) = rng.uniform(-1.0, 1.0);
        b_in[2 * n + e] = rng.uniform(0.1, 2.0);  // keeps z = 0 feasible
    }
    return QpProblem(H, g, Matrix(0, n), Vector(0), A_in, b_in);
}

}  // namespace

TEST_CASE("qp: projection onto a halfline") {
    const QpSolution sol = solve_qp(halfline_problem());
    REQUIRE(sol.status == QpStatus::Optimal);
    CHECK(sol.z[0] == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(sol.objective == doctest::Approx(0.5).epsilon(1e-8));
    CHECK(sol.primal_residual <= 1e-6);
    CHECK(sol.dual_residual <= 1e-6);
}

TEST_CASE("qp: unconstrained minimum") {
    Matrix H(2, 2);
    H << 1.0, 0.0, 0.0, 2.0;
    Vector g(2);
    g << -1.0, -2.0;
    const QpProblem p(H, g, Matrix(0, 2), Vector(0), Matrix(0, 2), Vector(0));
    const QpSolution sol = solve_qp(p);
    REQUIRE(sol.status == QpStatus::Optimal);
    CHECK(sol.z[0] == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(sol.z[1] == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("qp: simplex-corner example matches the enumeration oracle") {
    // min x1^2 + x2^2 s.t. x1 + x2 >= 2, x <= 5
    Matrix H = 2.0 * Matrix::Identity(2, 2);
    Matrix A_in(3, 2);
    A_in << -1.0, -1.0, 1.0, 0.0, 0.0, 1.0;
    Vector b_in(3);
    b_in << -2.0, 5.0, 5.0;
    const QpProblem p(H, Vector::Zero(2), Matrix(0, 2), Vector(0), A_in, b_in);
    const QpSolution sol = solve_qp(p);
    REQUIRE(sol.status == QpStatus::Optimal);
    CHECK(sol.z[0] == doctest::Approx(1.0).epsilon(1e-7));
    CHECK(sol.z[1] == doctest::Approx(1.0).epsilon(1e-7));
    const auto oracle = oracles::active_set_enumeration(p);
    REQUIRE(oracle.has_value());
    CHECK(sol.objective == doctest::Approx(oracle->objective).epsilon(1e-8));
}

TEST_CASE("qp: equality constraints go through the linear system") {
    // min 1/2||z||^2 s.t. z1 + z2 = 1
    Matrix H = Matrix::Identity(2, 2);
    Matrix A_eq(1, 2);
    A_eq << 1.0, 1.0;
    Vector b_eq(1);
    b_eq << 1.0;
    const QpProblem p(H, Vector::Zero(2), A_eq, b_eq, Matrix(0, 2), Vector(0));
    const QpSolution sol = solve_qp(p);
    REQUIRE(sol.status == QpStatus::Optimal);
    CHECK(sol.z[0] == doctest::Approx(0.5).epsilon(1e-7));
    CHECK(sol.z[1] == doctest::Approx(0.5).epsilon(1e-7));
}

TEST_CASE("qp: infeasible problem is certified") {
    // x >= 1 and x <= 0
    Matrix H(1, 1);
    H << 1.0;
    Matrix A_in(2, 1);
    A_in << -1.0, 1.0;
    Vector b_in(2);
    b_in << -1.0, 0.0;
    const QpProblem p(H, Vector::Zero(1), Matrix(0, 1), Vector(0), A_in, b_in);
    const QpSolution sol = solve_qp(p);
    CHECK(sol.status == QpStatus::Infeasible);
}

TEST_CASE("qp: oracle agreement and KKT pass over seeded instances") {
    Rng rng(77);
    int done = 0;
    while (done < 60) {
        const int n = rng.uniform_int(1, 3);
        const QpProblem p = random_problem(rng, n);
        const QpSolution sol = solve_qp(p);
        REQUIRE(sol.status == QpStatus::Optimal);
        const auto oracle = oracles::active_set_enumeration(p);
        REQUIRE(oracle.has_value());
        CHECK(std::abs(sol.objective - oracle->objective) <= 1e-6);
        const KktReport rep = check_kkt(p, sol, 1e-5);
        CHECK(rep.pass);
        ++done;
    }
}

TEST_CASE("qp: kkt checker flags a perturbed solution") {
    const QpProblem p = halfline_problem();
    QpSolution sol = solve_qp(p);
    REQUIRE(sol.status == QpStatus::Optimal);
    CHECK(check_kkt(p, sol, 1e-5).pass);
    sol.z[0] += 0.1;
    const KktReport rep = check_kkt(p, sol, 1e-5);
    CHECK_FALSE(rep.pass);
}

TEST_CASE("qp: determinism") {
    Rng rng(5);
    const QpProblem p = random_problem(rng, 3);
    const QpSolution a = solve_qp(p);
    const QpSolution b = solve_qp(p);
    REQUIRE(a.status == QpStatus::Optimal);
    CHECK(a.z == b.z);
    CHECK(a.objective == b.objective);
    CHECK(a.iterations == b.iterations);
}

TEST_CASE("qp: warm start reuses the cached factorization") {
    Rng rng(9);
    const QpProblem p = random_problem(rng, 3);
    QpSolver solver;
    const QpSolution cold = solver.solve(p);
    REQUIRE(cold.status == QpStatus::Optimal);
    const QpSolution warm = solver.solve(p, cold.z);
    REQUIRE(warm.status == QpStatus::Optimal);
    CHECK(warm.iterations <= cold.iterations);
    CHECK((warm.z - cold.z).cwiseAbs().maxCoeff() <= 1e-6);
}
