#include "mpcimit/sets.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "mpcimit/qp.hpp"

namespace mpcimit {

namespace {

void validate_rows(const Matrix& G, const Vector& h) {
    if (G.rows() != h.size() || G.rows() == 0) throw InvalidInput("Polytope: G/h shape mismatch");
    if (!G.allFinite() || !h.allFinite()) throw InvalidInput("Polytope: non-finite entries");
    for (Eigen::Index i = 0; i < G.rows(); ++i) {
        if (G.row(i).cwiseAbs().maxCoeff() < 1e-14) throw InvalidInput("Polytope: all-zero row");
        if (h[i] < -1e-12) throw InvalidInput("Polytope: must contain the origin (h >= 0)");
    }
}

bool duplicate_row(const Matrix& G, const Vector& h, const Vector& g_new, double h_new) {
    const double n_new = g_new.norm();
    for (Eigen::Index i = 0; i < G.rows(); ++i) {
        const double n_i = G.row(i).norm();
        if ((G.row(i).transpose() / n_i - g_new / n_new).cwiseAbs().maxCoeff() < 1e-12 &&
            std::abs(h[i] / n_i - h_new / n_new) < 1e-12)
            return true;
    }
    return false;
}

}  // namespace

Polytope Polytope::box(const Vector& lower, const Vector& upper) {
    const int d = static_cast<int>(lower.size());
    if (upper.size() != d || d == 0) throw InvalidInput("Polytope::box: bound size mismatch");
    for (int i = 0; i < d; ++i)
        if (lower[i] > upper[i]) throw InvalidInput("Polytope::box: lower > upper");
    Matrix G(2 * d, d);
    Vector h(2 * d);
    G.topRows(d) = Matrix::Identity(d, d);
    G.bottomRows(d) = -Matrix::Identity(d, d);
    h.head(d) = upper;
    h.tail(d) = -lower;
    validate_rows(G, h);
    Polytope p;
    p.G = std::move(G);
    p.h = std::move(h);
    p.is_box = true;
    p.lb = lower;
    p.ub = upper;
    return p;
}

Polytope Polytope::from_rows(Matrix G, Vector h) {
    validate_rows(G, h);
    Polytope p;
    p.G = std::move(G);
    p.h = std::move(h);
    return p;
}

EllipsoidLevelSet::EllipsoidLevelSet(Matrix P_in, double c) : P(std::move(P_in)), level(c) {
    if (!is_symmetric(P)) throw InvalidInput("EllipsoidLevelSet: P must be symmetric");
    if (min_eigenvalue_sym(P) <= 0.0) throw InvalidInput("EllipsoidLevelSet: P must be PD");
    if (!(c > 0.0)) throw InvalidInput("EllipsoidLevelSet: level must be > 0");
}

double support(const Polytope& S, const Vector& g) {
    if (g.size() != S.dim()) throw InvalidInput("support: dimension mismatch");
    if (S.is_box) {
        double val = 0.0;
        for (int i = 0; i < S.dim(); ++i) val += std::max(g[i] * S.lb[i], g[i] * S.ub[i]);
        return val;
    }
    const int n = S.dim();
    const double scale = g.norm();  // keep the LP at unit objective scale
    if (scale < 1e-300) return 0.0;
    QpProblem lp(Matrix::Zero(n, n), Vector(-g / scale), Matrix(0, n), Vector(0), S.G, S.h);
    const QpSolution sol = solve_qp(lp);
    if (sol.status != QpStatus::Optimal) throw NonConvergence("support: LP did not solve");
    return g.dot(sol.z);
}

namespace {

std::optional<Polytope> tighten_rows(const Polytope& X, const std::function<double(const Vector&)>& sup) {
    Vector h_new(X.rows());
    for (int i = 0; i < X.rows(); ++i) {
        h_new[i] = X.h[i] - sup(X.G.row(i).transpose());
        if (h_new[i] < 0.0) return std::nullopt;  // EMPTY
    }
    Polytope out;
    out.G = X.G;
    out.h = h_new;
    if (X.is_box) {
        out.is_box = true;
        const int d = X.dim();
        out.ub = h_new.head(d);
        out.lb = -h_new.tail(d);
    }
    return out;
}

}  // namespace

std::optional<Polytope> pontryagin_diff(const Polytope& X, const Ball& S) {
    if (S.dim != X.dim()) throw InvalidInput("pontryagin_diff: dimension mismatch");
    return tighten_rows(X, [&](const Vector& g) { return S.radius * g.norm(); });
}

std::optional<Polytope> pontryagin_diff(const Polytope& X, const Polytope& S) {
    if (S.dim() != X.dim()) throw InvalidInput("pontryagin_diff: dimension mismatch");
    return tighten_rows(X, [&](const Vector& g) { return support(S, g); });
}

double support(const EllipsoidLevelSet& S, const Vector& g) {
    if (g.size() != S.dim()) throw InvalidInput("support: dimension mismatch");
    const Matrix P_inv = lu_solve(S.P, Matrix::Identity(S.dim(), S.dim()));
    return std::sqrt(std::max(S.level * g.dot(P_inv * g), 0.0));
}

double support_of_image(const EllipsoidLevelSet& S, const Matrix& K, const Vector& g) {
    if (K.cols() != S.dim() || g.size() != K.rows())
        throw InvalidInput("support_of_image: dimension mismatch");
    return support(S, K.transpose() * g);
}

std::optional<Polytope> pontryagin_diff(const Polytope& X, const EllipsoidLevelSet& S) {
    if (S.dim() != X.dim()) throw InvalidInput("pontryagin_diff: dimension mismatch");
    const Matrix P_inv = lu_solve(S.P, Matrix::Identity(S.dim(), S.dim()));
    return tighten_rows(X, [&](const Vector& g) {
        return std::sqrt(std::max(S.level * g.dot(P_inv * g), 0.0));
    });
}

Ball min_disturbance_invariant_bound(const StabilityEnvelope& env, double eps, int dim) {
    if (!(eps > 0.0)) throw InvalidInput("min_disturbance_invariant_bound: eps must be > 0");
    return Ball(env.kappa * eps, dim);
}

InvariantSetReport max_positive_invariant(const Matrix& A_K, const Polytope& X, const Polytope& U,
                                          const Matrix& K, int max_iters) {
    const int d = X.dim();
    if (A_K.rows() != d || A_K.cols() != d) throw InvalidInput("max_positive_invariant: A_K shape");
    if (K.rows() != U.dim() || K.cols() != d) throw InvalidInput("max_positive_invariant: K shape");
    if (spectral_radius(A_K) >= 1.0)
        throw UnstableMatrix("max_positive_invariant: closed loop unstable");

    // Omega_0 = {x in X : Kx in U}. Rows are kept at unit norm so the
    // redundancy LPs stay well scaled.
    std::vector<Vector> rows;
    std::vector<double> offs;
    auto push_unique = [&](const Vector& g_in, double h_in) {
        const double nrm = g_in.norm();
        if (nrm < 1e-14) return;  // trivial row, h >= 0
        const Vector g = g_in / nrm;
        const double h = h_in / nrm;
        for (std::size_t i = 0; i < rows.size(); ++i)
            if ((rows[i] - g).cwiseAbs().maxCoeff() < 1e-12 && std::abs(offs[i] - h) < 1e-12)
                return;
        rows.push_back(g);
        offs.push_back(h);
    };
    for (int i = 0; i < X.rows(); ++i) push_unique(X.G.row(i).transpose(), X.h[i]);
    for (int i = 0; i < U.rows(); ++i) push_unique(K.transpose() * U.G.row(i).transpose(), U.h[i]);

    auto as_polytope = [&]() {
        Matrix G(rows.size(), d);
        Vector h(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            G.row(i) = rows[i].transpose();
            h[i] = offs[i];
        }
        return Polytope::from_rows(std::move(G), std::move(h));
    };

    InvariantSetReport report;
    std::size_t frontier_begin = 0;  // rows added in the previous round
    for (int round = 1; round <= max_iters; ++round) {
        const std::size_t frontier_end = rows.size();
        const Polytope current = as_polytope();
        std::vector<Vector> fresh;
        std::vector<double> fresh_offs;
        for (std::size_t i = frontier_begin; i < frontier_end; ++i) {
            Vector g_new = A_K.transpose() * rows[i];
            const double nrm = g_new.norm();
            if (nrm < 1e-14) continue;
            g_new /= nrm;
            const double h_new = offs[i] / nrm;
            if (duplicate_row(current.G, current.h, g_new, h_new)) continue;
            const double val = support(current, g_new);
            if (val <= h_new + 1e-9) continue;  // redundant
            fresh.push_back(std::move(g_new));
            fresh_offs.push_back(h_new);
        }
        if (fresh.empty()) {
            report.O_inf = current;
            report.iterations = round;
            report.converged = true;
            return report;
        }
        frontier_begin = frontier_end;
        for (std::size_t i = 0; i < fresh.size(); ++i) {
            rows.push_back(std::move(fresh[i]));
            offs.push_back(fresh_offs[i]);
        }
    }
    report.O_inf = as_polytope();
    report.iterations = max_iters;
    report.converged = false;
    return report;
}

EllipsoidLevelSet lqr_levelset(const Matrix& P, const Matrix& K, const Polytope& X,
                               const Polytope& U) {
    const int d = static_cast<int>(P.rows());
    if (X.dim() != d || K.cols() != d || K.rows() != U.dim())
        throw InvalidInput("lqr_levelset: dimension mismatch");
    if (min_eigenvalue_sym(P) <= 0.0) throw InvalidInput("lqr_levelset: P must be PD");

    const Matrix P_inv = lu_solve(P, Matrix::Identity(d, d));
    double c = std::numeric_limits<double>::infinity();
    auto tighten = [&](const Vector& g, double h) {
        const double den = g.dot(P_inv * g);
        if (den < 1e-14) return;  // unconstraining direction
        c = std::min(c, h * h / den);
    };
    for (int i = 0; i < X.rows(); ++i) tighten(X.G.row(i).transpose(), X.h[i]);
    for (int i = 0; i < U.rows(); ++i) tighten(K.transpose() * U.G.row(i).transpose(), U.h[i]);

    if (!std::isfinite(c)) throw DegenerateLevel("lqr_levelset: no constraining rows");
    if (c <= 0.0) throw DegenerateLevel("lqr_levelset: level is not positive");
    return EllipsoidLevelSet(P, c);
}

bool contains(const Polytope& S, const Vector& x, double slack) {
    if (x.size() != S.dim()) throw InvalidInput("contains: dimension mismatch");
    return ((S.G * x - S.h).array() <= slack).all();
}

bool contains(const Ball& S, const Vector& x, double slack) {
    if (x.size() != S.dim) throw InvalidInput("contains: dimension mismatch");
    return x.norm() <= S.radius + slack;
}

bool contains(const EllipsoidLevelSet& S, const Vector& x, double slack) {
    if (x.size() != S.dim()) throw InvalidInput("contains: dimension mismatch");
    return x.dot(S.P * x) <= S.level + slack;
}

std::pair<Vector, Vector> ellipsoid_bounding_box(const EllipsoidLevelSet& E) {
    const int d = E.dim();
    const Matrix P_inv = lu_solve(E.P, Matrix::Identity(d, d));
    Vector half(d);
    for (int i = 0; i < d; ++i) half[i] = std::sqrt(std::max(E.level * P_inv(i, i), 0.0));
    return {-half, half};
}

Vector project_box(const Polytope& box, const Vector& x) {
    if (!box.is_box) throw InvalidInput("project_box: polytope is not a box");
    if (x.size() != box.dim()) throw InvalidInput("project_box: dimension mismatch");
    return x.cwiseMax(box.lb).cwiseMin(box.ub);
}

}  // namespace mpcimit
