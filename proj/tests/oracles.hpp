// Test-only oracles, independent of the library implementation paths they
// check.
#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "mpcimit/qp.hpp"
#include "mpcimit/types.hpp"

namespace oracles {

using mpcimit::Matrix;
using mpcimit::Vector;

// Positive root of the scalar Riccati equation p = a^2 p - a^2 p^2 b^2 /
// (r + b^2 p) + q, via the quadratic formula.
inline double scalar_dare(double a, double b, double q, double r) {
    if (std::abs(b) < 1e-15) {
        // no input: p = q / (1 - a^2), requires |a| < 1
        return q / (1.0 - a * a);
    }
    const double b2 = b * b;
    const double lin = r - a * a * r - q * b2;
    return (-lin + std::sqrt(lin * lin + 4.0 * q * b2 * r)) / (2.0 * b2);
}

struct ActiveSetResult {
    Vector z;
    double objective = 0.0;
};

// Brute-force active-set enumeration for small dense QPs: every subset of the
// inequalities is treated as equalities and the KKT system solved directly.
inline std::optional<ActiveSetResult> active_set_enumeration(const mpcimit::QpProblem& p) {
    const int n = p.n(), pe = p.n_eq(), m = p.n_in();
    std::optional<ActiveSetResult> best;

    for (unsigned mask = 0; mask < (1u << m); ++mask) {
        std::vector<int> act;
        for (int i = 0; i < m; ++i)
            if (mask & (1u << i)) act.push_back(i);
        const int na = static_cast<int>(act.size());
        if (pe + na > n) continue;

        const int dim = n + pe + na;
        Matrix kkt = Matrix::Zero(dim, dim);
        Vector rhs(dim);
        kkt.topLeftCorner(n, n) = p.H;
        rhs.head(n) = -p.g;
        for (int i = 0; i < pe; ++i) {
            kkt.block(n + i, 0, 1, n) = p.A_eq.row(i);
            kkt.block(0, n + i, n, 1) = p.A_eq.row(i).transpose();
            rhs[n + i] = p.b_eq[i];
        }
        for (int i = 0; i < na; ++i) {
            kkt.block(n + pe + i, 0, 1, n) = p.A_in.row(act[i]);
            kkt.block(0, n + pe + i, n, 1) = p.A_in.row(act[i]).transpose();
            rhs[n + pe + i] = p.b_in[act[i]];
        }

        Eigen::FullPivLU<Matrix> lu(kkt);
        if (lu.rank() < dim) continue;
        const Vector sol = lu.solve(rhs);
        const Vector z = sol.head(n);

        bool ok = true;
        for (int i = 0; i < m && ok; ++i)
            if (p.A_in.row(i).dot(z) > p.b_in[i] + 1e-9) ok = false;
        for (int i = 0; i < na && ok; ++i)
            if (sol[n + pe + i] < -1e-9) ok = false;  // multiplier sign
        if (!ok) continue;

        const double obj = 0.5 * z.dot(p.H * z) + p.g.dot(z);
        if (!best || obj < best->objective - 1e-12) best = ActiveSetResult{z, obj};
    }
    return best;
}

}  // namespace oracles
