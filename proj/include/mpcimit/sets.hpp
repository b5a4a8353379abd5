#pragma once

#include <optional>
#include <utility>

#include "mpcimit/numerics.hpp"
#include "mpcimit/types.hpp"

namespace mpcimit {

// Halfspace polytope {x : G x <= h}. Constraint sets must contain the origin
// (h >= 0) and carry no all-zero rows.
struct Polytope {
    Matrix G;
    Vector h;
    bool is_box = false;
    Vector lb, ub;  // populated when is_box

    static Polytope box(const Vector& lower, const Vector& upper);
    static Polytope from_rows(Matrix G, Vector h);

    int dim() const { return static_cast<int>(G.cols()); }
    int rows() const { return static_cast<int>(G.rows()); }
};

// Euclidean ball of the given radius centered at the origin.
struct Ball {
    double radius = 0.0;
    int dim = 0;

    Ball(double r, int d) : radius(r), dim(d) {
        if (r < 0.0 || d <= 0) throw InvalidInput("Ball: radius must be >= 0, dim > 0");
    }
};

// {x : x'Px <= c} with P positive definite.
struct EllipsoidLevelSet {
    Matrix P;
    double level = 0.0;

    EllipsoidLevelSet(Matrix P_in, double c);

    int dim() const { return static_cast<int>(P.rows()); }
};

struct InvariantSetReport {
    Polytope O_inf;
    int iterations = 0;
    bool converged = false;
};

// Support function max_{x in S} g.x (closed form for boxes, LP otherwise).
double support(const Polytope& S, const Vector& g);

// X (-) S. Returns nullopt when any tightened offset turns negative (EMPTY).
std::optional<Polytope> pontryagin_diff(const Polytope& X, const Ball& S);
std::optional<Polytope> pontryagin_diff(const Polytope& X, const Polytope& S);
std::optional<Polytope> pontryagin_diff(const Polytope& X, const EllipsoidLevelSet& S);

// Support max_{z in S} g.z = sqrt(c g' P^-1 g) of an ellipsoidal set.
double support(const EllipsoidLevelSet& S, const Vector& g);

// Support of the linear image K S of an ellipsoidal set.
double support_of_image(const EllipsoidLevelSet& S, const Matrix& K, const Vector& g);

// Outer bound B(kappa * eps) on the minimal disturbance invariant set.
Ball min_disturbance_invariant_bound(const StabilityEnvelope& env, double eps, int dim);

// Standard invariance iteration for the closed loop x+ = A_K x under the
// constraints x in X, K x in U. Redundant rows are detected with per-row LPs.
InvariantSetReport max_positive_invariant(const Matrix& A_K, const Polytope& X, const Polytope& U,
                                          const Matrix& K, int max_iters = 500);

// Largest c such that {x'Px <= c} satisfies every state row of X and, through
// u = K x, every input row of U.
EllipsoidLevelSet lqr_levelset(const Matrix& P, const Matrix& K, const Polytope& X,
                               const Polytope& U);

bool contains(const Polytope& S, const Vector& x, double slack = 1e-9);
bool contains(const Ball& S, const Vector& x, double slack = 1e-9);
bool contains(const EllipsoidLevelSet& S, const Vector& x, double slack = 1e-9);

// Axis-aligned bounding box half-widths sqrt(c * (P^-1)_ii).
std::pair<Vector, Vector> ellipsoid_bounding_box(const EllipsoidLevelSet& E);

// Euclidean projection onto a box polytope (componentwise clamp).
Vector project_box(const Polytope& box, const Vector& x);

}  // namespace mpcimit
