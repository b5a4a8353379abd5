#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "mpcimit/mpc.hpp"
#include "mpcimit/sim.hpp"

namespace mpcimit {

// Tube MPC data: tightened horizon problem, the Claim-1 outer ball Z, the
// disturbance invariant tube cross-section actually enforced, and the
// ancillary LQR gain.
struct RmpcSpec {
    MpcSpec base;  // tightened constraints X_bar, U_bar and terminal over them
    Ball Z;        // outer bound B(kappa eps); containment audits check it
    EllipsoidLevelSet tube;  // invariant cross-section, contained in Z
    Matrix K;
    double eps = 0.0;
    Polytope X_full;  // original (untightened) state set; expert queries project here
    Polytope U_full;  // original input set; controls are asserted against it
};

// Disturbance invariant ellipsoidal tube for w in B(eps): the fixed point of
// S = (1+theta) A_K S A_K' + (1+1/theta) eps^2 I satisfies
// A_K E(S) + B(eps) inside E(S) for E(S) = {z : z' S^-1 z <= 1}. theta is
// chosen on a grid so E fits inside B(radius_cap) with the smallest input
// tightening K E.
EllipsoidLevelSet invariant_tube(const Matrix& A_K, const Matrix& K, double eps,
                                 double radius_cap);

// Computes the LQR gain, the (tau, rho) envelope, Z = B(kappa * eps), the
// invariant tube and the tightened constraint sets for the horizon problem.
RmpcSpec make_rmpc_spec(const LinearSystem& sys, const Matrix& Q, const Matrix& R, int N,
                        const Polytope& X, const Polytope& U, double eps, TerminalMode mode);

struct RmpcSolution {
    Vector x_bar0;                   // optimal nominal initial state
    std::vector<Vector> u_bar_seq;   // nominal inputs
    std::vector<Vector> x_bar_seq;   // nominal states x_bar0 .. x_barN
    double objective = 0.0;          // V_RMPC(x)
    QpStatus status = QpStatus::MaxIters;
};

// Solves the horizon problem with the nominal initial state as a decision
// variable and applies u = u_bar0 + K (x - x_bar0).
class RmpcController {
  public:
    explicit RmpcController(RmpcSpec spec, QpSettings qp_settings = {});

    const RmpcSpec& spec() const { return spec_; }
    int last_dual_iters() const { return last_dual_iters_; }

    RmpcSolution solve(const Vector& x);  // throws InfeasibleState
    Vector control(const Vector& x);
    // proj_X first, then control; failures surface as ExpertInfeasible.
    Vector expert_query(const Vector& x);
    bool is_feasible(const Vector& x);

    void reset();

  private:
    QpProblem build(const Vector& x, double mu) const;
    // Solves the penalized QP at multiplier mu and returns the tube slack
    // ||x - x_bar0|| - r (negative when inside the ball).
    double solve_at(const Vector& x, double mu, QpSolution* out);

    RmpcSpec spec_;
    QpSolver solver_;
    std::optional<Vector> warm_;
    int last_dual_iters_ = 0;  // dual-search iterations of the last solve
};

struct TubeStep {
    double tube_norm = 0.0;       // ||x_t - x_bar0(x_t)||
    bool containment_ok = false;
    double value = 0.0;           // V_RMPC(x_t)
    bool decrease_ok = false;     // checked from step 1 on
    double nominal_norm = 0.0;    // ||x_bar0(x_t)||
};

struct TubeReport {
    std::vector<TubeStep> steps;
    bool all_contained = true;
    bool all_decreasing = true;
    std::optional<int> infeasible_at;

    bool pass() const { return all_contained && all_decreasing && !infeasible_at; }
};

// Audits a closed-loop trajectory produced under rmpc control: per-step tube
// containment, value decrease and nominal decay.
TubeReport tube_diagnostics(RmpcController& ctl, const Trajectory& traj);

}  // namespace mpcimit
