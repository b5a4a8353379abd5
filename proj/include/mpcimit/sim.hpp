#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mpcimit/mpc.hpp"
#include "mpcimit/numerics.hpp"
#include "mpcimit/sets.hpp"

namespace mpcimit {

struct SimEnv {
    LinearSystem sys;
    QuadCost cost;
    Polytope X;
    Polytope U;
};

// Controller hook; throwing (e.g. InfeasibleState) truncates the rollout.
using ControlFn = std::function<Vector(int t, const Vector& x)>;
using DisturbFn = std::function<Vector(int t)>;

struct Failure {
    int step = 0;
    std::string reason;
};

struct Trajectory {
    std::vector<Vector> states;        // realized states, length steps()+1
    std::vector<Vector> inputs;        // length steps()
    std::vector<Vector> disturbances;  // empty when rolled without noise
    std::vector<double> per_step_cost;
    std::vector<char> feas_x, feas_u;  // per realized step
    std::optional<Failure> failure;
    int horizon = 0;               // intended T
    double hold_step_cost = 0.0;   // per-step penalty applied to unrealized steps

    int steps() const { return static_cast<int>(inputs.size()); }
    // Realized cost plus the zero-input hold penalty for truncated steps.
    double total_cost() const;
};

// Steps x+ = A x + B u + w for T steps. Controller failures are recorded, not
// thrown; the remaining steps are accounted by holding the last state with
// u = 0.
Trajectory rollout(const SimEnv& env, const ControlFn& controller, const Vector& x0, int T,
                   const DisturbFn* disturbance = nullptr);

double cost_to_go(const Trajectory& traj, int upto);

// Q_t(x, u) = l(x, u) + (T-t-1)-step cost of the reference controller from
// Ax + Bu. Throws InfeasibleState when the successor leaves the reference
// feasible domain.
double q_ref(MpcController& reference, const SimEnv& env, const Vector& x, const Vector& u, int t,
             int T);

double normalized_cost(const Trajectory& traj_alg, const Trajectory& traj_mpc);

// Fraction of the intended horizon with both x_t in X and u_t in U;
// unrealized (truncated) steps count as infeasible.
double constraint_satisfaction(const Trajectory& traj);

void write_trajectory_csv(const Trajectory& traj, const std::string& path);

}  // namespace mpcimit
