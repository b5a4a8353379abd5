#include "mpcimit/sim.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace mpcimit {

double Trajectory::total_cost() const {
    double c = 0.0;
    for (double v : per_step_cost) c += v;
    c += hold_step_cost * (horizon - steps());
    return c;
}

Trajectory rollout(const SimEnv& env, const ControlFn& controller, const Vector& x0, int T,
                   const DisturbFn* disturbance) {
    if (x0.size() != env.sys.dx() || !x0.allFinite()) throw InvalidInput("rollout: bad x0");
    if (T < 0) throw InvalidInput("rollout: negative horizon");

    Trajectory traj;
    traj.horizon = T;
    traj.states.reserve(T + 1);
    traj.states.push_back(x0);

    Vector x = x0;
    for (int t = 0; t < T; ++t) {
        Vector u;
        try {
            u = controller(t, x);
        } catch (const Error& e) {
            traj.failure = Failure{t, e.what()};
            traj.hold_step_cost = x.dot(env.cost.Q * x);
            break;
        }
        if (u.size() != env.sys.du() || !u.allFinite()) {
            traj.failure = Failure{t, "controller returned invalid input"};
            traj.hold_step_cost = x.dot(env.cost.Q * x);
            break;
        }
        Vector w = Vector::Zero(env.sys.dx());
        if (disturbance) {
            w = (*disturbance)(t);
            traj.disturbances.push_back(w);
        }
        traj.inputs.push_back(u);
        traj.per_step_cost.push_back(env.cost.stage(x, u));
        traj.feas_x.push_back(contains(env.X, x) ? 1 : 0);
        traj.feas_u.push_back(contains(env.U, u) ? 1 : 0);
        x = env.sys.A * x + env.sys.B * u + w;
        traj.states.push_back(x);
    }
    return traj;
}

double cost_to_go(const Trajectory& traj, int upto) {
    if (upto < 0 || upto > traj.steps()) throw InvalidInput("cost_to_go: upto out of range");
    double c = 0.0;
    for (int t = 0; t < upto; ++t) c += traj.per_step_cost[t];
    return c;
}

double q_ref(MpcController& reference, const SimEnv& env, const Vector& x, const Vector& u, int t,
             int T) {
    if (t < 0 || t >= T) throw InvalidInput("q_ref: t out of range");
    const Vector successor = env.sys.A * x + env.sys.B * u;
    if (!reference.is_feasible(successor))
        throw InfeasibleState("q_ref: successor outside the reference feasible domain");
    const int remaining = T - t - 1;
    const ControlFn ref_fn = [&reference](int, const Vector& s) { return reference.control(s); };
    const Trajectory tail = rollout(env, ref_fn, successor, remaining);
    if (tail.failure)
        throw InfeasibleState("q_ref: reference rollout failed at step " +
                              std::to_string(tail.failure->step));
    return env.cost.stage(x, u) + tail.total_cost();
}

double normalized_cost(const Trajectory& traj_alg, const Trajectory& traj_mpc) {
    if (traj_alg.horizon != traj_mpc.horizon)
        throw InvalidInput("normalized_cost: horizon mismatch");
    const double base = traj_mpc.total_cost();
    if (base <= 0.0) throw ZeroBaseline("normalized_cost: baseline cost is zero");
    return traj_alg.total_cost() / base;
}

double constraint_satisfaction(const Trajectory& traj) {
    if (traj.horizon == 0) return 1.0;
    int ok = 0;
    for (int t = 0; t < traj.steps(); ++t)
        if (traj.feas_x[t] && traj.feas_u[t]) ++ok;
    return static_cast<double>(ok) / traj.horizon;
}

void write_trajectory_csv(const Trajectory& traj, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("write_trajectory_csv: cannot open " + path);
    const int dx = traj.states.empty() ? 0 : static_cast<int>(traj.states[0].size());
    const int du = traj.inputs.empty() ? 0 : static_cast<int>(traj.inputs[0].size());
    out << "t";
    for (int i = 1; i <= dx; ++i) out << ",x_" << i;
    for (int i = 1; i <= du; ++i) out << ",u_" << i;
    for (int i = 1; i <= dx; ++i) out << ",w_" << i;
    out << ",step_cost,feas_x,feas_u\n";
    char buf[32];
    const auto fmt = [&buf](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    for (int t = 0; t < traj.steps(); ++t) {
        out << t;
        for (int i = 0; i < dx; ++i) out << "," << fmt(traj.states[t][i]);
        for (int i = 0; i < du; ++i) out << "," << fmt(traj.inputs[t][i]);
        for (int i = 0; i < dx; ++i)
            out << "," << fmt(traj.disturbances.empty() ? 0.0 : traj.disturbances[t][i]);
        out << "," << fmt(traj.per_step_cost[t]);
        out << "," << int(traj.feas_x[t]) << "," << int(traj.feas_u[t]) << "\n";
    }
    if (!out) throw IoError("write_trajectory_csv: write failed for " + path);
}

}  // namespace mpcimit
