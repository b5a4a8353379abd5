#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mpcimit/numerics.hpp"
#include "mpcimit/policy.hpp"
#include "mpcimit/rng.hpp"
#include "mpcimit/sets.hpp"

namespace mpcimit {

// Time-invariant expert with a feasibility oracle. query() projects the state
// onto X before solving, so it is defined everywhere.
struct ExpertPolicy {
    std::function<Vector(const Vector&)> control;
    std::function<bool(const Vector&)> feasible;
    Polytope X;

    Vector query(const Vector& x) const;
};

// Uniform distribution over an axis-aligned box of initial states.
struct InitialDistribution {
    Vector lower, upper;

    InitialDistribution(Vector lo, Vector hi);
    Vector sample(Rng& rng) const { return rng.uniform_box(lower, upper); }
    int dim() const { return static_cast<int>(lower.size()); }
};

// Throws ExpertInfeasible when sampled support points fall outside the
// expert's feasible domain.
void check_support(const ExpertPolicy& expert, const InitialDistribution& D, int samples,
                   Rng& rng);

enum class ScheduleMode { Flat, Theory };

const char* to_string(ScheduleMode m);

struct ScheduleParams {
    int n = 10;       // base per-stage sample count
    double c = 0.0;   // series constant; 0 means "use series_constant()"
    int T = 30;       // imitation horizon
    int ell = 20;     // probe trajectories per switch test
    double eps = 0.1;
    double delta = 0.1;
};

// c = sum_{t>=1} 1 / (t ln^2(t+1)), partial sum to 1e6 plus the integral tail
// bound; cached after the first call.
double series_constant();

// n_t of the growing schedule: n at t = 0, ceil(c n t ceil(ln^2(t+1))) + n for
// t >= 1.
int stage_sample_size(const ScheduleParams& params, int t);

// Probe count lower bound 10 ln(T/delta) / delta.
int theory_probe_count(int T, double delta);

struct LqrTail {
    int tau_inf = 0;
    Matrix K;
};

struct ImitationReport {
    ScheduleMode mode = ScheduleMode::Flat;
    int expert_labels = 0;        // expert queries spent on training labels
    int probe_rounds = 0;
    int probe_trajectories = 0;   // ell per round
    int tau_inf = -1;             // -1: no switch
    std::vector<double> stage_losses;
    std::vector<std::uint64_t> stage_seeds;  // per-stage sampling streams
    std::vector<std::string> warnings;

    // training labels plus probe trajectories
    int total_demonstrations() const { return expert_labels + probe_trajectories; }
};

// Per-stage policies, optionally followed by the LQR tail from tau_inf on.
struct TimeVaryingPolicy {
    std::vector<MlpPolicy> stages;
    std::optional<LqrTail> tail;
    Polytope U;  // clamp target for the tail
    ImitationReport report;

    Vector control(int t, const Vector& x, bool* tail_clamped = nullptr) const;

    void save(const std::string& dir) const;
    static TimeVaryingPolicy load(const std::string& dir, Polytope U);
};

Vector switched_control(const TimeVaryingPolicy& p, int t, const Vector& x,
                        bool* tail_clamped = nullptr);

// Pools expert-rollout pairs from n_traj trajectories of length T and fits one
// time-invariant policy.
MlpPolicy behavior_cloning(const ExpertPolicy& expert, const LinearSystem& sys,
                           const InitialDistribution& D, int n_traj, int T,
                           const TrainConfig& cfg, const Polytope& U,
                           ImitationReport* report = nullptr);

// Stage-wise on-policy imitation: stage t labels states reached by the
// already-learned stages under the noiseless dynamics.
TimeVaryingPolicy forward_train(const ExpertPolicy& expert, const LinearSystem& sys,
                                const InitialDistribution& D, const ScheduleParams& params,
                                ScheduleMode mode, const TrainConfig& cfg, const Polytope& U);

// forward_train with the early stop: after each stage, ell probe rollouts are
// checked against O_test; when all end inside, the LQR tail is attached.
TimeVaryingPolicy forward_switch(const ExpertPolicy& expert, const LinearSystem& sys,
                                 const InitialDistribution& D, const ScheduleParams& params,
                                 ScheduleMode mode, const TrainConfig& cfg, const Polytope& U,
                                 const EllipsoidLevelSet& O_test, const Matrix& K_tail);

}  // namespace mpcimit
