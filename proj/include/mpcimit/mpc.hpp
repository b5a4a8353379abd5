#pragma once

#include <optional>
#include <variant>
#include <vector>

#include "mpcimit/numerics.hpp"
#include "mpcimit/qp.hpp"
#include "mpcimit/sets.hpp"

namespace mpcimit {

enum class TerminalMode { LqrCost, LqrCostAndSet, None };

const char* to_string(TerminalMode m);

using TerminalSet = std::variant<std::monostate, Polytope, EllipsoidLevelSet>;

// Finite-horizon problem data: minimize sum x'Qx + u'Ru + x_N' Pf x_N subject
// to dynamics, x_t in X, u_t in U and the terminal constraint.
struct MpcSpec {
    LinearSystem sys;
    QuadCost cost;
    int N = 1;
    Polytope X;
    Polytope U;
    TerminalSet X_f;
    TerminalMode terminal_mode = TerminalMode::LqrCost;

    void validate() const;
};

// Builds the spec with Pf = P_lqr; for LqrCostAndSet the terminal set is the
// maximal positively invariant polytope of the LQR loop.
MpcSpec make_mpc_spec(const LinearSystem& sys, const Matrix& Q, const Matrix& R, int N,
                      const Polytope& X, const Polytope& U, TerminalMode mode);

struct MpcSolution {
    std::vector<Vector> u_seq;   // u_0 ... u_{N-1}
    std::vector<Vector> x_seq;   // x_0 ... x_N
    double objective = 0.0;      // V_N value (includes the x_0 stage cost)
    QpStatus status = QpStatus::MaxIters;
    double dynamics_residual = 0.0;
};

// Assembles the horizon QP. Decision vector stacks (x_1..x_N, u_0..u_{N-1});
// dynamics enter as equalities. Ellipsoidal terminal sets contribute their
// bounding-box rows scaled by terminal_shrink.
QpProblem build_qp(const MpcSpec& spec, const Vector& x0, double terminal_shrink = 1.0);

// Receding-horizon controller. Holds a warm-start cache, so one instance
// serves one rollout at a time.
class MpcController {
  public:
    explicit MpcController(MpcSpec spec, QpSettings qp_settings = {});

    const MpcSpec& spec() const { return spec_; }

    MpcSolution solve(const Vector& x);  // throws InfeasibleState
    Vector control(const Vector& x);
    bool is_feasible(const Vector& x);

    void reset();

  private:
    MpcSpec spec_;
    QpSolver solver_;
    QpSolver feasibility_solver_;
    std::optional<Vector> warm_;
};

// X_bar = X - Z and U_bar = U - B(||K|| r); terminal ingredients rebuilt over
// the tightened sets.
MpcSpec tightened_spec(const MpcSpec& spec, const Ball& Z, const Matrix& K);

// Exact tightening by an ellipsoidal tube: X_bar = X - E, U_bar = U - K E.
MpcSpec tightened_spec(const MpcSpec& spec, const EllipsoidLevelSet& tube, const Matrix& K);

// One-shot convenience forms of the controller operations.
Vector mpc_control(const MpcSpec& spec, const Vector& x);
bool is_feasible(const MpcSpec& spec, const Vector& x);

}  // namespace mpcimit
