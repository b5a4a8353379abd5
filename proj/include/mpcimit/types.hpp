#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace mpcimit {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Base class for all toolkit errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidInput : Error {
    using Error::Error;
};
struct NonConvergence : Error {
    using Error::Error;
};
struct SingularMatrix : Error {
    using Error::Error;
};
struct UnstableMatrix : Error {
    using Error::Error;
};
struct DegenerateLevel : Error {
    using Error::Error;
};
struct EmptyTightenedSet : Error {
    using Error::Error;
};
// State outside the feasible domain of an MPC problem.
struct InfeasibleState : Error {
    using Error::Error;
};
// Expert controller failed while generating demonstrations.
struct ExpertInfeasible : Error {
    using Error::Error;
};
struct ZeroBaseline : Error {
    using Error::Error;
};
struct UnknownDimension : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};

inline bool is_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace mpcimit
