#pragma once

#include <Eigen/Dense>
#include <complex>
#include <stdexcept>
#include <string>

namespace pfttt {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using MatRowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Complex = std::complex<double>;

/// Bus classification: slack fixes V and angle, PV fixes P and V, PQ fixes P and Q.
enum class BusKind { Slack, PV, PQ };

inline const char* to_string(BusKind k) {
    switch (k) {
        case BusKind::Slack: return "slack";
        case BusKind::PV: return "pv";
        default: return "pq";
    }
}

/// Voltage magnitudes (pu) and angles (rad) for every bus.
struct StateVector {
    Vec v;
    Vec theta;

    StateVector() = default;
    StateVector(Vec v_, Vec theta_) : v(std::move(v_)), theta(std::move(theta_)) {}
    int size() const { return static_cast<int>(v.size()); }
};

/// Specified injections and setpoints defining one scenario.
///
/// p_spec is the net scheduled active injection per bus (generation minus load,
/// pu); the slack bus entry carries only its -load share since slack generation
/// is free. q_spec carries -Qd plus any fixed reactive generation at PQ buses;
/// at PV/slack buses it is load-only (generator Q is free). v_setpoints holds
/// the regulated magnitude at PV/slack buses and 0 elsewhere.
struct OperatingCondition {
    Vec p_spec;
    Vec q_spec;
    Vec v_setpoints;

    int size() const { return static_cast<int>(p_spec.size()); }
};

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// File/stream level failure (missing file, unreadable stream).
struct IoError : Error {
    using Error::Error;
};

/// Malformed input text; carries the 1-based line number when known.
struct ParseError : Error {
    int line = 0;
    ParseError(const std::string& msg, int line_no = 0)
        : Error(line_no > 0 ? "line " + std::to_string(line_no) + ": " + msg : msg),
          line(line_no) {}
};

/// Vector/matrix dimensions inconsistent with the grid or model.
struct DimensionError : Error {
    using Error::Error;
};

/// Semantically invalid data (empty dataset, violated invariant, bad config).
struct InvalidDataError : Error {
    using Error::Error;
};

/// Numerical failure (singular system, non-finite values).
struct NumericalError : Error {
    using Error::Error;
};

}  // namespace pfttt
