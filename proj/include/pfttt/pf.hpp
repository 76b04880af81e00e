#pragma once

#include <Eigen/SparseCore>
#include <vector>

#include "pfttt/grid.hpp"

namespace pfttt {

/// Active residuals at non-slack buses and reactive residuals at PQ buses,
/// ordering matching the unknown-vector layout.
struct MismatchVector {
    Vec dp;
    Vec dq;

    double max_abs() const {
        double m = 0.0;
        if (dp.size()) m = dp.cwiseAbs().maxCoeff();
        if (dq.size()) m = std::max(m, dq.cwiseAbs().maxCoeff());
        return m;
    }
    Vec stacked() const {
        Vec out(dp.size() + dq.size());
        out << dp, dq;
        return out;
    }
};

struct BranchFlow {
    int branch = 0;
    Complex s_from;
    Complex s_to;
    double s_mag = 0.0;  // max of the two end magnitudes
};

struct NewtonOptions {
    double tol = 1e-8;  // pu, max-abs mismatch
    int max_iter = 20;
};

struct NewtonResult {
    StateVector state;
    int iterations = 0;
    bool converged = false;
    double max_mismatch = 0.0;
    std::vector<double> mismatch_history;  // max-abs per iterate, including the start
};

/// Bus injections P_i = V_i sum_j V_j (G_ij cos t_ij + B_ij sin t_ij),
/// Q_i = V_i sum_j V_j (G_ij sin t_ij - B_ij cos t_ij), summed over the stored
/// sparse entries in row-major order.
void compute_injections(const StateVector& state, const AdmittanceMatrix& ybus, Vec& p_calc,
                        Vec& q_calc);

MismatchVector compute_mismatch(const StateVector& state, const OperatingCondition& cond,
                                const AdmittanceMatrix& ybus, const GridCase& grid);

/// Jacobian of the mismatch (spec - calc convention) with respect to the
/// unknown vector: rows are [dP at non-slack; dQ at PQ], columns follow the
/// unknown ordering.
Eigen::SparseMatrix<double> compute_jacobian(const StateVector& state,
                                             const AdmittanceMatrix& ybus, const GridCase& grid);

/// Full-Newton polar power flow. Uses a flat start (V=1 at PQ buses,
/// setpoints elsewhere, angles 0) unless an initial unknown vector is given.
/// Non-convergence is reported through the flag, not an exception; a singular
/// Jacobian throws NumericalError tagged with the iteration index.
NewtonResult newton_raphson(const GridCase& grid, const AdmittanceMatrix& ybus,
                            const OperatingCondition& cond, const NewtonOptions& opts = {},
                            const Vec* init = nullptr);

std::vector<BranchFlow> branch_flows(const StateVector& state, const GridCase& grid);

/// Reactive output per generator bus (aggregate over its units) and the slack
/// machine's active output, recovered from the state.
struct GenerationRecovery {
    Vec q_gen;  // aligned with grid.gen_buses
    double p_slack = 0.0;
};

GenerationRecovery recover_generation(const StateVector& state, const GridCase& grid,
                                      const OperatingCondition& cond,
                                      const AdmittanceMatrix& ybus);

/// Convenience overload that assembles the admittance matrix itself.
GenerationRecovery recover_generation(const StateVector& state, const GridCase& grid,
                                      const OperatingCondition& cond);

/// Reactive limits summed per generator bus (aligned with grid.gen_buses) and
/// the slack machine's active limits.
struct AggregateLimits {
    Vec q_min, q_max;
    double slack_p_min = 0.0;
    double slack_p_max = 0.0;
};

AggregateLimits aggregate_gen_limits(const GridCase& grid);

}  // namespace pfttt
