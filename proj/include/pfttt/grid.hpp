#pragma once

#include <Eigen/SparseCore>
#include <optional>
#include <vector>

#include "pfttt/types.hpp"

namespace pfttt {

struct Bus {
    int index = 0;    // 0-based contiguous position
    int ext_id = 0;   // identifier from the source file
    BusKind kind = BusKind::PQ;
    double p_load = 0.0;   // pu
    double q_load = 0.0;   // pu
    double g_shunt = 0.0;  // pu
    double b_shunt = 0.0;  // pu
    double v_min = 0.94;   // pu
    double v_max = 1.06;   // pu
    double v_setpoint = 1.0;  // pu, meaningful at PV/slack
    double vm0 = 1.0;         // initial magnitude from the source file
    double va0 = 0.0;         // initial angle from the source file, rad
};

struct Branch {
    int from = 0;
    int to = 0;
    double r = 0.0;           // pu
    double x = 0.0;           // pu
    double b_charging = 0.0;  // pu, total line charging
    double tap = 1.0;         // off-nominal ratio, 1.0 = none
    double shift = 0.0;       // rad
    std::optional<double> rating;  // pu apparent power; nullopt = unlimited
};

struct Generator {
    int bus = 0;
    double p_set = 0.0;  // pu
    double q_set = 0.0;  // pu (fixed injection when attached to a PQ bus)
    double q_min = 0.0;
    double q_max = 0.0;
    double p_min = 0.0;
    double p_max = 0.0;
    double v_setpoint = 1.0;
};

/// Static network description. Call finalize() after filling the raw fields;
/// it derives the index sets and validates structural invariants.
struct GridCase {
    std::string name;
    double base_mva = 100.0;
    std::vector<Bus> buses;
    std::vector<Branch> branches;
    std::vector<Generator> gens;
    int slack_index = -1;

    // derived by finalize(), all ascending by bus index
    std::vector<int> non_slack;
    std::vector<int> pq_buses;
    std::vector<int> gen_buses;  // PV/slack buses carrying at least one unit
    std::vector<std::string> warnings;

    int n_bus() const { return static_cast<int>(buses.size()); }
    int n_pq() const { return static_cast<int>(pq_buses.size()); }
    int n_unknowns() const { return n_bus() - 1 + n_pq(); }

    void finalize();
};

/// Complex nodal admittance matrix Y = G + jB in compressed row form.
struct AdmittanceMatrix {
    int n = 0;
    Eigen::SparseMatrix<Complex, Eigen::RowMajor> y;

    Complex at(int i, int j) const { return y.coeff(i, j); }
};

/// Assemble the bus admittance matrix with the standard pi-model.
///
/// Per branch with series admittance ys = 1/(r+jx), total charging bc and
/// complex tap t = ratio * exp(j*shift) on the from side:
///   Y[f,f] += (ys + j*bc/2) / |t|^2
///   Y[t,t] +=  ys + j*bc/2
///   Y[f,t] += -ys / conj(t)
///   Y[t,f] += -ys / t
/// plus g_shunt + j*b_shunt on each bus diagonal. Contributions are summed in
/// a canonical order so the result is bit-identical under branch permutation.
///
/// Throws InvalidDataError on zero-impedance branches or a disconnected graph.
AdmittanceMatrix build_ybus(const GridCase& grid);

/// Unknown-vector layout shared by the solver, the surrogate output layer and
/// the refinement gradients: angles of all non-slack buses (ascending index)
/// followed by magnitudes of all PQ buses (ascending index).
StateVector full_state(const GridCase& grid, const OperatingCondition& cond, const Vec& unknowns);

/// Inverse of full_state for states consistent with the condition's setpoints.
Vec extract_unknowns(const GridCase& grid, const StateVector& state);

/// Scheduled injections and setpoints of the case data itself.
OperatingCondition nominal_condition(const GridCase& grid);

}  // namespace pfttt
