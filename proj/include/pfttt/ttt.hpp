#pragma once

#include <optional>
#include <vector>

#include "pfttt/pf.hpp"
#include "pfttt/surrogate.hpp"

namespace pfttt {

enum class StepControl { Fixed, Backtracking };

const char* to_string(StepControl s);
StepControl step_control_from_string(const std::string& s);

/// Knobs of the per-sample refinement loop.
///
/// `eta` is the step length applied to the normalized gradient under
/// backtracking, and the raw-gradient step size in fixed mode. The trust
/// region is epsilon_rel * ||theta_adapt||_2 unless epsilon_abs overrides it.
struct TTTConfig {
    int steps = 10;
    double eta = 0.01;
    double lambda_v = 100.0;
    double lambda_flow = 100.0;
    double epsilon_rel = 0.1;
    std::optional<double> epsilon_abs;
    StepControl step_control = StepControl::Backtracking;
    bool include_gen_limits = false;
    double lambda_gen = 100.0;

    void validate() const;
    double resolve_epsilon(const SurrogateParams& params) const;
};

struct LossBreakdown {
    double total = 0.0;
    double mismatch_p_sq = 0.0;
    double mismatch_q_sq = 0.0;
    double pen_v = 0.0;     // lambda_v * sum of voltage penalties
    double pen_flow = 0.0;  // lambda_flow * sum of flow penalties
    double pen_gen = 0.0;   // optional generator-limit penalty

    double mismatch_sq() const { return mismatch_p_sq + mismatch_q_sq; }
};

struct StepRecord {
    double loss = 0.0;
    double mismatch_sq = 0.0;
    double pen_v = 0.0;
    double pen_flow = 0.0;
    double phi_norm = 0.0;
    double step_len = 0.0;  // accepted step length; 0 when every trial failed
    int halvings = 0;
};

/// Per-sample adaptation record: the perturbation of the adaptable layer and
/// the per-step trace.
struct AdaptState {
    Vec phi;
    std::vector<StepRecord> trace;
    bool aborted = false;
    std::string diagnostic;
};

/// Squared-hinge voltage penalty: relu(v - v_max)^2 + relu(v_min - v)^2.
double penalty_volt(double v, double v_min, double v_max);

/// Squared-hinge flow penalty: relu(s_mag - rating)^2; 0 for unrated branches.
double penalty_flow(double s_mag, std::optional<double> rating);

/// Composite self-supervised loss: squared mismatch norms plus weighted
/// voltage and flow penalties (and, optionally, generator-limit penalties).
LossBreakdown ttt_loss(const StateVector& state, const OperatingCondition& cond,
                       const GridCase& grid, const AdmittanceMatrix& ybus,
                       const TTTConfig& config);

/// Analytic gradient of ttt_loss with respect to the unknown vector.
Vec grad_ttt_wrt_state(const StateVector& state, const OperatingCondition& cond,
                       const GridCase& grid, const AdmittanceMatrix& ybus,
                       const TTTConfig& config);

/// Radial projection onto the epsilon ball; the result never exceeds epsilon.
Vec project_phi(Vec phi, double epsilon);

struct RefineResult {
    StateVector initial_state;  // surrogate prediction before refinement
    StateVector state;          // refined prediction
    AdaptState adapt;
};

/// Run the refinement loop: forward once through the frozen prefix, then K
/// projected gradient steps on the final-layer perturbation. Backtracking
/// halves the trial step until the loss does not increase (at most 8 halvings,
/// then a zero step). A non-finite loss or gradient aborts and returns the
/// initial prediction with the diagnostic flag set.
RefineResult refine(const SurrogateParams& params, const OperatingCondition& cond,
                    const GridCase& grid, const AdmittanceMatrix& ybus, const TTTConfig& config);

}  // namespace pfttt
