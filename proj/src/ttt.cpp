#include "pfttt/ttt.hpp"

#include <cmath>
#include <limits>

namespace pfttt {

const char* to_string(StepControl s) {
    return s == StepControl::Fixed ? "fixed" : "backtracking";
}

StepControl step_control_from_string(const std::string& s) {
    if (s == "fixed") return StepControl::Fixed;
    if (s == "backtracking") return StepControl::Backtracking;
    throw InvalidDataError("unknown step control '" + s + "'");
}

void TTTConfig::validate() const {
    if (steps < 0) throw InvalidDataError("ttt steps must be >= 0");
    if (!(eta > 0.0)) throw InvalidDataError("ttt eta must be positive");
    if (lambda_v < 0.0 || lambda_flow < 0.0 || lambda_gen < 0.0)
        throw InvalidDataError("penalty weights must be >= 0");
    if (!(epsilon_rel > 0.0) && !epsilon_abs) throw InvalidDataError("epsilon must be positive");
    if (epsilon_abs && !(*epsilon_abs > 0.0)) throw InvalidDataError("epsilon must be positive");
}

double TTTConfig::resolve_epsilon(const SurrogateParams& params) const {
    if (epsilon_abs) return *epsilon_abs;
    // floor keeps the ball usable for degenerate (near-zero) adaptable layers
    return epsilon_rel * std::max(params.adapt_flat().norm(), 1.0);
}

double penalty_volt(double v, double v_min, double v_max) {
    const double over = std::max(v - v_max, 0.0);
    const double under = std::max(v_min - v, 0.0);
    return over * over + under * under;
}

double penalty_flow(double s_mag, std::optional<double> rating) {
    if (!rating) return 0.0;
    const double over = std::max(s_mag - *rating, 0.0);
    return over * over;
}

LossBreakdown ttt_loss(const StateVector& state, const OperatingCondition& cond,
                       const GridCase& grid, const AdmittanceMatrix& ybus,
                       const TTTConfig& config) {
    MismatchVector mis = compute_mismatch(state, cond, ybus, grid);
    LossBreakdown lb;
    lb.mismatch_p_sq = mis.dp.squaredNorm();
    lb.mismatch_q_sq = mis.dq.squaredNorm();

    if (config.lambda_v > 0.0) {
        double pv = 0.0;
        for (const Bus& b : grid.buses) pv += penalty_volt(state.v[b.index], b.v_min, b.v_max);
        lb.pen_v = config.lambda_v * pv;
    }
    if (config.lambda_flow > 0.0) {
        double pf = 0.0;
        for (const BranchFlow& f : branch_flows(state, grid))
            pf += penalty_flow(f.s_mag, grid.branches[static_cast<std::size_t>(f.branch)].rating);
        lb.pen_flow = config.lambda_flow * pf;
    }
    if (config.include_gen_limits && config.lambda_gen > 0.0) {
        const GenerationRecovery rec = recover_generation(state, grid, cond, ybus);
        const AggregateLimits lim = aggregate_gen_limits(grid);
        double pg = 0.0;
        for (Eigen::Index k = 0; k < rec.q_gen.size(); ++k) {
            const double over = std::max(rec.q_gen[k] - lim.q_max[k], 0.0);
            const double under = std::max(lim.q_min[k] - rec.q_gen[k], 0.0);
            pg += over * over + under * under;
        }
        const double p_over = std::max(rec.p_slack - lim.slack_p_max, 0.0);
        const double p_under = std::max(lim.slack_p_min - rec.p_slack, 0.0);
        pg += p_over * p_over + p_under * p_under;
        lb.pen_gen = config.lambda_gen * pg;
    }
    lb.total = lb.mismatch_p_sq + lb.mismatch_q_sq + lb.pen_v + lb.pen_flow + lb.pen_gen;
    return lb;
}

namespace {

// Derivative row of the calculated injection (P_i or Q_i) with respect to the
// unknown vector, in the calc sign convention.
Vec injection_gradient_row(const StateVector& state, const AdmittanceMatrix& ybus,
                           const GridCase& grid, int bus, bool reactive) {
    const int n = grid.n_bus();
    std::vector<int> th_col(static_cast<std::size_t>(n), -1), v_col(static_cast<std::size_t>(n), -1);
    for (std::size_t k = 0; k < grid.non_slack.size(); ++k)
        th_col[static_cast<std::size_t>(grid.non_slack[k])] = static_cast<int>(k);
    for (std::size_t k = 0; k < grid.pq_buses.size(); ++k)
        v_col[static_cast<std::size_t>(grid.pq_buses[k])] =
            static_cast<int>(grid.non_slack.size() + k);

    Vec p_calc, q_calc;
    compute_injections(state, ybus, p_calc, q_calc);

    Vec row = Vec::Zero(grid.n_unknowns());
    const int i = bus;
    const double vi = state.v[i];
    for (Eigen::SparseMatrix<Complex, Eigen::RowMajor>::InnerIterator it(ybus.y, i); it; ++it) {
        const int j = static_cast<int>(it.col());
        const double g = it.value().real();
        const double b = it.value().imag();
        double d_th, d_v;
        if (i == j) {
            if (!reactive) {
                d_th = -q_calc[i] - b * vi * vi;
                d_v = p_calc[i] / vi + g * vi;
            } else {
                d_th = p_calc[i] - g * vi * vi;
                d_v = q_calc[i] / vi - b * vi;
            }
        } else {
            const double vj = state.v[j];
            const double dd = state.theta[i] - state.theta[j];
            const double c = std::cos(dd), s = std::sin(dd);
            if (!reactive) {
                d_th = vi * vj * (g * s - b * c);
                d_v = vi * (g * c + b * s);
            } else {
                d_th = -vi * vj * (g * c + b * s);
                d_v = vi * (g * s - b * c);
            }
        }
        if (th_col[static_cast<std::size_t>(j)] >= 0) row[th_col[static_cast<std::size_t>(j)]] += d_th;
        if (v_col[static_cast<std::size_t>(j)] >= 0) row[v_col[static_cast<std::size_t>(j)]] += d_v;
    }
    return row;
}

}  // namespace

Vec grad_ttt_wrt_state(const StateVector& state, const OperatingCondition& cond,
                       const GridCase& grid, const AdmittanceMatrix& ybus,
                       const TTTConfig& config) {
    const int n = grid.n_bus();
    if (state.size() != n || cond.size() != n) throw DimensionError("gradient input dimensions");
    const int m = grid.n_unknowns();

    std::vector<int> th_col(static_cast<std::size_t>(n), -1), v_col(static_cast<std::size_t>(n), -1);
    for (std::size_t k = 0; k < grid.non_slack.size(); ++k)
        th_col[static_cast<std::size_t>(grid.non_slack[k])] = static_cast<int>(k);
    for (std::size_t k = 0; k < grid.pq_buses.size(); ++k)
        v_col[static_cast<std::size_t>(grid.pq_buses[k])] =
            static_cast<int>(grid.non_slack.size() + k);

    // mismatch term: d||m||^2/dx = 2 J^T m with J in the mismatch convention
    MismatchVector mis = compute_mismatch(state, cond, ybus, grid);
    Eigen::SparseMatrix<double> jac = compute_jacobian(state, ybus, grid);
    Vec grad = 2.0 * (Eigen::SparseMatrix<double>(jac.transpose()) * mis.stacked());

    // voltage penalty: only PQ magnitudes are coordinates of the unknowns
    if (config.lambda_v > 0.0) {
        for (int b : grid.pq_buses) {
            const Bus& bus = grid.buses[static_cast<std::size_t>(b)];
            const double over = std::max(state.v[b] - bus.v_max, 0.0);
            const double under = std::max(bus.v_min - state.v[b], 0.0);
            grad[v_col[static_cast<std::size_t>(b)]] += config.lambda_v * 2.0 * (over - under);
        }
    }

    // flow penalty via the binding end of each overloaded branch
    if (config.lambda_flow > 0.0) {
        const std::vector<BranchFlow> flows = branch_flows(state, grid);
        for (const BranchFlow& f : flows) {
            const Branch& br = grid.branches[static_cast<std::size_t>(f.branch)];
            if (!br.rating) continue;
            const double excess = f.s_mag - *br.rating;
            if (excess <= 0.0) continue;

            const bool from_side = std::abs(f.s_from) >= std::abs(f.s_to);
            const int o = from_side ? br.from : br.to;  // own end
            const int p = from_side ? br.to : br.from;  // other end
            const Complex ys = 1.0 / Complex(br.r, br.x);
            const Complex sh(0.0, 0.5 * br.b_charging);
            const Complex t = std::polar(br.tap, br.shift);
            const Complex y_oo = from_side ? (ys + sh) / std::norm(t) : (ys + sh);
            const Complex y_op = from_side ? -ys / std::conj(t) : -ys / t;

            const Complex s_e = from_side ? f.s_from : f.s_to;
            const double mag = std::abs(s_e);
            if (mag == 0.0) continue;
            const Complex vo = std::polar(state.v[o], state.theta[o]);
            const Complex vp = std::polar(state.v[p], state.theta[p]);

            const Complex ds_dvo = s_e / state.v[o] + state.v[o] * std::conj(y_oo);
            const Complex ds_dto = Complex(0, 1) * (s_e - std::conj(y_oo) * state.v[o] * state.v[o]);
            const Complex ds_dvp = vo * std::conj(y_op) * std::polar(1.0, -state.theta[p]);
            const Complex ds_dtp = Complex(0, -1) * vo * std::conj(y_op * vp);

            const double coeff = config.lambda_flow * 2.0 * excess / mag;
            auto add = [&](int bus, double dmag_dth, double dmag_dv) {
                if (th_col[static_cast<std::size_t>(bus)] >= 0)
                    grad[th_col[static_cast<std::size_t>(bus)]] += coeff * dmag_dth;
                if (v_col[static_cast<std::size_t>(bus)] >= 0)
                    grad[v_col[static_cast<std::size_t>(bus)]] += coeff * dmag_dv;
            };
            add(o, (std::conj(s_e) * ds_dto).real(), (std::conj(s_e) * ds_dvo).real());
            add(p, (std::conj(s_e) * ds_dtp).real(), (std::conj(s_e) * ds_dvp).real());
        }
    }

    if (config.include_gen_limits && config.lambda_gen > 0.0) {
        const GenerationRecovery rec = recover_generation(state, grid, cond, ybus);
        const AggregateLimits lim = aggregate_gen_limits(grid);
        for (std::size_t k = 0; k < grid.gen_buses.size(); ++k) {
            const double qg = rec.q_gen[static_cast<Eigen::Index>(k)];
            const double over = std::max(qg - lim.q_max[static_cast<Eigen::Index>(k)], 0.0);
            const double under = std::max(lim.q_min[static_cast<Eigen::Index>(k)] - qg, 0.0);
            if (over == 0.0 && under == 0.0) continue;
            Vec row = injection_gradient_row(state, ybus, grid, grid.gen_buses[k], true);
            grad += config.lambda_gen * 2.0 * (over - under) * row;
        }
        const double over = std::max(rec.p_slack - lim.slack_p_max, 0.0);
        const double under = std::max(lim.slack_p_min - rec.p_slack, 0.0);
        if (over != 0.0 || under != 0.0) {
            Vec row = injection_gradient_row(state, ybus, grid, grid.slack_index, false);
            grad += config.lambda_gen * 2.0 * (over - under) * row;
        }
    }

    if (grad.size() != m) throw DimensionError("gradient dimension bookkeeping failed");
    return grad;
}

Vec project_phi(Vec phi, double epsilon) {
    if (!(epsilon > 0.0)) throw InvalidDataError("epsilon must be positive");
    double norm = phi.norm();
    if (norm <= epsilon) return phi;
    phi *= epsilon / norm;
    // guard the invariant against rounding in the scale factor
    while (phi.norm() > epsilon) phi *= 1.0 - 4.0 * std::numeric_limits<double>::epsilon();
    return phi;
}

RefineResult refine(const SurrogateParams& params, const OperatingCondition& cond,
                    const GridCase& grid, const AdmittanceMatrix& ybus, const TTTConfig& config) {
    config.validate();
    validate_model_for_case(params, grid);
    if (cond.size() != grid.n_bus()) throw DimensionError("condition does not match case");

    const Vec features = encode_input(cond, grid, &params.stats);
    ForwardCache cache;
    const Vec u0 = forward(params, features, &cache);

    RefineResult res;
    res.initial_state = full_state(grid, cond, u0);
    res.state = res.initial_state;
    res.adapt.phi = Vec::Zero(params.adapt_size());
    if (config.steps == 0) return res;

    const double eps = config.resolve_epsilon(params);
    Vec phi = Vec::Zero(params.adapt_size());
    StateVector x = res.initial_state;
    LossBreakdown lb = ttt_loss(x, cond, grid, ybus, config);
    if (!std::isfinite(lb.total)) {
        res.adapt.aborted = true;
        res.adapt.diagnostic = "non-finite loss at the initial prediction";
        return res;
    }

    for (int k = 0; k < config.steps; ++k) {
        const Vec dl_du = grad_ttt_wrt_state(x, cond, grid, ybus, config);
        if (!dl_du.allFinite()) {
            res.adapt.aborted = true;
            res.adapt.diagnostic = "non-finite state gradient at step " + std::to_string(k);
            res.state = res.initial_state;
            res.adapt.phi = Vec::Zero(params.adapt_size());
            return res;
        }
        const Vec g = backward_output_to_adapt(params, cache, dl_du);
        const double gnorm = g.norm();

        StepRecord rec;
        if (gnorm > 0.0) {
            if (config.step_control == StepControl::Backtracking) {
                const Vec dir = g / gnorm;
                double step = config.eta;
                bool accepted = false;
                for (int t = 0; t <= 8; ++t) {
                    Vec cand_phi = project_phi(phi - step * dir, eps);
                    StateVector cand_x = full_state(grid, cond, forward_adapted(params, cache, cand_phi));
                    LossBreakdown cand_lb = ttt_loss(cand_x, cond, grid, ybus, config);
                    if (std::isfinite(cand_lb.total) && cand_lb.total <= lb.total) {
                        phi = std::move(cand_phi);
                        x = std::move(cand_x);
                        lb = cand_lb;
                        rec.step_len = step;
                        rec.halvings = t;
                        accepted = true;
                        break;
                    }
                    step *= 0.5;
                }
                if (!accepted) {
                    rec.step_len = 0.0;
                    rec.halvings = 9;
                }
            } else {
                phi = project_phi(phi - config.eta * g, eps);
                x = full_state(grid, cond, forward_adapted(params, cache, phi));
                lb = ttt_loss(x, cond, grid, ybus, config);
                rec.step_len = config.eta * gnorm;
                if (!std::isfinite(lb.total)) {
                    res.adapt.aborted = true;
                    res.adapt.diagnostic = "non-finite loss at step " + std::to_string(k);
                    res.state = res.initial_state;
                    res.adapt.phi = Vec::Zero(params.adapt_size());
                    return res;
                }
            }
        }
        rec.loss = lb.total;
        rec.mismatch_sq = lb.mismatch_sq();
        rec.pen_v = lb.pen_v;
        rec.pen_flow = lb.pen_flow;
        rec.phi_norm = phi.norm();
        res.adapt.trace.push_back(rec);
    }

    res.state = x;
    res.adapt.phi = phi;
    return res;
}

}  // namespace pfttt
