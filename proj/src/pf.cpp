#include "pfttt/pf.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseLU>
#include <cmath>

namespace pfttt {

void compute_injections(const StateVector& state, const AdmittanceMatrix& ybus, Vec& p_calc,
                        Vec& q_calc) {
    const int n = ybus.n;
    if (state.size() != n) throw DimensionError("state/ybus dimension mismatch");
    p_calc.resize(n);
    q_calc.resize(n);
    for (int i = 0; i < n; ++i) {
        const double vi = state.v[i];
        const double ti = state.theta[i];
        double p = 0.0, q = 0.0;
        for (Eigen::SparseMatrix<Complex, Eigen::RowMajor>::InnerIterator it(ybus.y, i); it;
             ++it) {
            const int j = static_cast<int>(it.col());
            const double g = it.value().real();
            const double b = it.value().imag();
            const double d = ti - state.theta[j];
            const double c = std::cos(d), s = std::sin(d);
            p += state.v[j] * (g * c + b * s);
            q += state.v[j] * (g * s - b * c);
        }
        p_calc[i] = vi * p;
        q_calc[i] = vi * q;
    }
}

MismatchVector compute_mismatch(const StateVector& state, const OperatingCondition& cond,
                                const AdmittanceMatrix& ybus, const GridCase& grid) {
    if (cond.size() != grid.n_bus() || state.size() != grid.n_bus())
        throw DimensionError("mismatch input dimensions disagree");
    Vec p_calc, q_calc;
    compute_injections(state, ybus, p_calc, q_calc);
    MismatchVector m;
    m.dp.resize(grid.non_slack.size());
    m.dq.resize(grid.pq_buses.size());
    for (std::size_t k = 0; k < grid.non_slack.size(); ++k) {
        const int b = grid.non_slack[k];
        m.dp[static_cast<Eigen::Index>(k)] = cond.p_spec[b] - p_calc[b];
    }
    for (std::size_t k = 0; k < grid.pq_buses.size(); ++k) {
        const int b = grid.pq_buses[k];
        m.dq[static_cast<Eigen::Index>(k)] = cond.q_spec[b] - q_calc[b];
    }
    return m;
}

Eigen::SparseMatrix<double> compute_jacobian(const StateVector& state,
                                             const AdmittanceMatrix& ybus, const GridCase& grid) {
    const int n = grid.n_bus();
    if (state.size() != n || ybus.n != n) throw DimensionError("jacobian input dimensions disagree");

    // column/row positions of each bus in the reduced system; -1 = not present
    std::vector<int> th_col(n, -1), v_col(n, -1), p_row(n, -1), q_row(n, -1);
    for (std::size_t k = 0; k < grid.non_slack.size(); ++k) {
        th_col[grid.non_slack[k]] = static_cast<int>(k);
        p_row[grid.non_slack[k]] = static_cast<int>(k);
    }
    const int n_th = static_cast<int>(grid.non_slack.size());
    const int n_p = n_th;
    for (std::size_t k = 0; k < grid.pq_buses.size(); ++k) {
        v_col[grid.pq_buses[k]] = n_th + static_cast<int>(k);
        q_row[grid.pq_buses[k]] = n_p + static_cast<int>(k);
    }
    const int m = grid.n_unknowns();

    Vec p_calc, q_calc;
    compute_injections(state, ybus, p_calc, q_calc);

    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(ybus.y.nonZeros()) * 4);

    // Mismatch convention: J = d(spec - calc)/dx = -d(calc)/dx.
    for (int i = 0; i < n; ++i) {
        const double vi = state.v[i];
        for (Eigen::SparseMatrix<Complex, Eigen::RowMajor>::InnerIterator it(ybus.y, i); it;
             ++it) {
            const int j = static_cast<int>(it.col());
            const double g = it.value().real();
            const double b = it.value().imag();
            if (i == j) {
                const double dP_dth = -q_calc[i] - b * vi * vi;
                const double dQ_dth = p_calc[i] - g * vi * vi;
                const double dP_dv = p_calc[i] / vi + g * vi;
                const double dQ_dv = q_calc[i] / vi - b * vi;
                if (p_row[i] >= 0 && th_col[i] >= 0) trips.emplace_back(p_row[i], th_col[i], -dP_dth);
                if (p_row[i] >= 0 && v_col[i] >= 0) trips.emplace_back(p_row[i], v_col[i], -dP_dv);
                if (q_row[i] >= 0 && th_col[i] >= 0) trips.emplace_back(q_row[i], th_col[i], -dQ_dth);
                if (q_row[i] >= 0 && v_col[i] >= 0) trips.emplace_back(q_row[i], v_col[i], -dQ_dv);
            } else {
                const double vj = state.v[j];
                const double d = state.theta[i] - state.theta[j];
                const double c = std::cos(d), s = std::sin(d);
                const double dP_dth = vi * vj * (g * s - b * c);   // wrt theta_j
                const double dQ_dth = -vi * vj * (g * c + b * s);  // wrt theta_j
                const double dP_dv = vi * (g * c + b * s);         // wrt v_j
                const double dQ_dv = vi * (g * s - b * c);         // wrt v_j
                if (p_row[i] >= 0 && th_col[j] >= 0) trips.emplace_back(p_row[i], th_col[j], -dP_dth);
                if (p_row[i] >= 0 && v_col[j] >= 0) trips.emplace_back(p_row[i], v_col[j], -dP_dv);
                if (q_row[i] >= 0 && th_col[j] >= 0) trips.emplace_back(q_row[i], th_col[j], -dQ_dth);
                if (q_row[i] >= 0 && v_col[j] >= 0) trips.emplace_back(q_row[i], v_col[j], -dQ_dv);
            }
        }
    }

    Eigen::SparseMatrix<double> jac(m, m);
    jac.setFromTriplets(trips.begin(), trips.end());
    jac.makeCompressed();
    return jac;
}

namespace {

Vec flat_start(const GridCase& grid, const OperatingCondition& cond) {
    Vec u(grid.n_unknowns());
    int k = 0;
    for (std::size_t i = 0; i < grid.non_slack.size(); ++i) u[k++] = 0.0;
    for (std::size_t i = 0; i < grid.pq_buses.size(); ++i) u[k++] = 1.0;
    (void)cond;
    return u;
}

}  // namespace

NewtonResult newton_raphson(const GridCase& grid, const AdmittanceMatrix& ybus,
                            const OperatingCondition& cond, const NewtonOptions& opts,
                            const Vec* init) {
    if (opts.tol <= 0.0) throw InvalidDataError("newton tolerance must be positive");
    if (opts.max_iter < 1) throw InvalidDataError("newton max_iter must be >= 1");

    Vec u = init ? *init : flat_start(grid, cond);
    if (u.size() != grid.n_unknowns()) throw DimensionError("newton initial vector length");

    NewtonResult res;
    res.state = full_state(grid, cond, u);

    const bool dense = grid.n_bus() < 50;
    for (int it = 0; it <= opts.max_iter; ++it) {
        MismatchVector mis = compute_mismatch(res.state, cond, ybus, grid);
        res.max_mismatch = mis.max_abs();
        res.mismatch_history.push_back(res.max_mismatch);
        if (!std::isfinite(res.max_mismatch)) {
            res.converged = false;
            res.iterations = it;
            return res;
        }
        if (res.max_mismatch <= opts.tol) {
            res.converged = true;
            res.iterations = it;
            return res;
        }
        if (it == opts.max_iter) break;

        Eigen::SparseMatrix<double> jac = compute_jacobian(res.state, ybus, grid);
        Vec rhs = -mis.stacked();
        Vec du;
        if (dense) {
            Eigen::PartialPivLU<Mat> lu{Mat(jac)};
            du = lu.solve(rhs);
        } else {
            Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
            lu.analyzePattern(jac);
            lu.factorize(jac);
            if (lu.info() != Eigen::Success)
                throw NumericalError("singular Jacobian at iteration " + std::to_string(it));
            du = lu.solve(rhs);
        }
        if (!du.allFinite())
            throw NumericalError("singular Jacobian at iteration " + std::to_string(it));
        u += du;
        res.state = full_state(grid, cond, u);
    }
    res.converged = false;
    res.iterations = opts.max_iter;
    return res;
}

std::vector<BranchFlow> branch_flows(const StateVector& state, const GridCase& grid) {
    if (state.size() != grid.n_bus()) throw DimensionError("state dimension mismatch");
    std::vector<BranchFlow> flows;
    flows.reserve(grid.branches.size());
    for (std::size_t l = 0; l < grid.branches.size(); ++l) {
        const Branch& br = grid.branches[l];
        const Complex ys = 1.0 / Complex(br.r, br.x);
        const Complex sh(0.0, 0.5 * br.b_charging);
        const Complex t = std::polar(br.tap, br.shift);
        const Complex yff = (ys + sh) / std::norm(t);
        const Complex ytt = ys + sh;
        const Complex yft = -ys / std::conj(t);
        const Complex ytf = -ys / t;
        const Complex vf = std::polar(state.v[br.from], state.theta[br.from]);
        const Complex vt = std::polar(state.v[br.to], state.theta[br.to]);
        BranchFlow f;
        f.branch = static_cast<int>(l);
        f.s_from = vf * std::conj(yff * vf + yft * vt);
        f.s_to = vt * std::conj(ytf * vf + ytt * vt);
        f.s_mag = std::max(std::abs(f.s_from), std::abs(f.s_to));
        flows.push_back(f);
    }
    return flows;
}

GenerationRecovery recover_generation(const StateVector& state, const GridCase& grid,
                                      const OperatingCondition& cond,
                                      const AdmittanceMatrix& ybus) {
    Vec p_calc, q_calc;
    compute_injections(state, ybus, p_calc, q_calc);
    GenerationRecovery rec;
    rec.q_gen.resize(grid.gen_buses.size());
    for (std::size_t k = 0; k < grid.gen_buses.size(); ++k) {
        const int b = grid.gen_buses[k];
        // q_spec at PV/slack buses carries only -Qd, so this is q_calc + Qd.
        rec.q_gen[static_cast<Eigen::Index>(k)] = q_calc[b] - cond.q_spec[b];
    }
    rec.p_slack = p_calc[grid.slack_index] - cond.p_spec[grid.slack_index];
    return rec;
}

GenerationRecovery recover_generation(const StateVector& state, const GridCase& grid,
                                      const OperatingCondition& cond) {
    return recover_generation(state, grid, cond, build_ybus(grid));
}

AggregateLimits aggregate_gen_limits(const GridCase& grid) {
    AggregateLimits lim;
    lim.q_min = Vec::Zero(grid.gen_buses.size());
    lim.q_max = Vec::Zero(grid.gen_buses.size());
    std::vector<int> pos(grid.buses.size(), -1);
    for (std::size_t k = 0; k < grid.gen_buses.size(); ++k)
        pos[static_cast<std::size_t>(grid.gen_buses[k])] = static_cast<int>(k);
    for (const Generator& g : grid.gens) {
        const int k = pos[static_cast<std::size_t>(g.bus)];
        if (k >= 0) {
            lim.q_min[k] += g.q_min;
            lim.q_max[k] += g.q_max;
        }
        if (g.bus == grid.slack_index) {
            lim.slack_p_min += g.p_min;
            lim.slack_p_max += g.p_max;
        }
    }
    return lim;
}

}  // namespace pfttt
