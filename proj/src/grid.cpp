#include "pfttt/grid.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <queue>

namespace pfttt {

void GridCase::finalize() {
    non_slack.clear();
    pq_buses.clear();
    gen_buses.clear();

    int slack_count = 0;
    for (const Bus& b : buses) {
        if (b.kind == BusKind::Slack) {
            ++slack_count;
            slack_index = b.index;
        }
    }
    if (slack_count == 0) throw InvalidDataError("no slack bus");
    if (slack_count > 1) throw InvalidDataError("multiple slack buses");

    for (const Bus& b : buses) {
        if (b.index != &b - buses.data())
            throw InvalidDataError("bus indices not contiguous");
        if (!(b.v_min < b.v_max))
            throw InvalidDataError("bus " + std::to_string(b.ext_id) + ": v_min >= v_max");
        if (b.kind != BusKind::Slack) non_slack.push_back(b.index);
        if (b.kind == BusKind::PQ) pq_buses.push_back(b.index);
        if (b.kind != BusKind::PQ &&
            (b.v_setpoint > b.v_max + 1e-12 || b.v_setpoint < b.v_min - 1e-12)) {
            warnings.push_back("bus " + std::to_string(b.ext_id) + ": setpoint " +
                               std::to_string(b.v_setpoint) + " outside [" +
                               std::to_string(b.v_min) + ", " + std::to_string(b.v_max) + "]");
        }
    }

    for (const Branch& br : branches) {
        if (br.from == br.to)
            throw InvalidDataError("branch with identical endpoints " + std::to_string(br.from));
        if (br.from < 0 || br.from >= n_bus() || br.to < 0 || br.to >= n_bus())
            throw InvalidDataError("branch endpoint out of range");
        if (br.r * br.r + br.x * br.x == 0.0)
            throw InvalidDataError("zero-impedance branch " + std::to_string(br.from) + "-" +
                                   std::to_string(br.to));
    }

    std::vector<bool> has_gen(buses.size(), false);
    for (const Generator& g : gens) {
        if (g.bus < 0 || g.bus >= n_bus()) throw InvalidDataError("generator bus out of range");
        if (g.q_min > g.q_max) throw InvalidDataError("generator q_min > q_max");
        if (g.p_min > g.p_max) throw InvalidDataError("generator p_min > p_max");
        has_gen[g.bus] = true;
    }
    for (const Bus& b : buses) {
        if (b.kind != BusKind::PQ && has_gen[b.index]) gen_buses.push_back(b.index);
        if (b.kind != BusKind::PQ && !has_gen[b.index])
            throw InvalidDataError("bus " + std::to_string(b.ext_id) +
                                   " is PV/slack but has no in-service generator");
        if (b.kind == BusKind::PQ && has_gen[b.index])
            warnings.push_back("bus " + std::to_string(b.ext_id) +
                               " is PQ but carries a generator (treated as fixed injection)");
    }
}

namespace {

struct Triplet {
    int row;
    int col;
    Complex value;
};

// Canonical contribution order: by matrix position, ties broken by the bit
// pattern of the value. Makes assembly invariant to branch ordering.
bool triplet_less(const Triplet& a, const Triplet& b) {
    if (a.row != b.row) return a.row < b.row;
    if (a.col != b.col) return a.col < b.col;
    auto key = [](double d) { return std::bit_cast<std::uint64_t>(d); };
    if (key(a.value.real()) != key(b.value.real()))
        return key(a.value.real()) < key(b.value.real());
    return key(a.value.imag()) < key(b.value.imag());
}

void check_connected(const GridCase& grid) {
    const int n = grid.n_bus();
    std::vector<std::vector<int>> adj(n);
    for (const Branch& br : grid.branches) {
        adj[br.from].push_back(br.to);
        adj[br.to].push_back(br.from);
    }
    std::vector<bool> seen(n, false);
    std::queue<int> frontier;
    frontier.push(grid.slack_index);
    seen[grid.slack_index] = true;
    while (!frontier.empty()) {
        int u = frontier.front();
        frontier.pop();
        for (int v : adj[u]) {
            if (!seen[v]) {
                seen[v] = true;
                frontier.push(v);
            }
        }
    }
    for (int i = 0; i < n; ++i) {
        if (!seen[i])
            throw InvalidDataError("network is disconnected: bus " +
                                   std::to_string(grid.buses[i].ext_id) +
                                   " unreachable from the slack bus");
    }
}

}  // namespace

AdmittanceMatrix build_ybus(const GridCase& grid) {
    const int n = grid.n_bus();
    for (const Branch& br : grid.branches) {
        if (br.r * br.r + br.x * br.x == 0.0)
            throw InvalidDataError("zero-impedance branch " + std::to_string(br.from) + "-" +
                                   std::to_string(br.to));
    }
    check_connected(grid);

    std::vector<Triplet> trips;
    trips.reserve(4 * grid.branches.size() + n);
    for (const Branch& br : grid.branches) {
        const Complex ys = 1.0 / Complex(br.r, br.x);
        const Complex sh(0.0, 0.5 * br.b_charging);
        const Complex t = std::polar(br.tap, br.shift);
        const double t2 = std::norm(t);
        trips.push_back({br.from, br.from, (ys + sh) / t2});
        trips.push_back({br.to, br.to, ys + sh});
        trips.push_back({br.from, br.to, -ys / std::conj(t)});
        trips.push_back({br.to, br.from, -ys / t});
    }
    for (const Bus& b : grid.buses) {
        if (b.g_shunt != 0.0 || b.b_shunt != 0.0)
            trips.push_back({b.index, b.index, Complex(b.g_shunt, b.b_shunt)});
    }
    std::sort(trips.begin(), trips.end(), triplet_less);

    AdmittanceMatrix ybus;
    ybus.n = n;
    ybus.y.resize(n, n);
    std::vector<Eigen::Triplet<Complex>> merged;
    merged.reserve(trips.size());
    std::size_t i = 0;
    while (i < trips.size()) {
        Complex acc = trips[i].value;
        std::size_t j = i + 1;
        while (j < trips.size() && trips[j].row == trips[i].row && trips[j].col == trips[i].col) {
            acc += trips[j].value;
            ++j;
        }
        merged.emplace_back(trips[i].row, trips[i].col, acc);
        i = j;
    }
    ybus.y.setFromTriplets(merged.begin(), merged.end());
    ybus.y.makeCompressed();
    return ybus;
}

StateVector full_state(const GridCase& grid, const OperatingCondition& cond, const Vec& unknowns) {
    const int n = grid.n_bus();
    if (cond.size() != n) throw DimensionError("condition dimension mismatch");
    if (unknowns.size() != grid.n_unknowns())
        throw DimensionError("unknown vector has length " + std::to_string(unknowns.size()) +
                             ", expected " + std::to_string(grid.n_unknowns()));

    StateVector state(Vec::Zero(n), Vec::Zero(n));
    int k = 0;
    for (int b : grid.non_slack) state.theta[b] = unknowns[k++];
    for (const Bus& b : grid.buses)
        if (b.kind != BusKind::PQ) state.v[b.index] = cond.v_setpoints[b.index];
    for (int b : grid.pq_buses) state.v[b] = unknowns[k++];
    state.theta[grid.slack_index] = 0.0;
    return state;
}

Vec extract_unknowns(const GridCase& grid, const StateVector& state) {
    if (state.size() != grid.n_bus()) throw DimensionError("state dimension mismatch");
    Vec u(grid.n_unknowns());
    int k = 0;
    for (int b : grid.non_slack) u[k++] = state.theta[b];
    for (int b : grid.pq_buses) u[k++] = state.v[b];
    return u;
}

OperatingCondition nominal_condition(const GridCase& grid) {
    const int n = grid.n_bus();
    OperatingCondition cond;
    cond.p_spec = Vec::Zero(n);
    cond.q_spec = Vec::Zero(n);
    cond.v_setpoints = Vec::Zero(n);
    for (const Bus& b : grid.buses) {
        cond.p_spec[b.index] = -b.p_load;
        cond.q_spec[b.index] = -b.q_load;
        if (b.kind != BusKind::PQ) cond.v_setpoints[b.index] = b.v_setpoint;
    }
    for (const Generator& g : grid.gens) {
        // Slack generation is free and stays out of the schedule; fixed Q
        // applies only where voltage is not regulated.
        if (g.bus != grid.slack_index) cond.p_spec[g.bus] += g.p_set;
        if (grid.buses[g.bus].kind == BusKind::PQ) cond.q_spec[g.bus] += g.q_set;
    }
    return cond;
}

}  // namespace pfttt
