#pragma once

#include <doctest.h>

#include <functional>
#include <string>

#include "pfttt/case_io.hpp"
#include "pfttt/grid.hpp"
#include "pfttt/pf.hpp"
#include "pfttt/rng.hpp"
#include "pfttt/surrogate.hpp"

namespace testutil {

using namespace pfttt;

inline std::string data_path(const std::string& file) {
    return std::string(PFTTT_DATA_DIR) + "/" + file;
}

inline GridCase load_case14() { return load_case_file(data_path("case14.m")); }

/// Slack + PQ bus joined by one branch; the workhorse for hand-derived values.
inline GridCase make_two_bus(double pd = 0.0, double qd = 0.0, double r = 0.0, double x = 0.1,
                             double b_charging = 0.0,
                             std::optional<double> rating = std::nullopt) {
    GridCase g;
    g.name = "twobus";
    g.base_mva = 100.0;
    Bus slack;
    slack.index = 0;
    slack.ext_id = 1;
    slack.kind = BusKind::Slack;
    slack.v_min = 0.9;
    slack.v_max = 1.1;
    slack.v_setpoint = 1.0;
    Bus load;
    load.index = 1;
    load.ext_id = 2;
    load.kind = BusKind::PQ;
    load.p_load = pd;
    load.q_load = qd;
    load.v_min = 0.9;
    load.v_max = 1.1;
    g.buses = {slack, load};
    Branch br;
    br.from = 0;
    br.to = 1;
    br.r = r;
    br.x = x;
    br.b_charging = b_charging;
    br.rating = rating;
    g.branches = {br};
    Generator gen;
    gen.bus = 0;
    gen.q_min = -5.0;
    gen.q_max = 5.0;
    gen.p_min = 0.0;
    gen.p_max = 10.0;
    gen.v_setpoint = 1.0;
    g.gens = {gen};
    g.finalize();
    return g;
}

/// Random state consistent with the condition's setpoints.
inline StateVector random_state(const GridCase& grid, const OperatingCondition& cond, Rng& rng,
                                double angle_spread = 0.2, double mag_spread = 0.05) {
    Vec u(grid.n_unknowns());
    int k = 0;
    for (std::size_t i = 0; i < grid.non_slack.size(); ++i)
        u[k++] = rng.uniform(-angle_spread, angle_spread);
    for (std::size_t i = 0; i < grid.pq_buses.size(); ++i)
        u[k++] = 1.0 + rng.uniform(-mag_spread, mag_spread);
    return full_state(grid, cond, u);
}

/// Central finite difference of a scalar function at x along coordinate k.
inline double fd_partial(const std::function<double(const Vec&)>& f, Vec x, Eigen::Index k,
                         double h = 1e-6) {
    const double orig = x[k];
    x[k] = orig + h;
    const double fp = f(x);
    x[k] = orig - h;
    const double fm = f(x);
    return (fp - fm) / (2.0 * h);
}

inline bool rel_close(double a, double b, double tol, double floor = 1.0) {
    const double scale = std::max({std::abs(a), std::abs(b), floor});
    return std::abs(a - b) <= tol * scale;
}

/// Random but valid surrogate for gradient tests.
inline SurrogateParams make_random_params(const std::vector<int>& dims, Rng& rng,
                                          bool random_stats = false) {
    SurrogateParams p;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        Layer layer;
        layer.w.resize(dims[l + 1], dims[l]);
        layer.b.resize(dims[l + 1]);
        for (Eigen::Index i = 0; i < layer.w.size(); ++i)
            layer.w.data()[i] = rng.uniform(-0.7, 0.7);
        for (Eigen::Index i = 0; i < layer.b.size(); ++i) layer.b[i] = rng.uniform(-0.3, 0.3);
        p.layers.push_back(std::move(layer));
    }
    p.adapt_boundary = static_cast<int>(p.layers.size()) - 1;
    p.stats = NormStats::identity(dims.front(), dims.back());
    if (random_stats) {
        for (Eigen::Index i = 0; i < p.stats.out_mean.size(); ++i) {
            p.stats.out_mean[i] = rng.uniform(-0.5, 0.5);
            p.stats.out_scale[i] = rng.uniform(0.5, 2.0);
        }
        for (Eigen::Index i = 0; i < p.stats.in_mean.size(); ++i) {
            p.stats.in_mean[i] = rng.uniform(-0.5, 0.5);
            p.stats.in_scale[i] = rng.uniform(0.5, 2.0);
        }
    }
    return p;
}

}  // namespace testutil
