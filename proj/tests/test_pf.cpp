#include <bit>

#include "testutil.hpp"

using namespace pfttt;
using namespace testutil;

namespace {

Eigen::MatrixXd fd_jacobian(const GridCase& g, const AdmittanceMatrix& y,
                            const OperatingCondition& cond, const Vec& u, double h = 1e-6) {
    const int m = g.n_unknowns();
    Eigen::MatrixXd jac(m, m);
    for (int k = 0; k < m; ++k) {
        Vec up = u, dn = u;
        up[k] += h;
        dn[k] -= h;
        Vec fp = compute_mismatch(full_state(g, cond, up), cond, y, g).stacked();
        Vec fm = compute_mismatch(full_state(g, cond, dn), cond, y, g).stacked();
        jac.col(k) = (fp - fm) / (2.0 * h);
    }
    return jac;
}

void check_jacobian_against_fd(const GridCase& g, int n_states, std::uint64_t seed) {
    AdmittanceMatrix y = build_ybus(g);
    OperatingCondition cond = nominal_condition(g);
    Rng rng(seed);
    for (int trial = 0; trial < n_states; ++trial) {
        StateVector s = random_state(g, cond, rng);
        Vec u = extract_unknowns(g, s);
        Eigen::MatrixXd analytic = Eigen::MatrixXd(compute_jacobian(s, y, g));
        Eigen::MatrixXd fd = fd_jacobian(g, y, cond, u);
        for (int r = 0; r < analytic.rows(); ++r)
            for (int c = 0; c < analytic.cols(); ++c)
                CHECK(rel_close(analytic(r, c), fd(r, c), 1e-5));
    }
}

}  // namespace

TEST_CASE("flat start on a tap-free shunt-free network has zero injections") {
    GridCase g = load_case14();
    for (Branch& br : g.branches) {
        br.tap = 1.0;
        br.shift = 0.0;
        br.b_charging = 0.0;
    }
    for (Bus& b : g.buses) {
        b.g_shunt = 0.0;
        b.b_shunt = 0.0;
    }
    AdmittanceMatrix y = build_ybus(g);
    StateVector flat(Vec::Ones(g.n_bus()), Vec::Zero(g.n_bus()));
    Vec p, q;
    compute_injections(flat, y, p, q);
    CHECK(p.cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(q.cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("two-bus closed-form injection") {
    GridCase g = make_two_bus();
    AdmittanceMatrix y = build_ybus(g);
    StateVector s(Vec::Ones(2), Vec::Zero(2));
    s.theta[1] = -0.1;
    Vec p, q;
    compute_injections(s, y, p, q);
    CHECK(p[0] == doctest::Approx(10.0 * std::sin(0.1)).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(-10.0 * std::sin(0.1)).epsilon(1e-12));
}

TEST_CASE("mismatch at a flat start equals the specified injections on a shunt-free net") {
    GridCase g = make_two_bus(0.4, 0.25);
    AdmittanceMatrix y = build_ybus(g);
    OperatingCondition cond = nominal_condition(g);
    StateVector flat(Vec::Ones(2), Vec::Zero(2));
    MismatchVector m = compute_mismatch(flat, cond, y, g);
    CHECK(m.dp[0] == doctest::Approx(-0.4).epsilon(1e-14));
    CHECK(m.dq[0] == doctest::Approx(-0.25).epsilon(1e-14));
}

TEST_CASE("mismatch vanishes at the solved state") {
    GridCase g = load_case14();
    AdmittanceMatrix y = build_ybus(g);
    OperatingCondition cond = nominal_condition(g);
    NewtonResult sol = newton_raphson(g, y, cond);
    REQUIRE(sol.converged);
    MismatchVector m = compute_mismatch(sol.state, cond, y, g);
    CHECK(m.max_abs() <= 1e-8);
}

TEST_CASE("jacobian matches central finite differences") {
    SUBCASE("two-bus") { check_jacobian_against_fd(make_two_bus(0.3, 0.1, 0.02, 0.1, 0.03), 8, 21); }
    SUBCASE("case14") { check_jacobian_against_fd(load_case14(), 5, 22); }
    SUBCASE("synth118") {
        check_jacobian_against_fd(load_case_file(data_path("synth118.m")), 2, 23);
    }
}

TEST_CASE("two-bus flat-start jacobian diagonal") {
    GridCase g = make_two_bus();
    AdmittanceMatrix y = build_ybus(g);
    StateVector flat(Vec::Ones(2), Vec::Zero(2));
    Eigen::MatrixXd jac = Eigen::MatrixXd(compute_jacobian(flat, y, g));
    // d(dP2)/d(theta2) = -V2 V1 B21 cos(0) = -10
    CHECK(jac(0, 0) == doctest::Approx(-10.0).epsilon(1e-12));
}

TEST_CASE("newton solves case14 from a flat start") {
    GridCase g = load_case14();
    AdmittanceMatrix y = build_ybus(g);
    OperatingCondition cond = nominal_condition(g);
    NewtonResult sol = newton_raphson(g, y, cond, {1e-8, 20});
    REQUIRE(sol.converged);
    CHECK(sol.iterations <= 6);
    CHECK(sol.max_mismatch <= 1e-8);
    CHECK(sol.state.theta[g.slack_index] == 0.0);
    // anchor value from the independent dense reference implementation
    CHECK(sol.state.v[3] == doctest::Approx(1.017670854).epsilon(1e-6));
    CHECK(sol.state.v[0] == 1.06);

    SUBCASE("identical inputs give bitwise identical iterates") {
        NewtonResult again = newton_raphson(g, y, cond, {1e-8, 20});
        for (int i = 0; i < g.n_bus(); ++i) {
            CHECK(std::bit_cast<std::uint64_t>(again.state.v[i]) ==
                  std::bit_cast<std::uint64_t>(sol.state.v[i]));
            CHECK(std::bit_cast<std::uint64_t>(again.state.theta[i]) ==
                  std::bit_cast<std::uint64_t>(sol.state.theta[i]));
        }
    }
    SUBCASE("final iterations contract superlinearly") {
        const auto& h = sol.mismatch_history;
        REQUIRE(h.size() >= 3);
        CHECK(h[h.size() - 1] <= 10.0 * h[h.size() - 2] * h[h.size() - 2]);
        CHECK(h[h.size() - 2] <= 10.0 * h[h.size() - 3] * h[h.size() - 3]);
    }
}

TEST_CASE("newton recovers a constructed fixed point") {
    GridCase g = load_case14();
    AdmittanceMatrix y = build_ybus(g);
    OperatingCondition cond = nominal_condition(g);
    Rng rng(4);
    StateVector target = random_state(g, cond, rng, 0.1, 0.03);
    Vec p, q;
    compute_injections(target, y, p, q);
    OperatingCondition made = cond;
    made.p_spec = p;
    made.q_spec = q;
    NewtonResult sol = newton_raphson(g, y, made, {1e-10, 20});
    REQUIRE(sol.converged);
    CHECK(compute_mismatch(sol.state, made, y, g).max_abs() <= 1e-10);
    for (int i = 0; i < g.n_bus(); ++i) {
        CHECK(sol.state.v[i] == doctest::Approx(target.v[i]).epsilon(1e-6));
        CHECK(sol.state.theta[i] == doctest::Approx(target.theta[i]).epsilon(1e-6));
    }
}

TEST_CASE("pathological loading reports non-convergence without crashing") {
    GridCase g = load_case14();
    AdmittanceMatrix y = build_ybus(g);
    OperatingCondition cond = nominal_condition(g);
    cond.p_spec *= 100.0;
    cond.q_spec *= 100.0;
    NewtonResult sol = newton_raphson(g, y, cond, {1e-8, 15});
    CHECK(!sol.converged);
    CHECK(sol.iterations <= 15);
}

TEST_CASE("branch flows") {
    SUBCASE("no potential difference, no flow") {
        GridCase g = make_two_bus();
        StateVector s(Vec::Ones(2), Vec::Zero(2));
        auto flows = branch_flows(s, g);
        CHECK(std::abs(flows[0].s_from) <= 1e-14);
        CHECK(std::abs(flows[0].s_to) <= 1e-14);
        CHECK(flows[0].s_mag <= 1e-14);
    }
    SUBCASE("two-bus closed form") {
        GridCase g = make_two_bus();
        StateVector s(Vec::Ones(2), Vec::Zero(2));
        s.theta[1] = -0.1;
        auto flows = branch_flows(s, g);
        const double expect = std::hypot(10.0 * std::sin(0.1), (1.0 - std::cos(0.1)) * 10.0);
        CHECK(std::abs(flows[0].s_from) == doctest::Approx(expect).epsilon(1e-12));
        CHECK(flows[0].s_mag == doctest::Approx(expect).epsilon(1e-12));
    }
    SUBCASE("series losses are nonnegative and match the injection sum") {
        GridCase g = load_case14();
        OperatingCondition cond = nominal_condition(g);
        Rng rng(9);
        for (int t = 0; t < 5; ++t) {
            StateVector s = random_state(g, cond, rng);
            auto flows = branch_flows(s, g);
            double series = 0.0;
            for (const BranchFlow& f : flows) series += (f.s_from + f.s_to).real();
            CHECK(series >= -1e-12);
            AdmittanceMatrix y = build_ybus(g);
            Vec p, q;
            compute_injections(s, y, p, q);
            double shunt = 0.0;
            for (const Bus& b : g.buses) shunt += b.g_shunt * s.v[b.index] * s.v[b.index];
            CHECK(p.sum() == doctest::Approx(series + shunt).epsilon(1e-10));
        }
    }
}

TEST_CASE("generation recovery") {
    SUBCASE("lossless two-bus supplies the load exactly") {
        GridCase g = make_two_bus(0.5, 0.2, 0.0, 0.1);
        AdmittanceMatrix y = build_ybus(g);
        OperatingCondition cond = nominal_condition(g);
        NewtonResult sol = newton_raphson(g, y, cond, {1e-10, 20});
        REQUIRE(sol.converged);
        GenerationRecovery rec = recover_generation(sol.state, g, cond, y);
        CHECK(rec.p_slack == doctest::Approx(0.5).epsilon(1e-9));
    }
    SUBCASE("case14 balances load plus losses") {
        GridCase g = load_case14();
        AdmittanceMatrix y = build_ybus(g);
        OperatingCondition cond = nominal_condition(g);
        NewtonResult sol = newton_raphson(g, y, cond, {1e-10, 20});
        REQUIRE(sol.converged);
        GenerationRecovery rec = recover_generation(sol.state, g, cond, y);

        double series = 0.0;
        for (const BranchFlow& f : branch_flows(sol.state, g)) series += (f.s_from + f.s_to).real();
        double total_load = 0.0, other_gen = 0.0;
        for (const Bus& b : g.buses) total_load += b.p_load;
        for (const Generator& gen : g.gens)
            if (gen.bus != g.slack_index) other_gen += gen.p_set;
        CHECK(rec.p_slack == doctest::Approx(total_load + series - other_gen).epsilon(1e-9));
        // published operating point: slack machine supplies about 232.4 MW
        CHECK(rec.p_slack * g.base_mva == doctest::Approx(232.393).epsilon(1e-3));
    }
    SUBCASE("zero-load network needs no reactive support") {
        GridCase g = make_two_bus(0.0, 0.0, 0.0, 0.1);
        AdmittanceMatrix y = build_ybus(g);
        OperatingCondition cond = nominal_condition(g);
        NewtonResult sol = newton_raphson(g, y, cond, {1e-10, 20});
        REQUIRE(sol.converged);
        GenerationRecovery rec = recover_generation(sol.state, g, cond, y);
        CHECK(rec.q_gen.cwiseAbs().maxCoeff() <= 1e-9);
    }
}

TEST_CASE("aggregate limits sum per bus") {
    GridCase g = make_two_bus();
    Generator second = g.gens[0];
    second.q_min = -1.0;
    second.q_max = 2.0;
    second.p_min = 0.5;
    second.p_max = 3.0;
    g.gens.push_back(second);
    g.finalize();
    AggregateLimits lim = aggregate_gen_limits(g);
    CHECK(lim.q_max[0] == doctest::Approx(7.0));
    CHECK(lim.q_min[0] == doctest::Approx(-6.0));
    CHECK(lim.slack_p_max == doctest::Approx(13.0));
    CHECK(lim.slack_p_min == doctest::Approx(0.5));
}
