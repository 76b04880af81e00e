#include <bit>

#include "testutil.hpp"

using namespace pfttt;
using namespace testutil;

namespace {

// Straightforward dense assembly, kept deliberately separate from the sparse
// production path.
Mat dense_ybus(const GridCase& g) {
    const int n = g.n_bus();
    Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
    for (const Branch& br : g.branches) {
        const Complex ys = 1.0 / Complex(br.r, br.x);
        const Complex sh(0, 0.5 * br.b_charging);
        const Complex t = std::polar(br.tap, br.shift);
        y(br.from, br.from) += (ys + sh) / std::norm(t);
        y(br.to, br.to) += ys + sh;
        y(br.from, br.to) += -ys / std::conj(t);
        y(br.to, br.from) += -ys / t;
    }
    for (const Bus& b : g.buses) y(b.index, b.index) += Complex(b.g_shunt, b.b_shunt);
    return y.real();  // caller picks real/imag via two calls
}

Eigen::MatrixXcd dense_ybus_full(const GridCase& g) {
    const int n = g.n_bus();
    Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
    for (const Branch& br : g.branches) {
        const Complex ys = 1.0 / Complex(br.r, br.x);
        const Complex sh(0, 0.5 * br.b_charging);
        const Complex t = std::polar(br.tap, br.shift);
        y(br.from, br.from) += (ys + sh) / std::norm(t);
        y(br.to, br.to) += ys + sh;
        y(br.from, br.to) += -ys / std::conj(t);
        y(br.to, br.from) += -ys / t;
    }
    for (const Bus& b : g.buses) y(b.index, b.index) += Complex(b.g_shunt, b.b_shunt);
    return y;
}

}  // namespace

TEST_CASE("two-bus admittance matrix matches the hand-assembled pi model") {
    GridCase g = make_two_bus(0.0, 0.0, 0.0, 0.1);
    AdmittanceMatrix y = build_ybus(g);
    CHECK(y.n == 2);
    CHECK(y.at(0, 0).real() == doctest::Approx(0.0));
    CHECK(y.at(0, 0).imag() == doctest::Approx(-10.0));
    CHECK(y.at(0, 1).imag() == doctest::Approx(10.0));
    CHECK(y.at(1, 0).imag() == doctest::Approx(10.0));
    CHECK(y.at(1, 1).imag() == doctest::Approx(-10.0));
    CHECK(y.at(1, 1).real() == doctest::Approx(0.0));
}

TEST_CASE("isolated bus is rejected when building the admittance matrix") {
    GridCase g = make_two_bus();
    Bus extra;
    extra.index = 2;
    extra.ext_id = 3;
    extra.kind = BusKind::PQ;
    extra.v_min = 0.9;
    extra.v_max = 1.1;
    g.buses.push_back(extra);
    g.finalize();
    CHECK_THROWS_AS(build_ybus(g), InvalidDataError);
    CHECK_THROWS_WITH_AS(build_ybus(g), doctest::Contains("disconnected"), InvalidDataError);
}

TEST_CASE("case14 admittance matches an independent dense re-assembly") {
    GridCase g = load_case14();
    AdmittanceMatrix y = build_ybus(g);
    Eigen::MatrixXcd ref = dense_ybus_full(g);
    for (int i = 0; i < g.n_bus(); ++i)
        for (int j = 0; j < g.n_bus(); ++j)
            CHECK(std::abs(y.at(i, j) - ref(i, j)) <= 1e-12);
    // structural symmetry of the sparsity pattern
    for (int i = 0; i < g.n_bus(); ++i)
        for (int j = 0; j < g.n_bus(); ++j)
            CHECK((y.at(i, j) != Complex(0, 0)) == (y.at(j, i) != Complex(0, 0)));
}

TEST_CASE("tap-free network gives a numerically symmetric matrix") {
    GridCase g = load_case14();
    for (Branch& br : g.branches) {
        br.tap = 1.0;
        br.shift = 0.0;
    }
    AdmittanceMatrix y = build_ybus(g);
    for (int i = 0; i < g.n_bus(); ++i)
        for (int j = 0; j < g.n_bus(); ++j)
            CHECK(std::abs(y.at(i, j) - y.at(j, i)) <= 1e-12);
}

TEST_CASE("tap-free row sums reduce to the shunt admittance at each bus") {
    GridCase g = load_case14();
    for (Branch& br : g.branches) {
        br.tap = 1.0;
        br.shift = 0.0;
    }
    AdmittanceMatrix y = build_ybus(g);
    for (const Bus& b : g.buses) {
        Complex row_sum(0, 0);
        for (int j = 0; j < g.n_bus(); ++j) row_sum += y.at(b.index, j);
        Complex shunt(b.g_shunt, b.b_shunt);
        for (const Branch& br : g.branches) {
            if (br.from == b.index || br.to == b.index) shunt += Complex(0, 0.5 * br.b_charging);
        }
        CHECK(std::abs(row_sum - shunt) <= 1e-12);
    }
}

TEST_CASE("assembly is bit-identical under branch permutation") {
    GridCase g = load_case14();
    AdmittanceMatrix a = build_ybus(g);

    GridCase shuffled = g;
    Rng rng(99);
    rng.shuffle(shuffled.branches);
    std::reverse(shuffled.branches.begin(), shuffled.branches.end());
    AdmittanceMatrix b = build_ybus(shuffled);

    REQUIRE(a.y.nonZeros() == b.y.nonZeros());
    const Complex* av = a.y.valuePtr();
    const Complex* bv = b.y.valuePtr();
    for (Eigen::Index k = 0; k < a.y.nonZeros(); ++k) {
        CHECK(std::bit_cast<std::uint64_t>(av[k].real()) == std::bit_cast<std::uint64_t>(bv[k].real()));
        CHECK(std::bit_cast<std::uint64_t>(av[k].imag()) == std::bit_cast<std::uint64_t>(bv[k].imag()));
    }
}

TEST_CASE("full_state places unknowns and setpoints") {
    GridCase g = make_two_bus(0.2, 0.1);
    OperatingCondition cond = nominal_condition(g);
    Vec u(2);
    u << -0.1, 0.98;
    StateVector s = full_state(g, cond, u);
    CHECK(s.v[0] == 1.0);
    CHECK(s.v[1] == 0.98);
    CHECK(s.theta[0] == 0.0);
    CHECK(s.theta[1] == -0.1);

    SUBCASE("wrong length is rejected") {
        Vec bad(3);
        bad.setZero();
        CHECK_THROWS_AS(full_state(g, cond, bad), DimensionError);
    }
}

TEST_CASE("one-bus degenerate case has an empty unknown vector") {
    GridCase g;
    g.name = "onebus";
    Bus b;
    b.index = 0;
    b.ext_id = 1;
    b.kind = BusKind::Slack;
    b.v_min = 0.9;
    b.v_max = 1.1;
    b.v_setpoint = 1.02;
    g.buses = {b};
    Generator gen;
    gen.bus = 0;
    gen.v_setpoint = 1.02;
    g.gens = {gen};
    g.finalize();
    CHECK(g.n_unknowns() == 0);
    OperatingCondition cond = nominal_condition(g);
    StateVector s = full_state(g, cond, Vec(0));
    CHECK(s.v[0] == 1.02);
    CHECK(s.theta[0] == 0.0);
}

TEST_CASE("extract_unknowns inverts full_state on consistent states") {
    GridCase g = load_case14();
    OperatingCondition cond = nominal_condition(g);
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        Vec u(g.n_unknowns());
        for (Eigen::Index i = 0; i < u.size(); ++i) u[i] = rng.uniform(-0.4, 1.4);
        Vec back = extract_unknowns(g, full_state(g, cond, u));
        REQUIRE(back.size() == u.size());
        for (Eigen::Index i = 0; i < u.size(); ++i) CHECK(back[i] == u[i]);
    }
}

TEST_CASE("structural invariants are enforced") {
    SUBCASE("no slack") {
        GridCase g = make_two_bus();
        g.buses[0].kind = BusKind::PQ;
        CHECK_THROWS_WITH_AS(g.finalize(), doctest::Contains("no slack"), InvalidDataError);
    }
    SUBCASE("two slacks") {
        GridCase g = make_two_bus();
        g.buses[1].kind = BusKind::Slack;
        CHECK_THROWS_WITH_AS(g.finalize(), doctest::Contains("multiple slack"), InvalidDataError);
    }
    SUBCASE("zero impedance branch") {
        GridCase g = make_two_bus();
        g.branches[0].r = 0.0;
        g.branches[0].x = 0.0;
        CHECK_THROWS_AS(g.finalize(), InvalidDataError);
    }
    SUBCASE("inverted voltage band") {
        GridCase g = make_two_bus();
        g.buses[1].v_min = 1.2;
        CHECK_THROWS_AS(g.finalize(), InvalidDataError);
    }
    SUBCASE("out-of-band setpoint only warns") {
        GridCase g = make_two_bus();
        g.buses[0].v_setpoint = 1.2;
        g.gens[0].v_setpoint = 1.2;
        g.finalize();
        CHECK(!g.warnings.empty());
    }
}

TEST_CASE("dense real-part helper stays consistent") {
    // guards the test oracle itself: both dense helpers must agree
    GridCase g = make_two_bus(0.1, 0.05, 0.02, 0.08, 0.04);
    CHECK((dense_ybus(g) - dense_ybus_full(g).real()).cwiseAbs().maxCoeff() == 0.0);
}
