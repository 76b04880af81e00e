#include "pfttt/eval.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

namespace pfttt {

std::string format_double(double value) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, res.ptr);
}

SampleMetrics mismatch_rmse(std::span<const StateVector> states,
                            std::span<const OperatingCondition> conds, const GridCase& grid,
                            const AdmittanceMatrix& ybus) {
    if (states.empty()) throw InvalidDataError("mismatch_rmse requires at least one sample");
    if (states.size() != conds.size()) throw DimensionError("states/conditions length mismatch");

    const auto n = static_cast<Eigen::Index>(states.size());
    SampleMetrics out;
    out.rmse_p.resize(n);
    out.rmse_q.resize(n);
    long double sum_p = 0.0L, sum_q = 0.0L;
    for (Eigen::Index s = 0; s < n; ++s) {
        MismatchVector mis = compute_mismatch(states[static_cast<std::size_t>(s)],
                                              conds[static_cast<std::size_t>(s)], ybus, grid);
        const double rp = mis.dp.size() ? std::sqrt(mis.dp.squaredNorm() / mis.dp.size()) : 0.0;
        const double rq = mis.dq.size() ? std::sqrt(mis.dq.squaredNorm() / mis.dq.size()) : 0.0;
        out.rmse_p[s] = rp;
        out.rmse_q[s] = rq;
        sum_p += rp;
        sum_q += rq;
    }
    out.aggregate.rmse_p = static_cast<double>(sum_p / n);
    out.aggregate.rmse_q = static_cast<double>(sum_q / n);
    return out;
}

namespace {

double interval_distance(double value, double lo, double hi) {
    if (value > hi) return value - hi;
    if (value < lo) return lo - value;
    return 0.0;
}

}  // namespace

ViolationReport violations(std::span<const StateVector> states,
                           std::span<const OperatingCondition> conds, const GridCase& grid) {
    if (states.empty()) throw InvalidDataError("violations requires at least one sample");
    if (states.size() != conds.size()) throw DimensionError("states/conditions length mismatch");

    const AdmittanceMatrix ybus = build_ybus(grid);
    const AggregateLimits lim = aggregate_gen_limits(grid);

    // effective voltage bands: widened to include out-of-band setpoints at
    // regulated buses (the setpoint is pinned, not predicted)
    std::vector<double> v_lo(grid.buses.size()), v_hi(grid.buses.size());
    for (const Bus& b : grid.buses) {
        v_lo[static_cast<std::size_t>(b.index)] =
            b.kind == BusKind::PQ ? b.v_min : std::min(b.v_min, b.v_setpoint);
        v_hi[static_cast<std::size_t>(b.index)] =
            b.kind == BusKind::PQ ? b.v_max : std::max(b.v_max, b.v_setpoint);
    }

    int rated = 0;
    for (const Branch& br : grid.branches)
        if (br.rating) ++rated;

    long double sum_v = 0.0L, sum_f = 0.0L, sum_q = 0.0L, sum_s = 0.0L;
    ViolationReport rep;
    for (std::size_t s = 0; s < states.size(); ++s) {
        const StateVector& st = states[s];
        for (const Bus& b : grid.buses) {
            const double d = interval_distance(st.v[b.index], v_lo[static_cast<std::size_t>(b.index)],
                                               v_hi[static_cast<std::size_t>(b.index)]);
            sum_v += d;
            rep.voltage.max = std::max(rep.voltage.max, d);
        }
        if (rated > 0) {
            for (const BranchFlow& f : branch_flows(st, grid)) {
                const Branch& br = grid.branches[static_cast<std::size_t>(f.branch)];
                if (!br.rating) continue;
                const double d = std::max(f.s_mag - *br.rating, 0.0);
                sum_f += d;
                rep.branch_flow.max = std::max(rep.branch_flow.max, d);
            }
        }
        const GenerationRecovery rec = recover_generation(st, grid, conds[s], ybus);
        for (Eigen::Index k = 0; k < rec.q_gen.size(); ++k) {
            const double d = interval_distance(rec.q_gen[k], lim.q_min[k], lim.q_max[k]);
            sum_q += d;
            rep.gen_reactive.max = std::max(rep.gen_reactive.max, d);
        }
        const double ds = interval_distance(rec.p_slack, lim.slack_p_min, lim.slack_p_max);
        sum_s += ds;
        rep.slack_active.max = std::max(rep.slack_active.max, ds);
    }

    const long double ns = static_cast<long double>(states.size());
    rep.voltage.mean = static_cast<double>(sum_v / (ns * grid.n_bus()));
    rep.branch_flow.mean = rated > 0 ? static_cast<double>(sum_f / (ns * rated)) : 0.0;
    rep.gen_reactive.mean =
        grid.gen_buses.empty() ? 0.0 : static_cast<double>(sum_q / (ns * grid.gen_buses.size()));
    rep.slack_active.mean = static_cast<double>(sum_s / ns);
    return rep;
}

BenchTable bench(std::span<const BenchProcedure> procedures, int n_samples, int repetitions) {
    if (n_samples < 1 || repetitions < 1) throw InvalidDataError("bench needs samples and repetitions");
    using clock = std::chrono::steady_clock;

    BenchTable table;
    for (const BenchProcedure& proc : procedures) {
        double total_ms = 0.0;
        for (int rep = 0; rep <= repetitions; ++rep) {
            const auto t0 = clock::now();
            for (int s = 0; s < n_samples; ++s) proc.run(s);
            const auto t1 = clock::now();
            if (rep == 0) continue;  // warm-up pass
            total_ms += std::chrono::duration<double, std::milli>(t1 - t0).count();
        }
        BenchEntry entry;
        entry.name = proc.name;
        entry.mean_ms_per_sample = total_ms / (static_cast<double>(repetitions) * n_samples);
        entry.samples = n_samples;
        entry.repetitions = repetitions;
        table.entries.push_back(std::move(entry));
    }

    std::string cpu = "unknown cpu";
    std::ifstream cpuinfo("/proc/cpuinfo");
    std::string line;
    while (std::getline(cpuinfo, line)) {
        if (line.rfind("model name", 0) == 0) {
            if (auto pos = line.find(':'); pos != std::string::npos) cpu = line.substr(pos + 2);
            break;
        }
    }
    table.machine = cpu + ", " + std::to_string(std::thread::hardware_concurrency()) + " hw threads";
    return table;
}

namespace {

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open report file for writing: " + path);
    out << content;
    if (!out) throw IoError("failed writing report file: " + path);
}

const char* kCategories[] = {"voltage", "branch_flow", "gen_reactive", "slack_active"};

const CategoryViolation& category(const ViolationReport& v, int i) {
    switch (i) {
        case 0: return v.voltage;
        case 1: return v.branch_flow;
        case 2: return v.gen_reactive;
        default: return v.slack_active;
    }
}

}  // namespace

std::string render_report_text(const EvalReport& report) {
    std::ostringstream out;
    out << "evaluation report for case " << report.case_name << " (" << report.n_samples
        << " samples)\n";
    out << "config: " << report.config_echo_json << "\n\n";

    out << "power flow residual accuracy (pu)\n";
    out << "  aggregation: mean of per-sample RMSE; active over non-slack buses, reactive over PQ buses\n";
    for (const EvalRow& row : report.rows)
        out << "  " << row.variant << "  rmse_p=" << format_double(row.metrics.rmse_p)
            << "  rmse_q=" << format_double(row.metrics.rmse_q) << "\n";
    out << "\n";

    out << "operational constraint violations (pu, mean over all elements and samples / max)\n";
    out << "  voltage bands at regulated buses are widened to include out-of-band setpoints\n";
    for (const EvalRow& row : report.rows) {
        out << "  " << row.variant << "\n";
        for (int c = 0; c < 4; ++c) {
            const CategoryViolation& v = category(row.violations, c);
            out << "    " << kCategories[c] << "  mean=" << format_double(v.mean)
                << "  max=" << format_double(v.max) << "\n";
        }
    }
    out << "\n";

    if (report.bench) {
        out << "average per-sample runtime (ms) on " << report.bench->machine << "\n";
        for (const BenchEntry& e : report.bench->entries)
            out << "  " << e.name << "  " << format_double(e.mean_ms_per_sample) << " ms ("
                << e.samples << " samples x " << e.repetitions << " reps)\n";
        out << "\n";
    }
    return out.str();
}

void emit_report(const EvalReport& report, const std::string& prefix) {
    {
        std::ostringstream csv;
        csv << "variant,rmse_p,rmse_q\n";
        for (const EvalRow& row : report.rows)
            csv << row.variant << ',' << format_double(row.metrics.rmse_p) << ','
                << format_double(row.metrics.rmse_q) << '\n';
        write_file(prefix + "_accuracy.csv", csv.str());
    }
    {
        std::ostringstream csv;
        csv << "variant,category,mean,max\n";
        for (const EvalRow& row : report.rows) {
            for (int c = 0; c < 4; ++c) {
                const CategoryViolation& v = category(row.violations, c);
                csv << row.variant << ',' << kCategories[c] << ',' << format_double(v.mean) << ','
                    << format_double(v.max) << '\n';
            }
        }
        write_file(prefix + "_violations.csv", csv.str());
    }
    if (report.bench) {
        std::ostringstream csv;
        csv << "procedure,mean_ms_per_sample,samples,repetitions\n";
        for (const BenchEntry& e : report.bench->entries)
            csv << e.name << ',' << format_double(e.mean_ms_per_sample) << ',' << e.samples << ','
                << e.repetitions << '\n';
        write_file(prefix + "_runtime.csv", csv.str());
    }
    write_file(prefix + "_report.txt", render_report_text(report));
}

}  // namespace pfttt
