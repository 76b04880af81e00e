#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pfttt/pf.hpp"

namespace pfttt {

struct Metrics {
    double rmse_p = 0.0;
    double rmse_q = 0.0;
};

struct SampleMetrics {
    Vec rmse_p;  // per sample
    Vec rmse_q;
    Metrics aggregate;  // mean of the per-sample values
};

/// Root-mean-square mismatch per sample: active residuals over non-slack
/// buses, reactive over PQ buses, each divided by its own index-set size.
/// The aggregate is the mean of per-sample RMSEs (not pooled).
SampleMetrics mismatch_rmse(std::span<const StateVector> states,
                            std::span<const OperatingCondition> conds, const GridCase& grid,
                            const AdmittanceMatrix& ybus);

struct CategoryViolation {
    double mean = 0.0;  // average absolute deviation over all elements and samples
    double max = 0.0;   // largest single deviation
};

struct ViolationReport {
    CategoryViolation voltage;
    CategoryViolation branch_flow;
    CategoryViolation gen_reactive;
    CategoryViolation slack_active;
};

/// Operational-limit violations computed from the given states only (labels
/// never enter). Voltage covers every bus; buses whose regulated setpoint lies
/// outside the file's band are assessed against the band widened to include
/// the setpoint, since the pinned setpoint would otherwise contribute an
/// identical constant to every model. Flow covers rated branches, generator
/// reactive power is aggregated per generator bus, and slack active power is
/// checked against the slack machine's limits.
ViolationReport violations(std::span<const StateVector> states,
                           std::span<const OperatingCondition> conds, const GridCase& grid);

struct BenchProcedure {
    std::string name;
    std::function<void(int)> run;  // executes one sample by index
};

struct BenchEntry {
    std::string name;
    double mean_ms_per_sample = 0.0;
    int samples = 0;
    int repetitions = 0;
};

struct BenchTable {
    std::vector<BenchEntry> entries;
    std::string machine;
};

/// Warmed-up wall-clock timing: each procedure runs repetitions+1 passes over
/// the samples, the first pass is discarded, and the remaining per-sample
/// times are averaged.
BenchTable bench(std::span<const BenchProcedure> procedures, int n_samples, int repetitions);

struct EvalRow {
    std::string variant;
    Metrics metrics;
    ViolationReport violations;
};

struct EvalReport {
    std::string case_name;
    int n_samples = 0;
    std::vector<EvalRow> rows;
    std::optional<BenchTable> bench;
    std::string config_echo_json = "{}";
};

/// Writes one comma-separated file per table plus a combined human-readable
/// rendering: {prefix}_accuracy.csv, {prefix}_violations.csv, optionally
/// {prefix}_runtime.csv, and {prefix}_report.txt. Floats are emitted with
/// round-trip precision.
void emit_report(const EvalReport& report, const std::string& prefix);
std::string render_report_text(const EvalReport& report);

/// Shortest decimal representation that parses back to the same double.
std::string format_double(double value);

}  // namespace pfttt
