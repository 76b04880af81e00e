#pragma once

#include "pfttt/eval.hpp"
#include "pfttt/scenario.hpp"
#include "pfttt/ttt.hpp"

namespace pfttt {

/// Everything an evaluation run produces: the report rows (baseline row, plus
/// the refined row when steps > 0) and the per-sample material the
/// verification suites assert on. Adaptation vectors are dropped after their
/// norms enter the traces to keep memory bounded on large cases.
struct EvalOutcome {
    EvalReport report;
    double epsilon = 0.0;
    std::vector<OperatingCondition> conditions;
    std::vector<StateVector> baseline_states;
    std::vector<StateVector> refined_states;  // empty when config.steps == 0
    std::vector<AdaptState> adaptations;      // empty when config.steps == 0
};

/// Refine every sample (in parallel when jobs > 1; outputs are ordered by
/// sample index, so results do not depend on the worker count) and assemble
/// the metric/violation rows.
EvalOutcome evaluate_model(const GridCase& grid, std::span<const DatasetRecord> samples,
                           const SurrogateParams& params, const TTTConfig& config, int jobs = 1);

/// Runtime comparison over the given conditions: one surrogate forward pass,
/// forward plus refinement, and optionally a full Newton-Raphson solve.
BenchTable bench_pipeline(const GridCase& grid, const SurrogateParams& params,
                          const TTTConfig& config, std::span<const OperatingCondition> conds,
                          int repetitions, bool include_nr);

/// Filter a dataset by split tag.
std::vector<DatasetRecord> filter_split(std::span<const DatasetRecord> records, Split split);

}  // namespace pfttt
