#pragma once

#include <cstdint>
#include <vector>

#include "pfttt/case_io.hpp"
#include "pfttt/pf.hpp"

namespace pfttt {

enum class CorrelationMode { IndependentPerBus, GlobalPlusNoise };

const char* to_string(CorrelationMode m);
CorrelationMode correlation_mode_from_string(const std::string& s);

/// Multiplicative perturbation bounds applied to the nominal operating point.
struct PerturbationSpec {
    double load_scale_low = 0.9;
    double load_scale_high = 1.1;
    double gen_scale_low = 0.9;
    double gen_scale_high = 1.1;
    CorrelationMode correlation_mode = CorrelationMode::IndependentPerBus;
    std::uint64_t seed = 0;

    void validate() const;
    std::string to_json_string() const;
    static PerturbationSpec from_json_string(const std::string& s);
};

/// Deterministic function of (spec.seed, draw_index). Loads scale jointly in
/// P and Q (constant power factor); non-slack generation is rescaled so its
/// total tracks total load at the nominal generation/load ratio.
OperatingCondition sample_condition(const GridCase& grid, const PerturbationSpec& spec,
                                    std::uint64_t draw_index);

struct GenerationReport {
    int requested_train = 0;
    int requested_test = 0;
    int converged_train = 0;
    int converged_test = 0;
    int dropped_train = 0;
    int dropped_test = 0;
    double nr_tolerance = 0.0;
    PerturbationSpec train_spec;
    PerturbationSpec test_spec;
};

/// Sample, solve and label scenarios. Non-converged solves are dropped and
/// counted; record order is by draw index (train block then test block)
/// regardless of the number of worker threads.
std::vector<DatasetRecord> generate_dataset(const GridCase& grid, const PerturbationSpec& train,
                                            const PerturbationSpec& test, int n_train, int n_test,
                                            const NewtonOptions& nr = {},
                                            GenerationReport* report = nullptr, int jobs = 1);

DatasetHeader make_dataset_header(const GridCase& grid, const PerturbationSpec& train,
                                  const PerturbationSpec& test, const NewtonOptions& nr,
                                  std::uint64_t seed);

}  // namespace pfttt
