#include "pfttt/scenario.hpp"

#include <atomic>
#include <thread>

#include <nlohmann/json.hpp>

#include "pfttt/rng.hpp"

namespace pfttt {

const char* to_string(CorrelationMode m) {
    return m == CorrelationMode::IndependentPerBus ? "independent_per_bus" : "global_plus_noise";
}

CorrelationMode correlation_mode_from_string(const std::string& s) {
    if (s == "independent_per_bus") return CorrelationMode::IndependentPerBus;
    if (s == "global_plus_noise") return CorrelationMode::GlobalPlusNoise;
    throw InvalidDataError("unknown correlation mode '" + s + "'");
}

void PerturbationSpec::validate() const {
    if (!(load_scale_low > 0.0) || load_scale_low > load_scale_high)
        throw InvalidDataError("load scale bounds must satisfy 0 < low <= high");
    if (!(gen_scale_low > 0.0) || gen_scale_low > gen_scale_high)
        throw InvalidDataError("gen scale bounds must satisfy 0 < low <= high");
}

std::string PerturbationSpec::to_json_string() const {
    nlohmann::json j;
    j["load_scale_low"] = load_scale_low;
    j["load_scale_high"] = load_scale_high;
    j["gen_scale_low"] = gen_scale_low;
    j["gen_scale_high"] = gen_scale_high;
    j["correlation_mode"] = to_string(correlation_mode);
    j["seed"] = seed;
    return j.dump();
}

PerturbationSpec PerturbationSpec::from_json_string(const std::string& s) {
    nlohmann::json j = nlohmann::json::parse(s);
    PerturbationSpec spec;
    spec.load_scale_low = j.at("load_scale_low").get<double>();
    spec.load_scale_high = j.at("load_scale_high").get<double>();
    spec.gen_scale_low = j.at("gen_scale_low").get<double>();
    spec.gen_scale_high = j.at("gen_scale_high").get<double>();
    spec.correlation_mode = correlation_mode_from_string(j.at("correlation_mode").get<std::string>());
    spec.seed = j.at("seed").get<std::uint64_t>();
    return spec;
}

OperatingCondition sample_condition(const GridCase& grid, const PerturbationSpec& spec,
                                    std::uint64_t draw_index) {
    spec.validate();
    const int n = grid.n_bus();
    Rng rng(spec.seed, draw_index);

    // per-bus load factors, drawn in bus order
    Vec load_factor(n);
    if (spec.correlation_mode == CorrelationMode::IndependentPerBus) {
        for (int i = 0; i < n; ++i)
            load_factor[i] = rng.uniform(spec.load_scale_low, spec.load_scale_high);
    } else {
        const double g = rng.uniform(spec.load_scale_low, spec.load_scale_high);
        const double wiggle = 0.25 * (spec.load_scale_high - spec.load_scale_low);
        for (int i = 0; i < n; ++i) {
            const double f = g + rng.uniform(-wiggle, wiggle);
            load_factor[i] = std::clamp(f, spec.load_scale_low, spec.load_scale_high);
        }
    }

    // per-unit-of-generation factors for non-slack units, drawn in gen order
    std::vector<double> gen_factor(grid.gens.size(), 1.0);
    for (std::size_t g = 0; g < grid.gens.size(); ++g) {
        const double f = rng.uniform(spec.gen_scale_low, spec.gen_scale_high);
        if (grid.gens[g].bus != grid.slack_index) gen_factor[g] = f;
    }

    double nominal_load = 0.0, nominal_nonslack_gen = 0.0;
    for (const Bus& b : grid.buses) nominal_load += b.p_load;
    for (const Generator& g : grid.gens)
        if (g.bus != grid.slack_index) nominal_nonslack_gen += g.p_set;

    double scaled_load = 0.0;
    for (const Bus& b : grid.buses) scaled_load += b.p_load * load_factor[b.index];

    // Rescale so total non-slack generation tracks total load at the nominal
    // share; the slack machine absorbs the remainder plus losses.
    double raw_nonslack_gen = 0.0;
    for (std::size_t g = 0; g < grid.gens.size(); ++g)
        if (grid.gens[g].bus != grid.slack_index)
            raw_nonslack_gen += grid.gens[g].p_set * gen_factor[g];
    double target = nominal_load > 0.0
                        ? scaled_load * (nominal_nonslack_gen / nominal_load)
                        : nominal_nonslack_gen;
    const double rescale = raw_nonslack_gen > 0.0 ? target / raw_nonslack_gen : 1.0;

    OperatingCondition cond;
    cond.p_spec = Vec::Zero(n);
    cond.q_spec = Vec::Zero(n);
    cond.v_setpoints = Vec::Zero(n);
    for (const Bus& b : grid.buses) {
        cond.p_spec[b.index] = -b.p_load * load_factor[b.index];
        cond.q_spec[b.index] = -b.q_load * load_factor[b.index];
        if (b.kind != BusKind::PQ) cond.v_setpoints[b.index] = b.v_setpoint;
    }
    for (std::size_t g = 0; g < grid.gens.size(); ++g) {
        const Generator& gen = grid.gens[g];
        if (gen.bus == grid.slack_index) continue;
        cond.p_spec[gen.bus] += gen.p_set * gen_factor[g] * rescale;
        if (grid.buses[gen.bus].kind == BusKind::PQ) cond.q_spec[gen.bus] += gen.q_set;
    }
    return cond;
}

std::vector<DatasetRecord> generate_dataset(const GridCase& grid, const PerturbationSpec& train,
                                            const PerturbationSpec& test, int n_train, int n_test,
                                            const NewtonOptions& nr, GenerationReport* report,
                                            int jobs) {
    train.validate();
    test.validate();
    if (n_train < 0 || n_test < 0) throw InvalidDataError("scenario counts must be >= 0");
    if (n_train > 0 && n_test > 0 && train.load_scale_low == test.load_scale_low &&
        train.load_scale_high == test.load_scale_high && train.gen_scale_low == test.gen_scale_low &&
        train.gen_scale_high == test.gen_scale_high &&
        train.correlation_mode == test.correlation_mode)
        throw InvalidDataError("train and test perturbation specs must differ in at least one bound");

    const AdmittanceMatrix ybus = build_ybus(grid);
    const int total = n_train + n_test;
    std::vector<std::optional<DatasetRecord>> slots(static_cast<std::size_t>(total));

    auto solve_one = [&](int idx) {
        const bool is_train = idx < n_train;
        const PerturbationSpec& spec = is_train ? train : test;
        const std::uint64_t draw = is_train ? static_cast<std::uint64_t>(idx)
                                            : static_cast<std::uint64_t>(idx - n_train);
        OperatingCondition cond = sample_condition(grid, spec, draw);
        NewtonResult sol = newton_raphson(grid, ybus, cond, nr);
        if (sol.converged) {
            DatasetRecord rec;
            rec.split = is_train ? Split::Train : Split::Test;
            rec.condition = std::move(cond);
            rec.label = std::move(sol.state);
            slots[static_cast<std::size_t>(idx)] = std::move(rec);
        }
    };

    if (jobs <= 1 || total <= 1) {
        for (int i = 0; i < total; ++i) solve_one(i);
    } else {
        std::atomic<int> next{0};
        auto worker = [&] {
            for (;;) {
                const int i = next.fetch_add(1);
                if (i >= total) return;
                solve_one(i);
            }
        };
        std::vector<std::thread> pool;
        const int n_threads = std::min(jobs, total);
        pool.reserve(static_cast<std::size_t>(n_threads));
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }

    std::vector<DatasetRecord> records;
    records.reserve(static_cast<std::size_t>(total));
    int conv_train = 0, conv_test = 0;
    for (int i = 0; i < total; ++i) {
        if (slots[static_cast<std::size_t>(i)]) {
            (i < n_train ? conv_train : conv_test) += 1;
            records.push_back(std::move(*slots[static_cast<std::size_t>(i)]));
        }
    }
    if (report) {
        report->requested_train = n_train;
        report->requested_test = n_test;
        report->converged_train = conv_train;
        report->converged_test = conv_test;
        report->dropped_train = n_train - conv_train;
        report->dropped_test = n_test - conv_test;
        report->nr_tolerance = nr.tol;
        report->train_spec = train;
        report->test_spec = test;
    }
    return records;
}

DatasetHeader make_dataset_header(const GridCase& grid, const PerturbationSpec& train,
                                  const PerturbationSpec& test, const NewtonOptions& nr,
                                  std::uint64_t seed) {
    DatasetHeader header;
    header.case_name = grid.name;
    header.n_bus = grid.n_bus();
    header.nr_tolerance = nr.tol;
    nlohmann::json spec;
    spec["train"] = nlohmann::json::parse(train.to_json_string());
    spec["test"] = nlohmann::json::parse(test.to_json_string());
    header.perturbation_spec_json = spec.dump();
    header.seed = seed;
    header.v_setpoints.resize(static_cast<std::size_t>(grid.n_bus()), 0.0);
    for (const Bus& b : grid.buses)
        if (b.kind != BusKind::PQ) header.v_setpoints[static_cast<std::size_t>(b.index)] = b.v_setpoint;
    return header;
}

}  // namespace pfttt
