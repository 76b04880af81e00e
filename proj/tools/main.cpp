#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "pfttt/case_io.hpp"
#include "pfttt/eval.hpp"
#include "pfttt/pipeline.hpp"
#include "pfttt/scenario.hpp"
#include "pfttt/surrogate.hpp"
#include "pfttt/ttt.hpp"

namespace {

using nlohmann::json;
using namespace pfttt;

constexpr int kExitOk = 0;
constexpr int kExitIo = 2;
constexpr int kExitInvalidData = 3;
constexpr int kExitDimension = 4;
constexpr int kExitNumerical = 5;

void print_warnings(const GridCase& grid) {
    for (const std::string& w : grid.warnings) std::cerr << "warning: " << w << "\n";
}

struct GenerateOpts {
    std::string case_path;
    std::string out_path;
    int n_train = 1000;
    int n_test = 200;
    std::uint64_t seed = 7;
    double train_low = 0.9, train_high = 1.1;
    double test_low = 0.8, test_high = 1.2;
    double gen_low = 0.9, gen_high = 1.1;
    std::string mode = "independent_per_bus";
    double nr_tol = 1e-8;
    int nr_max_iter = 20;
    int jobs = 1;
};

int cmd_generate(const GenerateOpts& o) {
    GridCase grid = load_case_file(o.case_path);
    print_warnings(grid);

    PerturbationSpec train_spec, test_spec;
    train_spec.load_scale_low = o.train_low;
    train_spec.load_scale_high = o.train_high;
    test_spec.load_scale_low = o.test_low;
    test_spec.load_scale_high = o.test_high;
    train_spec.gen_scale_low = test_spec.gen_scale_low = o.gen_low;
    train_spec.gen_scale_high = test_spec.gen_scale_high = o.gen_high;
    train_spec.correlation_mode = test_spec.correlation_mode = correlation_mode_from_string(o.mode);
    train_spec.seed = o.seed;
    test_spec.seed = o.seed + 1;

    NewtonOptions nr;
    nr.tol = o.nr_tol;
    nr.max_iter = o.nr_max_iter;

    GenerationReport rep;
    std::vector<DatasetRecord> records =
        generate_dataset(grid, train_spec, test_spec, o.n_train, o.n_test, nr, &rep, o.jobs);
    DatasetHeader header = make_dataset_header(grid, train_spec, test_spec, nr, o.seed);
    write_dataset_file(o.out_path, header, records);

    json echo;
    echo["command"] = "generate";
    echo["case"] = o.case_path;
    echo["out"] = o.out_path;
    echo["n_train"] = o.n_train;
    echo["n_test"] = o.n_test;
    echo["seed"] = o.seed;
    echo["nr_tol"] = o.nr_tol;
    echo["nr_max_iter"] = o.nr_max_iter;
    echo["jobs"] = o.jobs;
    echo["perturbation"] = json::parse(header.perturbation_spec_json);
    std::cout << "config " << echo.dump() << "\n";
    std::cout << "train: " << rep.converged_train << "/" << rep.requested_train
              << " converged (dropped " << rep.dropped_train << ")\n";
    std::cout << "test:  " << rep.converged_test << "/" << rep.requested_test
              << " converged (dropped " << rep.dropped_test << ")\n";
    std::cout << "wrote " << records.size() << " records to " << o.out_path << "\n";
    return kExitOk;
}

struct TrainOpts {
    std::string case_path;
    std::string dataset_path;
    std::string out_path;
    std::string curve_path;
    std::vector<int> hidden;
    double lr = 0.05;
    double momentum = 0.9;
    int batch = 32;
    int epochs = 200;
    std::uint64_t seed = 1;
};

int cmd_train(const TrainOpts& o) {
    GridCase grid = load_case_file(o.case_path);
    print_warnings(grid);
    auto [header, records] = read_dataset_file(o.dataset_path);
    if (header.n_bus != grid.n_bus())
        throw DimensionError("dataset n_bus " + std::to_string(header.n_bus) +
                             " does not match case " + grid.name);
    std::vector<DatasetRecord> split = filter_split(records, Split::Train);
    if (split.empty()) throw InvalidDataError("dataset has no train records");

    TrainOptions opts;
    opts.hidden = o.hidden;
    opts.learning_rate = o.lr;
    opts.momentum = o.momentum;
    opts.batch_size = o.batch;
    opts.epochs = o.epochs;
    opts.seed = o.seed;

    TrainResult result = train(grid, split, opts);
    save_model_file(o.out_path, result.params);

    if (!o.curve_path.empty()) {
        std::ofstream curve(o.curve_path);
        if (!curve) throw IoError("cannot open curve file for writing: " + o.curve_path);
        curve << "epoch,mse\n";
        for (std::size_t e = 0; e < result.loss_curve.size(); ++e)
            curve << e << ',' << format_double(result.loss_curve[e]) << '\n';
    }

    json echo;
    echo["command"] = "train";
    echo["case"] = o.case_path;
    echo["dataset"] = o.dataset_path;
    echo["out"] = o.out_path;
    echo["training"] = json::parse(result.params.training_echo_json);
    std::cout << "config " << echo.dump() << "\n";
    std::cout << "trained on " << split.size() << " records";
    if (!result.loss_curve.empty())
        std::cout << ", mse " << format_double(result.loss_curve.front()) << " -> "
                  << format_double(result.loss_curve.back());
    std::cout << "\nwrote model to " << o.out_path << "\n";
    return kExitOk;
}

struct TTTFlags {
    int steps = 10;
    double eta = 0.01;
    double lambda_v = 100.0;
    double lambda_flow = 100.0;
    double epsilon_rel = 0.1;
    double epsilon_abs = 0.0;  // 0 = unset
    std::string step_control = "backtracking";
    bool include_gen_limits = false;
    std::string profile;  // "" or "paper-faithful"
    bool step_control_given = false;

    TTTConfig resolve() const {
        TTTConfig cfg;
        cfg.steps = steps;
        cfg.eta = eta;
        cfg.lambda_v = lambda_v;
        cfg.lambda_flow = lambda_flow;
        cfg.epsilon_rel = epsilon_rel;
        if (epsilon_abs > 0.0) cfg.epsilon_abs = epsilon_abs;
        cfg.step_control = step_control_from_string(step_control);
        cfg.include_gen_limits = include_gen_limits;
        if (!profile.empty()) {
            if (profile != "paper-faithful")
                throw InvalidDataError("unknown profile '" + profile + "'");
            if (!step_control_given) cfg.step_control = StepControl::Fixed;
        }
        cfg.validate();
        return cfg;
    }

    json echo(const TTTConfig& cfg) const {
        json j;
        j["steps"] = cfg.steps;
        j["eta"] = cfg.eta;
        j["lambda_v"] = cfg.lambda_v;
        j["lambda_flow"] = cfg.lambda_flow;
        j["epsilon_rel"] = cfg.epsilon_rel;
        if (cfg.epsilon_abs) j["epsilon_abs"] = *cfg.epsilon_abs;
        j["step_control"] = to_string(cfg.step_control);
        j["include_gen_limits"] = cfg.include_gen_limits;
        j["profile"] = profile.empty() ? "default" : profile;
        return j;
    }
};

void add_ttt_flags(CLI::App* cmd, TTTFlags& f) {
    cmd->add_option("--ttt-steps", f.steps, "refinement steps K (0 = baseline only)");
    cmd->add_option("--ttt-eta", f.eta, "step length on the normalized gradient");
    cmd->add_option("--lambda-v", f.lambda_v, "voltage penalty weight");
    cmd->add_option("--lambda-flow", f.lambda_flow, "flow penalty weight");
    cmd->add_option("--epsilon-rel", f.epsilon_rel, "trust region relative to ||theta_adapt||");
    cmd->add_option("--epsilon-abs", f.epsilon_abs, "absolute trust region (overrides relative)");
    auto* sc = cmd->add_option("--step-control", f.step_control, "fixed|backtracking");
    sc->check(CLI::IsMember({"fixed", "backtracking"}));
    cmd->add_flag("--include-gen-limits", f.include_gen_limits,
                  "add generator-limit penalties to the refinement loss");
    cmd->add_option("--profile", f.profile,
                    "named preset; 'paper-faithful' selects fixed-step updates")
        ->check(CLI::IsMember({"paper-faithful"}));
    cmd->callback([sc, &f] { f.step_control_given = sc->count() > 0; });
}

struct EvalOpts {
    std::string case_path;
    std::string dataset_path;
    std::string model_path;
    std::string report_prefix;
    std::string split = "test";
    int jobs = 1;
    TTTFlags ttt;
};

int cmd_eval(const EvalOpts& o) {
    GridCase grid = load_case_file(o.case_path);
    print_warnings(grid);
    auto [header, records] = read_dataset_file(o.dataset_path);
    if (header.n_bus != grid.n_bus())
        throw DimensionError("dataset n_bus does not match case " + grid.name);
    SurrogateParams params = load_model_file(o.model_path);
    validate_model_for_case(params, grid);

    std::vector<DatasetRecord> split =
        filter_split(records, o.split == "train" ? Split::Train : Split::Test);
    if (split.empty()) throw InvalidDataError("dataset has no " + o.split + " records");

    TTTConfig cfg = o.ttt.resolve();
    EvalOutcome outcome = evaluate_model(grid, split, params, cfg, o.jobs);

    json echo;
    echo["command"] = "eval";
    echo["case"] = o.case_path;
    echo["dataset"] = o.dataset_path;
    echo["model"] = o.model_path;
    echo["split"] = o.split;
    echo["jobs"] = o.jobs;
    echo["ttt"] = o.ttt.echo(cfg);
    echo["epsilon_resolved"] = outcome.epsilon;
    outcome.report.config_echo_json = echo.dump();

    emit_report(outcome.report, o.report_prefix);
    std::cout << render_report_text(outcome.report);
    std::cout << "wrote report files with prefix " << o.report_prefix << "\n";
    return kExitOk;
}

struct BenchOpts {
    std::string case_path;
    std::string model_path;
    std::string report_prefix;
    int samples = 20;
    int reps = 5;
    double low = 0.9, high = 1.1;
    std::uint64_t seed = 11;
    bool skip_nr = false;
    TTTFlags ttt;
};

int cmd_bench(const BenchOpts& o) {
    GridCase grid = load_case_file(o.case_path);
    print_warnings(grid);
    SurrogateParams params = load_model_file(o.model_path);
    validate_model_for_case(params, grid);

    PerturbationSpec spec;
    spec.load_scale_low = o.low;
    spec.load_scale_high = o.high;
    spec.seed = o.seed;
    std::vector<OperatingCondition> conds;
    conds.reserve(static_cast<std::size_t>(o.samples));
    for (int i = 0; i < o.samples; ++i)
        conds.push_back(sample_condition(grid, spec, static_cast<std::uint64_t>(i)));

    TTTConfig cfg = o.ttt.resolve();
    BenchTable table = bench_pipeline(grid, params, cfg, conds, o.reps, !o.skip_nr);

    EvalReport report;
    report.case_name = grid.name;
    report.n_samples = o.samples;
    report.bench = table;
    json echo;
    echo["command"] = "bench";
    echo["case"] = o.case_path;
    echo["model"] = o.model_path;
    echo["samples"] = o.samples;
    echo["repetitions"] = o.reps;
    echo["skip_nr"] = o.skip_nr;
    echo["ttt"] = o.ttt.echo(cfg);
    report.config_echo_json = echo.dump();

    std::cout << render_report_text(report);
    if (!o.report_prefix.empty()) {
        emit_report(report, o.report_prefix);
        std::cout << "wrote report files with prefix " << o.report_prefix << "\n";
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"AC power-flow surrogate toolkit with physics-informed test-time refinement"};
    app.require_subcommand(1);
    app.set_config("--config", "", "read options from an INI file (flags take precedence)");

    GenerateOpts gen;
    CLI::App* g = app.add_subcommand("generate", "sample scenarios, solve them and write a dataset");
    g->add_option("--case", gen.case_path, "MATPOWER-style case file")->required();
    g->add_option("--out", gen.out_path, "output dataset path")->required();
    g->add_option("--n-train", gen.n_train, "training scenarios to draw");
    g->add_option("--n-test", gen.n_test, "test scenarios to draw");
    g->add_option("--seed", gen.seed, "master seed (test stream uses seed+1)");
    g->add_option("--train-low", gen.train_low, "train load-scale lower bound");
    g->add_option("--train-high", gen.train_high, "train load-scale upper bound");
    g->add_option("--test-low", gen.test_low, "test load-scale lower bound");
    g->add_option("--test-high", gen.test_high, "test load-scale upper bound");
    g->add_option("--gen-low", gen.gen_low, "generator-scale lower bound");
    g->add_option("--gen-high", gen.gen_high, "generator-scale upper bound");
    g->add_option("--mode", gen.mode, "independent_per_bus|global_plus_noise")
        ->check(CLI::IsMember({"independent_per_bus", "global_plus_noise"}));
    g->add_option("--nr-tol", gen.nr_tol, "Newton tolerance (pu)");
    g->add_option("--nr-max-iter", gen.nr_max_iter, "Newton iteration cap");
    g->add_option("--jobs", gen.jobs, "worker threads (output independent of this)");

    TrainOpts tr;
    CLI::App* t = app.add_subcommand("train", "fit the surrogate on the train split");
    t->add_option("--case", tr.case_path, "MATPOWER-style case file")->required();
    t->add_option("--dataset", tr.dataset_path, "dataset produced by generate")->required();
    t->add_option("--out", tr.out_path, "output model path")->required();
    t->add_option("--curve", tr.curve_path, "optional loss-curve csv path");
    t->add_option("--hidden", tr.hidden, "hidden layer widths")->delimiter(',');
    t->add_option("--lr", tr.lr, "learning rate");
    t->add_option("--momentum", tr.momentum, "momentum coefficient");
    t->add_option("--batch", tr.batch, "mini-batch size");
    t->add_option("--epochs", tr.epochs, "training epochs");
    t->add_option("--seed", tr.seed, "training seed");

    EvalOpts ev;
    CLI::App* e = app.add_subcommand("eval", "refine and score a split, writing report files");
    e->add_option("--case", ev.case_path, "MATPOWER-style case file")->required();
    e->add_option("--dataset", ev.dataset_path, "dataset produced by generate")->required();
    e->add_option("--model", ev.model_path, "model produced by train")->required();
    e->add_option("--report-prefix", ev.report_prefix, "prefix for report files")->required();
    e->add_option("--split", ev.split, "test|train")->check(CLI::IsMember({"test", "train"}));
    e->add_option("--jobs", ev.jobs, "worker threads (output independent of this)");
    add_ttt_flags(e, ev.ttt);

    BenchOpts be;
    CLI::App* b = app.add_subcommand("bench", "per-sample runtime of forward, refinement and NR");
    b->add_option("--case", be.case_path, "MATPOWER-style case file")->required();
    b->add_option("--model", be.model_path, "model produced by train")->required();
    b->add_option("--report-prefix", be.report_prefix, "optional prefix for report files");
    b->add_option("--samples", be.samples, "distinct sampled conditions");
    b->add_option("--reps", be.reps, "timed repetitions (plus one warm-up)");
    b->add_option("--low", be.low, "load-scale lower bound for sampled conditions");
    b->add_option("--high", be.high, "load-scale upper bound for sampled conditions");
    b->add_option("--seed", be.seed, "sampling seed");
    b->add_flag("--skip-nr", be.skip_nr, "omit the Newton-Raphson row");
    add_ttt_flags(b, be.ttt);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        return app.exit(err);
    }

    try {
        if (g->parsed()) return cmd_generate(gen);
        if (t->parsed()) return cmd_train(tr);
        if (e->parsed()) return cmd_eval(ev);
        if (b->parsed()) return cmd_bench(be);
    } catch (const IoError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitIo;
    } catch (const DimensionError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitDimension;
    } catch (const ParseError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitInvalidData;
    } catch (const InvalidDataError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitInvalidData;
    } catch (const NumericalError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitNumerical;
    }
    return kExitOk;
}
