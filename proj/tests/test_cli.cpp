#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "testutil.hpp"

namespace fs = std::filesystem;
using namespace testutil;

namespace {

struct CliResult {
    int exit_code;
    std::string out;
    std::string err;
};

int cli_counter = 0;

CliResult run_cli(const std::string& args) {
    const fs::path dir = fs::temp_directory_path() / "pfttt_cli";
    fs::create_directories(dir);
    const fs::path out = dir / ("out" + std::to_string(cli_counter) + ".txt");
    const fs::path err = dir / ("err" + std::to_string(cli_counter) + ".txt");
    ++cli_counter;
    const std::string cmd =
        std::string(PFTTT_BIN) + " " + args + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p);
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

std::string slurp_file(const std::string& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Shared tiny pipeline artifacts, built once.
struct Workdir {
    fs::path dir;
    std::string ds, model;

    Workdir() {
        dir = fs::temp_directory_path() / "pfttt_cli_work";
        fs::create_directories(dir);
        ds = (dir / "ds.jsonl").string();
        model = (dir / "model.json").string();
        CliResult gen = run_cli("generate --case " + data_path("case14.m") + " --out " + ds +
                                " --n-train 40 --n-test 10 --seed 3");
        REQUIRE(gen.exit_code == 0);
        CliResult tr = run_cli("train --case " + data_path("case14.m") + " --dataset " + ds +
                               " --out " + model + " --hidden 12,12 --epochs 8 --seed 2");
        REQUIRE(tr.exit_code == 0);
    }
};

Workdir& work() {
    static Workdir w;
    return w;
}

}  // namespace

TEST_CASE("missing case file exits with the IO code and names the path") {
    CliResult r = run_cli("generate --case /nope/missing.m --out /tmp/x.jsonl --n-train 1 --n-test 1");
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("/nope/missing.m") != std::string::npos);
}

TEST_CASE("generate is bit-reproducible from its flags") {
    const fs::path dir = fs::temp_directory_path() / "pfttt_cli_repro";
    fs::create_directories(dir);
    const std::string a = (dir / "a.jsonl").string();
    const std::string b = (dir / "b.jsonl").string();
    const std::string flags = " --n-train 25 --n-test 6 --seed 9";
    REQUIRE(run_cli("generate --case " + data_path("case14.m") + " --out " + a + flags).exit_code == 0);
    REQUIRE(run_cli("generate --case " + data_path("case14.m") + " --out " + b + flags).exit_code == 0);
    CHECK(slurp_file(a) == slurp_file(b));

    SUBCASE("worker count does not change the bytes") {
        const std::string c = (dir / "c.jsonl").string();
        REQUIRE(run_cli("generate --case " + data_path("case14.m") + " --out " + c + flags +
                        " --jobs 4").exit_code == 0);
        CHECK(slurp_file(a) == slurp_file(c));
    }
}

TEST_CASE("train is deterministic and writes a loss curve") {
    Workdir& w = work();
    const std::string again = (w.dir / "model2.json").string();
    const std::string curve = (w.dir / "curve.csv").string();
    CliResult r = run_cli("train --case " + data_path("case14.m") + " --dataset " + w.ds +
                          " --out " + again + " --hidden 12,12 --epochs 8 --seed 2 --curve " + curve);
    REQUIRE(r.exit_code == 0);
    CHECK(slurp_file(w.model) == slurp_file(again));
    CHECK(slurp_file(curve).rfind("epoch,mse", 0) == 0);
}

TEST_CASE("train on an empty split exits with the invalid-data code") {
    Workdir& w = work();
    const std::string empty_ds = (w.dir / "empty.jsonl").string();
    REQUIRE(run_cli("generate --case " + data_path("case14.m") + " --out " + empty_ds +
                    " --n-train 0 --n-test 3 --seed 5").exit_code == 0);
    CliResult r = run_cli("train --case " + data_path("case14.m") + " --dataset " + empty_ds +
                          " --out /tmp/never.json --epochs 2");
    CHECK(r.exit_code == 3);
}

TEST_CASE("eval writes reports and the refined row improves on the baseline") {
    Workdir& w = work();
    const std::string p0 = (w.dir / "eval_k0").string();
    const std::string p10 = (w.dir / "eval_k10").string();
    CliResult r0 = run_cli("eval --case " + data_path("case14.m") + " --dataset " + w.ds +
                           " --model " + w.model + " --report-prefix " + p0 + " --ttt-steps 0");
    REQUIRE(r0.exit_code == 0);
    CliResult r10 = run_cli("eval --case " + data_path("case14.m") + " --dataset " + w.ds +
                            " --model " + w.model + " --report-prefix " + p10 + " --ttt-steps 10");
    REQUIRE(r10.exit_code == 0);

    auto parse_rmse_p = [](const std::string& path, const std::string& variant) {
        std::ifstream in(path);
        REQUIRE(in.good());
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
            if (line.rfind(variant + ",", 0) == 0) {
                const auto c1 = line.find(','), c2 = line.find(',', c1 + 1);
                return std::strtod(line.substr(c1 + 1, c2 - c1 - 1).c_str(), nullptr);
            }
        }
        FAIL("variant not found in csv");
        return 0.0;
    };
    const double base_k0 = parse_rmse_p(p0 + "_accuracy.csv", "surrogate");
    const double base_k10 = parse_rmse_p(p10 + "_accuracy.csv", "surrogate");
    const double refined = parse_rmse_p(p10 + "_accuracy.csv", "surrogate+ttt");
    CHECK(base_k0 == base_k10);  // baseline row identical across runs
    CHECK(refined < base_k10);

    SUBCASE("k=0 report has no refined row") {
        const std::string csv = slurp_file(p0 + "_accuracy.csv");
        CHECK(csv.find("surrogate+ttt") == std::string::npos);
    }
    SUBCASE("eval is bit-reproducible including with --jobs 4") {
        const std::string pj = (w.dir / "eval_jobs").string();
        CliResult rj = run_cli("eval --case " + data_path("case14.m") + " --dataset " + w.ds +
                               " --model " + w.model + " --report-prefix " + pj +
                               " --ttt-steps 10 --jobs 4");
        REQUIRE(rj.exit_code == 0);
        CHECK(slurp_file(pj + "_accuracy.csv") == slurp_file(p10 + "_accuracy.csv"));
        CHECK(slurp_file(pj + "_violations.csv") == slurp_file(p10 + "_violations.csv"));
    }
}

TEST_CASE("model/case dimension mismatch exits with the dimension code") {
    Workdir& w = work();
    CliResult r = run_cli("eval --case " + data_path("synth118.m") + " --dataset " + w.ds +
                          " --model " + w.model + " --report-prefix /tmp/mismatch");
    CHECK(r.exit_code == 4);
}

TEST_CASE("paper-faithful profile selects fixed-step updates and is echoed") {
    Workdir& w = work();
    const std::string p = (w.dir / "eval_pf").string();
    CliResult r = run_cli("eval --case " + data_path("case14.m") + " --dataset " + w.ds +
                          " --model " + w.model + " --report-prefix " + p +
                          " --ttt-steps 3 --ttt-eta 1e-4 --profile paper-faithful");
    REQUIRE(r.exit_code == 0);
    const std::string txt = slurp_file(p + "_report.txt");
    CHECK(txt.find("paper-faithful") != std::string::npos);
    CHECK(txt.find("\"step_control\":\"fixed\"") != std::string::npos);
}

TEST_CASE("bench emits the runtime table and honours --skip-nr") {
    Workdir& w = work();
    const std::string p = (w.dir / "bench").string();
    CliResult r = run_cli("bench --case " + data_path("case14.m") + " --model " + w.model +
                          " --samples 4 --reps 2 --ttt-steps 2 --report-prefix " + p);
    REQUIRE(r.exit_code == 0);
    const std::string csv = slurp_file(p + "_runtime.csv");
    CHECK(csv.find("newton_raphson") != std::string::npos);
    CHECK(csv.find("surrogate_forward") != std::string::npos);

    SUBCASE("--skip-nr omits the NR row") {
        const std::string p2 = (w.dir / "bench_skip").string();
        CliResult r2 = run_cli("bench --case " + data_path("case14.m") + " --model " + w.model +
                               " --samples 4 --reps 2 --ttt-steps 2 --skip-nr --report-prefix " + p2);
        REQUIRE(r2.exit_code == 0);
        CHECK(slurp_file(p2 + "_runtime.csv").find("newton_raphson") == std::string::npos);
    }
}

TEST_CASE("bad flag values are rejected by the parser") {
    CliResult r = run_cli("generate --case " + data_path("case14.m") +
                          " --out /tmp/x.jsonl --mode bogus");
    CHECK(r.exit_code != 0);
}
