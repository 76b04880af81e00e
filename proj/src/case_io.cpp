#include "pfttt/case_io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pfttt/surrogate.hpp"

namespace pfttt {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct MatrixSection {
    std::vector<std::vector<double>> rows;
    int first_line = 0;
};

// Pulls `mpc.baseMVA = <v>;` and the bus/gen/branch matrix blocks out of the
// text. Tracks line numbers for error messages; '%' starts a comment.
struct CaseText {
    double base_mva = 0.0;
    bool base_seen = false;
    std::map<std::string, MatrixSection> sections;
};

CaseText scan_case(const std::string& text) {
    CaseText out;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    std::string open_section;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto pos = line.find('%'); pos != std::string::npos) line.erase(pos);
        auto not_space = [](char c) { return !std::isspace(static_cast<unsigned char>(c)); };
        line.erase(line.begin(), std::find_if(line.begin(), line.end(), not_space));
        line.erase(std::find_if(line.rbegin(), line.rend(), not_space).base(), line.end());
        if (line.empty()) continue;

        if (open_section.empty()) {
            if (line.rfind("mpc.baseMVA", 0) == 0) {
                auto eq = line.find('=');
                if (eq == std::string::npos) throw ParseError("malformed baseMVA assignment", line_no);
                std::string rhs = line.substr(eq + 1);
                if (auto sc = rhs.find(';'); sc != std::string::npos) rhs.erase(sc);
                try {
                    out.base_mva = std::stod(rhs);
                } catch (const std::exception&) {
                    throw ParseError("cannot parse baseMVA value", line_no);
                }
                out.base_seen = true;
                continue;
            }
            for (const char* name : {"bus", "gen", "branch"}) {
                std::string key = std::string("mpc.") + name;
                if (line.rfind(key, 0) == 0 &&
                    (line.size() == key.size() || !std::isalnum(static_cast<unsigned char>(line[key.size()])))) {
                    auto bracket = line.find('[');
                    if (bracket == std::string::npos)
                        throw ParseError(std::string("expected '[' opening mpc.") + name, line_no);
                    open_section = name;
                    out.sections[name].first_line = line_no;
                    line = line.substr(bracket + 1);
                    break;
                }
            }
            if (open_section.empty()) continue;  // unrelated statement (version, gencost, ...)
        }

        // inside a matrix: rows end with ';', the matrix ends with '];'
        bool closes = false;
        if (auto pos = line.find(']'); pos != std::string::npos) {
            closes = true;
            line.erase(pos);
        }
        std::string row;
        std::istringstream rows(line);
        while (std::getline(rows, row, ';')) {
            std::istringstream fields(row);
            std::vector<double> vals;
            std::string tok;
            while (fields >> tok) {
                try {
                    std::size_t used = 0;
                    vals.push_back(std::stod(tok, &used));
                    if (used != tok.size()) throw std::invalid_argument(tok);
                } catch (const std::exception&) {
                    throw ParseError("cannot parse number '" + tok + "'", line_no);
                }
            }
            if (!vals.empty()) out.sections[open_section].rows.push_back(std::move(vals));
        }
        if (closes) open_section.clear();
    }
    if (!open_section.empty())
        throw ParseError("unterminated mpc." + open_section + " matrix",
                         out.sections[open_section].first_line);
    return out;
}

void require_columns(const MatrixSection& sec, std::size_t min_cols, const std::string& name) {
    for (const auto& row : sec.rows) {
        if (row.size() < min_cols)
            throw ParseError(name + " row has " + std::to_string(row.size()) +
                                 " columns, expected at least " + std::to_string(min_cols),
                             sec.first_line);
    }
}

}  // namespace

GridCase parse_case(const std::string& text, const std::string& name) {
    CaseText scan = scan_case(text);
    if (!scan.base_seen) throw InvalidDataError("case text lacks a baseMVA section");
    for (const char* sec : {"bus", "gen", "branch"}) {
        if (!scan.sections.count(sec) || scan.sections[sec].rows.empty())
            throw InvalidDataError(std::string("case text lacks a ") + sec + " section");
    }
    if (scan.base_mva <= 0.0) throw InvalidDataError("baseMVA must be positive");

    const double base = scan.base_mva;
    GridCase grid;
    grid.name = name;
    grid.base_mva = base;

    const MatrixSection& bus_sec = scan.sections["bus"];
    const MatrixSection& gen_sec = scan.sections["gen"];
    const MatrixSection& br_sec = scan.sections["branch"];
    require_columns(bus_sec, 13, "bus");
    require_columns(gen_sec, 10, "gen");
    require_columns(br_sec, 13, "branch");

    std::map<int, int> id_to_index;
    for (const auto& row : bus_sec.rows) {
        Bus b;
        b.index = static_cast<int>(grid.buses.size());
        b.ext_id = static_cast<int>(row[0]);
        const int type = static_cast<int>(row[1]);
        switch (type) {
            case 1: b.kind = BusKind::PQ; break;
            case 2: b.kind = BusKind::PV; break;
            case 3: b.kind = BusKind::Slack; break;
            default:
                throw InvalidDataError("bus " + std::to_string(b.ext_id) + ": unsupported type " +
                                       std::to_string(type));
        }
        b.p_load = row[2] / base;
        b.q_load = row[3] / base;
        b.g_shunt = row[4] / base;
        b.b_shunt = row[5] / base;
        b.vm0 = row[7];
        b.va0 = row[8] * kPi / 180.0;
        b.v_max = row[11];
        b.v_min = row[12];
        b.v_setpoint = b.vm0;
        if (!id_to_index.emplace(b.ext_id, b.index).second)
            throw InvalidDataError("duplicate bus id " + std::to_string(b.ext_id));
        grid.buses.push_back(b);
    }

    int slack_count = 0;
    for (const Bus& b : grid.buses)
        if (b.kind == BusKind::Slack) ++slack_count;
    if (slack_count == 0) throw InvalidDataError("no slack bus");
    if (slack_count > 1) throw InvalidDataError("multiple slack buses");

    std::vector<bool> bus_has_gen(grid.buses.size(), false);
    for (const auto& row : gen_sec.rows) {
        if (row[7] <= 0.0) continue;  // out of service
        const int ext = static_cast<int>(row[0]);
        auto it = id_to_index.find(ext);
        if (it == id_to_index.end())
            throw InvalidDataError("generator references unknown bus " + std::to_string(ext));
        Generator g;
        g.bus = it->second;
        g.p_set = row[1] / base;
        g.q_set = row[2] / base;
        g.q_max = row[3] / base;
        g.q_min = row[4] / base;
        g.v_setpoint = row[5];
        g.p_max = row[8] / base;
        g.p_min = row[9] / base;
        // regulated magnitude comes from the first in-service unit on the bus
        if (!bus_has_gen[g.bus] && grid.buses[g.bus].kind != BusKind::PQ)
            grid.buses[g.bus].v_setpoint = g.v_setpoint;
        bus_has_gen[g.bus] = true;
        grid.gens.push_back(g);
    }

    // A PV bus whose units are all out of service behaves as a load bus.
    for (Bus& b : grid.buses) {
        if (b.kind == BusKind::PV && !bus_has_gen[b.index]) {
            b.kind = BusKind::PQ;
            grid.warnings.push_back("bus " + std::to_string(b.ext_id) +
                                    " demoted to PQ: no in-service generator");
        }
        if (b.kind == BusKind::Slack && !bus_has_gen[b.index])
            throw InvalidDataError("slack bus " + std::to_string(b.ext_id) + " has no generator");
    }

    for (const auto& row : br_sec.rows) {
        if (row[10] == 0.0) continue;  // out of service
        const int f_ext = static_cast<int>(row[0]);
        const int t_ext = static_cast<int>(row[1]);
        auto fi = id_to_index.find(f_ext);
        auto ti = id_to_index.find(t_ext);
        if (fi == id_to_index.end())
            throw InvalidDataError("branch references unknown bus " + std::to_string(f_ext));
        if (ti == id_to_index.end())
            throw InvalidDataError("branch references unknown bus " + std::to_string(t_ext));
        Branch br;
        br.from = fi->second;
        br.to = ti->second;
        br.r = row[2];
        br.x = row[3];
        br.b_charging = row[4];
        if (row[5] > 0.0) br.rating = row[5] / base;
        br.tap = row[8] != 0.0 ? row[8] : 1.0;
        br.shift = row[9] * kPi / 180.0;
        grid.branches.push_back(br);
    }

    grid.finalize();
    return grid;
}

GridCase load_case_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open case file: " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_case(buffer.str(), std::filesystem::path(path).stem().string());
}

namespace {

using nlohmann::json;

json vec_to_json(const Vec& v) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
    return arr;
}

Vec json_to_vec(const json& arr, const char* what) {
    if (!arr.is_array()) throw InvalidDataError(std::string(what) + " is not an array");
    Vec v(arr.size());
    for (std::size_t i = 0; i < arr.size(); ++i) {
        if (!arr[i].is_number()) throw InvalidDataError(std::string(what) + " holds a non-number");
        v[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
    }
    return v;
}

void require_finite(const Vec& v, const char* what) {
    if (!v.allFinite()) throw InvalidDataError(std::string("non-finite value in ") + what);
}

}  // namespace

void write_dataset(std::ostream& out, const DatasetHeader& header,
                   std::span<const DatasetRecord> records) {
    const int n = header.n_bus;
    for (const DatasetRecord& r : records) {
        if (r.condition.size() != n || r.label.size() != n)
            throw DimensionError("record dimensions disagree with header n_bus");
        require_finite(r.condition.p_spec, "p_spec");
        require_finite(r.condition.q_spec, "q_spec");
        require_finite(r.label.v, "v");
        require_finite(r.label.theta, "theta");
    }
    json h;
    h["schema_version"] = header.schema_version;
    h["case_name"] = header.case_name;
    h["n_bus"] = header.n_bus;
    h["nr_tolerance"] = header.nr_tolerance;
    h["perturbation_spec"] = json::parse(header.perturbation_spec_json);
    h["seed"] = header.seed;
    h["v_setpoints"] = header.v_setpoints;
    out << h.dump() << '\n';
    for (const DatasetRecord& r : records) {
        json line;
        line["split"] = to_string(r.split);
        line["p_spec"] = vec_to_json(r.condition.p_spec);
        line["q_spec"] = vec_to_json(r.condition.q_spec);
        line["v"] = vec_to_json(r.label.v);
        line["theta"] = vec_to_json(r.label.theta);
        out << line.dump() << '\n';
    }
}

std::pair<DatasetHeader, std::vector<DatasetRecord>> read_dataset(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw InvalidDataError("dataset stream is empty");
    json h;
    try {
        h = json::parse(line);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("dataset header is not valid JSON: ") + e.what(), 1);
    }

    DatasetHeader header;
    try {
        header.schema_version = h.at("schema_version").get<int>();
        if (header.schema_version != 1)
            throw InvalidDataError("unsupported dataset schema_version " +
                                   std::to_string(header.schema_version));
        header.case_name = h.at("case_name").get<std::string>();
        header.n_bus = h.at("n_bus").get<int>();
        header.nr_tolerance = h.at("nr_tolerance").get<double>();
        header.perturbation_spec_json = h.at("perturbation_spec").dump();
        header.seed = h.at("seed").get<std::uint64_t>();
        header.v_setpoints = h.at("v_setpoints").get<std::vector<double>>();
    } catch (const json::exception& e) {
        throw ParseError(std::string("dataset header: ") + e.what(), 1);
    }
    if (static_cast<int>(header.v_setpoints.size()) != header.n_bus)
        throw DimensionError("header v_setpoints length disagrees with n_bus");

    Vec setpoints(header.n_bus);
    for (int i = 0; i < header.n_bus; ++i) setpoints[i] = header.v_setpoints[static_cast<std::size_t>(i)];

    std::vector<DatasetRecord> records;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(std::string("malformed record: ") + e.what(), line_no);
        }
        if (!j.is_object() || j.size() != 5 || !j.contains("split") || !j.contains("p_spec") ||
            !j.contains("q_spec") || !j.contains("v") || !j.contains("theta"))
            throw ParseError("record does not have exactly the five expected fields", line_no);
        DatasetRecord r;
        const std::string split = j["split"].get<std::string>();
        if (split == "train")
            r.split = Split::Train;
        else if (split == "test")
            r.split = Split::Test;
        else
            throw ParseError("unknown split tag '" + split + "'", line_no);
        r.condition.p_spec = json_to_vec(j["p_spec"], "p_spec");
        r.condition.q_spec = json_to_vec(j["q_spec"], "q_spec");
        r.condition.v_setpoints = setpoints;
        r.label.v = json_to_vec(j["v"], "v");
        r.label.theta = json_to_vec(j["theta"], "theta");
        if (r.condition.p_spec.size() != header.n_bus || r.condition.q_spec.size() != header.n_bus ||
            r.label.v.size() != header.n_bus || r.label.theta.size() != header.n_bus)
            throw DimensionError("line " + std::to_string(line_no) +
                                 ": record dimensions disagree with header n_bus");
        records.push_back(std::move(r));
    }
    return {header, records};
}

void write_dataset_file(const std::string& path, const DatasetHeader& header,
                        std::span<const DatasetRecord> records) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open dataset file for writing: " + path);
    write_dataset(out, header, records);
    if (!out) throw IoError("failed writing dataset file: " + path);
}

std::pair<DatasetHeader, std::vector<DatasetRecord>> read_dataset_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset file: " + path);
    return read_dataset(in);
}

void save_model(std::ostream& out, const SurrogateParams& params) {
    json doc;
    doc["schema_version"] = 1;
    doc["case_name"] = params.case_name;
    doc["input_dim"] = params.input_dim();
    doc["output_dim"] = params.output_dim();
    json shapes = json::array();
    json weights = json::array();
    for (const Layer& layer : params.layers) {
        shapes.push_back({layer.w.rows(), layer.w.cols()});
        for (Eigen::Index r = 0; r < layer.w.rows(); ++r)
            for (Eigen::Index c = 0; c < layer.w.cols(); ++c) weights.push_back(layer.w(r, c));
        for (Eigen::Index r = 0; r < layer.b.size(); ++r) weights.push_back(layer.b[r]);
    }
    doc["layer_shapes"] = shapes;
    doc["adapt_boundary"] = params.adapt_boundary;
    doc["weights"] = weights;
    doc["normalization_stats"] = {{"input_mean", vec_to_json(params.stats.in_mean)},
                                  {"input_scale", vec_to_json(params.stats.in_scale)},
                                  {"output_mean", vec_to_json(params.stats.out_mean)},
                                  {"output_scale", vec_to_json(params.stats.out_scale)}};
    doc["training"] = json::parse(params.training_echo_json);
    out << doc.dump(1) << '\n';
}

SurrogateParams load_model(std::istream& in) {
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw InvalidDataError(std::string("model stream truncated or malformed: ") + e.what());
    }
    SurrogateParams params;
    try {
        const int version = doc.at("schema_version").get<int>();
        if (version != 1)
            throw InvalidDataError("unsupported model schema_version " + std::to_string(version));
        params.case_name = doc.at("case_name").get<std::string>();
        const auto shapes = doc.at("layer_shapes");
        const auto weights = doc.at("weights");
        std::size_t pos = 0;
        for (const auto& shape : shapes) {
            const Eigen::Index rows = shape.at(0).get<Eigen::Index>();
            const Eigen::Index cols = shape.at(1).get<Eigen::Index>();
            Layer layer;
            layer.w.resize(rows, cols);
            layer.b.resize(rows);
            if (pos + static_cast<std::size_t>(rows * cols + rows) > weights.size())
                throw InvalidDataError("model weights truncated: fewer values than layer_shapes imply");
            for (Eigen::Index r = 0; r < rows; ++r)
                for (Eigen::Index c = 0; c < cols; ++c) layer.w(r, c) = weights[pos++].get<double>();
            for (Eigen::Index r = 0; r < rows; ++r) layer.b[r] = weights[pos++].get<double>();
            params.layers.push_back(std::move(layer));
        }
        if (pos != weights.size())
            throw InvalidDataError("model weights length disagrees with layer_shapes");
        params.adapt_boundary = doc.at("adapt_boundary").get<int>();
        const auto& stats = doc.at("normalization_stats");
        params.stats.in_mean = json_to_vec(stats.at("input_mean"), "input_mean");
        params.stats.in_scale = json_to_vec(stats.at("input_scale"), "input_scale");
        params.stats.out_mean = json_to_vec(stats.at("output_mean"), "output_mean");
        params.stats.out_scale = json_to_vec(stats.at("output_scale"), "output_scale");
        if (doc.contains("training")) params.training_echo_json = doc["training"].dump();
    } catch (const json::exception& e) {
        throw InvalidDataError(std::string("model document malformed: ") + e.what());
    }
    params.validate();
    return params;
}

void save_model_file(const std::string& path, const SurrogateParams& params) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open model file for writing: " + path);
    save_model(out, params);
    if (!out) throw IoError("failed writing model file: " + path);
}

SurrogateParams load_model_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open model file: " + path);
    return load_model(in);
}

void validate_model_for_case(const SurrogateParams& params, const GridCase& grid) {
    if (params.input_dim() != 6 * grid.n_bus() || params.output_dim() != grid.n_unknowns())
        throw DimensionError("model dimensions (" + std::to_string(params.input_dim()) + " -> " +
                             std::to_string(params.output_dim()) + ") do not match case '" +
                             grid.name + "' (" + std::to_string(6 * grid.n_bus()) + " -> " +
                             std::to_string(grid.n_unknowns()) + ")");
}

}  // namespace pfttt
