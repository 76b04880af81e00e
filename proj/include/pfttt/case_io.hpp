#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "pfttt/grid.hpp"

namespace pfttt {

struct SurrogateParams;  // defined in surrogate.hpp

enum class Split { Train, Test };

inline const char* to_string(Split s) { return s == Split::Train ? "train" : "test"; }

/// One labeled scenario: its specified injections and the solved state.
struct DatasetRecord {
    Split split = Split::Train;
    OperatingCondition condition;
    StateVector label;
};

struct DatasetHeader {
    int schema_version = 1;
    std::string case_name;
    int n_bus = 0;
    double nr_tolerance = 1e-8;
    std::string perturbation_spec_json = "{}";  // opaque echo of the generating specs
    std::uint64_t seed = 0;
    std::vector<double> v_setpoints;  // shared by every record (setpoints are never perturbed)
};

/// Parse a MATPOWER-style case text (baseMVA/bus/gen/branch matrix sections,
/// version-2 column layout). Angles are converted to radians, MW/MVAr columns
/// to per-unit, out-of-service branches and generators are dropped, and a
/// rate_A of 0 maps to an absent rating. Throws ParseError with a line number
/// for syntax problems and InvalidDataError for semantic ones.
GridCase parse_case(const std::string& text, const std::string& name = "");

/// Read a case file from disk; the case name defaults to the file stem.
GridCase load_case_file(const std::string& path);

/// Line-delimited dataset: one JSON header object, then one JSON object per
/// record. Floats round-trip bit-exactly.
void write_dataset(std::ostream& out, const DatasetHeader& header,
                   std::span<const DatasetRecord> records);
std::pair<DatasetHeader, std::vector<DatasetRecord>> read_dataset(std::istream& in);

void write_dataset_file(const std::string& path, const DatasetHeader& header,
                        std::span<const DatasetRecord> records);
std::pair<DatasetHeader, std::vector<DatasetRecord>> read_dataset_file(const std::string& path);

/// Model files are a single JSON document with explicit shape metadata.
void save_model(std::ostream& out, const SurrogateParams& params);
SurrogateParams load_model(std::istream& in);
void save_model_file(const std::string& path, const SurrogateParams& params);
SurrogateParams load_model_file(const std::string& path);

/// Check that a loaded model matches the case dimensions (6n inputs,
/// (n-1)+|PQ| outputs); throws DimensionError otherwise.
void validate_model_for_case(const SurrogateParams& params, const GridCase& grid);

}  // namespace pfttt
