#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "mlmtest/design.hpp"
#include "mlmtest/likelihood.hpp"
#include "mlmtest/simulation.hpp"
#include "mlmtest/testing.hpp"

namespace mlmtest {

using json = nlohmann::json;

// CSV with a header row; `unit_column` groups rows into units in order of first
// appearance, keeping file order within a unit. Only `numeric_columns` are
// parsed (other columns may hold anything).
LongitudinalDataset parse_csv(std::istream& in, const std::string& unit_column,
                              const std::vector<std::string>& numeric_columns, const std::string& source = "<input>");
LongitudinalDataset ingest_csv(const std::string& path, const std::string& unit_column,
                               const std::vector<std::string>& numeric_columns);
// Grouped re-emission: header, then rows unit by unit.
void write_csv(std::ostream& out, const LongitudinalDataset& data);

// Columns a model specification needs (response, fixed and random terms).
std::vector<std::string> referenced_columns(const ModelSpec& spec);

// Synthetic longitudinal dataset in the size-study layout (columns y, t, x2, x3).
LongitudinalDataset synthetic_dataset(const SimConfig& config, const Scenario& scenario, std::uint64_t seed);
ModelSpec synthetic_spec();

// JSON with 17 significant digits for every real; non-finite reals become null.
std::string dump_json(const json& j, int indent = 2);

json to_json(const FitResult& fit, const Design& design);
json to_json(const TestReport& report, const Design& design);
json to_json(const SimResult& result, const std::vector<double>& quantile_grid);
FitResult fit_from_json(const json& j);

std::string fit_table(const FitResult& fit, const Design& design);
std::string test_table(const TestReport& report, const Design& design);
std::string simulation_table(const SimResult& result);
std::string rates_csv(const SimResult& result);
std::string quantiles_csv(const SimResult& result, const std::vector<double>& quantile_grid);

}  // namespace mlmtest
