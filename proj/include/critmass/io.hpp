#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "critmass/radialsim.hpp"

namespace critmass {

using Json = nlohmann::ordered_json;

// 17 significant digits so every double survives a text round trip.
std::string format_number(double x);

struct Column {
  std::string name;
  std::vector<double> values;
};
// Columns must have equal length.
void write_csv(const std::string& path, const std::vector<Column>& columns);
std::string csv_text(const std::vector<Column>& columns);

// Header line, then numeric rows; returns columns by name order of the header.
std::vector<Column> read_csv(const std::string& path);

void write_json(const std::string& path, const Json& j);
Json read_json(const std::string& path);

Json to_json(const GridSpec& g);
Json to_json(const SimConfig& c);

// Long format (time, r, mhat) for a list of snapshots.
void write_snapshots(const std::string& path, const std::vector<PartialMassState>& snaps);

struct CheckRecord {
  std::string name;
  bool pass = false;
  double value = 0.0;
  double bound = 0.0;
};

struct RunManifest {
  std::string subcommand;
  Json config = Json::object();    // option values as given, re-usable as a config file
  Json resolved = Json::object();  // what the run actually used after defaults
  std::uint64_t seed = 0;
  std::string grid;
  Json tolerances = Json::object();
  Json timings = Json::object();
  std::vector<std::string> outputs;
  std::vector<CheckRecord> checks;
  std::string failure;  // empty on success

  bool all_pass() const;
  Json to_json() const;
};

const char* tool_version();

}  // namespace critmass
