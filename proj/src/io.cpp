#include "critmass/io.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace critmass {

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::InvalidArgument, "cannot write " + path);
  return f;
}

// strtod keeps subnormals that std::stod rejects as out of range
double parse_number(const std::string& cell, const std::string& path) {
  const char* b = cell.c_str();
  char* e = nullptr;
  const double v = std::strtod(b, &e);
  while (e && (*e == ' ' || *e == '\r')) ++e;
  if (e == b || *e != '\0') throw Error(ErrorKind::InvalidArgument, "bad number '" + cell + "' in " + path);
  return v;
}

}  // namespace

std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  if (x == 0.0) return "0";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string csv_text(const std::vector<Column>& columns) {
  std::string out;
  if (columns.empty()) return out;
  const std::size_t n = columns.front().values.size();
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (columns[c].values.size() != n) throw Error(ErrorKind::InvalidArgument, "ragged CSV column " + columns[c].name);
    out += (c ? "," : "") + columns[c].name;
  }
  out += '\n';
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < columns.size(); ++c) {
      if (c) out += ',';
      out += format_number(columns[c].values[i]);
    }
    out += '\n';
  }
  return out;
}

void write_csv(const std::string& path, const std::vector<Column>& columns) {
  auto f = open_out(path);
  f << csv_text(columns);
}

std::vector<Column> read_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorKind::InvalidArgument, "cannot read " + path);
  std::string line;
  std::vector<Column> cols;
  if (!std::getline(f, line)) throw Error(ErrorKind::InvalidArgument, path + " is empty");
  {
    std::stringstream ss(line);
    std::string name;
    while (std::getline(ss, name, ',')) cols.push_back({name, {}});
  }
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t c = 0;
    while (std::getline(ss, cell, ',')) {
      if (c >= cols.size()) throw Error(ErrorKind::InvalidArgument, "too many cells in " + path);
      cols[c++].values.push_back(parse_number(cell, path));
    }
    if (c != cols.size()) throw Error(ErrorKind::InvalidArgument, "short row in " + path);
  }
  return cols;
}

void write_json(const std::string& path, const Json& j) {
  auto f = open_out(path);
  f << j.dump(2) << '\n';
}

Json read_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorKind::InvalidArgument, "cannot read " + path);
  try {
    return Json::parse(f);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorKind::InvalidArgument, path + ": " + e.what());
  }
}

Json to_json(const GridSpec& g) {
  return {{"r_max", g.r_max}, {"dr_min", g.dr_min}, {"growth", g.growth}, {"dr_max", g.dr_max}};
}

Json to_json(const SimConfig& c) {
  Json init = {{"preset", to_string(c.init.preset)}, {"mu0", c.init.mu0},     {"mass", c.init.mass},
               {"width", c.init.width},              {"scale", c.init.scale}};
  if (c.init.preset == Preset::custom) init["samples"] = c.init.custom_r.size();
  return {
      {"frame", to_string(c.frame)},
      {"init", init},
      {"grid", to_json(c.grid)},
      {"dt",
       {{"dt_initial", c.dt.dt_initial},
        {"growth", c.dt.growth},
        {"dt_max", c.dt.dt_max},
        {"dt_min", c.dt.dt_min},
        {"max_peak_change", c.dt.max_peak_change}}},
      {"stop",
       {{"final_time", c.stop.final_time},
        {"peak_threshold", c.stop.peak_threshold},
        {"min_mu_proxy", c.stop.min_mu_proxy},
        {"steady_tol", c.stop.steady_tol},
        {"steady_window", c.stop.steady_window}}},
      {"output_every", c.output_every},
  };
}

void write_snapshots(const std::string& path, const std::vector<PartialMassState>& snaps) {
  Column t{"time", {}}, r{"r", {}}, m{"mhat", {}};
  for (const auto& s : snaps) {
    for (std::size_t i = 0; i < s.mhat.size(); ++i) {
      t.values.push_back(s.time);
      r.values.push_back(s.grid[i]);
      m.values.push_back(s.mhat[i]);
    }
  }
  write_csv(path, {t, r, m});
}

bool RunManifest::all_pass() const {
  if (!failure.empty()) return false;
  for (const auto& c : checks) {
    if (!c.pass) return false;
  }
  return true;
}

Json RunManifest::to_json() const {
  Json checks_j = Json::array();
  for (const auto& c : checks) {
    checks_j.push_back({{"name", c.name}, {"pass", c.pass}, {"value", c.value}, {"bound", c.bound}});
  }
  Json j = {{"subcommand", subcommand}, {"version", tool_version()}, {"config", config},
            {"resolved", resolved},     {"seed", seed},             {"grid", grid},              {"tolerances", tolerances},
            {"timings", timings},       {"outputs", outputs},        {"checks", checks_j},
            {"status", all_pass() ? "pass" : "fail"}};
  if (!failure.empty()) j["failure"] = failure;
  return j;
}

const char* tool_version() { return "0.1.0"; }

}  // namespace critmass
