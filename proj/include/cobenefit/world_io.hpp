#ifndef COBENEFIT_WORLD_IO_HPP
#define COBENEFIT_WORLD_IO_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "cobenefit/grid.hpp"
#include "cobenefit/io.hpp"

namespace cobenefit {

// World directory layout:
//
//   <K>.csv          one raster per channel (RRC.csv ... PCP.csv):
//                      rows,cols,cell_km      <- grid header line
//                      48,48,10
//                      row,col,value
//                      0,0,123.5 ...
//   population.csv   row,col,age_group,count
//   stations.csv     id,row,col,city_id,pm25_ugm3
//   cities.csv       city_id,population
//
// Every raster must list every cell exactly once.

namespace detail {

inline void check_index(long v, std::size_t bound, const std::string& what) {
  if (v < 0 || static_cast<std::size_t>(v) >= bound) {
    throw SchemaError(what + " index " + std::to_string(v) + " out of range [0," + std::to_string(bound) + ")");
  }
}

}  // namespace detail

inline std::string raster_csv(const World& w, Channel k) {
  std::string out = "rows,cols,cell_km\n" + std::to_string(w.rows()) + "," + std::to_string(w.cols()) + "," +
                    format_double(w.cell_km()) + "\nrow,col,value\n";
  for (std::size_t r = 0; r < w.rows(); ++r) {
    for (std::size_t c = 0; c < w.cols(); ++c) {
      out += std::to_string(r) + "," + std::to_string(c) + "," + format_double(w.value(k, r, c)) + "\n";
    }
  }
  return out;
}

inline std::vector<std::filesystem::path> save_world(const World& w, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  for (Channel k : kAllChannels) {
    const auto p = dir / (std::string(channel_name(k)) + ".csv");
    write_text(p, raster_csv(w, k));
    written.push_back(p);
  }

  std::string pop = "row,col,age_group,count\n";
  for (std::size_t r = 0; r < w.rows(); ++r) {
    for (std::size_t c = 0; c < w.cols(); ++c) {
      for (std::size_t m = 0; m < kAgeGroups; ++m) {
        const double v = w.population(r, c, m);
        if (v == 0.0) continue;
        pop += std::to_string(r) + "," + std::to_string(c) + "," + std::string(kAgeGroupNames[m]) + "," +
               format_double(v) + "\n";
      }
    }
  }
  write_text(dir / "population.csv", pop);
  written.push_back(dir / "population.csv");

  std::string st = "id,row,col,city_id,pm25_ugm3\n";
  for (const auto& s : w.stations()) {
    st += s.id + "," + std::to_string(s.cell.row) + "," + std::to_string(s.cell.col) + "," + s.city_id + "," +
          format_double(s.pm25) + "\n";
  }
  write_text(dir / "stations.csv", st);
  written.push_back(dir / "stations.csv");

  std::string ci = "city_id,population\n";
  for (const auto& [id, p] : w.city_population()) ci += id + "," + format_double(p) + "\n";
  write_text(dir / "cities.csv", ci);
  written.push_back(dir / "cities.csv");
  return written;
}

inline World load_world(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw MissingFileError("world directory not found: " + dir.string());
  World w;
  bool first = true;
  for (Channel k : kAllChannels) {
    const auto path = dir / (std::string(channel_name(k)) + ".csv");
    const auto lines = read_lines(path);
    if (lines.size() < 3 || split_csv(lines[0]) != std::vector<std::string>{"rows", "cols", "cell_km"}) {
      throw SchemaError(path.string() + ": expected grid header 'rows,cols,cell_km'");
    }
    const auto dims = split_csv(lines[1]);
    if (dims.size() != 3) throw SchemaError(path.string() + ": malformed grid header values");
    const long rows = parse_long(dims[0], path.string());
    const long cols = parse_long(dims[1], path.string());
    const double cell_km = parse_double(dims[2], path.string());
    if (rows <= 0 || cols <= 0 || !(cell_km > 0)) throw SchemaError(path.string() + ": non-positive grid dimensions");
    if (first) {
      w = World(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols), cell_km);
      first = false;
    } else if (static_cast<std::size_t>(rows) != w.rows() || static_cast<std::size_t>(cols) != w.cols() ||
               cell_km != w.cell_km()) {
      throw SchemaError(path.string() + ": grid header differs from other rasters");
    }
    const auto data = read_csv(path, {"row", "col", "value"}, 2);
    if (data.size() != w.cells()) {
      throw SchemaError(path.string() + ": expected " + std::to_string(w.cells()) + " cells, got " +
                        std::to_string(data.size()));
    }
    std::vector<std::uint8_t> seen(w.cells(), 0);
    for (const auto& row : data) {
      const long r = parse_long(row[0], path.string());
      const long c = parse_long(row[1], path.string());
      detail::check_index(r, w.rows(), path.string() + " row");
      detail::check_index(c, w.cols(), path.string() + " col");
      auto& flag = seen[static_cast<std::size_t>(r) * w.cols() + static_cast<std::size_t>(c)];
      if (flag) throw SchemaError(path.string() + ": duplicate cell " + row[0] + "," + row[1]);
      flag = 1;
      w.value(k, static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = parse_double(row[2], path.string());
    }
  }

  const auto pop_path = dir / "population.csv";
  for (const auto& row : read_csv(pop_path, {"row", "col", "age_group", "count"})) {
    const long r = parse_long(row[0], pop_path.string());
    const long c = parse_long(row[1], pop_path.string());
    detail::check_index(r, w.rows(), pop_path.string() + " row");
    detail::check_index(c, w.cols(), pop_path.string() + " col");
    const auto m = parse_age_group(row[2]);
    if (!m) throw SchemaError(pop_path.string() + ": unknown age group '" + row[2] + "'");
    const double v = parse_double(row[3], pop_path.string());
    if (!(v >= 0)) throw SchemaError(pop_path.string() + ": negative population");
    w.population(static_cast<std::size_t>(r), static_cast<std::size_t>(c), *m) = v;
  }

  const auto st_path = dir / "stations.csv";
  for (const auto& row : read_csv(st_path, {"id", "row", "col", "city_id", "pm25_ugm3"})) {
    Station s;
    s.id = row[0];
    const long r = parse_long(row[1], st_path.string());
    const long c = parse_long(row[2], st_path.string());
    if (!w.contains(r, c)) throw DomainError("station '" + s.id + "' lies outside the grid");
    s.cell = {static_cast<std::size_t>(r), static_cast<std::size_t>(c)};
    s.city_id = row[3];
    s.pm25 = parse_double(row[4], st_path.string());
    w.stations().push_back(std::move(s));
  }

  const auto ci_path = dir / "cities.csv";
  for (const auto& row : read_csv(ci_path, {"city_id", "population"})) {
    w.city_population()[row[0]] = parse_double(row[1], ci_path.string());
  }
  w.validate();
  return w;
}

inline std::vector<RawMonitor> load_raw_monitors(const std::filesystem::path& path) {
  std::vector<RawMonitor> out;
  for (const auto& row : read_csv(path, {"id", "x_km", "y_km", "city_id", "pm25_ugm3"})) {
    out.push_back({row[0], parse_double(row[1], path.string()), parse_double(row[2], path.string()), row[3],
                   parse_double(row[4], path.string())});
  }
  return out;
}

}  // namespace cobenefit

#endif  // COBENEFIT_WORLD_IO_HPP
