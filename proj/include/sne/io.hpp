#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "sne/error.hpp"
#include "sne/geometry.hpp"

namespace sne {

namespace detail {

inline std::vector<Vec3> read_triplets(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<Vec3> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream fields(line);
    Vec3 v;
    std::string extra;
    if (!(fields >> v.x >> v.y >> v.z) || (fields >> extra))
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": expected 3 whitespace-separated numbers");
    if (!is_finite(v))
      throw DataError(path + ":" + std::to_string(line_no) + ": non-finite value");
    out.push_back(v);
  }
  if (in.bad()) throw IoError("read failure on '" + path + "'");
  return out;
}

// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline void write_triplets(const std::string& path, const std::vector<Vec3>& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  std::string line;
  for (const Vec3& v : values) {
    line = format_double(v.x);
    line += ' ';
    line += format_double(v.y);
    line += ' ';
    line += format_double(v.z);
    line += '\n';
    out << line;
  }
  if (!out) throw IoError("write failure on '" + path + "'");
}

}  // namespace detail

/// Reads an ASCII .xyz file and, optionally, its line-aligned .normals
/// companion. Normals are re-normalized on load.
inline PointCloud load_point_cloud(const std::string& path,
                                   const std::optional<std::string>& normals_path = std::nullopt) {
  PointCloud cloud;
  cloud.points = detail::read_triplets(path);
  const auto slash = path.find_last_of('/');
  cloud.name = slash == std::string::npos ? path : path.substr(slash + 1);
  if (cloud.points.empty()) throw DataError("'" + path + "' contains no points");
  if (normals_path) {
    auto normals = detail::read_triplets(*normals_path);
    if (normals.size() != cloud.points.size())
      throw DataError("'" + *normals_path + "' has " + std::to_string(normals.size()) +
                      " normals but '" + path + "' has " + std::to_string(cloud.points.size()) +
                      " points");
    for (std::size_t i = 0; i < normals.size(); ++i) {
      if (!(norm(normals[i]) > 0.0))
        throw DataError(*normals_path + ":" + std::to_string(i + 1) + ": zero-length normal");
      normals[i] = normalized(normals[i]);
    }
    cloud.normals = std::move(normals);
  }
  return cloud;
}

inline void save_points(const std::string& path, const std::vector<Vec3>& points) {
  detail::write_triplets(path, points);
}

inline void save_normals(const std::string& path, const std::vector<Vec3>& normals) {
  detail::write_triplets(path, normals);
}

}  // namespace sne
