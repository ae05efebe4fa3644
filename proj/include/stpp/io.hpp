// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 stppmot contributors

#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "stpp/detections.hpp"
#include "stpp/metrics.hpp"

namespace stpp {

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_field_double(const std::string& s, const std::string& path,
                                 std::size_t lineno, std::size_t col) {
  double v;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  while (b < e && (*b == ' ' || *b == '\t')) ++b;
  auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc() || res.ptr != e)
    throw DataError(path + ":" + std::to_string(lineno) + ": column " +
                    std::to_string(col + 1) + ": not a number: '" + s + "'");
  return v;
}

}  // namespace detail

/// Parses MOTChallenge-style CSV lines:
///   frame,id,left,top,width,height,conf,x,y,z[,label[,a0,a1,...]]
/// id = -1 marks raw detections; the optional trailing columns carry the
/// simulator's label and appearance feature.
inline std::vector<Detection> parse_mot_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError(path + ": cannot open");
  std::vector<Detection> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f = detail::split_csv_line(line);
    if (f.size() < 7)
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": expected at least 7 comma-separated fields");
    Detection d;
    d.frame = static_cast<int>(detail::parse_field_double(f[0], path, lineno, 0));
    d.id = static_cast<int>(detail::parse_field_double(f[1], path, lineno, 1));
    d.box.left = detail::parse_field_double(f[2], path, lineno, 2);
    d.box.top = detail::parse_field_double(f[3], path, lineno, 3);
    d.box.width = detail::parse_field_double(f[4], path, lineno, 4);
    d.box.height = detail::parse_field_double(f[5], path, lineno, 5);
    d.conf = detail::parse_field_double(f[6], path, lineno, 6);
    if (d.box.width < 0 || d.box.height < 0)
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": negative box extents rejected");
    if (f.size() >= 11 && !f[10].empty()) d.label = label_from_name(f[10]);
    for (std::size_t i = 11; i < f.size(); ++i)
      d.appearance.push_back(detail::parse_field_double(f[i], path, lineno, i));
    out.push_back(std::move(d));
  }
  return out;
}

/// Writes detections in the same format; label and appearance columns are
/// emitted only when requested (raw MOT interchange omits them).
inline void write_mot_detections(std::ostream& os, std::span<const Detection> dets,
                                 bool with_extras = true) {
  for (const Detection& d : dets) {
    os << d.frame << ',' << d.id << ',' << format_double(d.box.left) << ','
       << format_double(d.box.top) << ',' << format_double(d.box.width) << ','
       << format_double(d.box.height) << ',' << format_double(d.conf)
       << ",-1,-1,-1";
    if (with_extras) {
      os << ',' << label_name(d.label);
      for (double a : d.appearance) os << ',' << format_double(a);
    }
    os << '\n';
  }
}

/// Groups parsed rows with nonnegative ids into id -> frame -> box.
inline TrajectorySet trajectories_from_rows(std::span<const Detection> rows) {
  TrajectorySet out;
  for (const Detection& d : rows) {
    if (d.id < 0)
      throw DataError("trajectory rows need nonnegative ids (got " +
                      std::to_string(d.id) + ")");
    out[d.id][d.frame] = d.box;
  }
  return out;
}

/// Plain-text key-value configuration: one `key = value` pair per line,
/// '#' starts a comment. Errors carry file, line and column.
inline std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError(path + ": cannot open");
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    std::size_t b = s.find_first_not_of(" \t");
    std::size_t e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(is, line)) {
    ++lineno;
    std::string body = line.substr(0, line.find('#'));
    if (trim(body).empty()) continue;
    std::size_t eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ":" +
                        std::to_string(body.size() + 1) + ": expected 'key = value'");
    std::string key = trim(body.substr(0, eq));
    std::string value = trim(body.substr(eq + 1));
    if (key.empty())
      throw ConfigError(path + ":" + std::to_string(lineno) + ":1: empty key");
    out[key] = value;
  }
  return out;
}

}  // namespace stpp
