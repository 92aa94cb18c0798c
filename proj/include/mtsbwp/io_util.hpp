#pragma once

#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

namespace mtsbwp {

// Fixed "%.12g" rendering so that repeated runs emit byte-identical files.
inline std::string fmt_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace mtsbwp
