#pragma once

#include <fstream>
#include <sstream>
#include <string>

#ifndef DAICL_FIXTURES
#error "DAICL_FIXTURES must point at tests/fixtures"
#endif

namespace daicl::testing {

inline std::string fixture(const std::string& name) { return std::string(DAICL_FIXTURES) + "/" + name; }

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace daicl::testing
