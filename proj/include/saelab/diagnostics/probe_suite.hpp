#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "saelab/error.hpp"

// Probe-suite files:
//
//   # comment
//   [category name]
//   one sentence or term per line
//
// Blank lines and lines whose first non-blank character is '#' are ignored.
// Sentence lines are kept verbatim apart from a trailing '\r'.

namespace saelab {

struct ProbeCategory {
  std::string name;
  std::vector<std::string> items;
};

struct ProbeSuite {
  std::vector<ProbeCategory> categories;

  const ProbeCategory* find(const std::string& name) const {
    for (const auto& c : categories)
      if (c.name == name) return &c;
    return nullptr;
  }

  const ProbeCategory& at(const std::string& name) const {
    if (const auto* c = find(name)) return *c;
    throw Error(ErrorCode::suite, "suite has no category [" + name + "]");
  }

  std::vector<std::string> all_items() const {
    std::vector<std::string> out;
    for (const auto& c : categories) out.insert(out.end(), c.items.begin(), c.items.end());
    return out;
  }
};

inline ProbeSuite parse_suite(const std::string& text, const std::string& origin = "<suite>") {
  ProbeSuite suite;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    if (line[first] == '[') {
      const auto close = line.rfind(']');
      if (close == std::string::npos || close < first)
        throw Error(ErrorCode::suite, origin + ":" + std::to_string(n) + ": unterminated category header");
      const std::string name = line.substr(first + 1, close - first - 1);
      if (suite.find(name)) throw Error(ErrorCode::suite, origin + ":" + std::to_string(n) + ": duplicate category [" + name + "]");
      suite.categories.push_back(ProbeCategory{name, {}});
      continue;
    }
    if (suite.categories.empty())
      throw Error(ErrorCode::suite, origin + ":" + std::to_string(n) + ": entry before any [category] header");
    suite.categories.back().items.push_back(line);
  }
  return suite;
}

inline ProbeSuite load_suite(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot read suite " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_suite(buf.str(), path.string());
}

inline std::string format_suite(const ProbeSuite& suite) {
  std::string out;
  for (std::size_t i = 0; i < suite.categories.size(); ++i) {
    if (i) out += '\n';
    out += "[" + suite.categories[i].name + "]\n";
    for (const auto& item : suite.categories[i].items) out += item + "\n";
  }
  return out;
}

}  // namespace saelab
