#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace hanova {

// Thrown when inputs violate a documented precondition or invariant.
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown on malformed input files; the message carries the line number.
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

using Level = std::int32_t;

// Names and level labels of the factors spanning a multi-way layout.
struct FactorSpec {
  std::vector<std::string> names;
  std::vector<std::vector<std::string>> levels;  // per factor, ordinal order

  int factor_count() const { return static_cast<int>(names.size()); }
  int level_count(int f) const { return static_cast<int>(levels[f].size()); }
  std::vector<int> level_counts() const {
    std::vector<int> out(names.size());
    for (std::size_t f = 0; f < names.size(); ++f) out[f] = level_count(static_cast<int>(f));
    return out;
  }

  // Ordinal of `label` in factor f, or -1 if unknown.
  int find_level(int f, const std::string& label) const {
    const auto& ls = levels[f];
    for (std::size_t i = 0; i < ls.size(); ++i)
      if (ls[i] == label) return static_cast<int>(i);
    return -1;
  }

  void validate() const;
};

// Position of one cell: a level ordinal per factor.
struct CellIndex {
  std::vector<Level> coords;

  bool operator==(const CellIndex& o) const { return coords == o.coords; }
  bool operator<(const CellIndex& o) const { return coords < o.coords; }
};

// A margin: subset J of factor positions plus a level tuple over J.
struct MarginKey {
  std::vector<int> J;       // strictly increasing factor positions
  std::vector<Level> L;     // |L| == |J|

  bool operator==(const MarginKey& o) const { return J == o.J && L == o.L; }
  bool operator<(const MarginKey& o) const {
    if (J != o.J) return J < o.J;
    return L < o.L;
  }
};

// Enumerates all size-k subsets of {0,...,m-1} in lexicographic order.
std::vector<std::vector<int>> subsets_of_size(int m, int k);

}  // namespace hanova
