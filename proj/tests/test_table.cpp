#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "hanova/csv.hpp"
#include "hanova/margin.hpp"
#include "hanova/table.hpp"
#include "helpers.hpp"

using namespace hanova;
using namespace hanova::testing;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
  auto path = (std::filesystem::temp_directory_path() / name).string();
  std::ofstream f(path, std::ios::binary);
  f << content;
  return path;
}

}  // namespace

TEST_CASE("load_cells basic construction") {
  auto path = write_temp("cells_basic.csv", "A,B,y,n\na1,b1,2,3\na1,b2,0,1\n");
  SparseTable t = load_cells(path);
  CHECK(t.cell_count() == 2);
  CHECK(t.spec().level_count(0) == 1);
  CHECK(t.spec().level_count(1) == 2);
  CHECK(t.value(0) == 2.0);
  CHECK(t.weight(0) == 3.0);
}

TEST_CASE("load_cells merges duplicate indices as a weighted mean") {
  auto path = write_temp("cells_dup.csv", "A,y,n\nx,1,1\nx,3,1\n");
  SparseTable t = load_cells(path);
  CHECK(t.cell_count() == 1);
  CHECK(t.value(0) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(t.weight(0) == 2.0);
}

TEST_CASE("load_cells rejects bad input") {
  auto zero_w = write_temp("cells_zero.csv", "A,y,n\nx,1,0\n");
  CHECK_THROWS_WITH_AS(load_cells(zero_w), doctest::Contains("line 2"), ValidationError);

  auto empty = write_temp("cells_empty.csv", "");
  CHECK_THROWS_AS(load_cells(empty), ValidationError);

  auto header_only = write_temp("cells_header.csv", "A,y,n\n");
  CHECK_THROWS_AS(load_cells(header_only), ValidationError);

  auto bad_number = write_temp("cells_badnum.csv", "A,y,n\nx,1,2\nx2,zzz,1\n");
  CHECK_THROWS_WITH_AS(load_cells(bad_number), doctest::Contains("line 3"), ParseError);

  auto short_row = write_temp("cells_short.csv", "A,B,y,n\nx,1,2\n");
  CHECK_THROWS_AS(load_cells(short_row), ParseError);
}

TEST_CASE("cells are stored in lexicographic index order") {
  auto path = write_temp("cells_order.csv", "A,B,y,n\na2,b1,5,1\na1,b2,6,1\na1,b1,7,1\n");
  SparseTable t = load_cells(path);
  // labels discovered in first-appearance order: a2 -> 0, a1 -> 1
  CHECK(t.index(0).coords == std::vector<Level>{0, 0});
  CHECK(t.index(1).coords == std::vector<Level>{1, 0});
  CHECK(t.index(2).coords == std::vector<Level>{1, 1});
}

TEST_CASE("user-supplied spec fixes ordinals and retains unobserved levels") {
  FactorSpec spec;
  spec.names = {"A"};
  spec.levels = {{"a1", "a2", "a3"}};
  auto path = write_temp("cells_spec.csv", "A,y,n\na2,1,1\n");
  SparseTable t = load_cells(path, spec);
  CHECK(t.spec().level_count(0) == 3);
  CHECK(t.index(0).coords[0] == 1);

  auto unknown = write_temp("cells_spec_bad.csv", "A,y,n\nzz,1,1\n");
  CHECK_THROWS_AS(load_cells(unknown, spec), ValidationError);
}

TEST_CASE("cell CSV round-trips exactly") {
  SparseTable t = random_sparse_table({3, 4, 2}, 14, 99);
  auto path = (std::filesystem::temp_directory_path() / "cells_rt.csv").string();
  save_cells(t, path);
  SparseTable back = load_cells(path);
  REQUIRE(back.cell_count() == t.cell_count());
  for (std::size_t p = 0; p < t.cell_count(); ++p) {
    CHECK(back.value(p) == t.value(p));
    CHECK(back.weight(p) == t.weight(p));
  }
}

TEST_CASE("quoted labels survive the CSV round trip") {
  FactorSpec spec;
  spec.names = {"A"};
  spec.levels = {{"plain", "with,comma", "with \"quote\""}};
  std::vector<SparseTable::CellRow> rows;
  for (Level l = 0; l < 3; ++l) rows.push_back({CellIndex{{l}}, 0.5 * l, 1.0});
  SparseTable t = SparseTable::build(spec, rows);
  auto path = (std::filesystem::temp_directory_path() / "cells_quoted.csv").string();
  save_cells(t, path);
  SparseTable back = load_cells(path);
  CHECK(back.spec().levels[0] == spec.levels[0]);
}

TEST_CASE("weighted grand mean") {
  CHECK(weighted_grand_mean(make_table({2}, {{0, 2, 3}, {1, 0, 1}})) == doctest::Approx(1.5));
  CHECK(weighted_grand_mean(make_table({1}, {{0, 7, 5}})) == 7.0);
  // constant responses stay put under any weights
  SparseTable t = make_table({2, 2}, {{0, 0, 4.25, 3}, {0, 1, 4.25, 0.5}, {1, 1, 4.25, 9}});
  CHECK(weighted_grand_mean(t) == doctest::Approx(4.25).epsilon(1e-15));
}

TEST_CASE("margin_sum on a full 2x2 table") {
  SparseTable t =
      make_table({2, 2}, {{0, 0, 0, 1}, {0, 1, 0, 1}, {1, 0, 0, 1}, {1, 1, 0, 1}});
  std::vector<double> values = {1, 2, 3, 4};  // row-major
  auto sums = margin_sum(t, values, {0});
  REQUIRE(sums.size() == 2);
  CHECK(sums[MarginKey{{0}, {0}}] == 3.0);
  CHECK(sums[MarginKey{{0}, {1}}] == 7.0);
}

TEST_CASE("margin_sum over the full factor set is the identity") {
  SparseTable t = random_sparse_table({3, 3}, 6, 5);
  std::vector<double> values(t.cell_count());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<double>(i) + 0.5;
  auto sums = margin_sum(t, values, {0, 1});
  REQUIRE(sums.size() == t.cell_count());
  for (std::size_t p = 0; p < t.cell_count(); ++p) {
    MarginKey key{{0, 1}, {t.index(p).coords[0], t.index(p).coords[1]}};
    CHECK(sums[key] == values[p]);
  }
}

TEST_CASE("margin_sum over the empty subset is the global sum") {
  SparseTable t = random_sparse_table({3, 2, 2}, 7, 11);
  std::vector<double> values(t.cell_count(), 1.25);
  auto sums = margin_sum(t, values, {});
  REQUIRE(sums.size() == 1);
  CHECK(sums[MarginKey{{}, {}}] == doctest::Approx(1.25 * t.cell_count()).epsilon(1e-14));
}

TEST_CASE("margin_sum matches the exhaustive oracle") {
  SparseTable t = random_sparse_table({4, 3, 5}, 21, 42);
  std::mt19937_64 rng = make_rng(42, 1);
  std::normal_distribution<double> normal(0, 1);
  std::vector<double> values(t.cell_count());
  for (double& v : values) v = normal(rng);

  for (const auto& J : {std::vector<int>{0, 2}, {1}, {0, 1, 2}}) {
    auto got = margin_sum(t, values, J);
    auto want = brute_force_margin_sum(t, values, J);
    REQUIRE(got.size() == want.size());
    for (const auto& [key, val] : want)
      CHECK(got[key] == doctest::Approx(val).epsilon(1e-12));
  }
}

TEST_CASE("margin_sum length mismatch is rejected") {
  SparseTable t = random_sparse_table({2, 2}, 3, 1);
  std::vector<double> values(t.cell_count() + 1, 0.0);
  CHECK_THROWS_AS(margin_sum(t, values, {0}), ValidationError);
}

TEST_CASE("serial and parallel kernels agree bitwise") {
  SparseTable t = random_sparse_table({12, 9, 7}, 600, 3);
  std::mt19937_64 rng = make_rng(3, 2);
  std::normal_distribution<double> normal(0, 1);
  std::vector<double> values(t.cell_count());
  for (double& v : values) v = normal(rng);

  for (const auto& J : {std::vector<int>{0}, {1, 2}, {0, 1, 2}}) {
    MarginPlan plan = MarginPlan::build(t, J);
    std::vector<double> serial(plan.group_count()), parallel(plan.group_count());
    margin_group_sums_serial(plan, values, serial);
    margin_group_sums_parallel(plan, values, parallel);
    CHECK(serial == parallel);
  }
}

TEST_CASE("partitioned margin sums merge to the whole") {
  SparseTable t = random_sparse_table({5, 4, 3}, 40, 8);
  std::mt19937_64 rng = make_rng(8, 4);
  std::uniform_int_distribution<int> coin(0, 1);
  std::vector<double> values(t.cell_count());
  for (double& v : values) v = static_cast<double>(coin(rng) * 3 + 1);  // integer-valued: exact

  std::vector<double> part_a(values), part_b(values);
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (coin(rng))
      part_b[i] = 0;
    else
      part_a[i] = 0;
  }
  const std::vector<int> J = {0, 2};
  auto whole = margin_sum(t, values, J);
  auto a = margin_sum(t, part_a, J);
  auto b = margin_sum(t, part_b, J);
  for (const auto& [key, val] : whole) CHECK(val == a[key] + b[key]);
}
