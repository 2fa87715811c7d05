#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "ris/assignment.hpp"

using ris::MatchResult;
using ris::ScoreMatrix;

namespace {

bool feasible(const MatchResult& r) {
  std::vector<int> col_used(r.cols, 0);
  for (int c : r.row_to_col) {
    if (c < 0) continue;
    if (c >= r.cols) return false;
    if (col_used[c]++) return false;
  }
  return true;
}

double assignment_sum(const ScoreMatrix& m, const MatchResult& r) {
  double s = 0;
  for (int i = 0; i < r.rows; ++i)
    if (r.row_to_col[i] >= 0) s += m.at(i, r.row_to_col[i]);
  return s;
}

}  // namespace

TEST_CASE("two-by-two example matches the enumerated optimum", "[assignment]") {
  // both permutations by hand: id -> 0.9 + 0.8 = 1.7, swap -> 0.1 + 0.2 = 0.3
  ScoreMatrix m(2, 2);
  m.at(0, 0) = 0.9;
  m.at(0, 1) = 0.1;
  m.at(1, 0) = 0.2;
  m.at(1, 1) = 0.8;
  auto r = ris::hungarian(m);
  REQUIRE(r.matched_sum == Catch::Approx(1.7).margin(1e-12));
  REQUIRE(r.row_to_col == std::vector<int>{0, 1});
}

TEST_CASE("single-entry matrix is matched", "[assignment]") {
  ScoreMatrix m(1, 1);
  m.at(0, 0) = 0.42;
  auto r = ris::hungarian(m);
  REQUIRE(r.row_to_col == std::vector<int>{0});
  REQUIRE(r.matched_sum == 0.42);
}

TEST_CASE("empty matrices are vacuous", "[assignment]") {
  auto r = ris::hungarian(ScoreMatrix(0, 3));
  REQUIRE(r.matched_sum == 0.0);
  REQUIRE(r.row_to_col.empty());

  auto b = ris::brute_force_match(ScoreMatrix(0, 0));
  REQUIRE(b.matched_sum == 0.0);
}

TEST_CASE("non-finite entries are rejected", "[assignment]") {
  ScoreMatrix m(1, 1);
  m.at(0, 0) = std::numeric_limits<double>::infinity();
  REQUIRE_THROWS_AS(ris::hungarian(m), std::invalid_argument);
}

TEST_CASE("brute force dimension cap", "[assignment]") {
  REQUIRE_THROWS_AS(ris::brute_force_match(ScoreMatrix(9, 2)),
                    std::invalid_argument);
}

TEST_CASE("hungarian equals brute force on random matrices", "[assignment]") {
  std::mt19937_64 rng(12345);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<int> dim(1, 7);
  for (int trial = 0; trial < 1500; ++trial) {
    ScoreMatrix m(dim(rng), dim(rng));
    for (auto& v : m.v) v = unif(rng);
    auto h = ris::hungarian(m);
    auto b = ris::brute_force_match(m);
    REQUIRE(feasible(h));
    REQUIRE(feasible(b));
    REQUIRE(std::abs(h.matched_sum - b.matched_sum) < 1e-12);
    REQUIRE(assignment_sum(m, h) == Catch::Approx(h.matched_sum).margin(1e-12));
  }
}

TEST_CASE("rectangular matrices leave the surplus side unmatched", "[assignment]") {
  ScoreMatrix m(3, 2);
  m.at(0, 0) = 0.9;
  m.at(0, 1) = 0.4;
  m.at(1, 0) = 0.3;
  m.at(1, 1) = 0.8;
  m.at(2, 0) = 0.5;
  m.at(2, 1) = 0.5;
  auto h = ris::hungarian(m);
  auto b = ris::brute_force_match(m);
  REQUIRE(h.matched_sum == Catch::Approx(b.matched_sum).margin(1e-12));
  int unmatched = 0;
  for (int c : h.row_to_col) unmatched += (c < 0);
  REQUIRE(unmatched == 1);
}

TEST_CASE("negative entries are never matched", "[assignment]") {
  ScoreMatrix m(2, 2);
  m.at(0, 0) = -1.0;
  m.at(0, 1) = 0.6;
  m.at(1, 0) = -0.2;
  m.at(1, 1) = -0.3;
  auto h = ris::hungarian(m);
  REQUIRE(h.matched_sum == Catch::Approx(0.6).margin(1e-12));
  REQUIRE(h.row_to_col[0] == 1);
  REQUIRE(h.row_to_col[1] == -1);
}
