#include <random>

#include <gtest/gtest.h>

#include "evgrid/lp.hpp"

using namespace evgrid::lp;

namespace {

Row make_row(std::vector<int> idx, std::vector<double> val, double lo, double hi, RowClass cls = RowClass::Generic) {
  Row r;
  r.index = std::move(idx);
  r.value = std::move(val);
  r.lower = lo;
  r.upper = hi;
  r.cls = cls;
  return r;
}

}  // namespace

TEST(Lp, ZeroDemandIsOptimalAtZero) {
  LpProblem lp;
  const int a = lp.add_variable(1.0, 0.0, 10.0);
  const int b = lp.add_variable(2.0, 0.0, 10.0);
  lp.add_row(make_row({a, b}, {1.0, 1.0}, 0.0, 5.0));
  const auto sol = solve(lp);
  EXPECT_EQ(sol.status, Status::Optimal);
  EXPECT_DOUBLE_EQ(sol.objective, 0.0);
}

TEST(Lp, ClassicTwoVariableProblem) {
  // max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18 -> x = 2, y = 6, value 36.
  LpProblem lp;
  const int x = lp.add_variable(-3.0, 0.0, kInf);
  const int y = lp.add_variable(-5.0, 0.0, kInf);
  lp.add_row(make_row({x}, {1.0}, -kInf, 4.0));
  lp.add_row(make_row({y}, {2.0}, -kInf, 12.0));
  lp.add_row(make_row({x, y}, {3.0, 2.0}, -kInf, 18.0));
  const auto sol = solve(lp);
  ASSERT_EQ(sol.status, Status::Optimal);
  EXPECT_NEAR(sol.x[x], 2.0, 1e-9);
  EXPECT_NEAR(sol.x[y], 6.0, 1e-9);
  EXPECT_NEAR(sol.objective, -36.0, 1e-9);
}

TEST(Lp, NeedsPhaseOne) {
  // min x + y s.t. x + y >= 3, x - y == 1, 0 <= x,y <= 5 -> x = 2, y = 1.
  LpProblem lp;
  const int x = lp.add_variable(1.0, 0.0, 5.0);
  const int y = lp.add_variable(1.0, 0.0, 5.0);
  lp.add_row(make_row({x, y}, {1.0, 1.0}, 3.0, kInf));
  lp.add_row(make_row({x, y}, {1.0, -1.0}, 1.0, 1.0));
  const auto sol = solve(lp);
  ASSERT_EQ(sol.status, Status::Optimal);
  EXPECT_NEAR(sol.x[x], 2.0, 1e-9);
  EXPECT_NEAR(sol.x[y], 1.0, 1e-9);
  EXPECT_LE(sol.max_residual, 1e-9);
}

TEST(Lp, ReportsInfeasibleRowClass) {
  LpProblem lp;
  const int x = lp.add_variable(0.0, 0.0, 1.0);
  lp.add_row(make_row({x}, {1.0}, 2.0, kInf, RowClass::DepartureMinimum));
  const auto sol = solve(lp);
  EXPECT_EQ(sol.status, Status::Infeasible);
  ASSERT_TRUE(sol.violated_class.has_value());
  EXPECT_EQ(*sol.violated_class, RowClass::DepartureMinimum);
}

TEST(Lp, DetectsUnbounded) {
  LpProblem lp;
  const int x = lp.add_variable(-1.0, 0.0, kInf);
  lp.add_row(make_row({x}, {1.0}, 1.0, kInf));
  EXPECT_EQ(solve(lp).status, Status::Unbounded);
}

TEST(Lp, LazyRowsAreEnforced) {
  // max x + y with lazy rows x <= 1, y <= 2 over a box of 10.
  LpProblem lp;
  const int x = lp.add_variable(-1.0, 0.0, 10.0);
  const int y = lp.add_variable(-1.0, 0.0, 10.0);
  auto r1 = make_row({x}, {1.0}, -kInf, 1.0);
  r1.lazy = true;
  auto r2 = make_row({y}, {1.0}, -kInf, 2.0);
  r2.lazy = true;
  auto r3 = make_row({x, y}, {1.0, 1.0}, -kInf, 100.0);
  r3.lazy = true;
  lp.add_row(r1);
  lp.add_row(r2);
  lp.add_row(r3);
  const auto sol = solve(lp);
  ASSERT_EQ(sol.status, Status::Optimal);
  EXPECT_NEAR(sol.objective, -3.0, 1e-9);
  EXPECT_EQ(sol.lazy_rows_added, 2);
}

TEST(Lp, DegenerateProblemTerminates) {
  // Many redundant constraints through the same vertex.
  LpProblem lp;
  const int n = 6;
  std::vector<int> v;
  for (int j = 0; j < n; ++j) v.push_back(lp.add_variable(-1.0 - 0.01 * j, 0.0, kInf));
  for (int i = 0; i < 30; ++i) {
    std::vector<double> coef(n);
    for (int j = 0; j < n; ++j) coef[j] = 1.0 + ((i * 7 + j * 3) % 5) * 0.25;
    lp.add_row(make_row(v, coef, -kInf, 1.0));
  }
  const auto sol = solve(lp);
  ASSERT_EQ(sol.status, Status::Optimal);
  EXPECT_LE(sol.max_residual, 1e-9);
}

TEST(LpProperty, StartPointDoesNotChangeOptimum) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> pos(0.5, 3.0);
  for (int k = 0; k < 40; ++k) {
    LpProblem lp;
    const int n = 8;
    std::vector<int> v;
    for (int j = 0; j < n; ++j) v.push_back(lp.add_variable(u(rng), -pos(rng), pos(rng)));
    for (int i = 0; i < 6; ++i) {
      std::vector<double> coef;
      for (int j = 0; j < n; ++j) coef.push_back(u(rng));
      auto r = make_row(v, coef, -pos(rng), pos(rng));
      r.lazy = i % 2 == 1;
      lp.add_row(r);
    }
    const auto cold = solve(lp);
    ASSERT_EQ(cold.status, Status::Optimal);
    std::vector<double> start;
    for (int j = 0; j < n; ++j) start.push_back(5.0 * u(rng));  // partly outside the bounds
    const auto warm = solve(lp, {}, start);
    ASSERT_EQ(warm.status, Status::Optimal);
    EXPECT_NEAR(warm.objective, cold.objective, 1e-8 * std::max(1.0, std::abs(cold.objective)));
    EXPECT_LE(warm.max_residual, 1e-7);
    // Starting at the optimum needs no pivots beyond the lazy rows.
    EXPECT_NEAR(solve(lp, {}, cold.x).objective, cold.objective, 1e-9);
  }
}

TEST(Lp, StartPointSizeIsChecked) {
  LpProblem lp;
  lp.add_variable(1.0, 0.0, 1.0);
  const std::vector<double> start{0.0, 0.0};
  EXPECT_THROW(solve(lp, {}, start), std::invalid_argument);
}
