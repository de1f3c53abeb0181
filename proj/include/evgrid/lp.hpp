#pragma once

// Bounded-variable revised primal simplex for the dispatch LPs.
//
//   minimize    c'x + offset
//   subject to  row_lower <= A x <= row_upper
//               lower <= x <= upper
//
// Each row i gets a logical variable r_i = a_i x carrying the row bounds, so
// the working system is [A -I](x, r) = 0 with bounds on every variable. The
// basis inverse is held densely and refactorized periodically; the problems
// here have a few hundred rows. Phase 1 minimizes the sum of infeasibilities
// of the current basis, so rows can be appended to a solved basis and the
// solve resumed (used for lazily enforced rows).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace evgrid::lp {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// What a row models; used for diagnostics and infeasibility reports.
enum class RowClass : std::uint8_t {
  Generic,
  SocBound,
  DepartureSoc,
  DepartureMinimum,
  InterimTarget,
  BandBalance,
  Transformer,
  LineCurrent,
  Voltage,
};

inline std::string_view to_string(RowClass c) {
  switch (c) {
    case RowClass::Generic: return "generic";
    case RowClass::SocBound: return "soc-bound";
    case RowClass::DepartureSoc: return "departure-soc";
    case RowClass::DepartureMinimum: return "departure-minimum";
    case RowClass::InterimTarget: return "interim-target";
    case RowClass::BandBalance: return "band-balance";
    case RowClass::Transformer: return "transformer";
    case RowClass::LineCurrent: return "line-current";
    case RowClass::Voltage: return "voltage";
  }
  return "unknown";
}

struct Row {
  std::vector<int> index;
  std::vector<double> value;
  double lower = -kInf;
  double upper = kInf;
  RowClass cls = RowClass::Generic;
  bool lazy = false;  // enforced only once violated by an intermediate optimum

  double activity(const std::vector<double>& x) const {
    double s = 0.0;
    for (std::size_t k = 0; k < index.size(); ++k) s += value[k] * x[index[k]];
    return s;
  }
};

class LpProblem {
public:
  int add_variable(double cost, double lower, double upper) {
    cost_.push_back(cost);
    lower_.push_back(lower);
    upper_.push_back(upper);
    return static_cast<int>(cost_.size()) - 1;
  }

  int add_row(Row row) {
    rows_.push_back(std::move(row));
    return static_cast<int>(rows_.size()) - 1;
  }

  int variable_count() const { return static_cast<int>(cost_.size()); }
  int row_count() const { return static_cast<int>(rows_.size()); }
  const std::vector<double>& cost() const { return cost_; }
  const std::vector<double>& lower() const { return lower_; }
  const std::vector<double>& upper() const { return upper_; }
  const std::vector<Row>& rows() const { return rows_; }
  std::vector<Row>& rows() { return rows_; }
  double& cost(int j) { return cost_[j]; }
  double& lower(int j) { return lower_[j]; }
  double& upper(int j) { return upper_[j]; }

  double offset = 0.0;

  double objective(const std::vector<double>& x) const {
    double v = offset;
    for (std::size_t j = 0; j < cost_.size(); ++j) v += cost_[j] * x[j];
    return v;
  }

  /// Largest bound violation of `x` over variables and rows, relative to max(1, |bound|).
  double max_violation(const std::vector<double>& x) const {
    double worst = 0.0;
    auto check = [&](double v, double lo, double hi) {
      if (v < lo) worst = std::max(worst, (lo - v) / std::max(1.0, std::abs(lo)));
      if (v > hi) worst = std::max(worst, (v - hi) / std::max(1.0, std::abs(hi)));
    };
    for (std::size_t j = 0; j < cost_.size(); ++j) check(x[j], lower_[j], upper_[j]);
    for (const auto& r : rows_) check(r.activity(x), r.lower, r.upper);
    return worst;
  }

private:
  std::vector<double> cost_, lower_, upper_;
  std::vector<Row> rows_;
};

enum class Status { Optimal, Infeasible, Unbounded, IterationLimit };

inline std::string_view to_string(Status s) {
  switch (s) {
    case Status::Optimal: return "optimal";
    case Status::Infeasible: return "infeasible";
    case Status::Unbounded: return "unbounded";
    case Status::IterationLimit: return "iteration-limit";
  }
  return "unknown";
}

struct SolveOptions {
  double feasibility_tol = 1e-9;
  double optimality_tol = 1e-9;
  double residual_tol = 1e-7;  // relative; reported, and lazy rows are added above it
  int max_iterations = 0;       // 0 selects a limit from the problem size
  int refactor_interval = 0;   // 0 selects max(100, rows)
  int degenerate_switch = 40;   // consecutive degenerate pivots before Bland's rule
};

struct Solution {
  Status status = Status::Infeasible;
  std::vector<double> x;
  double objective = 0.0;
  int iterations = 0;
  int lazy_rows_added = 0;
  int rows = 0;  // rows in the final working system
  double max_residual = 0.0;
  std::optional<RowClass> violated_class;  // set when infeasible
};

namespace detail {

enum class NonbasicAt : std::uint8_t { Lower, Upper, Zero, Basic };

class Simplex {
public:
  Simplex(const LpProblem& lp, const SolveOptions& opt, std::span<const double> start)
      : lp_(lp), opt_(opt), n_(lp.variable_count()) {
    cols_.resize(n_);
    lb_ = lp.lower();
    ub_ = lp.upper();
    cost_ = lp.cost();
    x_.assign(n_, 0.0);
    status_.assign(n_, NonbasicAt::Zero);
    for (int j = 0; j < n_; ++j) place_nonbasic(j, start.empty() ? 0.0 : start[static_cast<std::size_t>(j)]);
    active_.assign(lp.row_count(), false);
    for (int i = 0; i < lp.row_count(); ++i) {
      if (!lp.rows()[i].lazy) pending_.push_back(i);
    }
    add_pending_rows();
  }

  Solution run() {
    Solution sol;
    int limit = opt_.max_iterations;
    while (true) {
      if (limit <= 0) limit = 50 * (m() + n_) + 2000;
      const Status st = iterate(limit);
      if (st != Status::Optimal) {
        sol.status = st;
        break;
      }
      // Enforce any lazy row the current optimum violates, then resume.
      const auto x = structural();
      for (int i = 0; i < lp_.row_count(); ++i) {
        if (active_[i]) continue;
        const auto& r = lp_.rows()[i];
        const double a = r.activity(x);
        const double tol = opt_.residual_tol * 0.1;
        if (a < r.lower - tol * std::max(1.0, std::abs(r.lower)) ||
            a > r.upper + tol * std::max(1.0, std::abs(r.upper))) {
          pending_.push_back(i);
        }
      }
      if (pending_.empty()) {
        sol.status = Status::Optimal;
        break;
      }
      sol.lazy_rows_added += static_cast<int>(pending_.size());
      add_pending_rows();
    }
    sol.x = structural();
    sol.iterations = iterations_;
    sol.rows = m();
    sol.objective = lp_.objective(sol.x);
    sol.max_residual = lp_.max_violation(sol.x);
    if (sol.status == Status::Infeasible) sol.violated_class = infeasible_class_;
    return sol;
  }

private:
  int m() const { return static_cast<int>(row_of_.size()); }
  int total() const { return n_ + m(); }

  std::vector<double> structural() const { return {x_.begin(), x_.begin() + n_}; }

  // Nonbasic at `value` when it lies within the bounds, otherwise at the nearer bound.
  void place_nonbasic(int j, double value) {
    const double lo = lb_[j];
    const double hi = ub_[j];
    if (lo <= value && value <= hi) {
      x_[j] = value;
      status_[j] = lo == value ? NonbasicAt::Lower : (hi == value ? NonbasicAt::Upper : NonbasicAt::Zero);
    } else if (lo > value) {
      x_[j] = lo;
      status_[j] = NonbasicAt::Lower;
    } else {
      x_[j] = hi;
      status_[j] = NonbasicAt::Upper;
    }
  }

  // Appends pending problem rows with their logicals basic; extends the inverse in place.
  void add_pending_rows() {
    if (pending_.empty()) return;
    const int old_m = m();
    const int add = static_cast<int>(pending_.size());
    const int new_m = old_m + add;
    Eigen::MatrixXd binv = Eigen::MatrixXd::Zero(new_m, new_m);
    if (old_m > 0) binv.topLeftCorner(old_m, old_m) = binv_;
    for (int k = 0; k < add; ++k) {
      const int pr = pending_[k];
      const int pos = old_m + k;
      const auto& row = lp_.rows()[pr];
      active_[pr] = true;
      row_of_.push_back(pr);
      for (std::size_t e = 0; e < row.index.size(); ++e) cols_[row.index[e]].push_back({pos, row.value[e]});
      const int logical = n_ + pos;
      lb_.push_back(row.lower);
      ub_.push_back(row.upper);
      cost_.push_back(0.0);
      x_.push_back(row.activity(x_));
      status_.push_back(NonbasicAt::Basic);
      basis_.push_back(logical);
      // New block row of B is [a_B, -1]; its inverse row is [a_B * B^-1, -1].
      if (old_m > 0) {
        Eigen::RowVectorXd ab = Eigen::RowVectorXd::Zero(old_m);
        for (std::size_t e = 0; e < row.index.size(); ++e) {
          const int j = row.index[e];
          if (status_[j] == NonbasicAt::Basic) ab(basis_pos_[j]) += row.value[e];
        }
        binv.block(pos, 0, 1, old_m) = ab * binv_;
      }
      binv(pos, pos) = -1.0;
    }
    basis_pos_.resize(total(), -1);
    for (int k = 0; k < add; ++k) basis_pos_[n_ + old_m + k] = old_m + k;
    binv_ = std::move(binv);
    pending_.clear();
    since_refactor_ = 0;
  }

  // Column of [A -I] for variable j, as dense vector of length m.
  void column(int j, Eigen::VectorXd& out) const {
    out.setZero(m());
    if (j < n_) {
      for (const auto& [pos, v] : cols_[j]) out(pos) = v;
    } else {
      out(j - n_) = -1.0;
    }
  }

  void refactor() {
    const int mm = m();
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(mm, mm);
    Eigen::VectorXd col;
    for (int i = 0; i < mm; ++i) {
      column(basis_[i], col);
      b.col(i) = col;
    }
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(b);
    binv_ = lu.inverse();
    // Recompute basic values from B x_B = -N x_N.
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(mm);
    for (int j = 0; j < total(); ++j) {
      if (status_[j] == NonbasicAt::Basic || x_[j] == 0.0) continue;
      if (j < n_) {
        for (const auto& [pos, v] : cols_[j]) rhs(pos) -= v * x_[j];
      } else {
        rhs(j - n_) += x_[j];
      }
    }
    const Eigen::VectorXd xb = binv_ * rhs;
    for (int i = 0; i < mm; ++i) x_[basis_[i]] = xb(i);
    since_refactor_ = 0;
    duals_current_ = false;
  }

  double infeasibility(int j) const {
    const double tol = opt_.feasibility_tol;
    if (x_[j] < lb_[j] - tol * std::max(1.0, std::abs(lb_[j]))) return lb_[j] - x_[j];
    if (x_[j] > ub_[j] + tol * std::max(1.0, std::abs(ub_[j]))) return x_[j] - ub_[j];
    return 0.0;
  }

  Status iterate(int limit) {
    const int mm = m();
    Eigen::VectorXd cb(mm), y(mm), alpha(mm);
    int degenerate = 0;
    bool bland = false;
    int local = 0;
    const int refactor_every = opt_.refactor_interval > 0 ? opt_.refactor_interval : std::max(100, mm);
    while (true) {
      if (local++ >= limit) return Status::IterationLimit;
      if (since_refactor_ >= refactor_every) refactor();

      // Phase selection by the current basic infeasibilities.
      bool phase1 = false;
      for (int i = 0; i < mm; ++i) {
        const int v = basis_[i];
        const double tol = opt_.feasibility_tol;
        if (x_[v] < lb_[v] - tol * std::max(1.0, std::abs(lb_[v]))) {
          cb(i) = -1.0;
          phase1 = true;
        } else if (x_[v] > ub_[v] + tol * std::max(1.0, std::abs(ub_[v]))) {
          cb(i) = 1.0;
          phase1 = true;
        } else {
          cb(i) = 0.0;
        }
      }
      if (!phase1) {
        for (int i = 0; i < mm; ++i) cb(i) = cost_[basis_[i]];
      }
      // Phase-2 duals are updated in place after each pivot; recompute otherwise.
      if (phase1) {
        y.setZero();
        for (int i = 0; i < mm; ++i) {
          if (cb(i) != 0.0) y.noalias() += cb(i) * binv_.row(i).transpose();
        }
      } else if (!duals_current_) {
        y.noalias() = binv_.transpose() * cb;
      }
      duals_current_ = !phase1;

      // Pricing.
      int enter = -1;
      double best = 0.0;
      double enter_d = 0.0;
      for (int j = 0; j < total(); ++j) {
        const NonbasicAt s = status_[j];
        if (s == NonbasicAt::Basic) continue;
        if (lb_[j] == ub_[j]) continue;
        double d = phase1 ? 0.0 : cost_[j];
        if (j < n_) {
          for (const auto& [pos, v] : cols_[j]) d -= y(pos) * v;
        } else {
          d += y(j - n_);
        }
        const double tol = opt_.optimality_tol;
        bool eligible = false;
        if (s == NonbasicAt::Lower) eligible = d < -tol;
        else if (s == NonbasicAt::Upper) eligible = d > tol;
        else eligible = std::abs(d) > tol;
        if (!eligible) continue;
        if (bland) {
          enter = j;
          enter_d = d;
          break;
        }
        if (std::abs(d) > best) {
          best = std::abs(d);
          enter = j;
          enter_d = d;
        }
      }
      if (enter < 0) {
        if (!phase1) return Status::Optimal;
        infeasible_class_ = RowClass::Generic;
        for (int i = 0; i < mm; ++i) {
          const int v = basis_[i];
          if (v >= n_ && infeasibility(v) > 0.0) {
            infeasible_class_ = lp_.rows()[row_of_[v - n_]].cls;
            break;
          }
        }
        return Status::Infeasible;
      }

      const double dir = enter_d < 0.0 ? 1.0 : -1.0;
      if (enter < n_) {
        alpha.setZero(mm);
        for (const auto& [pos, v] : cols_[enter]) alpha.noalias() += v * binv_.col(pos);
      } else {
        alpha = -binv_.col(enter - n_);
      }

      // Harris two-pass ratio test. Basic i changes at rate -dir * alpha_i.
      const double ptol = 1e-9;
      const double ftol = opt_.feasibility_tol;
      double theta_max = kInf;
      auto limit_for = [&](int i, double slack_tol, double& t) -> bool {
        const double a = alpha(i);
        if (std::abs(a) <= ptol) return false;
        const double rate = -dir * a;
        const int v = basis_[i];
        const double xv = x_[v];
        const double lo = lb_[v];
        const double hi = ub_[v];
        const double lo_tol = slack_tol * std::max(1.0, std::abs(lo));
        const double hi_tol = slack_tol * std::max(1.0, std::abs(hi));
        if (rate < 0.0) {
          if (xv > hi + ftol * std::max(1.0, std::abs(hi))) {
            t = (xv - hi + hi_tol) / -rate;  // infeasible above, stop once feasible
          } else if (lo > -kInf && xv >= lo - ftol * std::max(1.0, std::abs(lo))) {
            t = (xv - lo + lo_tol) / -rate;
          } else {
            return false;
          }
        } else {
          if (xv < lo - ftol * std::max(1.0, std::abs(lo))) {
            t = (lo - xv + lo_tol) / rate;
          } else if (hi < kInf && xv <= hi + ftol * std::max(1.0, std::abs(hi))) {
            t = (hi - xv + hi_tol) / rate;
          } else {
            return false;
          }
        }
        return true;
      };
      for (int i = 0; i < mm; ++i) {
        double t;
        if (limit_for(i, ftol, t)) theta_max = std::min(theta_max, t);
      }
      int leave = -1;
      double theta = kInf;
      if (theta_max < kInf) {
        double best_pivot = 0.0;
        for (int i = 0; i < mm; ++i) {
          double t;
          if (!limit_for(i, 0.0, t)) continue;
          if (t <= theta_max && std::abs(alpha(i)) > best_pivot) {
            best_pivot = std::abs(alpha(i));
            leave = i;
            theta = std::max(t, 0.0);
          }
        }
      }
      // The entering variable may reach its own opposite bound first.
      double span = kInf;
      if (dir > 0.0 && ub_[enter] < kInf) span = ub_[enter] - x_[enter];
      if (dir < 0.0 && lb_[enter] > -kInf) span = x_[enter] - lb_[enter];
      if (span <= theta) {
        if (span == kInf) return phase1 ? Status::Infeasible : Status::Unbounded;
        theta = span;
        leave = -1;
      } else if (leave < 0) {
        return phase1 ? Status::Infeasible : Status::Unbounded;
      }

      ++iterations_;
      if (theta <= 1e-12) {
        if (++degenerate >= opt_.degenerate_switch) bland = true;
      } else {
        degenerate = 0;
        bland = false;
      }

      for (int i = 0; i < mm; ++i) x_[basis_[i]] -= dir * theta * alpha(i);
      x_[enter] += dir * theta;

      if (leave < 0) {
        status_[enter] = dir > 0.0 ? NonbasicAt::Upper : NonbasicAt::Lower;
        x_[enter] = dir > 0.0 ? ub_[enter] : lb_[enter];
        continue;
      }

      const int out = basis_[leave];
      const double rate = -dir * alpha(leave);
      // Leaves at the bound it was heading to.
      if (rate < 0.0) {
        const bool was_above = x_[out] + theta * -rate > ub_[out] + ftol * std::max(1.0, std::abs(ub_[out]));
        if (was_above) {
          x_[out] = ub_[out];
          status_[out] = NonbasicAt::Upper;
        } else {
          x_[out] = lb_[out];
          status_[out] = NonbasicAt::Lower;
        }
      } else {
        const bool was_below = x_[out] - theta * rate < lb_[out] - ftol * std::max(1.0, std::abs(lb_[out]));
        if (was_below) {
          x_[out] = lb_[out];
          status_[out] = NonbasicAt::Lower;
        } else {
          x_[out] = ub_[out];
          status_[out] = NonbasicAt::Upper;
        }
      }
      basis_pos_[out] = -1;
      basis_[leave] = enter;
      basis_pos_[enter] = leave;
      status_[enter] = NonbasicAt::Basic;

      // Product-form update of the explicit inverse, skipping the zeros of
      // the entering column and the pivot row.
      const Eigen::RowVectorXd pivot_row = binv_.row(leave) / alpha(leave);
      if (duals_current_) y.noalias() += enter_d * pivot_row.transpose();
      alpha(leave) = 0.0;
      nz_.clear();
      for (int i = 0; i < mm; ++i) {
        if (alpha(i) != 0.0) nz_.push_back(i);
      }
      for (int c = 0; c < mm; ++c) {
        const double r = pivot_row(c);
        if (r == 0.0) continue;
        double* col = binv_.col(c).data();
        for (int i : nz_) col[i] -= alpha(i) * r;
      }
      binv_.row(leave) = pivot_row;
      ++since_refactor_;
    }
  }

  const LpProblem& lp_;
  SolveOptions opt_;
  int n_;
  std::vector<std::vector<std::pair<int, double>>> cols_;
  std::vector<double> lb_, ub_, cost_, x_;
  std::vector<NonbasicAt> status_;
  std::vector<int> basis_;      // variable at each basis position
  std::vector<int> basis_pos_;  // basis position of each variable, -1 if nonbasic
  std::vector<int> row_of_;     // problem row at each working row
  std::vector<bool> active_;
  std::vector<int> pending_;
  Eigen::MatrixXd binv_;
  int since_refactor_ = 0;
  bool duals_current_ = false;
  std::vector<int> nz_;  // scratch: nonzero positions of the entering column
  int iterations_ = 0;
  RowClass infeasible_class_ = RowClass::Generic;
};

}  // namespace detail

/// Solves `lp`. Lazy rows are added only when an intermediate optimum violates
/// them; the returned optimum satisfies every row. A non-empty `start` gives
/// initial values for the structural variables (warm start).
inline Solution solve(const LpProblem& lp, const SolveOptions& opt = {}, std::span<const double> start = {}) {
  if (!start.empty() && static_cast<int>(start.size()) != lp.variable_count()) {
    throw std::invalid_argument("start point size does not match the variable count");
  }
  for (int j = 0; j < lp.variable_count(); ++j) {
    if (lp.lower()[j] > lp.upper()[j]) {
      Solution s;
      s.status = Status::Infeasible;
      s.x.assign(lp.variable_count(), 0.0);
      return s;
    }
  }
  detail::Simplex simplex(lp, opt, start);
  return simplex.run();
}

}  // namespace evgrid::lp
