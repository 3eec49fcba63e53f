#pragma once

#include "vvopt/feeder.hpp"

#include <Eigen/Cholesky>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace vvopt {

/// System-wide input of one dispatch instance: per-bus active PV output,
/// active load and reactive load, all per-unit in bus order.
struct OperatingCondition {
  Vec p_gen;
  Vec p_load;
  Vec q_load;
  long timestamp = 0;

  /// Net active injection p = p_gen - p_load.
  Vec net_active() const { return p_gen - p_load; }
};

enum class SolveStatus { optimal, softened, infeasible };

std::string to_string(SolveStatus s);
SolveStatus solve_status_from_string(const std::string& s);

struct OpfSolution {
  Vec q_gen;
  double objective = 0.0;
  double kkt_residual = 0.0;
  SolveStatus status = SolveStatus::optimal;
  double slack_used = 0.0;
  long iterations = 0;
};

class SolverError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};
class IterationCapError : public SolverError {
public:
  using SolverError::SolverError;
};

/// Ohmic-loss dispatch cost (q^g)' R q^g - 2 (q^c)' R q^g.
double objective_value(const Vec& q_gen, const Vec& q_load, const Mat& R);

/// Load-driven part of the voltage deviation, h(y) = R (p^g - p^c) - X q^c.
Vec load_voltage_term(const OperatingCondition& oc, const SensitivityPair& s);

/// Stacked voltage constraints g(q^g) = [X q^g + h - v_upper; -X q^g - h + v_lower].
/// Entries <= 0 mean satisfied.
Vec constraint_values(const Vec& q_gen, const OperatingCondition& oc,
                      const SensitivityPair& s, VoltageBounds v_bounds);

struct SolverOptions {
  double tol = 1e-6;
  long max_iterations = 50000;
  /// Quadratic penalty weight applied to per-unit voltage violations when the
  /// constraint polytope is empty inside the reactive box.
  double soft_penalty = 1e4;
};

/**
 * Dispatch solver for the box- and voltage-constrained quadratic program
 *
 *   min  (q)' R q - 2 (q^c)' R q
 *   s.t. |q_n| <= q_max_n,  v_lower <= X q + h(y) <= v_upper.
 *
 * Method: dual ascent on the voltage-constraint multipliers with an exact
 * inner box-QP solve (Cholesky start + cyclic coordinate descent).  The box
 * projection is closed form; voltage constraints are few and mostly inactive.
 * If the voltage polytope does not intersect the box, the solve is repeated
 * with quadratically penalized violation slack and reported as `softened`.
 *
 * KKT residual reported is the max of
 *   - box-projected stationarity  || q - clip(q - grad L) ||_inf,
 *     which equals || 2R(q - q^c) + X'(mu_u - mu_l) + box duals ||_inf,
 *   - primal feasibility          max(0, g(q)),
 *   - complementary slackness     max_i |mu_i g_i(q)|.
 *
 * Factorizations are cached per feeder; `solve` is const and thread-safe.
 */
class LcqpSolver {
public:
  LcqpSolver(const FeederModel& model, const SensitivityPair& s, SolverOptions opts = {});

  OpfSolution solve(const OperatingCondition& oc) const;

  const SolverOptions& options() const { return opts_; }

private:
  Vec solve_box_qp(const Vec& q_load, const Vec& linear, Vec q0) const;
  OpfSolution solve_softened(const OperatingCondition& oc, const Vec& h) const;

  SolverOptions opts_;
  Mat R_;
  Mat X_;
  Vec q_max_;
  VoltageBounds vb_;
  Eigen::LLT<Mat> llt_;
  double dual_step_ = 0.0;
  double grad_lipschitz_ = 0.0;
};

/// One-shot convenience wrapper around LcqpSolver.
OpfSolution solve_lcqp(const OperatingCondition& oc, const SensitivityPair& s,
                       const FeederModel& model, double tol = 1e-6);

}  // namespace vvopt
