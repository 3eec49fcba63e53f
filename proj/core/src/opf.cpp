#include "vvopt/opf.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

namespace vvopt {

std::string to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::softened: return "softened";
    case SolveStatus::infeasible: return "infeasible";
  }
  return "unknown";
}

SolveStatus solve_status_from_string(const std::string& s) {
  if (s == "optimal") return SolveStatus::optimal;
  if (s == "softened") return SolveStatus::softened;
  if (s == "infeasible") return SolveStatus::infeasible;
  throw std::invalid_argument("unknown solve status: " + s);
}

double objective_value(const Vec& q_gen, const Vec& q_load, const Mat& R) {
  if (q_gen.size() != R.rows() || q_load.size() != R.rows() || R.rows() != R.cols())
    throw std::invalid_argument("objective_value: dimension mismatch");
  return q_gen.dot(R * q_gen) - 2.0 * q_load.dot(R * q_gen);
}

Vec load_voltage_term(const OperatingCondition& oc, const SensitivityPair& s) {
  return s.R * (oc.p_gen - oc.p_load) - s.X * oc.q_load;
}

Vec constraint_values(const Vec& q_gen, const OperatingCondition& oc,
                      const SensitivityPair& s, VoltageBounds v_bounds) {
  const auto n = s.X.rows();
  if (q_gen.size() != n || oc.p_gen.size() != n || oc.p_load.size() != n ||
      oc.q_load.size() != n)
    throw std::invalid_argument("constraint_values: dimension mismatch");
  const Vec v = s.X * q_gen + load_voltage_term(oc, s);
  Vec g(2 * n);
  g.head(n) = v.array() - v_bounds.upper;
  g.tail(n) = v_bounds.lower - v.array();
  return g;
}

namespace {

Vec clamp_box(const Vec& q, const Vec& q_max) {
  return q.cwiseMin(q_max).cwiseMax(-q_max);
}

}  // namespace

LcqpSolver::LcqpSolver(const FeederModel& model, const SensitivityPair& s, SolverOptions opts)
    : opts_(opts), R_(s.R), X_(s.X), q_max_(model.q_limits()), vb_(model.v_bounds()) {
  if (opts_.tol <= 0.0) throw SolverError("tolerance must be positive");
  llt_.compute(R_);
  if (llt_.info() != Eigen::Success)
    throw SolverError("sensitivity matrix R is not positive definite");

  // Lipschitz constant of the dual gradient: the dual Hessian blocks are
  // +-A with A = X (2R)^-1 X', so a step of 1/(2 lmax(A)) is safe.
  const Mat A = 0.5 * X_ * llt_.solve(X_.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(A);
  const double lmax_dual = std::max(es.eigenvalues().maxCoeff(), 1e-300);
  dual_step_ = 1.0 / (2.0 * lmax_dual);

  Eigen::SelfAdjointEigenSolver<Mat> er(R_);
  grad_lipschitz_ = 2.0 * std::max(er.eigenvalues().maxCoeff(), 1e-300);
  Eigen::SelfAdjointEigenSolver<Mat> ex(Mat(X_.transpose() * X_));
  // Curvature bound of the quadratic violation penalty (both constraint
  // stacks), used for the softened-solve step size.
  grad_lipschitz_ += 4.0 * opts_.soft_penalty * std::max(ex.eigenvalues().maxCoeff(), 0.0);
}

// Minimize q' R q - 2 q_load' R q + linear' q over the reactive box.
// Starts at the unconstrained minimizer (exact when interior) and finishes
// with cyclic coordinate descent, each coordinate solved in closed form.
Vec LcqpSolver::solve_box_qp(const Vec& q_load, const Vec& linear, Vec q) const {
  const int n = static_cast<int>(q_load.size());
  const Vec rc = R_ * q_load;
  const Vec unconstrained = q_load - 0.5 * llt_.solve(linear);
  if (((unconstrained.array().abs() - q_max_.array()) <= 0.0).all()) return unconstrained;

  q = clamp_box(unconstrained, q_max_);
  const double inner_tol = 0.1 * opts_.tol;
  const int max_sweeps = 1000;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    for (int i = 0; i < n; ++i) {
      // grad_i = 2 R_i. q - 2 (R q_load)_i + linear_i; zero it wrt q_i.
      const double rest = R_.row(i).dot(q) - R_(i, i) * q(i);
      const double target = (rc(i) - 0.5 * linear(i) - rest) / R_(i, i);
      q(i) = std::clamp(target, -q_max_(i), q_max_(i));
    }
    const Vec grad = 2.0 * (R_ * q - rc) + linear;
    const double res = (q - clamp_box(q - grad, q_max_)).cwiseAbs().maxCoeff();
    if (res <= inner_tol) break;
  }
  return q;
}

OpfSolution LcqpSolver::solve(const OperatingCondition& oc) const {
  const int n = static_cast<int>(q_max_.size());
  if (oc.p_gen.size() != n || oc.p_load.size() != n || oc.q_load.size() != n)
    throw std::invalid_argument("solve: dimension mismatch");

  const Vec h = R_ * (oc.p_gen - oc.p_load) - X_ * oc.q_load;
  const Vec& c = oc.q_load;

  Vec mu = Vec::Zero(2 * n);  // [upper; lower] voltage multipliers
  Vec q = clamp_box(c, q_max_);
  long iters = 0;
  for (; iters < opts_.max_iterations; ++iters) {
    const Vec w = X_.transpose() * (mu.head(n) - mu.tail(n));
    q = solve_box_qp(c, w, q);

    const Vec v = X_ * q + h;
    Vec g(2 * n);
    g.head(n) = v.array() - vb_.upper;
    g.tail(n) = vb_.lower - v.array();

    const Vec grad = 2.0 * (R_ * (q - c)) + w;
    const double stat = (q - clamp_box(q - grad, q_max_)).cwiseAbs().maxCoeff();
    const double primal = std::max(0.0, g.maxCoeff());
    const double comp = mu.cwiseProduct(g).cwiseAbs().maxCoeff();
    const double kkt = std::max({stat, primal, comp});
    if (kkt <= opts_.tol) {
      OpfSolution sol;
      sol.q_gen = q;
      sol.objective = objective_value(q, c, R_);
      sol.kkt_residual = kkt;
      sol.status = SolveStatus::optimal;
      sol.slack_used = 0.0;
      sol.iterations = iters + 1;
      return sol;
    }
    mu = (mu + dual_step_ * g).cwiseMax(0.0);
  }
  // Dual ascent did not certify optimality within the cap: either the
  // voltage polytope misses the box or the instance is numerically hard.
  // The slack-penalized re-solve covers both, flagged as softened.
  return solve_softened(oc, h);
}

OpfSolution LcqpSolver::solve_softened(const OperatingCondition& oc, const Vec& h) const {
  const int n = static_cast<int>(q_max_.size());
  const Vec& c = oc.q_load;
  const double w_pen = opts_.soft_penalty;
  const double step = 1.0 / grad_lipschitz_;

  auto penalized_grad = [&](const Vec& q) {
    const Vec v = X_ * q + h;
    const Vec viol_u = (v.array() - vb_.upper).max(0.0).matrix();
    const Vec viol_l = (vb_.lower - v.array()).max(0.0).matrix();
    return Vec(2.0 * (R_ * (q - c)) + 2.0 * w_pen * (X_.transpose() * (viol_u - viol_l)));
  };

  // FISTA with gradient-mapping stopping; the penalized objective is smooth
  // and strongly convex, so this converges for any instance.
  Vec q = clamp_box(c, q_max_);
  Vec y = q;
  double t_accel = 1.0;
  double res = std::numeric_limits<double>::infinity();
  long iters = 0;
  const double soft_tol = 10.0 * opts_.tol;
  for (; iters < opts_.max_iterations; ++iters) {
    const Vec q_next = clamp_box(y - step * penalized_grad(y), q_max_);
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t_accel * t_accel));
    y = q_next + ((t_accel - 1.0) / t_next) * (q_next - q);
    // Restart momentum when it points uphill.
    if ((q_next - q).dot(penalized_grad(q_next)) > 0.0) {
      y = q_next;
      t_accel = 1.0;
    } else {
      t_accel = t_next;
    }
    q = q_next;
    res = (q - clamp_box(q - penalized_grad(q), q_max_)).cwiseAbs().maxCoeff();
    if (res <= soft_tol) break;
  }
  if (res > soft_tol)
    throw IterationCapError("softened LCQP did not converge within " +
                            std::to_string(opts_.max_iterations) +
                            " iterations (residual " + std::to_string(res) + ")");

  const Vec v = X_ * q + h;
  const double slack = (v.array() - vb_.upper).max(0.0).sum() + (vb_.lower - v.array()).max(0.0).sum();
  OpfSolution sol;
  sol.q_gen = q;
  sol.objective = objective_value(q, c, R_);
  sol.kkt_residual = res;
  sol.status = SolveStatus::softened;
  sol.slack_used = slack;
  sol.iterations = iters + 1;
  return sol;
}

OpfSolution solve_lcqp(const OperatingCondition& oc, const SensitivityPair& s,
                       const FeederModel& model, double tol) {
  SolverOptions opts;
  opts.tol = tol;
  return LcqpSolver(model, s, opts).solve(oc);
}

}  // namespace vvopt
