#ifndef GRADMA_QP_HPP
#define GRADMA_QP_HPP

// Projection of a vector onto the cone { v : <v, M[j]> >= 0 for all j }.
//
//   min_v  1/2 ||v - p||^2   s.t.  M^T v >= 0
//
// is solved through its C-dimensional dual
//
//   min_z  1/2 z^T (M^T M) z + (M^T p)^T z   s.t.  z >= 0,
//
// and the primal is recovered as v = p + M z. C is the number of constraint
// columns and is tiny (3 on a worker, at most the memory size on the server),
// while d may be in the hundreds of thousands, so everything after the Gram
// products is O(C^2) or O(C^3).

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "gradma/types.hpp"

namespace gradma::qp {

template <typename Scalar>
struct QpInstance {
  Vector<Scalar> p;
  Matrix<Scalar> columns;  // d x C

  QpInstance() = default;
  QpInstance(Vector<Scalar> p_, Matrix<Scalar> columns_) : p(std::move(p_)), columns(std::move(columns_)) {
    if (columns.cols() > 0 && columns.rows() != p.size())
      throw StructuralError("qp: constraint columns do not match the dimension of p");
    if (columns.cols() == 0) columns.resize(p.size(), 0);
  }

  // Builds the instance from individually stored columns.
  static QpInstance from_columns(Vector<Scalar> p, const std::vector<Vector<Scalar>>& cols) {
    Matrix<Scalar> M(p.size(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) {
      if (cols[j].size() != p.size())
        throw StructuralError("qp: column " + std::to_string(j) + " has dimension " + std::to_string(cols[j].size()) +
                              ", expected " + std::to_string(p.size()));
      M.col(static_cast<Eigen::Index>(j)) = cols[j];
    }
    return QpInstance(std::move(p), std::move(M));
  }

  Eigen::Index dim() const { return p.size(); }
  Eigen::Index num_constraints() const { return columns.cols(); }
};

template <typename Scalar>
struct GramSystem {
  Matrix<Scalar> A;  // M^T M
  Vector<Scalar> b;  // M^T p
};

template <typename Scalar>
struct DualSolution {
  Vector<Scalar> z;
  Scalar kkt_residual = 0;
  int iterations = 0;
};

struct SolveOptions {
  double tol = 1e-8;
  int max_sweeps = -1;  // negative: 1000 * C
};

template <typename Scalar>
class NonConvergence : public std::runtime_error {
 public:
  explicit NonConvergence(DualSolution<Scalar> best)
      : std::runtime_error("qp: dual solver did not reach tolerance (residual " + std::to_string(best.kkt_residual) +
                           " after " + std::to_string(best.iterations) + " sweeps)"),
        best_(std::move(best)) {}

  const DualSolution<Scalar>& best() const { return best_; }

 private:
  DualSolution<Scalar> best_;
};

template <typename DerivedP, typename DerivedM>
GramSystem<typename DerivedP::Scalar> build_gram(const Eigen::MatrixBase<DerivedP>& p,
                                                  const Eigen::MatrixBase<DerivedM>& M) {
  using Scalar = typename DerivedP::Scalar;
  const Eigen::Index C = M.cols();
  if (C > 0 && M.rows() != p.size()) throw StructuralError("qp: constraint columns do not match the dimension of p");
  GramSystem<Scalar> sys;
  sys.A.resize(C, C);
  sys.b.resize(C);
  for (Eigen::Index i = 0; i < C; ++i) {
    sys.b(i) = M.col(i).dot(p);
    for (Eigen::Index j = i; j < C; ++j) {
      const Scalar a = M.col(i).dot(M.col(j));
      sys.A(i, j) = a;
      sys.A(j, i) = a;
    }
  }
  return sys;
}

template <typename Scalar>
GramSystem<Scalar> build_gram(const QpInstance<Scalar>& inst) {
  return build_gram(inst.p, inst.columns);
}

namespace detail {

// Largest projected coordinate step min(z_j, g_j / A_jj), relative to 1 + max z.
// Zero on exactly the KKT points of the dual; invariant under joint scaling of (A, b).
template <typename Scalar>
Scalar step_residual(const Matrix<Scalar>& A, const Vector<Scalar>& g, const Vector<Scalar>& z) {
  Scalar worst = 0;
  Scalar zmax = 0;
  for (Eigen::Index j = 0; j < z.size(); ++j) {
    zmax = std::max(zmax, z(j));
    if (A(j, j) <= 0) continue;
    worst = std::max(worst, std::abs(std::min(z(j), g(j) / A(j, j))));
  }
  return worst / (Scalar(1) + zmax);
}

// Re-solves the equality system on the current support. Coordinate descent
// identifies the support quickly but converges only linearly inside it.
template <typename Scalar>
std::optional<Vector<Scalar>> polish(const GramSystem<Scalar>& sys, const Vector<Scalar>& z) {
  std::vector<Eigen::Index> support;
  for (Eigen::Index j = 0; j < z.size(); ++j)
    if (z(j) > 0 && sys.A(j, j) > 0) support.push_back(j);

  Vector<Scalar> out = Vector<Scalar>::Zero(z.size());
  if (support.empty()) return out;

  const auto k = static_cast<Eigen::Index>(support.size());
  Matrix<Scalar> Ak(k, k);
  Vector<Scalar> bk(k);
  for (Eigen::Index r = 0; r < k; ++r) {
    bk(r) = -sys.b(support[r]);
    for (Eigen::Index c = 0; c < k; ++c) Ak(r, c) = sys.A(support[r], support[c]);
  }
  const Vector<Scalar> zk = Eigen::CompleteOrthogonalDecomposition<Matrix<Scalar>>(Ak).solve(bk);
  if (!zk.allFinite()) return std::nullopt;
  for (Eigen::Index r = 0; r < k; ++r) {
    if (zk(r) < 0) return std::nullopt;
    out(support[r]) = zk(r);
  }
  return out;
}

}  // namespace detail

template <typename Scalar>
Scalar kkt_residual(const GramSystem<Scalar>& sys, const Vector<Scalar>& z) {
  const Vector<Scalar> g = sys.A * z + sys.b;
  return detail::step_residual(sys.A, g, z);
}

// Cyclic coordinate descent on the dual, z_j <- max(0, z_j - (Az + b)_j / A_jj),
// with an exact re-solve on the support every few sweeps. Columns with A_jj = 0
// carry no constraint and keep z_j = 0. Throws NonConvergence with the best
// iterate when the sweep budget runs out.
template <typename Scalar>
DualSolution<Scalar> solve_dual(const GramSystem<Scalar>& sys, const SolveOptions& opts = {},
                                const Vector<Scalar>* warm_start = nullptr) {
  const Eigen::Index C = sys.b.size();
  if (sys.A.rows() != C || sys.A.cols() != C) throw StructuralError("qp: Gram matrix and b disagree in size");
  if (!(opts.tol > 0)) throw std::invalid_argument("qp: tolerance must be positive");

  DualSolution<Scalar> sol;
  sol.z = Vector<Scalar>::Zero(C);
  if (C == 0) return sol;

  if (warm_start != nullptr && warm_start->size() == C) sol.z = warm_start->cwiseMax(Scalar(0));
  for (Eigen::Index j = 0; j < C; ++j)
    if (sys.A(j, j) <= 0) sol.z(j) = 0;

  const Scalar tol = static_cast<Scalar>(opts.tol);
  const int max_sweeps = opts.max_sweeps >= 0 ? opts.max_sweeps : static_cast<int>(1000 * C);

  Vector<Scalar> g = sys.A * sol.z + sys.b;
  sol.kkt_residual = detail::step_residual(sys.A, g, sol.z);
  if (sol.kkt_residual <= tol) return sol;

  DualSolution<Scalar> best = sol;
  auto try_polish = [&](const Vector<Scalar>& z) -> std::optional<Vector<Scalar>> {
    auto cand = detail::polish(sys, z);
    if (!cand) return std::nullopt;
    if (kkt_residual(sys, *cand) > tol) return std::nullopt;
    return cand;
  };

  for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
    for (Eigen::Index j = 0; j < C; ++j) {
      const Scalar ajj = sys.A(j, j);
      if (ajj <= 0) continue;
      const Scalar next = std::max(Scalar(0), sol.z(j) - g(j) / ajj);
      const Scalar delta = next - sol.z(j);
      if (delta != 0) {
        sol.z(j) = next;
        g.noalias() += delta * sys.A.col(j);
      }
    }
    g.noalias() = sys.A * sol.z + sys.b;
    sol.kkt_residual = detail::step_residual(sys.A, g, sol.z);
    sol.iterations = sweep;
    if (sol.kkt_residual < best.kkt_residual) best = sol;

    const bool converged = sol.kkt_residual <= tol;
    if (converged || sweep % 10 == 0) {
      if (auto polished = try_polish(sol.z)) {
        sol.z = *polished;
        sol.kkt_residual = kkt_residual(sys, sol.z);
        return sol;
      }
    }
    if (converged) return sol;
  }
  best.iterations = max_sweeps;
  throw NonConvergence<Scalar>(std::move(best));
}

// v = p + M z
template <typename DerivedP, typename DerivedM, typename DerivedZ>
Vector<typename DerivedP::Scalar> recover_primal(const Eigen::MatrixBase<DerivedP>& p,
                                                 const Eigen::MatrixBase<DerivedM>& M,
                                                 const Eigen::MatrixBase<DerivedZ>& z) {
  Vector<typename DerivedP::Scalar> v = p;
  if (M.cols() > 0) v.noalias() += M * z;
  return v;
}

template <typename Scalar>
struct Correction {
  Vector<Scalar> corrected;
  DualSolution<Scalar> dual;
};

template <typename DerivedP, typename DerivedM>
Correction<typename DerivedP::Scalar> correct_with_dual(const Eigen::MatrixBase<DerivedP>& p,
                                                        const Eigen::MatrixBase<DerivedM>& M,
                                                        const SolveOptions& opts = {},
                                                        const Vector<typename DerivedP::Scalar>* warm_start = nullptr) {
  using Scalar = typename DerivedP::Scalar;
  Correction<Scalar> out;
  if (M.cols() == 0) {
    out.corrected = p;
    return out;
  }
  const auto sys = build_gram(p, M);
  out.dual = solve_dual(sys, opts, warm_start);
  out.corrected = recover_primal(p, M, out.dual.z);
  return out;
}

template <typename DerivedP, typename DerivedM>
Vector<typename DerivedP::Scalar> correct(const Eigen::MatrixBase<DerivedP>& p, const Eigen::MatrixBase<DerivedM>& M,
                                          const SolveOptions& opts = {}) {
  return correct_with_dual(p, M, opts).corrected;
}

template <typename Scalar>
Vector<Scalar> correct(const QpInstance<Scalar>& inst, const SolveOptions& opts = {}) {
  return correct(inst.p, inst.columns, opts);
}

inline constexpr int kOracleMaxConstraints = 12;

// Ground truth by enumeration of all 2^C active sets. Each candidate projects p
// onto the null space of the active columns by least squares on M itself (no
// Gram matrix, no iteration); the optimum is the closest candidate that is both
// primal and dual feasible.
template <typename DerivedP, typename DerivedM>
Vector<typename DerivedP::Scalar> oracle_solve(const Eigen::MatrixBase<DerivedP>& p,
                                               const Eigen::MatrixBase<DerivedM>& M) {
  using Scalar = typename DerivedP::Scalar;
  const Eigen::Index C = M.cols();
  if (C > kOracleMaxConstraints) throw std::domain_error("qp: oracle_solve refuses more than 12 constraints");
  if (C > 0 && M.rows() != p.size()) throw StructuralError("qp: constraint columns do not match the dimension of p");

  const Vector<Scalar> pv = p;
  const Scalar pnorm = pv.norm();
  const Scalar feas_tol = Scalar(1e-9);

  Vector<Scalar> best = pv;
  Scalar best_dist = std::numeric_limits<Scalar>::infinity();
  Scalar best_violation = std::numeric_limits<Scalar>::infinity();

  for (unsigned mask = 0; mask < (1u << C); ++mask) {
    std::vector<Eigen::Index> active;
    for (Eigen::Index j = 0; j < C; ++j)
      if (mask & (1u << j)) active.push_back(j);

    Vector<Scalar> cand = pv;
    Scalar violation = 0;
    if (!active.empty()) {
      Matrix<Scalar> Ms(pv.size(), static_cast<Eigen::Index>(active.size()));
      for (std::size_t k = 0; k < active.size(); ++k) Ms.col(static_cast<Eigen::Index>(k)) = M.col(active[k]);
      const Vector<Scalar> w = Eigen::CompleteOrthogonalDecomposition<Matrix<Scalar>>(Ms).solve(pv);
      cand = pv - Ms * w;
      // multipliers are z_S = -w
      for (Eigen::Index k = 0; k < w.size(); ++k) violation = std::max(violation, w(k) / (Scalar(1) + pnorm));
    }
    for (Eigen::Index j = 0; j < C; ++j) {
      const Scalar scale = Scalar(1) + cand.norm() * M.col(j).norm();
      violation = std::max(violation, -cand.dot(M.col(j)) / scale);
    }
    const Scalar dist = (cand - pv).norm();
    const bool ok = violation <= feas_tol;
    const bool best_ok = best_violation <= feas_tol;
    if ((ok && (!best_ok || dist < best_dist)) || (!ok && !best_ok && violation < best_violation)) {
      best = cand;
      best_dist = dist;
      best_violation = violation;
    }
  }
  return best;
}

template <typename Scalar>
Vector<Scalar> oracle_solve(const QpInstance<Scalar>& inst) {
  return oracle_solve(inst.p, inst.columns);
}

}  // namespace gradma::qp

#endif  // GRADMA_QP_HPP
