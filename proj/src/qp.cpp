#include "daymarket/qp.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <vector>

namespace daymarket {

namespace {

using Eigen::SparseMatrix;
using Eigen::VectorXd;
using Triplet = Eigen::Triplet<double>;

constexpr double kInf = std::numeric_limits<double>::infinity();

bool is_finite(double v) { return std::isfinite(v); }

// Folded/scaled working problem. Bounds are folded into inequality rows and
// pinned variables (lower == upper) into equality rows so the interior-point
// iteration only ever sees  A x = b,  G x <= h.
struct Working {
  int n = 0;
  SparseMatrix<double> Q, A, G;
  VectorXd c, b, h;

  // Scaling: x = D xs;  original duals = E * scaled duals / cost_scale.
  VectorXd D;        // n
  VectorXd E_eq;     // rows of A
  VectorXd E_in;     // rows of G
  double cost_scale = 1.0;

  // Row provenance for dual extraction.
  int user_eq = 0;  // leading rows of A are the user's equality rows
  int user_in = 0;  // leading rows of G are the user's inequality rows
  std::vector<int> pin_var;           // variable pinned by equality row user_eq+i
  std::vector<int> bound_var;         // variable for G row user_in+i
  std::vector<bool> bound_is_upper;   // kind of that bound row
};

void append_rows(std::vector<Triplet>& trips, const SparseMatrix<double>& M,
                 int row_offset) {
  for (int k = 0; k < M.outerSize(); ++k)
    for (SparseMatrix<double>::InnerIterator it(M, k); it; ++it)
      trips.emplace_back(row_offset + static_cast<int>(it.row()),
                         static_cast<int>(it.col()), it.value());
}

Working fold(const QpProblem& p) {
  Working w;
  w.n = p.num_vars();
  const int me_user = static_cast<int>(p.b_eq.size());
  const int mi_user = static_cast<int>(p.h_ineq.size());
  w.user_eq = me_user;
  w.user_in = mi_user;

  for (int j = 0; j < w.n; ++j) {
    const double lo = p.lower.size() ? p.lower[j] : -kInf;
    const double up = p.upper.size() ? p.upper[j] : kInf;
    if (is_finite(lo) && is_finite(up) && lo == up) {
      w.pin_var.push_back(j);
    } else {
      if (is_finite(up)) {
        w.bound_var.push_back(j);
        w.bound_is_upper.push_back(true);
      }
      if (is_finite(lo)) {
        w.bound_var.push_back(j);
        w.bound_is_upper.push_back(false);
      }
    }
  }

  const int me = me_user + static_cast<int>(w.pin_var.size());
  const int mi = mi_user + static_cast<int>(w.bound_var.size());

  w.Q = p.Q;
  w.c = p.c;

  std::vector<Triplet> ta;
  ta.reserve(p.A_eq.nonZeros() + w.pin_var.size());
  append_rows(ta, p.A_eq, 0);
  w.b.resize(me);
  w.b.head(me_user) = p.b_eq;
  for (size_t i = 0; i < w.pin_var.size(); ++i) {
    ta.emplace_back(me_user + static_cast<int>(i), w.pin_var[i], 1.0);
    w.b[me_user + static_cast<int>(i)] = p.lower[w.pin_var[i]];
  }
  w.A.resize(me, w.n);
  w.A.setFromTriplets(ta.begin(), ta.end());

  std::vector<Triplet> tg;
  tg.reserve(p.G_ineq.nonZeros() + w.bound_var.size());
  append_rows(tg, p.G_ineq, 0);
  w.h.resize(mi);
  w.h.head(mi_user) = p.h_ineq;
  for (size_t i = 0; i < w.bound_var.size(); ++i) {
    const int r = mi_user + static_cast<int>(i);
    const int j = w.bound_var[i];
    if (w.bound_is_upper[i]) {
      tg.emplace_back(r, j, 1.0);
      w.h[r] = p.upper[j];
    } else {
      tg.emplace_back(r, j, -1.0);
      w.h[r] = -p.lower[j];
    }
  }
  w.G.resize(mi, w.n);
  w.G.setFromTriplets(tg.begin(), tg.end());

  w.D = VectorXd::Ones(w.n);
  w.E_eq = VectorXd::Ones(me);
  w.E_in = VectorXd::Ones(mi);
  return w;
}

// Modified Ruiz equilibration of the KKT data followed by cost scaling.
void equilibrate(Working& w) {
  const int n = w.n;
  const int me = static_cast<int>(w.b.size());
  const int mi = static_cast<int>(w.h.size());

  VectorXd d = VectorXd::Ones(n + me + mi);
  VectorXd norms(n + me + mi);
  for (int pass = 0; pass < 10; ++pass) {
    norms.setZero();
    for (int k = 0; k < w.Q.outerSize(); ++k)
      for (SparseMatrix<double>::InnerIterator it(w.Q, k); it; ++it) {
        const double v = std::abs(it.value()) * d[it.row()] * d[it.col()];
        norms[it.row()] = std::max(norms[it.row()], v);
        norms[it.col()] = std::max(norms[it.col()], v);
      }
    for (int k = 0; k < w.A.outerSize(); ++k)
      for (SparseMatrix<double>::InnerIterator it(w.A, k); it; ++it) {
        const double v =
            std::abs(it.value()) * d[n + it.row()] * d[it.col()];
        norms[n + it.row()] = std::max(norms[n + it.row()], v);
        norms[it.col()] = std::max(norms[it.col()], v);
      }
    for (int k = 0; k < w.G.outerSize(); ++k)
      for (SparseMatrix<double>::InnerIterator it(w.G, k); it; ++it) {
        const double v =
            std::abs(it.value()) * d[n + me + it.row()] * d[it.col()];
        norms[n + me + it.row()] = std::max(norms[n + me + it.row()], v);
        norms[it.col()] = std::max(norms[it.col()], v);
      }
    bool close = true;
    for (int i = 0; i < norms.size(); ++i) {
      if (norms[i] > 0) {
        d[i] /= std::sqrt(norms[i]);
        if (norms[i] > 1.01 || norms[i] < 0.99) close = false;
      }
      d[i] = std::clamp(d[i], 1e-6, 1e6);
    }
    if (close) break;
  }

  w.D = d.head(n);
  w.E_eq = d.segment(n, me);
  w.E_in = d.tail(mi);
  if (std::getenv("DAYMARKET_QP_TRACE"))
    std::fprintf(stderr, "ruiz D[%.2e,%.2e] Eeq[%.2e,%.2e] Ein[%.2e,%.2e]\n",
                 w.D.minCoeff(), w.D.maxCoeff(),
                 me ? w.E_eq.minCoeff() : 0.0, me ? w.E_eq.maxCoeff() : 0.0,
                 mi ? w.E_in.minCoeff() : 0.0, mi ? w.E_in.maxCoeff() : 0.0);

  const auto scale_mat = [](SparseMatrix<double>& M, const VectorXd& r,
                            const VectorXd& col) {
    for (int k = 0; k < M.outerSize(); ++k)
      for (SparseMatrix<double>::InnerIterator it(M, k); it; ++it)
        it.valueRef() *= r[it.row()] * col[it.col()];
  };
  scale_mat(w.Q, w.D, w.D);
  scale_mat(w.A, w.E_eq, w.D);
  scale_mat(w.G, w.E_in, w.D);
  w.c = w.c.cwiseProduct(w.D);
  w.b = w.b.cwiseProduct(w.E_eq);
  w.h = w.h.cwiseProduct(w.E_in);

  // Cost scaling keeps the objective terms commensurate with the
  // (now unit-normed) constraint rows.
  double qn = 0.0;
  for (int k = 0; k < w.Q.outerSize(); ++k)
    for (SparseMatrix<double>::InnerIterator it(w.Q, k); it; ++it)
      qn = std::max(qn, std::abs(it.value()));
  const double cn = w.c.size() ? w.c.cwiseAbs().maxCoeff() : 0.0;
  double g = std::max(qn, cn);
  if (g > 0) {
    w.cost_scale = std::clamp(1.0 / g, 1e-8, 1e8);
    w.Q *= w.cost_scale;
    w.c *= w.cost_scale;
  }
  if (std::getenv("DAYMARKET_QP_TRACE"))
    std::fprintf(stderr, "cost_scale=%.3e qn=%.3e cn=%.3e\n", w.cost_scale, qn,
                 cn);
}

// Symmetric quasi-definite augmented system
//   [ Q + reg   A'        G'      ]
//   [ A         -reg      0       ]
//   [ G         0         -(S/Z)-reg ]
// refactored each iteration with the current slack/dual diagonal.
struct KktSolver {
  const Working& w;
  int n, me, mi, dim;
  double reg;
  SparseMatrix<double> K;
  Eigen::SimplicialLDLT<SparseMatrix<double>> ldlt;
  bool analyzed = false;
  std::vector<Triplet> base;  // constant part

  explicit KktSolver(const Working& w_, double reg_) : w(w_), reg(reg_) {
    n = w.n;
    me = static_cast<int>(w.b.size());
    mi = static_cast<int>(w.h.size());
    dim = n + me + mi;
    base.reserve(w.Q.nonZeros() + 2 * w.A.nonZeros() + 2 * w.G.nonZeros() +
                 dim);
    for (int k = 0; k < w.Q.outerSize(); ++k)
      for (SparseMatrix<double>::InnerIterator it(w.Q, k); it; ++it)
        base.emplace_back(static_cast<int>(it.row()),
                          static_cast<int>(it.col()), it.value());
    for (int k = 0; k < w.A.outerSize(); ++k)
      for (SparseMatrix<double>::InnerIterator it(w.A, k); it; ++it) {
        const int r = n + static_cast<int>(it.row());
        const int c = static_cast<int>(it.col());
        base.emplace_back(r, c, it.value());
        base.emplace_back(c, r, it.value());
      }
    for (int k = 0; k < w.G.outerSize(); ++k)
      for (SparseMatrix<double>::InnerIterator it(w.G, k); it; ++it) {
        const int r = n + me + static_cast<int>(it.row());
        const int c = static_cast<int>(it.col());
        base.emplace_back(r, c, it.value());
        base.emplace_back(c, r, it.value());
      }
  }

  // diag_z: value placed on the inequality block (-s_i/z_i), empty => -1.
  bool factorize(const VectorXd& slack_over_dual) {
    std::vector<Triplet> trips = base;
    for (int j = 0; j < n; ++j) trips.emplace_back(j, j, reg);
    for (int i = 0; i < me; ++i) trips.emplace_back(n + i, n + i, -reg);
    for (int i = 0; i < mi; ++i) {
      const double sz = slack_over_dual.size() ? slack_over_dual[i] : 1.0;
      trips.emplace_back(n + me + i, n + me + i, -sz - reg);
    }
    K.resize(dim, dim);
    K.setFromTriplets(trips.begin(), trips.end());
    if (!analyzed) {
      ldlt.analyzePattern(K);
      analyzed = true;
    }
    ldlt.factorize(K);
    return ldlt.info() == Eigen::Success;
  }

  // Solve K t = rhs with plain iterative refinement; the regularized system
  // stays nonsingular on degenerate faces where the exact KKT matrix is not.
  VectorXd solve_refined(const VectorXd& rhs,
                         const VectorXd& slack_over_dual) const {
    (void)slack_over_dual;
    VectorXd t = ldlt.solve(rhs);
    for (int pass = 0; pass < 2; ++pass) {
      const VectorXd r = rhs - K * t;
      t += ldlt.solve(r);
    }
    return t;
  }
};

struct IpmState {
  VectorXd x, y, z, s;
};


double step_to_boundary(const VectorXd& v, const VectorXd& dv) {
  double a = 1.0;
  for (int i = 0; i < v.size(); ++i)
    if (dv[i] < 0) a = std::min(a, -v[i] / dv[i]);
  return a;
}

// Unscaled solution assembled from the scaled iterate.
QpSolution unscale(const QpProblem& p, const Working& w, const IpmState& st) {
  QpSolution sol;
  sol.x = w.D.cwiseProduct(st.x);
  const int me_user = w.user_eq;
  const int mi_user = w.user_in;
  sol.eq_duals = VectorXd::Zero(me_user);
  for (int i = 0; i < me_user; ++i)
    sol.eq_duals[i] = w.E_eq[i] * st.y[i] / w.cost_scale;
  sol.ineq_duals = VectorXd::Zero(mi_user);
  for (int i = 0; i < mi_user; ++i)
    sol.ineq_duals[i] = std::max(0.0, w.E_in[i] * st.z[i] / w.cost_scale);
  sol.lower_duals = VectorXd::Zero(p.num_vars());
  sol.upper_duals = VectorXd::Zero(p.num_vars());
  for (size_t i = 0; i < w.bound_var.size(); ++i) {
    const int r = mi_user + static_cast<int>(i);
    const double v = std::max(0.0, w.E_in[r] * st.z[r] / w.cost_scale);
    if (w.bound_is_upper[i])
      sol.upper_duals[w.bound_var[i]] = v;
    else
      sol.lower_duals[w.bound_var[i]] = v;
  }
  for (size_t i = 0; i < w.pin_var.size(); ++i) {
    const int r = me_user + static_cast<int>(i);
    const double v = w.E_eq[r] * st.y[r] / w.cost_scale;
    if (v >= 0)
      sol.upper_duals[w.pin_var[i]] += v;
    else
      sol.lower_duals[w.pin_var[i]] -= v;
    sol.x[w.pin_var[i]] = p.lower[w.pin_var[i]];
  }
  return sol;
}

// Active-set polish: near-LP problems leave the interior-point iterate on a
// conditioning floor well above the target residual. Guess the active rows
// from the (scaled) iterate, solve the corresponding equality KKT system,
// and accept the point if its true KKT residual clears the tolerance.
bool try_polish(const QpProblem& p, const Working& w, const IpmState& st,
                double tol, QpSolution* out) {
  const int n = w.n;
  const int me = static_cast<int>(w.b.size());
  const int mi = static_cast<int>(w.h.size());
  std::vector<char> active(mi);
  for (int i = 0; i < mi; ++i) active[i] = st.z[i] > st.s[i];

  const double reg = 1e-11;
  for (int pass = 0; pass < 80; ++pass) {
    std::vector<int> rows;
    for (int i = 0; i < mi; ++i)
      if (active[i]) rows.push_back(i);
    const int na = static_cast<int>(rows.size());
    std::vector<int> row_of(mi, -1);
    for (int k = 0; k < na; ++k) row_of[rows[k]] = k;

    const int dim = n + me + na;
    std::vector<Triplet> trips;
    for (int k = 0; k < w.Q.outerSize(); ++k)
      for (SparseMatrix<double>::InnerIterator it(w.Q, k); it; ++it)
        trips.emplace_back(static_cast<int>(it.row()),
                           static_cast<int>(it.col()), it.value());
    for (int j = 0; j < n; ++j) trips.emplace_back(j, j, reg);
    for (int k = 0; k < w.A.outerSize(); ++k)
      for (SparseMatrix<double>::InnerIterator it(w.A, k); it; ++it) {
        const int r = n + static_cast<int>(it.row());
        trips.emplace_back(r, static_cast<int>(it.col()), it.value());
        trips.emplace_back(static_cast<int>(it.col()), r, it.value());
      }
    for (int k = 0; k < w.G.outerSize(); ++k)
      for (SparseMatrix<double>::InnerIterator it(w.G, k); it; ++it) {
        const int r = row_of[it.row()];
        if (r < 0) continue;
        trips.emplace_back(n + me + r, static_cast<int>(it.col()), it.value());
        trips.emplace_back(static_cast<int>(it.col()), n + me + r, it.value());
      }
    for (int i = 0; i < me + na; ++i)
      trips.emplace_back(n + i, n + i, -reg);
    SparseMatrix<double> K(dim, dim);
    K.setFromTriplets(trips.begin(), trips.end());
    Eigen::SimplicialLDLT<SparseMatrix<double>> ldlt(K);
    if (ldlt.info() != Eigen::Success) return false;
    VectorXd rhs(dim);
    rhs.head(n) = -w.c;
    rhs.segment(n, me) = w.b;
    for (int k = 0; k < na; ++k) rhs[n + me + k] = w.h[rows[k]];
    VectorXd t = ldlt.solve(rhs);
    for (int r = 0; r < 2; ++r) t += ldlt.solve(rhs - K * t);

    IpmState cand;
    cand.x = t.head(n);
    cand.y = t.segment(n, me);
    cand.z = VectorXd::Zero(mi);
    for (int k = 0; k < na; ++k)
      cand.z[rows[k]] = std::max(t[n + me + k], 0.0);

    // Exchange a single row per pass: first restore primal feasibility,
    // then prune the most negative multiplier.
    const VectorXd slack = w.h - w.G * cand.x;
    int worst_add = -1, worst_drop = -1;
    double worst_viol = -1e-9, worst_dual = -1e-9;
    for (int i = 0; i < mi; ++i)
      if (!active[i] && slack[i] < worst_viol) {
        worst_viol = slack[i];
        worst_add = i;
      }
    for (int k = 0; k < na; ++k)
      if (t[n + me + k] < worst_dual) {
        worst_dual = t[n + me + k];
        worst_drop = rows[k];
      }
    bool changed = false;
    if (worst_add >= 0) {
      active[worst_add] = true;
      changed = true;
    } else if (worst_drop >= 0) {
      active[worst_drop] = false;
      changed = true;
    }
    if (!changed) {
      QpSolution sol = unscale(p, w, cand);
      sol.kkt_residual = kkt_residual(p, sol);
      if (sol.kkt_residual < out->kkt_residual) {
        sol.status = out->status;
        *out = sol;
      }
      if (std::getenv("DAYMARKET_QP_TRACE")) {
        VectorXd stat = p.Q * sol.x + p.c;
        if (p.b_eq.size()) stat += p.A_eq.transpose() * sol.eq_duals;
        if (p.h_ineq.size()) stat += p.G_ineq.transpose() * sol.ineq_duals;
        stat += sol.upper_duals - sol.lower_duals;
        double comp = 0, viol = 0;
        for (int j = 0; j < p.num_vars(); ++j) {
          if (std::isfinite(p.lower[j])) {
            comp = std::max(comp, std::abs(sol.lower_duals[j] * (p.lower[j] - sol.x[j])));
            viol = std::max(viol, p.lower[j] - sol.x[j]);
          }
          if (std::isfinite(p.upper[j])) {
            comp = std::max(comp, std::abs(sol.upper_duals[j] * (sol.x[j] - p.upper[j])));
            viol = std::max(viol, sol.x[j] - p.upper[j]);
          }
        }
        std::fprintf(stderr,
                     "polish pass=%d na=%d kkt=%.3e stat=%.3e comp=%.3e viol=%.3e\n",
                     pass, na, sol.kkt_residual, stat.cwiseAbs().maxCoeff(),
                     comp, viol);
      }
      if (out->kkt_residual <= tol) {
        out->status = QpStatus::optimal;
        return true;
      }
      return false;
    }
  }
  if (std::getenv("DAYMARKET_QP_TRACE"))
    std::fprintf(stderr, "polish: active set did not settle\n");
  return false;
}

// Equality-constrained (or unconstrained) QP: one refined KKT solve.
QpSolution solve_equality_qp(const QpProblem& p, const Working& w, double tol) {
  const int n = w.n;
  const int me = static_cast<int>(w.b.size());
  KktSolver kkt(w, 1e-9);
  IpmState st;
  st.z = VectorXd::Zero(0);
  st.s = VectorXd::Zero(0);
  QpSolution sol;
  if (!kkt.factorize(VectorXd())) {
    sol.status = QpStatus::infeasible;
    return sol;
  }
  VectorXd rhs(n + me);
  rhs.head(n) = -w.c;
  rhs.tail(me) = w.b;
  VectorXd t = kkt.solve_refined(rhs, VectorXd());
  st.x = t.head(n);
  st.y = t.tail(me);
  sol = unscale(p, w, st);
  sol.kkt_residual = kkt_residual(p, sol);
  sol.iterations = 1;
  if (sol.kkt_residual <= std::max(tol, 1e-7 * (1 + sol.x.cwiseAbs().sum()))) {
    sol.status = QpStatus::optimal;
  } else {
    // Singular KKT: decide between inconsistent equalities and an
    // objective direction of unbounded descent.
    const double pres = me ? (w.A * st.x - w.b).cwiseAbs().maxCoeff() : 0.0;
    sol.status = pres > 1e-6 ? QpStatus::infeasible : QpStatus::unbounded;
  }
  return sol;
}

}  // namespace

QpProblem QpProblem::make(int n) {
  QpProblem p;
  p.Q.resize(n, n);
  p.c = VectorXd::Zero(n);
  p.A_eq.resize(0, n);
  p.b_eq.resize(0);
  p.G_ineq.resize(0, n);
  p.h_ineq.resize(0);
  p.lower = VectorXd::Constant(n, -kInf);
  p.upper = VectorXd::Constant(n, kInf);
  return p;
}

const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::optimal: return "optimal";
    case QpStatus::infeasible: return "infeasible";
    case QpStatus::unbounded: return "unbounded";
    case QpStatus::max_iter: return "max_iter";
  }
  return "?";
}

std::string validate_problem(const QpProblem& p) {
  const int n = p.num_vars();
  if (p.Q.rows() != n || p.Q.cols() != n) return "Q dimension mismatch";
  if (p.A_eq.cols() != n || p.A_eq.rows() != p.b_eq.size())
    return "equality block dimension mismatch";
  if (p.G_ineq.cols() != n || p.G_ineq.rows() != p.h_ineq.size())
    return "inequality block dimension mismatch";
  if (p.lower.size() != n || p.upper.size() != n)
    return "bounds dimension mismatch";
  for (int j = 0; j < n; ++j)
    if (p.lower[j] > p.upper[j]) return "lower bound exceeds upper bound";
  Eigen::MatrixXd Qd(p.Q);
  if ((Qd - Qd.transpose()).cwiseAbs().maxCoeff() > 1e-10 * (1 + Qd.cwiseAbs().maxCoeff()))
    return "Q not symmetric";
  if (n <= 600) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Qd,
                                                      Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-8 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff()))
      return "Q not positive semidefinite";
  }
  return {};
}

double kkt_residual(const QpProblem& p, const QpSolution& sol) {
  const int n = p.num_vars();
  if (sol.x.size() != n) return kInf;
  VectorXd stat = p.Q * sol.x + p.c;
  if (p.b_eq.size()) stat += p.A_eq.transpose() * sol.eq_duals;
  if (p.h_ineq.size()) stat += p.G_ineq.transpose() * sol.ineq_duals;
  stat += sol.upper_duals - sol.lower_duals;
  double r = stat.cwiseAbs().maxCoeff();

  if (p.b_eq.size())
    r = std::max(r, (p.A_eq * sol.x - p.b_eq).cwiseAbs().maxCoeff());
  VectorXd gi;
  if (p.h_ineq.size()) {
    gi = p.G_ineq * sol.x - p.h_ineq;
    r = std::max(r, gi.cwiseMax(0.0).maxCoeff());
    r = std::max(r, -std::min(0.0, sol.ineq_duals.minCoeff()));
    r = std::max(r, sol.ineq_duals.cwiseProduct(gi).cwiseAbs().maxCoeff());
  }
  for (int j = 0; j < n; ++j) {
    const double lo = p.lower[j], up = p.upper[j];
    if (is_finite(lo)) {
      r = std::max(r, lo - sol.x[j]);
      r = std::max(r, -std::min(0.0, sol.lower_duals[j]));
      r = std::max(r, std::abs(sol.lower_duals[j] * (lo - sol.x[j])));
    }
    if (is_finite(up)) {
      r = std::max(r, sol.x[j] - up);
      r = std::max(r, -std::min(0.0, sol.upper_duals[j]));
      r = std::max(r, std::abs(sol.upper_duals[j] * (sol.x[j] - up)));
    }
  }
  return r;
}

QpSolution solve_qp(const QpProblem& p, double tol, int max_iter) {
  QpSolution sol;
  const std::string err = validate_problem(p);
  if (!err.empty()) {
    sol.status = QpStatus::infeasible;
    return sol;
  }

  Working w = fold(p);
  equilibrate(w);
  const int n = w.n;
  const int me = static_cast<int>(w.b.size());
  const int mi = static_cast<int>(w.h.size());

  if (mi == 0) return solve_equality_qp(p, w, tol);

  KktSolver kkt(w, 1e-8);

  // Starting point from one relaxed KKT solve, pushed into the cone.
  IpmState st;
  {
    if (!kkt.factorize(VectorXd::Ones(mi))) {
      sol.status = QpStatus::infeasible;
      return sol;
    }
    VectorXd rhs(n + me + mi);
    rhs.head(n) = -w.c;
    rhs.segment(n, me) = w.b;
    rhs.tail(mi) = w.h;
    VectorXd t = kkt.solve_refined(rhs, VectorXd::Ones(mi));
    st.x = t.head(n);
    st.y = t.segment(n, me);
    st.z = t.tail(mi).cwiseMax(1.0);
    st.s = (w.h - w.G * st.x).cwiseMax(1.0);
  }

  double best_kkt = kInf;
  QpSolution best;
  IpmState best_state = st;
  int polish_attempts = 0;
  const double init_dual_norm =
      1.0 + std::max(st.y.size() ? st.y.cwiseAbs().maxCoeff() : 0.0,
                     st.z.cwiseAbs().maxCoeff());

  const bool trace = std::getenv("DAYMARKET_QP_TRACE") != nullptr;
  int it = 0;
  int stalls = 0;
  for (; it < max_iter; ++it) {
    // Residuals in the scaled space.
    VectorXd rd = w.Q * st.x + w.c + w.G.transpose() * st.z;
    if (me) rd += w.A.transpose() * st.y;
    VectorXd rp = me ? VectorXd(w.A * st.x - w.b) : VectorXd();
    VectorXd rg = w.G * st.x + st.s - w.h;
    const double mu = st.s.dot(st.z) / mi;

    // Track the best iterate by the unscaled contract residual.
    QpSolution cand = unscale(p, w, st);
    cand.iterations = it;
    cand.kkt_residual = kkt_residual(p, cand);
    if (cand.kkt_residual < best_kkt) {
      best_kkt = cand.kkt_residual;
      best = cand;
      best_state = st;
    }
    if (trace)
      std::fprintf(stderr,
                   "qp it=%3d mu=%10.3e rd=%10.3e rp=%10.3e rg=%10.3e "
                   "kkt=%10.3e reg=%8.1e\n",
                   it, mu, rd.cwiseAbs().maxCoeff(),
                   rp.size() ? rp.cwiseAbs().maxCoeff() : 0.0,
                   rg.cwiseAbs().maxCoeff(), cand.kkt_residual, kkt.reg);
    if (best_kkt <= tol) {
      best.status = QpStatus::optimal;
      return best;
    }

    // Farkas-style certificates for infeasibility / unboundedness.
    const double dual_norm =
        std::max(st.y.size() ? st.y.cwiseAbs().maxCoeff() : 0.0,
                 st.z.cwiseAbs().maxCoeff());
    if (dual_norm > 1e3 * init_dual_norm) {
      VectorXd yn = st.y / dual_norm;
      VectorXd zn = st.z / dual_norm;
      VectorXd atd = w.G.transpose() * zn;
      if (me) atd += w.A.transpose() * yn;
      const double gap = (me ? w.b.dot(yn) : 0.0) + w.h.dot(zn);
      if (atd.cwiseAbs().maxCoeff() <= 1e-7 && gap <= -1e-9) {
        best.status = QpStatus::infeasible;
        return best;
      }
    }
    const double prim_norm = st.x.cwiseAbs().maxCoeff();
    if (prim_norm > 1e4) {
      VectorXd d = st.x / prim_norm;
      const bool q_flat = (w.Q * d).cwiseAbs().maxCoeff() <= 1e-7;
      const bool descent = w.c.dot(d) < -1e-9;
      const bool eq_ok = me == 0 || (w.A * d).cwiseAbs().maxCoeff() <= 1e-7;
      const bool in_ok = (w.G * d).maxCoeff() <= 1e-7;
      if (q_flat && descent && eq_ok && in_ok) {
        best.status = QpStatus::unbounded;
        return best;
      }
    }

    if (mu < 1e-7 && best_kkt > tol && polish_attempts < 4 &&
        it % 4 == 0) {
      ++polish_attempts;
      if (try_polish(p, w, best_state, tol, &best)) {
        best.iterations = it;
        return best;
      }
      best_kkt = std::min(best_kkt, best.kkt_residual);
    }

    if (!kkt.factorize(st.s.cwiseQuotient(st.z))) {
      // retry with heavier regularization
      kkt.reg *= 100;
      if (!kkt.factorize(st.s.cwiseQuotient(st.z))) break;
    }
    const VectorXd soz = st.s.cwiseQuotient(st.z);

    // Affine (predictor) direction.
    VectorXd rhs(n + me + mi);
    rhs.head(n) = -rd;
    if (me) rhs.segment(n, me) = -rp;
    rhs.tail(mi) = -rg + st.s;
    VectorXd t = kkt.solve_refined(rhs, soz);
    VectorXd dx = t.head(n);
    VectorXd dz = t.tail(mi);
    VectorXd ds = -st.s - soz.cwiseProduct(dz);

    const double a_aff =
        std::min(step_to_boundary(st.s, ds), step_to_boundary(st.z, dz));
    const double mu_aff =
        (st.s + a_aff * ds).dot(st.z + a_aff * dz) / mi;
    double sigma = std::pow(mu_aff / std::max(mu, 1e-300), 3.0);
    sigma = std::clamp(sigma, 0.0, 1.0);
    // Keep the complementarity measure from outrunning the residuals: with
    // mu far below them the KKT systems turn hopelessly ill-conditioned and
    // the Newton directions stop reducing anything.
    const double r_all =
        std::max({rd.cwiseAbs().maxCoeff(),
                  rp.size() ? rp.cwiseAbs().maxCoeff() : 0.0,
                  rg.cwiseAbs().maxCoeff()});
    if (mu < r_all) sigma = std::max(sigma, std::min(0.8, r_all / (r_all + 20.0 * mu)));

    // Corrector.
    VectorXd comp = st.s.cwiseProduct(st.z) + ds.cwiseProduct(dz) -
                    VectorXd::Constant(mi, sigma * mu);
    rhs.tail(mi) = -rg + comp.cwiseQuotient(st.z);
    t = kkt.solve_refined(rhs, soz);
    VectorXd dy = me ? VectorXd(t.segment(n, me)) : VectorXd();
    {
      VectorXd dx2 = t.head(n);
      VectorXd dz2 = t.tail(mi);
      VectorXd ds2 = -comp.cwiseQuotient(st.z) - soz.cwiseProduct(dz2);
      const double a2 =
          std::min(step_to_boundary(st.s, ds2), step_to_boundary(st.z, dz2));
      if (a2 >= 0.1 * a_aff || a_aff < 1e-8) {
        dx = dx2;
        dz = dz2;
        ds = ds2;
      } else {
        // The second-order term hurt the step; fall back to a centering
        // direction.
        comp = st.s.cwiseProduct(st.z) -
               VectorXd::Constant(mi, std::max(sigma, 0.5) * mu);
        rhs.tail(mi) = -rg + comp.cwiseQuotient(st.z);
        t = kkt.solve_refined(rhs, soz);
        dx = t.head(n);
        if (me) dy = t.segment(n, me);
        dz = t.tail(mi);
        ds = -comp.cwiseQuotient(st.z) - soz.cwiseProduct(dz);
      }
    }

    const double a_max =
        std::min(step_to_boundary(st.s, ds), step_to_boundary(st.z, dz));
    const double alpha = std::min(1.0, 0.995 * a_max);

    st.x += alpha * dx;
    if (me) st.y += alpha * dy;
    st.z += alpha * dz;
    st.s += alpha * ds;

    if (alpha < 1e-8) {
      ++stalls;
      kkt.reg *= 10.0;  // loosen the system and try again
      if (stalls > 4) break;
    } else if (alpha > 1e-3) {
      stalls = 0;
    }
  }

  best.iterations = it;
  if (best_kkt <= tol) {
    best.status = QpStatus::optimal;
    return best;
  }
  if (try_polish(p, w, best_state, tol, &best)) {
    best.iterations = it;
    return best;
  }
  best_kkt = std::min(best_kkt, best.kkt_residual);
  // Endgame classification with looser certificate thresholds.
  {
    const double dual_norm =
        std::max(st.y.size() ? st.y.cwiseAbs().maxCoeff() : 0.0,
                 st.z.size() ? st.z.cwiseAbs().maxCoeff() : 0.0);
    if (dual_norm > 1e2 * init_dual_norm) {
      VectorXd yn = st.y / dual_norm;
      VectorXd zn = st.z / dual_norm;
      VectorXd atd = w.G.transpose() * zn;
      if (me) atd += w.A.transpose() * yn;
      const double gap = (me ? w.b.dot(yn) : 0.0) + w.h.dot(zn);
      if (atd.cwiseAbs().maxCoeff() <= 1e-5 && gap <= -1e-7) {
        best.status = QpStatus::infeasible;
        return best;
      }
    }
    const double prim_norm = st.x.cwiseAbs().maxCoeff();
    if (prim_norm > 1e3) {
      VectorXd d = st.x / prim_norm;
      if ((w.Q * d).cwiseAbs().maxCoeff() <= 1e-5 && w.c.dot(d) < -1e-7 &&
          (me == 0 || (w.A * d).cwiseAbs().maxCoeff() <= 1e-5) &&
          (w.G * d).maxCoeff() <= 1e-5) {
        best.status = QpStatus::unbounded;
        return best;
      }
    }
  }
  best.status = QpStatus::max_iter;
  return best;
}

}  // namespace daymarket
