#include "prodopt/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "prodopt/errors.hpp"

namespace prodopt {

namespace {

double dot(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a.array() * b.array()).sum();
}

// Per-column feasible set of the free rows: |x_r| <= bound_j entrywise plus
// |target_j - sum_r x_r| <= bound_j, so the slaved layer obeys the box too.
struct BoxSpec {
  Eigen::VectorXd bound;
  Eigen::VectorXd target;
};

double shifted_sum(const Eigen::VectorXd& y, double shift, double b) {
  double s = 0.0;
  for (int r = 0; r < y.size(); ++r) s += std::clamp(y(r) - shift, -b, b);
  return s;
}

// Euclidean projection of one free column onto its feasible set.  Clamping
// into the box is exact unless the slaved row then breaks its bound; in that
// case the nearer sum face is active and the projection is clamp(y - shift)
// with the shift solving a monotone scalar equation (bisection, then one
// exact solve on the identified interior set).
void project_column(Eigen::Ref<Eigen::VectorXd> col, double b, double target) {
  for (int r = 0; r < col.size(); ++r) col(r) = std::clamp(col(r), -b, b);
  const double s = col.sum();
  if (s >= target - b && s <= target + b) return;
  const double u = s > target + b ? target + b : target - b;
  const Eigen::VectorXd y = col;
  double lo = y.minCoeff() - b;
  double hi = y.maxCoeff() + b;
  for (int it = 0;
       it < 200 && hi - lo > 1e-16 * (1.0 + std::abs(lo) + std::abs(hi)); ++it) {
    const double mid = 0.5 * (lo + hi);
    (shifted_sum(y, mid, b) >= u ? lo : hi) = mid;
  }
  double shift = 0.5 * (lo + hi);
  double clamped = 0.0;
  double interior = 0.0;
  int inside = 0;
  for (int r = 0; r < y.size(); ++r) {
    const double v = y(r) - shift;
    if (v <= -b) {
      clamped -= b;
    } else if (v >= b) {
      clamped += b;
    } else {
      interior += y(r);
      ++inside;
    }
  }
  if (inside > 0) shift = (interior - (u - clamped)) / inside;
  for (int r = 0; r < col.size(); ++r) col(r) = std::clamp(y(r) - shift, -b, b);
}

void project_free(Eigen::MatrixXd& free, const BoxSpec& box) {
  for (int j = 0; j < free.cols(); ++j)
    project_column(free.col(j), box.bound(j), box.target(j));
}

using ValueFn = std::function<double(const Eigen::MatrixXd&)>;
using GradFn = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>;

void check_finite(double f, const Eigen::MatrixXd& g, const Eigen::MatrixXd& x) {
  if (!std::isfinite(f)) {
    Eigen::Index r = 0, c = 0;
    x.cwiseAbs().maxCoeff(&r, &c);
    throw NumericalError("cost is not finite; largest free parameter sits at (layer " +
                         std::to_string(r) + ", column " + std::to_string(c) +
                         ") = " + std::to_string(x(r, c)));
  }
  for (Eigen::Index r = 0; r < g.rows(); ++r)
    for (Eigen::Index c = 0; c < g.cols(); ++c)
      if (!std::isfinite(g(r, c)))
        throw NumericalError("gradient is not finite at free parameter (layer " +
                             std::to_string(r) + ", column " + std::to_string(c) + ")");
}

struct RunState {
  Eigen::MatrixXd free;
  double f = 0.0;
  std::vector<TracePoint> trace;
  bool converged = false;
};

// One projected quasi-Newton run: limited-memory curvature pairs build the
// direction, a backtracking Armijo search on the projected step accepts it,
// so the cost sequence is strictly decreasing until the gradient tolerance
// or a box face stops it.
RunState run_descent(const ValueFn& value, const GradFn& grad, Eigen::MatrixXd x,
                     const BoxSpec& box, const OptimizerSettings& settings,
                     double tol) {
  project_free(x, box);
  double f = value(x);
  Eigen::MatrixXd g = grad(x);
  check_finite(f, g, x);

  RunState run;
  run.trace.push_back({0, std::sqrt(std::max(f, 0.0)), g.norm()});
  run.converged = g.norm() < tol;

  std::deque<std::pair<Eigen::MatrixXd, Eigen::MatrixXd>> mem;  // (step, dgrad)
  auto backtrack = [&](const Eigen::MatrixXd& dir, Eigen::MatrixXd& out_x,
                       double& out_f) {
    double scale = 1.0;
    for (int bt = 0; bt < 60; ++bt, scale *= 0.5) {
      Eigen::MatrixXd cand = x + scale * dir;
      project_free(cand, box);
      const double slope = dot(g, cand - x);
      if ((cand - x).norm() == 0.0) return false;  // dir leaves the feasible set
      if (slope >= 0.0) continue;
      const double fc = value(cand);
      if (std::isfinite(fc) && fc <= f + 1e-4 * slope) {
        out_x = std::move(cand);
        out_f = fc;
        return true;
      }
    }
    return false;
  };

  for (int it = 1; it <= settings.max_iterations && !run.converged; ++it) {
    Eigen::MatrixXd d = -g;
    if (!mem.empty()) {
      const std::size_t k = mem.size();
      std::vector<double> rho(k), alpha(k);
      for (std::size_t i = k; i-- > 0;) {
        rho[i] = 1.0 / dot(mem[i].second, mem[i].first);
        alpha[i] = rho[i] * dot(mem[i].first, d);
        d -= alpha[i] * mem[i].second;
      }
      d *= dot(mem.back().first, mem.back().second) /
           dot(mem.back().second, mem.back().second);
      for (std::size_t i = 0; i < k; ++i) {
        const double beta = rho[i] * dot(mem[i].second, d);
        d += (alpha[i] - beta) * mem[i].first;
      }
      if (dot(d, g) >= 0.0) {  // curvature model lost descent; drop it
        d = -g;
        mem.clear();
      }
    }

    Eigen::MatrixXd xn;
    double fn = 0.0;
    bool accepted = backtrack(d, xn, fn);
    if (!accepted && !mem.empty()) {
      mem.clear();
      accepted = backtrack(-g, xn, fn);
    }
    if (!accepted) break;  // no productive step left at this floor

    Eigen::MatrixXd gn = grad(xn);
    check_finite(fn, gn, xn);
    const Eigen::MatrixXd step = xn - x;
    const Eigen::MatrixXd dgrad = gn - g;
    const double sy = dot(step, dgrad);
    if (sy > 1e-12 * step.norm() * dgrad.norm()) {
      mem.emplace_back(step, dgrad);
      if (static_cast<int>(mem.size()) > std::max(1, settings.memory))
        mem.pop_front();
    }
    x = std::move(xn);
    f = fn;
    g = std::move(gn);
    run.trace.push_back({it, std::sqrt(std::max(f, 0.0)), g.norm()});
    run.converged = g.norm() < tol;
  }
  run.free = std::move(x);
  run.f = f;
  return run;
}

void validate(const OptimizerSettings& settings) {
  if (!(settings.gradient_tolerance > 0.0))
    throw ConfigError("gradient tolerance must be positive");
  if (!(settings.box_factor >= 1.0))
    throw ConfigError("box factor must be at least one");
  if (settings.max_iterations < 0)
    throw ConfigError("iteration cap cannot be negative");
  if (settings.restarts < 0) throw ConfigError("restart count cannot be negative");
  if (!(settings.perturbation_scale >= 0.0))
    throw ConfigError("perturbation scale cannot be negative");
  if (settings.memory < 1)
    throw ConfigError("curvature memory must hold at least one pair");
}

struct Problem {
  ValueFn value;
  GradFn grad;
  Eigen::MatrixXd trotter_free;
  Eigen::MatrixXd start0;  // run 0; the Trotter point unless warm-started
  BoxSpec box;
};

// Run 0 from start0 plus `restarts` perturbed copies of the Trotter point;
// smallest final cost wins, earlier runs win ties.  Sub-seeds are drawn up
// front so the runs stay independent of each other.
std::pair<int, RunState> best_of_restarts(const Problem& prob,
                                          const OptimizerSettings& settings,
                                          double sigma, double tol) {
  std::mt19937_64 master(settings.seed);
  std::vector<std::uint64_t> subseed(static_cast<std::size_t>(settings.restarts));
  for (auto& s : subseed) s = master();

  int best_index = 0;
  RunState best =
      run_descent(prob.value, prob.grad, prob.start0, prob.box, settings, tol);
  for (int rs = 1; rs <= settings.restarts; ++rs) {
    Eigen::MatrixXd start = prob.trotter_free;
    if (sigma > 0.0) {
      std::mt19937_64 rng(subseed[static_cast<std::size_t>(rs - 1)]);
      std::normal_distribution<double> offset(0.0, sigma);
      for (Eigen::Index r = 0; r < start.rows(); ++r)
        for (Eigen::Index c = 0; c < start.cols(); ++c) start(r, c) += offset(rng);
    }
    RunState run =
        run_descent(prob.value, prob.grad, std::move(start), prob.box, settings, tol);
    if (run.f < best.f) {
      best = std::move(run);
      best_index = rs;
    }
  }
  return {best_index, std::move(best)};
}

}  // namespace

ParamSheet trotter_sheet(const HamiltonianModel& model, double t, int layers) {
  return ParamSheet::trotter(model, t, layers);
}

namespace {

OptimizationResult minimize_impl(const CostPolynomial& poly, double t, int layers,
                                 const OptimizerSettings& settings,
                                 const Eigen::MatrixXd* warm) {
  validate(settings);
  if (layers < 2)
    throw ConfigError("optimization needs at least two layers (one free row)");
  const HamiltonianModel& model = poly.model();
  const ParamSheet trotter = ParamSheet::trotter(model, t, layers);
  const double f_trotter = cost_sq(poly, trotter);
  const double tol = settings.gradient_tolerance * std::max(1.0, f_trotter);

  Problem prob;
  prob.trotter_free = trotter.matrix().topRows(layers - 1);
  if (warm && (warm->rows() != layers - 1 || warm->cols() != model.term_count()))
    throw DimensionError("warm start shape must match the free rows");
  prob.start0 = warm ? *warm : prob.trotter_free;
  prob.box.target = trotter.targets();
  prob.box.bound = settings.box_factor * trotter.targets().cwiseAbs();
  prob.value = [&](const Eigen::MatrixXd& free) {
    return cost_sq(poly, ParamSheet::constrained(model, t, layers, free));
  };
  prob.grad = [&](const Eigen::MatrixXd& free) {
    return grad_cost_sq(poly, ParamSheet::constrained(model, t, layers, free));
  };

  const double sigma =
      settings.perturbation_scale * std::abs(t) * model.max_abs_coeff();
  auto [index, run] = best_of_restarts(prob, settings, sigma, tol);

  return OptimizationResult{ParamSheet::constrained(model, t, layers, run.free),
                            std::sqrt(std::max(run.f, 0.0)),
                            std::sqrt(std::max(f_trotter, 0.0)),
                            std::move(run.trace),
                            run.converged,
                            index,
                            Eigen::MatrixXd()};
}

}  // namespace

OptimizationResult minimize(const CostPolynomial& poly, double t, int layers,
                            const OptimizerSettings& settings) {
  return minimize_impl(poly, t, layers, settings, nullptr);
}

OptimizationResult minimize(const CostPolynomial& poly, double t, int layers,
                            const OptimizerSettings& settings,
                            const Eigen::MatrixXd& warm_free) {
  return minimize_impl(poly, t, layers, settings, &warm_free);
}

OptimizationResult minimize_shared(const CostPolynomial& poly, double t, int layers,
                                   const OptimizerSettings& settings) {
  validate(settings);
  if (layers < 2)
    throw ConfigError("optimization needs at least two layers (one free row)");
  const HamiltonianModel& model = poly.model();
  if (!model.has_classes() || !model.lattice())
    throw ConfigError("shared-parameter optimization needs a uniform lattice model");

  const int A = model.class_count();
  Eigen::VectorXd targets(A);
  for (int a = 0; a < A; ++a)
    targets(a) = t * model.term(model.class_representatives()[static_cast<std::size_t>(a)]).coeff;

  auto full_shared = [&](const Eigen::MatrixXd& free) {
    Eigen::MatrixXd full(layers, A);
    full.topRows(layers - 1) = free;
    full.row(layers - 1) = targets.transpose() - free.colwise().sum();
    return full;
  };

  Problem prob;
  prob.trotter_free = (targets / layers).transpose().replicate(layers - 1, 1);
  prob.start0 = prob.trotter_free;
  prob.box.target = targets;
  prob.box.bound = settings.box_factor * targets.cwiseAbs();
  prob.value = [&](const Eigen::MatrixXd& free) {
    const double c = unit_cell_cost(poly, full_shared(free), t, 2);
    return c * c;
  };
  prob.grad = [&](const Eigen::MatrixXd& free) {
    return grad_unit_cost_sq(poly, free, t);
  };

  const double f_trotter = prob.value(prob.trotter_free);
  const double tol = settings.gradient_tolerance * std::max(1.0, f_trotter);
  const double sigma =
      settings.perturbation_scale * std::abs(t) * model.max_abs_coeff();
  auto [index, run] = best_of_restarts(prob, settings, sigma, tol);

  return OptimizationResult{
      ParamSheet::constrained(model, t, layers, expand_class_columns(model, run.free)),
      std::sqrt(std::max(run.f, 0.0)),
      std::sqrt(std::max(f_trotter, 0.0)),
      std::move(run.trace),
      run.converged,
      index,
      full_shared(run.free)};
}

}  // namespace prodopt
