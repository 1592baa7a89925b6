#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "prodopt/cost.hpp"

namespace prodopt {

// Knobs of the projected quasi-Newton descent.  The gradient tolerance is
// relative: a run stops once ||grad C^2|| < gradient_tolerance * max(1, C^2
// at the Trotter point), so the stopping rule scales with the problem.
struct OptimizerSettings {
  int max_iterations = 2000;
  double gradient_tolerance = 1e-10;
  int restarts = 8;                 // perturbed starts beside the Trotter run
  double perturbation_scale = 0.1;  // initial offsets, units of t * max|c_j|
  double box_factor = 2.0;          // |theta_{r,j}| <= box_factor |t c_j|
  int memory = 10;                  // curvature pairs kept for the step model
  std::uint64_t seed = 1;
};

struct TracePoint {
  int iteration;
  double cost;       // C (per-site C for the shared variant), not squared
  double grad_norm;  // of the squared-cost objective
};

// Winner of the restart family.  best_sheet satisfies the layer-sum
// constraint exactly and every angle obeys the configured box.
struct OptimizationResult {
  ParamSheet best_sheet;
  double best_cost = 0.0;         // C at best_sheet; <= trotter_cost always
  double trotter_cost = 0.0;      // C at the Trotter point
  std::vector<TracePoint> trace;  // winning run, entry 0 = its start
  bool converged = false;         // winning run hit the gradient tolerance
  int best_restart = 0;    // 0 = the Trotter start, 1..restarts = perturbed
  Eigen::MatrixXd best_shared;  // layers x classes for the shared variant,
                                // empty otherwise
};

// Trotter-point sheet theta_{r,j} = t c_j / layers (constrained, xi = 0).
ParamSheet trotter_sheet(const HamiltonianModel& model, double t, int layers);

// Minimizes C^2 over the (R-1) x M free rows, starting from the Trotter
// point plus `restarts` Gaussian-perturbed copies of it.  Quasi-Newton
// directions with a backtracking line search; iterates are projected onto
// the box, and accepted steps never increase the cost.  Needs at least two
// layers; with two a strict improvement over Trotter is not guaranteed.
// Deterministic under the seed.  Non-finite cost or gradient values raise
// NumericalError naming the offending parameter.
OptimizationResult minimize(const CostPolynomial& poly, double t, int layers,
                            const OptimizerSettings& settings = {});

// Warm-started variant: run 0 descends from `warm_free` (projected into the
// box) instead of the Trotter point, so best_restart == 0 means the warm
// start won.  Perturbed restarts still scatter around the Trotter point.
// Intended for grid scans where the previous optimum seeds the next point.
OptimizationResult minimize(const CostPolynomial& poly, double t, int layers,
                            const OptimizerSettings& settings,
                            const Eigen::MatrixXd& warm_free);

// The same descent on the class-shared (R-1) x A free rows of a
// translation-invariant model, driven by the squared per-site cost.  The
// result carries the full shared matrix, so it can be replayed on any
// lattice size.
OptimizationResult minimize_shared(const CostPolynomial& poly, double t,
                                   int layers,
                                   const OptimizerSettings& settings = {});

}  // namespace prodopt
