#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "prodopt/model.hpp"
#include "prodopt/optimizer.hpp"

namespace prodopt {

// Grid of scaled times sqrt(2n) * t.  Either an explicit point list or a
// (min, max, count) range; an explicit list wins when both are set.
struct TimeGrid {
  double min = 0.05;
  double max = 1.5;
  int count = 16;
  bool log_spacing = false;
  std::vector<double> points;

  // Materialized grid, strictly increasing.
  std::vector<double> values() const;
};

// One experiment run: which model, how many layers, which times, and the
// knobs of the repeat / threshold scans.  Times are in sqrt(2n) t units
// throughout so the axis is size-independent.
struct ExperimentConfig {
  ModelKind kind = ModelKind::XY;
  CouplingSpec model;
  std::vector<std::pair<std::string, double>> custom_terms;  // kind == Custom
  bool custom_normalize = false;

  int layers = 3;
  TimeGrid grid;
  std::vector<int> orders = {1, 2, 4};        // product-formula baselines
  std::vector<int> k_list = {4, 8, 12, 16, 20, 24};  // repetition horizons
  int repeat_k_max = 10;
  std::vector<double> thresholds = {1e-3};    // target accuracies
  double maxtime_step = 0.01;                 // scan step, scaled units
  // Formula applications per repetition in the horizon search.  1 (default)
  // repeats one order-q step per unit of K, matching the per-step exponential
  // counts published in the manifest; raising it buys the references finer
  // sub-stepping at the same K.  Sweep/repeat baselines are unaffected: their
  // first-order reference is the ansatz at the Trotter point by definition.
  int maxtime_reference_steps = 1;

  OptimizerSettings optimizer;
  std::string output_dir = ".";
  int workers = 1;
};

// Builds the configured Hamiltonian.
HamiltonianModel build_model(const ExperimentConfig& config);

// Rejects empty/non-increasing grids, thresholds outside (0,1), unknown
// product-formula orders, and nonsensical counts.  ConfigError on failure.
void validate_config(const ExperimentConfig& config);

// A rectangular table with fixed column names; cells are doubles so the
// formatting rule (17 significant digits, '.' decimal, "nan" for absent)
// lives in exactly one place.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

// Shortest round-trip-exact decimal form, capped at 17 significant digits;
// NaN renders as "nan".
std::string format_double(double x);

void write_csv(std::ostream& out, const Table& table);
void write_csv_file(const std::string& path, const Table& table);

// ---------------------------------------------------------------------------
// Time sweep: per grid point, optimize and compare against the product
// formulas.  eps columns are NaN when the model exceeds the dense-oracle
// capacity (the perturbative columns stay valid).

struct SweepRecord {
  double scaled_time = 0.0;  // sqrt(2n) t
  double t = 0.0;
  double c_opt = 0.0;        // C at the optimized sheet
  double c_trotter = 0.0;    // C at the Trotter point
  double e_opt = 0.0;        // third-order term at the optimized sheet
  double eps_var = 0.0;      // exact error of the optimized circuit
  std::vector<double> eps_trotter;  // one per configured order
  double r_eps = 0.0;        // eps_trotter(order 1) / eps_var
  double r_e = 0.0;          // eps_trotter(order 1) / e_opt
};

struct SweepResult {
  std::vector<int> orders;
  bool oracle_available = true;
  std::vector<SweepRecord> records;

  Table to_table() const;
};

SweepResult sweep_time(const ExperimentConfig& config);

// ---------------------------------------------------------------------------
// Repetition scaling: optimize one step per grid time, then concatenate it
// K = 1..repeat_k_max times and follow both the symbolic cost and the exact
// errors along the horizon K t.

struct RepeatRecord {
  double scaled_time = 0.0;  // of the single step
  double t = 0.0;
  int k = 1;
  double scaled_horizon = 0.0;  // sqrt(2n) K t
  double c_k_sq = 0.0;          // squared cost of the K-fold sheet
  double eps_var = 0.0;         // exact error of the K-fold circuit
  std::vector<double> eps_trotter;
};

// Least-squares log-log slopes per single-step time; the eps slope is fit
// only over horizons with sqrt(2n) K t below the perturbative window.
struct RepeatSlopes {
  double scaled_time = 0.0;
  double slope_c_sq = 0.0;    // log C_K^2 vs log K, all K
  double slope_eps_sq = 0.0;  // log eps_K^2 vs log K, windowed
  int eps_points = 0;         // rows inside the window
};

struct RepeatResult {
  std::vector<int> orders;
  bool oracle_available = true;
  double horizon_window = 1.5;  // scaled-horizon cutoff for the eps fit
  std::vector<RepeatRecord> records;
  std::vector<RepeatSlopes> slopes;

  Table to_table() const;
};

RepeatResult repeat_scaling(const ExperimentConfig& config);

// ---------------------------------------------------------------------------
// Maximal-time search: scan single-step times upward with re-optimization
// (warm-started from the previous point), then for every threshold, horizon
// count K, and method report the largest feasible step and T = K t.

struct MethodTime {
  std::string method;     // "var" or "q<order>"
  bool feasible = false;  // some grid step met the threshold
  double t_step = 0.0;    // largest feasible step (raw t, 0 if infeasible)
  double t_max = 0.0;     // K * t_step
  double err_at = 0.0;    // error at t_step (audit)
  double err_next = 0.0;  // error at the next grid step (NaN past the end)
};

struct MaxTimeRecord {
  double threshold = 0.0;
  int k = 1;
  std::vector<MethodTime> methods;  // var first, then configured orders
  double ratio_var_over_q1 = 0.0;   // T_max(var) / T_max(order 1)
};

struct MaxTimeResult {
  std::vector<int> orders;
  double step = 0.0;  // scan step, scaled units
  std::vector<MaxTimeRecord> records;

  Table to_table() const;
};

MaxTimeResult max_time_search(const ExperimentConfig& config);

}  // namespace prodopt
