#include "prodopt/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <exception>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <ostream>
#include <thread>
#include <utility>

#include "prodopt/cost.hpp"
#include "prodopt/errors.hpp"
#include "prodopt/oracle.hpp"

namespace prodopt {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Runs fn(0..count-1) on a bounded pool; each item writes only its own
// output slot, so the result is identical to the serial order.  The first
// exception wins and stops the remaining items.
void run_indexed(std::size_t count, int workers,
                 const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex gate;
  std::exception_ptr first_error;
  auto body = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      {
        std::lock_guard<std::mutex> lock(gate);
        if (first_error) return;
      }
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(gate);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(workers), count);
  std::vector<std::thread> pool;
  pool.reserve(n);
  for (std::size_t i = 0; i < n; ++i) pool.emplace_back(body);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

// Least-squares slope of log y against log k over the positive entries;
// NaN with fewer than two usable points.
double loglog_slope(const std::vector<std::pair<double, double>>& pts) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int m = 0;
  for (const auto& [k, y] : pts) {
    if (!(y > 0.0) || !std::isfinite(y)) continue;
    const double x = std::log(k), ly = std::log(y);
    sx += x;
    sy += ly;
    sxx += x * x;
    sxy += x * ly;
    ++m;
  }
  const double denom = m * sxx - sx * sx;
  if (m < 2 || denom == 0.0) return kNaN;
  return (m * sxy - sx * sy) / denom;
}

int order_position(const std::vector<int>& orders, int q) {
  const auto it = std::find(orders.begin(), orders.end(), q);
  return it == orders.end() ? -1 : static_cast<int>(it - orders.begin());
}

std::string order_column(const std::string& stem, int q) {
  return stem + "_q" + std::to_string(q);
}

}  // namespace

std::vector<double> TimeGrid::values() const {
  if (!points.empty()) return points;
  std::vector<double> out(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const double frac = count == 1 ? 0.0 : static_cast<double>(i) / (count - 1);
    out[static_cast<std::size_t>(i)] =
        log_spacing ? min * std::pow(max / min, frac) : min + (max - min) * frac;
  }
  return out;
}

HamiltonianModel build_model(const ExperimentConfig& config) {
  switch (config.kind) {
    case ModelKind::XY:
      return build_xy(config.model);
    case ModelKind::TFIM:
      return build_tfim(config.model);
    case ModelKind::Custom:
      return build_custom(config.custom_terms, config.custom_normalize);
  }
  throw ConfigError("unknown model kind");
}

void validate_config(const ExperimentConfig& config) {
  if (config.kind == ModelKind::Custom && config.custom_terms.empty())
    throw ConfigError("custom model needs a term list");
  if (config.layers < 2) throw ConfigError("need at least two layers");

  if (config.grid.points.empty()) {
    if (config.grid.count < 1) throw ConfigError("time grid needs at least one point");
    if (!(config.grid.min > 0.0)) throw ConfigError("time grid must start above zero");
    if (config.grid.count > 1 && !(config.grid.max > config.grid.min))
      throw ConfigError("time grid must be increasing");
  } else {
    double prev = 0.0;
    for (double s : config.grid.points) {
      if (!(s > prev)) throw ConfigError("explicit time grid must be positive and increasing");
      prev = s;
    }
  }

  if (config.orders.empty()) throw ConfigError("need at least one product-formula order");
  for (int q : config.orders) {
    if (q != 1 && q != 2 && q != 4)
      throw ConfigError("unsupported product-formula order " + std::to_string(q));
    if (std::count(config.orders.begin(), config.orders.end(), q) != 1)
      throw ConfigError("duplicate product-formula order");
  }

  if (config.k_list.empty()) throw ConfigError("repetition list is empty");
  int prev_k = 0;
  for (int k : config.k_list) {
    if (k <= prev_k) throw ConfigError("repetition list must be positive and increasing");
    prev_k = k;
  }
  if (config.repeat_k_max < 1) throw ConfigError("repetition cap must be positive");

  if (config.thresholds.empty()) throw ConfigError("threshold list is empty");
  for (double e : config.thresholds)
    if (!(e > 0.0 && e < 1.0)) throw ConfigError("thresholds must lie in (0, 1)");

  const std::vector<double> grid = config.grid.values();
  if (!(config.maxtime_step > 0.0) || config.maxtime_step > grid.back())
    throw ConfigError("scan step must be positive and within the grid");
  if (config.maxtime_reference_steps < 1)
    throw ConfigError("reference step count must be positive");
  if (config.workers < 1) throw ConfigError("worker count must be positive");
}

std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

void write_csv(std::ostream& out, const Table& table) {
  for (std::size_t c = 0; c < table.columns.size(); ++c) {
    if (c) out << ',';
    out << table.columns[c];
  }
  out << '\n';
  for (const auto& row : table.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out << ',';
      out << format_double(row[c]);
    }
    out << '\n';
  }
}

void write_csv_file(const std::string& path, const Table& table) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open output file " + path);
  write_csv(out, table);
}

// ---------------------------------------------------------------------------

Table SweepResult::to_table() const {
  Table table;
  table.columns = {"scaled_time", "t", "c_opt", "c_trotter", "e_opt", "eps_var"};
  for (int q : orders) table.columns.push_back(order_column("eps", q));
  table.columns.push_back("r_eps");
  table.columns.push_back("r_e");
  for (const SweepRecord& rec : records) {
    std::vector<double> row = {rec.scaled_time, rec.t,     rec.c_opt,
                               rec.c_trotter,   rec.e_opt, rec.eps_var};
    row.insert(row.end(), rec.eps_trotter.begin(), rec.eps_trotter.end());
    row.push_back(rec.r_eps);
    row.push_back(rec.r_e);
    table.rows.push_back(std::move(row));
  }
  return table;
}

SweepResult sweep_time(const ExperimentConfig& config) {
  validate_config(config);
  const HamiltonianModel model = build_model(config);
  const double scale = std::sqrt(2.0 * model.n());

  CompileOptions copts;
  copts.with_third_order = true;
  const CostPolynomial poly = compile(model, copts);

  SweepResult result;
  result.orders = config.orders;
  result.oracle_available = model.n() <= kDenseQubitLimit;
  std::optional<Propagator> prop;
  if (result.oracle_available) prop.emplace(model);

  const std::vector<double> grid = config.grid.values();
  const int q1 = order_position(config.orders, 1);
  result.records.resize(grid.size());
  run_indexed(grid.size(), config.workers, [&](std::size_t i) {
    SweepRecord rec;
    rec.scaled_time = grid[i];
    rec.t = grid[i] / scale;
    const OptimizationResult opt =
        minimize(poly, rec.t, config.layers, config.optimizer);
    rec.c_opt = opt.best_cost;
    rec.c_trotter = opt.trotter_cost;
    rec.e_opt = error_term(poly, opt.best_sheet);
    rec.eps_var = kNaN;
    rec.eps_trotter.assign(config.orders.size(), kNaN);
    rec.r_eps = kNaN;
    rec.r_e = kNaN;
    if (result.oracle_available) {
      const DenseMatrix target = prop->at(rec.t);
      rec.eps_var = epsilon(target, ansatz_unitary(model, opt.best_sheet));
      for (std::size_t o = 0; o < config.orders.size(); ++o)
        rec.eps_trotter[o] = epsilon(
            target, trotter_unitary(model, rec.t, config.layers, config.orders[o]));
      if (q1 >= 0) {
        rec.r_eps = rec.eps_trotter[static_cast<std::size_t>(q1)] / rec.eps_var;
        rec.r_e = rec.eps_trotter[static_cast<std::size_t>(q1)] / rec.e_opt;
      }
    }
    result.records[i] = std::move(rec);
  });
  return result;
}

// ---------------------------------------------------------------------------

Table RepeatResult::to_table() const {
  Table table;
  table.columns = {"scaled_time", "t", "k", "scaled_horizon", "c_k_sq", "eps_var"};
  for (int q : orders) table.columns.push_back(order_column("eps", q));
  for (const RepeatRecord& rec : records) {
    std::vector<double> row = {rec.scaled_time,    rec.t,      static_cast<double>(rec.k),
                               rec.scaled_horizon, rec.c_k_sq, rec.eps_var};
    row.insert(row.end(), rec.eps_trotter.begin(), rec.eps_trotter.end());
    table.rows.push_back(std::move(row));
  }
  return table;
}

RepeatResult repeat_scaling(const ExperimentConfig& config) {
  validate_config(config);
  const HamiltonianModel model = build_model(config);
  const double scale = std::sqrt(2.0 * model.n());
  const CostPolynomial poly = compile(model);

  RepeatResult result;
  result.orders = config.orders;
  result.oracle_available = model.n() <= kDenseQubitLimit;
  std::optional<Propagator> prop;
  if (result.oracle_available) prop.emplace(model);

  const std::vector<double> grid = config.grid.values();
  const std::size_t kmax = static_cast<std::size_t>(config.repeat_k_max);
  result.records.assign(grid.size() * kmax, RepeatRecord{});
  result.slopes.assign(grid.size(), RepeatSlopes{});

  run_indexed(grid.size(), config.workers, [&](std::size_t i) {
    const double t = grid[i] / scale;
    const OptimizationResult opt = minimize(poly, t, config.layers, config.optimizer);

    std::vector<DenseMatrix> bases;  // variational first, then the orders
    std::vector<DenseMatrix> powers;
    if (result.oracle_available) {
      bases.push_back(ansatz_unitary(model, opt.best_sheet));
      for (int q : config.orders)
        bases.push_back(trotter_unitary(model, t, config.layers, q));
      powers = bases;
    }

    std::vector<std::pair<double, double>> c_pts, eps_pts;
    for (std::size_t k = 1; k <= kmax; ++k) {
      RepeatRecord rec;
      rec.scaled_time = grid[i];
      rec.t = t;
      rec.k = static_cast<int>(k);
      rec.scaled_horizon = grid[i] * static_cast<double>(k);
      rec.c_k_sq =
          cost_sq(poly, repeat_sheet(opt.best_sheet, static_cast<int>(k)));
      rec.eps_var = kNaN;
      rec.eps_trotter.assign(config.orders.size(), kNaN);
      if (result.oracle_available) {
        if (k > 1)
          for (std::size_t b = 0; b < powers.size(); ++b) powers[b] *= bases[b];
        const DenseMatrix target = prop->at(t * static_cast<double>(k));
        rec.eps_var = epsilon(target, powers[0]);
        for (std::size_t o = 0; o < config.orders.size(); ++o)
          rec.eps_trotter[o] = epsilon(target, powers[o + 1]);
        if (rec.scaled_horizon < result.horizon_window)
          eps_pts.emplace_back(static_cast<double>(k), rec.eps_var * rec.eps_var);
      }
      c_pts.emplace_back(static_cast<double>(k), rec.c_k_sq);
      result.records[i * kmax + (k - 1)] = std::move(rec);
    }

    RepeatSlopes diag;
    diag.scaled_time = grid[i];
    diag.slope_c_sq = loglog_slope(c_pts);
    diag.slope_eps_sq = loglog_slope(eps_pts);
    diag.eps_points = static_cast<int>(eps_pts.size());
    result.slopes[i] = diag;
  });
  return result;
}

// ---------------------------------------------------------------------------

Table MaxTimeResult::to_table() const {
  Table table;
  table.columns = {"threshold", "k"};
  const auto method_columns = [&](const std::string& m) {
    table.columns.push_back(m + "_feasible");
    table.columns.push_back(m + "_t_step");
    table.columns.push_back(m + "_t_max");
    table.columns.push_back(m + "_err_at");
    table.columns.push_back(m + "_err_next");
  };
  method_columns("var");
  for (int q : orders) method_columns("q" + std::to_string(q));
  table.columns.push_back("ratio_var_over_q1");
  for (const MaxTimeRecord& rec : records) {
    std::vector<double> row = {rec.threshold, static_cast<double>(rec.k)};
    for (const MethodTime& m : rec.methods) {
      row.push_back(m.feasible ? 1.0 : 0.0);
      row.push_back(m.t_step);
      row.push_back(m.t_max);
      row.push_back(m.err_at);
      row.push_back(m.err_next);
    }
    row.push_back(rec.ratio_var_over_q1);
    table.rows.push_back(std::move(row));
  }
  return table;
}

MaxTimeResult max_time_search(const ExperimentConfig& config) {
  validate_config(config);
  const HamiltonianModel model = build_model(config);
  const double scale = std::sqrt(2.0 * model.n());
  const CostPolynomial poly = compile(model);
  const Propagator prop(model);  // capacity errors surface here

  const double step = config.maxtime_step;
  const double top = config.grid.values().back();
  std::vector<double> grid;
  for (int i = 1; step * i <= top * (1.0 + 1e-12); ++i) grid.push_back(step * i);

  const std::size_t n_methods = 1 + config.orders.size();
  const std::size_t n_k = config.k_list.size();
  // err[method][k index][grid index]
  std::vector<std::vector<std::vector<double>>> err(
      n_methods, std::vector<std::vector<double>>(n_k, std::vector<double>(grid.size())));

  Eigen::MatrixXd warm;
  double t_prev = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double t = grid[i] / scale;
    const OptimizationResult opt =
        warm.size() == 0
            ? minimize(poly, t, config.layers, config.optimizer)
            : minimize(poly, t, config.layers, config.optimizer,
                       Eigen::MatrixXd(warm * (t / t_prev)));
    warm = opt.best_sheet.matrix().topRows(config.layers - 1);
    t_prev = t;

    std::vector<DenseMatrix> bases;
    bases.push_back(ansatz_unitary(model, opt.best_sheet));
    for (int q : config.orders)
      bases.push_back(
          trotter_unitary(model, t, config.maxtime_reference_steps, q));

    // Walk the sorted K list with cached delta powers, so each horizon
    // costs one multiply beyond its predecessor for uniform spacing.
    std::vector<DenseMatrix> cur(n_methods);
    std::vector<int> cur_k(n_methods, 0);
    for (std::size_t ki = 0; ki < n_k; ++ki) {
      const int k = config.k_list[ki];
      const DenseMatrix target = prop.at(t * k);
      for (std::size_t m = 0; m < n_methods; ++m) {
        int delta = k - cur_k[m];
        DenseMatrix jump;  // bases[m]^delta by binary powering
        DenseMatrix sq = bases[m];
        for (bool first = true; delta > 0; delta >>= 1) {
          if (delta & 1) {
            jump = first ? sq : DenseMatrix(jump * sq);
            first = false;
          }
          if (delta > 1) sq = sq * sq;
        }
        cur[m] = cur_k[m] == 0 ? std::move(jump) : DenseMatrix(cur[m] * jump);
        cur_k[m] = k;
        err[m][ki][i] = epsilon(target, cur[m]);
      }
    }
  }

  MaxTimeResult result;
  result.orders = config.orders;
  result.step = step;
  const int q1 = order_position(config.orders, 1);
  for (double threshold : config.thresholds)
    for (std::size_t ki = 0; ki < n_k; ++ki) {
      MaxTimeRecord rec;
      rec.threshold = threshold;
      rec.k = config.k_list[ki];
      for (std::size_t m = 0; m < n_methods; ++m) {
        MethodTime mt;
        mt.method = m == 0 ? "var" : "q" + std::to_string(config.orders[m - 1]);
        std::ptrdiff_t hit = -1;
        for (std::size_t i = 0; i < grid.size(); ++i)
          if (err[m][ki][i] <= threshold) hit = static_cast<std::ptrdiff_t>(i);
        if (hit >= 0) {
          const std::size_t i = static_cast<std::size_t>(hit);
          mt.feasible = true;
          mt.t_step = grid[i] / scale;
          mt.t_max = mt.t_step * rec.k;
          mt.err_at = err[m][ki][i];
          mt.err_next = i + 1 < grid.size() ? err[m][ki][i + 1] : kNaN;
        } else {
          mt.err_at = kNaN;
          mt.err_next = err[m][ki][0];  // even the smallest step failed
        }
        rec.methods.push_back(std::move(mt));
      }
      rec.ratio_var_over_q1 =
          q1 >= 0 ? rec.methods[0].t_max / rec.methods[static_cast<std::size_t>(q1) + 1].t_max
                  : kNaN;
      result.records.push_back(std::move(rec));
    }
  return result;
}

}  // namespace prodopt
