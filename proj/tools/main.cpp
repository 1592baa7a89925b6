#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "prodopt/config.hpp"
#include "prodopt/cost.hpp"
#include "prodopt/errors.hpp"
#include "prodopt/experiments.hpp"
#include "prodopt/model.hpp"
#include "prodopt/oracle.hpp"
#include "prodopt/pauli.hpp"

namespace {

using nlohmann::json;
using namespace prodopt;

constexpr const char* kVersion = "0.1.0";

double unit_double(std::mt19937_64& rng) { return (rng() >> 11) * 0x1.0p-53; }

std::string resolve_output_dir(const ExperimentConfig& config,
                               const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("PRODOPT_OUTPUT_DIR"); env && *env)
    return env;
  return config.output_dir;
}

json version_block() {
  return {{"library", kVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                        std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"compiler", __VERSION__}};
}

void write_manifest(const std::string& dir, const std::string& subcommand,
                    const ExperimentConfig& config,
                    const std::vector<std::string>& outputs, double wall_seconds,
                    json extras) {
  json manifest;
  manifest["subcommand"] = subcommand;
  manifest["config"] = json::parse(config_to_json(config));
  manifest["outputs"] = outputs;
  manifest["versions"] = version_block();
  manifest["wall_time_seconds"] = wall_seconds;
  manifest["gate_accounting"] =
      "exponentials per step: M for order 1, 2M-1 for order 2, 5(2M-1) for "
      "order 4; the optimized circuit applies layers*M exponentials";
  for (auto& [key, value] : extras.items()) manifest[key] = std::move(value);
  std::ofstream out(dir + "/manifest.json");
  if (!out) throw ConfigError("cannot write manifest in " + dir);
  out << manifest.dump(2) << '\n';
}

json slope_block(const RepeatResult& result) {
  json slopes = json::array();
  for (const RepeatSlopes& s : result.slopes)
    slopes.push_back({{"scaled_time", s.scaled_time},
                      {"slope_c_sq", s.slope_c_sq},
                      {"slope_eps_sq", s.slope_eps_sq},
                      {"eps_points", s.eps_points}});
  return slopes;
}

int run_driver(const std::string& subcommand, const ExperimentConfig& config,
               const std::string& dir) {
  std::filesystem::create_directories(dir);
  const auto started = std::chrono::steady_clock::now();
  std::vector<std::string> outputs;
  json extras;

  if (subcommand == "sweep") {
    const SweepResult result = sweep_time(config);
    write_csv_file(dir + "/sweep.csv", result.to_table());
    outputs = {"sweep.csv"};
    extras["oracle_available"] = result.oracle_available;
  } else if (subcommand == "repeat") {
    const RepeatResult result = repeat_scaling(config);
    write_csv_file(dir + "/repeat.csv", result.to_table());
    outputs = {"repeat.csv"};
    extras["oracle_available"] = result.oracle_available;
    extras["horizon_window"] = result.horizon_window;
    extras["slopes"] = slope_block(result);
  } else if (subcommand == "maxtime") {
    const MaxTimeResult result = max_time_search(config);
    write_csv_file(dir + "/maxtime.csv", result.to_table());
    outputs = {"maxtime.csv"};
    extras["scan_step_scaled"] = result.step;
  } else {  // appendix
    ExperimentConfig ising = config;
    ising.kind = ModelKind::TFIM;
    ExperimentConfig xy4 = config;
    xy4.kind = ModelKind::XY;
    xy4.layers = 4;
    ExperimentConfig xy6 = xy4;
    xy6.layers = 6;
    write_csv_file(dir + "/sweep_tfim.csv", sweep_time(ising).to_table());
    write_csv_file(dir + "/sweep_xy_r4.csv", sweep_time(xy4).to_table());
    write_csv_file(dir + "/sweep_xy_r6.csv", sweep_time(xy6).to_table());
    outputs = {"sweep_tfim.csv", "sweep_xy_r4.csv", "sweep_xy_r6.csv"};
    extras["variants"] = json::array({
        json{{"file", "sweep_tfim.csv"}, {"kind", "tfim"}, {"layers", config.layers}},
        json{{"file", "sweep_xy_r4.csv"}, {"kind", "xy"}, {"layers", 4}},
        json{{"file", "sweep_xy_r6.csv"}, {"kind", "xy"}, {"layers", 6}},
    });
    extras["note_tfim"] =
        "a first-order splitting of the two-block transverse-field model is "
        "unitarily similar to a symmetric second-order splitting, so moving "
        "to second order gains little on it";
  }

  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
          .count();
  write_manifest(dir, subcommand, config, outputs, wall, std::move(extras));
  return 0;
}

// Analytic gradient against central differences on a random-coupling ring;
// reports the worst relative error over all free entries and trials.
int run_gradcheck(int n, std::uint64_t seed, int trials, int layers) {
  CouplingSpec spec;
  spec.lattice = LatticeInfo{n, 1, true};
  spec.j_y = {0.5, 0.25};
  spec.j_z = {1.0, 0.25};
  spec.field = {0.25, 0.0};
  spec.seed = seed;
  const HamiltonianModel model = build_xy(spec);
  const CostPolynomial poly = compile(model);
  const double t = 0.3 / std::sqrt(2.0 * model.n());
  const ParamSheet trotter = ParamSheet::trotter(model, t, layers);
  const Eigen::MatrixXd base = trotter.matrix().topRows(layers - 1);

  std::mt19937_64 rng(seed);
  const double h = 1e-6;
  double worst = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    Eigen::MatrixXd free = base;
    for (Eigen::Index r = 0; r < free.rows(); ++r)
      for (Eigen::Index j = 0; j < free.cols(); ++j)
        free(r, j) += (unit_double(rng) - 0.5) * std::abs(trotter.targets()(j));
    const Eigen::MatrixXd grad =
        grad_cost_sq(poly, ParamSheet::constrained(model, t, layers, free));
    for (Eigen::Index r = 0; r < free.rows(); ++r)
      for (Eigen::Index j = 0; j < free.cols(); ++j) {
        Eigen::MatrixXd probe = free;
        probe(r, j) += h;
        const double up =
            cost_sq(poly, ParamSheet::constrained(model, t, layers, probe));
        probe(r, j) -= 2.0 * h;
        const double down =
            cost_sq(poly, ParamSheet::constrained(model, t, layers, probe));
        const double fd = (up - down) / (2.0 * h);
        const double rel =
            std::abs(fd - grad(r, j)) / std::max(1.0, std::abs(grad(r, j)));
        worst = std::max(worst, rel);
      }
  }
  std::printf("max relative gradient error: %s\n", format_double(worst).c_str());
  return worst < 1e-6 ? 0 : 1;
}

// Symbolic squared cost against a from-scratch dense evaluation: regroup the
// product expansion onto ordered term pairs, assemble the commutator matrix,
// and take the normalized Hilbert-Schmidt norm.
int run_oracle_check(int n, int trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Eigen::Index dim = Eigen::Index(1) << n;
  double worst = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    std::set<std::string> seen;
    std::vector<std::pair<std::string, double>> terms;
    const int want = 3 + static_cast<int>(rng() % 4);
    while (static_cast<int>(terms.size()) < want) {
      std::string label;
      for (int q = 0; q < n; ++q) label += "IXYZ"[rng() % 4];
      if (label == std::string(static_cast<std::size_t>(n), 'I')) continue;
      if (!seen.insert(label).second) continue;
      const double mag = 0.3 + 0.7 * unit_double(rng);
      terms.emplace_back(label, rng() % 2 ? mag : -mag);
    }
    const HamiltonianModel model = build_custom(terms, false);
    const CostPolynomial poly = compile(model);
    const int layers = 2 + static_cast<int>(rng() % 2);
    const double t = 0.1 + 0.5 * unit_double(rng);
    Eigen::MatrixXd free(layers - 1, model.term_count());
    for (Eigen::Index r = 0; r < free.rows(); ++r)
      for (Eigen::Index j = 0; j < free.cols(); ++j)
        free(r, j) = (2.0 * unit_double(rng) - 1.0) * 0.8;
    const ParamSheet sheet = ParamSheet::constrained(model, t, layers, free);
    const double symbolic = cost_sq(poly, sheet);

    // Flatten (layer, term) in application order and regroup onto pairs.
    std::vector<std::pair<int, double>> flat;
    for (Eigen::Index r = 0; r < sheet.matrix().rows(); ++r)
      for (Eigen::Index j = 0; j < sheet.matrix().cols(); ++j)
        flat.emplace_back(static_cast<int>(j), sheet.matrix()(r, j));
    DenseMatrix assembled = DenseMatrix::Zero(dim, dim);
    std::vector<DenseMatrix> dense_terms;
    for (int j = 0; j < model.term_count(); ++j)
      dense_terms.push_back(to_dense(model.term(j).op));
    for (std::size_t a = 1; a < flat.size(); ++a)
      for (std::size_t b = 0; b < a; ++b) {
        if (flat[a].first == flat[b].first) continue;
        const DenseMatrix& pa = dense_terms[static_cast<std::size_t>(flat[a].first)];
        const DenseMatrix& pb = dense_terms[static_cast<std::size_t>(flat[b].first)];
        assembled += 0.5 * flat[a].second * flat[b].second * (pa * pb - pb * pa);
      }
    const double dense = assembled.squaredNorm() / static_cast<double>(dim);
    const double rel =
        std::abs(symbolic - dense) / std::max({std::abs(symbolic), std::abs(dense), 1e-30});
    if (std::abs(symbolic - dense) > 1e-14) worst = std::max(worst, rel);
  }
  std::printf("max relative cost deviation: %s\n", format_double(worst).c_str());
  return worst < 1e-10 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Classical optimization of product-formula simulation circuits"};
  app.require_subcommand(1);

  std::string config_path;
  std::string output_dir;
  int workers = 0;

  const auto add_driver = [&](const std::string& name, const std::string& blurb) {
    CLI::App* sub = app.add_subcommand(name, blurb);
    sub->add_option("--config", config_path, "JSON run description")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--output-dir", output_dir,
                    "overrides the config and PRODOPT_OUTPUT_DIR");
    sub->add_option("--workers", workers, "overrides the config worker count");
    return sub;
  };
  add_driver("sweep", "time sweep of cost, error estimate, and exact errors");
  add_driver("repeat", "repetition scaling of cost and exact errors");
  add_driver("maxtime", "maximal simulation time per accuracy threshold");
  add_driver("appendix", "transverse-field and deep-circuit sweep variants");

  int check_n = 4;
  int check_trials = 20;
  std::uint64_t check_seed = 7;
  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "analytic gradient vs finite differences");
  gradcheck->add_option("--n", check_n, "ring length");
  gradcheck->add_option("--seed", check_seed, "coupling and sample seed");
  gradcheck->add_option("--trials", check_trials, "random sheets to probe");

  int oracle_n = 3;
  int oracle_trials = 50;
  std::uint64_t oracle_seed = 1;
  CLI::App* oracle_check =
      app.add_subcommand("oracle-check", "symbolic cost vs dense matrix norm");
  oracle_check->add_option("--n", oracle_n, "qubit count");
  oracle_check->add_option("--trials", oracle_trials, "random models to draw");
  oracle_check->add_option("--seed", oracle_seed, "model and sheet seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gradcheck->parsed())
      return run_gradcheck(check_n, check_seed, check_trials, 3);
    if (oracle_check->parsed())
      return run_oracle_check(oracle_n, oracle_trials, oracle_seed);

    ExperimentConfig config = load_config_file(config_path);
    if (workers > 0) config.workers = workers;
    validate_config(config);
    const std::string subcommand = app.get_subcommands().front()->get_name();
    return run_driver(subcommand, config, resolve_output_dir(config, output_dir));
  } catch (const CapacityError& e) {
    std::fprintf(stderr, "capacity error: %s\n", e.what());
    return 3;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 4;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DimensionError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
