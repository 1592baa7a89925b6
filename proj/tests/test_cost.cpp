#include <doctest.h>

#include <array>
#include <cmath>
#include <complex>
#include <map>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "oracles.hpp"
#include "prodopt/cost.hpp"
#include "prodopt/errors.hpp"
#include "prodopt/model.hpp"
#include "prodopt/pauli.hpp"

using namespace prodopt;

namespace {

PauliSum term_sum(const HamiltonianModel& model, int j) {
  PauliSum s(model.n());
  s.add(model.term(j).op);
  return s;
}

PauliSum pair_op(const HamiltonianModel& model, int j, int jp) {
  return commutator(term_sum(model, j), term_sum(model, jp));
}

PauliSum nested_op(const HamiltonianModel& model, int j, int k, int l) {
  return commutator(term_sum(model, j), pair_op(model, k, l));
}

// Multi-index flattening in row-major (layer, term) order.
std::vector<std::pair<int, double>> flatten(const Eigen::MatrixXd& theta) {
  std::vector<std::pair<int, double>> flat;
  for (Eigen::Index r = 0; r < theta.rows(); ++r)
    for (Eigen::Index j = 0; j < theta.cols(); ++j)
      flat.emplace_back(static_cast<int>(j), theta(r, j));
  return flat;
}

// Literal regrouping of (1/2) sum_{a>b} th_a th_b [H_{j(a)}, H_{j(b)}] onto
// ordered term pairs.
std::map<std::pair<int, int>, double> naive_chi(const Eigen::MatrixXd& theta) {
  const auto flat = flatten(theta);
  std::map<std::pair<int, int>, double> chi;
  for (std::size_t a = 1; a < flat.size(); ++a)
    for (std::size_t b = 0; b < a; ++b) {
      const auto [ja, ta] = flat[a];
      const auto [jb, tb] = flat[b];
      if (ja == jb) continue;
      if (ja > jb)
        chi[{ja, jb}] += 0.5 * ta * tb;
      else
        chi[{jb, ja}] -= 0.5 * ta * tb;
    }
  return chi;
}

// Literal regrouping of the third-order product expansion
//   (1/12) sum_{a != b} th_a^2 th_b [H_{j(a)}, [H_{j(a)}, H_{j(b)}]]
// + (1/6) sum_{a>b>c} th_a th_b th_c ([H_{j(a)}, [H_{j(b)}, H_{j(c)}]]
//                                    + [H_{j(c)}, [H_{j(b)}, H_{j(a)}]])
// onto ordered term triples.
std::map<std::array<int, 3>, double> naive_phi(const Eigen::MatrixXd& theta) {
  const auto flat = flatten(theta);
  std::map<std::array<int, 3>, double> phi;
  for (std::size_t a = 0; a < flat.size(); ++a)
    for (std::size_t b = 0; b < flat.size(); ++b) {
      if (a == b || flat[a].first == flat[b].first) continue;
      phi[{flat[a].first, flat[a].first, flat[b].first}] +=
          flat[a].second * flat[a].second * flat[b].second / 12.0;
    }
  for (std::size_t a = 2; a < flat.size(); ++a)
    for (std::size_t b = 1; b < a; ++b)
      for (std::size_t c = 0; c < b; ++c) {
        const double w = flat[a].second * flat[b].second * flat[c].second / 6.0;
        phi[{flat[a].first, flat[b].first, flat[c].first}] += w;
        phi[{flat[c].first, flat[b].first, flat[a].first}] += w;
      }
  return phi;
}

// Exponent of the ordered product, tracked by polynomial degree in theta and
// truncated after degree three.  Factors are merged pairwise from the left,
// so this follows an entirely different recursion than the closed-form sums.
struct DegreeSplitExponent {
  PauliSum d1, d2, d3;
};

DegreeSplitExponent merged_exponent(const HamiltonianModel& model,
                                    const Eigen::MatrixXd& theta) {
  const auto flat = flatten(theta);
  DegreeSplitExponent z{PauliSum(model.n()), PauliSum(model.n()), PauliSum(model.n())};
  for (const auto& [j, angle] : flat) {
    PauliSum c(model.n());
    c.add(model.term(j).op, Complex(0.0, -angle));
    PauliSum half_cz1 = commutator(c, z.d1);
    half_cz1 *= 0.5;
    PauliSum half_cz2 = commutator(c, z.d2);
    half_cz2 *= 0.5;
    PauliSum ccz1 = commutator(c, commutator(c, z.d1));
    ccz1 *= 1.0 / 12.0;
    PauliSum zzc = commutator(z.d1, commutator(z.d1, c));
    zzc *= 1.0 / 12.0;
    z.d3 += half_cz2;
    z.d3 += ccz1;
    z.d3 += zzc;
    z.d2 += half_cz1;
    z.d1 += c;
  }
  return z;
}

DenseMatrix dense_unitary(const HamiltonianModel& model, const Eigen::MatrixXd& theta,
                          double s) {
  const Eigen::Index dim = Eigen::Index(1) << model.n();
  std::vector<DenseMatrix> dense;
  dense.reserve(static_cast<std::size_t>(model.term_count()));
  for (int j = 0; j < model.term_count(); ++j)
    dense.push_back(testoracle::dense_from_axes(model.n(), model.term(j).op.x_mask(),
                                                model.term(j).op.z_mask()));
  DenseMatrix u = DenseMatrix::Identity(dim, dim);
  const DenseMatrix id = DenseMatrix::Identity(dim, dim);
  for (Eigen::Index r = 0; r < theta.rows(); ++r)
    for (Eigen::Index j = 0; j < theta.cols(); ++j) {
      const double angle = s * theta(r, j);
      // exp(-i a P) = cos(a) I - i sin(a) P for an involutory string P.
      u = (std::cos(angle) * id -
           Complex(0.0, 1.0) * std::sin(angle) * dense[static_cast<std::size_t>(j)]) *
          u;
    }
  return u;
}

DenseMatrix matrix_log_unitary(const DenseMatrix& u) {
  Eigen::ComplexEigenSolver<DenseMatrix> solver(u);
  REQUIRE(solver.info() == Eigen::Success);
  DenseMatrix d = DenseMatrix::Zero(u.rows(), u.cols());
  for (Eigen::Index i = 0; i < u.rows(); ++i) d(i, i) = std::log(solver.eigenvalues()(i));
  const DenseMatrix vinv = solver.eigenvectors().inverse();
  const DenseMatrix logm = solver.eigenvectors() * d * vinv;
  // residual check: exponentiating back must reproduce the input
  DenseMatrix expd = DenseMatrix::Zero(u.rows(), u.cols());
  for (Eigen::Index i = 0; i < u.rows(); ++i) expd(i, i) = std::exp(d(i, i));
  const double residual = (solver.eigenvectors() * expd * vinv - u).norm();
  REQUIRE(residual < 1e-10 * static_cast<double>(u.rows()));
  return logm;
}

// Extracts the normalized HS norms of the degree-2 and degree-3 exponent
// coefficients from dense logarithms of the scaled-product family, using two
// Richardson levels on the parity-split series.
struct ExtractedNorms {
  double c2, c3;
};

ExtractedNorms dense_bch_norms(const HamiltonianModel& model, const ParamSheet& sheet) {
  const Eigen::Index dim = Eigen::Index(1) << model.n();
  DenseMatrix w1 = DenseMatrix::Zero(dim, dim);
  for (int j = 0; j < model.term_count(); ++j)
    w1 += Complex(0.0, -sheet.matrix().col(j).sum()) *
          testoracle::dense_from_axes(model.n(), model.term(j).op.x_mask(),
                                      model.term(j).op.z_mask());

  const double s0 = 0.5;
  std::array<DenseMatrix, 3> even, odd;
  for (int k = 0; k < 3; ++k) {
    const double s = s0 / (1 << k);
    const DenseMatrix lp = matrix_log_unitary(dense_unitary(model, sheet.matrix(), s));
    const DenseMatrix lm = matrix_log_unitary(dense_unitary(model, sheet.matrix(), -s));
    even[static_cast<std::size_t>(k)] = (lp + lm) / (2.0 * s * s);
    odd[static_cast<std::size_t>(k)] = ((lp - lm) / 2.0 - s * w1) / (s * s * s);
  }
  const auto richardson = [](const std::array<DenseMatrix, 3>& h) {
    const DenseMatrix r1a = (4.0 * h[1] - h[0]) / 3.0;
    const DenseMatrix r1b = (4.0 * h[2] - h[1]) / 3.0;
    return DenseMatrix((16.0 * r1b - r1a) / 15.0);
  };
  return {testoracle::normalized_frobenius(richardson(even)),
          testoracle::normalized_frobenius(richardson(odd))};
}

ParamSheet perturbed_constrained(const HamiltonianModel& model, double t, int layers,
                                 std::mt19937_64& rng, double spread) {
  Eigen::MatrixXd free_rows(layers - 1, model.term_count());
  for (int r = 0; r < layers - 1; ++r)
    for (int j = 0; j < model.term_count(); ++j)
      free_rows(r, j) = t * model.term(j).coeff / layers +
                        spread * t * (2.0 * testoracle::unit_double(rng) - 1.0);
  return ParamSheet::constrained(model, t, layers, free_rows);
}

Eigen::MatrixXd random_matrix(int rows, int cols, double scale, std::mt19937_64& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      m(r, c) = scale * (2.0 * testoracle::unit_double(rng) - 1.0);
  return m;
}

// Trotter values for class-shared parameters, layers x class_count.
Eigen::MatrixXd trotter_shared(const HamiltonianModel& model, double t, int layers) {
  Eigen::MatrixXd shared(layers, model.class_count());
  for (int a = 0; a < model.class_count(); ++a) {
    const int rep = model.class_representatives()[static_cast<std::size_t>(a)];
    shared.col(a).setConstant(t * model.term(rep).coeff / layers);
  }
  return shared;
}

HamiltonianModel random_custom_model(int n, int terms, std::mt19937_64& rng) {
  std::set<std::string> seen;
  std::vector<std::pair<std::string, double>> spec;
  while (static_cast<int>(spec.size()) < terms) {
    std::string label;
    for (int q = 0; q < n; ++q) label += "IXYZ"[rng() % 4];
    if (label == std::string(static_cast<std::size_t>(n), 'I')) continue;
    if (!seen.insert(label).second) continue;
    const double mag = 0.3 + 0.7 * testoracle::unit_double(rng);
    spec.emplace_back(label, rng() % 2 ? mag : -mag);
  }
  return build_custom(spec, false);
}

double rel_diff(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

}  // namespace

TEST_CASE("trotter sheets split the targets evenly and satisfy the constraint") {
  CouplingSpec spec;
  spec.lattice = LatticeInfo{4, 1, true};
  const HamiltonianModel model = build_xy(spec);
  const ParamSheet sheet = ParamSheet::trotter(model, 0.3, 5);
  REQUIRE(sheet.layers() == 5);
  REQUIRE(sheet.terms() == model.term_count());
  CHECK(sheet.constrained());
  CHECK(sheet.t() == doctest::Approx(0.3));
  for (int r = 0; r < 5; ++r)
    for (int j = 0; j < model.term_count(); ++j)
      CHECK(sheet.theta(r, j) ==
            doctest::Approx(0.3 * model.term(j).coeff / 5).epsilon(1e-14));
  CHECK(sheet.xi().lpNorm<Eigen::Infinity>() < 1e-15);
  CHECK(sheet.targets().isApprox(0.3 * Eigen::Map<const Eigen::VectorXd>(
                                           model.coefficients().data(),
                                           model.term_count())));
}

TEST_CASE("constrained sheets recompute the slaved layer on every write") {
  CouplingSpec spec;
  spec.lattice = LatticeInfo{3, 1, false};
  const HamiltonianModel model = build_tfim(spec);
  std::mt19937_64 rng(11);
  const int R = 4, M = model.term_count();
  ParamSheet sheet =
      ParamSheet::constrained(model, 0.7, R, random_matrix(R - 1, M, 0.2, rng));
  CHECK(sheet.constrained());
  CHECK((sheet.matrix().colwise().sum().transpose() - sheet.targets())
            .lpNorm<Eigen::Infinity>() < 1e-15);

  const Eigen::VectorXd packed = sheet.free_parameters();
  REQUIRE(packed.size() == (R - 1) * M);
  for (int r = 0; r < R - 1; ++r)
    for (int j = 0; j < M; ++j) CHECK(packed(r * M + j) == sheet.theta(r, j));

  Eigen::VectorXd moved = packed;
  for (Eigen::Index i = 0; i < moved.size(); ++i)
    moved(i) += 0.05 * (2.0 * testoracle::unit_double(rng) - 1.0);
  sheet.set_free_parameters(moved);
  CHECK((sheet.matrix().colwise().sum().transpose() - sheet.targets())
            .lpNorm<Eigen::Infinity>() < 1e-15);
  CHECK(sheet.free_parameters().isApprox(moved));

  CHECK_THROWS_AS(sheet.set_free_parameters(Eigen::VectorXd::Zero(3)), DimensionError);
  ParamSheet loose = ParamSheet::unconstrained(model, 0.7, sheet.matrix());
  CHECK_THROWS_AS(loose.set_free_parameters(moved), ConfigError);
  CHECK_THROWS_AS(
      ParamSheet::constrained(model, 0.7, R, random_matrix(R, M, 0.1, rng)),
      DimensionError);
  CHECK_THROWS_AS(ParamSheet::trotter(model, 0.7, 0), DimensionError);
}

TEST_CASE("scaling and repetition reshape sheets as documented") {
  CouplingSpec spec;
  spec.lattice = LatticeInfo{3, 1, true};
  const HamiltonianModel model = build_xy(spec);
  std::mt19937_64 rng(5);
  const ParamSheet sheet = perturbed_constrained(model, 0.4, 3, rng, 0.2);

  const ParamSheet half = sheet.scaled(0.5);
  CHECK_FALSE(half.constrained());
  CHECK(half.matrix().isApprox(0.5 * sheet.matrix()));
  CHECK(half.targets().isApprox(sheet.targets()));

  const ParamSheet rep = repeat_sheet(sheet, 4);
  REQUIRE(rep.layers() == 12);
  CHECK(rep.t() == doctest::Approx(1.6));
  for (int m = 0; m < 4; ++m)
    CHECK(rep.matrix().middleRows(3 * m, 3).isApprox(sheet.matrix()));
  CHECK(rep.xi().lpNorm<Eigen::Infinity>() < 1e-14);
  CHECK(repeat_sheet(sheet, 1).matrix().isApprox(sheet.matrix()));
  CHECK_THROWS_AS(repeat_sheet(sheet, 0), DimensionError);
}

TEST_CASE("class-shared parameters expand by column and reduce by column sums") {
  CouplingSpec spec;
  spec.lattice = LatticeInfo{6, 1, true};
  const HamiltonianModel model = build_xy(spec);
  REQUIRE(model.has_classes());
  const int A = model.class_count();
  std::mt19937_64 rng(17);
  const Eigen::MatrixXd shared = random_matrix(3, A, 0.3, rng);
  const ParamSheet sheet = expand_shared(model, 0.5, shared);
  for (int j = 0; j < model.term_count(); ++j) {
    const int a = model.translation_classes()[static_cast<std::size_t>(j)];
    CHECK(sheet.matrix().col(j).isApprox(shared.col(a)));
  }

  const Eigen::MatrixXd grad = random_matrix(2, model.term_count(), 1.0, rng);
  const Eigen::MatrixXd reduced = reduce_shared_grad(model, grad);
  REQUIRE(reduced.cols() == A);
  for (int a = 0; a < A; ++a) {
    Eigen::VectorXd expected = Eigen::VectorXd::Zero(2);
    for (int j = 0; j < model.term_count(); ++j)
      if (model.translation_classes()[static_cast<std::size_t>(j)] == a)
        expected += grad.col(j);
    CHECK(reduced.col(a).isApprox(expected));
  }

  // the two maps are adjoint: <expand(s), g> = <s, reduce(g)>
  CHECK(expand_class_columns(model, shared.topRows(2)).cwiseProduct(grad).sum() ==
        doctest::Approx(shared.topRows(2).cwiseProduct(reduced).sum()));

  CouplingSpec open = spec;
  open.lattice.periodic = false;
  const HamiltonianModel no_classes = build_xy(open);
  CHECK_THROWS_AS(expand_shared(no_classes, 0.5, shared), ConfigError);
  CHECK_THROWS_AS(expand_shared(model, 0.5, random_matrix(3, A + 1, 0.1, rng)),
                  DimensionError);
}

TEST_CASE("compiled pair table stores each anticommuting pair exactly once") {
  CouplingSpec spec;
  spec.lattice = LatticeInfo{3, 3, true};
  const HamiltonianModel model = build_xy(spec);
  const CostPolynomial poly = compile(model);
  REQUIRE(poly.pairs().size() > 0);
  CHECK_FALSE(poly.has_third_order());

  std::set<std::pair<int, int>> seen;
  std::map<int, std::pair<std::uint64_t, std::uint64_t>> string_axes;
  for (const PairEntry& p : poly.pairs()) {
    REQUIRE(p.j > p.jp);
    REQUIRE(seen.insert({p.j, p.jp}).second);
    // the stored sign must reproduce the symbolic commutator 2 i sign Q
    const PauliSum comm = pair_op(model, p.j, p.jp);
    REQUIRE(comm.size() == 1);
    const auto [axes, coeff] = comm.sorted_terms().front();
    CHECK(std::abs(coeff - Complex(0.0, 2.0 * p.sign)) < 1e-14);
    const auto [it, fresh] = string_axes.try_emplace(p.string_id,
                                                     std::make_pair(axes.x, axes.z));
    if (!fresh) CHECK(it->second == std::make_pair(axes.x, axes.z));
  }
  // distinct ids never share axes
  std::set<std::pair<std::uint64_t, std::uint64_t>> axes_seen;
  for (const auto& [id, axes] : string_axes) REQUIRE(axes_seen.insert(axes).second);
  CHECK(static_cast<int>(string_axes.size()) == poly.pair_string_count());

  // completeness: every anticommuting ordered pair appears
  std::size_t expected = 0;
  for (int j = 0; j < model.term_count(); ++j)
    for (int jp = 0; jp < j; ++jp)
      if (!model.term(j).op.commutes_with(model.term(jp).op)) ++expected;
  CHECK(poly.pairs().size() == expected);
}

TEST_CASE("triple table covers both inner orders with opposite weights") {
  CouplingSpec spec;
  spec.lattice = LatticeInfo{4, 1, true};
  const HamiltonianModel model = build_tfim(spec);
  CompileOptions options;
  options.with_third_order = true;
  const CostPolynomial poly = compile(model, options);
  REQUIRE(poly.has_third_order());
  REQUIRE(poly.triples().size() > 0);

  std::map<std::array<int, 3>, double> stored;
  std::map<int, std::pair<std::uint64_t, std::uint64_t>> string_axes;
  for (const TripleEntry& t : poly.triples()) {
    REQUIRE(t.k != t.l);
    REQUIRE(stored.emplace(std::array<int, 3>{t.j, t.k, t.l}, t.weight).second);
    const PauliSum op = nested_op(model, t.j, t.k, t.l);
    REQUIRE(op.size() == 1);
    const auto [axes, coeff] = op.sorted_terms().front();
    CHECK(std::abs(coeff - Complex(t.weight, 0.0)) < 1e-13);
    const auto [it, fresh] = string_axes.try_emplace(t.string_id,
                                                     std::make_pair(axes.x, axes.z));
    if (!fresh) CHECK(it->second == std::make_pair(axes.x, axes.z));
  }
  CHECK(static_cast<int>(string_axes.size()) == poly.triple_string_count());
  for (const TripleEntry& t : poly.triples()) {
    const auto mirror = stored.find({t.j, t.l, t.k});
    REQUIRE(mirror != stored.end());
    CHECK(mirror->second == doctest::Approx(-t.weight));
  }
}

TEST_CASE("compilation budgets trip the capacity guard") {
  CouplingSpec spec;
  spec.lattice = LatticeInfo{3, 3, true};
  const HamiltonianModel model = build_xy(spec);
  CompileOptions tight;
  tight.pair_budget = 5;
  CHECK_THROWS_AS(compile(model, tight), CapacityError);
  CompileOptions triples;
  triples.with_third_order = true;
  triples.triple_budget = 7;
  CHECK_THROWS_AS(compile(model, triples), CapacityError);
}

TEST_CASE("pair coefficients match a literal multi-index regrouping") {
  std::mt19937_64 rng(23);
  // tiny hand-rolled model first, then a lattice model
  const HamiltonianModel tiny = build_custom({{"XX", 0.7}, {"ZI", -0.4}}, false);
  CouplingSpec spec;
  spec.lattice = LatticeInfo{3, 1, true};
  const HamiltonianModel ring = build_xy(spec);

  for (const HamiltonianModel* model : {&tiny, &ring}) {
    const CostPolynomial poly = compile(*model);
    for (int trial = 0; trial < 3; ++trial) {
      const Eigen::MatrixXd theta = random_matrix(3, model->term_count(), 0.4, rng);
      const ParamSheet sheet = ParamSheet::unconstrained(*model, 0.5, theta);
      const ChiCoefficients chi = chi_of(poly, sheet);
      const auto reference = naive_chi(theta);
      REQUIRE(chi.chi.size() == poly.pairs().size());
      for (std::size_t p = 0; p < poly.pairs().size(); ++p) {
        const auto key = std::make_pair(poly.pairs()[p].j, poly.pairs()[p].jp);
        const auto it = reference.find(key);
        const double expected = it == reference.end() ? 0.0 : it->second;
        CHECK(std::abs(chi.chi[p] - expected) < 1e-14);
      }
      // grouped keys missing from the table must belong to commuting pairs
      std::set<std::pair<int, int>> tabled;
      for (const PairEntry& p : poly.pairs()) tabled.insert({p.j, p.jp});
      for (const auto& [key, value] : reference)
        if (!tabled.count(key))
          CHECK(model->term(key.first).op.commutes_with(model->term(key.second).op));
    }
  }
}

TEST_CASE("first-order mismatch is reported alongside the pair coefficients") {
  const HamiltonianModel model = build_custom({{"ZZ", -1.0}, {"XI", 0.25}}, false);
  const CostPolynomial poly = compile(model);
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(2, 2);
  const ChiCoefficients chi = chi_of(poly, ParamSheet::unconstrained(model, 0.3, zero));
  for (double c : chi.chi) CHECK(c == 0.0);
  CHECK(chi.xi(0) == doctest::Approx(0.3));
  CHECK(chi.xi(1) == doctest::Approx(-0.075));
}

TEST_CASE("trotter pair coefficients collapse to the closed per-layer form") {
  CouplingSpec spec;
  spec.lattice = LatticeInfo{6, 1, true};
  const HamiltonianModel model = build_xy(spec);
  const CostPolynomial poly = compile(model);
  const double t = 0.37;
  const int R = 4;
  const ChiCoefficients chi = chi_of(poly, ParamSheet::trotter(model, t, R));
  for (std::size_t p = 0; p < poly.pairs().size(); ++p) {
    const double cj = model.term(poly.pairs()[p].j).coeff;
    const double cjp = model.term(poly.pairs()[p].jp).coeff;
    CHECK(chi.chi[p] == doctest::Approx(t * t * cj * cjp / (2 * R)).epsilon(1e-13));
  }
}

TEST_CASE("slaved-layer substitution agrees with the reduced closed form") {
  CouplingSpec spec;
  spec.lattice = LatticeInfo{6, 1, true};
  const HamiltonianModel model = build_xy(spec);
  const CostPolynomial poly = compile(model);
  std::mt19937_64 rng(31);
  const double t = 0.45;
  const int R = 4;
  const ParamSheet sheet = perturbed_constrained(model, t, R, rng, 0.3);
  const ChiCoefficients chi = chi_of(poly, sheet);

  // closed form over the free rows only: 1/2 t^2 c_j c_j' - t c_j' S_j
  // + same-row and staggered free-row sums
  for (std::size_t p = 0; p < poly.pairs().size(); ++p) {
    const int j = poly.pairs()[p].j, jp = poly.pairs()[p].jp;
    const double cj = model.term(j).coeff, cjp = model.term(jp).coeff;
    double sj = 0.0, same = 0.0, stag = 0.0;
    for (int r = 0; r < R - 1; ++r) {
      sj += sheet.theta(r, j);
      same += sheet.theta(r, j) * sheet.theta(r, jp);
      for (int rp = 0; rp < r; ++rp) stag += sheet.theta(r, j) * sheet.theta(rp, jp);
    }
    const double closed = 0.5 * t * t * cj * cjp - t * cjp * sj + same + stag;
    // the two routes cancel a large t^2 c c' term differently, so allow a
    // couple of digits beyond raw epsilon
    CHECK(rel_diff(chi.chi[p], closed) < 1e-10);
  }
}

TEST_CASE("square cost freezes to the two-pair lattice value") {
  const HamiltonianModel model =
      build_custom({{"ZZ", -1.0}, {"XI", 0.25}, {"IX", 0.25}}, false);
  const CostPolynomial poly = compile(model);
  REQUIRE(poly.pairs().size() == 2);
  for (int p = 0; p < 2; ++p) CHECK(poly.trace_pair(p, p) == doctest::Approx(-4.0));
  CHECK(poly.trace_pair(0, 1) == 0.0);

  const double t = 0.1;
  const ParamSheet sheet = ParamSheet::trotter(model, t, 3);
  const double c2 = cost_sq(poly, sheet);
  CHECK(c2 == doctest::Approx(1.3888888888888889e-6).epsilon(1e-12));
  CHECK(std::sqrt(c2) == doctest::Approx(1.1785113019775793e-3).epsilon(1e-12));

  const ChiCoefficients chi = chi_of(poly, sheet);
  for (std::size_t p = 0; p < 2; ++p)
    CHECK(chi.chi[p] == doctest::Approx(-t * t * 0.25 / 6.0).epsilon(1e-13));
}

TEST_CASE("anticorrelated commutator collisions show up in the trace table") {
  CouplingSpec spec;
  spec.full_graph = true;
  spec.n_full = 2;
  const HamiltonianModel model = build_xy(spec);
  // term order: fields first, then YY, then ZZ
  REQUIRE(model.term(0).label == "X@0");
  REQUIRE(model.term(2).label == "YY@0-1");
  REQUIRE(model.term(3).label == "ZZ@0-1");
  const CostPolynomial poly = compile(model);
  const auto find_pair = [&](int j, int jp) {
    for (std::size_t p = 0; p < poly.pairs().size(); ++p)
      if (poly.pairs()[p].j == j && poly.pairs()[p].jp == jp)
        return static_cast<int>(p);
    REQUIRE(false);
    return -1;
  };
  // [YY, X_0] lands on the same string as [ZZ, X_1] with opposite sign
  CHECK(poly.trace_pair(find_pair(2, 0), find_pair(3, 1)) == doctest::Approx(4.0));
  CHECK(poly.trace_pair(find_pair(2, 1), find_pair(3, 0)) == doctest::Approx(4.0));
  CHECK(poly.trace_pair(find_pair(2, 0), find_pair(3, 0)) == 0.0);
  const Complex cross = trace_product(pair_op(model, 2, 0), pair_op(model, 3, 1));
  CHECK(cross.real() == doctest::Approx(4.0));
  CHECK(std::abs(cross.imag()) < 1e-14);
}

TEST_CASE("negated trace table is positive semidefinite") {
  CouplingSpec spec;
  spec.lattice = LatticeInfo{3, 3, true};
  const HamiltonianModel model = build_xy(spec);
  const CostPolynomial poly = compile(model);
  const int P = static_cast<int>(poly.pairs().size());
  Eigen::MatrixXd minus_t(P, P);
  for (int p = 0; p < P; ++p)
    for (int q = 0; q < P; ++q) minus_t(p, q) = -poly.trace_pair(p, q);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(minus_t);
  REQUIRE(solver.info() == Eigen::Success);
  CHECK(solver.eigenvalues().minCoeff() > -1e-10);
}

TEST_CASE("square cost equals the explicit operator norm on lattice and random models") {
  std::mt19937_64 rng(41);
  std::vector<HamiltonianModel> models;
  CouplingSpec spec;
  spec.lattice = LatticeInfo{3, 3, true};
  models.push_back(build_xy(spec));
  for (int trial = 0; trial < 6; ++trial)
    models.push_back(random_custom_model(2 + static_cast<int>(rng() % 3),
                                         3 + static_cast<int>(rng() % 4), rng));

  for (const HamiltonianModel& model : models) {
    const CostPolynomial poly = compile(model);
    for (int s = 0; s < 2; ++s) {
      const Eigen::MatrixXd theta = random_matrix(2, model.term_count(), 0.3, rng);
      const ParamSheet sheet = ParamSheet::unconstrained(model, 0.4, theta);
      const ChiCoefficients chi = chi_of(poly, sheet);
      PauliSum assembled(model.n());
      for (std::size_t p = 0; p < poly.pairs().size(); ++p) {
        PauliSum comm = pair_op(model, poly.pairs()[p].j, poly.pairs()[p].jp);
        comm *= chi.chi[p];
        assembled += comm;
      }
      const double direct = assembled.hs_norm();
      CHECK(rel_diff(cost_sq(poly, sheet), direct * direct) < 1e-10);
    }
  }
}

TEST_CASE("commuting models cost nothing on any sheet") {
  const HamiltonianModel model = build_custom({{"ZZ", 1.0}, {"ZI", 0.5}}, false);
  const CostPolynomial poly = compile(model);
  CHECK(poly.pairs().empty());
  std::mt19937_64 rng(7);
  const ParamSheet sheet = ParamSheet::unconstrained(
      model, 0.9, random_matrix(3, model.term_count(), 0.5, rng));
  CHECK(cost_sq(poly, sheet) == 0.0);
  const ParamSheet slaved = perturbed_constrained(model, 0.9, 3, rng, 0.4);
  CHECK(grad_cost_sq(poly, slaved).norm() == 0.0);
}

TEST_CASE("analytic gradient matches central finite differences") {
  CouplingSpec spec;
  spec.lattice = LatticeInfo{3, 3, true};
  spec.j_y.half_width = 0.2;
  spec.j_z.half_width = 0.2;
  spec.field.half_width = 0.1;
  spec.seed = 9;
  const HamiltonianModel model = build_xy(spec);
  const CostPolynomial poly = compile(model);
  std::mt19937_64 rng(55);
  const double t = 0.35;
  const int R = 3, M = model.term_count();

  int checked = 0;
  for (int trial = 0; trial < 5; ++trial) {
    ParamSheet sheet = perturbed_constrained(model, t, R, rng, 0.25);
    const Eigen::MatrixXd grad = grad_cost_sq(poly, sheet);
    REQUIRE(grad.rows() == R - 1);
    REQUIRE(grad.cols() == M);
    const Eigen::VectorXd base = sheet.free_parameters();
    for (int probe = 0; probe < 20; ++probe) {
      const Eigen::Index i =
          static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(base.size()));
      const double h = 1e-6;
      Eigen::VectorXd x = base;
      x(i) = base(i) + h;
      sheet.set_free_parameters(x);
      const double up = cost_sq(poly, sheet);
      x(i) = base(i) - h;
      sheet.set_free_parameters(x);
      const double down = cost_sq(poly, sheet);
      sheet.set_free_parameters(base);
      const double fd = (up - down) / (2 * h);
      const double an = grad(static_cast<int>(i) / M, static_cast<int>(i) % M);
      CHECK(std::abs(fd - an) < 1e-6 * std::max(1.0, std::abs(an)));
      ++checked;
    }
  }
  CHECK(checked == 100);
}

TEST_CASE("gradient does not vanish at the trotter point") {
  CouplingSpec spec;
  spec.lattice = LatticeInfo{3, 3, true};
  const HamiltonianModel model = build_xy(spec);
  const CostPolynomial poly = compile(model);
  const ParamSheet sheet = ParamSheet::trotter(model, 0.3, 3);
  CHECK(cost_sq(poly, sheet) > 0.0);
  CHECK(grad_cost_sq(poly, sheet).norm() > 1e-8);
}

TEST_CASE("shared-parameter gradients reduce consistently with finite differences") {
  CouplingSpec spec;
  spec.lattice = LatticeInfo{6, 1, true};
  const HamiltonianModel model = build_xy(spec);
  const CostPolynomial poly = compile(model);
  std::mt19937_64 rng(77);
  const double t = 0.4;
  const int R = 3, A = model.class_count();

  const Eigen::MatrixXd shared_free = random_matrix(R - 1, A, 0.1, rng);
  const auto eval = [&](const Eigen::MatrixXd& sf) {
    return cost_sq(poly, ParamSheet::constrained(model, t, R,
                                                 expand_class_columns(model, sf)));
  };
  const ParamSheet sheet =
      ParamSheet::constrained(model, t, R, expand_class_columns(model, shared_free));
  const Eigen::MatrixXd reduced = reduce_shared_grad(model, grad_cost_sq(poly, sheet));
  for (int r = 0; r < R - 1; ++r)
    for (int a = 0; a < A; ++a) {
      const double h = 1e-6;
      Eigen::MatrixXd up = shared_free, down = shared_free;
      up(r, a) += h;
      down(r, a) -= h;
      const double fd = (eval(up) - eval(down)) / (2 * h);
      CHECK(std::abs(fd - reduced(r, a)) < 1e-6 * std::max(1.0, std::abs(fd)));
    }
}

TEST_CASE("repeating a sheet scales the pair coefficients and the cost linearly") {
  CouplingSpec spec;
  spec.lattice = LatticeInfo{6, 1, true};
  const HamiltonianModel model = build_xy(spec);
  const CostPolynomial poly = compile(model);
  std::mt19937_64 rng(13);
  const ParamSheet sheet = perturbed_constrained(model, 0.3, 2, rng, 0.3);
  const ChiCoefficients base = chi_of(poly, sheet);
  const double c = std::sqrt(cost_sq(poly, sheet));
  REQUIRE(c > 0.0);
  for (int k : {2, 8, 64}) {
    const ParamSheet rep = repeat_sheet(sheet, k);
    const ChiCoefficients scaled = chi_of(poly, rep);
    for (std::size_t p = 0; p < base.chi.size(); ++p)
      CHECK(rel_diff(scaled.chi[p], k * base.chi[p]) < 1e-12);
    CHECK(std::abs(std::sqrt(cost_sq(poly, rep)) - k * c) <= 1e-12 * k * c);
  }
}

TEST_CASE("cost and error terms are homogeneous of degree two and three") {
  const HamiltonianModel model = build_custom(
      {{"ZZI", -1.0}, {"IZZ", -0.8}, {"XII", 0.3}, {"IXI", 0.25}, {"IIX", 0.2}}, false);
  CompileOptions options;
  options.with_third_order = true;
  const CostPolynomial poly = compile(model, options);
  std::mt19937_64 rng(19);
  const ParamSheet sheet = ParamSheet::unconstrained(
      model, 0.5, random_matrix(2, model.term_count(), 0.4, rng));
  const double s = 1.7;
  const ParamSheet scaled = sheet.scaled(s);
  CHECK(rel_diff(cost_sq(poly, scaled), s * s * s * s * cost_sq(poly, sheet)) < 1e-12);
  CHECK(rel_diff(error_term(poly, scaled), s * s * s * error_term(poly, sheet)) < 1e-12);

  const ParamSheet zero = ParamSheet::unconstrained(
      model, 0.5, Eigen::MatrixXd::Zero(2, model.term_count()));
  CHECK(error_term(poly, zero) == 0.0);
  CHECK(lambda_rest(poly, zero) == 0.0);
}

TEST_CASE("third-order coefficients match a literal multi-index regrouping") {
  std::mt19937_64 rng(29);
  CouplingSpec spec;
  spec.lattice = LatticeInfo{3, 1, false};
  const HamiltonianModel chain = build_tfim(spec);
  CouplingSpec full;
  full.full_graph = true;
  full.n_full = 2;
  const HamiltonianModel pair_model = build_xy(full);

  CompileOptions options;
  options.with_third_order = true;
  for (const HamiltonianModel* model : {&chain, &pair_model}) {
    const CostPolynomial poly = compile(*model, options);
    for (int trial = 0; trial < 3; ++trial) {
      const int R = 2 + trial % 2;
      const Eigen::MatrixXd theta = random_matrix(R, model->term_count(), 0.5, rng);
      const ParamSheet sheet = ParamSheet::unconstrained(*model, 0.4, theta);
      const PhiTensor phi = phi_of(poly, sheet);
      const auto reference = naive_phi(theta);
      std::set<std::array<int, 3>> tabled;
      for (std::size_t i = 0; i < poly.triples().size(); ++i) {
        const TripleEntry& t = poly.triples()[i];
        tabled.insert({t.j, t.k, t.l});
        const auto it = reference.find({t.j, t.k, t.l});
        const double expected = it == reference.end() ? 0.0 : it->second;
        CHECK(std::abs(phi.phi[i] - expected) < 1e-13);
      }
      // coefficients the table skips must multiply vanishing operators
      for (const auto& [key, value] : reference)
        if (!tabled.count(key))
          CHECK(nested_op(*model, key[0], key[1], key[2]).empty());
    }
  }
}

TEST_CASE("error term equals the explicit nested-operator norm") {
  std::mt19937_64 rng(37);
  CompileOptions options;
  options.with_third_order = true;
  std::vector<HamiltonianModel> models;
  CouplingSpec spec;
  spec.lattice = LatticeInfo{4, 1, true};
  models.push_back(build_tfim(spec));
  for (int trial = 0; trial < 4; ++trial)
    models.push_back(random_custom_model(2 + static_cast<int>(rng() % 3),
                                         3 + static_cast<int>(rng() % 3), rng));

  for (const HamiltonianModel& model : models) {
    const CostPolynomial poly = compile(model, options);
    const Eigen::MatrixXd theta = random_matrix(2, model.term_count(), 0.35, rng);
    const ParamSheet sheet = ParamSheet::unconstrained(model, 0.4, theta);
    const PhiTensor phi = phi_of(poly, sheet);
    PauliSum assembled(model.n());
    for (std::size_t i = 0; i < poly.triples().size(); ++i) {
      PauliSum op = nested_op(model, poly.triples()[i].j, poly.triples()[i].k,
                              poly.triples()[i].l);
      op *= phi.phi[i];
      assembled += op;
    }
    CHECK(rel_diff(error_term(poly, sheet), assembled.hs_norm()) < 1e-10);

    // pairwise-merged exponent: degree-2 and degree-3 parts in one sweep
    const DegreeSplitExponent z = merged_exponent(model, theta);
    CHECK(rel_diff(std::sqrt(cost_sq(poly, sheet)), z.d2.hs_norm()) < 1e-10);
    CHECK(rel_diff(error_term(poly, sheet), z.d3.hs_norm()) < 1e-10);
  }
}

TEST_CASE("dense logarithms confirm the quadratic and cubic exponent norms") {
  std::mt19937_64 rng(43);
  CouplingSpec spec;
  spec.lattice = LatticeInfo{3, 1, false};
  const HamiltonianModel chain = build_tfim(spec);
  CouplingSpec full;
  full.full_graph = true;
  full.n_full = 2;
  const HamiltonianModel pair_model = build_xy(full);

  CompileOptions options;
  options.with_third_order = true;
  struct Setup {
    const HamiltonianModel* model;
    int layers;
    double t;
  };
  for (const Setup& setup :
       {Setup{&chain, 2, 0.3}, Setup{&chain, 1, 0.25}, Setup{&pair_model, 3, 0.4}}) {
    const CostPolynomial poly = compile(*setup.model, options);
    const ParamSheet sheet = setup.layers == 1
                                 ? ParamSheet::trotter(*setup.model, setup.t, 1)
                                 : perturbed_constrained(*setup.model, setup.t,
                                                         setup.layers, rng, 0.3);
    const ExtractedNorms dense = dense_bch_norms(*setup.model, sheet);
    const double c = std::sqrt(cost_sq(poly, sheet));
    const double e = error_term(poly, sheet);
    REQUIRE(c > 1e-8);
    REQUIRE(e > 1e-9);
    CHECK(rel_diff(dense.c2, c) < 1e-5);
    CHECK(rel_diff(dense.c3, e) < 1e-4);
  }
}

TEST_CASE("repetition splits the cubic coefficients into rest and cubic parts") {
  CouplingSpec spec;
  spec.lattice = LatticeInfo{4, 1, true};
  const HamiltonianModel model = build_tfim(spec);
  CompileOptions options;
  options.with_third_order = true;
  const CostPolynomial poly = compile(model, options);
  std::mt19937_64 rng(47);

  // the split is an identity for any sheet, constrained or not
  const ParamSheet loose = ParamSheet::unconstrained(
      model, 0.4, random_matrix(2, model.term_count(), 0.4, rng));
  const ParamSheet slaved = perturbed_constrained(model, 0.4, 3, rng, 0.3);
  for (const ParamSheet* sheet : {&loose, &slaved}) {
    const PhiTensor phi = phi_of(poly, *sheet);
    const PhiTensor rest = phi_rest_of(poly, *sheet);
    const PhiTensor cubic = phi_cubic_of(poly, *sheet);
    const PhiTensor twice = phi_of(poly, repeat_sheet(*sheet, 2));
    const PhiTensor thrice = phi_of(poly, repeat_sheet(*sheet, 3));
    for (std::size_t i = 0; i < phi.phi.size(); ++i) {
      CHECK(std::abs(twice.phi[i] - (2 * phi.phi[i] + rest.phi[i])) < 1e-13);
      CHECK(std::abs(thrice.phi[i] -
                     (3 * phi.phi[i] + 3 * rest.phi[i] + cubic.phi[i])) < 1e-13);
    }

    // both split-off parts multiply operators that cancel identically: the
    // repeated sequence is a power of one unitary, so its exponent is
    // exactly linear in the repetition count
    for (const PhiTensor* part : {&rest, &cubic}) {
      PauliSum assembled(model.n());
      for (std::size_t i = 0; i < poly.triples().size(); ++i) {
        PauliSum op = nested_op(model, poly.triples()[i].j, poly.triples()[i].k,
                                poly.triples()[i].l);
        op *= part->phi[i];
        assembled += op;
      }
      CHECK(assembled.hs_norm() < 1e-12);
    }
  }
}

TEST_CASE("repetition error obeys the rest-term bound and is in fact linear") {
  CouplingSpec spec;
  spec.lattice = LatticeInfo{4, 1, true};
  const HamiltonianModel model = build_tfim(spec);
  CompileOptions options;
  options.with_third_order = true;
  const CostPolynomial poly = compile(model, options);
  std::mt19937_64 rng(53);

  const ParamSheet tight = ParamSheet::trotter(model, 0.2, 1);
  const ParamSheet loose = perturbed_constrained(model, 0.3, 2, rng, 0.25);
  for (const ParamSheet* sheet : {&tight, &loose}) {
    const double e = error_term(poly, *sheet);
    const double lambda = lambda_rest(poly, *sheet);
    REQUIRE(e > 0.0);
    // the rest term itself assembles to nothing, so the bound is saturated
    CHECK(lambda < 1e-12 * e);
    for (int k : {2, 3, 6}) {
      const double repeated = error_term(poly, repeat_sheet(*sheet, k));
      CHECK(repeated <= k * e + 0.5 * k * (k - 1) * lambda + 1e-12);
      CHECK(rel_diff(repeated, k * e) < 1e-12);
    }
  }
}

TEST_CASE("third-order evaluations refuse pair-only tables") {
  const HamiltonianModel model = build_custom({{"ZZ", -1.0}, {"XI", 0.25}}, false);
  const CostPolynomial poly = compile(model);
  const ParamSheet sheet = ParamSheet::trotter(model, 0.1, 2);
  CHECK_THROWS_AS(error_term(poly, sheet), ConfigError);
  CHECK_THROWS_AS(lambda_rest(poly, sheet), ConfigError);
  CHECK_THROWS_AS(phi_of(poly, sheet), ConfigError);
}

TEST_CASE("per-site cost reproduces whole-chain costs for orthogonal bundles") {
  const double t = 0.2;
  const int R = 3;
  std::mt19937_64 rng(61);

  std::vector<double> chain_costs;
  for (int n : {4, 6, 8}) {
    CouplingSpec spec;
    spec.lattice = LatticeInfo{n, 1, true};
    const HamiltonianModel model = build_tfim(spec);
    const Eigen::MatrixXd shared =
        trotter_shared(model, t, R) + random_matrix(R, model.class_count(), 0.02, rng);
    const double unit = unit_cell_cost(model, shared, t, 2);
    const double full =
        std::sqrt(cost_sq(compile(model), expand_shared(model, t, shared)));
    REQUIRE(unit > 0.0);
    CHECK(rel_diff(full, std::sqrt(static_cast<double>(n)) * unit) < 1e-10);
  }

  // trotter parameters: identical couplings across sizes, so C(n) ~ sqrt(n)
  for (int n : {4, 6, 8}) {
    CouplingSpec spec;
    spec.lattice = LatticeInfo{n, 1, true};
    const HamiltonianModel model = build_tfim(spec);
    chain_costs.push_back(std::sqrt(
        cost_sq(compile(model), ParamSheet::trotter(model, t, R))));
  }
  CHECK(rel_diff(chain_costs[1] / chain_costs[0], std::sqrt(6.0 / 4.0)) < 1e-10);
  CHECK(rel_diff(chain_costs[2] / chain_costs[0], std::sqrt(8.0 / 4.0)) < 1e-10);
}

TEST_CASE("per-site cost bounds the whole-lattice cost for colliding bundles") {
  CouplingSpec spec;
  spec.lattice = LatticeInfo{6, 1, true};
  const HamiltonianModel model = build_xy(spec);
  const double t = 0.25;
  const int R = 2;
  std::mt19937_64 rng(67);
  const Eigen::MatrixXd shared =
      trotter_shared(model, t, R) + random_matrix(R, model.class_count(), 0.02, rng);
  const double unit = unit_cell_cost(model, shared, t, 2);
  const double full =
      std::sqrt(cost_sq(compile(model), expand_shared(model, t, shared)));
  REQUIRE(unit > 0.0);
  CHECK(full <= 6.0 * unit + 1e-12);

  const double unit3 = unit_cell_cost(model, shared, t, 3);
  CompileOptions options;
  options.with_third_order = true;
  const double full3 = error_term(compile(model, options), expand_shared(model, t, shared));
  REQUIRE(unit3 > 0.0);
  CHECK(full3 <= 6.0 * unit3 + 1e-12);
}

TEST_CASE("per-site cost handles the degenerate single-site and two-site cells") {
  CouplingSpec one;
  one.lattice = LatticeInfo{1, 1, true};
  const HamiltonianModel single = build_tfim(one);
  const Eigen::MatrixXd shared = trotter_shared(single, 0.3, 2);
  CHECK(unit_cell_cost(single, shared, 0.3, 2) == 0.0);

  CouplingSpec two;
  two.lattice = LatticeInfo{2, 1, true};
  const HamiltonianModel ring = build_tfim(two);
  const Eigen::MatrixXd shared2 = trotter_shared(ring, 0.3, 2);
  const double unit = unit_cell_cost(ring, shared2, 0.3, 2);
  const double full =
      std::sqrt(cost_sq(compile(ring), expand_shared(ring, 0.3, shared2)));
  CHECK(rel_diff(full, std::sqrt(2.0) * unit) < 1e-12);
}

TEST_CASE("per-site cost validates its inputs") {
  CouplingSpec open;
  open.lattice = LatticeInfo{4, 1, false};
  const HamiltonianModel no_classes = build_tfim(open);
  CHECK_THROWS_AS(unit_cell_cost(no_classes, Eigen::MatrixXd::Zero(2, 2), 0.3, 2),
                  ConfigError);

  CouplingSpec ring;
  ring.lattice = LatticeInfo{4, 1, true};
  const HamiltonianModel model = build_tfim(ring);
  const Eigen::MatrixXd shared = trotter_shared(model, 0.3, 2);
  CHECK_THROWS_AS(unit_cell_cost(model, shared, 0.3, 1), ConfigError);
  const CostPolynomial pair_only = compile(model);
  CHECK_THROWS_AS(unit_cell_cost(pair_only, shared, 0.3, 3), ConfigError);
}

TEST_CASE("sheet and polynomial dimensions must agree") {
  const HamiltonianModel a = build_custom({{"ZZ", -1.0}, {"XI", 0.25}}, false);
  const HamiltonianModel b =
      build_custom({{"ZZ", -1.0}, {"XI", 0.25}, {"IX", 0.25}}, false);
  const CostPolynomial poly = compile(a);
  const ParamSheet sheet = ParamSheet::trotter(b, 0.1, 2);
  CHECK_THROWS_AS(cost_sq(poly, sheet), DimensionError);
  const ParamSheet loose = ParamSheet::unconstrained(
      a, 0.1, Eigen::MatrixXd::Zero(2, a.term_count()));
  CHECK_THROWS_AS(grad_cost_sq(compile(a), loose), ConfigError);
}
