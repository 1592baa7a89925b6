#include "prodopt/cost.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "prodopt/errors.hpp"
#include "prodopt/pauli.hpp"

namespace prodopt {

namespace {

struct StringTable {
  std::unordered_map<PauliAxes, int, PauliAxesHash> ids;
  int intern(std::uint64_t x, std::uint64_t z) {
    return ids.try_emplace({x, z}, static_cast<int>(ids.size())).first->second;
  }
};

// [A, B] = 2i * sign * Q for anticommuting unit Hermitian strings A, B;
// returns Q's axes and the sign.
struct HalfCommutator {
  std::uint64_t x, z;
  double sign;
};

HalfCommutator half_commutator(const PauliString& a, const PauliString& b) {
  const PauliString prod = multiply(a, b);
  const int rel =
      ((prod.phase_pow() - std::popcount(prod.x_mask() & prod.z_mask())) % 4 + 4) % 4;
  if (rel % 2 == 0)
    throw NumericalError("commutator of anticommuting strings must be anti-Hermitian");
  return {prod.x_mask(), prod.z_mask(), rel == 1 ? 1.0 : -1.0};
}

// Per-sheet sums shared by every coefficient evaluation.  prefix has R+1
// rows: prefix(r, j) = sum_{r' < r} theta_{r', j}.
struct SheetSums {
  const Eigen::MatrixXd& theta;
  Eigen::MatrixXd prefix;
  Eigen::VectorXd s1, s2;
  int R;

  explicit SheetSums(const ParamSheet& sheet)
      : theta(sheet.matrix()), R(sheet.layers()) {
    const int M = sheet.terms();
    prefix = Eigen::MatrixXd::Zero(R + 1, M);
    for (int r = 0; r < R; ++r) prefix.row(r + 1) = prefix.row(r) + theta.row(r);
    s1 = prefix.row(R).transpose();
    s2 = theta.array().square().colwise().sum().transpose();
  }

  double below(int r, int j) const { return prefix(r, j); }            // sum_{r'<r}
  double above(int r, int j) const { return s1(j) - prefix(r + 1, j); } // sum_{r'>r}
};

double chi_pair(const SheetSums& s, int j, int jp) {
  double acc = 0.0;
  for (int r = 0; r < s.R; ++r)
    acc += s.theta(r, j) * (s.theta(r, jp) + s.below(r, jp)) -
           s.theta(r, jp) * s.below(r, j);
  return 0.5 * acc;
}

std::vector<double> chi_values(const CostPolynomial& poly, const SheetSums& s) {
  std::vector<double> chi(poly.pairs().size());
  for (std::size_t p = 0; p < chi.size(); ++p)
    chi[p] = chi_pair(s, poly.pairs()[p].j, poly.pairs()[p].jp);
  return chi;
}

// Signed per-string accumulators: sum over pairs of sign * chi, so that
// C^2 = 4 * sum_strings acc^2.
std::vector<double> pair_accumulators(const CostPolynomial& poly,
                                      const std::vector<double>& chi) {
  std::vector<double> acc(static_cast<std::size_t>(poly.pair_string_count()), 0.0);
  for (std::size_t p = 0; p < chi.size(); ++p)
    acc[static_cast<std::size_t>(poly.pairs()[p].string_id)] +=
        poly.pairs()[p].sign * chi[p];
  return acc;
}

// The ordered-case weight of the third-order expansion:
//   [a>b>c] sum_r t_ra t_rb t_rc + [a>b] sum_r t_ra t_rb P_<r(c)
// + [b>c] sum_u t_ub t_uc S_>u(a) +       sum_u t_ub S_>u(a) P_<u(c).
double case_weight(const SheetSums& s, int a, int b, int c) {
  double acc = 0.0;
  if (a > b) {
    const double same_row = b > c ? 1.0 : 0.0;
    for (int r = 0; r < s.R; ++r)
      acc += s.theta(r, a) * s.theta(r, b) *
             (same_row * s.theta(r, c) + s.below(r, c));
  }
  if (b > c)
    for (int u = 0; u < s.R; ++u)
      acc += s.theta(u, b) * s.theta(u, c) * s.above(u, a);
  for (int u = 0; u < s.R; ++u)
    acc += s.theta(u, b) * s.above(u, a) * s.below(u, c);
  return acc;
}

// Same-row pair sums used by the repetition rest term.
double sum_same_row(const SheetSums& s, int a, int b) {
  double acc = 0.0;
  for (int r = 0; r < s.R; ++r) acc += s.theta(r, a) * s.theta(r, b);
  return acc;
}

double sum_staggered(const SheetSums& s, int a, int b) {  // sum_{r>u} t_ra t_ub
  double acc = 0.0;
  for (int r = 0; r < s.R; ++r) acc += s.theta(r, a) * s.below(r, b);
  return acc;
}

double rest_weight(const SheetSums& s, int a, int b, int c) {
  double acc = sum_staggered(s, a, b) * s.s1(c) + s.s1(a) * sum_staggered(s, b, c);
  if (a > b) acc += sum_same_row(s, a, b) * s.s1(c);
  if (b > c) acc += s.s1(a) * sum_same_row(s, b, c);
  return acc;
}

double grouped_norm(const CostPolynomial& poly, const PhiTensor& phi) {
  std::vector<double> acc(static_cast<std::size_t>(poly.triple_string_count()), 0.0);
  for (std::size_t i = 0; i < phi.phi.size(); ++i)
    acc[static_cast<std::size_t>(poly.triples()[i].string_id)] +=
        poly.triples()[i].weight * phi.phi[i];
  double sq = 0.0;
  for (double a : acc) sq += a * a;
  return std::sqrt(sq);
}

void require_third_order(const CostPolynomial& poly) {
  if (!poly.has_third_order())
    throw ConfigError("cost polynomial was compiled without the triple table");
}

void check_sheet(const CostPolynomial& poly, const ParamSheet& sheet) {
  if (sheet.terms() != poly.model().term_count())
    throw DimensionError("sheet column count must match the compiled model");
}

}  // namespace

double CostPolynomial::trace_pair(int p, int q) const {
  const PairEntry& a = pairs_[static_cast<std::size_t>(p)];
  const PairEntry& b = pairs_[static_cast<std::size_t>(q)];
  return a.string_id == b.string_id ? -4.0 * a.sign * b.sign : 0.0;
}

CostPolynomial compile(const HamiltonianModel& model, const CompileOptions& options) {
  CostPolynomial poly;
  poly.model_ = &model;
  poly.with_third_order_ = options.with_third_order;
  const int M = model.term_count();

  StringTable pair_strings;
  for (int j = 0; j < M; ++j) {
    const PauliString& hj = model.term(j).op;
    for (int jp = 0; jp < j; ++jp) {
      if (hj.commutes_with(model.term(jp).op)) continue;
      if (poly.pairs_.size() >= options.pair_budget)
        throw CapacityError("pair table exceeds its budget");
      const HalfCommutator c = half_commutator(hj, model.term(jp).op);
      poly.pairs_.push_back({j, jp, c.sign, pair_strings.intern(c.x, c.z)});
    }
  }
  poly.pair_string_count_ = static_cast<int>(pair_strings.ids.size());

  if (options.with_third_order) {
    StringTable triple_strings;
    for (int k = 0; k < M; ++k)
      for (int l = 0; l < k; ++l) {
        if (model.term(k).op.commutes_with(model.term(l).op)) continue;
        const HalfCommutator inner = half_commutator(model.term(k).op, model.term(l).op);
        const PauliString q = PauliString::from_axes(model.n(), inner.x, inner.z);
        for (int j = 0; j < M; ++j) {
          if (model.term(j).op.commutes_with(q)) continue;
          if (poly.triples_.size() + 2 > options.triple_budget)
            throw CapacityError("triple table exceeds its budget");
          const HalfCommutator outer = half_commutator(model.term(j).op, q);
          const double weight = -4.0 * inner.sign * outer.sign;
          const int sid = triple_strings.intern(outer.x, outer.z);
          poly.triples_.push_back({j, k, l, weight, sid});
          poly.triples_.push_back({j, l, k, -weight, sid});
        }
      }
    poly.triple_string_count_ = static_cast<int>(triple_strings.ids.size());
  }
  return poly;
}

ChiCoefficients chi_of(const CostPolynomial& poly, const ParamSheet& sheet) {
  check_sheet(poly, sheet);
  const SheetSums sums(sheet);
  return {chi_values(poly, sums), sheet.xi()};
}

double cost_sq(const CostPolynomial& poly, const ParamSheet& sheet) {
  check_sheet(poly, sheet);
  const SheetSums sums(sheet);
  const std::vector<double> acc = pair_accumulators(poly, chi_values(poly, sums));
  double sq = 0.0;
  for (double a : acc) sq += a * a;
  return 4.0 * sq;
}

namespace {

// Free-row gradient of 4 sum_s acc_s^2 where acc_s runs over the pairs
// selected by mask (all pairs when mask is null).
Eigen::MatrixXd grad_free_rows(const CostPolynomial& poly, const ParamSheet& sheet,
                               const std::vector<char>* mask) {
  const int R = sheet.layers();
  const SheetSums sums(sheet);
  const std::vector<double> chi = chi_values(poly, sums);
  std::vector<double> acc(static_cast<std::size_t>(poly.pair_string_count()), 0.0);
  for (std::size_t p = 0; p < chi.size(); ++p) {
    if (mask && !(*mask)[p]) continue;
    acc[static_cast<std::size_t>(poly.pairs()[p].string_id)] +=
        poly.pairs()[p].sign * chi[p];
  }

  Eigen::MatrixXd full = Eigen::MatrixXd::Zero(R, sheet.terms());
  for (std::size_t p = 0; p < chi.size(); ++p) {
    if (mask && !(*mask)[p]) continue;
    const PairEntry& pair = poly.pairs()[p];
    const double w =
        8.0 * pair.sign * acc[static_cast<std::size_t>(pair.string_id)];
    if (w == 0.0) continue;
    for (int q = 0; q < R; ++q) {
      full(q, pair.j) += 0.5 * w *
                         (sums.theta(q, pair.jp) + sums.below(q, pair.jp) -
                          sums.above(q, pair.jp));
      full(q, pair.jp) += 0.5 * w *
                          (sums.theta(q, pair.j) - sums.below(q, pair.j) +
                           sums.above(q, pair.j));
    }
  }
  // Chain rule for the slaved last layer: d theta_{R,j} / d theta_{q,j} = -1.
  Eigen::MatrixXd free = full.topRows(R - 1);
  free.rowwise() -= full.row(R - 1);
  return free;
}

}  // namespace

Eigen::MatrixXd grad_cost_sq(const CostPolynomial& poly, const ParamSheet& sheet) {
  check_sheet(poly, sheet);
  if (!sheet.constrained())
    throw ConfigError("the free-parameter gradient needs a constrained sheet");
  return grad_free_rows(poly, sheet, nullptr);
}

PhiTensor phi_of(const CostPolynomial& poly, const ParamSheet& sheet) {
  check_sheet(poly, sheet);
  require_third_order(poly);
  const SheetSums sums(sheet);
  PhiTensor phi;
  phi.phi.resize(poly.triples().size());
  for (std::size_t i = 0; i < phi.phi.size(); ++i) {
    const TripleEntry& t = poly.triples()[i];
    double value =
        (case_weight(sums, t.j, t.k, t.l) + case_weight(sums, t.l, t.k, t.j)) / 6.0;
    if (t.j == t.k) value += sums.s2(t.j) * sums.s1(t.l) / 12.0;
    phi.phi[i] = value;
  }
  return phi;
}

PhiTensor phi_rest_of(const CostPolynomial& poly, const ParamSheet& sheet) {
  check_sheet(poly, sheet);
  require_third_order(poly);
  const SheetSums sums(sheet);
  PhiTensor phi;
  phi.phi.resize(poly.triples().size());
  for (std::size_t i = 0; i < phi.phi.size(); ++i) {
    const TripleEntry& t = poly.triples()[i];
    double value =
        (rest_weight(sums, t.j, t.k, t.l) + rest_weight(sums, t.l, t.k, t.j)) / 6.0;
    if (t.j == t.k) value += 2.0 * sums.s2(t.j) * sums.s1(t.l) / 12.0;
    phi.phi[i] = value;
  }
  return phi;
}

PhiTensor phi_cubic_of(const CostPolynomial& poly, const ParamSheet& sheet) {
  check_sheet(poly, sheet);
  require_third_order(poly);
  const SheetSums sums(sheet);
  PhiTensor phi;
  phi.phi.resize(poly.triples().size());
  for (std::size_t i = 0; i < phi.phi.size(); ++i) {
    const TripleEntry& t = poly.triples()[i];
    phi.phi[i] = sums.s1(t.j) * sums.s1(t.k) * sums.s1(t.l) / 3.0;
  }
  return phi;
}

double error_term(const CostPolynomial& poly, const ParamSheet& sheet) {
  return grouped_norm(poly, phi_of(poly, sheet));
}

double lambda_rest(const CostPolynomial& poly, const ParamSheet& sheet) {
  return grouped_norm(poly, phi_rest_of(poly, sheet));
}

namespace {

// Start of the minimal covering window along one dimension (handles wrap on
// periodic lattices); coords must be non-empty.
int window_start(std::vector<int> coords, int extent, bool periodic) {
  std::sort(coords.begin(), coords.end());
  coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
  if (!periodic || coords.size() == 1) return coords.front();
  int best_gap = coords.front() + extent - coords.back();
  int start = coords.front();
  for (std::size_t i = 1; i < coords.size(); ++i) {
    const int gap = coords[i] - coords[i - 1];
    if (gap > best_gap) {
      best_gap = gap;
      start = coords[i];
    }
  }
  return start;
}

int anchor_site(const LatticeInfo& lat, std::uint64_t support, int n) {
  std::vector<int> xs, ys;
  for (int site = 0; site < n; ++site)
    if (support >> site & 1) {
      xs.push_back(lat.coords(site).first);
      ys.push_back(lat.coords(site).second);
    }
  const int x = window_start(std::move(xs), lat.nx, lat.periodic);
  const int y = window_start(std::move(ys), lat.ny, lat.periodic);
  return y * lat.nx + x;
}

std::uint64_t term_support(const HamiltonianModel& model, int j) {
  return model.term(j).op.x_mask() | model.term(j).op.z_mask();
}

// Pairs of the bundle anchored at lattice site 0: cross-class pairs land
// where their higher-class member sits, same-class pairs where their joint
// support window starts, so every pair belongs to exactly one bundle and
// all bundles are translates of this one.
std::vector<char> anchored_pairs(const CostPolynomial& poly) {
  const HamiltonianModel& model = poly.model();
  const LatticeInfo& lat = *model.lattice();
  const auto& classes = model.translation_classes();
  std::vector<char> mask(poly.pairs().size(), 0);
  for (std::size_t p = 0; p < poly.pairs().size(); ++p) {
    const PairEntry& pair = poly.pairs()[p];
    const int ca = classes[static_cast<std::size_t>(pair.j)];
    const int cb = classes[static_cast<std::size_t>(pair.jp)];
    int site;
    if (ca == cb) {
      site = anchor_site(lat, term_support(model, pair.j) | term_support(model, pair.jp),
                         model.n());
    } else {
      const int lead = ca > cb ? pair.j : pair.jp;
      site = anchor_site(lat, term_support(model, lead), model.n());
    }
    mask[p] = site == 0;
  }
  return mask;
}

}  // namespace

double unit_cell_cost(const CostPolynomial& poly, const Eigen::MatrixXd& shared,
                      double t, int order) {
  const HamiltonianModel& model = poly.model();
  if (order != 2 && order != 3)
    throw ConfigError("unit-cell cost is defined for orders 2 and 3");
  if (!model.has_classes() || !model.lattice())
    throw ConfigError("unit-cell cost needs a uniform periodic lattice model");
  const LatticeInfo& lat = *model.lattice();
  const ParamSheet sheet = expand_shared(model, t, shared);
  const SheetSums sums(sheet);

  if (order == 2) {
    const std::vector<char> mask = anchored_pairs(poly);
    std::vector<double> acc(static_cast<std::size_t>(poly.pair_string_count()), 0.0);
    for (std::size_t p = 0; p < poly.pairs().size(); ++p) {
      if (!mask[p]) continue;
      const PairEntry& pair = poly.pairs()[p];
      acc[static_cast<std::size_t>(pair.string_id)] +=
          pair.sign * chi_pair(sums, pair.j, pair.jp);
    }
    double sq = 0.0;
    for (double a : acc) sq += a * a;
    return std::sqrt(4.0 * sq);
  }

  require_third_order(poly);
  const PhiTensor phi = phi_of(poly, sheet);
  std::vector<double> acc(static_cast<std::size_t>(poly.triple_string_count()), 0.0);
  for (std::size_t i = 0; i < poly.triples().size(); ++i) {
    const TripleEntry& trip = poly.triples()[i];
    if (anchor_site(lat, term_support(model, trip.j), model.n()) != 0) continue;
    acc[static_cast<std::size_t>(trip.string_id)] += trip.weight * phi.phi[i];
  }
  double sq = 0.0;
  for (double a : acc) sq += a * a;
  return std::sqrt(sq);
}

double unit_cell_cost(const HamiltonianModel& model, const Eigen::MatrixXd& shared,
                      double t, int order) {
  CompileOptions options;
  options.with_third_order = order == 3;
  return unit_cell_cost(compile(model, options), shared, t, order);
}

Eigen::MatrixXd grad_unit_cost_sq(const CostPolynomial& poly,
                                  const Eigen::MatrixXd& shared_free, double t) {
  const HamiltonianModel& model = poly.model();
  if (!model.has_classes() || !model.lattice())
    throw ConfigError("unit-cell cost needs a uniform periodic lattice model");
  const int R = static_cast<int>(shared_free.rows()) + 1;
  const ParamSheet sheet =
      ParamSheet::constrained(model, t, R, expand_class_columns(model, shared_free));
  const std::vector<char> mask = anchored_pairs(poly);
  return reduce_shared_grad(model, grad_free_rows(poly, sheet, &mask));
}

}  // namespace prodopt
