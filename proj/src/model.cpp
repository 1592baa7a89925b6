#include "prodopt/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <set>
#include <sstream>

#include "prodopt/errors.hpp"
#include "prodopt/rng.hpp"

namespace prodopt {

bool LatticeInfo::adjacent(int a, int b) const {
  const auto [ax, ay] = coords(a);
  const auto [bx, by] = coords(b);
  const int dx = std::abs(ax - bx);
  const int dy = std::abs(ay - by);
  const bool x_bond = dy == 0 && (dx == 1 || (periodic && nx > 2 && dx == nx - 1));
  const bool y_bond = dx == 0 && (dy == 1 || (periodic && ny > 2 && dy == ny - 1));
  return x_bond || y_bond;
}

HamiltonianModel::HamiltonianModel(int n, std::vector<HamiltonianTerm> terms,
                                   std::optional<LatticeInfo> lattice,
                                   std::vector<int> classes)
    : n_(n),
      terms_(std::move(terms)),
      lattice_(std::move(lattice)),
      classes_(std::move(classes)) {
  if (n_ < 1) throw DimensionError("model needs at least one qubit");
  if (terms_.empty()) throw ConfigError("model has no terms");
  std::set<std::pair<std::uint64_t, std::uint64_t>> seen;
  for (const auto& t : terms_) {
    if (t.op.n() != n_) throw DimensionError("term qubit count mismatch");
    if (!t.op.is_hermitian() || t.op.scale() != 1.0)
      throw ConfigError("terms must be unit-scale Hermitian Pauli strings");
    if (!std::isfinite(t.coeff)) throw NumericalError("non-finite coefficient");
    if (!seen.insert({t.op.x_mask(), t.op.z_mask()}).second)
      throw ConfigError("duplicate Pauli string in model: " + t.op.label());
  }
  if (!classes_.empty()) {
    if (classes_.size() != terms_.size())
      throw DimensionError("class list length mismatch");
    for (std::size_t j = 0; j < classes_.size(); ++j) {
      const int c = classes_[j];
      if (c < 0 || c > class_count_) throw ConfigError("class ids must be dense");
      if (c == class_count_) {
        class_reps_.push_back(static_cast<int>(j));
        ++class_count_;
      }
    }
  }
}

std::vector<double> HamiltonianModel::coefficients() const {
  std::vector<double> c(terms_.size());
  for (std::size_t j = 0; j < terms_.size(); ++j) c[j] = terms_[j].coeff;
  return c;
}

double HamiltonianModel::coeff_sq_sum() const {
  double s = 0.0;
  for (const auto& t : terms_) s += t.coeff * t.coeff;
  return s;
}

double HamiltonianModel::max_abs_coeff() const {
  double m = 0.0;
  for (const auto& t : terms_) m = std::max(m, std::abs(t.coeff));
  return m;
}

double HamiltonianModel::normalize() {
  const double s = coeff_sq_sum();
  if (s <= 0.0) throw NumericalError("cannot normalize a zero Hamiltonian");
  const double factor = std::sqrt(static_cast<double>(n_) / s);
  for (auto& t : terms_) t.coeff *= factor;
  norm_scale_ *= factor;
  return factor;
}

PauliSum HamiltonianModel::to_sum() const {
  PauliSum sum(n_);
  for (const auto& t : terms_) sum.add(t.op, t.coeff);
  return sum;
}

double sample_coupling(const CouplingRange& range, std::mt19937_64& rng) {
  if (range.half_width < 0.0) throw ConfigError("negative coupling half-width");
  if (range.half_width == 0.0) return range.center;
  return uniform_in(range.center - range.half_width,
                    range.center + range.half_width, rng);
}

namespace {

// Class keys per builder, compressed to dense ids in order of first
// appearance so the same lattice shape always yields the same labeling.
constexpr int kXyField = 0, kXyYH = 1, kXyYV = 2, kXyZH = 3, kXyZV = 4;
constexpr int kIsingZH = 0, kIsingZV = 1, kIsingField = 2;

struct Bond {
  int a, b;
  int dir;  // 0 horizontal, 1 vertical (0 on a full graph)
};

struct Graph {
  int n;
  std::vector<Bond> bonds;
  std::optional<LatticeInfo> lattice;
};

Graph build_graph(const CouplingSpec& spec) {
  Graph g;
  if (spec.full_graph) {
    g.n = spec.n_full;
    if (g.n < 1) throw DimensionError("full graph needs at least one site");
    for (int a = 0; a < g.n; ++a)
      for (int b = a + 1; b < g.n; ++b) g.bonds.push_back({a, b, 0});
  } else {
    const LatticeInfo& lat = spec.lattice;
    if (lat.nx < 1 || lat.ny < 1) throw DimensionError("lattice extents must be positive");
    g.n = lat.sites();
    g.lattice = lat;
    for (int a = 0; a < g.n; ++a)
      for (int b = a + 1; b < g.n; ++b)
        if (lat.adjacent(a, b))
          g.bonds.push_back({a, b, lat.coords(a).second == lat.coords(b).second ? 0 : 1});
  }
  if (g.n > 64) throw CapacityError("site count exceeds 64");
  return g;
}

std::string site_label(const char* axis, int site) {
  std::ostringstream out;
  out << axis << "@" << site;
  return out.str();
}

std::string bond_label(const char* axis, int a, int b) {
  std::ostringstream out;
  out << axis << "@" << a << "-" << b;
  return out.str();
}

PauliString site_op(int n, int site, char axis) {
  std::string label(static_cast<std::size_t>(n), 'I');
  label[static_cast<std::size_t>(site)] = axis;
  return PauliString::from_label(label);
}

PauliString bond_op(int n, int a, int b, char axis) {
  std::string label(static_cast<std::size_t>(n), 'I');
  label[static_cast<std::size_t>(a)] = axis;
  label[static_cast<std::size_t>(b)] = axis;
  return PauliString::from_label(label);
}

bool uniform_couplings(const CouplingSpec& spec) {
  return spec.j_y.half_width == 0.0 && spec.j_z.half_width == 0.0 &&
         spec.field.half_width == 0.0;
}

struct TermAccumulator {
  bool keep_classes;
  std::vector<HamiltonianTerm> terms;
  std::vector<int> keys;

  void push(std::string label, double coeff, PauliString op, int key) {
    if (coeff == 0.0) return;  // configured-out term, not a random zero
    terms.push_back({std::move(label), coeff, std::move(op)});
    keys.push_back(key);
  }

  std::vector<int> dense_classes() const {
    if (!keep_classes) return {};
    std::vector<int> ids(keys.size());
    std::vector<int> remap(8, -1);
    int next = 0;
    for (std::size_t j = 0; j < keys.size(); ++j) {
      int& slot = remap[static_cast<std::size_t>(keys[j])];
      if (slot < 0) slot = next++;
      ids[j] = slot;
    }
    return ids;
  }
};

HamiltonianModel finish(const CouplingSpec& spec, const Graph& g,
                        TermAccumulator& acc) {
  HamiltonianModel model(g.n, std::move(acc.terms), g.lattice, acc.dense_classes());
  if (spec.normalize) model.normalize();
  return model;
}

}  // namespace

HamiltonianModel build_xy(const CouplingSpec& spec) {
  const Graph g = build_graph(spec);
  std::mt19937_64 rng(spec.seed);
  TermAccumulator acc{g.lattice.has_value() && g.lattice->periodic &&
                               uniform_couplings(spec)};
  for (int mu = 0; mu < g.n; ++mu)
    acc.push(site_label("X", mu), sample_coupling(spec.field, rng),
             site_op(g.n, mu, 'X'), kXyField);
  for (const Bond& bond : g.bonds)
    acc.push(bond_label("YY", bond.a, bond.b), -sample_coupling(spec.j_y, rng),
             bond_op(g.n, bond.a, bond.b, 'Y'), bond.dir == 0 ? kXyYH : kXyYV);
  for (const Bond& bond : g.bonds)
    acc.push(bond_label("ZZ", bond.a, bond.b), -sample_coupling(spec.j_z, rng),
             bond_op(g.n, bond.a, bond.b, 'Z'), bond.dir == 0 ? kXyZH : kXyZV);
  HamiltonianModel model = finish(spec, g, acc);
  model.kind_ = ModelKind::XY;
  return model;
}

HamiltonianModel build_tfim(const CouplingSpec& spec) {
  const Graph g = build_graph(spec);
  std::mt19937_64 rng(spec.seed);
  TermAccumulator acc{g.lattice.has_value() && g.lattice->periodic &&
                               uniform_couplings(spec)};
  for (const Bond& bond : g.bonds)
    acc.push(bond_label("ZZ", bond.a, bond.b), -sample_coupling(spec.j_z, rng),
             bond_op(g.n, bond.a, bond.b, 'Z'), bond.dir == 0 ? kIsingZH : kIsingZV);
  for (int mu = 0; mu < g.n; ++mu)
    acc.push(site_label("X", mu), sample_coupling(spec.field, rng),
             site_op(g.n, mu, 'X'), kIsingField);
  HamiltonianModel model = finish(spec, g, acc);
  model.kind_ = ModelKind::TFIM;
  return model;
}

HamiltonianModel build_custom(const std::vector<std::pair<std::string, double>>& terms,
                              bool normalize) {
  if (terms.empty()) throw ConfigError("model has no terms");
  const int n = static_cast<int>(terms.front().first.size());
  std::vector<HamiltonianTerm> list;
  for (const auto& [label, coeff] : terms) {
    if (static_cast<int>(label.size()) != n)
      throw DimensionError("custom term labels must share one length");
    if (coeff == 0.0) continue;
    list.push_back({label, coeff, PauliString::from_label(label)});
  }
  HamiltonianModel model(n, std::move(list));
  if (normalize) model.normalize();
  return model;
}

namespace {

// Minimal contiguous window (in sites) covering the given coordinates along
// one dimension; on a ring the window may straddle the wrap.
int covering_window(std::vector<int> coords, int extent, bool periodic) {
  std::sort(coords.begin(), coords.end());
  coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
  if (!periodic) return coords.back() - coords.front() + 1;
  int max_gap = coords.front() + extent - coords.back();
  for (std::size_t i = 1; i < coords.size(); ++i)
    max_gap = std::max(max_gap, coords[i] - coords[i - 1]);
  return extent - max_gap + 1;
}

int support_extent(const HamiltonianModel& model) {
  const LatticeInfo& lat = *model.lattice();
  int p = 1;
  for (const auto& t : model.terms()) {
    std::vector<int> xs, ys;
    const std::uint64_t support = t.op.x_mask() | t.op.z_mask();
    for (int site = 0; site < model.n(); ++site)
      if (support >> site & 1) {
        const auto [x, y] = lat.coords(site);
        xs.push_back(x);
        ys.push_back(y);
      }
    p = std::max(p, covering_window(std::move(xs), lat.nx, lat.periodic));
    p = std::max(p, covering_window(std::move(ys), lat.ny, lat.periodic));
  }
  return p;
}

// Builder key of a term, recovered from its label and bond geometry.
int term_key(ModelKind kind, const HamiltonianTerm& t, const LatticeInfo& lat) {
  const char axis = t.label.front();
  if (axis == 'X') return kind == ModelKind::XY ? kXyField : kIsingField;
  std::uint64_t support = t.op.x_mask() | t.op.z_mask();
  const int a = std::countr_zero(support);
  const int b = 63 - std::countl_zero(support);
  const bool vertical = lat.coords(a).second != lat.coords(b).second;
  if (axis == 'Y') return vertical ? kXyYV : kXyYH;
  if (kind == ModelKind::XY) return vertical ? kXyZV : kXyZH;
  return vertical ? kIsingZV : kIsingZH;
}

}  // namespace

HamiltonianModel unit_cell(const HamiltonianModel& parent, int order) {
  if (order != 2 && order != 3)
    throw ConfigError("unit cells are defined for orders 2 and 3");
  if (!parent.has_classes() || !parent.lattice())
    throw ConfigError("unit cell needs a uniform periodic lattice model");
  if (parent.kind() != ModelKind::XY && parent.kind() != ModelKind::TFIM)
    throw ConfigError("unit cell supports the stock builders only");

  const LatticeInfo& lat = *parent.lattice();
  const int p = support_extent(parent);
  const int w = order == 2 ? 2 * p - 1 : 3 * p - 2;

  CouplingSpec cell;
  cell.lattice.nx = lat.nx > 1 ? w : 1;
  cell.lattice.ny = lat.ny > 1 ? w : 1;
  cell.lattice.periodic = false;
  cell.normalize = false;
  cell.j_y = cell.j_z = cell.field = {0.0, 0.0};
  if ((lat.nx > 1 && lat.nx < cell.lattice.nx) ||
      (lat.ny > 1 && lat.ny < cell.lattice.ny))
    throw ConfigError("lattice too small to host a unit cell of this order");

  // Recover per-class couplings from the parent (post-normalization values;
  // interaction coefficients carry a minus sign relative to the coupling).
  // Classes absent from the parent stay zero and drop out of the cell too.
  std::vector<int> key_to_class(8, -1);
  for (std::size_t c = 0; c < parent.class_representatives().size(); ++c) {
    const HamiltonianTerm& t = parent.term(parent.class_representatives()[c]);
    const char axis = t.label.front();
    if (axis == 'X')
      cell.field = {t.coeff, 0.0};
    else if (axis == 'Y')
      cell.j_y = {-t.coeff, 0.0};
    else
      cell.j_z = {-t.coeff, 0.0};
    key_to_class[static_cast<std::size_t>(term_key(parent.kind(), t, lat))] =
        static_cast<int>(c);
  }

  HamiltonianModel window =
      parent.kind() == ModelKind::XY ? build_xy(cell) : build_tfim(cell);

  // The open window is still uniform, so every term is a translate of a
  // parent class representative; label it with the parent's class id.
  std::vector<int> classes(window.terms().size());
  for (std::size_t j = 0; j < classes.size(); ++j) {
    const int id = key_to_class[static_cast<std::size_t>(
        term_key(window.kind(), window.term(j), *window.lattice()))];
    if (id < 0) throw NumericalError("window term has no parent class");
    classes[j] = id;
  }
  HamiltonianModel model(window.n(), window.terms(), window.lattice(),
                         std::move(classes));
  model.kind_ = parent.kind();
  return model;
}

}  // namespace prodopt
