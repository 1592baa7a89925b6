#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "prodopt/pauli.hpp"

namespace prodopt {

// Rectangular site grid, row-major: site index = y * nx + x.  A chain is
// ny == 1.  Periodic wrap bonds are only added along a direction with more
// than two sites, so the two-site ring keeps a single bond.
struct LatticeInfo {
  int nx = 1;
  int ny = 1;
  bool periodic = false;

  int sites() const { return nx * ny; }
  int dims() const { return (nx > 1 ? 1 : 0) + (ny > 1 ? 1 : 0); }
  std::pair<int, int> coords(int site) const { return {site % nx, site / nx}; }
  bool adjacent(int a, int b) const;
};

struct CouplingRange {
  double center = 0.0;
  double half_width = 0.0;
};

enum class ModelKind { XY, TFIM, Custom };

// Inputs for the stock builders.  Couplings are drawn uniformly from
// center +/- half_width, one independent draw per bond (or per site for
// fields), in term order.  Interaction terms enter the Hamiltonian with a
// minus sign, field terms with a plus sign.
struct CouplingSpec {
  bool full_graph = false;
  int n_full = 0;  // sites when full_graph; otherwise the lattice decides
  LatticeInfo lattice;

  CouplingRange j_y{0.5, 0.0};    // YY bonds (XY model)
  CouplingRange j_z{1.0, 0.0};    // ZZ bonds (both models)
  CouplingRange field{0.25, 0.0}; // X on every site

  std::uint64_t seed = 1;
  bool normalize = true;
};

struct HamiltonianTerm {
  std::string label;
  double coeff = 0.0;
  PauliString op;
};

// H = sum_j c_j H_j with distinct Hermitian Pauli strings H_j.  When built
// from a uniform periodic spec (all half-widths zero), terms carry a
// translation-class index: terms in one class are images of each other
// under lattice translations and share a coefficient.
class HamiltonianModel {
 public:
  HamiltonianModel(int n, std::vector<HamiltonianTerm> terms,
                   std::optional<LatticeInfo> lattice = std::nullopt,
                   std::vector<int> classes = {});

  int n() const { return n_; }
  int term_count() const { return static_cast<int>(terms_.size()); }
  const std::vector<HamiltonianTerm>& terms() const { return terms_; }
  const HamiltonianTerm& term(int j) const { return terms_[j]; }

  const std::optional<LatticeInfo>& lattice() const { return lattice_; }

  bool has_classes() const { return !classes_.empty(); }
  const std::vector<int>& translation_classes() const { return classes_; }
  int class_count() const { return class_count_; }
  // Representative term index per class (first occurrence).
  const std::vector<int>& class_representatives() const { return class_reps_; }

  double norm_scale() const { return norm_scale_; }
  ModelKind kind() const { return kind_; }

  std::vector<double> coefficients() const;
  double coeff_sq_sum() const;
  double max_abs_coeff() const;

  // Rescales every coefficient so sum_j c_j^2 = n; returns the factor.
  double normalize();

  PauliSum to_sum() const;

 private:
  friend HamiltonianModel build_xy(const CouplingSpec&);
  friend HamiltonianModel build_tfim(const CouplingSpec&);
  friend HamiltonianModel unit_cell(const HamiltonianModel&, int);

  int n_;
  std::vector<HamiltonianTerm> terms_;
  std::optional<LatticeInfo> lattice_;
  std::vector<int> classes_;
  std::vector<int> class_reps_;
  int class_count_ = 0;
  double norm_scale_ = 1.0;
  ModelKind kind_ = ModelKind::Custom;
};

// One uniform draw from center +/- half_width.
double sample_coupling(const CouplingRange& range, std::mt19937_64& rng);

// XY model with transverse field:
//   H = - sum_<mu,nu> (Jy YY + Jz ZZ) + sum_mu h X_mu.
// Term order: X fields (site order), then YY bonds, then ZZ bonds, with
// bonds enumerated over ordered pairs mu < nu row-major.
HamiltonianModel build_xy(const CouplingSpec& spec);

// Transverse-field Ising model:
//   H = - sum_<mu,nu> J ZZ + sum_mu h X_mu,   J drawn from j_z.
// Term order: ZZ bonds first, then X fields.
HamiltonianModel build_tfim(const CouplingSpec& spec);

// Arbitrary term list given as (label, coefficient) pairs.
HamiltonianModel build_custom(const std::vector<std::pair<std::string, double>>& terms,
                              bool normalize = false);

// Translation-invariant window of a uniform periodic model, sized so that
// optimizing it once covers the full lattice: per dimension 2p - 1 sites
// for a second-order window and 3p - 2 for third order, where p is the
// linear extent of the largest term support.  The window model is open,
// unnormalized, carries the parent's class coefficients, and keeps class
// labels aligned with the parent's classes.
HamiltonianModel unit_cell(const HamiltonianModel& parent, int order);

}  // namespace prodopt
