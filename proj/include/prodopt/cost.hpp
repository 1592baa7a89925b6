#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "prodopt/model.hpp"

namespace prodopt {

// Parameter sheet of the layered product ansatz
//   U(theta) = prod_{r=R..1} prod_{j=M..1} exp(-i theta_{r,j} H_j),
// i.e. layer r = 1 acts first.  Rows are layers, columns follow the model's
// term order; the multi-index (r, j) is ordered row-major.  A constrained
// sheet slaves its last row to theta_{R,j} = t c_j - sum_{r<R} theta_{r,j},
// recomputed from the free rows on every write, so the first-order mismatch
// xi vanishes identically.
class ParamSheet {
 public:
  static ParamSheet trotter(const HamiltonianModel& model, double t, int layers);
  static ParamSheet constrained(const HamiltonianModel& model, double t, int layers,
                                const Eigen::MatrixXd& free_rows);
  static ParamSheet unconstrained(const HamiltonianModel& model, double t,
                                  Eigen::MatrixXd theta);

  int layers() const { return static_cast<int>(theta_.rows()); }
  int terms() const { return static_cast<int>(theta_.cols()); }
  double t() const { return t_; }
  bool constrained() const { return constrained_; }

  double theta(int r, int j) const { return theta_(r, j); }
  const Eigen::MatrixXd& matrix() const { return theta_; }
  // Per-column layer-sum targets t*c_j.
  const Eigen::VectorXd& targets() const { return targets_; }
  // xi_j = sum_r theta_{r,j} - t c_j (identically zero when constrained).
  Eigen::VectorXd xi() const;

  int free_count() const { return (layers() - 1) * terms(); }
  Eigen::VectorXd free_parameters() const;
  void set_free_parameters(const Eigen::VectorXd& free);

  // Same angles scaled by s, returned unconstrained (targets kept).
  ParamSheet scaled(double s) const;

 private:
  friend ParamSheet repeat_sheet(const ParamSheet&, int);

  ParamSheet(double t, Eigen::VectorXd targets, Eigen::MatrixXd theta, bool constrained);
  void reslave();

  double t_ = 0.0;
  Eigen::VectorXd targets_;
  Eigen::MatrixXd theta_;
  bool constrained_ = false;
};

// K copies of the sheet stacked: KR layers simulating time Kt.  The layer
// constraint carries over by inheritance, so the result needs no slaved row.
ParamSheet repeat_sheet(const ParamSheet& sheet, int K);

// Replicates class columns onto term columns: out(r, j) = shared(r, class(j)).
// Works on any row count, e.g. free rows of a constrained sheet.
Eigen::MatrixXd expand_class_columns(const HamiltonianModel& model,
                                     const Eigen::MatrixXd& shared);
// Sheet with theta_{r,j} = shared(r, class(j)) for translation-invariant
// parameters; shared is layers x class_count.
ParamSheet expand_shared(const HamiltonianModel& model, double t,
                         const Eigen::MatrixXd& shared);
// Adjoint of expand_shared on free-row gradients: column sums over classes.
Eigen::MatrixXd reduce_shared_grad(const HamiltonianModel& model,
                                   const Eigen::MatrixXd& grad);

// One anticommuting pair j > j': [H_j, H_j'] = 2i * sign * Q(string_id).
struct PairEntry {
  int j, jp;
  double sign;
  int string_id;
};

// One nested commutator [H_j, [H_k, H_l]] = weight * Q(string_id) with real
// weight in {+-4}; both (k,l) orders are stored since the coefficient tensor
// is not symmetric in them.
struct TripleEntry {
  int j, k, l;
  double weight;
  int string_id;
};

struct ChiCoefficients {
  std::vector<double> chi;  // aligned with CostPolynomial::pairs()
  Eigen::VectorXd xi;
};

struct PhiTensor {
  std::vector<double> phi;  // aligned with CostPolynomial::triples()
};

struct CompileOptions {
  bool with_third_order = false;
  std::size_t pair_budget = 4'000'000;
  std::size_t triple_budget = 50'000'000;
};

// Commutator structure of a model, reduced to trace tables: every pair and
// nested commutator of Hermitian Pauli strings is again a single string, so
// the Hilbert-Schmidt contractions group by string identity and the cost
// evaluation never touches a dense matrix.
class CostPolynomial {
 public:
  const HamiltonianModel& model() const { return *model_; }
  const std::vector<PairEntry>& pairs() const { return pairs_; }
  const std::vector<TripleEntry>& triples() const { return triples_; }
  bool has_third_order() const { return with_third_order_; }
  int pair_string_count() const { return pair_string_count_; }
  int triple_string_count() const { return triple_string_count_; }

  // 2^{-n} Tr([H_j,H_j'][H_k,H_k']) between stored pairs: -4 s_p s_q when
  // the commutators share their string and 0 otherwise.
  double trace_pair(int p, int q) const;

 private:
  friend CostPolynomial compile(const HamiltonianModel&, const CompileOptions&);

  const HamiltonianModel* model_ = nullptr;
  std::vector<PairEntry> pairs_;
  std::vector<TripleEntry> triples_;
  int pair_string_count_ = 0;
  int triple_string_count_ = 0;
  bool with_third_order_ = false;
};

CostPolynomial compile(const HamiltonianModel& model, const CompileOptions& options = {});

// chi_{j,j'} = 1/2 [ sum_r th_{r,j} th_{r,j'}
//                  + sum_{r>r'} (th_{r,j} th_{r',j'} - th_{r,j'} th_{r',j}) ]
// evaluated for every stored pair, plus the first-order mismatch xi.
ChiCoefficients chi_of(const CostPolynomial& poly, const ParamSheet& sheet);

// C(theta)^2 = || sum_{j>j'} chi_{j,j'} [H_j, H_j'] ||^2 >= 0 (squared
// normalized Frobenius norm, contracted through the pair table).
double cost_sq(const CostPolynomial& poly, const ParamSheet& sheet);

// Analytic gradient of cost_sq with respect to the (R-1) x M free rows of a
// constrained sheet (the slaved last layer's chain rule included).
Eigen::MatrixXd grad_cost_sq(const CostPolynomial& poly, const ParamSheet& sheet);

// Coefficient tensor of the nested commutators, one value per stored triple,
// assembled from the five theta-sums of the row-major multi-index expansion.
PhiTensor phi_of(const CostPolynomial& poly, const ParamSheet& sheet);

// Third-order error term E(theta) = || sum Phi_{j,k,l} [H_j,[H_k,H_l]] ||.
double error_term(const CostPolynomial& poly, const ParamSheet& sheet);

// Repetition rest tensor: Phi(theta^K) = K Phi + K(K-1)/2 PhiRest + C(K,3) PhiCubic
// entrywise, for any sheet.
PhiTensor phi_rest_of(const CostPolynomial& poly, const ParamSheet& sheet);
PhiTensor phi_cubic_of(const CostPolynomial& poly, const ParamSheet& sheet);

// Lambda = || sum PhiRest_{j,k,l} [H_j,[H_k,H_l]] ||, giving the repetition
// bound E(theta^K) <= K E(theta) + K(K-1)/2 Lambda.  The repeated sequence is
// the K-th power of a single unitary, so its log is exactly K times the
// original exponent and PhiRest contracts to a null operator: Lambda vanishes
// up to rounding and the bound holds as an equality.  Kept as a diagnostic.
double lambda_rest(const CostPolynomial& poly, const ParamSheet& sheet);

// Translation-invariant per-site cost: the norm of the commutator bundle
// anchored at one lattice site, evaluated with class-shared parameters.
// Order 2 gives C_unit with C <= n C_unit (equality with sqrt(n) when the
// bundle strings never collide across sites); order 3 gives E_unit.
double unit_cell_cost(const HamiltonianModel& model, const Eigen::MatrixXd& shared,
                      double t, int order);
double unit_cell_cost(const CostPolynomial& poly, const Eigen::MatrixXd& shared,
                      double t, int order);

// Analytic gradient of the squared per-site cost with respect to the
// (R-1) x A free shared rows; the slaved-row and class-replication chain
// rules are both folded in.
Eigen::MatrixXd grad_unit_cost_sq(const CostPolynomial& poly,
                                  const Eigen::MatrixXd& shared_free, double t);

}  // namespace prodopt
