#pragma once

#include <Eigen/Dense>

#include "prodopt/cost.hpp"
#include "prodopt/model.hpp"
#include "prodopt/pauli.hpp"

namespace prodopt {

// Product-formula order and its per-step exponential budget.
struct TrotterOrder {
  int q = 1;  // 1, 2, or 4

  // Exponentials per step: M plain factors, 2M-1 for the symmetric
  // splitting, five symmetric stages for the fourth order.
  int exponentials_per_step(int terms) const;
};

// Dense e^{-itH} through one Hermitian eigendecomposition, reusable across
// times; every matrix it returns is unitary to machine precision.
class Propagator {
 public:
  explicit Propagator(const HamiltonianModel& model,
                      int dense_limit = kDenseQubitLimit);

  Eigen::Index dim() const { return vectors_.rows(); }
  DenseMatrix at(double t) const;

 private:
  Eigen::VectorXd values_;
  DenseMatrix vectors_;
};

// One-shot e^{-itH}.
DenseMatrix propagator(const HamiltonianModel& model, double t);

// Ordered dense product prod_{r,j} exp(-i theta_{r,j} H_j) with layer r = 1
// applied first (rightmost) and term j = 1 innermost, matching the sheet
// convention.  Each factor costs O(dim^2) through the string's row action.
DenseMatrix ansatz_unitary(const HamiltonianModel& model, const ParamSheet& sheet);

// Product-formula approximation of e^{-itH} with `steps` repetitions of the
// order-q step (q = 1: plain ordered factors, identical in construction
// order to the ansatz at the Trotter sheet; q = 2: symmetric splitting;
// q = 4: the recursive symmetric construction S2(s tau)^2 S2((1-4s) tau)
// S2(s tau)^2 with s = 1/(4 - 4^{1/3})).
DenseMatrix trotter_unitary(const HamiltonianModel& model, double t, int steps,
                            int q);

// Normalized Frobenius distance sqrt(2^{-n} sum |u_ab - v_ab|^2).
double epsilon(const DenseMatrix& u, const DenseMatrix& v);

// Distance of the K-fold repeated sheet from e^{-iKtH}, with the repeated
// circuit formed by powering the single-step dense unitary.
double repeated_epsilon(const HamiltonianModel& model, const ParamSheet& sheet,
                        int K);

}  // namespace prodopt
