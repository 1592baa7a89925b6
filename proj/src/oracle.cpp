#include "prodopt/oracle.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <string>

#include <Eigen/Eigenvalues>

#include "prodopt/errors.hpp"

namespace prodopt {

namespace {

void check_dense_limit(int n, int dense_limit) {
  if (n > dense_limit) {
    throw CapacityError("dense realization of " + std::to_string(n) +
                        " qubits exceeds the limit of " + std::to_string(dense_limit));
  }
}

bool parity(std::uint64_t v) { return std::popcount(v) & 1; }

// u <- exp(-i angle P) u without forming the factor: P maps basis row a to
// phase * row (a ^ x) with a sign from the z mask, so the factor only mixes
// row pairs.  Exact because every unit Hermitian string squares to I.
void apply_exponential(DenseMatrix& u, const PauliString& p, double angle) {
  const Eigen::Index dim = u.rows();
  const double c = std::cos(angle);
  const Complex ms = Complex(0.0, -std::sin(angle)) * p.phase();
  const std::uint64_t x = p.x_mask();
  const std::uint64_t z = p.z_mask();
  if (x == 0) {
    for (Eigen::Index a = 0; a < dim; ++a) {
      const double sign = parity(static_cast<std::uint64_t>(a) & z) ? -1.0 : 1.0;
      u.row(a) *= c + ms * sign;
    }
    return;
  }
  Eigen::RowVectorXcd keep(u.cols());
  for (Eigen::Index a = 0; a < dim; ++a) {
    const Eigen::Index b = a ^ static_cast<Eigen::Index>(x);
    if (b < a) continue;
    const double sign_ab = parity(static_cast<std::uint64_t>(b) & z) ? -1.0 : 1.0;
    const double sign_ba = parity(static_cast<std::uint64_t>(a) & z) ? -1.0 : 1.0;
    keep = u.row(a);
    u.row(a) = c * u.row(a) + (ms * sign_ab) * u.row(b);
    u.row(b) = c * u.row(b) + (ms * sign_ba) * keep;
  }
}

// Symmetric splitting: ascending half angles, full last term, descending
// half angles (2M - 1 exponentials).
void apply_strang_step(DenseMatrix& u, const HamiltonianModel& model, double tau) {
  const int m = model.term_count();
  for (int j = 0; j < m - 1; ++j)
    apply_exponential(u, model.term(j).op, 0.5 * tau * model.term(j).coeff);
  apply_exponential(u, model.term(m - 1).op, tau * model.term(m - 1).coeff);
  for (int j = m - 2; j >= 0; --j)
    apply_exponential(u, model.term(j).op, 0.5 * tau * model.term(j).coeff);
}

}  // namespace

int TrotterOrder::exponentials_per_step(int terms) const {
  switch (q) {
    case 1:
      return terms;
    case 2:
      return 2 * terms - 1;
    case 4:
      return 5 * (2 * terms - 1);
    default:
      throw ConfigError("unsupported product-formula order " + std::to_string(q));
  }
}

Propagator::Propagator(const HamiltonianModel& model, int dense_limit) {
  Eigen::SelfAdjointEigenSolver<DenseMatrix> solver(
      to_dense(model.to_sum(), dense_limit));
  if (solver.info() != Eigen::Success)
    throw NumericalError("eigendecomposition of the dense Hamiltonian failed");
  values_ = solver.eigenvalues();
  vectors_ = solver.eigenvectors();
}

DenseMatrix Propagator::at(double t) const {
  Eigen::VectorXcd phases(values_.size());
  for (Eigen::Index i = 0; i < values_.size(); ++i)
    phases(i) = std::exp(Complex(0.0, -t * values_(i)));
  return vectors_ * phases.asDiagonal() * vectors_.adjoint();
}

DenseMatrix propagator(const HamiltonianModel& model, double t) {
  return Propagator(model).at(t);
}

DenseMatrix ansatz_unitary(const HamiltonianModel& model, const ParamSheet& sheet) {
  check_dense_limit(model.n(), kDenseQubitLimit);
  if (sheet.terms() != model.term_count())
    throw DimensionError("sheet column count must match the model");
  const Eigen::Index dim = Eigen::Index(1) << model.n();
  DenseMatrix u = DenseMatrix::Identity(dim, dim);
  for (int r = 0; r < sheet.layers(); ++r)
    for (int j = 0; j < sheet.terms(); ++j)
      apply_exponential(u, model.term(j).op, sheet.theta(r, j));
  return u;
}

DenseMatrix trotter_unitary(const HamiltonianModel& model, double t, int steps,
                            int q) {
  check_dense_limit(model.n(), kDenseQubitLimit);
  if (steps < 1) throw DimensionError("step count must be positive");
  if (q != 1 && q != 2 && q != 4)
    throw ConfigError("unsupported product-formula order " + std::to_string(q));
  // First-order splitting is exactly the product ansatz at the Trotter sheet,
  // slaved last layer included, so the two entry points agree bit for bit.
  if (q == 1) return ansatz_unitary(model, ParamSheet::trotter(model, t, steps));
  const Eigen::Index dim = Eigen::Index(1) << model.n();
  DenseMatrix u = DenseMatrix::Identity(dim, dim);
  const double tau = t / steps;
  const double s = 1.0 / (4.0 - std::pow(4.0, 1.0 / 3.0));
  for (int step = 0; step < steps; ++step) {
    switch (q) {
      case 2:
        apply_strang_step(u, model, tau);
        break;
      default:
        apply_strang_step(u, model, s * tau);
        apply_strang_step(u, model, s * tau);
        apply_strang_step(u, model, (1.0 - 4.0 * s) * tau);
        apply_strang_step(u, model, s * tau);
        apply_strang_step(u, model, s * tau);
        break;
    }
  }
  return u;
}

double epsilon(const DenseMatrix& u, const DenseMatrix& v) {
  if (u.rows() != v.rows() || u.cols() != v.cols())
    throw DimensionError("mismatched unitary dimensions");
  return std::sqrt((u - v).squaredNorm() / static_cast<double>(u.rows()));
}

double repeated_epsilon(const HamiltonianModel& model, const ParamSheet& sheet,
                        int K) {
  if (K < 1) throw DimensionError("repetition count must be positive");
  DenseMatrix base = ansatz_unitary(model, sheet);
  DenseMatrix power = DenseMatrix::Identity(base.rows(), base.cols());
  for (int k = K; k > 0; k >>= 1) {
    if (k & 1) power = power * base;
    if (k > 1) base = base * base;
  }
  return epsilon(propagator(model, K * sheet.t()), power);
}

}  // namespace prodopt
