#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "prodopt/errors.hpp"

namespace prodopt {

using Complex = std::complex<double>;
using DenseMatrix = Eigen::MatrixXcd;

// Coefficients below this magnitude are dropped when stored in a PauliSum.
inline constexpr double kCoeffThreshold = 1e-14;

// Default ceiling for dense realizations (4096^2 complex doubles ~ 256 MB).
inline constexpr int kDenseQubitLimit = 12;

// Powers of i as exact complex values; index is taken mod 4.
Complex i_power(int k);

/// An n-qubit Pauli operator stored as  scale * i^phase_pow * X^{x} Z^{z}.
///
/// The masks encode one tensor factor per qubit: bit q of (x, z) reads
/// 00 = I, 10 = X, 11 = Y (up to phase), 01 = Z.  Multiplication XORs the
/// masks and advances the integer phase exponent, so products and
/// commutators are phase-exact; `scale` carries any real weight.
class PauliString {
 public:
  PauliString() = default;

  // Identity on n qubits.
  static PauliString identity(int n);

  // The Hermitian string with the given axes: i^{popcount(x&z)} X^x Z^z,
  // i.e. the literal tensor product of I/X/Y/Z factors with phase +1.
  static PauliString from_axes(int n, std::uint64_t x, std::uint64_t z,
                               double scale = 1.0);

  // Raw representation, phase exponent supplied explicitly.
  static PauliString from_parts(int n, std::uint64_t x, std::uint64_t z,
                                int phase_pow, double scale = 1.0);

  // Parse "XIZY"; character k acts on qubit k. Result is Hermitian (phase +1).
  static PauliString from_label(std::string_view label, double scale = 1.0);

  int n() const { return n_; }
  std::uint64_t x_mask() const { return x_; }
  std::uint64_t z_mask() const { return z_; }
  int phase_pow() const { return phase_; }
  double scale() const { return scale_; }

  // Full scalar prefactor scale * i^phase_pow.
  Complex phase() const { return scale_ * i_power(phase_); }

  bool identity_axes() const { return x_ == 0 && z_ == 0; }
  bool is_hermitian() const;

  // P*P = square_scalar() * I for every Pauli string.
  Complex square_scalar() const;

  bool commutes_with(const PauliString& other) const;

  // Human-readable form, e.g. "-i YZI" (scale printed only when != 1).
  std::string label() const;

  friend PauliString multiply(const PauliString& p, const PauliString& q);

 private:
  PauliString(int n, std::uint64_t x, std::uint64_t z, int phase_pow, double scale);

  int n_ = 0;
  std::uint64_t x_ = 0;
  std::uint64_t z_ = 0;
  int phase_ = 0;      // exponent of i, 0..3
  double scale_ = 1.0;
};

// Phase-exact product pq.
PauliString multiply(const PauliString& p, const PauliString& q);

// Mask pair identifying a Pauli basis element; coefficients in a PauliSum
// refer to the Hermitian representative from_axes(n, x, z).
struct PauliAxes {
  std::uint64_t x = 0;
  std::uint64_t z = 0;
  bool operator==(const PauliAxes&) const = default;
};

struct PauliAxesHash {
  std::size_t operator()(const PauliAxes& a) const {
    std::uint64_t h = a.x * 0x9e3779b97f4a7c15ull;
    h ^= a.z + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

/// Complex linear combination of Pauli strings, keyed by (x, z) masks.
///
/// Coefficients are relative to the Hermitian basis strings, which are
/// orthonormal under the normalized trace 2^{-n} Tr(P Q).  Accumulation
/// drops any coefficient whose magnitude falls below kCoeffThreshold.
class PauliSum {
 public:
  using TermMap = std::unordered_map<PauliAxes, Complex, PauliAxesHash>;

  PauliSum() = default;
  explicit PauliSum(int n) : n_(n) {}

  int n() const { return n_; }
  std::size_t size() const { return terms_.size(); }
  bool empty() const { return terms_.empty(); }

  void add(const PauliString& p);
  void add(const PauliString& p, Complex weight);
  void add_axes(PauliAxes axes, Complex coeff);

  Complex coefficient(PauliAxes axes) const;

  const TermMap& terms() const { return terms_; }

  // Terms sorted by (x, z) for deterministic display and serialization.
  std::vector<std::pair<PauliAxes, Complex>> sorted_terms() const;

  PauliSum& operator+=(const PauliSum& other);
  PauliSum& operator-=(const PauliSum& other);
  PauliSum& operator*=(Complex factor);

  // sqrt(Sum |coeff|^2) = normalized Hilbert-Schmidt norm.
  double hs_norm() const;

  std::string str() const;

 private:
  int n_ = 0;
  TermMap terms_;
};

// pq - qp; empty when the strings commute, otherwise 2*(pq).
PauliSum commutator(const PauliString& p, const PauliString& q);

PauliSum multiply(const PauliSum& a, const PauliSum& b);
PauliSum commutator(const PauliSum& a, const PauliSum& b);

// 2^{-n} Tr(a^dag b): sum of conj(coeff_a) * coeff_b over matching keys.
Complex hs_inner(const PauliSum& a, const PauliSum& b);

// 2^{-n} Tr(a b) with no adjoint: sum of coeff_a * coeff_b.
Complex trace_product(const PauliSum& a, const PauliSum& b);

DenseMatrix to_dense(const PauliString& p, int dense_limit = kDenseQubitLimit);
DenseMatrix to_dense(const PauliSum& a, int dense_limit = kDenseQubitLimit);

}  // namespace prodopt
