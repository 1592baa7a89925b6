#include "prodopt/pauli.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>

namespace prodopt {

namespace {

int popcount(std::uint64_t v) { return std::popcount(v); }

void check_same_n(int a, int b, const char* what) {
  if (a != b) {
    throw DimensionError(std::string(what) + ": qubit counts differ (" +
                         std::to_string(a) + " vs " + std::to_string(b) + ")");
  }
}

void check_masks(int n, std::uint64_t x, std::uint64_t z) {
  if (n <= 0 || n > 64) {
    throw DimensionError("qubit count must be in [1, 64], got " + std::to_string(n));
  }
  const std::uint64_t valid = (n == 64) ? ~0ull : ((1ull << n) - 1);
  if ((x & ~valid) != 0 || (z & ~valid) != 0) {
    throw DimensionError("mask has bits set at positions >= n");
  }
}

}  // namespace

Complex i_power(int k) {
  switch (((k % 4) + 4) % 4) {
    case 0: return {1.0, 0.0};
    case 1: return {0.0, 1.0};
    case 2: return {-1.0, 0.0};
    default: return {0.0, -1.0};
  }
}

PauliString::PauliString(int n, std::uint64_t x, std::uint64_t z, int phase_pow,
                         double scale)
    : n_(n), x_(x), z_(z), phase_(((phase_pow % 4) + 4) % 4), scale_(scale) {}

PauliString PauliString::identity(int n) {
  check_masks(n, 0, 0);
  return PauliString(n, 0, 0, 0, 1.0);
}

PauliString PauliString::from_axes(int n, std::uint64_t x, std::uint64_t z,
                                   double scale) {
  check_masks(n, x, z);
  return PauliString(n, x, z, popcount(x & z), scale);
}

PauliString PauliString::from_parts(int n, std::uint64_t x, std::uint64_t z,
                                    int phase_pow, double scale) {
  check_masks(n, x, z);
  return PauliString(n, x, z, phase_pow, scale);
}

PauliString PauliString::from_label(std::string_view label, double scale) {
  const int n = static_cast<int>(label.size());
  std::uint64_t x = 0, z = 0;
  for (int q = 0; q < n; ++q) {
    switch (label[q]) {
      case 'I': case 'i': break;
      case 'X': case 'x': x |= 1ull << q; break;
      case 'Y': case 'y': x |= 1ull << q; z |= 1ull << q; break;
      case 'Z': case 'z': z |= 1ull << q; break;
      default:
        throw DimensionError(std::string("invalid Pauli label character '") +
                             label[q] + "'");
    }
  }
  return from_axes(n, x, z, scale);
}

bool PauliString::is_hermitian() const {
  // P^dag = scale * i^{-k} Z^z X^x = scale * i^{-k} (-1)^{|x&z|} X^x Z^z.
  return ((phase_ - popcount(x_ & z_)) % 2) == 0;
}

Complex PauliString::square_scalar() const {
  // (X^x Z^z)^2 = (-1)^{|x&z|} I.
  const int k = (2 * phase_ + 2 * popcount(x_ & z_)) % 4;
  return scale_ * scale_ * i_power(k);
}

bool PauliString::commutes_with(const PauliString& other) const {
  check_same_n(n_, other.n_, "commutes_with");
  const int anti = popcount(x_ & other.z_) + popcount(z_ & other.x_);
  return (anti % 2) == 0;
}

std::string PauliString::label() const {
  std::ostringstream out;
  // Report the phase relative to the Hermitian basis string (I/X/Y/Z letters),
  // not the raw X^x Z^z form.
  const int k = ((phase_ - popcount(x_ & z_)) % 4 + 4) % 4;
  if (scale_ != 1.0) out << scale_ << "*";
  switch (k) {
    case 0: out << "+"; break;
    case 1: out << "+i"; break;
    case 2: out << "-"; break;
    case 3: out << "-i"; break;
  }
  out << " ";
  for (int q = 0; q < n_; ++q) {
    const bool xb = (x_ >> q) & 1, zb = (z_ >> q) & 1;
    out << (xb ? (zb ? 'Y' : 'X') : (zb ? 'Z' : 'I'));
  }
  return out.str();
}

PauliString multiply(const PauliString& p, const PauliString& q) {
  check_same_n(p.n_, q.n_, "multiply");
  // X^{x1}Z^{z1} X^{x2}Z^{z2} = (-1)^{|z1&x2|} X^{x1^x2} Z^{z1^z2}.
  const int phase = p.phase_ + q.phase_ + 2 * popcount(p.z_ & q.x_);
  return PauliString(p.n_, p.x_ ^ q.x_, p.z_ ^ q.z_, phase, p.scale_ * q.scale_);
}

void PauliSum::add(const PauliString& p) { add(p, Complex(1.0, 0.0)); }

void PauliSum::add(const PauliString& p, Complex weight) {
  if (n_ == 0) n_ = p.n();
  check_same_n(n_, p.n(), "PauliSum::add");
  // Convert the raw phase to the coefficient on the Hermitian basis string.
  const int rel = p.phase_pow() - popcount(p.x_mask() & p.z_mask());
  add_axes({p.x_mask(), p.z_mask()}, weight * p.scale() * i_power(rel));
}

void PauliSum::add_axes(PauliAxes axes, Complex coeff) {
  auto [it, inserted] = terms_.try_emplace(axes, coeff);
  if (!inserted) it->second += coeff;
  if (std::abs(it->second) < kCoeffThreshold) terms_.erase(it);
}

Complex PauliSum::coefficient(PauliAxes axes) const {
  auto it = terms_.find(axes);
  return it == terms_.end() ? Complex(0.0, 0.0) : it->second;
}

std::vector<std::pair<PauliAxes, Complex>> PauliSum::sorted_terms() const {
  std::vector<std::pair<PauliAxes, Complex>> out(terms_.begin(), terms_.end());
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.first.x != b.first.x ? a.first.x < b.first.x : a.first.z < b.first.z;
  });
  return out;
}

PauliSum& PauliSum::operator+=(const PauliSum& other) {
  if (n_ == 0) n_ = other.n_;
  check_same_n(n_, other.n_, "PauliSum::operator+=");
  for (const auto& [axes, coeff] : other.terms_) add_axes(axes, coeff);
  return *this;
}

PauliSum& PauliSum::operator-=(const PauliSum& other) {
  if (n_ == 0) n_ = other.n_;
  check_same_n(n_, other.n_, "PauliSum::operator-=");
  for (const auto& [axes, coeff] : other.terms_) add_axes(axes, -coeff);
  return *this;
}

PauliSum& PauliSum::operator*=(Complex factor) {
  if (std::abs(factor) < kCoeffThreshold) {
    terms_.clear();
    return *this;
  }
  for (auto& [axes, coeff] : terms_) coeff *= factor;
  return *this;
}

double PauliSum::hs_norm() const {
  double s = 0.0;
  for (const auto& [axes, coeff] : terms_) s += std::norm(coeff);
  return std::sqrt(s);
}

std::string PauliSum::str() const {
  std::ostringstream out;
  bool first = true;
  for (const auto& [axes, coeff] : sorted_terms()) {
    if (!first) out << " + ";
    first = false;
    out << "(" << coeff.real() << (coeff.imag() < 0 ? "-" : "+")
        << std::abs(coeff.imag()) << "i)*";
    for (int q = 0; q < n_; ++q) {
      const bool xb = (axes.x >> q) & 1, zb = (axes.z >> q) & 1;
      out << (xb ? (zb ? 'Y' : 'X') : (zb ? 'Z' : 'I'));
    }
  }
  if (first) out << "0";
  return out.str();
}

PauliSum commutator(const PauliString& p, const PauliString& q) {
  PauliSum out(p.n());
  if (p.commutes_with(q)) return out;
  out.add(multiply(p, q), Complex(2.0, 0.0));
  return out;
}

PauliSum multiply(const PauliSum& a, const PauliSum& b) {
  check_same_n(a.n(), b.n(), "multiply(PauliSum)");
  PauliSum out(a.n());
  for (const auto& [ka, ca] : a.terms()) {
    const PauliString pa = PauliString::from_axes(a.n(), ka.x, ka.z);
    for (const auto& [kb, cb] : b.terms()) {
      const PauliString pb = PauliString::from_axes(b.n(), kb.x, kb.z);
      out.add(multiply(pa, pb), ca * cb);
    }
  }
  return out;
}

PauliSum commutator(const PauliSum& a, const PauliSum& b) {
  check_same_n(a.n(), b.n(), "commutator(PauliSum)");
  PauliSum out(a.n());
  for (const auto& [ka, ca] : a.terms()) {
    const PauliString pa = PauliString::from_axes(a.n(), ka.x, ka.z);
    for (const auto& [kb, cb] : b.terms()) {
      const PauliString pb = PauliString::from_axes(b.n(), kb.x, kb.z);
      if (pa.commutes_with(pb)) continue;
      out.add(multiply(pa, pb), 2.0 * ca * cb);
    }
  }
  return out;
}

Complex hs_inner(const PauliSum& a, const PauliSum& b) {
  check_same_n(a.n(), b.n(), "hs_inner");
  // Iterate over the smaller map; distinct basis strings are orthonormal.
  const PauliSum& small = a.size() <= b.size() ? a : b;
  const PauliSum& large = a.size() <= b.size() ? b : a;
  Complex s(0.0, 0.0);
  for (const auto& [axes, coeff] : small.terms()) {
    const Complex other = large.coefficient(axes);
    if (&small == &a) {
      s += std::conj(coeff) * other;
    } else {
      s += std::conj(other) * coeff;
    }
  }
  return s;
}

Complex trace_product(const PauliSum& a, const PauliSum& b) {
  check_same_n(a.n(), b.n(), "trace_product");
  const PauliSum& small = a.size() <= b.size() ? a : b;
  const PauliSum& large = a.size() <= b.size() ? b : a;
  Complex s(0.0, 0.0);
  for (const auto& [axes, coeff] : small.terms()) {
    s += coeff * large.coefficient(axes);
  }
  return s;
}

namespace {

void check_dense_limit(int n, int dense_limit) {
  if (n > dense_limit) {
    throw CapacityError("dense realization of " + std::to_string(n) +
                        " qubits exceeds the limit of " + std::to_string(dense_limit));
  }
}

// Adds  coeff * X^x Z^z  (raw form, no extra phase) into m.
void accumulate_dense(DenseMatrix& m, std::uint64_t x, std::uint64_t z,
                      Complex coeff) {
  const auto dim = static_cast<std::uint64_t>(m.rows());
  for (std::uint64_t b = 0; b < dim; ++b) {
    const double sign = (popcount(z & b) % 2) ? -1.0 : 1.0;
    m(static_cast<Eigen::Index>(b ^ x), static_cast<Eigen::Index>(b)) +=
        coeff * sign;
  }
}

}  // namespace

DenseMatrix to_dense(const PauliString& p, int dense_limit) {
  check_dense_limit(p.n(), dense_limit);
  const Eigen::Index dim = Eigen::Index(1) << p.n();
  DenseMatrix m = DenseMatrix::Zero(dim, dim);
  accumulate_dense(m, p.x_mask(), p.z_mask(), p.phase());
  return m;
}

DenseMatrix to_dense(const PauliSum& a, int dense_limit) {
  check_dense_limit(a.n(), dense_limit);
  const Eigen::Index dim = Eigen::Index(1) << a.n();
  DenseMatrix m = DenseMatrix::Zero(dim, dim);
  for (const auto& [axes, coeff] : a.terms()) {
    // coeff is relative to the Hermitian string i^{|x&z|} X^x Z^z.
    accumulate_dense(m, axes.x, axes.z, coeff * i_power(popcount(axes.x & axes.z)));
  }
  return m;
}

}  // namespace prodopt
