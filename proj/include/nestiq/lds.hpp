#pragma once

// Low-discrepancy point generation: Sobol digital sequences, nested uniform
// (Owen) scrambling, random shifts, rank-1 lattices and star discrepancy.

#include <array>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <span>
#include <vector>

#include "nestiq/keyed_rng.hpp"

namespace nestiq::lds {

inline constexpr int kBits = 32;
inline constexpr double kPointMin = 0x1p-64;
// 1 - 2^-64 is not representable in double; the largest double below one is used.
inline constexpr double kPointMax = 1.0 - 0x1p-53;

struct PrimitivePolynomial {
  unsigned degree = 0;        // s
  std::uint32_t coeffs = 0;   // a, interior coefficients packed as in Joe-Kuo files
};

/// Direction numbers v_{j,k}, k = 1..32, per dimension j (bit-reversed fractions).
struct SobolParams {
  std::size_t dimension = 0;
  std::vector<std::array<std::uint32_t, kBits>> directions;
  std::vector<PrimitivePolynomial> polynomials;
};

/// Loads "d s a m_1 ... m_s" records (new-joe-kuo-6 layout; a header line is
/// tolerated). Dimension 1 is implicit (van der Corput) and must not appear.
/// Records must be contiguous from dimension 2.
SobolParams load_direction_numbers(std::istream& source);

/// Built-in table, dimensions 1..64.
SobolParams builtin_direction_numbers(std::size_t dimension = 64);

/// Points stored row-major as 32-bit integers; coordinate = value / 2^32.
class DigitalSequence {
 public:
  DigitalSequence(std::size_t count, std::size_t dimension, std::vector<std::uint32_t> values);

  std::size_t count() const noexcept { return count_; }
  std::size_t dimension() const noexcept { return dimension_; }
  std::span<const std::uint32_t> row(std::size_t i) const {
    return {values_.data() + i * dimension_, dimension_};
  }
  std::uint32_t at(std::size_t i, std::size_t j) const { return values_[i * dimension_ + j]; }
  std::span<const std::uint32_t> values() const noexcept { return values_; }

 private:
  std::size_t count_;
  std::size_t dimension_;
  std::vector<std::uint32_t> values_;
};

/// Points in the open unit cube, row-major.
class PointSet {
 public:
  PointSet() = default;
  PointSet(std::size_t count, std::size_t dimension, std::vector<double> values);

  std::size_t count() const noexcept { return count_; }
  std::size_t dimension() const noexcept { return dimension_; }
  std::span<const double> row(std::size_t i) const {
    return {values_.data() + i * dimension_, dimension_};
  }
  double at(std::size_t i, std::size_t j) const { return values_[i * dimension_ + j]; }
  std::span<const double> values() const noexcept { return values_; }

  /// Column j as a vector (copy).
  std::vector<double> column(std::size_t j) const;

 private:
  std::size_t count_ = 0;
  std::size_t dimension_ = 0;
  std::vector<double> values_;
};

/// Clamps a coordinate into [kPointMin, kPointMax].
double clamp_unit(double u);

/// First 2^log2_count Sobol points in Gray-code order.
DigitalSequence sobol_sequence(const SobolParams& params, std::size_t dimension, unsigned log2_count);

/// Nested uniform scrambling of all 32 digits, with the 32 trailing digits
/// filled by independent bits. One key randomizes the whole sequence.
PointSet owen_scramble(const DigitalSequence& seq, const RandomizationKey& key);

/// Single scrambled coordinate; exposed for streaming use by the estimators.
double owen_scramble_coordinate(std::uint32_t value, std::uint64_t dimension_key);

/// Per-dimension tree keys used by owen_scramble for `key`.
std::vector<std::uint64_t> owen_dimension_keys(const RandomizationKey& key, std::size_t dimension);

/// Unrandomized points as doubles (value / 2^32, clamped).
PointSet to_point_set(const DigitalSequence& seq);

/// Shift modulo one by a vector drawn from `key`.
PointSet random_shift(const PointSet& points, const RandomizationKey& key);

/// Shift modulo one by an explicit vector.
PointSet shift_points(const PointSet& points, std::span<const double> shift);

/// The shift vector random_shift would draw for `key`.
std::vector<double> shift_vector(const RandomizationKey& key, std::size_t dimension);

/// Rank-1 lattice t_m = frac((m-1) w / M), m = 1..M.
PointSet lattice_points(std::span<const double> generating_vector, std::size_t count);

/// Exact D* of a one-dimensional point set.
double star_discrepancy_1d(const PointSet& points);

/// Exact D* by enumeration of all critical anchored boxes; d <= 3, M <= 64.
double star_discrepancy_brute(const PointSet& points);

}  // namespace nestiq::lds
