#include "nestiq/lds.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>
#include <string>

#include "nestiq/errors.hpp"

namespace nestiq::lds {

namespace {

constexpr std::uint64_t kScrambleLane = 0x4f57454eULL;
constexpr std::uint64_t kShiftLane = 0x53484946ULL;

const char* const kBuiltinTable =
#include "sobol_table.inc"
    ;

std::array<std::uint32_t, kBits> van_der_corput_directions() {
  std::array<std::uint32_t, kBits> v{};
  for (int k = 1; k <= kBits; ++k) v[k - 1] = 1u << (kBits - k);
  return v;
}

std::array<std::uint32_t, kBits> expand(const PrimitivePolynomial& poly,
                                        const std::vector<std::uint32_t>& m) {
  const unsigned s = poly.degree;
  std::array<std::uint32_t, kBits> v{};
  for (unsigned i = 1; i <= std::min<unsigned>(s, kBits); ++i) v[i - 1] = m[i - 1] << (kBits - i);
  for (unsigned i = s + 1; i <= kBits; ++i) {
    std::uint32_t x = v[i - s - 1] ^ (v[i - s - 1] >> s);
    for (unsigned k = 1; k + 1 <= s; ++k) {
      if ((poly.coeffs >> (s - 1 - k)) & 1u) x ^= v[i - k - 1];
    }
    v[i - 1] = x;
  }
  return v;
}

bool starts_numeric(const std::string& line) {
  for (char c : line) {
    if (c == ' ' || c == '\t' || c == '\r') continue;
    return c >= '0' && c <= '9';
  }
  return false;
}

}  // namespace

SobolParams load_direction_numbers(std::istream& source) {
  SobolParams params;
  params.dimension = 1;
  params.directions.push_back(van_der_corput_directions());
  params.polynomials.push_back({0, 0});

  std::string line;
  std::size_t line_no = 0;
  bool seen_content = false;
  while (std::getline(source, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (!starts_numeric(line)) {
      if (seen_content) throw ParseError("unexpected non-numeric record", line_no);
      seen_content = true;  // header
      continue;
    }
    seen_content = true;

    std::istringstream in(line);
    long long d = 0, s = 0, a = 0;
    if (!(in >> d >> s >> a)) throw ParseError("expected 'd s a m_1 ... m_s'", line_no);
    if (d != static_cast<long long>(params.dimension) + 1) {
      throw ParseError("dimension gap: expected " + std::to_string(params.dimension + 1) +
                           ", found " + std::to_string(d),
                       line_no);
    }
    if (s < 1 || s > kBits) throw ParseError("polynomial degree out of range", line_no);
    if (a < 0 || a >= (1LL << (s - 1))) throw ParseError("polynomial coefficients out of range", line_no);

    std::vector<std::uint32_t> m;
    for (long long i = 1; i <= s; ++i) {
      long long mi = 0;
      if (!(in >> mi)) throw ParseError("missing initial direction number m_" + std::to_string(i), line_no);
      if (mi <= 0 || (mi & 1) == 0) throw ParseError("initial direction numbers must be odd", line_no);
      if (mi >= (1LL << i)) throw ParseError("m_" + std::to_string(i) + " must be below 2^" + std::to_string(i), line_no);
      m.push_back(static_cast<std::uint32_t>(mi));
    }
    std::string extra;
    if (in >> extra) throw ParseError("trailing tokens in record", line_no);

    const PrimitivePolynomial poly{static_cast<unsigned>(s), static_cast<std::uint32_t>(a)};
    params.polynomials.push_back(poly);
    params.directions.push_back(expand(poly, m));
    ++params.dimension;
  }
  return params;
}

SobolParams builtin_direction_numbers(std::size_t dimension) {
  if (dimension < 1 || dimension > 64) throw DomainError("built-in Sobol table covers dimensions 1..64");
  std::istringstream in(kBuiltinTable);
  SobolParams all = load_direction_numbers(in);
  all.directions.resize(dimension);
  all.polynomials.resize(dimension);
  all.dimension = dimension;
  return all;
}

DigitalSequence::DigitalSequence(std::size_t count, std::size_t dimension,
                                 std::vector<std::uint32_t> values)
    : count_(count), dimension_(dimension), values_(std::move(values)) {
  if (!std::has_single_bit(count)) throw DomainError("digital sequence size must be a power of two");
  if (dimension == 0) throw DomainError("digital sequence dimension must be positive");
  if (values_.size() != count * dimension) throw DomainError("digital sequence storage size mismatch");
}

PointSet::PointSet(std::size_t count, std::size_t dimension, std::vector<double> values)
    : count_(count), dimension_(dimension), values_(std::move(values)) {
  if (values_.size() != count * dimension) throw DomainError("point set storage size mismatch");
}

std::vector<double> PointSet::column(std::size_t j) const {
  std::vector<double> c(count_);
  for (std::size_t i = 0; i < count_; ++i) c[i] = at(i, j);
  return c;
}

double clamp_unit(double u) { return std::clamp(u, kPointMin, kPointMax); }

DigitalSequence sobol_sequence(const SobolParams& params, std::size_t dimension, unsigned log2_count) {
  if (dimension < 1 || dimension > params.dimension) throw DomainError("Sobol dimension out of range");
  if (log2_count > 31) throw DomainError("Sobol log2 count must be at most 31");

  const std::size_t count = std::size_t{1} << log2_count;
  std::vector<std::uint32_t> values(count * dimension);
  std::vector<std::uint32_t> x(dimension, 0);
  for (std::size_t i = 1; i < count; ++i) {
    const int c = std::countr_zero(i);
    for (std::size_t j = 0; j < dimension; ++j) {
      x[j] ^= params.directions[j][c];
      values[i * dimension + j] = x[j];
    }
  }
  return DigitalSequence(count, dimension, std::move(values));
}

std::vector<std::uint64_t> owen_dimension_keys(const RandomizationKey& key, std::size_t dimension) {
  const KeyedStream stream(key);
  std::vector<std::uint64_t> keys(dimension);
  for (std::size_t j = 0; j < dimension; ++j) keys[j] = stream.bits(j, kScrambleLane);
  return keys;
}

// The flip applied to digit k+1 depends on the node reached by the first k
// original digits; node ids (1 << k) | prefix are unique across depths.
// Depth-32 nodes (one per distinct point) supply the trailing 32 bits.
double owen_scramble_coordinate(std::uint32_t value, std::uint64_t dimension_key) {
  std::uint32_t flips = 0;
  for (int k = 0; k < kBits; ++k) {
    const std::uint64_t prefix = k == 0 ? 0 : (value >> (kBits - k));
    const std::uint64_t node = (std::uint64_t{1} << k) | prefix;
    const std::uint64_t h = mix64(dimension_key ^ mix64(node));
    flips |= static_cast<std::uint32_t>(h >> 63) << (kBits - 1 - k);
  }
  const std::uint64_t leaf = (std::uint64_t{1} << kBits) | value;
  const std::uint64_t tail = mix64(dimension_key ^ mix64(leaf)) >> 32;
  const std::uint64_t full = (static_cast<std::uint64_t>(value ^ flips) << 32) | tail;
  return clamp_unit(static_cast<double>(full) * 0x1p-64);
}

PointSet owen_scramble(const DigitalSequence& seq, const RandomizationKey& key) {
  const auto keys = owen_dimension_keys(key, seq.dimension());
  std::vector<double> out(seq.count() * seq.dimension());
  for (std::size_t i = 0; i < seq.count(); ++i) {
    for (std::size_t j = 0; j < seq.dimension(); ++j) {
      out[i * seq.dimension() + j] = owen_scramble_coordinate(seq.at(i, j), keys[j]);
    }
  }
  return PointSet(seq.count(), seq.dimension(), std::move(out));
}

PointSet to_point_set(const DigitalSequence& seq) {
  std::vector<double> out(seq.values().size());
  std::transform(seq.values().begin(), seq.values().end(), out.begin(),
                 [](std::uint32_t v) { return clamp_unit(static_cast<double>(v) * 0x1p-32); });
  return PointSet(seq.count(), seq.dimension(), std::move(out));
}

std::vector<double> shift_vector(const RandomizationKey& key, std::size_t dimension) {
  const KeyedStream stream(key);
  std::vector<double> v(dimension);
  for (std::size_t j = 0; j < dimension; ++j) v[j] = stream.uniform(j, kShiftLane);
  return v;
}

PointSet shift_points(const PointSet& points, std::span<const double> shift) {
  if (shift.size() != points.dimension()) throw DomainError("shift vector dimension mismatch");
  std::vector<double> out(points.values().begin(), points.values().end());
  for (std::size_t i = 0; i < points.count(); ++i) {
    for (std::size_t j = 0; j < points.dimension(); ++j) {
      double& t = out[i * points.dimension() + j];
      t += shift[j];
      if (t >= 1.0) t -= 1.0;
      t = clamp_unit(t);
    }
  }
  return PointSet(points.count(), points.dimension(), std::move(out));
}

PointSet random_shift(const PointSet& points, const RandomizationKey& key) {
  return shift_points(points, shift_vector(key, points.dimension()));
}

PointSet lattice_points(std::span<const double> generating_vector, std::size_t count) {
  if (generating_vector.empty()) throw DomainError("empty generating vector");
  if (count < 1) throw DomainError("lattice size must be positive");
  const std::size_t d = generating_vector.size();
  std::vector<double> out(count * d);
  for (std::size_t m = 0; m < count; ++m) {
    for (std::size_t j = 0; j < d; ++j) {
      const double x = static_cast<double>(m) * generating_vector[j] / static_cast<double>(count);
      out[m * d + j] = clamp_unit(x - std::floor(x));
    }
  }
  return PointSet(count, d, std::move(out));
}

double star_discrepancy_1d(const PointSet& points) {
  if (points.dimension() != 1) throw DomainError("star_discrepancy_1d needs one-dimensional points");
  if (points.count() == 0) throw DomainError("star discrepancy of an empty point set");
  std::vector<double> t = points.column(0);
  std::sort(t.begin(), t.end());
  const double m = static_cast<double>(t.size());
  double d = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double hi = static_cast<double>(i + 1) / m - t[i];
    const double lo = t[i] - static_cast<double>(i) / m;
    d = std::max({d, hi, lo});
  }
  return d;
}

double star_discrepancy_brute(const PointSet& points) {
  const std::size_t d = points.dimension();
  const std::size_t n = points.count();
  if (d < 1 || d > 3 || n > 64) throw DomainError("brute-force discrepancy limited to d <= 3, M <= 64");
  if (n == 0) throw DomainError("star discrepancy of an empty point set");

  std::vector<std::vector<double>> grid(d);
  for (std::size_t j = 0; j < d; ++j) {
    grid[j] = points.column(j);
    grid[j].push_back(1.0);
    std::sort(grid[j].begin(), grid[j].end());
    grid[j].erase(std::unique(grid[j].begin(), grid[j].end()), grid[j].end());
  }

  std::array<std::size_t, 3> idx{0, 0, 0};
  std::array<std::size_t, 3> size{1, 1, 1};
  for (std::size_t j = 0; j < d; ++j) size[j] = grid[j].size();

  double best = 0.0;
  for (idx[0] = 0; idx[0] < size[0]; ++idx[0]) {
    for (idx[1] = 0; idx[1] < size[1]; ++idx[1]) {
      for (idx[2] = 0; idx[2] < size[2]; ++idx[2]) {
        double vol = 1.0;
        for (std::size_t j = 0; j < d; ++j) vol *= grid[j][idx[j]];
        std::size_t open = 0, closed = 0;
        for (std::size_t i = 0; i < n; ++i) {
          bool in_open = true, in_closed = true;
          for (std::size_t j = 0; j < d; ++j) {
            const double x = points.at(i, j);
            const double b = grid[j][idx[j]];
            in_open = in_open && x < b;
            in_closed = in_closed && x <= b;
          }
          open += in_open;
          closed += in_closed;
        }
        best = std::max({best, vol - static_cast<double>(open) / n, static_cast<double>(closed) / n - vol});
      }
    }
  }
  return best;
}

}  // namespace nestiq::lds
