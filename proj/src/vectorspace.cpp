#include "sklab/vectorspace.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>

#include "sklab/error.hpp"
#include "sklab/philox.hpp"

namespace sklab {

namespace {

constexpr char kMagic[8] = {'S', 'K', 'D', 'I', 'S', 'O', 'R', 'D'};

void require_same_length(std::span<const double> x, std::span<const double> y,
                         const char* op) {
  if (x.size() != y.size()) {
    throw DomainError(std::string(op) + ": length mismatch (" + std::to_string(x.size()) +
                      " vs " + std::to_string(y.size()) + ")");
  }
  if (x.empty()) throw DomainError(std::string(op) + ": empty vector");
}

template <class T>
void write_le(std::ostream& out, T value) {
  static_assert(std::endian::native == std::endian::little,
                "disorder files are little endian; add byte swapping for this host");
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T read_le(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw DomainError("read_disorder: truncated file");
  return value;
}

}  // namespace

double inner(std::span<const double> x, std::span<const double> y) {
  require_same_length(x, y, "inner");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s / static_cast<double>(x.size());
}

double norm(std::span<const double> x) { return std::sqrt(inner(x, x)); }

Matrix outer(std::span<const double> a, std::span<const double> b) {
  require_same_length(a, b, "outer");
  const std::size_t n = a.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) out(i, j) = a[i] * b[j] * inv_n;
  }
  return out;
}

Matrix symmetrize(const Matrix& a) {
  if (!a.square()) throw DomainError("symmetrize: matrix is not square");
  const std::size_t n = a.rows();
  const double scale = 1.0 / std::numbers::sqrt2;
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) out(i, j) = (a(i, j) + a(j, i)) * scale;
  }
  return out;
}

Vec multiply(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) throw DomainError("multiply: dimension mismatch");
  Vec y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto r = a.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) s += r[j] * x[j];
    y[i] = s;
  }
  return y;
}

Vec multiply_transposed(const Matrix& a, std::span<const double> x) {
  if (a.rows() != x.size()) throw DomainError("multiply_transposed: dimension mismatch");
  Vec y(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto r = a.row(i);
    const double xi = x[i];
    for (std::size_t j = 0; j < r.size(); ++j) y[j] += r[j] * xi;
  }
  return y;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DomainError("max_abs_diff: shape mismatch");
  }
  double worst = 0.0;
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t e = 0; e < da.size(); ++e) worst = std::max(worst, std::fabs(da[e] - db[e]));
  return worst;
}

Disorder sample_disorder(std::size_t n, std::uint64_t seed) {
  if (n < 1) throw DomainError("sample_disorder: n must be >= 1");
  Disorder d;
  d.n = n;
  d.seed = seed;
  d.g = Matrix(n, n);
  const philox::Key key = {static_cast<std::uint32_t>(seed),
                           static_cast<std::uint32_t>(seed >> 32)};
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  const std::uint64_t total = static_cast<std::uint64_t>(n) * n;
  auto out = d.g.data();
  for (std::uint64_t c = 0; 2 * c < total; ++c) {
    const philox::Counter ctr = {static_cast<std::uint32_t>(c),
                                 static_cast<std::uint32_t>(c >> 32), 0u, 0u};
    const auto w = philox::philox4x32_10(ctr, key);
    const double u1 = philox::to_open_unit(w[0], w[1]);
    const double u2 = philox::to_open_unit(w[2], w[3]);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    out[2 * c] = r * std::cos(angle) * scale;
    if (2 * c + 1 < total) out[2 * c + 1] = r * std::sin(angle) * scale;
  }
  return d;
}

Disorder make_disorder(Matrix g, std::uint64_t seed) {
  if (!g.square() || g.rows() < 1) throw DomainError("make_disorder: need a non-empty square matrix");
  for (double v : g.data()) {
    if (!std::isfinite(v)) throw DomainError("make_disorder: non-finite entry");
  }
  Disorder d;
  d.n = g.rows();
  d.seed = seed;
  d.g = std::move(g);
  return d;
}

void write_disorder(std::ostream& out, const Disorder& d) {
  out.write(kMagic, sizeof(kMagic));
  write_le<std::uint64_t>(out, d.n);
  write_le<std::uint64_t>(out, d.seed);
  for (double v : d.g.data()) write_le<double>(out, v);
  if (!out) throw DomainError("write_disorder: stream error");
}

Disorder read_disorder(std::istream& in) {
  char magic[8] = {};
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DomainError("read_disorder: bad magic (not a disorder file)");
  }
  const auto n = read_le<std::uint64_t>(in);
  const auto seed = read_le<std::uint64_t>(in);
  if (n < 1 || n > (1u << 16)) throw DomainError("read_disorder: implausible N");
  Matrix g(n, n);
  for (double& v : g.data()) v = read_le<double>(in);
  return make_disorder(std::move(g), seed);
}

void save_disorder(const std::string& path, const Disorder& d) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DomainError("save_disorder: cannot open " + path);
  write_disorder(out, d);
}

Disorder load_disorder(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DomainError("load_disorder: cannot open " + path);
  return read_disorder(in);
}

}  // namespace sklab
