#pragma once

// Linear algebra with the normalized inner product <x, y> = (1/N) sum x_i y_i,
// the matching outer product (a (x) b)_ij = a_i b_j / N, and sampling of the
// Gaussian interaction matrix.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace sklab {

using Vec = std::vector<double>;

// Dense row-major matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool square() const { return rows_ == cols_; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * cols_, cols_};
  }
  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

double inner(std::span<const double> x, std::span<const double> y);
double norm(std::span<const double> x);

Matrix outer(std::span<const double> a, std::span<const double> b);
Matrix symmetrize(const Matrix& a);

// y = A x and y = A^T x (plain matrix-vector products, no 1/N).
Vec multiply(const Matrix& a, std::span<const double> x);
Vec multiply_transposed(const Matrix& a, std::span<const double> x);

// max_ij |A_ij - B_ij|.
double max_abs_diff(const Matrix& a, const Matrix& b);

// One quenched sample: g_ij i.i.d. N(0, 1/N), diagonal included.
//
// Generator contract: Philox4x32-10 with key = (seed & 0xffffffff, seed >> 32).
// Entries are laid out row-major, e = i*N + j. Block c = e / 2 uses counter
// (c & 0xffffffff, c >> 32, 0, 0); its output words (w0, w1, w2, w3) give
// u1 = ((w0:w1 >> 12) + 1/2) 2^-52 and u2 likewise from (w2:w3), and the
// Box-Muller pair r cos(2 pi u2), r sin(2 pi u2) with r = sqrt(-2 ln u1)
// fills entries 2c and 2c + 1. Every value is scaled by 1/sqrt(N).
struct Disorder {
  std::size_t n = 0;
  std::uint64_t seed = 0;
  Matrix g;
};

Disorder sample_disorder(std::size_t n, std::uint64_t seed);

// Disorder built from an explicit matrix (tests, replayed files).
Disorder make_disorder(Matrix g, std::uint64_t seed = 0);

// Binary replay format, little endian: 8-byte magic "SKDISORD", uint64 N,
// uint64 seed, then N*N IEEE-754 doubles row-major.
void write_disorder(std::ostream& out, const Disorder& d);
Disorder read_disorder(std::istream& in);
void save_disorder(const std::string& path, const Disorder& d);
Disorder load_disorder(const std::string& path);

}  // namespace sklab
