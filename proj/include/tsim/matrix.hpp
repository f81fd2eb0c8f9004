// Copyright (c) 2026 the tesseract-sim developers.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "tsim/rng.hpp"

namespace tsim {

// Dense row-major matrix of doubles. Treated as immutable once filled:
// operations return new matrices instead of mutating their inputs.
class Matrix {
public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols);  // zero-filled

  // Validates that every value is finite.
  static Matrix from_values(std::size_t rows, std::size_t cols,
                            std::vector<double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }
  double& operator()(std::size_t r, std::size_t c) {
    return data_[r * cols_ + c];
  }

  std::span<const double> values() const { return data_; }
  std::span<double> values() { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix identity(std::size_t n);
Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng);

Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double factor);
Matrix transpose(const Matrix& a);
Matrix hadamard(const Matrix& a, const Matrix& b);

double max_abs(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);

// max_abs_diff(value, reference) / max(max_abs(reference), floor); the
// yardstick used by every oracle-equivalence check.
double rel_diff(const Matrix& value, const Matrix& reference,
                double floor = 1e-30);

// Production kernel. OpenMP-parallel over output rows above a flop
// threshold; per output element the accumulation order is the same as
// matmul_serial, so the two kernels agree bit for bit.
Matrix matmul(const Matrix& a, const Matrix& b);

// Plain triple-loop reference kernel, kept as the comparison baseline for
// the parallel kernel and for every distributed algorithm.
Matrix matmul_serial(const Matrix& a, const Matrix& b);

// C = A * B^T and C = A^T * B without materializing the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);

Matrix submatrix(const Matrix& a, std::size_t row0, std::size_t row_count,
                 std::size_t col0, std::size_t col_count);
void insert_block(Matrix& dst, std::size_t row0, std::size_t col0,
                  const Matrix& block);

// Matrix I/O. CSV uses shortest round-trip formatting; the binary format is
// a "TMX1" magic, uint64 little-endian rows/cols, then little-endian
// doubles. Both round-trip exactly.
void write_csv(const Matrix& m, std::ostream& os);
Matrix read_csv(std::istream& is);
void write_binary(const Matrix& m, std::ostream& os);
Matrix read_binary(std::istream& is);

// Picks CSV for ".csv", binary otherwise.
void save_matrix(const Matrix& m, const std::string& path);
Matrix load_matrix(const std::string& path);

// FNV-1a over the little-endian byte image, for result fingerprints.
std::string checksum(const Matrix& m);

}  // namespace tsim
