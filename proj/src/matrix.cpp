// Copyright (c) 2026 the tesseract-sim developers.
// SPDX-License-Identifier: Apache-2.0

#include "tsim/matrix.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "tsim/error.hpp"

namespace tsim {

namespace {

// Below this many flops a matmul is not worth a parallel region; the local
// blocks living on virtual ranks stay serial while full-size oracle and
// benchmark products go wide.
constexpr std::size_t kParallelFlopThreshold = std::size_t{1} << 18;

void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch, " +
                     std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

Matrix Matrix::from_values(std::size_t rows, std::size_t cols,
                           std::vector<double> values) {
  if (values.size() != rows * cols) {
    throw ShapeError("from_values: got " + std::to_string(values.size()) +
                     " values for a " + std::to_string(rows) + "x" +
                     std::to_string(cols) + " matrix");
  }
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw ShapeError("from_values: non-finite value");
    }
  }
  Matrix m;
  m.rows_ = rows;
  m.cols_ = cols;
  m.data_ = std::move(values);
  return m;
}

Matrix identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.uniform_signed();
  return m;
}

Matrix add(const Matrix& a, const Matrix& b) {
  check_same_shape(a, b, "add");
  Matrix c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) {
    c.values()[i] = a.values()[i] + b.values()[i];
  }
  return c;
}

Matrix sub(const Matrix& a, const Matrix& b) {
  check_same_shape(a, b, "sub");
  Matrix c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) {
    c.values()[i] = a.values()[i] - b.values()[i];
  }
  return c;
}

Matrix scale(const Matrix& a, double factor) {
  Matrix c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) {
    c.values()[i] = a.values()[i] * factor;
  }
  return c;
}

Matrix transpose(const Matrix& a) {
  Matrix c(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t col = 0; col < a.cols(); ++col) {
      c(col, r) = a(r, col);
    }
  }
  return c;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  check_same_shape(a, b, "hadamard");
  Matrix c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) {
    c.values()[i] = a.values()[i] * b.values()[i];
  }
  return c;
}

double max_abs(const Matrix& a) {
  double m = 0.0;
  for (double v : a.values()) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  check_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  }
  return m;
}

double rel_diff(const Matrix& value, const Matrix& reference, double floor) {
  return max_abs_diff(value, reference) / std::max(max_abs(reference), floor);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: A.cols (" + std::to_string(a.cols()) +
                     ") != B.rows (" + std::to_string(b.rows()) + ")");
  }
  const std::int64_t m = static_cast<std::int64_t>(a.rows());
  const std::int64_t k = static_cast<std::int64_t>(a.cols());
  const std::int64_t n = static_cast<std::int64_t>(b.cols());
  Matrix c(a.rows(), b.cols());
  const double* ap = a.values().data();
  const double* bp = b.values().data();
  double* cp = c.values().data();
  const bool parallel =
      a.size() * b.cols() >= kParallelFlopThreshold && m > 1;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::int64_t i = 0; i < m; ++i) {
    double* crow = cp + i * n;
    for (std::int64_t t = 0; t < k; ++t) {
      const double av = ap[i * k + t];
      const double* brow = bp + t * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

Matrix matmul_serial(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul_serial: A.cols (" + std::to_string(a.cols()) +
                     ") != B.rows (" + std::to_string(b.rows()) + ")");
  }
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t t = 0; t < a.cols(); ++t) {
      const double av = a(i, t);
      for (std::size_t j = 0; j < b.cols(); ++j) {
        c(i, j) += av * b(t, j);
      }
    }
  }
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: A.cols (" + std::to_string(a.cols()) +
                     ") != B.cols (" + std::to_string(b.cols()) + ")");
  }
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < a.cols(); ++t) acc += a(i, t) * b(j, t);
      c(i, j) = acc;
    }
  }
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: A.rows (" + std::to_string(a.rows()) +
                     ") != B.rows (" + std::to_string(b.rows()) + ")");
  }
  Matrix c(a.cols(), b.cols());
  for (std::size_t t = 0; t < a.rows(); ++t) {
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double av = a(t, i);
      for (std::size_t j = 0; j < b.cols(); ++j) {
        c(i, j) += av * b(t, j);
      }
    }
  }
  return c;
}

Matrix submatrix(const Matrix& a, std::size_t row0, std::size_t row_count,
                 std::size_t col0, std::size_t col_count) {
  if (row0 + row_count > a.rows() || col0 + col_count > a.cols()) {
    throw ShapeError("submatrix: slice out of range");
  }
  Matrix c(row_count, col_count);
  for (std::size_t r = 0; r < row_count; ++r) {
    for (std::size_t col = 0; col < col_count; ++col) {
      c(r, col) = a(row0 + r, col0 + col);
    }
  }
  return c;
}

void insert_block(Matrix& dst, std::size_t row0, std::size_t col0,
                  const Matrix& block) {
  if (row0 + block.rows() > dst.rows() || col0 + block.cols() > dst.cols()) {
    throw ShapeError("insert_block: block out of range");
  }
  for (std::size_t r = 0; r < block.rows(); ++r) {
    for (std::size_t c = 0; c < block.cols(); ++c) {
      dst(row0 + r, col0 + c) = block(r, c);
    }
  }
}

void write_csv(const Matrix& m, std::ostream& os) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (c) os << ',';
      os << format_double(m(r, c));
    }
    os << '\n';
  }
}

Matrix read_csv(std::istream& is) {
  std::vector<double> values;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::size_t line_cols = 0;
    const char* p = line.data();
    const char* end = p + line.size();
    while (p < end) {
      double v = 0.0;
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc()) {
        throw IoError("read_csv: bad number in row " + std::to_string(rows));
      }
      values.push_back(v);
      ++line_cols;
      p = next;
      if (p < end) {
        if (*p != ',') throw IoError("read_csv: expected ','");
        ++p;
      }
    }
    if (rows == 0) {
      cols = line_cols;
    } else if (line_cols != cols) {
      throw IoError("read_csv: ragged row " + std::to_string(rows));
    }
    ++rows;
  }
  return Matrix::from_values(rows, cols, std::move(values));
}

namespace {

void put_u64_le(std::ostream& os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t get_u64_le(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  if (!is) throw IoError("read_binary: truncated header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void write_binary(const Matrix& m, std::ostream& os) {
  os.write("TMX1", 4);
  put_u64_le(os, m.rows());
  put_u64_le(os, m.cols());
  for (double v : m.values()) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64_le(os, bits);
  }
}

Matrix read_binary(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "TMX1", 4) != 0) {
    throw IoError("read_binary: bad magic");
  }
  const std::uint64_t rows = get_u64_le(is);
  const std::uint64_t cols = get_u64_le(is);
  std::vector<double> values(rows * cols);
  for (auto& v : values) {
    std::uint64_t bits = get_u64_le(is);
    std::memcpy(&v, &bits, 8);
  }
  return Matrix::from_values(rows, cols, std::move(values));
}

void save_matrix(const Matrix& m, const std::string& path) {
  const bool csv = path.size() >= 4 && path.substr(path.size() - 4) == ".csv";
  std::ofstream os(path, csv ? std::ios::out : std::ios::out | std::ios::binary);
  if (!os) throw IoError("save_matrix: cannot open " + path);
  if (csv) {
    write_csv(m, os);
  } else {
    write_binary(m, os);
  }
}

Matrix load_matrix(const std::string& path) {
  const bool csv = path.size() >= 4 && path.substr(path.size() - 4) == ".csv";
  std::ifstream is(path, csv ? std::ios::in : std::ios::in | std::ios::binary);
  if (!is) throw IoError("load_matrix: cannot open " + path);
  return csv ? read_csv(is) : read_binary(is);
}

std::string checksum(const Matrix& m) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  };
  feed(m.rows());
  feed(m.cols());
  for (double v : m.values()) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    feed(bits);
  }
  std::ostringstream os;
  os << "fnv1a:" << std::hex << h;
  return os.str();
}

}  // namespace tsim
