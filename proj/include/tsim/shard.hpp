// Copyright (c) 2026 the tesseract-sim developers.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "tsim/grid.hpp"
#include "tsim/matrix.hpp"

namespace tsim {

// Block assignment of a global matrix onto a [q, q, d] grid.
//
//   TesseractA  row-sharded operand: d*q*q distinct blocks of shape
//               [rows/(q*d), cols/q]; the block at (i, j, k) is global
//               block-row h = i + k*q, block-column j. Inputs and outputs
//               of the [q, q, d] products use this layout.
//   TesseractB  weight-style operand: q*q distinct blocks of shape
//               [rows/q, cols/q], block (i, j), replicated identically
//               across all depth layers k.
//   Summa2D     plain [q, q] tiling on a depth-1 grid.
//   Column1D /  1-D column/row split over the ranks of a [1, 1, p] line
//   Row1D       grid, indexed by k.
//   Replicated  every rank holds the full matrix.
enum class Scheme {
  TesseractA,
  TesseractB,
  Summa2D,
  Column1D,
  Row1D,
  Replicated,
};

const char* to_cstring(Scheme scheme);

class ShardedMatrix {
public:
  ShardedMatrix() = default;

  static ShardedMatrix from_blocks(const GridSpec& grid, Scheme scheme,
                                   std::size_t global_rows,
                                   std::size_t global_cols,
                                   std::vector<Matrix> blocks);

  const GridSpec& grid() const { return grid_; }
  Scheme scheme() const { return scheme_; }
  std::size_t global_rows() const { return rows_; }
  std::size_t global_cols() const { return cols_; }

  const Matrix& block(int rank) const { return blocks_.at(rank); }
  const Matrix& block(const RankCoord& c) const {
    return blocks_.at(grid_.rank_of(c));
  }
  Matrix& block(int rank) { return blocks_.at(rank); }

  std::vector<Matrix>& blocks() { return blocks_; }
  const std::vector<Matrix>& blocks() const { return blocks_; }

private:
  GridSpec grid_{1, 1};
  Scheme scheme_ = Scheme::Replicated;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Matrix> blocks_;  // indexed by linear rank
};

// Splits a matrix according to the scheme. Divisibility violations are
// reported with the offending dimension.
ShardedMatrix partition(const Matrix& m, Scheme scheme, const GridSpec& grid);

// Exact inverse of partition. For schemes that replicate blocks the
// replicas must agree bit for bit; divergence is an error.
Matrix combine(const ShardedMatrix& sharded);

}  // namespace tsim
