// Copyright (c) 2026 the tesseract-sim developers.
// SPDX-License-Identifier: Apache-2.0

#include "tsim/shard.hpp"

#include <string>

#include "tsim/error.hpp"

namespace tsim {

namespace {

void require_divisible(std::size_t value, std::size_t divisor,
                       const char* dim, Scheme scheme) {
  if (divisor == 0 || value % divisor != 0) {
    throw DivisibilityError(std::string(to_cstring(scheme)) + ": " + dim +
                            " (" + std::to_string(value) +
                            ") not divisible by " + std::to_string(divisor));
  }
}

void require_depth_one(const GridSpec& grid, Scheme scheme) {
  if (grid.d() != 1) {
    throw GridError(std::string(to_cstring(scheme)) +
                    " requires a depth-1 grid, got " + grid.to_string());
  }
}

void require_line_grid(const GridSpec& grid, Scheme scheme) {
  if (grid.q() != 1) {
    throw GridError(std::string(to_cstring(scheme)) +
                    " requires a [1,1,p] line grid, got " + grid.to_string());
  }
}

}  // namespace

const char* to_cstring(Scheme scheme) {
  switch (scheme) {
    case Scheme::TesseractA: return "tesseract-a";
    case Scheme::TesseractB: return "tesseract-b";
    case Scheme::Summa2D: return "summa-2d";
    case Scheme::Column1D: return "column-1d";
    case Scheme::Row1D: return "row-1d";
    case Scheme::Replicated: return "replicated";
  }
  return "?";
}

ShardedMatrix ShardedMatrix::from_blocks(const GridSpec& grid, Scheme scheme,
                                         std::size_t global_rows,
                                         std::size_t global_cols,
                                         std::vector<Matrix> blocks) {
  if (blocks.size() != static_cast<std::size_t>(grid.size())) {
    throw ShapeError("from_blocks: got " + std::to_string(blocks.size()) +
                     " blocks for grid " + grid.to_string());
  }
  ShardedMatrix s;
  s.grid_ = grid;
  s.scheme_ = scheme;
  s.rows_ = global_rows;
  s.cols_ = global_cols;
  s.blocks_ = std::move(blocks);
  return s;
}

ShardedMatrix partition(const Matrix& m, Scheme scheme, const GridSpec& grid) {
  const int q = grid.q();
  const int d = grid.d();
  const int p = grid.size();
  std::vector<Matrix> blocks(p);

  switch (scheme) {
    case Scheme::TesseractA: {
      require_divisible(m.rows(), std::size_t(q) * d, "rows", scheme);
      require_divisible(m.cols(), q, "cols", scheme);
      const std::size_t rb = m.rows() / (std::size_t(q) * d);
      const std::size_t cb = m.cols() / q;
      for (int r = 0; r < p; ++r) {
        const RankCoord c = grid.coord_of(r);
        const std::size_t h = grid.block_row(c);
        blocks[r] = submatrix(m, h * rb, rb, std::size_t(c.j) * cb, cb);
      }
      break;
    }
    case Scheme::TesseractB: {
      require_divisible(m.rows(), q, "rows", scheme);
      require_divisible(m.cols(), q, "cols", scheme);
      const std::size_t rb = m.rows() / q;
      const std::size_t cb = m.cols() / q;
      for (int r = 0; r < p; ++r) {
        const RankCoord c = grid.coord_of(r);
        blocks[r] =
            submatrix(m, std::size_t(c.i) * rb, rb, std::size_t(c.j) * cb, cb);
      }
      break;
    }
    case Scheme::Summa2D: {
      require_depth_one(grid, scheme);
      require_divisible(m.rows(), q, "rows", scheme);
      require_divisible(m.cols(), q, "cols", scheme);
      const std::size_t rb = m.rows() / q;
      const std::size_t cb = m.cols() / q;
      for (int r = 0; r < p; ++r) {
        const RankCoord c = grid.coord_of(r);
        blocks[r] =
            submatrix(m, std::size_t(c.i) * rb, rb, std::size_t(c.j) * cb, cb);
      }
      break;
    }
    case Scheme::Column1D: {
      require_line_grid(grid, scheme);
      require_divisible(m.cols(), p, "cols", scheme);
      const std::size_t cb = m.cols() / p;
      for (int r = 0; r < p; ++r) {
        blocks[r] = submatrix(m, 0, m.rows(), std::size_t(r) * cb, cb);
      }
      break;
    }
    case Scheme::Row1D: {
      require_line_grid(grid, scheme);
      require_divisible(m.rows(), p, "rows", scheme);
      const std::size_t rb = m.rows() / p;
      for (int r = 0; r < p; ++r) {
        blocks[r] = submatrix(m, std::size_t(r) * rb, rb, 0, m.cols());
      }
      break;
    }
    case Scheme::Replicated: {
      for (int r = 0; r < p; ++r) blocks[r] = m;
      break;
    }
  }
  return ShardedMatrix::from_blocks(grid, scheme, m.rows(), m.cols(),
                                    std::move(blocks));
}

Matrix combine(const ShardedMatrix& s) {
  const GridSpec& grid = s.grid();
  const int q = grid.q();
  const int d = grid.d();
  const int p = grid.size();
  for (int r = 0; r < p; ++r) {
    if (s.block(r).empty() && s.global_rows() != 0 && s.global_cols() != 0) {
      throw ShapeError("combine: missing block at rank " +
                       to_string(grid.coord_of(r)));
    }
  }
  Matrix out(s.global_rows(), s.global_cols());

  auto check_replica = [&](int rank, const Matrix& expected) {
    if (!(s.block(rank) == expected)) {
      throw ShapeError("combine: replica divergence at rank " +
                       to_string(grid.coord_of(rank)));
    }
  };

  switch (s.scheme()) {
    case Scheme::TesseractA: {
      const std::size_t rb = s.global_rows() / (std::size_t(q) * d);
      const std::size_t cb = s.global_cols() / q;
      for (int r = 0; r < p; ++r) {
        const RankCoord c = grid.coord_of(r);
        const std::size_t h = grid.block_row(c);
        insert_block(out, h * rb, std::size_t(c.j) * cb, s.block(r));
      }
      break;
    }
    case Scheme::TesseractB: {
      const std::size_t rb = s.global_rows() / q;
      const std::size_t cb = s.global_cols() / q;
      for (int r = 0; r < p; ++r) {
        const RankCoord c = grid.coord_of(r);
        if (c.k == 0) {
          insert_block(out, std::size_t(c.i) * rb, std::size_t(c.j) * cb,
                       s.block(r));
        } else {
          check_replica(r, s.block(grid.rank_of({c.i, c.j, 0})));
        }
      }
      break;
    }
    case Scheme::Summa2D: {
      const std::size_t rb = s.global_rows() / q;
      const std::size_t cb = s.global_cols() / q;
      for (int r = 0; r < p; ++r) {
        const RankCoord c = grid.coord_of(r);
        insert_block(out, std::size_t(c.i) * rb, std::size_t(c.j) * cb,
                     s.block(r));
      }
      break;
    }
    case Scheme::Column1D: {
      const std::size_t cb = s.global_cols() / p;
      for (int r = 0; r < p; ++r) {
        insert_block(out, 0, std::size_t(r) * cb, s.block(r));
      }
      break;
    }
    case Scheme::Row1D: {
      const std::size_t rb = s.global_rows() / p;
      for (int r = 0; r < p; ++r) {
        insert_block(out, std::size_t(r) * rb, 0, s.block(r));
      }
      break;
    }
    case Scheme::Replicated: {
      out = s.block(0);
      for (int r = 1; r < p; ++r) check_replica(r, out);
      break;
    }
  }
  return out;
}

}  // namespace tsim
