// Copyright (c) 2026 the tesseract-sim developers.
// SPDX-License-Identifier: Apache-2.0

#include "tsim/algorithms.hpp"

#include <string>
#include <utility>

#include "tsim/error.hpp"

namespace tsim {

const char* to_cstring(MatmulVariant v) {
  switch (v) {
    case MatmulVariant::NN: return "nn";
    case MatmulVariant::NT: return "nt";
    case MatmulVariant::TN: return "tn";
  }
  return "?";
}

namespace {

void check_inner(const Matrix& a, const Matrix& b, const char* who) {
  if (a.cols() != b.rows()) {
    throw ShapeError(std::string(who) + ": A.cols (" +
                     std::to_string(a.cols()) + ") != B.rows (" +
                     std::to_string(b.rows()) + ")");
  }
}

}  // namespace

Matrix nn_product_rank(RankCtx& ctx, const Matrix& a_local,
                       const Matrix& b_local) {
  const int q = ctx.grid().q();
  Matrix c;
  for (int t = 0; t < q; ++t) {
    Matrix at = ctx.broadcast(GroupKind::Row, t, a_local);
    Matrix bt = ctx.broadcast(GroupKind::Column, t, b_local);
    Matrix prod = matmul(at, bt);
    c = t == 0 ? std::move(prod) : add(c, prod);
  }
  return c;
}

Matrix nt_product_rank(RankCtx& ctx, const Matrix& a_local,
                       const Matrix& b_local) {
  const int q = ctx.grid().q();
  const int my_col = ctx.coord().j;
  Matrix c;
  for (int t = 0; t < q; ++t) {
    Matrix bt = ctx.broadcast(GroupKind::Column, t, b_local);
    Matrix partial = matmul_nt(a_local, bt);
    Matrix r = ctx.reduce(GroupKind::Row, t, partial);
    if (my_col == t) c = std::move(r);
  }
  return c;
}

Matrix tn_product_rank(RankCtx& ctx, const Matrix& a_local,
                       const Matrix& c_local, bool sum_over_depth) {
  const int q = ctx.grid().q();
  const int my_row = ctx.coord().i;
  Matrix layer_partial;
  for (int t = 0; t < q; ++t) {
    Matrix at = ctx.broadcast(GroupKind::Row, t, a_local);
    Matrix partial = matmul_tn(at, c_local);
    Matrix r = ctx.reduce(GroupKind::Column, t, partial);
    if (my_row == t) layer_partial = std::move(r);
  }
  if (sum_over_depth) {
    layer_partial = ctx.all_reduce(GroupKind::Depth, layer_partial);
  }
  return layer_partial;
}

AlgoResult cannon_matmul(const Matrix& a, const Matrix& b, int q) {
  check_inner(a, b, "cannon_matmul");
  GridSpec grid(q, 1);
  ShardedMatrix as = partition(a, Scheme::Summa2D, grid);
  ShardedMatrix bs = partition(b, Scheme::Summa2D, grid);

  auto run = run_spmd(grid, [&](RankCtx& ctx) {
    const RankCoord& c = ctx.coord();
    // Skew: the block at (i, j) must end up holding A of column (j + i)
    // and B of row (i + j), all indices mod q.
    Matrix ablk = ctx.shift(GroupKind::Row, c.i, as.block(ctx.rank()));
    Matrix bblk = ctx.shift(GroupKind::Column, c.j, bs.block(ctx.rank()));
    Matrix acc;
    for (int t = 0; t < q; ++t) {
      Matrix prod = matmul(ablk, bblk);
      acc = t == 0 ? std::move(prod) : add(acc, prod);
      ablk = ctx.shift(GroupKind::Row, 1, ablk);
      bblk = ctx.shift(GroupKind::Column, 1, bblk);
    }
    return acc;
  });

  ShardedMatrix cs = ShardedMatrix::from_blocks(
      grid, Scheme::Summa2D, a.rows(), b.cols(), std::move(run.outputs));
  return {combine(cs), std::move(run.stats)};
}

AlgoResult summa_matmul(const Matrix& a, const Matrix& b, int q) {
  check_inner(a, b, "summa_matmul");
  GridSpec grid(q, 1);
  ShardedMatrix as = partition(a, Scheme::Summa2D, grid);
  ShardedMatrix bs = partition(b, Scheme::Summa2D, grid);

  auto run = run_spmd(grid, [&](RankCtx& ctx) {
    return nn_product_rank(ctx, as.block(ctx.rank()), bs.block(ctx.rank()));
  });

  ShardedMatrix cs = ShardedMatrix::from_blocks(
      grid, Scheme::Summa2D, a.rows(), b.cols(), std::move(run.outputs));
  return {combine(cs), std::move(run.stats)};
}

namespace {

// Charges the initial depth replication of a weight-style operand: one
// broadcast per depth group from layer 0. Values are already in place, so
// only the meter moves.
void meter_replication(RankCtx& ctx, const Matrix& b_local) {
  ctx.broadcast(GroupKind::Depth, 0, b_local);
}

}  // namespace

AlgoResult tesseract_matmul(const Matrix& a, const Matrix& b,
                            const GridSpec& grid, MatmulVariant variant,
                            const TesseractOptions& options) {
  const SpmdOptions spmd_options{options.record_trace};
  switch (variant) {
    case MatmulVariant::NN: {
      check_inner(a, b, "tesseract_matmul(nn)");
      ShardedMatrix as = partition(a, Scheme::TesseractA, grid);
      ShardedMatrix bs = partition(b, Scheme::TesseractB, grid);
      auto run = run_spmd(grid, [&](RankCtx& ctx) {
        if (options.meter_initial_replication) {
          meter_replication(ctx, bs.block(ctx.rank()));
        }
        return nn_product_rank(ctx, as.block(ctx.rank()), bs.block(ctx.rank()));
      }, spmd_options);
      ShardedMatrix cs = ShardedMatrix::from_blocks(
          grid, Scheme::TesseractA, a.rows(), b.cols(), std::move(run.outputs));
      return {combine(cs), std::move(run.stats), std::move(run.trace)};
    }
    case MatmulVariant::NT: {
      if (a.cols() != b.cols()) {
        throw ShapeError("tesseract_matmul(nt): A.cols (" +
                         std::to_string(a.cols()) + ") != B.cols (" +
                         std::to_string(b.cols()) + ")");
      }
      ShardedMatrix as = partition(a, Scheme::TesseractA, grid);
      ShardedMatrix bs = partition(b, Scheme::TesseractB, grid);
      auto run = run_spmd(grid, [&](RankCtx& ctx) {
        if (options.meter_initial_replication) {
          meter_replication(ctx, bs.block(ctx.rank()));
        }
        return nt_product_rank(ctx, as.block(ctx.rank()), bs.block(ctx.rank()));
      }, spmd_options);
      ShardedMatrix cs = ShardedMatrix::from_blocks(
          grid, Scheme::TesseractA, a.rows(), b.rows(), std::move(run.outputs));
      return {combine(cs), std::move(run.stats), std::move(run.trace)};
    }
    case MatmulVariant::TN: {
      if (a.rows() != b.rows()) {
        throw ShapeError("tesseract_matmul(tn): A.rows (" +
                         std::to_string(a.rows()) + ") != B.rows (" +
                         std::to_string(b.rows()) + ")");
      }
      ShardedMatrix as = partition(a, Scheme::TesseractA, grid);
      ShardedMatrix bs = partition(b, Scheme::TesseractA, grid);
      auto run = run_spmd(grid, [&](RankCtx& ctx) {
        return tn_product_rank(ctx, as.block(ctx.rank()), bs.block(ctx.rank()),
                               /*sum_over_depth=*/true);
      }, spmd_options);
      ShardedMatrix cs = ShardedMatrix::from_blocks(
          grid, Scheme::TesseractB, a.cols(), b.cols(), std::move(run.outputs));
      return {combine(cs), std::move(run.stats), std::move(run.trace)};
    }
  }
  throw Error("tesseract_matmul: bad variant");
}

TesseractBackwardResult tesseract_backward(const ShardedMatrix& c_grad,
                                           const ShardedMatrix& a,
                                           const ShardedMatrix& b,
                                           const GridSpec& grid) {
  if (c_grad.scheme() != Scheme::TesseractA ||
      a.scheme() != Scheme::TesseractA || b.scheme() != Scheme::TesseractB) {
    throw ShapeError(
        "tesseract_backward: expected dC and A row-sharded and B "
        "weight-sharded");
  }
  if (c_grad.global_rows() != a.global_rows() ||
      c_grad.global_cols() != b.global_cols() ||
      a.global_cols() != b.global_rows()) {
    throw ShapeError("tesseract_backward: shapes inconsistent with C = A*B");
  }

  struct RankOut {
    Matrix a_grad;
    Matrix b_grad;
  };
  auto run = run_spmd(grid, [&](RankCtx& ctx) {
    const Matrix& cg = c_grad.block(ctx.rank());
    RankOut out;
    // dA = dC * B^T, landing in A's own layout.
    out.a_grad = nt_product_rank(ctx, cg, b.block(ctx.rank()));
    // dB = A^T * dC; each layer contributes a partial summed over depth so
    // all replicas of B hold the identical full gradient.
    out.b_grad = tn_product_rank(ctx, a.block(ctx.rank()), cg,
                                 /*sum_over_depth=*/true);
    return out;
  });

  std::vector<Matrix> ag(grid.size()), bg(grid.size());
  for (int r = 0; r < grid.size(); ++r) {
    ag[r] = std::move(run.outputs[r].a_grad);
    bg[r] = std::move(run.outputs[r].b_grad);
  }
  TesseractBackwardResult result;
  result.a_grad = ShardedMatrix::from_blocks(
      grid, Scheme::TesseractA, a.global_rows(), a.global_cols(), std::move(ag));
  result.b_grad = ShardedMatrix::from_blocks(
      grid, Scheme::TesseractB, b.global_rows(), b.global_cols(), std::move(bg));
  result.stats = std::move(run.stats);
  return result;
}

DenseBackwardResult tesseract_backward_dense(const Matrix& c_grad,
                                             const Matrix& a, const Matrix& b,
                                             const GridSpec& grid) {
  ShardedMatrix cgs = partition(c_grad, Scheme::TesseractA, grid);
  ShardedMatrix as = partition(a, Scheme::TesseractA, grid);
  ShardedMatrix bs = partition(b, Scheme::TesseractB, grid);
  TesseractBackwardResult r = tesseract_backward(cgs, as, bs, grid);
  return {combine(r.a_grad), combine(r.b_grad), std::move(r.stats)};
}

AlgoResult megatron_1d_linear(const Matrix& x, const Matrix& w1,
                              const Matrix& w2, int p) {
  check_inner(x, w1, "megatron_1d_linear");
  check_inner(w1, w2, "megatron_1d_linear");
  if (p < 1 || w1.cols() % p != 0) {
    throw DivisibilityError("megatron_1d_linear: inner width (" +
                            std::to_string(w1.cols()) +
                            ") not divisible by p (" + std::to_string(p) + ")");
  }
  // The p ranks form a single line; the one depth group is the world.
  GridSpec grid(1, p, /*allow_d_gt_q=*/true);
  ShardedMatrix w1s = partition(w1, Scheme::Column1D, grid);
  ShardedMatrix w2s = partition(w2, Scheme::Row1D, grid);

  auto run = run_spmd(grid, [&](RankCtx& ctx) {
    Matrix partial =
        matmul(matmul(x, w1s.block(ctx.rank())), w2s.block(ctx.rank()));
    return ctx.all_reduce(GroupKind::Depth, partial);
  });

  return {std::move(run.outputs[0]), std::move(run.stats)};
}

}  // namespace tsim
