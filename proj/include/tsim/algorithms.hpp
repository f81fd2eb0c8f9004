// Copyright (c) 2026 the tesseract-sim developers.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "tsim/grid.hpp"
#include "tsim/matrix.hpp"
#include "tsim/runtime.hpp"
#include "tsim/shard.hpp"

namespace tsim {

// Which product a [q, q, d] call computes. Output shapes: NN -> [a, c],
// NT -> [a, a'], TN -> [b, c].
enum class MatmulVariant { NN, NT, TN };
const char* to_cstring(MatmulVariant v);

struct AlgoResult {
  Matrix value;
  CommStats stats;
  std::vector<TraceEvent> trace;  // populated only when requested
};

struct TesseractOptions {
  // The replicated weight-style operand is laid down on every depth layer
  // at partition time with no metered traffic. When set, one depth-group
  // broadcast per block is charged for that initial replication instead.
  bool meter_initial_replication = false;
  bool record_trace = false;
};

// Cannon's algorithm on a [q, q] mesh: skew A left by the row index and B
// up by the column index, then q compute-shift steps of displacement 1.
AlgoResult cannon_matmul(const Matrix& a, const Matrix& b, int q);

// SUMMA on a [q, q] mesh: q outer-product steps, each broadcasting one
// block of A along its row and one block of B along its column.
AlgoResult summa_matmul(const Matrix& a, const Matrix& b, int q);

// The [q, q, d] product. Depth layer k runs an independent SUMMA over its
// [q, q] mesh on block-rows h = i + k*q of the row-sharded operand; the
// weight-style operand is replicated across layers.
//
// Operand layouts per variant:
//   NN  C = A*B    A is TesseractA of [a, b], B is TesseractB of [b, c].
//   NT  C = A*B^T  A is TesseractA of [m, n], B is TesseractB of [r, n];
//                  per step the B block is broadcast down its column and
//                  partial products reduce across the row to the slot that
//                  owns the output column.
//   TN  C = A^T*B  both operands TesseractA over rows m; per step the A
//                  block is broadcast along its row, partials reduce down
//                  the column, and layer partials are summed by one
//                  all-reduce per depth group.
AlgoResult tesseract_matmul(const Matrix& a, const Matrix& b,
                            const GridSpec& grid,
                            MatmulVariant variant = MatmulVariant::NN,
                            const TesseractOptions& options = {});

// Gradients of C = A*B given dC: dA = dC * B^T via the NT path and
// dB = A^T * dC via the TN path, with the depth all-reduce leaving every
// layer holding the full dB.
struct TesseractBackwardResult {
  ShardedMatrix a_grad;  // TesseractA, shape of A
  ShardedMatrix b_grad;  // TesseractB, shape of B
  CommStats stats;
};
TesseractBackwardResult tesseract_backward(const ShardedMatrix& c_grad,
                                           const ShardedMatrix& a,
                                           const ShardedMatrix& b,
                                           const GridSpec& grid);

// Dense-matrix convenience wrapper around tesseract_backward.
struct DenseBackwardResult {
  Matrix a_grad;
  Matrix b_grad;
  CommStats stats;
};
DenseBackwardResult tesseract_backward_dense(const Matrix& c_grad,
                                             const Matrix& a, const Matrix& b,
                                             const GridSpec& grid);

// 1-D tensor-parallel pair of linear layers: W1 is column-split into p
// shards, W2 row-split; every rank computes X*W1_k*W2_k and the partial
// outputs are summed by one all-reduce. (Any activation between the two
// layers is inserted by the layers module; this is the bare product.)
AlgoResult megatron_1d_linear(const Matrix& x, const Matrix& w1,
                              const Matrix& w2, int p);

// Per-rank bodies of the three [q, q, d] product variants, for embedding
// in larger SPMD programs (the transformer layers reuse these).
Matrix nn_product_rank(RankCtx& ctx, const Matrix& a_local,
                       const Matrix& b_local);
Matrix nt_product_rank(RankCtx& ctx, const Matrix& a_local,
                       const Matrix& b_local);
Matrix tn_product_rank(RankCtx& ctx, const Matrix& a_local,
                       const Matrix& c_local, bool sum_over_depth);

}  // namespace tsim
