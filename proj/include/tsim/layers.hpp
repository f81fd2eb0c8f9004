// Copyright (c) 2026 the tesseract-sim developers.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "tsim/algorithms.hpp"
#include "tsim/grid.hpp"
#include "tsim/matrix.hpp"
#include "tsim/rng.hpp"
#include "tsim/runtime.hpp"
#include "tsim/shard.hpp"

namespace tsim {

// Transformer geometry. Activations of logical shape [batch, seq, hidden]
// are carried as one [batch*seq, hidden] matrix (rows sample-major), since
// every sharded operation here is a matmul over the hidden dimension.
struct LayerDims {
  int batch = 0;
  int seq = 0;
  int hidden = 0;
  int heads = 0;
};

// Elementwise/local math shared by the serial reference and the sharded
// path. GELU is the exact erf form; softmax subtracts the row max before
// exponentiating.
Matrix gelu(const Matrix& x);
Matrix gelu_grad(const Matrix& x);
Matrix softmax_rows(const Matrix& scores);
Matrix softmax_backward_rows(const Matrix& probs, const Matrix& dprobs);

// Full parameter set of one pre-norm transformer block:
//   y = r + ff(ln2(r)),  r = x + attention(ln1(x)).
// w_qkv columns are grouped per head as consecutive (Q|K|V) triples of
// width 3*hidden/heads, so a column range covering whole heads carries
// complete Q, K, V slices for those heads.
struct BlockParams {
  Matrix w_qkv;   // [h, 3h]
  Matrix w_proj;  // [h, h]
  Matrix w_ff1;   // [h, 4h]
  Matrix w_ff2;   // [4h, h]
  Matrix ln1_gain, ln1_bias, ln2_gain, ln2_bias;  // [1, h]
  double eps = 1e-5;
};
BlockParams random_block_params(int hidden, Rng& rng);

struct BlockGrads {
  Matrix w_qkv, w_proj, w_ff1, w_ff2;
  Matrix ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};
BlockGrads zero_grads(int hidden);

// Activations sharded like the row-sharded matmul operand: the rank at
// (i, j, k) holds samples of global block-row h = i + k*q and hidden
// columns of block j, a local [batch/(d*q) * seq, hidden/q] matrix.
struct ActivationShard {
  LayerDims dims;
  ShardedMatrix data;
};
ActivationShard shard_activation(const Matrix& x, const LayerDims& dims,
                                 const GridSpec& grid);
Matrix combine_activation(const ActivationShard& a);

// Per-rank slices of BlockParams: the four weights as [*, *]/q blocks at
// (i, j) replicated over depth, the layernorm vectors as the hidden slice
// j replicated over rows and depth.
struct BlockShard {
  Matrix w_qkv, w_proj, w_ff1, w_ff2;
  Matrix ln1_gain, ln1_bias, ln2_gain, ln2_bias;  // [1, h/q]
  double eps = 1e-5;
};
std::vector<BlockShard> shard_block_params(const BlockParams& params,
                                           const GridSpec& grid);

struct BlockShardGrads {
  Matrix w_qkv, w_proj, w_ff1, w_ff2;
  Matrix ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};
BlockShardGrads zero_shard_grads(int hidden, const GridSpec& grid);

// Reassembles global gradients from per-rank shard gradients (weights via
// block combination, layernorm vectors from the j-slices; replicas must
// agree bit for bit).
BlockGrads combine_block_grads(const std::vector<BlockShardGrads>& shards,
                               int hidden, const GridSpec& grid);

// ----- rank-level building blocks (embed in SPMD programs) -----

struct RankDims {
  int seq = 0;
  int head_dim = 0;
  int heads_local = 0;
  int samples_local = 0;
  int hidden_total = 0;
};
RankDims rank_dims(const LayerDims& dims, const GridSpec& grid);

struct LnCacheRank {
  Matrix xhat;
  std::vector<double> inv_sigma;  // per local row
};
struct FfCacheRank {
  Matrix x, z, h;
};
struct AttnCacheRank {
  Matrix x, qkv, o;
  std::vector<Matrix> probs;  // [sample * heads_local + head]
};
struct BlockCacheRank {
  LnCacheRank ln1, ln2;
  AttnCacheRank attn;
  FfCacheRank ff;
};

// Row-wise layernorm over the full hidden dimension: local sums of x and
// x^2 are all-reduced across the row group, which spans the sharded hidden
// axis.
Matrix ln_forward_rank(RankCtx& ctx, const Matrix& x, const Matrix& gain,
                       const Matrix& bias, double eps, int hidden_total,
                       LnCacheRank* cache);
// Input gradient from the stored normalized values; the two row sums are
// all-reduced across the row group. When grads is given, the gain/bias
// gradients are summed over the column and depth groups so every replica
// holds the full value.
Matrix ln_backward_rank(RankCtx& ctx, const Matrix& dy, const LnCacheRank& c,
                        const Matrix& gain, int hidden_total, Matrix* dgain,
                        Matrix* dbias);

Matrix ff_forward_rank(RankCtx& ctx, const Matrix& x, const BlockShard& p,
                       FfCacheRank* cache);
Matrix ff_backward_rank(RankCtx& ctx, const Matrix& dy, const BlockShard& p,
                        const FfCacheRank& c, BlockShardGrads* grads);

Matrix attn_forward_rank(RankCtx& ctx, const Matrix& x, const BlockShard& p,
                         const RankDims& rd, AttnCacheRank* cache);
Matrix attn_backward_rank(RankCtx& ctx, const Matrix& dy, const BlockShard& p,
                          const RankDims& rd, const AttnCacheRank& c,
                          BlockShardGrads* grads);

Matrix block_forward_rank(RankCtx& ctx, const Matrix& x, const BlockShard& p,
                          const RankDims& rd, BlockCacheRank* cache);
Matrix block_backward_rank(RankCtx& ctx, const Matrix& dy, const BlockShard& p,
                           const RankDims& rd, const BlockCacheRank& c,
                           BlockShardGrads* grads);

// Forward bias add: the bias row lives on the i = 0 rank of each column
// group and is broadcast down the column. Backward: column sums of the
// upstream gradient reduce back to row 0 (then over depth, so the holder
// has the full gradient).
Matrix bias_add_forward_rank(RankCtx& ctx, const Matrix& x,
                             const Matrix& bias_at_row0);
std::pair<Matrix, Matrix> bias_add_backward_rank(RankCtx& ctx,
                                                 const Matrix& dy);

// Sum of one scalar over all p ranks (row, column, then depth all-reduce).
double global_sum_rank(RankCtx& ctx, double value);

// ----- whole-layer wrappers (one SPMD run each) -----

ActivationShard feedforward_forward(const ActivationShard& x,
                                    const BlockParams& params,
                                    const GridSpec& grid,
                                    CommStats* stats = nullptr);
ActivationShard attention_forward(const ActivationShard& x,
                                  const BlockParams& params,
                                  const GridSpec& grid,
                                  CommStats* stats = nullptr);
ActivationShard layernorm_forward(const ActivationShard& x, const Matrix& gain,
                                  const Matrix& bias, double eps,
                                  const GridSpec& grid,
                                  CommStats* stats = nullptr);
ActivationShard bias_add_forward(const ActivationShard& x, const Matrix& bias,
                                 const GridSpec& grid,
                                 CommStats* stats = nullptr);
ActivationShard transformer_block_forward(const ActivationShard& x,
                                          const BlockParams& params,
                                          const GridSpec& grid,
                                          CommStats* stats = nullptr);

// Forward + backward in one run, for gradient verification. dy is the
// upstream gradient arriving at the layer output.
enum class LayerOp { Feedforward, Attention, Layernorm, BiasAdd, Block };
struct LayerRunResult {
  Matrix y;        // combined forward output
  Matrix dx;       // combined input gradient
  BlockGrads grads;
  Matrix dbias;    // bias-add only
  CommStats stats;
};
LayerRunResult layer_run(LayerOp op, const Matrix& x, const Matrix& dy,
                         const BlockParams& params, const LayerDims& dims,
                         const GridSpec& grid);

// ----- serial reference -----
//
// Built on matmul_serial and explicit transposes only, so it stays an
// independent check on the sharded path.
namespace ref {

struct LnCache {
  Matrix xhat;
  std::vector<double> inv_sigma;
};
struct FfCache {
  Matrix x, z, h;
};
struct AttnCache {
  Matrix x, qkv, o;
  std::vector<Matrix> probs;
};
struct BlockCache {
  LnCache ln1, ln2;
  AttnCache attn;
  FfCache ff;
};

Matrix layernorm(const Matrix& x, const Matrix& gain, const Matrix& bias,
                 double eps, LnCache* cache = nullptr);
Matrix layernorm_backward(const Matrix& dy, const LnCache& c,
                          const Matrix& gain, Matrix* dgain = nullptr,
                          Matrix* dbias = nullptr);
Matrix feedforward(const Matrix& x, const BlockParams& p,
                   FfCache* cache = nullptr);
Matrix feedforward_backward(const Matrix& dy, const BlockParams& p,
                            const FfCache& c, BlockGrads* grads = nullptr);
Matrix attention(const Matrix& x, const BlockParams& p, const LayerDims& dims,
                 AttnCache* cache = nullptr);
Matrix attention_backward(const Matrix& dy, const BlockParams& p,
                          const LayerDims& dims, const AttnCache& c,
                          BlockGrads* grads = nullptr);
Matrix bias_add(const Matrix& x, const Matrix& bias);
Matrix transformer_block(const Matrix& x, const BlockParams& p,
                         const LayerDims& dims, BlockCache* cache = nullptr);
Matrix transformer_block_backward(const Matrix& dy, const BlockParams& p,
                                  const LayerDims& dims, const BlockCache& c,
                                  BlockGrads* grads = nullptr);

}  // namespace ref

// ----- toy model training -----

// Paired serial/sharded training of a small stack of blocks from one seed:
// mean-squared error against a fixed random target, plain SGD. The sharded
// run must track the serial loss step for step; on a [1,1,1] grid the two
// paths execute identical operation sequences and agree bit for bit.
struct ToyConfig {
  LayerDims dims{4, 4, 8, 2};
  int layers = 2;
  int steps = 50;
  double lr = 0.05;
  std::uint64_t seed = 1234;
  int q = 2;
  int d = 2;
  bool allow_d_gt_q = false;
};
struct ToyTrainResult {
  std::vector<double> serial_loss;
  std::vector<double> dist_loss;
  double max_divergence = 0.0;
  CommStats stats;
};
ToyTrainResult train_toy(const ToyConfig& config);

}  // namespace tsim
