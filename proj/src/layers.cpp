// Copyright (c) 2026 the tesseract-sim developers.
// SPDX-License-Identifier: Apache-2.0

#include "tsim/layers.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "tsim/error.hpp"

namespace tsim {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

void require(bool ok, const std::string& what) {
  if (!ok) throw DivisibilityError(what);
}

}  // namespace

Matrix gelu(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x.values()[i];
    y.values()[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  }
  return y;
}

Matrix gelu_grad(const Matrix& x) {
  Matrix g(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x.values()[i];
    g.values()[i] = 0.5 * (1.0 + std::erf(v * kInvSqrt2)) +
                    v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
  }
  return g;
}

Matrix softmax_rows(const Matrix& scores) {
  Matrix p(scores.rows(), scores.cols());
  for (std::size_t r = 0; r < scores.rows(); ++r) {
    double mx = scores(r, 0);
    for (std::size_t c = 1; c < scores.cols(); ++c) {
      mx = std::max(mx, scores(r, c));
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < scores.cols(); ++c) {
      const double e = std::exp(scores(r, c) - mx);
      p(r, c) = e;
      sum += e;
    }
    for (std::size_t c = 0; c < scores.cols(); ++c) p(r, c) /= sum;
  }
  return p;
}

Matrix softmax_backward_rows(const Matrix& probs, const Matrix& dprobs) {
  Matrix ds(probs.rows(), probs.cols());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    double dot = 0.0;
    for (std::size_t c = 0; c < probs.cols(); ++c) {
      dot += probs(r, c) * dprobs(r, c);
    }
    for (std::size_t c = 0; c < probs.cols(); ++c) {
      ds(r, c) = probs(r, c) * (dprobs(r, c) - dot);
    }
  }
  return ds;
}

BlockParams random_block_params(int hidden, Rng& rng) {
  const std::size_t h = static_cast<std::size_t>(hidden);
  const double w_scale = 1.0 / std::sqrt(static_cast<double>(hidden));
  auto weight = [&](std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (double& v : m.values()) v = w_scale * rng.uniform_signed();
    return m;
  };
  auto ln_vec = [&](double base) {
    Matrix m(1, h);
    for (double& v : m.values()) v = base + 0.1 * rng.uniform_signed();
    return m;
  };
  BlockParams p;
  p.w_qkv = weight(h, 3 * h);
  p.w_proj = weight(h, h);
  p.w_ff1 = weight(h, 4 * h);
  p.w_ff2 = weight(4 * h, h);
  p.ln1_gain = ln_vec(1.0);
  p.ln1_bias = ln_vec(0.0);
  p.ln2_gain = ln_vec(1.0);
  p.ln2_bias = ln_vec(0.0);
  return p;
}

BlockGrads zero_grads(int hidden) {
  const std::size_t h = static_cast<std::size_t>(hidden);
  BlockGrads g;
  g.w_qkv = Matrix(h, 3 * h);
  g.w_proj = Matrix(h, h);
  g.w_ff1 = Matrix(h, 4 * h);
  g.w_ff2 = Matrix(4 * h, h);
  g.ln1_gain = Matrix(1, h);
  g.ln1_bias = Matrix(1, h);
  g.ln2_gain = Matrix(1, h);
  g.ln2_bias = Matrix(1, h);
  return g;
}

ActivationShard shard_activation(const Matrix& x, const LayerDims& dims,
                                 const GridSpec& grid) {
  const int q = grid.q();
  const int d = grid.d();
  require(dims.batch % (d * q) == 0,
          "batch (" + std::to_string(dims.batch) + ") not divisible by d*q (" +
              std::to_string(d * q) + ")");
  require(dims.hidden % q == 0, "hidden (" + std::to_string(dims.hidden) +
                                    ") not divisible by q (" +
                                    std::to_string(q) + ")");
  require(dims.heads % q == 0, "heads (" + std::to_string(dims.heads) +
                                   ") not divisible by q (" +
                                   std::to_string(q) + ")");
  require(dims.hidden % dims.heads == 0,
          "hidden (" + std::to_string(dims.hidden) + ") not divisible by heads "
          "(" + std::to_string(dims.heads) + ")");
  if (x.rows() != std::size_t(dims.batch) * dims.seq ||
      x.cols() != std::size_t(dims.hidden)) {
    throw ShapeError("shard_activation: activation must be [batch*seq, hidden]");
  }
  return {dims, partition(x, Scheme::TesseractA, grid)};
}

Matrix combine_activation(const ActivationShard& a) { return combine(a.data); }

std::vector<BlockShard> shard_block_params(const BlockParams& params,
                                           const GridSpec& grid) {
  const int q = grid.q();
  const std::size_t h = params.w_proj.rows();
  require(h % q == 0, "hidden (" + std::to_string(h) +
                          ") not divisible by q (" + std::to_string(q) + ")");
  const std::size_t hq = h / q;
  ShardedMatrix qkv = partition(params.w_qkv, Scheme::TesseractB, grid);
  ShardedMatrix proj = partition(params.w_proj, Scheme::TesseractB, grid);
  ShardedMatrix ff1 = partition(params.w_ff1, Scheme::TesseractB, grid);
  ShardedMatrix ff2 = partition(params.w_ff2, Scheme::TesseractB, grid);
  std::vector<BlockShard> shards(grid.size());
  for (int r = 0; r < grid.size(); ++r) {
    const RankCoord c = grid.coord_of(r);
    BlockShard& s = shards[r];
    s.w_qkv = qkv.block(r);
    s.w_proj = proj.block(r);
    s.w_ff1 = ff1.block(r);
    s.w_ff2 = ff2.block(r);
    s.ln1_gain = submatrix(params.ln1_gain, 0, 1, std::size_t(c.j) * hq, hq);
    s.ln1_bias = submatrix(params.ln1_bias, 0, 1, std::size_t(c.j) * hq, hq);
    s.ln2_gain = submatrix(params.ln2_gain, 0, 1, std::size_t(c.j) * hq, hq);
    s.ln2_bias = submatrix(params.ln2_bias, 0, 1, std::size_t(c.j) * hq, hq);
    s.eps = params.eps;
  }
  return shards;
}

BlockShardGrads zero_shard_grads(int hidden, const GridSpec& grid) {
  const std::size_t hq = static_cast<std::size_t>(hidden) / grid.q();
  BlockShardGrads g;
  g.w_qkv = Matrix(hq, 3 * hq);
  g.w_proj = Matrix(hq, hq);
  g.w_ff1 = Matrix(hq, 4 * hq);
  g.w_ff2 = Matrix(4 * hq, hq);
  g.ln1_gain = Matrix(1, hq);
  g.ln1_bias = Matrix(1, hq);
  g.ln2_gain = Matrix(1, hq);
  g.ln2_bias = Matrix(1, hq);
  return g;
}

namespace {

Matrix combine_weight(const GridSpec& grid, std::size_t rows, std::size_t cols,
                      const std::vector<BlockShardGrads>& shards,
                      Matrix BlockShardGrads::*field) {
  std::vector<Matrix> blocks(grid.size());
  for (int r = 0; r < grid.size(); ++r) blocks[r] = shards[r].*field;
  return combine(ShardedMatrix::from_blocks(grid, Scheme::TesseractB, rows,
                                            cols, std::move(blocks)));
}

Matrix combine_ln_vec(const GridSpec& grid, std::size_t hidden,
                      const std::vector<BlockShardGrads>& shards,
                      Matrix BlockShardGrads::*field) {
  const std::size_t hq = hidden / grid.q();
  Matrix out(1, hidden);
  for (int j = 0; j < grid.q(); ++j) {
    const Matrix& slice = shards[grid.rank_of({0, j, 0})].*field;
    insert_block(out, 0, std::size_t(j) * hq, slice);
    // Replicas across rows and depth must agree exactly.
    for (int i = 0; i < grid.q(); ++i) {
      for (int k = 0; k < grid.d(); ++k) {
        if (!(shards[grid.rank_of({i, j, k})].*field == slice)) {
          throw ShapeError("combine_block_grads: layernorm replica divergence");
        }
      }
    }
  }
  return out;
}

}  // namespace

BlockGrads combine_block_grads(const std::vector<BlockShardGrads>& shards,
                               int hidden, const GridSpec& grid) {
  const std::size_t h = static_cast<std::size_t>(hidden);
  BlockGrads g;
  g.w_qkv = combine_weight(grid, h, 3 * h, shards, &BlockShardGrads::w_qkv);
  g.w_proj = combine_weight(grid, h, h, shards, &BlockShardGrads::w_proj);
  g.w_ff1 = combine_weight(grid, h, 4 * h, shards, &BlockShardGrads::w_ff1);
  g.w_ff2 = combine_weight(grid, 4 * h, h, shards, &BlockShardGrads::w_ff2);
  g.ln1_gain = combine_ln_vec(grid, h, shards, &BlockShardGrads::ln1_gain);
  g.ln1_bias = combine_ln_vec(grid, h, shards, &BlockShardGrads::ln1_bias);
  g.ln2_gain = combine_ln_vec(grid, h, shards, &BlockShardGrads::ln2_gain);
  g.ln2_bias = combine_ln_vec(grid, h, shards, &BlockShardGrads::ln2_bias);
  return g;
}

RankDims rank_dims(const LayerDims& dims, const GridSpec& grid) {
  RankDims rd;
  rd.seq = dims.seq;
  rd.head_dim = dims.hidden / dims.heads;
  rd.heads_local = dims.heads / grid.q();
  rd.samples_local = dims.batch / (grid.d() * grid.q());
  rd.hidden_total = dims.hidden;
  return rd;
}

// ----- layernorm -----

Matrix ln_forward_rank(RankCtx& ctx, const Matrix& x, const Matrix& gain,
                       const Matrix& bias, double eps, int hidden_total,
                       LnCacheRank* cache) {
  const std::size_t rows = x.rows();
  const std::size_t w = x.cols();
  Matrix sums(rows, 2);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0, s2 = 0.0;
    for (std::size_t c = 0; c < w; ++c) {
      const double v = x(r, c);
      s += v;
      s2 += v * v;
    }
    sums(r, 0) = s;
    sums(r, 1) = s2;
  }
  sums = ctx.all_reduce(GroupKind::Row, sums);

  const double n = static_cast<double>(hidden_total);
  Matrix y(rows, w);
  Matrix xhat(rows, w);
  std::vector<double> inv_sigma(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double mean = sums(r, 0) / n;
    double var = sums(r, 1) / n - mean * mean;
    if (var < 0.0) var = 0.0;
    const double isv = 1.0 / std::sqrt(var + eps);
    inv_sigma[r] = isv;
    for (std::size_t c = 0; c < w; ++c) {
      const double xh = (x(r, c) - mean) * isv;
      xhat(r, c) = xh;
      y(r, c) = gain(0, c) * xh + bias(0, c);
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_sigma = std::move(inv_sigma);
  }
  return y;
}

Matrix ln_backward_rank(RankCtx& ctx, const Matrix& dy, const LnCacheRank& c,
                        const Matrix& gain, int hidden_total, Matrix* dgain,
                        Matrix* dbias) {
  if (c.xhat.empty()) throw ShapeError("ln_backward: missing forward cache");
  const std::size_t rows = dy.rows();
  const std::size_t w = dy.cols();
  Matrix dxhat(rows, w);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t col = 0; col < w; ++col) {
      dxhat(r, col) = dy(r, col) * gain(0, col);
    }
  }
  Matrix sums(rows, 2);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0, sx = 0.0;
    for (std::size_t col = 0; col < w; ++col) {
      s += dxhat(r, col);
      sx += c.xhat(r, col) * dxhat(r, col);
    }
    sums(r, 0) = s;
    sums(r, 1) = sx;
  }
  sums = ctx.all_reduce(GroupKind::Row, sums);

  const double n = static_cast<double>(hidden_total);
  Matrix dx(rows, w);
  for (std::size_t r = 0; r < rows; ++r) {
    const double mean_d = sums(r, 0) / n;
    const double mean_xd = sums(r, 1) / n;
    const double isv = c.inv_sigma[r];
    for (std::size_t col = 0; col < w; ++col) {
      dx(r, col) = isv * (dxhat(r, col) - mean_d - c.xhat(r, col) * mean_xd);
    }
  }

  if (dgain || dbias) {
    // Parameter gradients need the sum over all rows: column groups sum
    // over i, depth groups over k.
    Matrix packed(2, w);
    for (std::size_t col = 0; col < w; ++col) {
      double dg = 0.0, db = 0.0;
      for (std::size_t r = 0; r < rows; ++r) {
        dg += dy(r, col) * c.xhat(r, col);
        db += dy(r, col);
      }
      packed(0, col) = dg;
      packed(1, col) = db;
    }
    packed = ctx.all_reduce(GroupKind::Column, packed);
    packed = ctx.all_reduce(GroupKind::Depth, packed);
    if (dgain) {
      for (std::size_t col = 0; col < w; ++col) {
        (*dgain)(0, col) += packed(0, col);
      }
    }
    if (dbias) {
      for (std::size_t col = 0; col < w; ++col) {
        (*dbias)(0, col) += packed(1, col);
      }
    }
  }
  return dx;
}

// ----- feedforward -----

Matrix ff_forward_rank(RankCtx& ctx, const Matrix& x, const BlockShard& p,
                       FfCacheRank* cache) {
  Matrix z = nn_product_rank(ctx, x, p.w_ff1);
  Matrix h = gelu(z);
  Matrix y = nn_product_rank(ctx, h, p.w_ff2);
  if (cache) {
    cache->x = x;
    cache->z = std::move(z);
    cache->h = std::move(h);
  }
  return y;
}

Matrix ff_backward_rank(RankCtx& ctx, const Matrix& dy, const BlockShard& p,
                        const FfCacheRank& c, BlockShardGrads* grads) {
  Matrix dh = nt_product_rank(ctx, dy, p.w_ff2);
  Matrix dz = hadamard(dh, gelu_grad(c.z));
  Matrix dx = nt_product_rank(ctx, dz, p.w_ff1);
  if (grads) {
    grads->w_ff2 =
        add(grads->w_ff2, tn_product_rank(ctx, c.h, dy, /*sum_over_depth=*/true));
    grads->w_ff1 =
        add(grads->w_ff1, tn_product_rank(ctx, c.x, dz, /*sum_over_depth=*/true));
  } else {
    // Keep the collective sequence identical whether or not gradients are
    // requested, so mixed callers cannot diverge.
    tn_product_rank(ctx, c.h, dy, true);
    tn_product_rank(ctx, c.x, dz, true);
  }
  return dx;
}

// ----- attention -----

Matrix attn_forward_rank(RankCtx& ctx, const Matrix& x, const BlockShard& p,
                         const RankDims& rd, AttnCacheRank* cache) {
  Matrix qkv = nn_product_rank(ctx, x, p.w_qkv);
  const std::size_t s = rd.seq;
  const std::size_t hd = rd.head_dim;
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(rd.head_dim));
  Matrix o(qkv.rows(), std::size_t(rd.heads_local) * hd);
  std::vector<Matrix> probs;
  probs.reserve(std::size_t(rd.samples_local) * rd.heads_local);
  for (int smp = 0; smp < rd.samples_local; ++smp) {
    const std::size_t row0 = std::size_t(smp) * s;
    for (int head = 0; head < rd.heads_local; ++head) {
      const std::size_t base = std::size_t(head) * 3 * hd;
      Matrix qm = submatrix(qkv, row0, s, base, hd);
      Matrix km = submatrix(qkv, row0, s, base + hd, hd);
      Matrix vm = submatrix(qkv, row0, s, base + 2 * hd, hd);
      Matrix scores = scale(matmul_nt(qm, km), inv_sqrt_hd);
      Matrix prob = softmax_rows(scores);
      Matrix oh = matmul(prob, vm);
      insert_block(o, row0, std::size_t(head) * hd, oh);
      probs.push_back(std::move(prob));
    }
  }
  Matrix y = nn_product_rank(ctx, o, p.w_proj);
  if (cache) {
    cache->x = x;
    cache->qkv = std::move(qkv);
    cache->o = std::move(o);
    cache->probs = std::move(probs);
  }
  return y;
}

Matrix attn_backward_rank(RankCtx& ctx, const Matrix& dy, const BlockShard& p,
                          const RankDims& rd, const AttnCacheRank& c,
                          BlockShardGrads* grads) {
  Matrix dout = nt_product_rank(ctx, dy, p.w_proj);
  if (grads) {
    grads->w_proj =
        add(grads->w_proj, tn_product_rank(ctx, c.o, dy, true));
  } else {
    tn_product_rank(ctx, c.o, dy, true);
  }
  const std::size_t s = rd.seq;
  const std::size_t hd = rd.head_dim;
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(rd.head_dim));
  Matrix dqkv(c.qkv.rows(), c.qkv.cols());
  for (int smp = 0; smp < rd.samples_local; ++smp) {
    const std::size_t row0 = std::size_t(smp) * s;
    for (int head = 0; head < rd.heads_local; ++head) {
      const std::size_t base = std::size_t(head) * 3 * hd;
      Matrix qm = submatrix(c.qkv, row0, s, base, hd);
      Matrix km = submatrix(c.qkv, row0, s, base + hd, hd);
      Matrix vm = submatrix(c.qkv, row0, s, base + 2 * hd, hd);
      const Matrix& prob = c.probs[std::size_t(smp) * rd.heads_local + head];
      Matrix doh = submatrix(dout, row0, s, std::size_t(head) * hd, hd);
      Matrix dprob = matmul_nt(doh, vm);
      Matrix dv = matmul_tn(prob, doh);
      Matrix dscore = scale(softmax_backward_rows(prob, dprob), inv_sqrt_hd);
      Matrix dq = matmul(dscore, km);
      Matrix dk = matmul_tn(dscore, qm);
      insert_block(dqkv, row0, base, dq);
      insert_block(dqkv, row0, base + hd, dk);
      insert_block(dqkv, row0, base + 2 * hd, dv);
    }
  }
  Matrix dx = nt_product_rank(ctx, dqkv, p.w_qkv);
  if (grads) {
    grads->w_qkv = add(grads->w_qkv, tn_product_rank(ctx, c.x, dqkv, true));
  } else {
    tn_product_rank(ctx, c.x, dqkv, true);
  }
  return dx;
}

// ----- block -----

Matrix block_forward_rank(RankCtx& ctx, const Matrix& x, const BlockShard& p,
                          const RankDims& rd, BlockCacheRank* cache) {
  BlockCacheRank local;
  BlockCacheRank* cc = cache ? cache : &local;
  Matrix ln1 = ln_forward_rank(ctx, x, p.ln1_gain, p.ln1_bias, p.eps,
                               rd.hidden_total, &cc->ln1);
  Matrix attn = attn_forward_rank(ctx, ln1, p, rd, &cc->attn);
  Matrix r1 = add(x, attn);
  Matrix ln2 = ln_forward_rank(ctx, r1, p.ln2_gain, p.ln2_bias, p.eps,
                               rd.hidden_total, &cc->ln2);
  Matrix ff = ff_forward_rank(ctx, ln2, p, &cc->ff);
  return add(r1, ff);
}

Matrix block_backward_rank(RankCtx& ctx, const Matrix& dy, const BlockShard& p,
                           const RankDims& rd, const BlockCacheRank& c,
                           BlockShardGrads* grads) {
  Matrix dff = ff_backward_rank(ctx, dy, p, c.ff, grads);
  Matrix dln2 = ln_backward_rank(ctx, dff, c.ln2, p.ln2_gain, rd.hidden_total,
                                 grads ? &grads->ln2_gain : nullptr,
                                 grads ? &grads->ln2_bias : nullptr);
  Matrix dr1 = add(dy, dln2);
  Matrix dattn = attn_backward_rank(ctx, dr1, p, rd, c.attn, grads);
  Matrix dln1 = ln_backward_rank(ctx, dattn, c.ln1, p.ln1_gain, rd.hidden_total,
                                 grads ? &grads->ln1_gain : nullptr,
                                 grads ? &grads->ln1_bias : nullptr);
  return add(dr1, dln1);
}

// ----- bias add -----

Matrix bias_add_forward_rank(RankCtx& ctx, const Matrix& x,
                             const Matrix& bias_at_row0) {
  Matrix b = ctx.broadcast(GroupKind::Column, 0, bias_at_row0);
  Matrix y(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) {
      y(r, c) = x(r, c) + b(0, c);
    }
  }
  return y;
}

std::pair<Matrix, Matrix> bias_add_backward_rank(RankCtx& ctx,
                                                 const Matrix& dy) {
  Matrix colsum(1, dy.cols());
  for (std::size_t c = 0; c < dy.cols(); ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < dy.rows(); ++r) s += dy(r, c);
    colsum(0, c) = s;
  }
  Matrix reduced = ctx.reduce(GroupKind::Column, 0, colsum);
  Matrix dbias;
  if (ctx.coord().i == 0) {
    dbias = ctx.all_reduce(GroupKind::Depth, reduced);
  }
  return {dy, std::move(dbias)};
}

double global_sum_rank(RankCtx& ctx, double value) {
  Matrix m(1, 1);
  m(0, 0) = value;
  m = ctx.all_reduce(GroupKind::Row, m);
  m = ctx.all_reduce(GroupKind::Column, m);
  m = ctx.all_reduce(GroupKind::Depth, m);
  return m(0, 0);
}

// ----- whole-layer wrappers -----

namespace {

ActivationShard wrap_run(const ActivationShard& x, const GridSpec& grid,
                         CommStats* stats,
                         const std::function<Matrix(RankCtx&, const Matrix&)>& fn) {
  auto run = run_spmd(grid, [&](RankCtx& ctx) {
    return fn(ctx, x.data.block(ctx.rank()));
  });
  if (stats) *stats += run.stats;
  return {x.dims,
          ShardedMatrix::from_blocks(grid, Scheme::TesseractA,
                                     x.data.global_rows(), x.data.global_cols(),
                                     std::move(run.outputs))};
}

}  // namespace

ActivationShard feedforward_forward(const ActivationShard& x,
                                    const BlockParams& params,
                                    const GridSpec& grid, CommStats* stats) {
  auto shards = shard_block_params(params, grid);
  return wrap_run(x, grid, stats, [&](RankCtx& ctx, const Matrix& xb) {
    return ff_forward_rank(ctx, xb, shards[ctx.rank()], nullptr);
  });
}

ActivationShard attention_forward(const ActivationShard& x,
                                  const BlockParams& params,
                                  const GridSpec& grid, CommStats* stats) {
  auto shards = shard_block_params(params, grid);
  const RankDims rd = rank_dims(x.dims, grid);
  return wrap_run(x, grid, stats, [&](RankCtx& ctx, const Matrix& xb) {
    return attn_forward_rank(ctx, xb, shards[ctx.rank()], rd, nullptr);
  });
}

ActivationShard layernorm_forward(const ActivationShard& x, const Matrix& gain,
                                  const Matrix& bias, double eps,
                                  const GridSpec& grid, CommStats* stats) {
  const std::size_t hq = std::size_t(x.dims.hidden) / grid.q();
  return wrap_run(x, grid, stats, [&](RankCtx& ctx, const Matrix& xb) {
    const std::size_t j = ctx.coord().j;
    Matrix g = submatrix(gain, 0, 1, j * hq, hq);
    Matrix b = submatrix(bias, 0, 1, j * hq, hq);
    return ln_forward_rank(ctx, xb, g, b, eps, x.dims.hidden, nullptr);
  });
}

ActivationShard bias_add_forward(const ActivationShard& x, const Matrix& bias,
                                 const GridSpec& grid, CommStats* stats) {
  const std::size_t hq = std::size_t(x.dims.hidden) / grid.q();
  return wrap_run(x, grid, stats, [&](RankCtx& ctx, const Matrix& xb) {
    // Only the i = 0 rank of each column owns a bias slice.
    Matrix mine;
    if (ctx.coord().i == 0) {
      mine = submatrix(bias, 0, 1, std::size_t(ctx.coord().j) * hq, hq);
    } else {
      mine = Matrix(1, hq);
    }
    return bias_add_forward_rank(ctx, xb, mine);
  });
}

ActivationShard transformer_block_forward(const ActivationShard& x,
                                          const BlockParams& params,
                                          const GridSpec& grid,
                                          CommStats* stats) {
  auto shards = shard_block_params(params, grid);
  const RankDims rd = rank_dims(x.dims, grid);
  return wrap_run(x, grid, stats, [&](RankCtx& ctx, const Matrix& xb) {
    return block_forward_rank(ctx, xb, shards[ctx.rank()], rd, nullptr);
  });
}

LayerRunResult layer_run(LayerOp op, const Matrix& x, const Matrix& dy,
                         const BlockParams& params, const LayerDims& dims,
                         const GridSpec& grid) {
  ActivationShard xs = shard_activation(x, dims, grid);
  ActivationShard dys = shard_activation(dy, dims, grid);
  auto shards = shard_block_params(params, grid);
  const RankDims rd = rank_dims(dims, grid);
  const std::size_t hq = std::size_t(dims.hidden) / grid.q();

  struct RankOut {
    Matrix y, dx, dbias;
    BlockShardGrads grads;
  };
  auto run = run_spmd(grid, [&](RankCtx& ctx) {
    const Matrix& xb = xs.data.block(ctx.rank());
    const Matrix& dyb = dys.data.block(ctx.rank());
    const BlockShard& p = shards[ctx.rank()];
    RankOut out;
    out.grads = zero_shard_grads(dims.hidden, grid);
    switch (op) {
      case LayerOp::Feedforward: {
        FfCacheRank cache;
        out.y = ff_forward_rank(ctx, xb, p, &cache);
        out.dx = ff_backward_rank(ctx, dyb, p, cache, &out.grads);
        break;
      }
      case LayerOp::Attention: {
        AttnCacheRank cache;
        out.y = attn_forward_rank(ctx, xb, p, rd, &cache);
        out.dx = attn_backward_rank(ctx, dyb, p, rd, cache, &out.grads);
        break;
      }
      case LayerOp::Layernorm: {
        LnCacheRank cache;
        out.y = ln_forward_rank(ctx, xb, p.ln1_gain, p.ln1_bias, p.eps,
                                dims.hidden, &cache);
        out.dx = ln_backward_rank(ctx, dyb, cache, p.ln1_gain, dims.hidden,
                                  &out.grads.ln1_gain, &out.grads.ln1_bias);
        break;
      }
      case LayerOp::BiasAdd: {
        Matrix mine;
        if (ctx.coord().i == 0) {
          mine = submatrix(params.ln1_bias, 0, 1,
                           std::size_t(ctx.coord().j) * hq, hq);
        } else {
          mine = Matrix(1, hq);
        }
        out.y = bias_add_forward_rank(ctx, xb, mine);
        auto [dx, db] = bias_add_backward_rank(ctx, dyb);
        out.dx = std::move(dx);
        out.dbias = std::move(db);
        break;
      }
      case LayerOp::Block: {
        BlockCacheRank cache;
        out.y = block_forward_rank(ctx, xb, p, rd, &cache);
        out.dx = block_backward_rank(ctx, dyb, p, rd, cache, &out.grads);
        break;
      }
    }
    return out;
  });

  LayerRunResult result;
  std::vector<Matrix> yb(grid.size()), dxb(grid.size());
  std::vector<BlockShardGrads> gshards(grid.size());
  for (int r = 0; r < grid.size(); ++r) {
    yb[r] = std::move(run.outputs[r].y);
    dxb[r] = std::move(run.outputs[r].dx);
    gshards[r] = std::move(run.outputs[r].grads);
  }
  result.y = combine(ShardedMatrix::from_blocks(
      grid, Scheme::TesseractA, x.rows(), x.cols(), std::move(yb)));
  result.dx = combine(ShardedMatrix::from_blocks(
      grid, Scheme::TesseractA, x.rows(), x.cols(), std::move(dxb)));
  result.grads = combine_block_grads(gshards, dims.hidden, grid);
  if (op == LayerOp::BiasAdd) {
    // dbias lives on the i = 0 ranks; reassemble the hidden row.
    Matrix db(1, std::size_t(dims.hidden));
    for (int j = 0; j < grid.q(); ++j) {
      insert_block(db, 0, std::size_t(j) * hq,
                   run.outputs[grid.rank_of({0, j, 0})].dbias);
    }
    result.dbias = std::move(db);
  }
  result.stats = std::move(run.stats);
  return result;
}

// ----- serial reference -----

namespace ref {

Matrix layernorm(const Matrix& x, const Matrix& gain, const Matrix& bias,
                 double eps, LnCache* cache) {
  const std::size_t rows = x.rows();
  const std::size_t w = x.cols();
  const double n = static_cast<double>(w);
  Matrix y(rows, w);
  Matrix xhat(rows, w);
  std::vector<double> inv_sigma(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0, s2 = 0.0;
    for (std::size_t c = 0; c < w; ++c) {
      const double v = x(r, c);
      s += v;
      s2 += v * v;
    }
    const double mean = s / n;
    double var = s2 / n - mean * mean;
    if (var < 0.0) var = 0.0;
    const double isv = 1.0 / std::sqrt(var + eps);
    inv_sigma[r] = isv;
    for (std::size_t c = 0; c < w; ++c) {
      const double xh = (x(r, c) - mean) * isv;
      xhat(r, c) = xh;
      y(r, c) = gain(0, c) * xh + bias(0, c);
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_sigma = std::move(inv_sigma);
  }
  return y;
}

Matrix layernorm_backward(const Matrix& dy, const LnCache& c,
                          const Matrix& gain, Matrix* dgain, Matrix* dbias) {
  if (c.xhat.empty()) throw ShapeError("layernorm_backward: missing cache");
  const std::size_t rows = dy.rows();
  const std::size_t w = dy.cols();
  const double n = static_cast<double>(w);
  Matrix dxhat(rows, w);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t col = 0; col < w; ++col) {
      dxhat(r, col) = dy(r, col) * gain(0, col);
    }
  }
  Matrix dx(rows, w);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0, sx = 0.0;
    for (std::size_t col = 0; col < w; ++col) {
      s += dxhat(r, col);
      sx += c.xhat(r, col) * dxhat(r, col);
    }
    const double mean_d = s / n;
    const double mean_xd = sx / n;
    const double isv = c.inv_sigma[r];
    for (std::size_t col = 0; col < w; ++col) {
      dx(r, col) = isv * (dxhat(r, col) - mean_d - c.xhat(r, col) * mean_xd);
    }
  }
  if (dgain) {
    for (std::size_t col = 0; col < w; ++col) {
      double dg = 0.0;
      for (std::size_t r = 0; r < rows; ++r) dg += dy(r, col) * c.xhat(r, col);
      (*dgain)(0, col) += dg;
    }
  }
  if (dbias) {
    for (std::size_t col = 0; col < w; ++col) {
      double db = 0.0;
      for (std::size_t r = 0; r < rows; ++r) db += dy(r, col);
      (*dbias)(0, col) += db;
    }
  }
  return dx;
}

Matrix feedforward(const Matrix& x, const BlockParams& p, FfCache* cache) {
  Matrix z = matmul_serial(x, p.w_ff1);
  Matrix h = gelu(z);
  Matrix y = matmul_serial(h, p.w_ff2);
  if (cache) {
    cache->x = x;
    cache->z = std::move(z);
    cache->h = std::move(h);
  }
  return y;
}

Matrix feedforward_backward(const Matrix& dy, const BlockParams& p,
                            const FfCache& c, BlockGrads* grads) {
  Matrix dh = matmul_serial(dy, transpose(p.w_ff2));
  Matrix dz = hadamard(dh, gelu_grad(c.z));
  Matrix dx = matmul_serial(dz, transpose(p.w_ff1));
  if (grads) {
    grads->w_ff2 = add(grads->w_ff2, matmul_serial(transpose(c.h), dy));
    grads->w_ff1 = add(grads->w_ff1, matmul_serial(transpose(c.x), dz));
  }
  return dx;
}

Matrix attention(const Matrix& x, const BlockParams& p, const LayerDims& dims,
                 AttnCache* cache) {
  Matrix qkv = matmul_serial(x, p.w_qkv);
  const std::size_t s = dims.seq;
  const std::size_t hd = std::size_t(dims.hidden) / dims.heads;
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
  Matrix o(qkv.rows(), std::size_t(dims.hidden));
  std::vector<Matrix> probs;
  probs.reserve(std::size_t(dims.batch) * dims.heads);
  for (int smp = 0; smp < dims.batch; ++smp) {
    const std::size_t row0 = std::size_t(smp) * s;
    for (int head = 0; head < dims.heads; ++head) {
      const std::size_t base = std::size_t(head) * 3 * hd;
      Matrix qm = submatrix(qkv, row0, s, base, hd);
      Matrix km = submatrix(qkv, row0, s, base + hd, hd);
      Matrix vm = submatrix(qkv, row0, s, base + 2 * hd, hd);
      Matrix scores = scale(matmul_serial(qm, transpose(km)), inv_sqrt_hd);
      Matrix prob = softmax_rows(scores);
      Matrix oh = matmul_serial(prob, vm);
      insert_block(o, row0, std::size_t(head) * hd, oh);
      probs.push_back(std::move(prob));
    }
  }
  Matrix y = matmul_serial(o, p.w_proj);
  if (cache) {
    cache->x = x;
    cache->qkv = std::move(qkv);
    cache->o = std::move(o);
    cache->probs = std::move(probs);
  }
  return y;
}

Matrix attention_backward(const Matrix& dy, const BlockParams& p,
                          const LayerDims& dims, const AttnCache& c,
                          BlockGrads* grads) {
  Matrix dout = matmul_serial(dy, transpose(p.w_proj));
  if (grads) {
    grads->w_proj = add(grads->w_proj, matmul_serial(transpose(c.o), dy));
  }
  const std::size_t s = dims.seq;
  const std::size_t hd = std::size_t(dims.hidden) / dims.heads;
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
  Matrix dqkv(c.qkv.rows(), c.qkv.cols());
  for (int smp = 0; smp < dims.batch; ++smp) {
    const std::size_t row0 = std::size_t(smp) * s;
    for (int head = 0; head < dims.heads; ++head) {
      const std::size_t base = std::size_t(head) * 3 * hd;
      Matrix qm = submatrix(c.qkv, row0, s, base, hd);
      Matrix km = submatrix(c.qkv, row0, s, base + hd, hd);
      Matrix vm = submatrix(c.qkv, row0, s, base + 2 * hd, hd);
      const Matrix& prob = c.probs[std::size_t(smp) * dims.heads + head];
      Matrix doh = submatrix(dout, row0, s, std::size_t(head) * hd, hd);
      Matrix dprob = matmul_serial(doh, transpose(vm));
      Matrix dv = matmul_serial(transpose(prob), doh);
      Matrix dscore = scale(softmax_backward_rows(prob, dprob), inv_sqrt_hd);
      Matrix dq = matmul_serial(dscore, km);
      Matrix dk = matmul_serial(transpose(dscore), qm);
      insert_block(dqkv, row0, base, dq);
      insert_block(dqkv, row0, base + hd, dk);
      insert_block(dqkv, row0, base + 2 * hd, dv);
    }
  }
  Matrix dx = matmul_serial(dqkv, transpose(p.w_qkv));
  if (grads) {
    grads->w_qkv = add(grads->w_qkv, matmul_serial(transpose(c.x), dqkv));
  }
  return dx;
}

Matrix bias_add(const Matrix& x, const Matrix& bias) {
  Matrix y(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) {
      y(r, c) = x(r, c) + bias(0, c);
    }
  }
  return y;
}

Matrix transformer_block(const Matrix& x, const BlockParams& p,
                         const LayerDims& dims, BlockCache* cache) {
  BlockCache local;
  BlockCache* cc = cache ? cache : &local;
  Matrix ln1 = layernorm(x, p.ln1_gain, p.ln1_bias, p.eps, &cc->ln1);
  Matrix attn_out = attention(ln1, p, dims, &cc->attn);
  Matrix r1 = add(x, attn_out);
  Matrix ln2 = layernorm(r1, p.ln2_gain, p.ln2_bias, p.eps, &cc->ln2);
  Matrix ff = feedforward(ln2, p, &cc->ff);
  return add(r1, ff);
}

Matrix transformer_block_backward(const Matrix& dy, const BlockParams& p,
                                  const LayerDims& dims, const BlockCache& c,
                                  BlockGrads* grads) {
  Matrix dff = feedforward_backward(dy, p, c.ff, grads);
  Matrix dln2 = layernorm_backward(dff, c.ln2, p.ln2_gain,
                                   grads ? &grads->ln2_gain : nullptr,
                                   grads ? &grads->ln2_bias : nullptr);
  Matrix dr1 = add(dy, dln2);
  Matrix dattn = attention_backward(dr1, p, dims, c.attn, grads);
  Matrix dln1 = layernorm_backward(dattn, c.ln1, p.ln1_gain,
                                   grads ? &grads->ln1_gain : nullptr,
                                   grads ? &grads->ln1_bias : nullptr);
  return add(dr1, dln1);
}

}  // namespace ref

// ----- toy training -----

namespace {

void sgd_step(Matrix& w, const Matrix& g, double lr) {
  for (std::size_t i = 0; i < w.size(); ++i) {
    w.values()[i] -= lr * g.values()[i];
  }
}

void apply_grads(BlockParams& p, const BlockGrads& g, double lr) {
  sgd_step(p.w_qkv, g.w_qkv, lr);
  sgd_step(p.w_proj, g.w_proj, lr);
  sgd_step(p.w_ff1, g.w_ff1, lr);
  sgd_step(p.w_ff2, g.w_ff2, lr);
  sgd_step(p.ln1_gain, g.ln1_gain, lr);
  sgd_step(p.ln1_bias, g.ln1_bias, lr);
  sgd_step(p.ln2_gain, g.ln2_gain, lr);
  sgd_step(p.ln2_bias, g.ln2_bias, lr);
}

void apply_shard_grads(BlockShard& p, const BlockShardGrads& g, double lr) {
  sgd_step(p.w_qkv, g.w_qkv, lr);
  sgd_step(p.w_proj, g.w_proj, lr);
  sgd_step(p.w_ff1, g.w_ff1, lr);
  sgd_step(p.w_ff2, g.w_ff2, lr);
  sgd_step(p.ln1_gain, g.ln1_gain, lr);
  sgd_step(p.ln1_bias, g.ln1_bias, lr);
  sgd_step(p.ln2_gain, g.ln2_gain, lr);
  sgd_step(p.ln2_bias, g.ln2_bias, lr);
}

double sum_squares(const Matrix& m) {
  double s = 0.0;
  for (double v : m.values()) s += v * v;
  return s;
}

}  // namespace

ToyTrainResult train_toy(const ToyConfig& config) {
  const LayerDims dims = config.dims;
  GridSpec grid(config.q, config.d, config.allow_d_gt_q);
  const std::size_t rows = std::size_t(dims.batch) * dims.seq;
  const double denom = static_cast<double>(rows * dims.hidden);

  Rng x_rng = Rng::stream(config.seed, 0);
  Rng t_rng = Rng::stream(config.seed, 1);
  Matrix x = random_matrix(rows, dims.hidden, x_rng);
  Matrix target = random_matrix(rows, dims.hidden, t_rng);

  std::vector<BlockParams> serial_params;
  for (int l = 0; l < config.layers; ++l) {
    Rng prng = Rng::stream(config.seed, 100 + l);
    serial_params.push_back(random_block_params(dims.hidden, prng));
  }

  // Sharded copies start from the identical parameter values.
  std::vector<std::vector<BlockShard>> shards(grid.size());
  for (int l = 0; l < config.layers; ++l) {
    auto per_rank = shard_block_params(serial_params[l], grid);
    for (int r = 0; r < grid.size(); ++r) {
      shards[r].push_back(std::move(per_rank[r]));
    }
  }

  ActivationShard xs = shard_activation(x, dims, grid);
  ActivationShard ts = shard_activation(target, dims, grid);
  const RankDims rd = rank_dims(dims, grid);

  ToyTrainResult result;
  result.stats = CommStats(grid.size());

  for (int step = 0; step < config.steps; ++step) {
    // Serial step.
    {
      std::vector<ref::BlockCache> caches(config.layers);
      Matrix cur = x;
      for (int l = 0; l < config.layers; ++l) {
        cur = ref::transformer_block(cur, serial_params[l], dims, &caches[l]);
      }
      Matrix diff = sub(cur, target);
      const double loss = sum_squares(diff) / denom;
      Matrix dy = scale(diff, 2.0 / denom);
      std::vector<BlockGrads> grads(config.layers);
      for (int l = config.layers - 1; l >= 0; --l) {
        grads[l] = zero_grads(dims.hidden);
        dy = ref::transformer_block_backward(dy, serial_params[l], dims,
                                             caches[l], &grads[l]);
      }
      for (int l = 0; l < config.layers; ++l) {
        apply_grads(serial_params[l], grads[l], config.lr);
      }
      result.serial_loss.push_back(loss);
    }

    // Sharded step: the same program on every rank, parameters updated in
    // place so they persist across steps.
    {
      auto run = run_spmd(grid, [&](RankCtx& ctx) {
        auto& my = shards[ctx.rank()];
        std::vector<BlockCacheRank> caches(config.layers);
        Matrix cur = xs.data.block(ctx.rank());
        for (int l = 0; l < config.layers; ++l) {
          cur = block_forward_rank(ctx, cur, my[l], rd, &caches[l]);
        }
        Matrix diff = sub(cur, ts.data.block(ctx.rank()));
        const double total = global_sum_rank(ctx, sum_squares(diff));
        const double loss = total / denom;
        Matrix dy = scale(diff, 2.0 / denom);
        std::vector<BlockShardGrads> grads(config.layers);
        for (int l = config.layers - 1; l >= 0; --l) {
          grads[l] = zero_shard_grads(dims.hidden, grid);
          dy = block_backward_rank(ctx, dy, my[l], rd, caches[l], &grads[l]);
        }
        for (int l = 0; l < config.layers; ++l) {
          apply_shard_grads(my[l], grads[l], config.lr);
        }
        return loss;
      });
      result.stats += run.stats;
      result.dist_loss.push_back(run.outputs[0]);
    }

    result.max_divergence =
        std::max(result.max_divergence,
                 std::abs(result.serial_loss.back() - result.dist_loss.back()));
  }
  return result;
}

}  // namespace tsim
