// Copyright (c) 2026 the tesseract-sim developers.
// SPDX-License-Identifier: Apache-2.0

#include "tsim/verify.hpp"

#include <algorithm>
#include <cmath>

#include "tsim/algorithms.hpp"
#include "tsim/layers.hpp"
#include "tsim/matrix.hpp"
#include "tsim/rng.hpp"

namespace tsim {

std::vector<GridSpec> default_verify_grids() {
  return {GridSpec(1, 1), GridSpec(2, 1), GridSpec(2, 2),
          GridSpec(3, 1), GridSpec(3, 3), GridSpec(4, 2)};
}

namespace {

constexpr double kMatmulTol = 1e-10;   // relative
constexpr double kLayerTol = 1e-8;     // relative
constexpr double kLayernormTol = 1e-9; // absolute
constexpr double kBlockTol = 1e-7;     // relative

struct CaseAccum {
  double max_err = 0.0;
  int trials = 0;
  void feed(double err) {
    max_err = std::max(max_err, err);
    ++trials;
  }
};

std::uint64_t trial_seed(std::uint64_t base, int grid_idx, int algo_idx,
                         int trial) {
  return base + 1000003ULL * grid_idx + 1009ULL * algo_idx +
         static_cast<std::uint64_t>(trial);
}

}  // namespace

std::vector<VerifyCase> run_verify_suite(const VerifyOptions& options) {
  std::vector<GridSpec> grids =
      options.grids.empty() ? default_verify_grids() : options.grids;
  std::vector<VerifyCase> cases;

  auto push_case = [&cases](const std::string& name, const GridSpec& g,
                            const CaseAccum& acc, double tol) {
    cases.push_back({name, g.to_string(), acc.trials, acc.max_err, tol,
                     acc.max_err <= tol});
  };

  for (std::size_t gi = 0; gi < grids.size(); ++gi) {
    const GridSpec& grid = grids[gi];
    const int q = grid.q();
    const int d = grid.d();
    const int p = grid.size();

    // Matmul dims: the row-sharded operand needs rows % (q*d) == 0, all
    // other extents % q == 0.
    const std::size_t m = std::size_t(2) * q * d;
    const std::size_t n = std::size_t(2) * q;
    const std::size_t r = std::size_t(3) * q;

    CaseAccum cannon, summa, tess_nn, tess_nt, tess_tn, megatron;
    for (int t = 0; t < options.trials; ++t) {
      Rng ra = Rng::stream(trial_seed(options.seed, gi, 1, t), 0);
      Rng rb = Rng::stream(trial_seed(options.seed, gi, 1, t), 1);

      {  // Cannon and SUMMA run on the [q, q] mesh of this grid.
        Matrix a = random_matrix(std::size_t(2) * q, std::size_t(3) * q, ra);
        Matrix b = random_matrix(std::size_t(3) * q, std::size_t(2) * q, rb);
        Matrix want = matmul_serial(a, b);
        cannon.feed(rel_diff(cannon_matmul(a, b, q).value, want));
        summa.feed(rel_diff(summa_matmul(a, b, q).value, want));
      }
      {  // NN on the full [q, q, d] grid.
        Matrix a = random_matrix(m, n, ra);
        Matrix b = random_matrix(n, r, rb);
        Matrix got = tesseract_matmul(a, b, grid, MatmulVariant::NN).value;
        if (options.inject_fault && gi == 0 && t == 0) {
          got(0, 0) += 1e-3;
        }
        tess_nn.feed(rel_diff(got, matmul_serial(a, b)));
      }
      {  // NT: A [m, n], B [r, n], C = A*B^T.
        Matrix a = random_matrix(m, n, ra);
        Matrix b = random_matrix(r, n, rb);
        Matrix want = matmul_serial(a, transpose(b));
        tess_nt.feed(
            rel_diff(tesseract_matmul(a, b, grid, MatmulVariant::NT).value,
                     want));
      }
      {  // TN: A [m, n], B [m, r], C = A^T*B.
        Matrix a = random_matrix(m, n, ra);
        Matrix b = random_matrix(m, r, rb);
        Matrix want = matmul_serial(transpose(a), b);
        tess_tn.feed(
            rel_diff(tesseract_matmul(a, b, grid, MatmulVariant::TN).value,
                     want));
      }
      {  // 1-D split over p ranks.
        Matrix x = random_matrix(3, 5, ra);
        Matrix w1 = random_matrix(5, std::size_t(2) * p, rb);
        Matrix w2 = random_matrix(std::size_t(2) * p, 5, rb);
        Matrix want = matmul_serial(matmul_serial(x, w1), w2);
        megatron.feed(rel_diff(megatron_1d_linear(x, w1, w2, p).value, want));
      }
    }
    push_case("cannon", grid, cannon, kMatmulTol);
    push_case("summa", grid, summa, kMatmulTol);
    push_case("tesseract-nn", grid, tess_nn, kMatmulTol);
    push_case("tesseract-nt", grid, tess_nt, kMatmulTol);
    push_case("tesseract-tn", grid, tess_tn, kMatmulTol);
    push_case("megatron-1d", grid, megatron, kMatmulTol);

    if (!options.include_layers) continue;

    // Layer dims: heads = 2q keeps two heads per rank, hidden = 8q gives
    // head size 4.
    LayerDims dims{2 * d * q, 3, 8 * q, 2 * q};
    const std::size_t rows = std::size_t(dims.batch) * dims.seq;

    CaseAccum ff, attn, ln, bias, block;
    for (int t = 0; t < options.layer_trials; ++t) {
      Rng rx = Rng::stream(trial_seed(options.seed, gi, 2, t), 0);
      Rng rp = Rng::stream(trial_seed(options.seed, gi, 2, t), 100);
      Matrix x = random_matrix(rows, dims.hidden, rx);
      BlockParams params = random_block_params(dims.hidden, rp);
      ActivationShard xs = shard_activation(x, dims, grid);

      ff.feed(rel_diff(
          combine_activation(feedforward_forward(xs, params, grid)),
          ref::feedforward(x, params)));
      attn.feed(rel_diff(
          combine_activation(attention_forward(xs, params, grid)),
          ref::attention(x, params, dims)));
      // Layernorm is held to an absolute tolerance.
      ln.feed(max_abs_diff(
          combine_activation(layernorm_forward(xs, params.ln1_gain,
                                               params.ln1_bias, params.eps,
                                               grid)),
          ref::layernorm(x, params.ln1_gain, params.ln1_bias, params.eps)));
      bias.feed(rel_diff(
          combine_activation(bias_add_forward(xs, params.ln1_bias, grid)),
          ref::bias_add(x, params.ln1_bias)));
      block.feed(rel_diff(
          combine_activation(transformer_block_forward(xs, params, grid)),
          ref::transformer_block(x, params, dims)));
    }
    push_case("layer-feedforward", grid, ff, kLayerTol);
    push_case("layer-attention", grid, attn, kLayerTol);
    push_case("layer-layernorm", grid, ln, kLayernormTol);
    push_case("layer-bias-add", grid, bias, kLayerTol);
    push_case("layer-block", grid, block, kBlockTol);
  }
  return cases;
}

bool all_pass(const std::vector<VerifyCase>& cases) {
  return std::all_of(cases.begin(), cases.end(),
                     [](const VerifyCase& c) { return c.pass; });
}

}  // namespace tsim
