// Copyright (c) 2026 the tesseract-sim developers.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tsim/grid.hpp"

namespace tsim {

// Oracle-equivalence sweep: every distributed algorithm and layer against
// its serial reference, over a set of grids and seeded random trials.
struct VerifyOptions {
  std::vector<GridSpec> grids;  // defaults to the standard six-grid set when empty
  int trials = 50;              // matmul algorithms
  int layer_trials = 20;        // transformer layers
  std::uint64_t seed = 0xC0FFEE;
  bool include_layers = true;
  // Test hook: corrupts one result so the failure path can be exercised.
  bool inject_fault = false;
};

std::vector<GridSpec> default_verify_grids();

struct VerifyCase {
  std::string name;
  std::string grid;
  int trials = 0;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

std::vector<VerifyCase> run_verify_suite(const VerifyOptions& options);
bool all_pass(const std::vector<VerifyCase>& cases);

}  // namespace tsim
