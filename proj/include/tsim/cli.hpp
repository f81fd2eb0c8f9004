// Copyright (c) 2026 the tesseract-sim developers.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tsim/layers.hpp"

namespace tsim {

// Parsed/normalized invocation of one CLI command. A JSON config file may
// supply any of these by long option name; explicit flags win on conflict.
struct RunConfig {
  std::string command;

  std::vector<std::string> grids;          // "[q,q,d]" strings
  std::array<std::int64_t, 3> dims{16, 16, 16};  // a, b, c
  LayerDims model{4, 4, 8, 2};             // b, s, h, n
  int layers = 2;
  int steps = 50;
  double lr = 0.05;
  std::uint64_t seed = 42;
  int trials = 50;
  int layer_trials = 20;
  std::vector<std::string> algos;
  std::string out;            // empty = stdout
  std::string format = "json";
  bool meter_initial_replication = false;
  bool allow_d_gt_q = false;
  bool inject_fault = false;
  std::string trace_path;
  std::string matrix_a, matrix_b;

  std::vector<std::int64_t> p_list{4, 16, 64, 256};
  double bounds_n = 1024.0;
  double beta = 1.0;
  std::optional<double> fwd, bwd, batch;

  // Canonical echo of every field that affects the command, as a JSON
  // object string; identical configs render identical reports.
  std::string normalized() const;
};

struct CommandResult {
  int exit_code = 0;
  std::string report;
  std::string status;  // one-line human summary (stderr)
};

CommandResult cmd_verify(const RunConfig& config);
CommandResult cmd_bench(const RunConfig& config);
CommandResult cmd_cost(const RunConfig& config);
CommandResult cmd_train_toy(const RunConfig& config);

// Exit codes: 0 success, 1 verification failure, 2 configuration error.
int run_cli(int argc, const char* const* argv);

}  // namespace tsim
