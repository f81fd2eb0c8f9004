// Copyright (c) 2026 the tesseract-sim developers.
// SPDX-License-Identifier: Apache-2.0

#include "tsim/costmodel.hpp"

#include <cmath>

#include "tsim/error.hpp"

namespace tsim {
namespace cost {

const char* to_cstring(Algo a) {
  switch (a) {
    case Algo::Cannon: return "cannon";
    case Algo::TwoFiveD: return "2.5d";
    case Algo::Tesseract: return "tesseract";
    case Algo::Megatron1D: return "megatron-1d";
    case Algo::Optimus2D: return "optimus-2d";
  }
  return "?";
}

namespace {

std::int64_t integer_root(std::int64_t value, int degree) {
  if (value < 1) return -1;
  std::int64_t r = static_cast<std::int64_t>(
      std::llround(std::pow(static_cast<double>(value), 1.0 / degree)));
  for (std::int64_t c = std::max<std::int64_t>(1, r - 2); c <= r + 2; ++c) {
    std::int64_t pow = 1;
    for (int i = 0; i < degree; ++i) pow *= c;
    if (pow == value) return c;
  }
  return -1;
}

}  // namespace

Bounds comm_bounds(Algo algo, double n, double p, double d) {
  if (n <= 0 || p < 1) {
    throw ConfigError("comm_bounds: need n > 0 and p >= 1");
  }
  switch (algo) {
    case Algo::Cannon:
      if (d > 1) {
        throw ConfigError("comm_bounds: Cannon has no depth; got d > 1");
      }
      return {n * n / std::sqrt(p), std::sqrt(p)};
    case Algo::TwoFiveD:
    case Algo::Tesseract:
      if (d < 1) throw ConfigError("comm_bounds: need d >= 1");
      return {n * n / std::sqrt(d * p), std::sqrt(p) / (d * std::sqrt(d))};
    default:
      throw ConfigError(std::string("comm_bounds: not defined for ") +
                        to_cstring(algo));
  }
}

bool transmission_count_compatible(Algo algo, std::int64_t p) {
  switch (algo) {
    case Algo::Cannon: return integer_root(p, 2) > 0;
    case Algo::TwoFiveD:
    case Algo::Tesseract: return integer_root(p, 3) > 0;
    default: return false;
  }
}

double transmission_count_real(Algo algo, double p) {
  if (p < 1) throw ConfigError("transmission_count: need p >= 1");
  switch (algo) {
    case Algo::Cannon:
      return 2.0 * std::pow(p, 1.5) - 2.0 * std::sqrt(p);
    case Algo::TwoFiveD:
      return 2.0 * p - 2.0 * std::cbrt(p);
    case Algo::Tesseract:
      return 2.0 * std::cbrt(p) * std::cbrt(p);
    default:
      throw ConfigError(std::string("transmission_count: not defined for ") +
                        to_cstring(algo));
  }
}

double transmission_count(Algo algo, std::int64_t p) {
  switch (algo) {
    case Algo::Cannon: {
      const std::int64_t q = integer_root(p, 2);
      if (q < 0) {
        throw ConfigError("transmission_count: Cannon needs a perfect square "
                          "p, got " + std::to_string(p));
      }
      // 2*p^(3/2) - 2*p^(1/2) = 2*q^3 - 2*q, exactly.
      return 2.0 * double(q) * double(q) * double(q) - 2.0 * double(q);
    }
    case Algo::TwoFiveD: {
      const std::int64_t r = integer_root(p, 3);
      if (r < 0) {
        throw ConfigError("transmission_count: 2.5D needs a perfect cube p, "
                          "got " + std::to_string(p));
      }
      return 2.0 * double(p) - 2.0 * double(r);
    }
    case Algo::Tesseract: {
      const std::int64_t r = integer_root(p, 3);
      if (r < 0) {
        throw ConfigError("transmission_count: the d = q arrangement needs a "
                          "perfect cube p, got " + std::to_string(p));
      }
      return 2.0 * double(r) * double(r);
    }
    default:
      throw ConfigError(std::string("transmission_count: not defined for ") +
                        to_cstring(algo));
  }
}

double memory_per_proc(Algo algo, double a, double b, double c, double p,
                       double d) {
  if (a <= 0 || b <= 0 || c <= 0 || p < 1 || d < 1) {
    throw ConfigError("memory_per_proc: need positive shapes, p >= 1, d >= 1");
  }
  switch (algo) {
    case Algo::Tesseract:
      return a * b / p + b * c * d / p + a * c / p;
    case Algo::Megatron1D:
      return a * b + b * c / p + a * c / p;
    default:
      throw ConfigError(std::string("memory_per_proc: not defined for ") +
                        to_cstring(algo));
  }
}

IsoResult comm_time_and_isoefficiency(Algo algo, double beta, double b,
                                      double s, double h, double p, double q) {
  if (p < 1) throw ConfigError("comm_time: need p >= 1");
  IsoResult r;
  switch (algo) {
    case Algo::Megatron1D:
      r.comm_time = 2.0 * beta * (p - 1.0) * b * s * h / p;
      r.isoefficiency = p * p * p;
      r.note = "iso ~ p^3";
      return r;
    case Algo::Optimus2D:
      r.comm_time = 2.0 * beta * b * s * h * h * q * std::log(p) / p;
      r.isoefficiency = std::pow(std::sqrt(p) * std::log(p), 3.0);
      r.note = "iso ~ (sqrt(p)*log p)^3";
      return r;
    case Algo::Tesseract:
      r.note = "measured-only: broadcast/reduce traffic comes from the "
               "runtime meter, no closed form";
      return r;
    default:
      throw ConfigError(std::string("comm_time: not defined for ") +
                        to_cstring(algo));
  }
}

TableMetrics table_metrics(double forward_s, double backward_s,
                           std::optional<double> batch) {
  if (forward_s <= 0 || backward_s < 0) {
    throw ConfigError("table_metrics: need forward > 0 and backward >= 0");
  }
  TableMetrics m;
  m.throughput_per_iter = 1.0 / (forward_s + backward_s);
  m.inference_per_iter = 1.0 / forward_s;
  if (batch) {
    if (*batch <= 0) throw ConfigError("table_metrics: need batch > 0");
    m.throughput_batch_scaled = *batch / (forward_s + backward_s);
    m.inference_batch_scaled = *batch / forward_s;
  }
  return m;
}

}  // namespace cost
}  // namespace tsim
