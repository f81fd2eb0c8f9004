// Copyright (c) 2026 the tesseract-sim developers.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace tsim {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not line up (matmul, elementwise ops, reductions).
class ShapeError : public Error {
public:
  using Error::Error;
};

// A dimension is not divisible by the grid factor that shards it.
class DivisibilityError : public Error {
public:
  using Error::Error;
};

// Invalid grid geometry or coordinates.
class GridError : public Error {
public:
  using Error::Error;
};

// A simulated run failed: rank error, mismatched collective, deadlock.
class SpmdError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

}  // namespace tsim
