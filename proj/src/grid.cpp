// Copyright (c) 2026 the tesseract-sim developers.
// SPDX-License-Identifier: Apache-2.0

#include "tsim/grid.hpp"

#include <charconv>

#include "tsim/error.hpp"

namespace tsim {

std::string to_string(const RankCoord& c) {
  return "(" + std::to_string(c.i) + "," + std::to_string(c.j) + "," +
         std::to_string(c.k) + ")";
}

const char* to_cstring(GroupKind kind) {
  switch (kind) {
    case GroupKind::Row: return "row";
    case GroupKind::Column: return "col";
    case GroupKind::Depth: return "depth";
  }
  return "?";
}

GridSpec::GridSpec(int q, int d, bool allow_d_gt_q) : q_(q), d_(d) {
  if (q < 1 || d < 1) {
    throw GridError("grid [" + std::to_string(q) + "," + std::to_string(q) +
                    "," + std::to_string(d) + "]: q and d must be >= 1");
  }
  if (d > q && !allow_d_gt_q) {
    throw GridError("grid [" + std::to_string(q) + "," + std::to_string(q) +
                    "," + std::to_string(d) +
                    "]: depth d exceeds dimension q (pass allow_d_gt_q to "
                    "permit)");
  }
}

bool GridSpec::valid(const RankCoord& c) const {
  return c.i >= 0 && c.i < q_ && c.j >= 0 && c.j < q_ && c.k >= 0 && c.k < d_;
}

int GridSpec::rank_of(const RankCoord& c) const {
  if (!valid(c)) {
    throw GridError("coordinate " + tsim::to_string(c) +
                    " out of range for grid " + to_string());
  }
  return c.k * q_ * q_ + c.i * q_ + c.j;
}

RankCoord GridSpec::coord_of(int rank) const {
  if (rank < 0 || rank >= size()) {
    throw GridError("rank " + std::to_string(rank) + " out of range for grid " +
                    to_string());
  }
  RankCoord c;
  c.k = rank / (q_ * q_);
  c.i = (rank / q_) % q_;
  c.j = rank % q_;
  return c;
}

int GridSpec::block_row(const RankCoord& c) const {
  if (!valid(c)) {
    throw GridError("coordinate " + tsim::to_string(c) +
                    " out of range for grid " + to_string());
  }
  return c.i + c.k * q_;
}

int GridSpec::group_size(GroupKind kind) const {
  return kind == GroupKind::Depth ? d_ : q_;
}

int GridSpec::group_count(GroupKind kind) const {
  return kind == GroupKind::Depth ? q_ * q_ : q_ * d_;
}

int GridSpec::group_index(const RankCoord& c, GroupKind kind) const {
  switch (kind) {
    case GroupKind::Row: return c.k * q_ + c.i;
    case GroupKind::Column: return c.k * q_ + c.j;
    case GroupKind::Depth: return c.i * q_ + c.j;
  }
  return 0;
}

int GridSpec::slot_in_group(const RankCoord& c, GroupKind kind) const {
  switch (kind) {
    case GroupKind::Row: return c.j;
    case GroupKind::Column: return c.i;
    case GroupKind::Depth: return c.k;
  }
  return 0;
}

RankCoord GridSpec::member_at(GroupKind kind, int group_index, int slot) const {
  RankCoord c;
  switch (kind) {
    case GroupKind::Row:
      c = {group_index % q_, slot, group_index / q_};
      break;
    case GroupKind::Column:
      c = {slot, group_index % q_, group_index / q_};
      break;
    case GroupKind::Depth:
      c = {group_index / q_, group_index % q_, slot};
      break;
  }
  if (!valid(c)) {
    throw GridError("group member (" + std::string(to_cstring(kind)) + "," +
                    std::to_string(group_index) + "," + std::to_string(slot) +
                    ") out of range for grid " + to_string());
  }
  return c;
}

CommGroup GridSpec::group_of(const RankCoord& c, GroupKind kind) const {
  if (!valid(c)) {
    throw GridError("coordinate " + tsim::to_string(c) +
                    " out of range for grid " + to_string());
  }
  CommGroup g{kind, {}};
  const int gi = group_index(c, kind);
  const int n = group_size(kind);
  g.members.reserve(n);
  for (int slot = 0; slot < n; ++slot) {
    g.members.push_back(member_at(kind, gi, slot));
  }
  return g;
}

GridSpec GridSpec::parse(std::string_view text, bool allow_d_gt_q) {
  auto fail = [&text](std::size_t pos, const std::string& what) -> GridSpec {
    throw ConfigError("grid '" + std::string(text) + "': " + what +
                      " at position " + std::to_string(pos));
  };
  std::size_t pos = 0;
  auto expect = [&](char c) {
    if (pos >= text.size() || text[pos] != c) {
      fail(pos, std::string("expected '") + c + "'");
    }
    ++pos;
  };
  auto number = [&]() -> int {
    int value = 0;
    auto [next, ec] =
        std::from_chars(text.data() + pos, text.data() + text.size(), value);
    if (ec != std::errc() || next == text.data() + pos) {
      fail(pos, "expected an integer");
    }
    pos = static_cast<std::size_t>(next - text.data());
    return value;
  };
  expect('[');
  const int q1 = number();
  expect(',');
  std::size_t q2_pos = pos;
  const int q2 = number();
  expect(',');
  const int d = number();
  expect(']');
  if (pos != text.size()) fail(pos, "trailing characters");
  if (q1 != q2) {
    fail(q2_pos, "the first two extents must match (got " +
                     std::to_string(q1) + " and " + std::to_string(q2) + ")");
  }
  return GridSpec(q1, d, allow_d_gt_q);
}

std::string GridSpec::to_string() const {
  return "[" + std::to_string(q_) + "," + std::to_string(q_) + "," +
         std::to_string(d_) + "]";
}

}  // namespace tsim
