// Copyright (c) 2026 the tesseract-sim developers.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <compare>
#include <string>
#include <string_view>
#include <vector>

namespace tsim {

// Coordinate of one virtual processor in a [q, q, d] arrangement:
// i = row in [0, q), j = column in [0, q), k = depth layer in [0, d).
struct RankCoord {
  int i = 0;
  int j = 0;
  int k = 0;
  friend auto operator<=>(const RankCoord&, const RankCoord&) = default;
};

std::string to_string(const RankCoord& c);

// The three communicator families over the grid. A row group holds (i, k)
// fixed and varies j, a column group holds (j, k) fixed and varies i, a
// depth group holds (i, j) fixed and varies k. Each family partitions the
// grid; every rank is in exactly one group per family.
//
// Rows vary j because activations shard their hidden dimension over j, so
// "reduce over the row" is a reduction across the full hidden dimension.
enum class GroupKind { Row, Column, Depth };

const char* to_cstring(GroupKind kind);

struct CommGroup {
  GroupKind kind;
  std::vector<RankCoord> members;  // ascending slot order
};

// A [q, q, d] virtual processor grid with p = d * q * q ranks.
//
// Linearization is fixed as rank = k*q*q + i*q + j (depth-major, then row,
// then column) so traces and block layouts are reproducible.
//
// d <= q is enforced by default; pass allow_d_gt_q to lift it for
// experiments on deep arrangements.
class GridSpec {
public:
  GridSpec(int q, int d, bool allow_d_gt_q = false);

  int q() const { return q_; }
  int d() const { return d_; }
  int size() const { return d_ * q_ * q_; }  // p

  bool valid(const RankCoord& c) const;

  int rank_of(const RankCoord& c) const;
  RankCoord coord_of(int rank) const;

  // Global block-row index h = i + k*q of the row-sharded operand held at
  // coordinate c; h in [0, q*d).
  int block_row(const RankCoord& c) const;

  int group_size(GroupKind kind) const;
  int group_count(GroupKind kind) const;
  // Which group of the family contains c, and where c sits inside it.
  int group_index(const RankCoord& c, GroupKind kind) const;
  int slot_in_group(const RankCoord& c, GroupKind kind) const;
  RankCoord member_at(GroupKind kind, int group_index, int slot) const;

  CommGroup group_of(const RankCoord& c, GroupKind kind) const;

  // Parses the bracket form "[q,q,d]", e.g. "[4,4,2]". Errors carry the
  // offending position.
  static GridSpec parse(std::string_view text, bool allow_d_gt_q = false);
  std::string to_string() const;

  friend bool operator==(const GridSpec& a, const GridSpec& b) {
    return a.q_ == b.q_ && a.d_ == b.d_;
  }

private:
  int q_;
  int d_;
};

}  // namespace tsim
