// Copyright (c) 2026 the tesseract-sim developers.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <type_traits>
#include <vector>

#include "tsim/error.hpp"
#include "tsim/grid.hpp"
#include "tsim/matrix.hpp"

namespace tsim {

enum class CollectiveKind { Broadcast, Reduce, AllReduce, Shift, PointToPoint };
constexpr int kCollectiveKindCount = 5;
const char* to_cstring(CollectiveKind kind);

// Message and element counters for the simulated runtime, under flat
// counting: a broadcast to a group of g ranks costs g-1 point-to-point
// transfers, a reduce costs g-1, an all-reduce is metered as reduce
// followed by broadcast (2*(g-1)), a shift costs one transfer per member.
// Elements are matrix entries, not bytes. Every element sent is received
// exactly once, so send and receive totals always agree.
class CommStats {
public:
  CommStats() = default;
  explicit CommStats(int rank_count);

  int rank_count() const { return static_cast<int>(sent_msgs_.size()); }

  std::uint64_t sent_messages(int rank) const { return sent_msgs_[rank]; }
  std::uint64_t sent_elements(int rank) const { return sent_elems_[rank]; }
  std::uint64_t received_messages(int rank) const { return recv_msgs_[rank]; }
  std::uint64_t received_elements(int rank) const { return recv_elems_[rank]; }

  std::uint64_t total_sent_messages() const;
  std::uint64_t total_sent_elements() const;
  std::uint64_t total_received_messages() const;
  std::uint64_t total_received_elements() const;

  struct KindStats {
    std::uint64_t messages = 0;
    std::uint64_t elements = 0;
    friend bool operator==(const KindStats&, const KindStats&) = default;
  };
  KindStats by_kind(CollectiveKind kind) const {
    return kind_[static_cast<int>(kind)];
  }

  void add_send(int rank, CollectiveKind kind, std::uint64_t messages,
                std::uint64_t elements);
  void add_recv(int rank, CollectiveKind kind, std::uint64_t messages,
                std::uint64_t elements);

  // Ranks must match; used to accumulate stats across phases of one run.
  CommStats& operator+=(const CommStats& other);

  friend bool operator==(const CommStats&, const CommStats&) = default;

private:
  std::vector<std::uint64_t> sent_msgs_, sent_elems_, recv_msgs_, recv_elems_;
  std::array<KindStats, kCollectiveKindCount> kind_{};
};

// One record per rank per call. root holds the root slot for broadcast and
// reduce, the displacement for shift, and the peer rank for point-to-point.
// bytes is the payload size of the call (elements * sizeof(double)).
struct TraceEvent {
  int rank = 0;
  std::uint64_t step = 0;
  CollectiveKind kind = CollectiveKind::Broadcast;
  GroupKind group = GroupKind::Row;
  int root = 0;
  std::uint64_t bytes = 0;
};

// Line-delimited, stable field order: "<rank>:<step> <kind> <group> <root>
// <bytes>". Point-to-point events print "-" for the group.
void write_trace(const std::vector<TraceEvent>& trace, std::ostream& os);

namespace detail {
class CollectiveEngine;
}

// Handle given to the per-rank procedure of an SPMD program. Collectives
// are rendezvous points: every member of the addressed group must invoke
// the same collective with the same signature in the same program order,
// or the run aborts with a diagnostic naming the divergent ranks.
class RankCtx {
public:
  const GridSpec& grid() const;
  const RankCoord& coord() const { return coord_; }
  int rank() const { return rank_; }
  std::uint64_t step() const { return step_; }

  int group_slot(GroupKind kind) const;
  int group_size(GroupKind kind) const;

  // Every member receives a copy of the root's payload. Non-root payloads
  // are ignored.
  Matrix broadcast(GroupKind kind, int root_slot, const Matrix& payload);

  // Elementwise sum over the group, delivered at the root slot; other
  // members receive an empty matrix. Contributions must share one shape.
  Matrix reduce(GroupKind kind, int root_slot, const Matrix& contribution);

  // Elementwise sum delivered at every member.
  Matrix all_reduce(GroupKind kind, const Matrix& contribution);

  // Cyclic rotation: the member at slot s receives the payload of slot
  // (s + displacement) mod group size. Displacement 0 is a no-op with zero
  // messages.
  Matrix shift(GroupKind kind, int displacement, const Matrix& payload);

  // Buffered point-to-point: send never blocks, recv blocks until a
  // matching message arrives.
  void send(const RankCoord& to, const Matrix& payload);
  Matrix recv(const RankCoord& from);

private:
  friend class detail::CollectiveEngine;
  friend class SpmdRunner;
  RankCtx(detail::CollectiveEngine* engine, RankCoord coord, int rank)
      : engine_(engine), coord_(coord), rank_(rank) {}

  detail::CollectiveEngine* engine_;
  RankCoord coord_;
  int rank_;
  std::uint64_t step_ = 0;
};

struct SpmdOptions {
  bool record_trace = false;
};

// Non-template execution core: spawns one thread per virtual rank, runs the
// body, joins, and rethrows the first failure as SpmdError with the failing
// coordinate and step index. Results are deterministic: collective sums are
// evaluated in slot order regardless of thread arrival order.
class SpmdRunner {
public:
  SpmdRunner(const GridSpec& grid, const SpmdOptions& options);
  ~SpmdRunner();

  SpmdRunner(const SpmdRunner&) = delete;
  SpmdRunner& operator=(const SpmdRunner&) = delete;

  void run(const std::function<void(RankCtx&)>& body);

  CommStats take_stats();
  std::vector<TraceEvent> take_trace();  // sorted by (rank, step)

private:
  GridSpec grid_;
  std::unique_ptr<detail::CollectiveEngine> engine_;
};

template <typename T>
struct SpmdResult {
  std::vector<T> outputs;  // indexed by linear rank
  CommStats stats;
  std::vector<TraceEvent> trace;

  const T& at(const GridSpec& grid, const RankCoord& c) const {
    return outputs[grid.rank_of(c)];
  }
};

// Runs one logical program per virtual rank. The program is identical
// logic parameterized by RankCtx::coord(); its return value becomes the
// rank's output. Two runs with identical inputs produce identical outputs,
// stats, and trace.
template <typename F>
auto run_spmd(const GridSpec& grid, F&& program, const SpmdOptions& options = {})
    -> SpmdResult<std::invoke_result_t<F&, RankCtx&>> {
  using T = std::invoke_result_t<F&, RankCtx&>;
  static_assert(!std::is_void_v<T>, "rank programs must return a value");
  SpmdResult<T> result;
  result.outputs.resize(grid.size());
  SpmdRunner runner(grid, options);
  runner.run([&](RankCtx& ctx) { result.outputs[ctx.rank()] = program(ctx); });
  result.stats = runner.take_stats();
  result.trace = runner.take_trace();
  return result;
}

}  // namespace tsim
