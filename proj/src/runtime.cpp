// Copyright (c) 2026 the tesseract-sim developers.
// SPDX-License-Identifier: Apache-2.0

#include "tsim/runtime.hpp"

#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>
#include <utility>

namespace tsim {

const char* to_cstring(CollectiveKind kind) {
  switch (kind) {
    case CollectiveKind::Broadcast: return "broadcast";
    case CollectiveKind::Reduce: return "reduce";
    case CollectiveKind::AllReduce: return "all_reduce";
    case CollectiveKind::Shift: return "shift";
    case CollectiveKind::PointToPoint: return "p2p";
  }
  return "?";
}

CommStats::CommStats(int rank_count)
    : sent_msgs_(rank_count, 0),
      sent_elems_(rank_count, 0),
      recv_msgs_(rank_count, 0),
      recv_elems_(rank_count, 0) {}

std::uint64_t CommStats::total_sent_messages() const {
  return std::accumulate(sent_msgs_.begin(), sent_msgs_.end(), std::uint64_t{0});
}
std::uint64_t CommStats::total_sent_elements() const {
  return std::accumulate(sent_elems_.begin(), sent_elems_.end(),
                         std::uint64_t{0});
}
std::uint64_t CommStats::total_received_messages() const {
  return std::accumulate(recv_msgs_.begin(), recv_msgs_.end(), std::uint64_t{0});
}
std::uint64_t CommStats::total_received_elements() const {
  return std::accumulate(recv_elems_.begin(), recv_elems_.end(),
                         std::uint64_t{0});
}

void CommStats::add_send(int rank, CollectiveKind kind, std::uint64_t messages,
                         std::uint64_t elements) {
  sent_msgs_[rank] += messages;
  sent_elems_[rank] += elements;
  auto& ks = kind_[static_cast<int>(kind)];
  ks.messages += messages;
  ks.elements += elements;
}

void CommStats::add_recv(int rank, CollectiveKind kind, std::uint64_t messages,
                         std::uint64_t elements) {
  (void)kind;  // kind breakdown counts each transfer once, on the send side
  recv_msgs_[rank] += messages;
  recv_elems_[rank] += elements;
}

CommStats& CommStats::operator+=(const CommStats& other) {
  if (rank_count() == 0) {
    *this = other;
    return *this;
  }
  if (other.rank_count() == 0) return *this;
  if (other.rank_count() != rank_count()) {
    throw SpmdError("CommStats +=: rank counts differ (" +
                    std::to_string(rank_count()) + " vs " +
                    std::to_string(other.rank_count()) + ")");
  }
  for (int r = 0; r < rank_count(); ++r) {
    sent_msgs_[r] += other.sent_msgs_[r];
    sent_elems_[r] += other.sent_elems_[r];
    recv_msgs_[r] += other.recv_msgs_[r];
    recv_elems_[r] += other.recv_elems_[r];
  }
  for (int k = 0; k < kCollectiveKindCount; ++k) {
    kind_[k].messages += other.kind_[k].messages;
    kind_[k].elements += other.kind_[k].elements;
  }
  return *this;
}

void write_trace(const std::vector<TraceEvent>& trace, std::ostream& os) {
  for (const TraceEvent& e : trace) {
    os << e.rank << ':' << e.step << ' ' << to_cstring(e.kind) << ' '
       << (e.kind == CollectiveKind::PointToPoint ? "-" : to_cstring(e.group))
       << ' ' << e.root << ' ' << e.bytes << '\n';
  }
}

namespace detail {

namespace {

// Unwinds a rank thread after the engine has recorded a failure.
struct SpmdAbort {};

struct CallSignature {
  CollectiveKind kind = CollectiveKind::Broadcast;
  int root = 0;  // root slot; displacement for shift
  std::size_t rows = 0, cols = 0;  // payload shape where it must agree
  friend bool operator==(const CallSignature&, const CallSignature&) = default;
};

std::string describe(const CallSignature& sig) {
  std::ostringstream os;
  os << to_cstring(sig.kind) << "(root=" << sig.root;
  if (sig.rows || sig.cols) os << ", shape=" << sig.rows << "x" << sig.cols;
  os << ")";
  return os.str();
}

}  // namespace

class CollectiveEngine {
public:
  CollectiveEngine(const GridSpec& grid, bool record_trace)
      : grid_(grid),
        stats_(grid.size()),
        trace_(grid.size()),
        waiting_(grid.size()),
        record_trace_(record_trace) {
    for (int k = 0; k < 3; ++k) {
      rounds_[k].resize(grid_.group_count(static_cast<GroupKind>(k)));
    }
  }

  const GridSpec& grid() const { return grid_; }

  Matrix collective(RankCtx& ctx, GroupKind gk, CallSignature sig,
                    Matrix payload);
  void send(RankCtx& ctx, const RankCoord& to, Matrix payload);
  Matrix recv(RankCtx& ctx, const RankCoord& from);

  void rank_finished(int rank);
  void rank_failed(int rank, std::uint64_t step, const std::string& what);

  bool failed() const { return failed_; }
  const std::string& failure() const { return failure_; }

  CommStats take_stats() { return std::move(stats_); }
  std::vector<TraceEvent> take_trace() {
    std::vector<TraceEvent> all;
    for (auto& per_rank : trace_) {
      all.insert(all.end(), per_rank.begin(), per_rank.end());
      per_rank.clear();
    }
    return all;  // per-rank vectors are step-ordered; ranks concatenated
  }

private:
  struct GroupRound {
    std::uint64_t round = 0;  // completed-call sequence number
    int arrived = 0;
    int departed = 0;
    bool ready = false;
    CallSignature sig;
    int sig_setter = -1;  // rank that set the signature
    std::vector<Matrix> contrib;
    std::vector<Matrix> results;
    std::vector<std::uint64_t> steps;
  };

  struct Waiting {
    bool active = false;
    bool is_recv = false;
    GroupKind kind = GroupKind::Row;
    int group_index = 0;
    std::uint64_t round = 0;
    std::pair<int, int> mailbox{0, 0};
    std::uint64_t step = 0;
    CallSignature sig;
  };

  static int idx(GroupKind k) { return static_cast<int>(k); }

  void throw_if_failed_locked() {
    if (failed_) throw SpmdAbort{};
  }

  [[noreturn]] void fail_locked(std::string message) {
    if (!failed_) {
      failed_ = true;
      failure_ = std::move(message);
    }
    cv_.notify_all();
    throw SpmdAbort{};
  }

  void complete_round_locked(GroupKind gk, int gi, GroupRound& gr);
  void deadlock_check_locked();
  void record_event_locked(int rank, std::uint64_t step, CollectiveKind kind,
                           GroupKind group, int root, std::uint64_t elements) {
    if (record_trace_) {
      trace_[rank].push_back(
          {rank, step, kind, group, root, elements * sizeof(double)});
    }
  }

  std::mutex mu_;
  std::condition_variable cv_;
  GridSpec grid_;
  std::array<std::vector<GroupRound>, 3> rounds_;
  std::map<std::pair<int, int>, std::deque<Matrix>> mailboxes_;
  CommStats stats_;
  std::vector<std::vector<TraceEvent>> trace_;
  std::vector<Waiting> waiting_;
  bool record_trace_ = false;
  int finished_ = 0;
  bool failed_ = false;
  std::string failure_;
};

Matrix CollectiveEngine::collective(RankCtx& ctx, GroupKind gk,
                                    CallSignature sig, Matrix payload) {
  const int rank = ctx.rank();
  const std::uint64_t step = ctx.step_++;
  const int gi = grid_.group_index(ctx.coord(), gk);
  const int slot = grid_.slot_in_group(ctx.coord(), gk);
  const int gsize = grid_.group_size(gk);

  std::unique_lock lk(mu_);
  GroupRound& gr = rounds_[idx(gk)][gi];
  // A member may race ahead into the next call on this group while the
  // previous round drains; wait for the round to reset first.
  cv_.wait(lk, [&] { return failed_ || !gr.ready; });
  throw_if_failed_locked();

  if (gr.arrived == 0) {
    gr.sig = sig;
    gr.sig_setter = rank;
    gr.contrib.assign(gsize, Matrix());
    gr.steps.assign(gsize, 0);
  } else if (!(sig == gr.sig)) {
    fail_locked("mismatched collective on " +
                std::string(to_cstring(gk)) + " group " + std::to_string(gi) +
                ", call #" + std::to_string(gr.round) + ": rank " +
                to_string(ctx.coord()) + " invoked " + describe(sig) +
                " but rank " + to_string(grid_.coord_of(gr.sig_setter)) +
                " invoked " + describe(gr.sig));
  }
  gr.contrib[slot] = std::move(payload);
  gr.steps[slot] = step;
  ++gr.arrived;
  const std::uint64_t my_round = gr.round;

  if (gr.arrived == gsize) {
    complete_round_locked(gk, gi, gr);
    cv_.notify_all();
  } else {
    waiting_[rank] = {true, false, gk, gi, my_round, {0, 0}, step, sig};
    deadlock_check_locked();
    cv_.wait(lk, [&] { return failed_ || (gr.ready && gr.round == my_round); });
    waiting_[rank].active = false;
    throw_if_failed_locked();
  }

  Matrix out = std::move(gr.results[slot]);
  ++gr.departed;
  if (gr.departed == gsize) {
    ++gr.round;
    gr.arrived = 0;
    gr.departed = 0;
    gr.ready = false;
    gr.contrib.clear();
    gr.results.clear();
    cv_.notify_all();
  }
  return out;
}

void CollectiveEngine::complete_round_locked(GroupKind gk, int gi,
                                             GroupRound& gr) {
  const int gsize = static_cast<int>(gr.contrib.size());
  auto member_rank = [&](int slot) {
    return grid_.rank_of(grid_.member_at(gk, gi, slot));
  };

  switch (gr.sig.kind) {
    case CollectiveKind::Broadcast: {
      const int root = gr.sig.root;
      const Matrix& src = gr.contrib[root];
      const std::uint64_t numel = src.size();
      gr.results.assign(gsize, src);
      if (gsize > 1) {
        stats_.add_send(member_rank(root), CollectiveKind::Broadcast,
                        gsize - 1, std::uint64_t(gsize - 1) * numel);
        for (int s = 0; s < gsize; ++s) {
          if (s != root) {
            stats_.add_recv(member_rank(s), CollectiveKind::Broadcast, 1,
                            numel);
          }
        }
      }
      for (int s = 0; s < gsize; ++s) {
        record_event_locked(member_rank(s), gr.steps[s],
                            CollectiveKind::Broadcast, gk, root, numel);
      }
      break;
    }
    case CollectiveKind::Reduce:
    case CollectiveKind::AllReduce: {
      // Fixed slot-ascending summation order keeps results deterministic.
      Matrix sum = gr.contrib[0];
      for (int s = 1; s < gsize; ++s) sum = add(sum, gr.contrib[s]);
      const std::uint64_t numel = sum.size();
      const bool all = gr.sig.kind == CollectiveKind::AllReduce;
      const int root = all ? 0 : gr.sig.root;
      gr.results.assign(gsize, Matrix());
      if (all) {
        for (int s = 0; s < gsize; ++s) gr.results[s] = sum;
      } else {
        gr.results[root] = std::move(sum);
      }
      if (gsize > 1) {
        for (int s = 0; s < gsize; ++s) {
          if (s == root) {
            // Reduce leg: root receives g-1 contributions. The all-reduce
            // adds a broadcast leg from the root.
            stats_.add_recv(member_rank(s), gr.sig.kind, gsize - 1,
                            std::uint64_t(gsize - 1) * numel);
            if (all) {
              stats_.add_send(member_rank(s), gr.sig.kind, gsize - 1,
                              std::uint64_t(gsize - 1) * numel);
            }
          } else {
            stats_.add_send(member_rank(s), gr.sig.kind, 1, numel);
            if (all) stats_.add_recv(member_rank(s), gr.sig.kind, 1, numel);
          }
        }
      }
      for (int s = 0; s < gsize; ++s) {
        record_event_locked(member_rank(s), gr.steps[s], gr.sig.kind, gk, root,
                            numel);
      }
      break;
    }
    case CollectiveKind::Shift: {
      const int disp = ((gr.sig.root % gsize) + gsize) % gsize;
      gr.results.assign(gsize, Matrix());
      if (disp == 0) {
        for (int s = 0; s < gsize; ++s) {
          gr.results[s] = std::move(gr.contrib[s]);
        }
      } else {
        for (int s = 0; s < gsize; ++s) {
          gr.results[s] = gr.contrib[(s + disp) % gsize];
          stats_.add_send(member_rank(s), CollectiveKind::Shift, 1,
                          gr.contrib[s].size());
          stats_.add_recv(member_rank(s), CollectiveKind::Shift, 1,
                          gr.results[s].size());
        }
      }
      for (int s = 0; s < gsize; ++s) {
        record_event_locked(member_rank(s), gr.steps[s], CollectiveKind::Shift,
                            gk, gr.sig.root,
                            disp == 0 ? 0 : gr.results[s].size());
      }
      break;
    }
    case CollectiveKind::PointToPoint:
      break;  // not a group rendezvous
  }
  gr.ready = true;
}

void CollectiveEngine::send(RankCtx& ctx, const RankCoord& to, Matrix payload) {
  const int dst = grid_.rank_of(to);
  const int src = ctx.rank();
  const std::uint64_t step = ctx.step_++;
  std::unique_lock lk(mu_);
  throw_if_failed_locked();
  stats_.add_send(src, CollectiveKind::PointToPoint, 1, payload.size());
  record_event_locked(src, step, CollectiveKind::PointToPoint, GroupKind::Row,
                      dst, payload.size());
  mailboxes_[{src, dst}].push_back(std::move(payload));
  cv_.notify_all();
}

Matrix CollectiveEngine::recv(RankCtx& ctx, const RankCoord& from) {
  const int src = grid_.rank_of(from);
  const int dst = ctx.rank();
  const std::uint64_t step = ctx.step_++;
  std::unique_lock lk(mu_);
  throw_if_failed_locked();
  auto& box = mailboxes_[{src, dst}];
  if (box.empty()) {
    waiting_[dst] = {true, true, GroupKind::Row, 0, 0, {src, dst}, step, {}};
    deadlock_check_locked();
    cv_.wait(lk, [&] { return failed_ || !box.empty(); });
    waiting_[dst].active = false;
    throw_if_failed_locked();
  }
  Matrix out = std::move(box.front());
  box.pop_front();
  stats_.add_recv(dst, CollectiveKind::PointToPoint, 1, out.size());
  record_event_locked(dst, step, CollectiveKind::PointToPoint, GroupKind::Row,
                      src, out.size());
  return out;
}

void CollectiveEngine::rank_finished(int rank) {
  (void)rank;
  std::unique_lock lk(mu_);
  ++finished_;
  if (!failed_) {
    try {
      deadlock_check_locked();
    } catch (const SpmdAbort&) {
      // Failure state is set; remaining ranks observe it on wake.
    }
  }
}

void CollectiveEngine::rank_failed(int rank, std::uint64_t step,
                                   const std::string& what) {
  std::unique_lock lk(mu_);
  if (!failed_) {
    failed_ = true;
    failure_ = "rank " + to_string(grid_.coord_of(rank)) + " failed at step " +
               std::to_string(step) + ": " + what;
  }
  cv_.notify_all();
}

void CollectiveEngine::deadlock_check_locked() {
  int blocked = 0;
  for (const Waiting& w : waiting_) {
    if (w.active) ++blocked;
  }
  if (blocked == 0 || blocked + finished_ < grid_.size()) return;

  // Everyone is blocked or finished. If any waiter can still be satisfied
  // (its round is ready or its mailbox has mail), progress is possible.
  for (int r = 0; r < grid_.size(); ++r) {
    const Waiting& w = waiting_[r];
    if (!w.active) continue;
    if (w.is_recv) {
      auto it = mailboxes_.find(w.mailbox);
      if (it != mailboxes_.end() && !it->second.empty()) return;
    } else {
      const GroupRound& gr = rounds_[idx(w.kind)][w.group_index];
      if (gr.ready && gr.round == w.round) return;
    }
  }

  std::ostringstream os;
  os << "deadlock: mismatched participation; divergent ranks:";
  for (int r = 0; r < grid_.size(); ++r) {
    const Waiting& w = waiting_[r];
    if (!w.active) continue;
    os << " " << to_string(grid_.coord_of(r)) << " waits at step " << w.step
       << " on ";
    if (w.is_recv) {
      os << "recv from " << to_string(grid_.coord_of(w.mailbox.first));
    } else {
      os << describe(w.sig) << " in " << to_cstring(w.kind) << " group "
         << w.group_index;
    }
    os << ";";
  }
  if (finished_ > 0) os << " " << finished_ << " rank(s) already finished";
  fail_locked(os.str());
}

}  // namespace detail

const GridSpec& RankCtx::grid() const { return engine_->grid(); }

int RankCtx::group_slot(GroupKind kind) const {
  return engine_->grid().slot_in_group(coord_, kind);
}

int RankCtx::group_size(GroupKind kind) const {
  return engine_->grid().group_size(kind);
}

Matrix RankCtx::broadcast(GroupKind kind, int root_slot, const Matrix& payload) {
  if (root_slot < 0 || root_slot >= group_size(kind)) {
    throw SpmdError("broadcast: root slot " + std::to_string(root_slot) +
                    " out of range for " + to_cstring(kind) + " group of " +
                    std::to_string(group_size(kind)));
  }
  return engine_->collective(
      *this, kind, {CollectiveKind::Broadcast, root_slot, 0, 0}, payload);
}

Matrix RankCtx::reduce(GroupKind kind, int root_slot,
                       const Matrix& contribution) {
  if (root_slot < 0 || root_slot >= group_size(kind)) {
    throw SpmdError("reduce: root slot " + std::to_string(root_slot) +
                    " out of range for " + to_cstring(kind) + " group of " +
                    std::to_string(group_size(kind)));
  }
  return engine_->collective(*this, kind,
                             {CollectiveKind::Reduce, root_slot,
                              contribution.rows(), contribution.cols()},
                             contribution);
}

Matrix RankCtx::all_reduce(GroupKind kind, const Matrix& contribution) {
  return engine_->collective(*this, kind,
                             {CollectiveKind::AllReduce, 0,
                              contribution.rows(), contribution.cols()},
                             contribution);
}

Matrix RankCtx::shift(GroupKind kind, int displacement, const Matrix& payload) {
  return engine_->collective(
      *this, kind, {CollectiveKind::Shift, displacement, 0, 0}, payload);
}

void RankCtx::send(const RankCoord& to, const Matrix& payload) {
  engine_->send(*this, to, payload);
}

Matrix RankCtx::recv(const RankCoord& from) { return engine_->recv(*this, from); }

SpmdRunner::SpmdRunner(const GridSpec& grid, const SpmdOptions& options)
    : grid_(grid),
      engine_(std::make_unique<detail::CollectiveEngine>(grid,
                                                         options.record_trace)) {
}

SpmdRunner::~SpmdRunner() = default;

void SpmdRunner::run(const std::function<void(RankCtx&)>& body) {
  std::vector<std::thread> threads;
  threads.reserve(grid_.size());
  for (int r = 0; r < grid_.size(); ++r) {
    threads.emplace_back([this, &body, r] {
      RankCtx ctx(engine_.get(), grid_.coord_of(r), r);
      try {
        body(ctx);
      } catch (const detail::SpmdAbort&) {
        // Another rank already recorded the failure.
      } catch (const std::exception& e) {
        engine_->rank_failed(r, ctx.step(), e.what());
      } catch (...) {
        engine_->rank_failed(r, ctx.step(), "unknown error");
      }
      engine_->rank_finished(r);
    });
  }
  for (auto& t : threads) t.join();
  if (engine_->failed()) throw SpmdError(engine_->failure());
}

CommStats SpmdRunner::take_stats() { return engine_->take_stats(); }

std::vector<TraceEvent> SpmdRunner::take_trace() {
  return engine_->take_trace();
}

}  // namespace tsim
