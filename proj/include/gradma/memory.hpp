#ifndef GRADMA_MEMORY_HPP
#define GRADMA_MEMORY_HPP

#include <span>
#include <vector>

#include "gradma/types.hpp"

namespace gradma {

struct Eviction {
  WorkerId evicted;
  WorkerId admitted;
};

// Server-side memory of accumulated worker updates.
//
// Buffered workers occupy columns [0, size()) of a d x capacity matrix; a
// worker admitted by eviction takes over the column of the worker it replaced,
// so the buffered columns stay contiguous.
//
// Each column D_j is held as a unit direction and a norm. Decay only shrinks
// the norm, which may underflow for workers absent for hundreds of rounds while
// the direction stays exact. The cone {v : <v, D_j> >= 0} ignores column norms,
// so the server correction works on the directions and their Gram matrix, which
// is kept alongside and updated incrementally.
class MemoryState {
 public:
  MemoryState() = default;
  MemoryState(int capacity, int num_workers, Eigen::Index dim);

  int capacity() const { return capacity_; }
  int size() const { return static_cast<int>(buffered_.size()); }
  int num_workers() const { return static_cast<int>(counters_.size()); }
  Eigen::Index dim() const { return directions_.rows(); }

  bool contains(WorkerId id) const { return slot_of_[static_cast<std::size_t>(id)] >= 0; }
  int slot(WorkerId id) const { return slot_of_[static_cast<std::size_t>(id)]; }
  bool is_new(WorkerId id) const { return is_new_[static_cast<std::size_t>(id)] != 0; }
  long long counter(WorkerId id) const { return counters_[static_cast<std::size_t>(id)]; }

  // Buffered worker ids in column order.
  const std::vector<WorkerId>& buffered() const { return buffered_; }
  std::vector<WorkerId> newly_buffered() const;

  // Memory contents D (materialized; the server step uses directions()).
  Matrix<real> columns() const;
  ParamVec column(WorkerId id) const { return norms_(slot(id)) * directions_.col(slot(id)); }
  real norm(WorkerId id) const { return norms_(slot(id)); }

  // Unit columns (zero for a zero column) and their Gram matrix.
  auto directions() const { return directions_.leftCols(size()); }
  auto gram() const { return gram_.topLeftCorner(size(), size()); }

  // Dual solution of the previous server correction, one entry per direction.
  Vector<real> warm_start() const { return warm_.head(size()); }
  void set_warm_start(const Vector<real>& z) { warm_.head(z.size()) = z; }

  // Memory reduction for the sampled set of one round. Buffered workers get
  // their counter bumped; others are admitted (and flagged new), evicting the
  // buffered non-sampled worker with the smallest counter when full (ties: lowest id).
  std::vector<Eviction> reduce(std::span<const WorkerId> active);

  // Folds the round's updates into the memory: a new worker's column becomes
  // its update, an old active column decays by beta2 and adds its update, an
  // inactive one only decays. `updates[k]` belongs to `active[k]`, and every
  // active worker must be buffered.
  void absorb(std::span<const WorkerId> active, std::span<const ParamVec> updates, double beta2);

  void clear_new();

  // Largest |cached - recomputed| Gram entry relative to max |recomputed|.
  double gram_drift() const;
  void refresh_gram();

 private:
  Matrix<real> recompute_gram() const;

  int capacity_ = 0;
  Matrix<real> directions_;  // d x capacity
  Vector<real> norms_;
  Matrix<real> gram_;  // capacity x capacity, of directions_
  Vector<real> warm_;
  std::vector<WorkerId> buffered_;
  std::vector<int> slot_of_;
  std::vector<char> is_new_;
  std::vector<long long> counters_;
};

}  // namespace gradma

#endif  // GRADMA_MEMORY_HPP
