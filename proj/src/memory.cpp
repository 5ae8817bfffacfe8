#include "gradma/memory.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>

namespace gradma {

MemoryState::MemoryState(int capacity, int num_workers, Eigen::Index dim)
    : capacity_(capacity),
      directions_(Matrix<real>::Zero(dim, capacity)),
      norms_(Vector<real>::Zero(capacity)),
      gram_(Matrix<real>::Zero(capacity, capacity)),
      warm_(Vector<real>::Zero(capacity)),
      slot_of_(static_cast<std::size_t>(num_workers), -1),
      is_new_(static_cast<std::size_t>(num_workers), 0),
      counters_(static_cast<std::size_t>(num_workers), 0) {
  if (capacity < 0 || capacity > num_workers) throw std::invalid_argument("memory: capacity must lie in [0, N]");
  buffered_.reserve(static_cast<std::size_t>(capacity));
}

std::vector<WorkerId> MemoryState::newly_buffered() const {
  std::vector<WorkerId> out;
  for (WorkerId id : buffered_)
    if (is_new(id)) out.push_back(id);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<Eviction> MemoryState::reduce(std::span<const WorkerId> active) {
  std::vector<Eviction> evictions;
  if (capacity_ == 0) return evictions;
  if (static_cast<int>(active.size()) > capacity_) throw std::invalid_argument("memory: more active workers than capacity");

  auto in_active = [&](WorkerId id) { return std::find(active.begin(), active.end(), id) != active.end(); };

  for (WorkerId i : active) {
    auto& c = counters_[static_cast<std::size_t>(i)];
    if (contains(i)) {
      ++c;
      continue;
    }
    int slot = size();
    if (size() == capacity_) {
      WorkerId victim = -1;
      for (WorkerId k : buffered_) {
        if (in_active(k)) continue;
        if (victim < 0 || counter(k) < counter(victim) || (counter(k) == counter(victim) && k < victim)) victim = k;
      }
      if (victim < 0) throw std::logic_error("memory: no eviction candidate outside the sampled set");
      slot = slot_of_[static_cast<std::size_t>(victim)];
      counters_[static_cast<std::size_t>(victim)] = 0;
      slot_of_[static_cast<std::size_t>(victim)] = -1;
      is_new_[static_cast<std::size_t>(victim)] = 0;
      directions_.col(slot).setZero();
      norms_(slot) = 0;
      gram_.row(slot).setZero();
      gram_.col(slot).setZero();
      warm_(slot) = 0;
      buffered_[static_cast<std::size_t>(slot)] = i;
      evictions.push_back({victim, i});
    } else {
      buffered_.push_back(i);
      warm_(slot) = 0;
    }
    ++c;
    slot_of_[static_cast<std::size_t>(i)] = slot;
    is_new_[static_cast<std::size_t>(i)] = 1;
  }
  return evictions;
}

void MemoryState::absorb(std::span<const WorkerId> active, std::span<const ParamVec> updates, double beta2) {
  if (active.size() != updates.size()) throw StructuralError("memory: one update per active worker expected");
  for (WorkerId id : active)
    if (!contains(id)) throw std::logic_error("memory: active worker " + std::to_string(id) + " is not buffered");
  const int k = size();
  if (k == 0) return;

  std::vector<char> touched(static_cast<std::size_t>(k), 0);
  for (std::size_t a = 0; a < active.size(); ++a) {
    const WorkerId id = active[a];
    if (updates[a].size() != dim()) throw StructuralError("memory: update dimension mismatch");
    touched[static_cast<std::size_t>(slot(id))] = 1;
  }

  // Untouched columns only decay, leaving their directions and Gram entries alone.
  for (int s = 0; s < k; ++s)
    if (!touched[static_cast<std::size_t>(s)]) norms_(s) *= beta2;

  for (std::size_t a = 0; a < active.size(); ++a) {
    const WorkerId id = active[a];
    const int s = slot(id);
    ParamVec v = updates[a];
    if (!is_new(id)) v += (beta2 * norms_(s)) * directions_.col(s);
    norms_(s) = v.norm();
    if (norms_(s) > 0)
      directions_.col(s) = v / norms_(s);
    else
      directions_.col(s).setZero();
  }
  for (int s = 0; s < k; ++s) {
    if (!touched[static_cast<std::size_t>(s)]) continue;
    for (int t = 0; t < k; ++t) {
      const real v = directions_.col(s).dot(directions_.col(t));
      gram_(s, t) = v;
      gram_(t, s) = v;
    }
  }
}

void MemoryState::clear_new() { std::fill(is_new_.begin(), is_new_.end(), 0); }

Matrix<real> MemoryState::columns() const {
  return directions_.leftCols(size()) * norms_.head(size()).asDiagonal();
}

Matrix<real> MemoryState::recompute_gram() const {
  const auto D = directions();
  Matrix<real> G(size(), size());
  for (int i = 0; i < size(); ++i)
    for (int j = i; j < size(); ++j) G(i, j) = G(j, i) = D.col(i).dot(D.col(j));
  return G;
}

double MemoryState::gram_drift() const {
  if (size() == 0) return 0.0;
  const Matrix<real> fresh = recompute_gram();
  const double scale = fresh.cwiseAbs().maxCoeff();
  const double diff = (gram() - fresh).cwiseAbs().maxCoeff();
  return scale > 0 ? diff / scale : diff;
}

void MemoryState::refresh_gram() {
  if (size() == 0) return;
  gram_.topLeftCorner(size(), size()) = recompute_gram();
}

}  // namespace gradma
