#pragma once

// Bounded image cache with a background prefetcher driven by the trainer's
// upcoming view schedule.

#include <condition_variable>
#include <cstddef>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>
#include <unordered_map>
#include <vector>

#include "bsplat/image.hpp"

namespace bsplat {

class PrefetchCache {
 public:
  using Loader = std::function<Image<float>(int view)>;

  /// `view_count` views, ids 0..view_count-1. With `background` false nothing is
  /// loaded ahead of time and every miss is served synchronously.
  PrefetchCache(std::size_t capacity, int view_count, Loader loader, bool background = true);
  ~PrefetchCache();
  PrefetchCache(const PrefetchCache&) = delete;
  PrefetchCache& operator=(const PrefetchCache&) = delete;

  /// Replaces the schedule window: the views needed next, soonest first.
  /// Resident views outside the window become preferred eviction victims.
  void prefetch(std::vector<int> window);

  /// The decoded image of `view`; blocks while it is being loaded.
  /// Throws InputError for an unknown view and rethrows loader errors.
  std::shared_ptr<const Image<float>> get(int view);

  std::size_t capacity() const { return capacity_; }
  std::size_t resident() const;
  std::size_t peak_resident() const;
  std::size_t evictions() const;
  std::size_t hits() const;
  std::size_t misses() const;
  /// Largest total byte size of the resident images seen so far.
  std::size_t peak_bytes() const;

 private:
  struct Entry {
    std::shared_ptr<const Image<float>> image;  // null while loading
    std::size_t last_use = 0;
  };

  void worker_loop();
  std::size_t next_use(int view) const;  // position in the window, or SIZE_MAX
  // Picks a ready entry to evict, never `keep`. With `only_outside_window` the
  // victim must not be scheduled. Returns -1 when nothing qualifies.
  int pick_victim(int keep, bool only_outside_window) const;
  void evict(int view);
  void note_sizes();

  const std::size_t capacity_;
  const int view_count_;
  Loader loader_;

  mutable std::mutex mutex_;
  std::condition_variable changed_;
  std::unordered_map<int, Entry> entries_;
  std::vector<int> window_;
  std::size_t clock_ = 0;
  std::size_t peak_resident_ = 0, evictions_ = 0, hits_ = 0, misses_ = 0;
  std::size_t resident_bytes_ = 0, peak_bytes_ = 0;
  bool stop_ = false;
  std::thread worker_;
};

}  // namespace bsplat
