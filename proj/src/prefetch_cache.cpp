#include "bsplat/prefetch_cache.hpp"

#include <algorithm>
#include <limits>

namespace bsplat {

namespace {
std::size_t image_bytes(const Image<float>& img) { return img.data.size() * sizeof(float); }
}  // namespace

PrefetchCache::PrefetchCache(std::size_t capacity, int view_count, Loader loader, bool background)
    : capacity_(capacity), view_count_(view_count), loader_(std::move(loader)) {
  if (capacity_ < 1) throw InputError("cache capacity must be at least 1");
  if (background) worker_ = std::thread([this] { worker_loop(); });
}

PrefetchCache::~PrefetchCache() {
  {
    std::lock_guard lock(mutex_);
    stop_ = true;
  }
  changed_.notify_all();
  if (worker_.joinable()) worker_.join();
}

void PrefetchCache::prefetch(std::vector<int> window) {
  {
    std::lock_guard lock(mutex_);
    window.erase(std::remove_if(window.begin(), window.end(), [&](int v) { return v < 0 || v >= view_count_; }),
                 window.end());
    window_ = std::move(window);
  }
  changed_.notify_all();
}

std::size_t PrefetchCache::next_use(int view) const {
  const auto it = std::find(window_.begin(), window_.end(), view);
  return it == window_.end() ? std::numeric_limits<std::size_t>::max() : std::size_t(it - window_.begin());
}

int PrefetchCache::pick_victim(int keep, bool only_outside_window) const {
  int best = -1;
  std::size_t best_next = 0, best_use = 0;
  for (const auto& [view, e] : entries_) {
    if (view == keep || !e.image) continue;
    const std::size_t next = next_use(view);
    if (only_outside_window && next != std::numeric_limits<std::size_t>::max()) continue;
    // Farthest next use first, then least recently used, then lowest id.
    const bool better = best < 0 || next > best_next || (next == best_next && e.last_use < best_use) ||
                        (next == best_next && e.last_use == best_use && view < best);
    if (better) {
      best = view;
      best_next = next;
      best_use = e.last_use;
    }
  }
  return best;
}

void PrefetchCache::evict(int view) {
  const auto it = entries_.find(view);
  resident_bytes_ -= image_bytes(*it->second.image);
  entries_.erase(it);
  ++evictions_;
}

void PrefetchCache::note_sizes() {
  peak_resident_ = std::max(peak_resident_, entries_.size());
  peak_bytes_ = std::max(peak_bytes_, resident_bytes_);
}

std::shared_ptr<const Image<float>> PrefetchCache::get(int view) {
  if (view < 0 || view >= view_count_) throw InputError("unknown view id " + std::to_string(view));
  std::unique_lock lock(mutex_);
  bool counted = false;
  while (true) {
    const auto it = entries_.find(view);
    if (it != entries_.end()) {
      if (it->second.image) {
        if (!counted) ++hits_;
        it->second.last_use = ++clock_;
        return it->second.image;
      }
      if (!counted) ++hits_;
      counted = true;
      changed_.wait(lock);
      continue;
    }
    if (entries_.size() >= capacity_) {
      const int victim = pick_victim(view, false);
      if (victim < 0) {  // every slot is being filled by the prefetcher
        changed_.wait(lock);
        continue;
      }
      evict(victim);
    }
    if (!counted) ++misses_;
    entries_[view] = Entry{nullptr, ++clock_};
    note_sizes();
    lock.unlock();
    std::shared_ptr<const Image<float>> image;
    try {
      image = std::make_shared<const Image<float>>(loader_(view));
    } catch (...) {
      lock.lock();
      entries_.erase(view);
      changed_.notify_all();
      throw;
    }
    lock.lock();
    Entry& e = entries_[view];
    e.image = image;
    resident_bytes_ += image_bytes(*image);
    note_sizes();
    changed_.notify_all();
    return image;
  }
}

void PrefetchCache::worker_loop() {
  std::unique_lock lock(mutex_);
  while (!stop_) {
    int target = -1;
    for (int v : window_) {
      if (entries_.count(v)) continue;
      if (entries_.size() < capacity_) {
        target = v;
      } else {
        const int victim = pick_victim(v, true);
        if (victim >= 0) {
          evict(victim);
          target = v;
        }
      }
      break;  // only the soonest missing view is considered
    }
    if (target < 0) {
      changed_.wait(lock);
      continue;
    }
    entries_[target] = Entry{nullptr, ++clock_};
    note_sizes();
    lock.unlock();
    std::shared_ptr<const Image<float>> image;
    try {
      image = std::make_shared<const Image<float>>(loader_(target));
    } catch (...) {
      image.reset();
    }
    lock.lock();
    if (image) {
      entries_[target].image = image;
      resident_bytes_ += image_bytes(*image);
      note_sizes();
    } else {
      entries_.erase(target);  // get() will retry and surface the error
      window_.erase(std::remove(window_.begin(), window_.end(), target), window_.end());
    }
    changed_.notify_all();
  }
}

std::size_t PrefetchCache::resident() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}
std::size_t PrefetchCache::peak_resident() const {
  std::lock_guard lock(mutex_);
  return peak_resident_;
}
std::size_t PrefetchCache::evictions() const {
  std::lock_guard lock(mutex_);
  return evictions_;
}
std::size_t PrefetchCache::hits() const {
  std::lock_guard lock(mutex_);
  return hits_;
}
std::size_t PrefetchCache::misses() const {
  std::lock_guard lock(mutex_);
  return misses_;
}
std::size_t PrefetchCache::peak_bytes() const {
  std::lock_guard lock(mutex_);
  return peak_bytes_;
}

}  // namespace bsplat
