#pragma once

// FIFO patch-synthesis queue with batched flushing, and arbitrary-extent
// region synthesis built on it.

#include <cstdint>
#include <deque>
#include <mutex>
#include <span>
#include <utility>
#include <vector>

#include "infinicity/map_generator.hpp"

namespace infinicity {

enum class JobState { kQueued, kRunning, kDone };

struct SynthesisJob {
  std::uint64_t id = 0;
  Rect patch_rect;
  JobState state = JobState::kQueued;
};

template <typename Result>
struct JobResult {
  std::uint64_t job_id = 0;
  Rect patch_rect;
  Result output;
};

/// Single logical FIFO. Producers may submit concurrently (submissions are
/// serialised); one flusher drains it in batches.
class SynthesisQueue {
 public:
  explicit SynthesisQueue(int patch_size) : patch_size_(patch_size) {
    if (patch_size <= 0) throw InvalidArgument("patch size must be positive");
  }

  std::uint64_t submit(const Rect& patch) {
    if (patch.w != patch_size_ || patch.h != patch_size_)
      throw InvalidArgument("job rect must match the native patch size");
    std::lock_guard lock(mutex_);
    const std::uint64_t id = next_id_++;
    pending_.push_back({id, patch, JobState::kQueued});
    return id;
  }

  std::size_t pending() const {
    std::lock_guard lock(mutex_);
    return pending_.size();
  }

  /// Drains every queued job, batch_size at a time, in submission order.
  /// `run_batch` receives the stacked patch rects of one batch and returns one
  /// result per rect, in the same order.
  template <typename BatchFn>
  auto flush(std::size_t batch_size, BatchFn&& run_batch) {
    using Result = typename decltype(run_batch(std::span<const Rect>{}))::value_type;
    std::vector<JobResult<Result>> results;
    flush_each(batch_size, std::forward<BatchFn>(run_batch),
               [&](JobResult<Result>&& r) { results.push_back(std::move(r)); });
    return results;
  }

  /// As flush(), but hands each result to `sink` as its batch completes
  /// instead of collecting them.
  template <typename BatchFn, typename Sink>
  std::size_t flush_each(std::size_t batch_size, BatchFn&& run_batch, Sink&& sink) {
    using Result = typename decltype(run_batch(std::span<const Rect>{}))::value_type;
    if (batch_size < 1) throw InvalidArgument("batch size must be at least 1");
    std::deque<SynthesisJob> jobs;
    {
      std::lock_guard lock(mutex_);
      jobs.swap(pending_);
    }
    const std::size_t total = jobs.size();
    std::vector<Rect> rects;
    while (!jobs.empty()) {
      const std::size_t n = std::min(batch_size, jobs.size());
      rects.clear();
      for (std::size_t k = 0; k < n; ++k) {
        jobs[k].state = JobState::kRunning;
        rects.push_back(jobs[k].patch_rect);
      }
      auto outputs = run_batch(std::span<const Rect>(rects));
      if (outputs.size() != n) throw Error("batch returned the wrong number of outputs");
      ++batches_run_;
      for (std::size_t k = 0; k < n; ++k) {
        jobs.front().state = JobState::kDone;
        completed_.push_back(jobs.front().id);
        sink(JobResult<Result>{jobs.front().id, jobs.front().patch_rect, std::move(outputs[k])});
        jobs.pop_front();
      }
    }
    return total;
  }

  /// Job ids in the order they reached kDone.
  const std::vector<std::uint64_t>& completion_order() const { return completed_; }
  std::size_t batches_run() const { return batches_run_; }
  std::size_t jobs_completed() const { return completed_.size(); }

 private:
  int patch_size_;
  mutable std::mutex mutex_;
  std::deque<SynthesisJob> pending_;
  std::uint64_t next_id_ = 0;
  std::vector<std::uint64_t> completed_;
  std::size_t batches_run_ = 0;
};

/// Native patches (aligned to multiples of patch_size) that overlap rect.
inline std::vector<Rect> patches_covering(const Rect& rect, int patch_size) {
  std::vector<Rect> out;
  if (rect.empty()) return out;
  const std::int64_t p = patch_size;
  for (std::int64_t py = floor_div(rect.y, p); py <= floor_div(rect.bottom() - 1, p); ++py)
    for (std::int64_t px = floor_div(rect.x, p); px <= floor_div(rect.right() - 1, p); ++px)
      out.push_back({px * p, py * p, p, p});
  return out;
}

/// Decodes raw generator output into a CDN tile.
inline CdnTile decode_patch(const PatchOutput& out, const Palette& palette) {
  CdnTile tile(out.color.width(), out.color.height());
  tile.category = decode_category(out.color, palette);
  for (std::size_t i = 0; i < out.height.size(); ++i) {
    const long h = std::lround(out.height.data()[i]);
    tile.height_m.data()[i] = static_cast<std::uint16_t>(std::clamp<long>(h, 0, kWorldHeight - 1));
  }
  for (std::size_t i = 0; i < out.normal.size(); ++i)
    tile.normal.data()[i] = pack_normal(out.normal.data()[i]);
  return tile;
}

struct SynthesisStats {
  std::size_t jobs = 0;
  std::size_t batches = 0;
};

/// Tiles rect into native patches, runs them through the FIFO queue in
/// batches, and stitches the decoded result. Output does not depend on the
/// patch decomposition or batch size.
inline CdnTile synthesize_region(const LatentField& field, const ProceduralMapGenerator& gen,
                                 const Rect& rect, std::size_t batch_size = 8,
                                 SynthesisStats* stats = nullptr) {
  if (rect.empty()) throw InvalidArgument("synthesize_region: empty rect");
  if (rect.w > (1 << 16) || rect.h > (1 << 16)) throw InvalidArgument("rect too large");
  gen.check_field(field);
  SynthesisQueue queue(gen.patch_size());
  for (const auto& p : patches_covering(rect, gen.patch_size())) queue.submit(p);
  CdnTile tile(static_cast<int>(rect.w), static_cast<int>(rect.h));
  auto run = [&](std::span<const Rect> rects) { return gen.generate_batch(field, rects); };
  queue.flush_each(batch_size, run, [&](JobResult<PatchOutput>&& r) {
    const CdnTile patch = decode_patch(r.output, gen.palette());
    const std::int64_t x0 = std::max(rect.x, r.patch_rect.x), x1 = std::min(rect.right(), r.patch_rect.right());
    const std::int64_t y0 = std::max(rect.y, r.patch_rect.y), y1 = std::min(rect.bottom(), r.patch_rect.bottom());
    for (std::int64_t y = y0; y < y1; ++y)
      for (std::int64_t x = x0; x < x1; ++x) {
        const int sx = static_cast<int>(x - r.patch_rect.x), sy = static_cast<int>(y - r.patch_rect.y);
        const int dx = static_cast<int>(x - rect.x), dy = static_cast<int>(y - rect.y);
        tile.category(dx, dy) = patch.category(sx, sy);
        tile.height_m(dx, dy) = patch.height_m(sx, sy);
        tile.normal(dx, dy) = patch.normal(sx, sy);
      }
  });
  if (stats) {
    stats->jobs = queue.jobs_completed();
    stats->batches = queue.batches_run();
  }
  return tile;
}

}  // namespace infinicity
