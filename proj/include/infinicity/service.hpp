#pragma once

// Session store behind the HTTP API: map tiles served from a per-session
// cache, regional resampling with exact cache invalidation, background world
// builds with progress, camera sampling and rendering.

#include <httplib.h>

#include <algorithm>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <tuple>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "infinicity/camsample.hpp"
#include "infinicity/core.hpp"
#include "infinicity/digest.hpp"
#include "infinicity/image_io.hpp"
#include "infinicity/latentgrid.hpp"
#include "infinicity/map_generator.hpp"
#include "infinicity/render.hpp"
#include "infinicity/satmap.hpp"
#include "infinicity/synthesis.hpp"
#include "infinicity/voxelworld.hpp"

namespace infinicity {

class NotFound : public Error {
 public:
  using Error::Error;
};

class Conflict : public Error {
 public:
  using Error::Error;
};

class BudgetExceeded : public Error {
 public:
  using Error::Error;
};

struct ServiceConfig {
  std::size_t max_sessions = 32;
  std::size_t tile_cache_entries = 256;
  std::int64_t max_tile_side = 1024;
  std::int64_t max_world_pixels = 512 * 512;
  std::int64_t max_render_pixels = 1024 * 1024;
  std::size_t max_cameras = 10000;
  std::size_t idempotency_entries = 256;
  std::size_t batch_size = 8;
  unsigned workers = 0;
};

enum class TileLayer { kCategory, kHeight, kNormal, kWalkable };

inline TileLayer parse_layer(std::string_view s) {
  if (s == "category") return TileLayer::kCategory;
  if (s == "height") return TileLayer::kHeight;
  if (s == "normal") return TileLayer::kNormal;
  if (s == "walkable") return TileLayer::kWalkable;
  throw InvalidArgument("unknown layer '" + std::string(s) + "' (expected category, height, normal or walkable)");
}

inline void to_json(nlohmann::json& j, const Rect& r) { j = {{"x", r.x}, {"y", r.y}, {"w", r.w}, {"h", r.h}}; }

inline void from_json(const nlohmann::json& j, Rect& r) {
  r = Rect{j.at("x").get<std::int64_t>(), j.at("y").get<std::int64_t>(), j.at("w").get<std::int64_t>(),
           j.at("h").get<std::int64_t>()};
}

inline std::vector<std::uint8_t> encode_layer(const CdnTile& tile, TileLayer layer, const Palette& palette) {
  switch (layer) {
    case TileLayer::kCategory: return encode_category_png(tile.category, palette);
    case TileLayer::kHeight: return encode_height_png(tile.height_m);
    case TileLayer::kNormal: return encode_normal_png(tile.normal);
    case TileLayer::kWalkable: return encode_mask_png(label_walkable(tile, palette).mask);
  }
  throw InvalidArgument("unknown layer");
}

struct TileResponse {
  std::vector<std::uint8_t> png;
  bool cache_hit = false;
  std::uint64_t generation = 0;
};

struct ResampleResult {
  std::vector<Rect> invalidated;  // cached rects that intersect the footprint
  Rect footprint;                 // pixels whose content may change
  std::size_t cells = 0;          // latent cells redrawn
  std::size_t jobs = 0;           // native patches needed to regenerate the footprint
  std::uint64_t generation = 0;
  bool replayed = false;  // answered from the idempotency store
};

inline nlohmann::json to_json(const ResampleResult& r) {
  return {{"invalidated", r.invalidated}, {"footprint", r.footprint}, {"cells", r.cells},
          {"jobs", r.jobs},               {"generation", r.generation}, {"replayed", r.replayed}};
}

enum class BuildStatus { kRunning, kDone, kFailed, kCancelled };

inline std::string_view to_string(BuildStatus s) {
  switch (s) {
    case BuildStatus::kRunning: return "running";
    case BuildStatus::kDone: return "done";
    case BuildStatus::kFailed: return "failed";
    case BuildStatus::kCancelled: return "cancelled";
  }
  return "unknown";
}

struct WorldProgress {
  std::uint64_t id = 0;
  Rect rect;
  Completion mode = Completion::kPillar;
  std::uint64_t generation = 0;
  BuildStatus status = BuildStatus::kRunning;
  std::string stage;
  std::size_t blocks_done = 0, blocks_total = 0;
  std::string error;
};

inline nlohmann::json to_json(const WorldProgress& p) {
  return {{"world", p.id},
          {"rect", p.rect},
          {"completion", std::string(to_string(p.mode))},
          {"generation", p.generation},
          {"status", std::string(to_string(p.status))},
          {"stage", p.stage},
          {"blocks_done", p.blocks_done},
          {"blocks_total", p.blocks_total},
          {"error", p.error}};
}

/// One world build: progress is written by the builder thread and read by
/// pollers under the entry's mutex.
class WorldEntry {
 public:
  explicit WorldEntry(WorldProgress p) : progress_(std::move(p)) {}

  WorldProgress progress() const {
    std::lock_guard lock(mutex_);
    return progress_;
  }

  template <class F>
  void update(F&& f) {
    {
      std::lock_guard lock(mutex_);
      f(progress_);
    }
    changed_.notify_all();
  }

  void finish(std::shared_ptr<const VoxelWorld> world, CdnTile tile) {
    {
      std::lock_guard lock(mutex_);
      world_ = std::move(world);
      tile_ = std::move(tile);
      progress_.status = BuildStatus::kDone;
      progress_.stage = "done";
    }
    changed_.notify_all();
  }

  WorldProgress wait() const {
    std::unique_lock lock(mutex_);
    changed_.wait(lock, [&] { return progress_.status != BuildStatus::kRunning; });
    return progress_;
  }

  std::shared_ptr<const VoxelWorld> world() const {
    std::lock_guard lock(mutex_);
    if (progress_.status != BuildStatus::kDone)
      throw Conflict("world " + std::to_string(progress_.id) + " is " + std::string(to_string(progress_.status)));
    return world_;
  }

  const CdnTile& tile() const {
    std::lock_guard lock(mutex_);
    return tile_;
  }

 private:
  mutable std::mutex mutex_;
  mutable std::condition_variable changed_;
  WorldProgress progress_;
  std::shared_ptr<const VoxelWorld> world_;
  CdnTile tile_;
};

class Session {
 public:
  Session(std::string id, std::uint64_t seed, std::shared_ptr<const ProceduralMapGenerator> gen, ServiceConfig config)
      : id_(std::move(id)), gen_(std::move(gen)), config_(config),
        field_(std::make_shared<const LatentField>(sample_field(seed))) {
    stages_["map"] = "ready";
  }

  ~Session() {
    if (builder_.joinable()) {
      builder_.request_stop();
      builder_.join();
    }
  }

  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  const std::string& id() const { return id_; }

  std::uint64_t seed() const {
    std::shared_lock lock(state_mutex_);
    return field_->seed();
  }

  std::uint64_t generation() const {
    std::shared_lock lock(state_mutex_);
    return generation_;
  }

  std::shared_ptr<const LatentField> field() const {
    std::shared_lock lock(state_mutex_);
    return field_;
  }

  std::size_t cached_tiles() const {
    std::lock_guard lock(cache_mutex_);
    return cache_.size();
  }

  /// Synthesized tile for rect. A cached entry is always consistent with the
  /// current field; a miss is computed from one snapshot of the field.
  std::shared_ptr<const CdnTile> tile(const Rect& rect, bool* hit = nullptr, std::uint64_t* generation = nullptr) {
    check_tile_rect(rect);
    std::shared_ptr<const LatentField> field;
    std::uint64_t gen = 0;
    {
      std::shared_lock lock(state_mutex_);
      gen = generation_;
      field = field_;
      std::lock_guard cache_lock(cache_mutex_);
      if (auto it = cache_index_.find(key(rect)); it != cache_index_.end()) {
        cache_.splice(cache_.begin(), cache_, it->second);
        if (hit) *hit = true;
        if (generation) *generation = gen;
        return it->second->tile;
      }
    }
    auto tile = std::make_shared<const CdnTile>(synthesize_region(*field, *gen_, rect, config_.batch_size));
    {
      std::shared_lock lock(state_mutex_);
      if (generation_ == gen) {
        std::lock_guard cache_lock(cache_mutex_);
        insert(rect, tile);
      }
    }
    if (hit) *hit = false;
    if (generation) *generation = gen;
    return tile;
  }

  TileResponse get_tile(const Rect& rect, TileLayer layer) {
    TileResponse r;
    const auto t = tile(rect, &r.cache_hit, &r.generation);
    r.png = encode_layer(*t, layer, gen_->palette());
    return r;
  }

  /// Redraws the latents under rect and drops exactly the cached tiles that
  /// intersect the affected footprint. A repeated idempotency key returns the
  /// first answer without resampling again.
  ResampleResult resample(const Rect& rect, std::uint64_t seed, const std::string& idempotency_key = {}) {
    if (rect.empty()) throw InvalidArgument("resample: empty rect");
    std::lock_guard mutation(mutation_mutex_);
    const std::string fingerprint = to_string(rect) + "/" + std::to_string(seed);
    if (!idempotency_key.empty()) {
      for (const auto& e : idempotency_)
        if (e.key == idempotency_key) {
          if (e.fingerprint != fingerprint)
            throw Conflict("idempotency key '" + idempotency_key + "' was used for a different request");
          ResampleResult r = e.result;
          r.replayed = true;
          return r;
        }
    }
    const ReceptiveField rf = gen_->receptive_field();
    auto next = std::make_shared<const LatentField>(resample_region(*field(), rect, rf, seed));
    ResampleResult r;
    r.footprint = affected_footprint(rect, rf);
    r.cells = calibrate_region(rect, ReceptiveField{0}, next->cell_stride()).size();
    r.jobs = patches_covering(r.footprint, gen_->patch_size()).size();
    {
      std::unique_lock lock(state_mutex_);
      field_ = std::move(next);
      r.generation = ++generation_;
      std::lock_guard cache_lock(cache_mutex_);
      for (auto it = cache_.begin(); it != cache_.end();) {
        if (it->rect.intersects(r.footprint)) {
          r.invalidated.push_back(it->rect);
          cache_index_.erase(key(it->rect));
          it = cache_.erase(it);
        } else {
          ++it;
        }
      }
      stages_["map"] = "resampled";
    }
    std::sort(r.invalidated.begin(), r.invalidated.end(),
              [](const Rect& a, const Rect& b) { return std::tie(a.y, a.x, a.h, a.w) < std::tie(b.y, b.x, b.h, b.w); });
    if (!idempotency_key.empty()) {
      idempotency_.push_back({idempotency_key, fingerprint, r});
      if (idempotency_.size() > config_.idempotency_entries) idempotency_.pop_front();
    }
    return r;
  }

  /// Starts a background build of the world under rect from the current
  /// field. One build runs at a time per session.
  std::uint64_t build_world(const Rect& rect, Completion mode) {
    constexpr int E = OctreeBlock::kEdge;
    if (rect.empty() || rect.x % E || rect.y % E || rect.w % E || rect.h % E)
      throw InvalidArgument("world rect must be non-empty and aligned to 64-pixel blocks");
    if (rect.w * rect.h > config_.max_world_pixels)
      throw BudgetExceeded("world rect of " + std::to_string(rect.w * rect.h) + " pixels exceeds the budget of " +
                           std::to_string(config_.max_world_pixels));
    std::lock_guard mutation(mutation_mutex_);
    std::shared_ptr<WorldEntry> entry;
    {
      std::lock_guard lock(worlds_mutex_);
      if (building_ && building_->progress().status == BuildStatus::kRunning)
        throw Conflict("a world build is already running in this session");
      if (builder_.joinable()) builder_.join();
      WorldProgress p;
      p.id = ++next_world_;
      p.rect = rect;
      p.mode = mode;
      p.stage = "queued";
      p.blocks_total = static_cast<std::size_t>((rect.w / E) * (rect.h / E));
      std::shared_lock state(state_mutex_);
      p.generation = generation_;
      entry = std::make_shared<WorldEntry>(p);
      worlds_[p.id] = entry;
      building_ = entry;
      set_stage("world", "running");
    }
    auto field = this->field();
    builder_ = std::jthread([this, entry, field, gen = gen_, rect, mode, batch = config_.batch_size](std::stop_token stop) {
      run_build(stop, *entry, *field, *gen, rect, mode, batch);
    });
    return entry->progress().id;
  }

  std::shared_ptr<WorldEntry> world(std::uint64_t id) const {
    std::lock_guard lock(worlds_mutex_);
    auto it = worlds_.find(id);
    if (it == worlds_.end()) throw NotFound("unknown world " + std::to_string(id) + " in session " + id_);
    return it->second;
  }

  std::vector<WorldProgress> worlds() const {
    std::lock_guard lock(worlds_mutex_);
    std::vector<WorldProgress> out;
    for (const auto& [_, w] : worlds_) out.push_back(w->progress());
    return out;
  }

  std::vector<CameraPose> sample_cameras(std::uint64_t world_id, std::size_t n, std::uint64_t seed) {
    if (n == 0 || n > config_.max_cameras)
      throw InvalidArgument("camera count must be in [1, " + std::to_string(config_.max_cameras) + "]");
    const auto entry = world(world_id);
    const auto w = entry->world();
    const Rect r = entry->progress().rect;
    const WalkableMask mask = refine_mask(label_walkable(entry->tile(), gen_->palette(), r.x, r.y));
    try {
      auto poses = infinicity::sample_cameras(mask, *w, n, seed);
      set_stage("cameras", "ok");
      return poses;
    } catch (const NoValidPose&) {
      set_stage("cameras", "failed");
      throw;
    }
  }

  RenderOutput render(std::uint64_t world_id, const CameraPose& pose, const Intrinsics& k) {
    k.validate();
    if (std::int64_t{k.width} * k.height > config_.max_render_pixels)
      throw BudgetExceeded("render size exceeds the budget of " + std::to_string(config_.max_render_pixels) + " pixels");
    const auto w = world(world_id)->world();
    RenderOutput out = render_view(*w, pose, k, RenderStyle{gen_->palette()}, config_.workers);
    set_stage("render", "ok");
    return out;
  }

  std::map<std::string, std::string> stages() const {
    std::lock_guard lock(stage_mutex_);
    return stages_;
  }

 private:
  struct CacheEntry {
    Rect rect;
    std::shared_ptr<const CdnTile> tile;
  };
  struct IdempotentEntry {
    std::string key, fingerprint;
    ResampleResult result;
  };

  static std::string key(const Rect& r) { return to_string(r); }

  void check_tile_rect(const Rect& r) const {
    if (r.empty()) throw InvalidArgument("tile rect must be non-empty");
    if (r.w > config_.max_tile_side || r.h > config_.max_tile_side)
      throw BudgetExceeded("tile side exceeds " + std::to_string(config_.max_tile_side));
  }

  void insert(const Rect& rect, std::shared_ptr<const CdnTile> tile) {
    if (config_.tile_cache_entries == 0) return;
    if (auto it = cache_index_.find(key(rect)); it != cache_index_.end()) {
      cache_.splice(cache_.begin(), cache_, it->second);
      return;
    }
    cache_.push_front({rect, std::move(tile)});
    cache_index_[key(rect)] = cache_.begin();
    while (cache_.size() > config_.tile_cache_entries) {
      cache_index_.erase(key(cache_.back().rect));
      cache_.pop_back();
    }
  }

  void set_stage(const std::string& stage, const std::string& status) {
    std::lock_guard lock(stage_mutex_);
    stages_[stage] = status;
  }

  void run_build(std::stop_token stop, WorldEntry& entry, const LatentField& field, const ProceduralMapGenerator& gen,
                 const Rect& rect, Completion mode, std::size_t batch) {
    constexpr int E = OctreeBlock::kEdge;
    try {
      entry.update([](WorldProgress& p) { p.stage = "synthesize"; });
      CdnTile tile = synthesize_region(field, gen, rect, batch);
      entry.update([](WorldProgress& p) { p.stage = "clean"; });
      clean_tile(tile);
      entry.update([](WorldProgress& p) { p.stage = "lift"; });
      const int nbx = tile.width() / E, nby = tile.height() / E;
      std::vector<OctreeBlock> blocks;
      for (int j = 0; j < nby; ++j)
        for (int i = 0; i < nbx; ++i) {
          if (stop.stop_requested()) {
            entry.update([](WorldProgress& p) { p.status = BuildStatus::kCancelled; });
            return;
          }
          const BlockCoord bc{static_cast<std::int32_t>(rect.x / E + i), static_cast<std::int32_t>(rect.y / E + j)};
          blocks.push_back(complete(lift_tile(tile.crop(i * E, j * E, E, E), bc), mode));
          entry.update([](WorldProgress& p) { ++p.blocks_done; });
        }
      entry.update([](WorldProgress& p) { p.stage = "assemble"; });
      auto world = std::make_shared<const VoxelWorld>(assemble_world(std::move(blocks)));
      entry.finish(std::move(world), std::move(tile));
      set_stage("world", "ok");
    } catch (const std::exception& e) {
      entry.update([&](WorldProgress& p) {
        p.status = BuildStatus::kFailed;
        p.error = e.what();
      });
      set_stage("world", "failed");
    }
  }

  const std::string id_;
  const std::shared_ptr<const ProceduralMapGenerator> gen_;
  const ServiceConfig config_;

  // Lock order: mutation_mutex_, worlds_mutex_, state_mutex_, cache_mutex_.
  std::mutex mutation_mutex_;
  mutable std::shared_mutex state_mutex_;
  std::shared_ptr<const LatentField> field_;
  std::uint64_t generation_ = 0;

  mutable std::mutex cache_mutex_;
  std::list<CacheEntry> cache_;  // most recently used first
  std::unordered_map<std::string, std::list<CacheEntry>::iterator> cache_index_;

  std::deque<IdempotentEntry> idempotency_;

  mutable std::mutex worlds_mutex_;
  std::map<std::uint64_t, std::shared_ptr<WorldEntry>> worlds_;
  std::shared_ptr<WorldEntry> building_;
  std::uint64_t next_world_ = 0;

  mutable std::mutex stage_mutex_;
  std::map<std::string, std::string> stages_;

  std::jthread builder_;  // last member: joined before the state it uses goes away
};

/// Bounded store of sessions; the least recently used session is evicted
/// when a new one would exceed the limit.
class Service {
 public:
  explicit Service(ServiceConfig config = {}, Palette palette = Palette::default_palette())
      : config_(config),
        gen_(std::make_shared<const ProceduralMapGenerator>(GeneratorConfig{64, ReceptiveField{64}, config.workers},
                                                            std::move(palette))) {
    if (config_.max_sessions == 0) throw InvalidArgument("max_sessions must be positive");
  }

  const ServiceConfig& config() const { return config_; }
  const ProceduralMapGenerator& generator() const { return *gen_; }

  std::string create_session(std::uint64_t seed) {
    std::lock_guard lock(mutex_);
    const std::string id = "s" + std::to_string(++next_id_);
    order_.push_front(id);
    sessions_[id] = {std::make_shared<Session>(id, seed, gen_, config_), order_.begin()};
    while (sessions_.size() > config_.max_sessions) {
      sessions_.erase(order_.back());
      order_.pop_back();
    }
    return id;
  }

  std::shared_ptr<Session> session(const std::string& id) {
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw NotFound("unknown session '" + id + "'");
    order_.splice(order_.begin(), order_, it->second.second);
    return it->second.first;
  }

  void delete_session(const std::string& id) {
    std::shared_ptr<Session> doomed;
    {
      std::lock_guard lock(mutex_);
      auto it = sessions_.find(id);
      if (it == sessions_.end()) throw NotFound("unknown session '" + id + "'");
      doomed = std::move(it->second.first);
      order_.erase(it->second.second);
      sessions_.erase(it);
    }
  }

  std::size_t session_count() const {
    std::lock_guard lock(mutex_);
    return sessions_.size();
  }

 private:
  ServiceConfig config_;
  std::shared_ptr<const ProceduralMapGenerator> gen_;
  mutable std::mutex mutex_;
  std::list<std::string> order_;  // most recently used first
  std::unordered_map<std::string, std::pair<std::shared_ptr<Session>, std::list<std::string>::iterator>> sessions_;
  std::uint64_t next_id_ = 0;
};

// ---------------------------------------------------------------------------
// HTTP binding. Bodies are JSON; tiles are PNG.

namespace detail {

inline int status_for(const std::exception& e) {
  if (dynamic_cast<const NotFound*>(&e)) return 404;
  if (dynamic_cast<const Conflict*>(&e)) return 409;
  if (dynamic_cast<const BudgetExceeded*>(&e)) return 413;
  if (dynamic_cast<const NoValidPose*>(&e)) return 422;
  if (dynamic_cast<const InvalidArgument*>(&e) || dynamic_cast<const OutOfRange*>(&e) ||
      dynamic_cast<const ParseError*>(&e) || dynamic_cast<const nlohmann::json::exception*>(&e))
    return 400;
  return 500;
}

template <class F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const std::exception& e) {
      res.status = status_for(e);
      res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
    }
  };
}

inline void reply(httplib::Response& res, const nlohmann::json& j, int status = 200) {
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

inline nlohmann::json body(const httplib::Request& req) {
  if (req.body.empty()) return nlohmann::json::object();
  return nlohmann::json::parse(req.body);
}

inline std::int64_t int_param(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) throw InvalidArgument(std::string("missing query parameter '") + name + "'");
  const std::string v = req.get_param_value(name);
  try {
    std::size_t used = 0;
    const std::int64_t n = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::logic_error&) {
    throw InvalidArgument(std::string("query parameter '") + name + "' is not an integer: " + v);
  }
}

}  // namespace detail

inline nlohmann::json render_to_json(const RenderOutput& out, const Palette& palette) {
  std::size_t hits = 0;
  for (float d : out.depth.data()) hits += std::isfinite(d);
  return {{"width", out.width()},
          {"height", out.height()},
          {"hits", hits},
          {"shaded_png", base64_encode(encode_png(out.shaded))},
          {"semantic_png", base64_encode(encode_category_png(out.semantic, palette))},
          {"depth_idep", base64_encode(write_idep(out.depth))}};
}

/// Routes:
///   POST   /sessions                             {"seed"}
///   GET    /sessions/{s}
///   DELETE /sessions/{s}
///   GET    /sessions/{s}/tiles?x=&y=&w=&h=&layer=
///   POST   /sessions/{s}/resample                {"rect", "seed", "idempotency_key"?}
///   POST   /sessions/{s}/worlds                  {"rect", "completion"}
///   GET    /sessions/{s}/worlds/{w}
///   POST   /sessions/{s}/worlds/{w}/cameras      {"n", "seed"}
///   POST   /sessions/{s}/worlds/{w}/render       {"pose", "width", "height", "fov"}
inline void mount_routes(httplib::Server& server, Service& service) {
  using detail::guarded;
  using detail::reply;
  using nlohmann::json;
  const std::string S = "/sessions/([A-Za-z0-9]+)";
  const std::string W = S + "/worlds/([0-9]+)";

  server.Get("/health", guarded([](const httplib::Request&, httplib::Response& res) { reply(res, {{"ok", true}}); }));

  server.Post("/sessions", guarded([&service](const httplib::Request& req, httplib::Response& res) {
    const json b = detail::body(req);
    const std::string id = service.create_session(b.value("seed", std::uint64_t{0}));
    reply(res, {{"session", id}}, 201);
  }));

  server.Get(S, guarded([&service](const httplib::Request& req, httplib::Response& res) {
    auto s = service.session(req.matches[1]);
    json worlds = json::array();
    for (const auto& w : s->worlds()) worlds.push_back(to_json(w));
    reply(res, {{"session", s->id()},
                {"seed", s->seed()},
                {"generation", s->generation()},
                {"cached_tiles", s->cached_tiles()},
                {"stages", s->stages()},
                {"worlds", worlds}});
  }));

  server.Delete(S, guarded([&service](const httplib::Request& req, httplib::Response& res) {
    service.delete_session(req.matches[1]);
    reply(res, {{"deleted", std::string(req.matches[1])}});
  }));

  server.Get(S + "/tiles", guarded([&service](const httplib::Request& req, httplib::Response& res) {
    auto s = service.session(req.matches[1]);
    const Rect r{detail::int_param(req, "x"), detail::int_param(req, "y"), detail::int_param(req, "w"),
                 detail::int_param(req, "h")};
    const TileLayer layer = parse_layer(req.has_param("layer") ? req.get_param_value("layer") : "category");
    const TileResponse t = s->get_tile(r, layer);
    res.set_header("X-Cache", t.cache_hit ? "hit" : "miss");
    res.set_header("X-Generation", std::to_string(t.generation));
    res.set_content(std::string(t.png.begin(), t.png.end()), "image/png");
  }));

  server.Post(S + "/resample", guarded([&service](const httplib::Request& req, httplib::Response& res) {
    auto s = service.session(req.matches[1]);
    const json b = detail::body(req);
    std::string key = b.value("idempotency_key", std::string());
    if (key.empty() && req.has_header("Idempotency-Key")) key = req.get_header_value("Idempotency-Key");
    reply(res, to_json(s->resample(b.at("rect").get<Rect>(), b.at("seed").get<std::uint64_t>(), key)));
  }));

  server.Post(S + "/worlds", guarded([&service](const httplib::Request& req, httplib::Response& res) {
    auto s = service.session(req.matches[1]);
    const json b = detail::body(req);
    const std::uint64_t id =
        s->build_world(b.at("rect").get<Rect>(), parse_completion(b.value("completion", std::string("pillar"))));
    reply(res, {{"world", id}, {"progress", "/sessions/" + s->id() + "/worlds/" + std::to_string(id)}}, 202);
  }));

  server.Get(W, guarded([&service](const httplib::Request& req, httplib::Response& res) {
    auto s = service.session(req.matches[1]);
    reply(res, to_json(s->world(std::stoull(req.matches[2]))->progress()));
  }));

  server.Post(W + "/cameras", guarded([&service](const httplib::Request& req, httplib::Response& res) {
    auto s = service.session(req.matches[1]);
    const json b = detail::body(req);
    const auto poses = s->sample_cameras(std::stoull(req.matches[2]), b.at("n").get<std::size_t>(),
                                         b.value("seed", std::uint64_t{0}));
    reply(res, {{"poses", poses}});
  }));

  server.Post(W + "/render", guarded([&service](const httplib::Request& req, httplib::Response& res) {
    auto s = service.session(req.matches[1]);
    const json b = detail::body(req);
    Intrinsics k;
    k.width = b.value("width", 256);
    k.height = b.value("height", 256);
    k.vertical_fov_deg = b.value("fov", 60.0);
    const RenderOutput out = s->render(std::stoull(req.matches[2]), b.at("pose").get<CameraPose>(), k);
    reply(res, render_to_json(out, service.generator().palette()));
  }));
}

}  // namespace infinicity
