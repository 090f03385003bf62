#pragma once

// End-to-end batch run: map -> clean -> lift -> complete -> assemble -> mask
// -> cameras -> render, writing every artifact and a manifest of their
// SHA-256 hashes.

#include <chrono>
#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <json.hpp>

#include "infinicity/camsample.hpp"
#include "infinicity/core.hpp"
#include "infinicity/digest.hpp"
#include "infinicity/image_io.hpp"
#include "infinicity/latentgrid.hpp"
#include "infinicity/map_generator.hpp"
#include "infinicity/metrics.hpp"
#include "infinicity/render.hpp"
#include "infinicity/satmap.hpp"
#include "infinicity/synthesis.hpp"
#include "infinicity/voxelworld.hpp"

#ifndef INFINICITY_VERSION
#define INFINICITY_VERSION "0.0.0"
#endif

namespace infinicity {

inline constexpr const char* kToolVersion = INFINICITY_VERSION;

/// A stage aborted; carries the stage name and the original cause.
class StageFailure : public Error {
 public:
  StageFailure(std::string stage, const std::string& cause)
      : Error("stage " + stage + " failed: " + cause), stage_(std::move(stage)), cause_(cause) {}
  const std::string& stage() const { return stage_; }
  const std::string& cause() const { return cause_; }

 private:
  std::string stage_, cause_;
};

// ---------------------------------------------------------------------------
// Line-structured logging: one event per line, space-separated key=value,
// values quoted when they contain spaces, quotes or '='.

using Fields = std::vector<std::pair<std::string, std::string>>;

inline std::string kv_quote(const std::string& v) {
  if (!v.empty() && v.find_first_of(" \"=\t\n") == std::string::npos) return v;
  std::string out = "\"";
  for (char c : v) {
    if (c == '"' || c == '\\') out.push_back('\\');
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out.push_back(c);
  }
  return out + "\"";
}

inline std::string kv_line(const Fields& fields) {
  std::string line;
  for (const auto& [k, v] : fields) {
    if (!line.empty()) line.push_back(' ');
    line += k + "=" + kv_quote(v);
  }
  return line;
}

using LogSink = std::function<void(const std::string&)>;

// ---------------------------------------------------------------------------
// Flag value parsing

/// "X,Y,W,H" with a non-empty extent.
inline Rect parse_rect(const std::string& s) {
  Rect r;
  char c1 = 0, c2 = 0, c3 = 0;
  int used = 0;
  const char* fmt = "%" SCNd64 " %c %" SCNd64 " %c %" SCNd64 " %c %" SCNd64 "%n";
  if (std::sscanf(s.c_str(), fmt, &r.x, &c1, &r.y, &c2, &r.w, &c3, &r.h, &used) != 7 ||
      c1 != ',' || c2 != ',' || c3 != ',' || static_cast<std::size_t>(used) != s.size())
    throw InvalidArgument("expected a rect as X,Y,W,H, got '" + s + "'");
  if (r.empty()) throw InvalidArgument("rect '" + s + "' has no area");
  return r;
}

/// "WxH" with positive sides.
inline std::pair<int, int> parse_size(const std::string& s) {
  int w = 0, h = 0, used = 0;
  char x = 0;
  if (std::sscanf(s.c_str(), "%d %c %d%n", &w, &x, &h, &used) != 3 || (x != 'x' && x != 'X') ||
      static_cast<std::size_t>(used) != s.size() || w <= 0 || h <= 0)
    throw InvalidArgument("expected a size as WxH, got '" + s + "'");
  return {w, h};
}

// ---------------------------------------------------------------------------

struct PipelineConfig {
  std::uint64_t seed = 0;
  int extent_w = 128, extent_h = 128;
  Completion completion = Completion::kPillar;
  std::size_t cameras = 4;
  std::uint64_t camera_seed = 0;
  int frame_width = 128, frame_height = 128;
  double fov_deg = 60.0;
  std::size_t batch_size = 8;
  unsigned workers = 0;
  std::optional<std::string> map_override;  // .icdn replacing the synthesized map
  std::filesystem::path out_dir = "run";

  void validate() const {
    constexpr int E = OctreeBlock::kEdge;
    if (extent_w <= 0 || extent_h <= 0 || extent_w % E != 0 || extent_h % E != 0)
      throw InvalidArgument("extent " + std::to_string(extent_w) + "x" + std::to_string(extent_h) +
                            " must be a positive multiple of 64 on both sides");
    if (cameras == 0) throw InvalidArgument("at least one camera is required");
    Intrinsics{frame_width, frame_height, fov_deg}.validate();
    if (batch_size == 0) throw InvalidArgument("batch size must be positive");
  }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"seed", seed},
                        {"extent", std::to_string(extent_w) + "x" + std::to_string(extent_h)},
                        {"completion", std::string(to_string(completion))},
                        {"cameras", cameras},
                        {"camera_seed", camera_seed},
                        {"frame_size", std::to_string(frame_width) + "x" + std::to_string(frame_height)},
                        {"fov_deg", fov_deg},
                        {"batch_size", batch_size}};
    if (map_override) j["map_override"] = *map_override;
    return j;
  }
};

struct PipelineManifest {
  std::string tool_version;
  std::uint64_t seed = 0;
  nlohmann::json parameters;                   // per stage
  std::map<std::string, std::string> artifacts;  // relative path -> sha256

  nlohmann::json to_json() const {
    return {{"tool", "infinicity"},
            {"tool_version", tool_version},
            {"seed", seed},
            {"parameters", parameters},
            {"artifacts", artifacts}};
  }

  /// Hash of the canonical manifest text; equal runs give equal hashes.
  std::string hash() const { return sha256_hex(to_json().dump()); }
};

namespace detail {

class Run {
 public:
  Run(const PipelineConfig& cfg, LogSink log) : cfg_(cfg), log_(std::move(log)) {}

  template <class F>
  auto stage(const std::string& name, F&& body) {
    const auto t0 = std::chrono::steady_clock::now();
    log({{"event", "stage_start"}, {"stage", name}});
    try {
      if constexpr (std::is_void_v<decltype(body())>) {
        body();
        done(name, t0);
      } else {
        auto r = body();
        done(name, t0);
        return r;
      }
    } catch (const StageFailure&) {
      throw;
    } catch (const std::exception& e) {
      log({{"event", "stage_failed"}, {"stage", name}, {"error", e.what()}});
      throw StageFailure(name, e.what());
    }
  }

  void artifact(const std::string& rel, std::span<const std::uint8_t> bytes) {
    const auto path = cfg_.out_dir / rel;
    std::filesystem::create_directories(path.parent_path());
    write_file(path.string(), bytes);
    const std::string h = sha256_hex(bytes);
    manifest.artifacts[rel] = h;
    log({{"event", "artifact"}, {"path", rel}, {"bytes", std::to_string(bytes.size())}, {"sha256", h}});
  }

  void log(const Fields& f) const {
    if (log_) log_(kv_line(f));
  }

  PipelineManifest manifest;

 private:
  void done(const std::string& name, std::chrono::steady_clock::time_point t0) const {
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0);
    log({{"event", "stage_done"}, {"stage", name}, {"ms", std::to_string(ms.count())}});
  }

  const PipelineConfig& cfg_;
  LogSink log_;
};

inline std::string frame_name(std::size_t k, const char* suffix) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frames/%04zu_", k);
  return buf + std::string(suffix);
}

}  // namespace detail

/// Runs every stage in order and writes manifest.json last. Invalid
/// configuration throws InvalidArgument before anything is written; a stage
/// error throws StageFailure naming the stage.
inline PipelineManifest pipeline_run(const PipelineConfig& cfg, LogSink log = {}) {
  cfg.validate();
  const Palette palette = Palette::default_palette();
  const ProceduralMapGenerator gen(GeneratorConfig{64, ReceptiveField{64}, cfg.workers}, palette);
  detail::Run run(cfg, std::move(log));
  run.manifest.tool_version = kToolVersion;
  run.manifest.seed = cfg.seed;
  run.manifest.parameters = {
      {"config", cfg.to_json()},
      {"map", {{"patch_size", gen.patch_size()}, {"receptive_radius_px", gen.receptive_field().radius_px}}},
      {"clean", {{"passes", nlohmann::json::array()}}},
      {"mask", {{"erosions", kMaskErosions}, {"min_component_px", kDefaultMinComponentPx}}},
      {"cameras", {{"eye_height_m", kDefaultEyeHeight}, {"max_pitch_deg", kMaxPitchDeg}}}};
  for (const auto& p : default_clean_schedule())
    run.manifest.parameters["clean"]["passes"].push_back(
        {{"kernel_radius", p.kernel_radius}, {"space_sigma", p.space_sigma}, {"value_sigma", p.value_sigma}});
  std::filesystem::create_directories(cfg.out_dir);

  CdnTile tile = run.stage("map", [&] {
    CdnTile t;
    if (cfg.map_override) {
      t = read_icdn(read_file(*cfg.map_override)).tile;
      if (t.width() != cfg.extent_w || t.height() != cfg.extent_h)
        throw InvalidArgument("map override is " + std::to_string(t.width()) + "x" + std::to_string(t.height()) +
                              ", extent is " + std::to_string(cfg.extent_w) + "x" + std::to_string(cfg.extent_h));
    } else {
      const LatentField field = sample_field(cfg.seed);
      t = synthesize_region(field, gen, {0, 0, cfg.extent_w, cfg.extent_h}, cfg.batch_size);
      run.artifact("field.iclf", write_iclf(field));
    }
    run.artifact("map.icdn", write_icdn(t, palette));
    return t;
  });

  run.stage("clean", [&] {
    clean_tile(tile);
    run.artifact("map_clean.icdn", write_icdn(tile, palette));
  });

  const VoxelWorld world = run.stage("world", [&] {
    VoxelWorld w = build_world(tile, cfg.completion, 0, 0, cfg.workers);
    run.artifact("world.iwrl", write_iwrl(w, {{"completion", std::string(to_string(cfg.completion))}}));
    run.artifact("stats.json", [&] {
      const std::string s = to_json(world_stats(w)).dump(2) + "\n";
      return std::vector<std::uint8_t>(s.begin(), s.end());
    }());
    return w;
  });

  const WalkableMask mask = run.stage("mask", [&] {
    WalkableMask m = refine_mask(label_walkable(tile, palette));
    run.artifact("walkable.png", encode_mask_png(m.mask));
    run.log({{"event", "mask"}, {"walkable_px", std::to_string(m.count())}});
    return m;
  });

  const auto poses = run.stage("cameras", [&] {
    auto p = sample_cameras(mask, world, cfg.cameras, cfg.camera_seed ? cfg.camera_seed : cfg.seed);
    std::string text;
    for (const auto& pose : p) text += nlohmann::json(pose).dump() + "\n";
    run.artifact("poses.jsonl", std::vector<std::uint8_t>(text.begin(), text.end()));
    return p;
  });

  run.stage("render", [&] {
    const Intrinsics k{cfg.frame_width, cfg.frame_height, cfg.fov_deg};
    const RenderStyle style{palette};
    for (std::size_t i = 0; i < poses.size(); ++i) {
      const RenderOutput out = render_view(world, poses[i], k, style, cfg.workers);
      run.artifact(detail::frame_name(i, "semantic.png"), encode_category_png(out.semantic, palette));
      run.artifact(detail::frame_name(i, "depth.idep"), write_idep(out.depth));
      run.artifact(detail::frame_name(i, "shaded.png"), encode_png(out.shaded));
    }
  });

  const std::string text = run.manifest.to_json().dump(2) + "\n";
  write_file((cfg.out_dir / "manifest.json").string(), std::vector<std::uint8_t>(text.begin(), text.end()));
  run.log({{"event", "manifest"}, {"path", "manifest.json"}, {"sha256", run.manifest.hash()}});
  return run.manifest;
}

}  // namespace infinicity
