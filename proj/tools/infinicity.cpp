#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <regex>
#include <sstream>

#include "infinicity/camsample.hpp"
#include "infinicity/image_io.hpp"
#include "infinicity/ingest.hpp"
#include "infinicity/metrics.hpp"
#include "infinicity/pipeline.hpp"
#include "infinicity/render.hpp"
#include "infinicity/service.hpp"

namespace fs = std::filesystem;
using namespace infinicity;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

class ConfigError : public Error {
 public:
  using Error::Error;
};

std::string g_command;

void log(Fields f) {
  f.insert(f.begin(), {"cmd", g_command});
  std::cerr << kv_line(f) << '\n';
}

// Interprets flag values; anything thrown here is a configuration error.
template <class F>
auto config(F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

void require_file(const std::string& path) {
  if (!fs::is_regular_file(path)) throw ConfigError("no such file: " + path);
}

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

void write_out(const fs::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file(path.string(), bytes);
  log({{"event", "artifact"}, {"path", path.string()}, {"bytes", std::to_string(bytes.size())},
       {"sha256", sha256_hex(bytes)}});
}

VoxelWorld load_world(const std::string& path) {
  require_file(path);
  return read_iwrl(read_file(path)).world;
}

ProceduralMapGenerator make_generator(unsigned workers) {
  return ProceduralMapGenerator(GeneratorConfig{64, ReceptiveField{64}, workers});
}

// ---------------------------------------------------------------------------

struct MapSynthArgs {
  std::uint64_t seed = 0;
  std::string field, rect, out, save_field;
  std::size_t batch = 8;
  unsigned workers = 0;
};

int map_synth(const MapSynthArgs& a) {
  const Rect rect = config([&] { return parse_rect(a.rect); });
  if (!a.field.empty()) require_file(a.field);
  const LatentField field = a.field.empty() ? sample_field(a.seed) : read_iclf(read_file(a.field));
  SynthesisStats stats;
  const ProceduralMapGenerator gen = make_generator(a.workers);
  const CdnTile tile = synthesize_region(field, gen, rect, a.batch, &stats);
  write_out(a.out, write_icdn(tile, gen.palette()));
  if (!a.save_field.empty()) write_out(a.save_field, write_iclf(field));
  log({{"event", "synthesized"}, {"rect", to_string(rect)}, {"jobs", std::to_string(stats.jobs)},
       {"batches", std::to_string(stats.batches)}});
  return kExitOk;
}

struct MapResampleArgs {
  std::string field, rect, out;
  std::uint64_t seed = 0;
};

int map_resample(const MapResampleArgs& a) {
  const Rect rect = config([&] { return parse_rect(a.rect); });
  require_file(a.field);
  const LatentField field = read_iclf(read_file(a.field));
  const ReceptiveField rf = make_generator(1).receptive_field();
  const LatentField next = resample_region(field, rect, rf, a.seed);
  const Rect footprint = affected_footprint(rect, rf);
  write_out(a.out.empty() ? a.field : a.out, write_iclf(next));
  log({{"event", "resampled"},
       {"rect", to_string(rect)},
       {"footprint", to_string(footprint)},
       {"cells", std::to_string(calibrate_region(rect, ReceptiveField{0}, field.cell_stride()).size())},
       {"jobs", std::to_string(patches_covering(footprint, 64).size())}});
  return kExitOk;
}

struct IngestArgs {
  std::string mesh, out;
  double voxel = 1.0;
};

std::string block_name(const char* prefix, BlockCoord c, const char* ext) {
  return std::string(prefix) + "_" + std::to_string(c.bx) + "_" + std::to_string(c.by) + ext;
}

int ingest(const IngestArgs& a) {
  require_file(a.mesh);
  if (!(a.voxel > 0.0)) throw ConfigError("voxel size must be positive");
  const auto raw = read_file(a.mesh);
  const LabeledMesh mesh = parse_tmesh(std::string_view(reinterpret_cast<const char*>(raw.data()), raw.size()));
  const auto blocks = ingest_mesh(mesh, a.voxel);
  const Palette palette = Palette::default_palette();
  std::size_t voxels = 0;
  for (const auto& [coord, block] : blocks) {
    write_out(fs::path(a.out) / block_name("block", coord, ".ioct"), serialize_block(block));
    write_out(fs::path(a.out) / block_name("tile", coord, ".icdn"), write_icdn(topdown_scan(block), palette));
    voxels += block.occupied_count();
  }
  log({{"event", "ingested"}, {"triangles", std::to_string(mesh.triangles.size())},
       {"blocks", std::to_string(blocks.size())}, {"surface_voxels", std::to_string(voxels)}});
  return kExitOk;
}

struct WorldBuildArgs {
  std::string tiles, completion = "pillar", out;
  unsigned workers = 0;
};

int world_build(const WorldBuildArgs& a) {
  const Completion mode = config([&] { return parse_completion(a.completion); });
  if (!fs::is_directory(a.tiles)) throw ConfigError("not a directory: " + a.tiles);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(a.tiles))
    if (e.is_regular_file() && e.path().extension() == ".icdn") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("no .icdn tiles in " + a.tiles);
  const std::regex named(R"(tile_(-?\d+)_(-?\d+)\.icdn)");
  std::vector<OctreeBlock> blocks;
  for (const auto& f : files) {
    std::smatch m;
    const std::string name = f.filename().string();
    BlockCoord at{};
    if (std::regex_match(name, m, named)) {
      at = {std::stoi(m[1]), std::stoi(m[2])};
    } else if (files.size() > 1) {
      throw ConfigError("tile " + name + " lacks a tile_BX_BY.icdn name; only a lone tile may be unnamed");
    }
    const IcdnFile tile = read_icdn(read_file(f.string()));
    const VoxelWorld part = build_world(tile.tile, mode, at.bx, at.by, a.workers);
    blocks.insert(blocks.end(), part.blocks().begin(), part.blocks().end());
  }
  const VoxelWorld world = assemble_world(std::move(blocks));
  write_out(a.out, write_iwrl(world, {{"completion", std::string(to_string(mode))}}));
  log({{"event", "world"}, {"blocks", std::to_string(world.blocks().size())},
       {"occupied_voxels", std::to_string(world.occupied_count())}});
  return kExitOk;
}

struct ExportPointsArgs {
  std::string world, out;
};

int export_points(const ExportPointsArgs& a) {
  const VoxelWorld world = load_world(a.world);
  std::ostringstream text;
  for (const auto& b : world.blocks()) {
    const std::int64_t ox = std::int64_t{b.coord().bx} * OctreeBlock::kEdge;
    const std::int64_t oy = std::int64_t{b.coord().by} * OctreeBlock::kEdge;
    b.for_each([&](VoxelCoord c, const Voxel& v) {
      text << (ox + c.x) + 0.5 << ' ' << (oy + c.y) + 0.5 << ' ' << c.z + 0.5 << ' ' << int(v.class_id) << '\n';
    });
  }
  write_out(a.out, bytes_of(text.str()));
  log({{"event", "points"}, {"count", std::to_string(world.occupied_count())}});
  return kExitOk;
}

struct CameraArgs {
  std::string world, mask, out;
  std::size_t n = 100;
  std::uint64_t seed = 0;
  double eye = kDefaultEyeHeight;
  bool refine = false;
};

int camera_sample(const CameraArgs& a) {
  if (a.n == 0) throw ConfigError("--n must be positive");
  const VoxelWorld world = load_world(a.world);
  WalkableMask mask;
  if (a.mask.empty()) {
    mask = refine_mask(label_walkable(world_topdown(world), Palette::default_palette(), world.min_x(), world.min_y()));
  } else {
    require_file(a.mask);
    mask = WalkableMask{decode_mask_png(read_file(a.mask)), world.min_x(), world.min_y(), {a.mask}};
    if (mask.width() != world.max_x() - world.min_x() || mask.height() != world.max_y() - world.min_y())
      throw ConfigError("mask size does not match the world extent");
    if (a.refine) mask = refine_mask(mask);
  }
  const auto poses = sample_cameras(mask, world, a.n, a.seed, a.eye);
  std::string text;
  for (const auto& p : poses) text += nlohmann::json(p).dump() + "\n";
  write_out(a.out, bytes_of(text));
  log({{"event", "cameras"}, {"count", std::to_string(poses.size())}, {"walkable_px", std::to_string(mask.count())}});
  return kExitOk;
}

std::vector<CameraPose> read_poses(const std::string& path) {
  require_file(path);
  std::ifstream in(path);
  std::vector<CameraPose> poses;
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      poses.push_back(nlohmann::json::parse(line).get<CameraPose>());
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path + " line " + std::to_string(n) + ": " + e.what());
    }
  }
  if (poses.empty()) throw ConfigError("no poses in " + path);
  return poses;
}

struct RenderArgs {
  std::string world, poses, size = "512x512", out;
  double fov = 60.0;
  unsigned workers = 0;
};

int render(const RenderArgs& a) {
  const Intrinsics k = config([&] {
    const auto [w, h] = parse_size(a.size);
    Intrinsics in{w, h, a.fov};
    in.validate();
    return in;
  });
  const auto poses = read_poses(a.poses);
  const VoxelWorld world = load_world(a.world);
  const Palette palette = Palette::default_palette();
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const RenderOutput out = render_view(world, poses[i], k, RenderStyle{palette}, a.workers);
    char stem[32];
    std::snprintf(stem, sizeof stem, "%04zu_", i);
    write_out(fs::path(a.out) / (stem + std::string("semantic.png")), encode_category_png(out.semantic, palette));
    write_out(fs::path(a.out) / (stem + std::string("depth.idep")), write_idep(out.depth));
    write_out(fs::path(a.out) / (stem + std::string("shaded.png")), encode_png(out.shaded));
  }
  log({{"event", "rendered"}, {"frames", std::to_string(poses.size())}});
  return kExitOk;
}

struct StatsArgs {
  std::string world, out;
};

int stats(const StatsArgs& a) {
  const OccupancyStats s = world_stats(load_world(a.world));
  const std::string text = to_json(s).dump(2) + "\n";
  if (a.out.empty())
    std::fputs(text.c_str(), stdout);
  else
    write_out(a.out, bytes_of(text));
  log({{"event", "stats"}, {"occupied_voxels", std::to_string(s.occupied_voxels)},
       {"column_contiguity", std::to_string(s.column_contiguity)}});
  return kExitOk;
}

struct PipelineArgs {
  std::uint64_t seed = 0, camera_seed = 0;
  std::string extent = "128x128", completion = "pillar", size = "128x128", map, out = "run";
  std::size_t cameras = 4, batch = 8;
  double fov = 60.0;
  unsigned workers = 0;
};

int pipeline(const PipelineArgs& a) {
  const PipelineConfig cfg = config([&] {
    PipelineConfig c;
    c.seed = a.seed;
    std::tie(c.extent_w, c.extent_h) = parse_size(a.extent);
    c.completion = parse_completion(a.completion);
    c.cameras = a.cameras;
    c.camera_seed = a.camera_seed;
    std::tie(c.frame_width, c.frame_height) = parse_size(a.size);
    c.fov_deg = a.fov;
    c.batch_size = a.batch;
    c.workers = a.workers;
    if (!a.map.empty()) {
      require_file(a.map);
      c.map_override = a.map;
    }
    c.out_dir = a.out;
    c.validate();
    return c;
  });
  const PipelineManifest m = pipeline_run(cfg, [](const std::string& line) { std::cerr << "cmd=" << g_command << ' ' << line << '\n'; });
  std::cout << m.hash() << '\n';
  return kExitOk;
}

struct ServeArgs {
  std::string host = "127.0.0.1";
  int port = 8080;
  ServiceConfig service;
};

httplib::Server* g_server = nullptr;

int serve(const ServeArgs& a) {
  if (a.port < 0 || a.port > 65535) throw ConfigError("port out of range");
  Service service = config([&] { return Service(a.service); });
  httplib::Server server;
  mount_routes(server, service);
  server.set_logger([](const httplib::Request& req, const httplib::Response& res) {
    log({{"event", "request"}, {"method", req.method}, {"path", req.path}, {"status", std::to_string(res.status)}});
  });
  g_server = &server;
  std::signal(SIGINT, [](int) { if (g_server) g_server->stop(); });
  std::signal(SIGTERM, [](int) { if (g_server) g_server->stop(); });
  log({{"event", "listening"}, {"host", a.host}, {"port", std::to_string(a.port)}});
  if (!server.listen(a.host, a.port)) throw Error("cannot listen on " + a.host + ":" + std::to_string(a.port));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Procedural infinite-city pipeline: map synthesis, voxel worlds, cameras and rendering."};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.set_config("--config", "", "Read flags from a TOML or INI file; sections name subcommands");
  app.require_subcommand(1);
  std::function<int()> action;
  auto bind = [&](CLI::App* sub, std::string name, auto fn) {
    sub->callback([&action, name, fn] {
      g_command = name;
      action = fn;
    });
  };

  auto* map = app.add_subcommand("map", "Satellite map synthesis")->require_subcommand(1);
  MapSynthArgs synth;
  auto* synth_cmd = map->add_subcommand("synth", "Synthesize a map region to a .icdn tile");
  synth_cmd->add_option("--seed", synth.seed, "Latent field seed");
  synth_cmd->add_option("--field", synth.field, "Use a saved .iclf field instead of --seed");
  synth_cmd->add_option("--rect", synth.rect, "Region as X,Y,W,H")->required();
  synth_cmd->add_option("--out", synth.out, "Output .icdn")->required();
  synth_cmd->add_option("--save-field", synth.save_field, "Also write the field as .iclf");
  synth_cmd->add_option("--batch", synth.batch, "Patches per generator batch")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--workers", synth.workers, "Worker threads (0 = all cores)");
  bind(synth_cmd, "map.synth", [&] { return map_synth(synth); });

  MapResampleArgs resample;
  auto* resample_cmd = map->add_subcommand("resample", "Redraw the latents under a region of a saved field");
  resample_cmd->add_option("--field", resample.field, "Field .iclf, rewritten unless --out is given")->required();
  resample_cmd->add_option("--rect", resample.rect, "Region as X,Y,W,H")->required();
  resample_cmd->add_option("--seed", resample.seed, "Resampling seed")->required();
  resample_cmd->add_option("--out", resample.out, "Write the new field here instead");
  bind(resample_cmd, "map.resample", [&] { return map_resample(resample); });

  IngestArgs ing;
  auto* ingest_cmd = app.add_subcommand("ingest", "Voxelize a labelled .tmesh into .ioct blocks and .icdn tiles");
  ingest_cmd->add_option("--mesh", ing.mesh, "Input .tmesh")->required();
  ingest_cmd->add_option("--out", ing.out, "Output directory")->required();
  ingest_cmd->add_option("--voxel", ing.voxel, "Voxel edge in metres");
  bind(ingest_cmd, "ingest", [&] { return ingest(ing); });

  auto* world = app.add_subcommand("world", "Voxel worlds")->require_subcommand(1);
  WorldBuildArgs wb;
  auto* build_cmd = world->add_subcommand("build", "Lift, complete and assemble tiles into a .iwrl world");
  build_cmd->add_option("--tiles", wb.tiles, "Directory of .icdn tiles (tile_BX_BY.icdn)")->required();
  build_cmd->add_option("--completion", wb.completion, "pillar or watertight");
  build_cmd->add_option("--out", wb.out, "Output .iwrl")->required();
  build_cmd->add_option("--workers", wb.workers, "Worker threads (0 = all cores)");
  bind(build_cmd, "world.build", [&] { return world_build(wb); });

  ExportPointsArgs ep;
  auto* points_cmd = world->add_subcommand("export-points", "Write voxel centres as 'x y z class' lines");
  points_cmd->add_option("--world", ep.world, "Input .iwrl")->required();
  points_cmd->add_option("--out", ep.out, "Output .xyz")->required();
  bind(points_cmd, "world.export-points", [&] { return export_points(ep); });

  auto* camera = app.add_subcommand("camera", "Camera sampling")->require_subcommand(1);
  CameraArgs cam;
  auto* sample_cmd = camera->add_subcommand("sample", "Sample ground-level poses on walkable pixels");
  sample_cmd->add_option("--world", cam.world, "Input .iwrl")->required();
  sample_cmd->add_option("--mask", cam.mask, "Walkable mask PNG covering the world; derived from the world if absent");
  sample_cmd->add_flag("--refine", cam.refine, "Apply erosion and component pruning to --mask");
  sample_cmd->add_option("--n", cam.n, "Number of poses");
  sample_cmd->add_option("--seed", cam.seed, "Sampling seed");
  sample_cmd->add_option("--eye-height", cam.eye, "Camera height above ground in metres");
  sample_cmd->add_option("--out", cam.out, "Output .jsonl")->required();
  bind(sample_cmd, "camera.sample", [&] { return camera_sample(cam); });

  RenderArgs ren;
  auto* render_cmd = app.add_subcommand("render", "Render semantic, depth and shaded frames for each pose");
  render_cmd->add_option("--world", ren.world, "Input .iwrl")->required();
  render_cmd->add_option("--poses", ren.poses, "Pose .jsonl")->required();
  render_cmd->add_option("--size", ren.size, "Frame size WxH");
  render_cmd->add_option("--fov", ren.fov, "Vertical field of view in degrees");
  render_cmd->add_option("--out", ren.out, "Output directory")->required();
  render_cmd->add_option("--workers", ren.workers, "Worker threads (0 = all cores)");
  bind(render_cmd, "render", [&] { return render(ren); });

  StatsArgs st;
  auto* stats_cmd = app.add_subcommand("stats", "Occupancy statistics of a world as JSON");
  stats_cmd->add_option("--world", st.world, "Input .iwrl")->required();
  stats_cmd->add_option("--out", st.out, "Output .json (default stdout)");
  bind(stats_cmd, "stats", [&] { return stats(st); });

  auto* pipe = app.add_subcommand("pipeline", "End-to-end runs")->require_subcommand(1);
  PipelineArgs pa;
  auto* run_cmd = pipe->add_subcommand("run", "Map, clean, lift, complete, assemble, mask, cameras and render");
  run_cmd->add_option("--seed", pa.seed, "Map seed");
  run_cmd->add_option("--extent", pa.extent, "Map extent WxH, multiples of 64");
  run_cmd->add_option("--completion", pa.completion, "pillar or watertight");
  run_cmd->add_option("--cameras", pa.cameras, "Number of camera poses");
  run_cmd->add_option("--camera-seed", pa.camera_seed, "Camera seed (0 = map seed)");
  run_cmd->add_option("--size", pa.size, "Frame size WxH");
  run_cmd->add_option("--fov", pa.fov, "Vertical field of view in degrees");
  run_cmd->add_option("--map", pa.map, "Use this .icdn map instead of synthesizing one");
  run_cmd->add_option("--batch", pa.batch, "Patches per generator batch");
  run_cmd->add_option("--workers", pa.workers, "Worker threads (0 = all cores)");
  run_cmd->add_option("--out", pa.out, "Output directory");
  bind(run_cmd, "pipeline.run", [&] { return pipeline(pa); });

  ServeArgs sv;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP API for interactive sessions");
  serve_cmd->add_option("--host", sv.host, "Bind address")->envname("INFINICITY_HOST");
  serve_cmd->add_option("--port", sv.port, "Port")->envname("INFINICITY_PORT");
  serve_cmd->add_option("--max-sessions", sv.service.max_sessions, "Sessions kept before LRU eviction")
      ->envname("INFINICITY_MAX_SESSIONS");
  serve_cmd->add_option("--cache-size", sv.service.tile_cache_entries, "Cached tiles per session")
      ->envname("INFINICITY_CACHE_SIZE");
  serve_cmd->add_option("--max-world-pixels", sv.service.max_world_pixels, "Largest world build in map pixels")
      ->envname("INFINICITY_MAX_WORLD_PIXELS");
  serve_cmd->add_option("--max-render-pixels", sv.service.max_render_pixels, "Largest render in pixels")
      ->envname("INFINICITY_MAX_RENDER_PIXELS");
  serve_cmd->add_option("--workers", sv.service.workers, "Worker threads (0 = all cores)");
  bind(serve_cmd, "serve", [&] { return serve(sv); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    const int rc = action();
    log({{"event", "done"}, {"status", "ok"}});
    return rc;
  } catch (const ConfigError& e) {
    log({{"event", "done"}, {"status", "config_error"}, {"error", e.what()}});
    return kExitConfig;
  } catch (const StageFailure& e) {
    log({{"event", "done"}, {"status", "stage_failure"}, {"stage", e.stage()}, {"error", e.cause()}});
    return kExitStage;
  } catch (const std::exception& e) {
    log({{"event", "done"}, {"status", "stage_failure"}, {"stage", g_command}, {"error", e.what()}});
    return kExitStage;
  }
}
