#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "trackcast/metrics.hpp"
#include "trackcast/trainer.hpp"

namespace fs = std::filesystem;
using namespace trackcast;

namespace {

std::uint64_t default_seed() {
  if (const char* env = std::getenv("TRACKCAST_SEED")) {
    try {
      return std::stoull(env);
    } catch (...) {
      throw ConfigError("TRACKCAST_SEED is not a valid integer");
    }
  }
  return 0;
}

std::vector<fs::path> scene_files(const std::string& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("not a directory: " + dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".jsonl" &&
        e.path().stem().extension() != ".tracks" && e.path().stem().extension() != ".preds")
      files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<std::vector<SceneFrame>> load_scene_dir(const std::string& dir) {
  std::vector<std::vector<SceneFrame>> scenes;
  for (const auto& p : scene_files(dir)) scenes.push_back(read_scene(p.string()));
  if (scenes.empty()) throw ConfigError("no scene files (*.jsonl) in directory: " + dir);
  return scenes;
}

int cmd_gen(const std::string& config_path, const std::string& out_dir, std::uint64_t seed) {
  ScenarioConfig cfg = load_scenario_config(config_path);
  fs::create_directories(out_dir);
  for (int i = 0; i < cfg.n_scenes; ++i) {
    const std::uint64_t scene_seed = seed * 1000003ULL + cfg.seed + static_cast<std::uint64_t>(i);
    Scene scene = generate_scene(cfg, scene_seed);
    NoiseModel noise = sample_noise_model(cfg, scene, scene_seed);
    auto frames = render_detections(scene, noise, scene_seed + 0x51ed2701ULL);
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%04d.jsonl", i);
    write_scene(frames, (fs::path(out_dir) / name).string());
  }
  std::cout << "wrote " << cfg.n_scenes << " scenes to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& scenes_dir,
              const std::string& out_dir, const std::string& val_dir, std::uint64_t seed,
              bool seed_given) {
  TrainConfig cfg = load_train_config(config_path);
  if (seed_given) cfg.seed = seed;
  auto train_scenes = load_scene_dir(scenes_dir);
  std::vector<std::vector<SceneFrame>> val_scenes;
  if (!val_dir.empty()) val_scenes = load_scene_dir(val_dir);
  JointModel model(cfg.model, cfg.seed);
  Trainer trainer(model, cfg);
  auto log = trainer.run(train_scenes, val_scenes, out_dir);
  double last_track = 0.0, last_pred = 0.0;
  if (!log.empty()) {
    last_track = log.back().track;
    last_pred = log.back().pred;
  }
  std::cout << "trained " << cfg.epochs << " epochs; final track loss " << last_track
            << ", prediction loss " << last_pred << "; checkpoints in " << out_dir << "\n";
  return 0;
}

int cmd_track(const std::string& ckpt, const std::string& scenes_dir, const std::string& out_dir,
              const RuntimeFlags& flags) {
  auto model = JointModel::load_checkpoint(ckpt);
  fs::create_directories(out_dir);
  int n = 0;
  for (const auto& p : scene_files(scenes_dir)) {
    auto frames = read_scene(p.string());
    SceneRun run = run_stream(*model, frames, flags);
    const std::string stem = p.stem().string();
    write_tracks(run.tracks, (fs::path(out_dir) / (stem + ".tracks.jsonl")).string());
    write_predictions(run.predictions, (fs::path(out_dir) / (stem + ".preds.jsonl")).string());
    ++n;
  }
  if (n == 0) throw ConfigError("no scene files (*.jsonl) in directory: " + scenes_dir);
  std::cout << "tracked " << n << " scenes into " << out_dir << "\n";
  return 0;
}

int cmd_eval(const std::string& runs_dir, const std::string& scenes_dir, const std::string& out_path,
             double dt) {
  if (!fs::is_directory(runs_dir)) throw ConfigError("not a directory: " + runs_dir);
  std::vector<SceneEvalInput> scenes;
  for (const auto& p : scene_files(scenes_dir)) {
    const std::string stem = p.stem().string();
    SceneEvalInput in;
    in.name = stem;
    in.gt = read_scene(p.string());
    const fs::path tracks = fs::path(runs_dir) / (stem + ".tracks.jsonl");
    const fs::path preds = fs::path(runs_dir) / (stem + ".preds.jsonl");
    if (!fs::exists(tracks) || !fs::exists(preds))
      throw ConfigError("missing run outputs for scene '" + stem + "' in " + runs_dir);
    in.tracks = read_tracks(tracks.string());
    in.preds = read_predictions(preds.string());
    scenes.push_back(std::move(in));
  }
  if (scenes.empty()) throw ConfigError("no scenes to evaluate in " + scenes_dir);
  int t_f = 6;
  for (const auto& s : scenes)
    if (!s.preds.empty() && !s.preds[0].modes.empty()) {
      t_f = static_cast<int>(s.preds[0].modes[0].xy.size());
      break;
    }
  nlohmann::json report = evaluate_scenes(scenes, t_f, dt);
  std::ofstream out(out_path);
  if (!out) throw ConfigError("cannot open report for writing: " + out_path);
  out << report.dump(2) << "\n";
  std::cout << "report written to " << out_path << "\n";
  return 0;
}

int cmd_report(const std::string& in_path, const std::string& csv_path) {
  std::ifstream in(in_path);
  if (!in) throw ConfigError("cannot open report: " + in_path);
  nlohmann::json report;
  try {
    in >> report;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("invalid report JSON in " + in_path + ": " + e.what());
  }
  if (!report.contains("frames")) throw DataError("missing required field 'frames' in " + in_path);
  std::ofstream csv(csv_path);
  if (!csv) throw ConfigError("cannot open CSV for writing: " + csv_path);
  csv << "frame,metric,value\n";
  for (const auto& row : report.at("frames")) {
    csv << row.at("frame").get<int>() << "," << row.at("metric").get<std::string>() << ","
        << row.at("value").get<double>() << "\n";
  }
  std::cout << "csv written to " << csv_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Streaming joint multi-object tracking and trajectory forecasting on synthetic "
               "driving scenes"};
  app.require_subcommand(1);

  std::string config_path, out_dir, scenes_dir, val_dir, ckpt, runs_dir, report_in, csv_out;
  std::uint64_t seed = 0;
  double dt = 0.5;
  RuntimeFlags flags;

  auto* gen = app.add_subcommand("gen", "Generate synthetic scenes");
  gen->add_option("--config", config_path, "Scenario config JSON")->required();
  gen->add_option("--out", out_dir, "Output scene directory")->required();
  auto* gen_seed = gen->add_option("--seed", seed, "Base seed");

  auto* train = app.add_subcommand("train", "Train a model on a scene directory");
  train->add_option("--config", config_path, "Train config JSON")->required();
  train->add_option("--scenes", scenes_dir, "Training scene directory")->required();
  train->add_option("--out", out_dir, "Checkpoint output directory")->required();
  train->add_option("--val", val_dir, "Validation scene directory");
  auto* train_seed = train->add_option("--seed", seed, "Training seed (overrides config)");

  auto* track = app.add_subcommand("track", "Streaming inference over scenes");
  track->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  track->add_option("--scenes", scenes_dir, "Scene directory")->required();
  track->add_option("--out", out_dir, "Run output directory")->required();
  track->add_flag("--no-memory", [&flags](std::int64_t) { flags.use_memory = false; },
                  "Disable the memory bank");
  track->add_flag("--no-stpe", [&flags](std::int64_t) { flags.use_stpe = false; },
                  "Disable relative positional encoding");
  track->add_flag("--no-dual-stream", [&flags](std::int64_t) { flags.use_dual_stream = false; },
                  "Disable dual-stream prediction guidance");

  auto* eval = app.add_subcommand("eval", "Evaluate run outputs against scenes");
  eval->add_option("--runs", runs_dir, "Run output directory")->required();
  eval->add_option("--scenes", scenes_dir, "Scene directory with ground truth")->required();
  eval->add_option("--out", report_in, "Report JSON path")->required();
  eval->add_option("--dt", dt, "Frame interval in seconds");

  auto* rep = app.add_subcommand("report", "Convert a report to plot-ready CSV");
  rep->add_option("--in", report_in, "Report JSON path")->required();
  rep->add_option("--csv", csv_out, "CSV output path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // validation failure
  }

  try {
    if (!*gen_seed && !*train_seed) seed = default_seed();
    if (gen->parsed()) return cmd_gen(config_path, out_dir, seed);
    if (train->parsed())
      return cmd_train(config_path, scenes_dir, out_dir, val_dir, seed,
                       static_cast<bool>(*train_seed) || std::getenv("TRACKCAST_SEED") != nullptr);
    if (track->parsed()) return cmd_track(ckpt, scenes_dir, out_dir, flags);
    if (eval->parsed()) return cmd_eval(runs_dir, scenes_dir, report_in, dt);
    if (rep->parsed()) return cmd_report(report_in, csv_out);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
