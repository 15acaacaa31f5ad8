#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "trackcast/metrics.hpp"
#include "trackcast/trainer.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace trackcast;

namespace {

py::object json_to_py(const nlohmann::json& j) {
  switch (j.type()) {
    case nlohmann::json::value_t::null:
      return py::none();
    case nlohmann::json::value_t::boolean:
      return py::bool_(j.get<bool>());
    case nlohmann::json::value_t::number_integer:
      return py::int_(j.get<std::int64_t>());
    case nlohmann::json::value_t::number_unsigned:
      return py::int_(j.get<std::uint64_t>());
    case nlohmann::json::value_t::number_float:
      return py::float_(j.get<double>());
    case nlohmann::json::value_t::string:
      return py::str(j.get<std::string>());
    case nlohmann::json::value_t::array: {
      py::list out;
      for (const auto& v : j) out.append(json_to_py(v));
      return out;
    }
    case nlohmann::json::value_t::object: {
      py::dict out;
      for (auto it = j.begin(); it != j.end(); ++it) out[py::str(it.key())] = json_to_py(it.value());
      return out;
    }
    default:
      return py::none();
  }
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
  if (files.empty()) throw ConfigError("no scene files (*.jsonl) in directory: " + dir);
  return files;
}

int py_generate_scenes(const std::string& config_path, const std::string& out_dir,
                       std::uint64_t seed) {
  ScenarioConfig cfg = load_scenario_config(config_path);
  fs::create_directories(out_dir);
  for (int i = 0; i < cfg.n_scenes; ++i) {
    const std::uint64_t scene_seed = seed * 1000003ULL + cfg.seed + static_cast<std::uint64_t>(i);
    Scene scene = generate_scene(cfg, scene_seed);
    auto frames = render_detections(scene, sample_noise_model(cfg, scene, scene_seed),
                                    scene_seed + 0x51ed2701ULL);
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%04d.jsonl", i);
    write_scene(frames, (fs::path(out_dir) / name).string());
  }
  return cfg.n_scenes;
}

py::dict py_train(const std::string& config_path, const std::string& scenes_dir,
                  const std::string& out_dir, const std::string& val_dir) {
  TrainConfig cfg = load_train_config(config_path);
  std::vector<std::vector<SceneFrame>> train_scenes, val_scenes;
  for (const auto& p : scene_files(scenes_dir)) train_scenes.push_back(read_scene(p.string()));
  if (!val_dir.empty())
    for (const auto& p : scene_files(val_dir)) val_scenes.push_back(read_scene(p.string()));
  JointModel model(cfg.model, cfg.seed);
  Trainer trainer(model, cfg);
  auto log = trainer.run(train_scenes, val_scenes, out_dir);
  py::dict out;
  out["epochs"] = cfg.epochs;
  out["final_track_loss"] = log.empty() ? 0.0 : log.back().track;
  out["final_pred_loss"] = log.empty() ? 0.0 : log.back().pred;
  out["checkpoint"] = out_dir + "/best.json";
  return out;
}

int py_track(const std::string& ckpt, const std::string& scenes_dir, const std::string& out_dir,
             bool no_memory, bool no_stpe, bool no_dual_stream) {
  auto model = JointModel::load_checkpoint(ckpt);
  RuntimeFlags flags;
  flags.use_memory = !no_memory;
  flags.use_stpe = !no_stpe;
  flags.use_dual_stream = !no_dual_stream;
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
  return n;
}

py::object py_evaluate(const std::string& runs_dir, const std::string& scenes_dir, double dt) {
  std::vector<SceneEvalInput> scenes;
  for (const auto& p : scene_files(scenes_dir)) {
    SceneEvalInput in;
    in.name = p.stem().string();
    in.gt = read_scene(p.string());
    const fs::path tracks = fs::path(runs_dir) / (in.name + ".tracks.jsonl");
    const fs::path preds = fs::path(runs_dir) / (in.name + ".preds.jsonl");
    if (!fs::exists(tracks) || !fs::exists(preds))
      throw ConfigError("missing run outputs for scene '" + in.name + "' in " + runs_dir);
    in.tracks = read_tracks(tracks.string());
    in.preds = read_predictions(preds.string());
    scenes.push_back(std::move(in));
  }
  int t_f = 6;
  for (const auto& s : scenes)
    if (!s.preds.empty() && !s.preds[0].modes.empty()) {
      t_f = static_cast<int>(s.preds[0].modes[0].xy.size());
      break;
    }
  return json_to_py(evaluate_scenes(scenes, t_f, dt));
}

py::tuple py_sinkhorn(const std::vector<std::vector<double>>& affinity, double dustbin, int iters,
                      double tol) {
  const int nt = static_cast<int>(affinity.size());
  const int np = nt > 0 ? static_cast<int>(affinity[0].size()) : 0;
  std::vector<double> flat;
  for (const auto& row : affinity) {
    if (static_cast<int>(row.size()) != np) throw ShapeError("sinkhorn: ragged affinity matrix");
    flat.insert(flat.end(), row.begin(), row.end());
  }
  ModelConfig cfg;
  ParamStore ps(0);
  MotHead mot(ps, cfg);
  ps.get("mot.dustbin_z").data()[0] = dustbin;
  TransportPlan plan = mot.sinkhorn_log(Tensor::from(flat, {nt, np}), iters, tol);
  std::vector<std::vector<double>> out(static_cast<std::size_t>(nt) + 1,
                                       std::vector<double>(static_cast<std::size_t>(np) + 1));
  for (int i = 0; i <= nt; ++i)
    for (int j = 0; j <= np; ++j)
      out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
          std::exp(plan.log_plan.data()[static_cast<std::size_t>(i) * (np + 1) + j]);
  return py::make_tuple(out, plan.iterations, plan.marginal_violation);
}

py::object py_read_scene(const std::string& path) {
  auto frames = read_scene(path);
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& f : frames) arr.push_back(frame_to_json(f));
  return json_to_py(arr);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Streaming joint multi-object tracking and trajectory forecasting";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("generate_scenes", &py_generate_scenes, py::arg("config"), py::arg("out_dir"),
        py::arg("seed") = 0,
        "Generate synthetic scenes from a scenario config; returns the scene count.");
  m.def("train", &py_train, py::arg("config"), py::arg("scenes_dir"), py::arg("out_dir"),
        py::arg("val_dir") = "",
        "Train a model over a scene directory; returns a summary dict.");
  m.def("track", &py_track, py::arg("ckpt"), py::arg("scenes_dir"), py::arg("out_dir"),
        py::arg("no_memory") = false, py::arg("no_stpe") = false,
        py::arg("no_dual_stream") = false,
        "Streaming inference over scenes; writes tracks/predictions files.");
  m.def("evaluate", &py_evaluate, py::arg("runs_dir"), py::arg("scenes_dir"), py::arg("dt") = 0.5,
        "Evaluate run outputs against scene ground truth; returns the report dict.");
  m.def("sinkhorn", &py_sinkhorn, py::arg("affinity"), py::arg("dustbin") = 0.0,
        py::arg("iters") = 100, py::arg("tol") = 1e-6,
        "Dustbin-augmented log-domain Sinkhorn; returns (plan, iterations, violation).");
  m.def("read_scene", &py_read_scene, py::arg("path"), "Load a scene file as a list of dicts.");
  m.attr("__version__") = "0.1.0";
}
