#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "trackcast/scenario.hpp"

using namespace trackcast;

namespace {

ScenarioConfig base_config() {
  ScenarioConfig c;
  c.frames = 12;
  c.agents_min = c.agents_max = 1;
  c.n_classes = 1;  // car-like only, so speed ranges apply unscaled
  c.p_partial = 0.0;
  c.noise.sigma_pos = 0.0;
  c.noise.sigma_heading = 0.0;
  c.noise.p_miss = 0.0;
  c.noise.fp_rate = 0.0;
  return c;
}

std::string temp_path(const std::string& name) {
  return std::string("/tmp/trackcast_test_") + name;
}

}  // namespace

TEST_CASE("constant-velocity agents advance speed*dt per frame along heading") {
  ScenarioConfig c = base_config();
  c.w_cv = 1.0; c.w_ct = 0.0; c.w_lane = 0.0;
  c.speed_min = c.speed_max = 1.0;
  Scene s = generate_scene(c, 3);
  const auto& a = s.agents[0];
  for (int f = 1; f < c.frames; ++f) {
    const double dx = a.poses[f].x - a.poses[f - 1].x;
    const double dy = a.poses[f].y - a.poses[f - 1].y;
    CHECK(std::hypot(dx, dy) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(std::atan2(dy, dx) == doctest::Approx(a.poses[f].heading).epsilon(1e-12));
    CHECK(a.poses[f].heading == a.poses[0].heading);
  }
}

TEST_CASE("constant-turn agents stay on a circle of radius speed/omega") {
  ScenarioConfig c = base_config();
  c.w_cv = 0.0; c.w_ct = 1.0; c.w_lane = 0.0;
  c.speed_min = c.speed_max = 5.0;
  c.turn_rate_min = c.turn_rate_max = 0.2;
  Scene s = generate_scene(c, 11);
  const auto& a = s.agents[0];
  // Recover the turn sense from the first heading step, then the center.
  const double omega = wrap_angle(a.poses[1].heading - a.poses[0].heading) > 0 ? 0.2 : -0.2;
  const double r = 5.0 / omega;
  const double cx = a.poses[0].x - r * std::sin(a.poses[0].heading);
  const double cy = a.poses[0].y + r * std::cos(a.poses[0].heading);
  for (int f = 0; f < c.frames; ++f) {
    const double d = std::hypot(a.poses[f].x - cx, a.poses[f].y - cy);
    CHECK(d == doctest::Approx(25.0).epsilon(1e-9));
  }
}

TEST_CASE("same seed reproduces scenes byte-for-byte") {
  ScenarioConfig c = base_config();
  c.agents_min = 2; c.agents_max = 5;
  c.noise.sigma_pos = 0.2;
  c.noise.p_miss = 0.1;
  c.noise.fp_rate = 0.5;
  auto render = [&](const std::string& path) {
    Scene s = generate_scene(c, 99);
    auto frames = render_detections(s, sample_noise_model(c, s, 99), 7);
    write_scene(frames, path);
    std::ifstream in(path);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  CHECK(render(temp_path("det_a.jsonl")) == render(temp_path("det_b.jsonl")));
}

TEST_CASE("generated tracks satisfy displacement and heading-rate bounds") {
  ScenarioConfig c;
  c.frames = 40;
  c.agents_min = 4; c.agents_max = 8;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Scene s = generate_scene(c, seed);
    for (const auto& a : s.agents)
      for (int f = 1; f < c.frames; ++f) {
        if (!a.present(f) || !a.present(f - 1)) continue;
        const double step = std::hypot(a.poses[f].x - a.poses[f - 1].x,
                                       a.poses[f].y - a.poses[f - 1].y);
        CHECK(step <= c.v_max * c.dt + 1e-9);
        CHECK(std::abs(wrap_angle(a.poses[f].heading - a.poses[f - 1].heading)) <=
              c.omega_max * c.dt + 1e-9);
      }
  }
}

TEST_CASE("noiseless rendering reproduces ground truth poses") {
  ScenarioConfig c = base_config();
  c.agents_min = c.agents_max = 3;
  Scene s = generate_scene(c, 5);
  auto frames = render_detections(s, c.noise, 11);
  for (const auto& f : frames) {
    REQUIRE(f.detections.size() == f.gt.size());
    std::map<int, const Detection*> by_src;
    for (const auto& d : f.detections) by_src[*d.source_agent] = &d;
    for (const auto& g : f.gt) {
      REQUIRE(by_src.count(g.agent_id));
      const Detection& d = *by_src[g.agent_id];
      CHECK(d.pos[0] == g.x);
      CHECK(d.pos[1] == g.y);
      CHECK(d.heading == g.heading);
      CHECK(d.pos[2] == 0.0);
    }
  }
}

TEST_CASE("occlusion window suppresses detections but keeps ground truth") {
  ScenarioConfig c = base_config();
  c.agents_min = c.agents_max = 8;
  Scene s = generate_scene(c, 21);
  NoiseModel noise = c.noise;
  noise.occlusions.push_back({7, 3, 5});
  auto frames = render_detections(s, noise, 4);
  for (int f = 0; f < c.frames; ++f) {
    bool detected = false, in_gt = false;
    for (const auto& d : frames[f].detections)
      if (d.source_agent && *d.source_agent == 7) detected = true;
    for (const auto& g : frames[f].gt)
      if (g.agent_id == 7) in_gt = true;
    CHECK(in_gt);
    CHECK(detected == !(f >= 3 && f <= 5));
  }
}

TEST_CASE("empirical miss rate matches p_miss over 1e4 agent-frames") {
  ScenarioConfig c = base_config();
  c.frames = 1000;
  c.agents_min = c.agents_max = 10;
  c.min_alive_frames = c.frames;
  c.noise.p_miss = 0.3;
  Scene s = generate_scene(c, 8);
  auto frames = render_detections(s, c.noise, 9);
  std::size_t detections = 0, agent_frames = 0;
  for (const auto& f : frames) {
    detections += f.detections.size();
    agent_frames += f.gt.size();
  }
  REQUIRE(agent_frames == 10000);
  const double miss = 1.0 - static_cast<double>(detections) / agent_frames;
  CHECK(miss == doctest::Approx(0.3).epsilon(0.07));  // 0.3 +/- 0.02
}

TEST_CASE("gt association is a permutation plus empty dustbins when sets match") {
  ScenarioConfig c = base_config();
  c.agents_min = c.agents_max = 4;
  Scene s = generate_scene(c, 31);
  auto frames = render_detections(s, c.noise, 3);
  GtAssociation g = gt_association(frames[0], frames[1]);
  REQUIRE(g.n_t == 4);
  REQUIRE(g.n_p == 4);
  for (int i = 0; i < 4; ++i) {
    int row_sum = 0;
    for (int j = 0; j < 4; ++j) row_sum += g.at(i, j) ? 1 : 0;
    CHECK(row_sum == 1);
    CHECK_FALSE(g.at(i, 4));
    CHECK_FALSE(g.at(4, i));
  }
  CHECK(g.n_m == 4);
}

TEST_CASE("despawned agent maps to the dustbin column") {
  SceneFrame prev, cur;
  prev.frame_index = 0;
  cur.frame_index = 1;
  Detection d;
  d.source_agent = 42;
  prev.detections.push_back(d);
  GtAssociation g = gt_association(prev, cur);
  CHECK(g.n_t == 1);
  CHECK(g.n_p == 0);
  CHECK(g.at(0, 0));  // dustbin column is column 0 when there are no detections
  CHECK(g.n_m == 1);
}

TEST_CASE("gt association matches a brute-force pairing over a noisy scene") {
  ScenarioConfig c;
  c.frames = 20;
  c.agents_min = 4; c.agents_max = 7;
  c.noise.p_miss = 0.2;
  c.noise.fp_rate = 1.0;
  Scene s = generate_scene(c, 77);
  auto frames = render_detections(s, sample_noise_model(c, s, 77), 13);
  for (int f = 1; f < c.frames; ++f) {
    const auto& prev = frames[f - 1];
    const auto& cur = frames[f];
    GtAssociation g = gt_association(prev, cur);
    // Brute force: for every (sourced prev det, cur det) pair check id equality.
    std::vector<int> rows;
    for (const auto& d : prev.detections)
      if (d.source_agent) rows.push_back(*d.source_agent);
    REQUIRE(g.n_t == static_cast<int>(rows.size()));
    REQUIRE(g.n_p == static_cast<int>(cur.detections.size()));
    for (int i = 0; i < g.n_t; ++i)
      for (int j = 0; j < g.n_p; ++j) {
        const auto& src = cur.detections[j].source_agent;
        const bool expect = src && *src == rows[i];
        CHECK(g.at(i, j) == expect);
      }
    // Partial bijection: row/column sums over the real block are <= 1.
    for (int i = 0; i < g.n_t; ++i) {
      int rs = 0;
      for (int j = 0; j < g.n_p; ++j) rs += g.at(i, j) ? 1 : 0;
      CHECK(rs <= 1);
      rs += g.at(i, g.n_p) ? 1 : 0;
      CHECK(rs == 1);  // every real row covered once including dustbin
    }
    for (int j = 0; j < g.n_p; ++j) {
      int cs = 0;
      for (int i = 0; i < g.n_t; ++i) cs += g.at(i, j) ? 1 : 0;
      CHECK(cs <= 1);
      cs += g.at(g.n_t, j) ? 1 : 0;
      CHECK(cs == 1);
    }
  }
}

TEST_CASE("duplicate source agents in one frame are a data error") {
  SceneFrame prev, cur;
  Detection d;
  d.source_agent = 5;
  cur.detections.push_back(d);
  cur.detections.push_back(d);
  CHECK_THROWS_AS(gt_association(prev, cur), DataError);
}

TEST_CASE("scene file round-trip is exact") {
  SUBCASE("empty scene") {
    const std::string path = temp_path("empty.jsonl");
    write_scene({}, path);
    CHECK(read_scene(path).empty());
    std::ifstream in(path);
    std::string contents((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(contents.empty());
  }
  SUBCASE("generated scene with noise") {
    ScenarioConfig c;
    c.frames = 40;
    c.agents_min = 3; c.agents_max = 6;
    c.noise.fp_rate = 0.7;
    c.noise.p_miss = 0.15;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Scene s = generate_scene(c, seed);
      auto frames = render_detections(s, sample_noise_model(c, s, seed), seed + 1);
      const std::string path = temp_path("roundtrip.jsonl");
      write_scene(frames, path);
      auto back = read_scene(path);
      CHECK(back == frames);
    }
  }
}

TEST_CASE("non-consecutive frame indices are reported with their line") {
  const std::string path = temp_path("gap.jsonl");
  std::ofstream out(path);
  for (int f : {0, 1, 3}) {
    SceneFrame frame;
    frame.frame_index = f;
    out << frame_to_json(frame).dump() << "\n";
  }
  out.close();
  try {
    read_scene(path);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()) == "non-consecutive frame index at line 3");
  }
}

TEST_CASE("missing required fields name the field") {
  const std::string path = temp_path("missing.jsonl");
  {
    std::ofstream out(path);
    out << R"({"frame":0,"t":0.0,"ego":{"x":0,"y":0,"yaw":0},"detections":[{"pos":[0,0,0],"size":[1,1,1],"heading":0,"class":0,"src":null}],"gt":[]})"
        << "\n";
  }
  try {
    read_scene(path);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("'score'") != std::string::npos);
  }
}

TEST_CASE("malformed json lines are a parse error with the line number") {
  const std::string path = temp_path("bad.jsonl");
  {
    std::ofstream out(path);
    out << R"({"frame":0,"t":0.0,"ego":{"x":0,"y":0,"yaw":0},"detections":[],"gt":[]})" << "\n";
    out << "{not json\n";
  }
  try {
    read_scene(path);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("scenario config validation") {
  nlohmann::json j = {{"frames", 0}};
  CHECK_THROWS_AS(scenario_config_from_json(j), ConfigError);
  nlohmann::json bad_key = {{"framez", 10}};
  CHECK_THROWS_AS(scenario_config_from_json(bad_key), ConfigError);
  nlohmann::json bad_miss = {{"noise", {{"p_miss", 1.5}}}};
  CHECK_THROWS_AS(scenario_config_from_json(bad_miss), ConfigError);
}
