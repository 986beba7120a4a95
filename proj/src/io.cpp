#include "geobox/io.hpp"

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <map>
#include <sstream>
#include <string_view>

#include "geobox/error.hpp"
#include "geobox/proposal.hpp"

namespace geobox {

using nlohmann::json;

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << text;
  if (!out) throw Error("write failed: " + path);
}

json read_json(const std::string& path) {
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": malformed JSON: " + e.what());
  }
}

std::vector<json> read_jsonl(const std::string& path) {
  std::istringstream in(read_text(path));
  std::vector<json> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": malformed JSON: " + e.what());
    }
  }
  return rows;
}

std::string to_jsonl(const std::vector<json>& rows) {
  std::string out;
  for (const auto& r : rows) {
    out += r.dump();
    out += '\n';
  }
  return out;
}

namespace {

// Reads optional fields of one JSON object, reporting errors by key path.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw InvalidSpec(where("") + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) const {
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw InvalidSpec(where(key) + ": wrong type");
    }
  }

  // Rejects keys outside `allowed`; a typo should not silently fall back to a default.
  void only(std::initializer_list<std::string_view> allowed) const {
    for (const auto& [key, value] : j_.items())
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) throw InvalidSpec(where(key) + ": unknown key");
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& at(const char* key) const { return j_.at(key); }
  std::string where(const std::string& key) const {
    if (path_.empty()) return key.empty() ? "<root>" : key;
    return key.empty() ? path_ : path_ + "." + key;
  }

 private:
  const json& j_;
  std::string path_;
};

WorldPoint point_from(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw InvalidSpec(where + ": expected [x, y]");
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace

ScenarioSpec scenario_from_json(const json& j) {
  ScenarioSpec s;
  const Fields f(j, "");
  f.only({"seed", "duration_s", "fps", "frame_width", "frame_height", "n_objects", "near_fraction", "shadow",
          "calibration", "kinds", "objects", "gps_noise", "flow_noise"});
  f.get("seed", s.seed);
  f.get("duration_s", s.duration_s);
  f.get("fps", s.fps);
  f.get("frame_width", s.frame_width);
  f.get("frame_height", s.frame_height);
  f.get("n_objects", s.n_objects);
  f.get("near_fraction", s.near_fraction);
  f.get("shadow", s.shadow);
  if (f.has("calibration")) {
    const json& c = f.at("calibration");
    if (!c.is_array() || c.size() != 4) throw InvalidSpec("calibration: expected 4 [fx, fy, wx, wy] rows");
    for (std::size_t i = 0; i < 4; ++i) {
      const std::string w = "calibration[" + std::to_string(i) + "]";
      if (!c[i].is_array() || c[i].size() != 4) throw InvalidSpec(w + ": expected [fx, fy, wx, wy]");
      for (const auto& v : c[i])
        if (!v.is_number()) throw InvalidSpec(w + ": expected numbers");
      s.calibration[i] = {{c[i][0].get<double>(), c[i][1].get<double>()}, {c[i][2].get<double>(), c[i][3].get<double>()}};
    }
  }
  if (f.has("kinds")) {
    const json& ks = f.at("kinds");
    if (!ks.is_array()) throw InvalidSpec("kinds: expected an array");
    s.kinds.clear();
    for (std::size_t i = 0; i < ks.size(); ++i) {
      const Fields k(ks[i], "kinds[" + std::to_string(i) + "]");
      k.only({"name", "width_m", "height_m", "speed_min", "speed_max"});
      ObjectKind kind;
      k.get("name", kind.name);
      k.get("width_m", kind.width_m);
      k.get("height_m", kind.height_m);
      k.get("speed_min", kind.speed_min);
      k.get("speed_max", kind.speed_max);
      s.kinds.push_back(kind);
    }
  }
  if (f.has("objects")) {
    const json& os = f.at("objects");
    if (!os.is_array()) throw InvalidSpec("objects: expected an array");
    for (std::size_t i = 0; i < os.size(); ++i) {
      const std::string w = "objects[" + std::to_string(i) + "]";
      const Fields o(os[i], w);
      o.only({"kind", "target", "speed", "start_s", "loop", "waypoints"});
      ObjectSpec obj;
      o.get("kind", obj.kind);
      o.get("target", obj.target);
      o.get("speed", obj.speed);
      o.get("start_s", obj.start_s);
      o.get("loop", obj.loop);
      if (o.has("waypoints")) {
        const json& wp = o.at("waypoints");
        if (!wp.is_array()) throw InvalidSpec(w + ".waypoints: expected an array");
        for (std::size_t k = 0; k < wp.size(); ++k) {
          const std::string ww = w + ".waypoints[" + std::to_string(k) + "]";
          Waypoint p;
          if (wp[k].is_array()) {
            p.p = point_from(wp[k], ww);
          } else {
            const Fields pf(wp[k], ww);
            pf.only({"p", "dwell_s"});
            if (!pf.has("p")) throw InvalidSpec(ww + ".p: missing");
            p.p = point_from(pf.at("p"), ww + ".p");
            pf.get("dwell_s", p.dwell_s);
          }
          obj.waypoints.push_back(p);
        }
      }
      s.objects.push_back(obj);
    }
  }
  if (f.has("gps_noise")) {
    const Fields g(f.at("gps_noise"), "gps_noise");
    g.only({"gaussian_sigma_m", "constant_bias_m", "lag_s", "stick_prob", "rate_hz"});
    g.get("gaussian_sigma_m", s.gps_noise.gaussian_sigma_m);
    if (g.has("constant_bias_m")) s.gps_noise.constant_bias_m = point_from(g.at("constant_bias_m"), "gps_noise.constant_bias_m");
    g.get("lag_s", s.gps_noise.lag_s);
    g.get("stick_prob", s.gps_noise.stick_prob);
    g.get("rate_hz", s.gps_noise.rate_hz);
  }
  if (f.has("flow_noise")) {
    const Fields g(f.at("flow_noise"), "flow_noise");
    g.only({"jitter_px", "dropout", "flows_min", "flows_max", "clutter_per_frame"});
    g.get("jitter_px", s.flow_noise.jitter_px);
    g.get("dropout", s.flow_noise.dropout);
    g.get("flows_min", s.flow_noise.flows_min);
    g.get("flows_max", s.flow_noise.flows_max);
    g.get("clutter_per_frame", s.flow_noise.clutter_per_frame);
  }
  validate(s);
  return s;
}

json scenario_to_json(const ScenarioSpec& s) {
  json cal = json::array();
  for (const auto& c : s.calibration) cal.push_back({c.frame.x, c.frame.y, c.world.x, c.world.y});
  json kinds = json::array();
  for (const auto& k : s.kinds)
    kinds.push_back({{"name", k.name}, {"width_m", k.width_m}, {"height_m", k.height_m},
                     {"speed_min", k.speed_min}, {"speed_max", k.speed_max}});
  json objects = json::array();
  for (const auto& o : s.objects) {
    json wp = json::array();
    for (const auto& w : o.waypoints) wp.push_back({{"p", {w.p.x, w.p.y}}, {"dwell_s", w.dwell_s}});
    objects.push_back({{"kind", o.kind}, {"target", o.target}, {"speed", o.speed}, {"start_s", o.start_s},
                       {"loop", o.loop}, {"waypoints", wp}});
  }
  return {{"seed", s.seed},
          {"duration_s", s.duration_s},
          {"fps", s.fps},
          {"frame_width", s.frame_width},
          {"frame_height", s.frame_height},
          {"n_objects", s.n_objects},
          {"near_fraction", s.near_fraction},
          {"shadow", s.shadow},
          {"calibration", cal},
          {"kinds", kinds},
          {"objects", objects},
          {"gps_noise",
           {{"gaussian_sigma_m", s.gps_noise.gaussian_sigma_m},
            {"constant_bias_m", {s.gps_noise.constant_bias_m.x, s.gps_noise.constant_bias_m.y}},
            {"lag_s", s.gps_noise.lag_s},
            {"stick_prob", s.gps_noise.stick_prob},
            {"rate_hz", s.gps_noise.rate_hz}}},
          {"flow_noise",
           {{"jitter_px", s.flow_noise.jitter_px},
            {"dropout", s.flow_noise.dropout},
            {"flows_min", s.flow_noise.flows_min},
            {"flows_max", s.flow_noise.flows_max},
            {"clutter_per_frame", s.flow_noise.clutter_per_frame}}}};
}

namespace {

void train_options(const Fields& f, const char* key, TrainOptions& t) {
  if (!f.has(key)) return;
  const Fields g(f.at(key), key);
  g.only({"epochs", "lr", "crop"});
  g.get("epochs", t.epochs);
  g.get("lr", t.lr);
  g.get("crop", t.crop);
}

}  // namespace

SuiteSpec suite_from_json(const json& j) {
  SuiteSpec s;
  const Fields f(j, "");
  f.only({"seed", "n_clips", "duration_s", "fps", "gps_sigma_m", "gps_bias_max_m", "gps_lag_s", "gps_stick_prob",
          "distractors", "near_fraction", "shadow_prob", "jitter_px", "dropout", "clutter_per_frame",
          "search_budget", "refiner_training", "ranker_training", "corruption_copies", "keep_fractions",
          "compare_mixtures", "jobs"});
  f.get("seed", s.seed);
  f.get("n_clips", s.n_clips);
  f.get("duration_s", s.duration_s);
  f.get("fps", s.fps);
  f.get("gps_sigma_m", s.gps_sigma_m);
  f.get("gps_bias_max_m", s.gps_bias_max_m);
  f.get("gps_lag_s", s.gps_lag_s);
  f.get("gps_stick_prob", s.gps_stick_prob);
  f.get("distractors", s.distractors);
  f.get("near_fraction", s.near_fraction);
  f.get("shadow_prob", s.shadow_prob);
  f.get("jitter_px", s.jitter_px);
  f.get("dropout", s.dropout);
  f.get("clutter_per_frame", s.clutter_per_frame);
  f.get("search_budget", s.search_budget);
  train_options(f, "refiner_training", s.refiner_training);
  train_options(f, "ranker_training", s.ranker_training);
  f.get("corruption_copies", s.corruption_copies);
  f.get("keep_fractions", s.keep_fractions);
  f.get("compare_mixtures", s.compare_mixtures);
  f.get("jobs", s.jobs);
  validate(s);
  return s;
}

HmmParams params_from_json(const json& j) {
  HmmParams p;
  const Fields f(j, "");
  f.only({"sigma_emission", "p_trans", "sigma_trans", "sigma_shape", "v_thr1", "v_thr2", "theta_thr",
          "speed_window_s", "boundary_emission", "boundary_self"});
  f.get("sigma_emission", p.sigma_emission);
  f.get("p_trans", p.p_trans);
  f.get("sigma_trans", p.sigma_trans);
  f.get("sigma_shape", p.sigma_shape);
  f.get("v_thr1", p.v_thr1);
  f.get("v_thr2", p.v_thr2);
  f.get("theta_thr", p.theta_thr);
  f.get("speed_window_s", p.speed_window_s);
  f.get("boundary_emission", p.boundary_emission);
  f.get("boundary_self", p.boundary_self);
  validate(p);
  return p;
}

json params_to_json(const HmmParams& p) {
  return {{"sigma_emission", p.sigma_emission}, {"p_trans", p.p_trans},
          {"sigma_trans", p.sigma_trans},       {"sigma_shape", p.sigma_shape},
          {"v_thr1", p.v_thr1},                 {"v_thr2", p.v_thr2},
          {"theta_thr", p.theta_thr},           {"speed_window_s", p.speed_window_s},
          {"boundary_emission", p.boundary_emission}, {"boundary_self", p.boundary_self}};
}

std::vector<json> clip_to_jsonl(const Clip& clip) {
  std::vector<json> rows;
  json cal = json::array();
  for (const auto& c : clip.calibration) cal.push_back({c.frame.x, c.frame.y, c.world.x, c.world.y});
  rows.push_back({{"type", "clip"},
                  {"id", clip.id},
                  {"fps", clip.fps},
                  {"n_frames", clip.n_frames},
                  {"frame_width", clip.frame_width},
                  {"frame_height", clip.frame_height},
                  {"calibration", cal},
                  {"factors",
                   {{"gps_sigma_m", clip.factors.gps_sigma_m},
                    {"gps_bias_m", clip.factors.gps_bias_m},
                    {"gps_lag_s", clip.factors.gps_lag_s},
                    {"distractors", clip.factors.distractors},
                    {"shadow", clip.factors.shadow}}}});
  const auto n = static_cast<std::size_t>(clip.n_frames);
  std::vector<json> points(n, json::array()), fixes(n, json::array());
  for (const auto& t : clip.flow_tracks)
    for (int f = t.first_frame; f <= t.last_frame(); ++f) {
      if (f < 0 || f >= clip.n_frames) continue;
      const auto& p = t.at(f);
      points[static_cast<std::size_t>(f)].push_back({t.id, p.x, p.y, t.moving_at(f) ? 1 : 0});
    }
  for (const auto& g : clip.gps.fixes) {
    const auto f = std::clamp<long>(static_cast<long>(std::floor(g.t * clip.fps + 1e-9)), 0L,
                                    static_cast<long>(n) - 1);
    fixes[static_cast<std::size_t>(f)].push_back({g.t, g.p.x, g.p.y});
  }
  for (std::size_t f = 0; f < n; ++f) rows.push_back({{"frame", f}, {"points", points[f]}, {"gps", fixes[f]}});
  return rows;
}

std::vector<FlowTrack> flows_from_jsonl(const std::vector<json>& rows, int fps, int* n_frames) {
  std::map<std::int64_t, FlowTrack> tracks;
  std::map<std::int64_t, bool> has_flags;
  int max_frame = -1;
  for (const auto& r : rows) {
    if (!r.contains("frame")) continue;
    int frame = 0;
    try {
      frame = r.at("frame").get<int>();
      if (frame < 0) throw ConfigError("negative frame index");
      max_frame = std::max(max_frame, frame);
      if (!r.contains("points")) continue;
      for (const auto& p : r.at("points")) {
        const auto id = p.at(0).get<std::int64_t>();
        FlowTrack& t = tracks[id];
        if (t.positions.empty()) {
          t.id = id;
          t.first_frame = frame;
        } else if (frame != t.last_frame() + 1) {
          throw ConfigError("flow track " + std::to_string(id) + " is not contiguous at frame " + std::to_string(frame));
        }
        t.positions.push_back({p.at(1).get<double>(), p.at(2).get<double>()});
        const bool flagged = p.size() > 3;
        has_flags[id] = flagged;
        t.moving.push_back(flagged ? static_cast<std::uint8_t>(p.at(3).get<int>() != 0) : 0);
      }
    } catch (const json::exception& e) {
      throw ConfigError("flow record for frame " + std::to_string(frame) + ": " + e.what());
    }
  }
  std::vector<FlowTrack> out;
  for (auto& [id, t] : tracks) {
    if (!has_flags[id]) t.moving = compute_moving_flags(t, fps);
    out.push_back(std::move(t));
  }
  if (n_frames) *n_frames = max_frame + 1;
  return out;
}

Clip clip_from_jsonl(const std::vector<json>& rows) {
  if (rows.empty()) throw ConfigError("clip file is empty");
  const json& h = rows.front();
  Clip clip;
  try {
    if (h.value("type", "") != "clip") throw ConfigError("clip file: first line must be the clip header");
    clip.id = h.at("id").get<std::string>();
    clip.fps = h.at("fps").get<int>();
    clip.n_frames = h.at("n_frames").get<int>();
    clip.frame_width = h.at("frame_width").get<int>();
    clip.frame_height = h.at("frame_height").get<int>();
    const auto& cal = h.at("calibration");
    for (std::size_t i = 0; i < 4; ++i)
      clip.calibration[i] = {{cal.at(i).at(0).get<double>(), cal.at(i).at(1).get<double>()},
                             {cal.at(i).at(2).get<double>(), cal.at(i).at(3).get<double>()}};
    if (h.contains("factors")) {
      const auto& f = h.at("factors");
      clip.factors = {f.at("gps_sigma_m").get<double>(), f.at("gps_bias_m").get<double>(),
                      f.at("gps_lag_s").get<double>(), f.at("distractors").get<int>(), f.at("shadow").get<bool>()};
    }
    for (std::size_t i = 1; i < rows.size(); ++i)
      for (const auto& g : rows[i].value("gps", json::array()))
        clip.gps.fixes.push_back({g.at(0).get<double>(), {g.at(1).get<double>(), g.at(2).get<double>()}});
  } catch (const json::exception& e) {
    throw ConfigError(std::string("clip file: ") + e.what());
  }
  try {
    clip.homography = Homography::fit(clip.calibration);
  } catch (const DegenerateCorrespondence& e) {
    throw ConfigError(std::string("clip calibration: ") + e.what());
  }
  std::vector<json> frames(rows.begin() + 1, rows.end());
  clip.flow_tracks = flows_from_jsonl(frames, clip.fps, nullptr);
  return clip;
}

std::vector<json> ground_truth_to_jsonl(const std::vector<std::optional<BoundingBox>>& gt) {
  std::vector<json> rows;
  for (std::size_t f = 0; f < gt.size(); ++f)
    rows.push_back({{"frame", f}, {"box", gt[f] ? json{gt[f]->cx, gt[f]->cy, gt[f]->w, gt[f]->h} : json()}});
  return rows;
}

std::vector<std::optional<BoundingBox>> ground_truth_from_jsonl(const std::vector<json>& rows, int n_frames) {
  std::vector<std::optional<BoundingBox>> gt(static_cast<std::size_t>(std::max(n_frames, 0)));
  for (const auto& r : rows) {
    try {
      const int f = r.at("frame").get<int>();
      if (f < 0 || f >= n_frames) throw ConfigError("ground truth frame " + std::to_string(f) + " out of range");
      const auto& b = r.at("box");
      if (!b.is_null())
        gt[static_cast<std::size_t>(f)] = BoundingBox{b.at(0).get<double>(), b.at(1).get<double>(),
                                                      b.at(2).get<double>(), b.at(3).get<double>()};
    } catch (const json::exception& e) {
      throw ConfigError(std::string("ground truth record: ") + e.what());
    }
  }
  return gt;
}

std::vector<json> gps_to_jsonl(const GpsTrace& gps) {
  std::vector<json> rows;
  for (const auto& f : gps.fixes) rows.push_back({{"t", f.t}, {"x", f.p.x}, {"y", f.p.y}});
  return rows;
}

GpsTrace gps_from_jsonl(const std::vector<json>& rows) {
  GpsTrace g;
  for (const auto& r : rows) {
    try {
      g.fixes.push_back({r.at("t").get<double>(), {r.at("x").get<double>(), r.at("y").get<double>()}});
    } catch (const json::exception& e) {
      throw ConfigError(std::string("gps record: ") + e.what());
    }
  }
  return g;
}

}  // namespace geobox
