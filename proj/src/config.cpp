#include "svr/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace svr {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

Config Config::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str());
}

Config Config::parse_text(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line, section = "global";
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ParseError("bad section at line " + std::to_string(line_no));
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError("expected key=value at line " + std::to_string(line_no));
    cfg.set(section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

std::string Config::serialize() const {
  std::ostringstream out;
  for (const auto& [section, kv] : sections_) {
    out << '[' << section << "]\n";
    for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
    out << '\n';
  }
  return out.str();
}

bool Config::has(const std::string& section, const std::string& key) const {
  auto it = sections_.find(section);
  return it != sections_.end() && it->second.count(key) > 0;
}

void Config::set(const std::string& section, const std::string& key,
                 const std::string& value) {
  sections_[section][key] = value;
}

std::string Config::get(const std::string& section, const std::string& key,
                        const std::string& fallback) const {
  auto it = sections_.find(section);
  if (it == sections_.end()) return fallback;
  auto kv = it->second.find(key);
  return kv == it->second.end() ? fallback : kv->second;
}

double Config::get_double(const std::string& section, const std::string& key,
                          double fallback) const {
  const std::string v = get(section, key, "");
  if (v.empty()) return fallback;
  try {
    return std::stod(v);
  } catch (...) {
    throw ParseError("bad number for " + section + "." + key + ": " + v);
  }
}

int Config::get_int(const std::string& section, const std::string& key,
                    int fallback) const {
  const std::string v = get(section, key, "");
  if (v.empty()) return fallback;
  try {
    return std::stoi(v);
  } catch (...) {
    throw ParseError("bad integer for " + section + "." + key + ": " + v);
  }
}

std::uint64_t Config::get_u64(const std::string& section, const std::string& key,
                              std::uint64_t fallback) const {
  const std::string v = get(section, key, "");
  if (v.empty()) return fallback;
  try {
    return std::stoull(v);
  } catch (...) {
    throw ParseError("bad integer for " + section + "." + key + ": " + v);
  }
}

bool Config::get_bool(const std::string& section, const std::string& key,
                      bool fallback) const {
  const std::string v = get(section, key, "");
  if (v.empty()) return fallback;
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw ParseError("bad boolean for " + section + "." + key + ": " + v);
}

void TrainConfig::validate() const {
  if (iterations <= 0) throw InvalidInput("iterations must be positive");
  if (rays_per_batch <= 0) throw InvalidInput("rays_per_batch must be positive");
  if (n_coarse < 2) throw InvalidInput("n_coarse must be >= 2");
  if (n_fine < 0) throw InvalidInput("n_fine must be >= 0");
  if (epsilon < 0) throw InvalidInput("epsilon must be >= 0");
  if (gamma <= 0) throw InvalidInput("gamma must be positive");
  weights.validate();
}

TrainConfig TrainConfig::from_config(const Config& c) {
  TrainConfig t;
  const std::string s = "train";
  t.iterations = c.get_int(s, "iterations", t.iterations);
  t.rays_per_batch = c.get_int(s, "rays_per_batch", t.rays_per_batch);
  t.n_coarse = c.get_int(s, "n_coarse", t.n_coarse);
  t.n_fine = c.get_int(s, "n_fine", t.n_fine);
  t.fine_start = c.get_int(s, "fine_start", t.fine_start);
  t.eikonal_points = c.get_int(s, "eikonal_points", t.eikonal_points);
  t.lr = c.get_double(s, "lr", t.lr);
  t.lr_decay = c.get_double(s, "lr_decay", t.lr_decay);
  t.decay_at = c.get_double(s, "decay_at", t.decay_at);
  t.seed = c.get_u64(s, "seed", t.seed);
  t.weights.lambda_depth = c.get_double(s, "lambda_depth", t.weights.lambda_depth);
  t.weights.lambda_reproj = c.get_double(s, "lambda_reproj", t.weights.lambda_reproj);
  t.weights.lambda_normal = c.get_double(s, "lambda_normal", t.weights.lambda_normal);
  t.weights.lambda_eikonal =
      c.get_double(s, "lambda_eikonal", t.weights.lambda_eikonal);
  t.epsilon = c.get_double(s, "epsilon", t.epsilon);
  t.gamma = c.get_double(s, "gamma", t.gamma);
  t.use_normal = c.get_bool(s, "use_normal", t.use_normal);
  t.use_depth = c.get_bool(s, "use_depth", t.use_depth);
  t.use_reproj = c.get_bool(s, "use_reproj", t.use_reproj);
  t.use_epipolar = c.get_bool(s, "use_epipolar", t.use_epipolar);
  t.use_angular = c.get_bool(s, "use_angular", t.use_angular);
  t.mono_baseline = c.get_bool(s, "mono_baseline", t.mono_baseline);
  t.arch.sdf_width = c.get_int(s, "sdf_width", t.arch.sdf_width);
  t.arch.sdf_hidden = c.get_int(s, "sdf_hidden", t.arch.sdf_hidden);
  t.arch.color_width = c.get_int(s, "color_width", t.arch.color_width);
  t.arch.color_hidden = c.get_int(s, "color_hidden", t.arch.color_hidden);
  t.arch.feature_dim = c.get_int(s, "feature_dim", t.arch.feature_dim);
  t.arch.pe_pos = c.get_int(s, "pe_pos", t.arch.pe_pos);
  t.arch.pe_dir = c.get_int(s, "pe_dir", t.arch.pe_dir);
  t.arch.beta_init = c.get_double(s, "beta_init", t.arch.beta_init);
  t.validate();
  return t;
}

void TrainConfig::to_config(Config& c) const {
  const std::string s = "train";
  auto put = [&](const std::string& k, auto v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    c.set(s, k, os.str());
  };
  put("iterations", iterations);
  put("rays_per_batch", rays_per_batch);
  put("n_coarse", n_coarse);
  put("n_fine", n_fine);
  put("fine_start", fine_start);
  put("eikonal_points", eikonal_points);
  put("lr", lr);
  put("lr_decay", lr_decay);
  put("decay_at", decay_at);
  put("seed", seed);
  put("lambda_depth", weights.lambda_depth);
  put("lambda_reproj", weights.lambda_reproj);
  put("lambda_normal", weights.lambda_normal);
  put("lambda_eikonal", weights.lambda_eikonal);
  put("epsilon", epsilon);
  put("gamma", gamma);
  c.set(s, "use_normal", use_normal ? "true" : "false");
  c.set(s, "use_depth", use_depth ? "true" : "false");
  c.set(s, "use_reproj", use_reproj ? "true" : "false");
  c.set(s, "use_epipolar", use_epipolar ? "true" : "false");
  c.set(s, "use_angular", use_angular ? "true" : "false");
  c.set(s, "mono_baseline", mono_baseline ? "true" : "false");
  put("sdf_width", arch.sdf_width);
  put("sdf_hidden", arch.sdf_hidden);
  put("color_width", arch.color_width);
  put("color_hidden", arch.color_hidden);
  put("feature_dim", arch.feature_dim);
  put("pe_pos", arch.pe_pos);
  put("pe_dir", arch.pe_dir);
  put("beta_init", arch.beta_init);
}

Config default_config() {
  Config c;
  TrainConfig().to_config(c);
  c.set("synth", "scene", "room-two-chairs");
  c.set("synth", "views", "10");
  c.set("synth", "pattern", "ring");
  c.set("synth", "width", "128");
  c.set("synth", "height", "96");
  c.set("synth", "fov_deg", "75");
  c.set("synth", "matches_per_pair", "400");
  c.set("synth", "noise_px", "0.5");
  c.set("synth", "outlier_rate", "0.1");
  c.set("synth", "seed", "1");
  c.set("priors", "epsilon", std::to_string(kDefaultEpsilon));
  c.set("priors", "gamma", std::to_string(kDefaultGamma));
  c.set("mesh", "resolution", "256");
  c.set("mesh", "bbox_inflate", "0.1");
  c.set("eval", "tau_rel", "0.02");  // fraction of the scene diagonal
  c.set("eval", "tau", "0");         // absolute override in meters when > 0
  c.set("eval", "points", "100000");
  c.set("eval", "seed", "7");
  return c;
}

void RunManifest::write(const std::string& path) const {
  nlohmann::json j;
  j["command"] = command;
  j["version"] = kVersion;
  j["seed"] = seed;
  j["threads"] = threads;
  nlohmann::json jc;
  for (const auto& [section, kv] : config.sections()) {
    for (const auto& [k, v] : kv) jc[section][k] = v;
  }
  j["config"] = jc;
  nlohmann::json ji;
  for (const auto& [p, h] : input_hashes) {
    std::ostringstream os;
    os << std::hex << h;
    ji[p] = os.str();
  }
  j["inputs"] = ji;
  j["timings_sec"] = timings_sec;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path);
  out << j.dump(2) << '\n';
}

}  // namespace svr
