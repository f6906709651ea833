#pragma once

#include <array>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "eipnet/canny.hpp"
#include "eipnet/data.hpp"
#include "eipnet/losses.hpp"

namespace eipnet {

enum class ElementType { float32, float64 };

/// Every training knob. Defaults are the desk-scale schedule at full width.
struct TrainConfig {
  std::uint64_t seed = 1;
  int batch_size = 16;
  double lr = 1e-4;
  double g_beta1 = 0.9;
  double g_beta2 = 0.999;
  double d_beta1 = 0.5;
  double d_beta2 = 0.9;
  double adam_eps = 1e-8;
  long phase1_iters = 20000;
  long phase2_iters = 22000;
  LossWeights weights;
  CropPolicy crop_policy = CropPolicy::celeba_178;
  ThresholdPolicy canny = ThresholdPolicy::adaptive(1.6);
  long checkpoint_interval = 1000;
  std::string out_dir = "run";
  std::string manifest;
  std::string embedder_checkpoint;
  int width_divisor = 1;
  int disc_width_divisor = 1;
  std::array<bool, 3> edge_blocks{true, true, true};
  bool use_lc = true;
  ElementType element_type = ElementType::float32;
  int threads = 1;

  void validate() const {
    if (batch_size < 1) throw ValueError("batch_size must be >= 1");
    if (!(lr > 0) || !(adam_eps > 0)) throw ValueError("lr and adam_eps must be positive");
    for (double b : {g_beta1, g_beta2, d_beta1, d_beta2})
      if (!(b >= 0 && b < 1)) throw ValueError("Adam betas must lie in [0, 1)");
    if (phase1_iters < 0) throw ValueError("phase1_iters must be >= 0");
    if (phase2_iters < phase1_iters) throw ValueError("phase2_iters must be >= phase1_iters");
    if (checkpoint_interval < 1) throw ValueError("checkpoint_interval must be >= 1");
    if (threads < 1) throw ValueError("threads must be >= 1");
    weights.validate();
  }
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class V>
V parse_number(const std::string& key, const std::string& text) {
  V v{};
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || r.ec != std::errc() || r.ptr != text.data() + text.size()) {
    throw ValueError("config key '" + key + "': bad value '" + text + "'");
  }
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "1" || text == "true") return true;
  if (text == "0" || text == "false") return false;
  throw ValueError("config key '" + key + "': expected true/false, got '" + text + "'");
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// Applies `key = value` lines onto `cfg`. '#' starts a comment; unknown
/// keys are errors naming the key.
inline TrainConfig parse_config(const std::string& text, TrainConfig cfg = {}) {
  using detail::parse_number;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  double canny_low = cfg.canny.low, canny_high = cfg.canny.high, canny_kh = cfg.canny.k_high;
  bool fixed = cfg.canny.mode == ThresholdPolicy::Mode::fixed;
  const std::map<std::string, Setter> setters = {
      {"seed", [&](auto& k, auto& v) { cfg.seed = parse_number<std::uint64_t>(k, v); }},
      {"batch_size", [&](auto& k, auto& v) { cfg.batch_size = parse_number<int>(k, v); }},
      {"lr", [&](auto& k, auto& v) { cfg.lr = parse_number<double>(k, v); }},
      {"g_beta1", [&](auto& k, auto& v) { cfg.g_beta1 = parse_number<double>(k, v); }},
      {"g_beta2", [&](auto& k, auto& v) { cfg.g_beta2 = parse_number<double>(k, v); }},
      {"d_beta1", [&](auto& k, auto& v) { cfg.d_beta1 = parse_number<double>(k, v); }},
      {"d_beta2", [&](auto& k, auto& v) { cfg.d_beta2 = parse_number<double>(k, v); }},
      {"adam_eps", [&](auto& k, auto& v) { cfg.adam_eps = parse_number<double>(k, v); }},
      {"phase1_iters", [&](auto& k, auto& v) { cfg.phase1_iters = parse_number<long>(k, v); }},
      {"phase2_iters", [&](auto& k, auto& v) { cfg.phase2_iters = parse_number<long>(k, v); }},
      {"gamma", [&](auto& k, auto& v) { cfg.weights.gamma = parse_number<double>(k, v); }},
      {"alpha", [&](auto& k, auto& v) { cfg.weights.alpha = parse_number<double>(k, v); }},
      {"beta", [&](auto& k, auto& v) { cfg.weights.beta = parse_number<double>(k, v); }},
      {"crop_policy", [&](auto&, auto& v) { cfg.crop_policy = parse_crop_policy(v); }},
      {"canny_mode",
       [&](auto& k, auto& v) {
         if (v != "adaptive" && v != "fixed") throw ValueError("config key '" + k + "': expected adaptive or fixed");
         fixed = v == "fixed";
       }},
      {"canny_kh", [&](auto& k, auto& v) { canny_kh = parse_number<double>(k, v); }},
      {"canny_low", [&](auto& k, auto& v) { canny_low = parse_number<double>(k, v); }},
      {"canny_high", [&](auto& k, auto& v) { canny_high = parse_number<double>(k, v); }},
      {"checkpoint_interval", [&](auto& k, auto& v) { cfg.checkpoint_interval = parse_number<long>(k, v); }},
      {"out_dir", [&](auto&, auto& v) { cfg.out_dir = v; }},
      {"manifest", [&](auto&, auto& v) { cfg.manifest = v; }},
      {"embedder_checkpoint", [&](auto&, auto& v) { cfg.embedder_checkpoint = v; }},
      {"width_divisor", [&](auto& k, auto& v) { cfg.width_divisor = parse_number<int>(k, v); }},
      {"disc_width_divisor", [&](auto& k, auto& v) { cfg.disc_width_divisor = parse_number<int>(k, v); }},
      {"edge_blocks",
       [&](auto& k, auto& v) {
         int a, b, c;
         char tail;
         if (std::sscanf(v.c_str(), "%d,%d,%d%c", &a, &b, &c, &tail) != 3 || (a | b | c) & ~1) {
           throw ValueError("config key '" + k + "': expected three 0/1 flags like 1,1,1");
         }
         cfg.edge_blocks = {a == 1, b == 1, c == 1};
       }},
      {"use_lc", [&](auto& k, auto& v) { cfg.use_lc = detail::parse_bool(k, v); }},
      {"element_type",
       [&](auto& k, auto& v) {
         if (v == "float32") cfg.element_type = ElementType::float32;
         else if (v == "float64") cfg.element_type = ElementType::float64;
         else throw ValueError("config key '" + k + "': expected float32 or float64");
       }},
      {"threads", [&](auto& k, auto& v) { cfg.threads = parse_number<int>(k, v); }},
  };
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValueError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    auto it = setters.find(key);
    if (it == setters.end()) {
      throw ValueError("unknown config key '" + key + "' (line " + std::to_string(lineno) + ")");
    }
    it->second(key, value);
  }
  cfg.canny = fixed ? ThresholdPolicy::fixed(canny_low, canny_high) : ThresholdPolicy::adaptive(canny_kh);
  if (fixed) cfg.canny.k_high = canny_kh;
  cfg.validate();
  return cfg;
}

inline TrainConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error("config not found: " + path.string());
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

/// Canonical text form; parse_config(format_config(c)) reproduces c. The
/// output directory can be left out so snapshots do not depend on where a
/// run was written.
inline std::string format_config(const TrainConfig& c, bool with_out_dir = true) {
  using detail::fmt;
  std::string s;
  auto put = [&](const char* k, const std::string& v) { s += std::string(k) + " = " + v + "\n"; };
  put("seed", std::to_string(c.seed));
  put("batch_size", std::to_string(c.batch_size));
  put("lr", fmt(c.lr));
  put("g_beta1", fmt(c.g_beta1));
  put("g_beta2", fmt(c.g_beta2));
  put("d_beta1", fmt(c.d_beta1));
  put("d_beta2", fmt(c.d_beta2));
  put("adam_eps", fmt(c.adam_eps));
  put("phase1_iters", std::to_string(c.phase1_iters));
  put("phase2_iters", std::to_string(c.phase2_iters));
  put("gamma", fmt(c.weights.gamma));
  put("alpha", fmt(c.weights.alpha));
  put("beta", fmt(c.weights.beta));
  put("crop_policy", to_string(c.crop_policy));
  put("canny_mode", c.canny.mode == ThresholdPolicy::Mode::fixed ? "fixed" : "adaptive");
  put("canny_kh", fmt(c.canny.k_high));
  put("canny_low", fmt(c.canny.low));
  put("canny_high", fmt(c.canny.high));
  put("checkpoint_interval", std::to_string(c.checkpoint_interval));
  if (with_out_dir) put("out_dir", c.out_dir);
  put("manifest", c.manifest);
  put("embedder_checkpoint", c.embedder_checkpoint);
  put("width_divisor", std::to_string(c.width_divisor));
  put("disc_width_divisor", std::to_string(c.disc_width_divisor));
  put("edge_blocks", std::string(c.edge_blocks[0] ? "1" : "0") + "," + (c.edge_blocks[1] ? "1" : "0") + "," +
                         (c.edge_blocks[2] ? "1" : "0"));
  put("use_lc", c.use_lc ? "true" : "false");
  put("element_type", c.element_type == ElementType::float32 ? "float32" : "float64");
  put("threads", std::to_string(c.threads));
  return s;
}

}  // namespace eipnet
