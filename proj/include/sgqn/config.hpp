#pragma once

#include <cerrno>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sgqn {

enum class Augmentation { overlay, random_conv, random_shift, none };
enum class AttributionMethod { guided_backprop, vanilla_grad };
enum class Variant { sac, sac_consistency, sac_ssl, sgqn };

inline std::string to_string(Augmentation a) {
  switch (a) {
    case Augmentation::overlay: return "overlay";
    case Augmentation::random_conv: return "random_conv";
    case Augmentation::random_shift: return "random_shift";
    case Augmentation::none: return "none";
  }
  return "?";
}

inline std::string to_string(AttributionMethod m) {
  return m == AttributionMethod::guided_backprop ? "guided_backprop" : "vanilla_grad";
}

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::sac: return "sac";
    case Variant::sac_consistency: return "sac_consistency";
    case Variant::sac_ssl: return "sac_ssl";
    case Variant::sgqn: return "sgqn";
  }
  return "?";
}

// Full experiment configuration. Immutable after load; shared freely.
struct ExperimentConfig {
  std::string env_id = "point_reach";
  int image_size = 84;
  int frame_stack = 3;
  int action_repeat = 4;
  double discount = 0.99;
  int episode_length = 1000;
  int64_t total_env_steps = 100000;
  int64_t replay_capacity = 100000;
  int batch_size = 128;
  double lr_main = 1e-3;
  double lr_ssl = 3e-4;
  double lr_temp = 1e-4;
  int target_update_every = 2;
  double momentum_encoder = 0.05;
  double momentum_critic = 0.01;
  int ssl_every = 2;
  double rho = 0.95;
  double lambda_consistency = 1.0;
  Augmentation augmentation = Augmentation::overlay;
  double overlay_alpha = 0.5;
  AttributionMethod attribution_method = AttributionMethod::guided_backprop;
  uint64_t seed = 0;
  Variant variant = Variant::sgqn;

  int channels() const { return frame_stack * 3; }

  bool operator==(const ExperimentConfig&) const = default;
};

namespace cfg_detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline int64_t parse_i64(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const long long r = std::strtoll(v.c_str(), &end, 10);
  if (errno != 0 || end != v.c_str() + v.size() || v.empty())
    throw std::invalid_argument("config: invalid integer for " + key + ": '" + v + "'");
  return r;
}

inline uint64_t parse_u64(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const unsigned long long r = std::strtoull(v.c_str(), &end, 10);
  if (errno != 0 || end != v.c_str() + v.size() || v.empty() || v[0] == '-')
    throw std::invalid_argument("config: invalid unsigned integer for " + key + ": '" + v + "'");
  return r;
}

inline int parse_int(const std::string& key, const std::string& v) {
  const int64_t r = parse_i64(key, v);
  if (r < INT32_MIN || r > INT32_MAX)
    throw std::invalid_argument("config: value out of range for " + key);
  return static_cast<int>(r);
}

inline double parse_double(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const double r = std::strtod(v.c_str(), &end);
  if (errno != 0 || end != v.c_str() + v.size() || v.empty())
    throw std::invalid_argument("config: invalid number for " + key + ": '" + v + "'");
  return r;
}

inline std::string fmt_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace cfg_detail

inline Augmentation augmentation_from_string(const std::string& s) {
  if (s == "overlay") return Augmentation::overlay;
  if (s == "random_conv") return Augmentation::random_conv;
  if (s == "random_shift") return Augmentation::random_shift;
  if (s == "none") return Augmentation::none;
  throw std::invalid_argument("config: invalid value for augmentation: '" + s + "'");
}

inline AttributionMethod attribution_from_string(const std::string& s) {
  if (s == "guided_backprop") return AttributionMethod::guided_backprop;
  if (s == "vanilla_grad") return AttributionMethod::vanilla_grad;
  throw std::invalid_argument("config: invalid value for attribution_method: '" + s + "'");
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "sac") return Variant::sac;
  if (s == "sac_consistency") return Variant::sac_consistency;
  if (s == "sac_ssl") return Variant::sac_ssl;
  if (s == "sgqn") return Variant::sgqn;
  throw std::invalid_argument("config: invalid value for variant: '" + s + "'");
}

// Assigns one key. Unknown keys are errors so typos never pass silently.
inline void apply_config_entry(ExperimentConfig& c, const std::string& key,
                               const std::string& value) {
  using namespace cfg_detail;
  if (key == "env_id") c.env_id = value;
  else if (key == "image_size") c.image_size = parse_int(key, value);
  else if (key == "frame_stack") c.frame_stack = parse_int(key, value);
  else if (key == "action_repeat") c.action_repeat = parse_int(key, value);
  else if (key == "discount") c.discount = parse_double(key, value);
  else if (key == "episode_length") c.episode_length = parse_int(key, value);
  else if (key == "total_env_steps") c.total_env_steps = parse_i64(key, value);
  else if (key == "replay_capacity") c.replay_capacity = parse_i64(key, value);
  else if (key == "batch_size") c.batch_size = parse_int(key, value);
  else if (key == "lr_main") c.lr_main = parse_double(key, value);
  else if (key == "lr_ssl") c.lr_ssl = parse_double(key, value);
  else if (key == "lr_temp") c.lr_temp = parse_double(key, value);
  else if (key == "target_update_every") c.target_update_every = parse_int(key, value);
  else if (key == "momentum_encoder") c.momentum_encoder = parse_double(key, value);
  else if (key == "momentum_critic") c.momentum_critic = parse_double(key, value);
  else if (key == "ssl_every") c.ssl_every = parse_int(key, value);
  else if (key == "rho") c.rho = parse_double(key, value);
  else if (key == "lambda_consistency") c.lambda_consistency = parse_double(key, value);
  else if (key == "augmentation") c.augmentation = augmentation_from_string(value);
  else if (key == "overlay_alpha") c.overlay_alpha = parse_double(key, value);
  else if (key == "attribution_method") c.attribution_method = attribution_from_string(value);
  else if (key == "seed") c.seed = parse_u64(key, value);
  else if (key == "variant") c.variant = variant_from_string(value);
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

inline void validate_config(const ExperimentConfig& c) {
  auto fail = [](const std::string& key, const std::string& why) {
    throw std::invalid_argument("config: invalid " + key + ": " + why);
  };
  if (c.env_id != "point_reach" && c.env_id != "pendulum_swing")
    fail("env_id", "unknown environment '" + c.env_id + "'");
  if (c.image_size <= 0) fail("image_size", "must be positive");
  if (c.image_size < 12 || c.image_size % 8 != 4)
    fail("image_size", "must be at least 12 and leave remainder 4 when divided by 8 "
                       "(e.g. 12, 20, 28, ..., 84) so the decoder mirrors the encoder");
  if (c.frame_stack <= 0) fail("frame_stack", "must be positive");
  if (c.action_repeat <= 0) fail("action_repeat", "must be positive");
  if (!(c.discount > 0.0 && c.discount < 1.0)) fail("discount", "must lie in (0,1)");
  if (c.episode_length <= 0) fail("episode_length", "must be positive");
  if (c.total_env_steps <= 0) fail("total_env_steps", "must be positive");
  if (c.replay_capacity <= 0) fail("replay_capacity", "must be positive");
  if (c.batch_size <= 0) fail("batch_size", "must be positive");
  if (!(c.lr_main > 0.0)) fail("lr_main", "must be positive");
  if (!(c.lr_ssl > 0.0)) fail("lr_ssl", "must be positive");
  if (!(c.lr_temp > 0.0)) fail("lr_temp", "must be positive");
  if (c.target_update_every <= 0) fail("target_update_every", "must be positive");
  if (!(c.momentum_encoder > 0.0 && c.momentum_encoder <= 1.0))
    fail("momentum_encoder", "must lie in (0,1]");
  if (!(c.momentum_critic > 0.0 && c.momentum_critic <= 1.0))
    fail("momentum_critic", "must lie in (0,1]");
  if (c.ssl_every <= 0) fail("ssl_every", "must be positive");
  if (!(c.rho > 0.0 && c.rho < 1.0)) fail("rho", "must lie in (0,1)");
  if (!(c.lambda_consistency >= 0.0)) fail("lambda_consistency", "must be non-negative");
  if (!(c.overlay_alpha >= 0.0 && c.overlay_alpha <= 1.0))
    fail("overlay_alpha", "must lie in [0,1]");
}

// Parses a flat `key = value` document. '#' starts a comment; blank lines
// are skipped. Overrides (same syntax, one entry per string) win over the
// document. The result is always validated.
inline ExperimentConfig parse_config_text(const std::string& text,
                                          const std::vector<std::string>& overrides = {}) {
  ExperimentConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = cfg_detail::trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  " is not of the form key = value");
    apply_config_entry(c, cfg_detail::trim(line.substr(0, eq)),
                       cfg_detail::trim(line.substr(eq + 1)));
  }
  for (const std::string& ov : overrides) {
    const size_t eq = ov.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: override '" + ov + "' is not of the form key=value");
    apply_config_entry(c, cfg_detail::trim(ov.substr(0, eq)),
                       cfg_detail::trim(ov.substr(eq + 1)));
  }
  validate_config(c);
  return c;
}

inline ExperimentConfig load_config(const std::string& path,
                                    const std::vector<std::string>& overrides = {}) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str(), overrides);
}

// Every field, fixed order, full double precision: load(serialize(c)) == c.
inline std::string serialize_config(const ExperimentConfig& c) {
  using cfg_detail::fmt_double;
  std::ostringstream o;
  o << "env_id = " << c.env_id << "\n";
  o << "image_size = " << c.image_size << "\n";
  o << "frame_stack = " << c.frame_stack << "\n";
  o << "action_repeat = " << c.action_repeat << "\n";
  o << "discount = " << fmt_double(c.discount) << "\n";
  o << "episode_length = " << c.episode_length << "\n";
  o << "total_env_steps = " << c.total_env_steps << "\n";
  o << "replay_capacity = " << c.replay_capacity << "\n";
  o << "batch_size = " << c.batch_size << "\n";
  o << "lr_main = " << fmt_double(c.lr_main) << "\n";
  o << "lr_ssl = " << fmt_double(c.lr_ssl) << "\n";
  o << "lr_temp = " << fmt_double(c.lr_temp) << "\n";
  o << "target_update_every = " << c.target_update_every << "\n";
  o << "momentum_encoder = " << fmt_double(c.momentum_encoder) << "\n";
  o << "momentum_critic = " << fmt_double(c.momentum_critic) << "\n";
  o << "ssl_every = " << c.ssl_every << "\n";
  o << "rho = " << fmt_double(c.rho) << "\n";
  o << "lambda_consistency = " << fmt_double(c.lambda_consistency) << "\n";
  o << "augmentation = " << to_string(c.augmentation) << "\n";
  o << "overlay_alpha = " << fmt_double(c.overlay_alpha) << "\n";
  o << "attribution_method = " << to_string(c.attribution_method) << "\n";
  o << "seed = " << c.seed << "\n";
  o << "variant = " << to_string(c.variant) << "\n";
  return o.str();
}

inline void save_config(const ExperimentConfig& c, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("config: cannot write '" + path + "'");
  f << serialize_config(c);
  if (!f) throw std::runtime_error("config: write failed for '" + path + "'");
}

}  // namespace sgqn
