#include "pcqa/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace pcqa {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end)
    throw std::invalid_argument("config key '" + key + "': cannot parse '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw std::invalid_argument("config key '" + key + "': expected true/false, got '" + value + "'");
}

}  // namespace

void ModelConfig::sync() {
  feedback.heads = encoder.heads;
  local.in_channels = feedback.out_channels;
  local.d_out = encoder.d_out;
  encoder.validate();
  feedback.validate();
}

std::map<std::string, std::string> TrainConfig::to_map() const {
  std::map<std::string, std::string> m;
  m["epochs"] = std::to_string(epochs);
  m["batch_size"] = std::to_string(batch_size);
  m["lr_pretrained"] = fmt_double(lr_pretrained);
  m["lr_rest"] = fmt_double(lr_rest);
  m["lr_decay"] = fmt_double(lr_decay);
  m["decay_every"] = std::to_string(decay_every);
  m["weight_decay"] = fmt_double(weight_decay);
  m["adam_beta1"] = fmt_double(adam_beta1);
  m["adam_beta2"] = fmt_double(adam_beta2);
  m["adam_eps"] = fmt_double(adam_eps);
  m["crop_size"] = std::to_string(crop_size);
  m["eval_crops"] = std::to_string(eval_crops);
  m["seed"] = std::to_string(seed);
  m["pretrained"] = pretrained;
  m["render_resolution"] = std::to_string(render.resolution);
  m["splat_radius"] = fmt_double(render.splat_radius);
  m["points_per_pixel"] = std::to_string(render.points_per_pixel);
  m["patch_size"] = std::to_string(model.encoder.patch_size);
  m["embed_dim"] = std::to_string(model.encoder.embed_dim);
  m["depth"] = std::to_string(model.encoder.depth);
  m["heads"] = std::to_string(model.encoder.heads);
  m["mlp_ratio"] = std::to_string(model.encoder.mlp_ratio);
  m["d_out"] = std::to_string(model.encoder.d_out);
  m["attn_norm_affine"] = model.encoder.attn_norm_affine ? "true" : "false";
  m["regions"] = std::to_string(model.feedback.regions);
  m["kernel_size"] = std::to_string(model.feedback.kernel_size);
  m["st_temperature"] = fmt_double(model.feedback.st_temperature);
  m["interpolation"] = to_string(model.feedback.interpolation);
  m["lambda_dis"] = fmt_double(objective.lambda_dis);
  m["lambda_rank"] = fmt_double(objective.lambda_rank);
  m["softrank_epsilon"] = fmt_double(objective.softrank_epsilon);
  m["detach_coarse_rank"] = objective.detach_coarse_rank ? "true" : "false";
  return m;
}

std::string TrainConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : to_map()) out += k + " = " + v + "\n";
  return out;
}

std::uint64_t TrainConfig::hash() const { return std::hash<std::string>{}(to_text()); }

void TrainConfig::set(const std::string& key, const std::string& value) {
  if (key == "epochs") epochs = parse_number<int>(key, value);
  else if (key == "batch_size") batch_size = parse_number<int>(key, value);
  else if (key == "lr_pretrained") lr_pretrained = parse_number<double>(key, value);
  else if (key == "lr_rest") lr_rest = parse_number<double>(key, value);
  else if (key == "lr_decay") lr_decay = parse_number<double>(key, value);
  else if (key == "decay_every") decay_every = parse_number<int>(key, value);
  else if (key == "weight_decay") weight_decay = parse_number<double>(key, value);
  else if (key == "adam_beta1") adam_beta1 = parse_number<double>(key, value);
  else if (key == "adam_beta2") adam_beta2 = parse_number<double>(key, value);
  else if (key == "adam_eps") adam_eps = parse_number<double>(key, value);
  else if (key == "crop_size") model.encoder.image_size = crop_size = parse_number<int>(key, value);
  else if (key == "eval_crops") eval_crops = parse_number<int>(key, value);
  else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
  else if (key == "pretrained") pretrained = value;
  else if (key == "render_resolution") render.resolution = parse_number<int>(key, value);
  else if (key == "splat_radius") render.splat_radius = parse_number<double>(key, value);
  else if (key == "points_per_pixel") render.points_per_pixel = parse_number<int>(key, value);
  else if (key == "patch_size") model.encoder.patch_size = parse_number<int>(key, value);
  else if (key == "embed_dim") model.encoder.embed_dim = parse_number<int>(key, value);
  else if (key == "depth") model.encoder.depth = parse_number<int>(key, value);
  else if (key == "heads") model.encoder.heads = parse_number<int>(key, value);
  else if (key == "mlp_ratio") model.encoder.mlp_ratio = parse_number<int>(key, value);
  else if (key == "d_out") model.encoder.d_out = parse_number<int>(key, value);
  else if (key == "attn_norm_affine") model.encoder.attn_norm_affine = parse_bool(key, value);
  else if (key == "regions") model.feedback.regions = parse_number<int>(key, value);
  else if (key == "kernel_size") model.feedback.kernel_size = parse_number<int>(key, value);
  else if (key == "st_temperature") model.feedback.st_temperature = parse_number<double>(key, value);
  else if (key == "interpolation") model.feedback.interpolation = parse_interpolation(value);
  else if (key == "lambda_dis") objective.lambda_dis = parse_number<double>(key, value);
  else if (key == "lambda_rank") objective.lambda_rank = parse_number<double>(key, value);
  else if (key == "softrank_epsilon") objective.softrank_epsilon = parse_number<double>(key, value);
  else if (key == "detach_coarse_rank") objective.detach_coarse_rank = parse_bool(key, value);
  else throw std::invalid_argument("unknown config key '" + key + "'");
}

void TrainConfig::apply(const std::vector<std::string>& overrides) {
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("override '" + kv + "' is not key=value");
    set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
}

void TrainConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("config: ") + what);
  };
  need(epochs >= 1, "epochs must be >= 1");
  need(batch_size >= 1, "batch_size must be >= 1");
  need(lr_pretrained > 0 && lr_rest > 0, "learning rates must be positive");
  need(lr_decay > 0 && lr_decay <= 1, "lr_decay must be in (0, 1]");
  need(decay_every >= 1, "decay_every must be >= 1");
  need(weight_decay >= 0, "weight_decay must be non-negative");
  need(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1, "adam betas must be in [0, 1)");
  need(adam_eps > 0, "adam_eps must be positive");
  need(crop_size >= 1 && crop_size <= render.resolution, "crop_size must be in [1, render_resolution]");
  need(eval_crops >= 1, "eval_crops must be >= 1");
  need(crop_size == model.encoder.image_size, "crop_size must equal the encoder input size");
  need(objective.lambda_dis >= 0 && objective.lambda_rank >= 0, "loss weights must be non-negative");
  need(objective.softrank_epsilon > 0, "softrank_epsilon must be positive");
  ModelConfig m = model;
  m.sync();
}

void TrainConfig::merge_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": expected key = value");
    try {
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void TrainConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  merge_text(ss.str(), path.string());
}

TrainConfig TrainConfig::from_text(const std::string& text, const std::string& origin) {
  TrainConfig cfg;
  cfg.merge_text(text, origin);
  return cfg;
}

TrainConfig TrainConfig::tiny() {
  TrainConfig c;
  c.epochs = 30;
  c.batch_size = 1;
  c.lr_pretrained = 1e-3;
  c.lr_rest = 5e-3;
  c.crop_size = 64;
  c.eval_crops = 1;
  c.render.resolution = 64;
  c.render.splat_radius = 0.04;
  c.model.encoder.image_size = 64;
  c.model.encoder.patch_size = 16;
  c.model.encoder.embed_dim = 8;
  c.model.encoder.depth = 1;
  c.model.encoder.heads = 2;
  c.model.encoder.mlp_ratio = 4;
  c.model.encoder.d_out = 16;
  c.model.feedback.regions = 4;
  c.model.feedback.kernel_size = 3;
  return c;
}

}  // namespace pcqa
