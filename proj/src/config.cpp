#include "sfanet/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace sfanet {

namespace {

using Setter = std::function<void(const std::string&)>;

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  const std::string v = trim(text);
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw ConfigError("invalid value '" + text + "' for " + key);
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& text) {
  std::string v = trim(text);
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("invalid boolean '" + text + "' for " + key);
}

std::array<float, 3> parse_triple(const std::string& key, const std::string& text) {
  std::array<float, 3> out{};
  std::stringstream ss(text);
  std::string part;
  std::size_t i = 0;
  while (std::getline(ss, part, ',')) {
    if (i == 3) throw ConfigError(key + " takes three comma-separated values");
    out[i++] = parse_number<float>(key, part);
  }
  if (i != 3) throw ConfigError(key + " takes three comma-separated values");
  return out;
}

template <typename T>
Setter number(const std::string& key, T& field) {
  return [key, &field](const std::string& v) { field = parse_number<T>(key, v); };
}

Setter boolean(const std::string& key, bool& field) {
  return [key, &field](const std::string& v) { field = parse_bool(key, v); };
}

Setter path_value(std::optional<std::filesystem::path>& field, const std::filesystem::path& dir) {
  return [&field, dir](const std::string& v) {
    const std::filesystem::path p = trim(v);
    field = p.is_absolute() ? p : dir / p;
  };
}

std::map<std::string, Setter> setters(RunConfig& c, const std::filesystem::path& dir, std::optional<bool>& model_amp,
                                      std::optional<bool>& train_amp) {
  std::map<std::string, Setter> s;
  s["model.width_multiplier"] = number("model.width_multiplier", c.model.width_multiplier);
  s["model.amp_enabled"] = [&](const std::string& v) { model_amp = parse_bool("model.amp_enabled", v); };
  s["model.bn_eps"] = number("model.bn_eps", c.model.bn_eps);
  s["model.bn_momentum"] = number("model.bn_momentum", c.model.bn_momentum);
  s["model.init_std"] = number("model.init_std", c.model.init_std);
  s["model.init_seed"] = number("model.init_seed", c.model.init_seed);
  s["model.upsample"] = [&](const std::string& v) {
    if (trim(v) != "nearest") throw ConfigError("model.upsample supports only 'nearest', got '" + v + "'");
    c.model.upsample = UpsampleMode::Nearest;
  };
  s["model.conv_algorithm"] = [&](const std::string& v) {
    const auto t = trim(v);
    if (t == "gemm") c.model.conv_algorithm = ConvAlgorithm::Gemm;
    else if (t == "direct") c.model.conv_algorithm = ConvAlgorithm::Direct;
    else throw ConfigError("model.conv_algorithm must be 'gemm' or 'direct', got '" + v + "'");
  };

  s["train.lr"] = number("train.lr", c.train.lr);
  s["train.weight_decay"] = number("train.weight_decay", c.train.weight_decay);
  s["train.alpha"] = number("train.alpha", c.train.alpha);
  s["train.beta1"] = number("train.beta1", c.train.beta1);
  s["train.beta2"] = number("train.beta2", c.train.beta2);
  s["train.adam_eps"] = number("train.adam_eps", c.train.adam_eps);
  s["train.batch_size"] = number("train.batch_size", c.train.batch_size);
  s["train.epochs"] = number("train.epochs", c.train.epochs);
  s["train.max_steps"] = number("train.max_steps", c.train.max_steps);
  s["train.checkpoint_every"] = number("train.checkpoint_every", c.train.checkpoint_every);
  s["train.eval_every"] = number("train.eval_every", c.train.eval_every);
  s["train.seed"] = number("train.seed", c.train.seed);
  s["train.amp_enabled"] = [&](const std::string& v) { train_amp = parse_bool("train.amp_enabled", v); };
  s["train.reduction"] = [&](const std::string& v) {
    const auto t = trim(v);
    if (t == "sum") c.train.reduction = PixelReduction::Sum;
    else if (t == "mean") c.train.reduction = PixelReduction::Mean;
    else throw ConfigError("train.reduction must be 'sum' or 'mean', got '" + v + "'");
  };

  s["augment.crop_width"] = number("augment.crop_width", c.augment.crop_width);
  s["augment.crop_height"] = number("augment.crop_height", c.augment.crop_height);
  s["augment.short_side_min"] = number("augment.short_side_min", c.augment.short_side_min);
  s["augment.scale_min"] = number("augment.scale_min", c.augment.scale_min);
  s["augment.scale_max"] = number("augment.scale_max", c.augment.scale_max);
  s["augment.flip_p"] = number("augment.flip_p", c.augment.flip_p);
  s["augment.gamma_min"] = number("augment.gamma_min", c.augment.gamma_min);
  s["augment.gamma_max"] = number("augment.gamma_max", c.augment.gamma_max);
  s["augment.gamma_p"] = number("augment.gamma_p", c.augment.gamma_p);
  s["augment.gray_p"] = number("augment.gray_p", c.augment.gray_p);
  s["augment.seed"] = number("augment.seed", c.augment.seed);

  s["groundtruth.density_mu"] = number("groundtruth.density_mu", c.groundtruth.density_kernel.mu);
  s["groundtruth.density_rho"] = number("groundtruth.density_rho", c.groundtruth.density_kernel.rho);
  s["groundtruth.attention_mu"] = number("groundtruth.attention_mu", c.groundtruth.attention_kernel.mu);
  s["groundtruth.attention_rho"] = number("groundtruth.attention_rho", c.groundtruth.attention_kernel.rho);
  s["groundtruth.threshold"] = number("groundtruth.threshold", c.groundtruth.threshold);

  s["normalize.mean"] = [&](const std::string& v) { c.normalize.mean = parse_triple("normalize.mean", v); };
  s["normalize.std"] = [&](const std::string& v) { c.normalize.stddev = parse_triple("normalize.std", v); };

  s["data.train_manifest"] = path_value(c.train_manifest, dir);
  s["data.val_manifest"] = path_value(c.val_manifest, dir);
  s["data.roi"] = path_value(c.roi, dir);
  s["data.out_dir"] = path_value(c.out_dir, dir);
  s["data.qnrf_resize"] = boolean("data.qnrf_resize", c.ingest.qnrf_resize);
  s["data.ucsd_upscale"] = boolean("data.ucsd_upscale", c.ingest.ucsd_upscale);
  return s;
}

}  // namespace

void RunConfig::set_seed(std::uint64_t seed) {
  model.init_seed = seed;
  train.seed = seed;
  augment.seed = seed;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  augment.validate();
  groundtruth.density_kernel.validate();
  groundtruth.attention_kernel.validate();
  if (!(groundtruth.threshold > 0.0)) throw ConfigError("groundtruth.threshold must be positive");
  if (model.amp_enabled != train.amp_enabled) throw ConfigError("model.amp_enabled and train.amp_enabled disagree");
  for (float s : normalize.stddev) {
    if (!(s > 0.0f)) throw ConfigError("normalize.std entries must be positive");
  }
}

std::vector<std::string> preset_names() { return {"desk", "parta", "partb", "qnrf", "ucsd"}; }

RunConfig preset(const std::string& name) {
  RunConfig c;
  if (name == "desk") {
    c.model.width_multiplier = 0.125;
    c.augment.crop_width = c.augment.crop_height = 128;
    c.augment.short_side_min = 128;
    c.train.batch_size = 4;
  } else if (name == "parta") {
    c.augment.gray_p = 0.1;
  } else if (name == "partb") {
  } else if (name == "qnrf") {
    c.ingest.qnrf_resize = true;
    // Targets are rendered on the 1024-wide resized images.
    c.groundtruth.density_kernel = adaptive_kernel(kQnrfWidth);
  } else if (name == "ucsd") {
    c.ingest.ucsd_upscale = true;
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  return c;
}

RunConfig parse_config(const std::string& text, const std::filesystem::path& dir, RunConfig base) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  std::optional<bool> model_amp, train_amp;
  auto table = setters(base, dir, model_amp, train_amp);
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config key '" + section + "' is outside any section");
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      auto it = table.find(full);
      if (it == table.end()) throw ConfigError("unknown config key '" + full + "'");
      it->second(value.data());
    }
  }
  if (model_amp && train_amp && *model_amp != *train_amp) {
    throw ConfigError("model.amp_enabled and train.amp_enabled disagree");
  }
  if (model_amp || train_amp) {
    const bool amp = model_amp ? *model_amp : *train_amp;
    base.model.amp_enabled = base.train.amp_enabled = amp;
  }
  base.validate();
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str(), path.parent_path(), std::move(base));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace sfanet
