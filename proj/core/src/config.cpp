#include "pcdnet/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "pcdnet/io.hpp"

namespace pcdnet {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string shortest_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: bad number for " + key + ": '" + v + "'");
  }
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const unsigned long long x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return static_cast<std::size_t>(x);
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: bad boolean for " + key + ": '" + v + "'");
}

std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  if (trim(v).empty()) return out;
  std::istringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_size(key, trim(item)));
  return out;
}

std::vector<std::string> parse_string_list(const std::string& v) {
  std::vector<std::string> out;
  std::istringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

std::string join_strings(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += v[i];
  }
  return out;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream is(text);
  std::string line, section;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("config line " + std::to_string(line_no) + ": malformed section");
      }
      section = line.substr(1, line.size() - 2);
      if (section != "data" && section != "model" && section != "train" && section != "io") {
        throw ConfigError("config: unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const std::string fq = section + "." + key;

    if (fq == "data.categories") {
      cfg.categories = parse_string_list(value);
    } else if (fq == "data.per_category") {
      cfg.per_category = parse_size(fq, value);
    } else if (fq == "data.split") {
      cfg.split = parse_double(fq, value);
    } else if (fq == "data.image_size") {
      cfg.image_size = parse_size(fq, value);
    } else if (fq == "data.gt_points") {
      cfg.gt_points = parse_size(fq, value);
    } else if (fq == "data.fx") {
      cfg.fx = parse_double(fq, value);
    } else if (fq == "data.fy") {
      cfg.fy = parse_double(fq, value);
    } else if (fq == "data.cx") {
      cfg.cx = parse_double(fq, value);
    } else if (fq == "data.cy") {
      cfg.cy = parse_double(fq, value);
    } else if (fq == "data.near") {
      cfg.near_z = parse_double(fq, value);
    } else if (fq == "data.far") {
      cfg.far_z = parse_double(fq, value);
    } else if (fq == "model.variant") {
      cfg.variant = value;
      variant_from_string(value);  // validate
    } else if (fq == "model.widths") {
      cfg.widths = parse_size_list(fq, value);
    } else if (fq == "model.channels") {
      cfg.channels = parse_size_list(fq, value);
    } else if (fq == "model.expansion") {
      cfg.expansion = parse_size_list(fq, value);
    } else if (fq == "model.factored_rank") {
      cfg.factored_rank = parse_size(fq, value);
    } else if (fq == "model.blend") {
      cfg.blend = value;
      blend_mode_from_string(value);  // validate
    } else if (fq == "train.lr") {
      cfg.lr = parse_double(fq, value);
    } else if (fq == "train.lr_decay") {
      cfg.lr_decay = parse_double(fq, value);
    } else if (fq == "train.milestones") {
      cfg.milestones = parse_size_list(fq, value);
    } else if (fq == "train.beta1") {
      cfg.beta1 = parse_double(fq, value);
    } else if (fq == "train.beta2") {
      cfg.beta2 = parse_double(fq, value);
    } else if (fq == "train.adam_eps") {
      cfg.adam_eps = parse_double(fq, value);
    } else if (fq == "train.l2_lambda") {
      cfg.l2_lambda = parse_double(fq, value);
    } else if (fq == "train.batch_size") {
      cfg.batch_size = parse_size(fq, value);
    } else if (fq == "train.epochs") {
      cfg.epochs = parse_size(fq, value);
    } else if (fq == "train.init_points") {
      cfg.init_points = parse_size(fq, value);
    } else if (fq == "io.run_dir") {
      cfg.run_dir = value;
    } else if (fq == "io.checkpoint_every") {
      cfg.checkpoint_every = parse_size(fq, value);
    } else if (fq == "io.seed") {
      cfg.seed = parse_size(fq, value);
    } else if (fq == "io.deterministic") {
      cfg.deterministic = parse_bool(fq, value);
    } else if (fq == "io.threads") {
      cfg.threads = parse_size(fq, value);
    } else if (fq == "io.nn_backend") {
      cfg.nn_backend = value;
      nn_backend_from_string(value);  // validate
    } else {
      throw ConfigError("config: unknown key '" + fq + "'");
    }
  }
  // Resolve the principal point default.
  if (cfg.cx < 0) cfg.cx = static_cast<double>(cfg.image_size) / 2;
  if (cfg.cy < 0) cfg.cy = static_cast<double>(cfg.image_size) / 2;
  return cfg;
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << "[data]\n";
  os << "categories = " << join_strings(cfg.categories) << "\n";
  os << "per_category = " << cfg.per_category << "\n";
  os << "split = " << shortest_double(cfg.split) << "\n";
  os << "image_size = " << cfg.image_size << "\n";
  os << "gt_points = " << cfg.gt_points << "\n";
  os << "fx = " << shortest_double(cfg.fx) << "\n";
  os << "fy = " << shortest_double(cfg.fy) << "\n";
  os << "cx = " << shortest_double(cfg.cx) << "\n";
  os << "cy = " << shortest_double(cfg.cy) << "\n";
  os << "near = " << shortest_double(cfg.near_z) << "\n";
  os << "far = " << shortest_double(cfg.far_z) << "\n";
  os << "\n[model]\n";
  os << "variant = " << cfg.variant << "\n";
  os << "widths = " << join_sizes(cfg.widths) << "\n";
  os << "channels = " << join_sizes(cfg.channels) << "\n";
  os << "expansion = " << join_sizes(cfg.expansion) << "\n";
  os << "factored_rank = " << cfg.factored_rank << "\n";
  os << "blend = " << cfg.blend << "\n";
  os << "\n[train]\n";
  os << "lr = " << shortest_double(cfg.lr) << "\n";
  os << "lr_decay = " << shortest_double(cfg.lr_decay) << "\n";
  os << "milestones = " << join_sizes(cfg.milestones) << "\n";
  os << "beta1 = " << shortest_double(cfg.beta1) << "\n";
  os << "beta2 = " << shortest_double(cfg.beta2) << "\n";
  os << "adam_eps = " << shortest_double(cfg.adam_eps) << "\n";
  os << "l2_lambda = " << shortest_double(cfg.l2_lambda) << "\n";
  os << "batch_size = " << cfg.batch_size << "\n";
  os << "epochs = " << cfg.epochs << "\n";
  os << "init_points = " << cfg.init_points << "\n";
  os << "\n[io]\n";
  os << "run_dir = " << cfg.run_dir << "\n";
  os << "checkpoint_every = " << cfg.checkpoint_every << "\n";
  os << "seed = " << cfg.seed << "\n";
  os << "deterministic = " << (cfg.deterministic ? "true" : "false") << "\n";
  os << "threads = " << cfg.threads << "\n";
  os << "nn_backend = " << cfg.nn_backend << "\n";
  return os.str();
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("config: cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& cfg) {
  atomic_write(path, serialize_config(cfg));
}

CameraIntrinsics camera_from(const ExperimentConfig& cfg) {
  CameraIntrinsics cam{cfg.fx, cfg.fy, cfg.cx, cfg.cy, cfg.near_z, cfg.far_z};
  cam.validate();
  return cam;
}

DataConfig data_config_from(const ExperimentConfig& cfg) {
  DataConfig dc;
  dc.categories.clear();
  for (const auto& c : cfg.categories) dc.categories.push_back(category_from_string(c));
  dc.per_category = cfg.per_category;
  dc.split = cfg.split;
  dc.image_h = cfg.image_size;
  dc.image_w = cfg.image_size;
  dc.gt_points = cfg.gt_points;
  dc.camera = camera_from(cfg);
  dc.seed = cfg.seed;
  return dc;
}

ModelConfig model_config_from(const ExperimentConfig& cfg) {
  ModelConfig mc;
  mc.encoder.channels = cfg.channels;
  mc.encoder.image_h = cfg.image_size;
  mc.encoder.image_w = cfg.image_size;
  mc.camera = camera_from(cfg);
  mc.variant = variant_from_string(cfg.variant);
  mc.widths = cfg.widths;
  mc.expansion = cfg.expansion;
  mc.n_points = cfg.init_points;
  mc.factored_rank = cfg.factored_rank;
  mc.blend_mode = blend_mode_from_string(cfg.blend);
  mc.validate();
  return mc;
}

TrainConfig train_config_from(const ExperimentConfig& cfg) {
  TrainConfig tc;
  tc.lr = cfg.lr;
  tc.lr_decay = cfg.lr_decay;
  tc.milestones = cfg.milestones;
  tc.beta1 = cfg.beta1;
  tc.beta2 = cfg.beta2;
  tc.adam_eps = cfg.adam_eps;
  tc.l2_lambda = cfg.l2_lambda;
  tc.batch_size = cfg.batch_size;
  tc.epochs = cfg.epochs;
  tc.init_points = cfg.init_points;
  tc.seed = cfg.seed;
  tc.deterministic = cfg.deterministic;
  tc.validate();
  return tc;
}

}  // namespace pcdnet
