#include <cstdio>
#include <fstream>
#include <sstream>

#include "pcdnet/io.hpp"
#include "pcdnet/train.hpp"

namespace pcdnet {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

std::vector<std::size_t> split_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::string cur;
  std::istringstream ss(s);
  while (std::getline(ss, cur, ',')) {
    if (!cur.empty()) out.push_back(static_cast<std::size_t>(std::stoull(cur)));
  }
  return out;
}

void write_name(std::ostream& os, const std::string& name) {
  const std::uint16_t len = static_cast<std::uint16_t>(name.size());
  os.put(static_cast<char>(len & 0xff));
  os.put(static_cast<char>((len >> 8) & 0xff));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
}

std::string read_name(std::istream& is) {
  const int lo = is.get(), hi = is.get();
  if (lo < 0 || hi < 0) throw IoError("checkpoint: truncated tensor name");
  const std::size_t len = static_cast<std::size_t>(lo) | (static_cast<std::size_t>(hi) << 8);
  std::string name(len, '\0');
  is.read(name.data(), static_cast<std::streamsize>(len));
  if (!is) throw IoError("checkpoint: truncated tensor name");
  return name;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<T>& ck) {
  std::ostringstream os(std::ios::binary);
  os << "PCDC " << ck.version << "\n";
  const ModelConfig& m = ck.model;
  os << "model.variant: " << to_string(m.variant) << "\n";
  os << "model.channels: " << join_sizes(m.encoder.channels) << "\n";
  os << "model.image_h: " << m.encoder.image_h << "\n";
  os << "model.image_w: " << m.encoder.image_w << "\n";
  os << "model.camera: " << fmt_double(m.camera.fx) << " " << fmt_double(m.camera.fy) << " "
     << fmt_double(m.camera.cx) << " " << fmt_double(m.camera.cy) << " "
     << fmt_double(m.camera.near_z) << " " << fmt_double(m.camera.far_z) << "\n";
  os << "model.widths: " << join_sizes(m.widths) << "\n";
  os << "model.expansion: " << join_sizes(m.expansion) << "\n";
  os << "model.n_points: " << m.n_points << "\n";
  os << "model.factored_rank: " << m.factored_rank << "\n";
  os << "model.blend: " << to_string(m.blend_mode) << "\n";
  const TrainConfig& t = ck.train;
  os << "train.lr: " << fmt_double(t.lr) << "\n";
  os << "train.lr_decay: " << fmt_double(t.lr_decay) << "\n";
  os << "train.milestones: " << join_sizes(t.milestones) << "\n";
  os << "train.beta1: " << fmt_double(t.beta1) << "\n";
  os << "train.beta2: " << fmt_double(t.beta2) << "\n";
  os << "train.adam_eps: " << fmt_double(t.adam_eps) << "\n";
  os << "train.l2_lambda: " << fmt_double(t.l2_lambda) << "\n";
  os << "train.batch_size: " << t.batch_size << "\n";
  os << "train.epochs: " << t.epochs << "\n";
  os << "train.init_points: " << t.init_points << "\n";
  os << "train.seed: " << t.seed << "\n";
  os << "train.deterministic: " << (t.deterministic ? 1 : 0) << "\n";
  os << "state.step: " << ck.step << "\n";
  os << "state.adam_t: " << ck.adam_t << "\n";
  os << "state.tensors: " << (ck.params.size() + ck.adam_m.size() + ck.adam_v.size()) << "\n";
  os << "---\n";
  const auto dump = [&](const std::vector<NamedParam<T>>& list, const char* prefix) {
    for (const auto& p : list) {
      write_name(os, std::string(prefix) + p.name);
      write_pcdt(os, p.tensor);
    }
  };
  dump(ck.params, "p ");
  dump(ck.adam_m, "m ");
  dump(ck.adam_v, "v ");
  atomic_write(path, os.str());
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open " + path.string());
  Checkpoint<T> ck;
  std::string line;
  if (!std::getline(is, line) || line.rfind("PCDC ", 0) != 0) {
    throw IoError("checkpoint: bad magic line");
  }
  ck.version = static_cast<std::uint32_t>(std::stoul(line.substr(5)));
  std::size_t tensor_count = 0;
  while (std::getline(is, line)) {
    if (line == "---") break;
    const auto colon = line.find(": ");
    std::string key, value;
    if (colon == std::string::npos) {
      if (line.size() > 1 && line.back() == ':') {
        key = line.substr(0, line.size() - 1);
      } else {
        throw IoError("checkpoint: malformed header line: " + line);
      }
    } else {
      key = line.substr(0, colon);
      value = line.substr(colon + 2);
    }
    auto& m = ck.model;
    auto& t = ck.train;
    if (key == "model.variant") {
      m.variant = variant_from_string(value);
    } else if (key == "model.channels") {
      m.encoder.channels = split_sizes(value);
    } else if (key == "model.image_h") {
      m.encoder.image_h = std::stoull(value);
    } else if (key == "model.image_w") {
      m.encoder.image_w = std::stoull(value);
    } else if (key == "model.camera") {
      std::istringstream ss(value);
      ss >> m.camera.fx >> m.camera.fy >> m.camera.cx >> m.camera.cy >> m.camera.near_z >>
          m.camera.far_z;
    } else if (key == "model.widths") {
      m.widths = split_sizes(value);
    } else if (key == "model.expansion") {
      m.expansion = split_sizes(value);
    } else if (key == "model.n_points") {
      m.n_points = std::stoull(value);
    } else if (key == "model.factored_rank") {
      m.factored_rank = std::stoull(value);
    } else if (key == "model.blend") {
      m.blend_mode = blend_mode_from_string(value);
    } else if (key == "train.lr") {
      t.lr = std::stod(value);
    } else if (key == "train.lr_decay") {
      t.lr_decay = std::stod(value);
    } else if (key == "train.milestones") {
      t.milestones = split_sizes(value);
    } else if (key == "train.beta1") {
      t.beta1 = std::stod(value);
    } else if (key == "train.beta2") {
      t.beta2 = std::stod(value);
    } else if (key == "train.adam_eps") {
      t.adam_eps = std::stod(value);
    } else if (key == "train.l2_lambda") {
      t.l2_lambda = std::stod(value);
    } else if (key == "train.batch_size") {
      t.batch_size = std::stoull(value);
    } else if (key == "train.epochs") {
      t.epochs = std::stoull(value);
    } else if (key == "train.init_points") {
      t.init_points = std::stoull(value);
    } else if (key == "train.seed") {
      t.seed = std::stoull(value);
    } else if (key == "train.deterministic") {
      t.deterministic = value != "0";
    } else if (key == "state.step") {
      ck.step = std::stoull(value);
    } else if (key == "state.adam_t") {
      ck.adam_t = std::stoull(value);
    } else if (key == "state.tensors") {
      tensor_count = std::stoull(value);
    } else {
      throw IoError("checkpoint: unknown header key '" + key + "'");
    }
  }
  for (std::size_t i = 0; i < tensor_count; ++i) {
    const std::string tagged = read_name(is);
    if (tagged.size() < 2) throw IoError("checkpoint: bad tensor tag");
    const std::string name = tagged.substr(2);
    Tensor<T> tensor = read_pcdt<T>(is);
    if (tagged[0] == 'p') {
      ck.params.push_back({name, std::move(tensor)});
    } else if (tagged[0] == 'm') {
      ck.adam_m.push_back({name, std::move(tensor)});
    } else if (tagged[0] == 'v') {
      ck.adam_v.push_back({name, std::move(tensor)});
    } else {
      throw IoError("checkpoint: unknown tensor tag '" + tagged.substr(0, 1) + "'");
    }
  }
  return ck;
}

template <typename T>
PcdNetModel<T> model_from_checkpoint(const Checkpoint<T>& ck) {
  Rng rng(0);
  PcdNetModel<T> model(ck.model, rng);
  auto params = model.named_params();
  if (params.size() != ck.params.size()) {
    throw IoError("checkpoint: stores " + std::to_string(ck.params.size()) +
                  " parameters, model wants " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != ck.params[i].name ||
        params[i].tensor.shape() != ck.params[i].tensor.shape()) {
      throw IoError("checkpoint: tensor mismatch at '" + params[i].name + "'");
    }
    auto dst = params[i].tensor.values_mut();
    const auto src = ck.params[i].tensor.values();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return model;
}

template void save_checkpoint<float>(const std::filesystem::path&, const Checkpoint<float>&);
template void save_checkpoint<double>(const std::filesystem::path&, const Checkpoint<double>&);
template Checkpoint<float> load_checkpoint<float>(const std::filesystem::path&);
template Checkpoint<double> load_checkpoint<double>(const std::filesystem::path&);
template PcdNetModel<float> model_from_checkpoint<float>(const Checkpoint<float>&);
template PcdNetModel<double> model_from_checkpoint<double>(const Checkpoint<double>&);

}  // namespace pcdnet
