#include "pcdnet/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "pcdnet/io.hpp"
#include "pcdnet/parallel.hpp"

namespace pcdnet {

namespace {

std::string shortest_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <typename T>
Tensor<T> as_dtype(const Tensor<float>& t) {
  if constexpr (std::is_same_v<T, float>) {
    return t;
  } else {
    return to_f64(t);
  }
}

}  // namespace

std::vector<std::size_t> TrainConfig::resolved_milestones() const {
  if (!milestones.empty()) return milestones;
  return {epochs / 2, epochs * 4 / 5};
}

void TrainConfig::validate() const {
  if (lr < 0) throw ConfigError("train: lr must be nonnegative");
  if (!(lr_decay > 0)) throw ConfigError("train: lr_decay must be positive");
  if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
  if (init_points == 0) throw ConfigError("train: init_points must be positive");
  for (std::size_t m : resolved_milestones()) {
    if (epochs > 0 && m > epochs) {
      throw ConfigError("train: milestone " + std::to_string(m) + " beyond epochs " +
                        std::to_string(epochs));
    }
  }
}

std::string loss_csv_header() { return "step,epoch,lr,chamfer,l2,total"; }

std::string to_csv_row(const LossRow& row) {
  return std::to_string(row.step) + "," + std::to_string(row.epoch) + "," +
         shortest_double(row.lr) + "," + shortest_double(row.chamfer) + "," +
         shortest_double(row.l2) + "," + shortest_double(row.total);
}

void write_loss_csv(const std::filesystem::path& path, std::span<const LossRow> rows) {
  std::string out = loss_csv_header() + "\n";
  for (const LossRow& r : rows) out += to_csv_row(r) + "\n";
  atomic_write(path, out);
}

template <typename T>
Tensor<T> init_point_cloud(std::size_t n, const CameraIntrinsics& cam, std::size_t image_h,
                           std::size_t image_w, Rng& rng) {
  if (n == 0) throw DomainError("init_point_cloud: n must be >= 1");
  cam.validate();
  std::vector<T> out(n * 3);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform(0, static_cast<double>(image_w));
    const double v = rng.uniform(0, static_cast<double>(image_h));
    const double z = rng.uniform(cam.near_z, cam.far_z);
    out[i * 3] = static_cast<T>((u - cam.cx) * z / cam.fx);
    out[i * 3 + 1] = static_cast<T>((v - cam.cy) * z / cam.fy);
    out[i * 3 + 2] = static_cast<T>(z);
  }
  return Tensor<T>({n, 3}, std::move(out));
}

// --- Trainer ---------------------------------------------------------------------

template <typename T>
Trainer<T>::Trainer(PcdNetModel<T>& model, const TrainConfig& cfg, NNBackend backend)
    : model_(model), cfg_(cfg), backend_(backend) {
  cfg_.validate();
  if (cfg_.init_points != model.config().n_points) {
    throw ConfigError("trainer: init_points " + std::to_string(cfg_.init_points) +
                      " must match the model's cloud size " +
                      std::to_string(model.config().n_points));
  }
  params_ = model.named_params();
  std::vector<Tensor<T>> tensors;
  tensors.reserve(params_.size());
  for (auto& p : params_) tensors.push_back(p.tensor);
  adam_ = Adam<T>(std::move(tensors), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
}

template <typename T>
double Trainer<T>::lr_at_epoch(std::size_t epoch) const {
  double lr = cfg_.lr;
  for (std::size_t m : cfg_.resolved_milestones()) {
    if (epoch >= m) lr *= cfg_.lr_decay;
  }
  return lr;
}

template <typename T>
std::vector<LossRow> Trainer<T>::run(std::span<const Sample> data, const StepFn& on_step) {
  if (data.empty()) throw DomainError("train: dataset is empty");
  const std::size_t n = data.size();
  const std::size_t spe = (n + cfg_.batch_size - 1) / cfg_.batch_size;
  const std::size_t total_steps = cfg_.epochs * spe;
  const std::size_t image_h = model_.config().encoder.image_h;
  const std::size_t image_w = model_.config().encoder.image_w;

  std::vector<LossRow> rows;
  std::vector<std::size_t> perm(n);
  std::size_t perm_epoch = std::size_t(-1);

  while (step_ < total_steps) {
    const std::size_t epoch = step_ / spe;
    if (epoch != perm_epoch) {
      for (std::size_t i = 0; i < n; ++i) perm[i] = i;
      Rng shuffle_rng = Rng::derive(cfg_.seed, {11, epoch});
      shuffle_rng.shuffle(perm.begin(), perm.end());
      perm_epoch = epoch;
    }
    adam_.set_lr(lr_at_epoch(epoch));

    const std::size_t b0 = (step_ % spe) * cfg_.batch_size;
    const std::size_t b1 = std::min(n, b0 + cfg_.batch_size);
    const std::size_t batch = b1 - b0;

    struct ItemResult {
      double chamfer_value = 0;
      GradMap<T> grads;
    };
    std::vector<ItemResult> items(batch);

    parallel_for(
        batch,
        [&](std::size_t s0, std::size_t s1) {
          for (std::size_t slot = s0; slot < s1; ++slot) {
            const Sample& sample = data[perm[b0 + slot]];
            Rng rng = Rng::derive(cfg_.seed, {12, step_, slot});
            Tensor<T> cloud =
                init_point_cloud<T>(cfg_.init_points, sample.cam, image_h, image_w, rng);
            Tensor<T> pred = model_.forward(as_dtype<T>(sample.image), cloud, sample.cam);
            Tensor<T> loss = chamfer(pred, as_dtype<T>(sample.gt_cloud), backend_);
            items[slot].chamfer_value = static_cast<double>(loss.item());
            backward_into(loss, items[slot].grads);
          }
        },
        1);

    // Fixed-order reduction of the per-item gradients: batch mean.
    const T inv_b = T(1) / static_cast<T>(batch);
    double chamfer_mean = 0;
    for (std::size_t slot = 0; slot < batch; ++slot) {
      chamfer_mean += items[slot].chamfer_value;
      for (auto& p : params_) {
        const auto it = items[slot].grads.find(p.tensor.node().get());
        if (it == items[slot].grads.end()) continue;
        auto g = p.tensor.grad_mut();
        for (std::size_t j = 0; j < g.size(); ++j) g[j] += inv_b * it->second[j];
      }
    }
    chamfer_mean /= static_cast<double>(batch);

    double l2_value = 0;
    if (cfg_.l2_lambda != 0) {
      std::vector<Tensor<T>> tensors;
      tensors.reserve(params_.size());
      for (auto& p : params_) tensors.push_back(p.tensor);
      Tensor<T> reg = l2_penalty(std::span<const Tensor<T>>(tensors), cfg_.l2_lambda);
      l2_value = static_cast<double>(reg.item());
      backward(reg);
    }

    const double total = chamfer_mean + l2_value;
    if (!std::isfinite(total)) {
      std::ostringstream diag;
      diag << "train: non-finite loss at step " << (step_ + 1) << " (chamfer=" << chamfer_mean
           << ", l2=" << l2_value << "); parameter norms:";
      for (const auto& p : params_) {
        double norm = 0;
        for (T v : p.tensor.values()) norm += static_cast<double>(v) * v;
        diag << " " << p.name << "=" << std::sqrt(norm);
      }
      throw Error(diag.str());
    }

    adam_.step();
    adam_.zero_grad();
    ++step_;

    LossRow row{step_, epoch, adam_.lr(), chamfer_mean, l2_value, total};
    rows.push_back(row);
    if (on_step) on_step(row, *this);
  }
  return rows;
}

template <typename T>
Checkpoint<T> Trainer<T>::snapshot() const {
  Checkpoint<T> ck;
  ck.model = model_.config();
  ck.train = cfg_;
  ck.step = step_;
  ck.adam_t = adam_.steps_taken();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ck.params.push_back({params_[i].name, params_[i].tensor.clone()});
    ck.adam_m.push_back(
        {params_[i].name, Tensor<T>(params_[i].tensor.shape(), adam_.moment1()[i])});
    ck.adam_v.push_back(
        {params_[i].name, Tensor<T>(params_[i].tensor.shape(), adam_.moment2()[i])});
  }
  return ck;
}

template <typename T>
void Trainer<T>::restore(const Checkpoint<T>& ck) {
  if (ck.params.size() != params_.size()) {
    throw ContractError("restore: checkpoint has " + std::to_string(ck.params.size()) +
                        " tensors, model has " + std::to_string(params_.size()));
  }
  std::vector<std::vector<T>> m(params_.size()), v(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (ck.params[i].name != params_[i].name ||
        ck.params[i].tensor.shape() != params_[i].tensor.shape()) {
      throw ContractError("restore: tensor mismatch at '" + params_[i].name + "'");
    }
    auto dst = params_[i].tensor.values_mut();
    const auto src = ck.params[i].tensor.values();
    std::copy(src.begin(), src.end(), dst.begin());
    m[i].assign(ck.adam_m[i].tensor.values().begin(), ck.adam_m[i].tensor.values().end());
    v[i].assign(ck.adam_v[i].tensor.values().begin(), ck.adam_v[i].tensor.values().end());
  }
  adam_.set_state(ck.adam_t, std::move(m), std::move(v));
  cfg_ = ck.train;
  step_ = ck.step;
}

// --- evaluate / generate_dense ----------------------------------------------------

std::string to_text(const MetricsReport& report) {
  std::ostringstream os;
  os << "category        n      CD         IoU\n";
  const auto row = [&](const MetricsRow& r) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%-12s %5zu  %-10.6g %-10.6g\n", r.category.c_str(),
                  r.count, r.cd, r.iou);
    os << buf;
  };
  for (const auto& r : report.per_category) row(r);
  row(report.overall);
  return os.str();
}

std::string to_csv(const MetricsReport& report) {
  std::string out = "category,count,cd,iou\n";
  const auto row = [&](const MetricsRow& r) {
    out += r.category + "," + std::to_string(r.count) + "," + shortest_double(r.cd) + "," +
           shortest_double(r.iou) + "\n";
  };
  for (const auto& r : report.per_category) row(r);
  row(report.overall);
  return out;
}

template <typename T>
MetricsReport evaluate(const PcdNetModel<T>& model, std::span<const Sample> samples,
                       const NNBackend& backend, std::uint64_t seed) {
  if (samples.empty()) throw DomainError("evaluate: no samples");
  NoGradGuard guard;
  const std::size_t image_h = model.config().encoder.image_h;
  const std::size_t image_w = model.config().encoder.image_w;

  struct Agg {
    std::string category;
    double cd = 0, iou = 0;
    std::size_t n = 0;
  };
  std::vector<Agg> aggs;
  Agg overall{"mean", 0, 0, 0};

  for (const Sample& s : samples) {
    Rng rng = Rng::derive(seed, {2, s.id});
    Tensor<T> cloud =
        init_point_cloud<T>(model.config().n_points, s.cam, image_h, image_w, rng);
    Tensor<T> pred = model.forward(as_dtype<T>(s.image), cloud, s.cam);
    Tensor<T> gt = as_dtype<T>(s.gt_cloud);
    const double cd = static_cast<double>(chamfer(pred, gt, backend).item());
    const double iou = iou_voxel(pred, gt);
    auto it = std::find_if(aggs.begin(), aggs.end(),
                           [&](const Agg& a) { return a.category == s.category; });
    if (it == aggs.end()) {
      aggs.push_back({s.category, 0, 0, 0});
      it = aggs.end() - 1;
    }
    it->cd += cd;
    it->iou += iou;
    ++it->n;
    overall.cd += cd;
    overall.iou += iou;
    ++overall.n;
  }

  MetricsReport report;
  for (const Agg& a : aggs) {
    report.per_category.push_back(
        {a.category, a.cd / static_cast<double>(a.n), a.iou / static_cast<double>(a.n), a.n});
  }
  report.overall = {"mean", overall.cd / static_cast<double>(overall.n),
                    overall.iou / static_cast<double>(overall.n), overall.n};
  return report;
}

template <typename T>
Tensor<T> generate_dense(const PcdNetModel<T>& model, const Tensor<T>& image,
                         const CameraIntrinsics& cam, std::size_t total_points, Rng& rng) {
  const std::size_t chunk = model.output_points(model.config().n_points);
  if (total_points == 0 || total_points % chunk != 0) {
    const std::size_t k = std::max<std::size_t>(
        1, (total_points + chunk / 2) / std::max<std::size_t>(1, chunk));
    throw ConfigError("generate_dense: " + std::to_string(total_points) +
                      " points is not a multiple of the model's output size " +
                      std::to_string(chunk) + "; nearest valid is " +
                      std::to_string(k * chunk));
  }
  NoGradGuard guard;
  const std::size_t k = total_points / chunk;
  const std::size_t image_h = model.config().encoder.image_h;
  const std::size_t image_w = model.config().encoder.image_w;
  std::vector<Tensor<T>> chunks;
  chunks.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    Tensor<T> cloud = init_point_cloud<T>(model.config().n_points, cam, image_h, image_w, rng);
    chunks.push_back(model.forward(image, cloud, cam));
  }
  return concat(std::span<const Tensor<T>>(chunks), 0);
}

// --- instantiations ------------------------------------------------------------

#define PCDNET_INSTANTIATE_TRAIN(T)                                                       \
  template Tensor<T> init_point_cloud<T>(std::size_t, const CameraIntrinsics&, std::size_t, \
                                         std::size_t, Rng&);                              \
  template class Trainer<T>;                                                              \
  template MetricsReport evaluate<T>(const PcdNetModel<T>&, std::span<const Sample>,      \
                                     const NNBackend&, std::uint64_t);                    \
  template Tensor<T> generate_dense<T>(const PcdNetModel<T>&, const Tensor<T>&,           \
                                       const CameraIntrinsics&, std::size_t, Rng&);

PCDNET_INSTANTIATE_TRAIN(float)
PCDNET_INSTANTIATE_TRAIN(double)

#undef PCDNET_INSTANTIATE_TRAIN

}  // namespace pcdnet
