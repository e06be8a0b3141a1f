#include "pcdnet/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "pcdnet/io.hpp"
#include "pcdnet/parallel.hpp"

namespace pcdnet {

namespace {

constexpr double kPi = 3.14159265358979323846;

using Vec3 = std::array<double, 3>;

Vec3 sub3(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
double dot3(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
double len3(const Vec3& a) { return std::sqrt(dot3(a, a)); }

// rotation is row-major local->camera; its transpose maps camera->local.
Vec3 to_local(const ShapeSpec& s, const Vec3& p) {
  const Vec3 q = sub3(p, s.translation);
  const auto& r = s.rotation;
  return {r[0] * q[0] + r[3] * q[1] + r[6] * q[2], r[1] * q[0] + r[4] * q[1] + r[7] * q[2],
          r[2] * q[0] + r[5] * q[1] + r[8] * q[2]};
}

Vec3 to_camera(const ShapeSpec& s, const Vec3& p) {
  const auto& r = s.rotation;
  return {r[0] * p[0] + r[1] * p[1] + r[2] * p[2] + s.translation[0],
          r[3] * p[0] + r[4] * p[1] + r[5] * p[2] + s.translation[1],
          r[6] * p[0] + r[7] * p[1] + r[8] * p[2] + s.translation[2]};
}

double sdf_local(const ShapeSpec& s, const Vec3& p) {
  switch (s.category) {
    case Category::kSphere:
      return len3(p) - s.size[0];
    case Category::kBox: {
      const Vec3 q = {std::abs(p[0]) - s.size[0], std::abs(p[1]) - s.size[1],
                      std::abs(p[2]) - s.size[2]};
      const Vec3 qp = {std::max(q[0], 0.0), std::max(q[1], 0.0), std::max(q[2], 0.0)};
      return len3(qp) + std::min(std::max({q[0], q[1], q[2]}), 0.0);
    }
    case Category::kCylinder: {
      const double dr = std::sqrt(p[0] * p[0] + p[1] * p[1]) - s.size[0];
      const double dz = std::abs(p[2]) - s.size[1];
      const double ox = std::max(dr, 0.0), oz = std::max(dz, 0.0);
      return std::min(std::max(dr, dz), 0.0) + std::sqrt(ox * ox + oz * oz);
    }
    case Category::kCapsule: {
      const double cz = std::clamp(p[2], -s.size[1], s.size[1]);
      const Vec3 d = {p[0], p[1], p[2] - cz};
      return len3(d) - s.size[0];
    }
    case Category::kTorus: {
      const double qx = std::sqrt(p[0] * p[0] + p[1] * p[1]) - s.size[0];
      return std::sqrt(qx * qx + p[2] * p[2]) - s.size[1];
    }
  }
  throw ContractError("shape_sdf: unknown category");
}

}  // namespace

Category category_from_string(const std::string& s) {
  if (s == "sphere") return Category::kSphere;
  if (s == "box") return Category::kBox;
  if (s == "cylinder") return Category::kCylinder;
  if (s == "capsule") return Category::kCapsule;
  if (s == "torus") return Category::kTorus;
  throw ConfigError("unknown category '" + s + "'");
}

std::string to_string(Category c) {
  switch (c) {
    case Category::kSphere: return "sphere";
    case Category::kBox: return "box";
    case Category::kCylinder: return "cylinder";
    case Category::kCapsule: return "capsule";
    case Category::kTorus: return "torus";
  }
  return "?";
}

const std::vector<Category>& all_categories() {
  static const std::vector<Category> cats = {Category::kSphere, Category::kBox,
                                             Category::kCylinder, Category::kCapsule,
                                             Category::kTorus};
  return cats;
}

double shape_sdf(const ShapeSpec& spec, const std::array<double, 3>& p) {
  return sdf_local(spec, to_local(spec, p));
}

double bounding_radius(const ShapeSpec& spec) {
  switch (spec.category) {
    case Category::kSphere:
      return spec.size[0];
    case Category::kBox:
      return std::sqrt(spec.size[0] * spec.size[0] + spec.size[1] * spec.size[1] +
                       spec.size[2] * spec.size[2]);
    case Category::kCylinder:
      return std::sqrt(spec.size[0] * spec.size[0] + spec.size[1] * spec.size[1]);
    case Category::kCapsule:
      return spec.size[0] + spec.size[1];
    case Category::kTorus:
      return spec.size[0] + spec.size[1];
  }
  return 0;
}

void check_in_frustum(const ShapeSpec& spec, const CameraIntrinsics& cam, std::size_t image_h,
                      std::size_t image_w) {
  const double rb = bounding_radius(spec);
  const double z = spec.translation[2];
  if (z - rb < cam.near_z || z + rb > cam.far_z) {
    throw DomainError("shape depth range [" + std::to_string(z - rb) + ", " +
                      std::to_string(z + rb) + "] outside [near, far]");
  }
  const double zc = z - rb;  // closest depth: widest projection
  const double u_lo = cam.fx * (spec.translation[0] - rb) / zc + cam.cx;
  const double u_hi = cam.fx * (spec.translation[0] + rb) / zc + cam.cx;
  const double v_lo = cam.fy * (spec.translation[1] - rb) / zc + cam.cy;
  const double v_hi = cam.fy * (spec.translation[1] + rb) / zc + cam.cy;
  if (u_lo < 0 || v_lo < 0 || u_hi > static_cast<double>(image_w) ||
      v_hi > static_cast<double>(image_h)) {
    throw DomainError("shape projects outside the image plane");
  }
}

Tensor<float> sample_surface(const ShapeSpec& spec, std::size_t m, Rng& rng) {
  if (m == 0) throw DomainError("sample_surface: m must be >= 1");
  std::vector<float> out(m * 3);

  const auto emit = [&](std::size_t i, const Vec3& local) {
    const Vec3 p = to_camera(spec, local);
    out[i * 3] = static_cast<float>(p[0]);
    out[i * 3 + 1] = static_cast<float>(p[1]);
    out[i * 3 + 2] = static_cast<float>(p[2]);
  };

  const auto unit_sphere = [&rng]() {
    for (;;) {
      const Vec3 v = {rng.normal(), rng.normal(), rng.normal()};
      const double n = len3(v);
      if (n > 1e-9) return Vec3{v[0] / n, v[1] / n, v[2] / n};
    }
  };

  switch (spec.category) {
    case Category::kSphere: {
      const double r = spec.size[0];
      for (std::size_t i = 0; i < m; ++i) {
        const Vec3 d = unit_sphere();
        emit(i, {d[0] * r, d[1] * r, d[2] * r});
      }
      break;
    }
    case Category::kBox: {
      const double ex = spec.size[0], ey = spec.size[1], ez = spec.size[2];
      const double ax = ey * ez, ay = ex * ez, az = ex * ey;  // face-pair weights
      const double total = ax + ay + az;
      for (std::size_t i = 0; i < m; ++i) {
        const double pick = rng.uniform(0, total);
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        const double u = rng.uniform(-1, 1), v = rng.uniform(-1, 1);
        if (pick < ax) {
          emit(i, {sign * ex, u * ey, v * ez});
        } else if (pick < ax + ay) {
          emit(i, {u * ex, sign * ey, v * ez});
        } else {
          emit(i, {u * ex, v * ey, sign * ez});
        }
      }
      break;
    }
    case Category::kCylinder: {
      const double r = spec.size[0], h = spec.size[1];
      const double side = 2 * kPi * r * (2 * h);
      const double caps = 2 * kPi * r * r;
      for (std::size_t i = 0; i < m; ++i) {
        if (rng.uniform(0, side + caps) < side) {
          const double th = rng.uniform(0, 2 * kPi);
          emit(i, {r * std::cos(th), r * std::sin(th), rng.uniform(-h, h)});
        } else {
          const double th = rng.uniform(0, 2 * kPi);
          const double rr = r * std::sqrt(rng.uniform());
          const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
          emit(i, {rr * std::cos(th), rr * std::sin(th), sign * h});
        }
      }
      break;
    }
    case Category::kCapsule: {
      const double r = spec.size[0], h = spec.size[1];
      const double side = 2 * kPi * r * (2 * h);
      const double caps = 4 * kPi * r * r;  // two hemispheres = one sphere
      for (std::size_t i = 0; i < m; ++i) {
        if (rng.uniform(0, side + caps) < side) {
          const double th = rng.uniform(0, 2 * kPi);
          emit(i, {r * std::cos(th), r * std::sin(th), rng.uniform(-h, h)});
        } else {
          const Vec3 d = unit_sphere();
          const double zoff = d[2] >= 0 ? h : -h;
          emit(i, {d[0] * r, d[1] * r, d[2] * r + zoff});
        }
      }
      break;
    }
    case Category::kTorus: {
      const double R = spec.size[0], r = spec.size[1];
      for (std::size_t i = 0; i < m; ++i) {
        // minor angle must be weighted by (R + r cos) for area uniformity
        double phi;
        for (;;) {
          phi = rng.uniform(0, 2 * kPi);
          const double accept = (R + r * std::cos(phi)) / (R + r);
          if (rng.uniform() < accept) break;
        }
        const double th = rng.uniform(0, 2 * kPi);
        const double ring = R + r * std::cos(phi);
        emit(i, {ring * std::cos(th), ring * std::sin(th), r * std::sin(phi)});
      }
      break;
    }
  }
  return Tensor<float>({m, 3}, std::move(out));
}

Tensor<float> render_silhouette(const ShapeSpec& spec, const CameraIntrinsics& cam,
                                std::size_t image_h, std::size_t image_w) {
  check_in_frustum(spec, cam, image_h, image_w);
  const double t_max = cam.far_z + bounding_radius(spec) + 1.0;
  std::vector<float> img(image_h * image_w, 0.0f);

  const auto trace = [&](double u, double v) -> bool {
    const Vec3 dir_raw = {(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0};
    const double n = len3(dir_raw);
    const Vec3 dir = {dir_raw[0] / n, dir_raw[1] / n, dir_raw[2] / n};
    double t = 0.0;
    for (int step = 0; step < 160; ++step) {
      const Vec3 p = {dir[0] * t, dir[1] * t, dir[2] * t};
      const double d = shape_sdf(spec, p);
      if (d < 1e-4) return true;
      t += d;
      if (t > t_max) return false;
    }
    return false;
  };

  parallel_for(
      image_h,
      [&](std::size_t y0, std::size_t y1) {
        for (std::size_t y = y0; y < y1; ++y) {
          for (std::size_t x = 0; x < image_w; ++x) {
            int hits = 0;
            for (const double dy : {0.25, 0.75}) {
              for (const double dx : {0.25, 0.75}) {
                if (trace(static_cast<double>(x) + dx, static_cast<double>(y) + dy)) ++hits;
              }
            }
            img[y * image_w + x] = static_cast<float>(hits) / 4.0f;
          }
        }
      },
      4);

  return Tensor<float>({1, image_h, image_w}, std::move(img));
}

namespace {

std::array<double, 9> rotation_zx(double az, double ax) {
  const double cz = std::cos(az), sz = std::sin(az);
  const double cx = std::cos(ax), sx = std::sin(ax);
  // Rz(az) * Rx(ax), row-major
  return {cz, -sz * cx, sz * sx, sz, cz * cx, -cz * sx, 0, sx, cx};
}

}  // namespace

ShapeSpec random_shape(Category category, const CameraIntrinsics& cam, std::size_t image_h,
                       std::size_t image_w, Rng& rng) {
  ShapeSpec s;
  s.category = category;
  switch (category) {
    case Category::kSphere:
      s.size = {rng.uniform(0.26, 0.42), 0, 0};
      break;
    case Category::kBox:
      s.size = {rng.uniform(0.16, 0.34), rng.uniform(0.16, 0.34), rng.uniform(0.16, 0.34)};
      break;
    case Category::kCylinder:
      s.size = {rng.uniform(0.13, 0.19), rng.uniform(0.34, 0.46), 0};
      break;
    case Category::kCapsule:
      s.size = {rng.uniform(0.11, 0.16), rng.uniform(0.28, 0.4), 0};
      break;
    case Category::kTorus:
      s.size = {rng.uniform(0.25, 0.34), rng.uniform(0.07, 0.11), 0};
      break;
  }
  // Mild tilts keep each category's silhouette recognizable (tori show their
  // hole, cylinders stay elongated).
  const double az = rng.uniform(0, 2 * kPi);
  const double ax = rng.uniform(-0.45, 0.45);
  s.rotation = rotation_zx(az, ax);

  const double rb = bounding_radius(s);
  const double z_lo = cam.near_z + rb + 0.3;
  const double z_hi = cam.far_z - rb - 0.1;
  const double z = rng.uniform(z_lo, std::max(z_lo + 1e-6, z_hi));
  const double margin = 2.0;  // pixels
  const double zc = z - rb;
  const double max_x =
      std::max(0.0, (static_cast<double>(image_w) / 2 - margin) * zc / cam.fx - rb);
  const double max_y =
      std::max(0.0, (static_cast<double>(image_h) / 2 - margin) * zc / cam.fy - rb);
  s.translation = {rng.uniform(-max_x, max_x), rng.uniform(-max_y, max_y), z};
  return s;
}

Dataset make_dataset(const DataConfig& cfg) {
  cfg.camera.validate();
  if (cfg.per_category < 2) throw ConfigError("make_dataset: need >= 2 samples per category");
  if (!(cfg.split > 0 && cfg.split < 1)) {
    throw ConfigError("make_dataset: split must be in (0,1)");
  }
  Dataset ds;
  ds.config = cfg;
  for (std::size_t ci = 0; ci < cfg.categories.size(); ++ci) {
    const Category cat = cfg.categories[ci];
    std::vector<Sample> samples(cfg.per_category);
    std::vector<std::size_t> order(cfg.per_category);
    parallel_for(
        cfg.per_category,
        [&](std::size_t i0, std::size_t i1) {
          for (std::size_t i = i0; i < i1; ++i) {
            Rng rng = Rng::derive(cfg.seed, {3, ci, i});
            const ShapeSpec spec = random_shape(cat, cfg.camera, cfg.image_h, cfg.image_w, rng);
            Sample s;
            s.id = ci * cfg.per_category + i;
            s.category = to_string(cat);
            s.cam = cfg.camera;
            s.gt_cloud = sample_surface(spec, cfg.gt_points, rng);
            s.image = render_silhouette(spec, cfg.camera, cfg.image_h, cfg.image_w);
            samples[i] = std::move(s);
          }
        },
        1);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng split_rng = Rng::derive(cfg.seed, {4, ci});
    split_rng.shuffle(order.begin(), order.end());
    const std::size_t n_train =
        static_cast<std::size_t>(std::floor(cfg.split * static_cast<double>(cfg.per_category)));
    for (std::size_t i = 0; i < order.size(); ++i) {
      auto& dst = i < n_train ? ds.train : ds.test;
      dst.push_back(std::move(samples[order[i]]));
    }
  }
  // Stable on-disk and iteration order: by sample id.
  const auto by_id = [](const Sample& a, const Sample& b) { return a.id < b.id; };
  std::sort(ds.train.begin(), ds.train.end(), by_id);
  std::sort(ds.test.begin(), ds.test.end(), by_id);
  return ds;
}

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ostringstream index;
  const auto& cfg = ds.config;
  index << "pcdnet-dataset 1\n";
  index << "camera " << format_double(cfg.camera.fx) << " " << format_double(cfg.camera.fy)
        << " " << format_double(cfg.camera.cx) << " " << format_double(cfg.camera.cy) << " "
        << format_double(cfg.camera.near_z) << " " << format_double(cfg.camera.far_z) << "\n";
  index << "image " << cfg.image_h << " " << cfg.image_w << "\n";
  index << "gt_points " << cfg.gt_points << "\n";
  index << "categories";
  for (Category c : cfg.categories) index << " " << to_string(c);
  index << "\n";

  const auto dump = [&](const std::vector<Sample>& list, const char* split) {
    for (const Sample& s : list) {
      const std::string img = "img_" + std::to_string(s.id) + ".pcdt";
      const std::string cloud = "cloud_" + std::to_string(s.id) + ".pcdt";
      index << "sample " << s.id << " " << s.category << " " << split << " " << img << " "
            << cloud << "\n";
      save_pcdt(dir / img, s.image);
      save_pcdt(dir / cloud, s.gt_cloud);
    }
  };
  dump(ds.train, "train");
  dump(ds.test, "test");
  atomic_write(dir / "index.txt", index.str());
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream is(dir / "index.txt");
  if (!is) throw IoError("dataset: cannot open " + (dir / "index.txt").string());
  Dataset ds;
  std::string line;
  if (!std::getline(is, line) || line != "pcdnet-dataset 1") {
    throw IoError("dataset: bad index header");
  }
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "camera") {
      auto& c = ds.config.camera;
      ss >> c.fx >> c.fy >> c.cx >> c.cy >> c.near_z >> c.far_z;
    } else if (tag == "image") {
      ss >> ds.config.image_h >> ds.config.image_w;
    } else if (tag == "gt_points") {
      ss >> ds.config.gt_points;
    } else if (tag == "categories") {
      ds.config.categories.clear();
      std::string c;
      while (ss >> c) ds.config.categories.push_back(category_from_string(c));
    } else if (tag == "sample") {
      Sample s;
      std::string split, img, cloud;
      ss >> s.id >> s.category >> split >> img >> cloud;
      if (ss.fail()) throw IoError("dataset: malformed sample line: " + line);
      s.cam = ds.config.camera;
      s.image = load_pcdt<float>(dir / img);
      s.gt_cloud = load_pcdt<float>(dir / cloud);
      if (split == "train") {
        ds.train.push_back(std::move(s));
      } else if (split == "test") {
        ds.test.push_back(std::move(s));
      } else {
        throw IoError("dataset: unknown split '" + split + "'");
      }
    } else {
      throw IoError("dataset: unknown index tag '" + tag + "'");
    }
  }
  return ds;
}

}  // namespace pcdnet
