#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "pcdnet/camera.hpp"
#include "pcdnet/rng.hpp"
#include "pcdnet/tensor.hpp"

namespace pcdnet {

enum class Category { kSphere, kBox, kCylinder, kCapsule, kTorus };

Category category_from_string(const std::string& s);
std::string to_string(Category c);
const std::vector<Category>& all_categories();

// A posed primitive in camera coordinates. `size` is interpreted per category:
//   sphere:   {r, -, -}          box:     {ex, ey, ez} (half extents)
//   cylinder: {r, half_h, -}     capsule: {r, half_h, -}
//   torus:    {major_r, minor_r, -}
struct ShapeSpec {
  Category category = Category::kSphere;
  std::array<double, 3> size{0.3, 0.3, 0.3};
  std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major, local->camera
  std::array<double, 3> translation{0, 0, 2.0};
};

// Signed distance from a camera-frame point to the shape surface (exact for
// all five primitives).
double shape_sdf(const ShapeSpec& spec, const std::array<double, 3>& p);

// Radius of the bounding sphere around the shape center.
double bounding_radius(const ShapeSpec& spec);

// Throws DomainError unless the shape's bounding sphere lies inside the
// camera frustum of an image_h x image_w image.
void check_in_frustum(const ShapeSpec& spec, const CameraIntrinsics& cam, std::size_t image_h,
                      std::size_t image_w);

// Area-uniform surface samples in camera coordinates, [m,3].
Tensor<float> sample_surface(const ShapeSpec& spec, std::size_t m, Rng& rng);

// Silhouette image in [0,1]: sphere-traced ray/shape intersection per pixel,
// anti-aliased with a 2x2 subpixel grid. Background 0, object 1.
Tensor<float> render_silhouette(const ShapeSpec& spec, const CameraIntrinsics& cam,
                                std::size_t image_h, std::size_t image_w);

// Random shape of a category, fully inside the frustum by construction.
ShapeSpec random_shape(Category category, const CameraIntrinsics& cam, std::size_t image_h,
                       std::size_t image_w, Rng& rng);

struct Sample {
  std::uint64_t id = 0;
  std::string category;
  Tensor<float> image;     // [1,h,w]
  Tensor<float> gt_cloud;  // [m,3]
  CameraIntrinsics cam;
};

struct DataConfig {
  std::vector<Category> categories = all_categories();
  std::size_t per_category = 100;
  double split = 0.8;
  std::size_t image_h = 64, image_w = 64;
  std::size_t gt_points = 1024;
  CameraIntrinsics camera;
  std::uint64_t seed = 0;
};

struct Dataset {
  DataConfig config;
  std::vector<Sample> train;
  std::vector<Sample> test;
};

// Deterministic generation: the same config (and seed) produces byte-identical
// datasets. Splits are per category and disjoint by sample id.
Dataset make_dataset(const DataConfig& cfg);

// Directory layout: index.txt plus one PCDT image and cloud per sample.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace pcdnet
