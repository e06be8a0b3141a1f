#pragma once

#include "pcdnet/errors.hpp"

namespace pcdnet {

// Pinhole intrinsics in pixel units, +z looking into the scene. Points are
// expected in camera coordinates (identity extrinsics).
struct CameraIntrinsics {
  double fx = 56.0, fy = 56.0;
  double cx = 32.0, cy = 32.0;
  double near_z = 1.0, far_z = 3.0;

  void validate() const {
    if (fx <= 0 || fy <= 0) throw ConfigError("camera: focal lengths must be positive");
    if (!(0 < near_z && near_z < far_z)) {
      throw ConfigError("camera: requires 0 < near < far");
    }
  }
};

}  // namespace pcdnet
