#pragma once

#include "simcvd/grid.hpp"

namespace simcvd {

/// Sign given to voxels inside the object. Outside voxels get the opposite sign.
inline constexpr double kInsideSign = -1.0;

/// Exact squared Euclidean distance (in spacing units, voxel centres) from every voxel to the
/// nearest voxel where `feature` is nonzero. Voxels are +inf when no feature voxel exists.
RealGrid squared_distance_transform(const MaskGrid& feature, const Spacing& spacing);

/// Signed distance map normalised per sign class to [-1, 1]: negative inside, positive outside.
/// Each voxel's raw value is the distance to the nearest voxel of the opposite class; inside
/// values are divided by the largest inside distance and outside values by the largest outside
/// distance. An empty mask maps to +1 everywhere, a full mask to -1 everywhere.
RealGrid signed_distance_map(const MaskGrid& mask, const Spacing& spacing = {1.0, 1.0, 1.0});

/// Element-wise sum of an intensity volume and an SDM-shaped grid.
RealGrid boundary_aware_feature(const RealGrid& x, const RealGrid& q_sdm);

}  // namespace simcvd
