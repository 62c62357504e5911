#pragma once

#include "dsreg/volume.hpp"

#include <span>
#include <string>
#include <vector>

namespace dsreg {

inline constexpr const char* kEulerConvention = "ZYX (yaw, pitch, roll), radians";
inline constexpr const char* kAlignmentConvention =
    "estimated poses re-expressed in the truth world frame through frame 0; "
    "MAE = mean of |error| over all frames and the 3 axes";

struct PoseErrorSummary {
    std::vector<Vec3> translation_errors; // panorama voxels, per frame
    std::vector<Vec3> rotation_errors;    // yaw, pitch, roll radians, per frame
    double mae_translation = 0.0;
    double mae_rotation = 0.0;
    std::string alignment_convention = kAlignmentConvention;
    std::string euler_convention = kEulerConvention;
};

// Both sets are world-to-frame. Estimated poses are first moved into the
// truth world frame so that frame `anchor` coincides; each frame's error is
// then the rigid motion between its true and aligned frame-to-world maps.
PoseErrorSummary pose_errors(std::span<const Pose> estimated, std::span<const Pose> truth,
                             const Vec3& panorama_spacing, std::size_t anchor = 0);

// Objective with the panorama at the per-voxel mean of the observations.
double objective_of(std::span<const Volume3> frames, std::span<const Pose> poses, const Grid& grid);

struct FovGainReport {
    std::size_t fused_voxel_count = 0;
    std::size_t single_frame_voxel_count = 0;
    double ratio = 0.0;
};

// Covered panorama voxels (count >= 1) over valid voxels of the reference frame.
FovGainReport fov_gain(const Volume3& counts, const Volume3& reference_frame);

} // namespace dsreg
