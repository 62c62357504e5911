#include "dsreg/evaluation.hpp"

#include "dsreg/error.hpp"
#include "dsreg/residual.hpp"

#include <cmath>

namespace dsreg {

PoseErrorSummary pose_errors(std::span<const Pose> estimated, std::span<const Pose> truth,
                             const Vec3& panorama_spacing, std::size_t anchor) {
    if (estimated.size() != truth.size())
        throw Error(ErrorKind::invalid_input, "estimated and true pose sets differ in length");
    if (truth.empty()) throw Error(ErrorKind::invalid_input, "empty pose sets");
    if (anchor >= truth.size()) throw Error(ErrorKind::invalid_input, "anchor frame out of range");

    PoseErrorSummary out;
    const Mat4 gauge = truth[anchor].inverse().matrix() * estimated[anchor].matrix();
    double sum_t = 0.0, sum_r = 0.0;
    for (std::size_t k = 0; k < truth.size(); ++k) {
        const Mat4 aligned_to_world = gauge * estimated[k].inverse().matrix();
        const Mat4 err = truth[k].matrix() * aligned_to_world;
        const Vec3 t = err.topRightCorner<3, 1>().cwiseQuotient(panorama_spacing);
        const Vec3 r = matrix_to_euler_zyx(err.topLeftCorner<3, 3>());
        out.translation_errors.push_back(t);
        out.rotation_errors.push_back(r);
        sum_t += t.cwiseAbs().sum();
        sum_r += r.cwiseAbs().sum();
    }
    const double denom = 3.0 * static_cast<double>(truth.size());
    out.mae_translation = sum_t / denom;
    out.mae_rotation = sum_r / denom;
    return out;
}

double objective_of(std::span<const Volume3> frames, std::span<const Pose> poses, const Grid& grid) {
    return profiled_objective(build_observations(frames, poses, grid));
}

FovGainReport fov_gain(const Volume3& counts, const Volume3& reference_frame) {
    FovGainReport r;
    r.single_frame_voxel_count = reference_frame.valid_count();
    if (r.single_frame_voxel_count == 0) throw Error(ErrorKind::invalid_input, "reference frame has no valid voxels");
    for (float c : counts.data())
        if (c >= 1.0f) ++r.fused_voxel_count;
    r.ratio = static_cast<double>(r.fused_voxel_count) / static_cast<double>(r.single_frame_voxel_count);
    return r;
}

} // namespace dsreg
