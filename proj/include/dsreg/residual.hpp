#pragma once

#include "dsreg/volume.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <vector>

namespace dsreg {

using Row6 = Eigen::Matrix<double, 1, 6, Eigen::RowMajor | Eigen::DontAlign>;

// Where the intensity gradient at a warped point comes from.
enum class GradientSource {
    // Exact derivative of the trilinear interpolant, from the same 8 corners
    // as the intensity sample.
    interpolant,
    // Trilinear blend of a central-difference GradientField computed up front.
    precomputed,
};

// One observed (panorama voxel, frame) pair, i.e. one row of J.
struct Observation {
    std::uint32_t voxel;     // panorama grid index j
    std::uint32_t frame;     // frame index i
    Eigen::Vector3f point;   // p_ij in frame voxel coordinates
    Eigen::Vector3f gradient; // intensity gradient at p_ij, per frame voxel
    double intensity;        // I_i(p_ij)
    Row6 jac;                // d e_ij / d xi_i = -grad^T d p_ij / d xi_i
};

struct ObservationTable {
    Grid grid;
    std::size_t frame_count = 0;
    std::vector<Observation> entries;    // voxel-major, frames ascending within a voxel
    std::vector<std::uint32_t> counts;   // per grid voxel
    std::vector<std::uint32_t> active;   // grid voxel of each active slot (count >= 1)
    std::vector<std::size_t> offsets;    // slot k owns entries [offsets[k], offsets[k+1])

    std::size_t active_count() const { return active.size(); }
    std::span<const Observation> slot(std::size_t k) const {
        return {entries.data() + offsets[k], offsets[k + 1] - offsets[k]};
    }
};

struct ObservationOptions {
    GradientSource gradient = GradientSource::interpolant;
    // Required for GradientSource::precomputed, one per frame.
    std::span<const GradientField> gradient_fields;
    // Optional per-grid-voxel filter; voxels with 0 are never observed.
    std::span<const std::uint8_t> voxel_mask;
};

// sigma(p): inside [0, dims-1] on every axis and, if the frame has a validity
// mask, all 8 interpolation corners valid.
bool visibility(const Volume3& frame, const Vec3& p);

// Throws ErrorKind::no_overlap when nothing is observed.
ObservationTable build_observations(std::span<const Volume3> frames, std::span<const Pose> poses,
                                    const Grid& grid, const ObservationOptions& options = {});

// Pose-parameter blocks of the free (non-anchored) frames; -1 marks anchored.
std::vector<int> block_layout(const std::vector<bool>& anchored);

struct Coupling {
    int block;
    Row6 row;
};

// Blocks of the Gauss-Newton system
//   [ H_xx  H_xM ] [dx]   [b_x]
//   [ H_Mx  H_MM ] [dM] = [b_M]
// restricted to the active voxels. H_MM is diagonal and held as counts; H_xM
// is held per active voxel as the jac rows of its free-frame observations.
struct BlockSystem {
    const ObservationTable* table = nullptr;
    std::vector<int> block_of_frame;
    int blocks = 0;
    Eigen::MatrixXd H_xx;
    Eigen::VectorXd b_x;
    Eigen::VectorXd H_MM_diag;
    Eigen::VectorXd b_M;
    std::vector<std::size_t> coupling_offsets;
    std::vector<Coupling> coupling;
    Eigen::VectorXd residuals; // e = M - B per entry, only when intensities were given
    bool has_intensities = false;
    bool singletons_skipped = false;

    int dim() const { return 6 * blocks; }
};

// With M (one value per grid voxel) the residual is e = M - B; without it the
// A term is dropped and e = -B, which yields the intensity-free right-hand
// side once the intensity block is eliminated. Single-observation voxels may
// be left out of H_xx and b_x; schur_reduce then skips them as well.
BlockSystem assemble(const ObservationTable& obs, std::span<const int> block_of_frame,
                     std::span<const double> intensities = {}, bool skip_singletons = false);

// Per-grid-voxel mean of observed local intensities (0 where unobserved).
std::vector<double> fused_mean(const ObservationTable& obs);

// Sum over entries of (M_j - B_ij)^2.
double objective(const ObservationTable& obs, std::span<const double> intensities);

// objective() with M at its conditional optimum, the per-voxel mean.
double profiled_objective(const ObservationTable& obs);

} // namespace dsreg
