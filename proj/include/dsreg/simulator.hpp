#pragma once

#include "dsreg/volume.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace dsreg {

enum class PhantomKind { smooth_blobs, shell, checker_smoothed };

std::string to_string(PhantomKind kind);
PhantomKind parse_phantom(const std::string& s);

// Deterministic synthetic source volume in [0, 255], unit spacing, origin 0.
Volume3 make_phantom(const std::array<int, 3>& dims, PhantomKind kind, std::uint64_t seed);

// Truncated-pyramid field of view. The apex sits above the z = 0 face so that
// the pyramid just reaches the full frame width at the far face.
struct Frustum {
    bool enabled = false;
    double half_angle_deg = 40.0;
};

struct SimProtocol {
    int n_frames = 11;
    double rot_range_deg = 12.0;     // per axis, between consecutive frames
    double trans_range_vox = 15.0;   // per axis, between consecutive frames
    double noise_std = 25.0;         // on the 0-255 scale
    std::array<int, 3> frame_dims{40, 40, 40};
    Frustum frustum;
    Vec3 sweep_vox = Vec3::Zero();   // deterministic drift added to every step
    double min_valid_fraction = 0.6; // of a frame's voxels inside the source
    double min_overlap_fraction = 0.25; // of a frame's voxels seen by its predecessor
    int max_attempts = 200;          // re-draws per step before giving up
    double init_rot_deg = 6.0;       // per axis perturbation of the initial guess
    double init_trans_vox = 7.5;
    std::uint64_t seed = 1;

    // Throws ErrorKind::invalid_config.
    void validate() const;
};

struct GroundTruthSequence {
    std::vector<Volume3> frames;
    std::vector<Pose> truth;   // world-to-frame
    std::vector<Pose> initial; // truth perturbed, for handing to a solver
    SimProtocol protocol;
    std::string source_id;
    int retries = 0;           // rejected trajectory draws
};

// Independent random stream for (seed, stream, index).
std::mt19937_64 sub_stream(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0);

// Frame lattice shared by all frames: source spacing, centred on the source.
Grid frame_grid(const Volume3& source, const std::array<int, 3>& frame_dims);

// accept(k, candidate, previous) may reject a draw for step k; rejected draws
// are re-drawn from a fresh sub-stream. Pose 0 is the identity.
using StepFilter = std::function<bool(std::size_t, const Pose&, const Pose&)>;
std::vector<Pose> sample_trajectory(const SimProtocol& protocol, std::uint64_t seed, const Grid& frame_lattice,
                                    const StepFilter& accept = {}, int* retries = nullptr);

// Frame voxel v takes source(T^-1 * world(v)); voxels outside the source or the
// frustum are 0 and invalid in the returned mask.
Volume3 extract_frame(const Volume3& source, const Pose& pose, const Grid& frame_lattice,
                      const Frustum& frustum = {});

// Additive i.i.d. Gaussian noise on valid voxels, clamped to [0, 255].
Volume3 add_noise(const Volume3& frame, double std_dev, std::uint64_t seed);

// The perturbation applied to truth to obtain initial guesses.
std::vector<Pose> perturb_poses(std::span<const Pose> truth, const Grid& frame_lattice, double rot_deg,
                                double trans_vox, std::uint64_t seed);

GroundTruthSequence simulate_sequence(const Volume3& source, const SimProtocol& protocol,
                                      const std::string& source_id = "");

} // namespace dsreg
