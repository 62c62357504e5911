#pragma once

#include "dsreg/solver.hpp"

namespace dsreg {

// Running panorama of the baseline: frames are fused in one at a time.
struct SequentialState {
    Volume3 panorama;
    Volume3 counts;
    std::vector<Pose> registered;

    explicit SequentialState(const Grid& grid);

    // Incremental mean: panorama <- (panorama * count + sample) / (count + 1).
    void fuse_in(const Volume3& frame, const Pose& pose);
    // Panorama with a validity mask of the covered voxels (count >= 1).
    Volume3 covered_target() const;
};

struct PairwiseResult {
    Pose pose;
    double objective = 0.0;
    Termination termination = Termination::converged;
    std::vector<IterationRecord> iterations;
};

// Single-pose SSD Gauss-Newton of `frame` against `target`, over the target
// voxels marked valid in its mask (all voxels if it has none). Same pyramid,
// damping and backtracking as the joint solvers.
PairwiseResult register_pairwise(const Volume3& target, const Volume3& frame, const Pose& init,
                                 const SolverConfig& config);

// Frame 0 is fused at its initial pose; every later frame is registered to the
// panorama built so far and then fused into it.
SolveReport run_sequential(std::span<const Volume3> frames, std::span<const Pose> initial_poses,
                           const SolverConfig& config, const std::optional<PanoramaGrid>& grid = std::nullopt);

} // namespace dsreg
