#pragma once

#include "dsreg/residual.hpp"
#include "dsreg/volume.hpp"

#include <Eigen/Core>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dsreg {

enum class SolverMode { dsr, dba, sequential };

// How the joint solver carries panorama intensities between iterations.
enum class IntensityPolicy {
    // Reset M to the fused mean at the start of every iteration.
    refuse_each_iteration,
    // Fuse once per pyramid level, then let the intensity update evolve M.
    evolve,
};

// Initial pose handed to each pairwise step of the sequential baseline.
enum class SequentialInit {
    // Previous solved pose composed with the provided inter-frame motion.
    chained,
    // The provided initial pose as-is.
    provided,
};

struct SolverConfig {
    SolverMode mode = SolverMode::dsr;
    int max_iters = 50;       // per pyramid level
    int pyramid_levels = 3;
    double rel_tol = 1e-6;    // relative objective decrease
    double step_tol = 1e-6;   // largest per-frame increment norm
    double damping = 1e-6;    // times trace/rows, added to the reduced pose Hessian
    bool backtracking = true;
    int max_halvings = 8;
    bool skip_singletons = true;
    IntensityPolicy intensity_policy = IntensityPolicy::refuse_each_iteration;
    GradientSource gradient = GradientSource::interpolant;
    SequentialInit sequential_init = SequentialInit::chained;
    int margin_voxels = 2;
    std::vector<int> anchored{0};

    // Throws ErrorKind::invalid_config.
    void validate() const;
};

std::string to_string(SolverMode mode);
SolverMode parse_mode(const std::string& s);

enum class Termination { converged, stalled, max_iterations };
std::string to_string(Termination t);

struct IterationRecord {
    int level = 0;
    int iteration = 0;            // 0 is the state on entering the level
    int frame = -1;               // sequential baseline: frame being registered
    double objective = 0.0;       // with the method's own panorama intensities
    double profiled_objective = 0.0; // with M at the per-voxel mean
    double step_norm = 0.0;       // largest per-frame increment norm (applied)
    double step_scale = 1.0;      // accepted line-search factor
    double projection_residual = 0.0;
    std::size_t observations = 0;
    std::size_t active_voxels = 0;
    double seconds = 0.0;
    std::vector<Vec6> poses;      // pose trajectory after this iteration
};

struct SolveReport {
    SolverMode mode = SolverMode::dsr;
    std::vector<IterationRecord> iterations;
    std::vector<Pose> poses;
    PanoramaGrid grid;
    FusedVolume fused;
    Termination termination = Termination::converged;
    double final_objective = 0.0;
};

struct ReducedSystem {
    Eigen::MatrixXd matrix;
    Eigen::VectorXd rhs;
};

// (H_xx - H_xM H_MM^-1 H_Mx, b_x - H_xM H_MM^-1 b_M), streamed one voxel at a
// time as rank-one downdates with weight 1/n_j.
ReducedSystem schur_reduce(const BlockSystem& blocks);

// Delta M per active slot: (b_M - H_Mx dx) / n_j.
Eigen::VectorXd intensity_update(const BlockSystem& blocks, const Eigen::VectorXd& dx);

// Solves the damped reduced system; throws ErrorKind::gauge_underdetermined
// when a free frame carries no information or the factorisation fails.
Eigen::VectorXd solve_reduced(const ReducedSystem& reduced, double damping);

// ||J_x^T (A - P A)||_inf / ||J_x^T A||_inf, where A holds M at each entry's
// voxel and P averages A over groups of entries. By default the groups are the
// entries' voxels (the actual projection onto the column space of J_M);
// `grouping` overrides them with one group id per entry. Jacobian rows of all
// frames are used.
double projection_identity_residual(const ObservationTable& obs, std::span<const double> intensities,
                                    std::span<const std::uint32_t> grouping = {});

// Registration drivers. The panorama grid defaults to the bounding box of the
// frames under the initial poses; coarse levels use coarsen_grid() of it.
SolveReport solve_dsr(std::span<const Volume3> frames, std::span<const Pose> initial_poses,
                      const SolverConfig& config, const std::optional<PanoramaGrid>& grid = std::nullopt);
SolveReport solve_dba(std::span<const Volume3> frames, std::span<const Pose> initial_poses,
                      const SolverConfig& config, const std::optional<PanoramaGrid>& grid = std::nullopt);

// Dispatches on config.mode (sequential goes to run_sequential).
SolveReport solve(std::span<const Volume3> frames, std::span<const Pose> initial_poses,
                  const SolverConfig& config, const std::optional<PanoramaGrid>& grid = std::nullopt);

} // namespace dsreg
