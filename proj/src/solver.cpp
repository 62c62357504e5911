#include "dsreg/solver.hpp"

#include "dsreg/error.hpp"
#include "dsreg/parallel.hpp"
#include "dsreg/sequential.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_map>

namespace dsreg {

void SolverConfig::validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorKind::invalid_config, what); };
    if (max_iters < 1) fail("max_iters must be at least 1");
    if (pyramid_levels < 1) fail("pyramid_levels must be at least 1");
    if (!(rel_tol > 0.0)) fail("rel_tol must be positive");
    if (!(step_tol > 0.0)) fail("step_tol must be positive");
    if (!(damping >= 0.0)) fail("damping must be non-negative");
    if (max_halvings < 0) fail("max_halvings must be non-negative");
    if (margin_voxels < 0) fail("margin_voxels must be non-negative");
    if (anchored.empty()) fail("at least one frame must be anchored");
    for (int a : anchored)
        if (a < 0) fail("anchored frame indices must be non-negative");
}

std::string to_string(SolverMode mode) {
    switch (mode) {
    case SolverMode::dsr: return "dsr";
    case SolverMode::dba: return "dba";
    case SolverMode::sequential: return "sequential";
    }
    return "?";
}

SolverMode parse_mode(const std::string& s) {
    if (s == "dsr") return SolverMode::dsr;
    if (s == "dba") return SolverMode::dba;
    if (s == "sequential") return SolverMode::sequential;
    throw Error(ErrorKind::invalid_config, "unknown mode '" + s + "' (expected dsr, dba or sequential)");
}

std::string to_string(Termination t) {
    switch (t) {
    case Termination::converged: return "converged";
    case Termination::stalled: return "stalled";
    case Termination::max_iterations: return "max_iterations";
    }
    return "?";
}

ReducedSystem schur_reduce(const BlockSystem& bs) {
    const ObservationTable& obs = *bs.table;
    const int dim = bs.dim();
    const std::size_t slots = obs.active_count();
    const int chunks = parallel::chunk_count(slots);
    std::vector<Eigen::MatrixXd> partial_S(static_cast<std::size_t>(chunks), Eigen::MatrixXd::Zero(dim, dim));
    std::vector<Eigen::VectorXd> partial_r(static_cast<std::size_t>(chunks), Eigen::VectorXd::Zero(dim));

    parallel::for_chunks(slots, [&](int w, std::size_t k0, std::size_t k1) {
        Eigen::MatrixXd& S = partial_S[static_cast<std::size_t>(w)];
        Eigen::VectorXd& r = partial_r[static_cast<std::size_t>(w)];
        for (std::size_t k = k0; k < k1; ++k) {
            const double n = bs.H_MM_diag[static_cast<Eigen::Index>(k)];
            if (bs.singletons_skipped && n == 1.0) continue;
            if (!(n >= 1.0)) throw Error(ErrorKind::invalid_input, "active voxel with zero observations");
            const double inv_n = 1.0 / n;
            const double bm = bs.b_M[static_cast<Eigen::Index>(k)] * inv_n;
            const std::size_t c0 = bs.coupling_offsets[k], c1 = bs.coupling_offsets[k + 1];
            for (std::size_t a = c0; a < c1; ++a) {
                const Coupling& ca = bs.coupling[a];
                for (int u = 0; u < 6; ++u) r[6 * ca.block + u] -= ca.row[u] * bm;
                for (std::size_t b = c0; b < c1; ++b) {
                    const Coupling& cb = bs.coupling[b];
                    for (int u = 0; u < 6; ++u)
                        for (int v = 0; v < 6; ++v)
                            S(6 * ca.block + u, 6 * cb.block + v) -= (ca.row[u] * cb.row[v]) * inv_n;
                }
            }
        }
    });

    ReducedSystem out{bs.H_xx, bs.b_x};
    for (int w = 0; w < chunks; ++w) {
        out.matrix += partial_S[static_cast<std::size_t>(w)];
        out.rhs += partial_r[static_cast<std::size_t>(w)];
    }
    return out;
}

Eigen::VectorXd intensity_update(const BlockSystem& bs, const Eigen::VectorXd& dx) {
    const std::size_t slots = bs.table->active_count();
    Eigen::VectorXd dm(static_cast<Eigen::Index>(slots));
    parallel::for_chunks(slots, [&](int, std::size_t k0, std::size_t k1) {
        for (std::size_t k = k0; k < k1; ++k) {
            double coupled = 0.0;
            for (std::size_t c = bs.coupling_offsets[k]; c < bs.coupling_offsets[k + 1]; ++c) {
                const Coupling& cp = bs.coupling[c];
                coupled += cp.row.dot(dx.segment<6>(6 * cp.block));
            }
            const auto i = static_cast<Eigen::Index>(k);
            dm[i] = (bs.b_M[i] - coupled) / bs.H_MM_diag[i];
        }
    });
    return dm;
}

Eigen::VectorXd solve_reduced(const ReducedSystem& red, double damping) {
    const Eigen::Index dim = red.matrix.rows();
    const double trace = red.matrix.trace();
    if (!(trace > 0.0) || !std::isfinite(trace))
        throw Error(ErrorKind::gauge_underdetermined, "reduced pose Hessian carries no information");
    const Eigen::Index blocks = dim / 6;
    double max_block = 0.0;
    for (Eigen::Index b = 0; b < blocks; ++b)
        max_block = std::max(max_block, red.matrix.block<6, 6>(6 * b, 6 * b).trace());
    for (Eigen::Index b = 0; b < blocks; ++b) {
        if (red.matrix.block<6, 6>(6 * b, 6 * b).trace() <= 1e-12 * max_block) {
            std::ostringstream os;
            os << "free pose block " << b << " is unconstrained (its frame overlaps no other frame)";
            throw Error(ErrorKind::gauge_underdetermined, os.str());
        }
    }
    Eigen::MatrixXd A = red.matrix;
    A.diagonal().array() += damping * trace / static_cast<double>(dim);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
        throw Error(ErrorKind::gauge_underdetermined, "reduced pose Hessian is singular after damping");
    Eigen::VectorXd dx = ldlt.solve(red.rhs);
    if (!dx.allFinite()) throw Error(ErrorKind::gauge_underdetermined, "reduced pose solve produced non-finite values");
    return dx;
}

double projection_identity_residual(const ObservationTable& obs, std::span<const double> intensities,
                                    std::span<const std::uint32_t> grouping) {
    if (intensities.size() != obs.grid.size())
        throw Error(ErrorKind::invalid_input, "intensity vector does not match the panorama grid");
    if (!grouping.empty() && grouping.size() != obs.entries.size())
        throw Error(ErrorKind::invalid_input, "grouping needs one id per observation");

    const std::size_t nobs = obs.entries.size();
    std::vector<double> projected(nobs);
    if (grouping.empty()) {
        for (std::size_t k = 0; k < obs.active_count(); ++k) {
            double s = 0.0;
            const double m = intensities[obs.active[k]];
            const std::size_t n = obs.offsets[k + 1] - obs.offsets[k];
            for (std::size_t t = 0; t < n; ++t) s += m;
            const double mean = s / static_cast<double>(n);
            for (std::size_t e = obs.offsets[k]; e < obs.offsets[k + 1]; ++e) projected[e] = mean;
        }
    } else {
        std::unordered_map<std::uint32_t, std::pair<double, std::size_t>> groups;
        for (std::size_t e = 0; e < nobs; ++e) {
            auto& g = groups[grouping[e]];
            g.first += intensities[obs.entries[e].voxel];
            ++g.second;
        }
        for (std::size_t e = 0; e < nobs; ++e) {
            const auto& g = groups[grouping[e]];
            projected[e] = g.first / static_cast<double>(g.second);
        }
    }

    Eigen::VectorXd deviation = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(6 * obs.frame_count));
    Eigen::VectorXd reference = deviation;
    for (std::size_t e = 0; e < nobs; ++e) {
        const Observation& o = obs.entries[e];
        const double a = intensities[o.voxel];
        deviation.segment<6>(6 * o.frame) += o.jac.transpose() * (a - projected[e]);
        reference.segment<6>(6 * o.frame) += o.jac.transpose() * a;
    }
    const double num = deviation.lpNorm<Eigen::Infinity>();
    const double den = reference.lpNorm<Eigen::Infinity>();
    if (den == 0.0) return num;
    return num / den;
}

namespace {

using Clock = std::chrono::steady_clock;

std::vector<bool> anchored_flags(const SolverConfig& config, std::size_t m) {
    std::vector<bool> anchored(m, false);
    for (int a : config.anchored) {
        if (static_cast<std::size_t>(a) >= m) {
            std::ostringstream os;
            os << "anchored frame " << a << " does not exist (" << m << " frames)";
            throw Error(ErrorKind::invalid_config, os.str());
        }
        anchored[static_cast<std::size_t>(a)] = true;
    }
    if (std::all_of(anchored.begin(), anchored.end(), [](bool b) { return b; }))
        throw Error(ErrorKind::invalid_config, "every frame is anchored; nothing to solve");
    return anchored;
}

bool any_shared_voxel(const ObservationTable& obs) {
    for (std::size_t k = 0; k < obs.active_count(); ++k)
        if (obs.offsets[k + 1] - obs.offsets[k] >= 2) return true;
    return false;
}

std::vector<Vec6> pose_params(std::span<const Pose> poses) {
    std::vector<Vec6> out;
    out.reserve(poses.size());
    for (const auto& p : poses) out.push_back(p.xi());
    return out;
}

// Fills intensities of newly observed voxels (NaN marks "never set") with their mean.
void fill_missing(std::vector<double>& M, const ObservationTable& obs) {
    for (std::size_t k = 0; k < obs.active_count(); ++k) {
        const std::uint32_t j = obs.active[k];
        if (!std::isnan(M[j])) continue;
        double s = 0.0;
        for (const auto& o : obs.slot(k)) s += o.intensity;
        M[j] = s / static_cast<double>(obs.offsets[k + 1] - obs.offsets[k]);
    }
}

SolveReport joint_solve(std::span<const Volume3> frames, std::span<const Pose> initial,
                        const SolverConfig& config, const std::optional<PanoramaGrid>& grid_opt,
                        bool joint_intensities) {
    config.validate();
    const std::size_t m = frames.size();
    if (m < 2) throw Error(ErrorKind::invalid_input, "simultaneous registration needs at least two frames");
    if (initial.size() != m) throw Error(ErrorKind::invalid_input, "need one initial pose per frame");

    const auto anchored = anchored_flags(config, m);
    const auto blocks = block_layout(anchored);

    SolveReport report;
    report.mode = joint_intensities ? SolverMode::dba : SolverMode::dsr;
    report.grid = grid_opt ? *grid_opt : make_panorama_grid(frames, initial, config.margin_voxels);

    std::vector<std::vector<Volume3>> pyramids;
    pyramids.reserve(m);
    for (const auto& f : frames) pyramids.push_back(build_pyramid(f, config.pyramid_levels));

    std::vector<Pose> poses(initial.begin(), initial.end());
    double f = 0.0;
    const bool evolve = config.intensity_policy == IntensityPolicy::evolve;

    for (int level = config.pyramid_levels - 1; level >= 0; --level) {
        const auto level_start = Clock::now();
        const Grid grid = coarsen_grid(report.grid.grid, level);
        std::vector<Volume3> level_frames;
        level_frames.reserve(m);
        for (const auto& p : pyramids) level_frames.push_back(p[static_cast<std::size_t>(level)]);
        std::vector<GradientField> gradients;
        ObservationOptions options;
        options.gradient = config.gradient;
        if (config.gradient == GradientSource::precomputed) {
            for (const auto& lf : level_frames) gradients.push_back(gradient_field(lf));
            options.gradient_fields = gradients;
        }
        auto observe = [&](std::span<const Pose> ps) {
            return build_observations(level_frames, ps, grid, options);
        };

        ObservationTable obs = observe(poses);
        std::vector<double> M;
        if (joint_intensities) {
            M = fused_mean(obs);
            for (std::size_t j = 0; j < M.size(); ++j)
                if (obs.counts[j] == 0) M[j] = std::numeric_limits<double>::quiet_NaN();
        }
        f = profiled_objective(obs);

        auto record = [&](int iteration, double step_norm, double scale) {
            IterationRecord r;
            r.level = level;
            r.iteration = iteration;
            r.profiled_objective = f;
            if (joint_intensities) {
                std::vector<double> shown = evolve ? M : fused_mean(obs);
                if (evolve) fill_missing(shown, obs);
                r.objective = objective(obs, shown);
                r.projection_residual = projection_identity_residual(obs, shown);
            } else {
                r.objective = f;
                r.projection_residual = projection_identity_residual(obs, fused_mean(obs));
            }
            r.step_norm = step_norm;
            r.step_scale = scale;
            r.observations = obs.entries.size();
            r.active_voxels = obs.active_count();
            r.seconds = std::chrono::duration<double>(Clock::now() - level_start).count();
            r.poses = pose_params(poses);
            report.iterations.push_back(std::move(r));
        };
        record(0, 0.0, 0.0);

        Termination level_end = Termination::max_iterations;
        for (int it = 1; it <= config.max_iters; ++it) {
            if (!any_shared_voxel(obs))
                throw Error(ErrorKind::no_overlap, "no panorama voxel is observed by two frames");
            if (f <= 0.0) {
                level_end = Termination::converged;
                break;
            }

            BlockSystem bs;
            if (joint_intensities) {
                if (evolve)
                    fill_missing(M, obs);
                else
                    M = fused_mean(obs);
                bs = assemble(obs, blocks, M, config.skip_singletons);
            } else {
                bs = assemble(obs, blocks, {}, config.skip_singletons);
            }
            const ReducedSystem red = schur_reduce(bs);
            const Eigen::VectorXd dx = solve_reduced(red, config.damping);
            Eigen::VectorXd dm;
            if (joint_intensities) dm = intensity_update(bs, dx);

            double step_norm = 0.0;
            for (std::size_t i = 0; i < m; ++i)
                if (blocks[i] >= 0) step_norm = std::max(step_norm, dx.segment<6>(6 * blocks[i]).norm());
            if (step_norm < config.step_tol) {
                level_end = Termination::converged;
                break;
            }

            double scale = 1.0;
            bool accepted = false;
            std::vector<Pose> candidate(m);
            ObservationTable cand_obs;
            double f_cand = 0.0;
            for (int h = 0; h <= config.max_halvings; ++h) {
                for (std::size_t i = 0; i < m; ++i)
                    candidate[i] = blocks[i] < 0 ? poses[i]
                                                 : apply_increment(poses[i], scale * dx.segment<6>(6 * blocks[i]));
                bool observed = true;
                try {
                    cand_obs = observe(candidate);
                } catch (const Error& e) {
                    if (e.kind() != ErrorKind::no_overlap) throw;
                    observed = false;
                }
                if (observed) {
                    f_cand = profiled_objective(cand_obs);
                    if (!config.backtracking || f_cand < f) {
                        accepted = true;
                        break;
                    }
                }
                if (!config.backtracking) break;
                scale *= 0.5;
            }
            if (!accepted) {
                level_end = Termination::stalled;
                break;
            }

            if (joint_intensities && evolve) {
                // Entries of voxels that left the observed set keep their value
                // and are ignored until observed again.
                for (std::size_t k = 0; k < obs.active_count(); ++k)
                    M[obs.active[k]] += scale * dm[static_cast<Eigen::Index>(k)];
            }
            poses = std::move(candidate);
            candidate.assign(m, Pose{});
            obs = std::move(cand_obs);
            const double f_prev = f;
            f = f_cand;
            record(it, scale * step_norm, scale);

            if ((f_prev - f) / f_prev < config.rel_tol || scale * step_norm < config.step_tol) {
                level_end = Termination::converged;
                break;
            }
        }
        if (level == 0) report.termination = level_end;
    }

    report.poses = poses;
    report.final_objective = f;
    report.fused = fuse(frames, poses, report.grid.grid);
    return report;
}

} // namespace

SolveReport solve_dsr(std::span<const Volume3> frames, std::span<const Pose> initial_poses,
                      const SolverConfig& config, const std::optional<PanoramaGrid>& grid) {
    return joint_solve(frames, initial_poses, config, grid, false);
}

SolveReport solve_dba(std::span<const Volume3> frames, std::span<const Pose> initial_poses,
                      const SolverConfig& config, const std::optional<PanoramaGrid>& grid) {
    return joint_solve(frames, initial_poses, config, grid, true);
}

SolveReport solve(std::span<const Volume3> frames, std::span<const Pose> initial_poses,
                  const SolverConfig& config, const std::optional<PanoramaGrid>& grid) {
    switch (config.mode) {
    case SolverMode::dsr: return solve_dsr(frames, initial_poses, config, grid);
    case SolverMode::dba: return solve_dba(frames, initial_poses, config, grid);
    case SolverMode::sequential: return run_sequential(frames, initial_poses, config, grid);
    }
    throw Error(ErrorKind::invalid_config, "unknown solver mode");
}

} // namespace dsreg
