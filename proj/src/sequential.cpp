#include "dsreg/sequential.hpp"

#include "dsreg/detail/trilinear.hpp"
#include "dsreg/error.hpp"
#include "dsreg/parallel.hpp"

#include <Eigen/Cholesky>

#include <chrono>
#include <cmath>

namespace dsreg {

SequentialState::SequentialState(const Grid& grid) : panorama(grid), counts(grid) {}

void SequentialState::fuse_in(const Volume3& frame, const Pose& pose) {
    const Grid& g = panorama.grid();
    const auto a = detail::panorama_to_frame(g, frame.grid(), pose);
    const std::uint8_t* mask = frame.has_mask() ? frame.mask().data() : nullptr;
    const auto& d = g.dims;
    const std::size_t rows = static_cast<std::size_t>(d[1]) * static_cast<std::size_t>(d[2]);
    parallel::for_chunks(rows, [&](int, std::size_t r0, std::size_t r1) {
        for (std::size_t r = r0; r < r1; ++r) {
            const int y = static_cast<int>(r % static_cast<std::size_t>(d[1]));
            const int z = static_cast<int>(r / static_cast<std::size_t>(d[1]));
            int lo, hi;
            detail::clip_row(a, frame.grid(), y, z, d[0], lo, hi);
            const Vec3 row0 = a.L.col(1) * y + a.L.col(2) * z + a.c;
            for (int x = lo; x < hi; ++x) {
                const Vec3 p = row0 + a.L.col(0) * x;
                detail::Cell c;
                if (!detail::locate(frame.grid(), p.x(), p.y(), p.z(), c)) continue;
                if (mask && !detail::corners_valid(mask, c)) continue;
                const std::size_t j = g.index(x, y, z);
                const double n = counts[j];
                const double s = detail::blend(frame.data().data(), c);
                panorama[j] = static_cast<float>((panorama[j] * n + s) / (n + 1.0));
                counts[j] = static_cast<float>(n + 1.0);
            }
        }
    });
    registered.push_back(pose);
}

Volume3 SequentialState::covered_target() const {
    Volume3 t = panorama;
    std::vector<std::uint8_t> mask(t.size());
    for (std::size_t j = 0; j < mask.size(); ++j) mask[j] = counts[j] >= 1.0f ? 1 : 0;
    t.set_mask(std::move(mask));
    return t;
}

namespace {

using Clock = std::chrono::steady_clock;

struct PairSystem {
    Eigen::Matrix<double, 6, 6> H = Eigen::Matrix<double, 6, 6>::Zero();
    Vec6 b = Vec6::Zero();
    double f = 0.0;
};

PairSystem accumulate(const ObservationTable& obs, const Volume3& target, bool with_system) {
    const int chunks = parallel::chunk_count(obs.entries.size());
    std::vector<PairSystem> parts(static_cast<std::size_t>(chunks));
    parallel::for_chunks(obs.entries.size(), [&](int w, std::size_t e0, std::size_t e1) {
        PairSystem& s = parts[static_cast<std::size_t>(w)];
        for (std::size_t e = e0; e < e1; ++e) {
            const Observation& o = obs.entries[e];
            const double r = double(target[o.voxel]) - o.intensity;
            s.f += r * r;
            if (!with_system) continue;
            s.H.noalias() += o.jac.transpose() * o.jac;
            s.b.noalias() -= o.jac.transpose() * r;
        }
    });
    PairSystem total;
    for (const auto& p : parts) {
        total.H += p.H;
        total.b += p.b;
        total.f += p.f;
    }
    return total;
}

} // namespace

PairwiseResult register_pairwise(const Volume3& target, const Volume3& frame, const Pose& init,
                                 const SolverConfig& config) {
    config.validate();
    const auto target_pyr = build_pyramid(target, config.pyramid_levels);
    const auto frame_pyr = build_pyramid(frame, config.pyramid_levels);

    PairwiseResult result;
    result.pose = init;
    for (int level = config.pyramid_levels - 1; level >= 0; --level) {
        const auto level_start = Clock::now();
        const Volume3& tgt = target_pyr[static_cast<std::size_t>(level)];
        const Volume3& frm = frame_pyr[static_cast<std::size_t>(level)];
        std::vector<GradientField> gradients;
        ObservationOptions options;
        options.gradient = config.gradient;
        if (config.gradient == GradientSource::precomputed) {
            gradients.push_back(gradient_field(frm));
            options.gradient_fields = gradients;
        }
        if (tgt.has_mask()) options.voxel_mask = tgt.mask();

        auto observe = [&](const Pose& p) {
            return build_observations(std::span<const Volume3>(&frm, 1), std::span<const Pose>(&p, 1),
                                      tgt.grid(), options);
        };
        ObservationTable obs = observe(result.pose);
        PairSystem sys = accumulate(obs, tgt, true);
        double f = sys.f;

        auto record = [&](int iteration, double step, double scale) {
            IterationRecord r;
            r.level = level;
            r.iteration = iteration;
            r.objective = f;
            r.profiled_objective = f;
            r.step_norm = step;
            r.step_scale = scale;
            r.observations = obs.entries.size();
            r.active_voxels = obs.active_count();
            r.seconds = std::chrono::duration<double>(Clock::now() - level_start).count();
            r.poses = {result.pose.xi()};
            result.iterations.push_back(std::move(r));
        };
        record(0, 0.0, 0.0);

        Termination level_end = Termination::max_iterations;
        for (int it = 1; it <= config.max_iters; ++it) {
            if (f <= 0.0) {
                level_end = Termination::converged;
                break;
            }
            const double trace = sys.H.trace();
            if (!(trace > 0.0))
                throw Error(ErrorKind::gauge_underdetermined, "pairwise Hessian carries no information");
            Eigen::Matrix<double, 6, 6> A = sys.H;
            A.diagonal().array() += config.damping * trace / 6.0;
            Eigen::LDLT<Eigen::Matrix<double, 6, 6>> ldlt(A);
            if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
                throw Error(ErrorKind::gauge_underdetermined, "pairwise Hessian is singular after damping");
            const Vec6 dx = ldlt.solve(sys.b);
            const double step = dx.norm();
            if (step < config.step_tol) {
                level_end = Termination::converged;
                break;
            }

            double scale = 1.0;
            bool accepted = false;
            Pose cand;
            ObservationTable cand_obs;
            PairSystem cand_sys;
            for (int h = 0; h <= config.max_halvings; ++h) {
                cand = apply_increment(result.pose, scale * dx);
                bool observed = true;
                try {
                    cand_obs = observe(cand);
                } catch (const Error& e) {
                    if (e.kind() != ErrorKind::no_overlap) throw;
                    observed = false;
                }
                if (observed) {
                    cand_sys = accumulate(cand_obs, tgt, false);
                    if (!config.backtracking || cand_sys.f < f) {
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
            result.pose = cand;
            obs = std::move(cand_obs);
            sys = accumulate(obs, tgt, true);
            const double f_prev = f;
            f = sys.f;
            record(it, scale * step, scale);
            if ((f_prev - f) / f_prev < config.rel_tol || scale * step < config.step_tol) {
                level_end = Termination::converged;
                break;
            }
        }
        if (level == 0) {
            result.termination = level_end;
            result.objective = f;
        }
    }
    return result;
}

SolveReport run_sequential(std::span<const Volume3> frames, std::span<const Pose> initial,
                           const SolverConfig& config, const std::optional<PanoramaGrid>& grid_opt) {
    config.validate();
    const std::size_t m = frames.size();
    if (m < 2) throw Error(ErrorKind::invalid_input, "sequential registration needs at least two frames");
    if (initial.size() != m) throw Error(ErrorKind::invalid_input, "need one initial pose per frame");

    SolveReport report;
    report.mode = SolverMode::sequential;
    report.grid = grid_opt ? *grid_opt : make_panorama_grid(frames, initial, config.margin_voxels);

    SequentialState state(report.grid.grid);
    state.fuse_in(frames[0], initial[0]);
    report.termination = Termination::converged;
    for (std::size_t i = 1; i < m; ++i) {
        Pose init = initial[i];
        if (config.sequential_init == SequentialInit::chained)
            init = initial[i] * initial[i - 1].inverse() * state.registered[i - 1];
        PairwiseResult pr = register_pairwise(state.covered_target(), frames[i], init, config);
        for (auto& r : pr.iterations) {
            r.frame = static_cast<int>(i);
            report.iterations.push_back(std::move(r));
        }
        if (pr.termination == Termination::max_iterations) report.termination = Termination::max_iterations;
        state.fuse_in(frames[i], pr.pose);
    }

    report.poses = state.registered;
    report.final_objective = profiled_objective(build_observations(frames, report.poses, report.grid.grid));
    report.fused = FusedVolume{state.panorama, state.counts};
    return report;
}

} // namespace dsreg
