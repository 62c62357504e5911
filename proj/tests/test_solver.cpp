#include "dsreg/error.hpp"
#include "dsreg/evaluation.hpp"
#include "dsreg/simulator.hpp"
#include "dsreg/solver.hpp"

#include "helpers.hpp"
#include "oracles.hpp"

#include <doctest.h>

using namespace dsreg;
using namespace dsreg::testing;

namespace {

std::vector<int> anchor_first(std::size_t m) {
    std::vector<bool> a(m, false);
    a[0] = true;
    return block_layout(a);
}

// Noise-free frames of a smooth phantom at the given truth poses.
std::vector<Volume3> frames_at(const Volume3& source, const std::vector<Pose>& truth, int dim) {
    const Grid lattice = frame_grid(source, {dim, dim, dim});
    std::vector<Volume3> out;
    for (const auto& T : truth) out.push_back(extract_frame(source, T, lattice));
    return out;
}

} // namespace

TEST_CASE("streamed Schur reduction equals dense block elimination") {
    for (std::uint64_t seed = 100; seed < 106; ++seed) {
        const MicroProblem mp = make_micro_problem(seed);
        const ObservationTable obs = build_observations(mp.frames, mp.poses, mp.grid);
        const auto blocks = anchor_first(mp.frames.size());
        const std::vector<double> M = fused_mean(obs);
        const BlockSystem bs = assemble(obs, blocks, M);
        const ReducedSystem red = schur_reduce(bs);
        const DenseSystem d = dense_system(obs, blocks, M);
        const ReducedSystem oracle = dense_schur(d);
        CHECK(max_abs(red.matrix - oracle.matrix) < 1e-9 * max_abs(oracle.matrix));
        CHECK(relative_error(red.rhs, oracle.rhs) < 1e-9);
        CHECK(max_abs(red.matrix - red.matrix.transpose()) == 0.0);

        const Eigen::VectorXd dx = solve_reduced(red, 0.0);
        const Eigen::VectorXd full = dense_solve(d);
        CHECK(relative_error(dx, full.head(d.pose_dim)) < 1e-8);
        const Eigen::VectorXd dm = intensity_update(bs, dx);
        CHECK(relative_error(dm, full.tail(d.slots)) < 1e-8);
    }
}

TEST_CASE("reduced right-hand side vanishes when no voxel is shared") {
    const Grid g = make_grid(6, 6, 6);
    const std::vector<Volume3> frames{random_volume(g, 1), random_volume(g, 2)};
    Vec6 far = Vec6::Zero();
    far[0] = -20.0;
    const std::vector<Pose> poses{Pose(), Pose(far)};
    const PanoramaGrid pg = make_panorama_grid(frames, poses, 0);
    const ObservationTable obs = build_observations(frames, poses, pg.grid);
    const BlockSystem bs = assemble(obs, anchor_first(2));
    const ReducedSystem red = schur_reduce(bs);
    CHECK(red.rhs.norm() == 0.0);
    CHECK_THROWS_AS(solve_reduced(red, 1e-6), Error);

    SolverConfig cfg;
    cfg.pyramid_levels = 1;
    try {
        solve_dsr(frames, poses, cfg, pg);
        FAIL("expected no_overlap");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::no_overlap);
    }
}

TEST_CASE("gauge is underdetermined without an anchor that pins it") {
    ReducedSystem red;
    red.matrix = Eigen::MatrixXd::Zero(12, 12);
    red.matrix.topLeftCorner(6, 6) = Eigen::MatrixXd::Identity(6, 6);
    red.rhs = Eigen::VectorXd::Zero(12);
    try {
        solve_reduced(red, 1e-6);
        FAIL("expected gauge_underdetermined");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::gauge_underdetermined);
    }
}

TEST_CASE("projection identity holds and a corrupted grouping breaks it") {
    const MicroProblem mp = make_micro_problem(21);
    const ObservationTable obs = build_observations(mp.frames, mp.poses, mp.grid);
    const std::vector<double> M = fused_mean(obs);
    CHECK(projection_identity_residual(obs, M) <= 1e-8);
    std::vector<std::uint32_t> grouping(obs.entries.size());
    for (std::size_t e = 0; e < grouping.size(); ++e) grouping[e] = obs.entries[e].voxel / 7;
    CHECK(projection_identity_residual(obs, M, grouping) > 1e-3);
}

TEST_CASE("identical frames at the identity stay put") {
    const Volume3 source = make_phantom({48, 48, 48}, PhantomKind::smooth_blobs, 2);
    const std::vector<Pose> id{Pose(), Pose()};
    const auto frames = frames_at(source, id, 32);
    SolverConfig cfg;
    const SolveReport r = solve_dsr(frames, id, cfg);
    CHECK(r.termination == Termination::converged);
    CHECK(r.final_objective < 1e-12);
    CHECK(r.poses[1].xi().norm() < 1e-9);
    int level0 = 0;
    for (const auto& it : r.iterations) level0 += it.level == 0 && it.iteration > 0;
    CHECK(level0 <= 2);
}

TEST_CASE("an integer voxel offset is recovered") {
    const Volume3 source = make_phantom({48, 48, 48}, PhantomKind::smooth_blobs, 4);
    Vec6 shift = Vec6::Zero();
    shift[0] = 2.0;
    shift[2] = -1.0;
    const std::vector<Pose> truth{Pose(), Pose(shift)};
    const auto frames = frames_at(source, truth, 32);
    const std::vector<Pose> init{Pose(), Pose()};
    SolverConfig cfg;
    const SolveReport r = solve_dsr(frames, init, cfg);
    const Vec3 rel = (r.poses[1] * r.poses[0].inverse()).translation();
    CHECK((rel - Vec3(2.0, 0.0, -1.0)).norm() < 0.1);
}

TEST_CASE("three perturbed frames reach sub-voxel accuracy") {
    SimProtocol p;
    p.n_frames = 3;
    p.rot_range_deg = 5.0;
    p.trans_range_vox = 5.0;
    p.noise_std = 0.0;
    p.frame_dims = {32, 32, 32};
    p.init_rot_deg = 3.0;
    p.init_trans_vox = 3.0;
    p.seed = 8;
    const Volume3 source = make_phantom({48, 48, 48}, PhantomKind::smooth_blobs, 8);
    const GroundTruthSequence seq = simulate_sequence(source, p);
    const SolveReport r = solve_dsr(seq.frames, seq.initial, SolverConfig{});
    const PoseErrorSummary err = pose_errors(r.poses, seq.truth, r.grid.grid.spacing);
    CHECK(err.mae_translation < 0.5);
    CHECK(err.mae_rotation < 1e-2);
}

TEST_CASE("DSR and DBA take the same steps") {
    SimProtocol p;
    p.n_frames = 3;
    p.rot_range_deg = 4.0;
    p.trans_range_vox = 4.0;
    p.frame_dims = {24, 24, 24};
    p.seed = 5;
    const Volume3 source = make_phantom({40, 40, 40}, PhantomKind::smooth_blobs, 5);
    const GroundTruthSequence seq = simulate_sequence(source, p);
    SolverConfig cfg;
    cfg.pyramid_levels = 2;
    for (IntensityPolicy policy : {IntensityPolicy::refuse_each_iteration, IntensityPolicy::evolve}) {
        cfg.intensity_policy = policy;
        const SolveReport a = solve_dsr(seq.frames, seq.initial, cfg);
        const SolveReport b = solve_dba(seq.frames, seq.initial, cfg);
        REQUIRE(a.iterations.size() == b.iterations.size());
        for (std::size_t k = 0; k < a.iterations.size(); ++k) {
            const double fa = a.iterations[k].profiled_objective, fb = b.iterations[k].profiled_objective;
            CHECK(std::abs(fa - fb) <= 1e-8 * std::abs(fa));
            if (policy == IntensityPolicy::refuse_each_iteration)
                CHECK(std::abs(a.iterations[k].objective - b.iterations[k].objective) <= 1e-8 * std::abs(fa));
            CHECK(b.iterations[k].projection_residual <= 1e-8);
        }
        for (std::size_t i = 0; i < a.poses.size(); ++i)
            CHECK((a.poses[i].xi() - b.poses[i].xi()).cwiseAbs().maxCoeff() <= 1e-8);
    }
}

TEST_CASE("accepted objectives never increase") {
    SimProtocol p;
    p.n_frames = 4;
    p.frame_dims = {24, 24, 24};
    p.rot_range_deg = 6.0;
    p.trans_range_vox = 6.0;
    p.seed = 12;
    const Volume3 source = make_phantom({40, 40, 40}, PhantomKind::smooth_blobs, 12);
    const GroundTruthSequence seq = simulate_sequence(source, p);
    SolverConfig cfg;
    cfg.pyramid_levels = 2;
    const SolveReport r = solve_dsr(seq.frames, seq.initial, cfg);
    for (std::size_t k = 1; k < r.iterations.size(); ++k)
        if (r.iterations[k].level == r.iterations[k - 1].level)
            CHECK(r.iterations[k].objective <= r.iterations[k - 1].objective);
}

TEST_CASE("solver configuration validation") {
    SolverConfig c;
    CHECK_NOTHROW(c.validate());
    c.max_iters = 0;
    CHECK_THROWS_AS(c.validate(), Error);
    c = SolverConfig{};
    c.rel_tol = 0.0;
    CHECK_THROWS_AS(c.validate(), Error);
    c = SolverConfig{};
    c.anchored.clear();
    CHECK_THROWS_AS(c.validate(), Error);
    CHECK(parse_mode("dba") == SolverMode::dba);
    CHECK_THROWS_AS(parse_mode("gn"), Error);
}
