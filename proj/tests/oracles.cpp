#include "oracles.hpp"

#include "dsreg/simulator.hpp"

#include <random>
#include <stdexcept>

namespace dsreg::testing {

MicroProblem make_micro_problem(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> frames_n(2, 3), dim(6, 9);
    std::uniform_real_distribution<double> u(-1.0, 1.0);

    const Volume3 source = downsample(make_phantom({48, 48, 48}, PhantomKind::smooth_blobs, seed));

    MicroProblem mp;
    const int m = frames_n(rng);
    Grid fg;
    fg.dims = {dim(rng), dim(rng), dim(rng)};
    fg.spacing = Vec3::Constant(2.0);
    fg.origin = Vec3::Constant(12.0);
    for (int i = 0; i < m; ++i) {
        const Pose truth = rigid_about(Vec3::Constant(24.0), Vec3(0.1 * u(rng), 0.1 * u(rng), 0.1 * u(rng)),
                                       Vec3(3 * u(rng), 3 * u(rng), 3 * u(rng)));
        mp.frames.push_back(extract_frame(source, truth, fg));
        Vec6 noise;
        for (int k = 0; k < 6; ++k) noise[k] = (k < 3 ? 0.5 : 0.02) * u(rng);
        mp.poses.push_back(apply_increment(truth, noise));
    }
    mp.grid = make_panorama_grid(mp.frames, mp.poses, 1).grid;
    return mp;
}

DenseSystem dense_system(const ObservationTable& obs, const std::vector<int>& block_of_frame,
                         const std::vector<double>& intensities) {
    DenseSystem s;
    int blocks = 0;
    for (int b : block_of_frame) blocks = std::max(blocks, b + 1);
    s.pose_dim = 6 * blocks;
    s.slots = static_cast<int>(obs.active_count());
    const auto rows = static_cast<Eigen::Index>(obs.entries.size());
    s.J = Eigen::MatrixXd::Zero(rows, s.pose_dim + s.slots);
    s.e.resize(rows);
    Eigen::Index r = 0;
    for (std::size_t k = 0; k < obs.active_count(); ++k) {
        for (const auto& o : obs.slot(k)) {
            const int blk = block_of_frame[o.frame];
            if (blk >= 0)
                for (int c = 0; c < 6; ++c) s.J(r, 6 * blk + c) = o.jac[c];
            s.J(r, s.pose_dim + static_cast<Eigen::Index>(k)) = 1.0;
            s.e[r] = intensities[o.voxel] - o.intensity;
            ++r;
        }
    }
    s.H = s.J.transpose() * s.J;
    s.b = -s.J.transpose() * s.e;
    return s;
}

ReducedSystem dense_schur(const DenseSystem& s) {
    const int p = s.pose_dim, q = s.slots;
    const Eigen::MatrixXd Hxx = s.H.topLeftCorner(p, p);
    const Eigen::MatrixXd Hxm = s.H.topRightCorner(p, q);
    const Eigen::MatrixXd Hmm = s.H.bottomRightCorner(q, q);
    // H_MM is diagonal here; invert it as such only after checking.
    const Eigen::MatrixXd off = Hmm - Eigen::MatrixXd(Hmm.diagonal().asDiagonal());
    if (off.cwiseAbs().maxCoeff() != 0.0) throw std::logic_error("H_MM is not diagonal");
    const Eigen::MatrixXd Hmm_inv = Hmm.diagonal().cwiseInverse().asDiagonal();
    ReducedSystem out;
    out.matrix = Hxx - Hxm * Hmm_inv * Hxm.transpose();
    out.rhs = s.b.head(p) - Hxm * Hmm_inv * s.b.tail(q);
    return out;
}

Eigen::VectorXd dense_solve(const DenseSystem& s) { return s.H.ldlt().solve(s.b); }

double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double scale = std::max(a.norm(), b.norm());
    return scale == 0.0 ? 0.0 : (a - b).norm() / scale;
}

} // namespace dsreg::testing
