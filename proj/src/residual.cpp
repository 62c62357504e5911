#include "dsreg/residual.hpp"

#include "dsreg/detail/trilinear.hpp"
#include "dsreg/error.hpp"
#include "dsreg/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dsreg {

bool visibility(const Volume3& frame, const Vec3& p) {
    detail::Cell c;
    if (!detail::locate(frame.grid(), p.x(), p.y(), p.z(), c)) return false;
    return !frame.has_mask() || detail::corners_valid(frame.mask().data(), c);
}

namespace {

struct FrameContext {
    const Volume3* frame;
    const GradientField* gradients;
    detail::VoxelAffine map;
    const std::uint8_t* mask;
    Vec3 inv_spacing;
};

struct ChunkResult {
    std::vector<Observation> entries;
    std::vector<std::uint32_t> active;
    std::vector<std::uint32_t> active_counts;
};

} // namespace

ObservationTable build_observations(std::span<const Volume3> frames, std::span<const Pose> poses,
                                    const Grid& grid, const ObservationOptions& options) {
    if (frames.size() != poses.size()) throw Error(ErrorKind::invalid_input, "need one pose per frame");
    if (frames.empty()) throw Error(ErrorKind::invalid_input, "no frames to observe");
    const bool precomputed = options.gradient == GradientSource::precomputed;
    if (precomputed && options.gradient_fields.size() != frames.size())
        throw Error(ErrorKind::invalid_input, "precomputed gradients require one field per frame");
    if (!options.voxel_mask.empty() && options.voxel_mask.size() != grid.size())
        throw Error(ErrorKind::invalid_input, "voxel mask does not match the panorama grid");

    std::vector<FrameContext> ctx;
    ctx.reserve(frames.size());
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const Volume3& f = frames[i];
        ctx.push_back({&f, precomputed ? &options.gradient_fields[i] : nullptr,
                       detail::panorama_to_frame(grid, f.grid(), poses[i]),
                       f.has_mask() ? f.mask().data() : nullptr, f.grid().spacing.cwiseInverse()});
    }

    const auto& d = grid.dims;
    const std::size_t rows = static_cast<std::size_t>(d[1]) * static_cast<std::size_t>(d[2]);
    const int chunks = parallel::chunk_count(rows);
    std::vector<ChunkResult> parts(static_cast<std::size_t>(chunks));

    parallel::for_chunks(rows, [&](int w, std::size_t r0, std::size_t r1) {
        ChunkResult& out = parts[static_cast<std::size_t>(w)];
        const std::size_t nf = ctx.size();
        std::vector<int> lo(nf), hi(nf);
        std::vector<Vec3> row0(nf);
        for (std::size_t r = r0; r < r1; ++r) {
            const int y = static_cast<int>(r % static_cast<std::size_t>(d[1]));
            const int z = static_cast<int>(r / static_cast<std::size_t>(d[1]));
            int xmin = d[0], xmax = 0;
            for (std::size_t i = 0; i < nf; ++i) {
                const auto& a = ctx[i].map;
                detail::clip_row(a, ctx[i].frame->grid(), y, z, d[0], lo[i], hi[i]);
                row0[i] = a.L.col(1) * y + a.L.col(2) * z + a.c;
                if (lo[i] < hi[i]) {
                    xmin = std::min(xmin, lo[i]);
                    xmax = std::max(xmax, hi[i]);
                }
            }
            const std::size_t row_base = grid.index(0, y, z);
            for (int x = xmin; x < xmax; ++x) {
                const std::size_t j = row_base + static_cast<std::size_t>(x);
                if (!options.voxel_mask.empty() && options.voxel_mask[j] == 0) continue;
                std::uint32_t n = 0;
                for (std::size_t i = 0; i < nf; ++i) {
                    if (x < lo[i] || x >= hi[i]) continue;
                    const FrameContext& fc = ctx[i];
                    const Vec3 p = row0[i] + fc.map.L.col(0) * x;
                    detail::Cell c;
                    if (!detail::locate(fc.frame->grid(), p.x(), p.y(), p.z(), c)) continue;
                    if (fc.mask && !detail::corners_valid(fc.mask, c)) continue;

                    double g[3];
                    double value;
                    if (precomputed) {
                        value = detail::blend(fc.frame->data().data(), c);
                        g[0] = detail::blend(fc.gradients->gx.data(), c);
                        g[1] = detail::blend(fc.gradients->gy.data(), c);
                        g[2] = detail::blend(fc.gradients->gz.data(), c);
                    } else {
                        value = detail::blend_with_gradient(fc.frame->data().data(), c, g);
                    }

                    // Gradient per millimetre, and the point in frame-local millimetres.
                    const Vec3 h(g[0] * fc.inv_spacing.x(), g[1] * fc.inv_spacing.y(),
                                 g[2] * fc.inv_spacing.z());
                    const Vec3 q = fc.frame->grid().to_world(p);
                    const Vec3 hxq = h.cross(q);

                    Observation o;
                    o.voxel = static_cast<std::uint32_t>(j);
                    o.frame = static_cast<std::uint32_t>(i);
                    o.point = p.cast<float>();
                    o.gradient = Eigen::Vector3f(static_cast<float>(g[0]), static_cast<float>(g[1]),
                                                 static_cast<float>(g[2]));
                    o.intensity = value;
                    o.jac << -h.x(), -h.y(), -h.z(), hxq.x(), hxq.y(), hxq.z();
                    out.entries.push_back(o);
                    ++n;
                }
                if (n > 0) {
                    out.active.push_back(static_cast<std::uint32_t>(j));
                    out.active_counts.push_back(n);
                }
            }
        }
    });

    ObservationTable table;
    table.grid = grid;
    table.frame_count = frames.size();
    table.counts.assign(grid.size(), 0);
    std::size_t total = 0, total_active = 0;
    for (const auto& p : parts) {
        total += p.entries.size();
        total_active += p.active.size();
    }
    if (total == 0) throw Error(ErrorKind::no_overlap, "no panorama voxel is observed by any frame");
    table.entries.reserve(total);
    table.active.reserve(total_active);
    table.offsets.reserve(total_active + 1);
    table.offsets.push_back(0);
    for (auto& p : parts) {
        table.entries.insert(table.entries.end(), p.entries.begin(), p.entries.end());
        for (std::size_t k = 0; k < p.active.size(); ++k) {
            table.active.push_back(p.active[k]);
            table.counts[p.active[k]] = p.active_counts[k];
            table.offsets.push_back(table.offsets.back() + p.active_counts[k]);
        }
        p = ChunkResult{};
    }
    return table;
}

std::vector<int> block_layout(const std::vector<bool>& anchored) {
    std::vector<int> blocks(anchored.size(), -1);
    int next = 0;
    for (std::size_t i = 0; i < anchored.size(); ++i)
        if (!anchored[i]) blocks[i] = next++;
    return blocks;
}

BlockSystem assemble(const ObservationTable& obs, std::span<const int> block_of_frame,
                     std::span<const double> intensities, bool skip_singletons) {
    if (obs.entries.empty()) throw Error(ErrorKind::no_overlap, "empty observation table");
    if (block_of_frame.size() != obs.frame_count)
        throw Error(ErrorKind::invalid_input, "block layout does not match the frame count");
    const bool with_m = !intensities.empty();
    if (with_m && intensities.size() != obs.grid.size())
        throw Error(ErrorKind::invalid_input, "intensity vector does not match the panorama grid");

    BlockSystem bs;
    bs.table = &obs;
    bs.block_of_frame.assign(block_of_frame.begin(), block_of_frame.end());
    bs.blocks = static_cast<int>(*std::max_element(block_of_frame.begin(), block_of_frame.end()) + 1);
    bs.has_intensities = with_m;
    bs.singletons_skipped = skip_singletons;

    const std::size_t slots = obs.active_count();
    const int dim = bs.dim();
    bs.H_MM_diag.resize(static_cast<Eigen::Index>(slots));
    bs.b_M.resize(static_cast<Eigen::Index>(slots));
    if (with_m) bs.residuals.resize(static_cast<Eigen::Index>(obs.entries.size()));

    // Coupling layout is serial (prefix sums), the numeric work is chunked.
    bs.coupling_offsets.resize(slots + 1);
    bs.coupling_offsets[0] = 0;
    for (std::size_t k = 0; k < slots; ++k) {
        std::size_t free_obs = 0;
        for (const auto& o : obs.slot(k))
            if (block_of_frame[o.frame] >= 0) ++free_obs;
        bs.coupling_offsets[k + 1] = bs.coupling_offsets[k] + free_obs;
    }
    bs.coupling.resize(bs.coupling_offsets[slots]);

    using Mat6 = Eigen::Matrix<double, 6, 6>;
    const int chunks = parallel::chunk_count(slots);
    std::vector<std::vector<Mat6>> partial_H(static_cast<std::size_t>(chunks),
                                             std::vector<Mat6>(static_cast<std::size_t>(bs.blocks), Mat6::Zero()));
    std::vector<Eigen::VectorXd> partial_b(static_cast<std::size_t>(chunks), Eigen::VectorXd::Zero(dim));

    parallel::for_chunks(slots, [&](int w, std::size_t k0, std::size_t k1) {
        auto& H = partial_H[static_cast<std::size_t>(w)];
        auto& b = partial_b[static_cast<std::size_t>(w)];
        for (std::size_t k = k0; k < k1; ++k) {
            const auto entries = obs.slot(k);
            const std::size_t n = entries.size();
            const bool in_pose_system = !(skip_singletons && n == 1);
            const double m = with_m ? intensities[obs.active[k]] : 0.0;
            double sum_e = 0.0;
            std::size_t c = bs.coupling_offsets[k];
            for (std::size_t t = 0; t < n; ++t) {
                const Observation& o = entries[t];
                const double e = m - o.intensity;
                if (with_m) bs.residuals[static_cast<Eigen::Index>(obs.offsets[k] + t)] = e;
                sum_e += e;
                const int blk = block_of_frame[o.frame];
                if (blk < 0) continue;
                bs.coupling[c++] = Coupling{blk, o.jac};
                if (!in_pose_system) continue;
                H[static_cast<std::size_t>(blk)].noalias() += o.jac.transpose() * o.jac;
                b.segment<6>(6 * blk).noalias() -= o.jac.transpose() * e;
            }
            bs.H_MM_diag[static_cast<Eigen::Index>(k)] = static_cast<double>(n);
            bs.b_M[static_cast<Eigen::Index>(k)] = -sum_e;
        }
    });

    bs.H_xx = Eigen::MatrixXd::Zero(dim, dim);
    bs.b_x = Eigen::VectorXd::Zero(dim);
    for (int w = 0; w < chunks; ++w) {
        for (int blk = 0; blk < bs.blocks; ++blk)
            bs.H_xx.block<6, 6>(6 * blk, 6 * blk) += partial_H[static_cast<std::size_t>(w)][static_cast<std::size_t>(blk)];
        bs.b_x += partial_b[static_cast<std::size_t>(w)];
    }
    return bs;
}

std::vector<double> fused_mean(const ObservationTable& obs) {
    std::vector<double> mean(obs.grid.size(), 0.0);
    parallel::for_chunks(obs.active_count(), [&](int, std::size_t k0, std::size_t k1) {
        for (std::size_t k = k0; k < k1; ++k) {
            const auto entries = obs.slot(k);
            double s = 0.0;
            for (const auto& o : entries) s += o.intensity;
            mean[obs.active[k]] = s / static_cast<double>(entries.size());
        }
    });
    return mean;
}

double objective(const ObservationTable& obs, std::span<const double> intensities) {
    if (intensities.size() != obs.grid.size())
        throw Error(ErrorKind::invalid_input, "intensity vector does not match the panorama grid");
    const int chunks = parallel::chunk_count(obs.active_count());
    std::vector<double> partial(static_cast<std::size_t>(chunks), 0.0);
    parallel::for_chunks(obs.active_count(), [&](int w, std::size_t k0, std::size_t k1) {
        double s = 0.0;
        for (std::size_t k = k0; k < k1; ++k) {
            const double m = intensities[obs.active[k]];
            for (const auto& o : obs.slot(k)) {
                const double e = m - o.intensity;
                s += e * e;
            }
        }
        partial[static_cast<std::size_t>(w)] = s;
    });
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

double profiled_objective(const ObservationTable& obs) { return objective(obs, fused_mean(obs)); }

} // namespace dsreg
