#include "dsreg/volume.hpp"

#include "dsreg/detail/trilinear.hpp"
#include "dsreg/error.hpp"
#include "dsreg/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace dsreg {

std::array<int, 3> Grid::coords(std::size_t idx) const {
    const auto nx = static_cast<std::size_t>(dims[0]);
    const auto ny = static_cast<std::size_t>(dims[1]);
    return {static_cast<int>(idx % nx), static_cast<int>((idx / nx) % ny),
            static_cast<int>(idx / (nx * ny))};
}

void Grid::validate() const {
    for (int k = 0; k < 3; ++k) {
        if (dims[k] < 1) {
            std::ostringstream os;
            os << "grid dims must be positive (axis " << k << " has " << dims[k] << ")";
            throw Error(ErrorKind::invalid_volume, os.str());
        }
        if (!(spacing[k] > 0.0) || !std::isfinite(spacing[k])) {
            std::ostringstream os;
            os << "grid spacing must be positive and finite (axis " << k << " has " << spacing[k] << ")";
            throw Error(ErrorKind::invalid_volume, os.str());
        }
        if (!std::isfinite(origin[k])) throw Error(ErrorKind::invalid_volume, "grid origin must be finite");
    }
}

Volume3::Volume3(const Grid& grid, float fill) : grid_(grid) {
    grid_.validate();
    if (!std::isfinite(fill)) throw Error(ErrorKind::invalid_volume, "fill value must be finite");
    data_.assign(grid_.size(), fill);
}

Volume3::Volume3(const Grid& grid, std::vector<float> data) : grid_(grid), data_(std::move(data)) {
    grid_.validate();
    if (data_.size() != grid_.size()) {
        std::ostringstream os;
        os << "volume data has " << data_.size() << " values, dims require " << grid_.size();
        throw Error(ErrorKind::invalid_volume, os.str());
    }
    for (float v : data_) {
        if (!std::isfinite(v)) throw Error(ErrorKind::invalid_volume, "volume intensities must be finite");
    }
}

void Volume3::set_mask(std::vector<std::uint8_t> mask) {
    if (!mask.empty() && mask.size() != data_.size())
        throw Error(ErrorKind::invalid_volume, "validity mask size does not match volume");
    mask_ = std::move(mask);
}

std::size_t Volume3::valid_count() const {
    if (mask_.empty()) return data_.size();
    return static_cast<std::size_t>(std::count_if(mask_.begin(), mask_.end(), [](auto m) { return m != 0; }));
}

std::optional<double> sample_trilinear(const Volume3& vol, const Vec3& p) {
    detail::Cell c;
    if (!detail::locate(vol.grid(), p.x(), p.y(), p.z(), c)) return std::nullopt;
    return detail::blend(vol.data().data(), c);
}

std::optional<SampleWithGradient> sample_with_gradient(const Volume3& vol, const Vec3& p) {
    detail::Cell c;
    if (!detail::locate(vol.grid(), p.x(), p.y(), p.z(), c)) return std::nullopt;
    double g[3];
    const double v = detail::blend_with_gradient(vol.data().data(), c, g);
    return SampleWithGradient{v, Vec3(g[0], g[1], g[2])};
}

GradientField gradient_field(const Volume3& vol) {
    const auto& d = vol.dims();
    for (int k = 0; k < 3; ++k) {
        if (d[k] < 2) throw Error(ErrorKind::invalid_volume, "gradient needs at least 2 voxels per axis");
    }
    GradientField gf;
    gf.grid = vol.grid();
    gf.gx.resize(vol.size());
    gf.gy.resize(vol.size());
    gf.gz.resize(vol.size());
    const std::size_t stride[3] = {1, static_cast<std::size_t>(d[0]),
                                   static_cast<std::size_t>(d[0]) * static_cast<std::size_t>(d[1])};
    std::vector<float>* out[3] = {&gf.gx, &gf.gy, &gf.gz};
    const auto data = vol.data();

    parallel::for_chunks(static_cast<std::size_t>(d[2]), [&](int, std::size_t z0, std::size_t z1) {
        for (int z = static_cast<int>(z0); z < static_cast<int>(z1); ++z)
            for (int y = 0; y < d[1]; ++y)
                for (int x = 0; x < d[0]; ++x) {
                    const std::size_t i = vol.grid().index(x, y, z);
                    const int pos[3] = {x, y, z};
                    for (int k = 0; k < 3; ++k) {
                        const bool has_lo = pos[k] > 0 && vol.valid(i - stride[k]);
                        const bool has_hi = pos[k] < d[k] - 1 && vol.valid(i + stride[k]);
                        double g = 0.0;
                        if (has_lo && has_hi)
                            g = 0.5 * (double(data[i + stride[k]]) - data[i - stride[k]]);
                        else if (has_hi)
                            g = double(data[i + stride[k]]) - data[i];
                        else if (has_lo)
                            g = double(data[i]) - data[i - stride[k]];
                        (*out[k])[i] = static_cast<float>(g);
                    }
                }
    });
    return gf;
}

std::optional<Vec3> sample_gradient(const GradientField& gf, const Vec3& p) {
    detail::Cell c;
    if (!detail::locate(gf.grid, p.x(), p.y(), p.z(), c)) return std::nullopt;
    return Vec3(detail::blend(gf.gx.data(), c), detail::blend(gf.gy.data(), c),
                detail::blend(gf.gz.data(), c));
}

namespace {

int coarse_dim(int d) { return (d - 1) / 2 + 1; }

// One (1/4, 1/2, 1/4) pass along `axis` with clamped edges.
std::vector<double> smooth_axis(const std::vector<double>& in, const std::array<int, 3>& d, int axis) {
    std::vector<double> out(in.size());
    const std::size_t stride[3] = {1, static_cast<std::size_t>(d[0]),
                                   static_cast<std::size_t>(d[0]) * static_cast<std::size_t>(d[1])};
    std::size_t i = 0;
    for (int z = 0; z < d[2]; ++z)
        for (int y = 0; y < d[1]; ++y)
            for (int x = 0; x < d[0]; ++x, ++i) {
                const int pos = axis == 0 ? x : (axis == 1 ? y : z);
                const std::size_t lo = pos > 0 ? i - stride[axis] : i;
                const std::size_t hi = pos < d[axis] - 1 ? i + stride[axis] : i;
                out[i] = 0.25 * in[lo] + 0.5 * in[i] + 0.25 * in[hi];
            }
    return out;
}

} // namespace

Volume3 downsample(const Volume3& vol) {
    const auto& d = vol.dims();
    std::vector<double> work(vol.data().begin(), vol.data().end());
    for (int axis = 0; axis < 3; ++axis) work = smooth_axis(work, d, axis);

    Grid g = vol.grid();
    for (int k = 0; k < 3; ++k) {
        g.dims[k] = coarse_dim(d[k]);
        g.spacing[k] *= 2.0;
    }
    Volume3 out(g);
    std::vector<std::uint8_t> mask;
    if (vol.has_mask()) mask.assign(g.size(), 1);

    for (int z = 0; z < g.dims[2]; ++z)
        for (int y = 0; y < g.dims[1]; ++y)
            for (int x = 0; x < g.dims[0]; ++x) {
                const std::size_t src = vol.grid().index(2 * x, 2 * y, 2 * z);
                const std::size_t dst = g.index(x, y, z);
                out[dst] = static_cast<float>(work[src]);
                if (mask.empty()) continue;
                bool ok = true;
                for (int dz = -1; dz <= 1 && ok; ++dz)
                    for (int dy = -1; dy <= 1 && ok; ++dy)
                        for (int dx = -1; dx <= 1 && ok; ++dx) {
                            const int sx = std::clamp(2 * x + dx, 0, d[0] - 1);
                            const int sy = std::clamp(2 * y + dy, 0, d[1] - 1);
                            const int sz = std::clamp(2 * z + dz, 0, d[2] - 1);
                            ok = vol.valid(vol.grid().index(sx, sy, sz));
                        }
                mask[dst] = ok ? 1 : 0;
            }
    out.set_mask(std::move(mask));
    return out;
}

std::vector<Volume3> build_pyramid(const Volume3& vol, int levels) {
    if (levels < 1) throw Error(ErrorKind::invalid_config, "pyramid needs at least one level");
    std::array<int, 3> d = vol.dims();
    for (int l = 1; l < levels; ++l)
        for (auto& v : d) v = coarse_dim(v);
    for (int k = 0; k < 3; ++k) {
        if (levels > 1 && d[k] < 4) {
            std::ostringstream os;
            os << levels << " pyramid levels leave axis " << k << " with " << d[k]
               << " voxels (need at least 4)";
            throw Error(ErrorKind::invalid_config, os.str());
        }
    }
    std::vector<Volume3> pyr;
    pyr.reserve(static_cast<std::size_t>(levels));
    pyr.push_back(vol);
    for (int l = 1; l < levels; ++l) pyr.push_back(downsample(pyr.back()));
    return pyr;
}

PanoramaGrid make_panorama_grid(std::span<const Volume3> frames, std::span<const Pose> poses,
                                int margin_voxels) {
    if (frames.empty()) throw Error(ErrorKind::invalid_input, "no frames to build a panorama grid from");
    if (frames.size() != poses.size()) throw Error(ErrorKind::invalid_input, "need one pose per frame");
    if (margin_voxels < 0) throw Error(ErrorKind::invalid_config, "panorama margin must be non-negative");

    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const Grid& g = frames[i].grid();
        const Pose inv = poses[i].inverse();
        for (int corner = 0; corner < 8; ++corner) {
            const Vec3 v((corner & 1) ? g.dims[0] - 1 : 0, (corner & 2) ? g.dims[1] - 1 : 0,
                         (corner & 4) ? g.dims[2] - 1 : 0);
            const Vec3 w = warp(inv, g.to_world(v));
            lo = lo.cwiseMin(w);
            hi = hi.cwiseMax(w);
        }
    }
    PanoramaGrid pg;
    pg.margin_voxels = margin_voxels;
    pg.grid.spacing = frames[0].grid().spacing;
    for (int k = 0; k < 3; ++k) {
        const double s = pg.grid.spacing[k];
        const double start = std::floor(lo[k] / s) - margin_voxels;
        const double stop = std::ceil(hi[k] / s) + margin_voxels;
        pg.grid.origin[k] = start * s;
        pg.grid.dims[k] = static_cast<int>(stop - start) + 1;
    }
    return pg;
}

Grid coarsen_grid(const Grid& fine, int level) {
    Grid g = fine;
    const int step = 1 << level;
    for (int k = 0; k < 3; ++k) {
        g.dims[k] = (fine.dims[k] - 1 + step - 1) / step + 1;
        g.spacing[k] = fine.spacing[k] * step;
    }
    return g;
}

FusedVolume fuse(std::span<const Volume3> frames, std::span<const Pose> poses, const Grid& grid) {
    if (frames.empty()) throw Error(ErrorKind::invalid_input, "fuse needs at least one frame");
    if (frames.size() != poses.size()) throw Error(ErrorKind::invalid_input, "need one pose per frame");

    FusedVolume out{Volume3(grid), Volume3(grid)};
    std::vector<detail::VoxelAffine> maps;
    for (std::size_t i = 0; i < frames.size(); ++i)
        maps.push_back(detail::panorama_to_frame(grid, frames[i].grid(), poses[i]));

    const auto& d = grid.dims;
    parallel::for_chunks(static_cast<std::size_t>(d[1]) * static_cast<std::size_t>(d[2]),
                         [&](int, std::size_t r0, std::size_t r1) {
        std::vector<double> row_sum(static_cast<std::size_t>(d[0]));
        std::vector<int> row_cnt(static_cast<std::size_t>(d[0]));
        for (std::size_t r = r0; r < r1; ++r) {
            const int y = static_cast<int>(r % static_cast<std::size_t>(d[1]));
            const int z = static_cast<int>(r / static_cast<std::size_t>(d[1]));
            std::fill(row_sum.begin(), row_sum.end(), 0.0);
            std::fill(row_cnt.begin(), row_cnt.end(), 0);
            for (std::size_t i = 0; i < frames.size(); ++i) {
                const Volume3& f = frames[i];
                const auto& a = maps[i];
                int lo, hi;
                detail::clip_row(a, f.grid(), y, z, d[0], lo, hi);
                const Vec3 row0 = a.L.col(1) * y + a.L.col(2) * z + a.c;
                const Vec3 step = a.L.col(0);
                const float* data = f.data().data();
                const std::uint8_t* mask = f.has_mask() ? f.mask().data() : nullptr;
                for (int x = lo; x < hi; ++x) {
                    const Vec3 p = row0 + step * x;
                    detail::Cell c;
                    if (!detail::locate(f.grid(), p.x(), p.y(), p.z(), c)) continue;
                    if (mask && !detail::corners_valid(mask, c)) continue;
                    row_sum[static_cast<std::size_t>(x)] += detail::blend(data, c);
                    ++row_cnt[static_cast<std::size_t>(x)];
                }
            }
            for (int x = 0; x < d[0]; ++x) {
                const std::size_t j = grid.index(x, y, z);
                const int n = row_cnt[static_cast<std::size_t>(x)];
                out.counts[j] = static_cast<float>(n);
                out.intensity[j] = n > 0 ? static_cast<float>(row_sum[static_cast<std::size_t>(x)] / n) : 0.0f;
            }
        }
    });
    return out;
}

} // namespace dsreg
