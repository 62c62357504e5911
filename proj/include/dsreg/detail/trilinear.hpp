#pragma once

#include "dsreg/volume.hpp"

#include <cmath>

namespace dsreg::detail {

// Trilinear stencil of one continuous voxel coordinate.
struct Cell {
    std::size_t base;
    std::size_t sx, sy, sz; // strides to the +1 neighbour, 0 on singleton axes
    double fx, fy, fz;
};

inline bool locate_axis(double p, int dim, std::size_t stride, std::size_t& offset,
                        std::size_t& step, double& frac) {
    if (!(p >= 0.0) || !(p <= static_cast<double>(dim - 1))) return false;
    if (dim == 1) {
        offset = 0;
        step = 0;
        frac = 0.0;
        return true;
    }
    int i = static_cast<int>(p);
    if (i >= dim - 1) i = dim - 2;
    offset = static_cast<std::size_t>(i) * stride;
    step = stride;
    frac = p - static_cast<double>(i);
    return true;
}

inline bool locate(const Grid& g, double px, double py, double pz, Cell& c) {
    const std::size_t sy = static_cast<std::size_t>(g.dims[0]);
    const std::size_t sz = sy * static_cast<std::size_t>(g.dims[1]);
    std::size_t ox, oy, oz;
    if (!locate_axis(px, g.dims[0], 1, ox, c.sx, c.fx)) return false;
    if (!locate_axis(py, g.dims[1], sy, oy, c.sy, c.fy)) return false;
    if (!locate_axis(pz, g.dims[2], sz, oz, c.sz, c.fz)) return false;
    c.base = ox + oy + oz;
    return true;
}

inline bool corners_valid(const std::uint8_t* mask, const Cell& c) {
    const std::size_t b = c.base;
    return mask[b] && mask[b + c.sx] && mask[b + c.sy] && mask[b + c.sx + c.sy] &&
           mask[b + c.sz] && mask[b + c.sx + c.sz] && mask[b + c.sy + c.sz] &&
           mask[b + c.sx + c.sy + c.sz];
}

template <typename T>
inline double blend(const T* d, const Cell& c) {
    const std::size_t b = c.base;
    const double c00 = d[b] + c.fx * (double(d[b + c.sx]) - d[b]);
    const double c10 = d[b + c.sy] + c.fx * (double(d[b + c.sx + c.sy]) - d[b + c.sy]);
    const double c01 = d[b + c.sz] + c.fx * (double(d[b + c.sx + c.sz]) - d[b + c.sz]);
    const double c11 = d[b + c.sy + c.sz] +
                       c.fx * (double(d[b + c.sx + c.sy + c.sz]) - d[b + c.sy + c.sz]);
    const double c0 = c00 + c.fy * (c10 - c00);
    const double c1 = c01 + c.fy * (c11 - c01);
    return c0 + c.fz * (c1 - c0);
}

// Value and analytic gradient of the trilinear interpolant inside the cell.
template <typename T>
inline double blend_with_gradient(const T* d, const Cell& c, double g[3]) {
    const std::size_t b = c.base;
    const double v000 = d[b];
    const double v100 = d[b + c.sx];
    const double v010 = d[b + c.sy];
    const double v110 = d[b + c.sx + c.sy];
    const double v001 = d[b + c.sz];
    const double v101 = d[b + c.sx + c.sz];
    const double v011 = d[b + c.sy + c.sz];
    const double v111 = d[b + c.sx + c.sy + c.sz];
    const double fx = c.fx, fy = c.fy, fz = c.fz;
    const double gx = 1.0 - fx, gy = 1.0 - fy, gz = 1.0 - fz;

    // Singleton axes have step 0, so their differences vanish as required.
    g[0] = gy * gz * (v100 - v000) + fy * gz * (v110 - v010) + gy * fz * (v101 - v001) +
           fy * fz * (v111 - v011);
    g[1] = gx * gz * (v010 - v000) + fx * gz * (v110 - v100) + gx * fz * (v011 - v001) +
           fx * fz * (v111 - v101);
    g[2] = gx * gy * (v001 - v000) + fx * gy * (v101 - v100) + gx * fy * (v011 - v010) +
           fx * fy * (v111 - v110);

    const double c00 = v000 + fx * (v100 - v000);
    const double c10 = v010 + fx * (v110 - v010);
    const double c01 = v001 + fx * (v101 - v001);
    const double c11 = v011 + fx * (v111 - v011);
    const double c0 = c00 + fy * (c10 - c00);
    const double c1 = c01 + fy * (c11 - c01);
    return c0 + fz * (c1 - c0);
}

// Affine map from voxel indices of one grid to continuous voxel coordinates of
// another: q = L * v + c.
struct VoxelAffine {
    Mat3 L;
    Vec3 c;

    Vec3 operator()(const Vec3& v) const { return L * v + c; }
};

// Panorama voxel -> frame voxel under a world-to-frame pose.
inline VoxelAffine panorama_to_frame(const Grid& pano, const Grid& frame, const Pose& pose) {
    const Mat3 R = pose.rotation();
    const Vec3 t = pose.translation();
    const Vec3 inv_s = frame.spacing.cwiseInverse();
    VoxelAffine a;
    a.L = inv_s.asDiagonal() * R * pano.spacing.asDiagonal();
    a.c = inv_s.cwiseProduct(R * pano.origin + t - frame.origin);
    return a;
}

// Range of x indices [lo, hi) on row (y, z) whose image under `a` can lie in
// [0, dims-1] on every axis. Conservative by one voxel on each side; callers
// still test each point.
inline void clip_row(const VoxelAffine& a, const Grid& target, int y, int z, int nx, int& lo,
                     int& hi) {
    double tmin = -1e300, tmax = 1e300;
    for (int k = 0; k < 3; ++k) {
        const double base = a.L(k, 1) * y + a.L(k, 2) * z + a.c[k];
        const double slope = a.L(k, 0);
        const double upper = static_cast<double>(target.dims[k] - 1);
        if (std::abs(slope) < 1e-15) {
            if (base < 0.0 || base > upper) {
                lo = hi = 0;
                return;
            }
            continue;
        }
        double t0 = (0.0 - base) / slope;
        double t1 = (upper - base) / slope;
        if (t0 > t1) std::swap(t0, t1);
        tmin = std::max(tmin, t0);
        tmax = std::min(tmax, t1);
    }
    if (tmin > tmax) {
        lo = hi = 0;
        return;
    }
    lo = static_cast<int>(std::max(0.0, std::floor(tmin) - 1.0));
    hi = static_cast<int>(std::min(static_cast<double>(nx), std::ceil(tmax) + 2.0));
    if (hi < lo) hi = lo;
}

} // namespace dsreg::detail
