#pragma once

#include "dsreg/se3.hpp"
#include "dsreg/volume.hpp"

#include <algorithm>
#include <random>

namespace dsreg::testing {

inline Grid make_grid(int nx, int ny, int nz, double s = 1.0, Vec3 origin = Vec3::Zero()) {
    Grid g;
    g.dims = {nx, ny, nz};
    g.spacing = Vec3::Constant(s);
    g.origin = origin;
    return g;
}

inline Volume3 random_volume(const Grid& g, std::uint64_t seed, float lo = 0.0f, float hi = 255.0f) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(lo, hi);
    Volume3 v(g);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = u(rng);
    return v;
}

template <typename F>
Volume3 volume_from(const Grid& g, F f) {
    Volume3 v(g);
    for (int z = 0; z < g.dims[2]; ++z)
        for (int y = 0; y < g.dims[1]; ++y)
            for (int x = 0; x < g.dims[0]; ++x) v.at(x, y, z) = static_cast<float>(f(x, y, z));
    return v;
}

inline Vec6 random_twist(std::mt19937_64& rng, double trans, double rot) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Vec6 xi;
    for (int i = 0; i < 3; ++i) xi[i] = trans * u(rng);
    for (int i = 3; i < 6; ++i) xi[i] = rot * u(rng);
    return xi;
}

inline bool same_data(const Volume3& a, const Volume3& b) {
    return a.size() == b.size() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

inline double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

} // namespace dsreg::testing
