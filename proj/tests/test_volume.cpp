#include "dsreg/error.hpp"
#include "dsreg/volume.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <cmath>

using namespace dsreg;
using namespace dsreg::testing;

namespace {

// Straight from the definition: weighted sum over the 8 surrounding nodes.
double trilinear_oracle(const Volume3& v, const Vec3& p) {
    const auto& d = v.dims();
    int i0[3];
    double f[3];
    for (int a = 0; a < 3; ++a) {
        i0[a] = std::min(static_cast<int>(std::floor(p[a])), std::max(d[a] - 2, 0));
        f[a] = p[a] - i0[a];
    }
    double s = 0.0;
    for (int c = 0; c < 8; ++c) {
        int idx[3];
        double w = 1.0;
        for (int a = 0; a < 3; ++a) {
            const int bit = (c >> a) & 1;
            idx[a] = std::min(i0[a] + bit, d[a] - 1);
            w *= bit ? f[a] : 1.0 - f[a];
        }
        if (w != 0.0) s += w * v.at(idx[0], idx[1], idx[2]);
    }
    return s;
}

} // namespace

TEST_CASE("grid indexing is x-fastest") {
    const Grid g = make_grid(4, 3, 2);
    CHECK(g.index(1, 2, 1) == 1 + 4 * (2 + 3 * 1));
    const auto c = g.coords(g.index(3, 1, 1));
    CHECK(c[0] == 3);
    CHECK(c[1] == 1);
    CHECK(c[2] == 1);
}

TEST_CASE("invalid grids and data are rejected") {
    Grid g = make_grid(4, 4, 4);
    g.dims[1] = 0;
    CHECK_THROWS_AS(Volume3{g}, Error);
    g = make_grid(4, 4, 4);
    g.spacing[2] = -1.0;
    CHECK_THROWS_AS(Volume3{g}, Error);
    std::vector<float> data(64, 1.0f);
    data[5] = std::nanf("");
    CHECK_THROWS_AS(Volume3(make_grid(4, 4, 4), data), Error);
    CHECK_THROWS_AS(Volume3(make_grid(4, 4, 4), std::vector<float>(63)), Error);
}

TEST_CASE("trilinear sampling reproduces nodes exactly") {
    const Volume3 v = random_volume(make_grid(5, 6, 7), 1);
    for (int z = 0; z < 7; ++z)
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 5; ++x) CHECK(*sample_trilinear(v, Vec3(x, y, z)) == v.at(x, y, z));
}

TEST_CASE("trilinear sampling examples") {
    Volume3 ramp = volume_from(make_grid(2, 2, 2), [](int x, int, int) { return x; });
    CHECK(*sample_trilinear(ramp, Vec3(0.5, 0.5, 0.5)) == 0.5);
    CHECK(!sample_trilinear(ramp, Vec3(1.0001, 0.5, 0.5)));
    CHECK(!sample_trilinear(ramp, Vec3(-0.0001, 0.5, 0.5)));
    CHECK(*sample_trilinear(ramp, Vec3(1.0, 1.0, 1.0)) == 1.0);
}

TEST_CASE("trilinear sampling matches a brute-force oracle and stays in the corner box") {
    const Volume3 v = random_volume(make_grid(6, 5, 4), 2);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> ux(0, 5), uy(0, 4), uz(0, 3);
    for (int t = 0; t < 500; ++t) {
        const Vec3 p(ux(rng), uy(rng), uz(rng));
        const double s = *sample_trilinear(v, p);
        CHECK(s == doctest::Approx(trilinear_oracle(v, p)).epsilon(1e-12));
        double lo = 1e30, hi = -1e30;
        for (int c = 0; c < 8; ++c) {
            const int x = std::min(static_cast<int>(p[0]) + (c & 1), 5);
            const int y = std::min(static_cast<int>(p[1]) + ((c >> 1) & 1), 4);
            const int z = std::min(static_cast<int>(p[2]) + ((c >> 2) & 1), 3);
            lo = std::min<double>(lo, v.at(x, y, z));
            hi = std::max<double>(hi, v.at(x, y, z));
        }
        CHECK(s >= lo - 1e-9);
        CHECK(s <= hi + 1e-9);
    }
}

TEST_CASE("interpolant gradient matches finite differences inside cells") {
    const Volume3 v = random_volume(make_grid(6, 6, 6), 4);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> cell(0.05, 0.95);
    std::uniform_int_distribution<int> base(0, 4);
    const double h = 1e-6;
    for (int t = 0; t < 200; ++t) {
        const Vec3 p(base(rng) + cell(rng), base(rng) + cell(rng), base(rng) + cell(rng));
        const auto s = sample_with_gradient(v, p);
        REQUIRE(s);
        for (int a = 0; a < 3; ++a) {
            Vec3 e = Vec3::Zero();
            e[a] = h;
            const double fd = (*sample_trilinear(v, p + e) - *sample_trilinear(v, p - e)) / (2 * h);
            CHECK(s->gradient[a] == doctest::Approx(fd).epsilon(1e-6).scale(1.0));
        }
    }
}

TEST_CASE("gradient field is exact on affine intensities") {
    const Grid g = make_grid(7, 6, 5);
    const Volume3 v = volume_from(g, [](int x, int y, int z) { return 3.0 + 2.0 * x - 1.5 * y + 0.25 * z; });
    const GradientField gf = gradient_field(v);
    for (std::size_t i = 0; i < v.size(); ++i) {
        CHECK(gf.gx[i] == doctest::Approx(2.0).epsilon(1e-6));
        CHECK(gf.gy[i] == doctest::Approx(-1.5).epsilon(1e-6));
        CHECK(gf.gz[i] == doctest::Approx(0.25).epsilon(1e-6));
    }
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0.0, 4.0);
    for (int t = 0; t < 50; ++t) {
        const Vec3 p(u(rng), u(rng), u(rng));
        const Vec3 gs = *sample_gradient(gf, p);
        CHECK((gs - Vec3(2.0, -1.5, 0.25)).norm() < 1e-5);
        const Vec3 gi = sample_with_gradient(v, p)->gradient;
        CHECK((gi - Vec3(2.0, -1.5, 0.25)).norm() < 1e-5);
    }
}

TEST_CASE("gradient field uses one-sided differences next to masked voxels") {
    const Grid g = make_grid(6, 4, 4);
    Volume3 v = volume_from(g, [](int x, int, int) { return x == 3 ? 1000.0 : 2.0 * x; });
    std::vector<std::uint8_t> mask(v.size(), 1);
    for (int z = 0; z < 4; ++z)
        for (int y = 0; y < 4; ++y) mask[g.index(3, y, z)] = 0;
    v.set_mask(mask);
    const GradientField gf = gradient_field(v);
    CHECK(gf.gx[g.index(2, 1, 1)] == doctest::Approx(2.0));
    CHECK(gf.gx[g.index(4, 1, 1)] == doctest::Approx(2.0));
}

TEST_CASE("gradient field rejects degenerate volumes") {
    CHECK_THROWS_AS(gradient_field(Volume3(make_grid(1, 4, 4))), Error);
}

TEST_CASE("pyramid of a constant volume stays constant") {
    const Volume3 v(make_grid(16, 16, 16), 42.0f);
    const auto pyr = build_pyramid(v, 3);
    REQUIRE(pyr.size() == 3);
    CHECK(pyr[1].dims() == std::array<int, 3>{8, 8, 8});
    CHECK(pyr[2].dims() == std::array<int, 3>{4, 4, 4});
    CHECK(pyr[2].grid().spacing[0] == 4.0);
    for (const auto& level : pyr)
        for (std::size_t i = 0; i < level.size(); ++i) CHECK(level[i] == 42.0f);
}

TEST_CASE("downsampling matches a scalar smooth-then-decimate oracle") {
    const Grid g = make_grid(8, 8, 8, 1.5, Vec3(1, 2, 3));
    const Volume3 v = random_volume(g, 7);
    const Volume3 d = downsample(v);
    const double k[3] = {0.25, 0.5, 0.25};
    auto clampi = [](int i, int n) { return std::clamp(i, 0, n - 1); };
    REQUIRE(d.dims() == std::array<int, 3>{4, 4, 4});
    CHECK(d.grid().spacing[0] == 3.0);
    CHECK(d.grid().origin == g.origin);
    for (int z = 0; z < 4; ++z)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) {
                double s = 0.0;
                for (int c = -1; c <= 1; ++c)
                    for (int b = -1; b <= 1; ++b)
                        for (int a = -1; a <= 1; ++a)
                            s += k[a + 1] * k[b + 1] * k[c + 1] *
                                 v.at(clampi(2 * x + a, 8), clampi(2 * y + b, 8), clampi(2 * z + c, 8));
                CHECK(d.at(x, y, z) == doctest::Approx(s).epsilon(1e-6));
            }
}

TEST_CASE("pyramid rejects too many levels") {
    CHECK_THROWS_AS(build_pyramid(Volume3(make_grid(16, 16, 16)), 4), Error);
    CHECK_THROWS_AS(build_pyramid(Volume3(make_grid(16, 16, 16)), 0), Error);
}

TEST_CASE("coarse validity requires the whole footprint") {
    const Grid g = make_grid(9, 9, 9);
    Volume3 v(g, 1.0f);
    std::vector<std::uint8_t> mask(v.size(), 1);
    mask[g.index(4, 4, 4)] = 0;
    v.set_mask(mask);
    const Volume3 d = downsample(v);
    const Grid& dg = d.grid();
    CHECK(!d.valid(dg.index(2, 2, 2)));
    CHECK(d.valid(dg.index(1, 1, 1)));
    CHECK(d.valid(dg.index(3, 2, 2)));
}

TEST_CASE("fusing one frame at the identity copies it") {
    const Volume3 v = random_volume(make_grid(5, 5, 5), 8);
    const std::vector<Volume3> frames{v};
    const std::vector<Pose> poses{Pose()};
    const FusedVolume f = fuse(frames, poses, v.grid());
    for (std::size_t i = 0; i < v.size(); ++i) {
        CHECK(f.intensity[i] == v[i]);
        CHECK(f.counts[i] == 1.0f);
    }
}

TEST_CASE("fusion is the mean and idempotent over identical frames") {
    const Volume3 v = random_volume(make_grid(6, 6, 6), 9);
    const Volume3 a(v.grid(), 10.0f), b(v.grid(), 20.0f);
    const std::vector<Volume3> ab{a, b};
    const std::vector<Pose> id2{Pose(), Pose()};
    const FusedVolume f = fuse(ab, id2, v.grid());
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(f.intensity[i] == 15.0f);

    const std::vector<Volume3> three{v, v, v};
    const std::vector<Pose> id3{Pose(), Pose(), Pose()};
    const FusedVolume g = fuse(three, id3, v.grid());
    for (std::size_t i = 0; i < v.size(); ++i) {
        CHECK(g.intensity[i] == doctest::Approx(v[i]).epsilon(1e-6));
        CHECK(g.counts[i] == 3.0f);
    }
}

TEST_CASE("two disjoint frames both land in the panorama") {
    const Grid g = make_grid(4, 4, 4);
    const std::vector<Volume3> frames{Volume3(g, 1.0f), Volume3(g, 2.0f)};
    Vec6 shift = Vec6::Zero();
    shift[0] = -10.0;
    const std::vector<Pose> poses{Pose(), Pose(shift)};
    const PanoramaGrid pg = make_panorama_grid(frames, poses, 0);
    const FusedVolume f = fuse(frames, poses, pg.grid);
    std::size_t ones = 0, twos = 0;
    for (std::size_t i = 0; i < f.counts.size(); ++i) {
        CHECK((f.counts[i] == 0.0f || f.counts[i] == 1.0f));
        ones += f.counts[i] == 1.0f && f.intensity[i] == 1.0f;
        twos += f.counts[i] == 1.0f && f.intensity[i] == 2.0f;
    }
    CHECK(ones == 64);
    CHECK(twos == 64);
}

TEST_CASE("panorama grid covers every warped frame corner") {
    std::mt19937_64 rng(10);
    const Grid fg = make_grid(10, 12, 8, 1.25, Vec3(-3, 2, 0.5));
    const std::vector<Volume3> frames{Volume3(fg), Volume3(fg), Volume3(fg)};
    std::vector<Pose> poses;
    for (int i = 0; i < 3; ++i) poses.emplace_back(random_twist(rng, 6.0, 0.3));
    const PanoramaGrid pg = make_panorama_grid(frames, poses, 2);
    CHECK(pg.grid.spacing == fg.spacing);
    for (const Pose& P : poses) {
        const Pose inv = P.inverse();
        for (int c = 0; c < 8; ++c) {
            const Vec3 corner = fg.to_world(Vec3((c & 1) ? 9 : 0, (c & 2) ? 11 : 0, (c & 4) ? 7 : 0));
            const Vec3 pv = pg.grid.to_voxel(warp(inv, corner));
            for (int a = 0; a < 3; ++a) {
                CHECK(pv[a] >= 2.0 - 1e-9);
                CHECK(pv[a] <= pg.grid.dims[a] - 3.0 + 1e-9);
            }
        }
    }
}

TEST_CASE("coarsened grids keep the origin") {
    const Grid g = make_grid(33, 20, 9, 0.5, Vec3(1, 1, 1));
    const Grid c = coarsen_grid(g, 2);
    CHECK(c.origin == g.origin);
    CHECK(c.spacing[0] == 2.0);
    CHECK(c.dims == std::array<int, 3>{9, 6, 3});
    CHECK(coarsen_grid(g, 0) == g);
}
