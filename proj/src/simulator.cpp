#include "dsreg/simulator.hpp"

#include "dsreg/detail/trilinear.hpp"
#include "dsreg/error.hpp"
#include "dsreg/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dsreg {

std::string to_string(PhantomKind kind) {
    switch (kind) {
    case PhantomKind::smooth_blobs: return "smooth-blobs";
    case PhantomKind::shell: return "shell";
    case PhantomKind::checker_smoothed: return "checker-smoothed";
    }
    return "?";
}

PhantomKind parse_phantom(const std::string& s) {
    if (s == "smooth-blobs") return PhantomKind::smooth_blobs;
    if (s == "shell") return PhantomKind::shell;
    if (s == "checker-smoothed") return PhantomKind::checker_smoothed;
    throw Error(ErrorKind::invalid_config,
                "unknown phantom '" + s + "' (expected smooth-blobs, shell or checker-smoothed)");
}

std::mt19937_64 sub_stream(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                      static_cast<std::uint32_t>(index >> 32)};
    return std::mt19937_64(seq);
}

namespace {

constexpr double kDeg = M_PI / 180.0;

Grid unit_grid(const std::array<int, 3>& dims) {
    Grid g;
    g.dims = dims;
    return g;
}

void blobs(Volume3& vol, std::mt19937_64& rng) {
    const auto& d = vol.dims();
    const std::size_t count = std::max<std::size_t>(12, vol.size() / 1200);
    std::uniform_real_distribution<double> ux(0.0, d[0] - 1.0), uy(0.0, d[1] - 1.0), uz(0.0, d[2] - 1.0);
    std::uniform_real_distribution<double> sigma(3.0, 7.0), amp(50.0, 110.0), sign(0.0, 1.0);
    std::vector<double> acc(vol.size(), 128.0);
    for (std::size_t b = 0; b < count; ++b) {
        const Vec3 c(ux(rng), uy(rng), uz(rng));
        const double s = sigma(rng);
        const double a = amp(rng) * (sign(rng) < 0.5 ? -1.0 : 1.0);
        const double inv = 1.0 / (2.0 * s * s);
        const int r = static_cast<int>(std::ceil(3.0 * s));
        int lo[3], hi[3];
        for (int k = 0; k < 3; ++k) {
            lo[k] = std::max(0, static_cast<int>(std::floor(c[k])) - r);
            hi[k] = std::min(d[k] - 1, static_cast<int>(std::ceil(c[k])) + r);
        }
        for (int z = lo[2]; z <= hi[2]; ++z)
            for (int y = lo[1]; y <= hi[1]; ++y)
                for (int x = lo[0]; x <= hi[0]; ++x) {
                    const double d2 = (Vec3(x, y, z) - c).squaredNorm();
                    acc[vol.grid().index(x, y, z)] += a * std::exp(-d2 * inv);
                }
    }
    for (std::size_t i = 0; i < acc.size(); ++i) vol[i] = static_cast<float>(std::clamp(acc[i], 0.0, 255.0));
}

void shell(Volume3& vol) {
    const auto& d = vol.dims();
    const Vec3 c((d[0] - 1) * 0.5, (d[1] - 1) * 0.5, (d[2] - 1) * 0.5);
    const Vec3 axes(0.42 * d[0], 0.38 * d[1], 0.40 * d[2]);
    constexpr double inner = 0.55, ramp = 0.08, wall = 200.0, background = 60.0;
    for (int z = 0; z < d[2]; ++z)
        for (int y = 0; y < d[1]; ++y)
            for (int x = 0; x < d[0]; ++x) {
                const double r = (Vec3(x, y, z) - c).cwiseQuotient(axes).norm();
                double v;
                if (r < inner)
                    v = 0.0;
                else if (r < inner + ramp)
                    v = wall * 0.5 * (1.0 - std::cos(M_PI * (r - inner) / ramp));
                else if (r < 1.0)
                    v = wall;
                else if (r < 1.0 + ramp)
                    v = background + (wall - background) * 0.5 * (1.0 + std::cos(M_PI * (r - 1.0) / ramp));
                else
                    v = background;
                vol.at(x, y, z) = static_cast<float>(v);
            }
}

void gaussian_blur(Volume3& vol, double sigma) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double norm = 0.0;
    for (int t = -radius; t <= radius; ++t) {
        kernel[static_cast<std::size_t>(t + radius)] = std::exp(-0.5 * t * t / (sigma * sigma));
        norm += kernel[static_cast<std::size_t>(t + radius)];
    }
    for (auto& k : kernel) k /= norm;
    const auto& d = vol.dims();
    std::vector<double> cur(vol.data().begin(), vol.data().end());
    for (int axis = 0; axis < 3; ++axis) {
        std::vector<double> next(cur.size());
        for (int z = 0; z < d[2]; ++z)
            for (int y = 0; y < d[1]; ++y)
                for (int x = 0; x < d[0]; ++x) {
                    int pos[3] = {x, y, z};
                    double s = 0.0;
                    for (int t = -radius; t <= radius; ++t) {
                        int q[3] = {x, y, z};
                        q[axis] = std::clamp(pos[axis] + t, 0, d[axis] - 1);
                        s += kernel[static_cast<std::size_t>(t + radius)] * cur[vol.grid().index(q[0], q[1], q[2])];
                    }
                    next[vol.grid().index(x, y, z)] = s;
                }
        cur = std::move(next);
    }
    for (std::size_t i = 0; i < cur.size(); ++i) vol[i] = static_cast<float>(std::clamp(cur[i], 0.0, 255.0));
}

void checker(Volume3& vol, std::mt19937_64& rng) {
    const auto& d = vol.dims();
    std::uniform_int_distribution<int> phase(0, 7);
    const int px = phase(rng), py = phase(rng), pz = phase(rng);
    for (int z = 0; z < d[2]; ++z)
        for (int y = 0; y < d[1]; ++y)
            for (int x = 0; x < d[0]; ++x) {
                const int parity = ((x + px) / 8 + (y + py) / 8 + (z + pz) / 8) % 2;
                vol.at(x, y, z) = parity ? 200.0f : 50.0f;
            }
    gaussian_blur(vol, 2.0);
}

} // namespace

Volume3 make_phantom(const std::array<int, 3>& dims, PhantomKind kind, std::uint64_t seed) {
    for (int k = 0; k < 3; ++k)
        if (dims[k] < 16) throw Error(ErrorKind::invalid_config, "phantom needs at least 16 voxels per axis");
    Volume3 vol(unit_grid(dims));
    auto rng = sub_stream(seed, 0x9e11u + static_cast<std::uint64_t>(kind));
    switch (kind) {
    case PhantomKind::smooth_blobs: blobs(vol, rng); break;
    case PhantomKind::shell: shell(vol); break;
    case PhantomKind::checker_smoothed: checker(vol, rng); break;
    }
    return vol;
}

void SimProtocol::validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorKind::invalid_config, what); };
    if (n_frames < 2) fail("n_frames must be at least 2");
    if (!(rot_range_deg >= 0.0) || !(trans_range_vox >= 0.0)) fail("motion ranges must be non-negative");
    if (!(noise_std >= 0.0)) fail("noise_std must be non-negative");
    if (!(init_rot_deg >= 0.0) || !(init_trans_vox >= 0.0)) fail("initial perturbation must be non-negative");
    for (int k = 0; k < 3; ++k)
        if (frame_dims[k] < 2) fail("frame dims must be at least 2 per axis");
    if (!(min_valid_fraction >= 0.0 && min_valid_fraction <= 1.0)) fail("min_valid_fraction must lie in [0, 1]");
    if (!(min_overlap_fraction >= 0.0 && min_overlap_fraction <= 1.0)) fail("min_overlap_fraction must lie in [0, 1]");
    if (max_attempts < 1) fail("max_attempts must be at least 1");
    if (frustum.enabled && !(frustum.half_angle_deg > 0.0 && frustum.half_angle_deg < 90.0))
        fail("frustum half angle must lie in (0, 90) degrees");
}

Grid frame_grid(const Volume3& source, const std::array<int, 3>& frame_dims) {
    const Grid& s = source.grid();
    Grid g;
    g.dims = frame_dims;
    g.spacing = s.spacing;
    for (int k = 0; k < 3; ++k) {
        const double center = s.origin[k] + s.spacing[k] * (s.dims[k] - 1) * 0.5;
        g.origin[k] = center - s.spacing[k] * (frame_dims[k] - 1) * 0.5;
    }
    return g;
}

namespace {

Vec3 lattice_center(const Grid& g) {
    return g.to_world(Vec3((g.dims[0] - 1) * 0.5, (g.dims[1] - 1) * 0.5, (g.dims[2] - 1) * 0.5));
}

// Frame-local rigid motion: rotation about the frame centre, then translation.
Pose draw_motion(std::mt19937_64& rng, const Grid& lattice, double rot_deg, double trans_vox, const Vec3& drift) {
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    Vec3 ypr, t;
    for (int k = 0; k < 3; ++k) ypr[k] = unit(rng) * rot_deg * kDeg;
    for (int k = 0; k < 3; ++k) t[k] = (unit(rng) * trans_vox + drift[k]) * lattice.spacing[k];
    return rigid_about(lattice_center(lattice), ypr, t);
}

} // namespace

std::vector<Pose> sample_trajectory(const SimProtocol& protocol, std::uint64_t seed, const Grid& lattice,
                                    const StepFilter& accept, int* retries) {
    protocol.validate();
    const auto n = static_cast<std::size_t>(protocol.n_frames);
    // Frame-to-world transforms; the returned poses are their inverses.
    std::vector<Pose> to_world{Pose{}};
    std::vector<Pose> poses{Pose{}};
    int rejected = 0;
    for (std::size_t k = 1; k < n; ++k) {
        bool ok = false;
        for (int attempt = 0; attempt < protocol.max_attempts; ++attempt) {
            auto rng = sub_stream(seed, 1, (static_cast<std::uint64_t>(attempt) << 32) | k);
            const Pose motion =
                draw_motion(rng, lattice, protocol.rot_range_deg, protocol.trans_range_vox, protocol.sweep_vox);
            const Pose candidate_to_world = to_world.back() * motion;
            const Pose candidate = candidate_to_world.inverse();
            if (!accept || accept(k, candidate, poses.back())) {
                to_world.push_back(candidate_to_world);
                poses.push_back(candidate);
                ok = true;
                break;
            }
            ++rejected;
        }
        if (!ok) {
            std::ostringstream os;
            os << "no acceptable motion for frame " << k << " after " << protocol.max_attempts << " draws";
            throw Error(ErrorKind::invalid_config, os.str());
        }
    }
    if (retries) *retries = rejected;
    return poses;
}

namespace {

bool in_frustum(const Grid& lattice, const Frustum& fr, int x, int y, int z) {
    if (!fr.enabled) return true;
    const double cx = (lattice.dims[0] - 1) * 0.5;
    const double cy = (lattice.dims[1] - 1) * 0.5;
    const double depth = lattice.dims[2] - 1;
    const double slope = std::tan(fr.half_angle_deg * kDeg);
    const double apex = std::max(0.0, std::max(cx, cy) / slope - depth);
    const double half_width = slope * (z + apex);
    return std::abs(x - cx) <= half_width && std::abs(y - cy) <= half_width;
}

} // namespace

Volume3 extract_frame(const Volume3& source, const Pose& pose, const Grid& lattice, const Frustum& frustum) {
    Volume3 frame(lattice);
    std::vector<std::uint8_t> mask(frame.size(), 0);
    const Pose to_world = pose.inverse();
    const auto& d = lattice.dims;
    std::size_t valid = 0;
    for (int z = 0; z < d[2]; ++z)
        for (int y = 0; y < d[1]; ++y)
            for (int x = 0; x < d[0]; ++x) {
                const std::size_t i = lattice.index(x, y, z);
                if (!in_frustum(lattice, frustum, x, y, z)) continue;
                const Vec3 w = warp(to_world, lattice.to_world(Vec3(x, y, z)));
                const auto v = sample_trilinear(source, source.grid().to_voxel(w));
                if (!v) continue;
                frame[i] = static_cast<float>(*v);
                mask[i] = 1;
                ++valid;
            }
    if (valid == 0) throw Error(ErrorKind::invalid_input, "frame field of view does not intersect the source");
    if (valid < frame.size()) frame.set_mask(std::move(mask));
    return frame;
}

Volume3 add_noise(const Volume3& frame, double std_dev, std::uint64_t seed) {
    if (!(std_dev >= 0.0)) throw Error(ErrorKind::invalid_config, "noise std must be non-negative");
    Volume3 out = frame;
    if (std_dev == 0.0) return out;
    auto rng = sub_stream(seed, 2);
    std::normal_distribution<double> noise(0.0, std_dev);
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!out.valid(i)) continue;
        out[i] = static_cast<float>(std::clamp(double(out[i]) + noise(rng), 0.0, 255.0));
    }
    return out;
}

std::vector<Pose> perturb_poses(std::span<const Pose> truth, const Grid& lattice, double rot_deg, double trans_vox,
                                std::uint64_t seed) {
    std::vector<Pose> out;
    out.reserve(truth.size());
    for (std::size_t k = 0; k < truth.size(); ++k) {
        auto rng = sub_stream(seed, 3, k);
        out.push_back(draw_motion(rng, lattice, rot_deg, trans_vox, Vec3::Zero()) * truth[k]);
    }
    return out;
}

namespace {

// Fraction of a coarse sample of frame voxels that satisfies pred(world point).
template <typename Pred>
double lattice_fraction(const Grid& lattice, const Frustum& fr, const Pose& pose, Pred pred) {
    const Pose to_world = pose.inverse();
    const auto& d = lattice.dims;
    const int step = std::max(1, std::min({d[0], d[1], d[2]}) / 10);
    std::size_t total = 0, hit = 0;
    for (int z = 0; z < d[2]; z += step)
        for (int y = 0; y < d[1]; y += step)
            for (int x = 0; x < d[0]; x += step) {
                if (!in_frustum(lattice, fr, x, y, z)) continue;
                ++total;
                if (pred(warp(to_world, lattice.to_world(Vec3(x, y, z))))) ++hit;
            }
    return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

} // namespace

GroundTruthSequence simulate_sequence(const Volume3& source, const SimProtocol& protocol,
                                      const std::string& source_id) {
    protocol.validate();
    GroundTruthSequence seq;
    seq.protocol = protocol;
    seq.source_id = source_id;
    const Grid lattice = frame_grid(source, protocol.frame_dims);

    auto inside_source = [&](const Vec3& w) { return sample_trilinear(source, source.grid().to_voxel(w)).has_value(); };
    const StepFilter accept = [&](std::size_t, const Pose& cand, const Pose& prev) {
        if (lattice_fraction(lattice, protocol.frustum, cand, inside_source) < protocol.min_valid_fraction)
            return false;
        auto seen_by_prev = [&](const Vec3& w) {
            const Vec3 v = lattice.to_voxel(warp(prev, w));
            for (int k = 0; k < 3; ++k)
                if (!(v[k] >= 0.0 && v[k] <= lattice.dims[k] - 1.0)) return false;
            return inside_source(w);
        };
        return lattice_fraction(lattice, protocol.frustum, cand, seen_by_prev) >= protocol.min_overlap_fraction;
    };
    seq.truth = sample_trajectory(protocol, protocol.seed, lattice, accept, &seq.retries);
    seq.initial = perturb_poses(seq.truth, lattice, protocol.init_rot_deg, protocol.init_trans_vox, protocol.seed);

    seq.frames.resize(seq.truth.size());
    parallel::for_chunks(seq.truth.size(), [&](int, std::size_t k0, std::size_t k1) {
        for (std::size_t k = k0; k < k1; ++k) {
            const Volume3 clean = extract_frame(source, seq.truth[k], lattice, protocol.frustum);
            seq.frames[k] = add_noise(clean, protocol.noise_std, protocol.seed ^ (0x5bd1e995ull * (k + 1)));
        }
    });
    return seq;
}

} // namespace dsreg
