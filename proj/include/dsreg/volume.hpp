#pragma once

#include "dsreg/se3.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace dsreg {

// Voxel lattice geometry. Voxel (x, y, z) sits at world position
// origin + spacing .* (x, y, z); storage is x-fastest.
struct Grid {
    std::array<int, 3> dims{1, 1, 1};
    Vec3 spacing = Vec3::Ones();
    Vec3 origin = Vec3::Zero();

    std::size_t size() const {
        return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
               static_cast<std::size_t>(dims[2]);
    }
    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(dims[0]) *
                   (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(z));
    }
    std::array<int, 3> coords(std::size_t idx) const;
    Vec3 to_world(const Vec3& voxel) const { return origin + spacing.cwiseProduct(voxel); }
    Vec3 to_voxel(const Vec3& world) const { return (world - origin).cwiseQuotient(spacing); }

    // Throws ErrorKind::invalid_volume on non-positive dims or spacing.
    void validate() const;

    bool operator==(const Grid&) const = default;
};

// Scalar 3D image with an optional per-voxel validity mask (1 = valid). An
// empty mask means every voxel is valid.
class Volume3 {
  public:
    Volume3() = default;
    explicit Volume3(const Grid& grid, float fill = 0.0f);
    Volume3(const Grid& grid, std::vector<float> data);

    const Grid& grid() const { return grid_; }
    const std::array<int, 3>& dims() const { return grid_.dims; }
    std::size_t size() const { return data_.size(); }

    float at(int x, int y, int z) const { return data_[grid_.index(x, y, z)]; }
    float& at(int x, int y, int z) { return data_[grid_.index(x, y, z)]; }
    float operator[](std::size_t i) const { return data_[i]; }
    float& operator[](std::size_t i) { return data_[i]; }

    std::span<const float> data() const { return data_; }
    std::span<float> data() { return data_; }

    bool has_mask() const { return !mask_.empty(); }
    const std::vector<std::uint8_t>& mask() const { return mask_; }
    void set_mask(std::vector<std::uint8_t> mask);
    void clear_mask() { mask_.clear(); }
    bool valid(std::size_t i) const { return mask_.empty() || mask_[i] != 0; }
    std::size_t valid_count() const;

  private:
    Grid grid_;
    std::vector<float> data_;
    std::vector<std::uint8_t> mask_;
};

// Precomputed intensity gradient, in intensity units per voxel along each axis.
struct GradientField {
    Grid grid;
    std::vector<float> gx, gy, gz;
};

struct PanoramaGrid {
    Grid grid;
    int margin_voxels = 2;
};

struct FusedVolume {
    Volume3 intensity;
    Volume3 counts;
};

// Continuous voxel coordinates; nullopt when p is outside [0, dims-1] on any axis.
std::optional<double> sample_trilinear(const Volume3& vol, const Vec3& p);

// Intensity plus the exact derivative of the trilinear interpolant (per voxel).
struct SampleWithGradient {
    double value;
    Vec3 gradient;
};
std::optional<SampleWithGradient> sample_with_gradient(const Volume3& vol, const Vec3& p);

// Central differences in the interior, one-sided differences at faces and
// next to masked-out voxels.
GradientField gradient_field(const Volume3& vol);
std::optional<Vec3> sample_gradient(const GradientField& gf, const Vec3& p);

// Level 0 is the input; each further level applies the (1/4, 1/2, 1/4) kernel
// along every axis (edge-clamped) and keeps every second voxel. A coarse voxel
// is valid only if its whole 3x3x3 footprint was valid.
std::vector<Volume3> build_pyramid(const Volume3& vol, int levels);
Volume3 downsample(const Volume3& vol);

// Bounding box of every frame's corners mapped into the world by the inverse of
// its pose, padded by margin voxels, with frames[0]'s spacing.
PanoramaGrid make_panorama_grid(std::span<const Volume3> frames, std::span<const Pose> poses,
                                int margin_voxels = 2);
// Grid for pyramid level `level`: same origin, spacing scaled by 2^level.
Grid coarsen_grid(const Grid& fine, int level);

// Mean over observing frames per grid voxel; unobserved voxels hold 0 with count 0.
FusedVolume fuse(std::span<const Volume3> frames, std::span<const Pose> poses, const Grid& grid);

} // namespace dsreg
