#pragma once

#include "dsreg/evaluation.hpp"
#include "dsreg/simulator.hpp"
#include "dsreg/solver.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dsreg::io {

namespace fs = std::filesystem;

enum class DType { u8, f32 };

// Volume files are a JSON sidecar plus a little-endian raw payload (x fastest)
// next to it:
//   { "dims": [nx, ny, nz], "spacing": [..], "origin": [..], "dtype": "f32",
//     "byte_order": "little", "data": "<stem>.raw", "mask": "<stem>_mask.raw" }
// "mask" is present only for volumes with a validity mask (u8, 1 = valid).
// u8 output requires integral intensities in [0, 255].
void write_volume(const fs::path& sidecar, const Volume3& vol, DType dtype = DType::f32);
Volume3 read_volume(const fs::path& sidecar);

// { "convention": "...", "poses": [ { "frame_id": k, "xi": [6], "T": [16 row-major] } ] }
void write_poses(const fs::path& path, std::span<const Pose> poses);
std::vector<Pose> read_poses(const fs::path& path);

struct PhantomSpec {
    PhantomKind kind = PhantomKind::smooth_blobs;
    std::array<int, 3> dims{64, 64, 64};
};

struct Paths {
    std::optional<fs::path> frames, init, out;
};

struct RunConfig {
    SolverConfig solver;
    SimProtocol simulation;
    PhantomSpec phantom;
    Paths paths;
    std::uint64_t seed = 1;
    int threads = 0;
};

// Rejects unknown keys (reporting their dotted path) and invalid values with
// ErrorKind::invalid_config.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const fs::path& path);
nlohmann::json to_json(const RunConfig& config);

nlohmann::json to_json(const SolveReport& report);
nlohmann::json to_json(const PoseErrorSummary& summary);
nlohmann::json to_json(const FovGainReport& fov);
nlohmann::json to_json(const Grid& grid);

void write_errors_csv(const fs::path& path, const PoseErrorSummary& summary);

// Sequence directory written by `simulate`.
struct SequenceFiles {
    std::vector<fs::path> frames;
    std::optional<fs::path> truth, initial;
};
SequenceFiles scan_sequence(const fs::path& dir);
std::vector<Volume3> read_frames(const SequenceFiles& files);
void write_sequence(const fs::path& dir, const GroundTruthSequence& seq, const RunConfig& config);

void write_json(const fs::path& path, const nlohmann::json& doc);
nlohmann::json read_json(const fs::path& path);

} // namespace dsreg::io
