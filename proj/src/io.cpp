#include "dsreg/io.hpp"

#include "dsreg/error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace dsreg::io {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "raw payloads are written in host order");

namespace {

[[noreturn]] void io_fail(const fs::path& p, const std::string& what) {
    throw Error(ErrorKind::io, p.string() + ": " + what);
}

[[noreturn]] void schema_fail(const std::string& key, const std::string& what) {
    throw Error(ErrorKind::invalid_config, (key.empty() ? std::string("<root>") : key) + ": " + what);
}

std::string join(const std::string& prefix, const std::string& key) {
    return prefix.empty() ? key : prefix + "." + key;
}

void write_bytes(const fs::path& p, const void* data, std::size_t n) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) io_fail(p, "cannot open for writing");
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out) io_fail(p, "write failed");
}

std::vector<char> read_bytes(const fs::path& p, std::size_t expected) {
    std::error_code ec;
    const auto size = fs::file_size(p, ec);
    if (ec) io_fail(p, "cannot stat payload (" + ec.message() + ")");
    if (size != expected) {
        std::ostringstream os;
        os << "payload has " << size << " bytes, header requires " << expected;
        io_fail(p, os.str());
    }
    std::vector<char> buf(expected);
    std::ifstream in(p, std::ios::binary);
    if (!in) io_fail(p, "cannot open for reading");
    in.read(buf.data(), static_cast<std::streamsize>(expected));
    if (!in) io_fail(p, "short read");
    return buf;
}

template <typename T, std::size_t N>
std::array<T, N> get_array(const json& doc, const std::string& key, const fs::path& where) {
    if (!doc.contains(key) || !doc[key].is_array() || doc[key].size() != N)
        io_fail(where, "header field '" + key + "' must be an array of " + std::to_string(N));
    std::array<T, N> out{};
    for (std::size_t i = 0; i < N; ++i) {
        if (!doc[key][i].is_number()) io_fail(where, "header field '" + key + "' must be numeric");
        out[i] = doc[key][i].get<T>();
    }
    return out;
}

} // namespace

void write_json(const fs::path& path, const json& doc) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) io_fail(path, "cannot open for writing");
    out << doc.dump(2) << '\n';
    if (!out) io_fail(path, "write failed");
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) io_fail(path, "cannot open for reading");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        io_fail(path, std::string("malformed JSON: ") + e.what());
    }
}

void write_volume(const fs::path& sidecar, const Volume3& vol, DType dtype) {
    const fs::path dir = sidecar.parent_path();
    const std::string stem = sidecar.stem().string();
    const std::string data_name = stem + ".raw";
    const Grid& g = vol.grid();

    json header;
    header["dims"] = {g.dims[0], g.dims[1], g.dims[2]};
    header["spacing"] = {g.spacing[0], g.spacing[1], g.spacing[2]};
    header["origin"] = {g.origin[0], g.origin[1], g.origin[2]};
    header["dtype"] = dtype == DType::u8 ? "u8" : "f32";
    header["byte_order"] = "little";
    header["data"] = data_name;

    if (dtype == DType::u8) {
        std::vector<std::uint8_t> bytes(vol.size());
        for (std::size_t i = 0; i < vol.size(); ++i) {
            const float v = vol[i];
            if (!(v >= 0.0f && v <= 255.0f) || std::floor(v) != v)
                throw Error(ErrorKind::invalid_input, "u8 output needs integral intensities in [0, 255]");
            bytes[i] = static_cast<std::uint8_t>(v);
        }
        write_bytes(dir / data_name, bytes.data(), bytes.size());
    } else {
        write_bytes(dir / data_name, vol.data().data(), vol.size() * sizeof(float));
    }
    if (vol.has_mask()) {
        const std::string mask_name = stem + "_mask.raw";
        header["mask"] = mask_name;
        write_bytes(dir / mask_name, vol.mask().data(), vol.mask().size());
    }
    write_json(sidecar, header);
}

Volume3 read_volume(const fs::path& sidecar) {
    const json header = read_json(sidecar);
    if (!header.is_object()) io_fail(sidecar, "volume header must be a JSON object");
    static const std::set<std::string> known{"dims", "spacing", "origin", "dtype", "byte_order", "data", "mask"};
    for (const auto& [key, _] : header.items())
        if (!known.contains(key)) io_fail(sidecar, "unknown header field '" + key + "'");

    Grid g;
    g.dims = get_array<int, 3>(header, "dims", sidecar);
    const auto sp = get_array<double, 3>(header, "spacing", sidecar);
    const auto og = get_array<double, 3>(header, "origin", sidecar);
    g.spacing = Vec3(sp[0], sp[1], sp[2]);
    g.origin = Vec3(og[0], og[1], og[2]);
    try {
        g.validate();
    } catch (const Error& e) {
        io_fail(sidecar, e.what());
    }
    const std::string dtype = header.value("dtype", "");
    if (dtype != "u8" && dtype != "f32") io_fail(sidecar, "dtype must be u8 or f32");
    if (header.value("byte_order", "") != "little") io_fail(sidecar, "byte_order must be little");
    if (!header.contains("data") || !header["data"].is_string()) io_fail(sidecar, "missing payload path 'data'");

    const fs::path dir = sidecar.parent_path();
    const std::size_t n = g.size();
    std::vector<float> values(n);
    if (dtype == "u8") {
        const auto raw = read_bytes(dir / header["data"].get<std::string>(), n);
        for (std::size_t i = 0; i < n; ++i) values[i] = static_cast<float>(static_cast<std::uint8_t>(raw[i]));
    } else {
        const auto raw = read_bytes(dir / header["data"].get<std::string>(), n * sizeof(float));
        std::memcpy(values.data(), raw.data(), raw.size());
    }
    Volume3 vol(g, std::move(values));
    if (header.contains("mask")) {
        if (!header["mask"].is_string()) io_fail(sidecar, "'mask' must be a path");
        const auto raw = read_bytes(dir / header["mask"].get<std::string>(), n);
        vol.set_mask(std::vector<std::uint8_t>(raw.begin(), raw.end()));
    }
    return vol;
}

void write_poses(const fs::path& path, std::span<const Pose> poses) {
    json doc;
    doc["convention"] = kPoseConvention;
    doc["poses"] = json::array();
    for (std::size_t k = 0; k < poses.size(); ++k) {
        json p;
        p["frame_id"] = k;
        const Vec6& xi = poses[k].xi();
        p["xi"] = std::vector<double>(xi.data(), xi.data() + 6);
        std::vector<double> T;
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) T.push_back(poses[k].matrix()(r, c));
        p["T"] = T;
        doc["poses"].push_back(p);
    }
    write_json(path, doc);
}

std::vector<Pose> read_poses(const fs::path& path) {
    const json doc = read_json(path);
    if (!doc.is_object() || doc.value("convention", "") != std::string(kPoseConvention))
        io_fail(path, std::string("pose convention must be '") + kPoseConvention + "'");
    if (!doc.contains("poses") || !doc["poses"].is_array()) io_fail(path, "missing 'poses' array");
    std::vector<Pose> out;
    for (const auto& p : doc["poses"]) {
        if (!p.contains("frame_id") || p["frame_id"].get<std::size_t>() != out.size())
            io_fail(path, "poses must be listed by consecutive frame_id starting at 0");
        if (!p.contains("xi") || p["xi"].size() != 6 || !p.contains("T") || p["T"].size() != 16)
            io_fail(path, "each pose needs 6 'xi' values and 16 'T' values");
        Vec6 xi;
        for (int i = 0; i < 6; ++i) xi[i] = p["xi"][static_cast<std::size_t>(i)].get<double>();
        Mat4 T;
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) T(r, c) = p["T"][static_cast<std::size_t>(4 * r + c)].get<double>();
        if ((exp_map(xi) - T).cwiseAbs().maxCoeff() > 1e-9) {
            std::ostringstream os;
            os << "pose " << out.size() << ": T is inconsistent with exp(xi)";
            io_fail(path, os.str());
        }
        out.push_back(Pose::from_parts(xi, T));
    }
    return out;
}

namespace {

// Walks one JSON object, handing out known keys and rejecting the rest.
class ObjectReader {
  public:
    ObjectReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
        if (!obj_.is_object()) schema_fail(path_, "expected an object");
    }

    const json* find(const std::string& key) {
        seen_.insert(key);
        auto it = obj_.find(key);
        return it == obj_.end() ? nullptr : &*it;
    }

    template <typename T>
    void get(const std::string& key, T& out) {
        const json* v = find(key);
        if (!v) return;
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!v->is_boolean()) throw std::invalid_argument("expected a boolean");
            } else if constexpr (std::is_arithmetic_v<T>) {
                if (!v->is_number()) throw std::invalid_argument("expected a number");
                if constexpr (std::is_integral_v<T>)
                    if (!v->is_number_integer()) throw std::invalid_argument("expected an integer");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v->is_string()) throw std::invalid_argument("expected a string");
            }
            out = v->get<T>();
        } catch (const std::exception& e) {
            schema_fail(join(path_, key), e.what());
        }
    }

    template <typename T, std::size_t N>
    void get_array(const std::string& key, std::array<T, N>& out) {
        const json* v = find(key);
        if (!v) return;
        if (!v->is_array() || v->size() != N)
            schema_fail(join(path_, key), "expected an array of " + std::to_string(N) + " numbers");
        for (std::size_t i = 0; i < N; ++i) {
            if (!(*v)[i].is_number()) schema_fail(join(path_, key), "expected numbers");
            out[i] = (*v)[i].get<T>();
        }
    }

    void get_vec3(const std::string& key, Vec3& out) {
        std::array<double, 3> a{out[0], out[1], out[2]};
        get_array(key, a);
        out = Vec3(a[0], a[1], a[2]);
    }

    std::string child(const std::string& key) const { return join(path_, key); }

    void finish() const {
        for (const auto& [key, _] : obj_.items())
            if (!seen_.contains(key)) schema_fail(join(path_, key), "unknown key");
    }

  private:
    const json& obj_;
    std::string path_;
    std::set<std::string> seen_;
};

IntensityPolicy parse_policy(const std::string& s, const std::string& key) {
    if (s == "refuse_each_iteration") return IntensityPolicy::refuse_each_iteration;
    if (s == "evolve") return IntensityPolicy::evolve;
    schema_fail(key, "expected refuse_each_iteration or evolve");
}

GradientSource parse_gradient(const std::string& s, const std::string& key) {
    if (s == "interpolant") return GradientSource::interpolant;
    if (s == "precomputed") return GradientSource::precomputed;
    schema_fail(key, "expected interpolant or precomputed");
}

SequentialInit parse_seq_init(const std::string& s, const std::string& key) {
    if (s == "chained") return SequentialInit::chained;
    if (s == "provided") return SequentialInit::provided;
    schema_fail(key, "expected chained or provided");
}

std::string policy_name(IntensityPolicy p) {
    return p == IntensityPolicy::evolve ? "evolve" : "refuse_each_iteration";
}
std::string gradient_name(GradientSource g) {
    return g == GradientSource::precomputed ? "precomputed" : "interpolant";
}
std::string seq_init_name(SequentialInit s) { return s == SequentialInit::provided ? "provided" : "chained"; }

void read_solver(const json& doc, const std::string& path, SolverConfig& s) {
    ObjectReader r(doc, path);
    std::string text;
    if (r.find("mode")) {
        r.get("mode", text);
        try {
            s.mode = parse_mode(text);
        } catch (const Error& e) {
            schema_fail(r.child("mode"), e.what());
        }
    }
    r.get("max_iters", s.max_iters);
    r.get("pyramid_levels", s.pyramid_levels);
    r.get("rel_tol", s.rel_tol);
    r.get("step_tol", s.step_tol);
    r.get("damping", s.damping);
    r.get("backtracking", s.backtracking);
    r.get("max_halvings", s.max_halvings);
    r.get("skip_singletons", s.skip_singletons);
    r.get("margin_voxels", s.margin_voxels);
    if (r.find("intensity_policy")) {
        r.get("intensity_policy", text);
        s.intensity_policy = parse_policy(text, r.child("intensity_policy"));
    }
    if (r.find("gradient")) {
        r.get("gradient", text);
        s.gradient = parse_gradient(text, r.child("gradient"));
    }
    if (r.find("sequential_init")) {
        r.get("sequential_init", text);
        s.sequential_init = parse_seq_init(text, r.child("sequential_init"));
    }
    if (const json* a = r.find("anchored")) {
        if (!a->is_array()) schema_fail(r.child("anchored"), "expected an array of frame indices");
        s.anchored.clear();
        for (const auto& v : *a) {
            if (!v.is_number_integer()) schema_fail(r.child("anchored"), "expected integers");
            s.anchored.push_back(v.get<int>());
        }
    }
    r.finish();
    try {
        s.validate();
    } catch (const Error& e) {
        schema_fail(path, e.what());
    }
}

void read_simulation(const json& doc, const std::string& path, SimProtocol& p) {
    ObjectReader r(doc, path);
    r.get("n_frames", p.n_frames);
    r.get("rot_range_deg", p.rot_range_deg);
    r.get("trans_range_vox", p.trans_range_vox);
    r.get("noise_std", p.noise_std);
    r.get_array("frame_dims", p.frame_dims);
    if (const json* f = r.find("frustum")) {
        ObjectReader fr(*f, r.child("frustum"));
        fr.get("enabled", p.frustum.enabled);
        fr.get("half_angle_deg", p.frustum.half_angle_deg);
        fr.finish();
    }
    r.get_vec3("sweep_vox", p.sweep_vox);
    r.get("min_valid_fraction", p.min_valid_fraction);
    r.get("min_overlap_fraction", p.min_overlap_fraction);
    r.get("max_attempts", p.max_attempts);
    r.get("init_rot_deg", p.init_rot_deg);
    r.get("init_trans_vox", p.init_trans_vox);
    r.finish();
    try {
        p.validate();
    } catch (const Error& e) {
        schema_fail(path, e.what());
    }
}

} // namespace

RunConfig parse_run_config(const json& doc) {
    RunConfig cfg;
    ObjectReader root(doc, "");
    root.get("seed", cfg.seed);
    root.get("threads", cfg.threads);
    if (cfg.threads < 0) schema_fail("threads", "must be non-negative");
    if (const json* s = root.find("solver")) read_solver(*s, "solver", cfg.solver);
    if (const json* s = root.find("simulation")) read_simulation(*s, "simulation", cfg.simulation);
    if (const json* ph = root.find("phantom")) {
        ObjectReader r(*ph, "phantom");
        std::string kind;
        if (r.find("kind")) {
            r.get("kind", kind);
            try {
                cfg.phantom.kind = parse_phantom(kind);
            } catch (const Error& e) {
                schema_fail("phantom.kind", e.what());
            }
        }
        r.get_array("dims", cfg.phantom.dims);
        r.finish();
        for (int d : cfg.phantom.dims)
            if (d < 16) schema_fail("phantom.dims", "phantom needs at least 16 voxels per axis");
    }
    if (const json* p = root.find("paths")) {
        ObjectReader r(*p, "paths");
        auto path_of = [&](const std::string& key, std::optional<fs::path>& out) {
            std::string v;
            if (!r.find(key)) return;
            r.get(key, v);
            out = fs::path(v);
        };
        path_of("frames", cfg.paths.frames);
        path_of("init", cfg.paths.init);
        path_of("out", cfg.paths.out);
        r.finish();
    }
    root.finish();
    cfg.simulation.seed = cfg.seed;
    return cfg;
}

RunConfig load_run_config(const fs::path& path) {
    const json doc = read_json(path);
    try {
        return parse_run_config(doc);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::invalid_config) throw;
        throw Error(ErrorKind::invalid_config, path.string() + ": " + e.what());
    }
}

json to_json(const RunConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    const auto& s = c.solver;
    j["solver"] = {{"mode", to_string(s.mode)},
                   {"max_iters", s.max_iters},
                   {"pyramid_levels", s.pyramid_levels},
                   {"rel_tol", s.rel_tol},
                   {"step_tol", s.step_tol},
                   {"damping", s.damping},
                   {"backtracking", s.backtracking},
                   {"max_halvings", s.max_halvings},
                   {"skip_singletons", s.skip_singletons},
                   {"intensity_policy", policy_name(s.intensity_policy)},
                   {"gradient", gradient_name(s.gradient)},
                   {"sequential_init", seq_init_name(s.sequential_init)},
                   {"margin_voxels", s.margin_voxels},
                   {"anchored", s.anchored}};
    const auto& p = c.simulation;
    j["simulation"] = {{"n_frames", p.n_frames},
                       {"rot_range_deg", p.rot_range_deg},
                       {"trans_range_vox", p.trans_range_vox},
                       {"noise_std", p.noise_std},
                       {"frame_dims", p.frame_dims},
                       {"frustum", {{"enabled", p.frustum.enabled}, {"half_angle_deg", p.frustum.half_angle_deg}}},
                       {"sweep_vox", {p.sweep_vox[0], p.sweep_vox[1], p.sweep_vox[2]}},
                       {"min_valid_fraction", p.min_valid_fraction},
                       {"min_overlap_fraction", p.min_overlap_fraction},
                       {"max_attempts", p.max_attempts},
                       {"init_rot_deg", p.init_rot_deg},
                       {"init_trans_vox", p.init_trans_vox}};
    j["phantom"] = {{"kind", to_string(c.phantom.kind)}, {"dims", c.phantom.dims}};
    return j;
}

json to_json(const Grid& g) {
    return {{"dims", {g.dims[0], g.dims[1], g.dims[2]}},
            {"spacing", {g.spacing[0], g.spacing[1], g.spacing[2]}},
            {"origin", {g.origin[0], g.origin[1], g.origin[2]}}};
}

json to_json(const SolveReport& r) {
    json j;
    j["mode"] = to_string(r.mode);
    j["termination"] = to_string(r.termination);
    j["final_objective"] = r.final_objective;
    j["pose_convention"] = kPoseConvention;
    j["grid"] = to_json(r.grid.grid);
    j["grid"]["margin_voxels"] = r.grid.margin_voxels;
    j["iterations"] = json::array();
    for (const auto& it : r.iterations) {
        json row{{"level", it.level},
                 {"iteration", it.iteration},
                 {"frame", it.frame},
                 {"objective", it.objective},
                 {"profiled_objective", it.profiled_objective},
                 {"step_norm", it.step_norm},
                 {"step_scale", it.step_scale},
                 {"projection_residual", it.projection_residual},
                 {"observations", it.observations},
                 {"active_voxels", it.active_voxels}};
        json poses = json::array();
        for (const auto& xi : it.poses) poses.push_back(std::vector<double>(xi.data(), xi.data() + 6));
        row["poses"] = poses;
        j["iterations"].push_back(row);
    }
    return j;
}

json to_json(const PoseErrorSummary& s) {
    json j;
    j["mae_translation_vox"] = s.mae_translation;
    j["mae_rotation_rad"] = s.mae_rotation;
    j["alignment_convention"] = s.alignment_convention;
    j["euler_convention"] = s.euler_convention;
    j["translation_units"] = "panorama voxels";
    return j;
}

json to_json(const FovGainReport& f) {
    return {{"fused_voxel_count", f.fused_voxel_count},
            {"single_frame_voxel_count", f.single_frame_voxel_count},
            {"ratio", f.ratio}};
}

void write_errors_csv(const fs::path& path, const PoseErrorSummary& s) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) io_fail(path, "cannot open for writing");
    out << "# euler: " << s.euler_convention << "; translation: panorama voxels; " << s.alignment_convention << '\n';
    out << "frame,tx,ty,tz,yaw,pitch,roll\n";
    out.precision(17);
    for (std::size_t k = 0; k < s.translation_errors.size(); ++k) {
        const Vec3& t = s.translation_errors[k];
        const Vec3& r = s.rotation_errors[k];
        out << k << ',' << t[0] << ',' << t[1] << ',' << t[2] << ',' << r[0] << ',' << r[1] << ',' << r[2] << '\n';
    }
    if (!out) io_fail(path, "write failed");
}

SequenceFiles scan_sequence(const fs::path& dir) {
    if (!fs::is_directory(dir)) io_fail(dir, "not a directory");
    SequenceFiles files;
    const fs::path manifest = dir / "manifest.json";
    if (fs::exists(manifest)) {
        const json doc = read_json(manifest);
        if (!doc.contains("frames") || !doc["frames"].is_array()) io_fail(manifest, "missing 'frames' list");
        for (const auto& f : doc["frames"]) files.frames.push_back(dir / f.get<std::string>());
        if (doc.contains("truth")) files.truth = dir / doc["truth"].get<std::string>();
        if (doc.contains("initial")) files.initial = dir / doc["initial"].get<std::string>();
    } else {
        for (const auto& entry : fs::directory_iterator(dir)) {
            const std::string name = entry.path().filename().string();
            if (name.rfind("frame_", 0) == 0 && entry.path().extension() == ".json") files.frames.push_back(entry.path());
        }
        std::sort(files.frames.begin(), files.frames.end());
    }
    if (files.frames.empty()) io_fail(dir, "no frames found");
    return files;
}

std::vector<Volume3> read_frames(const SequenceFiles& files) {
    std::vector<Volume3> frames;
    frames.reserve(files.frames.size());
    for (const auto& f : files.frames) frames.push_back(read_volume(f));
    return frames;
}

void write_sequence(const fs::path& dir, const GroundTruthSequence& seq, const RunConfig& config) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) io_fail(dir, "cannot create directory (" + ec.message() + ")");
    json manifest;
    manifest["frames"] = json::array();
    for (std::size_t k = 0; k < seq.frames.size(); ++k) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%03zu.json", k);
        write_volume(dir / name, seq.frames[k]);
        manifest["frames"].push_back(name);
    }
    write_poses(dir / "truth_poses.json", seq.truth);
    write_poses(dir / "initial_poses.json", seq.initial);
    manifest["truth"] = "truth_poses.json";
    manifest["initial"] = "initial_poses.json";
    manifest["seed"] = seq.protocol.seed;
    manifest["source_id"] = seq.source_id;
    manifest["trajectory_retries"] = seq.retries;
    manifest["config"] = to_json(config);
    write_json(dir / "manifest.json", manifest);
}

} // namespace dsreg::io
