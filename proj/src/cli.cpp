#include "dsreg/cli.hpp"

#include "dsreg/error.hpp"
#include "dsreg/evaluation.hpp"
#include "dsreg/io.hpp"
#include "dsreg/parallel.hpp"
#include "dsreg/simulator.hpp"
#include "dsreg/solver.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <unistd.h>

namespace dsreg::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool color_errors() { return std::getenv("NO_COLOR") == nullptr && ::isatty(STDERR_FILENO); }

void report_error(const std::string& msg) {
    if (color_errors())
        std::cerr << "\033[1;31merror:\033[0m " << msg << '\n';
    else
        std::cerr << "error: " << msg << '\n';
}

int exit_code_for(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::no_overlap: return exit_no_overlap;
    case ErrorKind::invalid_input:
    case ErrorKind::invalid_config: return exit_invalid_input;
    case ErrorKind::io: return exit_io;
    case ErrorKind::gauge_underdetermined: return exit_gauge;
    case ErrorKind::invalid_volume: return exit_invalid_volume;
    }
    return exit_other;
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::io, dir.string() + ": cannot create directory (" + ec.message() + ")");
}

struct SimulateArgs {
    std::optional<fs::path> config;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::optional<fs::path> out;
};

int cmd_simulate(const SimulateArgs& a) {
    io::RunConfig cfg = a.config ? io::load_run_config(*a.config) : io::RunConfig{};
    if (a.seed) cfg.seed = *a.seed;
    cfg.simulation.seed = cfg.seed;
    if (a.threads) cfg.threads = *a.threads;
    parallel::set_threads(cfg.threads);
    const auto out = a.out ? a.out : cfg.paths.out;
    if (!out) throw Error(ErrorKind::invalid_config, "simulate needs --out or paths.out");

    const Volume3 source = make_phantom(cfg.phantom.dims, cfg.phantom.kind, cfg.seed);
    const std::string source_id = to_string(cfg.phantom.kind) + "-" + std::to_string(cfg.phantom.dims[0]) + "x" +
                                  std::to_string(cfg.phantom.dims[1]) + "x" + std::to_string(cfg.phantom.dims[2]) +
                                  "-seed" + std::to_string(cfg.seed);
    const GroundTruthSequence seq = simulate_sequence(source, cfg.simulation, source_id);
    io::write_sequence(*out, seq, cfg);
    std::cout << "wrote " << seq.frames.size() << " frames to " << out->string() << '\n';
    return exit_converged;
}

struct RegisterArgs {
    std::string mode;
    std::optional<fs::path> frames, init, config, out, fused;
    std::optional<int> threads, levels, max_iters;
};

int cmd_register(const RegisterArgs& a) {
    io::RunConfig cfg = a.config ? io::load_run_config(*a.config) : io::RunConfig{};
    if (!a.mode.empty()) cfg.solver.mode = parse_mode(a.mode);
    if (a.threads) cfg.threads = *a.threads;
    if (a.levels) cfg.solver.pyramid_levels = *a.levels;
    if (a.max_iters) cfg.solver.max_iters = *a.max_iters;
    cfg.solver.validate();
    parallel::set_threads(cfg.threads);

    const auto frames_dir = a.frames ? a.frames : cfg.paths.frames;
    if (!frames_dir) throw Error(ErrorKind::invalid_config, "register needs --frames or paths.frames");
    const auto out = a.out ? a.out : cfg.paths.out;
    if (!out) throw Error(ErrorKind::invalid_config, "register needs --out or paths.out");

    const io::SequenceFiles files = io::scan_sequence(*frames_dir);
    auto init_path = a.init ? a.init : cfg.paths.init;
    if (!init_path) init_path = files.initial;
    if (!init_path) throw Error(ErrorKind::invalid_config, "register needs --init or paths.init");

    const std::vector<Volume3> frames = io::read_frames(files);
    const std::vector<Pose> initial = io::read_poses(*init_path);
    if (frames.size() < 2) throw Error(ErrorKind::invalid_input, "register needs at least two frames");
    if (initial.size() != frames.size())
        throw Error(ErrorKind::invalid_input, "initial pose count does not match frame count");

    const auto t0 = std::chrono::steady_clock::now();
    const SolveReport report = solve(frames, initial, cfg.solver);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    ensure_dir(*out);
    io::write_poses(*out / "poses.json", report.poses);
    io::write_json(*out / "report.json", io::to_json(report));
    json timing{{"seconds", seconds}, {"threads", parallel::threads()}};
    timing["iteration_seconds"] = json::array();
    for (const auto& it : report.iterations) timing["iteration_seconds"].push_back(it.seconds);
    io::write_json(*out / "timing.json", timing);
    if (a.fused) {
        ensure_dir(*a.fused);
        io::write_volume(*a.fused / "fused.json", report.fused.intensity);
        io::write_volume(*a.fused / "counts.json", report.fused.counts);
    }
    std::cout << to_string(report.mode) << ": " << to_string(report.termination)
              << ", objective " << report.final_objective << '\n';
    return report.termination == Termination::max_iterations ? exit_max_iterations : exit_converged;
}

struct EvaluateArgs {
    fs::path estimated, truth, frames, out;
    std::optional<fs::path> summary;
    std::string label;
    std::optional<int> threads;
};

int cmd_evaluate(const EvaluateArgs& a) {
    if (a.threads) parallel::set_threads(*a.threads);
    const std::vector<Pose> est = io::read_poses(a.estimated);
    const std::vector<Pose> truth = io::read_poses(a.truth);
    const std::vector<Volume3> frames = io::read_frames(io::scan_sequence(a.frames));
    if (est.size() != truth.size() || est.size() != frames.size())
        throw Error(ErrorKind::invalid_input, "estimated, truth and frame counts differ");

    const PanoramaGrid truth_grid = make_panorama_grid(frames, truth);
    const PoseErrorSummary errors = pose_errors(est, truth, truth_grid.grid.spacing);
    const PanoramaGrid est_grid = make_panorama_grid(frames, est);
    const double objective = objective_of(frames, est, est_grid.grid);
    const FusedVolume fused = fuse(frames, est, est_grid.grid);
    const FovGainReport fov = fov_gain(fused.counts, frames.front());

    ensure_dir(a.out);
    io::write_errors_csv(a.out / "errors.csv", errors);
    json summary = io::to_json(errors);
    summary["objective"] = objective;
    summary["fov_gain"] = io::to_json(fov);
    if (!a.label.empty()) summary["label"] = a.label;
    io::write_json(a.out / "summary.json", summary);

    if (a.summary) {
        const bool fresh = !fs::exists(*a.summary) || fs::file_size(*a.summary) == 0;
        std::ofstream csv(*a.summary, std::ios::app);
        if (!csv) throw Error(ErrorKind::io, a.summary->string() + ": cannot open for appending");
        if (fresh) csv << "label,mae_translation_vox,mae_rotation_rad,objective,fov_ratio\n";
        csv.precision(17);
        csv << a.label << ',' << errors.mae_translation << ',' << errors.mae_rotation << ',' << objective << ','
            << fov.ratio << '\n';
    }
    std::cout << "MAE translation " << errors.mae_translation << " vox, rotation " << errors.mae_rotation
              << " rad\n";
    return exit_converged;
}

struct FuseArgs {
    fs::path frames, poses, out;
    std::optional<int> threads;
};

int cmd_fuse(const FuseArgs& a) {
    if (a.threads) parallel::set_threads(*a.threads);
    const std::vector<Volume3> frames = io::read_frames(io::scan_sequence(a.frames));
    const std::vector<Pose> poses = io::read_poses(a.poses);
    if (poses.size() != frames.size()) throw Error(ErrorKind::invalid_input, "pose count does not match frame count");
    const PanoramaGrid grid = make_panorama_grid(frames, poses);
    const FusedVolume fused = fuse(frames, poses, grid.grid);
    std::size_t covered = 0;
    for (std::size_t i = 0; i < fused.counts.size(); ++i) covered += fused.counts[i] > 0.0f;
    if (covered == 0) throw Error(ErrorKind::no_overlap, "no panorama voxel is observed");
    ensure_dir(a.out);
    io::write_volume(a.out / "fused.json", fused.intensity);
    io::write_volume(a.out / "counts.json", fused.counts);
    std::cout << "fused " << frames.size() << " frames, " << covered << " voxels covered\n";
    return exit_converged;
}

} // namespace

int run(int argc, char** argv) {
    CLI::App app{"Groupwise rigid registration of 3D volumes"};
    app.require_subcommand(1);

    SimulateArgs sim;
    auto* simulate = app.add_subcommand("simulate", "Generate a synthetic sequence with ground-truth poses");
    simulate->add_option("--config", sim.config, "Run configuration (JSON)")->check(CLI::ExistingFile);
    simulate->add_option("--seed", sim.seed, "Override the configuration seed");
    simulate->add_option("--threads", sim.threads, "Worker threads (0 = hardware)");
    simulate->add_option("--out", sim.out, "Output sequence directory");

    RegisterArgs reg;
    auto* registration = app.add_subcommand("register", "Estimate frame poses");
    registration->add_option("--mode", reg.mode, "dsr, dba or sequential")
        ->check(CLI::IsMember({"dsr", "dba", "sequential"}));
    registration->add_option("--frames", reg.frames, "Sequence directory");
    registration->add_option("--init", reg.init, "Initial pose file (defaults to the sequence's)");
    registration->add_option("--config", reg.config, "Run configuration (JSON)")->check(CLI::ExistingFile);
    registration->add_option("--threads", reg.threads, "Worker threads (0 = hardware)");
    registration->add_option("--levels", reg.levels, "Pyramid levels");
    registration->add_option("--max-iters", reg.max_iters, "Iterations per pyramid level");
    registration->add_option("--out", reg.out, "Output directory for poses.json and report.json");
    registration->add_option("--fused", reg.fused, "Also write the fused panorama to this directory");

    EvaluateArgs ev;
    auto* evaluate = app.add_subcommand("evaluate", "Compare estimated poses with ground truth");
    evaluate->add_option("--estimated", ev.estimated, "Estimated pose file")->required();
    evaluate->add_option("--truth", ev.truth, "Ground-truth pose file")->required();
    evaluate->add_option("--frames", ev.frames, "Sequence directory")->required();
    evaluate->add_option("--out", ev.out, "Output directory for errors.csv and summary.json")->required();
    evaluate->add_option("--summary", ev.summary, "Append a row to this CSV table");
    evaluate->add_option("--label", ev.label, "Row label for --summary");
    evaluate->add_option("--threads", ev.threads, "Worker threads (0 = hardware)");

    FuseArgs fu;
    auto* fusion = app.add_subcommand("fuse", "Mean-fuse frames on the panorama grid");
    fusion->add_option("--frames", fu.frames, "Sequence directory")->required();
    fusion->add_option("--poses", fu.poses, "Pose file")->required();
    fusion->add_option("--out", fu.out, "Output directory")->required();
    fusion->add_option("--threads", fu.threads, "Worker threads (0 = hardware)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : exit_invalid_input;
    }

    try {
        if (*simulate) return cmd_simulate(sim);
        if (*registration) return cmd_register(reg);
        if (*evaluate) return cmd_evaluate(ev);
        if (*fusion) return cmd_fuse(fu);
    } catch (const Error& e) {
        report_error(std::string(to_string(e.kind())) + ": " + e.what());
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        report_error(e.what());
        return exit_other;
    }
    return exit_other;
}

} // namespace dsreg::cli
