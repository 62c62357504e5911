#include "dsreg/cli.hpp"
#include "dsreg/io.hpp"

#include "scratch_dir.hpp"

#include <doctest.h>

#include <fstream>
#include <initializer_list>
#include <sstream>

using namespace dsreg;
using namespace dsreg::testing;
namespace fs = std::filesystem;

namespace {

int run_cli(std::initializer_list<std::string> args) {
    std::vector<std::string> store{"dsreg"};
    store.insert(store.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& s : store) argv.push_back(s.data());
    return cli::run(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

bool same_tree(const fs::path& a, const fs::path& b) {
    std::vector<fs::path> fa, fb;
    for (const auto& e : fs::directory_iterator(a)) fa.push_back(e.path().filename());
    for (const auto& e : fs::directory_iterator(b)) fb.push_back(e.path().filename());
    std::sort(fa.begin(), fa.end());
    std::sort(fb.begin(), fb.end());
    if (fa != fb) return false;
    for (const auto& f : fa)
        if (slurp(a / f) != slurp(b / f)) return false;
    return true;
}

fs::path small_config(const ScratchDir& dir, const std::string& extra_sim = "") {
    const fs::path p = dir / "config.json";
    std::ofstream out(p);
    out << R"({"seed": 5, "phantom": {"dims": [32, 32, 32]},
      "solver": {"pyramid_levels": 2},
      "simulation": {"n_frames": 3, "frame_dims": [20, 20, 20], "rot_range_deg": 4.0,
                     "trans_range_vox": 3.0, "noise_std": 10.0, "init_rot_deg": 2.0,
                     "init_trans_vox": 2.0)"
        << extra_sim << "}}";
    return p;
}

} // namespace

TEST_CASE("simulate is byte-for-byte reproducible") {
    ScratchDir dir("cli");
    const auto cfg = small_config(dir);
    REQUIRE(run_cli({"simulate", "--config", cfg.string(), "--out", (dir / "a").string()}) == 0);
    REQUIRE(run_cli({"simulate", "--config", cfg.string(), "--out", (dir / "b").string()}) == 0);
    CHECK(same_tree(dir / "a", dir / "b"));
    // The manifest records the thread count; the data must not depend on it.
    REQUIRE(run_cli({"simulate", "--config", cfg.string(), "--out", (dir / "t").string(), "--threads", "3"}) == 0);
    for (const char* f : {"frame_000.raw", "frame_002.raw", "frame_002_mask.raw", "truth_poses.json"})
        if (fs::exists(dir / "a" / f)) CHECK(slurp(dir / "a" / f) == slurp(dir / "t" / f));
    REQUIRE(run_cli({"simulate", "--config", cfg.string(), "--out", (dir / "c").string(), "--seed", "6"}) == 0);
    CHECK(!same_tree(dir / "a", dir / "c"));
}

TEST_CASE("still sequence without noise repeats the first frame") {
    ScratchDir dir("cli");
    const auto cfg = dir / "still.json";
    std::ofstream(cfg) << R"({"phantom": {"dims": [24, 24, 24]},
      "simulation": {"n_frames": 2, "frame_dims": [16, 16, 16], "rot_range_deg": 0, "trans_range_vox": 0,
                     "noise_std": 0, "init_rot_deg": 0, "init_trans_vox": 0}})";
    REQUIRE(run_cli({"simulate", "--config", cfg.string(), "--out", (dir / "s").string()}) == 0);
    CHECK(slurp(dir / "s" / "frame_000.raw") == slurp(dir / "s" / "frame_001.raw"));
}

TEST_CASE("register, evaluate and fuse agree on coverage") {
    ScratchDir dir("cli");
    const auto cfg = small_config(dir);
    const auto seq = dir / "seq";
    REQUIRE(run_cli({"simulate", "--config", cfg.string(), "--out", seq.string()}) == 0);

    const auto reg1 = dir / "r1", reg2 = dir / "r2";
    const int rc = run_cli({"register", "--mode", "dsr", "--frames", seq.string(), "--config", cfg.string(),
                            "--threads", "1", "--out", reg1.string()});
    CHECK((rc == 0 || rc == 2));
    REQUIRE(fs::exists(reg1 / "poses.json"));
    REQUIRE(fs::exists(reg1 / "report.json"));
    CHECK(run_cli({"register", "--mode", "dsr", "--frames", seq.string(), "--config", cfg.string(), "--threads",
                   "1", "--out", reg2.string()}) == rc);
    CHECK(slurp(reg1 / "poses.json") == slurp(reg2 / "poses.json"));
    CHECK(slurp(reg1 / "report.json") == slurp(reg2 / "report.json"));

    const auto truth = seq / "truth_poses.json";
    REQUIRE(run_cli({"evaluate", "--estimated", truth.string(), "--truth", truth.string(), "--frames",
                     seq.string(), "--out", (dir / "ev").string()}) == 0);
    const auto summary = io::read_json(dir / "ev" / "summary.json");
    CHECK(summary["mae_translation_vox"].get<double>() < 1e-9);

    REQUIRE(run_cli({"fuse", "--frames", seq.string(), "--poses", truth.string(), "--out",
                     (dir / "fu").string()}) == 0);
    const Volume3 counts = io::read_volume(dir / "fu" / "counts.json");
    const Volume3 frame0 = io::read_volume(seq / "frame_000.json");
    std::size_t covered = 0;
    for (float c : counts.data()) covered += c >= 1.0f;
    const double ratio = static_cast<double>(covered) / static_cast<double>(frame0.valid_count());
    CHECK(ratio == summary["fov_gain"]["ratio"].get<double>());
}

TEST_CASE("exit codes") {
    ScratchDir dir("cli");
    CHECK(run_cli({}) == cli::exit_invalid_input);
    CHECK(run_cli({"register", "--mode", "fastest"}) == cli::exit_invalid_input);
    CHECK(run_cli({"fuse", "--frames", (dir / "none").string(), "--poses", "p.json", "--out", "o"}) == cli::exit_io);

    const auto bad = dir / "bad.json";
    std::ofstream(bad) << R"({"solver": {"levels": 3}})";
    CHECK(run_cli({"simulate", "--config", bad.string(), "--out", (dir / "x").string()}) == cli::exit_invalid_input);

    const auto cfg = small_config(dir);
    const auto seq = dir / "seq";
    REQUIRE(run_cli({"simulate", "--config", cfg.string(), "--out", seq.string()}) == 0);
    CHECK(run_cli({"register", "--mode", "dsr", "--frames", seq.string(), "--config", cfg.string(), "--levels", "1",
                   "--max-iters", "1", "--out", (dir / "r").string()}) == cli::exit_max_iterations);

    // Initial poses that leave the frames far apart share no panorama voxel.
    std::vector<Pose> apart(3);
    for (int k = 0; k < 3; ++k) {
        Vec6 xi = Vec6::Zero();
        xi[0] = 100.0 * k;
        apart[static_cast<std::size_t>(k)] = Pose(xi);
    }
    io::write_poses(dir / "apart.json", apart);
    CHECK(run_cli({"register", "--mode", "dba", "--frames", seq.string(), "--init", (dir / "apart.json").string(),
                   "--out", (dir / "r2").string()}) == cli::exit_no_overlap);
}
