#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

const std::string kCli = Q4DG_CLI_PATH;

int run(const std::string& args) {
    const std::string cmd = kCli + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& sub) const { return (path / sub).string(); }
};

void write_micro_config(const std::string& path) {
    std::ofstream os(path);
    os << R"({
  "schema_version": 1,
  "model": {"dim": 8, "heads": 2, "layers": 1, "window": 3,
            "dec_c0": 6, "dec_c1": 5, "dense_dim": 4},
  "train": {"track_l2": true},
  "scene": {"views": 1, "times": 3, "height": 16, "width": 16,
            "setting": "mono-d", "query_count": 4}
})";
}

}  // namespace

TEST_CASE("help and usage errors") {
    CHECK(run("--help") == 0);
    CHECK(run("train --help") == 0);
    CHECK(run("") == 1);                      // missing subcommand
    CHECK(run("frobnicate") == 1);            // unknown subcommand
    CHECK(run("train") == 1);                 // missing required flags
    CHECK(run("dump-masks --views 1 --times 1 --patches 1 --window 1 "
              "--setting nope --kind spatial --out /dev/null") == 1);
}

TEST_CASE("dump-masks writes the documented text format") {
    TempDir dir("q4dg_cli_masks");
    const auto out = dir / "m.txt";
    REQUIRE(run("dump-masks --views 1 --times 1 --patches 1 --window 1 "
                "--setting mono-s --kind temporal --out " + out) == 0);
    CHECK(slurp(out) == "1 1 1 1 mono-s temporal\n1\n");

    REQUIRE(run("dump-masks --views 2 --times 2 --patches 1 --window 1 "
                "--setting multi-s --kind spatial --out " + out) == 0);
    CHECK(slurp(out) == "2 2 1 0 multi-s spatial\n1010\n0101\n1010\n0101\n");

    // even window violates an argument precondition: usage error, exit code 1
    CHECK(run("dump-masks --views 1 --times 2 --patches 1 --window 2 "
              "--setting mono-s --kind temporal --out " + out) == 1);
}

TEST_CASE("gen-data is deterministic and train/eval/infer chain works") {
    TempDir dir("q4dg_cli_chain");
    const auto cfg = dir / "cfg.json";
    write_micro_config(cfg);

    REQUIRE(run("gen-data --config " + cfg + " --out " + dir / "d1" + " --seed 5 --count 1") == 0);
    REQUIRE(run("gen-data --config " + cfg + " --out " + dir / "d2" + " --seed 5 --count 1") == 0);
    CHECK(slurp(dir / "d1/scene_000/arrays.q4dg") == slurp(dir / "d2/scene_000/arrays.q4dg"));
    CHECK(fs::exists(dir / "d1/resolved_config.json"));
    CHECK(fs::exists(dir / "d1/scene_000/meta.json"));
    CHECK(fs::exists(dir / "d1/scene_000/tracks.csv"));

    REQUIRE(run("gen-data --config " + cfg + " --out " + dir / "d3" + " --seed 6 --count 1") == 0);
    CHECK(slurp(dir / "d1/scene_000/arrays.q4dg") != slurp(dir / "d3/scene_000/arrays.q4dg"));

    // zero-step training just materializes the seeded initialization
    const std::string common = " --config " + cfg + " --data " + dir / "d1" + " --seed 9";
    REQUIRE(run("train --stage 1 --steps 0 --ckpt " + dir / "c1.q4dg" + common) == 0);
    REQUIRE(run("train --stage 1 --steps 0 --ckpt " + dir / "c2.q4dg" + common) == 0);
    CHECK(slurp(dir / "c1.q4dg") == slurp(dir / "c2.q4dg"));

    // a short real run changes the checkpoint and appends a log
    REQUIRE(run("train --stage 1 --task depth --steps 2 --ckpt " + dir / "c1.q4dg" + common) == 0);
    CHECK(slurp(dir / "c1.q4dg") != slurp(dir / "c2.q4dg"));
    const auto log = slurp(dir / "train_log.csv");
    CHECK(log.rfind("stage,task,step,cam,depth,mask,point,track,total,lr", 0) == 0);

    REQUIRE(run("eval --config " + cfg + " --ckpt " + dir / "c1.q4dg" + " --data " + dir / "d1" +
                " --out " + dir / "metrics.csv") == 0);
    const auto metrics = slurp(dir / "metrics.csv");
    CHECK(metrics.rfind("scene,metric,value", 0) == 0);
    CHECK(metrics.find("scene_000,ate,") != std::string::npos);
    CHECK(metrics.find("deviation_px_h12") != std::string::npos);

    REQUIRE(run("infer --config " + cfg + " --ckpt " + dir / "c1.q4dg" + " --data " + dir / "d1" +
                " --out " + dir / "pred") == 0);
    CHECK(fs::exists(dir / "pred/scene_000/predictions.q4dg"));
    CHECK(fs::exists(dir / "pred/scene_000/tracks.csv"));

    // eval determinism: byte-identical metrics.csv on a second run
    REQUIRE(run("eval --config " + cfg + " --ckpt " + dir / "c1.q4dg" + " --data " + dir / "d1" +
                " --out " + dir / "metrics2.csv") == 0);
    CHECK(slurp(dir / "metrics.csv") == slurp(dir / "metrics2.csv"));
}

TEST_CASE("runtime failures exit with code 2") {
    TempDir dir("q4dg_cli_errors");
    const auto cfg = dir / "cfg.json";
    write_micro_config(cfg);
    CHECK(run("eval --config " + cfg + " --ckpt " + dir / "missing.q4dg" + " --data " +
              dir / "nothing" + " --out " + dir / "m.csv") == 2);
    CHECK(run("train --config " + cfg + " --data " + dir / "nothing" +
              " --stage 1 --steps 1 --ckpt " + dir / "c.q4dg" + " --seed 1") == 2);

    // malformed config: usage error, exit code 1
    std::ofstream(dir / "bad.json") << "{\"schema_version\": 999}";
    CHECK(run("gen-data --config " + dir / "bad.json" + " --out " + dir / "x" +
              " --seed 1 --count 1") == 1);
}
