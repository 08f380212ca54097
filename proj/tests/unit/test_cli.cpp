#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "meshtex/kv_file.hpp"
#include "meshtex/obj_io.hpp"
#include "meshtex/shapes.hpp"
#include "meshtex_cli/app.hpp"

namespace mt = meshtex;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = mt::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("meshtex_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    mt::save_obj(dir_ / "ico.obj", mt::shapes::icosahedron());
    mt::save_obj(dir_ / "torus.obj", mt::shapes::torus(1.0, 0.4, 8, 5));
    mt::save_obj(dir_ / "ellipsoid.obj", mt::shapes::ellipsoid(3, {1.4, 1.0, 0.8}));
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  void write(const std::string& name, const std::string& text) const { std::ofstream(dir_ / name) << text; }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, HelpAndUsageErrors) {
  EXPECT_EQ(run({"--help"}).code, 0);
  EXPECT_EQ(run({}).code, mt::cli::kExitValidation);
  EXPECT_EQ(run({"bogus"}).code, mt::cli::kExitValidation);
  EXPECT_EQ(run({"stats", path("ico.obj"), "--nope"}).code, mt::cli::kExitValidation);
  EXPECT_EQ(run({"subdivide", path("ico.obj")}).code, mt::cli::kExitValidation);  // no --out
  const auto missing = run({"stats", path("missing.obj")});
  EXPECT_EQ(missing.code, mt::cli::kExitValidation);
  EXPECT_NE(missing.err.find("error:"), std::string::npos);
  EXPECT_EQ(run({"remesh", path("ellipsoid.obj"), "--template", "cube", "--out", path("r")}).code,
            mt::cli::kExitValidation);
}

TEST_F(CliTest, Stats) {
  const auto ico = run({"stats", path("ico.obj")});
  ASSERT_EQ(ico.code, 0) << ico.err;
  EXPECT_NE(ico.out.find("faces = 20\n"), std::string::npos);
  EXPECT_NE(ico.out.find("euler_characteristic = 2\n"), std::string::npos);
  const auto torus = run({"stats", path("torus.obj"), "--out", path("s")});
  ASSERT_EQ(torus.code, 0) << torus.err;
  EXPECT_NE(torus.out.find("genus = 1\n"), std::string::npos);
  EXPECT_EQ(slurp(path("s/stats.txt")), torus.out);
  EXPECT_TRUE(fs::exists(path("s/run.manifest")));
}

TEST_F(CliTest, ValidateKinds) {
  EXPECT_EQ(run({"validate", path("ico.obj")}).code, 0);
  write("open.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n");
  EXPECT_EQ(run({"validate", path("open.obj")}).code, mt::cli::kExitValidation);
  write("good.cfg", "[train]\ngamma = 3\n[fit]\nlevels = 3\n");
  EXPECT_EQ(run({"validate", path("good.cfg")}).code, 0);
  write("typo.cfg", "[train]\ngama = 3\n");
  EXPECT_EQ(run({"validate", path("typo.cfg")}).code, mt::cli::kExitValidation);
  write("section.cfg", "[trian]\ngamma = 3\n");
  EXPECT_EQ(run({"validate", path("section.cfg")}).code, mt::cli::kExitValidation);
  EXPECT_EQ(run({"validate", path("nothing")}).code, mt::cli::kExitValidation);
}

TEST_F(CliTest, SubdivideAndReplay) {
  const auto r = run({"subdivide", path("ico.obj"), "--levels", "2", "--out", path("a")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(mt::load_obj(path("a/subdivided.obj")).num_faces(), 320u);
  const auto m = mt::KeyValueFile::load(path("a/run.manifest"));
  EXPECT_EQ(m.require("run", "command"), "subdivide");
  EXPECT_EQ(m.require_int("run", "levels"), 2);
  EXPECT_EQ(m.require("outputs", "files"), "subdivided.obj");

  const auto replay = run({"subdivide", "--config", path("a/run.manifest"), "--out", path("b")});
  ASSERT_EQ(replay.code, 0) << replay.err;
  EXPECT_EQ(slurp(path("a/subdivided.obj")), slurp(path("b/subdivided.obj")));
  // A manifest only replays the command that wrote it.
  EXPECT_EQ(run({"stats", "--config", path("a/run.manifest")}).code, mt::cli::kExitValidation);
}

TEST_F(CliTest, FlagsOverrideConfig) {
  write("run.cfg", "[run]\nseed = 5\nlevels = 3\n");
  ASSERT_EQ(run({"subdivide", path("ico.obj"), "--config", path("run.cfg"), "--seed", "7", "--out", path("o")}).code, 0);
  const auto m = mt::KeyValueFile::load(path("o/run.manifest"));
  EXPECT_EQ(m.require_uint("run", "seed"), 7u);
  EXPECT_EQ(m.require_int("run", "levels"), 3);
  write("bad.cfg", "[run]\nsede = 5\n");
  EXPECT_EQ(run({"subdivide", path("ico.obj"), "--config", path("bad.cfg"), "--out", path("p")}).code,
            mt::cli::kExitValidation);
}

TEST_F(CliTest, ThreadEnvironment) {
  ::setenv("MESHTEX_THREADS", "many", 1);
  EXPECT_EQ(run({"subdivide", path("ico.obj"), "--out", path("t")}).code, mt::cli::kExitValidation);
  ::setenv("MESHTEX_THREADS", "2", 1);
  ASSERT_EQ(run({"subdivide", path("ico.obj"), "--out", path("t")}).code, 0);
  EXPECT_EQ(mt::KeyValueFile::load(path("t/run.manifest")).require_int("environment", "threads"), 2);
  ASSERT_EQ(run({"subdivide", path("ico.obj"), "--deterministic", "--out", path("u")}).code, 0);
  EXPECT_EQ(mt::KeyValueFile::load(path("u/run.manifest")).require_int("environment", "threads"), 1);
  ::unsetenv("MESHTEX_THREADS");
}

TEST_F(CliTest, PipelineEndToEndAndDeterministicReplay) {
  write("fit.cfg",
        "[fit]\nsamples_per_side = 300\niters_per_level = 20\n"
        "[train]\niters_per_level = 2\nnum_layers = 2\nd_steps = 1\ng_steps = 1\n");
  const auto remesh = run({"remesh", path("ellipsoid.obj"), "--config", path("fit.cfg"), "--levels", "2", "--seed", "3",
                           "--deterministic", "--out", path("pyr"), "--log-csv", path("pyr.csv")});
  ASSERT_EQ(remesh.code, 0) << remesh.err;
  EXPECT_TRUE(fs::exists(path("pyr/level_1.obj")));
  EXPECT_EQ(slurp(path("pyr.csv")).substr(0, 45), "level,iter,loss,chamfer,normal,uniform,smooth");

  const auto train = run({"train", path("pyr"), "--config", path("fit.cfg"), "--seed", "4", "--deterministic", "--out",
                          path("ck"), "--log-csv", path("train.csv")});
  ASSERT_EQ(train.code, 0) << train.err;
  EXPECT_TRUE(fs::exists(path("ck/level_1.mtex")));
  std::istringstream log(slurp(path("train.csv")));
  std::string header;
  std::getline(log, header);
  EXPECT_EQ(header, "iter,level,d_loss,g_loss,gp,recon_mse");
  int rows = 0;
  for (std::string line; std::getline(log, line);) ++rows;
  EXPECT_EQ(rows, 4);

  const auto synth = run({"synthesize", path("ck"), path("torus.obj"), "--start-level", "1", "--seed", "9",
                          "--deterministic", "--out", path("syn")});
  ASSERT_EQ(synth.code, 0) << synth.err;
  const mt::Mesh out = mt::load_obj(path("syn/synthesized.obj"));
  EXPECT_EQ(out.num_faces(), 4u * 80u);
  EXPECT_EQ(mt::mesh_stats(out).genus, 1);

  const auto interp = run({"interpolate", path("ck"), path("ico.obj"), "--steps", "3", "--deterministic", "--out",
                           path("int")});
  ASSERT_EQ(interp.code, 0) << interp.err;
  EXPECT_TRUE(fs::exists(path("int/interp_002.obj")));

  // Replays from the manifests alone.
  for (const std::string stage : {"pyr", "ck", "syn", "int"}) {
    const auto m = mt::KeyValueFile::load(path(stage + "/run.manifest"));
    const std::string command = m.require("run", "command");
    const auto again = run({command, "--config", path(stage + "/run.manifest"), "--out", path(stage + "_again")});
    ASSERT_EQ(again.code, 0) << stage << ": " << again.err;
    std::istringstream files(m.require("outputs", "files"));
    int compared = 0;
    for (std::string f; std::getline(files, f, ',');) {
      EXPECT_EQ(slurp(path(stage + "/" + f)), slurp(path(stage + "_again/" + f))) << stage << "/" << f;
      ++compared;
    }
    EXPECT_GT(compared, 0);
  }
}

TEST_F(CliTest, DivergenceExitCode) {
  write("fit.cfg", "[fit]\nsamples_per_side = 200\niters_per_level = 5\n");
  ASSERT_EQ(run({"remesh", path("ellipsoid.obj"), "--config", path("fit.cfg"), "--levels", "2", "--out", path("pyr")}).code,
            0);
  write("hot.cfg", "[train]\niters_per_level = 40\nnum_layers = 2\nlearning_rate = 1e30\n");
  const auto r = run({"train", path("pyr"), "--config", path("hot.cfg"), "--out", path("ck")});
  EXPECT_EQ(r.code, mt::cli::kExitDivergence) << r.err;
  EXPECT_NE(r.err.find("divergence"), std::string::npos);
}
