#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "ssgrn/cli.hpp"
#include "ssgrn/data.hpp"

using namespace ssgrn;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "ssgrn");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("ssgrn-cli-" + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_file(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

// Small scene plus a trained sagrn checkpoint shared by the later cases.
struct Workspace {
  TempDir dir;
  Workspace() {
    REQUIRE(run({"synth", "--out", dir / "s", "--h", "12", "--w", "10", "--bands", "4", "--classes", "3", "--seed",
                 "2"})
                .code == 0);
    write_file(dir / "counts.txt", "1 4 2\n2 4 2\n3 4 2\n");
    REQUIRE(run({"split", "--labels", dir / "s.lab", "--counts", dir / "counts.txt", "--seed", "1", "--out",
                 dir / "split.txt"})
                .code == 0);
    const auto r = run({"train", "--cube", dir / "s.cube", "--labels", dir / "s.lab", "--split", dir / "split.txt",
                        "--model", "sagrn", "--iters", "2", "--descriptors", "1", "--widths", "4,4,8",
                        "--head-hidden", "8", "--quiet", "--out", dir / "m.ckpt"});
    INFO(r.err);
    REQUIRE(r.code == 0);
  }
};

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("config files") {
    std::istringstream in("# comment\nmodel = fcn\n\nhead_hidden=16  # trailing\n");
    const auto c = cli::RunConfig::parse(in, "run.cfg");
    REQUIRE(c.entries.size() == 2);
    CHECK(c.entries[1].key == "head-hidden");
    CHECK(c.entries[1].value == "16");
    CHECK(c.entries[1].line == 4);

    std::istringstream dup("a=1\na=2\n");
    CHECK_THROWS_WITH(cli::RunConfig::parse(dup, "x.cfg"), doctest::Contains("x.cfg:2"));
    std::istringstream noeq("a=1\njunk\n");
    CHECK_THROWS_WITH(cli::RunConfig::parse(noeq, "y.cfg"), doctest::Contains("y.cfg:2"));
  }

  TEST_CASE("synth and split") {
    TempDir d;
    CHECK(run({"synth", "--out", d / "a", "--h", "6", "--w", "5", "--seed", "3"}).code == 0);
    CHECK(run({"synth", "--out", d / "b", "--h", "6", "--w", "5", "--seed", "3"}).code == 0);
    CHECK(slurp(d / "a.cube") == slurp(d / "b.cube"));
    CHECK(slurp(d / "a.lab") == slurp(d / "b.lab"));
    const auto cube = data::load_cube(d / "a.cube");
    CHECK(cube.height == 6);
    CHECK(cube.width == 5);
    CHECK(cube.bands == 12);

    const auto s = run({"split", "--labels", d / "a.lab", "--seed", "1", "--out", d / "split.txt"});
    CHECK(s.code == 0);
    CHECK(s.out.rfind("train ", 0) == 0);
  }

  TEST_CASE("config values apply unless a flag overrides them") {
    TempDir d;
    write_file(d / "c.cfg", "h = 4\nw = 4\nbands = 3\nclasses = 2\nmodel = sagrn\ndescriptors = 2\n");
    const auto a = run({"complexity", "--config", d / "c.cfg"});
    CHECK(a.code == 0);
    CHECK(a.out.find("attention_ops 12\n") != std::string::npos);
    const auto b = run({"complexity", "--config", d / "c.cfg", "--descriptors", "1"});
    CHECK(b.out.find("attention_ops 5\n") != std::string::npos);

    write_file(d / "bad.cfg", "h = 4\nwdith = 4\n");
    const auto e = run({"complexity", "--config", d / "bad.cfg"});
    CHECK(e.code != 0);
    CHECK(e.err.rfind("error: ", 0) == 0);
    CHECK(e.err.find("bad.cfg:2") != std::string::npos);
  }

  TEST_CASE("complexity without a spatial branch") {
    const auto r = run({"complexity", "--model", "segrn", "--h", "8", "--w", "8", "--bands", "3", "--classes", "2",
                        "--spectral-descriptors", "4", "--widths", "4,4,8"});
    CHECK(r.code == 0);
    CHECK(r.out.find("variant segrn\n") == 0);
    CHECK(r.out.find("attention_ops 0\n") != std::string::npos);
  }

  TEST_CASE("errors are single prefixed lines with nonzero exit") {
    for (const auto& args : std::vector<std::vector<std::string>>{
             {"eval", "--ckpt", "/nonexistent.ckpt", "--cube", "x", "--labels", "y", "--split", "z", "--report", "r"},
             {"train", "--cube", "x"},
             {"complexity", "--h", "4", "--w", "4", "--bands", "3", "--classes", "2", "--model", "gcn"}}) {
      const auto r = run(args);
      CHECK(r.code != 0);
      CHECK(r.err.rfind("error: ", 0) == 0);
      CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
    }
    CHECK(run({"bogus"}).code != 0);
  }

  TEST_CASE("train, eval, predict, inspect") {
    Workspace w;
    const auto& d = w.dir;
    CHECK(fs::exists(d / "m.ckpt.history.csv"));

    const auto ev = run({"eval", "--ckpt", d / "m.ckpt", "--cube", d / "s.cube", "--labels", d / "s.lab", "--split",
                         d / "split.txt", "--report", d / "report.txt"});
    INFO(ev.err);
    CHECK(ev.code == 0);
    CHECK(ev.out.rfind("OA ", 0) == 0);
    CHECK(slurp(d / "report.txt").rfind("OA ", 0) == 0);
    CHECK(slurp(d / "report.txt.confusion.csv").rfind("truth\\pred,1,2,3\n", 0) == 0);

    // Every labeled pixel in train: the test subset is empty.
    write_file(d / "all.txt", "1 1000 0\n2 1000 0\n3 1000 0\n");
    REQUIRE(run({"split", "--labels", d / "s.lab", "--counts", d / "all.txt", "--out", d / "alltrain.txt"}).code == 0);
    const auto empty = run({"eval", "--ckpt", d / "m.ckpt", "--cube", d / "s.cube", "--labels", d / "s.lab",
                            "--split", d / "alltrain.txt", "--report", d / "r2.txt"});
    CHECK(empty.code != 0);
    CHECK(empty.err.rfind("error: ", 0) == 0);

    CHECK(run({"predict", "--ckpt", d / "m.ckpt", "--cube", d / "s.cube", "--out", d / "map.ppm"}).code == 0);
    const auto ppm = slurp(d / "map.ppm");
    CHECK(ppm.rfind("P6 10 12 255\n", 0) == 0);
    CHECK(ppm.size() == std::string("P6 10 12 255\n").size() + 10 * 12 * 3);

    CHECK(run({"inspect", "--ckpt", d / "m.ckpt", "--cube", d / "s.cube", "--what", "superpixels", "--out",
               d / "sp.pgm"})
              .code == 0);
    const auto pgm = slurp(d / "sp.pgm");
    const std::string header = "P5 5 6 1\n";
    REQUIRE(pgm.rfind(header, 0) == 0);
    for (std::size_t i = header.size(); i < pgm.size(); ++i) CHECK(pgm[i] == 0);

    CHECK(run({"inspect", "--ckpt", d / "m.ckpt", "--cube", d / "s.cube", "--what", "spatial-affinity", "--out",
               d / "aff.csv"})
              .code == 0);
    std::ifstream aff(d / "aff.csv");
    std::string line;
    std::size_t rows = 0;
    while (std::getline(aff, line)) {
      std::istringstream ss(line);
      std::string cell;
      double s = 0;
      while (std::getline(ss, cell, ',')) s += std::stod(cell);
      CHECK(std::abs(s - 1.0) < 1e-5);
      ++rows;
    }
    CHECK(rows == 1);

    const auto spec = run({"inspect", "--ckpt", d / "m.ckpt", "--cube", d / "s.cube", "--what",
                           "spectral-affinity", "--out", d / "x.csv"});
    CHECK(spec.code != 0);
    CHECK(spec.err.rfind("error: ", 0) == 0);

    const auto mismatch = run({"synth", "--out", d / "other", "--h", "8", "--w", "8", "--bands", "4"});
    REQUIRE(mismatch.code == 0);
    CHECK(run({"predict", "--ckpt", d / "m.ckpt", "--cube", d / "other.cube", "--out", d / "m2.ppm"}).code != 0);
  }
}
