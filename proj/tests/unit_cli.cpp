#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cli_impl.hpp"

namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) {
  std::vector<const char*> argv{"fadebif"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return fadebif::cli::run_cli(static_cast<int>(argv.size()), argv.data());
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("fadebif_cli_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string str() const { return path.string(); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("dry runs validate and exit cleanly") {
  CHECK(run({"orbit", "--system", "builtin:ex0?lambda=1&mu=0", "--dry-run"}) == 0);
  CHECK(run({"classify", "--system", "builtin:ex0?lambda=1&mu=0", "--dry-run"}) == 0);
  CHECK(run({"simulate", "--system", "builtin:ex0?lambda=1&mu=0", "--dry-run"}) == 0);
  CHECK(run({"reproduce-figure", "7", "--dry-run"}) == 0);
}

TEST_CASE("config errors exit with code 2") {
  CHECK(run({"orbit", "--system", "builtin:nosuch", "--dry-run"}) == 2);
  CHECK(run({"orbit", "--system", "builtin:ex0?lambda=1", "--dry-run"}) == 2);  // mu missing
  CHECK(run({"orbit", "--no-such-flag"}) == 2);
}

TEST_CASE("unknown config keys are rejected") {
  TempDir tmp;
  auto cfg = tmp.path / "cfg.json";
  std::ofstream(cfg) << R"({"system": "builtin:ex0?lambda=1&mu=0", "bogus": 3})";
  CHECK(run({"orbit", "--config", cfg.string(), "--dry-run"}) == 2);
}

TEST_CASE("config file supplies defaults, flags win") {
  TempDir tmp;
  auto cfg = tmp.path / "cfg.json";
  std::ofstream(cfg) << R"({"system": "builtin:ex0?lambda=1&mu=0", "emax": 0.5})";
  CHECK(run({"orbit", "--config", cfg.string(), "--dry-run"}) == 0);
}

TEST_CASE("separatrix guard refuses emax beyond 0.9 E0") {
  TempDir tmp;
  int rc = run({"orbit", "--system", "builtin:ex1?h=1&p=1&q=2&lambda=0&mu=0", "--emax", "1.75",
                "--energies", "3", "--out", tmp.str()});
  CHECK(rc == 3);
}

TEST_CASE("orbit command writes the frequency table and per-energy dumps") {
  TempDir tmp;
  int rc = run({"orbit", "--system", "builtin:ex0?lambda=0&mu=0", "--emax", "1.0", "--energies",
                "3", "--out", tmp.str()});
  CHECK(rc == 0);
  auto freq = slurp(tmp.path / "frequency.csv");
  CHECK(freq.find("E,nu") != std::string::npos);
  auto orbit0 = slurp(tmp.path / "orbit_0.csv");
  CHECK(orbit0.find("phi,x,y,dEx,dEy") != std::string::npos);
}

TEST_CASE("classify exits 0 on conclusive verdicts and 4 on inconclusive") {
  TempDir tmp;
  CHECK(run({"classify", "--system", "builtin:ex0?lambda=-1&mu=1", "--out", tmp.str()}) == 0);
  auto verdict = slurp(tmp.path / "verdict.json");
  CHECK(verdict.find("PolynomiallyStable") != std::string::npos);
  // zero perturbation: every Lambda_k vanishes -> inconclusive, report still written
  CHECK(run({"classify", "--system", "builtin:ex0?lambda=0&mu=0", "--out", tmp.str()}) == 4);
  CHECK(slurp(tmp.path / "verdict.json").find("Inconclusive") != std::string::npos);
}

TEST_CASE("simulate writes a path CSV with the documented columns") {
  TempDir tmp;
  int rc = run({"simulate", "--system", "builtin:ex0?lambda=-1&mu=1", "--t1", "10", "--dt",
                "0.001", "--record-stride", "100", "--out", tmp.str(), "--seed", "3"});
  CHECK(rc == 0);
  auto path = slurp(tmp.path / "path.csv");
  CHECK(path.find("t,x,y,absz,E,phi") != std::string::npos);
  CHECK(path.find("# system=ex0") != std::string::npos);
}

TEST_CASE("simulate rejects an unknown scheme") {
  TempDir tmp;
  CHECK(run({"simulate", "--system", "builtin:ex0?lambda=0&mu=0", "--t1", "2", "--scheme",
             "heun", "--out", tmp.str()}) == 3);
}

TEST_CASE("repeated runs are byte-identical") {
  TempDir a, b;
  auto args = [&](const std::string& out) {
    return std::vector<std::string>{
        "simulate", "--system", "builtin:ex0?lambda=-0.5&mu=1", "--t1",  "50",
        "--dt",     "0.001",    "--paths",                      "8",     "--seed",
        "11",       "--out",    out};
  };
  CHECK(run(args(a.str())) == 0);
  CHECK(run(args(b.str())) == 0);
  CHECK(slurp(a.path / "summary_absz.csv") == slurp(b.path / "summary_absz.csv"));
  CHECK(slurp(a.path / "summary_energy.csv") == slurp(b.path / "summary_energy.csv"));
}
