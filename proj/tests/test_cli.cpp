#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int status = 0;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "survtrace");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int status = survtrace::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {status, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("survtrace_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_config(const fs::path& dir) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << R"({"max_epochs": 3, "batch_size": 64, "time_bins": 5,
    "model": {"embed_dim": 8, "heads": 2, "layers": 1, "hidden": 16}})";
  return p;
}

std::size_t count(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = s.find(needle); pos != std::string::npos; pos = s.find(needle, pos + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("synth is byte-for-byte reproducible") {
  const fs::path dir = scratch("synth");
  const auto a = run({"synth", "--n", "200", "--seed", "5", "--out", (dir / "a.csv").string()});
  const auto b = run({"synth", "--n", "200", "--seed", "5", "--out", (dir / "b.csv").string()});
  REQUIRE(a.status == 0);
  REQUIRE(b.status == 0);
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  CHECK(slurp(dir / "a.propensity.csv") == slurp(dir / "b.propensity.csv"));
  CHECK(count(slurp(dir / "a.csv"), "\n") == 201);
  run({"synth", "--n", "200", "--seed", "6", "--out", (dir / "c.csv").string()});
  CHECK(slurp(dir / "a.csv") != slurp(dir / "c.csv"));
}

TEST_CASE("train, eval, predict and attention end to end") {
  const fs::path dir = scratch("pipeline");
  const std::string data = (dir / "data.csv").string();
  const std::string ckpt = (dir / "model.json").string();
  REQUIRE(run({"synth", "--n", "400", "--events", "2", "--seed", "1", "--out", data}).status == 0);
  const auto t = run({"train", "--data", data, "--config", write_config(dir).string(), "--out", ckpt});
  INFO(t.err);
  REQUIRE(t.status == 0);
  CHECK(count("\n" + t.out, "\nepoch ") == 3);
  CHECK(fs::exists(dir / "model.history.json"));
  const auto history = nlohmann::json::parse(slurp(dir / "model.history.json"));
  CHECK(history.at("epochs").size() == 3);

  const auto e = run({"eval", "--data", data, "--checkpoint", ckpt, "--out", (dir / "metrics.json").string()});
  INFO(e.err);
  REQUIRE(e.status == 0);
  CHECK(count(e.out, "event 1 ") == 3);
  CHECK(count(e.out, "event 2 ") == 3);
  const auto metrics = nlohmann::json::parse(slurp(dir / "metrics.json"));
  CHECK(metrics.at("events").size() == 2);

  const auto p = run({"predict", "--data", data, "--checkpoint", ckpt, "--times", "0"});
  REQUIRE(p.status == 0);
  std::istringstream lines(p.out);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "record,time,S_1,S_2");
  std::size_t rows = 0;
  while (std::getline(lines, line)) {
    CHECK(line.substr(line.find(',')) == ",0,1,1");
    ++rows;
  }
  CHECK(rows == 400);

  const auto a = run({"attention", "--data", data, "--checkpoint", ckpt, "--row", "3"});
  REQUIRE(a.status == 0);
  const auto attn = nlohmann::json::parse(a.out);
  CHECK(attn.at("row") == 3);
  CHECK(attn.at("labels").size() == 4);
  CHECK(attn.at("layers").size() == 1);
  CHECK(attn.at("layers")[0].at("heads").size() == 2);
  for (const auto& row : attn.at("layers")[0].at("heads")[0].at("weights")) {
    double sum = 0.0;
    for (const auto& w : row) sum += w.get<double>();
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("train is deterministic") {
  const fs::path dir = scratch("determinism");
  const std::string data = (dir / "data.csv").string();
  REQUIRE(run({"synth", "--n", "200", "--seed", "2", "--out", data}).status == 0);
  const std::string config = write_config(dir).string();
  REQUIRE(run({"train", "--data", data, "--config", config, "--out", (dir / "a.json").string()}).status == 0);
  REQUIRE(run({"train", "--data", data, "--config", config, "--out", (dir / "b.json").string()}).status == 0);
  CHECK(slurp(dir / "a.json") == slurp(dir / "b.json"));
  CHECK(slurp(dir / "a.history.json") == slurp(dir / "b.history.json"));
}

TEST_CASE("usage errors print help and fail") {
  const auto none = run({});
  CHECK(none.status != 0);
  const auto bad = run({"train", "--bogus"});
  CHECK(bad.status == 2);
  CHECK(bad.err.find("error:") != std::string::npos);
  CHECK(bad.err.find("--data") != std::string::npos);
  CHECK(run({"synth", "--out", "x.csv", "--events", "0"}).status == 2);
  const auto help = run({"--help"});
  CHECK(help.status == 0);
  CHECK(help.out.find("train") != std::string::npos);
}

TEST_CASE("data errors are reported on stderr") {
  const fs::path dir = scratch("dataerr");
  const auto missing = run({"train", "--data", (dir / "nope.csv").string(), "--out", (dir / "m.json").string()});
  CHECK(missing.status == 1);
  CHECK(missing.err.find("nope.csv") != std::string::npos);

  const fs::path bad = dir / "bad.csv";
  std::ofstream(bad) << "x,duration,event\n1,2,1\n2,-1,0\n";
  const auto negative = run({"train", "--data", bad.string(), "--out", (dir / "m.json").string()});
  CHECK(negative.status == 1);
  CHECK(negative.err.find("error:") != std::string::npos);

  const auto wrong_col = run({"train", "--data", bad.string(), "--duration-col", "time", "--out",
                              (dir / "m.json").string()});
  CHECK(wrong_col.status == 1);
  CHECK(wrong_col.err.find("time") != std::string::npos);
}

TEST_CASE("an undefined concordance is an error, not a number") {
  const fs::path dir = scratch("undefined");
  const std::string data = (dir / "data.csv").string();
  const std::string ckpt = (dir / "model.json").string();
  REQUIRE(run({"synth", "--n", "300", "--events", "2", "--seed", "3", "--out", data}).status == 0);
  REQUIRE(run({"train", "--data", data, "--config", write_config(dir).string(), "--out", ckpt}).status == 0);
  // Same covariates with every event-2 label turned into a censoring.
  std::istringstream in(slurp(data));
  std::ofstream relabeled(dir / "only1.csv");
  std::string line;
  while (std::getline(in, line)) {
    if (line.size() > 2 && line.substr(line.size() - 2) == ",2") line.back() = '0';
    relabeled << line << '\n';
  }
  relabeled.close();
  const auto e = run({"eval", "--data", (dir / "only1.csv").string(), "--checkpoint", ckpt, "--fold", "all"});
  CHECK(e.status == 1);
  CHECK(e.err.find("comparable") != std::string::npos);
}
