#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "sicr/cli/app.hpp"
#include "sicr/eval/results.hpp"
#include "sicr/signal/trialset_io.hpp"

using namespace sicr;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("sicr_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct Run {
  int code;
  std::string out, err;
};

Run sicr_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

// Small cohort and network so each command finishes in well under a second.
std::vector<std::string> small(std::vector<std::string> args) {
  for (const char* s : {"cohort.num_subjects=3", "cohort.trials_per_class=8", "cohort.n_channels=4",
                        "cohort.n_times=64", "cohort.sample_rate=32", "train.epochs=2", "train.batch_size=8",
                        "train.estimators.pair_hidden=8", "train.estimators.local_hidden=4",
                        "train.estimators.global_hidden=4", "train.encoder.eegnet_pool_global=2"}) {
    args.push_back("--set");
    args.push_back(s);
  }
  return args;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}

std::string synth(const fs::path& dir) {
  auto r = sicr_cli(small({"synth", "--out", dir.string()}));
  REQUIRE(r.code == 0);
  return (dir / "trials.trialset").string();
}

}  // namespace

TEST_CASE("synth is deterministic and round-trips") {
  const auto dir = scratch("synth");
  const auto a = synth(dir / "a");
  const auto b = synth(dir / "b");
  CHECK(slurp(a) == slurp(b));
  const auto set = signal::load_trialset(a);
  CHECK(set.trials.size() == 3 * 2 * 8);
  std::ifstream in(a);
  std::string header;
  std::getline(in, header);
  CHECK(nlohmann::json::parse(header)["n_trials"] == set.trials.size());

  // The resolved config regenerates the same cohort in memory.
  cli::RunConfig c;
  cli::merge(nlohmann::ordered_json::parse(slurp(dir / "a" / "config.json")), c);
  const auto again = signal::generate_cohort(c.cohort);
  REQUIRE(again.size() == set.trials.size());
  for (std::size_t i = 0; i < again.size(); ++i) {
    CHECK(again[i].x == set.trials[i].x);
    CHECK(again[i].label == set.trials[i].label);
    CHECK(again[i].subject == set.trials[i].subject);
  }
}

TEST_CASE("train writes checkpoint, history and config; reruns are byte-identical") {
  const auto dir = scratch("train");
  const auto data = synth(dir / "data");
  auto r1 = sicr_cli(small({"train", data, "--out", (dir / "r1").string(), "--seed", "5"}));
  auto r2 = sicr_cli(small({"train", data, "--out", (dir / "r2").string(), "--seed", "5"}));
  REQUIRE(r1.code == 0);
  REQUIRE(r2.code == 0);
  for (const char* f : {"checkpoint.json", "checkpoint.bin", "history.csv", "config.json"}) {
    CHECK(fs::exists(dir / "r1" / f));
  }
  CHECK(slurp(dir / "r1" / "history.csv") == slurp(dir / "r2" / "history.csv"));
  CHECK(slurp(dir / "r1" / "checkpoint.bin") == slurp(dir / "r2" / "checkpoint.bin"));
  const auto cfg = nlohmann::json::parse(slurp(dir / "r1" / "config.json"));
  CHECK(cfg["seed"] == 5);
  CHECK(cfg["train"]["seed"] == 5);
  CHECK(cfg["cohort"]["seed"] == 5);
  CHECK(cfg["train"]["encoder"]["n_channels"] == 4);

  auto r3 = sicr_cli(small({"train", data, "--out", (dir / "r3").string(), "--seed", "6"}));
  CHECK(slurp(dir / "r3" / "checkpoint.bin") != slurp(dir / "r1" / "checkpoint.bin"));
}

TEST_CASE("--weights 1,0,0 trains classification only") {
  const auto dir = scratch("pooled");
  const auto data = synth(dir / "data");
  REQUIRE(sicr_cli(small({"train", data, "--out", (dir / "p").string(), "--weights", "1,0,0"})).code == 0);
  const auto rows = read_csv(dir / "p" / "history.csv");
  REQUIRE(rows.size() == 3);
  CHECK(rows[0][1] == "L_cls");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(std::stod(rows[i][1]) > 0);
    CHECK(rows[i][2] == "0");
    CHECK(rows[i][3] == "0");
    CHECK(rows[i][4] == "0");
  }
  REQUIRE(sicr_cli(small({"train", data, "--out", (dir / "v3").string(), "--variant", "III"})).code == 0);
  const auto v3 = read_csv(dir / "v3" / "history.csv");
  CHECK(std::stod(v3[1][2]) != 0);
  CHECK(std::stod(v3[1][3]) != 0);
  CHECK(v3[1][4] == "0");
}

TEST_CASE("eval scenario II gives one row per subject; CSP shares the schema") {
  const auto dir = scratch("eval");
  const auto data = synth(dir / "data");
  auto r = sicr_cli(small({"eval", data, "--scenario", "2", "--out", (dir / "net").string()}));
  REQUIRE(r.code == 0);
  const auto rows = eval::read_results_csv(*std::make_unique<std::ifstream>(dir / "net" / "results.csv"));
  REQUIRE(rows.size() == 3);
  std::set<std::uint16_t> ids;
  double manual = 0;
  for (const auto& row : rows) {
    ids.insert(row.subject_id);
    manual += row.accuracy;
  }
  CHECK(ids.size() == 3);
  const auto summary = nlohmann::json::parse(slurp(dir / "net" / "results.json"))["summary"];
  CHECK(summary["mean"].get<double>() == doctest::Approx(manual / 3).epsilon(1e-12));

  auto c = sicr_cli(small({"eval", data, "--baseline", "csp", "--out", (dir / "csp").string()}));
  REQUIRE(c.code == 0);
  const auto net_csv = read_csv(dir / "net" / "results.csv");
  const auto csp_csv = read_csv(dir / "csp" / "results.csv");
  CHECK(net_csv[0] == csp_csv[0]);
  CHECK(csp_csv.size() == net_csv.size());
  for (std::size_t i = 1; i < csp_csv.size(); ++i) {
    CHECK(csp_csv[i].size() == 6);
    CHECK(csp_csv[i][1] == "csp");
  }
}

TEST_CASE("explain writes topomap, embeddings and PSD") {
  const auto dir = scratch("explain");
  const auto data = synth(dir / "data");
  REQUIRE(sicr_cli(small({"train", data, "--out", (dir / "m").string()})).code == 0);
  auto r = sicr_cli(small({"explain", (dir / "m" / "checkpoint.json").string(), data, "--out", (dir / "x").string()}));
  REQUIRE(r.code == 0);
  std::set<std::string> files;
  for (const auto& e : fs::directory_iterator(dir / "x")) files.insert(e.path().filename().string());
  files.erase("config.json");
  CHECK(files == std::set<std::string>{"topomap.csv", "embeddings.csv", "psd.csv"});

  const auto topo = read_csv(dir / "x" / "topomap.csv");
  CHECK(topo[0] == std::vector<std::string>{"class", "channel", "relevance"});
  CHECK(topo.size() == 1 + 2 * 4);
  for (std::size_t i = 1; i < topo.size(); ++i) {
    const double v = std::stod(topo[i][2]);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  const auto psd = read_csv(dir / "x" / "psd.csv");
  double fmax = 0;
  for (std::size_t i = 1; i < psd.size(); ++i) fmax = std::max(fmax, std::stod(psd[i][2]));
  CHECK(fmax == 16.0);
  CHECK(read_csv(dir / "x" / "embeddings.csv").size() == 1 + 3 * 48);

  REQUIRE(sicr_cli(small({"export", (dir / "m" / "checkpoint.json").string(), data, "--out", (dir / "e").string()})).code == 0);
  CHECK(slurp(dir / "e" / "embeddings.csv") == slurp(dir / "x" / "embeddings.csv"));
}

TEST_CASE("exit codes: config 2, protocol 3, numeric 4") {
  const auto dir = scratch("codes");
  CHECK(sicr_cli({"train", "--bogus", "1"}).code == 2);
  CHECK(sicr_cli({"frobnicate"}).code == 2);
  CHECK(sicr_cli({}).code == 2);
  CHECK(sicr_cli({"train", "--set", "train.nope=1", "--out", (dir / "a").string()}).code == 2);
  CHECK(sicr_cli({"train", "--backbone", "resnet", "--out", (dir / "a").string()}).code == 2);
  CHECK(sicr_cli({"eval", "--scenario", "3", "--out", (dir / "a").string()}).code == 2);
  CHECK(sicr_cli({"train", "--config", (dir / "missing.json").string()}).code != 0);

  auto single = small({"eval", "--scenario", "2", "--out", (dir / "b").string()});
  single.push_back("--set");
  single.push_back("cohort.num_subjects=1");
  const auto p = sicr_cli(single);
  CHECK(p.code == 3);
  CHECK(p.err.find("protocol error") != std::string::npos);

  auto blowup = small({"train", "--out", (dir / "c").string()});
  blowup.push_back("--set");
  blowup.push_back("train.lr=1e30");
  const auto n = sicr_cli(blowup);
  CHECK(n.code == 4);
}

TEST_CASE("config files, flags and --set resolve in that order") {
  const auto dir = scratch("resolve");
  std::ofstream(dir / "c.json") << R"({"seed": 3, "train": {"lr": 0.005, "seed": 9}, "scenario": 1})";
  REQUIRE(sicr_cli(small({"synth", "--config", (dir / "c.json").string(), "--out", (dir / "a").string()})).code == 0);
  auto doc = nlohmann::json::parse(slurp(dir / "a" / "config.json"));
  CHECK(doc["cohort"]["seed"] == 3);
  CHECK(doc["train"]["seed"] == 9);
  CHECK(doc["train"]["lr"] == 0.005);
  CHECK(doc["scenario"] == 1);

  REQUIRE(sicr_cli(small({"synth", "--config", (dir / "c.json").string(), "--seed", "4", "--out",
                          (dir / "b").string(), "--set", "train.lr=0.5"}))
              .code == 0);
  doc = nlohmann::json::parse(slurp(dir / "b" / "config.json"));
  CHECK(doc["train"]["seed"] == 4);
  CHECK(doc["train"]["lr"] == 0.5);

  // A written config reproduces itself.
  REQUIRE(sicr_cli({"synth", "--config", (dir / "b" / "config.json").string(), "--out", (dir / "c").string()}).code == 0);
  auto again = nlohmann::json::parse(slurp(dir / "c" / "config.json"));
  again["out"] = doc["out"];
  CHECK(again == doc);

  io::Json j{{"a", {{"b", 1}}}};
  cli::apply_override(j, "a.b=\"text\"");
  CHECK(j["a"]["b"] == "text");
  cli::apply_override(j, "a.b=plain");
  CHECK(j["a"]["b"] == "plain");
  CHECK_THROWS_AS(cli::apply_override(j, "a.c=1"), ConfigError);
  CHECK_THROWS_AS(cli::apply_override(j, "novalue"), ConfigError);
}
