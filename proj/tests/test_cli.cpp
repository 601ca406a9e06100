#include "doctest.h"

#include "diffcap/cli.hpp"
#include "diffcap/io.hpp"

#include "helpers.hpp"
#include "json.hpp"

#include <filesystem>
#include <sstream>

using namespace diffcap;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

// Output directories must exist before a subcommand runs.
std::string fresh(const std::string& path) {
  std::filesystem::create_directories(path);
  return path;
}

std::vector<std::string> with(std::vector<std::string> base, const std::vector<std::string>& more) {
  base.insert(base.end(), more.begin(), more.end());
  return base;
}

// Small model and corpus shared by the subcommand tests.
const std::vector<std::string> kTiny{"--embed-dim", "8",  "--d-model", "16",   "--n-layers",  "1",
                                     "--n-heads",   "2",  "--ff-mult", "2",    "--T",         "20",
                                     "--steps",     "6",  "--warmup",  "2",    "--batch-size", "4",
                                     "--views",     "2",  "--samples", "2",    "--inference-steps", "5",
                                     "--max-views", "4",  "--n-shapes", "6",   "--train-fraction", "0.5"};

std::string prepared_dir() {
  static const std::string dir = [] {
    const std::string d = testing::temp_dir("cli");
    REQUIRE(cli(with({"gen-data", "--out", fresh(d + "/data")}, kTiny)).code == 0);
    REQUIRE(cli(with({"train", "--dataset", d + "/data/corpus.jsonl", "--out", fresh(d + "/run")}, kTiny)).code == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("gen-data writes a deterministic corpus and manifest") {
  const std::string d = testing::temp_dir("cli_gen");
  REQUIRE(cli(with({"gen-data", "--out", fresh(d + "/a")}, kTiny)).code == 0);
  REQUIRE(cli(with({"gen-data", "--out", fresh(d + "/b")}, kTiny)).code == 0);
  CHECK(read_file(d + "/a/corpus.jsonl") == read_file(d + "/b/corpus.jsonl"));
  const json m = json::parse(read_file(d + "/a/manifest.json"));
  CHECK(m.contains("config_hash"));
  CHECK(m.at("seed") == 0);
  int lines = 0;
  for (char ch : read_file(d + "/a/corpus.jsonl")) lines += ch == '\n';
  CHECK(lines == 6);
}

TEST_CASE("usage errors exit with 2") {
  const std::string d = testing::temp_dir("cli_usage");
  CHECK(cli({}).code == 2);
  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({"gen-data", "--out", d, "--n-shapes", "0"}).code == 2);
  CHECK(cli({"gen-data", "--out", d, "--set", "nonsense=1"}).code == 2);
  CHECK(cli({"inspect-schedule", "--out", d, "--schedule", "bogus"}).code == 2);
  CHECK(cli({"inspect-schedule", "--out", d, "--T", "10", "--respace", "11"}).code == 2);
  CHECK(cli({"gen-data", "--out", d, "--pooling", "median"}).code == 2);
}

TEST_CASE("I/O errors exit with 1") {
  const std::string d = testing::temp_dir("cli_io");
  CHECK(cli({"train", "--dataset", d + "/missing.jsonl", "--out", fresh(d + "/x")}).code == 1);
  CHECK(cli({"caption", "--dataset", d + "/missing.jsonl", "--checkpoint", d + "/none", "--out", d}).code == 1);
  CHECK(cli({"gen-data", "--config", d + "/missing.cfg", "--out", d}).code == 1);
}

TEST_CASE("a diverging run exits with 3") {
  const std::string d = prepared_dir();
  const Run r = cli(with({"train", "--dataset", d + "/data/corpus.jsonl", "--out", fresh(d + "/nan")}, kTiny));
  REQUIRE(r.code == 0);
  const Run bad = cli(with(with({"train", "--dataset", d + "/data/corpus.jsonl", "--out", fresh(d + "/nan2")}, kTiny),
                           {"--lr", "1e30", "--grad-clip", "0"}));
  CHECK(bad.code == 3);
  CHECK(bad.err.find("step") != std::string::npos);
}

TEST_CASE("train writes its artifacts with provenance") {
  const std::string d = prepared_dir();
  for (const char* f : {"config.txt", "curve.csv", "checkpoint/manifest.json", "checkpoint/params.bin",
                        "checkpoint/vocab.txt"})
    CHECK(std::filesystem::exists(d + "/run/" + f));
  const std::string curve = read_file(d + "/run/curve.csv");
  CHECK(curve.rfind("# config_hash=", 0) == 0);
  const json m = json::parse(read_file(d + "/run/checkpoint/manifest.json"));
  CHECK(m.at("format") == "diffcap-checkpoint");
  CHECK(m.at("step") == 6);
}

TEST_CASE("train is deterministic and resumes exactly") {
  const std::string d = prepared_dir();
  const std::string data = d + "/data/corpus.jsonl";
  REQUIRE(cli(with({"train", "--dataset", data, "--out", fresh(d + "/again")}, kTiny)).code == 0);
  CHECK(checkpoint_hash(d + "/run/checkpoint") == checkpoint_hash(d + "/again/checkpoint"));
  REQUIRE(cli(with({"train", "--dataset", data, "--out", fresh(d + "/half"), "--stop-at", "3"}, kTiny)).code == 0);
  CHECK(checkpoint_hash(d + "/half/checkpoint") != checkpoint_hash(d + "/run/checkpoint"));
  REQUIRE(cli(with({"train", "--dataset", data, "--out", fresh(d + "/rest"), "--resume", d + "/half"}, kTiny)).code == 0);
  CHECK(checkpoint_hash(d + "/rest/checkpoint") == checkpoint_hash(d + "/run/checkpoint"));
  CHECK(read_file(d + "/rest/curve.csv") == read_file(d + "/run/curve.csv"));
}

TEST_CASE("caption emits the documented record and is deterministic") {
  const std::string d = prepared_dir();
  const auto base = with({"caption", "--dataset", d + "/data/corpus.jsonl", "--checkpoint", d + "/run/checkpoint",
                          "--split", "all"},
                         kTiny);
  REQUIRE(cli(with(base, {"--out", fresh(d + "/cap1"), "--timings", "false"})).code == 0);
  REQUIRE(cli(with(base, {"--out", fresh(d + "/cap2"), "--timings", "false"})).code == 0);
  const std::string text = read_file(d + "/cap1/captions.json");
  CHECK(text == read_file(d + "/cap2/captions.json"));
  const json doc = json::parse(text);
  CHECK(doc.at("checkpoint_hash") == checkpoint_hash(d + "/run/checkpoint"));
  REQUIRE(doc.at("records").size() == 6);
  const json& r = doc.at("records")[0];
  CHECK(r.at("views").size() == 2);
  const json& v = r.at("views")[0];
  CHECK(v.at("candidates").size() == 2);
  CHECK(v.at("selected").get<int>() < 2);
  CHECK(v.at("candidates")[0].contains("risk"));
  CHECK(r.at("caption").is_string());
  CHECK_FALSE(r.contains("timings"));

  REQUIRE(cli(with(base, {"--out", fresh(d + "/cap3"), "--shape", "shape-00001"})).code == 0);
  const json one = json::parse(read_file(d + "/cap3/captions.json"));
  REQUIRE(one.at("records").size() == 1);
  CHECK(one.at("records")[0].at("shape_id") == "shape-00001");
  CHECK(one.at("records")[0].at("timings").at("total_ms").get<double>() >= 0.0);

  CHECK(cli(with(base, {"--out", fresh(d + "/cap4"), "--shape", "shape-99999"})).code == 2);
  CHECK(cli(with(base, {"--out", fresh(d + "/cap5"), "--drop-part", "nosuchpart"})).code == 2);
  CHECK(cli(with(base, {"--out", fresh(d + "/cap6"), "--drop-part", "legs"})).code == 0);
  CHECK(cli(with(base, {"--out", fresh(d + "/cap7"), "--inference-steps", "21"})).code == 2);
}

TEST_CASE("eval scores the oracle perfectly") {
  const std::string d = prepared_dir();
  const auto base = with({"eval", "--dataset", d + "/data/corpus.jsonl", "--checkpoint", d + "/run/checkpoint"},
                         kTiny);
  REQUIRE(cli(with(base, {"--out", fresh(d + "/ev"), "--oracle", "--split", "all"})).code == 0);
  const json m = json::parse(read_file(d + "/ev/metrics.json"));
  CHECK(m.at("metrics").at("bleu4").get<double>() == doctest::Approx(1.0));
  CHECK(m.at("metrics").at("exact_match").get<double>() == doctest::Approx(1.0));
  CHECK(m.contains("config_hash"));
  CHECK(read_file(d + "/ev/metrics.csv").rfind("# config_hash=", 0) == 0);
}

TEST_CASE("ablate writes one row per value") {
  const std::string d = prepared_dir();
  const auto base = with({"ablate", "--dataset", d + "/data/corpus.jsonl", "--checkpoint", d + "/run/checkpoint"},
                         kTiny);
  REQUIRE(cli(with(base, {"--out", fresh(d + "/abl"), "--axis", "S", "--values", "1,2,3"})).code == 0);
  const std::string csv = read_file(d + "/abl/ablate_S.csv");
  int rows = 0;
  for (char ch : csv) rows += ch == '\n';
  CHECK(rows == 5);  // provenance, header, three values
  CHECK(csv.find("axis,value,checkpoint_hash,bleu1") != std::string::npos);
  REQUIRE(cli(with(base, {"--out", fresh(d + "/ablv"), "--axis", "V", "--values", "1,2"})).code == 0);
  const std::string v = read_file(d + "/ablv/ablate_V.csv");
  const std::string hash = checkpoint_hash(d + "/run/checkpoint");
  CHECK(v.find("V,1," + hash) != std::string::npos);
  CHECK(v.find("V,2," + hash) != std::string::npos);
  CHECK(cli(with(base, {"--out", fresh(d + "/abl2"), "--axis", "S", "--axis", "V", "--values", "1"})).code == 2);
  CHECK(cli(with(base, {"--out", fresh(d + "/abl3"), "--axis", "Q", "--values", "1"})).code == 2);
}

TEST_CASE("inspect-schedule dumps the coefficients") {
  const std::string d = testing::temp_dir("cli_sched");
  REQUIRE(cli({"inspect-schedule", "--out", d, "--T", "10"}).code == 0);
  const std::string csv = read_file(d + "/schedule.csv");
  CHECK(csv.find("t,beta,alpha_bar,c_xt,c_x0,var") != std::string::npos);
  int rows = 0;
  for (char ch : csv) rows += ch == '\n';
  CHECK(rows == 12);
  REQUIRE(cli({"inspect-schedule", "--out", fresh(d + "/r"), "--T", "10", "--respace", "5"}).code == 0);
  CHECK(read_file(d + "/r/schedule.csv").find("timestep") != std::string::npos);
}
