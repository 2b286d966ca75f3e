#include "latentshift/artifacts.hpp"
#include "latentshift/attribution.hpp"
#include "latentshift/rng.hpp"

#include "toy_models.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

using namespace latentshift;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / ("latentshift_cli_" + std::to_string(::getpid()));

struct CliRun {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

CliRun cli(const std::string& args) {
  fs::create_directories(kRoot);
  const fs::path out = kRoot / "stdout.txt", err = kRoot / "stderr.txt";
  const std::string cmd = std::string(LATENTSHIFT_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::string at(const std::string& name) { return (kRoot / name).string(); }

/// Dataset, classifier and autoencoder produced by the CLI itself; built once.
void workspace() {
  static const bool ready = [] {
    fs::remove_all(kRoot);
    EXPECT_EQ(cli("synth --count 200 --size 32 --seed 4 --out " + at("data")).code, 0);
    const CliRun clf = cli("train-clf --data " + at("data") + " --epochs 2 --lr 3e-3 --seed 4 --out " + at("clf"));
    EXPECT_EQ(clf.code, 0) << clf.err;
    const CliRun ae = cli("train-ae --data " + at("data") + " --epochs 1 --seed 4 --out " + at("ae"));
    EXPECT_EQ(ae.code, 0) << ae.err;
    return true;
  }();
  (void)ready;
}

std::vector<std::map<std::string, std::string>> csv_rows(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  std::vector<std::string> header;
  {
    std::istringstream h(line);
    std::string c;
    while (std::getline(h, c, ',')) header.push_back(c);
  }
  std::vector<std::map<std::string, std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream l(line);
    std::map<std::string, std::string> row;
    std::string c;
    for (std::size_t i = 0; i < header.size() && std::getline(l, c, ','); ++i) row[header[i]] = c;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string first_sample_id() {
  std::ifstream f(kRoot / "data" / "labels.csv");
  std::string line;
  std::getline(f, line);
  std::getline(f, line);
  return line.substr(0, line.find(','));
}

}  // namespace

TEST(Cli, SynthIsDeterministic) {
  ASSERT_EQ(cli("synth --count 30 --size 32 --seed 11 --out " + at("s1")).code, 0);
  ASSERT_EQ(cli("synth --count 30 --size 32 --seed 11 --out " + at("s2")).code, 0);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(kRoot / "s1")) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), kRoot / "s1");
    EXPECT_EQ(slurp(e.path()), slurp(kRoot / "s2" / rel)) << rel;
    ++files;
  }
  EXPECT_GE(files, 31u);
}

TEST(Cli, ExitCodes) {
  workspace();
  EXPECT_EQ(cli("synth --count 5 --size 32 --out " + at("data")).code, 2);
  EXPECT_EQ(cli("synth --count 5 --size 33 --out " + at("x")).code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
  const std::string base = "explain --data " + at("data") + " --model " + at("clf") + " --ae " + at("ae") + " --sample " + first_sample_id() +
                           " --task bigheart --out " + at("ex_codes") + " --overwrite";
  EXPECT_EQ(cli(base + " --method nope").code, 2);
  EXPECT_EQ(cli("explain --data " + at("data") + " --model " + at("absent") + " --sample a --task bigheart --out " + at("ex_missing")).code, 3);
  EXPECT_EQ(cli("eval iou --data " + at("absent") + " --model " + at("clf") + " --out " + at("ev_missing")).code, 3);
  EXPECT_EQ(cli("eval nope --data " + at("data") + " --model " + at("clf") + " --out " + at("ev_bad")).code, 2);
  EXPECT_EQ(cli("explain --data " + at("data") + " --model " + at("clf") +
                " --sample nope --task bigheart --out " + at("ex_nosample")).code, 3);
}

TEST(Cli, UntrainedAutoencoderMatchesInitialization) {
  workspace();
  const CliRun r = cli("train-ae --data " + at("data") + " --epochs 0 --seed 21 --out " + at("ae0"));
  ASSERT_EQ(r.code, 0) << r.err;
  ArchitectureConfig arch;
  arch.image_size = 32;
  const Autoencoder expected = make_autoencoder(arch, derive_seed(21, "autoencoder"));
  const Autoencoder got = load_autoencoder(kRoot / "ae0");
  EXPECT_TRUE(expected.encoder == got.encoder);
  EXPECT_TRUE(expected.decoder == got.decoder);
  EXPECT_EQ(got.bottleneck_size, 256);
}

TEST(Cli, ConfigFileAndFlagsHashAlike) {
  workspace();
  ASSERT_EQ(cli("train-ae --data " + at("data") + " --epochs 0 --seed 7 --bottleneck 32 --out " + at("h1")).code, 0);
  std::ofstream(kRoot / "run.toml") << "[train-ae]\ndata = \"" << at("data") << "\"\nepochs = 0\nseed = 7\nbottleneck = 32\n";
  const CliRun r = cli("train-ae --config " + at("run.toml") + " --out " + at("h2"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m1 = read_manifest(kRoot / "h1"), m2 = read_manifest(kRoot / "h2");
  EXPECT_EQ(m1.data["config_hash"], m2.data["config_hash"]);
  ASSERT_EQ(cli("train-ae --data " + at("data") + " --epochs 0 --seed 8 --bottleneck 32 --out " + at("h3")).code, 0);
  EXPECT_NE(read_manifest(kRoot / "h3").data["config_hash"], m1.data["config_hash"]);
}

TEST(Cli, ExplainWritesArtifacts) {
  workspace();
  const CliRun r = cli("explain --data " + at("data") + " --model " + at("clf") + " --ae " + at("ae") + " --sample " + first_sample_id() +
                    " --task bigheart --ig-steps 4 --out " + at("ex"));
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"explain.json", "sweep.json", "sweep.gif", "strip.png", "frames.ckpt", "maps/grad.png",
                        "maps/latentshift-max.png", "overlays/grad.png"})
    EXPECT_TRUE(fs::exists(kRoot / "ex" / f)) << f;
  EXPECT_EQ(cli("explain --data " + at("data") + " --model " + at("clf") + " --ae " + at("ae") + " --sample " + first_sample_id() +
                " --task bigheart --method grad --out " + at("ex")).code, 2);
}

TEST(Cli, ZeroGradientExplainWarns) {
  workspace();
  Classifier flat = toy::constant_classifier({1, 32, 32});
  flat.task_names = {"bigheart"};
  save_classifier(kRoot / "flat", flat);
  const CliRun r = cli("explain --data " + at("data") + " --model " + at("flat") + " --ae " + at("ae") + " --sample " + first_sample_id() +
                    " --task bigheart --method grad --method latentshift-max --out " + at("ex_flat"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("warning"), std::string::npos);
  EXPECT_NE(r.err.find("zero"), std::string::npos);
  EXPECT_TRUE(fs::exists(kRoot / "ex_flat" / "sweep.gif"));
}

TEST(Cli, EvalSuites) {
  workspace();
  const std::string common = " --data " + at("data") + " --model " + at("clf") + " --ae " + at("ae");

  const CliRun iou = cli("eval iou" + common + " --samples 2 --ig-steps 4 --out " + at("ev_iou"));
  ASSERT_EQ(iou.code, 0) << iou.err;
  const auto iou_rows = csv_rows(slurp(kRoot / "ev_iou" / "iou.csv"));
  std::map<std::string, int> per_method;
  for (const auto& row : iou_rows) ++per_method[row.at("method")];
  EXPECT_EQ(per_method.size(), all_methods().size() + 1);
  EXPECT_EQ(per_method["random"], 3);
  EXPECT_EQ(iou_rows.size(), 3 * (all_methods().size() + 1));
  EXPECT_TRUE(fs::exists(kRoot / "ev_iou" / "iou.json"));

  const CliRun auc = cli("eval auc" + common + " --out " + at("ev_auc"));
  ASSERT_EQ(auc.code, 0) << auc.err;
  EXPECT_EQ(csv_rows(auc.out).size(), 3u);

  const CliRun cascade = cli("eval cascade" + common + " --images 2 --method grad --task bigheart --out " + at("ev_cas"));
  ASSERT_EQ(cascade.code, 0) << cascade.err;
  int depth0 = 0;
  for (const auto& row : csv_rows(slurp(kRoot / "ev_cas" / "cascade.csv")))
    if (row.at("depth") == "0") {
      ++depth0;
      EXPECT_DOUBLE_EQ(std::stod(row.at("mean")), 1.0);
    }
  EXPECT_EQ(depth0, 1);

  const CliRun robust = cli("eval robust" + common +
                         " --images 2 --task blob --perturbation gaussian-noise --scales 0 50 --out " + at("ev_rob"));
  ASSERT_EQ(robust.code, 0) << robust.err;
  const auto rob = csv_rows(slurp(kRoot / "ev_rob" / "robust.csv"));
  EXPECT_EQ(rob.size(), 4u);
  for (const auto& row : rob)
    if (row.at("scale") == "0" && row.at("metric") == "spearman" && row.at("skipped").empty())
      EXPECT_DOUBLE_EQ(std::stod(row.at("mean")), 1.0);

  const CliRun sweep = cli("eval bottleneck-sweep" + common +
                        " --bottlenecks 8 32 128 512 --epochs 1 --samples 2 --out " + at("ev_bn"));
  ASSERT_EQ(sweep.code, 0) << sweep.err;
  int mae = 0;
  for (const auto& row : csv_rows(slurp(kRoot / "ev_bn" / "bottleneck-sweep.csv"))) {
    if (row.at("metric") != "mae") continue;
    ++mae;
    EXPECT_GT(std::stod(row.at("mean")), 0.0);
  }
  EXPECT_EQ(mae, 4);
}

TEST(Cli, Cleanup) { fs::remove_all(kRoot); }
