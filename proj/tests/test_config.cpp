// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "amuse/cli.hpp"

using namespace amuse;
namespace fs = std::filesystem;

namespace {

using Flags = std::vector<std::pair<std::string, std::string>>;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "amuse_test_config" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int cli(std::vector<std::string> args, std::string* out_text = nullptr) {
  args.insert(args.begin(), "amuse");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str() + err.str();
  return code;
}

std::vector<std::string> tiny_run(const fs::path& out_dir) {
  return {"train", "--synth_n", "90", "--synth_d", "5", "--synth_k", "3", "--hidden", "[8, 6]",
          "--optimizer", "sf_muon", "--steps", "12", "--batch_size", "30", "--eval_every", "4",
          "--checkpoint_every", "6", "--out_dir", out_dir.string()};
}

class ConfigTest : public ::testing::Test {
 protected:
  void SetUp() override { ::unsetenv("AMUSE_OUT_ROOT"); }
};

}  // namespace

TEST_F(ConfigTest, ManifestListsEveryKeyWithDefaults) {
  const RunConfig rc = parse_config("", {});
  const auto m = manifest_json(rc, "train");
  EXPECT_EQ(m["config"].size(), config_keys().size());
  EXPECT_EQ(m["config"]["lr"]["value"], 1e-3);
  EXPECT_EQ(m["config"]["lr"]["source"], "default");
  EXPECT_EQ(m["config"]["hidden"]["value"], nlohmann::ordered_json::array({200, 200}));
}

TEST_F(ConfigTest, UnknownKeysAndBadValuesAreConfigErrors) {
  EXPECT_THROW(parse_config("", Flags{{"learning_rate", "0.1"}}), ConfigError);
  EXPECT_THROW(parse_config("", Flags{{"lr", "fast"}}), ConfigError);
  EXPECT_THROW(parse_config("", Flags{{"optimizer", "lion"}}), ConfigError);
  try {
    parse_config("", Flags{{"rho", "2"}});
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("[0, 1]"), std::string::npos);
  }
  try {
    parse_config("", Flags{{"dataset", "idx"}, {"idx_images", "/nonexistent/images"}, {"idx_labels", "/nonexistent/l"}});
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/images"), std::string::npos);
  }
}

TEST_F(ConfigTest, PrecedenceIsDefaultEnvFileFlag) {
  const fs::path dir = scratch("precedence");
  write_text(dir / "cfg.json", R"({"lr": 0.02, "steps": 77, "out_dir": "from-file"})");
  ::setenv("AMUSE_OUT_ROOT", "from-env", 1);
  RunConfig rc = parse_config("", {});
  EXPECT_EQ(rc.out_dir, "from-env");
  EXPECT_EQ(rc.source["out_dir"], Source::env);
  rc = parse_config((dir / "cfg.json").string(), Flags{{"lr", "0.5"}});
  ::unsetenv("AMUSE_OUT_ROOT");
  EXPECT_EQ(rc.train.opt.lr, 0.5);
  EXPECT_EQ(rc.source["lr"], Source::flag);
  EXPECT_EQ(rc.train.steps, 77u);
  EXPECT_EQ(rc.source["steps"], Source::file);
  EXPECT_EQ(rc.out_dir, "from-file");
  EXPECT_EQ(rc.source["batch_size"], Source::default_value);
}

TEST_F(ConfigTest, ManifestRoundTripsThroughTheParser) {
  const fs::path dir = scratch("manifest");
  const RunConfig a = parse_config("", Flags{{"rho", "0.6"}, {"optimizer", "amuse"}, {"alphas", "[0, 0.5, 1]"}});
  write_text(dir / "manifest.json", manifest_json(a, "train").dump(2));
  const RunConfig b = parse_config((dir / "manifest.json").string(), {});
  EXPECT_EQ(b.source.at("rho"), Source::file);
  for (const auto& k : config_keys()) EXPECT_EQ(k.get(a), k.get(b)) << k.name;
}

TEST_F(ConfigTest, CliExitCodes) {
  std::string text;
  EXPECT_EQ(cli({}, &text), kExitUsage);
  EXPECT_EQ(cli({"train", "--lr", "-1"}, &text), kExitUsage);
  EXPECT_NE(text.find("lr"), std::string::npos);
  EXPECT_EQ(cli({"train", "--dataset", "idx", "--idx_images", "/nope", "--idx_labels", "/nope"}), kExitUsage);
  EXPECT_EQ(cli({"probe", "--checkpoint", "/nope.bin", "--out", scratch("probe").string()}), kExitUsage);
  EXPECT_EQ(cli({"quadratic", "--lambda", "4", "--eta", "0.5", "--a0", "0.3", "--b0", "2", "--iters", "2", "--mode",
                 "matrix_normalized"},
                &text),
            kExitOk);
  EXPECT_NE(text.find("-0.2"), std::string::npos);
  EXPECT_EQ(cli({"verify"}, &text), kExitOk) << text;
}

TEST_F(ConfigTest, TrainWritesRunDirectoryAndReproducesFromManifest) {
  const fs::path a = scratch("run-a"), b = scratch("run-b");
  ASSERT_EQ(cli(tiny_run(a)), kExitOk);
  const fs::path run = a / "train-sf_muon-0";
  ASSERT_TRUE(fs::is_directory(run));
  for (const char* f : {"manifest.json", "train-sf_muon-0.csv", "final.bin", "ckpt-0000006.bin", "ckpt-0000012.bin"})
    EXPECT_TRUE(fs::exists(run / f)) << f;

  ASSERT_EQ(cli({"train", "--config", (run / "manifest.json").string(), "--out_dir", b.string()}), kExitOk);
  EXPECT_EQ(read_text(run / "train-sf_muon-0.csv"), read_text(b / "train-sf_muon-0" / "train-sf_muon-0.csv"));

  // downstream subcommands on the same run
  ASSERT_EQ(cli({"ewa", "--run-dir", run.string(), "--synth_n", "90", "--synth_d", "5", "--synth_k", "3"}), kExitOk);
  EXPECT_TRUE(fs::exists(run / "ewa.csv"));
  const fs::path probe = scratch("probe-out");
  ASSERT_EQ(cli({"probe", "--checkpoint", (run / "final.bin").string(), "--out", probe.string(), "--config",
                 (run / "manifest.json").string(), "--k", "3", "--lanczos_tol", "1e-3"}),
            kExitOk);
  EXPECT_TRUE(fs::exists(probe / "eigenvalues.csv"));
  EXPECT_TRUE(fs::exists(probe / "alpha.csv"));
  std::string text;
  ASSERT_EQ(cli({"decay", "--checkpoint", (run / "final.bin").string(), "--config", (run / "manifest.json").string(),
                 "--decay_steps", "3"},
                &text),
            kExitOk);
  EXPECT_NE(text.find("step"), std::string::npos);
}
