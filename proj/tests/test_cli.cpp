#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "metacl/checkpoint.hpp"
#include "metacl/commands.hpp"
#include "metacl/config.hpp"

using namespace metacl;
namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"(seed = 3
data.source = gaussian
data.input_dim = 4
data.train_classes = 12
data.test_classes = 8
data.classes_per_task = 4
data.shots = 3
model.encoder_widths = 8
model.rep_dim = 8
meta.inner_steps = 2
meta.truncation = 3
meta.maml_ways = 2
meta.iterations = 6
meta.checkpoint_every = 3
eval.tasks = 3
eval.test_samples_per_class = 2
eval.iid_epochs = 2
sweep.lrs = 0.01, 0.1
sweep.tasks = 2
sweep.iterations = 4
)";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("metacl_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    write("tiny.conf", kTinyConfig);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write(const std::string& name, const std::string& text) {
    std::ofstream(dir_ / name) << text;
    return dir_ / name;
  }

  CommandOptions opts(const std::string& out) {
    CommandOptions o;
    o.config = dir_ / "tiny.conf";
    o.out = dir_ / out;
    o.err = &err_;
    return o;
  }

  fs::path dir_;
  std::ostringstream err_;
};

int run_cli(const std::string& args) {
  const std::string cmd = std::string(METACL_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(RunConfigParse, DefaultPresetMatchesShippedFile) {
  const auto cfg = parse_run_config(default_config_text());
  EXPECT_NO_THROW(validate_run_config(cfg));
  EXPECT_EQ(cfg.data.classes_per_task, 10u);
  EXPECT_EQ(cfg.inner_lr_mrcl, 0.03);
  EXPECT_EQ(cfg.inner_lr_maml, 0.5);
  EXPECT_FALSE(cfg.eval_head_lr.has_value());
  EXPECT_EQ(slurp(fs::path(METACL_SOURCE_DIR) / "configs" / "desk.conf"), default_config_text());
}

TEST(RunConfigParse, UnknownKeyNamesLine) {
  try {
    parse_run_config("seed = 1\nmeta.bogus = 2\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("meta.bogus"), std::string::npos);
  }
}

TEST(RunConfigParse, RejectsMalformedValues) {
  EXPECT_THROW(parse_run_config("seed = abc\n"), ConfigError);
  EXPECT_THROW(parse_run_config("meta.partition = sideways\n"), ConfigError);
  EXPECT_THROW(parse_run_config("no equals sign\n"), ConfigError);
}

TEST(RunConfigParse, CommentsListsAndAutoHeadLr) {
  const auto cfg = parse_run_config("# note\nsweep.lrs = 0.1, 0.2\neval.head_lr = 0.07\nmodel.encoder_widths = 4, 5\n");
  EXPECT_EQ(cfg.sweep_lrs, (std::vector<double>{0.1, 0.2}));
  ASSERT_TRUE(cfg.eval_head_lr.has_value());
  EXPECT_EQ(*cfg.eval_head_lr, 0.07);
  EXPECT_EQ(cfg.model.encoder_widths, (std::vector<std::size_t>{4, 5}));
}

TEST(RunConfigParse, MissingFileIsConfigError) {
  EXPECT_THROW(load_run_config("/nonexistent/metacl.conf"), ConfigError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  ModelConfig m;
  m.input_dim = 3;
  m.encoder_widths = {4};
  m.rep_dim = 5;
  m.output_dim = 2;
  Checkpoint c{init_params(m, 12), {{"objective", "mrcl"}, {"inner_lr", "0.03"}}};
  const auto back = checkpoint_from_string(checkpoint_to_string(c));
  EXPECT_EQ(back.params.checksum(), c.params.checksum());
  EXPECT_EQ(back.metadata, c.metadata);
  EXPECT_TRUE(structurally_compatible(back.params, c.params));
}

TEST(Checkpoint, MalformedDocumentThrows) {
  EXPECT_THROW(checkpoint_from_string("{not json"), CheckpointError);
  EXPECT_THROW(checkpoint_from_string("{\"version\": 99, \"params\": []}"), CheckpointError);
}

TEST_F(CliTest, MissingConfigExitsTwoAndNamesPath) {
  auto o = opts("out");
  o.config = dir_ / "missing.conf";
  EXPECT_EQ(cmd_meta_train(o), kExitConfig);
  EXPECT_NE(err_.str().find("missing.conf"), std::string::npos);
}

TEST_F(CliTest, UnknownConfigKeyExitsTwo) {
  auto o = opts("out");
  o.config = write("bad.conf", "seed = 1\nfoo.bar = 2\n");
  EXPECT_EQ(cmd_meta_train(o), kExitConfig);
}

TEST_F(CliTest, UnknownCommandIsRejected) {
  EXPECT_NE(run_command("dance", opts("out")), kExitOk);
}

TEST_F(CliTest, TrainWritesLogAndCheckpoints) {
  auto o = opts("a");
  o.objective = Objective::Mrcl;
  ASSERT_EQ(cmd_meta_train(o), kExitOk) << err_.str();
  EXPECT_TRUE(fs::exists(dir_ / "a" / "run_log_mrcl.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "a" / "mrcl_iter3.ckpt.json"));
  EXPECT_TRUE(fs::exists(dir_ / "a" / "mrcl_iter6.ckpt.json"));
  const auto ck = load_checkpoint(dir_ / "a" / "mrcl_final.ckpt.json");
  EXPECT_EQ(ck.metadata.at("objective"), "mrcl");
  EXPECT_EQ(ck.metadata.at("iteration"), "6");
}

TEST_F(CliTest, TrainIsByteReproducible) {
  for (const char* out : {"a", "b"}) {
    auto o = opts(out);
    o.objective = Objective::Maml;
    ASSERT_EQ(cmd_meta_train(o), kExitOk) << err_.str();
  }
  EXPECT_EQ(slurp(dir_ / "a" / "run_log_maml.csv"), slurp(dir_ / "b" / "run_log_maml.csv"));
  EXPECT_EQ(slurp(dir_ / "a" / "maml_final.ckpt.json"), slurp(dir_ / "b" / "maml_final.ckpt.json"));
}

TEST_F(CliTest, SeedOverrideChangesRun) {
  auto a = opts("a");
  auto b = opts("b");
  b.seed = 99;
  ASSERT_EQ(cmd_meta_train(a), kExitOk);
  ASSERT_EQ(cmd_meta_train(b), kExitOk);
  EXPECT_NE(slurp(dir_ / "a" / "run_log_mrcl.csv"), slurp(dir_ / "b" / "run_log_mrcl.csv"));
}

TEST_F(CliTest, EvalSingleCheckpointHasNoPairedColumn) {
  auto t = opts("t");
  ASSERT_EQ(cmd_meta_train(t), kExitOk) << err_.str();
  auto e = opts("e");
  e.checkpoints = {dir_ / "t" / "mrcl_final.ckpt.json"};
  ASSERT_EQ(cmd_eval(e), kExitOk) << err_.str();
  const auto summary = slurp(dir_ / "e" / "summary.csv");
  EXPECT_EQ(summary.find("paired"), std::string::npos);
  EXPECT_EQ(slurp(dir_ / "e" / "online_train.csv").rfind("encoder_name,protocol,classes_seen,mean_acc,ci_halfwidth\n", 0),
            0u);
  for (const char* f : {"online_test.csv", "iid_train.csv", "iid_test.csv"}) EXPECT_TRUE(fs::exists(dir_ / "e" / f));
}

TEST_F(CliTest, EvalTwoCheckpointsHasPairedColumn) {
  for (auto obj : {Objective::Mrcl, Objective::Maml}) {
    auto t = opts("t");
    t.objective = obj;
    ASSERT_EQ(cmd_meta_train(t), kExitOk) << err_.str();
  }
  auto e = opts("e");
  e.checkpoints = {dir_ / "t" / "mrcl_final.ckpt.json", dir_ / "t" / "maml_final.ckpt.json"};
  ASSERT_EQ(cmd_eval(e), kExitOk) << err_.str();
  EXPECT_NE(slurp(dir_ / "e" / "summary.csv").find("paired_diff_vs_mrcl"), std::string::npos);
}

TEST_F(CliTest, IncompatibleCheckpointsExitFour) {
  auto t = opts("t");
  ASSERT_EQ(cmd_meta_train(t), kExitOk) << err_.str();
  ModelConfig m;
  m.input_dim = 4;
  m.encoder_widths = {3};
  m.rep_dim = 8;
  m.output_dim = 4;
  save_checkpoint(dir_ / "other.ckpt.json", {init_params(m, 0), {{"objective", "other"}}});
  auto e = opts("e");
  e.checkpoints = {dir_ / "t" / "mrcl_final.ckpt.json", dir_ / "other.ckpt.json"};
  EXPECT_EQ(cmd_eval(e), kExitIncompatible);
}

TEST_F(CliTest, MissingCheckpointExitsTwo) {
  auto e = opts("e");
  e.checkpoints = {dir_ / "nope.ckpt.json"};
  EXPECT_EQ(cmd_eval(e), kExitConfig);
}

TEST_F(CliTest, SweepWritesTableAndBestCheckpoint) {
  auto s = opts("s");
  s.objective = Objective::Mrcl;
  ASSERT_EQ(cmd_sweep(s), kExitOk) << err_.str();
  const auto table = slurp(dir_ / "s" / "sweep_mrcl.csv");
  EXPECT_EQ(table.rfind("inner_lr,final_train_acc,final_test_acc,final_outer_loss\n", 0), 0u);
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 3);
  EXPECT_TRUE(fs::exists(dir_ / "s" / "sweep_mrcl_best.ckpt.json"));
}

TEST_F(CliTest, AblationWritesBothTables) {
  ASSERT_EQ(cmd_ablation(opts("x")), kExitOk) << err_.str();
  const auto summary = slurp(dir_ / "x" / "ablation_summary.csv");
  for (const char* v : {"encoder_only", "full_init_updated_at_test", "full_init_frozen_at_test"})
    EXPECT_NE(summary.find(v), std::string::npos) << v;
  EXPECT_TRUE(fs::exists(dir_ / "x" / "ablation.csv"));
}

TEST_F(CliTest, ExecutableExitCodes) {
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("train --objective nonsense"), kExitConfig);
  EXPECT_EQ(run_cli("train --config " + (dir_ / "missing.conf").string()), kExitConfig);
  EXPECT_EQ(run_cli("train --config " + (dir_ / "tiny.conf").string() + " --out " + (dir_ / "o").string()), 0);
  EXPECT_TRUE(fs::exists(dir_ / "o" / "mrcl_final.ckpt.json"));
}
