#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#ifndef RCE_CLI_PATH
#error "RCE_CLI_PATH must point at the CLI binary"
#endif

namespace {

std::string temp_path(const std::string& name) {
  return testing::TempDir() + "cli_" + name;
}

// Runs the CLI through the shell. seed_env empty means RCE_SEED is scrubbed
// from the environment; otherwise it is set to the given value.
int run_cli(const std::string& args, const std::string& seed_env = "",
            const std::string& stderr_file = "/dev/null") {
  std::string prefix = seed_env.empty() ? "env -u RCE_SEED "
                                        : "env RCE_SEED=" + seed_env + " ";
  std::string cmd = prefix + std::string(RCE_CLI_PATH) + " " + args +
                    " >/dev/null 2>" + stderr_file;
  int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::vector<char> read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  EXPECT_TRUE(f.good()) << path;
  std::vector<char> bytes(static_cast<std::size_t>(f.tellg()));
  f.seekg(0);
  f.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  return bytes;
}

std::string read_text(const std::string& path) {
  std::vector<char> b = read_bytes(path);
  return std::string(b.begin(), b.end());
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  f << text;
}

// Small environment and network so the whole pipeline runs in seconds.
const char* kEnvJson = R"({"arena_size": 12.0, "obstacle_centers": []})";
const char* kTrainJson = R"({
  "epochs": 2, "batch_size": 16, "learning_rate": 0.001,
  "net": {"enc_h1": 32, "enc_h2": 32, "dec_h1": 32, "dec_h2": 32,
          "be_hx": 16, "be_hz": 5, "be_hm": 16, "lin_h1": 8, "lin_h2": 8}
})";

TEST(Cli, PipelineProducesArtifacts) {
  std::string env_json = temp_path("env.json");
  std::string train_json = temp_path("train.json");
  write_text(env_json, kEnvJson);
  write_text(train_json, kTrainJson);
  std::string data = temp_path("pipe.rced");
  std::string ckpt = temp_path("pipe.rcec");
  std::string eval_csv = temp_path("pipe_eval.csv");
  std::string plan_csv = temp_path("pipe_plan.csv");

  ASSERT_EQ(run_cli("gen-data --env planar --env-config " + env_json +
                    " --n 48 --seed 3 --out " + data),
            0);
  ASSERT_EQ(run_cli("train --data " + data + " --config " + train_json +
                    " --seed 5 --out " + ckpt),
            0);
  ASSERT_EQ(run_cli("eval --ckpt " + ckpt + " --data " + data +
                    " --report " + eval_csv),
            0);
  ASSERT_EQ(run_cli("plan --ckpt " + ckpt + " --env-config " + env_json +
                    " --runs 2 --steps 3 --horizon 4 --ilqr-iters 2 --seed 1" +
                    " --report " + plan_csv),
            0);

  std::string eval_text = read_text(eval_csv);
  EXPECT_NE(eval_text.find("# config_hash="), std::string::npos);
  EXPECT_NE(eval_text.find("reconstruction,"), std::string::npos);
  EXPECT_NE(eval_text.find("prediction,"), std::string::npos);

  std::string plan_text = read_text(plan_csv);
  EXPECT_NE(plan_text.find("run,success,planning_loss,failed,final_dist"),
            std::string::npos);
  EXPECT_NE(plan_text.find("# success_rate="), std::string::npos);

  std::string metrics_text = read_text(ckpt + ".metrics.csv");
  EXPECT_NE(metrics_text.find("epoch,mean_loss"), std::string::npos);
  EXPECT_NE(metrics_text.find("\n1,"), std::string::npos);
  EXPECT_NE(metrics_text.find("\n2,"), std::string::npos);
}

TEST(Cli, SeedEnvOverridesMakeIdenticalArtifacts) {
  std::string env_json = temp_path("env2.json");
  std::string train_json = temp_path("train2.json");
  write_text(env_json, kEnvJson);
  write_text(train_json, kTrainJson);

  auto pipeline = [&](const std::string& tag, const std::string& cmd_seed) {
    std::string data = temp_path(tag + ".rced");
    std::string ckpt = temp_path(tag + ".rcec");
    std::string eval_csv = temp_path(tag + "_eval.csv");
    std::string plan_csv = temp_path(tag + "_plan.csv");
    EXPECT_EQ(run_cli("gen-data --env-config " + env_json + " --n 32 --seed " +
                          cmd_seed + " --out " + data,
                      "77"),
              0);
    EXPECT_EQ(run_cli("train --data " + data + " --config " + train_json +
                          " --seed " + cmd_seed + " --out " + ckpt,
                      "77"),
              0);
    EXPECT_EQ(run_cli("eval --ckpt " + ckpt + " --data " + data + " --seed " +
                          cmd_seed + " --report " + eval_csv,
                      "77"),
              0);
    EXPECT_EQ(run_cli("plan --ckpt " + ckpt + " --env-config " + env_json +
                          " --runs 2 --steps 2 --horizon 3 --ilqr-iters 2" +
                          " --seed " + cmd_seed + " --report " + plan_csv,
                      "77"),
              0);
  };

  // Different command-line seeds; RCE_SEED=77 must override both.
  pipeline("a", "1");
  pipeline("b", "2");
  EXPECT_EQ(read_bytes(temp_path("a.rced")), read_bytes(temp_path("b.rced")));
  EXPECT_EQ(read_bytes(temp_path("a.rcec")), read_bytes(temp_path("b.rcec")));
  EXPECT_EQ(read_bytes(temp_path("a_eval.csv")),
            read_bytes(temp_path("b_eval.csv")));
  EXPECT_EQ(read_bytes(temp_path("a_plan.csv")),
            read_bytes(temp_path("b_plan.csv")));
}

TEST(Cli, CorruptCheckpointFailsWithDiagnostic) {
  std::string env_json = temp_path("env3.json");
  std::string train_json = temp_path("train3.json");
  write_text(env_json, kEnvJson);
  write_text(train_json, kTrainJson);
  std::string data = temp_path("c.rced");
  std::string ckpt = temp_path("c.rcec");
  ASSERT_EQ(run_cli("gen-data --env-config " + env_json +
                    " --n 20 --seed 3 --out " + data),
            0);
  ASSERT_EQ(run_cli("train --data " + data + " --config " + train_json +
                    " --seed 4 --out " + ckpt),
            0);

  std::vector<char> bytes = read_bytes(ckpt);
  bytes[bytes.size() / 2] ^= 0x10;
  std::ofstream(ckpt, std::ios::binary | std::ios::trunc)
      .write(bytes.data(), static_cast<std::streamsize>(bytes.size()));

  std::string err_file = temp_path("c.stderr");
  EXPECT_EQ(run_cli("eval --ckpt " + ckpt + " --data " + data +
                        " --report " + temp_path("c_eval.csv"),
                    "", err_file),
            1);
  std::string err = read_text(err_file);
  EXPECT_NE(err.find("error:"), std::string::npos);
  EXPECT_NE(err.find("checksum"), std::string::npos);
}

TEST(Cli, BadInvocationsFail) {
  EXPECT_NE(run_cli("train"), 0);  // missing required options
  EXPECT_NE(run_cli("gen-data --env mars --n 5 --out " + temp_path("x.rced")),
            0);
  EXPECT_NE(run_cli("no-such-command"), 0);
  EXPECT_NE(run_cli("eval --ckpt /no/such/file --data /no/such/file "
                    "--report " + temp_path("y.csv")),
            0);
  // Malformed RCE_SEED is a configuration error, not a crash.
  std::string err_file = temp_path("seed.stderr");
  EXPECT_EQ(run_cli("gen-data --n 5 --out " + temp_path("z.rced"), "12abc",
                    err_file),
            1);
  EXPECT_NE(read_text(err_file).find("RCE_SEED"), std::string::npos);
}

}  // namespace
