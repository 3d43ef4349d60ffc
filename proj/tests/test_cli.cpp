#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <sys/wait.h>

#include "sfi/commands.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace sfi;

namespace {

struct Outcome {
  int code = -1;
  std::string output;  // stdout and stderr interleaved
};

Outcome run(const std::string& args, const std::string& env = {}) {
  const std::string cmd = env + (env.empty() ? "" : " ") + std::string(SFI_BINARY) + " " + args + " 2>&1";
  Outcome r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  while (auto n = std::fread(buf.data(), 1, buf.size(), pipe)) r.output.append(buf.data(), n);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

/// A scratch directory removed on destruction.
struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("sfi_cli_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string tiny(const fs::path& out) { return "--preset tiny --set run.out_dir=" + out.string(); }

}  // namespace

TEST(Cli, MissingConfigFileExitsTwoAndNamesThePath) {
  auto r = run("train -c /nonexistent/dir/run.cfg");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("/nonexistent/dir/run.cfg"), std::string::npos) << r.output;
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("train --bogus").code, 2);
  auto r = run("train --preset tiny --set train.nonsense=1");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("train.nonsense"), std::string::npos) << r.output;
  EXPECT_EQ(run("train --preset tiny --set mff.gamma1=abc").code, 2);
  EXPECT_EQ(run("--help").code, 0);
}

TEST(Cli, TrainWritesOutputsOnlyUnderOutDir) {
  TempDir tmp("train");
  const auto out = tmp.path / "run";
  auto r = run("train " + tiny(out));
  ASSERT_EQ(r.code, 0) << r.output;
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(tmp.path)) names.push_back(e.path().filename().string());
  EXPECT_EQ(names, std::vector<std::string>{"run"});
  for (const auto* f : {cli::kMetricsFile, cli::kCheckpointFile, cli::kResolvedFile}) EXPECT_TRUE(fs::exists(out / f));
  auto rows = lines_of(slurp(out / cli::kMetricsFile));
  ASSERT_GE(rows.size(), 1u + 2u * RunConfig::preset("tiny").train.epochs);
  EXPECT_EQ(rows.front(), "epoch,split,loss,acc");
}

TEST(Cli, ZeroLearningRateGivesConstantMetrics) {
  TempDir tmp("lr0");
  auto r = run("train " + tiny(tmp.path) + " --set train.lr=0 --set train.epochs=3");
  ASSERT_EQ(r.code, 0) << r.output;
  auto rows = lines_of(slurp(tmp.path / cli::kMetricsFile));
  ASSERT_EQ(rows.size(), 7u);
  auto tail = [](const std::string& row) { return row.substr(row.find(',')); };
  for (std::size_t i = 3; i < rows.size(); ++i) EXPECT_EQ(tail(rows[i]), tail(rows[i - 2]));
}

TEST(Cli, ResolvedConfigReproducesTheRunBitwise) {
  TempDir tmp("repro");
  auto first = run("train " + tiny(tmp.path / "a") + " --set train.seed=9 --set train.augment=true");
  ASSERT_EQ(first.code, 0) << first.output;
  auto second = run("train -c " + (tmp.path / "a" / cli::kResolvedFile).string() +
                    " --set run.out_dir=" + (tmp.path / "b").string());
  ASSERT_EQ(second.code, 0) << second.output;
  EXPECT_EQ(slurp(tmp.path / "a" / cli::kMetricsFile), slurp(tmp.path / "b" / cli::kMetricsFile));
  EXPECT_EQ(slurp(tmp.path / "a" / cli::kCheckpointFile), slurp(tmp.path / "b" / cli::kCheckpointFile));
}

TEST(Cli, SeedEnvironmentVariableSitsBetweenFileAndOverride) {
  TempDir tmp("seed");
  ASSERT_EQ(run("train " + tiny(tmp.path / "env"), "SFI_SEED=11").code, 0);
  ASSERT_EQ(run("train " + tiny(tmp.path / "set") + " --set train.seed=11").code, 0);
  ASSERT_EQ(run("train " + tiny(tmp.path / "both") + " --set train.seed=11", "SFI_SEED=3").code, 0);
  const auto env = slurp(tmp.path / "env" / cli::kMetricsFile);
  EXPECT_EQ(env, slurp(tmp.path / "set" / cli::kMetricsFile));
  EXPECT_EQ(env, slurp(tmp.path / "both" / cli::kMetricsFile));
  EXPECT_NE(slurp(tmp.path / "env" / cli::kResolvedFile).find("train.seed = 11"), std::string::npos);
}

class TrainedCli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("trained");
    auto r = run("train " + tiny(dir_->path));
    ASSERT_EQ(r.code, 0) << r.output;
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static fs::path ckpt() { return dir_->path / cli::kCheckpointFile; }
  static std::string source() { return tiny(dir_->path); }
  static TempDir* dir_;
};

TempDir* TrainedCli::dir_ = nullptr;

TEST_F(TrainedCli, EvalIsDeterministicAndMatchesFinalMetrics) {
  const auto args = "eval " + source() + " --checkpoint " + ckpt().string();
  auto a = run(args), b = run(args);
  ASSERT_EQ(a.code, 0) << a.output;
  EXPECT_EQ(a.output, b.output);
  auto rows = lines_of(slurp(dir_->path / cli::kMetricsFile));
  const auto& last = rows.back();
  ASSERT_EQ(last.rfind(std::to_string(RunConfig::preset("tiny").train.epochs) + ",test,", 0), 0u) << last;
  const auto acc = last.substr(last.rfind(',') + 1);
  EXPECT_NE(a.output.find("accuracy: " + acc + "\n"), std::string::npos) << a.output << " vs " << last;
  const auto loss = split(last, ',')[2];
  EXPECT_NE(a.output.find("loss: " + loss + "\n"), std::string::npos) << a.output << " vs " << last;
}

TEST_F(TrainedCli, EvalRejectsMismatchedCheckpoint) {
  auto r = run("eval " + source() + " --set backbone.channels=4,8 --checkpoint " + ckpt().string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("shape"), std::string::npos) << r.output;
  EXPECT_EQ(run("eval " + source() + " --checkpoint " + (dir_->path / "missing.txt").string()).code, 2);
  EXPECT_EQ(run("eval " + source() + " --split validation --checkpoint " + ckpt().string()).code, 2);
}

TEST_F(TrainedCli, ExportMapsNamingAndContent) {
  TempDir out("export");
  auto r = run("export-maps " + source() + " --checkpoint " + ckpt().string() + " --sample 1 -o " +
               out.path.string());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto cfg = RunConfig::preset("tiny");
  const std::size_t stages = cfg.backbone.num_stages();
  for (std::size_t i = 0; i < stages; ++i) {
    const auto stem = "test1_stage" + std::to_string(i) + "_";
    for (const auto* kind : {"ambiguity", "mask", "scores", "top1", "top2"})
      for (const auto* ext : {".pgm", ".csv"})
        EXPECT_TRUE(fs::exists(out.path / (stem + kind + ext))) << stem << kind << ext;
    EXPECT_FALSE(fs::exists(out.path / (stem + "top3.pgm")));
  }
  EXPECT_TRUE(fs::exists(out.path / "test1_adjacency.pgm"));
  EXPECT_TRUE(fs::exists(out.path / "test1_summary.txt"));

  const auto mask = read_pnm(out.path / "test1_stage0_mask.pgm");
  ASSERT_FALSE(mask.pixels.empty());
  for (int v : mask.pixels) EXPECT_TRUE(v == 0 || v == 255) << v;

  Rng rng(cfg.train.seed);
  SfiNet model(cfg.model(), rng);
  model.load_parameters(load_checkpoint(ckpt()));
  const auto data = make_synthetic(cfg.data);
  const auto result = model.forward(data.test[1].image);
  for (std::size_t i = 0; i < stages; ++i) {
    const auto csv = load_tensor_csv(out.path / ("test1_stage" + std::to_string(i) + "_ambiguity.csv"));
    EXPECT_EQ(csv.shape(), result.filters[i].ambiguity.shape());
    EXPECT_EQ(test::values(csv), test::values(result.filters[i].ambiguity));
  }
}

TEST_F(TrainedCli, ExportRejectsWrongImageShape) {
  TempDir out("badimage");
  const auto image = out.path / "wrong.pgm";
  save_pgm(image, Tensor::from({5, 5}, std::vector<double>(25, 0.5)));
  auto r = run("export-maps " + source() + " --checkpoint " + ckpt().string() + " --image " + image.string() +
               " -o " + (out.path / "maps").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("wrong.pgm"), std::string::npos) << r.output;
  EXPECT_EQ(run("export-maps " + source() + " --checkpoint " + ckpt().string() + " --sample 999 -o " +
                (out.path / "maps").string())
                .code,
            2);
}

TEST(Cli, GradcheckPassesAndListsEveryParameter) {
  auto r = run("gradcheck");
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("gradcheck: PASS"), std::string::npos);
  EXPECT_NE(r.output.find("worst relative error per module:"), std::string::npos);
  Rng rng(0);
  SfiNet model(RunConfig::preset("tiny").model(), rng);
  for (const auto& [name, t] : model.parameters()) EXPECT_NE(r.output.find(name), std::string::npos) << name;
}

TEST(Cli, GradcheckCatchesCorruptedBackward) {
  auto r = run("gradcheck --corrupt matmul");
  EXPECT_EQ(r.code, 1) << r.output;
  EXPECT_NE(r.output.find("gradcheck: FAIL"), std::string::npos);
}
