#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "cuedseq/cli.hpp"

using namespace cuedseq;
namespace fs = std::filesystem;

namespace {

const std::string kTinyConfig = std::string(CUEDSEQ_TEST_DATA) + "/tiny_run.json";

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

class Workdir {
 public:
  explicit Workdir(const std::string& tag) {
    root_ = fs::temp_directory_path() / ("cuedseq_cli_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  ~Workdir() { fs::remove_all(root_); }
  fs::path path() const { return root_; }

  // config + path overrides so every output lands under this directory
  std::vector<std::string> args(const std::string& cmd, std::vector<std::string> extra = {}) const {
    std::vector<std::string> a{cmd,
                               "-c",
                               kTinyConfig,
                               "-q",
                               "--set",
                               "paths.corpus=" + (root_ / "corpus").string(),
                               "--set",
                               "paths.checkpoints=" + (root_ / "ckpt").string(),
                               "--set",
                               "paths.reports=" + (root_ / "reports").string()};
    a.insert(a.end(), extra.begin(), extra.end());
    return a;
  }
  Outcome run(const std::string& cmd, std::vector<std::string> extra = {}) const {
    return run_cli(args(cmd, std::move(extra)));
  }

 private:
  fs::path root_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Cli, HelpExitsZero) {
  auto top = run_cli({"--help"});
  EXPECT_EQ(top.code, 0);
  for (const char* cmd : {"generate", "pretrain", "finetune", "train-seq", "train-fusion", "eval", "xval"})
    EXPECT_NE(top.out.find(cmd), std::string::npos) << cmd;
  auto sub = run_cli({"xval", "--help"});
  EXPECT_EQ(sub.code, 0);
  EXPECT_NE(sub.out.find("--no-fusion"), std::string::npos);
}

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run_cli({}).code, 1);
  auto bogus = run_cli({"bogus"});
  EXPECT_EQ(bogus.code, 1);
  EXPECT_NE(bogus.err.find("bogus"), std::string::npos);
  EXPECT_EQ(run_cli({"eval", "--frobnicate"}).code, 1);
  EXPECT_EQ(run_cli({"eval", "--set"}).code, 1);
}

TEST(Cli, MissingConfigExitsTwoAndNamesIt) {
  auto r = run_cli({"pretrain", "--config", "/nonexistent/dir/run.json"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("/nonexistent/dir/run.json"), std::string::npos);
}

TEST(Cli, MalformedConfigExitsOne) {
  Workdir w("malformed");
  const auto p = (w.path() / "bad.json").string();
  std::ofstream(p) << "{ \"seed\": 3,";
  EXPECT_EQ(run_cli({"generate", "-c", p}).code, 1);
  std::ofstream(p, std::ios::trunc) << R"({"encoder": {"feature_dim": "wide"}})";
  auto r = run_cli({"generate", "-c", p});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("encoder.feature_dim"), std::string::npos);
}

TEST(Cli, UnknownFieldsAreStrictUnlessLenient) {
  Workdir w("strict");
  auto strict = w.run("generate", {"--set", "corpus.nonsense=4"});
  EXPECT_EQ(strict.code, 1);
  EXPECT_NE(strict.err.find("corpus.nonsense"), std::string::npos);
  EXPECT_FALSE(fs::exists(w.path() / "corpus"));

  auto j = nlohmann::json::parse(slurp(kTinyConfig));
  j["comment"] = "scratch run";
  const auto p = (w.path() / "extra.json").string();
  std::ofstream(p) << j.dump();
  auto a = w.args("generate");
  a[2] = p;
  auto rejected = run_cli(a);
  EXPECT_EQ(rejected.code, 1);
  EXPECT_NE(rejected.err.find("comment"), std::string::npos);
  a.push_back("--lenient");
  EXPECT_EQ(run_cli(a).code, 0);
}

TEST(Cli, CrossStageMismatchIsRejected) {
  Workdir w("mismatch");
  auto r = w.run("generate", {"--set", "sequence.d_in=9"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("sequence"), std::string::npos);
}

TEST(Cli, OverridesReachTheReport) {
  Workdir w("override");
  ASSERT_EQ(w.run("generate", {"--set", "seed=123", "--set", "corpus.sentences_per_speaker=6"}).code, 0);
  auto report = nlohmann::json::parse(slurp(w.path() / "reports" / "generate.json"));
  EXPECT_EQ(report["seed"], 123);
  EXPECT_EQ(report["config"]["corpus"]["sentences_per_speaker"], 6);
  EXPECT_EQ(report["sentences"], 12);
}

TEST(Cli, RefusesToOverwriteWithoutFlag) {
  Workdir w("overwrite");
  ASSERT_EQ(w.run("generate").code, 0);
  const auto before = slurp(w.path() / "corpus" / "manifest.json");
  auto again = w.run("generate", {"--set", "seed=8"});
  EXPECT_EQ(again.code, 1);
  EXPECT_NE(again.err.find("--overwrite"), std::string::npos);
  EXPECT_EQ(slurp(w.path() / "corpus" / "manifest.json"), before);
  EXPECT_EQ(w.run("generate", {"--set", "seed=8", "--overwrite"}).code, 0);
  EXPECT_NE(slurp(w.path() / "corpus" / "manifest.json"), before);
}

TEST(Cli, MissingPrerequisiteExitsTwo) {
  Workdir w("prereq");
  auto r = w.run("pretrain");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("corpus"), std::string::npos);
  ASSERT_EQ(w.run("generate").code, 0);
  auto f = w.run("finetune");
  EXPECT_EQ(f.code, 2);
  EXPECT_NE(f.err.find("pretrain.csw"), std::string::npos);
}

TEST(Cli, CorruptCorpusFileExitsTwo) {
  Workdir w("corrupt");
  ASSERT_EQ(w.run("generate").code, 0);
  for (const auto& e : fs::directory_iterator(w.path() / "corpus"))
    if (e.path().extension() == ".csc") {
      std::ofstream(e.path(), std::ios::binary | std::ios::trunc) << "garbage";
      break;
    }
  EXPECT_EQ(w.run("pretrain").code, 2);
}

TEST(Cli, LanguageMismatchExitsOne) {
  Workdir w("language");
  ASSERT_EQ(w.run("generate").code, 0);
  auto r = w.run("pretrain", {"--set", "language=en"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("language"), std::string::npos);
}

TEST(Cli, FullPipelineIsBitwiseReproducible) {
  Workdir a("pipeA"), b("pipeB");
  const std::vector<std::string> stages{"generate", "pretrain", "finetune", "train-seq", "train-fusion", "eval"};
  for (const auto* w : {&a, &b})
    for (const auto& s : stages) {
      auto r = w->run(s);
      ASSERT_EQ(r.code, 0) << s << ": " << r.err;
    }
  for (const char* ck : {"pretrain.csw", "finetune.csw", "sequence.csw", "fusion.csw"}) {
    const auto x = slurp(a.path() / "ckpt" / ck);
    ASSERT_FALSE(x.empty()) << ck;
    EXPECT_EQ(x, slurp(b.path() / "ckpt" / ck)) << ck;
  }
  auto ja = nlohmann::json::parse(slurp(a.path() / "reports" / "eval.json"));
  auto jb = nlohmann::json::parse(slurp(b.path() / "reports" / "eval.json"));
  EXPECT_EQ(ja["reports"], jb["reports"]);
  for (const char* key : {"handshape_static", "handshape_sequence", "phoneme"})
    EXPECT_TRUE(ja["reports"].contains(key)) << key;
  for (const char* csv : {"pretrain_history.csv", "finetune_history.csv", "sequence_history.csv",
                          "fusion_history.csv", "eval_phoneme.csv", "eval_handshape_sequence.csv"})
    EXPECT_EQ(slurp(a.path() / "reports" / csv), slurp(b.path() / "reports" / csv)) << csv;
}

TEST(Cli, DifferentSeedChangesTheCorpus) {
  Workdir a("seedA"), b("seedB");
  ASSERT_EQ(a.run("generate").code, 0);
  ASSERT_EQ(b.run("generate", {"--set", "seed=8"}).code, 0);
  EXPECT_NE(slurp(a.path() / "corpus" / "manifest.json"), slurp(b.path() / "corpus" / "manifest.json"));
}

TEST(Cli, XvalPartitionsAreReproducibleAndCoverEverySentence) {
  Workdir a("xvalA"), b("xvalB");
  for (const auto* w : {&a, &b}) {
    ASSERT_EQ(w->run("generate").code, 0);
    auto r = w->run("xval", {"--no-fusion"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("hand-shape Te"), std::string::npos);
    EXPECT_EQ(r.out.find("phoneme"), std::string::npos);
  }
  auto ja = nlohmann::json::parse(slurp(a.path() / "reports" / "xval.json"));
  auto jb = nlohmann::json::parse(slurp(b.path() / "reports" / "xval.json"));
  EXPECT_EQ(ja["folds"], jb["folds"]);
  ASSERT_EQ(ja["folds"].size(), 3u);
  std::set<std::size_t> seen;
  std::size_t total = 0;
  for (const auto& f : ja["folds"])
    for (std::size_t i : f["test_sentences"].get<std::vector<std::size_t>>()) {
      seen.insert(i);
      ++total;
    }
  EXPECT_EQ(total, 20u);
  EXPECT_EQ(seen.size(), 20u);
  EXPECT_EQ(*seen.rbegin(), 19u);
  EXPECT_TRUE(ja.contains("handshape_Te") && ja["handshape_Te"].contains("stddev"));
  auto csv = slurp(a.path() / "reports" / "xval.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}
