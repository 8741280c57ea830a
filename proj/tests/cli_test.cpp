#include <gtest/gtest.h>

#include "test_support.hpp"

namespace cola {
namespace {

using testing::read_file;
using testing::run_cli;
using testing::scratch_dir;
using testing::write_file;

const std::string kFixture = std::string(COLA_FIXTURE_DIR) + "/synthetic/";
const std::string kInputs = "--schema " + kFixture + "schema.json --model " + kFixture + "model.json";

std::size_t count_lines(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

std::string generate_args(const std::filesystem::path& out) {
  return "generate " + kInputs + " --data " + kFixture + "factuals.csv --out " + out.string() +
         " --config " + kFixture + "generate.json";
}

TEST(CliGenerateTest, WritesOneRowPerFactual) {
  const auto dir = scratch_dir("cli_generate");
  const auto r = run_cli(generate_args(dir / "cf.csv"), dir);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const auto text = read_file((dir / "cf.csv").string());
  EXPECT_EQ(text.substr(0, text.find('\n')), "x1,x2,x3,x4,x5,x6,_valid");
  EXPECT_EQ(count_lines(text), 201u);
  EXPECT_NE(r.out.find("generated=200"), std::string::npos);
}

TEST(CliGenerateTest, DiverseIsSeededAndIndexed) {
  const auto dir = scratch_dir("cli_diverse");
  const std::string base = "generate " + kInputs + " --data " + kFixture +
                           "factuals.csv --generator diverse --k 2 --max-iters 200 --seed 3 --out ";
  ASSERT_EQ(run_cli(base + (dir / "a.csv").string(), dir).exit_code, 0);
  ASSERT_EQ(run_cli(base + (dir / "b.csv").string() + " --threads 4", dir).exit_code, 0);
  const auto a = read_file((dir / "a.csv").string());
  EXPECT_EQ(a, read_file((dir / "b.csv").string()));
  EXPECT_EQ(a.substr(0, a.find('\n')), "x1,x2,x3,x4,x5,x6,_factual_index,_valid");
  EXPECT_EQ(count_lines(a), 401u);
}

TEST(CliGenerateTest, MissingModelIsInputError) {
  const auto dir = scratch_dir("cli_missing");
  const auto r = run_cli("generate --schema " + kFixture + "schema.json --model /nonexistent/m.json --data " +
                             kFixture + "factuals.csv --out " + (dir / "cf.csv").string(),
                         dir);
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("/nonexistent/m.json"), std::string::npos) << r.err;
}

class CliSparsifyTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = scratch_dir("cli_sparsify");
    const auto r = run_cli(generate_args(dir_ / "cf.csv"), dir_);
    ASSERT_EQ(r.exit_code, 0) << r.err;
  }
  std::string sparsify(const std::string& extra) const {
    return "sparsify " + kInputs + " --factuals " + kFixture + "factuals.csv --counterfactuals " +
           (dir_ / "cf.csv").string() + " " + extra;
  }
  static std::filesystem::path dir_;
};

std::filesystem::path CliSparsifyTest::dir_;

TEST_F(CliSparsifyTest, MatchesGoldenReport) {
  const auto report = dir_ / "report.json";
  const auto r = run_cli(sparsify("--out " + (dir_ / "refined.csv").string() + " --report " +
                                  report.string()),
                         dir_);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_EQ(read_file(report.string()), read_file(kFixture + "golden_report.json"));
  const auto refined = read_file((dir_ / "refined.csv").string());
  EXPECT_EQ(refined.substr(0, refined.find('\n')), "x1,x2,x3,x4,x5,x6,_status,_edits");
  EXPECT_EQ(count_lines(refined), 201u);
}

TEST_F(CliSparsifyTest, IdentityCounterfactualsChangeNothing) {
  const auto report = dir_ / "identity.json";
  const auto r = run_cli("sparsify " + kInputs + " --factuals " + kFixture + "factuals.csv --counterfactuals " +
                             kFixture + "factuals.csv --out " + (dir_ / "same.csv").string() +
                             " --report " + report.string(),
                         dir_);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const auto j = nlohmann::json::parse(read_file(report.string()));
  EXPECT_EQ(j["changed_before"], 0);
  EXPECT_EQ(j["reduction_pct"], 0.0);
}

TEST_F(CliSparsifyTest, ZeroBudgetMakesNoEdits) {
  const auto out = dir_ / "zero.csv";
  const auto r = run_cli(sparsify("--mode budget --budget 0 --out " + out.string()), dir_);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  std::istringstream in(read_file(out.string()));
  std::string line;
  std::getline(in, line);
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    EXPECT_EQ(line.substr(line.rfind(',') + 1), "0");
    ++rows;
  }
  EXPECT_EQ(rows, 200u);
  EXPECT_EQ(run_cli(sparsify("--mode budget --out " + out.string()), dir_).exit_code, 2);
}

TEST_F(CliSparsifyTest, ThreadCountDoesNotChangeOutputs) {
  const std::string outputs = " --report R.json --save-matching M.json --save-attributions A.json "
                              "--heatmap H.svg --out O.csv --matcher ot --attributor shapley-sample "
                              "--samples 64 --seed 11";
  std::vector<std::string> texts[2];
  for (int t = 0; t < 2; ++t) {
    std::string args = outputs;
    const std::string prefix = (dir_ / ("t" + std::to_string(t) + "_")).string();
    for (const char* name : {"R.json", "M.json", "A.json", "H.svg", "O.csv"}) {
      const auto pos = args.find(name);
      args.replace(pos, std::string(name).size(), prefix + name);
    }
    const auto r = run_cli(sparsify(args + (t ? " --threads 4" : " --threads 1")), dir_);
    ASSERT_EQ(r.exit_code, 0) << r.err;
    for (const char* name : {"R.json", "M.json", "A.json", "H.svg", "O.csv"}) {
      texts[t].push_back(read_file(prefix + name));
    }
  }
  EXPECT_EQ(texts[0], texts[1]);
}

TEST_F(CliSparsifyTest, ConfigFileIsOverriddenByFlags) {
  const auto cfg = dir_ / "cfg.json";
  write_file(cfg.string(), R"({"sparsify": {"mode": "budget", "budget": 0}})");
  const auto out = dir_ / "cfg.csv";
  const auto r = run_cli(sparsify("--config " + cfg.string() + " --budget 1000 --report " +
                                  (dir_ / "cfg.json.report").string() + " --out " + out.string()),
                         dir_);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const auto j = nlohmann::json::parse(read_file((dir_ / "cfg.json.report").string()));
  EXPECT_EQ(j["policy"]["mode"], "budget");
  EXPECT_EQ(j["budget"], 1000);
  EXPECT_GT(j["changed_after"].get<int>(), 0);
}

TEST(CliReportTest, ChartsAndRejectsMixedSchemas) {
  const auto dir = scratch_dir("cli_report");
  const std::string a = (dir / "a.json").string(), b = (dir / "b.json").string();
  write_file(a, read_file(kFixture + "golden_report.json"));
  auto other = nlohmann::ordered_json::parse(read_file(a));
  other["features"][0] = "renamed";
  write_file(b, other.dump(2));
  auto r = run_cli("report " + a + " " + a + " --out " + (dir / "c1.svg").string(), dir);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  r = run_cli("report " + a + " " + a + " --out " + (dir / "c2.svg").string(), dir);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_EQ(read_file((dir / "c1.svg").string()), read_file((dir / "c2.svg").string()));
  r = run_cli("report " + a + " " + b + " --out " + (dir / "c3.svg").string(), dir);
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("incompatible reports"), std::string::npos) << r.err;
}

TEST(CliUsageTest, HelpAndUnknownFlags) {
  const auto dir = scratch_dir("cli_usage");
  auto r = run_cli("--help", dir);
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_NE(r.out.find("sparsify"), std::string::npos);
  r = run_cli("sparsify --help", dir);
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_NE(r.out.find("--matcher"), std::string::npos);
  EXPECT_EQ(run_cli("sparsify --no-such-flag", dir).exit_code, 2);
  EXPECT_EQ(run_cli("", dir).exit_code, 2);
}

}  // namespace
}  // namespace cola
