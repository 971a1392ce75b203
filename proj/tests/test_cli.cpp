#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "cblb/version.hpp"
#include "cli.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("cblb-cli-" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    int run(std::vector<std::string> args) {
        out_.str({});
        err_.str({});
        return cblb::cli::run(args, out_, err_);
    }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    std::string dataset(std::size_t n = 3000) {
        const auto csv = path("data.csv");
        EXPECT_EQ(run({"generate", "--n", std::to_string(n), "--seed", "7", "--output", csv}), 0) << err_.str();
        return csv;
    }

    std::vector<std::string> analyze_args(const std::string& csv, const std::string& output) {
        return {"analyze", "--input", csv, "--outcome", "y", "--treatment", "w", "--covariates", "x1,x2",
                "--subsets", "3", "--replicates", "40", "--seed", "11", "--output", output};
    }

    fs::path dir_;
    std::ostringstream out_, err_;
};

std::string slurp(const std::string& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ordered_json load(const std::string& p) { return ordered_json::parse(slurp(p)); }

std::size_t line_count(const std::string& p) {
    std::ifstream in(p);
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);) ++n;
    return n;
}

} // namespace

TEST_F(Cli, AnalyzeIsReproducible) {
    const auto csv = dataset();
    ASSERT_EQ(run(analyze_args(csv, path("a"))), 0) << err_.str();
    ASSERT_EQ(run(analyze_args(csv, path("b"))), 0) << err_.str();
    EXPECT_EQ(load(path("a/result.json"))["result"], load(path("b/result.json"))["result"]);
}

TEST_F(Cli, AnalyzeThreadCountDoesNotChangeResult) {
    const auto csv = dataset();
    auto one = analyze_args(csv, path("one"));
    one.insert(one.end(), {"--threads", "1"});
    auto eight = analyze_args(csv, path("eight"));
    eight.insert(eight.end(), {"--threads", "8"});
    ASSERT_EQ(run(one), 0);
    ASSERT_EQ(run(eight), 0);
    EXPECT_EQ(load(path("one/result.json"))["result"], load(path("eight/result.json"))["result"]);
}

TEST_F(Cli, AnalyzeManifestRecordsInput) {
    const auto csv = dataset();
    ASSERT_EQ(run(analyze_args(csv, path("o"))), 0);
    const auto doc = load(path("o/result.json"));
    const auto& m = doc["manifest"];
    EXPECT_EQ(m["command"], "analyze");
    EXPECT_EQ(m["seed"], 11);
    EXPECT_EQ(m["input"]["rows"], 3000);
    EXPECT_EQ(m["input"]["sha256"], cblb::cli::sha256_file(csv));
    EXPECT_EQ(doc["result"]["subsets"], 3);
    EXPECT_EQ(doc["result"]["replicates"], 40);
    EXPECT_TRUE(doc["timing"].contains("total_seconds"));
}

TEST_F(Cli, Sha256OfKnownBytes) {
    const auto p = path("abc.txt");
    std::ofstream(p) << "abc";
    EXPECT_EQ(cblb::cli::sha256_file(p), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_F(Cli, EmitDrawsWritesOneRowPerReplicate) {
    const auto csv = dataset();
    auto args = analyze_args(csv, path("o"));
    args.push_back("--emit-draws");
    ASSERT_EQ(run(args), 0);
    EXPECT_EQ(line_count(path("o/draws.csv")), 1u + 3 * 40);
    EXPECT_FALSE(fs::exists(path("none/draws.csv")));
}

TEST_F(Cli, GammaAndSubsetSizeAreExclusive) {
    const auto csv = dataset();
    auto args = analyze_args(csv, path("o"));
    args.insert(args.end(), {"--gamma", "0.7", "--subset-size", "100"});
    EXPECT_EQ(run(args), 2);
}

TEST_F(Cli, UnknownFlagIsConfigError) {
    const auto csv = dataset();
    auto args = analyze_args(csv, path("o"));
    args.push_back("--bogus");
    EXPECT_EQ(run(args), 2);
}

TEST_F(Cli, NoSubcommandIsConfigError) { EXPECT_EQ(run({}), 2); }

TEST_F(Cli, HelpAndVersionSucceed) {
    EXPECT_EQ(run({"--help"}), 0);
    EXPECT_EQ(run({"--version"}), 0);
    EXPECT_NE(out_.str().find(cblb::kVersion), std::string::npos);
}

TEST_F(Cli, MissingColumnIsDataError) {
    const auto csv = dataset();
    auto args = analyze_args(csv, path("o"));
    args[8] = "x1,x9";
    EXPECT_EQ(run(args), 3);
}

TEST_F(Cli, MissingInputIsDataError) {
    EXPECT_EQ(run(analyze_args(path("absent.csv"), path("o"))), 3);
}

TEST_F(Cli, ExternalScoresOfWrongLengthAreDataError) {
    const auto csv = dataset();
    const auto scores = path("scores.txt");
    {
        std::ofstream s(scores);
        for (int i = 0; i < 10; ++i) s << "0.5\n";
    }
    auto args = analyze_args(csv, path("o"));
    args.insert(args.end(), {"--method", "external:" + scores});
    EXPECT_EQ(run(args), 3);
}

TEST_F(Cli, ExternalTrueScoresRun) {
    const auto csv = path("data.csv");
    const auto scores = path("scores.txt");
    ASSERT_EQ(run({"generate", "--n", "3000", "--seed", "7", "--output", csv, "--scores", scores}), 0);
    auto args = analyze_args(csv, path("o"));
    args.insert(args.end(), {"--method", "external:" + scores});
    ASSERT_EQ(run(args), 0) << err_.str();
    const auto doc = load(path("o/result.json"));
    EXPECT_EQ(doc["manifest"]["input"]["scores_sha256"], cblb::cli::sha256_file(scores));
    EXPECT_NEAR(doc["result"]["tau_hat"].get<double>(), 2.0, 0.5);
}

TEST_F(Cli, ExternalWithoutPathIsConfigError) {
    const auto csv = dataset();
    auto args = analyze_args(csv, path("o"));
    args.insert(args.end(), {"--method", "external"});
    EXPECT_EQ(run(args), 2);
}

TEST_F(Cli, TinyWeightCapExhaustsRedraws) {
    const auto csv = dataset();
    auto args = analyze_args(csv, path("o"));
    args.insert(args.end(), {"--weight-cap", "0.0001", "--max-redraws", "2"});
    EXPECT_EQ(run(args), 4);
    EXPECT_NE(err_.str().find("redraw"), std::string::npos);
}

TEST_F(Cli, BadTruncationIsConfigError) {
    const auto csv = dataset();
    auto args = analyze_args(csv, path("o"));
    args.insert(args.end(), {"--truncate", "0.9,0.1"});
    EXPECT_EQ(run(args), 2);
}

TEST_F(Cli, ConfigFileFillsUnsetFlags) {
    const auto csv = dataset();
    const auto conf = path("run.conf");
    std::ofstream(conf) << "# defaults\nsubsets = 4\nreplicates=25\nweight_cap = 0.5\n";
    auto args = analyze_args(csv, path("o"));
    args.erase(args.begin() + 9, args.begin() + 13); // drop --subsets and --replicates
    args.insert(args.end(), {"--config", conf});
    ASSERT_EQ(run(args), 0) << err_.str();
    const auto cfg = load(path("o/result.json"))["manifest"]["config"];
    EXPECT_EQ(cfg["subsets"], 4);
    EXPECT_EQ(cfg["replicates"], 25);
    EXPECT_DOUBLE_EQ(cfg["weight_cap"].get<double>(), 0.5);
}

TEST_F(Cli, FlagsOverrideConfigFile) {
    const auto csv = dataset();
    const auto conf = path("run.conf");
    std::ofstream(conf) << "subsets=4\ngamma=0.6\n";
    auto args = analyze_args(csv, path("o"));
    args.insert(args.end(), {"--config", conf, "--subset-size", "300"});
    ASSERT_EQ(run(args), 0) << err_.str();
    const auto doc = load(path("o/result.json"));
    EXPECT_EQ(doc["manifest"]["config"]["subsets"], 3);
    EXPECT_EQ(doc["result"]["subset_size"], 300);
}

TEST_F(Cli, MalformedConfigLineIsConfigError) {
    const auto csv = dataset();
    const auto conf = path("run.conf");
    std::ofstream(conf) << "subsets 4\n";
    auto args = analyze_args(csv, path("o"));
    args.insert(args.end(), {"--config", conf});
    EXPECT_EQ(run(args), 2);
}

TEST_F(Cli, SimulateNeedsTenReplications) {
    EXPECT_EQ(run({"simulate", "--replications", "1", "--output", path("s")}), 2);
}

TEST_F(Cli, SimulateIsReproducible) {
    const std::vector<std::string> base{"simulate", "--n", "1000", "--replications", "10", "--subsets", "2",
                                        "--replicates", "20", "--seed", "9"};
    auto a = base, b = base;
    a.insert(a.end(), {"--output", path("a")});
    b.insert(b.end(), {"--output", path("b"), "--threads", "3"});
    ASSERT_EQ(run(a), 0) << err_.str();
    ASSERT_EQ(run(b), 0) << err_.str();
    auto sa = load(path("a/summary.json")), sb = load(path("b/summary.json"));
    for (auto* d : {&sa, &sb}) {
        d->erase("manifest");
        d->erase("timing");
    }
    EXPECT_EQ(sa, sb);
    EXPECT_EQ(line_count(path("a/replications.csv")), 11u);
}

TEST_F(Cli, RelerrWritesOneTrajectoryPerGamma) {
    ASSERT_EQ(run({"relerr", "--n", "20000", "--gammas", "0.5,0.6,0.7,0.8,0.9", "--replicates", "20", "--oracle-reps",
                   "100", "--data-reps", "1", "--max-subsets", "3", "--output", path("r")}),
              0)
        << err_.str();
    std::ifstream in(path("r/relerr.csv"));
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "gamma,subsets,subset_size,seconds,error");
    std::set<std::string> gammas;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        ++rows;
        gammas.insert(line.substr(0, line.find(',')));
        const double err = std::stod(line.substr(line.rfind(',') + 1));
        EXPECT_GE(err, 0.0);
    }
    EXPECT_EQ(gammas.size(), 5u);
    EXPECT_EQ(rows, 15u);
}

TEST_F(Cli, BenchmarkNeedsPositiveReps) {
    EXPECT_EQ(run({"benchmark", "--reps", "0", "--output", path("b")}), 2);
}

TEST_F(Cli, BenchmarkWritesOneMedianPerCell) {
    ASSERT_EQ(run({"benchmark", "--ns", "2000", "--methods", "logistic,cbps", "--subsets", "2,4", "--reps", "2",
                   "--replicates", "10", "--output", path("b")}),
              0)
        << err_.str();
    EXPECT_EQ(line_count(path("b/medians.csv")), 1u + 4);
    EXPECT_EQ(line_count(path("b/timings.csv")), 1u + 4 * 2);
}

TEST_F(Cli, GenerateWritesHeaderAndScores) {
    const auto csv = path("d.csv"), scores = path("s.txt");
    ASSERT_EQ(run({"generate", "--n", "50", "--p", "3", "--seed", "1", "--output", csv, "--scores", scores}), 0);
    std::ifstream in(csv);
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "y,w,x1,x2,x3");
    EXPECT_EQ(line_count(csv), 51u);
    EXPECT_EQ(line_count(scores), 50u);
}
