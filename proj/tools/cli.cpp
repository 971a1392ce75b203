#include "cli.hpp"

#include "CLI11.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>

#include "cblb/version.hpp"

namespace cblb::cli {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::string utc_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::ofstream open_output(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    return out;
}

fs::path output_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create output directory '" + dir + "': " + ec.message());
    return fs::path(dir);
}

void write_json(const fs::path& path, const Json& j) {
    auto out = open_output(path);
    out << j.dump(2) << '\n';
}

std::pair<double, double> parse_pair(const std::string& text, const char* what) {
    const auto comma = text.find(',');
    double a = 0, b = 0;
    if (comma == std::string::npos || !detail::parse_number(detail::trim(std::string_view(text).substr(0, comma)), a) ||
        !detail::parse_number(detail::trim(std::string_view(text).substr(comma + 1)), b))
        throw ConfigError(std::string(what) + " expects two comma-separated numbers, got '" + text + "'");
    return {a, b};
}

/// Options shared by every command that runs the BLB.
struct BlbFlags {
    std::string method = "logistic";
    std::optional<double> gamma;
    std::optional<std::size_t> subset_size;
    std::size_t subsets = 10;
    std::size_t replicates = 100;
    std::string ci = "percentile";
    double alpha = 0.05;
    std::string truncate = "0.01,0.99";
    double balance_threshold = 0.1;
    bool redraw_on_imbalance = false;
    std::size_t max_redraws = 10;
    double weight_cap = 0.1;

    void add(CLI::App* app, bool allow_external) {
        app->add_option("--method", method,
                        allow_external ? "Propensity method: logistic, cbps, marginal or external:PATH"
                                       : "Propensity method: logistic, cbps or marginal")
            ->capture_default_str();
        auto* g = app->add_option("--gamma", gamma, "Subset size exponent, b = n^gamma (default 0.7)");
        auto* b = app->add_option("--subset-size", subset_size, "Explicit subset size b");
        g->excludes(b);
        app->add_option("--subsets", subsets, "Number of subsets s")->capture_default_str();
        app->add_option("--replicates", replicates, "Bootstrap replicates r per subset")->capture_default_str();
        app->add_option("--ci", ci, "Interval kind: percentile or asymptotic")->capture_default_str();
        app->add_option("--alpha", alpha, "Interval level is 1 - alpha")->capture_default_str();
        app->add_option("--truncate", truncate, "Propensity clamp bounds LO,HI")->capture_default_str();
        app->add_option("--balance-threshold", balance_threshold, "Max |SMD| for balance")->capture_default_str();
        app->add_flag("--redraw-on-imbalance", redraw_on_imbalance, "Redraw subsets failing the balance threshold");
        app->add_option("--max-redraws", max_redraws, "Redraw budget per subset")->capture_default_str();
        app->add_option("--weight-cap", weight_cap, "Redraw subsets with a normalized weight above this (<=0 disables)")
            ->capture_default_str();
    }

    /// Config without external scores; external_path receives the scores path when given.
    BlbConfig resolve(std::uint64_t seed, unsigned threads, std::string* external_path) const {
        BlbConfig cfg;
        if (method.rfind("external:", 0) == 0) {
            if (!external_path) throw ConfigError("external scores are only accepted by analyze");
            *external_path = method.substr(9);
            if (external_path->empty()) throw ConfigError("--method external:PATH needs a path");
            cfg.estimator = Estimator::external;
        } else if (method == "external") {
            throw ConfigError("--method external needs a scores path, external:PATH");
        } else {
            cfg.estimator = parse_estimator(method);
        }
        if (gamma) cfg.gamma = *gamma;
        cfg.subset_size = subset_size;
        cfg.subsets = subsets;
        cfg.replicates = replicates;
        cfg.seed = seed;
        cfg.ci_kind = parse_ci_kind(ci);
        cfg.alpha = alpha;
        const auto [lo, hi] = parse_pair(truncate, "--truncate");
        cfg.truncation = {lo, hi};
        cfg.balance_threshold = balance_threshold;
        cfg.redraw_on_imbalance = redraw_on_imbalance;
        cfg.max_redraws = max_redraws;
        cfg.weight_cap = weight_cap;
        cfg.threads = resolve_threads(threads);
        return cfg;
    }
};

Json config_json(const BlbConfig& c) {
    Json j;
    j["estimator"] = to_string(c.estimator);
    j["gamma"] = c.gamma;
    j["subset_size"] = c.subset_size ? Json(*c.subset_size) : Json(nullptr);
    j["subsets"] = c.subsets;
    j["replicates"] = c.replicates;
    j["seed"] = c.seed;
    j["ci_kind"] = to_string(c.ci_kind);
    j["alpha"] = c.alpha;
    j["truncation"] = {c.truncation.lo, c.truncation.hi};
    j["balance_threshold"] = c.balance_threshold;
    j["redraw_on_imbalance"] = c.redraw_on_imbalance;
    j["max_redraws"] = c.max_redraws;
    j["weight_cap"] = c.weight_cap;
    j["irls"] = {{"tol", c.irls.tol}, {"max_iter", c.irls.max_iter}};
    j["cbps"] = {{"tol", c.cbps.tol}, {"max_iter", c.cbps.max_iter}};
    return j;
}

Json manifest(const std::string& command, Json config, std::uint64_t seed, unsigned threads,
              const std::string& started) {
    Json m;
    m["version"] = kVersion;
    m["command"] = command;
    m["config"] = std::move(config);
    m["seed"] = seed;
    m["threads"] = threads;
    m["started"] = started;
    m["finished"] = utc_now();
    return m;
}

// ---- analyze ---------------------------------------------------------------

struct AnalyzeFlags {
    std::string input, outcome, treatment, output = "cblb-out", na = "reject";
    std::vector<std::string> covariates;
    std::uint64_t seed = 1;
    unsigned threads = 0;
    bool emit_draws = false;
    BlbFlags blb;
};

int cmd_analyze(const AnalyzeFlags& f, const std::string& started, std::ostream& out) {
    std::string scores_path;
    BlbConfig cfg = f.blb.resolve(f.seed, f.threads, &scores_path);
    if (f.na != "reject" && f.na != "drop") throw ConfigError("--na must be reject or drop");
    const NaPolicy policy = f.na == "drop" ? NaPolicy::drop : NaPolicy::reject;
    if (f.covariates.empty()) throw ConfigError("--covariates needs at least one column");

    CsvLoad load = load_csv(f.input, f.outcome, f.treatment, f.covariates, policy);
    if (cfg.estimator == Estimator::external)
        cfg.external_scores = [&] {
            const auto fit = load_external_scores(scores_path, load.table.n());
            return std::vector<double>(fit.scores.begin(), fit.scores.end());
        }();

    const BlbEstimate est = run_blb(load.table, cfg);
    const fs::path dir = output_dir(f.output);

    Json cfg_json = config_json(cfg);
    cfg_json["outcome"] = f.outcome;
    cfg_json["treatment"] = f.treatment;
    cfg_json["covariates"] = f.covariates;
    cfg_json["na"] = f.na;
    cfg_json["emit_draws"] = f.emit_draws;
    Json input;
    input["path"] = f.input;
    input["sha256"] = sha256_file(f.input);
    input["rows"] = load.table.n();
    input["dropped_rows"] = load.dropped;
    if (!scores_path.empty()) input["scores_sha256"] = sha256_file(scores_path);

    Json doc;
    doc["result"] = to_json(est, load.table.covariate_names());
    doc["timing"] = {{"fit_seconds", est.timings.fit_seconds},
                     {"bootstrap_seconds", est.timings.bootstrap_seconds},
                     {"total_seconds", est.timings.total_seconds}};
    Json m = manifest("analyze", std::move(cfg_json), cfg.seed, cfg.threads, started);
    m["input"] = std::move(input);
    doc["manifest"] = std::move(m);
    write_json(dir / "result.json", doc);

    if (f.emit_draws) {
        auto csv = open_output(dir / "draws.csv");
        csv << "subset,replicate,tau\n";
        for (const auto& sub : est.subsets)
            for (std::size_t j = 0; j < sub.draws.size(); ++j)
                csv << sub.id << ',' << j << ',' << fmt(sub.draws[j]) << '\n';
    }

    out << "tau_hat " << fmt(est.tau_hat) << "  se " << fmt(est.se) << "  " << to_string(est.ci.kind) << " CI ["
        << fmt(est.ci.lower) << ", " << fmt(est.ci.upper) << "]\n";
    out << "wrote " << (dir / "result.json").string() << '\n';
    return 0;
}

// ---- simulate --------------------------------------------------------------

struct SimulateFlags {
    std::size_t n = 5000;
    std::size_t replications = 500;
    std::uint64_t seed = 1;
    unsigned threads = 0;
    std::string output = "cblb-sim";
    BlbFlags blb;
};

int cmd_simulate(const SimulateFlags& f, const std::string& started, std::ostream& out) {
    const BlbConfig cfg = f.blb.resolve(f.seed, f.threads, nullptr);
    if (f.replications < 10) throw ConfigError("--replications must be at least 10");
    if (f.n < 2) throw ConfigError("--n must be at least 2");
    const ReplicationSummary summary = run_replications(f.replications, f.n, cfg, Stream(f.seed), cfg.threads);
    const fs::path dir = output_dir(f.output);

    Json cfg_json = config_json(cfg);
    cfg_json["n"] = f.n;
    cfg_json["replications"] = f.replications;
    Json doc;
    doc["summary"] = to_json(summary);
    doc["timing"] = {{"q1", summary.time_q1}, {"median", summary.time_median}, {"q3", summary.time_q3}};
    doc["manifest"] = manifest("simulate", std::move(cfg_json), f.seed, cfg.threads, started);
    write_json(dir / "summary.json", doc);

    auto csv = open_output(dir / "replications.csv");
    csv << "replication,tau_hat,se,hajek,lower,upper,covered,asymptotic_lower,asymptotic_upper,asymptotic_covered,"
           "z,centile,redraws,seconds\n";
    for (const auto& r : summary.records) {
        const auto& sel = cfg.ci_kind == CiKind::percentile ? r.percentile : r.asymptotic;
        const bool covered = cfg.ci_kind == CiKind::percentile ? r.covered_percentile : r.covered_asymptotic;
        csv << r.index << ',' << fmt(r.tau_hat) << ',' << fmt(r.se) << ',' << fmt(r.hajek) << ',' << fmt(sel.lower)
            << ',' << fmt(sel.upper) << ',' << int{covered} << ',' << fmt(r.asymptotic.lower) << ','
            << fmt(r.asymptotic.upper) << ',' << int{r.covered_asymptotic} << ',' << fmt(r.z) << ','
            << fmt(r.centile) << ',' << r.redraws << ',' << fmt(r.seconds) << '\n';
    }
    out << "bias " << fmt(summary.bias) << " (mcse " << fmt(summary.bias_mcse) << ")  coverage "
        << fmt(summary.coverage) << " (mcse " << fmt(summary.coverage_mcse) << ")\n";
    out << "wrote " << (dir / "summary.json").string() << '\n';
    return 0;
}

// ---- relerr ----------------------------------------------------------------

struct RelErrFlags {
    RelErrOptions opt;
    std::string method = "logistic";
    std::uint64_t seed = 1;
    std::string output = "cblb-relerr";
};

int cmd_relerr(RelErrFlags f, const std::string& started, std::ostream& out) {
    f.opt.estimator = parse_estimator(f.method);
    if (f.opt.estimator == Estimator::external) throw ConfigError("relerr does not accept external scores");
    f.opt.threads = resolve_threads(f.opt.threads);
    const auto trajectories = run_relerr_harness(f.opt, Stream(f.seed));
    const fs::path dir = output_dir(f.output);

    auto csv = open_output(dir / "relerr.csv");
    csv << "gamma,subsets,subset_size,seconds,error\n";
    Json traj = Json::array();
    for (const auto& t : trajectories) {
        Json pts = Json::array();
        for (const auto& p : t.points) {
            csv << fmt(t.gamma) << ',' << p.subsets << ',' << t.subset_size << ',' << fmt(p.seconds) << ','
                << fmt(p.error) << '\n';
            pts.push_back({{"subsets", p.subsets}, {"seconds", p.seconds}, {"error", p.error}});
        }
        traj.push_back({{"gamma", t.gamma}, {"subset_size", t.subset_size}, {"points", std::move(pts)}});
    }
    Json cfg;
    cfg["estimator"] = to_string(f.opt.estimator);
    cfg["n"] = f.opt.n;
    cfg["gammas"] = f.opt.gammas;
    cfg["replicates"] = f.opt.replicates;
    cfg["oracle_reps"] = f.opt.oracle_reps;
    cfg["data_reps"] = f.opt.data_reps;
    cfg["max_subsets"] = f.opt.max_subsets;
    cfg["alpha"] = f.opt.alpha;
    Json doc;
    doc["oracle_ci"] = trajectories.empty() ? Json(nullptr)
                                            : Json{trajectories.front().oracle_lower, trajectories.front().oracle_upper};
    doc["trajectories"] = std::move(traj);
    doc["manifest"] = manifest("relerr", std::move(cfg), f.seed, f.opt.threads, started);
    write_json(dir / "relerr.json", doc);

    for (const auto& t : trajectories)
        out << "gamma " << fmt(t.gamma) << "  b " << t.subset_size << "  Err(s=" << t.points.back().subsets
            << ") " << fmt(t.points.back().error) << '\n';
    out << "wrote " << (dir / "relerr.csv").string() << '\n';
    return 0;
}

// ---- benchmark -------------------------------------------------------------

struct BenchmarkFlags {
    BenchmarkOptions opt;
    std::vector<std::string> methods{"logistic", "cbps"};
    std::string output = "cblb-bench";
};

int cmd_benchmark(BenchmarkFlags f, const std::string& started, std::ostream& out) {
    f.opt.methods.clear();
    for (const auto& m : f.methods) f.opt.methods.push_back(parse_estimator(m));
    f.opt.threads = resolve_threads(f.opt.threads);
    const BenchmarkResult res = benchmark_timing(f.opt);
    const fs::path dir = output_dir(f.output);

    auto csv = open_output(dir / "timings.csv");
    csv << "n,p,method,s,rep,seconds,ok\n";
    for (const auto& r : res.rows)
        csv << r.n << ',' << r.p << ',' << to_string(r.method) << ',' << r.subsets << ',' << r.rep << ','
            << fmt(r.seconds) << ',' << int{r.ok} << '\n';
    auto med = open_output(dir / "medians.csv");
    med << "n,p,method,s,reps,failures,median,q1,q3\n";
    for (const auto& c : res.cells) {
        med << c.n << ',' << c.p << ',' << to_string(c.method) << ',' << c.subsets << ',' << c.reps << ','
            << c.failures << ',' << fmt(c.median) << ',' << fmt(c.q1) << ',' << fmt(c.q3) << '\n';
        out << "n " << c.n << "  p " << c.p << "  " << to_string(c.method) << "  s " << c.subsets << "  median "
            << fmt(c.median) << " s\n";
    }
    (void)started;
    out << "wrote " << (dir / "medians.csv").string() << '\n';
    return 0;
}

// ---- generate --------------------------------------------------------------

struct GenerateFlags {
    std::size_t n = 20000;
    std::size_t p = 2;
    std::uint64_t seed = 1;
    std::string output = "dgm.csv";
    std::string scores;
};

int cmd_generate(const GenerateFlags& f, std::ostream& out) {
    Stream stream(f.seed);
    const DgmSample sample = generate_dgm(f.n, f.p, stream);
    {
        auto csv = open_output(f.output);
        write_csv(csv, sample.table);
    }
    if (!f.scores.empty()) {
        auto sc = open_output(f.scores);
        for (double v : sample.propensity) sc << fmt(v) << '\n';
    }
    out << "wrote " << f.n << " rows to " << f.output << '\n';
    return 0;
}

/// Reads key=value lines ('#' comments) into flags placed before the user's
/// own, so command-line flags win under last-value policy.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
    std::vector<std::string> out;
    std::optional<std::string> path;
    std::size_t sub_pos = args.size();
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[i + 1];
            ++i;
            continue;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
            continue;
        }
        if (sub_pos == args.size() && !args[i].empty() && args[i][0] != '-') sub_pos = i;
        out.push_back(args[i]);
    }
    if (!path) return args;

    std::ifstream in(*path);
    if (!in) throw ConfigError("cannot open config file '" + *path + "'");
    std::set<std::string> given;
    for (const auto& a : out)
        if (a.rfind("--", 0) == 0) given.insert(a.substr(2, a.find('=') == std::string::npos ? std::string::npos
                                                                                                  : a.find('=') - 2));
    // Mutually exclusive pairs: a flag overrides its partner from the file.
    if (given.count("gamma")) given.insert("subset-size");
    if (given.count("subset-size")) given.insert("gamma");

    std::vector<std::string> injected;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto body = detail::trim(line);
        if (body.empty() || body.front() == '#') continue;
        const auto eq = body.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
        std::string key(detail::trim(body.substr(0, eq)));
        const std::string value(detail::trim(body.substr(eq + 1)));
        std::replace(key.begin(), key.end(), '_', '-');
        if (given.count(key)) continue;
        injected.push_back("--" + key + "=" + value);
    }
    if (sub_pos == out.size()) throw ConfigError("--config needs a subcommand");
    out.insert(out.begin() + static_cast<std::ptrdiff_t>(sub_pos) + 1, injected.begin(), injected.end());
    return out;
}

} // namespace

std::string sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
        EVP_MD_CTX_free(ctx);
        throw std::runtime_error("SHA-256 initialisation failed");
    }
    char buf[1 << 16];
    while (in.read(buf, sizeof buf) || in.gcount() > 0)
        EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    std::ostringstream hex;
    for (unsigned i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int{digest[i]};
    return hex.str();
}

Json to_json(const ConfidenceInterval& ci) {
    return {{"lower", ci.lower}, {"upper", ci.upper}, {"kind", to_string(ci.kind)}, {"alpha", ci.alpha}};
}

Json to_json(const BlbEstimate& est, const std::vector<std::string>& names) {
    Json subsets = Json::array();
    for (const auto& s : est.subsets) {
        Json smd = Json::array();
        for (std::size_t j = 0; j < s.balance.smd.size(); ++j)
            smd.push_back({{"covariate", j < names.size() ? names[j] : "x" + std::to_string(j + 1)},
                           {"smd", s.balance.smd[j] ? Json(*s.balance.smd[j]) : Json(nullptr)}});
        Json prop;
        prop["method"] = to_string(s.propensity.method);
        prop["converged"] = s.propensity.converged;
        prop["iterations"] = s.propensity.iterations;
        prop["objective"] = s.propensity.objective;
        prop["clamped"] = s.propensity.clamped;
        prop["coefficients"] = std::vector<double>(s.propensity.coefficients.begin(), s.propensity.coefficients.end());
        Json sub;
        sub["id"] = s.id;
        sub["n_control"] = s.n_control;
        sub["n_treated"] = s.n_treated;
        sub["tau_hat"] = s.tau_hat;
        sub["se"] = s.se;
        sub["hajek"] = s.hajek;
        sub["percentile_ci"] = to_json(s.percentile);
        sub["asymptotic_ci"] = to_json(s.asymptotic);
        sub["redraws"] = s.redraws;
        sub["propensity"] = std::move(prop);
        sub["balance"] = {{"smd", std::move(smd)},
                          {"max_abs_smd", s.balance.max_abs_smd},
                          {"threshold", s.balance.threshold},
                          {"pass", s.balance.pass}};
        subsets.push_back(std::move(sub));
    }
    Json j;
    j["tau_hat"] = est.tau_hat;
    j["se"] = est.se;
    j["ci"] = to_json(est.ci);
    j["percentile_ci"] = to_json(est.percentile);
    j["asymptotic_ci"] = to_json(est.asymptotic);
    j["hajek"] = est.hajek;
    j["n"] = est.n;
    j["n_control"] = est.n_control;
    j["n_treated"] = est.n_treated;
    j["subset_size"] = est.subset_size;
    j["subsets"] = est.subsets.size();
    j["replicates"] = est.replicates;
    j["diagnostics"] = {{"redraws", est.diagnostics.redraws},
                        {"clamped", est.diagnostics.clamped},
                        {"balance_failures", est.diagnostics.balance_failures},
                        {"max_abs_smd", est.diagnostics.max_abs_smd}};
    j["subset_estimates"] = std::move(subsets);
    return j;
}

Json to_json(const ReplicationSummary& s) {
    Json j;
    j["replications"] = s.replications;
    j["n"] = s.n;
    j["truth"] = s.truth;
    j["mean_tau"] = s.mean_tau;
    j["bias"] = s.bias;
    j["bias_mcse"] = s.bias_mcse;
    j["sd_tau"] = s.sd_tau;
    j["mean_se"] = s.mean_se;
    j["coverage"] = s.coverage;
    j["coverage_mcse"] = s.coverage_mcse;
    j["coverage_percentile"] = s.coverage_percentile;
    j["coverage_percentile_mcse"] = s.coverage_percentile_mcse;
    j["coverage_asymptotic"] = s.coverage_asymptotic;
    j["coverage_asymptotic_mcse"] = s.coverage_asymptotic_mcse;
    return j;
}

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
    const std::string started = utc_now();
    std::string config_path; // consumed by expand_config; declared for --help
    CLI::App app{"Causal bag of little bootstraps: ATE standard errors and intervals at scale", "cblb"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    AnalyzeFlags af;
    auto* analyze = app.add_subcommand("analyze", "Estimate the ATE of a CSV dataset");
    analyze->add_option("--input", af.input, "Input CSV with a header row")->required();
    analyze->add_option("--outcome", af.outcome, "Outcome column")->required();
    analyze->add_option("--treatment", af.treatment, "Binary treatment column")->required();
    analyze->add_option("--covariates", af.covariates, "Comma-separated covariate columns")
        ->required()
        ->delimiter(',')
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    analyze->add_option("--na", af.na, "Missing values: reject or drop")->capture_default_str();
    analyze->add_option("--seed", af.seed, "Root random seed")->capture_default_str();
    analyze->add_option("--threads", af.threads, "Worker threads (0 = all cores)")->capture_default_str();
    analyze->add_option("--output", af.output, "Output directory")->capture_default_str();
    analyze->add_flag("--emit-draws", af.emit_draws, "Also write every replicate estimate to draws.csv");
    analyze->add_option("--config", config_path, "key=value file; flags override it");
    af.blb.add(analyze, true);

    SimulateFlags sf;
    auto* simulate = app.add_subcommand("simulate", "Bias and coverage over replicated simulated datasets");
    simulate->add_option("--n", sf.n, "Rows per dataset")->capture_default_str();
    simulate->add_option("--replications", sf.replications, "Number of datasets (>= 10)")->capture_default_str();
    simulate->add_option("--seed", sf.seed, "Root random seed")->capture_default_str();
    simulate->add_option("--threads", sf.threads, "Worker threads (0 = all cores)")->capture_default_str();
    simulate->add_option("--output", sf.output, "Output directory")->capture_default_str();
    simulate->add_option("--config", config_path, "key=value file; flags override it");
    sf.blb.add(simulate, false);

    RelErrFlags rf;
    auto* relerr = app.add_subcommand("relerr", "Relative error of BLB bounds against an oracle interval");
    relerr->add_option("--n", rf.opt.n, "Rows per dataset")->capture_default_str();
    relerr->add_option("--gammas", rf.opt.gammas, "Comma-separated subset exponents")
        ->delimiter(',')
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    relerr->add_option("--replicates", rf.opt.replicates, "Bootstrap replicates per subset")->capture_default_str();
    relerr->add_option("--oracle-reps", rf.opt.oracle_reps, "Datasets for the oracle interval (>= 100)")
        ->capture_default_str();
    relerr->add_option("--data-reps", rf.opt.data_reps, "Datasets averaged per trajectory")->capture_default_str();
    relerr->add_option("--max-subsets", rf.opt.max_subsets, "Subsets per trajectory")->capture_default_str();
    relerr->add_option("--alpha", rf.opt.alpha, "Interval level is 1 - alpha")->capture_default_str();
    relerr->add_option("--method", rf.method, "Propensity method: logistic, cbps or marginal")->capture_default_str();
    relerr->add_option("--seed", rf.seed, "Root random seed")->capture_default_str();
    relerr->add_option("--threads", rf.opt.threads, "Worker threads (0 = all cores)")->capture_default_str();
    relerr->add_option("--output", rf.output, "Output directory")->capture_default_str();
    relerr->add_option("--config", config_path, "key=value file; flags override it");

    BenchmarkFlags bf;
    bf.opt.threads = 1;
    auto* bench = app.add_subcommand("benchmark", "Wall-time medians by method and subset count");
    bench->add_option("--ns", bf.opt.ns, "Comma-separated sample sizes")
        ->delimiter(',')
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    bench->add_option("--methods", bf.methods, "Comma-separated methods")
        ->delimiter(',')
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    bench->add_option("--subsets", bf.opt.subsets, "Comma-separated subset counts (b = n/s)")
        ->delimiter(',')
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    bench->add_option("--p", bf.opt.p, "Covariates")->capture_default_str();
    bench->add_option("--reps", bf.opt.reps, "Repetitions per cell")->capture_default_str();
    bench->add_option("--replicates", bf.opt.replicates, "Bootstrap replicates per subset")->capture_default_str();
    bench->add_flag("--grid", bf.opt.grid, "Vary n and p with s in {2, 4}, timing the propensity fits");
    bench->add_option("--ps", bf.opt.grid_ps, "Comma-separated covariate counts for --grid")
        ->delimiter(',')
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    bench->add_option("--seed", bf.opt.seed, "Root random seed")->capture_default_str();
    bench->add_option("--threads", bf.opt.threads, "Worker threads (0 = all cores)")->capture_default_str();
    bench->add_option("--output", bf.output, "Output directory")->capture_default_str();
    bench->add_option("--config", config_path, "key=value file; flags override it");

    GenerateFlags gf;
    auto* generate = app.add_subcommand("generate", "Write a simulated dataset as CSV");
    generate->add_option("--n", gf.n, "Rows")->capture_default_str();
    generate->add_option("--p", gf.p, "Covariates")->capture_default_str();
    generate->add_option("--seed", gf.seed, "Random seed")->capture_default_str();
    generate->add_option("--output", gf.output, "Output CSV path")->capture_default_str();
    generate->add_option("--scores", gf.scores, "Also write the true propensities, one per line");
    generate->add_option("--config", config_path, "key=value file; flags override it");

    try {
        std::vector<std::string> args = expand_config(raw_args);
        std::reverse(args.begin(), args.end());
        app.parse(args);

        if (analyze->parsed()) return cmd_analyze(af, started, out);
        if (simulate->parsed()) return cmd_simulate(sf, started, out);
        if (relerr->parsed()) return cmd_relerr(rf, started, out);
        if (bench->parsed()) return cmd_benchmark(bf, started, out);
        if (generate->parsed()) return cmd_generate(gf, out);
        return 2;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return 2;
    } catch (const ConfigError& e) {
        err << "configuration error: " << e.what() << '\n';
        return 2;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << '\n';
        return 3;
    } catch (const EstimationError& e) {
        err << "estimation error: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args, out, err);
}

} // namespace cblb::cli
