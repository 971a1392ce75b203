#pragma once

// Simulation harness: the two-covariate DGM, bias and coverage replications,
// the relative-error trajectory of BLB interval bounds against an oracle
// interval, and timing benchmarks.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cblb/config.hpp"
#include "cblb/data.hpp"
#include "cblb/engine.hpp"
#include "cblb/error.hpp"
#include "cblb/inference.hpp"
#include "cblb/parallel.hpp"
#include "cblb/propensity.hpp"
#include "cblb/random.hpp"

namespace cblb {

inline constexpr double kDgmAte = 2.0;

struct DgmSample {
    ObservationTable table;
    Eigen::VectorXd propensity;
    Eigen::VectorXd epsilon;
    Eigen::VectorXd y0;
    Eigen::VectorXd y1;
    double ate = kDgmAte;
};

/// X_j ~ N(0,1) iid, Pr(W=1|X) = expit(c * sum_j X_j), eps ~ N(0,1),
/// Y(0) = sqrt(2/p) * sum_j X_j + eps, Y(1) = Y(0) + 2, with c = 0.5 sqrt(2/p).
/// p = 2 gives c = 0.5 and unit outcome loadings.
inline DgmSample generate_dgm(std::size_t n, std::size_t p, Stream& stream) {
    if (n < 2) throw ConfigError("DGM needs n >= 2");
    if (p < 1) throw ConfigError("DGM needs at least one covariate");
    const auto rows = static_cast<Eigen::Index>(n);
    const auto cols = static_cast<Eigen::Index>(p);
    const double load = p == 2 ? 1.0 : std::sqrt(2.0 / static_cast<double>(p));
    const double coef = 0.5 * load;

    Eigen::MatrixXd x(rows, cols);
    Eigen::VectorXd prop(rows), eps(rows), y0(rows), y1(rows), y(rows);
    std::vector<std::uint8_t> w(n);
    for (Eigen::Index i = 0; i < rows; ++i) {
        double sum = 0.0;
        for (Eigen::Index j = 0; j < cols; ++j) {
            x(i, j) = stream.normal();
            sum += x(i, j);
        }
        prop(i) = 1.0 / (1.0 + std::exp(-coef * sum));
        const auto wi = static_cast<std::uint8_t>(stream.uniform() < prop(i));
        eps(i) = stream.normal();
        y0(i) = load * sum + eps(i);
        y1(i) = y0(i) + kDgmAte;
        y(i) = wi ? y1(i) : y0(i);
        w[static_cast<std::size_t>(i)] = wi;
    }
    return {ObservationTable(std::move(y), std::move(w), std::move(x)), std::move(prop), std::move(eps),
            std::move(y0), std::move(y1), kDgmAte};
}

inline DgmSample generate_dgm(std::size_t n, Stream& stream) { return generate_dgm(n, 2, stream); }

/// Type-7 quantile of unsorted data.
inline double sample_quantile(std::vector<double> values, double prob) {
    std::sort(values.begin(), values.end());
    return quantile_sorted(values, prob);
}

struct ReplicationRecord {
    std::size_t index = 0;
    double tau_hat = 0.0;
    double se = 0.0;
    double hajek = 0.0;
    ConfidenceInterval percentile;
    ConfidenceInterval asymptotic;
    bool covered_percentile = false;
    bool covered_asymptotic = false;
    /// |tau_hat - tau| / se.
    double z = 0.0;
    /// Fractional centile of z among all replications (zip-plot ordinate).
    double centile = 0.0;
    std::size_t redraws = 0;
    double seconds = 0.0;
};

struct ReplicationSummary {
    std::size_t replications = 0;
    std::size_t n = 0;
    double truth = kDgmAte;
    std::vector<ReplicationRecord> records;
    double mean_tau = 0.0;
    double bias = 0.0;
    double bias_mcse = 0.0;
    double sd_tau = 0.0;
    double mean_se = 0.0;
    double coverage_percentile = 0.0;
    double coverage_percentile_mcse = 0.0;
    double coverage_asymptotic = 0.0;
    double coverage_asymptotic_mcse = 0.0;
    /// Coverage of the interval selected by config.ci_kind.
    double coverage = 0.0;
    double coverage_mcse = 0.0;
    double time_q1 = 0.0, time_median = 0.0, time_q3 = 0.0;
};

inline double coverage_mcse(double coverage, std::size_t reps) {
    return std::sqrt(coverage * (1.0 - coverage) / static_cast<double>(reps));
}

/// R independent DGM datasets, each analyzed by run_blb. Replication i draws
/// its data from stream.substream(i) and its BLB seed from the same substream,
/// so two configs run on one stream share datasets and seeds.
inline ReplicationSummary run_replications(std::size_t reps, std::size_t n, const BlbConfig& config,
                                           const Stream& stream, unsigned threads = 1) {
    if (reps < 10) throw ConfigError("at least 10 replications are required");
    config.validate();
    ReplicationSummary summary;
    summary.replications = reps;
    summary.n = n;
    summary.records.resize(reps);

    parallel_for(reps, resolve_threads(threads), [&](std::size_t i) {
        Stream rs = stream.substream(i);
        const DgmSample sample = generate_dgm(n, rs);
        BlbConfig cfg = config;
        cfg.seed = rs();
        cfg.threads = 1;
        const BlbEstimate est = run_blb(sample.table, cfg);
        ReplicationRecord& rec = summary.records[i];
        rec.index = i;
        rec.tau_hat = est.tau_hat;
        rec.se = est.se;
        rec.hajek = est.hajek;
        rec.percentile = est.percentile;
        rec.asymptotic = est.asymptotic;
        rec.covered_percentile = est.percentile.lower <= kDgmAte && kDgmAte <= est.percentile.upper;
        rec.covered_asymptotic = est.asymptotic.lower <= kDgmAte && kDgmAte <= est.asymptotic.upper;
        const double dev = std::abs(est.tau_hat - kDgmAte);
        rec.z = est.se > 0.0 ? dev / est.se : (dev > 0.0 ? INFINITY : 0.0);
        rec.redraws = est.diagnostics.redraws;
        rec.seconds = est.timings.total_seconds;
    });

    const double R = static_cast<double>(reps);
    std::vector<double> taus, secs;
    std::size_t cov_p = 0, cov_a = 0;
    for (const auto& rec : summary.records) {
        taus.push_back(rec.tau_hat);
        secs.push_back(rec.seconds);
        summary.mean_se += rec.se / R;
        cov_p += rec.covered_percentile;
        cov_a += rec.covered_asymptotic;
    }
    summary.mean_tau = std::accumulate(taus.begin(), taus.end(), 0.0) / R;
    summary.bias = summary.mean_tau - kDgmAte;
    double ss = 0.0;
    for (double t : taus) ss += (t - summary.mean_tau) * (t - summary.mean_tau);
    summary.sd_tau = std::sqrt(ss / (R - 1.0));
    summary.bias_mcse = summary.sd_tau / std::sqrt(R);
    summary.coverage_percentile = static_cast<double>(cov_p) / R;
    summary.coverage_asymptotic = static_cast<double>(cov_a) / R;
    summary.coverage_percentile_mcse = coverage_mcse(summary.coverage_percentile, reps);
    summary.coverage_asymptotic_mcse = coverage_mcse(summary.coverage_asymptotic, reps);
    const bool pct = config.ci_kind == CiKind::percentile;
    summary.coverage = pct ? summary.coverage_percentile : summary.coverage_asymptotic;
    summary.coverage_mcse = pct ? summary.coverage_percentile_mcse : summary.coverage_asymptotic_mcse;
    summary.time_q1 = sample_quantile(secs, 0.25);
    summary.time_median = sample_quantile(secs, 0.5);
    summary.time_q3 = sample_quantile(secs, 0.75);

    // Centile rank: (rank + 1) / R in ascending z, ties broken by index.
    std::vector<std::size_t> order(reps);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return summary.records[a].z < summary.records[b].z; });
    for (std::size_t rank = 0; rank < reps; ++rank)
        summary.records[order[rank]].centile = static_cast<double>(rank + 1) / R;
    return summary;
}

/// Mean of |c_lo - xi_lo| / |xi_lo| and |c_up - xi_up| / |xi_up|.
inline double relative_error(std::pair<double, double> oracle, std::pair<double, double> blb) {
    if (oracle.first == 0.0 || oracle.second == 0.0)
        throw std::invalid_argument("relative error undefined for a zero oracle bound");
    return 0.5 * (std::abs(blb.first - oracle.first) / std::abs(oracle.first) +
                  std::abs(blb.second - oracle.second) / std::abs(oracle.second));
}

struct RelErrPoint {
    std::size_t subsets = 0;
    /// Cumulative seconds after this many subsets, averaged over datasets.
    double seconds = 0.0;
    /// Err^s averaged over datasets.
    double error = 0.0;
};

struct RelErrTrajectory {
    double gamma = 0.0;
    std::size_t subset_size = 0;
    double oracle_lower = 0.0;
    double oracle_upper = 0.0;
    std::vector<RelErrPoint> points;
};

struct RelErrOptions {
    std::size_t n = 20000;
    std::vector<double> gammas{0.5, 0.6, 0.7, 0.8, 0.9};
    std::size_t replicates = 100;
    std::size_t oracle_reps = 1000;
    std::size_t data_reps = 10;
    std::size_t max_subsets = 10;
    double alpha = 0.05;
    Estimator estimator = Estimator::logistic;
    unsigned threads = 1;
};

/// Oracle interval: alpha/2 and 1-alpha/2 quantiles of the full-data Hajek
/// estimate (logistic propensities) over fresh DGM datasets.
inline std::pair<double, double> oracle_interval(std::size_t n, std::size_t reps, double alpha, const Stream& stream,
                                                 unsigned threads = 1) {
    const BlbConfig defaults;
    std::vector<double> est(reps);
    parallel_for(reps, resolve_threads(threads), [&](std::size_t i) {
        Stream rs = stream.substream(i);
        const DgmSample sample = generate_dgm(n, rs);
        const auto& t = sample.table;
        PropensityFit fit = fit_logistic_irls(t.x(), t.w(), defaults.irls.tol, defaults.irls.max_iter);
        fit = truncate_scores(std::move(fit), defaults.truncation.lo, defaults.truncation.hi);
        Subset all;
        all.indices.resize(t.n());
        std::iota(all.indices.begin(), all.indices.end(), std::size_t{0});
        est[i] = hajek_ipw(order_subset(t, all, std::move(fit)));
    });
    return {sample_quantile(est, alpha / 2), sample_quantile(est, 1.0 - alpha / 2)};
}

/// Err^s after each of s = 1..max_subsets subsets, per gamma. Datasets (and
/// BLB seeds) are shared across gammas.
inline std::vector<RelErrTrajectory> run_relerr_harness(const RelErrOptions& opt, const Stream& stream) {
    if (opt.oracle_reps < 100) throw ConfigError("oracle replications must be at least 100");
    if (opt.data_reps < 1) throw ConfigError("data replications must be at least 1");
    if (opt.max_subsets < 1) throw ConfigError("max subsets must be at least 1");
    if (opt.gammas.empty()) throw ConfigError("at least one gamma is required");
    const unsigned threads = resolve_threads(opt.threads);
    const auto oracle = oracle_interval(opt.n, opt.oracle_reps, opt.alpha, stream.substream(0), threads);
    if (oracle.first == 0.0 || oracle.second == 0.0)
        throw EstimationError("oracle interval has a zero bound; relative error undefined");

    std::vector<DgmSample> datasets;
    std::vector<std::uint64_t> seeds;
    for (std::size_t d = 0; d < opt.data_reps; ++d) {
        Stream ds = stream.substream(1).substream(d);
        datasets.push_back(generate_dgm(opt.n, ds));
        seeds.push_back(ds());
    }

    std::vector<RelErrTrajectory> out;
    for (double gamma : opt.gammas) {
        BlbConfig cfg;
        cfg.gamma = gamma;
        cfg.subsets = opt.max_subsets;
        cfg.replicates = opt.replicates;
        cfg.alpha = opt.alpha;
        cfg.estimator = opt.estimator;
        cfg.validate();
        const std::size_t b = subset_size(opt.n, gamma);

        // errors[d][k], seconds[d][k]
        std::vector<std::vector<double>> errors(opt.data_reps), seconds(opt.data_reps);
        parallel_for(opt.data_reps, threads, [&](std::size_t d) {
            using Clock = std::chrono::steady_clock;
            BlbConfig c = cfg;
            c.seed = seeds[d];
            const DgmSample& sample = datasets[d];
            const auto n0 = static_cast<std::int64_t>(sample.table.n_control());
            const auto n1 = static_cast<std::int64_t>(sample.table.n_treated());
            const Stream replicate_root = Stream(c.seed).substream(stream_ids::kReplicates);
            double lo = 0.0, hi = 0.0, elapsed = 0.0;
            for (std::size_t k = 0; k < opt.max_subsets; ++k) {
                const auto t0 = Clock::now();
                const PreparedSubset prepared = prepare_subset(sample.table, c, b, k);
                const SubsetEstimate sub =
                    run_subset(prepared.fit, c.replicates, n0, n1, c.alpha, replicate_root.substream(k));
                elapsed += std::chrono::duration<double>(Clock::now() - t0).count();
                lo += sub.percentile.lower;
                hi += sub.percentile.upper;
                const double s = static_cast<double>(k + 1);
                errors[d].push_back(relative_error(oracle, {lo / s, hi / s}));
                seconds[d].push_back(elapsed);
            }
        });

        RelErrTrajectory traj{gamma, b, oracle.first, oracle.second, {}};
        const double D = static_cast<double>(opt.data_reps);
        for (std::size_t k = 0; k < opt.max_subsets; ++k) {
            RelErrPoint pt{k + 1, 0.0, 0.0};
            for (std::size_t d = 0; d < opt.data_reps; ++d) {
                pt.error += errors[d][k] / D;
                pt.seconds += seconds[d][k] / D;
            }
            traj.points.push_back(pt);
        }
        out.push_back(std::move(traj));
    }
    return out;
}

struct TimingRow {
    std::size_t n = 0;
    std::size_t p = 0;
    Estimator method = Estimator::logistic;
    std::size_t subsets = 0;
    std::size_t rep = 0;
    double seconds = 0.0;
    bool ok = true;
};

struct TimingCell {
    std::size_t n = 0;
    std::size_t p = 0;
    Estimator method = Estimator::logistic;
    std::size_t subsets = 0;
    std::size_t reps = 0;
    std::size_t failures = 0;
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
};

struct BenchmarkOptions {
    std::vector<std::size_t> ns{20000};
    std::vector<Estimator> methods{Estimator::logistic, Estimator::cbps};
    std::vector<std::size_t> subsets{2, 10};
    std::size_t p = 2;
    std::size_t reps = 100;
    std::size_t replicates = 100;
    /// Grid mode: vary (n, p) over ns x grid_ps with s in {2, 4}, timing the
    /// s propensity fits on n/s rows.
    bool grid = false;
    std::vector<std::size_t> grid_ps{2, 4, 8, 16};
    unsigned threads = 1;
    std::uint64_t seed = 1;
};

struct BenchmarkResult {
    std::vector<TimingRow> rows;
    std::vector<TimingCell> cells;
};

/// Median wall time per (n, p, method, s) cell with b = n/s. Repetitions are
/// interleaved across cells so slow drift in machine speed hits all cells alike.
inline BenchmarkResult benchmark_timing(const BenchmarkOptions& opt) {
    using Clock = std::chrono::steady_clock;
    if (opt.reps < 1) throw ConfigError("benchmark needs at least one repetition");
    if (opt.ns.empty() || opt.methods.empty()) throw ConfigError("benchmark needs sizes and methods");
    const std::vector<std::size_t> s_values = opt.grid ? std::vector<std::size_t>{2, 4} : opt.subsets;
    const std::vector<std::size_t> ps = opt.grid ? opt.grid_ps : std::vector<std::size_t>{opt.p};
    if (s_values.empty() || ps.empty()) throw ConfigError("benchmark needs subset counts and dimensions");
    for (auto s : s_values)
        if (s < 1) throw ConfigError("subset counts must be positive");
    for (auto m : opt.methods)
        if (m == Estimator::external) throw ConfigError("external scores cannot be benchmarked");

    const Stream root(opt.seed);
    BenchmarkResult result;
    for (std::size_t rep = 0; rep < opt.reps; ++rep) {
        for (std::size_t n : opt.ns) {
            for (std::size_t p : ps) {
                Stream ds = root.substream(rep).substream(n).substream(p);
                const DgmSample sample = generate_dgm(n, p, ds);
                const std::uint64_t seed = ds();
                for (Estimator method : opt.methods) {
                    for (std::size_t s : s_values) {
                        if (n / s < 2) throw ConfigError("n/s must be at least 2");
                        BlbConfig cfg;
                        cfg.estimator = method;
                        cfg.subsets = s;
                        cfg.subset_size = n / s;
                        cfg.replicates = opt.replicates;
                        cfg.seed = seed;
                        cfg.threads = opt.threads;
                        TimingRow row{n, p, method, s, rep, 0.0, true};
                        const auto t0 = Clock::now();
                        try {
                            if (opt.grid) {
                                for (std::size_t k = 0; k < s; ++k) {
                                    Stream ss = Stream(seed).substream(stream_ids::kSubsets).substream(k);
                                    const Subset subset = draw_subset(sample.table, n / s, ss);
                                    (void)fit_propensity(sample.table, subset, cfg);
                                }
                            } else {
                                (void)run_blb(sample.table, cfg);
                            }
                        } catch (const EstimationError&) {
                            row.ok = false;
                        }
                        row.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
                        result.rows.push_back(row);
                    }
                }
            }
        }
    }

    for (std::size_t n : opt.ns)
        for (std::size_t p : ps)
            for (Estimator method : opt.methods)
                for (std::size_t s : s_values) {
                    TimingCell cell{n, p, method, s, 0, 0, 0.0, 0.0, 0.0};
                    std::vector<double> secs;
                    for (const auto& row : result.rows)
                        if (row.n == n && row.p == p && row.method == method && row.subsets == s) {
                            ++cell.reps;
                            if (!row.ok) ++cell.failures;
                            secs.push_back(row.seconds);
                        }
                    cell.q1 = sample_quantile(secs, 0.25);
                    cell.median = sample_quantile(secs, 0.5);
                    cell.q3 = sample_quantile(secs, 0.75);
                    result.cells.push_back(cell);
                }
    return result;
}

} // namespace cblb
