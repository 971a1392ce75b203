#pragma once

// Causal bag of little bootstraps.
//
// For each of s subsets of size b: fit a propensity model, reorder the
// subset controls-first, build normalized inverse-propensity weights per
// arm, then draw r replicates. A replicate resamples the full-data arm sizes
// (n1 treated, n0 control) from the subset through two multinomials and
// evaluates
//
//     tau_jk = (1/n1) sum_treated M_i y_i - (1/n0) sum_control M_i y_i.
//
// Subset summaries (mean, SD, percentile bounds) are averaged over subsets.
//
// Stream layout under the root seed:
//   substream(0).substream(k).substream(a)  subset k, draw attempt a
//   substream(1).substream(k).substream(j)  subset k, replicate j

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cblb/config.hpp"
#include "cblb/data.hpp"
#include "cblb/error.hpp"
#include "cblb/inference.hpp"
#include "cblb/parallel.hpp"
#include "cblb/propensity.hpp"
#include "cblb/random.hpp"
#include "cblb/subset_fit.hpp"

namespace cblb {

namespace stream_ids {
inline constexpr std::uint64_t kSubsets = 0;
inline constexpr std::uint64_t kReplicates = 1;
} // namespace stream_ids

/// Reorders a subset controls-first (stable within each arm) and attaches
/// normalized weights. `fit` scores are in subset index order.
inline SubsetFit order_subset(const ObservationTable& table, const Subset& subset, PropensityFit fit,
                              std::size_t id = 0) {
    const std::size_t b = subset.size();
    if (static_cast<std::size_t>(fit.scores.size()) != b)
        throw std::invalid_argument("score count does not match subset size");

    std::vector<std::size_t> order(b);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_partition(order.begin(), order.end(),
                          [&](std::size_t pos) { return table.w()[subset.indices[pos]] == 0; });

    SubsetFit out;
    out.id = id;
    out.rows.resize(b);
    out.w.resize(b);
    out.y.resize(static_cast<Eigen::Index>(b));
    out.x.resize(static_cast<Eigen::Index>(b), table.x().cols());
    Eigen::VectorXd scores(static_cast<Eigen::Index>(b));
    for (std::size_t pos = 0; pos < b; ++pos) {
        const std::size_t row = subset.indices[order[pos]];
        const auto at = static_cast<Eigen::Index>(pos);
        out.rows[pos] = row;
        out.w[pos] = table.w()[row];
        out.y(at) = table.y()(static_cast<Eigen::Index>(row));
        out.x.row(at) = table.x().row(static_cast<Eigen::Index>(row));
        scores(at) = fit.scores(static_cast<Eigen::Index>(order[pos]));
        out.n_treated += out.w[pos];
    }
    out.n_control = b - out.n_treated;
    if (out.n_control == 0 || out.n_treated == 0)
        throw DegenerateSubset("subset " + std::to_string(id) + " contains a single treatment arm");

    fit.scores = std::move(scores);
    out.weights = normalized_weights(fit, out.w);
    out.propensity = std::move(fit);
    return out;
}

/// Multinomial sampler by sequential conditional binomials; O(K) per draw.
/// Conditional probabilities p_i / sum_{j>=i} p_j are computed once.
class MultinomialSampler {
public:
    explicit MultinomialSampler(std::span<const double> probs) : conditional_(probs.size()) {
        if (probs.empty()) throw std::invalid_argument("multinomial needs at least one category");
        double total = 0.0;
        for (double p : probs) {
            if (!(p >= 0.0) || !std::isfinite(p)) throw std::invalid_argument("negative or non-finite probability");
            total += p;
        }
        if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("probabilities must sum to one");
        double tail = 0.0;
        for (std::size_t i = probs.size(); i-- > 0;) {
            tail += probs[i];
            conditional_[i] = tail > 0.0 ? std::min(1.0, probs[i] / tail) : 0.0;
        }
        conditional_.back() = 1.0;
    }

    [[nodiscard]] std::size_t categories() const noexcept { return conditional_.size(); }

    void draw(std::int64_t size, Stream& stream, std::span<std::int64_t> out) const {
        if (size < 0) throw std::invalid_argument("multinomial size must be nonnegative");
        if (out.size() != conditional_.size()) throw std::invalid_argument("output length mismatch");
        std::int64_t remaining = size;
        for (std::size_t i = 0; i < conditional_.size(); ++i) {
            const std::int64_t x = remaining > 0 ? binomial(stream, remaining, conditional_[i]) : 0;
            out[i] = x;
            remaining -= x;
        }
    }

private:
    std::vector<double> conditional_;
};

inline std::vector<std::int64_t> draw_multinomial(std::span<const double> probs, std::int64_t size,
                                                  Stream& stream) {
    MultinomialSampler sampler(probs);
    std::vector<std::int64_t> counts(probs.size());
    sampler.draw(size, stream, counts);
    return counts;
}

/// Concatenated counts M~: control positions first, then treated.
struct ReplicateDraw {
    std::vector<std::int64_t> counts;
};

/// Both arm samplers of one subset.
struct SubsetSampler {
    MultinomialSampler control;
    MultinomialSampler treated;

    explicit SubsetSampler(const SubsetFit& fit)
        : control(std::span<const double>(fit.weights.control.data(), fit.n_control)),
          treated(std::span<const double>(fit.weights.treated.data(), fit.n_treated)) {}

    /// Treated counts are drawn first, then control, from one replicate stream.
    [[nodiscard]] ReplicateDraw draw(std::int64_t n0, std::int64_t n1, Stream& stream) const {
        ReplicateDraw d;
        const std::size_t b0 = control.categories();
        d.counts.resize(b0 + treated.categories());
        const std::span<std::int64_t> all(d.counts);
        treated.draw(n1, stream, all.subspan(b0));
        control.draw(n0, stream, all.first(b0));
        return d;
    }
};

inline ReplicateDraw draw_replicate(const SubsetFit& fit, std::int64_t n0, std::int64_t n1, Stream& stream) {
    return SubsetSampler(fit).draw(n0, n1, stream);
}

/// (1/n1) sum_treated M_i y_i - (1/n0) sum_control M_i y_i.
inline double replicate_estimate(const ReplicateDraw& draw, const SubsetFit& fit, std::int64_t n0,
                                 std::int64_t n1) {
    if (draw.counts.size() != fit.size()) throw std::invalid_argument("draw length does not match subset");
    // Arm count sums are fixed, so centring on y[0] leaves the value unchanged
    // and makes a constant outcome give exactly zero.
    const double ref = fit.y(0);
    double control = 0.0, treated = 0.0;
    for (std::size_t i = 0; i < fit.n_control; ++i)
        control += static_cast<double>(draw.counts[i]) * (fit.y(static_cast<Eigen::Index>(i)) - ref);
    for (std::size_t i = fit.n_control; i < fit.size(); ++i)
        treated += static_cast<double>(draw.counts[i]) * (fit.y(static_cast<Eigen::Index>(i)) - ref);
    return treated / static_cast<double>(n1) - control / static_cast<double>(n0);
}

struct SubsetEstimate {
    std::size_t id = 0;
    std::size_t n_control = 0;
    std::size_t n_treated = 0;
    std::vector<double> draws;
    double tau_hat = 0.0;
    double se = 0.0;
    ConfidenceInterval percentile;
    ConfidenceInterval asymptotic;
    double hajek = 0.0;
    std::size_t redraws = 0;
    /// Propensity fit diagnostics; scores are not retained.
    PropensityFit propensity;
    BalanceReport balance;
};

/// Mean, SD (divisor r-1), percentile and asymptotic bounds of one subset.
inline SubsetEstimate summarize_subset(const SubsetFit& fit, std::vector<double> draws, double alpha) {
    if (draws.size() < 2) throw ConfigError("a subset needs at least two replicates");
    SubsetEstimate est;
    est.id = fit.id;
    est.n_control = fit.n_control;
    est.n_treated = fit.n_treated;
    const double r = static_cast<double>(draws.size());
    est.tau_hat = std::accumulate(draws.begin(), draws.end(), 0.0) / r;
    double ss = 0.0;
    for (double d : draws) ss += (d - est.tau_hat) * (d - est.tau_hat);
    est.se = std::sqrt(ss / (r - 1.0));
    est.percentile = percentile_ci(draws, alpha);
    est.hajek = hajek_ipw(fit);
    est.asymptotic = asymptotic_ci(est.hajek, est.se, alpha);
    est.propensity = fit.propensity;
    est.propensity.scores.resize(0);
    est.draws = std::move(draws);
    return est;
}

/// Draws r replicates of one subset; replicate j uses stream.substream(j).
inline SubsetEstimate run_subset(const SubsetFit& fit, std::size_t r, std::int64_t n0, std::int64_t n1,
                                 double alpha, const Stream& stream) {
    if (r < 2) throw ConfigError("a subset needs at least two replicates");
    const SubsetSampler sampler(fit);
    std::vector<double> draws(r);
    for (std::size_t j = 0; j < r; ++j) {
        Stream rs = stream.substream(j);
        draws[j] = replicate_estimate(sampler.draw(n0, n1, rs), fit, n0, n1);
    }
    return summarize_subset(fit, std::move(draws), alpha);
}

/// Subset size for a table under a config.
inline std::size_t resolve_subset_size(std::size_t n, const BlbConfig& config) {
    if (config.subset_size) {
        if (*config.subset_size < 2 || *config.subset_size > n)
            throw ConfigError("subset size must lie in [2, n]");
        return *config.subset_size;
    }
    return subset_size(n, config.gamma);
}

/// Propensity fit of one subset, scores in subset index order.
inline PropensityFit fit_propensity(const ObservationTable& table, const Subset& subset, const BlbConfig& config) {
    const Eigen::MatrixXd x = table.x()(subset.indices, Eigen::all);
    std::vector<std::uint8_t> w(subset.size());
    for (std::size_t i = 0; i < subset.size(); ++i) w[i] = table.w()[subset.indices[i]];
    switch (config.estimator) {
    case Estimator::logistic: return fit_logistic_irls(x, w, config.irls.tol, config.irls.max_iter);
    case Estimator::cbps: return fit_cbps(x, w, config.cbps.tol, config.cbps.max_iter, config.irls);
    case Estimator::marginal: return marginal_propensity(w);
    case Estimator::external: {
        if (config.external_scores.size() != table.n())
            throw DataError("external scores must hold one value per table row");
        PropensityFit fit;
        fit.method = Estimator::external;
        fit.scores.resize(static_cast<Eigen::Index>(subset.size()));
        for (std::size_t i = 0; i < subset.size(); ++i)
            fit.scores(static_cast<Eigen::Index>(i)) = config.external_scores[subset.indices[i]];
        return fit;
    }
    }
    throw ConfigError("unknown estimator");
}

struct PreparedSubset {
    SubsetFit fit;
    std::size_t redraws = 0;
    BalanceReport balance;
};

/// Draws subset k and fits it, redrawing degenerate, unfit, overlap-violating
/// (and, when configured, imbalanced) subsets up to config.max_redraws times.
inline PreparedSubset prepare_subset(const ObservationTable& table, const BlbConfig& config, std::size_t b,
                                     std::size_t k) {
    const Stream base = Stream(config.seed).substream(stream_ids::kSubsets).substream(k);
    const bool cap_active = config.weight_cap > 0.0 && config.weight_cap < 1.0;
    std::string last_failure;
    bool any_fit = false;

    for (std::size_t attempt = 0; attempt <= config.max_redraws; ++attempt) {
        Stream stream = base.substream(attempt);
        const Subset subset = draw_subset(table, b, stream);
        std::size_t treated = 0;
        for (auto row : subset.indices) treated += table.w()[row];
        if (treated == 0 || treated == b) {
            last_failure = "single-arm subset";
            continue;
        }

        PropensityFit fit;
        try {
            fit = fit_propensity(table, subset, config);
        } catch (const DataError&) {
            throw;
        } catch (const EstimationError& e) {
            last_failure = e.what();
            continue;
        }
        if (!fit.converged) {
            last_failure = std::string(to_string(fit.method)) + " fit did not converge (objective " +
                           std::to_string(fit.objective) + ")";
            continue;
        }
        any_fit = true;
        fit = truncate_scores(std::move(fit), config.truncation.lo, config.truncation.hi);

        PreparedSubset prepared;
        try {
            prepared.fit = order_subset(table, subset, std::move(fit), k);
        } catch (const EstimationError& e) {
            last_failure = e.what();
            continue;
        }
        if (cap_active && std::max(prepared.fit.weights.control.maxCoeff(), prepared.fit.weights.treated.maxCoeff()) >
                              config.weight_cap) {
            last_failure = "normalized weight above cap (overlap)";
            continue;
        }
        prepared.balance = smd_balance(prepared.fit, config.balance_threshold);
        if (config.redraw_on_imbalance && !prepared.balance.pass) {
            last_failure = "covariate balance above threshold";
            continue;
        }
        prepared.redraws = attempt;
        return prepared;
    }
    if (!any_fit)
        throw EstimationError("subset " + std::to_string(k) + ": propensity fit failed in every attempt (" +
                              last_failure + ")");
    throw EstimationError("subset " + std::to_string(k) + ": redraw budget exhausted (" + last_failure + ")");
}

struct BlbTimings {
    double fit_seconds = 0.0;
    double bootstrap_seconds = 0.0;
    double total_seconds = 0.0;
};

struct BlbDiagnostics {
    std::size_t redraws = 0;
    std::size_t clamped = 0;
    std::size_t balance_failures = 0;
    double max_abs_smd = 0.0;
};

struct BlbEstimate {
    double tau_hat = 0.0;
    double se = 0.0;
    /// The interval selected by config.ci_kind.
    ConfidenceInterval ci;
    ConfidenceInterval percentile;
    ConfidenceInterval asymptotic;
    /// Mean of the subset Hajek estimates.
    double hajek = 0.0;
    std::size_t n = 0, n_control = 0, n_treated = 0;
    std::size_t subset_size = 0;
    std::size_t replicates = 0;
    std::vector<SubsetEstimate> subsets;
    BlbDiagnostics diagnostics;
    BlbTimings timings;
};

/// Unweighted means over subsets of tau_k, se_k and both interval kinds.
inline void aggregate_subsets(BlbEstimate& est, CiKind ci_kind, double alpha) {
    const auto s = static_cast<double>(est.subsets.size());
    est.tau_hat = est.se = est.hajek = 0.0;
    est.percentile = {0.0, 0.0, CiKind::percentile, alpha};
    est.asymptotic = {0.0, 0.0, CiKind::asymptotic, alpha};
    est.diagnostics = {};
    for (const auto& sub : est.subsets) {
        est.tau_hat += sub.tau_hat;
        est.se += sub.se;
        est.hajek += sub.hajek;
        est.percentile.lower += sub.percentile.lower;
        est.percentile.upper += sub.percentile.upper;
        est.asymptotic.lower += sub.asymptotic.lower;
        est.asymptotic.upper += sub.asymptotic.upper;
        est.diagnostics.redraws += sub.redraws;
        est.diagnostics.clamped += sub.propensity.clamped;
        est.diagnostics.balance_failures += sub.balance.pass ? 0 : 1;
        est.diagnostics.max_abs_smd = std::max(est.diagnostics.max_abs_smd, sub.balance.max_abs_smd);
    }
    est.tau_hat /= s;
    est.se /= s;
    est.hajek /= s;
    est.percentile.lower /= s;
    est.percentile.upper /= s;
    est.asymptotic.lower /= s;
    est.asymptotic.upper /= s;
    est.ci = ci_kind == CiKind::percentile ? est.percentile : est.asymptotic;
}

/// Full causal BLB run. A pure function of (table, config); config.threads
/// changes only wall time.
inline BlbEstimate run_blb(const ObservationTable& table, const BlbConfig& config) {
    using Clock = std::chrono::steady_clock;
    const auto t0 = Clock::now();
    config.validate();
    if (table.n_treated() == 0 || table.n_control() == 0) throw DataError("table needs both treatment arms");
    if (config.estimator == Estimator::external && config.external_scores.size() != table.n())
        throw DataError("external scores must hold one value per table row");

    const std::size_t b = resolve_subset_size(table.n(), config);
    const std::size_t s = config.subsets;
    const std::size_t r = config.replicates;
    const auto n0 = static_cast<std::int64_t>(table.n_control());
    const auto n1 = static_cast<std::int64_t>(table.n_treated());
    const unsigned threads = resolve_threads(config.threads);

    std::vector<PreparedSubset> prepared(s);
    parallel_for(s, threads, [&](std::size_t k) { prepared[k] = prepare_subset(table, config, b, k); });
    const auto t1 = Clock::now();

    std::vector<SubsetSampler> samplers;
    samplers.reserve(s);
    for (const auto& p : prepared) samplers.emplace_back(p.fit);
    std::vector<std::vector<double>> draws(s, std::vector<double>(r));
    const Stream replicate_root = Stream(config.seed).substream(stream_ids::kReplicates);
    parallel_for(s * r, threads, [&](std::size_t task) {
        const std::size_t k = task / r;
        const std::size_t j = task % r;
        Stream rs = replicate_root.substream(k).substream(j);
        draws[k][j] = replicate_estimate(samplers[k].draw(n0, n1, rs), prepared[k].fit, n0, n1);
    });
    const auto t2 = Clock::now();

    BlbEstimate est;
    est.n = table.n();
    est.n_control = table.n_control();
    est.n_treated = table.n_treated();
    est.subset_size = b;
    est.replicates = r;
    est.subsets.reserve(s);
    for (std::size_t k = 0; k < s; ++k) {
        auto sub = summarize_subset(prepared[k].fit, std::move(draws[k]), config.alpha);
        sub.redraws = prepared[k].redraws;
        sub.balance = std::move(prepared[k].balance);
        est.subsets.push_back(std::move(sub));
    }
    aggregate_subsets(est, config.ci_kind, config.alpha);

    const auto t3 = Clock::now();
    const auto seconds = [](auto d) { return std::chrono::duration<double>(d).count(); };
    est.timings = {seconds(t1 - t0), seconds(t2 - t1), seconds(t3 - t0)};
    return est;
}

} // namespace cblb
