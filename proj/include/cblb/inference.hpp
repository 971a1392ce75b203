#pragma once

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "cblb/config.hpp"
#include "cblb/error.hpp"
#include "cblb/subset_fit.hpp"

namespace cblb {

struct ConfidenceInterval {
    double lower = 0.0;
    double upper = 0.0;
    CiKind kind = CiKind::percentile;
    double alpha = 0.05;
};

/// Standardized mean differences of one weighted subset.
struct BalanceReport {
    /// Per covariate; nullopt where the pooled SD is zero (not applicable).
    std::vector<std::optional<double>> smd;
    double max_abs_smd = 0.0;
    double threshold = 0.1;
    bool pass = true;
};

/// Standard normal quantile.
inline double normal_quantile(double prob) {
    return boost::math::quantile(boost::math::normal_distribution<double>(), prob);
}

/// Empirical quantile of sorted data, linear interpolation between order
/// statistics (Hyndman-Fan type 7).
inline double quantile_sorted(std::span<const double> sorted, double prob) {
    if (sorted.empty()) throw std::invalid_argument("quantile of empty sample");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

/// (q_{alpha/2}, q_{1-alpha/2}) of the bootstrap draws.
inline ConfidenceInterval percentile_ci(std::span<const double> draws, double alpha) {
    if (draws.size() < 2) throw ConfigError("percentile interval needs at least two draws");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
    std::vector<double> sorted(draws.begin(), draws.end());
    std::sort(sorted.begin(), sorted.end());
    return {quantile_sorted(sorted, alpha / 2), quantile_sorted(sorted, 1.0 - alpha / 2), CiKind::percentile, alpha};
}

/// center -/+ z_{1-alpha/2} * se.
inline ConfidenceInterval asymptotic_ci(double center, double se, double alpha) {
    if (!(se >= 0.0)) throw ConfigError("standard error must be nonnegative");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
    const double half = normal_quantile(1.0 - alpha / 2) * se;
    return {center - half, center + half, CiKind::asymptotic, alpha};
}

/// Normalized (Hajek) IPW estimate on the whole subset:
/// sum_treated w1_i y_i - sum_control w0_i y_i.
inline double hajek_ipw(const SubsetFit& fit) {
    if (fit.n_control == 0 || fit.n_treated == 0) throw DegenerateSubset("Hajek estimate needs both arms");
    const auto b0 = static_cast<Eigen::Index>(fit.n_control);
    const auto b1 = static_cast<Eigen::Index>(fit.n_treated);
    // Centring on y[0] makes a constant outcome give exactly zero.
    const double ref = fit.y(0);
    const double treated = fit.weights.treated.dot((fit.y.tail(b1).array() - ref).matrix());
    const double control = fit.weights.control.dot((fit.y.head(b0).array() - ref).matrix());
    return treated - control;
}

/// Weighted SMD per covariate against the pooled unweighted SD
/// sqrt((var_treated + var_control) / 2).
inline BalanceReport smd_balance(const SubsetFit& fit, double threshold = 0.1) {
    const auto b0 = static_cast<Eigen::Index>(fit.n_control);
    const auto b1 = static_cast<Eigen::Index>(fit.n_treated);
    BalanceReport report;
    report.threshold = threshold;
    auto variance = [](const Eigen::VectorXd& v) {
        if (v.size() < 2) return 0.0;
        return (v.array() - v.mean()).square().sum() / static_cast<double>(v.size() - 1);
    };
    for (Eigen::Index j = 0; j < fit.x.cols(); ++j) {
        const Eigen::VectorXd control = fit.x.col(j).head(b0);
        const Eigen::VectorXd treated = fit.x.col(j).tail(b1);
        const double pooled = std::sqrt((variance(treated) + variance(control)) / 2.0);
        if (!(pooled > 0.0)) {
            report.smd.emplace_back(std::nullopt);
            continue;
        }
        const double diff = fit.weights.treated.dot(treated) - fit.weights.control.dot(control);
        const double smd = diff / pooled;
        report.smd.emplace_back(smd);
        report.max_abs_smd = std::max(report.max_abs_smd, std::abs(smd));
    }
    report.pass = report.max_abs_smd <= threshold;
    return report;
}

} // namespace cblb
