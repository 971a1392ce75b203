#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cblb/error.hpp"

namespace cblb {

enum class CiKind { percentile, asymptotic };

enum class Estimator { logistic, cbps, marginal, external };

inline std::string_view to_string(CiKind kind) {
    return kind == CiKind::percentile ? "percentile" : "asymptotic";
}

inline std::string_view to_string(Estimator estimator) {
    switch (estimator) {
    case Estimator::logistic: return "logistic";
    case Estimator::cbps: return "cbps";
    case Estimator::marginal: return "marginal";
    case Estimator::external: return "external";
    }
    return "unknown";
}

inline CiKind parse_ci_kind(std::string_view text) {
    if (text == "percentile") return CiKind::percentile;
    if (text == "asymptotic") return CiKind::asymptotic;
    throw ConfigError("unknown CI kind '" + std::string(text) + "' (percentile, asymptotic)");
}

inline Estimator parse_estimator(std::string_view text) {
    if (text == "logistic") return Estimator::logistic;
    if (text == "cbps") return Estimator::cbps;
    if (text == "marginal") return Estimator::marginal;
    if (text == "external") return Estimator::external;
    throw ConfigError("unknown propensity method '" + std::string(text) +
                      "' (logistic, cbps, marginal, external)");
}

/// Propensity clamp bounds; (0, 1) disables truncation.
struct Truncation {
    double lo = 0.01;
    double hi = 0.99;
};

struct SolverControl {
    double tol;
    int max_iter;
};

/// All knobs of one causal BLB run.
struct BlbConfig {
    double gamma = 0.7;
    /// Explicit subset size b; overrides gamma when set.
    std::optional<std::size_t> subset_size;
    std::size_t subsets = 10;
    std::size_t replicates = 100;
    std::uint64_t seed = 1;
    Truncation truncation;
    double alpha = 0.05;
    CiKind ci_kind = CiKind::percentile;
    Estimator estimator = Estimator::logistic;
    std::size_t max_redraws = 10;
    /// A subset whose largest normalized weight exceeds this is redrawn. <= 0 or >= 1 disables.
    double weight_cap = 0.1;
    double balance_threshold = 0.1;
    bool redraw_on_imbalance = false;
    SolverControl irls{1e-8, 100};
    SolverControl cbps{1e-6, 200};
    /// One score per table row, used when estimator == external.
    std::vector<double> external_scores;
    /// Worker threads; 0 = machine parallelism. Never changes results.
    unsigned threads = 1;

    void validate() const {
        if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
        if (subset_size && *subset_size < 2) throw ConfigError("subset size must be at least 2");
        if (subsets < 1) throw ConfigError("number of subsets must be at least 1");
        if (replicates < 2) throw ConfigError("number of replicates must be at least 2");
        if (!(truncation.lo >= 0.0 && truncation.lo < truncation.hi && truncation.hi <= 1.0))
            throw ConfigError("truncation bounds must satisfy 0 <= lo < hi <= 1");
        if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
        if (!(balance_threshold > 0.0)) throw ConfigError("balance threshold must be positive");
        if (irls.tol <= 0 || irls.max_iter < 1 || cbps.tol <= 0 || cbps.max_iter < 1)
            throw ConfigError("solver tolerances and iteration limits must be positive");
        if (estimator == Estimator::external && external_scores.empty())
            throw ConfigError("external estimator requires a scores file");
    }
};

} // namespace cblb
