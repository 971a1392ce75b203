#pragma once

// Propensity score models and the normalized inverse-propensity arm weights.
//
// Both parametric fits (IRLS logistic regression and the just-identified
// covariate balancing propensity score) iterate on an internally standardized
// design (intercept + centred, unit-variance covariates) and report
// coefficients on the caller's original covariate scale. Convergence is
// always judged on the original scale.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cblb/config.hpp"
#include "cblb/data.hpp"
#include "cblb/error.hpp"

namespace cblb {

struct PropensityFit {
    /// pi-hat(X_i), one per row in the order the rows were given.
    Eigen::VectorXd scores;
    /// Intercept first; empty for marginal and external scores.
    Eigen::VectorXd coefficients;
    Estimator method = Estimator::logistic;
    bool converged = true;
    int iterations = 0;
    /// Final max-norm of the likelihood score (IRLS) or balance conditions (CBPS).
    double objective = 0.0;
    /// Scores moved by truncate_scores.
    std::size_t clamped = 0;
};

/// Normalized inverse-propensity weights; each arm sums to one.
struct ArmWeights {
    Eigen::VectorXd control;
    Eigen::VectorXd treated;
};

namespace detail {

inline constexpr double kSeparationNorm = 1e4;

struct Design {
    Eigen::MatrixXd z; // [1 | standardized x]
    Eigen::VectorXd mean;
    Eigen::VectorXd scale;
};

inline Design standardized_design(const Eigen::MatrixXd& x) {
    const Eigen::Index b = x.rows();
    const Eigen::Index p = x.cols();
    Design d{Eigen::MatrixXd(b, p + 1), x.colwise().mean().transpose(), Eigen::VectorXd(p)};
    d.z.col(0).setOnes();
    for (Eigen::Index j = 0; j < p; ++j) {
        const Eigen::ArrayXd centred = x.col(j).array() - d.mean(j);
        const double sd = std::sqrt(centred.square().sum() / static_cast<double>(b));
        if (!(sd > 1e-12 * (1.0 + std::abs(d.mean(j)))))
            throw EstimationError("covariate column " + std::to_string(j + 1) + " is constant within the sample");
        d.scale(j) = sd;
        d.z.col(j + 1) = centred.matrix() / sd;
    }
    return d;
}

inline Eigen::VectorXd to_original(const Eigen::VectorXd& gamma, const Design& d) {
    Eigen::VectorXd beta(gamma.size());
    beta.tail(gamma.size() - 1) = gamma.tail(gamma.size() - 1).cwiseQuotient(d.scale);
    beta(0) = gamma(0) - beta.tail(gamma.size() - 1).dot(d.mean);
    return beta;
}

inline Eigen::VectorXd to_standardized(const Eigen::VectorXd& beta, const Design& d) {
    Eigen::VectorXd gamma(beta.size());
    gamma.tail(beta.size() - 1) = beta.tail(beta.size() - 1).cwiseProduct(d.scale);
    gamma(0) = beta(0) + beta.tail(beta.size() - 1).dot(d.mean);
    return gamma;
}

inline Eigen::ArrayXd inverse_logit(const Eigen::VectorXd& eta) {
    return eta.array().unaryExpr([](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
    });
}

/// X~^T r with X~ = [1 | x], without materializing X~.
inline Eigen::VectorXd raw_gradient(const Eigen::MatrixXd& x, const Eigen::VectorXd& r) {
    Eigen::VectorXd g(x.cols() + 1);
    g(0) = r.sum();
    g.tail(x.cols()) = x.transpose() * r;
    return g;
}

inline Eigen::VectorXd as_real(std::span<const std::uint8_t> w) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(w.size()));
    for (std::size_t i = 0; i < w.size(); ++i) v(static_cast<Eigen::Index>(i)) = w[i];
    return v;
}

inline std::size_t count_treated(std::span<const std::uint8_t> w) {
    std::size_t n1 = 0;
    for (auto v : w) n1 += v;
    return n1;
}

inline void check_fit_inputs(const Eigen::MatrixXd& x, std::span<const std::uint8_t> w) {
    if (static_cast<std::size_t>(x.rows()) != w.size())
        throw std::invalid_argument("covariate rows and treatment length differ");
    const std::size_t n1 = count_treated(w);
    if (n1 == 0 || n1 == w.size()) throw DegenerateSubset("propensity fit needs both arms");
    if (static_cast<Eigen::Index>(w.size()) <= x.cols() + 1)
        throw EstimationError("propensity fit needs more rows than coefficients");
}

inline double log_likelihood(const Eigen::VectorXd& eta, const Eigen::VectorXd& wv) {
    // sum w*eta - log(1 + e^eta), evaluated stably
    double ll = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
        const double e = eta(i);
        const double softplus = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
        ll += wv(i) * e - softplus;
    }
    return ll;
}

} // namespace detail

/// Maximum-likelihood logistic regression by Newton/IRLS with step halving.
///
/// converged is set when the max-norm of the log-likelihood gradient on the
/// original covariate scale drops below tol. Throws SeparationError when the
/// coefficients diverge or the arms are perfectly classified.
inline PropensityFit fit_logistic_irls(const Eigen::MatrixXd& x, std::span<const std::uint8_t> w,
                                       double tol = 1e-8, int max_iter = 100) {
    detail::check_fit_inputs(x, w);
    const auto design = detail::standardized_design(x);
    const Eigen::VectorXd wv = detail::as_real(w);
    const double n1 = wv.sum();
    const double n0 = static_cast<double>(w.size()) - n1;

    Eigen::VectorXd gamma = Eigen::VectorXd::Zero(design.z.cols());
    gamma(0) = std::log(n1 / n0);

    PropensityFit fit;
    fit.method = Estimator::logistic;
    fit.converged = false;

    Eigen::VectorXd eta = design.z * gamma;
    Eigen::ArrayXd pi = detail::inverse_logit(eta);
    double loglik = detail::log_likelihood(eta, wv);

    for (int iter = 0;; ++iter) {
        const Eigen::VectorXd resid = wv - pi.matrix();
        fit.objective = detail::raw_gradient(x, resid).cwiseAbs().maxCoeff();
        fit.iterations = iter;
        if (fit.objective < tol) {
            fit.converged = true;
            break;
        }
        if (iter == max_iter) break;

        const Eigen::VectorXd v = (pi * (1.0 - pi)).matrix();
        const Eigen::MatrixXd info = design.z.transpose() * v.asDiagonal() * design.z;
        const Eigen::VectorXd score = design.z.transpose() * resid;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
        Eigen::VectorXd step = ldlt.solve(score);
        if (ldlt.info() != Eigen::Success || !step.allFinite())
            throw SeparationError("logistic information matrix is singular (separated arms)");

        // Step halving keeps the likelihood monotone.
        Eigen::VectorXd trial_eta;
        double trial_ll = 0.0;
        for (int half = 0; half < 40; ++half) {
            trial_eta = design.z * (gamma + step);
            trial_ll = detail::log_likelihood(trial_eta, wv);
            if (trial_ll >= loglik - 1e-12 * std::abs(loglik)) break;
            step *= 0.5;
        }
        gamma += step;
        eta = std::move(trial_eta);
        loglik = trial_ll;
        pi = detail::inverse_logit(eta);

        if (detail::to_original(gamma, design).norm() > detail::kSeparationNorm)
            throw SeparationError("logistic coefficients diverge (separated arms)");
    }

    if ((wv.array() - pi).abs().maxCoeff() < 1e-6)
        throw SeparationError("covariates perfectly separate the treatment arms");

    fit.coefficients = detail::to_original(gamma, design);
    fit.scores = pi.matrix();
    return fit;
}

/// Balance conditions of the just-identified ATE covariate balancing
/// propensity score: g(beta) = (1/b) sum_i [w_i/pi_i - (1-w_i)/(1-pi_i)] x~_i.
inline Eigen::VectorXd cbps_balance(const Eigen::MatrixXd& x, std::span<const std::uint8_t> w,
                                    const Eigen::VectorXd& coefficients) {
    Eigen::VectorXd eta = (x * coefficients.tail(x.cols())).array() + coefficients(0);
    Eigen::VectorXd c(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i)
        c(i) = w[static_cast<std::size_t>(i)] ? 1.0 + std::exp(-eta(i)) : -(1.0 + std::exp(eta(i)));
    return detail::raw_gradient(x, c) / static_cast<double>(x.rows());
}

/// Covariate balancing propensity score: logistic link, coefficients chosen
/// so the balance conditions vanish. Minimizes ||g||^2 by BFGS with an
/// analytic gradient and Armijo backtracking, started from the IRLS fit.
inline PropensityFit fit_cbps(const Eigen::MatrixXd& x, std::span<const std::uint8_t> w, double tol = 1e-6,
                              int max_iter = 200, SolverControl start_control = {1e-8, 100}) {
    detail::check_fit_inputs(x, w);
    const PropensityFit start = fit_logistic_irls(x, w, start_control.tol, start_control.max_iter);
    const auto design = detail::standardized_design(x);
    const auto b = static_cast<double>(x.rows());
    const Eigen::Index k = design.z.cols();

    struct Eval {
        Eigen::VectorXd eta;
        Eigen::VectorXd g;    // standardized balance conditions
        Eigen::MatrixXd jac;  // dg/dgamma, symmetric
        Eigen::VectorXd grad; // d||g||^2/dgamma
        double f = 0.0;
        double raw_norm = 0.0;
    };

    auto evaluate = [&](const Eigen::VectorXd& gamma, bool with_jacobian) {
        Eval e;
        e.eta = design.z * gamma;
        Eigen::VectorXd c(e.eta.size());
        Eigen::VectorXd d(e.eta.size());
        for (Eigen::Index i = 0; i < e.eta.size(); ++i) {
            if (w[static_cast<std::size_t>(i)]) {
                const double odds_inv = std::exp(-e.eta(i)); // (1 - pi) / pi
                c(i) = 1.0 + odds_inv;
                d(i) = -odds_inv;
            } else {
                const double odds = std::exp(e.eta(i)); // pi / (1 - pi)
                c(i) = -(1.0 + odds);
                d(i) = -odds;
            }
        }
        e.g = design.z.transpose() * c / b;
        e.f = e.g.squaredNorm();
        e.raw_norm = (detail::raw_gradient(x, c) / b).cwiseAbs().maxCoeff();
        if (with_jacobian && std::isfinite(e.f)) {
            e.jac = design.z.transpose() * d.asDiagonal() * design.z / b;
            e.grad = 2.0 * e.jac * e.g;
        }
        return e;
    };

    Eigen::VectorXd gamma = detail::to_standardized(start.coefficients, design);
    Eval cur = evaluate(gamma, true);
    if (!std::isfinite(cur.f)) throw EstimationError("CBPS start point has non-finite balance conditions");

    // Gauss-Newton curvature at the start seeds the inverse Hessian.
    Eigen::MatrixXd inv_hess = Eigen::MatrixXd::Identity(k, k);
    {
        Eigen::LDLT<Eigen::MatrixXd> ldlt(2.0 * cur.jac.transpose() * cur.jac);
        if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
            Eigen::MatrixXd candidate = ldlt.solve(Eigen::MatrixXd::Identity(k, k));
            if (candidate.allFinite()) inv_hess = candidate;
        }
    }

    PropensityFit fit;
    fit.method = Estimator::cbps;
    fit.converged = false;

    int iter = 0;
    for (;; ++iter) {
        if (cur.raw_norm < tol) {
            fit.converged = true;
            break;
        }
        if (iter == max_iter) break;

        Eigen::VectorXd dir = -inv_hess * cur.grad;
        double slope = cur.grad.dot(dir);
        if (!(slope < 0.0)) {
            inv_hess.setIdentity();
            dir = -cur.grad;
            slope = cur.grad.dot(dir);
        }

        double step = 1.0;
        bool accepted = false;
        Eval next;
        for (int ls = 0; ls < 60; ++ls) {
            next = evaluate(gamma + step * dir, false);
            if (std::isfinite(next.f) && next.f <= cur.f + 1e-4 * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;

        const Eigen::VectorXd s = step * dir;
        gamma += s;
        next = evaluate(gamma, true);
        const Eigen::VectorXd y = next.grad - cur.grad;
        const double ys = y.dot(s);
        if (ys > 1e-14 * s.norm() * y.norm()) {
            const double rho = 1.0 / ys;
            const Eigen::MatrixXd left = Eigen::MatrixXd::Identity(k, k) - rho * s * y.transpose();
            inv_hess = left * inv_hess * left.transpose() + rho * s * s.transpose();
        }
        cur = std::move(next);

        if (detail::to_original(gamma, design).norm() > detail::kSeparationNorm)
            throw SeparationError("CBPS coefficients diverge (separated arms)");
    }

    fit.iterations = iter;
    fit.objective = cur.raw_norm;
    fit.coefficients = detail::to_original(gamma, design);
    fit.scores = detail::inverse_logit(cur.eta).matrix();
    return fit;
}

/// Every score equals the treated fraction of w.
inline PropensityFit marginal_propensity(std::span<const std::uint8_t> w) {
    const std::size_t n1 = detail::count_treated(w);
    if (n1 == 0 || n1 == w.size()) throw DegenerateSubset("marginal propensity needs both arms");
    PropensityFit fit;
    fit.method = Estimator::marginal;
    fit.scores = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(w.size()),
                                           static_cast<double>(n1) / static_cast<double>(w.size()));
    return fit;
}

/// Clamps scores into [lo, hi] and records how many moved.
inline PropensityFit truncate_scores(PropensityFit fit, double lo, double hi) {
    if (!(lo >= 0.0 && lo < hi && hi <= 1.0)) throw ConfigError("truncation bounds must satisfy 0 <= lo < hi <= 1");
    for (auto& s : fit.scores) {
        const double clamped = std::clamp(s, lo, hi);
        if (clamped != s) {
            s = clamped;
            ++fit.clamped;
        }
    }
    return fit;
}

/// Normalized inverse-propensity weights, split by arm in row order:
/// treated 1/pi_i and control 1/(1 - pi_i), each normalized to sum to one.
inline ArmWeights normalized_weights(const PropensityFit& fit, std::span<const std::uint8_t> w) {
    if (static_cast<std::size_t>(fit.scores.size()) != w.size())
        throw std::invalid_argument("score count does not match treatment length");
    const std::size_t n1 = detail::count_treated(w);
    if (n1 == 0 || n1 == w.size()) throw DegenerateSubset("weights need both arms");

    ArmWeights out{Eigen::VectorXd(static_cast<Eigen::Index>(w.size() - n1)),
                   Eigen::VectorXd(static_cast<Eigen::Index>(n1))};
    Eigen::Index c = 0, t = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double s = fit.scores(static_cast<Eigen::Index>(i));
        if (!(s > 0.0 && s < 1.0)) throw EstimationError("propensity score outside (0, 1); truncate first");
        if (w[i])
            out.treated(t++) = 1.0 / s;
        else
            out.control(c++) = 1.0 / (1.0 - s);
    }
    out.control /= out.control.sum();
    out.treated /= out.treated.sum();
    return out;
}

/// Reads externally estimated scores, one real in (0, 1) per line.
inline PropensityFit parse_external_scores(std::istream& in, std::size_t expected) {
    std::vector<double> values;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto cell = detail::trim(line);
        if (cell.empty()) continue;
        double v = 0;
        if (!detail::parse_number(cell, v))
            throw DataError("scores line " + std::to_string(line_no) + ": not a number");
        if (!(v > 0.0 && v < 1.0))
            throw DataError("scores line " + std::to_string(line_no) + ": score outside (0, 1)");
        values.push_back(v);
    }
    if (values.size() != expected)
        throw DataError("scores file holds " + std::to_string(values.size()) + " values, expected " +
                        std::to_string(expected));
    PropensityFit fit;
    fit.method = Estimator::external;
    fit.scores = Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
    return fit;
}

inline PropensityFit load_external_scores(const std::string& path, std::size_t expected) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open scores file '" + path + "'");
    return parse_external_scores(in, expected);
}

} // namespace cblb
