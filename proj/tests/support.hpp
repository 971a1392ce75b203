#pragma once

#include <Eigen/Dense>
#include <boost/math/distributions/chi_squared.hpp>

#include <cstdint>
#include <numeric>
#include <vector>

#include "cblb/cblb.hpp"

namespace testing_support {

inline cblb::ObservationTable make_table(std::vector<double> y, std::vector<std::uint8_t> w,
                                         std::vector<std::vector<double>> cols = {}) {
    const auto n = static_cast<Eigen::Index>(y.size());
    Eigen::MatrixXd x(n, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j)
        for (Eigen::Index i = 0; i < n; ++i) x(i, static_cast<Eigen::Index>(j)) = cols[j][static_cast<std::size_t>(i)];
    return {Eigen::Map<Eigen::VectorXd>(y.data(), n), std::move(w), std::move(x)};
}

inline cblb::Subset whole(std::size_t n) {
    cblb::Subset s;
    s.indices.resize(n);
    std::iota(s.indices.begin(), s.indices.end(), std::size_t{0});
    return s;
}

/// Random two-arm subset fit with random positive scores; b0, b1 >= 1.
inline cblb::SubsetFit random_subset_fit(cblb::Stream& rng, std::size_t b0, std::size_t b1, double y_scale = 3.0) {
    const std::size_t b = b0 + b1;
    std::vector<double> y(b), x1(b);
    std::vector<std::uint8_t> w(b);
    for (std::size_t i = 0; i < b; ++i) {
        y[i] = y_scale * rng.normal();
        x1[i] = rng.normal();
    }
    for (std::size_t i = 0; i < b1; ++i) w[i] = 1;
    // Shuffle arms so order_subset has work to do.
    for (std::size_t i = b; i-- > 1;) std::swap(w[i], w[rng.below(i + 1)]);
    const auto table = make_table(y, w, {x1});
    cblb::PropensityFit fit;
    fit.method = cblb::Estimator::external;
    fit.scores.resize(static_cast<Eigen::Index>(b));
    for (auto& s : fit.scores) s = 0.05 + 0.9 * rng.uniform();
    return cblb::order_subset(table, whole(b), fit);
}

/// Upper-tail probability of a chi-square statistic.
inline double chi_square_pvalue(double stat, double df) {
    return boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<double>(df), stat));
}

} // namespace testing_support
