#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cblb/propensity.hpp"

namespace cblb {

/// One subset reordered by arm: positions [0, n_control) are controls and
/// [n_control, size) are treated, each arm in original row order.
struct SubsetFit {
    std::size_t id = 0;
    /// Table row of each reordered position.
    std::vector<std::size_t> rows;
    Eigen::VectorXd y;
    Eigen::MatrixXd x;
    std::vector<std::uint8_t> w;
    std::size_t n_control = 0;
    std::size_t n_treated = 0;
    /// Fitted (and truncated) scores, in reordered positions.
    PropensityFit propensity;
    ArmWeights weights;

    [[nodiscard]] std::size_t size() const noexcept { return w.size(); }
};

} // namespace cblb
