// Simulate one dataset and estimate its ATE with the causal BLB.
#include <cstdio>

#include "cblb/cblb.hpp"

int main() {
    cblb::Stream stream(2024);
    const auto sample = cblb::generate_dgm(20000, stream);

    cblb::BlbConfig config;
    config.gamma = 0.8;
    config.subsets = 5;
    config.replicates = 100;
    config.estimator = cblb::Estimator::logistic;
    config.threads = 0;

    const auto est = cblb::run_blb(sample.table, config);
    std::printf("n=%zu b=%zu s=%zu r=%zu\n", est.n, est.subset_size, est.subsets.size(), est.replicates);
    std::printf("tau_hat = %.4f (truth %.1f), se = %.4f\n", est.tau_hat, sample.ate, est.se);
    std::printf("95%% percentile CI: [%.4f, %.4f]\n", est.percentile.lower, est.percentile.upper);
    std::printf("95%% asymptotic CI: [%.4f, %.4f]\n", est.asymptotic.lower, est.asymptotic.upper);
    for (const auto& sub : est.subsets)
        std::printf("  subset %zu: tau %.4f se %.4f hajek %.4f max|SMD| %.3f redraws %zu\n", sub.id, sub.tau_hat,
                    sub.se, sub.hajek, sub.balance.max_abs_smd, sub.redraws);
}
