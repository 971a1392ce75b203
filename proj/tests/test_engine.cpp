#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "support.hpp"

using testing_support::make_table;
using testing_support::random_subset_fit;
using testing_support::whole;

namespace {

std::int64_t sum(const std::vector<std::int64_t>& v, std::size_t from, std::size_t to) {
    return std::accumulate(v.begin() + static_cast<std::ptrdiff_t>(from), v.begin() + static_cast<std::ptrdiff_t>(to),
                           std::int64_t{0});
}

cblb::PropensityFit scores(std::initializer_list<double> v) {
    cblb::PropensityFit fit;
    fit.method = cblb::Estimator::external;
    fit.scores = Eigen::Map<const Eigen::VectorXd>(v.begin(), static_cast<Eigen::Index>(v.size()));
    return fit;
}

} // namespace

TEST(OrderSubset, ControlsFirstStable) {
    const auto t = make_table({10, 20, 30, 40}, {1, 0, 1, 0}, {{1, 2, 3, 4}});
    const auto fit = cblb::order_subset(t, whole(4), scores({0.1, 0.2, 0.3, 0.4}));
    EXPECT_EQ(fit.w, (std::vector<std::uint8_t>{0, 0, 1, 1}));
    EXPECT_EQ(fit.rows, (std::vector<std::size_t>{1, 3, 0, 2}));
    EXPECT_EQ(fit.y, Eigen::Vector4d(20, 40, 10, 30));
    EXPECT_EQ(fit.x.col(0), Eigen::Vector4d(2, 4, 1, 3));
    EXPECT_EQ(fit.propensity.scores, Eigen::Vector4d(0.2, 0.4, 0.1, 0.3));
    EXPECT_EQ(fit.n_control, 2u);
    EXPECT_EQ(fit.n_treated, 2u);
    // control weights 1/(1-pi) = (1.25, 1.6667)
    EXPECT_NEAR(fit.weights.control(0), 1.25 / (1.25 + 1 / 0.6), 1e-15);
}

TEST(OrderSubset, SingleArmIsDegenerate) {
    const auto t = make_table({1, 2, 3}, {0, 0, 0});
    EXPECT_THROW((void)cblb::order_subset(t, whole(3), scores({0.5, 0.5, 0.5})), cblb::DegenerateSubset);
}

TEST(OrderSubset, UsesSubsetRows) {
    const auto t = make_table({1, 2, 3, 4, 5}, {0, 1, 0, 1, 1});
    cblb::Subset s{{1, 2, 4}};
    const auto fit = cblb::order_subset(t, s, scores({0.5, 0.5, 0.5}));
    EXPECT_EQ(fit.rows, (std::vector<std::size_t>{2, 1, 4}));
    EXPECT_EQ(fit.y, Eigen::Vector3d(3, 2, 5));
}

TEST(Multinomial, DegenerateAndEmpty) {
    cblb::Stream s(1);
    EXPECT_EQ(cblb::draw_multinomial(std::vector<double>{1.0}, 7, s), (std::vector<std::int64_t>{7}));
    EXPECT_EQ(cblb::draw_multinomial(std::vector<double>{0.2, 0.8}, 0, s), (std::vector<std::int64_t>{0, 0}));
}

TEST(Multinomial, FairCoinWithinFiveSigma) {
    cblb::Stream s(2);
    const auto c = cblb::draw_multinomial(std::vector<double>{0.5, 0.5}, 10000, s);
    EXPECT_NEAR(static_cast<double>(c[0]), 5000.0, 5 * 50.0);
    EXPECT_EQ(c[0] + c[1], 10000);
}

TEST(Multinomial, RejectsInvalidProbabilities) {
    cblb::Stream s(3);
    EXPECT_THROW((void)cblb::draw_multinomial(std::vector<double>{-0.1, 1.1}, 5, s), std::invalid_argument);
    EXPECT_THROW((void)cblb::draw_multinomial(std::vector<double>{0.5, 0.6}, 5, s), std::invalid_argument);
    EXPECT_THROW((void)cblb::draw_multinomial(std::vector<double>{}, 5, s), std::invalid_argument);
    EXPECT_THROW((void)cblb::draw_multinomial(std::vector<double>{1.0}, -1, s), std::invalid_argument);
}

TEST(Multinomial, ZeroProbabilityCellsStayEmpty) {
    cblb::Stream s(4);
    for (int i = 0; i < 200; ++i) {
        const auto c = cblb::draw_multinomial(std::vector<double>{0.0, 0.3, 0.0, 0.7, 0.0}, 1000, s);
        EXPECT_EQ(c[0] + c[2] + c[4], 0);
    }
}

TEST(Multinomial, CellMeansMatch) {
    const std::vector<double> p{0.1, 0.2, 0.3, 0.4};
    cblb::Stream s(5);
    const int draws = 20000;
    const std::int64_t size = 50;
    std::vector<double> mean(p.size());
    for (int i = 0; i < draws; ++i) {
        const auto c = cblb::draw_multinomial(p, size, s);
        for (std::size_t k = 0; k < p.size(); ++k) mean[k] += static_cast<double>(c[k]) / draws;
    }
    for (std::size_t k = 0; k < p.size(); ++k)
        EXPECT_NEAR(mean[k], size * p[k], 5 * std::sqrt(size * p[k] * (1 - p[k]) / draws));
}

TEST(Multinomial, PropertySumsToSize) {
    cblb::Stream rng(6);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> p(1 + rng.below(50));
        for (auto& v : p) v = rng.uniform() < 0.2 ? 0.0 : rng.uniform();
        p[rng.below(p.size())] += 0.1;
        const double total = std::accumulate(p.begin(), p.end(), 0.0);
        for (auto& v : p) v /= total;
        const auto size = static_cast<std::int64_t>(rng.below(100000));
        const auto c = cblb::draw_multinomial(p, size, rng);
        ASSERT_EQ(std::accumulate(c.begin(), c.end(), std::int64_t{0}), size);
        for (std::size_t k = 0; k < p.size(); ++k) {
            ASSERT_GE(c[k], 0);
            if (p[k] == 0.0) ASSERT_EQ(c[k], 0);
        }
    }
}

TEST(Replicate, TwoUnitsAreDeterministic) {
    const auto t = make_table({1, 3}, {0, 1});
    const auto fit = cblb::order_subset(t, whole(2), scores({0.4, 0.7}));
    cblb::Stream s(7);
    const auto d = cblb::draw_replicate(fit, 123, 456, s);
    EXPECT_EQ(d.counts, (std::vector<std::int64_t>{123, 456}));
    EXPECT_DOUBLE_EQ(cblb::replicate_estimate(d, fit, 123, 456), 2.0);
}

TEST(Replicate, PropertyArmSums) {
    cblb::Stream rng(8);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto fit = random_subset_fit(rng, 1 + rng.below(30), 1 + rng.below(30));
        const auto n0 = static_cast<std::int64_t>(fit.n_control + rng.below(5000));
        const auto n1 = static_cast<std::int64_t>(fit.n_treated + rng.below(5000));
        const auto d = cblb::draw_replicate(fit, n0, n1, rng);
        ASSERT_EQ(d.counts.size(), fit.size());
        ASSERT_EQ(sum(d.counts, 0, fit.n_control), n0);
        ASSERT_EQ(sum(d.counts, fit.n_control, fit.size()), n1);
        ASSERT_EQ(sum(d.counts, 0, fit.size()), n0 + n1);
    }
}

TEST(Replicate, PropertyConstantOutcomeIsExactlyZero) {
    cblb::Stream rng(9);
    for (int trial = 0; trial < 1000; ++trial) {
        auto fit = random_subset_fit(rng, 1 + rng.below(30), 1 + rng.below(30));
        fit.y.setConstant(rng.normal() * 1000);
        const auto n0 = static_cast<std::int64_t>(1 + rng.below(5000)), n1 = static_cast<std::int64_t>(1 + rng.below(5000));
        const auto d = cblb::draw_replicate(fit, n0, n1, rng);
        ASSERT_EQ(cblb::replicate_estimate(d, fit, n0, n1), 0.0);
    }
}

TEST(Replicate, PropertyShiftScaleAndRange) {
    cblb::Stream rng(10);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto fit = random_subset_fit(rng, 1 + rng.below(30), 1 + rng.below(30));
        const auto n0 = static_cast<std::int64_t>(1 + rng.below(5000)), n1 = static_cast<std::int64_t>(1 + rng.below(5000));
        const auto d = cblb::draw_replicate(fit, n0, n1, rng);
        const double base = cblb::replicate_estimate(d, fit, n0, n1);

        auto shifted = fit;
        shifted.y.array() += rng.normal() * 10;
        ASSERT_NEAR(cblb::replicate_estimate(d, shifted, n0, n1), base, 1e-12);

        const double lambda = rng.normal() * 5;
        auto scaled = fit;
        scaled.y *= lambda;
        ASSERT_NEAR(cblb::replicate_estimate(d, scaled, n0, n1), lambda * base, 1e-12 * (1 + std::abs(lambda * base)));

        const auto b0 = static_cast<Eigen::Index>(fit.n_control), b1 = static_cast<Eigen::Index>(fit.n_treated);
        const double lo = fit.y.tail(b1).minCoeff() - fit.y.head(b0).maxCoeff();
        const double hi = fit.y.tail(b1).maxCoeff() - fit.y.head(b0).minCoeff();
        ASSERT_GE(base, lo - 1e-12);
        ASSERT_LE(base, hi + 1e-12);
    }
}

TEST(Replicate, MeanConvergesToHajek) {
    cblb::Stream data(11);
    const auto sample = cblb::generate_dgm(20000, data);
    cblb::Stream s = data.substream(1);
    const auto subset = cblb::draw_subset(sample.table, 500, s);
    const auto fit = cblb::fit_propensity(sample.table, subset, cblb::BlbConfig{});
    const auto sf = cblb::order_subset(sample.table, subset, cblb::truncate_scores(fit, 0.01, 0.99));
    const auto est = cblb::run_subset(sf, 10000, static_cast<std::int64_t>(sample.table.n_control()),
                                      static_cast<std::int64_t>(sample.table.n_treated()), 0.05, s.substream(2));
    EXPECT_NEAR(est.tau_hat, est.hajek, 4 * est.se / std::sqrt(10000.0));
}

TEST(RunSubset, ReproducibleAndSummarized) {
    cblb::Stream rng(12);
    const auto fit = random_subset_fit(rng, 10, 12);
    const cblb::Stream s(99);
    const auto a = cblb::run_subset(fit, 2, 100, 120, 0.05, s);
    const auto b = cblb::run_subset(fit, 2, 100, 120, 0.05, s);
    EXPECT_EQ(a.draws, b.draws);
    ASSERT_EQ(a.draws.size(), 2u);
    EXPECT_DOUBLE_EQ(a.tau_hat, 0.5 * (a.draws[0] + a.draws[1]));
    EXPECT_NEAR(a.se, std::abs(a.draws[0] - a.draws[1]) / std::sqrt(2.0), 1e-12);
    EXPECT_LE(a.percentile.lower, a.percentile.upper);
    EXPECT_THROW((void)cblb::run_subset(fit, 1, 100, 120, 0.05, s), cblb::ConfigError);
}

TEST(RunSubset, ConstantOutcome) {
    cblb::Stream rng(13);
    auto fit = random_subset_fit(rng, 8, 9);
    fit.y.setConstant(4.2);
    const auto est = cblb::run_subset(fit, 50, 80, 90, 0.05, cblb::Stream(1));
    EXPECT_EQ(est.tau_hat, 0.0);
    EXPECT_EQ(est.se, 0.0);
    EXPECT_EQ(est.percentile.lower, 0.0);
    EXPECT_EQ(est.percentile.upper, 0.0);
}

TEST(RunSubset, SimulatedSubsetsCoverTruth) {
    // The subset is a whole simulated dataset of size 1000, so se_k targets the
    // spread of the subset's own estimate.
    int hits = 0;
    const int trials = 100;
    for (int k = 0; k < trials; ++k) {
        cblb::Stream s = cblb::Stream(14).substream(k);
        const auto sample = cblb::generate_dgm(1000, s);
        const auto& t = sample.table;
        const auto fit = cblb::truncate_scores(cblb::fit_logistic_irls(t.x(), t.w()), 0.01, 0.99);
        const auto sf = cblb::order_subset(t, whole(t.n()), fit);
        const auto est = cblb::run_subset(sf, 500, static_cast<std::int64_t>(t.n_control()),
                                          static_cast<std::int64_t>(t.n_treated()), 0.05, s.substream(1));
        hits += std::abs(est.tau_hat - 2.0) < 4 * est.se;
    }
    EXPECT_GE(hits, 99);
}

TEST(RunBlb, MarginalFullDataMatchesDifferenceInMeans) {
    cblb::Stream s(15);
    const auto sample = cblb::generate_dgm(3000, s);
    const auto& t = sample.table;
    double m1 = 0, m0 = 0;
    for (std::size_t i = 0; i < t.n(); ++i) (t.w()[i] ? m1 : m0) += t.y()(static_cast<Eigen::Index>(i));
    const double dim = m1 / t.n_treated() - m0 / t.n_control();

    cblb::BlbConfig cfg;
    cfg.gamma = 1.0;
    cfg.subsets = 1;
    cfg.replicates = 2000;
    cfg.estimator = cblb::Estimator::marginal;
    const auto est = cblb::run_blb(t, cfg);
    EXPECT_EQ(est.subset_size, t.n());
    EXPECT_NEAR(est.hajek, dim, 1e-10);
    EXPECT_NEAR(est.tau_hat, dim, 4 * est.se / std::sqrt(2000.0));
}

TEST(RunBlb, LogisticCoversTruth) {
    cblb::Stream s(16);
    const auto sample = cblb::generate_dgm(20000, s);
    cblb::BlbConfig cfg;
    cfg.gamma = 0.8;
    cfg.subsets = 5;
    cfg.replicates = 100;
    const auto est = cblb::run_blb(sample.table, cfg);
    EXPECT_EQ(est.subset_size, 2759u);
    EXPECT_EQ(est.subsets.size(), 5u);
    EXPECT_NEAR(est.tau_hat, 2.0, 3 * est.se);
    EXPECT_LE(est.ci.lower, est.ci.upper);
    EXPECT_EQ(est.ci.kind, cblb::CiKind::percentile);
}

TEST(RunBlb, AggregatesSubsetMeans) {
    cblb::Stream s(17);
    const auto sample = cblb::generate_dgm(4000, s);
    cblb::BlbConfig cfg;
    cfg.subsets = 4;
    cfg.replicates = 30;
    cfg.ci_kind = cblb::CiKind::asymptotic;
    const auto est = cblb::run_blb(sample.table, cfg);
    double tau = 0, se = 0, lo = 0, hi = 0;
    for (const auto& sub : est.subsets) {
        tau += sub.tau_hat / 4;
        se += sub.se / 4;
        lo += sub.asymptotic.lower / 4;
        hi += sub.asymptotic.upper / 4;
        EXPECT_EQ(sub.draws.size(), 30u);
    }
    EXPECT_NEAR(est.tau_hat, tau, 1e-14);
    EXPECT_NEAR(est.se, se, 1e-14);
    EXPECT_NEAR(est.ci.lower, lo, 1e-14);
    EXPECT_NEAR(est.ci.upper, hi, 1e-14);
    EXPECT_EQ(est.ci.kind, cblb::CiKind::asymptotic);
}

TEST(RunBlb, ThreadCountDoesNotChangeResults) {
    cblb::Stream s(18);
    const auto sample = cblb::generate_dgm(20000, s);
    for (auto method : {cblb::Estimator::logistic, cblb::Estimator::cbps}) {
        cblb::BlbConfig cfg;
        cfg.gamma = 0.8;
        cfg.subsets = 5;
        cfg.replicates = 100;
        cfg.estimator = method;
        cfg.threads = 1;
        const auto a = cblb::run_blb(sample.table, cfg);
        cfg.threads = 8;
        const auto b = cblb::run_blb(sample.table, cfg);
        EXPECT_EQ(a.tau_hat, b.tau_hat);
        EXPECT_EQ(a.se, b.se);
        EXPECT_EQ(a.ci.lower, b.ci.lower);
        EXPECT_EQ(a.ci.upper, b.ci.upper);
        for (std::size_t k = 0; k < a.subsets.size(); ++k) EXPECT_EQ(a.subsets[k].draws, b.subsets[k].draws);
    }
}

TEST(RunBlb, SeedChangesResults) {
    cblb::Stream s(19);
    const auto sample = cblb::generate_dgm(2000, s);
    cblb::BlbConfig cfg;
    cfg.subsets = 2;
    cfg.replicates = 20;
    const auto a = cblb::run_blb(sample.table, cfg);
    cfg.seed = 2;
    const auto b = cblb::run_blb(sample.table, cfg);
    EXPECT_NE(a.tau_hat, b.tau_hat);
}

TEST(RunBlb, RareTreatmentTriggersRedraws) {
    // 4 treated out of 400, b = 20: most subsets hold a single arm.
    std::vector<double> y(400), x(400);
    std::vector<std::uint8_t> w(400);
    cblb::Stream rng(20);
    for (std::size_t i = 0; i < 400; ++i) {
        y[i] = rng.normal();
        x[i] = rng.normal();
    }
    w[10] = w[100] = w[200] = w[300] = 1;
    const auto t = make_table(y, w, {x});
    cblb::BlbConfig cfg;
    cfg.subset_size = 20;
    cfg.subsets = 3;
    cfg.replicates = 10;
    cfg.estimator = cblb::Estimator::marginal;
    cfg.weight_cap = 0.0;
    cfg.max_redraws = 200;
    const auto est = cblb::run_blb(t, cfg);
    EXPECT_GT(est.diagnostics.redraws, 0u);
    cfg.max_redraws = 0;
    cfg.seed = 5;
    EXPECT_THROW((void)cblb::run_blb(t, cfg), cblb::EstimationError);
}

TEST(RunBlb, WeightCapExhaustsRedrawBudget) {
    cblb::Stream s(21);
    const auto sample = cblb::generate_dgm(2000, s);
    cblb::BlbConfig cfg;
    cfg.subsets = 2;
    cfg.replicates = 10;
    cfg.weight_cap = 1e-6;
    cfg.max_redraws = 3;
    try {
        (void)cblb::run_blb(sample.table, cfg);
        FAIL();
    } catch (const cblb::EstimationError& e) {
        EXPECT_NE(std::string(e.what()).find("redraw budget exhausted"), std::string::npos);
    }
}

TEST(RunBlb, ImbalanceRedrawIsOptional) {
    cblb::Stream s(22);
    const auto sample = cblb::generate_dgm(2000, s);
    cblb::BlbConfig cfg;
    cfg.subsets = 3;
    cfg.replicates = 10;
    cfg.estimator = cblb::Estimator::marginal;
    cfg.balance_threshold = 1e-9;
    const auto report_only = cblb::run_blb(sample.table, cfg);
    EXPECT_EQ(report_only.diagnostics.balance_failures, 3u);
    cfg.redraw_on_imbalance = true;
    cfg.max_redraws = 2;
    EXPECT_THROW((void)cblb::run_blb(sample.table, cfg), cblb::EstimationError);
}

TEST(RunBlb, ExternalScoresAreSlicedPerSubset) {
    cblb::Stream s(23);
    const auto sample = cblb::generate_dgm(3000, s);
    cblb::BlbConfig cfg;
    cfg.subsets = 3;
    cfg.replicates = 20;
    cfg.estimator = cblb::Estimator::external;
    cfg.external_scores.assign(sample.propensity.begin(), sample.propensity.end());
    const auto est = cblb::run_blb(sample.table, cfg);
    for (const auto& sub : est.subsets) EXPECT_EQ(sub.propensity.method, cblb::Estimator::external);
    cfg.external_scores.pop_back();
    EXPECT_THROW((void)cblb::run_blb(sample.table, cfg), cblb::DataError);
}

TEST(RunBlb, RejectsInvalidConfig) {
    cblb::Stream s(24);
    const auto sample = cblb::generate_dgm(100, s);
    cblb::BlbConfig cfg;
    cfg.replicates = 1;
    EXPECT_THROW((void)cblb::run_blb(sample.table, cfg), cblb::ConfigError);
    cfg = {};
    cfg.gamma = 0;
    EXPECT_THROW((void)cblb::run_blb(sample.table, cfg), cblb::ConfigError);
    cfg = {};
    cfg.subset_size = 1000;
    EXPECT_THROW((void)cblb::run_blb(sample.table, cfg), cblb::ConfigError);
    cfg = {};
    cfg.truncation = {0.6, 0.4};
    EXPECT_THROW((void)cblb::run_blb(sample.table, cfg), cblb::ConfigError);
}

TEST(RunBlb, SingleArmTableIsDataError) {
    const auto t = make_table({1, 2, 3, 4}, {1, 1, 1, 1}, {{1, 2, 3, 4}});
    EXPECT_THROW((void)cblb::run_blb(t, cblb::BlbConfig{}), cblb::DataError);
}
