#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "cnf/bayesopt.hpp"

using namespace cnf;

namespace {

SearchSpace unit_1d() {
    SearchSpace s;
    s.dims = {Dimension::continuous("x", 0.0, 1.0, false)};
    return s;
}

} // namespace

// --- expected improvement -------------------------------------------------------

TEST(ExpectedImprovement, ZeroSigmaIsZero) {
    EXPECT_DOUBLE_EQ(expected_improvement(0.3, 0.0, 0.5), 0.0);
    EXPECT_DOUBLE_EQ(expected_improvement(0.3, 1e-30, 0.5), 0.0);
}

TEST(ExpectedImprovement, GammaZeroIsPdfAtZero) {
    // mean == f_best, sigma = 1: EI = phi(0) = 1/sqrt(2 pi)
    EXPECT_NEAR(expected_improvement(0.5, 1.0, 0.5), 0.3989422804014327, 1e-12);
}

TEST(ExpectedImprovement, NonNegativeAndMonotoneInMean) {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const double f_best = rng.uniform(-2.0, 2.0);
        const double var = rng.uniform(0.01, 4.0);
        double prev = std::numeric_limits<double>::infinity();
        for (double mean = f_best - 2.0; mean <= f_best + 2.0; mean += 0.25) {
            const double ei = expected_improvement(mean, var, f_best);
            EXPECT_GE(ei, 0.0);
            EXPECT_LE(ei, prev); // decreasing mean raises EI
            prev = ei;
        }
    }
}

TEST(ExpectedImprovement, NegativeVarianceClampedNotThrown) {
    EXPECT_DOUBLE_EQ(expected_improvement(0.0, -1e-9, 0.5), 0.0);
}

TEST(ExpectedImprovement, MonteCarloOracle) {
    // EI(mu, sigma, f_best) == E[max(f_best - N(mu, sigma^2), 0)]
    Rng rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        const double mean = rng.uniform(-1.0, 1.0);
        const double sigma = rng.uniform(0.2, 1.5);
        const double f_best = rng.uniform(-1.0, 1.0);
        const int n = 200000;
        double sum = 0.0, sumsq = 0.0;
        for (int i = 0; i < n; ++i) {
            const double draw = mean + sigma * rng.normal();
            const double imp = std::max(f_best - draw, 0.0);
            sum += imp;
            sumsq += imp * imp;
        }
        const double mc = sum / n;
        const double se = std::sqrt((sumsq / n - mc * mc) / n);
        const double ei = expected_improvement(mean, sigma * sigma, f_best);
        EXPECT_NEAR(ei, mc, 3.0 * se + 1e-12) << "trial " << trial;
    }
}

// --- encoding ----------------------------------------------------------------------

TEST(Encoding, ChoiceMidpointFixture) {
    SearchSpace space;
    space.dims = {Dimension::choice("units", {"32", "64", "128", "512"})};
    ParamMap cfg;
    cfg["units"] = ParamValue::text("64");
    const std::vector<double> x = encode_config(cfg, space);
    EXPECT_DOUBLE_EQ(x[0], 0.375); // cell 1 of 4
    const ParamMap back = decode_config({0.375}, space);
    EXPECT_EQ(back.at("units").str(), "64");
}

TEST(Encoding, LogMidpointFixture) {
    SearchSpace space;
    space.dims = {Dimension::continuous("lr", 1e-5, 1e-2, true)};
    const ParamMap cfg = decode_config({0.5}, space);
    EXPECT_NEAR(cfg.at("lr").as_double(), 3.1622776601683794e-4, 1e-12); // 10^-3.5
}

TEST(Encoding, FixedParamsPassThrough) {
    SearchSpace space;
    space.dims = {Dimension::continuous("x", 0.0, 1.0, false)};
    space.fixed = {{"kernel_size", "3"}, {"activation", "relu"}};
    ParamMap cfg;
    cfg["x"] = ParamValue::real(0.25);
    const std::vector<double> x = encode_config(cfg, space);
    EXPECT_EQ(x.size(), 1u); // fixed params absent from the point
    const ParamMap back = decode_config(x, space);
    EXPECT_EQ(back.at("kernel_size").str(), "3");
    EXPECT_EQ(back.at("activation").str(), "relu");
}

TEST(Encoding, DecodeEncodeIdentity) {
    SearchSpace space;
    space.dims = {Dimension::int_range("layers", 1, 6, 1),
                  Dimension::choice("units", {"32", "64", "128"}),
                  Dimension::continuous("dropout", 0.0, 0.2, false),
                  Dimension::continuous("lr", 1e-5, 1e-2, true)};
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> x(space.dims.size());
        for (double& v : x) v = rng.next_double();
        const ParamMap cfg = decode_config(x, space);
        const std::vector<double> re = encode_config(cfg, space);
        const ParamMap cfg2 = decode_config(re, space);
        EXPECT_EQ(cfg.at("layers").i, cfg2.at("layers").i);
        EXPECT_EQ(cfg.at("units").str(), cfg2.at("units").str());
        EXPECT_NEAR(cfg.at("dropout").d, cfg2.at("dropout").d,
                    1e-12 * std::max(1.0, std::abs(cfg.at("dropout").d)));
        EXPECT_NEAR(cfg.at("lr").d, cfg2.at("lr").d, 1e-12 * cfg.at("lr").d);
    }
}

TEST(Encoding, OutOfRangeNamesDimension) {
    SearchSpace space;
    space.dims = {Dimension::int_range("layers", 1, 6, 1)};
    ParamMap cfg;
    cfg["layers"] = ParamValue::integer(9);
    try {
        encode_config(cfg, space);
        FAIL() << "expected config_error";
    } catch (const config_error& e) {
        EXPECT_NE(std::string(e.what()).find("layers"), std::string::npos) << e.what();
    }
}

TEST(Encoding, IntRangeRespectsStep) {
    SearchSpace space;
    space.dims = {Dimension::int_range("kernels", 32, 512, 32)};
    ParamMap cfg;
    cfg["kernels"] = ParamValue::integer(64);
    EXPECT_NO_THROW(encode_config(cfg, space));
    cfg["kernels"] = ParamValue::integer(65);
    EXPECT_THROW(encode_config(cfg, space), config_error);
}

// --- proposals ---------------------------------------------------------------------

TEST(Propose, ReturnsArgmaxOfEvaluatedCandidates) {
    // single deep minimum far from the data: internal consistency of the
    // argmax contract is checked against a fresh candidate sweep
    const std::vector<std::vector<double>> X = {{0.05}, {0.1}, {0.15}};
    const std::vector<double> y = {1.0, 0.9, 0.8};
    const GpModel m = gp_fit(X, y, KernelKind::matern52);
    double f_best = 0.8;

    Rng rng(21);
    const std::vector<double> prop = propose_next(m, unit_1d(), rng);
    const Posterior pp = gp_posterior(m, prop);
    const double prop_ei = expected_improvement(pp.mean, pp.variance, f_best);
    Rng probe(99);
    for (int i = 0; i < 512; ++i) {
        const std::vector<double> x = {probe.next_double()};
        const Posterior p = gp_posterior(m, x);
        EXPECT_GE(prop_ei + 1e-12, expected_improvement(p.mean, p.variance, f_best));
    }
}

TEST(Propose, DeterministicGivenSeed) {
    const std::vector<std::vector<double>> X = {{0.2}, {0.5}, {0.8}};
    const std::vector<double> y = {0.5, 0.1, 0.7};
    const GpModel m1 = gp_fit(X, y, KernelKind::matern52);
    const GpModel m2 = gp_fit(X, y, KernelKind::matern52);
    Rng a(33), b(33);
    EXPECT_EQ(propose_next(m1, unit_1d(), a), propose_next(m2, unit_1d(), b));
}

TEST(Propose, AvoidsDuplicatingObservedPoints) {
    // dense observations: the proposal must not coincide with any of them
    std::vector<std::vector<double>> X;
    std::vector<double> y;
    for (int i = 0; i <= 10; ++i) {
        const double x = i / 10.0;
        X.push_back({x});
        y.push_back((x - 0.3) * (x - 0.3));
    }
    const GpModel m = gp_fit(X, y, KernelKind::matern52);
    Rng rng(5);
    const std::vector<double> prop = propose_next(m, unit_1d(), rng);
    for (const auto& obs : X) EXPECT_GT(std::abs(prop[0] - obs[0]), 1e-9);
}

// --- tune --------------------------------------------------------------------------

namespace {

double quadratic_objective(const ParamMap& cfg) {
    const double x = cfg.at("x").as_double();
    return (x - 0.3) * (x - 0.3);
}

} // namespace

TEST(Tune, BudgetEqualsInitIsRandomSearch) {
    TuneOptions opts;
    opts.budget = 6;
    opts.init = 6;
    Rng rng(1);
    const TuneResult res = tune(quadratic_objective, unit_1d(), opts, rng);
    EXPECT_EQ(res.trials.size(), 6u);
    double best = 1e300;
    for (const TrialRecord& t : res.trials) best = std::min(best, t.objective);
    EXPECT_DOUBLE_EQ(res.best.objective, best);
}

TEST(Tune, DeterministicTrialLog) {
    TuneOptions opts;
    opts.budget = 10;
    opts.init = 4;
    Rng a(9), b(9);
    const TuneResult ra = tune(quadratic_objective, unit_1d(), opts, a);
    const TuneResult rb = tune(quadratic_objective, unit_1d(), opts, b);
    ASSERT_EQ(ra.trials.size(), rb.trials.size());
    for (std::size_t i = 0; i < ra.trials.size(); ++i) {
        EXPECT_EQ(ra.trials[i].point, rb.trials[i].point);
        EXPECT_EQ(ra.trials[i].objective, rb.trials[i].objective);
    }
}

TEST(Tune, FindsQuadraticMinimum) {
    TuneOptions opts;
    opts.budget = 20;
    opts.init = 5;
    std::vector<double> errors;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed);
        const TuneResult res = tune(quadratic_objective, unit_1d(), opts, rng);
        errors.push_back(std::abs(res.best.config.at("x").as_double() - 0.3));
    }
    std::sort(errors.begin(), errors.end());
    const double median = (errors[4] + errors[5]) / 2.0;
    EXPECT_LT(median, 0.05);
}

TEST(Tune, FailedTrialsGetPenaltyNotNan) {
    int calls = 0;
    auto flaky = [&](const ParamMap& cfg) {
        ++calls;
        if (calls % 3 == 0) throw std::runtime_error("evaluation blew up");
        return quadratic_objective(cfg);
    };
    TuneOptions opts;
    opts.budget = 9;
    opts.init = 4;
    Rng rng(2);
    const TuneResult res = tune(flaky, unit_1d(), opts, rng);
    double worst_ok = -1e300;
    for (const TrialRecord& t : res.trials)
        if (t.ok) worst_ok = std::max(worst_ok, t.objective);
    for (const TrialRecord& t : res.trials) {
        EXPECT_TRUE(std::isfinite(t.objective));
        if (!t.ok) EXPECT_GT(t.objective, worst_ok - 1e-12);
    }
    EXPECT_TRUE(res.best.ok);
}

TEST(Tune, AllInitFailuresAbort) {
    auto broken = [](const ParamMap&) -> double { throw std::runtime_error("nope"); };
    TuneOptions opts;
    opts.budget = 5;
    opts.init = 3;
    Rng rng(3);
    EXPECT_THROW(tune(broken, unit_1d(), opts, rng), numerical_error);
}

TEST(Tune, BestSoFarMonotone) {
    TuneOptions opts;
    opts.budget = 15;
    opts.init = 5;
    Rng rng(4);
    const TuneResult res = tune(quadratic_objective, unit_1d(), opts, rng);
    double best = 1e300;
    std::vector<double> best_curve;
    for (const TrialRecord& t : res.trials) {
        best = std::min(best, t.objective);
        best_curve.push_back(best);
    }
    for (std::size_t i = 1; i < best_curve.size(); ++i)
        EXPECT_LE(best_curve[i], best_curve[i - 1]);
}

TEST(Tune, TranslationConsistentProposals) {
    // shifting all objective values by a constant may not change proposals
    // (standardization inside gp_fit makes EI translation invariant)
    const std::vector<std::vector<double>> X = {{0.1}, {0.4}, {0.6}, {0.9}};
    std::vector<double> y = {0.8, 0.2, 0.3, 0.9};
    const GpModel m1 = gp_fit(X, y, KernelKind::matern52);
    for (double& v : y) v += 100.0;
    const GpModel m2 = gp_fit(X, y, KernelKind::matern52);
    Rng a(7), b(7);
    const std::vector<double> p1 = propose_next(m1, unit_1d(), a);
    const std::vector<double> p2 = propose_next(m2, unit_1d(), b);
    EXPECT_NEAR(p1[0], p2[0], 1e-9);
}

TEST(Tune, ExploitationShrinksEi) {
    // densely observing around the optimum leaves less expected improvement
    // than the first fit had
    std::vector<std::vector<double>> X = {{0.0}, {0.5}, {1.0}};
    std::vector<double> y;
    for (const auto& x : X) y.push_back((x[0] - 0.3) * (x[0] - 0.3));
    const GpModel early = gp_fit(X, y, KernelKind::matern52);
    Rng r1(13);
    const std::vector<double> p_early = propose_next(early, unit_1d(), r1);
    const Posterior post_early = gp_posterior(early, p_early);
    double fb = *std::min_element(y.begin(), y.end());
    const double ei_early = expected_improvement(post_early.mean, post_early.variance, fb);

    for (double x : {0.25, 0.28, 0.3, 0.32, 0.35, 0.2, 0.4}) {
        X.push_back({x});
        y.push_back((x - 0.3) * (x - 0.3));
    }
    const GpModel late = gp_fit(X, y, KernelKind::matern52);
    Rng r2(13);
    const std::vector<double> p_late = propose_next(late, unit_1d(), r2);
    const Posterior post_late = gp_posterior(late, p_late);
    fb = *std::min_element(y.begin(), y.end());
    const double ei_late = expected_improvement(post_late.mean, post_late.variance, fb);
    EXPECT_LT(ei_late, ei_early);
}
