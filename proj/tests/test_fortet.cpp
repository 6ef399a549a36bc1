#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fortet/fortet.hpp"
#include "oracles.hpp"

using namespace fortet;

namespace {

struct Toy {
    GridPtr g;
    KernelOperator k;
    MarginalPair m;
};

Toy toy_2x2() {
    auto g = make_grid({0.0, 1.0}, {1.0, 1.0});
    auto k = KernelOperator::from_table(g, g, {2, 1, 1, 2});
    std::vector<double> half{0.5, 0.5};
    return {g, k, {DensityField::from_values(g, half, true), DensityField::from_values(g, half, true)}};
}

Toy benchmark(double radius = 8.0, std::size_t n = 401) {
    auto g = make_grid(GridSpec{1, radius, n});
    return {g, KernelOperator::gaussian(g, g, 0.5), {gaussian_density(g, 0.0, 1.0), gaussian_density(g, 0.0, 0.8)}};
}

std::vector<double> random_logs(std::mt19937_64& rng, std::size_t n, double spread = 2.0) {
    std::uniform_real_distribution<double> u(-spread, spread);
    std::vector<double> v(n);
    for (double& x : v) x = u(rng);
    return v;
}

} // namespace

TEST(OmegaMap, HandComputed2x2) {
    auto t = toy_2x2();
    // G = (1.5, 1.5) at H = 1, so Omega(1) = 1
    auto one = omega_map_linear(std::vector<double>{1.0, 1.0}, t.k, t.m);
    EXPECT_NEAR(one[0], 1.0, 1e-15);
    EXPECT_NEAR(one[1], 1.0, 1e-15);
    // H = (1, 2): G = (1.25, 1), Omega = (0.8 + 0.5, 0.4 + 1)
    auto r = omega_map_linear(std::vector<double>{1.0, 2.0}, t.k, t.m);
    EXPECT_NEAR(r[0], 1.3, 1e-15);
    EXPECT_NEAR(r[1], 1.4, 1e-15);
    auto lr = omega_map(std::vector<double>{0.0, std::log(2.0)}, t.k, t.m);
    EXPECT_NEAR(std::exp(lr.log_G[0]), 1.25, 1e-15);
    EXPECT_NEAR(std::exp(lr.log_G[1]), 1.0, 1e-15);
}

TEST(OmegaMap, RejectsNonPositiveH) {
    auto t = toy_2x2();
    EXPECT_THROW(omega_map_linear(std::vector<double>{1.0, 0.0}, t.k, t.m), invalid_input);
    EXPECT_THROW(omega_map(std::vector<double>{0.0, neg_inf}, t.k, t.m), invalid_input);
}

TEST(OmegaMap, HomogeneousOfDegreeOne) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        auto inst = oracle::random_instance(seed, 6, 9);
        std::mt19937_64 rng(seed);
        auto lh = random_logs(rng, 6);
        const auto base = omega_map(lh, inst.kernel, inst.marginals).log_H_prime;
        for (double c : {1e-3, 0.5, 7.0}) {
            auto scaled = lh;
            for (double& v : scaled) v += std::log(c);
            const auto out = omega_map(scaled, inst.kernel, inst.marginals).log_H_prime;
            for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], base[i] + std::log(c), 1e-12);
        }
    }
}

TEST(OmegaMap, Monotone) {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> bump(0.0, 1.0);
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        auto inst = oracle::random_instance(seed, 7, 5);
        auto lo = random_logs(rng, 7);
        auto hi = lo;
        for (double& v : hi) v += bump(rng);
        const auto a = omega_map(lo, inst.kernel, inst.marginals).log_H_prime;
        const auto b = omega_map(hi, inst.kernel, inst.marginals).log_H_prime;
        for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LE(a[i], b[i]);
    }
}

TEST(OmegaMap, NormalizationIdentityHoldsForAnyH) {
    std::mt19937_64 rng(17);
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        auto inst = oracle::random_instance(seed, 8, 11);
        auto lh = random_logs(rng, 8, 5.0);
        const auto hp = omega_map(lh, inst.kernel, inst.marginals).log_H_prime;
        double s = 0.0;
        for (std::size_t i = 0; i < lh.size(); ++i)
            s += inst.g1->weight(i) * inst.marginals.omega1.values[i] * std::exp(hp[i] - lh[i]);
        EXPECT_NEAR(s, 1.0, 1e-13);
    }
}

TEST(OmegaMap, HilbertContractionAtSquaredBirkhoffRate) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto inst = oracle::random_instance(seed, 6, 6, 1.0);
        const auto pd = projective_diameter_log(6, 6, inst.kernel.log_matrix().values);
        const double p = birkhoff_contraction(pd).ratio;
        std::mt19937_64 rng(seed + 100);
        std::vector<std::pair<std::vector<double>, std::vector<double>>> samples;
        for (int s = 0; s < 50; ++s) samples.emplace_back(random_logs(rng, 6), random_logs(rng, 6));
        const OmegaMap om(inst.kernel, inst.marginals);
        const auto chk = homogeneous_map_contraction_check_log([&](const std::vector<double>& l) { return om(l); },
                                                               p * p, samples);
        EXPECT_TRUE(chk.passed) << "seed " << seed << " excess " << chk.worst_excess;
    }
}

TEST(Scheme, FirstStepStartsFromOne) {
    auto t = benchmark(4.0, 81);
    const auto s1 = fortet_step(nullptr, t.k, t.m);
    EXPECT_EQ(s1.n, 1u);
    for (double v : s1.log_H) EXPECT_EQ(v, 0.0);
    EXPECT_TRUE(std::isnan(s1.diagnostics.hilbert_step));
    EXPECT_TRUE(std::isnan(s1.diagnostics.sup_change));
    const auto s2 = fortet_step(&s1, t.k, t.m);
    EXPECT_EQ(s2.n, 2u);
    EXPECT_NEAR(s2.diagnostics.log_floor, std::log(1e-6), 1e-12);
    for (std::size_t i = 0; i < s2.log_H.size(); ++i)
        EXPECT_EQ(s2.log_H[i], std::max(std::min(0.0, s1.log_H_prime[i]), s2.diagnostics.log_floor));
    EXPECT_FALSE(std::isnan(s2.diagnostics.hilbert_step));
}

TEST(Scheme, FloorSchedules) {
    const auto geo = FloorSchedule::geometric(1e-6);
    EXPECT_EQ(geo.log_floor(1.0), 0.0);
    EXPECT_NEAR(geo.log_floor(3.0), 2.0 * std::log(1e-6), 1e-12);
    const auto har = FloorSchedule::harmonic();
    EXPECT_NEAR(har.log_floor(4.0), -std::log(4.0), 1e-15);
    EXPECT_THROW(FloorSchedule::geometric(1.0), invalid_input);
    EXPECT_THROW(FloorSchedule::geometric(0.0), invalid_input);
}

// H_n, H'_n non-increasing, J_n nested, floors respected, H'' <= 1,
// normalization identity at every step.
TEST(Scheme, InvariantsAlongTheIteration) {
    for (std::uint64_t seed = 1; seed <= 8; ++seed) {
        auto inst = oracle::random_instance(seed, 12, 10, 3.0);
        for (auto floor : {FloorSchedule::geometric(), FloorSchedule::harmonic()}) {
            FortetOptions opts;
            opts.floor = floor;
            const OmegaMap om(inst.kernel, inst.marginals);
            IterationState prev = fortet_step(nullptr, om, opts);
            for (int n = 2; n <= 40; ++n) {
                IterationState cur = fortet_step(&prev, om, opts);
                const auto& d = cur.diagnostics;
                EXPECT_LT(d.normalization_residual, 1e-12);
                for (std::size_t i = 0; i < cur.log_H.size(); ++i) {
                    EXPECT_GE(cur.log_H[i], d.log_floor);
                    EXPECT_LE(cur.log_H_dprime[i], 0.0);
                    EXPECT_LE(cur.log_H[i], prev.log_H[i]) << "seed " << seed << " n " << n;
                    EXPECT_LE(cur.log_H_prime[i], prev.log_H_prime[i]) << "seed " << seed << " n " << n;
                    if (cur.J_mask[i]) EXPECT_TRUE(prev.J_mask[i]) << "seed " << seed << " n " << n;
                }
                prev = std::move(cur);
            }
        }
    }
}

TEST(Solver, Toy2x2IsCaseOneAtFirstStep) {
    auto t = toy_2x2();
    const auto sol = run_fortet(t.k, t.m);
    EXPECT_EQ(sol.case_tag, CaseTag::case1);
    EXPECT_EQ(sol.n0, 1u);
    EXPECT_EQ(sol.case_label(), "case1{1}");
    EXPECT_NEAR(std::exp(sol.potentials.log_phi[0]), 0.5, 1e-15);
    EXPECT_NEAR(std::exp(sol.potentials.log_psi[1]), 1.0 / 3.0, 1e-15);
    EXPECT_LT(sol.residuals.s1_resid, 1e-15);
    EXPECT_LT(sol.residuals.s2_resid, 1e-15);
}

TEST(Solver, PushforwardHasConstantPsi) {
    // rows of w g sum to one and omega2 is the image of omega1, so (phi, psi) = (omega1, 1)
    auto g = make_grid(GridSpec{1, 6.0, 201});
    auto k = KernelOperator::gaussian(g, g, 0.5).row_normalized();
    auto o1 = gaussian_density(g, 0.0, 1.0);
    std::vector<double> o2(g->size(), 0.0);
    for (std::size_t j = 0; j < g->size(); ++j)
        for (std::size_t i = 0; i < g->size(); ++i) o2[j] += g->weight(i) * o1.values[i] * k.value(i, j);
    MarginalPair m{o1, DensityField::from_values(g, o2, false)};
    const auto sol = run_fortet(k, m);
    EXPECT_EQ(sol.case_tag, CaseTag::case1);
    EXPECT_EQ(sol.n0, 1u);
    const double c = std::exp(sol.potentials.log_psi[100]);
    for (std::size_t j = 0; j < g->size(); ++j) EXPECT_NEAR(std::exp(sol.potentials.log_psi[j]) / c, 1.0, 1e-10);
    for (std::size_t i = 0; i < g->size(); ++i)
        EXPECT_NEAR(std::exp(sol.potentials.log_phi[i]) * c, o1.values[i], 1e-10 * o1.values[100]);
}

TEST(Solver, GaussianBenchmarkSolvesTheSystem) {
    auto t = benchmark();
    const auto sol = run_fortet(t.k, t.m);
    EXPECT_NE(sol.case_tag, CaseTag::degenerate);
    EXPECT_LT(sol.residuals.s1_resid, 1e-8);
    EXPECT_LT(sol.residuals.s2_resid, 1e-8);
    EXPECT_LT(sol.residuals.marginal_resid, 1e-8);
    double mx = neg_inf;
    for (double v : sol.log_h) mx = std::max(mx, v);
    EXPECT_LE(mx, 0.0);
    EXPECT_EQ(sol.trace.size(), sol.iterations);
    for (const auto& d : sol.trace) EXPECT_LT(d.normalization_residual, 1e-12);
}

TEST(Solver, FloorScheduleDoesNotChangeTheRay) {
    // the harmonic floor only releases nodes where h < 1/n, so it needs h bounded away from 0
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto inst = oracle::random_instance(seed, 10, 10);
        FortetOptions harm;
        harm.floor = FloorSchedule::harmonic();
        const auto a = run_fortet(inst.kernel, inst.marginals);
        const auto b = run_fortet(inst.kernel, inst.marginals, harm);
        EXPECT_TRUE(verify_uniqueness(a.potentials, b.potentials, inst.marginals).consistent) << seed;
    }
}

TEST(Solver, AgreesWithSinkhornOnRandomInstances) {
    for (std::uint64_t seed = 1; seed <= 12; ++seed) {
        auto inst = oracle::random_instance(seed, 9, 13);
        const auto sol = run_fortet(inst.kernel, inst.marginals);
        SinkhornOptions so;
        so.tol = 1e-13;
        const auto sp = run_sinkhorn(inst.kernel, inst.marginals, so);
        const auto u = verify_uniqueness(sol.potentials, sp.potentials(), inst.marginals);
        EXPECT_TRUE(u.consistent) << "seed " << seed << " spread " << u.ratio_spread_phi << " " << u.ratio_spread_psi;
        EXPECT_LT(sol.residuals.s1_resid, 1e-9);
        EXPECT_LT(sol.residuals.s2_resid, 1e-9);
    }
}

TEST(Solver, ObserverSeesEveryStep) {
    auto t = benchmark(5.0, 101);
    std::size_t calls = 0, last = 0;
    const auto sol = run_fortet(t.k, t.m, {}, [&](const IterationState& s) {
        ++calls;
        EXPECT_EQ(s.n, last + 1);
        last = s.n;
    });
    EXPECT_EQ(calls, sol.iterations);
}

TEST(Solver, DegenerateCollapseIsDetected) {
    // omega1 carries far more mass than omega2, so H'_1 is tiny everywhere
    auto g = make_grid(GridSpec{1, 3.0, 31});
    auto k = KernelOperator::gaussian(g, g, 1.0);
    auto heavy = DensityField::from_values(g, std::vector<double>(31, 1e20), true, MassPolicy::keep);
    MarginalPair m{heavy, uniform_density(g)};
    FortetOptions opts;
    EXPECT_THROW(run_fortet(k, m, opts), hypothesis_failure);
    opts.check_hypotheses = false;
    const auto sol = run_fortet(k, m, opts);
    EXPECT_EQ(sol.case_tag, CaseTag::degenerate);
    EXPECT_EQ(sol.iterations, 1u);
    EXPECT_TRUE(sol.potentials.log_phi.empty());
}

TEST(Solver, NonConvergenceCarriesTrace) {
    auto g = make_grid(GridSpec{1, 8.0, 201});
    auto k = KernelOperator::gaussian(g, g, 0.1);
    MarginalPair m{gaussian_density(g, 0.0, 0.5), gaussian_density(g, 0.0, 1.0)};
    FortetOptions opts;
    opts.max_iter = 3;
    try {
        (void)run_fortet(k, m, opts);
        FAIL() << "expected non_convergence";
    } catch (const non_convergence& e) {
        EXPECT_EQ(e.trace().size(), 3u);
        EXPECT_EQ(e.last_log_h().size(), g->size());
    }
}

TEST(Solver, HypothesisViolationsStopBeforeIterating) {
    auto g = make_grid(GridSpec{1, 1.0, 3});
    auto k = KernelOperator::from_table(g, g, {1, 0, 1, 1, 0, 1, 1, 0, 1});
    MarginalPair m{uniform_density(g), uniform_density(g)};
    try {
        (void)run_fortet(k, m);
        FAIL() << "expected hypothesis_failure";
    } catch (const hypothesis_failure& e) {
        EXPECT_NE(std::string(e.what()).find("H.vii"), std::string::npos) << e.what();
    }
    FortetOptions opts;
    opts.tol = 0.0;
    EXPECT_THROW(run_fortet(toy_2x2().k, toy_2x2().m, opts), invalid_input);
}

TEST(Uniqueness, RescaledPairIsOnTheSameRay) {
    auto t = benchmark(6.0, 241);
    const auto sol = run_fortet(t.k, t.m);
    const auto r = verify_uniqueness(sol.potentials.rescaled(2.0), sol.potentials, t.m);
    EXPECT_TRUE(r.consistent);
    EXPECT_NEAR(r.constant, 2.0, 1e-12);
    EXPECT_NEAR(r.constant_product, 1.0, 1e-12);
    const auto rr = verify_system(sol.potentials.rescaled(2.0), t.k, t.m);
    EXPECT_LT(rr.s1_resid, 1e-8);
    EXPECT_LT(rr.s2_resid, 1e-8);
}

TEST(Uniqueness, PerturbedPsiBreaksTheSystem) {
    auto t = benchmark(6.0, 241);
    const auto sol = run_fortet(t.k, t.m);
    auto bad = sol.potentials;
    bad.log_psi[120] += std::log(1.01);
    const auto r = verify_system(bad, t.k, t.m);
    EXPECT_GT(r.s1_resid, 1e-4);
    EXPECT_FALSE(verify_uniqueness(bad, sol.potentials, t.m).consistent);
}

TEST(Uniqueness, DifferentProblemsRejected) {
    auto t = toy_2x2();
    auto b = benchmark(2.0, 11);
    PotentialPair p{t.g, t.g, {0, 0}, {0, 0}};
    PotentialPair q{b.g, b.g, std::vector<double>(11), std::vector<double>(11)};
    EXPECT_THROW(verify_uniqueness(p, q, t.m), invalid_input);
}
