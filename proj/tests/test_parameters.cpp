#include <gtest/gtest.h>

#include <set>

#include "cilab/parameters.hpp"

using namespace cilab;

TEST(Schedule, BasicExponents) {
    ParameterSchedule s(0.05, 4, 3);
    EXPECT_NEAR(s.eps1, 1.3888888888888e-4, 1e-15);
    EXPECT_DOUBLE_EQ(s.alpha, 1.05);
    EXPECT_NEAR(s.beta(), 0.3, 1e-15);
    EXPECT_EQ(s.lambda(0), 4.0);
    // floor(4^1.05) = 4, floor(4^(1.05^4)) = 5
    EXPECT_EQ(std::lround(s.lambda(1)), 4);
    EXPECT_EQ(std::lround(s.lambda(4)), std::lround(std::floor(std::pow(4.0, std::pow(1.05, 4)))));
}

TEST(Schedule, MuIdentity) {
    ParameterSchedule s(0.1, 723, 8);
    for (int j = 1; j <= 8; ++j) {
        // μ_j² = δ_{j−1}^{1/2}δ_j^{1/2}λ_{j−1}λ_j
        double lhs = 2 * s.ln_mu(j);
        double rhs = 0.5 * (s.ln_delta(j - 1) + s.ln_delta(j)) + s.ln_lambda(j - 1) + s.ln_lambda(j);
        EXPECT_NEAR(lhs, rhs, 1e-12 * std::abs(rhs));
    }
}

TEST(Schedule, MonotoneSequences) {
    ParameterSchedule s(0.1, 723, 12);
    for (int q = 0; q < 20; ++q) {
        EXPECT_GT(s.ln_lambda(q + 1), s.ln_lambda(q));
        EXPECT_LT(s.ln_delta(q + 1), s.ln_delta(q));
    }
    // beyond the exact range λ_q is carried in log space
    EXPECT_FALSE(s.lambda_exact(60));
    EXPECT_NEAR(s.ln_lambda(60), std::pow(1.1, 60) * std::log(723.0), 1e-9 * s.ln_lambda(60));
}

TEST(Schedule, RejectsBadArguments) {
    EXPECT_THROW(ParameterSchedule(0.5, 4, 1), std::invalid_argument);
    EXPECT_THROW(ParameterSchedule(0.0, 4, 1), std::invalid_argument);
    EXPECT_THROW(ParameterSchedule(0.05, 1, 1), std::invalid_argument);
    EXPECT_THROW(ParameterSchedule(0.05, 4, -1), std::invalid_argument);
}

TEST(Cover, ThresholdDimension) {
    ParameterSchedule s(0.05, 4, 1);
    double a = 2.05 * 0.85;
    EXPECT_NEAR(s.d_min(), a / (a + 2 * 1.05 * s.eps1), 1e-12);
    EXPECT_NEAR(s.d_min(), 0.99983264, 1e-6);
    EXPECT_NEAR(ParameterSchedule(0.1, 723, 1).d_min(), 0.99935374, 1e-6);
}

TEST(Cover, DivergesAtOrBelowThreshold) {
    ParameterSchedule s(0.05, 1 << 20, 1);
    EXPECT_TRUE(hausdorff_cover(s, 1, s.d_min()).diverges);
    EXPECT_TRUE(hausdorff_cover(s, 1, 0.5).diverges);
    EXPECT_FALSE(hausdorff_cover(s, 1, 0.99999).diverges);
    EXPECT_THROW(hausdorff_cover(s, 1, 1.0), std::invalid_argument);
}

TEST(Cover, TailDecreasesButSlowly) {
    ParameterSchedule s(0.1, 723, 8);
    double d = 0.5 * (s.d_min() + 1);
    double prev = INFINITY;
    for (int q = 1; q <= 8; ++q) {
        auto c = hausdorff_cover(s, q, d);
        ASSERT_FALSE(c.diverges);
        EXPECT_LT(c.ln_value, prev);
        prev = c.ln_value;
    }
    // the tail ratio S(8)/S(1) stays near one at any seed reachable on a desk
    double r = std::exp(hausdorff_cover(s, 8, d).ln_value - hausdorff_cover(s, 1, d).ln_value);
    EXPECT_GT(r, 0.5);
    EXPECT_LT(r, 1.0);
}

TEST(Inequalities, SeedSearch) {
    auto seed = seed_search(0.1, 8);
    ASSERT_TRUE(seed.has_value());
    EXPECT_EQ(*seed, 723);
    EXPECT_EQ(seed_search(0.1, 8), seed);
    auto L = check_global_inequalities(ParameterSchedule(0.1, *seed, 8), 8);
    EXPECT_TRUE(L.gate_pass());
    EXPECT_FALSE(check_global_inequalities(ParameterSchedule(0.1, *seed - 1, 8), 8).gate_pass());
    EXPECT_EQ(gate_holds(ParameterSchedule(0.1, *seed, 8), 8), true);
}

TEST(Inequalities, NoSeedAtSmallEps) { EXPECT_FALSE(seed_search(0.05, 8).has_value()); }

TEST(Inequalities, SeedTooSmallNamesRow) {
    try {
        make_schedule(0.1, 4, 8);
        FAIL() << "expected SeedTooSmall";
    } catch (const SeedTooSmall& e) {
        auto L = check_global_inequalities(ParameterSchedule(0.1, 4, 8), 8);
        ASSERT_NE(L.first_gate_failure(), nullptr);
        EXPECT_NE(std::string(e.what()).find(L.first_gate_failure()->name), std::string::npos);
    }
    EXPECT_NO_THROW(make_schedule(0.1, 4, 8, 1.0, false));
}

TEST(Inequalities, LedgerRowsHaveNames) {
    auto L = check_global_inequalities(ParameterSchedule(0.1, 723, 3), 3);
    std::set<std::string> names;
    for (auto& r : L.rows) names.insert(r.name);
    for (auto n : {"lambda_lower", "lambda_upper", "sum_lambda_2_3", "sum_delta_lambda", "delta_decreasing", "delta_lambda_ell",
                   "delta_lambda_mu", "lambda_delta_mu", "mu_lower", "sum_lambda_neg", "lambda0_quarter"})
        EXPECT_TRUE(names.count(n)) << n;
    for (auto& r : L.rows) EXPECT_NEAR(r.slack(), r.ln_rhs - r.ln_lhs, 0.0);
}

TEST(BadSets, LengthAndMembership) {
    ParameterSchedule s(0.1, 723, 3);
    EXPECT_EQ(bad_set(s, 0).contains(0.3), Membership::Out);
    for (int q = 1; q <= 2; ++q) {
        auto B = bad_set(s, q);
        ASSERT_TRUE(B.enumerated);
        double count = std::floor(B.mu) - std::ceil(-B.mu) + 1;
        EXPECT_NEAR(B.total_length(), count * 2 * B.radius / B.mu, 1e-9);
        EXPECT_NEAR(B.total_length(), 4 * std::pow(s.lambda(q), -s.eps1), 2.5 / B.mu);
        EXPECT_EQ(B.contains(0.5 / B.mu), Membership::In);
    }
    // at desk scale the radius is close to one, so consecutive intervals overlap
    EXPECT_GT(bad_set(s, 1).radius, 0.5);
    EXPECT_EQ(in_V(s, 1, 0.0, 2), Membership::In);
    EXPECT_EQ(bad_set(s, 1).contains(0.999), Membership::In);
}

TEST(BadSets, SeparatedIntervalsWhenRadiusIsSmall) {
    // with ε₁ λ large enough r = λ^{−ε₁} < ½ and the points (l + ½)/μ ± r/μ are disjoint
    ParameterSchedule s(0.1, 723, 3);
    BadSet B;
    B.q = 1;
    B.mu = 10;
    B.radius = 0.2;
    EXPECT_EQ(B.contains(0.05), Membership::In);
    EXPECT_EQ(B.contains(0.0), Membership::Out);
    EXPECT_EQ(B.contains(0.1), Membership::Out);
    B.mu = 1e13;
    EXPECT_EQ(B.contains(0.1), Membership::UnknownTail);
}

TEST(Localized, ForcedNGivesUniversalNPrime) {
    ParameterSchedule a(0.1, 723, 8), b(0.1, 5000, 8);
    auto h = [&](const ParameterSchedule& s, int N) { return localized_from_N(s, N, localized_horizon(s, N, 8)); };
    int np = h(a, 0).N_prime();
    EXPECT_GT(np, 0);
    EXPECT_NEAR(np, 2.4 * 1.1 / 0.01, 0.1 * np);
    EXPECT_NEAR(h(a, 3).N_prime(), np, 2);
    EXPECT_NEAR(h(b, 0).N_prime(), np, 2);
    auto L = h(a, 0);
    for (int q = 0; q < int(L.ln_delta.size()); ++q) EXPECT_LE(L.ln_delta[q], a.ln_delta(q) + 1e-12);
    EXPECT_TRUE(L.ratio_ok());
}

TEST(Localized, MembershipAndRows) {
    ParameterSchedule s(0.1, 723, 8);
    // every t₀ in (−1, 1) is in V^(1) at this scale, so δ_{q,t₀} = δ_q
    auto L = localized_delta(s, 0.3, 8);
    EXPECT_EQ(L.N, -1);
    EXPECT_EQ(L.N_prime(), -1);
    EXPECT_THROW(localized_delta(s, 1.0, 8), std::invalid_argument);
    auto led = check_localized_inequalities(s, L, 8);
    std::set<std::string> names;
    for (auto& r : led.rows) names.insert(r.name);
    EXPECT_TRUE(names.count("loc_sum_delta_lambda"));
    EXPECT_TRUE(names.count("loc_delta_lambda_ell"));
    EXPECT_TRUE(names.count("loc_delta_lambda_mu"));
    ASSERT_EQ(led.not_checked.size(), 1u);
    EXPECT_TRUE(led.gate_pass());
}
