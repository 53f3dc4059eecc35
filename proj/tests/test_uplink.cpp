#include "catch_amalgamated.hpp"
#include "helpers.hpp"

using namespace uccf;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("scene construction maps assignment and power")
{
    Rng rng = stream_rng(31, 0);
    const auto f = testing::random_freq(2, 2, 3, 2, rng);
    RMat delta(2, 3), eta(2, 3);
    delta << 1, 0, 1, 0, 1, 0;
    eta << 0.25, 0, 0.5, 0, 0.75, 0;
    const auto s = make_uplink_scene(f, 2.0, delta, eta);
    CHECK(s.assigned[0] == std::vector<int>{0, 2});
    CHECK(s.power[0](1) == 0.5);
    CHECK(s.power_on(1, 1) == 0.75);
    CHECK(s.power_on(1, 0) == 0.0);
    CHECK(s.symbol_index(0, 2) == 1);
    CHECK(s.gain(1, 2, 0) == f[1][0](2));
    CHECK(s.ici_free());
    CHECK(s.noise() == 0.5);
    CHECK(s.phi(0).sum() == cd(2.0));

    eta(0, 0) = 0.8;
    CHECK_THROWS_WITH(make_uplink_scene(f, 2.0, delta, eta), ContainsSubstring("budget"));
    eta(0, 0) = -0.1;
    CHECK_THROWS_WITH(make_uplink_scene(f, 2.0, delta, eta), ContainsSubstring("negative"));
    CHECK_THROWS_WITH(make_uplink_scene(f, 2.0, RMat::Ones(2, 2), eta), ContainsSubstring("dimension"));
}

TEST_CASE("GMMSE weights solve the normal equations")
{
    for (int t = 0; t < 50; ++t) {
        Rng rng = stream_rng(32, t);
        const auto s = t % 2 ? testing::random_scene(3, 3, 4, 5.0, rng) : testing::random_ici_scene(3, 2, 3, 5.0, rng);
        const auto w = gmmse_weights(s);
        const CMat ry = uplink_covariance(s);
        for (int k = 0; k < s.num_ues(); ++k) CHECK(relative_residual(ry, w[k], s.effective(k)) < 1e-10);
    }
}

TEST_CASE("analytic SINR agrees across the three evaluation routes")
{
    for (int t = 0; t < 30; ++t) {
        Rng rng = stream_rng(33, t);
        const auto s = testing::random_ici_scene(2, 3, 3, 3.0, rng);
        const auto fast = uplink_sinrs(s);
        const auto out = output_sinrs(s, gmmse_weights(s));
        for (int k = 0; k < s.num_ues(); ++k)
            for (int i = 0; i < s.symbols(k); ++i) {
                CHECK_THAT(fast[k](i), WithinRel(uplink_sinr(s, k, i), 1e-9));
                CHECK_THAT(out[k](i), WithinRel(fast[k](i), 1e-9));
            }
    }
}

TEST_CASE("per-subcarrier GMMSE equals the joint solve on ICI-free scenes")
{
    for (int t = 0; t < 30; ++t) {
        Rng rng = stream_rng(34, t);
        const auto s = testing::random_scene(3, 4, 5, 2.0, rng, false);
        const auto joint = gmmse_weights(s);
        const auto per = gmmse_per_subcarrier(s);
        REQUIRE(per.per_subcarrier.size() == 5);
        for (int k = 0; k < s.num_ues(); ++k) CHECK(testing::rel_err(joint[k], per.per_ue[k]) < 1e-10);
    }
    Rng rng = stream_rng(34, 99);
    CHECK_THROWS_WITH(gmmse_per_subcarrier(testing::random_ici_scene(2, 2, 2, 1.0, rng)), ContainsSubstring("ICI-free"));
    CHECK(gmmse_flops(4, 8, true) == Catch::Approx(32768.0 / 3.0));
    CHECK(gmmse_flops(4, 8, false) == Catch::Approx(8 * 64.0 / 3.0));
}

TEST_CASE("local MMSE variants collapse to GMMSE under full association")
{
    for (int t = 0; t < 30; ++t) {
        Rng rng = stream_rng(35, t);
        const auto s = testing::random_ici_scene(3, 3, 2, 4.0, rng);
        const auto full = AssociationMap::full(3, 3);
        const auto g = gmmse_weights(s);
        const auto sliced = lmmse_column_sliced(s, full);
        for (int k = 0; k < 3; ++k) {
            CHECK(testing::rel_err(sliced[k], g[k]) < 1e-10);
            CHECK(testing::rel_err(lmmse_reduced(s, full, k), g[k]) < 1e-10);
        }
    }
}

TEST_CASE("restricted detectors keep weights on the serving APs only")
{
    Rng rng = stream_rng(36, 0);
    const auto s = testing::random_scene(4, 3, 2, 4.0, rng);
    const auto a = AssociationMap::from_ue_sets(4, {{0, 1}, {1, 2}, {3}});
    const auto sliced = lmmse_column_sliced(s, a);
    const CMat red = lmmse_reduced(s, a, 1);
    for (int m : {0, 3}) {
        CHECK(red.middleRows(m * 2, 2).norm() == 0.0);
    }
    CHECK(red.middleRows(2, 2).norm() > 0.0);
    // Column slicing mixes all observations even though only M_k's columns are summed.
    CHECK(sliced[2].norm() > 0.0);
    CHECK_THROWS_WITH(lmmse_reduced(s, AssociationMap::from_ue_sets(4, {{}, {}, {}}), 0), ContainsSubstring("unassociated"));
}

TEST_CASE("GMMSE maximizes the output SINR over every linear detector")
{
    for (int t = 0; t < 50; ++t) {
        Rng rng = stream_rng(37, t);
        const auto s = testing::random_scene(4, 3, 3, 3.0, rng);
        const auto a = testing::random_association(4, 3, 2, rng);
        RMat gain = RMat::Ones(4, 3);
        const auto best = uplink_sinrs(s);
        const auto sliced = output_sinrs(s, lmmse_column_sliced(s, a));
        std::vector<CMat> red, mrc, eq;
        for (int k = 0; k < 3; ++k) {
            red.push_back(lmmse_reduced(s, a, k));
            mrc.push_back(combined_weights(s, a, gain, k, Combining::Mrc));
            eq.push_back(combined_weights(s, a, gain, k, Combining::Equal));
        }
        for (const auto& other : {sliced, output_sinrs(s, red), output_sinrs(s, mrc), output_sinrs(s, eq)})
            for (int k = 0; k < 3; ++k)
                for (int i = 0; i < s.symbols(k); ++i) CHECK(other[k](i) <= best[k](i) * (1.0 + 1e-9));
    }
}

TEST_CASE("local estimates and CPU combining match the equivalent weight")
{
    Rng rng = stream_rng(38, 0);
    const auto s = testing::random_scene(3, 2, 4, 2.0, rng);
    const auto a = AssociationMap::from_ue_sets(3, {{0, 2}, {1, 2}});
    RMat gain(3, 2);
    gain << 0.5, 1.0, 2.0, 0.3, 1.5, 0.7;
    const CVec y = complex_normal_vec(rng, s.dim());
    for (auto mode : {Combining::Equal, Combining::Mrc, Combining::LargeScaleLinear, Combining::LargeScaleSqrt}) {
        for (int k = 0; k < 2; ++k) {
            std::vector<CVec> z;
            for (int m : a.aps_of_ue[k]) z.push_back(local_ap_estimate(s, a, m, k, y.segment(m * 4, 4)));
            const CVec combined = cpu_combine(z, mode, combining_side_info(s, a, gain, k));
            const CVec ref = combined_weights(s, a, gain, k, mode).adjoint() * y;
            CHECK(testing::rel_err(combined, ref) < 1e-12);
        }
    }
    // Large-scale weights are proportional to g (or sqrt g) and sum to one.
    CombiningSideInfo info;
    info.large_scale = {1.0, 3.0};
    const auto lin = combining_matrices(2, 1, Combining::LargeScaleLinear, info);
    CHECK_THAT(lin[1](0, 0).real(), WithinAbs(0.75, 1e-15));
    const auto sq = combining_matrices(2, 1, Combining::LargeScaleSqrt, info);
    CHECK_THAT(sq[0](0, 0).real(), WithinAbs(1.0 / (1.0 + std::sqrt(3.0)), 1e-15));
    CHECK_THROWS_WITH(combining_matrices(2, 1, Combining::Mrc, info), ContainsSubstring("side information"));
    CHECK_THROWS_WITH(combining_matrices(0, 1, Combining::Equal, info), ContainsSubstring("nonempty"));
    CHECK_THROWS_WITH(local_ap_weights(s, a, 1, 0), ContainsSubstring("does not serve"));
}

TEST_CASE("local decomposition separates signal from interference")
{
    Rng rng = stream_rng(39, 0);
    const auto s = testing::random_scene(2, 3, 2, 2.0, rng);
    const auto a = AssociationMap::full(2, 3);
    const auto d = local_decomposition(s, a, 1, 2);
    const CMat w = local_ap_weights(s, a, 1, 2);
    CHECK(testing::rel_err(d.gain, CMat(w.adjoint() * s.effective(2).middleRows(2, 2))) < 1e-14);
    // Covariance stays Hermitian PSD.
    CHECK(testing::rel_err(d.covariance, CMat(d.covariance.adjoint())) < 1e-12);
    Eigen::SelfAdjointEigenSolver<CMat> es(d.covariance);
    CHECK(es.eigenvalues().minCoeff() > -1e-12);
}

TEST_CASE("measured detector SINR approaches the closed form")
{
    Rng rng = stream_rng(40, 0);
    const auto s = testing::random_scene(3, 2, 2, 4.0, rng);
    const auto blk = simulate_uplink(s, 40000, Constellation::Qpsk, rng);
    const auto w = gmmse_weights(s);
    const auto emp = measure_detection(s, w, blk, Constellation::Qpsk);
    const auto ana = output_sinrs(s, w);
    for (int k = 0; k < 2; ++k)
        for (int i = 0; i < s.symbols(k); ++i) CHECK_THAT(emp.sinr[k](i), WithinRel(ana[k](i), 0.05));
    CHECK(emp.symbols == 40000L * 4);
    CHECK(emp.bit_errors >= emp.symbol_errors);
}

TEST_CASE("sample covariance converges to the analytic covariance")
{
    Rng rng = stream_rng(41, 0);
    const auto s = testing::random_scene(2, 2, 2, 1.0, rng);
    const CMat r = sample_uplink_covariance(s, 50000, rng);
    CHECK(testing::rel_err(r, uplink_covariance(s)) < 0.03);
    CHECK_THROWS_AS(sample_uplink_covariance(s, 0, rng), Error);
}

TEST_CASE("sum rate adds log2(1 + SINR) over every symbol")
{
    std::vector<RVec> g{RVec::Constant(2, 1.0), RVec::Constant(1, 3.0)};
    CHECK(sum_rate(g) == 4.0);
}
