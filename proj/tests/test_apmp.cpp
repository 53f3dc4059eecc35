#include "catch_amalgamated.hpp"
#include "helpers.hpp"

using namespace uccf;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {

struct TreeCase {
    UplinkScene scene;
    FactorGraph graph;
    CVec y;
};

TreeCase tree_case(std::uint64_t seed, int t, Constellation c, double snr = 2.0)
{
    Rng rng = stream_rng(seed, t);
    std::uniform_int_distribution<int> d(1, 6);
    const int M = d(rng), K = d(rng), N = 2;
    const auto a = testing::random_tree_association(M, K, rng, c == Constellation::Bpsk ? 8 : 4);
    const auto f = testing::random_freq(M, K, N, 1, rng, 3.0);
    const RMat delta = RMat::Ones(K, N), eta = RMat::Constant(K, N, 0.5);
    TreeCase tc{make_uplink_scene(f, snr, delta, eta), build_factor_graph(a), CVec()};
    tc.y = simulate_uplink(tc.scene, 1, c, rng).y[0];
    return tc;
}

}  // namespace

TEST_CASE("single-UE factor gives the textbook BPSK LLR")
{
    LocalFactor f{0, {3}, {cd(0.8, -0.3)}, cd(0.2, 0.9), 0.5};
    const auto m = intrinsic_llr(f, Constellation::Bpsk);
    REQUIRE(m.size() == 1);
    const double ref = 4.0 * (std::conj(f.gains[0]) * f.y).real() / f.variance;
    CHECK_THAT(bpsk_llr(m[0]), WithinAbs(ref, 1e-12));
    CHECK(m[0](0) == 0.0);
}

TEST_CASE("message normalization and clamping")
{
    Llr v(4);
    v << 3.0, -100.0, 5.0, 3.0;
    const Llr n = normalize_llr(v, 50.0);
    CHECK(n(0) == 0.0);
    CHECK(n(1) == -48.0);  // floored 50 below the best entry
    CHECK(n(2) == 2.0);
    // Saturated messages keep the winner when symbol 0 is very unlikely.
    Llr far(4);
    far << 0.0, 900.0, 700.0, 1000.0;
    Eigen::Index best;
    normalize_llr(far, 50.0).maxCoeff(&best);
    CHECK(best == 3);
    CHECK_THAT(log_sum_exp(std::log(2.0), std::log(3.0)), WithinAbs(std::log(5.0), 1e-15));
    CHECK(log_sum_exp(-std::numeric_limits<double>::infinity(), 1.5) == 1.5);
}

TEST_CASE("intrinsic messages exclude the target's own prior")
{
    LocalFactor f{0, {0, 1}, {cd(1.0, 0.2), cd(-0.4, 0.7)}, cd(0.3, -0.5), 0.8};
    Llr strong(2);
    strong << 0.0, -7.0;
    const auto base = intrinsic_llr(f, Constellation::Bpsk, {Llr::Zero(2), Llr::Zero(2)});
    const auto with = intrinsic_llr(f, Constellation::Bpsk, {strong, Llr::Zero(2)});
    // UE0's own prior does not enter its message but does reshape UE1's.
    CHECK_THAT(bpsk_llr(with[0]), WithinAbs(bpsk_llr(base[0]), 1e-12));
    CHECK(std::abs(bpsk_llr(with[1]) - bpsk_llr(base[1])) > 1e-6);
}

TEST_CASE("intrinsic enumeration limits and input checks")
{
    LocalFactor f;
    f.ap = 0;
    for (int j = 0; j < 5; ++j) {
        f.ues.push_back(j);
        f.gains.push_back(1.0);
    }
    f.variance = 1.0;
    CHECK_THROWS_WITH(intrinsic_llr(f, Constellation::Qpsk), ContainsSubstring("too large"));
    CHECK_NOTHROW(intrinsic_llr(f, Constellation::Bpsk));
    f.variance = 0.0;
    CHECK_THROWS_WITH(intrinsic_llr(f, Constellation::Bpsk), ContainsSubstring("positive noise"));
    f.variance = 1.0;
    f.gains.pop_back();
    CHECK_THROWS_WITH(intrinsic_llr(f, Constellation::Bpsk), ContainsSubstring("gain count"));
    ApmpConfig cfg;
    cfg.damping = 1.0;
    CHECK_THROWS_WITH(cfg.validate(), ContainsSubstring("damping"));
}

TEST_CASE("APMP marginals equal exhaustive MAP on tree components")
{
    for (auto c : {Constellation::Bpsk, Constellation::Qpsk}) {
        for (int t = 0; t < 25; ++t) {
            const auto tc = tree_case(51, t, c);
            ApmpConfig cfg;
            cfg.constellation = c;
            cfg.clamp = 500.0;
            cfg.tolerance = 0.0;
            cfg.max_iterations = 2 * (tc.scene.num_aps + tc.scene.num_ues()) + 2;
            const auto r = apmp_detect(tc.scene, tc.graph, tc.y, cfg);
            REQUIRE(tc.graph.components.size() == 1);
            for (int n = 0; n < tc.scene.subcarriers; ++n) {
                const auto map = map_oracle(tc.scene, tc.graph, 0, n, tc.y, c);
                for (std::size_t j = 0; j < map.ues.size(); ++j) {
                    const int k = map.ues[j];
                    const Llr& got = r.llr[k][tc.scene.symbol_index(k, n)];
                    CHECK((got - map.llr[j]).cwiseAbs().maxCoeff() < 1e-6);
                }
            }
        }
    }
}

TEST_CASE("one AP alone needs a single round")
{
    Rng rng = stream_rng(52, 0);
    const auto f = testing::random_freq(1, 3, 1, 1, rng);
    const auto s = make_uplink_scene(f, 3.0, RMat::Ones(3, 1), RMat::Constant(3, 1, 1.0));
    const auto g = build_factor_graph(AssociationMap::full(1, 3));
    const CVec y = simulate_uplink(s, 1, Constellation::Bpsk, rng).y[0];
    ApmpConfig cfg;
    cfg.max_iterations = 1;
    cfg.clamp = 500.0;
    const auto r = apmp_detect(s, g, y, cfg);
    const auto map = map_oracle(s, g, 0, 0, y, Constellation::Bpsk);
    for (int k = 0; k < 3; ++k) CHECK_THAT(bpsk_llr(r.llr[k][0]), WithinAbs(bpsk_llr(map.llr[k]), 1e-9));
}

TEST_CASE("extrinsic feedback removes the receiver's own contribution")
{
    const auto tc = tree_case(53, 3, Constellation::Bpsk);
    const auto factors = build_local_factors(tc.scene, tc.graph.assoc, tc.y, 0, tc.graph.components[0].aps);
    ApmpConfig cfg;
    cfg.clamp = 500.0;
    ApmpSubproblem sub(factors, cfg);
    sub.initialize();
    sub.exchange();
    sub.feedback();
    const auto& mu = sub.messages();
    for (const auto& [key, e] : sub.extrinsic()) {
        const auto [i, j, k] = key;
        Llr others = Llr::Zero(2);
        for (const auto& [ak, v] : mu)
            if (ak.second == k && ak.first != j) others += v;
        CHECK((e - normalize_llr(others, 500.0)).cwiseAbs().maxCoeff() < 1e-9);
        CHECK(i != j);
    }
}

TEST_CASE("APMP decodes a noiseless scene and records a trace")
{
    Rng rng = stream_rng(54, 0);
    const auto a = AssociationMap::from_ue_sets(3, {{0, 1}, {1, 2}, {2}});
    auto f = testing::random_freq(3, 3, 2, 1, rng, 1.0);
    for (int m = 0; m < 3; ++m)
        for (int k = 0; k < 3; ++k)
            if (!a.contains(m, k)) f[m][k].setZero();
    const auto s = make_uplink_scene(f, 1e4, RMat::Ones(3, 2), RMat::Constant(3, 2, 0.5));
    const auto blk = simulate_uplink(s, 1, Constellation::Qpsk, rng);
    ApmpConfig cfg;
    cfg.constellation = Constellation::Qpsk;
    const auto r = apmp_detect(s, build_factor_graph(a), blk.y[0], cfg, true);
    for (int k = 0; k < 3; ++k)
        for (int i = 0; i < 2; ++i) CHECK(r.decisions[k][i] == blk.symbols[0][k][i]);
    CHECK(r.trace.size() == 2);
    CHECK(r.trace[0].rounds.size() >= 2);
    CHECK(r.max_iterations_used <= cfg.max_iterations);
}

TEST_CASE("loopy graphs terminate within the iteration budget")
{
    Rng rng = stream_rng(55, 0);
    const auto a = AssociationMap::from_ue_sets(2, {{0, 1}, {0, 1}, {0, 1}});
    const auto g = build_factor_graph(a);
    REQUIRE_FALSE(is_tree(g, g.components[0]));
    const auto f = testing::random_freq(2, 3, 1, 1, rng);
    const auto s = make_uplink_scene(f, 2.0, RMat::Ones(3, 1), RMat::Constant(3, 1, 1.0));
    ApmpConfig cfg;
    cfg.max_iterations = 7;
    cfg.tolerance = 0.0;
    cfg.damping = 0.3;
    const auto r = apmp_detect(s, g, simulate_uplink(s, 1, Constellation::Bpsk, rng).y[0], cfg);
    CHECK(r.max_iterations_used == 7);
    for (const auto& v : r.llr)
        for (const auto& l : v) CHECK(l.allFinite());
}

TEST_CASE("disconnected UEs are reported, ICI scenes rejected")
{
    Rng rng = stream_rng(56, 0);
    const auto a = AssociationMap::from_ue_sets(2, {{0}, {}});
    const auto f = testing::random_freq(2, 2, 1, 1, rng);
    const auto s = make_uplink_scene(f, 2.0, RMat::Ones(2, 1), RMat::Constant(2, 1, 1.0));
    const auto r = apmp_detect(s, build_factor_graph(a), CVec::Zero(2), ApmpConfig{});
    CHECK(r.undetected == std::vector<int>{1});
    CHECK(r.decisions[1].empty());

    const auto ici = testing::random_ici_scene(2, 2, 2, 1.0, rng);
    CHECK_THROWS_WITH(apmp_detect(ici, build_factor_graph(AssociationMap::full(2, 2)), CVec::Zero(4), ApmpConfig{}),
                      ContainsSubstring("ICI-free"));
    CHECK_THROWS_WITH(apmp_detect(s, build_factor_graph(AssociationMap::full(3, 2)), CVec::Zero(2), ApmpConfig{}),
                      ContainsSubstring("does not match"));
}

TEST_CASE("MAP oracle probabilities are normalized and consistent with LLRs")
{
    const auto tc = tree_case(57, 1, Constellation::Qpsk);
    const auto map = map_oracle(tc.scene, tc.graph, 0, 1, tc.y, Constellation::Qpsk);
    for (std::size_t j = 0; j < map.ues.size(); ++j) {
        CHECK_THAT(map.probability[j].sum(), WithinAbs(1.0, 1e-12));
        for (int q = 1; q < 4; ++q)
            CHECK_THAT(std::log(map.probability[j](q) / map.probability[j](0)), WithinAbs(map.llr[j](q), 1e-9));
    }
}
