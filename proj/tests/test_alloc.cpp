#include "catch_amalgamated.hpp"
#include "helpers.hpp"

using namespace uccf;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

AllocationProblem random_problem(Rng& rng, int M, int K, int N, int max_aps)
{
    AllocationProblem pr;
    RMat gain;
    pr.freq = testing::random_freq(M, K, N, std::min(2, N), rng, 8.0, &gain);
    StopRule rule;
    rule.max_count = max_aps;
    pr.assoc = associate_large_scale(gain, rule);
    pr.snr = db_to_linear(std::uniform_real_distribution<double>(0.0, 20.0)(rng));
    pr.dl_noise = 1.0 / pr.snr;
    return pr;
}

}  // namespace

TEST_CASE("aggregate gain sums associated links only")
{
    std::vector<std::vector<CVec>> f(2, std::vector<CVec>(1));
    f[0][0] = CVec::Constant(2, cd(1.0, 1.0));
    f[1][0] = CVec::Constant(2, cd(3.0, 0.0));
    const auto a = AssociationMap::from_ue_sets(2, {{1}});
    const RMat g = aggregate_gain(f, a);
    CHECK(g(0, 0) == 9.0);
    CHECK(aggregate_gain(f, AssociationMap::full(2, 1))(0, 1) == 11.0);
}

TEST_CASE("default demand splits each group's subcarriers")
{
    CHECK(default_demand(4, 5, {0, 0, 1, -1}) == std::vector<int>{3, 2, 5, 0});
    CHECK(default_demand(3, 2, {0, 0, 0}) == std::vector<int>{1, 1, 0});
}

TEST_CASE("greedy assignment respects demand and reuse groups")
{
    RMat g(3, 4);
    g << 5, 1, 1, 1,   // UE0
        1, 9, 8, 1,    // UE1 (strongest)
        4, 3, 3, 0.5;  // UE2 (weakest max)
    const auto d = allocate_subcarriers_greedy(g, {1, 2, 1}, {0, 0, 0}, GreedyOrder::WeakestFirst);
    // Weakest first: UE2 takes 0, UE0 then its best free (1,2,3 tie -> 1), UE1 takes 2 and 3.
    CHECK(d(2, 0) == 1.0);
    CHECK(d(0, 1) == 1.0);
    CHECK(d(1, 2) == 1.0);
    CHECK(d(1, 3) == 1.0);
    CHECK((d.colwise().sum().array() <= 1.0).all());

    const auto s = allocate_subcarriers_greedy(g, {1, 2, 1}, {0, 0, 0}, GreedyOrder::StrongestFirst);
    CHECK(s(1, 1) == 1.0);
    CHECK(s(1, 2) == 1.0);
    CHECK(s(0, 0) == 1.0);
    CHECK(s(2, 3) == 1.0);

    // Different groups may reuse a subcarrier.
    const auto r = allocate_subcarriers_greedy(g, {4, 4, 0}, {0, 1, -1});
    CHECK(r.row(0).sum() == 4.0);
    CHECK(r.row(1).sum() == 4.0);
    CHECK(r.row(2).sum() == 0.0);

    CHECK_THROWS_WITH(allocate_subcarriers_greedy(g, {3, 2, 1}, {0, 0, 1}),
                      ContainsSubstring("group 0: requested 5 of 4 (short 1)"));
    CHECK_THROWS_WITH(allocate_subcarriers_greedy(g, {1, 1}, {0, 0, 0}), ContainsSubstring("one entry per UE"));
}

TEST_CASE("water-filling matches a fine grid search")
{
    for (int t = 0; t < 50; ++t) {
        Rng rng = stream_rng(81, t);
        RVec g(3);
        for (int i = 0; i < 3; ++i) g(i) = db_to_linear(std::uniform_real_distribution<double>(-10.0, 15.0)(rng));
        const double budget = 1.0;
        const RVec eta = allocate_power_waterfill(g, budget);
        CHECK_THAT(eta.sum(), WithinAbs(budget, 1e-14));
        CHECK((eta.array() >= 0.0).all());
        double best = 0.0;
        const int steps = 400;
        for (int a = 0; a <= steps; ++a)
            for (int b = 0; a + b <= steps; ++b) {
                RVec e(3);
                e << a / double(steps), b / double(steps), (steps - a - b) / double(steps);
                best = std::max(best, waterfill_rate(g, e));
            }
        const double got = waterfill_rate(g, eta);
        CHECK(got >= best - 1e-12);
        CHECK(got - best < 1e-3);
    }
}

TEST_CASE("water-filling KKT structure")
{
    RVec g(4);
    g << 10.0, 1.0, 0.05, 0.0;
    const RVec eta = allocate_power_waterfill(g, 1.0);
    CHECK(eta(3) == 0.0);
    CHECK(eta(2) == 0.0);
    // Active channels share one water level.
    CHECK_THAT(eta(0) + 1.0 / g(0), WithinRel(eta(1) + 1.0 / g(1), 1e-12));
    CHECK(eta(0) > eta(1));
    const RVec flat = allocate_power_waterfill(RVec::Zero(2), 2.0);
    CHECK(flat(0) == 1.0);
    CHECK_THROWS_AS(allocate_power_waterfill(g, 0.0), Error);
    CHECK_THROWS_AS(allocate_power_waterfill(RVec(), 1.0), Error);
}

TEST_CASE("max-min bisection equalizes SINRs")
{
    // Interference-free: gamma_k = p_k g_k, caps 1 -> target min_k g_k.
    RVec g(3);
    g << 2.0, 0.5, 4.0;
    const SinrEvaluator free = [&](const RVec& p) { return RVec(p.cwiseProduct(g)); };
    const auto r = maxmin_power_control(free, RVec::Ones(3), 1e-8);
    CHECK_THAT(r.target, WithinRel(0.5, 1e-6));
    CHECK_THAT(r.power(1), WithinAbs(1.0, 1e-9));
    CHECK(r.sinr.maxCoeff() - r.sinr.minCoeff() < 1e-5);

    // Coupled interference channel.
    const SinrEvaluator coupled = [&](const RVec& p) {
        RVec out(3);
        for (int k = 0; k < 3; ++k) out(k) = p(k) * g(k) / (0.1 + 0.2 * (p.sum() - p(k)));
        return out;
    };
    const auto c = maxmin_power_control(coupled, RVec::Ones(3), 1e-8);
    CHECK(c.sinr.maxCoeff() / c.sinr.minCoeff() < 1.0 + 1e-4);
    CHECK(c.power.maxCoeff() <= 1.0 + 1e-12);
    CHECK_THAT(c.power.maxCoeff(), WithinAbs(1.0, 1e-3));  // some UE is power-limited

    // A total cap is honoured.
    const auto tc = maxmin_power_control(free, RVec::Ones(3), 1e-8, 0.7);
    CHECK(tc.power.sum() <= 0.7 * (1.0 + 1e-9));
    CHECK_THAT(tc.target, WithinRel(0.7 / (1 / 2.0 + 1 / 0.5 + 1 / 4.0), 1e-5));

    const SinrEvaluator dead = [&](const RVec& p) {
        RVec out = p;
        out(0) = 0.0;
        return out;
    };
    CHECK(maxmin_power_control(dead, RVec::Ones(2)).degenerate);
    CHECK_THROWS_AS(maxmin_power_control(free, RVec::Zero(3)), Error);
}

TEST_CASE("feasibility entries compare rates with the requirement")
{
    const auto f = check_feasibility({RVec::Constant(2, 1.0), RVec()}, RVec::Constant(2, 1.5));
    CHECK(f[0].rate == 2.0);
    CHECK(f[0].meets);
    CHECK_FALSE(f[1].meets);
    CHECK_THROWS_AS(check_feasibility({RVec()}, RVec::Zero(2)), Error);
}

TEST_CASE("pipeline plans pass the constraint audit in every mode")
{
    for (int t = 0; t < 40; ++t) {
        Rng rng = stream_rng(82, t);
        auto pr = random_problem(rng, 4, 3, 4, 1 + t % 3);
        for (auto dir : {Direction::Uplink, Direction::Downlink})
            for (auto obj : {Objective::SumRate, Objective::MaxMin}) {
                AllocationOptions o;
                o.direction = dir;
                o.objective = obj;
                o.sharing = t % 2 == 0;
                const auto plan = successive_optimize(pr, o);
                const auto audit = audit_plan(plan);
                INFO("trial " << t);
                CHECK(audit.ok);
                CHECK(plan.sum_rate >= 0.0);
                CHECK(plan.feasibility.size() == 3);
            }
    }
}

TEST_CASE("the audit flags broken plans")
{
    Rng rng = stream_rng(83, 0);
    const auto pr = random_problem(rng, 3, 2, 3, 2);
    AllocationOptions o;
    auto ul = successive_optimize(pr, o);
    REQUIRE(audit_plan(ul).ok);
    auto bad = ul;
    bad.delta(0, 0) = 0.5;
    CHECK_FALSE(audit_plan(bad).ok);
    bad = ul;
    bad.eta_budget(0) = 2.0;
    CHECK_FALSE(audit_plan(bad).ok);

    o.direction = Direction::Downlink;
    auto dl = successive_optimize(pr, o);
    REQUIRE(audit_plan(dl).ok);
    bad = dl;
    bad.a0 *= 1.01;
    const auto a = audit_plan(bad);
    CHECK_FALSE(a.ok);
    CHECK(std::find(a.violations.begin(), a.violations.end(), "A0 violates a transmit power cap") != a.violations.end());
    bad = dl;
    bad.a0 *= 0.9;
    CHECK_FALSE(audit_plan(bad).ok);
    bad = dl;
    bad.dl *= 2.0;
    CHECK_FALSE(audit_plan(bad).ok);
}

TEST_CASE("max-min plans lift the weakest UE above the sum-rate plan's")
{
    int better = 0, total = 0;
    for (int t = 0; t < 30; ++t) {
        Rng rng = stream_rng(84, t);
        const auto pr = random_problem(rng, 4, 3, 3, 2);
        AllocationOptions o;
        const auto sr = successive_optimize(pr, o);
        o.objective = Objective::MaxMin;
        const auto mm = successive_optimize(pr, o);
        ++total;
        better += mm.min_sinr >= sr.min_sinr * (1.0 - 1e-3);
    }
    CHECK(better >= total * 9 / 10);
}

TEST_CASE("rate requirements are reported, not thrown")
{
    Rng rng = stream_rng(85, 0);
    auto pr = random_problem(rng, 2, 2, 2, 1);
    pr.min_rate = RVec::Constant(2, 1e6);
    const auto plan = successive_optimize(pr, AllocationOptions{});
    for (const auto& f : plan.feasibility) CHECK_FALSE(f.meets);
    pr.demand = {3, 3};
    AllocationOptions o;
    o.sharing = false;
    CHECK_THROWS_WITH(successive_optimize(pr, o), ContainsSubstring("infeasible subcarrier demand"));
    o.refine_iterations = 11;
    CHECK_THROWS_WITH(successive_optimize(pr, o), ContainsSubstring("refine_iterations"));
}

TEST_CASE("downlink plans keep A0 binding on the tightest AP")
{
    for (int t = 0; t < 20; ++t) {
        Rng rng = stream_rng(86, t);
        auto pr = random_problem(rng, 4, 2, 3, 2);
        pr.ap_cap = RVec::LinSpaced(4, 0.5, 2.0);
        AllocationOptions o;
        o.direction = Direction::Downlink;
        const auto plan = successive_optimize(pr, o);
        const auto au = audit_a0(plan.unamplified, plan.ap_cap, plan.element_cap, plan.a0);
        CHECK(au.ok);
        CHECK(au.binding);
        CHECK(plan.dl.sum() <= 1.0 + 1e-12);
    }
}
