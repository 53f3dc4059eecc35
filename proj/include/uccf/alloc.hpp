#pragma once

// Successive resource allocation: greedy subcarrier assignment, water-filling,
// max-min bisection, feasibility checks, plan audit, and the UL / DL pipeline.

#include "uccf/core.hpp"
#include "uccf/downlink.hpp"
#include "uccf/topology.hpp"
#include "uccf/uplink.hpp"

#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>

namespace uccf {

enum class GreedyOrder { WeakestFirst, StrongestFirst };
enum class Objective { SumRate, MaxMin };
enum class Direction { Uplink, Downlink };

/// Sum over associated APs of |h_mk(n)|^2, K x N.
inline RMat aggregate_gain(const std::vector<std::vector<CVec>>& freq, const AssociationMap& assoc)
{
    const int M = static_cast<int>(freq.size());
    const int K = M > 0 ? static_cast<int>(freq[0].size()) : 0;
    const int N = K > 0 ? static_cast<int>(freq[0][0].size()) : 0;
    RMat g = RMat::Zero(K, N);
    for (int k = 0; k < K; ++k)
        for (int m : assoc.aps_of_ue.at(k)) g.row(k) += freq[m][k].cwiseAbs2().transpose();
    return g;
}

/// Default demand: the N subcarriers of each reuse group split evenly among its
/// UEs, remainder to the lowest indices. Groups are graph components when
/// `group` is given (sharing mode), otherwise all connected UEs.
inline std::vector<int> default_demand(int num_ues, int subcarriers, const std::vector<int>& group)
{
    std::map<int, std::vector<int>> members;
    for (int k = 0; k < num_ues; ++k)
        if (group[k] >= 0) members[group[k]].push_back(k);
    std::vector<int> d(static_cast<std::size_t>(num_ues), 0);
    for (const auto& [c, ues] : members) {
        const int n = static_cast<int>(ues.size());
        for (int j = 0; j < n; ++j) d[ues[j]] = subcarriers / n + (j < subcarriers % n ? 1 : 0);
    }
    return d;
}

/// group[k]: reuse group of UE k (-1 = not served). UEs in one group never share
/// a subcarrier; different groups may. Exclusive allocation = one group.
inline RMat allocate_subcarriers_greedy(const RMat& gain, const std::vector<int>& demand, const std::vector<int>& group,
                                        GreedyOrder order = GreedyOrder::WeakestFirst)
{
    const int K = static_cast<int>(gain.rows()), N = static_cast<int>(gain.cols());
    if (static_cast<int>(demand.size()) != K || static_cast<int>(group.size()) != K)
        throw Error("demand and group vectors must have one entry per UE");
    std::map<int, int> requested;
    for (int k = 0; k < K; ++k) {
        if (demand[k] < 0) throw Error("negative subcarrier demand");
        if (group[k] >= 0) requested[group[k]] += demand[k];
    }
    std::ostringstream shortfall;
    for (const auto& [c, r] : requested)
        if (r > N) shortfall << " group " << c << ": requested " << r << " of " << N << " (short " << r - N << ")";
    if (!shortfall.str().empty()) throw Error("infeasible subcarrier demand:" + shortfall.str());

    std::vector<int> ues;
    for (int k = 0; k < K; ++k)
        if (group[k] >= 0 && demand[k] > 0) ues.push_back(k);
    std::stable_sort(ues.begin(), ues.end(), [&](int a, int b) {
        const double ga = gain.row(a).maxCoeff(), gb = gain.row(b).maxCoeff();
        return order == GreedyOrder::WeakestFirst ? ga < gb : ga > gb;
    });
    RMat delta = RMat::Zero(K, N);
    std::map<int, std::vector<bool>> claimed;
    for (int k : ues) {
        auto& used = claimed.try_emplace(group[k], std::vector<bool>(static_cast<std::size_t>(N), false)).first->second;
        std::vector<int> free;
        for (int n = 0; n < N; ++n)
            if (!used[n]) free.push_back(n);
        std::stable_sort(free.begin(), free.end(), [&](int a, int b) { return gain(k, a) > gain(k, b); });
        for (int j = 0; j < demand[k]; ++j) {
            delta(k, free[j]) = 1.0;
            used[free[j]] = true;
        }
    }
    return delta;
}

/// Maximizes sum_n log2(1 + eta_n g_n) subject to sum eta_n = budget, eta >= 0.
/// Exact: sorts the inverse gains and finds the water level in closed form.
inline RVec allocate_power_waterfill(const RVec& g, double budget)
{
    if (!(budget > 0.0)) throw Error("power budget must be positive");
    const Eigen::Index n = g.size();
    if (n == 0) throw Error("water-filling needs at least one subcarrier");
    if ((g.array() < 0.0).any()) throw Error("negative gain");
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < n; ++i)
        if (g(i) > 0.0) idx.push_back(i);
    if (idx.empty()) return RVec::Constant(n, budget / static_cast<double>(n));
    std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) { return g(a) > g(b); });
    double level = 0.0, inv_sum = 0.0;
    std::size_t active = 0;
    for (std::size_t j = 0; j < idx.size(); ++j) {
        inv_sum += 1.0 / g(idx[j]);
        const double mu = (budget + inv_sum) / static_cast<double>(j + 1);
        if (j + 1 < idx.size() && mu <= 1.0 / g(idx[j + 1])) {
            level = mu;
            active = j + 1;
            break;
        }
        level = mu;
        active = j + 1;
    }
    RVec eta = RVec::Zero(n);
    double used = 0.0;
    for (std::size_t j = 0; j < active; ++j) {
        eta(idx[j]) = std::max(0.0, level - 1.0 / g(idx[j]));
        used += eta(idx[j]);
    }
    if (used > 0.0) eta *= budget / used;  // remove rounding so the budget is met exactly
    return eta;
}

inline double waterfill_rate(const RVec& g, const RVec& eta)
{
    return (1.0 + (eta.array() * g.array())).log().sum() / std::log(2.0);
}

/// Per-UE SINR as a function of per-UE powers.
using SinrEvaluator = std::function<RVec(const RVec&)>;

struct MaxMinResult {
    RVec power;
    RVec sinr;
    double target = 0.0;   // largest feasible common SINR found
    bool degenerate = false;  // some UE cannot reach any positive SINR
    int evaluations = 0;
};

/// Bisection on the common target t. At each t the powers follow the fixed point
/// p <- min(cap, t p / gamma(p)) (gamma_k proportional to p_k with interference
/// independent of p_k); t is feasible when the fixed point meets t everywhere and
/// the optional total cap.
inline MaxMinResult maxmin_power_control(const SinrEvaluator& eval, const RVec& cap, double tol = 1e-4,
                                         std::optional<double> total_cap = {})
{
    const Eigen::Index K = cap.size();
    if (K == 0) throw Error("max-min needs at least one UE");
    if ((cap.array() <= 0.0).any()) throw Error("power caps must be positive");
    MaxMinResult r;
    // Interference-free bound: each UE alone at full power.
    double hi = std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < K; ++k) {
        RVec p = RVec::Zero(K);
        p(k) = total_cap ? std::min(cap(k), *total_cap) : cap(k);
        const RVec g = eval(p);
        ++r.evaluations;
        hi = std::min(hi, g(k));
    }
    if (!(hi > 0.0)) {
        r.degenerate = true;
        r.power = cap;
        r.sinr = eval(cap);
        return r;
    }

    auto attempt = [&](double t, RVec& p_out, RVec& g_out) {
        RVec p = cap;
        if (total_cap && p.sum() > *total_cap) p *= *total_cap / p.sum();
        RVec g = eval(p);
        ++r.evaluations;
        for (int it = 0; it < 500; ++it) {
            RVec next(K);
            for (Eigen::Index k = 0; k < K; ++k) {
                if (!(g(k) > 0.0)) return false;
                next(k) = std::min(cap(k), t * p(k) / g(k));
            }
            const double change = (next - p).cwiseAbs().maxCoeff();
            p = next;
            g = eval(p);
            ++r.evaluations;
            if (change <= 1e-13 * cap.maxCoeff()) break;
        }
        if ((g.array() < t * (1.0 - 1e-9)).any()) return false;
        if (total_cap && p.sum() > *total_cap * (1.0 + 1e-12)) return false;
        p_out = p;
        g_out = g;
        return true;
    };

    double lo = 0.0;
    RVec best_p = cap, best_g = eval(cap);
    if (total_cap && best_p.sum() > *total_cap) {
        best_p *= *total_cap / best_p.sum();
        best_g = eval(best_p);
    }
    lo = best_g.minCoeff();
    while (hi - lo > tol * std::max(1.0, lo)) {
        const double mid = 0.5 * (lo + hi);
        RVec p, g;
        if (attempt(mid, p, g)) {
            lo = mid;
            best_p = p;
            best_g = g;
        } else {
            hi = mid;
        }
    }
    // Settle at the achieved target so surplus power is released.
    {
        RVec p, g;
        if (attempt(lo, p, g) && g.minCoeff() >= best_g.minCoeff() * (1.0 - 1e-9)) {
            best_p = p;
            best_g = g;
        }
    }
    r.power = best_p;
    r.sinr = best_g;
    r.target = best_g.minCoeff();
    return r;
}

struct FeasibilityEntry {
    double rate = 0.0;
    double required = 0.0;
    bool meets = true;
};

/// Per-UE rate sum_i log2(1 + gamma_ki) against R_k^min; disconnected UEs have
/// no symbols and rate 0.
inline std::vector<FeasibilityEntry> check_feasibility(const std::vector<RVec>& sinr, const RVec& min_rate)
{
    if (static_cast<Eigen::Index>(sinr.size()) != min_rate.size()) throw Error("one minimum rate per UE required");
    std::vector<FeasibilityEntry> out;
    for (std::size_t k = 0; k < sinr.size(); ++k) {
        FeasibilityEntry e;
        for (Eigen::Index i = 0; i < sinr[k].size(); ++i) e.rate += std::log2(1.0 + sinr[k](i));
        e.required = min_rate(static_cast<Eigen::Index>(k));
        e.meets = e.rate >= e.required;
        out.push_back(e);
    }
    return out;
}

/// Outcome of the successive heuristic.
struct AllocationPlan {
    Direction direction = Direction::Uplink;
    AssociationMap assoc;
    RMat delta;          // K x N binary subcarrier assignment
    RMat eta;            // K x N UL powers
    RVec eta_budget;     // eta_k
    RMat dl;             // K x N DL coefficients Delta_kn
    double a0 = 0.0;
    RMat unamplified;    // M x N expected DL element power before A0
    RVec ap_cap;
    std::optional<RMat> element_cap;
    std::vector<RVec> sinr;  // per UE, per assigned symbol
    double sum_rate = 0.0;
    double min_sinr = 0.0;
    std::vector<FeasibilityEntry> feasibility;
};

struct PlanAudit {
    bool ok = true;
    std::vector<std::string> violations;
};

/// Hard-constraint check of a plan: binary association and assignment,
/// per-UE UL budgets (sum_n eta_kn = eta_k <= 1), DL coefficient budget, and
/// the amplified per-AP / per-element caps.
inline PlanAudit audit_plan(const AllocationPlan& p, double tol = 1e-9)
{
    PlanAudit a;
    auto fail = [&](const std::string& what) {
        a.ok = false;
        a.violations.push_back(what);
    };
    const RMat z = p.assoc.zeta();
    if (!((z.array() == 0.0) || (z.array() == 1.0)).all()) fail("association not binary");
    if (!p.assoc.consistent()) fail("association sets inconsistent");
    if (!((p.delta.array() == 0.0) || (p.delta.array() == 1.0)).all()) fail("subcarrier assignment not binary");
    const Eigen::Index K = p.delta.rows();
    if (p.direction == Direction::Uplink) {
        if (p.eta.rows() != K || p.eta.cols() != p.delta.cols() || p.eta_budget.size() != K) {
            fail("UL power dimensions");
            return a;
        }
        if ((p.eta.array() < 0.0).any()) fail("negative UL power");
        if (((p.delta.array() == 0.0) && (p.eta.array() != 0.0)).any()) fail("UL power on unassigned subcarrier");
        for (Eigen::Index k = 0; k < K; ++k) {
            const double s = p.eta.row(k).sum();
            if (std::abs(s - p.eta_budget(k)) > tol * std::max(1.0, p.eta_budget(k))) fail("UL powers do not sum to budget");
            if (p.eta_budget(k) > 1.0 + tol) fail("UL budget above 1");
        }
    } else {
        if (p.dl.rows() != K || p.dl.cols() != p.delta.cols()) {
            fail("DL coefficient dimensions");
            return a;
        }
        if ((p.dl.array() < 0.0).any()) fail("negative DL coefficient");
        if (((p.delta.array() == 0.0) && (p.dl.array() != 0.0)).any()) fail("DL power on unassigned subcarrier");
        if (p.dl.sum() > 1.0 + tol) fail("DL coefficients exceed unit budget");
        if (p.dl.sum() > 0.0) {
            const auto au = audit_a0(p.unamplified, p.ap_cap, p.element_cap, p.a0, tol);
            if (!au.ok) fail("A0 violates a transmit power cap");
            if (!au.binding) fail("A0 leaves every power cap slack");
        }
    }
    return a;
}

struct AllocationProblem {
    std::vector<std::vector<CVec>> freq;  // [m][k], length N
    AssociationMap assoc;
    double snr = 1.0;                     // UL gamma_u
    double dl_noise = 1.0;                // DL sigma^2
    std::vector<int> demand;              // N_k; empty = default split
    RVec min_rate;                        // R_k^min; empty = zeros
    RVec ap_cap;                          // P_m^max; empty = ones
    std::optional<RMat> element_cap;      // P_m^max(n)

    int num_aps() const { return static_cast<int>(freq.size()); }
    int num_ues() const { return freq.empty() ? 0 : static_cast<int>(freq[0].size()); }
    int subcarriers() const { return num_ues() == 0 ? 0 : static_cast<int>(freq[0][0].size()); }
};

struct AllocationOptions {
    Objective objective = Objective::SumRate;
    Direction direction = Direction::Uplink;
    GreedyOrder order = GreedyOrder::WeakestFirst;
    bool sharing = true;        // reuse subcarriers across graph components
    int refine_iterations = 3;  // interference-aware water-filling passes (<= 10)
    double tolerance = 1e-4;    // max-min bisection
    bool reuse_candidate = true;  // also try every group UE on every subcarrier
};

/// Reuse groups: graph components in sharing mode, one group otherwise.
inline std::vector<int> reuse_groups(const AllocationProblem& pr, bool sharing)
{
    const int K = pr.num_ues();
    std::vector<int> group(static_cast<std::size_t>(K), -1);
    if (sharing) {
        const auto g = build_factor_graph(pr.assoc);
        for (int k = 0; k < K; ++k) group[k] = g.component_of_ue[k];
    } else {
        for (int k = 0; k < K; ++k) group[k] = pr.assoc.aps_of_ue[k].empty() ? -1 : 0;
    }
    return group;
}

namespace detail {

inline RMat spread(const RMat& delta, const RVec& per_ue)
{
    RMat out = RMat::Zero(delta.rows(), delta.cols());
    for (Eigen::Index k = 0; k < delta.rows(); ++k) {
        const double n = delta.row(k).sum();
        if (n > 0.0) out.row(k) = delta.row(k) * (per_ue(k) / n);
    }
    return out;
}

/// Effective per-subcarrier gain used by water-filling: associated-AP channel
/// energy over noise plus the interference other UEs place on those APs.
inline RMat effective_gain(const AllocationProblem& pr, const RMat& delta, const RMat& power, double noise)
{
    const int K = pr.num_ues(), N = pr.subcarriers();
    RMat g = RMat::Zero(K, N);
    for (int k = 0; k < K; ++k)
        for (int n = 0; n < N; ++n) {
            if (delta(k, n) == 0.0) continue;
            double sig = 0.0, intf = 0.0;
            for (int m : pr.assoc.aps_of_ue[k]) {
                const double hk = std::norm(pr.freq[m][k](n));
                sig += hk;
                for (int l = 0; l < K; ++l)
                    if (l != k && delta(l, n) != 0.0) intf += power(l, n) * std::norm(pr.freq[m][l](n)) * hk;
            }
            g(k, n) = sig > 0.0 ? sig * sig / (noise * sig + intf) : 0.0;
        }
    return g;
}

}  // namespace detail

/// UL SINRs of a plan under GMMSE detection.
inline std::vector<RVec> evaluate_uplink(const AllocationProblem& pr, const RMat& delta, const RMat& eta)
{
    return uplink_sinrs(make_uplink_scene(pr.freq, pr.snr, delta, eta));
}

/// DL evaluation: central OFDM TMMSE built from the CPU's masked view, A0 from the
/// caps, SINRs on the true channels. Fills the DL fields of the plan.
inline void evaluate_downlink(const AllocationProblem& pr, AllocationPlan& plan)
{
    const int K = pr.num_ues(), N = pr.subcarriers();
    const RMat zero = RMat::Zero(K, N);
    const UplinkScene layout = make_uplink_scene(pr.freq, 1.0, plan.delta, zero);
    std::vector<RVec> dvec;
    for (int k = 0; k < K; ++k) {
        RVec d(layout.symbols(k));
        for (int i = 0; i < layout.symbols(k); ++i) d(i) = plan.dl(k, layout.assigned[k][i]);
        dvec.push_back(d);
    }
    const DownlinkScene truth = downlink_from(layout, dvec, pr.dl_noise);
    plan.sinr.assign(static_cast<std::size_t>(K), RVec());
    if (plan.dl.sum() <= 0.0) {
        for (int k = 0; k < K; ++k) plan.sinr[k] = RVec::Zero(truth.symbols(k));
        plan.a0 = 0.0;
        plan.unamplified = RMat::Zero(pr.num_aps(), N);
        return;
    }
    const auto prec = tmmse_central_ofdm(mask_channels(truth, pr.assoc));
    plan.unamplified = element_power(prec, pr.num_aps(), N);
    plan.a0 = compute_a0(plan.unamplified, plan.ap_cap, plan.element_cap);
    plan.sinr = dl_sinrs(truth, prec, plan.a0);
}

inline void finalize(const AllocationProblem& pr, AllocationPlan& plan)
{
    plan.sum_rate = sum_rate(plan.sinr);
    plan.min_sinr = std::numeric_limits<double>::infinity();
    for (const auto& g : plan.sinr)
        if (g.size() > 0) plan.min_sinr = std::min(plan.min_sinr, g.minCoeff());
    if (!std::isfinite(plan.min_sinr)) plan.min_sinr = 0.0;
    const RVec rmin = pr.min_rate.size() ? pr.min_rate : RVec::Zero(pr.num_ues());
    plan.feasibility = check_feasibility(plan.sinr, rmin);
}

namespace detail {

/// Power stage and evaluation for a fixed subcarrier assignment.
inline AllocationPlan plan_for_assignment(const AllocationProblem& pr, const AllocationOptions& opt, const RMat& delta)
{
    const int K = pr.num_ues(), N = pr.subcarriers(), M = pr.num_aps();
    AllocationPlan plan;
    plan.direction = opt.direction;
    plan.assoc = pr.assoc;
    plan.ap_cap = pr.ap_cap.size() ? pr.ap_cap : RVec::Ones(M);
    plan.element_cap = pr.element_cap;
    plan.delta = delta;
    const RVec counts = plan.delta.rowwise().sum();

    if (opt.direction == Direction::Uplink) {
        plan.eta_budget = RVec::Zero(K);
        for (int k = 0; k < K; ++k)
            if (counts(k) > 0) plan.eta_budget(k) = 1.0;
        if (opt.objective == Objective::SumRate) {
            plan.eta = detail::spread(plan.delta, plan.eta_budget);
            double best_rate = 0.0;
            RMat best_eta = plan.eta;
            for (int pass = 0; pass <= opt.refine_iterations; ++pass) {
                const RMat g = detail::effective_gain(pr, plan.delta, pass == 0 ? RMat::Zero(K, N) : plan.eta,
                                                      1.0 / pr.snr);
                RMat next = RMat::Zero(K, N);
                for (int k = 0; k < K; ++k) {
                    std::vector<int> idx;
                    for (int n = 0; n < N; ++n)
                        if (plan.delta(k, n) != 0.0) idx.push_back(n);
                    if (idx.empty()) continue;
                    RVec gk(static_cast<Eigen::Index>(idx.size()));
                    for (std::size_t j = 0; j < idx.size(); ++j) gk(static_cast<Eigen::Index>(j)) = g(k, idx[j]);
                    const RVec e = allocate_power_waterfill(gk, plan.eta_budget(k));
                    for (std::size_t j = 0; j < idx.size(); ++j) next(k, idx[j]) = e(static_cast<Eigen::Index>(j));
                }
                // Refinement is not monotone: keep the best pass.
                const double rate = sum_rate(evaluate_uplink(pr, plan.delta, next));
                if (pass == 0 || rate > best_rate) {
                    best_rate = rate;
                    best_eta = next;
                }
                plan.eta = next;
            }
            plan.eta = best_eta;
        } else {
            std::vector<int> served;
            for (int k = 0; k < K; ++k)
                if (counts(k) > 0) served.push_back(k);
            plan.eta = RMat::Zero(K, N);
            if (!served.empty()) {
                const SinrEvaluator eval = [&](const RVec& p) {
                    RVec full = RVec::Zero(K);
                    for (std::size_t j = 0; j < served.size(); ++j) full(served[j]) = p(static_cast<Eigen::Index>(j));
                    const auto s = evaluate_uplink(pr, plan.delta, detail::spread(plan.delta, full));
                    RVec out(static_cast<Eigen::Index>(served.size()));
                    for (std::size_t j = 0; j < served.size(); ++j) out(static_cast<Eigen::Index>(j)) = s[served[j]].minCoeff();
                    return out;
                };
                const auto mm = maxmin_power_control(eval, RVec::Ones(static_cast<Eigen::Index>(served.size())),
                                                     opt.tolerance);
                for (std::size_t j = 0; j < served.size(); ++j) plan.eta_budget(served[j]) = mm.power(static_cast<Eigen::Index>(j));
                plan.eta = detail::spread(plan.delta, plan.eta_budget);
            }
        }
        plan.sinr = evaluate_uplink(pr, plan.delta, plan.eta);
    } else {
        const int symbols = static_cast<int>(plan.delta.sum());
        plan.dl = RMat::Zero(K, N);
        if (symbols > 0) {
            if (opt.objective == Objective::SumRate) {
                std::vector<std::pair<int, int>> slots;
                for (int k = 0; k < K; ++k)
                    for (int n = 0; n < N; ++n)
                        if (plan.delta(k, n) != 0.0) slots.emplace_back(k, n);
                const RMat g = detail::effective_gain(pr, plan.delta, RMat::Zero(K, N), pr.dl_noise);
                RVec gs(static_cast<Eigen::Index>(slots.size()));
                for (std::size_t j = 0; j < slots.size(); ++j) gs(static_cast<Eigen::Index>(j)) = g(slots[j].first, slots[j].second);
                const RVec d = allocate_power_waterfill(gs, 1.0);
                for (std::size_t j = 0; j < slots.size(); ++j) plan.dl(slots[j].first, slots[j].second) = d(static_cast<Eigen::Index>(j));
            } else {
                std::vector<int> served;
                for (int k = 0; k < K; ++k)
                    if (counts(k) > 0) served.push_back(k);
                // Precoder directions do not depend on Delta; A0 is held at the
                // equal-split value during bisection and recomputed afterwards.
                AllocationPlan probe = plan;
                probe.dl = detail::spread(plan.delta, RVec::Constant(K, 1.0 / static_cast<double>(served.size())));
                evaluate_downlink(pr, probe);
                const double a0 = probe.a0;
                const RMat zero = RMat::Zero(K, N);
                const UplinkScene layout = make_uplink_scene(pr.freq, 1.0, plan.delta, zero);
                std::vector<RVec> unit;
                const double u = 1.0 / symbols;
                for (int k = 0; k < K; ++k) unit.push_back(RVec::Constant(layout.symbols(k), u));
                const DownlinkScene truth = downlink_from(layout, unit, pr.dl_noise);
                const auto dir = tmmse_central_ofdm(mask_channels(truth, pr.assoc));
                const SinrEvaluator eval = [&](const RVec& p) {
                    std::vector<CMat> prec = dir;
                    for (int k = 0; k < K; ++k) prec[k].setZero();
                    for (std::size_t j = 0; j < served.size(); ++j) {
                        const int k = served[j];
                        prec[k] = dir[k] * std::sqrt(p(static_cast<Eigen::Index>(j)) / (counts(k) * u));
                    }
                    RVec out(static_cast<Eigen::Index>(served.size()));
                    for (std::size_t j = 0; j < served.size(); ++j) {
                        const int k = served[j];
                        double worst = std::numeric_limits<double>::infinity();
                        for (int i = 0; i < truth.symbols(k); ++i) worst = std::min(worst, dl_sinr(truth, prec, a0, k, i));
                        out(static_cast<Eigen::Index>(j)) = worst;
                    }
                    return out;
                };
                const auto mm = maxmin_power_control(eval, RVec::Ones(static_cast<Eigen::Index>(served.size())),
                                                     opt.tolerance, 1.0);
                RVec per = RVec::Zero(K);
                for (std::size_t j = 0; j < served.size(); ++j) per(served[j]) = mm.power(static_cast<Eigen::Index>(j));
                plan.dl = detail::spread(plan.delta, per);
            }
        }
        evaluate_downlink(pr, plan);
    }
    finalize(pr, plan);
    return plan;
}

inline double objective_value(const AllocationPlan& p, Objective o)
{
    return o == Objective::SumRate ? p.sum_rate : p.min_sinr;
}

}  // namespace detail

/// Association (given) -> greedy subcarriers -> power allocation -> evaluation.
/// The greedy assignment is compared against full reuse inside each reuse group
/// (detectors and precoders can separate co-channel UEs), and the better plan
/// under the objective is kept. Rate requirements are reported in the plan's
/// feasibility entries, never thrown.
inline AllocationPlan successive_optimize(const AllocationProblem& pr, const AllocationOptions& opt)
{
    const int K = pr.num_ues(), N = pr.subcarriers(), M = pr.num_aps();
    if (K == 0 || N == 0 || M == 0) throw Error("allocation problem is empty");
    if (pr.assoc.num_ues() != K || pr.assoc.num_aps() != M) throw Error("association does not match channels");
    if (opt.refine_iterations < 0 || opt.refine_iterations > 10) throw Error("refine_iterations must lie in [0, 10]");

    const auto group = reuse_groups(pr, opt.sharing);
    const auto demand = pr.demand.empty() ? default_demand(K, N, group) : pr.demand;
    const RMat greedy = allocate_subcarriers_greedy(aggregate_gain(pr.freq, pr.assoc), demand, group, opt.order);
    AllocationPlan best = detail::plan_for_assignment(pr, opt, greedy);
    if (opt.reuse_candidate && pr.demand.empty()) {
        RMat reuse = RMat::Zero(K, N);
        for (int k = 0; k < K; ++k)
            if (group[k] >= 0) reuse.row(k).setOnes();
        if (reuse != greedy) {
            AllocationPlan alt = detail::plan_for_assignment(pr, opt, reuse);
            if (detail::objective_value(alt, opt.objective) > detail::objective_value(best, opt.objective))
                best = std::move(alt);
        }
    }
    return best;
}

}  // namespace uccf
