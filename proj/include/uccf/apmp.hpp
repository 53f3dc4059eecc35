#pragma once

// Access-point message passing (belief propagation over the AP/UE factor
// graph) and an exhaustive MAP oracle over the same local factors.
//
// Messages are log-probability vectors over the constellation normalized so
// that entry 0 is zero; "LLR" below always means such a vector. Detection runs
// independently per (graph component, subcarrier) since the scene is ICI-free.

#include "uccf/core.hpp"
#include "uccf/modulation.hpp"
#include "uccf/topology.hpp"
#include "uccf/uplink.hpp"

#include <map>
#include <tuple>

namespace uccf {

using Llr = RVec;

struct ApmpConfig {
    int max_iterations = 20;
    double tolerance = 1e-4;   // max |change| of the total LLR between rounds
    double damping = 0.0;      // in [0, 1)
    double clamp = 50.0;
    Constellation constellation = Constellation::Bpsk;

    void validate() const
    {
        if (max_iterations < 0) throw Error("max_iterations must be nonnegative");
        if (!(damping >= 0.0 && damping < 1.0)) throw Error("damping must lie in [0, 1)");
        if (!(clamp > 0.0)) throw Error("LLR clamp must be positive");
    }
};

/// Conventional BPSK LLR log p(+1) / p(-1) from a message vector.
inline double bpsk_llr(const Llr& v) { return v(0) - v(1); }

inline double log_sum_exp(double a, double b)
{
    if (a == -std::numeric_limits<double>::infinity()) return b;
    if (b == -std::numeric_limits<double>::infinity()) return a;
    const double hi = std::max(a, b);
    return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

/// Floors entries at -clamp below the most likely symbol, then references symbol 0.
/// Clamping relative to the maximum keeps the decision intact at high SNR.
inline Llr normalize_llr(Llr v, double clamp)
{
    v.array() -= v.maxCoeff();
    v = v.cwiseMax(-clamp);
    v.array() -= v(0);
    return v;
}

/// One AP's observation on one subcarrier: y = sum_j gains_j x_j + w, w ~ CN(0, variance).
struct LocalFactor {
    int ap = -1;
    std::vector<int> ues;
    std::vector<cd> gains;  // sqrt(eta) h for each UE in ues
    cd y;
    double variance = 1.0;  // noise plus interference from UEs the AP does not serve
};

inline constexpr int kMaxLocalStates = 256;  // 8 UEs at BPSK

/// Factor-to-UE messages: for each UE in the factor, the log marginal of the
/// local likelihood after summing out the co-served UEs weighted by their priors.
/// priors may be empty (uniform) or hold one vector per UE in the factor; the
/// target UE's own prior is excluded from its message.
inline std::vector<Llr> intrinsic_llr(const LocalFactor& f, Constellation c, const std::vector<Llr>& priors = {},
                                      double clamp = 50.0)
{
    const auto pts = points(c);
    const int Q = static_cast<int>(pts.size());
    const int U = static_cast<int>(f.ues.size());
    if (static_cast<int>(f.gains.size()) != U) throw Error("factor gain count mismatch");
    if (!priors.empty() && static_cast<int>(priors.size()) != U) throw Error("prior count mismatch");
    double states = 1.0;
    for (int j = 0; j < U; ++j) states *= Q;
    if (states > kMaxLocalStates) throw Error("local marginalization too large");
    if (!(f.variance > 0.0)) throw Error("local factor needs positive noise variance");

    const double ninf = -std::numeric_limits<double>::infinity();
    std::vector<Llr> acc(static_cast<std::size_t>(U), Llr::Constant(Q, ninf));
    std::vector<int> q(static_cast<std::size_t>(U), 0);
    const long total = static_cast<long>(states);
    for (long s = 0; s < total; ++s) {
        long rem = s;
        cd mean = 0.0;
        double prior_sum = 0.0;
        for (int j = 0; j < U; ++j) {
            q[j] = static_cast<int>(rem % Q);
            rem /= Q;
            mean += f.gains[j] * pts[q[j]];
            if (!priors.empty()) prior_sum += priors[j](q[j]);
        }
        const double ll = -std::norm(f.y - mean) / f.variance;
        for (int j = 0; j < U; ++j) {
            const double own = priors.empty() ? 0.0 : priors[j](q[j]);
            acc[j](q[j]) = log_sum_exp(acc[j](q[j]), ll + prior_sum - own);
        }
    }
    for (auto& a : acc) a = normalize_llr(a, clamp);
    return acc;
}

/// Local factors of every AP in `aps` for subcarrier n. UEs active on n that an
/// AP does not serve are folded into its Gaussian noise term.
inline std::vector<LocalFactor> build_local_factors(const UplinkScene& s, const AssociationMap& assoc,
                                                    const CVec& y, int n, const std::vector<int>& aps)
{
    std::vector<LocalFactor> out;
    for (int m : aps) {
        LocalFactor f;
        f.ap = m;
        f.y = y(static_cast<Eigen::Index>(m) * s.subcarriers + n);
        f.variance = s.noise();
        for (int k = 0; k < s.num_ues(); ++k) {
            if (s.symbol_index(k, n) < 0) continue;
            const double eta = s.power_on(k, n);
            const cd g = std::sqrt(eta) * s.gain(m, n, k);
            if (assoc.contains(m, k)) {
                f.ues.push_back(k);
                f.gains.push_back(g);
            } else {
                f.variance += std::norm(g);
            }
        }
        if (!f.ues.empty()) out.push_back(std::move(f));
    }
    return out;
}

/// Bulk-synchronous message passing on one (component, subcarrier) subproblem.
/// Round structure: exchange factor messages between APs sharing a UE, form
/// totals, feed back extrinsic information (total minus what came from the
/// receiving AP), recompute local messages with those priors.
class ApmpSubproblem {
public:
    using EdgeKey = std::tuple<int, int, int>;  // (from AP, to AP, UE)

    ApmpSubproblem(std::vector<LocalFactor> factors, const ApmpConfig& cfg) : factors_(std::move(factors)), cfg_(cfg)
    {
        for (std::size_t f = 0; f < factors_.size(); ++f)
            for (int k : factors_[f].ues) holders_[k].push_back(static_cast<int>(f));
        Q_ = static_cast<int>(points(cfg_.constellation).size());
    }

    /// Intrinsic information with uniform priors.
    void initialize()
    {
        mu_.clear();
        for (const auto& f : factors_) {
            const auto msgs = intrinsic_llr(f, cfg_.constellation, {}, cfg_.clamp);
            for (std::size_t j = 0; j < f.ues.size(); ++j) mu_[{f.ap, f.ues[j]}] = msgs[j];
        }
        totals_.clear();
        for (const auto& [key, v] : mu_) totals_[key] = v;
    }

    /// Every AP adds the messages received from the other APs serving each UE.
    void exchange()
    {
        for (auto& [key, total] : totals_) {
            const int k = key.second;
            Llr t = Llr::Zero(Q_);
            for (int f : holders_.at(k)) t += mu_.at({factors_[f].ap, k});
            total = normalize_llr(t, cfg_.clamp);
        }
    }

    /// Extrinsic message from AP i to AP j about UE k: total at i minus what i received from j.
    void feedback()
    {
        extrinsic_.clear();
        for (const auto& [k, hs] : holders_)
            for (int fi : hs)
                for (int fj : hs) {
                    if (fi == fj) continue;
                    const int i = factors_[fi].ap, j = factors_[fj].ap;
                    extrinsic_[{i, j, k}] = normalize_llr(totals_.at({i, k}) - mu_.at({j, k}), cfg_.clamp);
                }
    }

    /// Recompute each AP's local messages using the extrinsic priors addressed to it.
    void update()
    {
        std::map<std::pair<int, int>, Llr> next;
        for (const auto& f : factors_) {
            std::vector<Llr> priors;
            for (int k : f.ues) priors.push_back(prior_for(f.ap, k));
            const auto msgs = intrinsic_llr(f, cfg_.constellation, priors, cfg_.clamp);
            for (std::size_t j = 0; j < f.ues.size(); ++j) {
                const std::pair<int, int> key{f.ap, f.ues[j]};
                const Llr& old = mu_.at(key);
                next[key] = normalize_llr((1.0 - cfg_.damping) * msgs[j] + cfg_.damping * old, cfg_.clamp);
            }
        }
        mu_ = std::move(next);
    }

    /// Runs up to max_iterations rounds; returns the number performed.
    int run(std::vector<std::map<int, Llr>>* trace = nullptr)
    {
        initialize();
        if (trace) trace->push_back(decision_totals());
        int it = 0;
        for (int t = 1; t <= cfg_.max_iterations; ++t) {
            const auto before = decision_totals();
            if (t >= 2) {
                feedback();
                update();
            }
            exchange();
            it = t;
            const auto after = decision_totals();
            if (trace) trace->push_back(after);
            if (t >= 2) {
                double change = 0.0;
                for (const auto& [k, v] : after) change = std::max(change, (v - before.at(k)).cwiseAbs().maxCoeff());
                if (change < cfg_.tolerance) break;
            }
        }
        return it;
    }

    /// Lowest-index AP serving k within this subproblem.
    int decision_ap(int k) const { return factors_[holders_.at(k).front()].ap; }

    std::map<int, Llr> decision_totals() const
    {
        std::map<int, Llr> out;
        for (const auto& [k, hs] : holders_) out[k] = totals_.at({decision_ap(k), k});
        return out;
    }

    std::vector<int> ues() const
    {
        std::vector<int> u;
        for (const auto& [k, hs] : holders_) u.push_back(k);
        return u;
    }

    std::map<EdgeKey, Llr>& extrinsic() { return extrinsic_; }
    const std::map<EdgeKey, Llr>& extrinsic() const { return extrinsic_; }
    const std::map<std::pair<int, int>, Llr>& messages() const { return mu_; }

private:
    Llr prior_for(int ap, int k) const
    {
        for (int f : holders_.at(k)) {
            const int i = factors_[f].ap;
            if (i == ap) continue;
            auto it = extrinsic_.find({i, ap, k});
            if (it != extrinsic_.end()) return it->second;
        }
        return Llr::Zero(Q_);
    }

    std::vector<LocalFactor> factors_;
    ApmpConfig cfg_;
    int Q_ = 2;
    std::map<int, std::vector<int>> holders_;      // UE -> factor indices (ascending AP)
    std::map<std::pair<int, int>, Llr> mu_;         // (AP, UE) -> local message
    std::map<std::pair<int, int>, Llr> totals_;     // (AP, UE) -> total information
    std::map<EdgeKey, Llr> extrinsic_;
};

struct ApmpTrace {
    int component = -1;
    int subcarrier = -1;
    std::vector<std::map<int, Llr>> rounds;  // per round: UE -> total LLR at its decision AP
};

struct ApmpResult {
    std::vector<std::vector<int>> decisions;  // [k][i] constellation index (empty when undetected)
    std::vector<std::vector<Llr>> llr;        // [k][i] final total information
    std::vector<int> undetected;
    int max_iterations_used = 0;
    std::vector<ApmpTrace> trace;
};

inline int decide(const Llr& v)
{
    int best = 0;
    for (int q = 1; q < v.size(); ++q)
        if (v(q) > v(best)) best = q;
    return best;
}

/// Flooding-schedule APMP over every component and subcarrier of the graph.
/// y is one MN observation vector of the scene.
inline ApmpResult apmp_detect(const UplinkScene& s, const FactorGraph& g, const CVec& y, const ApmpConfig& cfg,
                              bool keep_trace = false)
{
    cfg.validate();
    if (g.vn_count != s.num_ues() || g.fn_count != s.num_aps) throw Error("factor graph does not match scene");
    if (!s.ici_free()) throw Error("APMP requires an ICI-free scene");
    ApmpResult r;
    const int K = s.num_ues();
    r.decisions.assign(static_cast<std::size_t>(K), {});
    r.llr.assign(static_cast<std::size_t>(K), {});
    const int Q = static_cast<int>(points(cfg.constellation).size());
    for (int k = 0; k < K; ++k) {
        if (g.component_of_ue[k] < 0) {
            r.undetected.push_back(k);
            continue;
        }
        r.decisions[k].assign(static_cast<std::size_t>(s.symbols(k)), 0);
        r.llr[k].assign(static_cast<std::size_t>(s.symbols(k)), Llr::Zero(Q));
    }
    for (std::size_t c = 0; c < g.components.size(); ++c) {
        for (int n = 0; n < s.subcarriers; ++n) {
            auto factors = build_local_factors(s, g.assoc, y, n, g.components[c].aps);
            if (factors.empty()) continue;
            ApmpSubproblem sub(std::move(factors), cfg);
            ApmpTrace tr{static_cast<int>(c), n, {}};
            const int it = sub.run(keep_trace ? &tr.rounds : nullptr);
            r.max_iterations_used = std::max(r.max_iterations_used, it);
            for (const auto& [k, v] : sub.decision_totals()) {
                const int i = s.symbol_index(k, n);
                r.llr[k][i] = v;
                r.decisions[k][i] = decide(v);
            }
            if (keep_trace) r.trace.push_back(std::move(tr));
        }
    }
    return r;
}

struct MapMarginals {
    std::vector<int> ues;
    std::vector<RVec> probability;  // per UE, sums to 1
    std::vector<Llr> llr;
};

inline constexpr double kMaxOracleStates = 1048576.0;  // 2^20

/// Exact posterior marginals by enumerating every symbol tuple of the UEs
/// appearing in the factors (uniform priors).
inline MapMarginals map_oracle(const std::vector<LocalFactor>& factors, Constellation c)
{
    const auto pts = points(c);
    const int Q = static_cast<int>(pts.size());
    MapMarginals out;
    for (const auto& f : factors)
        for (int k : f.ues) out.ues.push_back(k);
    std::sort(out.ues.begin(), out.ues.end());
    out.ues.erase(std::unique(out.ues.begin(), out.ues.end()), out.ues.end());
    const int U = static_cast<int>(out.ues.size());
    double states = 1.0;
    for (int j = 0; j < U; ++j) states *= Q;
    if (states > kMaxOracleStates) throw Error("state space too large for exhaustive MAP");

    std::map<int, int> pos;
    for (int j = 0; j < U; ++j) pos[out.ues[j]] = j;
    const double ninf = -std::numeric_limits<double>::infinity();
    std::vector<RVec> logm(static_cast<std::size_t>(U), RVec::Constant(Q, ninf));
    std::vector<int> q(static_cast<std::size_t>(U));
    for (long s = 0; s < static_cast<long>(states); ++s) {
        long rem = s;
        for (int j = 0; j < U; ++j) {
            q[j] = static_cast<int>(rem % Q);
            rem /= Q;
        }
        double ll = 0.0;
        for (const auto& f : factors) {
            cd mean = 0.0;
            for (std::size_t j = 0; j < f.ues.size(); ++j) mean += f.gains[j] * pts[q[pos.at(f.ues[j])]];
            ll -= std::norm(f.y - mean) / f.variance;
        }
        for (int j = 0; j < U; ++j) logm[j](q[j]) = log_sum_exp(logm[j](q[j]), ll);
    }
    for (int j = 0; j < U; ++j) {
        const double z = logm[j].maxCoeff();
        RVec p = (logm[j].array() - z).exp();
        p /= p.sum();
        out.probability.push_back(p);
        Llr l = logm[j];
        l.array() -= l(0);
        out.llr.push_back(l);
    }
    return out;
}

/// Oracle for one component of the graph on subcarrier n.
inline MapMarginals map_oracle(const UplinkScene& s, const FactorGraph& g, int component, int n, const CVec& y,
                               Constellation c)
{
    return map_oracle(build_local_factors(s, g.assoc, y, n, g.components.at(component).aps), c);
}

}  // namespace uccf
