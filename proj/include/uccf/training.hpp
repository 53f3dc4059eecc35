#pragma once

// Pilot design, the frequency-domain pilot observation model and MMSE CIR
// estimation (single-UE, MUI-suppressing, or sample-covariance bracket).

#include "uccf/channel.hpp"
#include "uccf/core.hpp"
#include "uccf/topology.hpp"

#include <functional>

namespace uccf {

struct PilotPlan {
    int subcarriers = 0;                        // N
    int symbols = 0;                            // tau_p
    std::vector<CMat> pilots;                   // S_k, N_k x tau_p
    std::vector<std::vector<int>> active;       // Phi_k as ascending subcarrier indices
    std::vector<int> taps;                      // L_k
    std::vector<double> power;                  // P_k per active subcarrier

    int num_ues() const { return static_cast<int>(pilots.size()); }

    void validate() const
    {
        if (subcarriers < 1 || symbols < 1) throw Error("pilot plan needs N >= 1 and tau_p >= 1");
        const auto K = pilots.size();
        if (active.size() != K || taps.size() != K || power.size() != K) throw Error("pilot plan size mismatch");
        for (std::size_t k = 0; k < K; ++k) {
            const auto nk = static_cast<Eigen::Index>(active[k].size());
            if (pilots[k].rows() != nk || pilots[k].cols() != symbols) throw Error("pilot block dimension mismatch");
            if (taps[k] < 1 || taps[k] > nk || nk > subcarriers) throw Error("pilot plan needs L_k <= N_k <= N");
            for (std::size_t i = 0; i < active[k].size(); ++i) {
                if (active[k][i] < 0 || active[k][i] >= subcarriers) throw Error("pilot subcarrier out of range");
                if (i > 0 && active[k][i] <= active[k][i - 1]) throw Error("pilot subcarriers must be distinct");
            }
            if (!(power[k] >= 0.0)) throw Error("pilot power must be nonnegative");
        }
    }

    /// Phi_k: N x N_k selection of identity columns.
    CMat phi(int k) const
    {
        CMat p = CMat::Zero(subcarriers, static_cast<Eigen::Index>(active[k].size()));
        for (std::size_t i = 0; i < active[k].size(); ++i) p(active[k][i], static_cast<Eigen::Index>(i)) = 1.0;
        return p;
    }

    /// S~_k: the tau_p blocks diag(Phi_k s_ki) stacked vertically, (N tau_p) x N.
    CMat stacked_pilots(int k) const
    {
        const int N = subcarriers;
        CMat s = CMat::Zero(static_cast<Eigen::Index>(N) * symbols, N);
        for (int t = 0; t < symbols; ++t)
            for (std::size_t i = 0; i < active[k].size(); ++i) {
                const int n = active[k][i];
                s(static_cast<Eigen::Index>(t) * N + n, n) = pilots[k](static_cast<Eigen::Index>(i), t);
            }
        return s;
    }
};

/// Unit-modulus pilots built from a cyclic-delay DFT family with a DFT cover
/// across the tau_p training symbols. UE k takes pool index k mod pool_size;
/// with L-tap channels the family has floor(N/L) * tau_p mutually orthogonal
/// members, and a smaller pool forces pilot contamination.
inline PilotPlan make_pilot_plan(int num_ues, int subcarriers, int symbols, int taps, double power,
                                 int pool_size = 0)
{
    if (taps < 1 || taps > subcarriers) throw Error("pilot plan needs 1 <= L <= N");
    if (symbols < 1) throw Error("pilot plan needs tau_p >= 1");
    PilotPlan plan;
    plan.subcarriers = subcarriers;
    plan.symbols = symbols;
    const int shifts = std::max(1, subcarriers / taps);
    const int family = shifts * symbols;
    const int pool = pool_size > 0 ? std::min(pool_size, family) : family;
    for (int k = 0; k < num_ues; ++k) {
        const int q = k % pool;
        const int shift = (q % shifts) * taps;
        const int cover = q / shifts;
        CMat s(subcarriers, symbols);
        for (int n = 0; n < subcarriers; ++n)
            for (int t = 0; t < symbols; ++t)
                s(n, t) = std::polar(1.0, -2.0 * std::numbers::pi *
                                              (static_cast<double>(n * shift) / subcarriers +
                                               static_cast<double>(t * cover) / symbols));
        std::vector<int> act(static_cast<std::size_t>(subcarriers));
        std::iota(act.begin(), act.end(), 0);
        plan.pilots.push_back(std::move(s));
        plan.active.push_back(std::move(act));
        plan.taps.push_back(taps);
        plan.power.push_back(power);
    }
    plan.validate();
    return plan;
}

/// A_k = sqrt(P_k) S~_k F_N Psi_k, (N tau_p) x L_k.
inline CMat build_observation_matrix(const PilotPlan& plan, int k)
{
    if (k < 0 || k >= plan.num_ues()) throw Error("dimension mismatch: unknown UE");
    const int N = plan.subcarriers;
    const int L = plan.taps[k];
    const CMat f_psi = dft_matrix(N).leftCols(L);
    return std::sqrt(plan.power[k]) * plan.stacked_pilots(k) * f_psi;
}

/// Frequency-domain training observation at one AP.
struct PilotObservation {
    CMat y;                     // Y_m, N x tau_p
    double noise = 0.0;         // sigma^2
    double interference = 0.0;  // sigma_J^2

    CVec vec() const { return Eigen::Map<const CVec>(y.data(), y.size()); }
};

/// sigma_J^2 for AP m: aggregate per-subcarrier power of the UEs it does not serve.
inline double default_interference(const ChannelRealization& ch, const AssociationMap& assoc,
                                   const PilotPlan& plan, int m)
{
    double s = 0.0;
    for (int l = 0; l < ch.num_ues(); ++l)
        if (!assoc.contains(m, l)) s += ch.gain(m, l) * plan.power[l];
    return s;
}

/// Y_m = sum_{k in K_m} sqrt(P_k) diag(F Psi h_mk) Phi_k S_k + J_m + N_m, one per AP.
/// interference[m] < 0 selects the topology-derived default.
inline std::vector<PilotObservation> simulate_pilot_rx(const PilotPlan& plan, const ChannelRealization& ch,
                                                       const AssociationMap& assoc, double noise, Rng& rng,
                                                       std::vector<double> interference = {})
{
    plan.validate();
    const int M = ch.num_aps();
    const int N = plan.subcarriers;
    if (ch.subcarriers != N) throw Error("dimension mismatch: subcarrier count");
    if (interference.empty()) interference.assign(static_cast<std::size_t>(M), -1.0);
    std::vector<PilotObservation> out(static_cast<std::size_t>(M));
    for (int m = 0; m < M; ++m) {
        auto& o = out[m];
        o.noise = noise;
        o.interference = interference[m] >= 0.0 ? interference[m] : default_interference(ch, assoc, plan, m);
        o.y = CMat::Zero(N, plan.symbols);
        for (int k : assoc.ues_of_ap[m]) {
            const CVec hf = subcarrier_gains(ch.cir(m, k), 1.0, N);
            const double amp = std::sqrt(plan.power[k]);
            for (std::size_t i = 0; i < plan.active[k].size(); ++i) {
                const int n = plan.active[k][i];
                o.y.row(n) += amp * hf(n) * plan.pilots[k].row(static_cast<Eigen::Index>(i));
            }
        }
        const double v = o.noise + o.interference;
        if (v > 0.0) o.y += complex_normal_mat(rng, N, plan.symbols, v);
    }
    return out;
}

/// R_m = [Y_m extra][Y_m extra]^H / (number of columns).
inline CMat sample_autocorrelation(const CMat& y, const CMat& extra = CMat())
{
    if (y.cols() < 1) throw Error("need at least one observation column");
    if (extra.size() > 0 && extra.rows() != y.rows()) throw Error("dimension mismatch: extra observations");
    CMat all(y.rows(), y.cols() + extra.cols());
    all << y, extra;
    return all * all.adjoint() / static_cast<double>(all.cols());
}

/// Y'_m = a_cm Y_m, the observation as seen by the CPU.
inline CMat cpu_forward(const CMat& y, cd gain)
{
    if (gain == cd(0.0)) throw Error("dead backhaul");
    return gain * y;
}

enum class EstimationMode { Single, MuiSuppress, SampleCovariance };

/// Everything the estimator needs about AP m's training. Priors are indexed by
/// UE; only UEs in co_ues (K_m) enter the MUI-suppressing bracket.
struct EstimatorContext {
    const PilotPlan* plan = nullptr;
    std::vector<int> co_ues;
    std::function<CMat(int)> prior;     // Q_ml
    double noise = 0.0;                 // sigma^2
    double interference = 0.0;          // sigma_J^2
    cd forward_gain = 1.0;              // a_cm of the observation being processed
    CMat autocorrelation;               // R_m, SampleCovariance mode only
};

/// h^_mk = C^-1 Q^H A^H B^-1 y with C = diag(Q^H A^H B^-1 A) (per-tap unbiased).
inline CVec mmse_estimate(const CVec& y, int k, const EstimatorContext& ctx, EstimationMode mode)
{
    const PilotPlan& plan = *ctx.plan;
    const auto dim = static_cast<Eigen::Index>(plan.subcarriers) * plan.symbols;
    if (y.size() != dim) throw Error("dimension mismatch: observation length");
    const cd a = ctx.forward_gain;
    if (a == cd(0.0)) throw Error("dead backhaul");
    const CMat A = a * build_observation_matrix(plan, k);
    const CMat Q = ctx.prior(k);
    if (Q.rows() != A.cols() || Q.cols() != A.cols()) throw Error("dimension mismatch: prior");

    CMat B(dim, dim);
    switch (mode) {
    case EstimationMode::Single:
        B = A * Q * A.adjoint();
        B.diagonal().array() += std::norm(a) * (ctx.noise + ctx.interference);
        break;
    case EstimationMode::MuiSuppress:
        B = CMat::Zero(dim, dim);
        for (int l : ctx.co_ues) {
            const CMat Al = a * build_observation_matrix(plan, l);
            B += Al * ctx.prior(l) * Al.adjoint();
        }
        if (std::find(ctx.co_ues.begin(), ctx.co_ues.end(), k) == ctx.co_ues.end()) B += A * Q * A.adjoint();
        B.diagonal().array() += std::norm(a) * (ctx.noise + ctx.interference);
        break;
    case EstimationMode::SampleCovariance: {
        const CMat& R = ctx.autocorrelation;
        const int N = plan.subcarriers;
        if (R.rows() != N || R.cols() != N) throw Error("dimension mismatch: autocorrelation");
        B = CMat::Zero(dim, dim);
        for (int t = 0; t < plan.symbols; ++t) B.block(static_cast<Eigen::Index>(t) * N, static_cast<Eigen::Index>(t) * N, N, N) = R;
        break;
    }
    }

    const CMat Z = solve_hermitian(B, A, "ill-conditioned training");  // B^-1 A
    const CMat G = Q.adjoint() * Z.adjoint();                            // Q^H A^H B^-1
    const CVec c = (G * A).diagonal();
    const double scale = std::max(1e-300, c.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < c.size(); ++i)
        if (!(std::abs(c(i)) > 1e-14 * scale) || !std::isfinite(std::abs(c(i))))
            throw Error("degenerate prior: estimator gain not invertible");
    return (G * y).cwiseQuotient(c);
}

/// Genie prior Q_mk = g_mk diag(pdp_mk).
inline std::function<CMat(int)> genie_prior(const ChannelRealization& ch, int m)
{
    return [&ch, m](int k) -> CMat { return (ch.gain(m, k) * ch.pdp[m][k]).cast<cd>().asDiagonal(); };
}

/// Estimates every associated link; non-associated entries stay empty.
inline std::vector<std::vector<CVec>> estimate_channels(const std::vector<PilotObservation>& obs,
                                                        const PilotPlan& plan, const ChannelRealization& ch,
                                                        const AssociationMap& assoc, EstimationMode mode)
{
    const int M = ch.num_aps();
    std::vector<std::vector<CVec>> est(static_cast<std::size_t>(M), std::vector<CVec>(static_cast<std::size_t>(ch.num_ues())));
    for (int m = 0; m < M; ++m) {
        if (assoc.ues_of_ap[m].empty()) continue;
        EstimatorContext ctx;
        ctx.plan = &plan;
        ctx.co_ues = assoc.ues_of_ap[m];
        ctx.prior = genie_prior(ch, m);
        ctx.noise = obs[m].noise;
        ctx.interference = obs[m].interference;
        if (mode == EstimationMode::SampleCovariance) ctx.autocorrelation = sample_autocorrelation(obs[m].y);
        const CVec y = obs[m].vec();
        for (int k : assoc.ues_of_ap[m]) est[m][k] = mmse_estimate(y, k, ctx, mode);
    }
    return est;
}

/// Normalized squared error ||h^ - h||^2 / ||h||^2 summed over estimated links.
inline double estimation_nmse(const std::vector<std::vector<CVec>>& est, const ChannelRealization& ch)
{
    double err = 0.0, ref = 0.0;
    for (int m = 0; m < ch.num_aps(); ++m)
        for (int k = 0; k < ch.num_ues(); ++k) {
            if (est[m][k].size() == 0) continue;
            const CVec h = ch.cir(m, k);
            err += (est[m][k] - h).squaredNorm();
            ref += h.squaredNorm();
        }
    return ref > 0.0 ? err / ref : 0.0;
}

}  // namespace uccf
