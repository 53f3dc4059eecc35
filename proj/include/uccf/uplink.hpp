#pragma once

// Uplink detection: global MMSE (joint and per subcarrier), the local-MMSE
// family (column-sliced, reduced-dimension, per-AP with CPU combining),
// analytic and empirical SINR, and sum-rate.

#include "uccf/channel.hpp"
#include "uccf/core.hpp"
#include "uccf/modulation.hpp"
#include "uccf/topology.hpp"

#include <optional>

namespace uccf {

/// Stacked UL model y = sum_k H_k Phi_k eta_k^{1/2} x_k + n, n ~ CN(0, gamma_u^-1 I_MN).
/// Rows of H_k are ordered AP-major: row m*N + n is subcarrier n at AP m.
struct UplinkScene {
    int num_aps = 0;                             // M
    int subcarriers = 0;                         // N
    std::vector<CMat> channels;                  // H_k, MN x N
    std::vector<std::vector<int>> assigned;      // Phi_k as ascending subcarrier indices
    std::vector<RVec> power;                     // diag(eta_k), length N_k
    double snr = 1.0;                            // gamma_u

    int num_ues() const { return static_cast<int>(channels.size()); }
    Eigen::Index dim() const { return static_cast<Eigen::Index>(num_aps) * subcarriers; }
    double noise() const { return 1.0 / snr; }
    int symbols(int k) const { return static_cast<int>(assigned[k].size()); }

    void validate() const
    {
        if (num_aps < 1 || subcarriers < 1) throw Error("uplink scene needs M >= 1 and N >= 1");
        if (!(snr > 0.0)) throw Error("uplink SNR must be positive");
        const auto K = channels.size();
        if (assigned.size() != K || power.size() != K) throw Error("uplink scene size mismatch");
        for (std::size_t k = 0; k < K; ++k) {
            if (channels[k].rows() != dim() || channels[k].cols() != subcarriers)
                throw Error("uplink channel dimension mismatch");
            if (power[k].size() != static_cast<Eigen::Index>(assigned[k].size()))
                throw Error("uplink power dimension mismatch");
            for (std::size_t i = 0; i < assigned[k].size(); ++i) {
                if (assigned[k][i] < 0 || assigned[k][i] >= subcarriers) throw Error("subcarrier out of range");
                if (i > 0 && assigned[k][i] <= assigned[k][i - 1]) throw Error("subcarriers must be distinct");
            }
            if ((power[k].array() < 0.0).any()) throw Error("negative power coefficient");
            if (power[k].sum() > 1.0 + 1e-12) throw Error("per-UE power budget exceeded");
        }
    }

    /// Phi_k, N x N_k.
    CMat phi(int k) const
    {
        CMat p = CMat::Zero(subcarriers, symbols(k));
        for (int i = 0; i < symbols(k); ++i) p(assigned[k][i], i) = 1.0;
        return p;
    }

    /// H_k phi_ki: the MN-vector carrying symbol i of UE k.
    CVec column(int k, int i) const { return channels[k].col(assigned[k][i]); }

    /// H_k Phi_k eta_k^{1/2}, MN x N_k.
    CMat effective(int k) const
    {
        CMat e(dim(), symbols(k));
        for (int i = 0; i < symbols(k); ++i) e.col(i) = std::sqrt(power[k](i)) * column(k, i);
        return e;
    }

    /// True when every H_mk block is diagonal.
    bool ici_free() const
    {
        for (const auto& h : channels)
            for (int m = 0; m < num_aps; ++m) {
                const auto blk = h.block(static_cast<Eigen::Index>(m) * subcarriers, 0, subcarriers, subcarriers);
                for (int r = 0; r < subcarriers; ++r)
                    for (int c = 0; c < subcarriers; ++c)
                        if (r != c && blk(r, c) != cd(0.0)) return false;
            }
        return true;
    }

    /// h_{mn,k}: scalar gain of UE k on subcarrier n at AP m (ICI-free scenes).
    cd gain(int m, int n, int k) const
    {
        return channels[k](static_cast<Eigen::Index>(m) * subcarriers + n, n);
    }

    /// eta_kn on subcarrier n, 0 when the subcarrier is not assigned.
    double power_on(int k, int n) const
    {
        for (int i = 0; i < symbols(k); ++i)
            if (assigned[k][i] == n) return power[k](i);
        return 0.0;
    }

    int symbol_index(int k, int n) const
    {
        for (int i = 0; i < symbols(k); ++i)
            if (assigned[k][i] == n) return i;
        return -1;
    }
};

/// Builds an ICI-free scene from per-link subcarrier gains (freq[m][k], length N),
/// a K x N assignment matrix delta and a K x N power matrix eta.
inline UplinkScene make_uplink_scene(const std::vector<std::vector<CVec>>& freq, double snr, const RMat& delta,
                                     const RMat& eta)
{
    UplinkScene s;
    s.num_aps = static_cast<int>(freq.size());
    const int K = s.num_aps > 0 ? static_cast<int>(freq[0].size()) : 0;
    s.subcarriers = K > 0 ? static_cast<int>(freq[0][0].size()) : 0;
    s.snr = snr;
    if (delta.rows() != K || eta.rows() != K || delta.cols() != s.subcarriers || eta.cols() != s.subcarriers)
        throw Error("allocation matrix dimension mismatch");
    const int N = s.subcarriers;
    for (int k = 0; k < K; ++k) {
        CMat h = CMat::Zero(s.dim(), N);
        for (int m = 0; m < s.num_aps; ++m)
            for (int n = 0; n < N; ++n) h(static_cast<Eigen::Index>(m) * N + n, n) = freq[m][k](n);
        s.channels.push_back(std::move(h));
        std::vector<int> idx;
        std::vector<double> p;
        for (int n = 0; n < N; ++n)
            if (delta(k, n) != 0.0) {
                idx.push_back(n);
                p.push_back(eta(k, n));
            }
        s.assigned.push_back(idx);
        s.power.push_back(Eigen::Map<RVec>(p.data(), static_cast<Eigen::Index>(p.size())));
    }
    s.validate();
    return s;
}

/// R_y = sum_k H_k Phi_k eta_k Phi_k^T H_k^H + gamma_u^-1 I.
inline CMat uplink_covariance(const UplinkScene& s)
{
    CMat r = CMat::Zero(s.dim(), s.dim());
    for (int k = 0; k < s.num_ues(); ++k) {
        const CMat e = s.effective(k);
        r.noalias() += e * e.adjoint();
    }
    r.diagonal().array() += s.noise();
    return r;
}

/// W_k = R_y^-1 H_k Phi_k eta_k^{1/2} for every UE.
inline std::vector<CMat> gmmse_weights(const UplinkScene& s)
{
    s.validate();
    const CMat r = uplink_covariance(s);
    Eigen::LLT<CMat> llt(r);
    if (llt.info() != Eigen::Success) throw Error("uplink covariance not positive definite");
    std::vector<CMat> w;
    w.reserve(static_cast<std::size_t>(s.num_ues()));
    for (int k = 0; k < s.num_ues(); ++k) w.push_back(llt.solve(s.effective(k)));
    return w;
}

struct PerSubcarrierWeights {
    std::vector<CMat> per_ue;            // same layout as gmmse_weights
    std::vector<CMat> per_subcarrier;    // [n]: M x K, column k is UE k's weight on n (zero if unassigned)
};

/// N independent M-dimensional MMSE solves; requires an ICI-free scene.
inline PerSubcarrierWeights gmmse_per_subcarrier(const UplinkScene& s)
{
    s.validate();
    if (!s.ici_free()) throw Error("per-subcarrier GMMSE requires an ICI-free scene");
    const int M = s.num_aps, N = s.subcarriers, K = s.num_ues();
    PerSubcarrierWeights out;
    for (int k = 0; k < K; ++k) out.per_ue.push_back(CMat::Zero(s.dim(), s.symbols(k)));
    for (int n = 0; n < N; ++n) {
        CMat h = CMat::Zero(M, K);  // columns sqrt(eta_kn) h_{.n,k}
        for (int k = 0; k < K; ++k) {
            const double eta = s.power_on(k, n);
            if (s.symbol_index(k, n) < 0) continue;
            for (int m = 0; m < M; ++m) h(m, k) = std::sqrt(eta) * s.gain(m, n, k);
        }
        CMat r = h * h.adjoint();
        r.diagonal().array() += s.noise();
        CMat w = solve_hermitian(r, h);
        for (int k = 0; k < K; ++k) {
            const int i = s.symbol_index(k, n);
            if (i < 0) {
                w.col(k).setZero();
                continue;
            }
            for (int m = 0; m < M; ++m) out.per_ue[k](static_cast<Eigen::Index>(m) * N + n, i) = w(m, k);
        }
        out.per_subcarrier.push_back(std::move(w));
    }
    return out;
}

/// Cholesky flop estimate (n^3 / 3) for the joint solve or N per-subcarrier solves.
inline double gmmse_flops(int num_aps, int subcarriers, bool joint)
{
    const double M = num_aps, N = subcarriers;
    return joint ? std::pow(M * N, 3) / 3.0 : N * std::pow(M, 3) / 3.0;
}

/// Analytic MMSE SINR of symbol i of UE k:
/// eta_ki phi^H H_k^H R_ki^-1 H_k phi with R_ki = R_y - eta_ki H_k phi phi^T H_k^H.
inline double uplink_sinr(const UplinkScene& s, int k, int i)
{
    const CVec a = s.column(k, i);
    const double eta = s.power[k](i);
    CMat rki = uplink_covariance(s);
    rki.noalias() -= eta * a * a.adjoint();
    const CVec x = solve_hermitian(rki, a);
    return std::max(0.0, eta * a.dot(x).real());
}

/// All GMMSE SINRs through one factorization of R_y (rank-one downdate identity
/// gamma = t / (1 - t), t = eta a^H R_y^-1 a).
inline std::vector<RVec> uplink_sinrs(const UplinkScene& s)
{
    const CMat r = uplink_covariance(s);
    Eigen::LLT<CMat> llt(r);
    if (llt.info() != Eigen::Success) throw Error("uplink covariance not positive definite");
    std::vector<RVec> out;
    for (int k = 0; k < s.num_ues(); ++k) {
        RVec g(s.symbols(k));
        for (int i = 0; i < s.symbols(k); ++i) {
            const CVec a = s.column(k, i);
            const double t = s.power[k](i) * a.dot(llt.solve(a)).real();
            g(i) = t < 1.0 ? std::max(0.0, t / (1.0 - t)) : std::numeric_limits<double>::infinity();
        }
        out.push_back(std::move(g));
    }
    return out;
}

/// Output SINR of an arbitrary linear weight w applied to y for symbol i of UE k,
/// with all interference physically present.
inline double output_sinr(const UplinkScene& s, const CMat& ry, int k, int i, const CVec& w)
{
    const double sig = s.power[k](i) * std::norm(w.dot(s.column(k, i)));
    const double total = w.dot(ry * w).real();
    const double inn = total - sig;
    if (!(inn > 0.0)) return sig > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    return sig / inn;
}

/// Per-symbol output SINRs for a full set of weight matrices (MN x N_k each).
inline std::vector<RVec> output_sinrs(const UplinkScene& s, const std::vector<CMat>& weights)
{
    const CMat ry = uplink_covariance(s);
    std::vector<RVec> out;
    for (int k = 0; k < s.num_ues(); ++k) {
        RVec g = RVec::Zero(s.symbols(k));
        for (int i = 0; i < s.symbols(k); ++i)
            if (weights[k].size() > 0 && weights[k].col(i).squaredNorm() > 0.0)
                g(i) = output_sinr(s, ry, k, i, weights[k].col(i));
        out.push_back(std::move(g));
    }
    return out;
}

/// R = sum over UEs and symbols of log2(1 + gamma).
inline double sum_rate(const std::vector<RVec>& sinr)
{
    double r = 0.0;
    for (const auto& g : sinr)
        for (Eigen::Index i = 0; i < g.size(); ++i) r += std::log2(1.0 + g(i));
    return r;
}

inline double uplink_sum_rate(const UplinkScene& s) { return sum_rate(uplink_sinrs(s)); }

/// R_y = (1/U) sum_u y(u) y(u)^H from U simulated observation vectors.
inline CMat sample_uplink_covariance(const UplinkScene& s, int observations, Rng& rng)
{
    if (observations < 1) throw Error("need at least one observation");
    CMat acc = CMat::Zero(s.dim(), s.dim());
    for (int u = 0; u < observations; ++u) {
        CVec y = complex_normal_vec(rng, s.dim(), s.noise());
        for (int k = 0; k < s.num_ues(); ++k) y += s.effective(k) * complex_normal_vec(rng, s.symbols(k));
        acc.noalias() += y * y.adjoint();
    }
    return acc / static_cast<double>(observations);
}

/// W_k ~= sum_{m in M_k} Q_m H_mk Phi_k eta_k^{1/2}, with R_y^-1 = [Q_1 ... Q_M].
/// Uses the analytic R_y unless a sample estimate is supplied.
inline std::vector<CMat> lmmse_column_sliced(const UplinkScene& s, const AssociationMap& assoc,
                                             const CMat* sample_covariance = nullptr)
{
    s.validate();
    const int N = s.subcarriers;
    const CMat ry = sample_covariance ? *sample_covariance : uplink_covariance(s);
    const CMat rinv = solve_hermitian(ry, CMat(CMat::Identity(s.dim(), s.dim())));
    std::vector<CMat> w;
    for (int k = 0; k < s.num_ues(); ++k) {
        const CMat e = s.effective(k);
        CMat wk = CMat::Zero(s.dim(), s.symbols(k));
        for (int m : assoc.aps_of_ue[k]) {
            const Eigen::Index off = static_cast<Eigen::Index>(m) * N;
            wk.noalias() += rinv.middleCols(off, N) * e.middleRows(off, N);
        }
        w.push_back(std::move(wk));
    }
    return w;
}

/// GMMSE restricted to the observations of the APs in M_k; returned embedded in
/// the full MN row space (zero rows for the other APs).
inline CMat lmmse_reduced(const UplinkScene& s, const AssociationMap& assoc, int k)
{
    const auto& aps = assoc.aps_of_ue.at(k);
    if (aps.empty()) throw Error("unassociated UE");
    const int N = s.subcarriers;
    const Eigen::Index d = static_cast<Eigen::Index>(aps.size()) * N;
    auto restrict = [&](const CMat& full) {
        CMat r(d, full.cols());
        for (std::size_t j = 0; j < aps.size(); ++j)
            r.middleRows(static_cast<Eigen::Index>(j) * N, N) = full.middleRows(static_cast<Eigen::Index>(aps[j]) * N, N);
        return r;
    };
    CMat r = CMat::Zero(d, d);
    for (int l = 0; l < s.num_ues(); ++l) {
        const CMat e = restrict(s.effective(l));
        r.noalias() += e * e.adjoint();
    }
    r.diagonal().array() += s.noise();
    const CMat wsub = solve_hermitian(r, restrict(s.effective(k)));
    CMat w = CMat::Zero(s.dim(), s.symbols(k));
    for (std::size_t j = 0; j < aps.size(); ++j)
        w.middleRows(static_cast<Eigen::Index>(aps[j]) * N, N) = wsub.middleRows(static_cast<Eigen::Index>(j) * N, N);
    return w;
}

/// AP m's local covariance sum_l H_ml Phi_l eta_l Phi_l^T H_ml^H + gamma_u^-1 I_N.
inline CMat local_covariance(const UplinkScene& s, int m)
{
    const int N = s.subcarriers;
    CMat r = CMat::Zero(N, N);
    for (int l = 0; l < s.num_ues(); ++l) {
        const CMat e = s.effective(l).middleRows(static_cast<Eigen::Index>(m) * N, N);
        r.noalias() += e * e.adjoint();
    }
    r.diagonal().array() += s.noise();
    return r;
}

/// W_mk = R_m^-1 H_mk Phi_k eta_k^{1/2}, N x N_k.
inline CMat local_ap_weights(const UplinkScene& s, const AssociationMap& assoc, int m, int k)
{
    if (!assoc.contains(m, k)) throw Error("AP does not serve this UE");
    const int N = s.subcarriers;
    return solve_hermitian(local_covariance(s, m), CMat(s.effective(k).middleRows(static_cast<Eigen::Index>(m) * N, N)));
}

/// z_mk = W_mk^H y_m.
inline CVec local_ap_estimate(const UplinkScene& s, const AssociationMap& assoc, int m, int k, const CVec& y_m)
{
    return local_ap_weights(s, assoc, m, k).adjoint() * y_m;
}

/// z_mk = A_mk x_k + interference + noise; C_mk is the interference-plus-noise covariance.
struct LocalDecomposition {
    CMat gain;        // A_mk, N_k x N_k
    CMat covariance;  // C_mk, N_k x N_k
};

inline LocalDecomposition local_decomposition(const UplinkScene& s, const AssociationMap& assoc, int m, int k)
{
    const int N = s.subcarriers;
    const CMat w = local_ap_weights(s, assoc, m, k);
    LocalDecomposition d;
    d.gain = w.adjoint() * s.effective(k).middleRows(static_cast<Eigen::Index>(m) * N, N);
    d.covariance = w.adjoint() * local_covariance(s, m) * w - d.gain * d.gain.adjoint();
    return d;
}

enum class Combining { Equal, Mrc, LargeScaleLinear, LargeScaleSqrt };

/// What the CPU knows about each z_mk, aligned with the z list.
struct CombiningSideInfo {
    std::vector<LocalDecomposition> local;  // required for Mrc
    std::vector<double> large_scale;        // g_mk, required for the large-scale modes
};

/// Lambda_mk for every AP in the list, N_k x N_k each.
inline std::vector<CMat> combining_matrices(std::size_t aps, int symbols, Combining mode, const CombiningSideInfo& info)
{
    if (aps == 0) throw Error("combining needs a nonempty AP set");
    const double inv = 1.0 / static_cast<double>(aps);
    std::vector<CMat> lambda;
    const CMat eye = CMat::Identity(symbols, symbols);
    switch (mode) {
    case Combining::Equal:
        lambda.assign(aps, eye * inv);
        break;
    case Combining::Mrc:
        if (info.local.size() != aps) throw Error("MRC combining needs A_mk and C_mk side information");
        for (const auto& d : info.local) lambda.push_back(solve_hermitian(d.covariance, CMat(d.gain.adjoint())) * inv);
        break;
    case Combining::LargeScaleLinear:
    case Combining::LargeScaleSqrt: {
        if (info.large_scale.size() != aps) throw Error("large-scale combining needs g_mk side information");
        std::vector<double> w;
        for (double g : info.large_scale) w.push_back(mode == Combining::LargeScaleSqrt ? std::sqrt(g) : g);
        double total = 0.0;
        for (double v : w) total += v;
        if (!(total > 0.0)) throw Error("large-scale combining needs positive gains");
        for (double v : w) lambda.push_back(eye * (v / total));
        break;
    }
    }
    return lambda;
}

/// z_k = sum_m Lambda_mk z_mk.
inline CVec cpu_combine(const std::vector<CVec>& z, Combining mode, const CombiningSideInfo& info)
{
    if (z.empty()) throw Error("combining needs a nonempty AP set");
    const auto lambda = combining_matrices(z.size(), static_cast<int>(z.front().size()), mode, info);
    CVec out = CVec::Zero(z.front().size());
    for (std::size_t j = 0; j < z.size(); ++j) out += lambda[j] * z[j];
    return out;
}

/// Side information the genie CPU has for UE k.
inline CombiningSideInfo combining_side_info(const UplinkScene& s, const AssociationMap& assoc, const RMat& gain, int k)
{
    CombiningSideInfo info;
    for (int m : assoc.aps_of_ue.at(k)) {
        info.local.push_back(local_decomposition(s, assoc, m, k));
        info.large_scale.push_back(gain(m, k));
    }
    return info;
}

/// Equivalent MN x N_k weight of local estimation followed by CPU combining,
/// so that z_k = W^H y.
inline CMat combined_weights(const UplinkScene& s, const AssociationMap& assoc, const RMat& gain, int k, Combining mode)
{
    const auto& aps = assoc.aps_of_ue.at(k);
    if (aps.empty()) throw Error("unassociated UE");
    const int N = s.subcarriers;
    const auto lambda = combining_matrices(aps.size(), s.symbols(k), mode, combining_side_info(s, assoc, gain, k));
    CMat w = CMat::Zero(s.dim(), s.symbols(k));
    for (std::size_t j = 0; j < aps.size(); ++j)
        w.middleRows(static_cast<Eigen::Index>(aps[j]) * N, N) = local_ap_weights(s, assoc, aps[j], k) * lambda[j].adjoint();
    return w;
}

/// One block of simulated UL transmissions.
struct UplinkBlock {
    std::vector<std::vector<std::vector<int>>> symbols;  // [u][k][i] constellation index
    std::vector<CVec> y;                                 // [u] MN observation
};

inline UplinkBlock simulate_uplink(const UplinkScene& s, int blocks, Constellation c, Rng& rng)
{
    const auto pts = points(c);
    std::vector<CMat> eff;
    for (int k = 0; k < s.num_ues(); ++k) eff.push_back(s.effective(k));
    UplinkBlock b;
    for (int u = 0; u < blocks; ++u) {
        CVec y = complex_normal_vec(rng, s.dim(), s.noise());
        std::vector<std::vector<int>> sym(static_cast<std::size_t>(s.num_ues()));
        for (int k = 0; k < s.num_ues(); ++k) {
            CVec x(s.symbols(k));
            for (int i = 0; i < s.symbols(k); ++i) {
                const int q = random_symbol(c, rng);
                sym[k].push_back(q);
                x(i) = pts[q];
            }
            y.noalias() += eff[k] * x;
        }
        b.symbols.push_back(std::move(sym));
        b.y.push_back(std::move(y));
    }
    return b;
}

struct EmpiricalDetection {
    std::vector<RVec> sinr;  // measured signal / (interference + noise) per symbol
    long symbol_errors = 0;
    long bit_errors = 0;
    long symbols = 0;
};

/// Applies x^_k = W_k^H y to every block, measures output SINR against the known
/// desired component and counts hard-decision errors.
inline EmpiricalDetection measure_detection(const UplinkScene& s, const std::vector<CMat>& weights,
                                            const UplinkBlock& blk, Constellation c)
{
    const auto pts = points(c);
    EmpiricalDetection r;
    for (int k = 0; k < s.num_ues(); ++k) {
        const int nk = s.symbols(k);
        RVec sig = RVec::Zero(nk), err = RVec::Zero(nk);
        if (weights[k].size() == 0) {
            r.sinr.push_back(sig);
            continue;
        }
        const CVec gain = (weights[k].adjoint() * s.effective(k)).diagonal();
        for (std::size_t u = 0; u < blk.y.size(); ++u) {
            const CVec xh = weights[k].adjoint() * blk.y[u];
            for (int i = 0; i < nk; ++i) {
                const int q = blk.symbols[u][k][i];
                const cd desired = gain(i) * pts[q];
                sig(i) += std::norm(desired);
                err(i) += std::norm(xh(i) - desired);
                const int dec = gain(i) != cd(0.0) ? nearest_point(c, xh(i) / gain(i)) : 0;
                r.symbol_errors += dec != q;
                r.bit_errors += bit_errors(dec, q);
                ++r.symbols;
            }
        }
        r.sinr.push_back(sig.cwiseQuotient(err.cwiseMax(1e-300)));
    }
    return r;
}

}  // namespace uccf
