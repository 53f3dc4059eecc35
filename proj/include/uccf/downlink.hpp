#pragma once

// Downlink precoding: centralized TMMSE (subcarrier and OFDM-symbol level),
// the common amplification gain A0, distributed MF / TZF / regularized MMSE,
// artificial-noise secrecy, and DL SINR / sum-rate.
//
// Conventions: received signal at UE k is y_k = A0 h_k^T sum_l p_l x_l + n_k
// (A0 applied once), symbols unit power, n_k ~ CN(0, sigma^2).

#include "uccf/core.hpp"
#include "uccf/modulation.hpp"
#include "uccf/topology.hpp"
#include "uccf/uplink.hpp"

#include <optional>

namespace uccf {

// ---------------------------------------------------------------- subcarrier level

/// h (M x K, column k = h_k) with entries of unassociated APs set to zero.
inline CMat mask_channels(const CMat& h, const AssociationMap& assoc)
{
    CMat out = CMat::Zero(h.rows(), h.cols());
    for (int k = 0; k < h.cols(); ++k)
        for (int m : assoc.aps_of_ue.at(k)) out(m, k) = h(m, k);
    return out;
}

/// R_y^* = sum_l h_l^* h_l^T + sigma^2 I.
inline CMat dl_covariance_conj(const CMat& h, double noise)
{
    CMat r = h.conjugate() * h.transpose();
    r.diagonal().array() += noise;
    return r;
}

/// Column k: p_k = sqrt(Delta_k) (R_y^*)^-1 h_k^*. With an association map,
/// only the associated entries of each h_k are known to the CPU.
inline CMat tmmse_central_subcarrier(const CMat& h, double noise, const RVec& delta,
                                     const AssociationMap* assoc = nullptr)
{
    if (!(noise > 0.0)) throw Error("noise variance must be positive");
    if (delta.size() != h.cols()) throw Error("one power coefficient per UE required");
    const CMat hk = assoc ? mask_channels(h, *assoc) : h;
    CMat p = solve_hermitian(dl_covariance_conj(hk, noise), CMat(hk.conjugate()));
    for (int k = 0; k < p.cols(); ++k) p.col(k) *= std::sqrt(delta(k));
    return p;
}

/// SINR of UE k with precoders P (M x K), true channels h.
inline double dl_sinr_subcarrier(const CMat& h, const CMat& p, double a0, double noise, int k)
{
    const CVec g = h.col(k).transpose() * p;  // h_k^T p_l for every l
    const double desired = std::norm(g(k));
    const double mui = g.squaredNorm() - desired;
    return desired / (mui + noise / (a0 * a0));
}

inline RVec dl_sinrs_subcarrier(const CMat& h, const CMat& p, double a0, double noise)
{
    RVec out(h.cols());
    for (int k = 0; k < h.cols(); ++k) out(k) = dl_sinr_subcarrier(h, p, a0, noise, k);
    return out;
}

// ---------------------------------------------------------------- OFDM level

/// DL counterpart of the stacked model: H_k (MN x N, AP-major rows), Phi_k, and
/// diagonal power coefficients Delta_k (length N_k).
struct DownlinkScene {
    int num_aps = 0;
    int subcarriers = 0;
    std::vector<CMat> channels;
    std::vector<std::vector<int>> assigned;
    std::vector<RVec> delta;
    double noise = 1.0;  // sigma^2

    int num_ues() const { return static_cast<int>(channels.size()); }
    Eigen::Index dim() const { return static_cast<Eigen::Index>(num_aps) * subcarriers; }
    int symbols(int k) const { return static_cast<int>(assigned[k].size()); }
    CVec column(int k, int i) const { return channels[k].col(assigned[k][i]); }

    double delta_total() const
    {
        double t = 0.0;
        for (const auto& d : delta) t += d.sum();
        return t;
    }

    void validate() const
    {
        if (num_aps < 1 || subcarriers < 1) throw Error("downlink scene needs M >= 1 and N >= 1");
        if (!(noise > 0.0)) throw Error("noise variance must be positive");
        const auto K = channels.size();
        if (assigned.size() != K || delta.size() != K) throw Error("downlink scene size mismatch");
        for (std::size_t k = 0; k < K; ++k) {
            if (channels[k].rows() != dim() || channels[k].cols() != subcarriers)
                throw Error("downlink channel dimension mismatch");
            if (delta[k].size() != static_cast<Eigen::Index>(assigned[k].size()))
                throw Error("downlink power dimension mismatch");
            if ((delta[k].array() < 0.0).any()) throw Error("negative power coefficient");
        }
        if (delta_total() > 1.0 + 1e-12) throw Error("power coefficients exceed unit budget");
    }
};

/// Reuses the layout of an uplink scene; delta holds DL coefficients per assigned symbol.
inline DownlinkScene downlink_from(const UplinkScene& s, const std::vector<RVec>& delta, double noise)
{
    DownlinkScene d{s.num_aps, s.subcarriers, s.channels, s.assigned, delta, noise};
    d.validate();
    return d;
}

/// CPU view of the scene: rows of H_k belonging to APs outside M_k zeroed.
inline DownlinkScene mask_channels(DownlinkScene s, const AssociationMap& assoc)
{
    const Eigen::Index N = s.subcarriers;
    for (int k = 0; k < s.num_ues(); ++k)
        for (int m = 0; m < s.num_aps; ++m)
            if (!assoc.contains(m, k)) s.channels[k].middleRows(m * N, N).setZero();
    return s;
}

/// P_k = (R~_y^*)^-1 H_k^* Phi_k Delta_k^{1/2}, MN x N_k.
inline std::vector<CMat> tmmse_central_ofdm(const DownlinkScene& s)
{
    s.validate();
    CMat r = CMat::Zero(s.dim(), s.dim());
    for (int l = 0; l < s.num_ues(); ++l)
        for (int n : s.assigned[l]) {
            const CVec c = s.channels[l].col(n).conjugate();
            r.noalias() += c * c.adjoint();
        }
    r.diagonal().array() += s.noise;
    CMat rhs(s.dim(), 0);
    std::vector<Eigen::Index> offset;
    for (int k = 0; k < s.num_ues(); ++k) {
        offset.push_back(rhs.cols());
        rhs.conservativeResize(Eigen::NoChange, rhs.cols() + s.symbols(k));
        for (int i = 0; i < s.symbols(k); ++i) rhs.col(offset[k] + i) = std::sqrt(s.delta[k](i)) * s.column(k, i).conjugate();
    }
    const CMat all = solve_hermitian(r, rhs);
    std::vector<CMat> p;
    for (int k = 0; k < s.num_ues(); ++k) p.push_back(all.middleCols(offset[k], s.symbols(k)));
    return p;
}

/// SINR of symbol i of UE k: intra-UE cross-subcarrier leakage plus inter-UE
/// interference plus noise / A0^2.
inline double dl_sinr(const DownlinkScene& s, const std::vector<CMat>& p, double a0, int k, int i)
{
    const CVec h = s.column(k, i);
    double desired = 0.0, interference = 0.0;
    for (int l = 0; l < s.num_ues(); ++l) {
        const CVec g = p[l].transpose() * h;  // h^T P_l phi_lj for every j
        for (int j = 0; j < g.size(); ++j) {
            if (l == k && j == i) desired = std::norm(g(j));
            else interference += std::norm(g(j));
        }
    }
    return desired / (interference + s.noise / (a0 * a0));
}

inline std::vector<RVec> dl_sinrs(const DownlinkScene& s, const std::vector<CMat>& p, double a0)
{
    std::vector<RVec> out;
    for (int k = 0; k < s.num_ues(); ++k) {
        RVec g(s.symbols(k));
        for (int i = 0; i < s.symbols(k); ++i) g(i) = dl_sinr(s, p, a0, k, i);
        out.push_back(g);
    }
    return out;
}

inline double dl_sum_rate(const std::vector<RVec>& sinr) { return sum_rate(sinr); }

inline double dl_sum_rate(const RVec& sinr)
{
    return (1.0 + sinr.array()).log().sum() / std::log(2.0);
}

// ---------------------------------------------------------------- amplification gain

/// Expected unamplified power per (AP, subcarrier) element, M x N, for unit-power
/// independent symbols: sum over every precoder column of |P(mN + n, .)|^2.
inline RMat element_power(const std::vector<CMat>& p, int num_aps, int subcarriers)
{
    RMat out = RMat::Zero(num_aps, subcarriers);
    for (const auto& pk : p) {
        if (pk.rows() != static_cast<Eigen::Index>(num_aps) * subcarriers) throw Error("precoder dimension mismatch");
        for (int m = 0; m < num_aps; ++m)
            for (int n = 0; n < subcarriers; ++n)
                out(m, n) += pk.row(static_cast<Eigen::Index>(m) * subcarriers + n).squaredNorm();
    }
    return out;
}

/// Subcarrier-level precoders (M x K) as one-subcarrier element powers.
inline RMat element_power(const CMat& p)
{
    return p.cwiseAbs2().rowwise().sum();
}

/// Largest common gain meeting every per-AP total cap and (optionally) every
/// per-element cap in expectation: min over constraints of sqrt(cap / power).
inline double compute_a0(const RMat& unamplified, const RVec& ap_cap, const std::optional<RMat>& element_cap = {})
{
    if (ap_cap.size() != unamplified.rows()) throw Error("one power cap per AP required");
    if (element_cap && (element_cap->rows() != unamplified.rows() || element_cap->cols() != unamplified.cols()))
        throw Error("per-element cap dimension mismatch");
    double a0 = std::numeric_limits<double>::infinity();
    for (Eigen::Index m = 0; m < unamplified.rows(); ++m) {
        const double total = unamplified.row(m).sum();
        if (total > 0.0) a0 = std::min(a0, std::sqrt(ap_cap(m) / total));
        if (element_cap)
            for (Eigen::Index n = 0; n < unamplified.cols(); ++n)
                if (unamplified(m, n) > 0.0) a0 = std::min(a0, std::sqrt((*element_cap)(m, n) / unamplified(m, n)));
    }
    if (!std::isfinite(a0)) throw Error("nothing to transmit");
    if (!(a0 > 0.0)) throw Error("power cap leaves no amplification");
    return a0;
}

struct A0Audit {
    bool ok = true;
    bool binding = false;  // at least one constraint met with equality
    double worst_ratio = 0.0;  // max over constraints of amplified power / cap
};

inline A0Audit audit_a0(const RMat& unamplified, const RVec& ap_cap, const std::optional<RMat>& element_cap,
                        double a0, double rel_tol = 1e-9)
{
    A0Audit a;
    const double g = a0 * a0;
    auto check = [&](double power, double cap) {
        if (power <= 0.0) return;
        const double r = g * power / cap;
        a.worst_ratio = std::max(a.worst_ratio, r);
        if (r > 1.0 + rel_tol) a.ok = false;
        if (std::abs(r - 1.0) <= rel_tol) a.binding = true;
    };
    for (Eigen::Index m = 0; m < unamplified.rows(); ++m) {
        check(unamplified.row(m).sum(), ap_cap(m));
        if (element_cap)
            for (Eigen::Index n = 0; n < unamplified.cols(); ++n) check(unamplified(m, n), (*element_cap)(m, n));
    }
    if (!(a0 > 0.0)) a.ok = false;
    return a;
}

// ---------------------------------------------------------------- distributed precoding

/// Per-AP transmit coefficients: coef[m] is U x K, column k nonzero only for k in K_m.
/// s_m = sum_k coef[m].col(k) x_k (no common gain).
struct DistributedPrecoder {
    std::vector<CMat> coef;
    int skipped = 0;  // (AP, UE) pairs dropped because the channel was zero
};

/// Local channels: g[m][k] is the U-vector from UE k to AP m.
using LocalChannels = std::vector<std::vector<CVec>>;

inline LocalChannels single_antenna(const CMat& h)
{
    LocalChannels g(static_cast<std::size_t>(h.rows()), std::vector<CVec>(static_cast<std::size_t>(h.cols())));
    for (int m = 0; m < h.rows(); ++m)
        for (int k = 0; k < h.cols(); ++k) g[m][k] = CVec::Constant(1, h(m, k));
    return g;
}

/// Phase-aligned matched filter: sqrt(P_mk) h_mk^* / |h_mk| (single antenna).
inline DistributedPrecoder dist_mf_precode(const CMat& h, const AssociationMap& assoc, const RMat& power)
{
    DistributedPrecoder d;
    const int M = static_cast<int>(h.rows()), K = static_cast<int>(h.cols());
    for (int m = 0; m < M; ++m) {
        CMat c = CMat::Zero(1, K);
        for (int k : assoc.ues_of_ap.at(m)) {
            const double mag = std::abs(h(m, k));
            if (mag == 0.0) {
                ++d.skipped;
                continue;
            }
            c(0, k) = std::sqrt(power(m, k)) * std::conj(h(m, k)) / mag;
        }
        d.coef.push_back(std::move(c));
    }
    return d;
}

inline constexpr double kRankTolerance = 1e-10;

/// H_m^* (H_m^T H_m^* + rho I)^-1 for the U x |K_m| local channel matrix.
inline CMat regmmse_matrix(const CMat& hm, double rho)
{
    if (rho < 0.0) throw Error("regularization must be nonnegative");
    if (hm.cols() == 0) return CMat(hm.rows(), 0);
    if (rho == 0.0) {
        if (hm.rows() < hm.cols()) throw Error("TZF infeasible: fewer antennas than served UEs");
        Eigen::JacobiSVD<CMat> svd(hm);
        const RVec sv = svd.singularValues();
        if (sv(sv.size() - 1) <= kRankTolerance * sv(0)) throw Error("TZF infeasible: rank-deficient local channel");
    }
    CMat gram = hm.transpose() * hm.conjugate();
    gram.diagonal().array() += rho;
    // gram is Hermitian PD (or PSD + rho I); solve from the right via the adjoint system.
    const CMat x = solve_hermitian(gram.adjoint(), CMat(hm.conjugate().adjoint()), "TZF infeasible");
    return x.adjoint();
}

/// TZF matrix H_m^* (H_m^T H_m^*)^-1; H_m^T P_m = I.
inline CMat tzf_matrix(const CMat& hm) { return regmmse_matrix(hm, 0.0); }

/// UnitNorm: direction p/|p| (per-AP power P_mk exactly). UnitGain: direction p,
/// so the served UE sees h^T p = 1 and receives sqrt(P_mk) x_k coherently.
enum class ColumnScaling { UnitNorm, UnitGain };

inline CMat local_matrix(const LocalChannels& g, const AssociationMap& assoc, int m)
{
    const auto& served = assoc.ues_of_ap.at(m);
    const Eigen::Index U = g.at(m).empty() ? 0 : g[m][0].size();
    CMat hm(U, static_cast<Eigen::Index>(served.size()));
    for (std::size_t j = 0; j < served.size(); ++j) hm.col(static_cast<Eigen::Index>(j)) = g[m][served[j]];
    return hm;
}

/// Distributed precoding from local CSI only; rho = 0 is TZF, larger rho moves
/// toward matched filtering.
inline DistributedPrecoder dist_regmmse_precode(const LocalChannels& g, const AssociationMap& assoc, const RMat& power,
                                                double rho, ColumnScaling scaling = ColumnScaling::UnitNorm)
{
    DistributedPrecoder d;
    const int M = static_cast<int>(g.size());
    for (int m = 0; m < M; ++m) {
        const int K = static_cast<int>(g[m].size());
        const Eigen::Index U = K > 0 ? g[m][0].size() : 1;
        CMat c = CMat::Zero(U, K);
        const auto& served = assoc.ues_of_ap.at(m);
        if (!served.empty()) {
            const CMat pm = regmmse_matrix(local_matrix(g, assoc, m), rho);
            for (std::size_t j = 0; j < served.size(); ++j) {
                const int k = served[j];
                CVec col = pm.col(static_cast<Eigen::Index>(j));
                const double nrm = col.norm();
                if (nrm == 0.0) {
                    ++d.skipped;
                    continue;
                }
                if (scaling == ColumnScaling::UnitNorm) col /= nrm;
                c.col(k) = std::sqrt(power(m, k)) * col;
            }
        }
        d.coef.push_back(std::move(c));
    }
    return d;
}

inline DistributedPrecoder dist_tzf_precode(const LocalChannels& g, const AssociationMap& assoc, const RMat& power,
                                            ColumnScaling scaling = ColumnScaling::UnitNorm)
{
    return dist_regmmse_precode(g, assoc, power, 0.0, scaling);
}

/// Optional per-AP oscillator / amplifier impairment e^{j theta_m} (1 + eps_m).
inline DistributedPrecoder impair(DistributedPrecoder d, const RVec& theta, const RVec& eps)
{
    for (std::size_t m = 0; m < d.coef.size(); ++m)
        d.coef[m] *= std::polar(1.0 + eps(static_cast<Eigen::Index>(m)), theta(static_cast<Eigen::Index>(m)));
    return d;
}

inline CMat impair(CMat p, const RVec& theta, const RVec& eps)
{
    for (Eigen::Index m = 0; m < p.rows(); ++m) p.row(m) *= std::polar(1.0 + eps(m), theta(m));
    return p;
}

/// Received-signal terms at UE k: desired amplitude, MUI carried by APs in M_k
/// (co-associated), MUI from the remaining APs, and the total interference power.
struct ReceiveTerms {
    cd desired = 0.0;
    double co_mui = 0.0;
    double other_mui = 0.0;
    double interference = 0.0;
};

inline ReceiveTerms receive_terms(const LocalChannels& g, const AssociationMap& assoc, const DistributedPrecoder& d,
                                  int k)
{
    ReceiveTerms t;
    const int M = static_cast<int>(g.size());
    const int K = M > 0 ? static_cast<int>(g[0].size()) : 0;
    for (int l = 0; l < K; ++l) {
        cd co = 0.0, other = 0.0;
        for (int m = 0; m < M; ++m) {
            const cd a = g[m][k].transpose() * d.coef[m].col(l);
            (assoc.contains(m, k) ? co : other) += a;
        }
        if (l == k) {
            t.desired = co + other;
        } else {
            t.co_mui += std::norm(co);
            t.other_mui += std::norm(other);
            t.interference += std::norm(co + other);
        }
    }
    return t;
}

inline double dist_sinr(const LocalChannels& g, const AssociationMap& assoc, const DistributedPrecoder& d, double noise,
                        int k)
{
    const auto t = receive_terms(g, assoc, d, k);
    return std::norm(t.desired) / (t.interference + noise);
}

inline RVec dist_sinrs(const LocalChannels& g, const AssociationMap& assoc, const DistributedPrecoder& d, double noise)
{
    const int K = g.empty() ? 0 : static_cast<int>(g[0].size());
    RVec out(K);
    for (int k = 0; k < K; ++k) out(k) = dist_sinr(g, assoc, d, noise, k);
    return out;
}

/// Per-AP transmit power sum_k |coef[m].col(k)|^2.
inline RVec dist_ap_power(const DistributedPrecoder& d)
{
    RVec p(static_cast<Eigen::Index>(d.coef.size()));
    for (std::size_t m = 0; m < d.coef.size(); ++m) p(static_cast<Eigen::Index>(m)) = d.coef[m].squaredNorm();
    return p;
}

// ---------------------------------------------------------------- secrecy

/// Unit vector p_I with h_k^T p_I = 0 for every column of h: a random vector
/// projected (two passes of modified Gram-Schmidt) off span{h_k^*}.
inline CVec artificial_noise_direction(const CMat& h, Rng& rng)
{
    const Eigen::Index M = h.rows();
    if (M <= h.cols()) throw Error("no artificial-noise null space: need more APs than UEs");
    std::vector<CVec> basis;
    for (Eigen::Index k = 0; k < h.cols(); ++k) {
        CVec q = h.col(k).conjugate();
        const double scale = q.norm();
        for (int pass = 0; pass < 2; ++pass)
            for (const auto& b : basis) q -= b * b.dot(q);
        const double nq = q.norm();
        if (nq > 1e-12 * scale && nq > 0.0) basis.push_back(q / nq);
    }
    for (int attempt = 0; attempt < 16; ++attempt) {
        CVec v = complex_normal_vec(rng, M);
        const double scale = v.norm();
        for (int pass = 0; pass < 2; ++pass)
            for (const auto& b : basis) v -= b * b.dot(v);
        const double nv = v.norm();
        if (nv > 1e-6 * scale) return v / nv;
    }
    throw Error("no artificial-noise null space");
}

struct SecrecyConfig {
    double rho = 1.0;  // share of power on information
    CVec direction;    // p_I

    void validate(Eigen::Index aps) const
    {
        if (!(rho >= 0.0 && rho <= 1.0)) throw Error("power split must lie in [0, 1]");
        if (direction.size() != aps) throw Error("artificial-noise direction has wrong length");
        if (std::abs(direction.norm() - 1.0) > 1e-9) throw Error("artificial-noise direction must be unit norm");
    }
};

/// Per-AP expected unamplified power with the secrecy split applied.
inline RVec secrecy_ap_power(const CMat& p, const SecrecyConfig& cfg)
{
    return cfg.rho * element_power(p).col(0) + (1.0 - cfg.rho) * cfg.direction.cwiseAbs2();
}

struct SecrecyTransmission {
    CVec ap_signal;      // s_m for every AP
    CVec ue_reception;   // noiseless h_k^T s for every UE
};

/// s_m = A0 (sqrt(rho) sum_l p_ml x_l + sqrt(1 - rho) p_mI n_I).
inline SecrecyTransmission secrecy_transmit(const CMat& h, const CMat& p, double a0, const SecrecyConfig& cfg,
                                            const CVec& x, cd noise_symbol)
{
    cfg.validate(p.rows());
    SecrecyTransmission t;
    t.ap_signal = a0 * (std::sqrt(cfg.rho) * (p * x) + std::sqrt(1.0 - cfg.rho) * noise_symbol * cfg.direction);
    t.ue_reception = h.transpose() * t.ap_signal;
    return t;
}

/// Noiseless reception without artificial noise: A0 h_k^T sum_l p_l x_l.
inline CVec baseline_reception(const CMat& h, const CMat& p, double a0, const CVec& x)
{
    return a0 * (h.transpose() * (p * x));
}

// ---------------------------------------------------------------- empirical check

struct EmpiricalDownlink {
    RVec sinr;
    RVec ser;
};

/// Simulates y_k = A0 h_k^T P x + n_k and measures, per UE, |g|^2 / E|y - g x_k|^2
/// with the known effective gain g = A0 h_k^T p_k, plus the symbol error rate.
inline EmpiricalDownlink measure_dl_subcarrier(const CMat& h, const CMat& p, double a0, double noise, int draws,
                                               Constellation c, Rng& rng)
{
    const int K = static_cast<int>(h.cols());
    const auto pts = points(c);
    const CMat eff = a0 * h.transpose() * p;  // K x K, (k, l) = A0 h_k^T p_l
    RVec err = RVec::Zero(K), ser = RVec::Zero(K);
    std::vector<int> q(static_cast<std::size_t>(K));
    CVec x(K);
    for (int d = 0; d < draws; ++d) {
        for (int k = 0; k < K; ++k) {
            q[k] = random_symbol(c, rng);
            x(k) = pts[q[k]];
        }
        const CVec y = eff * x;
        for (int k = 0; k < K; ++k) {
            const cd yk = y(k) + complex_normal(rng, noise);
            const cd gk = eff(k, k);
            err(k) += std::norm(yk - gk * x(k));
            if (gk != cd(0.0) && nearest_point(c, yk / gk) != q[k]) ser(k) += 1.0;
        }
    }
    EmpiricalDownlink out;
    out.sinr = RVec(K);
    for (int k = 0; k < K; ++k) out.sinr(k) = std::norm(eff(k, k)) / (err(k) / draws);
    out.ser = ser / draws;
    return out;
}

}  // namespace uccf
