#pragma once

// Large-scale (pathloss + lognormal shadowing) and small-scale (multi-tap CIR)
// channel generation, plus the CIR -> subcarrier gain mapping.

#include "uccf/core.hpp"
#include "uccf/topology.hpp"

#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <variant>

namespace uccf {

/// mu(d) = -10 log10[d^a (1 + d/d_break)^b], dB.
inline double pathloss_double_slope(double d, double a, double b, double d_break)
{
    if (!(d > 0.0)) throw Error("nonpositive distance");
    if (!(d_break > 0.0)) throw Error("nonpositive break distance");
    return -10.0 * (a * std::log10(d) + b * std::log10(1.0 + d / d_break));
}

/// L_P term of the triple-slope model; f in MHz, heights in m.
inline double triple_slope_offset(double f_mhz, double h_ap, double h_ue)
{
    const double lf = std::log10(f_mhz);
    return 46.3 + 33.9 * lf - 13.82 * std::log10(h_ap) - (1.11 * lf - 0.7) * h_ue + 1.56 * lf - 0.8;
}

/// Three-branch pathloss (dB). Every branch is evaluated as
/// -L_P - 15 log10(u) - 20 log10(v), which makes the breakpoints continuous
/// bit-for-bit.
inline double pathloss_triple_slope(double d, double d0, double d1, double f_mhz, double h_ap, double h_ue)
{
    if (!(d0 > 0.0) || !(d1 > d0)) throw Error("invalid triple-slope breakpoints");
    if (!(f_mhz > 0.0) || !(h_ap > 0.0) || !(h_ue > 0.0)) throw Error("invalid triple-slope radio parameters");
    if (!(d > 0.0)) throw Error("nonpositive distance");
    const double lp = triple_slope_offset(f_mhz, h_ap, h_ue);
    auto branch = [lp](double u, double v) { return -lp - 15.0 * std::log10(u) - 20.0 * std::log10(v); };
    if (d > d1) return branch(d, d);
    if (d > d0) return branch(d1, d);
    return branch(d1, d0);
}

struct DoubleSlope {
    double a = 2.0;
    double b = 2.0;
    double d_break = 100.0;
};

struct TripleSlope {
    double d0 = 10.0;
    double d1 = 50.0;
    double carrier_mhz = 1900.0;
    double ap_height = 15.0;
    double ue_height = 1.65;
};

struct LargeScaleModel {
    std::variant<DoubleSlope, TripleSlope> variant = TripleSlope{};
    double shadowing_std_db = 8.0;

    void validate() const
    {
        if (!(shadowing_std_db >= 0.0)) throw Error("shadowing std must be nonnegative");
        if (const auto* ds = std::get_if<DoubleSlope>(&variant)) {
            if (ds->a < 1.5 || ds->a > 3.0) throw Error("basic pathloss exponent outside [1.5, 3]");
            if (ds->b < 2.0 || ds->b > 6.0) throw Error("additional pathloss exponent outside [2, 6]");
            if (!(ds->d_break > 0.0)) throw Error("nonpositive break distance");
        } else {
            const auto& ts = std::get<TripleSlope>(variant);
            if (!(ts.d0 > 0.0) || !(ts.d1 > ts.d0)) throw Error("invalid triple-slope breakpoints");
        }
    }

    /// Mean in dB at d meters. The triple-slope constant L_P is calibrated for
    /// kilometres, so d, d0 and d1 are converted before evaluation.
    double mean_db(double d) const
    {
        return std::visit(
            [d](const auto& v) -> double {
                using T = std::decay_t<decltype(v)>;
                if constexpr (std::is_same_v<T, DoubleSlope>)
                    return pathloss_double_slope(d, v.a, v.b, v.d_break);
                else
                    return pathloss_triple_slope(d / 1000.0, v.d0 / 1000.0, v.d1 / 1000.0, v.carrier_mhz, v.ap_height,
                                                 v.ue_height);
            },
            variant);
    }
};

/// 10/ln(10): scale between natural-log and dB units in the lognormal PDF.
inline constexpr double kLognormalXi = 10.0 / std::numbers::ln10;

/// Lognormal PDF of the linear gain g with dB-domain mean mu and std sigma.
inline double lognormal_gain_pdf(double g, double mu_db, double sigma_db)
{
    if (!(g > 0.0)) return 0.0;
    const double z = (linear_to_db(g) - mu_db) / sigma_db;
    return kLognormalXi / (std::sqrt(2.0 * std::numbers::pi) * sigma_db * g) * std::exp(-0.5 * z * z);
}

/// Draws g with 10 log10 g ~ N(mu(d), sigma_g^2).
inline double sample_large_scale(double d, const LargeScaleModel& model, Rng& rng)
{
    const double mu = model.mean_db(d);
    if (model.shadowing_std_db == 0.0) return db_to_linear(mu);
    std::normal_distribution<double> nd(mu, model.shadowing_std_db);
    return db_to_linear(nd(rng));
}

/// Exponential power-delay profile exp(-decay * l), normalized to unit sum.
inline RVec power_delay_profile(int taps, double decay)
{
    if (taps < 1) throw Error("tap count must be at least 1");
    RVec p(taps);
    for (int l = 0; l < taps; ++l) p(l) = std::exp(-decay * l);
    return p / p.sum();
}

/// Independent CN(0, p_l) taps with unit total mean power.
inline CVec sample_small_scale(int taps, Rng& rng, double pdp_decay = 0.0)
{
    const RVec pdp = power_delay_profile(taps, pdp_decay);
    CVec h(taps);
    for (int l = 0; l < taps; ++l) h(l) = complex_normal(rng, pdp(l));
    return h;
}

/// h_f = F_N Psi (sqrt(g) taps) with the non-normalized DFT.
inline CVec subcarrier_gains(const CVec& taps, double g, int n_subcarriers)
{
    if (taps.size() > n_subcarriers) throw Error("CIR longer than symbol");
    if (n_subcarriers < 1) throw Error("need at least one subcarrier");
    const double amp = std::sqrt(g);
    CVec hf = CVec::Zero(n_subcarriers);
    for (int n = 0; n < n_subcarriers; ++n)
        for (Eigen::Index l = 0; l < taps.size(); ++l)
            hf(n) += taps(l) * std::polar(amp, -2.0 * std::numbers::pi * static_cast<double>(n * l) / n_subcarriers);
    return hf;
}

struct ChannelConfig {
    LargeScaleModel model;
    int taps = 4;               // default L_mk
    double pdp_decay = 0.0;     // 0 = flat profile
    int subcarriers = 8;        // N
    double min_distance = 1.0;  // m, clamps d_mk before the pathloss model
    std::vector<std::vector<int>> taps_override;  // optional [m][k] L_mk
    double coherence_symbols = 200.0;             // tau_c, metadata only

    int taps_for(int m, int k) const
    {
        if (!taps_override.empty()) return taps_override.at(m).at(k);
        return taps;
    }

    void validate() const
    {
        model.validate();
        if (subcarriers < 1) throw Error("need at least one subcarrier");
        if (taps < 1) throw Error("tap count must be at least 1");
        if (taps > subcarriers) throw Error("CIR longer than symbol");
        if (!(min_distance > 0.0)) throw Error("min distance must be positive");
        for (const auto& row : taps_override)
            for (int l : row)
                if (l < 1 || l > subcarriers) throw Error("per-link tap count outside [1, N]");
    }
};

/// One draw of every AP-UE link. Indices are [m][k].
struct ChannelRealization {
    RMat gain;                               // g_mk, M x K, linear
    std::vector<std::vector<CVec>> taps;     // unit-power small-scale taps h~_mk
    std::vector<std::vector<CVec>> freq;     // sqrt(g) F_N Psi h~, length N
    std::vector<std::vector<RVec>> pdp;      // tap power profile used for h~_mk
    int subcarriers = 0;

    int num_aps() const { return static_cast<int>(gain.rows()); }
    int num_ues() const { return static_cast<int>(gain.cols()); }

    /// Complete CIR h_mk = sqrt(g_mk) h~_mk.
    CVec cir(int m, int k) const { return std::sqrt(gain(m, k)) * taps[m][k]; }
};

inline ChannelRealization realize_channels(const NetworkTopology& topo, const ChannelConfig& cfg, Rng& rng)
{
    cfg.validate();
    const int M = topo.num_aps();
    const int K = topo.num_ues();
    ChannelRealization ch;
    ch.subcarriers = cfg.subcarriers;
    ch.gain.resize(M, K);
    ch.taps.assign(static_cast<std::size_t>(M), std::vector<CVec>(static_cast<std::size_t>(K)));
    ch.freq = ch.taps;
    ch.pdp.assign(static_cast<std::size_t>(M), std::vector<RVec>(static_cast<std::size_t>(K)));
    for (int m = 0; m < M; ++m)
        for (int k = 0; k < K; ++k) {
            const double d = std::max(topo.dist(m, k), cfg.min_distance);
            ch.gain(m, k) = sample_large_scale(d, cfg.model, rng);
            const int L = cfg.taps_for(m, k);
            ch.pdp[m][k] = power_delay_profile(L, cfg.pdp_decay);
            ch.taps[m][k] = sample_small_scale(L, rng, cfg.pdp_decay);
            ch.freq[m][k] = subcarrier_gains(ch.taps[m][k], ch.gain(m, k), cfg.subcarriers);
        }
    return ch;
}

/// Flat per-antenna channels for U-antenna APs: [m][k] is a U-vector ~ CN(0, g_mk I).
inline std::vector<std::vector<CVec>> sample_antenna_channels(const RMat& gain, int antennas, Rng& rng)
{
    if (antennas < 1) throw Error("need at least one antenna");
    std::vector<std::vector<CVec>> h(static_cast<std::size_t>(gain.rows()),
                                     std::vector<CVec>(static_cast<std::size_t>(gain.cols())));
    for (Eigen::Index m = 0; m < gain.rows(); ++m)
        for (Eigen::Index k = 0; k < gain.cols(); ++k) h[m][k] = complex_normal_vec(rng, antennas, gain(m, k));
    return h;
}

/// CSV snapshot: "ap,ue,gain,kind,index,re,im" with kind in {tap, est}.
/// Values are written with 17 significant digits so a replay is exact.
inline void write_channel_snapshot(std::ostream& os, const ChannelRealization& ch,
                                   const std::vector<std::vector<CVec>>* estimates = nullptr)
{
    os << "ap,ue,gain,kind,index,re,im\n";
    os << std::setprecision(17);
    auto emit = [&](int m, int k, const char* kind, const CVec& v) {
        for (Eigen::Index l = 0; l < v.size(); ++l)
            os << m << ',' << k << ',' << ch.gain(m, k) << ',' << kind << ',' << l << ',' << v(l).real() << ','
               << v(l).imag() << '\n';
    };
    for (int m = 0; m < ch.num_aps(); ++m)
        for (int k = 0; k < ch.num_ues(); ++k) {
            emit(m, k, "tap", ch.taps[m][k]);
            if (estimates && (*estimates)[m][k].size() > 0) emit(m, k, "est", (*estimates)[m][k]);
        }
}

/// Rebuilds a realization from a snapshot; the PDP is taken as flat.
inline ChannelRealization read_channel_snapshot(std::istream& is, int subcarriers)
{
    std::string line;
    if (!std::getline(is, line) || line != "ap,ue,gain,kind,index,re,im") throw Error("bad snapshot header");
    struct Entry { int m, k; double g; int l; cd v; };
    std::vector<Entry> taps;
    int M = 0, K = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string f[7];
        for (auto& s : f)
            if (!std::getline(ss, s, ',')) throw Error("bad snapshot row");
        if (f[3] != "tap") continue;
        Entry e{std::stoi(f[0]), std::stoi(f[1]), std::stod(f[2]), std::stoi(f[4]), {std::stod(f[5]), std::stod(f[6])}};
        M = std::max(M, e.m + 1);
        K = std::max(K, e.k + 1);
        taps.push_back(e);
    }
    ChannelRealization ch;
    ch.subcarriers = subcarriers;
    ch.gain = RMat::Zero(M, K);
    ch.taps.assign(static_cast<std::size_t>(M), std::vector<CVec>(static_cast<std::size_t>(K)));
    for (const auto& e : taps) {
        auto& v = ch.taps[e.m][e.k];
        if (v.size() <= e.l) v.conservativeResize(e.l + 1);
        v(e.l) = e.v;
        ch.gain(e.m, e.k) = e.g;
    }
    ch.freq = ch.taps;
    ch.pdp.assign(static_cast<std::size_t>(M), std::vector<RVec>(static_cast<std::size_t>(K)));
    for (int m = 0; m < M; ++m)
        for (int k = 0; k < K; ++k) {
            ch.freq[m][k] = subcarrier_gains(ch.taps[m][k], ch.gain(m, k), subcarriers);
            ch.pdp[m][k] = power_delay_profile(static_cast<int>(ch.taps[m][k].size()), 0.0);
        }
    return ch;
}

}  // namespace uccf
