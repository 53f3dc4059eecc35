#pragma once

// Random scene generators shared by the unit tests and the acceptance binary.

#include "uccf/uccf.hpp"

#include <algorithm>
#include <vector>

namespace uccf::testing {

/// Per-link subcarrier gains freq[m][k] (length N) from L-tap Rayleigh CIRs with
/// lognormal large-scale gains around 0 dB.
inline std::vector<std::vector<CVec>> random_freq(int M, int K, int N, int taps, Rng& rng, double spread_db = 6.0,
                                                  RMat* gain_out = nullptr)
{
    std::normal_distribution<double> sh(0.0, spread_db);
    RMat gain(M, K);
    std::vector<std::vector<CVec>> f(static_cast<std::size_t>(M), std::vector<CVec>(static_cast<std::size_t>(K)));
    for (int m = 0; m < M; ++m)
        for (int k = 0; k < K; ++k) {
            gain(m, k) = db_to_linear(sh(rng));
            f[m][k] = subcarrier_gains(sample_small_scale(taps, rng), gain(m, k), N);
        }
    if (gain_out) *gain_out = gain;
    return f;
}

/// Every UE on every subcarrier with random powers that respect the per-UE budget.
inline UplinkScene random_scene(int M, int K, int N, double snr, Rng& rng, bool full_band = true)
{
    const auto f = random_freq(M, K, N, std::min(2, N), rng);
    std::uniform_real_distribution<double> u(0.1, 1.0);
    RMat delta = RMat::Zero(K, N), eta = RMat::Zero(K, N);
    for (int k = 0; k < K; ++k) {
        for (int n = 0; n < N; ++n)
            if (full_band || u(rng) < 0.6) delta(k, n) = 1.0;
        if (delta.row(k).sum() == 0.0) delta(k, k % N) = 1.0;
        for (int n = 0; n < N; ++n)
            if (delta(k, n) != 0.0) eta(k, n) = u(rng);
        eta.row(k) *= u(rng) / eta.row(k).sum();
    }
    return make_uplink_scene(f, snr, delta, eta);
}

/// Scene with dense (ICI-carrying) MN x N channel blocks.
inline UplinkScene random_ici_scene(int M, int K, int N, double snr, Rng& rng)
{
    UplinkScene s;
    s.num_aps = M;
    s.subcarriers = N;
    s.snr = snr;
    std::uniform_real_distribution<double> u(0.1, 1.0);
    for (int k = 0; k < K; ++k) {
        s.channels.push_back(complex_normal_mat(rng, static_cast<Eigen::Index>(M) * N, N));
        std::vector<int> idx(static_cast<std::size_t>(N));
        std::iota(idx.begin(), idx.end(), 0);
        s.assigned.push_back(idx);
        RVec p(N);
        for (int n = 0; n < N; ++n) p(n) = u(rng);
        s.power.push_back(p * (u(rng) / p.sum()));
    }
    s.validate();
    return s;
}

/// Random association in which every UE has between 1 and max_aps APs.
inline AssociationMap random_association(int M, int K, int max_aps, Rng& rng)
{
    std::vector<std::vector<int>> sets(static_cast<std::size_t>(K));
    std::vector<int> order(static_cast<std::size_t>(M));
    std::iota(order.begin(), order.end(), 0);
    std::uniform_int_distribution<int> cnt(1, std::min(max_aps, M));
    for (int k = 0; k < K; ++k) {
        std::shuffle(order.begin(), order.end(), rng);
        sets[k].assign(order.begin(), order.begin() + cnt(rng));
    }
    return AssociationMap::from_ue_sets(M, std::move(sets));
}

/// Random tree-shaped bipartite AP/UE graph spanning all M APs and K UEs
/// (M, K >= 1). New UEs attach to one existing AP; new APs attach to one
/// existing UE, so the result has exactly M + K - 1 edges and no cycles.
/// No AP serves more than max_per_ap UEs.
inline AssociationMap random_tree_association(int M, int K, Rng& rng, int max_per_ap = 8)
{
    std::vector<std::vector<int>> sets(static_cast<std::size_t>(K));
    std::vector<int> load(static_cast<std::size_t>(M), 0);
    std::vector<int> aps{0}, ues;
    int next_ap = 1, next_ue = 0;
    auto pick = [&](const std::vector<int>& v) {
        std::uniform_int_distribution<std::size_t> d(0, v.size() - 1);
        return v[d(rng)];
    };
    std::bernoulli_distribution coin(0.5);
    while (next_ap < M || next_ue < K) {
        std::vector<int> open;
        for (int m : aps)
            if (load[m] < max_per_ap) open.push_back(m);
        bool add_ue = next_ue < K && (ues.empty() || next_ap >= M || coin(rng));
        if (add_ue && open.empty()) {
            if (next_ap >= M) throw Error("tree generator: AP capacity exhausted");
            add_ue = false;
        }
        if (add_ue) {
            const int m = pick(open);
            sets[next_ue].push_back(m);
            ++load[m];
            ues.push_back(next_ue++);
        } else {
            const int k = pick(ues);
            sets[k].push_back(next_ap);
            ++load[next_ap];
            aps.push_back(next_ap++);
        }
    }
    return AssociationMap::from_ue_sets(M, std::move(sets));
}

/// Single-subcarrier channel matrix h (M x K) with lognormal column gains.
inline CMat random_channel_matrix(int M, int K, Rng& rng, double spread_db = 6.0)
{
    std::normal_distribution<double> sh(0.0, spread_db);
    CMat h(M, K);
    for (int m = 0; m < M; ++m)
        for (int k = 0; k < K; ++k) h(m, k) = complex_normal(rng, db_to_linear(sh(rng)));
    return h;
}

inline double rel_err(const CMat& a, const CMat& b)
{
    const double s = std::max(a.norm(), b.norm());
    return s > 0.0 ? (a - b).norm() / s : 0.0;
}

inline double rel_err(double a, double b)
{
    const double s = std::max(std::abs(a), std::abs(b));
    return s > 0.0 ? std::abs(a - b) / s : 0.0;
}

}  // namespace uccf::testing
