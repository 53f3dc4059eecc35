#pragma once

// Network geometry, UE-AP association and the AP/UE factor graph.

#include "uccf/core.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <optional>
#include <queue>
#include <utility>

namespace uccf {

struct Point {
    double x = 0.0;
    double y = 0.0;
};

inline double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

struct NetworkTopology {
    std::vector<Point> aps;
    std::vector<Point> ues;
    double ap_height = 15.0;         // m
    double ue_height = 1.65;         // m
    double carrier_mhz = 1900.0;     // MHz
    double ue_max_power = 0.1;       // W
    double ap_max_power = 0.2;       // W per AP
    double noise_variance = 1e-13;   // W

    int num_aps() const { return static_cast<int>(aps.size()); }
    int num_ues() const { return static_cast<int>(ues.size()); }
    double dist(int m, int k) const { return distance(aps[m], ues[k]); }

    void validate() const
    {
        if (aps.empty()) throw Error("topology needs at least one AP");
        if (ues.empty()) throw Error("topology needs at least one UE");
        auto finite = [](const Point& p) { return std::isfinite(p.x) && std::isfinite(p.y); };
        if (!std::all_of(aps.begin(), aps.end(), finite) || !std::all_of(ues.begin(), ues.end(), finite))
            throw Error("non-finite coordinate");
        if (!(ue_max_power > 0.0) || !(ap_max_power > 0.0) || !(noise_variance > 0.0))
            throw Error("powers and noise variance must be positive");
        if (!(carrier_mhz > 0.0) || !(ap_height > 0.0) || !(ue_height > 0.0))
            throw Error("carrier frequency and antenna heights must be positive");
    }

    /// Normalized UL SNR P_u / sigma^2.
    double uplink_snr() const { return ue_max_power / noise_variance; }
};

enum class Layout { Random, Grid };

/// Places M APs (uniformly at random or on a regular grid) and K UEs
/// (uniformly at random) in a square of side area_size.
inline NetworkTopology generate_topology(int num_aps, int num_ues, double area_size, Layout layout, Rng& rng,
                                         NetworkTopology radio = {})
{
    if (num_aps < 1 || num_ues < 1) throw Error("topology needs M >= 1 and K >= 1");
    if (!(area_size > 0.0)) throw Error("area size must be positive");
    std::uniform_real_distribution<double> u(0.0, area_size);
    radio.aps.clear();
    radio.ues.clear();
    if (layout == Layout::Grid) {
        const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(num_aps))));
        const int rows = (num_aps + cols - 1) / cols;
        const double dx = area_size / cols;
        const double dy = area_size / rows;
        for (int i = 0; i < num_aps; ++i)
            radio.aps.push_back({(i % cols + 0.5) * dx, (i / cols + 0.5) * dy});
    } else {
        for (int i = 0; i < num_aps; ++i) {
            const double x = u(rng);
            radio.aps.push_back({x, u(rng)});
        }
    }
    for (int k = 0; k < num_ues; ++k) {
        const double x = u(rng);
        radio.ues.push_back({x, u(rng)});
    }
    return radio;
}

/// Virtual cells: M_k per UE and the dual K_m per AP.
struct AssociationMap {
    std::vector<std::vector<int>> aps_of_ue;  // M_k, ascending
    std::vector<std::vector<int>> ues_of_ap;  // K_m, ascending
    std::vector<int> disconnected_ues;        // UEs with empty M_k

    int num_aps() const { return static_cast<int>(ues_of_ap.size()); }
    int num_ues() const { return static_cast<int>(aps_of_ue.size()); }

    static AssociationMap from_ue_sets(int num_aps, std::vector<std::vector<int>> sets)
    {
        AssociationMap a;
        a.ues_of_ap.assign(static_cast<std::size_t>(num_aps), {});
        for (std::size_t k = 0; k < sets.size(); ++k) {
            auto& s = sets[k];
            std::sort(s.begin(), s.end());
            s.erase(std::unique(s.begin(), s.end()), s.end());
            for (int m : s) {
                if (m < 0 || m >= num_aps) throw Error("association references unknown AP");
                a.ues_of_ap[m].push_back(static_cast<int>(k));
            }
            if (s.empty()) a.disconnected_ues.push_back(static_cast<int>(k));
        }
        a.aps_of_ue = std::move(sets);
        return a;
    }

    /// Full association: every UE served by every AP.
    static AssociationMap full(int num_aps, int num_ues)
    {
        std::vector<int> all(static_cast<std::size_t>(num_aps));
        std::iota(all.begin(), all.end(), 0);
        return from_ue_sets(num_aps, std::vector<std::vector<int>>(static_cast<std::size_t>(num_ues), all));
    }

    bool contains(int m, int k) const
    {
        const auto& s = aps_of_ue[k];
        return std::binary_search(s.begin(), s.end(), m);
    }

    /// zeta_mk as an M x K 0/1 matrix.
    RMat zeta() const
    {
        RMat z = RMat::Zero(num_aps(), num_ues());
        for (int k = 0; k < num_ues(); ++k)
            for (int m : aps_of_ue[k]) z(m, k) = 1.0;
        return z;
    }

    /// m in M_k <=> k in K_m, and disconnected_ues lists exactly the empty M_k.
    bool consistent() const
    {
        for (int k = 0; k < num_ues(); ++k)
            for (int m : aps_of_ue[k]) {
                if (m < 0 || m >= num_aps()) return false;
                const auto& s = ues_of_ap[m];
                if (!std::binary_search(s.begin(), s.end(), k)) return false;
            }
        for (int m = 0; m < num_aps(); ++m)
            for (int k : ues_of_ap[m])
                if (k < 0 || k >= num_ues() || !contains(m, k)) return false;
        std::vector<int> empty;
        for (int k = 0; k < num_ues(); ++k)
            if (aps_of_ue[k].empty()) empty.push_back(k);
        return empty == disconnected_ues;
    }
};

/// M_k = {m : d_mk <= R_th}; falls back to the nearest AP when the UE can still
/// meet its minimum QoS, otherwise the UE is left disconnected.
inline AssociationMap associate_distance(const NetworkTopology& topo, double radius,
                                         const std::function<bool(int)>& min_rate_feasible = {})
{
    if (!(radius > 0.0)) throw Error("association radius must be positive");
    const int M = topo.num_aps();
    const int K = topo.num_ues();
    std::vector<std::vector<int>> sets(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
        int nearest = 0;
        for (int m = 0; m < M; ++m) {
            const double d = topo.dist(m, k);
            if (d <= radius) sets[k].push_back(m);
            if (d < topo.dist(nearest, k)) nearest = m;
        }
        if (sets[k].empty() && (!min_rate_feasible || min_rate_feasible(k))) sets[k].push_back(nearest);
    }
    return AssociationMap::from_ue_sets(M, std::move(sets));
}

/// Stop conditions for large-scale association; either or both may be set.
struct StopRule {
    std::optional<int> max_count;
    std::optional<double> threshold;
};

/// Per UE, walks the APs in descending g_mk (ties: lower AP index first) until
/// the stop rule fires. gains is M x K.
inline AssociationMap associate_large_scale(const RMat& gains, const StopRule& rule)
{
    if (!rule.max_count && !rule.threshold) throw Error("no stop condition");
    if (rule.max_count && *rule.max_count < 0) throw Error("max_count must be nonnegative");
    if ((gains.array() < 0.0).any()) throw Error("gains must be nonnegative");
    const int M = static_cast<int>(gains.rows());
    const int K = static_cast<int>(gains.cols());
    std::vector<std::vector<int>> sets(static_cast<std::size_t>(K));
    std::vector<int> order(static_cast<std::size_t>(M));
    for (int k = 0; k < K; ++k) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return gains(a, k) > gains(b, k); });
        for (int m : order) {
            if (rule.max_count && static_cast<int>(sets[k].size()) >= *rule.max_count) break;
            if (rule.threshold && gains(m, k) < *rule.threshold) break;
            sets[k].push_back(m);
        }
    }
    return AssociationMap::from_ue_sets(M, std::move(sets));
}

struct GraphComponent {
    std::vector<int> aps;  // function nodes, ascending
    std::vector<int> ues;  // variable nodes, ascending
};

/// Bipartite AP (function node) / UE (variable node) graph.
struct FactorGraph {
    int fn_count = 0;
    int vn_count = 0;
    std::vector<std::pair<int, int>> edges;       // (AP, UE), sorted
    std::vector<GraphComponent> components;       // edge-carrying components only
    std::vector<std::vector<int>> ap_adjacency;   // APs sharing >= 1 UE
    std::vector<int> component_of_ap;             // -1 for isolated APs
    std::vector<int> component_of_ue;             // -1 for disconnected UEs
    std::vector<int> switchable_off;              // APs with no associated UE
    AssociationMap assoc;
};

inline FactorGraph build_factor_graph(const AssociationMap& assoc)
{
    if (!assoc.consistent()) throw Error("inconsistent association map");
    FactorGraph g;
    g.fn_count = assoc.num_aps();
    g.vn_count = assoc.num_ues();
    g.assoc = assoc;
    for (int m = 0; m < g.fn_count; ++m)
        for (int k : assoc.ues_of_ap[m]) g.edges.emplace_back(m, k);

    g.ap_adjacency.assign(static_cast<std::size_t>(g.fn_count), {});
    for (int k = 0; k < g.vn_count; ++k) {
        const auto& s = assoc.aps_of_ue[k];
        for (int i : s)
            for (int j : s)
                if (i != j) g.ap_adjacency[i].push_back(j);
    }
    for (auto& adj : g.ap_adjacency) {
        std::sort(adj.begin(), adj.end());
        adj.erase(std::unique(adj.begin(), adj.end()), adj.end());
    }

    g.component_of_ap.assign(static_cast<std::size_t>(g.fn_count), -1);
    g.component_of_ue.assign(static_cast<std::size_t>(g.vn_count), -1);
    for (int start = 0; start < g.fn_count; ++start) {
        if (g.component_of_ap[start] != -1) continue;
        if (assoc.ues_of_ap[start].empty()) {
            g.switchable_off.push_back(start);
            continue;
        }
        const int id = static_cast<int>(g.components.size());
        GraphComponent comp;
        std::queue<int> frontier;  // AP indices
        frontier.push(start);
        g.component_of_ap[start] = id;
        while (!frontier.empty()) {
            const int m = frontier.front();
            frontier.pop();
            comp.aps.push_back(m);
            for (int k : assoc.ues_of_ap[m]) {
                if (g.component_of_ue[k] != -1) continue;
                g.component_of_ue[k] = id;
                comp.ues.push_back(k);
                for (int n : assoc.aps_of_ue[k]) {
                    if (g.component_of_ap[n] == -1) {
                        g.component_of_ap[n] = id;
                        frontier.push(n);
                    }
                }
            }
        }
        std::sort(comp.aps.begin(), comp.aps.end());
        std::sort(comp.ues.begin(), comp.ues.end());
        g.components.push_back(std::move(comp));
    }
    return g;
}

/// True when the component has no cycles (edges = nodes - 1).
inline bool is_tree(const FactorGraph& g, const GraphComponent& c)
{
    std::size_t edges = 0;
    for (int m : c.aps) edges += g.assoc.ues_of_ap[m].size();
    return edges + 1 == c.aps.size() + c.ues.size();
}

}  // namespace uccf
