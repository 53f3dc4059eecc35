#pragma once

// Scenario files, Monte-Carlo orchestration, aggregation and export.

#include "uccf/alloc.hpp"
#include "uccf/apmp.hpp"
#include "uccf/channel.hpp"
#include "uccf/core.hpp"
#include "uccf/downlink.hpp"
#include "uccf/topology.hpp"
#include "uccf/training.hpp"
#include "uccf/uplink.hpp"

#include "json.hpp"

#include <atomic>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

namespace uccf {

using Json = nlohmann::json;

inline constexpr int kScenarioVersion = 1;

/// Every recognised key with its default. A scenario file overrides any subset.
inline Json scenario_defaults()
{
    return Json::parse(R"({
      "version": 1,
      "trials": 10,
      "seed": 1,
      "topology": {"aps": 16, "ues": 4, "area": 400.0, "layout": "random",
                   "ap_height": 15.0, "ue_height": 1.65, "carrier_mhz": 1900.0,
                   "ue_max_power": 0.1, "ap_max_power": 0.2, "noise_variance": 1e-13},
      "channel": {"model": "triple_slope", "shadowing_db": 8.0,
                  "a": 2.0, "b": 2.0, "d_break": 100.0, "d0": 10.0, "d1": 50.0,
                  "taps": 2, "pdp_decay": 0.0, "subcarriers": 4, "min_distance": 1.0,
                  "coherence_symbols": 200.0},
      "association": {"method": "large_scale", "radius": 150.0, "max_aps": 3, "threshold_db": -200.0},
      "training": {"enabled": false, "symbols": 1, "pilot_boost_db": 0.0, "mode": "mui_suppress",
                   "pool": 0, "effective_rate": false},
      "uplink": {"enabled": true, "snr_db": null,
                 "detectors": ["gmmse", "lmmse_sliced", "lmmse_reduced", "local_mrc", "local_equal", "apmp"],
                 "constellation": "bpsk", "blocks": 200,
                 "apmp": {"max_iterations": 10, "tolerance": 1e-4, "damping": 0.0}},
      "downlink": {"enabled": true, "precoders": ["tmmse", "mf", "tzf", "regmmse"],
                   "antennas": 4, "rho_reg": -1.0, "secrecy_rho": 1.0},
      "allocation": {"objective": "sum_rate", "sharing": true, "order": "weakest_first",
                     "refine_iterations": 3, "min_rate": 0.0}
    })");
}

struct Scenario {
    Json doc;  // fully populated, validated
    int trials = 1;
    std::uint64_t seed = 1;

    const Json& at(const char* section) const { return doc.at(section); }
};

namespace detail {

inline void merge(Json& base, const Json& over, const std::string& path)
{
    for (auto it = over.begin(); it != over.end(); ++it) {
        const std::string p = path.empty() ? it.key() : path + "." + it.key();
        if (!base.contains(it.key())) throw Error("scenario: unknown key '" + p + "'");
        Json& b = base[it.key()];
        if (b.is_object()) {
            if (!it->is_object()) throw Error("scenario: '" + p + "' must be an object");
            merge(b, *it, p);
        } else {
            b = *it;
        }
    }
}

inline void require(bool ok, const std::string& what)
{
    if (!ok) throw Error("scenario: " + what);
}

inline double num(const Json& j, const char* key, const std::string& section)
{
    const Json& v = j.at(key);
    require(v.is_number(), section + "." + key + " must be a number");
    return v.get<double>();
}

inline int integer(const Json& j, const char* key, const std::string& section)
{
    const Json& v = j.at(key);
    require(v.is_number_integer(), section + "." + key + " must be an integer");
    return v.get<int>();
}

inline std::string str(const Json& j, const char* key, const std::string& section,
                       std::initializer_list<const char*> allowed)
{
    const Json& v = j.at(key);
    require(v.is_string(), section + "." + key + " must be a string");
    const auto s = v.get<std::string>();
    for (const char* a : allowed)
        if (s == a) return s;
    std::string list;
    for (const char* a : allowed) list += std::string(list.empty() ? "" : ", ") + a;
    throw Error("scenario: " + section + "." + key + " = '" + s + "' (expected one of: " + list + ")");
}

inline void collect_paths(const Json& j, const std::string& prefix, std::vector<std::string>& out)
{
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string p = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (it->is_object()) collect_paths(*it, p, out);
        else if (it->is_number() || it->is_null() || it->is_boolean()) out.push_back(p);
    }
}

}  // namespace detail

/// Scalar paths that `sweep` accepts, in document order of the defaults.
inline std::vector<std::string> sweepable_paths()
{
    std::vector<std::string> out;
    detail::collect_paths(scenario_defaults(), "", out);
    return out;
}

/// Merges a user document into the defaults and checks every section before any
/// trial runs. Errors name the offending key.
inline Scenario parse_scenario(const Json& user)
{
    detail::require(user.is_object(), "top level must be an object");
    Json doc = scenario_defaults();
    detail::merge(doc, user, "");
    using detail::integer;
    using detail::num;
    using detail::require;
    using detail::str;

    require(integer(doc, "version", "") == kScenarioVersion, "unsupported version");
    Scenario s;
    s.trials = integer(doc, "trials", "");
    require(s.trials >= 1, "trials must be >= 1");
    require(doc.at("seed").is_number_unsigned() || doc.at("seed").is_number_integer(), "seed must be an integer");
    s.seed = doc.at("seed").get<std::uint64_t>();

    const Json& t = doc.at("topology");
    require(integer(t, "aps", "topology") >= 1, "topology.aps must be >= 1");
    require(integer(t, "ues", "topology") >= 1, "topology.ues must be >= 1");
    require(num(t, "area", "topology") > 0.0, "topology.area must be positive");
    str(t, "layout", "topology", {"random", "grid"});
    for (const char* k : {"ap_height", "ue_height", "carrier_mhz", "ue_max_power", "ap_max_power", "noise_variance"})
        require(num(t, k, "topology") > 0.0, std::string("topology.") + k + " must be positive");

    const Json& c = doc.at("channel");
    str(c, "model", "channel", {"triple_slope", "double_slope"});
    require(integer(c, "taps", "channel") >= 1, "channel.taps must be >= 1");
    require(integer(c, "subcarriers", "channel") >= integer(c, "taps", "channel"),
            "channel.subcarriers must be >= channel.taps");
    for (const char* k : {"shadowing_db", "a", "b", "d_break", "d0", "d1", "pdp_decay", "min_distance", "coherence_symbols"})
        num(c, k, "channel");

    const Json& a = doc.at("association");
    str(a, "method", "association", {"distance", "large_scale", "full"});
    require(num(a, "radius", "association") > 0.0, "association.radius must be positive");
    require(integer(a, "max_aps", "association") >= 1, "association.max_aps must be >= 1");
    num(a, "threshold_db", "association");

    const Json& tr = doc.at("training");
    require(tr.at("enabled").is_boolean(), "training.enabled must be a boolean");
    require(integer(tr, "symbols", "training") >= 1, "training.symbols must be >= 1");
    num(tr, "pilot_boost_db", "training");
    str(tr, "mode", "training", {"single", "mui_suppress", "sample_covariance"});
    require(integer(tr, "pool", "training") >= 0, "training.pool must be >= 0");
    require(tr.at("effective_rate").is_boolean(), "training.effective_rate must be a boolean");

    const Json& u = doc.at("uplink");
    require(u.at("enabled").is_boolean(), "uplink.enabled must be a boolean");
    require(u.at("snr_db").is_null() || u.at("snr_db").is_number(), "uplink.snr_db must be null or a number");
    require(u.at("detectors").is_array(), "uplink.detectors must be an array");
    for (const auto& d : u.at("detectors")) {
        require(d.is_string(), "uplink.detectors entries must be strings");
        Json tmp{{"d", d}};
        str(tmp, "d", "uplink.detectors", {"gmmse", "lmmse_sliced", "lmmse_reduced", "local_mrc", "local_equal", "apmp"});
    }
    str(u, "constellation", "uplink", {"bpsk", "qpsk"});
    require(integer(u, "blocks", "uplink") >= 1, "uplink.blocks must be >= 1");
    ApmpConfig ac;
    ac.max_iterations = integer(u.at("apmp"), "max_iterations", "uplink.apmp");
    ac.tolerance = num(u.at("apmp"), "tolerance", "uplink.apmp");
    ac.damping = num(u.at("apmp"), "damping", "uplink.apmp");
    try {
        ac.validate();
    } catch (const Error& e) {
        throw Error(std::string("scenario: uplink.apmp: ") + e.what());
    }

    const Json& d = doc.at("downlink");
    require(d.at("enabled").is_boolean(), "downlink.enabled must be a boolean");
    require(d.at("precoders").is_array(), "downlink.precoders must be an array");
    for (const auto& p : d.at("precoders")) {
        require(p.is_string(), "downlink.precoders entries must be strings");
        Json tmp{{"p", p}};
        str(tmp, "p", "downlink.precoders", {"tmmse", "mf", "tzf", "regmmse"});
    }
    require(integer(d, "antennas", "downlink") >= 1, "downlink.antennas must be >= 1");
    num(d, "rho_reg", "downlink");
    const double rho = num(d, "secrecy_rho", "downlink");
    require(rho >= 0.0 && rho <= 1.0, "downlink.secrecy_rho must lie in [0, 1]");

    const Json& al = doc.at("allocation");
    str(al, "objective", "allocation", {"sum_rate", "max_min"});
    require(al.at("sharing").is_boolean(), "allocation.sharing must be a boolean");
    str(al, "order", "allocation", {"weakest_first", "strongest_first"});
    const int ri = integer(al, "refine_iterations", "allocation");
    require(ri >= 0 && ri <= 10, "allocation.refine_iterations must lie in [0, 10]");
    require(num(al, "min_rate", "allocation") >= 0.0, "allocation.min_rate must be nonnegative");

    // Module-level checks on the derived configs.
    try {
        LargeScaleModel m;
        if (c.at("model") == "double_slope")
            m.variant = DoubleSlope{c.at("a").get<double>(), c.at("b").get<double>(), c.at("d_break").get<double>()};
        else
            m.variant = TripleSlope{c.at("d0").get<double>(), c.at("d1").get<double>(), t.at("carrier_mhz").get<double>(),
                                    t.at("ap_height").get<double>(), t.at("ue_height").get<double>()};
        m.shadowing_std_db = c.at("shadowing_db").get<double>();
        m.validate();
    } catch (const Error& e) {
        throw Error(std::string("scenario: channel: ") + e.what());
    }
    s.doc = std::move(doc);
    return s;
}

inline Scenario load_scenario(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw Error("cannot open scenario file '" + path + "'");
    Json j;
    try {
        j = Json::parse(in, nullptr, true, true);
    } catch (const Json::parse_error& e) {
        throw Error("scenario: parse error in '" + path + "': " + e.what());
    }
    return parse_scenario(j);
}

/// FNV-1a over the canonical dump of the populated document, prefixed with the
/// schema version.
inline std::string scenario_hash(const Scenario& s)
{
    const std::string text = s.doc.dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "v%d-%016llx", kScenarioVersion, static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------- records

struct Record {
    int trial = 0;
    std::string link;    // "ul", "dl", "ch", "plan"
    std::string scheme;  // detector / precoder name, or "-"
    int ue = -1;         // -1 = scene-level metric
    std::string metric;
    double value = 0.0;
};

struct ResultSet {
    std::string hash;
    std::uint64_t seed = 0;
    int trials = 0;
    std::vector<Record> records;  // ordered by trial, then emission order
};

// ---------------------------------------------------------------- one trial

namespace detail {

inline Constellation constellation_of(const std::string& s)
{
    return s == "qpsk" ? Constellation::Qpsk : Constellation::Bpsk;
}

struct TrialContext {
    const Scenario* sc;
    int trial;
    std::vector<Record>* out;

    void add(const std::string& link, const std::string& scheme, int ue, const std::string& metric, double v) const
    {
        out->push_back(Record{trial, link, scheme, ue, metric, v});
    }
};

inline void emit_link(const TrialContext& ctx, const std::string& link, const std::string& scheme,
                      const std::vector<RVec>& sinr, double discount)
{
    double total = 0.0;
    for (std::size_t k = 0; k < sinr.size(); ++k) {
        double rate = 0.0, mean = 0.0;
        for (Eigen::Index i = 0; i < sinr[k].size(); ++i) {
            rate += std::log2(1.0 + sinr[k](i));
            mean += sinr[k](i);
        }
        if (sinr[k].size() > 0) mean /= static_cast<double>(sinr[k].size());
        total += rate;
        ctx.add(link, scheme, static_cast<int>(k), "sinr_analytic", mean);
        ctx.add(link, scheme, static_cast<int>(k), "rate", rate);
    }
    ctx.add(link, scheme, -1, "sum_rate", total);
    if (discount < 1.0) ctx.add(link, scheme, -1, "effective_sum_rate", total * discount);
}

}  // namespace detail

/// One Monte-Carlo trial; every random draw comes from `rng`.
inline std::vector<Record> run_trial(const Scenario& sc, int trial, Rng& rng)
{
    std::vector<Record> out;
    detail::TrialContext ctx{&sc, trial, &out};
    const Json& t = sc.at("topology");
    const Json& c = sc.at("channel");
    const Json& a = sc.at("association");
    const Json& tr = sc.at("training");
    const Json& ul = sc.at("uplink");
    const Json& dl = sc.at("downlink");
    const Json& al = sc.at("allocation");

    NetworkTopology radio;
    radio.ap_height = t.at("ap_height");
    radio.ue_height = t.at("ue_height");
    radio.carrier_mhz = t.at("carrier_mhz");
    radio.ue_max_power = t.at("ue_max_power");
    radio.ap_max_power = t.at("ap_max_power");
    radio.noise_variance = t.at("noise_variance");
    const int M = t.at("aps"), K = t.at("ues");
    const auto topo = generate_topology(M, K, t.at("area").get<double>(),
                                        t.at("layout") == "grid" ? Layout::Grid : Layout::Random, rng, radio);

    ChannelConfig cc;
    if (c.at("model") == "double_slope")
        cc.model.variant = DoubleSlope{c.at("a"), c.at("b"), c.at("d_break")};
    else
        cc.model.variant = TripleSlope{c.at("d0"), c.at("d1"), radio.carrier_mhz, radio.ap_height, radio.ue_height};
    cc.model.shadowing_std_db = c.at("shadowing_db");
    cc.taps = c.at("taps");
    cc.pdp_decay = c.at("pdp_decay");
    cc.subcarriers = c.at("subcarriers");
    cc.min_distance = c.at("min_distance");
    cc.coherence_symbols = c.at("coherence_symbols");
    const auto ch = realize_channels(topo, cc, rng);
    const int N = cc.subcarriers;

    AssociationMap assoc;
    const std::string method = a.at("method");
    if (method == "distance") {
        assoc = associate_distance(topo, a.at("radius").get<double>());
    } else if (method == "full") {
        assoc = AssociationMap::full(M, K);
    } else {
        StopRule rule;
        rule.max_count = a.at("max_aps").get<int>();
        rule.threshold = db_to_linear(a.at("threshold_db").get<double>());
        assoc = associate_large_scale(ch.gain, rule);
    }
    const auto graph = build_factor_graph(assoc);
    ctx.add("plan", "-", -1, "components", static_cast<double>(graph.components.size()));
    ctx.add("plan", "-", -1, "disconnected_ues", static_cast<double>(assoc.disconnected_ues.size()));
    for (int k = 0; k < K; ++k) ctx.add("plan", "-", k, "aps_associated", static_cast<double>(assoc.aps_of_ue[k].size()));

    // Normalized units: channels scaled so the noise variance is one at full UE
    // power, or, with uplink.snr_db set, so the mean large-scale gain is one.
    double scale, snr;
    if (ul.at("snr_db").is_null()) {
        scale = std::sqrt(radio.ue_max_power / radio.noise_variance);
        snr = 1.0;
    } else {
        scale = 1.0 / std::sqrt(ch.gain.mean());
        snr = db_to_linear(ul.at("snr_db").get<double>());
    }
    auto scaled = [&](const std::vector<std::vector<CVec>>& f) {
        auto g = f;
        for (auto& row : g)
            for (auto& v : row)
                if (v.size() > 0) v *= scale;
        return g;
    };
    const auto freq = scaled(ch.freq);

    // Channel knowledge used by detectors and precoders.
    auto known = freq;
    double discount = 1.0;
    if (tr.at("enabled").get<bool>()) {
        const std::string mode = tr.at("mode");
        const EstimationMode em = mode == "single"             ? EstimationMode::Single
                                  : mode == "sample_covariance" ? EstimationMode::SampleCovariance
                                                                : EstimationMode::MuiSuppress;
        const double power = radio.ue_max_power * db_to_linear(tr.at("pilot_boost_db").get<double>());
        const auto plan = make_pilot_plan(K, N, tr.at("symbols").get<int>(), cc.taps, power, tr.at("pool").get<int>());
        const auto obs = simulate_pilot_rx(plan, ch, assoc, radio.noise_variance, rng);
        const auto est = estimate_channels(obs, plan, ch, assoc, em);
        ctx.add("ch", "-", -1, "nmse", estimation_nmse(est, ch));
        for (int m = 0; m < M; ++m)
            for (int k = 0; k < K; ++k)
                known[m][k] = est[m][k].size() > 0 ? CVec(scale * subcarrier_gains(est[m][k], 1.0, N))
                                                   : CVec(CVec::Zero(N));
        if (tr.at("effective_rate").get<bool>())
            discount = std::max(0.0, 1.0 - tr.at("symbols").get<double>() / cc.coherence_symbols);
    }

    AllocationProblem pr;
    pr.freq = known;
    pr.assoc = assoc;
    pr.snr = snr;
    pr.dl_noise = ul.at("snr_db").is_null() ? radio.ue_max_power / radio.ap_max_power : 1.0 / snr;
    pr.min_rate = RVec::Constant(K, al.at("min_rate").get<double>());
    AllocationOptions opt;
    opt.objective = al.at("objective") == "max_min" ? Objective::MaxMin : Objective::SumRate;
    opt.sharing = al.at("sharing");
    opt.order = al.at("order") == "strongest_first" ? GreedyOrder::StrongestFirst : GreedyOrder::WeakestFirst;
    opt.refine_iterations = al.at("refine_iterations");

    if (ul.at("enabled").get<bool>()) {
        opt.direction = Direction::Uplink;
        const auto plan = successive_optimize(pr, opt);
        const auto audit = audit_plan(plan);
        ctx.add("plan", "ul", -1, "audit_ok", audit.ok ? 1.0 : 0.0);
        for (int k = 0; k < K; ++k) ctx.add("plan", "ul", k, "meets_min_rate", plan.feasibility[k].meets ? 1.0 : 0.0);
        const UplinkScene truth = make_uplink_scene(freq, snr, plan.delta, plan.eta);
        const UplinkScene view = make_uplink_scene(known, snr, plan.delta, plan.eta);
        const Constellation cons = detail::constellation_of(ul.at("constellation"));
        const auto blk = simulate_uplink(truth, ul.at("blocks").get<int>(), cons, rng);
        for (const auto& dj : ul.at("detectors")) {
            const std::string det = dj;
            if (det == "apmp") {
                ApmpConfig acfg;
                acfg.max_iterations = ul.at("apmp").at("max_iterations");
                acfg.tolerance = ul.at("apmp").at("tolerance");
                acfg.damping = ul.at("apmp").at("damping");
                acfg.constellation = cons;
                long errs = 0, bits = 0, total = 0;
                int iters = 0;
                for (std::size_t u = 0; u < blk.y.size(); ++u) {
                    const auto r = apmp_detect(view, graph, blk.y[u], acfg);
                    iters = std::max(iters, r.max_iterations_used);
                    for (int k = 0; k < K; ++k)
                        for (std::size_t i = 0; i < r.decisions[k].size(); ++i) {
                            const int q = blk.symbols[u][k][i];
                            errs += r.decisions[k][i] != q;
                            bits += bit_errors(r.decisions[k][i], q);
                            ++total;
                        }
                }
                ctx.add("ul", det, -1, "ser", total ? static_cast<double>(errs) / total : 0.0);
                ctx.add("ul", det, -1, "ber", total ? static_cast<double>(bits) / (total * bits_per_symbol(cons)) : 0.0);
                ctx.add("ul", det, -1, "iterations", iters);
                continue;
            }
            std::vector<CMat> w;
            if (det == "gmmse") {
                w = gmmse_weights(view);
            } else if (det == "lmmse_sliced") {
                w = lmmse_column_sliced(view, assoc);
            } else {
                for (int k = 0; k < K; ++k) {
                    if (assoc.aps_of_ue[k].empty() || view.symbols(k) == 0) {
                        w.emplace_back(CMat::Zero(view.dim(), view.symbols(k)));
                        continue;
                    }
                    if (det == "lmmse_reduced") w.push_back(lmmse_reduced(view, assoc, k));
                    else
                        w.push_back(combined_weights(view, assoc, ch.gain, k,
                                                     det == "local_mrc" ? Combining::Mrc : Combining::Equal));
                }
            }
            detail::emit_link(ctx, "ul", det, output_sinrs(truth, w), discount);
            const auto emp = measure_detection(truth, w, blk, cons);
            for (int k = 0; k < K; ++k)
                if (emp.sinr[k].size() > 0) ctx.add("ul", det, k, "sinr_empirical", emp.sinr[k].mean());
            ctx.add("ul", det, -1, "ser", emp.symbols ? static_cast<double>(emp.symbol_errors) / emp.symbols : 0.0);
            ctx.add("ul", det, -1, "ber",
                    emp.symbols ? static_cast<double>(emp.bit_errors) / (emp.symbols * bits_per_symbol(cons)) : 0.0);
        }
    }

    if (dl.at("enabled").get<bool>()) {
        opt.direction = Direction::Downlink;
        pr.ap_cap = RVec::Constant(M, 1.0);
        const auto plan = successive_optimize(pr, opt);
        const auto audit = audit_plan(plan);
        ctx.add("plan", "dl", -1, "audit_ok", audit.ok ? 1.0 : 0.0);
        for (int k = 0; k < K; ++k) ctx.add("plan", "dl", k, "meets_min_rate", plan.feasibility[k].meets ? 1.0 : 0.0);
        const double noise = pr.dl_noise;
        for (const auto& pj : dl.at("precoders")) {
            const std::string name = pj;
            if (name == "tmmse") {
                // Plan SINRs are already evaluated on the CPU's channel view; re-evaluate on the truth.
                const RMat zero = RMat::Zero(K, N);
                const UplinkScene layout = make_uplink_scene(freq, 1.0, plan.delta, zero);
                std::vector<RVec> dv;
                for (int k = 0; k < K; ++k) {
                    RVec v(layout.symbols(k));
                    for (int i = 0; i < layout.symbols(k); ++i) v(i) = plan.dl(k, layout.assigned[k][i]);
                    dv.push_back(v);
                }
                const DownlinkScene truth = downlink_from(layout, dv, noise);
                const DownlinkScene view = downlink_from(make_uplink_scene(known, 1.0, plan.delta, zero), dv, noise);
                if (plan.dl.sum() > 0.0) {
                    const auto prec = tmmse_central_ofdm(mask_channels(view, assoc));
                    detail::emit_link(ctx, "dl", name, dl_sinrs(truth, prec, plan.a0), discount);
                    ctx.add("dl", name, -1, "a0", plan.a0);
                }
                continue;
            }
            // Distributed precoders: flat multi-antenna links, each AP splits its
            // unit power equally over the UEs it serves.
            const int U = name == "mf" ? 1 : dl.at("antennas").get<int>();
            RMat g = ch.gain * (scale * scale);
            const auto local = sample_antenna_channels(g, U, rng);
            RMat power = RMat::Zero(M, K);
            for (int m = 0; m < M; ++m)
                for (int k : assoc.ues_of_ap[m]) power(m, k) = 1.0 / static_cast<double>(assoc.ues_of_ap[m].size());
            try {
                DistributedPrecoder d;
                if (name == "mf") {
                    CMat h(M, K);
                    for (int m = 0; m < M; ++m)
                        for (int k = 0; k < K; ++k) h(m, k) = local[m][k](0);
                    d = dist_mf_precode(h, assoc, power);
                } else {
                    const double rho_cfg = dl.at("rho_reg");
                    const double rho = name == "tzf" ? 0.0 : (rho_cfg < 0.0 ? noise : rho_cfg);
                    d = dist_regmmse_precode(local, assoc, power, rho);
                }
                std::vector<RVec> sinr;
                double co = 0.0;
                for (int k = 0; k < K; ++k) {
                    if (assoc.aps_of_ue[k].empty()) {
                        sinr.emplace_back(RVec::Zero(0));
                        continue;
                    }
                    const auto terms = receive_terms(local, assoc, d, k);
                    co += terms.co_mui;
                    sinr.emplace_back(RVec::Constant(1, std::norm(terms.desired) / (terms.interference + noise)));
                }
                detail::emit_link(ctx, "dl", name, sinr, discount);
                ctx.add("dl", name, -1, "co_mui", co);
            } catch (const Error&) {
                ctx.add("dl", name, -1, "infeasible", 1.0);
            }
        }

        const double srho = dl.at("secrecy_rho");
        if (srho < 1.0 && M > K) {
            CMat h(M, K);
            for (int m = 0; m < M; ++m)
                for (int k = 0; k < K; ++k) h(m, k) = freq[m][k](0);
            const CMat p = tmmse_central_subcarrier(h, noise, RVec::Constant(K, 1.0 / K), &assoc);
            SecrecyConfig scfg{srho, artificial_noise_direction(h, rng)};
            double leak = 0.0;
            for (int k = 0; k < K; ++k) leak = std::max(leak, std::abs(h.col(k).dot(scfg.direction.conjugate())));
            const CVec he = complex_normal_vec(rng, M, ch.gain.mean() * scale * scale);
            ctx.add("dl", "secrecy", -1, "ue_leakage", leak);
            ctx.add("dl", "secrecy", -1, "eve_noise_power", (1.0 - srho) * std::norm(he.dot(scfg.direction.conjugate())));
        }
    }
    return out;
}

/// Runs every trial on a worker pool; trial t uses stream (seed, t), and records
/// are folded in trial order, so the output does not depend on `workers`.
inline ResultSet run_scenario(const Scenario& sc, int workers = 1)
{
    ResultSet rs;
    rs.hash = scenario_hash(sc);
    rs.seed = sc.seed;
    rs.trials = sc.trials;
    std::vector<std::vector<Record>> per(static_cast<std::size_t>(sc.trials));
    std::vector<std::string> errors(static_cast<std::size_t>(sc.trials));
    std::atomic<int> next{0};
    auto work = [&] {
        for (int i = next++; i < sc.trials; i = next++) {
            try {
                Rng rng = stream_rng(sc.seed, static_cast<std::uint64_t>(i));
                per[i] = run_trial(sc, i, rng);
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };
    const int w = std::max(1, std::min(workers, sc.trials));
    std::vector<std::thread> pool;
    for (int i = 1; i < w; ++i) pool.emplace_back(work);
    work();
    for (auto& th : pool) th.join();
    for (int i = 0; i < sc.trials; ++i)
        if (!errors[i].empty()) throw Error("trial " + std::to_string(i) + ": " + errors[i]);
    for (auto& v : per) rs.records.insert(rs.records.end(), v.begin(), v.end());
    return rs;
}

// ---------------------------------------------------------------- aggregation and export

inline constexpr const char* kCsvHeader = "scenario_hash,seed,trial,link,scheme,ue,metric,value";

inline std::string format_value(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

inline void write_csv(std::ostream& os, const ResultSet& rs)
{
    if (rs.records.empty()) throw Error("no results to export");
    os << kCsvHeader << '\n';
    for (const auto& r : rs.records)
        os << rs.hash << ',' << rs.seed << ',' << r.trial << ',' << r.link << ',' << r.scheme << ',' << r.ue << ','
           << r.metric << ',' << format_value(r.value) << '\n';
}

struct Summary {
    std::string link, scheme, metric;
    int ue = -1;
    long n = 0;
    double mean = 0.0;
    double stddev = 0.0;
    double half_width = 0.0;  // 95% normal-approximation interval

    double lo() const { return mean - half_width; }
    double hi() const { return mean + half_width; }
};

/// Mean and 95% interval per (link, scheme, ue, metric), in first-seen order.
inline std::vector<Summary> summarize(const ResultSet& rs)
{
    using Key = std::tuple<std::string, std::string, int, std::string>;
    std::map<Key, std::size_t> index;
    std::vector<Summary> out;
    std::vector<std::vector<double>> values;
    for (const auto& r : rs.records) {
        const Key key{r.link, r.scheme, r.ue, r.metric};
        auto it = index.find(key);
        if (it == index.end()) {
            it = index.emplace(key, out.size()).first;
            out.push_back(Summary{r.link, r.scheme, r.metric, r.ue});
            values.emplace_back();
        }
        values[it->second].push_back(r.value);
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto& v = values[i];
        auto& s = out[i];
        s.n = static_cast<long>(v.size());
        for (double x : v) s.mean += x;
        s.mean /= static_cast<double>(s.n);
        if (s.n > 1) {
            double ss = 0.0;
            for (double x : v) ss += (x - s.mean) * (x - s.mean);
            s.stddev = std::sqrt(ss / static_cast<double>(s.n - 1));
            s.half_width = 1.96 * s.stddev / std::sqrt(static_cast<double>(s.n));
        }
    }
    return out;
}

inline const Summary* find_summary(const std::vector<Summary>& s, const std::string& link, const std::string& scheme,
                                   const std::string& metric, int ue = -1)
{
    for (const auto& x : s)
        if (x.link == link && x.scheme == scheme && x.metric == metric && x.ue == ue) return &x;
    return nullptr;
}

inline void write_table(std::ostream& os, const ResultSet& rs, bool per_ue = false)
{
    if (rs.records.empty()) throw Error("no results to export");
    char line[256];
    std::snprintf(line, sizeof line, "%-5s %-14s %-20s %4s %8s %14s %14s\n", "link", "scheme", "metric", "ue", "n", "mean",
                  "ci95");
    os << "scenario " << rs.hash << "  seed " << rs.seed << "  trials " << rs.trials << '\n' << line;
    for (const auto& s : summarize(rs)) {
        if (!per_ue && s.ue >= 0) continue;
        std::snprintf(line, sizeof line, "%-5s %-14s %-20s %4d %8ld %14.6g %14.6g\n", s.link.c_str(), s.scheme.c_str(),
                      s.metric.c_str(), s.ue, s.n, s.mean, s.half_width);
        os << line;
    }
}

// ---------------------------------------------------------------- sweeps

struct SweepPoint {
    double x = 0.0;
    ResultSet results;
};

/// Sets a dotted scalar path in the scenario document.
inline Scenario with_value(const Scenario& base, const std::string& path, double value)
{
    const auto valid = sweepable_paths();
    if (std::find(valid.begin(), valid.end(), path) == valid.end()) {
        std::string list;
        for (const auto& p : valid) list += "\n  " + p;
        throw Error("unknown sweep parameter '" + path + "'; valid paths:" + list);
    }
    Json doc = base.doc;
    Json* node = &doc;
    std::size_t pos = 0;
    while (true) {
        const auto dot = path.find('.', pos);
        const std::string key = path.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
        node = &(*node)[key];
        if (dot == std::string::npos) break;
        pos = dot + 1;
    }
    const Json dflt = [&] {
        Json d = scenario_defaults();
        const Json* n = &d;
        std::size_t p = 0;
        while (true) {
            const auto dot = path.find('.', p);
            n = &n->at(path.substr(p, dot == std::string::npos ? std::string::npos : dot - p));
            if (dot == std::string::npos) break;
            p = dot + 1;
        }
        return *n;
    }();
    if (dflt.is_boolean()) *node = value != 0.0;
    else if (dflt.is_number_integer() && value == std::floor(value)) *node = static_cast<long long>(value);
    else *node = value;
    return parse_scenario(doc);
}

/// Independent runs per value. With common random numbers every point reuses the
/// base seed (paired comparison); otherwise point j uses a derived seed.
inline std::vector<SweepPoint> sweep(const Scenario& base, const std::string& path, const std::vector<double>& values,
                                     bool common_random_numbers = false, int workers = 1)
{
    if (values.empty()) throw Error("sweep needs at least one value");
    std::vector<SweepPoint> out;
    for (std::size_t j = 0; j < values.size(); ++j) {
        Scenario s = with_value(base, path, values[j]);
        if (!common_random_numbers) {
            s.seed = mix64(base.seed ^ (0x9e3779b97f4a7c15ULL * (j + 1)));
            s.doc["seed"] = s.seed;
        }
        out.push_back(SweepPoint{values[j], run_scenario(s, workers)});
    }
    return out;
}

/// Plot series: one line per (link, scheme, metric) scene-level quantity.
inline void write_plot(std::ostream& os, const std::vector<SweepPoint>& pts, const std::string& param)
{
    if (pts.empty()) throw Error("no results to export");
    os << "param,x,link,scheme,metric,mean,ci_lo,ci_hi\n";
    for (const auto& p : pts)
        for (const auto& s : summarize(p.results)) {
            if (s.ue >= 0) continue;
            os << param << ',' << format_value(p.x) << ',' << s.link << ',' << s.scheme << ',' << s.metric << ','
               << format_value(s.mean) << ',' << format_value(s.lo()) << ',' << format_value(s.hi()) << '\n';
        }
}

}  // namespace uccf
