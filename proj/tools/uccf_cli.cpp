// uccf: run, sweep and validate scenario files.

#include "uccf/engine.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <filesystem>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

struct Common {
    std::string scenario;
    std::optional<std::uint64_t> seed;
    std::optional<int> trials;
    int workers = 1;
    std::string out;
    std::string format = "table";
};

uccf::Scenario load(const Common& c)
{
    auto s = uccf::load_scenario(c.scenario);
    uccf::Json doc = s.doc;
    if (c.seed) doc["seed"] = *c.seed;
    if (c.trials) doc["trials"] = *c.trials;
    return uccf::parse_scenario(doc);
}

/// Writes to <out>/<name> when --out is given, otherwise to stdout.
template <class F>
void emit(const Common& c, const std::string& name, F&& write)
{
    if (c.out.empty()) {
        write(std::cout);
        return;
    }
    std::error_code ec;
    fs::create_directories(c.out, ec);
    const fs::path p = fs::path(c.out) / name;
    std::ofstream f(p);
    if (!f) throw uccf::Error("cannot write '" + p.string() + "'");
    write(f);
    if (!f) throw uccf::Error("write failed for '" + p.string() + "'");
    std::cerr << "wrote " << p.string() << '\n';
}

std::vector<double> parse_values(const std::string& list)
{
    std::vector<double> v;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        std::size_t used = 0;
        double x = 0.0;
        try {
            x = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != item.size()) throw uccf::Error("bad sweep value '" + item + "'");
        v.push_back(x);
    }
    if (v.empty()) throw uccf::Error("sweep needs at least one value");
    return v;
}

void add_common(CLI::App* app, Common& c, bool formats)
{
    app->add_option("scenario", c.scenario, "Scenario JSON file")->required();
    app->add_option("--seed", c.seed, "Override the master seed");
    app->add_option("--trials", c.trials, "Override the trial count")->check(CLI::PositiveNumber);
    app->add_option("--workers", c.workers, "Worker threads")->check(CLI::PositiveNumber);
    app->add_option("--out", c.out, "Output directory (default: stdout)");
    if (formats) app->add_option("--format", c.format, "csv | table | plot")->check(CLI::IsMember({"csv", "table", "plot"}));
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Monte-Carlo simulator for user-centric cell-free OFDM networks"};
    app.require_subcommand(1);

    Common run_opts, sweep_opts, val_opts;
    bool per_ue = false;
    auto* run = app.add_subcommand("run", "Run a scenario");
    add_common(run, run_opts, true);
    run->add_flag("--per-ue", per_ue, "Include per-UE rows in the table");

    std::string param, values;
    bool crn = false;
    auto* sw = app.add_subcommand("sweep", "Sweep one scalar scenario parameter");
    add_common(sw, sweep_opts, true);
    sw->add_option("--param", param, "Dotted scenario path, e.g. uplink.snr_db")->required();
    sw->add_option("--values", values, "Comma-separated values")->required();
    sw->add_flag("--crn", crn, "Common random numbers across sweep points");

    auto* val = app.add_subcommand("validate", "Check a scenario file without running it");
    add_common(val, val_opts, false);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*val) {
            const auto s = load(val_opts);
            std::cout << "ok " << uccf::scenario_hash(s) << " trials=" << s.trials << " seed=" << s.seed << '\n';
            return 0;
        }
        if (*run) {
            const auto s = load(run_opts);
            const auto t0 = std::chrono::steady_clock::now();
            const auto rs = uccf::run_scenario(s, run_opts.workers);
            // Wall time stays out of the CSV so reruns compare bit-for-bit.
            std::cerr << "elapsed "
                      << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s\n";
            if (run_opts.format == "csv") {
                emit(run_opts, "results.csv", [&](std::ostream& os) { uccf::write_csv(os, rs); });
            } else if (run_opts.format == "plot") {
                emit(run_opts, "plot.csv", [&](std::ostream& os) {
                    uccf::write_plot(os, {uccf::SweepPoint{0.0, rs}}, "none");
                });
            } else {
                emit(run_opts, "summary.txt", [&](std::ostream& os) { uccf::write_table(os, rs, per_ue); });
            }
            return 0;
        }
        if (*sw) {
            const auto s = load(sweep_opts);
            const auto pts = uccf::sweep(s, param, parse_values(values), crn, sweep_opts.workers);
            if (sweep_opts.format == "csv") {
                emit(sweep_opts, "sweep.csv", [&](std::ostream& os) {
                    for (std::size_t j = 0; j < pts.size(); ++j) {
                        std::ostringstream one;
                        uccf::write_csv(one, pts[j].results);
                        std::string text = one.str();
                        if (j > 0) text = text.substr(text.find('\n') + 1);  // single header row
                        os << text;
                    }
                });
            } else if (sweep_opts.format == "plot") {
                emit(sweep_opts, "plot.csv", [&](std::ostream& os) { uccf::write_plot(os, pts, param); });
            } else {
                emit(sweep_opts, "summary.txt", [&](std::ostream& os) {
                    for (const auto& p : pts) {
                        os << param << " = " << uccf::format_value(p.x) << '\n';
                        uccf::write_table(os, p.results);
                        os << '\n';
                    }
                });
            }
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
