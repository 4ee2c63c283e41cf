// cilab: verify, run and report from the command line.
//
// exit codes: 0 ok, 1 i/o, 2 geometry, 3 ball, 4 capacity, 5 no seed, 64 usage

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

#include "cilab/diagnostics.hpp"
#include "cilab/verify.hpp"

using namespace cilab;
using nlohmann::json;

namespace {

enum Exit { Ok = 0, Io = 1, Geometry = 2, Ball = 3, Capacity = 4, NoSeed = 5, Usage = 64 };

void print_checks(const std::vector<Check>& cs) {
    for (auto& c : cs) std::printf("%-28s %-4s %.3e  (tol %.1e)\n", c.name.c_str(), c.pass() ? "ok" : "FAIL", c.value, c.tol);
}

int verify_geometry(const std::string& family_file, const std::string& export_file, int n, bool as_json) {
    FrequencyFamily fe, fo;
    try {
        if (family_file.empty()) {
            std::tie(fe, fo) = standard_families();
        } else {
            std::ifstream f(family_file);
            if (!f) {
                std::cerr << "cannot read " << family_file << "\n";
                return Io;
            }
            auto j = json::parse(f);
            fe = family_from_json(j.at("families").at(0));
            fo = family_from_json(j.at("families").at(1));
        }
    } catch (const FamilyError& e) {
        if (as_json)
            std::cout << json{{"ok", false}, {"invariant", e.invariant}, {"message", e.what()}}.dump(2) << "\n";
        else
            std::cerr << "invariant violated: " << e.invariant << "\n";
        return Geometry;
    } catch (const json::exception& e) {
        std::cerr << "malformed family file: " << e.what() << "\n";
        if (as_json) std::cout << json{{"ok", false}, {"invariant", "format"}, {"message", e.what()}}.dump(2) << "\n";
        return Geometry;
    }
    if (!export_file.empty()) {
        std::ofstream o(export_file);
        o << families_to_json(fe, fo).dump(2) << "\n";
    }
    auto checks = geometry_checks(fe, fo, n);
    bool ok = all_pass(checks);
    if (as_json) {
        json j{{"ok", ok}, {"grid", n}, {"r0", {{"e", fe.r0}, {"o", fo.r0}}}, {"checks", to_json(checks)}};
        std::cout << j.dump(2) << "\n";
    } else {
        print_checks(checks);
        std::printf("r0: e %.12g  o %.12g\n", fe.r0, fo.r0);
    }
    if (!ok) {
        for (auto& c : checks)
            if (!c.pass()) std::cerr << "invariant violated: " << c.name << "\n";
        return Geometry;
    }
    return Ok;
}

int verify_operators(int n, int fields, bool as_json) {
    auto checks = operator_checks(n, fields);
    bool ok = all_pass(checks);
    if (as_json)
        std::cout << json{{"ok", ok}, {"grid", n}, {"fields", fields}, {"checks", to_json(checks)}}.dump(2) << "\n";
    else
        print_checks(checks);
    return ok ? Ok : Io;
}

json ledger_json(const Ledger& L) {
    json rows = json::array();
    for (auto& r : L.rows)
        rows.push_back({{"name", r.name}, {"q", r.q}, {"ln_lhs", r.ln_lhs}, {"ln_rhs", r.ln_rhs}, {"slack", r.slack()}, {"gate", r.gate},
                        {"pass", r.pass()}});
    return {{"rows", rows}, {"not_checked", L.not_checked}, {"gate_pass", L.gate_pass()}, {"all_pass", L.all_pass()}};
}

// λ₀ either given or searched; nullopt means the search found nothing
std::optional<ParameterSchedule> schedule_for(const RunConfig& c) {
    double l0 = c.lambda0;
    if (c.search) {
        auto s = seed_search(c.eps0, std::max(c.stages, 1));
        if (!s) return std::nullopt;
        l0 = *s;
    }
    return ParameterSchedule(c.eps0, l0, c.stages, c.C0);
}

int params(RunConfig c, const std::string& out, bool as_json) {
    auto s = schedule_for(c);
    if (!s) {
        std::cerr << "no lambda0 <= 2^20 passes the global ledger for eps0 = " << c.eps0 << "\n";
        return NoSeed;
    }
    int Q = c.stages;
    auto L = check_global_inequalities(*s, Q);
    double d = c.d > 0 ? c.d : 0.5 * (1 + s->d_min());
    json cover = json::array();
    for (int q = 1; q <= std::max(Q, 1); ++q) {
        auto cs = hausdorff_cover(*s, q, d);
        cover.push_back({{"q", q}, {"ln_sum", cs.diverges ? json(nullptr) : json(cs.ln_value)}, {"diverges", cs.diverges}, {"terms", cs.terms}});
    }
    json j{{"eps0", s->eps0},       {"lambda0", s->lambda0},     {"C0", s->C0},      {"Q", Q},
           {"searched", c.search},  {"d_min", s->d_min()},       {"d", d},           {"schedule", schedule_json(*s, Q)},
           {"ledger", ledger_json(L)}, {"cover", cover}};

    std::vector<std::string> names;
    for (auto& r : L.rows)
        if (std::find(names.begin(), names.end(), r.name) == names.end()) names.push_back(r.name);
    auto slack = [&](const std::string& name, int q) -> std::string {
        for (auto& r : L.rows)
            if (r.name == name && (r.q == q || r.q < 0)) return fmt_double(r.slack());
        return "";
    };
    if (!out.empty()) {
        std::filesystem::create_directories(out);
        std::ofstream(std::filesystem::path(out) / "params.json") << j.dump(2) << "\n";
        std::ofstream f(std::filesystem::path(out) / "params.csv");
        f << "q,lambda,delta,mu,ell";
        for (auto& n : names) f << ",slack_" << n;
        f << "\n";
        for (int q = 0; q <= Q; ++q) {
            f << q << ',' << fmt_double(s->lambda(q)) << ',' << fmt_double(s->delta(q)) << ',' << (q ? fmt_double(s->mu(q)) : "") << ','
              << fmt_double(s->ell(q));
            for (auto& n : names) f << ',' << slack(n, q);
            f << "\n";
        }
    }
    if (as_json) {
        std::cout << j.dump(2) << "\n";
    } else {
        std::printf("eps0 %.6g  lambda0 %.17g  eps1 %.6g  alpha %.6g\n", s->eps0, s->lambda0, s->eps1, s->alpha);
        std::printf("d_min %.8f\n", s->d_min());
        std::printf("%3s %14s %14s %14s %14s\n", "q", "lambda", "delta", "mu", "ell");
        for (int q = 0; q <= Q; ++q)
            std::printf("%3d %14.6g %14.6g %14.6g %14.6g\n", q, s->lambda(q), s->delta(q), q ? s->mu(q) : 0.0, s->ell(q));
        int fails = 0;
        for (auto& r : L.rows) fails += !r.pass();
        std::printf("ledger: %zu rows, %d failing, gate %s\n", L.rows.size(), fails, L.gate_pass() ? "pass" : "fail");
        std::printf("cover sum at d = %.8f:\n", d);
        for (auto& r : cover)
            std::printf("  q = %d  %s\n", r["q"].get<int>(), r["diverges"].get<bool>() ? "diverges" : fmt_double(r["ln_sum"].get<double>()).c_str());
    }
    return Ok;
}

int run(RunConfig c, const std::string& out, bool as_json) {
    auto s = schedule_for(c);
    if (!s) {
        std::cerr << "no lambda0 <= 2^20 passes the global ledger for eps0 = " << c.eps0 << "\n";
        return NoSeed;
    }
    c.lambda0 = s->lambda0;
    Grid g(c.grid);
    if (2 * s->lambda0 > g.kcut()) {
        std::cerr << "grid n = " << c.grid << " cannot hold the initial frequency " << s->lambda0 << "\n";
        return Capacity;
    }
    for (int q = 1; q <= c.stages; ++q)
        if (!s->lambda_exact(q) || c.grid < 8 * s->lambda(q)) {
            std::cerr << "stage " << q << " needs n >= 8*lambda_q = " << 8 * s->lambda(q) << ", grid has n = " << c.grid << "\n";
            return Capacity;
        }
    try {
        auto rep = run_pipeline(c, *s);
        emit_report(rep, out);
        if (as_json) {
            std::cout << manifest_json(rep).dump(2) << "\n";
        } else {
            for (auto& st : rep.stages) {
                double worst = 0;
                for (auto& r : st.series) worst = std::max(worst, r.residual);
                int skipped = 0, failed = 0;
                for (auto& r : st.ledger) {
                    skipped += r.kind == "skipped";
                    failed += r.kind != "skipped" && !r.pass();
                }
                std::printf("stage %d  support [%.6f, %.6f]  residual %.3e  ledger %zu rows (%d over bound, %d skipped)\n", st.stage,
                            st.support_lo, st.support_hi, worst, st.ledger.size(), failed, skipped);
            }
            std::printf("report written to %s\n", out.c_str());
        }
    } catch (const BallViolation& e) {
        std::cerr << e.what() << "\n";
        return Ball;
    } catch (const GridCapacityError& e) {
        std::cerr << e.what() << "\n";
        return Capacity;
    }
    return Ok;
}

int report(const std::string& dir, bool as_json) {
    namespace fs = std::filesystem;
    fs::path d(dir);
    std::ifstream mf(d / "manifest.json"), lf(d / "ledger.csv");
    if (!mf || !lf) {
        std::cerr << "no report in " << dir << "\n";
        return Io;
    }
    auto m = json::parse(mf);
    auto ledger = read_ledger_csv(lf);
    json summary = json::array();
    for (auto& st : m.at("stages")) {
        int q = st.at("stage");
        std::ifstream tf(d / (q == int(m["stages"].size()) - 1 ? std::string("timeseries.csv") : "timeseries_stage" + std::to_string(q) + ".csv"));
        auto series = read_timeseries_csv(tf);
        double worst = 0;
        for (auto& r : series) worst = std::max(worst, r.residual);
        int rows = 0, skipped = 0, over = 0;
        double max_ratio = 0;
        for (auto& r : ledger)
            if (r.q == q) {
                ++rows;
                if (r.kind == "skipped") {
                    ++skipped;
                    continue;
                }
                over += !r.pass();
                if (r.bound > 0) max_ratio = std::max(max_ratio, r.ratio());
            }
        summary.push_back({{"stage", q}, {"samples", series.size()}, {"max_residual", worst}, {"rows", rows}, {"skipped", skipped},
                           {"over_bound", over}, {"max_ratio", max_ratio}});
    }
    if (as_json) {
        std::cout << json{{"schema_version", m.at("schema_version")}, {"stages", summary}}.dump(2) << "\n";
    } else {
        std::printf("schema %d, code %s\n", m.at("schema_version").get<int>(), m.value("code_version", "?").c_str());
        for (auto& s : summary)
            std::printf("stage %d  %zu samples  residual %.3e  %d rows (%d over bound, %d skipped)  max measured/bound %.3g\n", s["stage"].get<int>(),
                        s["samples"].get<std::size_t>(), s["max_residual"].get<double>(), s["rows"].get<int>(), s["over_bound"].get<int>(),
                        s["skipped"].get<int>(), s["max_ratio"].get<double>());
    }
    return Ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"convex integration lab"};
    app.require_subcommand(1);
    bool as_json = false;
    app.add_flag("--json", as_json, "machine-readable output");

    RunConfig cfg;
    std::string out;
    auto schedule_flags = [&](CLI::App* sc) {
        sc->add_option("--eps0", cfg.eps0, "epsilon_0 in (0, 0.1]");
        sc->add_option("--lambda0", cfg.lambda0, "initial frequency");
        sc->add_option("--stages", cfg.stages, "number of stages Q");
        sc->add_option("--c0", cfg.C0, "stress normalization constant");
        sc->add_option("--d", cfg.d, "cover dimension; default (1 + d_min)/2");
        sc->add_flag("--search", cfg.search, "search for the smallest passing lambda0");
        sc->add_flag("--json", as_json, "machine-readable output");
    };

    auto geo = app.add_subcommand("verify-geometry", "frequency families, amplitude map and Beltrami identities");
    std::string family_file, export_file;
    int geo_grid = 32;
    geo->add_option("--family", family_file, "family file to verify instead of the built-in pair");
    geo->add_option("--export-family", export_file, "write the verified families as JSON");
    geo->add_option("--grid", geo_grid, "grid for the Beltrami identities")->check(CLI::Range(8, 256));
    geo->add_flag("--json", as_json, "machine-readable output");

    auto ops = app.add_subcommand("verify-operators", "inverse divergence and scaling probes");
    int ops_grid = 32, fields = 5;
    ops->add_option("--grid", ops_grid, "grid for the random fields")->check(CLI::Range(8, 256));
    ops->add_option("--fields", fields, "number of random fields")->check(CLI::PositiveNumber);
    ops->add_flag("--json", as_json, "machine-readable output");

    auto runc = app.add_subcommand("run", "initial triple and Q stages with reports");
    schedule_flags(runc);
    runc->add_option("--grid", cfg.grid, "grid points per side")->check(CLI::Range(8, 1024));
    runc->add_option("--substeps", cfg.substeps, "RK4 substeps per flow")->check(CLI::PositiveNumber);
    runc->add_option("--samples", cfg.samples, "equispaced time samples")->check(CLI::Range(2, 100000));
    runc->add_option("--out", out, "report directory")->default_val("cilab_run");
    bool snapshots = false;
    runc->add_flag("--snapshots", snapshots, "also write v, p, R at every sampled time as binary snapshots");

    auto par = app.add_subcommand("params", "parameter schedule, inequality ledger and cover sums");
    schedule_flags(par);
    par->add_option("--out", out, "write params.json and params.csv here");

    auto rep = app.add_subcommand("report", "summarize a report directory");
    std::string in_dir;
    rep->add_option("--out", in_dir, "report directory")->required();
    rep->add_flag("--json", as_json, "machine-readable output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? Ok : Usage;
    }

    try {
        if (*geo) return verify_geometry(family_file, export_file, geo_grid, as_json);
        if (*ops) return verify_operators(ops_grid, fields, as_json);
        if (*runc || *par) {
            // validate before any compute
            ParameterSchedule probe(cfg.eps0, cfg.search ? 2.0 : cfg.lambda0, cfg.stages, cfg.C0);
            if (cfg.d != 0 && !(cfg.d > 0 && cfg.d < 1)) throw std::invalid_argument("d must lie in (0, 1)");
            if (*runc && !cfg.search && cfg.lambda0 != std::floor(cfg.lambda0)) throw std::invalid_argument("lambda0 must be an integer");
        }
        if (*runc) {
            if (snapshots) cfg.out = out;
            return run(cfg, out, as_json);
        }
        if (*par) return params(cfg, out, as_json);
        if (*rep) return report(in_dir, as_json);
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage: " << e.what() << "\n";
        return Usage;
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return Io;
    }
    return Usage;
}
