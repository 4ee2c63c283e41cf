#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "iteration.hpp"
#include "norms.hpp"
#include "parameters.hpp"
#include "snapshot.hpp"

namespace cilab {

constexpr int report_schema_version = 1;
constexpr const char* code_version = "0.3.0";

// ---- residuals ------------------------------------------------------------

inline double residual_from(const VectorField& dvdt, const VectorField& v, const ScalarField& p, const TensorField& R) {
    VectorField d = dvdt + divergence(outer(v)) + gradient(p) - divergence(R);
    double scale = cN_norm(v, 1) * cN_norm(v, 0) + cN_norm(R, 1) + 1e-14;
    return sup_norm(d) / scale;
}

// ∂_t v by a centered difference of step dt
inline double euler_reynolds_residual(const EulerReynoldsTriple& T, double t, double dt = 1e-5) {
    auto a = T.v.get(t + dt), b = T.v.get(t - dt);
    VectorField dvdt = (1.0 / (2 * dt)) * (*a - *b);
    return residual_from(dvdt, *T.v.get(t), *T.p.get(t), *T.R.get(t));
}

inline double analytic_residual(const EulerReynoldsTriple& T, double t) {
    if (!T.dv_dt) throw std::invalid_argument("triple carries no analytic time derivative");
    return residual_from(T.dv_dt(t), *T.v.get(t), *T.p.get(t), *T.R.get(t));
}

// ---- sampling -------------------------------------------------------------

// equispaced over the support, plus slice times l/μ and overlap midpoints (l+½)/μ
inline std::vector<double> sample_times(const EulerReynoldsTriple& T, int samples = 33) {
    std::vector<double> ts;
    double lo = T.support_lo, hi = T.support_hi;
    if (samples == 1) ts.push_back(0.5 * (lo + hi));
    for (int i = 0; samples > 1 && i < samples; ++i) ts.push_back(lo + (hi - lo) * i / (samples - 1));
    if (T.step) {
        double mu = T.step->cutoffs().mu;
        for (double l = std::ceil(lo * mu); l <= std::floor(hi * mu); l += 1) {
            ts.push_back(l / mu);
            if ((l + 0.5) / mu <= hi) ts.push_back((l + 0.5) / mu);
        }
    }
    std::sort(ts.begin(), ts.end());
    ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
    return ts;
}

// ---- reports --------------------------------------------------------------

struct TimeRow {
    double t = 0, residual = 0, energy = 0, holder13_v = 0, holder23_p = 0;
    std::string in_bad_set = "out";
    bool operator==(const TimeRow&) const = default;
};

// measured ≤ bound at one time; lemma rows carry the constant-free right side and
// the ratio is the empirical constant
struct EstimateRow {
    std::string kind = "estimate";  // estimate | lemma | skipped
    std::string name;
    int q = 0;
    double t = 0;
    int l = 0;
    double measured = 0, bound = 0;
    bool pass() const { return kind == "skipped" || measured <= bound; }
    double ratio() const { return bound > 0 ? measured / bound : std::numeric_limits<double>::infinity(); }
    bool operator==(const EstimateRow& o) const {
        return kind == o.kind && name == o.name && q == o.q && t == o.t && l == o.l && measured == o.measured && bound == o.bound;
    }
};

struct StageReport {
    int stage = 0;
    double support_lo = 0, support_hi = 0;
    std::vector<TimeRow> series;
    std::vector<EstimateRow> ledger;
    std::vector<std::string> snapshots;  // relative to the report directory
};

struct RunConfig {
    double eps0 = 0.05, lambda0 = 4, C0 = 1, d = 0;
    int stages = 1, grid = 128, substeps = 16, samples = 33;
    bool search = false;
    std::string out;  // when set, run_pipeline writes field snapshots under out/snapshots
};

struct RunReport {
    RunConfig config;
    std::vector<StageReport> stages;
    nlohmann::json schedule = nlohmann::json::array();
};

// largest c_k = γ_k² over the operator-norm ball |R − Id| ≤ r: c_k is linear, so its
// maximum is c_k(Id) + r·(nuclear norm of the functional)
inline double gamma_sq_ball_max(const FrequencyFamily& f, double r) {
    detail::FamilyKernel K(f);
    double best = 0;
    for (auto& G : K.G) {
        Mat3 W;
        W << G[0], G[1] / 2, G[2] / 2, G[1] / 2, G[3], G[4] / 2, G[2] / 2, G[4] / 2, G[5];
        Eigen::SelfAdjointEigenSolver<Mat3> es(W);
        double nuc = es.eigenvalues().cwiseAbs().sum();
        best = std::max(best, G[0] + G[3] + G[5] + r * nuc);
    }
    return best;
}

namespace detail {

inline void stage_rows(std::vector<EstimateRow>& out, const std::string& base, int q, double t, double lhs_v, double lhs_p,
                       double lhs_R, const ParameterSchedule& s, bool sharp) {
    double lq = s.ln_lambda(q), lq1 = s.ln_lambda(q + 1), e = s.eps0;
    auto row = [&](const char* name, double m, double ln_bound) {
        out.push_back({"estimate", base + name, q, t, 0, m, std::exp(ln_bound)});
    };
    if (lhs_v >= 0) row("v_iter", lhs_v, (-0.2 + e) * lq);
    if (lhs_p >= 0) row("p_iter", lhs_p, (-0.4 + 2 * e) * lq);
    // the stress bounds carry the 1/C₀ factor
    double c0 = std::log(s.C0);
    row("R_iter", lhs_R, (-0.4 + 2 * e) * lq1 - c0);
    if (sharp) {
        if (lhs_v >= 0) row("sharp1", lhs_v, (-1.0 / 3 + e) * lq);
        if (lhs_p >= 0) row("sharp2", lhs_p, (-2.0 / 3 + 2 * e) * lq);
        row("sharp3", lhs_R, (-2.0 / 3 + 2 * e) * lq1 - c0);
    } else {
        for (const char* n : {"sharp1", "sharp2", "sharp3"}) out.push_back({"skipped", n, q, t, 0, 0, 0});
    }
}

}  // namespace detail

// One report per triple. For q ≥ 1, prev is stage q − 1 and the ledger measures
// w_q = v_q − v_{q−1} and p_q − p_{q−1}.
inline StageReport stage_report(const EulerReynoldsTriple& T, const EulerReynoldsTriple* prev, const ParameterSchedule& s,
                                const std::vector<double>& times, double dt = 1e-5, const std::vector<double>* v0_sup = nullptr,
                                std::vector<double>* w_sum = nullptr, const std::filesystem::path* report_dir = nullptr) {
    StageReport R;
    int q = T.stage;
    R.stage = q;
    R.support_lo = T.support_lo;
    R.support_hi = T.support_hi;
    auto next_bad = bad_set(s, q + 1);
    auto own_bad = bad_set(s, q);
    const auto& fam = standard_families();
    double gmax = std::max(gamma_sq_ball_max(fam.first, std::min(fam.first.r0, fam.second.r0)),
                           gamma_sq_ball_max(fam.second, std::min(fam.first.r0, fam.second.r0)));
    for (std::size_t i = 0; i < times.size(); ++i) {
        double t = times[i];
        TimeRow row;
        row.t = t;
        auto Rs = T.R.get(t);  // the stress snapshot first, so the kinematic ones reuse it
        auto v = T.v.get(t);
        auto p = T.p.get(t);
        auto va = T.v.get(t + dt), vb = T.v.get(t - dt);
        VectorField dvdt = (1.0 / (2 * dt)) * (*va - *vb);
        // the initial triple has a closed-form ∂_t v; later stages are checked against the difference quotient
        row.residual = q == 0 && T.dv_dt ? residual_from(T.dv_dt(t), *v, *p, *Rs) : residual_from(dvdt, *v, *p, *Rs);
        row.energy = energy(*v);
        row.holder13_v = holder_seminorm(*v, 1.0 / 3.0);
        row.holder23_p = holder_seminorm(*p, 2.0 / 3.0);
        row.in_bad_set = to_string(next_bad.contains(t));
        R.series.push_back(row);
        if (report_dir) {
            char stem[48];
            std::snprintf(stem, sizeof stem, "snapshots/stage%d_t%03zu_", q, i);
            std::filesystem::create_directories(*report_dir / "snapshots");
            for (auto [tag, write] : {std::pair<const char*, int>{"v", 0}, {"p", 1}, {"R", 2}}) {
                std::string name = std::string(stem) + tag + ".eulr";
                auto path = (*report_dir / name).string();
                if (write == 0) write_snapshot(path, *v);
                if (write == 1) write_snapshot(path, *p);
                if (write == 2) write_snapshot(path, *Rs);
                R.snapshots.push_back(name);
            }
        }

        double lhs_R = cN_norm(*Rs, 0) + cN_norm(*Rs, 1) / s.lambda(q);
        double lhs_v = -1, lhs_p = -1;
        if (prev) {
            double lam = s.lambda(q);
            VectorField w = *v - *prev->v.get(t);
            VectorField dw = dvdt - (1.0 / (2 * dt)) * (*prev->v.get(t + dt) - *prev->v.get(t - dt));
            lhs_v = cN_norm(w, 0) + cN_norm(dw, 0) / lam + cN_norm(w, 1) / lam;
            ScalarField dp = *p - *prev->p.get(t);
            ScalarField dpt = (1.0 / (2 * dt)) * ((*T.p.get(t + dt) - *prev->p.get(t + dt)) - (*T.p.get(t - dt) - *prev->p.get(t - dt)));
            lhs_p = cN_norm(dp, 0) + cN_norm(dpt, 0) / lam + cN_norm(dp, 2) / (lam * lam);
            if (w_sum && t >= -0.125 && t <= 0.125) (*w_sum)[i] += cN_norm(w, 0);
        }
        bool sharp = own_bad.contains(t) == Membership::Out;
        detail::stage_rows(R.ledger, "", q, t, lhs_v, lhs_p, lhs_R, s, sharp);
        if (prev && w_sum && v0_sup && t >= -0.125 && t <= 0.125)
            R.ledger.push_back({"estimate", "nontrivial_req", q, t, 0, (*w_sum)[i], 0.5 * (*v0_sup)[i]});

        if (T.step) {
            auto S = T.step->at(t);
            double dq = s.delta(q - 1), dq1 = s.delta(q), lam_prev = s.lambda(q - 1), mu = T.step->cutoffs().mu;
            for (auto& r : S->slices) {
                if (r.rho == 0) continue;
                R.ledger.push_back({"lemma", "dphi", q, t, r.l, r.dphi_dev, std::sqrt(dq) * lam_prev / mu});
                R.ledger.push_back({"lemma", "a_kl", q, t, r.l, r.a_max, std::sqrt(dq1)});
                R.ledger.push_back({"lemma", "a_kl_gamma", q, t, r.l, r.a_max, std::sqrt(r.rho * gmax)});
                R.ledger.push_back({"lemma", "ball", q, t, r.l, r.ball_radius, T.step->r0()});
            }
            R.ledger.push_back({"lemma", "w_c", q, t, 0, sup_norm(S->w_c), std::sqrt(dq1) * std::sqrt(dq) * lam_prev / mu});
        }
    }
    return R;
}

// ---- serialization ----------------------------------------------------------

inline std::string fmt_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline void write_timeseries_csv(std::ostream& os, const std::vector<TimeRow>& rows) {
    os << "t,residual,energy,holder13_v,holder23_p,in_bad_set\n";
    for (auto& r : rows)
        os << fmt_double(r.t) << ',' << fmt_double(r.residual) << ',' << fmt_double(r.energy) << ',' << fmt_double(r.holder13_v)
           << ',' << fmt_double(r.holder23_p) << ',' << r.in_bad_set << '\n';
}

inline void write_ledger_csv(std::ostream& os, const std::vector<EstimateRow>& rows) {
    os << "kind,name,q,t,l,measured,bound,pass\n";
    for (auto& r : rows)
        os << r.kind << ',' << r.name << ',' << r.q << ',' << fmt_double(r.t) << ',' << r.l << ',' << fmt_double(r.measured) << ','
           << fmt_double(r.bound) << ',' << (r.pass() ? 1 : 0) << '\n';
}

namespace detail {

inline std::vector<std::vector<std::string>> read_csv(std::istream& is, const std::string& header) {
    std::string line;
    if (!std::getline(is, line) || line != header) throw std::runtime_error("unexpected CSV header: " + line);
    std::vector<std::vector<std::string>> out;
    while (std::getline(is, line)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cells.push_back(c);
        out.push_back(cells);
    }
    return out;
}

// stod rejects subnormals
inline double to_double(const std::string& s) {
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') throw std::runtime_error("not a number: " + s);
    return v;
}

}  // namespace detail

inline std::vector<TimeRow> read_timeseries_csv(std::istream& is) {
    std::vector<TimeRow> rows;
    for (auto& c : detail::read_csv(is, "t,residual,energy,holder13_v,holder23_p,in_bad_set")) {
        if (c.size() != 6) throw std::runtime_error("timeseries row has " + std::to_string(c.size()) + " cells");
        rows.push_back({detail::to_double(c[0]), detail::to_double(c[1]), detail::to_double(c[2]), detail::to_double(c[3]), detail::to_double(c[4]), c[5]});
    }
    return rows;
}

inline std::vector<EstimateRow> read_ledger_csv(std::istream& is) {
    std::vector<EstimateRow> rows;
    for (auto& c : detail::read_csv(is, "kind,name,q,t,l,measured,bound,pass")) {
        if (c.size() != 8) throw std::runtime_error("ledger row has " + std::to_string(c.size()) + " cells");
        rows.push_back({c[0], c[1], std::stoi(c[2]), detail::to_double(c[3]), std::stoi(c[4]), detail::to_double(c[5]), detail::to_double(c[6])});
    }
    return rows;
}

inline nlohmann::json schedule_json(const ParameterSchedule& s, int Q, const std::vector<double>& mu_run = {}) {
    auto a = nlohmann::json::array();
    for (int q = 0; q <= Q + 1; ++q) {
        nlohmann::json r = {{"q", q}, {"lambda", s.lambda(q)}, {"delta", s.delta(q)}, {"ell", s.ell(q)}};
        if (q >= 1) r["mu"] = s.mu(q);
        if (q >= 1 && q - 1 < int(mu_run.size())) r["mu_run"] = mu_run[q - 1];
        a.push_back(r);
    }
    return a;
}

inline nlohmann::json manifest_json(const RunReport& r) {
    nlohmann::json m;
    m["schema_version"] = report_schema_version;
    m["code_version"] = code_version;
    const auto& c = r.config;
    m["config"] = {{"eps0", c.eps0}, {"lambda0", c.lambda0}, {"stages", c.stages}, {"C0", c.C0}, {"d", c.d}, {"substeps", c.substeps},
                   {"samples", c.samples}, {"search", c.search}};
    m["grid"] = {{"n", c.grid}, {"dealias_fraction", 2.0 / 3.0}};
    m["seeds"] = {{"lambda0", c.lambda0}, {"probe_rng", 0}};
    m["schedule"] = r.schedule;
    auto st = nlohmann::json::array();
    for (auto& s : r.stages) {
        auto times = nlohmann::json::array();
        for (auto& row : s.series) times.push_back(row.t);
        st.push_back({{"stage", s.stage},
                      {"support", {s.support_lo, s.support_hi}},
                      {"times", times},
                      {"ledger_rows", s.ledger.size()},
                      {"snapshots", s.snapshots}});
    }
    m["stages"] = st;
    m["files"] = {"manifest.json", "ledger.csv", "timeseries.csv"};
    for (std::size_t i = 0; i + 1 < r.stages.size(); ++i) m["files"].push_back("timeseries_stage" + std::to_string(r.stages[i].stage) + ".csv");
    return m;
}

// timeseries.csv holds the last stage; earlier stages go to timeseries_stage<q>.csv
inline void emit_report(const RunReport& r, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
    auto open = [&](const std::string& name) {
        std::ofstream f(dir / name, std::ios::binary);
        if (!f) throw std::runtime_error("cannot write " + (dir / name).string());
        return f;
    };
    {
        auto f = open("manifest.json");
        f << manifest_json(r).dump(2) << '\n';
    }
    {
        auto f = open("ledger.csv");
        std::vector<EstimateRow> all;
        for (auto& s : r.stages) all.insert(all.end(), s.ledger.begin(), s.ledger.end());
        write_ledger_csv(f, all);
    }
    for (std::size_t i = 0; i < r.stages.size(); ++i) {
        bool last = i + 1 == r.stages.size();
        auto f = open(last ? "timeseries.csv" : "timeseries_stage" + std::to_string(r.stages[i].stage) + ".csv");
        write_timeseries_csv(f, r.stages[i].series);
    }
    if (r.stages.empty()) {
        auto f = open("timeseries.csv");
        write_timeseries_csv(f, {});
    }
}

// initial triple then `stages` steps, with one StageReport per triple
inline RunReport run_pipeline(const RunConfig& c, const ParameterSchedule& s, double dt = 1e-5) {
    RunReport rep;
    rep.config = c;
    Grid g(c.grid);
    const auto& fam = standard_families();
    std::vector<EulerReynoldsTriple> triples;
    triples.push_back(initial_triple(int(std::lround(s.lambda0)), c.eps0, g));
    std::vector<double> mu_run;
    for (int q = 1; q <= c.stages; ++q) {
        auto P = stage_params(s, q, c.substeps);
        mu_run.push_back(P.mu);
        triples.push_back(iterate(triples.back(), P, fam.first, fam.second));
    }
    rep.schedule = schedule_json(s, c.stages, mu_run);
    auto times0 = sample_times(triples.back(), c.samples);
    std::vector<double> v0_sup, w_sum(times0.size(), 0.0);
    for (double t : times0) v0_sup.push_back(sup_norm(*triples[0].v.get(t)));
    for (std::size_t q = 0; q < triples.size(); ++q) {
        // stages ≥ 1 share the final sampling so the partial sums of ‖w_q‖₀ line up
        auto times = q == 0 ? sample_times(triples[0], c.samples) : times0;
        std::filesystem::path dir(c.out);
        rep.stages.push_back(stage_report(triples[q], q ? &triples[q - 1] : nullptr, s, times, dt, &v0_sup, &w_sum, c.out.empty() ? nullptr : &dir));
    }
    return rep;
}

}  // namespace cilab
