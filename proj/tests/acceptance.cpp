// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Scenarios, grids and tolerances are frozen here; every expected
// value is either computed by an independent oracle in this file or pinned
// from the verified analysis in the library headers.

#include <chrono>
#include <iostream>
#include <random>

#include "cdlab/config.hpp"

using namespace cdlab;

namespace {

int g_failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
    std::cout << (pass ? "[PASS] " : "[FAIL] ") << "criterion " << id << ": " << name << " ("
              << detail << ")\n"
              << std::flush;
    if (!pass) ++g_failures;
}

double elapsed_s(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

constexpr double kT = 1.5;

CoefficientPair base_pair2() {
    auto A = make_divfree_field(parse_expr("0.1*sin(pi*x1)*sin(pi*x2)", 2), 2);
    return CoefficientPair({A[0], A[1]}, ScalarField("0.3", 2), 50.0, true);
}
CoefficientPair single_mode_pair1(double c) {
    std::ostringstream psi;
    psi << "0.1*sin(pi*x1)*sin(pi*x2) + " << c << "*sin(pi*x1)^2*sin(pi*x2)^2";
    auto A = make_divfree_field(parse_expr(psi.str(), 2), 2);
    return CoefficientPair({A[0], A[1]}, ScalarField("0.3", 2), 50.0, true);
}
CoefficientPair phantom_pair2(const CoefficientPair& pair1) {
    auto dC = make_divfree_field(
        parse_expr("0.2*sin(pi*x1)^2*sin(pi*x2)^2*(0.75+0.5*x2)", 2), 2);
    return CoefficientPair({ScalarField(e_sub(pair1.A(0).expr(), dC[0].expr()), 2),
                            ScalarField(e_sub(pair1.A(1).expr(), dC[1].expr()), 2)},
                           pair1.q(), 50.0, false);
}

// ---------------------------------------------------------------- criterion 1
void criterion_fourier_identity() {
    auto t0 = std::chrono::steady_clock::now();
    SpaceTimeGrid g = build_grid(2, 65, 128, kT);
    CoefficientPair p2 = base_pair2();
    CoefficientPair p1 = single_mode_pair1(0.25);
    auto D = difference_fields(p1, p2);
    double delta = 0.3;
    Eta eta(delta, kT);

    struct Freq {
        Vec omega;
        int jt;
        int k1, k2;
    };
    std::vector<Freq> freqs = {
        {Vec(1.0, 0.0), 0, 0, 1}, {Vec(1.0, 0.0), 1, 0, 1},  {Vec(1.0, 0.0), -1, 0, 1},
        {Vec(1.0, 0.0), 0, 0, 2}, {Vec(1.0, 0.0), 2, 0, 2},  {Vec(0.0, 1.0), 0, 1, 0},
        {Vec(0.0, 1.0), 1, 1, 0}, {Vec(0.0, 1.0), -1, 2, 0}, {Vec(0.0, 1.0), 0, 2, 0},
        {Vec(0.0, 1.0), 1, 2, 0}};

    double worst = 0.0;
    Vec last_omega(0.0, 0.0);
    GridFunction B2g, Bvg;
    std::optional<BoxSpectrum> omA_spec;
    for (const Freq& f : freqs) {
        double tau = 2.0 * std::numbers::pi * f.jt / kT;
        Vec xi(std::numbers::pi * f.k1, std::numbers::pi * f.k2);
        if ((f.omega - last_omega).norm() > 0.0) {
            Amplitude Bv = build_Bd(negated_fields(pair_A_fields(p1)), f.omega, delta, g);
            Bvg = sample_amplitude(g, Bv);
            omA_spec.emplace(g, [&](int, double t, const Vec& x) -> cplx {
                double e = eta(t);
                double v = 0.0;
                for (int c = 0; c < 2; ++c) v += f.omega[c] * D[static_cast<size_t>(c)](t, x);
                return cplx(e * e * v);
            });
            last_omega = f.omega;
        }
        Amplitude B2 = build_Bg(pair_A_fields(p2), D, f.omega, tau, xi, delta, g);
        B2g = sample_amplitude(g, B2);
        cplx lhs = 0.0;
        for (int k = 0; k <= g.time_steps(); ++k) {
            double t = g.time(k), wt = g.time_weight(k);
            cplx acc = 0.0;
            const cplx* b2 = B2g.level(k);
            const cplx* bv = Bvg.level(k);
            for (long p = 0; p < g.space_points(); ++p) {
                Vec x = g.coords(p);
                double omA = 0.0;
                for (int c = 0; c < 2; ++c) omA += f.omega[c] * D[static_cast<size_t>(c)](t, x);
                acc += g.volume_weight(p) * omA * b2[p] * bv[p];
            }
            lhs += wt * acc;
        }
        cplx rhs = cplx(0.0, -xi.norm()) * omA_spec->at(f.jt, {f.k1, f.k2, 0});
        worst = std::max(worst, std::abs(lhs - rhs) / std::abs(rhs));
    }
    double secs = elapsed_s(t0);
    std::ostringstream d;
    d << "max relative mismatch " << worst << " over 10 lattice frequencies, " << secs << " s";
    report(1, "Fourier identity: ray-dressed amplitude product vs -i|xi| transform",
           worst <= 1e-3 && secs <= 60.0, d.str());
}

// ---------------------------------------------------------------- criterion 2
void criterion_transport_order() {
    CoefficientPair p2 = base_pair2();
    auto D = make_divfree_field(parse_expr("0.3*sin(pi*x1)^2*sin(pi*x2)^2", 2), 2);
    Vec omega(1.0, 0.0);
    Vec xi(0.0, std::numbers::pi);
    std::vector<double> res, hs;
    for (int Nx : {33, 65, 129}) {
        SpaceTimeGrid g = build_grid(2, Nx, 8, kT);
        Amplitude amp = build_Bg(pair_A_fields(p2), D, omega, 1.0, xi, 0.3, g);
        GridFunction B = sample_amplitude(g, amp);
        res.push_back(
            transport_residual_max(g, B, amp.transport_A, omega, {g.time_steps() / 2}));
        hs.push_back(g.hx());
    }
    std::vector<double> lh, lres;
    for (std::size_t i = 0; i < hs.size(); ++i) {
        lh.push_back(std::log(hs[i]));
        lres.push_back(std::log(res[i]));
    }
    double order = fit_slope(lh, lres);
    std::ostringstream d;
    d << "residual order " << order << " across Nx in {33,65,129}";
    report(2, "transport equation residual of the growing amplitude", order >= 1.9, d.str());
}

// ---------------------------------------------------------------- criterion 3
void criterion_remainder_decay() {
    auto t0 = std::chrono::steady_clock::now();
    SpaceTimeGrid g = build_grid(2, 65, 128, kT);
    auto As = make_divfree_field(parse_expr("0.05*sin(pi*x1)*sin(pi*x2)", 2), 2);
    CoefficientPair pair({As[0], As[1]}, ScalarField("0.2", 2), 20.0, true);
    Vec omega(1.0, 0.0);
    Vec xi(0.0, 1.0);
    std::vector<double> ll, lr, lh;
    for (double lam : {8.0, 16.0, 32.0, 64.0}) {
        CarlemanWeight w(lam, omega);
        Amplitude amp = build_Bg(pair_A_fields(pair), pair_A_fields(CoefficientPair::zero(2)),
                                 omega, 0.5, xi, 0.33, g);
        GOSolution sol = build_go_solution(g, pair, amp, w, GOSign::growing,
                                           Scheme::crank_nicolson);
        ll.push_back(std::log(lam));
        lr.push_back(std::log(sol.norm_R_L2));
        lh.push_back(std::log(sol.norm_R_H1));
    }
    double slope_l2 = fit_slope(ll, lr);
    double slope_h1 = fit_slope(ll, lh);
    double secs = elapsed_s(t0);
    std::ostringstream d;
    d << "L2 slope " << slope_l2 << " (<= -0.8), H1 slope " << slope_h1 << " (<= 0.2), " << secs
      << " s";
    report(3, "remainder decay in lambda over {8,16,32,64}",
           slope_l2 <= -0.8 && slope_h1 <= 0.2 && secs <= 600.0, d.str());
}

// ---------------------------------------------------------------- criterion 4
void criterion_carleman_bound() {
    SpaceTimeGrid g = build_grid(2, 33, 32, kT);
    auto A = make_divfree_field(parse_expr("0.2*sin(pi*x1)*sin(pi*x2)", 2), 2);
    CoefficientPair pair({A[0], A[1]}, ScalarField("0.3*x1", 2), 20.0, true);
    Vec omega(1.0, 0.0);
    auto suite = carleman_test_suite(2, 20, 20260808);
    std::vector<double> lambdas = {1.0, 2.0, 4.0, 8.0, 16.0};
    ThresholdScan scan = lambda_threshold_scan(g, pair, omega, suite, lambdas);

    // the bound from the stabilized range must not degrade when lambda
    // doubles twice past the threshold
    double r1 = 0.0, r2 = 0.0, r4 = 0.0;
    bool have_doubles = false;
    for (std::size_t i = 0; i + 2 < lambdas.size(); ++i) {
        if (lambdas[i] == scan.lambda1) {
            r1 = scan.max_ratios[i];
            r2 = scan.max_ratios[i + 1];
            r4 = scan.max_ratios[i + 2];
            have_doubles = true;
            break;
        }
    }
    bool pass = scan.found && have_doubles && r2 <= 1.25 * r1 && r4 <= 1.25 * r1;
    std::ostringstream d;
    d << "lambda1 = " << scan.lambda1 << ", C = " << scan.C_empirical << ", ratios at {1x,2x,4x} = {"
      << r1 << ", " << r2 << ", " << r4 << "}";
    report(4, "boundary weighted-energy bound stable over a 20-function suite", pass, d.str());
}

// ---------------------------------------------------------------- criterion 5
void criterion_direction_roundtrip() {
    std::mt19937_64 rng(55);
    std::normal_distribution<double> gauss;
    Vec omega0(1.0, 0.0, 0.0);
    double eps = 0.5;
    double min_det = std::numeric_limits<double>::infinity();
    double worst = 0.0;
    int done = 0;
    while (done < 100) {
        // admissible frequency with margin: a direction inside the half cap
        // and a random frequency orthogonal to it
        Vec w(gauss(rng), gauss(rng), gauss(rng));
        w = (omega0 + w * (eps / 8.0 / std::max(1.0, w.norm()))).normalized();
        Vec r(gauss(rng), gauss(rng), gauss(rng));
        Vec xi = r - w * r.dot(w);
        if (xi.norm() < 1e-3) continue;
        xi = xi.normalized();
        DirectionSystem sys = assemble_Mxi(xi, omega0, eps);
        min_det = std::min(min_det, std::abs(sys.det));
        Eigen::Vector3cd truth;
        for (int c = 0; c < 3; ++c) truth(c) = cplx(gauss(rng), gauss(rng));
        Eigen::Vector3cd xiv;
        for (int c = 0; c < 3; ++c) xiv(c) = xi[c];
        truth -= xiv * xiv.dot(truth);
        std::vector<cplx> G;
        for (const Vec& om : sys.omegas) {
            cplx s = 0.0;
            for (int c = 0; c < 3; ++c) s += om[c] * truth(c);
            G.push_back(s);
        }
        Eigen::VectorXcd a = solve_component_system(G, sys);
        worst = std::max(worst, (a - truth).norm() / std::max(1.0, truth.norm()));
        ++done;
    }
    std::ostringstream d;
    d << "100 draws, worst relative error " << worst << ", min |det| " << min_det;
    report(5, "direction-system round trip under the divergence constraint",
           worst <= 1e-10 && min_det >= 0.1, d.str());
}

// ------------------------------------------------------------- criteria 6, 10
void criterion_reconstruction_A() {
    SpaceTimeGrid g = build_grid(2, 65, 128, kT);
    CoefficientPair p2 = base_pair2();
    CoefficientPair p1 = single_mode_pair1(0.25);
    CoefficientPair cal = phantom_pair2(p1);
    ReconstructionConfig cfg;
    cfg.lambda = 32.0;
    cfg.delta = 0.3;
    cfg.jt_max = 5;
    cfg.k_max = 1;
    cfg.box_margin = 0.0;
    ReconstructionResult r32 = reconstruct_A(g, p1, p2, cfg, true, &cal);
    cfg.lambda = 64.0;
    ReconstructionResult r64 = reconstruct_A(g, p1, p2, cfg, true, &cal);
    std::ostringstream d;
    d << "relative L2 error " << r32.rel_l2_error << " at lambda=32, " << r64.rel_l2_error
      << " at lambda=64";
    report(6, "full-data single-mode reconstruction of the convection difference",
           r32.rel_l2_error <= 0.15 && r64.rel_l2_error < r32.rel_l2_error, d.str());
}

void criterion_reconstruction_q() {
    SpaceTimeGrid g = build_grid(2, 65, 128, kT);
    // equal convection fields, single-mode potential difference
    auto A = make_divfree_field(parse_expr("0.1*sin(pi*x1)*sin(pi*x2)", 2), 2);
    CoefficientPair p1({A[0], A[1]}, ScalarField("0.3", 2), 50.0, true);
    CoefficientPair p2({A[0], A[1]},
                       ScalarField("0.3 + 0.4*sin(pi*x1)^2*sin(pi*x2)^2", 2), 50.0, true);
    CoefficientPair cal({A[0], A[1]},
                        ScalarField("0.3 + 0.3*sin(pi*x1)^2*sin(pi*x2)^2*(0.7+0.6*x2)", 2), 50.0,
                        true);
    ReconstructionConfig cfg;
    cfg.lambda = 32.0;
    cfg.delta = 0.3;
    cfg.jt_max = 5;
    cfg.k_max = 1;
    cfg.box_margin = 0.0;
    QtildeResult rq = reconstruct_qtilde(g, p1, p2, cfg, nullptr, true, &cal);
    // q = qtilde + div A + (|A1|^2 - |A2|^2); with equal convection the
    // correction terms vanish and recover_q must preserve that
    std::vector<GridFunction> zeroA(2, GridFunction(g));
    RecoveredQ rec = recover_q(g, rq.qtilde, zeroA, p1, cfg.delta);
    Eta eta(cfg.delta, kT);
    double num = 0.0, den = 0.0;
    for (int k = 0; k <= g.time_steps(); ++k) {
        double t = g.time(k), e2;
        {
            double e = eta(t);
            e2 = e * e;
        }
        double wt = g.time_weight(k);
        for (long p = 0; p < g.space_points(); ++p) {
            Vec x = g.coords(p);
            double truth = e2 * (p1.q_at(t, x) - p2.q_at(t, x));
            double dd = rec.q.at(k, p).real() - truth;
            num += wt * g.volume_weight(p) * dd * dd;
            den += wt * g.volume_weight(p) * truth * truth;
        }
    }
    double rel = std::sqrt(num / den);
    std::ostringstream d;
    d << "relative L2 error " << rel << " at lambda=32, div/quad corrections "
      << rec.div_term_l2 << "/" << rec.quad_term_l2;
    report(7, "zeroth-order pipeline with equal convection fields", rel <= 0.15, d.str());
}

// ---------------------------------------------------------------- criterion 8
void criterion_stability_trend() {
    SpaceTimeGrid g = build_grid(2, 33, 48, kT);
    BoundaryPartition part = partition_boundary(g, Vec(1.0, 0.0), 0.5);
    auto A1 = make_divfree_field(parse_expr("0.1*sin(pi*x1)*sin(pi*x2)", 2), 2);
    CoefficientPair base({A1[0], A1[1]}, ScalarField("0.3", 2), 80.0, true);
    PerturbationFamily fam =
        PerturbationFamily::from_stream(parse_expr("sin(pi*x1)^2*sin(pi*x2)^2", 2), 2);
    CoefficientPair cal = phantom_pair2(base);

    FamilyConfig fc;
    fc.probes = {ScalarField("sin(pi*t/1.5)", 2), ScalarField("sin(pi*t/1.5)*x2", 2),
                 ScalarField("sin(2*pi*t/1.5)*cos(pi*x1)", 2)};
    fc.recon.lambda = 16.0;
    fc.recon.delta = 0.3;
    fc.recon.jt_max = 4;
    fc.recon.k_max = 1;
    fc.recon.box_margin = 0.0;
    fc.calibration_pair2 = &cal;
    fc.perturbed_m_bound = 120.0;
    // dn norms must stay below e^{-e} so the double-log shape is decreasing
    std::vector<double> scales = {0.0008, 0.0016, 0.0032, 0.0072, 0.016, 0.036};
    auto records = run_family(g, base, fam, scales, part, fc);

    std::vector<double> dns, errs;
    for (const auto& r : records) {
        dns.push_back(r.dn_norm);
        errs.push_back(r.errA_L2);
    }
    double rho = spearman_rank_correlation(dns, errs);
    LawFit fp = fit_stability_law(records, StabilityLaw::power);
    LawFit fd = fit_stability_law(records, StabilityLaw::double_log);
    double best = std::min(fp.residual, fd.residual);
    bool pass = rho >= 0.9 && fd.residual <= 2.0 * best + 1e-12;
    emit_report(records, {fp, fd}, "acceptance_stability_out",
                "trend documentation only: the theoretical exponents depend on constants "
                "(C, theta, kappa) that are not identifiable from desk-scale trend data and "
                "are not reproduced numerically");
    std::ostringstream d;
    d << "rank correlation " << rho << ", residuals power/double-log " << fp.residual << "/"
      << fd.residual << "; exponents documented as non-reproducible in the report";
    report(8, "stability trend over a six-point perturbation family", pass, d.str());
}

// ---------------------------------------------------------------- criterion 9
void criterion_gauge_invariance() {
    // gauge function vanishing to first order on the lateral boundary keeps
    // the gauged pair inside the boundary-agreement class
    auto run_norm = [&](int Nx, int Nt) {
        SpaceTimeGrid g = build_grid(2, Nx, Nt, kT);
        BoundaryPartition part = partition_boundary(g, Vec(1.0, 0.0), 0.5);
        auto A = make_divfree_field(parse_expr("0.2*sin(pi*x1)*sin(pi*x2)", 2), 2);
        CoefficientPair pair({A[0], A[1]}, ScalarField("0.3", 2), 50.0, true);
        GaugeFunction phi(ScalarField("t*(x1*(1-x1)*x2*(1-x2))^2*16", 2), g);
        CoefficientPair gauged = apply_gauge(pair, phi, 80.0);
        std::vector<ScalarField> probes = {ScalarField("sin(pi*t/1.5)", 2),
                                           ScalarField("sin(pi*t/1.5)*x2", 2)};
        return dn_diff_norm(g, pair, gauged, part, probes, Scheme::crank_nicolson).norm;
    };
    // discretization floor at the criterion-1 grid by nested-grid comparison
    auto floor_estimate = [&]() {
        SpaceTimeGrid g65 = build_grid(2, 65, 128, kT);
        SpaceTimeGrid g33 = build_grid(2, 33, 128, kT);
        BoundaryPartition p65 = partition_boundary(g65, Vec(1.0, 0.0), 0.5);
        BoundaryPartition p33 = partition_boundary(g33, Vec(1.0, 0.0), 0.5);
        auto A = make_divfree_field(parse_expr("0.2*sin(pi*x1)*sin(pi*x2)", 2), 2);
        CoefficientPair pair({A[0], A[1]}, ScalarField("0.3", 2), 50.0, true);
        ScalarField f("sin(pi*t/1.5)*x2", 2);
        BoundaryFunction n65 =
            dn_apply(g65, pair, f, p65, Scheme::crank_nicolson);
        BoundaryFunction n33 = dn_apply(g33, pair, f, p33, Scheme::crank_nicolson);
        // restrict the fine output to the shared (nested) boundary nodes
        BoundaryFunction diff(g33);
        const auto& b33 = g33.boundary();
        for (std::size_t i = 0; i < b33.size(); ++i) {
            int idx[kMaxDim];
            g33.decode(b33[i].node, idx);
            int fine_idx[kMaxDim] = {2 * idx[0], 2 * idx[1], 0};
            long fine_node = g65.encode(fine_idx);
            long fb = g65.boundary_index(fine_node);
            for (int k = 0; k <= g33.time_steps(); ++k)
                diff.at(k, long(i)) = n65.at(k, fb) - n33.at(k, long(i));
        }
        double num = boundary_l2(g33, diff, &p33.tags(), -1, true);
        GridFunction fq = sample(g33, [&](double t, const Vec& x) { return f(t, x); });
        double den = discrete_norm(g33, fq, NormKind::L2_Sigma);
        return num / den / 3.0;  // second-order Richardson estimate of the fine-grid error
    };
    double fine = run_norm(65, 128);
    double coarse = run_norm(33, 64);
    double floor = floor_estimate();
    bool pass = fine <= 10.0 * floor && fine < coarse;
    std::ostringstream d;
    d << "gauge dn-norm " << fine << " at Nx=65 vs floor " << floor << " (x"
      << (floor > 0 ? fine / floor : 0.0) << "), coarse-grid value " << coarse;
    report(9, "gauge invariance of the partial boundary map", pass, d.str());
}

// --------------------------------------------------------------- criterion 10
void criterion_zero_cases() {
    SpaceTimeGrid g = build_grid(2, 33, 48, kT);
    BoundaryPartition part = partition_boundary(g, Vec(1.0, 0.0), 0.5);
    CoefficientPair pair = single_mode_pair1(0.2);
    std::vector<ScalarField> probes = {ScalarField("sin(pi*t/1.5)", 2),
                                       ScalarField("sin(pi*t/1.5)*x2", 2)};
    DnNormResult dn = dn_diff_norm(g, pair, pair, part, probes, Scheme::crank_nicolson);
    ReconstructionConfig cfg;
    cfg.lambda = 16.0;
    cfg.delta = 0.3;
    cfg.jt_max = 3;
    cfg.k_max = 1;
    cfg.box_margin = 0.0;
    ReconstructionResult ra = reconstruct_A(g, pair, pair, cfg);
    QtildeResult rq = reconstruct_qtilde(g, pair, pair, cfg);
    double amax = 0.0;
    for (const auto& compf : ra.A) amax = std::max(amax, discrete_norm(g, compf, NormKind::Linf));
    double qmax = discrete_norm(g, rq.qtilde, NormKind::Linf);
    bool pass = dn.norm == 0.0 && amax < 1e-12 && qmax < 1e-12;
    std::ostringstream d;
    d << "dn norm " << dn.norm << " (exact zero by determinism), |A_rec|_inf " << amax
      << ", |qtilde_rec|_inf " << qmax;
    report(10, "identical pairs: zero norm and reconstructions at the floor", pass, d.str());
}

}  // namespace

int main(int argc, char** argv) {
    int only = argc > 1 ? std::atoi(argv[1]) : 0;
    auto want = [&](int id) { return only == 0 || only == id; };
    auto t0 = std::chrono::steady_clock::now();
    if (want(1)) criterion_fourier_identity();
    if (want(2)) criterion_transport_order();
    if (want(3)) criterion_remainder_decay();
    if (want(4)) criterion_carleman_bound();
    if (want(5)) criterion_direction_roundtrip();
    if (want(6)) criterion_reconstruction_A();
    if (want(7)) criterion_reconstruction_q();
    if (want(8)) criterion_stability_trend();
    if (want(9)) criterion_gauge_invariance();
    if (want(10)) criterion_zero_cases();
    std::cout << (g_failures == 0 ? "all criteria passed" : "criteria failed") << " ("
              << elapsed_s(t0) << " s total)\n";
    return g_failures == 0 ? 0 : 1;
}
