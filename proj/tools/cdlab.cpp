// Command-line laboratory for the convection-diffusion inverse problem:
// forward solves and partial boundary maps, geometric-optics remainder
// sweeps, weighted-energy (Carleman) verification, Fourier-based coefficient
// reconstruction, and stability-trend experiments. Configuration comes from
// one JSON scenario file; each subcommand writes CSV/JSON/SVG artifacts to
// the output directory and exits nonzero if its invariant checks fail.

#include <CLI11.hpp>
#include <iostream>

#include "cdlab/config.hpp"

using namespace cdlab;

namespace {

int run_forward(const Scenario& sc, const std::string& out) {
    ensure_directory(out);
    SpaceTimeGrid g = sc.make_grid();
    BoundaryPartition part = sc.make_partition(g);
    g.export_boundary_csv(out + "/grid_boundary.csv", &part.tags());

    IBVPSolution sol = solve_forward(g, sc.pair1, dirichlet_from_field(g, sc.forward_data),
                                     sc.scheme);
    BoundaryFunction tr = neumann_trace(g, sol.u, &sc.pair1);
    export_neumann_csv(g, restrict_to_minus(g, part, tr), out + "/neumann.csv");

    {
        std::ofstream csv(out + "/fields.csv");
        csv << "t,node";
        for (int a = 0; a < g.dim(); ++a) csv << ",x" << (a + 1);
        csv << ",u_re,u_im";
        for (int a = 0; a < g.dim(); ++a) csv << ",A" << (a + 1);
        csv << ",q\n";
        for (int k = 0; k <= g.time_steps(); k += std::max(1, g.time_steps() / 8)) {
            double t = g.time(k);
            for (long p = 0; p < g.space_points(); ++p) {
                Vec x = g.coords(p);
                Vec A = sc.pair1.A_at(t, x);
                csv << format_double(t) << "," << p;
                for (int a = 0; a < g.dim(); ++a) csv << "," << format_double(x[a]);
                csv << "," << format_double(sol.u.at(k, p).real()) << ","
                    << format_double(sol.u.at(k, p).imag());
                for (int a = 0; a < g.dim(); ++a) csv << "," << format_double(A[a]);
                csv << "," << format_double(sc.pair1.q_at(t, x)) << "\n";
            }
        }
    }
    nlohmann::json j;
    j["l2_Q"] = discrete_norm(g, sol.u, NormKind::L2_Q);
    j["linf"] = discrete_norm(g, sol.u, NormKind::Linf);
    j["solver_residual"] = sol.residual_norm;
    write_json_file(out + "/forward.json", j);
    std::cout << "forward: |u|_L2(Q) = " << j["l2_Q"] << ", solver residual " << sol.residual_norm
              << "\n";
    return sol.residual_norm < 1e-8 ? 0 : 1;
}

int run_dnmap(const Scenario& sc, const std::string& out) {
    ensure_directory(out);
    SpaceTimeGrid g = sc.make_grid();
    BoundaryPartition part = sc.make_partition(g);
    BoundaryDataSet set = dn_apply_family(g, sc.pair1, sc.probes, part, sc.scheme);
    if (sc.noise_sigma > 0.0) add_measurement_noise(set, sc.noise_sigma, sc.seed);
    for (std::size_t k = 0; k < set.outputs.size(); ++k)
        export_neumann_csv(g, set.outputs[k], out + "/neumann_probe" + std::to_string(k) + ".csv");

    nlohmann::json j;
    j["basis_size"] = sc.probes.size();
    j["eps"] = sc.eps;
    j["omega0"] = {sc.omega0[0], sc.omega0[1]};
    j["pairs"] = sc.has_pair2 ? "pair1/pair2" : "pair1 only";
    int rc = 0;
    if (sc.has_pair2) {
        DnNormResult r = dn_diff_norm(g, sc.pair1, sc.pair2, part, sc.probes, sc.scheme);
        j["norm"] = r.norm;
        j["iters"] = r.iterations;
        j["converged"] = r.converged;
        std::cout << "dnmap: |Lambda1 - Lambda2| ~= " << r.norm << " (" << r.iterations
                  << " iterations)\n";
        if (!r.converged) rc = 1;
    }
    write_json_file(out + "/dnmap.json", j);
    return rc;
}

int run_go_check(const Scenario& sc, const std::string& out) {
    ensure_directory(out);
    SpaceTimeGrid g = sc.make_grid();
    std::ofstream csv(out + "/go_decay.csv");
    csv << "lambda,delta,tau,xi_norm,norm_R_L2,norm_R_H1,transport_residual\n";
    std::vector<std::pair<double, double>> decay;
    std::vector<double> ll, lr;
    double prev = std::numeric_limits<double>::infinity();
    bool monotone = true;
    for (double lam : sc.go_lambdas) {
        CarlemanWeight w(lam, sc.go_omega, sc.carleman_s);
        Amplitude amp = build_Bg(pair_A_fields(sc.pair1),
                                 pair_A_fields(CoefficientPair::zero(sc.n)), sc.go_omega,
                                 sc.go_tau, sc.go_xi, sc.go_delta, g);
        GOSolution sol = build_go_solution(g, sc.pair1, amp, w, GOSign::growing, sc.scheme);
        double tres = transport_residual_max(g, sol.B, amp.transport_A, sc.go_omega,
                                             {g.time_steps() / 2});
        csv << format_double(lam) << "," << format_double(sc.go_delta) << ","
            << format_double(sc.go_tau) << "," << format_double(sc.go_xi.norm()) << ","
            << format_double(sol.norm_R_L2) << "," << format_double(sol.norm_R_H1) << ","
            << format_double(tres) << "\n";
        decay.emplace_back(std::log(lam), std::log(sol.norm_R_L2));
        ll.push_back(std::log(lam));
        lr.push_back(std::log(sol.norm_R_L2));
        monotone = monotone && sol.norm_R_L2 < prev;
        prev = sol.norm_R_L2;
    }
    write_svg_plot(out + "/go_decay.svg", decay, "log lambda", "log |R|_L2");
    double slope = ll.size() >= 2 ? fit_slope(ll, lr) : 0.0;
    std::cout << "go-check: remainder decay slope " << slope << "\n";
    return (monotone && slope < 0.0) ? 0 : 1;
}

int run_carleman_check(const Scenario& sc, const std::string& out) {
    ensure_directory(out);
    SpaceTimeGrid g = sc.make_grid();
    auto suite = carleman_test_suite(sc.n, sc.carleman_suite, sc.carleman_seed);
    ThresholdScan scan =
        lambda_threshold_scan(g, sc.pair1, sc.go_omega, suite, sc.carleman_lambdas);

    std::ofstream csv(out + "/carleman.csv");
    csv << "lambda,test_id,group1,group2,group3,group4,group5,lhs,rhs,ratio\n";
    bool violated = false;
    for (double lam : sc.carleman_lambdas) {
        CarlemanWeight w(lam, sc.go_omega, sc.carleman_s);
        for (std::size_t tid = 0; tid < suite.size(); ++tid) {
            CarlemanReport rep = carleman_sides(g, sc.pair1, w, suite[tid]);
            violated = violated || rep.rhs_zero_lhs_positive;
            csv << format_double(lam) << "," << tid;
            for (double v : rep.groups) csv << "," << format_double(v);
            csv << "," << format_double(rep.lhs) << "," << format_double(rep.rhs) << ","
                << format_double(rep.ratio) << "\n";
        }
    }
    nlohmann::json j;
    j["lambda1_empirical"] = scan.lambda1;
    j["C_empirical"] = scan.C_empirical;
    j["threshold_found"] = scan.found;
    write_json_file(out + "/carleman_summary.json", j);
    std::cout << "carleman-check: empirical lambda1 = " << scan.lambda1
              << ", C = " << scan.C_empirical << "\n";
    return (!violated && scan.found) ? 0 : 1;
}

int run_reconstruct(const Scenario& sc, const std::string& out) {
    ensure_directory(out);
    if (!sc.has_pair2)
        throw std::runtime_error("reconstruct needs fields.pair2 (the hidden truth)");
    SpaceTimeGrid g = sc.make_grid();
    ReconstructionResult r =
        reconstruct_A(g, sc.pair1, sc.pair2, sc.recon, true,
                      sc.has_calibration ? &sc.calibration_pair2 : nullptr);

    {
        std::ofstream csv(out + "/reconstructed_A.csv");
        csv << "t,node";
        for (int a = 0; a < sc.n; ++a) csv << ",x" << (a + 1);
        for (int a = 0; a < sc.n; ++a) csv << ",A" << (a + 1);
        csv << "\n";
        for (int k = 0; k <= g.time_steps(); k += std::max(1, g.time_steps() / 8)) {
            for (long p = 0; p < g.space_points(); ++p) {
                Vec x = g.coords(p);
                csv << format_double(g.time(k)) << "," << p;
                for (int a = 0; a < sc.n; ++a) csv << "," << format_double(x[a]);
                for (int a = 0; a < sc.n; ++a)
                    csv << "," << format_double(r.A[static_cast<size_t>(a)].at(k, p).real());
                csv << "\n";
            }
        }
    }
    nlohmann::json j;
    j["l2_error"] = r.rel_l2_error;
    j["linf_error"] = r.linf_error;
    j["min_abs_det"] = r.min_abs_det;
    j["skipped_outside_cone"] = r.skipped_outside_cone;
    for (const auto& s : r.samples) {
        nlohmann::json js;
        js["tau"] = s.tau;
        js["xi"] = {s.xi[0], s.xi[1]};
        js["value_re"] = s.value.real();
        js["value_im"] = s.value.imag();
        js["budget_lambda"] = s.budget_lambda;
        js["budget_dn"] = s.budget_dn;
        j["per_frequency"].push_back(js);
    }
    int rc = 0;
    if (sc.recover_q_flag) {
        QtildeResult q = reconstruct_qtilde(g, sc.pair1, sc.pair2, sc.recon, &r, true,
                                            sc.has_calibration ? &sc.calibration_pair2 : nullptr);
        RecoveredQ rq = recover_q(g, q.qtilde, r.A, sc.pair1, sc.recon.delta);
        j["qtilde_l2_error"] = q.rel_l2_error;
        j["div_term_l2"] = rq.div_term_l2;
        std::ofstream csv(out + "/reconstructed_q.csv");
        csv << "t,node,q\n";
        for (int k = 0; k <= g.time_steps(); k += std::max(1, g.time_steps() / 8))
            for (long p = 0; p < g.space_points(); ++p)
                csv << format_double(g.time(k)) << "," << p << ","
                    << format_double(rq.q.at(k, p).real()) << "\n";
    }
    write_json_file(out + "/reconstruction.json", j);
    std::cout << "reconstruct: relative L2 error " << r.rel_l2_error << " over "
              << r.samples.size() << " frequencies\n";
    if (r.min_abs_det <= 0.0) rc = 1;
    return rc;
}

int run_stability_curve(const Scenario& sc, const std::string& out) {
    ensure_directory(out);
    SpaceTimeGrid g = sc.make_grid();
    BoundaryPartition part = sc.make_partition(g);
    FamilyConfig fc;
    fc.probes = sc.probes;
    fc.scheme = sc.scheme;
    fc.recon = sc.recon;
    fc.run_reconstruction = sc.experiment_reconstruct;
    fc.noise_sigma = sc.noise_sigma;
    fc.seed = sc.seed;
    if (sc.has_calibration) fc.calibration_pair2 = &sc.calibration_pair2;
    auto records = run_family(g, sc.pair1, sc.family, sc.scales, part, fc);

    std::vector<LawFit> fits;
    std::vector<double> dns, errs;
    for (const auto& r : records) {
        if (r.dn_norm > 0 && r.errA_L2 > 0) {
            dns.push_back(r.dn_norm);
            errs.push_back(r.errA_L2);
        }
    }
    int rc = 0;
    if (dns.size() >= 4) {
        try {
            fits.push_back(fit_stability_law(records, StabilityLaw::power));
            fits.push_back(fit_stability_law(records, StabilityLaw::double_log));
        } catch (const std::exception& e) {
            std::cout << "stability-curve: fit skipped (" << e.what() << ")\n";
        }
    }
    emit_report(records, fits, out);
    if (dns.size() >= 3) {
        double rho = spearman_rank_correlation(dns, errs);
        std::cout << "stability-curve: rank correlation errA vs dn = " << rho << "\n";
        if (rho < 0.9) rc = 1;
    }
    return rc;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"numerical laboratory for convection-diffusion boundary inverse problems"};
    app.require_subcommand(1);
    std::string config_path, out_dir = "out";

    auto add = [&](const std::string& name, const std::string& desc) {
        CLI::App* cmd = app.add_subcommand(name, desc);
        cmd->add_option("--config", config_path, "scenario JSON file")->required();
        cmd->add_option("--out", out_dir, "output directory");
        return cmd;
    };
    CLI::App* fwd = add("forward", "forward IBVP solve with boundary exports");
    CLI::App* dnm = add("dnmap", "partial boundary maps and the DN-difference norm");
    CLI::App* go = add("go-check", "geometric-optics remainder decay sweep");
    CLI::App* car = add("carleman-check", "weighted-energy inequality verification");
    CLI::App* rec = add("reconstruct", "Fourier reconstruction of the coefficient difference");
    CLI::App* sta = add("stability-curve", "perturbation family and stability-law fits");

    CLI11_PARSE(app, argc, argv);

    try {
        Scenario sc = load_scenario(config_path);
        if (fwd->parsed()) return run_forward(sc, out_dir);
        if (dnm->parsed()) return run_dnmap(sc, out_dir);
        if (go->parsed()) return run_go_check(sc, out_dir);
        if (car->parsed()) return run_carleman_check(sc, out_dir);
        if (rec->parsed()) return run_reconstruct(sc, out_dir);
        if (sta->parsed()) return run_stability_curve(sc, out_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
