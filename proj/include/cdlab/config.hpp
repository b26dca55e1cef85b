#pragma once

#include <json.hpp>

#include "cdlab/stability.hpp"

namespace cdlab {

/// Scenario configuration: one JSON document drives every subcommand. All
/// tolerances and seeds that affect outputs live here, not in code paths.
struct Scenario {
    // grid
    int n = 2;
    int Nx = 33;
    int Nt = 48;
    double T = 1.5;
    // partition
    Vec omega0 = Vec(1.0, 0.0);
    double eps = 0.5;
    // pairs
    CoefficientPair pair1 = CoefficientPair::zero(2);
    CoefficientPair pair2 = CoefficientPair::zero(2);
    bool has_pair2 = false;
    // solver
    Scheme scheme = Scheme::crank_nicolson;
    // forward data
    ScalarField forward_data{e_num(0.0), 2};
    // go block
    std::vector<double> go_lambdas = {8, 16, 32};
    double go_delta = 0.3;
    double go_tau = 0.5;
    Vec go_xi = Vec(0.0, 1.0);
    Vec go_omega = Vec(1.0, 0.0);
    // carleman block
    std::vector<double> carleman_lambdas = {1, 2, 4, 8, 16};
    int carleman_suite = 8;
    std::uint64_t carleman_seed = 20260808;
    double carleman_s = 0.0;
    // reconstruction block
    ReconstructionConfig recon;
    bool has_calibration = false;
    CoefficientPair calibration_pair2 = CoefficientPair::zero(2);
    double theta = 0.5;
    double R_param = 4.0;
    bool recover_q_flag = false;
    // experiment block
    std::vector<double> scales = {0.1, 0.2, 0.4};
    PerturbationFamily family;
    std::vector<ScalarField> probes;
    double noise_sigma = 0.0;
    std::uint64_t seed = 1;
    bool experiment_reconstruct = true;

    SpaceTimeGrid make_grid() const { return SpaceTimeGrid(n, Nx, Nt, T); }
    BoundaryPartition make_partition(const SpaceTimeGrid& g) const {
        return BoundaryPartition(g, omega0, eps);
    }
};

namespace detail {

inline Vec json_vec(const nlohmann::json& j, int n) {
    Vec v(n);
    for (int i = 0; i < n && i < int(j.size()); ++i) v[i] = j[static_cast<size_t>(i)].get<double>();
    return v;
}

inline CoefficientPair json_pair(const nlohmann::json& j, int n) {
    double m = j.value("m", 50.0);
    bool divfree = j.value("divfree", false);
    std::vector<ScalarField> A;
    if (j.contains("stream")) {
        std::vector<ExprPtr> pots;
        if (j["stream"].is_array())
            for (const auto& s : j["stream"]) pots.push_back(parse_expr(s.get<std::string>(), n));
        else
            pots.push_back(parse_expr(j["stream"].get<std::string>(), n));
        auto f = make_divfree_field(pots, n);
        A.assign(f.begin(), f.end());
        divfree = true;
    } else if (j.contains("A")) {
        for (const auto& s : j["A"]) A.emplace_back(s.get<std::string>(), n);
        while (int(A.size()) < n) A.emplace_back(e_num(0.0), n);
    } else {
        for (int i = 0; i < n; ++i) A.emplace_back(e_num(0.0), n);
    }
    ScalarField q(j.value("q", std::string("0")), n);
    return CoefficientPair(std::move(A), std::move(q), m, divfree);
}

}  // namespace detail

inline Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    nlohmann::json j;
    in >> j;

    Scenario sc;
    if (j.contains("grid")) {
        const auto& g = j["grid"];
        sc.n = g.value("n", 2);
        sc.Nx = g.value("Nx", 33);
        sc.Nt = g.value("Nt", 48);
        sc.T = g.value("T", 1.5);
    }
    if (j.contains("partition")) {
        const auto& p = j["partition"];
        if (p.contains("omega0")) sc.omega0 = detail::json_vec(p["omega0"], sc.n);
        sc.eps = p.value("eps", 0.5);
    } else {
        sc.omega0 = unit_axis(sc.n, 0);
    }
    if (j.contains("fields")) {
        const auto& f = j["fields"];
        if (f.contains("pair1")) sc.pair1 = detail::json_pair(f["pair1"], sc.n);
        if (f.contains("pair2")) {
            sc.pair2 = detail::json_pair(f["pair2"], sc.n);
            sc.has_pair2 = true;
        }
    } else {
        sc.pair1 = CoefficientPair::zero(sc.n);
    }
    if (j.contains("solver"))
        sc.scheme = j["solver"].value("scheme", std::string("crank_nicolson")) == "backward_euler"
                        ? Scheme::backward_euler
                        : Scheme::crank_nicolson;
    if (j.contains("forward")) sc.forward_data = ScalarField(j["forward"].value("f", std::string("0")), sc.n);
    if (j.contains("go")) {
        const auto& g = j["go"];
        if (g.contains("lambda")) {
            sc.go_lambdas.clear();
            if (g["lambda"].is_array())
                for (const auto& v : g["lambda"]) sc.go_lambdas.push_back(v.get<double>());
            else
                sc.go_lambdas.push_back(g["lambda"].get<double>());
        }
        sc.go_delta = g.value("delta", 0.3);
        sc.go_tau = g.value("tau", 0.5);
        if (g.contains("xi")) sc.go_xi = detail::json_vec(g["xi"], sc.n);
        if (g.contains("omega")) sc.go_omega = detail::json_vec(g["omega"], sc.n);
    } else {
        sc.go_xi = unit_axis(sc.n, 1);
        sc.go_omega = unit_axis(sc.n, 0);
    }
    if (j.contains("carleman")) {
        const auto& c = j["carleman"];
        if (c.contains("lambdas")) {
            sc.carleman_lambdas.clear();
            for (const auto& v : c["lambdas"]) sc.carleman_lambdas.push_back(v.get<double>());
        }
        sc.carleman_suite = c.value("suite", 8);
        sc.carleman_seed = c.value("seed", std::uint64_t(20260808));
        sc.carleman_s = c.value("s", 0.0);
    }
    if (j.contains("reconstruction")) {
        const auto& r = j["reconstruction"];
        sc.recon.lambda = r.value("lambda", 16.0);
        sc.recon.delta = r.value("delta", 0.3);
        sc.recon.jt_max = r.value("jt_max", 4);
        sc.recon.k_max = r.value("k_max", 1);
        sc.recon.R_freq = r.value("R_freq", 0.0);
        sc.recon.box_margin = r.value("box_margin", 0.0);
        sc.recon.mode = r.value("mode", std::string("full_data")) == "cone" ? ReconMode::cone
                                                                            : ReconMode::full_data;
        sc.recon.omega0 = sc.omega0;
        sc.recon.eps = sc.eps;
        sc.recon.scheme = sc.scheme;
        sc.recon.subtract_q_diagnostic = r.value("subtract_q_diagnostic", false);
        sc.theta = r.value("theta", 0.5);
        sc.R_param = r.value("R", 4.0);
        sc.recover_q_flag = r.value("recover_q", false);
        if (r.contains("calibration")) {
            sc.calibration_pair2 = detail::json_pair(r["calibration"], sc.n);
            sc.has_calibration = true;
        }
    } else {
        sc.recon.omega0 = sc.omega0;
        sc.recon.eps = sc.eps;
    }
    if (j.contains("experiment")) {
        const auto& e = j["experiment"];
        if (e.contains("scales")) {
            sc.scales.clear();
            for (const auto& v : e["scales"]) sc.scales.push_back(v.get<double>());
        }
        ExprPtr psi = parse_expr(e.value("stream", std::string("0")), sc.n);
        ExprPtr dq = e.contains("dq") ? parse_expr(e["dq"].get<std::string>(), sc.n) : nullptr;
        sc.family = PerturbationFamily::from_stream(psi, sc.n, dq);
        if (e.contains("probes"))
            for (const auto& s : e["probes"]) sc.probes.emplace_back(s.get<std::string>(), sc.n);
        sc.noise_sigma = e.value("noise_sigma", 0.0);
        sc.seed = e.value("seed", std::uint64_t(1));
        sc.experiment_reconstruct = e.value("reconstruct", true);
    }
    if (sc.probes.empty()) {
        sc.probes.emplace_back("sin(pi*t/" + std::to_string(sc.T) + ")", sc.n);
        sc.probes.emplace_back("sin(pi*t/" + std::to_string(sc.T) + ")*x2", sc.n);
    }
    return sc;
}

}  // namespace cdlab
