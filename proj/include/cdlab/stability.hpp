#pragma once

#include <chrono>

#include "cdlab/dnmap.hpp"
#include "cdlab/reconstruction.hpp"
#include "cdlab/report.hpp"

namespace cdlab {

/// One point of a perturbation-family experiment.
struct ExperimentRecord {
    int scenario_id = 0;
    double eps_perturb = 0.0;  // family scale c
    double dn_norm = 0.0;
    double errA_L2 = -1.0;  // absolute L2(Q) error of the windowed reconstruction
    double errQ_L2 = -1.0;
    StabilityParams params;
    double runtime_s = 0.0;  // excluded from the deterministic records CSV
};

/// Perturbation direction: dA from a stream (divergence-free by construction)
/// plus an optional potential perturbation.
struct PerturbationFamily {
    std::vector<ScalarField> dA;
    ScalarField dq;
    bool has_dq = false;

    static PerturbationFamily from_stream(const ExprPtr& psi, int n, const ExprPtr& dq = nullptr) {
        PerturbationFamily fam;
        auto fields = make_divfree_field(psi, n);
        fam.dA.assign(fields.begin(), fields.end());
        if (dq) {
            fam.dq = ScalarField(dq, n);
            fam.has_dq = true;
        } else {
            fam.dq = ScalarField(e_num(0.0), n);
        }
        return fam;
    }
};

struct FamilyConfig {
    std::vector<ScalarField> probes;
    Scheme scheme = Scheme::crank_nicolson;
    bool run_reconstruction = true;
    ReconstructionConfig recon;
    const CoefficientPair* calibration_pair2 = nullptr;
    double noise_sigma = 0.0;
    std::uint64_t seed = 1;
    double perturbed_m_bound = 100.0;
};

namespace detail {

inline void check_family_hypotheses(const SpaceTimeGrid& g, const PerturbationFamily& fam) {
    // A1|_Sigma = A2|_Sigma: the direction field must vanish on the lateral boundary
    double scale = 0.0;
    for (long p = 0; p < g.space_points(); ++p) {
        Vec x = g.coords(p);
        for (const auto& f : fam.dA) scale = std::max(scale, std::abs(f(g.final_time() / 2, x)));
    }
    for (const auto& b : g.boundary())
        for (int k = 0; k <= g.time_steps(); ++k) {
            Vec x = g.coords(b.node);
            for (const auto& f : fam.dA)
                if (std::abs(f(g.time(k), x)) > 1e-10 * std::max(1.0, scale))
                    throw std::invalid_argument(
                        "perturbation violates the boundary-agreement hypothesis A1|_Sigma = "
                        "A2|_Sigma");
        }
    // div_x A1 = div_x A2: the direction field must be divergence-free
    for (int k = 0; k <= g.time_steps(); ++k)
        for (long p : g.interior()) {
            double t = g.time(k);
            Vec x = g.coords(p);
            double dv = 0.0;
            for (std::size_t i = 0; i < fam.dA.size(); ++i) dv += fam.dA[i].dx(int(i), t, x);
            if (std::abs(dv) > 1e-8 * std::max(1.0, scale))
                throw std::invalid_argument(
                    "perturbation violates the divergence hypothesis div A1 = div A2");
        }
}

}  // namespace detail

/// Scaled perturbed pair (A1 + c dA, q1 + c dq).
inline CoefficientPair scaled_pair(const CoefficientPair& base, const PerturbationFamily& fam,
                                   double c, double m_bound) {
    int n = base.dim();
    std::vector<ScalarField> A;
    for (int i = 0; i < n; ++i)
        A.emplace_back(
            e_add(base.A(i).expr(), e_mul(e_num(c), fam.dA[static_cast<size_t>(i)].expr())), n);
    ScalarField q(e_add(base.q().expr(), e_mul(e_num(c), fam.dq.expr())), n);
    CoefficientPair out(std::move(A), std::move(q), m_bound, base.divergence_free_flag());
    return out;
}

/// Run a perturbation family: for each scale compute the DN-difference norm
/// and (optionally) the windowed reconstruction errors against the known
/// truth. Family members are independent and run in parallel.
inline std::vector<ExperimentRecord> run_family(const SpaceTimeGrid& g,
                                                const CoefficientPair& base,
                                                const PerturbationFamily& fam,
                                                const std::vector<double>& scales,
                                                const BoundaryPartition& part,
                                                const FamilyConfig& cfg) {
    detail::check_family_hypotheses(g, fam);
    if (cfg.probes.empty()) throw std::invalid_argument("probe basis must be nonempty");
    std::vector<ExperimentRecord> records(scales.size());
    parallel_for(scales.size(), [&](std::size_t i) {
        auto t0 = std::chrono::steady_clock::now();
        double c = scales[i];
        ExperimentRecord rec;
        rec.scenario_id = int(i);
        rec.eps_perturb = c;
        CoefficientPair pair2 = scaled_pair(base, fam, c, cfg.perturbed_m_bound);
        DnNormResult dn =
            dn_diff_norm(g, base, pair2, part, cfg.probes, cfg.scheme);
        rec.dn_norm = dn.norm;
        if (cfg.run_reconstruction) {
            ReconstructionResult ra =
                reconstruct_A(g, base, pair2, cfg.recon, true, cfg.calibration_pair2);
            // absolute windowed error so the zero-perturbation fixpoint is exact
            Eta eta(cfg.recon.delta, g.final_time());
            GridFunction diff(g);
            double acc = 0.0;
            for (int k = 0; k <= g.time_steps(); ++k) {
                double t = g.time(k), e2 = 0.0;
                {
                    double e = eta(t);
                    e2 = e * e;
                }
                double wt = g.time_weight(k);
                for (long p = 0; p < g.space_points(); ++p) {
                    Vec x = g.coords(p);
                    Vec truth = (base.A_at(t, x) - pair2.A_at(t, x)) * e2;
                    double err2 = 0.0;
                    for (int cc = 0; cc < g.dim(); ++cc) {
                        double d =
                            ra.A[static_cast<size_t>(cc)].at(k, p).real() - truth[cc];
                        err2 += d * d;
                    }
                    acc += wt * g.volume_weight(p) * err2;
                }
            }
            rec.errA_L2 = std::sqrt(acc);
            if (fam.has_dq) {
                QtildeResult rq = reconstruct_qtilde(g, base, pair2, cfg.recon, &ra, false);
                RecoveredQ q = recover_q(g, rq.qtilde, ra.A, base, cfg.recon.delta);
                double qacc = 0.0;
                for (int k = 0; k <= g.time_steps(); ++k) {
                    double t = g.time(k);
                    double e = eta(t);
                    double wt = g.time_weight(k);
                    for (long p = 0; p < g.space_points(); ++p) {
                        Vec x = g.coords(p);
                        double truth = e * e * (base.q_at(t, x) - pair2.q_at(t, x));
                        double d = q.q.at(k, p).real() - truth;
                        qacc += wt * g.volume_weight(p) * d * d;
                    }
                }
                rec.errQ_L2 = std::sqrt(qacc);
            }
        }
        rec.runtime_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        records[i] = rec;
    });
    return records;
}

/// Spearman rank correlation.
inline double spearman_rank_correlation(const std::vector<double>& x,
                                        const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw std::invalid_argument("rank correlation needs matched samples");
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> idx(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) idx[i] = i;
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) r[idx[i]] = double(i);
        return r;
    };
    std::vector<double> rx = ranks(x), ry = ranks(y);
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= double(rx.size());
    my /= double(ry.size());
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0 || syy == 0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

enum class StabilityLaw { power, double_log, triple_log };

struct LawFit {
    StabilityLaw law = StabilityLaw::power;
    double C = 0.0;
    double exp1 = 0.0;  // alpha1 / beta1 / power slope
    double exp2 = 0.0;  // alpha2 / beta2 (log exponents)
    double residual = 0.0;  // rms log residual
};

namespace detail {

/// Minimal Nelder-Mead for 1-2 free parameters.
inline std::vector<double> nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> start, double step, int iters) {
    std::size_t d = start.size();
    std::vector<std::vector<double>> simplex(d + 1, start);
    for (std::size_t i = 0; i < d; ++i) simplex[i + 1][i] += step;
    std::vector<double> val(d + 1);
    for (std::size_t i = 0; i <= d; ++i) val[i] = f(simplex[i]);
    for (int it = 0; it < iters; ++it) {
        std::size_t hi = 0, lo = 0;
        for (std::size_t i = 1; i <= d; ++i) {
            if (val[i] > val[hi]) hi = i;
            if (val[i] < val[lo]) lo = i;
        }
        if (std::abs(val[hi] - val[lo]) < 1e-14 * (1.0 + std::abs(val[lo]))) break;
        std::vector<double> centroid(d, 0.0);
        for (std::size_t i = 0; i <= d; ++i) {
            if (i == hi) continue;
            for (std::size_t k = 0; k < d; ++k) centroid[k] += simplex[i][k] / double(d);
        }
        auto reflect = [&](double coef) {
            std::vector<double> p(d);
            for (std::size_t k = 0; k < d; ++k)
                p[k] = centroid[k] + coef * (centroid[k] - simplex[hi][k]);
            return p;
        };
        std::vector<double> r = reflect(1.0);
        double fr = f(r);
        if (fr < val[lo]) {
            std::vector<double> e = reflect(2.0);
            double fe = f(e);
            if (fe < fr) {
                simplex[hi] = e;
                val[hi] = fe;
            } else {
                simplex[hi] = r;
                val[hi] = fr;
            }
        } else if (fr < val[hi]) {
            simplex[hi] = r;
            val[hi] = fr;
        } else {
            std::vector<double> cpt = reflect(-0.5);
            double fc = f(cpt);
            if (fc < val[hi]) {
                simplex[hi] = cpt;
                val[hi] = fc;
            } else {
                for (std::size_t i = 0; i <= d; ++i) {
                    if (i == lo) continue;
                    for (std::size_t k = 0; k < d; ++k)
                        simplex[i][k] = 0.5 * (simplex[i][k] + simplex[lo][k]);
                    val[i] = f(simplex[i]);
                }
            }
        }
    }
    std::size_t lo = 0;
    for (std::size_t i = 1; i <= d; ++i)
        if (val[i] < val[lo]) lo = i;
    return simplex[lo];
}

inline double law_shape(StabilityLaw law, double d, double e1, double e2) {
    switch (law) {
        case StabilityLaw::power: return std::pow(d, e1);
        case StabilityLaw::double_log:
            return std::pow(d, e1) + std::pow(std::abs(std::log(std::abs(std::log(d)))), -e2);
        case StabilityLaw::triple_log:
            return std::pow(d, e1) +
                   std::pow(std::abs(std::log(std::log(std::abs(std::log(d))))), -e2);
    }
    throw std::logic_error("unreachable");
}

}  // namespace detail

/// Least-squares fit of err = C * shape(dn) in log space. The power law has
/// one exponent; the (double/triple) log laws have the pair (exp1, exp2).
/// The amplitude C is eliminated in closed form; exponents are found by
/// simplex search from a small multistart.
inline LawFit fit_stability_law(const std::vector<ExperimentRecord>& records, StabilityLaw law,
                                bool use_q_error = false) {
    std::vector<double> d, e;
    for (const auto& r : records) {
        double err = use_q_error ? r.errQ_L2 : r.errA_L2;
        if (r.dn_norm > 0.0 && err > 0.0) {
            d.push_back(r.dn_norm);
            e.push_back(err);
        }
    }
    if (d.size() < 4)
        throw std::invalid_argument("need at least 4 records with positive dn norm and error");
    double dmax = *std::max_element(d.begin(), d.end());
    double dmin = *std::min_element(d.begin(), d.end());
    if (dmax / dmin < 2.0)
        throw std::invalid_argument("insufficient spread in the dn norms for a fit");
    if (law != StabilityLaw::power) {
        for (double v : d) {
            if (v >= std::exp(-1.0))
                throw std::invalid_argument("dn norm outside the log-law domain (need d < 1/e)");
            if (law == StabilityLaw::triple_log && std::log(std::abs(std::log(v))) <= 1.0)
                throw std::invalid_argument(
                    "dn norm outside the triple-log domain (need log|log d| > 1)");
        }
    }

    // wide identifiability windows; a very large log exponent means the fit
    // degenerates toward a pure power law, which the report makes visible
    auto objective = [&](const std::vector<double>& p) {
        double e1 = p[0], e2 = p.size() > 1 ? p[1] : 0.0;
        if (e1 <= 0.0 || e1 > 8.0 || (p.size() > 1 && (e2 <= 0.0 || e2 > 40.0))) return 1e6;
        double mean = 0.0;
        std::vector<double> diff(d.size());
        for (std::size_t i = 0; i < d.size(); ++i) {
            double shape = detail::law_shape(law, d[i], e1, e2);
            if (!(shape > 0.0) || !std::isfinite(shape)) return 1e6;
            diff[i] = std::log(e[i]) - std::log(shape);
            mean += diff[i];
        }
        mean /= double(d.size());
        double ss = 0.0;
        for (double v : diff) ss += (v - mean) * (v - mean);
        return ss;
    };

    std::vector<double> best;
    double best_val = std::numeric_limits<double>::infinity();
    std::vector<double> starts = {0.3, 1.0, 2.5, 8.0, 25.0};
    for (double s1 : starts) {
        if (law == StabilityLaw::power) {
            auto p = detail::nelder_mead(objective, {s1}, 0.4, 400);
            double v = objective(p);
            if (v < best_val) {
                best_val = v;
                best = p;
            }
        } else {
            for (double s2 : starts) {
                auto p = detail::nelder_mead(objective, {s1, s2}, 0.4, 800);
                double v = objective(p);
                if (v < best_val) {
                    best_val = v;
                    best = p;
                }
            }
        }
    }
    // polish from the best point with shrinking steps
    for (double step : {0.05, 0.003, 1e-4}) {
        auto p = detail::nelder_mead(objective, best, step, 600);
        double v = objective(p);
        if (v < best_val) {
            best_val = v;
            best = p;
        }
    }

    LawFit fit;
    fit.law = law;
    fit.exp1 = best[0];
    fit.exp2 = best.size() > 1 ? best[1] : 0.0;
    double mean = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i)
        mean += std::log(e[i]) - std::log(detail::law_shape(law, d[i], fit.exp1, fit.exp2));
    mean /= double(d.size());
    fit.C = std::exp(mean);
    fit.residual = std::sqrt(best_val / double(d.size()));
    return fit;
}

/// Deterministic experiment report: records CSV (runtime kept out so reruns
/// are byte-identical), fits JSON, and the double-log trend plot. Timings go
/// to a separate non-deterministic file.
inline void emit_report(const std::vector<ExperimentRecord>& records,
                        const std::vector<LawFit>& fits, const std::string& out_dir,
                        const std::string& notes = "") {
    ensure_directory(out_dir);
    {
        std::ofstream csv(out_dir + "/records.csv");
        csv << "scenario_id,eps_perturb,dn_norm,errA_L2,errQ_L2,theta,R,delta,lambda\n";
        for (const auto& r : records)
            csv << r.scenario_id << "," << format_double(r.eps_perturb) << ","
                << format_double(r.dn_norm) << "," << format_double(r.errA_L2) << ","
                << format_double(r.errQ_L2) << "," << format_double(r.params.theta) << ","
                << format_double(r.params.R) << "," << format_double(r.params.delta) << ","
                << format_double(r.params.lambda) << "\n";
    }
    {
        std::ofstream csv(out_dir + "/timings.csv");
        csv << "scenario_id,runtime_s\n";
        for (const auto& r : records)
            csv << r.scenario_id << "," << format_double(r.runtime_s) << "\n";
    }
    nlohmann::json j;
    j["notes"] = notes.empty()
                     ? "fitted exponents are empirical trend parameters; the underlying "
                       "constants depend on the scenario and are not identifiable from "
                       "trend data"
                     : notes;
    for (const auto& f : fits) {
        nlohmann::json jf;
        jf["law"] = f.law == StabilityLaw::power
                        ? "power"
                        : (f.law == StabilityLaw::double_log ? "double_log" : "triple_log");
        jf["C"] = f.C;
        jf["exp1"] = f.exp1;
        jf["exp2"] = f.exp2;
        jf["residual"] = f.residual;
        j["fits"].push_back(jf);
    }
    write_json_file(out_dir + "/fits.json", j);

    if (!records.empty()) {
        std::vector<std::pair<double, double>> pts;
        for (const auto& r : records)
            if (r.dn_norm > 0.0 && r.errA_L2 > 0.0)
                pts.emplace_back(std::log(std::abs(std::log(r.dn_norm))), std::log(r.errA_L2));
        std::sort(pts.begin(), pts.end());
        if (!pts.empty())
            write_svg_plot(out_dir + "/stability_curve.svg", pts, "log |log dn|", "log errA");
    }
}

}  // namespace cdlab
