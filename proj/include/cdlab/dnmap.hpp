#pragma once

#include <Eigen/Dense>
#include <random>

#include "cdlab/solver.hpp"

namespace cdlab {

/// Dirichlet inputs with their measured conormal outputs on the
/// illuminated-side neighborhood of the boundary.
struct BoundaryDataSet {
    std::vector<ScalarField> inputs;          // Dirichlet data f_k, f_k(0,.) = 0
    std::vector<BoundaryFunction> outputs;    // (d_nu + 2 A.nu) u restricted to the minus set
    const BoundaryPartition* partition = nullptr;
};

/// Partial DN map: forward solve followed by the conormal trace, restricted
/// to the measured set (corner nodes excluded).
inline BoundaryFunction dn_apply(const SpaceTimeGrid& g, const CoefficientPair& pair,
                                 const ScalarField& f, const BoundaryPartition& part,
                                 Scheme scheme) {
    IBVPSolution sol = solve_forward(g, pair, dirichlet_from_field(g, f), scheme);
    BoundaryFunction tr = neumann_trace(g, sol.u, &pair);
    return restrict_to_minus(g, part, tr);
}

/// dn_apply for a whole probe family, reusing one factorization per pair.
inline BoundaryDataSet dn_apply_family(const SpaceTimeGrid& g, const CoefficientPair& pair,
                                       const std::vector<ScalarField>& probes,
                                       const BoundaryPartition& part, Scheme scheme) {
    BoundaryDataSet set;
    set.inputs = probes;
    set.partition = &part;
    set.outputs.resize(probes.size());
    Propagator prop(g, forward_operator(g, pair), scheme);
    std::vector<cplx> zero_init(static_cast<size_t>(g.space_points()), cplx(0.0));
    for (std::size_t k = 0; k < probes.size(); ++k) {
        DirichletProvider f = dirichlet_from_field(g, probes[k]);
        std::vector<cplx> g0;
        f(0, g0);
        for (const cplx& v : g0)
            if (std::abs(v) > 1e-12)
                throw std::invalid_argument("probe Dirichlet data must vanish at t=0");
        IBVPSolution sol = prop.run(zero_init, f);
        set.outputs[k] = restrict_to_minus(g, part, neumann_trace(g, sol.u, &pair));
    }
    return set;
}

/// Additive Gaussian noise on Neumann outputs (deterministic under the seed).
inline void add_measurement_noise(BoundaryDataSet& set, double sigma, std::uint64_t seed) {
    if (sigma <= 0.0) return;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, sigma);
    for (auto& out : set.outputs)
        for (cplx& v : out.data) v += cplx(gauss(rng), gauss(rng));
}

struct DnNormResult {
    double norm = 0.0;
    int iterations = 0;
    bool converged = true;
};

/// Largest singular value of the finite-rank restriction of (Lambda1 -
/// Lambda2) to span{f_1..f_K}, with L2(Sigma) norms on the inputs and
/// L2(Sigma_minus) norms on the outputs. Power iteration runs on the Gram
/// representation: with N = Gram(d_k) and F = Gram(f_k), the square of the
/// norm is the largest eigenvalue of F^{-1/2} N F^{-1/2}.
inline DnNormResult dn_diff_norm(const SpaceTimeGrid& g, const CoefficientPair& pair1,
                                 const CoefficientPair& pair2, const BoundaryPartition& part,
                                 const std::vector<ScalarField>& probes, Scheme scheme,
                                 int max_iters = 200, double tol = 1e-12) {
    if (probes.empty()) throw std::invalid_argument("probe basis must be nonempty");
    long K = long(probes.size());

    BoundaryDataSet s1 = dn_apply_family(g, pair1, probes, part, scheme);
    BoundaryDataSet s2 = dn_apply_family(g, pair2, probes, part, scheme);

    // differences d_k and Gram matrices
    std::vector<BoundaryFunction> diff(static_cast<size_t>(K));
    bool all_zero = true;
    for (long k = 0; k < K; ++k) {
        diff[static_cast<size_t>(k)] = s1.outputs[static_cast<size_t>(k)];
        auto& d = diff[static_cast<size_t>(k)].data;
        const auto& o2 = s2.outputs[static_cast<size_t>(k)].data;
        for (std::size_t i = 0; i < d.size(); ++i) {
            d[i] -= o2[i];
            if (d[i] != cplx(0.0)) all_zero = false;
        }
    }
    if (all_zero) return {0.0, 0, true};

    const auto& bn = g.boundary();
    auto out_inner = [&](const BoundaryFunction& a, const BoundaryFunction& b) {
        cplx s = 0.0;
        for (int k = 0; k <= g.time_steps(); ++k) {
            double wt = g.time_weight(k);
            for (std::size_t i = 0; i < bn.size(); ++i) {
                if (!part.in_minus(long(i)) || bn[i].corner) continue;
                s += wt * g.face_weight(bn[i]) * std::conj(a.at(k, long(i))) * b.at(k, long(i));
            }
        }
        return s;
    };
    auto in_inner = [&](const ScalarField& a, const ScalarField& b) {
        double s = 0.0;
        for (int k = 0; k <= g.time_steps(); ++k) {
            double t = g.time(k), wt = g.time_weight(k);
            for (const auto& bno : bn) {
                Vec x = g.coords(bno.node);
                s += wt * g.face_weight(bno) * a(t, x) * b(t, x);
            }
        }
        return s;
    };

    Eigen::MatrixXcd N(K, K);
    Eigen::MatrixXd F(K, K);
    for (long i = 0; i < K; ++i)
        for (long j = 0; j < K; ++j) {
            N(i, j) = out_inner(diff[static_cast<size_t>(i)], diff[static_cast<size_t>(j)]);
            F(i, j) = in_inner(probes[static_cast<size_t>(i)], probes[static_cast<size_t>(j)]);
        }

    Eigen::LLT<Eigen::MatrixXd> llt(F);
    if (llt.info() != Eigen::Success)
        throw std::invalid_argument("probe basis is numerically dependent on Sigma");
    Eigen::MatrixXcd L = llt.matrixL().toDenseMatrix().cast<cplx>();
    // B = L^{-1} N L^{-T}, Hermitian PSD; power-iterate for its top eigenvalue
    Eigen::MatrixXcd B = L.triangularView<Eigen::Lower>().solve(N);
    B = L.triangularView<Eigen::Lower>()
            .solve(B.adjoint())
            .adjoint();

    Eigen::VectorXcd v = Eigen::VectorXcd::Ones(K).normalized();
    double mu = 0.0, mu_prev = -1.0;
    int it = 0;
    bool converged = false;
    for (; it < max_iters; ++it) {
        Eigen::VectorXcd w = B * v;
        double nw = w.norm();
        if (nw == 0.0) {
            mu = 0.0;
            converged = true;
            break;
        }
        v = w / nw;
        mu = std::real(v.dot(B * v));
        if (std::abs(mu - mu_prev) <= tol * std::max(1.0, std::abs(mu))) {
            converged = true;
            break;
        }
        mu_prev = mu;
    }
    return {std::sqrt(std::max(0.0, mu)), it, converged};
}

/// Neumann outputs as CSV lines (t, boundary node, re, im).
inline void export_neumann_csv(const SpaceTimeGrid& g, const BoundaryFunction& f,
                               const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << "t,node,re,im\n";
    for (int k = 0; k <= g.time_steps(); ++k)
        for (std::size_t i = 0; i < g.boundary().size(); ++i)
            out << format_double(g.time(k)) << "," << g.boundary()[i].node << ","
                << format_double(f.at(k, long(i)).real()) << ","
                << format_double(f.at(k, long(i)).imag()) << "\n";
}

}  // namespace cdlab
