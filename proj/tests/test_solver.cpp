#include <catch2/catch.hpp>

#include "cdlab/solver.hpp"

using namespace cdlab;

namespace {

CoefficientPair drift_pair() {
    // divergence-free drift plus a mild potential, static in time
    return CoefficientPair({ScalarField("0.3*x2", 2), ScalarField("-0.3*x1", 2)},
                           ScalarField("0.5 + 0.2*x1", 2), 10.0, true);
}

double q_volume_integral(const SpaceTimeGrid& g,
                         const std::function<double(double, const Vec&)>& f) {
    double s = 0.0;
    for (int k = 0; k <= g.time_steps(); ++k) {
        double t = g.time(k), wt = g.time_weight(k);
        for (long p = 0; p < g.space_points(); ++p)
            s += wt * g.volume_weight(p) * f(t, g.coords(p));
    }
    return s;
}

double sigma_integral(
    const SpaceTimeGrid& g,
    const std::function<double(double, const SpaceTimeGrid::BoundaryNode&)>& f) {
    double s = 0.0;
    for (int k = 0; k <= g.time_steps(); ++k) {
        double t = g.time(k), wt = g.time_weight(k);
        for (const auto& b : g.boundary()) s += wt * g.face_weight(b) * f(t, b);
    }
    return s;
}

}  // namespace

TEST_CASE("expand_operator") {
    SECTION("A = 0 leaves drift zero and zeroth = q") {
        CoefficientPair pair({ScalarField("0", 2), ScalarField("0", 2)},
                             ScalarField("sin(t)*x1", 2), 5.0, true);
        ExpandedOperator ex = expand_operator(pair);
        Vec x(0.3, 0.4);
        REQUIRE(ex.drift[0](0.7, x) == 0.0);
        REQUIRE(ex.zeroth(0.7, x) == Approx(std::sin(0.7) * 0.3));
    }
    SECTION("constant A=(1,0), q=0: drift (2,0), zeroth = -|A|^2 = -1") {
        // expanding -(d_j + A_j)^2 yields -div A - |A|^2 in the zeroth term;
        // for constant unit A that is exactly -1
        CoefficientPair pair({ScalarField("1", 2), ScalarField("0", 2)}, ScalarField("0", 2),
                             5.0, false);
        ExpandedOperator ex = expand_operator(pair);
        Vec x(0.3, 0.4);
        REQUIRE(ex.drift[0](0.0, x) == Approx(2.0));
        REQUIRE(ex.drift[1](0.0, x) == Approx(0.0));
        REQUIRE(ex.zeroth(0.0, x) == Approx(-1.0));
    }
    SECTION("zeroth matches a direct evaluation of q - div A - |A|^2") {
        CoefficientPair pair({ScalarField("x2*exp(t)", 2), ScalarField("-x1*exp(t)", 2)},
                             ScalarField("sin(t)", 2), 20.0, true);
        ExpandedOperator ex = expand_operator(pair);
        for (double t : {0.2, 0.9})
            for (double a : {0.2, 0.7}) {
                Vec x(a, 1.0 - a);
                Vec A = pair.A_at(t, x);
                double expect = pair.q_at(t, x) - pair.div_A(t, x) - A.dot(A);
                REQUIRE(ex.zeroth(t, x) == Approx(expect).margin(1e-12));
            }
    }
}

TEST_CASE("trivial solutions") {
    SpaceTimeGrid g = build_grid(2, 9, 8, 1.5);
    CoefficientPair pair = drift_pair();
    SECTION("zero Dirichlet data gives the zero solution") {
        IBVPSolution sol = solve_forward(g, pair, zero_dirichlet(g), Scheme::backward_euler);
        REQUIRE(discrete_norm(g, sol.u, NormKind::Linf) == 0.0);
        REQUIRE(sol.residual_norm < 1e-12);
    }
    SECTION("zero adjoint data gives the zero solution") {
        IBVPSolution sol = solve_adjoint(g, pair, zero_dirichlet(g), Scheme::backward_euler);
        REQUIRE(discrete_norm(g, sol.u, NormKind::Linf) == 0.0);
    }
    SECTION("Dirichlet data not vanishing at t=0 is rejected") {
        DirichletProvider f = dirichlet_from_field(g, ScalarField("1", 2));
        REQUIRE_THROWS_AS(solve_forward(g, pair, f, Scheme::backward_euler),
                          std::invalid_argument);
    }
}

TEST_CASE("heat decay oracle: separated solution of the pure heat equation") {
    // A=0, q=0 with initial data sin(pi x1) sin(pi x2) decays like exp(-2 pi^2 t)
    SpaceTimeGrid g = build_grid(2, 65, 192, 1.5);
    CoefficientPair pair = CoefficientPair::zero(2);
    std::vector<cplx> init(static_cast<size_t>(g.space_points()));
    for (long p = 0; p < g.space_points(); ++p) {
        Vec x = g.coords(p);
        init[static_cast<size_t>(p)] =
            std::sin(std::numbers::pi * x[0]) * std::sin(std::numbers::pi * x[1]);
    }
    IBVPSolution sol = solve_forward(g, pair, zero_dirichlet(g), Scheme::crank_nicolson, nullptr,
                                     &init);
    int k = 16;  // t = 0.125
    double t = g.time(k);
    double decay = std::exp(-2.0 * std::numbers::pi * std::numbers::pi * t);
    double num = 0.0, den = 0.0;
    const cplx* lev = sol.u.level(k);
    for (long p = 0; p < g.space_points(); ++p) {
        Vec x = g.coords(p);
        double exact =
            decay * std::sin(std::numbers::pi * x[0]) * std::sin(std::numbers::pi * x[1]);
        num += g.volume_weight(p) * std::norm(lev[p] - cplx(exact));
        den += g.volume_weight(p) * exact * exact;
    }
    double rel = std::sqrt(num / den);
    REQUIRE(rel <= 0.01);
}

TEST_CASE("manufactured solution: second-order convergence in space") {
    // u* = t sin(pi x1) sin(pi x2); linear in t, so Crank-Nicolson leaves
    // only the O(hx^2) spatial error
    CoefficientPair pair = drift_pair();
    ScalarField ustar("t*sin(pi*x1)*sin(pi*x2)", 2);
    std::vector<double> hs, errs;
    for (int Nx : {9, 17, 33}) {
        SpaceTimeGrid g = build_grid(2, Nx, 2 * (Nx - 1), 1.5);
        SourceProvider src = [&](int level, std::vector<cplx>& out) {
            double t = g.time(level);
            out.resize(g.interior().size());
            for (std::size_t i = 0; i < g.interior().size(); ++i)
                out[i] = apply_operator(pair, ustar, t, g.coords(g.interior()[i]));
        };
        IBVPSolution sol = solve_forward(g, pair, zero_dirichlet(g), Scheme::crank_nicolson, src);
        GridFunction diff = sol.u;
        for (int k = 0; k <= g.time_steps(); ++k)
            for (long p = 0; p < g.space_points(); ++p)
                diff.at(k, p) -= ustar(g.time(k), g.coords(p));
        errs.push_back(discrete_norm(g, diff, NormKind::L2_Q));
        hs.push_back(g.hx());
    }
    double order = std::log(errs[0] / errs[2]) / std::log(hs[0] / hs[2]);
    REQUIRE(order >= 1.8);
    REQUIRE(errs[2] < 1e-3);
}

TEST_CASE("green identity fixes the operator and adjoint sign conventions") {
    // <Lu,v> - <u,L*v> equals the time terms plus conormal flux terms with
    // coefficient one, all evaluated analytically and integrated by trapezoid
    CoefficientPair pair = drift_pair();
    ScalarField u("t*x1*x2*(1+x1)", 2), v("(1-t)*sin(pi*x1)*(x2^2+0.5)", 2);
    auto Lstar = [&](double t, const Vec& x) {
        // L* v = -dt v - Lap v + 2A.grad v + (q + div A - |A|^2) v
        Vec A = pair.A_at(t, x);
        double drift = 0.0;
        for (int i = 0; i < 2; ++i) drift += 2.0 * A[i] * v.dx(i, t, x);
        double zero = pair.q_at(t, x) + pair.div_A(t, x) - A.dot(A);
        return -v.dt(t, x) - v.laplacian(t, x) + drift + zero * v(t, x);
    };
    std::vector<double> errs, hs;
    for (int Nx : {9, 17, 33}) {
        SpaceTimeGrid g = build_grid(2, Nx, 2 * (Nx - 1), 1.5);
        double lhs = q_volume_integral(g, [&](double t, const Vec& x) {
            return apply_operator(pair, u, t, x) * v(t, x) - u(t, x) * Lstar(t, x);
        });
        double T = g.final_time();
        double time_terms = 0.0;
        for (long p = 0; p < g.space_points(); ++p) {
            Vec x = g.coords(p);
            time_terms += g.volume_weight(p) * (u(T, x) * v(T, x) - u(0.0, x) * v(0.0, x));
        }
        double flux = sigma_integral(g, [&](double t, const SpaceTimeGrid::BoundaryNode& b) {
            Vec x = g.coords(b.node);
            Vec A = pair.A_at(t, x);
            double du_nu = 0.0, dv_nu = 0.0;
            for (int i = 0; i < 2; ++i) {
                du_nu += b.normal[i] * u.dx(i, t, x);
                dv_nu += b.normal[i] * v.dx(i, t, x);
            }
            double anu = A.dot(b.normal);
            return -(du_nu + anu * u(t, x)) * v(t, x) + u(t, x) * (dv_nu - anu * v(t, x));
        });
        errs.push_back(std::abs(lhs - (time_terms + flux)));
        hs.push_back(g.hx());
    }
    double order = std::log(errs[0] / errs[2]) / std::log(hs[0] / hs[2]);
    REQUIRE(order >= 1.8);
    REQUIRE(errs[2] < 2e-3);
}

TEST_CASE("adjoint of the adjoint reproduces the forward coefficient tables") {
    SpaceTimeGrid g = build_grid(2, 9, 6, 1.5);
    CoefficientPair pair({ScalarField("0.2*x2*t", 2), ScalarField("0.1*x1", 2)},
                         ScalarField("0.3*t", 2), 10.0, false);
    CoefficientPair flipped(
        {ScalarField(e_neg(pair.A(0).expr()), 2), ScalarField(e_neg(pair.A(1).expr()), 2)},
        pair.q(), 10.0, false);
    CanonicalOperator fwd = forward_operator(g, pair);
    CanonicalOperator adj2 = adjoint_reversed_operator(g, flipped);
    LevelCoefficients a, b;
    for (int k : {0, 3, 6}) {
        double t = g.time(k);
        fwd.fill(t, a);
        adj2.fill(g.final_time() - t, b);
        for (long p = 0; p < g.space_points(); ++p) {
            for (int ax = 0; ax < 2; ++ax)
                REQUIRE(a.b[static_cast<size_t>(ax)][static_cast<size_t>(p)] ==
                        Approx(b.b[static_cast<size_t>(ax)][static_cast<size_t>(p)])
                            .margin(1e-13));
            REQUIRE(a.c[static_cast<size_t>(p)] ==
                    Approx(b.c[static_cast<size_t>(p)]).margin(1e-13));
        }
    }
}

TEST_CASE("implicit schemes stay bounded for coarse time steps") {
    CoefficientPair pair = drift_pair();
    ScalarField f("sin(pi*t)*x1*x2", 2);
    for (int Nt : {2, 4, 64}) {
        SpaceTimeGrid g = build_grid(2, 17, Nt, 1.5);
        IBVPSolution sol =
            solve_forward(g, pair, dirichlet_from_field(g, f), Scheme::backward_euler);
        REQUIRE(std::isfinite(discrete_norm(g, sol.u, NormKind::L2_Q)));
        REQUIRE(discrete_norm(g, sol.u, NormKind::Linf) < 10.0);
    }
}

TEST_CASE("complex Dirichlet data solves by linearity") {
    SpaceTimeGrid g = build_grid(2, 9, 6, 1.5);
    CoefficientPair pair = drift_pair();
    ScalarField f("t*x1", 2);
    IBVPSolution real_sol =
        solve_forward(g, pair, dirichlet_from_field(g, f), Scheme::backward_euler);
    DirichletProvider rotated = [&](int level, std::vector<cplx>& out) {
        const auto& bn = g.boundary();
        out.resize(bn.size());
        for (std::size_t i = 0; i < bn.size(); ++i)
            out[i] = cplx(0.0, 1.0) * cplx(f(g.time(level), g.coords(bn[i].node)));
    };
    IBVPSolution rot_sol = solve_forward(g, pair, rotated, Scheme::backward_euler);
    for (int k = 0; k <= g.time_steps(); ++k)
        for (long p = 0; p < g.space_points(); ++p)
            REQUIRE(std::abs(rot_sol.u.at(k, p) - cplx(0.0, 1.0) * real_sol.u.at(k, p)) < 1e-13);
}

TEST_CASE("three-dimensional smoke run at coarse resolution") {
    SpaceTimeGrid g = build_grid(3, 7, 6, 2.0);
    BoundaryPartition part = partition_boundary(g, Vec(1.0, 0.0, 0.0), 0.5);
    REQUIRE(part.plus_nodes().size() > 0);
    std::vector<ExprPtr> pots = {parse_expr("0.1*x1*x2*x3", 3), parse_expr("0.1*sin(x2)*x3", 3),
                                 parse_expr("0.1*x1^2", 3)};
    auto A = make_divfree_field(pots, 3);
    CoefficientPair pair({A[0], A[1], A[2]}, ScalarField("0.2", 3), 20.0, true);
    REQUIRE(pair.max_divergence(g) < 1e-12);
    double ray = ray_integral(pair, Vec(1.0, 0.0, 0.0), 0.4, Vec(0.0, 0.5, 0.5),
                              RayExtent::to_exit, g.hx() / 2);
    REQUIRE(std::isfinite(ray));
    IBVPSolution sol = solve_forward(g, pair, dirichlet_from_field(g, ScalarField("t*x2", 3)),
                                     Scheme::backward_euler);
    REQUIRE(std::isfinite(discrete_norm(g, sol.u, NormKind::L2_Q)));
    REQUIRE(sol.residual_norm < 1e-10);
    BoundaryFunction tr = neumann_trace(g, sol.u, &pair);
    REQUIRE(std::isfinite(boundary_l2(g, tr, &part.tags(), -1, true)));
}

TEST_CASE("neumann_trace") {
    SECTION("linear and quadratic fields are differentiated exactly") {
        SpaceTimeGrid g = build_grid(2, 9, 4, 1.5);
        GridFunction lin = sample(g, [](double, const Vec& x) { return x[0]; });
        BoundaryFunction tr = neumann_trace(g, lin);
        for (std::size_t i = 0; i < g.boundary().size(); ++i) {
            const auto& b = g.boundary()[i];
            if (b.corner) continue;
            if (b.axis == 0 && b.side == 0) REQUIRE(tr.at(2, long(i)).real() == Approx(-1.0));
            if (b.axis == 1) REQUIRE(tr.at(2, long(i)).real() == Approx(0.0).margin(1e-13));
        }
        GridFunction quad = sample(g, [](double, const Vec& x) { return x[0] * x[0]; });
        BoundaryFunction tq = neumann_trace(g, quad);
        for (std::size_t i = 0; i < g.boundary().size(); ++i) {
            const auto& b = g.boundary()[i];
            if (b.corner) continue;
            if (b.axis == 0 && b.side == 1)
                REQUIRE(tq.at(1, long(i)).real() == Approx(2.0).margin(1e-12));
        }
    }
    SECTION("trace of a solved field converges at order >= 1.5") {
        CoefficientPair pair = drift_pair();
        ScalarField ustar("t*sin(pi*x1)*sin(pi*x2)", 2);
        std::vector<double> errs, hs;
        for (int Nx : {17, 33, 65}) {
            SpaceTimeGrid g = build_grid(2, Nx, Nx - 1, 1.5);
            SourceProvider src = [&](int level, std::vector<cplx>& out) {
                double t = g.time(level);
                out.resize(g.interior().size());
                for (std::size_t i = 0; i < g.interior().size(); ++i)
                    out[i] = apply_operator(pair, ustar, t, g.coords(g.interior()[i]));
            };
            IBVPSolution sol =
                solve_forward(g, pair, zero_dirichlet(g), Scheme::crank_nicolson, src);
            BoundaryFunction tr = neumann_trace(g, sol.u, &pair);
            double emax = 0.0;
            for (int k = 0; k <= g.time_steps(); ++k) {
                double t = g.time(k);
                for (std::size_t i = 0; i < g.boundary().size(); ++i) {
                    const auto& b = g.boundary()[i];
                    if (b.corner) continue;
                    Vec x = g.coords(b.node);
                    double exact = 0.0;
                    for (int a = 0; a < 2; ++a) exact += b.normal[a] * ustar.dx(a, t, x);
                    exact += 2.0 * pair.A_at(t, x).dot(b.normal) * ustar(t, x);
                    emax = std::max(emax, std::abs(tr.at(k, long(i)) - cplx(exact)));
                }
            }
            errs.push_back(emax);
            hs.push_back(g.hx());
        }
        double order = std::log(errs[0] / errs[2]) / std::log(hs[0] / hs[2]);
        REQUIRE(order >= 1.5);
    }
    SECTION("grid mismatch is rejected") {
        SpaceTimeGrid g = build_grid(2, 9, 4, 1.5);
        SpaceTimeGrid g2 = build_grid(2, 17, 4, 1.5);
        GridFunction f(g2);
        REQUIRE_THROWS_AS(neumann_trace(g, f), std::invalid_argument);
    }
}
