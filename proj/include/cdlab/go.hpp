#pragma once

#include <fftw3.h>

#include "cdlab/solver.hpp"

namespace cdlab {

namespace detail {

/// Truncated Taylor jet (value + three derivatives) for the cutoff algebra.
struct Jet {
    std::array<double, 4> d{};

    static Jet constant(double v) { return Jet{{v, 0, 0, 0}}; }
    static Jet affine(double v, double slope) { return Jet{{v, slope, 0, 0}}; }

    Jet operator+(const Jet& o) const {
        Jet r;
        for (int i = 0; i < 4; ++i) r.d[size_t(i)] = d[size_t(i)] + o.d[size_t(i)];
        return r;
    }
    Jet operator*(const Jet& o) const {
        Jet r;
        r.d[0] = d[0] * o.d[0];
        r.d[1] = d[1] * o.d[0] + d[0] * o.d[1];
        r.d[2] = d[2] * o.d[0] + 2 * d[1] * o.d[1] + d[0] * o.d[2];
        r.d[3] = d[3] * o.d[0] + 3 * d[2] * o.d[1] + 3 * d[1] * o.d[2] + d[0] * o.d[3];
        return r;
    }
    Jet operator/(const Jet& g) const {
        // from f = h*g by Leibniz
        Jet h;
        h.d[0] = d[0] / g.d[0];
        h.d[1] = (d[1] - h.d[0] * g.d[1]) / g.d[0];
        h.d[2] = (d[2] - h.d[0] * g.d[2] - 2 * h.d[1] * g.d[1]) / g.d[0];
        h.d[3] = (d[3] - h.d[0] * g.d[3] - 3 * h.d[1] * g.d[2] - 3 * h.d[2] * g.d[1]) / g.d[0];
        return h;
    }
};

inline Jet jet_exp(const Jet& f) {
    Jet r;
    r.d[0] = std::exp(f.d[0]);
    r.d[1] = r.d[0] * f.d[1];
    r.d[2] = r.d[0] * (f.d[2] + f.d[1] * f.d[1]);
    r.d[3] = r.d[0] * (f.d[3] + 3 * f.d[1] * f.d[2] + f.d[1] * f.d[1] * f.d[1]);
    return r;
}

/// rho(s) = exp(-1/s) for s > 0, extended smoothly by zero.
inline Jet jet_mollifier(const Jet& s) {
    if (s.d[0] <= 1e-12) return Jet::constant(0.0);
    Jet inv = Jet::constant(-1.0) / s;
    return jet_exp(inv);
}

/// ramp(s) = rho(s) / (rho(s) + rho(1-s)): 0 for s<=0, 1 for s>=1.
inline Jet jet_ramp(const Jet& s) {
    if (s.d[0] <= 1e-12) return Jet::constant(0.0);
    if (s.d[0] >= 1.0 - 1e-12) return Jet::constant(1.0);
    Jet r1 = jet_mollifier(s);
    Jet one_minus{{1.0 - s.d[0], -s.d[1], -s.d[2], -s.d[3]}};
    Jet r2 = jet_mollifier(one_minus);
    return r1 / (r1 + r2);
}

}  // namespace detail

/// Smooth time cutoff: zero outside (delta, T-delta), identically one on
/// [2 delta, T-2 delta], built from the standard mollifier ramp. Derivative
/// bounds scale like delta^{-k}; the measured constants C_k are exposed.
class Eta {
public:
    Eta(double delta, double T) : delta_(delta), T_(T) {
        if (!(delta > 0.0 && delta < T / 4.0))
            throw std::invalid_argument("cutoff width must lie in (0, T/4)");
    }

    double delta() const { return delta_; }

    double operator()(double t) const { return derivative(t, 0); }

    double derivative(double t, int k) const {
        if (k < 0 || k > 3) throw std::invalid_argument("cutoff derivative order must be 0..3");
        return jet(t).d[static_cast<size_t>(k)];
    }

    /// max |eta^(k)| * delta^k over a fine grid.
    double measured_Ck(int k, int samples = 4096) const {
        double m = 0.0;
        for (int i = 0; i <= samples; ++i) {
            double t = T_ * i / double(samples);
            m = std::max(m, std::abs(derivative(t, k)));
        }
        return m * std::pow(delta_, k);
    }

private:
    double delta_, T_;

    detail::Jet jet(double t) const {
        detail::Jet up = detail::jet_ramp(detail::Jet::affine((t - delta_) / delta_, 1.0 / delta_));
        detail::Jet down =
            detail::jet_ramp(detail::Jet::affine((T_ - delta_ - t) / delta_, -1.0 / delta_));
        return up * down;
    }
};

inline double cutoff_eta(double delta, double T, double t, int derivative_order = 0) {
    return Eta(delta, T).derivative(t, derivative_order);
}

/// Weight phi = lambda^2 t + lambda x.omega with optional convexification
/// phi_s = phi - s ((x+x0).omega)^2 / 2; construction requires
/// (x + x0).omega > 0 over the closed box.
struct CarlemanWeight {
    double lambda = 1.0;
    Vec omega;
    double s = 0.0;
    Vec x0;

    CarlemanWeight(double lambda_, Vec omega_, double s_ = 0.0, Vec x0_ = Vec(0))
        : lambda(lambda_), omega(omega_), s(s_), x0(x0_) {
        if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
        if (std::abs(omega.norm() - 1.0) > 1e-12)
            throw std::invalid_argument("omega must be a unit vector");
        if (s < 0.0) throw std::invalid_argument("convexification strength must be >= 0");
        if (x0.n == 0) x0 = default_shift(omega);
        if (x0.n != omega.n) throw std::invalid_argument("shift point dimension mismatch");
        // (x+x0).omega is linear, so checking the box corners is exact
        int n = omega.n;
        for (int mask = 0; mask < (1 << n); ++mask) {
            Vec corner(n);
            for (int a = 0; a < n; ++a) corner[a] = (mask >> a) & 1 ? 1.0 : 0.0;
            if ((corner + x0).dot(omega) <= 0.0)
                throw std::invalid_argument("shift point must keep (x+x0).omega positive on the box");
        }
    }

    static Vec default_shift(const Vec& omega) {
        return omega * (std::sqrt(double(omega.n)) + 0.5);
    }

    double phi(double t, const Vec& x) const { return lambda * lambda * t + lambda * x.dot(omega); }
    double phi_s(double t, const Vec& x) const {
        double r = (x + x0).dot(omega);
        return phi(t, x) - 0.5 * s * r * r;
    }
};

enum class GOSign { growing, decaying };

/// Principal amplitude as a point evaluator plus its transport field; the
/// evaluator is grid-free so refinement studies can resample it.
struct Amplitude {
    std::function<cplx(double, const Vec&)> eval;
    std::vector<ScalarField> transport_A;  // field appearing in omega.(grad + A) B = 0
    Vec omega;
    double delta = 0.0;
    double tau = 0.0;
    Vec xi;
    bool has_frequency = false;
    bool static_profile = false;  // spatial profile independent of t apart from eta and phase
};

namespace detail {

inline double ray_os(const std::vector<ScalarField>& A, const Vec& omega, double t, const Vec& x,
                     RayExtent extent, double step) {
    double s_in, s_out;
    if (!ray_box_interval(x, omega, &s_in, &s_out)) return 0.0;
    double a = (extent == RayExtent::to_exit) ? 0.0 : s_in;
    if (extent == RayExtent::to_exit && s_out <= 0.0) return 0.0;
    return simpson(
        [&](double s) {
            Vec y(x.n);
            for (int i = 0; i < x.n; ++i) y[i] = x[i] + s * omega[i];
            double v = 0.0;
            for (int i = 0; i < x.n; ++i) v += omega[i] * A[static_cast<size_t>(i)](t, y);
            return v;
        },
        a, s_out, step);
}

inline Vec ray_grad(const std::vector<ScalarField>& A, const Vec& omega, double t, const Vec& x,
                    RayExtent extent, double step) {
    Vec g(x.n);
    double s_in, s_out;
    if (!ray_box_interval(x, omega, &s_in, &s_out)) return g;
    double a = (extent == RayExtent::to_exit) ? 0.0 : s_in;
    if (extent == RayExtent::to_exit && s_out <= 0.0) return g;
    for (int comp = 0; comp < x.n; ++comp) {
        g[comp] = simpson(
            [&](double s) {
                Vec y(x.n);
                for (int i = 0; i < x.n; ++i) y[i] = x[i] + s * omega[i];
                double v = 0.0;
                for (int i = 0; i < x.n; ++i) v += omega[i] * A[static_cast<size_t>(i)].dx(comp, t, y);
                return v;
            },
            a, s_out, step);
    }
    return g;
}

}  // namespace detail

inline std::vector<ScalarField> negated_fields(const std::vector<ScalarField>& A) {
    std::vector<ScalarField> out;
    for (const auto& a : A) out.emplace_back(e_neg(a.expr()), a.dim());
    return out;
}
inline std::vector<ScalarField> pair_A_fields(const CoefficientPair& pair) {
    std::vector<ScalarField> out;
    for (int i = 0; i < pair.dim(); ++i) out.push_back(pair.A(i));
    return out;
}
inline std::vector<ScalarField> difference_fields(const CoefficientPair& p1,
                                                  const CoefficientPair& p2) {
    std::vector<ScalarField> out;
    for (int i = 0; i < p1.dim(); ++i)
        out.emplace_back(e_sub(p1.A(i).expr(), p2.A(i).expr()), p1.dim());
    return out;
}

/// Decaying-side amplitude B = eta_delta(t) exp(int_0^inf omega.A(t, x+s w) ds).
/// Pass the convection field of the operator itself: for the adjoint of
/// L_{A,q} that is -A, which yields the exp(-int omega.A) profile solving
/// omega.(grad + A_passed) B = 0.
inline Amplitude build_Bd(const std::vector<ScalarField>& A, const Vec& omega, double delta,
                          const SpaceTimeGrid& grid) {
    if (std::abs(omega.norm() - 1.0) > 1e-12)
        throw std::invalid_argument("omega must be a unit vector");
    auto eta = std::make_shared<Eta>(delta, grid.final_time());
    auto Af = std::make_shared<std::vector<ScalarField>>(A);
    double step = grid.hx() / 2.0;
    Vec om = omega;
    Amplitude amp;
    amp.transport_A = A;
    amp.omega = omega;
    amp.delta = delta;
    amp.static_profile = true;
    for (const auto& f : A) amp.static_profile = amp.static_profile && !f.time_dependent();
    amp.eval = [eta, Af, om, step](double t, const Vec& x) -> cplx {
        double e = (*eta)(t);
        if (e == 0.0) return cplx(0.0);
        return cplx(e * std::exp(detail::ray_os(*Af, om, t, x, RayExtent::to_exit, step)));
    };
    return amp;
}

/// Growing-side amplitude
///   B = eta(t) xi/|xi| . grad( e^{-i(t tau + x.xi)} e^{int_R omega.D ds} )
///       * e^{int_0^inf omega.A2 ds}
/// with xi.omega = 0; gradients of the ray factor use analytic derivatives of
/// D under the chord integral, which requires D to vanish on the lateral
/// boundary (it is the difference field of two pairs agreeing on Sigma).
/// Solves omega.(grad + A2) B = 0.
inline Amplitude build_Bg(const std::vector<ScalarField>& A2, const std::vector<ScalarField>& D,
                          const Vec& omega, double tau, const Vec& xi, double delta,
                          const SpaceTimeGrid& grid) {
    if (std::abs(omega.norm() - 1.0) > 1e-12)
        throw std::invalid_argument("omega must be a unit vector");
    double xin = xi.norm();
    if (xin == 0.0) throw std::invalid_argument("xi must be nonzero");
    if (std::abs(xi.dot(omega)) > 1e-12 * xin)
        throw std::invalid_argument("xi must be orthogonal to omega");
    auto eta = std::make_shared<Eta>(delta, grid.final_time());
    auto A2f = std::make_shared<std::vector<ScalarField>>(A2);
    auto Df = std::make_shared<std::vector<ScalarField>>(D);
    double step = grid.hx() / 2.0;
    Vec om = omega, xiv = xi;
    Amplitude amp;
    amp.transport_A = A2;
    amp.omega = omega;
    amp.delta = delta;
    amp.tau = tau;
    amp.xi = xi;
    amp.has_frequency = true;
    amp.static_profile = true;
    for (const auto& f : A2) amp.static_profile = amp.static_profile && !f.time_dependent();
    for (const auto& f : D) amp.static_profile = amp.static_profile && !f.time_dependent();
    amp.eval = [eta, A2f, Df, om, xiv, xin, tau, step](double t, const Vec& x) -> cplx {
        double e = (*eta)(t);
        if (e == 0.0) return cplx(0.0);
        double F = detail::ray_os(*Df, om, t, x, RayExtent::full_line, step);
        Vec gF = detail::ray_grad(*Df, om, t, x, RayExtent::full_line, step);
        double ray2 = detail::ray_os(*A2f, om, t, x, RayExtent::to_exit, step);
        double phase = -(t * tau + x.dot(xiv));
        cplx E(std::cos(phase), std::sin(phase));
        cplx dir = cplx(xiv.dot(gF) / xin, -xin);  // xi/|xi| . (grad F - i xi)
        return e * E * std::exp(F) * dir * std::exp(ray2);
    };
    return amp;
}

/// Sample an amplitude on the grid. Ray integrals of static fields are hoisted
/// out of the time loop.
inline GridFunction sample_amplitude(const SpaceTimeGrid& g, const Amplitude& amp) {
    GridFunction B(g);
    Eta eta(amp.delta, g.final_time());

    if (!amp.static_profile) {
        for (int k = 0; k <= g.time_steps(); ++k) {
            double t = g.time(k);
            if (eta(t) == 0.0) continue;
            cplx* lev = B.level(k);
            for (long p = 0; p < g.space_points(); ++p) lev[p] = amp.eval(t, g.coords(p));
        }
        return B;
    }
    // static spatial profile: evaluate once at a time where eta = 1 and
    // rescale through eta(t) and the time phase
    double tref = g.final_time() / 2.0;
    double eref = eta(tref);
    std::vector<cplx> profile(static_cast<size_t>(g.space_points()));
    for (long p = 0; p < g.space_points(); ++p) profile[static_cast<size_t>(p)] = amp.eval(tref, g.coords(p));
    for (int k = 0; k <= g.time_steps(); ++k) {
        double t = g.time(k);
        double e = eta(t);
        if (e == 0.0) continue;
        cplx tphase(1.0);
        if (amp.has_frequency) {
            double dphi = -(t - tref) * amp.tau;
            tphase = cplx(std::cos(dphi), std::sin(dphi));
        }
        cplx scale = (e / eref) * tphase;
        cplx* lev = B.level(k);
        for (long p = 0; p < g.space_points(); ++p) lev[p] = scale * profile[static_cast<size_t>(p)];
    }
    return B;
}

/// Max over interior nodes of |omega.grad_h B + (omega.A) B| with the central
/// difference gradient; the discrete form of the transport identity.
inline double transport_residual_max(const SpaceTimeGrid& g, const GridFunction& B,
                                     const std::vector<ScalarField>& A, const Vec& omega,
                                     const std::vector<int>& levels) {
    double m = 0.0;
    for (int k : levels) {
        double t = g.time(k);
        const cplx* lev = B.level(k);
        for (long p : g.interior()) {
            int idx[kMaxDim];
            g.decode(p, idx);
            bool inner = true;
            for (int a = 0; a < g.dim(); ++a)
                inner = inner && idx[a] >= 1 && idx[a] <= g.points_per_axis() - 2;
            if (!inner) continue;
            Vec x = g.coords(p);
            cplx r = 0.0;
            double omA = 0.0;
            for (int a = 0; a < g.dim(); ++a) {
                r += omega[a] * (lev[g.shift(p, a, 1)] - lev[g.shift(p, a, -1)]) / (2.0 * g.hx());
                omA += omega[a] * A[static_cast<size_t>(a)](t, x);
            }
            r += omA * lev[p];
            m = std::max(m, std::abs(r));
        }
    }
    return m;
}

/// Geometric-optics solution kept in conjugated variables: w = e^{-phi} u for
/// the growing sign, w = e^{+phi} u for the decaying sign, so w = B + R and
/// no exponential of lambda^2 T is ever formed.
struct GOSolution {
    GOSign sign = GOSign::growing;
    CarlemanWeight weight{1.0, Vec(1.0, 0.0)};
    double tau = 0.0;
    Vec xi;
    double delta = 0.0;
    GridFunction B;           // principal amplitude on the grid
    GridFunction conjugated;  // w = B + R
    GridFunction R;           // remainder
    double norm_R_L2 = 0.0;   // L2(0,T; L2)
    double norm_R_H1 = 0.0;   // L2(0,T; H1)
    double solver_residual = 0.0;
};

/// Constructive remainder: solve the conjugated IBVP with lateral data B|_Sigma
/// and zero initial (growing) or terminal (decaying) state, then R = w - B.
inline GOSolution build_go_solution(const SpaceTimeGrid& g, const CoefficientPair& pair,
                                    const Amplitude& amp, const CarlemanWeight& weight,
                                    GOSign sign, Scheme scheme,
                                    Propagator* shared_propagator = nullptr) {
    GOSolution sol;
    sol.sign = sign;
    sol.weight = weight;
    sol.tau = amp.tau;
    sol.xi = amp.xi;
    sol.delta = amp.delta;
    sol.B = sample_amplitude(g, amp);

    int nt = g.time_steps();
    const GridFunction& B = sol.B;
    DirichletProvider data = [&g, &B, sign, nt](int level, std::vector<cplx>& out) {
        int k = (sign == GOSign::growing) ? level : nt - level;
        const auto& bn = g.boundary();
        out.resize(bn.size());
        const cplx* lev = B.level(k);
        for (std::size_t i = 0; i < bn.size(); ++i) out[i] = lev[bn[i].node];
    };

    std::vector<cplx> zero_init(static_cast<size_t>(g.space_points()), cplx(0.0));
    IBVPSolution ib;
    if (shared_propagator) {
        ib = shared_propagator->run(zero_init, data);
    } else if (sign == GOSign::growing) {
        Propagator prop(g, conjugated_growing_operator(g, pair, weight.lambda, weight.omega),
                        scheme);
        ib = prop.run(zero_init, data);
    } else {
        Propagator prop(
            g, conjugated_decaying_reversed_operator(g, pair, weight.lambda, weight.omega),
            scheme);
        ib = prop.run(zero_init, data);
    }
    sol.solver_residual = ib.residual_norm;

    sol.conjugated = GridFunction(g);
    if (sign == GOSign::growing) {
        sol.conjugated = ib.u;
    } else {
        for (int k = 0; k <= nt; ++k)
            std::copy(ib.u.level(nt - k), ib.u.level(nt - k) + g.space_points(),
                      sol.conjugated.level(k));
    }
    sol.R = sol.conjugated;
    for (std::size_t i = 0; i < sol.R.data.size(); ++i) sol.R.data[i] -= sol.B.data[i];
    sol.norm_R_L2 = discrete_norm(g, sol.R, NormKind::L2_Q);
    sol.norm_R_H1 = discrete_norm(g, sol.R, NormKind::H1_Q);
    return sol;
}

namespace detail {

inline std::mutex& fftw_mutex() {
    static std::mutex m;
    return m;
}

/// Unnormalized forward DFT over the spatial lattice with the duplicate
/// periodic endpoint dropped (M = Nx - 1 points per axis).
inline void spatial_dft(const SpaceTimeGrid& g, const cplx* level, std::vector<cplx>& out) {
    int M = g.points_per_axis() - 1;
    int n = g.dim();
    long total = 1;
    for (int a = 0; a < n; ++a) total *= M;
    out.assign(static_cast<size_t>(total), cplx(0.0));
    // gather the periodic sub-lattice
    std::vector<cplx> buf(static_cast<size_t>(total));
    int idx[kMaxDim];
    for (long m = 0; m < total; ++m) {
        long rem = m;
        for (int a = 0; a < n; ++a) {
            idx[a] = int(rem % M);
            rem /= M;
        }
        buf[static_cast<size_t>(m)] = level[g.encode(idx)];
    }
    std::lock_guard<std::mutex> lk(fftw_mutex());
    int dims[kMaxDim];
    for (int a = 0; a < n; ++a) dims[a] = M;  // row-major for fftw: reverse below
    std::reverse(dims, dims + n);
    fftw_plan plan = fftw_plan_dft(n, dims, reinterpret_cast<fftw_complex*>(buf.data()),
                                   reinterpret_cast<fftw_complex*>(out.data()), FFTW_FORWARD,
                                   FFTW_ESTIMATE);
    fftw_execute(plan);
    fftw_destroy_plan(plan);
}

}  // namespace detail

/// Discrete lambda-weighted Sobolev norm ||u(t,.)||_{H^m_lambda} integrated in
/// time: weight (lambda^2 + |xi|^2)^m over the periodic spatial spectrum of
/// the zero-extended field. For m = 0 this reduces to the L2(Q) norm.
inline double lambda_sobolev_norm(const SpaceTimeGrid& g, const GridFunction& u, double lambda,
                                  double m_order) {
    int M = g.points_per_axis() - 1;
    int n = g.dim();
    long total = 1;
    for (int a = 0; a < n; ++a) total *= M;
    double cell = std::pow(g.hx(), n) / double(total);
    std::vector<cplx> spec;
    double acc = 0.0;
    for (int k = 0; k <= g.time_steps(); ++k) {
        detail::spatial_dft(g, u.level(k), spec);
        double lev = 0.0;
        int idx[kMaxDim];
        for (long f = 0; f < total; ++f) {
            long rem = f;
            double xi2 = 0.0;
            for (int a = 0; a < n; ++a) {
                idx[a] = int(rem % M);
                rem /= M;
                int signed_k = idx[a] <= M / 2 ? idx[a] : idx[a] - M;
                double xia = 2.0 * std::numbers::pi * signed_k;
                xi2 += xia * xia;
            }
            // fftw used reversed dims; |xi|^2 is symmetric so order is immaterial
            lev += std::pow(lambda * lambda + xi2, m_order) * std::norm(spec[static_cast<size_t>(f)]);
        }
        acc += g.time_weight(k) * cell * lev;
    }
    return std::sqrt(acc);
}

/// Apply the conjugated operator P = e^{-phi} L_{A,q} e^{phi} to a closed-form
/// test function: P u = L u - 2 lambda omega.(grad + A) u, all analytic.
inline double apply_conjugated_operator(const CoefficientPair& pair, const CarlemanWeight& w,
                                        const ScalarField& u, double t, const Vec& x) {
    double lu = apply_operator(pair, u, t, x);
    double correction = 0.0;
    Vec A = pair.A_at(t, x);
    for (int i = 0; i < x.n; ++i)
        correction += w.omega[i] * (u.dx(i, t, x) + A[i] * u(t, x));
    return lu - 2.0 * w.lambda * correction;
}

struct ShiftedIndexReport {
    double lhs = 0.0;  // ||u||_{L2(0,T;H^{-1}_lambda)}
    double rhs = 0.0;  // ||P_lambda u||_{L2(0,T;H^{-2}_lambda)}
};

/// Numerical check of the negative-order estimate: both sides of
/// ||u||_{H^{-1}_lambda} <= C ||P_lambda u||_{H^{-2}_lambda} for a compactly
/// supported test function.
inline ShiftedIndexReport shifted_index_check(const SpaceTimeGrid& g, const CoefficientPair& pair,
                                              const CarlemanWeight& w, const ScalarField& u) {
    GridFunction uf = sample(g, [&](double t, const Vec& x) { return u(t, x); });
    // support must stay at least 2 cells away from the lateral boundary
    double peak = discrete_norm(g, uf, NormKind::Linf);
    for (int k = 0; k <= g.time_steps(); ++k) {
        const cplx* lev = uf.level(k);
        for (long p = 0; p < g.space_points(); ++p) {
            int idx[kMaxDim];
            g.decode(p, idx);
            bool margin = false;
            for (int a = 0; a < g.dim(); ++a)
                margin = margin || idx[a] < 2 || idx[a] > g.points_per_axis() - 3;
            if (margin && std::abs(lev[p]) > 1e-12 * std::max(1.0, peak))
                throw std::invalid_argument(
                    "test function must be supported 2 cells away from the boundary");
        }
    }
    GridFunction pu =
        sample(g, [&](double t, const Vec& x) { return apply_conjugated_operator(pair, w, u, t, x); });
    ShiftedIndexReport rep;
    rep.lhs = lambda_sobolev_norm(g, uf, w.lambda, -1.0);
    rep.rhs = lambda_sobolev_norm(g, pu, w.lambda, -2.0);
    return rep;
}

}  // namespace cdlab
