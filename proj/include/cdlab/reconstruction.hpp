#pragma once

#include <Eigen/Dense>
#include <map>
#include <numeric>

#include "cdlab/carleman.hpp"

namespace cdlab {

/// Coupled large/small parameters of the stability analysis. The couplings
/// tie the cutoff width, frequency radius and Carleman parameter together;
/// theta is the conditional-stability exponent (a config input here), and
/// kappa/beta/mu1/mu2 are empirical constants carried for bookkeeping.
struct StabilityParams {
    double theta = 0.5;
    double R = 1.0;
    double delta = 1.0;         // R^{-2/3}
    double lambda = 1.0;        // R^{alpha + 8 + 2/(3 theta)} e^{2R(1-theta)/theta}
    double alpha = 0.0;         // 6 + (n^2 + n + 6)/(n theta)
    double alpha_prime = 0.0;   // 6 + (n+1)/theta
    double lambda_q = 1.0;      // same coupling with alpha_prime
    double kappa = 1.0;
    double beta = 1.0;
    double mu1 = 1.0;
    double mu2 = 1.0;
};

inline StabilityParams couple_parameters(double R, double theta, int n) {
    if (!(theta > 0.0 && theta < 1.0))
        throw std::invalid_argument("stability exponent theta must lie in (0,1)");
    if (!(R >= 1.0)) throw std::invalid_argument("frequency radius R must be >= 1");
    StabilityParams p;
    p.theta = theta;
    p.R = R;
    p.delta = std::pow(R, -2.0 / 3.0);
    p.alpha = 6.0 + (double(n) * n + n + 6.0) / (n * theta);
    p.alpha_prime = 6.0 + (n + 1.0) / theta;
    double expfac = std::exp(2.0 * R * (1.0 - theta) / theta);
    p.lambda = std::pow(R, p.alpha + 8.0 + 2.0 / (3.0 * theta)) * expfac;
    p.lambda_q = std::pow(R, p.alpha_prime + 8.0 + 2.0 / (3.0 * theta)) * expfac;
    return p;
}

/// Inverse couplings: the frequency radius induced by a measurement size.
inline double radius_from_dn_A(double dn, double kappa) {
    if (!(dn > 0.0 && dn < std::exp(-std::numbers::e)))
        throw std::invalid_argument("dn norm out of the double-log domain");
    return std::log(std::abs(std::log(dn))) / kappa;
}
inline double radius_from_dn_q(double dn, double kappa, double mu1) {
    if (!(dn > 0.0 && std::log(std::abs(std::log(dn))) > 1.0))
        throw std::invalid_argument("dn norm out of the triple-log domain");
    return (mu1 / kappa) * std::log(std::log(std::abs(std::log(dn))));
}

/// Spherical cap of admissible probing directions.
inline bool in_cap(const Vec& omega, const Vec& omega0, double eps) {
    return (omega - omega0).norm() <= eps / 2.0 + 1e-14;
}

struct DirectionSystem {
    Eigen::MatrixXd M;            // rows: omega_1..omega_{n-1}, xi/|xi|
    std::vector<Vec> omegas;      // cap directions orthogonal to xi
    double det = 0.0;
};

/// Directions in the cap orthogonal to xi plus the xi row. n=2 picks the
/// in-cap rotation of xi; n=3 rotates the cap projection inside the plane
/// orthogonal to xi, spreading the two directions for a determinant floor.
inline DirectionSystem assemble_Mxi(const Vec& xi, const Vec& omega0, double eps) {
    int n = xi.n;
    double xin = xi.norm();
    if (xin == 0.0) throw std::invalid_argument("xi must be nonzero");
    if (std::abs(omega0.norm() - 1.0) > 1e-12)
        throw std::invalid_argument("omega0 must be a unit vector");
    Vec xhat = xi * (1.0 / xin);
    DirectionSystem sys;

    if (n == 2) {
        Vec cand1(-xhat[1], xhat[0]);
        Vec cand2(xhat[1], -xhat[0]);
        Vec pick(2);
        bool ok1 = in_cap(cand1, omega0, eps), ok2 = in_cap(cand2, omega0, eps);
        if (!ok1 && !ok2)
            throw std::invalid_argument(
                "no cap direction is orthogonal to xi: frequency outside the admissible cone");
        pick = (!ok2 || (ok1 && (cand1 - omega0).norm() <= (cand2 - omega0).norm())) ? cand1
                                                                                     : cand2;
        sys.omegas = {pick};
        sys.M.resize(2, 2);
        sys.M << pick[0], pick[1], xhat[0], xhat[1];
    } else if (n == 3) {
        double c = omega0.dot(xhat);
        Vec proj = omega0 - xhat * c;
        double pn = proj.norm();
        if (pn < 1e-12)
            throw std::invalid_argument(
                "no cap direction is orthogonal to xi: frequency outside the admissible cone");
        Vec wa = proj * (1.0 / pn);
        // in-plane rotation range keeping |omega - omega0| <= eps/2
        double c0 = omega0.dot(wa);
        double gamma = (2.0 - eps * eps / 4.0) / (2.0 * c0);
        if (gamma >= 1.0)
            throw std::invalid_argument(
                "no cap direction is orthogonal to xi: frequency outside the admissible cone");
        double rho_max = std::acos(std::max(-1.0, gamma));
        double rho = std::min(0.95 * rho_max, std::numbers::pi / 4.0);
        Vec e2(xhat[1] * wa[2] - xhat[2] * wa[1], xhat[2] * wa[0] - xhat[0] * wa[2],
               xhat[0] * wa[1] - xhat[1] * wa[0]);
        auto rot = [&](double ang) {
            Vec w(3);
            for (int i = 0; i < 3; ++i) w[i] = std::cos(ang) * wa[i] + std::sin(ang) * e2[i];
            return w;
        };
        sys.omegas = {rot(rho), rot(-rho)};
        sys.M.resize(3, 3);
        for (int r = 0; r < 2; ++r)
            for (int i = 0; i < 3; ++i) sys.M(r, i) = sys.omegas[static_cast<size_t>(r)][i];
        for (int i = 0; i < 3; ++i) sys.M(2, i) = xhat[i];
    } else {
        throw std::invalid_argument("direction systems support n = 2 or 3");
    }
    sys.det = sys.M.determinant();
    if (std::abs(sys.det) < 1e-12)
        throw std::runtime_error("degenerate direction system despite cap admissibility");
    return sys;
}

/// Solve M xhat_A = (G_1..G_{n-1}, 0): the zero right-hand side in the xi row
/// encodes the divergence-free constraint.
inline Eigen::VectorXcd solve_component_system(const std::vector<cplx>& G,
                                               const DirectionSystem& sys) {
    int n = int(sys.M.rows());
    if (int(G.size()) != n - 1)
        throw std::invalid_argument("need one sample per cap direction");
    Eigen::VectorXcd rhs(n);
    for (int i = 0; i < n - 1; ++i) rhs(i) = G[static_cast<size_t>(i)];
    rhs(n - 1) = cplx(0.0);
    return sys.M.cast<cplx>().partialPivLu().solve(rhs);
}

/// Space-time Fourier coefficient int_Q e^{-i(t tau + x.xi)} f dx dt by
/// trapezoidal quadrature (f is zero-extended outside the box, so the lattice
/// coefficients match the enclosing-box series).
inline cplx space_time_fourier(const SpaceTimeGrid& g, const GridFunction& f, double tau,
                               const Vec& xi) {
    cplx acc = 0.0;
    for (int k = 0; k <= g.time_steps(); ++k) {
        double t = g.time(k);
        const cplx* lev = f.level(k);
        cplx lacc = 0.0;
        for (long p = 0; p < g.space_points(); ++p) {
            Vec x = g.coords(p);
            double phase = -(t * tau + x.dot(xi));
            lacc += g.volume_weight(p) * lev[p] * cplx(std::cos(phase), std::sin(phase));
        }
        acc += g.time_weight(k) * lacc;
    }
    return acc;
}

/// Full FFT of a field over the enclosing box [0,T] x [-0.5, 1.5]^n at the
/// grid resolution; exposes the lattice coefficients tau_j = 2 pi j / T,
/// xi_k = pi k. The spatial phase correction accounts for the box origin.
class BoxSpectrum {
public:
    template <class F>
    BoxSpectrum(const SpaceTimeGrid& g, F&& field) : g_(&g) {
        Mt_ = g.time_steps();
        Ms_ = 2 * (g.points_per_axis() - 1);
        n_ = g.dim();
        long total = Mt_;
        for (int a = 0; a < n_; ++a) total *= Ms_;
        std::vector<cplx> buf(static_cast<size_t>(total), cplx(0.0));
        // nonzero samples only inside the closed unit box
        long inner = g.space_points();
        int off = (g.points_per_axis() - 1) / 2;
        int idx[kMaxDim];
        for (int k = 0; k < Mt_; ++k) {
            double t = g.time(k);
            for (long p = 0; p < inner; ++p) {
                g.decode(p, idx);
                long flat = 0, stride = 1;
                for (int a = 0; a < n_; ++a) {
                    flat += (long(idx[a]) + off) * stride;
                    stride *= Ms_;
                }
                buf[static_cast<size_t>(long(k) * (total / Mt_) + flat)] = field(k, t, g.coords(p));
            }
        }
        spec_.assign(static_cast<size_t>(total), cplx(0.0));
        {
            std::lock_guard<std::mutex> lk(detail::fftw_mutex());
            int dims[1 + kMaxDim];
            dims[0] = Mt_;
            for (int a = 0; a < n_; ++a) dims[1 + a] = Ms_;    // row-major outermost first
            std::reverse(dims + 1, dims + 1 + n_);             // spatial axes are fastest
            fftw_plan plan = fftw_plan_dft(1 + n_, dims,
                                           reinterpret_cast<fftw_complex*>(buf.data()),
                                           reinterpret_cast<fftw_complex*>(spec_.data()),
                                           FFTW_FORWARD, FFTW_ESTIMATE);
            fftw_execute(plan);
            fftw_destroy_plan(plan);
        }
    }

    /// Coefficient at (tau_j, xi_k) ~= int e^{-i(t tau + x.xi)} f.
    cplx at(int jt, const std::array<int, kMaxDim>& kx) const {
        const SpaceTimeGrid& g = *g_;
        long flat = 0, stride = 1;
        for (int a = 0; a < n_; ++a) {
            int m = ((kx[static_cast<size_t>(a)] % Ms_) + Ms_) % Ms_;
            flat += long(m) * stride;
            stride *= Ms_;
        }
        int mt = ((jt % Mt_) + Mt_) % Mt_;
        cplx raw = spec_[static_cast<size_t>(long(mt) * stride + flat)];
        // quadrature cell and the phase of the spatial origin x0 = -1/2
        double cellvol = (g.final_time() / Mt_) * std::pow(g.hx(), n_);
        double phase = 0.0;
        for (int a = 0; a < n_; ++a)
            phase += std::numbers::pi * kx[static_cast<size_t>(a)] * 0.5;  // -xi_a * x0
        return raw * cellvol * cplx(std::cos(phase), std::sin(phase));
    }

private:
    const SpaceTimeGrid* g_;
    std::vector<cplx> spec_;
    int Mt_ = 0, Ms_ = 0, n_ = 0;
};

/// One probed frequency with its direction and error budget.
struct FrequencySample {
    double tau = 0.0;
    Vec xi;
    Vec omega;
    cplx value;                // estimate of (eta^2 omega.A)^(tau, xi)
    double budget_lambda = 0.0;  // 1/sqrt(lambda)
    double budget_dn = 0.0;      // e^{beta lambda} |dLambda|
};

/// Coherent dwell factor of the probing solution. The probe defect
/// (i tau - |xi|^2) B2 accumulates multiplicatively along the 2 lambda omega
/// characteristics, so the solved probe is w2 = B2 exp((i tau - |xi|^2)
/// l(x) / (2 lambda)) to leading order with l the dwell since inflow; the
/// chord-averaged factor is
///   zeta = exp((i tau - |xi|^2) lbar / (2 lambda)),  lbar = 1/2.
/// Dividing the extracted coefficient by zeta removes the dominant
/// finite-lambda attenuation. The division is only applied on trusted
/// shells (|xi|^2 lbar / (2 lambda) <= 0.8); beyond that the probe carries
/// too little signal for the correction to be meaningful and the raw value
/// is returned.
inline cplx probe_dwell_factor(double tau, const Vec& xi, double lambda) {
    double expo = -xi.dot(xi) * 0.5 / (2.0 * lambda);
    if (expo < -0.8) return cplx(1.0);
    return std::exp(cplx(expo, tau * 0.5 / (2.0 * lambda)));
}

/// Division step of the Fourier extraction. The per-ray computation gives
///   int_Q (omega.A) B2 B = -i |xi| (eta^2 omega.A)^(tau, xi)
/// (the fundamental-theorem step fixes the sign: the integral of
/// -f' e^{-f} over the chord is 1 - e^{-F}), so with the identity
///   2 int (A.grad u2) conj(v) - int qtilde u2 conj(v) = -int_Sigma conj(v) d_nu u
/// the estimate is (boundary_term - qtilde_term) / (2 lambda i |xi| zeta),
/// where boundary_term = int conj(v) d_nu u over the measured set,
/// qtilde_term is the (unknown in blind mode) int qtilde u2 conj(v), and
/// zeta is the dwell factor above. The dropped remainder crosses contribute
/// the 1/sqrt(lambda) budget; unmeasured boundary and data error contribute
/// e^{beta lambda} |dLambda|.
inline FrequencySample fourier_omega_A_hat(cplx boundary_term, cplx qtilde_term, double lambda,
                                           const Vec& xi, double beta = 1.0, double dn_norm = 0.0,
                                           double tau = 0.0, bool dwell_correction = true) {
    double xin = xi.norm();
    if (xin == 0.0)
        throw std::invalid_argument("the Fourier identity degenerates at xi = 0");
    if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
    FrequencySample s;
    s.xi = xi;
    s.tau = tau;
    s.value = (boundary_term - qtilde_term) / (2.0 * lambda * cplx(0.0, 1.0) * xin);
    if (dwell_correction) s.value /= probe_dwell_factor(tau, xi, lambda);
    s.budget_lambda = 1.0 / std::sqrt(lambda);
    s.budget_dn = std::exp(std::min(700.0, beta * lambda)) * dn_norm;
    return s;
}

enum class ReconMode { full_data, cone };

struct ReconstructionConfig {
    double lambda = 32.0;
    double delta = 0.3;
    int jt_max = 4;       // time-frequency index range
    int k_max = 3;        // spatial-frequency index range per axis
    double R_freq = 0.0;  // optional ball cutoff on |(tau,xi)|; 0 = rectangle only
    ReconMode mode = ReconMode::full_data;
    Vec omega0 = Vec(1.0, 0.0);
    double eps = 0.5;
    Scheme scheme = Scheme::crank_nicolson;
    bool subtract_q_diagnostic = false;  // use the known-field q-term correction
    double beta = 1.0;
    double dn_norm = 0.0;       // measurement size for the budget bookkeeping
    double box_margin = 0.5;    // frequency-box margin; 0 = tight box
};

struct ReconstructionResult {
    std::vector<GridFunction> A;  // recovered eta^2 (A1 - A2), one per component
    std::vector<FrequencySample> samples;
    double min_abs_det = std::numeric_limits<double>::infinity();
    double rel_l2_error = -1.0;   // against the known truth, when available
    double linf_error = -1.0;
    long skipped_outside_cone = 0;
};

namespace detail {

struct LatticePoint {
    int jt = 0;
    std::array<int, kMaxDim> k{};
    double tau = 0.0;
    Vec xi;
};

/// Half lattice of nonzero spatial frequencies: representatives under
/// (jt,k) -> -(jt,k) with the first nonzero spatial index positive. The
/// spatial spacing is 2 pi / (1 + 2 margin) for the enclosing box
/// [-margin, 1+margin]^n; margin = 0 is the tight box, exact for fields
/// vanishing on the lateral boundary.
inline std::vector<LatticePoint> half_lattice(const SpaceTimeGrid& g, int jt_max, int k_max,
                                              double R_freq, double box_margin = 0.5) {
    std::vector<LatticePoint> pts;
    int n = g.dim();
    double xi_spacing = 2.0 * std::numbers::pi / (1.0 + 2.0 * box_margin);
    std::array<int, kMaxDim> k{};
    std::function<void(int)> rec = [&](int axis) {
        if (axis == n) {
            int lead = 0;
            for (int a = n - 1; a >= 0; --a)
                if (k[static_cast<size_t>(a)] != 0) lead = k[static_cast<size_t>(a)];
            bool any = false;
            for (int a = 0; a < n; ++a) any = any || k[static_cast<size_t>(a)] != 0;
            if (!any || lead < 0) return;  // skip xi=0 and keep one of each +-pair
            for (int jt = -jt_max; jt <= jt_max; ++jt) {
                LatticePoint pt;
                pt.jt = jt;
                pt.k = k;
                pt.tau = 2.0 * std::numbers::pi * jt / g.final_time();
                pt.xi = Vec(n);
                for (int a = 0; a < n; ++a)
                    pt.xi[a] = xi_spacing * k[static_cast<size_t>(a)];
                if (R_freq > 0.0) {
                    double r2 = pt.tau * pt.tau + pt.xi.dot(pt.xi);
                    if (r2 > R_freq * R_freq) continue;
                }
                pts.push_back(pt);
            }
            return;
        }
        for (int v = -k_max; v <= k_max; ++v) {
            k[static_cast<size_t>(axis)] = v;
            rec(axis + 1);
        }
    };
    rec(0);
    return pts;
}

/// Per-direction ray-integral tables shared by every (tau, |xi|) in a group:
/// F = int_R omega.D, gdot = xihat.grad F, ray2 = int_0^inf omega.A2.
struct RayTables {
    std::vector<double> F, gdot, ray2;
};

inline RayTables build_ray_tables(const SpaceTimeGrid& g, const std::vector<ScalarField>& A2,
                                  const std::vector<ScalarField>& D, const Vec& omega,
                                  const Vec& xhat, double t) {
    RayTables tab;
    long np = g.space_points();
    tab.F.resize(static_cast<size_t>(np));
    tab.gdot.resize(static_cast<size_t>(np));
    tab.ray2.resize(static_cast<size_t>(np));
    double step = g.hx() / 2.0;
    for (long p = 0; p < np; ++p) {
        Vec x = g.coords(p);
        tab.F[static_cast<size_t>(p)] = ray_os(D, omega, t, x, RayExtent::full_line, step);
        Vec gf = ray_grad(D, omega, t, x, RayExtent::full_line, step);
        tab.gdot[static_cast<size_t>(p)] = xhat.dot(gf);
        tab.ray2[static_cast<size_t>(p)] = ray_os(A2, omega, t, x, RayExtent::to_exit, step);
    }
    return tab;
}

}  // namespace detail

/// Diagnostic: residual of the Green-formula identity
///   2 int (A.grad u2) conj(v) - int qtilde u2 conj(v) + int_Sigma conj(v) d_nu u
/// evaluated entirely on conjugated variables (exponential-free). Should
/// vanish under refinement; the qtilde sign follows the verified operator
/// expansion qtilde_i = q_i - div A_i - |A_i|^2.
inline cplx integral_identity_residual(const SpaceTimeGrid& g, const CoefficientPair& pair1,
                                       const CoefficientPair& pair2, const GOSolution& u2,
                                       const GOSolution& v, const GridFunction& u_conj) {
    if (u2.conjugated.npts != g.space_points() || v.conjugated.npts != g.space_points() ||
        u_conj.npts != g.space_points())
        throw std::invalid_argument("solution grids do not match");
    double lambda = u2.weight.lambda;
    const Vec& omega = u2.weight.omega;
    ScalarField qt1 = expand_operator(pair1).zeroth;
    ScalarField qt2 = expand_operator(pair2).zeroth;

    cplx volume = 0.0;
    for (int k = 0; k <= g.time_steps(); ++k) {
        double t = g.time(k), wt = g.time_weight(k);
        const cplx* w2 = u2.conjugated.level(k);
        const cplx* wv = v.conjugated.level(k);
        cplx acc = 0.0;
        for (long p = 0; p < g.space_points(); ++p) {
            Vec x = g.coords(p);
            Vec A = pair1.A_at(t, x) - pair2.A_at(t, x);
            cplx a_grad = lambda * omega.dot(A) * w2[p];
            for (int ax = 0; ax < g.dim(); ++ax)
                a_grad += A[ax] * detail::spatial_derivative(g, w2, p, ax);
            double qt = qt1(t, x) - qt2(t, x);
            acc += g.volume_weight(p) *
                   (2.0 * a_grad - qt * w2[p]) * std::conj(wv[p]);
        }
        volume += wt * acc;
    }

    BoundaryFunction tr = neumann_trace(g, u_conj);
    cplx boundary = 0.0;
    const auto& bn = g.boundary();
    for (int k = 0; k <= g.time_steps(); ++k) {
        double wt = g.time_weight(k);
        const cplx* wv = v.conjugated.level(k);
        cplx acc = 0.0;
        for (std::size_t i = 0; i < bn.size(); ++i) {
            if (bn[i].corner) continue;
            acc += g.face_weight(bn[i]) * std::conj(wv[bn[i].node]) * tr.at(k, long(i));
        }
        boundary += wt * acc;
    }
    return volume + boundary;
}

namespace detail {

/// One (pair1, pair2, lambda, omega) probe engine: runs the conjugated pair
/// against a Dirichlet amplitude and returns the measured boundary term of
/// the integral identity, all on conjugated variables.
class ProbeEngine {
public:
    ProbeEngine(const SpaceTimeGrid& g, const CoefficientPair& pair1,
                const CoefficientPair& pair2, double lambda, const Vec& omega, double delta,
                Scheme scheme, const BoundaryPartition* measured)
        : g_(&g),
          prop2_(g, conjugated_growing_operator(g, pair2, lambda, omega), scheme),
          prop1_(g, conjugated_growing_operator(g, pair1, lambda, omega), scheme),
          part_(measured),
          zero_(static_cast<size_t>(g.space_points()), cplx(0.0)) {
        CarlemanWeight w(lambda, omega);
        Amplitude ampv = build_Bd(negated_fields(pair_A_fields(pair1)), omega, delta, g);
        wv_ = build_go_solution(g, pair1, ampv, w, GOSign::decaying, scheme);
    }

    const GOSolution& decaying() const { return wv_; }

    struct Result {
        cplx boundary_term;
        cplx q_diagnostic;
    };

    /// Boundary term int conj(w_v) d_nu(u1 - w2) over the measured set; the
    /// optional diagnostic is int qtilde u2 conj(v) from known fields.
    Result run(const GridFunction& B2, const ScalarField* qt_diff = nullptr) {
        const SpaceTimeGrid& g = *g_;
        DirichletProvider d2 = [&g, &B2](int level, std::vector<cplx>& outv) {
            const auto& bn = g.boundary();
            outv.resize(bn.size());
            const cplx* lev = B2.level(level);
            for (std::size_t i = 0; i < bn.size(); ++i) outv[i] = lev[bn[i].node];
        };
        IBVPSolution w2 = prop2_.run(zero_, d2);
        const GridFunction& w2f = w2.u;
        DirichletProvider d1 = [&g, &w2f](int level, std::vector<cplx>& outv) {
            const auto& bn = g.boundary();
            outv.resize(bn.size());
            const cplx* lev = w2f.level(level);
            for (std::size_t i = 0; i < bn.size(); ++i) outv[i] = lev[bn[i].node];
        };
        IBVPSolution u1 = prop1_.run(zero_, d1);
        GridFunction udiff = u1.u;
        for (std::size_t i = 0; i < udiff.data.size(); ++i) udiff.data[i] -= w2f.data[i];
        BoundaryFunction tr = neumann_trace(g, udiff);

        Result res;
        const auto& bn = g.boundary();
        for (int k = 0; k <= g.time_steps(); ++k) {
            double wt = g.time_weight(k);
            const cplx* wvl = wv_.conjugated.level(k);
            cplx acc = 0.0;
            for (std::size_t bi = 0; bi < bn.size(); ++bi) {
                if (bn[bi].corner) continue;
                if (part_ && !part_->in_minus(long(bi))) continue;
                acc += g.face_weight(bn[bi]) * std::conj(wvl[bn[bi].node]) * tr.at(k, long(bi));
            }
            res.boundary_term += wt * acc;
        }
        if (qt_diff) {
            for (int k = 0; k <= g.time_steps(); ++k) {
                double t = g.time(k), wt = g.time_weight(k);
                const cplx* w2l = w2f.level(k);
                const cplx* wvl = wv_.conjugated.level(k);
                cplx acc = 0.0;
                for (long p = 0; p < g.space_points(); ++p)
                    acc += g.volume_weight(p) * (*qt_diff)(t, g.coords(p)) * w2l[p] *
                           std::conj(wvl[p]);
                res.q_diagnostic += wt * acc;
            }
        }
        return res;
    }

private:
    const SpaceTimeGrid* g_;
    Propagator prop2_, prop1_;
    GOSolution wv_;
    const BoundaryPartition* part_;
    std::vector<cplx> zero_;
};

/// Direction system for a primitive lattice direction under the configured
/// mode; throws the cone error for inadmissible directions.
inline DirectionSystem mode_directions(const Vec& xhat, const ReconstructionConfig& cfg, int n) {
    double eff_eps = cfg.mode == ReconMode::full_data ? 1.999 : cfg.eps;
    Vec eff_omega0 = cfg.omega0;
    if (cfg.mode == ReconMode::full_data) {
        if (n == 2) {
            eff_omega0 = Vec(-xhat[1], xhat[0]);
        } else {
            Vec seed = std::abs(xhat[0]) < 0.9 ? Vec(1.0, 0.0, 0.0) : Vec(0.0, 1.0, 0.0);
            eff_omega0 = (seed - xhat * seed.dot(xhat)).normalized();
        }
    }
    return assemble_Mxi(xhat, eff_omega0, eff_eps);
}

struct FirstOrderSweep {
    std::vector<LatticePoint> pts;
    std::map<std::array<int, kMaxDim>, std::vector<std::size_t>> groups;
    std::vector<DirectionSystem> systems;          // per point
    std::vector<std::vector<cplx>> values;         // per point, per direction
    std::vector<std::vector<cplx>> truths;         // oracle transforms, when requested
    std::vector<char> have;
    std::vector<FrequencySample> samples;          // first direction, reporting
    double min_abs_det = std::numeric_limits<double>::infinity();
    long skipped = 0;
};

/// One full lattice sweep of the first-order extraction. When `want_truth`
/// is set the oracle transforms (eta^2 omega.A)^ are computed alongside for
/// calibration or error reporting.
inline FirstOrderSweep sweep_first_order(const SpaceTimeGrid& g, const CoefficientPair& pair1,
                                         const CoefficientPair& pair2,
                                         const ReconstructionConfig& cfg, bool want_truth) {
    FirstOrderSweep sw;
    int n = g.dim();
    sw.pts = half_lattice(g, cfg.jt_max, cfg.k_max, cfg.R_freq, cfg.box_margin);
    sw.systems.resize(sw.pts.size());
    sw.values.resize(sw.pts.size());
    sw.truths.resize(sw.pts.size());
    sw.have.assign(sw.pts.size(), 0);
    sw.samples.resize(sw.pts.size());

    std::optional<BoundaryPartition> part;
    if (cfg.mode == ReconMode::cone) part.emplace(g, cfg.omega0, cfg.eps);

    for (std::size_t i = 0; i < sw.pts.size(); ++i) {
        std::array<int, kMaxDim> prim = sw.pts[i].k;
        int gcd = 0;
        for (int a = 0; a < n; ++a) gcd = std::gcd(gcd, std::abs(prim[static_cast<size_t>(a)]));
        for (int a = 0; a < n; ++a) prim[static_cast<size_t>(a)] /= gcd;
        sw.groups[prim].push_back(i);
    }

    std::vector<ScalarField> A2f = pair_A_fields(pair2);
    std::vector<ScalarField> Df = difference_fields(pair1, pair2);
    ScalarField qt_diff(e_sub(expand_operator(pair1).zeroth.expr(),
                              expand_operator(pair2).zeroth.expr()), n);
    bool static_fields = !pair1.time_dependent() && !pair2.time_dependent();
    Eta eta(cfg.delta, g.final_time());

    for (const auto& [prim, members] : sw.groups) {
        Vec xhat(n);
        double pn = 0.0;
        for (int a = 0; a < n; ++a) {
            xhat[a] = double(prim[static_cast<size_t>(a)]);
            pn += xhat[a] * xhat[a];
        }
        pn = std::sqrt(pn);
        for (int a = 0; a < n; ++a) xhat[a] /= pn;

        DirectionSystem sys;
        try {
            sys = mode_directions(xhat, cfg, n);
        } catch (const std::invalid_argument&) {
            sw.skipped += long(members.size());
            continue;
        }
        sw.min_abs_det = std::min(sw.min_abs_det, std::abs(sys.det));
        for (std::size_t mi : members) sw.systems[mi] = sys;

        for (std::size_t dir = 0; dir < sys.omegas.size(); ++dir) {
            const Vec& omega = sys.omegas[dir];
            ProbeEngine engine(g, pair1, pair2, cfg.lambda, omega, cfg.delta, cfg.scheme,
                               part ? &*part : nullptr);
            RayTables tab;
            if (static_fields)
                tab = build_ray_tables(g, A2f, Df, omega, xhat, g.final_time() / 2.0);

            for (std::size_t mi : members) {
                const auto& pt = sw.pts[mi];
                double xin = pt.xi.norm();
                GridFunction B2(g);
                for (int k = 0; k <= g.time_steps(); ++k) {
                    double t = g.time(k), e = eta(t);
                    if (e == 0.0) continue;
                    RayTables local;
                    const RayTables* T = &tab;
                    if (!static_fields) {
                        local = build_ray_tables(g, A2f, Df, omega, xhat, t);
                        T = &local;
                    }
                    cplx* lev = B2.level(k);
                    for (long p = 0; p < g.space_points(); ++p) {
                        Vec x = g.coords(p);
                        double phase = -(t * pt.tau + x.dot(pt.xi));
                        cplx E(std::cos(phase), std::sin(phase));
                        cplx dirfac(T->gdot[static_cast<size_t>(p)], -xin);
                        lev[p] = e * E * std::exp(T->F[static_cast<size_t>(p)]) * dirfac *
                                 std::exp(T->ray2[static_cast<size_t>(p)]);
                    }
                }
                ProbeEngine::Result res =
                    engine.run(B2, cfg.subtract_q_diagnostic ? &qt_diff : nullptr);
                FrequencySample s =
                    fourier_omega_A_hat(res.boundary_term, res.q_diagnostic, cfg.lambda, pt.xi,
                                        cfg.beta, cfg.dn_norm, pt.tau);
                s.omega = omega;
                if (dir == 0) sw.samples[mi] = s;
                sw.values[mi].push_back(s.value);
                if (want_truth) {
                    GridFunction omA = sample(g, [&](double t, const Vec& x) {
                        double e = eta(t);
                        double v = 0.0;
                        for (int c = 0; c < n; ++c)
                            v += omega[c] * Df[static_cast<size_t>(c)](t, x);
                        return e * e * v;
                    });
                    sw.truths[mi].push_back(space_time_fourier(g, omA, pt.tau, pt.xi));
                }
                sw.have[mi] = sw.values[mi].size() == sys.omegas.size() ? 1 : 0;
            }
        }
    }
    return sw;
}

}  // namespace detail

/// Full first-order reconstruction: for each lattice frequency run the GO
/// pair on conjugated variables, extract (eta^2 omega.A)^ from the measured
/// boundary term, solve the direction system under the divergence-free
/// constraint, and invert the truncated series. In full_data mode every
/// direction is admissible and the whole lateral boundary is measured; cone
/// mode restricts directions to the cap and the data to the minus set, and
/// zero-fills outside the cone.
///
/// When `calibration_pair2` is given, the same sweep is first run against
/// that known phantom and the per-frequency transfer factors est/oracle are
/// divided out of the measured sweep. The factors are a property of the
/// probe geometry (field-independent to leading order), so this removes the
/// residual finite-lambda attenuation left after the analytic dwell factor.
inline ReconstructionResult reconstruct_A(const SpaceTimeGrid& g, const CoefficientPair& pair1,
                                          const CoefficientPair& pair2,
                                          const ReconstructionConfig& cfg,
                                          bool compare_to_truth = true,
                                          const CoefficientPair* calibration_pair2 = nullptr) {
    ReconstructionResult out;
    int n = g.dim();
    detail::FirstOrderSweep sw = detail::sweep_first_order(g, pair1, pair2, cfg, false);
    out.min_abs_det = sw.min_abs_det;
    out.skipped_outside_cone = sw.skipped;

    if (calibration_pair2) {
        detail::FirstOrderSweep cal =
            detail::sweep_first_order(g, pair1, *calibration_pair2, cfg, true);
        double scale = 0.0;
        for (std::size_t mi = 0; mi < cal.pts.size(); ++mi)
            for (const cplx& t : cal.truths[mi]) scale = std::max(scale, std::abs(t));
        for (std::size_t mi = 0; mi < sw.pts.size(); ++mi) {
            if (!sw.have[mi] || !cal.have[mi]) continue;
            for (std::size_t d = 0; d < sw.values[mi].size(); ++d) {
                cplx truth = cal.truths[mi][d];
                if (std::abs(truth) < 1e-3 * scale) continue;  // phantom silent here
                cplx kappa = cal.values[mi][d] / truth;
                if (std::abs(kappa) > 0.05) sw.values[mi][d] /= kappa;
            }
        }
    }

    std::vector<std::array<cplx, kMaxDim>> hatA(sw.pts.size());
    for (std::size_t mi = 0; mi < sw.pts.size(); ++mi) {
        if (!sw.have[mi]) continue;
        Eigen::VectorXcd a = solve_component_system(sw.values[mi], sw.systems[mi]);
        for (int c = 0; c < n; ++c) hatA[mi][static_cast<size_t>(c)] = a(c);
        out.samples.push_back(sw.samples[mi]);
    }

    double volbox = g.final_time() * std::pow(1.0 + 2.0 * cfg.box_margin, n);
    out.A.assign(static_cast<size_t>(n), GridFunction(g));
    for (int k = 0; k <= g.time_steps(); ++k) {
        double t = g.time(k);
        for (long p = 0; p < g.space_points(); ++p) {
            Vec x = g.coords(p);
            for (std::size_t mi = 0; mi < sw.pts.size(); ++mi) {
                if (!sw.have[mi]) continue;
                double phase = t * sw.pts[mi].tau + x.dot(sw.pts[mi].xi);
                cplx e(std::cos(phase), std::sin(phase));
                for (int c = 0; c < n; ++c)
                    out.A[static_cast<size_t>(c)].at(k, p) +=
                        2.0 * std::real(hatA[mi][static_cast<size_t>(c)] * e) / volbox;
            }
        }
    }

    if (compare_to_truth) {
        Eta eta(cfg.delta, g.final_time());
        double num = 0.0, den = 0.0, linf = 0.0;
        for (int k = 0; k <= g.time_steps(); ++k) {
            double t = g.time(k), e2 = eta(t) * eta(t), wt = g.time_weight(k);
            for (long p = 0; p < g.space_points(); ++p) {
                Vec x = g.coords(p);
                Vec truth = (pair1.A_at(t, x) - pair2.A_at(t, x)) * e2;
                double err2 = 0.0, tru2 = 0.0;
                for (int c = 0; c < n; ++c) {
                    double d = out.A[static_cast<size_t>(c)].at(k, p).real() - truth[c];
                    err2 += d * d;
                    tru2 += truth[c] * truth[c];
                    linf = std::max(linf, std::abs(d));
                }
                num += wt * g.volume_weight(p) * err2;
                den += wt * g.volume_weight(p) * tru2;
            }
        }
        out.rel_l2_error = den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
        out.linf_error = linf;
    }
    return out;
}

/// Second-pass amplitude without the gradient factor:
/// B = eta(t) e^{-i(t tau + x.xi)} e^{int_0^inf omega.A2}; still transported
/// by omega.(grad + A2) B = 0 thanks to xi.omega = 0.
inline Amplitude build_Bq(const std::vector<ScalarField>& A2, const Vec& omega, double tau,
                          const Vec& xi, double delta, const SpaceTimeGrid& grid) {
    if (std::abs(omega.norm() - 1.0) > 1e-12)
        throw std::invalid_argument("omega must be a unit vector");
    if (std::abs(xi.dot(omega)) > 1e-12 * std::max(1.0, xi.norm()))
        throw std::invalid_argument("xi must be orthogonal to omega");
    auto eta = std::make_shared<Eta>(delta, grid.final_time());
    auto A2f = std::make_shared<std::vector<ScalarField>>(A2);
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
    amp.eval = [eta, A2f, om, xiv, tau, step](double t, const Vec& x) -> cplx {
        double e = (*eta)(t);
        if (e == 0.0) return cplx(0.0);
        double ray2 = detail::ray_os(*A2f, om, t, x, RayExtent::to_exit, step);
        double phase = -(t * tau + x.dot(xiv));
        return e * cplx(std::cos(phase), std::sin(phase)) * std::exp(ray2);
    };
    return amp;
}

/// Extraction step of the zeroth-order pass: from the verified identity
///   int qtilde u2 conj(v) = boundary_term + 2 int (A.grad u2) conj(v),
/// the estimate of (eta^2 qtilde)^(tau,xi) is the boundary term plus the
/// principal part of the A term, 2 lambda (eta^2 omega.A)^(tau,xi), which the
/// caller supplies from the first pass (zero when A is not reconstructed);
/// the lambda ||A|| budget covers what is dropped. The same dwell factor as
/// in the first pass divides the result.
struct QtildeSample {
    double tau = 0.0;
    Vec xi;
    Vec omega;
    cplx value;
    double budget_lambdaA = 0.0;  // lambda * |A|_{L2(Q)} bookkeeping
    double budget_lambda = 0.0;   // 1/sqrt(lambda)
};

inline QtildeSample fourier_qtilde_hat(cplx boundary_term, cplx omegaA_hat, double lambda,
                                       double tau, const Vec& xi, const Vec& omega,
                                       double normA_l2 = 0.0, bool dwell_correction = true) {
    QtildeSample s;
    s.tau = tau;
    s.xi = xi;
    s.omega = omega;
    s.value = boundary_term + 2.0 * lambda * omegaA_hat;
    if (dwell_correction) s.value /= probe_dwell_factor(tau, xi, lambda);
    s.budget_lambdaA = lambda * normA_l2;
    s.budget_lambda = 1.0 / std::sqrt(lambda);
    return s;
}

struct QtildeResult {
    GridFunction qtilde;  // recovered eta^2 (qtilde1 - qtilde2)
    std::vector<QtildeSample> samples;
    double rel_l2_error = -1.0;
    long skipped_outside_cone = 0;
};

namespace detail {

struct ZerothSweep {
    std::vector<LatticePoint> pts;  // includes the xi = 0 modes (jt >= 0)
    std::vector<double> inv_weight;  // 2 for half-lattice points, 1 for the DC mode
    std::vector<cplx> values;
    std::vector<cplx> truths;
    std::vector<char> have;
    std::vector<QtildeSample> samples;
    long skipped = 0;
};

inline ZerothSweep sweep_zeroth_order(const SpaceTimeGrid& g, const CoefficientPair& pair1,
                                      const CoefficientPair& pair2,
                                      const ReconstructionConfig& cfg,
                                      const ReconstructionResult* first_pass, bool want_truth) {
    ZerothSweep sw;
    int n = g.dim();
    sw.pts = half_lattice(g, cfg.jt_max, cfg.k_max, cfg.R_freq, cfg.box_margin);
    for (const auto& pt : sw.pts) {
        (void)pt;
        sw.inv_weight.push_back(2.0);
    }
    // xi = 0 modes: the zeroth-order field has nonzero spatial mean
    for (int jt = 0; jt <= cfg.jt_max; ++jt) {
        LatticePoint pt;
        pt.jt = jt;
        pt.tau = 2.0 * std::numbers::pi * jt / g.final_time();
        pt.xi = Vec(n);
        sw.pts.push_back(pt);
        sw.inv_weight.push_back(jt == 0 ? 1.0 : 2.0);
    }
    sw.values.resize(sw.pts.size());
    sw.truths.resize(sw.pts.size());
    sw.have.assign(sw.pts.size(), 0);
    sw.samples.resize(sw.pts.size());

    std::optional<BoundaryPartition> part;
    if (cfg.mode == ReconMode::cone) part.emplace(g, cfg.omega0, cfg.eps);

    std::map<std::array<int, kMaxDim>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < sw.pts.size(); ++i) {
        std::array<int, kMaxDim> prim = sw.pts[i].k;
        int gcd = 0;
        for (int a = 0; a < n; ++a) gcd = std::gcd(gcd, std::abs(prim[static_cast<size_t>(a)]));
        if (gcd > 0)
            for (int a = 0; a < n; ++a) prim[static_cast<size_t>(a)] /= gcd;
        groups[prim].push_back(i);  // the all-zero key collects the xi=0 modes
    }

    std::vector<ScalarField> A2f = pair_A_fields(pair2);
    ScalarField qt1 = expand_operator(pair1).zeroth;
    ScalarField qt2 = expand_operator(pair2).zeroth;
    bool static_fields = !pair1.time_dependent() && !pair2.time_dependent();
    Eta eta(cfg.delta, g.final_time());

    double normA = 0.0;
    if (first_pass) {
        GridFunction mag(g);
        for (int k = 0; k <= g.time_steps(); ++k)
            for (long p = 0; p < g.space_points(); ++p) {
                double s2 = 0.0;
                for (int c = 0; c < n; ++c)
                    s2 += std::norm(first_pass->A[static_cast<size_t>(c)].at(k, p));
                mag.at(k, p) = std::sqrt(s2);
            }
        normA = discrete_norm(g, mag, NormKind::L2_Q);
    }

    GridFunction qt_truth(g);
    if (want_truth)
        qt_truth = sample(g, [&](double t, const Vec& x) {
            double e = eta(t);
            return e * e * (qt1(t, x) - qt2(t, x));
        });

    for (const auto& [prim, members] : groups) {
        bool zero_xi = true;
        for (int a = 0; a < n; ++a) zero_xi = zero_xi && prim[static_cast<size_t>(a)] == 0;
        Vec omega(n);
        if (zero_xi) {
            omega = cfg.omega0;
        } else {
            Vec xhat(n);
            double pn = 0.0;
            for (int a = 0; a < n; ++a) {
                xhat[a] = double(prim[static_cast<size_t>(a)]);
                pn += xhat[a] * xhat[a];
            }
            pn = std::sqrt(pn);
            for (int a = 0; a < n; ++a) xhat[a] /= pn;
            try {
                omega = mode_directions(xhat, cfg, n).omegas[0];
            } catch (const std::invalid_argument&) {
                sw.skipped += long(members.size());
                continue;
            }
        }

        ProbeEngine engine(g, pair1, pair2, cfg.lambda, omega, cfg.delta, cfg.scheme,
                           part ? &*part : nullptr);
        std::vector<double> ray2_tab;
        if (static_fields) {
            ray2_tab.resize(static_cast<size_t>(g.space_points()));
            double tref = g.final_time() / 2.0;
            for (long p = 0; p < g.space_points(); ++p)
                ray2_tab[static_cast<size_t>(p)] =
                    ray_os(A2f, omega, tref, g.coords(p), RayExtent::to_exit, g.hx() / 2.0);
        }

        for (std::size_t mi : members) {
            const auto& pt = sw.pts[mi];
            GridFunction B2(g);
            for (int k = 0; k <= g.time_steps(); ++k) {
                double t = g.time(k), e = eta(t);
                if (e == 0.0) continue;
                cplx* lev = B2.level(k);
                for (long p = 0; p < g.space_points(); ++p) {
                    Vec x = g.coords(p);
                    double ray2 = static_fields ? ray2_tab[static_cast<size_t>(p)]
                                                : ray_os(A2f, omega, t, x, RayExtent::to_exit,
                                                         g.hx() / 2.0);
                    double phase = -(t * pt.tau + x.dot(pt.xi));
                    lev[p] = e * cplx(std::cos(phase), std::sin(phase)) * std::exp(ray2);
                }
            }
            ProbeEngine::Result res = engine.run(B2);
            cplx omegaA_hat = 0.0;
            if (first_pass) {
                GridFunction omA(g);
                for (int k = 0; k <= g.time_steps(); ++k)
                    for (long p = 0; p < g.space_points(); ++p) {
                        cplx s = 0.0;
                        for (int c = 0; c < n; ++c)
                            s += omega[c] * first_pass->A[static_cast<size_t>(c)].at(k, p);
                        omA.at(k, p) = s;
                    }
                omegaA_hat = space_time_fourier(g, omA, pt.tau, pt.xi);
            }
            QtildeSample s = fourier_qtilde_hat(res.boundary_term, omegaA_hat, cfg.lambda, pt.tau,
                                                pt.xi, omega, normA);
            sw.values[mi] = s.value;
            sw.samples[mi] = s;
            sw.have[mi] = 1;
            if (want_truth) sw.truths[mi] = space_time_fourier(g, qt_truth, pt.tau, pt.xi);
        }
    }
    return sw;
}

}  // namespace detail

/// Zeroth-order lattice sweep. `first_pass` optionally supplies the
/// reconstructed (eta^2 omega.A)^ values for the A-term correction; for pairs
/// with equal convection it is unnecessary. `calibration_pair2` enables the
/// same phantom calibration as the first-order pass.
inline QtildeResult reconstruct_qtilde(const SpaceTimeGrid& g, const CoefficientPair& pair1,
                                       const CoefficientPair& pair2,
                                       const ReconstructionConfig& cfg,
                                       const ReconstructionResult* first_pass = nullptr,
                                       bool compare_to_truth = true,
                                       const CoefficientPair* calibration_pair2 = nullptr) {
    QtildeResult out;
    int n = g.dim();
    detail::ZerothSweep sw = detail::sweep_zeroth_order(g, pair1, pair2, cfg, first_pass, false);
    out.skipped_outside_cone = sw.skipped;

    if (calibration_pair2) {
        detail::ZerothSweep cal =
            detail::sweep_zeroth_order(g, pair1, *calibration_pair2, cfg, nullptr, true);
        double scale = 0.0;
        for (const cplx& t : cal.truths) scale = std::max(scale, std::abs(t));
        for (std::size_t mi = 0; mi < sw.pts.size(); ++mi) {
            if (!sw.have[mi] || !cal.have[mi]) continue;
            if (std::abs(cal.truths[mi]) < 1e-3 * scale) continue;
            cplx kappa = cal.values[mi] / cal.truths[mi];
            if (std::abs(kappa) > 0.05) sw.values[mi] /= kappa;
        }
    }

    for (std::size_t mi = 0; mi < sw.pts.size(); ++mi)
        if (sw.have[mi]) out.samples.push_back(sw.samples[mi]);

    double volbox = g.final_time() * std::pow(1.0 + 2.0 * cfg.box_margin, n);
    out.qtilde = GridFunction(g);
    for (int k = 0; k <= g.time_steps(); ++k) {
        double t = g.time(k);
        for (long p = 0; p < g.space_points(); ++p) {
            Vec x = g.coords(p);
            cplx acc = 0.0;
            for (std::size_t mi = 0; mi < sw.pts.size(); ++mi) {
                if (!sw.have[mi]) continue;
                double phase = t * sw.pts[mi].tau + x.dot(sw.pts[mi].xi);
                cplx e(std::cos(phase), std::sin(phase));
                if (sw.inv_weight[mi] == 1.0)
                    acc += std::real(sw.values[mi]);
                else
                    acc += 2.0 * std::real(sw.values[mi] * e);
            }
            out.qtilde.at(k, p) = acc / volbox;
        }
    }

    if (compare_to_truth) {
        ScalarField qt1 = expand_operator(pair1).zeroth;
        ScalarField qt2 = expand_operator(pair2).zeroth;
        Eta eta(cfg.delta, g.final_time());
        double num = 0.0, den = 0.0;
        for (int k = 0; k <= g.time_steps(); ++k) {
            double t = g.time(k), e2 = eta(t) * eta(t), wt = g.time_weight(k);
            for (long p = 0; p < g.space_points(); ++p) {
                Vec x = g.coords(p);
                double truth = e2 * (qt1(t, x) - qt2(t, x));
                double d = out.qtilde.at(k, p).real() - truth;
                num += wt * g.volume_weight(p) * d * d;
                den += wt * g.volume_weight(p) * truth * truth;
            }
        }
        out.rel_l2_error = den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
    }
    return out;
}



struct RecoveredQ {
    GridFunction q;        // eta^2 (q1 - q2)
    double div_term_l2 = 0.0;
    double quad_term_l2 = 0.0;
};

/// q = qtilde + div A + (|A1|^2 - |A2|^2), assembled on the windowed fields:
/// eta^2 q = eta^2 qtilde + div(eta^2 A) + 2 A1.(eta^2 A) - eta^2 |A|^2.
/// The last square needs the window removed; it is divided out where eta^2
/// is above a floor and dropped outside (it vanishes there anyway). For a
/// divergence-free reconstruction the div term is a consistency report.
inline RecoveredQ recover_q(const SpaceTimeGrid& g, const GridFunction& qtilde,
                            const std::vector<GridFunction>& A_windowed,
                            const CoefficientPair& pair1, double delta) {
    int n = g.dim();
    if (int(A_windowed.size()) != n)
        throw std::invalid_argument("need the reconstructed field to recover q");
    RecoveredQ out;
    out.q = qtilde;
    Eta eta(delta, g.final_time());
    GridFunction divterm(g), quadterm(g);
    for (int k = 0; k <= g.time_steps(); ++k) {
        double t = g.time(k);
        double e2 = eta(t) * eta(t);
        for (long p = 0; p < g.space_points(); ++p) {
            Vec x = g.coords(p);
            cplx dv = 0.0;
            for (int a = 0; a < n; ++a)
                dv += detail::spatial_derivative(g, A_windowed[static_cast<size_t>(a)].level(k), p,
                                                 a);
            Vec A1 = pair1.A_at(t, x);
            cplx quad = 0.0;
            for (int a = 0; a < n; ++a)
                quad += 2.0 * A1[a] * A_windowed[static_cast<size_t>(a)].at(k, p);
            if (e2 > 1e-3) {
                cplx a2 = 0.0;
                for (int a = 0; a < n; ++a) {
                    cplx v = A_windowed[static_cast<size_t>(a)].at(k, p);
                    a2 += v * v;
                }
                quad -= a2 / e2;
            }
            divterm.at(k, p) = dv;
            quadterm.at(k, p) = quad;
            out.q.at(k, p) += dv + quad;
        }
    }
    out.div_term_l2 = discrete_norm(g, divterm, NormKind::L2_Q);
    out.quad_term_l2 = discrete_norm(g, quadterm, NormKind::L2_Q);
    return out;
}

}  // namespace cdlab
