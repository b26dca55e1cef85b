#pragma once

#include <limits>

#include "cdlab/expr.hpp"
#include "cdlab/grid.hpp"

namespace cdlab {

/// Convection/potential pair (A, q) on Q with the admissibility bound m:
/// discrete W^{2,inf} norm of A plus W^{1,inf} of q must stay below m.
/// Fields are closed-form expressions so every derivative used in checks,
/// operator expansion and transport residuals is analytic.
class CoefficientPair {
public:
    CoefficientPair() = default;
    CoefficientPair(std::vector<ScalarField> A, ScalarField q, double m_bound,
                    bool divergence_free = false)
        : A_(std::move(A)), q_(std::move(q)), m_(m_bound), divfree_(divergence_free) {
        n_ = int(A_.size());
        if (n_ < 2 || n_ > kMaxDim) throw std::invalid_argument("A must have 2 or 3 components");
    }

    static CoefficientPair zero(int n) {
        std::vector<ScalarField> A(static_cast<size_t>(n), ScalarField(e_num(0.0), n));
        return CoefficientPair(std::move(A), ScalarField(e_num(0.0), n), 1.0, true);
    }

    int dim() const { return n_; }
    double m_bound() const { return m_; }
    bool divergence_free_flag() const { return divfree_; }
    const ScalarField& A(int i) const { return A_[static_cast<size_t>(i)]; }
    const ScalarField& q() const { return q_; }

    Vec A_at(double t, const Vec& x) const {
        Vec a(n_);
        for (int i = 0; i < n_; ++i) a[i] = A_[static_cast<size_t>(i)](t, x);
        return a;
    }
    double q_at(double t, const Vec& x) const { return q_(t, x); }
    double div_A(double t, const Vec& x) const {
        double d = 0.0;
        for (int i = 0; i < n_; ++i) d += A_[static_cast<size_t>(i)].dx(i, t, x);
        return d;
    }

    bool time_dependent() const {
        if (q_.time_dependent()) return true;
        for (const auto& a : A_)
            if (a.time_dependent()) return true;
        return false;
    }

    /// Max of |div A| over interior nodes and all time levels.
    double max_divergence(const SpaceTimeGrid& g) const {
        double m = 0.0;
        for (int k = 0; k <= g.time_steps(); ++k)
            for (long p : g.interior())
                m = std::max(m, std::abs(div_A(g.time(k), g.coords(p))));
        return m;
    }

    /// Sampled W^{2,inf}(A) + W^{1,inf}(q) proxy on the grid nodes.
    double sampled_admissibility_norm(const SpaceTimeGrid& g) const {
        double normA = 0.0, normQ = 0.0;
        for (int k = 0; k <= g.time_steps(); ++k) {
            double t = g.time(k);
            for (long p = 0; p < g.space_points(); ++p) {
                Vec x = g.coords(p);
                for (int i = 0; i < n_; ++i) {
                    const auto& a = A_[static_cast<size_t>(i)];
                    double m0 = std::abs(a(t, x));
                    for (int j = 0; j < n_; ++j) {
                        m0 = std::max(m0, std::abs(a.dx(j, t, x)));
                        for (int l = 0; l < n_; ++l) m0 = std::max(m0, std::abs(a.dxx(j, l, t, x)));
                    }
                    normA = std::max(normA, m0);
                }
                double q0 = std::abs(q_(t, x));
                for (int j = 0; j < n_; ++j) q0 = std::max(q0, std::abs(q_.dx(j, t, x)));
                normQ = std::max(normQ, q0);
            }
        }
        return normA + normQ;
    }

    void check_admissible(const SpaceTimeGrid& g) const {
        double nm = sampled_admissibility_norm(g);
        if (nm > m_ + 1e-9)
            throw std::invalid_argument("coefficient pair exceeds its admissibility bound m");
        if (divfree_) {
            double dv = max_divergence(g);
            double tol = divergence_tolerance(g);
            if (dv > tol)
                throw std::invalid_argument("flagged divergence-free field has |div A| above tolerance");
        }
    }

    double divergence_tolerance(const SpaceTimeGrid& g) const {
        // analytic generators should be exact; sampled ones get an O(hx^2) allowance
        (void)g;
        return analytic_divfree_ ? 1e-10 : 10.0 * g.hx() * g.hx();
    }

    void mark_analytic_divfree(bool v) { analytic_divfree_ = v; }

private:
    std::vector<ScalarField> A_;
    ScalarField q_;
    double m_ = 1.0;
    int n_ = 2;
    bool divfree_ = false;
    bool analytic_divfree_ = true;
};

/// Divergence-free field from stream potentials.
/// n = 2: A = (d2 psi, -d1 psi). n = 3: three potentials [psi12, psi13, psi23]
/// feed the antisymmetric-curl construction A_i = sum_j d_j psi_ij with
/// psi_ji = -psi_ij; the divergence vanishes identically in exact arithmetic.
inline std::vector<ScalarField> make_divfree_field(const std::vector<ExprPtr>& potentials, int n) {
    std::vector<ScalarField> A;
    if (n == 2) {
        if (potentials.size() != 1)
            throw std::invalid_argument("n=2 requires exactly one stream potential");
        const ExprPtr& psi = potentials[0];
        A.emplace_back(diff(psi, 2), n);          // d2 psi
        A.emplace_back(e_neg(diff(psi, 1)), n);   // -d1 psi
        return A;
    }
    if (n == 3) {
        if (potentials.size() != 3)
            throw std::invalid_argument("n=3 requires three potentials [psi12, psi13, psi23]");
        const ExprPtr &p12 = potentials[0], &p13 = potentials[1], &p23 = potentials[2];
        A.emplace_back(e_add(diff(p12, 2), diff(p13, 3)), n);
        A.emplace_back(e_add(e_neg(diff(p12, 1)), diff(p23, 3)), n);
        A.emplace_back(e_add(e_neg(diff(p13, 1)), e_neg(diff(p23, 2))), n);
        return A;
    }
    throw std::invalid_argument("unsupported dimension for stream construction");
}

inline std::vector<ScalarField> make_divfree_field(const ExprPtr& psi, int n) {
    return make_divfree_field(std::vector<ExprPtr>{psi}, n);
}

/// Entry/exit parameters of the ray x + s*omega against the closed unit box.
/// Returns false if the ray misses the box.
inline bool ray_box_interval(const Vec& x, const Vec& omega, double* s_in, double* s_out) {
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    for (int a = 0; a < x.n; ++a) {
        if (std::abs(omega[a]) < 1e-15) {
            if (x[a] < -1e-14 || x[a] > 1.0 + 1e-14) return false;
            continue;
        }
        double s0 = (0.0 - x[a]) / omega[a];
        double s1 = (1.0 - x[a]) / omega[a];
        if (s0 > s1) std::swap(s0, s1);
        lo = std::max(lo, s0);
        hi = std::min(hi, s1);
    }
    if (lo > hi) return false;
    *s_in = lo;
    *s_out = hi;
    return true;
}

enum class RayExtent { to_exit, full_line };

namespace detail {

/// Composite Simpson over [a,b] with panel size <= max_step.
template <class F>
double simpson(F&& f, double a, double b, double max_step) {
    if (b <= a) return 0.0;
    int panels = std::max(1, int(std::ceil((b - a) / max_step)));
    double h = (b - a) / double(panels);
    double s = 0.0;
    for (int i = 0; i < panels; ++i) {
        double l = a + h * i, r = l + h, m = 0.5 * (l + r);
        s += (h / 6.0) * (f(l) + 4.0 * f(m) + f(r));
    }
    return s;
}

}  // namespace detail

/// Line integral of omega . A along the ray leaving x in direction omega,
/// with A extended by zero outside the closed box. `to_exit` integrates from
/// s=0 to the exit parameter; `full_line` integrates over the whole chord.
/// The quadrature is chopped exactly at the box so the integrand stays smooth.
inline double ray_integral(const CoefficientPair& pair, const Vec& omega, double t, const Vec& x,
                           RayExtent extent, double max_step) {
    if (std::abs(omega.norm() - 1.0) > 1e-12)
        throw std::invalid_argument("ray direction must be a unit vector");
    double s_in, s_out;
    if (!ray_box_interval(x, omega, &s_in, &s_out)) return 0.0;
    double a = (extent == RayExtent::to_exit) ? 0.0 : s_in;
    if (extent == RayExtent::to_exit && s_out <= 0.0) return 0.0;
    auto f = [&](double s) {
        Vec y(x.n);
        for (int i = 0; i < x.n; ++i) y[i] = x[i] + s * omega[i];
        Vec Av = pair.A_at(t, y);
        return omega.dot(Av);
    };
    return detail::simpson(f, a, s_out, max_step);
}

/// Gradient (in x) of the ray integral: integral of grad(omega . A) along the
/// same chord, using analytic derivatives of A.
inline Vec ray_integral_gradient(const CoefficientPair& pair, const Vec& omega, double t,
                                 const Vec& x, RayExtent extent, double max_step) {
    Vec g(x.n);
    double s_in, s_out;
    if (!ray_box_interval(x, omega, &s_in, &s_out)) return g;
    double a = (extent == RayExtent::to_exit) ? 0.0 : s_in;
    if (extent == RayExtent::to_exit && s_out <= 0.0) return g;
    for (int comp = 0; comp < x.n; ++comp) {
        auto f = [&](double s) {
            Vec y(x.n);
            for (int i = 0; i < x.n; ++i) y[i] = x[i] + s * omega[i];
            double d = 0.0;
            for (int i = 0; i < x.n; ++i) d += omega[i] * pair.A(i).dx(comp, t, y);
            return d;
        };
        g[comp] = detail::simpson(f, a, s_out, max_step);
    }
    return g;
}

/// Gauge function: scalar Phi on Q with vanishing lateral trace.
class GaugeFunction {
public:
    GaugeFunction(ScalarField phi, const SpaceTimeGrid& g) : phi_(std::move(phi)) {
        double m = 0.0;
        for (int k = 0; k <= g.time_steps(); ++k)
            for (const auto& b : g.boundary())
                m = std::max(m, std::abs(phi_(g.time(k), g.coords(b.node))));
        if (m > 1e-12)
            throw std::invalid_argument("gauge function must vanish on the lateral boundary");
    }
    const ScalarField& phi() const { return phi_; }

private:
    ScalarField phi_;
};

/// Gauge transform (A, q) -> (A + grad Phi, q + dt Phi); solutions map as
/// u -> exp(-Phi) u, so boundary data and conormal outputs are unchanged
/// whenever Phi vanishes on Sigma to first order.
inline CoefficientPair apply_gauge(const CoefficientPair& pair, const GaugeFunction& gauge,
                                   double new_m_bound) {
    int n = pair.dim();
    std::vector<ScalarField> A;
    for (int i = 0; i < n; ++i)
        A.emplace_back(e_add(pair.A(i).expr(), gauge.phi().dx_expr(i)), n);
    ScalarField q(e_add(pair.q().expr(), gauge.phi().dt_expr()), n);
    CoefficientPair out(std::move(A), std::move(q), new_m_bound, false);
    return out;
}

}  // namespace cdlab
