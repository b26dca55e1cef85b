#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <map>
#include <optional>

#include "cdlab/fields.hpp"

namespace cdlab {

/// Expansion of the operator dt - sum_j (d_j + A_j)^2 + q into drift and
/// zeroth-order form: L u = dt u - Lap u - drift . grad u + zeroth u with
/// drift = 2A and zeroth = q - div A - |A|^2. The signs are forced by the
/// product rule; the same expansion applied to (-A, conj q) gives the
/// spatial part of the adjoint operator.
struct ExpandedOperator {
    std::vector<ScalarField> drift;  // 2A
    ScalarField zeroth;              // q - div A - |A|^2
};

inline ExpandedOperator expand_operator(const CoefficientPair& pair) {
    int n = pair.dim();
    ExpandedOperator out;
    for (int i = 0; i < n; ++i)
        out.drift.emplace_back(e_mul(e_num(2.0), pair.A(i).expr()), n);
    ExprPtr z = pair.q().expr();
    for (int i = 0; i < n; ++i) {
        z = e_sub(z, pair.A(i).dx_expr(i));
        z = e_sub(z, e_mul(pair.A(i).expr(), pair.A(i).expr()));
    }
    out.zeroth = ScalarField(z, n);
    return out;
}

/// Apply L_{A,q} to a closed-form function using analytic derivatives.
inline double apply_operator(const CoefficientPair& pair, const ScalarField& u, double t,
                             const Vec& x) {
    double lap = u.laplacian(t, x);
    Vec a = pair.A_at(t, x);
    double drift = 0.0;
    for (int i = 0; i < x.n; ++i) drift += 2.0 * a[i] * u.dx(i, t, x);
    double zero = pair.q_at(t, x) - pair.div_A(t, x) - a.dot(a);
    return u.dt(t, x) - lap - drift + zero * u(t, x);
}

/// Node-wise coefficient tables for one time level of the canonical problem
///   dt w - Lap w + b . grad w + c w = s.
struct LevelCoefficients {
    std::array<std::vector<double>, kMaxDim> b;
    std::vector<double> c;
};

/// Fills coefficient tables for a given time; `time_dependent` tells the
/// propagator whether tables and factorizations can be reused across levels.
struct CanonicalOperator {
    std::function<void(double t, LevelCoefficients&)> fill;
    bool time_dependent = true;
};

inline CanonicalOperator make_canonical(const SpaceTimeGrid& g,
                                        std::vector<ScalarField> bf, ScalarField cf) {
    bool timedep = cf.time_dependent();
    for (const auto& f : bf) timedep = timedep || f.time_dependent();
    auto bshared = std::make_shared<std::vector<ScalarField>>(std::move(bf));
    auto cshared = std::make_shared<ScalarField>(std::move(cf));
    const SpaceTimeGrid* gp = &g;
    CanonicalOperator op;
    op.time_dependent = timedep;
    op.fill = [gp, bshared, cshared](double t, LevelCoefficients& lc) {
        long np = gp->space_points();
        int n = gp->dim();
        for (int a = 0; a < n; ++a) lc.b[static_cast<size_t>(a)].resize(static_cast<size_t>(np));
        lc.c.resize(static_cast<size_t>(np));
        for (long p = 0; p < np; ++p) {
            Vec x = gp->coords(p);
            for (int a = 0; a < n; ++a)
                lc.b[static_cast<size_t>(a)][static_cast<size_t>(p)] = (*bshared)[static_cast<size_t>(a)](t, x);
            lc.c[static_cast<size_t>(p)] = (*cshared)(t, x);
        }
    };
    return op;
}

/// Forward problem L_{A,q} in canonical form: b = -2A, c = q - div A - |A|^2.
inline CanonicalOperator forward_operator(const SpaceTimeGrid& g, const CoefficientPair& pair) {
    int n = pair.dim();
    std::vector<ScalarField> b;
    for (int i = 0; i < n; ++i) b.emplace_back(e_mul(e_num(-2.0), pair.A(i).expr()), n);
    return make_canonical(g, std::move(b), expand_operator(pair).zeroth);
}

namespace detail {

inline ExprPtr reverse_time(const ExprPtr& e, double T) {
    switch (e->kind) {
        case Expr::Kind::Num: return e;
        case Expr::Kind::Var:
            if (e->var == 0) return e_sub(e_num(T), e_t());
            return e;
        case Expr::Kind::Add: return e_add(reverse_time(e->a, T), reverse_time(e->b, T));
        case Expr::Kind::Mul: return e_mul(reverse_time(e->a, T), reverse_time(e->b, T));
        case Expr::Kind::Div: return e_div(reverse_time(e->a, T), reverse_time(e->b, T));
        case Expr::Kind::Neg: return e_neg(reverse_time(e->a, T));
        case Expr::Kind::Pow: return e_pow(reverse_time(e->a, T), e->ipow);
        case Expr::Kind::Sin: return e_sin(reverse_time(e->a, T));
        case Expr::Kind::Cos: return e_cos(reverse_time(e->a, T));
        case Expr::Kind::Exp: return e_exp(reverse_time(e->a, T));
    }
    throw std::logic_error("unreachable");
}

}  // namespace detail

/// Backward (adjoint) problem as a forward problem in reversed time
/// s = T - t: b = +2A(T-s,.), c = (q + div A - |A|^2)(T-s,.). This is the
/// canonical form of -dt - sum_j (d_j - A_j)^2 + conj q for real coefficients.
inline CanonicalOperator adjoint_reversed_operator(const SpaceTimeGrid& g,
                                                   const CoefficientPair& pair) {
    int n = pair.dim();
    double T = g.final_time();
    std::vector<ScalarField> b;
    for (int i = 0; i < n; ++i)
        b.emplace_back(detail::reverse_time(e_mul(e_num(2.0), pair.A(i).expr()), T), n);
    ExprPtr z = pair.q().expr();
    for (int i = 0; i < n; ++i) {
        z = e_add(z, pair.A(i).dx_expr(i));
        z = e_sub(z, e_mul(pair.A(i).expr(), pair.A(i).expr()));
    }
    return make_canonical(g, std::move(b), ScalarField(detail::reverse_time(z, T), n));
}

/// Conjugated growing operator P = e^{-phi} L_{A,q} e^{phi} with
/// phi = lambda^2 t + lambda x.omega:
///   b = -2A - 2 lambda omega, c = q - div A - |A|^2 - 2 lambda omega.A.
/// All geometric-optics solves run on this variable so the factor
/// e^{lambda^2 T} never materializes.
inline CanonicalOperator conjugated_growing_operator(const SpaceTimeGrid& g,
                                                     const CoefficientPair& pair, double lambda,
                                                     const Vec& omega) {
    int n = pair.dim();
    std::vector<ScalarField> b;
    for (int i = 0; i < n; ++i)
        b.emplace_back(e_sub(e_mul(e_num(-2.0), pair.A(i).expr()), e_num(2.0 * lambda * omega[i])),
                       n);
    ExprPtr z = pair.q().expr();
    for (int i = 0; i < n; ++i) {
        z = e_sub(z, pair.A(i).dx_expr(i));
        z = e_sub(z, e_mul(pair.A(i).expr(), pair.A(i).expr()));
        z = e_sub(z, e_mul(e_num(2.0 * lambda * omega[i]), pair.A(i).expr()));
    }
    return make_canonical(g, std::move(b), ScalarField(z, n));
}

/// Conjugated decaying operator in reversed time: for v = e^{-phi}(B + R)
/// solving the terminal-value adjoint problem, w = e^{phi} v satisfies (after
/// s = T - t) the canonical problem with
///   b = 2A(T-s,.) + 2 lambda omega,
///   c = (q + div A - |A|^2 - 2 lambda omega.A)(T-s,.).
inline CanonicalOperator conjugated_decaying_reversed_operator(const SpaceTimeGrid& g,
                                                               const CoefficientPair& pair,
                                                               double lambda, const Vec& omega) {
    int n = pair.dim();
    double T = g.final_time();
    std::vector<ScalarField> b;
    for (int i = 0; i < n; ++i)
        b.emplace_back(detail::reverse_time(
                           e_add(e_mul(e_num(2.0), pair.A(i).expr()), e_num(2.0 * lambda * omega[i])), T),
                       n);
    ExprPtr z = pair.q().expr();
    for (int i = 0; i < n; ++i) {
        z = e_add(z, pair.A(i).dx_expr(i));
        z = e_sub(z, e_mul(pair.A(i).expr(), pair.A(i).expr()));
        z = e_sub(z, e_mul(e_num(2.0 * lambda * omega[i]), pair.A(i).expr()));
    }
    return make_canonical(g, std::move(b), ScalarField(detail::reverse_time(z, T), n));
}

enum class Scheme { backward_euler, crank_nicolson };

inline double scheme_theta(Scheme s) { return s == Scheme::backward_euler ? 1.0 : 0.5; }

struct IBVPSolution {
    GridFunction u;
    Scheme scheme = Scheme::backward_euler;
    double residual_norm = 0.0;
};

/// Dirichlet data provider: fills one value per boundary node at time level k.
using DirichletProvider = std::function<void(int level, std::vector<cplx>&)>;
/// Source provider: fills one value per interior node at time level k (may be null).
using SourceProvider = std::function<void(int level, std::vector<cplx>&)>;

inline DirichletProvider dirichlet_from_field(const SpaceTimeGrid& g, const ScalarField& f) {
    const SpaceTimeGrid* gp = &g;
    auto fs = std::make_shared<ScalarField>(f);
    return [gp, fs](int level, std::vector<cplx>& out) {
        const auto& bn = gp->boundary();
        out.resize(bn.size());
        double t = gp->time(level);
        for (std::size_t i = 0; i < bn.size(); ++i)
            out[i] = (*fs)(t, gp->coords(bn[i].node));
    };
}

inline DirichletProvider zero_dirichlet(const SpaceTimeGrid& g) {
    const SpaceTimeGrid* gp = &g;
    return [gp](int, std::vector<cplx>& out) {
        out.assign(gp->boundary().size(), cplx(0.0));
    };
}

/// Theta-scheme time stepper for the canonical convection-diffusion problem,
/// second-order central differences in space. Implicit and unconditionally
/// stable for theta >= 1/2. Factorizations are cached when the coefficients
/// are time-independent, which makes repeated solves against many boundary
/// data (DN probes, frequency sweeps) cheap.
class Propagator {
public:
    Propagator(const SpaceTimeGrid& g, CanonicalOperator op, Scheme scheme)
        : g_(&g), op_(std::move(op)), theta_(scheme_theta(scheme)), scheme_(scheme) {
        interior_ = &g.interior();
        interior_index_.assign(static_cast<size_t>(g.space_points()), -1);
        for (std::size_t i = 0; i < interior_->size(); ++i)
            interior_index_[static_cast<size_t>((*interior_)[i])] = long(i);
    }

    const SpaceTimeGrid& grid() const { return *g_; }
    Scheme scheme() const { return scheme_; }

    /// March the IBVP from the given initial space field. Dirichlet data must
    /// match the initial field on the boundary at level 0.
    IBVPSolution run(const std::vector<cplx>& initial, const DirichletProvider& dirichlet,
                     const SourceProvider& source = nullptr) {
        const SpaceTimeGrid& g = *g_;
        long np = g.space_points();
        if (long(initial.size()) != np) throw std::invalid_argument("initial data shape mismatch");
        IBVPSolution sol;
        sol.scheme = scheme_;
        sol.u = GridFunction(g);
        if (op_.time_dependent) {
            // drop stale level tables from a previous run on this propagator
            have_k_ = have_k1_ = -1;
            lu_level_ = -1;
        }

        std::vector<cplx> gvals;
        dirichlet(0, gvals);
        cplx* lev0 = sol.u.level(0);
        std::copy(initial.begin(), initial.end(), lev0);
        for (std::size_t i = 0; i < g.boundary().size(); ++i) {
            long p = g.boundary()[i].node;
            double mismatch = std::abs(lev0[p] - gvals[i]);
            if (mismatch > 1e-10)
                throw std::invalid_argument(
                    "Dirichlet data incompatible with initial data at t=0");
            lev0[p] = gvals[i];
        }

        std::vector<cplx> src_k, src_k1;
        if (source) source(0, src_k);

        ensure_level(0);
        double residual = 0.0;
        for (int k = 0; k < g.time_steps(); ++k) {
            ensure_level(k + 1);
            dirichlet(k + 1, gvals);
            if (source) source(k + 1, src_k1);
            step(sol.u, k, gvals, source ? &src_k : nullptr, source ? &src_k1 : nullptr,
                 &residual);
            std::swap(src_k, src_k1);
            rotate_levels();
        }
        sol.residual_norm = residual;
        return sol;
    }

private:
    const SpaceTimeGrid* g_;
    CanonicalOperator op_;
    double theta_;
    Scheme scheme_;
    const std::vector<long>* interior_;
    std::vector<long> interior_index_;

    // rolling coefficient tables and factorization for levels k and k+1
    LevelCoefficients coef_k_, coef_k1_;
    int have_k_ = -1, have_k1_ = -1;
    std::unique_ptr<Eigen::SparseLU<Eigen::SparseMatrix<double>>> lu_;
    int lu_level_ = -1;

    void ensure_level(int k) {
        if (!op_.time_dependent) {
            if (have_k_ < 0) {
                op_.fill(g_->time(0), coef_k_);
                have_k_ = 0;
            }
            return;
        }
        if (have_k_ == k || have_k1_ == k) return;
        if (have_k_ < 0) {
            op_.fill(g_->time(k), coef_k_);
            have_k_ = k;
        } else {
            op_.fill(g_->time(k), coef_k1_);
            have_k1_ = k;
        }
    }
    void rotate_levels() {
        if (!op_.time_dependent) return;
        if (have_k1_ >= 0) {
            std::swap(coef_k_, coef_k1_);
            std::swap(have_k_, have_k1_);
            have_k1_ = -1;
        }
    }
    const LevelCoefficients& level_coeffs(int k) const {
        if (!op_.time_dependent) return coef_k_;
        if (have_k_ == k) return coef_k_;
        if (have_k1_ == k) return coef_k1_;
        throw std::logic_error("coefficient level not prepared");
    }

    /// (S w)_p with full-field input (boundary values included).
    cplx apply_S(const LevelCoefficients& lc, const cplx* w, long p) const {
        const SpaceTimeGrid& g = *g_;
        double h = g.hx(), h2 = h * h;
        cplx acc = lc.c[static_cast<size_t>(p)] * w[p];
        for (int a = 0; a < g.dim(); ++a) {
            cplx up = w[g.shift(p, a, 1)], dn = w[g.shift(p, a, -1)];
            acc -= (up - 2.0 * w[p] + dn) / h2;
            acc += lc.b[static_cast<size_t>(a)][static_cast<size_t>(p)] * (up - dn) / (2.0 * h);
        }
        return acc;
    }

    void factorize(int level, const LevelCoefficients& lc) {
        if (!op_.time_dependent && lu_) return;
        if (lu_ && lu_level_ == level) return;
        const SpaceTimeGrid& g = *g_;
        double h = g.hx(), h2 = h * h, ht = g.ht();
        long ni = long(interior_->size());
        std::vector<Eigen::Triplet<double>> trips;
        trips.reserve(static_cast<size_t>(ni * (1 + 2 * g.dim())));
        int idx[kMaxDim];
        for (long i = 0; i < ni; ++i) {
            long p = (*interior_)[static_cast<size_t>(i)];
            g.decode(p, idx);
            double center = 1.0 + theta_ * ht * (lc.c[static_cast<size_t>(p)] + 2.0 * g.dim() / h2);
            trips.emplace_back(int(i), int(i), center);
            for (int a = 0; a < g.dim(); ++a) {
                double ba = lc.b[static_cast<size_t>(a)][static_cast<size_t>(p)];
                double cup = theta_ * ht * (-1.0 / h2 + ba / (2.0 * h));
                double cdn = theta_ * ht * (-1.0 / h2 - ba / (2.0 * h));
                long jup = interior_index_[static_cast<size_t>(g.shift(p, a, 1))];
                long jdn = interior_index_[static_cast<size_t>(g.shift(p, a, -1))];
                if (jup >= 0) trips.emplace_back(int(i), int(jup), cup);
                if (jdn >= 0) trips.emplace_back(int(i), int(jdn), cdn);
            }
        }
        Eigen::SparseMatrix<double> M(ni, ni);
        M.setFromTriplets(trips.begin(), trips.end());
        lu_ = std::make_unique<Eigen::SparseLU<Eigen::SparseMatrix<double>>>();
        lu_->compute(M);
        if (lu_->info() != Eigen::Success)
            throw std::runtime_error("implicit step factorization failed (singular system)");
        lu_level_ = level;
    }

    void step(GridFunction& u, int k, const std::vector<cplx>& g_next,
              const std::vector<cplx>* src_k, const std::vector<cplx>* src_k1,
              double* residual) {
        const SpaceTimeGrid& g = *g_;
        const LevelCoefficients& lck = level_coeffs(op_.time_dependent ? k : 0);
        const LevelCoefficients& lck1 = level_coeffs(op_.time_dependent ? k + 1 : 0);
        double ht = g.ht(), h = g.hx(), h2 = h * h;
        long ni = long(interior_->size());

        factorize(k + 1, lck1);

        const cplx* wk = u.level(k);
        cplx* wk1 = u.level(k + 1);
        Eigen::VectorXd rre(ni), rim(ni);
        for (long i = 0; i < ni; ++i) {
            long p = (*interior_)[static_cast<size_t>(i)];
            cplx rhs = wk[p];
            if (theta_ < 1.0) rhs -= (1.0 - theta_) * ht * apply_S(lck, wk, p);
            if (src_k1) {
                cplx s = theta_ * (*src_k1)[static_cast<size_t>(i)];
                if (src_k && theta_ < 1.0) s += (1.0 - theta_) * (*src_k)[static_cast<size_t>(i)];
                rhs += ht * s;
            }
            // implicit coupling to known boundary values at level k+1
            for (int a = 0; a < g.dim(); ++a) {
                double ba = lck1.b[static_cast<size_t>(a)][static_cast<size_t>(p)];
                long pup = g.shift(p, a, 1), pdn = g.shift(p, a, -1);
                if (interior_index_[static_cast<size_t>(pup)] < 0) {
                    long bi = g.boundary_index(pup);
                    rhs -= theta_ * ht * (-1.0 / h2 + ba / (2.0 * h)) * g_next[static_cast<size_t>(bi)];
                }
                if (interior_index_[static_cast<size_t>(pdn)] < 0) {
                    long bi = g.boundary_index(pdn);
                    rhs -= theta_ * ht * (-1.0 / h2 - ba / (2.0 * h)) * g_next[static_cast<size_t>(bi)];
                }
            }
            rre(i) = rhs.real();
            rim(i) = rhs.imag();
        }
        Eigen::VectorXd sre = lu_->solve(rre);
        Eigen::VectorXd sim = lu_->solve(rim);
        if (lu_->info() != Eigen::Success)
            throw std::runtime_error("implicit step solve failed");

        for (std::size_t i = 0; i < g.boundary().size(); ++i)
            wk1[g.boundary()[i].node] = g_next[i];
        for (long i = 0; i < ni; ++i)
            wk1[(*interior_)[static_cast<size_t>(i)]] = cplx(sre(i), sim(i));

        // linear-algebra residual diagnostic: || M w - rhs ||_inf relative
        double rmax = 0.0, scale = 1.0;
        for (long i = 0; i < ni; ++i) {
            long p = (*interior_)[static_cast<size_t>(i)];
            cplx lhs = wk1[p] + theta_ * ht * apply_S(lck1, wk1, p);
            cplx rhs = wk[p];
            if (theta_ < 1.0) rhs -= (1.0 - theta_) * ht * apply_S(lck, wk, p);
            if (src_k1) {
                cplx s = theta_ * (*src_k1)[static_cast<size_t>(i)];
                if (src_k && theta_ < 1.0) s += (1.0 - theta_) * (*src_k)[static_cast<size_t>(i)];
                rhs += ht * s;
            }
            rmax = std::max(rmax, std::abs(lhs - rhs));
            scale = std::max(scale, std::abs(rhs));
        }
        *residual = std::max(*residual, rmax / scale);
    }
};

/// Forward IBVP for L_{A,q}: u(0,.) = initial (zero unless the testing
/// override is used), u = f on Sigma, L u = source.
inline IBVPSolution solve_forward(const SpaceTimeGrid& g, const CoefficientPair& pair,
                                  const DirichletProvider& f, Scheme scheme,
                                  const SourceProvider& source = nullptr,
                                  const std::vector<cplx>* initial_override = nullptr) {
    Propagator prop(g, forward_operator(g, pair), scheme);
    std::vector<cplx> init;
    if (initial_override) {
        init = *initial_override;
    } else {
        init.assign(static_cast<size_t>(g.space_points()), cplx(0.0));
        std::vector<cplx> g0;
        f(0, g0);
        for (const cplx& v : g0)
            if (std::abs(v) > 1e-12)
                throw std::invalid_argument("Dirichlet data must vanish at t=0");
    }
    return prop.run(init, f, source);
}

/// Terminal-value problem for the adjoint operator, solved by time reversal
/// with coefficients (-A, conj q); the returned field is in original time
/// orientation with v(T,.) = 0.
inline IBVPSolution solve_adjoint(const SpaceTimeGrid& g, const CoefficientPair& pair,
                                  const DirichletProvider& data, Scheme scheme) {
    Propagator prop(g, adjoint_reversed_operator(g, pair), scheme);
    int nt = g.time_steps();
    DirichletProvider reversed = [&](int level, std::vector<cplx>& out) {
        data(nt - level, out);
    };
    std::vector<cplx> g_at_T;
    data(nt, g_at_T);
    for (const cplx& v : g_at_T)
        if (std::abs(v) > 1e-12)
            throw std::invalid_argument("adjoint Dirichlet data must vanish at t=T");
    std::vector<cplx> init(static_cast<size_t>(g.space_points()), cplx(0.0));
    IBVPSolution rev = prop.run(init, reversed);
    IBVPSolution out;
    out.scheme = rev.scheme;
    out.residual_norm = rev.residual_norm;
    out.u = GridFunction(g);
    for (int k = 0; k <= nt; ++k)
        std::copy(rev.u.level(nt - k), rev.u.level(nt - k) + g.space_points(), out.u.level(k));
    return out;
}

/// Conormal output (d_nu + 2 A.nu) u on the boundary, one-sided second-order
/// stencil for the normal derivative; corner nodes are computed with their
/// assigned face normal but flagged out of all quadratures.
inline BoundaryFunction neumann_trace(const SpaceTimeGrid& g, const GridFunction& u,
                                      const CoefficientPair* pair = nullptr) {
    if (u.npts != g.space_points() || u.nt != g.time_steps())
        throw std::invalid_argument("solution grid mismatch");
    BoundaryFunction tr(g);
    const auto& bn = g.boundary();
    double h = g.hx();
    for (int k = 0; k <= g.time_steps(); ++k) {
        const cplx* lev = u.level(k);
        double t = g.time(k);
        for (std::size_t i = 0; i < bn.size(); ++i) {
            const auto& b = bn[i];
            int inward = (b.side == 0) ? 1 : -1;
            cplx u0 = lev[b.node];
            cplx u1 = lev[g.shift(b.node, b.axis, inward)];
            cplx u2 = lev[g.shift(b.node, b.axis, 2 * inward)];
            cplx dn = (3.0 * u0 - 4.0 * u1 + u2) / (2.0 * h);
            if (pair) {
                Vec a = pair->A_at(t, g.coords(b.node));
                dn += 2.0 * a.dot(b.normal) * u0;
            }
            tr.at(k, long(i)) = dn;
        }
    }
    return tr;
}

/// Restrict boundary data to the measured (minus) set, zeroing the rest and
/// the flagged corner nodes.
inline BoundaryFunction restrict_to_minus(const SpaceTimeGrid& g, const BoundaryPartition& part,
                                          const BoundaryFunction& f) {
    BoundaryFunction out = f;
    const auto& bn = g.boundary();
    for (int k = 0; k <= g.time_steps(); ++k)
        for (std::size_t i = 0; i < bn.size(); ++i)
            if (!part.in_minus(long(i)) || bn[i].corner) out.at(k, long(i)) = cplx(0.0);
    return out;
}

}  // namespace cdlab
