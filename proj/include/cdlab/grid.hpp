#pragma once

#include <algorithm>
#include <fstream>
#include <random>

#include "cdlab/core.hpp"

namespace cdlab {

/// Uniform tensor grid on Q = (0,T) x (0,1)^n with boundary classification.
///
/// Spatial nodes are indexed by a flat index over the tensor lattice with
/// Nx points per axis, hx = 1/(Nx-1). Time levels are t_k = k*ht, k = 0..Nt,
/// ht = T/Nt. Nodes on the boundary carry the exact outward face normal;
/// nodes on more than one face (corners/edges) are assigned the face with the
/// smallest (axis, side) pair and flagged, and flagged nodes are excluded from
/// Neumann-trace quadrature.
class SpaceTimeGrid {
public:
    struct BoundaryNode {
        long node = 0;     // flat spatial index
        int axis = 0;      // face axis
        int side = 0;      // 0 -> x_axis = 0, 1 -> x_axis = 1
        bool corner = false;
        Vec normal;
    };

    SpaceTimeGrid(int n, int Nx, int Nt, double T) : n_(n), Nx_(Nx), Nt_(Nt), T_(T) {
        if (n < 2 || n > kMaxDim) throw std::invalid_argument("dimension must be 2 or 3");
        if (Nx < 3) throw std::invalid_argument("need at least 3 points per axis");
        if (Nt < 2) throw std::invalid_argument("need at least 2 time steps");
        if (!(T > 0.0)) throw std::invalid_argument("final time must be positive");
        double diam = std::sqrt(double(n));
        if (!(T > diam))
            throw std::invalid_argument("final time must exceed the domain diameter sqrt(n)");
        hx_ = 1.0 / double(Nx - 1);
        ht_ = T / double(Nt);
        npts_ = 1;
        for (int a = 0; a < n_; ++a) {
            stride_[static_cast<size_t>(a)] = npts_;
            npts_ *= Nx_;
        }
        build_boundary();
    }

    int dim() const { return n_; }
    int points_per_axis() const { return Nx_; }
    int time_steps() const { return Nt_; }
    double final_time() const { return T_; }
    double hx() const { return hx_; }
    double ht() const { return ht_; }
    long space_points() const { return npts_; }
    long space_time_points() const { return npts_ * long(Nt_ + 1); }
    double time(int k) const { return ht_ * k; }

    void decode(long node, int* idx) const {
        for (int a = 0; a < n_; ++a) {
            idx[a] = int(node % Nx_);
            node /= Nx_;
        }
    }
    long encode(const int* idx) const {
        long f = 0;
        for (int a = 0; a < n_; ++a) f += long(idx[a]) * stride_[static_cast<size_t>(a)];
        return f;
    }
    long shift(long node, int axis, int delta) const {
        return node + long(delta) * stride_[static_cast<size_t>(axis)];
    }

    Vec coords(long node) const {
        int idx[kMaxDim];
        decode(node, idx);
        Vec x(n_);
        for (int a = 0; a < n_; ++a) x[a] = hx_ * idx[a];
        return x;
    }
    bool is_boundary(long node) const {
        int idx[kMaxDim];
        decode(node, idx);
        for (int a = 0; a < n_; ++a)
            if (idx[a] == 0 || idx[a] == Nx_ - 1) return true;
        return false;
    }

    const std::vector<BoundaryNode>& boundary() const { return bnodes_; }
    const std::vector<long>& interior() const { return interior_; }
    /// Position of a flat node index in boundary(), or -1.
    long boundary_index(long node) const { return blookup_[static_cast<size_t>(node)]; }

    /// Trapezoidal weight of a spatial node for volume quadrature.
    double volume_weight(long node) const {
        int idx[kMaxDim];
        decode(node, idx);
        double w = 1.0;
        for (int a = 0; a < n_; ++a) {
            double wa = (idx[a] == 0 || idx[a] == Nx_ - 1) ? 0.5 : 1.0;
            w *= wa * hx_;
        }
        return w;
    }
    /// Trapezoidal weight of a boundary node within its assigned face
    /// (surface measure over the (n-1)-dim face).
    double face_weight(const BoundaryNode& b) const {
        int idx[kMaxDim];
        decode(b.node, idx);
        double w = 1.0;
        for (int a = 0; a < n_; ++a) {
            if (a == b.axis) continue;
            double wa = (idx[a] == 0 || idx[a] == Nx_ - 1) ? 0.5 : 1.0;
            w *= wa * hx_;
        }
        return w;
    }
    double time_weight(int k) const { return (k == 0 || k == Nt_) ? 0.5 * ht_ : ht_; }

    /// CSV export: node index, coordinates, assigned normal, face label,
    /// corner flag, and optional partition tag.
    void export_boundary_csv(const std::string& path,
                             const std::vector<int>* partition_tag = nullptr) const {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot open " + path);
        out << "node";
        for (int a = 0; a < n_; ++a) out << ",x" << (a + 1);
        for (int a = 0; a < n_; ++a) out << ",nu" << (a + 1);
        out << ",face_axis,face_side,corner";
        if (partition_tag) out << ",partition";
        out << "\n";
        for (std::size_t i = 0; i < bnodes_.size(); ++i) {
            const auto& b = bnodes_[i];
            Vec x = coords(b.node);
            out << b.node;
            for (int a = 0; a < n_; ++a) out << "," << format_double(x[a]);
            for (int a = 0; a < n_; ++a) out << "," << format_double(b.normal[a]);
            out << "," << b.axis << "," << b.side << "," << (b.corner ? 1 : 0);
            if (partition_tag) out << "," << (*partition_tag)[i];
            out << "\n";
        }
    }

private:
    int n_, Nx_, Nt_;
    double T_, hx_, ht_;
    long npts_ = 0;
    std::array<long, kMaxDim> stride_{};
    std::vector<BoundaryNode> bnodes_;
    std::vector<long> interior_;
    std::vector<long> blookup_;

    void build_boundary() {
        blookup_.assign(static_cast<size_t>(npts_), -1);
        int idx[kMaxDim];
        for (long p = 0; p < npts_; ++p) {
            decode(p, idx);
            int extreme = 0, first_axis = -1, first_side = 0;
            for (int a = 0; a < n_; ++a) {
                if (idx[a] == 0 || idx[a] == Nx_ - 1) {
                    ++extreme;
                    if (first_axis < 0) {
                        first_axis = a;
                        first_side = (idx[a] == 0) ? 0 : 1;
                    }
                }
            }
            if (extreme == 0) {
                interior_.push_back(p);
                continue;
            }
            BoundaryNode b;
            b.node = p;
            b.axis = first_axis;
            b.side = first_side;
            b.corner = extreme > 1;
            b.normal = unit_axis(n_, first_axis, first_side == 0 ? -1.0 : 1.0);
            blookup_[static_cast<size_t>(p)] = long(bnodes_.size());
            bnodes_.push_back(b);
        }
    }
};

inline SpaceTimeGrid build_grid(int n, int Nx, int Nt, double T) {
    return SpaceTimeGrid(n, Nx, Nt, T);
}

/// Splits boundary nodes by the sign of nu . omega0 against the threshold
/// eps/2. The measured ("minus") set is nu . omega0 < eps/2 with ties going
/// to minus, so minus is a neighborhood of the illuminated part and the two
/// sets cover the whole boundary.
class BoundaryPartition {
public:
    BoundaryPartition(const SpaceTimeGrid& grid, Vec omega0, double eps)
        : grid_(&grid), omega0_(omega0), eps_(eps) {
        if (omega0.n != grid.dim()) throw std::invalid_argument("direction dimension mismatch");
        if (std::abs(omega0.norm() - 1.0) > 1e-12)
            throw std::invalid_argument("omega0 must be a unit vector");
        if (!(eps > 0.0 && eps < 2.0)) throw std::invalid_argument("eps must lie in (0,2)");
        const auto& bn = grid.boundary();
        tag_.resize(bn.size());
        for (std::size_t i = 0; i < bn.size(); ++i) {
            double d = bn[i].normal.dot(omega0);
            bool plus = d > eps / 2.0;
            tag_[i] = plus ? 1 : -1;
            (plus ? plus_nodes_ : minus_nodes_).push_back(long(i));
        }
    }

    const Vec& omega0() const { return omega0_; }
    double eps() const { return eps_; }
    const std::vector<long>& plus_nodes() const { return plus_nodes_; }
    const std::vector<long>& minus_nodes() const { return minus_nodes_; }
    /// +1 for the shadowed side, -1 for the measured side (by boundary index).
    int tag(long boundary_index) const { return tag_[static_cast<size_t>(boundary_index)]; }
    bool in_minus(long boundary_index) const { return tag_[static_cast<size_t>(boundary_index)] < 0; }
    const std::vector<int>& tags() const { return tag_; }

private:
    const SpaceTimeGrid* grid_;
    Vec omega0_;
    double eps_;
    std::vector<int> tag_;
    std::vector<long> plus_nodes_, minus_nodes_;
};

inline BoundaryPartition partition_boundary(const SpaceTimeGrid& grid, const Vec& omega0,
                                            double eps) {
    return BoundaryPartition(grid, omega0, eps);
}

/// Complex grid function on all of Q, stored [time level][space node].
struct GridFunction {
    std::vector<cplx> data;
    long npts = 0;
    int nt = 0;

    GridFunction() = default;
    GridFunction(const SpaceTimeGrid& g)
        : data(static_cast<size_t>(g.space_time_points()), cplx(0.0)),
          npts(g.space_points()),
          nt(g.time_steps()) {}

    cplx& at(int k, long p) { return data[static_cast<size_t>(long(k) * npts + p)]; }
    cplx at(int k, long p) const { return data[static_cast<size_t>(long(k) * npts + p)]; }
    cplx* level(int k) { return data.data() + long(k) * npts; }
    const cplx* level(int k) const { return data.data() + long(k) * npts; }
};

/// Complex function on the lateral boundary, stored [time level][boundary node].
struct BoundaryFunction {
    std::vector<cplx> data;
    long nb = 0;
    int nt = 0;

    BoundaryFunction() = default;
    BoundaryFunction(const SpaceTimeGrid& g)
        : data(static_cast<size_t>((g.time_steps() + 1) * long(g.boundary().size())), cplx(0.0)),
          nb(long(g.boundary().size())),
          nt(g.time_steps()) {}

    cplx& at(int k, long bi) { return data[static_cast<size_t>(long(k) * nb + bi)]; }
    cplx at(int k, long bi) const { return data[static_cast<size_t>(long(k) * nb + bi)]; }
};

enum class NormKind { L2_Q, L2_Sigma, H1_Q, Linf };

namespace detail {

/// Central differences in the interior, one-sided second order at faces.
inline cplx spatial_derivative(const SpaceTimeGrid& g, const cplx* u, long p, int axis) {
    int idx[kMaxDim];
    g.decode(p, idx);
    double h = g.hx();
    int i = idx[axis];
    if (i == 0)
        return (-3.0 * u[p] + 4.0 * u[g.shift(p, axis, 1)] - u[g.shift(p, axis, 2)]) / (2.0 * h);
    if (i == g.points_per_axis() - 1)
        return (3.0 * u[p] - 4.0 * u[g.shift(p, axis, -1)] + u[g.shift(p, axis, -2)]) / (2.0 * h);
    return (u[g.shift(p, axis, 1)] - u[g.shift(p, axis, -1)]) / (2.0 * h);
}

}  // namespace detail

/// Discrete norms on Q and Sigma by trapezoidal quadrature.
inline double discrete_norm(const SpaceTimeGrid& g, const GridFunction& u, NormKind kind) {
    if (u.npts != g.space_points() || u.nt != g.time_steps())
        throw std::invalid_argument("grid function shape does not match grid");
    switch (kind) {
        case NormKind::Linf: {
            double m = 0.0;
            for (const cplx& v : u.data) m = std::max(m, std::abs(v));
            return m;
        }
        case NormKind::L2_Q: {
            double s = 0.0;
            for (int k = 0; k <= g.time_steps(); ++k) {
                const cplx* lev = u.level(k);
                double wt = g.time_weight(k), ls = 0.0;
                for (long p = 0; p < g.space_points(); ++p)
                    ls += g.volume_weight(p) * std::norm(lev[p]);
                s += wt * ls;
            }
            return std::sqrt(s);
        }
        case NormKind::H1_Q: {
            double s = 0.0;
            for (int k = 0; k <= g.time_steps(); ++k) {
                const cplx* lev = u.level(k);
                double wt = g.time_weight(k), ls = 0.0;
                for (long p = 0; p < g.space_points(); ++p) {
                    double gsq = std::norm(lev[p]);
                    for (int a = 0; a < g.dim(); ++a)
                        gsq += std::norm(detail::spatial_derivative(g, lev, p, a));
                    ls += g.volume_weight(p) * gsq;
                }
                s += wt * ls;
            }
            return std::sqrt(s);
        }
        case NormKind::L2_Sigma: {
            double s = 0.0;
            for (int k = 0; k <= g.time_steps(); ++k) {
                const cplx* lev = u.level(k);
                double wt = g.time_weight(k), ls = 0.0;
                for (const auto& b : g.boundary())
                    ls += g.face_weight(b) * std::norm(lev[b.node]);
                s += wt * ls;
            }
            return std::sqrt(s);
        }
    }
    throw std::logic_error("unreachable");
}

/// L2 norm of boundary data over a node subset (nullptr = all), with corner
/// nodes optionally excluded from the quadrature.
inline double boundary_l2(const SpaceTimeGrid& g, const BoundaryFunction& f,
                          const std::vector<int>* tags = nullptr, int wanted_tag = 0,
                          bool exclude_corners = false) {
    if (f.nb != long(g.boundary().size()) || f.nt != g.time_steps())
        throw std::invalid_argument("boundary function shape does not match grid");
    double s = 0.0;
    const auto& bn = g.boundary();
    for (int k = 0; k <= g.time_steps(); ++k) {
        double wt = g.time_weight(k), ls = 0.0;
        for (std::size_t i = 0; i < bn.size(); ++i) {
            if (tags && (*tags)[i] != wanted_tag) continue;
            if (exclude_corners && bn[i].corner) continue;
            ls += g.face_weight(bn[i]) * std::norm(f.at(k, long(i)));
        }
        s += wt * ls;
    }
    return std::sqrt(s);
}

/// Sample a callable field(t, x) into a grid function.
template <class F>
GridFunction sample(const SpaceTimeGrid& g, F&& f) {
    GridFunction u(g);
    for (int k = 0; k <= g.time_steps(); ++k) {
        double t = g.time(k);
        cplx* lev = u.level(k);
        for (long p = 0; p < g.space_points(); ++p) lev[p] = cplx(f(t, g.coords(p)));
    }
    return u;
}

}  // namespace cdlab
