#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace cdlab {

using cplx = std::complex<double>;

inline constexpr int kMaxDim = 3;

/// Small fixed-capacity spatial vector (n = 2 or 3).
struct Vec {
    std::array<double, kMaxDim> v{};
    int n = 2;

    Vec() = default;
    Vec(int dim) : n(dim) { v.fill(0.0); }
    Vec(double a, double b) : v{a, b, 0.0}, n(2) {}
    Vec(double a, double b, double c) : v{a, b, c}, n(3) {}

    double& operator[](int i) { return v[static_cast<size_t>(i)]; }
    double operator[](int i) const { return v[static_cast<size_t>(i)]; }

    double dot(const Vec& o) const {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += v[size_t(i)] * o.v[size_t(i)];
        return s;
    }
    double norm() const { return std::sqrt(dot(*this)); }

    Vec operator+(const Vec& o) const {
        Vec r(n);
        for (int i = 0; i < n; ++i) r[i] = v[size_t(i)] + o[i];
        return r;
    }
    Vec operator-(const Vec& o) const {
        Vec r(n);
        for (int i = 0; i < n; ++i) r[i] = v[size_t(i)] - o[i];
        return r;
    }
    Vec operator*(double c) const {
        Vec r(n);
        for (int i = 0; i < n; ++i) r[i] = v[size_t(i)] * c;
        return r;
    }
    Vec normalized() const {
        double m = norm();
        if (m == 0.0) throw std::invalid_argument("cannot normalize zero vector");
        return (*this) * (1.0 / m);
    }
};

inline Vec unit_axis(int n, int axis, double sign = 1.0) {
    Vec e(n);
    e[axis] = sign;
    return e;
}

/// Worker count: CDLAB_THREADS caps the pool, hardware concurrency otherwise.
inline unsigned worker_count() {
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    if (const char* env = std::getenv("CDLAB_THREADS")) {
        long cap = std::strtol(env, nullptr, 10);
        if (cap > 0 && static_cast<unsigned>(cap) < hw) return static_cast<unsigned>(cap);
        if (cap > 0) return static_cast<unsigned>(cap);
    }
    return hw;
}

/// Static partition parallel loop. Results must be written to disjoint slots so
/// that output order does not depend on scheduling.
inline void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body) {
    unsigned nw = worker_count();
    if (nw <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr err;
    std::mutex err_mtx;
    unsigned launch = static_cast<unsigned>(std::min<std::size_t>(nw, count));
    for (unsigned w = 0; w < launch; ++w) {
        pool.emplace_back([&]() {
            for (;;) {
                std::size_t i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lk(err_mtx);
                    if (!err) err = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

/// Deterministic shortest-roundtrip formatting for CSV output.
inline std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return std::string(buf);
}

/// Least-squares slope of y against x.
inline double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw std::invalid_argument("fit_slope needs >= 2 matched points");
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= double(x.size());
    my /= double(y.size());
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx == 0.0) throw std::invalid_argument("fit_slope: degenerate abscissae");
    return sxy / sxx;
}

}  // namespace cdlab
