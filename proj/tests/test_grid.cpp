#include <catch2/catch.hpp>
#include <random>

#include "cdlab/grid.hpp"

using namespace cdlab;

TEST_CASE("build_grid spacings and admission") {
    SpaceTimeGrid g = build_grid(2, 3, 2, 2.0);
    REQUIRE(g.hx() == Approx(0.5));
    REQUIRE(g.ht() == Approx(1.0));

    // diam of the unit square is sqrt(2) < 1.5, so this is admissible
    REQUIRE_NOTHROW(build_grid(2, 33, 64, 1.5));
    REQUIRE(std::sqrt(2.0) < 1.5);

    REQUIRE_THROWS_AS(build_grid(2, 33, 64, 1.0), std::invalid_argument);
    REQUIRE_THROWS_AS(build_grid(2, 2, 8, 2.0), std::invalid_argument);
    REQUIRE_THROWS_AS(build_grid(2, 9, 1, 2.0), std::invalid_argument);
    REQUIRE_THROWS_AS(build_grid(1, 9, 8, 2.0), std::invalid_argument);
    REQUIRE_THROWS_AS(build_grid(3, 9, 8, 1.7), std::invalid_argument);  // sqrt(3) > 1.7
}

TEST_CASE("boundary nodes carry face normals, corners are flagged") {
    SpaceTimeGrid g = build_grid(2, 5, 2, 2.0);
    long total = 0, corners = 0;
    for (const auto& b : g.boundary()) {
        ++total;
        if (b.corner) ++corners;
        REQUIRE(b.normal.norm() == Approx(1.0));
        Vec x = g.coords(b.node);
        // normal points along the assigned face axis
        double comp = x[b.axis];
        REQUIRE(((comp == 0.0 && b.normal[b.axis] == -1.0) ||
                 (comp == 1.0 && b.normal[b.axis] == 1.0)));
    }
    REQUIRE(total == 16);
    REQUIRE(corners == 4);
    // corner (0,0): lexicographically first face is axis 0, side 0
    for (const auto& b : g.boundary()) {
        Vec x = g.coords(b.node);
        if (x[0] == 0.0 && x[1] == 0.0) {
            REQUIRE(b.axis == 0);
            REQUIRE(b.normal[0] == -1.0);
        }
        if (x[0] == 1.0 && x[1] == 0.0) REQUIRE(b.axis == 0);  // face x1=1 before x2=0
    }
}

TEST_CASE("partition_boundary on the unit square") {
    SpaceTimeGrid g = build_grid(2, 9, 4, 2.0);

    SECTION("omega0 = e1, eps = 0.5: plus is exactly the face x1=1") {
        BoundaryPartition part = partition_boundary(g, Vec(1.0, 0.0), 0.5);
        for (std::size_t i = 0; i < g.boundary().size(); ++i) {
            const auto& b = g.boundary()[i];
            Vec x = g.coords(b.node);
            bool on_plus_face = (x[0] == 1.0) && b.axis == 0;
            REQUIRE(part.in_minus(long(i)) == !on_plus_face);
        }
        REQUIRE(part.plus_nodes().size() + part.minus_nodes().size() == g.boundary().size());
    }

    SECTION("omega0 = e2 picks the face x2=1") {
        BoundaryPartition part = partition_boundary(g, Vec(0.0, 1.0), 0.5);
        for (long i : part.plus_nodes()) {
            const auto& b = g.boundary()[static_cast<size_t>(i)];
            REQUIRE(b.axis == 1);
            REQUIRE(b.side == 1);
        }
    }

    SECTION("diagonal direction illuminates two faces") {
        double s = 1.0 / std::sqrt(2.0);
        BoundaryPartition part = partition_boundary(g, Vec(s, s), 0.1);
        for (std::size_t i = 0; i < g.boundary().size(); ++i) {
            const auto& b = g.boundary()[i];
            bool plus_face = (b.side == 1);  // normals +e1 and +e2 give nu.omega0 = 1/sqrt(2)
            REQUIRE((part.tag(long(i)) > 0) == plus_face);
        }
    }

    SECTION("rejects non-unit direction and bad eps") {
        REQUIRE_THROWS_AS(partition_boundary(g, Vec(1.0, 1.0), 0.5), std::invalid_argument);
        REQUIRE_THROWS_AS(partition_boundary(g, Vec(1.0, 0.0), 0.0), std::invalid_argument);
        REQUIRE_THROWS_AS(partition_boundary(g, Vec(1.0, 0.0), 2.0), std::invalid_argument);
    }
}

TEST_CASE("partition consistency: Sigma_-(omega) stays inside the measured set") {
    SpaceTimeGrid g = build_grid(2, 9, 4, 2.0);
    Vec omega0(1.0, 0.0);
    double eps = 0.4;
    BoundaryPartition part = partition_boundary(g, omega0, eps);
    std::mt19937_64 rng(2026);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        // random omega with |omega - omega0| <= eps/2
        Vec omega;
        do {
            omega = Vec(omega0[0] + u(rng) * eps / 2, omega0[1] + u(rng) * eps / 2);
            omega = Vec(omega[0], omega[1]).normalized();
        } while ((omega - omega0).norm() > eps / 2);
        for (std::size_t i = 0; i < g.boundary().size(); ++i) {
            if (g.boundary()[i].normal.dot(omega) < 0.0) REQUIRE(part.in_minus(long(i)));
        }
    }
}

TEST_CASE("discrete norms") {
    SECTION("zero field gives zero for all kinds") {
        SpaceTimeGrid g = build_grid(2, 9, 4, 2.0);
        GridFunction z(g);
        for (NormKind k : {NormKind::L2_Q, NormKind::L2_Sigma, NormKind::H1_Q, NormKind::Linf})
            REQUIRE(discrete_norm(g, z, k) == 0.0);
    }
    SECTION("constant one on T=2 gives sqrt(vol Q) = sqrt(2)") {
        SpaceTimeGrid g = build_grid(2, 9, 4, 2.0);
        GridFunction one = sample(g, [](double, const Vec&) { return 1.0; });
        REQUIRE(discrete_norm(g, one, NormKind::L2_Q) == Approx(std::sqrt(2.0)).epsilon(1e-12));
        REQUIRE(discrete_norm(g, one, NormKind::Linf) == Approx(1.0));
    }
    SECTION("sin(pi x1) converges to 1/sqrt(2) on T close to 1") {
        // T must exceed sqrt(2); scale the exact value by sqrt(T)
        double T = 1.5;
        std::vector<double> errs;
        for (int Nx : {9, 17, 33}) {
            SpaceTimeGrid g = build_grid(2, Nx, 4, T);
            GridFunction f =
                sample(g, [](double, const Vec& x) { return std::sin(std::numbers::pi * x[0]); });
            double exact = std::sqrt(T / 2.0);
            errs.push_back(std::abs(discrete_norm(g, f, NormKind::L2_Q) - exact));
        }
        REQUIRE(errs.back() < 1e-6);
    }
    SECTION("mismatched shape is rejected") {
        SpaceTimeGrid g = build_grid(2, 9, 4, 2.0);
        SpaceTimeGrid g2 = build_grid(2, 17, 4, 2.0);
        GridFunction f(g2);
        REQUIRE_THROWS_AS(discrete_norm(g, f, NormKind::L2_Q), std::invalid_argument);
    }
}

TEST_CASE("quadrature consistency: second-order convergence on a smooth field") {
    // integrand with nonvanishing second derivatives so trapezoid error is generic
    auto f = [](double t, const Vec& x) {
        return std::exp(x[0] + 0.5 * x[1]) * (1.0 + t * t);
    };
    // exact integral of f^2 over (0,T)x(0,1)^2, T=1.5:
    // int exp(2x1) = (e^2-1)/2, int exp(x2) = e-1, int (1+t^2)^2 dt over [0,1.5]
    double It = 1.5 + 2.0 * std::pow(1.5, 3) / 3.0 + std::pow(1.5, 5) / 5.0;
    double exact = std::sqrt((std::exp(2.0) - 1.0) / 2.0 * (std::exp(1.0) - 1.0) * It);
    std::vector<double> hs, errs;
    for (int N : {9, 17, 33}) {
        SpaceTimeGrid g = build_grid(2, N, 2 * (N - 1), 1.5);
        GridFunction u = sample(g, f);
        errs.push_back(std::abs(discrete_norm(g, u, NormKind::L2_Q) - exact));
        hs.push_back(g.hx());
    }
    double order = std::log(errs[0] / errs[2]) / std::log(hs[0] / hs[2]);
    REQUIRE(order >= 1.9);
}

TEST_CASE("boundary CSV export writes one row per boundary node") {
    SpaceTimeGrid g = build_grid(2, 5, 2, 2.0);
    BoundaryPartition part = partition_boundary(g, Vec(1.0, 0.0), 0.5);
    std::string path = "grid_export_test.csv";
    g.export_boundary_csv(path, &part.tags());
    std::ifstream in(path);
    REQUIRE(in.good());
    std::string line;
    long rows = 0;
    std::getline(in, line);  // header
    REQUIRE(line.find("partition") != std::string::npos);
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    REQUIRE(rows == long(g.boundary().size()));
}
