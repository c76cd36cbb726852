#include <cmath>
#include <filesystem>
#include <map>
#include <random>

#include "doctest.h"
#include "pinnbc/errors.hpp"
#include "pinnbc/lagrange.hpp"
#include "pinnbc/mesh.hpp"
#include "pinnbc/quadrature.hpp"
#include "test_support.hpp"

using namespace pinnbc;
using namespace pinnbc::fem;

namespace {

double factorial(int n) { return n <= 1 ? 1.0 : n * factorial(n - 1); }

// Integral of x^a y^b over the reference triangle.
double monomial_integral(int a, int b) { return factorial(a) * factorial(b) / factorial(a + b + 2); }

double integrate(const QuadratureRule& r, int a, int b) {
    double s = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) s += r.weights[i] * std::pow(r.points[i].x, a) * std::pow(r.points[i].y, b);
    return s;
}

adf::PolygonalBoundary all_dirichlet(const Domain& d) {
    auto segs = d.segments();
    return adf::PolygonalBoundary::with_data(segs, std::vector<bool>(segs.size(), true), ScalarField::constant(0.0));
}

bool inside_triangle(const TriMesh& m, std::size_t e, Point p, double tol) {
    const Point r = m.to_reference(e, p);
    return r.x >= -tol && r.y >= -tol && r.x + r.y <= 1 + tol;
}

}  // namespace

TEST_CASE("quadrature tables integrate monomials exactly") {
    for (int q = 1; q <= 10; ++q) {
        const auto rule = quadrature_for_order(q);
        CHECK(rule.order >= q);
        double wsum = 0.0;
        for (double w : rule.weights) {
            CHECK(w > 0.0);
            wsum += w;
        }
        CHECK(wsum == doctest::Approx(0.5).epsilon(1e-15));
        for (int a = 0; a <= q; ++a) {
            for (int b = 0; a + b <= q; ++b) CHECK(std::abs(integrate(rule, a, b) - monomial_integral(a, b)) < 1e-14);
        }
    }
    CHECK(quadrature_for_order(1).size() == 1);
    CHECK(quadrature_for_order(1).weights[0] == 0.5);
    CHECK(integrate(quadrature_for_order(3), 3, 0) == doctest::Approx(0.05).epsilon(1e-15));
    CHECK(std::abs(integrate(quadrature_for_order(5), 2, 3) - 1.0 / 420.0) < 1e-14);
    CHECK_THROWS_AS(quadrature_for_order(0), ConfigError);
    CHECK_THROWS_AS(quadrature_for_order(11), ConfigError);
}

TEST_CASE("collapsed Gauss rules reach high orders") {
    for (int q : {11, 12, 16}) {
        const auto rule = triangle_rule_at_least(q);
        for (int a = 0; a <= q; ++a) {
            for (int b = 0; a + b <= q; ++b) CHECK(std::abs(integrate(rule, a, b) - monomial_integral(a, b)) < 1e-14);
        }
    }
    const auto g = gauss_for_order(7);
    double s = 0.0;
    for (std::size_t i = 0; i < g.points.size(); ++i) s += g.weights[i] * std::pow(g.points[i], 6);
    CHECK(s == doctest::Approx(2.0 / 7.0).epsilon(1e-15));
}

TEST_CASE("structured meshes have the expected sizes") {
    auto sq0 = generate_mesh(Domain::unit_square(), 0);
    CHECK(sq0.elements.size() == 2);
    CHECK(sq0.vertices.size() == 4);
    for (int k = 1; k <= 3; ++k) CHECK(generate_mesh(Domain::unit_square(), k).elements.size() == 2u * (1u << (2 * k)));
    const auto l0 = generate_mesh(Domain::l_shape(), 0);
    CHECK(l0.elements.size() == 6);
    double area = 0.0;
    for (std::size_t e = 0; e < l0.elements.size(); ++e) area += l0.area(e);
    CHECK(area == doctest::Approx(3.0));
    CHECK_THROWS_AS(Domain::parse("circle"), ConfigError);
    CHECK_THROWS_AS(generate_mesh(Domain::unit_square(), -1), ConfigError);

    const auto h0 = generate_mesh(Domain::square_with_hole(), 0);
    area = 0.0;
    for (std::size_t e = 0; e < h0.elements.size(); ++e) area += h0.area(e);
    CHECK(area == doctest::Approx(4.0 - 0.25));
}

TEST_CASE("meshes are conforming, positively oriented and fully tagged") {
    for (const auto& d : {Domain::unit_square(), Domain::l_shape(), Domain::square_with_hole(), Domain::rect(0, 2, 0, 0.5)}) {
        for (int level = 0; level <= 2; ++level) {
            const auto m = generate_mesh(d, level);
            std::map<std::pair<int, int>, int> edges;
            for (std::size_t e = 0; e < m.elements.size(); ++e) {
                CHECK(m.area(e) > 0.0);
                const auto& t = m.elements[e];
                for (int k = 0; k < 3; ++k) ++edges[std::minmax(t[k], t[(k + 1) % 3])];
            }
            std::size_t boundary = 0;
            for (const auto& [key, count] : edges) {
                CHECK(count <= 2);
                if (count == 1) ++boundary;
            }
            CHECK(m.boundary_edges.size() == boundary);
            double perimeter = 0.0;
            for (const auto& be : m.boundary_edges) {
                CHECK(be.segment >= 0);
                perimeter += norm(m.vertices[be.v1] - m.vertices[be.v0]);
            }
            double expected = 0.0;
            for (const auto& s : d.segments()) expected += s.length();
            CHECK(perimeter == doctest::Approx(expected).epsilon(1e-12));
        }
    }
}

TEST_CASE("meshsize halves per level and per red refinement") {
    const auto m1 = generate_mesh(Domain::l_shape(), 1);
    const auto m2 = generate_mesh(Domain::l_shape(), 2);
    CHECK(m2.meshsize == doctest::Approx(m1.meshsize / 2).epsilon(1e-14));
    const auto pair = refine_to_pair(m1);
    CHECK(pair.fine.elements.size() == 4 * m1.elements.size());
    CHECK(pair.fine.meshsize == doctest::Approx(m1.meshsize / 2).epsilon(1e-14));
    CHECK(refine_to_pair(generate_mesh(Domain::unit_square(), 0)).fine.elements.size() == 8);
}

TEST_CASE("nested pairs map fine elements into their parents") {
    for (int r : {1, 2, 3}) {
        const auto coarse = generate_mesh(Domain::square_with_hole(), 0);
        const auto pair = refine_to_pair(coarse, r);
        REQUIRE(pair.parent.size() == pair.fine.elements.size());
        for (std::size_t e = 0; e < pair.fine.elements.size(); ++e) {
            const auto p = static_cast<std::size_t>(pair.parent[e]);
            CHECK(inside_triangle(pair.coarse, p, pair.fine.barycenter(e), 0.0));
            for (int v : pair.fine.elements[e]) CHECK(inside_triangle(pair.coarse, p, pair.fine.vertices[v], 1e-12));
        }
    }
}

TEST_CASE("mesh files round trip") {
    const auto m = generate_mesh(Domain::l_shape(), 1);
    const auto path = std::filesystem::temp_directory_path() / "pinnbc_mesh_roundtrip.txt";
    write_mesh(m, path.string());
    const auto r = read_mesh(path.string());
    CHECK(r.vertices.size() == m.vertices.size());
    CHECK(r.elements == m.elements);
    CHECK(r.boundary_edges.size() == m.boundary_edges.size());
    CHECK(r.vertices[7].x == m.vertices[7].x);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(read_mesh("/nonexistent/mesh.txt"), ConfigError);
}

TEST_CASE("point location") {
    const auto m = generate_mesh(Domain::l_shape(), 2);
    const PointLocator loc(m);
    for (std::size_t e = 0; e < m.elements.size(); ++e) CHECK(loc.locate(m.barycenter(e)) == e);
    CHECK_FALSE(loc.locate({-0.5, -0.5}).has_value());
    CHECK(loc.locate({1.0, 1.0}).has_value());
}

TEST_CASE("reference basis has the Lagrange property and partition of unity") {
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> u(0, 1);
    for (int k = 1; k <= 6; ++k) {
        const ReferenceBasis b(k);
        CHECK(b.size() == (k + 1) * (k + 2) / 2);
        std::vector<double> v(b.size()), dx(b.size()), dy(b.size());
        for (int a = 0; a < b.size(); ++a) {
            b.eval(b.node(a), v.data(), dx.data(), dy.data());
            for (int c = 0; c < b.size(); ++c) CHECK(std::abs(v[c] - (a == c ? 1.0 : 0.0)) < 1e-12);
        }
        for (int i = 0; i < 100; ++i) {
            double x = u(rng), y = u(rng);
            if (x + y > 1) {
                x = 1 - x;
                y = 1 - y;
            }
            b.eval({x, y}, v.data(), dx.data(), dy.data());
            double s = 0, sx = 0, sy = 0;
            for (int a = 0; a < b.size(); ++a) {
                s += v[a];
                sx += dx[a];
                sy += dy[a];
            }
            CHECK(std::abs(s - 1) < 1e-12);
            CHECK(std::abs(sx) < 1e-10);
            CHECK(std::abs(sy) < 1e-10);
        }
    }
}

TEST_CASE("global dof counts") {
    const auto m = generate_mesh(Domain::unit_square(), 2);  // 4x4 squares
    for (int k = 1; k <= 6; ++k) {
        const LagrangeSpace s(m, k);
        CHECK(s.dim() == static_cast<std::size_t>((4 * k + 1) * (4 * k + 1)));
    }
    const auto l = generate_mesh(Domain::l_shape(), 0);
    CHECK(LagrangeSpace(l, 2).dim() == 21u);
}

TEST_CASE("boundary dof mask follows the Dirichlet flags") {
    const auto d = Domain::l_shape();
    const auto m = generate_mesh(d, 1);
    auto pb = all_dirichlet(d);
    pb.dirichlet[0] = false;  // bottom edge becomes Neumann
    const LagrangeSpace s(m, 3, &pb);
    for (std::size_t i = 0; i < s.dim(); ++i) {
        const Point p = s.dof_points()[i];
        CHECK(s.boundary_dof_mask()[i] == pb.on_dirichlet(p, 1e-12));
    }
    // Interior of the Neumann edge is unmasked, its end points are shared with Dirichlet edges.
    std::size_t neumann_only = 0;
    for (std::size_t i = 0; i < s.dim(); ++i) {
        const Point p = s.dof_points()[i];
        if (std::abs(p.y + 1) < 1e-14 && p.x > 1e-14 && p.x < 1 - 1e-14) {
            CHECK_FALSE(s.boundary_dof_mask()[i]);
            ++neumann_only;
        }
    }
    CHECK(neumann_only == 5);
}

TEST_CASE("interpolation and evaluation") {
    const auto m = generate_mesh(Domain::square_with_hole(), 1);
    for (int k = 1; k <= 5; ++k) {
        const LagrangeSpace s(m, k);
        const auto c = interpolate(s, [](Point) { return 3.7; });
        for (int i = 0; i < c.coefficients.size(); ++i) CHECK(c.coefficients[i] == 3.7);
        const auto lin = interpolate(s, [](Point p) { return p.x + 2 * p.y; });
        for (const Point& p : testing_support::halton(30, -1, 1, -1, 1)) {
            if (!Domain::square_with_hole().contains(p)) continue;
            const auto f = evaluate(lin, p);
            CHECK(f.gradient[0] == doctest::Approx(1.0).epsilon(1e-12));
            CHECK(f.gradient[1] == doctest::Approx(2.0).epsilon(1e-12));
            const auto cc = evaluate(c, p);
            CHECK(cc.value == doctest::Approx(3.7).epsilon(1e-13));
            CHECK(std::abs(cc.gradient[0]) < 1e-11);
        }
        // Polynomial of total degree k is reproduced.
        auto poly = [k](Point p) { return std::pow(p.x - 0.3 * p.y, k) + 0.5 * std::pow(p.y, k - 1) - 1.0; };
        const auto w = interpolate(s, poly);
        for (const Point& p : testing_support::halton(30, -1, 1, -1, 1)) {
            if (!Domain::square_with_hole().contains(p)) continue;
            CHECK(std::abs(evaluate(w, p).value - poly(p)) < 1e-12);
        }
    }
    CHECK_THROWS_AS(evaluate(interpolate(LagrangeSpace(m, 1), [](Point) { return 0.0; }), {0.25, 0.25}), DomainError);
}

TEST_CASE("evaluation agrees with a barycentric oracle at barycenters") {
    const auto m = generate_mesh(Domain::unit_square(), 1);
    const LagrangeSpace s(m, 2);
    std::mt19937 rng(3);
    std::normal_distribution<double> n(0, 1);
    Eigen::VectorXd c(static_cast<Eigen::Index>(s.dim()));
    for (auto& v : c) v = n(rng);
    const TrialFunction w(s, c);
    for (std::size_t e = 0; e < m.elements.size(); ++e) {
        // Quadratic Lagrange at the barycenter: vertex weights -1/9, edge weights 4/9.
        const auto dofs = s.element_dofs(e);
        double oracle = 0.0;
        for (int a = 0; a < 6; ++a) {
            const auto& cnt = s.basis().counts(a);
            const bool vertex = cnt[0] == 2 || cnt[1] == 2 || cnt[2] == 2;
            oracle += c[dofs[a]] * (vertex ? -1.0 / 9.0 : 4.0 / 9.0);
        }
        CHECK(evaluate_in_element(w, e, m.barycenter(e)).value == doctest::Approx(oracle).epsilon(1e-13));
    }
}

TEST_CASE("interpolation error decays at rate k+1 in the sup norm") {
    auto f = [](Point p) { return std::tanh(p.x + p.y); };
    std::vector<double> errs;
    std::vector<TriMesh> meshes;
    for (int level = 1; level <= 4; ++level) meshes.push_back(generate_mesh(Domain::unit_square(), level));
    for (const auto& m : meshes) {
        const LagrangeSpace s(m, 4);
        const auto w = interpolate(s, f);
        double worst = 0.0;
        for (const Point& p : testing_support::halton(2000, 0, 1, 0, 1)) worst = std::max(worst, std::abs(evaluate(w, p).value - f(p)));
        errs.push_back(worst);
    }
    const double rate = std::log2(errs[2] / errs[3]);
    CHECK(rate > 4.5);
    CHECK(rate < 5.6);
}

TEST_CASE("H1 error") {
    const auto m = generate_mesh(Domain::unit_square(), 1);
    const LagrangeSpace s(m, 3);
    const auto ux = ScalarField::from([](const auto& x, const auto&) { return x; });
    const auto zero = interpolate(s, [](Point) { return 0.0; });
    CHECK(h1_error(zero, sampled(ux), 8) == doctest::Approx(std::sqrt(4.0 / 3.0)).epsilon(1e-14));

    const auto u = ScalarField::from([](const auto& x, const auto& y) {
        using std::sin;
        return sin(3 * x) * y + x * x;
    });
    const auto w = interpolate(s, [&](Point p) { return u(p); });
    CHECK(h1_error(sampled(w), sampled(w), m, 8) < 1e-13);
    const auto half = TrialFunction(s, 0.5 * w.coefficients);
    const auto zero_f = sampled(ScalarField::constant(0.0));
    CHECK(h1_error(half, zero_f, 8) == doctest::Approx(0.5 * h1_error(w, zero_f, 8)).epsilon(1e-14));

    // Triangle inequality on random triples.
    std::mt19937 rng(11);
    std::normal_distribution<double> n(0, 1);
    for (int t = 0; t < 5; ++t) {
        Eigen::VectorXd a(static_cast<Eigen::Index>(s.dim())), b(a.size()), c(a.size());
        for (Eigen::Index i = 0; i < a.size(); ++i) {
            a[i] = n(rng);
            b[i] = n(rng);
            c[i] = n(rng);
        }
        const TrialFunction A(s, a), B(s, b), C(s, c);
        const double ab = h1_error(sampled(A), sampled(B), m, 8);
        const double bc = h1_error(sampled(B), sampled(C), m, 8);
        const double ac = h1_error(sampled(A), sampled(C), m, 8);
        CHECK(ac <= ab + bc + 1e-12);
    }

    // Polynomial of the space degree is interpolated exactly in H1.
    const auto cubic = ScalarField::from([](const auto& x, const auto& y) { return x * x * y - 2.0 * y * y * y + x; });
    const auto wc = interpolate(s, [&](Point p) { return cubic(p); });
    CHECK(h1_error(wc, sampled(cubic), 8) < 1e-11);
    const auto pair = refine_to_pair(m, 2);
    const LagrangeSpace sc(pair.coarse, 3);
    CHECK(h1_error(interpolate(sc, [&](Point p) { return cubic(p); }), sampled(cubic), pair, 8) < 1e-11);
    CHECK(error_quadrature_order(4) == 8);
    CHECK(error_quadrature_order(6) == 12);
}
