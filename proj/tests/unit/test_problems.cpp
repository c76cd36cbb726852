#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "doctest.h"
#include "pinnbc/errors.hpp"
#include "pinnbc/problems.hpp"
#include "test_support.hpp"

using namespace pinnbc;
using namespace pinnbc::problems;

namespace {
constexpr double kPi = std::numbers::pi;
}

TEST_CASE("catalog point values") {
    CHECK(catalog("elliptic_sol2").exact[0]({0, 0}) == 1.0);
    CHECK(catalog("convection").exact[0]({0, 0}) == 0.0);
    const auto conv = catalog("convection");
    CHECK(conv.exact[0]({0.3, 0.2}) == doctest::Approx(std::sin(0.3 - 6.0)).epsilon(1e-15));
    CHECK(conv.boundary.on_dirichlet({0.0, 0.7}));
    CHECK(conv.boundary.on_dirichlet({0.4, 0.0}));
    CHECK_FALSE(conv.boundary.on_dirichlet({1.0, 0.5}));
    CHECK_FALSE(conv.boundary.on_dirichlet({0.5, 1.0}));
    CHECK_THROWS_AS(catalog("heat"), ConfigError);
    for (const auto& id : catalog_ids()) CHECK(catalog(id).id == id);
}

TEST_CASE("elasticity and eikonal data") {
    const auto el = catalog("elasticity");
    CHECK(el.components() == 2);
    CHECK_FALSE(el.has_exact());
    CHECK(el.lame_mu() == doctest::Approx(43.875));
    CHECK(el.lame_lambda() == doctest::Approx(87.75));
    CHECK(el.body_force.x({0.5, 0.2}) == doctest::Approx((43.875 + 87.75) * 0.5 * std::exp(0.2)));
    CHECK(el.g[1]({0.5, 0.2}) == doctest::Approx(std::exp(0.3) * 0.1));
    CHECK(el.domain.kind == fem::DomainKind::LShape);
    const auto ek = catalog("eikonal");
    CHECK(ek.epsilon == 0.1);
    CHECK(ek.coeffs.f({0.3, 0.3}) == 1.0);
    CHECK(ek.g[0]({1.0, 0.3}) == 0.0);
    CHECK_THROWS_AS(manufactured_residual(ek, {0.5, 0.5}), ConfigError);
}

TEST_CASE("manufactured sources satisfy the strong form") {
    for (const auto& id : catalog_ids()) {
        const auto spec = catalog(id);
        if (!spec.has_exact()) continue;
        double worst = 0.0;
        for (const Point x : quasi_random_points(spec.domain, 200)) {
            worst = std::max(worst, std::abs(manufactured_residual(spec, x)));
        }
        INFO(id);
        CHECK(worst < 1e-8);
    }
    const auto par = catalog("parametric");
    for (double p : {0.5, 0.8, 1.37, 2.0}) {
        const auto inst = parametric_instance(par, p);
        double worst = 0.0;
        for (const Point x : quasi_random_points(inst.domain, 200)) {
            worst = std::max(worst, std::abs(manufactured_residual(inst, x)));
        }
        CHECK(worst < 1e-8);
    }
}

TEST_CASE("sol2 source matches hand-derived derivatives") {
    const auto spec = catalog("elliptic_sol2");
    for (const Point x : testing_support::halton(50, 0, 1, 0, 1)) {
        const double s = x.x + x.y / 2;
        const double u = std::cos(5 * s) + s * s;
        const double ux = -5 * std::sin(5 * s) + 2 * s, uy = ux / 2;
        const double lap = 1.25 * (-25 * std::cos(5 * s) + 2);
        const double mu = 2 + std::sin(x.x + 2 * x.y);
        const double mux = std::cos(x.x + 2 * x.y), muy = 2 * mux;
        const double bx = std::sqrt(x.x - x.y * x.y + 5), by = std::sqrt(x.y - x.x * x.x + 5);
        const double sigma = std::exp(x.x / 2 - x.y / 3) + 2;
        const double f = -(mu * lap + mux * ux + muy * uy) + bx * ux + by * uy + sigma * u;
        CHECK(spec.coeffs.f(x) == doctest::Approx(f).epsilon(1e-12));
    }
}

TEST_CASE("parametric instances") {
    const auto par = catalog("parametric");
    CHECK(par.input_width() == 3);
    CHECK_NOTHROW(parametric_instance(par, 0.5));
    CHECK_NOTHROW(parametric_instance(par, 2.0));
    CHECK_THROWS_AS(parametric_instance(par, 0.49), ConfigError);
    CHECK_THROWS_AS(parametric_instance(par, 2.01), ConfigError);
    CHECK_THROWS_AS(parametric_instance(catalog("elliptic_sol2"), 1.0), ConfigError);

    // p = 1: sin(pi x) sin(pi y), zero on the boundary.
    const auto one = parametric_instance(par, 1.0);
    for (const Point b : one.boundary.sample_dirichlet(200)) {
        CHECK(std::abs(one.exact[0](b)) < 1e-12);
    }
    // u = g on the boundary at every p, and the source matches a hand derivation.
    for (double p : {0.5, 1.3, 2.0}) {
        const auto inst = parametric_instance(par, p);
        for (const Point b : inst.boundary.sample_dirichlet(200)) CHECK(inst.g[0](b) == inst.exact[0](b));
        const Point x{0.31, 0.77};
        const double u = std::sin(p * kPi * x.x) * std::sin(kPi * x.y / p);
        const double ux = p * kPi * std::cos(p * kPi * x.x) * std::sin(kPi * x.y / p);
        const double uy = kPi / p * std::sin(p * kPi * x.x) * std::cos(kPi * x.y / p);
        const double lap = -kPi * kPi * (p * p + 1 / (p * p)) * u;
        CHECK(inst.coeffs.f(x) == doctest::Approx(-lap + 2 * ux + 3 * uy + 4 * std::sin(p * u) * u).epsilon(1e-12));
    }
}

TEST_CASE("parameter range") {
    const ParameterRange r;
    const auto tr = r.train();
    CHECK(tr.size() == 13u);
    CHECK(tr.front() == 0.5);
    CHECK(tr.back() == 2.0);
    for (double p : tr) CHECK(r.contains(p));
    CHECK(r.test().size() == 100u);
}

TEST_CASE("benchmark coefficients are well posed") {
    for (const char* id : {"elliptic_sol2", "elliptic_sol5_holed"}) {
        const auto wp = sample_well_posedness(catalog(id), 1000);
        CHECK(wp.min_mu >= 1.0);
        CHECK(wp.min_reaction >= -1e-10);
    }
}

TEST_CASE("reference solutions are read and sampled") {
    auto mesh = fem::generate_mesh(fem::Domain::unit_square(), 2);
    const auto dir = std::filesystem::temp_directory_path();
    const auto mpath = (dir / "pinnbc_ref.mesh").string();
    const auto vpath = (dir / "pinnbc_ref.txt").string();
    fem::write_mesh(mesh, mpath);
    {
        std::ofstream out(vpath);
        out.precision(17);
        out << "# x y u v\n";
        for (auto it = mesh.vertices.rbegin(); it != mesh.vertices.rend(); ++it) {
            out << it->x << ' ' << it->y << ' ' << it->x + 2 * it->y << ' ' << 3 - it->x << '\n';
        }
    }
    const auto ref = ReferenceSolution::read(mpath, vpath);
    CHECK(ref.components() == 2);
    const auto s0 = ref.field(0)({0.3, 0.45});
    CHECK(s0.value == doctest::Approx(1.2).epsilon(1e-12));
    CHECK(s0.gradient[1] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(ref.field(1)({0.3, 0.45}).value == doctest::Approx(2.7).epsilon(1e-12));

    std::ofstream(vpath) << "0 0 1\n";
    CHECK_THROWS_AS(ReferenceSolution::read(mpath, vpath), ConfigError);
    std::filesystem::remove(mpath);
    std::filesystem::remove(vpath);
}
