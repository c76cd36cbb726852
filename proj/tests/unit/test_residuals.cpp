#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "pinnbc/errors.hpp"
#include "pinnbc/residuals.hpp"
#include "test_support.hpp"

using namespace pinnbc;
using namespace pinnbc::residuals;
using problems::catalog;

namespace {

// Max over weights of |fd - g| / max(1, |g|_inf).
double gradient_check(const nn::ScalarProgram& prog, const nn::WeightVector& w, double h = 1e-6) {
    Eigen::VectorXd g;
    prog.evaluate(w, &g);
    const double scale = std::max(1.0, g.cwiseAbs().maxCoeff());
    double worst = 0.0;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        Eigen::VectorXd wp = w, wm = w;
        wp[i] += h;
        wm[i] -= h;
        const double fd = (prog.evaluate(wp, nullptr) - prog.evaluate(wm, nullptr)) / (2 * h);
        worst = std::max(worst, std::abs(fd - g[i]) / scale);
    }
    return worst;
}

// -Laplace(u) = 0 with data g.
ProblemSpec laplace(const ScalarField& g, fem::Domain d = fem::Domain::unit_square()) {
    problems::EllipticCoefficients c;
    c.f = ScalarField::constant(0.0);
    auto s = problems::manufactured_elliptic("laplace", d, c, g);
    s.coeffs.f = ScalarField::constant(0.0);
    s.exact.clear();
    return s;
}

const ScalarField kQuadratic = ScalarField::from([](const auto& x, const auto& y) { return x * x + x * y - y; });

// mu = 1, beta = (1, 2), sigma = 3 with exact solution x^2 + xy - y.
ProblemSpec polynomial_problem() {
    problems::EllipticCoefficients c;
    c.beta = {ScalarField::constant(1.0), ScalarField::constant(2.0)};
    c.sigma = ScalarField::constant(3.0);
    auto s = problems::manufactured_elliptic("poly", fem::Domain::unit_square(), c, kQuadratic);
    s.coeffs.f = ScalarField::from([](const auto& x, const auto& y) {
        // -Laplace u = -2; beta . grad u = (2x + y) + 2 (x - 1); sigma u.
        return -2.0 + (2.0 * x + y) + 2.0 * (x - 1.0) + 3.0 * (x * x + x * y - y);
    });
    return s;
}

}  // namespace

TEST_CASE("boundary-condition methods") {
    CHECK(method_code(Penalty{1e3}) == "ma");
    CHECK(method_code(ExactNormalized{2}) == "mb");
    CHECK(method_code(ExactProduct{}) == "mc");
    CHECK(method_code(Nitsche{}) == "md");
    CHECK(method_label(Penalty{1000}) == "M_A(lambda=1000)");
    CHECK(is_exact(ExactProduct{}));
    CHECK_FALSE(is_exact(Nitsche{}));
    CHECK_THROWS_AS(validate(Penalty{0.0}), ConfigError);
    CHECK_THROWS_AS(validate(ExactNormalized{3}), ConfigError);
    CHECK_THROWS_AS(validate(Nitsche{-1.0}), ConfigError);
    CHECK_NOTHROW(validate(Nitsche{0.1}));
}

TEST_CASE("strong residual plugins") {
    const auto spec = catalog("elliptic_sol2");
    const auto plugin = make_plugin(spec);
    for (const Point x : problems::quasi_random_points(spec.domain, 50)) {
        const Jet2 u = spec.exact[0].jet(x);
        const double vars[6] = {u.v, u.g[0], u.g[1], u.h[0], u.h[1], u.h[2]};
        double r;
        plugin->strong(x, vars, &r, nullptr);
        CHECK(std::abs(r) < 1e-8);
    }

    const auto lap = make_plugin(laplace(ScalarField::constant(0.0)));
    const double linear[6] = {0.3, 2.0, -1.0, 0.0, 0.0, 0.0};
    double r;
    lap->strong({0.4, 0.6}, linear, &r, nullptr);
    CHECK(r == 0.0);

    const auto conv = catalog("convection");
    const auto cp = make_plugin(conv);
    CHECK(cp->strong_order() == 1);
    for (const Point x : problems::quasi_random_points(conv.domain, 50)) {
        const Jet2 u = conv.exact[0].jet(x);
        const double vars[6] = {u.v, u.g[0], u.g[1], 0, 0, 0};
        cp->strong(x, vars, &r, nullptr);
        CHECK(std::abs(r) < 1e-12);
    }

    // Parametric reaction vanishes for u = 0 when f = 0.
    auto par = problems::parametric_instance(catalog("parametric"), 1.5);
    par.coeffs.f = ScalarField::constant(0.0);
    const double zero[6] = {0, 0, 0, 0, 0, 0};
    make_plugin(par)->strong({0.2, 0.7}, zero, &r, nullptr);
    CHECK(r == 0.0);
    double weak[3];
    make_plugin(par)->weak({0.2, 0.7}, zero, weak, nullptr);
    CHECK(weak[0] == 0.0);
}

TEST_CASE("plugin Jacobians match finite differences") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (const char* id : {"elliptic_sol5", "parametric", "elasticity", "eikonal", "convection"}) {
        const auto spec = catalog(id);
        const auto plugin = make_plugin(spec);
        const int n = plugin->components();
        for (int trial = 0; trial < 5; ++trial) {
            const Point x{0.2 + 0.1 * trial, 0.3 + 0.05 * trial};
            for (int strong = 0; strong < 2; ++strong) {
                const int nvar = strong ? 6 * n : 3 * n;
                const int nout = strong ? n : 3 * n;
                std::vector<double> v(nvar), out(nout), jac(nout * nvar), op(nout), om(nout);
                for (auto& a : v) a = u(rng);
                auto call = [&](const std::vector<double>& vv, double* o, double* j) {
                    if (strong) plugin->strong(x, vv.data(), o, j);
                    else plugin->weak(x, vv.data(), o, j);
                };
                call(v, out.data(), jac.data());
                std::vector<double> plain(nout);
                call(v, plain.data(), nullptr);
                for (int r = 0; r < nout; ++r) CHECK(plain[r] == doctest::Approx(out[r]).epsilon(1e-14));
                for (int j = 0; j < nvar; ++j) {
                    auto vp = v, vm = v;
                    vp[j] += 1e-6;
                    vm[j] -= 1e-6;
                    call(vp, op.data(), nullptr);
                    call(vm, om.data(), nullptr);
                    for (int r = 0; r < nout; ++r) {
                        const double fd = (op[r] - om[r]) / 2e-6;
                        INFO(id, " strong=", strong, " r=", r, " j=", j);
                        CHECK(std::abs(fd - jac[r * nvar + j]) < 1e-6 * std::max(1.0, std::abs(fd)));
                    }
                }
            }
        }
    }
}

TEST_CASE("B-layer is exact on the Dirichlet boundary") {
    const auto g = ScalarField::from([](const auto& x, const auto& y) {
        using std::sin;
        return sin(2.0 * x) + x * y;
    });
    for (const auto domain : {fem::Domain::l_shape(), fem::Domain::square_with_hole()}) {
        const auto spec = laplace(g, domain);
        const auto arch = nn::Architecture::hidden(2, 2, 10, 1);
        const auto samples = spec.boundary.sample_dirichlet(500);
        for (const BcMethod m : {BcMethod{ExactNormalized{1}}, BcMethod{ExactNormalized{2}}, BcMethod{ExactProduct{}}}) {
            const BLayer layer(spec, m);
            for (std::uint64_t seed = 0; seed < 10; ++seed) {
                const auto w = nn::init_weights(arch, seed);
                double worst = 0.0;
                for (const Point b : samples) {
                    const double bw = layer.apply(b, nn::forward(arch, w, Eigen::Vector2d(b.x, b.y))[0]);
                    worst = std::max(worst, std::abs(bw - g(b)));
                }
                CHECK(worst < 1e-10);
            }
        }
    }
}

TEST_CASE("B-layer composition") {
    const auto spec = catalog("elliptic_sol2");
    const BLayer layer(spec, ExactNormalized{1});
    const auto arch = nn::Architecture::hidden(2, 2, 8, 1);
    const nn::WeightVector zero = nn::WeightVector::Zero(arch.num_weights());
    const auto w = nn::init_weights(arch, 11);
    const adf::TransfiniteExtension gbar(spec.boundary);
    const adf::AdfField phi(spec.boundary, adf::Normalized{1});
    for (const Point x : problems::quasi_random_points(spec.domain, 20)) {
        CHECK(apply_b_layer(layer, arch, zero, x).v == gbar.value(x));
        const double n = nn::forward(arch, w, Eigen::Vector2d(x.x, x.y))[0];
        const Jet2 b = apply_b_layer(layer, arch, w, x);
        CHECK(b.v == doctest::Approx(gbar.value(x) + phi.value(x) * n).epsilon(1e-14));
        // Derivatives against central differences of the wrapped value.
        const double h = 1e-5;
        auto val = [&](double a, double c) {
            const Point p{x.x + a, x.y + c};
            return gbar.value(p) + phi.value(p) * nn::forward(arch, w, Eigen::Vector2d(p.x, p.y))[0];
        };
        CHECK(b.g[0] == doctest::Approx((val(h, 0) - val(-h, 0)) / (2 * h)).epsilon(1e-6));
        CHECK(b.laplacian() ==
              doctest::Approx((val(h, 0) + val(-h, 0) + val(0, h) + val(0, -h) - 4 * val(0, 0)) / (h * h)).epsilon(1e-3));
    }
}

TEST_CASE("B-layer pullback is the transpose of the product rule") {
    const Jet2 phi(0.7, {0.3, -0.4}, {0.1, 0.2, -0.5});
    const Jet2 gbar(0.2, {1.0, 2.0}, {0.3, 0.0, 0.1});
    const Jet2 n(-0.4, {0.6, 0.9}, {0.2, -0.7, 0.3});
    const double sb[6] = {0.5, -1.0, 0.25, 2.0, -0.3, 0.8};
    double sn[6];
    b_layer_pullback(phi, sb, sn);
    auto pack = [](const Jet2& j) { return std::array<double, 6>{j.v, j.g[0], j.g[1], j.h[0], j.h[1], j.h[2]}; };
    for (int k = 0; k < 6; ++k) {
        auto e = pack(Jet2{});
        e[k] = 1.0;
        const Jet2 dn(e[0], {e[1], e[2]}, {e[3], e[4], e[5]});
        const auto db = pack(phi * dn);  // B is affine in n
        double lhs = 0.0;
        for (int j = 0; j < 6; ++j) lhs += sb[j] * db[j];
        CHECK(lhs == doctest::Approx(sn[k]).epsilon(1e-14));
    }
    (void)gbar;
    (void)n;
}

TEST_CASE("discretization layout") {
    const auto spec = catalog("elliptic_sol2");
    const auto coarse = fem::generate_mesh(spec.domain, 1);
    VpinnOptions opt;
    CHECK(opt.refinements() == 2);
    CHECK(VpinnOptions{6, 1, 5}.refinements() == 3);
    CHECK(VpinnOptions{5, 2, 5}.refinements() == 2);
    CHECK(VpinnOptions{2, 2, 2}.refinements() == 1);
    CHECK_THROWS_AS((VpinnOptions{4, 1, 0}.validate()), ConfigError);
    const VpinnDiscretization disc(spec, coarse, opt, false);
    CHECK(disc.pair().fine.num_elements() == 16 * coarse.num_elements());
    CHECK(disc.trial().dim() == 81u);
    // Boundary interpolation nodes: four sides of 8 intervals.
    CHECK(disc.trial_dirichlet_dofs().size() == 32u);
    for (const Point p : disc.trial_dirichlet_points()) CHECK(spec.boundary.on_dirichlet(p));
    CHECK(disc.test_dofs().size() == 49u);
    const VpinnDiscretization big(spec, coarse, opt, true);
    CHECK(big.test_dofs().size() == 81u);
    double perimeter = 0.0;
    for (const auto& e : big.dirichlet_edges()) {
        perimeter += norm(e.b - e.a);
        CHECK(std::abs(norm(e.normal) - 1.0) < 1e-15);
        const Point mid = 0.5 * (e.a + e.b) + 1e-3 * e.normal;
        CHECK_FALSE(spec.domain.contains(mid));
    }
    CHECK(perimeter == doctest::Approx(4.0));
}

TEST_CASE("assembled and loop residuals agree") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> nd;
    struct Case {
        const char* id;
        BcMethod method;
    };
    const Case cases[] = {{"elliptic_sol2", Penalty{1e3}},     {"elliptic_sol5", ExactNormalized{1}},
                          {"elliptic_sol2", Nitsche{1.0}},     {"elliptic_sol2_holed", ExactProduct{}},
                          {"convection", ExactProduct{}},      {"convection", Nitsche{10.0}},
                          {"elasticity", Penalty{1.0}},        {"elasticity", Nitsche{0.1}}};
    for (const auto& cs : cases) {
        const auto spec = catalog(cs.id);
        const auto coarse = fem::generate_mesh(spec.domain, 1);
        const VpinnDiscretization disc(spec, coarse, {3, 1, 3}, std::holds_alternative<Nitsche>(cs.method));
        const VpinnResiduals res(spec, disc, cs.method);
        double worst = 0.0;
        for (int t = 0; t < 20; ++t) {
            Eigen::VectorXd c(res.num_coefficients());
            for (auto& v : c) v = nd(rng);
            const Eigen::VectorXd loop = res.evaluate(c);
            const double scale = std::max(1.0, loop.cwiseAbs().maxCoeff());
            worst = std::max(worst, (loop - res.evaluate_assembled(c)).cwiseAbs().maxCoeff() / scale);
        }
        INFO(std::string(cs.id), " ", method_label(cs.method), " worst=", worst);
        CHECK(worst < 1e-12);
    }
    CHECK_THROWS_AS(VpinnResiduals(catalog("eikonal"),
                                   VpinnDiscretization(catalog("eikonal"), fem::generate_mesh(fem::Domain::l_shape(), 0),
                                                       {2, 1, 2}, false),
                                   Penalty{1.0})
                        .assembled(),
                    ConfigError);
}

TEST_CASE("VPINN residuals of an exactly representable solution vanish") {
    const auto spec = polynomial_problem();
    const auto coarse = fem::generate_mesh(spec.domain, 1);
    for (const BcMethod m : {BcMethod{Penalty{1.0}}, BcMethod{Nitsche{1.0}}}) {
        const VpinnDiscretization disc(spec, coarse, {2, 1, 4}, std::holds_alternative<Nitsche>(m));
        const VpinnResiduals res(spec, disc, m);
        const auto u = fem::interpolate(disc.trial(), [&](Point x) { return kQuadratic(x); });
        CHECK(res.evaluate(u.coefficients).cwiseAbs().maxCoeff() < 1e-13);
        CHECK(res.penalty_term(u.coefficients) < 1e-28);
    }
    // With the flux term dropped, Nitsche is no longer consistent.
    const VpinnDiscretization disc(spec, coarse, {2, 1, 4}, true);
    const VpinnResiduals raw(spec, disc, Nitsche{1.0, false});
    const auto u = fem::interpolate(disc.trial(), [&](Point x) { return kQuadratic(x); });
    CHECK(raw.evaluate(u.coefficients).cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("trivial VPINN residuals") {
    auto spec = laplace(ScalarField::constant(0.0));
    const auto coarse = fem::generate_mesh(spec.domain, 1);
    const VpinnDiscretization disc(spec, coarse, {2, 1, 2}, false);
    const VpinnResiduals res(spec, disc, Penalty{1.0});
    CHECK(res.evaluate(Eigen::VectorXd::Zero(res.num_coefficients())).isZero(0.0));
    CHECK(res.penalty_term(Eigen::VectorXd::Zero(res.num_coefficients())) == 0.0);
}

TEST_CASE("eikonal weak residual of zero is the integral of the test function") {
    const auto spec = catalog("eikonal");
    const auto coarse = fem::generate_mesh(spec.domain, 1);
    const VpinnDiscretization disc(spec, coarse, {2, 1, 2}, false);
    const VpinnResiduals res(spec, disc, ExactNormalized{1});
    const Eigen::VectorXd r = res.evaluate(Eigen::VectorXd::Zero(res.num_coefficients()));
    // P1 hat functions: integral is a third of the incident areas.
    std::vector<double> integral(disc.test().dim(), 0.0);
    const auto& fine = disc.pair().fine;
    for (std::size_t e = 0; e < fine.num_elements(); ++e)
        for (int d : disc.test().element_dofs(e)) integral[d] += fine.area(e) / 3.0;
    for (std::size_t k = 0; k < disc.test_dofs().size(); ++k)
        CHECK(r[static_cast<Eigen::Index>(k)] == doctest::Approx(integral[disc.test_dofs()[k]]).epsilon(1e-12));
}

TEST_CASE("Nitsche boundary terms") {
    const auto spec = polynomial_problem();
    const auto coarse = fem::generate_mesh(spec.domain, 1);
    const VpinnDiscretization disc(spec, coarse, {4, 1, 3}, true);
    const VpinnResiduals res(spec, disc, Nitsche{1.0});
    // w interpolates g exactly on the boundary.
    const auto u = fem::interpolate(disc.trial(), [&](Point x) { return kQuadratic(x); });
    CHECK(res.nitsche_added_terms(u.coefficients).cwiseAbs().maxCoeff() < 1e-10);
    // With w = g the Nitsche residuals reduce to the standard ones.
    const VpinnDiscretization std_disc(spec, coarse, {4, 1, 3}, false);
    const VpinnResiduals std_res(spec, std_disc, Penalty{1.0});
    const Eigen::VectorXd rn = res.evaluate(u.coefficients), rs = std_res.evaluate(u.coefficients);
    for (std::size_t k = 0; k < std_disc.test_dofs().size(); ++k)
        CHECK(std::abs(rs[static_cast<Eigen::Index>(k)] - rn[disc.row_of(std_disc.test_dofs()[k])]) < 1e-12);

    auto zero = laplace(ScalarField::constant(0.0));
    const VpinnDiscretization zd(zero, coarse, {2, 1, 2}, true);
    const VpinnResiduals zr(zero, zd, Nitsche{1.0});
    CHECK(zr.nitsche_added_terms(Eigen::VectorXd::Zero(zr.num_coefficients())).isZero(0.0));

    // Summed over the partition of unity only the gamma term survives:
    // gamma / h * int (g - w); halving h doubles it.
    const auto lin = laplace(ScalarField::from([](const auto& x, const auto& y) { return x + y; }));
    double sums[2];
    for (int r = 1; r <= 2; ++r) {
        const VpinnDiscretization d(lin, coarse, {1, 1, 2, r}, true);
        const VpinnResiduals nr(lin, d, Nitsche{1.0});
        sums[r - 1] = nr.nitsche_added_terms(Eigen::VectorXd::Zero(nr.num_coefficients())).sum();
        CHECK(sums[r - 1] * d.pair().fine.meshsize == doctest::Approx(4.0).epsilon(1e-12));
    }
    CHECK(sums[1] == doctest::Approx(2 * sums[0]).epsilon(1e-12));
}

TEST_CASE("Nitsche added terms are bounded by the interpolation error") {
    const auto spec = catalog("elliptic_sol2");
    std::vector<double> ratio;
    for (int level = 1; level <= 3; ++level) {
        const auto coarse = fem::generate_mesh(spec.domain, level);
        const VpinnDiscretization disc(spec, coarse, {2, 1, 2}, true);
        const VpinnResiduals res(spec, disc, Nitsche{1.0});
        const auto u = fem::interpolate(disc.trial(), [&](Point x) { return spec.exact[0](x); });
        const double added = res.nitsche_added_terms(u.coefficients).norm();
        const double interp = fem::h1_error(u, fem::sampled(spec.exact[0]), disc.pair(), 8);
        ratio.push_back(added / interp);
    }
    for (double r : ratio) CHECK(r < 1.5 * ratio[0]);
}

TEST_CASE("trial maps and exact boundary values") {
    const auto spec = catalog("elliptic_sol5");
    const auto coarse = fem::generate_mesh(spec.domain, 1);
    const VpinnDiscretization disc(spec, coarse, {4, 1, 3}, false);
    const auto arch = nn::Architecture::hidden(2, 2, 6, 1);
    for (const BcMethod m : {BcMethod{ExactNormalized{1}}, BcMethod{ExactNormalized{2}}, BcMethod{ExactProduct{}}}) {
        const auto map = make_trial_map(spec, disc.trial(), m);
        for (std::uint64_t seed = 1; seed <= 3; ++seed) {
            const auto c = interpolate_network(map, disc.trial(), arch, nn::init_weights(arch, seed));
            const auto pts = disc.trial_dirichlet_points();
            for (std::size_t k = 0; k < pts.size(); ++k)
                CHECK(std::abs(c[disc.trial_dirichlet_dofs()[k]] - spec.g[0](pts[k])) < 1e-12);
        }
    }
    const auto plain = make_trial_map(spec, disc.trial(), Penalty{1.0});
    CHECK(plain.scale.isOnes());
    CHECK(plain.offset.isZero());
}

TEST_CASE("VPINN loss equals an independent sum of squares") {
    const auto spec = catalog("elliptic_sol2");
    const auto coarse = fem::generate_mesh(spec.domain, 1);
    const auto arch = nn::Architecture::hidden(2, 2, 6, 1);
    const auto w = nn::init_weights(arch, 4);
    for (const BcMethod m : {BcMethod{Penalty{10.0}}, BcMethod{ExactNormalized{1}}, BcMethod{Nitsche{1.0}}}) {
        const VpinnDiscretization disc(spec, coarse, {3, 1, 3}, std::holds_alternative<Nitsche>(m));
        const VpinnProgram prog({spec}, disc, m, arch);
        const auto& res = prog.residuals();
        const Eigen::VectorXd c = prog.trial(w).coefficients;
        const Eigen::VectorXd r = res.evaluate(c);
        double sum = 0.0;
        for (double v : r) sum += v * v;
        if (const auto* p = std::get_if<Penalty>(&m)) {
            const auto pts = disc.trial_dirichlet_points();
            for (std::size_t k = 0; k < pts.size(); ++k) {
                const double d = c[disc.trial_dirichlet_dofs()[k]] - spec.g[0](pts[k]);
                sum += p->lambda * d * d;
            }
        }
        CHECK(prog.evaluate(w, nullptr) == doctest::Approx(sum).epsilon(1e-14));
    }
}

TEST_CASE("VPINN gradients match finite differences") {
    const auto arch = nn::Architecture::hidden(2, 2, 5, 1);
    SUBCASE("elliptic, every method") {
        const auto spec = catalog("elliptic_sol2");
        const auto coarse = fem::generate_mesh(spec.domain, 1);
        for (const BcMethod m : {BcMethod{Penalty{10.0}}, BcMethod{ExactNormalized{2}}, BcMethod{ExactProduct{}},
                                 BcMethod{Nitsche{1.0}}}) {
            const VpinnDiscretization disc(spec, coarse, {2, 1, 2}, std::holds_alternative<Nitsche>(m));
            const VpinnProgram prog({spec}, disc, m, arch, 1e-3);
            INFO(method_label(m));
            CHECK(gradient_check(prog, nn::init_weights(arch, 2)) < 1e-5);
        }
    }
    SUBCASE("nonlinear and vector problems") {
        const auto par = catalog("parametric");
        const std::vector<ProblemSpec> inst = {problems::parametric_instance(par, 0.7),
                                               problems::parametric_instance(par, 1.9)};
        const VpinnDiscretization pd(par, fem::generate_mesh(par.domain, 1), {2, 1, 2}, false);
        const auto parch = nn::Architecture::hidden(3, 2, 5, 1);
        CHECK(gradient_check(VpinnProgram(inst, pd, ExactNormalized{1}, parch), nn::init_weights(parch, 5)) < 1e-5);
        CHECK(gradient_check(VpinnProgram(inst, pd, Penalty{5.0}, parch), nn::init_weights(parch, 6)) < 1e-5);

        const auto eik = catalog("eikonal");
        const VpinnDiscretization ed(eik, fem::generate_mesh(eik.domain, 0), {2, 1, 2}, false);
        CHECK(gradient_check(VpinnProgram({eik}, ed, ExactNormalized{1}, arch), nn::init_weights(arch, 7)) < 1e-5);

        const auto el = catalog("elasticity");
        const VpinnDiscretization ld(el, fem::generate_mesh(el.domain, 0), {2, 1, 2}, true);
        const auto earch = nn::Architecture::hidden(2, 2, 5, 2);
        CHECK(gradient_check(VpinnProgram({el}, ld, Nitsche{1.0}, earch), nn::init_weights(earch, 8)) < 1e-5);
        CHECK_THROWS_AS(VpinnProgram({el}, ld, Nitsche{1.0}, arch), ConfigError);
    }
}

TEST_CASE("PINN residuals match a finite-difference Laplacian") {
    const auto spec = laplace(ScalarField::constant(0.0));
    const auto arch = nn::Architecture::hidden(2, 2, 8, 1);
    const auto w = nn::init_weights(arch, 21);
    PinnPoints pts;
    pts.interior = testing_support::halton(5, 0.1, 0.9, 0.1, 0.9);
    const PinnProgram prog({spec}, pts, Penalty{1.0}, arch, 0.0);
    const Eigen::VectorXd r = prog.residuals(w);
    const double h = 1e-3;
    for (int k = 0; k < 5; ++k) {
        const Point x = pts.interior[k];
        auto f = [&](double a, double b) { return nn::forward(arch, w, Eigen::Vector2d(x.x + a, x.y + b))[0]; };
        const double lap = (f(h, 0) + f(-h, 0) + f(0, h) + f(0, -h) - 4 * f(0, 0)) / (h * h);
        CHECK(std::abs(r[k] + lap) < 1e-4);
    }
}

TEST_CASE("PINN losses") {
    const auto zero = laplace(ScalarField::constant(0.0));
    const auto space_mesh = fem::generate_mesh(zero.domain, 1);
    const fem::LagrangeSpace space(space_mesh, 2, &zero.boundary);
    const auto arch = nn::Architecture::hidden(2, 2, 6, 1);
    const nn::WeightVector w0 = nn::WeightVector::Zero(arch.num_weights());
    const auto pts = pinn_points(zero, space, Placement::MeshNodes, 0);
    CHECK(pts.interior.size() == 9u);
    CHECK(pts.boundary.size() == 5u);
    CHECK(PinnProgram({zero}, pts, ExactNormalized{1}, arch, 0.0).evaluate(w0, nullptr) == 0.0);
    CHECK(PinnProgram({zero}, pts, Penalty{1.0}, arch, 0.0).evaluate(w0, nullptr) == 0.0);

    const auto spec = catalog("elliptic_sol2");
    const auto w = nn::init_weights(arch, 3);
    const PinnProgram p1({spec}, pts, Penalty{1.0}, arch, 0.0);
    const PinnProgram p3({spec}, pts, Penalty{1e3}, arch, 0.0);
    const double res = p1.residuals(w).squaredNorm();
    CHECK(p3.evaluate(w, nullptr) - res == doctest::Approx(1e3 * (p1.evaluate(w, nullptr) - res)).epsilon(1e-10));

    CHECK_THROWS_AS(PinnProgram({spec}, pts, Nitsche{1.0}, arch), ConfigError);
    PinnPoints bad = pts;
    bad.interior.push_back({1e-4, 2e-4});
    CHECK_THROWS_AS(PinnProgram({spec}, bad, ExactNormalized{1}, arch), ConfigError);
    CHECK_NOTHROW(PinnProgram({spec}, bad, Penalty{1.0}, arch));
    const auto el = catalog("elasticity");
    CHECK_THROWS_AS(PinnProgram({el}, pts, Penalty{1.0}, arch), ConfigError);

    const auto uni = pinn_points(spec, space, Placement::UniformDraw, 9);
    CHECK(uni.interior.size() == space.dim());
    for (const Point b : uni.boundary) CHECK(spec.boundary.on_dirichlet(b, 1e-12));
    const auto again = pinn_points(spec, space, Placement::UniformDraw, 9);
    CHECK(again.interior.front().x == uni.interior.front().x);
}

TEST_CASE("PINN gradients match finite differences") {
    const auto arch = nn::Architecture::hidden(2, 2, 5, 1);
    const auto spec = catalog("elliptic_sol5");
    const auto mesh = fem::generate_mesh(spec.domain, 1);
    const fem::LagrangeSpace space(mesh, 2, &spec.boundary);
    const auto pts = pinn_points(spec, space, Placement::UniformDraw, 1);
    for (const BcMethod m : {BcMethod{Penalty{100.0}}, BcMethod{ExactNormalized{1}}, BcMethod{ExactNormalized{2}},
                             BcMethod{ExactProduct{}}}) {
        const PinnProgram prog({spec}, pts, m, arch);
        INFO(method_label(m));
        CHECK(gradient_check(prog, nn::init_weights(arch, 12)) < 1e-5);
    }
    const auto conv = catalog("convection");
    const adf::AdfField phi = make_adf(conv, ExactProduct{});
    const auto cpts = pinn_points(conv, fem::LagrangeSpace(fem::generate_mesh(conv.domain, 1), 2), Placement::UniformDraw,
                                  2, &phi);
    CHECK(gradient_check(PinnProgram({conv}, cpts, ExactProduct{}, arch), nn::init_weights(arch, 13)) < 1e-5);

    const auto el = catalog("elasticity");
    const auto earch = nn::Architecture::hidden(2, 1, 4, 2);
    const fem::LagrangeSpace lspace(fem::generate_mesh(el.domain, 0), 2, &el.boundary);
    const adf::AdfField lphi = make_adf(el, ExactNormalized{1});
    const auto epts = pinn_points(el, lspace, Placement::MeshNodes, 0, &lphi);
    CHECK(gradient_check(PinnProgram({el}, epts, ExactNormalized{1}, earch), nn::init_weights(earch, 14)) < 1e-5);

    const auto par = catalog("parametric");
    const auto parch = nn::Architecture::hidden(3, 1, 4, 1);
    const std::vector<ProblemSpec> inst = {problems::parametric_instance(par, 0.5), problems::parametric_instance(par, 2.0)};
    const auto ppts = pinn_points(par, space, Placement::MeshNodes, 0);
    CHECK(gradient_check(PinnProgram(inst, ppts, ExactProduct{}, parch), nn::init_weights(parch, 15)) < 1e-5);
}

TEST_CASE("residual CSV export") {
    const auto spec = catalog("elliptic_sol2");
    const VpinnDiscretization disc(spec, fem::generate_mesh(spec.domain, 0), {2, 1, 2}, false);
    const VpinnResiduals res(spec, disc, Penalty{1.0});
    const auto path = (std::filesystem::temp_directory_path() / "pinnbc_res.csv").string();
    res.write_csv(path, res.evaluate(Eigen::VectorXd::Zero(res.num_coefficients())));
    std::ifstream in(path);
    std::string line;
    int rows = -1;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == static_cast<int>(res.num_rows()));
    std::filesystem::remove(path);
}

TEST_CASE("VPINN without interpolation") {
    const auto spec = catalog("elliptic_sol2");
    const auto coarse = fem::generate_mesh(spec.domain, 1);
    const auto arch = nn::Architecture::hidden(2, 2, 5, 1);
    const auto w = nn::init_weights(arch, 31);
    for (const BcMethod m : {BcMethod{Penalty{10.0}}, BcMethod{ExactNormalized{1}}, BcMethod{ExactProduct{}}}) {
        const VpinnDiscretization disc(spec, coarse, {2, 1, 3}, false);
        INFO(method_label(m));
        CHECK(gradient_check(DirectVpinnProgram({spec}, disc, m, arch, 1e-3), w) < 1e-5);
    }
    const VpinnDiscretization nd(spec, coarse, {2, 1, 2}, true);
    CHECK_THROWS_AS(DirectVpinnProgram({spec}, nd, Nitsche{1.0}, arch), ConfigError);

    // Interpolated residuals approach the direct ones as k_int grows (same T_h and V_h).
    std::vector<double> gap;
    for (int k : {1, 2, 4, 6}) {
        const VpinnDiscretization disc(spec, coarse, {k, 1, 6, 2}, false);
        const DirectVpinnProgram direct({spec}, disc, ExactNormalized{1}, arch);
        const VpinnProgram interp({spec}, disc, ExactNormalized{1}, arch);
        gap.push_back((direct.residuals(w) - interp.residuals().evaluate(interp.trial(w).coefficients)).norm());
    }
    for (std::size_t k = 1; k < gap.size(); ++k) CHECK(gap[k] < gap[k - 1]);
    CHECK(gap.back() < 0.01 * gap.front());
}
