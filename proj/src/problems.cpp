#include "pinnbc/problems.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

#include "pinnbc/errors.hpp"

namespace pinnbc::problems {

namespace {

constexpr double kPi = std::numbers::pi;

// Field with values only; sources and residuals never need their derivatives.
ScalarField value_only(std::function<double(Point)> f) {
    ScalarField s;
    s.value_fn = [f](double x, double y) { return f({x, y}); };
    s.jet_fn = [f](const Jet2& x, const Jet2& y) { return Jet2(f({x.v, y.v})); };
    return s;
}

adf::PolygonalBoundary all_dirichlet(const fem::Domain& d, const ScalarField& g) {
    auto segs = d.segments();
    std::vector<bool> flags(segs.size(), true);
    return adf::PolygonalBoundary::with_data(std::move(segs), std::move(flags), g);
}

// -div(mu grad u) + beta . grad u at x, with u given as a jet.
double transport_diffusion(const EllipticCoefficients& c, Point x, const Jet2& u) {
    const Jet2 mu = c.mu.jet(x);
    const double div_flux = mu.v * u.laplacian() + mu.g[0] * u.g[0] + mu.g[1] * u.g[1];
    return -div_flux + c.beta.x(x) * u.g[0] + c.beta.y(x) * u.g[1];
}

double halton(int index, int base) {
    double f = 1.0, r = 0.0;
    while (index > 0) {
        f /= base;
        r += f * (index % base);
        index /= base;
    }
    return r;
}

ScalarField parametric_solution(double p) {
    return ScalarField::from([p](const auto& x, const auto& y) {
        using std::sin;
        return sin(p * kPi * x) * sin(kPi * y / p);
    });
}

ProblemSpec make_parametric(double p) {
    ProblemSpec s;
    s.id = "parametric";
    s.family = Family::ParametricNonlinear;
    s.domain = fem::Domain::unit_square();
    s.p = p;
    s.coeffs.mu = ScalarField::constant(1.0);
    s.coeffs.beta = {ScalarField::constant(2.0), ScalarField::constant(3.0)};
    s.coeffs.sigma = ScalarField::constant(4.0);
    const ScalarField u = parametric_solution(p);
    s.exact = {u};
    s.g = {u};
    const EllipticCoefficients c = s.coeffs;
    s.coeffs.f = value_only([c, u, p](Point x) {
        const Jet2 uj = u.jet(x);
        return transport_diffusion(c, x, uj) + c.sigma(x) * std::sin(p * uj.v) * uj.v;
    });
    s.boundary = all_dirichlet(s.domain, u);
    return s;
}

}  // namespace

std::string to_string(Family f) {
    switch (f) {
        case Family::Elliptic: return "elliptic";
        case Family::ParametricNonlinear: return "parametric_nonlinear";
        case Family::Elasticity: return "elasticity";
        case Family::Eikonal: return "eikonal";
        case Family::Convection: return "convection";
    }
    return "unknown";
}

std::vector<double> ParameterRange::train() const {
    std::vector<double> v(n_train);
    for (int i = 0; i < n_train; ++i) v[i] = n_train == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * i / (n_train - 1);
    return v;
}

std::vector<double> ParameterRange::test() const {
    std::vector<double> v(n_test);
    for (int i = 0; i < n_test; ++i) v[i] = n_test == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * i / (n_test - 1);
    return v;
}

EllipticCoefficients benchmark_coefficients() {
    EllipticCoefficients c;
    c.mu = ScalarField::from([](const auto& x, const auto& y) {
        using std::sin;
        return 2.0 + sin(x + 2.0 * y);
    });
    c.beta.x = ScalarField::from([](const auto& x, const auto& y) {
        using std::sqrt;
        return sqrt(x - y * y + 5.0);
    });
    c.beta.y = ScalarField::from([](const auto& x, const auto& y) {
        using std::sqrt;
        return sqrt(y - x * x + 5.0);
    });
    c.sigma = ScalarField::from([](const auto& x, const auto& y) {
        using std::exp;
        return exp(x / 2.0 - y / 3.0) + 2.0;
    });
    return c;
}

ProblemSpec manufactured_elliptic(std::string id, fem::Domain domain, EllipticCoefficients coeffs, ScalarField exact) {
    ProblemSpec s;
    s.id = std::move(id);
    s.family = Family::Elliptic;
    s.domain = domain;
    const EllipticCoefficients c = coeffs;
    coeffs.f = value_only([c, exact](Point x) {
        const Jet2 u = exact.jet(x);
        return transport_diffusion(c, x, u) + c.sigma(x) * u.v;
    });
    s.coeffs = std::move(coeffs);
    s.exact = {exact};
    s.g = {exact};
    s.boundary = all_dirichlet(domain, exact);
    return s;
}

ProblemSpec catalog(const std::string& id) {
    const ScalarField sol2 = ScalarField::from([](const auto& x, const auto& y) {
        using std::cos;
        const auto s = x + y / 2.0;
        return cos(5.0 * s) + s * s;
    });
    const ScalarField sol5 = ScalarField::from([](const auto& x, const auto& y) {
        using std::cos;
        using std::sin;
        return sin(3.0 * x * (x - y)) * cos(4.0 * y + x) + sin(5.0 * (x + 2.0 * y)) * cos(3.0 * (y - 2.0 * x));
    });

    if (id == "elliptic_sol2") return manufactured_elliptic(id, fem::Domain::unit_square(), benchmark_coefficients(), sol2);
    if (id == "elliptic_sol5") return manufactured_elliptic(id, fem::Domain::unit_square(), benchmark_coefficients(), sol5);
    if (id == "elliptic_sol2_holed")
        return manufactured_elliptic(id, fem::Domain::square_with_hole(), benchmark_coefficients(), sol2);
    if (id == "elliptic_sol5_holed")
        return manufactured_elliptic(id, fem::Domain::square_with_hole(), benchmark_coefficients(), sol5);
    if (id == "parametric") return make_parametric(1.0);

    if (id == "elasticity") {
        ProblemSpec s;
        s.id = id;
        s.family = Family::Elasticity;
        s.domain = fem::Domain::l_shape();
        const double scale = s.lame_mu() + s.lame_lambda();
        s.body_force.x = ScalarField::from([scale](const auto& x, const auto& y) {
            using std::exp;
            return scale * x * exp(y);
        });
        s.body_force.y = ScalarField::from([scale](const auto& x, const auto& y) {
            using std::sqrt;
            return scale * y * sqrt(x + 2.0);
        });
        s.g = {ScalarField::from([](const auto& x, const auto& y) {
                   using std::sin;
                   return sin(kPi * (x + y)) * x * y;
               }),
               ScalarField::from([](const auto& x, const auto& y) {
                   using std::exp;
                   return exp(x - y) * x * y;
               })};
        s.boundary = all_dirichlet(s.domain, s.g[0]);
        return s;
    }

    if (id == "eikonal") {
        ProblemSpec s;
        s.id = id;
        s.family = Family::Eikonal;
        s.domain = fem::Domain::l_shape();
        s.epsilon = 0.1;
        s.coeffs.mu = ScalarField::constant(s.epsilon);
        s.coeffs.f = ScalarField::constant(1.0);
        s.g = {ScalarField::constant(0.0)};
        s.boundary = all_dirichlet(s.domain, s.g[0]);
        return s;
    }

    if (id == "convection") {
        ProblemSpec s;
        s.id = id;
        s.family = Family::Convection;
        s.domain = fem::Domain::rect(0.0, 1.0, 0.0, 1.0);
        const double beta = s.convection_speed;
        const ScalarField u = ScalarField::from([beta](const auto& x, const auto& t) {
            using std::sin;
            return sin(x - beta * t);
        });
        s.coeffs.beta = {ScalarField::constant(beta), ScalarField::constant(1.0)};
        s.exact = {u};
        s.g = {u};
        // Initial edge t = 0 and inflow edge x = 0.
        s.boundary = adf::PolygonalBoundary::with_data(s.domain.segments(), {true, false, false, true}, u);
        const double x0 = s.domain.x0, t0 = s.domain.y0;
        s.custom_adf_pieces = {[x0](const Jet2& x, const Jet2&) { return x - x0; },
                               [t0](const Jet2&, const Jet2& t) { return t - t0; }};
        return s;
    }

    throw ConfigError("unknown problem id: " + id);
}

std::vector<std::string> catalog_ids() {
    return {"elliptic_sol2", "elliptic_sol5", "elliptic_sol2_holed", "elliptic_sol5_holed",
            "parametric",    "elasticity",    "eikonal",             "convection"};
}

ProblemSpec parametric_instance(const ProblemSpec& spec, double p) {
    if (!spec.parametric()) throw ConfigError("parametric_instance: " + spec.id + " is not parametric");
    if (!spec.parameters.contains(p)) throw ConfigError("parameter p outside its range: " + std::to_string(p));
    ProblemSpec s = make_parametric(p);
    s.id = spec.id;
    s.parameters = spec.parameters;
    return s;
}

double manufactured_residual(const ProblemSpec& spec, Point x, int c) {
    if (!spec.has_exact()) throw ConfigError(spec.id + " has no exact solution");
    const Jet2 u = spec.exact.at(c).jet(x);
    switch (spec.family) {
        case Family::Elliptic:
            return transport_diffusion(spec.coeffs, x, u) + spec.coeffs.sigma(x) * u.v - spec.coeffs.f(x);
        case Family::ParametricNonlinear:
            return transport_diffusion(spec.coeffs, x, u) + spec.coeffs.sigma(x) * std::sin(spec.p * u.v) * u.v -
                   spec.coeffs.f(x);
        case Family::Convection: return u.g[1] + spec.convection_speed * u.g[0];
        case Family::Elasticity:
        case Family::Eikonal: break;
    }
    throw ConfigError("no manufactured residual for " + to_string(spec.family));
}

std::vector<Point> quasi_random_points(const fem::Domain& domain, int count, int skip) {
    const auto box = domain.bounding_box();
    std::vector<Point> pts;
    pts.reserve(count);
    const auto segs = domain.segments();
    for (int i = skip + 1; static_cast<int>(pts.size()) < count; ++i) {
        const Point p{box[0] + (box[1] - box[0]) * halton(i, 2), box[2] + (box[3] - box[2]) * halton(i, 3)};
        if (!domain.contains(p)) continue;
        const bool on_edge = std::any_of(segs.begin(), segs.end(), [&](const adf::Segment& s) { return s.distance(p) < 1e-12; });
        if (!on_edge) pts.push_back(p);
    }
    return pts;
}

WellPosedness sample_well_posedness(const ProblemSpec& spec, int samples) {
    const auto& c = spec.coeffs;
    WellPosedness w{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
    const double h = 1e-6;
    for (const Point x : quasi_random_points(spec.domain, samples)) {
        const double div = (c.beta.x(x.x + h, x.y) - c.beta.x(x.x - h, x.y) + c.beta.y(x.x, x.y + h) -
                            c.beta.y(x.x, x.y - h)) /
                           (2 * h);
        w.min_mu = std::min(w.min_mu, c.mu(x));
        w.min_reaction = std::min(w.min_reaction, c.sigma(x) - 0.5 * div);
    }
    return w;
}

ReferenceSolution::ReferenceSolution(fem::TriMesh mesh, std::vector<Eigen::VectorXd> nodal)
    : mesh_(std::make_shared<fem::TriMesh>(std::move(mesh))) {
    if (mesh_->meshsize == 0.0) mesh_->update_meshsize();
    space_ = std::make_shared<fem::LagrangeSpace>(*mesh_, 1);
    std::vector<int> dof_of_vertex(mesh_->num_vertices(), 0);
    for (std::size_t e = 0; e < mesh_->num_elements(); ++e) {
        const auto dofs = space_->element_dofs(e);
        for (int a = 0; a < 3; ++a) dof_of_vertex[mesh_->elements[e][a]] = dofs[a];
    }
    for (const auto& v : nodal) {
        if (static_cast<std::size_t>(v.size()) != mesh_->num_vertices())
            throw ConfigError("reference solution: value count does not match the mesh");
        Eigen::VectorXd c(v.size());
        for (Eigen::Index i = 0; i < v.size(); ++i) c[dof_of_vertex[i]] = v[i];
        fields_.emplace_back(*space_, std::move(c));
    }
    if (fields_.empty()) throw ConfigError("reference solution: no components");
}

ReferenceSolution ReferenceSolution::read(const std::string& mesh_path, const std::string& values_path) {
    fem::TriMesh mesh = fem::read_mesh(mesh_path);
    std::ifstream in(values_path);
    if (!in) throw ConfigError("cannot open reference values: " + values_path);

    // P1 dofs coincide with the vertices; match by coordinates.
    std::map<std::pair<long long, long long>, int> index;
    const double quantum = 1e-9;
    auto key = [&](double x, double y) {
        return std::make_pair(std::llround(x / quantum), std::llround(y / quantum));
    };
    for (std::size_t i = 0; i < mesh.num_vertices(); ++i) index[key(mesh.vertices[i].x, mesh.vertices[i].y)] = static_cast<int>(i);

    std::vector<Eigen::VectorXd> nodal;
    std::vector<bool> seen(mesh.num_vertices(), false);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        std::istringstream ls(line);
        std::vector<double> vals;
        for (double v; ls >> v;) vals.push_back(v);
        if (vals.empty()) continue;
        if (vals.size() < 3 || vals.size() > 4)
            throw ConfigError("reference values line " + std::to_string(lineno) + ": expected x y v1 [v2]");
        const int ncomp = static_cast<int>(vals.size()) - 2;
        if (nodal.empty()) nodal.assign(ncomp, Eigen::VectorXd::Constant(mesh.num_vertices(), std::nan("")));
        if (static_cast<int>(nodal.size()) != ncomp)
            throw ConfigError("reference values line " + std::to_string(lineno) + ": inconsistent component count");
        const auto it = index.find(key(vals[0], vals[1]));
        if (it == index.end())
            throw ConfigError("reference values line " + std::to_string(lineno) + ": point is not a mesh vertex");
        for (int c = 0; c < ncomp; ++c) nodal[c][it->second] = vals[2 + c];
        seen[it->second] = true;
    }
    if (nodal.empty() || std::find(seen.begin(), seen.end(), false) != seen.end())
        throw ConfigError("reference values do not cover every mesh vertex");
    return ReferenceSolution(std::move(mesh), std::move(nodal));
}

fem::SampledField ReferenceSolution::field(int c) const {
    auto mesh = mesh_;
    auto space = space_;
    const fem::TrialFunction f = fields_.at(c);
    return [mesh, space, f](Point x) { return fem::evaluate(f, x); };
}

}  // namespace pinnbc::problems
