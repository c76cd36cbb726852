#include "pinnbc/lagrange.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "pinnbc/errors.hpp"

namespace pinnbc::fem {

namespace {

// Silvester factor P_c(l) = prod_{s<c} (k l - s) / (s + 1) with its derivative in l.
void silvester(int k, int c, double l, double& p, double& dp) {
    p = 1.0;
    dp = 0.0;
    for (int s = 0; s < c; ++s) {
        const double f = (k * l - s) / (s + 1);
        const double df = static_cast<double>(k) / (s + 1);
        dp = dp * f + p * df;
        p *= f;
    }
}

}  // namespace

ReferenceBasis::ReferenceBasis(int degree) : degree_(degree) {
    if (degree < 1 || degree > 10) throw ConfigError("Lagrange degree must be in 1..10");
    // Vertices first, then the remaining lattice in lexicographic order.
    counts_.push_back({degree, 0, 0});
    counts_.push_back({0, degree, 0});
    counts_.push_back({0, 0, degree});
    for (int c2 = 0; c2 <= degree; ++c2) {
        for (int c1 = 0; c1 + c2 <= degree; ++c1) {
            const int c0 = degree - c1 - c2;
            if (c0 == degree || c1 == degree || c2 == degree) continue;
            counts_.push_back({c0, c1, c2});
        }
    }
}

Point ReferenceBasis::node(int a) const {
    const auto& c = counts_[a];
    return {static_cast<double>(c[1]) / degree_, static_cast<double>(c[2]) / degree_};
}

void ReferenceBasis::eval(Point ref, double* values, double* dxi, double* deta) const {
    const double l[3] = {1.0 - ref.x - ref.y, ref.x, ref.y};
    for (int a = 0; a < size(); ++a) {
        const auto& c = counts_[a];
        double p[3], dp[3];
        for (int v = 0; v < 3; ++v) silvester(degree_, c[v], l[v], p[v], dp[v]);
        values[a] = p[0] * p[1] * p[2];
        // dl0/dxi = -1, dl1/dxi = 1; dl0/deta = -1, dl2/deta = 1
        const double d0 = dp[0] * p[1] * p[2];
        if (dxi) dxi[a] = -d0 + p[0] * dp[1] * p[2];
        if (deta) deta[a] = -d0 + p[0] * p[1] * dp[2];
    }
}

Tabulation tabulate(const ReferenceBasis& basis, std::span<const Point> points) {
    Tabulation t;
    t.npoints = static_cast<int>(points.size());
    t.nbasis = basis.size();
    t.values.resize(points.size() * t.nbasis);
    t.dxi.resize(t.values.size());
    t.deta.resize(t.values.size());
    for (int p = 0; p < t.npoints; ++p) {
        basis.eval(points[p], &t.values[p * t.nbasis], &t.dxi[p * t.nbasis], &t.deta[p * t.nbasis]);
    }
    return t;
}

LagrangeSpace::LagrangeSpace(const TriMesh& mesh, int degree, const adf::PolygonalBoundary* boundary)
    : mesh_(&mesh), basis_(degree), locator_(std::make_shared<PointLocator>(mesh, 1e-10)) {
    const int nb = basis_.size();
    element_dofs_.resize(mesh.elements.size() * nb);
    std::map<std::vector<std::pair<int, int>>, int> ids;
    std::vector<std::pair<int, int>> key;
    for (std::size_t e = 0; e < mesh.elements.size(); ++e) {
        const auto& tri = mesh.elements[e];
        for (int a = 0; a < nb; ++a) {
            const auto& c = basis_.counts(a);
            key.clear();
            for (int v = 0; v < 3; ++v) {
                if (c[v] > 0) key.emplace_back(tri[v], c[v]);
            }
            std::sort(key.begin(), key.end());
            auto [it, inserted] = ids.try_emplace(key, static_cast<int>(dof_points_.size()));
            if (inserted) dof_points_.push_back(mesh.from_reference(e, basis_.node(a)));
            element_dofs_[e * nb + a] = it->second;
        }
    }
    if (boundary) {
        boundary_mask_ = dirichlet_dof_mask(*this, *boundary);
    } else {
        boundary_mask_.assign(dof_points_.size(), false);
    }
}

std::vector<int> LagrangeSpace::boundary_dofs() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < boundary_mask_.size(); ++i) {
        if (boundary_mask_[i]) out.push_back(static_cast<int>(i));
    }
    return out;
}

std::vector<int> LagrangeSpace::interior_dofs() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < boundary_mask_.size(); ++i) {
        if (!boundary_mask_[i]) out.push_back(static_cast<int>(i));
    }
    return out;
}

void LagrangeSpace::eval_element(std::size_t e, Point x, double* values, double* dx, double* dy) const {
    const int nb = basis_.size();
    std::vector<double> dxi(nb), deta(nb);
    basis_.eval(mesh_->to_reference(e, x), values, dxi.data(), deta.data());
    const auto m = mesh_->inverse_jacobian_transpose(e);
    for (int a = 0; a < nb; ++a) {
        if (dx) dx[a] = m[0] * dxi[a] + m[1] * deta[a];
        if (dy) dy[a] = m[2] * dxi[a] + m[3] * deta[a];
    }
}

std::vector<bool> dirichlet_dof_mask(const LagrangeSpace& space, const adf::PolygonalBoundary& boundary, double tol) {
    std::vector<bool> mask(space.dim());
    for (std::size_t i = 0; i < space.dim(); ++i) mask[i] = boundary.on_dirichlet(space.dof_points()[i], tol);
    return mask;
}

TrialFunction::TrialFunction(const LagrangeSpace& s, Eigen::VectorXd c, int ncomp)
    : space(&s), coefficients(std::move(c)), components(ncomp) {
    if (coefficients.size() != static_cast<Eigen::Index>(s.dim()) * ncomp) {
        throw ConfigError("coefficient vector length does not match the space dimension");
    }
}

TrialFunction interpolate(const LagrangeSpace& space, const PointFunction& f) {
    return interpolate(space, std::vector<PointFunction>{f});
}

TrialFunction interpolate(const LagrangeSpace& space, const std::vector<PointFunction>& components) {
    const auto n = static_cast<Eigen::Index>(space.dim());
    Eigen::VectorXd c(n * static_cast<Eigen::Index>(components.size()));
    for (std::size_t k = 0; k < components.size(); ++k) {
        for (Eigen::Index i = 0; i < n; ++i) c[static_cast<Eigen::Index>(k) * n + i] = components[k](space.dof_points()[i]);
    }
    return TrialFunction(space, std::move(c), static_cast<int>(components.size()));
}

adf::FieldSample evaluate_in_element(const TrialFunction& w, std::size_t e, Point x, int comp) {
    const LagrangeSpace& s = *w.space;
    const int nb = s.basis().size();
    double vals[128], dx[128], dy[128];
    s.eval_element(e, x, vals, dx, dy);
    const auto dofs = s.element_dofs(e);
    const auto c = w.component(comp);
    adf::FieldSample out;
    for (int a = 0; a < nb; ++a) {
        const double ca = c[dofs[a]];
        out.value += ca * vals[a];
        out.gradient[0] += ca * dx[a];
        out.gradient[1] += ca * dy[a];
    }
    out.laplacian_available = false;
    return out;
}

adf::FieldSample evaluate(const TrialFunction& w, Point x, int comp) {
    const auto e = w.space->locator().locate(x);
    if (!e) throw DomainError("evaluation point outside the mesh");
    return evaluate_in_element(w, *e, x, comp);
}

SampledField sampled(const ScalarField& f) {
    return [f](Point x) {
        const Jet2 j = f.jet(x);
        adf::FieldSample s;
        s.value = j.v;
        s.gradient = j.g;
        s.laplacian = j.laplacian();
        return s;
    };
}

SampledField sampled(const TrialFunction& w, int comp) {
    return [w, comp](Point x) { return evaluate(w, x, comp); };
}

namespace {

double squared_error_on_mesh(const TriMesh& mesh, int order,
                             const std::function<adf::FieldSample(std::size_t, Point)>& w, const SampledField& u) {
    const QuadratureRule rule = triangle_rule_at_least(order);
    double total = 0.0;
    for (std::size_t e = 0; e < mesh.elements.size(); ++e) {
        const double jac = 2.0 * mesh.area(e);
        double local = 0.0;
        for (std::size_t p = 0; p < rule.size(); ++p) {
            const Point x = mesh.from_reference(e, rule.points[p]);
            const auto a = w(e, x);
            const auto b = u(x);
            const double dv = a.value - b.value;
            const double dgx = a.gradient[0] - b.gradient[0];
            const double dgy = a.gradient[1] - b.gradient[1];
            local += rule.weights[p] * (dv * dv + dgx * dgx + dgy * dgy);
        }
        total += jac * local;
    }
    return total;
}

}  // namespace

double h1_error(const SampledField& w, const SampledField& u, const TriMesh& mesh, int order) {
    return std::sqrt(squared_error_on_mesh(mesh, order, [&](std::size_t, Point x) { return w(x); }, u));
}

double h1_error(const TrialFunction& w, const SampledField& u, const NestedMeshPair& pair, int order, int comp) {
    if (&w.space->mesh() != &pair.coarse) {
        // Spaces built on a copy of the coarse mesh are accepted when sizes agree.
        if (w.space->mesh().elements.size() != pair.coarse.elements.size()) {
            throw ConfigError("trial function does not live on the coarse mesh of the pair");
        }
    }
    return std::sqrt(squared_error_on_mesh(
        pair.fine, order,
        [&](std::size_t ef, Point x) { return evaluate_in_element(w, static_cast<std::size_t>(pair.parent[ef]), x, comp); },
        u));
}

double h1_error(const TrialFunction& w, const SampledField& u, int order, int comp) {
    return std::sqrt(squared_error_on_mesh(
        w.space->mesh(), order, [&](std::size_t e, Point x) { return evaluate_in_element(w, e, x, comp); }, u));
}

double h1_error(const TrialFunction& w, const std::vector<SampledField>& u, const NestedMeshPair& pair, int order) {
    if (static_cast<int>(u.size()) != w.components) throw ConfigError("component count mismatch in h1_error");
    double total = 0.0;
    for (int c = 0; c < w.components; ++c) {
        const double e = h1_error(w, u[c], pair, order, c);
        total += e * e;
    }
    return std::sqrt(total);
}

double h1_norm(const SampledField& u, const TriMesh& mesh, int order) {
    const SampledField zero = [](Point) { return adf::FieldSample{}; };
    return h1_error(zero, u, mesh, order);
}

}  // namespace pinnbc::fem
