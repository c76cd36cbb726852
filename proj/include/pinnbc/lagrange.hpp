#pragma once

#include <array>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "pinnbc/adf.hpp"
#include "pinnbc/jet.hpp"
#include "pinnbc/mesh.hpp"
#include "pinnbc/quadrature.hpp"

namespace pinnbc::fem {

/// Lagrange basis of degree k on the reference triangle, nodes on the uniform
/// barycentric lattice. Node a carries counts (c0, c1, c2) with c0+c1+c2 = k,
/// located at (c1/k, c2/k).
class ReferenceBasis {
public:
    explicit ReferenceBasis(int degree);

    int degree() const { return degree_; }
    int size() const { return static_cast<int>(counts_.size()); }
    const std::array<int, 3>& counts(int a) const { return counts_[a]; }
    Point node(int a) const;

    /// Values and reference gradients of all basis functions at `ref`.
    void eval(Point ref, double* values, double* dxi, double* deta) const;

private:
    int degree_;
    std::vector<std::array<int, 3>> counts_;
};

/// Basis values and reference gradients tabulated at a list of points.
struct Tabulation {
    int npoints = 0;
    int nbasis = 0;
    std::vector<double> values;  // [p * nbasis + a]
    std::vector<double> dxi;
    std::vector<double> deta;

    double value(int p, int a) const { return values[p * nbasis + a]; }
};

Tabulation tabulate(const ReferenceBasis& basis, std::span<const Point> points);

/// Continuous piecewise-polynomial space of fixed degree on a TriMesh.
class LagrangeSpace {
public:
    /// With a boundary, `boundary_dof_mask` flags dofs on Dirichlet segments.
    LagrangeSpace(const TriMesh& mesh, int degree, const adf::PolygonalBoundary* boundary = nullptr);

    const TriMesh& mesh() const { return *mesh_; }
    int degree() const { return basis_.degree(); }
    const ReferenceBasis& basis() const { return basis_; }
    std::size_t dim() const { return dof_points_.size(); }
    const std::vector<Point>& dof_points() const { return dof_points_; }
    std::span<const int> element_dofs(std::size_t e) const {
        return {element_dofs_.data() + e * basis_.size(), static_cast<std::size_t>(basis_.size())};
    }
    const std::vector<bool>& boundary_dof_mask() const { return boundary_mask_; }
    std::vector<int> boundary_dofs() const;
    std::vector<int> interior_dofs() const;
    const PointLocator& locator() const { return *locator_; }

    /// Physical values and gradients of the element's basis functions at x.
    void eval_element(std::size_t e, Point x, double* values, double* dx, double* dy) const;

private:
    const TriMesh* mesh_;
    ReferenceBasis basis_;
    std::vector<Point> dof_points_;
    std::vector<int> element_dofs_;
    std::vector<bool> boundary_mask_;
    std::shared_ptr<PointLocator> locator_;
};

/// Dofs of `space` that lie on a Dirichlet segment within `tol`.
std::vector<bool> dirichlet_dof_mask(const LagrangeSpace& space, const adf::PolygonalBoundary& boundary,
                                     double tol = 1e-12);

/// Coefficient vector over a Lagrange space; may hold several components.
struct TrialFunction {
    const LagrangeSpace* space = nullptr;
    Eigen::VectorXd coefficients;  // component-major: [c * dim + i]
    int components = 1;

    TrialFunction() = default;
    TrialFunction(const LagrangeSpace& s, Eigen::VectorXd c, int ncomp = 1);
    Eigen::Ref<const Eigen::VectorXd> component(int c) const {
        return coefficients.segment(static_cast<Eigen::Index>(c * space->dim()),
                                    static_cast<Eigen::Index>(space->dim()));
    }
};

using PointFunction = std::function<double(Point)>;

/// Nodal interpolant c_i = f(x_i).
TrialFunction interpolate(const LagrangeSpace& space, const PointFunction& f);
TrialFunction interpolate(const LagrangeSpace& space, const std::vector<PointFunction>& components);

/// Value and gradient of component `comp` at x. Throws DomainError outside the mesh.
adf::FieldSample evaluate(const TrialFunction& w, Point x, int comp = 0);
/// Same, with the containing element already known.
adf::FieldSample evaluate_in_element(const TrialFunction& w, std::size_t e, Point x, int comp = 0);

/// A field with value and gradient at a point.
using SampledField = std::function<adf::FieldSample(Point)>;

SampledField sampled(const ScalarField& f);
SampledField sampled(const TrialFunction& w, int comp = 0);

/// sqrt(sum over elements of the quadrature of (w-u)^2 + |grad(w-u)|^2).
double h1_error(const SampledField& w, const SampledField& u, const TriMesh& mesh, int order);
/// Trial function on the coarse mesh of `pair`, integrated on the fine mesh.
double h1_error(const TrialFunction& w, const SampledField& u, const NestedMeshPair& pair, int order, int comp = 0);
/// Trial function integrated on its own mesh.
double h1_error(const TrialFunction& w, const SampledField& u, int order, int comp = 0);
/// Sum of squared component errors, square-rooted.
double h1_error(const TrialFunction& w, const std::vector<SampledField>& u, const NestedMeshPair& pair, int order);

double h1_norm(const SampledField& u, const TriMesh& mesh, int order);

/// Quadrature order used for error measurement: max(2 k_int, 8).
inline int error_quadrature_order(int k_int) { return std::max(2 * k_int, 8); }

}  // namespace pinnbc::fem
