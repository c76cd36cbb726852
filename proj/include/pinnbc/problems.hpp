#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pinnbc/adf.hpp"
#include "pinnbc/jet.hpp"
#include "pinnbc/lagrange.hpp"
#include "pinnbc/mesh.hpp"

namespace pinnbc::problems {

enum class Family { Elliptic, ParametricNonlinear, Elasticity, Eikonal, Convection };

std::string to_string(Family f);

/// -div(mu grad u) + beta . grad u + sigma u = f, with Neumann datum psi.
struct EllipticCoefficients {
    ScalarField mu = ScalarField::constant(1.0);
    VectorField beta{ScalarField::constant(0.0), ScalarField::constant(0.0)};
    ScalarField sigma = ScalarField::constant(0.0);
    ScalarField f = ScalarField::constant(0.0);
    ScalarField psi = ScalarField::constant(0.0);
};

/// Parameter interval with uniformly spaced training and test values.
struct ParameterRange {
    double lo = 0.5;
    double hi = 2.0;
    int n_train = 13;
    int n_test = 100;

    std::vector<double> train() const;
    std::vector<double> test() const;
    bool contains(double p) const { return p >= lo && p <= hi; }
};

struct ProblemSpec {
    std::string id;
    Family family = Family::Elliptic;
    fem::Domain domain;
    /// Geometry and Dirichlet flags; `data` holds the datum of component 0.
    adf::PolygonalBoundary boundary;
    /// Dirichlet datum per solution component.
    std::vector<ScalarField> g;
    /// Exact solution per component, when known.
    std::vector<ScalarField> exact;
    EllipticCoefficients coeffs;

    // Parametric nonlinear reaction sigma * sin(p u) u.
    double p = 1.0;
    ParameterRange parameters;

    // Elasticity.
    double young = 117.0;
    double poisson = 1.0 / 3.0;
    VectorField body_force;

    // Eikonal diffusivity.
    double epsilon = 0.1;

    // Convection speed; y plays the role of time.
    double convection_speed = 30.0;

    /// ADF pieces replacing the segment ADFs (the space-time factorization
    /// x * t for convection). Empty for polygonal ADFs.
    std::vector<adf::DistancePrimitive> custom_adf_pieces;

    int components() const { return static_cast<int>(g.size()); }
    bool has_exact() const { return !exact.empty(); }
    bool parametric() const { return family == Family::ParametricNonlinear; }
    /// Residuals are affine in the solution.
    bool affine() const { return family == Family::Elliptic || family == Family::Elasticity || family == Family::Convection; }
    double lame_mu() const { return young / (2 * (1 + poisson)); }
    double lame_lambda() const { return young * poisson / ((1 + poisson) * (1 - 2 * poisson)); }
    /// Boundary carrying the datum of component c.
    adf::PolygonalBoundary boundary_for(int c) const { return boundary.with_datum(g[c]); }
    /// Network input width: (x, y) or (x, y, p).
    int input_width() const { return parametric() ? 3 : 2; }
};

/// Known ids: elliptic_sol2, elliptic_sol5, elliptic_sol2_holed, elliptic_sol5_holed,
/// parametric, elasticity, eikonal, convection. Throws ConfigError otherwise.
ProblemSpec catalog(const std::string& id);
std::vector<std::string> catalog_ids();

/// The nonlinear parametric problem at parameter p (data manufactured at p).
ProblemSpec parametric_instance(const ProblemSpec& spec, double p);

/// Strong-form residual of the exact solution at x (component c): N(u) - f.
double manufactured_residual(const ProblemSpec& spec, Point x, int c = 0);

/// Elliptic problem with manufactured source for a given exact solution.
ProblemSpec manufactured_elliptic(std::string id, fem::Domain domain, EllipticCoefficients coeffs, ScalarField exact);

/// Coefficients of the variable-coefficient elliptic benchmark.
EllipticCoefficients benchmark_coefficients();

/// Sampled well-posedness check: min mu and min (sigma - div(beta)/2) over points.
struct WellPosedness {
    double min_mu;
    double min_reaction;
};
WellPosedness sample_well_posedness(const ProblemSpec& spec, int samples = 1000);

/// Halton points (bases 2, 3) strictly inside the domain, first `skip` dropped.
std::vector<Point> quasi_random_points(const fem::Domain& domain, int count, int skip = 20);

/// Externally computed reference solution: a mesh plus P1 nodal values.
///
/// The values file holds lines "x y v1 [v2]" matched to mesh vertices by
/// coordinates; '#' starts a comment.
class ReferenceSolution {
public:
    static ReferenceSolution read(const std::string& mesh_path, const std::string& values_path);
    ReferenceSolution(fem::TriMesh mesh, std::vector<Eigen::VectorXd> nodal);

    int components() const { return static_cast<int>(fields_.size()); }
    fem::SampledField field(int c) const;
    const fem::TriMesh& mesh() const { return *mesh_; }

private:
    std::shared_ptr<fem::TriMesh> mesh_;
    std::shared_ptr<fem::LagrangeSpace> space_;
    std::vector<fem::TrialFunction> fields_;
};

}  // namespace pinnbc::problems
