#pragma once

#include <memory>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "pinnbc/adf.hpp"
#include "pinnbc/lagrange.hpp"
#include "pinnbc/mesh.hpp"
#include "pinnbc/mlp.hpp"
#include "pinnbc/problems.hpp"

namespace pinnbc::residuals {

using problems::ProblemSpec;

// ---------------------------------------------------------------------------
// Boundary-condition methods

struct Penalty {
    double lambda = 1.0;
};
struct ExactNormalized {
    int m = 1;
};
struct ExactProduct {};
struct Nitsche {
    double gamma = 1.0;
    /// Adds the boundary flux term -int (Q(w).n) v, which makes the scheme consistent.
    bool flux_term = true;
};

using BcMethod = std::variant<Penalty, ExactNormalized, ExactProduct, Nitsche>;

/// "ma", "mb", "mc", "md".
std::string method_code(const BcMethod& m);
/// Human-readable label with parameters, e.g. "M_A(lambda=1000)".
std::string method_label(const BcMethod& m);
bool is_exact(const BcMethod& m);
/// Throws ConfigError on lambda <= 0, m outside {1, 2}, gamma <= 0.
void validate(const BcMethod& m);

// ---------------------------------------------------------------------------
// B-layer

/// ADF of the Dirichlet boundary for an exact-BC method.
adf::AdfField make_adf(const ProblemSpec& spec, const BcMethod& method);

/// Bw = gbar + phi * w per component.
class BLayer {
public:
    BLayer(adf::AdfField phi, std::vector<adf::TransfiniteExtension> gbar);
    BLayer(const ProblemSpec& spec, const BcMethod& method);

    const adf::AdfField& phi() const { return phi_; }
    const adf::TransfiniteExtension& gbar(int c) const { return gbar_.at(c); }
    int components() const { return static_cast<int>(gbar_.size()); }

    double apply(Point x, double w, int c = 0) const;
    Jet2 apply(Point x, const Jet2& w, int c = 0) const;

private:
    adf::AdfField phi_;
    std::vector<adf::TransfiniteExtension> gbar_;
};

/// Network wrapped by a B-layer: value and input derivatives of Bw at x.
/// `extra_inputs` are appended after (x, y), e.g. the parameter p.
Jet2 apply_b_layer(const BLayer& layer, const nn::Architecture& arch, const nn::WeightVector& w, Point x,
                   int c = 0, const std::vector<double>& extra_inputs = {});

/// Seeds of (value, d/dx, d/dy, xx, xy, yy) on Bw pulled back to seeds on w.
void b_layer_pullback(const Jet2& phi, const double* seeds_b, double* seeds_w);

// ---------------------------------------------------------------------------
// Pointwise residual plugins

/// Strong and weak residual densities of one problem family.
///
/// Strong: per component the variables are (u, ux, uy, uxx, uxy, uyy) and the
/// output is the PINN residual. Weak: per component the variables are
/// (u, ux, uy) and the outputs (S, Qx, Qy) define the residual
/// int S v + Q . grad v. Jacobians are row-major (outputs x variables).
class ResidualPlugin {
public:
    virtual ~ResidualPlugin() = default;
    virtual int components() const = 0;
    /// Highest input derivative order used by the strong form.
    virtual int strong_order() const { return 2; }
    virtual void strong(Point x, const double* vars, double* out, double* jac) const = 0;
    virtual void weak(Point x, const double* vars, double* out, double* jac) const = 0;
    /// Neumann datum on non-Dirichlet boundary edges.
    virtual double neumann(Point, int) const { return 0.0; }
    virtual bool has_neumann() const { return false; }
};

std::unique_ptr<ResidualPlugin> make_plugin(const ProblemSpec& spec);

// ---------------------------------------------------------------------------
// Interpolated VPINN discretization

struct VpinnOptions {
    int k_int = 4;
    int k_test = 1;
    int q = 3;
    /// Red refinements from T_H to T_h; 0 picks ceil(log2(k_int / k_test)), at least 1.
    int fine_refinements = 0;

    void validate() const;
    int refinements() const;
};

/// Coarse mesh T_H with U_H, nested fine mesh T_h with V_h, and the test index set.
class VpinnDiscretization {
public:
    /// `enlarged` keeps boundary-supported test functions (Nitsche).
    VpinnDiscretization(const ProblemSpec& spec, const fem::TriMesh& coarse, const VpinnOptions& opts,
                        bool enlarged);

    const VpinnOptions& options() const { return opts_; }
    const fem::NestedMeshPair& pair() const { return *pair_; }
    const fem::LagrangeSpace& trial() const { return *trial_; }
    const fem::LagrangeSpace& test() const { return *test_; }
    bool enlarged() const { return enlarged_; }
    /// Test dofs in I_h.
    const std::vector<int>& test_dofs() const { return test_dofs_; }
    /// Row of test dof i, or -1 when excluded.
    int row_of(int test_dof) const { return row_of_[test_dof]; }
    /// Trial dofs on Gamma_D (interpolation nodes on the Dirichlet boundary).
    const std::vector<int>& trial_dirichlet_dofs() const { return trial_dirichlet_; }
    std::vector<Point> trial_dirichlet_points() const;

    struct DirichletEdge {
        std::size_t element;  // fine element
        Point a, b;
        Point normal;  // outward unit normal
    };
    const std::vector<DirichletEdge>& dirichlet_edges() const { return dirichlet_edges_; }
    struct NeumannEdge {
        std::size_t element;
        Point a, b;
    };
    const std::vector<NeumannEdge>& neumann_edges() const { return neumann_edges_; }

private:
    VpinnOptions opts_;
    bool enlarged_;
    std::unique_ptr<fem::NestedMeshPair> pair_;
    std::unique_ptr<fem::LagrangeSpace> trial_;
    std::unique_ptr<fem::LagrangeSpace> test_;
    std::vector<int> test_dofs_;
    std::vector<int> row_of_;
    std::vector<int> trial_dirichlet_;
    std::vector<DirichletEdge> dirichlet_edges_;
    std::vector<NeumannEdge> neumann_edges_;
};

/// Residual vector r = J c + r0 of an affine problem.
struct AffineForm {
    Eigen::SparseMatrix<double> J;
    Eigen::VectorXd r0;
};

/// Weak residuals r_{h,i} of a trial coefficient vector (component-major,
/// `components` blocks of size dim U_H) under a boundary-condition method.
class VpinnResiduals {
public:
    VpinnResiduals(const ProblemSpec& spec, const VpinnDiscretization& disc, BcMethod method);

    const ProblemSpec& spec() const { return spec_; }
    const VpinnDiscretization& discretization() const { return *disc_; }
    const BcMethod& method() const { return method_; }
    const ResidualPlugin& plugin() const { return *plugin_; }
    int components() const { return plugin_->components(); }
    Eigen::Index num_rows() const;
    Eigen::Index num_coefficients() const;

    /// Direct quadrature loop at c; also the Jacobian dr/dc when requested.
    Eigen::VectorXd evaluate(const Eigen::VectorXd& c, Eigen::SparseMatrix<double>* jac = nullptr) const;
    /// Matrix-vector form; only for affine problems. Cached after the first call.
    const AffineForm& assembled() const;
    Eigen::VectorXd evaluate_assembled(const Eigen::VectorXd& c) const;

    /// Nitsche symmetric and penalty terms alone (zero when w = g on Gamma_D).
    Eigen::VectorXd nitsche_added_terms(const Eigen::VectorXd& c) const;

    /// Sum of squared residuals plus the penalty term.
    double loss(const Eigen::VectorXd& c) const;
    /// lambda * sum over Dirichlet trial dofs of (c_j - g(x_j))^2; 0 for other methods.
    double penalty_term(const Eigen::VectorXd& c) const;

    /// Boundary datum at the Dirichlet trial dofs, per component.
    const std::vector<Eigen::VectorXd>& dirichlet_values() const { return g_at_dofs_; }

    /// Rows as "row,component,test_dof,x,y,residual".
    void write_csv(const std::string& path, const Eigen::VectorXd& r) const;

private:
    void accumulate(const Eigen::VectorXd& c, Eigen::VectorXd& r, std::vector<Eigen::Triplet<double>>* trip,
                    bool volume, bool nitsche_added, bool nitsche_flux) const;

    ProblemSpec spec_;
    const VpinnDiscretization* disc_;
    BcMethod method_;
    std::unique_ptr<ResidualPlugin> plugin_;
    std::vector<Eigen::VectorXd> g_at_dofs_;
    mutable std::unique_ptr<AffineForm> affine_;
};

/// Affine map from network values at trial dofs to trial coefficients:
/// c = offset + scale .* N. Exact-BC methods interpolate Bw (scale = phi at
/// the dof, offset = gbar); the other methods use N directly.
struct TrialMap {
    Eigen::VectorXd offset;
    Eigen::VectorXd scale;
};
TrialMap make_trial_map(const ProblemSpec& spec, const fem::LagrangeSpace& space, const BcMethod& method);

/// Trial coefficients I_H(u^NN) or I_H(B u^NN) for a network.
Eigen::VectorXd interpolate_network(const TrialMap& map, const fem::LagrangeSpace& space, const nn::Architecture& arch,
                                    const nn::WeightVector& w, const std::vector<double>& extra_inputs = {});

// ---------------------------------------------------------------------------
// Loss programs

/// Loss of an interpolated VPINN, summed over problem instances (one per
/// training parameter value for the parametric problem).
class VpinnProgram : public nn::ScalarProgram {
public:
    VpinnProgram(std::vector<ProblemSpec> instances, const VpinnDiscretization& disc, BcMethod method,
                 nn::Architecture arch, double lambda_reg = nn::kDefaultVpinnRegularization);

    double evaluate(const nn::WeightVector& w, Eigen::VectorXd* grad) const override;

    const VpinnResiduals& residuals(std::size_t i = 0) const { return *models_.at(i); }
    const TrialMap& trial_map(std::size_t i = 0) const { return maps_.at(i); }
    std::size_t instances() const { return models_.size(); }
    /// Trial function of instance i for weights w.
    fem::TrialFunction trial(const nn::WeightVector& w, std::size_t i = 0) const;

private:
    std::vector<std::unique_ptr<VpinnResiduals>> models_;
    std::vector<TrialMap> maps_;
    std::vector<double> params_;
    const VpinnDiscretization* disc_;
    BcMethod method_;
    nn::Architecture arch_;
    double lambda_reg_;
    Eigen::MatrixXd inputs_;
    mutable nn::JetBatch batch_;
};

/// VPINN without interpolation: weak residuals of the network output (after
/// the B-layer for exact methods) integrated on T_h with the same test
/// functions. Penalty control points are the Dirichlet trial nodes. Nitsche is
/// rejected.
class DirectVpinnProgram : public nn::ScalarProgram {
public:
    DirectVpinnProgram(std::vector<ProblemSpec> instances, const VpinnDiscretization& disc, BcMethod method,
                       nn::Architecture arch, double lambda_reg = nn::kDefaultVpinnRegularization);
    double evaluate(const nn::WeightVector& w, Eigen::VectorXd* grad) const override;
    /// Residual vector of instance i (component-major, as VpinnResiduals).
    Eigen::VectorXd residuals(const nn::WeightVector& w, std::size_t i = 0) const;
    fem::SampledField solution(const nn::WeightVector& w, int c = 0, std::size_t i = 0) const;

private:
    double run(const nn::WeightVector& w, Eigen::VectorXd* grad, std::vector<Eigen::VectorXd>* res) const;

    std::vector<ProblemSpec> specs_;
    std::vector<std::unique_ptr<ResidualPlugin>> plugins_;
    std::vector<std::unique_ptr<BLayer>> layers_;
    const VpinnDiscretization* disc_;
    BcMethod method_;
    nn::Architecture arch_;
    double lambda_reg_;
    int ncomp_;
    std::vector<Point> qx_;
    std::vector<double> qw_;
    std::vector<std::size_t> qe_;
    std::vector<double> tab_;  // [k][a][value, dx, dy]
    std::vector<Jet2> phi_;
    std::vector<std::vector<std::vector<Jet2>>> gbar_;  // [instance][comp][qp]
    std::vector<std::vector<Eigen::VectorXd>> g_boundary_;
    std::vector<Point> boundary_;
    Eigen::MatrixXd x_interior_;
    Eigen::MatrixXd x_boundary_;
    mutable nn::JetBatch batch_;
    mutable nn::JetBatch boundary_batch_;
};

enum class Placement { MeshNodes, UniformDraw };

struct PinnPoints {
    std::vector<Point> interior;
    std::vector<Point> boundary;  // penalty control points on Gamma_D
};

/// N_I interior collocation points and about sqrt(dim U_H) control points.
/// MeshNodes uses the interior interpolation nodes of `space`; UniformDraw
/// draws dim(U_H) seeded uniform points. With an ADF, points closer to a
/// vertex than its exclusion radius are skipped.
PinnPoints pinn_points(const ProblemSpec& spec, const fem::LagrangeSpace& space, Placement placement,
                       std::uint64_t seed, const adf::AdfField* exclusion = nullptr);

/// Strong-form residuals of a network at collocation points.
class PinnProgram : public nn::ScalarProgram {
public:
    /// Nitsche is rejected. Exact-BC methods reject points in the vertex-exclusion zone.
    PinnProgram(std::vector<ProblemSpec> instances, PinnPoints points, BcMethod method, nn::Architecture arch,
                double lambda_reg = nn::kDefaultPinnRegularization);

    double evaluate(const nn::WeightVector& w, Eigen::VectorXd* grad) const override;

    /// Residual vector (instance-major) at w.
    Eigen::VectorXd residuals(const nn::WeightVector& w) const;
    const PinnPoints& points() const { return points_; }
    /// Network output (after the B-layer for exact methods) of instance i.
    fem::SampledField solution(const nn::WeightVector& w, int c = 0, std::size_t i = 0) const;

private:
    double run(const nn::WeightVector& w, Eigen::VectorXd* grad, Eigen::VectorXd* res) const;

    std::vector<ProblemSpec> specs_;
    std::vector<std::unique_ptr<ResidualPlugin>> plugins_;
    std::vector<std::unique_ptr<BLayer>> layers_;
    std::vector<double> params_;
    PinnPoints points_;
    BcMethod method_;
    nn::Architecture arch_;
    double lambda_reg_;
    int order_;
    int ncomp_;
    // B-layer jets at interior points: [instance][comp][point] for gbar, [point] for phi.
    std::vector<Jet2> phi_;
    std::vector<std::vector<std::vector<Jet2>>> gbar_;
    std::vector<std::vector<Eigen::VectorXd>> g_boundary_;
    Eigen::MatrixXd x_interior_;
    Eigen::MatrixXd x_boundary_;
    mutable nn::JetBatch batch_;
    mutable nn::JetBatch boundary_batch_;
};

}  // namespace pinnbc::residuals
