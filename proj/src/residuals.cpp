#include "pinnbc/residuals.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <unsupported/Eigen/AutoDiff>

#include "pinnbc/errors.hpp"
#include "pinnbc/quadrature.hpp"

namespace pinnbc::residuals {

using problems::Family;

// ---------------------------------------------------------------------------
// Methods

std::string method_code(const BcMethod& m) {
    static const char* codes[] = {"ma", "mb", "mc", "md"};
    return codes[m.index()];
}

std::string method_label(const BcMethod& m) {
    std::ostringstream s;
    std::visit(
        [&](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, Penalty>) s << "M_A(lambda=" << v.lambda << ")";
            if constexpr (std::is_same_v<T, ExactNormalized>) s << "M_B(m=" << v.m << ")";
            if constexpr (std::is_same_v<T, ExactProduct>) s << "M_C";
            if constexpr (std::is_same_v<T, Nitsche>) s << "M_D(gamma=" << v.gamma << ")";
        },
        m);
    return s.str();
}

bool is_exact(const BcMethod& m) {
    return std::holds_alternative<ExactNormalized>(m) || std::holds_alternative<ExactProduct>(m);
}

void validate(const BcMethod& m) {
    if (const auto* p = std::get_if<Penalty>(&m); p && !(p->lambda > 0))
        throw ConfigError("penalty lambda must be > 0");
    if (const auto* n = std::get_if<ExactNormalized>(&m); n && n->m != 1 && n->m != 2)
        throw ConfigError("normalization order m must be 1 or 2");
    if (const auto* d = std::get_if<Nitsche>(&m); d && !(d->gamma > 0))
        throw ConfigError("Nitsche gamma must be > 0");
}

// ---------------------------------------------------------------------------
// B-layer

adf::AdfField make_adf(const ProblemSpec& spec, const BcMethod& method) {
    if (!is_exact(method)) throw ConfigError("ADF requested for a non-exact method");
    if (!spec.custom_adf_pieces.empty()) {
        return adf::AdfField(spec.custom_adf_pieces, adf::Product{}, spec.boundary.dirichlet_vertices(),
                             1e-2 * spec.boundary.shortest_dirichlet_length());
    }
    if (const auto* n = std::get_if<ExactNormalized>(&method)) return adf::AdfField(spec.boundary, adf::Normalized{n->m});
    return adf::AdfField(spec.boundary, adf::Product{});
}

namespace {

std::vector<adf::TransfiniteExtension> extensions(const ProblemSpec& spec) {
    std::vector<adf::TransfiniteExtension> out;
    for (int c = 0; c < spec.components(); ++c) out.emplace_back(spec.boundary_for(c));
    return out;
}

}  // namespace

BLayer::BLayer(adf::AdfField phi, std::vector<adf::TransfiniteExtension> gbar)
    : phi_(std::move(phi)), gbar_(std::move(gbar)) {}

BLayer::BLayer(const ProblemSpec& spec, const BcMethod& method) : BLayer(make_adf(spec, method), extensions(spec)) {}

double BLayer::apply(Point x, double w, int c) const { return gbar_.at(c).value(x) + phi_.value(x) * w; }

Jet2 BLayer::apply(Point x, const Jet2& w, int c) const { return gbar_.at(c).jet(x) + phi_.jet(x) * w; }

Jet2 apply_b_layer(const BLayer& layer, const nn::Architecture& arch, const nn::WeightVector& w, Point x, int c,
                   const std::vector<double>& extra_inputs) {
    Eigen::VectorXd in(2 + extra_inputs.size());
    in << x.x, x.y;
    for (std::size_t i = 0; i < extra_inputs.size(); ++i) in[2 + i] = extra_inputs[i];
    const int order = arch.smooth() ? 2 : 1;
    const auto jet = nn::input_jet(arch, w, in, order);
    Jet2 n(jet.value[c], {jet.jacobian(c, 0), jet.jacobian(c, 1)}, {0.0, 0.0, 0.0});
    if (order == 2) n.h = {jet.hessian[c](0, 0), jet.hessian[c](0, 1), jet.hessian[c](1, 1)};
    return layer.apply(x, n, c);
}

void b_layer_pullback(const Jet2& phi, const double* sb, double* sn) {
    sn[0] = phi.v * sb[0] + phi.g[0] * sb[1] + phi.g[1] * sb[2] + phi.h[0] * sb[3] + phi.h[1] * sb[4] +
            phi.h[2] * sb[5];
    sn[1] = phi.v * sb[1] + 2.0 * phi.g[0] * sb[3] + phi.g[1] * sb[4];
    sn[2] = phi.v * sb[2] + phi.g[0] * sb[4] + 2.0 * phi.g[1] * sb[5];
    sn[3] = phi.v * sb[3];
    sn[4] = phi.v * sb[4];
    sn[5] = phi.v * sb[5];
}

// ---------------------------------------------------------------------------
// Plugins

namespace {

struct EllipticImpl {
    static constexpr int kComponents = 1;
    static constexpr int kStrongOrder = 2;
    problems::EllipticCoefficients c;
    bool nonlinear = false;  // sigma * sin(p u) u
    double p = 1.0;

    template <class T>
    T reaction(Point x, const T& u) const {
        using std::sin;
        if (nonlinear) return c.sigma(x) * sin(p * u) * u;
        return c.sigma(x) * u;
    }
    template <class T>
    void strong(Point x, const T* v, T* out) const {
        const Jet2 mu = c.mu.jet(x);
        out[0] = -(mu.v * (v[3] + v[5]) + mu.g[0] * v[1] + mu.g[1] * v[2]) + c.beta.x(x) * v[1] + c.beta.y(x) * v[2] +
                 reaction(x, v[0]) - c.f(x);
    }
    template <class T>
    void weak(Point x, const T* v, T* out) const {
        const double mu = c.mu(x);
        out[0] = c.f(x) - c.beta.x(x) * v[1] - c.beta.y(x) * v[2] - reaction(x, v[0]);
        out[1] = -mu * v[1];
        out[2] = -mu * v[2];
    }
};

struct ElasticityImpl {
    static constexpr int kComponents = 2;
    static constexpr int kStrongOrder = 2;
    double mu, lambda;
    VectorField f;

    template <class T>
    void strong(Point x, const T* v, T* out) const {
        // v: (u, ux, uy, uxx, uxy, uyy) for each displacement component.
        const T* a = v;
        const T* b = v + 6;
        out[0] = (2 * mu + lambda) * a[3] + mu * a[5] + (lambda + mu) * b[4] + f.x(x);
        out[1] = (lambda + mu) * a[4] + mu * b[3] + (2 * mu + lambda) * b[5] + f.y(x);
    }
    template <class T>
    void weak(Point x, const T* v, T* out) const {
        const T exx = v[1], eyy = v[5];
        const T exy = 0.5 * (v[2] + v[4]);
        const T tr = exx + eyy;
        out[0] = T(f.x(x));
        out[1] = -(2 * mu * exx + lambda * tr);
        out[2] = -(2 * mu * exy);
        out[3] = T(f.y(x));
        out[4] = -(2 * mu * exy);
        out[5] = -(2 * mu * eyy + lambda * tr);
    }
};

struct EikonalImpl {
    static constexpr int kComponents = 1;
    static constexpr int kStrongOrder = 2;
    double eps;
    ScalarField f;

    template <class T>
    static T grad_norm(const T& ux, const T& uy) {
        using std::sqrt;
        constexpr double delta = 1e-12;
        return sqrt(ux * ux + uy * uy + delta * delta) - delta;
    }
    template <class T>
    void strong(Point x, const T* v, T* out) const {
        out[0] = -eps * (v[3] + v[5]) + grad_norm(v[1], v[2]) - f(x);
    }
    template <class T>
    void weak(Point x, const T* v, T* out) const {
        out[0] = f(x) - grad_norm(v[1], v[2]);
        out[1] = -eps * v[1];
        out[2] = -eps * v[2];
    }
};

struct ConvectionImpl {
    static constexpr int kComponents = 1;
    static constexpr int kStrongOrder = 1;
    double beta;

    template <class T>
    void strong(Point, const T* v, T* out) const {
        out[0] = v[2] + beta * v[1];
    }
    template <class T>
    void weak(Point, const T* v, T* out) const {
        out[0] = -(v[2] + beta * v[1]);
        out[1] = T(0.0);
        out[2] = T(0.0);
    }
};

template <class Impl>
class AutoPlugin final : public ResidualPlugin {
public:
    static constexpr int N = Impl::kComponents;

    AutoPlugin(Impl impl, ScalarField psi = {}) : impl_(std::move(impl)), psi_(std::move(psi)) {}

    int components() const override { return N; }
    int strong_order() const override { return Impl::kStrongOrder; }

    void strong(Point x, const double* vars, double* out, double* jac) const override {
        if (!jac) {
            impl_.strong(x, vars, out);
            return;
        }
        run<6 * N, N>(vars, out, jac, [&](const auto* v, auto* o) { impl_.strong(x, v, o); });
    }
    void weak(Point x, const double* vars, double* out, double* jac) const override {
        if (!jac) {
            impl_.weak(x, vars, out);
            return;
        }
        run<3 * N, 3 * N>(vars, out, jac, [&](const auto* v, auto* o) { impl_.weak(x, v, o); });
    }
    double neumann(Point x, int) const override { return psi_ ? psi_(x) : 0.0; }
    bool has_neumann() const override { return static_cast<bool>(psi_); }

private:
    template <int NV, int NO, class F>
    static void run(const double* vars, double* out, double* jac, F&& f) {
        using AD = Eigen::AutoDiffScalar<Eigen::Matrix<double, NV, 1>>;
        std::array<AD, NV> v;
        for (int i = 0; i < NV; ++i) v[i] = AD(vars[i], NV, i);
        std::array<AD, NO> o;
        f(v.data(), o.data());
        for (int r = 0; r < NO; ++r) {
            out[r] = o[r].value();
            for (int j = 0; j < NV; ++j) jac[r * NV + j] = o[r].derivatives()[j];
        }
    }

    Impl impl_;
    ScalarField psi_;
};

}  // namespace

std::unique_ptr<ResidualPlugin> make_plugin(const ProblemSpec& spec) {
    const bool has_neumann_part = std::find(spec.boundary.dirichlet.begin(), spec.boundary.dirichlet.end(), false) !=
                                  spec.boundary.dirichlet.end();
    switch (spec.family) {
        case Family::Elliptic:
        case Family::ParametricNonlinear: {
            EllipticImpl impl{spec.coeffs, spec.family == Family::ParametricNonlinear, spec.p};
            return std::make_unique<AutoPlugin<EllipticImpl>>(impl, has_neumann_part ? spec.coeffs.psi : ScalarField{});
        }
        case Family::Elasticity:
            return std::make_unique<AutoPlugin<ElasticityImpl>>(
                ElasticityImpl{spec.lame_mu(), spec.lame_lambda(), spec.body_force});
        case Family::Eikonal:
            return std::make_unique<AutoPlugin<EikonalImpl>>(EikonalImpl{spec.epsilon, spec.coeffs.f});
        case Family::Convection:
            return std::make_unique<AutoPlugin<ConvectionImpl>>(ConvectionImpl{spec.convection_speed});
    }
    throw ConfigError("no residual plugin for " + problems::to_string(spec.family));
}

// ---------------------------------------------------------------------------
// Discretization

void VpinnOptions::validate() const {
    if (k_int < 1 || k_int > 10) throw ConfigError("k_int must lie in [1, 10]");
    if (k_test < 1 || k_test > 10) throw ConfigError("k_test must lie in [1, 10]");
    if (q < 1) throw ConfigError("quadrature order q must be >= 1");
    if (fine_refinements < 0) throw ConfigError("fine_refinements must be >= 0");
}

int VpinnOptions::refinements() const {
    if (fine_refinements > 0) return fine_refinements;
    const double ratio = static_cast<double>(k_int) / k_test;
    return std::max(1, static_cast<int>(std::ceil(std::log2(ratio) - 1e-12)));
}

VpinnDiscretization::VpinnDiscretization(const ProblemSpec& spec, const fem::TriMesh& coarse, const VpinnOptions& opts,
                                         bool enlarged)
    : opts_(opts), enlarged_(enlarged) {
    opts_.validate();
    pair_ = std::make_unique<fem::NestedMeshPair>(fem::refine_to_pair(coarse, opts_.refinements()));
    trial_ = std::make_unique<fem::LagrangeSpace>(pair_->coarse, opts_.k_int, &spec.boundary);
    test_ = std::make_unique<fem::LagrangeSpace>(pair_->fine, opts_.k_test, &spec.boundary);

    row_of_.assign(test_->dim(), -1);
    const auto& mask = test_->boundary_dof_mask();
    for (std::size_t i = 0; i < test_->dim(); ++i) {
        if (enlarged_ || !mask[i]) {
            row_of_[i] = static_cast<int>(test_dofs_.size());
            test_dofs_.push_back(static_cast<int>(i));
        }
    }
    trial_dirichlet_ = trial_->boundary_dofs();

    const auto& fine = pair_->fine;
    std::map<std::pair<int, int>, std::size_t> owner;
    for (std::size_t e = 0; e < fine.num_elements(); ++e) {
        const auto& t = fine.elements[e];
        for (int k = 0; k < 3; ++k) {
            const int a = t[k], b = t[(k + 1) % 3];
            owner[{std::min(a, b), std::max(a, b)}] = e;
        }
    }
    for (const auto& be : fine.boundary_edges) {
        const std::size_t e = owner.at({std::min(be.v0, be.v1), std::max(be.v0, be.v1)});
        const Point a = fine.vertices[be.v0], b = fine.vertices[be.v1];
        if (be.segment >= 0 && spec.boundary.dirichlet.at(be.segment)) {
            const Point t = b - a;
            Point n{t.y / norm(t), -t.x / norm(t)};
            if (dot(n, fine.barycenter(e) - 0.5 * (a + b)) > 0) n = -1.0 * n;
            dirichlet_edges_.push_back({e, a, b, n});
        } else {
            neumann_edges_.push_back({e, a, b});
        }
    }
}

std::vector<Point> VpinnDiscretization::trial_dirichlet_points() const {
    std::vector<Point> pts;
    for (int j : trial_dirichlet_) pts.push_back(trial_->dof_points()[j]);
    return pts;
}

// ---------------------------------------------------------------------------
// VPINN residuals

VpinnResiduals::VpinnResiduals(const ProblemSpec& spec, const VpinnDiscretization& disc, BcMethod method)
    : spec_(spec), disc_(&disc), method_(method), plugin_(make_plugin(spec)) {
    validate(method_);
    const bool nitsche = std::holds_alternative<Nitsche>(method_);
    if (nitsche != disc.enlarged())
        throw ConfigError(nitsche ? "Nitsche requires the enlarged test space"
                                  : "the enlarged test space is only used with Nitsche");
    if (plugin_->components() != spec.components()) throw ConfigError("component count mismatch in " + spec.id);
    for (int c = 0; c < components(); ++c) {
        Eigen::VectorXd g(disc.trial_dirichlet_dofs().size());
        const auto pts = disc.trial_dirichlet_points();
        for (std::size_t k = 0; k < pts.size(); ++k) g[static_cast<Eigen::Index>(k)] = spec.g[c](pts[k]);
        g_at_dofs_.push_back(std::move(g));
    }
}

Eigen::Index VpinnResiduals::num_rows() const {
    return static_cast<Eigen::Index>(components() * disc_->test_dofs().size());
}

Eigen::Index VpinnResiduals::num_coefficients() const {
    return static_cast<Eigen::Index>(components() * disc_->trial().dim());
}

void VpinnResiduals::accumulate(const Eigen::VectorXd& coef, Eigen::VectorXd& r,
                                std::vector<Eigen::Triplet<double>>* trip, bool volume, bool nitsche_added,
                                bool nitsche_flux) const {
    const auto& trial = disc_->trial();
    const auto& test = disc_->test();
    const auto& pair = disc_->pair();
    const int n = components();
    const int nv = 3 * n;
    const int nbT = trial.basis().size(), nbt = test.basis().size();
    const auto dimU = static_cast<Eigen::Index>(trial.dim());
    const auto nI = static_cast<Eigen::Index>(disc_->test_dofs().size());
    if (coef.size() != n * dimU) throw ConfigError("trial coefficient vector has the wrong size");

    Eigen::MatrixXd T(nbt, 3), B(nbT, 3);
    Eigen::VectorXd re(n * nbt);
    Eigen::MatrixXd Ke(n * nbt, n * nbT);
    std::array<double, 6> vars{}, out{};
    std::array<double, 36> jac{};

    auto eval_at = [&](std::size_t e, std::size_t E, Point x) {
        test.eval_element(e, x, T.col(0).data(), T.col(1).data(), T.col(2).data());
        trial.eval_element(E, x, B.col(0).data(), B.col(1).data(), B.col(2).data());
        const auto Td = trial.element_dofs(E);
        for (int c = 0; c < n; ++c) {
            for (int j = 0; j < 3; ++j) {
                double s = 0.0;
                for (int b = 0; b < nbT; ++b) s += coef[c * dimU + Td[b]] * B(b, j);
                vars[3 * c + j] = s;
            }
        }
    };
    auto scatter = [&](std::size_t e, std::size_t E) {
        const auto td = test.element_dofs(e);
        const auto Td = trial.element_dofs(E);
        for (int c = 0; c < n; ++c) {
            for (int a = 0; a < nbt; ++a) {
                const int row = disc_->row_of(td[a]);
                if (row < 0) continue;
                const Eigen::Index gr = c * nI + row;
                r[gr] += re[c * nbt + a];
                if (!trip) continue;
                for (int c2 = 0; c2 < n; ++c2) {
                    for (int b = 0; b < nbT; ++b) {
                        const double v = Ke(c * nbt + a, c2 * nbT + b);
                        if (v != 0.0) trip->emplace_back(static_cast<int>(gr), static_cast<int>(c2 * dimU + Td[b]), v);
                    }
                }
            }
        }
    };

    if (volume) {
        const auto rule = fem::triangle_rule_at_least(disc_->options().q);
        for (std::size_t e = 0; e < pair.fine.num_elements(); ++e) {
            const auto E = static_cast<std::size_t>(pair.parent[e]);
            const double scale = 2.0 * pair.fine.area(e);
            re.setZero();
            if (trip) Ke.setZero();
            for (std::size_t k = 0; k < rule.size(); ++k) {
                const Point x = pair.fine.from_reference(e, rule.points[k]);
                const double wt = rule.weights[k] * scale;
                eval_at(e, E, x);
                plugin_->weak(x, vars.data(), out.data(), trip ? jac.data() : nullptr);
                for (int c = 0; c < n; ++c) {
                    re.segment(c * nbt, nbt) += wt * (out[3 * c] * T.col(0) + out[3 * c + 1] * T.col(1) +
                                                      out[3 * c + 2] * T.col(2));
                }
                if (!trip) continue;
                for (int c = 0; c < n; ++c) {
                    for (int kk = 0; kk < 3; ++kk) {
                        for (int c2 = 0; c2 < n; ++c2) {
                            for (int j = 0; j < 3; ++j) {
                                const double d = jac[(3 * c + kk) * nv + 3 * c2 + j];
                                if (d == 0.0) continue;
                                Ke.block(c * nbt, c2 * nbT, nbt, nbT).noalias() +=
                                    (wt * d) * T.col(kk) * B.col(j).transpose();
                            }
                        }
                    }
                }
            }
            scatter(e, E);
        }

        if (plugin_->has_neumann()) {
            const auto g1 = fem::gauss_for_order(disc_->options().q);
            for (const auto& edge : disc_->neumann_edges()) {
                const auto E = static_cast<std::size_t>(pair.parent[edge.element]);
                const double half = 0.5 * norm(edge.b - edge.a);
                re.setZero();
                if (trip) Ke.setZero();
                for (std::size_t k = 0; k < g1.points.size(); ++k) {
                    const Point x = edge.a + 0.5 * (1.0 + g1.points[k]) * (edge.b - edge.a);
                    eval_at(edge.element, E, x);
                    for (int c = 0; c < n; ++c)
                        re.segment(c * nbt, nbt) += g1.weights[k] * half * plugin_->neumann(x, c) * T.col(0);
                }
                scatter(edge.element, E);
            }
        }
    }

    const auto* nitsche = std::get_if<Nitsche>(&method_);
    if (!nitsche || !(nitsche_added || nitsche_flux)) return;
    const double h = pair.fine.meshsize;
    const double pen = nitsche->gamma / h;
    const auto g1 = fem::gauss_for_order(disc_->options().q);
    for (const auto& edge : disc_->dirichlet_edges()) {
        const auto E = static_cast<std::size_t>(pair.parent[edge.element]);
        const double half = 0.5 * norm(edge.b - edge.a);
        const Point nrm = edge.normal;
        re.setZero();
        if (trip) Ke.setZero();
        for (std::size_t k = 0; k < g1.points.size(); ++k) {
            const Point x = edge.a + 0.5 * (1.0 + g1.points[k]) * (edge.b - edge.a);
            const double wt = g1.weights[k] * half;
            eval_at(edge.element, E, x);
            const Eigen::VectorXd dn = nrm.x * T.col(1) + nrm.y * T.col(2);
            if (nitsche_added) {
                for (int c = 0; c < n; ++c) {
                    const double diff = vars[3 * c] - spec_.g[c](x);
                    re.segment(c * nbt, nbt) += wt * (diff * dn - pen * diff * T.col(0));
                    if (trip)
                        Ke.block(c * nbt, c * nbT, nbt, nbT).noalias() +=
                            wt * (dn - pen * T.col(0)) * B.col(0).transpose();
                }
            }
            if (nitsche_flux) {
                plugin_->weak(x, vars.data(), out.data(), trip ? jac.data() : nullptr);
                for (int c = 0; c < n; ++c) {
                    const double qn = out[3 * c + 1] * nrm.x + out[3 * c + 2] * nrm.y;
                    re.segment(c * nbt, nbt) -= wt * qn * T.col(0);
                    if (!trip) continue;
                    for (int c2 = 0; c2 < n; ++c2) {
                        for (int j = 0; j < 3; ++j) {
                            const double d = jac[(3 * c + 1) * nv + 3 * c2 + j] * nrm.x +
                                             jac[(3 * c + 2) * nv + 3 * c2 + j] * nrm.y;
                            if (d == 0.0) continue;
                            Ke.block(c * nbt, c2 * nbT, nbt, nbT).noalias() -=
                                (wt * d) * T.col(0) * B.col(j).transpose();
                        }
                    }
                }
            }
        }
        scatter(edge.element, E);
    }
}

Eigen::VectorXd VpinnResiduals::evaluate(const Eigen::VectorXd& c, Eigen::SparseMatrix<double>* jac) const {
    Eigen::VectorXd r = Eigen::VectorXd::Zero(num_rows());
    std::vector<Eigen::Triplet<double>> trip;
    const auto* nitsche = std::get_if<Nitsche>(&method_);
    accumulate(c, r, jac ? &trip : nullptr, true, nitsche != nullptr, nitsche && nitsche->flux_term);
    if (jac) {
        jac->resize(num_rows(), num_coefficients());
        jac->setFromTriplets(trip.begin(), trip.end());
    }
    return r;
}

const AffineForm& VpinnResiduals::assembled() const {
    if (!spec_.affine()) throw ConfigError("assembled residuals require a problem affine in the trial function");
    if (!affine_) {
        auto form = std::make_unique<AffineForm>();
        form->r0 = evaluate(Eigen::VectorXd::Zero(num_coefficients()), &form->J);
        affine_ = std::move(form);
    }
    return *affine_;
}

Eigen::VectorXd VpinnResiduals::evaluate_assembled(const Eigen::VectorXd& c) const {
    const auto& f = assembled();
    return f.J * c + f.r0;
}

Eigen::VectorXd VpinnResiduals::nitsche_added_terms(const Eigen::VectorXd& c) const {
    if (!std::holds_alternative<Nitsche>(method_)) throw ConfigError("Nitsche terms requested for " + method_label(method_));
    Eigen::VectorXd r = Eigen::VectorXd::Zero(num_rows());
    accumulate(c, r, nullptr, false, true, false);
    return r;
}

double VpinnResiduals::penalty_term(const Eigen::VectorXd& c) const {
    const auto* p = std::get_if<Penalty>(&method_);
    if (!p) return 0.0;
    const auto& dofs = disc_->trial_dirichlet_dofs();
    const auto dimU = static_cast<Eigen::Index>(disc_->trial().dim());
    double s = 0.0;
    for (int comp = 0; comp < components(); ++comp) {
        for (std::size_t k = 0; k < dofs.size(); ++k) {
            const double d = c[comp * dimU + dofs[k]] - g_at_dofs_[comp][static_cast<Eigen::Index>(k)];
            s += d * d;
        }
    }
    return p->lambda * s;
}

double VpinnResiduals::loss(const Eigen::VectorXd& c) const { return evaluate(c).squaredNorm() + penalty_term(c); }

void VpinnResiduals::write_csv(const std::string& path, const Eigen::VectorXd& r) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out.precision(17);
    out << "row,component,test_dof,x,y,residual\n";
    const auto& dofs = disc_->test_dofs();
    const auto& pts = disc_->test().dof_points();
    for (int c = 0; c < components(); ++c) {
        for (std::size_t k = 0; k < dofs.size(); ++k) {
            const auto row = static_cast<Eigen::Index>(c * dofs.size() + k);
            out << row << ',' << c << ',' << dofs[k] << ',' << pts[dofs[k]].x << ',' << pts[dofs[k]].y << ','
                << r[row] << '\n';
        }
    }
}

// ---------------------------------------------------------------------------
// Trial maps

TrialMap make_trial_map(const ProblemSpec& spec, const fem::LagrangeSpace& space, const BcMethod& method) {
    const int n = spec.components();
    const auto dim = static_cast<Eigen::Index>(space.dim());
    TrialMap m{Eigen::VectorXd::Zero(n * dim), Eigen::VectorXd::Ones(n * dim)};
    if (!is_exact(method)) return m;
    const BLayer layer(spec, method);
    const auto& pts = space.dof_points();
    const auto on_dirichlet = fem::dirichlet_dof_mask(space, spec.boundary);
    for (Eigen::Index j = 0; j < dim; ++j) {
        const double phi = on_dirichlet[static_cast<std::size_t>(j)] ? 0.0 : layer.phi().value(pts[j]);
        for (int c = 0; c < n; ++c) {
            m.scale[c * dim + j] = phi;
            m.offset[c * dim + j] = layer.gbar(c).value(pts[j]);
        }
    }
    return m;
}

namespace {

Eigen::MatrixXd network_inputs(const std::vector<Point>& pts, const std::vector<double>& extra) {
    Eigen::MatrixXd X(2 + extra.size(), pts.size());
    for (std::size_t j = 0; j < pts.size(); ++j) {
        X(0, j) = pts[j].x;
        X(1, j) = pts[j].y;
        for (std::size_t i = 0; i < extra.size(); ++i) X(2 + i, j) = extra[i];
    }
    return X;
}

void check_architecture(const nn::Architecture& arch, const ProblemSpec& spec) {
    arch.validate();
    if (arch.inputs() != spec.input_width())
        throw ConfigError("network needs " + std::to_string(spec.input_width()) + " inputs for " + spec.id);
    if (arch.outputs() != spec.components())
        throw ConfigError("network needs " + std::to_string(spec.components()) + " outputs for " + spec.id);
}

std::vector<double> extra_inputs(const ProblemSpec& spec) {
    return spec.parametric() ? std::vector<double>{spec.p} : std::vector<double>{};
}

}  // namespace

Eigen::VectorXd interpolate_network(const TrialMap& map, const fem::LagrangeSpace& space, const nn::Architecture& arch,
                                    const nn::WeightVector& w, const std::vector<double>& extra) {
    nn::JetBatch batch(arch, 0, {});
    batch.forward(w, network_inputs(space.dof_points(), extra));
    const auto dim = static_cast<Eigen::Index>(space.dim());
    Eigen::VectorXd c(map.offset.size());
    for (int comp = 0; comp < arch.outputs(); ++comp) {
        for (Eigen::Index j = 0; j < dim; ++j) {
            const Eigen::Index i = comp * dim + j;
            c[i] = map.offset[i] + map.scale[i] * batch.value()(comp, j);
        }
    }
    return c;
}

// ---------------------------------------------------------------------------
// VPINN program

VpinnProgram::VpinnProgram(std::vector<ProblemSpec> instances, const VpinnDiscretization& disc, BcMethod method,
                           nn::Architecture arch, double lambda_reg)
    : disc_(&disc), method_(method), arch_(std::move(arch)), lambda_reg_(lambda_reg), batch_(arch_, 0, {}) {
    if (instances.empty()) throw ConfigError("VPINN program needs at least one problem instance");
    if (lambda_reg_ < 0) throw ConfigError("regularization weight must be >= 0");
    const auto dim = static_cast<Eigen::Index>(disc.trial().dim());
    inputs_.resize(instances.front().input_width(), dim * static_cast<Eigen::Index>(instances.size()));
    for (std::size_t i = 0; i < instances.size(); ++i) {
        const auto& inst = instances[i];
        check_architecture(arch_, inst);
        models_.push_back(std::make_unique<VpinnResiduals>(inst, disc, method));
        maps_.push_back(make_trial_map(inst, disc.trial(), method));
        params_.push_back(inst.p);
        inputs_.middleCols(static_cast<Eigen::Index>(i) * dim, dim) =
            network_inputs(disc.trial().dof_points(), extra_inputs(inst));
        if (inst.affine()) models_.back()->assembled();
    }
}

double VpinnProgram::evaluate(const nn::WeightVector& w, Eigen::VectorXd* grad) const {
    batch_.forward(w, inputs_);
    const auto dim = static_cast<Eigen::Index>(disc_->trial().dim());
    const int n = arch_.outputs();
    nn::JetBatch::Seeds seeds;
    if (grad) seeds = batch_.zero_seeds();
    double loss = 0.0;
    Eigen::VectorXd c(n * dim);
    for (std::size_t i = 0; i < models_.size(); ++i) {
        const auto& model = *models_[i];
        const auto& map = maps_[i];
        const Eigen::Index col0 = static_cast<Eigen::Index>(i) * dim;
        for (int comp = 0; comp < n; ++comp)
            c.segment(comp * dim, dim) = map.offset.segment(comp * dim, dim) +
                                         map.scale.segment(comp * dim, dim).cwiseProduct(
                                             batch_.value().row(comp).segment(col0, dim).transpose());
        Eigen::VectorXd r;
        Eigen::SparseMatrix<double> J;
        const Eigen::SparseMatrix<double>* Jp = nullptr;
        if (model.spec().affine()) {
            const auto& form = model.assembled();
            r = form.J * c + form.r0;
            Jp = &form.J;
        } else {
            r = model.evaluate(c, grad ? &J : nullptr);
            Jp = &J;
        }
        loss += r.squaredNorm() + model.penalty_term(c);
        if (!grad) continue;
        Eigen::VectorXd gc = 2.0 * (Jp->transpose() * r);
        if (const auto* p = std::get_if<Penalty>(&method_)) {
            const auto& dofs = disc_->trial_dirichlet_dofs();
            for (int comp = 0; comp < n; ++comp)
                for (std::size_t k = 0; k < dofs.size(); ++k)
                    gc[comp * dim + dofs[k]] += 2.0 * p->lambda *
                        (c[comp * dim + dofs[k]] - model.dirichlet_values()[comp][static_cast<Eigen::Index>(k)]);
        }
        for (int comp = 0; comp < n; ++comp)
            seeds.value.row(comp).segment(col0, dim) =
                map.scale.segment(comp * dim, dim).cwiseProduct(gc.segment(comp * dim, dim)).transpose();
    }
    loss += nn::l2_penalty(w, lambda_reg_);
    if (grad) {
        grad->setZero(w.size());
        batch_.backward(seeds, *grad);
        *grad += 2.0 * lambda_reg_ * w;
    }
    return loss;
}

fem::TrialFunction VpinnProgram::trial(const nn::WeightVector& w, std::size_t i) const {
    const auto& spec = models_.at(i)->spec();
    return fem::TrialFunction(disc_->trial(), interpolate_network(maps_[i], disc_->trial(), arch_, w, extra_inputs(spec)),
                              spec.components());
}

// ---------------------------------------------------------------------------
// PINN

namespace {

bool on_domain_boundary(const fem::Domain& d, Point x) {
    for (const auto& s : d.segments())
        if (s.distance(x) < 1e-12) return true;
    return false;
}

std::vector<Point> random_dirichlet_points(const adf::PolygonalBoundary& b, int count, std::mt19937_64& rng) {
    const auto idx = b.dirichlet_indices();
    std::vector<double> cum;
    double total = 0.0;
    for (int i : idx) cum.push_back(total += b.segments[i].length());
    std::uniform_real_distribution<double> u(0.0, total);
    std::vector<Point> out;
    for (int k = 0; k < count; ++k) {
        const double s = u(rng);
        const auto it = std::lower_bound(cum.begin(), cum.end(), s);
        const std::size_t j = std::min<std::size_t>(it - cum.begin(), idx.size() - 1);
        const auto& seg = b.segments[idx[j]];
        const double t = (s - (cum[j] - seg.length())) / seg.length();
        out.push_back(seg.a() + t * (seg.b() - seg.a()));
    }
    return out;
}

}  // namespace

PinnPoints pinn_points(const ProblemSpec& spec, const fem::LagrangeSpace& space, Placement placement,
                       std::uint64_t seed, const adf::AdfField* exclusion) {
    PinnPoints pts;
    const int nb = std::max(1, static_cast<int>(std::lround(std::sqrt(static_cast<double>(space.dim())))));
    auto admissible = [&](Point x) {
        return spec.domain.contains(x) && !on_domain_boundary(spec.domain, x) && !(exclusion && exclusion->near_vertex(x));
    };
    if (placement == Placement::MeshNodes) {
        for (const Point x : space.dof_points())
            if (admissible(x)) pts.interior.push_back(x);
        pts.boundary = spec.boundary.sample_dirichlet(nb);
        return pts;
    }
    std::mt19937_64 rng(seed);
    const auto box = spec.domain.bounding_box();
    std::uniform_real_distribution<double> ux(box[0], box[1]), uy(box[2], box[3]);
    while (pts.interior.size() < space.dim()) {
        const Point x{ux(rng), uy(rng)};
        if (admissible(x)) pts.interior.push_back(x);
    }
    pts.boundary = random_dirichlet_points(spec.boundary, nb, rng);
    return pts;
}

PinnProgram::PinnProgram(std::vector<ProblemSpec> instances, PinnPoints points, BcMethod method,
                         nn::Architecture arch, double lambda_reg)
    : specs_(std::move(instances)),
      points_(std::move(points)),
      method_(method),
      arch_(std::move(arch)),
      lambda_reg_(lambda_reg),
      batch_(arch_, 0, {}),
      boundary_batch_(arch_, 0, {}) {
    validate(method_);
    if (std::holds_alternative<Nitsche>(method_)) throw ConfigError("Nitsche can be used only with VPINNs");
    if (specs_.empty()) throw ConfigError("PINN program needs at least one problem instance");
    if (points_.interior.empty()) throw ConfigError("PINN program needs collocation points");
    if (lambda_reg_ < 0) throw ConfigError("regularization weight must be >= 0");
    ncomp_ = specs_.front().components();
    order_ = 1;
    const auto P = static_cast<Eigen::Index>(points_.interior.size());
    const auto Pb = static_cast<Eigen::Index>(points_.boundary.size());
    const auto ni = static_cast<Eigen::Index>(specs_.size());
    x_interior_.resize(specs_.front().input_width(), P * ni);
    x_boundary_.resize(specs_.front().input_width(), Pb * ni);
    for (std::size_t i = 0; i < specs_.size(); ++i) {
        const auto& spec = specs_[i];
        check_architecture(arch_, spec);
        plugins_.push_back(make_plugin(spec));
        order_ = std::max(order_, plugins_.back()->strong_order());
        params_.push_back(spec.p);
        const auto extra = extra_inputs(spec);
        x_interior_.middleCols(static_cast<Eigen::Index>(i) * P, P) = network_inputs(points_.interior, extra);
        if (Pb > 0) x_boundary_.middleCols(static_cast<Eigen::Index>(i) * Pb, Pb) = network_inputs(points_.boundary, extra);
        std::vector<Eigen::VectorXd> gb;
        for (int c = 0; c < ncomp_; ++c) {
            Eigen::VectorXd g(Pb);
            for (Eigen::Index k = 0; k < Pb; ++k) g[k] = spec.g[c](points_.boundary[k]);
            gb.push_back(std::move(g));
        }
        g_boundary_.push_back(std::move(gb));
        if (is_exact(method_)) {
            layers_.push_back(std::make_unique<BLayer>(spec, method_));
            const auto& layer = *layers_.back();
            std::vector<std::vector<Jet2>> gj(ncomp_);
            for (const Point x : points_.interior) {
                if (layer.phi().near_vertex(x))
                    throw ConfigError("collocation point inside the vertex-exclusion zone of the ADF");
                for (int c = 0; c < ncomp_; ++c) gj[c].push_back(layer.gbar(c).jet(x));
            }
            if (i == 0)
                for (const Point x : points_.interior) phi_.push_back(layer.phi().jet(x));
            gbar_.push_back(std::move(gj));
        }
    }
    if (order_ == 2 && !arch_.smooth()) throw ConfigError("second input derivatives need a smooth activation");
    batch_ = nn::JetBatch(arch_, order_, {0, 1});
}

double PinnProgram::run(const nn::WeightVector& w, Eigen::VectorXd* grad, Eigen::VectorXd* res) const {
    batch_.forward(w, x_interior_);
    const auto P = static_cast<Eigen::Index>(points_.interior.size());
    const bool exact = is_exact(method_);
    const int n = ncomp_;
    const int nd = 2;
    nn::JetBatch::Seeds seeds;
    if (grad) seeds = batch_.zero_seeds();
    if (res) res->resize(P * static_cast<Eigen::Index>(specs_.size()) * n);
    std::array<double, 12> vars{}, sb{}, sn{};
    std::array<double, 2> out{};
    std::array<double, 24> jac{};
    double loss = 0.0;
    for (std::size_t i = 0; i < specs_.size(); ++i) {
        const auto& plugin = *plugins_[i];
        for (Eigen::Index k = 0; k < P; ++k) {
            const Eigen::Index col = static_cast<Eigen::Index>(i) * P + k;
            for (int c = 0; c < n; ++c) {
                Jet2 u(batch_.value()(c, col), {batch_.d(0)(c, col), batch_.d(1)(c, col)}, {0.0, 0.0, 0.0});
                if (order_ == 2) u.h = {batch_.e(0, 0)(c, col), batch_.e(0, 1)(c, col), batch_.e(1, 1)(c, col)};
                if (exact) u = gbar_[i][c][k] + phi_[k] * u;
                vars[6 * c] = u.v;
                vars[6 * c + 1] = u.g[0];
                vars[6 * c + 2] = u.g[1];
                vars[6 * c + 3] = u.h[0];
                vars[6 * c + 4] = u.h[1];
                vars[6 * c + 5] = u.h[2];
            }
            plugin.strong(points_.interior[k], vars.data(), out.data(), grad ? jac.data() : nullptr);
            for (int r = 0; r < n; ++r) {
                loss += out[r] * out[r];
                if (res) (*res)[col * n + r] = out[r];
            }
            if (!grad) continue;
            for (int j = 0; j < 6 * n; ++j) {
                double s = 0.0;
                for (int r = 0; r < n; ++r) s += 2.0 * out[r] * jac[r * 6 * n + j];
                sb[j] = s;
            }
            for (int c = 0; c < n; ++c) {
                if (exact) {
                    b_layer_pullback(phi_[k], sb.data() + 6 * c, sn.data() + 6 * c);
                } else {
                    std::copy_n(sb.data() + 6 * c, 6, sn.data() + 6 * c);
                }
                seeds.value(c, col) = sn[6 * c];
                seeds.d[0](c, col) = sn[6 * c + 1];
                seeds.d[1](c, col) = sn[6 * c + 2];
                if (order_ == 2) {
                    seeds.e[nn::JetBatch::pair_index(0, 0, nd)](c, col) = sn[6 * c + 3];
                    seeds.e[nn::JetBatch::pair_index(0, 1, nd)](c, col) = sn[6 * c + 4];
                    seeds.e[nn::JetBatch::pair_index(1, 1, nd)](c, col) = sn[6 * c + 5];
                }
            }
        }
    }
    if (grad) {
        grad->setZero(w.size());
        batch_.backward(seeds, *grad);
    }

    const auto* pen = std::get_if<Penalty>(&method_);
    if (pen && x_boundary_.cols() > 0) {
        boundary_batch_.forward(w, x_boundary_);
        const auto Pb = static_cast<Eigen::Index>(points_.boundary.size());
        nn::JetBatch::Seeds bs;
        if (grad) bs = boundary_batch_.zero_seeds();
        for (std::size_t i = 0; i < specs_.size(); ++i) {
            for (Eigen::Index k = 0; k < Pb; ++k) {
                const Eigen::Index col = static_cast<Eigen::Index>(i) * Pb + k;
                for (int c = 0; c < n; ++c) {
                    const double d = boundary_batch_.value()(c, col) - g_boundary_[i][c][k];
                    loss += pen->lambda * d * d;
                    if (grad) bs.value(c, col) = 2.0 * pen->lambda * d;
                }
            }
        }
        if (grad) boundary_batch_.backward(bs, *grad);
    }

    loss += nn::l2_penalty(w, lambda_reg_);
    if (grad) *grad += 2.0 * lambda_reg_ * w;
    return loss;
}

double PinnProgram::evaluate(const nn::WeightVector& w, Eigen::VectorXd* grad) const { return run(w, grad, nullptr); }

Eigen::VectorXd PinnProgram::residuals(const nn::WeightVector& w) const {
    Eigen::VectorXd r;
    run(w, nullptr, &r);
    return r;
}

namespace {

fem::SampledField network_field(const BLayer* layer, const nn::Architecture& arch, const nn::WeightVector& w,
                                const std::vector<double>& extra, int c) {
    return [layer, extra, arch, w, c](Point x) {
        Eigen::VectorXd in(2 + extra.size());
        in << x.x, x.y;
        for (std::size_t k = 0; k < extra.size(); ++k) in[2 + k] = extra[k];
        const auto jet = nn::input_jet(arch, w, in, 1);
        adf::FieldSample s;
        s.value = jet.value[c];
        s.gradient = {jet.jacobian(c, 0), jet.jacobian(c, 1)};
        if (layer) {
            const Jet2 b = layer->apply(x, Jet2(s.value, s.gradient, {0.0, 0.0, 0.0}), c);
            s.value = b.v;
            s.gradient = b.g;
        }
        s.laplacian_available = false;
        return s;
    };
}

}  // namespace

fem::SampledField PinnProgram::solution(const nn::WeightVector& w, int c, std::size_t i) const {
    return network_field(is_exact(method_) ? layers_.at(i).get() : nullptr, arch_, w, extra_inputs(specs_.at(i)), c);
}

// ---------------------------------------------------------------------------
// VPINN without interpolation

DirectVpinnProgram::DirectVpinnProgram(std::vector<ProblemSpec> instances, const VpinnDiscretization& disc,
                                       BcMethod method, nn::Architecture arch, double lambda_reg)
    : specs_(std::move(instances)),
      disc_(&disc),
      method_(method),
      arch_(std::move(arch)),
      lambda_reg_(lambda_reg),
      batch_(arch_, 0, {}),
      boundary_batch_(arch_, 0, {}) {
    validate(method_);
    if (std::holds_alternative<Nitsche>(method_)) throw ConfigError("Nitsche needs the interpolated VPINN");
    if (specs_.empty()) throw ConfigError("VPINN program needs at least one problem instance");
    if (lambda_reg_ < 0) throw ConfigError("regularization weight must be >= 0");
    if (!arch_.smooth()) throw ConfigError("input derivatives need a smooth activation");
    ncomp_ = specs_.front().components();

    const auto& fine = disc.pair().fine;
    const auto& test = disc.test();
    const int nbt = test.basis().size();
    const auto rule = fem::triangle_rule_at_least(disc.options().q);
    std::vector<double> v(nbt), dx(nbt), dy(nbt);
    for (std::size_t e = 0; e < fine.num_elements(); ++e) {
        for (std::size_t k = 0; k < rule.size(); ++k) {
            const Point x = fine.from_reference(e, rule.points[k]);
            qx_.push_back(x);
            qw_.push_back(rule.weights[k] * 2.0 * fine.area(e));
            qe_.push_back(e);
            test.eval_element(e, x, v.data(), dx.data(), dy.data());
            for (int a = 0; a < nbt; ++a) {
                tab_.push_back(v[a]);
                tab_.push_back(dx[a]);
                tab_.push_back(dy[a]);
            }
        }
    }
    boundary_ = disc.trial_dirichlet_points();
    const auto Q = static_cast<Eigen::Index>(qx_.size());
    const auto Pb = static_cast<Eigen::Index>(boundary_.size());
    x_interior_.resize(specs_.front().input_width(), Q * static_cast<Eigen::Index>(specs_.size()));
    x_boundary_.resize(specs_.front().input_width(), Pb * static_cast<Eigen::Index>(specs_.size()));
    for (std::size_t i = 0; i < specs_.size(); ++i) {
        const auto& spec = specs_[i];
        check_architecture(arch_, spec);
        plugins_.push_back(make_plugin(spec));
        const auto extra = extra_inputs(spec);
        x_interior_.middleCols(static_cast<Eigen::Index>(i) * Q, Q) = network_inputs(qx_, extra);
        if (Pb > 0) x_boundary_.middleCols(static_cast<Eigen::Index>(i) * Pb, Pb) = network_inputs(boundary_, extra);
        std::vector<Eigen::VectorXd> gb;
        for (int c = 0; c < ncomp_; ++c) {
            Eigen::VectorXd g(Pb);
            for (Eigen::Index k = 0; k < Pb; ++k) g[k] = spec.g[c](boundary_[k]);
            gb.push_back(std::move(g));
        }
        g_boundary_.push_back(std::move(gb));
        if (is_exact(method_)) {
            layers_.push_back(std::make_unique<BLayer>(spec, method_));
            const auto& layer = *layers_.back();
            std::vector<std::vector<Jet2>> gj(ncomp_);
            for (const Point x : qx_)
                for (int c = 0; c < ncomp_; ++c) gj[c].push_back(layer.gbar(c).jet(x));
            if (i == 0)
                for (const Point x : qx_) phi_.push_back(layer.phi().jet(x));
            gbar_.push_back(std::move(gj));
        }
    }
    batch_ = nn::JetBatch(arch_, 1, {0, 1});
}

double DirectVpinnProgram::run(const nn::WeightVector& w, Eigen::VectorXd* grad,
                               std::vector<Eigen::VectorXd>* res) const {
    batch_.forward(w, x_interior_);
    const auto Q = static_cast<Eigen::Index>(qx_.size());
    const auto nI = static_cast<Eigen::Index>(disc_->test_dofs().size());
    const auto& test = disc_->test();
    const int nbt = test.basis().size();
    const bool exact = is_exact(method_);
    const int n = ncomp_;
    const int nv = 3 * n;
    nn::JetBatch::Seeds seeds;
    if (grad) seeds = batch_.zero_seeds();
    std::array<double, 6> vars{}, out{};
    std::array<double, 12> sb{}, sn{};
    std::vector<double> jac(grad ? static_cast<std::size_t>(Q) * nv * nv : 0);
    double loss = 0.0;
    for (std::size_t i = 0; i < specs_.size(); ++i) {
        const auto& plugin = *plugins_[i];
        Eigen::VectorXd r = Eigen::VectorXd::Zero(n * nI);
        for (Eigen::Index k = 0; k < Q; ++k) {
            const Eigen::Index col = static_cast<Eigen::Index>(i) * Q + k;
            for (int c = 0; c < n; ++c) {
                Jet2 u(batch_.value()(c, col), {batch_.d(0)(c, col), batch_.d(1)(c, col)}, {0.0, 0.0, 0.0});
                if (exact) u = gbar_[i][c][k] + phi_[k] * u;
                vars[3 * c] = u.v;
                vars[3 * c + 1] = u.g[0];
                vars[3 * c + 2] = u.g[1];
            }
            plugin.weak(qx_[k], vars.data(), out.data(), grad ? jac.data() + k * nv * nv : nullptr);
            const auto td = test.element_dofs(qe_[k]);
            const double* T = tab_.data() + k * nbt * 3;
            for (int a = 0; a < nbt; ++a) {
                const int row = disc_->row_of(td[a]);
                if (row < 0) continue;
                for (int c = 0; c < n; ++c)
                    r[c * nI + row] +=
                        qw_[k] * (out[3 * c] * T[3 * a] + out[3 * c + 1] * T[3 * a + 1] + out[3 * c + 2] * T[3 * a + 2]);
            }
        }
        loss += r.squaredNorm();
        if (res) res->push_back(r);
        if (!grad) continue;
        for (Eigen::Index k = 0; k < Q; ++k) {
            const Eigen::Index col = static_cast<Eigen::Index>(i) * Q + k;
            const auto td = test.element_dofs(qe_[k]);
            const double* T = tab_.data() + k * nbt * 3;
            const double* J = jac.data() + k * nv * nv;
            // Cotangent of the outputs (S, Qx, Qy) per component.
            std::array<double, 6> so{};
            for (int a = 0; a < nbt; ++a) {
                const int row = disc_->row_of(td[a]);
                if (row < 0) continue;
                for (int c = 0; c < n; ++c) {
                    const double s = 2.0 * r[c * nI + row] * qw_[k];
                    for (int j = 0; j < 3; ++j) so[3 * c + j] += s * T[3 * a + j];
                }
            }
            sb.fill(0.0);
            for (int c = 0; c < n; ++c)
                for (int j = 0; j < 3; ++j) {
                    double s = 0.0;
                    for (int o = 0; o < nv; ++o) s += so[o] * J[o * nv + 3 * c + j];
                    sb[6 * c + j] = s;
                }
            for (int c = 0; c < n; ++c) {
                if (exact) b_layer_pullback(phi_[k], sb.data() + 6 * c, sn.data() + 6 * c);
                else std::copy_n(sb.data() + 6 * c, 6, sn.data() + 6 * c);
                seeds.value(c, col) = sn[6 * c];
                seeds.d[0](c, col) = sn[6 * c + 1];
                seeds.d[1](c, col) = sn[6 * c + 2];
            }
        }
    }
    if (grad) {
        grad->setZero(w.size());
        batch_.backward(seeds, *grad);
    }

    const auto* pen = std::get_if<Penalty>(&method_);
    if (pen && x_boundary_.cols() > 0) {
        boundary_batch_.forward(w, x_boundary_);
        const auto Pb = static_cast<Eigen::Index>(boundary_.size());
        nn::JetBatch::Seeds bs;
        if (grad) bs = boundary_batch_.zero_seeds();
        for (std::size_t i = 0; i < specs_.size(); ++i) {
            for (Eigen::Index k = 0; k < Pb; ++k) {
                const Eigen::Index col = static_cast<Eigen::Index>(i) * Pb + k;
                for (int c = 0; c < n; ++c) {
                    const double d = boundary_batch_.value()(c, col) - g_boundary_[i][c][k];
                    loss += pen->lambda * d * d;
                    if (grad) bs.value(c, col) = 2.0 * pen->lambda * d;
                }
            }
        }
        if (grad) boundary_batch_.backward(bs, *grad);
    }
    loss += nn::l2_penalty(w, lambda_reg_);
    if (grad) *grad += 2.0 * lambda_reg_ * w;
    return loss;
}

double DirectVpinnProgram::evaluate(const nn::WeightVector& w, Eigen::VectorXd* grad) const {
    return run(w, grad, nullptr);
}

Eigen::VectorXd DirectVpinnProgram::residuals(const nn::WeightVector& w, std::size_t i) const {
    std::vector<Eigen::VectorXd> r;
    run(w, nullptr, &r);
    return r.at(i);
}

fem::SampledField DirectVpinnProgram::solution(const nn::WeightVector& w, int c, std::size_t i) const {
    return network_field(is_exact(method_) ? layers_.at(i).get() : nullptr, arch_, w, extra_inputs(specs_.at(i)), c);
}

}  // namespace pinnbc::residuals
