#include "pinnbc/harness.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <thread>

#include <Eigen/OrderingMethods>
#include <Eigen/SparseLU>
#include <yaml-cpp/yaml.h>

#include "pinnbc/errors.hpp"

namespace pinnbc::harness {

using nlohmann::json;
using problems::ProblemSpec;
using residuals::BcMethod;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double number_from(const json& j) { return j.is_null() ? kNaN : j.get<double>(); }

std::string points_name(residuals::Placement p) {
    return p == residuals::Placement::MeshNodes ? "mesh_nodes" : "uniform_draw";
}

}  // namespace

std::string to_string(Model m) { return m == Model::Pinn ? "pinn" : "vpinn"; }

Model parse_model(const std::string& s) {
    if (s == "pinn") return Model::Pinn;
    if (s == "vpinn") return Model::Vpinn;
    throw ConfigError("unknown model '" + s + "' (pinn or vpinn)");
}

BcMethod parse_method(const std::string& code, double lambda, int m, double gamma) {
    BcMethod out;
    if (code == "ma") out = residuals::Penalty{lambda};
    else if (code == "mb") out = residuals::ExactNormalized{m};
    else if (code == "mc") out = residuals::ExactProduct{};
    else if (code == "md") out = residuals::Nitsche{gamma};
    else throw ConfigError("unknown method '" + code + "' (ma, mb, mc or md)");
    residuals::validate(out);
    return out;
}

// ---------------------------------------------------------------------------
// Configuration

void ExperimentConfig::validate() const {
    if (name.empty()) throw ConfigError("name must not be empty");
    const auto spec = build_problem(*this);
    residuals::validate(method);
    if (levels.empty()) throw ConfigError("at least one mesh level is required");
    for (int l : levels)
        if (l < 0 || l > 8) throw ConfigError("mesh levels must lie in [0, 8]");
    vpinn.validate();
    if (depth < 1 || width < 1) throw ConfigError("network depth and width must be positive");
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    adam.validate();
    qn.validate();
    if (h1_interval < 0) throw ConfigError("h1_interval must be >= 0");
    if (!(noisy_threshold > 0)) throw ConfigError("noisy_threshold must be positive");
    if (threads < 0) throw ConfigError("threads must be >= 0");
    if (reference_mesh.empty() != reference_values.empty())
        throw ConfigError("reference_mesh and reference_values go together");
    const bool nitsche = std::holds_alternative<residuals::Nitsche>(method);
    if (nitsche && model == Model::Pinn) throw ConfigError("Nitsche needs the VPINN model");
    if (nitsche && !interpolated) throw ConfigError("Nitsche needs the interpolated VPINN");
    if (!interpolated && model == Model::Pinn) throw ConfigError("interpolated=false applies to VPINNs only");
    if (activation != nn::Activation::Tanh && (model == Model::Pinn || !interpolated))
        throw ConfigError("input derivatives need the tanh activation");
    if (oracle && !spec.affine()) throw ConfigError("the least-squares oracle needs an affine problem");
}

double ExperimentConfig::regularization() const {
    if (lambda_reg >= 0) return lambda_reg;
    return model == Model::Pinn ? nn::kDefaultPinnRegularization : nn::kDefaultVpinnRegularization;
}

json ExperimentConfig::to_json() const {
    json j;
    j["name"] = name;
    j["problem"] = problem;
    j["domain"] = domain;
    j["model"] = to_string(model);
    j["interpolated"] = interpolated;
    j["method"] = residuals::method_code(method);
    j["lambda"] = std::holds_alternative<residuals::Penalty>(method) ? std::get<residuals::Penalty>(method).lambda : 1.0;
    j["m"] = std::holds_alternative<residuals::ExactNormalized>(method) ? std::get<residuals::ExactNormalized>(method).m : 1;
    j["gamma"] = std::holds_alternative<residuals::Nitsche>(method) ? std::get<residuals::Nitsche>(method).gamma : 1.0;
    j["levels"] = levels;
    j["k_int"] = vpinn.k_int;
    j["k_test"] = vpinn.k_test;
    j["q"] = vpinn.q;
    j["fine_refinements"] = vpinn.fine_refinements;
    j["depth"] = depth;
    j["width"] = width;
    j["activation"] = activation == nn::Activation::Tanh ? "tanh" : "relu";
    j["seeds"] = seeds;
    j["adam_epochs"] = adam.epochs;
    j["adam_lr"] = adam.lr0;
    j["adam_decay"] = adam.decay_rate;
    j["qn_iterations"] = qn.max_iters;
    j["qn_memory"] = qn.memory;
    j["qn_dense"] = qn.dense;
    j["points"] = points_name(points);
    j["lambda_reg"] = lambda_reg;
    j["h1_interval"] = h1_interval;
    j["reference_mesh"] = reference_mesh;
    j["reference_values"] = reference_values;
    j["oracle"] = oracle;
    j["noisy_threshold"] = noisy_threshold;
    j["threads"] = threads;
    return j;
}

namespace {

template <class T>
T typed(const json& v, const std::string& key) {
    auto bad = [&](const char* what) { return ConfigError("key '" + key + "' must be " + what); };
    if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw bad("a boolean");
        return v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw bad("an integer");
        if constexpr (std::is_unsigned_v<T>) {
            if (v.get<long long>() < 0) throw bad("a non-negative integer");
        }
        return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw bad("a number");
        return v.get<T>();
    } else {
        if (!v.is_string()) throw bad("a string");
        return v.get<std::string>();
    }
}

template <class T>
std::vector<T> typed_list(const json& v, const std::string& key) {
    std::vector<T> out;
    if (v.is_array()) {
        for (const auto& e : v) out.push_back(typed<T>(e, key));
    } else {
        out.push_back(typed<T>(v, key));
    }
    return out;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("configuration must be a key/value map");
    ExperimentConfig c;
    std::string method = residuals::method_code(c.method);
    double lambda = 1.0, gamma = 1.0;
    int m = 1;
    for (const auto& [key, v] : j.items()) {
        if (key == "name") c.name = typed<std::string>(v, key);
        else if (key == "problem") c.problem = typed<std::string>(v, key);
        else if (key == "domain") c.domain = typed<std::string>(v, key);
        else if (key == "model") c.model = parse_model(typed<std::string>(v, key));
        else if (key == "interpolated") c.interpolated = typed<bool>(v, key);
        else if (key == "method") method = typed<std::string>(v, key);
        else if (key == "lambda") lambda = typed<double>(v, key);
        else if (key == "m") m = typed<int>(v, key);
        else if (key == "gamma") gamma = typed<double>(v, key);
        else if (key == "levels") c.levels = typed_list<int>(v, key);
        else if (key == "k_int") c.vpinn.k_int = typed<int>(v, key);
        else if (key == "k_test") c.vpinn.k_test = typed<int>(v, key);
        else if (key == "q") c.vpinn.q = typed<int>(v, key);
        else if (key == "fine_refinements") c.vpinn.fine_refinements = typed<int>(v, key);
        else if (key == "depth") c.depth = typed<int>(v, key);
        else if (key == "width") c.width = typed<int>(v, key);
        else if (key == "activation") {
            const auto a = typed<std::string>(v, key);
            if (a == "tanh") c.activation = nn::Activation::Tanh;
            else if (a == "relu") c.activation = nn::Activation::Relu;
            else throw ConfigError("unknown activation '" + a + "'");
        } else if (key == "seeds") c.seeds = typed_list<std::uint64_t>(v, key);
        else if (key == "adam_epochs") c.adam.epochs = typed<int>(v, key);
        else if (key == "adam_lr") c.adam.lr0 = typed<double>(v, key);
        else if (key == "adam_decay") c.adam.decay_rate = typed<double>(v, key);
        else if (key == "qn_iterations") c.qn.max_iters = typed<int>(v, key);
        else if (key == "qn_memory") c.qn.memory = typed<int>(v, key);
        else if (key == "qn_dense") c.qn.dense = typed<bool>(v, key);
        else if (key == "points") {
            const auto p = typed<std::string>(v, key);
            if (p == "mesh_nodes") c.points = residuals::Placement::MeshNodes;
            else if (p == "uniform_draw") c.points = residuals::Placement::UniformDraw;
            else throw ConfigError("unknown point placement '" + p + "'");
        } else if (key == "lambda_reg") c.lambda_reg = typed<double>(v, key);
        else if (key == "h1_interval") c.h1_interval = typed<int>(v, key);
        else if (key == "reference_mesh") c.reference_mesh = typed<std::string>(v, key);
        else if (key == "reference_values") c.reference_values = typed<std::string>(v, key);
        else if (key == "oracle") c.oracle = typed<bool>(v, key);
        else if (key == "noisy_threshold") c.noisy_threshold = typed<double>(v, key);
        else if (key == "threads") c.threads = typed<int>(v, key);
        else throw ConfigError("unknown configuration key '" + key + "'");
    }
    c.method = parse_method(method, lambda, m, gamma);
    return c;
}

std::string ExperimentConfig::hash() const {
    json j = to_json();
    j.erase("threads");
    const std::string s = j.dump();
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << h;
    return out.str();
}

namespace {

json yaml_to_json(const YAML::Node& n) {
    switch (n.Type()) {
        case YAML::NodeType::Null:
        case YAML::NodeType::Undefined:
            return nullptr;
        case YAML::NodeType::Sequence: {
            json a = json::array();
            for (const auto& e : n) a.push_back(yaml_to_json(e));
            return a;
        }
        case YAML::NodeType::Map: {
            json o = json::object();
            for (const auto& kv : n) o[kv.first.as<std::string>()] = yaml_to_json(kv.second);
            return o;
        }
        case YAML::NodeType::Scalar: {
            const std::string s = n.Scalar();
            if (n.Tag() == "!") return s;  // quoted
            long long i;
            double d;
            bool b;
            if (YAML::convert<long long>::decode(n, i)) return i;
            if (YAML::convert<double>::decode(n, d)) return d;
            if (s == "true" || s == "false") {
                YAML::convert<bool>::decode(n, b);
                return b;
            }
            return s;
        }
    }
    return nullptr;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("malformed configuration: ") + e.what());
    }
    if (!root.IsMap()) throw ConfigError("configuration must be a key/value map");
    return ExperimentConfig::from_json(yaml_to_json(root));
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read configuration " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

ProblemSpec build_problem(const ExperimentConfig& cfg) {
    auto spec = problems::catalog(cfg.problem);
    if (cfg.domain.empty()) return spec;
    const auto domain = fem::Domain::parse(cfg.domain);
    if (domain.name() == spec.domain.name()) return spec;
    if (spec.family != problems::Family::Elliptic || !spec.has_exact())
        throw ConfigError("the domain of " + spec.id + " cannot be changed");
    return problems::manufactured_elliptic(spec.id, domain, spec.coeffs, spec.exact[0]);
}

// ---------------------------------------------------------------------------
// Records

json RunRecord::to_json() const {
    json j;
    j["config"] = config.to_json();
    j["config_hash"] = config_hash;
    j["seed"] = seed;
    j["seeds"] = seeds;
    json se = json::array();
    for (double e : seed_errors) se.push_back(number_or_null(e));
    j["seed_errors"] = se;
    json t;
    t["epoch"] = train.epoch;
    json phase = json::array(), loss = json::array(), h1 = json::array();
    for (std::size_t i = 0; i < train.size(); ++i) {
        phase.push_back(train.phase[i] == opt::Phase::Adam ? "adam" : "quasi_newton");
        loss.push_back(number_or_null(train.loss[i]));
        h1.push_back(number_or_null(train.h1[i]));
    }
    t["phase"] = phase;
    t["loss"] = loss;
    t["h1"] = h1;
    t["phase_boundary"] = train.phase_boundary;
    t["stop_reason"] = opt::to_string(train.reason);
    t["diagnostic"] = train.diagnostic;
    j["train"] = t;
    j["final_h1"] = number_or_null(final_h1);
    j["relative_h1"] = number_or_null(relative_h1);
    json lv = json::array();
    for (const auto& l : levels)
        lv.push_back({{"level", l.level},
                      {"h", l.h},
                      {"error", number_or_null(l.error)},
                      {"relative_error", number_or_null(l.relative_error)},
                      {"dofs", l.dofs}});
    j["levels"] = lv;
    j["rate"] = rate ? json(*rate) : json(nullptr);
    j["noisy"] = noisy;
    j["wall_time"] = wall_time;
    j["ok"] = ok;
    j["stage"] = stage;
    j["error_kind"] = error_kind;
    j["message"] = message;
    return j;
}

RunRecord RunRecord::from_json(const json& j) {
    RunRecord r;
    r.config = ExperimentConfig::from_json(j.at("config"));
    r.config_hash = j.at("config_hash").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    for (const auto& e : j.at("seed_errors")) r.seed_errors.push_back(number_from(e));
    const auto& t = j.at("train");
    r.train.epoch = t.at("epoch").get<std::vector<int>>();
    for (std::size_t i = 0; i < r.train.epoch.size(); ++i) {
        r.train.phase.push_back(t.at("phase")[i] == "adam" ? opt::Phase::Adam : opt::Phase::QuasiNewton);
        r.train.loss.push_back(number_from(t.at("loss")[i]));
        r.train.h1.push_back(number_from(t.at("h1")[i]));
    }
    r.train.phase_boundary = t.at("phase_boundary").get<int>();
    const auto reason = t.at("stop_reason").get<std::string>();
    for (auto s : {opt::StopReason::Completed, opt::StopReason::MaxIterations, opt::StopReason::GradientTolerance,
                   opt::StopReason::IdenticalIterates, opt::StopReason::LineSearchFailure, opt::StopReason::NonFinite})
        if (opt::to_string(s) == reason) r.train.reason = s;
    r.train.diagnostic = t.at("diagnostic").get<std::string>();
    r.final_h1 = number_from(j.at("final_h1"));
    r.relative_h1 = number_from(j.at("relative_h1"));
    for (const auto& l : j.at("levels"))
        r.levels.push_back({l.at("level").get<int>(), l.at("h").get<double>(), number_from(l.at("error")),
                            number_from(l.at("relative_error")), l.at("dofs").get<std::size_t>()});
    if (!j.at("rate").is_null()) r.rate = j.at("rate").get<double>();
    r.noisy = j.at("noisy").get<bool>();
    r.wall_time = j.at("wall_time").get<double>();
    r.ok = j.at("ok").get<bool>();
    r.stage = j.at("stage").get<std::string>();
    r.error_kind = j.at("error_kind").get<std::string>();
    r.message = j.at("message").get<std::string>();
    return r;
}

// ---------------------------------------------------------------------------
// Training runs

namespace {

/// Truth fields and norms per test instance.
struct Truth {
    std::vector<std::vector<fem::SampledField>> fields;
    std::vector<double> norms;
    bool available() const { return !fields.empty(); }
};

std::vector<double> extra_of(const ProblemSpec& s) {
    return s.parametric() ? std::vector<double>{s.p} : std::vector<double>{};
}

fem::SampledField network_sample(const residuals::BLayer* layer, const nn::Architecture& arch,
                                 const nn::WeightVector& w, std::vector<double> extra, int c) {
    return [layer, &arch, &w, extra, c](Point x) {
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

/// Everything needed to train and evaluate one configuration at one level.
class Setup {
public:
    Setup(const ExperimentConfig& cfg, int level) : cfg_(cfg), spec_(build_problem(cfg)) {
        arch_ = nn::Architecture::hidden(spec_.input_width(), cfg.depth, cfg.width, spec_.components(), cfg.activation);
        coarse_ = fem::generate_mesh(spec_.domain, level);
        h_ = coarse_.meshsize;
        if (spec_.parametric()) {
            for (double p : spec_.parameters.train()) train_.push_back(problems::parametric_instance(spec_, p));
            for (double p : spec_.parameters.test()) test_.push_back(problems::parametric_instance(spec_, p));
        } else {
            train_ = {spec_};
            test_ = {spec_};
        }
        const bool exact = residuals::is_exact(cfg.method);
        if (cfg.model == Model::Vpinn) {
            disc_ = std::make_unique<residuals::VpinnDiscretization>(
                spec_, coarse_, cfg.vpinn, std::holds_alternative<residuals::Nitsche>(cfg.method));
            dofs_ = disc_->trial().dim();
            if (cfg.interpolated) {
                program_ = std::make_unique<residuals::VpinnProgram>(train_, *disc_, cfg.method, arch_,
                                                                     cfg.regularization());
                for (const auto& t : test_) maps_.push_back(residuals::make_trial_map(t, disc_->trial(), cfg.method));
            } else {
                program_ = std::make_unique<residuals::DirectVpinnProgram>(train_, *disc_, cfg.method, arch_,
                                                                           cfg.regularization());
            }
            eval_mesh_ = &disc_->pair().fine;
            order_ = fem::error_quadrature_order(cfg.vpinn.k_int);
        } else {
            space_ = std::make_unique<fem::LagrangeSpace>(coarse_, cfg.vpinn.k_int, &spec_.boundary);
            dofs_ = space_->dim();
            std::unique_ptr<adf::AdfField> phi;
            if (exact) phi = std::make_unique<adf::AdfField>(residuals::make_adf(spec_, cfg.method));
            auto pts = residuals::pinn_points(spec_, *space_, cfg.points, cfg.seeds.front(), phi.get());
            program_ = std::make_unique<residuals::PinnProgram>(train_, std::move(pts), cfg.method, arch_,
                                                                cfg.regularization());
            fine_ = fem::red_refine(coarse_);
            eval_mesh_ = &fine_;
            order_ = 10;
        }
        if (cfg.model == Model::Pinn || !cfg.interpolated) {
            if (exact)
                for (const auto& t : test_) layers_.push_back(std::make_unique<residuals::BLayer>(t, cfg.method));
        }
        build_truth();
    }

    const nn::ScalarProgram& program() const { return *program_; }
    const nn::Architecture& arch() const { return arch_; }
    double h() const { return h_; }
    std::size_t dofs() const { return dofs_; }
    bool has_truth() const { return truth_.available(); }

    /// Absolute and relative H1 error averaged over the test instances.
    std::pair<double, double> error(const nn::WeightVector& w) const {
        if (!truth_.available()) return {kNaN, kNaN};
        double abs = 0.0, rel = 0.0;
        const int n = spec_.components();
        for (std::size_t i = 0; i < test_.size(); ++i) {
            double e2 = 0.0;
            if (cfg_.model == Model::Vpinn && cfg_.interpolated) {
                const auto& trial = disc_->trial();
                const fem::TrialFunction t(
                    trial, residuals::interpolate_network(maps_[i], trial, arch_, w, extra_of(test_[i])), n);
                for (int c = 0; c < n; ++c) {
                    const double e = fem::h1_error(t, truth_.fields[i][c], disc_->pair(), order_, c);
                    e2 += e * e;
                }
            } else {
                const residuals::BLayer* layer = layers_.empty() ? nullptr : layers_[i].get();
                for (int c = 0; c < n; ++c) {
                    const double e = fem::h1_error(network_sample(layer, arch_, w, extra_of(test_[i]), c),
                                                   truth_.fields[i][c], *eval_mesh_, order_);
                    e2 += e * e;
                }
            }
            abs += std::sqrt(e2);
            rel += std::sqrt(e2) / truth_.norms[i];
        }
        const auto m = static_cast<double>(test_.size());
        return {abs / m, rel / m};
    }

private:
    void build_truth() {
        const int n = spec_.components();
        if (!cfg_.reference_mesh.empty()) {
            reference_ = std::make_unique<problems::ReferenceSolution>(
                problems::ReferenceSolution::read(cfg_.reference_mesh, cfg_.reference_values));
            if (reference_->components() != n) throw ConfigError("reference solution has the wrong component count");
            std::vector<fem::SampledField> f;
            for (int c = 0; c < n; ++c) f.push_back(reference_->field(c));
            truth_.fields.assign(test_.size(), f);
        } else if (spec_.has_exact()) {
            for (const auto& t : test_) {
                std::vector<fem::SampledField> f;
                for (int c = 0; c < n; ++c) f.push_back(fem::sampled(t.exact[c]));
                truth_.fields.push_back(std::move(f));
            }
        } else {
            return;
        }
        for (const auto& f : truth_.fields) {
            double s = 0.0;
            for (const auto& fc : f) {
                const double v = fem::h1_norm(fc, *eval_mesh_, order_);
                s += v * v;
            }
            truth_.norms.push_back(std::sqrt(s));
        }
    }

    const ExperimentConfig& cfg_;
    ProblemSpec spec_;
    std::vector<ProblemSpec> train_, test_;
    nn::Architecture arch_;
    fem::TriMesh coarse_, fine_;
    const fem::TriMesh* eval_mesh_ = nullptr;
    int order_ = 8;
    double h_ = 0.0;
    std::size_t dofs_ = 0;
    std::unique_ptr<residuals::VpinnDiscretization> disc_;
    std::unique_ptr<fem::LagrangeSpace> space_;
    std::unique_ptr<nn::ScalarProgram> program_;
    std::vector<residuals::TrialMap> maps_;
    std::vector<std::unique_ptr<residuals::BLayer>> layers_;
    std::unique_ptr<problems::ReferenceSolution> reference_;
    Truth truth_;
};

void record_failure(RunRecord& r, const std::string& stage, const std::exception& e) {
    r.ok = false;
    r.stage = stage;
    r.message = e.what();
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const InconsistentBoundaryData*>(&e))
        r.error_kind = "config";
    else if (dynamic_cast<const NumericalError*>(&e))
        r.error_kind = "numerical";
    else if (dynamic_cast<const DomainError*>(&e))
        r.error_kind = "domain";
    else
        r.error_kind = "other";
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

RunRecord run_experiment(const ExperimentConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    RunRecord rec;
    rec.config = cfg;
    rec.config_hash = cfg.hash();
    rec.seeds = cfg.seeds;
    rec.final_h1 = rec.relative_h1 = kNaN;
    std::string stage = "config";
    try {
        cfg.validate();
        stage = "setup";
        const int level = cfg.levels.back();
        const Setup setup(cfg, level);
        double best = std::numeric_limits<double>::infinity();
        for (std::uint64_t seed : cfg.seeds) {
            stage = "train";
            opt::Monitor monitor;
            if (cfg.h1_interval > 0 && setup.has_truth()) {
                monitor.interval = cfg.h1_interval;
                monitor.h1 = [&setup](const Eigen::VectorXd& w) { return setup.error(w).first; };
            }
            const auto w0 = nn::init_weights(setup.arch(), seed);
            auto res = opt::train_schedule(setup.program(), w0, cfg.adam, cfg.qn, monitor);
            stage = "evaluate";
            const auto [abs, rel] = setup.error(res.w);
            rec.seed_errors.push_back(abs);
            const double score = setup.has_truth() ? abs : res.record.loss.back();
            if (!(score < best) && best != std::numeric_limits<double>::infinity()) continue;
            best = score;
            rec.seed = seed;
            rec.train = std::move(res.record);
            rec.final_h1 = abs;
            rec.relative_h1 = rel;
        }
        rec.levels.push_back({level, setup.h(), rec.final_h1, rec.relative_h1, setup.dofs()});
    } catch (const std::exception& e) {
        record_failure(rec, stage, e);
    }
    rec.wall_time = seconds_since(t0);
    return rec;
}

// ---------------------------------------------------------------------------
// Least squares

Eigen::VectorXd LinearLeastSquares::coefficients(const Eigen::VectorXd& x) const {
    Eigen::VectorXd c = map.offset;
    for (std::size_t k = 0; k < free_columns.size(); ++k) {
        const Eigen::Index j = free_columns[k];
        c[j] += map.scale[j] * x[static_cast<Eigen::Index>(k)];
    }
    return c;
}

LinearLeastSquares build_least_squares(const residuals::VpinnResiduals& res, const residuals::TrialMap& map) {
    const auto& form = res.assembled();
    LinearLeastSquares ls;
    ls.map = map;
    const Eigen::Index nc = res.num_coefficients();
    std::vector<Eigen::Index> col_of(nc, -1);
    for (Eigen::Index j = 0; j < nc; ++j) {
        if (map.scale[j] != 0.0) {
            col_of[j] = static_cast<Eigen::Index>(ls.free_columns.size());
            ls.free_columns.push_back(j);
        }
    }
    std::vector<Eigen::Triplet<double>> trip;
    for (Eigen::Index j = 0; j < form.J.outerSize(); ++j) {
        if (col_of[j] < 0) continue;
        for (Eigen::SparseMatrix<double>::InnerIterator it(form.J, j); it; ++it)
            trip.emplace_back(static_cast<int>(it.row()), static_cast<int>(col_of[j]), it.value() * map.scale[j]);
    }
    Eigen::Index rows = form.J.rows();
    Eigen::VectorXd b = -(form.J * map.offset + form.r0);
    if (const auto* p = std::get_if<residuals::Penalty>(&res.method())) {
        const double s = std::sqrt(p->lambda);
        const auto& dofs = res.discretization().trial_dirichlet_dofs();
        const auto dim = static_cast<Eigen::Index>(res.discretization().trial().dim());
        b.conservativeResize(rows + res.components() * static_cast<Eigen::Index>(dofs.size()));
        for (int c = 0; c < res.components(); ++c) {
            for (std::size_t k = 0; k < dofs.size(); ++k) {
                const Eigen::Index j = c * dim + dofs[k];
                trip.emplace_back(static_cast<int>(rows), static_cast<int>(col_of[j]), s * map.scale[j]);
                b[rows] = s * (res.dirichlet_values()[c][static_cast<Eigen::Index>(k)] - map.offset[j]);
                ++rows;
            }
        }
    }
    ls.A.resize(rows, static_cast<Eigen::Index>(ls.free_columns.size()));
    ls.A.setFromTriplets(trip.begin(), trip.end());
    ls.A.makeCompressed();
    ls.b = std::move(b);
    return ls;
}

Eigen::VectorXd solve_least_squares(const Eigen::SparseMatrix<double>& A, const Eigen::VectorXd& b) {
    // Augmented system [I A; A^T 0] [r; x] = [b; 0].
    const Eigen::Index m = A.rows(), n = A.cols();
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(m + 2 * A.nonZeros()));
    for (Eigen::Index i = 0; i < m; ++i) trip.emplace_back(static_cast<int>(i), static_cast<int>(i), 1.0);
    for (Eigen::Index j = 0; j < A.outerSize(); ++j) {
        for (Eigen::SparseMatrix<double>::InnerIterator it(A, j); it; ++it) {
            trip.emplace_back(static_cast<int>(it.row()), static_cast<int>(m + j), it.value());
            trip.emplace_back(static_cast<int>(m + j), static_cast<int>(it.row()), it.value());
        }
    }
    Eigen::SparseMatrix<double> K(m + n, m + n);
    K.setFromTriplets(trip.begin(), trip.end());
    Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu;
    lu.compute(K);
    if (lu.info() != Eigen::Success) throw NumericalError("least-squares system is singular: " + lu.lastErrorMessage());
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m + n);
    rhs.head(m) = b;
    const Eigen::VectorXd z = lu.solve(rhs);
    if (lu.info() != Eigen::Success || !z.allFinite()) throw NumericalError("least-squares solve failed");
    return z.tail(n);
}

OracleResult least_squares_oracle(const ProblemSpec& spec, const BcMethod& method, int level,
                                  const residuals::VpinnOptions& opts) {
    if (!spec.affine()) throw ConfigError("the least-squares oracle needs residuals affine in the coefficients");
    residuals::validate(method);
    opts.validate();
    const auto coarse = fem::generate_mesh(spec.domain, level);
    auto disc = std::make_shared<const residuals::VpinnDiscretization>(
        spec, coarse, opts, std::holds_alternative<residuals::Nitsche>(method));
    const residuals::VpinnResiduals res(spec, *disc, method);
    const auto map = residuals::make_trial_map(spec, disc->trial(), method);
    const auto ls = build_least_squares(res, map);
    const Eigen::VectorXd c = ls.coefficients(solve_least_squares(ls.A, ls.b));
    OracleResult out;
    out.discretization = disc;
    out.solution = fem::TrialFunction(disc->trial(), c, spec.components());
    out.loss = res.loss(c);
    out.h = disc->pair().coarse.meshsize;
    out.h1 = out.relative_h1 = kNaN;
    if (spec.has_exact()) {
        const int order = fem::error_quadrature_order(opts.k_int);
        double e2 = 0.0, n2 = 0.0;
        for (int k = 0; k < spec.components(); ++k) {
            const auto u = fem::sampled(spec.exact[k]);
            const double e = fem::h1_error(out.solution, u, disc->pair(), order, k);
            const double n = fem::h1_norm(u, disc->pair().fine, order);
            e2 += e * e;
            n2 += n * n;
        }
        out.h1 = std::sqrt(e2);
        out.relative_h1 = std::sqrt(e2 / n2);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Studies

double fit_rate(const std::vector<double>& h, const std::vector<double>& errors) {
    if (h.size() != errors.size() || h.size() < 2) throw ConfigError("rate fit needs matching lists of at least two");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const auto n = static_cast<double>(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) {
        if (!(h[i] > 0) || !(errors[i] > 0)) throw NumericalError("rate fit needs positive meshsizes and errors");
        const double x = std::log(h[i]), y = std::log(errors[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double den = n * sxx - sx * sx;
    if (den <= 0) throw NumericalError("rate fit needs distinct meshsizes");
    return (n * sxy - sx * sy) / den;
}

bool is_noisy(const std::vector<double>& errors, double threshold) {
    for (std::size_t i = 1; i < errors.size(); ++i)
        if (errors[i] > (1.0 + threshold) * errors[i - 1]) return true;
    return false;
}

RunRecord convergence_study(const ExperimentConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    RunRecord rec;
    rec.config = cfg;
    rec.config_hash = cfg.hash();
    rec.seeds = cfg.seeds;
    rec.final_h1 = rec.relative_h1 = kNaN;
    std::string stage = "config";
    try {
        cfg.validate();
        if (cfg.levels.size() < 3) throw ConfigError("a convergence study needs at least three levels");
        if (cfg.model == Model::Vpinn && cfg.vpinn.q != cfg.vpinn.k_int + cfg.vpinn.k_test - 2)
            throw ConfigError("VPINN rate studies need q = k_int + k_test - 2");
        std::vector<double> hs, errs;
        for (int level : cfg.levels) {
            stage = "level " + std::to_string(level);
            LevelResult lr;
            lr.level = level;
            if (cfg.oracle) {
                const auto o = least_squares_oracle(build_problem(cfg), cfg.method, level, cfg.vpinn);
                lr.h = o.h;
                lr.error = o.h1;
                lr.relative_error = o.relative_h1;
                lr.dofs = o.discretization->trial().dim();
            } else {
                ExperimentConfig one = cfg;
                one.levels = {level};
                const auto r = run_experiment(one);
                if (!r.ok) {
                    rec.ok = false;
                    rec.stage = stage + ": " + r.stage;
                    rec.error_kind = r.error_kind;
                    rec.message = r.message;
                    break;
                }
                lr = r.levels.front();
                rec.train = r.train;
                rec.seed = r.seed;
                rec.seed_errors = r.seed_errors;
            }
            hs.push_back(lr.h);
            errs.push_back(lr.error);
            rec.levels.push_back(lr);
        }
        if (!rec.levels.empty()) {
            rec.final_h1 = rec.levels.back().error;
            rec.relative_h1 = rec.levels.back().relative_error;
        }
        if (rec.ok && hs.size() >= 3) {
            stage = "rate";
            rec.rate = fit_rate(hs, errs);
            rec.noisy = is_noisy(errs, cfg.noisy_threshold);
        }
    } catch (const std::exception& e) {
        record_failure(rec, stage, e);
    }
    rec.wall_time = seconds_since(t0);
    return rec;
}

std::vector<ExperimentConfig> expand_grid(const ExperimentConfig& base, const SweepAxes& axes) {
    const std::vector<int> depths = axes.depths.empty() ? std::vector<int>{base.depth} : axes.depths;
    const std::vector<int> widths = axes.widths.empty() ? std::vector<int>{base.width} : axes.widths;
    const std::vector<bool> interp = axes.interpolated.empty() ? std::vector<bool>{base.interpolated} : axes.interpolated;
    std::vector<ExperimentConfig> grid;
    for (bool in : interp)
        for (int d : depths)
            for (int w : widths) {
                ExperimentConfig c = base;
                c.depth = d;
                c.width = w;
                c.interpolated = in;
                c.name = base.name + "_d" + std::to_string(d) + "_w" + std::to_string(w) + (in ? "" : "_direct");
                grid.push_back(std::move(c));
            }
    return grid;
}

std::vector<RunRecord> sweep(const std::vector<ExperimentConfig>& grid, int threads) {
    if (grid.empty()) throw ConfigError("sweep grid is empty");
    std::vector<RunRecord> out(grid.size());
    if (threads <= 0) threads = grid.front().threads;
    if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    threads = std::min<int>(threads, static_cast<int>(grid.size()));
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < grid.size(); i = next++) out[i] = run_experiment(grid[i]);
    };
    std::vector<std::thread> pool;
    for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    return out;
}

// ---------------------------------------------------------------------------
// Export

void write_file_atomic(const std::string& path, const std::string& content) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(target.parent_path(), ec);
    }
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw ConfigError("cannot write " + path);
        out << content;
        if (!out) throw ConfigError("cannot write " + path);
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw ConfigError("cannot write " + path);
    }
}

void write_json(const std::string& path, const std::vector<RunRecord>& records) {
    json a = json::array();
    for (const auto& r : records) a.push_back(r.to_json());
    write_file_atomic(path, a.dump(2) + "\n");
}

std::vector<RunRecord> read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read " + path);
    json a;
    try {
        a = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("malformed records file " + path + ": " + e.what());
    }
    std::vector<RunRecord> out;
    for (const auto& j : a) out.push_back(RunRecord::from_json(j));
    return out;
}

void write_training_csv(const std::string& path, const RunRecord& record) {
    std::ostringstream out;
    out << "# config_hash=" << record.config_hash << " seed=" << record.seed << '\n' << record.train.csv();
    write_file_atomic(path, out.str());
}

void write_summary_csv(const std::string& path, const std::vector<RunRecord>& records) {
    std::ostringstream out;
    out.precision(10);
    out << "name,config_hash,seed,model,method,depth,width,interpolated,level,h1_error,relative_h1,rate,noisy,"
           "wall_time,ok,error_kind,message\n";
    auto num = [&](double v) {
        if (std::isfinite(v)) out << v;
    };
    for (const auto& r : records) {
        const auto& c = r.config;
        out << c.name << ',' << r.config_hash << ',' << r.seed << ',' << to_string(c.model) << ','
            << residuals::method_code(c.method) << ',' << c.depth << ',' << c.width << ',' << c.interpolated << ','
            << (r.levels.empty() ? c.levels.back() : r.levels.back().level) << ',';
        num(r.final_h1);
        out << ',';
        num(r.relative_h1);
        out << ',';
        if (r.rate) out << *r.rate;
        out << ',' << r.noisy << ',' << r.wall_time << ',' << r.ok << ',' << r.error_kind << ',';
        std::string msg = r.message;
        for (char& ch : msg)
            if (ch == ',' || ch == '\n') ch = ' ';
        out << msg << '\n';
    }
    write_file_atomic(path, out.str());
}

json convergence_plot_data(const std::vector<RunRecord>& studies) {
    json series = json::array();
    for (const auto& r : studies) {
        json s;
        s["label"] = residuals::method_label(r.config.method);
        s["config_hash"] = r.config_hash;
        s["seed"] = r.seed;
        json x = json::array(), y = json::array();
        for (const auto& l : r.levels) {
            x.push_back(l.h);
            y.push_back(number_or_null(l.error));
        }
        s["x"] = x;
        s["y"] = y;
        s["rate"] = r.rate ? json(*r.rate) : json(nullptr);
        s["noisy"] = r.noisy;
        series.push_back(s);
    }
    return {{"kind", "convergence"}, {"x_label", "h"}, {"y_label", "H1 error"}, {"series", series}};
}

json training_plot_data(const std::vector<RunRecord>& records) {
    json series = json::array();
    for (const auto& r : records) {
        json loss = json::array(), h1x = json::array(), h1y = json::array();
        for (std::size_t i = 0; i < r.train.size(); ++i) {
            loss.push_back(number_or_null(r.train.loss[i]));
            if (std::isfinite(r.train.h1[i])) {
                h1x.push_back(r.train.epoch[i]);
                h1y.push_back(r.train.h1[i]);
            }
        }
        series.push_back({{"label", r.config.name + " " + residuals::method_label(r.config.method)},
                          {"config_hash", r.config_hash},
                          {"seed", r.seed},
                          {"epoch", r.train.epoch},
                          {"loss", loss},
                          {"h1_epoch", h1x},
                          {"h1", h1y},
                          {"phase_boundary", r.train.phase_boundary}});
    }
    return {{"kind", "training"}, {"x_label", "epoch"}, {"series", series}};
}

std::vector<std::string> export_records(const std::vector<RunRecord>& records, const std::string& dir) {
    namespace fs = std::filesystem;
    std::vector<std::string> paths;
    auto put = [&](const std::string& name, const std::string& content) {
        const auto p = (fs::path(dir) / name).string();
        write_file_atomic(p, content);
        paths.push_back(p);
    };
    const auto rj = (fs::path(dir) / "records.json").string();
    write_json(rj, records);
    paths.push_back(rj);
    const auto sc = (fs::path(dir) / "summary.csv").string();
    write_summary_csv(sc, records);
    paths.push_back(sc);
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].train.size() == 0) continue;
        const auto p = (fs::path(dir) / ("train_" + std::to_string(i) + "_" + records[i].config_hash + ".csv")).string();
        write_training_csv(p, records[i]);
        paths.push_back(p);
    }
    std::vector<RunRecord> studies;
    for (const auto& r : records)
        if (r.levels.size() >= 2) studies.push_back(r);
    if (!studies.empty()) put("plot_convergence.json", convergence_plot_data(studies).dump(2) + "\n");
    if (std::any_of(records.begin(), records.end(), [](const RunRecord& r) { return r.train.size() > 0; }))
        put("plot_training.json", training_plot_data(records).dump(2) + "\n");
    return paths;
}

}  // namespace pinnbc::harness
