#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/SparseCore>
#include "json.hpp"

#include "pinnbc/optimizers.hpp"
#include "pinnbc/problems.hpp"
#include "pinnbc/residuals.hpp"

namespace pinnbc::harness {

enum class Model { Pinn, Vpinn };

std::string to_string(Model m);
Model parse_model(const std::string& s);
residuals::BcMethod parse_method(const std::string& code, double lambda, int m, double gamma);

/// One experiment. Serialized as a flat key/value document (YAML or JSON):
///
///   name, problem, domain, model (pinn|vpinn), interpolated,
///   method (ma|mb|mc|md), lambda, m, gamma,
///   levels, k_int, k_test, q, fine_refinements,
///   depth, width, activation (tanh|relu), seeds,
///   adam_epochs, adam_lr, adam_decay, qn_iterations, qn_memory, qn_dense,
///   points (mesh_nodes|uniform_draw), lambda_reg, h1_interval,
///   reference_mesh, reference_values, oracle, noisy_threshold, threads
struct ExperimentConfig {
    std::string name = "experiment";
    std::string problem = "elliptic_sol2";
    std::string domain;  // empty keeps the catalog domain
    Model model = Model::Vpinn;
    bool interpolated = true;
    residuals::BcMethod method = residuals::ExactNormalized{1};
    std::vector<int> levels{2};
    residuals::VpinnOptions vpinn{4, 1, 3, 0};
    int depth = 2;
    int width = 20;
    nn::Activation activation = nn::Activation::Tanh;
    std::vector<std::uint64_t> seeds{0};
    opt::AdamConfig adam;
    opt::QuasiNewtonConfig qn;
    residuals::Placement points = residuals::Placement::MeshNodes;
    double lambda_reg = -1.0;  // negative picks the model default
    int h1_interval = 0;
    std::string reference_mesh;
    std::string reference_values;
    bool oracle = false;
    double noisy_threshold = 0.1;
    int threads = 0;  // 0 uses the hardware concurrency

    void validate() const;
    double regularization() const;
    nlohmann::json to_json() const;
    /// Unknown keys and ill-typed values throw ConfigError.
    static ExperimentConfig from_json(const nlohmann::json& j);
    /// FNV-1a of the canonical JSON, 16 hex digits.
    std::string hash() const;
};

ExperimentConfig parse_config(const std::string& yaml_text);
ExperimentConfig load_config(const std::string& path);

/// Catalog problem with the configured domain override.
problems::ProblemSpec build_problem(const ExperimentConfig& cfg);

struct LevelResult {
    int level = 0;
    double h = 0.0;
    double error = 0.0;
    double relative_error = 0.0;
    std::size_t dofs = 0;
};

struct RunRecord {
    ExperimentConfig config;
    std::string config_hash;
    std::uint64_t seed = 0;  // seed of the reported (best) run
    std::vector<std::uint64_t> seeds;
    std::vector<double> seed_errors;
    opt::TrainRecord train;
    double final_h1 = 0.0;
    double relative_h1 = 0.0;
    std::vector<LevelResult> levels;
    std::optional<double> rate;  // only with at least three levels
    bool noisy = false;
    double wall_time = 0.0;
    bool ok = true;
    std::string stage;       // stage of a failure
    std::string error_kind;  // config, numerical, domain or other
    std::string message;

    nlohmann::json to_json() const;
    static RunRecord from_json(const nlohmann::json& j);
};

/// Trains on the finest configured level with every seed and keeps the best.
/// Module errors are caught and recorded with the failing stage.
RunRecord run_experiment(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Least-squares oracle

/// min |A x - b| over the free trial unknowns x; c = offset + scale .* E x
/// where E scatters x onto `free_columns`.
struct LinearLeastSquares {
    Eigen::SparseMatrix<double> A;
    Eigen::VectorXd b;
    std::vector<Eigen::Index> free_columns;
    residuals::TrialMap map;

    Eigen::VectorXd coefficients(const Eigen::VectorXd& x) const;
};

/// Affine problems only; exact methods fix the boundary nodes to gbar, the
/// penalty method appends sqrt(lambda)-weighted boundary rows.
LinearLeastSquares build_least_squares(const residuals::VpinnResiduals& res, const residuals::TrialMap& map);
/// Sparse LU on the augmented system; throws NumericalError if it is singular.
Eigen::VectorXd solve_least_squares(const Eigen::SparseMatrix<double>& A, const Eigen::VectorXd& b);

struct OracleResult {
    std::shared_ptr<const residuals::VpinnDiscretization> discretization;
    fem::TrialFunction solution;
    double h1 = 0.0;
    double relative_h1 = 0.0;
    double loss = 0.0;  // residual norm squared plus penalty
    double h = 0.0;     // coarse meshsize
};

/// Training-free minimizer of the interpolated VPINN loss over U_H.
OracleResult least_squares_oracle(const problems::ProblemSpec& spec, const residuals::BcMethod& method, int level,
                                  const residuals::VpinnOptions& opts);

// ---------------------------------------------------------------------------
// Studies, sweeps, export

/// Least-squares slope of log(error) against log(h).
double fit_rate(const std::vector<double>& h, const std::vector<double>& errors);
/// True when some refinement increases the error by more than `threshold` (relative).
bool is_noisy(const std::vector<double>& errors, double threshold = 0.1);

/// One run per level (oracle or trained, per cfg.oracle) and the fitted rate.
RunRecord convergence_study(const ExperimentConfig& cfg);

struct SweepAxes {
    std::vector<int> depths;
    std::vector<int> widths;
    std::vector<bool> interpolated{true};
};

std::vector<ExperimentConfig> expand_grid(const ExperimentConfig& base, const SweepAxes& axes);
/// Runs every configuration, concurrently up to `threads` (0: cfg default).
std::vector<RunRecord> sweep(const std::vector<ExperimentConfig>& grid, int threads = 0);

/// Writes records.json, summary.csv, one training CSV per record and plot
/// data into `dir`. Files are written atomically. Returns the paths.
std::vector<std::string> export_records(const std::vector<RunRecord>& records, const std::string& dir);

void write_json(const std::string& path, const std::vector<RunRecord>& records);
std::vector<RunRecord> read_json(const std::string& path);
/// Training history with a '#' header carrying the config hash and seed.
void write_training_csv(const std::string& path, const RunRecord& record);
/// One row per record.
void write_summary_csv(const std::string& path, const std::vector<RunRecord>& records);
/// Error against h, one series per method variant.
nlohmann::json convergence_plot_data(const std::vector<RunRecord>& studies);
/// Loss and H1 error against epoch, one series per record.
nlohmann::json training_plot_data(const std::vector<RunRecord>& records);

/// Writes through a temporary file and a rename.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace pinnbc::harness
