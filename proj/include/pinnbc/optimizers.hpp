#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pinnbc/mlp.hpp"

namespace pinnbc::opt {

struct AdamConfig {
    double lr0 = 1e-3;
    double decay_rate = 1.0;  // per-epoch multiplier of the step size
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int epochs = 2000;

    void validate() const;
    /// Multiplier that shrinks the step size by `factor` over `epochs` epochs.
    static double decay_over(int epochs, double factor = 10.0);
};

struct WolfeParams {
    double c1 = 1e-4;
    double c2 = 0.9;
    int max_evals = 30;
};

struct QuasiNewtonConfig {
    int memory = 50;
    bool dense = false;  // full inverse-Hessian BFGS instead of limited memory
    int max_iters = 500;
    double grad_tol = 1e-12;
    WolfeParams line_search;

    void validate() const;
};

enum class Phase { Adam = 0, QuasiNewton = 1 };

enum class StopReason { Completed, MaxIterations, GradientTolerance, IdenticalIterates, LineSearchFailure, NonFinite };

std::string to_string(StopReason r);

/// Per-epoch history. Entry k holds the loss at the iterate entering epoch k
/// (the last entry is the returned iterate); h1 is NaN where not logged.
struct TrainRecord {
    std::vector<int> epoch;
    std::vector<Phase> phase;
    std::vector<double> loss;
    std::vector<double> h1;
    int phase_boundary = -1;  // entry where the quasi-Newton phase starts
    StopReason reason = StopReason::Completed;
    std::string diagnostic;

    std::size_t size() const { return loss.size(); }
    void push(int ep, Phase ph, double l, double e);
    /// Columns: epoch,phase,loss,h1_error (blank when not logged).
    void write_csv(const std::string& path) const;
    std::string csv() const;
};

/// Optional error probe called every `interval` epochs and on the final iterate.
struct Monitor {
    int interval = 0;
    std::function<double(const Eigen::VectorXd&)> h1;
};

struct TrainResult {
    Eigen::VectorXd w;
    TrainRecord record;
};

TrainResult adam_run(const nn::ScalarProgram& f, const Eigen::VectorXd& w0, const AdamConfig& cfg,
                     const Monitor& monitor = {});

TrainResult quasi_newton_run(const nn::ScalarProgram& f, const Eigen::VectorXd& w0, const QuasiNewtonConfig& cfg,
                             const Monitor& monitor = {});

/// ADAM followed by quasi-Newton from the ADAM result.
TrainResult train_schedule(const nn::ScalarProgram& f, const Eigen::VectorXd& w0, const AdamConfig& adam,
                           const QuasiNewtonConfig& qn, const Monitor& monitor = {});

}  // namespace pinnbc::opt
