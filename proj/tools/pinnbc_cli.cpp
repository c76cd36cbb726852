#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pinnbc/errors.hpp"
#include "pinnbc/harness.hpp"

using namespace pinnbc;
using namespace pinnbc::harness;

namespace {

constexpr int kConfigExit = 2;
constexpr int kNumericalExit = 3;

struct Overrides {
    std::string config;
    std::string out_dir = "out";
    std::optional<std::uint64_t> seed;
    std::vector<int> levels;
    std::optional<std::string> method;
    std::optional<double> lambda;
    std::optional<int> m;
    std::optional<double> gamma;
    std::optional<std::string> model;
    std::optional<std::string> problem;
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config, "Experiment file (YAML key/value)");
    cmd->add_option("--out-dir", o.out_dir, "Output directory")->capture_default_str();
    cmd->add_option("--seed", o.seed, "Single seed replacing the configured list");
    cmd->add_option("--levels", o.levels, "Mesh levels")->delimiter(',');
    cmd->add_option("--method", o.method, "Boundary method")->check(CLI::IsMember({"ma", "mb", "mc", "md"}));
    cmd->add_option("--lambda", o.lambda, "Penalty weight for ma");
    cmd->add_option("--m", o.m, "ADF normalization order for mb");
    cmd->add_option("--gamma", o.gamma, "Nitsche weight for md");
    cmd->add_option("--model", o.model, "Model")->check(CLI::IsMember({"pinn", "vpinn"}));
    cmd->add_option("--problem", o.problem, "Catalog problem id");
}

ExperimentConfig resolve(const Overrides& o) {
    ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
    if (o.seed) c.seeds = {*o.seed};
    if (!o.levels.empty()) c.levels = o.levels;
    if (o.model) c.model = parse_model(*o.model);
    if (o.problem) c.problem = *o.problem;
    if (o.method || o.lambda || o.m || o.gamma) {
        const auto j = c.to_json();
        c.method = parse_method(o.method.value_or(j["method"].get<std::string>()),
                                o.lambda.value_or(j["lambda"].get<double>()), o.m.value_or(j["m"].get<int>()),
                                o.gamma.value_or(j["gamma"].get<double>()));
    }
    c.validate();
    return c;
}

/// Maps the first failed record to an exit code.
int status_of(const std::vector<RunRecord>& records) {
    for (const auto& r : records) {
        if (r.ok) continue;
        std::cerr << r.config.name << ": " << r.stage << ": " << r.message << '\n';
        if (r.error_kind == "config") return kConfigExit;
        if (r.error_kind == "numerical") return kNumericalExit;
        return 1;
    }
    return 0;
}

void report(const RunRecord& r) {
    std::cout << r.config.name << " [" << r.config_hash << "] seed=" << r.seed;
    if (!r.ok) {
        std::cout << " FAILED at " << r.stage << '\n';
        return;
    }
    for (const auto& l : r.levels)
        std::cout << "\n  level " << l.level << " h=" << l.h << " dofs=" << l.dofs << " H1=" << l.error
                  << " rel=" << l.relative_error;
    if (r.rate) std::cout << "\n  rate=" << *r.rate << (r.noisy ? " (noisy)" : "");
    std::cout << "\n  wall=" << r.wall_time << "s\n";
}

int finish(const std::vector<RunRecord>& records, const std::string& out_dir) {
    for (const auto& r : records) report(r);
    for (const auto& p : export_records(records, out_dir)) std::cout << "wrote " << p << '\n';
    return status_of(records);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dirichlet boundary-condition laboratory for PINN and VPINN solvers"};
    app.require_subcommand(1);

    Overrides run_o, study_o, oracle_o, sweep_o;
    auto* run = app.add_subcommand("run", "Train one configuration on its finest level");
    add_common(run, run_o);

    auto* study = app.add_subcommand("study", "Convergence study over the configured levels");
    add_common(study, study_o);
    bool study_oracle = false;
    study->add_flag("--oracle", study_oracle, "Use the least-squares oracle instead of training");

    auto* oracle = app.add_subcommand("oracle", "Least-squares oracle convergence study");
    add_common(oracle, oracle_o);

    auto* sw = app.add_subcommand("sweep", "Architecture sweep");
    add_common(sw, sweep_o);
    std::vector<int> depths, widths;
    bool with_direct = false;
    int threads = 0;
    sw->add_option("--depths", depths, "Hidden layer counts")->delimiter(',');
    sw->add_option("--widths", widths, "Hidden layer widths")->delimiter(',');
    sw->add_flag("--with-direct", with_direct, "Also train VPINNs without interpolation");
    sw->add_option("--threads", threads, "Concurrent runs (0: configured default)");

    auto* ex = app.add_subcommand("export", "Re-export a records file");
    std::string input, ex_out = "out";
    ex->add_option("--input", input, "records.json to read")->required();
    ex->add_option("--out-dir", ex_out, "Output directory")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kConfigExit;
    }

    try {
        if (*run) {
            return finish({run_experiment(resolve(run_o))}, run_o.out_dir);
        }
        if (*study) {
            auto c = resolve(study_o);
            c.oracle = c.oracle || study_oracle;
            return finish({convergence_study(c)}, study_o.out_dir);
        }
        if (*oracle) {
            auto c = resolve(oracle_o);
            c.oracle = true;
            if (c.levels.size() < 3) {
                std::vector<RunRecord> out;
                for (int level : c.levels) {
                    const auto o = least_squares_oracle(build_problem(c), c.method, level, c.vpinn);
                    RunRecord r;
                    r.config = c;
                    r.config_hash = c.hash();
                    r.final_h1 = o.h1;
                    r.relative_h1 = o.relative_h1;
                    r.levels.push_back({level, o.h, o.h1, o.relative_h1, o.discretization->trial().dim()});
                    out.push_back(std::move(r));
                }
                return finish(out, oracle_o.out_dir);
            }
            return finish({convergence_study(c)}, oracle_o.out_dir);
        }
        if (*sw) {
            SweepAxes axes{depths, widths, {true}};
            if (with_direct) axes.interpolated.push_back(false);
            return finish(sweep(expand_grid(resolve(sweep_o), axes), threads), sweep_o.out_dir);
        }
        if (*ex) {
            const auto records = read_json(input);
            for (const auto& p : export_records(records, ex_out)) std::cout << "wrote " << p << '\n';
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return kConfigExit;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return kNumericalExit;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
