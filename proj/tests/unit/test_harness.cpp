#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <Eigen/Dense>

#include "doctest.h"
#include "pinnbc/errors.hpp"
#include "pinnbc/harness.hpp"

using namespace pinnbc;
using namespace pinnbc::harness;

namespace {

namespace fs = std::filesystem;

ExperimentConfig tiny_config() {
    ExperimentConfig c;
    c.name = "tiny";
    c.levels = {1};
    c.depth = 1;
    c.width = 5;
    c.seeds = {3};
    c.adam.epochs = 30;
    c.adam.lr0 = 1e-2;
    c.qn.max_iters = 10;
    return c;
}

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("pinnbc_harness_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::size_t count_lines(const fs::path& p) {
    std::ifstream in(p);
    std::size_t n = 0;
    std::string line;
    while (std::getline(in, line)) ++n;
    return n;
}

LinearLeastSquares small_system(const residuals::BcMethod& method) {
    static const auto spec = problems::catalog("elliptic_sol2");
    static const residuals::VpinnDiscretization disc(spec, fem::generate_mesh(spec.domain, 1), {3, 1, 2}, false);
    const residuals::VpinnResiduals res(spec, disc, method);
    return build_least_squares(res, residuals::make_trial_map(spec, disc.trial(), method));
}

}  // namespace

TEST_CASE("config parsing") {
    const auto c = parse_config(
        "name: demo\n"
        "problem: elliptic_sol5\n"
        "model: vpinn\n"
        "method: ma\n"
        "lambda: 1000\n"
        "levels: [1, 2, 3]\n"
        "k_int: 5\n"
        "k_test: 2\n"
        "q: 5\n"
        "depth: 3\n"
        "width: 7\n"
        "seeds: [4, 5]\n"
        "adam_epochs: 12\n"
        "qn_dense: true\n"
        "points: uniform_draw\n");
    CHECK(c.name == "demo");
    CHECK(c.problem == "elliptic_sol5");
    REQUIRE(std::holds_alternative<residuals::Penalty>(c.method));
    CHECK(std::get<residuals::Penalty>(c.method).lambda == 1000.0);
    CHECK(c.levels == std::vector<int>{1, 2, 3});
    CHECK(c.vpinn.k_int == 5);
    CHECK(c.vpinn.k_test == 2);
    CHECK(c.vpinn.q == 5);
    CHECK(c.depth == 3);
    CHECK(c.width == 7);
    CHECK(c.seeds == std::vector<std::uint64_t>{4, 5});
    CHECK(c.adam.epochs == 12);
    CHECK(c.qn.dense);
    CHECK(c.points == residuals::Placement::UniformDraw);
    CHECK_NOTHROW(c.validate());

    const auto back = ExperimentConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());

    // A single level is accepted as a scalar.
    CHECK(parse_config("levels: 2\n").levels == std::vector<int>{2});
    CHECK(std::get<residuals::ExactNormalized>(parse_config("method: mb\nm: 2\n").method).m == 2);
    CHECK(std::get<residuals::Nitsche>(parse_config("method: md\ngamma: 10\n").method).gamma == 10.0);
}

TEST_CASE("config errors") {
    CHECK_THROWS_AS(parse_config("bogus_key: 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("width: wide\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("width: 2.5\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("seeds: [-1]\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("method: me\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("model: cnn\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("method: ma\nlambda: -1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[1, 2]\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("a: [1, 2\n"), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/config.yaml"), ConfigError);

    CHECK_THROWS_AS(parse_config("problem: nowhere\n").validate(), ConfigError);
    CHECK_THROWS_AS(parse_config("model: pinn\nmethod: md\n").validate(), ConfigError);
    CHECK_THROWS_AS(parse_config("interpolated: false\nmethod: md\n").validate(), ConfigError);
    CHECK_THROWS_AS(parse_config("problem: eikonal\noracle: true\n").validate(), ConfigError);
    CHECK_THROWS_AS(parse_config("levels: []\n").validate(), ConfigError);
    CHECK_THROWS_AS(parse_config("reference_mesh: m.txt\n").validate(), ConfigError);
    CHECK_THROWS_AS(parse_config("problem: elasticity\ndomain: unit_square\n").validate(), ConfigError);
}

TEST_CASE("config file on disk") {
    const auto dir = scratch("cfg");
    const auto path = (dir / "run.yaml").string();
    std::ofstream(path) << "name: from_file\nwidth: 9\n";
    const auto c = load_config(path);
    CHECK(c.name == "from_file");
    CHECK(c.width == 9);
}

TEST_CASE("shipped presets are valid") {
    int n = 0;
    for (const auto& e : fs::directory_iterator(fs::path(PINNBC_SOURCE_DIR) / "configs")) {
        if (e.path().extension() != ".yaml") continue;
        INFO(e.path().string());
        CHECK_NOTHROW(load_config(e.path().string()).validate());
        ++n;
    }
    CHECK(n >= 4);
}

TEST_CASE("config hash") {
    const ExperimentConfig a = tiny_config();
    ExperimentConfig b = a;
    CHECK(a.hash() == b.hash());
    CHECK(a.hash().size() == 16);
    CHECK(a.hash().find_first_not_of("0123456789abcdef") == std::string::npos);
    b.threads = 7;
    CHECK(a.hash() == b.hash());
    b.seeds = {4};
    CHECK(a.hash() != b.hash());
    b = a;
    b.method = residuals::Penalty{10.0};
    CHECK(a.hash() != b.hash());
    CHECK(ExperimentConfig::from_json(a.to_json()).hash() == a.hash());
}

TEST_CASE("rate fit") {
    // e = h^4 exactly.
    CHECK(fit_rate({1.0, 0.5, 0.25}, {1.0, 1.0 / 16, 1.0 / 256}) == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(std::abs(fit_rate({1.0, 0.5, 0.25}, {0.3, 0.3, 0.3})) < 1e-12);
    CHECK(fit_rate({0.2, 0.1, 0.05, 0.025}, {3e-2, 3e-2 / 8, 3e-2 / 64, 3e-2 / 512}) ==
          doctest::Approx(3.0).epsilon(1e-12));
    // Slope of the least-squares line through noisy data lies between the extreme pairwise slopes.
    const double r = fit_rate({1.0, 0.5, 0.25}, {1.0, 0.3, 0.05});
    CHECK(r > std::log2(1.0 / 0.3));
    CHECK(r < std::log2(0.3 / 0.05));
    CHECK_THROWS_AS(fit_rate({1.0}, {1.0}), ConfigError);
    CHECK_THROWS_AS(fit_rate({1.0, 0.5}, {1.0}), ConfigError);
    CHECK_THROWS_AS(fit_rate({1.0, 0.5}, {1.0, 0.0}), NumericalError);
    CHECK_THROWS_AS(fit_rate({0.5, 0.5}, {1.0, 0.1}), NumericalError);
}

TEST_CASE("noisy flag") {
    CHECK_FALSE(is_noisy({1.0, 0.5, 0.25}));
    CHECK_FALSE(is_noisy({1.0, 1.09, 0.5}));
    CHECK(is_noisy({1.0, 1.11, 0.5}));
    CHECK(is_noisy({1.0, 0.5, 0.8}));
    CHECK_FALSE(is_noisy({1.0, 1.3}, 0.5));
}

TEST_CASE("least-squares solve matches dense QR") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> nd;
    std::bernoulli_distribution keep(0.3);
    const int m = 60, n = 20;
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(m, n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            if (keep(rng) || i == j) D(i, j) = nd(rng);
    Eigen::VectorXd b(m);
    for (int i = 0; i < m; ++i) b[i] = nd(rng);
    const Eigen::SparseMatrix<double> A = D.sparseView();
    const Eigen::VectorXd x = solve_least_squares(A, b);
    const Eigen::VectorXd ref = D.colPivHouseholderQr().solve(b);
    CHECK((x - ref).norm() / ref.norm() < 1e-10);

    Eigen::SparseMatrix<double> S(3, 2);
    S.insert(0, 0) = 1.0;
    S.insert(1, 0) = 2.0;
    CHECK_THROWS_AS(solve_least_squares(S, Eigen::VectorXd::Ones(3)), NumericalError);
}

TEST_CASE("oracle minimizer is optimal") {
    for (const residuals::BcMethod method :
         {residuals::BcMethod{residuals::Penalty{10.0}}, residuals::BcMethod{residuals::ExactNormalized{1}}}) {
        INFO(residuals::method_label(method));
        const auto ls = small_system(method);
        const Eigen::VectorXd x = solve_least_squares(ls.A, ls.b);
        const double f0 = (ls.A * x - ls.b).squaredNorm();
        // Normal equations.
        const Eigen::VectorXd g = ls.A.transpose() * (ls.A * x - ls.b);
        CHECK(g.norm() < 1e-9 * std::max(1.0, ls.b.norm()));
        std::mt19937_64 rng(5);
        std::normal_distribution<double> nd;
        for (int t = 0; t < 10; ++t) {
            Eigen::VectorXd d(x.size());
            for (Eigen::Index i = 0; i < d.size(); ++i) d[i] = nd(rng);
            d *= 1e-3 / d.norm();
            CHECK((ls.A * (x + d) - ls.b).squaredNorm() >= f0);
        }
    }
}

TEST_CASE("oracle is invariant under row permutation") {
    const auto ls = small_system(residuals::Penalty{100.0});
    const Eigen::VectorXd x = solve_least_squares(ls.A, ls.b);
    std::vector<int> perm(static_cast<std::size_t>(ls.A.rows()));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937(2));
    Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> P(ls.A.rows());
    for (std::size_t i = 0; i < perm.size(); ++i) P.indices()[static_cast<Eigen::Index>(i)] = perm[i];
    const Eigen::SparseMatrix<double> PA = P * ls.A;
    const Eigen::VectorXd Pb = P * ls.b;
    const Eigen::VectorXd y = solve_least_squares(PA, Pb);
    CHECK((x - y).cwiseAbs().maxCoeff() < 1e-10 * std::max(1.0, x.cwiseAbs().maxCoeff()));
}

TEST_CASE("oracle boundary handling") {
    const auto spec = problems::catalog("elliptic_sol2");
    const residuals::VpinnOptions opts{3, 1, 2};
    // Exact methods hold the boundary coefficients at the data.
    const auto ls = small_system(residuals::ExactNormalized{1});
    const Eigen::VectorXd c = ls.coefficients(solve_least_squares(ls.A, ls.b));
    CHECK(ls.free_columns.size() < static_cast<std::size_t>(c.size()));
    // Penalty rows add one per Dirichlet dof; exact methods free the remaining dofs only.
    const auto pen = small_system(residuals::Penalty{1.0});
    CHECK(ls.A.cols() == pen.A.cols() - (pen.A.rows() - ls.A.rows()));

    const auto strong = least_squares_oracle(spec, residuals::ExactNormalized{1}, 1, opts);
    const auto weak = least_squares_oracle(spec, residuals::Penalty{1e-8}, 1, opts);
    const auto tight = least_squares_oracle(spec, residuals::Penalty{1e8}, 1, opts);
    CHECK(std::isfinite(strong.h1));
    CHECK(strong.h1 > 0.0);
    CHECK(strong.relative_h1 < 1.0);
    CHECK(tight.h1 == doctest::Approx(strong.h1).epsilon(1e-4));
    CHECK(weak.loss <= tight.loss);
    CHECK(strong.h == doctest::Approx(fem::generate_mesh(spec.domain, 1).meshsize));

    CHECK_THROWS_AS(least_squares_oracle(problems::catalog("eikonal"), residuals::ExactNormalized{1}, 1, opts),
                    ConfigError);
    CHECK_THROWS_AS(least_squares_oracle(problems::catalog("parametric"), residuals::ExactNormalized{1}, 1, opts),
                    ConfigError);
}

TEST_CASE("oracle error shrinks under refinement") {
    const auto spec = problems::catalog("elliptic_sol2");
    double prev = std::numeric_limits<double>::infinity();
    for (int level = 0; level <= 2; ++level) {
        const auto o = least_squares_oracle(spec, residuals::Nitsche{10.0}, level, {2, 1, 1});
        CHECK(o.h1 < prev);
        prev = o.h1;
    }
}

TEST_CASE("run_experiment is deterministic") {
    const auto cfg = tiny_config();
    const auto a = run_experiment(cfg);
    const auto b = run_experiment(cfg);
    REQUIRE(a.ok);
    REQUIRE(b.ok);
    CHECK(a.train.loss == b.train.loss);
    CHECK(a.final_h1 == b.final_h1);
    CHECK(a.seed == 3);
    CHECK(a.config_hash == cfg.hash());
    CHECK(a.train.phase_boundary == cfg.adam.epochs);
    REQUIRE(a.levels.size() == 1);
    CHECK(a.levels[0].level == 1);
    CHECK(a.levels[0].dofs > 0);
    CHECK(a.relative_h1 > 0.0);
    CHECK(a.train.loss.back() < a.train.loss.front());
}

TEST_CASE("run_experiment keeps the best seed") {
    auto cfg = tiny_config();
    cfg.seeds = {1, 2, 3};
    const auto r = run_experiment(cfg);
    REQUIRE(r.ok);
    REQUIRE(r.seed_errors.size() == 3);
    const double best = *std::min_element(r.seed_errors.begin(), r.seed_errors.end());
    CHECK(r.final_h1 == best);
    for (std::size_t i = 0; i < 3; ++i) {
        auto one = cfg;
        one.seeds = {cfg.seeds[i]};
        CHECK(run_experiment(one).final_h1 == r.seed_errors[i]);
    }
}

TEST_CASE("run_experiment model variants") {
    auto pinn = tiny_config();
    pinn.model = Model::Pinn;
    pinn.method = residuals::ExactProduct{};
    const auto p = run_experiment(pinn);
    CHECK(p.ok);
    CHECK(std::isfinite(p.final_h1));

    auto direct = tiny_config();
    direct.interpolated = false;
    const auto d = run_experiment(direct);
    CHECK(d.ok);
    CHECK(std::isfinite(d.final_h1));

    auto monitored = tiny_config();
    monitored.h1_interval = 10;
    const auto m = run_experiment(monitored);
    REQUIRE(m.ok);
    CHECK(std::isfinite(m.train.h1[0]));
    CHECK(std::isfinite(m.train.h1[10]));
    CHECK(std::isnan(m.train.h1[5]));
}

TEST_CASE("run_experiment records failures") {
    auto bad = tiny_config();
    bad.width = 0;
    const auto r = run_experiment(bad);
    CHECK_FALSE(r.ok);
    CHECK(r.stage == "config");
    CHECK(r.error_kind == "config");
    CHECK_FALSE(r.message.empty());
    CHECK(std::isnan(r.final_h1));

    auto missing = tiny_config();
    missing.reference_mesh = "/nonexistent/mesh.txt";
    missing.reference_values = "/nonexistent/values.txt";
    const auto s = run_experiment(missing);
    CHECK_FALSE(s.ok);
    CHECK(s.stage == "setup");
    CHECK(s.error_kind == "config");
}

TEST_CASE("convergence study in oracle mode") {
    auto cfg = tiny_config();
    cfg.oracle = true;
    cfg.levels = {0, 1, 2};
    cfg.vpinn = {2, 1, 1};
    const auto r = convergence_study(cfg);
    REQUIRE(r.ok);
    REQUIRE(r.levels.size() == 3);
    REQUIRE(r.rate.has_value());
    CHECK(r.levels[1].h == doctest::Approx(r.levels[0].h / 2));
    CHECK(r.levels[2].h == doctest::Approx(r.levels[1].h / 2));
    std::vector<double> hs, es;
    for (const auto& l : r.levels) {
        hs.push_back(l.h);
        es.push_back(l.error);
    }
    CHECK(*r.rate == doctest::Approx(fit_rate(hs, es)));
    CHECK(*r.rate > 1.0);
    CHECK_FALSE(r.noisy);
    CHECK(r.final_h1 == r.levels.back().error);

    auto mismatch = cfg;
    mismatch.vpinn.q = 3;
    const auto m = convergence_study(mismatch);
    CHECK_FALSE(m.ok);
    CHECK(m.error_kind == "config");

    auto short_list = cfg;
    short_list.levels = {0, 1};
    CHECK_FALSE(convergence_study(short_list).ok);
}

TEST_CASE("sweep") {
    const auto base = tiny_config();
    SweepAxes axes;
    axes.depths = {1, 2};
    axes.widths = {3, 5};
    axes.interpolated = {true, false};
    const auto grid = expand_grid(base, axes);
    CHECK(grid.size() == 8);
    std::set<std::string> names;
    for (const auto& g : grid) names.insert(g.name);
    CHECK(names.size() == 8);
    CHECK(expand_grid(base, {}).size() == 1);

    const auto single = sweep({base}, 1);
    REQUIRE(single.size() == 1);
    const auto direct = run_experiment(base);
    CHECK(single[0].final_h1 == direct.final_h1);
    CHECK(single[0].train.loss == direct.train.loss);

    auto bad = base;
    bad.depth = 0;
    const auto mixed = sweep({base, bad, base}, 2);
    REQUIRE(mixed.size() == 3);
    CHECK(mixed[0].ok);
    CHECK_FALSE(mixed[1].ok);
    CHECK(mixed[2].ok);
    CHECK(mixed[0].final_h1 == direct.final_h1);
    CHECK(mixed[2].final_h1 == direct.final_h1);

    CHECK_THROWS_AS(sweep({}), ConfigError);
}

TEST_CASE("record export") {
    auto cfg = tiny_config();
    cfg.h1_interval = 10;
    const auto trained = run_experiment(cfg);
    auto bad = cfg;
    bad.width = 0;
    const auto failed = run_experiment(bad);
    auto study_cfg = tiny_config();
    study_cfg.oracle = true;
    study_cfg.levels = {0, 1, 2};
    study_cfg.vpinn = {2, 1, 1};
    const auto mb = convergence_study(study_cfg);
    study_cfg.method = residuals::Penalty{1e3};
    const auto ma = convergence_study(study_cfg);
    const std::vector<RunRecord> records{trained, failed, mb, ma};

    const auto dir = scratch("export");
    const auto paths = export_records(records, dir.string());
    for (const auto& p : paths) CHECK(fs::exists(p));
    for (const auto& p : fs::directory_iterator(dir)) CHECK(p.path().extension() != ".tmp");

    const auto back = read_json((dir / "records.json").string());
    REQUIRE(back.size() == records.size());
    for (std::size_t i = 0; i < records.size(); ++i) CHECK(back[i].to_json() == records[i].to_json());
    CHECK(std::isnan(back[1].final_h1));
    CHECK(back[1].stage == "config");
    CHECK(back[2].rate.has_value());

    // Training CSV: hash line, column header, one row per logged epoch.
    const auto train_csv = dir / ("train_0_" + trained.config_hash + ".csv");
    REQUIRE(fs::exists(train_csv));
    CHECK(count_lines(train_csv) == trained.train.size() + 2);
    std::ifstream in(train_csv);
    std::string first;
    std::getline(in, first);
    CHECK(first.find(trained.config_hash) != std::string::npos);
    CHECK(first.find("seed=3") != std::string::npos);

    CHECK(count_lines(dir / "summary.csv") == records.size() + 1);

    const auto plot = convergence_plot_data({mb, ma});
    REQUIRE(plot["series"].size() == 2);
    CHECK(plot["series"][0]["label"] != plot["series"][1]["label"]);
    CHECK(plot["series"][0]["x"].size() == 3);
    CHECK(plot["series"][0]["config_hash"] == mb.config_hash);
    CHECK(fs::exists(dir / "plot_convergence.json"));

    const auto tplot = training_plot_data({trained});
    REQUIRE(tplot["series"].size() == 1);
    CHECK(tplot["series"][0]["loss"].size() == trained.train.size());
    CHECK(tplot["series"][0]["phase_boundary"] == trained.train.phase_boundary);
    CHECK(tplot["series"][0]["seed"] == 3);
}

TEST_CASE("atomic writes replace existing files") {
    const auto dir = scratch("atomic");
    const auto p = (dir / "nested" / "f.txt").string();
    write_file_atomic(p, "one");
    write_file_atomic(p, "two");
    std::ifstream in(p);
    std::string s;
    in >> s;
    CHECK(s == "two");
    CHECK_FALSE(fs::exists(p + ".tmp"));
    CHECK_THROWS_AS(read_json((dir / "missing.json").string()), ConfigError);
}
