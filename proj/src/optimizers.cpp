#include "pinnbc/optimizers.hpp"

#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>

#include "pinnbc/errors.hpp"

namespace pinnbc::opt {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool finite(double f, const Eigen::VectorXd& g) { return std::isfinite(f) && g.allFinite(); }

double probe(const Monitor& m, const Eigen::VectorXd& w, int k, bool force) {
    if (!m.h1) return kNaN;
    if (force || (m.interval > 0 && k % m.interval == 0)) return m.h1(w);
    return kNaN;
}

}  // namespace

void AdamConfig::validate() const {
    if (!(lr0 > 0)) throw ConfigError("ADAM lr0 must be positive");
    if (!(decay_rate > 0 && decay_rate <= 1)) throw ConfigError("ADAM decay_rate must be in (0, 1]");
    if (!(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1)) throw ConfigError("ADAM betas must be in (0, 1)");
    if (epochs < 0) throw ConfigError("ADAM epochs must be >= 0");
}

double AdamConfig::decay_over(int epochs, double factor) {
    if (epochs <= 0) return 1.0;
    return std::pow(1.0 / factor, 1.0 / epochs);
}

void QuasiNewtonConfig::validate() const {
    if (!dense && memory < 1) throw ConfigError("quasi-Newton memory must be >= 1");
    if (max_iters < 0) throw ConfigError("quasi-Newton max_iters must be >= 0");
    if (!(line_search.c1 > 0 && line_search.c1 < line_search.c2 && line_search.c2 < 1)) {
        throw ConfigError("Wolfe constants must satisfy 0 < c1 < c2 < 1");
    }
}

std::string to_string(StopReason r) {
    switch (r) {
        case StopReason::Completed: return "completed";
        case StopReason::MaxIterations: return "max iterations";
        case StopReason::GradientTolerance: return "gradient tolerance";
        case StopReason::IdenticalIterates: return "identical iterates";
        case StopReason::LineSearchFailure: return "line search failure";
        case StopReason::NonFinite: return "non-finite loss";
    }
    return "unknown";
}

void TrainRecord::push(int ep, Phase ph, double l, double e) {
    epoch.push_back(ep);
    phase.push_back(ph);
    loss.push_back(l);
    h1.push_back(e);
}

std::string TrainRecord::csv() const {
    std::ostringstream out;
    out.precision(17);
    out << "epoch,phase,loss,h1_error\n";
    for (std::size_t i = 0; i < size(); ++i) {
        out << epoch[i] << ',' << (phase[i] == Phase::Adam ? "adam" : "quasi_newton") << ',' << loss[i] << ',';
        if (!std::isnan(h1[i])) out << h1[i];
        out << '\n';
    }
    return out.str();
}

void TrainRecord::write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << csv();
}

// ---------------------------------------------------------------------------
// ADAM

TrainResult adam_run(const nn::ScalarProgram& f, const Eigen::VectorXd& w0, const AdamConfig& cfg, const Monitor& monitor) {
    cfg.validate();
    TrainResult res{w0, {}};
    Eigen::VectorXd& w = res.w;
    Eigen::VectorXd m = Eigen::VectorXd::Zero(w.size()), v = m, g(w.size()), w_prev = w;
    double lr = cfg.lr0, b1t = 1.0, b2t = 1.0;
    for (int k = 0; k <= cfg.epochs; ++k) {
        g.setZero();
        const double loss = f.evaluate(w, &g);
        if (!finite(loss, g)) {
            res.record.reason = StopReason::NonFinite;
            res.record.diagnostic = "non-finite loss or gradient at ADAM epoch " + std::to_string(k);
            if (k > 0) w = w_prev;
            return res;
        }
        res.record.push(k, Phase::Adam, loss, probe(monitor, w, k, k == cfg.epochs));
        if (k == cfg.epochs) break;
        w_prev = w;
        b1t *= cfg.beta1;
        b2t *= cfg.beta2;
        m = cfg.beta1 * m + (1 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1 - cfg.beta2) * g.cwiseAbs2();
        const double c1 = 1.0 / (1 - b1t), c2 = 1.0 / (1 - b2t);
        w.array() -= lr * (c1 * m.array()) / ((c2 * v.array()).sqrt() + cfg.eps);
        lr *= cfg.decay_rate;
    }
    res.record.reason = StopReason::Completed;
    return res;
}

// ---------------------------------------------------------------------------
// Quasi-Newton

namespace {

struct LinePoint {
    double a = 0, f = 0, d = 0;
    Eigen::VectorXd g;
};

class LineSearch {
public:
    LineSearch(const nn::ScalarProgram& f, const Eigen::VectorXd& w, const Eigen::VectorXd& dir, double f0, double d0,
               const WolfeParams& p)
        : f_(f), w_(w), dir_(dir), f0_(f0), d0_(d0), p_(p) {}

    /// Strong-Wolfe step; falls back to the best Armijo point when the budget runs out.
    bool run(double a_init, LinePoint& out) {
        LinePoint prev{0.0, f0_, d0_, {}};
        double a = a_init;
        for (int i = 0; i < p_.max_evals; ++i) {
            LinePoint cur = eval(a);
            if (!armijo(cur) || (i > 0 && cur.f >= prev.f)) return zoom(prev, cur, out);
            if (std::abs(cur.d) <= -p_.c2 * d0_) {
                out = std::move(cur);
                return true;
            }
            if (cur.d >= 0) return zoom(cur, prev, out);
            prev = std::move(cur);
            a *= 2.0;
        }
        return fallback(out);
    }

    int evaluations() const { return evals_; }

private:
    bool armijo(const LinePoint& p) const { return std::isfinite(p.f) && p.f <= f0_ + p_.c1 * p.a * d0_; }

    LinePoint eval(double a) {
        ++evals_;
        LinePoint p;
        p.a = a;
        p.g = Eigen::VectorXd::Zero(w_.size());
        p.f = f_.evaluate(w_ + a * dir_, &p.g);
        p.d = p.g.allFinite() ? p.g.dot(dir_) : std::numeric_limits<double>::quiet_NaN();
        if (!std::isfinite(p.f) || !std::isfinite(p.d)) p.f = std::numeric_limits<double>::infinity();
        if (armijo(p) && (!best_ || p.f < best_->f)) best_ = p;
        return p;
    }

    bool zoom(LinePoint lo, LinePoint hi, LinePoint& out) {
        while (evals_ < p_.max_evals) {
            double a = cubic_min(lo, hi);
            const double lo_a = std::min(lo.a, hi.a), hi_a = std::max(lo.a, hi.a);
            const double span = hi_a - lo_a;
            if (!(a > lo_a + 0.1 * span && a < hi_a - 0.1 * span)) a = 0.5 * (lo.a + hi.a);
            if (span <= std::numeric_limits<double>::epsilon() * std::max(1.0, hi_a)) break;
            LinePoint cur = eval(a);
            if (!armijo(cur) || cur.f >= lo.f) {
                hi = std::move(cur);
            } else {
                if (std::abs(cur.d) <= -p_.c2 * d0_) {
                    out = std::move(cur);
                    return true;
                }
                if (cur.d * (hi.a - lo.a) >= 0) hi = lo;
                lo = std::move(cur);
            }
        }
        return fallback(out);
    }

    static double cubic_min(const LinePoint& p, const LinePoint& q) {
        if (!std::isfinite(p.f) || !std::isfinite(q.f) || !std::isfinite(p.d) || !std::isfinite(q.d)) {
            return 0.5 * (p.a + q.a);
        }
        const double d1 = p.d + q.d - 3 * (p.f - q.f) / (p.a - q.a);
        const double disc = d1 * d1 - p.d * q.d;
        if (disc < 0) return 0.5 * (p.a + q.a);
        const double d2 = std::copysign(std::sqrt(disc), q.a - p.a);
        return q.a - (q.a - p.a) * (q.d + d2 - d1) / (q.d - p.d + 2 * d2);
    }

    bool fallback(LinePoint& out) {
        if (best_ && best_->f < f0_) {
            out = *best_;
            return true;
        }
        return false;
    }

    const nn::ScalarProgram& f_;
    const Eigen::VectorXd& w_;
    const Eigen::VectorXd& dir_;
    double f0_, d0_;
    WolfeParams p_;
    int evals_ = 0;
    std::optional<LinePoint> best_;
};

class InverseHessian {
public:
    InverseHessian(const QuasiNewtonConfig& cfg, Eigen::Index n) : cfg_(cfg), n_(n) {
        if (cfg.dense) H_ = Eigen::MatrixXd::Identity(n, n);
    }

    Eigen::VectorXd direction(const Eigen::VectorXd& g) const {
        if (cfg_.dense) return -(H_ * g);
        Eigen::VectorXd q = g;
        std::vector<double> alpha(s_.size());
        for (int i = static_cast<int>(s_.size()) - 1; i >= 0; --i) {
            alpha[i] = rho_[i] * s_[i].dot(q);
            q -= alpha[i] * y_[i];
        }
        q *= gamma_;
        for (std::size_t i = 0; i < s_.size(); ++i) {
            const double beta = rho_[i] * y_[i].dot(q);
            q += (alpha[i] - beta) * s_[i];
        }
        return -q;
    }

    void update(const Eigen::VectorXd& s, const Eigen::VectorXd& y) {
        const double sy = s.dot(y);
        if (!(sy > 1e-12 * s.norm() * y.norm())) return;
        const double rho = 1.0 / sy;
        if (cfg_.dense) {
            if (first_) {
                H_ *= sy / y.squaredNorm();
                first_ = false;
            }
            const Eigen::VectorXd Hy = H_ * y;
            const double yHy = y.dot(Hy);
            H_ += (rho * rho * yHy + rho) * s * s.transpose() - rho * (Hy * s.transpose() + s * Hy.transpose());
            return;
        }
        if (static_cast<int>(s_.size()) == cfg_.memory) {
            s_.pop_front();
            y_.pop_front();
            rho_.pop_front();
        }
        s_.push_back(s);
        y_.push_back(y);
        rho_.push_back(rho);
        gamma_ = sy / y.squaredNorm();
    }

    void reset() {
        s_.clear();
        y_.clear();
        rho_.clear();
        gamma_ = 1.0;
        if (cfg_.dense) {
            H_ = Eigen::MatrixXd::Identity(n_, n_);
            first_ = true;
        }
    }

    bool fresh() const { return cfg_.dense ? first_ : s_.empty(); }

private:
    const QuasiNewtonConfig& cfg_;
    Eigen::Index n_;
    std::deque<Eigen::VectorXd> s_, y_;
    std::deque<double> rho_;
    double gamma_ = 1.0;
    Eigen::MatrixXd H_;
    bool first_ = true;
};

}  // namespace

TrainResult quasi_newton_run(const nn::ScalarProgram& f, const Eigen::VectorXd& w0, const QuasiNewtonConfig& cfg,
                             const Monitor& monitor) {
    cfg.validate();
    TrainResult res{w0, {}};
    Eigen::VectorXd& w = res.w;
    Eigen::VectorXd g = Eigen::VectorXd::Zero(w.size());
    double fw = f.evaluate(w, &g);
    if (!finite(fw, g)) {
        res.record.reason = StopReason::NonFinite;
        res.record.diagnostic = "non-finite loss or gradient at the starting point";
        return res;
    }
    InverseHessian H(cfg, w.size());
    res.record.push(0, Phase::QuasiNewton, fw, probe(monitor, w, 0, cfg.max_iters == 0));
    res.record.reason = StopReason::MaxIterations;

    for (int k = 0; k < cfg.max_iters; ++k) {
        Eigen::VectorXd dir = H.direction(g);
        double d0 = g.dot(dir);
        if (!(d0 < 0) && !H.fresh()) {
            H.reset();
            dir = -g;
            d0 = g.dot(dir);
        }
        if (dir.isZero(0.0)) {
            res.record.reason = StopReason::IdenticalIterates;
            res.record.h1.back() = probe(monitor, w, k, true);
            break;
        }
        const double a0 = H.fresh() ? std::min(1.0, 1.0 / g.norm()) : 1.0;
        LineSearch ls(f, w, dir, fw, d0, cfg.line_search);
        LinePoint step;
        if (!ls.run(a0, step)) {
            res.record.reason = StopReason::LineSearchFailure;
            res.record.diagnostic = "no sufficient decrease along the search direction at iteration " + std::to_string(k);
            res.record.h1.back() = probe(monitor, w, k, true);
            break;
        }
        Eigen::VectorXd w_new = w + step.a * dir;
        const bool identical = w_new == w;
        H.update(w_new - w, step.g - g);
        w = std::move(w_new);
        g = std::move(step.g);
        fw = step.f;
        const bool last = identical || g.norm() < cfg.grad_tol || k + 1 == cfg.max_iters;
        res.record.push(k + 1, Phase::QuasiNewton, fw, probe(monitor, w, k + 1, last));
        if (identical) {
            res.record.reason = StopReason::IdenticalIterates;
            break;
        }
        if (g.norm() < cfg.grad_tol) {
            res.record.reason = StopReason::GradientTolerance;
            break;
        }
    }
    res.record.phase_boundary = 0;
    return res;
}

TrainResult train_schedule(const nn::ScalarProgram& f, const Eigen::VectorXd& w0, const AdamConfig& adam,
                           const QuasiNewtonConfig& qn, const Monitor& monitor) {
    TrainResult out{w0, {}};
    if (adam.epochs > 0) {
        auto a = adam_run(f, w0, adam, monitor);
        out.w = a.w;
        out.record = std::move(a.record);
        if (out.record.reason == StopReason::NonFinite) return out;
    }
    if (qn.max_iters > 0) {
        auto q = quasi_newton_run(f, out.w, qn, monitor);
        out.w = q.w;
        if (out.record.size() > 0) {
            // The ADAM phase already recorded the loss at its final iterate.
            TrainRecord tail = q.record;
            tail.epoch.erase(tail.epoch.begin());
            tail.phase.erase(tail.phase.begin());
            tail.loss.erase(tail.loss.begin());
            tail.h1.erase(tail.h1.begin());
            const int base = out.record.epoch.back();
            const int boundary = static_cast<int>(out.record.size()) - 1;
            for (std::size_t i = 0; i < tail.size(); ++i) {
                out.record.push(base + tail.epoch[i], tail.phase[i], tail.loss[i], tail.h1[i]);
            }
            out.record.phase_boundary = boundary;
            out.record.reason = q.record.reason;
            out.record.diagnostic = q.record.diagnostic;
        } else {
            out.record = std::move(q.record);
        }
    }
    return out;
}

}  // namespace pinnbc::opt
