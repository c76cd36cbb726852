#include "pinnbc/mlp.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "pinnbc/errors.hpp"

namespace pinnbc::nn {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

using Mat = Eigen::MatrixXd;
using MapMat = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using MapMatMut = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

}  // namespace

Architecture Architecture::hidden(int inputs, int depth, int width, int outputs, Activation act) {
    Architecture a;
    a.widths.push_back(inputs);
    for (int i = 0; i < depth; ++i) a.widths.push_back(width);
    a.widths.push_back(outputs);
    a.activation = act;
    a.validate();
    return a;
}

std::size_t Architecture::num_weights() const {
    std::size_t n = 0;
    for (int l = 1; l < static_cast<int>(widths.size()); ++l) n += static_cast<std::size_t>(widths[l]) * (widths[l - 1] + 1);
    return n;
}

std::size_t Architecture::offset(int l) const {
    std::size_t n = 0;
    for (int i = 1; i <= l; ++i) n += static_cast<std::size_t>(widths[i]) * (widths[i - 1] + 1);
    return n;
}

void Architecture::validate() const {
    if (widths.size() < 2) throw ConfigError("network needs at least an input and an output layer");
    for (int w : widths) {
        if (w < 1) throw ConfigError("layer widths must be positive");
    }
}

WeightVector init_weights(const Architecture& arch, std::uint64_t seed) {
    arch.validate();
    std::mt19937_64 rng(seed);
    WeightVector w = WeightVector::Zero(static_cast<Eigen::Index>(arch.num_weights()));
    for (int l = 0; l < arch.layers(); ++l) {
        const int nin = arch.widths[l], nout = arch.widths[l + 1];
        const double bound = std::sqrt(6.0 / (nin + nout));
        std::uniform_real_distribution<double> dist(-bound, bound);
        const auto off = static_cast<Eigen::Index>(arch.offset(l));
        for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(nin) * nout; ++i) w[off + i] = dist(rng);
    }
    return w;
}

Eigen::VectorXd forward(const Architecture& arch, const WeightVector& w, const Eigen::VectorXd& x) {
    if (x.size() != arch.inputs()) throw ConfigError("input dimension does not match the network");
    if (w.size() != static_cast<Eigen::Index>(arch.num_weights())) throw ConfigError("weight vector length mismatch");
    Eigen::VectorXd h = x;
    for (int l = 0; l < arch.layers(); ++l) {
        const int nin = arch.widths[l], nout = arch.widths[l + 1];
        const double* base = w.data() + arch.offset(l);
        MapMat A(base, nout, nin);
        Eigen::Map<const Eigen::VectorXd> b(base + static_cast<std::size_t>(nout) * nin, nout);
        Eigen::VectorXd z = A * h + b;
        if (l + 1 < arch.layers()) {
            if (arch.activation == Activation::Tanh) {
                z = z.array().tanh();
            } else {
                z = z.array().max(0.0);
            }
        }
        h = std::move(z);
    }
    return h;
}

// ---------------------------------------------------------------------------
// JetBatch

int JetBatch::pair_index(int i, int j, int nd) {
    if (i > j) std::swap(i, j);
    // Row-major upper triangle: (0,0), (0,1), ..., (1,1), ...
    return i * nd - i * (i - 1) / 2 + (j - i);
}

JetBatch::JetBatch(Architecture arch, int order, std::vector<int> directions)
    : arch_(std::move(arch)), order_(order), dirs_(std::move(directions)) {
    arch_.validate();
    if (order < 0 || order > 2) throw ConfigError("jet order must be 0, 1 or 2");
    if (order == 2 && !arch_.smooth()) throw ConfigError("second input derivatives need a smooth activation");
    for (int d : dirs_) {
        if (d < 0 || d >= arch_.inputs()) throw ConfigError("jet direction outside the input range");
    }
    if (order == 0) dirs_.clear();
}

void JetBatch::forward(const WeightVector& w, const Eigen::MatrixXd& X) {
    if (X.rows() != arch_.inputs()) throw ConfigError("input dimension does not match the network");
    if (w.size() != static_cast<Eigen::Index>(arch_.num_weights())) throw ConfigError("weight vector length mismatch");
    w_ = &w;
    points_ = static_cast<int>(X.cols());
    const int nd = num_directions();
    const int np = order_ == 2 ? nd * (nd + 1) / 2 : 0;
    const int L = arch_.layers();
    layers_.resize(L);

    Mat h = X;
    std::vector<Mat> d(order_ >= 1 ? nd : 0), e(np);
    for (int k = 0; k < static_cast<int>(d.size()); ++k) {
        d[k] = Mat::Zero(X.rows(), points_);
        d[k].row(dirs_[k]).setOnes();
    }
    for (auto& m : e) m = Mat::Zero(X.rows(), points_);

    for (int l = 0; l < L; ++l) {
        Layer& layer = layers_[l];
        const int nin = arch_.widths[l], nout = arch_.widths[l + 1];
        const double* base = w.data() + arch_.offset(l);
        MapMat A(base, nout, nin);
        Eigen::Map<const Eigen::VectorXd> b(base + static_cast<std::size_t>(nout) * nin, nout);

        Mat z = A * h;
        z.colwise() += b;
        layer.dz.resize(d.size());
        layer.ez.resize(e.size());
        for (std::size_t k = 0; k < d.size(); ++k) layer.dz[k] = A * d[k];
        for (std::size_t p = 0; p < e.size(); ++p) layer.ez[p] = A * e[p];
        layer.h = std::move(h);
        layer.d = std::move(d);
        layer.e = std::move(e);

        const bool last = l + 1 == L;
        if (last) {
            h = std::move(z);
            d = layer.dz;
            e = layer.ez;
            continue;
        }
        if (arch_.activation == Activation::Tanh) {
            layer.a = z.array().tanh();
            layer.s = 1.0 - layer.a.array().square();
            layer.s2 = -2.0 * layer.a.array() * layer.s.array();
        } else {
            layer.a = z.array().max(0.0);
            layer.s = (z.array() > 0.0).cast<double>();
            layer.s2 = Mat::Zero(z.rows(), z.cols());
        }
        h = layer.a;
        d.assign(layer.dz.size(), Mat());
        for (std::size_t k = 0; k < d.size(); ++k) d[k] = layer.s.cwiseProduct(layer.dz[k]);
        e.assign(layer.ez.size(), Mat());
        for (int i = 0; i < nd && np > 0; ++i) {
            for (int j = i; j < nd; ++j) {
                const int p = pair_index(i, j, nd);
                e[p] = layer.s.cwiseProduct(layer.ez[p]) +
                       layer.s2.cwiseProduct(layer.dz[i].cwiseProduct(layer.dz[j]));
            }
        }
    }
    out_h_ = std::move(h);
    out_d_ = std::move(d);
    out_e_ = std::move(e);
}

JetBatch::Seeds JetBatch::zero_seeds() const {
    Seeds s;
    s.value = Mat::Zero(arch_.outputs(), points_);
    s.d.assign(out_d_.size(), Mat::Zero(arch_.outputs(), points_));
    s.e.assign(out_e_.size(), Mat::Zero(arch_.outputs(), points_));
    return s;
}

void JetBatch::backward(const Seeds& seeds, Eigen::VectorXd& grad) const {
    if (!w_) throw ConfigError("backward called before forward");
    if (grad.size() != static_cast<Eigen::Index>(arch_.num_weights())) grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(arch_.num_weights()));
    const int nd = num_directions();
    const int L = arch_.layers();

    Mat gh = seeds.value;
    std::vector<Mat> gd = seeds.d, ge = seeds.e;
    gd.resize(out_d_.size());
    ge.resize(out_e_.size());
    for (auto& m : gd) {
        if (m.size() == 0) m = Mat::Zero(arch_.outputs(), points_);
    }
    for (auto& m : ge) {
        if (m.size() == 0) m = Mat::Zero(arch_.outputs(), points_);
    }

    for (int l = L - 1; l >= 0; --l) {
        const Layer& layer = layers_[l];
        const int nin = arch_.widths[l], nout = arch_.widths[l + 1];
        const std::size_t off = arch_.offset(l);
        MapMat A(w_->data() + off, nout, nin);

        Mat gz;
        std::vector<Mat> gdz(gd.size()), gez(ge.size());
        if (l + 1 == L) {
            gz = std::move(gh);
            gdz = std::move(gd);
            gez = std::move(ge);
        } else {
            const auto& s = layer.s;
            const auto& s2 = layer.s2;
            gz = gh.cwiseProduct(s);
            for (std::size_t k = 0; k < gdz.size(); ++k) {
                gz += gd[k].cwiseProduct(layer.dz[k]).cwiseProduct(s2);
                gdz[k] = gd[k].cwiseProduct(s);
            }
            if (!ge.empty()) {
                // Third derivative of tanh: -2 s^2 + 4 a^2 s.
                const Mat s3 = (-2.0 * s.array().square() + 4.0 * layer.a.array().square() * s.array()).matrix();
                for (int i = 0; i < nd; ++i) {
                    for (int j = i; j < nd; ++j) {
                        const int p = pair_index(i, j, nd);
                        const Mat& g = ge[p];
                        gz += g.cwiseProduct(layer.ez[p].cwiseProduct(s2) +
                                             layer.dz[i].cwiseProduct(layer.dz[j]).cwiseProduct(s3));
                        const Mat gs2 = g.cwiseProduct(s2);
                        gdz[i] += gs2.cwiseProduct(layer.dz[j]);
                        gdz[j] += gs2.cwiseProduct(layer.dz[i]);
                        gez[p] = g.cwiseProduct(s);
                    }
                }
            }
        }

        MapMatMut gA(grad.data() + off, nout, nin);
        gA.noalias() += gz * layer.h.transpose();
        for (std::size_t k = 0; k < gdz.size(); ++k) gA.noalias() += gdz[k] * layer.d[k].transpose();
        for (std::size_t p = 0; p < gez.size(); ++p) gA.noalias() += gez[p] * layer.e[p].transpose();
        Eigen::Map<Eigen::VectorXd> gb(grad.data() + off + static_cast<std::size_t>(nout) * nin, nout);
        gb += gz.rowwise().sum();

        if (l == 0) break;
        gh = A.transpose() * gz;
        gd.assign(gdz.size(), Mat());
        for (std::size_t k = 0; k < gdz.size(); ++k) gd[k] = A.transpose() * gdz[k];
        ge.assign(gez.size(), Mat());
        for (std::size_t p = 0; p < gez.size(); ++p) ge[p] = A.transpose() * gez[p];
    }
}

NetworkJet input_jet(const Architecture& arch, const WeightVector& w, const Eigen::VectorXd& x, int order) {
    if (order != 1 && order != 2) throw ConfigError("input_jet order must be 1 or 2");
    std::vector<int> dirs(arch.inputs());
    for (int i = 0; i < arch.inputs(); ++i) dirs[i] = i;
    JetBatch batch(arch, order, dirs);
    batch.forward(w, x);
    NetworkJet jet;
    const int no = arch.outputs(), ni = arch.inputs();
    jet.value = batch.value().col(0);
    jet.jacobian.resize(no, ni);
    for (int k = 0; k < ni; ++k) jet.jacobian.col(k) = batch.d(k).col(0);
    if (order == 2) {
        jet.hessian.assign(no, Eigen::MatrixXd::Zero(ni, ni));
        for (int o = 0; o < no; ++o) {
            for (int i = 0; i < ni; ++i) {
                for (int j = 0; j < ni; ++j) jet.hessian[o](i, j) = batch.e(i, j)(o, 0);
            }
        }
    }
    return jet;
}

Eigen::VectorXd weight_gradient(const ScalarProgram& program, const WeightVector& w) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(w.size());
    program.evaluate(w, &g);
    return g;
}

double l2_penalty(const WeightVector& w, double lambda_reg) {
    if (lambda_reg < 0) throw ConfigError("regularization weight must be >= 0");
    return lambda_reg * w.squaredNorm();
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

template <class T>
void put(std::ofstream& out, T v) {
    static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw ConfigError("truncated checkpoint");
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& cp) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write checkpoint " + path);
    out.write("PBCW", 4);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(cp.arch.widths.size()));
    for (int w : cp.arch.widths) put<std::uint32_t>(out, static_cast<std::uint32_t>(w));
    put<std::uint32_t>(out, cp.arch.activation == Activation::Tanh ? 0u : 1u);
    put<std::uint64_t>(out, cp.seed);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(cp.weights.size()));
    for (double v : cp.weights) put<double>(out, v);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open checkpoint " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "PBCW", 4) != 0) throw ConfigError("not a checkpoint file: " + path);
    if (get<std::uint32_t>(in) != kCheckpointVersion) throw ConfigError("unsupported checkpoint version");
    Checkpoint cp;
    const auto nw = get<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < nw; ++i) cp.arch.widths.push_back(static_cast<int>(get<std::uint32_t>(in)));
    cp.arch.activation = get<std::uint32_t>(in) == 0 ? Activation::Tanh : Activation::Relu;
    cp.arch.validate();
    cp.seed = get<std::uint64_t>(in);
    const auto n = get<std::uint64_t>(in);
    if (n != cp.arch.num_weights()) throw ConfigError("checkpoint weight count does not match its architecture");
    cp.weights.resize(static_cast<Eigen::Index>(n));
    for (auto& v : cp.weights) v = get<double>(in);
    return cp;
}

}  // namespace pinnbc::nn
