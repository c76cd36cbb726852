#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace pinnbc::nn {

enum class Activation { Tanh, Relu };

/// Fully connected network N_in -> n_1 -> ... -> N_out with a hidden
/// activation and an identity output layer.
struct Architecture {
    std::vector<int> widths;
    Activation activation = Activation::Tanh;

    static Architecture hidden(int inputs, int depth, int width, int outputs, Activation act = Activation::Tanh);

    int inputs() const { return widths.front(); }
    int outputs() const { return widths.back(); }
    int layers() const { return static_cast<int>(widths.size()) - 1; }
    std::size_t num_weights() const;
    /// Offset of layer l's matrix A_l in the flat vector; b_l follows A_l.
    std::size_t offset(int l) const;
    bool smooth() const { return activation == Activation::Tanh; }
    void validate() const;
    bool operator==(const Architecture&) const = default;
};

/// Flat parameters: layer by layer, A_l (row-major, n_l x n_{l-1}) then b_l.
using WeightVector = Eigen::VectorXd;

WeightVector init_weights(const Architecture& arch, std::uint64_t seed);

Eigen::VectorXd forward(const Architecture& arch, const WeightVector& w, const Eigen::VectorXd& x);

/// Output value with derivatives with respect to every input.
struct NetworkJet {
    Eigen::VectorXd value;
    Eigen::MatrixXd jacobian;              // N_out x N_in
    std::vector<Eigen::MatrixXd> hessian;  // one N_in x N_in matrix per output (order 2 only)
};

NetworkJet input_jet(const Architecture& arch, const WeightVector& w, const Eigen::VectorXd& x, int order);

/// Batched forward pass that carries derivatives with respect to selected
/// inputs and supports a reverse sweep for weight gradients.
///
/// Channels per point: value, first derivatives along each direction k, and
/// second derivatives for each pair i <= j.
class JetBatch {
public:
    /// `directions` lists the input indices differentiated against.
    JetBatch(Architecture arch, int order, std::vector<int> directions);

    const Architecture& architecture() const { return arch_; }
    int order() const { return order_; }
    int num_directions() const { return static_cast<int>(dirs_.size()); }
    static int pair_index(int i, int j, int nd);

    /// X is N_in x P.
    void forward(const WeightVector& w, const Eigen::MatrixXd& X);

    int points() const { return points_; }
    /// N_out x P output channels.
    const Eigen::MatrixXd& value() const { return out_h_; }
    const Eigen::MatrixXd& d(int k) const { return out_d_[k]; }
    const Eigen::MatrixXd& e(int i, int j) const { return out_e_[pair_index(i, j, num_directions())]; }

    /// Cotangents of the output channels, same shapes as the outputs.
    struct Seeds {
        Eigen::MatrixXd value;
        std::vector<Eigen::MatrixXd> d;
        std::vector<Eigen::MatrixXd> e;
    };
    Seeds zero_seeds() const;

    /// Adds the weight gradient of sum(seed . channel) to `grad`.
    void backward(const Seeds& seeds, Eigen::VectorXd& grad) const;

private:
    struct Layer {
        Eigen::MatrixXd h;                // input activations
        std::vector<Eigen::MatrixXd> d;   // input first derivatives
        std::vector<Eigen::MatrixXd> e;   // input second derivatives
        Eigen::MatrixXd a, s, s2;         // activation and its derivatives at Z
        std::vector<Eigen::MatrixXd> dz;  // A * d
        std::vector<Eigen::MatrixXd> ez;  // A * e
    };

    Architecture arch_;
    int order_;
    std::vector<int> dirs_;
    int points_ = 0;
    const WeightVector* w_ = nullptr;
    std::vector<Layer> layers_;
    Eigen::MatrixXd out_h_;
    std::vector<Eigen::MatrixXd> out_d_;
    std::vector<Eigen::MatrixXd> out_e_;
};

/// A scalar loss of the weights with an exact gradient.
class ScalarProgram {
public:
    virtual ~ScalarProgram() = default;
    /// Loss at w; writes the gradient when `grad` is non-null.
    virtual double evaluate(const WeightVector& w, Eigen::VectorXd* grad) const = 0;
};

/// Adapter for closures.
class FunctionProgram : public ScalarProgram {
public:
    using Fn = std::function<double(const WeightVector&, Eigen::VectorXd*)>;
    explicit FunctionProgram(Fn f) : f_(std::move(f)) {}
    double evaluate(const WeightVector& w, Eigen::VectorXd* grad) const override { return f_(w, grad); }

private:
    Fn f_;
};

Eigen::VectorXd weight_gradient(const ScalarProgram& program, const WeightVector& w);

/// lambda_reg * ||w||^2.
double l2_penalty(const WeightVector& w, double lambda_reg);
inline constexpr double kDefaultPinnRegularization = 1e-6;
inline constexpr double kDefaultVpinnRegularization = 0.0;

/// Binary little-endian checkpoint: magic "PBCW", format version, widths,
/// activation, seed, weight count, weights as 64-bit floats.
struct Checkpoint {
    Architecture arch;
    std::uint64_t seed = 0;
    WeightVector weights;
};

void save_checkpoint(const std::string& path, const Checkpoint& cp);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace pinnbc::nn
