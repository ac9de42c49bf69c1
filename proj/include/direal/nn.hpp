#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <vector>

#include "direal/kernel_ops.hpp"
#include "direal/tensor.hpp"

namespace direal {

enum class ActKind { relu, leaky_relu, tanh, sigmoid };

// Construction-time description of one layer; also the checkpoint schema.
struct LayerSpec {
    enum class Kind { dense, conv, tconv, activation, batchnorm };

    Kind kind = Kind::dense;
    std::size_t fan_in = 0, fan_out = 0;                    // dense
    std::size_t in_channels = 0, out_channels = 0;          // conv / tconv
    std::size_t kernel = 0, stride = 1, padding = 0;        // conv / tconv
    std::size_t in_h = 0, in_w = 0;                         // conv / tconv
    ActKind act = ActKind::relu;                            // activation
    std::size_t channels = 0;                               // batchnorm

    static LayerSpec Dense(std::size_t fan_in, std::size_t fan_out);
    static LayerSpec Conv(std::size_t in_ch, std::size_t out_ch, std::size_t k,
                          std::size_t stride, std::size_t padding,
                          std::size_t in_h, std::size_t in_w);
    static LayerSpec TConv(std::size_t in_ch, std::size_t out_ch, std::size_t k,
                           std::size_t stride, std::size_t padding,
                           std::size_t in_h, std::size_t in_w);
    static LayerSpec Act(ActKind a);
    static LayerSpec BatchNorm(std::size_t channels);
};

// A parameter tensor paired with its gradient buffer.
struct ParamView {
    Tensor* value;
    Tensor* grad;
};

class Layer {
public:
    virtual ~Layer() = default;

    // Forward caches whatever backward needs. train toggles batchnorm mode.
    virtual Tensor forward(const Tensor& x, bool train) = 0;

    // Consumes the cache, accumulates parameter gradients (+=), returns the
    // gradient with respect to the layer input. Throws UsageError when no
    // forward cache is pending.
    virtual Tensor backward(const Tensor& dy) = 0;

    virtual LayerSpec spec() const = 0;
    virtual std::vector<ParamView> params() { return {}; }
    // Persistent non-trainable buffers (batchnorm running stats); serialized
    // alongside params but never touched by the optimizer.
    virtual std::vector<Tensor*> state() { return {}; }
    void zero_grads();

    // Kernel-matrix access for layers carrying filters (dense/conv/tconv).
    virtual bool has_kernel() const { return false; }
    virtual LayerShape kernel_shape() const;
    virtual Tensor& weights();
    virtual Tensor& weight_grads();
    const Tensor& weights() const { return const_cast<Layer*>(this)->weights(); }
};

// Ordered list of layers with their parameter and gradient stores; one
// training loop owns it exclusively.
class Network {
public:
    Network() = default;
    Network(Network&&) = default;
    Network& operator=(Network&&) = default;

    void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }

    Tensor forward(const Tensor& batch, bool train);
    // Backward through all layers in reverse; returns d(loss)/d(input).
    Tensor backward(const Tensor& output_grad);

    void zero_grads();
    std::vector<ParamView> params();

    std::size_t size() const { return layers_.size(); }
    Layer& layer(std::size_t i) { return *layers_.at(i); }
    const Layer& layer(std::size_t i) const { return *layers_.at(i); }

    // Indices of kernel-bearing layers, in order.
    std::vector<std::size_t> kernel_layers() const;

private:
    std::vector<std::unique_ptr<Layer>> layers_;
};

// Builds a network with weights ~ Normal(0, 0.02), zero biases, batchnorm
// gamma = 1, beta = 0, running stats (0, 1). Reproducible from seed.
Network build_network(const std::vector<LayerSpec>& specs, std::uint64_t seed);

std::unique_ptr<Layer> make_layer(const LayerSpec& spec);

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.0;
    double beta2 = 0.9;
    double eps = 1e-8;
};

// Standard bias-corrected Adam over a network's parameter list. Gradient
// buffers are zeroed after each step.
class AdamState {
public:
    AdamState() = default;
    AdamState(Network& net, AdamConfig cfg);

    void step(Network& net);

    long t() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

private:
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_;
    long t_ = 0;
};

// One round of left/right power iteration on matrix A starting from u
// (initialized to a random unit vector if empty); updates u in place and
// returns the singular-value estimate v^T A u.
double power_iteration_sigma(const Eigen::MatrixXd& mat, int iters, Eigen::VectorXd& u,
                             std::mt19937_64& rng);

// Divides the layer's weights by the power-iteration estimate of their top
// singular value (unrolled 2-D view). u persists across calls.
double spectral_normalize(Layer& layer, int power_iters, Eigen::VectorXd& u,
                          std::mt19937_64& rng);

// Clamps every parameter entry (weights and biases) to [-c, c].
void weight_clip(Network& net, double c);

}  // namespace direal
