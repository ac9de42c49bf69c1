#include "direal/diversity.hpp"

#include <cmath>
#include <string>

#include "direal/errors.hpp"
#include "direal/nn.hpp"

namespace direal {

GramMatrix gram(const KernelMatrix& km, GramVariant variant) {
    const Eigen::MatrixXd& theta =
        (variant == GramVariant::cosine) ? normalize_columns(km).values : km.values;
    Eigen::MatrixXd a = theta.transpose() * theta;
    GramMatrix out;
    out.values = 0.5 * (a + a.transpose());
    return out;
}

BinaryMask mask(const GramMatrix& omega, double tau) {
    const Eigen::Index n = omega.values.rows();
    BinaryMask out;
    out.values = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            if (i != j && std::abs(omega.values(i, j)) >= tau) out.values(i, j) = 1.0;
    return out;
}

double diversity_loss(const KernelMatrix& km, const DiversityConfig& cfg) {
    const GramMatrix omega = gram(km, cfg.variant);
    const BinaryMask m = mask(omega, cfg.tau);
    double total = 0.0;
    const Eigen::Index n = omega.values.rows();
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            if (m.values(i, j) != 0.0) total += omega.values(i, j) * omega.values(i, j);
    return 0.5 * total;
}

Eigen::MatrixXd diversity_grad_direct(const KernelMatrix& km, const DiversityConfig& cfg) {
    const Eigen::MatrixXd theta =
        (cfg.variant == GramVariant::cosine) ? normalize_columns(km).values : km.values;
    const GramMatrix omega = gram(km, cfg.variant);
    const BinaryMask m = mask(omega, cfg.tau);
    const Eigen::Index rows = theta.rows();
    const Eigen::Index n = theta.cols();
    // Entrywise sums on purpose: this mirrors the formula symbol by symbol
    // and shares no code path with the matrix-product route below.
    Eigen::MatrixXd g(rows, n);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index j = 0; j < n; ++j) {
            double acc = 0.0;
            for (Eigen::Index k = 0; k < n; ++k)
                acc += theta(r, k) * omega.values(k, j) * m.values(k, j);
            g(r, j) = acc;
        }
    return g;
}

Eigen::MatrixXd diversity_grad_exact(const KernelMatrix& km, const DiversityConfig& cfg) {
    const GramMatrix omega = gram(km, cfg.variant);
    const BinaryMask m = mask(omega, cfg.tau);
    const Eigen::MatrixXd masked = omega.values.cwiseProduct(m.values);

    if (cfg.variant == GramVariant::raw) return 2.0 * (km.values * masked);

    // Cosine: differentiate through the column normalization. With unit
    // columns t_i and ghat = 2 That (Omega o M), the raw-column gradient is
    //   g_i = (ghat_i - t_i (t_i . ghat_i)) / ||theta_i||,
    // and zero where the column norm is degenerate.
    const KernelMatrix normalized = normalize_columns(km);
    const Eigen::MatrixXd ghat = 2.0 * (normalized.values * masked);
    const Eigen::Index n = km.values.cols();
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(km.values.rows(), n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const double norm = normalized.column_norms(j);  // recomputed raw norms
        if (norm <= kDegenerateNorm) continue;
        const Eigen::VectorXd t = normalized.values.col(j);
        const Eigen::VectorXd gh = ghat.col(j);
        g.col(j) = (gh - t * t.dot(gh)) / norm;
    }
    return g;
}

std::vector<std::size_t> effective_selector(const Network& net, const DiversityConfig& cfg) {
    std::vector<std::size_t> kernels = net.kernel_layers();
    if (cfg.layer_selector.empty()) {
        if (!kernels.empty()) kernels.pop_back();  // default: all but the last
        return kernels;
    }
    for (std::size_t idx : cfg.layer_selector) {
        if (idx >= net.size())
            throw ConfigError("layer index " + std::to_string(idx) + " is out of range",
                              "layer_selector");
        if (!net.layer(idx).has_kernel())
            throw ConfigError("layer " + std::to_string(idx) + " carries no kernel matrix",
                              "layer_selector");
    }
    return cfg.layer_selector;
}

double apply_diversity(Network& net, const DiversityConfig& cfg, double lambda) {
    double total = 0.0;
    for (std::size_t idx : effective_selector(net, cfg)) {
        Layer& layer = net.layer(idx);
        const LayerShape shape = layer.kernel_shape();
        const KernelMatrix km = unroll(layer.weights(), shape);
        total += diversity_loss(km, cfg);
        if (lambda != 0.0) {
            const Eigen::MatrixXd g = diversity_grad_exact(km, cfg);
            const Tensor folded = fold(g, shape);
            Tensor& grads = layer.weight_grads();
            for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += lambda * folded[i];
        }
    }
    return total;
}

double diversity_total(const Network& net, const DiversityConfig& cfg) {
    double total = 0.0;
    for (std::size_t idx : effective_selector(net, cfg)) {
        const Layer& layer = net.layer(idx);
        const KernelMatrix km = unroll(layer.weights(), layer.kernel_shape());
        total += diversity_loss(km, cfg);
    }
    return total;
}

}  // namespace direal
