#include "direal/kernel_ops.hpp"

#include <string>

namespace direal {

LayerShape LayerShape::Dense(std::size_t fan_in, std::size_t fan_out) {
    if (fan_in < 1 || fan_out < 1) throw ShapeError("dense shape counts must be >= 1");
    LayerShape s;
    s.kind = Kind::dense;
    s.fan_in = fan_in;
    s.fan_out = fan_out;
    return s;
}

LayerShape LayerShape::Conv(std::size_t in_channels, std::size_t out_channels,
                            std::size_t kernel) {
    if (in_channels < 1 || out_channels < 1 || kernel < 1)
        throw ShapeError("conv shape counts must be >= 1");
    LayerShape s;
    s.kind = Kind::conv;
    s.in_channels = in_channels;
    s.out_channels = out_channels;
    s.kernel = kernel;
    return s;
}

std::size_t LayerShape::rows() const {
    return kind == Kind::dense ? fan_in : kernel * kernel * in_channels;
}

std::size_t LayerShape::cols() const {
    return kind == Kind::dense ? fan_out : out_channels;
}

namespace {

void check_weight_shape(const Tensor& w, const LayerShape& shape) {
    if (shape.kind == LayerShape::Kind::dense) {
        if (w.rank() != 2 || w.dim(0) != shape.fan_in || w.dim(1) != shape.fan_out)
            throw ShapeError("dense weights " + w.shape_str() + " do not match shape " +
                             std::to_string(shape.fan_in) + "x" + std::to_string(shape.fan_out));
    } else {
        if (w.rank() != 4 || w.dim(0) != shape.out_channels || w.dim(1) != shape.in_channels ||
            w.dim(2) != shape.kernel || w.dim(3) != shape.kernel)
            throw ShapeError("conv weights " + w.shape_str() + " do not match [out,in,k,k] = [" +
                             std::to_string(shape.out_channels) + "," +
                             std::to_string(shape.in_channels) + "," +
                             std::to_string(shape.kernel) + "," + std::to_string(shape.kernel) +
                             "]");
    }
}

}  // namespace

KernelMatrix unroll(const Tensor& weights, const LayerShape& shape) {
    check_weight_shape(weights, shape);
    const std::size_t m = shape.rows();
    const std::size_t n = shape.cols();

    KernelMatrix km;
    km.values.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));

    if (shape.kind == LayerShape::Kind::dense) {
        // Row-major [fan_in, fan_out]: entry (i, j) at i*fan_out + j.
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t i = 0; i < m; ++i)
                km.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                    weights[i * n + j];
    } else {
        // [out, in, k, k] row-major: filter j occupies a contiguous block of
        // m entries already ordered (input-channel, kernel-row, kernel-col).
        for (std::size_t j = 0; j < n; ++j) {
            const double* block = weights.data() + j * m;
            for (std::size_t i = 0; i < m; ++i)
                km.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = block[i];
        }
    }

    km.column_norms = km.values.colwise().norm();
    return km;
}

Tensor fold(const Eigen::MatrixXd& grad, const LayerShape& shape) {
    const std::size_t m = shape.rows();
    const std::size_t n = shape.cols();
    if (static_cast<std::size_t>(grad.rows()) != m || static_cast<std::size_t>(grad.cols()) != n)
        throw ShapeError("fold input " + std::to_string(grad.rows()) + "x" +
                         std::to_string(grad.cols()) + " does not match unroll layout " +
                         std::to_string(m) + "x" + std::to_string(n));

    Tensor out;
    if (shape.kind == LayerShape::Kind::dense) {
        out = Tensor({shape.fan_in, shape.fan_out});
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t i = 0; i < m; ++i)
                out[i * n + j] = grad(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    } else {
        out = Tensor({shape.out_channels, shape.in_channels, shape.kernel, shape.kernel});
        for (std::size_t j = 0; j < n; ++j) {
            double* block = out.data() + j * m;
            for (std::size_t i = 0; i < m; ++i)
                block[i] = grad(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        }
    }
    return out;
}

KernelMatrix normalize_columns(const KernelMatrix& km) {
    KernelMatrix out;
    out.values = km.values;
    out.column_norms = km.values.colwise().norm();
    for (Eigen::Index j = 0; j < out.values.cols(); ++j) {
        const double norm = out.column_norms(j);
        if (norm > kDegenerateNorm)
            out.values.col(j) /= norm;
        else
            out.values.col(j).setZero();
    }
    return out;
}

}  // namespace direal
