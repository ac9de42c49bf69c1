#include "direal/nn.hpp"

#include <cmath>
#include <string>

#include "direal/parallel.hpp"

namespace direal {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMajor>;
using ConstMapRM = Eigen::Map<const RowMajor>;
using MapVec = Eigen::Map<Eigen::VectorXd>;
using ConstMapVec = Eigen::Map<const Eigen::VectorXd>;

std::size_t item_size(const Tensor& x) {
    if (x.rank() < 2 || x.dim(0) == 0)
        throw ShapeError("expected a batch tensor [B, ...], got " + x.shape_str());
    return x.size() / x.dim(0);
}

}  // namespace

LayerSpec LayerSpec::Dense(std::size_t fan_in, std::size_t fan_out) {
    LayerSpec s;
    s.kind = Kind::dense;
    s.fan_in = fan_in;
    s.fan_out = fan_out;
    return s;
}

LayerSpec LayerSpec::Conv(std::size_t in_ch, std::size_t out_ch, std::size_t k,
                          std::size_t stride, std::size_t padding, std::size_t in_h,
                          std::size_t in_w) {
    LayerSpec s;
    s.kind = Kind::conv;
    s.in_channels = in_ch;
    s.out_channels = out_ch;
    s.kernel = k;
    s.stride = stride;
    s.padding = padding;
    s.in_h = in_h;
    s.in_w = in_w;
    return s;
}

LayerSpec LayerSpec::TConv(std::size_t in_ch, std::size_t out_ch, std::size_t k,
                           std::size_t stride, std::size_t padding, std::size_t in_h,
                           std::size_t in_w) {
    LayerSpec s = Conv(in_ch, out_ch, k, stride, padding, in_h, in_w);
    s.kind = Kind::tconv;
    return s;
}

LayerSpec LayerSpec::Act(ActKind a) {
    LayerSpec s;
    s.kind = Kind::activation;
    s.act = a;
    return s;
}

LayerSpec LayerSpec::BatchNorm(std::size_t channels) {
    LayerSpec s;
    s.kind = Kind::batchnorm;
    s.channels = channels;
    return s;
}

void Layer::zero_grads() {
    for (auto& p : params()) p.grad->fill(0.0);
}

LayerShape Layer::kernel_shape() const {
    throw UsageError("layer has no kernel matrix");
}

Tensor& Layer::weights() {
    throw UsageError("layer has no weights");
}

Tensor& Layer::weight_grads() {
    throw UsageError("layer has no weights");
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

namespace {

class DenseLayer final : public Layer {
public:
    DenseLayer(std::size_t fan_in, std::size_t fan_out)
        : fan_in_(fan_in),
          fan_out_(fan_out),
          w_({fan_in, fan_out}),
          b_({fan_out}),
          gw_({fan_in, fan_out}),
          gb_({fan_out}) {}

    Tensor forward(const Tensor& x, bool) override {
        if (item_size(x) != fan_in_)
            throw ShapeError("dense layer expects " + std::to_string(fan_in_) +
                             " inputs per item, got tensor " + x.shape_str());
        const std::size_t batch = x.dim(0);
        input_ = x;
        cached_ = true;

        Tensor y({batch, fan_out_});
        ConstMapRM xm(x.data(), static_cast<Eigen::Index>(batch),
                      static_cast<Eigen::Index>(fan_in_));
        ConstMapRM wm(w_.data(), static_cast<Eigen::Index>(fan_in_),
                      static_cast<Eigen::Index>(fan_out_));
        MapRM ym(y.data(), static_cast<Eigen::Index>(batch),
                 static_cast<Eigen::Index>(fan_out_));
        ym.noalias() = xm * wm;
        ym.rowwise() += ConstMapVec(b_.data(), static_cast<Eigen::Index>(fan_out_)).transpose();
        return y;
    }

    Tensor backward(const Tensor& dy) override {
        if (!cached_) throw UsageError("dense backward without a pending forward");
        cached_ = false;
        const std::size_t batch = input_.dim(0);
        if (dy.rank() != 2 || dy.dim(0) != batch || dy.dim(1) != fan_out_)
            throw ShapeError("dense backward gradient shape mismatch: " + dy.shape_str());

        ConstMapRM xm(input_.data(), static_cast<Eigen::Index>(batch),
                      static_cast<Eigen::Index>(fan_in_));
        ConstMapRM dym(dy.data(), static_cast<Eigen::Index>(batch),
                       static_cast<Eigen::Index>(fan_out_));
        ConstMapRM wm(w_.data(), static_cast<Eigen::Index>(fan_in_),
                      static_cast<Eigen::Index>(fan_out_));

        MapRM gwm(gw_.data(), static_cast<Eigen::Index>(fan_in_),
                  static_cast<Eigen::Index>(fan_out_));
        gwm.noalias() += xm.transpose() * dym;
        MapVec(gb_.data(), static_cast<Eigen::Index>(fan_out_)) +=
            dym.colwise().sum().transpose();

        Tensor dx = Tensor::zeros_like(input_);
        MapRM dxm(dx.data(), static_cast<Eigen::Index>(batch),
                  static_cast<Eigen::Index>(fan_in_));
        dxm.noalias() = dym * wm.transpose();
        return dx;
    }

    LayerSpec spec() const override { return LayerSpec::Dense(fan_in_, fan_out_); }
    std::vector<ParamView> params() override { return {{&w_, &gw_}, {&b_, &gb_}}; }
    bool has_kernel() const override { return true; }
    LayerShape kernel_shape() const override { return LayerShape::Dense(fan_in_, fan_out_); }
    Tensor& weights() override { return w_; }
    Tensor& weight_grads() override { return gw_; }

private:
    std::size_t fan_in_, fan_out_;
    Tensor w_, b_, gw_, gb_;
    Tensor input_;
    bool cached_ = false;
};

// ---------------------------------------------------------------------------
// Convolution (im2col patch expansion; shared layout with kernel unrolling)
// ---------------------------------------------------------------------------

class ConvLayer final : public Layer {
public:
    ConvLayer(const LayerSpec& s)
        : s_(s),
          w_({s.out_channels, s.in_channels, s.kernel, s.kernel}),
          b_({s.out_channels}),
          gw_({s.out_channels, s.in_channels, s.kernel, s.kernel}),
          gb_({s.out_channels}) {
        const long oh = out_dim(s.in_h);
        const long ow = out_dim(s.in_w);
        if (oh < 1 || ow < 1) throw ShapeError("conv output size would be empty");
        out_h_ = static_cast<std::size_t>(oh);
        out_w_ = static_cast<std::size_t>(ow);
    }

    Tensor forward(const Tensor& x, bool) override {
        const std::size_t per_item = s_.in_channels * s_.in_h * s_.in_w;
        if (item_size(x) != per_item)
            throw ShapeError("conv layer expects " + std::to_string(per_item) +
                             " inputs per item, got tensor " + x.shape_str());
        const std::size_t batch = x.dim(0);
        input_ = x;
        cached_ = true;

        Tensor y({batch, s_.out_channels, out_h_, out_w_});
        const std::size_t patch_rows = s_.in_channels * s_.kernel * s_.kernel;
        const std::size_t ohw = out_h_ * out_w_;
        ConstMapRM wmat(w_.data(), static_cast<Eigen::Index>(s_.out_channels),
                        static_cast<Eigen::Index>(patch_rows));
        ConstMapVec bias(b_.data(), static_cast<Eigen::Index>(s_.out_channels));

        parallel_for(batch, [&](std::size_t item) {
            Eigen::MatrixXd patches(patch_rows, ohw);
            fill_patches(x.data() + item * per_item, patches);
            MapRM ym(y.data() + item * s_.out_channels * ohw,
                     static_cast<Eigen::Index>(s_.out_channels),
                     static_cast<Eigen::Index>(ohw));
            ym.noalias() = wmat * patches;
            ym.colwise() += bias;
        });
        return y;
    }

    Tensor backward(const Tensor& dy) override {
        if (!cached_) throw UsageError("conv backward without a pending forward");
        cached_ = false;
        const std::size_t batch = input_.dim(0);
        const std::size_t ohw = out_h_ * out_w_;
        if (dy.size() != batch * s_.out_channels * ohw || dy.dim(0) != batch)
            throw ShapeError("conv backward gradient shape mismatch: " + dy.shape_str());

        const std::size_t per_item = s_.in_channels * s_.in_h * s_.in_w;
        const std::size_t patch_rows = s_.in_channels * s_.kernel * s_.kernel;
        ConstMapRM wmat(w_.data(), static_cast<Eigen::Index>(s_.out_channels),
                        static_cast<Eigen::Index>(patch_rows));
        MapRM gwmat(gw_.data(), static_cast<Eigen::Index>(s_.out_channels),
                    static_cast<Eigen::Index>(patch_rows));
        MapVec gbias(gb_.data(), static_cast<Eigen::Index>(s_.out_channels));

        Tensor dx = Tensor::zeros_like(input_);
        Eigen::MatrixXd patches(patch_rows, ohw);
        Eigen::MatrixXd dpatches(patch_rows, ohw);
        for (std::size_t item = 0; item < batch; ++item) {
            ConstMapRM dym(dy.data() + item * s_.out_channels * ohw,
                           static_cast<Eigen::Index>(s_.out_channels),
                           static_cast<Eigen::Index>(ohw));
            fill_patches(input_.data() + item * per_item, patches);
            gwmat.noalias() += dym * patches.transpose();
            gbias += dym.rowwise().sum();
            dpatches.noalias() = wmat.transpose() * dym;
            scatter_patches(dpatches, dx.data() + item * per_item);
        }
        return dx;
    }

    LayerSpec spec() const override { return s_; }
    std::vector<ParamView> params() override { return {{&w_, &gw_}, {&b_, &gb_}}; }
    bool has_kernel() const override { return true; }
    LayerShape kernel_shape() const override {
        return LayerShape::Conv(s_.in_channels, s_.out_channels, s_.kernel);
    }
    Tensor& weights() override { return w_; }
    Tensor& weight_grads() override { return gw_; }

private:
    long out_dim(std::size_t in) const {
        return (static_cast<long>(in) + 2 * static_cast<long>(s_.padding) -
                static_cast<long>(s_.kernel)) /
                   static_cast<long>(s_.stride) +
               1;
    }

    // patches(r, c): r = (ci*k + kr)*k + kc, c = oh*out_w + ow.
    void fill_patches(const double* x, Eigen::MatrixXd& patches) const {
        const long k = static_cast<long>(s_.kernel);
        const long pad = static_cast<long>(s_.padding);
        const long stride = static_cast<long>(s_.stride);
        const long ih_n = static_cast<long>(s_.in_h);
        const long iw_n = static_cast<long>(s_.in_w);
        for (std::size_t ci = 0; ci < s_.in_channels; ++ci) {
            const double* plane = x + ci * s_.in_h * s_.in_w;
            for (long kr = 0; kr < k; ++kr)
                for (long kc = 0; kc < k; ++kc) {
                    const std::size_t r = (ci * s_.kernel + static_cast<std::size_t>(kr)) *
                                              s_.kernel +
                                          static_cast<std::size_t>(kc);
                    std::size_t c = 0;
                    for (std::size_t oh = 0; oh < out_h_; ++oh) {
                        const long ih = static_cast<long>(oh) * stride - pad + kr;
                        for (std::size_t ow = 0; ow < out_w_; ++ow, ++c) {
                            const long iw = static_cast<long>(ow) * stride - pad + kc;
                            patches(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                                (ih >= 0 && ih < ih_n && iw >= 0 && iw < iw_n)
                                    ? plane[ih * iw_n + iw]
                                    : 0.0;
                        }
                    }
                }
        }
    }

    // Adjoint of fill_patches: accumulates patch gradients back into the
    // (already zero-initialized) input gradient plane.
    void scatter_patches(const Eigen::MatrixXd& dpatches, double* dx) const {
        const long k = static_cast<long>(s_.kernel);
        const long pad = static_cast<long>(s_.padding);
        const long stride = static_cast<long>(s_.stride);
        const long ih_n = static_cast<long>(s_.in_h);
        const long iw_n = static_cast<long>(s_.in_w);
        for (std::size_t ci = 0; ci < s_.in_channels; ++ci) {
            double* plane = dx + ci * s_.in_h * s_.in_w;
            for (long kr = 0; kr < k; ++kr)
                for (long kc = 0; kc < k; ++kc) {
                    const std::size_t r = (ci * s_.kernel + static_cast<std::size_t>(kr)) *
                                              s_.kernel +
                                          static_cast<std::size_t>(kc);
                    std::size_t c = 0;
                    for (std::size_t oh = 0; oh < out_h_; ++oh) {
                        const long ih = static_cast<long>(oh) * stride - pad + kr;
                        for (std::size_t ow = 0; ow < out_w_; ++ow, ++c) {
                            const long iw = static_cast<long>(ow) * stride - pad + kc;
                            if (ih >= 0 && ih < ih_n && iw >= 0 && iw < iw_n)
                                plane[ih * iw_n + iw] +=
                                    dpatches(static_cast<Eigen::Index>(r),
                                             static_cast<Eigen::Index>(c));
                        }
                    }
                }
        }
    }

    LayerSpec s_;
    std::size_t out_h_ = 0, out_w_ = 0;
    Tensor w_, b_, gw_, gb_;
    Tensor input_;
    bool cached_ = false;
};

// ---------------------------------------------------------------------------
// Transposed convolution (stride-s upsampling; scatter form of conv)
// ---------------------------------------------------------------------------

class TConvLayer final : public Layer {
public:
    TConvLayer(const LayerSpec& s)
        : s_(s),
          w_({s.out_channels, s.in_channels, s.kernel, s.kernel}),
          b_({s.out_channels}),
          gw_({s.out_channels, s.in_channels, s.kernel, s.kernel}),
          gb_({s.out_channels}) {
        const long oh = static_cast<long>((s.in_h - 1) * s.stride + s.kernel) -
                        2 * static_cast<long>(s.padding);
        const long ow = static_cast<long>((s.in_w - 1) * s.stride + s.kernel) -
                        2 * static_cast<long>(s.padding);
        if (oh < 1 || ow < 1) throw ShapeError("transposed-conv output size would be empty");
        out_h_ = static_cast<std::size_t>(oh);
        out_w_ = static_cast<std::size_t>(ow);
    }

    Tensor forward(const Tensor& x, bool) override {
        const std::size_t per_item = s_.in_channels * s_.in_h * s_.in_w;
        if (item_size(x) != per_item)
            throw ShapeError("transposed-conv layer expects " + std::to_string(per_item) +
                             " inputs per item, got tensor " + x.shape_str());
        const std::size_t batch = x.dim(0);
        input_ = x;
        cached_ = true;

        const std::size_t ihw = s_.in_h * s_.in_w;
        const std::size_t ohw = out_h_ * out_w_;
        const Eigen::MatrixXd wt = kernel_rows();  // [out*k^2, in]

        Tensor y({batch, s_.out_channels, out_h_, out_w_});
        parallel_for(batch, [&](std::size_t item) {
            ConstMapRM xm(x.data() + item * per_item,
                          static_cast<Eigen::Index>(s_.in_channels),
                          static_cast<Eigen::Index>(ihw));
            Eigen::MatrixXd g = wt * xm;  // [(co,kr,kc), (ih,iw)]
            double* out = y.data() + item * s_.out_channels * ohw;
            for (std::size_t co = 0; co < s_.out_channels; ++co) {
                double* plane = out + co * ohw;
                const double bias = b_[co];
                for (std::size_t p = 0; p < ohw; ++p) plane[p] = bias;
            }
            scatter_output(g, out);
        });
        return y;
    }

    Tensor backward(const Tensor& dy) override {
        if (!cached_) throw UsageError("transposed-conv backward without a pending forward");
        cached_ = false;
        const std::size_t batch = input_.dim(0);
        const std::size_t ohw = out_h_ * out_w_;
        if (dy.size() != batch * s_.out_channels * ohw || dy.dim(0) != batch)
            throw ShapeError("transposed-conv backward gradient shape mismatch: " +
                             dy.shape_str());

        const std::size_t per_item = s_.in_channels * s_.in_h * s_.in_w;
        const std::size_t ihw = s_.in_h * s_.in_w;
        const std::size_t kk = s_.kernel * s_.kernel;
        const Eigen::MatrixXd wt = kernel_rows();

        Tensor dx = Tensor::zeros_like(input_);
        Eigen::MatrixXd dwt = Eigen::MatrixXd::Zero(wt.rows(), wt.cols());
        Eigen::MatrixXd dg(static_cast<Eigen::Index>(s_.out_channels * kk),
                           static_cast<Eigen::Index>(ihw));
        MapVec gbias(gb_.data(), static_cast<Eigen::Index>(s_.out_channels));

        for (std::size_t item = 0; item < batch; ++item) {
            const double* dout = dy.data() + item * s_.out_channels * ohw;
            gather_output(dout, dg);
            ConstMapRM xm(input_.data() + item * per_item,
                          static_cast<Eigen::Index>(s_.in_channels),
                          static_cast<Eigen::Index>(ihw));
            dwt.noalias() += dg * xm.transpose();
            MapRM dxm(dx.data() + item * per_item,
                      static_cast<Eigen::Index>(s_.in_channels),
                      static_cast<Eigen::Index>(ihw));
            dxm.noalias() += wt.transpose() * dg;
            for (std::size_t co = 0; co < s_.out_channels; ++co) {
                const double* plane = dout + co * ohw;
                double sum = 0.0;
                for (std::size_t p = 0; p < ohw; ++p) sum += plane[p];
                gbias(static_cast<Eigen::Index>(co)) += sum;
            }
        }

        // Fold dwt rows [(co,kr,kc), ci] back into the [out,in,k,k] gradient.
        for (std::size_t co = 0; co < s_.out_channels; ++co)
            for (std::size_t ci = 0; ci < s_.in_channels; ++ci)
                for (std::size_t kr = 0; kr < s_.kernel; ++kr)
                    for (std::size_t kc = 0; kc < s_.kernel; ++kc)
                        gw_[((co * s_.in_channels + ci) * s_.kernel + kr) * s_.kernel + kc] +=
                            dwt(static_cast<Eigen::Index>((co * s_.kernel + kr) * s_.kernel + kc),
                                static_cast<Eigen::Index>(ci));
        return dx;
    }

    LayerSpec spec() const override { return s_; }
    std::vector<ParamView> params() override { return {{&w_, &gw_}, {&b_, &gb_}}; }
    bool has_kernel() const override { return true; }
    LayerShape kernel_shape() const override {
        return LayerShape::Conv(s_.in_channels, s_.out_channels, s_.kernel);
    }
    Tensor& weights() override { return w_; }
    Tensor& weight_grads() override { return gw_; }

private:
    // Weights rearranged to rows indexed (co, kr, kc), columns ci.
    Eigen::MatrixXd kernel_rows() const {
        const std::size_t kk = s_.kernel * s_.kernel;
        Eigen::MatrixXd wt(static_cast<Eigen::Index>(s_.out_channels * kk),
                           static_cast<Eigen::Index>(s_.in_channels));
        for (std::size_t co = 0; co < s_.out_channels; ++co)
            for (std::size_t ci = 0; ci < s_.in_channels; ++ci)
                for (std::size_t kr = 0; kr < s_.kernel; ++kr)
                    for (std::size_t kc = 0; kc < s_.kernel; ++kc)
                        wt(static_cast<Eigen::Index>((co * s_.kernel + kr) * s_.kernel + kc),
                           static_cast<Eigen::Index>(ci)) =
                            w_[((co * s_.in_channels + ci) * s_.kernel + kr) * s_.kernel + kc];
        return wt;
    }

    // out[co, ih*stride + kr - pad, iw*stride + kc - pad] += g[(co,kr,kc), (ih,iw)]
    void scatter_output(const Eigen::MatrixXd& g, double* out) const {
        const long pad = static_cast<long>(s_.padding);
        const long oh_n = static_cast<long>(out_h_);
        const long ow_n = static_cast<long>(out_w_);
        for (std::size_t co = 0; co < s_.out_channels; ++co) {
            double* plane = out + co * out_h_ * out_w_;
            for (std::size_t kr = 0; kr < s_.kernel; ++kr)
                for (std::size_t kc = 0; kc < s_.kernel; ++kc) {
                    const Eigen::Index row = static_cast<Eigen::Index>(
                        (co * s_.kernel + kr) * s_.kernel + kc);
                    Eigen::Index col = 0;
                    for (std::size_t ih = 0; ih < s_.in_h; ++ih) {
                        const long oh = static_cast<long>(ih * s_.stride + kr) - pad;
                        for (std::size_t iw = 0; iw < s_.in_w; ++iw, ++col) {
                            const long ow = static_cast<long>(iw * s_.stride + kc) - pad;
                            if (oh >= 0 && oh < oh_n && ow >= 0 && ow < ow_n)
                                plane[oh * ow_n + ow] += g(row, col);
                        }
                    }
                }
        }
    }

    // Adjoint of scatter_output.
    void gather_output(const double* dout, Eigen::MatrixXd& dg) const {
        const long pad = static_cast<long>(s_.padding);
        const long oh_n = static_cast<long>(out_h_);
        const long ow_n = static_cast<long>(out_w_);
        for (std::size_t co = 0; co < s_.out_channels; ++co) {
            const double* plane = dout + co * out_h_ * out_w_;
            for (std::size_t kr = 0; kr < s_.kernel; ++kr)
                for (std::size_t kc = 0; kc < s_.kernel; ++kc) {
                    const Eigen::Index row = static_cast<Eigen::Index>(
                        (co * s_.kernel + kr) * s_.kernel + kc);
                    Eigen::Index col = 0;
                    for (std::size_t ih = 0; ih < s_.in_h; ++ih) {
                        const long oh = static_cast<long>(ih * s_.stride + kr) - pad;
                        for (std::size_t iw = 0; iw < s_.in_w; ++iw, ++col) {
                            const long ow = static_cast<long>(iw * s_.stride + kc) - pad;
                            dg(row, col) = (oh >= 0 && oh < oh_n && ow >= 0 && ow < ow_n)
                                               ? plane[oh * ow_n + ow]
                                               : 0.0;
                        }
                    }
                }
        }
    }

    LayerSpec s_;
    std::size_t out_h_ = 0, out_w_ = 0;
    Tensor w_, b_, gw_, gb_;
    Tensor input_;
    bool cached_ = false;
};

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

constexpr double kLeakySlope = 0.2;

class ActivationLayer final : public Layer {
public:
    explicit ActivationLayer(ActKind kind) : kind_(kind) {}

    Tensor forward(const Tensor& x, bool) override {
        Tensor y = Tensor::zeros_like(x);
        const std::size_t n = x.size();
        switch (kind_) {
            case ActKind::relu:
                for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
                break;
            case ActKind::leaky_relu:
                for (std::size_t i = 0; i < n; ++i)
                    y[i] = x[i] > 0.0 ? x[i] : kLeakySlope * x[i];
                break;
            case ActKind::tanh:
                for (std::size_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
                break;
            case ActKind::sigmoid:
                for (std::size_t i = 0; i < n; ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
                break;
        }
        // relu/leaky differentiate on the input, tanh/sigmoid on the output.
        cache_ = (kind_ == ActKind::relu || kind_ == ActKind::leaky_relu) ? x : y;
        cached_ = true;
        return y;
    }

    Tensor backward(const Tensor& dy) override {
        if (!cached_) throw UsageError("activation backward without a pending forward");
        cached_ = false;
        if (!dy.same_shape(cache_))
            throw ShapeError("activation backward gradient shape mismatch");
        Tensor dx = Tensor::zeros_like(dy);
        const std::size_t n = dy.size();
        switch (kind_) {
            case ActKind::relu:
                for (std::size_t i = 0; i < n; ++i) dx[i] = cache_[i] > 0.0 ? dy[i] : 0.0;
                break;
            case ActKind::leaky_relu:
                for (std::size_t i = 0; i < n; ++i)
                    dx[i] = cache_[i] > 0.0 ? dy[i] : kLeakySlope * dy[i];
                break;
            case ActKind::tanh:
                for (std::size_t i = 0; i < n; ++i) dx[i] = dy[i] * (1.0 - cache_[i] * cache_[i]);
                break;
            case ActKind::sigmoid:
                for (std::size_t i = 0; i < n; ++i)
                    dx[i] = dy[i] * cache_[i] * (1.0 - cache_[i]);
                break;
        }
        return dx;
    }

    LayerSpec spec() const override { return LayerSpec::Act(kind_); }

private:
    ActKind kind_;
    Tensor cache_;
    bool cached_ = false;
};

// ---------------------------------------------------------------------------
// Batch normalization (per feature on [B,C], per channel on [B,C,H,W])
// ---------------------------------------------------------------------------

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.9;

class BatchNormLayer final : public Layer {
public:
    explicit BatchNormLayer(std::size_t channels)
        : channels_(channels),
          gamma_({channels}),
          beta_({channels}),
          ggamma_({channels}),
          gbeta_({channels}),
          run_mean_({channels}),
          run_var_({channels}) {
        gamma_.fill(1.0);
        run_var_.fill(1.0);
    }

    Tensor forward(const Tensor& x, bool train) override {
        check_layout(x);
        const std::size_t groups = x.size() / channels_;  // B or B*H*W
        xhat_ = Tensor::zeros_like(x);
        inv_std_.assign(channels_, 0.0);
        train_mode_ = train;
        cached_ = true;
        in_shape_ = x.shape();

        Tensor y = Tensor::zeros_like(x);
        for (std::size_t c = 0; c < channels_; ++c) {
            double mean, var;
            if (train) {
                double sum = 0.0, sq = 0.0;
                for_channel(x, c, [&](double v) {
                    sum += v;
                    sq += v * v;
                });
                mean = sum / static_cast<double>(groups);
                var = sq / static_cast<double>(groups) - mean * mean;
                if (var < 0.0) var = 0.0;  // round-off guard
                run_mean_[c] = kBnMomentum * run_mean_[c] + (1.0 - kBnMomentum) * mean;
                run_var_[c] = kBnMomentum * run_var_[c] + (1.0 - kBnMomentum) * var;
            } else {
                mean = run_mean_[c];
                var = run_var_[c];
            }
            const double istd = 1.0 / std::sqrt(var + kBnEps);
            inv_std_[c] = istd;
            const double g = gamma_[c], b = beta_[c];
            transform_channel(x, y, c, [&](double v, std::size_t flat) {
                const double xh = (v - mean) * istd;
                xhat_[flat] = xh;
                return g * xh + b;
            });
        }
        return y;
    }

    Tensor backward(const Tensor& dy) override {
        if (!cached_) throw UsageError("batchnorm backward without a pending forward");
        cached_ = false;
        if (dy.shape() != in_shape_) throw ShapeError("batchnorm backward shape mismatch");
        const std::size_t groups = dy.size() / channels_;
        const double n = static_cast<double>(groups);

        Tensor dx = Tensor::zeros_like(dy);
        for (std::size_t c = 0; c < channels_; ++c) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for_channel_flat(dy, c, [&](double v, std::size_t flat) {
                sum_dy += v;
                sum_dy_xhat += v * xhat_[flat];
            });
            ggamma_[c] += sum_dy_xhat;
            gbeta_[c] += sum_dy;

            const double g_istd = gamma_[c] * inv_std_[c];
            if (train_mode_) {
                transform_channel(dy, dx, c, [&](double v, std::size_t flat) {
                    return g_istd * (v - sum_dy / n - xhat_[flat] * sum_dy_xhat / n);
                });
            } else {
                transform_channel(dy, dx, c, [&](double v, std::size_t) {
                    return g_istd * v;
                });
            }
        }
        return dx;
    }

    LayerSpec spec() const override { return LayerSpec::BatchNorm(channels_); }
    std::vector<ParamView> params() override {
        return {{&gamma_, &ggamma_}, {&beta_, &gbeta_}};
    }
    std::vector<Tensor*> state() override { return {&run_mean_, &run_var_}; }

private:
    void check_layout(const Tensor& x) const {
        const bool ok = (x.rank() == 2 && x.dim(1) == channels_) ||
                        (x.rank() == 4 && x.dim(1) == channels_);
        if (!ok)
            throw ShapeError("batchnorm over " + std::to_string(channels_) +
                             " channels cannot consume tensor " + x.shape_str());
    }

    template <typename Fn>
    void for_channel(const Tensor& x, std::size_t c, Fn&& fn) const {
        for_channel_flat(x, c, [&](double v, std::size_t) { fn(v); });
    }

    template <typename Fn>
    void for_channel_flat(const Tensor& x, std::size_t c, Fn&& fn) const {
        const std::size_t batch = x.dim(0);
        if (x.rank() == 2) {
            for (std::size_t b = 0; b < batch; ++b) {
                const std::size_t flat = b * channels_ + c;
                fn(x[flat], flat);
            }
        } else {
            const std::size_t hw = x.dim(2) * x.dim(3);
            for (std::size_t b = 0; b < batch; ++b) {
                const std::size_t base = (b * channels_ + c) * hw;
                for (std::size_t p = 0; p < hw; ++p) fn(x[base + p], base + p);
            }
        }
    }

    template <typename Fn>
    void transform_channel(const Tensor& in, Tensor& out, std::size_t c, Fn&& fn) const {
        for_channel_flat(in, c, [&](double v, std::size_t flat) { out[flat] = fn(v, flat); });
    }

    std::size_t channels_;
    Tensor gamma_, beta_, ggamma_, gbeta_;
    Tensor run_mean_, run_var_;
    Tensor xhat_;
    std::vector<double> inv_std_;
    std::vector<std::size_t> in_shape_;
    bool train_mode_ = true;
    bool cached_ = false;
};

}  // namespace

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

Tensor Network::forward(const Tensor& batch, bool train) {
    Tensor cur = batch;
    for (auto& l : layers_) cur = l->forward(cur, train);
    return cur;
}

Tensor Network::backward(const Tensor& output_grad) {
    Tensor cur = output_grad;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) cur = (*it)->backward(cur);
    return cur;
}

void Network::zero_grads() {
    for (auto& l : layers_) l->zero_grads();
}

std::vector<ParamView> Network::params() {
    std::vector<ParamView> out;
    for (auto& l : layers_)
        for (auto& p : l->params()) out.push_back(p);
    return out;
}

std::vector<std::size_t> Network::kernel_layers() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
        if (layers_[i]->has_kernel()) out.push_back(i);
    return out;
}

std::unique_ptr<Layer> make_layer(const LayerSpec& spec) {
    switch (spec.kind) {
        case LayerSpec::Kind::dense:
            return std::make_unique<DenseLayer>(spec.fan_in, spec.fan_out);
        case LayerSpec::Kind::conv:
            return std::make_unique<ConvLayer>(spec);
        case LayerSpec::Kind::tconv:
            return std::make_unique<TConvLayer>(spec);
        case LayerSpec::Kind::activation:
            return std::make_unique<ActivationLayer>(spec.act);
        case LayerSpec::Kind::batchnorm:
            return std::make_unique<BatchNormLayer>(spec.channels);
    }
    throw UsageError("unknown layer kind");
}

Network build_network(const std::vector<LayerSpec>& specs, std::uint64_t seed) {
    Network net;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> init(0.0, 0.02);
    for (const auto& spec : specs) {
        auto layer = make_layer(spec);
        if (layer->has_kernel()) {
            Tensor& w = layer->weights();
            for (std::size_t i = 0; i < w.size(); ++i) w[i] = init(rng);
        }
        net.add(std::move(layer));
    }
    return net;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

AdamState::AdamState(Network& net, AdamConfig cfg) : cfg_(cfg) {
    for (auto& p : net.params()) {
        m_.push_back(Tensor::zeros_like(*p.value));
        v_.push_back(Tensor::zeros_like(*p.value));
    }
}

void AdamState::step(Network& net) {
    auto params = net.params();
    if (params.size() != m_.size())
        throw UsageError("Adam state does not match the network's parameter list");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& value = *params[k].value;
        Tensor& grad = *params[k].grad;
        Tensor& m = m_[k];
        Tensor& v = v_[k];
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double g = grad[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
        grad.fill(0.0);
    }
}

// ---------------------------------------------------------------------------
// Baseline weight conditioning
// ---------------------------------------------------------------------------

double power_iteration_sigma(const Eigen::MatrixXd& mat, int iters, Eigen::VectorXd& u,
                             std::mt19937_64& rng) {
    if (iters < 1) throw UsageError("power iteration needs at least one iteration");
    const Eigen::Index n = mat.cols();
    if (u.size() != n) {
        std::normal_distribution<double> dist(0.0, 1.0);
        u.resize(n);
        for (Eigen::Index i = 0; i < n; ++i) u(i) = dist(rng);
        const double norm = u.norm();
        if (norm > 0.0) u /= norm;
    }
    double sigma = 0.0;
    for (int it = 0; it < iters; ++it) {
        Eigen::VectorXd v = mat * u;
        const double nv = v.norm();
        if (nv <= 1e-300) return 0.0;
        v /= nv;
        Eigen::VectorXd w = mat.transpose() * v;
        const double nw = w.norm();
        if (nw <= 1e-300) return 0.0;
        u = w / nw;
        sigma = nw;  // = v^T A u with u the fresh right vector
    }
    return sigma;
}

double spectral_normalize(Layer& layer, int power_iters, Eigen::VectorXd& u,
                          std::mt19937_64& rng) {
    KernelMatrix km = unroll(layer.weights(), layer.kernel_shape());
    const double sigma = power_iteration_sigma(km.values, power_iters, u, rng);
    if (sigma > 1e-300) {
        Tensor& w = layer.weights();
        for (std::size_t i = 0; i < w.size(); ++i) w[i] /= sigma;
    }
    return sigma;
}

void weight_clip(Network& net, double c) {
    if (!(c > 0.0)) throw UsageError("clip bound must be positive");
    for (auto& p : net.params()) {
        Tensor& value = *p.value;
        for (std::size_t i = 0; i < value.size(); ++i) {
            if (value[i] > c) value[i] = c;
            if (value[i] < -c) value[i] = -c;
        }
    }
}

}  // namespace direal
