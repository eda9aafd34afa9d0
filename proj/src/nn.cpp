#include "dibrqa/nn.hpp"

#include "dibrqa/error.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace dibrqa::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;

struct ConvGeometry {
    int channels, batch, in_h, in_w, k, stride, pad, out_h, out_w;

    std::size_t rows() const noexcept { return static_cast<std::size_t>(channels) * k * k; }
    std::size_t cols() const noexcept { return static_cast<std::size_t>(batch) * out_h * out_w; }
};

// cols[(c*k + ky)*k + kx][(n*out_h + oy)*out_w + ox] = x[c][n][oy*s - p + ky][ox*s - p + kx]
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
    const std::size_t ncols = g.cols();
    for (int c = 0; c < g.channels; ++c)
        for (int ky = 0; ky < g.k; ++ky)
            for (int kx = 0; kx < g.k; ++kx) {
                T* row = cols + ((static_cast<std::size_t>(c) * g.k + ky) * g.k + kx) * ncols;
                for (int n = 0; n < g.batch; ++n) {
                    const T* plane = x + (static_cast<std::size_t>(c) * g.batch + n) * g.in_h * g.in_w;
                    for (int oy = 0; oy < g.out_h; ++oy) {
                        const int iy = oy * g.stride - g.pad + ky;
                        T* dst = row + (static_cast<std::size_t>(n) * g.out_h + oy) * g.out_w;
                        if (iy < 0 || iy >= g.in_h) {
                            std::fill(dst, dst + g.out_w, T(0));
                            continue;
                        }
                        const T* src = plane + static_cast<std::size_t>(iy) * g.in_w;
                        for (int ox = 0; ox < g.out_w; ++ox) {
                            const int ix = ox * g.stride - g.pad + kx;
                            dst[ox] = (ix >= 0 && ix < g.in_w) ? src[ix] : T(0);
                        }
                    }
                }
            }
}

// Adjoint of im2col: scatters-adds columns back into x (which must be zeroed).
template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* x) {
    const std::size_t ncols = g.cols();
    for (int c = 0; c < g.channels; ++c)
        for (int ky = 0; ky < g.k; ++ky)
            for (int kx = 0; kx < g.k; ++kx) {
                const T* row = cols + ((static_cast<std::size_t>(c) * g.k + ky) * g.k + kx) * ncols;
                for (int n = 0; n < g.batch; ++n) {
                    T* plane = x + (static_cast<std::size_t>(c) * g.batch + n) * g.in_h * g.in_w;
                    for (int oy = 0; oy < g.out_h; ++oy) {
                        const int iy = oy * g.stride - g.pad + ky;
                        if (iy < 0 || iy >= g.in_h)
                            continue;
                        const T* src = row + (static_cast<std::size_t>(n) * g.out_h + oy) * g.out_w;
                        T* dst = plane + static_cast<std::size_t>(iy) * g.in_w;
                        for (int ox = 0; ox < g.out_w; ++ox) {
                            const int ix = ox * g.stride - g.pad + kx;
                            if (ix >= 0 && ix < g.in_w)
                                dst[ix] += src[ox];
                        }
                    }
                }
            }
}

int conv_out(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

void check_channels(const Shape& in, int expected, const char* what) {
    if (in.c != expected)
        throw Error(Errc::ShapeError, std::string(what) + ": expected " + std::to_string(expected) +
                                          " input channels, got " + std::to_string(in.c));
}

} // namespace

// ---- packing ---------------------------------------------------------------

template <typename T>
Activation<T> pack_images(std::span<const ImageRGB> images) {
    if (images.empty())
        throw Error(Errc::DataEmpty, "no images to pack");
    const int h = images.front().height(), w = images.front().width();
    Activation<T> act({3, static_cast<int>(images.size()), h, w});
    for (std::size_t n = 0; n < images.size(); ++n) {
        const ImageRGB& img = images[n];
        if (img.height() != h || img.width() != w)
            throw Error(Errc::DimMismatch, "images in a batch must share dimensions");
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c)
                for (int ch = 0; ch < 3; ++ch)
                    act.at(ch, static_cast<int>(n), r, c) = static_cast<T>(img.at(r, c, ch));
    }
    return act;
}

template <typename T>
Activation<T> pack_masks(std::span<const BinaryMask> masks) {
    if (masks.empty())
        throw Error(Errc::DataEmpty, "no masks to pack");
    const int h = masks.front().height(), w = masks.front().width();
    Activation<T> act({1, static_cast<int>(masks.size()), h, w});
    for (std::size_t n = 0; n < masks.size(); ++n) {
        if (masks[n].height() != h || masks[n].width() != w)
            throw Error(Errc::DimMismatch, "masks in a batch must share dimensions");
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c)
                act.at(0, static_cast<int>(n), r, c) = masks[n].at(r, c) ? T(1) : T(0);
    }
    return act;
}

template <typename T>
ImageRGB unpack_image(const Activation<T>& act, int n) {
    if (act.shape.c != 3 || n < 0 || n >= act.shape.n)
        throw Error(Errc::ShapeError, "activation is not an RGB batch or index out of range");
    ImageRGB img(act.shape.h, act.shape.w);
    for (int r = 0; r < act.shape.h; ++r)
        for (int c = 0; c < act.shape.w; ++c)
            for (int ch = 0; ch < 3; ++ch)
                img.at(r, c, ch) = std::clamp(static_cast<float>(act.at(ch, n, r, c)), 0.0f, 1.0f);
    return img;
}

// ---- Conv2d ----------------------------------------------------------------

template <typename T>
Conv2d<T>::Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad)
    : in_(in_channels), out_(out_channels), k_(kernel), stride_(stride), pad_(pad) {
    const std::size_t wn = static_cast<std::size_t>(out_) * in_ * k_ * k_;
    weight_.assign(wn, T(0));
    dweight_.assign(wn, T(0));
    bias_.assign(static_cast<std::size_t>(out_), T(0));
    dbias_.assign(static_cast<std::size_t>(out_), T(0));
}

template <typename T>
Shape Conv2d<T>::output_shape(const Shape& in) const {
    check_channels(in, in_, "conv");
    const int oh = conv_out(in.h, k_, stride_, pad_), ow = conv_out(in.w, k_, stride_, pad_);
    if (oh < 1 || ow < 1)
        throw Error(Errc::ShapeError, "conv input " + std::to_string(in.h) + "x" + std::to_string(in.w) +
                                          " too small for kernel " + std::to_string(k_));
    return {out_, in.n, oh, ow};
}

template <typename T>
Activation<T> Conv2d<T>::forward(const Activation<T>& x) {
    const Shape os = output_shape(x.shape);
    in_shape_ = x.shape;
    const ConvGeometry g{in_, x.shape.n, x.shape.h, x.shape.w, k_, stride_, pad_, os.h, os.w};
    cols_.resize(g.rows() * g.cols());
    im2col(x.data.data(), g, cols_.data());

    Activation<T> y(os);
    ConstMatMap<T> w(weight_.data(), out_, static_cast<Eigen::Index>(g.rows()));
    ConstMatMap<T> cols(cols_.data(), static_cast<Eigen::Index>(g.rows()), static_cast<Eigen::Index>(g.cols()));
    MatMap<T> out(y.data.data(), out_, static_cast<Eigen::Index>(g.cols()));
    out.noalias() = w * cols;
    out.colwise() += VecMap<T>(bias_.data(), out_);
    return y;
}

template <typename T>
Activation<T> Conv2d<T>::backward(const Activation<T>& grad_out, bool param_grads) {
    const ConvGeometry g{in_, in_shape_.n, in_shape_.h, in_shape_.w, k_, stride_, pad_,
                         grad_out.shape.h, grad_out.shape.w};
    ConstMatMap<T> dy(grad_out.data.data(), out_, static_cast<Eigen::Index>(g.cols()));
    ConstMatMap<T> cols(cols_.data(), static_cast<Eigen::Index>(g.rows()), static_cast<Eigen::Index>(g.cols()));
    ConstMatMap<T> w(weight_.data(), out_, static_cast<Eigen::Index>(g.rows()));
    if (param_grads) {
        MatMap<T> dw(dweight_.data(), out_, static_cast<Eigen::Index>(g.rows()));
        dw.noalias() += dy * cols.transpose();
        VecMap<T>(dbias_.data(), out_) += dy.rowwise().sum();
    }
    Buffer<T> dcols(g.rows() * g.cols());
    MatMap<T> dc(dcols.data(), static_cast<Eigen::Index>(g.rows()), static_cast<Eigen::Index>(g.cols()));
    dc.noalias() = w.transpose() * dy;
    Activation<T> dx(in_shape_);
    col2im(dcols.data(), g, dx.data.data());
    return dx;
}

template <typename T>
std::vector<Param<T>> Conv2d<T>::params() {
    return {{"weight", {out_, in_, k_, k_}, &weight_, &dweight_}, {"bias", {out_}, &bias_, &dbias_}};
}

// ---- ConvTranspose2d -------------------------------------------------------

template <typename T>
ConvTranspose2d<T>::ConvTranspose2d(int in_channels, int out_channels, int kernel, int stride, int pad)
    : in_(in_channels), out_(out_channels), k_(kernel), stride_(stride), pad_(pad) {
    const std::size_t wn = static_cast<std::size_t>(in_) * out_ * k_ * k_;
    weight_.assign(wn, T(0));
    dweight_.assign(wn, T(0));
    bias_.assign(static_cast<std::size_t>(out_), T(0));
    dbias_.assign(static_cast<std::size_t>(out_), T(0));
}

template <typename T>
Shape ConvTranspose2d<T>::output_shape(const Shape& in) const {
    check_channels(in, in_, "convT");
    const int oh = (in.h - 1) * stride_ - 2 * pad_ + k_;
    const int ow = (in.w - 1) * stride_ - 2 * pad_ + k_;
    if (oh < 1 || ow < 1)
        throw Error(Errc::ShapeError, "transposed conv produces an empty output");
    return {out_, in.n, oh, ow};
}

template <typename T>
Activation<T> ConvTranspose2d<T>::forward(const Activation<T>& x) {
    const Shape os = output_shape(x.shape);
    input_ = x;
    // The output plays the role of a conv input whose conv output is x.
    const ConvGeometry g{out_, x.shape.n, os.h, os.w, k_, stride_, pad_, x.shape.h, x.shape.w};
    ConstMatMap<T> w(weight_.data(), in_, static_cast<Eigen::Index>(g.rows()));
    ConstMatMap<T> xin(x.data.data(), in_, static_cast<Eigen::Index>(g.cols()));
    Buffer<T> cols(g.rows() * g.cols());
    MatMap<T> cm(cols.data(), static_cast<Eigen::Index>(g.rows()), static_cast<Eigen::Index>(g.cols()));
    cm.noalias() = w.transpose() * xin;
    Activation<T> y(os);
    col2im(cols.data(), g, y.data.data());
    const std::size_t plane = static_cast<std::size_t>(os.n) * os.h * os.w;
    for (int c = 0; c < out_; ++c) {
        T* p = y.data.data() + plane * c;
        const T b = bias_[c];
        for (std::size_t i = 0; i < plane; ++i)
            p[i] += b;
    }
    return y;
}

template <typename T>
Activation<T> ConvTranspose2d<T>::backward(const Activation<T>& grad_out, bool param_grads) {
    const Shape& xs = input_.shape;
    const ConvGeometry g{out_, xs.n, grad_out.shape.h, grad_out.shape.w, k_, stride_, pad_, xs.h, xs.w};
    Buffer<T> dcols(g.rows() * g.cols());
    im2col(grad_out.data.data(), g, dcols.data());
    ConstMatMap<T> dc(dcols.data(), static_cast<Eigen::Index>(g.rows()), static_cast<Eigen::Index>(g.cols()));
    ConstMatMap<T> w(weight_.data(), in_, static_cast<Eigen::Index>(g.rows()));
    if (param_grads) {
        ConstMatMap<T> xin(input_.data.data(), in_, static_cast<Eigen::Index>(g.cols()));
        MatMap<T> dw(dweight_.data(), in_, static_cast<Eigen::Index>(g.rows()));
        dw.noalias() += xin * dc.transpose();
        const std::size_t plane = static_cast<std::size_t>(grad_out.shape.n) * grad_out.shape.h * grad_out.shape.w;
        for (int c = 0; c < out_; ++c) {
            const T* p = grad_out.data.data() + plane * c;
            T acc = 0;
            for (std::size_t i = 0; i < plane; ++i)
                acc += p[i];
            dbias_[c] += acc;
        }
    }
    Activation<T> dx(xs);
    MatMap<T> dxm(dx.data.data(), in_, static_cast<Eigen::Index>(g.cols()));
    dxm.noalias() = w * dc;
    return dx;
}

template <typename T>
std::vector<Param<T>> ConvTranspose2d<T>::params() {
    return {{"weight", {in_, out_, k_, k_}, &weight_, &dweight_}, {"bias", {out_}, &bias_, &dbias_}};
}

// ---- activations -----------------------------------------------------------

template <typename T>
Activation<T> LeakyReLU<T>::forward(const Activation<T>& x) {
    Activation<T> y = x;
    positive_.resize(x.data.size());
    for (std::size_t i = 0; i < y.data.size(); ++i) {
        positive_[i] = y.data[i] > T(0);
        if (!positive_[i])
            y.data[i] *= slope_;
    }
    return y;
}

template <typename T>
Activation<T> LeakyReLU<T>::backward(const Activation<T>& grad_out, bool) {
    Activation<T> dx = grad_out;
    for (std::size_t i = 0; i < dx.data.size(); ++i)
        if (!positive_[i])
            dx.data[i] *= slope_;
    return dx;
}

template <typename T>
Activation<T> ReLU<T>::forward(const Activation<T>& x) {
    Activation<T> y = x;
    positive_.resize(x.data.size());
    for (std::size_t i = 0; i < y.data.size(); ++i) {
        positive_[i] = y.data[i] > T(0);
        if (!positive_[i])
            y.data[i] = T(0);
    }
    return y;
}

template <typename T>
Activation<T> ReLU<T>::backward(const Activation<T>& grad_out, bool) {
    Activation<T> dx = grad_out;
    for (std::size_t i = 0; i < dx.data.size(); ++i)
        if (!positive_[i])
            dx.data[i] = T(0);
    return dx;
}

template <typename T>
Activation<T> Sigmoid<T>::forward(const Activation<T>& x) {
    Activation<T> y = x;
    for (auto& v : y.data)
        v = T(1) / (T(1) + std::exp(-v));
    output_ = y.data;
    return y;
}

template <typename T>
Activation<T> Sigmoid<T>::backward(const Activation<T>& grad_out, bool) {
    Activation<T> dx = grad_out;
    for (std::size_t i = 0; i < dx.data.size(); ++i)
        dx.data[i] *= output_[i] * (T(1) - output_[i]);
    return dx;
}

// ---- Sequential --------------------------------------------------------------

template <typename T>
Activation<T> Sequential<T>::forward(const Activation<T>& x) {
    return forward_prefix(x, layers_.size());
}

template <typename T>
Activation<T> Sequential<T>::forward_prefix(const Activation<T>& x, std::size_t end) {
    if (end == 0)
        return x;
    Activation<T> cur = layers_[0]->forward(x);
    for (std::size_t i = 1; i < end && i < layers_.size(); ++i)
        cur = layers_[i]->forward(cur);
    return cur;
}

template <typename T>
std::vector<Activation<T>> Sequential<T>::forward_trace(const Activation<T>& x) {
    std::vector<Activation<T>> trace;
    trace.reserve(layers_.size());
    const Activation<T>* cur = &x;
    for (auto& layer : layers_) {
        trace.push_back(layer->forward(*cur));
        cur = &trace.back();
    }
    return trace;
}

template <typename T>
Activation<T> Sequential<T>::backward(const Activation<T>& grad_out, bool param_grads) {
    Activation<T> grad = grad_out;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
        grad = (*it)->backward(grad, param_grads);
    return grad;
}

template <typename T>
std::vector<Param<T>> Sequential<T>::params() {
    std::vector<Param<T>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
        for (auto& p : layers_[i]->params()) {
            p.name = "layer" + std::to_string(i) + "." + p.name;
            out.push_back(std::move(p));
        }
    return out;
}

template <typename T>
std::size_t Sequential<T>::param_count() {
    std::size_t n = 0;
    for (const auto& p : params())
        n += p.value->size();
    return n;
}

template <typename T>
void Sequential<T>::zero_grad() {
    for (auto& p : params())
        std::fill(p.grad->begin(), p.grad->end(), T(0));
}

template <typename T>
void Sequential<T>::init_normal(std::mt19937_64& rng, double stddev) {
    std::normal_distribution<double> normal(0.0, stddev);
    for (auto& p : params()) {
        const bool is_bias = p.name.size() >= 4 && p.name.compare(p.name.size() - 4, 4, "bias") == 0;
        for (auto& v : *p.value)
            v = is_bias ? T(0) : static_cast<T>(normal(rng));
    }
}

template <typename T>
void Sequential<T>::init_scaled(std::mt19937_64& rng) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        auto ps = layers_[i]->params();
        if (ps.empty())
            continue;
        double gain = 1.0;
        if (i + 1 < layers_.size()) {
            const std::string next = layers_[i + 1]->kind();
            if (next == "relu")
                gain = std::sqrt(2.0);
            else if (next == "leaky") {
                const double a = static_cast<double>(static_cast<LeakyReLU<T>&>(*layers_[i + 1]).slope());
                gain = std::sqrt(2.0 / (1.0 + a * a));
            }
        }
        std::normal_distribution<double> normal(0.0, gain / std::sqrt(layers_[i]->fan_in()));
        for (auto& p : ps) {
            const bool is_bias = p.name.size() >= 4 && p.name.compare(p.name.size() - 4, 4, "bias") == 0;
            for (auto& v : *p.value)
                v = is_bias ? T(0) : static_cast<T>(normal(rng));
        }
    }
}

// ---- Adam ------------------------------------------------------------------

template <typename T>
Adam<T>::Adam(std::vector<Param<T>> params, Options opts) : params_(std::move(params)), opts_(opts) {
    if (!(opts_.learning_rate > 0.0))
        throw Error(Errc::InvalidParam, "learning rate must be > 0");
    for (const auto& p : params_) {
        m_.emplace_back(p.value->size(), T(0));
        v_.emplace_back(p.value->size(), T(0));
    }
}

template <typename T>
void Adam<T>::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    const T step = static_cast<T>(opts_.learning_rate * std::sqrt(c2) / c1);
    const T b1 = static_cast<T>(opts_.beta1), b2 = static_cast<T>(opts_.beta2);
    const T eps = static_cast<T>(opts_.epsilon * std::sqrt(c2));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& value = *params_[i].value;
        const auto& grad = *params_[i].grad;
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < value.size(); ++j) {
            const T g = grad[j];
            m[j] = b1 * m[j] + (T(1) - b1) * g;
            v[j] = b2 * v[j] + (T(1) - b2) * g * g;
            value[j] -= step * m[j] / (std::sqrt(v[j]) + eps);
        }
    }
}

// ---- weight export -----------------------------------------------------------

template <typename T>
NamedTensors export_weights(Sequential<T>& net, const std::string& prefix) {
    NamedTensors out;
    for (const auto& p : net.params()) {
        TensorBlob blob;
        blob.dims = p.dims;
        blob.values.assign(p.value->begin(), p.value->end());
        out.emplace(prefix + p.name, std::move(blob));
    }
    return out;
}

template <typename T>
void import_weights(Sequential<T>& net, const NamedTensors& tensors, const std::string& prefix) {
    for (auto& p : net.params()) {
        const auto it = tensors.find(prefix + p.name);
        if (it == tensors.end())
            throw Error(Errc::ShapeError, "missing tensor " + prefix + p.name);
        if (it->second.values.size() != p.value->size() || it->second.dims != p.dims)
            throw Error(Errc::ShapeError, "tensor " + prefix + p.name + " has the wrong shape");
        std::transform(it->second.values.begin(), it->second.values.end(), p.value->begin(),
                       [](float v) { return static_cast<T>(v); });
    }
}

#define DIBRQA_INSTANTIATE_NN(T)                                                                     \
    template Activation<T> pack_images<T>(std::span<const ImageRGB>);                                \
    template Activation<T> pack_masks<T>(std::span<const BinaryMask>);                               \
    template ImageRGB unpack_image<T>(const Activation<T>&, int);                                    \
    template class Conv2d<T>;                                                                        \
    template class ConvTranspose2d<T>;                                                               \
    template class LeakyReLU<T>;                                                                     \
    template class ReLU<T>;                                                                          \
    template class Sigmoid<T>;                                                                       \
    template class Sequential<T>;                                                                    \
    template class Adam<T>;                                                                          \
    template NamedTensors export_weights<T>(Sequential<T>&, const std::string&);                     \
    template void import_weights<T>(Sequential<T>&, const NamedTensors&, const std::string&);

DIBRQA_INSTANTIATE_NN(float)
DIBRQA_INSTANTIATE_NN(double)

} // namespace dibrqa::nn
