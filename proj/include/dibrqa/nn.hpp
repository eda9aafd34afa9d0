#pragma once

// Minimal convolutional network toolkit: just the layers the context
// inpainter and its discriminators need, with hand-written backward passes.
// Activations are stored channel-major (C, N, H, W) so every convolution is a
// single GEMM over the whole batch.

#include "dibrqa/image.hpp"

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <new>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace dibrqa::nn {

/// Allocator with a fixed 64-byte alignment. Eigen peels a different number
/// of leading elements depending on the address, which changes summation
/// order; a fixed alignment keeps results bitwise reproducible.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

struct Shape {
    int c = 0, n = 0, h = 0, w = 0;

    std::size_t numel() const noexcept {
        return static_cast<std::size_t>(c) * n * h * w;
    }
    bool operator==(const Shape&) const = default;
};

template <typename T>
struct Activation {
    Shape shape;
    Buffer<T> data;

    Activation() = default;
    explicit Activation(Shape s, T fill = T(0)) : shape(s), data(s.numel(), fill) {}

    T& at(int c, int n, int h, int w) { return data[offset(c, n, h, w)]; }
    T at(int c, int n, int h, int w) const { return data[offset(c, n, h, w)]; }

    std::size_t offset(int c, int n, int h, int w) const noexcept {
        return ((static_cast<std::size_t>(c) * shape.n + n) * shape.h + h) * shape.w + w;
    }
};

/// Packs images (H×W×3, all the same size) into a (3, N, H, W) activation.
template <typename T>
Activation<T> pack_images(std::span<const ImageRGB> images);
/// Packs masks into (1, N, H, W).
template <typename T>
Activation<T> pack_masks(std::span<const BinaryMask> masks);
/// Unpacks image `n` of a (3, N, H, W) activation, clamping to [0,1].
template <typename T>
ImageRGB unpack_image(const Activation<T>& act, int n);

/// A trainable tensor and its gradient accumulator.
template <typename T>
struct Param {
    std::string name;
    std::vector<int> dims;
    Buffer<T>* value = nullptr;
    Buffer<T>* grad = nullptr;
};

template <typename T>
class Layer {
public:
    virtual ~Layer() = default;

    virtual std::string kind() const = 0;
    virtual Shape output_shape(const Shape& in) const = 0;
    /// Caches whatever the matching backward call needs.
    virtual Activation<T> forward(const Activation<T>& x) = 0;
    /// Returns d(loss)/d(input); accumulates parameter gradients when asked.
    virtual Activation<T> backward(const Activation<T>& grad_out, bool param_grads) = 0;
    virtual std::vector<Param<T>> params() { return {}; }
    /// Inputs feeding one output unit; 0 for parameter-free layers.
    virtual double fan_in() const { return 0.0; }
};

/// 2-D convolution, square kernel, weight layout (out, in, k, k).
template <typename T>
class Conv2d final : public Layer<T> {
public:
    Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad);

    std::string kind() const override { return "conv"; }
    Shape output_shape(const Shape& in) const override;
    Activation<T> forward(const Activation<T>& x) override;
    Activation<T> backward(const Activation<T>& grad_out, bool param_grads) override;
    std::vector<Param<T>> params() override;
    double fan_in() const override { return static_cast<double>(in_) * k_ * k_; }

    int in_channels() const noexcept { return in_; }
    int out_channels() const noexcept { return out_; }
    Buffer<T>& weight() noexcept { return weight_; }
    Buffer<T>& bias() noexcept { return bias_; }

private:
    int in_, out_, k_, stride_, pad_;
    Buffer<T> weight_, bias_, dweight_, dbias_;
    Shape in_shape_{};
    Buffer<T> cols_;
};

/// Fractionally-strided convolution, weight layout (in, out, k, k).
template <typename T>
class ConvTranspose2d final : public Layer<T> {
public:
    ConvTranspose2d(int in_channels, int out_channels, int kernel, int stride, int pad);

    std::string kind() const override { return "convT"; }
    Shape output_shape(const Shape& in) const override;
    Activation<T> forward(const Activation<T>& x) override;
    Activation<T> backward(const Activation<T>& grad_out, bool param_grads) override;
    std::vector<Param<T>> params() override;
    double fan_in() const override {
        const int taps = std::max(1, k_ / stride_);
        return static_cast<double>(in_) * taps * taps;
    }

    int out_channels() const noexcept { return out_; }

private:
    int in_, out_, k_, stride_, pad_;
    Buffer<T> weight_, bias_, dweight_, dbias_;
    Activation<T> input_;
};

template <typename T>
class LeakyReLU final : public Layer<T> {
public:
    explicit LeakyReLU(T slope = T(0.2)) : slope_(slope) {}
    T slope() const noexcept { return slope_; }
    std::string kind() const override { return "leaky"; }
    Shape output_shape(const Shape& in) const override { return in; }
    Activation<T> forward(const Activation<T>& x) override;
    Activation<T> backward(const Activation<T>& grad_out, bool param_grads) override;

private:
    T slope_;
    std::vector<std::uint8_t> positive_;
};

template <typename T>
class ReLU final : public Layer<T> {
public:
    std::string kind() const override { return "relu"; }
    Shape output_shape(const Shape& in) const override { return in; }
    Activation<T> forward(const Activation<T>& x) override;
    Activation<T> backward(const Activation<T>& grad_out, bool param_grads) override;

private:
    std::vector<std::uint8_t> positive_;
};

template <typename T>
class Sigmoid final : public Layer<T> {
public:
    std::string kind() const override { return "sigmoid"; }
    Shape output_shape(const Shape& in) const override { return in; }
    Activation<T> forward(const Activation<T>& x) override;
    Activation<T> backward(const Activation<T>& grad_out, bool param_grads) override;

private:
    Buffer<T> output_;
};

template <typename T>
class Sequential {
public:
    Sequential() = default;
    Sequential(Sequential&&) noexcept = default;
    Sequential& operator=(Sequential&&) noexcept = default;

    template <typename L, typename... Args>
    L& add(Args&&... args) {
        auto layer = std::make_unique<L>(std::forward<Args>(args)...);
        L& ref = *layer;
        layers_.push_back(std::move(layer));
        return ref;
    }

    std::size_t size() const noexcept { return layers_.size(); }
    Layer<T>& layer(std::size_t i) { return *layers_[i]; }
    const Layer<T>& layer(std::size_t i) const { return *layers_[i]; }

    Activation<T> forward(const Activation<T>& x);
    /// Output of every layer, in order.
    std::vector<Activation<T>> forward_trace(const Activation<T>& x);
    /// Runs layers [0, end) only.
    Activation<T> forward_prefix(const Activation<T>& x, std::size_t end);
    Activation<T> backward(const Activation<T>& grad_out, bool param_grads = true);

    std::vector<Param<T>> params();
    std::size_t param_count();
    void zero_grad();
    void init_normal(std::mt19937_64& rng, double stddev);
    /// Zero-mean normal weights with stddev gain/sqrt(fan_in), the gain set
    /// by the activation that follows each layer; zero biases.
    void init_scaled(std::mt19937_64& rng);

private:
    std::vector<std::unique_ptr<Layer<T>>> layers_;
};

/// Adaptive-moment gradient descent.
template <typename T>
class Adam {
public:
    struct Options {
        double learning_rate = 0.0002;
        double beta1 = 0.5;
        double beta2 = 0.999;
        double epsilon = 1e-8;
    };

    Adam(std::vector<Param<T>> params, Options opts);
    void step();

private:
    std::vector<Param<T>> params_;
    Options opts_;
    std::vector<Buffer<T>> m_, v_;
    long long t_ = 0;
};

/// Named float32 tensors, the on-disk representation of network weights.
struct TensorBlob {
    std::vector<int> dims;
    std::vector<float> values;
};
using NamedTensors = std::map<std::string, TensorBlob>;

template <typename T>
NamedTensors export_weights(Sequential<T>& net, const std::string& prefix);
/// Throws ShapeError when a tensor is missing or has the wrong size.
template <typename T>
void import_weights(Sequential<T>& net, const NamedTensors& tensors, const std::string& prefix);

} // namespace dibrqa::nn
