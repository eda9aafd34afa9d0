#pragma once

#include "dibrqa/image.hpp"
#include "dibrqa/nn.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace dibrqa {

enum class ArchId { D1, D2, D3, Custom };

/// Discriminator layout: `hidden_channels.size()` stride-2 4×4 convolutions
/// (leaky-rectified) halve `input_size` down to 4×4, then one 4×4 valid
/// convolution produces the logit.
struct ArchSpec {
    ArchId id = ArchId::D1;
    std::string name = "D1";
    int input_size = 64;
    std::vector<int> hidden_channels;

    int feature_channels() const { return hidden_channels.back(); }
    int feature_dim() const { return feature_channels() * 16; }
};

/// The three tested architectures: D1 (64 px; 64..512), D2 (128 px;
/// 32..512) and D3 (128 px; 16..256).
ArchSpec arch_spec(ArchId id);
ArchSpec arch_spec(const std::string& name);
/// Small architectures for tests; input_size must be 4·2^len(channels).
ArchSpec custom_arch(int input_size, std::vector<int> hidden_channels);
void validate_arch(const ArchSpec& spec);

constexpr double kLeakySlope = 0.2;
constexpr double kProbabilityFloor = 1e-7;
constexpr double kInitStddev = 0.02;
constexpr int kDefaultBottleneck = 4000;

template <typename T>
struct DiscriminatorOutput {
    nn::Activation<T> features; ///< penultimate activation, (C, N, 4, 4)
    std::vector<T> logits;      ///< pre-sigmoid score per sample
};

template <typename T>
class Discriminator {
public:
    explicit Discriminator(ArchSpec spec);

    const ArchSpec& spec() const noexcept { return spec_; }
    nn::Sequential<T>& net() noexcept { return net_; }

    /// One logit per sample; ShapeError unless the input is 3×S×S with S = input_size.
    std::vector<T> logits(const nn::Activation<T>& x);
    DiscriminatorOutput<T> forward_features(const nn::Activation<T>& x);
    /// Back-propagates d(loss)/d(logit) from the last logits() call.
    nn::Activation<T> backward(std::span<const T> dlogits, bool param_grads = true);

    void check_input(const nn::Shape& s) const;

private:
    ArchSpec spec_;
    nn::Sequential<T> net_;
    int batch_ = 0;
};

/// Context encoder: an encoder mirroring the discriminator's convolution
/// stack, a fully connected bottleneck, and a fractionally-strided decoder
/// ending in a sigmoid. Output dims equal input dims; no pooling anywhere.
template <typename T>
class Generator {
public:
    Generator(ArchSpec spec, int bottleneck = kDefaultBottleneck);

    const ArchSpec& spec() const noexcept { return spec_; }
    int bottleneck() const noexcept { return bottleneck_; }
    nn::Sequential<T>& net() noexcept { return net_; }

    nn::Activation<T> forward(const nn::Activation<T>& x);
    nn::Activation<T> backward(const nn::Activation<T>& grad_out, bool param_grads = true);

private:
    ArchSpec spec_;
    int bottleneck_;
    nn::Sequential<T> net_;
};

template <typename T>
double sigmoid(T logit);

/// Squared masked residual summed over pixels and channels, averaged over
/// the batch. `grad_gen` (optional) receives d/d(gen).
template <typename T>
double rec_loss(const nn::Activation<T>& x, const nn::Activation<T>& mask, const nn::Activation<T>& gen,
                nn::Activation<T>* grad_gen = nullptr);

/// Discriminator objective mean[log D(real) + log(1 - D(fake))] with
/// probabilities clamped to [floor, 1 - floor].
double adv_loss_d(std::span<const double> d_real, std::span<const double> d_fake);

/// Non-saturating generator term mean[-log D(fake)].
double adv_loss_g(std::span<const double> d_fake);

double joint_loss(double rec, double adv_g, double lambda);

/// Value and logit-gradient of the negated discriminator objective. The
/// minimised quantity is -(log D(real)) on real logits and -log(1-D(fake))
/// on fake logits, each averaged over its batch.
template <typename T>
double disc_loss_real(std::span<const T> logits, std::vector<T>& dlogits);
template <typename T>
double disc_loss_fake(std::span<const T> logits, std::vector<T>& dlogits);
/// Generator adversarial term and its logit-gradient.
template <typename T>
double gen_adv_loss(std::span<const T> logits, std::vector<T>& dlogits);

/// (1 - M) ⊙ x.
template <typename T>
nn::Activation<T> apply_holes(const nn::Activation<T>& x, const nn::Activation<T>& mask);

struct LossBreakdown {
    double rec = 0.0;
    double adv_g = 0.0;
    double joint = 0.0;
    double disc = 0.0; ///< negated discriminator objective
};

/// Negated discriminator objective on (real x, G((1-M)⊙x)); accumulates the
/// discriminator's parameter gradients when `accumulate` is set.
template <typename T>
double discriminator_step_loss(Discriminator<T>& disc, const nn::Activation<T>& real,
                               const nn::Activation<T>& fake, bool accumulate);

/// Generator joint loss λ·rec + (1-λ)·adv_g; accumulates the generator's
/// parameter gradients (never the discriminator's) when `accumulate` is set.
template <typename T>
LossBreakdown generator_step_loss(Generator<T>& gen, Discriminator<T>& disc, const nn::Activation<T>& x,
                                  const nn::Activation<T>& mask, double lambda, bool accumulate);

struct TrainConfig {
    double learning_rate = 0.0002;
    double lambda = 0.9;
    int batch_size = 16;
    int epochs = 20;
    std::uint64_t seed = 1;
    double beta1 = 0.5;
    double beta2 = 0.999;
    std::string arch = "D1";
    int bottleneck = kDefaultBottleneck;
    /// Weight init: "scaled" (stddev gain/sqrt(fan_in)) or "dcgan" (N(0, 0.02)).
    std::string init = "scaled";
    /// Hidden channels when `arch` is "custom" (small test networks).
    std::vector<int> custom_channels;

    void validate() const;
    ArchSpec arch_spec() const;
};

struct EpochLoss {
    int epoch = 0;
    double joint = 0.0;
    double rec = 0.0;
    double adv_g = 0.0;
    double disc = 0.0;
};

struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    TrainConfig config;
    ArchSpec arch;
    int epoch = 0;
    std::vector<EpochLoss> history;
    nn::NamedTensors generator;
    nn::NamedTensors discriminator;
    /// A few training samples with the losses the final weights give them.
    std::vector<ImageRGB> probe_images;
    std::vector<BinaryMask> probe_masks;
    LossBreakdown probe_losses;
    std::string run_config_json = "{}"; ///< snapshot of the invoking run configuration
};

struct TrainSample {
    ImageRGB image;
    BinaryMask mask;
};

using EpochCallback = std::function<void(const EpochLoss&)>;

/// Alternating discriminator / generator updates with Adam. Batch order is
/// a seeded shuffle per epoch; identical seeds give identical loss curves.
Checkpoint train_inpainter(std::span<const TrainSample> data, const TrainConfig& config,
                           const EpochCallback& on_epoch = {});

Discriminator<float> load_discriminator(const Checkpoint& ckpt);
Generator<float> load_generator(const Checkpoint& ckpt);

/// Recomputes the probe-batch losses with the stored weights.
LossBreakdown evaluate_probe(const Checkpoint& ckpt);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Holds a built generator for repeated inpainting.
class Inpainter {
public:
    explicit Inpainter(const Checkpoint& ckpt);
    /// (1-M)⊙img + M⊙G((1-M)⊙img); unmasked pixels are copied bit for bit.
    ImageRGB inpaint(const ImageRGB& img, const BinaryMask& mask);

private:
    Generator<float> gen_;
};

ImageRGB inpaint(const Checkpoint& ckpt, const ImageRGB& img, const BinaryMask& mask);

/// 10·log10(1/MSE) for images in [0,1]; +infinity when identical.
double psnr(const ImageRGB& ref, const ImageRGB& test);

} // namespace dibrqa
