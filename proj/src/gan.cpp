#include "dibrqa/gan.hpp"

#include "dibrqa/error.hpp"
#include "serialization.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace dibrqa {

// ---- architectures -----------------------------------------------------------

ArchSpec arch_spec(ArchId id) {
    switch (id) {
    case ArchId::D1: return {ArchId::D1, "D1", 64, {64, 128, 256, 512}};
    case ArchId::D2: return {ArchId::D2, "D2", 128, {32, 64, 128, 256, 512}};
    case ArchId::D3: return {ArchId::D3, "D3", 128, {16, 32, 64, 128, 256}};
    case ArchId::Custom: break;
    }
    throw Error(Errc::UnknownArch, "custom architectures need explicit channels");
}

ArchSpec arch_spec(const std::string& name) {
    if (name == "D1")
        return arch_spec(ArchId::D1);
    if (name == "D2")
        return arch_spec(ArchId::D2);
    if (name == "D3")
        return arch_spec(ArchId::D3);
    throw Error(Errc::UnknownArch, "unknown discriminator architecture '" + name + "'");
}

ArchSpec custom_arch(int input_size, std::vector<int> hidden_channels) {
    ArchSpec spec{ArchId::Custom, "custom", input_size, std::move(hidden_channels)};
    validate_arch(spec);
    return spec;
}

void validate_arch(const ArchSpec& spec) {
    if (spec.hidden_channels.empty())
        throw Error(Errc::UnknownArch, "architecture needs at least one hidden layer");
    for (int c : spec.hidden_channels)
        if (c < 1)
            throw Error(Errc::UnknownArch, "channel counts must be positive");
    const int expected = 4 << spec.hidden_channels.size();
    if (spec.input_size != expected)
        throw Error(Errc::UnknownArch, "input size " + std::to_string(spec.input_size) + " does not reduce to 4x4 in " +
                                           std::to_string(spec.hidden_channels.size()) + " halvings");
}

// ---- discriminator -------------------------------------------------------------

template <typename T>
Discriminator<T>::Discriminator(ArchSpec spec) : spec_(std::move(spec)) {
    validate_arch(spec_);
    int in = 3;
    for (int c : spec_.hidden_channels) {
        net_.template add<nn::Conv2d<T>>(in, c, 4, 2, 1);
        net_.template add<nn::LeakyReLU<T>>(static_cast<T>(kLeakySlope));
        in = c;
    }
    net_.template add<nn::Conv2d<T>>(in, 1, 4, 1, 0);
}

template <typename T>
void Discriminator<T>::check_input(const nn::Shape& s) const {
    if (s.c != 3 || s.h != spec_.input_size || s.w != spec_.input_size || s.n < 1)
        throw Error(Errc::ShapeError, spec_.name + " expects 3x" + std::to_string(spec_.input_size) + "x" +
                                          std::to_string(spec_.input_size) + " inputs, got " + std::to_string(s.c) +
                                          "x" + std::to_string(s.h) + "x" + std::to_string(s.w));
}

template <typename T>
std::vector<T> Discriminator<T>::logits(const nn::Activation<T>& x) {
    check_input(x.shape);
    batch_ = x.shape.n;
    const auto y = net_.forward(x);
    return {y.data.begin(), y.data.end()};
}

template <typename T>
DiscriminatorOutput<T> Discriminator<T>::forward_features(const nn::Activation<T>& x) {
    check_input(x.shape);
    batch_ = x.shape.n;
    DiscriminatorOutput<T> out;
    out.features = net_.forward_prefix(x, net_.size() - 1);
    const auto y = net_.layer(net_.size() - 1).forward(out.features);
    out.logits.assign(y.data.begin(), y.data.end());
    return out;
}

template <typename T>
nn::Activation<T> Discriminator<T>::backward(std::span<const T> dlogits, bool param_grads) {
    if (static_cast<int>(dlogits.size()) != batch_)
        throw Error(Errc::DimMismatch, "logit gradient size does not match the last batch");
    nn::Activation<T> grad({1, batch_, 1, 1});
    std::copy(dlogits.begin(), dlogits.end(), grad.data.begin());
    return net_.backward(grad, param_grads);
}

// ---- generator -----------------------------------------------------------------

template <typename T>
Generator<T>::Generator(ArchSpec spec, int bottleneck) : spec_(std::move(spec)), bottleneck_(bottleneck) {
    validate_arch(spec_);
    if (bottleneck_ < 1)
        throw Error(Errc::InvalidParam, "bottleneck must be >= 1");
    const auto& ch = spec_.hidden_channels;
    int in = 3;
    for (int c : ch) {
        net_.template add<nn::Conv2d<T>>(in, c, 4, 2, 1);
        net_.template add<nn::LeakyReLU<T>>(static_cast<T>(kLeakySlope));
        in = c;
    }
    // 4×4 → 1×1 bottleneck units, fully connected to the encoder output
    net_.template add<nn::Conv2d<T>>(in, bottleneck_, 4, 1, 0);
    net_.template add<nn::LeakyReLU<T>>(static_cast<T>(kLeakySlope));
    net_.template add<nn::ConvTranspose2d<T>>(bottleneck_, ch.back(), 4, 1, 0);
    net_.template add<nn::ReLU<T>>();
    for (std::size_t i = ch.size() - 1; i > 0; --i) {
        net_.template add<nn::ConvTranspose2d<T>>(ch[i], ch[i - 1], 4, 2, 1);
        net_.template add<nn::ReLU<T>>();
    }
    net_.template add<nn::ConvTranspose2d<T>>(ch.front(), 3, 4, 2, 1);
    net_.template add<nn::Sigmoid<T>>();
}

template <typename T>
nn::Activation<T> Generator<T>::forward(const nn::Activation<T>& x) {
    if (x.shape.c != 3 || x.shape.h != spec_.input_size || x.shape.w != spec_.input_size)
        throw Error(Errc::ShapeError, "generator expects 3x" + std::to_string(spec_.input_size) + "x" +
                                          std::to_string(spec_.input_size) + " inputs");
    return net_.forward(x);
}

template <typename T>
nn::Activation<T> Generator<T>::backward(const nn::Activation<T>& grad_out, bool param_grads) {
    return net_.backward(grad_out, param_grads);
}

// ---- losses ----------------------------------------------------------------------

template <typename T>
double sigmoid(T logit) {
    const double z = static_cast<double>(logit);
    if (z >= 0)
        return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

template <typename T>
double rec_loss(const nn::Activation<T>& x, const nn::Activation<T>& mask, const nn::Activation<T>& gen,
                nn::Activation<T>* grad_gen) {
    if (!(x.shape == gen.shape) || mask.shape.n != x.shape.n || mask.shape.h != x.shape.h ||
        mask.shape.w != x.shape.w || (mask.shape.c != 1 && mask.shape.c != x.shape.c))
        throw Error(Errc::DimMismatch, "rec_loss operands have mismatched shapes");
    const int batch = x.shape.n;
    const std::size_t plane = static_cast<std::size_t>(batch) * x.shape.h * x.shape.w;
    if (grad_gen)
        *grad_gen = nn::Activation<T>(x.shape);
    double total = 0.0;
    for (int c = 0; c < x.shape.c; ++c) {
        const std::size_t base = plane * c;
        const std::size_t mbase = mask.shape.c == 1 ? 0 : base;
        for (std::size_t i = 0; i < plane; ++i) {
            const double m = static_cast<double>(mask.data[mbase + i]);
            const double r = m * (static_cast<double>(x.data[base + i]) - static_cast<double>(gen.data[base + i]));
            total += r * r;
            if (grad_gen)
                grad_gen->data[base + i] = static_cast<T>(-2.0 * m * r / batch);
        }
    }
    return total / batch;
}

namespace {

double clamp_probability(double p) { return std::clamp(p, kProbabilityFloor, 1.0 - kProbabilityFloor); }

bool clamped(double p) { return p < kProbabilityFloor || p > 1.0 - kProbabilityFloor; }

// -mean(log p) or -mean(log(1-p)) and its gradient w.r.t. the logits.
template <typename T>
double neg_log_likelihood(std::span<const T> logits, std::vector<T>& dlogits, bool target_real) {
    if (logits.empty())
        throw Error(Errc::DataEmpty, "no logits");
    const double n = static_cast<double>(logits.size());
    dlogits.assign(logits.size(), T(0));
    double loss = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double p = sigmoid(logits[i]);
        const double q = target_real ? p : 1.0 - p;
        loss -= std::log(clamp_probability(q));
        if (!clamped(q))
            dlogits[i] = static_cast<T>((target_real ? -(1.0 - p) : p) / n);
    }
    return loss / n;
}

} // namespace

double adv_loss_d(std::span<const double> d_real, std::span<const double> d_fake) {
    if (d_real.empty() || d_fake.empty())
        throw Error(Errc::DataEmpty, "adversarial loss needs non-empty batches");
    double real = 0.0, fake = 0.0;
    for (double p : d_real)
        real += std::log(clamp_probability(p));
    for (double p : d_fake)
        fake += std::log(1.0 - clamp_probability(p));
    return real / static_cast<double>(d_real.size()) + fake / static_cast<double>(d_fake.size());
}

double adv_loss_g(std::span<const double> d_fake) {
    if (d_fake.empty())
        throw Error(Errc::DataEmpty, "adversarial loss needs a non-empty batch");
    double total = 0.0;
    for (double p : d_fake)
        total -= std::log(clamp_probability(p));
    return total / static_cast<double>(d_fake.size());
}

double joint_loss(double rec, double adv_g, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw Error(Errc::InvalidParam, "lambda must lie in [0, 1]");
    return lambda * rec + (1.0 - lambda) * adv_g;
}

template <typename T>
double disc_loss_real(std::span<const T> logits, std::vector<T>& dlogits) {
    return neg_log_likelihood(logits, dlogits, true);
}

template <typename T>
double disc_loss_fake(std::span<const T> logits, std::vector<T>& dlogits) {
    return neg_log_likelihood(logits, dlogits, false);
}

template <typename T>
double gen_adv_loss(std::span<const T> logits, std::vector<T>& dlogits) {
    return neg_log_likelihood(logits, dlogits, true);
}

template <typename T>
nn::Activation<T> apply_holes(const nn::Activation<T>& x, const nn::Activation<T>& mask) {
    if (mask.shape.c != 1 || mask.shape.n != x.shape.n || mask.shape.h != x.shape.h || mask.shape.w != x.shape.w)
        throw Error(Errc::DimMismatch, "mask does not match the image batch");
    nn::Activation<T> out = x;
    const std::size_t plane = mask.data.size();
    for (int c = 0; c < x.shape.c; ++c)
        for (std::size_t i = 0; i < plane; ++i)
            out.data[plane * c + i] *= T(1) - mask.data[i];
    return out;
}

template <typename T>
double discriminator_step_loss(Discriminator<T>& disc, const nn::Activation<T>& real, const nn::Activation<T>& fake,
                               bool accumulate) {
    std::vector<T> dlogits;
    const auto real_logits = disc.logits(real);
    const double loss_real = disc_loss_real<T>(real_logits, dlogits);
    if (accumulate)
        disc.backward(dlogits, true);
    const auto fake_logits = disc.logits(fake);
    const double loss_fake = disc_loss_fake<T>(fake_logits, dlogits);
    if (accumulate)
        disc.backward(dlogits, true);
    return loss_real + loss_fake;
}

namespace {

// Losses of a generator output and d(joint)/d(output).
template <typename T>
LossBreakdown generator_losses(const nn::Activation<T>& gen_out, Discriminator<T>& disc, const nn::Activation<T>& x,
                               const nn::Activation<T>& mask, double lambda, nn::Activation<T>* grad_out) {
    LossBreakdown loss;
    nn::Activation<T> drec;
    loss.rec = rec_loss(x, mask, gen_out, grad_out ? &drec : nullptr);
    std::vector<T> dlogits;
    const auto logits = disc.logits(gen_out);
    loss.adv_g = gen_adv_loss<T>(logits, dlogits);
    loss.joint = joint_loss(loss.rec, loss.adv_g, lambda);
    if (grad_out) {
        for (auto& g : dlogits)
            g *= static_cast<T>(1.0 - lambda);
        *grad_out = disc.backward(dlogits, false);
        const T lam = static_cast<T>(lambda);
        for (std::size_t i = 0; i < grad_out->data.size(); ++i)
            grad_out->data[i] += lam * drec.data[i];
    }
    return loss;
}

} // namespace

template <typename T>
LossBreakdown generator_step_loss(Generator<T>& gen, Discriminator<T>& disc, const nn::Activation<T>& x,
                                  const nn::Activation<T>& mask, double lambda, bool accumulate) {
    const auto gen_out = gen.forward(apply_holes(x, mask));
    nn::Activation<T> grad;
    LossBreakdown loss = generator_losses(gen_out, disc, x, mask, lambda, accumulate ? &grad : nullptr);
    if (accumulate)
        gen.backward(grad, true);
    return loss;
}

// ---- training ------------------------------------------------------------------

ArchSpec TrainConfig::arch_spec() const {
    if (arch == "custom")
        return custom_arch(4 << custom_channels.size(), custom_channels);
    return dibrqa::arch_spec(arch);
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0))
        throw Error(Errc::InvalidParam, "learning_rate must be > 0");
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw Error(Errc::InvalidParam, "lambda must lie in [0, 1]");
    if (batch_size < 1)
        throw Error(Errc::InvalidParam, "batch_size must be >= 1");
    if (epochs < 1)
        throw Error(Errc::InvalidParam, "epochs must be >= 1");
    if (bottleneck < 1)
        throw Error(Errc::InvalidParam, "bottleneck must be >= 1");
    if (init != "scaled" && init != "dcgan")
        throw Error(Errc::InvalidParam, "init must be scaled or dcgan, got '" + init + "'");
    (void)arch_spec();
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw Error(Errc::InvalidParam, "Adam decay rates must lie in [0, 1)");
}

namespace {

void check_finite(const LossBreakdown& l, double disc, int epoch, std::size_t batch) {
    if (!std::isfinite(l.rec) || !std::isfinite(l.adv_g) || !std::isfinite(l.joint) || !std::isfinite(disc)) {
        std::ostringstream msg;
        msg << "epoch " << epoch << " batch " << batch << ": rec=" << l.rec << " adv_g=" << l.adv_g
            << " joint=" << l.joint << " disc=" << disc;
        throw Error(Errc::NonFiniteLoss, msg.str());
    }
}

} // namespace

Checkpoint train_inpainter(std::span<const TrainSample> data, const TrainConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    if (data.empty())
        throw Error(Errc::DataEmpty, "no training samples");
    const ArchSpec arch = config.arch_spec();
    const int size = arch.input_size;
    for (const auto& s : data) {
        if (s.image.height() != size || s.image.width() != size)
            throw Error(Errc::DimMismatch, "training images must be " + std::to_string(size) + "x" +
                                               std::to_string(size) + " for " + arch.name);
        if (s.mask.height() != size || s.mask.width() != size)
            throw Error(Errc::DimMismatch, "training masks must match the image size");
    }

    std::mt19937_64 rng(config.seed);
    Generator<float> gen(arch, config.bottleneck);
    Discriminator<float> disc(arch);
    if (config.init == "dcgan") {
        gen.net().init_normal(rng, kInitStddev);
        disc.net().init_normal(rng, kInitStddev);
    } else {
        gen.net().init_scaled(rng);
        disc.net().init_scaled(rng);
    }

    const nn::Adam<float>::Options adam_opts{config.learning_rate, config.beta1, config.beta2, 1e-8};
    nn::Adam<float> gen_opt(gen.net().params(), adam_opts);
    nn::Adam<float> disc_opt(disc.net().params(), adam_opts);

    Checkpoint ckpt;
    ckpt.config = config;
    ckpt.arch = arch;

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<ImageRGB> batch_images;
    std::vector<BinaryMask> batch_masks;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        EpochLoss acc{epoch};
        std::size_t seen = 0;
        for (std::size_t start = 0, b = 0; start < order.size(); start += config.batch_size, ++b) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            batch_images.clear();
            batch_masks.clear();
            for (std::size_t i = start; i < end; ++i) {
                batch_images.push_back(data[order[i]].image);
                batch_masks.push_back(data[order[i]].mask);
            }
            const auto x = nn::pack_images<float>(batch_images);
            const auto m = nn::pack_masks<float>(batch_masks);

            const auto fake = gen.forward(apply_holes(x, m));

            disc.net().zero_grad();
            const double disc_loss = discriminator_step_loss(disc, x, fake, true);
            disc_opt.step();

            gen.net().zero_grad();
            nn::Activation<float> grad;
            const LossBreakdown loss = generator_losses(fake, disc, x, m, config.lambda, &grad);
            check_finite(loss, disc_loss, epoch, b);
            gen.backward(grad, true);
            gen_opt.step();

            const double w = static_cast<double>(end - start);
            acc.joint += w * loss.joint;
            acc.rec += w * loss.rec;
            acc.adv_g += w * loss.adv_g;
            acc.disc += w * disc_loss;
            seen += end - start;
        }
        const double inv = 1.0 / static_cast<double>(seen);
        acc.joint *= inv;
        acc.rec *= inv;
        acc.adv_g *= inv;
        acc.disc *= inv;
        ckpt.history.push_back(acc);
        ckpt.epoch = epoch;
        if (on_epoch)
            on_epoch(acc);
    }

    ckpt.generator = nn::export_weights(gen.net(), "");
    ckpt.discriminator = nn::export_weights(disc.net(), "");
    const std::size_t n_probe = std::min<std::size_t>(4, data.size());
    for (std::size_t i = 0; i < n_probe; ++i) {
        ckpt.probe_images.push_back(data[i].image);
        ckpt.probe_masks.push_back(data[i].mask);
    }
    ckpt.probe_losses = evaluate_probe(ckpt);
    return ckpt;
}

Discriminator<float> load_discriminator(const Checkpoint& ckpt) {
    Discriminator<float> disc(ckpt.arch);
    nn::import_weights(disc.net(), ckpt.discriminator, "");
    return disc;
}

Generator<float> load_generator(const Checkpoint& ckpt) {
    Generator<float> gen(ckpt.arch, ckpt.config.bottleneck);
    nn::import_weights(gen.net(), ckpt.generator, "");
    return gen;
}

LossBreakdown evaluate_probe(const Checkpoint& ckpt) {
    if (ckpt.probe_images.empty())
        throw Error(Errc::DataEmpty, "checkpoint has no probe batch");
    auto gen = load_generator(ckpt);
    auto disc = load_discriminator(ckpt);
    const auto x = nn::pack_images<float>(ckpt.probe_images);
    const auto m = nn::pack_masks<float>(ckpt.probe_masks);
    const auto fake = gen.forward(apply_holes(x, m));
    LossBreakdown loss = generator_losses(fake, disc, x, m, ckpt.config.lambda, static_cast<nn::Activation<float>*>(nullptr));
    loss.disc = discriminator_step_loss(disc, x, fake, false);
    return loss;
}

// ---- checkpoint file -------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[9] = "DQACKPT\x01";

io::json config_to_json(const TrainConfig& c) {
    return {{"learning_rate", c.learning_rate}, {"lambda", c.lambda}, {"batch_size", c.batch_size},
            {"epochs", c.epochs},               {"seed", c.seed},     {"beta1", c.beta1},
            {"beta2", c.beta2},                 {"arch", c.arch},     {"bottleneck", c.bottleneck},
            {"custom_channels", c.custom_channels}, {"init", c.init}};
}

TrainConfig config_from_json(const io::json& j) {
    TrainConfig c;
    c.learning_rate = j.at("learning_rate").get<double>();
    c.lambda = j.at("lambda").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.epochs = j.at("epochs").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.arch = j.at("arch").get<std::string>();
    c.bottleneck = j.at("bottleneck").get<int>();
    c.custom_channels = j.value("custom_channels", std::vector<int>{});
    c.init = j.value("init", std::string("dcgan"));
    return c;
}

io::json loss_to_json(const LossBreakdown& l) {
    return {{"rec", l.rec}, {"adv_g", l.adv_g}, {"joint", l.joint}, {"disc", l.disc}};
}

LossBreakdown loss_from_json(const io::json& j) {
    return {j.at("rec").get<double>(), j.at("adv_g").get<double>(), j.at("joint").get<double>(),
            j.at("disc").get<double>()};
}

struct TensorEntry {
    std::string name;
    const nn::TensorBlob* blob;
};

} // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    nn::NamedTensors probes;
    if (!ckpt.probe_images.empty()) {
        const int n = static_cast<int>(ckpt.probe_images.size());
        const int h = ckpt.probe_images.front().height(), w = ckpt.probe_images.front().width();
        nn::TensorBlob images{{n, h, w, 3}, {}};
        nn::TensorBlob masks{{n, h, w}, {}};
        for (std::size_t i = 0; i < ckpt.probe_images.size(); ++i) {
            const auto px = ckpt.probe_images[i].data();
            images.values.insert(images.values.end(), px.begin(), px.end());
            for (auto v : ckpt.probe_masks[i].data())
                masks.values.push_back(static_cast<float>(v));
        }
        probes.emplace("probe.images", std::move(images));
        probes.emplace("probe.masks", std::move(masks));
    }

    std::vector<TensorEntry> entries;
    for (const auto& [name, blob] : ckpt.generator)
        entries.push_back({"generator." + name, &blob});
    for (const auto& [name, blob] : ckpt.discriminator)
        entries.push_back({"discriminator." + name, &blob});
    for (const auto& [name, blob] : probes)
        entries.push_back({name, &blob});

    io::json header;
    header["format"] = "dibrqa-checkpoint";
    header["version"] = Checkpoint::kVersion;
    header["dtype"] = "float32-le";
    header["config"] = config_to_json(ckpt.config);
    header["arch"] = {{"name", ckpt.arch.name}, {"input_size", ckpt.arch.input_size},
                      {"hidden_channels", ckpt.arch.hidden_channels}};
    header["epoch"] = ckpt.epoch;
    io::json history = io::json::array();
    for (const auto& e : ckpt.history)
        history.push_back({{"epoch", e.epoch}, {"joint", e.joint}, {"rec", e.rec}, {"adv_g", e.adv_g}, {"disc", e.disc}});
    header["history"] = history;
    header["probe_losses"] = loss_to_json(ckpt.probe_losses);
    io::json tensors = io::json::array();
    std::uint64_t offset = 0;
    for (const auto& e : entries) {
        tensors.push_back({{"name", e.name}, {"dims", e.blob->dims}, {"offset", offset}, {"count", e.blob->values.size()}});
        offset += e.blob->values.size();
    }
    header["tensors"] = tensors;
    try {
        header["run_config"] = io::json::parse(ckpt.run_config_json);
    } catch (const io::json::exception&) {
        throw Error(Errc::FormatError, "run configuration snapshot is not valid JSON");
    }

    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error(Errc::InvalidParam, "cannot open for writing: " + path.string());
    io::write_magic(out, kCheckpointMagic);
    io::write_pod<std::uint32_t>(out, Checkpoint::kVersion);
    io::write_json_block(out, header);
    for (const auto& e : entries)
        io::write_floats(out, e.blob->values);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(Errc::MissingFile, path.string());
    io::expect_magic(in, kCheckpointMagic, "checkpoint");
    const auto version = io::read_pod<std::uint32_t>(in);
    if (version != Checkpoint::kVersion)
        throw Error(Errc::FormatError, "unsupported checkpoint version " + std::to_string(version));
    const io::json header = io::read_json_block(in);

    Checkpoint ckpt;
    nn::NamedTensors probes;
    try {
        ckpt.config = config_from_json(header.at("config"));
        const auto& a = header.at("arch");
        const std::string name = a.at("name").get<std::string>();
        if (name == "custom")
            ckpt.arch = custom_arch(a.at("input_size").get<int>(), a.at("hidden_channels").get<std::vector<int>>());
        else
            ckpt.arch = arch_spec(name);
        ckpt.epoch = header.at("epoch").get<int>();
        for (const auto& e : header.at("history"))
            ckpt.history.push_back({e.at("epoch").get<int>(), e.at("joint").get<double>(), e.at("rec").get<double>(),
                                    e.at("adv_g").get<double>(), e.at("disc").get<double>()});
        ckpt.probe_losses = loss_from_json(header.at("probe_losses"));
        if (header.contains("run_config"))
            ckpt.run_config_json = header.at("run_config").dump();
        for (const auto& t : header.at("tensors")) {
            const std::string tname = t.at("name").get<std::string>();
            nn::TensorBlob blob{t.at("dims").get<std::vector<int>>(), io::read_floats(in, t.at("count").get<std::size_t>())};
            if (tname.rfind("generator.", 0) == 0)
                ckpt.generator.emplace(tname.substr(10), std::move(blob));
            else if (tname.rfind("discriminator.", 0) == 0)
                ckpt.discriminator.emplace(tname.substr(14), std::move(blob));
            else
                probes.emplace(tname, std::move(blob));
        }
    } catch (const io::json::exception& e) {
        throw Error(Errc::FormatError, std::string("malformed checkpoint header: ") + e.what());
    }

    if (auto it = probes.find("probe.images"); it != probes.end()) {
        const auto& dims = it->second.dims;
        const auto& mask_blob = probes.at("probe.masks");
        const int n = dims.at(0), h = dims.at(1), w = dims.at(2);
        const std::size_t img_size = static_cast<std::size_t>(h) * w * 3;
        for (int i = 0; i < n; ++i) {
            ImageRGB img(h, w);
            std::copy_n(it->second.values.begin() + static_cast<std::ptrdiff_t>(img_size * i), img_size, img.data().begin());
            BinaryMask mask(h, w);
            for (std::size_t p = 0; p < static_cast<std::size_t>(h) * w; ++p)
                mask.data()[p] = mask_blob.values[static_cast<std::size_t>(h) * w * i + p] != 0.0f ? 1 : 0;
            ckpt.probe_images.push_back(std::move(img));
            ckpt.probe_masks.push_back(std::move(mask));
        }
    }
    return ckpt;
}

// ---- inpainting ------------------------------------------------------------------

Inpainter::Inpainter(const Checkpoint& ckpt) : gen_(load_generator(ckpt)) {}

ImageRGB Inpainter::inpaint(const ImageRGB& img, const BinaryMask& mask) {
    if (img.height() != mask.height() || img.width() != mask.width())
        throw Error(Errc::DimMismatch, "image and mask dimensions differ");
    const int size = gen_.spec().input_size;
    if (img.height() < size || img.width() < size)
        throw Error(Errc::DimMismatch, "image smaller than the generator input");

    // Non-overlapping tiles, the last row/column flush with the border.
    auto anchors = [size](int extent) {
        std::vector<int> a;
        for (int p = 0; p + size <= extent; p += size)
            a.push_back(p);
        if (a.back() + size < extent)
            a.push_back(extent - size);
        return a;
    };
    ImageRGB out = img;
    for (int r0 : anchors(img.height()))
        for (int c0 : anchors(img.width())) {
            ImageRGB tile(size, size);
            BinaryMask tile_mask(size, size);
            bool any = false;
            for (int r = 0; r < size; ++r)
                for (int c = 0; c < size; ++c) {
                    const bool hole = mask.at(r0 + r, c0 + c) != 0;
                    tile_mask.at(r, c) = hole ? 1 : 0;
                    any = any || hole;
                    for (int ch = 0; ch < 3; ++ch)
                        tile.at(r, c, ch) = hole ? 0.0f : img.at(r0 + r, c0 + c, ch);
                }
            if (!any)
                continue;
            const ImageRGB* tile_ptr = &tile;
            const auto generated = gen_.forward(nn::pack_images<float>(std::span(tile_ptr, 1)));
            const ImageRGB filled = nn::unpack_image(generated, 0);
            for (int r = 0; r < size; ++r)
                for (int c = 0; c < size; ++c)
                    if (tile_mask.at(r, c))
                        for (int ch = 0; ch < 3; ++ch)
                            out.at(r0 + r, c0 + c, ch) = filled.at(r, c, ch);
        }
    return out;
}

ImageRGB inpaint(const Checkpoint& ckpt, const ImageRGB& img, const BinaryMask& mask) {
    Inpainter inpainter(ckpt);
    return inpainter.inpaint(img, mask);
}

double psnr(const ImageRGB& ref, const ImageRGB& test) {
    if (ref.height() != test.height() || ref.width() != test.width() || ref.empty())
        throw Error(Errc::DimMismatch, "psnr operands differ in size");
    double sse = 0.0;
    const auto a = ref.data(), b = test.data();
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        sse += d * d;
    }
    const double mse = sse / static_cast<double>(a.size());
    if (mse == 0.0)
        return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

#define DIBRQA_INSTANTIATE_GAN(T)                                                                              \
    template class Discriminator<T>;                                                                           \
    template class Generator<T>;                                                                               \
    template double sigmoid<T>(T);                                                                             \
    template double rec_loss<T>(const nn::Activation<T>&, const nn::Activation<T>&, const nn::Activation<T>&,  \
                                nn::Activation<T>*);                                                           \
    template double disc_loss_real<T>(std::span<const T>, std::vector<T>&);                                    \
    template double disc_loss_fake<T>(std::span<const T>, std::vector<T>&);                                    \
    template double gen_adv_loss<T>(std::span<const T>, std::vector<T>&);                                      \
    template nn::Activation<T> apply_holes<T>(const nn::Activation<T>&, const nn::Activation<T>&);             \
    template double discriminator_step_loss<T>(Discriminator<T>&, const nn::Activation<T>&,                   \
                                               const nn::Activation<T>&, bool);                                \
    template LossBreakdown generator_step_loss<T>(Generator<T>&, Discriminator<T>&, const nn::Activation<T>&, \
                                                  const nn::Activation<T>&, double, bool);

DIBRQA_INSTANTIATE_GAN(float)
DIBRQA_INSTANTIATE_GAN(double)

} // namespace dibrqa
