#include "doctest.h"
#include "test_util.hpp"

#include "dibrqa/gan.hpp"
#include "dibrqa/synthetic.hpp"

#include <cmath>
#include <fstream>
#include <limits>

using namespace dibrqa;
using testutil::TempDir;

namespace {

TrainConfig toy_config(std::uint64_t seed = 3) {
    TrainConfig c;
    c.arch = "custom";
    c.custom_channels = {4, 8};
    c.bottleneck = 8;
    c.epochs = 3;
    c.batch_size = 4;
    c.seed = seed;
    return c;
}

std::vector<TrainSample> toy_data(int n, int size = 16) {
    std::vector<TrainSample> data;
    for (int i = 0; i < n; ++i) {
        auto scene = synthetic_scene(size, size, 100 + static_cast<unsigned>(i));
        BinaryMask m(size, size);
        for (int r = 4; r < 10; ++r)
            for (int c = 2 + i % 4; c < 8 + i % 4; ++c)
                m.at(r, c) = 1;
        data.push_back({scene.image, m});
    }
    return data;
}

ImageRGB random_image(int h, int w, std::uint64_t seed) {
    ImageRGB img(h, w);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (float& v : img.data())
        v = u(rng);
    return img;
}

} // namespace

TEST_CASE("architecture table") {
    const ArchSpec d1 = arch_spec("D1");
    CHECK(d1.input_size == 64);
    CHECK(d1.hidden_channels == std::vector<int>{64, 128, 256, 512});
    CHECK(d1.feature_dim() == 8192);
    const ArchSpec d2 = arch_spec("D2");
    CHECK(d2.input_size == 128);
    CHECK(d2.hidden_channels == std::vector<int>{32, 64, 128, 256, 512});
    const ArchSpec d3 = arch_spec("D3");
    CHECK(d3.hidden_channels == std::vector<int>{16, 32, 64, 128, 256});
    CHECK(d3.feature_dim() == 4096);
    CHECK_ERRC(arch_spec("D4"), Errc::UnknownArch);
    CHECK_ERRC(custom_arch(20, {4, 8}), Errc::UnknownArch);
}

TEST_CASE("discriminator layer shapes and output range") {
    Discriminator<float> d1(arch_spec("D1"));
    std::mt19937_64 rng(1);
    d1.net().init_normal(rng, 0.02);
    const auto trace = d1.net().forward_trace(nn::Activation<float>({3, 2, 64, 64}, 0.3f));
    std::vector<int> sizes, channels;
    for (std::size_t i = 0; i < d1.net().size(); ++i)
        if (d1.net().layer(i).kind() == "conv") {
            sizes.push_back(trace[i].shape.h);
            channels.push_back(trace[i].shape.c);
        }
    CHECK(sizes == std::vector<int>{32, 16, 8, 4, 1});
    CHECK(channels == std::vector<int>{64, 128, 256, 512, 1});
    CHECK_ERRC(d1.logits(nn::Activation<float>({3, 1, 32, 32})), Errc::ShapeError);

    Discriminator<float> d3(arch_spec("D3"));
    d3.net().init_scaled(rng);
    const auto out = d3.forward_features(nn::pack_images<float>(std::vector<ImageRGB>{random_image(128, 128, 2)}));
    CHECK(out.features.shape == nn::Shape{256, 1, 4, 4});
    for (float l : out.logits) {
        const double p = sigmoid(l);
        CHECK((p > 0.0 && p < 1.0));
    }
}

TEST_CASE("loss examples") {
    nn::Activation<double> x({3, 1, 1, 1}, 1.0), g({3, 1, 1, 1}, 0.5), m({1, 1, 1, 1}, 1.0);
    x.data = {1.0, 0.0, 0.0};
    g.data = {0.5, 0.0, 0.0};
    CHECK(rec_loss(x, m, g) == doctest::Approx(0.25));
    CHECK(rec_loss(x, m, x) == 0.0);
    nn::Activation<double> none({1, 1, 1, 1}, 0.0);
    CHECK(rec_loss(x, none, g) == 0.0);
    CHECK_ERRC(rec_loss(x, m, nn::Activation<double>({3, 2, 1, 1})), Errc::DimMismatch);

    const std::vector<double> half{0.5}, one{1.0}, zero{0.0};
    CHECK(adv_loss_d(half, half) == doctest::Approx(-1.3862943611).epsilon(1e-9));
    CHECK(std::fabs(adv_loss_d(one, zero)) < 1e-6);
    CHECK(std::isfinite(adv_loss_d(zero, one)));
    CHECK(std::isfinite(adv_loss_g(zero)));
    CHECK(adv_loss_g(half) == doctest::Approx(std::log(2.0)));

    CHECK(joint_loss(3.0, 7.0, 1.0) == 3.0);
    CHECK(joint_loss(3.0, 7.0, 0.0) == 7.0);
    CHECK(joint_loss(1.0, 2.0, 0.9) == doctest::Approx(1.1));
    CHECK_ERRC(joint_loss(1.0, 2.0, 1.5), Errc::InvalidParam);
}

TEST_CASE("train_inpainter input checks") {
    CHECK_ERRC(train_inpainter({}, toy_config()), Errc::DataEmpty);
    auto data = toy_data(2, 32);
    CHECK_ERRC(train_inpainter(data, toy_config()), Errc::DimMismatch);
    TrainConfig bad = toy_config();
    bad.lambda = -0.1;
    CHECK_ERRC(train_inpainter(toy_data(2), bad), Errc::InvalidParam);
    bad = toy_config();
    bad.init = "xavier";
    CHECK_ERRC(train_inpainter(toy_data(2), bad), Errc::InvalidParam);
}

TEST_CASE("training is deterministic for a fixed seed") {
    const auto data = toy_data(8);
    const Checkpoint a = train_inpainter(data, toy_config(5));
    const Checkpoint b = train_inpainter(data, toy_config(5));
    REQUIRE(a.history.size() == 3);
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].joint == b.history[i].joint);
        CHECK(a.history[i].disc == b.history[i].disc);
        CHECK(std::isfinite(a.history[i].joint));
    }
    CHECK(a.generator.at("layer0.weight").values == b.generator.at("layer0.weight").values);
    const Checkpoint c = train_inpainter(data, toy_config(6));
    CHECK(c.history[0].joint != a.history[0].joint);
}

TEST_CASE("checkpoint round trip reproduces the stored probe losses") {
    TempDir dir("gan");
    auto cfg = toy_config(7);
    cfg.init = "dcgan";
    Checkpoint ckpt = train_inpainter(toy_data(6), cfg);
    ckpt.run_config_json = R"({"seed":7})";
    save_checkpoint(ckpt, dir / "m.ckpt");
    const Checkpoint back = load_checkpoint(dir / "m.ckpt");
    CHECK(back.epoch == 3);
    CHECK(back.config.init == "dcgan");
    CHECK(back.config.custom_channels == cfg.custom_channels);
    CHECK(back.history.size() == 3);
    CHECK(back.history[2].rec == ckpt.history[2].rec);
    CHECK(back.probe_images.size() == 4);
    CHECK(back.probe_masks[1] == ckpt.probe_masks[1]);
    CHECK(back.run_config_json == ckpt.run_config_json);
    const LossBreakdown again = evaluate_probe(back);
    CHECK(again.rec == doctest::Approx(ckpt.probe_losses.rec).epsilon(1e-6));
    CHECK(again.adv_g == doctest::Approx(ckpt.probe_losses.adv_g).epsilon(1e-6));
    CHECK(again.disc == doctest::Approx(ckpt.probe_losses.disc).epsilon(1e-6));

    CHECK_ERRC(load_checkpoint(dir / "none.ckpt"), Errc::MissingFile);
    {
        std::ofstream out(dir / "bad.ckpt", std::ios::binary);
        out << "DQACKPT";
    }
    CHECK_ERRC(load_checkpoint(dir / "bad.ckpt"), Errc::FormatError);
}

TEST_CASE("inpaint composites and keeps known pixels exact") {
    const Checkpoint ckpt = train_inpainter(toy_data(4), toy_config(8));
    const ImageRGB img = random_image(40, 37, 9);
    CHECK(inpaint(ckpt, img, BinaryMask(40, 37)) == img);

    BinaryMask m(40, 37);
    std::mt19937_64 rng(4);
    for (auto& v : m.data())
        v = (rng() % 5) == 0;
    const ImageRGB out = inpaint(ckpt, img, m);
    for (int r = 0; r < 40; ++r)
        for (int c = 0; c < 37; ++c)
            for (int ch = 0; ch < 3; ++ch) {
                if (!m.at(r, c))
                    CHECK(out.at(r, c, ch) == img.at(r, c, ch));
                else
                    CHECK((out.at(r, c, ch) >= 0.0f && out.at(r, c, ch) <= 1.0f));
            }
    const ImageRGB full = inpaint(ckpt, img, BinaryMask(40, 37, 1));
    for (float v : full.data())
        CHECK((v >= 0.0f && v <= 1.0f));
    CHECK_ERRC(inpaint(ckpt, img, BinaryMask(40, 36)), Errc::DimMismatch);
    CHECK_ERRC(inpaint(ckpt, random_image(8, 8, 1), BinaryMask(8, 8)), Errc::DimMismatch);
}

TEST_CASE("psnr examples") {
    const ImageRGB a = random_image(9, 11, 1), b = random_image(9, 11, 2);
    CHECK(psnr(a, a) == std::numeric_limits<double>::infinity());
    CHECK(psnr(ImageRGB(4, 4, 0.0f), ImageRGB(4, 4, 1.0f)) == 0.0);
    long double sse = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const long double d = static_cast<long double>(a.data()[i]) - b.data()[i];
        sse += d * d;
    }
    const double oracle = static_cast<double>(-10.0L * std::log10(sse / a.size()));
    CHECK(std::fabs(psnr(a, b) - oracle) < 1e-9);
    CHECK_ERRC(psnr(a, ImageRGB(9, 10)), Errc::DimMismatch);
}
