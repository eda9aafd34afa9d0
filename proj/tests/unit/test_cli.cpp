#include "doctest.h"
#include "test_util.hpp"

#include "dibrqa/pipeline.hpp"
#include "dibrqa/synthetic.hpp"

#include "json.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace dibrqa;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Run {
    int code = -1;
    std::string out, err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> v;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);)
        if (!l.empty())
            v.push_back(l);
    return v;
}

// Shared fixture: corpora, a toy checkpoint and bundles, built on first use.
class Fixture {
public:
    static Fixture& get() {
        static Fixture f;
        return f;
    }

    Run run(const std::string& args) {
        const fs::path out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
        const std::string cmd = std::string("\"") + DIBRQA_CLI_PATH + "\" " + args + " > \"" + out.string() +
                                "\" 2> \"" + err.string() + "\"";
        const int status = std::system(cmd.c_str());
        Run r;
        r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        r.out = slurp(out);
        r.err = slurp(err);
        return r;
    }

    fs::path operator/(const std::string& rel) const { return dir_.path() / rel; }

    fs::path checkpoint() {
        if (!fs::exists(*this / "toy.ckpt")) {
            REQUIRE(run("prepare-masks --corpus " + q("voc") + " --types I,II,III --out " + q("train/masks.jsonl")).code == 0);
            std::ofstream(*this / "toy.json") << R"({"arch": "custom", "custom_channels": [4, 8], "bottleneck": 16,
                                                    "epochs": 12, "batch_size": 3, "learning_rate": 0.002})";
            const Run r = run("--config " + q("toy.json") + " --seed 5 train-inpainter --manifest " +
                              q("train/masks.jsonl") + " --out " + q("toy.ckpt") + " --loss-log " + q("loss.csv"));
            INFO(r.err);
            REQUIRE(r.code == 0);
        }
        return *this / "toy.ckpt";
    }

    // 20 records, 48x48 punched scenes, DMOS rising with hole area.
    fs::path dmos_manifest() {
        const fs::path path = *this / "dmos/all.jsonl";
        if (!fs::exists(path)) {
            fs::create_directories(*this / "dmos");
            Manifest m;
            m.base_dir = path.parent_path();
            for (int i = 0; i < 20; ++i) {
                const auto scene = synthetic_scene(48, 48, 900 + static_cast<unsigned>(i));
                const BinaryMask holes = synthetic_hole_mask(scene.segmentation, 0.01 * (i % 10), 7 + i);
                const std::string rel = "d" + std::to_string(i) + ".png";
                save_image(punch_holes(scene.image, holes), m.base_dir / rel);
                ManifestRecord r;
                r.image_path = rel;
                r.content_id = "c" + std::to_string(i / 2);
                r.viewpoint_id = "0";
                r.algorithm_id = "A" + std::to_string(i % 2);
                r.dmos = 1.0 + 30.0 * holes.coverage();
                m.records.push_back(r);
            }
            write_manifest(m, path);
        }
        return path;
    }

    std::string q(const std::string& rel) const { return "\"" + (dir_.path() / rel).string() + "\""; }

private:
    Fixture() : dir_("cli") {
        for (const char* corpus : {"voc/JPEGImages", "voc/SegmentationClass", "plain"})
            fs::create_directories(dir_ / corpus);
        for (int i = 0; i < 3; ++i) {
            const auto scene = synthetic_scene(64, 64, 40 + static_cast<unsigned>(i));
            save_image(scene.image, dir_ / ("voc/JPEGImages/img" + std::to_string(i) + ".png"));
            save_label_png(scene.segmentation.classes, 64, 64, dir_ / ("voc/SegmentationClass/img" + std::to_string(i) + ".png"));
        }
        for (int i = 0; i < 2; ++i)
            save_image(synthetic_scene(64, 64, 60 + static_cast<unsigned>(i)).image,
                       dir_ / ("plain/p" + std::to_string(i) + ".png"));
    }

    testutil::TempDir dir_;
};

} // namespace

TEST_CASE("cli: usage errors exit with 2") {
    auto& f = Fixture::get();
    CHECK(f.run("").code == 2);
    CHECK(f.run("score").code == 2);
    CHECK(f.run("prepare-masks --corpus " + f.q("voc") + " --types IV --out " + f.q("x.jsonl")).code == 2);
    CHECK(f.run("frobnicate").code == 2);
    CHECK(f.run("--help").code == 0);
}

TEST_CASE("cli: prepare-masks emits one pair per image and type") {
    auto& f = Fixture::get();
    const Run r = f.run("prepare-masks --corpus " + f.q("voc") + " --types I,II --out " + f.q("p1/m.jsonl"));
    REQUIRE(r.code == 0);
    const Manifest m = read_manifest(f / "p1/m.jsonl");
    CHECK(m.size() == 6);
    for (const auto& rec : m.records)
        CHECK(fs::exists(m.resolve(rec.mask_path)));

    // without class maps only superpixel masks are possible
    const Run plain = f.run("prepare-masks --corpus " + f.q("plain") + " --types I,II,III --out " + f.q("p2/m.jsonl"));
    REQUIRE(plain.code == 0);
    const Manifest m2 = read_manifest(f / "p2/m.jsonl");
    CHECK(m2.size() >= 1);
    for (const auto& rec : m2.records)
        CHECK(rec.algorithm_id == "maskIII");
    CHECK(plain.err.find("skipped") != std::string::npos);

    CHECK(f.run("prepare-masks --corpus " + f.q("plain") + " --types I --out " + f.q("p3/m.jsonl")).code == 1);
    fs::create_directories(f / "empty");
    const Run empty = f.run("prepare-masks --corpus " + f.q("empty") + " --types III --out " + f.q("p4/m.jsonl"));
    CHECK(empty.code == 1);
    CHECK(empty.err.find("EmptyCorpus") != std::string::npos);
}

TEST_CASE("cli: train-inpainter writes a checkpoint and a falling loss log") {
    auto& f = Fixture::get();
    const Checkpoint ckpt = load_checkpoint(f.checkpoint());
    CHECK(ckpt.epoch == 12);
    CHECK(ckpt.config.seed == 5);
    CHECK(json::parse(ckpt.run_config_json).at("schema_version") == 1);
    const auto rows = lines(slurp(f / "loss.csv"));
    REQUIRE(rows.size() == 13);
    CHECK(rows[0] == "epoch,joint,rec,adv_g,disc");
    auto joint = [&](std::size_t i) {
        std::istringstream in(rows[i]);
        std::string field;
        std::getline(in, field, ',');
        std::getline(in, field, ',');
        return std::stod(field);
    };
    CHECK(joint(12) < joint(1));

    const Run missing = f.run("train-inpainter --manifest " + f.q("nope.jsonl") + " --out " + f.q("x.ckpt"));
    CHECK(missing.code == 1);
    CHECK(missing.err.find("nope.jsonl") != std::string::npos);
}

TEST_CASE("cli: build-metric, score and evaluate") {
    auto& f = Fixture::get();
    const fs::path ckpt = f.checkpoint();
    const fs::path manifest = f.dmos_manifest();

    REQUIRE(f.run("build-metric --checkpoint \"" + ckpt.string() + "\" --manifest \"" + manifest.string() +
                  "\" --whole-manifest --out " + f.q("k160.bundle")).code == 0);
    CHECK(load_metric(f / "k160.bundle").codebook.k == 160);

    const Run b3 = f.run("--seed 3 build-metric --checkpoint \"" + ckpt.string() + "\" --manifest \"" +
                         manifest.string() + "\" --whole-manifest --k 3 --svr-c 1000 --svr-tube 0 --out " +
                         f.q("k3.bundle"));
    INFO(b3.err);
    REQUIRE(b3.code == 0);
    const TrainedMetric tm = load_metric(f / "k3.bundle");
    CHECK(tm.codebook.k == 3);
    CHECK(tm.svr.weights.size() == 3);
    CHECK(json::parse(tm.config_json).at("codebook_k") == 3);

    // single image: one `path score` line equal to the in-process score
    const fs::path img = manifest.parent_path() / "d3.png";
    const Run one = f.run("score --bundle " + f.q("k3.bundle") + " --image \"" + img.string() + "\"");
    REQUIRE(one.code == 0);
    const auto one_lines = lines(one.out);
    REQUIRE(one_lines.size() == 1);
    CHECK(one_lines[0].rfind(img.string() + " ", 0) == 0);
    const double cli_score = std::stod(one_lines[0].substr(img.string().size() + 1));
    CHECK(std::fabs(cli_score - score_image(tm, load_image(img))) < 1e-9);

    // five records: five lines, manifest order, deterministic
    Manifest all = read_manifest(manifest);
    Manifest five = all;
    five.records.resize(5);
    write_manifest(five, manifest.parent_path() / "five.jsonl");
    const std::string score5 = "score --bundle " + f.q("k3.bundle") + " --manifest " + f.q("dmos/five.jsonl");
    const Run s5 = f.run(score5);
    REQUIRE(s5.code == 0);
    const auto l5 = lines(s5.out);
    REQUIRE(l5.size() == 5);
    // paths are echoed as the manifest spells them, so outputs do not depend on where it lives
    for (std::size_t i = 0; i < 5; ++i)
        CHECK(l5[i].rfind(five.records[i].image_path + " ", 0) == 0);
    CHECK(f.run(score5).out == s5.out);

    // planted targets that are exactly linear in the histograms
    const auto hists = manifest_histograms(tm, all);
    for (std::size_t i = 0; i < all.size(); ++i)
        all.records[i].dmos = 2.0 + 5.0 * hists[i].mu[0] - 3.0 * hists[i].mu[2];
    write_manifest(all, manifest.parent_path() / "linear.jsonl");
    const std::string eval = "--seed 13 evaluate --bundle " + f.q("k3.bundle") + " --manifest " +
                             f.q("dmos/linear.jsonl") + " --whole-manifest --folds 50 --out " + f.q("report.json");
    const Run ev = f.run(eval);
    INFO(ev.err);
    REQUIRE(ev.code == 0);
    const std::string report_text = slurp(f / "report.json");
    const json report = json::parse(report_text);
    CHECK(report.at("folds").size() == 50);
    CHECK(report.at("seed") == 13);
    CHECK(report.at("schema_version") == 1);
    CHECK(report.at("config").at("seed") == 13);
    CHECK(report.at("median_pcc").get<double>() > 0.999);
    REQUIRE(f.run(eval).code == 0);
    CHECK(slurp(f / "report.json") == report_text);
}

TEST_CASE("cli: benchmark reports both wall clocks") {
    auto& f = Fixture::get();
    f.checkpoint();
    f.dmos_manifest();
    if (!fs::exists(f / "k3.bundle"))
        REQUIRE(f.run("build-metric --checkpoint " + f.q("toy.ckpt") + " --manifest " + f.q("dmos/all.jsonl") +
                      " --whole-manifest --k 3 --out " + f.q("k3.bundle")).code == 0);
    const Run r = f.run("benchmark --bundle " + f.q("k3.bundle") + " --manifest " + f.q("dmos/all.jsonl") +
                        " --repeats 2");
    REQUIRE(r.code == 0);
    const json j = json::parse(r.out);
    CHECK(j.at("psnr_wall_seconds").get<double>() > 0.0);
    CHECK(j.at("metric_wall_seconds").get<double>() > 0.0);
    CHECK(j.at("normalized_time").get<double>() ==
          doctest::Approx(j.at("metric_seconds_per_image").get<double>() / j.at("psnr_seconds_per_image").get<double>()));
    CHECK(j.at("reference_psnr_seconds") == 0.05);
    CHECK(j.at("n_images") == 20);
    CHECK(j.contains("config"));
}

TEST_CASE("cli: inpaint keeps unmasked pixels") {
    auto& f = Fixture::get();
    f.checkpoint();
    const Manifest m = read_manifest(f / "train/masks.jsonl");
    const auto& rec = m.records.front();
    const Run r = f.run("inpaint --checkpoint " + f.q("toy.ckpt") + " --image \"" + m.resolve(rec.image_path).string() +
                        "\" --mask \"" + m.resolve(rec.mask_path).string() + "\" --image-out " + f.q("filled.png"));
    INFO(r.err);
    REQUIRE(r.code == 0);
    const ImageRGB in = load_image(m.resolve(rec.image_path)), out = load_image(f / "filled.png");
    const BinaryMask mask = load_mask(m.resolve(rec.mask_path));
    for (int y = 0; y < in.height(); ++y)
        for (int x = 0; x < in.width(); ++x)
            if (!mask.at(y, x))
                CHECK(out.at(y, x, 0) == in.at(y, x, 0));
}
