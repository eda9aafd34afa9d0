#include "planted_run.hpp"

#include "dibrqa/error.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>

namespace planted {

namespace fs = std::filesystem;
using namespace dibrqa;

namespace {

BinaryMask training_mask(const ImageRGB& img, std::uint64_t seed) {
    const SuperpixelLabels labels = slic_segment(img);
    for (SegmentSize cls : {SegmentSize::Medium, SegmentSize::Small}) {
        try {
            return mask_type3(labels, cls, seed, 0.25);
        } catch (const Error& e) {
            if (e.code() != Errc::NoEligibleSegments)
                throw;
        }
    }
    return BinaryMask(img.height(), img.width());
}

ManifestRecord record(const std::string& image, const std::string& content, const std::string& algorithm, double dmos) {
    ManifestRecord r;
    r.image_path = image;
    r.content_id = content;
    r.viewpoint_id = "0";
    r.algorithm_id = algorithm;
    r.dmos = dmos;
    return r;
}

} // namespace

Result run(const fs::path& dir, const Options& opt) {
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    fs::create_directories(dir / "val");
    fs::create_directories(dir / "test");
    Result res;
    auto say = [&](const std::string& s) {
        if (opt.verbose)
            std::cerr << "  [planted] " << s << '\n';
    };

    // 1. inpainter
    std::vector<TrainSample> train;
    double cov = 0.0;
    for (int i = 0; i < opt.train_images; ++i) {
        const auto scene = synthetic_scene(opt.train_size, opt.train_size, opt.seed * 100003ULL + static_cast<unsigned>(i));
        BinaryMask m = training_mask(scene.image, opt.seed * 7919ULL + static_cast<unsigned>(i));
        cov += m.coverage();
        train.push_back({scene.image, std::move(m)});
    }
    res.train_coverage = cov / opt.train_images;

    RunConfig cfg;
    cfg.seed = opt.seed;
    cfg.train.arch = "D1";
    cfg.train.epochs = opt.epochs;
    cfg.train.batch_size = opt.batch;
    cfg.train.seed = opt.seed;
    Checkpoint ckpt = train_inpainter(train, cfg.train, [&](const EpochLoss& e) {
        say("epoch " + std::to_string(e.epoch) + " joint " + std::to_string(e.joint) + " rec " + std::to_string(e.rec) +
            " adv_g " + std::to_string(e.adv_g) + " disc " + std::to_string(e.disc));
    });
    ckpt.run_config_json = cfg.to_json();
    res.history = ckpt.history;
    res.checkpoint = dir / "inpainter.ckpt";
    save_checkpoint(ckpt, res.checkpoint);
    write_loss_log(ckpt.history, dir / "loss.csv");
    res.train_seconds = std::chrono::duration<double>(clock::now() - t0).count();

    // 2. metric on a planted validation set
    Manifest val;
    val.base_dir = dir;
    for (int i = 0; i < opt.val_images; ++i) {
        const std::uint64_t s = opt.seed * 1000003ULL + 500000ULL + static_cast<unsigned>(i);
        const auto scene = synthetic_scene(opt.score_size, opt.score_size, s);
        const double target = 0.2 * static_cast<double>(i % 21) / 20.0;
        const BinaryMask m = synthetic_hole_mask(scene.segmentation, target, s + 17);
        const std::string rel = "val/v" + std::to_string(i) + ".png";
        save_image(punch_holes(scene.image, m), dir / rel);
        val.records.push_back(record(rel, "v" + std::to_string(i), "val", planted_dmos(m.coverage())));
    }
    write_manifest(val, dir / "val.jsonl");
    const TrainedMetric built = build_metric(ckpt, res.checkpoint.filename().string(), val, cfg, true);
    res.bundle = dir / "metric.bundle";
    save_metric(built, res.bundle);
    const TrainedMetric tm = load_metric(res.bundle);
    res.codebook_k = tm.codebook.k;

    // 3. held-out test set, four degradation levels
    const std::vector<std::string> levels{"L1", "L2", "L3", "L4"};
    const std::vector<double> level_cov{0.02, 0.06, 0.11, 0.17};
    Manifest test;
    test.base_dir = dir;
    for (int c = 0; c < opt.test_contents; ++c) {
        const std::uint64_t s = opt.seed * 1000003ULL + 700000ULL + static_cast<unsigned>(c);
        const auto scene = synthetic_scene(opt.score_size, opt.score_size, s);
        for (std::size_t l = 0; l < levels.size(); ++l) {
            const double jitter = 0.01 * (static_cast<double>((c * 7 + static_cast<int>(l) * 3) % 5) - 2.0) / 2.0;
            const BinaryMask m = synthetic_hole_mask(scene.segmentation, level_cov[l] + jitter, s * 13 + l);
            const std::string rel = "test/t" + std::to_string(c) + "_" + levels[l] + ".png";
            save_image(punch_holes(scene.image, m), dir / rel);
            test.records.push_back(record(rel, "t" + std::to_string(c), levels[l], planted_dmos(m.coverage())));
        }
    }
    write_manifest(test, dir / "test.jsonl");

    const auto items = score_manifest(tm, test, 1);
    res.scores = dir / "test_scores.txt";
    {
        std::ofstream out(res.scores);
        write_score_lines(items, out);
    }
    // reload round-trip: in-process bundle vs the one read back from disk
    const auto items_built = score_manifest(built, test, 1);
    for (std::size_t i = 0; i < items.size(); ++i)
        res.reload_max_diff = std::max(res.reload_max_diff, std::fabs(items[i].score - items_built[i].score));

    std::vector<double> pred, truth;
    std::vector<AlgorithmScore> by_alg;
    for (std::size_t i = 0; i < items.size(); ++i) {
        pred.push_back(items[i].score);
        truth.push_back(test.records[i].dmos);
        by_alg.push_back({test.records[i].algorithm_id, items[i].score});
    }
    res.scc = scc(pred, truth);
    for (const auto& e : rank_algorithms(by_alg, Better::Lower))
        res.ranking.push_back(e.algorithm);
    res.planted_ranking = levels;

    RunConfig eval_cfg = cfg;
    eval_cfg.n_folds = 50;
    const EvaluationResult ev = run_evaluate(tm, test, eval_cfg, true);
    res.report = dir / "test_report.json";
    {
        std::ofstream out(res.report);
        out << evaluation_json(ev, eval_cfg);
    }

    // 4. clean vs punched pairs
    MetricScorer scorer(tm);
    int worse = 0;
    for (int p = 0; p < opt.pairs; ++p) {
        const std::uint64_t s = opt.seed * 1000003ULL + 900000ULL + static_cast<unsigned>(p);
        const auto scene = synthetic_scene(opt.score_size, opt.score_size, s);
        const BinaryMask m = synthetic_hole_mask(scene.segmentation, 0.1, s + 3);
        if (scorer.score(punch_holes(scene.image, m)) > scorer.score(scene.image))
            ++worse;
    }
    res.worse_fraction = static_cast<double>(worse) / opt.pairs;
    res.total_seconds = std::chrono::duration<double>(clock::now() - t0).count();
    return res;
}

} // namespace planted
