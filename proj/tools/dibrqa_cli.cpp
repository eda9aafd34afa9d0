// dibrqa: command-line front end for mask preparation, inpainter training,
// metric building, scoring and evaluation.

#include "dibrqa/error.hpp"
#include "dibrqa/pipeline.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace dibrqa;

namespace {

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs;
    std::optional<std::string> arch, init;
    std::optional<int> epochs, batch_size, bottleneck;
    std::optional<double> learning_rate, lambda;
    std::optional<int> k, patch_size, stride, folds, grid_folds, dilation, shift_dx, shift_dy, slic_segments;
    std::optional<std::string> selector, ttest, mask3_size, metric_name;
    std::optional<double> svr_c, svr_tube, alpha, mask3_fraction;
    std::optional<bool> svr_grid;

    void apply(RunConfig& c) const {
        if (seed) c.seed = *seed;
        if (jobs) c.jobs = *jobs;
        if (arch) c.train.arch = *arch;
        if (epochs) c.train.epochs = *epochs;
        if (batch_size) c.train.batch_size = *batch_size;
        if (bottleneck) c.train.bottleneck = *bottleneck;
        if (init) c.train.init = *init;
        if (learning_rate) c.train.learning_rate = *learning_rate;
        if (lambda) c.train.lambda = *lambda;
        if (k) c.codebook_k = *k;
        if (patch_size) c.patch_size = *patch_size;
        if (stride) c.stride = *stride;
        if (folds) c.n_folds = *folds;
        if (grid_folds) c.grid_folds = *grid_folds;
        if (dilation) c.dilation_radius = *dilation;
        if (shift_dx) c.shift_dx = *shift_dx;
        if (shift_dy) c.shift_dy = *shift_dy;
        if (slic_segments) c.slic_segments = *slic_segments;
        if (selector) c.selector = *selector;
        if (ttest) c.ttest = *ttest;
        if (mask3_size) c.mask3_size = *mask3_size;
        if (metric_name) c.metric_name = *metric_name;
        if (svr_c) c.svr_c = *svr_c;
        if (svr_tube) c.svr_tube = *svr_tube;
        if (alpha) c.alpha = *alpha;
        if (mask3_fraction) c.mask3_fraction = *mask3_fraction;
        // explicit C or tube means "use these", unless the grid is asked for too
        if (svr_grid)
            c.svr_grid = *svr_grid;
        else if (svr_c || svr_tube)
            c.svr_grid = false;
    }
};

void log_line(const std::string& msg) { std::cerr << "[dibrqa] " << msg << '\n'; }

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out)
        throw Error(Errc::InvalidParam, "cannot open for writing: " + path.string());
    out << text;
}

/// A single image becomes a one-record manifest whose key is its path.
Manifest image_as_manifest(const fs::path& image) {
    Manifest m;
    m.base_dir = fs::path(".");
    ManifestRecord r;
    r.image_path = image.string();
    r.content_id = image.string();
    r.viewpoint_id = "0";
    r.algorithm_id = "-";
    m.records.push_back(r);
    return m;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"No-reference quality metric for synthesized views"};
    app.require_subcommand(1);
    app.fallthrough();

    Overrides ov;
    std::string config_path;
    app.add_option("--config", config_path, "JSON run configuration; flags override it")->check(CLI::ExistingFile);
    app.add_option("--seed", ov.seed, "Seed for every random choice");
    app.add_option("--jobs", ov.jobs, "Worker threads (1 = fully deterministic order)")->check(CLI::PositiveNumber);

    // prepare-masks
    auto* prep = app.add_subcommand("prepare-masks", "Generate (image, mask) pairs from an image corpus");
    std::string corpus, prep_out;
    std::vector<std::string> mask_types{"III"};
    prep->add_option("--corpus", corpus, "Image directory (VOC layout detected)")->required();
    prep->add_option("--types", mask_types, "Mask types: I, II, III")->delimiter(',')->check(
        CLI::IsMember({"I", "II", "III", "1", "2", "3"}));
    prep->add_option("--out", prep_out, "Output manifest (.jsonl)")->required();
    prep->add_option("--dilation", ov.dilation, "Mask I dilation radius");
    prep->add_option("--shift-dx", ov.shift_dx, "Mask II horizontal shift");
    prep->add_option("--shift-dy", ov.shift_dy, "Mask II vertical shift");
    prep->add_option("--slic-segments", ov.slic_segments, "Superpixel count (0 = automatic)");
    prep->add_option("--mask3-size", ov.mask3_size, "Mask III size class")->check(CLI::IsMember({"small", "medium"}));
    prep->add_option("--mask3-fraction", ov.mask3_fraction, "Fraction of eligible superpixels");

    // train-inpainter
    auto* train = app.add_subcommand("train-inpainter", "Train the context-encoder GAN");
    std::string train_manifest, train_out, loss_log;
    train->add_option("--manifest", train_manifest, "Manifest with mask_path entries")->required();
    train->add_option("--out", train_out, "Checkpoint path")->required();
    train->add_option("--loss-log", loss_log, "Per-epoch loss CSV");
    train->add_option("--arch", ov.arch, "D1, D2 or D3");
    train->add_option("--epochs", ov.epochs, "Training epochs");
    train->add_option("--batch-size", ov.batch_size, "Mini-batch size");
    train->add_option("--lr", ov.learning_rate, "Adam learning rate");
    train->add_option("--lambda", ov.lambda, "Reconstruction weight in [0,1]");
    train->add_option("--bottleneck", ov.bottleneck, "Bottleneck units");
    train->add_option("--init", ov.init, "Weight init: scaled or dcgan");

    // build-metric
    auto* build = app.add_subcommand("build-metric", "Fit logit range, codebook and regressor");
    std::string build_ckpt, build_manifest, build_out;
    bool build_whole = false;
    build->add_option("--checkpoint", build_ckpt, "Inpainter checkpoint")->required()->check(CLI::ExistingFile);
    build->add_option("--manifest", build_manifest, "Manifest with DMOS")->required();
    build->add_option("--out", build_out, "Metric bundle path")->required();
    build->add_flag("--whole-manifest", build_whole, "Use every record instead of the validation split");
    build->add_option("--k", ov.k, "Codebook size");
    build->add_option("--selector", ov.selector, "all | boolean | threshold[:eps]");
    build->add_option("--patch-size", ov.patch_size, "Patch size (defaults to the input size)");
    build->add_option("--stride", ov.stride, "Patch stride (defaults to half the patch)");
    build->add_option("--svr-c", ov.svr_c, "Regressor C");
    build->add_option("--svr-tube", ov.svr_tube, "Regressor tube width");
    build->add_flag("--svr-grid,!--no-svr-grid", ov.svr_grid,
                    "Grid-search C and tube on the validation records (default; off when --svr-c/--svr-tube are given)");
    build->add_option("--grid-folds", ov.grid_folds, "Folds for the grid search");

    // score
    auto* score = app.add_subcommand("score", "Score an image or every record of a manifest");
    std::string score_bundle, score_image, score_manifest_path, score_out, score_csv;
    score->add_option("--bundle", score_bundle, "Metric bundle")->required()->check(CLI::ExistingFile);
    auto* img_opt = score->add_option("--image", score_image, "Single image");
    auto* man_opt = score->add_option("--manifest", score_manifest_path, "Manifest");
    img_opt->excludes(man_opt);
    score->add_option("--out", score_out, "Write `path score` lines here instead of stdout");
    score->add_option("--scores-csv", score_csv, "Also write metric_name,record_key,score rows");
    score->add_option("--metric-name", ov.metric_name, "Name used in the scores CSV");

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "Cross-validated PCC/SCC/RMSE");
    std::string eval_bundle, eval_manifest, eval_out, eval_scores;
    bool eval_whole = false;
    evaluate->add_option("--bundle", eval_bundle, "Metric bundle")->required()->check(CLI::ExistingFile);
    evaluate->add_option("--manifest", eval_manifest, "Manifest with DMOS")->required();
    evaluate->add_option("--out", eval_out, "Report path (JSON)")->required();
    evaluate->add_option("--folds", ov.folds, "Number of folds");
    evaluate->add_flag("--whole-manifest", eval_whole, "Use every record instead of the eval split");
    evaluate->add_option("--scores", eval_scores, "External metric scores file")->check(CLI::ExistingFile);
    evaluate->add_option("--ttest", ov.ttest, "welch or pooled")->check(CLI::IsMember({"welch", "pooled"}));
    evaluate->add_option("--alpha", ov.alpha, "Significance level");

    // benchmark
    auto* bench = app.add_subcommand("benchmark", "Runtime normalised by PSNR");
    std::string bench_bundle, bench_manifest, bench_out;
    int repeats = 3;
    bench->add_option("--bundle", bench_bundle, "Metric bundle")->required()->check(CLI::ExistingFile);
    bench->add_option("--manifest", bench_manifest, "Images to time")->required();
    bench->add_option("--repeats", repeats, "Passes over the images")->check(CLI::PositiveNumber);
    bench->add_option("--out", bench_out, "Report path (JSON); stdout otherwise");

    // inpaint
    auto* paint = app.add_subcommand("inpaint", "Inpaint masked records and report PSNR");
    std::string paint_ckpt, paint_manifest, paint_out, paint_image, paint_mask, paint_image_out;
    paint->add_option("--checkpoint", paint_ckpt, "Inpainter checkpoint")->required()->check(CLI::ExistingFile);
    paint->add_option("--manifest", paint_manifest, "Manifest with mask_path entries");
    paint->add_option("--out", paint_out, "PSNR report path (JSON)");
    paint->add_option("--image", paint_image, "Single image to inpaint");
    paint->add_option("--mask", paint_mask, "Mask for --image");
    paint->add_option("--image-out", paint_image_out, "Where to write the inpainted image");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        RunConfig cfg;
        if (!config_path.empty())
            cfg = load_run_config(config_path);
        ov.apply(cfg);
        cfg.validate();

        if (*prep) {
            std::set<MaskType> types;
            for (const auto& t : mask_types)
                types.insert(parse_mask_type(t));
            const PrepareResult r = prepare_masks(corpus, types, prep_out, cfg, log_line);
            std::string enabled;
            for (auto t : r.enabled)
                enabled += (enabled.empty() ? "" : ",") + to_string(t);
            log_line("wrote " + std::to_string(r.manifest.size()) + " pairs from " + std::to_string(r.n_images) +
                     " images (types " + enabled + ")");
        } else if (*train) {
            run_train_inpainter(train_manifest, cfg, train_out, loss_log, log_line);
            log_line("checkpoint written to " + train_out);
        } else if (*build) {
            const Checkpoint ckpt = load_checkpoint(build_ckpt);
            const Manifest manifest = read_manifest(build_manifest);
            const TrainedMetric tm = build_metric(ckpt, build_ckpt, manifest, cfg, build_whole, log_line);
            save_metric(tm, build_out);
            log_line("bundle written to " + build_out + " (K=" + std::to_string(tm.codebook.k) + ")");
        } else if (*score) {
            if (score_image.empty() == score_manifest_path.empty()) {
                std::cerr << "score: exactly one of --image or --manifest is required\n";
                return 2;
            }
            const TrainedMetric tm = load_metric(score_bundle);
            const Manifest m = score_image.empty() ? read_manifest(score_manifest_path) : image_as_manifest(score_image);
            const auto items = score_manifest(tm, m, cfg.jobs);
            if (score_out.empty()) {
                write_score_lines(items, std::cout);
            } else {
                std::ofstream out(score_out);
                if (!out)
                    throw Error(Errc::InvalidParam, "cannot open for writing: " + score_out);
                write_score_lines(items, out);
            }
            if (!score_csv.empty()) {
                std::vector<ScoreRow> rows;
                for (const auto& it : items)
                    rows.push_back({cfg.metric_name, it.key, it.score});
                write_scores_csv(rows, score_csv);
            }
        } else if (*evaluate) {
            const TrainedMetric tm = load_metric(eval_bundle);
            const Manifest m = read_manifest(eval_manifest);
            std::vector<ScoreRow> external;
            if (!eval_scores.empty())
                external = read_scores_csv(eval_scores);
            const EvaluationResult r = run_evaluate(tm, m, cfg, eval_whole, external, log_line);
            write_text(eval_out, evaluation_json(r, cfg));
            std::ostringstream os;
            os << "median PCC " << r.report.median_pcc << ", SCC " << r.report.median_scc << ", RMSE "
               << r.report.median_rmse << " over " << r.report.folds.size() << " folds";
            log_line(os.str());
        } else if (*bench) {
            const TrainedMetric tm = load_metric(bench_bundle);
            const Manifest m = read_manifest(bench_manifest);
            const BenchmarkResult r = run_benchmark(tm, m, repeats);
            if (bench_out.empty())
                std::cout << benchmark_json(r, cfg);
            else
                write_text(bench_out, benchmark_json(r, cfg));
        } else if (*paint) {
            const Checkpoint ckpt = load_checkpoint(paint_ckpt);
            if (!paint_image.empty()) {
                if (paint_mask.empty() || paint_image_out.empty()) {
                    std::cerr << "inpaint: --image needs --mask and --image-out\n";
                    return 2;
                }
                save_image(inpaint(ckpt, load_image(paint_image), load_mask(paint_mask)), paint_image_out);
            } else if (!paint_manifest.empty()) {
                const InpaintEvalResult r = run_inpaint_eval(ckpt, read_manifest(paint_manifest), log_line);
                if (paint_out.empty())
                    std::cout << inpaint_eval_json(r, cfg);
                else
                    write_text(paint_out, inpaint_eval_json(r, cfg));
            } else {
                std::cerr << "inpaint: either --image or --manifest is required\n";
                return 2;
            }
        }
    } catch (const Error& e) {
        log_line(std::string("error: ") + e.what());
        return 1;
    } catch (const std::exception& e) {
        log_line(std::string("error: ") + e.what());
        return 1;
    }
    return 0;
}
