#include "dibrqa/pipeline.hpp"

#include "dibrqa/error.hpp"
#include "parallel.hpp"
#include "serialization.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

namespace dibrqa {

namespace fs = std::filesystem;
using io::json;

// ---- configuration --------------------------------------------------------------------

namespace {

void require(bool ok, const std::string& what) {
    if (!ok)
        throw Error(Errc::InvalidParam, what);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    // splitmix64 finaliser
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

void emit(const LogFn& log, const std::string& msg) {
    if (log)
        log(msg);
}

} // namespace

void RunConfig::validate() const {
    require(jobs >= 1, "jobs must be >= 1");
    require(dilation_radius >= 1, "dilation_radius must be >= 1");
    require(slic_segments >= 0, "slic_segments must be >= 0");
    require(slic_compactness > 0, "slic_compactness must be > 0");
    require(slic_iters >= 1, "slic_iters must be >= 1");
    require(mask3_fraction > 0 && mask3_fraction <= 1, "mask3_fraction must lie in (0,1]");
    require(mask3_size == "small" || mask3_size == "medium", "mask3_size must be small or medium");
    train.validate();
    require(codebook_k >= 1, "codebook_k must be >= 1");
    require(kmeans_iters >= 1, "kmeans_iters must be >= 1");
    require(kmeans_tol >= 0, "kmeans_tol must be >= 0");
    require(patch_size >= 0 && stride >= 0, "patch_size and stride must be >= 0");
    parse_selector(selector);
    require(svr_c > 0, "svr_c must be > 0");
    require(svr_tube >= 0, "svr_tube must be >= 0");
    require(grid_folds >= 1, "grid_folds must be >= 1");
    require(n_folds >= 1, "n_folds must be >= 1");
    require(ttest == "welch" || ttest == "pooled", "ttest must be welch or pooled");
    require(alpha > 0 && alpha < 1, "alpha must lie in (0,1)");
    require(!metric_name.empty() && metric_name.find(',') == std::string::npos, "metric_name must be non-empty, no commas");
}

namespace {

json config_json(const RunConfig& c) {
    json j;
    j["schema_version"] = RunConfig::kSchemaVersion;
    j["seed"] = c.seed;
    j["jobs"] = c.jobs;
    j["dilation_radius"] = c.dilation_radius;
    j["shift_dx"] = c.shift_dx;
    j["shift_dy"] = c.shift_dy;
    j["slic_segments"] = c.slic_segments;
    j["slic_compactness"] = c.slic_compactness;
    j["slic_iters"] = c.slic_iters;
    j["mask3_fraction"] = c.mask3_fraction;
    j["mask3_size"] = c.mask3_size;
    j["arch"] = c.train.arch;
    j["custom_channels"] = c.train.custom_channels;
    j["learning_rate"] = c.train.learning_rate;
    j["lambda"] = c.train.lambda;
    j["batch_size"] = c.train.batch_size;
    j["epochs"] = c.train.epochs;
    j["beta1"] = c.train.beta1;
    j["beta2"] = c.train.beta2;
    j["bottleneck"] = c.train.bottleneck;
    j["init"] = c.train.init;
    j["codebook_k"] = c.codebook_k;
    j["kmeans_iters"] = c.kmeans_iters;
    j["kmeans_tol"] = c.kmeans_tol;
    j["patch_size"] = c.patch_size;
    j["stride"] = c.stride;
    j["selector"] = c.selector;
    j["svr_c"] = c.svr_c;
    j["svr_tube"] = c.svr_tube;
    j["svr_grid"] = c.svr_grid;
    j["grid_folds"] = c.grid_folds;
    j["n_folds"] = c.n_folds;
    j["ttest"] = c.ttest;
    j["alpha"] = c.alpha;
    j["metric_name"] = c.metric_name;
    return j;
}

} // namespace

std::string RunConfig::to_json() const { return config_json(*this).dump(); }

void RunConfig::merge_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(Errc::InvalidParam, std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object())
        throw Error(Errc::InvalidParam, "config must be a JSON object");
    RunConfig c = *this;
    const std::map<std::string, std::function<void(const json&)>> setters{
        {"schema_version",
         [](const json& v) {
             if (v.get<int>() != kSchemaVersion)
                 throw Error(Errc::InvalidParam, "unsupported config schema_version");
         }},
        {"seed", [&](const json& v) { c.seed = v.get<std::uint64_t>(); }},
        {"jobs", [&](const json& v) { c.jobs = v.get<int>(); }},
        {"dilation_radius", [&](const json& v) { c.dilation_radius = v.get<int>(); }},
        {"shift_dx", [&](const json& v) { c.shift_dx = v.get<int>(); }},
        {"shift_dy", [&](const json& v) { c.shift_dy = v.get<int>(); }},
        {"slic_segments", [&](const json& v) { c.slic_segments = v.get<int>(); }},
        {"slic_compactness", [&](const json& v) { c.slic_compactness = v.get<double>(); }},
        {"slic_iters", [&](const json& v) { c.slic_iters = v.get<int>(); }},
        {"mask3_fraction", [&](const json& v) { c.mask3_fraction = v.get<double>(); }},
        {"mask3_size", [&](const json& v) { c.mask3_size = v.get<std::string>(); }},
        {"arch", [&](const json& v) { c.train.arch = v.get<std::string>(); }},
        {"custom_channels", [&](const json& v) { c.train.custom_channels = v.get<std::vector<int>>(); }},
        {"learning_rate", [&](const json& v) { c.train.learning_rate = v.get<double>(); }},
        {"lambda", [&](const json& v) { c.train.lambda = v.get<double>(); }},
        {"batch_size", [&](const json& v) { c.train.batch_size = v.get<int>(); }},
        {"epochs", [&](const json& v) { c.train.epochs = v.get<int>(); }},
        {"beta1", [&](const json& v) { c.train.beta1 = v.get<double>(); }},
        {"beta2", [&](const json& v) { c.train.beta2 = v.get<double>(); }},
        {"bottleneck", [&](const json& v) { c.train.bottleneck = v.get<int>(); }},
        {"init", [&](const json& v) { c.train.init = v.get<std::string>(); }},
        {"codebook_k", [&](const json& v) { c.codebook_k = v.get<int>(); }},
        {"kmeans_iters", [&](const json& v) { c.kmeans_iters = v.get<int>(); }},
        {"kmeans_tol", [&](const json& v) { c.kmeans_tol = v.get<double>(); }},
        {"patch_size", [&](const json& v) { c.patch_size = v.get<int>(); }},
        {"stride", [&](const json& v) { c.stride = v.get<int>(); }},
        {"selector", [&](const json& v) { c.selector = v.get<std::string>(); }},
        {"svr_c", [&](const json& v) { c.svr_c = v.get<double>(); }},
        {"svr_tube", [&](const json& v) { c.svr_tube = v.get<double>(); }},
        {"svr_grid", [&](const json& v) { c.svr_grid = v.get<bool>(); }},
        {"grid_folds", [&](const json& v) { c.grid_folds = v.get<int>(); }},
        {"n_folds", [&](const json& v) { c.n_folds = v.get<int>(); }},
        {"ttest", [&](const json& v) { c.ttest = v.get<std::string>(); }},
        {"alpha", [&](const json& v) { c.alpha = v.get<double>(); }},
        {"metric_name", [&](const json& v) { c.metric_name = v.get<std::string>(); }},
    };
    for (const auto& [key, value] : j.items()) {
        const auto it = setters.find(key);
        if (it == setters.end())
            throw Error(Errc::InvalidParam, "unknown config key '" + key + "'");
        try {
            it->second(value);
        } catch (const json::exception&) {
            throw Error(Errc::InvalidParam, "config key '" + key + "' has the wrong type");
        }
    }
    c.validate();
    *this = std::move(c);
}

RunConfig load_run_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in)
        throw Error(Errc::MissingFile, path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    RunConfig cfg;
    cfg.merge_json(ss.str());
    return cfg;
}

MaskType parse_mask_type(const std::string& text) {
    if (text == "I" || text == "1" || text == "i")
        return MaskType::I;
    if (text == "II" || text == "2" || text == "ii")
        return MaskType::II;
    if (text == "III" || text == "3" || text == "iii")
        return MaskType::III;
    throw Error(Errc::InvalidParam, "unknown mask type '" + text + "' (expected I, II or III)");
}

std::string to_string(MaskType t) {
    switch (t) {
    case MaskType::I: return "I";
    case MaskType::II: return "II";
    case MaskType::III: return "III";
    }
    return "?";
}

// ---- mask preparation -----------------------------------------------------------------

namespace {

bool is_image_file(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    return ext == ".png" || ext == ".bmp";
}

std::vector<fs::path> list_images(const fs::path& dir) {
    std::vector<fs::path> out;
    if (!fs::is_directory(dir))
        return out;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && is_image_file(entry.path()))
            out.push_back(entry.path());
    std::sort(out.begin(), out.end());
    return out;
}

std::string relative_to(const fs::path& target, const fs::path& base) {
    const fs::path rel = fs::relative(fs::absolute(target), fs::absolute(base));
    return rel.empty() ? target.generic_string() : rel.generic_string();
}

SegmentationMap load_segmentation(const fs::path& path) {
    SegmentationMap seg;
    seg.classes = load_label_png(path, seg.height, seg.width);
    // the VOC "void" border label counts as background
    for (int& v : seg.classes)
        if (v == 255)
            v = 0;
    return seg;
}

} // namespace

PrepareResult prepare_masks(const fs::path& corpus_dir, const std::set<MaskType>& types, const fs::path& out_manifest,
                            const RunConfig& cfg, const LogFn& log) {
    cfg.validate();
    if (types.empty())
        throw Error(Errc::InvalidParam, "no mask types requested");
    if (!fs::is_directory(corpus_dir))
        throw Error(Errc::MissingFile, "corpus directory not found: " + corpus_dir.string());
    std::vector<fs::path> images = list_images(corpus_dir / "JPEGImages");
    if (images.empty())
        images = list_images(corpus_dir);
    if (images.empty())
        throw Error(Errc::EmptyCorpus, "no PNG or BMP images under " + corpus_dir.string());

    const fs::path seg_dir = corpus_dir / "SegmentationClass";
    const fs::path manifest_dir = out_manifest.has_parent_path() ? out_manifest.parent_path() : fs::path(".");
    const fs::path mask_dir = manifest_dir / "masks";
    fs::create_directories(mask_dir);

    PrepareResult result;
    result.manifest.base_dir = manifest_dir;
    result.n_images = images.size();
    const SegmentSize size_class = cfg.mask3_size == "small" ? SegmentSize::Small : SegmentSize::Medium;

    for (std::size_t idx = 0; idx < images.size(); ++idx) {
        const fs::path& image_path = images[idx];
        const std::string stem = image_path.stem().string();
        const fs::path seg_path = seg_dir / (stem + ".png");
        const bool has_seg = fs::exists(seg_path);

        std::optional<ImageRGB> image;
        std::optional<BinaryMask> mask1;
        auto add = [&](MaskType t, const BinaryMask& m) {
            const fs::path mpath = mask_dir / (stem + "_m" + std::to_string(static_cast<int>(t)) + ".png");
            save_mask(m, mpath);
            ManifestRecord r;
            r.image_path = relative_to(image_path, manifest_dir);
            r.content_id = stem;
            r.viewpoint_id = "0";
            r.algorithm_id = "mask" + to_string(t);
            r.mask_path = relative_to(mpath, manifest_dir);
            result.manifest.records.push_back(std::move(r));
            result.enabled.insert(t);
        };

        if ((types.count(MaskType::I) || types.count(MaskType::II)) && !has_seg) {
            emit(log, "no segmentation for " + stem + ": mask types I/II skipped");
        } else if (types.count(MaskType::I) || types.count(MaskType::II)) {
            const SegmentationMap seg = load_segmentation(seg_path);
            mask1 = mask_type1(seg, cfg.dilation_radius);
            if (types.count(MaskType::I))
                add(MaskType::I, *mask1);
            if (types.count(MaskType::II))
                add(MaskType::II, mask_type2(*mask1, cfg.shift_dx, cfg.shift_dy));
        }
        if (types.count(MaskType::III)) {
            image = load_image(image_path);
            const SuperpixelLabels labels =
                slic_segment(*image, SlicParams{cfg.slic_segments, cfg.slic_compactness, cfg.slic_iters});
            try {
                add(MaskType::III, mask_type3(labels, size_class, mix_seed(cfg.seed, idx), cfg.mask3_fraction));
            } catch (const Error& e) {
                if (e.code() != Errc::NoEligibleSegments)
                    throw;
                emit(log, "no " + cfg.mask3_size + " superpixels in " + stem + ": mask type III skipped");
            }
        }
    }
    if (result.manifest.records.empty())
        throw Error(Errc::EmptyCorpus, "no masks could be produced for the requested types");
    validate_manifest(result.manifest);
    write_manifest(result.manifest, out_manifest);
    return result;
}

// ---- resampling -----------------------------------------------------------------------

ImageRGB fit_square(const ImageRGB& img, int size) {
    require(size >= 1, "target size must be positive");
    const int side = std::min(img.height(), img.width());
    const int r0 = (img.height() - side) / 2, c0 = (img.width() - side) / 2;
    if (side == size) {
        ImageRGB out(size, size);
        for (int r = 0; r < size; ++r)
            for (int c = 0; c < size; ++c)
                for (int ch = 0; ch < 3; ++ch)
                    out.at(r, c, ch) = img.at(r0 + r, c0 + c, ch);
        return out;
    }
    ImageRGB out(size, size);
    const double scale = static_cast<double>(side) / size;
    for (int r = 0; r < size; ++r) {
        const double sy = std::clamp((r + 0.5) * scale - 0.5, 0.0, side - 1.0);
        const int y0 = static_cast<int>(sy);
        const int y1 = std::min(y0 + 1, side - 1);
        const double fy = sy - y0;
        for (int c = 0; c < size; ++c) {
            const double sx = std::clamp((c + 0.5) * scale - 0.5, 0.0, side - 1.0);
            const int x0 = static_cast<int>(sx);
            const int x1 = std::min(x0 + 1, side - 1);
            const double fx = sx - x0;
            for (int ch = 0; ch < 3; ++ch) {
                const double top = (1 - fx) * img.at(r0 + y0, c0 + x0, ch) + fx * img.at(r0 + y0, c0 + x1, ch);
                const double bot = (1 - fx) * img.at(r0 + y1, c0 + x0, ch) + fx * img.at(r0 + y1, c0 + x1, ch);
                out.at(r, c, ch) = static_cast<float>(std::clamp((1 - fy) * top + fy * bot, 0.0, 1.0));
            }
        }
    }
    return out;
}

BinaryMask fit_square(const BinaryMask& mask, int size) {
    require(size >= 1, "target size must be positive");
    const int side = std::min(mask.height(), mask.width());
    const int r0 = (mask.height() - side) / 2, c0 = (mask.width() - side) / 2;
    BinaryMask out(size, size);
    for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c) {
            const int y = std::min(side - 1, static_cast<int>((r + 0.5) * side / size));
            const int x = std::min(side - 1, static_cast<int>((c + 0.5) * side / size));
            out.at(r, c) = mask.at(r0 + y, c0 + x);
        }
    return out;
}

// ---- inpainter training -----------------------------------------------------------------

void write_loss_log(const std::vector<EpochLoss>& history, const fs::path& path) {
    std::ofstream out(path);
    if (!out)
        throw Error(Errc::InvalidParam, "cannot open for writing: " + path.string());
    out << "epoch,joint,rec,adv_g,disc\n" << std::setprecision(17);
    for (const auto& e : history)
        out << e.epoch << ',' << e.joint << ',' << e.rec << ',' << e.adv_g << ',' << e.disc << '\n';
}

Checkpoint run_train_inpainter(const fs::path& manifest_path, const RunConfig& cfg, const fs::path& out_checkpoint,
                               const fs::path& loss_log, const LogFn& log) {
    cfg.validate();
    const Manifest manifest = read_manifest(manifest_path);
    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    const int size = tc.arch_spec().input_size;

    std::vector<TrainSample> data;
    for (const auto& r : manifest.records) {
        if (r.mask_path.empty())
            continue;
        ImageRGB img = load_image(manifest.resolve(r.image_path));
        BinaryMask mask = load_mask(manifest.resolve(r.mask_path));
        if (img.height() != mask.height() || img.width() != mask.width())
            throw Error(Errc::DimMismatch, "mask and image differ in size for " + r.key());
        if (r.rotation != 0) {
            img = rotate_ccw(img, r.rotation / 90);
            mask = rotate_ccw(mask, r.rotation / 90);
        }
        data.push_back({fit_square(img, size), fit_square(mask, size)});
    }
    if (data.empty())
        throw Error(Errc::DataEmpty, "manifest has no records with masks: " + manifest_path.string());
    emit(log, "training " + tc.arch + " inpainter on " + std::to_string(data.size()) + " samples");

    Checkpoint ckpt = train_inpainter(data, tc, [&](const EpochLoss& e) {
        std::ostringstream os;
        os << "epoch " << e.epoch << " joint " << e.joint << " rec " << e.rec << " adv_g " << e.adv_g << " disc "
           << e.disc;
        emit(log, os.str());
    });
    ckpt.run_config_json = cfg.to_json();
    save_checkpoint(ckpt, out_checkpoint);
    if (!loss_log.empty())
        write_loss_log(ckpt.history, loss_log);
    return ckpt;
}

// ---- metric ---------------------------------------------------------------------------

namespace {

ScoringConfig scoring_for(const RunConfig& cfg, const ArchSpec& arch) {
    ScoringConfig s;
    s.patch_size = cfg.patch_size > 0 ? cfg.patch_size : arch.input_size;
    s.stride = cfg.stride > 0 ? cfg.stride : s.patch_size / 2;
    s.selector = parse_selector(cfg.selector);
    if (s.patch_size != arch.input_size)
        throw Error(Errc::InvalidParam, "patch_size must equal the discriminator input size (" +
                                            std::to_string(arch.input_size) + ")");
    return s;
}

ImageRGB load_record_image(const Manifest& m, const ManifestRecord& r) {
    ImageRGB img = load_image(m.resolve(r.image_path));
    return r.rotation != 0 ? rotate_ccw(img, r.rotation / 90) : img;
}

/// Discriminator read-outs for the given records; workers own a network each.
std::vector<PatchScores> score_records(const ArchSpec& arch, const nn::NamedTensors& weights, const Manifest& m,
                                       const RecordIds& ids, const ScoringConfig& sc, int jobs) {
    std::vector<PatchScores> out(ids.size());
    const int n_chunks = std::clamp(jobs, 1, std::max<int>(1, static_cast<int>(ids.size())));
    detail::parallel_for(n_chunks, n_chunks, [&](int chunk) {
        Discriminator<float> disc(arch);
        nn::import_weights(disc.net(), weights, "");
        for (std::size_t i = static_cast<std::size_t>(chunk); i < ids.size(); i += static_cast<std::size_t>(n_chunks)) {
            const ImageRGB img = load_record_image(m, m.records[ids[i]]);
            const PatchSet set = extract_patches(img, sc.patch_size, sc.stride);
            out[i] = score_patches(disc, set.patches);
        }
    });
    return out;
}

} // namespace

TrainedMetric build_metric(const Checkpoint& ckpt, const std::string& checkpoint_ref, const Manifest& manifest,
                           const RunConfig& cfg, bool whole_manifest, const LogFn& log) {
    cfg.validate();
    if (manifest.empty())
        throw Error(Errc::EmptyManifest, "no records to build the metric from");
    RecordIds ids;
    if (whole_manifest) {
        for (std::size_t i = 0; i < manifest.size(); ++i)
            ids.push_back(i);
    } else {
        ids = make_split(manifest, cfg.seed).validation_ids;
    }

    TrainedMetric tm;
    tm.checkpoint_ref = checkpoint_ref;
    tm.arch = ckpt.arch;
    tm.discriminator = ckpt.discriminator;
    tm.scoring = scoring_for(cfg, tm.arch);
    tm.config_json = cfg.to_json();

    emit(log, "scoring patches of " + std::to_string(ids.size()) + " records");
    const auto scores = score_records(tm.arch, tm.discriminator, manifest, ids, tm.scoring, cfg.jobs);

    std::vector<double> logits;
    std::vector<FeatureVector> feats;
    for (const auto& s : scores) {
        logits.insert(logits.end(), s.logits.begin(), s.logits.end());
        feats.insert(feats.end(), s.features.begin(), s.features.end());
    }
    tm.norm = fit_logit_norm(logits);

    KMeansOptions ko;
    ko.k = cfg.codebook_k;
    ko.seed = cfg.seed;
    ko.max_iters = cfg.kmeans_iters;
    ko.tol = cfg.kmeans_tol;
    emit(log, "clustering " + std::to_string(feats.size()) + " patch features into " + std::to_string(ko.k) + " words");
    KMeansReport kr;
    tm.codebook = build_codebook(feats, ko, &kr, tm.arch.name);
    feats.clear();
    feats.shrink_to_fit();

    std::vector<std::vector<double>> hist(manifest.size());
    std::vector<double> targets(manifest.size(), 0.0);
    std::vector<std::vector<double>> x;
    std::vector<double> y;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const Histogram h = encode_histogram(scores[i], tm.codebook, tm.norm, tm.scoring.selector);
        hist[ids[i]] = h.mu;
        targets[ids[i]] = manifest.records[ids[i]].dmos;
        x.push_back(h.mu);
        y.push_back(manifest.records[ids[i]].dmos);
    }

    SvrParams params;
    params.c = cfg.svr_c;
    params.tube_epsilon = cfg.svr_tube;
    if (cfg.svr_grid) {
        try {
            const GridChoice g =
                select_svr_params(CvData{hist, targets, &manifest.records, ids}, SvrGrid{}, cfg.grid_folds, cfg.seed,
                                  params, cfg.jobs);
            params = g.params;
            std::ostringstream os;
            os << "grid search picked C=" << params.c << " tube=" << params.tube_epsilon
               << " (median PCC " << g.median_pcc << ")";
            emit(log, os.str());
        } catch (const Error& e) {
            if (e.code() != Errc::InfeasibleSplit && e.code() != Errc::TooFewSamples)
                throw;
            emit(log, std::string("grid search not possible, keeping defaults: ") + e.what());
        }
    }
    tm.svr = train_svr(x, y, params);
    tm.validate();
    return tm;
}

std::vector<Histogram> manifest_histograms(const TrainedMetric& tm, const Manifest& manifest, int jobs) {
    tm.validate();
    RecordIds ids(manifest.size());
    for (std::size_t i = 0; i < ids.size(); ++i)
        ids[i] = i;
    const auto scores = score_records(tm.arch, tm.discriminator, manifest, ids, tm.scoring, jobs);
    std::vector<Histogram> out;
    out.reserve(scores.size());
    for (const auto& s : scores)
        out.push_back(encode_histogram(s, tm.codebook, tm.norm, tm.scoring.selector));
    return out;
}

std::vector<ScoredItem> score_manifest(const TrainedMetric& tm, const Manifest& manifest, int jobs) {
    const auto hists = manifest_histograms(tm, manifest, jobs);
    std::vector<ScoredItem> out;
    for (std::size_t i = 0; i < hists.size(); ++i)
        out.push_back({manifest.records[i].image_path, manifest.records[i].key(), predict(tm.svr, hists[i])});
    return out;
}

void write_score_lines(std::span<const ScoredItem> items, std::ostream& out) {
    const auto flags = out.flags();
    const auto prec = out.precision();
    out << std::setprecision(17);
    for (const auto& it : items)
        out << it.path << ' ' << it.score << '\n';
    out.flags(flags);
    out.precision(prec);
}

// ---- evaluation -------------------------------------------------------------------------

EvaluationResult run_evaluate(const TrainedMetric& tm, const Manifest& manifest, const RunConfig& cfg,
                              bool whole_manifest, std::span<const ScoreRow> external, const LogFn& log) {
    cfg.validate();
    if (manifest.empty())
        throw Error(Errc::EmptyManifest, "no records to evaluate");
    RecordIds ids;
    if (whole_manifest) {
        for (std::size_t i = 0; i < manifest.size(); ++i)
            ids.push_back(i);
    } else {
        ids = make_split(manifest, cfg.seed).eval_ids;
    }

    emit(log, "encoding " + std::to_string(manifest.size()) + " records");
    const auto hists = manifest_histograms(tm, manifest, cfg.jobs);
    std::vector<std::vector<double>> feats;
    std::vector<double> targets;
    for (std::size_t i = 0; i < hists.size(); ++i) {
        feats.push_back(hists[i].mu);
        targets.push_back(manifest.records[i].dmos);
    }
    SvrParams params;
    params.c = tm.svr.c;
    params.tube_epsilon = tm.svr.tube_epsilon;

    EvaluationResult res;
    const CvData data{feats, targets, &manifest.records, ids};
    emit(log, "cross-validating over " + std::to_string(cfg.n_folds) + " folds");
    res.report = cross_validate(data, cfg.n_folds, cfg.seed, params, cfg.jobs);
    res.report.config_json = cfg.to_json();

    std::vector<AlgorithmScore> pred, truth;
    for (std::size_t id : ids) {
        pred.push_back({manifest.records[id].algorithm_id, predict(tm.svr, feats[id])});
        truth.push_back({manifest.records[id].algorithm_id, targets[id]});
    }
    res.predicted_ranking = rank_algorithms(pred, Better::Lower);
    res.ground_truth_ranking = rank_algorithms(truth, Better::Lower);
    if (res.predicted_ranking.size() >= 2) {
        std::vector<std::string> a, b;
        for (const auto& e : res.predicted_ranking)
            a.push_back(e.algorithm);
        for (const auto& e : res.ground_truth_ranking)
            b.push_back(e.algorithm);
        res.ranking_tau = kendall_tau(a, b);
    } else {
        res.ranking_tau = std::numeric_limits<double>::quiet_NaN();
    }

    // per-fold |PCC| of every metric, on identical folds
    res.compared_metrics.push_back(cfg.metric_name);
    std::vector<double> ours;
    for (const auto& f : res.report.folds)
        if (!std::isnan(f.pcc))
            ours.push_back(std::fabs(f.pcc));
    res.fold_pccs.push_back(ours);
    if (!external.empty()) {
        std::map<std::string, std::map<std::string, double>> by_metric;
        for (const auto& row : external)
            by_metric[row.metric][row.key] = row.score;
        const auto folds = make_folds(ids, manifest.records, cfg.n_folds, cfg.seed);
        for (const auto& [name, table] : by_metric) {
            std::vector<double> samples;
            for (const auto& fold : folds) {
                std::vector<double> s, t;
                for (std::size_t id : fold.test_ids) {
                    const auto it = table.find(manifest.records[id].key());
                    if (it == table.end())
                        throw Error(Errc::FormatError,
                                    "scores for '" + name + "' lack record " + manifest.records[id].key());
                    s.push_back(it->second);
                    t.push_back(targets[id]);
                }
                try {
                    samples.push_back(std::fabs(pcc(s, t)));
                } catch (const Error& e) {
                    if (e.code() != Errc::ZeroVariance && e.code() != Errc::LengthMismatch)
                        throw;
                }
            }
            res.compared_metrics.push_back(name);
            res.fold_pccs.push_back(std::move(samples));
        }
        res.significance = significance_matrix(res.compared_metrics, res.fold_pccs, cfg.alpha,
                                               cfg.ttest == "pooled" ? TTest::Pooled : TTest::Welch);
    }
    return res;
}

std::string evaluation_json(const EvaluationResult& r, const RunConfig& cfg) {
    json j = json::parse(eval_report_json(r.report));
    auto ranking = [](const std::vector<RankEntry>& v) {
        json a = json::array();
        for (const auto& e : v)
            a.push_back({{"algorithm", e.algorithm}, {"mean", e.mean}, {"count", e.count}});
        return a;
    };
    j["metric_name"] = cfg.metric_name;
    j["predicted_ranking"] = ranking(r.predicted_ranking);
    j["ground_truth_ranking"] = ranking(r.ground_truth_ranking);
    j["ranking_kendall_tau"] = r.ranking_tau;
    if (r.compared_metrics.size() > 1)
        j["significance"] = json::parse(significance_json(r.significance));
    return j.dump(2) + "\n";
}

// ---- benchmark ----------------------------------------------------------------------------

BenchmarkResult run_benchmark(const TrainedMetric& tm, const Manifest& manifest, int repeats) {
    if (manifest.empty())
        throw Error(Errc::EmptyManifest, "no images to time");
    require(repeats >= 1, "repeats must be >= 1");
    std::vector<ImageRGB> images;
    for (const auto& r : manifest.records)
        images.push_back(load_record_image(manifest, r));

    using clock = std::chrono::steady_clock;
    volatile double sink = 0.0;
    const auto t0 = clock::now();
    for (int rep = 0; rep < repeats; ++rep)
        for (const auto& img : images) {
            const double p = psnr(img, img);
            sink = sink + (std::isinf(p) ? 0.0 : p);
        }
    const auto t1 = clock::now();
    MetricScorer scorer(tm);
    for (int rep = 0; rep < repeats; ++rep)
        for (const auto& img : images)
            sink = sink + scorer.score(img);
    const auto t2 = clock::now();

    BenchmarkResult b;
    b.n_images = images.size();
    b.repeats = repeats;
    b.psnr_wall = std::chrono::duration<double>(t1 - t0).count();
    b.metric_wall = std::chrono::duration<double>(t2 - t1).count();
    const double n = static_cast<double>(images.size()) * repeats;
    b.psnr_seconds = b.psnr_wall / n;
    b.metric_seconds = b.metric_wall / n;
    b.normalized = normalized_time(b.metric_seconds, b.psnr_seconds);
    return b;
}

std::string benchmark_json(const BenchmarkResult& r, const RunConfig& cfg) {
    json j;
    j["schema_version"] = 1;
    j["kind"] = "benchmark";
    j["n_images"] = r.n_images;
    j["repeats"] = r.repeats;
    j["psnr_seconds_per_image"] = r.psnr_seconds;
    j["metric_seconds_per_image"] = r.metric_seconds;
    j["psnr_wall_seconds"] = r.psnr_wall;
    j["metric_wall_seconds"] = r.metric_wall;
    j["normalized_time"] = r.normalized;
    j["reference_psnr_seconds"] = kReferencePsnrSeconds;
    j["config"] = json::parse(cfg.to_json());
    return j.dump(2) + "\n";
}

// ---- inpainting quality -----------------------------------------------------------------

InpaintEvalResult run_inpaint_eval(const Checkpoint& ckpt, const Manifest& manifest, const LogFn& log) {
    Inpainter painter(ckpt);
    InpaintEvalResult res;
    double sum_h = 0.0, sum_i = 0.0;
    for (const auto& r : manifest.records) {
        if (r.mask_path.empty())
            continue;
        ImageRGB img = load_record_image(manifest, r);
        BinaryMask mask = load_mask(manifest.resolve(r.mask_path));
        if (r.rotation != 0)
            mask = rotate_ccw(mask, r.rotation / 90);
        const ImageRGB holes = punch_holes(img, mask);
        const ImageRGB filled = painter.inpaint(img, mask);
        res.keys.push_back(r.key());
        res.psnr_holes.push_back(psnr(img, holes));
        res.psnr_inpainted.push_back(psnr(img, filled));
        sum_h += res.psnr_holes.back();
        sum_i += res.psnr_inpainted.back();
    }
    if (res.keys.empty())
        throw Error(Errc::DataEmpty, "manifest has no records with masks");
    res.mean_holes = sum_h / static_cast<double>(res.keys.size());
    res.mean_inpainted = sum_i / static_cast<double>(res.keys.size());
    std::ostringstream os;
    os << "mean PSNR " << res.mean_holes << " dB with holes, " << res.mean_inpainted << " dB inpainted";
    emit(log, os.str());
    return res;
}

std::string inpaint_eval_json(const InpaintEvalResult& r, const RunConfig& cfg) {
    json j;
    j["schema_version"] = 1;
    j["kind"] = "inpaint_eval";
    j["mean_psnr_holes"] = r.mean_holes;
    j["mean_psnr_inpainted"] = r.mean_inpainted;
    json rows = json::array();
    for (std::size_t i = 0; i < r.keys.size(); ++i)
        rows.push_back({{"key", r.keys[i]}, {"psnr_holes", r.psnr_holes[i]}, {"psnr_inpainted", r.psnr_inpainted[i]}});
    j["records"] = rows;
    j["config"] = json::parse(cfg.to_json());
    return j.dump(2) + "\n";
}

} // namespace dibrqa
