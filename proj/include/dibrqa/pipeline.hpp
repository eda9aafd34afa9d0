#pragma once

#include "dibrqa/dataset_io.hpp"
#include "dibrqa/eval.hpp"
#include "dibrqa/gan.hpp"
#include "dibrqa/maskgen.hpp"
#include "dibrqa/patch_codec.hpp"
#include "dibrqa/regressor.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

namespace dibrqa {

/// Every tunable of the pipeline in one place. Serialised into each artifact.
struct RunConfig {
    static constexpr int kSchemaVersion = 1;

    std::uint64_t seed = 1;
    int jobs = 1;

    // masks
    int dilation_radius = 7;
    int shift_dx = 10;
    int shift_dy = 0;
    int slic_segments = 0; ///< 0: ceil(H*W/300)
    double slic_compactness = 10.0;
    int slic_iters = 10;
    double mask3_fraction = 0.25;
    std::string mask3_size = "medium";

    // inpainter
    TrainConfig train;

    // metric
    int codebook_k = kDefaultCodebookSize;
    int kmeans_iters = 100;
    double kmeans_tol = 1e-4;
    int patch_size = 0; ///< 0: discriminator input size
    int stride = 0;     ///< 0: half the patch size
    std::string selector = "threshold:0.7";
    double svr_c = 1.0;
    double svr_tube = 0.1;
    bool svr_grid = true; ///< pick C and tube by cross-validation on the validation records
    int grid_folds = 20;

    // evaluation
    int n_folds = 1000;
    std::string ttest = "welch";
    double alpha = 0.05;
    std::string metric_name = "dibrqa";

    /// Throws InvalidParam on out-of-range values.
    void validate() const;
    std::string to_json() const;
    /// Keys present in `json` override the current values; unknown keys are
    /// rejected with InvalidParam.
    void merge_json(const std::string& json);
};

RunConfig load_run_config(const std::filesystem::path& path);

using LogFn = std::function<void(const std::string&)>;

enum class MaskType { I = 1, II = 2, III = 3 };

MaskType parse_mask_type(const std::string& text);
std::string to_string(MaskType t);

struct PrepareResult {
    Manifest manifest;
    std::set<MaskType> enabled;
    std::size_t n_images = 0;
};

/// Scans `corpus_dir` (or its JPEGImages/ subfolder) for PNG/BMP images and
/// writes one (image, mask) record per image and requested mask type. Mask I
/// and II need a class map in SegmentationClass/<stem>.png and are skipped
/// for images without one. EmptyCorpus when no image is found.
PrepareResult prepare_masks(const std::filesystem::path& corpus_dir, const std::set<MaskType>& types,
                            const std::filesystem::path& out_manifest, const RunConfig& cfg, const LogFn& log = {});

/// Centre crop to a square, then bilinear resampling to size × size.
ImageRGB fit_square(const ImageRGB& img, int size);
/// Same geometry for masks (nearest neighbour).
BinaryMask fit_square(const BinaryMask& mask, int size);

/// Trains on every manifest record that carries a mask. Writes the
/// checkpoint and, when `loss_log` is non-empty, a per-epoch CSV.
Checkpoint run_train_inpainter(const std::filesystem::path& manifest_path, const RunConfig& cfg,
                               const std::filesystem::path& out_checkpoint, const std::filesystem::path& loss_log = {},
                               const LogFn& log = {});

void write_loss_log(const std::vector<EpochLoss>& history, const std::filesystem::path& path);

/// Fits the logit range, the codebook and the regressor. The records used are
/// the manifest's validation split, or all of them with `whole_manifest`.
TrainedMetric build_metric(const Checkpoint& ckpt, const std::string& checkpoint_ref, const Manifest& manifest,
                           const RunConfig& cfg, bool whole_manifest = false, const LogFn& log = {});

/// Histograms of every record under a trained metric, in manifest order.
std::vector<Histogram> manifest_histograms(const TrainedMetric& tm, const Manifest& manifest, int jobs = 1);

struct ScoredItem {
    std::string path;
    std::string key; ///< record key, or the path for single images
    double score = 0.0;
};

std::vector<ScoredItem> score_manifest(const TrainedMetric& tm, const Manifest& manifest, int jobs = 1);
/// One `path score` line per item.
void write_score_lines(std::span<const ScoredItem> items, std::ostream& out);

struct EvaluationResult {
    EvalReport report;
    std::vector<RankEntry> predicted_ranking;   ///< by mean prediction over the eval records
    std::vector<RankEntry> ground_truth_ranking; ///< by mean DMOS
    double ranking_tau = 0.0;
    std::vector<std::string> compared_metrics; ///< ours first, then external ones
    std::vector<std::vector<double>> fold_pccs;
    SignificanceMatrix significance;
};

/// Cross-validates the regressor on the eval split of `manifest` (or every
/// record with `whole_manifest`) using the bundle's histograms. External
/// scores, keyed by record key, join the significance test.
EvaluationResult run_evaluate(const TrainedMetric& tm, const Manifest& manifest, const RunConfig& cfg,
                              bool whole_manifest = false, std::span<const ScoreRow> external = {},
                              const LogFn& log = {});

std::string evaluation_json(const EvaluationResult& r, const RunConfig& cfg);

struct BenchmarkResult {
    std::size_t n_images = 0;
    int repeats = 0;
    double psnr_seconds = 0.0;   ///< mean per image
    double metric_seconds = 0.0; ///< mean per image
    double psnr_wall = 0.0;      ///< total
    double metric_wall = 0.0;
    double normalized = 0.0;
};

/// Times PSNR against the metric on the same images (PSNR compares each
/// image with itself, which costs the same as with a reference).
BenchmarkResult run_benchmark(const TrainedMetric& tm, const Manifest& manifest, int repeats = 3);
std::string benchmark_json(const BenchmarkResult& r, const RunConfig& cfg);

struct InpaintEvalResult {
    std::vector<std::string> keys;
    std::vector<double> psnr_holes;     ///< PSNR of the punched input
    std::vector<double> psnr_inpainted; ///< PSNR after inpainting
    double mean_holes = 0.0;
    double mean_inpainted = 0.0;
};

/// For every masked record: punch, inpaint, compare with the original.
InpaintEvalResult run_inpaint_eval(const Checkpoint& ckpt, const Manifest& manifest, const LogFn& log = {});
std::string inpaint_eval_json(const InpaintEvalResult& r, const RunConfig& cfg);

} // namespace dibrqa
