#pragma once

#include "dibrqa/gan.hpp"
#include "dibrqa/image.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace dibrqa {

/// Overlapping patch layout; stride is half the patch size.
struct PatchGrid {
    int patch_size = 0;
    int stride = 0;
    std::vector<int> row_anchors;
    std::vector<int> col_anchors;

    std::size_t count() const noexcept { return row_anchors.size() * col_anchors.size(); }
    std::vector<std::pair<int, int>> anchors() const;
};

/// Anchors at multiples of `stride`, plus one flush with the far border when
/// (extent - patch_size) is not a stride multiple. ImageTooSmall if either
/// dimension is below the patch size.
PatchGrid make_patch_grid(int height, int width, int patch_size, int stride);

struct PatchSet {
    PatchGrid grid;
    std::vector<ImageRGB> patches; ///< row-major over anchors
};

PatchSet extract_patches(const ImageRGB& img, int patch_size, int stride);

using FeatureVector = std::vector<float>;

/// Discriminator read-outs for a set of patches.
struct PatchScores {
    std::vector<FeatureVector> features; ///< penultimate activations, flattened (C, 4, 4)
    std::vector<double> logits;          ///< final convolution output, pre-sigmoid
};

/// Runs patches through the discriminator in batches.
PatchScores score_patches(Discriminator<float>& disc, std::span<const ImageRGB> patches, int batch_size = 32);

FeatureVector features(Discriminator<float>& disc, const ImageRGB& patch);

/// 1 ("real") when the sigmoid output is >= 0.5, else 0 ("generated").
int disc_boolean(double logit) noexcept;
int disc_boolean(Discriminator<float>& disc, const ImageRGB& patch);

struct LogitNorm {
    double min_logit = 0.0;
    double max_logit = 1.0;
};

/// Min/max over the population; DegenerateRange when all logits are equal.
LogitNorm fit_logit_norm(std::span<const double> logits);
/// Affine map min→0, max→1, clamped to [0,1].
double normalize(const LogitNorm& norm, double logit) noexcept;

constexpr int kDefaultCodebookSize = 160;

struct BDWCodebook {
    static constexpr std::uint32_t kVersion = 1;

    int k = 0;
    int dim = 0;
    std::string arch = "D1";
    std::uint64_t seed = 0;
    std::vector<float> centroids; ///< row-major K × dim

    std::span<const float> centroid(int i) const {
        return {centroids.data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)};
    }
};

struct KMeansOptions {
    int k = kDefaultCodebookSize;
    std::uint64_t seed = 0;
    int max_iters = 100;
    double tol = 1e-4;
};

struct KMeansReport {
    std::vector<double> inertia_history; ///< after each assignment step
    std::vector<int> assignments;        ///< final, against the stored centroids
    int iterations = 0;
};

/// Lloyd iterations from k-means++ seeds, Euclidean metric. Stops after
/// max_iters or once every centroid moves less than tol. TooFewSamples when
/// there are fewer distinct features than K.
BDWCodebook build_codebook(std::span<const FeatureVector> features, const KMeansOptions& opts,
                           KMeansReport* report = nullptr, const std::string& arch = "D1");

/// Nearest centroid; ties go to the lowest index.
int assign(const BDWCodebook& cb, std::span<const float> v);

struct Selector {
    enum class Mode { All, Boolean, Threshold };
    Mode mode = Mode::Threshold;
    double epsilon = 0.7;

    static Selector all() { return {Mode::All, 0.0}; }
    static Selector boolean() { return {Mode::Boolean, 0.0}; }
    static Selector threshold(double eps = 0.7) { return {Mode::Threshold, eps}; }
};

std::string to_string(const Selector& s);
Selector parse_selector(const std::string& text);

struct Histogram {
    std::vector<double> mu; ///< per-word frequency, selected count / n_p
    int n_patches = 0;
    int n_selected = 0;
};

/// Whether a patch with this logit enters the histogram.
bool is_selected(const Selector& sel, const LogitNorm& norm, double logit) noexcept;

/// Word histogram from pre-computed discriminator read-outs.
Histogram encode_histogram(const PatchScores& scores, const BDWCodebook& cb, const LogitNorm& norm,
                           const Selector& sel);
/// Same, from cluster indices and logits directly.
Histogram encode_histogram(std::span<const int> clusters, std::span<const double> logits, int k,
                           const LogitNorm& norm, const Selector& sel);

void save_codebook(const BDWCodebook& cb, const std::filesystem::path& path);
BDWCodebook load_codebook(const std::filesystem::path& path);
void write_codebook(const BDWCodebook& cb, std::ostream& out);
BDWCodebook read_codebook(std::istream& in);

/// `key,mu_0,...,mu_{K-1}` with a header row.
void write_histograms_csv(std::span<const std::string> keys, std::span<const Histogram> hists,
                          const std::filesystem::path& path);
std::vector<std::pair<std::string, Histogram>> read_histograms_csv(const std::filesystem::path& path);

} // namespace dibrqa
