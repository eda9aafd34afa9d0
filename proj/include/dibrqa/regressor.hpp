#pragma once

#include "dibrqa/gan.hpp"
#include "dibrqa/patch_codec.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace dibrqa {

struct SvrParams {
    double c = 1.0;
    double tube_epsilon = 0.1;
    /// Stopping tolerance on the maximal KKT violation.
    double tolerance = 1e-9;
    long long max_iterations = 50'000'000;
};

struct SvrModel {
    std::vector<double> weights;
    double bias = 0.0;
    double c = 1.0;
    double tube_epsilon = 0.1;
};

/// Linear ε-insensitive support vector regression, solved in the dual with
/// sequential minimal optimisation (second-order working-set selection).
/// The bias is unregularised.
SvrModel train_svr(std::span<const std::vector<double>> features, std::span<const double> targets,
                   const SvrParams& params);

double predict(const SvrModel& model, std::span<const double> h);
inline double predict(const SvrModel& model, const Histogram& h) { return predict(model, h.mu); }

struct SvrGrid {
    std::vector<double> c_values{0.01, 0.1, 1.0, 10.0, 100.0, 1000.0};
    std::vector<double> tube_values{0.01, 0.1, 0.5};
};

/// Patch geometry and selection rule used at scoring time.
struct ScoringConfig {
    int patch_size = 64;
    int stride = 32;
    Selector selector = Selector::threshold(0.7);
};

/// Everything needed to score an image: discriminator weights, logit range,
/// codebook, regression model and the configuration that produced them.
struct TrainedMetric {
    static constexpr std::uint32_t kVersion = 1;

    std::string checkpoint_ref;
    ArchSpec arch;
    nn::NamedTensors discriminator;
    LogitNorm norm;
    BDWCodebook codebook;
    ScoringConfig scoring;
    SvrModel svr;
    std::string config_json = "{}"; ///< run configuration snapshot

    /// Throws DimMismatch when feature dim, K and weight length disagree.
    void validate() const;
};

/// Holds a built discriminator; not shareable between threads (each worker
/// should own one), while the TrainedMetric itself is read-only.
class MetricScorer {
public:
    explicit MetricScorer(const TrainedMetric& tm);

    PatchScores patch_scores(const ImageRGB& img);
    Histogram histogram(const ImageRGB& img);
    double score(const ImageRGB& img);

private:
    const TrainedMetric& tm_;
    Discriminator<float> disc_;
};

double score_image(const TrainedMetric& tm, const ImageRGB& img);

void save_metric(const TrainedMetric& tm, const std::filesystem::path& path);
TrainedMetric load_metric(const std::filesystem::path& path);

} // namespace dibrqa
