#pragma once

#include "dibrqa/dataset_io.hpp"
#include "dibrqa/regressor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace dibrqa {

/// Pearson correlation. LengthMismatch on unequal or < 2 lengths,
/// ZeroVariance when either side is constant.
double pcc(std::span<const double> a, std::span<const double> b);
/// Pearson correlation of average ranks.
double scc(std::span<const double> a, std::span<const double> b);
double rmse(std::span<const double> a, std::span<const double> b);

/// 1-based ranks; tied values share the mean of the ranks they span.
std::vector<double> average_ranks(std::span<const double> v);

/// Sample median; an even count averages the two central values.
double median(std::vector<double> v);

struct FoldResult {
    int fold = 0;
    std::size_t n_train = 0;
    std::size_t n_test = 0;
    double pcc = 0.0; ///< NaN when the fold's predictions or targets are constant
    double scc = 0.0;
    double rmse = 0.0;
};

struct EvalReport {
    static constexpr int kSchemaVersion = 1;

    double median_pcc = 0.0;
    double median_scc = 0.0;
    double median_rmse = 0.0;
    std::vector<FoldResult> folds;
    int n_undefined = 0; ///< folds left out of the pcc/scc medians
    std::uint64_t seed = 0;
    SvrParams svr;
    std::string config_json = "{}";
};

/// Features and targets are indexed like `records`; only `eval_ids` are used.
struct CvData {
    std::span<const std::vector<double>> features;
    std::span<const double> targets;
    const std::vector<ManifestRecord>* records = nullptr;
    RecordIds eval_ids;
};

/// Trains on each fold's train side and tests on the other; folds never share
/// a (content, viewpoint) pair. `jobs` > 1 runs folds on worker threads, with
/// results reduced in fold order so the report does not depend on it.
EvalReport cross_validate(const CvData& data, int n_folds, std::uint64_t seed, const SvrParams& params,
                          int jobs = 1);

struct GridChoice {
    SvrParams params;
    double median_pcc = 0.0;
    double median_rmse = 0.0;
};

/// Picks (C, tube) by median PCC over `n_folds` folds, lower median RMSE
/// breaking ties, then the earlier grid entry.
GridChoice select_svr_params(const CvData& data, const SvrGrid& grid, int n_folds, std::uint64_t seed,
                             const SvrParams& base = {}, int jobs = 1);

enum class TTest { Welch, Pooled };

struct TTestResult {
    double t = 0.0;
    double df = 0.0;
    double p_two_sided = 1.0;
};

/// TooFewSamples when either sample has fewer than two values.
TTestResult t_test(std::span<const double> a, std::span<const double> b, TTest kind = TTest::Welch);

struct SignificanceMatrix {
    std::vector<std::string> names;
    std::vector<std::vector<int>> entries; ///< 1: row mean significantly greater
    double alpha = 0.05;
    TTest kind = TTest::Welch;
};

SignificanceMatrix significance_matrix(const std::vector<std::string>& names,
                                       const std::vector<std::vector<double>>& samples, double alpha = 0.05,
                                       TTest kind = TTest::Welch);

enum class Better { Higher, Lower };

struct RankEntry {
    std::string algorithm;
    double mean = 0.0;
    std::size_t count = 0;
};

struct AlgorithmScore {
    std::string algorithm;
    double score = 0.0;
};

/// Groups by algorithm, orders by mean score, best first; equal means fall
/// back to the algorithm name. Use Better::Lower for DMOS-like scales.
std::vector<RankEntry> rank_algorithms(std::span<const AlgorithmScore> scores, Better better = Better::Higher,
                                       const std::vector<std::string>& expected = {});

/// Kendall tau-a between two orderings of the same items.
double kendall_tau(const std::vector<std::string>& a, const std::vector<std::string>& b);

/// t_metric / t_psnr; NonPositiveBaseline unless t_psnr > 0.
double normalized_time(double t_metric, double t_psnr);

/// Reference PSNR runtime quoted for the original machine, in seconds.
constexpr double kReferencePsnrSeconds = 0.05;

struct ScoreRow {
    std::string metric;
    std::string key;
    double score = 0.0;
};

/// `metric_name,record_key,score` with a header row.
void write_scores_csv(std::span<const ScoreRow> rows, const std::filesystem::path& path);
std::vector<ScoreRow> read_scores_csv(const std::filesystem::path& path);

std::string eval_report_json(const EvalReport& report);
void write_eval_report(const EvalReport& report, const std::filesystem::path& path);

std::string significance_json(const SignificanceMatrix& m);

} // namespace dibrqa
