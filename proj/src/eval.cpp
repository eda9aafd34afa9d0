#include "dibrqa/eval.hpp"

#include "dibrqa/error.hpp"
#include "parallel.hpp"
#include "serialization.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace dibrqa {

namespace {

void check_pair(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw Error(Errc::LengthMismatch, std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    if (a.size() < 2)
        throw Error(Errc::LengthMismatch, "need at least two paired values");
}

double mean_of(std::span<const double> v) {
    double s = 0.0;
    for (double x : v)
        s += x;
    return s / static_cast<double>(v.size());
}

} // namespace

double pcc(std::span<const double> a, std::span<const double> b) {
    check_pair(a, b);
    const double ma = mean_of(a), mb = mean_of(b);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0)
        throw Error(Errc::ZeroVariance, "correlation of a constant sequence");
    const double r = sab / std::sqrt(saa * sbb);
    return std::clamp(r, -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> ranks(v.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]])
            ++j;
        const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t t = i; t <= j; ++t)
            ranks[order[t]] = r;
        i = j + 1;
    }
    return ranks;
}

double scc(std::span<const double> a, std::span<const double> b) {
    check_pair(a, b);
    const auto ra = average_ranks(a);
    const auto rb = average_ranks(b);
    return pcc(ra, rb);
}

double rmse(std::span<const double> a, std::span<const double> b) {
    check_pair(a, b);
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(a.size()));
}

double median(std::vector<double> v) {
    if (v.empty())
        throw Error(Errc::TooFewSamples, "median of an empty list");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

// ---- cross-validation -----------------------------------------------------------

namespace {

void check_cv_data(const CvData& data) {
    if (data.records == nullptr)
        throw Error(Errc::InvalidParam, "cross-validation needs manifest records");
    const std::size_t n = data.records->size();
    if (data.features.size() != n || data.targets.size() != n)
        throw Error(Errc::DimMismatch, "features and targets must be indexed like the manifest");
    for (std::size_t id : data.eval_ids)
        if (id >= n)
            throw Error(Errc::InvalidParam, "eval id out of range");
}

FoldResult run_fold(const CvData& data, const Fold& fold, int index, const SvrParams& params) {
    std::vector<std::vector<double>> x;
    std::vector<double> y;
    x.reserve(fold.train_ids.size());
    for (std::size_t id : fold.train_ids) {
        x.push_back(data.features[id]);
        y.push_back(data.targets[id]);
    }
    const SvrModel model = train_svr(x, y, params);
    std::vector<double> pred, truth;
    for (std::size_t id : fold.test_ids) {
        pred.push_back(predict(model, data.features[id]));
        truth.push_back(data.targets[id]);
    }
    FoldResult r;
    r.fold = index;
    r.n_train = fold.train_ids.size();
    r.n_test = fold.test_ids.size();
    r.rmse = rmse(pred, truth);
    try {
        r.pcc = pcc(pred, truth);
        r.scc = scc(pred, truth);
    } catch (const Error& e) {
        if (e.code() != Errc::ZeroVariance && e.code() != Errc::LengthMismatch)
            throw;
        r.pcc = r.scc = std::numeric_limits<double>::quiet_NaN();
    }
    return r;
}

} // namespace

EvalReport cross_validate(const CvData& data, int n_folds, std::uint64_t seed, const SvrParams& params, int jobs) {
    check_cv_data(data);
    if (n_folds < 1)
        throw Error(Errc::InvalidParam, "n_folds must be positive");
    const auto folds = make_folds(data.eval_ids, *data.records, n_folds, seed);

    EvalReport report;
    report.seed = seed;
    report.svr = params;
    report.folds.resize(folds.size());
    detail::parallel_for(static_cast<int>(folds.size()), jobs, [&](int i) {
        report.folds[static_cast<std::size_t>(i)] = run_fold(data, folds[static_cast<std::size_t>(i)], i, params);
    });

    std::vector<double> p, s, r;
    for (const auto& f : report.folds) {
        r.push_back(f.rmse);
        if (std::isnan(f.pcc)) {
            ++report.n_undefined;
            continue;
        }
        p.push_back(f.pcc);
        s.push_back(f.scc);
    }
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    report.median_pcc = p.empty() ? nan : median(p);
    report.median_scc = s.empty() ? nan : median(s);
    report.median_rmse = median(r);
    return report;
}

GridChoice select_svr_params(const CvData& data, const SvrGrid& grid, int n_folds, std::uint64_t seed,
                             const SvrParams& base, int jobs) {
    GridChoice best;
    bool have = false;
    for (double c : grid.c_values)
        for (double tube : grid.tube_values) {
            SvrParams p = base;
            p.c = c;
            p.tube_epsilon = tube;
            const EvalReport rep = cross_validate(data, n_folds, seed, p, jobs);
            // an undefined correlation ranks below every defined one
            const double score = std::isnan(rep.median_pcc) ? -2.0 : rep.median_pcc;
            const double best_score = std::isnan(best.median_pcc) ? -2.0 : best.median_pcc;
            if (!have || score > best_score || (score == best_score && rep.median_rmse < best.median_rmse)) {
                best = {p, rep.median_pcc, rep.median_rmse};
                have = true;
            }
        }
    if (!have)
        throw Error(Errc::InvalidParam, "empty SVR grid");
    return best;
}

// ---- significance -------------------------------------------------------------------

TTestResult t_test(std::span<const double> a, std::span<const double> b, TTest kind) {
    if (a.size() < 2 || b.size() < 2)
        throw Error(Errc::TooFewSamples, "t-test needs at least two samples per group");
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    const double ma = mean_of(a), mb = mean_of(b);
    double va = 0.0, vb = 0.0;
    for (double x : a)
        va += (x - ma) * (x - ma);
    for (double x : b)
        vb += (x - mb) * (x - mb);
    va /= na - 1.0;
    vb /= nb - 1.0;

    TTestResult r;
    double se2 = 0.0;
    if (kind == TTest::Welch) {
        se2 = va / na + vb / nb;
        const double num = se2 * se2;
        const double den = (va / na) * (va / na) / (na - 1.0) + (vb / nb) * (vb / nb) / (nb - 1.0);
        r.df = den > 0.0 ? num / den : na + nb - 2.0;
    } else {
        const double sp2 = ((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0);
        se2 = sp2 * (1.0 / na + 1.0 / nb);
        r.df = na + nb - 2.0;
    }
    const double diff = ma - mb;
    if (se2 == 0.0) {
        // both samples constant: equal means are indistinguishable, unequal ones certain
        r.t = diff == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), diff);
        r.p_two_sided = diff == 0.0 ? 1.0 : 0.0;
        return r;
    }
    r.t = diff / std::sqrt(se2);
    const boost::math::students_t dist(r.df);
    r.p_two_sided = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.t)));
    return r;
}

SignificanceMatrix significance_matrix(const std::vector<std::string>& names,
                                       const std::vector<std::vector<double>>& samples, double alpha, TTest kind) {
    if (names.size() != samples.size())
        throw Error(Errc::LengthMismatch, "one sample list per metric name");
    if (!(alpha > 0.0 && alpha < 1.0))
        throw Error(Errc::InvalidParam, "alpha must lie in (0,1)");
    for (const auto& s : samples)
        if (s.size() < 2)
            throw Error(Errc::TooFewSamples, "each metric needs at least two fold values");
    const std::size_t m = names.size();
    SignificanceMatrix out{names, std::vector<std::vector<int>>(m, std::vector<int>(m, 0)), alpha, kind};
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i + 1; j < m; ++j) {
            const TTestResult r = t_test(samples[i], samples[j], kind);
            int v = 0;
            if (r.p_two_sided < alpha)
                v = r.t > 0 ? 1 : -1;
            out.entries[i][j] = v;
            out.entries[j][i] = -v;
        }
    return out;
}

// ---- ranking --------------------------------------------------------------------------

std::vector<RankEntry> rank_algorithms(std::span<const AlgorithmScore> scores, Better better,
                                       const std::vector<std::string>& expected) {
    std::map<std::string, std::pair<double, std::size_t>> groups;
    for (const auto& name : expected)
        groups.emplace(name, std::pair{0.0, std::size_t{0}});
    for (const auto& s : scores) {
        auto& g = groups[s.algorithm];
        g.first += s.score;
        ++g.second;
    }
    if (groups.empty())
        throw Error(Errc::EmptyGroup, "no algorithms to rank");
    std::vector<RankEntry> out;
    for (const auto& [name, g] : groups) {
        if (g.second == 0)
            throw Error(Errc::EmptyGroup, "no scores for algorithm " + name);
        out.push_back({name, g.first / static_cast<double>(g.second), g.second});
    }
    std::stable_sort(out.begin(), out.end(), [better](const RankEntry& a, const RankEntry& b) {
        if (a.mean != b.mean)
            return better == Better::Higher ? a.mean > b.mean : a.mean < b.mean;
        return a.algorithm < b.algorithm;
    });
    return out;
}

double kendall_tau(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    if (a.size() != b.size())
        throw Error(Errc::LengthMismatch, "orderings differ in length");
    if (a.size() < 2)
        throw Error(Errc::LengthMismatch, "need at least two items");
    std::map<std::string, std::size_t> pos_b;
    for (std::size_t i = 0; i < b.size(); ++i)
        pos_b[b[i]] = i;
    if (pos_b.size() != b.size())
        throw Error(Errc::InvalidParam, "ordering contains duplicates");
    std::vector<std::size_t> p;
    for (const auto& item : a) {
        const auto it = pos_b.find(item);
        if (it == pos_b.end())
            throw Error(Errc::InvalidParam, "orderings contain different items");
        p.push_back(it->second);
    }
    long long concordant = 0, discordant = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
        for (std::size_t j = i + 1; j < p.size(); ++j)
            (p[i] < p[j] ? concordant : discordant)++;
    return static_cast<double>(concordant - discordant) / static_cast<double>(concordant + discordant);
}

double normalized_time(double t_metric, double t_psnr) {
    if (!(t_psnr > 0.0))
        throw Error(Errc::NonPositiveBaseline, "PSNR baseline time must be positive");
    return t_metric / t_psnr;
}

// ---- files ----------------------------------------------------------------------------

void write_scores_csv(std::span<const ScoreRow> rows, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out)
        throw Error(Errc::InvalidParam, "cannot open for writing: " + path.string());
    out << "metric_name,record_key,score\n" << std::setprecision(17);
    for (const auto& r : rows) {
        if (r.metric.find(',') != std::string::npos || r.key.find(',') != std::string::npos)
            throw Error(Errc::FormatError, "commas are not allowed in metric names or keys");
        out << r.metric << ',' << r.key << ',' << r.score << '\n';
    }
}

std::vector<ScoreRow> read_scores_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw Error(Errc::MissingFile, path.string());
    std::string line;
    if (!std::getline(in, line) || line.rfind("metric_name", 0) != 0)
        throw Error(Errc::FormatError, "scores file lacks the metric_name,record_key,score header");
    std::vector<ScoreRow> rows;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        const auto c1 = line.find(',');
        const auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
        if (c2 == std::string::npos)
            throw Error(Errc::FormatError, "line " + std::to_string(line_no) + ": expected three fields");
        ScoreRow r{line.substr(0, c1), line.substr(c1 + 1, c2 - c1 - 1), 0.0};
        try {
            std::size_t used = 0;
            const std::string num = line.substr(c2 + 1);
            r.score = std::stod(num, &used);
            if (used != num.size())
                throw std::invalid_argument(num);
        } catch (const std::exception&) {
            throw Error(Errc::FormatError, "line " + std::to_string(line_no) + ": bad score");
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

std::string eval_report_json(const EvalReport& report) {
    io::json j;
    j["schema_version"] = EvalReport::kSchemaVersion;
    j["kind"] = "eval_report";
    j["seed"] = report.seed;
    j["n_folds"] = report.folds.size();
    j["svr"] = {{"C", report.svr.c}, {"tube_epsilon", report.svr.tube_epsilon}};
    j["median_pcc"] = report.median_pcc;
    j["median_scc"] = report.median_scc;
    j["median_rmse"] = report.median_rmse;
    j["n_undefined"] = report.n_undefined;
    io::json folds = io::json::array();
    for (const auto& f : report.folds)
        folds.push_back({{"fold", f.fold},
                         {"n_train", f.n_train},
                         {"n_test", f.n_test},
                         {"pcc", f.pcc},
                         {"scc", f.scc},
                         {"rmse", f.rmse}});
    j["folds"] = std::move(folds);
    try {
        j["config"] = io::json::parse(report.config_json);
    } catch (const io::json::exception&) {
        j["config"] = report.config_json;
    }
    return j.dump(2) + "\n";
}

void write_eval_report(const EvalReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out)
        throw Error(Errc::InvalidParam, "cannot open for writing: " + path.string());
    out << eval_report_json(report);
}

std::string significance_json(const SignificanceMatrix& m) {
    io::json j;
    j["schema_version"] = 1;
    j["kind"] = "significance_matrix";
    j["alpha"] = m.alpha;
    j["test"] = m.kind == TTest::Welch ? "welch" : "pooled";
    j["names"] = m.names;
    j["entries"] = m.entries;
    return j.dump(2) + "\n";
}

} // namespace dibrqa
