#include "dibrqa/patch_codec.hpp"

#include "dibrqa/error.hpp"
#include "serialization.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <set>
#include <sstream>

namespace dibrqa {

// ---- patches ---------------------------------------------------------------------

std::vector<std::pair<int, int>> PatchGrid::anchors() const {
    std::vector<std::pair<int, int>> out;
    out.reserve(count());
    for (int r : row_anchors)
        for (int c : col_anchors)
            out.emplace_back(r, c);
    return out;
}

namespace {

std::vector<int> axis_anchors(int extent, int patch_size, int stride) {
    std::vector<int> a;
    for (int p = 0; p + patch_size <= extent; p += stride)
        a.push_back(p);
    if (a.back() != extent - patch_size)
        a.push_back(extent - patch_size);
    return a;
}

} // namespace

PatchGrid make_patch_grid(int height, int width, int patch_size, int stride) {
    if (patch_size < 1 || stride < 1)
        throw Error(Errc::InvalidParam, "patch size and stride must be positive");
    if (height < patch_size || width < patch_size)
        throw Error(Errc::ImageTooSmall, std::to_string(height) + "x" + std::to_string(width) +
                                             " image is smaller than a " + std::to_string(patch_size) + " px patch");
    return {patch_size, stride, axis_anchors(height, patch_size, stride), axis_anchors(width, patch_size, stride)};
}

PatchSet extract_patches(const ImageRGB& img, int patch_size, int stride) {
    PatchSet set{make_patch_grid(img.height(), img.width(), patch_size, stride), {}};
    set.patches.reserve(set.grid.count());
    for (auto [r0, c0] : set.grid.anchors()) {
        ImageRGB patch(patch_size, patch_size);
        for (int r = 0; r < patch_size; ++r) {
            const float* src = img.data().data() + (static_cast<std::size_t>(r0 + r) * img.width() + c0) * 3;
            std::copy_n(src, static_cast<std::size_t>(patch_size) * 3,
                        patch.data().data() + static_cast<std::size_t>(r) * patch_size * 3);
        }
        set.patches.push_back(std::move(patch));
    }
    return set;
}

// ---- discriminator read-outs ---------------------------------------------------------

PatchScores score_patches(Discriminator<float>& disc, std::span<const ImageRGB> patches, int batch_size) {
    if (batch_size < 1)
        throw Error(Errc::InvalidParam, "batch size must be positive");
    PatchScores out;
    out.features.reserve(patches.size());
    out.logits.reserve(patches.size());
    for (std::size_t start = 0; start < patches.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t n = std::min(patches.size() - start, static_cast<std::size_t>(batch_size));
        for (std::size_t i = start; i < start + n; ++i)
            disc.check_input({3, 1, patches[i].height(), patches[i].width()});
        const auto res = disc.forward_features(nn::pack_images<float>(patches.subspan(start, n)));
        const nn::Shape& fs = res.features.shape;
        const std::size_t dim = static_cast<std::size_t>(fs.c) * fs.h * fs.w;
        for (int b = 0; b < static_cast<int>(n); ++b) {
            FeatureVector v(dim);
            std::size_t j = 0;
            for (int c = 0; c < fs.c; ++c)
                for (int y = 0; y < fs.h; ++y)
                    for (int x = 0; x < fs.w; ++x)
                        v[j++] = res.features.at(c, b, y, x);
            out.features.push_back(std::move(v));
            out.logits.push_back(static_cast<double>(res.logits[static_cast<std::size_t>(b)]));
        }
    }
    return out;
}

FeatureVector features(Discriminator<float>& disc, const ImageRGB& patch) {
    auto scores = score_patches(disc, std::span(&patch, 1));
    return std::move(scores.features.front());
}

int disc_boolean(double logit) noexcept { return sigmoid(logit) >= 0.5 ? 1 : 0; }

int disc_boolean(Discriminator<float>& disc, const ImageRGB& patch) {
    return disc_boolean(score_patches(disc, std::span(&patch, 1)).logits.front());
}

// ---- logit normalisation ---------------------------------------------------------------

LogitNorm fit_logit_norm(std::span<const double> logits) {
    if (logits.size() < 2)
        throw Error(Errc::DegenerateRange, "need at least two logits to fit a range");
    const auto [lo, hi] = std::minmax_element(logits.begin(), logits.end());
    if (!(*hi > *lo))
        throw Error(Errc::DegenerateRange, "all logits are equal");
    return {*lo, *hi};
}

double normalize(const LogitNorm& norm, double logit) noexcept {
    const double t = (logit - norm.min_logit) / (norm.max_logit - norm.min_logit);
    return std::clamp(t, 0.0, 1.0);
}

// ---- codebook ----------------------------------------------------------------------------

namespace {

using RowMatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Nearest centroid (squared distance, lowest index on ties) for every row of
// `data`. Works in blocks of samples so each centroid row is reused from cache
// instead of streaming the whole codebook once per sample.
void assign_all(const RowMatD& data, const RowMatD& centroids, std::vector<int>& labels, std::vector<double>& dist) {
    constexpr Eigen::Index kBlock = 32;
    const Eigen::Index n = data.rows();
    for (Eigen::Index i0 = 0; i0 < n; i0 += kBlock) {
        const Eigen::Index i1 = std::min(n, i0 + kBlock);
        for (Eigen::Index k = 0; k < centroids.rows(); ++k)
            for (Eigen::Index i = i0; i < i1; ++i) {
                const double d = (centroids.row(k) - data.row(i)).squaredNorm();
                auto& best = dist[static_cast<std::size_t>(i)];
                if (k == 0 || d < best) {
                    best = d;
                    labels[static_cast<std::size_t>(i)] = static_cast<int>(k);
                }
            }
    }
}

} // namespace

BDWCodebook build_codebook(std::span<const FeatureVector> features, const KMeansOptions& opts, KMeansReport* report,
                           const std::string& arch) {
    if (opts.k < 2)
        throw Error(Errc::InvalidParam, "codebook needs K >= 2");
    if (opts.max_iters < 1 || !(opts.tol >= 0.0))
        throw Error(Errc::InvalidParam, "max_iters must be >= 1 and tol >= 0");
    if (features.size() < static_cast<std::size_t>(opts.k))
        throw Error(Errc::TooFewSamples, std::to_string(features.size()) + " features for K=" + std::to_string(opts.k));
    const int n = static_cast<int>(features.size());
    const int dim = static_cast<int>(features.front().size());
    if (dim < 1)
        throw Error(Errc::InvalidParam, "empty feature vectors");

    RowMatD data(n, dim);
    for (int i = 0; i < n; ++i) {
        if (static_cast<int>(features[static_cast<std::size_t>(i)].size()) != dim)
            throw Error(Errc::DimMismatch, "feature vectors differ in length");
        for (int j = 0; j < dim; ++j)
            data(i, j) = features[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }

    // k-means++ seeding
    std::mt19937_64 rng(opts.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    RowMatD centroids(opts.k, dim);
    std::uniform_int_distribution<int> pick(0, n - 1);
    centroids.row(0) = data.row(pick(rng));
    Eigen::VectorXd closest = (data.rowwise() - centroids.row(0)).rowwise().squaredNorm();
    for (int k = 1; k < opts.k; ++k) {
        const double total = closest.sum();
        if (!(total > 0.0))
            throw Error(Errc::TooFewSamples, "fewer distinct features than K=" + std::to_string(opts.k));
        const double target = unit(rng) * total;
        double acc = 0.0;
        int chosen = -1;
        for (int i = 0; i < n; ++i) {
            if (closest[i] <= 0.0)
                continue;
            acc += closest[i];
            chosen = i;
            if (acc >= target)
                break;
        }
        centroids.row(k) = data.row(chosen);
        closest = closest.cwiseMin((data.rowwise() - centroids.row(k)).rowwise().squaredNorm());
    }

    KMeansReport local;
    KMeansReport& rep = report ? *report : local;
    rep = {};
    std::vector<int> labels(static_cast<std::size_t>(n), -1);
    std::vector<double> dist(static_cast<std::size_t>(n));
    for (int iter = 0; iter < opts.max_iters; ++iter) {
        assign_all(data, centroids, labels, dist);
        double inertia = 0.0;
        for (double d : dist)
            inertia += d;
        rep.inertia_history.push_back(inertia);
        rep.iterations = iter + 1;

        RowMatD sums = RowMatD::Zero(opts.k, dim);
        std::vector<int> counts(static_cast<std::size_t>(opts.k), 0);
        for (int i = 0; i < n; ++i) {
            sums.row(labels[static_cast<std::size_t>(i)]) += data.row(i);
            ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
        }
        std::vector<char> taken(static_cast<std::size_t>(n), 0);
        double max_shift = 0.0;
        for (int k = 0; k < opts.k; ++k) {
            Eigen::RowVectorXd next;
            if (counts[static_cast<std::size_t>(k)] > 0) {
                next = sums.row(k) / counts[static_cast<std::size_t>(k)];
            } else {
                // empty cluster: move it onto the worst-served sample
                int worst = -1;
                for (int i = 0; i < n; ++i)
                    if (!taken[static_cast<std::size_t>(i)] && (worst < 0 || dist[static_cast<std::size_t>(i)] > dist[static_cast<std::size_t>(worst)]))
                        worst = i;
                taken[static_cast<std::size_t>(worst)] = 1;
                dist[static_cast<std::size_t>(worst)] = 0.0;
                next = data.row(worst);
            }
            max_shift = std::max(max_shift, (next - centroids.row(k)).norm());
            centroids.row(k) = next;
        }
        if (max_shift < opts.tol)
            break;
    }

    BDWCodebook cb;
    cb.k = opts.k;
    cb.dim = dim;
    cb.arch = arch;
    cb.seed = opts.seed;
    cb.centroids.resize(static_cast<std::size_t>(opts.k) * dim);
    for (int k = 0; k < opts.k; ++k)
        for (int j = 0; j < dim; ++j)
            cb.centroids[static_cast<std::size_t>(k) * dim + j] = static_cast<float>(centroids(k, j));

    std::set<std::vector<float>> distinct;
    for (int k = 0; k < opts.k; ++k) {
        auto c = cb.centroid(k);
        distinct.emplace(c.begin(), c.end());
    }
    if (static_cast<int>(distinct.size()) != opts.k)
        throw Error(Errc::TooFewSamples, "codebook collapsed to fewer than K distinct centroids");

    rep.assignments.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        rep.assignments[static_cast<std::size_t>(i)] = assign(cb, features[static_cast<std::size_t>(i)]);
    return cb;
}

int assign(const BDWCodebook& cb, std::span<const float> v) {
    if (static_cast<int>(v.size()) != cb.dim)
        throw Error(Errc::DimMismatch, "feature dim " + std::to_string(v.size()) + " vs codebook dim " + std::to_string(cb.dim));
    int best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (int k = 0; k < cb.k; ++k) {
        const float* c = cb.centroids.data() + static_cast<std::size_t>(k) * cb.dim;
        double d = 0.0;
        for (int j = 0; j < cb.dim; ++j) {
            const double diff = static_cast<double>(v[static_cast<std::size_t>(j)]) - static_cast<double>(c[j]);
            d += diff * diff;
        }
        if (d < best_dist) {
            best_dist = d;
            best = k;
        }
    }
    return best;
}

// ---- histograms --------------------------------------------------------------------------

std::string to_string(const Selector& s) {
    switch (s.mode) {
    case Selector::Mode::All: return "all";
    case Selector::Mode::Boolean: return "boolean";
    case Selector::Mode::Threshold: {
        std::ostringstream os;
        os << "threshold:" << std::setprecision(17) << s.epsilon;
        return os.str();
    }
    }
    return "unknown";
}

Selector parse_selector(const std::string& text) {
    if (text == "all")
        return Selector::all();
    if (text == "boolean")
        return Selector::boolean();
    if (text == "threshold")
        return Selector::threshold();
    if (text.rfind("threshold:", 0) == 0) {
        try {
            return Selector::threshold(std::stod(text.substr(10)));
        } catch (const std::exception&) {
        }
    }
    throw Error(Errc::InvalidParam, "selector must be all, boolean, threshold or threshold:<eps>, got '" + text + "'");
}

bool is_selected(const Selector& sel, const LogitNorm& norm, double logit) noexcept {
    switch (sel.mode) {
    case Selector::Mode::All: return true;
    case Selector::Mode::Boolean: return disc_boolean(logit) == 0;
    case Selector::Mode::Threshold: return normalize(norm, logit) < sel.epsilon;
    }
    return false;
}

Histogram encode_histogram(std::span<const int> clusters, std::span<const double> logits, int k, const LogitNorm& norm,
                           const Selector& sel) {
    if (clusters.empty())
        throw Error(Errc::EmptyPatchSet, "image produced no patches");
    if (clusters.size() != logits.size())
        throw Error(Errc::DimMismatch, "cluster and logit counts differ");
    Histogram h;
    h.mu.assign(static_cast<std::size_t>(k), 0.0);
    h.n_patches = static_cast<int>(clusters.size());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t j = 0; j < clusters.size(); ++j) {
        if (clusters[j] < 0 || clusters[j] >= k)
            throw Error(Errc::DimMismatch, "cluster index out of range");
        if (is_selected(sel, norm, logits[j])) {
            ++counts[static_cast<std::size_t>(clusters[j])];
            ++h.n_selected;
        }
    }
    for (int i = 0; i < k; ++i)
        h.mu[static_cast<std::size_t>(i)] = static_cast<double>(counts[static_cast<std::size_t>(i)]) / h.n_patches;
    return h;
}

Histogram encode_histogram(const PatchScores& scores, const BDWCodebook& cb, const LogitNorm& norm,
                           const Selector& sel) {
    std::vector<int> clusters;
    clusters.reserve(scores.features.size());
    for (const auto& f : scores.features)
        clusters.push_back(assign(cb, f));
    return encode_histogram(clusters, scores.logits, cb.k, norm, sel);
}

// ---- files -------------------------------------------------------------------------------

namespace {

constexpr char kCodebookMagic[9] = "DQACBOOK";

std::uint32_t arch_code(const std::string& arch) {
    if (arch == "D1")
        return 1;
    if (arch == "D2")
        return 2;
    if (arch == "D3")
        return 3;
    return 0;
}

std::string arch_name(std::uint32_t code) {
    switch (code) {
    case 1: return "D1";
    case 2: return "D2";
    case 3: return "D3";
    default: return "custom";
    }
}

} // namespace

void write_codebook(const BDWCodebook& cb, std::ostream& out) {
    io::write_magic(out, kCodebookMagic);
    io::write_pod<std::uint32_t>(out, BDWCodebook::kVersion);
    io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(cb.k));
    io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(cb.dim));
    io::write_pod<std::uint32_t>(out, arch_code(cb.arch));
    io::write_pod<std::uint64_t>(out, cb.seed);
    io::write_floats(out, cb.centroids);
}

BDWCodebook read_codebook(std::istream& in) {
    io::expect_magic(in, kCodebookMagic, "codebook");
    const auto version = io::read_pod<std::uint32_t>(in);
    if (version != BDWCodebook::kVersion)
        throw Error(Errc::FormatError, "unsupported codebook version " + std::to_string(version));
    BDWCodebook cb;
    cb.k = static_cast<int>(io::read_pod<std::uint32_t>(in));
    cb.dim = static_cast<int>(io::read_pod<std::uint32_t>(in));
    cb.arch = arch_name(io::read_pod<std::uint32_t>(in));
    cb.seed = io::read_pod<std::uint64_t>(in);
    if (cb.k < 2 || cb.dim < 1 || static_cast<std::uint64_t>(cb.k) * cb.dim > (std::uint64_t{1} << 30))
        throw Error(Errc::FormatError, "implausible codebook header");
    cb.centroids = io::read_floats(in, static_cast<std::size_t>(cb.k) * cb.dim);
    return cb;
}

void save_codebook(const BDWCodebook& cb, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error(Errc::InvalidParam, "cannot open for writing: " + path.string());
    write_codebook(cb, out);
}

BDWCodebook load_codebook(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(Errc::MissingFile, path.string());
    return read_codebook(in);
}

void write_histograms_csv(std::span<const std::string> keys, std::span<const Histogram> hists,
                          const std::filesystem::path& path) {
    if (keys.size() != hists.size())
        throw Error(Errc::LengthMismatch, "keys and histograms differ in count");
    std::ofstream out(path);
    if (!out)
        throw Error(Errc::InvalidParam, "cannot open for writing: " + path.string());
    const std::size_t k = hists.empty() ? 0 : hists.front().mu.size();
    out << "key";
    for (std::size_t i = 0; i < k; ++i)
        out << ",mu_" << i;
    out << '\n' << std::setprecision(17);
    for (std::size_t r = 0; r < hists.size(); ++r) {
        out << keys[r];
        for (double v : hists[r].mu)
            out << ',' << v;
        out << '\n';
    }
}

std::vector<std::pair<std::string, Histogram>> read_histograms_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw Error(Errc::MissingFile, path.string());
    std::string line;
    std::getline(in, line);
    std::vector<std::pair<std::string, Histogram>> rows;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        std::istringstream ss(line);
        std::string field;
        std::getline(ss, field, ',');
        Histogram h;
        std::string key = field;
        while (std::getline(ss, field, ','))
            h.mu.push_back(std::stod(field));
        rows.emplace_back(std::move(key), std::move(h));
    }
    return rows;
}

} // namespace dibrqa
