#include "dibrqa/maskgen.hpp"

#include "dibrqa/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

namespace dibrqa {

namespace {

constexpr std::array<std::pair<int, int>, 4> kNeighbors4{{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};

struct Lab {
    double l, a, b;
};

double srgb_to_linear(double v) { return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4); }

double lab_f(double t) {
    constexpr double delta = 6.0 / 29.0;
    return t > delta * delta * delta ? std::cbrt(t) : t / (3 * delta * delta) + 4.0 / 29.0;
}

// D65 white point.
Lab to_lab(double r, double g, double b) {
    r = srgb_to_linear(r);
    g = srgb_to_linear(g);
    b = srgb_to_linear(b);
    const double x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
    const double y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    const double z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;
    const double fx = lab_f(x), fy = lab_f(y), fz = lab_f(z);
    return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

struct Center {
    double l, a, b, row, col;
};

// Splits each label into 4-connected components, folds components smaller
// than `min_size` into an adjacent component, and relabels consecutively.
int enforce_connectivity(std::vector<int>& labels, int height, int width, int min_size) {
    const std::size_t n = labels.size();
    std::vector<int> out(n, -1);
    std::vector<std::size_t> stack;
    std::vector<std::size_t> members;
    int next_label = 0;
    for (std::size_t start = 0; start < n; ++start) {
        if (out[start] >= 0)
            continue;
        const int sr = static_cast<int>(start / width), sc = static_cast<int>(start % width);
        int adjacent = -1;
        for (auto [dr, dc] : kNeighbors4) {
            const int r = sr + dr, c = sc + dc;
            if (r >= 0 && r < height && c >= 0 && c < width) {
                const int l = out[static_cast<std::size_t>(r) * width + c];
                if (l >= 0) {
                    adjacent = l;
                    break;
                }
            }
        }
        members.clear();
        stack.assign(1, start);
        out[start] = next_label;
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            members.push_back(p);
            const int pr = static_cast<int>(p / width), pc = static_cast<int>(p % width);
            for (auto [dr, dc] : kNeighbors4) {
                const int r = pr + dr, c = pc + dc;
                if (r < 0 || r >= height || c < 0 || c >= width)
                    continue;
                const std::size_t q = static_cast<std::size_t>(r) * width + c;
                if (out[q] < 0 && labels[q] == labels[start]) {
                    out[q] = next_label;
                    stack.push_back(q);
                }
            }
        }
        if (static_cast<int>(members.size()) < min_size && adjacent >= 0) {
            for (std::size_t p : members)
                out[p] = adjacent;
        } else {
            ++next_label;
        }
    }
    labels = std::move(out);
    return next_label;
}

} // namespace

std::vector<int> SuperpixelLabels::segment_sizes() const {
    std::vector<int> sizes(static_cast<std::size_t>(std::max(n_segments, 0)), 0);
    for (int l : labels)
        ++sizes[static_cast<std::size_t>(l)];
    return sizes;
}

int default_slic_segments(int height, int width) {
    return std::max(1, static_cast<int>((static_cast<long long>(height) * width + 299) / 300));
}

SuperpixelLabels slic_segment(const ImageRGB& img, const SlicParams& params) {
    const int n = params.n_segments > 0 ? params.n_segments : default_slic_segments(img.height(), img.width());
    return slic_segment(img, n, params.compactness, params.max_iters);
}

SuperpixelLabels slic_segment(const ImageRGB& img, int n_segments, double compactness, int max_iters) {
    if (n_segments < 1)
        throw Error(Errc::InvalidParam, "n_segments must be >= 1");
    if (!(compactness > 0.0))
        throw Error(Errc::InvalidParam, "compactness must be > 0");
    if (max_iters < 0)
        throw Error(Errc::InvalidParam, "max_iters must be >= 0");
    if (img.empty())
        throw Error(Errc::InvalidParam, "empty image");

    const int height = img.height(), width = img.width();
    const std::size_t n_pixels = static_cast<std::size_t>(height) * width;
    SuperpixelLabels result{height, width, 1, std::vector<int>(n_pixels, 0)};
    if (n_segments == 1)
        return result;

    std::vector<Lab> lab(n_pixels);
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c)
            lab[static_cast<std::size_t>(r) * width + c] = to_lab(img.at(r, c, 0), img.at(r, c, 1), img.at(r, c, 2));

    const double step = std::sqrt(static_cast<double>(n_pixels) / n_segments);
    const int grid_rows = std::clamp(static_cast<int>(std::lround(height / step)), 1, height);
    const int grid_cols = std::clamp(static_cast<int>(std::lround(width / step)), 1, width);
    const double cell_h = static_cast<double>(height) / grid_rows;
    const double cell_w = static_cast<double>(width) / grid_cols;

    std::vector<Center> centers;
    centers.reserve(static_cast<std::size_t>(grid_rows) * grid_cols);
    for (int i = 0; i < grid_rows; ++i)
        for (int j = 0; j < grid_cols; ++j) {
            const double row = (i + 0.5) * cell_h - 0.5;
            const double col = (j + 0.5) * cell_w - 0.5;
            const auto& px = lab[static_cast<std::size_t>(std::lround(row)) * width + std::lround(col)];
            centers.push_back({px.l, px.a, px.b, row, col});
        }

    const double spatial_weight = (compactness / step) * (compactness / step);
    auto distance = [&](const Center& ctr, std::size_t p, int r, int c) {
        const double dl = lab[p].l - ctr.l, da = lab[p].a - ctr.a, db = lab[p].b - ctr.b;
        const double dr = r - ctr.row, dc = c - ctr.col;
        return dl * dl + da * da + db * db + spatial_weight * (dr * dr + dc * dc);
    };

    std::vector<int>& labels = result.labels;
    std::vector<double> best(n_pixels);
    const int window = static_cast<int>(std::ceil(step));
    for (int iter = 0; iter < std::max(1, max_iters); ++iter) {
        std::fill(best.begin(), best.end(), std::numeric_limits<double>::infinity());
        std::vector<int> next(n_pixels, -1);
        for (std::size_t k = 0; k < centers.size(); ++k) {
            const Center& ctr = centers[k];
            const int r0 = std::max(0, static_cast<int>(std::floor(ctr.row)) - window);
            const int r1 = std::min(height - 1, static_cast<int>(std::ceil(ctr.row)) + window);
            const int c0 = std::max(0, static_cast<int>(std::floor(ctr.col)) - window);
            const int c1 = std::min(width - 1, static_cast<int>(std::ceil(ctr.col)) + window);
            for (int r = r0; r <= r1; ++r)
                for (int c = c0; c <= c1; ++c) {
                    const std::size_t p = static_cast<std::size_t>(r) * width + c;
                    const double d = distance(ctr, p, r, c);
                    if (d < best[p]) {
                        best[p] = d;
                        next[p] = static_cast<int>(k);
                    }
                }
        }
        // Pixels outside every search window fall back to a global scan.
        for (std::size_t p = 0; p < n_pixels; ++p) {
            if (next[p] >= 0)
                continue;
            const int r = static_cast<int>(p / width), c = static_cast<int>(p % width);
            for (std::size_t k = 0; k < centers.size(); ++k) {
                const double d = distance(centers[k], p, r, c);
                if (d < best[p]) {
                    best[p] = d;
                    next[p] = static_cast<int>(k);
                }
            }
        }
        const bool converged = iter > 0 && next == labels;
        labels = std::move(next);
        if (converged)
            break;

        std::vector<Center> sums(centers.size(), Center{0, 0, 0, 0, 0});
        std::vector<int> counts(centers.size(), 0);
        for (std::size_t p = 0; p < n_pixels; ++p) {
            const auto k = static_cast<std::size_t>(labels[p]);
            sums[k].l += lab[p].l;
            sums[k].a += lab[p].a;
            sums[k].b += lab[p].b;
            sums[k].row += static_cast<double>(p / width);
            sums[k].col += static_cast<double>(p % width);
            ++counts[k];
        }
        for (std::size_t k = 0; k < centers.size(); ++k) {
            if (counts[k] == 0)
                continue;
            const double inv = 1.0 / counts[k];
            centers[k] = {sums[k].l * inv, sums[k].a * inv, sums[k].b * inv, sums[k].row * inv, sums[k].col * inv};
        }
    }

    const int min_size = std::max(1, static_cast<int>(step * step / 4.0));
    result.n_segments = enforce_connectivity(labels, height, width, min_size);
    return result;
}

BinaryMask boundary_pixels(const SegmentationMap& seg) {
    if (seg.height < 1 || seg.width < 1 ||
        seg.classes.size() != static_cast<std::size_t>(seg.height) * seg.width)
        throw Error(Errc::DimMismatch, "segmentation map buffer does not match its dimensions");
    BinaryMask out(seg.height, seg.width);
    for (int r = 0; r < seg.height; ++r)
        for (int c = 0; c < seg.width; ++c)
            for (auto [dr, dc] : kNeighbors4) {
                const int rr = r + dr, cc = c + dc;
                if (rr >= 0 && rr < seg.height && cc >= 0 && cc < seg.width && seg.at(rr, cc) != seg.at(r, c)) {
                    out.at(r, c) = 1;
                    break;
                }
            }
    return out;
}

BinaryMask dilate(const BinaryMask& mask, int radius) {
    if (radius < 0)
        throw Error(Errc::InvalidParam, "dilation radius must be >= 0");
    std::vector<std::pair<int, int>> disk;
    for (int dr = -radius; dr <= radius; ++dr)
        for (int dc = -radius; dc <= radius; ++dc)
            if (dr * dr + dc * dc <= radius * radius)
                disk.emplace_back(dr, dc);
    BinaryMask out(mask.height(), mask.width());
    for (int r = 0; r < mask.height(); ++r)
        for (int c = 0; c < mask.width(); ++c) {
            if (!mask.at(r, c))
                continue;
            for (auto [dr, dc] : disk) {
                const int rr = r + dr, cc = c + dc;
                if (rr >= 0 && rr < mask.height() && cc >= 0 && cc < mask.width())
                    out.at(rr, cc) = 1;
            }
        }
    return out;
}

BinaryMask mask_type1(const SegmentationMap& seg, int dilation_radius) {
    if (dilation_radius < 1)
        throw Error(Errc::InvalidParam, "dilation radius must be >= 1");
    return dilate(boundary_pixels(seg), dilation_radius);
}

BinaryMask mask_type2(const BinaryMask& mask, int dx, int dy) {
    BinaryMask out(mask.height(), mask.width());
    for (int r = 0; r < mask.height(); ++r)
        for (int c = 0; c < mask.width(); ++c) {
            const int sr = r - dy, sc = c - dx;
            if (sr >= 0 && sr < mask.height() && sc >= 0 && sc < mask.width())
                out.at(r, c) = mask.at(sr, sc);
        }
    return out;
}

SizeRange size_range(SegmentSize cls) noexcept {
    switch (cls) {
    case SegmentSize::Small: return {1, 99};
    case SegmentSize::Medium: return {200, 1000};
    }
    return {0, 0};
}

BinaryMask mask_type3(const SuperpixelLabels& labels, SegmentSize size_class, std::uint64_t seed,
                      double fraction) {
    if (labels.height < 1 || labels.width < 1 || labels.n_segments < 1 ||
        labels.labels.size() != static_cast<std::size_t>(labels.height) * labels.width)
        throw Error(Errc::InvalidParam, "invalid superpixel labels");
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw Error(Errc::InvalidParam, "fraction must be in (0, 1]");
    for (int l : labels.labels)
        if (l < 0 || l >= labels.n_segments)
            throw Error(Errc::InvalidParam, "label out of range");

    const auto sizes = labels.segment_sizes();
    const SizeRange range = size_range(size_class);
    std::vector<int> eligible;
    for (int l = 0; l < labels.n_segments; ++l)
        if (sizes[l] >= range.min_pixels && sizes[l] <= range.max_pixels)
            eligible.push_back(l);
    if (eligible.empty())
        throw Error(Errc::NoEligibleSegments, "no superpixel falls in the requested size class");

    // adjacency between labels (4-neighbourhood)
    std::vector<std::set<int>> adjacency(static_cast<std::size_t>(labels.n_segments));
    for (int r = 0; r < labels.height; ++r)
        for (int c = 0; c < labels.width; ++c) {
            const int l = labels.at(r, c);
            if (r + 1 < labels.height && labels.at(r + 1, c) != l) {
                adjacency[l].insert(labels.at(r + 1, c));
                adjacency[labels.at(r + 1, c)].insert(l);
            }
            if (c + 1 < labels.width && labels.at(r, c + 1) != l) {
                adjacency[l].insert(labels.at(r, c + 1));
                adjacency[labels.at(r, c + 1)].insert(l);
            }
        }

    std::mt19937_64 rng(seed);
    std::shuffle(eligible.begin(), eligible.end(), rng);
    const auto wanted = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(fraction * static_cast<double>(eligible.size()))));
    std::vector<char> chosen(static_cast<std::size_t>(labels.n_segments), 0);
    std::size_t n_chosen = 0;
    for (int l : eligible) {
        if (n_chosen == wanted)
            break;
        const bool touches = std::any_of(adjacency[l].begin(), adjacency[l].end(),
                                         [&](int other) { return chosen[other] != 0; });
        if (touches)
            continue;
        chosen[l] = 1;
        ++n_chosen;
    }

    BinaryMask mask(labels.height, labels.width);
    for (std::size_t p = 0; p < labels.labels.size(); ++p)
        mask.data()[p] = chosen[labels.labels[p]] ? 1 : 0;
    return mask;
}

ImageRGB punch_holes(const ImageRGB& img, const BinaryMask& mask) {
    if (img.height() != mask.height() || img.width() != mask.width())
        throw Error(Errc::DimMismatch, "image and mask dimensions differ");
    ImageRGB out = img;
    for (int r = 0; r < img.height(); ++r)
        for (int c = 0; c < img.width(); ++c)
            if (mask.at(r, c))
                for (int ch = 0; ch < 3; ++ch)
                    out.at(r, c, ch) = 0.0f;
    return out;
}

} // namespace dibrqa
