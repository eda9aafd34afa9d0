#include "dibrqa/synthetic.hpp"

#include "dibrqa/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

namespace dibrqa {

namespace {

struct Blob {
    double cy, cx, ry, rx, angle;
    std::array<double, 3> color;
    int cls;
};

} // namespace

SyntheticScene synthetic_scene(int height, int width, std::uint64_t seed) {
    if (height < 1 || width < 1)
        throw Error(Errc::InvalidParam, "scene dimensions must be positive");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);

    std::array<double, 3> base{}, slope_y{}, slope_x{};
    for (int ch = 0; ch < 3; ++ch) {
        base[static_cast<std::size_t>(ch)] = 0.25 + 0.5 * u(rng);
        slope_y[static_cast<std::size_t>(ch)] = 0.3 * (u(rng) - 0.5);
        slope_x[static_cast<std::size_t>(ch)] = 0.3 * (u(rng) - 0.5);
    }
    const double freq_y = 2.0 + 6.0 * u(rng), freq_x = 2.0 + 6.0 * u(rng), phase = 2.0 * std::numbers::pi * u(rng);
    const double tex_amp = 0.03 + 0.04 * u(rng);

    const int n_blobs = 2 + static_cast<int>(u(rng) * 4.0);
    std::vector<Blob> blobs;
    const double scale = std::min(height, width);
    for (int b = 0; b < n_blobs; ++b) {
        Blob blob{};
        blob.cy = u(rng) * height;
        blob.cx = u(rng) * width;
        blob.ry = scale * (0.08 + 0.22 * u(rng));
        blob.rx = scale * (0.08 + 0.22 * u(rng));
        blob.angle = std::numbers::pi * u(rng);
        for (auto& c : blob.color)
            c = 0.1 + 0.8 * u(rng);
        blob.cls = 1 + static_cast<int>(u(rng) * 20.0);
        blobs.push_back(blob);
    }

    SyntheticScene scene{ImageRGB(height, width), SegmentationMap{height, width, std::vector<int>(
                                                                     static_cast<std::size_t>(height) * width, 0)}};
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) {
            const double y = static_cast<double>(r) / height, x = static_cast<double>(c) / width;
            const double tex = tex_amp * std::sin(2.0 * std::numbers::pi * (freq_y * y + freq_x * x) + phase);
            std::array<double, 3> px{};
            for (std::size_t ch = 0; ch < 3; ++ch)
                px[ch] = base[ch] + slope_y[ch] * (y - 0.5) + slope_x[ch] * (x - 0.5) + tex;
            int cls = 0;
            // later blobs occlude earlier ones
            for (const auto& b : blobs) {
                const double dy = r - b.cy, dx = c - b.cx;
                const double ca = std::cos(b.angle), sa = std::sin(b.angle);
                const double v = (dy * ca + dx * sa) / b.ry, w = (-dy * sa + dx * ca) / b.rx;
                const double d2 = v * v + w * w;
                if (d2 <= 1.0) {
                    const double shade = 1.0 - 0.35 * d2;
                    for (std::size_t ch = 0; ch < 3; ++ch)
                        px[ch] = b.color[ch] * shade + 0.5 * tex;
                    cls = b.cls;
                }
            }
            for (int ch = 0; ch < 3; ++ch)
                scene.image.at(r, c, ch) = static_cast<float>(std::clamp(px[static_cast<std::size_t>(ch)], 0.0, 1.0));
            scene.segmentation.classes[static_cast<std::size_t>(r) * width + c] = cls;
        }
    return scene;
}

BinaryMask synthetic_hole_mask(const SegmentationMap& seg, double coverage, std::uint64_t seed) {
    if (!(coverage >= 0.0 && coverage <= 1.0))
        throw Error(Errc::InvalidParam, "coverage must lie in [0,1]");
    const int h = seg.height, w = seg.width;
    BinaryMask mask(h, w);
    const auto target = static_cast<std::size_t>(std::llround(coverage * h * w));
    if (target == 0)
        return mask;

    // right-hand object edges: an object pixel whose right neighbour has another class
    std::vector<std::pair<int, int>> edges;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c + 1 < w; ++c)
            if (seg.at(r, c) != 0 && seg.at(r, c + 1) != seg.at(r, c))
                edges.emplace_back(r, c + 1);

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::size_t covered = 0;
    const int max_band = std::max(2, w / 16);
    const int max_run = std::max(4, h / 4);
    for (int attempt = 0; covered < target && attempt < 100000; ++attempt) {
        int r0 = 0, c0 = 0;
        if (!edges.empty() && u(rng) < 0.85) {
            const auto& e = edges[static_cast<std::size_t>(u(rng) * static_cast<double>(edges.size())) % edges.size()];
            r0 = e.first;
            c0 = e.second;
        } else {
            r0 = static_cast<int>(u(rng) * h) % h;
            c0 = static_cast<int>(u(rng) * w) % w;
        }
        const int band = 1 + static_cast<int>(u(rng) * max_band);
        const int run = 2 + static_cast<int>(u(rng) * max_run);
        const int top = std::max(0, r0 - run / 2);
        for (int r = top; r < std::min(h, top + run) && covered < target; ++r)
            for (int c = c0; c < std::min(w, c0 + band) && covered < target; ++c)
                if (mask.at(r, c) == 0) {
                    mask.at(r, c) = 1;
                    ++covered;
                }
    }
    return mask;
}

} // namespace dibrqa
