#pragma once

#include "dibrqa/image.hpp"

#include <cstdint>
#include <vector>

namespace dibrqa {

struct SuperpixelLabels {
    int height = 0;
    int width = 0;
    int n_segments = 0;
    std::vector<int> labels; ///< row-major, values in [0, n_segments)

    int at(int row, int col) const { return labels[static_cast<std::size_t>(row) * width + col]; }
    std::vector<int> segment_sizes() const;
};

/// Per-pixel object class, 0 = background.
struct SegmentationMap {
    int height = 0;
    int width = 0;
    std::vector<int> classes;

    int at(int row, int col) const { return classes[static_cast<std::size_t>(row) * width + col]; }
};

struct SlicParams {
    int n_segments = 0; ///< 0 selects ceil(H*W / 300)
    double compactness = 10.0;
    int max_iters = 10;
};

/// Simple linear iterative clustering in joint CIELAB + position space, grid
/// initialised, followed by connectivity enforcement (every label is one
/// 4-connected region).
SuperpixelLabels slic_segment(const ImageRGB& img, int n_segments, double compactness, int max_iters);
SuperpixelLabels slic_segment(const ImageRGB& img, const SlicParams& params = {});

int default_slic_segments(int height, int width);

/// Pixels whose class differs from any 4-neighbour.
BinaryMask boundary_pixels(const SegmentationMap& seg);

/// Binary dilation with a disk of the given radius (dx²+dy² <= r²).
BinaryMask dilate(const BinaryMask& mask, int radius);

/// Dilated object boundaries.
BinaryMask mask_type1(const SegmentationMap& seg, int dilation_radius = 7);

/// Output (r, c) = input (r - dy, c - dx); reads outside the mask yield 0.
BinaryMask mask_type2(const BinaryMask& mask, int dx = 10, int dy = 0);

enum class SegmentSize { Small, Medium };

struct SizeRange {
    int min_pixels; ///< inclusive
    int max_pixels; ///< inclusive
};
SizeRange size_range(SegmentSize cls) noexcept;

/// Union of a random subset of whole superpixels from the requested size
/// class. Selected superpixels are never 4-adjacent to each other, so every
/// connected component of the result is exactly one superpixel.
BinaryMask mask_type3(const SuperpixelLabels& labels, SegmentSize size_class, std::uint64_t seed,
                      double fraction = 0.25);

/// Masked pixels become black, the rest is untouched.
ImageRGB punch_holes(const ImageRGB& img, const BinaryMask& mask);

} // namespace dibrqa
