#pragma once

#include "dibrqa/image.hpp"
#include "dibrqa/maskgen.hpp"

#include <cstdint>
#include <random>

namespace dibrqa {

/// A smooth procedural scene: shaded background, a few ellipsoidal objects
/// and low-amplitude texture, with the per-pixel object class.
struct SyntheticScene {
    ImageRGB image;
    SegmentationMap segmentation;
};

SyntheticScene synthetic_scene(int height, int width, std::uint64_t seed);

/// Thin vertical bands hugging object edges, grown until `coverage` of the
/// image is masked (or no room is left). Resembles dis-occlusion holes left
/// by a horizontal camera shift.
BinaryMask synthetic_hole_mask(const SegmentationMap& seg, double coverage, std::uint64_t seed);

} // namespace dibrqa
