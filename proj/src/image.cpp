#include "dibrqa/image.hpp"

#include "dibrqa/error.hpp"

#include <algorithm>
#include <numeric>

namespace dibrqa {

std::string_view to_string(Errc code) noexcept {
    switch (code) {
    case Errc::MissingFile: return "MissingFile";
    case Errc::DecodeError: return "DecodeError";
    case Errc::EmptyManifest: return "EmptyManifest";
    case Errc::InfeasibleSplit: return "InfeasibleSplit";
    case Errc::InvalidParam: return "InvalidParam";
    case Errc::NoEligibleSegments: return "NoEligibleSegments";
    case Errc::DimMismatch: return "DimMismatch";
    case Errc::UnknownArch: return "UnknownArch";
    case Errc::ShapeError: return "ShapeError";
    case Errc::DataEmpty: return "DataEmpty";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::ImageTooSmall: return "ImageTooSmall";
    case Errc::DegenerateRange: return "DegenerateRange";
    case Errc::TooFewSamples: return "TooFewSamples";
    case Errc::EmptyPatchSet: return "EmptyPatchSet";
    case Errc::SolverFailure: return "SolverFailure";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::ZeroVariance: return "ZeroVariance";
    case Errc::EmptyGroup: return "EmptyGroup";
    case Errc::NonPositiveBaseline: return "NonPositiveBaseline";
    case Errc::EmptyCorpus: return "EmptyCorpus";
    case Errc::FormatError: return "FormatError";
    }
    return "Unknown";
}

ImageRGB::ImageRGB(int height, int width, float fill) : height_(height), width_(width) {
    if (height < 1 || width < 1)
        throw Error(Errc::InvalidParam, "image dimensions must be positive");
    data_.assign(static_cast<std::size_t>(height) * width * 3, fill);
}

BinaryMask::BinaryMask(int height, int width, std::uint8_t fill) : height_(height), width_(width) {
    if (height < 1 || width < 1)
        throw Error(Errc::InvalidParam, "mask dimensions must be positive");
    data_.assign(static_cast<std::size_t>(height) * width, fill ? 1 : 0);
}

std::size_t BinaryMask::count() const noexcept {
    return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
}

double BinaryMask::coverage() const noexcept {
    return data_.empty() ? 0.0 : static_cast<double>(count()) / static_cast<double>(data_.size());
}

namespace {

// Source coordinate for destination (r, c) after `turns` CCW quarter turns.
struct RotationMap {
    int src_h, src_w, turns;

    std::pair<int, int> source(int r, int c) const {
        switch (turns) {
        case 1: return {c, src_w - 1 - r};
        case 2: return {src_h - 1 - r, src_w - 1 - c};
        case 3: return {src_h - 1 - c, r};
        default: return {r, c};
        }
    }
};

int normalize_turns(int quarter_turns) { return ((quarter_turns % 4) + 4) % 4; }

} // namespace

ImageRGB rotate_ccw(const ImageRGB& img, int quarter_turns) {
    const int turns = normalize_turns(quarter_turns);
    if (turns == 0 || img.empty())
        return img;
    const bool swap = turns % 2 == 1;
    ImageRGB out(swap ? img.width() : img.height(), swap ? img.height() : img.width());
    const RotationMap map{img.height(), img.width(), turns};
    for (int r = 0; r < out.height(); ++r)
        for (int c = 0; c < out.width(); ++c) {
            auto [sr, sc] = map.source(r, c);
            for (int ch = 0; ch < 3; ++ch)
                out.at(r, c, ch) = img.at(sr, sc, ch);
        }
    return out;
}

BinaryMask rotate_ccw(const BinaryMask& mask, int quarter_turns) {
    const int turns = normalize_turns(quarter_turns);
    if (turns == 0 || mask.data().empty())
        return mask;
    const bool swap = turns % 2 == 1;
    BinaryMask out(swap ? mask.width() : mask.height(), swap ? mask.height() : mask.width());
    const RotationMap map{mask.height(), mask.width(), turns};
    for (int r = 0; r < out.height(); ++r)
        for (int c = 0; c < out.width(); ++c) {
            auto [sr, sc] = map.source(r, c);
            out.at(r, c) = mask.at(sr, sc);
        }
    return out;
}

} // namespace dibrqa
