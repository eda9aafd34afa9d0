#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace dibrqa {

/// Interleaved H×W×3 raster with samples in [0,1].
class ImageRGB {
public:
    ImageRGB() = default;
    ImageRGB(int height, int width, float fill = 0.0f);

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    static constexpr int channels() noexcept { return 3; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    float& at(int row, int col, int ch) { return data_[index(row, col, ch)]; }
    float at(int row, int col, int ch) const { return data_[index(row, col, ch)]; }

    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }

    bool operator==(const ImageRGB&) const = default;

private:
    std::size_t index(int row, int col, int ch) const noexcept {
        return (static_cast<std::size_t>(row) * width_ + col) * 3 + ch;
    }

    int height_ = 0;
    int width_ = 0;
    std::vector<float> data_;
};

/// H×W map, 1 marks a missing (dis-occluded) pixel.
class BinaryMask {
public:
    BinaryMask() = default;
    BinaryMask(int height, int width, std::uint8_t fill = 0);

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }

    std::uint8_t& at(int row, int col) { return data_[static_cast<std::size_t>(row) * width_ + col]; }
    std::uint8_t at(int row, int col) const { return data_[static_cast<std::size_t>(row) * width_ + col]; }

    std::span<std::uint8_t> data() noexcept { return data_; }
    std::span<const std::uint8_t> data() const noexcept { return data_; }

    std::size_t count() const noexcept;
    double coverage() const noexcept;

    bool operator==(const BinaryMask&) const = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<std::uint8_t> data_;
};

/// Counterclockwise rotation by a multiple of 90 degrees. Pixel (r,c) of an
/// H×W input lands at (W-1-c, r) for a single quarter turn.
ImageRGB rotate_ccw(const ImageRGB& img, int quarter_turns);
BinaryMask rotate_ccw(const BinaryMask& mask, int quarter_turns);

} // namespace dibrqa
