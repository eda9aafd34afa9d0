#pragma once

#include "dibrqa/image.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace dibrqa {

/// Decodes an 8- or 16-bit PNG or BMP and scales samples to [0,1].
ImageRGB load_image(const std::filesystem::path& path);

/// Writes 8-bit RGB; the format follows the extension (.png or .bmp).
void save_image(const ImageRGB& img, const std::filesystem::path& path);

/// Masks are stored as 1-bit grayscale PNG, white = missing.
void save_mask(const BinaryMask& mask, const std::filesystem::path& path);
BinaryMask load_mask(const std::filesystem::path& path);

/// Raw integer samples of a single-channel or palette PNG (e.g. segmentation
/// class indices). Palette entries are not expanded.
std::vector<int> load_label_png(const std::filesystem::path& path, int& height, int& width);
void save_label_png(std::span<const int> labels, int height, int width,
                    const std::filesystem::path& path);

struct ManifestRecord {
    std::string image_path;
    std::string content_id;
    std::string viewpoint_id;
    std::string algorithm_id;
    double dmos = 0.0;
    int rotation = 0;
    std::string mask_path; ///< empty unless the record pairs an image with a mask

    /// content|viewpoint|algorithm|rotation
    std::string key() const;
    /// content|viewpoint|algorithm; all rotations of one image share it.
    std::string base_key() const;
    /// content|viewpoint; the unit that may never straddle a train/test split.
    std::string view_key() const;
};

struct Manifest {
    std::filesystem::path base_dir;
    std::vector<ManifestRecord> records;

    std::filesystem::path resolve(const std::string& relative) const;
    std::size_t size() const noexcept { return records.size(); }
    bool empty() const noexcept { return records.empty(); }
};

/// One JSON object per line.
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);
/// Throws FormatError on duplicate keys, non-finite dmos or an invalid rotation.
void validate_manifest(const Manifest& manifest);

/// 90, 180 and 270 degree counterclockwise copies.
std::array<ImageRGB, 3> augment_rotations(const ImageRGB& img);

/// Indices into the manifest.
using RecordIds = std::vector<std::size_t>;

struct SplitPlan {
    RecordIds validation_ids;
    RecordIds eval_ids;
    std::uint64_t seed = 0;
};

constexpr double kValidationFraction = 0.2;
constexpr double kTestFraction = 0.2;

SplitPlan make_split(const Manifest& manifest, std::uint64_t seed);
SplitPlan make_split(const std::vector<ManifestRecord>& records, std::uint64_t seed);

struct Fold {
    RecordIds train_ids;
    RecordIds test_ids;
};

/// Random ≈80/20 folds over `eval_ids` in which no (content, viewpoint) pair
/// appears on both sides.
std::vector<Fold> make_folds(const RecordIds& eval_ids, const std::vector<ManifestRecord>& records,
                             int n_folds, std::uint64_t seed);

} // namespace dibrqa
