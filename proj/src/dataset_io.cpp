#include "dibrqa/dataset_io.hpp"

#include "dibrqa/error.hpp"

#include "json.hpp"
#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace dibrqa {

namespace fs = std::filesystem;

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const noexcept {
        if (f)
            std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const fs::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) {
        if (mode[0] == 'r')
            throw Error(Errc::MissingFile, path.string());
        throw Error(Errc::InvalidParam, "cannot open for writing: " + path.string());
    }
    return f;
}

std::string lower_ext(const fs::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext;
}

// ---- PNG -----------------------------------------------------------------

struct RawRaster {
    int width = 0;
    int height = 0;
    int channels = 0;
    int bit_depth = 0;
    std::vector<std::uint16_t> samples; // row-major, interleaved
};

void png_error_to_buffer(png_structp png, png_const_charp msg) {
    auto* buf = static_cast<std::string*>(png_get_error_ptr(png));
    if (buf)
        *buf = msg;
    png_longjmp(png, 1);
}

void png_warning_ignore(png_structp, png_const_charp) {}

// Returns false and sets `err` on decode failure. No C++ objects with
// non-trivial destructors live in this frame across setjmp.
bool decode_png(std::FILE* fp, bool expand_palette, RawRaster& out, std::vector<png_byte>& rowbuf,
                std::string& err) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_to_buffer,
                                             png_warning_ignore);
    if (!png) {
        err = "png_create_read_struct failed";
        return false;
    }
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        err = "png_create_info_struct failed";
        return false;
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        return false;
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    const png_byte color_type = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);
    if (color_type == PNG_COLOR_TYPE_PALETTE && expand_palette)
        png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && depth < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE && !expand_palette && depth < 8)
        png_set_packing(png);
    if (expand_palette && png_get_valid(png, info, PNG_INFO_tRNS))
        png_set_tRNS_to_alpha(png);
    png_read_update_info(png, info);

    out.width = static_cast<int>(png_get_image_width(png, info));
    out.height = static_cast<int>(png_get_image_height(png, info));
    out.channels = png_get_channels(png, info);
    out.bit_depth = png_get_bit_depth(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    rowbuf.resize(rowbytes * static_cast<std::size_t>(out.height));
    out.samples.resize(static_cast<std::size_t>(out.width) * out.height * out.channels);
    for (int r = 0; r < out.height; ++r)
        png_read_row(png, rowbuf.data() + rowbytes * r, nullptr);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return true;
}

RawRaster read_png(const fs::path& path, bool expand_palette) {
    auto fp = open_file(path, "rb");
    png_byte sig[8] = {};
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
        throw Error(Errc::DecodeError, "not a PNG file: " + path.string());
    std::rewind(fp.get());
    RawRaster raster;
    std::vector<png_byte> rowbuf;
    std::string err;
    if (!decode_png(fp.get(), expand_palette, raster, rowbuf, err))
        throw Error(Errc::DecodeError, path.string() + ": " + err);
    const std::size_t row_samples = static_cast<std::size_t>(raster.width) * raster.channels;
    const std::size_t rowbytes = rowbuf.size() / static_cast<std::size_t>(raster.height);
    for (int r = 0; r < raster.height; ++r) {
        const png_byte* src = rowbuf.data() + rowbytes * r;
        std::uint16_t* dst = raster.samples.data() + row_samples * r;
        if (raster.bit_depth == 16) {
            for (std::size_t i = 0; i < row_samples; ++i)
                dst[i] = static_cast<std::uint16_t>((src[2 * i] << 8) | src[2 * i + 1]);
        } else {
            for (std::size_t i = 0; i < row_samples; ++i)
                dst[i] = src[i];
        }
    }
    return raster;
}

struct PngWriteSpec {
    int width, height, color_type, bit_depth;
    const std::vector<png_byte>* rows; // packed rows
    std::size_t rowbytes;
};

bool encode_png(std::FILE* fp, const PngWriteSpec& spec, std::string& err) {
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_to_buffer,
                                              png_warning_ignore);
    if (!png) {
        err = "png_create_write_struct failed";
        return false;
    }
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        err = "png_create_info_struct failed";
        return false;
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        return false;
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(spec.width), static_cast<png_uint_32>(spec.height),
                 spec.bit_depth, spec.color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int r = 0; r < spec.height; ++r)
        png_write_row(png, const_cast<png_bytep>(spec.rows->data() + spec.rowbytes * r));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return true;
}

void write_png(const fs::path& path, const PngWriteSpec& spec) {
    auto fp = open_file(path, "wb");
    std::string err;
    if (!encode_png(fp.get(), spec, err))
        throw Error(Errc::DecodeError, "PNG encode failed for " + path.string() + ": " + err);
}

// ---- BMP -----------------------------------------------------------------

std::uint32_t rd32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint16_t rd16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }
void wr32(std::vector<unsigned char>& v, std::uint32_t x) {
    for (int i = 0; i < 4; ++i)
        v.push_back(static_cast<unsigned char>((x >> (8 * i)) & 0xff));
}
void wr16(std::vector<unsigned char>& v, std::uint16_t x) {
    v.push_back(static_cast<unsigned char>(x & 0xff));
    v.push_back(static_cast<unsigned char>(x >> 8));
}

std::vector<unsigned char> slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(Errc::MissingFile, path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ImageRGB read_bmp(const fs::path& path) {
    const auto bytes = slurp(path);
    if (bytes.size() < 54 || bytes[0] != 'B' || bytes[1] != 'M')
        throw Error(Errc::DecodeError, "not a BMP file: " + path.string());
    const std::uint32_t data_offset = rd32(&bytes[10]);
    const std::uint32_t header_size = rd32(&bytes[14]);
    const auto width = static_cast<std::int32_t>(rd32(&bytes[18]));
    const auto raw_height = static_cast<std::int32_t>(rd32(&bytes[22]));
    const std::uint16_t bpp = rd16(&bytes[28]);
    const std::uint32_t compression = rd32(&bytes[30]);
    if (width <= 0 || raw_height == 0)
        throw Error(Errc::DecodeError, "bad BMP dimensions: " + path.string());
    if (!(compression == 0 || (compression == 3 && bpp == 32)))
        throw Error(Errc::DecodeError, "compressed BMP not supported: " + path.string());
    if (bpp != 24 && bpp != 32 && bpp != 8)
        throw Error(Errc::DecodeError, "unsupported BMP bit depth " + std::to_string(bpp));
    const bool bottom_up = raw_height > 0;
    const int height = bottom_up ? raw_height : -raw_height;
    const std::size_t stride = ((static_cast<std::size_t>(width) * bpp + 31) / 32) * 4;
    if (data_offset + stride * height > bytes.size())
        throw Error(Errc::DecodeError, "truncated BMP: " + path.string());

    std::vector<std::array<unsigned char, 3>> palette;
    if (bpp == 8) {
        std::uint32_t n_colors = rd32(&bytes[46]);
        if (n_colors == 0)
            n_colors = 256;
        const std::size_t pal_off = 14 + header_size;
        if (pal_off + n_colors * 4 > data_offset)
            throw Error(Errc::DecodeError, "bad BMP palette: " + path.string());
        for (std::uint32_t i = 0; i < n_colors; ++i) {
            const unsigned char* p = &bytes[pal_off + 4 * i];
            palette.push_back({p[2], p[1], p[0]});
        }
    }

    ImageRGB img(height, width);
    for (int r = 0; r < height; ++r) {
        const int src_row = bottom_up ? height - 1 - r : r;
        const unsigned char* row = &bytes[data_offset + stride * src_row];
        for (int c = 0; c < width; ++c) {
            unsigned char rgb[3];
            if (bpp == 8) {
                const unsigned idx = row[c];
                if (idx >= palette.size())
                    throw Error(Errc::DecodeError, "BMP palette index out of range");
                std::memcpy(rgb, palette[idx].data(), 3);
            } else {
                const unsigned char* px = row + static_cast<std::size_t>(c) * (bpp / 8);
                rgb[0] = px[2];
                rgb[1] = px[1];
                rgb[2] = px[0];
            }
            for (int ch = 0; ch < 3; ++ch)
                img.at(r, c, ch) = static_cast<float>(rgb[ch]) / 255.0f;
        }
    }
    return img;
}

unsigned char quantize8(float v) {
    const float clamped = std::clamp(v, 0.0f, 1.0f);
    return static_cast<unsigned char>(std::lround(clamped * 255.0f));
}

void write_bmp(const ImageRGB& img, const fs::path& path) {
    const std::size_t stride = ((static_cast<std::size_t>(img.width()) * 24 + 31) / 32) * 4;
    const std::uint32_t data_size = static_cast<std::uint32_t>(stride * img.height());
    std::vector<unsigned char> out;
    out.reserve(54 + data_size);
    out.push_back('B');
    out.push_back('M');
    wr32(out, 54 + data_size);
    wr32(out, 0);
    wr32(out, 54);
    wr32(out, 40);
    wr32(out, static_cast<std::uint32_t>(img.width()));
    wr32(out, static_cast<std::uint32_t>(img.height()));
    wr16(out, 1);
    wr16(out, 24);
    wr32(out, 0);
    wr32(out, data_size);
    wr32(out, 2835);
    wr32(out, 2835);
    wr32(out, 0);
    wr32(out, 0);
    for (int r = img.height() - 1; r >= 0; --r) {
        std::size_t written = 0;
        for (int c = 0; c < img.width(); ++c) {
            out.push_back(quantize8(img.at(r, c, 2)));
            out.push_back(quantize8(img.at(r, c, 1)));
            out.push_back(quantize8(img.at(r, c, 0)));
            written += 3;
        }
        for (; written < stride; ++written)
            out.push_back(0);
    }
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw Error(Errc::InvalidParam, "cannot open for writing: " + path.string());
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

} // namespace

ImageRGB load_image(const fs::path& path) {
    if (!fs::exists(path))
        throw Error(Errc::MissingFile, path.string());
    const std::string ext = lower_ext(path);
    if (ext == ".bmp")
        return read_bmp(path);
    const RawRaster raw = read_png(path, /*expand_palette=*/true);
    const float scale = raw.bit_depth == 16 ? 65535.0f : 255.0f;
    ImageRGB img(raw.height, raw.width);
    for (int r = 0; r < raw.height; ++r)
        for (int c = 0; c < raw.width; ++c) {
            const std::uint16_t* px =
                raw.samples.data() + (static_cast<std::size_t>(r) * raw.width + c) * raw.channels;
            for (int ch = 0; ch < 3; ++ch) {
                // gray and gray+alpha replicate the luminance sample
                const int src = raw.channels >= 3 ? ch : 0;
                img.at(r, c, ch) = static_cast<float>(px[src]) / scale;
            }
        }
    return img;
}

void save_image(const ImageRGB& img, const fs::path& path) {
    if (img.empty())
        throw Error(Errc::InvalidParam, "cannot save an empty image");
    if (lower_ext(path) == ".bmp") {
        write_bmp(img, path);
        return;
    }
    std::vector<png_byte> rows(img.size());
    std::transform(img.data().begin(), img.data().end(), rows.begin(), quantize8);
    write_png(path, {img.width(), img.height(), PNG_COLOR_TYPE_RGB, 8, &rows,
                     static_cast<std::size_t>(img.width()) * 3});
}

void save_mask(const BinaryMask& mask, const fs::path& path) {
    const std::size_t rowbytes = (static_cast<std::size_t>(mask.width()) + 7) / 8;
    std::vector<png_byte> rows(rowbytes * mask.height(), 0);
    for (int r = 0; r < mask.height(); ++r)
        for (int c = 0; c < mask.width(); ++c)
            if (mask.at(r, c))
                rows[rowbytes * r + c / 8] |= static_cast<png_byte>(0x80u >> (c % 8));
    write_png(path, {mask.width(), mask.height(), PNG_COLOR_TYPE_GRAY, 1, &rows, rowbytes});
}

BinaryMask load_mask(const fs::path& path) {
    const RawRaster raw = read_png(path, /*expand_palette=*/true);
    BinaryMask mask(raw.height, raw.width);
    for (int r = 0; r < raw.height; ++r)
        for (int c = 0; c < raw.width; ++c)
            mask.at(r, c) =
                raw.samples[(static_cast<std::size_t>(r) * raw.width + c) * raw.channels] != 0 ? 1 : 0;
    return mask;
}

std::vector<int> load_label_png(const fs::path& path, int& height, int& width) {
    const RawRaster raw = read_png(path, /*expand_palette=*/false);
    height = raw.height;
    width = raw.width;
    std::vector<int> labels(static_cast<std::size_t>(raw.height) * raw.width);
    for (std::size_t i = 0; i < labels.size(); ++i)
        labels[i] = raw.samples[i * raw.channels];
    return labels;
}

void save_label_png(std::span<const int> labels, int height, int width, const fs::path& path) {
    if (labels.size() != static_cast<std::size_t>(height) * width)
        throw Error(Errc::DimMismatch, "label buffer does not match dimensions");
    const int max_label = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end());
    const bool wide = max_label > 255;
    const std::size_t rowbytes = static_cast<std::size_t>(width) * (wide ? 2 : 1);
    std::vector<png_byte> rows(rowbytes * height);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] > 65535)
            throw Error(Errc::InvalidParam, "label out of 16-bit range");
        if (wide) {
            rows[2 * i] = static_cast<png_byte>(labels[i] >> 8);
            rows[2 * i + 1] = static_cast<png_byte>(labels[i] & 0xff);
        } else {
            rows[i] = static_cast<png_byte>(labels[i]);
        }
    }
    write_png(path, {width, height, PNG_COLOR_TYPE_GRAY, wide ? 16 : 8, &rows, rowbytes});
}

// ---- manifest --------------------------------------------------------------

std::string ManifestRecord::key() const { return base_key() + "|" + std::to_string(rotation); }

std::string ManifestRecord::base_key() const { return view_key() + "|" + algorithm_id; }

std::string ManifestRecord::view_key() const { return content_id + "|" + viewpoint_id; }

fs::path Manifest::resolve(const std::string& relative) const {
    const fs::path p(relative);
    return p.is_absolute() ? p : base_dir / p;
}

void validate_manifest(const Manifest& manifest) {
    std::set<std::string> keys;
    for (const auto& rec : manifest.records) {
        if (!std::isfinite(rec.dmos))
            throw Error(Errc::FormatError, "non-finite dmos for " + rec.key());
        if (rec.rotation != 0 && rec.rotation != 90 && rec.rotation != 180 && rec.rotation != 270)
            throw Error(Errc::FormatError, "rotation must be 0/90/180/270 for " + rec.key());
        if (!keys.insert(rec.key()).second)
            throw Error(Errc::FormatError, "duplicate record " + rec.key());
    }
}

Manifest read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in)
        throw Error(Errc::MissingFile, path.string());
    Manifest manifest;
    manifest.base_dir = path.parent_path();
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        try {
            const auto j = nlohmann::json::parse(line);
            ManifestRecord rec;
            rec.image_path = j.at("image_path").get<std::string>();
            rec.content_id = j.at("content_id").get<std::string>();
            rec.viewpoint_id = j.at("viewpoint_id").get<std::string>();
            rec.algorithm_id = j.at("algorithm_id").get<std::string>();
            rec.dmos = j.at("dmos").get<double>();
            rec.rotation = j.value("rotation", 0);
            rec.mask_path = j.value("mask_path", std::string{});
            manifest.records.push_back(std::move(rec));
        } catch (const nlohmann::json::exception& e) {
            throw Error(Errc::FormatError,
                        path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    validate_manifest(manifest);
    return manifest;
}

void write_manifest(const Manifest& manifest, const fs::path& path) {
    std::ofstream out(path);
    if (!out)
        throw Error(Errc::InvalidParam, "cannot open for writing: " + path.string());
    for (const auto& rec : manifest.records) {
        nlohmann::ordered_json j;
        j["image_path"] = rec.image_path;
        j["content_id"] = rec.content_id;
        j["viewpoint_id"] = rec.viewpoint_id;
        j["algorithm_id"] = rec.algorithm_id;
        j["dmos"] = rec.dmos;
        j["rotation"] = rec.rotation;
        if (!rec.mask_path.empty())
            j["mask_path"] = rec.mask_path;
        out << j.dump() << '\n';
    }
}

std::array<ImageRGB, 3> augment_rotations(const ImageRGB& img) {
    return {rotate_ccw(img, 1), rotate_ccw(img, 2), rotate_ccw(img, 3)};
}

// ---- splits ----------------------------------------------------------------

namespace {

// Groups of record indices keyed by `key_of`, ordered by key for determinism.
template <typename KeyFn>
std::vector<RecordIds> group_records(const std::vector<ManifestRecord>& records, const RecordIds& ids,
                                     KeyFn key_of) {
    std::map<std::string, RecordIds> groups;
    for (std::size_t id : ids)
        groups[key_of(records[id])].push_back(id);
    std::vector<RecordIds> out;
    out.reserve(groups.size());
    for (auto& [key, members] : groups)
        out.push_back(std::move(members));
    return out;
}

RecordIds all_ids(std::size_t n) {
    RecordIds ids(n);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    return ids;
}

} // namespace

SplitPlan make_split(const Manifest& manifest, std::uint64_t seed) {
    return make_split(manifest.records, seed);
}

SplitPlan make_split(const std::vector<ManifestRecord>& records, std::uint64_t seed) {
    if (records.empty())
        throw Error(Errc::EmptyManifest, "cannot split an empty manifest");
    auto groups = group_records(records, all_ids(records.size()),
                                [](const ManifestRecord& r) { return r.base_key(); });
    std::mt19937_64 rng(seed);
    std::shuffle(groups.begin(), groups.end(), rng);
    const auto n_val = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(kValidationFraction * static_cast<double>(groups.size()))));

    SplitPlan plan;
    plan.seed = seed;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        auto& dst = g < n_val ? plan.validation_ids : plan.eval_ids;
        dst.insert(dst.end(), groups[g].begin(), groups[g].end());
    }
    std::sort(plan.validation_ids.begin(), plan.validation_ids.end());
    std::sort(plan.eval_ids.begin(), plan.eval_ids.end());
    return plan;
}

std::vector<Fold> make_folds(const RecordIds& eval_ids, const std::vector<ManifestRecord>& records,
                             int n_folds, std::uint64_t seed) {
    if (n_folds < 1)
        throw Error(Errc::InvalidParam, "n_folds must be >= 1");
    if (eval_ids.empty())
        throw Error(Errc::EmptyManifest, "evaluation set is empty");
    for (std::size_t id : eval_ids)
        if (id >= records.size())
            throw Error(Errc::InvalidParam, "record id out of range");
    const auto groups =
        group_records(records, eval_ids, [](const ManifestRecord& r) { return r.view_key(); });
    if (groups.size() < 2)
        throw Error(Errc::InfeasibleSplit,
                    "need at least two distinct (content, viewpoint) groups to build a fold");

    const std::size_t n = eval_ids.size();
    const auto target = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(kTestFraction * static_cast<double>(n))));

    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(groups.size());
    std::vector<Fold> folds;
    folds.reserve(static_cast<std::size_t>(n_folds));
    for (int f = 0; f < n_folds; ++f) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        // Greedy fill up to the target size without overshooting; whole groups only.
        std::vector<char> in_test(groups.size(), 0);
        std::size_t test_size = 0;
        for (std::size_t g : order) {
            if (test_size + groups[g].size() <= target) {
                in_test[g] = 1;
                test_size += groups[g].size();
            }
            if (test_size == target)
                break;
        }
        if (test_size == 0) {
            // every group is larger than the target: take the first drawn one
            in_test[order.front()] = 1;
        }
        Fold fold;
        for (std::size_t g = 0; g < groups.size(); ++g) {
            auto& dst = in_test[g] ? fold.test_ids : fold.train_ids;
            dst.insert(dst.end(), groups[g].begin(), groups[g].end());
        }
        if (fold.train_ids.empty())
            throw Error(Errc::InfeasibleSplit, "fold would leave the training side empty");
        std::sort(fold.train_ids.begin(), fold.train_ids.end());
        std::sort(fold.test_ids.begin(), fold.test_ids.end());
        folds.push_back(std::move(fold));
    }
    return folds;
}

} // namespace dibrqa
