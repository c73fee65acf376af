#pragma once

/// Slice container, manifests, dataset splits, HU normalization and resizing.
///
/// Slice file layout (all integers little-endian):
///
///     offset  size  field
///     0       4     magic "CTSL"
///     4       4     u32 height
///     8       4     u32 width
///     12      8     u64 CRC-64/XZ of the payload bytes
///     20      4*h*w f32 pixels, row-major, Hounsfield units
///
/// A dataset root holds slice files plus `manifest.json`, which lists one
/// entry per file with the fields path, scan_id, slice_index, body_region,
/// dose, height, width, crc64 (16 lowercase hex digits).

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

#include <boost/crc.hpp>
#include <json.hpp>

#include "sswl/error.hpp"
#include "sswl/random.hpp"

namespace sswl {

namespace fs = std::filesystem;

enum class BodyRegion { abdomen, chest, phantom };

inline std::string to_string(BodyRegion r) {
    switch (r) {
        case BodyRegion::abdomen: return "abdomen";
        case BodyRegion::chest: return "chest";
        case BodyRegion::phantom: return "phantom";
    }
    return "?";
}

inline BodyRegion body_region_from_string(const std::string& s) {
    if (s == "abdomen") return BodyRegion::abdomen;
    if (s == "chest") return BodyRegion::chest;
    if (s == "phantom") return BodyRegion::phantom;
    throw ValidationError("unknown body region '" + s + "'");
}

/// Radiation dose relative to the routine scan, in (0, 1].
class DoseLevel {
public:
    constexpr DoseLevel() = default;
    explicit DoseLevel(double fraction) : fraction_(fraction) {
        if (!(fraction > 0.0 && fraction <= 1.0))
            throw ValidationError("dose fraction must lie in (0, 1], got " + std::to_string(fraction));
    }

    static DoseLevel full() { return DoseLevel(1.0); }

    double fraction() const noexcept { return fraction_; }
    bool is_full() const noexcept { return fraction_ == 1.0; }

    friend bool operator==(const DoseLevel&, const DoseLevel&) = default;

private:
    double fraction_ = 1.0;
};

/// 2-D slice of Hounsfield units (or normalized intensities) plus scan metadata.
struct CTSlice {
    int height = 0;
    int width = 0;
    std::vector<float> pixels;
    std::string scan_id;
    int slice_index = 0;
    BodyRegion body_region = BodyRegion::phantom;
    DoseLevel dose;

    CTSlice() = default;
    CTSlice(int h, int w, float fill = 0.0f) : height(h), width(w), pixels(std::size_t(h) * w, fill) {}

    float& at(int y, int x) noexcept { return pixels[std::size_t(y) * width + x]; }
    float at(int y, int x) const noexcept { return pixels[std::size_t(y) * width + x]; }

    /// Copy of the metadata with a new pixel grid.
    CTSlice with_pixels(int h, int w, std::vector<float> px) const {
        CTSlice out = *this;
        out.height = h;
        out.width = w;
        out.pixels = std::move(px);
        return out;
    }

    void validate() const {
        if (height < 1 || width < 1) throw ValidationError("slice dimensions must be positive");
        if (pixels.size() != std::size_t(height) * width)
            throw ValidationError("pixel count does not equal height x width");
        if (slice_index < 0) throw ValidationError("slice_index must be non-negative");
        for (float v : pixels)
            if (!std::isfinite(v)) throw ValidationError("slice contains a non-finite pixel");
    }

    friend bool operator==(const CTSlice&, const CTSlice&) = default;
};

struct NormalizationSpec {
    double hu_min = -1024.0;
    double hu_max = 3071.0;

    void validate() const {
        if (!(hu_min < hu_max)) throw ValidationError("normalization requires hu_min < hu_max");
    }
};

// ---------------------------------------------------------------------------
// Checksums and the binary container

using Crc64 = boost::crc_optimal<64, 0x42F0E1EBA9EA3693ull, ~0ull, ~0ull, true, true>;

inline std::uint64_t crc64(std::span<const unsigned char> bytes) {
    Crc64 crc;
    crc.process_bytes(bytes.data(), bytes.size());
    return crc.checksum();
}

inline std::string crc64_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::uint64_t parse_crc64_hex(const std::string& s) {
    if (s.size() != 16 || s.find_first_not_of("0123456789abcdefABCDEF") != std::string::npos)
        throw ValidationError("crc64 must be 16 hex digits, got '" + s + "'");
    return std::stoull(s, nullptr, 16);
}

namespace detail {

inline constexpr char slice_magic[4] = {'C', 'T', 'S', 'L'};
inline constexpr std::size_t slice_header_bytes = 20;

template <class U>
void put_le(std::vector<unsigned char>& out, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

template <class U>
U get_le(const unsigned char* p) {
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
    return v;
}

inline std::vector<unsigned char> read_file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path.string(), "cannot open for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const fs::path& path, std::span<const unsigned char> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path.string(), "cannot open for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(path.string(), "write failed");
}

/// Write to a sibling temp file and rename over the destination.
inline void write_file_atomic(const fs::path& path, std::span<const unsigned char> bytes) {
    fs::path tmp = path;
    tmp += ".tmp";
    write_file_bytes(tmp, bytes);
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError(path.string(), "rename failed: " + ec.message());
}

struct SliceHeader {
    std::uint32_t height;
    std::uint32_t width;
    std::uint64_t crc;
};

inline SliceHeader parse_slice_header(const std::vector<unsigned char>& bytes, const std::string& path) {
    if (bytes.size() < 4 || !std::equal(slice_magic, slice_magic + 4, bytes.begin()))
        throw FormatError(FormatError::Kind::bad_magic, path, "missing CTSL magic");
    if (bytes.size() < slice_header_bytes)
        throw FormatError(FormatError::Kind::truncated, path, "header truncated");
    return {get_le<std::uint32_t>(&bytes[4]), get_le<std::uint32_t>(&bytes[8]),
            get_le<std::uint64_t>(&bytes[12])};
}

}  // namespace detail

inline std::vector<unsigned char> encode_slice(const CTSlice& slice) {
    slice.validate();
    std::vector<unsigned char> out;
    out.reserve(detail::slice_header_bytes + 4 * slice.pixels.size());
    out.insert(out.end(), detail::slice_magic, detail::slice_magic + 4);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(slice.height));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(slice.width));
    detail::put_le<std::uint64_t>(out, 0);  // patched below
    for (float v : slice.pixels) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    const auto crc = crc64({out.data() + detail::slice_header_bytes, out.size() - detail::slice_header_bytes});
    for (int i = 0; i < 8; ++i) out[12 + i] = static_cast<unsigned char>(crc >> (8 * i));
    return out;
}

inline void write_slice(const CTSlice& slice, const fs::path& path) {
    if (path.has_parent_path() && !fs::is_directory(path.parent_path()))
        throw IoError(path.string(), "parent directory does not exist");
    detail::write_file_atomic(path, encode_slice(slice));
}

/// CRC stored in a slice file header, without reading the payload.
inline std::uint64_t read_slice_crc(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path.string(), "cannot open for reading");
    std::vector<unsigned char> head(detail::slice_header_bytes);
    in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
    head.resize(static_cast<std::size_t>(in.gcount()));
    return detail::parse_slice_header(head, path.string()).crc;
}

/// Decodes pixels only; metadata fields are left at their defaults.
inline CTSlice decode_slice(const std::vector<unsigned char>& bytes, const std::string& path) {
    const auto hdr = detail::parse_slice_header(bytes, path);
    if (hdr.height == 0 || hdr.width == 0)
        throw FormatError(FormatError::Kind::bad_header, path, "zero dimension");
    const std::size_t count = std::size_t(hdr.height) * hdr.width;
    if (bytes.size() - detail::slice_header_bytes < 4 * count)
        throw FormatError(FormatError::Kind::truncated, path,
                          "payload holds " + std::to_string(bytes.size() - detail::slice_header_bytes) +
                              " bytes, dims need " + std::to_string(4 * count));
    const std::span<const unsigned char> payload(bytes.data() + detail::slice_header_bytes, 4 * count);
    if (crc64(payload) != hdr.crc)
        throw FormatError(FormatError::Kind::checksum_mismatch, path, "payload CRC-64 mismatch");
    CTSlice s(static_cast<int>(hdr.height), static_cast<int>(hdr.width));
    for (std::size_t i = 0; i < count; ++i)
        s.pixels[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(&payload[4 * i]));
    return s;
}

// ---------------------------------------------------------------------------
// Manifests

struct ManifestEntry {
    std::string path;  // relative to the dataset root
    std::string scan_id;
    int slice_index = 0;
    BodyRegion body_region = BodyRegion::phantom;
    double dose = 1.0;
    int height = 0;
    int width = 0;
    std::uint64_t crc64 = 0;

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct ScanManifest {
    fs::path root;
    std::vector<ManifestEntry> entries;

    static constexpr const char* file_name = "manifest.json";

    fs::path resolve(const ManifestEntry& e) const { return root / e.path; }

    const ManifestEntry* find(const std::string& rel_path) const {
        for (const auto& e : entries)
            if (e.path == rel_path) return &e;
        return nullptr;
    }

    void validate() const {
        std::set<std::string> seen;
        for (const auto& e : entries) {
            if (!seen.insert(e.path).second) throw ValidationError("duplicate manifest path '" + e.path + "'");
            DoseLevel{e.dose};
            if (e.height < 1 || e.width < 1) throw ValidationError("manifest entry '" + e.path + "' has bad dims");
        }
    }
};

inline nlohmann::json to_json(const ManifestEntry& e) {
    return {{"path", e.path},
            {"scan_id", e.scan_id},
            {"slice_index", e.slice_index},
            {"body_region", to_string(e.body_region)},
            {"dose", e.dose},
            {"height", e.height},
            {"width", e.width},
            {"crc64", crc64_hex(e.crc64)}};
}

inline ManifestEntry manifest_entry_from_json(const nlohmann::json& j) {
    ManifestEntry e;
    try {
        e.path = j.at("path").get<std::string>();
        e.scan_id = j.at("scan_id").get<std::string>();
        e.slice_index = j.at("slice_index").get<int>();
        e.body_region = body_region_from_string(j.at("body_region").get<std::string>());
        e.dose = j.at("dose").get<double>();
        e.height = j.at("height").get<int>();
        e.width = j.at("width").get<int>();
        e.crc64 = parse_crc64_hex(j.at("crc64").get<std::string>());
    } catch (const nlohmann::json::exception& ex) {
        throw ValidationError(std::string("malformed manifest entry: ") + ex.what());
    }
    return e;
}

inline void save_manifest(const ScanManifest& m) {
    m.validate();
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : m.entries) entries.push_back(to_json(e));
    const std::string text = nlohmann::json{{"entries", entries}}.dump(1) + "\n";
    fs::create_directories(m.root);
    detail::write_file_atomic(m.root / ScanManifest::file_name,
                              {reinterpret_cast<const unsigned char*>(text.data()), text.size()});
}

/// Loads `root/manifest.json`. With `verify`, every listed file's header CRC
/// must match its manifest entry.
inline ScanManifest load_manifest(const fs::path& root, bool verify = true) {
    const fs::path file = root / ScanManifest::file_name;
    std::ifstream in(file);
    if (!in) throw IoError(file.string(), "cannot open manifest");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& ex) {
        throw FormatError(FormatError::Kind::bad_header, file.string(), ex.what());
    }
    ScanManifest m;
    m.root = root;
    if (!j.contains("entries") || !j["entries"].is_array())
        throw FormatError(FormatError::Kind::bad_header, file.string(), "missing 'entries' array");
    for (const auto& je : j["entries"]) m.entries.push_back(manifest_entry_from_json(je));
    m.validate();
    if (verify) {
        for (const auto& e : m.entries) {
            const auto p = m.resolve(e);
            if (!fs::exists(p)) throw IoError(p.string(), "listed in manifest but missing");
            if (read_slice_crc(p) != e.crc64)
                throw FormatError(FormatError::Kind::checksum_mismatch, p.string(),
                                  "file CRC differs from manifest entry");
        }
    }
    return m;
}

inline ManifestEntry make_manifest_entry(const CTSlice& s, const std::string& rel_path) {
    const auto bytes = encode_slice(s);
    return {rel_path, s.scan_id, s.slice_index, s.body_region, s.dose.fraction(), s.height, s.width,
            detail::get_le<std::uint64_t>(&bytes[12])};
}

inline void apply_entry_metadata(CTSlice& s, const ManifestEntry& e, const std::string& path) {
    if (e.height != s.height || e.width != s.width)
        throw FormatError(FormatError::Kind::bad_header, path, "dims differ from manifest entry");
    s.scan_id = e.scan_id;
    s.slice_index = e.slice_index;
    s.body_region = e.body_region;
    s.dose = DoseLevel(e.dose);
}

/// Reads a slice file; metadata is filled from the sidecar manifest in the
/// same directory when that manifest lists the file.
inline CTSlice read_slice(const fs::path& path) {
    CTSlice s = decode_slice(detail::read_file_bytes(path), path.string());
    const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
    if (fs::exists(dir / ScanManifest::file_name)) {
        const auto m = load_manifest(dir, false);
        if (const auto* e = m.find(path.filename().string())) {
            if (e->crc64 != read_slice_crc(path))
                throw FormatError(FormatError::Kind::checksum_mismatch, path.string(),
                                  "file CRC differs from manifest entry");
            apply_entry_metadata(s, *e, path.string());
        }
    }
    return s;
}

/// Reads the file named by a manifest entry and applies its metadata.
inline CTSlice read_slice(const ScanManifest& m, const ManifestEntry& e) {
    const auto p = m.resolve(e);
    CTSlice s = decode_slice(detail::read_file_bytes(p), p.string());
    const auto crc = read_slice_crc(p);
    if (crc != e.crc64)
        throw FormatError(FormatError::Kind::checksum_mismatch, p.string(), "file CRC differs from manifest entry");
    apply_entry_metadata(s, e, p.string());
    return s;
}

// ---------------------------------------------------------------------------
// Pixel transforms

inline CTSlice normalize_hu(const CTSlice& slice, const NormalizationSpec& spec) {
    spec.validate();
    const double span = spec.hu_max - spec.hu_min;
    std::vector<float> out(slice.pixels.size());
    std::transform(slice.pixels.begin(), slice.pixels.end(), out.begin(), [&](float v) {
        return static_cast<float>(std::clamp((double(v) - spec.hu_min) / span, 0.0, 1.0));
    });
    return slice.with_pixels(slice.height, slice.width, std::move(out));
}

/// Corner-aligned bilinear resampling: output corners land on input corners.
inline CTSlice resize_bilinear(const CTSlice& slice, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw ValidationError("resize target must be at least 1x1");
    if (out_h == slice.height && out_w == slice.width) return slice;
    const auto coord = [](int i, int n_out, int n_in) {
        return n_out == 1 ? 0.0 : double(i) * double(n_in - 1) / double(n_out - 1);
    };
    std::vector<float> out(std::size_t(out_h) * out_w);
    for (int y = 0; y < out_h; ++y) {
        const double sy = coord(y, out_h, slice.height);
        const int y0 = std::min(static_cast<int>(sy), slice.height - 1);
        const int y1 = std::min(y0 + 1, slice.height - 1);
        const double fy = sy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double sx = coord(x, out_w, slice.width);
            const int x0 = std::min(static_cast<int>(sx), slice.width - 1);
            const int x1 = std::min(x0 + 1, slice.width - 1);
            const double fx = sx - x0;
            const double top = (1.0 - fx) * slice.at(y0, x0) + fx * slice.at(y0, x1);
            const double bot = (1.0 - fx) * slice.at(y1, x0) + fx * slice.at(y1, x1);
            out[std::size_t(y) * out_w + x] = static_cast<float>((1.0 - fy) * top + fy * bot);
        }
    }
    return slice.with_pixels(out_h, out_w, std::move(out));
}

// ---------------------------------------------------------------------------
// Dataset splits

struct SlicePair {
    std::string ldct;  // manifest-relative paths
    std::string fdct;
    std::string scan_id;
    int slice_index = 0;

    friend bool operator==(const SlicePair&, const SlicePair&) = default;
};

struct DatasetSplit {
    std::vector<SlicePair> labeled;
    std::vector<std::string> unlabeled;  // LDCT paths
    std::vector<SlicePair> validation;
    std::vector<SlicePair> test;

    friend bool operator==(const DatasetSplit&, const DatasetSplit&) = default;
};

/// Number of labeled pairs, or every available training pair.
using LabeledSize = std::variant<int, std::monostate>;
inline constexpr std::monostate labeled_full{};

inline std::string to_string(const LabeledSize& s) {
    return std::holds_alternative<int>(s) ? std::to_string(std::get<int>(s)) : "full";
}

inline LabeledSize labeled_size_from_string(const std::string& s) {
    if (s == "full") return labeled_full;
    std::size_t used = 0;
    int v = 0;
    try {
        v = std::stoi(s, &used);
    } catch (const std::exception&) {
        throw ValidationError("labeled size must be a positive integer or 'full', got '" + s + "'");
    }
    if (used != s.size() || v < 1)
        throw ValidationError("labeled size must be a positive integer or 'full', got '" + s + "'");
    return v;
}

/// Pairs every full-dose entry with the lowest-dose entry of the same
/// (scan_id, slice_index). Sorted by (scan_id, slice_index).
inline std::vector<SlicePair> collect_pairs(const ScanManifest& m) {
    std::map<std::pair<std::string, int>, const ManifestEntry*> full, low;
    for (const auto& e : m.entries) {
        const auto key = std::make_pair(e.scan_id, e.slice_index);
        if (e.dose == 1.0) {
            full[key] = &e;
        } else {
            auto& slot = low[key];
            if (!slot || e.dose < slot->dose) slot = &e;
        }
    }
    std::vector<SlicePair> pairs;
    for (const auto& [key, lo] : low) {
        auto it = full.find(key);
        if (it == full.end()) continue;
        pairs.push_back({lo->path, it->second->path, key.first, key.second});
    }
    return pairs;
}

/// Splits a training manifest into validation, labeled and unlabeled parts;
/// the optional test manifest supplies the test partition and must not share
/// any scan with the training manifest.
inline DatasetSplit make_splits(const ScanManifest& train, const LabeledSize& labeled_size, double val_fraction,
                                std::uint64_t seed, const ScanManifest* test = nullptr) {
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ValidationError("val_fraction must lie in [0, 1)");
    auto pairs = collect_pairs(train);
    if (pairs.empty()) throw ValidationError("training manifest has no (low-dose, full-dose) pairs");

    auto rng = make_rng(seed, {stream::split});
    std::shuffle(pairs.begin(), pairs.end(), rng);

    const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * double(pairs.size())));
    DatasetSplit split;
    split.validation.assign(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<SlicePair> pool(pairs.begin() + static_cast<std::ptrdiff_t>(n_val), pairs.end());

    std::size_t n_labeled = pool.size();
    if (std::holds_alternative<int>(labeled_size)) {
        const auto want = static_cast<std::size_t>(std::get<int>(labeled_size));
        if (want > pool.size())
            throw ValidationError("labeled size " + std::to_string(want) + " exceeds the " +
                                  std::to_string(pool.size()) + " available training pairs");
        n_labeled = want;
    }
    split.labeled.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_labeled));
    for (auto it = pool.begin() + static_cast<std::ptrdiff_t>(n_labeled); it != pool.end(); ++it)
        split.unlabeled.push_back(it->ldct);

    if (test) {
        split.test = collect_pairs(*test);
        std::set<std::string> train_scans;
        for (const auto& e : train.entries) train_scans.insert(e.scan_id);
        for (const auto& p : split.test)
            if (train_scans.count(p.scan_id))
                throw ValidationError("scan '" + p.scan_id + "' appears in both training and test manifests");
    }
    return split;
}

}  // namespace sswl
