#pragma once

// CT volumes, label maps and activation maps: in-memory grids, the on-disk
// header+raw format, orientation handling and case-bundle validation.
//
// On-disk format is a pair `<stem>.json` + `<stem>.raw`. The JSON sidecar
// carries dims, spacing_mm, orientation and dtype; the raw file is
// little-endian voxel data in X-fastest order:
//   index = x + dims[0] * (y + dims[1] * z)
// All grids of a bundle are reoriented to "RAI" at load time; downstream
// code never deals with orientation again.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "triage/errors.hpp"

namespace triage {

enum class Dtype { int16, uint8, float32 };

const char* dtype_name(Dtype d);
std::size_t dtype_size(Dtype d);

struct VolumeHeader {
    std::array<int, 3> dims{0, 0, 0};
    std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
    std::string orientation = "RAI";
    Dtype dtype = Dtype::int16;

    std::int64_t voxel_count() const {
        return static_cast<std::int64_t>(dims[0]) * dims[1] * dims[2];
    }
    double voxel_volume_mm3() const {
        return spacing_mm[0] * spacing_mm[1] * spacing_mm[2];
    }
    bool same_geometry(const VolumeHeader& o) const {
        return dims == o.dims && spacing_mm == o.spacing_mm && orientation == o.orientation;
    }

    bool operator==(const VolumeHeader&) const = default;
};

// Throws InvalidOrientationCode / HeaderParseError on a malformed header.
void check_header(const VolumeHeader& h);
bool valid_orientation_code(const std::string& code);

template <typename T>
struct Grid {
    VolumeHeader header;
    std::vector<T> voxels;

    std::int64_t index(int x, int y, int z) const {
        return x + static_cast<std::int64_t>(header.dims[0]) *
                       (y + static_cast<std::int64_t>(header.dims[1]) * z);
    }
    T at(int x, int y, int z) const { return voxels[static_cast<std::size_t>(index(x, y, z))]; }
    T& at(int x, int y, int z) { return voxels[static_cast<std::size_t>(index(x, y, z))]; }
    std::int64_t size() const { return static_cast<std::int64_t>(voxels.size()); }

    bool operator==(const Grid&) const = default;
};

using HuVolume = Grid<std::int16_t>;
using NormVolume = Grid<float>;
using LabelMap = Grid<std::uint8_t>;
using ActivationMap = Grid<float>;
using BinaryMask = Grid<std::uint8_t>;

using AnyGrid = std::variant<HuVolume, LabelMap, NormVolume>;

template <typename T>
Grid<T> make_grid(std::array<int, 3> dims, std::array<double, 3> spacing, T fill = T{});

enum class LabelRole { lungs, lobes, abnormality, texture, bronchial };

// lungs: 0=bg 1=left 2=right; lobes: 0..5; abnormality/bronchial: 0/1;
// texture: 0=bg 1=GGO 2=consolidation
std::uint8_t max_legal_label(LabelRole role);

enum class CaseLabel { covid, other };
const char* case_label_name(CaseLabel l);
CaseLabel parse_case_label(const std::string& s);

struct CaseBundle {
    std::string case_id;
    HuVolume volume;
    LabelMap lungs;
    LabelMap lobes;
    LabelMap abnormality;
    LabelMap texture;
    ActivationMap activation;
    std::optional<LabelMap> bronchial;
    std::optional<CaseLabel> label;
};

struct Violation {
    std::string kind;   // e.g. "EmptyLungs", "TextureOutsideAbnormality"
    std::string detail;
    std::int64_t count = 0;
};

struct ValidationReport {
    std::vector<Violation> violations;
    bool ok() const { return violations.empty(); }
};

// --- file I/O ------------------------------------------------------------

// `path` is the stem; ".json" / ".raw" are appended.
AnyGrid load_volume(const std::string& path);
HuVolume load_hu_volume(const std::string& path);
LabelMap load_label_map(const std::string& path);
ActivationMap load_activation_map(const std::string& path);

void save_volume(const HuVolume& v, const std::string& path);
void save_volume(const LabelMap& v, const std::string& path);
void save_volume(const NormVolume& v, const std::string& path);

// Case manifest: JSON mapping role names to file stems (relative to the
// manifest's directory) plus case_id and optional label.
CaseBundle load_case(const std::string& manifest_path);
void save_case(const CaseBundle& bundle, const std::string& dir, const std::string& manifest_name = "manifest.json");

// --- transforms ----------------------------------------------------------

template <typename T>
Grid<T> reorient(const Grid<T>& g, const std::string& target);

AnyGrid reorient(const AnyGrid& g, const std::string& target);

// (clamp(v, -1000, 0) + 1000) / 1000, voxel-wise; output dtype float32.
NormVolume clip_normalize(const HuVolume& v);

ValidationReport validate_case(const CaseBundle& bundle);

} // namespace triage
