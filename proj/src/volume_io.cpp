#include "triage/volume_io.hpp"

#include "triage/parallel.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace triage {

static_assert(std::endian::native == std::endian::little,
              "raw voxel files are little-endian; big-endian hosts need byte swaps");

const char* dtype_name(Dtype d) {
    switch (d) {
        case Dtype::int16: return "int16";
        case Dtype::uint8: return "uint8";
        case Dtype::float32: return "float32";
    }
    return "?";
}

std::size_t dtype_size(Dtype d) {
    switch (d) {
        case Dtype::int16: return 2;
        case Dtype::uint8: return 1;
        case Dtype::float32: return 4;
    }
    return 0;
}

static Dtype parse_dtype(const std::string& s) {
    if (s == "int16") return Dtype::int16;
    if (s == "uint8") return Dtype::uint8;
    if (s == "float32") return Dtype::float32;
    throw Error(Errc::header_parse_error, "unknown dtype '" + s + "'");
}

static int axis_of_letter(char c) {
    switch (c) {
        case 'R': case 'L': return 0;
        case 'A': case 'P': return 1;
        case 'I': case 'S': return 2;
    }
    return -1;
}

static char opposite_letter(char c) {
    switch (c) {
        case 'R': return 'L';
        case 'L': return 'R';
        case 'A': return 'P';
        case 'P': return 'A';
        case 'I': return 'S';
        case 'S': return 'I';
    }
    return '?';
}

bool valid_orientation_code(const std::string& code) {
    if (code.size() != 3) return false;
    bool seen[3] = {false, false, false};
    for (char c : code) {
        int a = axis_of_letter(c);
        if (a < 0 || seen[a]) return false;
        seen[a] = true;
    }
    return true;
}

void check_header(const VolumeHeader& h) {
    for (int i = 0; i < 3; ++i) {
        if (h.dims[i] < 1)
            throw Error(Errc::header_parse_error, "dims must be >= 1");
        if (!(h.spacing_mm[i] > 0))
            throw Error(Errc::header_parse_error, "spacing_mm must be > 0");
    }
    if (!valid_orientation_code(h.orientation))
        throw Error(Errc::invalid_orientation_code, "'" + h.orientation + "'");
}

template <typename T>
Grid<T> make_grid(std::array<int, 3> dims, std::array<double, 3> spacing, T fill) {
    Grid<T> g;
    g.header.dims = dims;
    g.header.spacing_mm = spacing;
    g.header.orientation = "RAI";
    if constexpr (std::is_same_v<T, std::int16_t>) g.header.dtype = Dtype::int16;
    else if constexpr (std::is_same_v<T, std::uint8_t>) g.header.dtype = Dtype::uint8;
    else g.header.dtype = Dtype::float32;
    check_header(g.header);
    g.voxels.assign(static_cast<std::size_t>(g.header.voxel_count()), fill);
    return g;
}

template Grid<std::int16_t> make_grid(std::array<int, 3>, std::array<double, 3>, std::int16_t);
template Grid<std::uint8_t> make_grid(std::array<int, 3>, std::array<double, 3>, std::uint8_t);
template Grid<std::int32_t> make_grid(std::array<int, 3>, std::array<double, 3>, std::int32_t);
template Grid<float> make_grid(std::array<int, 3>, std::array<double, 3>, float);

std::uint8_t max_legal_label(LabelRole role) {
    switch (role) {
        case LabelRole::lungs: return 2;
        case LabelRole::lobes: return 5;
        case LabelRole::abnormality: return 1;
        case LabelRole::texture: return 2;
        case LabelRole::bronchial: return 1;
    }
    return 0;
}

const char* case_label_name(CaseLabel l) { return l == CaseLabel::covid ? "covid" : "other"; }

CaseLabel parse_case_label(const std::string& s) {
    if (s == "covid") return CaseLabel::covid;
    if (s == "other") return CaseLabel::other;
    throw Error(Errc::header_parse_error, "label must be 'covid' or 'other', got '" + s + "'");
}

// --- header/raw I/O ------------------------------------------------------

static VolumeHeader read_header(const std::string& json_path) {
    std::ifstream in(json_path);
    if (!in) throw Error(Errc::missing_file, json_path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw Error(Errc::header_parse_error, json_path + ": " + e.what());
    }
    VolumeHeader h;
    try {
        auto dims = j.at("dims");
        auto sp = j.at("spacing_mm");
        if (dims.size() != 3 || sp.size() != 3)
            throw Error(Errc::header_parse_error, json_path + ": dims/spacing_mm must have 3 entries");
        for (int i = 0; i < 3; ++i) {
            h.dims[i] = dims.at(i).get<int>();
            h.spacing_mm[i] = sp.at(i).get<double>();
        }
        h.orientation = j.at("orientation").get<std::string>();
        h.dtype = parse_dtype(j.at("dtype").get<std::string>());
    } catch (const json::exception& e) {
        throw Error(Errc::header_parse_error, json_path + ": " + e.what());
    }
    check_header(h);
    return h;
}

static void write_header(const VolumeHeader& h, const std::string& json_path) {
    json j;
    j["dims"] = h.dims;
    j["spacing_mm"] = h.spacing_mm;
    j["orientation"] = h.orientation;
    j["dtype"] = dtype_name(h.dtype);
    std::ofstream out(json_path, std::ios::trunc);
    if (!out) throw Error(Errc::io_error, "cannot write " + json_path);
    out << j.dump(2) << "\n";
    if (!out) throw Error(Errc::io_error, "short write to " + json_path);
}

template <typename T>
static std::vector<T> read_raw(const std::string& raw_path, std::int64_t count) {
    std::ifstream in(raw_path, std::ios::binary);
    if (!in) throw Error(Errc::missing_file, raw_path);
    in.seekg(0, std::ios::end);
    const std::int64_t bytes = static_cast<std::int64_t>(in.tellg());
    const std::int64_t expected = count * static_cast<std::int64_t>(sizeof(T));
    if (bytes != expected)
        throw Error(Errc::size_mismatch, raw_path + ": raw length " + std::to_string(bytes) +
                                             " != expected " + std::to_string(expected));
    in.seekg(0, std::ios::beg);
    std::vector<T> data(static_cast<std::size_t>(count));
    in.read(reinterpret_cast<char*>(data.data()), expected);
    if (!in) throw Error(Errc::io_error, "short read from " + raw_path);
    return data;
}

template <typename T>
static void write_raw(const std::vector<T>& data, const std::string& raw_path) {
    std::ofstream out(raw_path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io_error, "cannot write " + raw_path);
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(T)));
    if (!out) throw Error(Errc::io_error, "short write to " + raw_path);
}

AnyGrid load_volume(const std::string& path) {
    const VolumeHeader h = read_header(path + ".json");
    const std::string raw = path + ".raw";
    switch (h.dtype) {
        case Dtype::int16: {
            HuVolume v;
            v.header = h;
            v.voxels = read_raw<std::int16_t>(raw, h.voxel_count());
            return v;
        }
        case Dtype::uint8: {
            LabelMap v;
            v.header = h;
            v.voxels = read_raw<std::uint8_t>(raw, h.voxel_count());
            return v;
        }
        case Dtype::float32: {
            NormVolume v;
            v.header = h;
            v.voxels = read_raw<float>(raw, h.voxel_count());
            return v;
        }
    }
    throw Error(Errc::header_parse_error, path);
}

HuVolume load_hu_volume(const std::string& path) {
    AnyGrid g = load_volume(path);
    if (auto* v = std::get_if<HuVolume>(&g)) return std::move(*v);
    throw Error(Errc::header_parse_error, path + ": expected dtype int16");
}

LabelMap load_label_map(const std::string& path) {
    AnyGrid g = load_volume(path);
    if (auto* v = std::get_if<LabelMap>(&g)) return std::move(*v);
    throw Error(Errc::header_parse_error, path + ": expected dtype uint8");
}

ActivationMap load_activation_map(const std::string& path) {
    AnyGrid g = load_volume(path);
    if (auto* v = std::get_if<NormVolume>(&g)) return std::move(*v);
    throw Error(Errc::header_parse_error, path + ": expected dtype float32");
}

void save_volume(const HuVolume& v, const std::string& path) {
    check_header(v.header);
    write_header(v.header, path + ".json");
    write_raw(v.voxels, path + ".raw");
}

void save_volume(const LabelMap& v, const std::string& path) {
    check_header(v.header);
    write_header(v.header, path + ".json");
    write_raw(v.voxels, path + ".raw");
}

void save_volume(const NormVolume& v, const std::string& path) {
    check_header(v.header);
    write_header(v.header, path + ".json");
    write_raw(v.voxels, path + ".raw");
}

// --- reorientation -------------------------------------------------------

template <typename T>
Grid<T> reorient(const Grid<T>& g, const std::string& target) {
    if (!valid_orientation_code(g.header.orientation))
        throw Error(Errc::invalid_orientation_code, "'" + g.header.orientation + "'");
    if (!valid_orientation_code(target))
        throw Error(Errc::invalid_orientation_code, "'" + target + "'");
    if (g.header.orientation == target) return g;

    // perm[j]: source axis feeding target axis j; flip[j]: reversed direction.
    int perm[3];
    bool flip[3];
    for (int j = 0; j < 3; ++j) {
        const char want = target[j];
        perm[j] = -1;
        for (int i = 0; i < 3; ++i) {
            const char have = g.header.orientation[static_cast<std::size_t>(i)];
            if (have == want || have == opposite_letter(want)) {
                perm[j] = i;
                flip[j] = (have != want);
                break;
            }
        }
    }

    Grid<T> out;
    out.header = g.header;
    out.header.orientation = target;
    for (int j = 0; j < 3; ++j) {
        out.header.dims[j] = g.header.dims[perm[j]];
        out.header.spacing_mm[j] = g.header.spacing_mm[perm[j]];
    }
    out.voxels.resize(g.voxels.size());

    const auto& sd = g.header.dims;
    int src[3];
    for (int z = 0; z < out.header.dims[2]; ++z) {
        for (int y = 0; y < out.header.dims[1]; ++y) {
            for (int x = 0; x < out.header.dims[0]; ++x) {
                const int c[3] = {x, y, z};
                for (int j = 0; j < 3; ++j)
                    src[perm[j]] = flip[j] ? sd[perm[j]] - 1 - c[j] : c[j];
                out.at(x, y, z) = g.at(src[0], src[1], src[2]);
            }
        }
    }
    return out;
}

template Grid<std::int16_t> reorient(const Grid<std::int16_t>&, const std::string&);
template Grid<std::uint8_t> reorient(const Grid<std::uint8_t>&, const std::string&);
template Grid<float> reorient(const Grid<float>&, const std::string&);

AnyGrid reorient(const AnyGrid& g, const std::string& target) {
    return std::visit([&](const auto& v) -> AnyGrid { return reorient(v, target); }, g);
}

NormVolume clip_normalize(const HuVolume& v) {
    NormVolume out;
    out.header = v.header;
    out.header.dtype = Dtype::float32;
    out.voxels.resize(v.voxels.size());
    const std::int64_t n = v.size();
    TRIAGE_OMP_FOR
    for (std::int64_t i = 0; i < n; ++i) {
        double hu = static_cast<double>(v.voxels[static_cast<std::size_t>(i)]);
        if (hu < -1000.0) hu = -1000.0;
        if (hu > 0.0) hu = 0.0;
        out.voxels[static_cast<std::size_t>(i)] = static_cast<float>((hu + 1000.0) / 1000.0);
    }
    return out;
}

// --- case bundles --------------------------------------------------------

static void check_labels(const LabelMap& m, LabelRole role, const char* name,
                         ValidationReport& rep) {
    const std::uint8_t max = max_legal_label(role);
    std::int64_t bad = 0;
    for (std::uint8_t v : m.voxels)
        if (v > max) ++bad;
    if (bad > 0)
        rep.violations.push_back({"IllegalLabel",
                                  std::string(name) + ": values above " + std::to_string(max),
                                  bad});
}

ValidationReport validate_case(const CaseBundle& b) {
    ValidationReport rep;

    const VolumeHeader& ref = b.volume.header;
    auto check_geom = [&](const VolumeHeader& h, const char* name) {
        if (h.dims != ref.dims)
            rep.violations.push_back({"DimsMismatch", name, 0});
        if (h.spacing_mm != ref.spacing_mm)
            rep.violations.push_back({"SpacingMismatch", name, 0});
        if (h.orientation != ref.orientation)
            rep.violations.push_back({"OrientationMismatch", name, 0});
    };
    check_geom(b.lungs.header, "lungs");
    check_geom(b.lobes.header, "lobes");
    check_geom(b.abnormality.header, "abnormality");
    check_geom(b.texture.header, "texture");
    check_geom(b.activation.header, "activation");
    if (b.bronchial) check_geom(b.bronchial->header, "bronchial");
    if (!rep.violations.empty()) return rep;  // voxel checks need matching dims

    check_labels(b.lungs, LabelRole::lungs, "lungs", rep);
    check_labels(b.lobes, LabelRole::lobes, "lobes", rep);
    check_labels(b.abnormality, LabelRole::abnormality, "abnormality", rep);
    check_labels(b.texture, LabelRole::texture, "texture", rep);
    if (b.bronchial) check_labels(*b.bronchial, LabelRole::bronchial, "bronchial", rep);

    std::int64_t outside = 0;
    for (std::size_t i = 0; i < b.texture.voxels.size(); ++i)
        if (b.texture.voxels[i] != 0 && b.abnormality.voxels[i] == 0) ++outside;
    if (outside > 0)
        rep.violations.push_back({"TextureOutsideAbnormality", "texture voxels not abnormal", outside});

    bool any_lung = false;
    for (std::uint8_t v : b.lungs.voxels)
        if (v != 0) { any_lung = true; break; }
    if (!any_lung) rep.violations.push_back({"EmptyLungs", "lungs mask is all zero", 0});

    return rep;
}

static const char* const kRoleNames[] = {"volume", "lungs", "lobes", "abnormality",
                                         "texture", "activation", "bronchial"};

CaseBundle load_case(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw Error(Errc::missing_file, manifest_path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw Error(Errc::header_parse_error, manifest_path + ": " + e.what());
    }
    const fs::path dir = fs::path(manifest_path).parent_path();
    auto stem = [&](const char* role) -> std::string {
        if (!j.contains(role))
            throw Error(Errc::header_parse_error, manifest_path + ": missing role '" + role + "'");
        return (dir / j.at(role).get<std::string>()).string();
    };

    CaseBundle b;
    try {
        b.case_id = j.at("case_id").get<std::string>();
    } catch (const json::exception& e) {
        throw Error(Errc::header_parse_error, manifest_path + ": " + e.what());
    }
    b.volume = reorient(load_hu_volume(stem("volume")), "RAI");
    b.lungs = reorient(load_label_map(stem("lungs")), "RAI");
    b.lobes = reorient(load_label_map(stem("lobes")), "RAI");
    b.abnormality = reorient(load_label_map(stem("abnormality")), "RAI");
    b.texture = reorient(load_label_map(stem("texture")), "RAI");
    b.activation = reorient(load_activation_map(stem("activation")), "RAI");
    if (j.contains("bronchial") && !j.at("bronchial").is_null())
        b.bronchial = reorient(load_label_map(stem("bronchial")), "RAI");
    if (j.contains("label") && !j.at("label").is_null())
        b.label = parse_case_label(j.at("label").get<std::string>());
    return b;
}

void save_case(const CaseBundle& b, const std::string& dir, const std::string& manifest_name) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(Errc::io_error, dir + ": " + ec.message());

    const fs::path d(dir);
    save_volume(b.volume, (d / "volume").string());
    save_volume(b.lungs, (d / "lungs").string());
    save_volume(b.lobes, (d / "lobes").string());
    save_volume(b.abnormality, (d / "abnormality").string());
    save_volume(b.texture, (d / "texture").string());
    save_volume(b.activation, (d / "activation").string());
    if (b.bronchial) save_volume(*b.bronchial, (d / "bronchial").string());

    json j;
    j["case_id"] = b.case_id;
    for (const char* role : kRoleNames)
        if (std::string(role) != "bronchial" || b.bronchial) j[role] = role;
    if (b.label) j["label"] = case_label_name(*b.label);
    std::ofstream out(d / manifest_name, std::ios::trunc);
    if (!out) throw Error(Errc::io_error, "cannot write manifest in " + dir);
    out << j.dump(2) << "\n";
}

} // namespace triage
