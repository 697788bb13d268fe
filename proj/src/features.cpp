#include "triage/features.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "triage/detail/format.hpp"
#include "triage/errors.hpp"
#include "triage/morphology.hpp"
#include "triage/parallel.hpp"

namespace triage {

using json = nlohmann::json;

const char* feature_group_name(FeatureGroup g) {
    switch (g) {
        case FeatureGroup::LungsStats: return "Lungs statistics";
        case FeatureGroup::OpacityStats: return "Opacities statistics";
        case FeatureGroup::OpacityTexture: return "Opacities texture";
        case FeatureGroup::ShapeLocation: return "Location & Shape";
    }
    return "?";
}

const char* feature_group_token(FeatureGroup g) {
    switch (g) {
        case FeatureGroup::LungsStats: return "lungs_stats";
        case FeatureGroup::OpacityStats: return "opacity_stats";
        case FeatureGroup::OpacityTexture: return "opacity_texture";
        case FeatureGroup::ShapeLocation: return "shape_location";
    }
    return "?";
}

FeatureGroup parse_feature_group(const std::string& token) {
    for (int g = 0; g < kFeatureGroupCount; ++g) {
        auto fg = static_cast<FeatureGroup>(g);
        if (token == feature_group_token(fg)) return fg;
    }
    throw Error(Errc::bad_config, "unknown feature group '" + token +
                                      "' (expected lungs_stats|opacity_stats|opacity_texture|shape_location)");
}

const char* structure_token(AnatomicalStructure s) {
    static constexpr const char* names[kStructureCount] = {
        "total", "left", "right", "lobe1", "lobe2", "lobe3", "lobe4", "lobe5"};
    return names[static_cast<int>(s)];
}

const char* hu_window_token(int w) {
    static constexpr const char* names[kHuWindowCount] = {"low", "functional", "high"};
    return names[w];
}

int hu_window_of(std::int16_t hu) {
    if (hu >= -1000 && hu <= -950) return 0;
    if (hu > -950 && hu <= -600) return 1;
    if (hu > -600 && hu <= -250) return 2;
    return -1;
}

namespace {

constexpr const char* kTextureToken[2] = {"GGO", "consolidation"};

} // namespace

const FeatureSchema& FeatureSchema::v1() {
    static const FeatureSchema schema = [] {
        FeatureSchema s;
        s.version_ = "v1";
        auto add = [&s](std::string id, FeatureGroup g, FeatureKind k) {
            s.defs_.push_back({std::move(id), g, k});
        };
        // Lungs statistics: per structure its volume, then per HU window the
        // windowed volume and its share of the structure.
        for (int st = 0; st < kStructureCount; ++st) {
            std::string stn = structure_token(static_cast<AnatomicalStructure>(st));
            add("lungs_" + stn + "_vol", FeatureGroup::LungsStats, FeatureKind::continuous);
            for (int w = 0; w < kHuWindowCount; ++w) {
                std::string wn = hu_window_token(w);
                add("hu_" + wn + "_" + stn + "_vol", FeatureGroup::LungsStats, FeatureKind::continuous);
                add("hu_" + wn + "_" + stn + "_ratio", FeatureGroup::LungsStats, FeatureKind::continuous);
            }
        }
        // Opacities statistics: abnormal load per structure + global scalars.
        for (int st = 0; st < kStructureCount; ++st) {
            std::string stn = structure_token(static_cast<AnatomicalStructure>(st));
            add("abn_" + stn + "_vol", FeatureGroup::OpacityStats, FeatureKind::continuous);
            add("abn_" + stn + "_ratio", FeatureGroup::OpacityStats, FeatureKind::continuous);
        }
        add("pos_ratio", FeatureGroup::OpacityStats, FeatureKind::continuous);
        add("activation_sum", FeatureGroup::OpacityStats, FeatureKind::continuous);
        add("activation_volume_weighted", FeatureGroup::OpacityStats, FeatureKind::continuous);
        // Opacities texture: GGO / consolidation split plus dominance fractions.
        for (int c = 0; c < 2; ++c) {
            for (int st = 0; st < kStructureCount; ++st) {
                std::string stn = structure_token(static_cast<AnatomicalStructure>(st));
                add(std::string(kTextureToken[c]) + "_" + stn + "_vol", FeatureGroup::OpacityTexture,
                    FeatureKind::continuous);
                add(std::string(kTextureToken[c]) + "_" + stn + "_ratio", FeatureGroup::OpacityTexture,
                    FeatureKind::continuous);
            }
        }
        add("GGO_dominance", FeatureGroup::OpacityTexture, FeatureKind::continuous);
        add("consolidation_dominance", FeatureGroup::OpacityTexture, FeatureKind::continuous);
        // Location & shape.
        add("focal_GGO", FeatureGroup::ShapeLocation, FeatureKind::binary);
        add("unilateral_left", FeatureGroup::ShapeLocation, FeatureKind::binary);
        add("unilateral_right", FeatureGroup::ShapeLocation, FeatureKind::binary);
        add("bilateral", FeatureGroup::ShapeLocation, FeatureKind::binary);
        add("peripheral_ratio", FeatureGroup::ShapeLocation, FeatureKind::continuous);

        int off = 0;
        for (int g = 0; g < kFeatureGroupCount; ++g) {
            s.group_offset_[g] = off;
            int n = 0;
            for (const auto& d : s.defs_)
                if (static_cast<int>(d.group) == g) ++n;
            s.group_size_[g] = n;
            off += n;
        }
        return s;
    }();
    return schema;
}

int FeatureSchema::index_of(const std::string& id) const {
    for (std::size_t i = 0; i < defs_.size(); ++i)
        if (defs_[i].id == id) return static_cast<int>(i);
    return -1;
}

int FeatureSchema::group_offset(FeatureGroup g) const { return group_offset_[static_cast<int>(g)]; }
int FeatureSchema::group_size(FeatureGroup g) const { return group_size_[static_cast<int>(g)]; }

ExtractConfig load_extract_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::missing_file, "cannot open extraction config: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw Error(Errc::bad_config, path + ": " + e.what());
    }
    ExtractConfig cfg;
    cfg.shell_depth_mm = j.value("shell_depth_mm", cfg.shell_depth_mm);
    cfg.bronchial_margin_mm = j.value("bronchial_margin_mm", cfg.bronchial_margin_mm);
    cfg.roundedness_min = j.value("roundedness_min", cfg.roundedness_min);
    cfg.laterality_min_cm3 = j.value("laterality_min_cm3", cfg.laterality_min_cm3);
    cfg.connectivity = j.value("connectivity", cfg.connectivity);
    if (cfg.connectivity != 6 && cfg.connectivity != 26)
        throw Error(Errc::bad_config, path + ": connectivity must be 6 or 26");
    if (cfg.shell_depth_mm <= 0.0) throw Error(Errc::bad_config, path + ": shell_depth_mm must be > 0");
    return cfg;
}

void save_extract_config(const ExtractConfig& cfg, const std::string& path) {
    json j;
    j["shell_depth_mm"] = cfg.shell_depth_mm;
    j["bronchial_margin_mm"] = cfg.bronchial_margin_mm;
    j["roundedness_min"] = cfg.roundedness_min;
    j["laterality_min_cm3"] = cfg.laterality_min_cm3;
    j["connectivity"] = cfg.connectivity;
    std::ofstream out(path);
    if (!out) throw Error(Errc::io_error, "cannot write " + path);
    out << j.dump(2) << '\n';
}

namespace {

// Everything countable in one sweep over the volume. Counts are exact int64,
// so only the activation sum needs the ordered chunk reduction.
struct VoxelCounts {
    std::int64_t structure[kStructureCount] = {};
    std::int64_t window[kStructureCount][kHuWindowCount] = {};
    std::int64_t abn[kStructureCount] = {};
    std::int64_t tex[2][kStructureCount] = {};
    std::int64_t shell_abn = 0;
    std::int64_t lung_slices = 0;
    std::int64_t abn_slices = 0;
    double activation_sum = 0.0;

    void merge(const VoxelCounts& o) {
        for (int s = 0; s < kStructureCount; ++s) {
            structure[s] += o.structure[s];
            abn[s] += o.abn[s];
            for (int w = 0; w < kHuWindowCount; ++w) window[s][w] += o.window[s][w];
            for (int c = 0; c < 2; ++c) tex[c][s] += o.tex[c][s];
        }
        shell_abn += o.shell_abn;
        lung_slices += o.lung_slices;
        abn_slices += o.abn_slices;
        activation_sum += o.activation_sum;
    }
};

void count_voxel(VoxelCounts& c, std::int16_t hu, std::uint8_t lung, std::uint8_t lobe,
                 std::uint8_t ab, std::uint8_t tx, bool in_shell) {
    if (lung == 0) return;
    const int w = hu_window_of(hu);
    const bool abnormal = ab > 0;
    auto tally = [&](AnatomicalStructure s) {
        const int si = static_cast<int>(s);
        ++c.structure[si];
        if (w >= 0) ++c.window[si][w];
        if (abnormal) {
            ++c.abn[si];
            if (tx >= 1 && tx <= 2) ++c.tex[tx - 1][si];
        }
    };
    tally(AnatomicalStructure::BothLungs);
    tally(lung == 1 ? AnatomicalStructure::LeftLung : AnatomicalStructure::RightLung);
    if (lobe >= 1 && lobe <= 5)
        tally(static_cast<AnatomicalStructure>(static_cast<int>(AnatomicalStructure::Lobe1) + lobe - 1));
    if (abnormal && in_shell) ++c.shell_abn;
}

VoxelCounts count_all(const CaseBundle& bundle, const BinaryMask& shell) {
    const auto& h = bundle.volume.header;
    const int nz = h.dims[2];
    const std::int64_t slice = static_cast<std::int64_t>(h.dims[0]) * h.dims[1];
    std::vector<VoxelCounts> partial(static_cast<std::size_t>(nz));
    parallel_for_chunks(nz, [&](int z) {
        VoxelCounts& c = partial[static_cast<std::size_t>(z)];
        const std::int64_t base = slice * z;
        bool any_lung = false, any_abn = false;
        double act = 0.0;
        for (std::int64_t i = base; i < base + slice; ++i) {
            const std::uint8_t lung = bundle.lungs.voxels[static_cast<std::size_t>(i)];
            const std::uint8_t ab = bundle.abnormality.voxels[static_cast<std::size_t>(i)];
            act += bundle.activation.voxels[static_cast<std::size_t>(i)];
            count_voxel(c, bundle.volume.voxels[static_cast<std::size_t>(i)], lung,
                        bundle.lobes.voxels[static_cast<std::size_t>(i)], ab,
                        bundle.texture.voxels[static_cast<std::size_t>(i)],
                        shell.voxels[static_cast<std::size_t>(i)] != 0);
            if (lung > 0) {
                any_lung = true;
                if (ab > 0) any_abn = true;
            }
        }
        c.activation_sum = act;
        c.lung_slices = any_lung ? 1 : 0;
        c.abn_slices = any_abn ? 1 : 0;
    });
    VoxelCounts total;
    for (const auto& p : partial) total.merge(p);
    return total;
}

double ratio_pct(std::int64_t part, std::int64_t whole) {
    return whole > 0 ? 100.0 * static_cast<double>(part) / static_cast<double>(whole) : 0.0;
}

BinaryMask abnormal_in_lungs(const CaseBundle& bundle) {
    BinaryMask m;
    m.header = bundle.volume.header;
    m.header.dtype = Dtype::uint8;
    m.voxels.resize(bundle.volume.voxels.size());
    const std::size_t n = m.voxels.size();
    TRIAGE_OMP_FOR
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i)
        m.voxels[static_cast<std::size_t>(i)] =
            (bundle.abnormality.voxels[static_cast<std::size_t>(i)] > 0 &&
             bundle.lungs.voxels[static_cast<std::size_t>(i)] > 0)
                ? 1
                : 0;
    return m;
}

BinaryMask texture_in_lungs(const CaseBundle& bundle, std::uint8_t cls) {
    BinaryMask m;
    m.header = bundle.volume.header;
    m.header.dtype = Dtype::uint8;
    m.voxels.resize(bundle.volume.voxels.size());
    const std::size_t n = m.voxels.size();
    TRIAGE_OMP_FOR
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i)
        m.voxels[static_cast<std::size_t>(i)] =
            (bundle.texture.voxels[static_cast<std::size_t>(i)] == cls &&
             bundle.lungs.voxels[static_cast<std::size_t>(i)] > 0)
                ? 1
                : 0;
    return m;
}

// Σ over abnormal components of component volume (cm³) × mean activation,
// accumulated in canonical component order.
double activation_volume_weighted(const CaseBundle& bundle, const ComponentSet& comps) {
    const double vox_cm3 = bundle.volume.header.voxel_volume_mm3() / 1000.0;
    const auto lists = component_voxel_lists(comps);
    double out = 0.0;
    for (const auto& list : lists) {
        double act = 0.0;
        for (std::int64_t i : list) act += bundle.activation.voxels[static_cast<std::size_t>(i)];
        const double vol = static_cast<double>(list.size()) * vox_cm3;
        out += vol * (act / static_cast<double>(list.size()));
    }
    return out;
}

bool focal_ggo_present(const CaseBundle& bundle, const ComponentSet& ggo, double roundedness_min) {
    const auto lists = component_voxel_lists(ggo);
    for (const auto& list : lists) {
        if (max_axial_diameter(list, bundle.volume.header) < 30.0 &&
            roundedness(list, bundle.volume.header) >= roundedness_min)
            return true;
    }
    return false;
}

void note(std::vector<std::string>* log, std::string msg) {
    if (log) log->push_back(std::move(msg));
}

std::vector<double> assemble(const CaseBundle& bundle, const VoxelCounts& c, const ExtractConfig& cfg,
                             const ComponentSet& abn_comps, const ComponentSet& ggo_comps,
                             FeatureGroup group, std::vector<std::string>* log) {
    const auto& schema = FeatureSchema::v1();
    const double vox_cm3 = bundle.volume.header.voxel_volume_mm3() / 1000.0;
    auto vol_cm3 = [&](std::int64_t count) { return static_cast<double>(count) * vox_cm3; };

    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(schema.group_size(group)));
    switch (group) {
        case FeatureGroup::LungsStats: {
            for (int s = 0; s < kStructureCount; ++s) {
                if (c.structure[s] == 0)
                    note(log, std::string("empty structure '") +
                                  structure_token(static_cast<AnatomicalStructure>(s)) +
                                  "': volume and ratios emitted as 0");
                out.push_back(vol_cm3(c.structure[s]));
                for (int w = 0; w < kHuWindowCount; ++w) {
                    out.push_back(vol_cm3(c.window[s][w]));
                    out.push_back(ratio_pct(c.window[s][w], c.structure[s]));
                }
            }
            break;
        }
        case FeatureGroup::OpacityStats: {
            for (int s = 0; s < kStructureCount; ++s) {
                out.push_back(vol_cm3(c.abn[s]));
                out.push_back(ratio_pct(c.abn[s], c.structure[s]));
            }
            out.push_back(c.lung_slices > 0
                              ? static_cast<double>(c.abn_slices) / static_cast<double>(c.lung_slices)
                              : 0.0);
            out.push_back(c.activation_sum);
            out.push_back(activation_volume_weighted(bundle, abn_comps));
            break;
        }
        case FeatureGroup::OpacityTexture: {
            for (int cls = 0; cls < 2; ++cls) {
                for (int s = 0; s < kStructureCount; ++s) {
                    out.push_back(vol_cm3(c.tex[cls][s]));
                    out.push_back(ratio_pct(c.tex[cls][s], c.structure[s]));
                }
            }
            const std::int64_t abn_total = c.abn[static_cast<int>(AnatomicalStructure::BothLungs)];
            for (int cls = 0; cls < 2; ++cls)
                out.push_back(abn_total > 0 ? static_cast<double>(
                                                  c.tex[cls][static_cast<int>(AnatomicalStructure::BothLungs)]) /
                                                  static_cast<double>(abn_total)
                                            : 0.0);
            break;
        }
        case FeatureGroup::ShapeLocation: {
            out.push_back(focal_ggo_present(bundle, ggo_comps, cfg.roundedness_min) ? 1.0 : 0.0);
            const double left = vol_cm3(c.abn[static_cast<int>(AnatomicalStructure::LeftLung)]);
            const double right = vol_cm3(c.abn[static_cast<int>(AnatomicalStructure::RightLung)]);
            const bool l = left > cfg.laterality_min_cm3;
            const bool r = right > cfg.laterality_min_cm3;
            out.push_back(l && !r ? 1.0 : 0.0);
            out.push_back(r && !l ? 1.0 : 0.0);
            out.push_back(l && r ? 1.0 : 0.0);
            out.push_back(ratio_pct(c.shell_abn, c.abn[static_cast<int>(AnatomicalStructure::BothLungs)]));
            break;
        }
    }
    return out;
}

struct ExtractScratch {
    VoxelCounts counts;
    ComponentSet abn_comps;
    ComponentSet ggo_comps;
};

ExtractScratch run_extraction(const CaseBundle& bundle, const ExtractConfig& cfg) {
    const BinaryMask* bronchial = bundle.bronchial ? &*bundle.bronchial : nullptr;
    const BinaryMask shell =
        peripheral_shell(bundle.lungs, cfg.shell_depth_mm, bronchial, cfg.bronchial_margin_mm);
    ExtractScratch s;
    s.counts = count_all(bundle, shell);
    s.abn_comps = connected_components(abnormal_in_lungs(bundle), cfg.connectivity);
    s.ggo_comps = connected_components(texture_in_lungs(bundle, 1), cfg.connectivity);
    return s;
}

void ensure_valid(const CaseBundle& bundle) {
    const ValidationReport report = validate_case(bundle);
    if (!report.ok()) {
        std::string what = "case '" + bundle.case_id + "' failed validation:";
        for (const auto& v : report.violations) what += " [" + v.kind + "] " + v.detail + ";";
        throw Error(Errc::extraction_rejected, what);
    }
}

} // namespace

std::vector<double> lung_statistics(const CaseBundle& bundle) {
    ensure_valid(bundle);
    ExtractConfig cfg;
    auto s = run_extraction(bundle, cfg);
    return assemble(bundle, s.counts, cfg, s.abn_comps, s.ggo_comps, FeatureGroup::LungsStats, nullptr);
}

std::vector<double> opacity_statistics(const CaseBundle& bundle, const ExtractConfig& cfg) {
    ensure_valid(bundle);
    auto s = run_extraction(bundle, cfg);
    return assemble(bundle, s.counts, cfg, s.abn_comps, s.ggo_comps, FeatureGroup::OpacityStats, nullptr);
}

std::vector<double> texture_features(const CaseBundle& bundle) {
    ensure_valid(bundle);
    ExtractConfig cfg;
    auto s = run_extraction(bundle, cfg);
    return assemble(bundle, s.counts, cfg, s.abn_comps, s.ggo_comps, FeatureGroup::OpacityTexture, nullptr);
}

std::vector<double> shape_location_features(const CaseBundle& bundle, const ExtractConfig& cfg) {
    ensure_valid(bundle);
    auto s = run_extraction(bundle, cfg);
    return assemble(bundle, s.counts, cfg, s.abn_comps, s.ggo_comps, FeatureGroup::ShapeLocation, nullptr);
}

FeatureVector extract_features(const CaseBundle& bundle, const ExtractConfig& cfg,
                               std::vector<std::string>* log) {
    ensure_valid(bundle);
    auto s = run_extraction(bundle, cfg);
    FeatureVector fv;
    fv.case_id = bundle.case_id;
    fv.label = bundle.label;
    for (int g = 0; g < kFeatureGroupCount; ++g) {
        auto part = assemble(bundle, s.counts, cfg, s.abn_comps, s.ggo_comps,
                             static_cast<FeatureGroup>(g), g == 0 ? log : nullptr);
        fv.values.insert(fv.values.end(), part.begin(), part.end());
    }
    return fv;
}

void save_feature_table(const FeatureTable& table, const std::string& path,
                        const std::string& comment) {
    const auto& schema = FeatureSchema::v1();
    if (table.schema_version != schema.version())
        throw Error(Errc::schema_mismatch,
                    "feature table schema '" + table.schema_version + "' != '" + schema.version() + "'");
    std::ostringstream out;
    std::size_t cpos = 0;
    while (cpos < comment.size()) {
        const std::size_t nl = comment.find('\n', cpos);
        out << "# " << comment.substr(cpos, nl == std::string::npos ? nl : nl - cpos) << '\n';
        if (nl == std::string::npos) break;
        cpos = nl + 1;
    }
    out << "case_id,label";
    for (const auto& d : schema.defs()) out << ',' << d.id;
    out << '\n';
    for (const auto& row : table.rows) {
        if (static_cast<int>(row.values.size()) != schema.size())
            throw Error(Errc::schema_mismatch, "row '" + row.case_id + "' has " +
                                                   std::to_string(row.values.size()) + " values, schema has " +
                                                   std::to_string(schema.size()));
        out << row.case_id << ',' << (row.label ? case_label_name(*row.label) : "");
        for (double v : row.values) out << ',' << detail::shortest_double(v);
        out << '\n';
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(Errc::io_error, "cannot write " + path);
    f << out.str();
    if (!f) throw Error(Errc::io_error, "short write: " + path);
}

FeatureTable load_feature_table(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error(Errc::missing_file, "cannot open feature table: " + path);
    const auto& schema = FeatureSchema::v1();

    std::string line;
    do {
        if (!std::getline(f, line)) throw Error(Errc::parse_error, path + ": empty file");
        if (!line.empty() && line.back() == '\r') line.pop_back();
    } while (!line.empty() && line[0] == '#'); // comment lines carry run provenance

    std::vector<std::string> cols;
    std::stringstream header(line);
    std::string cell;
    while (std::getline(header, cell, ',')) cols.push_back(cell);
    if (cols.size() < 2 || cols[0] != "case_id" || cols[1] != "label")
        throw Error(Errc::schema_mismatch,
                    path + ": header does not match feature schema " + schema.version());
    if (cols.size() != static_cast<std::size_t>(schema.size()) + 2) {
        std::string detail = path + ": header has " + std::to_string(cols.size() - 2) +
                             " feature columns, schema " + schema.version() + " has " +
                             std::to_string(schema.size());
        for (const auto& d : schema.defs()) {
            if (std::find(cols.begin() + 2, cols.end(), d.id) == cols.end()) {
                detail += "; missing '" + d.id + "'";
                break;
            }
        }
        for (std::size_t i = 2; i < cols.size(); ++i) {
            if (schema.index_of(cols[i]) < 0) {
                detail += "; unexpected '" + cols[i] + "'";
                break;
            }
        }
        throw Error(Errc::schema_mismatch, detail);
    }
    for (int i = 0; i < schema.size(); ++i) {
        if (cols[static_cast<std::size_t>(i) + 2] != schema.def(i).id)
            throw Error(Errc::schema_mismatch, path + ": column " + std::to_string(i + 2) + " is '" +
                                                   cols[static_cast<std::size_t>(i) + 2] + "', expected '" +
                                                   schema.def(i).id + "'");
    }

    FeatureTable table;
    table.schema_version = schema.version();
    int line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        FeatureVector row;
        std::size_t pos = 0;
        auto next_cell = [&]() -> std::string {
            const std::size_t comma = line.find(',', pos);
            std::string c = line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
            pos = comma == std::string::npos ? line.size() + 1 : comma + 1;
            return c;
        };
        row.case_id = next_cell();
        const std::string label = next_cell();
        if (!label.empty()) row.label = parse_case_label(label);
        row.values.reserve(static_cast<std::size_t>(schema.size()));
        for (int i = 0; i < schema.size(); ++i) {
            if (pos > line.size())
                throw Error(Errc::parse_error,
                            path + ":" + std::to_string(line_no) + ": too few columns");
            const std::string c = next_cell();
            double v = 0.0;
            auto [ptr, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
            if (ec != std::errc() || ptr != c.data() + c.size())
                throw Error(Errc::parse_error, path + ":" + std::to_string(line_no) +
                                                   ": bad number '" + c + "' in column " + schema.def(i).id);
            row.values.push_back(v);
        }
        if (pos <= line.size())
            throw Error(Errc::parse_error, path + ":" + std::to_string(line_no) + ": too many columns");
        table.rows.push_back(std::move(row));
    }
    return table;
}

namespace reference {

FeatureVector extract_features(const CaseBundle& bundle, const ExtractConfig& cfg) {
    const ValidationReport report = validate_case(bundle);
    if (!report.ok())
        throw Error(Errc::extraction_rejected, "case '" + bundle.case_id + "' failed validation");

    const auto& h = bundle.volume.header;
    const std::int64_t n = h.voxel_count();
    const double vox_cm3 = h.voxel_volume_mm3() / 1000.0;

    const BinaryMask* bronchial = bundle.bronchial ? &*bundle.bronchial : nullptr;
    const BinaryMask shell =
        reference::peripheral_shell(bundle.lungs, cfg.shell_depth_mm, bronchial, cfg.bronchial_margin_mm);

    std::int64_t structure[kStructureCount] = {};
    std::int64_t window[kStructureCount][kHuWindowCount] = {};
    std::int64_t abn[kStructureCount] = {};
    std::int64_t tex[2][kStructureCount] = {};
    std::int64_t shell_abn = 0;
    std::vector<char> slice_lung(static_cast<std::size_t>(h.dims[2]), 0);
    std::vector<char> slice_abn(static_cast<std::size_t>(h.dims[2]), 0);
    double act_sum = 0.0;

    for (std::int64_t i = 0; i < n; ++i) {
        const std::size_t ui = static_cast<std::size_t>(i);
        act_sum += bundle.activation.voxels[ui];
        const std::uint8_t lung = bundle.lungs.voxels[ui];
        if (lung == 0) continue;
        const int z = static_cast<int>(i / (static_cast<std::int64_t>(h.dims[0]) * h.dims[1]));
        slice_lung[static_cast<std::size_t>(z)] = 1;
        const std::uint8_t ab = bundle.abnormality.voxels[ui];
        if (ab > 0) slice_abn[static_cast<std::size_t>(z)] = 1;
        const int w = hu_window_of(bundle.volume.voxels[ui]);
        const std::uint8_t tx = bundle.texture.voxels[ui];
        std::vector<int> members{static_cast<int>(AnatomicalStructure::BothLungs),
                                 lung == 1 ? static_cast<int>(AnatomicalStructure::LeftLung)
                                           : static_cast<int>(AnatomicalStructure::RightLung)};
        const std::uint8_t lobe = bundle.lobes.voxels[ui];
        if (lobe >= 1 && lobe <= 5)
            members.push_back(static_cast<int>(AnatomicalStructure::Lobe1) + lobe - 1);
        for (int s : members) {
            ++structure[s];
            if (w >= 0) ++window[s][w];
            if (ab > 0) {
                ++abn[s];
                if (tx >= 1 && tx <= 2) ++tex[tx - 1][s];
            }
        }
        if (ab > 0 && shell.voxels[ui] != 0) ++shell_abn;
    }

    std::int64_t lung_slices = 0, abn_slices = 0;
    for (int z = 0; z < h.dims[2]; ++z) {
        lung_slices += slice_lung[static_cast<std::size_t>(z)];
        abn_slices += slice_abn[static_cast<std::size_t>(z)];
    }

    BinaryMask abn_mask, ggo_mask;
    abn_mask.header = ggo_mask.header = h;
    abn_mask.header.dtype = ggo_mask.header.dtype = Dtype::uint8;
    abn_mask.voxels.resize(static_cast<std::size_t>(n));
    ggo_mask.voxels.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const std::size_t ui = static_cast<std::size_t>(i);
        const bool in_lung = bundle.lungs.voxels[ui] > 0;
        abn_mask.voxels[ui] = (in_lung && bundle.abnormality.voxels[ui] > 0) ? 1 : 0;
        ggo_mask.voxels[ui] = (in_lung && bundle.texture.voxels[ui] == 1) ? 1 : 0;
    }
    const ComponentSet abn_comps = reference::connected_components(abn_mask, cfg.connectivity);
    const ComponentSet ggo_comps = reference::connected_components(ggo_mask, cfg.connectivity);

    double act_vw = 0.0;
    {
        const auto lists = component_voxel_lists(abn_comps);
        for (const auto& list : lists) {
            double a = 0.0;
            for (std::int64_t i : list) a += bundle.activation.voxels[static_cast<std::size_t>(i)];
            act_vw += static_cast<double>(list.size()) * vox_cm3 * (a / static_cast<double>(list.size()));
        }
    }

    bool focal = false;
    for (const auto& list : component_voxel_lists(ggo_comps)) {
        if (max_axial_diameter(list, h) < 30.0 && roundedness(list, h) >= cfg.roundedness_min) {
            focal = true;
            break;
        }
    }

    FeatureVector fv;
    fv.case_id = bundle.case_id;
    fv.label = bundle.label;
    auto vol = [&](std::int64_t c) { return static_cast<double>(c) * vox_cm3; };
    for (int s = 0; s < kStructureCount; ++s) {
        fv.values.push_back(vol(structure[s]));
        for (int w = 0; w < kHuWindowCount; ++w) {
            fv.values.push_back(vol(window[s][w]));
            fv.values.push_back(ratio_pct(window[s][w], structure[s]));
        }
    }
    for (int s = 0; s < kStructureCount; ++s) {
        fv.values.push_back(vol(abn[s]));
        fv.values.push_back(ratio_pct(abn[s], structure[s]));
    }
    fv.values.push_back(lung_slices > 0 ? static_cast<double>(abn_slices) / static_cast<double>(lung_slices)
                                        : 0.0);
    fv.values.push_back(act_sum);
    fv.values.push_back(act_vw);
    for (int c = 0; c < 2; ++c) {
        for (int s = 0; s < kStructureCount; ++s) {
            fv.values.push_back(vol(tex[c][s]));
            fv.values.push_back(ratio_pct(tex[c][s], structure[s]));
        }
    }
    const std::int64_t abn_total = abn[static_cast<int>(AnatomicalStructure::BothLungs)];
    for (int c = 0; c < 2; ++c)
        fv.values.push_back(abn_total > 0
                                ? static_cast<double>(tex[c][static_cast<int>(AnatomicalStructure::BothLungs)]) /
                                      static_cast<double>(abn_total)
                                : 0.0);
    fv.values.push_back(focal ? 1.0 : 0.0);
    const double left = vol(abn[static_cast<int>(AnatomicalStructure::LeftLung)]);
    const double right = vol(abn[static_cast<int>(AnatomicalStructure::RightLung)]);
    const bool l = left > cfg.laterality_min_cm3;
    const bool r = right > cfg.laterality_min_cm3;
    fv.values.push_back(l && !r ? 1.0 : 0.0);
    fv.values.push_back(r && !l ? 1.0 : 0.0);
    fv.values.push_back(l && r ? 1.0 : 0.0);
    fv.values.push_back(ratio_pct(shell_abn, abn_total));
    return fv;
}

} // namespace reference

} // namespace triage
