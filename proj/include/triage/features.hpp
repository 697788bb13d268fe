#pragma once

// Clinical feature extraction: turns a validated CaseBundle into the named,
// ordered feature vector used by the classifier.
//
// Counting conventions shared with the synthetic ground-truth generator:
//   volume_cm3 = voxel_count * voxel_volume_mm3 / 1000
//   ratio      = 100 * part_count / whole_count      (0 when whole is empty)
// so equal voxel counts produce bit-identical feature values.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "triage/volume_io.hpp"

namespace triage {

enum class FeatureGroup : int { LungsStats = 0, OpacityStats = 1, OpacityTexture = 2, ShapeLocation = 3 };
inline constexpr int kFeatureGroupCount = 4;

const char* feature_group_name(FeatureGroup g);        // e.g. "Lungs statistics"
const char* feature_group_token(FeatureGroup g);       // e.g. "lungs_stats"
FeatureGroup parse_feature_group(const std::string& token);

enum class FeatureKind { continuous, binary };

enum class AnatomicalStructure : int {
    BothLungs = 0, LeftLung, RightLung, Lobe1, Lobe2, Lobe3, Lobe4, Lobe5
};
inline constexpr int kStructureCount = 8;
const char* structure_token(AnatomicalStructure s);  // total,left,right,lobe1..lobe5

// HU windows: low [-1000,-950], functional (-950,-600], high (-600,-250].
// Lower-exclusive except the low window, so a voxel lands in at most one.
inline constexpr int kHuWindowCount = 3;
const char* hu_window_token(int w);  // low,functional,high
int hu_window_of(std::int16_t hu);   // -1 when in no window

struct FeatureDef {
    std::string id;
    FeatureGroup group;
    FeatureKind kind;
};

class FeatureSchema {
public:
    static const FeatureSchema& v1();

    const std::string& version() const { return version_; }
    int size() const { return static_cast<int>(defs_.size()); }
    const FeatureDef& def(int i) const { return defs_[static_cast<std::size_t>(i)]; }
    const std::vector<FeatureDef>& defs() const { return defs_; }
    int index_of(const std::string& id) const;  // -1 when unknown
    int group_offset(FeatureGroup g) const;
    int group_size(FeatureGroup g) const;

private:
    FeatureSchema() = default;
    std::string version_;
    std::vector<FeatureDef> defs_;
    int group_offset_[kFeatureGroupCount] = {};
    int group_size_[kFeatureGroupCount] = {};
};

struct FeatureVector {
    std::string case_id;
    std::optional<CaseLabel> label;
    std::vector<double> values;  // schema order
};

struct FeatureTable {
    std::string schema_version;
    std::vector<FeatureVector> rows;
};

struct ExtractConfig {
    double shell_depth_mm = 15.0;
    double bronchial_margin_mm = 10.0;
    double roundedness_min = 0.5;
    double laterality_min_cm3 = 1.0;
    int connectivity = 26;
};

ExtractConfig load_extract_config(const std::string& path);
void save_extract_config(const ExtractConfig& cfg, const std::string& path);

// Group partials, each aligned to the schema slice of its group.
std::vector<double> lung_statistics(const CaseBundle& bundle);
std::vector<double> opacity_statistics(const CaseBundle& bundle, const ExtractConfig& cfg);
std::vector<double> texture_features(const CaseBundle& bundle);
std::vector<double> shape_location_features(const CaseBundle& bundle, const ExtractConfig& cfg);

// Validates, extracts all four groups, concatenates in schema order.
// Throws ExtractionRejected when validate_case reports violations.
FeatureVector extract_features(const CaseBundle& bundle, const ExtractConfig& cfg,
                               std::vector<std::string>* log = nullptr);

// Feature table CSV: header "case_id,label,<feature ids in schema order>".
void save_feature_table(const FeatureTable& table, const std::string& path,
                        const std::string& comment = {});
FeatureTable load_feature_table(const std::string& path);

namespace reference {

// Single-threaded single-pass extraction used to cross-check the parallel
// pipeline; shares only the counting conventions above.
FeatureVector extract_features(const CaseBundle& bundle, const ExtractConfig& cfg);

} // namespace reference

} // namespace triage
