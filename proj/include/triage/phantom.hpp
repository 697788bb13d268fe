#pragma once

// Deterministic synthetic case generator with analytically known ground
// truth. Lungs are two ellipsoids with z-plane lobe partitions; lesions are
// spheres/ellipsoids painted into the masks. The ground truth is computed by
// an independent per-voxel oracle on the generated masks — it never calls the
// production morphology or feature code.
//
// HU levels, activation levels, spacings, and jitter grids are multiples of
// 1/8, so every accumulated sum is exact in double precision and counting
// features match production extraction bit-for-bit.

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "triage/features.hpp"
#include "triage/volume_io.hpp"

namespace triage {

struct PhantomLung {
    std::array<double, 3> center_mm{};
    std::array<double, 3> radii_mm{};
};

struct PhantomLesion {
    int texture = 1;  // 1 = GGO, 2 = consolidation
    std::array<double, 3> center_mm{};
    std::array<double, 3> radii_mm{};
    double hu_level = -650.0;   // GGO in [-800,-500], consolidation in [-100,0]
    double activation = 0.5;    // painted into the activation map, in [0,1]
    bool peripheral = false;    // generator intent, recorded only
};

struct PhantomSpec {
    std::string case_id = "case";
    CaseLabel label = CaseLabel::covid;
    std::array<int, 3> dims{48, 48, 40};
    std::array<double, 3> spacing_mm{2.0, 2.0, 2.5};
    std::array<PhantomLung, 2> lungs{};  // [0] = left (label 1), [1] = right (label 2)
    double left_lobe_split = 0.5;        // z fraction through the left lung
    std::array<double, 2> right_lobe_splits{0.375, 0.6875};
    double parenchyma_hu = -880.0;
    double noise_sigma_hu = 12.0;
    std::vector<PhantomLesion> lesions;
    std::uint64_t seed = 0;
};

struct GroundTruth {
    FeatureVector expected;         // schema order; case_id and label filled
    std::vector<double> tolerance;  // per feature; 0 = exact
    CaseLabel label = CaseLabel::covid;
};

// Schema-aligned tolerance sheet: 0 everywhere except peripheral_ratio,
// which carries the declared voxelization allowance (percentage points).
std::vector<double> ground_truth_tolerances();

// The documented per-class defaults: covid = four peripheral GGO spheres
// split across the lungs; other = one central consolidation in the right lung.
PhantomSpec default_phantom_spec(CaseLabel label, std::uint64_t seed);

// Rasterize + per-voxel oracle. Throws LesionOutsideLungs when a lesion voxel
// falls outside the rasterized lungs.
std::pair<CaseBundle, GroundTruth> generate_case(const PhantomSpec& spec);

enum class CorpusProfile {
    standard,      // overlapping per-feature marginals, jointly separable
    shape_signal,  // classes differ only in lesion placement (peripheral vs central)
};
const char* corpus_profile_token(CorpusProfile p);
CorpusProfile parse_corpus_profile(const std::string& token);

// Jitter ranges for corpus generation. All continuous draws snap to 1/8
// grids; lesion counts are inclusive integer ranges.
struct CorpusRanges {
    std::array<double, 2> lung_radius_jitter_mm{-2.0, 2.0};
    std::array<double, 2> parenchyma_hu{-930.0, -870.0};
    std::array<double, 2> noise_sigma_hu{8.0, 16.0};
    std::array<int, 2> covid_lesions_per_lung{2, 3};
    std::array<int, 2> other_lesions{1, 2};
    std::array<double, 2> ggo_radius_mm{5.5, 9.0};
    std::array<double, 2> consolidation_radius_mm{8.0, 13.0};
    std::array<double, 2> ggo_hu{-775.0, -525.0};
    std::array<double, 2> consolidation_hu{-100.0, -25.0};
    std::array<double, 2> covid_activation{0.5, 1.0};
    std::array<double, 2> other_activation{0.25, 0.75};
};

struct CorpusCase {
    std::string case_id;
    CaseLabel label = CaseLabel::covid;
    std::string manifest_path;  // relative to the corpus directory
};

struct Corpus {
    std::vector<CorpusCase> cases;
    FeatureTable ground_truth;  // schema_version + one row per case
};

// In-memory corpus: n jittered cases, covid count = round(n·class_mix),
// labels interleaved deterministically, per-case seed = seed + index.
std::vector<std::pair<CaseBundle, GroundTruth>> generate_corpus_bundles(
    int n, double class_mix, std::uint64_t seed, const CorpusRanges& ranges, CorpusProfile profile);

// Same, but writes each bundle under out_dir/<case_id>/, a corpus manifest
// (corpus.json) and the ground-truth table (ground_truth.csv).
Corpus generate_corpus(int n, double class_mix, std::uint64_t seed, const CorpusRanges& ranges,
                       CorpusProfile profile, const std::string& out_dir);

// Features the generator builds the class signal into (used by importance
// checks): schema ids, most informative first.
std::vector<std::string> corpus_signal_features(CorpusProfile profile);

} // namespace triage
