#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "triage/errors.hpp"
#include "triage/features.hpp"
#include "triage/morphology.hpp"
#include "triage/phantom.hpp"
#include "triage/volume_io.hpp"

#include "test_util.hpp"

using namespace triage;
using testutil::TempDir;

namespace {

const FeatureSchema& S = FeatureSchema::v1();

double fval(const FeatureVector& fv, const std::string& id) {
    const int i = S.index_of(id);
    REQUIRE(i >= 0);
    return fv.values[static_cast<std::size_t>(i)];
}

// Minimal consistent bundle: box lungs (left label 1 / right label 2), lobes
// covering the lungs, everything else empty. Voxel type defaults chosen so a
// test only touches what it asserts about.
CaseBundle make_box_bundle(std::array<int, 3> dims, std::array<double, 3> spacing,
                           std::int16_t hu = -700) {
    CaseBundle b;
    b.case_id = "t";
    b.volume = make_grid<std::int16_t>(dims, spacing, hu);
    b.lungs = make_grid<std::uint8_t>(dims, spacing, 0);
    b.lobes = make_grid<std::uint8_t>(dims, spacing, 0);
    b.abnormality = make_grid<std::uint8_t>(dims, spacing, 0);
    b.texture = make_grid<std::uint8_t>(dims, spacing, 0);
    b.activation = make_grid<float>(dims, spacing, 0.0f);
    b.activation.header.dtype = Dtype::float32;
    b.label = CaseLabel::covid;
    return b;
}

// Fill [lo,hi) boxes (half-open voxel ranges) of the side masks.
void fill_lung_box(CaseBundle& b, int side_label, std::array<int, 3> lo, std::array<int, 3> hi) {
    for (int z = lo[2]; z < hi[2]; ++z)
        for (int y = lo[1]; y < hi[1]; ++y)
            for (int x = lo[0]; x < hi[0]; ++x) {
                b.lungs.at(x, y, z) = static_cast<std::uint8_t>(side_label);
                b.lobes.at(x, y, z) = static_cast<std::uint8_t>(side_label == 1 ? 1 : 3);
            }
}

void fill_abn_box(CaseBundle& b, std::array<int, 3> lo, std::array<int, 3> hi, int texture,
                  float activation = 0.0f) {
    for (int z = lo[2]; z < hi[2]; ++z)
        for (int y = lo[1]; y < hi[1]; ++y)
            for (int x = lo[0]; x < hi[0]; ++x) {
                b.abnormality.at(x, y, z) = 1;
                b.texture.at(x, y, z) = static_cast<std::uint8_t>(texture);
                b.activation.at(x, y, z) = activation;
            }
}

std::int64_t count_true(const BinaryMask& m) {
    std::int64_t n = 0;
    for (auto v : m.voxels) n += v ? 1 : 0;
    return n;
}

} // namespace

TEST_CASE("schema v1 has the documented shape") {
    CHECK(S.version() == "v1");
    CHECK(S.size() == 114);
    CHECK(S.group_size(FeatureGroup::LungsStats) == 56);
    CHECK(S.group_size(FeatureGroup::OpacityStats) == 19);
    CHECK(S.group_size(FeatureGroup::OpacityTexture) == 34);
    CHECK(S.group_size(FeatureGroup::ShapeLocation) == 5);

    // Groups tile the schema contiguously and ids are unique.
    int covered = 0;
    for (int g = 0; g < kFeatureGroupCount; ++g) {
        const auto fg = static_cast<FeatureGroup>(g);
        CHECK(S.group_offset(fg) == covered);
        covered += S.group_size(fg);
    }
    CHECK(covered == S.size());
    std::set<std::string> ids;
    for (int i = 0; i < S.size(); ++i) {
        ids.insert(S.def(i).id);
        CHECK(S.index_of(S.def(i).id) == i);
    }
    CHECK(static_cast<int>(ids.size()) == S.size());
    CHECK(S.index_of("no_such_feature") == -1);

    for (const char* id : {"lungs_total_vol", "pos_ratio", "activation_sum", "GGO_dominance",
                           "consolidation_dominance", "focal_GGO", "bilateral", "peripheral_ratio"})
        CHECK(S.index_of(id) >= 0);
}

TEST_CASE("feature group names and tokens round-trip") {
    CHECK(std::string(feature_group_name(FeatureGroup::LungsStats)) == "Lungs statistics");
    CHECK(std::string(feature_group_name(FeatureGroup::OpacityStats)) == "Opacities statistics");
    CHECK(std::string(feature_group_name(FeatureGroup::OpacityTexture)) == "Opacities texture");
    CHECK(std::string(feature_group_name(FeatureGroup::ShapeLocation)) == "Location & Shape");
    for (int g = 0; g < kFeatureGroupCount; ++g) {
        const auto fg = static_cast<FeatureGroup>(g);
        CHECK(parse_feature_group(feature_group_token(fg)) == fg);
    }
    CHECK_THROWS_AS(parse_feature_group("bogus"), Error);
}

TEST_CASE("hu_window_of follows the closed/open band boundaries") {
    CHECK(hu_window_of(-1000) == 0);
    CHECK(hu_window_of(-950) == 0);
    CHECK(hu_window_of(-949) == 1);
    CHECK(hu_window_of(-700) == 1);
    CHECK(hu_window_of(-601) == 1);
    CHECK(hu_window_of(-600) == 1);
    CHECK(hu_window_of(-599) == 2);
    CHECK(hu_window_of(-250) == 2);
    CHECK(hu_window_of(-249) == -1);
    CHECK(hu_window_of(-1001) == -1);
    CHECK(hu_window_of(0) == -1);
}

TEST_CASE("a 10x10x10 voxel structure at 1 mm spacing is exactly one cm3") {
    auto b = make_box_bundle({24, 16, 16}, {1.0, 1.0, 1.0});
    fill_lung_box(b, 1, {2, 2, 2}, {12, 12, 12});     // 1000 voxels left
    fill_lung_box(b, 2, {14, 2, 2}, {22, 12, 12});    // 800 voxels right
    auto fv = extract_features(b, ExtractConfig{});
    CHECK(fval(fv, "lungs_left_vol") == 1.0);
    CHECK(fval(fv, "lungs_right_vol") == 0.8);
    CHECK(fval(fv, "lungs_total_vol") == 1.8);
}

TEST_CASE("uniform -700 HU lungs sit entirely in the functional window") {
    auto b = make_box_bundle({16, 16, 16}, {1.0, 1.0, 1.0}, -700);
    fill_lung_box(b, 1, {2, 2, 2}, {7, 7, 7});
    fill_lung_box(b, 2, {9, 2, 2}, {14, 7, 7});
    auto fv = extract_features(b, ExtractConfig{});
    CHECK(fval(fv, "hu_functional_total_ratio") == 100.0);
    CHECK(fval(fv, "hu_low_total_ratio") == 0.0);
    CHECK(fval(fv, "hu_high_total_ratio") == 0.0);
    CHECK(fval(fv, "hu_functional_total_vol") == fval(fv, "lungs_total_vol"));
}

TEST_CASE("a half low / half high lung splits the window ratios 50/50") {
    auto b = make_box_bundle({16, 16, 16}, {1.0, 1.0, 1.0}, -700);
    fill_lung_box(b, 1, {2, 2, 2}, {6, 6, 10});   // 128 voxels
    fill_lung_box(b, 2, {9, 2, 2}, {13, 6, 10});  // 128 voxels
    for (int z = 2; z < 10; ++z)
        for (int y = 2; y < 6; ++y)
            for (int x = 2; x < 13; ++x) {
                if (!b.lungs.at(x, y, z)) continue;
                b.volume.at(x, y, z) = (z < 6) ? std::int16_t{-960} : std::int16_t{-300};
            }
    auto fv = extract_features(b, ExtractConfig{});
    CHECK(fval(fv, "hu_low_total_ratio") == 50.0);
    CHECK(fval(fv, "hu_high_total_ratio") == 50.0);
    CHECK(fval(fv, "hu_functional_total_ratio") == 0.0);
}

TEST_CASE("pos_ratio is the fraction of lung slices with abnormal voxels") {
    auto b = make_box_bundle({12, 12, 60}, {1.0, 1.0, 1.0});
    fill_lung_box(b, 1, {1, 1, 0}, {5, 11, 50});
    fill_lung_box(b, 2, {7, 1, 0}, {11, 11, 50});
    fill_abn_box(b, {2, 2, 0}, {4, 4, 10}, 1);  // 10 of the 50 lung slices
    auto fv = extract_features(b, ExtractConfig{});
    CHECK(fval(fv, "pos_ratio") == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("activation features are exact sums over the abnormality") {
    auto b = make_box_bundle({16, 16, 16}, {1.0, 1.0, 1.0});
    fill_lung_box(b, 1, {1, 1, 1}, {7, 13, 13});
    fill_lung_box(b, 2, {9, 1, 1}, {15, 13, 13});

    SUBCASE("zero activation everywhere") {
        fill_abn_box(b, {2, 2, 2}, {5, 5, 5}, 1, 0.0f);
        auto fv = extract_features(b, ExtractConfig{});
        CHECK(fval(fv, "activation_sum") == 0.0);
        CHECK(fval(fv, "activation_volume_weighted") == 0.0);
    }
    SUBCASE("uniform activation over one component") {
        fill_abn_box(b, {2, 2, 2}, {6, 6, 7}, 1, 0.25f);  // 80 voxels
        auto fv = extract_features(b, ExtractConfig{});
        CHECK(fval(fv, "activation_sum") == 0.25 * 80);
        // volume-weighted: component volume (cm3) times its mean activation
        CHECK(fval(fv, "activation_volume_weighted") == doctest::Approx(0.080 * 0.25).epsilon(1e-12));
    }
}

TEST_CASE("texture dominance follows the GGO/consolidation volume split") {
    auto b = make_box_bundle({24, 24, 24}, {1.0, 1.0, 1.0});
    fill_lung_box(b, 1, {1, 1, 1}, {11, 23, 23});
    fill_lung_box(b, 2, {13, 1, 1}, {23, 23, 23});
    fill_abn_box(b, {2, 2, 2}, {9, 12, 9}, 1);    // GGO: 7*10*7 = 490
    fill_abn_box(b, {14, 2, 2}, {20, 9, 7}, 2);   // consolidation: 6*7*5 = 210
    auto fv = extract_features(b, ExtractConfig{});
    CHECK(fval(fv, "GGO_dominance") == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(fval(fv, "consolidation_dominance") == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(fval(fv, "GGO_dominance") + fval(fv, "consolidation_dominance") == 1.0);
    CHECK(fval(fv, "GGO_total_vol") == doctest::Approx(0.490).epsilon(1e-12));
    CHECK(fval(fv, "consolidation_total_vol") == doctest::Approx(0.210).epsilon(1e-12));
    CHECK(fval(fv, "abn_total_vol") == doctest::Approx(0.700).epsilon(1e-12));
}

TEST_CASE("an empty abnormality yields zero opacity/texture/shape features") {
    auto b = make_box_bundle({16, 16, 16}, {1.0, 1.0, 1.0});
    fill_lung_box(b, 1, {1, 1, 1}, {7, 15, 15});
    fill_lung_box(b, 2, {9, 1, 1}, {15, 15, 15});
    auto fv = extract_features(b, ExtractConfig{});
    CHECK(fval(fv, "abn_total_vol") == 0.0);
    CHECK(fval(fv, "pos_ratio") == 0.0);
    CHECK(fval(fv, "GGO_dominance") == 0.0);
    CHECK(fval(fv, "consolidation_dominance") == 0.0);
    CHECK(fval(fv, "focal_GGO") == 0.0);
    CHECK(fval(fv, "unilateral_left") == 0.0);
    CHECK(fval(fv, "unilateral_right") == 0.0);
    CHECK(fval(fv, "bilateral") == 0.0);
    CHECK(fval(fv, "peripheral_ratio") == 0.0);
}

TEST_CASE("left and right partial volumes add to the total exactly") {
    auto [bundle, gt] = generate_case(default_phantom_spec(CaseLabel::covid, 5));
    (void)gt;
    auto fv = extract_features(bundle, ExtractConfig{});
    CHECK(fval(fv, "lungs_left_vol") + fval(fv, "lungs_right_vol") == fval(fv, "lungs_total_vol"));
    CHECK(fval(fv, "abn_left_vol") + fval(fv, "abn_right_vol") == fval(fv, "abn_total_vol"));
    CHECK(fval(fv, "GGO_left_vol") + fval(fv, "GGO_right_vol") == fval(fv, "GGO_total_vol"));

    // Lobes partition the lungs, so lobe volumes add up to the total too.
    double lobes = 0.0;
    for (const char* id : {"lungs_lobe1_vol", "lungs_lobe2_vol", "lungs_lobe3_vol",
                           "lungs_lobe4_vol", "lungs_lobe5_vol"})
        lobes += fval(fv, id);
    CHECK(lobes == doctest::Approx(fval(fv, "lungs_total_vol")).epsilon(1e-12));

    // All ratio features live in [0,100].
    for (int i = 0; i < S.size(); ++i) {
        const auto& id = S.def(i).id;
        if (id.size() > 6 && id.compare(id.size() - 6, 6, "_ratio") == 0 && id != "pos_ratio") {
            CHECK(fv.values[static_cast<std::size_t>(i)] >= 0.0);
            CHECK(fv.values[static_cast<std::size_t>(i)] <= 100.0);
        }
    }
}

TEST_CASE("focal_GGO requires a small rounded GGO component") {
    auto b = make_box_bundle({64, 64, 24}, {1.0, 1.0, 1.0});
    fill_lung_box(b, 1, {1, 1, 1}, {31, 63, 23});
    fill_lung_box(b, 2, {33, 1, 1}, {63, 63, 23});

    SUBCASE("a 10 mm GGO sphere is focal") {
        for (int z = 1; z < 23; ++z)
            for (int y = 20; y < 44; ++y)
                for (int x = 5; x < 28; ++x) {
                    const double dx = x - 16.0, dy = y - 31.0, dz = z - 11.0;
                    if (dx * dx + dy * dy + dz * dz <= 100.0) {
                        b.abnormality.at(x, y, z) = 1;
                        b.texture.at(x, y, z) = 1;
                    }
                }
        auto fv = extract_features(b, ExtractConfig{});
        CHECK(fval(fv, "focal_GGO") == 1.0);
    }
    SUBCASE("a long in-plane GGO slab is not focal") {
        fill_abn_box(b, {10, 3, 10}, {13, 58, 13}, 1);  // 54 mm long in-plane
        auto fv = extract_features(b, ExtractConfig{});
        CHECK(fval(fv, "focal_GGO") == 0.0);
    }
}

TEST_CASE("laterality flags follow the strict one-cm3 side threshold") {
    auto b = make_box_bundle({32, 32, 32}, {1.0, 1.0, 1.0});
    fill_lung_box(b, 1, {1, 1, 1}, {15, 31, 31});
    fill_lung_box(b, 2, {17, 1, 1}, {31, 31, 31});

    SUBCASE("five cm3 on the left only") {
        fill_abn_box(b, {2, 2, 2}, {12, 27, 4}, 1);  // 10*25*2 = 500... make 5000
        fill_abn_box(b, {2, 2, 4}, {12, 27, 22}, 1);
        auto fv = extract_features(b, ExtractConfig{});
        CHECK(fval(fv, "abn_left_vol") == doctest::Approx(5.0).epsilon(1e-9));
        CHECK(fval(fv, "unilateral_left") == 1.0);
        CHECK(fval(fv, "unilateral_right") == 0.0);
        CHECK(fval(fv, "bilateral") == 0.0);
    }
    SUBCASE("load on both sides is bilateral") {
        fill_abn_box(b, {2, 2, 2}, {13, 13, 13}, 1);
        fill_abn_box(b, {18, 2, 2}, {29, 13, 13}, 2);
        auto fv = extract_features(b, ExtractConfig{});
        CHECK(fval(fv, "bilateral") == 1.0);
        CHECK(fval(fv, "unilateral_left") == 0.0);
        CHECK(fval(fv, "unilateral_right") == 0.0);
    }
    SUBCASE("exactly one cm3 does not pass the strict threshold") {
        fill_abn_box(b, {2, 2, 2}, {12, 12, 12}, 1);  // 1000 voxels = 1.0 cm3
        auto fv = extract_features(b, ExtractConfig{});
        CHECK(fval(fv, "abn_left_vol") == 1.0);
        CHECK(fval(fv, "unilateral_left") == 0.0);
    }
    SUBCASE("half a cm3 is below the threshold") {
        fill_abn_box(b, {2, 2, 2}, {12, 12, 7}, 1);  // 0.5 cm3
        auto fv = extract_features(b, ExtractConfig{});
        CHECK(fval(fv, "unilateral_left") == 0.0);
        CHECK(fval(fv, "bilateral") == 0.0);
    }
}

TEST_CASE("peripheral_ratio equals a per-voxel shell recount") {
    auto spec = default_phantom_spec(CaseLabel::covid, 21);
    auto [bundle, gt] = generate_case(spec);
    (void)gt;
    ExtractConfig cfg;
    auto fv = extract_features(bundle, cfg);

    auto lungs_bin = make_grid<std::uint8_t>(bundle.lungs.header.dims, bundle.lungs.header.spacing_mm);
    for (std::size_t i = 0; i < bundle.lungs.voxels.size(); ++i)
        lungs_bin.voxels[i] = bundle.lungs.voxels[i] ? 1 : 0;
    auto shell = peripheral_shell(lungs_bin, cfg.shell_depth_mm,
                                  bundle.bronchial ? &*bundle.bronchial : nullptr,
                                  cfg.bronchial_margin_mm);
    std::int64_t abn = 0, in_shell = 0;
    for (std::size_t i = 0; i < bundle.abnormality.voxels.size(); ++i)
        if (bundle.abnormality.voxels[i]) {
            ++abn;
            in_shell += shell.voxels[i] ? 1 : 0;
        }
    REQUIRE(abn > 0);
    const double expected = 100.0 * static_cast<double>(in_shell) / static_cast<double>(abn);
    CHECK(fval(fv, "peripheral_ratio") == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("an opacity entirely inside the shell scores 100 percent peripheral") {
    auto b = make_box_bundle({40, 40, 40}, {1.0, 1.0, 1.0});
    fill_lung_box(b, 1, {2, 2, 2}, {18, 38, 38});
    fill_lung_box(b, 2, {22, 2, 2}, {38, 38, 38});
    b.bronchial = make_grid<std::uint8_t>(std::array<int, 3>{40, 40, 40},
                                          std::array<double, 3>{1.0, 1.0, 1.0});
    fill_abn_box(b, {2, 2, 2}, {6, 6, 6}, 1);  // hugs the lung corner
    auto fv = extract_features(b, ExtractConfig{});
    CHECK(fval(fv, "peripheral_ratio") == 100.0);
}

TEST_CASE("doubling the spacing scales volumes by eight and keeps ratios") {
    auto b1 = make_box_bundle({24, 24, 24}, {1.0, 1.0, 1.0});
    fill_lung_box(b1, 1, {1, 1, 1}, {11, 23, 23});
    fill_lung_box(b1, 2, {13, 1, 1}, {23, 23, 23});
    fill_abn_box(b1, {2, 2, 2}, {8, 8, 8}, 1, 0.5f);
    fill_abn_box(b1, {14, 3, 3}, {19, 8, 8}, 2, 0.25f);

    auto b2 = b1;
    const std::array<double, 3> sp2{2.0, 2.0, 2.0};
    b2.volume.header.spacing_mm = sp2;
    b2.lungs.header.spacing_mm = sp2;
    b2.lobes.header.spacing_mm = sp2;
    b2.abnormality.header.spacing_mm = sp2;
    b2.texture.header.spacing_mm = sp2;
    b2.activation.header.spacing_mm = sp2;

    auto f1 = extract_features(b1, ExtractConfig{});
    auto f2 = extract_features(b2, ExtractConfig{});
    for (int i = 0; i < S.size(); ++i) {
        const auto& id = S.def(i).id;
        const bool is_vol = id.size() > 4 && id.compare(id.size() - 4, 4, "_vol") == 0;
        const bool counting_ratio =
            (id.size() > 6 && id.compare(id.size() - 6, 6, "_ratio") == 0 &&
             id != "peripheral_ratio") ||
            id == "pos_ratio" || id == "GGO_dominance" || id == "consolidation_dominance";
        CAPTURE(id);
        if (is_vol) {
            // 2 is exactly representable, so the scale factor is exact.
            CHECK(f2.values[static_cast<std::size_t>(i)] ==
                  8.0 * f1.values[static_cast<std::size_t>(i)]);
        } else if (counting_ratio) {
            CHECK(f2.values[static_cast<std::size_t>(i)] == f1.values[static_cast<std::size_t>(i)]);
        }
    }
    CHECK(f2.values[static_cast<std::size_t>(S.index_of("activation_sum"))] ==
          f1.values[static_cast<std::size_t>(S.index_of("activation_sum"))]);
}

TEST_CASE("extraction is deterministic and matches the serial reference") {
    auto [bundle, gt] = generate_case(default_phantom_spec(CaseLabel::other, 8));
    (void)gt;
    ExtractConfig cfg;
    auto a = extract_features(bundle, cfg);
    auto b = extract_features(bundle, cfg);
    auto r = reference::extract_features(bundle, cfg);
    CHECK(a.values == b.values);
    CHECK(a.values == r.values);
    REQUIRE(a.label.has_value());
    CHECK(*a.label == CaseLabel::other);
}

TEST_CASE("partial extractors agree with the assembled vector") {
    auto [bundle, gt] = generate_case(default_phantom_spec(CaseLabel::covid, 33));
    (void)gt;
    ExtractConfig cfg;
    auto fv = extract_features(bundle, cfg);

    const auto lungs = lung_statistics(bundle);
    const auto opac = opacity_statistics(bundle, cfg);
    const auto tex = texture_features(bundle);
    const auto shape = shape_location_features(bundle, cfg);
    REQUIRE(static_cast<int>(lungs.size()) == S.group_size(FeatureGroup::LungsStats));
    REQUIRE(static_cast<int>(opac.size()) == S.group_size(FeatureGroup::OpacityStats));
    REQUIRE(static_cast<int>(tex.size()) == S.group_size(FeatureGroup::OpacityTexture));
    REQUIRE(static_cast<int>(shape.size()) == S.group_size(FeatureGroup::ShapeLocation));

    const auto check_block = [&](const std::vector<double>& part, FeatureGroup g) {
        const int off = S.group_offset(g);
        for (std::size_t i = 0; i < part.size(); ++i)
            CHECK(part[i] == fv.values[static_cast<std::size_t>(off) + i]);
    };
    check_block(lungs, FeatureGroup::LungsStats);
    check_block(opac, FeatureGroup::OpacityStats);
    check_block(tex, FeatureGroup::OpacityTexture);
    check_block(shape, FeatureGroup::ShapeLocation);
}

TEST_CASE("extraction rejects a bundle that fails validation") {
    auto [bundle, gt] = generate_case(default_phantom_spec(CaseLabel::covid, 2));
    (void)gt;
    auto broken = bundle;
    for (std::size_t i = 0; i < broken.texture.voxels.size(); ++i)
        if (!broken.abnormality.voxels[i] && broken.lungs.voxels[i]) {
            broken.texture.voxels[i] = 2;
            break;
        }
    try {
        extract_features(broken, ExtractConfig{});
        FAIL("expected rejection");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::extraction_rejected);
    }
}

TEST_CASE("feature tables round-trip through CSV with comments") {
    TempDir tmp("tfeat-csv");
    FeatureTable t;
    t.schema_version = S.version();
    for (int r = 0; r < 3; ++r) {
        FeatureVector fv;
        fv.case_id = "case_" + std::to_string(r);
        fv.label = r % 2 ? CaseLabel::covid : CaseLabel::other;
        for (int i = 0; i < S.size(); ++i) fv.values.push_back(r * 1000.0 + i + 0.125);
        t.rows.push_back(std::move(fv));
    }
    save_feature_table(t, tmp.str("f.csv"), "generated by a test\nsecond line");
    auto back = load_feature_table(tmp.str("f.csv"));
    CHECK(back.schema_version == t.schema_version);
    REQUIRE(back.rows.size() == t.rows.size());
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        CHECK(back.rows[r].case_id == t.rows[r].case_id);
        CHECK(back.rows[r].label == t.rows[r].label);
        CHECK(back.rows[r].values == t.rows[r].values);
    }
    const std::string raw = testutil::read_bytes(tmp.str("f.csv"));
    CHECK(raw.substr(0, 2) == "# ");
}

TEST_CASE("loading a table with a missing column names the column") {
    TempDir tmp("tfeat-miss");
    FeatureTable t;
    t.schema_version = S.version();
    FeatureVector fv;
    fv.case_id = "c0";
    fv.label = CaseLabel::covid;
    fv.values.assign(static_cast<std::size_t>(S.size()), 0.0);
    t.rows.push_back(fv);
    save_feature_table(t, tmp.str("f.csv"));

    // Drop the pos_ratio column from header and row.
    std::string raw = testutil::read_bytes(tmp.str("f.csv"));
    const auto drop_nth_field = [](const std::string& line, std::size_t n) {
        std::string out;
        std::size_t field = 0, start = 0;
        for (std::size_t i = 0; i <= line.size(); ++i) {
            if (i == line.size() || line[i] == ',') {
                if (field != n) {
                    if (!out.empty()) out += ',';
                    out += line.substr(start, i - start);
                }
                ++field;
                start = i + 1;
            }
        }
        return out;
    };
    const std::size_t drop = static_cast<std::size_t>(2 + S.index_of("pos_ratio"));
    std::string rebuilt;
    std::size_t pos = 0;
    while (pos < raw.size()) {
        auto nl = raw.find('\n', pos);
        if (nl == std::string::npos) nl = raw.size();
        std::string line = raw.substr(pos, nl - pos);
        if (!line.empty() && line[0] != '#') line = drop_nth_field(line, drop);
        rebuilt += line;
        rebuilt += '\n';
        pos = nl + 1;
    }
    testutil::write_text(tmp.str("broken.csv"), rebuilt);
    try {
        load_feature_table(tmp.str("broken.csv"));
        FAIL("expected schema mismatch");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::schema_mismatch);
        CHECK(std::string(e.what()).find("pos_ratio") != std::string::npos);
    }
}

TEST_CASE("extract config round-trips and rejects bad values") {
    TempDir tmp("tfeat-cfg");
    ExtractConfig cfg;
    cfg.shell_depth_mm = 12.5;
    cfg.connectivity = 6;
    save_extract_config(cfg, tmp.str("cfg.json"));
    auto back = load_extract_config(tmp.str("cfg.json"));
    CHECK(back.shell_depth_mm == 12.5);
    CHECK(back.connectivity == 6);
    CHECK(back.roundedness_min == cfg.roundedness_min);

    testutil::write_text(tmp.str("bad.json"), "{\"connectivity\": 18}");
    CHECK_THROWS_AS(load_extract_config(tmp.str("bad.json")), Error);
}
