#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "triage/errors.hpp"
#include "triage/features.hpp"
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

// Every feature must match its ground truth exactly unless the truth sheet
// grants a voxelization allowance for it.
void check_against_gt(const FeatureVector& got, const GroundTruth& gt) {
    REQUIRE(got.values.size() == gt.expected.values.size());
    REQUIRE(gt.tolerance.size() == gt.expected.values.size());
    for (std::size_t i = 0; i < got.values.size(); ++i) {
        const std::string& id = S.def(static_cast<int>(i)).id;
        CAPTURE(id);
        if (gt.tolerance[i] == 0.0)
            CHECK(got.values[i] == gt.expected.values[i]);
        else
            CHECK(std::abs(got.values[i] - gt.expected.values[i]) <= gt.tolerance[i]);
    }
}

} // namespace

TEST_CASE("default covid phantom is bilateral, peripheral, and pure GGO") {
    auto [bundle, gt] = generate_case(default_phantom_spec(CaseLabel::covid, 7));
    CHECK(bundle.label == CaseLabel::covid);
    CHECK(gt.label == CaseLabel::covid);
    CHECK(validate_case(bundle).ok());

    auto extracted = extract_features(bundle, ExtractConfig{});
    for (const FeatureVector* fv : {&gt.expected, &extracted}) {
        CHECK(fval(*fv, "bilateral") == 1.0);
        CHECK(fval(*fv, "unilateral_left") == 0.0);
        CHECK(fval(*fv, "unilateral_right") == 0.0);
        CHECK(fval(*fv, "GGO_dominance") == 1.0);
        CHECK(fval(*fv, "consolidation_dominance") == 0.0);
        CHECK(fval(*fv, "peripheral_ratio") >= 80.0);
        CHECK(fval(*fv, "abn_total_vol") > 0.0);
    }
    check_against_gt(extracted, gt);
}

TEST_CASE("default other phantom is a central right-lung consolidation") {
    auto [bundle, gt] = generate_case(default_phantom_spec(CaseLabel::other, 7));
    CHECK(bundle.label == CaseLabel::other);
    CHECK(validate_case(bundle).ok());

    auto extracted = extract_features(bundle, ExtractConfig{});
    for (const FeatureVector* fv : {&gt.expected, &extracted}) {
        CHECK(fval(*fv, "bilateral") == 0.0);
        CHECK(fval(*fv, "unilateral_left") == 0.0);
        CHECK(fval(*fv, "unilateral_right") == 1.0);
        CHECK(fval(*fv, "consolidation_dominance") == 1.0);
        CHECK(fval(*fv, "GGO_dominance") == 0.0);
        CHECK(fval(*fv, "peripheral_ratio") <= 30.0);
    }
    check_against_gt(extracted, gt);
}

TEST_CASE("documented default lesion layouts") {
    auto covid = default_phantom_spec(CaseLabel::covid, 3);
    CHECK(covid.label == CaseLabel::covid);
    REQUIRE(covid.lesions.size() == 4);
    for (const auto& lesion : covid.lesions) {
        CHECK(lesion.texture == 1);
        CHECK(lesion.peripheral);
    }

    auto other = default_phantom_spec(CaseLabel::other, 3);
    CHECK(other.label == CaseLabel::other);
    REQUIRE(other.lesions.size() == 1);
    CHECK(other.lesions[0].texture == 2);
    CHECK_FALSE(other.lesions[0].peripheral);
}

TEST_CASE("generation is a pure function of the PhantomSpec") {
    const auto spec = default_phantom_spec(CaseLabel::covid, 99);
    auto [b1, g1] = generate_case(spec);
    auto [b2, g2] = generate_case(spec);
    CHECK(b1.volume.voxels == b2.volume.voxels);
    CHECK(b1.lungs.voxels == b2.lungs.voxels);
    CHECK(b1.lobes.voxels == b2.lobes.voxels);
    CHECK(b1.abnormality.voxels == b2.abnormality.voxels);
    CHECK(b1.texture.voxels == b2.texture.voxels);
    CHECK(b1.activation.voxels == b2.activation.voxels);
    CHECK(g1.expected.values == g2.expected.values);

    auto [b3, g3] = generate_case(default_phantom_spec(CaseLabel::covid, 100));
    CHECK(b1.volume.voxels != b3.volume.voxels);
}

TEST_CASE("a lesion outside the lungs is rejected") {
    auto spec = default_phantom_spec(CaseLabel::covid, 1);
    spec.lesions[0].center_mm = {2.0, 2.0, 2.0};  // volume corner, outside both lungs
    spec.lesions[0].radii_mm = {4.0, 4.0, 4.0};
    try {
        generate_case(spec);
        FAIL("expected error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::lesion_outside_lungs);
    }
}

TEST_CASE("the tolerance sheet is exact except the peripheral ratio") {
    auto tol = ground_truth_tolerances();
    REQUIRE(static_cast<int>(tol.size()) == S.size());
    for (int i = 0; i < S.size(); ++i) {
        CAPTURE(S.def(i).id);
        if (S.def(i).id == "peripheral_ratio")
            CHECK(tol[static_cast<std::size_t>(i)] == 2.0);
        else
            CHECK(tol[static_cast<std::size_t>(i)] == 0.0);
    }
}

TEST_CASE("corpus extraction matches ground truth across jittered cases") {
    auto cases = generate_corpus_bundles(24, 0.5, 2026, CorpusRanges{}, CorpusProfile::standard);
    REQUIRE(cases.size() == 24);
    int covid = 0;
    std::set<std::string> ids;
    for (const auto& [bundle, gt] : cases) {
        CAPTURE(bundle.case_id);
        ids.insert(bundle.case_id);
        covid += bundle.label == CaseLabel::covid ? 1 : 0;
        CHECK(bundle.label == gt.label);
        CHECK(validate_case(bundle).ok());
        check_against_gt(extract_features(bundle, ExtractConfig{}), gt);
    }
    CHECK(covid == 12);
    CHECK(ids.size() == 24);
}

TEST_CASE("class mix rounds to the covid count and rejects empty classes") {
    auto a = generate_corpus_bundles(24, 0.58, 1, CorpusRanges{}, CorpusProfile::standard);
    int covid = 0;
    for (const auto& [bundle, gt] : a) covid += gt.label == CaseLabel::covid ? 1 : 0;
    CHECK(covid == 14);  // llround(24 * 0.58)

    auto b = generate_corpus_bundles(2, 0.5, 1, CorpusRanges{}, CorpusProfile::standard);
    REQUIRE(b.size() == 2);
    CHECK((b[0].second.label == CaseLabel::covid) != (b[1].second.label == CaseLabel::covid));

    CHECK_THROWS_AS(generate_corpus_bundles(4, 0.0, 1, CorpusRanges{}, CorpusProfile::standard),
                    Error);
    CHECK_THROWS_AS(generate_corpus_bundles(4, 1.0, 1, CorpusRanges{}, CorpusProfile::standard),
                    Error);
    CHECK_THROWS_AS(generate_corpus_bundles(0, 0.5, 1, CorpusRanges{}, CorpusProfile::standard),
                    Error);
}

TEST_CASE("in-memory corpus generation is seed-deterministic") {
    auto a = generate_corpus_bundles(8, 0.5, 77, CorpusRanges{}, CorpusProfile::standard);
    auto b = generate_corpus_bundles(8, 0.5, 77, CorpusRanges{}, CorpusProfile::standard);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].first.volume.voxels == b[i].first.volume.voxels);
        CHECK(a[i].second.expected.values == b[i].second.expected.values);
    }
    auto c = generate_corpus_bundles(8, 0.5, 78, CorpusRanges{}, CorpusProfile::standard);
    bool any_differs = false;
    for (std::size_t i = 0; i < a.size(); ++i)
        any_differs = any_differs || a[i].first.volume.voxels != c[i].first.volume.voxels;
    CHECK(any_differs);
}

TEST_CASE("the shape-signal profile separates classes by placement only") {
    auto cases = generate_corpus_bundles(12, 0.5, 5, CorpusRanges{}, CorpusProfile::shape_signal);
    double covid_sum = 0.0, other_sum = 0.0;
    int covid_n = 0, other_n = 0;
    for (const auto& [bundle, gt] : cases) {
        const double pr = fval(gt.expected, "peripheral_ratio");
        if (gt.label == CaseLabel::covid) {
            covid_sum += pr;
            ++covid_n;
        } else {
            other_sum += pr;
            ++other_n;
        }
    }
    REQUIRE(covid_n == 6);
    REQUIRE(other_n == 6);
    CHECK(covid_sum / covid_n >= other_sum / other_n + 20.0);
}

TEST_CASE("signal feature declarations name real schema columns") {
    auto standard = corpus_signal_features(CorpusProfile::standard);
    CHECK(standard == std::vector<std::string>{"peripheral_ratio", "bilateral"});
    auto shape = corpus_signal_features(CorpusProfile::shape_signal);
    CHECK(shape == std::vector<std::string>{"peripheral_ratio"});
    for (const auto& id : standard) CHECK(S.index_of(id) >= 0);

    CHECK(std::string(corpus_profile_token(CorpusProfile::standard)) == "standard");
    CHECK(std::string(corpus_profile_token(CorpusProfile::shape_signal)) == "shape_signal");
    CHECK(parse_corpus_profile("standard") == CorpusProfile::standard);
    CHECK(parse_corpus_profile("shape_signal") == CorpusProfile::shape_signal);
    CHECK_THROWS_AS(parse_corpus_profile("bogus"), Error);
}

TEST_CASE("on-disk corpus writes manifest, ground truth, and loadable cases") {
    TempDir tmp("tphantom-corpus");
    auto corpus = generate_corpus(4, 0.5, 11, CorpusRanges{}, CorpusProfile::standard, tmp.str("a"));
    REQUIRE(corpus.cases.size() == 4);
    CHECK(corpus.ground_truth.rows.size() == 4);
    CHECK(corpus.ground_truth.schema_version == S.version());
    CHECK(std::filesystem::exists(tmp.str("a") + "/corpus.json"));
    CHECK(std::filesystem::exists(tmp.str("a") + "/ground_truth.csv"));

    for (const auto& entry : corpus.cases) {
        const auto manifest = (std::filesystem::path(tmp.str("a")) / entry.manifest_path).string();
        REQUIRE(std::filesystem::exists(manifest));
        auto bundle = load_case(manifest);
        CHECK(bundle.case_id == entry.case_id);
        CHECK(bundle.label == entry.label);
        CHECK(validate_case(bundle).ok());
    }

    // Same seed, different directory: byte-identical ground truth.
    generate_corpus(4, 0.5, 11, CorpusRanges{}, CorpusProfile::standard, tmp.str("b"));
    CHECK(testutil::read_bytes(tmp.str("a") + "/ground_truth.csv") ==
          testutil::read_bytes(tmp.str("b") + "/ground_truth.csv"));
    generate_corpus(4, 0.5, 12, CorpusRanges{}, CorpusProfile::standard, tmp.str("c"));
    CHECK(testutil::read_bytes(tmp.str("a") + "/ground_truth.csv") !=
          testutil::read_bytes(tmp.str("c") + "/ground_truth.csv"));
}
