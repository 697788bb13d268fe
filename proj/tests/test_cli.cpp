#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "triage/errors.hpp"
#include "triage/features.hpp"
#include "triage/phantom.hpp"
#include "triage/volume_io.hpp"

#include "test_util.hpp"

using namespace triage;
using nlohmann::json;
using testutil::TempDir;

namespace {

struct RunResult {
    int code = -1;
    std::string out;
    std::string err;
};

std::string shq(const std::string& s) { return "'" + s + "'"; }

// Runs the CLI binary with a scrubbed TRIAGE_* environment; `envs` entries
// ("KEY=value") are the only layer the test injects deliberately.
RunResult run(const std::string& capture_dir, const std::vector<std::string>& args,
              const std::vector<std::string>& envs = {}) {
    static int counter = 0;
    const std::string out = capture_dir + "/cli_out_" + std::to_string(counter);
    const std::string err = capture_dir + "/cli_err_" + std::to_string(counter);
    ++counter;

    std::string cmd =
        "env -u TRIAGE_SEED -u TRIAGE_CONFIG -u TRIAGE_FOLDS -u TRIAGE_JOBS -u TRIAGE_MODEL"
        " -u TRIAGE_MASK_GROUP -u TRIAGE_N -u TRIAGE_CLASS_MIX -u TRIAGE_PROFILE"
        " -u TRIAGE_GRID_POINTS -u TRIAGE_MANIFEST -u TRIAGE_FEATURES -u TRIAGE_OUT";
    for (const auto& e : envs) cmd += " " + e;
    cmd += " " + shq(TRIAGE_BIN);
    for (const auto& a : args) cmd += " " + shq(a);
    cmd += " >" + shq(out) + " 2>" + shq(err);

    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = testutil::read_bytes(out);
    r.err = testutil::read_bytes(err);
    return r;
}

bool contains(const std::string& hay, const std::string& needle) {
    return hay.find(needle) != std::string::npos;
}

int count_of(const std::string& hay, const std::string& needle) {
    int n = 0;
    for (std::size_t pos = hay.find(needle); pos != std::string::npos;
         pos = hay.find(needle, pos + needle.size()))
        ++n;
    return n;
}

const FeatureSchema& S = FeatureSchema::v1();

// Separable schema-wide table (peripheral_ratio spread + the bilateral flag),
// saved as the feature-table fixture for the model-stage subcommands.
std::string write_table(const std::string& path, int n, std::uint32_t seed) {
    std::mt19937 rng(seed);
    std::uniform_int_distribution<int> lo(0, 280), hi(480, 760), noise(0, 1024);
    const int i_periph = S.index_of("peripheral_ratio");
    const int i_bilat = S.index_of("bilateral");
    const int i_noise = S.index_of("pos_ratio");

    FeatureTable t;
    t.schema_version = S.version();
    for (int r = 0; r < n; ++r) {
        FeatureVector fv;
        fv.case_id = "case_" + std::to_string(r);
        const bool covid = r % 2 == 0;
        fv.label = covid ? CaseLabel::covid : CaseLabel::other;
        fv.values.assign(static_cast<std::size_t>(S.size()), 0.0);
        fv.values[static_cast<std::size_t>(i_periph)] = (covid ? hi(rng) : lo(rng)) / 8.0;
        fv.values[static_cast<std::size_t>(i_bilat)] = covid ? 1.0 : 0.0;
        fv.values[static_cast<std::size_t>(i_noise)] = noise(rng) / 1024.0;
        t.rows.push_back(std::move(fv));
    }
    save_feature_table(t, path);
    return path;
}

std::string make_corpus(const std::string& dir, int n, std::uint64_t seed) {
    generate_corpus(n, 0.5, seed, CorpusRanges{}, CorpusProfile::standard, dir);
    return dir + "/corpus.json";
}

} // namespace

TEST_CASE("version and usage errors") {
    TempDir tmp("tcli-usage");
    auto v = run(tmp.str(""), {"--version"});
    CHECK(v.code == 0);
    CHECK(contains(v.out, "triage 1.0.0"));

    CHECK(run(tmp.str(""), {}).code == 2);
    auto bogus = run(tmp.str(""), {"bogus"});
    CHECK(bogus.code == 2);
    CHECK(contains(bogus.err, "triage:"));
    CHECK(run(tmp.str(""), {"phantom", "--definitely-not-a-flag"}).code == 2);
    CHECK(run(tmp.str(""), {"evaluate", "--model", "bogus"}).code == 2);

    // A required setting that is absent is a usage error, not a crash.
    auto missing = run(tmp.str(""), {"phantom", "--n", "4"});
    CHECK(missing.code == 2);
    CHECK(contains(missing.err, "--out"));
}

TEST_CASE("phantom generates a corpus and refuses to clobber one") {
    TempDir tmp("tcli-phantom");
    const std::string dir = tmp.str("corpus");
    auto r = run(tmp.str(""), {"phantom", "--n", "4", "--out", dir, "--seed", "5"});
    CHECK(r.code == 0);
    CHECK(contains(r.out, "4 cases"));
    CHECK(std::filesystem::exists(dir + "/corpus.json"));
    CHECK(std::filesystem::exists(dir + "/ground_truth.csv"));

    auto again = run(tmp.str(""), {"phantom", "--n", "4", "--out", dir, "--seed", "5"});
    CHECK(again.code == 1);
    CHECK(contains(again.err, "triage:"));
}

TEST_CASE("validate reports ok cases on stdout and violations on stderr") {
    TempDir tmp("tcli-validate");
    const std::string manifest = make_corpus(tmp.str("corpus"), 4, 3);

    auto ok = run(tmp.str(""), {"validate", "--manifest", manifest});
    CHECK(ok.code == 0);
    CHECK(count_of(ok.out, ": ok") == 4);
    CHECK(ok.err.empty());

    // Break one case on disk: empty lungs must fail validation.
    auto corpus = json::parse(std::ifstream(manifest));
    const std::string rel = corpus.at("cases").at(0).at("manifest").get<std::string>();
    const auto case_manifest = std::filesystem::path(tmp.str("corpus")) / rel;
    CaseBundle bundle = load_case(case_manifest.string());
    std::fill(bundle.lungs.voxels.begin(), bundle.lungs.voxels.end(), std::uint8_t{0});
    save_case(bundle, case_manifest.parent_path().string(), case_manifest.filename().string());

    auto bad = run(tmp.str(""), {"validate", "--manifest", manifest});
    CHECK(bad.code == 1);
    CHECK(count_of(bad.out, ": ok") == 3);
    CHECK(contains(bad.err, "EmptyLungs"));

    auto gone = run(tmp.str(""), {"validate", "--manifest", tmp.str("missing.json")});
    CHECK(gone.code == 1);
    CHECK(contains(gone.err, "cannot open manifest"));
}

TEST_CASE("extract writes a deterministic, provenance-stamped table") {
    TempDir tmp("tcli-extract");
    const std::string manifest = make_corpus(tmp.str("corpus"), 4, 9);

    auto r1 = run(tmp.str(""), {"extract", "--manifest", manifest, "--features", tmp.str("f1.csv")});
    CHECK(r1.code == 0);
    CHECK(contains(r1.out, "4 cases"));
    auto table = load_feature_table(tmp.str("f1.csv"));
    CHECK(table.rows.size() == 4);
    CHECK(table.schema_version == S.version());

    const auto text = testutil::read_bytes(tmp.str("f1.csv"));
    CHECK(text.rfind("# schema_version: ", 0) == 0);
    CHECK(contains(text, "shell_depth_mm"));

    auto r2 = run(tmp.str(""), {"extract", "--manifest", manifest, "--features", tmp.str("f2.csv")});
    CHECK(r2.code == 0);
    CHECK(testutil::read_bytes(tmp.str("f2.csv")) == text);
}

TEST_CASE("evaluate writes byte-stable reports independent of --jobs") {
    TempDir tmp("tcli-eval");
    const std::string feats = write_table(tmp.str("t.csv"), 20, 1);

    auto r1 = run(tmp.str(""), {"evaluate", "--features", feats, "--out", tmp.str("e1")});
    CHECK(r1.code == 0);
    CHECK(contains(r1.out, "auc"));
    REQUIRE(std::filesystem::exists(tmp.str("e1/eval.json")));
    REQUIRE(std::filesystem::exists(tmp.str("e1/eval.csv")));

    auto j = json::parse(std::ifstream(tmp.str("e1/eval.json")));
    CHECK(j.at("schema_version") == S.version());
    CHECK(j.at("config").at("seed") == 42);   // built-in default
    CHECK(j.at("config").at("folds") == 5);
    CHECK(j.at("config").at("model") == "adaboost-dt");
    CHECK_FALSE(j.at("config").contains("jobs"));
    CHECK_FALSE(j.at("config").contains("out"));

    auto r2 = run(tmp.str(""), {"evaluate", "--features", feats, "--out", tmp.str("e2")});
    CHECK(r2.code == 0);
    CHECK(testutil::read_bytes(tmp.str("e2/eval.json")) ==
          testutil::read_bytes(tmp.str("e1/eval.json")));

    auto r3 = run(tmp.str(""), {"evaluate", "--features", feats, "--out", tmp.str("e3"), "--jobs",
                                "2"});
    CHECK(r3.code == 0);
    CHECK(testutil::read_bytes(tmp.str("e3/eval.json")) ==
          testutil::read_bytes(tmp.str("e1/eval.json")));
    CHECK(testutil::read_bytes(tmp.str("e3/eval.csv")) ==
          testutil::read_bytes(tmp.str("e1/eval.csv")));
}

TEST_CASE("configuration layers: flags beat file beats environment beats defaults") {
    TempDir tmp("tcli-config");
    const std::string feats = write_table(tmp.str("t.csv"), 20, 2);
    const auto seed_of = [&](const std::string& out) {
        return json::parse(std::ifstream(out + "/eval.json")).at("config").at("seed").get<int>();
    };

    auto env_only = run(tmp.str(""), {"evaluate", "--features", feats, "--out", tmp.str("a")},
                        {"TRIAGE_SEED=7"});
    CHECK(env_only.code == 0);
    CHECK(seed_of(tmp.str("a")) == 7);

    testutil::write_text(tmp.str("cfg.json"), "{\"seed\": 11}\n");
    auto file_beats_env =
        run(tmp.str(""),
            {"evaluate", "--features", feats, "--out", tmp.str("b"), "--config", tmp.str("cfg.json")},
            {"TRIAGE_SEED=7"});
    CHECK(file_beats_env.code == 0);
    CHECK(seed_of(tmp.str("b")) == 11);

    // The config file itself may come from the environment.
    auto file_via_env = run(tmp.str(""), {"evaluate", "--features", feats, "--out", tmp.str("c")},
                            {"TRIAGE_SEED=7", "TRIAGE_CONFIG=" + tmp.str("cfg.json")});
    CHECK(file_via_env.code == 0);
    CHECK(seed_of(tmp.str("c")) == 11);

    auto flag_beats_all =
        run(tmp.str(""),
            {"evaluate", "--features", feats, "--out", tmp.str("d"), "--config", tmp.str("cfg.json"),
             "--seed", "13"},
            {"TRIAGE_SEED=7"});
    CHECK(flag_beats_all.code == 0);
    CHECK(seed_of(tmp.str("d")) == 13);

    testutil::write_text(tmp.str("bad.json"), "{\"bogus\": 1}\n");
    auto unknown = run(tmp.str(""), {"evaluate", "--features", feats, "--out", tmp.str("e"),
                                     "--config", tmp.str("bad.json")});
    CHECK(unknown.code == 1);
    CHECK(contains(unknown.err, "unknown config key"));
}

TEST_CASE("a feature table missing a column fails naming it") {
    TempDir tmp("tcli-missing-col");
    write_table(tmp.str("t.csv"), 8, 3);

    // Splice the pos_ratio column out of the header and every row.
    std::ifstream in(tmp.str("t.csv"));
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(in, line)) lines.push_back(line);
    const int drop = 2 + S.index_of("pos_ratio");  // case_id,label first
    for (auto& l : lines) {
        std::vector<std::string> fields;
        std::stringstream ss(l);
        std::string f;
        while (std::getline(ss, f, ',')) fields.push_back(f);
        fields.erase(fields.begin() + drop);
        std::string joined;
        for (std::size_t i = 0; i < fields.size(); ++i)
            joined += (i ? "," : "") + fields[i];
        l = joined;
    }
    std::string text;
    for (const auto& l : lines) text += l + "\n";
    testutil::write_text(tmp.str("broken.csv"), text);

    auto r = run(tmp.str(""), {"evaluate", "--features", tmp.str("broken.csv"), "--out",
                               tmp.str("x")});
    CHECK(r.code == 1);
    CHECK(contains(r.err, "pos_ratio"));
}

TEST_CASE("train writes a model with its resolved configuration") {
    TempDir tmp("tcli-train");
    const std::string feats = write_table(tmp.str("t.csv"), 20, 4);
    auto r = run(tmp.str(""), {"train", "--features", feats, "--out", tmp.str("m"),
                               "--n-estimators", "5", "--seed", "3"});
    CHECK(r.code == 0);
    CHECK(contains(r.out, "wrote"));
    auto j = json::parse(std::ifstream(tmp.str("m/model.json")));
    CHECK(j.at("config").at("n_estimators") == 5);
    CHECK(j.at("config").at("seed") == 3);
}

TEST_CASE("importance, ablate, and kde write their reports") {
    TempDir tmp("tcli-reports");
    const std::string feats = write_table(tmp.str("t.csv"), 20, 5);

    auto imp = run(tmp.str(""), {"importance", "--features", feats, "--out", tmp.str("i")});
    CHECK(imp.code == 0);
    CHECK(contains(imp.out, "1. "));
    CHECK(std::filesystem::exists(tmp.str("i/importance.json")));
    CHECK(std::filesystem::exists(tmp.str("i/importance.csv")));

    auto abl = run(tmp.str(""), {"ablate", "--features", feats, "--out", tmp.str("a")});
    CHECK(abl.code == 0);
    CHECK(contains(abl.out, "Full feature set"));
    CHECK(contains(abl.out, "W/O "));
    CHECK(std::filesystem::exists(tmp.str("a/ablation.json")));
    CHECK(std::filesystem::exists(tmp.str("a/ablation.csv")));

    auto k = run(tmp.str(""), {"kde", "--features", feats, "--out", tmp.str("k"), "--grid-points",
                               "64"});
    CHECK(k.code == 0);
    const auto kcsv = testutil::read_bytes(tmp.str("k/kde.csv"));
    CHECK(kcsv.rfind("# ", 0) == 0);
    CHECK(contains(kcsv, "feature_id,class,x,density"));
    CHECK(contains(kcsv, ",covid,"));
    CHECK(contains(kcsv, ",other,"));
}

TEST_CASE("grid search honors configured axes and reports the winner") {
    TempDir tmp("tcli-grid");
    const std::string feats = write_table(tmp.str("t.csv"), 20, 6);
    testutil::write_text(tmp.str("cfg.json"),
                         "{\"grid_axes\": {\"n_estimators\": [3], \"learning_rate\": [1.0], "
                         "\"max_depth\": [1, 2], \"min_samples_split\": [2]}}\n");
    auto r = run(tmp.str(""), {"grid", "--features", feats, "--out", tmp.str("g"), "--config",
                               tmp.str("cfg.json")});
    CHECK(r.code == 0);
    CHECK(contains(r.out, "best:"));
    auto j = json::parse(std::ifstream(tmp.str("g/grid.json")));
    CHECK(j.at("config").contains("grid_axes"));
    CHECK_FALSE(j.at("config").contains("n_estimators"));
    CHECK(j.at("config").at("grid_axes").at("max_depth") == json::array({1, 2}));
}

TEST_CASE("pipeline runs end to end, resumes, and is reproducible") {
    TempDir tmp("tcli-pipeline");
    const std::string manifest = make_corpus(tmp.str("corpus"), 6, 3);

    const std::vector<std::string> base = {"pipeline",     "--manifest", manifest,
                                           "--folds",      "3",          "--grid-points",
                                           "64",           "--seed",     "9"};
    auto with_out = [&](const std::string& out) {
        auto args = base;
        args.push_back("--out");
        args.push_back(out);
        return args;
    };

    auto r1 = run(tmp.str(""), with_out(tmp.str("p1")));
    CHECK(r1.code == 0);
    CHECK(contains(r1.err, "pipeline: extracted 6 cases"));
    CHECK(contains(r1.out, "auc"));
    for (const char* name : {"features.csv", "eval.json", "eval.csv", "importance.json",
                             "importance.csv", "kde.csv", "model.json"})
        CHECK(std::filesystem::exists(tmp.str("p1/") + name));

    // Resume: the existing feature table short-circuits extraction.
    auto r2 = run(tmp.str(""), with_out(tmp.str("p1")));
    CHECK(r2.code == 0);
    CHECK(contains(r2.err, "extract skipped"));

    // A fresh directory reproduces the same bytes.
    auto r3 = run(tmp.str(""), with_out(tmp.str("p2")));
    CHECK(r3.code == 0);
    for (const char* name :
         {"features.csv", "eval.json", "eval.csv", "importance.json", "kde.csv", "model.json"})
        CHECK(testutil::read_bytes(tmp.str("p1/") + name) ==
              testutil::read_bytes(tmp.str("p2/") + name));
}
