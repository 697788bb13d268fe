// triage — synthetic corpus generation, feature extraction, training, and
// evaluation for CT triage studies. One subcommand per pipeline stage, all
// stages driven by the same layered configuration:
//
//   flags  >  --config JSON file  >  TRIAGE_* environment  >  built-in defaults
//
// Every report embeds the resolved content-shaping settings ("config") plus
// the feature schema version. Execution knobs that cannot change output bytes
// (--jobs, --out, input paths) are deliberately excluded from that echo so
// reruns of the same study are byte-identical. Final files are written to a
// temp path and renamed into place; an interrupted run never leaves a partial
// final file behind.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "triage/errors.hpp"
#include "triage/eval.hpp"
#include "triage/features.hpp"
#include "triage/learn.hpp"
#include "triage/parallel.hpp"
#include "triage/phantom.hpp"
#include "triage/volume_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace triage;

namespace {

constexpr std::uint64_t kDefaultSeed = 42;
constexpr int kDefaultFolds = 5;
constexpr int kDefaultKdeGridPoints = 1024;  // step < the 1e-3 bandwidth floor
constexpr int kKdeTopFeatures = 10;

struct Opts {
    std::string manifest;
    std::string features;
    std::string out;
    std::string config;
    std::uint64_t seed = kDefaultSeed;
    int folds = kDefaultFolds;
    int jobs = 0;  // 0 = all available workers
    std::string model = "adaboost-dt";
    std::optional<int> n_estimators;
    std::optional<double> learning_rate;
    std::optional<int> max_depth;
    std::optional<int> min_samples_split;
    std::vector<std::string> mask_group;
    int n = 20;
    double class_mix = 0.58;
    std::string profile = "standard";
    int grid_points = kDefaultKdeGridPoints;
    bool with_grid = false;
    bool with_ablation = false;
    ExtractConfig extract;
    GridSpec grid_axes{{30, 50, 80}, {0.5, 1.0, 1.5}, {1, 2, 3}, {2, 4}};
    json file;  // parsed --config contents; null when absent
};

// --- configuration layers -------------------------------------------------

std::string env_name(const std::string& key) {
    std::string name = "TRIAGE_";
    for (char c : key) name += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return name;
}

template <typename T>
T parse_env_value(const std::string& name, const std::string& text) {
    if constexpr (std::is_same_v<T, std::string>) {
        return text;
    } else if constexpr (std::is_same_v<T, bool>) {
        if (text == "1" || text == "true") return true;
        if (text == "0" || text == "false") return false;
        throw Error(Errc::bad_config, name + ": expected a boolean, got '" + text + "'");
    } else {
        T v{};
        auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
        if (ec != std::errc() || p != text.data() + text.size())
            throw Error(Errc::bad_config, name + ": expected a number, got '" + text + "'");
        return v;
    }
}

template <typename T>
struct bare_type {
    using type = T;
};
template <typename T>
struct bare_type<std::optional<T>> {
    using type = T;
};

bool flag_given(const CLI::App& cmd, const std::string& flag) {
    const CLI::Option* opt = cmd.get_option_no_throw(flag);
    return opt != nullptr && opt->count() > 0;
}

// Applies the file/env layers to one setting; the flag layer already lives in
// `value` because CLI11 bound it there.
template <typename T>
void lookup(const CLI::App& cmd, const json& file, const std::string& flag, const std::string& key,
            T& value) {
    using V = typename bare_type<T>::type;
    if (flag_given(cmd, flag)) return;
    if (file.is_object() && file.contains(key)) {
        try {
            value = file.at(key).get<V>();
        } catch (const json::exception& e) {
            throw Error(Errc::bad_config, "config key '" + key + "': " + e.what());
        }
        return;
    }
    const std::string env_key = env_name(key);
    if (const char* env = std::getenv(env_key.c_str())) value = parse_env_value<V>(env_key, env);
}

void lookup_groups(const CLI::App& cmd, const json& file, std::vector<std::string>& groups) {
    if (flag_given(cmd, "--mask-group")) return;
    if (file.is_object() && file.contains("mask_group")) {
        try {
            groups = file.at("mask_group").get<std::vector<std::string>>();
        } catch (const json::exception& e) {
            throw Error(Errc::bad_config, std::string("config key 'mask_group': ") + e.what());
        }
        return;
    }
    if (const char* env = std::getenv("TRIAGE_MASK_GROUP")) {
        groups.clear();
        std::string token;
        std::stringstream ss{std::string(env)};
        while (std::getline(ss, token, ','))
            if (!token.empty()) groups.push_back(token);
    }
}

json load_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::missing_file, "cannot open config: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw Error(Errc::parse_error, path + ": " + e.what());
    }
    if (!j.is_object()) throw Error(Errc::bad_config, path + ": config must be a JSON object");

    static const std::set<std::string> known = {
        "manifest",     "features",      "out",       "seed",       "folds",
        "jobs",         "model",         "n_estimators", "learning_rate", "max_depth",
        "min_samples_split", "mask_group", "n",       "class_mix",  "profile",
        "grid_points",  "with_grid",     "with_ablation", "extract", "grid_axes"};
    for (const auto& [key, value] : j.items())
        if (!known.count(key)) throw Error(Errc::bad_config, path + ": unknown config key '" + key + "'");
    return j;
}

void apply_sub_object(const json& file, const char* key, const std::set<std::string>& known,
                      const std::function<void(const std::string&, const json&)>& set) {
    if (!file.is_object() || !file.contains(key)) return;
    const json& obj = file.at(key);
    if (!obj.is_object()) throw Error(Errc::bad_config, std::string("config key '") + key + "' must be an object");
    for (const auto& [k, v] : obj.items()) {
        if (!known.count(k))
            throw Error(Errc::bad_config, std::string("unknown config key '") + key + "." + k + "'");
        try {
            set(k, v);
        } catch (const json::exception& e) {
            throw Error(Errc::bad_config, std::string("config key '") + key + "." + k + "': " + e.what());
        }
    }
}

void resolve(const CLI::App& cmd, Opts& o) {
    // --config itself resolves from flag then environment.
    if (!flag_given(cmd, "--config"))
        if (const char* env = std::getenv("TRIAGE_CONFIG")) o.config = env;
    if (!o.config.empty()) o.file = load_config_file(o.config);

    lookup(cmd, o.file, "--manifest", "manifest", o.manifest);
    lookup(cmd, o.file, "--features", "features", o.features);
    lookup(cmd, o.file, "--out", "out", o.out);
    lookup(cmd, o.file, "--seed", "seed", o.seed);
    lookup(cmd, o.file, "--folds", "folds", o.folds);
    lookup(cmd, o.file, "--jobs", "jobs", o.jobs);
    lookup(cmd, o.file, "--model", "model", o.model);
    lookup(cmd, o.file, "--n-estimators", "n_estimators", o.n_estimators);
    lookup(cmd, o.file, "--learning-rate", "learning_rate", o.learning_rate);
    lookup(cmd, o.file, "--max-depth", "max_depth", o.max_depth);
    lookup(cmd, o.file, "--min-samples-split", "min_samples_split", o.min_samples_split);
    lookup_groups(cmd, o.file, o.mask_group);
    lookup(cmd, o.file, "--n", "n", o.n);
    lookup(cmd, o.file, "--class-mix", "class_mix", o.class_mix);
    lookup(cmd, o.file, "--profile", "profile", o.profile);
    lookup(cmd, o.file, "--grid-points", "grid_points", o.grid_points);
    lookup(cmd, o.file, "--with-grid", "with_grid", o.with_grid);
    lookup(cmd, o.file, "--with-ablation", "with_ablation", o.with_ablation);

    apply_sub_object(o.file, "extract",
                     {"shell_depth_mm", "bronchial_margin_mm", "roundedness_min",
                      "laterality_min_cm3", "connectivity"},
                     [&](const std::string& k, const json& v) {
                         if (k == "shell_depth_mm") o.extract.shell_depth_mm = v.get<double>();
                         else if (k == "bronchial_margin_mm") o.extract.bronchial_margin_mm = v.get<double>();
                         else if (k == "roundedness_min") o.extract.roundedness_min = v.get<double>();
                         else if (k == "laterality_min_cm3") o.extract.laterality_min_cm3 = v.get<double>();
                         else o.extract.connectivity = v.get<int>();
                     });
    apply_sub_object(o.file, "grid_axes",
                     {"n_estimators", "learning_rate", "max_depth", "min_samples_split"},
                     [&](const std::string& k, const json& v) {
                         if (k == "n_estimators") o.grid_axes.n_estimators = v.get<std::vector<int>>();
                         else if (k == "learning_rate") o.grid_axes.learning_rate = v.get<std::vector<double>>();
                         else if (k == "max_depth") o.grid_axes.max_depth = v.get<std::vector<int>>();
                         else o.grid_axes.min_samples_split = v.get<std::vector<int>>();
                     });

    if (o.model != "adaboost-dt" && o.model != "rf")
        throw Error(Errc::bad_config, "model must be adaboost-dt or rf, got '" + o.model + "'");
    if (o.folds < 2) throw Error(Errc::bad_config, "folds must be >= 2");
    if (o.jobs < 0) throw Error(Errc::bad_config, "jobs must be >= 0");
    if (o.grid_points < 2) throw Error(Errc::bad_config, "grid-points must be >= 2");
    for (const auto& g : o.mask_group) parse_feature_group(g);

    set_jobs(o.jobs);
}

// --- resolved settings ----------------------------------------------------

ModelParams effective_params(const Opts& o) {
    ModelParams p;
    p.kind = o.model == "rf" ? EnsembleKind::RandomForest : EnsembleKind::AdaBoostDT;
    if (p.kind == EnsembleKind::AdaBoostDT) {
        if (o.n_estimators) p.boost.n_estimators = *o.n_estimators;
        if (o.learning_rate) p.boost.learning_rate = *o.learning_rate;
        if (o.max_depth) p.boost.tree.max_depth = *o.max_depth;
        if (o.min_samples_split) p.boost.tree.min_samples_split = *o.min_samples_split;
    } else {
        if (o.n_estimators) p.forest.n_trees = *o.n_estimators;
        if (o.learning_rate) std::cerr << "triage: note: learning-rate has no effect with rf\n";
        if (o.max_depth) p.forest.tree.max_depth = *o.max_depth;
        if (o.min_samples_split) p.forest.tree.min_samples_split = *o.min_samples_split;
    }
    return p;
}

GroupMask effective_mask(const Opts& o) {
    GroupMask mask = kAllGroups;
    for (const auto& g : o.mask_group) mask[static_cast<std::size_t>(parse_feature_group(g))] = false;
    return mask;
}

json model_config(const Opts& o) {
    const ModelParams p = effective_params(o);
    json j;
    j["model"] = o.model;
    if (p.kind == EnsembleKind::AdaBoostDT) {
        j["n_estimators"] = p.boost.n_estimators;
        j["learning_rate"] = p.boost.learning_rate;
        j["max_depth"] = p.boost.tree.max_depth;
        j["min_samples_split"] = p.boost.tree.min_samples_split;
    } else {
        j["n_estimators"] = p.forest.n_trees;
        j["max_depth"] = p.forest.tree.max_depth;
        j["min_samples_split"] = p.forest.tree.min_samples_split;
    }
    std::vector<std::string> groups = o.mask_group;
    std::sort(groups.begin(), groups.end());
    groups.erase(std::unique(groups.begin(), groups.end()), groups.end());
    j["mask_group"] = groups;
    j["seed"] = o.seed;
    j["folds"] = o.folds;
    return j;
}

json extract_config_json(const ExtractConfig& c) {
    return json{{"shell_depth_mm", c.shell_depth_mm},
                {"bronchial_margin_mm", c.bronchial_margin_mm},
                {"roundedness_min", c.roundedness_min},
                {"laterality_min_cm3", c.laterality_min_cm3},
                {"connectivity", c.connectivity}};
}

json grid_axes_json(const GridSpec& g) {
    return json{{"n_estimators", g.n_estimators},
                {"learning_rate", g.learning_rate},
                {"max_depth", g.max_depth},
                {"min_samples_split", g.min_samples_split}};
}

// --- output plumbing ------------------------------------------------------

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::io_error, "cannot write " + path);
    out << text;
    out.flush();
    if (!out) throw Error(Errc::io_error, "short write: " + path);
}

// Runs `writer` against a sibling temp path, then renames into place.
template <typename Writer>
void write_final(const fs::path& path, Writer&& writer) {
    fs::path tmp = path;
    tmp += ".tmp";
    writer(tmp.string());
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw Error(Errc::io_error, path.string() + ": " + ec.message());
}

void write_json_report(json j, const json& config, const fs::path& path) {
    j["schema_version"] = FeatureSchema::v1().version();
    j["config"] = config;
    write_final(path, [&](const std::string& p) { write_text(p, j.dump(2) + "\n"); });
}

std::string csv_comment(const json& config) {
    return "schema_version: " + FeatureSchema::v1().version() + "\nconfig: " + config.dump();
}

void require(const CLI::App& cmd, const std::string& value, const char* flag) {
    if (value.empty())
        throw Error(Errc::usage_error, cmd.get_name() + ": " + flag + " is required");
}

fs::path ensure_out_dir(const std::string& out) {
    const fs::path dir{out};
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(Errc::io_error, out + ": " + ec.message());
    return dir;
}

// --- manifest walking -----------------------------------------------------

struct CaseRef {
    std::string case_id;
    std::string manifest;  // absolute-ish path, ready for load_case
};

// Accepts either a corpus manifest ({"cases": [...]}) or a single case
// manifest; returns the cases in manifest order.
std::vector<CaseRef> list_cases(const std::string& manifest_path) {
    std::ifstream in(manifest_path, std::ios::binary);
    if (!in) throw Error(Errc::missing_file, "cannot open manifest: " + manifest_path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw Error(Errc::parse_error, manifest_path + ": " + e.what());
    }
    if (!j.is_object()) throw Error(Errc::parse_error, manifest_path + ": expected a JSON object");

    std::vector<CaseRef> cases;
    if (j.contains("cases")) {
        const fs::path base = fs::path(manifest_path).parent_path();
        try {
            for (const auto& c : j.at("cases"))
                cases.push_back({c.at("case_id").get<std::string>(),
                                 (base / c.at("manifest").get<std::string>()).string()});
        } catch (const json::exception& e) {
            throw Error(Errc::parse_error, manifest_path + ": " + e.what());
        }
        if (cases.empty()) throw Error(Errc::empty_input, manifest_path + ": corpus lists no cases");
    } else {
        std::string id;
        try {
            id = j.at("case_id").get<std::string>();
        } catch (const json::exception& e) {
            throw Error(Errc::parse_error, manifest_path + ": " + e.what());
        }
        cases.push_back({id, manifest_path});
    }
    return cases;
}

// --- shared stage cores ---------------------------------------------------

FeatureTable extract_table(const Opts& o) {
    FeatureTable table;
    table.schema_version = FeatureSchema::v1().version();
    for (const CaseRef& ref : list_cases(o.manifest)) {
        const CaseBundle bundle = load_case(ref.manifest);
        table.rows.push_back(extract_features(bundle, o.extract));
    }
    return table;
}

CrossValResult run_cv(const FeatureTable& table, const Opts& o) {
    return cross_validate(table, effective_params(o), o.folds, o.seed, effective_mask(o));
}

// Coarse pass over the configured axes, then a fine pass around the winner;
// duplicate cells keep their first (coarse) entry.
GridResult run_grid_core(const FeatureTable& table, const Opts& o) {
    const EnsembleKind kind =
        o.model == "rf" ? EnsembleKind::RandomForest : EnsembleKind::AdaBoostDT;
    GridResult coarse = grid_search(table, o.grid_axes, o.folds, o.seed, kind);
    GridResult fine =
        grid_search(table, refine_around(coarse.ranked.front().params, GridDeltas{}), o.folds,
                    o.seed, kind);

    auto key = [](const ModelParams& p) {
        std::ostringstream k;
        if (p.kind == EnsembleKind::AdaBoostDT)
            k << 'b' << p.boost.n_estimators << ':' << p.boost.learning_rate << ':'
              << p.boost.tree.max_depth << ':' << p.boost.tree.min_samples_split;
        else
            k << 'f' << p.forest.n_trees << ':' << p.forest.tree.max_depth << ':'
              << p.forest.tree.min_samples_split;
        return k.str();
    };
    GridResult merged;
    std::set<std::string> seen;
    for (auto* pass : {&coarse, &fine})
        for (auto& e : pass->ranked)
            if (seen.insert(key(e.params)).second) merged.ranked.push_back(std::move(e));
    std::stable_sort(merged.ranked.begin(), merged.ranked.end(),
                     [](const GridEntry& a, const GridEntry& b) {
                         if (a.selection_score != b.selection_score)
                             return a.selection_score > b.selection_score;
                         return a.report.auc.mean > b.report.auc.mean;
                     });
    return merged;
}

std::vector<KdeCurve> kde_curves(const FeatureTable& table, const std::vector<int>& feature_ids,
                                 int grid_points) {
    const auto& schema = FeatureSchema::v1();
    std::vector<std::size_t> covid_rows, other_rows;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        if (!table.rows[r].label)
            throw Error(Errc::degenerate_data,
                        "row '" + table.rows[r].case_id + "' has no label; density plots need labels");
        (*table.rows[r].label == CaseLabel::covid ? covid_rows : other_rows).push_back(r);
    }
    if (covid_rows.empty() || other_rows.empty())
        throw Error(Errc::single_class_data, "density plots need both classes");

    std::vector<KdeCurve> curves;
    for (int f : feature_ids) {
        // shared min-max normalization, so both class curves live on one axis
        double lo = table.rows.front().values[static_cast<std::size_t>(f)];
        double hi = lo;
        for (const auto& row : table.rows) {
            lo = std::min(lo, row.values[static_cast<std::size_t>(f)]);
            hi = std::max(hi, row.values[static_cast<std::size_t>(f)]);
        }
        auto normalized = [&](const std::vector<std::size_t>& rows) {
            std::vector<double> v;
            v.reserve(rows.size());
            for (std::size_t r : rows) {
                const double x = table.rows[r].values[static_cast<std::size_t>(f)];
                v.push_back(hi > lo ? (x - lo) / (hi - lo) : 0.5);
            }
            return v;
        };
        for (int cls = 0; cls < 2; ++cls) {
            const CaseLabel label = cls == 0 ? CaseLabel::covid : CaseLabel::other;
            KdeCurve c = kde(normalized(cls == 0 ? covid_rows : other_rows), grid_points);
            c.feature_id = schema.def(f).id;
            c.class_name = case_label_name(label);
            curves.push_back(std::move(c));
        }
    }
    return curves;
}

void print_report(const EvalReport& r) {
    std::cout << "folds " << r.k << ", seed " << r.seed << "\n"
              << "sensitivity  " << format_mean_std(r.sensitivity.mean, r.sensitivity.stddev) << "\n"
              << "specificity  " << format_mean_std(r.specificity.mean, r.specificity.stddev) << "\n"
              << "precision    " << format_mean_std(r.precision.mean, r.precision.stddev) << "\n"
              << "f1           " << format_mean_std(r.f1.mean, r.f1.stddev) << "\n"
              << "accuracy     " << format_mean_std(r.accuracy.mean, r.accuracy.stddev) << "\n"
              << "auc          " << format_mean_std(r.auc.mean, r.auc.stddev) << "\n";
}

// --- subcommands ----------------------------------------------------------

int run_phantom(const CLI::App& cmd, const Opts& o) {
    require(cmd, o.out, "--out");
    const CorpusProfile profile = parse_corpus_profile(o.profile);

    const fs::path out{o.out};
    if (fs::exists(out)) {
        if (!fs::is_directory(out) || !fs::is_empty(out))
            throw Error(Errc::io_error, o.out + ": exists and is not an empty directory");
        fs::remove(out);
    }
    if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
    fs::path tmp = out;
    tmp += ".tmp";
    fs::remove_all(tmp);

    const Corpus corpus = generate_corpus(o.n, o.class_mix, o.seed, CorpusRanges{}, profile,
                                          tmp.string());

    // stamp run provenance onto the ground-truth table
    const json config{{"n", o.n},
                      {"class_mix", o.class_mix},
                      {"seed", o.seed},
                      {"profile", o.profile}};
    save_feature_table(corpus.ground_truth, (tmp / "ground_truth.csv").string(),
                       csv_comment(config));

    std::error_code ec;
    fs::rename(tmp, out, ec);
    if (ec) throw Error(Errc::io_error, o.out + ": " + ec.message());

    int covid = 0;
    for (const auto& c : corpus.cases) covid += c.label == CaseLabel::covid ? 1 : 0;
    std::cout << "corpus " << o.out << ": " << corpus.cases.size() << " cases (" << covid
              << " covid / " << corpus.cases.size() - static_cast<std::size_t>(covid)
              << " other), profile " << o.profile << ", seed " << o.seed << "\n";
    return 0;
}

int run_validate(const CLI::App& cmd, const Opts& o) {
    require(cmd, o.manifest, "--manifest");
    std::int64_t bad = 0;
    for (const CaseRef& ref : list_cases(o.manifest)) {
        const CaseBundle bundle = load_case(ref.manifest);
        const ValidationReport report = validate_case(bundle);
        if (report.ok()) {
            std::cout << ref.case_id << ": ok\n";
            continue;
        }
        ++bad;
        for (const auto& v : report.violations)
            std::cerr << ref.case_id << ": " << v.kind << " x" << v.count << ": " << v.detail
                      << "\n";
    }
    if (bad > 0) {
        std::cerr << "triage: " << bad << " case(s) failed validation\n";
        return 1;
    }
    return 0;
}

int run_extract(const CLI::App& cmd, const Opts& o) {
    require(cmd, o.manifest, "--manifest");
    fs::path out_path;
    if (!o.features.empty()) {
        out_path = o.features;
        if (!out_path.parent_path().empty()) fs::create_directories(out_path.parent_path());
    } else {
        require(cmd, o.out, "--out (or --features)");
        out_path = ensure_out_dir(o.out) / "features.csv";
    }

    const FeatureTable table = extract_table(o);
    const json config{{"extract", extract_config_json(o.extract)}};
    write_final(out_path, [&](const std::string& p) {
        save_feature_table(table, p, csv_comment(config));
    });
    std::cout << "wrote " << out_path.string() << " (" << table.rows.size() << " cases, "
              << FeatureSchema::v1().size() << " features)\n";
    return 0;
}

int run_train(const CLI::App& cmd, const Opts& o) {
    require(cmd, o.features, "--features");
    require(cmd, o.out, "--out");
    const FeatureTable table = load_feature_table(o.features);
    const TrainSet data = make_train_set(table);
    const ModelParams params = effective_params(o);
    const GroupMask mask = effective_mask(o);

    Ensemble model = params.kind == EnsembleKind::AdaBoostDT
                         ? fit_adaboost(data, params.boost, o.seed, mask)
                         : fit_random_forest(data, params.forest, o.seed, mask);
    model.threshold = choose_threshold(ensemble_proba_batch(model, data), data.y);

    const fs::path path = ensure_out_dir(o.out) / "model.json";
    json j = model_to_json(model);
    j["config"] = model_config(o);
    write_final(path, [&](const std::string& p) { write_text(p, j.dump(2) + "\n"); });
    std::cout << "wrote " << path.string() << " (" << o.model << ", " << model.members.size()
              << " members, threshold " << model.threshold << ")\n";
    return 0;
}

int run_evaluate(const CLI::App& cmd, const Opts& o) {
    require(cmd, o.features, "--features");
    require(cmd, o.out, "--out");
    const FeatureTable table = load_feature_table(o.features);
    const CrossValResult cv = run_cv(table, o);

    const fs::path dir = ensure_out_dir(o.out);
    const json config = model_config(o);
    write_json_report(eval_report_to_json(cv.report), config, dir / "eval.json");
    write_final(dir / "eval.csv", [&](const std::string& p) {
        save_eval_report_csv(cv.report, p, csv_comment(config));
    });
    print_report(cv.report);
    return 0;
}

int run_grid(const CLI::App& cmd, const Opts& o) {
    require(cmd, o.features, "--features");
    require(cmd, o.out, "--out");
    const FeatureTable table = load_feature_table(o.features);
    const GridResult result = run_grid_core(table, o);

    const fs::path dir = ensure_out_dir(o.out);
    json config = model_config(o);
    config.erase("n_estimators");
    config.erase("learning_rate");
    config.erase("max_depth");
    config.erase("min_samples_split");
    config["grid_axes"] = grid_axes_json(o.grid_axes);
    write_json_report(grid_to_json(result), config, dir / "grid.json");
    write_final(dir / "grid.csv", [&](const std::string& p) {
        save_grid_csv(result, p, csv_comment(config));
    });

    const GridEntry& best = result.ranked.front();
    std::cout << "grid: " << result.ranked.size() << " configurations\n";
    if (best.params.kind == EnsembleKind::AdaBoostDT)
        std::cout << "best: n_estimators=" << best.params.boost.n_estimators
                  << " learning_rate=" << best.params.boost.learning_rate
                  << " max_depth=" << best.params.boost.tree.max_depth
                  << " min_samples_split=" << best.params.boost.tree.min_samples_split;
    else
        std::cout << "best: n_estimators=" << best.params.forest.n_trees
                  << " max_depth=" << best.params.forest.tree.max_depth
                  << " min_samples_split=" << best.params.forest.tree.min_samples_split;
    std::cout << "  auc " << format_mean_std(best.report.auc.mean, best.report.auc.stddev) << "\n";
    return 0;
}

int run_ablate(const CLI::App& cmd, const Opts& o) {
    require(cmd, o.features, "--features");
    require(cmd, o.out, "--out");
    const FeatureTable table = load_feature_table(o.features);
    const AblationResult result = ablation(table, o.folds, o.seed, effective_params(o));

    const fs::path dir = ensure_out_dir(o.out);
    json config = model_config(o);
    config.erase("mask_group");  // ablation sweeps the masks itself
    write_json_report(ablation_to_json(result), config, dir / "ablation.json");
    write_final(dir / "ablation.csv", [&](const std::string& p) {
        save_ablation_csv(result, p, csv_comment(config));
    });
    for (const auto& row : result.rows)
        std::cout << row.label << ": auc "
                  << format_mean_std(row.report.auc.mean, row.report.auc.stddev) << "\n";
    return 0;
}

int run_importance(const CLI::App& cmd, const Opts& o) {
    require(cmd, o.features, "--features");
    require(cmd, o.out, "--out");
    const FeatureTable table = load_feature_table(o.features);
    const CrossValResult cv = run_cv(table, o);
    const auto& schema = FeatureSchema::v1();
    const ImportanceReport report = gini_importance(cv.fold_models, schema);

    const fs::path dir = ensure_out_dir(o.out);
    const json config = model_config(o);
    write_json_report(importance_to_json(report, schema), config, dir / "importance.json");
    write_final(dir / "importance.csv", [&](const std::string& p) {
        save_importance_csv(report, schema, p, csv_comment(config));
    });
    if (report.no_splits) std::cerr << "triage: note: no model member ever split\n";
    for (int i = 0; i < std::min<int>(kKdeTopFeatures, static_cast<int>(report.ranking.size())); ++i) {
        const int f = report.ranking[static_cast<std::size_t>(i)];
        std::cout << i + 1 << ". " << schema.def(f).id << "  "
                  << report.mean_importance[static_cast<std::size_t>(f)] << "\n";
    }
    return 0;
}

int run_kde(const CLI::App& cmd, const Opts& o) {
    require(cmd, o.features, "--features");
    require(cmd, o.out, "--out");
    const FeatureTable table = load_feature_table(o.features);
    const auto& schema = FeatureSchema::v1();
    std::vector<int> all(static_cast<std::size_t>(schema.size()));
    for (int i = 0; i < schema.size(); ++i) all[static_cast<std::size_t>(i)] = i;
    const std::vector<KdeCurve> curves = kde_curves(table, all, o.grid_points);

    const fs::path dir = ensure_out_dir(o.out);
    const json config{{"grid_points", o.grid_points}};
    write_final(dir / "kde.csv", [&](const std::string& p) {
        save_kde_csv(curves, p, csv_comment(config));
    });
    std::cout << "wrote " << (dir / "kde.csv").string() << " (" << curves.size() << " curves, "
              << o.grid_points << " points each)\n";
    return 0;
}

int run_pipeline(const CLI::App& cmd, const Opts& o) {
    require(cmd, o.out, "--out");
    const fs::path dir = ensure_out_dir(o.out);
    const fs::path feat_path = o.features.empty() ? dir / "features.csv" : fs::path(o.features);

    json config = model_config(o);
    config["extract"] = extract_config_json(o.extract);
    config["with_grid"] = o.with_grid;
    config["with_ablation"] = o.with_ablation;
    if (o.with_grid) config["grid_axes"] = grid_axes_json(o.grid_axes);
    config["grid_points"] = o.grid_points;
    config["kde_top"] = kKdeTopFeatures;

    auto stage = [](const char* name, auto&& fn) {
        try {
            fn();
        } catch (const Error&) {
            std::cerr << "triage: pipeline stage '" << name << "' failed\n";
            throw;
        }
    };

    // extract — skipped when the feature table already exists (resume point)
    if (fs::exists(feat_path)) {
        std::cerr << "pipeline: extract skipped, " << feat_path.string() << " exists\n";
    } else {
        require(cmd, o.manifest, "--manifest (no feature table to resume from)");
        stage("extract", [&] {
            const FeatureTable table = extract_table(o);
            write_final(feat_path, [&](const std::string& p) {
                save_feature_table(table, p, csv_comment(config));
            });
            std::cerr << "pipeline: extracted " << table.rows.size() << " cases\n";
        });
    }

    FeatureTable table;
    stage("load-features", [&] { table = load_feature_table(feat_path.string()); });

    CrossValResult cv;
    stage("cross-validate", [&] {
        cv = run_cv(table, o);
        write_json_report(eval_report_to_json(cv.report), config, dir / "eval.json");
        write_final(dir / "eval.csv", [&](const std::string& p) {
            save_eval_report_csv(cv.report, p, csv_comment(config));
        });
        std::cerr << "pipeline: cross-validated, auc "
                  << format_mean_std(cv.report.auc.mean, cv.report.auc.stddev) << "\n";
    });

    if (o.with_grid) stage("grid", [&] {
        const GridResult result = run_grid_core(table, o);
        write_json_report(grid_to_json(result), config, dir / "grid.json");
        write_final(dir / "grid.csv", [&](const std::string& p) {
            save_grid_csv(result, p, csv_comment(config));
        });
        std::cerr << "pipeline: grid ranked " << result.ranked.size() << " configurations\n";
    });

    if (o.with_ablation) stage("ablate", [&] {
        const AblationResult result = ablation(table, o.folds, o.seed, effective_params(o));
        write_json_report(ablation_to_json(result), config, dir / "ablation.json");
        write_final(dir / "ablation.csv", [&](const std::string& p) {
            save_ablation_csv(result, p, csv_comment(config));
        });
        std::cerr << "pipeline: ablation swept " << result.rows.size() << " rows\n";
    });

    const auto& schema = FeatureSchema::v1();
    ImportanceReport importance;
    stage("importance", [&] {
        importance = gini_importance(cv.fold_models, schema);
        write_json_report(importance_to_json(importance, schema), config, dir / "importance.json");
        write_final(dir / "importance.csv", [&](const std::string& p) {
            save_importance_csv(importance, schema, p, csv_comment(config));
        });
    });

    stage("kde", [&] {
        std::vector<int> top(importance.ranking.begin(),
                             importance.ranking.begin() +
                                 std::min<std::size_t>(kKdeTopFeatures, importance.ranking.size()));
        const std::vector<KdeCurve> curves = kde_curves(table, top, o.grid_points);
        write_final(dir / "kde.csv", [&](const std::string& p) {
            save_kde_csv(curves, p, csv_comment(config));
        });
    });

    stage("train", [&] {
        const TrainSet data = make_train_set(table);
        const ModelParams params = effective_params(o);
        Ensemble model = params.kind == EnsembleKind::AdaBoostDT
                             ? fit_adaboost(data, params.boost, o.seed, effective_mask(o))
                             : fit_random_forest(data, params.forest, o.seed, effective_mask(o));
        model.threshold = choose_threshold(ensemble_proba_batch(model, data), data.y);
        json j = model_to_json(model);
        j["config"] = config;
        write_final(dir / "model.json", [&](const std::string& p) { write_text(p, j.dump(2) + "\n"); });
    });

    print_report(cv.report);
    return 0;
}

// --- wiring ---------------------------------------------------------------

void add_common(CLI::App* cmd, Opts& o) {
    cmd->add_option("--config", o.config, "JSON config file (flags > file > TRIAGE_* env > defaults)");
    cmd->add_option("--seed", o.seed, "random seed (default 42)");
    cmd->add_option("--jobs", o.jobs, "worker threads, 0 = all; never changes output bytes")
        ->check(CLI::NonNegativeNumber);
}

void add_model_opts(CLI::App* cmd, Opts& o) {
    cmd->add_option("--model", o.model, "classifier: adaboost-dt or rf")
        ->check(CLI::IsMember({"adaboost-dt", "rf"}));
    cmd->add_option("--n-estimators", o.n_estimators, "ensemble size");
    cmd->add_option("--learning-rate", o.learning_rate, "boosting shrinkage");
    cmd->add_option("--max-depth", o.max_depth, "tree depth limit");
    cmd->add_option("--min-samples-split", o.min_samples_split, "min samples to split a node");
}

void add_folds(CLI::App* cmd, Opts& o) {
    cmd->add_option("--folds", o.folds, "stratified CV folds (default 5)")->check(CLI::Range(2, 1000));
}

void add_mask(CLI::App* cmd, Opts& o) {
    cmd->add_option("--mask-group", o.mask_group,
                    "feature group to drop (repeatable): lungs_stats, opacity_stats, "
                    "opacity_texture, shape_location")
        ->check(CLI::IsMember({"lungs_stats", "opacity_stats", "opacity_texture", "shape_location"}));
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"CT triage feature analysis and classification"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "triage 1.0.0");
    Opts o;

    CLI::App* phantom = app.add_subcommand("phantom", "generate a synthetic corpus with ground truth");
    phantom->add_option("--n", o.n, "number of cases (default 20)")->check(CLI::Range(2, 1000000));
    phantom->add_option("--class-mix", o.class_mix, "covid fraction (default 0.58)");
    phantom->add_option("--profile", o.profile, "corpus profile: standard or shape_signal")
        ->check(CLI::IsMember({"standard", "shape_signal"}));
    phantom->add_option("--out", o.out, "corpus directory (created; must not already have content)");
    add_common(phantom, o);

    CLI::App* validate = app.add_subcommand("validate", "check mask/geometry invariants of cases");
    validate->add_option("--manifest", o.manifest, "case or corpus manifest");
    add_common(validate, o);

    CLI::App* extract = app.add_subcommand("extract", "compute the feature table for a corpus");
    extract->add_option("--manifest", o.manifest, "case or corpus manifest");
    extract->add_option("--features", o.features, "output CSV path (default <out>/features.csv)");
    extract->add_option("--out", o.out, "output directory");
    add_common(extract, o);

    CLI::App* train = app.add_subcommand("train", "fit a classifier on a feature table");
    train->add_option("--features", o.features, "feature table CSV");
    train->add_option("--out", o.out, "output directory for model.json");
    add_model_opts(train, o);
    add_mask(train, o);
    add_common(train, o);

    CLI::App* evaluate = app.add_subcommand("evaluate", "stratified cross-validation report");
    evaluate->add_option("--features", o.features, "feature table CSV");
    evaluate->add_option("--out", o.out, "output directory for eval.json/eval.csv");
    add_model_opts(evaluate, o);
    add_folds(evaluate, o);
    add_mask(evaluate, o);
    add_common(evaluate, o);

    CLI::App* grid = app.add_subcommand("grid", "hyperparameter grid search with refinement pass");
    grid->add_option("--features", o.features, "feature table CSV");
    grid->add_option("--out", o.out, "output directory for grid.json/grid.csv");
    grid->add_option("--model", o.model, "classifier: adaboost-dt or rf")
        ->check(CLI::IsMember({"adaboost-dt", "rf"}));
    add_folds(grid, o);
    add_common(grid, o);

    CLI::App* ablate = app.add_subcommand("ablate", "leave-one-group-out ablation study");
    ablate->add_option("--features", o.features, "feature table CSV");
    ablate->add_option("--out", o.out, "output directory for ablation.json/ablation.csv");
    add_model_opts(ablate, o);
    add_folds(ablate, o);
    add_common(ablate, o);

    CLI::App* importance = app.add_subcommand("importance", "impurity-decrease feature ranking");
    importance->add_option("--features", o.features, "feature table CSV");
    importance->add_option("--out", o.out, "output directory for importance.json/importance.csv");
    add_model_opts(importance, o);
    add_folds(importance, o);
    add_mask(importance, o);
    add_common(importance, o);

    CLI::App* kde = app.add_subcommand("kde", "per-class feature density curves");
    kde->add_option("--features", o.features, "feature table CSV");
    kde->add_option("--out", o.out, "output directory for kde.csv");
    kde->add_option("--grid-points", o.grid_points, "evaluation points per curve (default 1024)")
        ->check(CLI::Range(2, 1 << 20));
    add_common(kde, o);

    CLI::App* pipeline = app.add_subcommand("pipeline", "extract -> evaluate -> reports, resumable");
    pipeline->add_option("--manifest", o.manifest, "case or corpus manifest (for extraction)");
    pipeline->add_option("--features", o.features, "feature table CSV (reused when it exists)");
    pipeline->add_option("--out", o.out, "output directory for all reports");
    pipeline->add_flag("--with-grid", o.with_grid, "also run the hyperparameter grid");
    pipeline->add_flag("--with-ablation", o.with_ablation, "also run the group ablation");
    pipeline->add_option("--grid-points", o.grid_points, "KDE points per curve (default 1024)")
        ->check(CLI::Range(2, 1 << 20));
    add_model_opts(pipeline, o);
    add_folds(pipeline, o);
    add_mask(pipeline, o);
    add_common(pipeline, o);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "triage: " << e.what() << "\n\n" << app.help() << std::flush;
        return 2;
    }

    try {
        const CLI::App* sub = app.get_subcommands().front();
        resolve(*sub, o);
        if (sub == phantom) return run_phantom(*sub, o);
        if (sub == validate) return run_validate(*sub, o);
        if (sub == extract) return run_extract(*sub, o);
        if (sub == train) return run_train(*sub, o);
        if (sub == evaluate) return run_evaluate(*sub, o);
        if (sub == grid) return run_grid(*sub, o);
        if (sub == ablate) return run_ablate(*sub, o);
        if (sub == importance) return run_importance(*sub, o);
        if (sub == kde) return run_kde(*sub, o);
        return run_pipeline(*sub, o);
    } catch (const Error& e) {
        std::cerr << "triage: " << e.what() << "\n";
        return e.code() == Errc::usage_error ? 2 : 1;
    } catch (const std::exception& e) {
        std::cerr << "triage: " << e.what() << "\n";
        return 1;
    }
}
