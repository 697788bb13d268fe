#include "triage/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "triage/detail/format.hpp"
#include "triage/errors.hpp"
#include "triage/parallel.hpp"
#include "triage/rng.hpp"

namespace triage {

using json = nlohmann::json;
using detail::shortest_double;

FoldSplit stratified_kfold(const std::vector<int>& labels, int k, std::uint64_t seed) {
    if (k < 2) throw Error(Errc::bad_config, "k must be >= 2");
    std::vector<int> by_class[2];
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i];
        if (y != 0 && y != 1) throw Error(Errc::bad_config, "labels must be 0 or 1");
        by_class[y].push_back(static_cast<int>(i));
    }
    for (int c = 0; c < 2; ++c)
        if (static_cast<int>(by_class[c].size()) < k)
            throw Error(Errc::too_few_per_class,
                        "class " + std::to_string(c) + " has " + std::to_string(by_class[c].size()) +
                            " members, need at least k = " + std::to_string(k));

    Rng rng(splitmix64(seed));
    FoldSplit split;
    split.k = k;
    split.fold_of.assign(labels.size(), -1);
    // The cursor rolls across classes so the assignment stream is one long
    // round-robin: fold sizes balance globally and per class.
    int cursor = 0;
    for (int c = 0; c < 2; ++c) {
        shuffle(by_class[c], rng);
        for (int row : by_class[c]) {
            split.fold_of[static_cast<std::size_t>(row)] = cursor % k;
            ++cursor;
        }
    }
    split.test_rows.assign(static_cast<std::size_t>(k), {});
    split.train_rows.assign(static_cast<std::size_t>(k), {});
    for (std::size_t i = 0; i < split.fold_of.size(); ++i) {
        for (int f = 0; f < k; ++f)
            (split.fold_of[i] == f ? split.test_rows : split.train_rows)[static_cast<std::size_t>(f)]
                .push_back(static_cast<int>(i));
    }
    return split;
}

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw Error(Errc::degenerate_data, "scores/labels size mismatch or empty");
    std::int64_t n_pos = 0, n_neg = 0;
    for (int y : labels) (y == 1 ? n_pos : n_neg)++;
    if (n_pos == 0 || n_neg == 0) throw Error(Errc::single_class_data, "AUC needs both classes");

    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] < scores[b];
        return a < b;
    });

    // Average ranks over tied scores, then the Mann–Whitney identity.
    double pos_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t t = i; t <= j; ++t)
            if (labels[order[t]] == 1) pos_rank_sum += avg_rank;
        i = j + 1;
    }
    const double np = static_cast<double>(n_pos);
    return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

Metrics compute_metrics(const std::vector<double>& scores, const std::vector<int>& labels,
                        double threshold) {
    if (scores.size() != labels.size() || scores.empty())
        throw Error(Errc::degenerate_data, "scores/labels size mismatch or empty");
    Metrics m;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool positive = scores[i] >= threshold;
        if (labels[i] == 1)
            (positive ? m.tp : m.fn)++;
        else
            (positive ? m.fp : m.tn)++;
    }
    if (m.tp + m.fn == 0 || m.tn + m.fp == 0)
        throw Error(Errc::single_class_data, "metrics need both classes");
    m.sensitivity = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
    m.specificity = static_cast<double>(m.tn) / static_cast<double>(m.tn + m.fp);
    if (m.tp + m.fp == 0) {
        m.precision = 0.0;
        m.precision_undefined = true;
    } else {
        m.precision = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
    }
    m.f1 = (m.precision + m.sensitivity) > 0.0
               ? 2.0 * m.precision * m.sensitivity / (m.precision + m.sensitivity)
               : 0.0;
    m.accuracy = static_cast<double>(m.tp + m.tn) / static_cast<double>(scores.size());
    m.auc = roc_auc(scores, labels);
    return m;
}

std::string format_mean_std(double mean, double stddev) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f±%.3f", mean, stddev);
    return buf;
}

namespace {

MetricSummary summarize(const std::vector<double>& xs) {
    MetricSummary s;
    const std::size_t n = xs.size();
    if (n == 0) return s;
    for (double x : xs) s.mean += x;
    s.mean /= static_cast<double>(n);
    if (n >= 2) {
        double ss = 0.0;
        for (double x : xs) ss += (x - s.mean) * (x - s.mean);
        s.stddev = std::sqrt(ss / static_cast<double>(n - 1));
    }
    return s;
}

void summarize_report(EvalReport& report) {
    auto collect = [&](double Metrics::* field) {
        std::vector<double> xs;
        xs.reserve(report.folds.size());
        for (const auto& m : report.folds) xs.push_back(m.*field);
        return summarize(xs);
    };
    report.sensitivity = collect(&Metrics::sensitivity);
    report.specificity = collect(&Metrics::specificity);
    report.precision = collect(&Metrics::precision);
    report.f1 = collect(&Metrics::f1);
    report.accuracy = collect(&Metrics::accuracy);
    report.auc = collect(&Metrics::auc);
}

FeatureTable subset_table(const FeatureTable& table, const std::vector<int>& rows) {
    FeatureTable out;
    out.schema_version = table.schema_version;
    out.rows.reserve(rows.size());
    for (int r : rows) out.rows.push_back(table.rows[static_cast<std::size_t>(r)]);
    return out;
}

Ensemble fit_model(const TrainSet& train, const ModelParams& params, std::uint64_t seed,
                   const GroupMask& mask) {
    if (params.kind == EnsembleKind::AdaBoostDT) return fit_adaboost(train, params.boost, seed, mask);
    return fit_random_forest(train, params.forest, seed, mask);
}

json params_to_json(const ModelParams& p) {
    if (p.kind == EnsembleKind::AdaBoostDT)
        return json{{"kind", ensemble_kind_token(p.kind)},
                    {"n_estimators", p.boost.n_estimators},
                    {"learning_rate", p.boost.learning_rate},
                    {"max_depth", p.boost.tree.max_depth},
                    {"min_samples_split", p.boost.tree.min_samples_split},
                    {"min_impurity_decrease", p.boost.tree.min_impurity_decrease}};
    return json{{"kind", ensemble_kind_token(p.kind)},
                {"n_trees", p.forest.n_trees},
                {"features_per_split", p.forest.features_per_split},
                {"bootstrap", p.forest.bootstrap},
                {"max_depth", p.forest.tree.max_depth},
                {"min_samples_split", p.forest.tree.min_samples_split},
                {"min_impurity_decrease", p.forest.tree.min_impurity_decrease}};
}

json mask_to_json(const GroupMask& mask) {
    json j;
    for (int g = 0; g < kFeatureGroupCount; ++g)
        j[feature_group_token(static_cast<FeatureGroup>(g))] = mask[static_cast<std::size_t>(g)];
    return j;
}

json metrics_to_json(const Metrics& m) {
    return json{{"sensitivity", m.sensitivity},
                {"specificity", m.specificity},
                {"precision", m.precision},
                {"f1", m.f1},
                {"accuracy", m.accuracy},
                {"auc", m.auc},
                {"tp", m.tp},
                {"fp", m.fp},
                {"tn", m.tn},
                {"fn", m.fn},
                {"precision_undefined", m.precision_undefined}};
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::io_error, "cannot write " + path);
    out << text;
    if (!out) throw Error(Errc::io_error, "short write: " + path);
}

// each comment line becomes a '#' line ahead of the CSV header
std::string comment_block(const std::string& comment) {
    if (comment.empty()) return {};
    std::string out;
    std::size_t pos = 0;
    while (pos < comment.size()) {
        const std::size_t nl = comment.find('\n', pos);
        out += "# " + comment.substr(pos, nl == std::string::npos ? nl : nl - pos) + "\n";
        if (nl == std::string::npos) break;
        pos = nl + 1;
    }
    return out;
}

constexpr const char* kMetricNames[6] = {"sensitivity", "specificity", "precision",
                                         "f1",          "accuracy",    "auc"};

const MetricSummary& summary_by_name(const EvalReport& r, int i) {
    switch (i) {
        case 0: return r.sensitivity;
        case 1: return r.specificity;
        case 2: return r.precision;
        case 3: return r.f1;
        case 4: return r.accuracy;
        default: return r.auc;
    }
}

} // namespace

CrossValResult cross_validate(const FeatureTable& table, const ModelParams& params, int k,
                              std::uint64_t seed, const GroupMask& mask) {
    std::vector<int> labels;
    labels.reserve(table.rows.size());
    for (const auto& row : table.rows) {
        if (!row.label)
            throw Error(Errc::degenerate_data, "row '" + row.case_id + "' is unlabeled; cannot evaluate");
        labels.push_back(*row.label == CaseLabel::covid ? 1 : 0);
    }
    const FoldSplit split = stratified_kfold(labels, k, seed);

    CrossValResult result;
    result.report.params = params;
    result.report.group_mask = mask;
    result.report.k = k;
    result.report.seed = seed;

    for (int f = 0; f < k; ++f) {
        const auto& train_rows = split.train_rows[static_cast<std::size_t>(f)];
        const auto& test_rows = split.test_rows[static_cast<std::size_t>(f)];
        const TrainSet train = make_train_set(subset_table(table, train_rows));
        const TrainSet test = make_train_set(subset_table(table, test_rows));

        const std::uint64_t fold_seed = splitmix64(seed ^ (0x5DEECE66Dull + static_cast<std::uint64_t>(f)));
        Ensemble model = fit_model(train, params, fold_seed, mask);

        const std::vector<double> train_scores = ensemble_proba_batch(model, train);
        model.threshold = choose_threshold(train_scores, train.y);

        const std::vector<double> test_scores = ensemble_proba_batch(model, test);
        result.report.folds.push_back(compute_metrics(test_scores, test.y, model.threshold));
        result.report.fold_thresholds.push_back(model.threshold);
        result.fold_models.push_back(std::move(model));
    }
    summarize_report(result.report);
    return result;
}

GridResult grid_search(const FeatureTable& table, const GridSpec& grid, int k, std::uint64_t seed,
                       EnsembleKind kind) {
    if (grid.n_estimators.empty() || grid.learning_rate.empty() || grid.max_depth.empty() ||
        grid.min_samples_split.empty())
        throw Error(Errc::bad_config, "grid axes must all be non-empty");

    std::vector<ModelParams> cells;
    for (int ne : grid.n_estimators)
        for (double lr : grid.learning_rate)
            for (int depth : grid.max_depth)
                for (int mss : grid.min_samples_split) {
                    ModelParams p;
                    p.kind = kind;
                    if (kind == EnsembleKind::AdaBoostDT) {
                        p.boost.n_estimators = ne;
                        p.boost.learning_rate = lr;
                        p.boost.tree.max_depth = depth;
                        p.boost.tree.min_samples_split = mss;
                    } else {
                        p.forest.n_trees = ne;  // learning rate has no forest analogue
                        p.forest.tree.max_depth = depth;
                        p.forest.tree.min_samples_split = mss;
                    }
                    cells.push_back(p);
                }

    // cells evaluate independently; exceptions are parked per cell and
    // rethrown in cell order
    GridResult result;
    result.ranked.resize(cells.size());
    std::vector<std::exception_ptr> errors(cells.size());
    parallel_for_chunks(static_cast<std::int64_t>(cells.size()), [&](std::int64_t c) {
        try {
            GridEntry entry;
            entry.params = cells[static_cast<std::size_t>(c)];
            entry.report = cross_validate(table, entry.params, k, seed).report;
            entry.selection_score = entry.report.auc.mean + entry.report.sensitivity.mean;
            result.ranked[static_cast<std::size_t>(c)] = std::move(entry);
        } catch (...) {
            errors[static_cast<std::size_t>(c)] = std::current_exception();
        }
    });
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    std::stable_sort(result.ranked.begin(), result.ranked.end(),
                     [](const GridEntry& a, const GridEntry& b) {
                         if (a.selection_score != b.selection_score)
                             return a.selection_score > b.selection_score;
                         return a.report.auc.mean > b.report.auc.mean;
                     });
    return result;
}

GridSpec refine_around(const ModelParams& winner, const GridDeltas& deltas) {
    const bool boost = winner.kind == EnsembleKind::AdaBoostDT;
    const int ne = boost ? winner.boost.n_estimators : winner.forest.n_trees;
    const double lr = boost ? winner.boost.learning_rate : 1.0;
    const TreeParams& tp = boost ? winner.boost.tree : winner.forest.tree;

    auto around_int = [](int center, int delta, int lo) {
        std::vector<int> v{center};
        if (delta > 0) {
            if (center - delta >= lo) v.insert(v.begin(), center - delta);
            v.push_back(center + delta);
        }
        return v;
    };
    GridSpec fine;
    fine.n_estimators = around_int(ne, deltas.n_estimators, 1);
    fine.max_depth = around_int(tp.max_depth, deltas.max_depth, 1);
    fine.min_samples_split = around_int(tp.min_samples_split, deltas.min_samples_split, 2);
    fine.learning_rate = {lr};
    if (deltas.learning_rate > 0.0) {
        fine.learning_rate.insert(fine.learning_rate.begin(), lr / (1.0 + deltas.learning_rate));
        fine.learning_rate.push_back(lr * (1.0 + deltas.learning_rate));
    }
    return fine;
}

AblationResult ablation(const FeatureTable& table, int k, std::uint64_t seed,
                        const ModelParams& params) {
    AblationResult result;
    {
        AblationRow row;
        row.label = "Full feature set";
        row.mask = kAllGroups;
        row.report = cross_validate(table, params, k, seed, kAllGroups).report;
        result.rows.push_back(std::move(row));
    }
    for (int g = 0; g < kFeatureGroupCount; ++g) {
        GroupMask mask = kAllGroups;
        mask[static_cast<std::size_t>(g)] = false;
        AblationRow row;
        row.label = std::string("W/O ") + feature_group_name(static_cast<FeatureGroup>(g));
        row.mask = mask;
        row.report = cross_validate(table, params, k, seed, mask).report;
        result.rows.push_back(std::move(row));
    }
    return result;
}

std::vector<double> tree_importance(const DecisionTree& tree) {
    std::vector<double> imp(static_cast<std::size_t>(tree.n_features), 0.0);
    for (const auto& node : tree.nodes)
        if (!node.is_leaf())
            imp[static_cast<std::size_t>(node.feature)] += node.weight_fraction * node.split_gain;
    return imp;
}

ImportanceReport gini_importance(const std::vector<Ensemble>& models, const FeatureSchema& schema) {
    if (models.empty()) throw Error(Errc::empty_input, "no models given");
    const int d = schema.size();
    ImportanceReport report;
    report.mean_importance.assign(static_cast<std::size_t>(d), 0.0);

    int contributing = 0;
    for (const auto& model : models) {
        if (model.members.empty()) throw Error(Errc::degenerate_data, "ensemble has no members");
        if (model.members.front().n_features != d)
            throw Error(Errc::schema_mismatch, "model feature count does not match schema");
        std::vector<double> acc(static_cast<std::size_t>(d), 0.0);
        double alpha_sum = 0.0;
        for (std::size_t t = 0; t < model.members.size(); ++t) {
            const auto imp = tree_importance(model.members[t]);
            for (int i = 0; i < d; ++i) acc[static_cast<std::size_t>(i)] += model.alpha[t] * imp[static_cast<std::size_t>(i)];
            alpha_sum += model.alpha[t];
        }
        double total = 0.0;
        for (double v : acc) total += v;
        if (total > 0.0 && alpha_sum > 0.0) {
            for (int i = 0; i < d; ++i)
                report.mean_importance[static_cast<std::size_t>(i)] += acc[static_cast<std::size_t>(i)] / total;
            ++contributing;
        }
    }
    if (contributing == 0) {
        report.no_splits = true;
    } else {
        for (auto& v : report.mean_importance) v /= static_cast<double>(contributing);
    }
    report.ranking.resize(static_cast<std::size_t>(d));
    std::iota(report.ranking.begin(), report.ranking.end(), 0);
    std::stable_sort(report.ranking.begin(), report.ranking.end(), [&](int a, int b) {
        return report.mean_importance[static_cast<std::size_t>(a)] >
               report.mean_importance[static_cast<std::size_t>(b)];
    });
    return report;
}

KdeCurve kde(const std::vector<double>& values, int grid_points, std::optional<double> bandwidth) {
    if (values.empty()) throw Error(Errc::empty_input, "KDE needs at least one value");
    for (double v : values)
        if (!std::isfinite(v)) throw Error(Errc::non_finite_feature, "KDE input contains a non-finite value");
    if (grid_points < 2) throw Error(Errc::bad_config, "grid_points must be >= 2");

    const std::size_t n = values.size();
    double h;
    if (bandwidth) {
        if (!(*bandwidth > 0.0)) throw Error(Errc::bad_config, "bandwidth must be > 0");
        h = *bandwidth;
    } else {
        double mean = 0.0;
        for (double v : values) mean += v;
        mean /= static_cast<double>(n);
        double sigma = 0.0;
        if (n >= 2) {
            double ss = 0.0;
            for (double v : values) ss += (v - mean) * (v - mean);
            sigma = std::sqrt(ss / static_cast<double>(n - 1));
        }
        std::vector<double> sorted = values;
        std::sort(sorted.begin(), sorted.end());
        auto quantile = [&](double q) {
            const double pos = q * static_cast<double>(n - 1);
            const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
            const std::size_t hi = std::min(lo + 1, n - 1);
            const double frac = pos - static_cast<double>(lo);
            return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
        };
        const double iqr = quantile(0.75) - quantile(0.25);
        h = 0.9 * std::min(sigma, iqr / 1.34) * std::pow(static_cast<double>(n), -0.2);
        if (h < 1e-3) h = 1e-3;
    }

    KdeCurve curve;
    curve.bandwidth = h;
    curve.x.resize(static_cast<std::size_t>(grid_points));
    curve.density.resize(static_cast<std::size_t>(grid_points));
    const double lo = -4.0 * h;
    const double hi = 1.0 + 4.0 * h;
    const double step = (hi - lo) / static_cast<double>(grid_points - 1);
    const double norm = 1.0 / (static_cast<double>(n) * h * std::sqrt(2.0 * 3.14159265358979323846));
    for (int i = 0; i < grid_points; ++i) {
        const double x = lo + step * i;
        double acc = 0.0;
        for (double v : values) {
            const double u = (x - v) / h;
            acc += std::exp(-0.5 * u * u);
        }
        curve.x[static_cast<std::size_t>(i)] = x;
        curve.density[static_cast<std::size_t>(i)] = norm * acc;
    }
    return curve;
}

json eval_report_to_json(const EvalReport& report) {
    json folds = json::array();
    for (std::size_t f = 0; f < report.folds.size(); ++f) {
        json jf = metrics_to_json(report.folds[f]);
        jf["fold"] = f;
        jf["threshold"] = report.fold_thresholds[f];
        folds.push_back(std::move(jf));
    }
    json mean, stddev, formatted;
    for (int i = 0; i < 6; ++i) {
        const auto& s = summary_by_name(report, i);
        mean[kMetricNames[i]] = s.mean;
        stddev[kMetricNames[i]] = s.stddev;
        formatted[kMetricNames[i]] = format_mean_std(s.mean, s.stddev);
    }
    return json{{"k", report.k},
                {"seed", report.seed},
                {"params", params_to_json(report.params)},
                {"group_mask", mask_to_json(report.group_mask)},
                {"folds", std::move(folds)},
                {"mean", std::move(mean)},
                {"std", std::move(stddev)},
                {"formatted", std::move(formatted)}};
}

void save_eval_report_json(const EvalReport& report, const std::string& path) {
    write_text(path, eval_report_to_json(report).dump(2) + "\n");
}

void save_eval_report_csv(const EvalReport& report, const std::string& path,
                          const std::string& comment) {
    std::ostringstream out;
    out << comment_block(comment);
    out << "row,threshold,sensitivity,specificity,precision,f1,accuracy,auc,tp,fp,tn,fn\n";
    for (std::size_t f = 0; f < report.folds.size(); ++f) {
        const auto& m = report.folds[f];
        out << "fold" << f << ',' << shortest_double(report.fold_thresholds[f]) << ','
            << shortest_double(m.sensitivity) << ',' << shortest_double(m.specificity) << ','
            << shortest_double(m.precision) << ',' << shortest_double(m.f1) << ','
            << shortest_double(m.accuracy) << ',' << shortest_double(m.auc) << ',' << m.tp << ','
            << m.fp << ',' << m.tn << ',' << m.fn << '\n';
    }
    for (const char* which : {"mean", "std"}) {
        out << which << ',';
        for (int i = 0; i < 6; ++i) {
            const auto& s = summary_by_name(report, i);
            out << ',' << shortest_double(which[0] == 'm' ? s.mean : s.stddev);
        }
        out << ",,,,\n";
    }
    write_text(path, out.str());
}

namespace {

json grid_entry_to_json(const GridEntry& e) {
    return json{{"params", params_to_json(e.params)},
                {"selection_score", e.selection_score},
                {"report", eval_report_to_json(e.report)}};
}

} // namespace

json grid_to_json(const GridResult& result) {
    json j;
    j["ranking"] = json::array();
    for (const auto& e : result.ranked) j["ranking"].push_back(grid_entry_to_json(e));
    return j;
}

void save_grid_json(const GridResult& result, const std::string& path) {
    write_text(path, grid_to_json(result).dump(2) + "\n");
}

void save_grid_csv(const GridResult& result, const std::string& path, const std::string& comment) {
    std::ostringstream out;
    out << comment_block(comment);
    out << "rank,kind,n_estimators,learning_rate,max_depth,min_samples_split,selection_score,"
           "auc_mean,auc_std,sensitivity_mean,sensitivity_std,specificity_mean,specificity_std\n";
    for (std::size_t i = 0; i < result.ranked.size(); ++i) {
        const auto& e = result.ranked[i];
        const bool boost = e.params.kind == EnsembleKind::AdaBoostDT;
        const auto& tp = boost ? e.params.boost.tree : e.params.forest.tree;
        out << (i + 1) << ',' << ensemble_kind_token(e.params.kind) << ','
            << (boost ? e.params.boost.n_estimators : e.params.forest.n_trees) << ','
            << (boost ? shortest_double(e.params.boost.learning_rate) : std::string("")) << ','
            << tp.max_depth << ',' << tp.min_samples_split << ','
            << shortest_double(e.selection_score) << ',' << shortest_double(e.report.auc.mean) << ','
            << shortest_double(e.report.auc.stddev) << ','
            << shortest_double(e.report.sensitivity.mean) << ','
            << shortest_double(e.report.sensitivity.stddev) << ','
            << shortest_double(e.report.specificity.mean) << ','
            << shortest_double(e.report.specificity.stddev) << '\n';
    }
    write_text(path, out.str());
}

json ablation_to_json(const AblationResult& result) {
    json rows = json::array();
    for (const auto& row : result.rows)
        rows.push_back(json{{"label", row.label},
                            {"mask", mask_to_json(row.mask)},
                            {"report", eval_report_to_json(row.report)}});
    return json{{"rows", std::move(rows)}};
}

void save_ablation_json(const AblationResult& result, const std::string& path) {
    write_text(path, ablation_to_json(result).dump(2) + "\n");
}

void save_ablation_csv(const AblationResult& result, const std::string& path,
                       const std::string& comment) {
    std::ostringstream out;
    out << comment_block(comment);
    out << "label,sensitivity,specificity,precision,f1,accuracy,auc\n";
    for (const auto& row : result.rows) {
        out << '"' << row.label << '"';
        for (int i = 0; i < 6; ++i) {
            const auto& s = summary_by_name(row.report, i);
            out << ',' << format_mean_std(s.mean, s.stddev);
        }
        out << '\n';
    }
    write_text(path, out.str());
}

json importance_to_json(const ImportanceReport& report, const FeatureSchema& schema) {
    json features = json::array();
    for (int rank = 0; rank < static_cast<int>(report.ranking.size()); ++rank) {
        const int f = report.ranking[static_cast<std::size_t>(rank)];
        features.push_back(json{{"rank", rank + 1},
                                {"feature_id", schema.def(f).id},
                                {"group", feature_group_token(schema.def(f).group)},
                                {"importance", report.mean_importance[static_cast<std::size_t>(f)]}});
    }
    return json{{"no_splits", report.no_splits}, {"features", std::move(features)}};
}

void save_importance_json(const ImportanceReport& report, const FeatureSchema& schema,
                          const std::string& path) {
    write_text(path, importance_to_json(report, schema).dump(2) + "\n");
}

void save_importance_csv(const ImportanceReport& report, const FeatureSchema& schema,
                         const std::string& path, const std::string& comment) {
    std::ostringstream out;
    out << comment_block(comment);
    out << "rank,feature_id,group,importance\n";
    for (int rank = 0; rank < static_cast<int>(report.ranking.size()); ++rank) {
        const int f = report.ranking[static_cast<std::size_t>(rank)];
        out << (rank + 1) << ',' << schema.def(f).id << ',' << feature_group_token(schema.def(f).group)
            << ',' << shortest_double(report.mean_importance[static_cast<std::size_t>(f)]) << '\n';
    }
    write_text(path, out.str());
}

void save_kde_csv(const std::vector<KdeCurve>& curves, const std::string& path,
                  const std::string& comment) {
    std::ostringstream out;
    out << comment_block(comment);
    out << "feature_id,class,x,density\n";
    for (const auto& c : curves)
        for (std::size_t i = 0; i < c.x.size(); ++i)
            out << c.feature_id << ',' << c.class_name << ',' << shortest_double(c.x[i]) << ','
                << shortest_double(c.density[i]) << '\n';
    write_text(path, out.str());
}

} // namespace triage
