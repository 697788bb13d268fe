#pragma once

// Evaluation machinery: stratified cross-validation, threshold-based metrics,
// ROC-AUC, grid search with a fine refinement pass, feature-group ablation,
// Gini importance aggregation, and kernel density estimation.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "triage/learn.hpp"

namespace triage {

struct FoldSplit {
    int k = 0;
    std::vector<int> fold_of;                  // per row: its test fold
    std::vector<std::vector<int>> test_rows;   // per fold, row indices ascending
    std::vector<std::vector<int>> train_rows;  // complement, ascending
};

// Seeded shuffle within each class, then round-robin assignment with a fold
// cursor that rolls across classes, so fold sizes differ by at most one and
// per-fold class counts stay within one of the global proportions.
FoldSplit stratified_kfold(const std::vector<int>& labels, int k, std::uint64_t seed);

struct Metrics {
    double sensitivity = 0.0;
    double specificity = 0.0;
    double precision = 0.0;
    double f1 = 0.0;
    double accuracy = 0.0;
    double auc = 0.0;
    std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
    bool precision_undefined = false;  // TP+FP = 0; precision reported as 0
};

// Positive decision is score >= threshold; label 1 = covid.
Metrics compute_metrics(const std::vector<double>& scores, const std::vector<int>& labels,
                        double threshold);

// Mann–Whitney statistic: P(score_pos > score_neg) + ½·P(equal).
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

// "0.908±0.017" — three decimals, mean then sample std.
std::string format_mean_std(double mean, double stddev);

struct ModelParams {
    EnsembleKind kind = EnsembleKind::AdaBoostDT;
    BoostParams boost;
    ForestParams forest;
};

struct MetricSummary {
    double mean = 0.0;
    double stddev = 0.0;  // sample std over folds (n−1)
};

struct EvalReport {
    ModelParams params;
    GroupMask group_mask = kAllGroups;
    int k = 0;
    std::uint64_t seed = 0;
    std::vector<Metrics> folds;
    std::vector<double> fold_thresholds;  // chosen on train scores only
    MetricSummary sensitivity, specificity, precision, f1, accuracy, auc;
};

struct CrossValResult {
    EvalReport report;
    std::vector<Ensemble> fold_models;
};

// Per fold: fit on train rows, pick the operating threshold on train scores,
// evaluate on the held-out rows.
CrossValResult cross_validate(const FeatureTable& table, const ModelParams& params, int k,
                              std::uint64_t seed, const GroupMask& mask = kAllGroups);

struct GridSpec {
    std::vector<int> n_estimators;
    std::vector<double> learning_rate;
    std::vector<int> max_depth;
    std::vector<int> min_samples_split;
};

struct GridEntry {
    ModelParams params;
    EvalReport report;
    double selection_score = 0.0;  // mean AUC + mean sensitivity
};

struct GridResult {
    std::vector<GridEntry> ranked;  // best first
};

GridResult grid_search(const FeatureTable& table, const GridSpec& grid, int k, std::uint64_t seed,
                       EnsembleKind kind = EnsembleKind::AdaBoostDT);

// Gross-to-fine: a refined grid around a winner. Integer axes step by ±delta
// (clamped to legal minima), learning rate by ×(1 ± lr_delta).
struct GridDeltas {
    int n_estimators = 10;
    double learning_rate = 0.5;
    int max_depth = 1;
    int min_samples_split = 1;
};

GridSpec refine_around(const ModelParams& winner, const GridDeltas& deltas);

struct AblationRow {
    std::string label;  // "Full feature set", "W/O Lungs statistics", ...
    GroupMask mask;
    EvalReport report;
};

struct AblationResult {
    std::vector<AblationRow> rows;  // rows[0] = full schema
};

AblationResult ablation(const FeatureTable& table, int k, std::uint64_t seed,
                        const ModelParams& params);

struct ImportanceReport {
    std::vector<double> mean_importance;  // schema order; per-fold sums are 1
    std::vector<int> ranking;             // feature indices, descending importance
    bool no_splits = false;               // every member of every model is a single leaf
};

// Per-feature Σ over nodes of weight-fraction × impurity decrease, α-averaged
// over members, normalized per model, then averaged across models (folds).
ImportanceReport gini_importance(const std::vector<Ensemble>& models, const FeatureSchema& schema);

// Unnormalized per-feature accumulation for one tree (oracle-testable).
std::vector<double> tree_importance(const DecisionTree& tree);

struct KdeCurve {
    std::string feature_id;
    std::string class_name;
    double bandwidth = 0.0;
    std::vector<double> x;        // uniform grid over [−4h, 1+4h]
    std::vector<double> density;
};

// Gaussian-kernel KDE; default bandwidth is Silverman's
// 0.9·min(σ, IQR/1.34)·n^(−1/5) floored at 1e-3.
KdeCurve kde(const std::vector<double>& values, int grid_points,
             std::optional<double> bandwidth = std::nullopt);

// Report serialization (JSON dumps have sorted keys: byte-stable). The CSV
// writers prepend each line of `comment` as a '#' line, which is how run
// provenance travels with flat files.
nlohmann::json eval_report_to_json(const EvalReport& report);
nlohmann::json grid_to_json(const GridResult& result);
nlohmann::json ablation_to_json(const AblationResult& result);
nlohmann::json importance_to_json(const ImportanceReport& report, const FeatureSchema& schema);
void save_eval_report_json(const EvalReport& report, const std::string& path);
void save_eval_report_csv(const EvalReport& report, const std::string& path,
                          const std::string& comment = {});
void save_grid_json(const GridResult& result, const std::string& path);
void save_grid_csv(const GridResult& result, const std::string& path,
                   const std::string& comment = {});
void save_ablation_json(const AblationResult& result, const std::string& path);
void save_ablation_csv(const AblationResult& result, const std::string& path,
                       const std::string& comment = {});
void save_importance_json(const ImportanceReport& report, const FeatureSchema& schema,
                          const std::string& path);
void save_importance_csv(const ImportanceReport& report, const FeatureSchema& schema,
                         const std::string& path, const std::string& comment = {});
void save_kde_csv(const std::vector<KdeCurve>& curves, const std::string& path,
                  const std::string& comment = {});

} // namespace triage
