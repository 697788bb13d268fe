#pragma once

// From-scratch supervised learning: weighted-Gini CART trees, discrete
// AdaBoost over them, a Random-Forest baseline, and the operating threshold.
// Labels are binary throughout: 1 = covid, 0 = other.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "triage/features.hpp"

namespace triage {

struct TreeParams {
    int max_depth = 3;
    int min_samples_split = 2;
    double min_impurity_decrease = 0.0;
};

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double weight_other = 0.0;  // weighted class totals of the node's samples
    double weight_covid = 0.0;
    double weight_fraction = 0.0;  // node weight / root weight
    double split_gain = 0.0;       // impurity minus weighted child impurities

    bool is_leaf() const { return feature < 0; }
    double node_weight() const { return weight_other + weight_covid; }
    double p_covid() const {
        const double w = node_weight();
        return w > 0.0 ? weight_covid / w : 0.5;
    }
};

struct DecisionTree {
    int n_features = 0;
    std::vector<TreeNode> nodes;  // nodes[0] is the root

    bool operator==(const DecisionTree&) const = default;
};

inline bool operator==(const TreeNode& a, const TreeNode& b) {
    return a.feature == b.feature && a.threshold == b.threshold && a.left == b.left &&
           a.right == b.right && a.weight_other == b.weight_other &&
           a.weight_covid == b.weight_covid && a.weight_fraction == b.weight_fraction &&
           a.split_gain == b.split_gain;
}

struct TrainSet {
    int n = 0;
    int d = 0;
    std::vector<double> x;  // row-major n×d
    std::vector<int> y;     // 0 = other, 1 = covid
    std::vector<double> w;  // empty means uniform; otherwise n nonneg reals

    double at(int row, int col) const { return x[static_cast<std::size_t>(row) * d + col]; }
    const double* row(int r) const { return x.data() + static_cast<std::size_t>(r) * d; }
};

// Requires every row labeled and every value finite.
TrainSet make_train_set(const FeatureTable& table);

enum class EnsembleKind { AdaBoostDT, RandomForest };
const char* ensemble_kind_token(EnsembleKind k);  // adaboost_dt / random_forest
EnsembleKind parse_ensemble_kind(const std::string& token);

struct BoostParams {
    int n_estimators = 50;
    double learning_rate = 1.0;
    TreeParams tree;
};

struct ForestParams {
    int n_trees = 100;
    int features_per_split = 0;  // 0 = floor(sqrt(active features)), min 1
    bool bootstrap = true;
    TreeParams tree;
};

using GroupMask = std::array<bool, kFeatureGroupCount>;  // true = group active
inline constexpr GroupMask kAllGroups{true, true, true, true};

// Feature indices the mask leaves active, ascending.
std::vector<int> active_features(const FeatureSchema& schema, const GroupMask& mask);

struct Ensemble {
    EnsembleKind kind = EnsembleKind::AdaBoostDT;
    std::string schema_version;
    GroupMask group_mask = kAllGroups;
    std::vector<DecisionTree> members;
    std::vector<double> alpha;  // per member; 1.0 for forests
    double learning_rate = 1.0;
    double threshold = 0.5;
    BoostParams boost_params;    // echo of the fitting params
    ForestParams forest_params;  // (whichever matches kind)
    std::uint64_t seed = 0;
};

// Weighted two-class Gini impurity 1 − p₀² − p₁² ∈ [0, 0.5].
// Throws EmptyNode when both totals are zero.
double gini_impurity(double weight_other, double weight_covid);

// Greedy CART on data.w (uniform when empty). Midpoint thresholds, split rule
// "go left iff value ≤ threshold", ties broken toward the lowest feature
// index then lowest threshold.
DecisionTree fit_tree(const TrainSet& data, const TreeParams& params);

struct TreePrediction {
    int label = 0;       // 1 = covid (leaf ties vote covid)
    double p_covid = 0.5;
};

TreePrediction tree_predict(const DecisionTree& tree, const double* row, int n_values);
TreePrediction tree_predict(const DecisionTree& tree, const std::vector<double>& row);

Ensemble fit_adaboost(const TrainSet& data, const BoostParams& params, std::uint64_t seed,
                      const GroupMask& mask = kAllGroups);

Ensemble fit_random_forest(const TrainSet& data, const ForestParams& params, std::uint64_t seed,
                           const GroupMask& mask = kAllGroups);

// AdaBoost: Σ αₜ·[voteₜ = covid] / Σ αₜ.  Forest: mean leaf probability.
double ensemble_proba(const Ensemble& model, const double* row, int n_values);
double ensemble_proba(const Ensemble& model, const std::vector<double>& row);
std::vector<double> ensemble_proba_batch(const Ensemble& model, const TrainSet& data);

inline bool ensemble_classify(const Ensemble& model, double score) {
    return score >= model.threshold;
}

// Youden-optimal threshold over {0, 1} ∪ adjacent-distinct-score midpoints;
// ties resolve to the smallest candidate.
double choose_threshold(const std::vector<double>& scores, const std::vector<int>& labels);

// Model JSON: load_model reads only the keys model_to_json writes, so callers
// may add side-channel keys (e.g. run provenance) without breaking round-trips.
nlohmann::json model_to_json(const Ensemble& model);
void save_model(const Ensemble& model, const std::string& path);
Ensemble load_model(const std::string& path);

} // namespace triage
