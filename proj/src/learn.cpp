#include "triage/learn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "triage/errors.hpp"
#include "triage/parallel.hpp"
#include "triage/rng.hpp"

namespace triage {

using json = nlohmann::json;

const char* ensemble_kind_token(EnsembleKind k) {
    return k == EnsembleKind::AdaBoostDT ? "adaboost_dt" : "random_forest";
}

EnsembleKind parse_ensemble_kind(const std::string& token) {
    if (token == "adaboost_dt") return EnsembleKind::AdaBoostDT;
    if (token == "random_forest") return EnsembleKind::RandomForest;
    throw Error(Errc::bad_config, "unknown model kind '" + token + "' (adaboost_dt|random_forest)");
}

TrainSet make_train_set(const FeatureTable& table) {
    const auto& schema = FeatureSchema::v1();
    TrainSet ts;
    ts.n = static_cast<int>(table.rows.size());
    ts.d = schema.size();
    ts.x.reserve(static_cast<std::size_t>(ts.n) * ts.d);
    for (const auto& row : table.rows) {
        if (!row.label)
            throw Error(Errc::degenerate_data, "row '" + row.case_id + "' is unlabeled; cannot train");
        if (static_cast<int>(row.values.size()) != ts.d)
            throw Error(Errc::schema_mismatch, "row '" + row.case_id + "' length mismatch");
        for (double v : row.values) {
            if (!std::isfinite(v))
                throw Error(Errc::non_finite_feature, "row '" + row.case_id + "' contains a non-finite value");
            ts.x.push_back(v);
        }
        ts.y.push_back(*row.label == CaseLabel::covid ? 1 : 0);
    }
    return ts;
}

std::vector<int> active_features(const FeatureSchema& schema, const GroupMask& mask) {
    std::vector<int> out;
    for (int i = 0; i < schema.size(); ++i)
        if (mask[static_cast<std::size_t>(static_cast<int>(schema.def(i).group))]) out.push_back(i);
    return out;
}

double gini_impurity(double weight_other, double weight_covid) {
    if (weight_other < 0.0 || weight_covid < 0.0)
        throw Error(Errc::empty_node, "negative class weight");
    const double total = weight_other + weight_covid;
    if (total <= 0.0) throw Error(Errc::empty_node, "both class weights are zero");
    const double p0 = weight_other / total;
    const double p1 = weight_covid / total;
    return 1.0 - p0 * p0 - p1 * p1;
}

namespace {

struct Entry {
    int row;
    double w;
};

// Per-node feature subsampling for random forests; draws are consumed in
// deterministic preorder, so a fixed seed fixes the whole tree.
struct FeatureSampler {
    Rng* rng = nullptr;
    int per_split = 0;
};

struct BestSplit {
    double gain = -1.0;  // weighted impurity decrease (root weight = 1)
    int feature = -1;
    double threshold = 0.0;
    bool valid = false;
};

double weighted_gini_term(double w0, double w1) {
    const double w = w0 + w1;
    if (w <= 0.0) return 0.0;
    return w - (w0 * w0 + w1 * w1) / w;  // W · gini(w0, w1)
}

// Best midpoint split of `entries` on feature f; thresholds ascend during the
// scan, so the first best keeps the lowest threshold on ties.
BestSplit best_split_on_feature(const TrainSet& data, const std::vector<Entry>& entries, int f,
                                double parent_term) {
    const std::size_t n = entries.size();
    std::vector<int> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double va = data.at(entries[static_cast<std::size_t>(a)].row, f);
        const double vb = data.at(entries[static_cast<std::size_t>(b)].row, f);
        if (va != vb) return va < vb;
        return a < b;
    });

    double total0 = 0.0, total1 = 0.0;
    for (const auto& e : entries) (data.y[static_cast<std::size_t>(e.row)] == 0 ? total0 : total1) += e.w;

    BestSplit best;
    best.feature = f;
    double left0 = 0.0, left1 = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const Entry& e = entries[static_cast<std::size_t>(order[i])];
        (data.y[static_cast<std::size_t>(e.row)] == 0 ? left0 : left1) += e.w;
        const double v = data.at(e.row, f);
        const double v_next = data.at(entries[static_cast<std::size_t>(order[i + 1])].row, f);
        if (v == v_next) continue;
        const double right0 = std::max(0.0, total0 - left0);
        const double right1 = std::max(0.0, total1 - left1);
        if (left0 + left1 <= 0.0 || right0 + right1 <= 0.0) continue;
        const double gain =
            parent_term - weighted_gini_term(left0, left1) - weighted_gini_term(right0, right1);
        if (!best.valid || gain > best.gain) {
            best.valid = true;
            best.gain = gain;
            best.threshold = v + (v_next - v) / 2.0;
        }
    }
    return best;
}

class TreeBuilder {
public:
    TreeBuilder(const TrainSet& data, const TreeParams& params, const std::vector<int>& allowed,
                FeatureSampler sampler)
        : data_(data), params_(params), allowed_(allowed), sampler_(sampler) {}

    DecisionTree build(std::vector<Entry> root_entries) {
        double root_w = 0.0;
        for (const auto& e : root_entries) root_w += e.w;
        if (root_entries.empty() || root_w <= 0.0)
            throw Error(Errc::degenerate_data, "cannot fit a tree on zero rows / zero weight");
        // Normalize so gains are comparable to min_impurity_decrease.
        for (auto& e : root_entries) e.w /= root_w;
        tree_.n_features = data_.d;
        grow(std::move(root_entries), 0);
        return std::move(tree_);
    }

private:
    int grow(std::vector<Entry> entries, int depth) {
        double w0 = 0.0, w1 = 0.0;
        for (const auto& e : entries) (data_.y[static_cast<std::size_t>(e.row)] == 0 ? w0 : w1) += e.w;

        const int id = static_cast<int>(tree_.nodes.size());
        tree_.nodes.emplace_back();
        tree_.nodes[static_cast<std::size_t>(id)].weight_other = w0;
        tree_.nodes[static_cast<std::size_t>(id)].weight_covid = w1;
        tree_.nodes[static_cast<std::size_t>(id)].weight_fraction = w0 + w1;  // root weight is 1

        const bool pure = w0 <= 0.0 || w1 <= 0.0;
        if (pure || depth >= params_.max_depth ||
            static_cast<int>(entries.size()) < params_.min_samples_split)
            return id;

        const std::vector<int> candidates = candidate_features();
        const double parent_term = weighted_gini_term(w0, w1);
        std::vector<BestSplit> per_feature(candidates.size());
        parallel_for_chunks(static_cast<std::int64_t>(candidates.size()), [&](std::int64_t i) {
            per_feature[static_cast<std::size_t>(i)] = best_split_on_feature(
                data_, entries, candidates[static_cast<std::size_t>(i)], parent_term);
        });
        BestSplit best;
        for (const auto& s : per_feature)
            if (s.valid && (!best.valid || s.gain > best.gain)) best = s;

        if (!best.valid || best.gain <= 0.0 || best.gain < params_.min_impurity_decrease) return id;

        std::vector<Entry> left, right;
        left.reserve(entries.size());
        right.reserve(entries.size());
        for (const auto& e : entries)
            (data_.at(e.row, best.feature) <= best.threshold ? left : right).push_back(e);
        entries.clear();
        entries.shrink_to_fit();

        tree_.nodes[static_cast<std::size_t>(id)].feature = best.feature;
        tree_.nodes[static_cast<std::size_t>(id)].threshold = best.threshold;
        tree_.nodes[static_cast<std::size_t>(id)].split_gain = best.gain / (w0 + w1);
        const int l = grow(std::move(left), depth + 1);
        tree_.nodes[static_cast<std::size_t>(id)].left = l;
        const int r = grow(std::move(right), depth + 1);
        tree_.nodes[static_cast<std::size_t>(id)].right = r;
        return id;
    }

    std::vector<int> candidate_features() {
        if (!sampler_.rng || sampler_.per_split >= static_cast<int>(allowed_.size())) return allowed_;
        std::vector<int> pool = allowed_;
        std::vector<int> picked;
        picked.reserve(static_cast<std::size_t>(sampler_.per_split));
        for (int k = 0; k < sampler_.per_split; ++k) {
            const std::size_t j = static_cast<std::size_t>(
                sampler_.rng->below(static_cast<std::uint64_t>(pool.size())));
            picked.push_back(pool[j]);
            pool[j] = pool.back();
            pool.pop_back();
        }
        std::sort(picked.begin(), picked.end());
        return picked;
    }

    const TrainSet& data_;
    const TreeParams& params_;
    const std::vector<int>& allowed_;
    FeatureSampler sampler_;
    DecisionTree tree_;
};

void check_params(const TreeParams& p) {
    if (p.max_depth < 1) throw Error(Errc::bad_config, "max_depth must be >= 1");
    if (p.min_samples_split < 2) throw Error(Errc::bad_config, "min_samples_split must be >= 2");
    if (p.min_impurity_decrease < 0.0)
        throw Error(Errc::bad_config, "min_impurity_decrease must be >= 0");
}

void check_trainable(const TrainSet& data) {
    if (data.n < 2) throw Error(Errc::degenerate_data, "need at least 2 rows");
    bool has0 = false, has1 = false;
    for (int label : data.y) (label == 0 ? has0 : has1) = true;
    if (!has0 || !has1) throw Error(Errc::single_class_data, "both classes must be present");
    for (double v : data.x)
        if (!std::isfinite(v)) throw Error(Errc::non_finite_feature, "non-finite feature value");
}

std::vector<Entry> uniform_entries(const TrainSet& data) {
    std::vector<Entry> e(static_cast<std::size_t>(data.n));
    const bool has_w = !data.w.empty();
    for (int i = 0; i < data.n; ++i)
        e[static_cast<std::size_t>(i)] = {i, has_w ? data.w[static_cast<std::size_t>(i)]
                                                   : 1.0 / static_cast<double>(data.n)};
    return e;
}

std::vector<int> all_features(int d) {
    std::vector<int> f(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) f[static_cast<std::size_t>(i)] = i;
    return f;
}

// Masked fits require schema-shaped rows; unmasked fits work on any width.
std::vector<int> resolve_features(const TrainSet& data, const GroupMask& mask) {
    if (mask == kAllGroups) return all_features(data.d);
    const auto& schema = FeatureSchema::v1();
    if (data.d != schema.size())
        throw Error(Errc::schema_mismatch, "group mask requires schema-shaped data (" +
                                               std::to_string(schema.size()) + " features, got " +
                                               std::to_string(data.d) + ")");
    auto act = active_features(schema, mask);
    if (act.empty()) throw Error(Errc::bad_config, "group mask disables every feature");
    return act;
}

} // namespace

DecisionTree fit_tree(const TrainSet& data, const TreeParams& params) {
    check_params(params);
    if (data.n < 1) throw Error(Errc::degenerate_data, "cannot fit a tree on zero rows");
    for (double v : data.x)
        if (!std::isfinite(v)) throw Error(Errc::non_finite_feature, "non-finite feature value");
    const auto allowed = all_features(data.d);
    TreeBuilder builder(data, params, allowed, {});
    return builder.build(uniform_entries(data));
}

TreePrediction tree_predict(const DecisionTree& tree, const double* row, int n_values) {
    if (n_values != tree.n_features)
        throw Error(Errc::schema_mismatch, "row has " + std::to_string(n_values) +
                                               " values, tree expects " + std::to_string(tree.n_features));
    const TreeNode* node = &tree.nodes[0];
    while (!node->is_leaf())
        node = &tree.nodes[static_cast<std::size_t>(row[node->feature] <= node->threshold ? node->left
                                                                                          : node->right)];
    TreePrediction pred;
    pred.p_covid = node->p_covid();
    pred.label = node->weight_covid >= node->weight_other ? 1 : 0;
    return pred;
}

TreePrediction tree_predict(const DecisionTree& tree, const std::vector<double>& row) {
    return tree_predict(tree, row.data(), static_cast<int>(row.size()));
}

Ensemble fit_adaboost(const TrainSet& data, const BoostParams& params, std::uint64_t seed,
                      const GroupMask& mask) {
    check_params(params.tree);
    if (params.n_estimators < 1) throw Error(Errc::bad_config, "n_estimators must be >= 1");
    if (!(params.learning_rate > 0.0)) throw Error(Errc::bad_config, "learning_rate must be > 0");
    check_trainable(data);
    const std::vector<int> allowed = resolve_features(data, mask);

    Ensemble model;
    model.kind = EnsembleKind::AdaBoostDT;
    model.schema_version = FeatureSchema::v1().version();
    model.group_mask = mask;
    model.learning_rate = params.learning_rate;
    model.boost_params = params;
    model.seed = seed;

    std::vector<double> w(static_cast<std::size_t>(data.n), 1.0 / static_cast<double>(data.n));
    std::vector<Entry> entries(static_cast<std::size_t>(data.n));

    for (int t = 0; t < params.n_estimators; ++t) {
        for (int i = 0; i < data.n; ++i) entries[static_cast<std::size_t>(i)] = {i, w[static_cast<std::size_t>(i)]};
        TreeBuilder builder(data, params.tree, allowed, {});
        DecisionTree tree = builder.build(entries);

        std::vector<char> wrong(static_cast<std::size_t>(data.n), 0);
        double eps = 0.0;
        for (int i = 0; i < data.n; ++i) {
            const auto pred = tree_predict(tree, data.row(i), data.d);
            if (pred.label != data.y[static_cast<std::size_t>(i)]) {
                wrong[static_cast<std::size_t>(i)] = 1;
                eps += w[static_cast<std::size_t>(i)];
            }
        }
        if (eps >= 0.5) break;  // no better than chance: discard and stop

        const double clamped = std::max(eps, 1e-10);
        const double alpha = params.learning_rate * std::log((1.0 - clamped) / clamped);
        model.members.push_back(std::move(tree));
        model.alpha.push_back(alpha);
        if (eps == 0.0) break;  // perfect member: nothing left to reweight

        double sum = 0.0;
        for (int i = 0; i < data.n; ++i) {
            auto& wi = w[static_cast<std::size_t>(i)];
            if (wrong[static_cast<std::size_t>(i)]) wi *= std::exp(alpha);
            sum += wi;
        }
        for (auto& wi : w) wi /= sum;
    }

    if (model.members.empty())
        throw Error(Errc::degenerate_data, "no weak learner beat chance on the training data");
    return model;
}

Ensemble fit_random_forest(const TrainSet& data, const ForestParams& params, std::uint64_t seed,
                           const GroupMask& mask) {
    check_params(params.tree);
    if (params.n_trees < 1) throw Error(Errc::bad_config, "n_trees must be >= 1");
    check_trainable(data);
    const std::vector<int> allowed = resolve_features(data, mask);

    int per_split = params.features_per_split;
    if (per_split <= 0)
        per_split = std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(allowed.size())))));
    per_split = std::min(per_split, static_cast<int>(allowed.size()));

    Ensemble model;
    model.kind = EnsembleKind::RandomForest;
    model.schema_version = FeatureSchema::v1().version();
    model.group_mask = mask;
    model.forest_params = params;
    model.seed = seed;

    for (int t = 0; t < params.n_trees; ++t) {
        Rng rng(splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(t) + 1)));
        std::vector<Entry> entries;
        entries.reserve(static_cast<std::size_t>(data.n));
        if (params.bootstrap) {
            for (int i = 0; i < data.n; ++i)
                entries.push_back({static_cast<int>(rng.below(static_cast<std::uint64_t>(data.n))),
                                   1.0 / static_cast<double>(data.n)});
        } else {
            entries = uniform_entries(data);
        }
        FeatureSampler sampler;
        const bool subsample = per_split < static_cast<int>(allowed.size());
        if (subsample) sampler = {&rng, per_split};
        TreeBuilder builder(data, params.tree, allowed, sampler);
        model.members.push_back(builder.build(std::move(entries)));
        model.alpha.push_back(1.0);
    }
    return model;
}

double ensemble_proba(const Ensemble& model, const double* row, int n_values) {
    if (model.members.empty()) throw Error(Errc::degenerate_data, "ensemble has no members");
    if (n_values != model.members.front().n_features)
        throw Error(Errc::schema_mismatch, "row has " + std::to_string(n_values) +
                                               " values, model expects " +
                                               std::to_string(model.members.front().n_features));
    if (model.kind == EnsembleKind::AdaBoostDT) {
        double vote = 0.0, total = 0.0;
        for (std::size_t t = 0; t < model.members.size(); ++t) {
            const auto pred = tree_predict(model.members[t], row, n_values);
            total += model.alpha[t];
            if (pred.label == 1) vote += model.alpha[t];
        }
        return total > 0.0 ? vote / total : 0.5;
    }
    double sum = 0.0;
    for (const auto& tree : model.members) sum += tree_predict(tree, row, n_values).p_covid;
    return sum / static_cast<double>(model.members.size());
}

double ensemble_proba(const Ensemble& model, const std::vector<double>& row) {
    return ensemble_proba(model, row.data(), static_cast<int>(row.size()));
}

std::vector<double> ensemble_proba_batch(const Ensemble& model, const TrainSet& data) {
    std::vector<double> scores(static_cast<std::size_t>(data.n));
    parallel_for_chunks(data.n, [&](std::int64_t i) {
        scores[static_cast<std::size_t>(i)] = ensemble_proba(model, data.row(static_cast<int>(i)), data.d);
    });
    return scores;
}

double choose_threshold(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw Error(Errc::degenerate_data, "scores/labels size mismatch or empty");
    std::int64_t n_pos = 0, n_neg = 0;
    for (int label : labels) (label == 1 ? n_pos : n_neg)++;
    if (n_pos == 0 || n_neg == 0)
        throw Error(Errc::single_class_data, "threshold selection needs both classes");

    std::vector<double> sorted = scores;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

    std::vector<double> candidates;
    candidates.push_back(0.0);
    for (std::size_t i = 0; i + 1 < sorted.size(); ++i)
        candidates.push_back(sorted[i] + (sorted[i + 1] - sorted[i]) / 2.0);
    candidates.push_back(1.0);
    std::sort(candidates.begin(), candidates.end());

    double best_t = candidates.front();
    double best_j = -2.0;
    for (double t : candidates) {
        std::int64_t tp = 0, tn = 0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            const bool positive = scores[i] >= t;
            if (labels[i] == 1 && positive) ++tp;
            if (labels[i] == 0 && !positive) ++tn;
        }
        const double j = static_cast<double>(tp) / static_cast<double>(n_pos) +
                         static_cast<double>(tn) / static_cast<double>(n_neg) - 1.0;
        if (j > best_j) {
            best_j = j;
            best_t = t;
        }
    }
    return best_t;
}

namespace {

json tree_to_json(const DecisionTree& tree) {
    json nodes = json::array();
    for (const auto& n : tree.nodes)
        nodes.push_back(json::array({n.feature, n.threshold, n.left, n.right, n.weight_other,
                                     n.weight_covid, n.weight_fraction, n.split_gain}));
    return json{{"n_features", tree.n_features}, {"nodes", std::move(nodes)}};
}

DecisionTree tree_from_json(const json& j) {
    DecisionTree tree;
    tree.n_features = j.at("n_features").get<int>();
    for (const auto& a : j.at("nodes")) {
        TreeNode n;
        n.feature = a.at(0).get<int>();
        n.threshold = a.at(1).get<double>();
        n.left = a.at(2).get<int>();
        n.right = a.at(3).get<int>();
        n.weight_other = a.at(4).get<double>();
        n.weight_covid = a.at(5).get<double>();
        n.weight_fraction = a.at(6).get<double>();
        n.split_gain = a.at(7).get<double>();
        tree.nodes.push_back(n);
    }
    if (tree.nodes.empty()) throw Error(Errc::parse_error, "model tree has no nodes");
    return tree;
}

json mask_to_json(const GroupMask& mask) {
    json j;
    for (int g = 0; g < kFeatureGroupCount; ++g)
        j[feature_group_token(static_cast<FeatureGroup>(g))] = mask[static_cast<std::size_t>(g)];
    return j;
}

GroupMask mask_from_json(const json& j) {
    GroupMask mask = kAllGroups;
    for (int g = 0; g < kFeatureGroupCount; ++g) {
        const char* token = feature_group_token(static_cast<FeatureGroup>(g));
        if (j.contains(token)) mask[static_cast<std::size_t>(g)] = j.at(token).get<bool>();
    }
    return mask;
}

} // namespace

json model_to_json(const Ensemble& model) {
    json j;
    j["format"] = "triage-model";
    j["format_version"] = 1;
    j["kind"] = ensemble_kind_token(model.kind);
    j["schema_version"] = model.schema_version;
    j["group_mask"] = mask_to_json(model.group_mask);
    j["threshold"] = model.threshold;
    j["learning_rate"] = model.learning_rate;
    j["seed"] = model.seed;
    if (model.kind == EnsembleKind::AdaBoostDT) {
        j["params"] = {{"n_estimators", model.boost_params.n_estimators},
                       {"learning_rate", model.boost_params.learning_rate},
                       {"max_depth", model.boost_params.tree.max_depth},
                       {"min_samples_split", model.boost_params.tree.min_samples_split},
                       {"min_impurity_decrease", model.boost_params.tree.min_impurity_decrease}};
    } else {
        j["params"] = {{"n_trees", model.forest_params.n_trees},
                       {"features_per_split", model.forest_params.features_per_split},
                       {"bootstrap", model.forest_params.bootstrap},
                       {"max_depth", model.forest_params.tree.max_depth},
                       {"min_samples_split", model.forest_params.tree.min_samples_split},
                       {"min_impurity_decrease", model.forest_params.tree.min_impurity_decrease}};
    }
    json members = json::array();
    for (std::size_t t = 0; t < model.members.size(); ++t)
        members.push_back(json{{"alpha", model.alpha[t]}, {"tree", tree_to_json(model.members[t])}});
    j["members"] = std::move(members);
    return j;
}

void save_model(const Ensemble& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::io_error, "cannot write " + path);
    out << model_to_json(model).dump(2) << '\n';
    if (!out) throw Error(Errc::io_error, "short write: " + path);
}

Ensemble load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::missing_file, "cannot open model: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw Error(Errc::parse_error, path + ": " + e.what());
    }
    try {
        if (j.at("format").get<std::string>() != "triage-model")
            throw Error(Errc::parse_error, path + ": not a model file");
        Ensemble model;
        model.kind = parse_ensemble_kind(j.at("kind").get<std::string>());
        model.schema_version = j.at("schema_version").get<std::string>();
        if (model.schema_version != FeatureSchema::v1().version())
            throw Error(Errc::schema_mismatch, path + ": model schema '" + model.schema_version +
                                                   "' does not match '" +
                                                   FeatureSchema::v1().version() + "'");
        model.group_mask = mask_from_json(j.at("group_mask"));
        model.threshold = j.at("threshold").get<double>();
        if (!(model.threshold >= 0.0 && model.threshold <= 1.0))
            throw Error(Errc::parse_error, path + ": threshold outside [0,1]");
        model.learning_rate = j.at("learning_rate").get<double>();
        model.seed = j.at("seed").get<std::uint64_t>();
        const json& p = j.at("params");
        if (model.kind == EnsembleKind::AdaBoostDT) {
            model.boost_params.n_estimators = p.at("n_estimators").get<int>();
            model.boost_params.learning_rate = p.at("learning_rate").get<double>();
            model.boost_params.tree.max_depth = p.at("max_depth").get<int>();
            model.boost_params.tree.min_samples_split = p.at("min_samples_split").get<int>();
            model.boost_params.tree.min_impurity_decrease = p.at("min_impurity_decrease").get<double>();
        } else {
            model.forest_params.n_trees = p.at("n_trees").get<int>();
            model.forest_params.features_per_split = p.at("features_per_split").get<int>();
            model.forest_params.bootstrap = p.at("bootstrap").get<bool>();
            model.forest_params.tree.max_depth = p.at("max_depth").get<int>();
            model.forest_params.tree.min_samples_split = p.at("min_samples_split").get<int>();
            model.forest_params.tree.min_impurity_decrease = p.at("min_impurity_decrease").get<double>();
        }
        for (const auto& m : j.at("members")) {
            model.alpha.push_back(m.at("alpha").get<double>());
            model.members.push_back(tree_from_json(m.at("tree")));
        }
        if (model.members.empty()) throw Error(Errc::parse_error, path + ": ensemble has no members");
        return model;
    } catch (const json::exception& e) {
        throw Error(Errc::parse_error, path + ": " + e.what());
    }
}

} // namespace triage
