#ifndef CORRGROUP_PIPELINE_HPP
#define CORRGROUP_PIPELINE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "data_model.hpp"
#include "diagnostics.hpp"
#include "elastic_net.hpp"
#include "error.hpp"
#include "hcluster.hpp"
#include "parallel.hpp"
#include "precluster.hpp"
#include "random.hpp"

/**
 * @file pipeline.hpp
 * @brief Grouping integrated with the elastic net: pre-group, build dendrograms, choose the cut
 * threshold by cross-validated AUC, fit the final model on group representatives and predict.
 */

namespace corrgroup {

/**
 * Threshold grid used when none is configured: 1e-1, 5e-2, 1e-2, ..., 5e-6, 1e-6.
 */
inline std::vector<double> default_grid() {
    return {1e-1, 5e-2, 1e-2, 5e-3, 1e-3, 5e-4, 1e-4, 5e-5, 1e-5, 5e-6, 1e-6};
}

struct PipelineConfig {
    std::vector<double> grid = default_grid();
    std::size_t folds = 10;
    std::size_t inner_folds = 10;
    std::size_t path_length = 50;
    double alpha = 0.5;
    double tol = 1e-7;
    std::size_t max_iter = 100000;
    std::size_t K = 10;
    std::size_t max_subset = 1000;
    std::size_t kmeans_max_iter = 100;
    std::uint64_t seed = 0;
    int threads = 1;

    EnetOptions enet() const { return EnetOptions{alpha, tol, max_iter}; }

    SplitOptions split() const { return SplitOptions{K, max_subset, kmeans_max_iter, derive_seed(seed, {1})}; }

    std::uint64_t fold_seed() const { return derive_seed(seed, {2}); }

    CvLambdaOptions inner_cv(std::uint64_t stream) const { return CvLambdaOptions{inner_folds, path_length, 1e-3, derive_seed(seed, {3, stream}), 1}; }

    CvLambdaOptions final_cv() const { return CvLambdaOptions{inner_folds, path_length, 1e-3, derive_seed(seed, {4}), threads}; }
};

/**
 * Area under the ROC curve in its Mann-Whitney form:
 * (concordant pairs + 0.5 * tied pairs) / (n1 * n0) over all positive-negative pairs.
 */
inline double auc(std::span<const int> y, std::span<const double> q) {
    if (y.size() != q.size()) {
        throw InvalidArgument("auc: labels and predictions differ in length");
    }
    std::vector<std::size_t> order(y.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return q[a] < q[b]; });

    std::uint64_t n1 = 0, n0 = 0, twice_score = 0, neg_below = 0;
    for (std::size_t start = 0; start < order.size();) {
        std::size_t end = start;
        std::uint64_t pos = 0, neg = 0;
        while (end < order.size() && q[order[end]] == q[order[start]]) {
            (y[order[end]] ? pos : neg) += 1;
            ++end;
        }
        twice_score += 2 * pos * neg_below + pos * neg;
        neg_below += neg;
        n1 += pos;
        n0 += neg;
        start = end;
    }
    if (n1 == 0 || n0 == 0) {
        throw DegenerateLabels("auc: labels contain a single class");
    }
    return static_cast<double>(twice_score) / (2.0 * static_cast<double>(n1) * static_cast<double>(n0));
}

struct ThresholdReport {
    std::vector<double> grid;
    std::vector<double> auc;
    std::vector<std::size_t> group_counts;
    double best_c = 0;
    std::size_t best_index = 0;
};

namespace detail {

inline Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& x, std::span<const std::size_t> rows) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        for (std::size_t i = 0; i < rows.size(); ++i) {
            out(static_cast<Eigen::Index>(i), j) = x(static_cast<Eigen::Index>(rows[i]), j);
        }
    }
    return out;
}

/**
 * Out-of-fold predictions for one fold: inner cross-validation of lambda on the training
 * cells, then prediction of the held-out cells.
 */
inline void predict_fold(const Eigen::MatrixXd& z, std::span<const int> y, const std::vector<std::size_t>& fold_of, std::size_t f,
                         const PipelineConfig& cfg, std::vector<double>& pooled) {
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < y.size(); ++i) {
        (fold_of[i] == f ? test : train).push_back(i);
    }
    std::vector<int> ytrain;
    ytrain.reserve(train.size());
    for (auto i : train) {
        ytrain.push_back(y[i]);
    }
    Eigen::MatrixXd ztrain = gather_rows(z, train);
    auto [fit, cv] = fit_cv(ztrain, ytrain, cfg.enet(), cfg.inner_cv(f));
    auto q = predict_prob(fit, gather_rows(z, test));
    for (std::size_t k = 0; k < test.size(); ++k) {
        pooled[test[k]] = q[k];
    }
}

}

/**
 * Pooled out-of-fold predicted probabilities for a fixed predictor matrix.
 * Inner lambda selection happens on each training split.
 */
inline std::vector<double> cv_predictions(const Eigen::MatrixXd& z, std::span<const int> y, const std::vector<std::size_t>& fold_of,
                                          std::size_t folds, const PipelineConfig& cfg) {
    std::vector<double> pooled(y.size(), 0.0);
    parallel_for(folds, cfg.threads, [&](std::size_t f) { detail::predict_fold(z, y, fold_of, f, cfg, pooled); });
    return pooled;
}

/**
 * Cross-validated AUC for every threshold in `cfg.grid`. Dendrograms come from `forest` (built once
 * on all cells); one stratified fold split is shared by all thresholds. Thresholds that produce the
 * same grouping share one evaluation. The best threshold is the largest `c` attaining the maximal AUC.
 */
inline ThresholdReport cv_threshold_sweep(const GroupingForest& forest, std::span<const int> y, const PipelineConfig& cfg) {
    if (y.size() != forest.std.n_cells()) {
        throw InvalidArgument("label count does not match the number of cells");
    }
    detail::check_labels(y);
    if (cfg.grid.empty()) {
        throw InvalidArgument("threshold grid is empty");
    }
    if (y.size() < cfg.folds) {
        throw InvalidArgument("fewer cells than cross-validation folds");
    }
    const std::size_t folds = usable_folds(y, cfg.folds);
    const auto fold_of = stratified_folds(y, folds, cfg.fold_seed());

    ThresholdReport report;
    report.grid = cfg.grid;
    report.auc.assign(cfg.grid.size(), 0.5);
    report.group_counts.resize(cfg.grid.size());

    // Distinct groupings across the grid.
    std::vector<GroupingRule> rules;
    std::vector<std::size_t> rule_of(cfg.grid.size());
    for (std::size_t t = 0; t < cfg.grid.size(); ++t) {
        auto rule = forest.cut(cfg.grid[t]);
        report.group_counts[t] = rule.n_groups();
        auto same = std::find_if(rules.begin(), rules.end(), [&](const GroupingRule& r) { return r.groups == rule.groups; });
        if (same == rules.end()) {
            rule_of[t] = rules.size();
            rules.push_back(std::move(rule));
        } else {
            rule_of[t] = static_cast<std::size_t>(same - rules.begin());
        }
    }

    std::vector<Eigen::MatrixXd> predictors(rules.size());
    for (std::size_t r = 0; r < rules.size(); ++r) {
        predictors[r] = representatives(rules[r], forest.std);
    }
    std::vector<std::vector<double>> pooled(rules.size(), std::vector<double>(y.size(), 0.0));
    parallel_for(rules.size() * folds, cfg.threads, [&](std::size_t task) {
        const std::size_t r = task / folds, f = task % folds;
        if (rules[r].n_groups() == 0) {
            return;
        }
        detail::predict_fold(predictors[r], y, fold_of, f, cfg, pooled[r]);
    });

    std::vector<double> rule_auc(rules.size(), 0.5);
    for (std::size_t r = 0; r < rules.size(); ++r) {
        if (rules[r].n_groups() == 0) {
            warn("threshold grouping has no non-constant predictors; recording AUC 0.5");
            continue;
        }
        rule_auc[r] = auc(y, pooled[r]);
    }

    for (std::size_t t = 0; t < cfg.grid.size(); ++t) {
        report.auc[t] = rule_auc[rule_of[t]];
    }
    report.best_index = 0;
    for (std::size_t t = 1; t < cfg.grid.size(); ++t) {
        const double a = report.auc[t], b = report.auc[report.best_index];
        if (a > b || (a == b && cfg.grid[t] > cfg.grid[report.best_index])) {
            report.best_index = t;
        }
    }
    report.best_c = cfg.grid[report.best_index];
    return report;
}

inline ThresholdReport cv_threshold_sweep(const ExpressionMatrix& x, std::span<const int> y, const PipelineConfig& cfg) {
    return cv_threshold_sweep(build_forest(x, cfg.split(), cfg.threads), y, cfg);
}

/**
 * @brief Grouping rule plus elastic net over its group representatives.
 */
struct GroupedModel {
    GroupingRule rule;
    EnetFit fit;
    ThresholdReport report;
    std::uint64_t fold_seed = 0;
};

inline std::vector<std::string> group_ids(const GroupingRule& rule) {
    std::vector<std::string> ids;
    ids.reserve(rule.n_groups());
    for (std::size_t g = 0; g < rule.n_groups(); ++g) {
        ids.push_back(std::to_string(g));
    }
    return ids;
}

/**
 * Cut at `best_c`, then fit the elastic net on all cells with lambda chosen by cross-validation.
 */
inline GroupedModel fit_final(const GroupingForest& forest, std::span<const int> y, double best_c, const PipelineConfig& cfg,
                              ThresholdReport report = {}) {
    detail::check_labels(y);
    GroupedModel model;
    model.rule = forest.cut(best_c);
    model.report = std::move(report);
    model.fold_seed = cfg.fold_seed();
    if (model.rule.n_groups() == 0) {
        throw InvalidArgument("no non-constant genes to model");
    }
    Eigen::MatrixXd z = representatives(model.rule, forest.std);
    auto [fit, cv] = fit_cv(z, y, cfg.enet(), cfg.final_cv());
    model.fit = std::move(fit);
    model.fit.predictor_ids = group_ids(model.rule);
    return model;
}

inline GroupedModel fit_final(const ExpressionMatrix& x, std::span<const int> y, double best_c, const PipelineConfig& cfg) {
    return fit_final(build_forest(x, cfg.split(), cfg.threads), y, best_c, cfg);
}

/**
 * The whole procedure: grouping forest, threshold sweep, final fit.
 */
inline GroupedModel fit_grouped(const ExpressionMatrix& x, std::span<const int> y, const PipelineConfig& cfg) {
    if (y.size() != x.n_cells()) {
        throw InvalidArgument("label count does not match the number of cells");
    }
    auto forest = build_forest(x, cfg.split(), cfg.threads);
    auto report = cv_threshold_sweep(forest, y, cfg);
    const double c = report.best_c;
    return fit_final(forest, y, c, cfg, std::move(report));
}

/**
 * Per-gene selection flags over the training genes: a gene is selected iff its group's
 * representative has a nonzero coefficient.
 */
inline std::vector<bool> expand_selection(const GroupedModel& model) {
    std::vector<bool> flags(model.rule.gene_order.size(), false);
    for (std::size_t g = 0; g < model.rule.n_groups(); ++g) {
        if (model.fit.coefficients[g] != 0.0) {
            for (auto gene : model.rule.groups[g]) {
                flags[gene] = true;
            }
        }
    }
    return flags;
}

inline std::vector<double> predict(const GroupedModel& model, const ExpressionMatrix& x_new) {
    return predict_prob(model.fit, representatives(model.rule, x_new));
}

/**
 * @brief Elastic net on the individual standardized genes, without grouping.
 */
struct UngroupedModel {
    std::vector<std::string> gene_order;
    std::vector<std::size_t> retained;
    std::vector<double> gene_means;
    std::vector<double> gene_sds;
    EnetFit fit;
};

namespace detail {

inline Eigen::MatrixXd retained_columns(const StandardizedMatrix& std) {
    Eigen::MatrixXd z(static_cast<Eigen::Index>(std.n_cells()), static_cast<Eigen::Index>(std.retained.size()));
    for (std::size_t k = 0; k < std.retained.size(); ++k) {
        z.col(static_cast<Eigen::Index>(k)) = std.values.col(static_cast<Eigen::Index>(std.retained[k]));
    }
    return z;
}

}

/**
 * Pooled out-of-fold predictions of the ungrouped elastic net under the same folds and seeds
 * that `cv_threshold_sweep()` uses.
 */
inline std::vector<double> cv_predictions_ungrouped(const StandardizedMatrix& std, std::span<const int> y, const PipelineConfig& cfg) {
    detail::check_labels(y);
    const std::size_t folds = usable_folds(y, cfg.folds);
    const auto fold_of = stratified_folds(y, folds, cfg.fold_seed());
    return cv_predictions(detail::retained_columns(std), y, fold_of, folds, cfg);
}

inline UngroupedModel fit_ungrouped(const StandardizedMatrix& std, std::span<const int> y, const PipelineConfig& cfg) {
    detail::check_labels(y);
    if (std.retained.empty()) {
        throw InvalidArgument("no non-constant genes to model");
    }
    UngroupedModel model;
    model.gene_order = std.gene_ids;
    model.retained = std.retained;
    model.gene_means = std.gene_means;
    model.gene_sds = std.gene_sds;
    auto [fit, cv] = fit_cv(detail::retained_columns(std), y, cfg.enet(), cfg.final_cv());
    model.fit = std::move(fit);
    for (auto g : std.retained) {
        model.fit.predictor_ids.push_back(std.gene_ids[g]);
    }
    return model;
}

inline UngroupedModel fit_ungrouped(const ExpressionMatrix& x, std::span<const int> y, const PipelineConfig& cfg) {
    return fit_ungrouped(standardize(x), y, cfg);
}

inline std::vector<bool> selection(const UngroupedModel& model) {
    std::vector<bool> flags(model.gene_order.size(), false);
    for (std::size_t k = 0; k < model.retained.size(); ++k) {
        flags[model.retained[k]] = model.fit.coefficients[k] != 0.0;
    }
    return flags;
}

inline std::vector<double> predict(const UngroupedModel& model, const ExpressionMatrix& x_new) {
    const auto n = static_cast<Eigen::Index>(x_new.n_cells());
    Eigen::MatrixXd z(n, static_cast<Eigen::Index>(model.retained.size()));
    std::vector<std::string> missing;
    for (std::size_t k = 0; k < model.retained.size(); ++k) {
        const auto gene = model.retained[k];
        auto c = x_new.find_gene(model.gene_order[gene]);
        if (c < 0) {
            missing.push_back(model.gene_order[gene]);
            continue;
        }
        auto col = x_new.gene(static_cast<std::size_t>(c));
        for (Eigen::Index i = 0; i < n; ++i) {
            z(i, static_cast<Eigen::Index>(k)) = standardize_value(col[static_cast<std::size_t>(i)], model.gene_means[gene], model.gene_sds[gene]);
        }
    }
    if (!missing.empty()) {
        std::string msg = "input lacks " + std::to_string(missing.size()) + " gene(s) required by the model:";
        for (std::size_t i = 0; i < missing.size() && i < 20; ++i) {
            msg += " " + missing[i];
        }
        throw MissingGenes(msg);
    }
    return predict_prob(model.fit, z);
}

inline nlohmann::json report_to_json(const ThresholdReport& r) {
    return {{"grid", r.grid}, {"auc", r.auc}, {"group_counts", r.group_counts}, {"best_c", r.best_c}, {"best_index", r.best_index}};
}

inline ThresholdReport report_from_json(const nlohmann::json& j) {
    ThresholdReport r;
    r.grid = j.at("grid").get<std::vector<double>>();
    r.auc = j.at("auc").get<std::vector<double>>();
    r.group_counts = j.at("group_counts").get<std::vector<std::size_t>>();
    r.best_c = j.at("best_c").get<double>();
    r.best_index = j.value("best_index", std::size_t{0});
    return r;
}

inline nlohmann::json model_to_json(const GroupedModel& m) {
    return {
        {"format", "corrgroup.grouped_model"},
        {"version", 1},
        {"rule", rule_to_json(m.rule)},
        {"fit", fit_to_json(m.fit)},
        {"report", report_to_json(m.report)},
        {"fold_seed", m.fold_seed},
    };
}

inline GroupedModel model_from_json(const nlohmann::json& j) {
    try {
        if (j.value("format", std::string{}) != "corrgroup.grouped_model") {
            throw ValidationError("not a grouped model file (missing format tag)");
        }
        GroupedModel m;
        m.rule = rule_from_json(j.at("rule"));
        m.fit = fit_from_json(j.at("fit"), group_ids(m.rule));
        m.report = report_from_json(j.at("report"));
        m.fold_seed = j.at("fold_seed").get<std::uint64_t>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed grouped model JSON: ") + e.what());
    }
}

inline nlohmann::json model_to_json(const UngroupedModel& m) {
    nlohmann::json standardization = nlohmann::json::object();
    for (auto g : m.retained) {
        standardization[m.gene_order[g]] = {{"mean", m.gene_means[g]}, {"sd", m.gene_sds[g]}};
    }
    return {
        {"format", "corrgroup.ungrouped_model"},
        {"version", 1},
        {"gene_order", m.gene_order},
        {"standardization", std::move(standardization)},
        {"fit", fit_to_json(m.fit)},
    };
}

inline UngroupedModel ungrouped_model_from_json(const nlohmann::json& j) {
    try {
        if (j.value("format", std::string{}) != "corrgroup.ungrouped_model") {
            throw ValidationError("not an ungrouped model file (missing format tag)");
        }
        UngroupedModel m;
        m.gene_order = j.at("gene_order").get<std::vector<std::string>>();
        const auto p = m.gene_order.size();
        m.gene_means.assign(p, 0.0);
        m.gene_sds.assign(p, 0.0);
        const auto& st = j.at("standardization");
        std::vector<std::string> ids;
        for (std::size_t g = 0; g < p; ++g) {
            auto it = st.find(m.gene_order[g]);
            if (it == st.end()) {
                continue;
            }
            m.retained.push_back(g);
            m.gene_means[g] = it->at("mean").get<double>();
            m.gene_sds[g] = it->at("sd").get<double>();
            ids.push_back(m.gene_order[g]);
        }
        m.fit = fit_from_json(j.at("fit"), ids);
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed ungrouped model JSON: ") + e.what());
    }
}

}

#endif
