#ifndef CORRGROUP_SIMBENCH_HPP
#define CORRGROUP_SIMBENCH_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
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
#include "pipeline.hpp"
#include "random.hpp"

/**
 * @file simbench.hpp
 * @brief Simulation harness: correlated synthetic expression, blueprint models, jittered
 * phenotype simulation, selection/prediction metrics and the paired grouped-vs-ungrouped benchmark.
 */

namespace corrgroup {

/**
 * @brief One block of correlated genes in a synthetic design.
 *
 * Gene `i` of the block is `s_i * (sqrt(rho) * f + sqrt(1 - rho) * e_i)` with a shared latent
 * factor `f`. Signs cycle through `signs` (a string of '+' and '-'). A causal block's factor
 * drives the source phenotype with log-odds weight `effect`.
 */
struct BlockSpec {
    std::size_t size = 0;
    double rho = 0;
    std::string signs = "+";
    bool causal = false;
    double effect = 1.0;
};

struct SyntheticDesign {
    std::size_t n_cells = 0;
    std::size_t n_genes = 0;
    std::vector<BlockSpec> blocks;
    double noise_mean = 0;
    double noise_sd = 1;
    double source_intercept = 0;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_cells < 2) {
            throw InvalidArgument("design: n_cells must be at least 2");
        }
        if (n_genes < 1) {
            throw InvalidArgument("design: n_genes must be at least 1");
        }
        std::size_t total = 0;
        for (const auto& b : blocks) {
            if (b.size == 0) {
                throw InvalidArgument("design: block size must be positive");
            }
            if (!(b.rho >= 0 && b.rho < 1)) {
                throw InvalidArgument("design: block rho must lie in [0, 1)");
            }
            if (b.signs.empty() || b.signs.find_first_not_of("+-") != std::string::npos) {
                throw InvalidArgument("design: block signs must be a non-empty string of '+' and '-'");
            }
            if (!std::isfinite(b.effect)) {
                throw InvalidArgument("design: block effect must be finite");
            }
            total += b.size;
        }
        if (total > n_genes) {
            throw InvalidArgument("design: block sizes exceed n_genes");
        }
        if (!(noise_sd > 0) || !std::isfinite(noise_mean) || !std::isfinite(source_intercept)) {
            throw InvalidArgument("design: noise sd must be positive and parameters finite");
        }
    }
};

inline SyntheticDesign design_from_json(const nlohmann::json& j) {
    try {
        SyntheticDesign d;
        d.n_cells = j.at("n_cells").get<std::size_t>();
        d.n_genes = j.at("n_genes").get<std::size_t>();
        for (const auto& b : j.value("blocks", nlohmann::json::array())) {
            BlockSpec s;
            s.size = b.at("size").get<std::size_t>();
            s.rho = b.at("rho").get<double>();
            s.signs = b.value("signs", std::string("+"));
            s.causal = b.value("causal", false);
            s.effect = b.value("effect", 1.0);
            d.blocks.push_back(s);
        }
        if (j.contains("noise")) {
            d.noise_mean = j["noise"].value("mean", 0.0);
            d.noise_sd = j["noise"].value("sd", 1.0);
        }
        d.source_intercept = j.value("source_intercept", 0.0);
        d.seed = j.value("seed", std::uint64_t{0});
        d.validate();
        return d;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed design JSON: ") + e.what());
    }
}

inline nlohmann::json design_to_json(const SyntheticDesign& d) {
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& b : d.blocks) {
        blocks.push_back({{"size", b.size}, {"rho", b.rho}, {"signs", b.signs}, {"causal", b.causal}, {"effect", b.effect}});
    }
    return {
        {"n_cells", d.n_cells},
        {"n_genes", d.n_genes},
        {"blocks", std::move(blocks)},
        {"noise", {{"mean", d.noise_mean}, {"sd", d.noise_sd}}},
        {"source_intercept", d.source_intercept},
        {"seed", d.seed},
    };
}

/**
 * @brief Synthetic expression plus the source phenotype the blueprint is learned from.
 */
struct SyntheticData {
    ExpressionMatrix x;
    std::vector<int> y;
    std::vector<std::size_t> block_of; ///< block index per gene, or npos for background genes
};

inline std::vector<std::string> numbered_ids(const std::string& prefix, std::size_t count) {
    const auto width = std::to_string(count).size();
    std::vector<std::string> ids;
    ids.reserve(count);
    for (std::size_t i = 1; i <= count; ++i) {
        auto s = std::to_string(i);
        ids.push_back(prefix + std::string(width - s.size(), '0') + s);
    }
    return ids;
}

inline SyntheticData synth_dataset(const SyntheticDesign& design) {
    design.validate();
    const auto n = static_cast<Eigen::Index>(design.n_cells);
    Rng rng = make_rng(design.seed, {0});
    std::normal_distribution<double> normal(0.0, 1.0);

    Eigen::MatrixXd values(n, static_cast<Eigen::Index>(design.n_genes));
    std::vector<std::size_t> block_of(design.n_genes, static_cast<std::size_t>(-1));
    Eigen::VectorXd eta = Eigen::VectorXd::Constant(n, design.source_intercept);
    Eigen::Index col = 0;
    for (std::size_t b = 0; b < design.blocks.size(); ++b) {
        const auto& spec = design.blocks[b];
        Eigen::VectorXd f(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            f[i] = normal(rng);
        }
        if (spec.causal) {
            eta += spec.effect * f;
        }
        const double a = std::sqrt(spec.rho), e = std::sqrt(1 - spec.rho);
        for (std::size_t k = 0; k < spec.size; ++k, ++col) {
            const double s = spec.signs[k % spec.signs.size()] == '-' ? -1.0 : 1.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                values(i, col) = s * (a * f[i] + e * normal(rng));
            }
            block_of[static_cast<std::size_t>(col)] = b;
        }
    }
    for (; col < values.cols(); ++col) {
        for (Eigen::Index i = 0; i < n; ++i) {
            values(i, col) = normal(rng);
        }
    }
    values = (values.array() * design.noise_sd + design.noise_mean).matrix();

    std::vector<int> y(design.n_cells);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (Eigen::Index i = 0; i < n; ++i) {
        y[static_cast<std::size_t>(i)] = unif(rng) < logistic(eta[i]) ? 1 : 0;
    }
    return SyntheticData{ExpressionMatrix(std::move(values), numbered_ids("g", design.n_genes), numbered_ids("c", design.n_cells)), std::move(y),
                         std::move(block_of)};
}

inline ExpressionMatrix synth_expression(const SyntheticDesign& design) { return synth_dataset(design).x; }

/**
 * @brief Ground-truth logistic model used to simulate phenotypes.
 */
struct BlueprintModel {
    std::vector<double> beta;
    double intercept = 0;
    std::string source;
    double min_cor = 0.9;
    std::vector<std::string> gene_ids;

    std::size_t support_size() const {
        return static_cast<std::size_t>(std::count_if(beta.begin(), beta.end(), [](double b) { return b != 0.0; }));
    }
};

inline nlohmann::json blueprint_to_json(const BlueprintModel& b) {
    return {{"format", "corrgroup.blueprint"}, {"version", 1},     {"source", b.source},     {"min_cor", b.min_cor},
            {"intercept", b.intercept},        {"gene_ids", b.gene_ids}, {"beta", b.beta}};
}

inline BlueprintModel blueprint_from_json(const nlohmann::json& j) {
    try {
        if (j.value("format", std::string{}) != "corrgroup.blueprint") {
            throw ValidationError("not a blueprint file (missing format tag)");
        }
        BlueprintModel b;
        b.source = j.value("source", std::string{});
        b.min_cor = j.at("min_cor").get<double>();
        b.intercept = j.at("intercept").get<double>();
        b.gene_ids = j.at("gene_ids").get<std::vector<std::string>>();
        b.beta = j.at("beta").get<std::vector<double>>();
        if (b.beta.size() != b.gene_ids.size()) {
            throw ValidationError("blueprint: beta and gene_ids differ in length");
        }
        return b;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed blueprint JSON: ") + e.what());
    }
}

/**
 * Largest absolute Pearson correlation of each gene with any other gene (0 for constant genes).
 */
inline std::vector<double> max_abs_correlation(const StandardizedMatrix& std) {
    const auto p = static_cast<Eigen::Index>(std.n_genes());
    std::vector<double> out(std.n_genes(), 0.0);
    if (std.n_cells() < 2) {
        return out;
    }
    const double scale = 1.0 / static_cast<double>(std.n_cells() - 1);
    constexpr Eigen::Index chunk = 256;
    for (Eigen::Index start = 0; start < p; start += chunk) {
        const Eigen::Index len = std::min(chunk, p - start);
        Eigen::MatrixXd r = (std.values.transpose() * std.values.middleCols(start, len)) * scale;
        for (Eigen::Index c = 0; c < len; ++c) {
            const auto j = start + c;
            if (std.is_constant(static_cast<std::size_t>(j))) {
                continue;
            }
            double best = 0;
            for (Eigen::Index i = 0; i < p; ++i) {
                if (i != j) {
                    best = std::max(best, std::min(1.0, std::abs(r(i, c))));
                }
            }
            out[static_cast<std::size_t>(j)] = best;
        }
    }
    return out;
}

struct BlueprintOptions {
    double min_cor = 0.9;
    double alpha = 0.5;
    std::size_t folds = 10;
    std::size_t path_length = 50;
    std::uint64_t seed = 0;
    bool post_hoc = false; ///< fit on all genes and zero filtered ones instead of refitting
    int threads = 1;
};

/**
 * Fit an elastic net to `(x, y)` on the genes whose largest absolute correlation with another gene
 * reaches `min_cor`, and embed the coefficients in a length-p vector.
 */
inline BlueprintModel make_blueprint(const ExpressionMatrix& x, std::span<const int> y, const BlueprintOptions& opt = {}) {
    if (y.size() != x.n_cells()) {
        throw InvalidArgument("label count does not match the number of cells");
    }
    detail::check_labels(y);
    const auto std = standardize(x);
    const auto maxcor = max_abs_correlation(std);
    std::vector<std::size_t> keep;
    for (std::size_t j = 0; j < maxcor.size(); ++j) {
        if (maxcor[j] >= opt.min_cor) {
            keep.push_back(j);
        }
    }
    if (keep.empty()) {
        throw EmptyBlueprint("no gene has absolute correlation >= " + csv::format_double(opt.min_cor) + " with another gene");
    }

    BlueprintModel b;
    b.min_cor = opt.min_cor;
    b.gene_ids = x.gene_ids();
    b.beta.assign(x.n_genes(), 0.0);
    EnetOptions eopt;
    eopt.alpha = opt.alpha;
    CvLambdaOptions cv{opt.folds, opt.path_length, 1e-3, opt.seed, opt.threads};

    if (opt.post_hoc) {
        b.source = "elastic net on all genes, coefficients zeroed post hoc";
        auto [fit, res] = fit_cv(x.values(), y, eopt, cv);
        for (auto j : keep) {
            b.beta[j] = fit.coefficients[j];
        }
        b.intercept = fit.intercept;
    } else {
        b.source = "elastic net refit on correlation-filtered genes";
        Eigen::MatrixXd xs(x.values().rows(), static_cast<Eigen::Index>(keep.size()));
        for (std::size_t k = 0; k < keep.size(); ++k) {
            xs.col(static_cast<Eigen::Index>(k)) = x.values().col(static_cast<Eigen::Index>(keep[k]));
        }
        auto [fit, res] = fit_cv(xs, y, eopt, cv);
        for (std::size_t k = 0; k < keep.size(); ++k) {
            b.beta[keep[k]] = fit.coefficients[k];
        }
        b.intercept = fit.intercept;
    }
    if (b.support_size() == 0) {
        throw EmptyBlueprint("blueprint elastic net selected no genes");
    }
    return b;
}

/**
 * Perturb every nonzero coefficient by N(0, (sd_fraction * s)^2), where `s` is the sample sd of
 * the nonzero coefficients (their absolute value when there is only one). Zeros stay zero.
 */
inline BlueprintModel jitter(const BlueprintModel& b, double sd_fraction, std::uint64_t seed) {
    if (!(sd_fraction >= 0) || !std::isfinite(sd_fraction)) {
        throw InvalidArgument("jitter sd fraction must be finite and >= 0");
    }
    BlueprintModel out = b;
    std::vector<double> nz;
    for (double v : b.beta) {
        if (v != 0.0) {
            nz.push_back(v);
        }
    }
    if (nz.empty() || sd_fraction == 0.0) {
        return out;
    }
    double s;
    if (nz.size() == 1) {
        s = std::abs(nz[0]);
    } else {
        const double m = std::accumulate(nz.begin(), nz.end(), 0.0) / static_cast<double>(nz.size());
        double ss = 0;
        for (double v : nz) {
            ss += (v - m) * (v - m);
        }
        s = std::sqrt(ss / static_cast<double>(nz.size() - 1));
    }
    Rng rng(seed);
    std::normal_distribution<double> noise(0.0, sd_fraction * s);
    for (double& v : out.beta) {
        if (v != 0.0) {
            v += noise(rng);
        }
    }
    return out;
}

struct Phenotypes {
    std::vector<int> y;
    std::vector<double> q;
};

/**
 * True probabilities `q_j = logistic(intercept + sum_i beta_i x_ji)` on the raw scale and
 * Bernoulli draws from them.
 */
inline Phenotypes simulate_phenotypes(const ExpressionMatrix& x, const BlueprintModel& b, std::uint64_t seed) {
    if (b.beta.size() != x.n_genes()) {
        throw InvalidArgument("blueprint has " + std::to_string(b.beta.size()) + " coefficients but the matrix has " +
                              std::to_string(x.n_genes()) + " genes");
    }
    if (!b.gene_ids.empty() && b.gene_ids != x.gene_ids()) {
        throw InvalidArgument("blueprint genes do not match the matrix genes");
    }
    Phenotypes out;
    const auto n = x.n_cells();
    out.q.resize(n);
    out.y.resize(n);
    Eigen::VectorXd eta = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), b.intercept);
    for (std::size_t j = 0; j < b.beta.size(); ++j) {
        if (b.beta[j] != 0.0) {
            eta += b.beta[j] * x.values().col(static_cast<Eigen::Index>(j));
        }
    }
    Rng rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        out.q[i] = logistic(eta[static_cast<Eigen::Index>(i)]);
        out.y[i] = unif(rng) < out.q[i] ? 1 : 0;
    }
    return out;
}

struct MetricsRecord {
    std::size_t replicate = 0;
    std::string method;
    double mse = 0;
    double precision = 0;
    double recall = 0;
    double f1 = 0;
    bool precision_undefined = false; ///< nothing was selected; precision recorded as 0
};

/**
 * Prediction error and selection quality of one fitted model against the truth.
 * `selected` flags genes whose estimated coefficient (or group coefficient) is nonzero.
 */
inline MetricsRecord compute_metrics(std::span<const double> beta_true, const std::vector<bool>& selected, std::span<const double> q_true,
                                     std::span<const double> q_hat, std::string method = {}, std::size_t replicate = 0) {
    if (beta_true.size() != selected.size()) {
        throw InvalidArgument("metrics: coefficient and selection vectors differ in length");
    }
    if (q_true.size() != q_hat.size() || q_true.empty()) {
        throw InvalidArgument("metrics: probability vectors differ in length or are empty");
    }
    MetricsRecord m;
    m.method = std::move(method);
    m.replicate = replicate;
    double sse = 0;
    for (std::size_t j = 0; j < q_true.size(); ++j) {
        const double d = q_true[j] - q_hat[j];
        sse += d * d;
    }
    m.mse = sse / static_cast<double>(q_true.size());

    std::size_t truth = 0, chosen = 0, both = 0;
    for (std::size_t i = 0; i < selected.size(); ++i) {
        const bool t = beta_true[i] != 0.0;
        truth += t;
        chosen += selected[i];
        both += t && selected[i];
    }
    if (truth == 0) {
        throw InvalidExperiment("metrics: the true model has no nonzero coefficients");
    }
    m.recall = static_cast<double>(both) / static_cast<double>(truth);
    if (chosen == 0) {
        m.precision_undefined = true;
        m.precision = 0;
    } else {
        m.precision = static_cast<double>(both) / static_cast<double>(chosen);
    }
    m.f1 = (m.precision > 0 && m.recall > 0) ? 2.0 / (1.0 / m.precision + 1.0 / m.recall) : 0.0;
    return m;
}

struct SignedRanks {
    std::vector<double> abs_values; ///< nonzero |d|
    std::vector<double> ranks;      ///< midranks of abs_values
    double w_plus = 0;              ///< sum of ranks of positive differences
    double tie_term = 0;            ///< sum over tie groups of t^3 - t
};

namespace detail {

inline SignedRanks signed_ranks(std::span<const double> d) {
    SignedRanks out;
    std::vector<double> pos;
    for (double v : d) {
        if (!std::isfinite(v)) {
            throw InvalidArgument("wilcoxon: differences must be finite");
        }
        if (v != 0.0) {
            out.abs_values.push_back(std::abs(v));
            pos.push_back(v > 0 ? 1.0 : 0.0);
        }
    }
    const std::size_t n = out.abs_values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return out.abs_values[a] < out.abs_values[b]; });
    out.ranks.assign(n, 0.0);
    for (std::size_t start = 0; start < n;) {
        std::size_t end = start;
        while (end < n && out.abs_values[order[end]] == out.abs_values[order[start]]) {
            ++end;
        }
        const double mid = 0.5 * static_cast<double>(start + 1 + end);
        for (std::size_t k = start; k < end; ++k) {
            out.ranks[order[k]] = mid;
        }
        const double t = static_cast<double>(end - start);
        out.tie_term += t * t * t - t;
        start = end;
    }
    for (std::size_t k = 0; k < n; ++k) {
        out.w_plus += pos[k] * out.ranks[k];
    }
    return out;
}

}

/**
 * Exact two-sided signed-rank p-value, `min(1, 2 * min(P(W+ <= w), P(W+ >= w)))`, under the
 * permutation distribution given the observed (mid)ranks. Zero differences are dropped.
 * Returns 1 when no nonzero differences remain.
 */
inline double wilcoxon_exact(std::span<const double> d) {
    auto sr = detail::signed_ranks(d);
    const std::size_t n = sr.ranks.size();
    if (n == 0) {
        return 1.0;
    }
    // Doubled midranks are integers.
    std::vector<std::size_t> r2(n);
    std::size_t total = 0;
    for (std::size_t k = 0; k < n; ++k) {
        r2[k] = static_cast<std::size_t>(std::lround(2 * sr.ranks[k]));
        total += r2[k];
    }
    std::vector<double> count(total + 1, 0.0);
    count[0] = 1;
    std::size_t reach = 0;
    for (auto r : r2) {
        for (std::size_t s = reach + 1; s-- > 0;) {
            if (count[s] != 0) {
                count[s + r] += count[s];
            }
        }
        reach += r;
    }
    const auto w = static_cast<std::size_t>(std::lround(2 * sr.w_plus));
    double lower = 0, upper = 0;
    for (std::size_t s = 0; s <= total; ++s) {
        if (s <= w) {
            lower += count[s];
        }
        if (s >= w) {
            upper += count[s];
        }
    }
    const double all = std::ldexp(1.0, static_cast<int>(n));
    return std::min(1.0, 2.0 * std::min(lower, upper) / all);
}

/**
 * Two-sided paired Wilcoxon signed-rank test. Exact for at most 25 nonzero differences; otherwise
 * the normal approximation with tie-corrected variance and continuity correction.
 */
inline double wilcoxon_signed_rank(std::span<const double> d) {
    auto sr = detail::signed_ranks(d);
    const std::size_t n = sr.ranks.size();
    if (n == 0) {
        warn("wilcoxon: all differences are zero; p-value set to 1");
        return 1.0;
    }
    if (n < 6) {
        throw InvalidArgument("wilcoxon: need at least 6 nonzero differences, got " + std::to_string(n));
    }
    if (n <= 25) {
        return wilcoxon_exact(d);
    }
    const double nn = static_cast<double>(n);
    const double mean = nn * (nn + 1) / 4;
    const double var = nn * (nn + 1) * (2 * nn + 1) / 24 - sr.tie_term / 48;
    if (var <= 0) {
        return 1.0;
    }
    const double z = std::max(0.0, std::abs(sr.w_plus - mean) - 0.5) / std::sqrt(var);
    return std::min(1.0, std::erfc(z / std::sqrt(2.0)));
}

inline double median(std::vector<double> v) {
    if (v.empty()) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    std::sort(v.begin(), v.end());
    const auto h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

struct BenchmarkConfig {
    std::size_t reps = 100;
    double sd_fraction = 0.1;
    std::uint64_t seed = 0;
    double min_cor = 0.9;
    bool post_hoc = false;
    std::size_t max_redraws = 100;
    PipelineConfig pipeline; ///< grid, folds and solver settings; its seed and threads are ignored
    int threads = 1;
};

struct BenchmarkResult {
    std::vector<MetricsRecord> grouped;
    std::vector<MetricsRecord> ungrouped;
    std::vector<MetricsRecord> difference; ///< grouped minus ungrouped, per replicate
    std::vector<double> best_c;
    std::size_t redraws = 0;
    double p_mse = 0, p_precision = 0, p_recall = 0, p_f1 = 0;
    double median_mse = 0, median_precision = 0, median_recall = 0, median_f1 = 0;
    BlueprintModel blueprint;
};

namespace detail {

inline double paired_p(const std::vector<double>& d, const char* name) {
    std::size_t nonzero = static_cast<std::size_t>(std::count_if(d.begin(), d.end(), [](double v) { return v != 0.0; }));
    if (nonzero > 0 && nonzero < 6) {
        warn(std::string("wilcoxon: fewer than 6 nonzero ") + name + " differences; p-value not available");
        return std::numeric_limits<double>::quiet_NaN();
    }
    return wilcoxon_signed_rank(d);
}

}

/**
 * Fit a blueprint on `data` and compare the grouped pipeline with the ungrouped elastic net on
 * `cfg.reps` jittered replicates. Both arms share folds and seeds within a replicate. Replicates whose
 * minority class is smaller than the fold count are redrawn.
 */
inline BenchmarkResult run_benchmark(const SyntheticData& data, const BenchmarkConfig& cfg) {
    const auto& x = data.x;
    BenchmarkResult out;
    BlueprintOptions bopt;
    bopt.min_cor = cfg.min_cor;
    bopt.alpha = cfg.pipeline.alpha;
    bopt.folds = cfg.pipeline.inner_folds;
    bopt.path_length = cfg.pipeline.path_length;
    bopt.seed = derive_seed(cfg.seed, {10});
    bopt.post_hoc = cfg.post_hoc;
    bopt.threads = cfg.threads;
    out.blueprint = make_blueprint(x, data.y, bopt);
    info("blueprint: " + std::to_string(out.blueprint.support_size()) + " nonzero coefficients");

    PipelineConfig base = cfg.pipeline;
    base.seed = cfg.seed;
    SplitOptions split = base.split();
    split.seed = derive_seed(cfg.seed, {11});
    const auto forest = build_forest(x, split, cfg.threads);
    info("grouping forest: " + std::to_string(forest.partition.subsets.size()) + " subsets");

    out.grouped.resize(cfg.reps);
    out.ungrouped.resize(cfg.reps);
    out.best_c.resize(cfg.reps);
    std::vector<std::size_t> redraws(cfg.reps, 0);
    parallel_for(cfg.reps, cfg.threads, [&](std::size_t r) {
        const auto rs = derive_seed(cfg.seed, {20, r});
        const auto truth = jitter(out.blueprint, cfg.sd_fraction, derive_seed(rs, {1}));
        Phenotypes ph;
        for (std::size_t attempt = 0;; ++attempt) {
            if (attempt > cfg.max_redraws) {
                throw InvalidExperiment("replicate " + std::to_string(r) + ": phenotype stayed degenerate after " +
                                        std::to_string(cfg.max_redraws) + " redraws");
            }
            ph = simulate_phenotypes(x, truth, derive_seed(rs, {2, attempt}));
            const auto ones = static_cast<std::size_t>(std::count(ph.y.begin(), ph.y.end(), 1));
            if (std::min(ones, ph.y.size() - ones) >= cfg.pipeline.folds) {
                break;
            }
            ++redraws[r];
        }
        PipelineConfig pc = cfg.pipeline;
        pc.seed = derive_seed(rs, {3});
        pc.threads = 1;

        auto report = cv_threshold_sweep(forest, ph.y, pc);
        out.best_c[r] = report.best_c;
        const double c = report.best_c;
        auto grouped = fit_final(forest, ph.y, c, pc, std::move(report));
        auto ungrouped = fit_ungrouped(forest.std, ph.y, pc);

        const auto qg = predict(grouped, x);
        const auto qu = predict(ungrouped, x);
        out.grouped[r] = compute_metrics(truth.beta, expand_selection(grouped), ph.q, qg, "grouped", r + 1);
        out.ungrouped[r] = compute_metrics(truth.beta, selection(ungrouped), ph.q, qu, "ungrouped", r + 1);
        info("replicate " + std::to_string(r + 1) + "/" + std::to_string(cfg.reps) + " done");
    });
    out.redraws = std::accumulate(redraws.begin(), redraws.end(), std::size_t{0});
    if (out.redraws > 0) {
        warn("benchmark: " + std::to_string(out.redraws) + " degenerate phenotype draw(s) were redrawn");
    }

    std::vector<double> dm, dp, dr, df;
    for (std::size_t r = 0; r < cfg.reps; ++r) {
        const auto& g = out.grouped[r];
        const auto& u = out.ungrouped[r];
        MetricsRecord d;
        d.replicate = r + 1;
        d.method = "difference";
        d.mse = g.mse - u.mse;
        d.precision = g.precision - u.precision;
        d.recall = g.recall - u.recall;
        d.f1 = g.f1 - u.f1;
        d.precision_undefined = g.precision_undefined || u.precision_undefined;
        out.difference.push_back(d);
        dm.push_back(d.mse);
        dp.push_back(d.precision);
        dr.push_back(d.recall);
        df.push_back(d.f1);
    }
    out.p_mse = detail::paired_p(dm, "MSE");
    out.p_precision = detail::paired_p(dp, "precision");
    out.p_recall = detail::paired_p(dr, "recall");
    out.p_f1 = detail::paired_p(df, "F1");
    out.median_mse = median(dm);
    out.median_precision = median(dp);
    out.median_recall = median(dr);
    out.median_f1 = median(df);
    return out;
}

inline BenchmarkResult run_benchmark(const SyntheticDesign& design, const BenchmarkConfig& cfg) {
    return run_benchmark(synth_dataset(design), cfg);
}

inline void write_metrics(std::ostream& os, const std::vector<MetricsRecord>& rows) {
    csv::write_row(os, {"replicate", "method", "mse", "precision", "recall", "f1"}, ',');
    for (const auto& m : rows) {
        csv::write_row(os, {std::to_string(m.replicate), m.method, csv::format_double(m.mse), csv::format_double(m.precision),
                            csv::format_double(m.recall), csv::format_double(m.f1)},
                       ',');
    }
}

/**
 * Rows in replicate order: grouped, ungrouped, difference.
 */
inline std::vector<MetricsRecord> benchmark_rows(const BenchmarkResult& r) {
    std::vector<MetricsRecord> rows;
    for (std::size_t k = 0; k < r.grouped.size(); ++k) {
        rows.push_back(r.grouped[k]);
        rows.push_back(r.ungrouped[k]);
        rows.push_back(r.difference[k]);
    }
    return rows;
}

inline nlohmann::json benchmark_summary(const BenchmarkResult& r) {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    auto undefined = [](const std::vector<MetricsRecord>& rows) {
        return std::count_if(rows.begin(), rows.end(), [](const MetricsRecord& m) { return m.precision_undefined; });
    };
    return {
        {"replicates", r.grouped.size()},
        {"redraws", r.redraws},
        {"wilcoxon_p", {{"mse", num(r.p_mse)}, {"precision", num(r.p_precision)}, {"recall", num(r.p_recall)}, {"f1", num(r.p_f1)}}},
        {"median_difference",
         {{"mse", num(r.median_mse)}, {"precision", num(r.median_precision)}, {"recall", num(r.median_recall)}, {"f1", num(r.median_f1)}}},
        {"precision_undefined", {{"grouped", undefined(r.grouped)}, {"ungrouped", undefined(r.ungrouped)}}},
        {"best_threshold", r.best_c},
        {"blueprint_support", r.blueprint.support_size()},
    };
}

}

#endif
