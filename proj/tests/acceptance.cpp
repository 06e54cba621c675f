// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: acceptance [criterion ...]   (default: all of 1-9)

#include "helpers.hpp"
#include "oracles.hpp"

#include <corrgroup/cli.hpp>

#include <chrono>
#include <iostream>
#include <map>
#include <numeric>
#include <set>

using namespace corrgroup;
using testing_support::matrix;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(4) << v;
    return os.str();
}

// ---- 1 and 2: paired benchmark on the planted design ----

SyntheticDesign planted_design() {
    SyntheticDesign d;
    d.n_cells = 300;
    d.n_genes = 1200;
    for (int b = 0; b < 8; ++b) {
        BlockSpec s;
        s.size = 15;
        s.rho = 0.95;
        s.signs = "+-";
        s.causal = b < 4;
        s.effect = b % 2 ? -1.0 : 1.0;
        d.blocks.push_back(s);
    }
    d.seed = 1;
    return d;
}

std::pair<Outcome, Outcome> benchmark_direction() {
    BenchmarkConfig cfg;
    cfg.reps = 100;
    cfg.sd_fraction = 0.1;
    cfg.seed = 2024;
    cfg.threads = default_threads();
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = run_benchmark(planted_design(), cfg);
    const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60;

    std::size_t grouped_chosen = 0;
    for (double c : r.best_c) {
        grouped_chosen += c >= 0.05;
    }
    const std::string common = "; replicates choosing c >= 0.05: " + std::to_string(grouped_chosen) + "/100; " + fmt(minutes) + " min on " +
                               std::to_string(cfg.threads) + " thread(s)";
    Outcome one;
    one.pass = r.median_mse < 0 && r.p_mse < 0.01;
    one.detail = "median MSE difference " + fmt(r.median_mse) + ", Wilcoxon p " + fmt(r.p_mse) + common;
    Outcome two;
    two.pass = r.median_f1 > 0 && r.p_f1 < 0.01 && r.median_recall > 0 && r.p_recall < 0.01 && r.median_precision >= 0 && r.p_precision < 0.05;
    two.detail = "median F1 " + fmt(r.median_f1) + " (p " + fmt(r.p_f1) + "), recall " + fmt(r.median_recall) + " (p " + fmt(r.p_recall) +
                 "), precision " + fmt(r.median_precision) + " (p " + fmt(r.p_precision) + ")";
    return {one, two};
}

// ---- 3: grouping below every merge height changes nothing ----

Outcome degeneracy() {
    Outcome out;
    std::size_t agree = 0;
    for (std::uint64_t inst = 0; inst < 20; ++inst) {
        SyntheticDesign d;
        d.n_cells = 60 + 5 * inst;
        d.n_genes = 40;
        d.blocks = {{6, 0.8, "+-", true, 1.5}, {5, 0.7, "+", false, 1.0}};
        d.seed = 300 + inst;
        const auto data = synth_dataset(d);
        PipelineConfig cfg;
        cfg.inner_folds = 5;
        cfg.folds = 5;
        cfg.path_length = 30;
        cfg.seed = inst;
        const auto forest = build_forest(data.x, cfg.split());
        cfg.grid = {forest.min_height() / 2};
        auto report = cv_threshold_sweep(forest, data.y, cfg);
        const auto grouped = fit_final(forest, data.y, report.best_c, cfg, report);
        const auto ungrouped = fit_ungrouped(forest.std, data.y, cfg);
        const bool same_cv = report.auc[0] == auc(data.y, cv_predictions_ungrouped(forest.std, data.y, cfg));
        const bool same_pred = predict(grouped, data.x) == predict(ungrouped, data.x);
        const bool same_sel = expand_selection(grouped) == selection(ungrouped);
        agree += same_cv && same_pred && same_sel;
    }
    out.pass = agree == 20;
    out.detail = std::to_string(agree) + "/20 instances bit-identical (CV AUC, predictions, selection flags)";
    return out;
}

// ---- 4: dendrogram and signed k-means against naive references ----

std::set<std::size_t> leaves_under(const Dendrogram& d, std::size_t node) {
    const auto m = d.leaves.size();
    if (node < m) {
        return {node};
    }
    auto a = leaves_under(d, d.merges[node - m].left);
    auto b = leaves_under(d, d.merges[node - m].right);
    a.insert(b.begin(), b.end());
    return a;
}

bool dendrogram_matches(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const auto p = static_cast<Eigen::Index>(std::uniform_int_distribution<int>(2, 8)(rng));
    Eigen::MatrixXd raw = oracle::gaussian(20, 12, seed);
    for (Eigen::Index j = 1; j < raw.cols(); ++j) {
        raw.col(j) += std::uniform_real_distribution<double>(-1.5, 1.5)(rng) * raw.col(j - 1);
    }
    const auto s = standardize(matrix(raw));
    std::vector<std::size_t> all(12);
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::shuffle(all.begin(), all.end(), rng);
    std::vector<std::size_t> genes(all.begin(), all.begin() + p);
    std::vector<int> signs;
    for (Eigen::Index i = 0; i < p; ++i) {
        signs.push_back(std::bernoulli_distribution(0.5)(rng) ? 1 : -1);
    }
    Eigen::MatrixXd diss(p, p);
    for (Eigen::Index i = 0; i < p; ++i) {
        for (Eigen::Index j = 0; j < p; ++j) {
            diss(i, j) = 1 - oracle::correlation(oracle::column(raw, static_cast<Eigen::Index>(genes[static_cast<std::size_t>(i)]), signs[static_cast<std::size_t>(i)]),
                                                 oracle::column(raw, static_cast<Eigen::Index>(genes[static_cast<std::size_t>(j)]), signs[static_cast<std::size_t>(j)]));
        }
    }
    const auto expect = oracle::average_linkage(diss);
    const auto d = build_dendrogram(s, genes, signs);
    if (d.merges.size() != expect.size()) {
        return false;
    }
    for (std::size_t k = 0; k < expect.size(); ++k) {
        const auto a = leaves_under(d, d.merges[k].left), b = leaves_under(d, d.merges[k].right);
        const bool same = (a == expect[k].a && b == expect[k].b) || (a == expect[k].b && b == expect[k].a);
        if (!same || std::abs(d.merges[k].height - expect[k].height) > 1e-8) {
            return false;
        }
    }
    return true;
}

bool kmeans_recovers(std::uint64_t seed) {
    const Eigen::Index n = 30;
    const std::size_t k = 3, per = 8;
    Eigen::MatrixXd base = oracle::gaussian(n, static_cast<Eigen::Index>(k), seed);
    base.rowwise() -= base.colwise().mean();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(base);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, static_cast<Eigen::Index>(k));
    std::mt19937_64 rng(seed + 7);
    Eigen::MatrixXd genes(n, static_cast<Eigen::Index>(k * per));
    std::vector<std::size_t> block;
    std::vector<int> sign;
    for (std::size_t c = 0; c < k * per; ++c) {
        block.push_back(c % k);
        sign.push_back(std::bernoulli_distribution(0.5)(rng) ? 1 : -1);
        genes.col(static_cast<Eigen::Index>(c)) = sign.back() * std::sqrt(static_cast<double>(n - 1)) * q.col(static_cast<Eigen::Index>(c % k));
    }
    const auto init = kmeans_init(genes, k, seed);
    const auto res = modified_kmeans(genes, init, k);
    for (std::size_t i = 0; i < block.size(); ++i) {
        for (std::size_t j = 0; j < block.size(); ++j) {
            if ((res.membership[i] == res.membership[j]) != (block[i] == block[j])) {
                return false;
            }
            if (block[i] == block[j] && res.signs[i] * res.signs[j] != sign[i] * sign[j]) {
                return false;
            }
        }
    }
    return true;
}

Outcome clustering_oracle() {
    std::size_t dendro = 0, km = 0;
    for (std::uint64_t s = 0; s < 200; ++s) {
        dendro += dendrogram_matches(1000 + s);
    }
    for (std::uint64_t s = 0; s < 50; ++s) {
        km += kmeans_recovers(5000 + s);
    }
    return {dendro == 200 && km == 50, std::to_string(dendro) + "/200 dendrograms match the naive oracle; " + std::to_string(km) +
                                           "/50 planted signed blocks recovered"};
}

// ---- 5: solver optimality ----

struct Problem {
    Eigen::MatrixXd x;
    std::vector<int> y;
};

Problem logistic_problem(Eigen::Index n, Eigen::Index p, std::uint64_t seed, double signal) {
    Problem pr;
    pr.x = oracle::gaussian(n, p, seed);
    std::mt19937_64 rng(seed * 31 + 1);
    std::uniform_real_distribution<double> u(0, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        double eta = 0.2;
        for (Eigen::Index j = 0; j < std::min<Eigen::Index>(p, 3); ++j) {
            eta += signal * (j % 2 ? -1.0 : 1.0) * pr.x(i, j);
        }
        pr.y.push_back(u(rng) < 1 / (1 + std::exp(-eta)) ? 1 : 0);
    }
    pr.y[0] = 1;
    pr.y[1] = 0;
    return pr;
}

Outcome solver_oracle() {
    std::mt19937_64 rng(77);
    std::size_t kkt_ok = 0, mle_ok = 0, null_ok = 0;
    double worst = 0;
    for (std::uint64_t inst = 0; inst < 100; ++inst) {
        const auto n = std::uniform_int_distribution<Eigen::Index>(30, 90)(rng);
        const auto p = std::uniform_int_distribution<Eigen::Index>(2, 40)(rng);
        const double alpha = std::array<double, 3>{0.5, 1.0, 0.2}[inst % 3];
        const auto pr = logistic_problem(n, p, 200 + inst, 1.0);
        const double lmax = lambda_max(pr.x, pr.y, alpha);
        const double lambda = lmax * std::uniform_real_distribution<double>(0.02, 0.9)(rng);
        EnetOptions opt;
        opt.alpha = alpha;
        const auto f = fit(pr.x, pr.y, lambda, opt);
        const double v = oracle::kkt_violation(pr.x, pr.y, f.intercept, f.coefficients, f.lambda, alpha);
        worst = std::max(worst, v);
        kkt_ok += f.converged && v <= 1e-6;

        const auto at_max = fit(pr.x, pr.y, lmax * (1 + (inst % 2)), opt);
        null_ok += std::all_of(at_max.coefficients.begin(), at_max.coefficients.end(), [](double b) { return b == 0.0; });
    }
    for (std::uint64_t inst = 0; inst < 20; ++inst) {
        const auto pr = logistic_problem(50, 3, 900 + inst, 0.6);
        const auto [b0, b] = oracle::logistic_mle(pr.x, pr.y);
        const auto f = fit(pr.x, pr.y, 1e-8);
        bool ok = std::abs(f.intercept - b0) <= 1e-3;
        for (Eigen::Index j = 0; j < 3; ++j) {
            ok = ok && std::abs(f.coefficients[static_cast<std::size_t>(j)] - b[j]) <= 1e-3;
        }
        mle_ok += ok;
    }
    return {kkt_ok == 100 && mle_ok == 20 && null_ok == 100,
            std::to_string(kkt_ok) + "/100 KKT (worst " + fmt(worst) + "); " + std::to_string(mle_ok) + "/20 match the logistic MLE; " +
                std::to_string(null_ok) + "/100 exact zeros at lambda_max"};
}

// ---- 6 and 7: AUC and Wilcoxon against enumeration ----

Outcome auc_oracle() {
    std::mt19937_64 rng(6);
    std::size_t exact = 0;
    for (int inst = 0; inst < 500; ++inst) {
        const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 30)(rng);
        const int levels = std::uniform_int_distribution<int>(1, 8)(rng);
        std::vector<int> y(n);
        std::vector<double> q(n);
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = std::bernoulli_distribution(0.4)(rng) ? 1 : 0;
            q[i] = std::uniform_int_distribution<int>(0, levels)(rng) / static_cast<double>(levels);
        }
        y[0] = 1;
        y[1] = 0;
        exact += auc(y, q) == oracle::auc(y, q);
    }
    return {exact == 500, std::to_string(exact) + "/500 instances equal pair counting exactly"};
}

Outcome wilcoxon_oracle() {
    std::mt19937_64 rng(7);
    std::size_t exact = 0;
    for (int inst = 0; inst < 100; ++inst) {
        const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 10)(rng);
        std::vector<double> d;
        while (d.size() < n) {
            const int v = std::uniform_int_distribution<int>(-6, 6)(rng);
            if (v != 0) {
                d.push_back(0.25 * v);
            }
        }
        exact += wilcoxon_exact(d) == oracle::wilcoxon_enumerate(d);
    }
    return {exact == 100, std::to_string(exact) + "/100 vectors equal sign enumeration exactly"};
}

// ---- 8: x1 = -x2 = x3 ----

Outcome representative_identity() {
    Eigen::MatrixXd raw = oracle::gaussian(30, 23, 8);
    raw.col(1) = -raw.col(0);
    raw.col(2) = raw.col(0);
    const auto x = matrix(raw);
    PipelineConfig cfg;
    const auto forest = build_forest(x, cfg.split());
    bool grouped = true, identical = true;
    for (double c : {1e-12, 1e-6, 1e-3, 0.05, 0.3, 1.0, 2.0}) {
        const auto rule = forest.cut(c);
        std::size_t home = rule.n_groups();
        for (std::size_t g = 0; g < rule.n_groups(); ++g) {
            if (std::find(rule.groups[g].begin(), rule.groups[g].end(), std::size_t{0}) != rule.groups[g].end()) {
                home = g;
            }
        }
        const auto& members = rule.groups.at(home);
        for (std::size_t gene : {1, 2}) {
            grouped = grouped && std::find(members.begin(), members.end(), gene) != members.end();
        }
        if (members.size() == 3) {
            const Eigen::MatrixXd z = representatives(rule, x);
            const Eigen::VectorXd first = forest.std.values.col(0);
            identical = identical && z.col(static_cast<Eigen::Index>(home)) == first;
        }
    }
    return {grouped && identical, std::string(grouped ? "grouped at every c > 0" : "NOT grouped at some c > 0") + "; representative " +
                                      (identical ? "equals" : "differs from") + " the first standardized gene"};
}

// ---- 9: reruns are byte-identical across thread counts ----

int run_cli(std::vector<std::string> args) {
    std::ostringstream sink;
    auto* old = std::cerr.rdbuf(sink.rdbuf());
    const int code = cli::dispatch(std::move(args));
    std::cerr.rdbuf(old);
    return code;
}

Outcome determinism() {
    const auto dir = testing_support::scratch_dir("acceptance_determinism");
    SyntheticDesign d;
    d.n_cells = 80;
    d.n_genes = 60;
    d.blocks = {{8, 0.95, "+-", true, 1.5}, {8, 0.95, "+", false, 1.0}};
    d.seed = 9;
    const auto data = synth_dataset(d);
    write_matrix((dir / "x.csv").string(), data.x);
    write_labels((dir / "y.csv").string(), data.x.cell_ids(), data.y);
    std::ofstream(dir / "design.json") << design_to_json(d).dump();

    std::vector<std::string> files;
    bool ok = true;
    for (const char* threads : {"1", "4", "1"}) {
        const std::string tag = "run";
        ok = ok && run_cli({"-q", "--threads", threads, "fit", "--input", (dir / "x.csv").string(), "--labels", (dir / "y.csv").string(), "--seed",
                            "11", "--out", (dir / (tag + "_model.json")).string()}) == 0;
        ok = ok && run_cli({"-q", "--threads", threads, "bench", "--design", (dir / "design.json").string(), "--reps", "4", "--folds", "5",
                            "--inner-folds", "5", "--seed", "12", "--out", (dir / (tag + "_bench.csv")).string()}) == 0;
        std::string all;
        for (const char* suffix : {"_model.json", "_model.config.json", "_bench.csv", "_bench.summary.json", "_bench.config.json"}) {
            all += testing_support::slurp(dir / (tag + suffix)) + '\x1f';
        }
        files.push_back(all);
    }
    const bool same = ok && files[0] == files[1] && files[1] == files[2] && files[0].size() > 100;
    return {same, ok ? (same ? "fit and bench outputs byte-identical for --threads 1, 4, 1" : "outputs differ between runs") : "a CLI run failed"};
}

}

int main(int argc, char** argv) {
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) {
        wanted.insert(std::atoi(argv[i]));
    }
    if (wanted.empty()) {
        wanted = {1, 2, 3, 4, 5, 6, 7, 8, 9};
    }
    set_verbosity(0);
    std::map<int, Outcome> results;
    auto run = [&](int k, const std::function<Outcome()>& f) {
        if (wanted.count(k)) {
            try {
                results[k] = f();
            } catch (const std::exception& e) {
                results[k] = {false, std::string("exception: ") + e.what()};
            }
            std::cout << "criterion " << k << ": " << (results[k].pass ? "PASS" : "FAIL") << "  " << results[k].detail << std::endl;
        }
    };
    run(3, degeneracy);
    run(4, clustering_oracle);
    run(5, solver_oracle);
    run(6, auc_oracle);
    run(7, wilcoxon_oracle);
    run(8, representative_identity);
    run(9, determinism);
    if (wanted.count(1) || wanted.count(2)) {
        std::pair<Outcome, Outcome> bench;
        try {
            bench = benchmark_direction();
        } catch (const std::exception& e) {
            bench.first = bench.second = {false, std::string("exception: ") + e.what()};
        }
        for (int k : {1, 2}) {
            if (wanted.count(k)) {
                results[k] = k == 1 ? bench.first : bench.second;
                std::cout << "criterion " << k << ": " << (results[k].pass ? "PASS" : "FAIL") << "  " << results[k].detail << std::endl;
            }
        }
    }
    const auto failed = std::count_if(results.begin(), results.end(), [](const auto& kv) { return !kv.second.pass; });
    std::cout << results.size() - static_cast<std::size_t>(failed) << "/" << results.size() << " criteria passed" << std::endl;
    return failed == 0 ? 0 : 1;
}
