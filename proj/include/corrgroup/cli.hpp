#ifndef CORRGROUP_CLI_HPP
#define CORRGROUP_CLI_HPP

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "csv.hpp"
#include "data_model.hpp"
#include "diagnostics.hpp"
#include "error.hpp"
#include "hcluster.hpp"
#include "parallel.hpp"
#include "pipeline.hpp"
#include "simbench.hpp"

#ifndef CORRGROUP_VERSION
#define CORRGROUP_VERSION "0.0.0"
#endif

/**
 * @file cli.hpp
 * @brief Command-line front end: `group`, `fit`, `predict`, `simulate`, `evaluate` and `bench`.
 *
 * Every subcommand writes its resolved configuration (seed included, thread count excluded)
 * next to its outputs. Exit status is 0 on success, 1 for invalid input or usage and 2 for
 * failures during computation.
 */

namespace corrgroup::cli {

namespace fs = std::filesystem;

inline void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    }
    out << text;
    if (!out) {
        throw std::runtime_error("failed writing '" + path.string() + "'");
    }
}

inline void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

inline nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError("cannot open '" + path.string() + "' for reading");
    }
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

/// `dir/model.json` -> `dir/model.<suffix>.json`
inline fs::path sibling(const fs::path& out, const std::string& suffix) {
    auto p = out;
    p.replace_extension();
    p += "." + suffix + ".json";
    return p;
}

inline std::vector<double> parse_grid(const std::string& text) {
    if (text == "default") {
        return default_grid();
    }
    std::vector<double> grid;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        auto v = csv::parse_double(item);
        if (!v || *v < 0) {
            throw InvalidArgument("--grid: '" + item + "' is not a non-negative number");
        }
        grid.push_back(*v);
    }
    if (grid.empty()) {
        throw InvalidArgument("--grid: empty threshold list");
    }
    return grid;
}

inline Orientation parse_orientation(const std::string& text) {
    if (text == "genes-in-rows") {
        return Orientation::genes_in_rows;
    }
    if (text == "genes-in-columns") {
        return Orientation::genes_in_columns;
    }
    throw InvalidArgument("--orientation must be genes-in-rows or genes-in-columns");
}

struct SeedOption {
    std::uint64_t value = 0;
    bool given = false;

    std::uint64_t resolve() {
        if (!given) {
            std::random_device rd;
            value = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
            given = true;
            info("no --seed given; using " + std::to_string(value));
        }
        return value;
    }
};

struct Options {
    std::string input, labels, out, model, design, truth, fits, partition_out;
    std::string grid = "default";
    std::string orientation = "genes-in-rows";
    std::string method = "grouped";
    double threshold = 0;
    double alpha = 0.5;
    double jitter_sd = 0.1;
    double min_cor = 0.9;
    std::size_t folds = 10;
    std::size_t inner_folds = 10;
    std::size_t max_subset = 1000;
    std::size_t clusters = 10;
    std::size_t reps = 100;
    bool post_hoc = false;
    int threads = default_threads();
    SeedOption seed;
};

inline PipelineConfig pipeline_config(const Options& o) {
    PipelineConfig cfg;
    cfg.grid = parse_grid(o.grid);
    cfg.folds = o.folds;
    cfg.inner_folds = o.inner_folds;
    cfg.alpha = o.alpha;
    cfg.max_subset = o.max_subset;
    cfg.K = o.clusters;
    cfg.seed = o.seed.value;
    cfg.threads = o.threads;
    if (!(cfg.alpha > 0 && cfg.alpha <= 1)) {
        throw InvalidArgument("--alpha must lie in (0, 1]");
    }
    if (cfg.folds < 2 || cfg.inner_folds < 2) {
        throw InvalidArgument("--folds and --inner-folds must be at least 2");
    }
    if (cfg.K < 2) {
        throw InvalidArgument("--clusters must be at least 2");
    }
    if (cfg.max_subset < 2) {
        throw InvalidArgument("--max-subset must be at least 2");
    }
    return cfg;
}

inline nlohmann::json pipeline_config_json(const PipelineConfig& c) {
    return {{"grid", c.grid},   {"folds", c.folds},         {"inner_folds", c.inner_folds}, {"path_length", c.path_length},
            {"alpha", c.alpha}, {"tol", c.tol},             {"max_iter", c.max_iter},       {"clusters", c.K},
            {"max_subset", c.max_subset}, {"kmeans_max_iter", c.kmeans_max_iter}, {"seed", c.seed}};
}

inline nlohmann::json config_header(const std::string& command) { return {{"command", command}, {"version", CORRGROUP_VERSION}}; }

inline void run_group(Options& o) {
    o.seed.resolve();
    auto cfg = pipeline_config(o);
    if (!(o.threshold >= 0)) {
        throw InvalidArgument("--threshold must be >= 0");
    }
    const auto x = load_matrix(o.input, parse_orientation(o.orientation));
    info("loaded " + std::to_string(x.n_cells()) + " cells x " + std::to_string(x.n_genes()) + " genes");
    const auto forest = build_forest(x, cfg.split(), cfg.threads);
    const auto rule = forest.cut(o.threshold);
    write_json(o.out, rule_to_json(rule));
    if (!o.partition_out.empty()) {
        write_json(o.partition_out, partition_to_json(forest.partition, x.gene_ids()));
    }
    auto conf = config_header("group");
    conf["input"] = o.input;
    conf["orientation"] = o.orientation;
    conf["threshold"] = o.threshold;
    conf["clusters"] = cfg.K;
    conf["max_subset"] = cfg.max_subset;
    conf["seed"] = cfg.seed;
    conf["out"] = o.out;
    write_json(sibling(o.out, "config"), conf);
    info(std::to_string(rule.n_groups()) + " groups at threshold " + csv::format_double(o.threshold));
}

inline void run_fit(Options& o) {
    o.seed.resolve();
    auto cfg = pipeline_config(o);
    const auto x = load_matrix(o.input, parse_orientation(o.orientation));
    const auto y = load_labels(o.labels, x.cell_ids());
    info("loaded " + std::to_string(x.n_cells()) + " cells x " + std::to_string(x.n_genes()) + " genes");
    if (o.method == "grouped") {
        auto model = fit_grouped(x, y, cfg);
        write_json(o.out, model_to_json(model));
        info("best threshold " + csv::format_double(model.report.best_c) + ", " + std::to_string(model.fit.nonzero()) + " of " +
             std::to_string(model.rule.n_groups()) + " groups selected");
    } else if (o.method == "ungrouped") {
        auto model = fit_ungrouped(x, y, cfg);
        write_json(o.out, model_to_json(model));
        info(std::to_string(model.fit.nonzero()) + " genes selected");
    } else {
        throw InvalidArgument("--method must be grouped or ungrouped");
    }
    auto conf = config_header("fit");
    conf["input"] = o.input;
    conf["labels"] = o.labels;
    conf["orientation"] = o.orientation;
    conf["method"] = o.method;
    conf["pipeline"] = pipeline_config_json(cfg);
    conf["out"] = o.out;
    write_json(sibling(o.out, "config"), conf);
}

/// Grouped or ungrouped model, depending on the file's format tag.
struct AnyModel {
    std::string method;
    GroupedModel grouped;
    UngroupedModel ungrouped;

    std::vector<double> predict(const ExpressionMatrix& x) const {
        return method == "grouped" ? corrgroup::predict(grouped, x) : corrgroup::predict(ungrouped, x);
    }

    std::vector<bool> selection() const { return method == "grouped" ? expand_selection(grouped) : corrgroup::selection(ungrouped); }

    const std::vector<std::string>& gene_order() const { return method == "grouped" ? grouped.rule.gene_order : ungrouped.gene_order; }
};

inline AnyModel load_model(const fs::path& path) {
    auto j = read_json(path);
    AnyModel m;
    const auto format = j.is_object() ? j.value("format", std::string{}) : std::string{};
    if (format == "corrgroup.grouped_model") {
        m.method = "grouped";
        m.grouped = model_from_json(j);
    } else if (format == "corrgroup.ungrouped_model") {
        m.method = "ungrouped";
        m.ungrouped = ungrouped_model_from_json(j);
    } else {
        throw ValidationError("'" + path.string() + "' is not a corrgroup model file");
    }
    return m;
}

inline void write_probabilities(std::ostream& os, const std::vector<std::string>& cells, const std::vector<double>& q) {
    csv::write_row(os, {"cell_id", "probability"}, ',');
    for (std::size_t i = 0; i < cells.size(); ++i) {
        csv::write_row(os, {cells[i], csv::format_double(q[i])}, ',');
    }
}

inline void run_predict(Options& o) {
    const auto model = load_model(o.model);
    const auto x = load_matrix(o.input, parse_orientation(o.orientation));
    const auto q = model.predict(x);
    std::ostringstream os;
    write_probabilities(os, x.cell_ids(), q);
    write_text(o.out, os.str());
    auto conf = config_header("predict");
    conf["model"] = o.model;
    conf["input"] = o.input;
    conf["orientation"] = o.orientation;
    conf["out"] = o.out;
    write_json(sibling(o.out, "config"), conf);
}

inline std::string replicate_name(std::size_t r, std::size_t reps) {
    auto s = std::to_string(r);
    return "rep_" + std::string(std::max<std::size_t>(3, std::to_string(reps).size()) - s.size(), '0') + s;
}

inline void run_simulate(Options& o) {
    const auto seed = o.seed.resolve();
    const auto design = design_from_json(read_json(o.design));
    const fs::path dir = o.out;
    const auto data = synth_dataset(design);
    BlueprintOptions bopt;
    bopt.min_cor = o.min_cor;
    bopt.alpha = o.alpha;
    bopt.folds = o.inner_folds;
    bopt.seed = derive_seed(seed, {10});
    bopt.post_hoc = o.post_hoc;
    bopt.threads = o.threads;
    const auto blueprint = make_blueprint(data.x, data.y, bopt);

    fs::create_directories(dir);
    write_matrix((dir / "expression.csv").string(), data.x);
    write_labels((dir / "source_labels.csv").string(), data.x.cell_ids(), data.y);
    write_json(dir / "blueprint.json", blueprint_to_json(blueprint));
    for (std::size_t r = 1; r <= o.reps; ++r) {
        const auto rs = derive_seed(seed, {20, r - 1});
        const auto truth = jitter(blueprint, o.jitter_sd, derive_seed(rs, {1}));
        const auto ph = simulate_phenotypes(data.x, truth, derive_seed(rs, {2, 0}));
        const auto sub = dir / replicate_name(r, o.reps);
        fs::create_directories(sub);
        write_json(sub / "truth.json", blueprint_to_json(truth));
        write_labels((sub / "labels.csv").string(), data.x.cell_ids(), ph.y);
        std::ostringstream os;
        write_probabilities(os, data.x.cell_ids(), ph.q);
        write_text(sub / "probabilities.csv", os.str());
    }
    auto conf = config_header("simulate");
    conf["design"] = design_to_json(design);
    conf["reps"] = o.reps;
    conf["jitter_sd"] = o.jitter_sd;
    conf["min_cor"] = o.min_cor;
    conf["alpha"] = o.alpha;
    conf["folds"] = o.inner_folds;
    conf["post_hoc"] = o.post_hoc;
    conf["seed"] = seed;
    write_json(dir / "config.json", conf);
    info("wrote " + std::to_string(o.reps) + " replicates to " + dir.string());
}

/**
 * Metrics for one model file against a truth blueprint on expression matrix `x`.
 */
inline MetricsRecord evaluate_model(const AnyModel& model, const BlueprintModel& truth, const ExpressionMatrix& x) {
    const auto& order = model.gene_order();
    std::vector<std::string> a = order, b = truth.gene_ids;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a != b) {
        throw ValidationError("model and truth refer to different gene universes");
    }
    std::unordered_map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < order.size(); ++i) {
        pos.emplace(order[i], i);
    }
    std::vector<double> beta(order.size(), 0.0);
    for (std::size_t i = 0; i < truth.gene_ids.size(); ++i) {
        beta[pos.at(truth.gene_ids[i])] = truth.beta[i];
    }

    std::vector<double> q_true(x.n_cells());
    for (std::size_t c = 0; c < x.n_cells(); ++c) {
        double eta = truth.intercept;
        for (std::size_t i = 0; i < truth.gene_ids.size(); ++i) {
            if (truth.beta[i] == 0.0) {
                continue;
            }
            auto g = x.find_gene(truth.gene_ids[i]);
            if (g < 0) {
                throw MissingGenes("input lacks gene '" + truth.gene_ids[i] + "' of the truth model");
            }
            eta += truth.beta[i] * x.gene(static_cast<std::size_t>(g))[c];
        }
        q_true[c] = logistic(eta);
    }
    return compute_metrics(beta, model.selection(), q_true, model.predict(x), model.method);
}

inline void run_evaluate(Options& o) {
    const auto truth = blueprint_from_json(read_json(o.truth));
    const auto x = load_matrix(o.input, parse_orientation(o.orientation));
    if (!fs::is_directory(o.fits)) {
        throw ValidationError("--fits '" + o.fits + "' is not a directory");
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(o.fits)) {
        const auto name = entry.path().filename().string();
        if (entry.is_regular_file() && entry.path().extension() == ".json" && name != "config.json" && !name.ends_with(".config.json")) {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());

    std::ostringstream os;
    csv::write_row(os, {"replicate", "method", "mse", "precision", "recall", "f1"}, ',');
    for (const auto& f : files) {
        const auto m = evaluate_model(load_model(f), truth, x);
        if (m.precision_undefined) {
            warn(f.filename().string() + ": no genes selected; precision recorded as 0");
        }
        csv::write_row(os, {f.stem().string(), m.method, csv::format_double(m.mse), csv::format_double(m.precision), csv::format_double(m.recall),
                            csv::format_double(m.f1)},
                       ',');
    }
    write_text(o.out, os.str());
    auto conf = config_header("evaluate");
    conf["truth"] = o.truth;
    conf["input"] = o.input;
    conf["orientation"] = o.orientation;
    conf["fits"] = o.fits;
    conf["out"] = o.out;
    write_json(sibling(o.out, "config"), conf);
}

inline void run_bench(Options& o) {
    const auto seed = o.seed.resolve();
    const auto design = design_from_json(read_json(o.design));
    BenchmarkConfig cfg;
    cfg.reps = o.reps;
    cfg.sd_fraction = o.jitter_sd;
    cfg.seed = seed;
    cfg.min_cor = o.min_cor;
    cfg.post_hoc = o.post_hoc;
    cfg.pipeline = pipeline_config(o);
    cfg.threads = o.threads;
    if (cfg.reps == 0) {
        throw InvalidArgument("--reps must be positive");
    }
    const auto result = run_benchmark(design, cfg);

    std::ostringstream os;
    write_metrics(os, benchmark_rows(result));
    write_text(o.out, os.str());
    write_json(sibling(o.out, "summary"), benchmark_summary(result));
    auto conf = config_header("bench");
    conf["design"] = design_to_json(design);
    conf["reps"] = cfg.reps;
    conf["jitter_sd"] = cfg.sd_fraction;
    conf["min_cor"] = cfg.min_cor;
    conf["post_hoc"] = cfg.post_hoc;
    conf["seed"] = seed;
    conf["pipeline"] = pipeline_config_json(cfg.pipeline);
    conf["out"] = o.out;
    write_json(sibling(o.out, "config"), conf);
}

/**
 * Parse `args` (without the program name) and run the chosen subcommand.
 */
inline int dispatch(std::vector<std::string> args) {
    CLI::App app{"Correlated gene grouping with elastic-net phenotype prediction", "corrgroup"};
    app.set_version_flag("--version", std::string(CORRGROUP_VERSION));
    app.require_subcommand(1);
    app.fallthrough();
    Options o;
    bool verbose = false, quiet = false;
    app.add_flag("-v,--verbose", verbose, "Report progress on standard error");
    app.add_flag("-q,--quiet", quiet, "Suppress warnings");
    app.add_option("--threads", o.threads, "Worker threads (default: CORRGROUP_THREADS or all cores)")->check(CLI::PositiveNumber);

    auto add_seed = [&](CLI::App* sub) {
        sub->add_option_function<std::uint64_t>(
            "--seed",
            [&](const std::uint64_t& v) {
                o.seed.value = v;
                o.seed.given = true;
            },
            "Master random seed (generated and recorded when absent)");
    };
    auto add_orientation = [&](CLI::App* sub) {
        sub->add_option("--orientation", o.orientation, "genes-in-rows (default) or genes-in-columns")
            ->check(CLI::IsMember({"genes-in-rows", "genes-in-columns"}));
    };
    auto add_pipeline = [&](CLI::App* sub) {
        sub->add_option("--grid", o.grid, "Threshold grid: 'default' or a comma-separated list");
        sub->add_option("--folds", o.folds, "Cross-validation folds for the threshold sweep");
        sub->add_option("--inner-folds", o.inner_folds, "Cross-validation folds for lambda");
        sub->add_option("--alpha", o.alpha, "Elastic-net mixing parameter in (0, 1]");
        sub->add_option("--max-subset", o.max_subset, "Largest gene subset given to hierarchical clustering");
        sub->add_option("--clusters", o.clusters, "K for each pre-grouping split");
    };

    auto* group = app.add_subcommand("group", "Group correlated genes at a fixed threshold");
    group->add_option("--input", o.input, "Expression matrix (CSV/TSV)")->required();
    group->add_option("--threshold", o.threshold, "Dendrogram cut threshold c")->required();
    group->add_option("--out", o.out, "Grouping rule JSON")->required();
    group->add_option("--partition-out", o.partition_out, "Also write the pre-grouping partition");
    group->add_option("--max-subset", o.max_subset, "Largest gene subset given to hierarchical clustering");
    group->add_option("--clusters", o.clusters, "K for each pre-grouping split");
    add_seed(group);
    add_orientation(group);

    auto* fit = app.add_subcommand("fit", "Select the threshold by cross-validated AUC and fit the grouped model");
    fit->add_option("--input", o.input, "Expression matrix (CSV/TSV)")->required();
    fit->add_option("--labels", o.labels, "Binary labels: cell_id,label")->required();
    fit->add_option("--out", o.out, "Model JSON")->required();
    fit->add_option("--method", o.method, "grouped (default) or ungrouped")->check(CLI::IsMember({"grouped", "ungrouped"}));
    add_pipeline(fit);
    add_seed(fit);
    add_orientation(fit);

    auto* pred = app.add_subcommand("predict", "Predict phenotype probabilities for new cells");
    pred->add_option("--model", o.model, "Model JSON from fit")->required();
    pred->add_option("--input", o.input, "Expression matrix (CSV/TSV)")->required();
    pred->add_option("--out", o.out, "Output CSV: cell_id,probability")->required();
    add_orientation(pred);

    auto* sim = app.add_subcommand("simulate", "Generate synthetic data, a blueprint and jittered phenotype replicates");
    sim->add_option("--design", o.design, "Synthetic design JSON")->required();
    sim->add_option("--out", o.out, "Output directory")->required();
    sim->add_option("--reps", o.reps, "Number of replicates");
    sim->add_option("--jitter-sd", o.jitter_sd, "Jitter sd as a fraction of the coefficient sd");
    sim->add_option("--min-cor", o.min_cor, "Blueprint correlation filter");
    sim->add_option("--alpha", o.alpha, "Blueprint elastic-net mixing parameter");
    sim->add_option("--folds", o.inner_folds, "Blueprint cross-validation folds");
    sim->add_flag("--post-hoc", o.post_hoc, "Zero filtered coefficients instead of refitting");
    add_seed(sim);

    auto* eval = app.add_subcommand("evaluate", "Score fitted models against a truth blueprint");
    eval->add_option("--truth", o.truth, "Blueprint JSON (e.g. rep_001/truth.json)")->required();
    eval->add_option("--input", o.input, "Expression matrix the truth applies to")->required();
    eval->add_option("--fits", o.fits, "Directory of model JSON files")->required();
    eval->add_option("--out", o.out, "Metrics CSV")->required();
    add_orientation(eval);

    auto* bench = app.add_subcommand("bench", "Paired grouped vs. ungrouped benchmark on a synthetic design");
    bench->add_option("--design", o.design, "Synthetic design JSON")->required();
    bench->add_option("--out", o.out, "Results CSV")->required();
    bench->add_option("--reps", o.reps, "Number of replicates");
    bench->add_option("--jitter-sd", o.jitter_sd, "Jitter sd as a fraction of the coefficient sd");
    bench->add_option("--min-cor", o.min_cor, "Blueprint correlation filter");
    bench->add_flag("--post-hoc", o.post_hoc, "Zero filtered blueprint coefficients instead of refitting");
    add_pipeline(bench);
    add_seed(bench);

    std::reverse(args.begin(), args.end());
    try {
        app.parse(args);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    const int previous = verbosity();
    if (quiet) {
        set_verbosity(0);
    } else if (verbose) {
        set_verbosity(2);
    }
    int code = 0;
    try {
        if (group->parsed()) {
            run_group(o);
        } else if (fit->parsed()) {
            run_fit(o);
        } else if (pred->parsed()) {
            run_predict(o);
        } else if (sim->parsed()) {
            run_simulate(o);
        } else if (eval->parsed()) {
            run_evaluate(o);
        } else if (bench->parsed()) {
            run_bench(o);
        }
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        code = 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        code = 2;
    }
    set_verbosity(previous);
    return code;
}

inline int dispatch(int argc, const char* const* argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) {
        args.emplace_back(argv[i]);
    }
    return dispatch(std::move(args));
}

}

#endif
