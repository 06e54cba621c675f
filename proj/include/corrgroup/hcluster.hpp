#ifndef CORRGROUP_HCLUSTER_HPP
#define CORRGROUP_HCLUSTER_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "data_model.hpp"
#include "error.hpp"
#include "parallel.hpp"
#include "precluster.hpp"

/**
 * @file hcluster.hpp
 * @brief Average-linkage dendrograms within pre-grouped subsets, threshold cuts,
 * grouping rules and signed-average group representatives.
 */

namespace corrgroup {

/**
 * @brief Binary merge tree over a subset of genes.
 *
 * Node ids follow the usual convention: `0..m-1` are the leaves (positions in `leaves`),
 * and merge `k` creates node `m + k`.
 */
struct Dendrogram {
    struct Merge {
        std::size_t left;
        std::size_t right;
        double height;
        std::size_t size;
    };

    std::vector<std::size_t> leaves; // global gene indices
    std::vector<Merge> merges;

    double max_height() const {
        double h = 0;
        for (const auto& m : merges) {
            h = std::max(h, m.height);
        }
        return h;
    }
};

/**
 * Pairwise dissimilarity `1 - cor(s_i x_i, s_j x_j)` between the sign-adjusted columns
 * of `x` listed in `genes`.
 */
inline Eigen::MatrixXd signed_dissimilarity(const StandardizedMatrix& x, std::span<const std::size_t> genes, std::span<const int> signs) {
    std::vector<int> sg(signs.begin(), signs.end());
    Eigen::MatrixXd cols = detail::gather_genes(x, genes, sg);
    std::vector<bool> ok;
    Eigen::MatrixXd basis = detail::correlation_basis(cols, ok);
    for (std::size_t i = 0; i < ok.size(); ++i) {
        if (!ok[i]) {
            throw UndefinedCorrelation("signed_dissimilarity: gene '" + x.gene_ids[genes[i]] + "' is constant");
        }
    }
    Eigen::MatrixXd d = basis.transpose() * basis;
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
        for (Eigen::Index j = 0; j < i; ++j) {
            double r = std::clamp(0.5 * (d(i, j) + d(j, i)), -1.0, 1.0);
            d(i, j) = d(j, i) = 1.0 - r;
        }
        d(i, i) = 0;
    }
    return d;
}

/**
 * Agglomerative clustering with average linkage on a precomputed dissimilarity matrix.
 * At each step the globally closest pair of clusters is merged (ties: lowest slot indices).
 * Row minima are cached; only rows whose cached neighbour took part in a merge are rescanned,
 * which is valid because an average-linkage distance to a merged cluster is never below the
 * smaller of the two distances it replaces.
 */
inline Dendrogram average_linkage(const Eigen::MatrixXd& dissimilarity, std::vector<std::size_t> leaves) {
    const auto m = static_cast<std::size_t>(dissimilarity.rows());
    Dendrogram out;
    out.leaves = std::move(leaves);
    if (m < 2) {
        return out;
    }
    out.merges.reserve(m - 1);

    Eigen::MatrixXd d = dissimilarity;
    std::vector<bool> active(m, true);
    std::vector<std::size_t> size(m, 1), node(m), nn(m, m);
    std::vector<double> nnd(m, std::numeric_limits<double>::infinity());
    std::iota(node.begin(), node.end(), std::size_t{0});

    auto rescan = [&](std::size_t i) {
        nn[i] = m;
        nnd[i] = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < m; ++j) {
            if (j == i || !active[j]) {
                continue;
            }
            double v = d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            if (v < nnd[i]) {
                nnd[i] = v;
                nn[i] = j;
            }
        }
    };
    for (std::size_t i = 0; i < m; ++i) {
        rescan(i);
    }

    for (std::size_t step = 0; step + 1 < m; ++step) {
        std::size_t best = m;
        for (std::size_t i = 0; i < m; ++i) {
            if (active[i] && (best == m || nnd[i] < nnd[best])) {
                best = i;
            }
        }
        std::size_t a = std::min(best, nn[best]);
        std::size_t b = std::max(best, nn[best]);
        double height = d(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));

        const double sa = static_cast<double>(size[a]), sb = static_cast<double>(size[b]);
        for (std::size_t k = 0; k < m; ++k) {
            if (!active[k] || k == a || k == b) {
                continue;
            }
            const auto ki = static_cast<Eigen::Index>(k);
            double v = (sa * d(static_cast<Eigen::Index>(a), ki) + sb * d(static_cast<Eigen::Index>(b), ki)) / (sa + sb);
            d(static_cast<Eigen::Index>(a), ki) = v;
            d(ki, static_cast<Eigen::Index>(a)) = v;
        }

        out.merges.push_back(Dendrogram::Merge{std::min(node[a], node[b]), std::max(node[a], node[b]), height, size[a] + size[b]});
        active[b] = false;
        size[a] += size[b];
        node[a] = m + step;

        rescan(a);
        for (std::size_t k = 0; k < m; ++k) {
            if (!active[k] || k == a) {
                continue;
            }
            if (nn[k] == a || nn[k] == b) {
                rescan(k);
            } else {
                double v = d(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(a));
                if (v < nnd[k] || (v == nnd[k] && a < nn[k])) {
                    nnd[k] = v;
                    nn[k] = a;
                }
            }
        }
    }
    return out;
}

/**
 * Average-linkage dendrogram over one pre-grouped subset, using `1 - correlation` between
 * sign-adjusted genes. `signs[k]` is the orientation of `genes[k]`.
 */
inline Dendrogram build_dendrogram(const StandardizedMatrix& x, std::span<const std::size_t> genes, std::span<const int> signs) {
    if (genes.size() != signs.size()) {
        throw InvalidArgument("build_dendrogram: genes and signs differ in length");
    }
    std::vector<std::size_t> leaves(genes.begin(), genes.end());
    if (genes.size() < 2) {
        Dendrogram out;
        out.leaves = std::move(leaves);
        return out;
    }
    return average_linkage(signed_dissimilarity(x, genes, signs), std::move(leaves));
}

/**
 * Cut at dissimilarity threshold `c`: a merge is kept iff its height is `<= c` and both of its
 * children are kept, so groups are the maximal subtrees with every internal height `<= c`.
 * Groups are returned as global gene indices, ordered by their first leaf position.
 */
inline std::vector<std::vector<std::size_t>> cut_dendrogram(const Dendrogram& d, double c) {
    if (!(c >= 0)) {
        throw InvalidArgument("cut_dendrogram: threshold must be non-negative");
    }
    const std::size_t m = d.leaves.size();
    std::vector<std::size_t> parent(m);
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    auto find = [&](std::size_t i) {
        while (parent[i] != i) {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        return i;
    };

    std::vector<bool> kept(d.merges.size(), false);
    std::vector<std::size_t> representative_leaf(m + d.merges.size());
    std::iota(representative_leaf.begin(), representative_leaf.begin() + static_cast<std::ptrdiff_t>(m), std::size_t{0});
    auto node_kept = [&](std::size_t id) { return id < m || kept[id - m]; };
    for (std::size_t k = 0; k < d.merges.size(); ++k) {
        const auto& mg = d.merges[k];
        representative_leaf[m + k] = representative_leaf[mg.left];
        if (mg.height <= c && node_kept(mg.left) && node_kept(mg.right)) {
            kept[k] = true;
            auto ra = find(representative_leaf[mg.left]);
            auto rb = find(representative_leaf[mg.right]);
            parent[std::max(ra, rb)] = std::min(ra, rb);
        }
    }

    std::vector<std::vector<std::size_t>> groups;
    std::vector<std::size_t> slot(m, m);
    for (std::size_t i = 0; i < m; ++i) {
        auto r = find(i);
        if (slot[r] == m) {
            slot[r] = groups.size();
            groups.emplace_back();
        }
        groups[slot[r]].push_back(d.leaves[i]);
    }
    return groups;
}

/**
 * @brief Final gene-to-group assignment plus the training standardization needed to apply it.
 *
 * All per-gene vectors are indexed by training gene index (`gene_order`). Genes that were constant
 * in training have `gene_sign == 0` and belong to no group. Singleton groups always carry sign +1.
 */
struct GroupingRule {
    double threshold = 0;
    std::vector<std::vector<std::size_t>> groups;
    std::vector<int> gene_sign;
    std::vector<std::string> gene_order;
    std::vector<double> gene_means;
    std::vector<double> gene_sds;

    std::size_t n_groups() const { return groups.size(); }
};

/**
 * Union of the per-subset cuts at threshold `c`. Groups are ordered by their smallest gene index,
 * so the all-singleton rule lists genes in their original order.
 */
inline GroupingRule make_rule(const PartitionSet& partition, const std::vector<Dendrogram>& dendrograms, double c, const StandardizedMatrix& std) {
    if (dendrograms.size() != partition.subsets.size()) {
        throw InvalidArgument("make_rule: need one dendrogram per subset");
    }
    GroupingRule rule;
    rule.threshold = c;
    rule.gene_order = std.gene_ids;
    rule.gene_means = std.gene_means;
    rule.gene_sds = std.gene_sds;
    rule.gene_sign.assign(std.n_genes(), 0);

    for (const auto& d : dendrograms) {
        for (auto& g : cut_dendrogram(d, c)) {
            std::sort(g.begin(), g.end());
            for (auto gene : g) {
                rule.gene_sign[gene] = g.size() == 1 ? 1 : partition.signs[gene];
            }
            rule.groups.push_back(std::move(g));
        }
    }
    std::sort(rule.groups.begin(), rule.groups.end(), [](const auto& a, const auto& b) { return a.front() < b.front(); });
    return rule;
}

namespace detail {

inline void fill_representative(Eigen::Ref<Eigen::VectorXd> z, const GroupingRule& rule, std::size_t g,
                                const std::function<void(std::size_t gene, Eigen::Ref<Eigen::VectorXd>)>& standardized_gene,
                                Eigen::VectorXd& scratch) {
    const auto& members = rule.groups[g];
    if (members.size() == 1 && rule.gene_sign[members.front()] > 0) {
        standardized_gene(members.front(), z);
        return;
    }
    // Running mean: exact when every signed member is the same vector.
    z.setZero();
    double k = 0;
    for (auto gene : members) {
        standardized_gene(gene, scratch);
        if (rule.gene_sign[gene] < 0) {
            scratch = -scratch;
        }
        k += 1;
        z += (scratch - z) / k;
    }
}

}

/**
 * Representative matrix (cells by groups) for a new expression matrix: each gene is z-scored with
 * the rule's stored training mean and sd, then each group is replaced by its signed average.
 * Throws `MissingGenes` naming the absent identifiers.
 */
inline Eigen::MatrixXd representatives(const GroupingRule& rule, const ExpressionMatrix& x) {
    std::vector<std::size_t> column(rule.gene_order.size(), 0);
    std::vector<std::string> missing;
    for (const auto& grp : rule.groups) {
        for (auto gene : grp) {
            auto c = x.find_gene(rule.gene_order[gene]);
            if (c < 0) {
                missing.push_back(rule.gene_order[gene]);
            } else {
                column[gene] = static_cast<std::size_t>(c);
            }
        }
    }
    if (!missing.empty()) {
        std::string msg = "input lacks " + std::to_string(missing.size()) + " gene(s) required by the grouping rule:";
        for (std::size_t i = 0; i < missing.size() && i < 20; ++i) {
            msg += " " + missing[i];
        }
        if (missing.size() > 20) {
            msg += " ...";
        }
        throw MissingGenes(msg);
    }

    const auto n = static_cast<Eigen::Index>(x.n_cells());
    Eigen::MatrixXd z(n, static_cast<Eigen::Index>(rule.n_groups()));
    Eigen::VectorXd scratch(n);
    auto standardized = [&](std::size_t gene, Eigen::Ref<Eigen::VectorXd> out) {
        auto col = x.gene(column[gene]);
        const double mean = rule.gene_means[gene], sd = rule.gene_sds[gene];
        for (Eigen::Index i = 0; i < n; ++i) {
            out[i] = standardize_value(col[static_cast<std::size_t>(i)], mean, sd);
        }
    };
    for (std::size_t g = 0; g < rule.n_groups(); ++g) {
        detail::fill_representative(z.col(static_cast<Eigen::Index>(g)), rule, g, standardized, scratch);
    }
    return z;
}

/**
 * Representatives for the training matrix itself, reusing its standardized values.
 */
inline Eigen::MatrixXd representatives(const GroupingRule& rule, const StandardizedMatrix& x) {
    const auto n = static_cast<Eigen::Index>(x.n_cells());
    Eigen::MatrixXd z(n, static_cast<Eigen::Index>(rule.n_groups()));
    Eigen::VectorXd scratch(n);
    auto standardized = [&](std::size_t gene, Eigen::Ref<Eigen::VectorXd> out) { out = x.values.col(static_cast<Eigen::Index>(gene)); };
    for (std::size_t g = 0; g < rule.n_groups(); ++g) {
        detail::fill_representative(z.col(static_cast<Eigen::Index>(g)), rule, g, standardized, scratch);
    }
    return z;
}

/**
 * @brief Everything about the grouping that does not depend on the threshold or the labels:
 * standardization, pre-grouping and one dendrogram per subset.
 */
struct GroupingForest {
    StandardizedMatrix std;
    PartitionSet partition;
    std::vector<Dendrogram> dendrograms;

    GroupingRule cut(double c) const { return make_rule(partition, dendrograms, c, std); }

    /// Smallest merge height over all dendrograms (infinity if there are no merges).
    double min_height() const {
        double h = std::numeric_limits<double>::infinity();
        for (const auto& d : dendrograms) {
            for (const auto& m : d.merges) {
                h = std::min(h, m.height);
            }
        }
        return h;
    }
};

inline GroupingForest build_forest(StandardizedMatrix std, const SplitOptions& split, int threads = 1) {
    GroupingForest out;
    out.partition = iterative_split(std, split);
    out.dendrograms.resize(out.partition.subsets.size());
    parallel_for(out.partition.subsets.size(), threads, [&](std::size_t s) {
        const auto& genes = out.partition.subsets[s];
        std::vector<int> signs;
        signs.reserve(genes.size());
        for (auto g : genes) {
            signs.push_back(out.partition.signs[g]);
        }
        out.dendrograms[s] = build_dendrogram(std, genes, signs);
    });
    out.std = std::move(std);
    return out;
}

inline GroupingForest build_forest(const ExpressionMatrix& x, const SplitOptions& split, int threads = 1) {
    return build_forest(standardize(x), split, threads);
}

inline nlohmann::json rule_to_json(const GroupingRule& rule) {
    nlohmann::json groups = nlohmann::json::array();
    nlohmann::json standardization = nlohmann::json::object();
    for (std::size_t g = 0; g < rule.groups.size(); ++g) {
        nlohmann::json genes = nlohmann::json::array();
        for (auto gene : rule.groups[g]) {
            const auto& id = rule.gene_order[gene];
            genes.push_back({{"gene_id", id}, {"sign", rule.gene_sign[gene]}});
            standardization[id] = {{"mean", rule.gene_means[gene]}, {"sd", rule.gene_sds[gene]}};
        }
        groups.push_back({{"id", g}, {"genes", std::move(genes)}});
    }
    return {
        {"threshold", rule.threshold},
        {"groups", std::move(groups)},
        {"standardization", std::move(standardization)},
        {"gene_order", rule.gene_order},
    };
}

inline GroupingRule rule_from_json(const nlohmann::json& j) {
    try {
        GroupingRule rule;
        rule.threshold = j.at("threshold").get<double>();
        rule.gene_order = j.at("gene_order").get<std::vector<std::string>>();
        const auto p = rule.gene_order.size();
        std::unordered_map<std::string, std::size_t> index;
        for (std::size_t i = 0; i < p; ++i) {
            index.emplace(rule.gene_order[i], i);
        }
        rule.gene_sign.assign(p, 0);
        rule.gene_means.assign(p, 0.0);
        rule.gene_sds.assign(p, 0.0);

        const auto& groups = j.at("groups");
        rule.groups.resize(groups.size());
        for (const auto& grp : groups) {
            auto id = grp.at("id").get<std::size_t>();
            if (id >= rule.groups.size() || !rule.groups[id].empty()) {
                throw ValidationError("grouping rule: bad or duplicate group id " + std::to_string(id));
            }
            for (const auto& member : grp.at("genes")) {
                const auto gene_id = member.at("gene_id").get<std::string>();
                auto it = index.find(gene_id);
                if (it == index.end()) {
                    throw ValidationError("grouping rule: gene '" + gene_id + "' missing from gene_order");
                }
                int sign = member.at("sign").get<int>();
                if (sign != 1 && sign != -1) {
                    throw ValidationError("grouping rule: sign must be +1 or -1");
                }
                rule.gene_sign[it->second] = sign;
                const auto& st = j.at("standardization").at(gene_id);
                rule.gene_means[it->second] = st.at("mean").get<double>();
                rule.gene_sds[it->second] = st.at("sd").get<double>();
                rule.groups[id].push_back(it->second);
            }
        }
        return rule;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed grouping rule JSON: ") + e.what());
    }
}

}

#endif
