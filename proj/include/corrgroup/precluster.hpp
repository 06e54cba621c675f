#ifndef CORRGROUP_PRECLUSTER_HPP
#define CORRGROUP_PRECLUSTER_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "data_model.hpp"
#include "diagnostics.hpp"
#include "error.hpp"
#include "random.hpp"

/**
 * @file precluster.hpp
 * @brief Sign-aware K-Means pre-grouping of genes into subsets small enough for hierarchical clustering.
 *
 * Genes are treated as points in cell space. The modified K-Means assigns each gene to the
 * center with the largest absolute correlation and remembers the sign of that correlation,
 * so that anti-correlated genes share a cluster and the center is their signed average.
 */

namespace corrgroup {

/**
 * @brief Output of `modified_kmeans()`.
 *
 * `membership` and `signs` are indexed by position in the gene set that was clustered.
 * Cluster labels are compact, i.e., every label in `[0, centers.cols())` is used.
 */
struct SignedClustering {
    std::vector<std::size_t> membership;
    std::vector<int> signs;
    Eigen::MatrixXd centers;
    std::size_t iterations = 0;
    bool converged = false;

    std::size_t n_clusters() const { return static_cast<std::size_t>(centers.cols()); }
};

/**
 * @brief Disjoint cover of the retained genes.
 *
 * `signs` is indexed by global gene index; each entry is the orientation of the gene relative to
 * the center of its final subset (0 for constant genes, which belong to no subset).
 */
struct PartitionSet {
    std::vector<std::vector<std::size_t>> subsets;
    std::vector<int> signs;
    std::size_t max_size = 0;
    std::size_t splits = 0;

    std::size_t largest() const {
        std::size_t out = 0;
        for (const auto& s : subsets) {
            out = std::max(out, s.size());
        }
        return out;
    }
};

namespace detail {

inline Eigen::MatrixXd gather_genes(const StandardizedMatrix& x, std::span<const std::size_t> genes, std::span<const int> signs = {}) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(x.n_cells()), static_cast<Eigen::Index>(genes.size()));
    for (std::size_t k = 0; k < genes.size(); ++k) {
        out.col(static_cast<Eigen::Index>(k)) = x.values.col(static_cast<Eigen::Index>(genes[k]));
        if (!signs.empty() && signs[k] < 0) {
            out.col(static_cast<Eigen::Index>(k)) *= -1.0;
        }
    }
    return out;
}

/**
 * Centered, unit-norm copy of each column, so that inner products are Pearson correlations.
 * Returns false in `ok[j]` for columns that are numerically constant.
 */
inline Eigen::MatrixXd correlation_basis(const Eigen::MatrixXd& cols, std::vector<bool>& ok) {
    const double n = static_cast<double>(cols.rows());
    Eigen::MatrixXd out = cols;
    ok.assign(static_cast<std::size_t>(cols.cols()), true);
    for (Eigen::Index j = 0; j < cols.cols(); ++j) {
        auto c = out.col(j);
        c.array() -= c.mean();
        double norm = c.norm();
        if (std::sqrt(norm * norm / (n - 1)) < constant_sd_threshold) {
            ok[static_cast<std::size_t>(j)] = false;
            c.setZero();
        } else {
            c /= norm;
        }
    }
    return out;
}

inline std::vector<std::size_t> compact_labels(std::vector<std::size_t>& labels, std::size_t K) {
    std::vector<std::size_t> remap(K, std::numeric_limits<std::size_t>::max());
    std::vector<std::size_t> used;
    for (auto l : labels) {
        if (remap[l] == std::numeric_limits<std::size_t>::max()) {
            remap[l] = 0;
        }
    }
    std::size_t next = 0;
    for (std::size_t k = 0; k < K; ++k) {
        if (remap[k] == 0) {
            remap[k] = next++;
            used.push_back(k);
        }
    }
    for (auto& l : labels) {
        l = remap[l];
    }
    return used;
}

}

/**
 * Standard Euclidean K-Means over the columns of `genes` (each column is one gene),
 * seeded by k-means++ and refined with Lloyd iterations. Deterministic for a given seed.
 * Empty clusters are dropped from the returned (compact) labelling.
 */
inline std::vector<std::size_t> kmeans_init(const Eigen::MatrixXd& genes, std::size_t K, std::uint64_t seed, std::size_t max_iter = 100) {
    const auto m = static_cast<std::size_t>(genes.cols());
    if (K == 0) {
        throw InvalidArgument("kmeans_init: K must be positive");
    }
    if (K > m) {
        throw InvalidArgument("kmeans_init: K = " + std::to_string(K) + " exceeds the " + std::to_string(m) + " genes in the set");
    }

    Rng rng(seed);
    Eigen::VectorXd sqnorm = genes.colwise().squaredNorm().transpose();

    // k-means++ seeding
    std::vector<std::size_t> chosen;
    chosen.reserve(K);
    std::vector<bool> is_chosen(m, false);
    std::uniform_int_distribution<std::size_t> first(0, m - 1);
    chosen.push_back(first(rng));
    is_chosen[chosen.back()] = true;
    Eigen::VectorXd d2 = (genes.colwise() - genes.col(static_cast<Eigen::Index>(chosen.back()))).colwise().squaredNorm().transpose();
    while (chosen.size() < K) {
        double total = 0;
        for (std::size_t i = 0; i < m; ++i) {
            if (!is_chosen[i]) {
                total += d2[static_cast<Eigen::Index>(i)];
            }
        }
        std::size_t pick = m;
        if (total > 0) {
            std::uniform_real_distribution<double> unif(0.0, total);
            double target = unif(rng), acc = 0;
            for (std::size_t i = 0; i < m; ++i) {
                if (is_chosen[i]) {
                    continue;
                }
                acc += d2[static_cast<Eigen::Index>(i)];
                pick = i;
                if (acc > target && d2[static_cast<Eigen::Index>(i)] > 0) {
                    break;
                }
            }
        } else {
            for (std::size_t i = 0; i < m && pick == m; ++i) {
                if (!is_chosen[i]) {
                    pick = i;
                }
            }
        }
        chosen.push_back(pick);
        is_chosen[pick] = true;
        Eigen::VectorXd dn = (genes.colwise() - genes.col(static_cast<Eigen::Index>(pick))).colwise().squaredNorm().transpose();
        d2 = d2.cwiseMin(dn);
    }

    Eigen::MatrixXd centers(genes.rows(), static_cast<Eigen::Index>(K));
    for (std::size_t k = 0; k < K; ++k) {
        centers.col(static_cast<Eigen::Index>(k)) = genes.col(static_cast<Eigen::Index>(chosen[k]));
    }

    std::vector<std::size_t> labels(m, K);
    for (std::size_t iter = 0; iter < std::max<std::size_t>(max_iter, 1); ++iter) {
        Eigen::MatrixXd cross = genes.transpose() * centers; // m x K
        Eigen::VectorXd csq = centers.colwise().squaredNorm().transpose();
        bool changed = false;
        for (std::size_t i = 0; i < m; ++i) {
            std::size_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < K; ++k) {
                double d = sqnorm[static_cast<Eigen::Index>(i)] - 2 * cross(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) + csq[static_cast<Eigen::Index>(k)];
                if (d < best_d) {
                    best_d = d;
                    best = k;
                }
            }
            if (labels[i] != best) {
                labels[i] = best;
                changed = true;
            }
        }
        if (!changed) {
            break;
        }
        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(genes.rows(), static_cast<Eigen::Index>(K));
        std::vector<std::size_t> counts(K, 0);
        for (std::size_t i = 0; i < m; ++i) {
            sums.col(static_cast<Eigen::Index>(labels[i])) += genes.col(static_cast<Eigen::Index>(i));
            ++counts[labels[i]];
        }
        for (std::size_t k = 0; k < K; ++k) {
            if (counts[k]) {
                centers.col(static_cast<Eigen::Index>(k)) = sums.col(static_cast<Eigen::Index>(k)) / static_cast<double>(counts[k]);
            }
        }
    }

    detail::compact_labels(labels, K);
    return labels;
}

inline std::vector<std::size_t> kmeans_init(const StandardizedMatrix& x, std::span<const std::size_t> genes, std::size_t K, std::uint64_t seed) {
    return kmeans_init(detail::gather_genes(x, genes), K, seed);
}

/**
 * Modified K-Means: alternate signed-average centers (U-step) with assignment to the center of
 * largest absolute correlation (A-step), starting from `init` with all signs +1.
 *
 * Iteration stops once both membership and signs repeat, which makes the returned centers the
 * signed averages under the returned assignment; otherwise after `max_iter` rounds with
 * `converged = false`. Argmax ties go to the lowest cluster index. An empty cluster, or one whose
 * center degenerates to a constant vector, is re-seeded from the gene worst correlated with its
 * own center. Empty clusters are dropped when no gene is imperfectly represented.
 *
 * @param genes Cells by genes; each column must be non-constant.
 * @param init Initial label per column, each in `[0, K)`.
 * @param init_signs Optional starting signs (default all +1).
 */
inline SignedClustering modified_kmeans(const Eigen::MatrixXd& genes, const std::vector<std::size_t>& init, std::size_t K, std::size_t max_iter = 100,
                                        const std::vector<int>& init_signs = {}) {
    const auto m = static_cast<std::size_t>(genes.cols());
    const auto n = genes.rows();
    if (init.size() != m) {
        throw InvalidArgument("modified_kmeans: initial membership has wrong length");
    }
    if (!init_signs.empty() && init_signs.size() != m) {
        throw InvalidArgument("modified_kmeans: initial signs have wrong length");
    }
    for (auto l : init) {
        if (l >= K) {
            throw InvalidArgument("modified_kmeans: initial label out of range");
        }
    }

    std::vector<bool> gene_ok;
    Eigen::MatrixXd basis = detail::correlation_basis(genes, gene_ok);
    for (std::size_t i = 0; i < m; ++i) {
        if (!gene_ok[i]) {
            throw UndefinedCorrelation("modified_kmeans: gene at position " + std::to_string(i) + " is constant");
        }
    }

    std::vector<std::size_t> labels = init;
    std::vector<int> signs(m, 1);
    for (std::size_t i = 0; i < init_signs.size(); ++i) {
        signs[i] = init_signs[i] < 0 ? -1 : 1;
    }
    Eigen::MatrixXd centers(n, static_cast<Eigen::Index>(K));
    std::vector<std::size_t> counts(K);

    auto update_centers = [&]() {
        centers.setZero();
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < m; ++i) {
            auto col = centers.col(static_cast<Eigen::Index>(labels[i]));
            if (signs[i] > 0) {
                col += genes.col(static_cast<Eigen::Index>(i));
            } else {
                col -= genes.col(static_cast<Eigen::Index>(i));
            }
            ++counts[labels[i]];
        }
        for (std::size_t k = 0; k < K; ++k) {
            if (counts[k]) {
                centers.col(static_cast<Eigen::Index>(k)) /= static_cast<double>(counts[k]);
            }
        }
    };

    SignedClustering out;
    std::size_t iter = 0;
    bool converged = false;
    while (iter < max_iter) {
        ++iter;
        update_centers();

        std::vector<bool> center_ok;
        Eigen::MatrixXd cbasis = detail::correlation_basis(centers, center_ok);
        for (std::size_t k = 0; k < K; ++k) {
            if (counts[k] == 0) {
                center_ok[k] = false;
            }
        }

        // Re-seed clusters that emptied or whose signed average collapsed to a constant vector from
        // the gene worst represented by its own center. An empty cluster is dropped instead when
        // every gene already sits on its center exactly.
        std::vector<bool> used_for_reseed(m, false);
        for (std::size_t k = 0; k < K; ++k) {
            if (center_ok[k]) {
                continue;
            }
            const bool empty = counts[k] == 0;
            std::size_t pick = m;
            double worst = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < m; ++i) {
                if (used_for_reseed[i] || !center_ok[labels[i]] || counts[labels[i]] < 2) {
                    continue;
                }
                double r = std::abs(basis.col(static_cast<Eigen::Index>(i)).dot(cbasis.col(static_cast<Eigen::Index>(labels[i]))));
                if (r < worst) {
                    worst = r;
                    pick = i;
                }
            }
            if (empty) {
                if (pick == m || worst > 1 - 1e-9) {
                    continue;
                }
            } else if (pick == m) {
                for (std::size_t i = 0; i < m && pick == m; ++i) {
                    if (labels[i] == k && !used_for_reseed[i]) {
                        pick = i;
                    }
                }
            }
            if (pick == m) {
                continue;
            }
            used_for_reseed[pick] = true;
            if (!empty) {
                warn("modified_kmeans: center of cluster " + std::to_string(k) + " became constant; re-seeding from gene at position " +
                     std::to_string(pick));
            }
            centers.col(static_cast<Eigen::Index>(k)) = genes.col(static_cast<Eigen::Index>(pick));
            cbasis.col(static_cast<Eigen::Index>(k)) = basis.col(static_cast<Eigen::Index>(pick));
            center_ok[k] = true;
        }

        Eigen::MatrixXd r = basis.transpose() * cbasis; // m x K
        std::vector<std::size_t> new_labels(m);
        std::vector<int> new_signs(m);
        for (std::size_t i = 0; i < m; ++i) {
            std::size_t best = K;
            double best_abs = -1;
            for (std::size_t k = 0; k < K; ++k) {
                if (!center_ok[k]) {
                    continue;
                }
                double a = std::abs(r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)));
                if (a > best_abs) {
                    best_abs = a;
                    best = k;
                }
            }
            if (best == K) {
                best = labels[i];
                new_signs[i] = signs[i];
            } else {
                new_signs[i] = r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(best)) < 0 ? -1 : 1;
            }
            new_labels[i] = best;
        }

        bool same = new_labels == labels && new_signs == signs;
        labels = std::move(new_labels);
        signs = std::move(new_signs);
        if (same) {
            converged = true;
            break;
        }
    }

    if (!converged) {
        warn("modified_kmeans: no convergence after " + std::to_string(max_iter) + " iterations");
    }

    // Final centers always equal the signed averages of the reported assignment.
    update_centers();
    auto used = detail::compact_labels(labels, K);
    out.centers.resize(n, static_cast<Eigen::Index>(used.size()));
    for (std::size_t k = 0; k < used.size(); ++k) {
        out.centers.col(static_cast<Eigen::Index>(k)) = centers.col(static_cast<Eigen::Index>(used[k]));
    }
    out.membership = std::move(labels);
    out.signs = std::move(signs);
    out.iterations = iter;
    out.converged = converged;
    return out;
}

inline SignedClustering modified_kmeans(const StandardizedMatrix& x, std::span<const std::size_t> genes, const std::vector<std::size_t>& init,
                                        std::size_t K, std::size_t max_iter = 100) {
    return modified_kmeans(detail::gather_genes(x, genes), init, K, max_iter);
}

struct SplitOptions {
    std::size_t K = 10;
    std::size_t max_size = 1000;
    std::size_t max_iter = 100;
    std::uint64_t seed = 0;
};

/**
 * Repeatedly split the largest subset with `kmeans_init()` + `modified_kmeans()` until every
 * subset holds fewer than `max_size` genes. Each split works on the genes oriented relative to
 * their current center, so the signs compose multiplicatively across levels.
 * A subset that modified K-Means cannot divide (its genes are perfectly correlated up to sign)
 * is accepted as-is with a warning.
 */
inline PartitionSet iterative_split(const StandardizedMatrix& x, const SplitOptions& opt = {}) {
    if (opt.K < 2) {
        throw InvalidArgument("iterative_split: K must be at least 2");
    }
    if (opt.max_size < 2) {
        throw InvalidArgument("iterative_split: max_size must be at least 2");
    }

    PartitionSet out;
    out.max_size = opt.max_size;
    out.signs.assign(x.n_genes(), 0);
    for (auto g : x.retained) {
        out.signs[g] = 1;
    }
    if (x.retained.empty()) {
        return out;
    }
    out.subsets.push_back(x.retained);
    std::vector<bool> frozen{false};

    // A subset that is never split still needs its genes oriented against a common center:
    // one single-cluster pass gives the signs relative to the signed mean.
    if (x.retained.size() < opt.max_size) {
        Eigen::MatrixXd local = detail::gather_genes(x, x.retained);
        auto single = modified_kmeans(local, std::vector<std::size_t>(x.retained.size(), 0), 1, opt.max_iter);
        for (std::size_t i = 0; i < x.retained.size(); ++i) {
            out.signs[x.retained[i]] = single.signs[i];
        }
        return out;
    }

    while (true) {
        std::size_t target = out.subsets.size();
        for (std::size_t s = 0; s < out.subsets.size(); ++s) {
            if (frozen[s] || out.subsets[s].size() < opt.max_size) {
                continue;
            }
            if (target == out.subsets.size() || out.subsets[s].size() > out.subsets[target].size()) {
                target = s;
            }
        }
        if (target == out.subsets.size()) {
            break;
        }

        const auto members = out.subsets[target];
        std::vector<int> member_signs;
        member_signs.reserve(members.size());
        for (auto g : members) {
            member_signs.push_back(out.signs[g]);
        }
        Eigen::MatrixXd local = detail::gather_genes(x, members, member_signs);
        const std::size_t K = std::min(opt.K, members.size());
        auto init = kmeans_init(local, K, derive_seed(opt.seed, {out.splits}));
        auto clustering = modified_kmeans(local, init, K, opt.max_iter);
        ++out.splits;

        if (clustering.n_clusters() < 2) {
            for (std::size_t i = 0; i < members.size(); ++i) {
                out.signs[members[i]] *= clustering.signs[i];
            }
            warn("iterative_split: subset of " + std::to_string(members.size()) +
                 " genes cannot be split further; keeping it as a single subset");
            frozen[target] = true;
            continue;
        }

        std::vector<std::vector<std::size_t>> children(clustering.n_clusters());
        for (std::size_t i = 0; i < members.size(); ++i) {
            children[clustering.membership[i]].push_back(members[i]);
            out.signs[members[i]] *= clustering.signs[i];
        }
        out.subsets[target] = std::move(children.front());
        frozen[target] = false;
        for (std::size_t c = 1; c < children.size(); ++c) {
            out.subsets.push_back(std::move(children[c]));
            frozen.push_back(false);
        }
    }
    return out;
}

inline nlohmann::json partition_to_json(const PartitionSet& part, const std::vector<std::string>& gene_ids) {
    nlohmann::json subsets = nlohmann::json::array();
    for (std::size_t s = 0; s < part.subsets.size(); ++s) {
        nlohmann::json genes = nlohmann::json::array();
        for (auto g : part.subsets[s]) {
            genes.push_back({{"gene_id", gene_ids[g]}, {"sign", part.signs[g]}});
        }
        subsets.push_back({{"id", s}, {"genes", std::move(genes)}});
    }
    return {{"max_size", part.max_size}, {"splits", part.splits}, {"subsets", std::move(subsets)}};
}

}

#endif
