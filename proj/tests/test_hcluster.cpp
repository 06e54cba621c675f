#include "helpers.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <functional>
#include <set>

using namespace corrgroup;
using testing_support::matrix;

namespace {

std::set<std::size_t> leaf_positions(const Dendrogram& d, std::size_t node) {
    const std::size_t m = d.leaves.size();
    if (node < m) {
        return {node};
    }
    const auto& mg = d.merges[node - m];
    auto a = leaf_positions(d, mg.left);
    auto b = leaf_positions(d, mg.right);
    a.insert(b.begin(), b.end());
    return a;
}

Eigen::MatrixXd oracle_dissimilarity(const StandardizedMatrix& s, const std::vector<std::size_t>& genes, const std::vector<int>& signs) {
    const auto m = static_cast<Eigen::Index>(genes.size());
    Eigen::MatrixXd d(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j < m; ++j) {
            auto a = oracle::column(s.values, static_cast<Eigen::Index>(genes[static_cast<std::size_t>(i)]), signs[static_cast<std::size_t>(i)]);
            auto b = oracle::column(s.values, static_cast<Eigen::Index>(genes[static_cast<std::size_t>(j)]), signs[static_cast<std::size_t>(j)]);
            d(i, j) = 1 - oracle::correlation(a, b);
        }
    }
    return d;
}

std::vector<std::size_t> iota_vec(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
}

std::set<std::set<std::size_t>> as_sets(const std::vector<std::vector<std::size_t>>& groups) {
    std::set<std::set<std::size_t>> out;
    for (const auto& g : groups) {
        out.insert(std::set<std::size_t>(g.begin(), g.end()));
    }
    return out;
}

}

TEST(Dendrogram, PerfectCorrelationAfterSignsMergesAtZero) {
    auto base = oracle::gaussian(10, 1, 1);
    Eigen::MatrixXd g(10, 2);
    g << base, -base;
    auto s = standardize(matrix(g));
    std::vector<std::size_t> genes{0, 1};
    std::vector<int> signs{1, -1};
    auto d = build_dendrogram(s, genes, signs);
    ASSERT_EQ(d.merges.size(), 1u);
    EXPECT_NEAR(d.merges[0].height, 0.0, 1e-14);
}

TEST(Dendrogram, UncorrelatedPairMergesAtOne) {
    Eigen::MatrixXd g(4, 2);
    g << 1, 1, -1, 1, 1, -1, -1, -1;
    auto s = standardize(matrix(g));
    std::vector<std::size_t> genes{0, 1};
    std::vector<int> signs{1, 1};
    auto d = build_dendrogram(s, genes, signs);
    ASSERT_EQ(d.merges.size(), 1u);
    EXPECT_NEAR(d.merges[0].height, 1.0, 1e-14);
}

TEST(Dendrogram, SingletonHasNoMerges) {
    auto s = standardize(matrix(oracle::gaussian(5, 3, 2)));
    std::vector<std::size_t> genes{1};
    std::vector<int> signs{1};
    EXPECT_TRUE(build_dendrogram(s, genes, signs).merges.empty());
}

TEST(Dendrogram, SixGenesMatchNaiveOracle) {
    auto raw = oracle::gaussian(15, 6, 3);
    raw.col(1) += raw.col(0);
    raw.col(3) -= 0.8 * raw.col(2);
    auto s = standardize(matrix(raw));
    std::vector<std::size_t> genes = iota_vec(6);
    std::vector<int> signs{1, 1, -1, 1, 1, -1};
    auto d = build_dendrogram(s, genes, signs);
    auto diss = oracle_dissimilarity(s, genes, signs);
    auto expect = oracle::average_linkage(diss);
    ASSERT_EQ(d.merges.size(), expect.size());
    for (std::size_t k = 0; k < expect.size(); ++k) {
        auto a = leaf_positions(d, d.merges[k].left);
        auto b = leaf_positions(d, d.merges[k].right);
        EXPECT_TRUE((a == expect[k].a && b == expect[k].b) || (a == expect[k].b && b == expect[k].a)) << "merge " << k;
        EXPECT_NEAR(d.merges[k].height, expect[k].height, 1e-8);
        // height is the mean pairwise leaf dissimilarity
        double sum = 0;
        for (auto p : a) {
            for (auto q : b) {
                sum += diss(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(q));
            }
        }
        EXPECT_NEAR(d.merges[k].height, sum / static_cast<double>(a.size() * b.size()), 1e-10);
        if (k > 0) {
            EXPECT_GE(d.merges[k].height, d.merges[k - 1].height - 1e-12);
        }
    }
}

TEST(CutDendrogram, ThresholdExtremes) {
    auto s = standardize(matrix(oracle::gaussian(15, 6, 4)));
    auto genes = iota_vec(6);
    std::vector<int> signs(6, 1);
    auto d = build_dendrogram(s, genes, signs);
    EXPECT_EQ(cut_dendrogram(d, 0.0).size(), 6u);
    auto all = cut_dendrogram(d, d.max_height());
    ASSERT_EQ(all.size(), 1u);
    EXPECT_EQ(all[0].size(), 6u);
    EXPECT_THROW(cut_dendrogram(d, -1.0), InvalidArgument);
}

TEST(CutDendrogram, BetweenFirstTwoHeightsGroupsFirstPair) {
    auto s = standardize(matrix(oracle::gaussian(15, 6, 5)));
    auto genes = iota_vec(6);
    std::vector<int> signs(6, 1);
    auto expect = oracle::average_linkage(oracle_dissimilarity(s, genes, signs));
    ASSERT_LT(expect[0].height, expect[1].height);
    auto d = build_dendrogram(s, genes, signs);
    auto groups = cut_dendrogram(d, 0.5 * (expect[0].height + expect[1].height));
    EXPECT_EQ(groups.size(), 5u);
    std::set<std::size_t> pair = expect[0].a;
    pair.insert(expect[0].b.begin(), expect[0].b.end());
    EXPECT_TRUE(as_sets(groups).count(pair));
}

TEST(CutDendrogram, MergeAtExactThresholdIsKept) {
    auto base = oracle::gaussian(10, 1, 6);
    Eigen::MatrixXd g(10, 2);
    g << base, base;
    auto s = standardize(matrix(g));
    std::vector<std::size_t> genes{0, 1};
    std::vector<int> signs{1, 1};
    auto d = build_dendrogram(s, genes, signs);
    const double h = d.merges[0].height;
    EXPECT_EQ(cut_dendrogram(d, h).size(), 1u);
}

TEST(CutDendrogram, CoarserThresholdRefines) {
    auto s = standardize(matrix(oracle::gaussian(12, 20, 7)));
    auto genes = iota_vec(20);
    std::vector<int> signs(20, 1);
    auto d = build_dendrogram(s, genes, signs);
    std::vector<double> cs{0.2, 0.5, 0.8, 1.0, 1.2};
    for (std::size_t a = 0; a + 1 < cs.size(); ++a) {
        auto fine = cut_dendrogram(d, cs[a]);
        auto coarse = cut_dendrogram(d, cs[a + 1]);
        EXPECT_GE(fine.size(), coarse.size());
        for (const auto& f : fine) {
            bool inside = false;
            for (const auto& c : coarse) {
                std::set<std::size_t> cset(c.begin(), c.end());
                inside = inside || std::all_of(f.begin(), f.end(), [&](std::size_t x) { return cset.count(x) > 0; });
            }
            EXPECT_TRUE(inside);
        }
    }
}

TEST(MakeRule, LowThresholdGivesSingletons) {
    auto s = standardize(matrix(oracle::gaussian(12, 9, 8)));
    auto forest = build_forest(s, SplitOptions{});
    auto rule = forest.cut(forest.min_height() / 2);
    EXPECT_EQ(rule.n_groups(), 9u);
    for (std::size_t g = 0; g < 9; ++g) {
        EXPECT_EQ(rule.groups[g], std::vector<std::size_t>{g});
        EXPECT_EQ(rule.gene_sign[g], 1);
    }
}

TEST(MakeRule, GroupsNeverSpanSubsetsAndCountsAdd) {
    auto s = standardize(matrix(oracle::gaussian(12, 10, 9)));
    PartitionSet part;
    part.subsets = {{0, 2, 4, 6, 8}, {1, 3, 5, 7, 9}};
    part.signs.assign(10, 1);
    part.max_size = 5;
    std::vector<Dendrogram> dendros;
    for (const auto& sub : part.subsets) {
        std::vector<int> signs(sub.size(), 1);
        dendros.push_back(build_dendrogram(s, sub, signs));
    }
    for (double c : {0.0, 0.6, 0.9, 1.1, 2.0}) {
        auto rule = make_rule(part, dendros, c, s);
        EXPECT_EQ(rule.n_groups(), cut_dendrogram(dendros[0], c).size() + cut_dendrogram(dendros[1], c).size());
        for (const auto& g : rule.groups) {
            const auto parity = g.front() % 2;
            for (auto gene : g) {
                EXPECT_EQ(gene % 2, parity);
            }
        }
    }
}

TEST(MakeRule, ConstantGenesBelongToNoGroup) {
    Eigen::MatrixXd v = oracle::gaussian(10, 4, 10);
    v.col(1).setConstant(3);
    auto forest = build_forest(standardize(matrix(v)), SplitOptions{});
    auto rule = forest.cut(2.0);
    EXPECT_EQ(rule.gene_sign[1], 0);
    for (const auto& g : rule.groups) {
        EXPECT_EQ(std::count(g.begin(), g.end(), std::size_t{1}), 0);
    }
}

TEST(Representatives, SignedTripleIsFirstGene) {
    auto base = oracle::gaussian(9, 1, 11);
    Eigen::MatrixXd v(9, 3);
    v << base, -base, base;
    auto x = matrix(v);
    auto forest = build_forest(standardize(x), SplitOptions{});
    auto rule = forest.cut(1e-6);
    ASSERT_EQ(rule.n_groups(), 1u);
    EXPECT_EQ(rule.gene_sign, (std::vector<int>{1, -1, 1}));
    Eigen::MatrixXd z = representatives(rule, x);
    Eigen::VectorXd first = forest.std.values.col(0);
    EXPECT_TRUE(z.col(0) == first);
}

TEST(Representatives, SingletonPassesThroughStandardizedGene) {
    auto x = matrix(oracle::gaussian(7, 3, 12) * 4.0);
    auto forest = build_forest(standardize(x), SplitOptions{});
    auto rule = forest.cut(0.0);
    Eigen::MatrixXd z = representatives(rule, x);
    EXPECT_TRUE(z == forest.std.values);
}

TEST(Representatives, RandomGroupMatchesDirectSignedMean) {
    Eigen::MatrixXd v = oracle::gaussian(11, 6, 13) * 2.0;
    v.array() += 5.0;
    auto x = matrix(v);
    GroupingRule rule;
    rule.groups = {{0, 2, 3, 5}, {1}, {4}};
    rule.gene_sign = {1, 1, -1, 1, 1, -1};
    rule.gene_order = x.gene_ids();
    for (Eigen::Index j = 0; j < 6; ++j) {
        auto [m, s] = oracle::mean_sd(oracle::column(v, j));
        rule.gene_means.push_back(m);
        rule.gene_sds.push_back(s);
    }
    auto z = representatives(rule, x);
    for (Eigen::Index i = 0; i < 11; ++i) {
        double expect = 0;
        for (std::size_t gene : rule.groups[0]) {
            expect += rule.gene_sign[gene] * (v(i, static_cast<Eigen::Index>(gene)) - rule.gene_means[gene]) / rule.gene_sds[gene];
        }
        EXPECT_NEAR(z(i, 0), expect / 4, 1e-12);
    }
    EXPECT_NEAR(z.col(0).mean(), 0.0, 1e-12);
}

TEST(Representatives, NegatingRawGeneAndSignIsInvisible) {
    auto v = oracle::gaussian(10, 4, 14);
    auto x = matrix(v);
    GroupingRule rule;
    rule.groups = {{0, 1, 2, 3}};
    rule.gene_sign = {1, -1, 1, 1};
    rule.gene_order = x.gene_ids();
    for (Eigen::Index j = 0; j < 4; ++j) {
        rule.gene_means.push_back(0.5 * static_cast<double>(j));
        rule.gene_sds.push_back(1.0 + static_cast<double>(j));
    }
    auto z1 = representatives(rule, x);
    Eigen::MatrixXd v2 = v;
    v2.col(2) = -v2.col(2);
    auto rule2 = rule;
    rule2.gene_sign[2] = -1;
    rule2.gene_means[2] = -rule.gene_means[2];
    auto z2 = representatives(rule2, matrix(v2));
    EXPECT_EQ(z1, z2);
}

TEST(Representatives, MissingGenesAreListed) {
    auto x = matrix(oracle::gaussian(6, 3, 15));
    auto forest = build_forest(standardize(x), SplitOptions{});
    auto rule = forest.cut(0.0);
    auto fewer = ExpressionMatrix(x.values().leftCols(2), {"g1", "g2"}, x.cell_ids());
    try {
        representatives(rule, fewer);
        FAIL() << "expected MissingGenes";
    } catch (const MissingGenes& e) {
        EXPECT_NE(std::string(e.what()).find("g3"), std::string::npos);
    }
}

TEST(Representatives, TrainingAndReloadedMatrixAgree) {
    auto v = oracle::gaussian(8, 12, 16);
    v.col(3) = v.col(2) + 0.1 * v.col(3);
    auto x = matrix(v);
    auto forest = build_forest(standardize(x), SplitOptions{});
    auto rule = forest.cut(0.5);
    auto dir = testing_support::scratch_dir("reload");
    write_matrix((dir / "x.csv").string(), x);
    auto back = load_matrix((dir / "x.csv").string());
    EXPECT_LE((representatives(rule, forest.std) - representatives(rule, back)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(GroupingRule, JsonRoundTrip) {
    auto v = oracle::gaussian(8, 6, 17);
    v.col(1) = -v.col(0) + 0.05 * v.col(1);
    auto x = matrix(v);
    auto rule = build_forest(standardize(x), SplitOptions{}).cut(0.3);
    auto j = rule_to_json(rule);
    ASSERT_TRUE(j.contains("threshold"));
    ASSERT_TRUE(j.contains("groups"));
    ASSERT_TRUE(j.contains("standardization"));
    auto back = rule_from_json(nlohmann::json::parse(j.dump()));
    EXPECT_EQ(back.groups, rule.groups);
    EXPECT_EQ(back.gene_sign, rule.gene_sign);
    EXPECT_EQ(back.gene_means, rule.gene_means);
    EXPECT_EQ(back.gene_sds, rule.gene_sds);
    EXPECT_EQ(representatives(back, x), representatives(rule, x));
}
