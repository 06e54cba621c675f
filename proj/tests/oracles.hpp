#ifndef CORRGROUP_TESTS_ORACLES_HPP
#define CORRGROUP_TESTS_ORACLES_HPP

// Slow, straightforward reference implementations. None of these call into the library.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <set>
#include <utility>
#include <vector>

namespace oracle {

inline std::pair<double, double> mean_sd(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) {
        s += x;
    }
    const double m = s / static_cast<double>(v.size());
    double ss = 0;
    for (double x : v) {
        ss += (x - m) * (x - m);
    }
    return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

inline double correlation(const std::vector<double>& a, const std::vector<double>& b) {
    auto [ma, sa] = mean_sd(a);
    auto [mb, sb] = mean_sd(b);
    double c = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        c += (a[i] - ma) * (b[i] - mb);
    }
    return c / static_cast<double>(a.size() - 1) / (sa * sb);
}

inline std::vector<double> column(const Eigen::MatrixXd& x, Eigen::Index j, double scale = 1.0) {
    std::vector<double> out(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        out[static_cast<std::size_t>(i)] = scale * x(i, j);
    }
    return out;
}

struct Merge {
    std::set<std::size_t> a, b; // leaf positions
    double height;
};

/**
 * Agglomerative average linkage that recomputes every inter-cluster average from the leaf
 * dissimilarities at every step.
 */
inline std::vector<Merge> average_linkage(const Eigen::MatrixXd& d) {
    const auto m = static_cast<std::size_t>(d.rows());
    std::vector<std::set<std::size_t>> clusters;
    for (std::size_t i = 0; i < m; ++i) {
        clusters.push_back({i});
    }
    std::vector<Merge> out;
    while (clusters.size() > 1) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t bi = 0, bj = 0;
        for (std::size_t i = 0; i < clusters.size(); ++i) {
            for (std::size_t j = i + 1; j < clusters.size(); ++j) {
                double s = 0;
                for (auto p : clusters[i]) {
                    for (auto q : clusters[j]) {
                        s += d(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(q));
                    }
                }
                s /= static_cast<double>(clusters[i].size() * clusters[j].size());
                if (s < best) {
                    best = s;
                    bi = i;
                    bj = j;
                }
            }
        }
        out.push_back({clusters[bi], clusters[bj], best});
        clusters[bi].insert(clusters[bj].begin(), clusters[bj].end());
        clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bj));
    }
    return out;
}

/// Exhaustive pair counting.
inline double auc(const std::vector<int>& y, const std::vector<double>& q) {
    double score = 0;
    double pairs = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        for (std::size_t j = 0; j < y.size(); ++j) {
            if (y[i] == 1 && y[j] == 0) {
                pairs += 1;
                if (q[i] > q[j]) {
                    score += 1;
                } else if (q[i] == q[j]) {
                    score += 0.5;
                }
            }
        }
    }
    return score / pairs;
}

/// Two-sided signed-rank p-value by enumerating every sign assignment.
inline double wilcoxon_enumerate(const std::vector<double>& diffs) {
    std::vector<double> d;
    for (double v : diffs) {
        if (v != 0) {
            d.push_back(v);
        }
    }
    const std::size_t n = d.size();
    if (n == 0) {
        return 1.0;
    }
    // Doubled midranks: 2 * (1 + #smaller) + (#equal - 1).
    std::vector<long> r2(n);
    for (std::size_t i = 0; i < n; ++i) {
        long smaller = 0, equal = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (std::abs(d[j]) < std::abs(d[i])) {
                ++smaller;
            } else if (std::abs(d[j]) == std::abs(d[i])) {
                ++equal;
            }
        }
        r2[i] = 2 * smaller + equal + 1;
    }
    long w = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (d[i] > 0) {
            w += r2[i];
        }
    }
    long le = 0, ge = 0;
    const std::uint64_t total = std::uint64_t{1} << n;
    for (std::uint64_t mask = 0; mask < total; ++mask) {
        long s = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (mask >> i & 1U) {
                s += r2[i];
            }
        }
        le += s <= w;
        ge += s >= w;
    }
    return std::min(1.0, 2.0 * static_cast<double>(std::min(le, ge)) / static_cast<double>(total));
}

/// Unpenalized logistic regression with intercept by Newton-Raphson. Returns (b0, b).
inline std::pair<double, Eigen::VectorXd> logistic_mle(const Eigen::MatrixXd& x, const std::vector<int>& y) {
    const auto n = x.rows(), p = x.cols();
    Eigen::MatrixXd a(n, p + 1);
    a.col(0).setOnes();
    a.rightCols(p) = x;
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(p + 1);
    for (int it = 0; it < 100; ++it) {
        Eigen::VectorXd eta = a * theta;
        Eigen::VectorXd mu(n), w(n), r(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            mu[i] = 1 / (1 + std::exp(-eta[i]));
            w[i] = mu[i] * (1 - mu[i]);
            r[i] = y[static_cast<std::size_t>(i)] - mu[i];
        }
        Eigen::MatrixXd h = a.transpose() * w.asDiagonal() * a;
        Eigen::VectorXd step = h.ldlt().solve(a.transpose() * r);
        theta += step;
        if (step.norm() < 1e-12) {
            break;
        }
    }
    return {theta[0], theta.tail(p)};
}

/**
 * Largest violation of the elastic-net optimality conditions on the standardized scale
 * (columns centered and divided by their n-1 sd). `b0`/`b` are on the original scale.
 * Constant columns are skipped.
 */
inline double kkt_violation(const Eigen::MatrixXd& x, const std::vector<int>& y, double b0, const std::vector<double>& b, double lambda,
                            double alpha) {
    const auto n = x.rows();
    std::vector<double> resid(static_cast<std::size_t>(n));
    double rsum = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        double eta = b0;
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            eta += b[static_cast<std::size_t>(j)] * x(i, j);
        }
        resid[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(i)] - 1 / (1 + std::exp(-eta));
        rsum += resid[static_cast<std::size_t>(i)];
    }
    double worst = std::abs(rsum / static_cast<double>(n));
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        auto [m, s] = mean_sd(column(x, j));
        if (s < 1e-12) {
            continue;
        }
        double g = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            g += (x(i, j) - m) / s * resid[static_cast<std::size_t>(i)];
        }
        g /= static_cast<double>(n);
        const double bs = b[static_cast<std::size_t>(j)] * s;
        double v;
        if (bs != 0) {
            v = std::abs(g - lambda * (1 - alpha) * bs - lambda * alpha * (bs > 0 ? 1 : -1));
        } else {
            v = std::max(0.0, std::abs(g) - lambda * alpha);
        }
        worst = std::max(worst, v);
    }
    return worst;
}

/// Gaussian matrix with a fixed seed.
inline Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z;
    Eigen::MatrixXd out(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
        for (Eigen::Index i = 0; i < rows; ++i) {
            out(i, j) = z(rng);
        }
    }
    return out;
}

}

#endif
