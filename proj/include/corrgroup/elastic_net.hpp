#ifndef CORRGROUP_ELASTIC_NET_HPP
#define CORRGROUP_ELASTIC_NET_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "diagnostics.hpp"
#include "error.hpp"
#include "parallel.hpp"
#include "random.hpp"

/**
 * @file elastic_net.hpp
 * @brief Elastic-net penalized logistic regression.
 *
 * The objective is
 *
 *     (1/n) * sum_i [log(1 + exp(eta_i)) - y_i * eta_i] + lambda * (alpha * |b|_1 + (1 - alpha) / 2 * |b|_2^2)
 *
 * with `eta = b0 + X b`, where the columns of `X` are standardized internally (sample sd) and the
 * penalty applies to the standardized coefficients. Fitted coefficients are reported on the input scale.
 *
 * The solver is iteratively reweighted least squares around cyclic coordinate descent with
 * soft-thresholding. Coordinates outside a working set (the ever-active predictors plus those
 * passing the sequential strong rule) are only admitted when a KKT check on the full gradient fails.
 * Each outer step is halved until the penalized objective does not increase.
 */

namespace corrgroup {

struct EnetOptions {
    double alpha = 0.5;
    double tol = 1e-7;
    std::size_t max_iter = 100000; // coordinate sweeps per lambda
};

struct EnetFit {
    std::vector<double> coefficients;
    double intercept = 0;
    double alpha = 0.5;
    double lambda = 0;
    bool converged = false;
    double objective = 0;
    std::size_t sweeps = 0;
    bool separation_suspected = false;
    std::vector<double> objective_trace;
    std::vector<std::string> predictor_ids;

    std::size_t nonzero() const {
        return static_cast<std::size_t>(std::count_if(coefficients.begin(), coefficients.end(), [](double b) { return b != 0.0; }));
    }
};

inline double logistic(double t) {
    if (t >= 0) {
        return 1.0 / (1.0 + std::exp(-t));
    }
    double e = std::exp(t);
    return e / (1.0 + e);
}

/// log(1 + exp(t)) without overflow.
inline double softplus(double t) {
    return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

/// Binomial deviance of one observation with linear predictor `eta`.
inline double binomial_deviance(int y, double eta) {
    return 2.0 * (y ? softplus(-eta) : softplus(eta));
}

namespace detail {

inline void check_labels(std::span<const int> y) {
    std::size_t ones = 0;
    for (int v : y) {
        if (v != 0 && v != 1) {
            throw InvalidArgument("labels must be 0 or 1");
        }
        ones += static_cast<std::size_t>(v);
    }
    if (ones == 0 || ones == y.size()) {
        throw DegenerateLabels("labels contain a single class");
    }
}

/**
 * Column-standardized copy of (a row subset of) a predictor matrix.
 */
struct Design {
    Eigen::MatrixXd xs;
    std::vector<double> mean;
    std::vector<double> sd;
    std::vector<bool> usable;

    Design(const Eigen::Ref<const Eigen::MatrixXd>& x, std::span<const std::size_t> rows = {}) {
        const Eigen::Index n = rows.empty() ? x.rows() : static_cast<Eigen::Index>(rows.size());
        const Eigen::Index g = x.cols();
        xs.resize(n, g);
        if (rows.empty()) {
            xs = x;
        } else {
            for (Eigen::Index j = 0; j < g; ++j) {
                for (Eigen::Index i = 0; i < n; ++i) {
                    xs(i, j) = x(static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)]), j);
                }
            }
        }
        mean.resize(static_cast<std::size_t>(g));
        sd.resize(static_cast<std::size_t>(g));
        usable.resize(static_cast<std::size_t>(g));
        const double dn = static_cast<double>(n);
        for (Eigen::Index j = 0; j < g; ++j) {
            auto col = xs.col(j);
            double m = col.sum() / dn;
            double ss = (col.array() - m).square().sum();
            double s = n > 1 ? std::sqrt(ss / (dn - 1)) : 0.0;
            const auto uj = static_cast<std::size_t>(j);
            mean[uj] = m;
            sd[uj] = s;
            usable[uj] = s >= 1e-12 * std::max(1.0, std::abs(m));
            if (usable[uj]) {
                col.array() = (col.array() - m) / s;
            } else {
                col.setZero();
            }
        }
    }

    Eigen::Index n() const { return xs.rows(); }
    Eigen::Index g() const { return xs.cols(); }
};

inline double lambda_max(const Design& d, const Eigen::VectorXd& y, double alpha) {
    if (d.g() == 0) {
        return 0;
    }
    const double ybar = y.mean();
    Eigen::VectorXd grad = d.xs.transpose() * (y.array() - ybar).matrix();
    return grad.cwiseAbs().maxCoeff() / (static_cast<double>(d.n()) * alpha);
}

inline double soft_threshold(double z, double gamma) {
    if (z > gamma) {
        return z - gamma;
    }
    if (z < -gamma) {
        return z + gamma;
    }
    return 0.0;
}

/**
 * Warm-startable solver state on the standardized scale.
 */
class LogisticPathSolver {
public:
    LogisticPathSolver(const Design& design, std::span<const int> y, const EnetOptions& opt)
        : d_(design), opt_(opt), n_(design.n()), y_(design.n()) {
        for (Eigen::Index i = 0; i < n_; ++i) {
            y_[i] = y[static_cast<std::size_t>(i)];
        }
        beta_ = Eigen::VectorXd::Zero(d_.g());
        ever_active_.assign(static_cast<std::size_t>(d_.g()), false);
        gram_pos_.assign(static_cast<std::size_t>(d_.g()), -1);
        lmax_ = detail::lambda_max(d_, y_, opt_.alpha);
        const double ybar = y_.mean();
        null_intercept_ = std::log(ybar / (1 - ybar));
        b0_ = null_intercept_;
        eta_ = Eigen::VectorXd::Constant(n_, b0_);
        gradient_ = d_.xs.transpose() * (y_.array() - ybar).matrix() / static_cast<double>(n_);
        prev_lambda_ = lmax_;
    }

    double lambda_max() const { return lmax_; }

    EnetFit solve(double lambda) {
        EnetFit fit;
        fit.alpha = opt_.alpha;
        fit.lambda = lambda;

        if (lambda >= lmax_) {
            beta_.setZero();
            std::fill(ever_active_.begin(), ever_active_.end(), false);
            b0_ = null_intercept_;
            eta_.setConstant(b0_);
            refresh_gradient();
            fit.converged = true;
        } else {
            solve_penalized(lambda, fit);
        }
        prev_lambda_ = lambda;
        fit.objective = objective(lambda);
        fit.objective_trace.push_back(fit.objective);
        if (std::abs(b0_) > 25 || (beta_.size() > 0 && beta_.cwiseAbs().maxCoeff() > 1e3)) {
            fit.separation_suspected = true;
        }
        back_transform(fit);
        return fit;
    }

    /// Penalized objective at the current state.
    double objective(double lambda) const {
        double nll = 0;
        for (Eigen::Index i = 0; i < n_; ++i) {
            nll += softplus(eta_[i]) - y_[i] * eta_[i];
        }
        nll /= static_cast<double>(n_);
        return nll + lambda * (opt_.alpha * beta_.cwiseAbs().sum() + 0.5 * (1 - opt_.alpha) * beta_.squaredNorm());
    }

private:
    void refresh_gradient() {
        Eigen::VectorXd resid(n_);
        for (Eigen::Index i = 0; i < n_; ++i) {
            resid[i] = y_[i] - logistic(eta_[i]);
        }
        gradient_ = d_.xs.transpose() * resid / static_cast<double>(n_);
    }

    void recompute_eta() {
        eta_.setConstant(b0_);
        for (Eigen::Index j = 0; j < d_.g(); ++j) {
            if (beta_[j] != 0.0) {
                eta_.noalias() += beta_[j] * d_.xs.col(j);
            }
        }
    }

    void solve_penalized(double lambda, EnetFit& fit) {
        const double l1 = lambda * opt_.alpha;
        const double l2 = lambda * (1 - opt_.alpha);
        const double dn = static_cast<double>(n_);
        const auto G = static_cast<std::size_t>(d_.g());

        // Sequential strong rule, using the gradient at the previous solution.
        std::vector<std::size_t> working;
        std::vector<bool> in_working(G, false);
        const double strong = opt_.alpha * (2 * lambda - prev_lambda_);
        for (std::size_t j = 0; j < G; ++j) {
            if (!d_.usable[j]) {
                continue;
            }
            if (ever_active_[j] || std::abs(gradient_[static_cast<Eigen::Index>(j)]) >= strong) {
                working.push_back(j);
                in_working[j] = true;
            }
        }

        Eigen::VectorXd w(n_), wr(n_), beta_old(beta_.size());
        std::vector<double> v(G, 0.0);
        std::size_t sweeps = 0;
        bool converged = false;
        double obj = objective(lambda);
        fit.objective_trace.push_back(obj);

        while (true) {
            bool outer_converged = false;
            for (std::size_t outer = 0; outer < 1000 && sweeps < opt_.max_iter; ++outer) {
                for (Eigen::Index i = 0; i < n_; ++i) {
                    double p = logistic(eta_[i]);
                    w[i] = std::max(p * (1 - p), 1e-5);
                    wr[i] = y_[i] - p;
                }
                for (auto j : working) {
                    v[j] = d_.xs.col(static_cast<Eigen::Index>(j)).cwiseAbs2().dot(w) / dn;
                }
                const double wsum = w.sum();
                gram_valid_ = false;
                beta_old = beta_;
                const double b0_old = b0_;

                // Coordinate descent on the weighted least-squares approximation. After a sweep over
                // the whole working set, only the nonzero coordinates are cycled until they settle;
                // convergence is declared on a full sweep.
                bool full = true;
                std::vector<std::size_t> active;
                std::size_t active_sweeps = 0, next_polish = 1;
                while (sweeps < opt_.max_iter) {
                    ++sweeps;
                    double delta0 = wr.sum() / wsum;
                    b0_ += delta0;
                    wr.noalias() -= delta0 * w;
                    double max_change = std::abs(delta0);
                    for (auto j : full ? working : active) {
                        const auto jj = static_cast<Eigen::Index>(j);
                        auto col = d_.xs.col(jj);
                        double old = beta_[jj];
                        double z = col.dot(wr) / dn + v[j] * old;
                        double updated = soft_threshold(z, l1) / (v[j] + l2);
                        if (updated != old) {
                            wr.noalias() -= (updated - old) * col.cwiseProduct(w);
                            beta_[jj] = updated;
                            max_change = std::max(max_change, std::abs(updated - old));
                        }
                    }
                    if (max_change < opt_.tol) {
                        if (full) {
                            break;
                        }
                        full = true;
                    } else if (full) {
                        active.clear();
                        for (auto j : working) {
                            if (beta_[static_cast<Eigen::Index>(j)] != 0.0) {
                                active.push_back(j);
                            }
                        }
                        full = false;
                        active_sweeps = 0;
                        next_polish = 1;
                    }
                    if (!full && ++active_sweeps == next_polish) {
                        // Polishing on a schedule lets coordinate descent settle the active set first.
                        next_polish = 2 * next_polish + 5;
                        if (polish(active, w, wr, l1, l2) == Polish::partial) {
                            std::erase_if(active, [&](std::size_t j) { return beta_[static_cast<Eigen::Index>(j)] == 0.0; });
                        }
                    }
                }

                recompute_eta();
                double obj_new = objective(lambda);
                if (obj_new > obj) {
                    Eigen::VectorXd target = beta_;
                    const double b0_target = b0_;
                    double step = 1.0;
                    for (int h = 0; h < 30 && obj_new > obj; ++h) {
                        step *= 0.5;
                        beta_ = beta_old + step * (target - beta_old);
                        b0_ = b0_old + step * (b0_target - b0_old);
                        recompute_eta();
                        obj_new = objective(lambda);
                    }
                    if (obj_new > obj) {
                        beta_ = beta_old;
                        b0_ = b0_old;
                        recompute_eta();
                        obj_new = obj;
                    }
                }
                obj = obj_new;
                fit.objective_trace.push_back(obj);

                double change = std::abs(b0_ - b0_old);
                for (auto j : working) {
                    change = std::max(change, std::abs(beta_[static_cast<Eigen::Index>(j)] - beta_old[static_cast<Eigen::Index>(j)]));
                }
                if (change < opt_.tol) {
                    outer_converged = true;
                    break;
                }
            }

            refresh_gradient();
            if (!outer_converged) {
                break;
            }
            // KKT check for coordinates left out of the working set.
            bool added = false;
            for (std::size_t j = 0; j < G; ++j) {
                if (!d_.usable[j] || in_working[j]) {
                    continue;
                }
                if (std::abs(gradient_[static_cast<Eigen::Index>(j)]) > l1) {
                    working.push_back(j);
                    in_working[j] = true;
                    added = true;
                }
            }
            if (!added) {
                converged = true;
                break;
            }
            std::sort(working.begin(), working.end());
        }

        for (std::size_t j = 0; j < G; ++j) {
            if (beta_[static_cast<Eigen::Index>(j)] != 0.0) {
                ever_active_[j] = true;
            }
        }
        fit.converged = converged;
        fit.sweeps = sweeps;
    }

    /**
     * Exact minimizer of the current weighted least-squares subproblem restricted to `active`
     * with the signs of the current coefficients held fixed. Applied only if every coefficient keeps
     * its sign; coordinate descent then confirms (or continues from) the result.
     */
    enum class Polish { solved, partial, failed };

    Polish polish(const std::vector<std::size_t>& active, const Eigen::VectorXd& w, Eigen::VectorXd& wr, double l1, double l2) {
        const auto a = static_cast<Eigen::Index>(active.size());
        if (a == 0 || (l2 == 0.0 && a >= n_)) {
            return Polish::failed;
        }
        const double dn = static_cast<double>(n_);
        Eigen::MatrixXd xa(n_, a);
        for (Eigen::Index k = 0; k < a; ++k) {
            xa.col(k) = d_.xs.col(static_cast<Eigen::Index>(active[static_cast<std::size_t>(k)]));
        }
        // The weighted Gram matrix is reused while the weights stay fixed and the active set stays inside it.
        bool cached = gram_valid_;
        for (Eigen::Index k = 0; cached && k < a; ++k) {
            cached = gram_pos_[active[static_cast<std::size_t>(k)]] >= 0;
        }
        if (!cached) {
            Eigen::MatrixXd sx = w.cwiseSqrt().asDiagonal() * xa;
            gram_.setZero(a, a);
            gram_.selfadjointView<Eigen::Lower>().rankUpdate(sx.transpose());
            std::fill(gram_pos_.begin(), gram_pos_.end(), -1);
            for (Eigen::Index k = 0; k < a; ++k) {
                gram_pos_[active[static_cast<std::size_t>(k)]] = k;
            }
            gram_valid_ = true;
        }
        Eigen::MatrixXd h(a + 1, a + 1);
        Eigen::VectorXd rhs(a + 1);
        h(0, 0) = w.sum();
        h.block(1, 0, a, 1).noalias() = xa.transpose() * w;
        for (Eigen::Index l = 0; l < a; ++l) {
            const auto pl = gram_pos_[active[static_cast<std::size_t>(l)]];
            for (Eigen::Index k = l; k < a; ++k) {
                const auto pk = gram_pos_[active[static_cast<std::size_t>(k)]];
                h(k + 1, l + 1) = pk >= pl ? gram_(pk, pl) : gram_(pl, pk);
            }
            h(l + 1, l + 1) += dn * l2;
        }
        rhs[0] = wr.sum();
        rhs.tail(a).noalias() = xa.transpose() * wr;
        for (Eigen::Index k = 0; k < a; ++k) {
            const double b = beta_[static_cast<Eigen::Index>(active[static_cast<std::size_t>(k)])];
            rhs[k + 1] -= dn * l2 * b + dn * l1 * (b > 0 ? 1.0 : -1.0);
        }
        Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
        if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
            return Polish::failed;
        }
        Eigen::VectorXd delta = ldlt.solve(rhs);
        if (!delta.allFinite()) {
            return Polish::failed;
        }
        // Step towards the solution, stopping where the first coefficient reaches zero. The restricted
        // quadratic is convex, so any step in (0, 1] decreases it.
        double step = 1.0;
        Eigen::Index blocking = -1;
        for (Eigen::Index k = 0; k < a; ++k) {
            const double b = beta_[static_cast<Eigen::Index>(active[static_cast<std::size_t>(k)])];
            const double nb = b + delta[k + 1];
            if (nb == 0.0 || (nb > 0) != (b > 0)) {
                const double t = b / (b - nb);
                if (t < step) {
                    step = t;
                    blocking = k;
                }
            }
        }
        delta *= step;
        b0_ += delta[0];
        for (Eigen::Index k = 0; k < a; ++k) {
            auto& b = beta_[static_cast<Eigen::Index>(active[static_cast<std::size_t>(k)])];
            const double nb = b + delta[k + 1];
            b = (k == blocking || (nb > 0) != (b > 0)) ? 0.0 : nb;
        }
        Eigen::VectorXd shift = xa * delta.tail(a);
        shift.array() += delta[0];
        wr.array() -= w.array() * shift.array();
        return blocking < 0 ? Polish::solved : Polish::partial;
    }

    void back_transform(EnetFit& fit) const {
        const auto G = static_cast<std::size_t>(d_.g());
        fit.coefficients.assign(G, 0.0);
        double b0 = b0_;
        for (std::size_t j = 0; j < G; ++j) {
            double b = beta_[static_cast<Eigen::Index>(j)];
            if (b != 0.0) {
                fit.coefficients[j] = b / d_.sd[j];
                b0 -= fit.coefficients[j] * d_.mean[j];
            }
        }
        fit.intercept = b0;
    }

    const Design& d_;
    EnetOptions opt_;
    Eigen::Index n_;
    Eigen::VectorXd y_;
    Eigen::VectorXd beta_;
    Eigen::VectorXd eta_;
    Eigen::VectorXd gradient_;
    std::vector<bool> ever_active_;
    double b0_ = 0;
    double null_intercept_ = 0;
    double lmax_ = 0;
    double prev_lambda_ = 0;
    Eigen::MatrixXd gram_;
    std::vector<Eigen::Index> gram_pos_;
    bool gram_valid_ = false;
};

}

/**
 * Smallest penalty at which every coefficient is zero:
 * `max_j |x_j' (y - mean(y))| / (n * alpha)` over the internally standardized columns.
 */
inline double lambda_max(const Eigen::Ref<const Eigen::MatrixXd>& X, std::span<const int> y, double alpha) {
    if (!(alpha > 0 && alpha <= 1)) {
        throw InvalidArgument("alpha must lie in (0, 1]");
    }
    if (static_cast<std::size_t>(X.rows()) != y.size()) {
        throw InvalidArgument("lambda_max: row count differs from label count");
    }
    detail::check_labels(y);
    detail::Design d(X);
    Eigen::VectorXd yv(static_cast<Eigen::Index>(y.size()));
    for (std::size_t i = 0; i < y.size(); ++i) {
        yv[static_cast<Eigen::Index>(i)] = y[i];
    }
    return detail::lambda_max(d, yv, alpha);
}

/**
 * Fits along a decreasing sequence of penalties, warm-starting each from the previous solution.
 */
inline std::vector<EnetFit> fit_path(const Eigen::Ref<const Eigen::MatrixXd>& X, std::span<const int> y, std::span<const double> lambdas,
                                     const EnetOptions& opt = {}) {
    if (!(opt.alpha > 0 && opt.alpha <= 1)) {
        throw InvalidArgument("alpha must lie in (0, 1]");
    }
    if (static_cast<std::size_t>(X.rows()) != y.size()) {
        throw InvalidArgument("fit: row count differs from label count");
    }
    if (y.size() < 2) {
        throw InvalidArgument("fit: need at least 2 observations");
    }
    detail::check_labels(y);
    detail::Design d(X);
    detail::LogisticPathSolver solver(d, y, opt);
    std::vector<EnetFit> out;
    out.reserve(lambdas.size());
    for (double l : lambdas) {
        if (!(l >= 0)) {
            throw InvalidArgument("lambda must be non-negative");
        }
        out.push_back(solver.solve(l));
    }
    return out;
}

inline EnetFit fit(const Eigen::Ref<const Eigen::MatrixXd>& X, std::span<const int> y, double lambda, const EnetOptions& opt = {}) {
    const double l[] = {lambda};
    auto res = fit_path(X, y, l, opt);
    if (!res.front().converged) {
        warn("elastic net did not converge at lambda = " + std::to_string(lambda));
    }
    if (res.front().separation_suspected) {
        warn("elastic net coefficients are diverging; the classes may be perfectly separable");
    }
    return std::move(res.front());
}

/**
 * `logistic(b0 + X b)` for each row of `X`.
 */
inline std::vector<double> predict_prob(const EnetFit& fit, const Eigen::Ref<const Eigen::MatrixXd>& X) {
    if (static_cast<std::size_t>(X.cols()) != fit.coefficients.size()) {
        throw InvalidArgument("predict_prob: matrix has " + std::to_string(X.cols()) + " columns but the fit has " +
                              std::to_string(fit.coefficients.size()) + " coefficients");
    }
    std::vector<double> eta(static_cast<std::size_t>(X.rows()), fit.intercept);
    for (std::size_t j = 0; j < fit.coefficients.size(); ++j) {
        const double b = fit.coefficients[j];
        if (b == 0.0) {
            continue;
        }
        auto col = X.col(static_cast<Eigen::Index>(j));
        for (Eigen::Index i = 0; i < X.rows(); ++i) {
            eta[static_cast<std::size_t>(i)] += b * col[i];
        }
    }
    for (auto& e : eta) {
        e = logistic(e);
    }
    return eta;
}

/**
 * Fold label per observation, stratified by class: each class is shuffled and dealt round-robin,
 * the negatives continuing where the positives stopped, so fold sizes differ by at most one and
 * each fold's class counts differ by at most one from every other fold's.
 */
inline std::vector<std::size_t> stratified_folds(std::span<const int> y, std::size_t folds, std::uint64_t seed) {
    if (folds < 2) {
        throw InvalidArgument("need at least 2 folds");
    }
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < y.size(); ++i) {
        (y[i] ? pos : neg).push_back(i);
    }
    Rng rng(seed);
    auto shuffle = [&](std::vector<std::size_t>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::uniform_int_distribution<std::size_t> pick(0, i - 1);
            std::swap(v[i - 1], v[pick(rng)]);
        }
    };
    shuffle(pos);
    shuffle(neg);
    std::vector<std::size_t> out(y.size());
    std::size_t k = 0;
    for (auto i : pos) {
        out[i] = k++ % folds;
    }
    for (auto i : neg) {
        out[i] = k++ % folds;
    }
    return out;
}

/**
 * Fold count usable with these labels: `requested`, reduced (with a warning) so every fold
 * holds both classes.
 */
inline std::size_t usable_folds(std::span<const int> y, std::size_t requested) {
    std::size_t ones = static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
    std::size_t minority = std::min(ones, y.size() - ones);
    if (minority < 2) {
        throw DegenerateLabels("cross-validation needs at least 2 observations of each class");
    }
    if (minority < requested) {
        warn("only " + std::to_string(minority) + " observations in the minority class; using " + std::to_string(minority) +
             " folds instead of " + std::to_string(requested));
        return minority;
    }
    return requested;
}

struct CvLambdaOptions {
    std::size_t folds = 10;
    std::size_t path_length = 50;
    double min_ratio = 1e-3;
    std::uint64_t seed = 0;
    int threads = 1;
    /// Stop walking down the path once the mean deviance has not improved for this many
    /// consecutive lambdas (0 evaluates the whole path).
    std::size_t patience = 10;
};

struct CvLambdaResult {
    std::vector<double> lambdas;
    std::vector<double> mean_deviance;
    std::size_t best_index = 0;
    double lambda_best = 0;
    std::size_t folds = 0;
};

inline std::vector<double> lambda_path(double lmax, std::size_t length, double min_ratio) {
    if (lmax <= 0 || length == 0) {
        return {0.0};
    }
    std::vector<double> out(length);
    for (std::size_t k = 0; k < length; ++k) {
        double t = length == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(length - 1);
        out[k] = lmax * std::pow(min_ratio, t);
    }
    out.front() = lmax;
    return out;
}

/**
 * Choose lambda by stratified K-fold cross-validation on a geometric path from `lambda_max`
 * down to `lambda_max * min_ratio`, minimizing mean out-of-fold binomial deviance.
 * Ties go to the larger lambda. With `patience > 0` the folds advance along the path in
 * lock-step and stop once the minimum is `patience` lambdas behind; `lambdas` and
 * `mean_deviance` then cover only the evaluated prefix.
 */
inline CvLambdaResult cv_lambda(const Eigen::Ref<const Eigen::MatrixXd>& X, std::span<const int> y, const EnetOptions& opt,
                                const CvLambdaOptions& cv = {}) {
    CvLambdaResult out;
    const double lmax = lambda_max(X, y, opt.alpha);
    out.lambdas = lambda_path(lmax, cv.path_length, cv.min_ratio);
    out.folds = usable_folds(y, cv.folds);
    const auto fold_of = stratified_folds(y, out.folds, cv.seed);
    const std::size_t L = out.lambdas.size();

    struct FoldState {
        std::vector<std::size_t> test;
        std::vector<int> ytrain;
        std::unique_ptr<detail::Design> design;
        std::unique_ptr<detail::LogisticPathSolver> solver;
    };
    std::vector<FoldState> state(out.folds);
    for (std::size_t i = 0; i < y.size(); ++i) {
        state[fold_of[i]].test.push_back(i);
    }
    std::vector<std::vector<double>> fold_dev(out.folds, std::vector<double>(L, 0.0));

    auto advance = [&](std::size_t f, std::size_t from, std::size_t to) {
        auto& st = state[f];
        if (!st.solver) {
            std::vector<std::size_t> train;
            for (std::size_t i = 0; i < y.size(); ++i) {
                if (fold_of[i] != f) {
                    train.push_back(i);
                    st.ytrain.push_back(y[i]);
                }
            }
            st.design = std::make_unique<detail::Design>(X, train);
            st.solver = std::make_unique<detail::LogisticPathSolver>(*st.design, st.ytrain, opt);
        }
        for (std::size_t k = from; k < to; ++k) {
            EnetFit fit = st.solver->solve(out.lambdas[k]);
            double dev = 0;
            for (auto i : st.test) {
                double eta = fit.intercept;
                for (std::size_t j = 0; j < fit.coefficients.size(); ++j) {
                    if (fit.coefficients[j] != 0.0) {
                        eta += fit.coefficients[j] * X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
                    }
                }
                dev += binomial_deviance(y[i], eta);
            }
            fold_dev[f][k] = dev;
        }
        if (to == L) {
            st.solver.reset();
            st.design.reset();
        }
    };

    out.mean_deviance.clear();
    out.best_index = 0;
    const std::size_t chunk = cv.patience == 0 ? L : std::max<std::size_t>(1, cv.patience / 2);
    std::size_t done = 0;
    while (done < L) {
        const std::size_t to = std::min(L, done + chunk);
        parallel_for(out.folds, cv.threads, [&](std::size_t f) { advance(f, done, to); });
        for (std::size_t k = done; k < to; ++k) {
            double total = 0;
            for (std::size_t f = 0; f < out.folds; ++f) {
                total += fold_dev[f][k];
            }
            out.mean_deviance.push_back(total / static_cast<double>(y.size()));
            if (out.mean_deviance[k] < out.mean_deviance[out.best_index]) {
                out.best_index = k;
            }
        }
        done = to;
        if (cv.patience > 0 && done - 1 - out.best_index >= cv.patience) {
            break;
        }
    }
    out.lambdas.resize(done);
    out.lambda_best = out.lambdas[out.best_index];
    return out;
}

/**
 * Cross-validate lambda, then fit the full data along the path down to the chosen lambda.
 */
inline std::pair<EnetFit, CvLambdaResult> fit_cv(const Eigen::Ref<const Eigen::MatrixXd>& X, std::span<const int> y, const EnetOptions& opt,
                                                 const CvLambdaOptions& cv = {}) {
    auto cvres = cv_lambda(X, y, opt, cv);
    std::span<const double> path(cvres.lambdas.data(), cvres.best_index + 1);
    auto fits = fit_path(X, y, path, opt);
    return {std::move(fits.back()), std::move(cvres)};
}

/**
 * Largest KKT violation of a fit, evaluated on the internally standardized scale:
 * for nonzero b_j, `|g_j - lambda (1 - alpha) b_j - lambda alpha sign(b_j)|`; for zero b_j,
 * `max(0, |g_j| - lambda alpha)`; plus `|g_0|` for the intercept. Here `g` is the gradient of
 * the mean log-likelihood.
 */
inline double kkt_residual(const EnetFit& fit, const Eigen::Ref<const Eigen::MatrixXd>& X, std::span<const int> y) {
    detail::Design d(X);
    const auto n = d.n();
    Eigen::VectorXd resid(n);
    auto q = predict_prob(fit, X);
    for (Eigen::Index i = 0; i < n; ++i) {
        resid[i] = y[static_cast<std::size_t>(i)] - q[static_cast<std::size_t>(i)];
    }
    Eigen::VectorXd g = d.xs.transpose() * resid / static_cast<double>(n);
    double worst = std::abs(resid.mean());
    const double l1 = fit.lambda * fit.alpha, l2 = fit.lambda * (1 - fit.alpha);
    for (Eigen::Index j = 0; j < d.g(); ++j) {
        const auto uj = static_cast<std::size_t>(j);
        if (!d.usable[uj]) {
            continue;
        }
        double b = fit.coefficients[uj] * d.sd[uj];
        double r = b != 0.0 ? std::abs(g[j] - l2 * b - l1 * (b > 0 ? 1.0 : -1.0)) : std::max(0.0, std::abs(g[j]) - l1);
        worst = std::max(worst, r);
    }
    return worst;
}

inline nlohmann::json fit_to_json(const EnetFit& fit) {
    nlohmann::json coefs = nlohmann::json::object();
    for (std::size_t j = 0; j < fit.coefficients.size(); ++j) {
        const std::string id = j < fit.predictor_ids.size() ? fit.predictor_ids[j] : std::to_string(j);
        coefs[id] = fit.coefficients[j];
    }
    return {
        {"alpha", fit.alpha},
        {"lambda", fit.lambda},
        {"intercept", fit.intercept},
        {"coefficients", std::move(coefs)},
        {"converged", fit.converged},
        {"objective", fit.objective},
    };
}

/**
 * Inverse of `fit_to_json()`; `predictor_ids` fixes the coefficient order.
 */
inline EnetFit fit_from_json(const nlohmann::json& j, const std::vector<std::string>& predictor_ids) {
    try {
        EnetFit fit;
        fit.alpha = j.at("alpha").get<double>();
        fit.lambda = j.at("lambda").get<double>();
        fit.intercept = j.at("intercept").get<double>();
        fit.converged = j.at("converged").get<bool>();
        fit.objective = j.value("objective", 0.0);
        fit.predictor_ids = predictor_ids;
        const auto& coefs = j.at("coefficients");
        if (coefs.size() != predictor_ids.size()) {
            throw ValidationError("elastic-net fit has " + std::to_string(coefs.size()) + " coefficients, expected " +
                                  std::to_string(predictor_ids.size()));
        }
        fit.coefficients.reserve(predictor_ids.size());
        for (const auto& id : predictor_ids) {
            fit.coefficients.push_back(coefs.at(id).get<double>());
        }
        return fit;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed elastic-net fit JSON: ") + e.what());
    }
}

}

#endif
