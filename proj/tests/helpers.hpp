#ifndef CORRGROUP_TESTS_HELPERS_HPP
#define CORRGROUP_TESTS_HELPERS_HPP

#include <corrgroup/corrgroup.hpp>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace testing_support {

inline corrgroup::ExpressionMatrix matrix(const Eigen::MatrixXd& v) {
    return corrgroup::ExpressionMatrix(v, corrgroup::numbered_ids("g", static_cast<std::size_t>(v.cols())),
                                       corrgroup::numbered_ids("c", static_cast<std::size_t>(v.rows())));
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("corrgroup_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Labels drawn from a logistic model on the first column, with both classes guaranteed.
inline std::vector<int> labels_from(const Eigen::MatrixXd& x, std::uint64_t seed, double strength = 2.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<int> y(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        y[static_cast<std::size_t>(i)] = u(rng) < 1 / (1 + std::exp(-strength * x(i, 0))) ? 1 : 0;
    }
    y[0] = 1;
    y[1] = 0;
    return y;
}

/// Captures warnings for the lifetime of the object.
struct WarningCapture {
    std::vector<std::string> messages;
    WarningCapture() {
        corrgroup::set_diagnostic_sink([this](corrgroup::Level level, const std::string& m) {
            if (level == corrgroup::Level::warning) {
                messages.push_back(m);
            }
        });
    }
    ~WarningCapture() { corrgroup::set_diagnostic_sink({}); }
};

}

#endif
