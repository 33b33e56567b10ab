#include "scab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace scab {

ContingencyTable contingency(const IntVector& pred, const IntVector& truth) {
    if (pred.size() != truth.size())
        throw std::invalid_argument("contingency: label vectors differ in length");
    if (pred.size() == 0) throw std::invalid_argument("contingency: empty labels");
    if (pred.minCoeff() < 0 || truth.minCoeff() < 0)
        throw std::invalid_argument("contingency: labels must be non-negative");

    ContingencyTable table;
    table.n = static_cast<int>(pred.size());
    const int rows = pred.maxCoeff() + 1;
    const int cols = truth.maxCoeff() + 1;
    table.counts = Eigen::MatrixXi::Zero(rows, cols);
    for (int i = 0; i < table.n; ++i) table.counts(pred[i], truth[i])++;
    return table;
}

std::vector<int> hungarian(const Matrix& cost) {
    if (cost.rows() != cost.cols()) throw std::invalid_argument("hungarian: cost matrix must be square");
    if (!cost.allFinite()) throw std::invalid_argument("hungarian: cost matrix must be finite");
    const int n = static_cast<int>(cost.rows());
    if (n == 0) return {};

    // shortest augmenting path with potentials, 1-based bookkeeping
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    std::vector<int> perm(n, -1);
    for (int j = 1; j <= n; ++j)
        if (p[j] != 0) perm[p[j] - 1] = j - 1;
    return perm;
}

double clustering_accuracy(const IntVector& pred, const IntVector& truth) {
    const ContingencyTable table = contingency(pred, truth);
    const int m = static_cast<int>(std::max(table.counts.rows(), table.counts.cols()));
    Matrix cost = Matrix::Zero(m, m);
    cost.topLeftCorner(table.counts.rows(), table.counts.cols()) = -table.counts.cast<double>();
    const std::vector<int> perm = hungarian(cost);
    double matched = 0.0;
    for (int i = 0; i < m; ++i) matched -= cost(i, perm[i]);
    return matched / table.n;
}

double nmi(const IntVector& pred, const IntVector& truth) {
    const ContingencyTable table = contingency(pred, truth);
    const double n = table.n;
    const Eigen::VectorXi row_sums = table.counts.rowwise().sum();
    const Eigen::VectorXi col_sums = table.counts.colwise().sum();

    double h_pred = 0.0, h_truth = 0.0, mutual = 0.0;
    for (int i = 0; i < row_sums.size(); ++i)
        if (row_sums[i] > 0) h_pred -= row_sums[i] / n * std::log(row_sums[i] / n);
    for (int j = 0; j < col_sums.size(); ++j)
        if (col_sums[j] > 0) h_truth -= col_sums[j] / n * std::log(col_sums[j] / n);
    if (h_pred <= 0.0 || h_truth <= 0.0) return 0.0;

    for (int i = 0; i < table.counts.rows(); ++i) {
        for (int j = 0; j < table.counts.cols(); ++j) {
            const int c = table.counts(i, j);
            if (c == 0) continue;
            mutual += c / n * std::log(c * n / (static_cast<double>(row_sums[i]) * col_sums[j]));
        }
    }
    const double value = mutual / std::sqrt(h_pred * h_truth);
    return std::clamp(value, 0.0, 1.0);
}

double ari(const IntVector& pred, const IntVector& truth) {
    const ContingencyTable table = contingency(pred, truth);
    auto pairs = [](std::int64_t c) { return c * (c - 1) / 2; };

    std::int64_t sum_ij = 0;
    for (int i = 0; i < table.counts.rows(); ++i)
        for (int j = 0; j < table.counts.cols(); ++j) sum_ij += pairs(table.counts(i, j));

    std::int64_t sum_a = 0, sum_b = 0;
    const Eigen::VectorXi row_sums = table.counts.rowwise().sum();
    const Eigen::VectorXi col_sums = table.counts.colwise().sum();
    for (int i = 0; i < row_sums.size(); ++i) sum_a += pairs(row_sums[i]);
    for (int j = 0; j < col_sums.size(); ++j) sum_b += pairs(col_sums[j]);

    const double total = static_cast<double>(pairs(table.n));
    const double expected = static_cast<double>(sum_a) * static_cast<double>(sum_b) / total;
    const double maximum = 0.5 * (static_cast<double>(sum_a) + static_cast<double>(sum_b));
    if (maximum == expected) return 1.0;  // both partitions trivial
    return (static_cast<double>(sum_ij) - expected) / (maximum - expected);
}

BalanceResult balance(const IntVector& pred, const IntVector& confound, int k_clusters,
                      int g_categories) {
    if (pred.size() != confound.size())
        throw std::invalid_argument("balance: label vectors differ in length");
    if (g_categories < 1) throw std::invalid_argument("balance: g_categories must be >= 1");

    BalanceResult result;
    result.per_cluster.assign(k_clusters, 0.0);
    result.overall = 1.0;
    Eigen::MatrixXi counts = Eigen::MatrixXi::Zero(k_clusters, g_categories);
    for (int i = 0; i < pred.size(); ++i) {
        if (pred[i] < 0 || pred[i] >= k_clusters)
            throw std::invalid_argument("balance: prediction outside [0, K)");
        counts(pred[i], confound[i])++;
    }
    for (int k = 0; k < k_clusters; ++k) {
        const int lo = counts.row(k).minCoeff();
        const int hi = counts.row(k).maxCoeff();
        const double b = (lo == 0) ? 0.0 : static_cast<double>(lo) / hi;
        result.per_cluster[k] = b;
        result.overall = std::min(result.overall, b);
    }
    return result;
}

double confound_leakage(const IntVector& pred, const IntVector& confound) {
    return nmi(pred, confound);
}

}  // namespace scab
