// Test-only reference implementations, kept independent of the library code
// they check: brute-force search, enumeration and Monte Carlo estimates.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "scab/common.hpp"

namespace oracle {

// KL[p || q] for diagonal Gaussians by Monte Carlo: E_p[log p(z) - log q(z)].
inline double mc_kl_diag_gaussians(const scab::Vector& mean_p, const scab::Vector& log_var_p,
                                   const scab::Vector& mean_q, const scab::Vector& log_var_q,
                                   int n_draws, std::uint64_t seed) {
    scab::Rng rng(seed);
    const int d = static_cast<int>(mean_p.size());
    auto log_density = [d](const scab::Vector& z, const scab::Vector& mean,
                           const scab::Vector& log_var) {
        double acc = -0.5 * d * std::log(2.0 * M_PI);
        for (int j = 0; j < d; ++j)
            acc -= 0.5 * (log_var[j] + (z[j] - mean[j]) * (z[j] - mean[j]) / std::exp(log_var[j]));
        return acc;
    };
    double acc = 0.0;
    scab::Vector z(d);
    for (int i = 0; i < n_draws; ++i) {
        for (int j = 0; j < d; ++j)
            z[j] = mean_p[j] + std::exp(log_var_p[j] / 2.0) * rng.normal();
        acc += log_density(z, mean_p, log_var_p) - log_density(z, mean_q, log_var_q);
    }
    return acc / n_draws;
}

// Global k-means optimum by enumerating all K^N assignments (centroid = mean).
inline double brute_force_kmeans_cost(const scab::Matrix& x, int k) {
    const int n = static_cast<int>(x.rows());
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> assign(n, 0);
    const long long total = static_cast<long long>(std::pow(k, n));
    for (long long code = 0; code < total; ++code) {
        long long c = code;
        for (int i = 0; i < n; ++i) {
            assign[i] = static_cast<int>(c % k);
            c /= k;
        }
        scab::Matrix sums = scab::Matrix::Zero(k, x.cols());
        std::vector<int> counts(k, 0);
        for (int i = 0; i < n; ++i) {
            sums.row(assign[i]) += x.row(i);
            counts[assign[i]]++;
        }
        double cost = 0.0;
        for (int i = 0; i < n; ++i) {
            if (counts[assign[i]] == 0) continue;
            cost += (x.row(i) - sums.row(assign[i]) / counts[assign[i]]).squaredNorm();
        }
        best = std::min(best, cost);
    }
    return best;
}

// Minimum assignment cost by checking every permutation (m <= ~8).
inline double brute_force_assignment_cost(const scab::Matrix& cost) {
    const int m = static_cast<int>(cost.rows());
    std::vector<int> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double total = 0.0;
        for (int i = 0; i < m; ++i) total += cost(i, perm[i]);
        best = std::min(best, total);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

// Best label-matching accuracy by checking every permutation of the larger
// label set.
inline double brute_force_accuracy(const scab::IntVector& pred, const scab::IntVector& truth) {
    const int kp = pred.maxCoeff() + 1;
    const int kt = truth.maxCoeff() + 1;
    const int m = std::max(kp, kt);
    std::vector<int> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    int best = 0;
    do {
        int correct = 0;
        for (int i = 0; i < pred.size(); ++i)
            if (perm[pred[i]] == truth[i]) ++correct;
        best = std::max(best, correct);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return static_cast<double>(best) / pred.size();
}

// Nearest centroid by direct scan.
inline scab::IntVector nearest_centroid_labels(const scab::Matrix& z, const scab::Matrix& e) {
    scab::IntVector out(z.rows());
    for (int i = 0; i < z.rows(); ++i) {
        int best = 0;
        double best_d = (z.row(i) - e.row(0)).squaredNorm();
        for (int j = 1; j < e.rows(); ++j) {
            const double d = (z.row(i) - e.row(j)).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = j;
            }
        }
        out[i] = best;
    }
    return out;
}

}  // namespace oracle
