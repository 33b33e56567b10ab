#pragma once

#include <utility>
#include <vector>

#include "scab/common.hpp"

namespace scab {

struct ContingencyTable {
    Eigen::MatrixXi counts;  // rows: predicted labels, cols: true labels
    int n = 0;
};

// Labels must be small non-negative integers; the table spans [0, max+1) on
// each side.
ContingencyTable contingency(const IntVector& pred, const IntVector& truth);

// Minimum-cost assignment on a square cost matrix; returns the permutation
// pi with pi[row] = column.
std::vector<int> hungarian(const Matrix& cost);

// Fraction correct under the best one-to-one label matching.
double clustering_accuracy(const IntVector& pred, const IntVector& truth);

// I(pred; truth) / sqrt(H(pred) H(truth)), natural log; 0 when either
// marginal entropy vanishes.
double nmi(const IntVector& pred, const IntVector& truth);

// Adjusted Rand index by the standard pair-counting formula.
double ari(const IntVector& pred, const IntVector& truth);

struct BalanceResult {
    std::vector<double> per_cluster;  // min cross-class count ratio; 0 for empty clusters
    double overall = 0.0;
};

BalanceResult balance(const IntVector& pred, const IntVector& confound, int k_clusters,
                      int g_categories);

// NMI between the partition and a discrete confound; the operational test of
// assignment/confound independence.
double confound_leakage(const IntVector& pred, const IntVector& confound);

}  // namespace scab
