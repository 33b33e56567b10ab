#pragma once

#include <cstdint>
#include <optional>

#include "scab/common.hpp"
#include "scab/dataset.hpp"

namespace scab {

// Per-category effect centroids of the linear confound model X = A*alpha +
// C*beta + eps, estimated with A*alpha = 0; for one-hot C this is the
// per-class feature mean.
struct ConfoundEffect {
    Matrix beta;  // G x D
};

ConfoundEffect estimate_confound_effect(const Matrix& x, const IntVector& c, int g_categories);

// X_hat = X - C*beta; every confound class in the output has zero mean.
Matrix ruv_purify(const Matrix& x, const IntVector& c, const ConfoundEffect& effect);

struct KmeansResult {
    IntVector labels;
    Matrix centroids;  // K x D
    double inertia = 0.0;
};

// Lloyd's algorithm with k-means++ seeding, best of n_init restarts by
// (inertia, restart index).
KmeansResult kmeans(const Matrix& x, int k, int max_iters = 300, int n_init = 10,
                    std::uint64_t seed = 0);

struct PropagationResult {
    DatasetBundle bundle;                      // confound labels filled in for every sample
    std::optional<double> validation_accuracy; // held-in accuracy on a 10% split of the labeled set
    int n_validation = 0;
};

// Trains a multinomial logistic-regression classifier on the observed
// (x, c) pairs and predicts the confound label of every unobserved sample.
PropagationResult propagate_confound_labels(const DatasetBundle& bundle, std::uint64_t seed);

}  // namespace scab
