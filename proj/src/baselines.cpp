#include "scab/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace scab {

ConfoundEffect estimate_confound_effect(const Matrix& x, const IntVector& c, int g_categories) {
    if (x.rows() != c.size())
        throw std::invalid_argument("estimate_confound_effect: X rows != label length");
    if (g_categories < 1) throw std::invalid_argument("estimate_confound_effect: G must be >= 1");

    ConfoundEffect effect;
    effect.beta = Matrix::Zero(g_categories, x.cols());
    Eigen::VectorXi counts = Eigen::VectorXi::Zero(g_categories);
    for (int i = 0; i < x.rows(); ++i) {
        const int cls = c[i];
        if (cls < 0 || cls >= g_categories)
            throw std::invalid_argument("estimate_confound_effect: label outside [0, G)");
        effect.beta.row(cls) += x.row(i);
        counts[cls]++;
    }
    for (int g = 0; g < g_categories; ++g) {
        if (counts[g] == 0)
            throw std::invalid_argument("estimate_confound_effect: empty confound class " + std::to_string(g));
        effect.beta.row(g) /= counts[g];
    }
    return effect;
}

Matrix ruv_purify(const Matrix& x, const IntVector& c, const ConfoundEffect& effect) {
    if (x.rows() != c.size()) throw std::invalid_argument("ruv_purify: X rows != label length");
    if (x.cols() != effect.beta.cols())
        throw std::invalid_argument("ruv_purify: feature dimension mismatch");
    Matrix out = x;
    for (int i = 0; i < x.rows(); ++i) {
        const int cls = c[i];
        if (cls < 0 || cls >= effect.beta.rows())
            throw std::invalid_argument("ruv_purify: label outside [0, G)");
        out.row(i) -= effect.beta.row(cls);
    }
    return out;
}

// ---------------------------------------------------------------------------
// k-means
// ---------------------------------------------------------------------------

namespace {

// squared distances of every row of x to every centroid, K columns
Matrix squared_distances(const Matrix& x, const Matrix& centroids) {
    const Vector x_norms = x.rowwise().squaredNorm();
    const Vector c_norms = centroids.rowwise().squaredNorm();
    Matrix d2 = -2.0 * (x * centroids.transpose());
    d2.colwise() += x_norms;
    d2.rowwise() += c_norms.transpose();
    return d2.cwiseMax(0.0);
}

// greedy k-means++: several D^2-weighted candidates per step, keeping the
// one that shrinks the potential the most
Matrix kmeans_pp_seed(const Matrix& x, int k, Rng& rng) {
    const int n = static_cast<int>(x.rows());
    const int n_candidates = 2 + static_cast<int>(std::log(static_cast<double>(k)));
    Matrix centroids(k, x.cols());
    centroids.row(0) = x.row(static_cast<int>(rng.uniform_index(n)));
    Vector best_d2 = (x.rowwise() - centroids.row(0)).rowwise().squaredNorm();
    for (int j = 1; j < k; ++j) {
        int best_pick = -1;
        double best_potential = std::numeric_limits<double>::infinity();
        Vector best_candidate_d2;
        for (int c = 0; c < n_candidates; ++c) {
            const double total = best_d2.sum();
            int pick;
            if (total <= 0.0) {
                pick = static_cast<int>(rng.uniform_index(n));
            } else {
                double r = rng.uniform() * total;
                pick = n - 1;
                for (int i = 0; i < n; ++i) {
                    r -= best_d2[i];
                    if (r <= 0.0) {
                        pick = i;
                        break;
                    }
                }
            }
            Vector d2 = best_d2.cwiseMin((x.rowwise() - x.row(pick)).rowwise().squaredNorm());
            const double potential = d2.sum();
            if (potential < best_potential) {
                best_potential = potential;
                best_pick = pick;
                best_candidate_d2 = std::move(d2);
            }
        }
        centroids.row(j) = x.row(best_pick);
        best_d2 = std::move(best_candidate_d2);
    }
    return centroids;
}

KmeansResult lloyd(const Matrix& x, Matrix centroids, int max_iters) {
    const int n = static_cast<int>(x.rows());
    const int k = static_cast<int>(centroids.rows());
    IntVector labels = IntVector::Constant(n, -1);

    for (int iter = 0; iter < max_iters; ++iter) {
        const Matrix d2 = squared_distances(x, centroids);
        bool changed = false;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double best_d = d2(i, 0);
            for (int j = 1; j < k; ++j) {
                if (d2(i, j) < best_d) {
                    best_d = d2(i, j);
                    best = j;
                }
            }
            if (labels[i] != best) {
                labels[i] = best;
                changed = true;
            }
        }
        if (!changed && iter > 0) break;

        Matrix sums = Matrix::Zero(k, x.cols());
        Eigen::VectorXi counts = Eigen::VectorXi::Zero(k);
        for (int i = 0; i < n; ++i) {
            sums.row(labels[i]) += x.row(i);
            counts[labels[i]]++;
        }
        for (int j = 0; j < k; ++j) {
            if (counts[j] > 0) {
                centroids.row(j) = sums.row(j) / counts[j];
            } else {
                // re-seed an empty cluster at the point farthest from its centroid
                int farthest = 0;
                double worst = -1.0;
                for (int i = 0; i < n; ++i) {
                    const double dist = (x.row(i) - centroids.row(labels[i])).squaredNorm();
                    if (dist > worst) {
                        worst = dist;
                        farthest = i;
                    }
                }
                centroids.row(j) = x.row(farthest);
            }
        }
    }

    // final assignment against the final centroids
    const Matrix d2 = squared_distances(x, centroids);
    double inertia = 0.0;
    for (int i = 0; i < n; ++i) {
        int best = 0;
        double best_d = d2(i, 0);
        for (int j = 1; j < k; ++j) {
            if (d2(i, j) < best_d) {
                best_d = d2(i, j);
                best = j;
            }
        }
        labels[i] = best;
        inertia += best_d;
    }
    return {std::move(labels), std::move(centroids), inertia};
}

}  // namespace

KmeansResult kmeans(const Matrix& x, int k, int max_iters, int n_init, std::uint64_t seed) {
    if (k < 1) throw std::invalid_argument("kmeans: K must be >= 1");
    if (x.rows() < k) throw std::invalid_argument("kmeans: N must be >= K");
    if (n_init < 1 || max_iters < 1) throw std::invalid_argument("kmeans: iteration counts must be positive");

    KmeansResult best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (int restart = 0; restart < n_init; ++restart) {
        Rng rng(derive_seed(seed, 0x6b6d6e73ULL + restart));
        KmeansResult result = lloyd(x, kmeans_pp_seed(x, k, rng), max_iters);
        if (result.inertia < best.inertia) best = std::move(result);
    }
    return best;
}

// ---------------------------------------------------------------------------
// Confound-label propagation
// ---------------------------------------------------------------------------

namespace {

// Multinomial logistic regression trained with a fixed Adam budget.
struct SoftmaxClassifier {
    Matrix w;  // G x D
    Vector b;  // G

    void fit(const Matrix& x, const IntVector& labels, int g, int iters, double lr) {
        const int n = static_cast<int>(x.rows());
        const int d = static_cast<int>(x.cols());
        w = Matrix::Zero(g, d);
        b = Vector::Zero(g);
        Matrix mw = Matrix::Zero(g, d), vw = Matrix::Zero(g, d);
        Vector mb = Vector::Zero(g), vb = Vector::Zero(g);
        const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

        for (int t = 1; t <= iters; ++t) {
            Matrix logits = x * w.transpose();
            logits.rowwise() += b.transpose();
            // softmax rows minus one-hot targets
            for (int i = 0; i < n; ++i) {
                const double mx = logits.row(i).maxCoeff();
                Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp();
                logits.row(i) = e / e.sum();
                logits(i, labels[i]) -= 1.0;
            }
            const Matrix gw = (logits.transpose() * x) / n;
            const Vector gb = logits.colwise().sum().transpose() / n;

            const double bc1 = 1.0 - std::pow(beta1, t);
            const double bc2 = 1.0 - std::pow(beta2, t);
            mw = beta1 * mw + (1 - beta1) * gw;
            vw = beta2 * vw + (1 - beta2) * gw.cwiseProduct(gw);
            mb = beta1 * mb + (1 - beta1) * gb;
            vb = beta2 * vb + (1 - beta2) * gb.cwiseProduct(gb);
            w -= lr * (mw / bc1).cwiseQuotient(((vw / bc2).cwiseSqrt().array() + eps).matrix());
            b -= lr * (mb / bc1).cwiseQuotient(((vb / bc2).cwiseSqrt().array() + eps).matrix());
        }
    }

    IntVector predict(const Matrix& x) const {
        Matrix logits = x * w.transpose();
        logits.rowwise() += b.transpose();
        IntVector out(x.rows());
        for (int i = 0; i < x.rows(); ++i) {
            int best = 0;
            logits.row(i).maxCoeff(&best);
            out[i] = best;
        }
        return out;
    }
};

constexpr int kPropagationIters = 400;
constexpr double kPropagationLr = 0.05;

}  // namespace

PropagationResult propagate_confound_labels(const DatasetBundle& bundle, std::uint64_t seed) {
    if (bundle.c.kind != ConfoundKind::discrete)
        throw std::invalid_argument("propagate_confound_labels: requires a discrete confound");
    if (bundle.c.mask.empty())
        throw std::invalid_argument("propagate_confound_labels: bundle has no mask");
    const int n = bundle.n();
    const int g = bundle.g_categories;

    std::vector<int> observed, unobserved;
    for (int i = 0; i < n; ++i)
        (bundle.c.mask[i] ? observed : unobserved).push_back(i);

    std::vector<std::vector<int>> by_class(g);
    for (int idx : observed) by_class[bundle.c.discrete[idx]].push_back(idx);
    for (int cls = 0; cls < g; ++cls)
        if (by_class[cls].empty())
            throw std::invalid_argument("propagate_confound_labels: class " + std::to_string(cls) +
                                        " has no observed label");

    // stratified 10% validation split; every class keeps at least one
    // training sample
    Rng rng(derive_seed(seed, 0x70726f70ULL));
    std::vector<int> train_idx, val_idx;
    for (int cls = 0; cls < g; ++cls) {
        auto members = by_class[cls];
        rng.shuffle(members);
        int n_val = static_cast<int>(members.size() / 10);
        n_val = std::min<int>(n_val, static_cast<int>(members.size()) - 1);
        for (std::size_t i = 0; i < members.size(); ++i)
            (static_cast<int>(i) < n_val ? val_idx : train_idx).push_back(members[i]);
    }

    auto gather = [&](const std::vector<int>& idx) {
        Matrix m(idx.size(), bundle.dim());
        for (std::size_t i = 0; i < idx.size(); ++i) m.row(i) = bundle.x.row(idx[i]).cast<double>();
        return m;
    };
    IntVector train_labels(train_idx.size());
    for (std::size_t i = 0; i < train_idx.size(); ++i) train_labels[i] = bundle.c.discrete[train_idx[i]];

    SoftmaxClassifier clf;
    clf.fit(gather(train_idx), train_labels, g, kPropagationIters, kPropagationLr);

    PropagationResult result;
    result.n_validation = static_cast<int>(val_idx.size());
    if (!val_idx.empty()) {
        const IntVector val_pred = clf.predict(gather(val_idx));
        int correct = 0;
        for (std::size_t i = 0; i < val_idx.size(); ++i)
            if (val_pred[i] == bundle.c.discrete[val_idx[i]]) ++correct;
        result.validation_accuracy = static_cast<double>(correct) / val_idx.size();
    }

    result.bundle = bundle;
    if (!unobserved.empty()) {
        const IntVector pred = clf.predict(gather(unobserved));
        for (std::size_t i = 0; i < unobserved.size(); ++i)
            result.bundle.c.discrete[unobserved[i]] = pred[i];
    }
    result.bundle.c.mask.clear();  // fully labeled now
    result.bundle.validate();
    return result;
}

}  // namespace scab
