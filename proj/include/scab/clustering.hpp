#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "scab/common.hpp"

namespace scab {

// K centroids with the exponential-moving-average accumulators that keep
// minibatch updates stable: e_k = mu_k / B_k after every update.
struct CentroidBank {
    Matrix e;        // K x d
    Matrix mu;       // K x d EMA numerators
    Vector b_mass;   // K EMA masses
    double gamma = 0.995;
    double tau = 5.0;

    int k() const { return static_cast<int>(e.rows()); }
    bool initialized() const { return e.rows() > 0; }
};

struct Assignment {
    Matrix lambda;  // B x K soft assignments, rows sum to 1
    IntVector s;    // hard cluster index, argmax per row (ties -> lowest index)
};

// lambda_nk = softmax_k(-tau * ||z_n - e_k||^2), max-subtracted.
Assignment soft_assign(const Matrix& z, const CentroidBank& bank);

// mu_k <- gamma mu_k + (1-gamma) sum_b s_bk z_b, likewise for the mass;
// e_k = mu_k / B_k. Empty clusters keep their centroid.
void ema_update(CentroidBank& bank, const Matrix& z, const IntVector& s);

// k-means++ seeding followed by 10 Lloyd iterations; mu_k = e_k, B_k = 1.
CentroidBank init_centroids(const Matrix& z_all, int k, std::uint64_t seed,
                            double gamma = 0.995, double tau = 5.0);

// Index sets S_k = { n : s_n = k }; empty sets are permitted.
std::vector<std::vector<int>> extract_partition(const Matrix& z_all, const CentroidBank& bank);

// centroids.bin: u32 K, u32 d header then K*d f32le row-major.
void save_centroids(const Matrix& e, const std::filesystem::path& file);
Matrix load_centroids(const std::filesystem::path& file);

// assignments.bin: N u32le.
void save_assignments(const IntVector& s, const std::filesystem::path& file);
IntVector load_assignments(const std::filesystem::path& file);

}  // namespace scab
