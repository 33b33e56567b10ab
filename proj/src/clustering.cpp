#include "scab/clustering.hpp"

#include <cmath>
#include <fstream>

#include "scab/baselines.hpp"

namespace scab {

namespace fs = std::filesystem;

Assignment soft_assign(const Matrix& z, const CentroidBank& bank) {
    if (!bank.initialized()) throw std::invalid_argument("soft_assign: bank not initialized");
    if (z.cols() != bank.e.cols()) throw std::invalid_argument("soft_assign: dimension mismatch");
    const int b = static_cast<int>(z.rows());
    const int k = bank.k();

    Matrix logits = 2.0 * (z * bank.e.transpose());
    logits.colwise() -= z.rowwise().squaredNorm();
    logits.rowwise() -= bank.e.rowwise().squaredNorm().transpose();
    logits *= bank.tau;  // -tau * ||z - e||^2

    Assignment out;
    out.lambda.resize(b, k);
    out.s.resize(b);
    for (int i = 0; i < b; ++i) {
        int best = 0;
        double mx = logits(i, 0);
        for (int j = 1; j < k; ++j) {
            if (logits(i, j) > mx) {  // strict: ties keep the lowest index
                mx = logits(i, j);
                best = j;
            }
        }
        out.s[i] = best;
        Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp();
        out.lambda.row(i) = e / e.sum();
    }
    return out;
}

void ema_update(CentroidBank& bank, const Matrix& z, const IntVector& s) {
    if (!bank.initialized()) throw std::invalid_argument("ema_update: bank not initialized");
    if (z.rows() != s.size()) throw std::invalid_argument("ema_update: batch size mismatch");
    const int k = bank.k();

    Matrix batch_sum = Matrix::Zero(k, bank.e.cols());
    Vector batch_mass = Vector::Zero(k);
    for (int i = 0; i < z.rows(); ++i) {
        const int cls = s[i];
        if (cls < 0 || cls >= k) throw std::invalid_argument("ema_update: assignment outside [0, K)");
        batch_sum.row(cls) += z.row(i);
        batch_mass[cls] += 1.0;
    }

    const double g = bank.gamma;
    for (int j = 0; j < k; ++j) {
        const Eigen::RowVectorXd mu_next = g * bank.mu.row(j) + (1.0 - g) * batch_sum.row(j);
        const double mass_next = g * bank.b_mass[j] + (1.0 - g) * batch_mass[j];
        if (mass_next > 0.0) {
            bank.mu.row(j) = mu_next;
            bank.b_mass[j] = mass_next;
            bank.e.row(j) = mu_next / mass_next;
        }
        // mass_next == 0 only when gamma == 0 and the cluster got no batch
        // mass; keep the previous centroid and accumulators in that case.
    }
}

CentroidBank init_centroids(const Matrix& z_all, int k, std::uint64_t seed, double gamma, double tau) {
    if (z_all.rows() < k) throw std::invalid_argument("init_centroids: N must be >= K");
    if (!(tau > 0.0)) throw std::invalid_argument("init_centroids: tau must be positive");
    if (gamma < 0.0 || gamma > 1.0) throw std::invalid_argument("init_centroids: gamma must be in [0, 1]");
    const KmeansResult km = kmeans(z_all, k, /*max_iters=*/10, /*n_init=*/1, seed);
    CentroidBank bank;
    bank.e = km.centroids;
    bank.mu = km.centroids;
    bank.b_mass = Vector::Ones(k);
    bank.gamma = gamma;
    bank.tau = tau;
    return bank;
}

std::vector<std::vector<int>> extract_partition(const Matrix& z_all, const CentroidBank& bank) {
    const Assignment a = soft_assign(z_all, bank);
    std::vector<std::vector<int>> partition(bank.k());
    for (int i = 0; i < a.s.size(); ++i) partition[a.s[i]].push_back(i);
    return partition;
}

void save_centroids(const Matrix& e, const fs::path& file) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw FormatError(file.string() + ": cannot open for writing");
    const std::uint32_t k = static_cast<std::uint32_t>(e.rows());
    const std::uint32_t d = static_cast<std::uint32_t>(e.cols());
    out.write(reinterpret_cast<const char*>(&k), 4);
    out.write(reinterpret_cast<const char*>(&d), 4);
    std::vector<float> buf(e.size());
    std::size_t p = 0;
    for (int i = 0; i < e.rows(); ++i)
        for (int j = 0; j < e.cols(); ++j) buf[p++] = static_cast<float>(e(i, j));
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!out) throw FormatError(file.string() + ": write failed");
}

Matrix load_centroids(const fs::path& file) {
    std::ifstream in(file, std::ios::binary | std::ios::ate);
    if (!in) throw FormatError(file.string() + ": cannot open");
    const auto bytes = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    std::uint32_t k = 0, d = 0;
    in.read(reinterpret_cast<char*>(&k), 4);
    in.read(reinterpret_cast<char*>(&d), 4);
    if (!in) throw FormatError(file.string() + ": truncated header");
    if (bytes != 8 + static_cast<std::size_t>(k) * d * sizeof(float))
        throw FormatError(file.string() + ": size mismatch against declared K x d");
    std::vector<float> buf(static_cast<std::size_t>(k) * d);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw FormatError(file.string() + ": read failed");
    Matrix e(k, d);
    std::size_t p = 0;
    for (std::uint32_t i = 0; i < k; ++i)
        for (std::uint32_t j = 0; j < d; ++j) e(i, j) = buf[p++];
    return e;
}

void save_assignments(const IntVector& s, const fs::path& file) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw FormatError(file.string() + ": cannot open for writing");
    std::vector<std::uint32_t> buf(s.size());
    for (int i = 0; i < s.size(); ++i) buf[i] = static_cast<std::uint32_t>(s[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(std::uint32_t)));
    if (!out) throw FormatError(file.string() + ": write failed");
}

IntVector load_assignments(const fs::path& file) {
    std::ifstream in(file, std::ios::binary | std::ios::ate);
    if (!in) throw FormatError(file.string() + ": cannot open");
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes % sizeof(std::uint32_t) != 0)
        throw FormatError(file.string() + ": size is not a multiple of 4");
    in.seekg(0);
    std::vector<std::uint32_t> buf(bytes / sizeof(std::uint32_t));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw FormatError(file.string() + ": read failed");
    IntVector s(buf.size());
    for (std::size_t i = 0; i < buf.size(); ++i) s[i] = static_cast<int>(buf[i]);
    return s;
}

}  // namespace scab
