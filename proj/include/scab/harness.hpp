#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "scab/baselines.hpp"
#include "scab/clustering.hpp"
#include "scab/common.hpp"
#include "scab/dataset.hpp"
#include "scab/metrics.hpp"
#include "scab/networks.hpp"
#include "scab/objective.hpp"

namespace scab {

enum class Ablation { none, no_dis, no_clu, no_dis_no_clu };

std::string to_string(Ablation a);
Ablation ablation_from_string(const std::string& s);
std::string to_string(ReconKind k);
ReconKind recon_from_string(const std::string& s);

struct TrainConfig {
    double eta1 = 1.0;
    double eta2 = 0.1;
    double learning_rate = 5e-4;
    int epochs = 1000;
    int batch_size = 256;
    int latent_dim = 10;
    double tau = 5.0;
    double gamma = 0.995;
    int warmup_epochs = 20;
    ReconKind recon_kind = ReconKind::bernoulli;
    std::uint64_t seed = 0;
    Ablation ablation = Ablation::none;
    std::vector<int> hidden = {500, 500, 2000};
    int log_every = 10;
    int threads = 2;

    void validate() const;
};

// Flat key = value file; '#' starts a comment. Unknown keys are an error.
TrainConfig load_config_file(const std::filesystem::path& file);
void set_config_key(TrainConfig& config, const std::string& key, const std::string& value);
void save_config_json(const TrainConfig& config, const std::string& method,
                      const std::filesystem::path& file);

struct EpochLog {
    int epoch = 0;
    LossBreakdown losses;
    std::optional<double> acc, nmi, ari, leakage, balance;
};

struct RunRecord {
    std::vector<EpochLog> epochs;
    IntVector final_assignments;
    double elapsed_seconds = 0.0;
};

// Coordinate-descent SCAB training: gradient steps on the network parameters
// with centroids frozen, EMA centroid updates per minibatch, k-means++
// centroid init on warm embeddings after the warmup phase. Writes
// config.json, metrics.jsonl, model.bin, centroids.bin and assignments.bin
// into run_dir (only the first two when epochs == 0).
RunRecord train_scab(const DatasetBundle& bundle, const TrainConfig& config,
                     const std::filesystem::path& run_dir, bool verbose = false);

enum class BaselineMethod { kmeans, ruv_x, ruv_z };
std::string to_string(BaselineMethod m);
BaselineMethod baseline_from_string(const std::string& s);

// kmeans: Lloyd on raw features. ruv_x: linear purification then Lloyd.
// ruv_z: plain VAE (eta1 = eta2 = 0, unconditional decoder), purification of
// the mean embeddings, then Lloyd. RUV methods require a discrete confound.
RunRecord run_baseline(BaselineMethod method, const DatasetBundle& bundle,
                       const TrainConfig& config, const std::filesystem::path& run_dir,
                       bool verbose = false);

struct EvalRow {
    std::string name;
    std::optional<double> acc, nmi, ari, leakage, balance;
};

// Recomputes every metric from the persisted assignments.
EvalRow evaluate(const std::filesystem::path& run_dir, const DatasetBundle& bundle);

// Mean embeddings of the whole dataset under a trained model, evaluated in
// fixed-size chunks.
Matrix encode_means(const ModelState& state, const MatrixF& x);

struct PcaProjection {
    Matrix projected;     // N x n_components
    Matrix components;    // D x n_components
    Vector eigenvalues;   // all D, descending
    Eigen::RowVectorXd mean;
};

// Exact eigendecomposition of the covariance of the rows.
PcaProjection pca_project(const Matrix& data, int n_components);

struct ReportOptions {
    std::optional<std::filesystem::path> json_out;
    std::optional<std::filesystem::path> plot_out;  // SVG; requires data_dir
    std::optional<std::filesystem::path> data_dir;
};

// Aligned comparison table over run directories from their persisted metrics,
// with an optional machine-readable companion and PCA scatter of the first
// run's final embeddings.
void report(const std::vector<std::filesystem::path>& run_dirs, std::ostream& out,
            const ReportOptions& options = {});

}  // namespace scab
