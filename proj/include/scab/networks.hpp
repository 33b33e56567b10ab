#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "scab/common.hpp"

namespace scab {

// Diagonal-Gaussian posterior parameters. log_var is clamped to
// [-10, 10] by the encoder head.
struct GaussianPosterior {
    Vector mean;
    Vector log_var;
};

// One posterior per batch row.
struct PosteriorBatch {
    Matrix mean;     // B x d
    Matrix log_var;  // B x d

    int size() const { return static_cast<int>(mean.rows()); }
    int dim() const { return static_cast<int>(mean.cols()); }
    GaussianPosterior row(int i) const { return {mean.row(i).transpose(), log_var.row(i).transpose()}; }
};

struct DenseLayer {
    Matrix w;  // out x in
    Vector b;  // out
};

enum class CondKind { none, one_hot, scalar };
enum class ReconKind { squared, bernoulli };  // identity head / sigmoid head

constexpr double kLogVarClamp = 10.0;

// Encoder trunk D-...-H with linear mean / log-var heads, a mirrored
// conditional decoder (d + cond dim)-...-D, and a linear skip-connection
// fusion (2d -> d). ReLU on hidden layers, linear outputs; the decoder
// applies a sigmoid head when recon == bernoulli.
struct ModelState {
    int d_input = 0;
    int d_latent = 0;
    CondKind cond = CondKind::none;
    int g_categories = 0;  // one-hot width; 0 unless cond == one_hot
    ReconKind recon = ReconKind::squared;

    std::vector<DenseLayer> encoder;  // trunk, all ReLU
    DenseLayer mean_head;
    DenseLayer log_var_head;
    std::vector<DenseLayer> decoder;  // ReLU except final layer
    DenseLayer fusion;                // d x 2d

    int cond_dim() const {
        switch (cond) {
            case CondKind::one_hot: return g_categories;
            case CondKind::scalar: return 1;
            default: return 0;
        }
    }
    void check_finite() const;
};

ModelState init_model(int d_input, int d_latent, CondKind cond, int g_categories,
                      ReconKind recon, std::uint64_t seed,
                      const std::vector<int>& hidden = {500, 500, 2000});

// x: B x D -> B posteriors of dimension d.
PosteriorBatch encode(const ModelState& state, const Matrix& x);

// z = mean + exp(log_var / 2) * noise, elementwise.
Vector reparameterize(const GaussianPosterior& posterior, const Vector& noise);
Matrix reparameterize(const PosteriorBatch& posteriors, const Matrix& noise);

// Skip-connection fusion: z_hat = W [z ; z_tilde] + b.
Matrix fuse(const ModelState& state, const Matrix& z, const Matrix& z_tilde);

// Builds the decoder conditioning rows for a batch.
Matrix conditioning_input(const ModelState& state, const IntVector& c_discrete);
Matrix conditioning_input(const ModelState& state, const VectorF& c_continuous);

// z_hat: B x d, cond: B x cond_dim -> B x D reconstruction (post-activation).
Matrix decode(const ModelState& state, const Matrix& z_hat, const Matrix& cond);

void save_model(const ModelState& state, const std::filesystem::path& file);
ModelState load_model(const std::filesystem::path& file);

}  // namespace scab
