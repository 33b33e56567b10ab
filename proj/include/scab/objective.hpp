#pragma once

#include <optional>
#include <vector>

#include "scab/clustering.hpp"
#include "scab/common.hpp"
#include "scab/networks.hpp"

namespace scab {

struct LossBreakdown {
    double recon = 0.0;
    double kl_prior = 0.0;
    double pairwise_kl = 0.0;
    double cluster = 0.0;
    double total = 0.0;
    double eta1 = 0.0;
    double eta2 = 0.0;
};

// KL[q || N(0, I)] = 1/2 sum(mu^2 + sigma^2 - 1 - log sigma^2).
double kl_to_standard_normal(const GaussianPosterior& posterior);

// KL[p || q] for diagonal Gaussians.
double kl_between_diag_gaussians(const GaussianPosterior& p, const GaussianPosterior& q);

// Per-sample feature sums, averaged over the batch. bernoulli requires
// x in [0,1] and x_recon in (0,1).
double reconstruction_loss(const Matrix& x, const Matrix& x_recon, ReconKind kind);

// Mean KL over all B^2 ordered posterior pairs; diagonal pairs contribute 0.
double mi_pairwise_term(const PosteriorBatch& posteriors);

// Mean squared distance of each z to its assigned centroid.
double cluster_loss(const Matrix& z, const IntVector& s, const Matrix& e);

// total = (1 + eta1) recon + kl_prior + eta1 pairwise + eta2 cluster; the
// reconstruction term is shared by the ELBO and the MI bound, hence the
// (1 + eta1) weight.
LossBreakdown total_loss(double recon, double kl_prior, double pairwise_kl, double cluster,
                         double eta1, double eta2);

// Mean log soft-assignment probability of each sample's hard cluster; the
// computable lower-bound diagnostic on I(z, s). Always <= 0, not optimized.
double cluster_mi_lower_bound(const Matrix& z, const IntVector& s, const Matrix& e, double tau);

// One-sample Monte Carlo estimate of the conditional ELBO terms. When
// z_tilde is null the fusion sees z in both slots (warmup behaviour).
std::pair<double, double> vae_loss(const ModelState& state, const Matrix& x, const Matrix& cond,
                                   const Matrix& noise, const Matrix* z_tilde = nullptr);

struct LayerGrads {
    Matrix w;
    Vector b;
};

struct ModelGradients {
    std::vector<LayerGrads> encoder;
    LayerGrads mean_head, log_var_head;
    std::vector<LayerGrads> decoder;
    LayerGrads fusion;

    static ModelGradients zeros_like(const ModelState& state);
};

// Fixed enumeration order shared by the optimizer and the checkpoint format:
// encoder trunk, mean head, log-var head, decoder, fusion.
std::vector<const DenseLayer*> all_layers(const ModelState& state);
std::vector<DenseLayer*> all_layers(ModelState& state);
std::vector<LayerGrads*> all_layers(ModelGradients& grads);

struct StepOptions {
    double eta1 = 1.0;
    double eta2 = 0.1;
    bool bypass_fusion = false;          // ablation: z_hat = z
    const CentroidBank* bank = nullptr;  // null during warmup: z_tilde = z, no cluster term
    const Matrix* z_tilde_override = nullptr;  // explicit centroids, treated as constant
};

struct StepResult {
    PosteriorBatch post;
    Matrix z;
    IntVector s;  // empty when no bank is attached
    LossBreakdown losses;
};

// Full SCAB objective on one minibatch: encode, reparameterize, assign,
// fuse, decode, and every loss term. Centroids are constants here (they are
// EMA-updated, not backpropagated). When grads is non-null it receives
// d total / d theta for every network parameter.
StepResult scab_step(const ModelState& state, const Matrix& x, const Matrix& cond,
                     const Matrix& noise, const StepOptions& opts, ModelGradients* grads);

}  // namespace scab
