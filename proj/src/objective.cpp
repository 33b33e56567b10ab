#include "scab/objective.hpp"

#include <cmath>

namespace scab {

double kl_to_standard_normal(const GaussianPosterior& posterior) {
    const auto& mu = posterior.mean.array();
    const auto& lv = posterior.log_var.array();
    return 0.5 * (mu.square() + lv.exp() - 1.0 - lv).sum();
}

double kl_between_diag_gaussians(const GaussianPosterior& p, const GaussianPosterior& q) {
    if (p.mean.size() != q.mean.size())
        throw std::invalid_argument("kl_between_diag_gaussians: dimension mismatch");
    const auto& mp = p.mean.array();
    const auto& mq = q.mean.array();
    const auto& lp = p.log_var.array();
    const auto& lq = q.log_var.array();
    return 0.5 * (lq - lp + (lp.exp() + (mp - mq).square()) * (-lq).exp() - 1.0).sum();
}

double reconstruction_loss(const Matrix& x, const Matrix& x_recon, ReconKind kind) {
    if (x.rows() != x_recon.rows() || x.cols() != x_recon.cols())
        throw std::invalid_argument("reconstruction_loss: shape mismatch");
    if (x.rows() == 0) throw std::invalid_argument("reconstruction_loss: empty batch");
    if (kind == ReconKind::squared) return (x - x_recon).squaredNorm() / x.rows();

    if ((x.array() < 0.0).any() || (x.array() > 1.0).any())
        throw std::invalid_argument("reconstruction_loss: bernoulli needs x in [0, 1]");
    if ((x_recon.array() <= 0.0).any() || (x_recon.array() >= 1.0).any())
        throw std::invalid_argument("reconstruction_loss: bernoulli needs x_recon in (0, 1)");
    const auto xr = x_recon.array();
    return -(x.array() * xr.log() + (1.0 - x.array()) * (1.0 - xr).log()).sum() / x.rows();
}

double mi_pairwise_term(const PosteriorBatch& posteriors) {
    const int b = posteriors.size();
    if (b < 2) throw std::invalid_argument("mi_pairwise_term: batch size must be >= 2");
    const int d = posteriors.dim();
    const Matrix ev = posteriors.log_var.array().exp();        // sigma^2
    const Matrix iv = (-posteriors.log_var.array()).exp();     // 1 / sigma^2

    double acc = 0.0;
    for (int n = 0; n < b; ++n) {
        for (int m = 0; m < b; ++m) {
            if (n == m) continue;
            double kl = 0.0;
            for (int j = 0; j < d; ++j) {
                const double dm = posteriors.mean(n, j) - posteriors.mean(m, j);
                kl += posteriors.log_var(m, j) - posteriors.log_var(n, j) +
                      (ev(n, j) + dm * dm) * iv(m, j) - 1.0;
            }
            acc += 0.5 * kl;
        }
    }
    return std::max(acc / (static_cast<double>(b) * b), 0.0);
}

double cluster_loss(const Matrix& z, const IntVector& s, const Matrix& e) {
    if (z.rows() != s.size()) throw std::invalid_argument("cluster_loss: batch size mismatch");
    if (z.cols() != e.cols()) throw std::invalid_argument("cluster_loss: dimension mismatch");
    double acc = 0.0;
    for (int i = 0; i < z.rows(); ++i) {
        if (s[i] < 0 || s[i] >= e.rows())
            throw std::invalid_argument("cluster_loss: assignment outside [0, K)");
        acc += (z.row(i) - e.row(s[i])).squaredNorm();
    }
    return acc / z.rows();
}

LossBreakdown total_loss(double recon, double kl_prior, double pairwise_kl, double cluster,
                         double eta1, double eta2) {
    if (eta1 < 0.0 || eta2 < 0.0) throw std::invalid_argument("total_loss: weights must be >= 0");
    LossBreakdown out;
    out.recon = recon;
    out.kl_prior = kl_prior;
    out.pairwise_kl = pairwise_kl;
    out.cluster = cluster;
    out.eta1 = eta1;
    out.eta2 = eta2;
    out.total = (1.0 + eta1) * recon + kl_prior + eta1 * pairwise_kl + eta2 * cluster;
    return out;
}

double cluster_mi_lower_bound(const Matrix& z, const IntVector& s, const Matrix& e, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("cluster_mi_lower_bound: tau must be positive");
    if (z.rows() != s.size()) throw std::invalid_argument("cluster_mi_lower_bound: batch size mismatch");
    const int k = static_cast<int>(e.rows());
    double acc = 0.0;
    for (int i = 0; i < z.rows(); ++i) {
        Vector logits(k);
        for (int j = 0; j < k; ++j) logits[j] = -tau * (z.row(i) - e.row(j)).squaredNorm();
        const double mx = logits.maxCoeff();
        const double lse = mx + std::log((logits.array() - mx).exp().sum());
        acc += logits[s[i]] - lse;
    }
    return std::min(acc / z.rows(), 0.0);
}

// ---------------------------------------------------------------------------
// Forward/backward graph
// ---------------------------------------------------------------------------

namespace {

LayerGrads zeros_like(const DenseLayer& layer) {
    return {Matrix::Zero(layer.w.rows(), layer.w.cols()), Vector::Zero(layer.b.size())};
}

// y = x w^T + b; accumulates parameter grads and returns dx
Matrix affine_backward(const DenseLayer& layer, const Matrix& x, const Matrix& dy, LayerGrads& g) {
    g.w.noalias() += dy.transpose() * x;
    g.b.noalias() += dy.colwise().sum().transpose();
    return dy * layer.w;
}

Matrix affine_forward(const DenseLayer& layer, const Matrix& x) {
    Matrix y = x * layer.w.transpose();
    y.rowwise() += layer.b.transpose();
    return y;
}

}  // namespace

ModelGradients ModelGradients::zeros_like(const ModelState& state) {
    ModelGradients g;
    for (const auto& l : state.encoder) g.encoder.push_back(scab::zeros_like(l));
    g.mean_head = scab::zeros_like(state.mean_head);
    g.log_var_head = scab::zeros_like(state.log_var_head);
    for (const auto& l : state.decoder) g.decoder.push_back(scab::zeros_like(l));
    g.fusion = scab::zeros_like(state.fusion);
    return g;
}

std::vector<const DenseLayer*> all_layers(const ModelState& state) {
    std::vector<const DenseLayer*> out;
    for (const auto& l : state.encoder) out.push_back(&l);
    out.push_back(&state.mean_head);
    out.push_back(&state.log_var_head);
    for (const auto& l : state.decoder) out.push_back(&l);
    out.push_back(&state.fusion);
    return out;
}

std::vector<DenseLayer*> all_layers(ModelState& state) {
    std::vector<DenseLayer*> out;
    for (auto& l : state.encoder) out.push_back(&l);
    out.push_back(&state.mean_head);
    out.push_back(&state.log_var_head);
    for (auto& l : state.decoder) out.push_back(&l);
    out.push_back(&state.fusion);
    return out;
}

std::vector<LayerGrads*> all_layers(ModelGradients& grads) {
    std::vector<LayerGrads*> out;
    for (auto& l : grads.encoder) out.push_back(&l);
    out.push_back(&grads.mean_head);
    out.push_back(&grads.log_var_head);
    for (auto& l : grads.decoder) out.push_back(&l);
    out.push_back(&grads.fusion);
    return out;
}

StepResult scab_step(const ModelState& state, const Matrix& x, const Matrix& cond,
                     const Matrix& noise, const StepOptions& opts, ModelGradients* grads) {
    const int b = static_cast<int>(x.rows());
    const int d = state.d_latent;
    if (b < 1) throw std::invalid_argument("scab_step: empty batch");
    if (x.cols() != state.d_input) throw std::invalid_argument("scab_step: input width != D");
    if (cond.cols() != state.cond_dim() || (state.cond_dim() > 0 && cond.rows() != b))
        throw std::invalid_argument("scab_step: conditioning shape mismatch");
    if (noise.rows() != b || noise.cols() != d)
        throw std::invalid_argument("scab_step: noise shape mismatch");
    if (opts.eta1 < 0.0 || opts.eta2 < 0.0)
        throw std::invalid_argument("scab_step: weights must be >= 0");

    // ---- encoder forward, caching post-activations
    std::vector<Matrix> enc_h;  // enc_h[0] = x, enc_h[i] = relu output of layer i-1
    enc_h.reserve(state.encoder.size() + 1);
    enc_h.push_back(x);
    for (const auto& layer : state.encoder)
        enc_h.push_back(affine_forward(layer, enc_h.back()).cwiseMax(0.0));

    StepResult result;
    const Matrix log_var_raw = affine_forward(state.log_var_head, enc_h.back());
    result.post.mean = affine_forward(state.mean_head, enc_h.back());
    result.post.log_var = log_var_raw.cwiseMax(-kLogVarClamp).cwiseMin(kLogVarClamp);

    const Matrix sigma_half = (result.post.log_var.array() / 2.0).exp();
    result.z = result.post.mean + sigma_half.cwiseProduct(noise);

    // ---- assignment and fusion
    Matrix z_tilde;
    bool z_tilde_is_z = false;
    double cluster = 0.0;
    if (opts.z_tilde_override != nullptr) {
        if (opts.z_tilde_override->rows() != b || opts.z_tilde_override->cols() != d)
            throw std::invalid_argument("scab_step: z_tilde shape mismatch");
        z_tilde = *opts.z_tilde_override;
    } else if (opts.bank != nullptr) {
        const Assignment assign = soft_assign(result.z, *opts.bank);
        result.s = assign.s;
        z_tilde.resize(b, d);
        for (int i = 0; i < b; ++i) z_tilde.row(i) = opts.bank->e.row(result.s[i]);
        cluster = cluster_loss(result.z, result.s, opts.bank->e);
    } else {
        z_tilde = result.z;
        z_tilde_is_z = true;
    }

    Matrix joint, z_hat;
    if (opts.bypass_fusion) {
        z_hat = result.z;
    } else {
        joint.resize(b, 2 * d);
        joint << result.z, z_tilde;
        z_hat = affine_forward(state.fusion, joint);
    }

    // ---- decoder forward on [z_hat ; cond], caching post-activations
    std::vector<Matrix> dec_h;
    dec_h.reserve(state.decoder.size() + 1);
    {
        Matrix u(b, d + cond.cols());
        if (cond.cols() > 0)
            u << z_hat, cond;
        else
            u = z_hat;
        dec_h.push_back(std::move(u));
    }
    for (std::size_t l = 0; l + 1 < state.decoder.size(); ++l)
        dec_h.push_back(affine_forward(state.decoder[l], dec_h.back()).cwiseMax(0.0));
    const Matrix logits = affine_forward(state.decoder.back(), dec_h.back());

    // ---- losses (reconstruction evaluated on logits for stability)
    double recon;
    if (state.recon == ReconKind::bernoulli) {
        recon = (logits.array().max(0.0) - logits.array() * x.array() +
                 (-logits.array().abs()).exp().log1p())
                    .sum() /
                b;
    } else {
        recon = (x - logits).squaredNorm() / b;
    }

    const double kl_prior =
        0.5 *
        (result.post.mean.array().square() + result.post.log_var.array().exp() - 1.0 -
         result.post.log_var.array())
            .sum() /
        b;

    const Matrix ev = result.post.log_var.array().exp();
    const Matrix iv = (-result.post.log_var.array()).exp();
    double pairwise = 0.0;
    if (opts.eta1 > 0.0 && b >= 2) pairwise = mi_pairwise_term(result.post);

    result.losses = total_loss(recon, kl_prior, pairwise, cluster, opts.eta1, opts.eta2);

    if (grads == nullptr) return result;

    // ---- backward
    const double recon_w = (1.0 + opts.eta1) / b;
    Matrix dlogits;
    if (state.recon == ReconKind::bernoulli) {
        dlogits = recon_w * ((1.0 / (1.0 + (-logits.array()).exp())) - x.array()).matrix();
    } else {
        dlogits = (2.0 * recon_w) * (logits - x);
    }

    Matrix dh = affine_backward(state.decoder.back(), dec_h.back(), dlogits, grads->decoder.back());
    for (std::size_t l = state.decoder.size() - 1; l-- > 0;) {
        dh = dh.cwiseProduct((dec_h[l + 1].array() > 0.0).cast<double>().matrix());
        dh = affine_backward(state.decoder[l], dec_h[l], dh, grads->decoder[l]);
    }
    Matrix dz_hat = dh.leftCols(d);  // conditioning columns carry no parameters

    Matrix dz;
    if (opts.bypass_fusion) {
        dz = dz_hat;
    } else {
        const Matrix djoint = affine_backward(state.fusion, joint, dz_hat, grads->fusion);
        dz = djoint.leftCols(d);
        if (z_tilde_is_z) dz += djoint.rightCols(d);
        // otherwise z_tilde is a constant centroid: no gradient flows
    }

    if (opts.bank != nullptr && opts.eta2 > 0.0) {
        const double w = 2.0 * opts.eta2 / b;
        for (int i = 0; i < b; ++i)
            dz.row(i) += w * (result.z.row(i) - opts.bank->e.row(result.s[i]));
    }

    // reparameterization: dmu += dz, dlv += dz * (z - mu) / 2
    Matrix dmu = dz;
    Matrix dlv = 0.5 * dz.cwiseProduct(result.z - result.post.mean);

    // KL to prior
    dmu += result.post.mean / b;
    dlv += (0.5 / b) * (ev.array() - 1.0).matrix();

    // pairwise KL over ordered pairs
    if (opts.eta1 > 0.0 && b >= 2) {
        const double c = opts.eta1 / (static_cast<double>(b) * b);
        const auto& mean = result.post.mean;
        for (int n = 0; n < b; ++n) {
            for (int m = 0; m < b; ++m) {
                if (n == m) continue;
                for (int j = 0; j < d; ++j) {
                    const double dmn = mean(n, j) - mean(m, j);
                    const double f = iv(m, j);
                    dmu(n, j) += c * dmn * f;
                    dmu(m, j) -= c * dmn * f;
                    dlv(n, j) += c * 0.5 * (ev(n, j) * f - 1.0);
                    dlv(m, j) += c * 0.5 * (1.0 - (ev(n, j) + dmn * dmn) * f);
                }
            }
        }
    }

    // log-var clamp
    dlv = dlv.cwiseProduct((log_var_raw.array().abs() < kLogVarClamp).cast<double>().matrix());

    Matrix dtrunk = affine_backward(state.mean_head, enc_h.back(), dmu, grads->mean_head);
    dtrunk += affine_backward(state.log_var_head, enc_h.back(), dlv, grads->log_var_head);
    for (std::size_t l = state.encoder.size(); l-- > 0;) {
        dtrunk = dtrunk.cwiseProduct((enc_h[l + 1].array() > 0.0).cast<double>().matrix());
        dtrunk = affine_backward(state.encoder[l], enc_h[l], dtrunk, grads->encoder[l]);
    }
    return result;
}

std::pair<double, double> vae_loss(const ModelState& state, const Matrix& x, const Matrix& cond,
                                   const Matrix& noise, const Matrix* z_tilde) {
    StepOptions opts;
    opts.eta1 = 0.0;
    opts.eta2 = 0.0;
    opts.z_tilde_override = z_tilde;
    const StepResult r = scab_step(state, x, cond, noise, opts, nullptr);
    return {r.losses.recon, r.losses.kl_prior};
}

}  // namespace scab
