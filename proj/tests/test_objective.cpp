#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "scab/objective.hpp"

using namespace scab;

TEST_CASE("kl to standard normal closed-form values") {
    CHECK(kl_to_standard_normal({Vector::Zero(3), Vector::Zero(3)}) == doctest::Approx(0.0));
    CHECK(kl_to_standard_normal({Vector::Ones(1), Vector::Zero(1)}) == doctest::Approx(0.5));
    // d=1, mu=0, sigma^2=e
    CHECK(kl_to_standard_normal({Vector::Zero(1), Vector::Ones(1)}) ==
          doctest::Approx(0.5 * (std::exp(1.0) - 2.0)));
}

TEST_CASE("kl between diagonal gaussians closed-form values") {
    const GaussianPosterior std_normal{Vector::Zero(1), Vector::Zero(1)};
    CHECK(kl_between_diag_gaussians(std_normal, std_normal) == doctest::Approx(0.0));
    CHECK(kl_between_diag_gaussians(std_normal, {Vector::Ones(1), Vector::Zero(1)}) ==
          doctest::Approx(0.5));
    // N(0,1) vs N(0,4)
    const GaussianPosterior wide{Vector::Zero(1), Vector::Constant(1, std::log(4.0))};
    CHECK(kl_between_diag_gaussians(std_normal, wide) ==
          doctest::Approx(0.5 * (std::log(4.0) - 0.75)));
}

TEST_CASE("both kl closed forms agree with monte carlo") {
    Rng rng(99);
    int done = 0;
    std::uint64_t seed = 1;
    while (done < 5) {
        const int d = 4;
        GaussianPosterior p, q;
        p.mean.resize(d);
        p.log_var.resize(d);
        q.mean.resize(d);
        q.log_var.resize(d);
        for (int j = 0; j < d; ++j) {
            p.mean[j] = rng.uniform(-1.5, 1.5);
            q.mean[j] = rng.uniform(-1.5, 1.5);
            p.log_var[j] = rng.uniform(-0.7, 0.7);
            q.log_var[j] = rng.uniform(-0.7, 0.7);
        }
        const double closed = kl_between_diag_gaussians(p, q);
        if (closed < 0.3) continue;  // relative tolerance needs a signal
        const double mc =
            oracle::mc_kl_diag_gaussians(p.mean, p.log_var, q.mean, q.log_var, 1000000, seed++);
        CHECK(std::abs(mc - closed) / closed <= 0.02);

        const double closed_prior = kl_to_standard_normal(p);
        const double mc_prior = oracle::mc_kl_diag_gaussians(
            p.mean, p.log_var, Vector::Zero(d), Vector::Zero(d), 1000000, seed++);
        CHECK(std::abs(mc_prior - closed_prior) / closed_prior <= 0.02);
        ++done;
    }
}

TEST_CASE("reconstruction loss worked examples") {
    Matrix x(1, 1), xr(1, 1);
    x << 1.0;
    xr << 1.0;
    CHECK(reconstruction_loss(x, xr, ReconKind::squared) == doctest::Approx(0.0));

    xr << 0.5;
    CHECK(reconstruction_loss(x, xr, ReconKind::bernoulli) == doctest::Approx(std::log(2.0)));

    Matrix x2(1, 2), xr2(1, 2);
    x2 << 1.0, 0.0;
    xr2 << 0.8, 0.6;
    CHECK(reconstruction_loss(x2, xr2, ReconKind::bernoulli) ==
          doctest::Approx(-(std::log(0.8) + std::log(0.4))));

    SUBCASE("bernoulli rejects out-of-range values") {
        Matrix bad(1, 1);
        bad << 1.0;
        CHECK_THROWS_AS(reconstruction_loss(x, bad.array() + 0.5, ReconKind::bernoulli),
                        std::invalid_argument);
    }
}

TEST_CASE("pairwise term enumeration for B = 2") {
    PosteriorBatch batch;
    batch.mean.resize(2, 1);
    batch.log_var = Matrix::Zero(2, 1);
    batch.mean << 0.0, 1.0;  // KL both directions = 0.5
    CHECK(mi_pairwise_term(batch) == doctest::Approx(0.25));

    SUBCASE("identical posteriors give zero") {
        batch.mean << 0.7, 0.7;
        CHECK(mi_pairwise_term(batch) == doctest::Approx(0.0));
    }

    SUBCASE("shrinking means toward the average decreases the term") {
        PosteriorBatch far, near;
        far.mean.resize(4, 2);
        far.log_var = Matrix::Zero(4, 2);
        far.mean << 2, 0, -2, 0, 0, 2, 0, -2;
        near.mean = 0.5 * far.mean;
        near.log_var = far.log_var;
        CHECK(mi_pairwise_term(near) < mi_pairwise_term(far));
    }

    SUBCASE("batch permutation leaves the value unchanged") {
        PosteriorBatch a;
        Rng rng(55);
        a.mean.resize(5, 3);
        a.log_var.resize(5, 3);
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 3; ++j) {
                a.mean(i, j) = rng.normal();
                a.log_var(i, j) = rng.uniform(-1.0, 1.0);
            }
        PosteriorBatch b = a;
        b.mean.row(0).swap(b.mean.row(4));
        b.log_var.row(0).swap(b.log_var.row(4));
        b.mean.row(1).swap(b.mean.row(2));
        b.log_var.row(1).swap(b.log_var.row(2));
        CHECK(mi_pairwise_term(a) == doctest::Approx(mi_pairwise_term(b)).epsilon(1e-12));
    }

    SUBCASE("B < 2 is rejected") {
        PosteriorBatch single;
        single.mean = Matrix::Zero(1, 1);
        single.log_var = Matrix::Zero(1, 1);
        CHECK_THROWS_AS(mi_pairwise_term(single), std::invalid_argument);
    }
}

TEST_CASE("cluster loss worked examples") {
    Matrix e(1, 2);
    e << 0, 0;
    Matrix z(1, 2);
    z << 1, 0;
    IntVector s(1);
    s << 0;
    CHECK(cluster_loss(z, s, e) == doctest::Approx(1.0));

    Matrix z2(2, 1);
    z2 << 0.0, 1.0;
    Matrix e2(1, 1);
    e2 << 0.5;
    IntVector s2(2);
    s2 << 0, 0;
    CHECK(cluster_loss(z2, s2, e2) == doctest::Approx(0.25));

    CHECK(cluster_loss(e, s, e) == doctest::Approx(0.0));

    IntVector bad(1);
    bad << 3;
    CHECK_THROWS_AS(cluster_loss(z, bad, e), std::invalid_argument);
}

TEST_CASE("total loss composition") {
    LossBreakdown l = total_loss(2.0, 1.0, 3.0, 4.0, 1.0, 0.1);
    CHECK(l.total == doctest::Approx(4.0 + 1.0 + 3.0 + 0.4));

    l = total_loss(1.5, 0.25, 9.0, 9.0, 0.0, 0.0);
    CHECK(l.total == doctest::Approx(1.75));

    l = total_loss(0, 0, 0, 0, 1.0, 0.1);
    CHECK(l.total == doctest::Approx(0.0));
}

TEST_CASE("cluster mi lower bound values and sign") {
    // one z equidistant from two centroids
    Matrix e(2, 1);
    e << -1, 1;
    Matrix z = Matrix::Zero(1, 1);
    IntVector s(1);
    s << 0;
    CHECK(cluster_mi_lower_bound(z, s, e, 5.0) == doctest::Approx(std::log(0.5)));

    // squared distances (0.25, 2.25) at tau 5
    Matrix e2(2, 1);
    e2 << 0.5, 1.5;
    IntVector s2(1);
    s2 << 0;
    CHECK(cluster_mi_lower_bound(Matrix::Zero(1, 1), s2, e2, 5.0) ==
          doctest::Approx(-std::log(1.0 + std::exp(-10.0))));

    // saturation: z at its centroid, far competitors
    Matrix e3(2, 2);
    e3 << 0, 0, 50, 50;
    Matrix z3 = Matrix::Zero(1, 2);
    IntVector s3(1);
    s3 << 0;
    const double v = cluster_mi_lower_bound(z3, s3, e3, 5.0);
    CHECK(v <= 0.0);
    CHECK(v >= -1e-9);

    // random configurations stay non-positive
    Rng rng(4);
    Matrix z4(6, 2), e4(3, 2);
    for (int i = 0; i < 12; ++i) z4(i / 2, i % 2) = rng.normal();
    for (int i = 0; i < 6; ++i) e4(i / 2, i % 2) = rng.normal();
    IntVector s4(6);
    for (int i = 0; i < 6; ++i) s4[i] = static_cast<int>(rng.uniform_index(3));
    CHECK(cluster_mi_lower_bound(z4, s4, e4, 0.7) <= 0.0);
}

TEST_CASE("vae loss limit and batch behaviour") {
    ModelState state = init_model(6, 3, CondKind::one_hot, 2, ReconKind::squared, 11, {5, 4});
    const Matrix x = Matrix::Random(4, 6);
    IntVector c(4);
    c << 0, 1, 0, 1;
    const Matrix cond = conditioning_input(state, c);
    const Matrix noise = Matrix::Zero(4, 3);

    const auto [recon, kl_prior] = vae_loss(state, x, cond, noise);
    CHECK(recon >= 0.0);
    CHECK(kl_prior >= 0.0);

    SUBCASE("identical samples give identical per-sample losses") {
        Matrix same(3, 6);
        same.row(0) = x.row(0);
        same.row(1) = x.row(0);
        same.row(2) = x.row(0);
        IntVector cc = IntVector::Zero(3);
        const auto [r3, k3] = vae_loss(state, same, conditioning_input(state, cc), Matrix::Zero(3, 3));
        Matrix one = x.row(0);
        IntVector c1 = IntVector::Zero(1);
        const auto [r1, k1] = vae_loss(state, one, conditioning_input(state, c1), Matrix::Zero(1, 3));
        CHECK(r3 == doctest::Approx(r1).epsilon(1e-12));
        CHECK(k3 == doctest::Approx(k1).epsilon(1e-12));
    }
}

// ---------------------------------------------------------------------------
// Gradient checks
// ---------------------------------------------------------------------------

namespace {

struct GradCheckSetup {
    ModelState state;
    Matrix x, cond, noise;
    CentroidBank bank;
};

GradCheckSetup make_setup(ReconKind recon, std::uint64_t seed) {
    GradCheckSetup s;
    s.state = init_model(6, 3, CondKind::one_hot, 2, recon, seed, {5, 4});
    Rng rng(derive_seed(seed, 7));
    s.x.resize(4, 6);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 6; ++j)
            s.x(i, j) = recon == ReconKind::bernoulli ? rng.uniform() : rng.normal();
    IntVector c(4);
    c << 0, 1, 1, 0;
    s.cond = conditioning_input(s.state, c);
    s.noise.resize(4, 3);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 3; ++j) s.noise(i, j) = rng.normal();

    // centroids placed away from assignment boundaries so the finite
    // difference never flips a hard assignment
    const StepResult base = scab_step(s.state, s.x, s.cond, s.noise, {}, nullptr);
    s.bank.e.resize(2, 3);
    s.bank.e.row(0) = base.z.colwise().mean() + Eigen::RowVector3d(1.5, 0, 0);
    s.bank.e.row(1) = base.z.colwise().mean() - Eigen::RowVector3d(1.5, 0, 0);
    s.bank.mu = s.bank.e;
    s.bank.b_mass = Vector::Ones(2);
    return s;
}

double max_gradcheck_error(GradCheckSetup& s, const StepOptions& opts) {
    ModelGradients grads = ModelGradients::zeros_like(s.state);
    scab_step(s.state, s.x, s.cond, s.noise, opts, &grads);

    auto loss_at = [&]() { return scab_step(s.state, s.x, s.cond, s.noise, opts, nullptr).losses.total; };

    const double h = 1e-5;
    double worst = 0.0;
    const auto params = all_layers(s.state);
    const auto gs = all_layers(grads);
    for (std::size_t l = 0; l < params.size(); ++l) {
        auto check_entry = [&](double& p, double analytic) {
            const double saved = p;
            p = saved + h;
            const double up = loss_at();
            p = saved - h;
            const double down = loss_at();
            p = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double err = std::abs(analytic - numeric) /
                               std::max(std::abs(analytic) + std::abs(numeric), 1e-6);
            worst = std::max(worst, err);
        };
        for (int i = 0; i < params[l]->w.rows(); ++i)
            for (int j = 0; j < params[l]->w.cols(); ++j)
                check_entry(params[l]->w(i, j), gs[l]->w(i, j));
        for (int i = 0; i < params[l]->b.size(); ++i)
            check_entry(params[l]->b[i], gs[l]->b[i]);
    }
    return worst;
}

}  // namespace

TEST_CASE("gradients match central finite differences (warmup mode)") {
    for (ReconKind recon : {ReconKind::squared, ReconKind::bernoulli}) {
        GradCheckSetup s = make_setup(recon, 21);
        StepOptions opts;
        opts.eta1 = 0.7;
        opts.eta2 = 0.0;
        CHECK(max_gradcheck_error(s, opts) <= 1e-4);
    }
}

TEST_CASE("gradients match central finite differences (clustering active)") {
    for (ReconKind recon : {ReconKind::squared, ReconKind::bernoulli}) {
        GradCheckSetup s = make_setup(recon, 22);
        StepOptions opts;
        opts.eta1 = 0.7;
        opts.eta2 = 0.3;
        opts.bank = &s.bank;
        CHECK(max_gradcheck_error(s, opts) <= 1e-4);
    }
}

TEST_CASE("gradients match central finite differences (fusion bypassed)") {
    GradCheckSetup s = make_setup(ReconKind::bernoulli, 23);
    StepOptions opts;
    opts.eta1 = 0.0;
    opts.eta2 = 0.0;
    opts.bypass_fusion = true;
    CHECK(max_gradcheck_error(s, opts) <= 1e-4);
}

TEST_CASE("scab_step losses are finite and composed correctly") {
    GradCheckSetup s = make_setup(ReconKind::bernoulli, 24);
    StepOptions opts;
    opts.eta1 = 1.0;
    opts.eta2 = 0.1;
    opts.bank = &s.bank;
    const StepResult r = scab_step(s.state, s.x, s.cond, s.noise, opts, nullptr);
    CHECK(r.losses.total ==
          doctest::Approx((1.0 + opts.eta1) * r.losses.recon + r.losses.kl_prior +
                          opts.eta1 * r.losses.pairwise_kl + opts.eta2 * r.losses.cluster));
    CHECK(r.losses.recon >= 0.0);
    CHECK(r.losses.kl_prior >= 0.0);
    CHECK(r.losses.pairwise_kl >= 0.0);
    CHECK(r.losses.cluster >= 0.0);
    CHECK(r.s.size() == 4);
}
