#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "scab/networks.hpp"

using namespace scab;
namespace fs = std::filesystem;

namespace {

void zero_params(ModelState& state) {
    for (auto* layers : {&state.encoder, &state.decoder}) {
        for (auto& l : *layers) {
            l.w.setZero();
            l.b.setZero();
        }
    }
    state.mean_head.w.setZero();
    state.mean_head.b.setZero();
    state.log_var_head.w.setZero();
    state.log_var_head.b.setZero();
    state.fusion.w.setZero();
    state.fusion.b.setZero();
}

}  // namespace

TEST_CASE("zero-weight encoder maps everything to the prior") {
    ModelState state = init_model(6, 3, CondKind::none, 0, ReconKind::squared, 1, {8, 8});
    zero_params(state);
    Matrix x = Matrix::Random(5, 6);
    const PosteriorBatch post = encode(state, x);
    CHECK(post.mean.cwiseAbs().maxCoeff() == 0.0);
    CHECK(post.log_var.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("encoder output shapes match the latent width") {
    ModelState state = init_model(20, 10, CondKind::none, 0, ReconKind::squared, 2, {16, 16});
    const Matrix x = Matrix::Random(32, 20);
    const PosteriorBatch post = encode(state, x);
    CHECK(post.mean.rows() == 32);
    CHECK(post.mean.cols() == 10);
    CHECK(post.log_var.rows() == 32);
    CHECK(post.log_var.cols() == 10);
    CHECK((post.log_var.array().abs() <= kLogVarClamp).all());

    SUBCASE("identical inputs give identical posteriors") {
        Matrix pair(2, 20);
        pair.row(0) = x.row(0);
        pair.row(1) = x.row(0);
        const PosteriorBatch p = encode(state, pair);
        CHECK(p.mean.row(0) == p.mean.row(1));
        CHECK(p.log_var.row(0) == p.log_var.row(1));
    }

    SUBCASE("shape mismatch is rejected") {
        CHECK_THROWS_AS(encode(state, Matrix::Random(4, 19)), std::invalid_argument);
    }
}

TEST_CASE("reparameterize limit cases") {
    GaussianPosterior p{Vector::Ones(3) * 2.0, Vector::Zero(3)};
    CHECK(reparameterize(p, Vector::Zero(3)) == p.mean);

    Vector eps(3);
    eps << 0.5, -1.0, 2.0;
    CHECK((reparameterize(p, eps) - (p.mean + eps)).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("reparameterize empirical mean over many draws") {
    GaussianPosterior p{Vector::Ones(2), Vector::Constant(2, std::log(0.25))};
    Rng rng(77);
    Vector acc = Vector::Zero(2);
    const int draws = 100000;
    Vector eps(2);
    for (int i = 0; i < draws; ++i) {
        eps << rng.normal(), rng.normal();
        acc += reparameterize(p, eps);
    }
    acc /= draws;
    const double sigma = 0.5;
    const double bound = 4.0 * sigma / std::sqrt(static_cast<double>(draws));
    CHECK(std::abs(acc[0] - 1.0) <= bound);
    CHECK(std::abs(acc[1] - 1.0) <= bound);
}

TEST_CASE("fusion identity configurations") {
    ModelState state = init_model(6, 3, CondKind::none, 0, ReconKind::squared, 3, {8});
    const Matrix z = Matrix::Random(4, 3);
    const Matrix z_tilde = Matrix::Random(4, 3);

    state.fusion.w.setZero();
    state.fusion.b.setZero();
    state.fusion.w.leftCols(3).setIdentity();
    CHECK((fuse(state, z, z_tilde) - z).cwiseAbs().maxCoeff() <= 1e-15);

    state.fusion.w.setZero();
    state.fusion.w.rightCols(3).setIdentity();
    CHECK((fuse(state, z, z_tilde) - z_tilde).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("fusion is affine in z") {
    ModelState state = init_model(6, 3, CondKind::none, 0, ReconKind::squared, 4, {8});
    const Matrix z1 = Matrix::Random(4, 3), z2 = Matrix::Random(4, 3);
    const Matrix zt = Matrix::Random(4, 3);
    const double a = 0.7, b = -1.3;
    const Matrix lhs = fuse(state, a * z1 + b * z2, zt);
    const Matrix rhs =
        a * fuse(state, z1, zt) + b * fuse(state, z2, zt) - (a + b - 1.0) * fuse(state, Matrix::Zero(4, 3), zt);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("zero-weight sigmoid decoder outputs one half") {
    ModelState state = init_model(6, 3, CondKind::one_hot, 2, ReconKind::bernoulli, 5, {8});
    zero_params(state);
    IntVector c(4);
    c << 0, 1, 0, 1;
    const Matrix out = decode(state, Matrix::Random(4, 3), conditioning_input(state, c));
    CHECK(out.rows() == 4);
    CHECK(out.cols() == 6);
    CHECK((out.array() - 0.5).abs().maxCoeff() <= 1e-15);
}

TEST_CASE("conditioning changes the reconstruction") {
    ModelState state = init_model(6, 3, CondKind::one_hot, 3, ReconKind::bernoulli, 6, {8});
    const Matrix z_hat = Matrix::Random(1, 3);
    IntVector c0(1), c1(1);
    c0 << 0;
    c1 << 2;
    const Matrix a = decode(state, z_hat, conditioning_input(state, c0));
    const Matrix b = decode(state, z_hat, conditioning_input(state, c1));
    CHECK((a - b).cwiseAbs().maxCoeff() > 1e-8);
}

TEST_CASE("decode checks the discrete class range") {
    ModelState state = init_model(6, 3, CondKind::one_hot, 2, ReconKind::bernoulli, 7, {8});
    IntVector c(1);
    c << 2;
    CHECK_THROWS_AS(conditioning_input(state, c), std::invalid_argument);
}

TEST_CASE("decode output shape on image-like widths") {
    ModelState state = init_model(784, 10, CondKind::one_hot, 6, ReconKind::bernoulli, 8, {32});
    IntVector c = IntVector::Zero(32);
    const Matrix out = decode(state, Matrix::Random(32, 10), conditioning_input(state, c));
    CHECK(out.rows() == 32);
    CHECK(out.cols() == 784);
    CHECK(out.minCoeff() > 0.0);
    CHECK(out.maxCoeff() < 1.0);
}

TEST_CASE("scalar conditioning accepts the continuous confound") {
    ModelState state = init_model(6, 3, CondKind::scalar, 0, ReconKind::squared, 9, {8});
    VectorF c(2);
    c << 0.25f, 0.75f;
    const Matrix cond = conditioning_input(state, c);
    CHECK(cond.rows() == 2);
    CHECK(cond.cols() == 1);
    const Matrix out = decode(state, Matrix::Random(2, 3), cond);
    CHECK(out.rows() == 2);
    CHECK(out.cols() == 6);
}

TEST_CASE("checkpoint round-trip preserves every parameter") {
    const fs::path file = fs::temp_directory_path() / "scab_test_model.bin";
    ModelState state = init_model(12, 4, CondKind::one_hot, 3, ReconKind::bernoulli, 10, {16, 8});
    save_model(state, file);
    const ModelState loaded = load_model(file);

    CHECK(loaded.d_input == state.d_input);
    CHECK(loaded.d_latent == state.d_latent);
    CHECK(loaded.cond == state.cond);
    CHECK(loaded.g_categories == state.g_categories);
    CHECK(loaded.recon == state.recon);
    REQUIRE(loaded.encoder.size() == state.encoder.size());
    REQUIRE(loaded.decoder.size() == state.decoder.size());

    // parameters survive as f32; encode must agree at float precision
    const Matrix x = Matrix::Random(4, 12);
    const PosteriorBatch a = encode(state, x);
    const PosteriorBatch b = encode(loaded, x);
    CHECK((a.mean - b.mean).cwiseAbs().maxCoeff() <= 1e-5);

    SUBCASE("corrupt magic is rejected") {
        std::ofstream out(file, std::ios::binary);
        out << "NOTAMODEL";
        out.close();
        CHECK_THROWS_AS(load_model(file), FormatError);
    }
}
