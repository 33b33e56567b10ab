#include "scab/networks.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace scab {

namespace fs = std::filesystem;

void ModelState::check_finite() const {
    auto ok = [](const DenseLayer& l) { return l.w.allFinite() && l.b.allFinite(); };
    bool fine = ok(mean_head) && ok(log_var_head) && ok(fusion);
    for (const auto& l : encoder) fine = fine && ok(l);
    for (const auto& l : decoder) fine = fine && ok(l);
    if (!fine) throw std::runtime_error("ModelState: non-finite parameters");
}

namespace {

DenseLayer init_layer(int out, int in, Rng& rng) {
    // symmetric uniform fan-in scaling
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    DenseLayer layer;
    layer.w.resize(out, in);
    for (int i = 0; i < out; ++i)
        for (int j = 0; j < in; ++j) layer.w(i, j) = rng.uniform(-bound, bound);
    layer.b = Vector::Zero(out);
    return layer;
}

// y = x * w^T + b per row
Matrix affine(const DenseLayer& layer, const Matrix& x) {
    Matrix y = x * layer.w.transpose();
    y.rowwise() += layer.b.transpose();
    return y;
}

}  // namespace

ModelState init_model(int d_input, int d_latent, CondKind cond, int g_categories,
                      ReconKind recon, std::uint64_t seed, const std::vector<int>& hidden) {
    if (d_input < 1 || d_latent < 1) throw std::invalid_argument("init_model: dimensions must be positive");
    if (cond == CondKind::one_hot && g_categories < 1)
        throw std::invalid_argument("init_model: one-hot conditioning needs g_categories >= 1");
    if (hidden.empty()) throw std::invalid_argument("init_model: need at least one hidden layer");

    Rng rng(derive_seed(seed, 0x696e6974ULL));
    ModelState state;
    state.d_input = d_input;
    state.d_latent = d_latent;
    state.cond = cond;
    state.g_categories = cond == CondKind::one_hot ? g_categories : 0;
    state.recon = recon;

    int in = d_input;
    for (int h : hidden) {
        state.encoder.push_back(init_layer(h, in, rng));
        in = h;
    }
    state.mean_head = init_layer(d_latent, in, rng);
    state.log_var_head = init_layer(d_latent, in, rng);

    in = d_latent + state.cond_dim();
    for (auto it = hidden.rbegin(); it != hidden.rend(); ++it) {
        state.decoder.push_back(init_layer(*it, in, rng));
        in = *it;
    }
    state.decoder.push_back(init_layer(d_input, in, rng));

    state.fusion = init_layer(d_latent, 2 * d_latent, rng);
    return state;
}

PosteriorBatch encode(const ModelState& state, const Matrix& x) {
    if (x.cols() != state.d_input) throw std::invalid_argument("encode: input width != D");
    if (!x.allFinite()) throw std::invalid_argument("encode: non-finite input");
    Matrix h = x;
    for (const auto& layer : state.encoder) h = affine(layer, h).cwiseMax(0.0);
    PosteriorBatch post;
    post.mean = affine(state.mean_head, h);
    post.log_var = affine(state.log_var_head, h).cwiseMax(-kLogVarClamp).cwiseMin(kLogVarClamp);
    return post;
}

Vector reparameterize(const GaussianPosterior& posterior, const Vector& noise) {
    if (noise.size() != posterior.mean.size())
        throw std::invalid_argument("reparameterize: noise length != d");
    return posterior.mean.array() + (posterior.log_var.array() / 2.0).exp() * noise.array();
}

Matrix reparameterize(const PosteriorBatch& posteriors, const Matrix& noise) {
    if (noise.rows() != posteriors.mean.rows() || noise.cols() != posteriors.mean.cols())
        throw std::invalid_argument("reparameterize: noise shape mismatch");
    return posteriors.mean.array() + (posteriors.log_var.array() / 2.0).exp() * noise.array();
}

Matrix fuse(const ModelState& state, const Matrix& z, const Matrix& z_tilde) {
    if (z.cols() != state.d_latent || z_tilde.cols() != state.d_latent || z.rows() != z_tilde.rows())
        throw std::invalid_argument("fuse: latent dimension mismatch");
    Matrix joint(z.rows(), 2 * state.d_latent);
    joint << z, z_tilde;
    return affine(state.fusion, joint);
}

Matrix conditioning_input(const ModelState& state, const IntVector& c_discrete) {
    if (state.cond != CondKind::one_hot)
        throw std::invalid_argument("conditioning_input: model does not take a discrete confound");
    Matrix cond = Matrix::Zero(c_discrete.size(), state.g_categories);
    for (int i = 0; i < c_discrete.size(); ++i) {
        if (c_discrete[i] < 0 || c_discrete[i] >= state.g_categories)
            throw std::invalid_argument("conditioning_input: class index outside [0, G)");
        cond(i, c_discrete[i]) = 1.0;
    }
    return cond;
}

Matrix conditioning_input(const ModelState& state, const VectorF& c_continuous) {
    if (state.cond != CondKind::scalar)
        throw std::invalid_argument("conditioning_input: model does not take a continuous confound");
    return c_continuous.cast<double>();
}

Matrix decode(const ModelState& state, const Matrix& z_hat, const Matrix& cond) {
    if (z_hat.cols() != state.d_latent) throw std::invalid_argument("decode: latent width != d");
    if (cond.cols() != state.cond_dim() || (state.cond_dim() > 0 && cond.rows() != z_hat.rows()))
        throw std::invalid_argument("decode: conditioning shape mismatch");
    Matrix h(z_hat.rows(), z_hat.cols() + cond.cols());
    if (cond.cols() > 0)
        h << z_hat, cond;
    else
        h = z_hat;
    for (std::size_t l = 0; l + 1 < state.decoder.size(); ++l)
        h = affine(state.decoder[l], h).cwiseMax(0.0);
    h = affine(state.decoder.back(), h);
    if (state.recon == ReconKind::bernoulli)
        h = 1.0 / (1.0 + (-h.array()).exp());
    return h;
}

// ---------------------------------------------------------------------------
// Checkpoint format: 8-byte magic, u32 version, u32 reserved, then
// u32 fields {d_input, d_latent, cond_kind, g_categories, recon_kind,
// n_encoder, n_decoder}, the encoder layer widths, and all parameter blocks
// as f32le (row-major weights then bias) in declaration order:
// encoder trunk, mean head, log-var head, decoder, fusion.
// ---------------------------------------------------------------------------

namespace {

constexpr char kModelMagic[8] = {'S', 'C', 'A', 'B', 'M', 'D', 'L', '\0'};
constexpr std::uint32_t kModelVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::ifstream& in, const fs::path& file) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw FormatError(file.string() + ": truncated header");
    return v;
}

void write_layer(std::ofstream& out, const DenseLayer& layer) {
    std::vector<float> buf(layer.w.size() + layer.b.size());
    std::size_t p = 0;
    for (int i = 0; i < layer.w.rows(); ++i)
        for (int j = 0; j < layer.w.cols(); ++j) buf[p++] = static_cast<float>(layer.w(i, j));
    for (int i = 0; i < layer.b.size(); ++i) buf[p++] = static_cast<float>(layer.b[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

DenseLayer read_layer(std::ifstream& in, int out_dim, int in_dim, const fs::path& file) {
    std::vector<float> buf(static_cast<std::size_t>(out_dim) * in_dim + out_dim);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw FormatError(file.string() + ": truncated parameter block");
    DenseLayer layer;
    layer.w.resize(out_dim, in_dim);
    std::size_t p = 0;
    for (int i = 0; i < out_dim; ++i)
        for (int j = 0; j < in_dim; ++j) layer.w(i, j) = buf[p++];
    layer.b.resize(out_dim);
    for (int i = 0; i < out_dim; ++i) layer.b[i] = buf[p++];
    return layer;
}

}  // namespace

void save_model(const ModelState& state, const fs::path& file) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw FormatError(file.string() + ": cannot open for writing");
    out.write(kModelMagic, sizeof(kModelMagic));
    write_u32(out, kModelVersion);
    write_u32(out, 0);  // reserved
    write_u32(out, static_cast<std::uint32_t>(state.d_input));
    write_u32(out, static_cast<std::uint32_t>(state.d_latent));
    write_u32(out, static_cast<std::uint32_t>(state.cond));
    write_u32(out, static_cast<std::uint32_t>(state.g_categories));
    write_u32(out, static_cast<std::uint32_t>(state.recon));
    write_u32(out, static_cast<std::uint32_t>(state.encoder.size()));
    write_u32(out, static_cast<std::uint32_t>(state.decoder.size()));
    for (const auto& l : state.encoder) write_u32(out, static_cast<std::uint32_t>(l.w.rows()));
    for (const auto& l : state.encoder) write_layer(out, l);
    write_layer(out, state.mean_head);
    write_layer(out, state.log_var_head);
    for (const auto& l : state.decoder) write_layer(out, l);
    write_layer(out, state.fusion);
    if (!out) throw FormatError(file.string() + ": write failed");
}

ModelState load_model(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw FormatError(file.string() + ": cannot open");
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kModelMagic, sizeof(magic)) != 0)
        throw FormatError(file.string() + ": bad magic");
    if (read_u32(in, file) != kModelVersion) throw FormatError(file.string() + ": unsupported version");
    read_u32(in, file);  // reserved

    ModelState state;
    state.d_input = static_cast<int>(read_u32(in, file));
    state.d_latent = static_cast<int>(read_u32(in, file));
    const auto cond_raw = read_u32(in, file);
    if (cond_raw > 2) throw FormatError(file.string() + ": unknown conditioning kind");
    state.cond = static_cast<CondKind>(cond_raw);
    state.g_categories = static_cast<int>(read_u32(in, file));
    const auto recon_raw = read_u32(in, file);
    if (recon_raw > 1) throw FormatError(file.string() + ": unknown reconstruction kind");
    state.recon = static_cast<ReconKind>(recon_raw);
    const int n_enc = static_cast<int>(read_u32(in, file));
    const int n_dec = static_cast<int>(read_u32(in, file));
    if (state.d_input < 1 || state.d_latent < 1 || n_enc < 1 || n_dec != n_enc + 1)
        throw FormatError(file.string() + ": inconsistent architecture header");

    std::vector<int> hidden(n_enc);
    for (int i = 0; i < n_enc; ++i) hidden[i] = static_cast<int>(read_u32(in, file));

    int in_dim = state.d_input;
    for (int i = 0; i < n_enc; ++i) {
        state.encoder.push_back(read_layer(in, hidden[i], in_dim, file));
        in_dim = hidden[i];
    }
    state.mean_head = read_layer(in, state.d_latent, in_dim, file);
    state.log_var_head = read_layer(in, state.d_latent, in_dim, file);

    in_dim = state.d_latent + state.cond_dim();
    for (int i = n_enc - 1; i >= 0; --i) {
        state.decoder.push_back(read_layer(in, hidden[i], in_dim, file));
        in_dim = hidden[i];
    }
    state.decoder.push_back(read_layer(in, state.d_input, in_dim, file));
    state.fusion = read_layer(in, state.d_latent, 2 * state.d_latent, file);

    char extra;
    if (in.read(&extra, 1)) throw FormatError(file.string() + ": trailing bytes after parameters");
    state.check_finite();
    return state;
}

}  // namespace scab
