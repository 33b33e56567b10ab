#include "scab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace scab {

using json = nlohmann::json;
namespace fs = std::filesystem;

bool ConfoundLabels::fully_observed() const {
    if (mask.empty()) return true;
    return std::all_of(mask.begin(), mask.end(), [](std::uint8_t b) { return b != 0; });
}

void DatasetBundle::validate() const {
    const int n_samples = n();
    const int d = dim();
    if (n_samples < 1) throw std::invalid_argument("bundle: empty feature matrix");
    if (d < 1) throw std::invalid_argument("bundle: D must be >= 1");
    if (k_clusters < 1) throw std::invalid_argument("bundle: k_clusters must be >= 1");
    if (n_samples < k_clusters) throw std::invalid_argument("bundle: N must be >= K");
    if (!x.allFinite()) throw std::invalid_argument("bundle: X contains non-finite values");

    if (y.size() > 0) {
        if (y.size() != n_samples) throw std::invalid_argument("bundle: y length != N");
        if (y.minCoeff() < 0 || y.maxCoeff() >= k_clusters)
            throw std::invalid_argument("bundle: y values outside [0, K)");
    }

    if (c.size() != n_samples) throw std::invalid_argument("bundle: confound length != N");
    if (c.kind == ConfoundKind::discrete) {
        if (g_categories < 1) throw std::invalid_argument("bundle: g_categories must be >= 1");
        if (c.discrete.minCoeff() < 0 || c.discrete.maxCoeff() >= g_categories)
            throw std::invalid_argument("bundle: confound values outside [0, G)");
    } else {
        if (c.continuous.minCoeff() < 0.0f || c.continuous.maxCoeff() > 1.0f)
            throw std::invalid_argument("bundle: continuous confound outside [0, 1]");
    }
    if (!c.mask.empty()) {
        if (static_cast<int>(c.mask.size()) != n_samples)
            throw std::invalid_argument("bundle: mask length != N");
        if (std::none_of(c.mask.begin(), c.mask.end(), [](std::uint8_t b) { return b != 0; }))
            throw std::invalid_argument("bundle: mask has no observed entry");
    }
}

// ---------------------------------------------------------------------------
// Two-factor Gaussians
// ---------------------------------------------------------------------------

namespace {

// Distinct unit directions within a coordinate block: axes first, then their
// negations, so a block of size m hosts up to 2m classes.
Vector block_direction(int cls, int block_start, int block_size, int dim) {
    Vector v = Vector::Zero(dim);
    const int axis = cls % block_size;
    const double sign = (cls / block_size) % 2 == 0 ? 1.0 : -1.0;
    v[block_start + axis] = sign;
    return v;
}

}  // namespace

DatasetBundle generate_two_factor_gaussians(const GaussianSpec& spec) {
    if (spec.dim < 2)
        throw std::invalid_argument("generate_two_factor_gaussians: dim must be >= 2");
    if (spec.k_clusters < 1 || spec.g_categories < 1 || spec.n_per_cell < 1)
        throw std::invalid_argument("generate_two_factor_gaussians: counts must be positive");
    if (spec.interest_gap < 0 || spec.confound_gap < 0)
        throw std::invalid_argument("generate_two_factor_gaussians: gaps must be >= 0");
    if (!(spec.noise_sigma > 0))
        throw std::invalid_argument("generate_two_factor_gaussians: noise_sigma must be > 0");

    const int interest_block = spec.dim / 2;
    const int confound_block = spec.dim - interest_block;
    if (spec.k_clusters > 2 * interest_block)
        throw std::invalid_argument("generate_two_factor_gaussians: dim too small for k_clusters distinct directions");
    if (spec.g_categories > 2 * confound_block)
        throw std::invalid_argument("generate_two_factor_gaussians: dim too small for g_categories distinct directions");

    const int n_total = spec.k_clusters * spec.g_categories * spec.n_per_cell;
    Rng rng(derive_seed(spec.seed, 0x67617573ULL));

    DatasetBundle bundle;
    bundle.x.resize(n_total, spec.dim);
    bundle.y.resize(n_total);
    bundle.c.kind = ConfoundKind::discrete;
    bundle.c.discrete.resize(n_total);
    bundle.k_clusters = spec.k_clusters;
    bundle.g_categories = spec.g_categories;

    int row = 0;
    for (int k = 0; k < spec.k_clusters; ++k) {
        const Vector u = block_direction(k, 0, interest_block, spec.dim);
        for (int g = 0; g < spec.g_categories; ++g) {
            const Vector v = block_direction(g, interest_block, confound_block, spec.dim);
            const Vector mean = spec.interest_gap * u + spec.confound_gap * v;
            for (int i = 0; i < spec.n_per_cell; ++i, ++row) {
                for (int j = 0; j < spec.dim; ++j)
                    bundle.x(row, j) = static_cast<float>(mean[j] + spec.noise_sigma * rng.normal());
                bundle.y[row] = k;
                bundle.c.discrete[row] = g;
            }
        }
    }
    bundle.validate();
    return bundle;
}

// ---------------------------------------------------------------------------
// Rotated glyphs
// ---------------------------------------------------------------------------

namespace {

// Occupancy tests in unit coordinates ([-1, 1] x [-1, 1], y up).
bool in_rect(double x, double y, double cx, double cy, double hw, double hh) {
    return std::abs(x - cx) <= hw && std::abs(y - cy) <= hh;
}

bool in_triangle(double x, double y, double circumradius) {
    // equilateral, one vertex up
    const double r = circumradius;
    const double v0x = 0.0, v0y = r;
    const double v1x = -r * std::sqrt(3.0) / 2.0, v1y = -r / 2.0;
    const double v2x = r * std::sqrt(3.0) / 2.0, v2y = -r / 2.0;
    auto side = [&](double ax, double ay, double bx, double by) {
        return (bx - ax) * (y - ay) - (by - ay) * (x - ax);
    };
    const double s0 = side(v0x, v0y, v1x, v1y);
    const double s1 = side(v1x, v1y, v2x, v2y);
    const double s2 = side(v2x, v2y, v0x, v0y);
    return (s0 >= 0 && s1 >= 0 && s2 >= 0) || (s0 <= 0 && s1 <= 0 && s2 <= 0);
}

bool glyph_occupied(int glyph, double x, double y) {
    switch (glyph) {
        case 0:  // vertical bar
            return in_rect(x, y, 0, 0, 0.14, 0.62);
        case 1:  // T
            return in_rect(x, y, 0, 0.50, 0.58, 0.12) || in_rect(x, y, 0, -0.07, 0.13, 0.47);
        case 2:  // cross
            return in_rect(x, y, 0, 0, 0.13, 0.60) || in_rect(x, y, 0, 0, 0.60, 0.13);
        case 3:  // L-corner
            return in_rect(x, y, -0.38, 0.04, 0.12, 0.56) || in_rect(x, y, 0.04, -0.48, 0.54, 0.12);
        case 4: {  // hollow square
            const double m = std::max(std::abs(x), std::abs(y));
            return m >= 0.32 && m <= 0.56;
        }
        case 5: {  // diagonal stroke
            const double along = (x + y) / std::sqrt(2.0);
            const double across = (x - y) / std::sqrt(2.0);
            return std::abs(across) <= 0.13 && std::abs(along) <= 0.70;
        }
        case 6:  // triangle outline
            return in_triangle(x, y, 0.66) && !in_triangle(x, y, 0.40);
        case 7: {  // notched disk
            const double r = std::hypot(x, y);
            if (r > 0.58) return false;
            const double theta = std::atan2(y, x);
            return !(std::abs(theta) < 0.50 && r > 0.12);
        }
        default:
            return false;
    }
}

constexpr int kGlyphCount = 8;
constexpr int kSupersample = 3;

double bilinear_sample(const MatrixF& img, double r, double c) {
    const int size = static_cast<int>(img.rows());
    const int r0 = static_cast<int>(std::floor(r));
    const int c0 = static_cast<int>(std::floor(c));
    const double fr = r - r0;
    const double fc = c - c0;
    auto at = [&](int i, int j) -> double {
        if (i < 0 || i >= size || j < 0 || j >= size) return 0.0;
        return img(i, j);
    };
    return (1 - fr) * ((1 - fc) * at(r0, c0) + fc * at(r0, c0 + 1)) +
           fr * ((1 - fc) * at(r0 + 1, c0) + fc * at(r0 + 1, c0 + 1));
}

// Rotation (degrees, about the image center) composed with a translation,
// resolved in one bilinear resample.
MatrixF transform_glyph(const MatrixF& stencil, double angle_deg, double dx, double dy) {
    const int size = static_cast<int>(stencil.rows());
    const double center = (size - 1) / 2.0;
    const double theta = angle_deg * M_PI / 180.0;
    const double ct = std::cos(theta), st = std::sin(theta);
    MatrixF out(size, size);
    for (int r = 0; r < size; ++r) {
        for (int col = 0; col < size; ++col) {
            const double yr = r - center - dy;
            const double xc = col - center - dx;
            // inverse rotation back into stencil coordinates
            const double src_c = ct * xc + st * yr + center;
            const double src_r = -st * xc + ct * yr + center;
            out(r, col) = static_cast<float>(bilinear_sample(stencil, src_r, src_c));
        }
    }
    return out;
}

}  // namespace

MatrixF glyph_stencil(int glyph, int image_size) {
    if (glyph < 0 || glyph >= kGlyphCount)
        throw std::invalid_argument("glyph_stencil: glyph index out of range");
    if (image_size < 16) throw std::invalid_argument("glyph_stencil: image_size must be >= 16");
    MatrixF img(image_size, image_size);
    const double center = (image_size - 1) / 2.0;
    const double scale = 2.0 / image_size;  // pixel -> unit coords
    for (int r = 0; r < image_size; ++r) {
        for (int c = 0; c < image_size; ++c) {
            int hits = 0;
            for (int sr = 0; sr < kSupersample; ++sr) {
                for (int sc = 0; sc < kSupersample; ++sc) {
                    const double pr = r + (sr + 0.5) / kSupersample - 0.5;
                    const double pc = c + (sc + 0.5) / kSupersample - 0.5;
                    const double x = (pc - center) * scale;
                    const double y = (center - pr) * scale;  // row axis points down
                    if (glyph_occupied(glyph, x, y)) ++hits;
                }
            }
            img(r, c) = static_cast<float>(hits) / (kSupersample * kSupersample);
        }
    }
    return img;
}

DatasetBundle generate_rotated_glyphs(const GlyphSpec& spec) {
    if (spec.g_glyphs < 1 || spec.g_glyphs > kGlyphCount)
        throw std::invalid_argument("generate_rotated_glyphs: g_glyphs must be in [1, 8]");
    if (spec.image_size < 16)
        throw std::invalid_argument("generate_rotated_glyphs: image_size must be >= 16");
    if (spec.n_per_cell < 1)
        throw std::invalid_argument("generate_rotated_glyphs: n_per_cell must be positive");
    const bool discrete = spec.mode == GlyphMode::discrete;
    if (discrete && spec.k_angles < 1)
        throw std::invalid_argument("generate_rotated_glyphs: k_angles must be positive");

    const int n_angles = discrete ? spec.k_angles : 1;
    const int n_total = spec.g_glyphs * n_angles * spec.n_per_cell;
    const int d = spec.image_size * spec.image_size;

    std::vector<MatrixF> stencils;
    stencils.reserve(spec.g_glyphs);
    for (int g = 0; g < spec.g_glyphs; ++g) stencils.push_back(glyph_stencil(g, spec.image_size));

    Rng rng(derive_seed(spec.seed, 0x676c7970ULL));

    DatasetBundle bundle;
    bundle.x.resize(n_total, d);
    bundle.y.resize(n_total);
    bundle.k_clusters = discrete ? spec.k_angles : spec.g_glyphs;
    bundle.g_categories = discrete ? spec.g_glyphs : 0;
    bundle.c.kind = discrete ? ConfoundKind::discrete : ConfoundKind::continuous;
    if (discrete)
        bundle.c.discrete.resize(n_total);
    else
        bundle.c.continuous.resize(n_total);

    int row = 0;
    for (int g = 0; g < spec.g_glyphs; ++g) {
        for (int a = 0; a < n_angles; ++a) {
            for (int i = 0; i < spec.n_per_cell; ++i, ++row) {
                double angle;
                if (discrete) {
                    angle = 360.0 * a / spec.k_angles;
                    bundle.y[row] = a;
                    bundle.c.discrete[row] = g;
                } else {
                    angle = rng.uniform(0.0, 60.0);
                    bundle.y[row] = g;
                    bundle.c.continuous[row] = static_cast<float>(angle / 60.0);
                }
                const double dx = rng.uniform(-spec.jitter_px, spec.jitter_px);
                const double dy = rng.uniform(-spec.jitter_px, spec.jitter_px);
                MatrixF img = transform_glyph(stencils[g], angle, dx, dy);
                for (int p = 0; p < d; ++p) {
                    const double noisy =
                        img(p / spec.image_size, p % spec.image_size) +
                        spec.pixel_noise_sigma * rng.normal();
                    bundle.x(row, p) = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
                }
            }
        }
    }
    bundle.validate();
    return bundle;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace {

void write_binary(const fs::path& file, const void* data, std::size_t bytes) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw FormatError(file.string() + ": cannot open for writing");
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
    if (!out) throw FormatError(file.string() + ": write failed");
}

std::vector<char> read_binary_exact(const fs::path& file, std::size_t expected_bytes) {
    std::ifstream in(file, std::ios::binary | std::ios::ate);
    if (!in) throw FormatError(file.string() + ": cannot open");
    const auto size = static_cast<std::size_t>(in.tellg());
    if (size != expected_bytes)
        throw FormatError(file.string() + ": size mismatch, expected " +
                          std::to_string(expected_bytes) + " bytes, found " + std::to_string(size));
    std::vector<char> buf(size);
    in.seekg(0);
    in.read(buf.data(), static_cast<std::streamsize>(size));
    if (!in) throw FormatError(file.string() + ": read failed");
    return buf;
}

}  // namespace

void save_bundle(const DatasetBundle& bundle, const fs::path& dir) {
    bundle.validate();
    fs::create_directories(dir);
    const int n = bundle.n();
    const int d = bundle.dim();
    const bool discrete = bundle.c.kind == ConfoundKind::discrete;

    json meta;
    meta["n"] = n;
    meta["d_input"] = d;
    meta["k_clusters"] = bundle.k_clusters;
    meta["confound_kind"] = discrete ? "discrete" : "continuous";
    if (discrete)
        meta["g_categories"] = bundle.g_categories;
    else
        meta["g_categories"] = nullptr;
    meta["dtype"] = "f32le";
    meta["layout"] = "row-major";
    meta["format_version"] = 1;
    std::ofstream mf(dir / "meta.json");
    if (!mf) throw FormatError((dir / "meta.json").string() + ": cannot open for writing");
    mf << meta.dump(2) << "\n";

    std::vector<float> xbuf(static_cast<std::size_t>(n) * d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) xbuf[static_cast<std::size_t>(i) * d + j] = bundle.x(i, j);
    write_binary(dir / "X.bin", xbuf.data(), xbuf.size() * sizeof(float));

    if (bundle.has_labels()) {
        std::vector<std::uint32_t> ybuf(n);
        for (int i = 0; i < n; ++i) ybuf[i] = static_cast<std::uint32_t>(bundle.y[i]);
        write_binary(dir / "y.bin", ybuf.data(), ybuf.size() * sizeof(std::uint32_t));
    }

    if (discrete) {
        std::vector<std::uint32_t> cbuf(n);
        for (int i = 0; i < n; ++i) cbuf[i] = static_cast<std::uint32_t>(bundle.c.discrete[i]);
        write_binary(dir / "c.bin", cbuf.data(), cbuf.size() * sizeof(std::uint32_t));
    } else {
        std::vector<float> cbuf(n);
        for (int i = 0; i < n; ++i) cbuf[i] = bundle.c.continuous[i];
        write_binary(dir / "c.bin", cbuf.data(), cbuf.size() * sizeof(float));
    }

    if (!bundle.c.mask.empty())
        write_binary(dir / "c_mask.bin", bundle.c.mask.data(), bundle.c.mask.size());
}

DatasetBundle load_bundle(const fs::path& dir) {
    const fs::path meta_path = dir / "meta.json";
    std::ifstream mf(meta_path);
    if (!mf) throw FormatError(meta_path.string() + ": cannot open");
    json meta;
    try {
        mf >> meta;
    } catch (const json::exception& e) {
        throw FormatError(meta_path.string() + ": malformed JSON: " + e.what());
    }

    auto require = [&](const char* key) -> const json& {
        if (!meta.contains(key))
            throw FormatError(meta_path.string() + ": missing key \"" + key + "\"");
        return meta.at(key);
    };

    const int n = require("n").get<int>();
    const int d = require("d_input").get<int>();
    const int k = require("k_clusters").get<int>();
    const std::string kind = require("confound_kind").get<std::string>();
    if (kind != "discrete" && kind != "continuous")
        throw FormatError(meta_path.string() + ": unknown confound_kind \"" + kind + "\"");
    const std::string dtype = require("dtype").get<std::string>();
    if (dtype != "f32le")
        throw FormatError(meta_path.string() + ": unknown dtype \"" + dtype + "\"");
    const std::string layout = require("layout").get<std::string>();
    if (layout != "row-major")
        throw FormatError(meta_path.string() + ": unknown layout \"" + layout + "\"");
    if (require("format_version").get<int>() != 1)
        throw FormatError(meta_path.string() + ": unsupported format_version");
    if (n < 1 || d < 1) throw FormatError(meta_path.string() + ": invalid n or d_input");

    DatasetBundle bundle;
    bundle.k_clusters = k;

    const auto xbuf = read_binary_exact(dir / "X.bin", static_cast<std::size_t>(n) * d * sizeof(float));
    bundle.x.resize(n, d);
    const float* xp = reinterpret_cast<const float*>(xbuf.data());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) bundle.x(i, j) = xp[static_cast<std::size_t>(i) * d + j];

    if (fs::exists(dir / "y.bin")) {
        const auto ybuf = read_binary_exact(dir / "y.bin", static_cast<std::size_t>(n) * sizeof(std::uint32_t));
        const auto* yp = reinterpret_cast<const std::uint32_t*>(ybuf.data());
        bundle.y.resize(n);
        for (int i = 0; i < n; ++i) bundle.y[i] = static_cast<int>(yp[i]);
    }

    if (kind == "discrete") {
        const json& g = require("g_categories");
        if (!g.is_number_integer())
            throw FormatError(meta_path.string() + ": g_categories must be an integer for a discrete confound");
        bundle.g_categories = g.get<int>();
        bundle.c.kind = ConfoundKind::discrete;
        const auto cbuf = read_binary_exact(dir / "c.bin", static_cast<std::size_t>(n) * sizeof(std::uint32_t));
        const auto* cp = reinterpret_cast<const std::uint32_t*>(cbuf.data());
        bundle.c.discrete.resize(n);
        for (int i = 0; i < n; ++i) bundle.c.discrete[i] = static_cast<int>(cp[i]);
    } else {
        bundle.g_categories = 0;
        bundle.c.kind = ConfoundKind::continuous;
        const auto cbuf = read_binary_exact(dir / "c.bin", static_cast<std::size_t>(n) * sizeof(float));
        const auto* cp = reinterpret_cast<const float*>(cbuf.data());
        bundle.c.continuous.resize(n);
        for (int i = 0; i < n; ++i) bundle.c.continuous[i] = cp[i];
    }

    if (fs::exists(dir / "c_mask.bin")) {
        const auto mbuf = read_binary_exact(dir / "c_mask.bin", static_cast<std::size_t>(n));
        bundle.c.mask.assign(mbuf.begin(), mbuf.end());
        for (auto& b : bundle.c.mask)
            if (b > 1) throw FormatError((dir / "c_mask.bin").string() + ": mask bytes must be 0 or 1");
    }

    try {
        bundle.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(dir.string() + ": inconsistent bundle: " + e.what());
    }
    return bundle;
}

// ---------------------------------------------------------------------------
// Semi-supervised masking
// ---------------------------------------------------------------------------

DatasetBundle mask_confound_labels(const DatasetBundle& bundle, double labeled_ratio,
                                   std::uint64_t seed) {
    if (!(labeled_ratio > 0.0) || labeled_ratio > 1.0)
        throw std::invalid_argument("mask_confound_labels: labeled_ratio must be in (0, 1]");
    if (bundle.c.kind != ConfoundKind::discrete)
        throw std::invalid_argument("mask_confound_labels: requires a discrete confound");
    if (!bundle.c.fully_observed())
        throw std::invalid_argument("mask_confound_labels: confound labels must be fully observed");

    const int n = bundle.n();
    const int g = bundle.g_categories;
    // tolerance keeps ceil() from overshooting on binary fractions like 0.1*N
    const int target = std::min<int>(n, static_cast<int>(std::ceil(labeled_ratio * n - 1e-9)));

    Rng rng(derive_seed(seed, 0x6d61736bULL));
    std::vector<std::uint8_t> mask(n, 0);

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);

    int chosen = 0;
    if (target >= g) {
        // one guaranteed pick per class, then uniform fill from the rest
        for (int cls = 0; cls < g; ++cls) {
            std::vector<int> members;
            for (int i = 0; i < n; ++i)
                if (bundle.c.discrete[i] == cls) members.push_back(i);
            if (members.empty())
                throw std::invalid_argument("mask_confound_labels: empty confound class " + std::to_string(cls));
            mask[members[rng.uniform_index(members.size())]] = 1;
            ++chosen;
        }
    }
    rng.shuffle(order);
    for (int idx : order) {
        if (chosen >= target) break;
        if (!mask[idx]) {
            mask[idx] = 1;
            ++chosen;
        }
    }

    DatasetBundle out = bundle;
    out.c.mask = std::move(mask);
    out.validate();
    return out;
}

}  // namespace scab
