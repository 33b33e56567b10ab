#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "scab/common.hpp"

namespace scab {

enum class ConfoundKind { discrete, continuous };

// Per-sample confound labels: a class index in [0, G) or a scalar in [0, 1].
// `mask` is empty when every label is observed; otherwise mask[i] != 0 marks
// sample i as observed (semi-supervised setting).
struct ConfoundLabels {
    ConfoundKind kind = ConfoundKind::discrete;
    IntVector discrete;     // used when kind == discrete
    VectorF continuous;     // used when kind == continuous
    std::vector<std::uint8_t> mask;

    int size() const {
        return kind == ConfoundKind::discrete ? static_cast<int>(discrete.size())
                                              : static_cast<int>(continuous.size());
    }
    bool fully_observed() const;
};

struct DatasetBundle {
    MatrixF x;          // N x D feature matrix
    IntVector y;        // ground-truth interest labels; size 0 when absent
    ConfoundLabels c;
    int k_clusters = 0;
    int g_categories = 0;  // 0 when the confound is continuous

    int n() const { return static_cast<int>(x.rows()); }
    int dim() const { return static_cast<int>(x.cols()); }
    bool has_labels() const { return y.size() > 0; }

    // Checks every structural invariant; throws std::invalid_argument on the
    // first violation.
    void validate() const;
};

struct GaussianSpec {
    int k_clusters = 2;
    int g_categories = 2;
    int n_per_cell = 100;
    int dim = 2;
    double interest_gap = 6.0;
    double confound_gap = 12.0;
    double noise_sigma = 1.0;
    std::uint64_t seed = 0;
};

// Two disentangled factors on disjoint coordinate blocks: sample =
// interest_gap * u(y) + confound_gap * v(c) + noise, where u and v are fixed
// unit directions in the first and second half of the coordinates.
DatasetBundle generate_two_factor_gaussians(const GaussianSpec& spec);

enum class GlyphMode { discrete, continuous };

struct GlyphSpec {
    GlyphMode mode = GlyphMode::discrete;
    int g_glyphs = 6;       // confound classes (discrete) / interest clusters (continuous)
    int k_angles = 5;       // rotation clusters; ignored in continuous mode
    int n_per_cell = 300;
    int image_size = 28;
    std::uint64_t seed = 0;
    // jitter constants; defaults documented in the README
    double jitter_px = 2.0;
    double pixel_noise_sigma = 0.05;
};

// Procedurally drawn glyph stencils rotated by bilinear resampling.
// Discrete mode: y = rotation index over k_angles evenly spaced angles,
// c = glyph identity. Continuous mode: y = glyph identity, c = angle/60 with
// the angle uniform in [0, 60] degrees.
DatasetBundle generate_rotated_glyphs(const GlyphSpec& spec);

// Renders one glyph stencil (index in [0, 8)) without rotation or jitter.
// Exposed for tests and the report tooling.
MatrixF glyph_stencil(int glyph, int image_size);

void save_bundle(const DatasetBundle& bundle, const std::filesystem::path& dir);
DatasetBundle load_bundle(const std::filesystem::path& dir);

// Marks ceil(labeled_ratio * N) uniformly sampled confound labels as observed,
// stratified so that every class keeps at least one observed sample whenever
// the budget allows it. Requires fully observed discrete labels as input.
DatasetBundle mask_confound_labels(const DatasetBundle& bundle, double labeled_ratio,
                                   std::uint64_t seed);

}  // namespace scab
