#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "scab/harness.hpp"

using namespace scab;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("scab_harness_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

DatasetBundle tiny_gaussians(std::uint64_t seed = 5) {
    GaussianSpec spec;
    spec.k_clusters = 2;
    spec.g_categories = 2;
    spec.n_per_cell = 20;
    spec.dim = 4;
    spec.interest_gap = 5.0;
    spec.confound_gap = 8.0;
    spec.seed = seed;
    return generate_two_factor_gaussians(spec);
}

TrainConfig tiny_config() {
    TrainConfig config;
    config.epochs = 8;
    config.warmup_epochs = 2;
    config.batch_size = 32;
    config.latent_dim = 4;
    config.hidden = {16, 8};
    config.recon_kind = ReconKind::squared;
    config.learning_rate = 1e-3;
    config.log_every = 4;
    config.seed = 7;
    return config;
}

std::vector<char> slurp(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    REQUIRE(in);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("config file parsing with overrides") {
    const fs::path dir = temp_dir("config");
    {
        std::ofstream out(dir / "train.conf");
        out << "# comment line\n"
            << "eta1 = 2.5\n"
            << "epochs = 40\n"
            << "hidden = 32, 16\n"
            << "recon_kind = squared\n"
            << "ablation = no_dis\n";
    }
    TrainConfig config = load_config_file(dir / "train.conf");
    CHECK(config.eta1 == doctest::Approx(2.5));
    CHECK(config.epochs == 40);
    CHECK(config.hidden == std::vector<int>{32, 16});
    CHECK(config.recon_kind == ReconKind::squared);
    CHECK(config.ablation == Ablation::no_dis);
    CHECK(config.eta2 == doctest::Approx(0.1));  // untouched default

    set_config_key(config, "eta2", "0.05");
    CHECK(config.eta2 == doctest::Approx(0.05));
    CHECK_THROWS_AS(set_config_key(config, "not_a_key", "1"), std::invalid_argument);

    {
        std::ofstream out(dir / "bad.conf");
        out << "epochs 40\n";
    }
    CHECK_THROWS_AS(load_config_file(dir / "bad.conf"), FormatError);
}

TEST_CASE("zero epochs writes config and empty log only") {
    const fs::path run = temp_dir("zero_epochs");
    TrainConfig config = tiny_config();
    config.epochs = 0;
    const RunRecord record = train_scab(tiny_gaussians(), config, run);
    CHECK(record.epochs.empty());
    CHECK(fs::exists(run / "config.json"));
    CHECK(fs::exists(run / "metrics.jsonl"));
    CHECK(fs::file_size(run / "metrics.jsonl") == 0);
    CHECK(!fs::exists(run / "model.bin"));
    CHECK(!fs::exists(run / "assignments.bin"));
}

TEST_CASE("training is bitwise reproducible given config and seed") {
    const DatasetBundle bundle = tiny_gaussians();
    const TrainConfig config = tiny_config();
    const fs::path run_a = temp_dir("repro_a");
    const fs::path run_b = temp_dir("repro_b");
    train_scab(bundle, config, run_a);
    train_scab(bundle, config, run_b);
    CHECK(slurp(run_a / "assignments.bin") == slurp(run_b / "assignments.bin"));
    CHECK(slurp(run_a / "centroids.bin") == slurp(run_b / "centroids.bin"));
    CHECK(slurp(run_a / "model.bin") == slurp(run_b / "model.bin"));
}

TEST_CASE("training rejects a partially observed confound") {
    DatasetBundle bundle = tiny_gaussians();
    bundle = mask_confound_labels(bundle, 0.5, 3);
    CHECK_THROWS_AS(train_scab(bundle, tiny_config(), temp_dir("masked")), std::invalid_argument);
}

TEST_CASE("training loss stays finite and the run is self-describing") {
    const DatasetBundle bundle = tiny_gaussians();
    TrainConfig config = tiny_config();
    config.epochs = 12;
    const fs::path run = temp_dir("finite");
    const RunRecord record = train_scab(bundle, config, run);
    REQUIRE(!record.epochs.empty());
    for (const auto& log : record.epochs) {
        CHECK(std::isfinite(log.losses.total));
        CHECK(std::isfinite(log.losses.recon));
    }
    // final record carries metrics because y is available
    CHECK(record.epochs.back().acc.has_value());
    CHECK(record.epochs.back().leakage.has_value());

    const EvalRow row = evaluate(run, bundle);
    CHECK(row.acc.has_value());
    CHECK(*row.acc == doctest::Approx(*record.epochs.back().acc));
}

TEST_CASE("ablation flags change the model surface") {
    const DatasetBundle bundle = tiny_gaussians();
    TrainConfig config = tiny_config();
    config.ablation = Ablation::no_dis_no_clu;
    const fs::path run = temp_dir("ablate");
    const RunRecord record = train_scab(bundle, config, run);
    CHECK(record.final_assignments.size() == bundle.n());
    const ModelState state = load_model(run / "model.bin");
    CHECK(state.cond == CondKind::none);  // unconditional decoder
}

TEST_CASE("baselines: kmeans, ruv_x and refusal on continuous confounds") {
    const DatasetBundle bundle = tiny_gaussians();
    const TrainConfig config = tiny_config();

    const fs::path km_run = temp_dir("bl_kmeans");
    const RunRecord km = run_baseline(BaselineMethod::kmeans, bundle, config, km_run);
    CHECK(km.final_assignments.size() == bundle.n());
    CHECK(fs::exists(km_run / "assignments.bin"));
    CHECK(fs::exists(km_run / "centroids.bin"));

    const fs::path ruv_run = temp_dir("bl_ruvx");
    const RunRecord ruv = run_baseline(BaselineMethod::ruv_x, bundle, config, ruv_run);
    CHECK(ruv.final_assignments.size() == bundle.n());

    // a continuous confound must be refused by RUV methods
    GlyphSpec cont;
    cont.mode = GlyphMode::continuous;
    cont.g_glyphs = 2;
    cont.n_per_cell = 10;
    cont.image_size = 16;
    cont.seed = 3;
    const DatasetBundle continuous = generate_rotated_glyphs(cont);
    CHECK_THROWS_AS(run_baseline(BaselineMethod::ruv_x, continuous, config, temp_dir("bl_refuse")),
                    std::invalid_argument);
    CHECK_THROWS_AS(run_baseline(BaselineMethod::ruv_z, continuous, config, temp_dir("bl_refuse2")),
                    std::invalid_argument);
}

TEST_CASE("ruv_x with a single-class confound equals kmeans on centered data") {
    DatasetBundle bundle = tiny_gaussians();
    bundle.c.discrete.setZero();
    bundle.g_categories = 1;
    const TrainConfig config = tiny_config();

    const fs::path run = temp_dir("ruv_single");
    const RunRecord ruv = run_baseline(BaselineMethod::ruv_x, bundle, config, run);

    Matrix x = bundle.x.cast<double>();
    x.rowwise() -= x.colwise().mean();
    const KmeansResult km = kmeans(x, bundle.k_clusters, 300, 10, derive_seed(config.seed, 5));
    CHECK(ruv.final_assignments == km.labels);
}

TEST_CASE("evaluate recomputes metrics from artifacts") {
    const DatasetBundle bundle = tiny_gaussians();
    const fs::path run = temp_dir("eval_fixture");
    fs::create_directories(run);
    save_config_json(tiny_config(), "scab", run / "config.json");
    {
        std::ofstream out(run / "metrics.jsonl");
    }

    SUBCASE("assignments equal to y score perfectly") {
        save_assignments(bundle.y, run / "assignments.bin");
        const EvalRow row = evaluate(run, bundle);
        CHECK(*row.acc == doctest::Approx(1.0));
        CHECK(*row.nmi == doctest::Approx(1.0));
        CHECK(*row.ari == doctest::Approx(1.0));
    }

    SUBCASE("constant assignments have zero nmi") {
        save_assignments(IntVector::Zero(bundle.n()), run / "assignments.bin");
        const EvalRow row = evaluate(run, bundle);
        CHECK(*row.nmi == doctest::Approx(0.0));
    }

    SUBCASE("fixture values match the metrics module") {
        IntVector labels(bundle.n());
        for (int i = 0; i < bundle.n(); ++i) labels[i] = (i * 7) % 2;
        save_assignments(labels, run / "assignments.bin");
        const EvalRow row = evaluate(run, bundle);
        CHECK(*row.acc == doctest::Approx(clustering_accuracy(labels, bundle.y)));
        CHECK(*row.nmi == doctest::Approx(nmi(labels, bundle.y)));
        CHECK(*row.ari == doctest::Approx(ari(labels, bundle.y)));
        CHECK(*row.leakage == doctest::Approx(confound_leakage(labels, bundle.c.discrete)));
    }

    SUBCASE("missing artifacts give a descriptive error") {
        fs::remove(run / "config.json");
        CHECK_THROWS_AS(evaluate(run, bundle), FormatError);
    }
}

TEST_CASE("report emits one aligned row per run plus a JSON companion") {
    const DatasetBundle bundle = tiny_gaussians();
    TrainConfig config = tiny_config();
    const fs::path run = temp_dir("report_run");
    train_scab(bundle, config, run);

    std::ostringstream table;
    ReportOptions options;
    const fs::path json_path = temp_dir("report_json") / "report.json";
    options.json_out = json_path;
    report({run}, table, options);

    const std::string text = table.str();
    CHECK(text.find("run") != std::string::npos);
    CHECK(text.find("scab") != std::string::npos);
    CHECK(std::count(text.begin(), text.end(), '\n') == 2);  // header + one row
    CHECK(fs::exists(json_path));

    SUBCASE("plot needs the dataset directory") {
        ReportOptions bad;
        bad.plot_out = temp_dir("report_plot") / "plot.svg";
        std::ostringstream sink;
        CHECK_THROWS_AS(report({run}, sink, bad), std::invalid_argument);
    }

    SUBCASE("plot is written when data is supplied") {
        const fs::path data_dir = temp_dir("report_data");
        save_bundle(bundle, data_dir);
        ReportOptions with_plot;
        with_plot.plot_out = temp_dir("report_plot2") / "plot.svg";
        with_plot.data_dir = data_dir;
        std::ostringstream sink;
        report({run}, sink, with_plot);
        CHECK(fs::exists(*with_plot.plot_out));
        CHECK(fs::file_size(*with_plot.plot_out) > 500);
    }
}

TEST_CASE("pca of axis-aligned 2-D data is the identity up to sign and order") {
    Rng rng(13);
    Matrix data(300, 2);
    for (int i = 0; i < 300; ++i) {
        data(i, 0) = 5.0 * rng.normal();
        data(i, 1) = 0.5 * rng.normal();
    }
    const PcaProjection pca = pca_project(data, 2);
    // components are +/- e0 and +/- e1 in variance order
    CHECK(std::abs(std::abs(pca.components(0, 0)) - 1.0) <= 0.05);
    CHECK(std::abs(pca.components(1, 0)) <= 0.05);
    CHECK(std::abs(std::abs(pca.components(1, 1)) - 1.0) <= 0.05);
    CHECK(pca.eigenvalues[0] >= pca.eigenvalues[1]);
}

TEST_CASE("pca reconstruction error equals the dropped eigenvalue mass") {
    Rng rng(19);
    Matrix data(200, 6);
    for (int i = 0; i < 200; ++i)
        for (int j = 0; j < 6; ++j) data(i, j) = (j + 1) * rng.normal();
    const int keep = 2;
    const PcaProjection pca = pca_project(data, keep);

    const Matrix centered = data.rowwise() - pca.mean;
    const Matrix reconstruction = pca.projected * pca.components.transpose();
    const double err = (centered - reconstruction).squaredNorm() / (data.rows() - 1.0);
    double dropped = 0.0;
    for (int j = keep; j < 6; ++j) dropped += pca.eigenvalues[j];
    CHECK(err == doctest::Approx(dropped).epsilon(1e-9));
}
