#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scab/harness.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
    CLI::App app{"SCAB: confound-aware deep clustering toolkit"};
    app.require_subcommand(1);

    // ---- gen
    auto* gen = app.add_subcommand("gen", "generate a synthetic confounded dataset");
    std::string gen_kind = "gaussians", gen_out;
    int gen_k = 2, gen_g = 2, gen_n = 100, gen_dim = 8, gen_image = 28;
    double gen_interest = 6.0, gen_confound = 12.0, gen_noise = 1.0;
    std::uint64_t gen_seed = 0;
    gen->add_option("--kind", gen_kind, "gaussians | glyphs | glyphs-con")
        ->check(CLI::IsMember({"gaussians", "glyphs", "glyphs-con"}));
    gen->add_option("--out", gen_out, "output dataset directory")->required();
    gen->add_option("--k", gen_k, "interest clusters (rotation angles for glyphs)");
    gen->add_option("--g", gen_g, "confound categories (glyph identities)");
    gen->add_option("--n-per-cell", gen_n, "samples per (interest, confound) cell");
    gen->add_option("--dim", gen_dim, "feature dimension (gaussians)");
    gen->add_option("--interest-gap", gen_interest, "interest mean separation (gaussians)");
    gen->add_option("--confound-gap", gen_confound, "confound mean separation (gaussians)");
    gen->add_option("--noise-sigma", gen_noise, "noise level (gaussians)");
    gen->add_option("--image-size", gen_image, "glyph image side length");
    gen->add_option("--seed", gen_seed, "generator seed")->required();

    // ---- train
    auto* train = app.add_subcommand("train", "train SCAB on a dataset");
    std::string train_data, train_out, train_config_file, train_ablate;
    std::vector<std::string> train_sets;
    train->add_option("--data", train_data, "dataset directory")->required();
    train->add_option("--out", train_out, "run directory")->required();
    train->add_option("--config", train_config_file, "flat key=value config file");
    double train_eta1 = -1, train_eta2 = -1;
    int train_epochs = -1;
    std::int64_t train_seed = -1;
    train->add_option("--eta1", train_eta1, "disentanglement weight");
    train->add_option("--eta2", train_eta2, "clustering weight");
    train->add_option("--epochs", train_epochs, "training epochs");
    train->add_option("--ablate", train_ablate, "no_dis | no_clu | no_dis_no_clu");
    train->add_option("--seed", train_seed, "training seed");
    train->add_option("--set", train_sets, "extra config overrides, key=value")->take_all();

    // ---- baseline
    auto* baseline = app.add_subcommand("baseline", "run a comparison method");
    std::string bl_method, bl_data, bl_out, bl_config_file;
    std::int64_t bl_seed = -1;
    int bl_epochs = -1;
    baseline->add_option("--method", bl_method, "kmeans | ruv_x | ruv_z")
        ->required()
        ->check(CLI::IsMember({"kmeans", "ruv_x", "ruv_z"}));
    baseline->add_option("--data", bl_data, "dataset directory")->required();
    baseline->add_option("--out", bl_out, "run directory")->required();
    baseline->add_option("--config", bl_config_file, "flat key=value config file");
    baseline->add_option("--epochs", bl_epochs, "VAE epochs (ruv_z)");
    baseline->add_option("--seed", bl_seed, "seed");

    // ---- propagate
    auto* propagate = app.add_subcommand("propagate", "mask + propagate confound labels");
    std::string prop_data, prop_out;
    double prop_ratio = 0.1;
    std::uint64_t prop_seed = 0;
    bool prop_premasked = false;
    propagate->add_option("--data", prop_data, "dataset directory")->required();
    propagate->add_option("--labeled-ratio", prop_ratio, "fraction of observed labels (0, 1]");
    propagate->add_option("--out", prop_out, "output dataset directory")->required();
    propagate->add_option("--seed", prop_seed, "seed")->required();
    propagate->add_flag("--pre-masked", prop_premasked,
                        "dataset already carries a mask; skip the masking step");

    // ---- eval
    auto* eval = app.add_subcommand("eval", "recompute metrics for a run");
    std::string eval_run, eval_data;
    eval->add_option("--run", eval_run, "run directory")->required();
    eval->add_option("--data", eval_data, "dataset directory")->required();

    // ---- report
    auto* rep = app.add_subcommand("report", "comparison table over runs");
    std::vector<std::string> rep_runs;
    std::string rep_plot, rep_json, rep_data;
    rep->add_option("runs", rep_runs, "run directories")->required();
    rep->add_option("--plot", rep_plot, "write a PCA scatter SVG of the first run");
    rep->add_option("--json", rep_json, "write the table as JSON");
    rep->add_option("--data", rep_data, "dataset directory (needed for --plot)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            scab::DatasetBundle bundle;
            if (gen_kind == "gaussians") {
                scab::GaussianSpec spec;
                spec.k_clusters = gen_k;
                spec.g_categories = gen_g;
                spec.n_per_cell = gen_n;
                spec.dim = gen_dim;
                spec.interest_gap = gen_interest;
                spec.confound_gap = gen_confound;
                spec.noise_sigma = gen_noise;
                spec.seed = gen_seed;
                bundle = scab::generate_two_factor_gaussians(spec);
            } else {
                scab::GlyphSpec spec;
                spec.mode = gen_kind == "glyphs" ? scab::GlyphMode::discrete
                                                 : scab::GlyphMode::continuous;
                spec.g_glyphs = gen_g;
                spec.k_angles = gen_k;
                spec.n_per_cell = gen_n;
                spec.image_size = gen_image;
                spec.seed = gen_seed;
                bundle = scab::generate_rotated_glyphs(spec);
            }
            scab::save_bundle(bundle, gen_out);
            std::cout << "wrote " << bundle.n() << " x " << bundle.dim() << " dataset to "
                      << gen_out << "\n";
        } else if (*train) {
            scab::TrainConfig config;
            if (!train_config_file.empty()) config = scab::load_config_file(train_config_file);
            if (train_eta1 >= 0) config.eta1 = train_eta1;
            if (train_eta2 >= 0) config.eta2 = train_eta2;
            if (train_epochs >= 0) config.epochs = train_epochs;
            if (!train_ablate.empty()) config.ablation = scab::ablation_from_string(train_ablate);
            if (train_seed >= 0) config.seed = static_cast<std::uint64_t>(train_seed);
            for (const auto& kv : train_sets) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos)
                    throw std::invalid_argument("--set expects key=value, got \"" + kv + "\"");
                scab::set_config_key(config, kv.substr(0, eq), kv.substr(eq + 1));
            }
            config.validate();
            const scab::DatasetBundle bundle = scab::load_bundle(train_data);
            scab::train_scab(bundle, config, train_out, /*verbose=*/true);
        } else if (*baseline) {
            scab::TrainConfig config;
            if (!bl_config_file.empty()) config = scab::load_config_file(bl_config_file);
            if (bl_epochs >= 0) config.epochs = bl_epochs;
            if (bl_seed >= 0) config.seed = static_cast<std::uint64_t>(bl_seed);
            const scab::DatasetBundle bundle = scab::load_bundle(bl_data);
            scab::run_baseline(scab::baseline_from_string(bl_method), bundle, config, bl_out,
                               /*verbose=*/true);
        } else if (*propagate) {
            scab::DatasetBundle bundle = scab::load_bundle(prop_data);
            if (!prop_premasked) bundle = scab::mask_confound_labels(bundle, prop_ratio, prop_seed);
            const scab::PropagationResult result =
                scab::propagate_confound_labels(bundle, prop_seed);
            scab::save_bundle(result.bundle, prop_out);
            std::cout << "propagated labels -> " << prop_out;
            if (result.validation_accuracy)
                std::cout << " (classifier validation acc " << *result.validation_accuracy << " on "
                          << result.n_validation << " held-in samples)";
            std::cout << "\n";
        } else if (*eval) {
            const scab::DatasetBundle bundle = scab::load_bundle(eval_data);
            const scab::EvalRow row = scab::evaluate(eval_run, bundle);
            auto cell = [](const std::optional<double>& v) {
                return v ? std::to_string(*v).substr(0, 6) : std::string("-");
            };
            std::cout << "run       acc     nmi     ari     leakage  balance\n";
            std::cout << row.name << "  " << cell(row.acc) << "  " << cell(row.nmi) << "  "
                      << cell(row.ari) << "  " << cell(row.leakage) << "   " << cell(row.balance)
                      << "\n";
        } else if (*rep) {
            scab::ReportOptions options;
            if (!rep_plot.empty()) options.plot_out = rep_plot;
            if (!rep_json.empty()) options.json_out = rep_json;
            if (!rep_data.empty()) options.data_dir = rep_data;
            std::vector<fs::path> dirs(rep_runs.begin(), rep_runs.end());
            scab::report(dirs, std::cout, options);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
