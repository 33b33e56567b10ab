#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "scab/harness.hpp"

namespace scab {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

json read_json_file(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw FormatError(file.string() + ": cannot open");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError(file.string() + ": malformed JSON: " + e.what());
    }
    return j;
}

std::string run_name(const fs::path& run_dir) {
    const json config = read_json_file(run_dir / "config.json");
    std::string name = config.value("method", std::string("?"));
    const std::string ablation = config.value("ablation", std::string("none"));
    if (name == "scab" && ablation != "none") name += ":" + ablation;
    return name;
}

// last metrics.jsonl record carrying partition metrics
std::optional<json> final_metrics_record(const fs::path& run_dir) {
    std::ifstream in(run_dir / "metrics.jsonl");
    if (!in) throw FormatError((run_dir / "metrics.jsonl").string() + ": cannot open");
    std::optional<json> found;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw FormatError((run_dir / "metrics.jsonl").string() + ": malformed JSON line");
        if (j.contains("acc") || j.contains("leakage") || j.contains("nmi")) found = j;
    }
    return found;
}

std::string fmt(const std::optional<double>& v) {
    if (!v) return "-";
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << *v;
    return os.str();
}

}  // namespace

EvalRow evaluate(const fs::path& run_dir, const DatasetBundle& bundle) {
    if (!fs::exists(run_dir / "config.json"))
        throw FormatError((run_dir / "config.json").string() + ": missing run artifact");
    if (!fs::exists(run_dir / "assignments.bin"))
        throw FormatError((run_dir / "assignments.bin").string() + ": missing run artifact");

    EvalRow row;
    row.name = run_name(run_dir);
    const IntVector labels = load_assignments(run_dir / "assignments.bin");
    if (labels.size() != bundle.n())
        throw std::invalid_argument("evaluate: assignments length " + std::to_string(labels.size()) +
                                    " does not match dataset N " + std::to_string(bundle.n()));
    if (bundle.has_labels()) {
        row.acc = clustering_accuracy(labels, bundle.y);
        row.nmi = nmi(labels, bundle.y);
        row.ari = ari(labels, bundle.y);
    }
    if (bundle.c.kind == ConfoundKind::discrete) {
        row.leakage = confound_leakage(labels, bundle.c.discrete);
        row.balance = balance(labels, bundle.c.discrete, bundle.k_clusters, bundle.g_categories).overall;
    }
    return row;
}

PcaProjection pca_project(const Matrix& data, int n_components) {
    if (data.rows() < 2) throw std::invalid_argument("pca_project: need at least two rows");
    if (n_components < 1 || n_components > data.cols())
        throw std::invalid_argument("pca_project: invalid component count");

    PcaProjection out;
    out.mean = data.colwise().mean();
    const Matrix centered = data.rowwise() - out.mean;
    const Matrix cov = centered.transpose() * centered / (data.rows() - 1.0);
    Eigen::SelfAdjointEigenSolver<Matrix> solver(cov);
    if (solver.info() != Eigen::Success)
        throw std::runtime_error("pca_project: eigendecomposition failed");

    const int d = static_cast<int>(data.cols());
    out.eigenvalues.resize(d);
    out.components.resize(d, n_components);
    for (int i = 0; i < d; ++i) out.eigenvalues[i] = solver.eigenvalues()[d - 1 - i];
    for (int c = 0; c < n_components; ++c) {
        Vector v = solver.eigenvectors().col(d - 1 - c);
        // deterministic sign: largest-magnitude coordinate positive
        int arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v[arg] < 0) v = -v;
        out.components.col(c) = v;
    }
    out.projected = centered * out.components;
    return out;
}

// ---------------------------------------------------------------------------
// SVG scatter
// ---------------------------------------------------------------------------

namespace {

const char* kPalette[12] = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948",
                            "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac", "#2f4b7c", "#a05195"};

std::string continuous_color(double t) {
    // dark blue -> yellow ramp
    t = std::clamp(t, 0.0, 1.0);
    const int r = static_cast<int>(68 + t * (253 - 68));
    const int g = static_cast<int>(1 + t * (231 - 1));
    const int b = static_cast<int>(84 + t * (37 - 84));
    std::ostringstream os;
    os << "rgb(" << r << "," << g << "," << b << ")";
    return os.str();
}

void svg_panel(std::ostream& out, const Matrix& xy, const std::vector<std::string>& colors,
               double x0, const std::string& title) {
    const double w = 400, h = 360, pad = 14;
    const double xmin = xy.col(0).minCoeff(), xmax = xy.col(0).maxCoeff();
    const double ymin = xy.col(1).minCoeff(), ymax = xy.col(1).maxCoeff();
    const double xr = std::max(xmax - xmin, 1e-12), yr = std::max(ymax - ymin, 1e-12);
    out << "<text x=\"" << x0 + w / 2 << "\" y=\"20\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";
    out << "<rect x=\"" << x0 << "\" y=\"28\" width=\"" << w << "\" height=\"" << h
        << "\" fill=\"#fafafa\" stroke=\"#cccccc\"/>\n";
    for (int i = 0; i < xy.rows(); ++i) {
        const double px = x0 + pad + (xy(i, 0) - xmin) / xr * (w - 2 * pad);
        const double py = 28 + pad + (ymax - xy(i, 1)) / yr * (h - 2 * pad);
        out << "<circle cx=\"" << std::setprecision(5) << px << "\" cy=\"" << py
            << "\" r=\"2\" fill=\"" << colors[i] << "\" fill-opacity=\"0.75\"/>\n";
    }
}

void write_pca_svg(const fs::path& run_dir, const DatasetBundle& bundle, const fs::path& out_path) {
    Matrix embeddings;
    if (fs::exists(run_dir / "model.bin")) {
        const ModelState state = load_model(run_dir / "model.bin");
        embeddings = encode_means(state, bundle.x);
    } else {
        embeddings = bundle.x.cast<double>();
    }
    const int n_comp = std::min<int>(2, static_cast<int>(embeddings.cols()));
    PcaProjection pca = pca_project(embeddings, n_comp);
    Matrix xy = Matrix::Zero(embeddings.rows(), 2);
    xy.col(0) = pca.projected.col(0);
    if (n_comp > 1) xy.col(1) = pca.projected.col(1);

    const IntVector labels = load_assignments(run_dir / "assignments.bin");
    if (labels.size() != bundle.n())
        throw std::invalid_argument("report: assignments length does not match dataset");

    std::vector<std::string> cluster_colors(bundle.n()), confound_colors(bundle.n());
    for (int i = 0; i < bundle.n(); ++i) {
        cluster_colors[i] = kPalette[labels[i] % 12];
        if (bundle.c.kind == ConfoundKind::discrete)
            confound_colors[i] = kPalette[bundle.c.discrete[i] % 12];
        else
            confound_colors[i] = continuous_color(bundle.c.continuous[i]);
    }

    std::ofstream out(out_path);
    if (!out) throw FormatError(out_path.string() + ": cannot open for writing");
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"860\" height=\"400\">\n";
    svg_panel(out, xy, cluster_colors, 10, "final embeddings, colored by cluster");
    svg_panel(out, xy, confound_colors, 440, "final embeddings, colored by confound");
    out << "</svg>\n";
}

}  // namespace

void report(const std::vector<fs::path>& run_dirs, std::ostream& out, const ReportOptions& options) {
    if (run_dirs.empty()) throw std::invalid_argument("report: need at least one run directory");

    struct Row {
        std::string name;
        std::optional<json> metrics;
    };
    std::vector<Row> rows;
    for (const auto& dir : run_dirs) rows.push_back({run_name(dir), final_metrics_record(dir)});

    auto field = [](const std::optional<json>& j, const char* key) -> std::optional<double> {
        if (j && j->contains(key)) return (*j)[key].get<double>();
        return std::nullopt;
    };

    std::size_t name_width = 8;
    for (const auto& r : rows) name_width = std::max(name_width, r.name.size());

    out << std::left << std::setw(static_cast<int>(name_width) + 2) << "run"
        << std::right << std::setw(9) << "acc" << std::setw(9) << "nmi" << std::setw(9) << "ari"
        << std::setw(10) << "leakage" << std::setw(10) << "balance" << "\n";
    json companion = json::array();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        out << std::left << std::setw(static_cast<int>(name_width) + 2) << r.name << std::right
            << std::setw(9) << fmt(field(r.metrics, "acc"))
            << std::setw(9) << fmt(field(r.metrics, "nmi"))
            << std::setw(9) << fmt(field(r.metrics, "ari"))
            << std::setw(10) << fmt(field(r.metrics, "leakage"))
            << std::setw(10) << fmt(field(r.metrics, "balance")) << "\n";
        json entry;
        entry["run"] = run_dirs[i].string();
        entry["name"] = r.name;
        for (const char* key : {"acc", "nmi", "ari", "leakage", "balance"})
            if (auto v = field(r.metrics, key)) entry[key] = *v;
        companion.push_back(entry);
    }

    if (options.json_out) {
        std::ofstream jf(*options.json_out);
        if (!jf) throw FormatError(options.json_out->string() + ": cannot open for writing");
        jf << companion.dump(2) << "\n";
    }

    if (options.plot_out) {
        if (!options.data_dir)
            throw std::invalid_argument("report: --plot needs the dataset directory");
        const DatasetBundle bundle = load_bundle(*options.data_dir);
        write_pca_svg(run_dirs.front(), bundle, *options.plot_out);
    }
}

}  // namespace scab
