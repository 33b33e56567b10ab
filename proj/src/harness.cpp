#include "scab/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace scab {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(Ablation a) {
    switch (a) {
        case Ablation::none: return "none";
        case Ablation::no_dis: return "no_dis";
        case Ablation::no_clu: return "no_clu";
        case Ablation::no_dis_no_clu: return "no_dis_no_clu";
    }
    return "none";
}

Ablation ablation_from_string(const std::string& s) {
    if (s == "none") return Ablation::none;
    if (s == "no_dis") return Ablation::no_dis;
    if (s == "no_clu") return Ablation::no_clu;
    if (s == "no_dis_no_clu") return Ablation::no_dis_no_clu;
    throw std::invalid_argument("unknown ablation \"" + s + "\"");
}

std::string to_string(ReconKind k) {
    return k == ReconKind::squared ? "squared" : "bernoulli";
}

ReconKind recon_from_string(const std::string& s) {
    if (s == "squared") return ReconKind::squared;
    if (s == "bernoulli") return ReconKind::bernoulli;
    throw std::invalid_argument("unknown recon_kind \"" + s + "\"");
}

std::string to_string(BaselineMethod m) {
    switch (m) {
        case BaselineMethod::kmeans: return "kmeans";
        case BaselineMethod::ruv_x: return "ruv_x";
        case BaselineMethod::ruv_z: return "ruv_z";
    }
    return "kmeans";
}

BaselineMethod baseline_from_string(const std::string& s) {
    if (s == "kmeans") return BaselineMethod::kmeans;
    if (s == "ruv_x") return BaselineMethod::ruv_x;
    if (s == "ruv_z") return BaselineMethod::ruv_z;
    throw std::invalid_argument("unknown baseline method \"" + s + "\"");
}

void TrainConfig::validate() const {
    if (eta1 < 0 || eta2 < 0) throw std::invalid_argument("config: eta weights must be >= 0");
    if (learning_rate <= 0) throw std::invalid_argument("config: learning_rate must be > 0");
    if (epochs < 0) throw std::invalid_argument("config: epochs must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
    if (latent_dim < 1) throw std::invalid_argument("config: latent_dim must be >= 1");
    if (!(tau > 0)) throw std::invalid_argument("config: tau must be > 0");
    if (gamma < 0 || gamma > 1) throw std::invalid_argument("config: gamma must be in [0, 1]");
    if (warmup_epochs < 0) throw std::invalid_argument("config: warmup_epochs must be >= 0");
    if (hidden.empty()) throw std::invalid_argument("config: hidden layer list is empty");
    for (int h : hidden)
        if (h < 1) throw std::invalid_argument("config: hidden widths must be positive");
    if (log_every < 1) throw std::invalid_argument("config: log_every must be >= 1");
    if (threads < 1) throw std::invalid_argument("config: threads must be >= 1");
}

// ---------------------------------------------------------------------------
// Config parsing / serialization
// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

std::vector<int> parse_int_list(const std::string& value) {
    std::vector<int> out;
    std::stringstream ss(value);
    std::string part;
    while (std::getline(ss, part, ',')) {
        part = trim(part);
        if (!part.empty()) out.push_back(std::stoi(part));
    }
    return out;
}

std::string hidden_to_string(const std::vector<int>& hidden) {
    std::string out;
    for (std::size_t i = 0; i < hidden.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(hidden[i]);
    }
    return out;
}

}  // namespace

void set_config_key(TrainConfig& config, const std::string& key, const std::string& value) {
    if (key == "eta1") config.eta1 = std::stod(value);
    else if (key == "eta2") config.eta2 = std::stod(value);
    else if (key == "learning_rate") config.learning_rate = std::stod(value);
    else if (key == "epochs") config.epochs = std::stoi(value);
    else if (key == "batch_size") config.batch_size = std::stoi(value);
    else if (key == "latent_dim") config.latent_dim = std::stoi(value);
    else if (key == "tau") config.tau = std::stod(value);
    else if (key == "gamma") config.gamma = std::stod(value);
    else if (key == "warmup_epochs") config.warmup_epochs = std::stoi(value);
    else if (key == "recon_kind") config.recon_kind = recon_from_string(value);
    else if (key == "seed") config.seed = std::stoull(value);
    else if (key == "ablation") config.ablation = ablation_from_string(value);
    else if (key == "hidden") config.hidden = parse_int_list(value);
    else if (key == "log_every") config.log_every = std::stoi(value);
    else if (key == "threads") config.threads = std::stoi(value);
    else throw std::invalid_argument("unknown config key \"" + key + "\"");
}

TrainConfig load_config_file(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw FormatError(file.string() + ": cannot open");
    TrainConfig config;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw FormatError(file.string() + ":" + std::to_string(lineno) + ": expected key = value");
        try {
            set_config_key(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const std::exception& e) {
            throw FormatError(file.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    config.validate();
    return config;
}

void save_config_json(const TrainConfig& config, const std::string& method, const fs::path& file) {
    json j;
    j["method"] = method;
    j["eta1"] = config.eta1;
    j["eta2"] = config.eta2;
    j["learning_rate"] = config.learning_rate;
    j["epochs"] = config.epochs;
    j["batch_size"] = config.batch_size;
    j["latent_dim"] = config.latent_dim;
    j["tau"] = config.tau;
    j["gamma"] = config.gamma;
    j["warmup_epochs"] = config.warmup_epochs;
    j["recon_kind"] = to_string(config.recon_kind);
    j["seed"] = config.seed;
    j["ablation"] = to_string(config.ablation);
    j["hidden"] = hidden_to_string(config.hidden);
    j["log_every"] = config.log_every;
    j["threads"] = config.threads;
    std::ofstream out(file);
    if (!out) throw FormatError(file.string() + ": cannot open for writing");
    out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

struct AdamState {
    std::vector<LayerGrads> m, v;
    long t = 0;

    explicit AdamState(const ModelState& state) {
        ModelGradients z = ModelGradients::zeros_like(state);
        for (LayerGrads* g : all_layers(z)) {
            m.push_back(*g);
            v.push_back(*g);
        }
    }
};

void adam_step(ModelState& state, ModelGradients& grads, AdamState& adam, double lr) {
    adam.t += 1;
    const double bc1 = 1.0 - std::pow(kAdamBeta1, adam.t);
    const double bc2 = 1.0 - std::pow(kAdamBeta2, adam.t);
    const auto params = all_layers(state);
    const auto gs = all_layers(grads);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& m = adam.m[i];
        auto& v = adam.v[i];
        m.w = kAdamBeta1 * m.w + (1 - kAdamBeta1) * gs[i]->w;
        v.w = kAdamBeta2 * v.w + (1 - kAdamBeta2) * gs[i]->w.cwiseProduct(gs[i]->w);
        params[i]->w.array() -= lr * (m.w.array() / bc1) / ((v.w.array() / bc2).sqrt() + kAdamEps);
        m.b = kAdamBeta1 * m.b + (1 - kAdamBeta1) * gs[i]->b;
        v.b = kAdamBeta2 * v.b + (1 - kAdamBeta2) * gs[i]->b.cwiseProduct(gs[i]->b);
        params[i]->b.array() -= lr * (m.b.array() / bc1) / ((v.b.array() / bc2).sqrt() + kAdamEps);
    }
}

void zero_grads(ModelGradients& grads) {
    for (LayerGrads* g : all_layers(grads)) {
        g->w.setZero();
        g->b.setZero();
    }
}

// ---------------------------------------------------------------------------
// Training internals
// ---------------------------------------------------------------------------

struct NetFlags {
    double eta1 = 0.0;
    double eta2 = 0.0;
    CondKind cond = CondKind::none;
    bool bypass_fusion = false;
    bool clustering = false;
};

NetFlags flags_for(const TrainConfig& config, const DatasetBundle& bundle) {
    NetFlags f;
    const bool no_dis = config.ablation == Ablation::no_dis || config.ablation == Ablation::no_dis_no_clu;
    const bool no_clu = config.ablation == Ablation::no_clu || config.ablation == Ablation::no_dis_no_clu;
    f.eta1 = no_dis ? 0.0 : config.eta1;
    f.eta2 = no_clu ? 0.0 : config.eta2;
    f.cond = no_dis ? CondKind::none
                    : (bundle.c.kind == ConfoundKind::discrete ? CondKind::one_hot : CondKind::scalar);
    f.bypass_fusion = no_clu;
    f.clustering = !no_clu;
    return f;
}

Matrix batch_conditioning(const ModelState& state, const DatasetBundle& bundle,
                          const std::vector<int>& idx) {
    const int b = static_cast<int>(idx.size());
    if (state.cond == CondKind::none) return Matrix(b, 0);
    if (state.cond == CondKind::one_hot) {
        IntVector c(b);
        for (int i = 0; i < b; ++i) c[i] = bundle.c.discrete[idx[i]];
        return conditioning_input(state, c);
    }
    VectorF c(b);
    for (int i = 0; i < b; ++i) c[i] = bundle.c.continuous[idx[i]];
    return conditioning_input(state, c);
}

void check_losses_finite(const LossBreakdown& l, int epoch) {
    auto check = [&](double v, const char* name) {
        if (!std::isfinite(v))
            throw std::runtime_error("train: non-finite " + std::string(name) + " at epoch " +
                                     std::to_string(epoch));
    };
    check(l.recon, "recon");
    check(l.kl_prior, "kl_prior");
    check(l.pairwise_kl, "pairwise_kl");
    check(l.cluster, "cluster");
    check(l.total, "total");
}

void append_metrics_line(std::ofstream& out, const EpochLog& log, bool with_losses) {
    json j;
    j["epoch"] = log.epoch;
    if (with_losses) {
        j["recon"] = log.losses.recon;
        j["kl_prior"] = log.losses.kl_prior;
        j["pairwise_kl"] = log.losses.pairwise_kl;
        j["cluster"] = log.losses.cluster;
        j["total"] = log.losses.total;
    }
    if (log.acc) j["acc"] = *log.acc;
    if (log.nmi) j["nmi"] = *log.nmi;
    if (log.ari) j["ari"] = *log.ari;
    if (log.leakage) j["leakage"] = *log.leakage;
    if (log.balance) j["balance"] = *log.balance;
    out << j.dump() << "\n";
    out.flush();
}

void fill_metrics(EpochLog& log, const DatasetBundle& bundle, const IntVector& labels) {
    if (bundle.has_labels()) {
        log.acc = clustering_accuracy(labels, bundle.y);
        log.nmi = nmi(labels, bundle.y);
        log.ari = ari(labels, bundle.y);
    }
    if (bundle.c.kind == ConfoundKind::discrete) {
        log.leakage = confound_leakage(labels, bundle.c.discrete);
        log.balance = balance(labels, bundle.c.discrete, bundle.k_clusters, bundle.g_categories).overall;
    }
}

void print_epoch(const EpochLog& log, int total_epochs) {
    std::cout << "[epoch " << log.epoch << "/" << total_epochs << "] total=" << log.losses.total
              << " recon=" << log.losses.recon << " kl=" << log.losses.kl_prior
              << " pairwise=" << log.losses.pairwise_kl << " cluster=" << log.losses.cluster;
    if (log.acc) std::cout << " acc=" << *log.acc;
    if (log.leakage) std::cout << " leakage=" << *log.leakage;
    std::cout << "\n";
}

struct TrainedNet {
    ModelState state;
    CentroidBank bank;  // uninitialized when clustering was off
    std::vector<EpochLog> logs;
};

// The shared epoch loop: SCAB proper, its ablations, and the plain VAE that
// backs ruv_z all run through here.
TrainedNet train_network(const DatasetBundle& bundle, const TrainConfig& config,
                         const NetFlags& flags, std::ofstream* metrics_out, bool verbose) {
    const int n = bundle.n();
    Eigen::setNbThreads(config.threads);

    TrainedNet net;
    net.state = init_model(bundle.dim(), config.latent_dim, flags.cond,
                           bundle.g_categories, config.recon_kind,
                           derive_seed(config.seed, 1), config.hidden);
    AdamState adam(net.state);
    ModelGradients grads = ModelGradients::zeros_like(net.state);
    Rng noise_rng(derive_seed(config.seed, 2));

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);

    if (flags.clustering && config.warmup_epochs == 0 && config.epochs > 0) {
        const Matrix embeddings = encode_means(net.state, bundle.x);
        net.bank = init_centroids(embeddings, bundle.k_clusters, derive_seed(config.seed, 3),
                                  config.gamma, config.tau);
    }

    const int d = config.latent_dim;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(config.seed, 1000 + epoch));
        shuffle_rng.shuffle(order);

        LossBreakdown epoch_mean{};
        for (int start = 0; start < n; start += config.batch_size) {
            const int b = std::min(config.batch_size, n - start);
            std::vector<int> idx(order.begin() + start, order.begin() + start + b);

            Matrix x(b, bundle.dim());
            for (int i = 0; i < b; ++i) x.row(i) = bundle.x.row(idx[i]).cast<double>();
            const Matrix cond = batch_conditioning(net.state, bundle, idx);
            Matrix noise(b, d);
            for (int i = 0; i < b; ++i)
                for (int j = 0; j < d; ++j) noise(i, j) = noise_rng.normal();

            StepOptions opts;
            opts.eta1 = flags.eta1;
            opts.eta2 = flags.eta2;
            opts.bypass_fusion = flags.bypass_fusion;
            opts.bank = net.bank.initialized() ? &net.bank : nullptr;

            zero_grads(grads);
            const StepResult step = scab_step(net.state, x, cond, noise, opts, &grads);
            check_losses_finite(step.losses, epoch);
            adam_step(net.state, grads, adam, config.learning_rate);
            if (net.bank.initialized()) ema_update(net.bank, step.z, step.s);

            const double w = static_cast<double>(b) / n;
            epoch_mean.recon += w * step.losses.recon;
            epoch_mean.kl_prior += w * step.losses.kl_prior;
            epoch_mean.pairwise_kl += w * step.losses.pairwise_kl;
            epoch_mean.cluster += w * step.losses.cluster;
            epoch_mean.total += w * step.losses.total;
        }
        epoch_mean.eta1 = flags.eta1;
        epoch_mean.eta2 = flags.eta2;

        if (flags.clustering && !net.bank.initialized() &&
            (epoch == config.warmup_epochs || epoch == config.epochs)) {
            const Matrix embeddings = encode_means(net.state, bundle.x);
            net.bank = init_centroids(embeddings, bundle.k_clusters, derive_seed(config.seed, 3),
                                      config.gamma, config.tau);
        }

        if (epoch % config.log_every == 0 || epoch == config.epochs) {
            EpochLog log;
            log.epoch = epoch;
            log.losses = epoch_mean;
            if (net.bank.initialized()) {
                const Matrix embeddings = encode_means(net.state, bundle.x);
                fill_metrics(log, bundle, soft_assign(embeddings, net.bank).s);
            }
            net.logs.push_back(log);
            if (metrics_out) append_metrics_line(*metrics_out, log, /*with_losses=*/true);
            if (verbose) print_epoch(log, config.epochs);
        }
    }
    return net;
}

IntVector labels_from_partition(const Matrix& embeddings, const CentroidBank& bank, bool verbose) {
    const Assignment assign = soft_assign(embeddings, bank);
    if (verbose) {
        std::vector<int> counts(bank.k(), 0);
        for (int i = 0; i < assign.s.size(); ++i) counts[assign.s[i]]++;
        for (int k = 0; k < bank.k(); ++k)
            if (counts[k] == 0) std::cerr << "warning: cluster " << k << " is empty\n";
    }
    return assign.s;
}

}  // namespace

Matrix encode_means(const ModelState& state, const MatrixF& x) {
    const int n = static_cast<int>(x.rows());
    const int chunk = 2048;
    Matrix out(n, state.d_latent);
    for (int start = 0; start < n; start += chunk) {
        const int b = std::min(chunk, n - start);
        const Matrix block = x.middleRows(start, b).cast<double>();
        out.middleRows(start, b) = encode(state, block).mean;
    }
    return out;
}

RunRecord train_scab(const DatasetBundle& bundle, const TrainConfig& config,
                     const fs::path& run_dir, bool verbose) {
    bundle.validate();
    config.validate();
    if (!bundle.c.fully_observed())
        throw std::invalid_argument(
            "train_scab: confound labels are partially observed; run propagation first");

    const auto t0 = std::chrono::steady_clock::now();
    fs::create_directories(run_dir);
    save_config_json(config, "scab", run_dir / "config.json");
    std::ofstream metrics_out(run_dir / "metrics.jsonl");
    if (!metrics_out) throw FormatError((run_dir / "metrics.jsonl").string() + ": cannot open for writing");

    RunRecord record;
    if (config.epochs == 0) {
        record.elapsed_seconds = 0.0;
        return record;
    }

    const NetFlags flags = flags_for(config, bundle);
    TrainedNet net = train_network(bundle, config, flags, &metrics_out, verbose);

    const Matrix embeddings = encode_means(net.state, bundle.x);
    Matrix centroids;
    if (flags.clustering) {
        record.final_assignments = labels_from_partition(embeddings, net.bank, verbose);
        centroids = net.bank.e;
    } else {
        // clustering module ablated: post-hoc k-means on the final embeddings
        const KmeansResult km =
            kmeans(embeddings, bundle.k_clusters, 300, 10, derive_seed(config.seed, 4));
        record.final_assignments = km.labels;
        centroids = km.centroids;
    }

    if (!flags.clustering) {
        // the loop never had a partition to score; record the post-hoc one
        EpochLog final_log;
        final_log.epoch = config.epochs;
        final_log.losses = net.logs.back().losses;
        fill_metrics(final_log, bundle, record.final_assignments);
        append_metrics_line(metrics_out, final_log, /*with_losses=*/false);
        net.logs.push_back(final_log);
    }
    record.epochs = std::move(net.logs);

    save_model(net.state, run_dir / "model.bin");
    save_centroids(centroids, run_dir / "centroids.bin");
    save_assignments(record.final_assignments, run_dir / "assignments.bin");

    record.elapsed_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (verbose)
        std::cout << "run complete in " << record.elapsed_seconds << "s -> " << run_dir << "\n";
    return record;
}

RunRecord run_baseline(BaselineMethod method, const DatasetBundle& bundle,
                       const TrainConfig& config, const fs::path& run_dir, bool verbose) {
    bundle.validate();
    config.validate();
    if ((method == BaselineMethod::ruv_x || method == BaselineMethod::ruv_z) &&
        bundle.c.kind != ConfoundKind::discrete)
        throw std::invalid_argument("run_baseline: RUV requires a discrete confound");
    if (!bundle.c.fully_observed())
        throw std::invalid_argument("run_baseline: confound labels are partially observed");

    const auto t0 = std::chrono::steady_clock::now();
    fs::create_directories(run_dir);
    save_config_json(config, to_string(method), run_dir / "config.json");
    std::ofstream metrics_out(run_dir / "metrics.jsonl");
    if (!metrics_out) throw FormatError((run_dir / "metrics.jsonl").string() + ": cannot open for writing");

    RunRecord record;
    Matrix centroids;

    if (method == BaselineMethod::ruv_z) {
        TrainConfig vae_config = config;
        vae_config.ablation = Ablation::no_dis_no_clu;  // plain unconditional VAE
        NetFlags flags = flags_for(vae_config, bundle);
        TrainedNet net = train_network(bundle, vae_config, flags, &metrics_out, verbose);
        record.epochs = net.logs;

        const Matrix embeddings = encode_means(net.state, bundle.x);
        const ConfoundEffect effect =
            estimate_confound_effect(embeddings, bundle.c.discrete, bundle.g_categories);
        const Matrix purified = ruv_purify(embeddings, bundle.c.discrete, effect);
        const KmeansResult km =
            kmeans(purified, bundle.k_clusters, 300, 10, derive_seed(config.seed, 5));
        record.final_assignments = km.labels;
        centroids = km.centroids;
        save_model(net.state, run_dir / "model.bin");
    } else {
        Matrix x = bundle.x.cast<double>();
        if (method == BaselineMethod::ruv_x) {
            const ConfoundEffect effect =
                estimate_confound_effect(x, bundle.c.discrete, bundle.g_categories);
            x = ruv_purify(x, bundle.c.discrete, effect);
        }
        const KmeansResult km = kmeans(x, bundle.k_clusters, 300, 10, derive_seed(config.seed, 5));
        record.final_assignments = km.labels;
        centroids = km.centroids;
    }

    EpochLog final_log;
    final_log.epoch = method == BaselineMethod::ruv_z ? config.epochs : 0;
    fill_metrics(final_log, bundle, record.final_assignments);
    append_metrics_line(metrics_out, final_log, /*with_losses=*/false);
    record.epochs.push_back(final_log);

    save_centroids(centroids, run_dir / "centroids.bin");
    save_assignments(record.final_assignments, run_dir / "assignments.bin");

    record.elapsed_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (verbose) {
        if (final_log.acc) std::cout << to_string(method) << " acc=" << *final_log.acc;
        if (final_log.leakage) std::cout << " leakage=" << *final_log.leakage;
        std::cout << " (" << record.elapsed_seconds << "s)\n";
    }
    return record;
}

}  // namespace scab
